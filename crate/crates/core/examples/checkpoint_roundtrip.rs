//! Save and reload a model; the reload is bit-exact and corrupt files are
//! rejected with a byte offset.
//!
//!     cargo run --example checkpoint_roundtrip

use tka_detect::detector::{load_model, model_from_bytes, model_to_bytes, save_model, DetectorModel, ModelConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let names = vec!["scalpel".to_string(), "tibial guide".to_string()];
    let model = DetectorModel::init(ModelConfig::default(), names, 42)?;
    let path = std::env::temp_dir().join("checkpoint_roundtrip.tkad");
    save_model(&model, &path)?;
    let back = load_model(&path)?;
    println!(
        "{} bytes, {} tensors, equal after reload: {}",
        std::fs::metadata(&path)?.len(),
        model.params().len(),
        back == model
    );

    let mut bytes = model_to_bytes(&model);
    bytes.truncate(bytes.len() - 10);
    match model_from_bytes(&bytes) {
        Err(e) => println!("truncated file: {e}"),
        Ok(_) => println!("truncated file unexpectedly loaded"),
    }
    std::fs::remove_file(&path)?;
    Ok(())
}
