//! Resolve the built-in profiles and a layered override; print the
//! snapshot that reproduces a run.
//!
//!     cargo run --example config_profiles

use tka_detect::config::{ExperimentConfig, PROFILES};

fn main() {
    for name in PROFILES {
        let c = ExperimentConfig::resolve(None, Some(name)).unwrap();
        println!(
            "{name:<15} {} classes, {}x{}, {} iterations x batch {}, anchors {}/{}",
            c.synth.n_classes,
            c.model.backbone.input_w,
            c.model.backbone.input_h,
            c.train.sgd.iterations,
            c.train.sgd.batch_size,
            c.train.rpn.pos_threshold,
            c.train.rpn.neg_threshold
        );
    }

    let doc = "profile = \"desk-cluttered\"\n[train.sgd]\nlearning_rate = 0.005\n";
    let c = ExperimentConfig::resolve(Some(doc), None).unwrap();
    println!("\n--- resolved snapshot ---\n{}", c.to_toml());

    match ExperimentConfig::resolve(Some("[detect]\nnms_iuo = 0.3\n"), None) {
        Err(e) => println!("typo is rejected: {e}"),
        Ok(_) => println!("typo accepted?"),
    }
}
