//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance` (five to eight minutes on one core; the
//! end-to-end training run dominates).

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;

use tka_detect::cli::main_with_args;
use tka_detect::config::ExperimentConfig;
use tka_detect::data::{parse_voc_xml, write_voc_xml, AnnotatedObject, Annotation};
use tka_detect::detector::{load_model, model_to_bytes, save_model, ModelConfig};
use tka_detect::eval::bench::REFERENCE_LATENCY_S;
use tka_detect::eval::report::REFERENCE_MAP;
use tka_detect::eval::{
    average_precision, emit_report, format_table, match_detections, read_report, EvalReport, FoldPlan,
    LatencyStats, ScoredOutcome,
};
use tka_detect::geometry::{decode, encode, generate_anchors, iou, nms, BBox, BoxDelta};
use tka_detect::rpn::{assign_anchor_labels, rpn_loss, AnchorSample, RpnTargets};
use tka_detect::tensor::Tensor;

type Outcome = Result<String, String>;

fn tkad(args: &[&str]) -> Result<(), String> {
    match main_with_args(std::iter::once("tkad").chain(args.iter().copied())) {
        0 => Ok(()),
        code => Err(format!("`tkad {}` exited with {code}", args.join(" "))),
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Shared {
    root: tempfile::TempDir,
    /// manifest of the desk-easy dataset rendered for criterion 7
    manifest: Option<PathBuf>,
    /// model trained in criterion 7
    model: Option<PathBuf>,
}

fn c1() -> Outcome {
    let table = format_table(&read_back(&tiny_report()));
    let (m, lo, hi) = REFERENCE_MAP;
    ensure(table.contains("published reference") && table.contains(&format!("{m:.3}")), || {
        "report table lacks the published reference row".into()
    })?;
    Ok(format!(
        "published mAP {m} (min {lo}, max {hi}), {REFERENCE_LATENCY_S} s/frame are not reproducible here \
         (private 16-video dataset, full-size pretrained backbone); they are printed as a reference row \
         and criteria 2-11 stand in for them"
    ))
}

fn c2() -> Outcome {
    let t = Instant::now();
    let mut worst32: f64 = 0.0;
    let mut worst64: f64 = 0.0;
    for op in common::GRAD_OPS {
        let e32 = common::grad_suite::<f32>(op, 100, 1e-2);
        let e64 = common::grad_suite::<f64>(op, 100, 1e-6);
        ensure(e32 < 1e-2, || format!("{op} f32 relative error {e32:e}"))?;
        ensure(e64 < 1e-5, || format!("{op} f64 relative error {e64:e}"))?;
        worst32 = worst32.max(e32);
        worst64 = worst64.max(e64);
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "{} ops x 100 instances: max rel err f32 {worst32:.2e} (< 1e-2), f64 {worst64:.2e} (< 1e-5); {secs:.1} s",
        common::GRAD_OPS.len()
    ))
}

fn c3() -> Outcome {
    let mut r = common::rng(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (a, t) = (common::random_box(&mut r, 400.0), common::random_box(&mut r, 400.0));
        let back = decode(&a, &encode(&a, &t).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        for (p, q) in back.to_array().iter().zip(t.to_array()) {
            worst = worst.max((p - q).abs());
        }
    }
    ensure(worst < 1e-5, || format!("encode/decode error {worst:e}"))?;
    for i in 0..500u64 {
        let n = r.gen_range(0..30);
        let boxes = common::clustered_boxes(&mut r, n, 120.0);
        let scores: Vec<f64> = (0..n).map(|_| r.gen_range(0..8) as f64 / 7.0).collect();
        let thr = r.gen_range(0.1..0.9);
        let got = nms(&boxes, &scores, thr).map_err(|e| e.to_string())?;
        ensure(got == common::nms_oracle(&boxes, &scores, thr), || format!("nms instance {i} differs"))?;
        let (dets, truths) = common::random_frames(10_000 + i);
        let m = match_detections(&dets, &truths, thr).map_err(|e| e.to_string())?;
        ensure(m.detections == common::match_oracle(&dets, &truths, thr), || format!("matching instance {i} differs"))?;
    }
    let mut iou_err: f64 = 0.0;
    for _ in 0..1000 {
        let (a, b) = (common::random_box(&mut r, 200.0), common::random_box(&mut r, 200.0));
        let k = r.gen_range(0.05..20.0);
        iou_err = iou_err.max((iou(&a, &b) - iou(&b, &a)).abs());
        iou_err = iou_err.max((iou(&a.scale(k, k), &b.scale(k, k)) - iou(&a, &b)).abs());
    }
    ensure(iou_err < 1e-6, || format!("iou symmetry/scale error {iou_err:e}"))?;
    Ok(format!(
        "roundtrip max err {worst:.1e} on 1000 pairs; nms and matching equal oracles on 500 instances each; iou sym/scale err {iou_err:.1e}"
    ))
}

fn c4() -> Outcome {
    // thresholds come from the resolved configuration, not from constants
    let cfg = ExperimentConfig::resolve(None, Some("paper")).map_err(|e| e.to_string())?;
    let rpn = cfg.train.rpn.clone();
    ensure(rpn.pos_threshold == 0.8 && rpn.neg_threshold == 0.3, || "paper profile thresholds".into())?;
    let shifted = ExperimentConfig::resolve(Some("[train.rpn]\npos_threshold = 0.6\nneg_threshold = 0.2\n"), None)
        .map_err(|e| e.to_string())?
        .train
        .rpn;
    let model = ModelConfig::default();
    let anchors = generate_anchors(&model.anchor_grid()).map_err(|e| e.to_string())?;
    let (w, h) = (model.backbone.input_w as f64, model.backbone.input_h as f64);
    let mut r = common::rng(4);
    let mut positives = 0usize;
    for case in 0..1000 {
        let gts: Vec<BBox> = (0..r.gen_range(1..5))
            .map(|_| {
                let bw = r.gen_range(8.0..w / 2.0);
                let bh = r.gen_range(8.0..h / 2.0);
                let x = r.gen_range(0.0..w - bw);
                let y = r.gen_range(0.0..h - bh);
                BBox::new(x, y, x + bw, y + bh)
            })
            .collect();
        let c = if case % 4 == 3 { &shifted } else { &rpn };
        let labels = assign_anchor_labels(&anchors, &gts, c);
        common::check_labels(&anchors, &gts, c, &labels).map_err(|e| format!("case {case}: {e}"))?;
        positives += labels.positives().len();
    }
    Ok(format!(
        "1000 random cases ({} anchors each) agree with the rule checker; thresholds {}/{} read from config \
         (and 0.6/0.2 via override); every gt had a positive anchor; mean {:.1} positives/case",
        anchors.len(),
        rpn.pos_threshold,
        rpn.neg_threshold,
        positives as f64 / 1000.0
    ))
}

#[allow(clippy::approx_constant)] // the hand values are quoted to six places on purpose
fn c5() -> Outcome {
    let mut r = common::rng(5);
    let mut lin_err: f64 = 0.0;
    for _ in 0..200 {
        let a = 5;
        let logits = Tensor::<f64>::new(&[a, 2], (0..2 * a).map(|_| r.gen_range(-3.0..3.0)).collect()).unwrap();
        let deltas = Tensor::<f64>::new(&[a, 4], (0..4 * a).map(|_| r.gen_range(-2.0..2.0)).collect()).unwrap();
        let t = RpnTargets {
            sample: AnchorSample { positives: vec![1, 3], negatives: vec![0, 4] },
            regression: vec![(1, BoxDelta::new(0.2, -0.4, 0.3, 1.1)), (3, BoxDelta::new(-1.5, 0.0, 0.1, 0.0))],
            anchor_count: a,
            anchor_positions: a,
        };
        let lam = r.gen_range(0.0..50.0);
        let base = rpn_loss(&logits, &deltas, &t, &tka_detect::rpn::RpnLossConfig { lambda: 1.0, ..Default::default() })
            .map_err(|e| e.to_string())?;
        let sc = rpn_loss(&logits, &deltas, &t, &tka_detect::rpn::RpnLossConfig { lambda: lam, ..Default::default() })
            .map_err(|e| e.to_string())?;
        lin_err = lin_err.max((sc.regression - lam * base.regression).abs());
    }
    ensure(lin_err < 1e-6, || format!("lambda-linearity error {lin_err:e}"))?;

    let cfg = tka_detect::rpn::RpnLossConfig::default();
    let one = |positive: bool, err: f64, logits: [f64; 2]| {
        let t = RpnTargets {
            sample: if positive {
                AnchorSample { positives: vec![0], negatives: vec![] }
            } else {
                AnchorSample { positives: vec![], negatives: vec![0] }
            },
            regression: if positive { vec![(0, BoxDelta::new(0., 0., 0., 0.))] } else { vec![] },
            anchor_count: 1,
            anchor_positions: 1,
        };
        let l = Tensor::<f64>::new(&[1, 2], logits.to_vec()).unwrap();
        let d = Tensor::<f64>::new(&[1, 4], vec![err, 0., 0., 0.]).unwrap();
        rpn_loss(&l, &d, &t, &cfg).unwrap()
    };
    let neg = one(false, 0.0, [0.0, 0.0]).total;
    let pos = one(true, 0.5, [0.0, 0.0]).total;
    ensure((neg - 0.693147).abs() < 1e-5, || format!("ln 2 case gave {neg}"))?;
    ensure((pos - 1.943147).abs() < 1e-5, || format!("1.943147 case gave {pos}"))?;
    let perfect = one(true, 0.0, [-60.0, 60.0]);
    let off = one(true, 1e-3, [-60.0, 60.0]);
    ensure(perfect.regression == 0.0 && perfect.total < 1e-12, || format!("perfect prediction loss {}", perfect.total))?;
    ensure(off.regression > 0.0, || "imperfect regression scored zero".into())?;
    Ok(format!(
        "lambda-linearity err {lin_err:.1e}; hand values {neg:.6} and {pos:.6}; zero loss only at perfect predictions"
    ))
}

fn c6() -> Outcome {
    for i in 0..500 {
        let (o, gt) = common::random_outcomes(20_000 + i);
        let (a, b) = (average_precision(&o, gt), common::ap_oracle(&o, gt));
        ensure(a == b, || format!("instance {i}: {a:?} vs oracle {b:?}"))?;
    }
    let hand: Vec<ScoredOutcome> = [true, false, true]
        .iter()
        .enumerate()
        .map(|(i, &tp)| ScoredOutcome { score: 0.9 - 0.1 * i as f64, frame: 0, index: i, true_positive: tp })
        .collect();
    let ap = average_precision(&hand, 2).unwrap();
    ensure((ap - 0.8333).abs() < 1e-4, || format!("[TP, FP, TP] gave {ap}"))?;
    Ok(format!("500 random instances equal the envelope oracle exactly; [TP, FP, TP] / 2 gts = {ap:.4}"))
}

fn c7(sh: &mut Shared) -> Outcome {
    let t = Instant::now();
    let data = sh.root.path().join("desk-easy");
    let run = sh.root.path().join("desk-easy-run");
    let ev = sh.root.path().join("desk-easy-eval");
    let manifest = data.join("manifest.json");
    tkad(&["synth", "--profile", "desk-easy", "--out", s(&data)])?;
    tkad(&["train", "--profile", "desk-easy", "--manifest", s(&manifest), "--out", s(&run)])?;
    tkad(&["eval", "--profile", "desk-easy", "--model", s(&run.join("model.tkad")), "--manifest", s(&manifest), "--out", s(&ev)])?;
    sh.manifest = Some(manifest);
    sh.model = Some(run.join("model.tkad"));
    let report = read_report(&ev.join("report.json")).map_err(|e| e.to_string())?;
    let log = std::fs::read_to_string(run.join("train_log.csv")).map_err(|e| e.to_string())?;
    let totals: Vec<f64> = log
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (first, last) = (mean(&totals[..100]), mean(&totals[totals.len() - 100..]));
    let cfg = ExperimentConfig::resolve(None, Some("desk-easy")).unwrap();
    ensure(report.map_value >= 0.80, || format!("mAP {:.3} < 0.80", report.map_value))?;
    ensure(last < 0.3 * first, || format!("loss {first:.3} -> {last:.3} did not fall below 0.3x"))?;
    Ok(format!(
        "held-out mAP {:.3} (min {:.3}, max {:.3}) >= 0.80 on {} frames; seed {}, {} iterations; \
         loss {first:.3} -> {last:.3}; {:.0} s",
        report.map_value,
        report.min_ap,
        report.max_ap,
        report.frames_evaluated,
        cfg.train.seed,
        totals.len(),
        t.elapsed().as_secs_f64()
    ))
}

fn c8(sh: &Shared) -> Outcome {
    let manifest = sh.manifest.as_ref().ok_or("needs the criterion 7 dataset")?;
    let cfg = sh.root.path().join("cv.toml");
    std::fs::write(&cfg, "[train]\nrois_per_image = 8\n[train.sgd]\niterations = 2\n").unwrap();
    let out = sh.root.path().join("cv");
    tkad(&["loocv", "--config", s(&cfg), "--manifest", s(manifest), "--jobs", "2", "--out", s(&out)])?;
    let report = read_report(&out.join("report.json")).map_err(|e| e.to_string())?;
    let m = tka_detect::data::load_manifest(manifest).map_err(|e| e.to_string())?;
    let ids: Vec<String> = m.videos.iter().map(|v| v.video_id.clone()).collect();
    ensure(report.folds.len() == 16 && ids.len() == 16, || format!("{} folds for {} videos", report.folds.len(), ids.len()))?;
    let plan = FoldPlan {
        folds: report
            .folds
            .iter()
            .map(|f| tka_detect::eval::Fold {
                held_out_video_id: f.held_out_video.clone(),
                train_video_ids: f.train_videos.clone(),
            })
            .collect(),
    };
    plan.check(&ids).map_err(|e| e.to_string())?;
    for (k, f) in report.folds.iter().enumerate() {
        ensure(!f.train_videos.contains(&f.held_out_video), || format!("fold {k} trains on its test video"))?;
    }
    Ok("16 folds; every video held out exactly once; train/test disjoint in every fold".into())
}

fn same_dirs(a: &Path, b: &Path) -> Result<usize, String> {
    let mut n = 0;
    let mut ea: Vec<_> = std::fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    let mut eb: Vec<_> = std::fs::read_dir(b).unwrap().map(|e| e.unwrap().file_name()).collect();
    ea.sort();
    eb.sort();
    ensure(ea == eb, || format!("{} and {} list different files", a.display(), b.display()))?;
    for name in ea {
        let (pa, pb) = (a.join(&name), b.join(&name));
        if pa.is_dir() {
            n += same_dirs(&pa, &pb)?;
        } else {
            ensure(std::fs::read(&pa).unwrap() == std::fs::read(&pb).unwrap(), || format!("{} differs", pa.display()))?;
            n += 1;
        }
    }
    Ok(n)
}

fn c9(sh: &Shared) -> Outcome {
    let cfg = sh.root.path().join("det.toml");
    std::fs::write(&cfg, "[train.sgd]\niterations = 20\n").unwrap();
    let c = s(&cfg);
    let mut runs = Vec::new();
    for tag in ["a", "b"] {
        let dir = sh.root.path().join(format!("det-{tag}"));
        let (data, run, det, ev) = (dir.join("data"), dir.join("run"), dir.join("detect"), dir.join("eval"));
        let manifest = data.join("manifest.json");
        let model = run.join("model.tkad");
        tkad(&["synth", "--config", c, "--seed", "3", "--out", s(&data)])?;
        tkad(&["train", "--config", c, "--seed", "3", "--manifest", s(&manifest), "--out", s(&run)])?;
        tkad(&["detect", "--config", c, "--seed", "3", "--model", s(&model), "--manifest", s(&manifest), "--out", s(&det)])?;
        tkad(&["eval", "--config", c, "--seed", "3", "--model", s(&model), "--manifest", s(&manifest), "--out", s(&ev)])?;
        runs.push(dir);
    }
    let files = same_dirs(&runs[0], &runs[1])?;
    Ok(format!(
        "two synth -> train -> detect -> eval runs (seed 3): {files} files byte-identical, including model.tkad, detections.jsonl and report.json"
    ))
}

fn tiny_report() -> EvalReport {
    let names = ["a".to_string(), "b".to_string()];
    (77..)
        .find_map(|seed| {
            let (dets, truths) = common::random_frames(seed);
            let lat: Vec<f64> = (0..dets.len()).map(|i| 0.01 + i as f64 / 300.0).collect();
            tka_detect::eval::evaluate_frames(&names, &dets, &truths, &lat, &Default::default()).ok()
        })
        .unwrap()
}

fn read_back(r: &EvalReport) -> EvalReport {
    let d = tempfile::tempdir().unwrap();
    emit_report(r, d.path()).unwrap();
    read_report(&d.path().join("report.json")).unwrap()
}

fn c10(sh: &Shared) -> Outcome {
    let mut r = common::rng(10);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let ann = Annotation {
            image_path: format!("frame_{i:04}.ppm"),
            image_w: 327,
            image_h: 240,
            objects: (0..r.gen_range(0..5))
                .map(|k| {
                    let b = common::random_box(&mut r, 230.0);
                    AnnotatedObject {
                        class_name: format!("tool <{k}> & co"),
                        bbox: BBox::new(b.x_min + 1.0 / 3.0, b.y_min, b.x_max, b.y_max + 0.123456789),
                    }
                })
                .collect(),
        };
        let back = parse_voc_xml(&write_voc_xml(&ann)).map_err(|e| e.to_string())?;
        ensure(back.objects.len() == ann.objects.len() && back.image_path == ann.image_path, || format!("annotation {i} changed"))?;
        for (p, q) in back.objects.iter().zip(&ann.objects) {
            ensure(p.class_name == q.class_name, || format!("name {:?} became {:?}", q.class_name, p.class_name))?;
            for (u, v) in p.bbox.to_array().iter().zip(q.bbox.to_array()) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    ensure(worst < 1e-6, || format!("VOC coordinate error {worst:e}"))?;

    let model_path = sh.model.as_ref().ok_or("needs the criterion 7 model")?;
    let model = load_model(model_path).map_err(|e| e.to_string())?;
    let copy = sh.root.path().join("copy.tkad");
    save_model(&model, &copy).map_err(|e| e.to_string())?;
    let again = load_model(&copy).map_err(|e| e.to_string())?;
    ensure(again == model, || "reloaded model differs".into())?;
    ensure(std::fs::read(&copy).unwrap() == std::fs::read(model_path).unwrap(), || "checkpoint bytes differ".into())?;
    ensure(model_to_bytes(&again) == model_to_bytes(&model), || "re-serialisation differs".into())?;

    let rep = tiny_report();
    ensure(read_back(&rep) == rep, || "report changed on emit/read".into())?;
    Ok(format!(
        "VOC: 200 annotations, max coord err {worst:.1e}, names exact; checkpoint save/load bit-exact ({} parameters); report emit/read equal",
        model.parameter_count()
    ))
}

fn c11(sh: &Shared) -> Outcome {
    let model = sh.model.as_ref().ok_or("needs the criterion 7 model")?;
    let manifest = sh.manifest.as_ref().unwrap();
    let out = sh.root.path().join("bench");
    tkad(&["bench", "--profile", "desk-easy", "--model", s(model), "--manifest", s(manifest), "--out", s(&out)])?;
    let stats: LatencyStats =
        serde_json::from_str(&std::fs::read_to_string(out.join("latency.json")).unwrap()).map_err(|e| e.to_string())?;
    ensure(!stats.samples.is_empty() && stats.samples.iter().all(|&v| v > 0.0), || "no latency samples".into())?;
    Ok(format!(
        "mean {:.4} s, median {:.4} s over {} frames ({} warmup) vs published {REFERENCE_LATENCY_S} s (reported only, no gate)",
        stats.mean_s,
        stats.median_s,
        stats.samples.len(),
        stats.warmup
    ))
}

fn main() {
    let mut sh = Shared {
        root: tempfile::tempdir().unwrap(),
        manifest: None,
        model: None,
    };
    let names = [
        "headline numbers statement",
        "gradient correctness",
        "geometry oracles",
        "anchor labelling",
        "proposal loss algebra",
        "AP oracle",
        "end-to-end desk-easy",
        "LOOCV structure",
        "determinism",
        "format roundtrips",
        "latency reporting",
    ];
    let mut failed = 0;
    for (i, name) in names.iter().enumerate() {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| match i + 1 {
            1 => c1(),
            2 => c2(),
            3 => c3(),
            4 => c4(),
            5 => c5(),
            6 => c6(),
            7 => c7(&mut sh),
            8 => c8(&sh),
            9 => c9(&sh),
            10 => c10(&sh),
            _ => c11(&sh),
        }))
        .unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS [{:>2}] {name}: {detail} ({secs:.1} s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {why} ({secs:.1} s)", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", names.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
