mod common;

use common::{darken, textured, tiny_config, write_pair_dirs};
use lowlight_core::image::{load_png, save_png, Image};
use lowlight_core::iqa::MetricReport;
use lowlight_core::pipeline::{
    enhance_image, evaluate, ingest, summarize, train_stage1, train_stage2, Models, PipelineError,
};

fn make_dataset(root: &std::path::Path, n: usize, side: usize) -> lowlight_core::pipeline::PairedDataset {
    let mut owned = Vec::new();
    for i in 0..n {
        let high = textured(i as u64 + 1, side, side, 3);
        let low = darken(&high, 0.25);
        owned.push((format!("pair{i}.png"), low, high));
    }
    let pairs: Vec<(&str, &Image, &Image)> = owned
        .iter()
        .map(|(n, l, h)| (n.as_str(), l, h))
        .collect();
    write_pair_dirs(root, &pairs);
    ingest(&root.join("low"), &root.join("high")).unwrap()
}

#[test]
fn ingest_pairs_two_matching_files() {
    let dir = tempfile::tempdir().unwrap();
    let ds = make_dataset(dir.path(), 2, 16);
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.pairs[0].name, "pair0.png");
    assert_eq!(ds.pairs[1].name, "pair1.png");
}

#[test]
fn ingest_rejects_unpaired_file_by_name() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), 1, 16);
    let orphan = textured(9, 16, 16, 3);
    save_png(&dir.path().join("low/orphan.png"), &orphan).unwrap();
    let err = ingest(&dir.path().join("low"), &dir.path().join("high")).unwrap_err();
    assert!(err.to_string().contains("orphan.png"), "got: {err}");
}

#[test]
fn ingest_rejects_dimension_mismatch_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let a = textured(1, 16, 16, 3);
    let b = textured(2, 16, 20, 3);
    write_pair_dirs(dir.path(), &[("odd.png", &a, &b)]);
    let err = ingest(&dir.path().join("low"), &dir.path().join("high")).unwrap_err();
    match err {
        PipelineError::DimensionMismatch { name, .. } => assert_eq!(name, "odd.png"),
        other => panic!("expected dimension mismatch, got {other}"),
    }
}

#[test]
fn png_round_trip_hits_unit_interval_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut img = Image::zeros(4, 4, 3);
    *img.at_mut(0, 0, 0) = 1.0;
    let path = dir.path().join("x.png");
    save_png(&path, &img).unwrap();
    let back = load_png(&path).unwrap();
    assert_eq!(back.at(0, 0, 0), 1.0);
    assert_eq!(back.at(1, 1, 1), 0.0);
}

#[test]
fn stage1_two_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ds = make_dataset(dir.path(), 1, 32);
    let mut cfg = tiny_config();
    cfg.set("train.epochs", "6").unwrap();
    let out_a = train_stage1(&ds, &cfg, &dir.path().join("a"), None).unwrap();
    let out_b = train_stage1(&ds, &cfg, &dir.path().join("b"), None).unwrap();
    let log_a = std::fs::read(&out_a.log).unwrap();
    let log_b = std::fs::read(&out_b.log).unwrap();
    assert_eq!(log_a, log_b);
    assert_eq!(
        std::fs::read(&out_a.checkpoint).unwrap(),
        std::fs::read(&out_b.checkpoint).unwrap()
    );
    let text = String::from_utf8(log_a).unwrap();
    assert_eq!(text.lines().count(), 7, "header plus one row per step");
    assert!(text.starts_with("step,l_r,"));
}

#[test]
fn stage1_resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let ds = make_dataset(dir.path(), 1, 32);
    let mut cfg = tiny_config();
    cfg.set("train.epochs", "4").unwrap();
    let full = train_stage1(&ds, &cfg, &dir.path().join("full"), None).unwrap();

    let mut half_cfg = cfg.clone();
    half_cfg.set("train.epochs", "2").unwrap();
    let part = train_stage1(&ds, &half_cfg, &dir.path().join("split"), None).unwrap();
    let resumed = train_stage1(&ds, &cfg, &dir.path().join("split"), Some(&part.checkpoint)).unwrap();
    assert_eq!(resumed.steps_run, 2);
    assert_eq!(
        std::fs::read(&full.checkpoint).unwrap(),
        std::fs::read(&resumed.checkpoint).unwrap(),
        "parameters after resume must match the uninterrupted run"
    );
    assert_eq!(
        std::fs::read(&full.log).unwrap(),
        std::fs::read(&resumed.log).unwrap()
    );
}

#[test]
fn stage2_trains_enhance_and_adjust_but_not_decom() {
    let dir = tempfile::tempdir().unwrap();
    let ds = make_dataset(dir.path(), 1, 32);
    let mut cfg = tiny_config();
    cfg.set("train.epochs", "2").unwrap();
    let out_dir = dir.path().join("run");
    let s1 = train_stage1(&ds, &cfg, &out_dir, None).unwrap();
    let decom_before = std::fs::read(&s1.checkpoint).unwrap();

    let s2 = train_stage2(&ds, &cfg, &s1.checkpoint, &out_dir, None).unwrap();
    assert!(s2.final_total.is_finite());
    assert_eq!(
        decom_before,
        std::fs::read(&s1.checkpoint).unwrap(),
        "stage 2 must leave the decomposition checkpoint untouched"
    );

    // trained joint weights differ from a fresh seed-identical init
    let models = Models::load(&out_dir, &cfg).unwrap();
    let fresh = Models::fresh(&cfg);
    let norm = |named: &[(String, lowlight_core::Tensor<f32>)]| -> f64 {
        named
            .iter()
            .flat_map(|(_, t)| t.data().iter().map(|v| (*v as f64).powi(2)).collect::<Vec<_>>())
            .sum::<f64>()
    };
    assert_ne!(
        norm(&models.enhance.named_params()),
        norm(&fresh.enhance.named_params())
    );
    assert_ne!(
        norm(&models.adjust.named_params()),
        norm(&fresh.adjust.named_params())
    );
}

#[test]
fn enhance_preserves_dimensions_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let ds = make_dataset(dir.path(), 1, 32);
    let mut cfg = tiny_config();
    cfg.set("train.epochs", "1").unwrap();
    let out_dir = dir.path().join("run");
    let s1 = train_stage1(&ds, &cfg, &out_dir, None).unwrap();
    train_stage2(&ds, &cfg, &s1.checkpoint, &out_dir, None).unwrap();
    let models = Models::load(&out_dir, &cfg).unwrap();

    // 30x26 is not divisible by the level stride; pad/crop must hide that
    let img = textured(3, 30, 26, 3);
    let a = enhance_image(&img, &models, &cfg).unwrap();
    assert_eq!(
        (a.final_image.height, a.final_image.width, a.final_image.channels),
        (30, 26, 3)
    );
    assert!(a.final_image.data.iter().all(|v| (0.0..=1.0).contains(v)));
    let b = enhance_image(&img, &models, &cfg).unwrap();
    assert_eq!(a.final_image.data, b.final_image.data);
    let keys: Vec<&str> = a.intermediates.iter().map(|(k, _)| *k).collect();
    assert_eq!(
        keys,
        [
            "lf",
            "hf",
            "reflectance",
            "illumination",
            "hf_enhanced",
            "reflectance_enhanced",
            "illumination_enhanced",
            "adjusted"
        ]
    );
}

#[test]
fn evaluate_reports_rows_and_hand_averaged_mean() {
    let dir = tempfile::tempdir().unwrap();
    let ds = make_dataset(dir.path(), 2, 32);
    let cfg = tiny_config();
    let models = Models::fresh(&cfg);
    let outcome = evaluate(&ds, &models, &cfg, None).unwrap();
    assert_eq!(outcome.rows.len(), 2);
    let psnrs: Vec<f64> = outcome
        .rows
        .iter()
        .map(|(_, r)| r.as_ref().unwrap().get("psnr").unwrap())
        .collect();
    let hand_mean = (psnrs[0] + psnrs[1]) / 2.0;
    assert!((outcome.mean.get("psnr").unwrap() - hand_mean).abs() < 1e-12);
    assert!(outcome.to_csv().starts_with("name,psnr,ssim,"));
}

#[test]
fn summarize_excludes_infinite_values_with_note() {
    let mut perfect = MetricReport::new();
    perfect.set("psnr", f64::INFINITY);
    perfect.set("mae", 0.0);
    let mut normal = MetricReport::new();
    normal.set("psnr", 20.0);
    normal.set("mae", 0.1);
    let rows = vec![
        ("a.png".to_string(), Ok(perfect)),
        ("b.png".to_string(), Ok(normal)),
        ("c.png".to_string(), Err("c.png: broken".to_string())),
    ];
    let (mean, excluded) = summarize(&rows);
    assert_eq!(mean.get("psnr"), Some(20.0));
    assert!((mean.get("mae").unwrap() - 0.05).abs() < 1e-12);
    assert_eq!(excluded.get("psnr"), Some(&1));

    let outcome = lowlight_core::pipeline::EvalOutcome {
        rows,
        mean,
        excluded,
    };
    let table = outcome.to_table();
    assert!(table.contains("psnr mean excludes 1 infinite value"));
    assert!(table.contains("partial results, 1 image(s) failed"));
}
