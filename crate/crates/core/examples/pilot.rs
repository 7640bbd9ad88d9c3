//! Pilot run: desk-scale generation + estimator training + classifier
//! sanity, with timing. Used to calibrate configuration defaults.

use rff_core::config::RunConfig;
use rff_core::experiments::{cmd_gen, load_days};
use rff_core::heedful::{
    attach_classifier_head, build_baseline_cnn, build_estimator, evaluate, train_classifier,
    train_estimator, ClassifierConfig, EncoderPolicy, EstimatorConfig, Grouping, PoolingTail,
    TrainConfig,
};
use rff_core::datastore::WindowPolicy;
use rff_core::impair::Scenario;
use rff_core::metrology::LABELS_B;
use rff_core::waveform::Protocol;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let frames: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(160);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20);
    let window: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(512);

    let mut cfg = RunConfig::desk();
    cfg.dataset.frames_per_device_per_day = frames;
    cfg.dataset.scenarios = vec![Scenario::Wired];
    cfg.model.window_len = window;
    cfg.training.epochs = epochs;

    let dir = std::env::temp_dir().join(format!("rff_pilot_{frames}_{window}"));
    let _ = std::fs::remove_dir_all(&dir);

    let t0 = Instant::now();
    let summary = cmd_gen(&cfg, &dir).unwrap();
    println!("gen: {:?} ({:?})", t0.elapsed(), summary.datasets.iter().map(|d| (d.records, d.sync_failures)).collect::<Vec<_>>());

    let days = load_days(&dir, Protocol::DsssB, Scenario::Wired, 2).unwrap();
    let (day0, manifest) = &days[0];
    let (day1, _) = &days[1];

    // Label spread per dimension across devices (stable phase).
    println!("--- label stats (stable, day0) ---");
    for (d, name) in LABELS_B.iter().enumerate() {
        let mut per_device: Vec<(f32, f32)> = Vec::new();
        for dev in 0..cfg.dataset.n_devices as u32 {
            let vals: Vec<f32> = day0
                .iter()
                .filter(|r| r.device_id == dev && r.t_minutes >= 12.0 && r.sync_ok)
                .map(|r| r.labels.as_ref().unwrap()[d])
                .collect();
            let mean = vals.iter().sum::<f32>() / vals.len() as f32;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / vals.len() as f32;
            per_device.push((mean, var.sqrt()));
        }
        let means: Vec<f32> = per_device.iter().map(|p| p.0).collect();
        let global_mean = means.iter().sum::<f32>() / means.len() as f32;
        let spread = means
            .iter()
            .map(|m| (m - global_mean) * (m - global_mean))
            .sum::<f32>()
            .sqrt()
            / (means.len() as f32).sqrt();
        let noise = per_device.iter().map(|p| p.1).sum::<f32>() / per_device.len() as f32;
        println!("{name:>22}: device spread {spread:10.4}, within-device std {noise:10.4}, ratio {:8.1}", spread / noise.max(1e-9));
    }

    // Pools and splits.
    let seed = 99u64;
    let all_idx: Vec<usize> = (0..day0.len()).filter(|&i| day0[i].sync_ok).collect();
    let pools = rff_core::experiments::fraction_split(&all_idx, &[0.5, 0.5], seed);
    let (pool_e, pool_c) = (&pools[0], &pools[1]);
    let est_splits = rff_core::experiments::fraction_split(pool_e, &[0.6, 0.2, 0.2], seed + 1);

    let labels: Vec<String> = LABELS_B.iter().map(|s| s.to_string()).collect();
    let est_cfg = EstimatorConfig {
        input_shape: (2, window),
        conv_filters: cfg.model.conv_filters.clone(),
        dense_units: cfg.model.dense_units,
        label_subset: labels,
        pooling_tail: PoolingTail::Flatten,
        kernel_w: 7,
    };
    let tc = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let t1 = Instant::now();
    let est = train_estimator(
        day0,
        &manifest.label_schema,
        &est_splits[0],
        &est_splits[1],
        &est_splits[2],
        &est_cfg,
        &tc,
        WindowPolicy::Head,
    )
    .unwrap();
    println!(
        "estimator: {:?}, overall test MAE {:.4}",
        t1.elapsed(),
        est.outcome.test_mae_overall
    );
    for (f, m) in est.label_fields.iter().zip(&est.outcome.test_mae_per_dim) {
        println!("  {f:>22}: MAE {m:.4}");
    }

    // Classifier pools.
    let stable_c: Vec<usize> = pool_c
        .iter()
        .copied()
        .filter(|&i| day0[i].t_minutes >= 12.0)
        .collect();
    let warm_c: Vec<usize> = pool_c
        .iter()
        .copied()
        .filter(|&i| day0[i].t_minutes < 12.0)
        .collect();
    let cls_splits = rff_core::experiments::fraction_split(&stable_c, &[0.6, 0.2, 0.2], seed + 2);

    let n_classes = cfg.dataset.n_devices;
    let cls_cfg = ClassifierConfig::new(n_classes, EncoderPolicy::FineTune);
    let (spec, params, mask) =
        attach_classifier_head(&est.spec, &est.params, &cls_cfg, seed + 3).unwrap();
    let t2 = Instant::now();
    let heedful = train_classifier(
        &spec, &params, &mask, day0, &cls_splits[0], &cls_splits[1], &cls_cfg, &tc,
        WindowPolicy::Head,
    )
    .unwrap();
    println!("heedful classifier: {:?}", t2.elapsed());

    let frz_cfg = ClassifierConfig::new(n_classes, EncoderPolicy::Freeze);
    let (fspec, fparams, fmask) =
        attach_classifier_head(&est.spec, &est.params, &frz_cfg, seed + 3).unwrap();
    let frozen = train_classifier(
        &fspec, &fparams, &fmask, day0, &cls_splits[0], &cls_splits[1], &frz_cfg, &tc,
        WindowPolicy::Head,
    )
    .unwrap();

    let est_cfg_b = est_cfg.clone();
    let (bspec, bparams) = build_baseline_cnn(&est_cfg_b, &cls_cfg, seed + 4).unwrap();
    let bmask = vec![true; bparams.tensors.len()];
    let t3 = Instant::now();
    let baseline = train_classifier(
        &bspec, &bparams, &bmask, day0, &cls_splits[0], &cls_splits[1], &cls_cfg, &tc,
        WindowPolicy::Head,
    )
    .unwrap();
    println!("baseline classifier: {:?}", t3.elapsed());

    let bins = Grouping::Interval(vec![
        (0.0, 2.0),
        (2.0, 4.0),
        (4.0, 6.0),
        (6.0, 12.0),
        (12.0, f64::INFINITY),
    ]);
    let mut test_same: Vec<usize> = warm_c.clone();
    test_same.extend_from_slice(&cls_splits[2]);
    let day1_idx: Vec<usize> = (0..day1.len()).filter(|&i| day1[i].sync_ok).collect();

    for (name, model) in [("heedful", &heedful), ("frozen", &frozen), ("baseline", &baseline)] {
        let table = evaluate(model, day0, &test_same, &bins).unwrap();
        print!("{name:>9} day0: ");
        for row in &table.rows {
            print!("{}={} ", row.group, if row.empty_warning { "n/a".into() } else { format!("{:.3}", row.accuracy) });
        }
        println!();
        let table = evaluate(model, day1, &day1_idx, &bins).unwrap();
        print!("{name:>9} day1: ");
        for row in &table.rows {
            print!("{}={} ", row.group, if row.empty_warning { "n/a".into() } else { format!("{:.3}", row.accuracy) });
        }
        println!();
    }

    // Embedding separation on stable test frames.
    let emb = rff_core::heedful::embed_records(&est, day0, &cls_splits[2]).unwrap();
    let lab: Vec<usize> = cls_splits[2].iter().map(|&i| day0[i].device_id as usize).collect();
    println!(
        "silhouette (stable embeddings): {:.3}",
        rff_core::heedful::silhouette_score(&emb, &lab)
    );
    println!("total: {:?}", t0.elapsed());
}
