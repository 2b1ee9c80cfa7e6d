// Scratch harness for tuning the fixture generators against the target
// bands. Not part of the shipped surface.

use toc_core::fixtures;
use toc_core::protocol::{
    run_protocol, run_upper_bound, Ablation, DatasetRef, LearnerKind, ReplayConfig, RunConfig,
    TrainConfig, TreeConfig,
};
use toc_core::tabular::{load_from_records, prepare_dataset, PreparedDataset, SynthSpec};

fn parse_csv(text: &str, schema: &toc_core::tabular::DatasetSchema) -> toc_core::tabular::RawTable {
    let mut lines = text.lines();
    let headers: Vec<String> = lines.next().unwrap().split(',').map(str::to_string).collect();
    let records = lines.map(|l| Ok(l.split(',').map(str::to_string).collect::<Vec<_>>()));
    load_from_records(schema, &headers, records).unwrap()
}

fn heart_data() -> PreparedDataset {
    let csv = fixtures::heart_like_csv(7);
    let table = parse_csv(&csv, &fixtures::heart_schema());
    prepare_dataset(&table, 1).unwrap()
}

fn heart_config(learner: LearnerKind, replay: bool, ablation: Ablation) -> RunConfig {
    RunConfig {
        dataset: DatasetRef::Snapshot { path: "mem".into() },
        learner,
        replay: ReplayConfig::standard(replay, 2048),
        lambda: 1.0,
        concept_mode: Default::default(),
        tree: TreeConfig { max_depth: 4, min_leaf: 15, pool_slices: 2 },
        train: TrainConfig { batch_size: 8, max_epochs: 300, patience: 40, ..TrainConfig::default() },
        seeds: vec![0, 1, 2, 3, 4],
        ablation,
        tau: 0.8,
    }
}

fn show(tag: &str, r: &toc_core::protocol::RunReport) {
    let past = r.avg_past_task.as_ref().map(|a| a.mean).unwrap_or(f64::NAN);
    let cur = r.avg_current_task.mean;
    let audit = r
        .concept_audit_final
        .as_ref()
        .map(|a| {
            format!(
                "agree={:.3} gap={:.3} contra={:.3}",
                a.node_agreement.mean, a.rule_fidelity_gap.mean, a.high_conf_contradiction.mean
            )
        })
        .unwrap_or_default();
    println!("{tag:<28} past={past:.3} current={cur:.3} {audit}");
    for s in &r.per_seed {
        print!("    seed {}: ", s.seed);
        for t in 0..s.matrix.n_steps() {
            print!("{:?} ", s.matrix.row(t).iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
        }
        println!();
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let what = args.get(1).map(String::as_str).unwrap_or("heart");

    if what == "rules" {
        use toc_core::tree::{fit_tree, rule_dump, TreeParams};
        let data = heart_data();
        // protocol scaffold: pooled first two slices
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for slice in data.slices.iter().take(2) {
            for &r in &slice.train_idx {
                rows.push(slice.x.row(r).to_vec());
                y.push(slice.y[r]);
            }
        }
        let x = toc_core::mat::Mat::from_rows(&rows);
        for min_leaf in [15, 20, 25] {
            let tree = fit_tree(&x, &y, TreeParams { max_depth: 4, min_leaf, seed: 0 }, Some(2)).unwrap();
            println!("== scaffold min_leaf={min_leaf}: L={} depth={}", tree.n_leaves(), tree.depth());
            print!("{}", rule_dump(&tree, &data.preprocessor).unwrap());
            for slice in &data.slices {
                let tx = slice.features_of(&slice.test_idx);
                let ty = slice.labels_of(&slice.test_idx);
                let scores = tree.predict_batch(&tx).unwrap();
                let auc = toc_core::metrics::MetricTag::Auroc.evaluate(&scores, &ty).unwrap();
                println!("  slice {} leaf-score AUROC: {auc:.3}", slice.slice_id);
            }
        }
        return;
    }

    if what == "seed3" {
        let data = heart_data();
        let cfg = heart_config(LearnerKind::Toc, true, Ablation::None);
        let one = RunConfig { seeds: vec![3], ..cfg };
        let report = run_protocol(&one, &data).unwrap();
        for (t, log) in report.per_seed[0].train_logs.iter().enumerate() {
            println!("slice {t}: stopped at {}", log.stopped_epoch);
            for e in log.epochs.iter() {
                println!("  e{:>3} concept={:.4} label={:.4} val={:.4}", e.epoch, e.concept_loss, e.label_loss, e.val_metric);
            }
        }
        return;
    }

    if what == "debug" {
        use toc_core::tree::{fit_tree, TreeParams};
        let data = heart_data();
        let pooled = toc_core::protocol::pooled_slice(&data);
        let x = pooled.features_of(&pooled.train_idx);
        let y = pooled.labels_of(&pooled.train_idx);
        for min_leaf in [15, 25, 50] {
            let tree = fit_tree(&x, &y, TreeParams { max_depth: 4, min_leaf, seed: 0 }, Some(2)).unwrap();
            let tx = pooled.features_of(&pooled.test_idx);
            let ty = pooled.labels_of(&pooled.test_idx);
            let scores = tree.predict_batch(&tx).unwrap();
            let auc = toc_core::metrics::MetricTag::Auroc.evaluate(&scores, &ty).unwrap();
            println!("pooled tree min_leaf={min_leaf}: L={} depth={} test AUROC={auc:.3}", tree.n_leaves(), tree.depth());
        }
        // trace one toc UB training run
        let cfg = heart_config(LearnerKind::Toc, true, Ablation::None);
        let scaffold_rows: Vec<usize> = pooled.train_idx.clone();
        let sx = pooled.features_of(&scaffold_rows);
        let sy = pooled.labels_of(&scaffold_rows);
        let tree = std::sync::Arc::new(
            fit_tree(&sx, &sy, TreeParams { max_depth: cfg.tree.max_depth, min_leaf: cfg.tree.min_leaf, seed: 0 }, Some(2)).unwrap(),
        );
        println!("UB scaffold: L={} depth={}", tree.n_leaves(), tree.depth());
        let mut model = toc_core::toc::build_toc(tree, data.d_enc, 2, 1.0, 0).unwrap();
        let control = toc_core::nn::TrainControl {
            max_epochs: 200,
            patience: 20,
            batch_size: 32,
            seed: 0,
            metric: toc_core::metrics::MetricTag::Auroc,
        };
        let buffer = toc_core::replay::ReplayBuffer::new(0, true, 0);
        let log = toc_core::toc::train_slice(
            &mut model,
            &pooled,
            &buffer,
            toc_core::toc::BatchMix::default(),
            &control,
            toc_core::nn::AdamHyper::default(),
        )
        .unwrap();
        for e in &log.epochs {
            println!(
                "epoch {:>2}: concept={:.4} label={:.4} total={:.4} val={:.4}",
                e.epoch, e.concept_loss, e.label_loss, e.total_loss, e.val_metric
            );
        }
        let tx = pooled.features_of(&pooled.test_idx);
        let ty = pooled.labels_of(&pooled.test_idx);
        let scores = model.predict_scores(&tx).unwrap();
        println!("final UB test AUROC: {:.3}", toc_core::metrics::MetricTag::Auroc.evaluate(&scores, &ty).unwrap());
        return;
    }

    if what == "heart" {
        let data = heart_data();
        println!(
            "heart: d_enc={} slices={:?}",
            data.d_enc,
            data.slices.iter().map(|s| s.n_rows()).collect::<Vec<_>>()
        );
        // scaffold shape probe
        let cfg = heart_config(LearnerKind::Toc, true, Ablation::None);
        let t0 = std::time::Instant::now();
        let toc = run_protocol(&cfg, &data).unwrap();
        println!("toc wall: {:?}", t0.elapsed());
        show("toc replay", &toc);
        let ub = run_upper_bound(&cfg, &data).unwrap();
        println!("toc UB: {:.3} ± {:?}", ub.mean, ub.se);

        let tree_nr = run_protocol(&heart_config(LearnerKind::TreeBaseline, false, Ablation::None), &data).unwrap();
        show("tree no-replay", &tree_nr);
        let tree_r = run_protocol(&heart_config(LearnerKind::TreeBaseline, true, Ablation::None), &data).unwrap();
        show("tree replay", &tree_r);
        let mlp_nr = run_protocol(&heart_config(LearnerKind::MlpDirect, false, Ablation::None), &data).unwrap();
        show("mlp no-replay", &mlp_nr);
        let mlp_r = run_protocol(&heart_config(LearnerKind::MlpDirect, true, Ablation::None), &data).unwrap();
        show("mlp replay", &mlp_r);

        let no_replay = run_protocol(&heart_config(LearnerKind::Toc, true, Ablation::NoReplay), &data).unwrap();
        show("toc no_replay(ablate)", &no_replay);
        let no_cl = run_protocol(&heart_config(LearnerKind::Toc, true, Ablation::NoConceptLoss), &data).unwrap();
        show("toc no_concept_loss", &no_cl);
        let refresh = run_protocol(&heart_config(LearnerKind::Toc, true, Ablation::RefreshTree), &data).unwrap();
        show("toc refresh_tree", &refresh);
    }

    if what == "cdc" {
        let n: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(50_000);
        let csv = fixtures::cdc_like_csv(7, n);
        let table = parse_csv(&csv, &fixtures::cdc_schema());
        let data = prepare_dataset(&table, 1).unwrap();
        println!(
            "cdc: d_enc={} slices={:?}",
            data.d_enc,
            data.slices.iter().map(|s| s.n_rows()).collect::<Vec<_>>()
        );
        let mut cfg = heart_config(LearnerKind::Toc, true, Ablation::None);
        cfg.tree = TreeConfig { max_depth: 4, min_leaf: 50, pool_slices: 1 };
        let t0 = std::time::Instant::now();
        let toc = run_protocol(&cfg, &data).unwrap();
        println!("toc wall: {:?}", t0.elapsed());
        show("toc replay", &toc);

        let mut cfg_tree = heart_config(LearnerKind::TreeBaseline, false, Ablation::None);
        cfg_tree.tree = cfg.tree.clone();
        let tree_nr = run_protocol(&cfg_tree, &data).unwrap();
        show("tree no-replay", &tree_nr);
        cfg_tree.replay.enabled = true;
        let tree_r = run_protocol(&cfg_tree, &data).unwrap();
        show("tree replay", &tree_r);
    }

    if what == "synth" {
        // capacity sweep stream + stationarity probes
        let drift = SynthSpec {
            name: "synth-drift".into(),
            n_slices: 4,
            n_per_slice: 4000,
            n_features: 12,
            n_classes: 2,
            class_sep: 2.2,
            mean_drift: {
                let mut v = vec![0.0; 12];
                v[0] = 1.1;
                v[1] = -0.8;
                v[2] = 0.6;
                v
            },
            prior_start: vec![1.0, 1.0],
            prior_end: vec![1.0, 1.0],
            missing_rate_start: 0.0,
            missing_rate_end: 0.0,
            noise_sd: 1.0,
            split: Default::default(),
        };
        let data = toc_core::tabular::synth_shift_stream(&drift, 5).unwrap();
        let mut cfg = heart_config(LearnerKind::Toc, true, Ablation::None);
        cfg.seeds = vec![0, 1, 2];
        cfg.tree = TreeConfig { max_depth: 4, min_leaf: 50, pool_slices: 1 };
        for cap in [0usize, 512, 2048, 8192] {
            cfg.replay = ReplayConfig::standard(cap > 0, cap);
            let r = run_protocol(&cfg, &data).unwrap();
            show(&format!("toc cap={cap}"), &r);
        }
        let mut cfg_t = cfg.clone();
        cfg_t.learner = LearnerKind::TreeBaseline;
        cfg_t.replay = ReplayConfig::standard(false, 0);
        show("tree no-replay", &run_protocol(&cfg_t, &data).unwrap());
        let mut cfg_m = cfg_t.clone();
        cfg_m.learner = LearnerKind::MlpDirect;
        show("mlp no-replay", &run_protocol(&cfg_m, &data).unwrap());
    }
}
