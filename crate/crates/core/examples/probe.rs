use easwin_core::data::{generate, subsample_split, SyntheticSpec};
use easwin_core::model::HeadConfig;
use easwin_core::trainer::{eval_split, train_multi_seed, TrainConfig};
use easwin_core::metrics::evaluate_all;
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let spec = SyntheticSpec::default_artifact();
    let ds = generate(&spec).unwrap();
    let head = HeadConfig { d_in: 64, d_model: 128, heads: 8, ..HeadConfig::default() };
    let cfg = TrainConfig { epochs: 2, warmup_epochs: 1, batch_size: 64, seeds: vec![0, 1, 2], ..TrainConfig::default() };
    let report = train_multi_seed::<f32>(&ds.train, &ds.val, &head, &cfg, None).unwrap();
    for o in &report.outcomes {
        println!("seed {}: best val AUC {:.4}", o.seed, o.best_val_auc);
    }
    println!("3 seeds done at {:.0}s", t0.elapsed().as_secs_f64());

    // Frame-count degradation on the trained models.
    for k in [8usize, 4, 2] {
        let sub = subsample_split(&ds.val, k).unwrap();
        let mut aucs = Vec::new();
        for o in &report.outcomes {
            let (s, l, _) = eval_split(&o.model, &sub, 64).unwrap();
            aucs.push(evaluate_all(&s, &l).unwrap().auc);
        }
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        println!("frames {k}: mean AUC {:.4} ({:?})", mean, aucs.iter().map(|a| (a*1e4).round()/1e4).collect::<Vec<_>>());
    }

    // Null control.
    let t1 = Instant::now();
    let null = SyntheticSpec::null();
    let nds = generate(&null).unwrap();
    let ncfg = TrainConfig { epochs: 2, warmup_epochs: 1, batch_size: 64, seeds: vec![0], ..TrainConfig::default() };
    let nrep = train_multi_seed::<f32>(&nds.train, &nds.val, &head, &ncfg, None).unwrap();
    println!("null: best val AUC {:.4} in {:.0}s", nrep.outcomes[0].best_val_auc, t1.elapsed().as_secs_f64());
    println!("TOTAL {:.0}s", t0.elapsed().as_secs_f64());
}
