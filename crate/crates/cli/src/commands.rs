//! The six operator commands. Every command is deterministic given its
//! config and seeds, writes machine-readable outputs next to human tables,
//! and returns library errors upward for exit-code mapping.

use crate::config::RunConfig;
use anyhow::{anyhow, bail, Context, Result};
use easwin_core::data::{self, Split, SyntheticSpec};
use easwin_core::flops::{factorized_cost, joint_cost, CostShape};
use easwin_core::gradcheck;
use easwin_core::metrics::{evaluate_all, evaluate_grouped, EvalReport};
use easwin_core::model::{EmbeddingBatch, HeadConfig};
use easwin_core::trainer::{eval_split, train_multi_seed};
use easwin_core::{checkpoint, EaSwin32, Tensor};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::path::Path;
use std::time::Instant;

fn load_data(cfg: &RunConfig, split: &str) -> Result<Split> {
    if let Some(manifest) = &cfg.data.manifest {
        return Ok(data::load_split(Path::new(manifest), split)?);
    }
    let spec = cfg
        .data
        .synthetic
        .clone()
        .unwrap_or_else(SyntheticSpec::default_artifact);
    let ds = data::generate(&spec)?;
    let split_data = match split {
        "train" => ds.train,
        "val" => ds.val,
        "test" => ds.test,
        other => bail!("unknown split '{other}'"),
    };
    if split_data.n() == 0 {
        bail!("data error: split '{split}' is empty under the current spec");
    }
    Ok(split_data)
}

pub fn cmd_gen(mut cfg: RunConfig) -> Result<()> {
    cfg.reconcile();
    let out = cfg.out_dir()?.to_path_buf();
    let spec = cfg
        .data
        .synthetic
        .clone()
        .unwrap_or_else(SyntheticSpec::default_artifact);
    if spec.is_null() {
        eprintln!(
            "warning: class parameters are identical; the generated task is unlearnable by design"
        );
    }
    let t = Instant::now();
    let ds = data::generate(&spec)?;
    let manifest = data::write_dataset(&out, &ds)?;
    println!(
        "generated {} videos in {:.1}s -> {}",
        ds.train.n() + ds.val.n() + ds.test.n(),
        t.elapsed().as_secs_f64(),
        out.display()
    );
    println!("split      n   real   fake     t    s  d_in");
    for e in &manifest.entries {
        println!(
            "{:<6} {:>5} {:>6} {:>6} {:>5} {:>4} {:>5}",
            e.split, e.n, e.class_counts[0], e.class_counts[1], e.t, e.s, e.d_in
        );
    }
    std::fs::write(
        out.join("config.json"),
        serde_json::to_string_pretty(&cfg)?,
    )?;
    Ok(())
}

pub fn cmd_train(mut cfg: RunConfig) -> Result<()> {
    cfg.reconcile();
    cfg.model.validate()?;
    cfg.train.validate()?;
    let out = cfg.out_dir()?.to_path_buf();
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;

    let train_data = load_data(&cfg, "train")?;
    let val_data = load_data(&cfg, "val")?;
    println!(
        "training on {} videos, validating on {} ({} seeds)",
        train_data.n(),
        val_data.n(),
        cfg.train.seeds.len()
    );
    let t = Instant::now();
    let report =
        train_multi_seed::<f32>(&train_data, &val_data, &cfg.model, &cfg.train, Some(&out))?;
    for o in &report.outcomes {
        let status = if o.diverged { " (diverged, best checkpoint kept)" } else { "" };
        println!(
            "seed {}: best val AUC {:.4} at epoch {}{status}",
            o.seed, o.best_val_auc, o.best_epoch
        );
    }
    println!(
        "best val AUC over {} seeds: mean {:.4} +/- {:.4}, max {:.4}  ({:.1}s)",
        report.outcomes.len(),
        report.mean_best_auc,
        report.std_best_auc,
        report.max_best_auc,
        t.elapsed().as_secs_f64()
    );
    Ok(())
}

fn print_report_table(rows: &[EvalReport]) {
    println!(
        "{:<14} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "group", "n", "acc", "prec", "recall", "f1", "auc"
    );
    for r in rows {
        println!(
            "{:<14} {:>6} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            r.group, r.n, r.accuracy, r.precision, r.recall, r.f1, r.auc
        );
    }
}

pub fn cmd_eval(mut cfg: RunConfig, checkpoint_path: &Path, split: &str) -> Result<()> {
    cfg.reconcile();
    let model: EaSwin32 = checkpoint::load(checkpoint_path)
        .with_context(|| format!("loading checkpoint {}", checkpoint_path.display()))?;
    let split_data = load_data(&cfg, split)?;
    let (scores, labels, _) = eval_split(&model, &split_data, cfg.train.batch_size)?;

    let mut rows = Vec::new();
    rows.push(evaluate_all(&scores, &labels)?);
    if let Ok(grouped) = evaluate_grouped(&scores, &labels, &split_data.groups, 17) {
        rows.extend(grouped);
    }
    print_report_table(&rows);

    if let Some(dir) = cfg.out_dir.as_deref() {
        let dir = Path::new(dir);
        std::fs::create_dir_all(dir)?;
        let mut csv = String::from("group,n,tp,fp,tn,fn,acc,prec,recall,f1,auc\n");
        for r in &rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.group, r.n, r.tp, r.fp, r.tn, r.fn_, r.accuracy, r.precision, r.recall,
                r.f1, r.auc
            ));
        }
        std::fs::write(dir.join("eval.csv"), csv)?;
        std::fs::write(dir.join("eval.json"), serde_json::to_string_pretty(&rows)?)?;
        println!("wrote eval.csv / eval.json under {}", dir.display());
    }
    Ok(())
}

pub fn cmd_gradcheck(tol: f64) -> Result<()> {
    let t = Instant::now();
    let report = gradcheck::standard_tiny_report(gradcheck::DEFAULT_H, tol)?;
    for v in &report.variants {
        let verdict = if v.max_rel_err < tol { "PASS" } else { "FAIL" };
        println!("{verdict} {}: max_rel_err={:.3e} (tol {tol:.0e})", v.label, v.max_rel_err);
    }
    println!(
        "{} overall: max_rel_err={:.3e} over {} variants in {:.1}s",
        if report.passed { "PASS" } else { "FAIL" },
        report.max_rel_err,
        report.variants.len(),
        t.elapsed().as_secs_f64()
    );
    if !report.passed {
        return Err(anyhow!("gradcheck failed: max_rel_err {:.3e}", report.max_rel_err));
    }
    Ok(())
}

pub fn cmd_ablate(mut cfg: RunConfig) -> Result<()> {
    cfg.reconcile();
    cfg.model.validate()?;
    cfg.train.validate()?;
    let out = cfg.out_dir()?.to_path_buf();
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    let train_data = load_data(&cfg, "train")?;
    let val_data = load_data(&cfg, "val")?;

    let variants: Vec<(String, HeadConfig)> = std::iter::once(("base".to_string(), cfg.model.clone()))
        .chain((1..=4).map(|i| {
            let name = match i {
                1 => "ablation1_no_shift",
                2 => "ablation2_joint_attention",
                3 => "ablation3_mean_pooling",
                _ => "ablation4_mlp_baseline",
            };
            (name.to_string(), cfg.model.ablation(i).expect("ablation index"))
        }))
        .collect();

    let mut table: Vec<(String, EvalReport)> = Vec::new();
    for (name, head) in &variants {
        let dir = out.join(name);
        let report = train_multi_seed::<f32>(&train_data, &val_data, head, &cfg.train, Some(&dir))?;
        // Metrics of the best-AUC checkpoint of the first seed, plus the
        // cross-seed mean AUC in the log line.
        let best = &report.outcomes[0];
        let (scores, labels, _) = eval_split(&best.model, &val_data, cfg.train.batch_size)?;
        let row = evaluate_all(&scores, &labels)?;
        println!(
            "{name}: val acc {:.4} auc {:.4} (mean best AUC over seeds {:.4})",
            row.accuracy, row.auc, report.mean_best_auc
        );
        table.push((name.clone(), row));
    }

    let mut csv = String::from("variant,acc,prec,recall,f1,auc\n");
    println!(
        "\n{:<26} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "variant", "acc", "prec", "recall", "f1", "auc"
    );
    for (name, r) in &table {
        println!(
            "{:<26} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            name, r.accuracy, r.precision, r.recall, r.f1, r.auc
        );
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            name, r.accuracy, r.precision, r.recall, r.f1, r.auc
        ));
    }
    std::fs::write(out.join("ablate.csv"), csv)?;
    println!("wrote {}", out.join("ablate.csv").display());
    Ok(())
}

#[derive(serde::Serialize)]
struct BenchRow {
    t: usize,
    factorized_attn_madds: u128,
    factorized_total_madds: u128,
    joint_attn_madds: u128,
    joint_total_madds: u128,
    factorized_ms: f64,
    joint_ms: f64,
}

pub fn cmd_bench(mut cfg: RunConfig, t_list: &[usize]) -> Result<()> {
    cfg.reconcile();
    let m = &cfg.model;
    let s = cfg.data.synthetic.as_ref().map(|s| s.s).unwrap_or(16);
    let d_in = m.d_in;
    let b = 2usize;
    let mut rows = Vec::new();
    let mut rng = StdRng::seed_from_u64(99);

    for &t in t_list {
        let shape = CostShape {
            b,
            t,
            s,
            d: m.d_model,
            w_t: m.w_t,
            w_s: m.w_s,
            depth_t: m.depth_t,
            depth_s: m.depth_s,
        };
        let fac = factorized_cost(&shape);
        let joint = joint_cost(&shape);

        // Wall-clock forward passes, informational only.
        let data: Vec<f32> = (0..b * t * s * d_in).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let batch = EmbeddingBatch::new(
            Tensor::new(vec![b, t, s, d_in], data)?,
            vec![t; b],
            None,
        )?;
        let head = HeadConfig { frames: t, ..m.clone() };
        let fac_model = EaSwin32::new(head.clone(), 1)?;
        let t0 = Instant::now();
        fac_model.forward_logits(&batch)?;
        let fac_ms = t0.elapsed().as_secs_f64() * 1e3;
        let joint_model =
            EaSwin32::new(HeadConfig { joint_attention: true, ..head }, 1)?;
        let t0 = Instant::now();
        joint_model.forward_logits(&batch)?;
        let joint_ms = t0.elapsed().as_secs_f64() * 1e3;

        rows.push(BenchRow {
            t,
            factorized_attn_madds: fac.attn_madds,
            factorized_total_madds: fac.total(),
            joint_attn_madds: joint.attn_madds,
            joint_total_madds: joint.total(),
            factorized_ms: fac_ms,
            joint_ms,
        });
    }

    println!(
        "{:>4} {:>16} {:>16} {:>16} {:>16} {:>10} {:>10}",
        "T", "fac attn madds", "fac total", "joint attn", "joint total", "fac ms", "joint ms"
    );
    for r in &rows {
        println!(
            "{:>4} {:>16} {:>16} {:>16} {:>16} {:>10.1} {:>10.1}",
            r.t,
            r.factorized_attn_madds,
            r.factorized_total_madds,
            r.joint_attn_madds,
            r.joint_total_madds,
            r.factorized_ms,
            r.joint_ms
        );
    }
    for pair in rows.windows(2) {
        let fr = pair[1].factorized_attn_madds as f64 / pair[0].factorized_attn_madds as f64;
        let jr = pair[1].joint_attn_madds as f64 / pair[0].joint_attn_madds as f64;
        println!(
            "T {} -> {}: factorized attn x{fr:.2}, joint attn x{jr:.2}",
            pair[0].t, pair[1].t
        );
    }
    if let Some(dir) = cfg.out_dir.as_deref() {
        let dir = Path::new(dir);
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("bench.json"), serde_json::to_string_pretty(&rows)?)?;
        println!("wrote {}", dir.join("bench.json").display());
    }
    Ok(())
}
