use easwin_core::data::{generate, SyntheticSpec};
use easwin_core::graph::Graph;
use easwin_core::model::HeadConfig;
use easwin_core::trainer::{bce_loss, clip_grad_norm, eval_split, AdamW, TrainConfig};
use easwin_core::EaSwin32;
use std::time::Instant;

fn main() {
    let mut spec = SyntheticSpec::default_artifact();
    spec.n_train = 128; spec.n_val = 512;
    let ds = generate(&spec).unwrap();
    let head = HeadConfig { d_in: 64, d_model: 128, heads: 8, ..HeadConfig::default() };
    let mut model = EaSwin32::new(head, 0).unwrap();
    let cfg = TrainConfig::default();
    let mut adam = AdamW::new(&model.params(), &cfg);
    let idx: Vec<usize> = (0..64).collect();
    let batch = ds.train.batch::<f32>(&idx).unwrap();
    let labels = batch.labels.clone().unwrap();

    let mut best = f64::INFINITY;
    for it in 0..6 {
        let t = Instant::now();
        let mut g = Graph::new();
        let (logits, _) = model.forward(&mut g, &batch).unwrap();
        let loss = bce_loss(&mut g, logits, &labels).unwrap();
        let fwd = t.elapsed().as_secs_f64();
        let t2 = Instant::now();
        g.backward(loss).unwrap();
        let grads = g.take_param_grads();
        let bwd = t2.elapsed().as_secs_f64();
        let t3 = Instant::now();
        model.apply_grads(&grads);
        clip_grad_norm(&mut model.params_mut(), 1.0);
        adam.step(&mut model.params_mut(), 3e-4).unwrap();
        model.zero_grads();
        let opt = t3.elapsed().as_secs_f64();
        let total = fwd + bwd + opt;
        best = best.min(total);
        println!("step {it}: fwd {fwd:.2}s bwd {bwd:.2}s opt {opt:.3}s total {total:.2}s");
    }
    println!("best step: {best:.2}s -> est epoch (63 steps): {:.0}s", best * 63.0);
    let t = Instant::now();
    let _ = eval_split(&model, &ds.val, 64).unwrap();
    println!("eval 1024 videos: {:.1}s", t.elapsed().as_secs_f64());
}
