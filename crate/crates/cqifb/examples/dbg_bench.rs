use std::time::Instant;
use cqifb::cqinet::{build, CqinetArch};
use cqifb::nn::{dense_forward, loss_cqinet, Matrix, adam_step, AdamState, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let (batch, din, dout) = (100usize, 624usize, 624usize);
    let mut x = Matrix::zeros(batch, din);
    let mut w = Matrix::zeros(din, dout);
    for (i, v) in x.data_mut().iter_mut().enumerate() { *v = ((i * 37) % 100) as f32 / 100.0 - 0.5; }
    for (i, v) in w.data_mut().iter_mut().enumerate() { *v = ((i * 17) % 100) as f32 / 100.0 - 0.5; }
    let b = vec![0.0f32; dout];
    let flops = (2 * batch * din * dout) as f64;
    let t = Instant::now(); let reps = 30;
    for _ in 0..reps { dense_forward(&x, &w, &b); }
    let dt = t.elapsed().as_secs_f64() / reps as f64;
    println!("dense fwd: {:.1} ms -> {:.2} GFLOP/s", dt * 1e3, flops / dt / 1e9);

    // full training batch step
    let arch = CqinetArch::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut enc, mut dec) = build(&arch, 0.03, &mut rng).unwrap();
    let mut xb = Matrix::zeros(100, 624);
    for (i, v) in xb.data_mut().iter_mut().enumerate() { *v = ((i % 16) as f32 + 0.5) / 16.0; }
    let tgt = Matrix::zeros(100, 624);
    let tcfg = TrainConfig::default();
    let mut es = AdamState::new(&enc);
    let mut dst = AdamState::new(&dec);
    let t0 = Instant::now();
    let reps = 20;
    for r in 0..reps {
        let ec = enc.forward_train(&xb, &mut rng);
        let dc = dec.forward_train(ec.output(), &mut rng);
        let (_, dpred) = loss_cqinet(dc.output(), &tgt, 0.05);
        let (dg, dcode) = dec.backward(&dc, &dpred);
        let (eg, _) = enc.backward(&ec, &dcode);
        adam_step(&mut dec, &dg, &mut dst, &tcfg, r + 1);
        adam_step(&mut enc, &eg, &mut es, &tcfg, r + 1);
    }
    println!("train step: {:.1} ms/batch -> epoch(60) ~{:.1}s", t0.elapsed().as_secs_f64() * 1e3 / reps as f64, t0.elapsed().as_secs_f64() / reps as f64 * 60.0);
}
