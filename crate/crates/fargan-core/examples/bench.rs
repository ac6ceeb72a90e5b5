use fargan_core::*;
use std::time::Instant;
fn main() {
    let ds = generate_real(&DatasetSpec { kind: DatasetKind::ring8(2.0, 0.02), n_real: 512, seed: 1 }).unwrap();
    let cfg = trainer::TrainConfig::synthetic_fargan(500, 42);
    let t = Instant::now();
    let out = train(&cfg, &ds).unwrap();
    let dt = t.elapsed().as_secs_f64();
    println!("FARGAN 500 iters: {:.2}s  ({:.2} ms/iter; 50k => {:.1} min)", dt, dt * 2.0, dt * 100.0 / 60.0);
    println!("diverged: {:?}, d_loss last {:.4}", out.report.diverged_at, out.state.trace.last().unwrap().d_loss);
    let cfg2 = trainer::TrainConfig::synthetic_baseline(PenaltyKind::ZeroGpSample, 500, 42);
    let t = Instant::now();
    let _ = train(&cfg2, &ds).unwrap();
    let dt2 = t.elapsed().as_secs_f64();
    println!("0GP baseline 500 iters: {:.2}s (50k => {:.1} min)", dt2, dt2 * 100.0 / 60.0);
}
