//! Long-run behavior study across methods and seeds; prints the quantities
//! the acceptance thresholds pin down.

use fargan_core::trainer::TrainConfig;
use fargan_core::*;
use std::sync::Mutex;

fn run(tag: &str, cfg: TrainConfig, ds: &RealDataset) -> String {
    let t = std::time::Instant::now();
    let out = train(&cfg, ds).unwrap();
    let last = out.report.snapshots.last();
    let (modes, hq, pairs, maxf, flag) = last
        .map(|s| (s.modes_covered, s.hq_ratio, s.pairs, s.max_fakes_per_source, s.collapse_flag))
        .unwrap_or((0, 0.0, 0, 0, false));
    let d_hist: Vec<f64> = out.state.trace.iter().map(|r| r.d_loss).collect();
    let g_hist: Vec<f64> = out.state.trace.iter().map(|r| r.g_loss).collect();
    let dev = loss_deviation(&d_hist, &g_hist);
    let worst = dev
        .windows
        .iter()
        .map(|w| (w.mean_dev_d, w.mean_dev_g))
        .fold((0.0f64, 0.0f64), |acc, (d, g)| (acc.0.min(d), acc.1.max(g)));
    format!(
        "{tag}: modes={modes} hq={hq:.3} pairs={pairs} max_fakes_per_source={maxf} collapse={flag} \
         worst(d_dev,g_dev)=({:.3},{:.3}) diverged={:?} [{:.1}s]",
        worst.0,
        worst.1,
        out.report.diverged_at,
        t.elapsed().as_secs_f64()
    )
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("all");
    let lines = Mutex::new(Vec::<String>::new());

    let mut jobs: Vec<Box<dyn FnOnce() -> String + Send>> = Vec::new();
    if which == "ring" || which == "all" {
        for seed in [11u64, 12, 13] {
            let ds_spec = DatasetSpec {
                kind: DatasetKind::ring8(2.0, 0.02),
                n_real: 512,
                seed: 1000 + seed,
            };
            jobs.push(Box::new(move || {
                let ds = generate_real(&ds_spec).unwrap();
                run(
                    &format!("ring8 FARGAN seed={seed}"),
                    TrainConfig::synthetic_fargan(50_000, seed),
                    &ds,
                )
            }));
            let ds_spec2 = DatasetSpec {
                kind: DatasetKind::ring8(2.0, 0.02),
                n_real: 512,
                seed: 1000 + seed,
            };
            jobs.push(Box::new(move || {
                let ds = generate_real(&ds_spec2).unwrap();
                run(
                    &format!("ring8 0GP    seed={seed}"),
                    TrainConfig::synthetic_baseline(PenaltyKind::ZeroGpSample, 50_000, seed),
                    &ds,
                )
            }));
        }
    }
    if which == "gauss" || which == "all" {
        for seed in [21u64, 22, 23] {
            for (name, cfg) in [
                ("FARGAN", TrainConfig::synthetic_fargan(100_000, seed)),
                (
                    "no-GP ",
                    TrainConfig::synthetic_baseline(PenaltyKind::None, 100_000, seed),
                ),
                (
                    "0GP   ",
                    TrainConfig::synthetic_baseline(PenaltyKind::ZeroGpSample, 100_000, seed),
                ),
            ] {
                let ds_spec = DatasetSpec {
                    kind: DatasetKind::single_gaussian([0.0, 0.0], 1.0),
                    n_real: 512,
                    seed: 2000 + seed,
                };
                jobs.push(Box::new(move || {
                    let ds = generate_real(&ds_spec).unwrap();
                    run(&format!("gauss {name} seed={seed}"), cfg, &ds)
                }));
            }
        }
    }

    let jobs = Mutex::new(jobs);
    std::thread::scope(|s| {
        for _ in 0..2 {
            s.spawn(|| loop {
                let job = jobs.lock().unwrap().pop();
                match job {
                    Some(j) => {
                        let line = j();
                        println!("{line}");
                        lines.lock().unwrap().push(line);
                    }
                    None => break,
                }
            });
        }
    });
    println!("--- study done ---");
}
