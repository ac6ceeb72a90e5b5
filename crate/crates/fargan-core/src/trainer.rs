//! Minibatch training with fake-as-real selection.
//!
//! Each iteration runs `d_steps_per_g_step` discriminator ascent steps and
//! one generator ascent step. A discriminator step samples N1 reals and
//! M + f*N0 fakes, treats the N0 lowest-output candidates from the tail
//! pool as real, and ascends the batch objective minus k times the mean
//! zero-centered gradient penalty over the anchor points. Everything is
//! driven by one seeded RNG, so a (config, dataset) pair fixes the whole
//! trajectory bit-exactly.

use crate::data::{sample_latent, sample_real_batch, RealDataset};
use crate::metrics::{
    close_pairs, loss_deviation, mode_coverage, ClosePairConfig, MetricSnapshot,
};
use crate::mlp::{MlpError, MlpParams, MlpSpec};
use crate::objectives::{
    d_objective, g_objective, interpolate_anchors, zero_gp, BatchOutputs, LossKind,
    ObjectiveError, PenaltyKind,
};
use crate::tape::{Tape, TapeError};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Metric snapshot cadence, in iterations.
pub const SNAPSHOT_EVERY: usize = 1_000;
/// Generated-sample count for metric snapshots and the final sample set.
pub const EVAL_SAMPLES: usize = 10_000;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss or parameter at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("select_far asked for {wanted} of {available} candidates")]
    SelectCount { wanted: usize, available: usize },
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Tape(#[from] TapeError),
}

fn default_f() -> usize {
    8
}
fn default_k() -> f64 {
    10.0
}
fn default_lr() -> f64 {
    0.003
}
fn default_alpha() -> f64 {
    0.99
}
fn default_eps() -> f64 {
    1e-8
}
fn default_d_steps() -> usize {
    1
}

/// All hyperparameters of one training run. Defaults follow the synthetic
/// experiment settings: N = M = 64, N0 = 16, f = 8, k = 10, lr = 0.003,
/// RMSProp alpha = 0.99.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// N: real-side batch total, including the fake-as-real slice.
    pub n: usize,
    /// M: fake-side loss batch.
    pub m: usize,
    /// N0: fake samples treated as real per step.
    pub n0: usize,
    /// f: candidate pool multiplier; f*N0 fakes compete for the FAR slots.
    #[serde(default = "default_f")]
    pub f: usize,
    /// k: gradient-penalty weight.
    #[serde(default = "default_k")]
    pub k: f64,
    pub loss: LossKind,
    pub penalty: PenaltyKind,
    #[serde(default = "default_lr")]
    pub lr_d: f64,
    #[serde(default = "default_lr")]
    pub lr_g: f64,
    #[serde(default = "default_alpha")]
    pub rmsprop_alpha: f64,
    #[serde(default = "default_eps")]
    pub rmsprop_eps: f64,
    #[serde(default = "default_d_steps")]
    pub d_steps_per_g_step: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Synthetic-experiment FARGAN configuration.
    pub fn synthetic_fargan(iterations: usize, seed: u64) -> Self {
        Self {
            n: 64,
            m: 64,
            n0: 16,
            f: 8,
            k: 10.0,
            loss: LossKind::Nsgan,
            penalty: PenaltyKind::ZeroGpSample,
            lr_d: 0.003,
            lr_g: 0.003,
            rmsprop_alpha: 0.99,
            rmsprop_eps: 1e-8,
            d_steps_per_g_step: 1,
            iterations,
            seed,
        }
    }

    /// Same settings with the fake-as-real machinery turned off.
    pub fn synthetic_baseline(penalty: PenaltyKind, iterations: usize, seed: u64) -> Self {
        Self {
            n0: 0,
            penalty,
            ..Self::synthetic_fargan(iterations, seed)
        }
    }

    /// N1 = N - N0, the number of actual real samples per step.
    pub fn n1(&self) -> usize {
        self.n - self.n0
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::InvalidConfig(msg));
        if self.n == 0 || self.m == 0 {
            return fail(format!("n and m must be positive (n={}, m={})", self.n, self.m));
        }
        if self.n0 >= self.n {
            return fail(format!("n0 must satisfy 0 <= n0 < n (n0={}, n={})", self.n0, self.n));
        }
        if self.f == 0 {
            return fail("f must be at least 1".into());
        }
        if !(self.k.is_finite() && self.k >= 0.0) {
            return fail(format!("k must be finite and non-negative, got {}", self.k));
        }
        if !(self.lr_d > 0.0 && self.lr_g > 0.0) {
            return fail(format!(
                "learning rates must be positive (lr_d={}, lr_g={})",
                self.lr_d, self.lr_g
            ));
        }
        if !(0.0..1.0).contains(&self.rmsprop_alpha) {
            return fail(format!("rmsprop_alpha must be in [0, 1), got {}", self.rmsprop_alpha));
        }
        if !(self.rmsprop_eps > 0.0) {
            return fail(format!("rmsprop_eps must be positive, got {}", self.rmsprop_eps));
        }
        if self.d_steps_per_g_step == 0 {
            return fail("d_steps_per_g_step must be at least 1".into());
        }
        if self.penalty == PenaltyKind::ZeroGpInterpolation && self.n1() != self.m {
            return fail(format!(
                "zero-gp-interpolation pairs reals with fakes row by row and needs n - n0 == m \
                 (n1={}, m={})",
                self.n1(),
                self.m
            ));
        }
        Ok(())
    }
}

/// Per-parameter running mean-square accumulators.
#[derive(Clone, Debug)]
pub struct RmspropState {
    acc: Vec<Tensor>,
    pub steps: u64,
}

impl RmspropState {
    pub fn new(params: &MlpParams) -> Self {
        Self {
            acc: params
                .param_tensors()
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect(),
            steps: 0,
        }
    }

    pub fn accumulators(&self) -> &[Tensor] {
        &self.acc
    }
}

/// One RMSProp ascent step on a flat parameter slice:
/// acc <- alpha*acc + (1-alpha)*g^2; p <- p + lr * g / sqrt(acc + eps).
pub fn rmsprop_update_slice(
    param: &mut [f64],
    grad: &[f64],
    acc: &mut [f64],
    lr: f64,
    alpha: f64,
    eps: f64,
) {
    debug_assert_eq!(param.len(), grad.len());
    debug_assert_eq!(param.len(), acc.len());
    for ((p, &g), a) in param.iter_mut().zip(grad).zip(acc.iter_mut()) {
        *a = alpha * *a + (1.0 - alpha) * g * g;
        *p += lr * g / (*a + eps).sqrt();
    }
}

/// RMSProp ascent over a whole network.
pub fn rmsprop_update(
    params: &mut MlpParams,
    grads: &[Tensor],
    state: &mut RmspropState,
    lr: f64,
    alpha: f64,
    eps: f64,
) {
    let tensors = params.param_tensors_mut();
    debug_assert_eq!(tensors.len(), grads.len());
    for ((p, g), a) in tensors.into_iter().zip(grads).zip(state.acc.iter_mut()) {
        rmsprop_update_slice(p.data_mut(), g.data(), a.data_mut(), lr, alpha, eps);
    }
    state.steps += 1;
}

/// Indices of the `n0` lowest candidate outputs (the top-N0 of the negated
/// outputs), ties broken towards the lower index. Returned ascending.
pub fn select_far(d0_candidates: &Tensor, n0: usize) -> Result<Vec<usize>, TrainError> {
    let available = d0_candidates.rows();
    if n0 > available {
        return Err(TrainError::SelectCount {
            wanted: n0,
            available,
        });
    }
    let mut order: Vec<usize> = (0..available).collect();
    order.sort_by(|&a, &b| {
        d0_candidates.data()[a]
            .total_cmp(&d0_candidates.data()[b])
            .then(a.cmp(&b))
    });
    let mut picked: Vec<usize> = order[..n0].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// One row of the training trace.
#[derive(Clone, Debug)]
pub struct TraceRow {
    pub iter: usize,
    /// Negated discriminator objective, penalty excluded.
    pub d_loss: f64,
    /// Negated generator objective.
    pub g_loss: f64,
    /// Mean over the fake batch of the generator's received gradient norm.
    pub grad_norm_fake_mean: f64,
    pub snapshot: Option<MetricSnapshot>,
}

/// Everything that evolves during one run.
#[derive(Debug)]
pub struct TrainerState {
    pub generator: MlpParams,
    pub discriminator: MlpParams,
    pub gen_opt: RmspropState,
    pub disc_opt: RmspropState,
    pub rng: ChaCha8Rng,
    pub iteration: usize,
    pub trace: Vec<TraceRow>,
}

impl TrainerState {
    /// Networks from the configured seed (generator at `seed`, discriminator
    /// at `seed + 1`) and the training RNG from a fixed offset of the seed.
    pub fn new(config: &TrainConfig) -> Self {
        let generator = MlpParams::init(MlpSpec::generator(), config.seed);
        let discriminator = MlpParams::init(MlpSpec::discriminator(), config.seed.wrapping_add(1));
        let gen_opt = RmspropState::new(&generator);
        let disc_opt = RmspropState::new(&discriminator);
        Self {
            generator,
            discriminator,
            gen_opt,
            disc_opt,
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x7472_6169_6e5f_726e),
            iteration: 0,
            trace: Vec::new(),
        }
    }
}

/// One discriminator ascent step; returns the reported loss (negated
/// objective, penalty excluded).
pub fn d_step(
    state: &mut TrainerState,
    config: &TrainConfig,
    dataset: &RealDataset,
) -> Result<f64, TrainError> {
    let iteration = state.iteration;
    let n1 = config.n1();
    let reals = sample_real_batch(dataset, n1, &mut state.rng);
    let latents = sample_latent(config.m + config.f * config.n0, &mut state.rng);
    let fakes_all = state.generator.forward(&latents)?;
    let loss_fakes = fakes_all.slice_rows(0, config.m);

    // FAR slice: lowest-output members of the fresh candidate tail, which is
    // disjoint from the M loss fakes.
    let far = if config.n0 > 0 {
        let candidates = fakes_all.slice_rows(config.m, config.m + config.f * config.n0);
        let d0_cand = state.discriminator.forward(&candidates)?;
        let picked = select_far(&d0_cand, config.n0)?;
        Some(candidates.select_rows(&picked))
    } else {
        None
    };

    // Interpolation anchors consume RNG, so build them before taping.
    let interp = if config.penalty == PenaltyKind::ZeroGpInterpolation {
        Some(interpolate_anchors(&reals, &loss_fakes, &mut state.rng)?)
    } else {
        None
    };

    let mut tape = Tape::new();
    let vars = state.discriminator.vars(&mut tape);
    let real_side = match &far {
        Some(far) => reals.concat_rows(far).expect("both are n x 2"),
        None => reals.clone(),
    };
    let anchors = tape.leaf(real_side);
    let d0_anchors = vars.forward(&mut tape, anchors)?;
    let outs = if config.n0 > 0 {
        BatchOutputs {
            d0_real: tape.slice_rows(d0_anchors, 0, n1)?,
            d0_far: Some(tape.slice_rows(d0_anchors, n1, config.n)?),
            d0_fake: {
                let fakes_leaf = tape.leaf(loss_fakes);
                vars.forward(&mut tape, fakes_leaf)?
            },
        }
    } else {
        let fakes_leaf = tape.leaf(loss_fakes);
        BatchOutputs {
            d0_real: d0_anchors,
            d0_far: None,
            d0_fake: vars.forward(&mut tape, fakes_leaf)?,
        }
    };
    let obj_main = d_objective(&mut tape, config.loss, &outs)?;

    let obj = match config.penalty {
        PenaltyKind::None => obj_main,
        PenaltyKind::ZeroGpSample => {
            let gp = zero_gp(&mut tape, &vars, anchors)?;
            let weighted = tape.scalar_mul(config.k, gp);
            tape.sub(obj_main, weighted)?
        }
        PenaltyKind::ZeroGpInterpolation => {
            let anchors = tape.leaf(interp.expect("built above"));
            let gp = zero_gp(&mut tape, &vars, anchors)?;
            let weighted = tape.scalar_mul(config.k, gp);
            tape.sub(obj_main, weighted)?
        }
    };

    let loss = -tape.value(obj_main).scalar_value();
    if !tape.value(obj).scalar_value().is_finite() {
        return Err(TrainError::Diverged { iteration });
    }
    let grads = tape.backward(obj, &vars.param_refs())?;
    rmsprop_update(
        &mut state.discriminator,
        &grads,
        &mut state.disc_opt,
        config.lr_d,
        config.rmsprop_alpha,
        config.rmsprop_eps,
    );
    if !state.discriminator.all_finite() {
        return Err(TrainError::Diverged { iteration });
    }
    Ok(loss)
}

/// One generator ascent step; returns (loss, mean received gradient norm
/// over the fake batch).
pub fn g_step(
    state: &mut TrainerState,
    config: &TrainConfig,
) -> Result<(f64, f64), TrainError> {
    let iteration = state.iteration;
    let latents = sample_latent(config.m, &mut state.rng);
    let mut tape = Tape::new();
    let gen_vars = state.generator.vars(&mut tape);
    let disc_vars = state.discriminator.vars(&mut tape);
    let z = tape.leaf(latents);
    let fake_points = gen_vars.forward(&mut tape, z)?;
    let d0_fake = disc_vars.forward(&mut tape, fake_points)?;
    let obj = g_objective(&mut tape, config.loss, d0_fake)?;

    let loss = -tape.value(obj).scalar_value();
    if !loss.is_finite() {
        return Err(TrainError::Diverged { iteration });
    }
    let mut wrt = gen_vars.param_refs();
    wrt.push(fake_points);
    let mut grads = tape.backward(obj, &wrt)?;
    let point_grads = grads.pop().expect("fake_points gradient requested");

    // Per-point received gradient in the Eq.-6 sense: the objective is a
    // mean over M fakes, so scale the adjoint back up by M.
    let m = config.m as f64;
    let mut norm_sum = 0.0;
    for i in 0..point_grads.rows() {
        let r = point_grads.row(i);
        norm_sum += (r[0] * r[0] + r[1] * r[1]).sqrt() * m;
    }
    let grad_norm_fake_mean = norm_sum / point_grads.rows() as f64;

    rmsprop_update(
        &mut state.generator,
        &grads,
        &mut state.gen_opt,
        config.lr_g,
        config.rmsprop_alpha,
        config.rmsprop_eps,
    );
    if !state.generator.all_finite() {
        return Err(TrainError::Diverged { iteration });
    }
    Ok((loss, grad_norm_fake_mean))
}

/// Full run report: snapshots, the final emitted sample set, and where the
/// run diverged if it did.
#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub config: TrainConfig,
    pub snapshots: Vec<MetricSnapshot>,
    /// 10^4 samples from the final generator (empty if it diverged).
    pub final_samples: Tensor,
    pub diverged_at: Option<usize>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub state: TrainerState,
    pub report: ExperimentReport,
}

/// RNG for evaluation sampling, decoupled from the training stream so
/// metric snapshots never perturb the trajectory.
fn eval_rng(seed: u64, iter: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0xe7a1_5eed ^ (iter as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Draws evaluation samples from the current generator.
pub fn sample_generator(generator: &MlpParams, count: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let latents = sample_latent(count, rng);
    generator.forward(&latents).expect("generator accepts 2-D latents")
}

fn take_snapshot(
    state: &TrainerState,
    config: &TrainConfig,
    dataset: &RealDataset,
    iter: usize,
    d_loss: f64,
    g_loss: f64,
) -> MetricSnapshot {
    let mut rng = eval_rng(config.seed, iter);
    let fakes = sample_generator(&state.generator, EVAL_SAMPLES, &mut rng);
    let (modes_covered, hq_ratio) = if dataset.mode_centers().is_empty() {
        (0, 0.0)
    } else {
        let report = mode_coverage(&fakes, dataset.mode_centers(), dataset.mode_std(), 3.0, 20)
            .expect("mode centers present");
        (report.covered, report.hq_ratio)
    };
    let d0_real = state
        .discriminator
        .forward(dataset.points())
        .expect("dataset points are 2-D");
    let d0_fake = state.discriminator.forward(&fakes).expect("samples are 2-D");
    let stats = close_pairs(
        dataset.points(),
        &fakes,
        d0_real.data(),
        d0_fake.data(),
        &ClosePairConfig::default(),
    )
    .expect("aligned by construction");
    let mut d_hist: Vec<f64> = state.trace.iter().map(|r| r.d_loss).collect();
    let mut g_hist: Vec<f64> = state.trace.iter().map(|r| r.g_loss).collect();
    d_hist.push(d_loss);
    g_hist.push(g_loss);
    let deviation = loss_deviation(&d_hist, &g_hist);
    MetricSnapshot {
        iter,
        modes_covered,
        hq_ratio,
        pairs: stats.pairs,
        sources: stats.sources,
        max_fakes_per_source: stats.max_fakes_per_source,
        surrogate_max: stats.surrogate_max(),
        d_loss,
        g_loss,
        collapse_flag: deviation.collapse_flag,
    }
}

/// Runs the full training loop. A divergence stops the loop early and is
/// reported in the output rather than discarding the partial trace.
pub fn train(config: &TrainConfig, dataset: &RealDataset) -> Result<RunOutput, TrainError> {
    config.validate()?;
    let mut state = TrainerState::new(config);
    let mut diverged_at = None;

    'outer: for iter in 1..=config.iterations {
        state.iteration = iter;
        let mut d_loss = f64::NAN;
        for _ in 0..config.d_steps_per_g_step {
            match d_step(&mut state, config, dataset) {
                Ok(loss) => d_loss = loss,
                Err(TrainError::Diverged { iteration }) => {
                    diverged_at = Some(iteration);
                    break 'outer;
                }
                Err(e) => return Err(e),
            }
        }
        let (g_loss, grad_norm_fake_mean) = match g_step(&mut state, config) {
            Ok(v) => v,
            Err(TrainError::Diverged { iteration }) => {
                diverged_at = Some(iteration);
                break 'outer;
            }
            Err(e) => return Err(e),
        };
        let snapshot = if iter % SNAPSHOT_EVERY == 0 || iter == config.iterations {
            Some(take_snapshot(&state, config, dataset, iter, d_loss, g_loss))
        } else {
            None
        };
        state.trace.push(TraceRow {
            iter,
            d_loss,
            g_loss,
            grad_norm_fake_mean,
            snapshot,
        });
    }

    let final_samples = if diverged_at.is_none() || state.generator.all_finite() {
        let mut rng = eval_rng(config.seed, usize::MAX);
        sample_generator(&state.generator, EVAL_SAMPLES, &mut rng)
    } else {
        Tensor::zeros(0, 2)
    };
    let report = ExperimentReport {
        config: config.clone(),
        snapshots: state
            .trace
            .iter()
            .filter_map(|r| r.snapshot.clone())
            .collect(),
        final_samples,
        diverged_at,
    };
    Ok(RunOutput { state, report })
}

/// Trace CSV with one row per iteration; the mode columns are filled only
/// on snapshot iterations.
pub fn trace_to_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("iter,d_loss,g_loss,grad_norm_fake_mean,modes_covered,hq_ratio\n");
    for row in trace {
        let (modes, hq) = match &row.snapshot {
            Some(s) => (s.modes_covered.to_string(), s.hq_ratio.to_string()),
            None => (String::new(), String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.iter, row.d_loss, row.g_loss, row.grad_norm_fake_mean, modes, hq
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_real, DatasetKind, DatasetSpec};

    fn tiny_dataset(seed: u64) -> RealDataset {
        generate_real(&DatasetSpec {
            kind: DatasetKind::single_gaussian([0.0, 0.0], 1.0),
            n_real: 32,
            seed,
        })
        .unwrap()
    }

    fn tiny_config(iterations: usize) -> TrainConfig {
        TrainConfig {
            n: 8,
            m: 8,
            n0: 2,
            f: 4,
            k: 10.0,
            loss: LossKind::Nsgan,
            penalty: PenaltyKind::ZeroGpSample,
            lr_d: 0.003,
            lr_g: 0.003,
            rmsprop_alpha: 0.99,
            rmsprop_eps: 1e-8,
            d_steps_per_g_step: 1,
            iterations,
            seed: 7,
        }
    }

    #[test]
    fn select_far_picks_two_smallest() {
        let d0 = Tensor::from_raw(4, 1, vec![0.9, 0.1, 0.5, 0.3]);
        assert_eq!(select_far(&d0, 2).unwrap(), vec![1, 3]);
    }

    #[test]
    fn select_far_breaks_ties_by_lower_index() {
        let d0 = Tensor::from_raw(4, 1, vec![0.5, 0.5, 0.5, 0.5]);
        assert_eq!(select_far(&d0, 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn select_far_degenerate_takes_all() {
        let d0 = Tensor::from_raw(3, 1, vec![0.5, -0.5, 0.0]);
        assert_eq!(select_far(&d0, 3).unwrap(), vec![0, 1, 2]);
        assert!(matches!(
            select_far(&d0, 4),
            Err(TrainError::SelectCount { wanted: 4, available: 3 })
        ));
    }

    #[test]
    fn rmsprop_zero_gradient_leaves_params_and_decays_accumulator() {
        let mut p = vec![1.0, -2.0];
        let mut acc = vec![0.5, 0.25];
        rmsprop_update_slice(&mut p, &[0.0, 0.0], &mut acc, 0.1, 0.9, 1e-8);
        assert_eq!(p, vec![1.0, -2.0]);
        assert!((acc[0] - 0.45).abs() < 1e-15);
        assert!((acc[1] - 0.225).abs() < 1e-15);
    }

    #[test]
    fn rmsprop_first_step_matches_closed_form() {
        let (lr, alpha, eps, g) = (0.01, 0.99, 1e-8, 3.0);
        let mut p = vec![0.0];
        let mut acc = vec![0.0];
        rmsprop_update_slice(&mut p, &[g], &mut acc, lr, alpha, eps);
        let expect = lr * g / ((1.0 - alpha) * g * g + eps).sqrt();
        assert!((p[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn rmsprop_ascends_quadratic_to_its_maximum() {
        // Target -(x-3)^2, gradient -2(x-3).
        let (lr, alpha, eps) = (0.01, 0.99, 1e-8);
        let mut p = vec![0.0];
        let mut acc = vec![0.0];
        for _ in 0..2_000 {
            let g = -2.0 * (p[0] - 3.0);
            rmsprop_update_slice(&mut p, &[g], &mut acc, lr, alpha, eps);
        }
        assert!((p[0] - 3.0).abs() < 0.05, "x = {}", p[0]);
    }

    #[test]
    fn zero_iterations_returns_initial_params_and_empty_trace() {
        let ds = tiny_dataset(1);
        let cfg = tiny_config(0);
        let out = train(&cfg, &ds).unwrap();
        assert!(out.state.trace.is_empty());
        assert_eq!(out.state.generator, MlpParams::init(MlpSpec::generator(), cfg.seed));
        assert!(out.report.diverged_at.is_none());
    }

    #[test]
    fn training_is_bit_deterministic() {
        let ds = tiny_dataset(2);
        let cfg = tiny_config(100);
        let a = train(&cfg, &ds).unwrap();
        let b = train(&cfg, &ds).unwrap();
        assert_eq!(a.state.discriminator, b.state.discriminator);
        assert_eq!(a.state.generator, b.state.generator);
        let (ta, tb) = (trace_to_csv(&a.state.trace), trace_to_csv(&b.state.trace));
        assert_eq!(ta, tb);
    }

    #[test]
    fn generator_moves_under_nondegenerate_discriminator() {
        let ds = tiny_dataset(3);
        let cfg = tiny_config(1);
        let before = MlpParams::init(MlpSpec::generator(), cfg.seed);
        let out = train(&cfg, &ds).unwrap();
        assert_ne!(out.state.generator, before);
    }

    #[test]
    fn g_loss_is_log_two_against_zero_discriminator() {
        let cfg = tiny_config(1);
        let mut state = TrainerState::new(&cfg);
        state.discriminator = MlpParams::zeros(MlpSpec::discriminator());
        state.iteration = 1;
        let (g_loss, grad_norm) = g_step(&mut state, &cfg).unwrap();
        assert_eq!(g_loss, -(0.5f64.ln()));
        assert_eq!(grad_norm, 0.0);
    }

    #[test]
    fn huge_learning_rate_reports_divergence_with_iteration() {
        let ds = tiny_dataset(4);
        let mut cfg = tiny_config(50);
        cfg.lr_d = 1e308;
        let out = train(&cfg, &ds).unwrap();
        assert_eq!(out.report.diverged_at, Some(1));
        assert!(out.state.trace.is_empty());
    }

    #[test]
    fn invalid_configs_are_rejected_with_field_diagnostics() {
        let mut cfg = tiny_config(1);
        cfg.n0 = cfg.n;
        let err = train(&cfg, &tiny_dataset(5)).unwrap_err();
        assert!(err.to_string().contains("n0"), "{err}");

        let mut cfg = tiny_config(1);
        cfg.penalty = PenaltyKind::ZeroGpInterpolation;
        cfg.n0 = 2; // n1 = 6 != m = 8
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("interpolation"), "{err}");
    }

    #[test]
    fn trace_csv_shape_and_snapshot_columns() {
        let ds = tiny_dataset(6);
        let cfg = tiny_config(3);
        let out = train(&cfg, &ds).unwrap();
        let csv = trace_to_csv(&out.state.trace);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "iter,d_loss,g_loss,grad_norm_fake_mean,modes_covered,hq_ratio");
        assert_eq!(lines.len(), 4);
        // Final iteration always snapshots; earlier ones are blank.
        assert!(lines[1].ends_with(",,"));
        assert!(!lines[3].ends_with(",,"));
    }

    #[test]
    fn far_candidates_and_loss_fakes_are_disjoint_draws() {
        // The latent batch has M + f*N0 rows; selection only ever touches
        // the tail. Verified by the sampling arithmetic in d_step: with
        // n0 = 0 the tail is empty and d_step still works.
        let ds = tiny_dataset(7);
        let mut cfg = tiny_config(2);
        cfg.n0 = 0;
        cfg.penalty = PenaltyKind::None;
        assert!(train(&cfg, &ds).unwrap().report.diverged_at.is_none());
    }
}
