//! Numerical verification of the propositions: closed-form stationarity
//! solvers for the penalized local objectives, an independent brute-force
//! maximization oracle, the small constructed discriminator, and grid
//! sweeps with monotonicity verdicts.
//!
//! The local objective for one overfitting source with m0 close fakes is
//!
//!   f(xi0, xi1..xim0) = ln sig(xi0) + (n/m) sum ln sig(-xii)
//!                       - (n k / m0) sum (xi0 - xii)^2
//!
//! and the fake-as-real variant adds n*lambda * sum ln sig(xii). Both are
//! strictly concave, so the maximizer is unique and the symmetric solution
//! the solvers compute is the one the oracle must find.

use crate::numerics::{ln_sigmoid, logit, sigmoid};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("invalid proposition problem: {0}")]
    InvalidProblem(String),
    #[error("no sign change on the scanned interval [{lo}, {hi}]")]
    BracketNotFound { lo: f64, hi: f64 },
    #[error("oracle failed to converge; best gradient infinity-norm {best_grad_norm:.3e}")]
    NonConvergence { best_grad_norm: f64 },
    #[error("oracle maximizer is not symmetric; coordinate spread {spread:.3e}")]
    SymmetryViolation { spread: f64 },
    #[error("point has norm {norm} but must be unit length")]
    NotUnitNorm { norm: f64 },
    #[error("construction degenerate: max off-anchor inner product {l} is too close to 1")]
    Degenerate { l: f64 },
}

/// The scalars of the local close-pair analysis: n reals, m fakes, m0 close
/// fakes at the source, penalty weight k, fake-as-real weight lambda.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PropositionProblem {
    pub n: usize,
    pub m: usize,
    pub m0: usize,
    pub k: f64,
    pub lambda: f64,
}

impl PropositionProblem {
    pub fn new(n: usize, m: usize, m0: usize, k: f64, lambda: f64) -> Result<Self, TheoryError> {
        let p = Self { n, m, m0, k, lambda };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<(), TheoryError> {
        if self.n == 0 || self.m == 0 || self.m0 == 0 {
            return Err(TheoryError::InvalidProblem(
                "n, m and m0 must all be at least 1".into(),
            ));
        }
        if self.m0 > self.m {
            return Err(TheoryError::InvalidProblem(format!(
                "m0 = {} exceeds m = {}",
                self.m0, self.m
            )));
        }
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(TheoryError::InvalidProblem(format!(
                "k must be finite and positive, got {}",
                self.k
            )));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(TheoryError::InvalidProblem(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    fn nf(&self) -> f64 {
        self.n as f64
    }
    fn mf(&self) -> f64 {
        self.m as f64
    }
    fn m0f(&self) -> f64 {
        self.m0 as f64
    }

    /// The objective value at (xi0, xi1..) including the lambda term.
    pub fn objective(&self, xi: &[f64]) -> f64 {
        let (n, m, m0) = (self.nf(), self.mf(), self.m0f());
        let xi0 = xi[0];
        let mut v = ln_sigmoid(xi0);
        for &x in &xi[1..] {
            v += (n / m) * ln_sigmoid(-x);
            v -= (n * self.k / m0) * (xi0 - x) * (xi0 - x);
            v += n * self.lambda * ln_sigmoid(x);
        }
        v
    }

    /// Gradient of [`Self::objective`].
    pub fn gradient(&self, xi: &[f64], out: &mut [f64]) {
        let (n, m, m0) = (self.nf(), self.mf(), self.m0f());
        let xi0 = xi[0];
        let mut g0 = sigmoid(-xi0);
        for (i, &x) in xi[1..].iter().enumerate() {
            let coupling = 2.0 * n * self.k / m0 * (xi0 - x);
            g0 -= coupling;
            out[i + 1] = -(n / m) * sigmoid(x) + coupling + n * self.lambda * sigmoid(-x);
        }
        out[0] = g0;
    }
}

/// Residuals of the stationarity system at a reported solution.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StationarityResiduals {
    /// d/dxi0 of the objective (with the symmetric substitution).
    pub d_xi0: f64,
    /// d/dxii of the objective at the common xi*.
    pub d_xi: f64,
    /// The identity xi0 - xi = sigma(-xi0) / (2nk).
    pub cross: f64,
}

impl StationarityResiduals {
    pub fn max_abs(&self) -> f64 {
        self.d_xi0.abs().max(self.d_xi.abs()).max(self.cross.abs())
    }
}

/// Optimal discriminator outputs at the overfitting source.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SolveResult {
    /// xi0*: output at the real point.
    pub xi0: f64,
    /// xi*: common output at the m0 close fakes.
    pub xi: f64,
    /// sigma(-xi*) (xi0* - xi*), the generator-gradient factor.
    pub indicator: f64,
    pub residuals: StationarityResiduals,
}

fn residuals_at(prob: &PropositionProblem, xi0: f64, xi: f64) -> StationarityResiduals {
    let (n, m, m0) = (prob.nf(), prob.mf(), prob.m0f());
    let gap = xi0 - xi;
    StationarityResiduals {
        d_xi0: sigmoid(-xi0) - 2.0 * n * prob.k * gap,
        d_xi: -(n / m) * sigmoid(xi) + 2.0 * n * prob.k / m0 * gap
            + n * prob.lambda * sigmoid(-xi),
        cross: gap - sigmoid(-xi0) / (2.0 * n * prob.k),
    }
}

fn result_at(prob: &PropositionProblem, xi0: f64, xi: f64) -> SolveResult {
    SolveResult {
        xi0,
        xi,
        indicator: sigmoid(-xi) * (xi0 - xi),
        residuals: residuals_at(prob, xi0, xi),
    }
}

/// Search interval for xi0. The upper end is far past where sigma saturates
/// at f64 precision; the lower end is the smallest value keeping the log
/// argument of the symmetric solution positive.
fn xi0_bracket(prob: &PropositionProblem) -> (f64, f64) {
    let c = prob.nf() * prob.m0f() / prob.mf();
    let lo = if c < 1.0 { -logit(c) + 1e-9 } else { -40.0 };
    (lo, 40.0)
}

/// Bisection to floating-point convergence on a monotone increasing
/// function with a verified sign change.
fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> Result<f64, TheoryError> {
    let (flo, fhi) = (f(lo), f(hi));
    if !(flo < 0.0 && fhi > 0.0) {
        return Err(TheoryError::BracketNotFound { lo, hi });
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(if f(lo).abs() <= f(hi).abs() { lo } else { hi });
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// xi* as a function of xi0 under the lambda = 0 stationarity system:
/// xi* = -ln(n m0 / (m sigma(-xi0)) - 1).
fn xi_star_prop2(prob: &PropositionProblem, xi0: f64) -> f64 {
    let c = prob.nf() * prob.m0f() / prob.mf();
    -(c / sigmoid(-xi0) - 1.0).ln()
}

/// Difference-penalty optimum (lambda = 0): bisection on the stationarity
/// equation in the scaled form (xi0 - xi*(xi0)) - sigma(-xi0)/(2nk) = 0,
/// which is the raw equation divided by -2nk and so shares its root while
/// staying well conditioned for large k.
pub fn solve_prop2(prob: &PropositionProblem) -> Result<SolveResult, TheoryError> {
    prob.validate()?;
    let p2 = PropositionProblem {
        lambda: 0.0,
        ..*prob
    };
    let (lo, hi) = xi0_bracket(&p2);
    let scaled =
        |xi0: f64| (xi0 - xi_star_prop2(&p2, xi0)) - sigmoid(-xi0) / (2.0 * p2.nf() * p2.k);
    let xi0 = bisect(lo, hi, scaled)?;
    let xi = xi_star_prop2(&p2, xi0);
    Ok(result_at(&p2, xi0, xi))
}

/// lambda that makes xi0 stationary for the fake-as-real objective, from
/// the two stationarity equations with xi eliminated via
/// xi = xi0 - sigma(-xi0)/(2nk). Strictly increasing in xi0 on the bracket.
pub fn lambda_of_xi0(prob: &PropositionProblem, xi0: f64) -> f64 {
    let (n, m, m0) = (prob.nf(), prob.mf(), prob.m0f());
    let s0 = sigmoid(-xi0);
    let a = n * m0 / (m * s0) - 1.0;
    let xi = xi0 - s0 / (2.0 * n * prob.k);
    // a * e^xi in log space so large xi0 cannot overflow prematurely.
    let ae = (xi + a.ln()).exp();
    s0 / (n * m0) * (ae - 1.0)
}

/// Fake-as-real optimum: bisection on lambda(xi0) = lambda, then xi from
/// the cross identity. At lambda = 0 this lands on the same root as
/// [`solve_prop2`].
pub fn solve_prop3(prob: &PropositionProblem) -> Result<SolveResult, TheoryError> {
    prob.validate()?;
    let (lo, hi) = xi0_bracket(prob);
    let xi0 = bisect(lo, hi, |x| lambda_of_xi0(prob, x) - prob.lambda)?;
    let xi = xi0 - sigmoid(-xi0) / (2.0 * prob.nf() * prob.k);
    Ok(result_at(prob, xi0, xi))
}

/// Oracle scale limit: beyond this the brute-force search is pointless.
pub const ORACLE_MAX_M0: usize = 16;
const ORACLE_STARTS: usize = 16;
const ORACLE_MAX_STEPS: usize = 100_000;
const ORACLE_GRAD_TOL: f64 = 1e-10;
/// Outside this box sigma is flat to machine precision; no maximizer can
/// hide beyond it.
const ORACLE_START_BOX: f64 = 20.0;

fn inf_norm(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0, |a, &x| a.max(x.abs()))
}

/// Multi-start gradient ascent over all m0 + 1 coordinates, with
/// Barzilai-Borwein step adaptation. Symmetry of the fake coordinates is
/// checked after the fact, never assumed.
pub fn brute_force_max(prob: &PropositionProblem) -> Result<SolveResult, TheoryError> {
    prob.validate()?;
    if prob.m0 > ORACLE_MAX_M0 {
        return Err(TheoryError::InvalidProblem(format!(
            "oracle supports m0 <= {ORACLE_MAX_M0}, got {}",
            prob.m0
        )));
    }
    let dims = prob.m0 + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(0x0bac1e);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut best_grad_norm = f64::INFINITY;

    for _ in 0..ORACLE_STARTS {
        let mut x: Vec<f64> = (0..dims)
            .map(|_| rng.random_range(-ORACLE_START_BOX..ORACLE_START_BOX))
            .collect();
        let mut g = vec![0.0; dims];
        prob.gradient(&x, &mut g);
        let mut step = 1e-3;
        let mut prev_x: Option<Vec<f64>> = None;
        let mut prev_g: Option<Vec<f64>> = None;
        let mut converged = false;

        for _ in 0..ORACLE_MAX_STEPS {
            if inf_norm(&g) <= ORACLE_GRAD_TOL {
                converged = true;
                break;
            }
            // Barzilai-Borwein step from the last accepted move; s.y < 0
            // for a concave objective, so the ascent step is -s.s/s.y.
            if let (Some(px), Some(pg)) = (&prev_x, &prev_g) {
                let mut ss = 0.0;
                let mut sy = 0.0;
                for i in 0..dims {
                    let s = x[i] - px[i];
                    let y = g[i] - pg[i];
                    ss += s * s;
                    sy += s * y;
                }
                if sy < 0.0 && ss > 0.0 {
                    step = (-ss / sy).clamp(1e-14, 1e3);
                }
            }
            let fx = prob.objective(&x);
            let mut local = step;
            let mut moved = false;
            while local >= 1e-16 {
                let trial: Vec<f64> =
                    x.iter().zip(&g).map(|(&xi, &gi)| xi + local * gi).collect();
                let ft = prob.objective(&trial);
                // Accept any finite move that does not lose ground badly;
                // BB steps are allowed to be slightly non-monotone.
                if ft.is_finite() && ft >= fx - 1e-8 * (1.0 + fx.abs()) {
                    prev_x = Some(std::mem::replace(&mut x, trial));
                    prev_g = Some(std::mem::take(&mut g));
                    g = vec![0.0; dims];
                    prob.gradient(&x, &mut g);
                    moved = true;
                    break;
                }
                local *= 0.5;
            }
            if !moved {
                break;
            }
        }

        let gnorm = inf_norm(&g);
        if gnorm < best_grad_norm {
            best_grad_norm = gnorm;
        }
        if converged {
            let fx = prob.objective(&x);
            if best.as_ref().is_none_or(|(bf, _)| fx > *bf) {
                best = Some((fx, x));
            }
        }
    }

    let Some((_, x)) = best else {
        return Err(TheoryError::NonConvergence { best_grad_norm });
    };
    let fakes = &x[1..];
    let spread = fakes.iter().fold(0.0f64, |acc, &a| {
        fakes.iter().fold(acc, |acc, &b| acc.max((a - b).abs()))
    });
    if spread > 1e-6 {
        return Err(TheoryError::SymmetryViolation { spread });
    }
    let xi = fakes.iter().sum::<f64>() / fakes.len() as f64;
    Ok(result_at(prob, x[0], xi))
}

// ---- constructed discriminator ----

/// The two-hidden-layer discriminator that separates one close pair on a
/// unit-norm dataset: W1 rows are the anchors, W2 is the fixed contrast
/// matrix, W3 mixes to 1/2 +- eps/2.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConstructedDiscriminator {
    pub w1: [[f64; 2]; 2],
    pub w2: [[f64; 2]; 2],
    pub w3: [f64; 2],
    pub b: [f64; 2],
    pub k1: f64,
    pub k2: f64,
    pub eps: f64,
}

impl ConstructedDiscriminator {
    /// D(v) = W3^T sigma(k2 W2 sigma(k1 (W1 v - b))).
    pub fn evaluate(&self, v: [f64; 2]) -> f64 {
        let a0 = self.w1[0][0] * v[0] + self.w1[0][1] * v[1] - self.b[0];
        let a1 = self.w1[1][0] * v[0] + self.w1[1][1] * v[1] - self.b[1];
        let h0 = sigmoid(self.k1 * a0);
        let h1 = sigmoid(self.k1 * a1);
        let c0 = self.w2[0][0] * h0 + self.w2[0][1] * h1;
        let c1 = self.w2[1][0] * h0 + self.w2[1][1] * h1;
        self.w3[0] * sigmoid(self.k2 * c0) + self.w3[1] * sigmoid(self.k2 * c1)
    }
}

fn check_unit(v: [f64; 2]) -> Result<(), TheoryError> {
    let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(TheoryError::NotUnitNorm { norm });
    }
    Ok(())
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Builds the separating discriminator for the close pair (x0, y0) against
/// the rest of the dataset. Offsets use the midpoint rule: each bias sits
/// halfway between the anchor's self-response (1) and its largest inner
/// product with any other point.
pub fn build_constructed(
    x0: [f64; 2],
    y0: [f64; 2],
    others: &[[f64; 2]],
    eps: f64,
    k1: f64,
    k2: f64,
) -> Result<ConstructedDiscriminator, TheoryError> {
    check_unit(x0)?;
    check_unit(y0)?;
    for &v in others {
        check_unit(v)?;
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(TheoryError::InvalidProblem(format!(
            "eps must be in [0, 1), got {eps}"
        )));
    }
    let l1 = others
        .iter()
        .map(|&v| dot(x0, v))
        .fold(dot(x0, y0), f64::max);
    let l2 = others
        .iter()
        .map(|&v| dot(y0, v))
        .fold(dot(y0, x0), f64::max);
    let l = l1.max(l2);
    if l >= 1.0 - 1e-9 {
        return Err(TheoryError::Degenerate { l });
    }
    Ok(ConstructedDiscriminator {
        w1: [x0, y0],
        w2: [[1.0, -1.0], [-1.0, 1.0]],
        w3: [0.5 + eps / 2.0, 0.5 - eps / 2.0],
        b: [(1.0 + l1) / 2.0, (1.0 + l2) / 2.0],
        k1,
        k2,
        eps,
    })
}

/// Unit-norm 2-D dataset with designated anchors: reals[0] is x0 and
/// fakes[0] is y0.
#[derive(Clone, Debug)]
pub struct UnitDataset {
    pub reals: Vec<[f64; 2]>,
    pub fakes: Vec<[f64; 2]>,
}

impl UnitDataset {
    /// Every dataset point except the two anchors.
    pub fn others(&self) -> Vec<[f64; 2]> {
        self.reals[1..]
            .iter()
            .chain(&self.fakes[1..])
            .copied()
            .collect()
    }
}

/// Seeded unit-circle dataset built from a jittered equal-angle lattice.
/// The jitter is capped so every pair keeps an angular gap of at least
/// ~0.8 of the lattice spacing, which the finite-sharpness construction
/// needs to hit its output tolerances.
pub fn unit_circle_dataset(n: usize, m: usize, seed: u64) -> UnitDataset {
    use std::f64::consts::PI;
    let total = n + m;
    let spacing = 2.0 * PI / total as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<[f64; 2]> = (0..total)
        .map(|i| {
            let jitter: f64 = rng.random_range(-0.102..0.102);
            let a = (i as f64 + jitter) * spacing;
            [a.cos(), a.sin()]
        })
        .collect();
    // Seeded Fisher-Yates so the real/fake split is not angle-ordered.
    for i in (1..total).rev() {
        let j = rng.random_range(0..=i);
        points.swap(i, j);
    }
    let fakes = points.split_off(n);
    UnitDataset {
        reals: points,
        fakes,
    }
}

/// Output deviations of the constructed discriminator from its targets
/// (1/2 + eps/2 at x0, 1/2 - eps/2 at y0, 1/2 elsewhere).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ConstructionDeviations {
    pub at_x0: f64,
    pub at_y0: f64,
    pub max_elsewhere: f64,
}

impl ConstructionDeviations {
    pub fn max_abs(&self) -> f64 {
        self.at_x0.max(self.at_y0).max(self.max_elsewhere)
    }
}

pub fn construction_deviations(
    d: &ConstructedDiscriminator,
    ds: &UnitDataset,
) -> ConstructionDeviations {
    let mut max_elsewhere = 0.0f64;
    for &v in ds.reals.iter().skip(1).chain(ds.fakes.iter().skip(1)) {
        max_elsewhere = max_elsewhere.max((d.evaluate(v) - 0.5).abs());
    }
    ConstructionDeviations {
        at_x0: (d.evaluate(ds.reals[0]) - (0.5 + d.eps / 2.0)).abs(),
        at_y0: (d.evaluate(ds.fakes[0]) - (0.5 - d.eps / 2.0)).abs(),
        max_elsewhere,
    }
}

/// Empirical discriminator objective of the constructed network on the
/// dataset: mean ln D over reals plus mean ln(1 - D) over fakes.
pub fn constructed_objective(d: &ConstructedDiscriminator, ds: &UnitDataset) -> f64 {
    let real_term: f64 =
        ds.reals.iter().map(|&v| d.evaluate(v).ln()).sum::<f64>() / ds.reals.len() as f64;
    let fake_term: f64 = ds
        .fakes
        .iter()
        .map(|&v| (1.0 - d.evaluate(v)).ln())
        .sum::<f64>()
        / ds.fakes.len() as f64;
    real_term + fake_term
}

// ---- sweeps ----

/// Grid of proposition problems.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub n: Vec<usize>,
    pub m: Vec<usize>,
    pub m0: Vec<usize>,
    pub k: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            n: vec![64],
            m: vec![64],
            m0: vec![1, 2, 4, 8, 16],
            k: vec![0.1, 1.0, 10.0, 100.0],
            lambda: vec![0.0, 0.1, 1.0, 10.0, 1e6],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum CellStatus {
    Ok,
    Failed(String),
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub n: usize,
    pub m: usize,
    pub m0: usize,
    pub k: f64,
    pub lambda: f64,
    pub solver: Option<SolveResult>,
    pub oracle: Option<SolveResult>,
    /// Max coordinate difference between solver and oracle, when both ran.
    pub agreement: Option<f64>,
    pub status: CellStatus,
}

#[derive(Clone, Debug)]
pub struct Verdict {
    pub claim: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub verdicts: Vec<Verdict>,
}

impl SweepReport {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
            && self.rows.iter().all(|r| matches!(r.status, CellStatus::Ok))
    }
}

/// Solver-oracle agreement tolerance per coordinate.
pub const SWEEP_AGREEMENT_TOL: f64 = 1e-6;
/// Stationarity residual tolerance at reported solutions.
pub const SWEEP_RESIDUAL_TOL: f64 = 1e-9;

/// Runs the solvers (and optionally the oracle) over the grid, marking
/// failed cells without aborting, then evaluates the monotonicity claims:
/// the indicator decreases in k, increases in m0, and decreases in lambda.
pub fn run_sweep(grid: &SweepGrid, with_oracle: bool) -> SweepReport {
    let mut rows = Vec::new();
    for &n in &grid.n {
        for &m in &grid.m {
            for &m0 in &grid.m0 {
                for &k in &grid.k {
                    for &lambda in &grid.lambda {
                        rows.push(run_cell(n, m, m0, k, lambda, with_oracle));
                    }
                }
            }
        }
    }
    let verdicts = monotonicity_verdicts(&rows);
    SweepReport { rows, verdicts }
}

fn run_cell(n: usize, m: usize, m0: usize, k: f64, lambda: f64, with_oracle: bool) -> SweepRow {
    let mut row = SweepRow {
        n,
        m,
        m0,
        k,
        lambda,
        solver: None,
        oracle: None,
        agreement: None,
        status: CellStatus::Ok,
    };
    let prob = match PropositionProblem::new(n, m, m0, k, lambda) {
        Ok(p) => p,
        Err(e) => {
            row.status = CellStatus::Failed(e.to_string());
            return row;
        }
    };
    let solved = if lambda == 0.0 {
        solve_prop2(&prob)
    } else {
        solve_prop3(&prob)
    };
    match solved {
        Ok(s) => {
            if s.residuals.max_abs() > SWEEP_RESIDUAL_TOL {
                row.status = CellStatus::Failed(format!(
                    "stationarity residual {:.3e} exceeds {SWEEP_RESIDUAL_TOL:.0e}",
                    s.residuals.max_abs()
                ));
            }
            row.solver = Some(s);
        }
        Err(e) => {
            row.status = CellStatus::Failed(format!("solver: {e}"));
            return row;
        }
    }
    if with_oracle && m0 <= ORACLE_MAX_M0 {
        match brute_force_max(&prob) {
            Ok(o) => {
                if let Some(s) = &row.solver {
                    let diff = (s.xi0 - o.xi0).abs().max((s.xi - o.xi).abs());
                    row.agreement = Some(diff);
                    if diff > SWEEP_AGREEMENT_TOL {
                        row.status = CellStatus::Failed(format!(
                            "solver-oracle disagreement {diff:.3e} exceeds {SWEEP_AGREEMENT_TOL:.0e}"
                        ));
                    }
                }
                row.oracle = Some(o);
            }
            Err(e) => {
                row.status = CellStatus::Failed(format!("oracle: {e}"));
            }
        }
    }
    row
}

fn monotonicity_verdicts(rows: &[SweepRow]) -> Vec<Verdict> {
    let mut verdicts = Vec::new();
    let indicator = |r: &SweepRow| r.solver.as_ref().map(|s| s.indicator);

    // Consecutive-pair comparisons along one axis with every other axis fixed.
    let mut check = |axis: &str,
                     key: &dyn Fn(&SweepRow) -> (usize, usize, usize, u64, u64),
                     coord: &dyn Fn(&SweepRow) -> f64,
                     increasing: bool| {
        use std::collections::BTreeMap;
        let mut groups: BTreeMap<_, Vec<&SweepRow>> = BTreeMap::new();
        for r in rows {
            groups.entry(key(r)).or_default().push(r);
        }
        for (_, mut group) in groups {
            if group.len() < 2 {
                continue;
            }
            group.sort_by(|a, b| coord(a).total_cmp(&coord(b)));
            for pair in group.windows(2) {
                let (a, b) = (pair[0], pair[1]);
                let (Some(ia), Some(ib)) = (indicator(a), indicator(b)) else {
                    verdicts.push(Verdict {
                        claim: format!("indicator vs {axis}"),
                        pass: false,
                        detail: format!(
                            "cell (n={}, m={}, m0={}, k={}, lambda={}) unsolved",
                            a.n, a.m, a.m0, a.k, a.lambda
                        ),
                    });
                    continue;
                };
                let pass = if increasing { ib > ia } else { ib < ia };
                verdicts.push(Verdict {
                    claim: format!(
                        "indicator strictly {} in {axis}",
                        if increasing { "increasing" } else { "decreasing" }
                    ),
                    pass,
                    detail: format!(
                        "n={} m={} m0={} k={} lambda={}: {axis} {} -> {}: {:.6e} vs {:.6e}",
                        b.n, b.m, b.m0, b.k, b.lambda, coord(a), coord(b), ia, ib
                    ),
                });
            }
        }
    };

    check(
        "m0",
        &|r| (r.n, r.m, 0, r.k.to_bits(), r.lambda.to_bits()),
        &|r| r.m0 as f64,
        true,
    );
    check(
        "k",
        &|r| (r.n, r.m, r.m0, 0, r.lambda.to_bits()),
        &|r| r.k,
        false,
    );
    check(
        "lambda",
        &|r| (r.n, r.m, r.m0, r.k.to_bits(), 0),
        &|r| r.lambda,
        false,
    );
    verdicts
}

/// Sweep CSV: n,m,m0,k,lambda,xi0,xi,indicator,residual,status.
pub fn sweep_to_csv(report: &SweepReport) -> String {
    let mut out = String::from("n,m,m0,k,lambda,xi0,xi,indicator,residual,status\n");
    for r in &report.rows {
        let (xi0, xi, ind, res) = match &r.solver {
            Some(s) => (
                s.xi0.to_string(),
                s.xi.to_string(),
                s.indicator.to_string(),
                s.residuals.max_abs().to_string(),
            ),
            None => Default::default(),
        };
        let status = match &r.status {
            CellStatus::Ok => "ok".to_string(),
            CellStatus::Failed(msg) => format!("failed: {}", msg.replace(',', ";")),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.n, r.m, r.m0, r.k, r.lambda, xi0, xi, ind, res, status
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prob(n: usize, m: usize, m0: usize, k: f64, lambda: f64) -> PropositionProblem {
        PropositionProblem::new(n, m, m0, k, lambda).unwrap()
    }

    #[test]
    fn prop2_satisfies_cross_identity() {
        let s = solve_prop2(&prob(64, 64, 4, 10.0, 0.0)).unwrap();
        assert!(s.residuals.cross.abs() <= 1e-12, "{:?}", s.residuals);
        assert!(s.residuals.max_abs() <= 1e-9, "{:?}", s.residuals);
        assert!(s.xi0 > s.xi);
    }

    #[test]
    fn prop2_indicator_decreases_monotonically_in_k() {
        let mut last = f64::INFINITY;
        for &k in &[1.0, 10.0, 100.0, 1000.0] {
            let s = solve_prop2(&prob(64, 64, 4, k, 0.0)).unwrap();
            assert!(s.indicator < last, "k={k}: {} !< {last}", s.indicator);
            last = s.indicator;
        }
    }

    #[test]
    fn prop2_indicator_increases_in_m0() {
        let mut last = 0.0;
        for &m0 in &[1usize, 2, 4, 8, 16] {
            let s = solve_prop2(&prob(64, 64, m0, 10.0, 0.0)).unwrap();
            assert!(s.indicator > last, "m0={m0}");
            last = s.indicator;
        }
    }

    #[test]
    fn prop2_matches_oracle_on_spec_cell() {
        let p = prob(64, 64, 4, 10.0, 0.0);
        let s = solve_prop2(&p).unwrap();
        let o = brute_force_max(&p).unwrap();
        assert!((s.xi0 - o.xi0).abs() <= 1e-6, "{} vs {}", s.xi0, o.xi0);
        assert!((s.xi - o.xi).abs() <= 1e-6, "{} vs {}", s.xi, o.xi);
        assert!((s.indicator - o.indicator).abs() <= 1e-6);
    }

    #[test]
    fn oracle_heavy_penalty_forces_near_equality() {
        let p = prob(64, 64, 2, 1e4, 0.0);
        let o = brute_force_max(&p).unwrap();
        let bound = sigmoid(-o.xi0) / (2.0 * 64.0 * 1e4);
        assert!(
            o.xi0 - o.xi <= bound + 1e-9,
            "gap {} bound {bound}",
            o.xi0 - o.xi
        );
    }

    #[test]
    fn oracle_swap_identity_at_optimum_m0_one() {
        // Summing the two stationarity equations at the optimum gives
        // (1 - sigma(xi0)) - (n/m) sigma(xi1) = 0 when m0 = 1.
        let p = prob(64, 64, 1, 10.0, 0.0);
        let o = brute_force_max(&p).unwrap();
        let residual = (1.0 - sigmoid(o.xi0)) - sigmoid(o.xi);
        assert!(residual.abs() <= 1e-9, "{residual}");
    }

    #[test]
    fn prop3_at_lambda_zero_matches_prop2() {
        let s2 = solve_prop2(&prob(64, 64, 4, 10.0, 0.0)).unwrap();
        let s3 = solve_prop3(&prob(64, 64, 4, 10.0, 0.0)).unwrap();
        assert!((s2.xi0 - s3.xi0).abs() <= 1e-9);
        assert!((s2.xi - s3.xi).abs() <= 1e-9);
    }

    #[test]
    fn prop3_indicator_strictly_decreases_in_lambda() {
        let mut last = f64::INFINITY;
        for &lambda in &[0.0, 0.1, 1.0, 10.0, 1000.0] {
            let s = solve_prop3(&prob(64, 64, 4, 10.0, lambda)).unwrap();
            assert!(s.indicator < last, "lambda={lambda}");
            last = s.indicator;
        }
    }

    #[test]
    fn prop3_large_lambda_kills_the_indicator() {
        let s = solve_prop3(&prob(64, 64, 4, 10.0, 1e6)).unwrap();
        assert!(s.indicator < 1e-3, "{}", s.indicator);
        assert!(s.residuals.max_abs() <= 1e-9, "{:?}", s.residuals);
    }

    #[test]
    fn prop3_matches_oracle_at_moderate_lambda() {
        let p = prob(64, 64, 4, 10.0, 1.0);
        let s = solve_prop3(&p).unwrap();
        let o = brute_force_max(&p).unwrap();
        assert!((s.xi0 - o.xi0).abs() <= 1e-6, "{} vs {}", s.xi0, o.xi0);
        assert!((s.xi - o.xi).abs() <= 1e-6);
    }

    #[test]
    fn lambda_of_xi0_is_increasing_on_bracket() {
        // Monotone across the whole bracket; strictly increasing wherever
        // lambda is non-negative, which is where roots for lambda >= 0
        // live. In the deep-left tail the analytic increase of about
        // e^(xi0) per step is below one ulp of -s0/(n m0), so sampled
        // differences there can tie.
        let p = prob(64, 64, 4, 10.0, 1.0);
        let (lo, hi) = xi0_bracket(&p);
        let mut last = f64::NEG_INFINITY;
        for i in 0..200 {
            let x = lo + (hi - lo) * i as f64 / 199.0;
            let l = lambda_of_xi0(&p, x);
            assert!(l >= last, "decreased at {x}");
            if last >= 0.0 {
                assert!(l > last, "not strictly increasing at {x}");
            }
            last = l;
        }
        assert!(last > 0.0);
    }

    #[test]
    fn infeasible_lambda_reports_scanned_interval() {
        let err = solve_prop3(&prob(64, 64, 4, 10.0, 1e300)).unwrap_err();
        match err {
            TheoryError::BracketNotFound { lo, hi } => assert!(lo < hi),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn constructed_discriminator_separates_the_pair() {
        let ds = unit_circle_dataset(32, 32, 7);
        let d = build_constructed(ds.reals[0], ds.fakes[0], &ds.others(), 0.2, 1e4, 1e4).unwrap();
        let dev = construction_deviations(&d, &ds);
        assert!(dev.at_x0 <= 1e-3, "x0 deviation {}", dev.at_x0);
        assert!(dev.at_y0 <= 1e-3, "y0 deviation {}", dev.at_y0);
        assert!(dev.max_elsewhere <= 1e-3, "elsewhere {}", dev.max_elsewhere);
        let obj = constructed_objective(&d, &ds);
        assert!(obj > 2.0 * 0.5f64.ln(), "objective {obj}");
    }

    #[test]
    fn construction_sharpness_controls_deviation() {
        // Doubling sequence inside the regime where the hidden sigmoids
        // already saturate; below ~1e4 the deviations plateau at eps/2.
        let ds = unit_circle_dataset(32, 32, 3);
        let others = ds.others();
        let mut devs = Vec::new();
        for &k in &[1e4, 2e4, 4e4, 8e4] {
            let d = build_constructed(ds.reals[0], ds.fakes[0], &others, 0.2, k, k).unwrap();
            devs.push(construction_deviations(&d, &ds).max_abs());
        }
        // Ties happen only once sigma rounds to exactly 1/2 at f64.
        assert!(devs[1] < devs[0], "{devs:?}");
        for pair in devs.windows(2) {
            assert!(pair[1] <= pair[0], "{devs:?}");
        }
        assert!(devs[devs.len() - 1] < devs[0] * 1e-3, "{devs:?}");
    }

    #[test]
    fn eps_zero_gives_exactly_half_everywhere() {
        let ds = unit_circle_dataset(8, 8, 5);
        let d = build_constructed(ds.reals[0], ds.fakes[0], &ds.others(), 0.0, 1e4, 1e4).unwrap();
        for &v in ds.reals.iter().chain(&ds.fakes) {
            assert!((d.evaluate(v) - 0.5).abs() <= 1e-15);
        }
        let obj = constructed_objective(&d, &ds);
        assert!((obj - 2.0 * 0.5f64.ln()).abs() <= 1e-12);
    }

    #[test]
    fn degenerate_dataset_is_rejected() {
        let x0 = [1.0, 0.0];
        let y0 = [0.0, 1.0];
        // Near-duplicate of x0, normalized back onto the circle.
        let n = (1.0f64 + 1e-12).sqrt();
        let others = vec![[1.0 / n, 1e-6 / n]];
        assert!(matches!(
            build_constructed(x0, y0, &others, 0.2, 1e4, 1e4),
            Err(TheoryError::Degenerate { .. })
        ));
        assert!(matches!(
            build_constructed([2.0, 0.0], y0, &[], 0.2, 1e4, 1e4),
            Err(TheoryError::NotUnitNorm { .. })
        ));
    }

    #[test]
    fn sweep_empty_grid_is_trivially_passing() {
        let grid = SweepGrid {
            n: vec![],
            m: vec![],
            m0: vec![],
            k: vec![],
            lambda: vec![],
        };
        let report = run_sweep(&grid, false);
        assert!(report.rows.is_empty());
        assert!(report.all_pass());
        assert_eq!(
            sweep_to_csv(&report),
            "n,m,m0,k,lambda,xi0,xi,indicator,residual,status\n"
        );
    }

    #[test]
    fn sweep_single_cell_passes() {
        let grid = SweepGrid {
            n: vec![64],
            m: vec![64],
            m0: vec![4],
            k: vec![10.0],
            lambda: vec![0.0],
        };
        let report = run_sweep(&grid, true);
        assert!(report.all_pass());
        assert_eq!(report.rows.len(), 1);
        let csv = sweep_to_csv(&report);
        assert!(csv.lines().count() == 2);
        assert!(csv.contains(",ok"));
    }

    #[test]
    fn perturbed_indicator_fails_monotonicity_verdict() {
        // Negative control: corrupt one solver result and the k-axis
        // verdict must fail and name the offending cell.
        let grid = SweepGrid {
            n: vec![64],
            m: vec![64],
            m0: vec![4],
            k: vec![1.0, 10.0],
            lambda: vec![0.0],
        };
        let mut report = run_sweep(&grid, false);
        assert!(report.all_pass());
        if let Some(s) = &mut report.rows[1].solver {
            s.indicator = 1e9;
        }
        let verdicts = monotonicity_verdicts(&report.rows);
        let failed: Vec<_> = verdicts.iter().filter(|v| !v.pass).collect();
        assert_eq!(failed.len(), 1);
        assert!(failed[0].detail.contains("k=10"), "{}", failed[0].detail);
    }
}
