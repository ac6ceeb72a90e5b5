//! Discriminator and generator objectives, the zero-centered gradient
//! penalty, and the close-pair gradient indicator.
//!
//! Every objective here is expressed as the quantity the respective network
//! ASCENDS; trainers negate for loss reporting. The fake-as-real slice
//! enters the real-side mean with equal weight, so with an empty FAR slice
//! the discriminator objective is exactly the plain two-term GAN objective.

use crate::mlp::{MlpError, MlpVars};
use crate::numerics::sigmoid;
use crate::tape::{Tape, TapeError, VarRef};
use crate::tensor::Tensor;
use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("real and fake-as-real slices are both empty")]
    EmptyRealSide,
    #[error("fake slice is empty")]
    EmptyFakeSide,
    #[error("interpolation endpoints have {real} and {fake} rows")]
    RowCountMismatch { real: usize, fake: usize },
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
}

/// Which adversarial loss family the run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Nsgan,
    Wgan,
    Hingegan,
    Lsgan,
}

/// Where the zero-centered gradient penalty is anchored, if anywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyKind {
    None,
    /// Anchors at the real-side points (reals plus FAR fakes).
    ZeroGpSample,
    /// Anchors at per-row uniform interpolations between reals and fakes.
    ZeroGpInterpolation,
}

/// Pre-sigmoid discriminator outputs for one minibatch, split into the
/// original reals, the fake-as-real slice, and the loss fakes.
pub struct BatchOutputs {
    pub d0_real: VarRef,
    pub d0_far: Option<VarRef>,
    pub d0_fake: VarRef,
}

impl BatchOutputs {
    /// Real-side outputs with the FAR slice appended (equal weight).
    fn real_side(&self, tape: &mut Tape) -> Result<VarRef, ObjectiveError> {
        let far_rows = self.d0_far.map_or(0, |f| f.rows());
        if self.d0_real.rows() + far_rows == 0 {
            return Err(ObjectiveError::EmptyRealSide);
        }
        match self.d0_far {
            Some(far) if far.rows() > 0 => {
                if self.d0_real.rows() == 0 {
                    Ok(far)
                } else {
                    Ok(tape.concat_rows(self.d0_real, far)?)
                }
            }
            _ => Ok(self.d0_real),
        }
    }

    fn checked_fake(&self) -> Result<VarRef, ObjectiveError> {
        if self.d0_fake.rows() == 0 {
            return Err(ObjectiveError::EmptyFakeSide);
        }
        Ok(self.d0_fake)
    }
}

fn ones_like(tape: &mut Tape, v: VarRef) -> VarRef {
    tape.leaf(Tensor::filled(v.rows(), v.cols(), 1.0))
}

/// The value the discriminator ascends (penalty not included).
pub fn d_objective(
    tape: &mut Tape,
    kind: LossKind,
    outs: &BatchOutputs,
) -> Result<VarRef, ObjectiveError> {
    let rf = outs.real_side(tape)?;
    let fake = outs.checked_fake()?;
    let obj = match kind {
        LossKind::Nsgan => {
            // mean log sigma(D0) over reals+FAR, plus mean log(1 - sigma(D0))
            // over fakes, in softplus form.
            let ls_r = tape.log_sigmoid(rf);
            let t1 = tape.mean(ls_r)?;
            let neg_f = tape.scalar_mul(-1.0, fake);
            let ls_f = tape.log_sigmoid(neg_f);
            let t2 = tape.mean(ls_f)?;
            tape.add(t1, t2)?
        }
        LossKind::Wgan => {
            let t1 = tape.mean(rf)?;
            let t2 = tape.mean(fake)?;
            tape.sub(t1, t2)?
        }
        LossKind::Hingegan => {
            // min(0, -1 + D0) = -relu(1 - D0); min(0, -1 - D0) = -relu(1 + D0)
            let ones_r = ones_like(tape, rf);
            let gap_r = tape.sub(ones_r, rf)?;
            let relu_r = tape.relu(gap_r);
            let m_r = tape.mean(relu_r)?;
            let t1 = tape.scalar_mul(-1.0, m_r);
            let ones_f = ones_like(tape, fake);
            let gap_f = tape.add(fake, ones_f)?;
            let relu_f = tape.relu(gap_f);
            let m_f = tape.mean(relu_f)?;
            let t2 = tape.scalar_mul(-1.0, m_f);
            tape.add(t1, t2)?
        }
        LossKind::Lsgan => {
            // -1/2 [ mean (D0 - 1)^2 over reals+FAR + mean (D0 + 1)^2 over fakes ]
            let ones_r = ones_like(tape, rf);
            let dev_r = tape.sub(rf, ones_r)?;
            let sq_r = tape.square(dev_r);
            let m_r = tape.mean(sq_r)?;
            let ones_f = ones_like(tape, fake);
            let dev_f = tape.add(fake, ones_f)?;
            let sq_f = tape.square(dev_f);
            let m_f = tape.mean(sq_f)?;
            let s = tape.add(m_r, m_f)?;
            tape.scalar_mul(-0.5, s)
        }
    };
    Ok(obj)
}

/// The value the generator ascends.
pub fn g_objective(
    tape: &mut Tape,
    kind: LossKind,
    d0_fake: VarRef,
) -> Result<VarRef, ObjectiveError> {
    if d0_fake.rows() == 0 {
        return Err(ObjectiveError::EmptyFakeSide);
    }
    let obj = match kind {
        LossKind::Nsgan => {
            let ls = tape.log_sigmoid(d0_fake);
            tape.mean(ls)?
        }
        // Unsaturated linear form for both WGAN and the hinge companion.
        LossKind::Wgan | LossKind::Hingegan => tape.mean(d0_fake)?,
        LossKind::Lsgan => {
            let ones = ones_like(tape, d0_fake);
            let dev = tape.sub(d0_fake, ones)?;
            let sq = tape.square(dev);
            let m = tape.mean(sq)?;
            tape.scalar_mul(-0.5, m)
        }
    };
    Ok(obj)
}

/// Mean over anchor rows of ||grad_x D0(x)||^2, differentiable in the
/// network parameters (double backprop). `anchors` must be a leaf.
pub fn zero_gp(
    tape: &mut Tape,
    disc: &MlpVars,
    anchors: VarRef,
) -> Result<VarRef, ObjectiveError> {
    let d0 = disc.forward(tape, anchors)?;
    // Rows are independent, so the gradient of the summed outputs stacks
    // the per-anchor input gradients.
    let total = tape.sum(d0)?;
    let grads = tape.input_gradient_graph(total, anchors)?;
    let sq = tape.l2_norm_squared(grads)?;
    Ok(tape.scalar_mul(1.0 / anchors.rows() as f64, sq))
}

/// Per-row uniform interpolation u*x + (1-u)*y between real and fake rows.
pub fn interpolate_anchors(
    real: &Tensor,
    fake: &Tensor,
    rng: &mut impl Rng,
) -> Result<Tensor, ObjectiveError> {
    let us: Vec<f64> = (0..real.rows()).map(|_| rng.random()).collect();
    interpolate_anchors_with(real, fake, &us)
}

/// Interpolation with explicit coefficients (u = 1 gives the real row).
pub fn interpolate_anchors_with(
    real: &Tensor,
    fake: &Tensor,
    us: &[f64],
) -> Result<Tensor, ObjectiveError> {
    if real.rows() != fake.rows() || real.cols() != fake.cols() {
        return Err(ObjectiveError::RowCountMismatch {
            real: real.rows(),
            fake: fake.rows(),
        });
    }
    debug_assert_eq!(us.len(), real.rows());
    let cols = real.cols();
    let mut data = Vec::with_capacity(real.len());
    for (i, &u) in us.iter().enumerate() {
        for c in 0..cols {
            data.push(u * real.get(i, c) + (1.0 - u) * fake.get(i, c));
        }
    }
    Ok(Tensor::from_raw(real.rows(), cols, data))
}

/// sigma(-xi) * (xi0 - xi): the factor of the generator's received gradient
/// magnitude at a close pair, analyzed by the propositions.
pub fn generator_grad_indicator(xi0: f64, xi: f64) -> f64 {
    sigmoid(-xi) * (xi0 - xi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{MlpParams, MlpSpec};
    use proptest::prelude::*;

    fn outputs(
        tape: &mut Tape,
        real: &[f64],
        far: Option<&[f64]>,
        fake: &[f64],
    ) -> BatchOutputs {
        let d0_real = tape.leaf(Tensor::from_raw(real.len(), 1, real.to_vec()));
        let d0_far = far.map(|f| tape.leaf(Tensor::from_raw(f.len(), 1, f.to_vec())));
        let d0_fake = tape.leaf(Tensor::from_raw(fake.len(), 1, fake.to_vec()));
        BatchOutputs {
            d0_real,
            d0_far,
            d0_fake,
        }
    }

    #[test]
    fn nsgan_at_equilibrium_outputs_is_two_log_half() {
        let mut tape = Tape::new();
        let outs = outputs(&mut tape, &[0.0; 48], Some(&[0.0; 16]), &[0.0; 64]);
        let obj = d_objective(&mut tape, LossKind::Nsgan, &outs).unwrap();
        assert_eq!(tape.value(obj).scalar_value(), 2.0 * 0.5f64.ln());
    }

    #[test]
    fn nsgan_generator_at_equilibrium_is_log_half() {
        let mut tape = Tape::new();
        let fake = tape.leaf(Tensor::zeros(64, 1));
        let obj = g_objective(&mut tape, LossKind::Nsgan, fake).unwrap();
        assert_eq!(tape.value(obj).scalar_value(), 0.5f64.ln());
    }

    #[test]
    fn nsgan_generator_gradient_at_zero_is_half() {
        // d/dxi of log sigma(xi) is sigma(-xi) = 1/2 at xi = 0; the mean over
        // one fake keeps the factor.
        let mut tape = Tape::new();
        let fake = tape.leaf(Tensor::zeros(1, 1));
        let obj = g_objective(&mut tape, LossKind::Nsgan, fake).unwrap();
        let g = tape.backward(obj, &[fake]).unwrap();
        assert_eq!(g[0].scalar_value(), 0.5);
    }

    #[test]
    fn wgan_with_equal_constants_is_zero() {
        let mut tape = Tape::new();
        let outs = outputs(&mut tape, &[1.7; 8], None, &[1.7; 4]);
        let obj = d_objective(&mut tape, LossKind::Wgan, &outs).unwrap();
        assert_eq!(tape.value(obj).scalar_value(), 0.0);
    }

    #[test]
    fn nsgan_perfect_separation_approaches_zero_from_below() {
        let mut tape = Tape::new();
        let t = 40.0;
        let outs = outputs(&mut tape, &[t], None, &[-t]);
        let obj = d_objective(&mut tape, LossKind::Nsgan, &outs).unwrap();
        let v = tape.value(obj).scalar_value();
        assert!(v < 0.0 && v > -1e-12, "{v}");
    }

    #[test]
    fn lsgan_on_target_is_zero() {
        let mut tape = Tape::new();
        let fake = tape.leaf(Tensor::filled(8, 1, 1.0));
        let obj = g_objective(&mut tape, LossKind::Lsgan, fake).unwrap();
        assert_eq!(tape.value(obj).scalar_value(), 0.0);
    }

    #[test]
    fn hinge_is_saturated_beyond_margin() {
        let mut tape = Tape::new();
        let outs = outputs(&mut tape, &[2.0, 3.0], None, &[-2.0, -5.0]);
        let obj = d_objective(&mut tape, LossKind::Hingegan, &outs).unwrap();
        assert_eq!(tape.value(obj).scalar_value(), 0.0);
    }

    #[test]
    fn far_slice_enters_with_equal_weight() {
        // Objective over (real, far) slices must equal the objective with
        // the same values presented as one real slice.
        let real = [0.3, -0.4, 1.2];
        let far = [0.9, -2.0];
        let fake = [0.1, 0.1, -0.5, 2.0];
        let merged: Vec<f64> = real.iter().chain(far.iter()).copied().collect();
        for kind in [LossKind::Nsgan, LossKind::Wgan, LossKind::Hingegan, LossKind::Lsgan] {
            let mut t1 = Tape::new();
            let o1 = outputs(&mut t1, &real, Some(&far), &fake);
            let v1 = d_objective(&mut t1, kind, &o1).unwrap();
            let mut t2 = Tape::new();
            let o2 = outputs(&mut t2, &merged, None, &fake);
            let v2 = d_objective(&mut t2, kind, &o2).unwrap();
            assert_eq!(
                t1.value(v1).scalar_value(),
                t2.value(v2).scalar_value(),
                "{kind:?}"
            );
        }
    }

    #[test]
    fn empty_real_and_far_slices_are_rejected() {
        let mut tape = Tape::new();
        let outs = outputs(&mut tape, &[], None, &[0.4]);
        assert!(matches!(
            d_objective(&mut tape, LossKind::Nsgan, &outs),
            Err(ObjectiveError::EmptyRealSide)
        ));
    }

    #[test]
    fn zero_gp_of_constant_discriminator_is_zero() {
        let params = MlpParams::zeros(MlpSpec::discriminator());
        let mut tape = Tape::new();
        let vars = params.vars(&mut tape);
        let anchors = tape.leaf(Tensor::from_points(&[[0.3, -0.8], [1.0, 2.0]]));
        let p = zero_gp(&mut tape, &vars, anchors).unwrap();
        assert_eq!(tape.value(p).scalar_value(), 0.0);
    }

    #[test]
    fn zero_gp_of_linear_map_is_weight_norm() {
        // D0(x) = w . x  =>  ||grad_x D0||^2 = ||w||^2 at every anchor.
        let spec = MlpSpec::new(vec![2, 1]).unwrap();
        let mut params = MlpParams::zeros(spec);
        params.param_tensors_mut()[0].data_mut().copy_from_slice(&[1.5, -2.5]);
        let mut tape = Tape::new();
        let vars = params.vars(&mut tape);
        let anchors = tape.leaf(Tensor::from_points(&[[0.0, 0.0], [3.0, 4.0], [-1.0, 2.0]]));
        let p = zero_gp(&mut tape, &vars, anchors).unwrap();
        let expect = 1.5f64 * 1.5 + 2.5 * 2.5;
        assert!((tape.value(p).scalar_value() - expect).abs() < 1e-12);
    }

    #[test]
    fn interpolation_endpoints_are_exact() {
        let real = Tensor::from_points(&[[1.0, 2.0], [3.0, 4.0]]);
        let fake = Tensor::from_points(&[[-1.0, -2.0], [5.0, 0.0]]);
        let at_real = interpolate_anchors_with(&real, &fake, &[1.0, 1.0]).unwrap();
        assert_eq!(at_real, real);
        let at_fake = interpolate_anchors_with(&real, &fake, &[0.0, 0.0]).unwrap();
        assert_eq!(at_fake, fake);
    }

    #[test]
    fn interpolation_rejects_row_mismatch() {
        let real = Tensor::from_points(&[[1.0, 2.0]]);
        let fake = Tensor::from_points(&[[0.0, 0.0], [1.0, 1.0]]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            interpolate_anchors(&real, &fake, &mut rng),
            Err(ObjectiveError::RowCountMismatch { real: 1, fake: 2 })
        ));
    }

    #[test]
    fn indicator_examples() {
        assert_eq!(generator_grad_indicator(0.7, 0.7), 0.0);
        assert_eq!(generator_grad_indicator(2.0, 0.0), 1.0);
        let v = generator_grad_indicator(0.0, -5.0);
        let sigma5 = 1.0 / (1.0 + (-5.0f64).exp());
        assert!((v - sigma5 * 5.0).abs() < 1e-15);
        assert!((v - 4.96654).abs() < 1e-4);
    }

    use rand::SeedableRng;

    proptest! {
        #[test]
        fn interpolation_stays_on_segment(u in 0.0f64..=1.0) {
            let real = Tensor::from_points(&[[2.0, -1.0]]);
            let fake = Tensor::from_points(&[[-4.0, 3.0]]);
            let out = interpolate_anchors_with(&real, &fake, &[u]).unwrap();
            // Affine combination with coefficients summing to 1.
            for c in 0..2 {
                let lo = real.get(0, c).min(fake.get(0, c));
                let hi = real.get(0, c).max(fake.get(0, c));
                prop_assert!(out.get(0, c) >= lo - 1e-12 && out.get(0, c) <= hi + 1e-12);
            }
        }

        #[test]
        fn raising_a_fake_output_strictly_lowers_nsgan_objective(
            base in -3.0f64..3.0,
            bump in 1e-6f64..2.0,
        ) {
            let mut t1 = Tape::new();
            let o1 = outputs(&mut t1, &[0.5], None, &[base, -0.2]);
            let v1 = d_objective(&mut t1, LossKind::Nsgan, &o1).unwrap();
            let mut t2 = Tape::new();
            let o2 = outputs(&mut t2, &[0.5], None, &[base + bump, -0.2]);
            let v2 = d_objective(&mut t2, LossKind::Nsgan, &o2).unwrap();
            prop_assert!(t2.value(v2).scalar_value() < t1.value(v1).scalar_value());
        }

        #[test]
        fn zero_gp_is_non_negative(seed in 0u64..1000) {
            let params = MlpParams::init(MlpSpec::new(vec![2, 8, 1]).unwrap(), seed);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let anchors_t = crate::data::sample_latent(4, &mut rng);
            let mut tape = Tape::new();
            let vars = params.vars(&mut tape);
            let anchors = tape.leaf(anchors_t);
            let p = zero_gp(&mut tape, &vars, anchors).unwrap();
            prop_assert!(tape.value(p).scalar_value() >= 0.0);
        }
    }
}
