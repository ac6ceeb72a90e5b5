//! The synthetic-experiment generator and discriminator networks: fully
//! connected layers with relu hidden activations and a linear final layer.
//! The discriminator output is the pre-sigmoid D0; D(x) = sigmoid(D0(x)).

use crate::tape::{Tape, TapeError, VarRef};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("input width {got} does not match first layer width {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("checkpoint is inconsistent: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tape(#[from] TapeError),
}

/// Layer widths of a fully connected relu network. The first entry is the
/// input dimension, the last the output dimension.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    widths: Vec<usize>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>) -> Result<Self, MlpError> {
        if widths.len() < 2 {
            return Err(MlpError::InvalidSpec(format!(
                "need at least an input and an output width, got {widths:?}"
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(MlpError::InvalidSpec(format!(
                "widths must be positive, got {widths:?}"
            )));
        }
        Ok(Self { widths })
    }

    /// 2 -> 64 -> 64 -> 64 -> 1, the synthetic-experiment discriminator.
    pub fn discriminator() -> Self {
        Self {
            widths: vec![2, 64, 64, 64, 1],
        }
    }

    /// 2 -> 64 -> 64 -> 64 -> 2, the synthetic-experiment generator.
    pub fn generator() -> Self {
        Self {
            widths: vec![2, 64, 64, 64, 2],
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// One fully connected layer. The weight is stored input x output so the
/// forward pass is `x @ w + b` without a transpose.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub w: Tensor,
    pub b: Tensor,
}

/// Weights and biases of an MLP. Immutable during a forward pass; updates
/// happen between passes on the training thread.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    spec: MlpSpec,
    layers: Vec<Layer>,
}

impl MlpParams {
    /// He-normal initialization (std = sqrt(2 / fan_in)), zero biases,
    /// deterministic per seed.
    pub fn init(spec: MlpSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.layer_count());
        for w in spec.widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("std is positive and finite");
            let data: Vec<f64> = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
            layers.push(Layer {
                w: Tensor::from_raw(fan_in, fan_out, data),
                b: Tensor::zeros(1, fan_out),
            });
        }
        Self { spec, layers }
    }

    /// All-zero parameters; D0 is identically zero (D = 1/2 everywhere).
    pub fn zeros(spec: MlpSpec) -> Self {
        let layers = spec
            .widths
            .windows(2)
            .map(|w| Layer {
                w: Tensor::zeros(w[0], w[1]),
                b: Tensor::zeros(1, w[1]),
            })
            .collect();
        Self { spec, layers }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Flat parameter tensors in layer order (w0, b0, w1, b1, ...), the
    /// order optimizer state mirrors.
    pub fn param_tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.all_finite() && l.b.all_finite())
    }

    /// Plain (untaped) forward pass. Shares the arithmetic kernels with the
    /// taped path, so the two produce bit-identical outputs.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor, MlpError> {
        if input.cols() != self.spec.input_dim() {
            return Err(MlpError::InputWidth {
                expected: self.spec.input_dim(),
                got: input.cols(),
            });
        }
        let mut h = input.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.matmul(&layer.w).add_row(&layer.b);
            if i != last {
                h = h.relu();
            }
        }
        Ok(h)
    }

    /// Puts the parameters on a tape as leaves, for a differentiable pass.
    pub fn vars(&self, tape: &mut Tape) -> MlpVars {
        let layers = self
            .layers
            .iter()
            .map(|l| (tape.leaf(l.w.clone()), tape.leaf(l.b.clone())))
            .collect();
        MlpVars {
            input_dim: self.spec.input_dim(),
            layers,
        }
    }

    pub fn to_checkpoint(&self, seed: u64) -> MlpCheckpoint {
        MlpCheckpoint {
            spec: self.spec.clone(),
            seed,
            layers: self
                .layers
                .iter()
                .map(|l| LayerData {
                    w: l.w.data().to_vec(),
                    b: l.b.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &MlpCheckpoint) -> Result<Self, MlpError> {
        if ck.layers.len() != ck.spec.layer_count() {
            return Err(MlpError::Checkpoint(format!(
                "expected {} layers, got {}",
                ck.spec.layer_count(),
                ck.layers.len()
            )));
        }
        let mut layers = Vec::with_capacity(ck.layers.len());
        for (w, data) in ck.spec.widths.windows(2).zip(&ck.layers) {
            let (fan_in, fan_out) = (w[0], w[1]);
            if data.w.len() != fan_in * fan_out || data.b.len() != fan_out {
                return Err(MlpError::Checkpoint(format!(
                    "layer {fan_in}->{fan_out} has {} weights and {} biases",
                    data.w.len(),
                    data.b.len()
                )));
            }
            layers.push(Layer {
                w: Tensor::new(fan_in, fan_out, data.w.clone())
                    .map_err(|e| MlpError::Checkpoint(e.to_string()))?,
                b: Tensor::new(1, fan_out, data.b.clone())
                    .map_err(|e| MlpError::Checkpoint(e.to_string()))?,
            });
        }
        Ok(Self {
            spec: ck.spec.clone(),
            layers,
        })
    }
}

/// Tape handles for one network's parameters.
pub struct MlpVars {
    input_dim: usize,
    layers: Vec<(VarRef, VarRef)>,
}

impl MlpVars {
    /// Taped forward pass returning the pre-activation output (D0 for the
    /// discriminator, raw 2-D points for the generator).
    pub fn forward(&self, tape: &mut Tape, input: VarRef) -> Result<VarRef, MlpError> {
        if input.cols() != self.input_dim {
            return Err(MlpError::InputWidth {
                expected: self.input_dim,
                got: input.cols(),
            });
        }
        let mut h = input;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.matmul(h, w)?;
            h = tape.add(h, b)?;
            if i != last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Parameter refs in the same order as [`MlpParams::param_tensors`].
    pub fn param_refs(&self) -> Vec<VarRef> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

/// JSON checkpoint: spec, seed, and flat per-layer arrays.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpCheckpoint {
    pub spec: MlpSpec,
    pub seed: u64,
    pub layers: Vec<LayerData>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerData {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sigmoid;

    #[test]
    fn table_architectures_have_expected_param_counts() {
        // 2*64+64 + 64*64+64 + 64*64+64 + 64*1+1
        assert_eq!(MlpSpec::discriminator().param_count(), 8_577);
        // 2*64+64 + 64*64+64 + 64*64+64 + 64*2+2
        assert_eq!(MlpSpec::generator().param_count(), 8_642);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = MlpParams::init(MlpSpec::discriminator(), 42);
        let b = MlpParams::init(MlpSpec::discriminator(), 42);
        assert_eq!(a, b);
        let c = MlpParams::init(MlpSpec::discriminator(), 43);
        assert_ne!(a, c);
    }

    #[test]
    fn biases_start_at_zero() {
        let p = MlpParams::init(MlpSpec::generator(), 1);
        for l in p.layers() {
            assert!(l.b.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_params_map_everything_to_zero() {
        let p = MlpParams::zeros(MlpSpec::discriminator());
        let x = Tensor::new(3, 2, vec![1.0, -2.0, 0.5, 4.0, -1.0, 9.0]).unwrap();
        let y = p.forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_is_affine_map() {
        let spec = MlpSpec::new(vec![2, 1]).unwrap();
        let mut p = MlpParams::zeros(spec);
        p.layers[0].w = Tensor::new(2, 1, vec![3.0, -2.0]).unwrap();
        p.layers[0].b = Tensor::new(1, 1, vec![0.25]).unwrap();
        let x = Tensor::new(2, 2, vec![1.0, 1.0, 2.0, -1.0]).unwrap();
        let y = p.forward(&x).unwrap();
        assert_eq!(y.data(), &[3.0 - 2.0 + 0.25, 6.0 + 2.0 + 0.25]);
    }

    #[test]
    fn discriminator_batch_output_shape() {
        let p = MlpParams::init(MlpSpec::discriminator(), 7);
        let x = Tensor::zeros(64, 2);
        assert_eq!(p.forward(&x).unwrap().shape(), (64, 1));
    }

    #[test]
    fn forward_is_batch_consistent() {
        let p = MlpParams::init(MlpSpec::discriminator(), 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dist = Normal::new(0.0, 2.0).unwrap();
        let data: Vec<f64> = (0..16).map(|_| dist.sample(&mut rng)).collect();
        let batch = Tensor::new(8, 2, data).unwrap();
        let all = p.forward(&batch).unwrap();
        for i in 0..8 {
            let row = batch.slice_rows(i, i + 1);
            let single = p.forward(&row).unwrap();
            assert_eq!(single.data()[0], all.data()[i], "row {i} differs");
        }
    }

    #[test]
    fn taped_forward_matches_plain_bitwise() {
        let p = MlpParams::init(MlpSpec::generator(), 3);
        let x = Tensor::new(4, 2, vec![0.1, -0.7, 1.3, 2.2, -3.1, 0.0, 0.5, 0.5]).unwrap();
        let plain = p.forward(&x).unwrap();
        let mut tape = Tape::new();
        let vars = p.vars(&mut tape);
        let xv = tape.leaf(x);
        let y = vars.forward(&mut tape, xv).unwrap();
        assert_eq!(tape.value(y), &plain);
    }

    #[test]
    fn d_of_x_is_sigmoid_of_d0_in_unit_interval() {
        let p = MlpParams::init(MlpSpec::discriminator(), 13);
        let x = Tensor::new(5, 2, vec![0.0, 0.0, 1.0, -1.0, 3.0, 3.0, -2.0, 0.5, 0.1, 0.9]).unwrap();
        let d0 = p.forward(&x).unwrap();
        for &v in d0.data() {
            let d = sigmoid(v);
            assert!(d > 0.0 && d < 1.0);
        }
    }

    #[test]
    fn input_width_mismatch_is_rejected() {
        let p = MlpParams::init(MlpSpec::discriminator(), 1);
        let x = Tensor::zeros(4, 3);
        assert!(matches!(
            p.forward(&x),
            Err(MlpError::InputWidth { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let p = MlpParams::init(MlpSpec::discriminator(), 99);
        let json = serde_json::to_string(&p.to_checkpoint(99)).unwrap();
        let ck: MlpCheckpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(ck.seed, 99);
        let q = MlpParams::from_checkpoint(&ck).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn spec_rejects_degenerate_widths() {
        assert!(MlpSpec::new(vec![2]).is_err());
        assert!(MlpSpec::new(vec![2, 0, 1]).is_err());
    }
}
