//! Shared finite-difference oracle for the gradient tests.

use fargan_core::{MlpParams, Tensor};

/// Relative-error comparison with the denominator clamped at 1e-8.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub struct FdReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates skipped because the perturbation flipped a relu input
    /// sign (the function is not C1 across the kink there).
    pub skipped: usize,
}

/// Central-difference check of analytic parameter gradients against a
/// scalar function of the parameters. `eval` must rebuild the computation
/// from scratch and return the value together with the relu-input sign
/// pattern of its tape.
///
/// `subsample`: for big networks, check only that many seeded-random
/// coordinates instead of all of them.
pub fn fd_check_params(
    params: &MlpParams,
    grads: &[Tensor],
    eval: &dyn Fn(&MlpParams) -> (f64, Vec<bool>),
    h: f64,
    subsample: Option<(usize, u64)>,
) -> FdReport {
    let tensors = params.param_tensors();
    assert_eq!(tensors.len(), grads.len());

    // Flat coordinate space over all parameter tensors.
    let mut coords: Vec<(usize, usize)> = Vec::new();
    for (ti, t) in tensors.iter().enumerate() {
        for i in 0..t.len() {
            coords.push((ti, i));
        }
    }
    if let Some((limit, seed)) = subsample {
        if coords.len() > limit {
            // Seeded Fisher-Yates prefix.
            let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
            let mut next = move || {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                state
            };
            for i in 0..limit {
                let j = i + (next() as usize) % (coords.len() - i);
                coords.swap(i, j);
            }
            coords.truncate(limit);
        }
    }

    let mut report = FdReport {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (ti, i) in coords {
        let analytic = grads[ti].data()[i];
        let mut plus = params.clone();
        plus.param_tensors_mut()[ti].data_mut()[i] += h;
        let (f_plus, signs_plus) = eval(&plus);
        let mut minus = params.clone();
        minus.param_tensors_mut()[ti].data_mut()[i] -= h;
        let (f_minus, signs_minus) = eval(&minus);
        if signs_plus != signs_minus {
            report.skipped += 1;
            continue;
        }
        let fd = (f_plus - f_minus) / (2.0 * h);
        let err = rel_err(analytic, fd);
        if err > report.max_rel_err {
            report.max_rel_err = err;
        }
        report.checked += 1;
    }
    report
}
