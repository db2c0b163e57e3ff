use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{run, ArchSpec, ConvPath, Record, WeightSet};
use crate::error::Result;
use crate::tensor::NoCount;
use crate::train::backward::{accumulate, cross_entropy};
use crate::train::LabeledExample;

/// Coordinates checked per tensor (all of them when the tensor is smaller).
pub const COORDS_PER_TENSOR: usize = 200;

/// Magnitudes below this on both sides count as agreement.
const ZERO_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a ReLU or pooling boundary.
    pub skipped: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.tensors.iter().map(|t| t.checked).sum()
    }
}

/// `|a - n| / max(|a|, |n|)`, zero when both are negligible.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < ZERO_TOLERANCE {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Loss plus the piecewise-linear pattern (ReLU signs, pooling argmaxes).
fn probe(arch: &ArchSpec, w: &WeightSet<f64>, ex: &LabeledExample) -> Result<(f64, Vec<u64>)> {
    let mut records = Vec::new();
    let probs = run(arch, w, ex.window.to_tensor(), ConvPath::Optimized, &mut NoCount, Some(&mut records))?;
    let mut pattern = Vec::new();
    let mut bits = |values: &[f64]| pattern.extend(values.iter().map(|&v| (v > 0.0) as u64));
    for rec in &records {
        match rec {
            Record::Conv { activated, .. } => bits(activated.data()),
            Record::Dense { output, .. } => bits(output),
            _ => {}
        }
    }
    for rec in records {
        if let Record::Pool { argmax, .. } = rec {
            pattern.extend(argmax.into_iter().map(|i| i as u64));
        }
    }
    Ok((cross_entropy(&probs, ex.label)?, pattern))
}

/// Compares backprop against central differences `(L(w+e) - L(w-e)) / 2e`
/// on [`COORDS_PER_TENSOR`] random coordinates of every tensor.
///
/// Coordinates where either perturbation changes the activation pattern sit
/// on a kink of the loss; they are skipped and another coordinate is drawn.
pub fn grad_check(
    arch: &ArchSpec,
    weights: &WeightSet<f64>,
    example: &LabeledExample,
    epsilon: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut analytic = WeightSet::zeros(arch)?;
    accumulate(arch, weights, example, &mut analytic)?;
    let (_, base_pattern) = probe(arch, weights, example)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = weights.clone();
    let mut report = GradCheckReport { tensors: Vec::new() };
    for ti in 0..weights.tensors().len() {
        let name = weights.tensors()[ti].name.clone();
        let len = weights.tensors()[ti].len();
        let coords = sample(&mut rng, len, len);
        let mut check = TensorCheck {
            name,
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
        };
        for i in coords {
            if check.checked == COORDS_PER_TENSOR {
                break;
            }
            let orig = weights.tensors()[ti].data[i];
            w.tensors_mut()[ti].data[i] = orig + epsilon;
            let (plus, p_plus) = probe(arch, &w, example)?;
            w.tensors_mut()[ti].data[i] = orig - epsilon;
            let (minus, p_minus) = probe(arch, &w, example)?;
            w.tensors_mut()[ti].data[i] = orig;
            if p_plus != base_pattern || p_minus != base_pattern {
                check.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = relative_error(analytic.tensors()[ti].data[i], numeric);
            check.max_rel_error = check.max_rel_error.max(err);
            check.checked += 1;
        }
        report.tensors.push(check);
    }
    Ok(report)
}
