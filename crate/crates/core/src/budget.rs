//! Parameter and multiply accounting.
//!
//! "Multiplies" are the scalar multiply-accumulates of one forward pass over
//! a single feature window. Bias additions, max comparisons and activations
//! are not counted.

use std::fmt;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::arch::{run, ArchSpec, ArchTemplate, ConvPath, LayerSpec, Shape, StepKind, WeightSet};
use crate::error::{KwsError, Result};
use crate::frontend::FeatureWindow;
use crate::tensor::conv_output_dims;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub params: u64,
    pub multiplies: u64,
}

impl Add for LayerCost {
    type Output = LayerCost;
    fn add(self, rhs: LayerCost) -> LayerCost {
        LayerCost {
            params: self.params + rhs.params,
            multiplies: self.multiplies + rhs.multiplies,
        }
    }
}

impl AddAssign for LayerCost {
    fn add_assign(&mut self, rhs: LayerCost) {
        *self = *self + rhs;
    }
}

/// Cost of one layer applied to `in_shape`. A conv layer's pooling is free,
/// so the cost of `Conv` is that of the convolution alone.
pub fn count_layer(layer: &LayerSpec, in_shape: Shape) -> Result<LayerCost> {
    let mismatch = |what: &str| KwsError::InvalidConfig(format!("{what} cannot take input shape {in_shape}"));
    Ok(match (*layer, in_shape) {
        (LayerSpec::Conv { m, r, n, strides, .. }, Shape::Map(d)) => {
            let out = conv_output_dims(d, m, r, n, strides)?;
            let taps = (m * r * d.channels) as u64;
            LayerCost {
                params: taps * n as u64 + n as u64,
                multiplies: (out.time * out.freq) as u64 * taps * n as u64,
            }
        }
        (LayerSpec::Flatten, Shape::Map(_)) => LayerCost::default(),
        (LayerSpec::LowRank { k }, Shape::Vector(len)) => {
            let c = (len * k) as u64;
            LayerCost {
                params: c,
                multiplies: c,
            }
        }
        (LayerSpec::Dense { units: out } | LayerSpec::SoftmaxOut { labels: out }, Shape::Vector(len)) => {
            let c = (len * out) as u64;
            LayerCost {
                params: c + out as u64,
                multiplies: c,
            }
        }
        (LayerSpec::Conv { .. }, _) => return Err(mismatch("conv")),
        (LayerSpec::Flatten, _) => return Err(mismatch("flatten")),
        _ => return Err(mismatch("low-rank/dense/softmax")),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerReport {
    pub name: String,
    pub output: Shape,
    pub cost: LayerCost,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub arch: String,
    pub input: Shape,
    pub per_layer: Vec<LayerReport>,
    pub total: LayerCost,
}

/// Per-step costs (pooling steps appear with zero cost) and totals.
pub fn report(arch: &ArchSpec) -> Result<BudgetReport> {
    let trace = arch.validate()?;
    let mut per_layer = Vec::with_capacity(trace.steps.len());
    let mut total = LayerCost::default();
    for step in &trace.steps {
        let cost = match step.kind {
            StepKind::Pool => LayerCost::default(),
            _ => count_layer(&arch.layers[step.layer], step.input)?,
        };
        total += cost;
        per_layer.push(LayerReport {
            name: step.name.clone(),
            output: step.output,
            cost,
        });
    }
    Ok(BudgetReport {
        arch: arch.name.clone(),
        input: trace.input,
        per_layer,
        total,
    })
}

fn group(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

impl fmt::Display for BudgetReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "architecture {} (input {})", self.arch, self.input)?;
        writeln!(f, "{:<10} {:>12} {:>12} {:>14}", "layer", "out-shape", "params", "multiplies")?;
        for l in &self.per_layer {
            writeln!(
                f,
                "{:<10} {:>12} {:>12} {:>14}",
                l.name,
                l.output.to_string(),
                group(l.cost.params),
                group(l.cost.multiplies)
            )?;
        }
        write!(
            f,
            "{:<10} {:>12} {:>12} {:>14}",
            "total",
            "",
            group(self.total.params),
            group(self.total.multiplies)
        )
    }
}

/// `numerator / denominator`, kept exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub numerator: u64,
    pub denominator: u64,
}

impl Ratio {
    pub fn value(&self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.value())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comparison {
    pub multiply_ratio: Ratio,
    pub param_ratio: Ratio,
}

/// Totals of `a` relative to `b`.
pub fn compare(a: &ArchSpec, b: &ArchSpec) -> Result<Comparison> {
    let ra = report(a)?.total;
    let rb = report(b)?.total;
    Ok(Comparison {
        multiply_ratio: Ratio {
            numerator: ra.multiplies,
            denominator: rb.multiplies,
        },
        param_ratio: Ratio {
            numerator: ra.params,
            denominator: rb.params,
        },
    })
}

/// Largest feature-map count whose total parameter count fits within `cap`,
/// found by exponential then binary search (parameters grow with `n`).
pub fn fit_to_budget(template: &ArchTemplate, cap: u64) -> Result<ArchSpec> {
    let params = |n: usize| -> Result<u64> { Ok(report(&template.instantiate(n)?)?.total.params) };
    let smallest = params(1)?;
    if smallest > cap {
        return Err(KwsError::BudgetInfeasible {
            cap,
            min_params: smallest,
        });
    }
    let (mut lo, mut hi) = (1usize, 2usize);
    while params(hi)? <= cap {
        lo = hi;
        hi = hi.checked_mul(2).ok_or_else(|| KwsError::InvalidConfig("parameter cap too large".into()))?;
    }
    // params(lo) <= cap < params(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if params(mid)? <= cap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    template.instantiate(lo)
}

/// Feature-map count shared by the conv layers, if any.
pub fn feature_maps(arch: &ArchSpec) -> Option<usize> {
    arch.layers.iter().find_map(|l| match l {
        LayerSpec::Conv { n, .. } => Some(*n),
        _ => None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instrumented {
    pub posterior: Vec<f32>,
    pub mac_count: u64,
}

/// Naive forward pass that counts every scalar multiply it executes.
pub fn instrumented_forward(arch: &ArchSpec, weights: &WeightSet<f32>, x: &FeatureWindow) -> Result<Instrumented> {
    let mut mac_count = 0u64;
    let posterior = run(arch, weights, x.to_tensor(), ConvPath::Naive, &mut mac_count, None)?;
    Ok(Instrumented { posterior, mac_count })
}
