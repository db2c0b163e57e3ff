//! Declarative model architectures.
//!
//! An [`ArchSpec`] is an ordered list of [`LayerSpec`]s applied to a single
//! `t x 40` log-mel window. Convolution layers apply ReLU after the
//! convolution and before their (optional) max pooling; the low-rank layer is
//! a bias-free linear projection; dense layers use ReLU; the last layer is
//! always a softmax over the labels.

mod forward;
mod weights;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{KwsError, Result};
use crate::frontend::ContextConfig;
use crate::tensor::{conv_output_dims, pool_output_dims, Dims3, PoolPair, StridePair};

pub use forward::{forward, forward_with, ConvPath};
pub(crate) use forward::{run, Record};
pub use weights::{manifest, NamedTensor, WeightSet};

/// Log-mel bins per frame expected by every architecture.
pub const INPUT_BINS: usize = 40;

/// Architecture names understood by [`builtin`].
pub const BUILTIN_NAMES: [&str; 5] = ["dnn", "cnn-trad", "cnn-one", "cnn-tstride2", "cnn-tpool2"];

/// Parameter cap used to size the time-subsampled CNNs.
pub const DEFAULT_PARAM_CAP: u64 = 250_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        m: usize,
        r: usize,
        n: usize,
        strides: StridePair,
        pool: PoolPair,
    },
    Flatten,
    LowRank {
        k: usize,
    },
    Dense {
        units: usize,
    },
    SoftmaxOut {
        labels: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    pub input_t: usize,
    pub input_f: usize,
    pub context: ContextConfig,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Shape {
    Map(Dims3),
    Vector(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match self {
            Shape::Map(d) => d.len(),
            Shape::Vector(n) => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Map(d) => d.fmt(f),
            Shape::Vector(n) => n.fmt(f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Conv,
    Pool,
    Flatten,
    LowRank,
    Dense,
    Softmax,
}

/// One shape-changing step. A pooled conv layer yields two steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Index into `ArchSpec::layers`.
    pub layer: usize,
    pub name: String,
    pub kind: StepKind,
    pub input: Shape,
    pub output: Shape,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeTrace {
    pub input: Shape,
    pub steps: Vec<TraceStep>,
}

impl ShapeTrace {
    /// Input shape followed by the output of every step.
    pub fn shapes(&self) -> Vec<Shape> {
        std::iter::once(self.input)
            .chain(self.steps.iter().map(|s| s.output))
            .collect()
    }

    pub fn output(&self) -> Shape {
        self.steps.last().map_or(self.input, |s| s.output)
    }
}

impl ArchSpec {
    pub fn labels(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::SoftmaxOut { labels }) => *labels,
            _ => 0,
        }
    }

    pub fn conv_layers(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv { .. }))
            .count()
    }

    pub fn input_dims(&self) -> Dims3 {
        Dims3::new(self.input_t, self.input_f, 1)
    }

    pub fn validate(&self) -> Result<ShapeTrace> {
        validate(self)
    }
}

fn arch_err(layer: usize, reason: impl Into<String>) -> KwsError {
    KwsError::InvalidArch {
        layer,
        reason: reason.into(),
    }
}

/// Traces shapes through every layer. Errors name the first failing layer
/// (1-based; 0 means the input/header).
pub fn validate(arch: &ArchSpec) -> Result<ShapeTrace> {
    if arch.input_f != INPUT_BINS {
        return Err(arch_err(0, format!("input_f must be {INPUT_BINS}, got {}", arch.input_f)));
    }
    if arch.input_t != arch.context.frames() {
        return Err(arch_err(
            0,
            format!(
                "input_t {} does not match context {}+1+{}",
                arch.input_t, arch.context.left, arch.context.right
            ),
        ));
    }
    match arch.layers.last() {
        Some(LayerSpec::SoftmaxOut { .. }) => {}
        _ => return Err(arch_err(arch.layers.len(), "last layer must be SoftmaxOut")),
    }

    let input = Shape::Map(arch.input_dims());
    let mut shape = input;
    let mut steps = Vec::new();
    let (mut convs, mut lowranks, mut denses) = (0, 0, 0);
    let last = arch.layers.len() - 1;

    for (idx, layer) in arch.layers.iter().enumerate() {
        let number = idx + 1;
        let mut push = |name: String, kind: StepKind, input: Shape, output: Shape| {
            if output.is_empty() {
                return Err(arch_err(number, format!("{name} output {output} has an empty axis")));
            }
            steps.push(TraceStep {
                layer: idx,
                name,
                kind,
                input,
                output,
            });
            Ok(output)
        };
        shape = match (*layer, shape) {
            (LayerSpec::Conv { m, r, n, strides, pool }, Shape::Map(dims)) => {
                if m == 0 || r == 0 || n == 0 {
                    return Err(arch_err(number, "conv sizes must be >= 1"));
                }
                if strides.time == 0 || strides.freq == 0 || pool.time == 0 || pool.freq == 0 {
                    return Err(arch_err(number, "strides and pool sizes must be >= 1"));
                }
                convs += 1;
                let out = conv_output_dims(dims, m, r, n, strides).map_err(|e| arch_err(number, e.to_string()))?;
                let conv_out = push(format!("conv{convs}"), StepKind::Conv, shape, Shape::Map(out))?;
                if pool.is_identity() {
                    conv_out
                } else {
                    let pooled = pool_output_dims(out, pool).map_err(|e| arch_err(number, e.to_string()))?;
                    push(format!("pool{convs}"), StepKind::Pool, conv_out, Shape::Map(pooled))?
                }
            }
            (LayerSpec::Conv { .. }, Shape::Vector(_)) => {
                return Err(arch_err(number, "conv layer needs a feature map, found a vector"));
            }
            (LayerSpec::Flatten, Shape::Map(d)) => push("flatten".into(), StepKind::Flatten, shape, Shape::Vector(d.len()))?,
            (LayerSpec::Flatten, Shape::Vector(_)) => {
                return Err(arch_err(number, "flatten applied to a vector"));
            }
            (LayerSpec::LowRank { .. } | LayerSpec::Dense { .. } | LayerSpec::SoftmaxOut { .. }, Shape::Map(_)) => {
                return Err(arch_err(number, "flatten required before low-rank/dense/softmax layers"));
            }
            (LayerSpec::LowRank { k }, Shape::Vector(_)) => {
                lowranks += 1;
                push(format!("lowrank{lowranks}"), StepKind::LowRank, shape, Shape::Vector(k))?
            }
            (LayerSpec::Dense { units }, Shape::Vector(_)) => {
                denses += 1;
                push(format!("dense{denses}"), StepKind::Dense, shape, Shape::Vector(units))?
            }
            (LayerSpec::SoftmaxOut { labels }, Shape::Vector(_)) => {
                if idx != last {
                    return Err(arch_err(number, "SoftmaxOut must be the last layer"));
                }
                if labels < 2 {
                    return Err(arch_err(number, format!("need at least 2 labels, got {labels}")));
                }
                push("softmax".into(), StepKind::Softmax, shape, Shape::Vector(labels))?
            }
        };
    }
    Ok(ShapeTrace { input, steps })
}

fn check_labels(labels: usize) -> Result<()> {
    if labels < 2 {
        return Err(KwsError::InvalidConfig(format!("need at least 2 labels, got {labels}")));
    }
    Ok(())
}

/// Fully connected baseline: 36-frame context, three ReLU layers of 128.
pub fn build_dnn_baseline(labels: usize) -> Result<ArchSpec> {
    check_labels(labels)?;
    let ctx = ContextConfig::DNN;
    Ok(ArchSpec {
        name: "dnn".into(),
        input_t: ctx.frames(),
        input_f: INPUT_BINS,
        context: ctx,
        layers: vec![
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 128 },
            LayerSpec::Dense { units: 128 },
            LayerSpec::Dense { units: 128 },
            LayerSpec::SoftmaxOut { labels },
        ],
    })
}

fn trad_layers(labels: usize, n: usize, conv1_strides: StridePair, conv1_pool: PoolPair) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv {
            m: 21,
            r: 9,
            n,
            strides: conv1_strides,
            pool: conv1_pool,
        },
        LayerSpec::Conv {
            m: 10,
            r: 4,
            n,
            strides: StridePair::UNIT,
            pool: PoolPair::NONE,
        },
        LayerSpec::Flatten,
        LayerSpec::LowRank { k: 32 },
        LayerSpec::Dense { units: 128 },
        LayerSpec::SoftmaxOut { labels },
    ]
}

/// Two convolutions (21x9 then 10x4, 64 maps, frequency pooling 3 after the
/// first), a 32-d low-rank projection and one dense layer.
pub fn build_cnn_trad(labels: usize) -> Result<ArchSpec> {
    check_labels(labels)?;
    let ctx = ContextConfig::CNN;
    Ok(ArchSpec {
        name: "cnn-trad".into(),
        input_t: ctx.frames(),
        input_f: INPUT_BINS,
        context: ctx,
        layers: trad_layers(labels, 64, StridePair::UNIT, PoolPair { time: 1, freq: 3 }),
    })
}

/// Multiply-limited CNN: a single convolution whose filter spans the whole
/// 32-frame input, then low-rank and two dense layers.
pub fn build_cnn_one(labels: usize) -> Result<ArchSpec> {
    check_labels(labels)?;
    let ctx = ContextConfig::CNN;
    Ok(ArchSpec {
        name: "cnn-one".into(),
        input_t: ctx.frames(),
        input_f: INPUT_BINS,
        context: ctx,
        layers: vec![
            LayerSpec::Conv {
                m: ctx.frames(),
                r: 9,
                n: 64,
                strides: StridePair::UNIT,
                pool: PoolPair::NONE,
            },
            LayerSpec::Flatten,
            LayerSpec::LowRank { k: 32 },
            LayerSpec::Dense { units: 128 },
            LayerSpec::Dense { units: 128 },
            LayerSpec::SoftmaxOut { labels },
        ],
    })
}

/// An architecture whose conv feature-map count is left free, to be chosen
/// under a parameter cap (see [`crate::budget::fit_to_budget`]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchTemplate {
    base: ArchSpec,
}

impl ArchTemplate {
    /// Wraps `base`; every conv layer's `n` becomes the free parameter.
    pub fn new(base: ArchSpec) -> Result<Self> {
        let template = ArchTemplate { base };
        template.instantiate(1)?;
        Ok(template)
    }

    pub fn name(&self) -> &str {
        &self.base.name
    }

    pub fn instantiate(&self, n: usize) -> Result<ArchSpec> {
        if n == 0 {
            return Err(KwsError::InvalidConfig("feature-map count must be >= 1".into()));
        }
        let mut arch = self.base.clone();
        for layer in &mut arch.layers {
            if let LayerSpec::Conv { n: maps, .. } = layer {
                *maps = n;
            }
        }
        validate(&arch)?;
        Ok(arch)
    }
}

/// cnn-trad topology on a 48-frame input with the first convolution strided
/// by `stride` frames in time.
pub fn build_cnn_tstride(labels: usize, stride: usize) -> Result<ArchTemplate> {
    check_labels(labels)?;
    if stride < 2 {
        return Err(KwsError::InvalidConfig(format!("time stride must be >= 2, got {stride}")));
    }
    let ctx = ContextConfig::WIDE;
    ArchTemplate::new(ArchSpec {
        name: format!("cnn-tstride{stride}"),
        input_t: ctx.frames(),
        input_f: INPUT_BINS,
        context: ctx,
        layers: trad_layers(labels, 1, StridePair { time: stride, freq: 1 }, PoolPair { time: 1, freq: 3 }),
    })
}

/// cnn-trad topology on a 48-frame input with the first convolution max
/// pooled over `pool` frames in time.
pub fn build_cnn_tpool(labels: usize, pool: usize) -> Result<ArchTemplate> {
    check_labels(labels)?;
    if pool < 2 {
        return Err(KwsError::InvalidConfig(format!("time pool must be >= 2, got {pool}")));
    }
    let ctx = ContextConfig::WIDE;
    ArchTemplate::new(ArchSpec {
        name: format!("cnn-tpool{pool}"),
        input_t: ctx.frames(),
        input_f: INPUT_BINS,
        context: ctx,
        layers: trad_layers(labels, 1, StridePair::UNIT, PoolPair { time: pool, freq: 3 }),
    })
}

/// Resolves a built-in architecture by name. The time-subsampled variants
/// are sized to the largest feature-map count under [`DEFAULT_PARAM_CAP`].
pub fn builtin(name: &str, labels: usize) -> Result<ArchSpec> {
    match name {
        "dnn" => build_dnn_baseline(labels),
        "cnn-trad" => build_cnn_trad(labels),
        "cnn-one" => build_cnn_one(labels),
        "cnn-tstride2" => crate::budget::fit_to_budget(&build_cnn_tstride(labels, 2)?, DEFAULT_PARAM_CAP),
        "cnn-tpool2" => crate::budget::fit_to_budget(&build_cnn_tpool(labels, 2)?, DEFAULT_PARAM_CAP),
        other => Err(KwsError::InvalidConfig(format!(
            "unknown architecture {other:?} (expected one of {})",
            BUILTIN_NAMES.join(", ")
        ))),
    }
}

/// Template for the names that take a free feature-map count.
pub fn builtin_template(name: &str, labels: usize) -> Result<ArchTemplate> {
    match name {
        "cnn-tstride2" => build_cnn_tstride(labels, 2),
        "cnn-tpool2" => build_cnn_tpool(labels, 2),
        other => Err(KwsError::InvalidConfig(format!(
            "{other:?} has no free feature-map count (expected cnn-tstride2 or cnn-tpool2)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(t: usize, f: usize, c: usize) -> Shape {
        Shape::Map(Dims3::new(t, f, c))
    }

    #[test]
    fn trad_trace() {
        let trace = build_cnn_trad(4).unwrap().validate().unwrap();
        assert_eq!(
            trace.shapes(),
            vec![
                dims(32, 40, 1),
                dims(12, 32, 64),
                dims(12, 10, 64),
                dims(3, 7, 64),
                Shape::Vector(1344),
                Shape::Vector(32),
                Shape::Vector(128),
                Shape::Vector(4),
            ]
        );
    }

    #[test]
    fn trad_hyperparameters() {
        let arch = build_cnn_trad(4).unwrap();
        assert_eq!(arch.conv_layers(), 2);
        let LayerSpec::Conv { m, r, pool, .. } = arch.layers[0] else { panic!() };
        assert_eq!((m, r, pool.freq), (21, 9, 3));
        let LayerSpec::Conv { r, .. } = arch.layers[1] else { panic!() };
        assert_eq!(r, 4);
    }

    #[test]
    fn dnn_trace() {
        let arch = build_dnn_baseline(4).unwrap();
        assert_eq!(arch.input_t, 36);
        let shapes = arch.validate().unwrap().shapes();
        assert_eq!(
            shapes,
            vec![
                dims(36, 40, 1),
                Shape::Vector(1440),
                Shape::Vector(128),
                Shape::Vector(128),
                Shape::Vector(128),
                Shape::Vector(4),
            ]
        );
    }

    #[test]
    fn cnn_one_structure() {
        let arch = build_cnn_one(4).unwrap();
        assert_eq!(arch.conv_layers(), 1);
        let LayerSpec::Conv { m, .. } = arch.layers[0] else { panic!() };
        assert_eq!(m, arch.input_t);
        let after_lowrank: Vec<_> = arch
            .layers
            .iter()
            .skip_while(|l| !matches!(l, LayerSpec::LowRank { .. }))
            .filter(|l| matches!(l, LayerSpec::Dense { .. }))
            .collect();
        assert_eq!(after_lowrank.len(), 2);
        let shapes = arch.validate().unwrap().shapes();
        assert_eq!(shapes[1], dims(1, 32, 64));
        assert_eq!(shapes[2], Shape::Vector(2048));
    }

    #[test]
    fn subsampled_templates() {
        let stride = build_cnn_tstride(4, 2).unwrap().instantiate(8).unwrap();
        assert_eq!(stride.input_t, 48);
        assert_eq!(stride.validate().unwrap().shapes()[1], dims(14, 32, 8));

        let pool = build_cnn_tpool(4, 2).unwrap().instantiate(8).unwrap();
        let shapes = pool.validate().unwrap().shapes();
        assert_eq!(shapes[1], dims(28, 32, 8));
        assert_eq!(shapes[2], dims(14, 10, 8));

        assert!(build_cnn_tstride(4, 1).is_err());
        // a stride so large the second conv has nothing to cover
        assert!(build_cnn_tstride(4, 20).is_err());
        assert!(build_cnn_tpool(4, 9).is_err());
    }

    #[test]
    fn builders_reject_single_label() {
        assert!(build_dnn_baseline(1).is_err());
        assert!(build_cnn_trad(0).is_err());
        assert!(build_cnn_one(1).is_err());
        assert!(build_cnn_tpool(1, 2).is_err());
    }

    #[test]
    fn builtins_all_validate() {
        for labels in [2, 4, 11] {
            for name in BUILTIN_NAMES {
                let arch = builtin(name, labels).unwrap();
                assert_eq!(arch.name, name);
                assert_eq!(arch.validate().unwrap().output(), Shape::Vector(labels));
            }
        }
        assert!(builtin("bogus", 4).is_err());
    }

    #[test]
    fn filter_taller_than_input_fails_at_layer_one() {
        let mut arch = build_cnn_trad(4).unwrap();
        arch.layers[0] = LayerSpec::Conv {
            m: 33,
            r: 9,
            n: 4,
            strides: StridePair::UNIT,
            pool: PoolPair::NONE,
        };
        match validate(&arch) {
            Err(KwsError::InvalidArch { layer: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn softmax_must_be_last() {
        let mut arch = build_dnn_baseline(3).unwrap();
        arch.layers.push(LayerSpec::Dense { units: 3 });
        assert!(matches!(validate(&arch), Err(KwsError::InvalidArch { .. })));
        let mut arch = build_dnn_baseline(3).unwrap();
        arch.layers.insert(2, LayerSpec::SoftmaxOut { labels: 3 });
        assert!(matches!(validate(&arch), Err(KwsError::InvalidArch { layer: 3, .. })));
    }

    #[test]
    fn dense_after_conv_needs_flatten() {
        let mut arch = build_cnn_one(4).unwrap();
        arch.layers.remove(1);
        assert!(matches!(validate(&arch), Err(KwsError::InvalidArch { layer: 2, .. })));
    }

    #[test]
    fn context_must_match_input() {
        let mut arch = build_cnn_one(4).unwrap();
        arch.context = ContextConfig::DNN;
        assert!(matches!(validate(&arch), Err(KwsError::InvalidArch { layer: 0, .. })));
    }
}
