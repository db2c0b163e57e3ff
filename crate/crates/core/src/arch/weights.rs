use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{ArchSpec, Shape, StepKind};
use crate::error::{KwsError, Result};
use crate::tensor::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<T = f32> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T> NamedTensor<T> {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// All trainable tensors of an architecture, in layer order.
///
/// Naming: `conv{i}.weight [m, r, c_in, n]`, `conv{i}.bias [n]`,
/// `lowrank{i}.weight [k, in]`, `dense{i}.weight [units, in]`,
/// `dense{i}.bias [units]`, `softmax.weight [labels, in]`, `softmax.bias [labels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet<T = f32> {
    tensors: Vec<NamedTensor<T>>,
}

/// Names and shapes of the tensors `arch` needs, in layer order.
pub fn manifest(arch: &ArchSpec) -> Result<Vec<(String, Vec<usize>)>> {
    let trace = arch.validate()?;
    let mut out = Vec::new();
    for step in &trace.steps {
        let in_len = step.input.len();
        match (step.kind, arch.layers[step.layer]) {
            (StepKind::Conv, crate::arch::LayerSpec::Conv { m, r, n, .. }) => {
                let Shape::Map(d) = step.input else { unreachable!("validated") };
                out.push((format!("{}.weight", step.name), vec![m, r, d.channels, n]));
                out.push((format!("{}.bias", step.name), vec![n]));
            }
            (StepKind::LowRank, _) => {
                out.push((format!("{}.weight", step.name), vec![step.output.len(), in_len]));
            }
            (StepKind::Dense | StepKind::Softmax, _) => {
                out.push((format!("{}.weight", step.name), vec![step.output.len(), in_len]));
                out.push((format!("{}.bias", step.name), vec![step.output.len()]));
            }
            _ => {}
        }
    }
    Ok(out)
}

impl<T: Scalar> WeightSet<T> {
    pub fn from_tensors(tensors: Vec<NamedTensor<T>>) -> Self {
        WeightSet { tensors }
    }

    pub fn zeros(arch: &ArchSpec) -> Result<Self> {
        Ok(WeightSet {
            tensors: manifest(arch)?
                .into_iter()
                .map(|(name, shape)| {
                    let len = shape.iter().product();
                    NamedTensor {
                        name,
                        shape,
                        data: vec![T::zero(); len],
                    }
                })
                .collect(),
        })
    }

    /// Every entry (biases included) drawn uniformly from `[-scale, scale]`
    /// by a ChaCha8 generator seeded with `seed`, in manifest order.
    pub fn init_uniform(arch: &ArchSpec, scale: f64, seed: u64) -> Result<Self> {
        let mut ws = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if scale > 0.0 {
            for t in &mut ws.tensors {
                for v in &mut t.data {
                    *v = T::from_f64(rng.random_range(-scale..=scale));
                }
            }
        }
        Ok(ws)
    }

    pub fn tensors(&self) -> &[NamedTensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [NamedTensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut NamedTensor<T>> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub(crate) fn data(&self, name: &str) -> Result<&[T]> {
        self.get(name).map(|t| t.data.as_slice()).ok_or_else(|| KwsError::WeightMismatch {
            missing: vec![name.to_string()],
            misshaped: vec![],
        })
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> WeightSet<U> {
        WeightSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| NamedTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Checks names, order and shapes against `arch`, listing every missing
    /// or mis-shaped tensor.
    pub fn check(&self, arch: &ArchSpec) -> Result<()> {
        let expected = manifest(arch)?;
        let mut missing = Vec::new();
        let mut misshaped = Vec::new();
        for (name, shape) in &expected {
            match self.get(name) {
                None => missing.push(name.clone()),
                Some(t) if &t.shape != shape || t.data.len() != shape.iter().product::<usize>() => {
                    misshaped.push(format!("{name}: expected {shape:?}, found {:?}", t.shape))
                }
                Some(_) => {}
            }
        }
        for t in &self.tensors {
            if !expected.iter().any(|(n, _)| n == &t.name) {
                misshaped.push(format!("{}: not part of {}", t.name, arch.name));
            }
        }
        let in_order = self.tensors.iter().map(|t| &t.name).eq(expected.iter().map(|(n, _)| n));
        if missing.is_empty() && misshaped.is_empty() && !in_order {
            misshaped.push("tensor order differs from architecture manifest".into());
        }
        if missing.is_empty() && misshaped.is_empty() {
            Ok(())
        } else {
            Err(KwsError::WeightMismatch { missing, misshaped })
        }
    }
}
