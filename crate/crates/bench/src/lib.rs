//! Seeded inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kws_core::tensor::{Dims3, FilterBank, Tensor3};
use kws_core::{ArchSpec, FeatureWindow, Waveform, WeightSet};

/// Log-mel-like window for `arch`.
pub fn window(arch: &ArchSpec, seed: u64) -> FeatureWindow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..arch.input_t * arch.input_f).map(|_| rng.random_range(-10.0..5.0)).collect();
    FeatureWindow::new(arch.input_t, arch.input_f, data).expect("sized for arch")
}

pub fn weights(arch: &ArchSpec, seed: u64) -> WeightSet<f32> {
    WeightSet::init_uniform(arch, 0.05, seed).expect("valid arch")
}

/// Input tensor and filter bank with the given shapes, half the inputs zero
/// as after a ReLU.
pub fn conv_case(input: Dims3, m: usize, r: usize, n: usize, seed: u64) -> (Tensor3<f32>, FilterBank<'static, f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor3::from_fn(input, |_, _, _| {
        let v: f32 = rng.random_range(-1.0..1.0);
        v.max(0.0)
    });
    let weights = (0..m * r * input.channels * n).map(|_| rng.random_range(-0.1..0.1)).collect::<Vec<f32>>();
    let bias = (0..n).map(|_| rng.random_range(-0.1..0.1)).collect::<Vec<f32>>();
    let bank = FilterBank::new(m, r, input.channels, n, weights, bias).expect("consistent shapes");
    (x, bank)
}

/// One second of a two-tone signal in noise.
pub fn waveform(seed: u64) -> Waveform {
    kws_core::train::synthetic_clip(1, 0.1, seed).expect("valid label")
}
