//! Log-mel feature extraction: 25 ms frames every 10 ms, 40 triangular mel
//! filters, natural-log energies, then left/right context stacking into the
//! `t x f` windows consumed by the models.

mod mel;
pub mod wav;

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{KwsError, Result};
use crate::tensor::{Dims3, Scalar, Tensor3};

pub use mel::{build_mel_filterbank, hz_to_mel, mel_to_hz, MelFilterbank};

/// The only sample rate the frontend accepts.
pub const SAMPLE_RATE: u32 = 16_000;

/// Seconds between consecutive frames at the default hop.
pub const FRAME_SHIFT_SECONDS: f64 = 0.010;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(KwsError::InvalidConfig("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(KwsError::InvalidConfig(format!("sample {i} is not finite")));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameConfig {
    pub window_length: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub preemphasis: f64,
    pub mel_filters: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for FrameConfig {
    fn default() -> Self {
        FrameConfig {
            window_length: 400,
            hop: 160,
            fft_size: 512,
            preemphasis: 0.97,
            mel_filters: 40,
            fmin: 20.0,
            fmax: 8000.0,
            log_floor: 1e-10,
        }
    }
}

impl FrameConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let bad = |msg: String| Err(KwsError::InvalidConfig(msg));
        if self.hop == 0 || self.hop > self.window_length || self.window_length > self.fft_size {
            return bad(format!(
                "need 0 < hop <= window_length <= fft_size (got {}, {}, {})",
                self.hop, self.window_length, self.fft_size
            ));
        }
        if !(0.0..1.0).contains(&self.preemphasis) {
            return bad(format!("preemphasis {} outside [0, 1)", self.preemphasis));
        }
        if self.mel_filters == 0 {
            return bad("mel_filters must be >= 1".into());
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= sample_rate as f64 / 2.0) {
            return bad(format!(
                "need 0 <= fmin < fmax <= {} (got {}, {})",
                sample_rate as f64 / 2.0,
                self.fmin,
                self.fmax
            ));
        }
        if self.log_floor.is_nan() || self.log_floor <= 0.0 {
            return bad("log_floor must be positive".into());
        }
        Ok(())
    }

    /// `floor((len - window) / hop) + 1`, or `None` when shorter than a window.
    pub fn frame_count(&self, samples: usize) -> Option<usize> {
        (samples >= self.window_length).then(|| (samples - self.window_length) / self.hop + 1)
    }
}

/// One frame of log filterbank energies.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelFrame {
    pub values: Vec<f32>,
}

/// Number of neighbouring frames stacked around the current one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContextConfig {
    pub left: usize,
    pub right: usize,
}

impl ContextConfig {
    /// 25 left + current + 10 right = 36 frames.
    pub const DNN: ContextConfig = ContextConfig { left: 25, right: 10 };
    /// 23 + 1 + 8 = 32 frames, the CNN input height.
    pub const CNN: ContextConfig = ContextConfig { left: 23, right: 8 };
    /// 39 + 1 + 8 = 48 frames for the time-subsampled CNNs.
    pub const WIDE: ContextConfig = ContextConfig { left: 39, right: 8 };
    pub const NONE: ContextConfig = ContextConfig { left: 0, right: 0 };

    pub const fn new(left: usize, right: usize) -> Self {
        ContextConfig { left, right }
    }

    pub const fn frames(&self) -> usize {
        self.left + 1 + self.right
    }
}

/// A `t x f` matrix of stacked log-mel frames, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    pub t: usize,
    pub f: usize,
    pub data: Vec<f32>,
}

impl FeatureWindow {
    pub fn new(t: usize, f: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != t * f {
            return Err(KwsError::Shape {
                op: "feature window",
                axis: crate::error::Axis::Length,
                expected: t * f,
                found: data.len(),
            });
        }
        Ok(FeatureWindow { t, f, data })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.f..(i + 1) * self.f]
    }

    /// Single-channel tensor view for the model input.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor3<T> {
        let data = self.data.iter().map(|&x| T::from_f64(x as f64)).collect();
        Tensor3::new(Dims3::new(self.t, self.f, 1), data).expect("window dims are consistent")
    }
}

/// Splits the waveform into overlapping frames, applying pre-emphasis
/// (`y[n] = x[n] - a x[n-1]`, `y[0] = x[0]`) over the whole signal and then a
/// Hamming window to each frame.
pub fn frame_signal(w: &Waveform, cfg: &FrameConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate(w.sample_rate)?;
    let x = w.samples();
    let count = cfg.frame_count(x.len()).ok_or(KwsError::InsufficientAudio {
        samples: x.len(),
        needed: cfg.window_length,
    })?;

    let mut emphasized = Vec::with_capacity(x.len());
    let mut prev = 0.0f64;
    for &s in x {
        let s = s as f64;
        emphasized.push(s - cfg.preemphasis * prev);
        prev = s;
    }

    let n = cfg.window_length;
    let window: Vec<f64> = (0..n)
        .map(|i| {
            if n == 1 {
                1.0
            } else {
                0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()
            }
        })
        .collect();

    Ok((0..count)
        .map(|j| {
            let start = j * cfg.hop;
            emphasized[start..start + n]
                .iter()
                .zip(&window)
                .map(|(s, w)| s * w)
                .collect()
        })
        .collect())
}

/// Power spectrum of each frame (zero-padded to the filterbank's FFT size),
/// projected onto the mel filters, then `ln(max(energy, log_floor))`.
pub fn log_mel(frames: &[Vec<f64>], melbank: &MelFilterbank, log_floor: f64) -> Result<Vec<LogMelFrame>> {
    let fft = FftPlanner::<f64>::new().plan_fft_forward(melbank.fft_size());
    log_mel_with(frames, melbank, log_floor, &fft)
}

fn log_mel_with(
    frames: &[Vec<f64>],
    melbank: &MelFilterbank,
    log_floor: f64,
    fft: &Arc<dyn Fft<f64>>,
) -> Result<Vec<LogMelFrame>> {
    let size = melbank.fft_size();
    let mut buf = vec![Complex::new(0.0, 0.0); size];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut power = vec![0.0; melbank.bins()];
    frames
        .iter()
        .map(|frame| {
            if frame.len() > size {
                return Err(KwsError::Shape {
                    op: "log_mel frame",
                    axis: crate::error::Axis::Length,
                    expected: size,
                    found: frame.len(),
                });
            }
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (c, &s) in buf.iter_mut().zip(frame) {
                c.re = s;
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            let values = melbank
                .apply(&power)
                .into_iter()
                .map(|e| e.max(log_floor).ln() as f32)
                .collect();
            Ok(LogMelFrame { values })
        })
        .collect()
}

/// Builds the window centred on `center`, replicating the first/last frame
/// where the context runs past either end.
pub fn window_at(frames: &[LogMelFrame], center: usize, ctx: ContextConfig) -> Result<FeatureWindow> {
    let last = frames.len().checked_sub(1).ok_or(KwsError::EmptyInput("log-mel frames"))?;
    let f = frames[0].values.len();
    let t = ctx.frames();
    let mut data = Vec::with_capacity(t * f);
    for i in 0..t {
        let src = (center + i).saturating_sub(ctx.left).min(last);
        data.extend_from_slice(&frames[src].values);
    }
    FeatureWindow::new(t, f, data)
}

/// One window per input frame.
pub fn stack_context(frames: &[LogMelFrame], ctx: ContextConfig) -> Result<Vec<FeatureWindow>> {
    if frames.is_empty() {
        return Err(KwsError::EmptyInput("log-mel frames"));
    }
    (0..frames.len()).map(|j| window_at(frames, j, ctx)).collect()
}

/// Reusable feature extractor holding the filterbank and FFT plan.
#[derive(Clone)]
pub struct Frontend {
    cfg: FrameConfig,
    melbank: MelFilterbank,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Frontend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Frontend").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl Frontend {
    pub fn new(cfg: FrameConfig) -> Result<Self> {
        let melbank = build_mel_filterbank(&cfg, SAMPLE_RATE)?;
        let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);
        Ok(Frontend { cfg, melbank, fft })
    }

    pub fn config(&self) -> &FrameConfig {
        &self.cfg
    }

    pub fn melbank(&self) -> &MelFilterbank {
        &self.melbank
    }

    pub fn log_mel_frames(&self, w: &Waveform) -> Result<Vec<LogMelFrame>> {
        if w.sample_rate() != SAMPLE_RATE {
            return Err(KwsError::UnsupportedFormat(format!(
                "sample rate {} Hz (only {SAMPLE_RATE} Hz is supported)",
                w.sample_rate()
            )));
        }
        let frames = frame_signal(w, &self.cfg)?;
        log_mel_with(&frames, &self.melbank, self.cfg.log_floor, &self.fft)
    }

    pub fn windows(&self, w: &Waveform, ctx: ContextConfig) -> Result<Vec<FeatureWindow>> {
        stack_context(&self.log_mel_frames(w)?, ctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sine(hz: f64, amp: f32, samples: usize) -> Waveform {
        let x = (0..samples)
            .map(|i| amp * (2.0 * std::f64::consts::PI * hz * i as f64 / 16_000.0).sin() as f32)
            .collect();
        Waveform::new(x, SAMPLE_RATE).unwrap()
    }

    fn noise(seed: u64, samples: usize) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..samples).map(|_| rng.random_range(-0.5..0.5)).collect(), SAMPLE_RATE).unwrap()
    }

    fn frontend() -> Frontend {
        Frontend::new(FrameConfig::default()).unwrap()
    }

    #[test]
    fn one_second_gives_98_frames() {
        let cfg = FrameConfig::default();
        let w = Waveform::new(vec![0.0; 16_000], SAMPLE_RATE).unwrap();
        // brute-force enumeration of valid frame starts
        let starts = (0..16_000).step_by(160).filter(|s| s + 400 <= 16_000).count();
        assert_eq!(starts, 98);
        assert_eq!(frame_signal(&w, &cfg).unwrap().len(), 98);
    }

    #[test]
    fn window_boundaries() {
        let cfg = FrameConfig::default();
        let exact = Waveform::new(vec![0.1; 400], SAMPLE_RATE).unwrap();
        assert_eq!(frame_signal(&exact, &cfg).unwrap().len(), 1);
        let short = Waveform::new(vec![0.1; 399], SAMPLE_RATE).unwrap();
        assert!(matches!(
            frame_signal(&short, &cfg),
            Err(KwsError::InsufficientAudio { samples: 399, needed: 400 })
        ));
    }

    #[test]
    fn frames_are_preemphasized_then_windowed() {
        let cfg = FrameConfig::default();
        let w = Waveform::new((0..800).map(|i| (i % 7) as f32 / 10.0).collect(), SAMPLE_RATE).unwrap();
        let frames = frame_signal(&w, &cfg).unwrap();
        let x = w.samples();
        let n = 57;
        let start = 160;
        let ham = 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / 399.0).cos();
        let expected = (x[start + n] as f64 - 0.97 * x[start + n - 1] as f64) * ham;
        assert!((frames[1][n] - expected).abs() < 1e-12);
    }

    #[test]
    fn silence_hits_the_floor() {
        let w = Waveform::new(vec![0.0; 16_000], SAMPLE_RATE).unwrap();
        let frames = frontend().log_mel_frames(&w).unwrap();
        let floor = (1e-10f64).ln();
        assert!((floor + 23.0259).abs() < 1e-4);
        for fr in &frames {
            assert_eq!(fr.values.len(), 40);
            assert!(fr.values.iter().all(|&v| (v as f64 - floor).abs() < 1e-6));
        }
    }

    #[test]
    fn tone_peaks_at_nearest_filter() {
        let fe = frontend();
        let target = fe.melbank().nearest_filter(1000.0);
        let frames = fe.log_mel_frames(&sine(1000.0, 0.5, 16_000)).unwrap();
        for fr in &frames {
            let argmax = fr
                .values
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax, target);
        }
    }

    #[test]
    fn doubling_amplitude_adds_ln4() {
        let fe = frontend();
        let w = noise(9, 4000);
        let w2 = Waveform::new(w.samples().iter().map(|s| s * 2.0).collect(), SAMPLE_RATE).unwrap();
        let a = fe.log_mel_frames(&w).unwrap();
        let b = fe.log_mel_frames(&w2).unwrap();
        let floor = (1e-10f64).ln() as f32;
        for (fa, fb) in a.iter().zip(&b) {
            for (&x, &y) in fa.values.iter().zip(&fb.values) {
                if x > floor + 1.0 {
                    assert!(((y - x) as f64 - 4f64.ln()).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn hop_shift_shifts_frames() {
        let fe = frontend();
        let w = noise(4, 8000);
        let shifted = Waveform::new(w.samples()[160..].to_vec(), SAMPLE_RATE).unwrap();
        let a = fe.log_mel_frames(&w).unwrap();
        let b = fe.log_mel_frames(&shifted).unwrap();
        assert_eq!(a.len(), b.len() + 1);
        // frame 0 of the shifted signal sees a different pre-emphasis seed sample
        for j in 1..b.len() {
            for (&x, &y) in a[j + 1].values.iter().zip(&b[j].values) {
                assert!(((x - y) / x.abs().max(1e-3)).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn wrong_sample_rate_rejected() {
        let w = Waveform::new(vec![0.0; 8000], 8000).unwrap();
        assert!(matches!(frontend().log_mel_frames(&w), Err(KwsError::UnsupportedFormat(_))));
    }

    #[test]
    fn context_stacking_shapes() {
        let frames: Vec<LogMelFrame> = (0..40)
            .map(|i| LogMelFrame {
                values: (0..40).map(|k| (i * 100 + k) as f32).collect(),
            })
            .collect();
        let dnn = stack_context(&frames, ContextConfig::DNN).unwrap();
        assert_eq!(dnn.len(), 40);
        assert!(dnn.iter().all(|w| w.t == 36 && w.f == 40));
        let cnn = stack_context(&frames, ContextConfig::CNN).unwrap();
        assert!(cnn.iter().all(|w| w.t == 32 && w.f == 40));
        let bare = stack_context(&frames, ContextConfig::NONE).unwrap();
        for (w, fr) in bare.iter().zip(&frames) {
            assert_eq!(w.t, 1);
            assert_eq!(w.data, fr.values);
        }
        assert!(matches!(stack_context(&[], ContextConfig::CNN), Err(KwsError::EmptyInput(_))));
    }

    #[test]
    fn context_edges_replicate() {
        let frames: Vec<LogMelFrame> = (0..5).map(|i| LogMelFrame { values: vec![i as f32; 3] }).collect();
        let w = window_at(&frames, 0, ContextConfig::new(2, 3)).unwrap();
        let rows: Vec<f32> = (0..w.t).map(|i| w.row(i)[0]).collect();
        assert_eq!(rows, vec![0.0, 0.0, 0.0, 1.0, 2.0, 3.0]);
        let w = window_at(&frames, 4, ContextConfig::new(1, 2)).unwrap();
        let rows: Vec<f32> = (0..w.t).map(|i| w.row(i)[0]).collect();
        assert_eq!(rows, vec![3.0, 4.0, 4.0, 4.0]);
    }

    #[test]
    fn deterministic_bytes() {
        let fe = frontend();
        let w = noise(17, 6000);
        let a = fe.windows(&w, ContextConfig::CNN).unwrap();
        let b = fe.windows(&w, ContextConfig::CNN).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(x.data.iter().zip(&y.data).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    proptest! {
        #[test]
        fn frame_count_matches_enumeration(len in 0usize..5000, win in 1usize..600, hop_frac in 0.0f64..1.0) {
            let hop = 1 + ((win - 1) as f64 * hop_frac) as usize;
            let cfg = FrameConfig { window_length: win, hop, fft_size: win.next_power_of_two().max(64), ..FrameConfig::default() };
            let brute = (0..len).step_by(hop).filter(|s| s + win <= len).count();
            match cfg.frame_count(len) {
                Some(n) => prop_assert_eq!(n, brute),
                None => prop_assert_eq!(brute, 0),
            }
        }

        #[test]
        fn stacked_rows_are_bitwise_copies(n in 1usize..30, left in 0usize..8, right in 0usize..8, seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let frames: Vec<LogMelFrame> = (0..n)
                .map(|_| LogMelFrame { values: (0..4).map(|_| rng.random_range(-30.0..10.0)).collect() })
                .collect();
            let ctx = ContextConfig::new(left, right);
            let windows = stack_context(&frames, ctx).unwrap();
            prop_assert_eq!(windows.len(), n);
            for (j, w) in windows.iter().enumerate() {
                for i in 0..w.t {
                    let src = (j + i).saturating_sub(left).min(n - 1);
                    let same = w.row(i).iter().zip(&frames[src].values).all(|(a, b)| a.to_bits() == b.to_bits());
                    prop_assert!(same);
                }
            }
        }
    }
}
