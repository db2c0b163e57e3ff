//! Labelled audio: the synthetic tone-signature corpus and on-disk datasets
//! laid out as `<root>/<class>/<clip>.wav`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{KwsError, Result};
use crate::frontend::wav::read_wav;
use crate::frontend::{build_mel_filterbank, window_at, ContextConfig, FrameConfig, Frontend, Waveform, SAMPLE_RATE};
use crate::model_io::FILLER_LABEL;
use crate::train::LabeledExample;

/// Keyword classes the synthetic generator can tell apart.
pub const MAX_KEYWORDS: usize = 8;
/// Peak amplitude of each signature tone.
pub const TONE_AMPLITUDE: f64 = 0.3;
/// Length of each on and each off segment of the keyword envelope.
pub const ENVELOPE_SECONDS: f64 = 0.1;
/// Windows cut from every clip for training.
pub const WINDOWS_PER_CLIP: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub keywords: usize,
    pub examples_per_class: usize,
    pub noise_level: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(keywords: usize, examples_per_class: usize, seed: u64) -> Self {
        SyntheticSpec {
            keywords,
            examples_per_class,
            noise_level: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_KEYWORDS).contains(&self.keywords) {
            return Err(KwsError::InvalidConfig(format!(
                "keywords must be in 1..={MAX_KEYWORDS}, got {}",
                self.keywords
            )));
        }
        if self.examples_per_class == 0 {
            return Err(KwsError::InvalidConfig("examples_per_class must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.noise_level) {
            return Err(KwsError::InvalidConfig(format!(
                "noise_level must be in [0, 1), got {}",
                self.noise_level
            )));
        }
        Ok(())
    }

    /// `_filler` followed by `kw01`, `kw02`, ...
    pub fn labels(&self) -> Vec<String> {
        synthetic_labels(self.keywords)
    }
}

pub fn synthetic_labels(keywords: usize) -> Vec<String> {
    std::iter::once(FILLER_LABEL.to_string())
        .chain((1..=keywords).map(|k| format!("kw{k:02}")))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub waveform: Waveform,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub labels: Vec<String>,
    pub train: Vec<Clip>,
    pub test: Vec<Clip>,
}

/// Tone pair (Hz) of keyword class `label` (1-based; 0 is the filler).
pub fn signature_hz(label: usize) -> Result<[f64; 2]> {
    if !(1..=MAX_KEYWORDS).contains(&label) {
        return Err(KwsError::LabelOutOfRange {
            label,
            labels: MAX_KEYWORDS + 1,
        });
    }
    let bank = build_mel_filterbank(&FrameConfig::default(), SAMPLE_RATE)?;
    let k = label - 1;
    Ok([bank.centers_hz()[2 * k + 4], bank.centers_hz()[2 * k + 20]])
}

fn render(label: usize, noise_level: f64, rng: &mut ChaCha8Rng) -> Result<Waveform> {
    let len = SAMPLE_RATE as usize;
    let rate = SAMPLE_RATE as f64;
    let tones = if label == 0 {
        Vec::new()
    } else {
        signature_hz(label)?
            .into_iter()
            .map(|hz| (hz, rng.random_range(0.0..std::f64::consts::TAU)))
            .collect()
    };
    let samples = (0..len)
        .map(|i| {
            let t = i as f64 / rate;
            let on = ((t / ENVELOPE_SECONDS) as usize).is_multiple_of(2);
            let tone: f64 = if on {
                tones
                    .iter()
                    .map(|&(hz, phase)| TONE_AMPLITUDE * (std::f64::consts::TAU * hz * t + phase).sin())
                    .sum()
            } else {
                0.0
            };
            let noise = if noise_level > 0.0 {
                rng.random_range(-noise_level..noise_level)
            } else {
                0.0
            };
            (tone + noise) as f32
        })
        .collect();
    Waveform::new(samples, SAMPLE_RATE)
}

/// One second of class `label` (0 = noise only).
pub fn synthetic_clip(label: usize, noise_level: f64, seed: u64) -> Result<Waveform> {
    render(label, noise_level, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// `examples_per_class` training clips and half as many test clips for the
/// filler and every keyword.
pub fn make_synthetic_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let classes = spec.keywords + 1;
    let mut split = |count: usize| -> Result<Vec<Clip>> {
        let mut clips = Vec::with_capacity(count * classes);
        for _ in 0..count {
            for label in 0..classes {
                clips.push(Clip {
                    waveform: render(label, spec.noise_level, &mut rng)?,
                    label,
                });
            }
        }
        Ok(clips)
    };
    let train = split(spec.examples_per_class)?;
    let test = split((spec.examples_per_class / 2).max(1))?;
    Ok(Dataset {
        labels: spec.labels(),
        train,
        test,
    })
}

/// Reads `<root>/<class>/*.wav`. Classes are the sorted subdirectory names and
/// must include `_filler`; every clip goes to the training split.
pub fn load_dataset_dir(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    let mut classes: Vec<_> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    classes.sort();
    if !classes.iter().any(|c| c == FILLER_LABEL) {
        return Err(KwsError::InvalidDataset(format!(
            "{} has no {FILLER_LABEL} class",
            root.display()
        )));
    }
    if classes.len() < 2 {
        return Err(KwsError::InvalidDataset("at least one keyword class is required".into()));
    }
    let mut train = Vec::new();
    for (label, class) in classes.iter().enumerate() {
        let mut files: Vec<_> = fs::read_dir(root.join(class))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        files.sort();
        for path in files {
            train.push(Clip {
                waveform: read_wav(&path)?,
                label,
            });
        }
    }
    if train.is_empty() {
        return Err(KwsError::EmptyInput("dataset directory"));
    }
    Ok(Dataset {
        labels: classes,
        train,
        test: Vec::new(),
    })
}

/// Centre frames of the windows cut from a clip of `frames` frames.
pub fn window_centers(frames: usize, count: usize) -> Vec<usize> {
    (1..=count).map(|j| j * frames / (count + 1)).collect()
}

/// `per_clip` evenly spaced context windows from every clip.
pub fn clip_examples(
    frontend: &Frontend,
    clips: &[Clip],
    ctx: ContextConfig,
    per_clip: usize,
) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::with_capacity(clips.len() * per_clip);
    for clip in clips {
        let frames = frontend.log_mel_frames(&clip.waveform)?;
        for c in window_centers(frames.len(), per_clip) {
            out.push(LabeledExample {
                window: window_at(&frames, c, ctx)?,
                label: clip.label,
            });
        }
    }
    Ok(out)
}
