//! Posterior handling: per-frame class probabilities become smoothed scores
//! and keyword detection events.
//!
//! * smoothing: trailing moving average over `w_smooth` frames (shorter at
//!   the start of the stream);
//! * confidence: per keyword, the max smoothed posterior over the trailing
//!   `w_max` frames;
//! * detection: fire when the best keyword confidence reaches `threshold`,
//!   unless an event fired within the previous `refractory` frames.
//!
//! Window sums are always taken oldest-to-newest, so the batch functions and
//! [`StreamingDetector`] produce bit-identical results.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{KwsError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorFrame {
    pub frame_index: usize,
    pub probs: Vec<f64>,
}

impl PosteriorFrame {
    pub fn new(frame_index: usize, probs: impl IntoIterator<Item = f64>) -> Self {
        PosteriorFrame {
            frame_index,
            probs: probs.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub w_smooth: usize,
    pub w_max: usize,
    pub threshold: f64,
    pub refractory: usize,
    /// Class excluded from detection (the non-keyword class).
    pub filler: Option<usize>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            w_smooth: 30,
            w_max: 100,
            threshold: 0.7,
            refractory: 30,
            filler: Some(0),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w_smooth == 0 || self.w_max == 0 {
            return Err(KwsError::InvalidConfig("w_smooth and w_max must be >= 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(KwsError::InvalidConfig(format!(
                "threshold {} outside (0, 1]",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub frame_index: usize,
    pub keyword: usize,
    pub confidence: f64,
}

/// Mean of `rows` taken in iteration order.
fn window_mean<'a>(rows: impl ExactSizeIterator<Item = &'a Vec<f64>>, labels: usize) -> Vec<f64> {
    let count = rows.len() as f64;
    let mut acc = vec![0.0; labels];
    for row in rows {
        for (a, &p) in acc.iter_mut().zip(row) {
            *a += p;
        }
    }
    acc.into_iter().map(|a| a / count).collect()
}

fn window_max<'a>(rows: impl Iterator<Item = &'a Vec<f64>>, labels: usize, filler: Option<usize>) -> Vec<f64> {
    let mut best = vec![0.0f64; labels];
    for row in rows {
        for (b, &p) in best.iter_mut().zip(row) {
            *b = b.max(p);
        }
    }
    if let Some(f) = filler.filter(|&f| f < labels) {
        best[f] = 0.0;
    }
    best
}

/// Trailing moving average of each class over `w_smooth` frames.
pub fn smooth(stream: &[PosteriorFrame], w_smooth: usize) -> Result<Vec<PosteriorFrame>> {
    if stream.is_empty() {
        return Err(KwsError::EmptyInput("posterior stream"));
    }
    let w = w_smooth.max(1);
    let labels = stream[0].probs.len();
    Ok((0..stream.len())
        .map(|j| {
            let lo = (j + 1).saturating_sub(w);
            PosteriorFrame {
                frame_index: stream[j].frame_index,
                probs: window_mean(stream[lo..=j].iter().map(|f| &f.probs), labels),
            }
        })
        .collect())
}

/// Per-class confidence at position `j` of a smoothed stream. The filler
/// class (if configured) is reported as 0.
pub fn confidence(smoothed: &[PosteriorFrame], j: usize, cfg: &DetectorConfig) -> Result<Vec<f64>> {
    let frame = smoothed.get(j).ok_or(KwsError::InvalidConfig(format!(
        "frame {j} outside stream of {}",
        smoothed.len()
    )))?;
    let lo = (j + 1).saturating_sub(cfg.w_max.max(1));
    Ok(window_max(
        smoothed[lo..=j].iter().map(|f| &f.probs),
        frame.probs.len(),
        cfg.filler,
    ))
}

/// Highest-confidence keyword, ties to the lowest class index.
fn best_keyword(conf: &[f64], filler: Option<usize>) -> Option<(usize, f64)> {
    conf.iter()
        .copied()
        .enumerate()
        .filter(|&(k, _)| Some(k) != filler)
        .fold(None, |best, (k, c)| match best {
            Some((_, b)) if b >= c => best,
            _ => Some((k, c)),
        })
}

fn should_fire(frame: usize, last: Option<usize>, refractory: usize) -> bool {
    last.is_none_or(|l| frame - l > refractory)
}

/// Runs smoothing, confidence and thresholding over a whole stream.
pub fn detect(stream: &[PosteriorFrame], cfg: &DetectorConfig) -> Result<Vec<DetectionEvent>> {
    cfg.validate()?;
    if stream.is_empty() {
        return Ok(Vec::new());
    }
    let smoothed = smooth(stream, cfg.w_smooth)?;
    let mut events = Vec::new();
    let mut last: Option<usize> = None;
    for j in 0..smoothed.len() {
        let conf = confidence(&smoothed, j, cfg)?;
        let Some((keyword, c)) = best_keyword(&conf, cfg.filler) else { continue };
        let frame = smoothed[j].frame_index;
        if c >= cfg.threshold && should_fire(frame, last, cfg.refractory) {
            events.push(DetectionEvent {
                frame_index: frame,
                keyword,
                confidence: c,
            });
            last = Some(frame);
        }
    }
    Ok(events)
}

/// Frame-at-a-time detector holding only the last `w_smooth` raw and
/// `w_max` smoothed frames.
#[derive(Debug, Clone)]
pub struct StreamingDetector {
    cfg: DetectorConfig,
    labels: usize,
    raw: VecDeque<Vec<f64>>,
    smoothed: VecDeque<Vec<f64>>,
    last_event: Option<usize>,
}

impl StreamingDetector {
    pub fn new(cfg: DetectorConfig, labels: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(StreamingDetector {
            raw: VecDeque::with_capacity(cfg.w_smooth),
            smoothed: VecDeque::with_capacity(cfg.w_max),
            cfg,
            labels,
            last_event: None,
        })
    }

    pub fn push(&mut self, frame: &PosteriorFrame) -> Result<Option<DetectionEvent>> {
        if frame.probs.len() != self.labels {
            return Err(KwsError::Shape {
                op: "posterior frame",
                axis: crate::error::Axis::Length,
                expected: self.labels,
                found: frame.probs.len(),
            });
        }
        if self.raw.len() == self.cfg.w_smooth {
            self.raw.pop_front();
        }
        self.raw.push_back(frame.probs.clone());
        let smoothed = window_mean(self.raw.iter(), self.labels);
        if self.smoothed.len() == self.cfg.w_max {
            self.smoothed.pop_front();
        }
        self.smoothed.push_back(smoothed);

        let conf = window_max(self.smoothed.iter(), self.labels, self.cfg.filler);
        let Some((keyword, c)) = best_keyword(&conf, self.cfg.filler) else { return Ok(None) };
        if c >= self.cfg.threshold && should_fire(frame.frame_index, self.last_event, self.cfg.refractory) {
            self.last_event = Some(frame.frame_index);
            return Ok(Some(DetectionEvent {
                frame_index: frame.frame_index,
                keyword,
                confidence: c,
            }));
        }
        Ok(None)
    }
}
