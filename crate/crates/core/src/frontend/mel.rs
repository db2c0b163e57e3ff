use crate::error::{KwsError, Result};
use crate::frontend::FrameConfig;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters over the one-sided power spectrum, one row per filter.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    filters: usize,
    bins: usize,
    fft_size: usize,
    weights: Vec<f64>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn filters(&self) -> usize {
        self.filters
    }

    /// Number of FFT bins per row (`fft_size / 2 + 1`).
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.weights[k * self.bins..(k + 1) * self.bins]
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Index of the filter whose center frequency is closest to `hz`.
    pub fn nearest_filter(&self, hz: f64) -> usize {
        self.centers_hz
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - hz).abs().total_cmp(&(b.1 - hz).abs()))
            .map(|(k, _)| k)
            .unwrap_or(0)
    }

    /// Filter energies of one power spectrum.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        (0..self.filters)
            .map(|k| self.row(k).iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }
}

/// Builds `cfg.mel_filters` triangles with centers equally spaced in mel
/// between `fmin` and `fmax`; each triangle rises from the previous center
/// and falls to the next one, with unit peak.
pub fn build_mel_filterbank(cfg: &FrameConfig, sample_rate: u32) -> Result<MelFilterbank> {
    cfg.validate(sample_rate)?;
    let bins = cfg.fft_size / 2 + 1;
    let filters = cfg.mel_filters;
    if bins < filters {
        return Err(KwsError::InvalidConfig(format!(
            "{bins} FFT bins cannot support {filters} mel filters"
        )));
    }

    let mel_lo = hz_to_mel(cfg.fmin);
    let mel_hi = hz_to_mel(cfg.fmax);
    let step = (mel_hi - mel_lo) / (filters + 1) as f64;
    let edges: Vec<f64> = (0..filters + 2).map(|i| mel_to_hz(mel_lo + i as f64 * step)).collect();
    let bin_hz = sample_rate as f64 / cfg.fft_size as f64;

    let mut weights = vec![0.0; filters * bins];
    for k in 0..filters {
        let (left, center, right) = (edges[k], edges[k + 1], edges[k + 2]);
        let row = &mut weights[k * bins..(k + 1) * bins];
        for (b, w) in row.iter_mut().enumerate() {
            let f = b as f64 * bin_hz;
            *w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
        }
        if row.iter().all(|&w| w == 0.0) {
            return Err(KwsError::InvalidConfig(format!(
                "mel filter {k} ({left:.1}-{right:.1} Hz) covers no FFT bin; increase fft_size or reduce mel_filters"
            )));
        }
    }

    Ok(MelFilterbank {
        filters,
        bins,
        fft_size: cfg.fft_size,
        weights,
        centers_hz: edges[1..=filters].to_vec(),
    })
}
