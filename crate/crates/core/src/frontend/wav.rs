//! 16-bit mono 16 kHz PCM WAV reading/writing and the binary feature dump.
//!
//! Feature dump layout: an ASCII header line `"{t} {f} {count}\n"` followed by
//! `count` windows of `t * f` little-endian `f32` values, row-major by frame.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, Write};
use std::path::Path;

use crate::error::{KwsError, Result};
use crate::frontend::{FeatureWindow, Waveform, SAMPLE_RATE};

fn map_hound(e: hound::Error) -> KwsError {
    match e {
        hound::Error::IoError(io) => KwsError::Io(io),
        other => KwsError::UnsupportedFormat(other.to_string()),
    }
}

/// Reads a RIFF/WAVE stream; anything other than 16-bit signed PCM, mono,
/// 16 kHz is rejected. Samples are scaled by `1/32768`.
pub fn read_wav_from<R: Read>(reader: R) -> Result<Waveform> {
    let mut wav = hound::WavReader::new(reader).map_err(map_hound)?;
    let spec = wav.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(KwsError::UnsupportedFormat(format!(
            "{:?} {}-bit samples (need 16-bit PCM)",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.channels != 1 {
        return Err(KwsError::UnsupportedFormat(format!("{} channels (need mono)", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(KwsError::UnsupportedFormat(format!(
            "{} Hz (need {SAMPLE_RATE} Hz)",
            spec.sample_rate
        )));
    }
    let samples = wav
        .samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(map_hound)?;
    Waveform::new(samples, spec.sample_rate)
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    read_wav_from(BufReader::new(File::open(path)?))
}

/// Writes 16-bit PCM; samples are clamped to `[-1, 1)` before quantizing.
pub fn write_wav_to<W: Write + Seek>(writer: W, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut out = hound::WavWriter::new(writer, spec).map_err(map_hound)?;
    for &s in w.samples() {
        let q = (s as f64 * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        out.write_sample(q).map_err(map_hound)?;
    }
    out.finalize().map_err(map_hound)
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    write_wav_to(BufWriter::new(File::create(path)?), w)
}

pub fn write_feature_dump<W: Write>(mut out: W, windows: &[FeatureWindow]) -> Result<()> {
    let (t, f) = windows.first().map_or((0, 0), |w| (w.t, w.f));
    writeln!(out, "{t} {f} {}", windows.len())?;
    for w in windows {
        if w.t != t || w.f != f {
            return Err(KwsError::InvalidConfig("feature windows differ in shape".into()));
        }
        for v in &w.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_feature_dump<R: Read>(reader: R) -> Result<Vec<FeatureWindow>> {
    let mut reader = BufReader::new(reader);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|s| s.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| KwsError::UnsupportedFormat(format!("bad feature dump header {header:?}")))?;
    let &[t, f, count] = dims.as_slice() else {
        return Err(KwsError::UnsupportedFormat(format!("bad feature dump header {header:?}")));
    };
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != t * f * count * 4 {
        return Err(KwsError::UnsupportedFormat(format!(
            "feature dump payload is {} bytes, header implies {}",
            bytes.len(),
            t * f * count * 4
        )));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if t * f == 0 {
        return Ok(Vec::new());
    }
    values
        .chunks_exact(t * f)
        .map(|chunk| FeatureWindow::new(t, f, chunk.to_vec()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn encode(spec: hound::WavSpec, samples: &[i32]) -> Vec<u8> {
        let mut buf = Cursor::new(Vec::new());
        {
            let mut w = hound::WavWriter::new(&mut buf, spec).unwrap();
            for &s in samples {
                if spec.sample_format == hound::SampleFormat::Float {
                    w.write_sample(s as f32).unwrap();
                } else {
                    w.write_sample(s).unwrap();
                }
            }
            w.finalize().unwrap();
        }
        buf.into_inner()
    }

    fn pcm16(rate: u32, channels: u16) -> hound::WavSpec {
        hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        }
    }

    #[test]
    fn reads_normalized_samples() {
        let bytes = encode(pcm16(16_000, 1), &[0, 16384, -32768, 32767]);
        let w = read_wav_from(Cursor::new(bytes)).unwrap();
        assert_eq!(w.samples(), &[0.0, 0.5, -1.0, 32767.0 / 32768.0]);
    }

    #[test]
    fn rejects_other_encodings() {
        let stereo = encode(pcm16(16_000, 2), &[0, 0]);
        assert!(matches!(read_wav_from(Cursor::new(stereo)), Err(KwsError::UnsupportedFormat(_))));
        let rate = encode(pcm16(8_000, 1), &[0]);
        assert!(matches!(read_wav_from(Cursor::new(rate)), Err(KwsError::UnsupportedFormat(_))));
        let float = encode(
            hound::WavSpec {
                channels: 1,
                sample_rate: 16_000,
                bits_per_sample: 32,
                sample_format: hound::SampleFormat::Float,
            },
            &[0],
        );
        assert!(matches!(read_wav_from(Cursor::new(float)), Err(KwsError::UnsupportedFormat(_))));
        let garbage = b"RIFX not a wave file at all".to_vec();
        assert!(matches!(read_wav_from(Cursor::new(garbage)), Err(KwsError::UnsupportedFormat(_))));
    }

    #[test]
    fn write_then_read() {
        let w = Waveform::new(vec![0.25, -0.5, 0.0, 0.999], SAMPLE_RATE).unwrap();
        let mut buf = Cursor::new(Vec::new());
        write_wav_to(&mut buf, &w).unwrap();
        let back = read_wav_from(Cursor::new(buf.into_inner())).unwrap();
        for (a, b) in w.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn feature_dump_layout() {
        let windows = vec![
            FeatureWindow::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
            FeatureWindow::new(2, 3, vec![-1.0; 6]).unwrap(),
        ];
        let mut buf = Vec::new();
        write_feature_dump(&mut buf, &windows).unwrap();
        assert!(buf.starts_with(b"2 3 2\n"));
        assert_eq!(buf.len(), 6 + 12 * 4);
        assert_eq!(&buf[6..10], &1.0f32.to_le_bytes());
        assert_eq!(read_feature_dump(Cursor::new(buf)).unwrap(), windows);
    }
}
