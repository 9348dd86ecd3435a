use std::sync::{Arc, OnceLock};

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{AudioSnippet, Spectrogram, SIDE};

pub const FFT_SIZE: usize = 160;
pub const HOP: usize = 16;
/// One-sided bins kept (rows of the output image).
pub const KEPT_BINS: usize = 80;
const DB_FLOOR: f64 = -80.0;

fn fft() -> &'static Arc<dyn Fft<f64>> {
    static PLAN: OnceLock<Arc<dyn Fft<f64>>> = OnceLock::new();
    PLAN.get_or_init(|| FftPlanner::new().plan_fft_forward(FFT_SIZE))
}

fn hann() -> &'static [f64] {
    static WIN: OnceLock<Vec<f64>> = OnceLock::new();
    WIN.get_or_init(|| {
        (0..FFT_SIZE)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / FFT_SIZE as f64).cos())
            .collect()
    })
}

/// STFT magnitude, `[KEPT_BINS, frames]`, no padding at the edges.
pub(crate) fn stft_magnitude(x: &[f64]) -> Array2<f64> {
    let frames = if x.len() < FFT_SIZE { 0 } else { (x.len() - FFT_SIZE) / HOP + 1 };
    let mut mag = Array2::zeros((KEPT_BINS, frames));
    let win = hann();
    let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
    for t in 0..frames {
        let seg = &x[t * HOP..t * HOP + FFT_SIZE];
        for ((b, s), w) in buf.iter_mut().zip(seg).zip(win) {
            *b = Complex::new(s * w, 0.0);
        }
        fft().process(&mut buf);
        for k in 0..KEPT_BINS {
            mag[[k, t]] = buf[k].norm();
        }
    }
    mag
}

/// Linear-frequency spectrogram image of one snippet.
///
/// Magnitudes are converted to dB relative to the snippet's maximum, clipped
/// to `[-80, 0]` and mapped to `[0, 1]`; the 82 frames are center-cropped to
/// 80. Silence maps to all zeros.
pub fn make_spectrogram(snippet: &AudioSnippet) -> Spectrogram {
    let mag = stft_magnitude(&snippet.samples);
    let frames = mag.ncols();
    let start = (frames - SIDE) / 2;
    let peak = mag.iter().copied().fold(0.0_f64, f64::max);
    let mut out = Array2::zeros((SIDE, SIDE));
    if peak > 0.0 {
        for r in 0..SIDE {
            for c in 0..SIDE {
                let m = mag[[r, start + c]];
                let db = if m > 0.0 { (20.0 * (m / peak).log10()).max(DB_FLOOR) } else { DB_FLOOR };
                out[[r, c]] = (db - DB_FLOOR) / -DB_FLOOR;
            }
        }
    }
    Spectrogram { pixels: out }
}
