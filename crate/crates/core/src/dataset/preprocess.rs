use ndarray::Array2;

use super::{AudioSnippet, RawVisualFrame, VisualFrame, RAW_SIDE, SIDE, SNIPPET_LEN};
use crate::error::{CmktError, Result};

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];
const BLOCK: usize = RAW_SIDE / SIDE;

/// Luminance grayscale followed by a 6×6 block mean, scaled to `[0, 1]`.
pub fn grayscale_resize(frame: &RawVisualFrame) -> Result<VisualFrame> {
    let p = &frame.pixels;
    if p.shape() != [RAW_SIDE, RAW_SIDE, 3] {
        return Err(CmktError::shape("[480, 480, 3]", format!("{:?}", p.shape())));
    }
    let mut out = Array2::zeros((SIDE, SIDE));
    for r in 0..RAW_SIDE {
        for c in 0..RAW_SIDE {
            let g = LUMA[0] * p[[r, c, 0]] + LUMA[1] * p[[r, c, 1]] + LUMA[2] * p[[r, c, 2]];
            out[[r / BLOCK, c / BLOCK]] += g;
        }
    }
    let scale = 1.0 / (255.0 * (BLOCK * BLOCK) as f64);
    out.mapv_inplace(|v: f64| (v * scale).clamp(0.0, 1.0));
    Ok(VisualFrame { pixels: out })
}

/// Cuts a 44.1 kHz waveform into consecutive 1470-sample snippets; a
/// trailing partial window is dropped.
pub fn segment_audio(waveform: &[f64]) -> Result<Vec<AudioSnippet>> {
    if waveform.len() < SNIPPET_LEN {
        return Err(CmktError::Empty(format!(
            "waveform of {} samples is shorter than one {SNIPPET_LEN}-sample snippet",
            waveform.len()
        )));
    }
    Ok(waveform
        .chunks_exact(SNIPPET_LEN)
        .map(|c| AudioSnippet { samples: c.to_vec() })
        .collect())
}
