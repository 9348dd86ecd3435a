//! Prediction runtime: one forward pass over a sample set.

use std::time::Instant;

use crate::dataset::PairedSample;
use crate::error::Result;
use crate::training::TrainedModel;

/// Wall-clock seconds of exactly one batched forward pass over `samples`,
/// after one untimed warm-up pass. Input stacking is not timed.
pub fn measure_runtime(model: &TrainedModel, samples: &[PairedSample]) -> Result<f64> {
    if samples.is_empty() {
        log::warn!("runtime requested on an empty sample set; reporting 0");
        return Ok(0.0);
    }
    let inputs = model.prepare(samples);
    model.predict_prepared(&inputs)?;
    let start = Instant::now();
    let out = model.predict_prepared(&inputs)?;
    let t = start.elapsed().as_secs_f64();
    std::hint::black_box(out);
    Ok(t)
}

/// Median of `reps` [`measure_runtime`] calls.
pub fn median_runtime(model: &TrainedModel, samples: &[PairedSample], reps: usize) -> Result<f64> {
    let mut t = (0..reps.max(1)).map(|_| measure_runtime(model, samples)).collect::<Result<Vec<_>>>()?;
    t.sort_by(f64::total_cmp);
    let n = t.len();
    Ok(if n % 2 == 1 { t[n / 2] } else { (t[n / 2 - 1] + t[n / 2]) / 2.0 })
}
