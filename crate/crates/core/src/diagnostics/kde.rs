use crate::error::{CmktError, Result};

/// Gaussian kernel density estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Kde {
    values: Vec<f64>,
    bandwidth: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `0.9 · min(sd, IQR/1.34) · n^(-1/5)`, using whichever spread is nonzero,
/// and 1 for constant data.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = (quantile(&sorted, 0.75) - quantile(&sorted, 0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => return 1.0,
    };
    0.9 * spread * n.powf(-0.2)
}

impl Kde {
    pub fn fit(values: &[f64], bandwidth: Option<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(CmktError::InvalidArgument(format!("kde needs at least 2 values, got {}", values.len())));
        }
        let bandwidth = bandwidth.unwrap_or_else(|| silverman_bandwidth(values));
        if !(bandwidth > 0.0) {
            return Err(CmktError::InvalidArgument(format!("bandwidth must be > 0, got {bandwidth}")));
        }
        Ok(Kde { values: values.to_vec(), bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * h * self.values.len() as f64);
        norm * self.values.iter().map(|v| (-0.5 * ((x - v) / h).powi(2)).exp()).sum::<f64>()
    }

    /// Density at `n` evenly spaced points spanning the data ± `pad`
    /// bandwidths.
    pub fn grid(&self, n: usize, pad: f64) -> Vec<(f64, f64)> {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min) - pad * self.bandwidth;
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + pad * self.bandwidth;
        let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
        (0..n).map(|i| lo + i as f64 * step).map(|x| (x, self.density(x))).collect()
    }
}

/// Convenience wrapper over [`Kde::fit`].
pub fn kde(values: &[f64], bandwidth: Option<f64>) -> Result<Kde> {
    Kde::fit(values, bandwidth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_point_peak() {
        let k = kde(&[0.0, 0.0, 0.0], Some(1.0)).unwrap();
        assert!((k.density(0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
    }

    #[test]
    fn integrates_to_one() {
        let k = kde(&[1.0, 2.0, 2.5, 7.0, 7.2, 9.0], None).unwrap();
        let g = k.grid(4001, 8.0);
        let dx = g[1].0 - g[0].0;
        let integral: f64 = g.windows(2).map(|w| (w[0].1 + w[1].1) / 2.0 * dx).sum();
        assert!((integral - 1.0).abs() < 0.01, "{integral}");
    }

    #[test]
    fn symmetric_data() {
        let k = kde(&[-3.0, -1.0, 1.0, 3.0], None).unwrap();
        for x in [0.3, 1.1, 2.7, 5.0] {
            assert!((k.density(x) - k.density(-x)).abs() < 1e-6);
        }
    }

    #[test]
    fn too_few_values() {
        assert!(kde(&[1.0], None).is_err());
    }

    #[test]
    fn constant_data_falls_back_to_unit_bandwidth() {
        assert_eq!(silverman_bandwidth(&[4.0, 4.0, 4.0]), 1.0);
    }

    proptest! {
        #[test]
        fn scaling(vals in proptest::collection::vec(-10.0f64..10.0, 2..20), c in 0.1f64..10.0, x in -10.0f64..10.0) {
            let k = kde(&vals, Some(0.8)).unwrap();
            let scaled: Vec<f64> = vals.iter().map(|v| v * c).collect();
            let ks = kde(&scaled, Some(0.8 * c)).unwrap();
            let a = ks.density(x * c);
            let b = k.density(x) / c;
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }
}
