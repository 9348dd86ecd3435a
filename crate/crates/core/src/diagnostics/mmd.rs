use ndarray::{Array1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{CmktError, Result};
use crate::models::EncodedBatch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    Linear,
    /// `exp(-||x - y||^2 / (2 σ^2))`; `σ = None` uses the median pairwise
    /// distance of the pooled sample.
    Rbf { bandwidth: Option<f64> },
}

impl Default for Kernel {
    fn default() -> Self {
        Kernel::Rbf { bandwidth: None }
    }
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median Euclidean distance over all distinct pairs of the pooled rows;
/// falls back to 1 when that median is zero.
pub fn median_bandwidth(x: ArrayView2<f64>, y: ArrayView2<f64>) -> f64 {
    let rows: Vec<_> = x.outer_iter().chain(y.outer_iter()).collect();
    let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(sq_dist(rows[i], rows[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let m = *m;
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

fn mean_rbf(a: ArrayView2<f64>, b: ArrayView2<f64>, gamma: f64) -> f64 {
    let mut s = 0.0;
    for ra in a.outer_iter() {
        for rb in b.outer_iter() {
            s += (-gamma * sq_dist(ra, rb)).exp();
        }
    }
    s / (a.nrows() * b.nrows()) as f64
}

/// Biased (V-statistic) MMD estimate, `sqrt(max(0, Kxx + Kyy − 2Kxy))`.
pub fn mmd(x: ArrayView2<f64>, y: ArrayView2<f64>, kernel: Kernel) -> Result<f64> {
    if x.nrows() == 0 || y.nrows() == 0 {
        return Err(CmktError::Empty("mmd needs two nonempty samples".into()));
    }
    if x.ncols() != y.ncols() {
        return Err(CmktError::shape(format!("dim {}", x.ncols()), format!("dim {}", y.ncols())));
    }
    let radicand = match kernel {
        // explicit feature map: the mean embeddings are the sample means
        Kernel::Linear => {
            let d: Array1<f64> = x.mean_axis(Axis(0)).unwrap() - y.mean_axis(Axis(0)).unwrap();
            d.dot(&d)
        }
        Kernel::Rbf { bandwidth } => {
            let sigma = bandwidth.unwrap_or_else(|| median_bandwidth(x, y));
            if !(sigma > 0.0) {
                return Err(CmktError::InvalidArgument(format!("bandwidth must be > 0, got {sigma}")));
            }
            let gamma = 1.0 / (2.0 * sigma * sigma);
            mean_rbf(x, x, gamma) + mean_rbf(y, y, gamma) - 2.0 * mean_rbf(x, y, gamma)
        }
    };
    Ok(radicand.max(0.0).sqrt())
}

/// The four encoded-space distances tracked during semantic-alignment
/// training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMmds {
    /// Audio defect-free vs audio defective.
    pub d_a: f64,
    /// Visual defect-free vs visual defective.
    pub d_v: f64,
    /// Visual vs audio, defect-free.
    pub d_va_defect_free: f64,
    /// Visual vs audio, defective.
    pub d_va_defective: f64,
}

///
/// With `Kernel::Rbf { bandwidth: None }` a single median bandwidth is taken
/// over every encoded row of both modalities and shared by all four values,
/// so they are measured with one kernel and stay comparable with each other.
pub fn group_mmds(ev: &EncodedBatch, ea: &EncodedBatch, kernel: Kernel) -> Result<GroupMmds> {
    let groups = [ev.class_rows(0), ev.class_rows(1), ea.class_rows(0), ea.class_rows(1)];
    let names = ["visual defect-free", "visual defective", "audio defect-free", "audio defective"];
    for (g, n) in groups.iter().zip(names) {
        if g.nrows() == 0 {
            return Err(CmktError::Empty(format!("group `{n}` has no samples")));
        }
    }
    let [v0, v1, a0, a1] = &groups;
    if ev.vectors.ncols() != ea.vectors.ncols() {
        return Err(CmktError::shape(format!("dim {}", ev.vectors.ncols()), format!("dim {}", ea.vectors.ncols())));
    }
    let kernel = match kernel {
        Kernel::Rbf { bandwidth: None } => Kernel::Rbf { bandwidth: Some(median_bandwidth(ev.vectors.view(), ea.vectors.view())) },
        k => k,
    };
    Ok(GroupMmds {
        d_a: mmd(a0.view(), a1.view(), kernel)?,
        d_v: mmd(v0.view(), v1.view(), kernel)?,
        d_va_defect_free: mmd(v0.view(), a0.view(), kernel)?,
        d_va_defective: mmd(v1.view(), a1.view(), kernel)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Modality;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn identical_samples_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = rand_mat(20, 5, &mut rng);
        assert!(mmd(x.view(), x.view(), Kernel::default()).unwrap() <= 1e-12);
        assert!(mmd(x.view(), x.view(), Kernel::Linear).unwrap() <= 1e-12);
    }

    #[test]
    fn linear_kernel_example() {
        let x = Array2::zeros((4, 2));
        let y = Array2::from_shape_fn((3, 2), |(_, j)| if j == 0 { 3.0 } else { 4.0 });
        assert!((mmd(x.view(), y.view(), Kernel::Linear).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn linear_kernel_matches_expanded_v_statistic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_mat(7, 4, &mut rng);
        let y = rand_mat(5, 4, &mut rng);
        let k = |a: &Array2<f64>, b: &Array2<f64>| {
            let mut s = 0.0;
            for ra in a.outer_iter() {
                for rb in b.outer_iter() {
                    s += ra.dot(&rb);
                }
            }
            s / (a.nrows() * b.nrows()) as f64
        };
        let expanded = (k(&x, &x) + k(&y, &y) - 2.0 * k(&x, &y)).sqrt();
        assert!((mmd(x.view(), y.view(), Kernel::Linear).unwrap() - expanded).abs() < 1e-10);
    }

    #[test]
    fn dim_mismatch_and_empty() {
        let a = Array2::zeros((2, 3));
        let b = Array2::zeros((2, 4));
        assert!(mmd(a.view(), b.view(), Kernel::Linear).is_err());
        assert!(mmd(Array2::zeros((0, 3)).view(), a.view(), Kernel::Linear).is_err());
    }

    #[test]
    fn identical_groups_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let half = rand_mat(6, 3, &mut rng);
        let rows = ndarray::concatenate(Axis(0), &[half.view(), half.view()]).unwrap();
        let labels = vec![0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1];
        let ev = EncodedBatch::new(rows.clone(), labels.clone(), Modality::Visual).unwrap();
        let ea = EncodedBatch::new(rows, labels, Modality::Audio).unwrap();
        let g = group_mmds(&ev, &ea, Kernel::default()).unwrap();
        for v in [g.d_a, g.d_v, g.d_va_defect_free, g.d_va_defective] {
            assert!(v <= 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn symmetric_and_nonnegative(seed in any::<u64>(), n in 1usize..12, m in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_mat(n, 3, &mut rng);
            let y = rand_mat(m, 3, &mut rng);
            for k in [Kernel::Linear, Kernel::default(), Kernel::Rbf { bandwidth: Some(0.7) }] {
                let a = mmd(x.view(), y.view(), k).unwrap();
                let b = mmd(y.view(), x.view(), k).unwrap();
                prop_assert!(a >= 0.0);
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
