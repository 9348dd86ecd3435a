use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array4, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CmktError, Result};

/// Batched classifier: `[N, 1, H, W]` images to probabilities.
pub type BatchPredict<'a> = dyn Fn(&ArrayD<f64>) -> Result<Vec<f64>> + 'a;

/// Superpixel id per pixel; ids are `0..count`, every id nonempty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperpixelMap {
    pub assignment: Array2<usize>,
    pub count: usize,
}

impl SuperpixelMap {
    pub fn pixels_of(&self, id: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.assignment.indexed_iter().filter(move |(_, &s)| s == id).map(|(p, _)| p)
    }
}

/// Square grid superpixels with row-major ids. The image side must be a
/// multiple of the grid size.
pub fn segment_grid(image: &Array2<f64>, grid: (usize, usize)) -> Result<SuperpixelMap> {
    let (h, w) = image.dim();
    let (gr, gc) = grid;
    if gr == 0 || gc == 0 || h % gr != 0 || w % gc != 0 {
        return Err(CmktError::InvalidArgument(format!("{h}x{w} image does not divide into a {gr}x{gc} grid")));
    }
    let (bh, bw) = (h / gr, w / gc);
    Ok(SuperpixelMap { assignment: Array2::from_shape_fn((h, w), |(r, c)| (r / bh) * gc + c / bw), count: gr * gc })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimeConfig {
    pub n_perturb: usize,
    pub ridge_alpha: f64,
    pub kernel_width: f64,
    /// Probability of keeping each superpixel in a perturbation.
    pub keep_prob: f64,
    /// Replacement value for switched-off superpixels.
    pub fill: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig { n_perturb: 1000, ridge_alpha: 1.0, kernel_width: 0.25, keep_prob: 0.5, fill: 0.0, batch_size: 100, seed: 0 }
    }
}

/// Local linear surrogate over superpixel on/off indicators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub superpixel_map: SuperpixelMap,
    /// Weighted R² of the surrogate on the perturbation set.
    pub fidelity: f64,
    /// Model output on the unperturbed image.
    pub prediction: f64,
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na > 0.0, nb > 0.0) {
        (true, true) => 1.0 - dot / (na * nb),
        (false, false) => 0.0,
        _ => 1.0,
    }
}

/// Weighted ridge regression with an unpenalized intercept:
/// minimizes `Σ w_i (y_i − b − x_i·β)^2 + α ||β||^2`.
/// Returns `(β, b, weighted R²)`.
pub fn weighted_ridge(x: &Array2<f64>, y: &[f64], w: &[f64], alpha: f64) -> Result<(Vec<f64>, f64, f64)> {
    let (n, p) = x.dim();
    let wsum: f64 = w.iter().sum();
    if n == 0 || !(wsum > 0.0) {
        return Err(CmktError::InvalidArgument("ridge needs positive total weight".into()));
    }
    let xm: Vec<f64> = (0..p).map(|j| (0..n).map(|i| w[i] * x[[i, j]]).sum::<f64>() / wsum).collect();
    let ym = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / wsum;
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut xc = vec![0.0; p];
    for i in 0..n {
        for j in 0..p {
            xc[j] = x[[i, j]] - xm[j];
        }
        let yc = y[i] - ym;
        for j in 0..p {
            rhs[j] += w[i] * xc[j] * yc;
            for k in j..p {
                a[(j, k)] += w[i] * xc[j] * xc[k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            a[(j, k)] = a[(k, j)];
        }
        a[(j, j)] += alpha;
    }
    let beta = match a.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => a.lu().solve(&rhs).ok_or_else(|| CmktError::Undefined("singular ridge system".into()))?,
    };
    let intercept = ym - beta.iter().zip(&xm).map(|(b, m)| b * m).sum::<f64>();
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for i in 0..n {
        let pred = intercept + (0..p).map(|j| beta[j] * x[[i, j]]).sum::<f64>();
        ss_res += w[i] * (y[i] - pred).powi(2);
        ss_tot += w[i] * (y[i] - ym).powi(2);
    }
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok((beta.iter().copied().collect(), intercept, r2))
}

/// LIME on one `H×W` image. Row 0 of the design is always all-ones (the
/// original image); the rest keep each superpixel with `keep_prob`.
pub fn lime_explain(predict: &BatchPredict<'_>, image: &Array2<f64>, spmap: &SuperpixelMap, cfg: &LimeConfig) -> Result<Explanation> {
    if image.dim() != spmap.assignment.dim() {
        return Err(CmktError::shape(format!("{:?}", spmap.assignment.dim()), format!("{:?}", image.dim())));
    }
    if cfg.n_perturb < 2 {
        return Err(CmktError::InvalidArgument("need at least 2 perturbations".into()));
    }
    let s = spmap.count;
    let (h, w) = image.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut z = Array2::<f64>::ones((cfg.n_perturb, s));
    for i in 1..cfg.n_perturb {
        for j in 0..s {
            z[[i, j]] = if rng.random::<f64>() < cfg.keep_prob { 1.0 } else { 0.0 };
        }
    }
    let first = z.row(0);
    if z.outer_iter().all(|r| r == first) {
        return Err(CmktError::Undefined("degenerate perturbation set: all rows identical".into()));
    }

    let flat0: Vec<f64> = image.iter().copied().collect();
    let mut preds = Vec::with_capacity(cfg.n_perturb);
    let mut weights = Vec::with_capacity(cfg.n_perturb);
    let bs = cfg.batch_size.max(1);
    for start in (0..cfg.n_perturb).step_by(bs) {
        let end = (start + bs).min(cfg.n_perturb);
        let mut batch = Array4::<f64>::zeros((end - start, 1, h, w));
        for (b, i) in (start..end).enumerate() {
            let mut flat = Vec::with_capacity(h * w);
            for ((r, c), &v) in image.indexed_iter() {
                let on = z[[i, spmap.assignment[[r, c]]]] == 1.0;
                let px = if on { v } else { cfg.fill };
                batch[[b, 0, r, c]] = px;
                flat.push(px);
            }
            let d = cosine_distance(&flat0, &flat);
            weights.push((-(d * d) / (cfg.kernel_width * cfg.kernel_width)).exp());
        }
        let out = predict(&batch.into_dyn())?;
        if out.len() != end - start {
            return Err(CmktError::shape(format!("{} predictions", end - start), format!("{}", out.len())));
        }
        preds.extend(out);
    }
    let (beta, intercept, fidelity) = weighted_ridge(&z, &preds, &weights, cfg.ridge_alpha)?;
    Ok(Explanation { weights: beta, intercept, superpixel_map: spmap.clone(), fidelity, prediction: preds[0] })
}

/// Ids of the `min(k, #positive)` largest positive weights, ties broken by
/// lower id.
pub fn top_positive(weights: &[f64], k: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    ids.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    ids.truncate(k);
    ids
}

/// Union of the top-`k` positive superpixels.
pub fn positive_mask(expl: &Explanation, k: usize) -> Array2<bool> {
    let top = top_positive(&expl.weights, k);
    if top.is_empty() {
        log::warn!("explanation has no positive-weight superpixel; mask is empty");
    }
    let mut keep = vec![false; expl.superpixel_map.count];
    for id in top {
        keep[id] = true;
    }
    expl.superpixel_map.assignment.mapv(|s| keep[s])
}

pub fn mask_intersection_count(p: &Array2<bool>, q: &Array2<bool>) -> Result<usize> {
    if p.dim() != q.dim() {
        return Err(CmktError::shape(format!("{:?}", p.dim()), format!("{:?}", q.dim())));
    }
    Ok(p.iter().zip(q).filter(|(a, b)| **a && **b).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn img() -> Array2<f64> {
        Array2::from_shape_fn((80, 80), |(r, c)| 0.2 + 0.6 * (((r * 7 + c * 13) % 17) as f64 / 17.0))
    }

    #[test]
    fn grid_ids() {
        let m = segment_grid(&img(), (8, 8)).unwrap();
        assert_eq!(m.assignment[[0, 0]], 0);
        assert_eq!(m.assignment[[79, 79]], 63);
        let mut sizes = [0usize; 64];
        for &s in &m.assignment {
            sizes[s] += 1;
        }
        assert!(sizes.iter().all(|&n| n == 100));
        assert!(segment_grid(&img(), (7, 8)).is_err());
    }

    #[test]
    fn ridge_matches_closed_form_oracle() {
        // oracle: augmented normal equations with the intercept unpenalized
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((30, 3), |_| rng.random::<f64>());
        let y: Vec<f64> = (0..30).map(|i| 2.0 * x[[i, 0]] - x[[i, 2]] + 0.3 + 0.01 * rng.random::<f64>()).collect();
        let w: Vec<f64> = (0..30).map(|_| rng.random_range(0.1..1.0)).collect();
        let (beta, b, _) = weighted_ridge(&x, &y, &w, 0.5).unwrap();
        let mut a = DMatrix::<f64>::zeros(4, 4);
        let mut r = DVector::<f64>::zeros(4);
        for i in 0..30 {
            let row = [1.0, x[[i, 0]], x[[i, 1]], x[[i, 2]]];
            for j in 0..4 {
                r[j] += w[i] * row[j] * y[i];
                for k in 0..4 {
                    a[(j, k)] += w[i] * row[j] * row[k];
                }
            }
        }
        for j in 1..4 {
            a[(j, j)] += 0.5;
        }
        let sol = a.lu().solve(&r).unwrap();
        assert!((sol[0] - b).abs() < 1e-10);
        for j in 0..3 {
            assert!((sol[j + 1] - beta[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn recovers_single_superpixel() {
        let image = img();
        let spmap = segment_grid(&image, (8, 8)).unwrap();
        let total: f64 = spmap.pixels_of(3).map(|p| image[p]).sum();
        let f = |x: &ArrayD<f64>| -> Result<Vec<f64>> {
            Ok(x.outer_iter()
                .map(|im| {
                    let mut s = 0.0;
                    for r in 0..10 {
                        for c in 30..40 {
                            s += im[[0, r, c]];
                        }
                    }
                    s / total
                })
                .collect())
        };
        let e = lime_explain(&f, &image, &spmap, &LimeConfig::default()).unwrap();
        assert_eq!(top_positive(&e.weights, 1), vec![3]);
    }

    #[test]
    fn constant_predictor_gives_zero_weights() {
        let image = img();
        let spmap = segment_grid(&image, (8, 8)).unwrap();
        let f = |x: &ArrayD<f64>| -> Result<Vec<f64>> { Ok(vec![0.42; x.shape()[0]]) };
        let e = lime_explain(&f, &image, &spmap, &LimeConfig::default()).unwrap();
        assert!(e.weights.iter().all(|w| w.abs() < 1e-8));
        assert!((e.intercept - 0.42).abs() < 1e-8);
        let e2 = lime_explain(&f, &image, &spmap, &LimeConfig::default()).unwrap();
        assert_eq!(e, e2);
    }

    #[test]
    fn degenerate_perturbations_rejected() {
        let image = img();
        let spmap = segment_grid(&image, (8, 8)).unwrap();
        let f = |x: &ArrayD<f64>| -> Result<Vec<f64>> { Ok(vec![0.0; x.shape()[0]]) };
        let cfg = LimeConfig { keep_prob: 1.0, ..Default::default() };
        assert!(lime_explain(&f, &image, &spmap, &cfg).is_err());
    }

    fn expl(weights: Vec<f64>) -> Explanation {
        Explanation {
            superpixel_map: segment_grid(&Array2::zeros((80, 80)), (8, 8)).unwrap(),
            weights,
            intercept: 0.0,
            fidelity: 1.0,
            prediction: 0.0,
        }
    }

    #[test]
    fn mask_examples() {
        let mut w = vec![-1.0; 64];
        w[5] = 0.3;
        w[9] = 0.1;
        assert_eq!(positive_mask(&expl(w), 5).iter().filter(|&&m| m).count(), 200);
        let distinct: Vec<f64> = (0..64).map(|i| i as f64 + 1.0).collect();
        let m = positive_mask(&expl(distinct), 5);
        assert_eq!(m.iter().filter(|&&b| b).count(), 500);
        assert!(m[[79, 79]]);
        assert_eq!(positive_mask(&expl(vec![-0.5; 64]), 5).iter().filter(|&&m| m).count(), 0);
        let mut tied = vec![0.0; 64];
        tied[4] = 1.0;
        tied[2] = 1.0;
        assert_eq!(top_positive(&tied, 1), vec![2]);
    }

    #[test]
    fn intersection_examples() {
        let full = Array2::from_elem((80, 80), true);
        let empty = Array2::from_elem((80, 80), false);
        assert_eq!(mask_intersection_count(&full, &full).unwrap(), 6400);
        assert_eq!(mask_intersection_count(&full, &empty).unwrap(), 0);
        assert!(mask_intersection_count(&full, &Array2::from_elem((2, 2), true)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn linear_predictor_ranking_is_exact(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let image = img();
            let spmap = segment_grid(&image, (8, 8)).unwrap();
            // distinct coefficients, spaced well apart
            let mut coef: Vec<f64> = (0..64).map(|i| i as f64 * 0.01).collect();
            for i in (1..64).rev() {
                coef.swap(i, rng.random_range(0..=i));
            }
            let sums: Vec<f64> = (0..64).map(|s| spmap.pixels_of(s).map(|p| image[p]).sum()).collect();
            let am = spmap.assignment.clone();
            let f = |x: &ArrayD<f64>| -> Result<Vec<f64>> {
                Ok(x.outer_iter().map(|im| {
                    let mut on = vec![0.0; 64];
                    for ((r, c), &s) in am.indexed_iter() {
                        on[s] += im[[0, r, c]];
                    }
                    (0..64).map(|s| coef[s] * on[s] / sums[s]).sum()
                }).collect())
            };
            let cfg = LimeConfig { seed, ..Default::default() };
            let e = lime_explain(&f, &image, &spmap, &cfg).unwrap();
            let mut by_true: Vec<usize> = (0..64).collect();
            by_true.sort_by(|&a, &b| coef[a].total_cmp(&coef[b]));
            let mut by_fit: Vec<usize> = (0..64).collect();
            by_fit.sort_by(|&a, &b| e.weights[a].total_cmp(&e.weights[b]));
            prop_assert_eq!(by_true, by_fit);
        }

        #[test]
        fn mask_monotone_in_k(ws in proptest::collection::vec(-1.0f64..1.0, 64), k in 0usize..10) {
            let e = expl(ws);
            let a = positive_mask(&e, k);
            let b = positive_mask(&e, k + 1);
            prop_assert!(a.iter().filter(|&&m| m).count() <= k * 100);
            prop_assert!(a.iter().zip(&b).all(|(x, y)| !*x || *y));
        }

        #[test]
        fn intersection_symmetric(bits in proptest::collection::vec(any::<(bool, bool)>(), 6400)) {
            let p = Array2::from_shape_vec((80, 80), bits.iter().map(|b| b.0).collect()).unwrap();
            let q = Array2::from_shape_vec((80, 80), bits.iter().map(|b| b.1).collect()).unwrap();
            let oracle = bits.iter().filter(|b| b.0 && b.1).count();
            prop_assert_eq!(mask_intersection_count(&p, &q).unwrap(), oracle);
            prop_assert_eq!(mask_intersection_count(&q, &p).unwrap(), oracle);
        }
    }
}
