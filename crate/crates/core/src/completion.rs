//! Low-rank matrix completion used to estimate question factors.
//!
//! [`softimpute_fit`] solves the nuclear-norm regularized problem
//!
//! ```text
//! min_Z  1/2 sum_{observed} (R_ij - Z_ij)^2 + lambda * ||Z||_*
//! ```
//!
//! under a hard rank cap by alternating a fill-in of the missing cells with a
//! soft-thresholded SVD. [`als_fit`] solves the Frobenius-penalized
//! factorization `1/2 sum (R_ij - u_i.v_j)^2 + lu/2 |U|^2 + lv/2 |V|^2` by
//! alternating ridge regressions. The two agree when `lu == lv == lambda` and
//! the nuclear-norm solution has rank at most `r`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{sparse_holdout, ResponseMatrix, ValueScale};
use crate::error::{Error, Result};
use crate::linalg::thin_svd;

pub const DEFAULT_TOL: f64 = 1e-5;
pub const DEFAULT_MAX_ITER: usize = 500;

/// `Z = U diag(d) V^T` with `U: n x r`, `V: k x r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub u: DMatrix<f64>,
    pub d: DVector<f64>,
    pub v: DMatrix<f64>,
    pub lambda: f64,
    #[serde(default)]
    pub converged: bool,
    #[serde(default)]
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntryPrediction {
    pub value: f64,
    /// `value` clamped to `[-1, 1]`.
    pub clamped: f64,
}

impl FactorModel {
    pub fn rank(&self) -> usize {
        self.d.len()
    }

    pub fn num_users(&self) -> usize {
        self.u.nrows()
    }

    pub fn num_questions(&self) -> usize {
        self.v.nrows()
    }

    /// Rows are the implied user factors `U D`.
    pub fn user_factors(&self) -> DMatrix<f64> {
        let mut ud = self.u.clone();
        for (mut col, &d) in ud.column_iter_mut().zip(self.d.iter()) {
            col *= d;
        }
        ud
    }

    pub fn question_factors(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.user_factors() * self.v.transpose()
    }

    pub fn nuclear_norm(&self) -> f64 {
        self.d.sum()
    }

    /// Checks shapes, finiteness and that `d` is nonnegative and nonincreasing.
    pub fn validate(&self) -> Result<()> {
        let r = self.rank();
        if r == 0 || self.u.ncols() != r || self.v.ncols() != r {
            return Err(Error::InvalidModel(format!(
                "factor shapes U {:?}, d {}, V {:?}",
                self.u.shape(),
                r,
                self.v.shape()
            )));
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|x| x.is_finite());
        if !finite(&self.u) || !finite(&self.v) || self.d.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidModel("non-finite factor".into()));
        }
        if self.d.iter().any(|&x| x < 0.0) || self.d.as_slice().windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidModel("singular values must be nonnegative and nonincreasing".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidModel("negative lambda".into()));
        }
        Ok(())
    }

    /// Largest deviation of `U^T U` and `V^T V` from the identity over the
    /// columns with nonzero singular value.
    pub fn orthonormality_error(&self) -> f64 {
        let active: Vec<usize> = (0..self.rank()).filter(|&c| self.d[c] > 0.0).collect();
        let err = |m: &DMatrix<f64>| {
            let sub = m.select_columns(&active);
            let gram = sub.transpose() * &sub;
            (gram - DMatrix::identity(active.len(), active.len())).amax()
        };
        if active.is_empty() {
            0.0
        } else {
            err(&self.u).max(err(&self.v))
        }
    }
}

pub fn predict_entry(model: &FactorModel, i: usize, j: usize) -> Result<EntryPrediction> {
    if i >= model.num_users() || j >= model.num_questions() {
        return Err(Error::OutOfRange(format!(
            "entry ({i}, {j}) of a {}x{} model",
            model.num_users(),
            model.num_questions()
        )));
    }
    let value = (0..model.rank()).map(|c| model.u[(i, c)] * model.d[c] * model.v[(j, c)]).sum::<f64>();
    Ok(EntryPrediction { value, clamped: value.clamp(-1.0, 1.0) })
}

/// SVD of `z` with each singular value shrunk to `max(d - lambda, 0)`,
/// truncated to the top `rank` components.
pub fn soft_threshold_svd(z: &DMatrix<f64>, lambda: f64, rank: usize) -> Result<FactorModel> {
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("matrix to decompose".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} must be >= 0")));
    }
    let (n, k) = z.shape();
    if rank == 0 || rank > n.min(k) {
        return Err(Error::InvalidArgument(format!("rank {rank} outside 1..={}", n.min(k))));
    }
    let svd = thin_svd(z)?;
    let u = svd.u.columns(0, rank).into_owned();
    let v = svd.v.columns(0, rank).into_owned();
    let d = svd.singular_values.rows(0, rank).map(|s| (s - lambda).max(0.0));
    Ok(FactorModel { u, d, v, lambda, converged: true, iterations: 0 })
}

#[derive(Debug, Clone)]
pub struct SoftImputeFit {
    pub model: FactorModel,
    /// Objective value after every iteration.
    pub objective_trace: Vec<f64>,
}

/// `1/2 sum_obs (R - Z)^2 + lambda * ||Z||_*` for `Z` given by `model`.
pub fn nuclear_objective(data: &ResponseMatrix, model: &FactorModel) -> f64 {
    let z = model.reconstruct();
    let loss: f64 = data.observed_entries().map(|(i, j, r)| (r - z[(i, j)]).powi(2)).sum();
    0.5 * loss + model.lambda * model.nuclear_norm()
}

fn column_means(data: &ResponseMatrix) -> Result<DVector<f64>> {
    let mut sums = DVector::zeros(data.ncols());
    let mut counts = vec![0usize; data.ncols()];
    for (_, j, r) in data.observed_entries() {
        sums[j] += r;
        counts[j] += 1;
    }
    for (j, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::EmptyColumn(j));
        }
        sums[j] /= c as f64;
    }
    Ok(sums)
}

pub fn softimpute_fit(
    data: &ResponseMatrix,
    lambda: f64,
    rank: usize,
    tol: f64,
    max_iter: usize,
) -> Result<SoftImputeFit> {
    softimpute_fit_warm(data, lambda, rank, tol, max_iter, None)
}

/// SoftImpute starting from `warm`'s reconstruction on the missing cells
/// instead of the per-question observed means.
pub fn softimpute_fit_warm(
    data: &ResponseMatrix,
    lambda: f64,
    rank: usize,
    tol: f64,
    max_iter: usize,
    warm: Option<&FactorModel>,
) -> Result<SoftImputeFit> {
    let (n, k) = (data.nrows(), data.ncols());
    let means = column_means(data)?;
    let observed = data.mask();
    let mut z = match warm {
        Some(w) if w.num_users() == n && w.num_questions() == k => w.reconstruct(),
        Some(_) => return Err(Error::Dimension("warm start has the wrong shape".into())),
        None => DMatrix::from_fn(n, k, |_, j| means[j]),
    };
    for (i, j, r) in data.observed_entries() {
        z[(i, j)] = r;
    }
    let any_missing = observed.iter().any(|&m| !m);

    let mut trace = Vec::new();
    let mut model = soft_threshold_svd(&z, lambda, rank)?;
    for iter in 1..=max_iter.max(1) {
        if iter > 1 {
            model = soft_threshold_svd(&z, lambda, rank)?;
        }
        trace.push(nuclear_objective(data, &model));
        let pred = model.reconstruct();
        let mut delta = 0.0;
        let mut norm = 0.0;
        for j in 0..k {
            for i in 0..n {
                if !observed[(i, j)] {
                    delta += (pred[(i, j)] - z[(i, j)]).powi(2);
                    norm += z[(i, j)].powi(2);
                    z[(i, j)] = pred[(i, j)];
                }
            }
        }
        model.iterations = iter;
        let rel = if norm > 0.0 { delta / norm } else { delta };
        if !any_missing || rel < tol {
            model.converged = true;
            return Ok(SoftImputeFit { model, objective_trace: trace });
        }
    }
    model.converged = false;
    Ok(SoftImputeFit { model, objective_trace: trace })
}

/// Fits each `lambda` of the descending `grid` in turn, warm-starting from the
/// previous solution, and returns the fit at the last one. Small penalties
/// converge far faster this way than from a cold start.
pub fn softimpute_path(
    data: &ResponseMatrix,
    grid: &[f64],
    rank: usize,
    tol: f64,
    max_iter: usize,
) -> Result<SoftImputeFit> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("lambda grid must be strictly descending".into()));
    }
    let mut fit = softimpute_fit(data, grid[0], rank, tol, max_iter)?;
    for &lambda in &grid[1..] {
        fit = softimpute_fit_warm(data, lambda, rank, tol, max_iter, Some(&fit.model))?;
    }
    Ok(fit)
}

/// Log-spaced descending grid from the top singular value of the zero-filled
/// observed matrix down to `ratio` times that value.
pub fn default_lambda_grid(data: &ResponseMatrix, count: usize, ratio: f64) -> Vec<f64> {
    let zero_filled = data.values().zip_map(data.mask(), |v, m| if m { v } else { 0.0 });
    let top = thin_svd(&zero_filled).map(|s| s.singular_values[0]).unwrap_or(1.0);
    if count <= 1 {
        return vec![top];
    }
    (0..count).map(|c| top * ratio.powf(c as f64 / (count - 1) as f64)).collect()
}

#[derive(Debug, Clone)]
pub struct LambdaSearch {
    pub best_lambda: f64,
    pub val_mae: Vec<f64>,
}

/// Picks `lambda` by validation MAE on a seeded per-user holdout of the
/// training responses, sweeping the grid from largest to smallest with warm
/// starts. Ties go to the larger `lambda`.
pub fn lambda_grid_search(
    train: &ResponseMatrix,
    grid: &[f64],
    val_fraction: f64,
    rank: usize,
    seed: u64,
) -> Result<LambdaSearch> {
    lambda_grid_search_with(train, grid, val_fraction, rank, seed, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

pub fn lambda_grid_search_with(
    train: &ResponseMatrix,
    grid: &[f64],
    val_fraction: f64,
    rank: usize,
    seed: u64,
    tol: f64,
    max_iter: usize,
) -> Result<LambdaSearch> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("lambda grid must be strictly descending".into()));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("validation fraction {val_fraction} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hidden = sparse_holdout(train, val_fraction, &mut rng);
    // Keep at least one training entry per question.
    for j in 0..train.ncols() {
        let obs: Vec<usize> = (0..train.nrows()).filter(|&i| train.is_observed(i, j)).collect();
        if !obs.is_empty() && obs.iter().all(|&i| hidden[(i, j)]) {
            hidden[(obs[0], j)] = false;
        }
    }
    let fit_data = train.without(&hidden);
    let targets: Vec<(usize, usize, f64)> = train.observed_entries().filter(|&(i, j, _)| hidden[(i, j)]).collect();
    let clamp = train.scale() != ValueScale::Continuous;

    let mut val_mae = Vec::with_capacity(grid.len());
    let mut warm: Option<FactorModel> = None;
    for &lambda in grid {
        let fit = softimpute_fit_warm(&fit_data, lambda, rank, tol, max_iter, warm.as_ref())?;
        let z = fit.model.reconstruct();
        let mae = if targets.is_empty() {
            0.0
        } else {
            targets
                .iter()
                .map(|&(i, j, r)| {
                    let p = if clamp { z[(i, j)].clamp(-1.0, 1.0) } else { z[(i, j)] };
                    (p - r).abs()
                })
                .sum::<f64>()
                / targets.len() as f64
        };
        val_mae.push(mae);
        warm = Some(fit.model);
    }
    let mut best = 0;
    for (idx, &mae) in val_mae.iter().enumerate() {
        if mae < val_mae[best] {
            best = idx;
        }
    }
    Ok(LambdaSearch { best_lambda: grid[best], val_mae })
}

#[derive(Debug, Clone)]
pub struct AlsFit {
    /// `d` is all ones; the scale lives in `u` and `v`.
    pub model: FactorModel,
    pub lambda_u: f64,
    pub lambda_v: f64,
    /// Objective after initialization and after every half-step.
    pub objective_trace: Vec<f64>,
}

pub fn frobenius_objective(
    data: &ResponseMatrix,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    lambda_u: f64,
    lambda_v: f64,
) -> f64 {
    let loss: f64 = data.observed_entries().map(|(i, j, r)| (r - u.row(i).dot(&v.row(j))).powi(2)).sum();
    0.5 * loss + 0.5 * lambda_u * u.norm_squared() + 0.5 * lambda_v * v.norm_squared()
}

/// Solves each row of `target` as a ridge regression on the rows of `fixed`
/// selected by the observation pattern.
fn ridge_rows(data: &ResponseMatrix, fixed: &DMatrix<f64>, target: &mut DMatrix<f64>, lambda: f64, by_row: bool) {
    let r = fixed.ncols();
    let count = target.nrows();
    for a in 0..count {
        let mut gram = DMatrix::<f64>::identity(r, r) * lambda;
        let mut rhs = DVector::<f64>::zeros(r);
        let others = if by_row { data.ncols() } else { data.nrows() };
        for b in 0..others {
            let (i, j) = if by_row { (a, b) } else { (b, a) };
            if let Some(resp) = data.get(i, j) {
                let f = fixed.row(b);
                gram.ger(1.0, &f.transpose(), &f.transpose(), 1.0);
                rhs.axpy(resp, &f.transpose(), 1.0);
            }
        }
        let sol = gram.cholesky().expect("ridge Gram matrix is positive definite for lambda > 0").solve(&rhs);
        target.set_row(a, &sol.transpose());
    }
}

pub fn als_fit(
    data: &ResponseMatrix,
    lambda_u: f64,
    lambda_v: f64,
    rank: usize,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<AlsFit> {
    if !(lambda_u > 0.0 && lambda_v > 0.0) {
        return Err(Error::InvalidArgument("ALS needs lambda_u, lambda_v > 0".into()));
    }
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be at least 1".into()));
    }
    let (n, k) = (data.nrows(), data.ncols());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |rows| {
        DMatrix::from_fn(rows, rank, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.1 * z
        })
    };
    let mut u = draw(n);
    let mut v = draw(k);
    let mut trace = vec![frobenius_objective(data, &u, &v, lambda_u, lambda_v)];
    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=max_iter.max(1) {
        let before = *trace.last().unwrap();
        ridge_rows(data, &v, &mut u, lambda_u, true);
        trace.push(frobenius_objective(data, &u, &v, lambda_u, lambda_v));
        ridge_rows(data, &u, &mut v, lambda_v, false);
        let after = frobenius_objective(data, &u, &v, lambda_u, lambda_v);
        trace.push(after);
        iterations = iter;
        if !after.is_finite() {
            return Err(Error::NonFinite(format!("ALS objective at iteration {iter}")));
        }
        if (before - after) <= tol * before.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    Ok(AlsFit {
        model: FactorModel { u, d: DVector::from_element(rank, 1.0), v, lambda: lambda_u, converged, iterations },
        lambda_u,
        lambda_v,
        objective_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{QuestionKind, QuestionMeta};
    use approx_eq::assert_close;

    mod approx_eq {
        macro_rules! assert_close {
            ($a:expr, $b:expr, $tol:expr) => {{
                let (a, b): (f64, f64) = ($a, $b);
                assert!((a - b).abs() <= $tol, "{} vs {} (tol {})", a, b, $tol);
            }};
        }
        pub(crate) use assert_close;
    }

    fn continuous(values: DMatrix<f64>, mask: DMatrix<bool>) -> ResponseMatrix {
        let qs = (0..values.ncols()).map(|j| QuestionMeta::new(format!("q{j}"), 2, QuestionKind::Ordinal)).collect();
        ResponseMatrix::new(values, mask, qs, ValueScale::Continuous).unwrap()
    }

    fn random_matrix(n: usize, k: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(&mut rng))
    }

    fn low_rank(n: usize, k: usize, r: usize, seed: u64) -> DMatrix<f64> {
        random_matrix(n, r, seed) * random_matrix(k, r, seed + 1).transpose()
    }

    fn random_mask(n: usize, k: usize, p: f64, seed: u64) -> DMatrix<bool> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, k, |_, _| rng.random::<f64>() < p)
    }

    #[test]
    fn shrinks_diagonal_singular_values() {
        let z = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let m = soft_threshold_svd(&z, 1.0, 2).unwrap();
        assert_close!(m.d[0], 2.0, 1e-12);
        assert_close!(m.d[1], 0.0, 1e-12);
    }

    #[test]
    fn zero_lambda_full_rank_reconstructs() {
        let z = random_matrix(7, 5, 3);
        let m = soft_threshold_svd(&z, 0.0, 5).unwrap();
        assert!((m.reconstruct() - &z).norm() <= 1e-8 * z.norm());
        assert!(m.orthonormality_error() < 1e-6);
        m.validate().unwrap();
    }

    /// Shrinkage through the eigendecomposition of `Z^T Z`, independent of
    /// the bidiagonal SVD path.
    fn eigen_shrink_oracle(z: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
        let eig = (z.transpose() * z).symmetric_eigen();
        let mut out = DMatrix::zeros(z.nrows(), z.ncols());
        for c in 0..z.ncols() {
            let sigma = eig.eigenvalues[c].max(0.0).sqrt();
            if sigma <= 1e-12 {
                continue;
            }
            let v = eig.eigenvectors.column(c);
            let u = z * v / sigma;
            out += u * v.transpose() * (sigma - lambda).max(0.0);
        }
        out
    }

    #[test]
    fn matches_dense_shrink_oracle() {
        let z = random_matrix(6, 4, 11);
        let m = soft_threshold_svd(&z, 0.5, 4).unwrap();
        let oracle = eigen_shrink_oracle(&z, 0.5);
        assert!((m.reconstruct() - oracle).amax() < 1e-8);
    }

    #[test]
    fn rejects_non_finite_and_bad_rank() {
        let mut z = random_matrix(3, 3, 1);
        assert!(soft_threshold_svd(&z, 0.1, 4).is_err());
        z[(0, 0)] = f64::NAN;
        assert!(matches!(soft_threshold_svd(&z, 0.1, 2), Err(Error::NonFinite(_))));
    }

    #[test]
    fn fully_observed_zero_lambda_is_exact() {
        let z = random_matrix(8, 5, 2);
        let data = continuous(z.clone(), DMatrix::from_element(8, 5, true));
        let fit = softimpute_fit(&data, 0.0, 5, 1e-10, 100).unwrap();
        assert!((fit.model.reconstruct() - z).amax() < 1e-8);
        assert!(fit.model.converged);
        for (i, j, r) in data.observed_entries() {
            assert_close!(predict_entry(&fit.model, i, j).unwrap().value, r, 1e-6);
        }
    }

    #[test]
    fn rank_one_completion_of_two_by_two() {
        let values = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 0.0]);
        let mask = DMatrix::from_row_slice(2, 2, &[true, true, true, false]);
        let data = continuous(values, mask);
        let fit = softimpute_fit(&data, 1e-9, 1, 1e-14, 20_000).unwrap();
        let oracle = 2.0 * 2.0 / 1.0;
        assert_close!(fit.model.reconstruct()[(1, 1)], oracle, 1e-3);
    }

    #[test]
    fn warm_path_reaches_the_cold_optimum() {
        let (n, k) = (120, 15);
        let data = continuous(low_rank(n, k, 3, 7), random_mask(n, k, 0.6, 9));
        let grid = default_lambda_grid(&data, 8, 1e-2);
        let path = softimpute_path(&data, &grid, 6, 1e-8, 5000).unwrap();
        let cold = softimpute_fit(&data, grid[7], 6, 1e-12, 50_000).unwrap();
        let (a, b) = (nuclear_objective(&data, &path.model), nuclear_objective(&data, &cold.model));
        assert!((a - b).abs() <= 1e-3 * b, "path {a} vs cold {b}");
        assert!(path.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        assert!(softimpute_path(&data, &[1.0, 2.0], 2, 1e-5, 10).is_err());
    }

    #[test]
    fn empty_column_is_an_error() {
        let values = DMatrix::from_element(3, 2, 1.0);
        let mask = DMatrix::from_row_slice(3, 2, &[true, false, true, false, true, false]);
        let err = softimpute_fit(&continuous(values, mask), 0.1, 1, 1e-5, 10).unwrap_err();
        assert_eq!(err.to_string(), "column has no observations: question 1");
    }

    #[test]
    fn objective_is_nonincreasing_and_recovers_low_rank() {
        let (n, k, r) = (200, 30, 4);
        let truth = low_rank(n, k, r, 21);
        let mask = random_mask(n, k, 0.7, 22);
        let data = continuous(truth.clone(), mask.clone());
        let fit = softimpute_fit(&data, 1e-4, r, 1e-12, 2000).unwrap();
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{} -> {}", w[0], w[1]);
        }
        let z = fit.model.reconstruct();
        let (mut err, mut norm) = (0.0, 0.0);
        for j in 0..k {
            for i in 0..n {
                if !mask[(i, j)] {
                    err += (z[(i, j)] - truth[(i, j)]).powi(2);
                    norm += truth[(i, j)].powi(2);
                }
            }
        }
        assert!((err / norm).sqrt() < 1e-2, "relative error {}", (err / norm).sqrt());
    }

    #[test]
    fn soft_thresholding_never_increases_nuclear_norm() {
        for seed in 0..20 {
            let z = random_matrix(6, 5, seed);
            let before = z.singular_values().sum();
            let m = soft_threshold_svd(&z, 0.3 * (seed as f64 % 4.0), 5).unwrap();
            assert!(m.nuclear_norm() <= before + 1e-12);
            let sv = z.singular_values();
            let mut sorted: Vec<f64> = sv.iter().copied().collect();
            sorted.sort_by(|a, b| b.total_cmp(a));
            for (d, s) in m.d.iter().zip(sorted) {
                assert!(*d <= s + 1e-12);
            }
        }
    }

    #[test]
    fn grid_search_singleton_and_ties() {
        let truth = low_rank(40, 8, 2, 5);
        let data = continuous(truth, random_mask(40, 8, 0.8, 6));
        let s = lambda_grid_search(&data, &[0.7], 0.2, 2, 1).unwrap();
        assert_eq!(s.best_lambda, 0.7);
        // Huge lambdas all shrink to zero: equal validation MAE, largest wins.
        let s = lambda_grid_search(&data, &[1e9, 1e8, 1e7], 0.2, 2, 1).unwrap();
        assert!(s.val_mae.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(s.best_lambda, 1e9);
        assert!(lambda_grid_search(&data, &[], 0.2, 2, 1).is_err());
        assert!(lambda_grid_search(&data, &[1.0, 2.0], 0.2, 2, 1).is_err());
    }

    #[test]
    fn grid_search_beats_endpoints() {
        let truth = low_rank(120, 20, 4, 8);
        let mut noisy = truth.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        noisy.iter_mut().for_each(|x| {
            let e: f64 = StandardNormal.sample(&mut rng);
            *x += 0.3 * e
        });
        let data = continuous(noisy, random_mask(120, 20, 0.6, 10));
        let grid: Vec<f64> = (0..9).map(|c| 100.0 * 10f64.powf(-(c as f64) / 2.0)).collect();
        let s = lambda_grid_search(&data, &grid, 0.2, 4, 3).unwrap();
        let best = s.val_mae[grid.iter().position(|&l| l == s.best_lambda).unwrap()];
        let oracle_min = s.val_mae.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(best, oracle_min);
        assert!(best <= s.val_mae[0] && best <= *s.val_mae.last().unwrap());
    }

    #[test]
    fn als_objective_nonincreasing_and_balanced() {
        let truth = low_rank(30, 12, 3, 13);
        let data = continuous(truth, random_mask(30, 12, 0.7, 14));
        let fit = als_fit(&data, 0.5, 0.5, 3, 1e-14, 5000, 1).unwrap();
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
        let (nu, nv) = (fit.model.u.norm(), fit.model.v.norm());
        assert!((nu - nv).abs() / nu < 1e-3, "|U| {nu} vs |V| {nv}");
    }

    #[test]
    fn als_matches_softimpute_objective_on_rank_one() {
        let truth = low_rank(20, 6, 1, 31);
        let data = continuous(truth, DMatrix::from_element(20, 6, true));
        let lambda = 0.05;
        let si = softimpute_fit(&data, lambda, 1, 1e-12, 100).unwrap();
        let si_obj = nuclear_objective(&data, &si.model);
        let als = als_fit(&data, lambda, lambda, 1, 1e-14, 5000, 2).unwrap();
        let als_obj = *als.objective_trace.last().unwrap();
        assert!((als_obj - si_obj).abs() <= 0.01 * si_obj, "ALS {als_obj} vs SoftImpute {si_obj}");
    }

    #[test]
    fn als_rejects_nonpositive_lambda() {
        let data = continuous(random_matrix(4, 3, 0), DMatrix::from_element(4, 3, true));
        assert!(als_fit(&data, 0.0, 1.0, 1, 1e-6, 10, 0).is_err());
    }

    #[test]
    fn predict_entry_arithmetic_and_bounds() {
        let model = FactorModel {
            u: DMatrix::from_element(1, 1, 1.0),
            d: DVector::from_element(1, 2.0),
            v: DMatrix::from_element(1, 1, 1.0),
            lambda: 0.0,
            converged: true,
            iterations: 0,
        };
        let p = predict_entry(&model, 0, 0).unwrap();
        assert_eq!((p.value, p.clamped), (2.0, 1.0));
        let zero = FactorModel { u: DMatrix::zeros(2, 1), v: DMatrix::zeros(3, 1), ..model.clone() };
        assert_eq!(predict_entry(&zero, 1, 2).unwrap().value, 0.0);
        assert!(matches!(predict_entry(&model, 1, 0), Err(Error::OutOfRange(_))));
    }
}
