//! Nonparametric mean and covariance estimation.
//!
//! The mean function is a pooled local-linear fit with a Gaussian kernel and
//! optional cross-validated bandwidth. The covariance surface is estimated
//! from raw cross-products of centered residuals: within-unit off-diagonal
//! products are smoothed onto the grid with a product local-linear smoother,
//! and the gap between the smoothed raw diagonal and the surface diagonal
//! yields the measurement-noise variance. Raw products are accumulated into
//! grid-resolution bins before smoothing, which keeps the smoother cost
//! bounded by the grid size instead of the squared sample count.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{interpolate_at, trapezoid_inner, Signal, WorkingGrid};

/// Floor for the estimated noise variance; keeps downstream posterior
/// formulas away from division by zero.
pub const NOISE_FLOOR: f64 = 1e-10;

/// Gaussian kernel weights are treated as zero beyond this many bandwidths.
const KERNEL_CUTOFF: f64 = 6.0;

/// Bandwidth choice for the mean smoother.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// 5-fold cross-validation (folds over units) on a logarithmic grid of
    /// 10 candidates spanning `[0.5 * spacing, 0.25 * (b - a)]`.
    Auto,
    Fixed(f64),
}

/// Smoothed mean function on a working grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedMean {
    pub values: Vec<f64>,
    /// Variance of the mean estimate at each grid point: kernel-weighted
    /// residual variance of the local fit divided by the effective local
    /// sample size.
    pub pointwise_variance: Vec<f64>,
    pub bandwidth: f64,
    /// Set when any grid point required the local-constant fallback.
    pub constant_fallback: bool,
}

impl SmoothedMean {
    pub fn eval(&self, grid: &WorkingGrid, t: f64) -> f64 {
        interpolate_at(grid.points(), &self.values, t)
    }

    pub fn eval_variance(&self, grid: &WorkingGrid, t: f64) -> f64 {
        interpolate_at(grid.points(), &self.pointwise_variance, t)
    }
}

/// Covariance surface estimate together with the noise variance recovered
/// from the inflated raw diagonal.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    pub surface: DMatrix<f64>,
    pub noise_variance: f64,
    /// Units with fewer than two distinct time points contribute only
    /// diagonal products; this counts them.
    pub surface_skipped_units: usize,
}

/// Eigendecomposition of a smoothed covariance surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSystem {
    /// Retained (positive) eigenvalues, nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// Grid-orthonormal eigenfunctions, one column per retained eigenvalue.
    pub eigenfunctions: DMatrix<f64>,
    pub noise_variance: f64,
}

impl EigenSystem {
    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Eigenfunction `k` at time `t`, by linear interpolation of its grid
    /// representation.
    pub fn eval_function(&self, k: usize, grid: &WorkingGrid, t: f64) -> f64 {
        let col = self.eigenfunctions.column(k);
        interpolate_at(grid.points(), col.as_slice(), t)
    }
}

#[inline]
fn gauss(u: f64) -> f64 {
    (-0.5 * u * u).exp()
}

/// Weighted local-linear fit at `x0` over the index window `lo..hi` of
/// time-sorted samples. Falls back to a local-constant fit when the design
/// is singular, and to the nearest sample when no weight survives the
/// kernel cutoff.
struct LocalFit {
    value: f64,
    used_constant: bool,
    resid_var: f64,
    n_eff: f64,
}

fn local_linear_at(
    xs: &[f64],
    ys: &[f64],
    ws: &[f64],
    lo: usize,
    hi: usize,
    x0: f64,
    h: f64,
) -> LocalFit {
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    let (mut t0, mut t1) = (0.0, 0.0);
    for u in lo..hi {
        let d = xs[u] - x0;
        let w = ws[u] * gauss(d / h);
        s0 += w;
        s1 += w * d;
        s2 += w * d * d;
        t0 += w * ys[u];
        t1 += w * d * ys[u];
    }

    if s0 <= 0.0 || !s0.is_finite() {
        // Nothing in the window: nearest sample wins.
        let mut best = lo;
        let mut best_d = f64::INFINITY;
        for (u, &x) in xs.iter().enumerate() {
            let d = (x - x0).abs();
            if d < best_d {
                best_d = d;
                best = u;
            }
        }
        return LocalFit {
            value: ys[best],
            used_constant: true,
            resid_var: 0.0,
            n_eff: 1.0,
        };
    }

    let denom = s0 * s2 - s1 * s1;
    let singular = denom <= 1e-12 * s0 * s2.max(1e-300);
    let (beta0, beta1) = if singular {
        (t0 / s0, 0.0)
    } else {
        ((s2 * t0 - s1 * t1) / denom, (s0 * t1 - s1 * t0) / denom)
    };

    // Kernel-weighted residual variance and effective sample size.
    let mut wres = 0.0;
    let mut w2 = 0.0;
    for u in lo..hi {
        let d = xs[u] - x0;
        let w = ws[u] * gauss(d / h);
        let e = ys[u] - beta0 - beta1 * d;
        wres += w * e * e;
        w2 += w * w;
    }
    let n_eff = if w2 > 0.0 { s0 * s0 / w2 } else { 1.0 };
    LocalFit {
        value: beta0,
        used_constant: singular,
        resid_var: wres / s0,
        n_eff,
    }
}

/// Index window of time-sorted `xs` within `cutoff * h` of `x0`.
fn kernel_window(xs: &[f64], x0: f64, h: f64) -> (usize, usize) {
    let lo = xs.partition_point(|&x| x < x0 - KERNEL_CUTOFF * h);
    let hi = xs.partition_point(|&x| x <= x0 + KERNEL_CUTOFF * h);
    (lo, hi)
}

/// Pooled samples sorted by time, remembering the unit each came from.
struct Pooled {
    xs: Vec<f64>,
    ys: Vec<f64>,
    unit: Vec<usize>,
}

fn pool_sorted(signals: &[Signal]) -> Pooled {
    let mut triples: Vec<(f64, f64, usize)> = Vec::new();
    for (i, sig) in signals.iter().enumerate() {
        for (&t, &y) in sig.times().iter().zip(sig.values()) {
            triples.push((t, y, i));
        }
    }
    triples.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
    Pooled {
        xs: triples.iter().map(|t| t.0).collect(),
        ys: triples.iter().map(|t| t.1).collect(),
        unit: triples.iter().map(|t| t.2).collect(),
    }
}

/// Cross-validation score of bandwidth `h`: squared error of predicting each
/// held-out unit-fold from the remaining folds.
fn cv_score(pool: &Pooled, h: f64, n_folds: usize) -> f64 {
    let mut sse = 0.0;
    for fold in 0..n_folds {
        for u in 0..pool.xs.len() {
            if pool.unit[u] % n_folds != fold {
                continue;
            }
            let x0 = pool.xs[u];
            let (lo, hi) = kernel_window(&pool.xs, x0, h);
            // Inline fit skipping the held-out fold.
            let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
            let (mut t0, mut t1) = (0.0, 0.0);
            for v in lo..hi {
                if pool.unit[v] % n_folds == fold {
                    continue;
                }
                let d = pool.xs[v] - x0;
                let w = gauss(d / h);
                s0 += w;
                s1 += w * d;
                s2 += w * d * d;
                t0 += w * pool.ys[v];
                t1 += w * d * pool.ys[v];
            }
            let pred = if s0 <= 0.0 {
                // Nearest training sample outside the fold.
                let mut best = f64::INFINITY;
                let mut val = 0.0;
                for v in 0..pool.xs.len() {
                    if pool.unit[v] % n_folds == fold {
                        continue;
                    }
                    let d = (pool.xs[v] - x0).abs();
                    if d < best {
                        best = d;
                        val = pool.ys[v];
                    }
                }
                val
            } else {
                let denom = s0 * s2 - s1 * s1;
                if denom <= 1e-12 * s0 * s2.max(1e-300) {
                    t0 / s0
                } else {
                    (s2 * t0 - s1 * t1) / denom
                }
            };
            let _ = &ones;
            let e = pool.ys[u] - pred;
            sse += e * e;
        }
    }
    sse
}

fn auto_bandwidth(pool: &Pooled, grid: &WorkingGrid) -> f64 {
    let lo = 0.5 * grid.spacing();
    let hi = 0.25 * grid.domain().length();
    let n_cand = 10;
    let candidates: Vec<f64> = (0..n_cand)
        .map(|i| {
            let t = i as f64 / (n_cand - 1) as f64;
            (lo.ln() + t * (hi.ln() - lo.ln())).exp()
        })
        .collect();
    let scores: Vec<f64> = candidates.par_iter().map(|&h| cv_score(pool, h, 5)).collect();
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    candidates[best]
}

/// Pooled local-linear estimate of the mean function.
pub fn local_linear_mean(
    signals: &[Signal],
    grid: &WorkingGrid,
    bandwidth: Bandwidth,
) -> Result<SmoothedMean> {
    if signals.len() < 2 {
        return Err(Error::TooFewSignals {
            need: 2,
            got: signals.len(),
        });
    }
    let pool = pool_sorted(signals);
    if pool.xs.is_empty() {
        return Err(Error::EmptySignal);
    }
    let h = match bandwidth {
        Bandwidth::Fixed(h) => {
            if !(h > 0.0) {
                return Err(Error::InvalidConfig(format!("bandwidth must be > 0, got {h}")));
            }
            h
        }
        Bandwidth::Auto => auto_bandwidth(&pool, grid),
    };

    let ones = vec![1.0; pool.xs.len()];
    let fits: Vec<LocalFit> = grid
        .points()
        .par_iter()
        .map(|&x0| {
            let (lo, hi) = kernel_window(&pool.xs, x0, h);
            local_linear_at(&pool.xs, &pool.ys, &ones, lo, hi, x0, h)
        })
        .collect();

    Ok(SmoothedMean {
        values: fits.iter().map(|f| f.value).collect(),
        pointwise_variance: fits.iter().map(|f| f.resid_var / f.n_eff).collect(),
        bandwidth: h,
        constant_fallback: fits.iter().any(|f| f.used_constant),
    })
}

/// Binned raw cross-products: per-cell sums and counts.
struct ProductBins {
    /// Filled off-diagonal cells as (row bin, col bin, count, mean product),
    /// sorted by row bin.
    cells: Vec<(usize, usize, f64, f64)>,
    /// 1D bins of raw squared residuals (the inflated diagonal).
    diag: Vec<(usize, f64, f64)>,
    skipped: usize,
}

fn bin_products(signals: &[Signal], mean: &SmoothedMean, grid: &WorkingGrid) -> ProductBins {
    let q = grid.len();
    let a = grid.domain().a();
    let inv = 1.0 / grid.spacing();
    let bin_of = |t: f64| -> usize { (((t - a) * inv).round().max(0.0) as usize).min(q - 1) };

    let mut sums = vec![0.0; q * q];
    let mut counts = vec![0.0; q * q];
    let mut dsum = vec![0.0; q];
    let mut dcount = vec![0.0; q];
    let mut skipped = 0usize;

    for sig in signals {
        let times = sig.times();
        let resid: Vec<f64> = times
            .iter()
            .zip(sig.values())
            .map(|(&t, &y)| y - mean.eval(grid, t))
            .collect();
        for (u, &t) in times.iter().enumerate() {
            let b = bin_of(t);
            dsum[b] += resid[u] * resid[u];
            dcount[b] += 1.0;
        }
        if times.len() < 2 {
            skipped += 1;
            continue;
        }
        for u in 0..times.len() {
            let bu = bin_of(times[u]);
            for v in 0..times.len() {
                if u == v {
                    continue;
                }
                let bv = bin_of(times[v]);
                sums[bu * q + bv] += resid[u] * resid[v];
                counts[bu * q + bv] += 1.0;
            }
        }
    }

    let mut cells = Vec::new();
    for bu in 0..q {
        for bv in 0..q {
            let c = counts[bu * q + bv];
            if c > 0.0 {
                cells.push((bu, bv, c, sums[bu * q + bv] / c));
            }
        }
    }
    let diag = (0..q)
        .filter(|&b| dcount[b] > 0.0)
        .map(|b| (b, dcount[b], dsum[b] / dcount[b]))
        .collect();
    ProductBins {
        cells,
        diag,
        skipped,
    }
}

/// Product local-linear smooth of the binned products at grid point
/// `(s1, s2)`. Weighted 3x3 normal equations with graceful degradation to a
/// weighted mean and finally to the nearest filled cell.
fn smooth_surface_at(
    cells: &[(usize, usize, f64, f64)],
    grid_pts: &[f64],
    s1: f64,
    s2: f64,
    h: f64,
) -> f64 {
    let cut = KERNEL_CUTOFF * h;
    let mut m = [0.0f64; 9];
    let mut b = [0.0f64; 3];
    let mut wsum = 0.0;
    for &(bu, bv, c, val) in cells {
        let d1 = grid_pts[bu] - s1;
        if d1.abs() > cut {
            continue;
        }
        let d2 = grid_pts[bv] - s2;
        if d2.abs() > cut {
            continue;
        }
        let w = c * gauss(d1 / h) * gauss(d2 / h);
        wsum += w;
        m[0] += w;
        m[1] += w * d1;
        m[2] += w * d2;
        m[4] += w * d1 * d1;
        m[5] += w * d1 * d2;
        m[8] += w * d2 * d2;
        b[0] += w * val;
        b[1] += w * d1 * val;
        b[2] += w * d2 * val;
    }
    if wsum > 0.0 {
        m[3] = m[1];
        m[6] = m[2];
        m[7] = m[5];
        let a = nalgebra::Matrix3::from_row_slice(&m);
        let rhs = nalgebra::Vector3::from_column_slice(&b);
        if let Some(sol) = a.lu().solve(&rhs) {
            if sol[0].is_finite() {
                // Guard against near-singular blowups by checking the fitted
                // value stays within the local data range scale.
                let scale = b[0] / wsum;
                if (sol[0] - scale).abs() <= 10.0 * (scale.abs() + 1.0) {
                    return sol[0];
                }
            }
        }
        return b[0] / wsum;
    }
    // Empty window: nearest filled cell.
    let mut best = f64::INFINITY;
    let mut val = 0.0;
    for &(bu, bv, _, v) in cells {
        let d = (grid_pts[bu] - s1).powi(2) + (grid_pts[bv] - s2).powi(2);
        if d < best {
            best = d;
            val = v;
        }
    }
    val
}

fn smooth_diag_at(diag: &[(usize, f64, f64)], grid_pts: &[f64], s: f64, h: f64) -> f64 {
    let xs: Vec<f64> = diag.iter().map(|d| grid_pts[d.0]).collect();
    let ws: Vec<f64> = diag.iter().map(|d| d.1).collect();
    let ys: Vec<f64> = diag.iter().map(|d| d.2).collect();
    let fit = local_linear_at(&xs, &ys, &ws, 0, xs.len(), s, h);
    fit.value
}

/// Estimate the covariance surface and noise variance from centered
/// residual cross-products.
pub fn covariance_surface(
    signals: &[Signal],
    mean: &SmoothedMean,
    grid: &WorkingGrid,
) -> Result<CovarianceEstimate> {
    if signals.len() < 2 {
        return Err(Error::TooFewSignals {
            need: 2,
            got: signals.len(),
        });
    }
    let bins = bin_products(signals, mean, grid);
    if bins.cells.is_empty() {
        return Err(Error::DegenerateCovariance);
    }
    let h = mean.bandwidth;
    let q = grid.len();
    let pts = grid.points();

    // Upper triangle (including diagonal), mirrored afterwards; computing one
    // triangle guarantees the symmetrized matrix exactly equals its transpose.
    let rows: Vec<Vec<f64>> = (0..q)
        .into_par_iter()
        .map(|i| {
            (i..q)
                .map(|j| smooth_surface_at(&bins.cells, pts, pts[i], pts[j], h))
                .collect()
        })
        .collect();
    let mut surface = DMatrix::zeros(q, q);
    for i in 0..q {
        for (off, &v) in rows[i].iter().enumerate() {
            let j = i + off;
            surface[(i, j)] = v;
            surface[(j, i)] = v;
        }
    }

    // Noise: average gap between the smoothed raw diagonal (inflated by
    // measurement error) and the smoothed surface diagonal.
    let mut gap = 0.0;
    for i in 0..q {
        let raw = smooth_diag_at(&bins.diag, pts, pts[i], h);
        gap += raw - surface[(i, i)];
    }
    let noise_variance = (gap / q as f64).max(NOISE_FLOOR);

    Ok(CovarianceEstimate {
        surface,
        noise_variance,
        surface_skipped_units: bins.skipped,
    })
}

/// Eigendecompose a covariance surface under the grid's trapezoid quadrature.
///
/// Solves the weighted problem `W^{1/2} S W^{1/2} u = lambda u` and maps
/// eigenvectors back through `W^{-1/2}`, so retained eigenfunctions are
/// exactly orthonormal in the grid-trapezoid inner product and
/// `sum_k lambda_k phi_k phi_k'` reproduces the PSD part of the input.
pub fn eigendecompose(
    surface: &DMatrix<f64>,
    grid: &WorkingGrid,
    noise_variance: f64,
) -> Result<EigenSystem> {
    let q = grid.len();
    if surface.nrows() != q || surface.ncols() != q {
        return Err(Error::LengthMismatch {
            expected: q,
            got: surface.nrows(),
        });
    }
    let scale = surface.amax().max(1.0);
    for i in 0..q {
        for j in (i + 1)..q {
            if (surface[(i, j)] - surface[(j, i)]).abs() > 1e-9 * scale {
                return Err(Error::AsymmetricSurface);
            }
        }
    }

    let w = grid.trapezoid_weights();
    let ws: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    let weighted = DMatrix::from_fn(q, q, |i, j| ws[i] * surface[(i, j)] * ws[j]);
    let eig = weighted.symmetric_eigen();

    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let retained: Vec<usize> = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] > 0.0)
        .collect();

    let mut eigenvalues = Vec::with_capacity(retained.len());
    let mut eigenfunctions = DMatrix::zeros(q, retained.len());
    for (k, &idx) in retained.iter().enumerate() {
        eigenvalues.push(eig.eigenvalues[idx]);
        let mut col = DVector::from_fn(q, |i, _| eig.eigenvectors[(i, idx)] / ws[i]);

        // Sign convention: nonnegative grid integral, ties broken by the
        // first nonzero grid value.
        let integral: f64 = col.iter().zip(&w).map(|(v, wi)| v * wi).sum();
        let flip = if integral.abs() > 1e-12 {
            integral < 0.0
        } else {
            col.iter().find(|v| v.abs() > 1e-12).is_some_and(|v| *v < 0.0)
        };
        if flip {
            col.neg_mut();
        }
        eigenfunctions.set_column(k, &col);
    }

    Ok(EigenSystem {
        eigenvalues,
        eigenfunctions,
        noise_variance: noise_variance.max(NOISE_FLOOR),
    })
}

/// Grid-orthonormality defect of two eigenfunction columns: the deviation of
/// their trapezoid inner product from the Kronecker delta.
pub fn orthonormality_defect(eigen: &EigenSystem, grid: &WorkingGrid) -> f64 {
    let k = eigen.n_components();
    let mut worst = 0.0f64;
    for i in 0..k {
        for j in i..k {
            let ip = trapezoid_inner(
                eigen.eigenfunctions.column(i).as_slice(),
                eigen.eigenfunctions.column(j).as_slice(),
                grid,
            )
            .expect("columns live on the grid");
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((ip - target).abs());
        }
    }
    worst
}
