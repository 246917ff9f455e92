//! Irregularly sampled signals, working grids and quadrature.
//!
//! Every estimator in this crate operates either on raw [`Signal`] samples or
//! on values discretized to a [`WorkingGrid`]. Interpolation is linear with
//! constant extension beyond the first/last sample, and integrals are
//! trapezoidal; both choices are deliberately simple because all downstream
//! smoothing dominates their error.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed time interval `[a, b]` on which signals live.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeDomain {
    a: f64,
    b: f64,
}

impl TimeDomain {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidDomain { a, b });
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.a && t <= self.b
    }
}

/// One stream of one unit: sorted `(time, value)` samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    times: Vec<f64>,
    values: Vec<f64>,
    unit_id: String,
    stream_id: String,
}

impl Signal {
    /// Build a signal from samples. Times must be finite and strictly
    /// increasing, values finite, and at least one sample present.
    pub fn new(
        unit_id: impl Into<String>,
        stream_id: impl Into<String>,
        times: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::EmptySignal);
        }
        if times.len() != values.len() {
            return Err(Error::LengthMismatch {
                expected: times.len(),
                got: values.len(),
            });
        }
        for w in times.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::InvalidSignal(format!(
                    "times not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if times.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSignal("non-finite sample".into()));
        }
        Ok(Self {
            times,
            values,
            unit_id: unit_id.into(),
            stream_id: stream_id.into(),
        })
    }

    /// Sample a function on equispaced points over `domain`.
    pub fn from_fn(
        unit_id: impl Into<String>,
        stream_id: impl Into<String>,
        domain: TimeDomain,
        n_points: usize,
        f: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let times = linspace(domain.a(), domain.b(), n_points);
        let values = times.iter().map(|&t| f(t)).collect();
        Self::new(unit_id, stream_id, times, values)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn unit_id(&self) -> &str {
        &self.unit_id
    }

    pub fn stream_id(&self) -> &str {
        &self.stream_id
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Keep samples with `time <= t_star`. The result may be empty.
    pub fn restrict(&self, t_star: f64) -> Signal {
        let cut = self.times.partition_point(|&t| t <= t_star);
        Signal {
            times: self.times[..cut].to_vec(),
            values: self.values[..cut].to_vec(),
            unit_id: self.unit_id.clone(),
            stream_id: self.stream_id.clone(),
        }
    }

    /// Keep samples with `time > t_star` (complement of [`Signal::restrict`]).
    pub fn after(&self, t_star: f64) -> Signal {
        let cut = self.times.partition_point(|&t| t <= t_star);
        Signal {
            times: self.times[cut..].to_vec(),
            values: self.values[cut..].to_vec(),
            unit_id: self.unit_id.clone(),
            stream_id: self.stream_id.clone(),
        }
    }

    pub fn span(&self) -> Option<(f64, f64)> {
        match (self.times.first(), self.times.last()) {
            (Some(&a), Some(&b)) => Some((a, b)),
            _ => None,
        }
    }
}

/// Equispaced discretization of a [`TimeDomain`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkingGrid {
    points: Vec<f64>,
    spacing: f64,
    domain: TimeDomain,
}

/// Default grid resolution. Paper-scale curves are visually smooth at this
/// resolution and quadrature error sits well below estimation noise.
pub const DEFAULT_GRID_SIZE: usize = 101;

impl WorkingGrid {
    pub fn new(domain: TimeDomain, q: usize) -> Result<Self> {
        if q < 2 {
            return Err(Error::InvalidGrid(format!("need Q >= 2 points, got {q}")));
        }
        let points = linspace(domain.a(), domain.b(), q);
        let spacing = domain.length() / (q - 1) as f64;
        Ok(Self {
            points,
            spacing,
            domain,
        })
    }

    pub fn with_default_size(domain: TimeDomain) -> Result<Self> {
        Self::new(domain, DEFAULT_GRID_SIZE)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn domain(&self) -> TimeDomain {
        self.domain
    }

    /// Trapezoid quadrature weights: `spacing * [1/2, 1, ..., 1, 1/2]`.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let q = self.points.len();
        let mut w = vec![self.spacing; q];
        w[0] *= 0.5;
        w[q - 1] *= 0.5;
        w
    }
}

/// All streams of one unit. Streams are keyed by id and may be sampled on
/// different time points; nothing here assumes a shared clock.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnitRecord {
    unit_id: String,
    streams: BTreeMap<String, Signal>,
}

impl UnitRecord {
    pub fn new(unit_id: impl Into<String>) -> Self {
        Self {
            unit_id: unit_id.into(),
            streams: BTreeMap::new(),
        }
    }

    /// Insert a stream. The signal's unit id must match the record's.
    pub fn insert(&mut self, signal: Signal) -> Result<()> {
        if signal.unit_id() != self.unit_id {
            return Err(Error::InvalidSignal(format!(
                "signal unit {} does not match record unit {}",
                signal.unit_id(),
                self.unit_id
            )));
        }
        self.streams.insert(signal.stream_id().to_string(), signal);
        Ok(())
    }

    pub fn unit_id(&self) -> &str {
        &self.unit_id
    }

    pub fn stream(&self, stream_id: &str) -> Option<&Signal> {
        self.streams.get(stream_id)
    }

    pub fn stream_ids(&self) -> impl Iterator<Item = &str> {
        self.streams.keys().map(|s| s.as_str())
    }

    pub fn streams(&self) -> impl Iterator<Item = (&str, &Signal)> {
        self.streams.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn n_streams(&self) -> usize {
        self.streams.len()
    }

    /// Record with every stream restricted to `time <= t_star`. Streams left
    /// empty by the restriction are dropped.
    pub fn restrict(&self, t_star: f64) -> UnitRecord {
        let mut out = UnitRecord::new(self.unit_id.clone());
        for sig in self.streams.values() {
            let r = sig.restrict(t_star);
            if !r.is_empty() {
                out.streams.insert(r.stream_id().to_string(), r);
            }
        }
        out
    }
}

/// `n` equispaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let step = (b - a) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { b } else { a + step * i as f64 })
        .collect()
}

/// Linear interpolation of `(times, values)` at `t`, with constant extension
/// beyond the first/last sample.
pub fn interpolate_at(times: &[f64], values: &[f64], t: f64) -> f64 {
    debug_assert_eq!(times.len(), values.len());
    debug_assert!(!times.is_empty());
    let n = times.len();
    if t <= times[0] {
        return values[0];
    }
    if t >= times[n - 1] {
        return values[n - 1];
    }
    // partition_point returns the first index with times[i] > t.
    let hi = times.partition_point(|&x| x <= t);
    let lo = hi - 1;
    let w = (t - times[lo]) / (times[hi] - times[lo]);
    values[lo] + w * (values[hi] - values[lo])
}

/// Evaluate a signal on every grid point by linear interpolation with
/// constant end extension.
pub fn interpolate_to_grid(sig: &Signal, grid: &WorkingGrid) -> Result<Vec<f64>> {
    if sig.is_empty() {
        return Err(Error::EmptySignal);
    }
    Ok(grid
        .points()
        .iter()
        .map(|&t| interpolate_at(sig.times(), sig.values(), t))
        .collect())
}

/// Trapezoidal quadrature of grid values.
pub fn trapezoid_integral(values: &[f64], grid: &WorkingGrid) -> Result<f64> {
    if values.len() != grid.len() {
        return Err(Error::LengthMismatch {
            expected: grid.len(),
            got: values.len(),
        });
    }
    let sum: f64 = values.iter().sum();
    let ends = 0.5 * (values[0] + values[values.len() - 1]);
    Ok(grid.spacing() * (sum - ends))
}

/// Trapezoid inner product `∫ f g` on the grid.
pub fn trapezoid_inner(f: &[f64], g: &[f64], grid: &WorkingGrid) -> Result<f64> {
    if f.len() != g.len() {
        return Err(Error::LengthMismatch {
            expected: f.len(),
            got: g.len(),
        });
    }
    let prod: Vec<f64> = f.iter().zip(g).map(|(a, b)| a * b).collect();
    trapezoid_integral(&prod, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_grid(q: usize) -> WorkingGrid {
        WorkingGrid::new(TimeDomain::new(0.0, 1.0).unwrap(), q).unwrap()
    }

    #[test]
    fn domain_rejects_degenerate_interval() {
        assert!(TimeDomain::new(1.0, 1.0).is_err());
        assert!(TimeDomain::new(2.0, 1.0).is_err());
        assert!(TimeDomain::new(0.0, f64::NAN).is_err());
    }

    #[test]
    fn signal_rejects_bad_input() {
        assert!(matches!(
            Signal::new("u", "s", vec![], vec![]),
            Err(Error::EmptySignal)
        ));
        assert!(Signal::new("u", "s", vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(Signal::new("u", "s", vec![0.0, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn interpolation_of_a_line() {
        let sig = Signal::new("u", "s", vec![0.0, 1.0], vec![1.0, 3.0]).unwrap();
        let grid = unit_grid(3);
        let vals = interpolate_to_grid(&sig, &grid).unwrap();
        assert_eq!(vals, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn constant_extension_beyond_single_sample() {
        let sig = Signal::new("u", "s", vec![0.0], vec![5.0]).unwrap();
        let grid = WorkingGrid::new(TimeDomain::new(0.0, 2.0).unwrap(), 3).unwrap();
        let vals = interpolate_to_grid(&sig, &grid).unwrap();
        assert_eq!(vals, vec![5.0, 5.0, 5.0]);
    }

    #[test]
    fn interpolation_tracks_sine_from_random_samples() {
        // Derived check: interpolate 50 irregular samples of sin onto a 200
        // point grid and compare against direct evaluation.
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut times: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 6.0).collect();
        times.sort_by(f64::total_cmp);
        times.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        // Pin the endpoints so constant extension plays no role.
        times[0] = 0.0;
        *times.last_mut().unwrap() = 6.0;
        let values: Vec<f64> = times.iter().map(|&t| t.sin()).collect();
        let sig = Signal::new("u", "s", times, values).unwrap();
        let grid = WorkingGrid::new(TimeDomain::new(0.0, 6.0).unwrap(), 200).unwrap();
        let vals = interpolate_to_grid(&sig, &grid).unwrap();
        let max_err = vals
            .iter()
            .zip(grid.points())
            .map(|(v, &t)| (v - t.sin()).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 0.01, "max interpolation error {max_err}");
    }

    #[test]
    fn trapezoid_of_constant_one() {
        let grid = unit_grid(11);
        let v = vec![1.0; 11];
        assert!((trapezoid_integral(&v, &grid).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn trapezoid_exact_for_linear() {
        let grid = unit_grid(101);
        let v: Vec<f64> = grid.points().to_vec();
        assert!((trapezoid_integral(&v, &grid).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn trapezoid_of_t_squared() {
        // Analytic integral of t^2 on [0,1] is 1/3.
        let grid = unit_grid(101);
        let v: Vec<f64> = grid.points().iter().map(|t| t * t).collect();
        let got = trapezoid_integral(&v, &grid).unwrap();
        assert!((got - 1.0 / 3.0).abs() < 1e-4, "got {got}");
    }

    #[test]
    fn trapezoid_rejects_length_mismatch() {
        let grid = unit_grid(11);
        assert!(trapezoid_integral(&[1.0; 10], &grid).is_err());
    }

    #[test]
    fn restrict_keeps_prefix() {
        let sig = Signal::new("u", "s", vec![1.0, 2.0, 3.0], vec![10.0, 20.0, 30.0]).unwrap();
        let r = sig.restrict(2.0);
        assert_eq!(r.times(), &[1.0, 2.0]);
        assert_eq!(r.values(), &[10.0, 20.0]);

        assert!(sig.restrict(0.5).is_empty());

        let full = sig.restrict(3.0);
        assert_eq!(full, sig);
    }

    #[test]
    fn unit_record_rejects_foreign_signal() {
        let mut rec = UnitRecord::new("u1");
        let sig = Signal::new("u2", "s", vec![0.0], vec![1.0]).unwrap();
        assert!(rec.insert(sig).is_err());
    }

    proptest! {
        #[test]
        fn affine_signals_reproduced_exactly(slope in -5.0f64..5.0, intercept in -5.0f64..5.0) {
            let sig = Signal::new("u", "s", vec![0.0, 0.3, 1.0], vec![
                intercept, intercept + 0.3 * slope, intercept + slope,
            ]).unwrap();
            let grid = unit_grid(17);
            let vals = interpolate_to_grid(&sig, &grid).unwrap();
            for (v, &t) in vals.iter().zip(grid.points()) {
                prop_assert!((v - (intercept + slope * t)).abs() < 1e-12);
            }
        }

        #[test]
        fn trapezoid_is_linear_in_values(scale in -3.0f64..3.0) {
            let grid = unit_grid(21);
            let f: Vec<f64> = grid.points().iter().map(|t| t.cos()).collect();
            let g: Vec<f64> = grid.points().iter().map(|t| t * t - 0.5).collect();
            let combo: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + scale * b).collect();
            let lhs = trapezoid_integral(&combo, &grid).unwrap();
            let rhs = trapezoid_integral(&f, &grid).unwrap()
                + scale * trapezoid_integral(&g, &grid).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn restrict_composes_as_min(t1 in 0.0f64..4.0, t2 in 0.0f64..4.0) {
            let sig = Signal::new(
                "u", "s",
                vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
                vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            ).unwrap();
            let twice = sig.restrict(t1).restrict(t2);
            let once = sig.restrict(t1.min(t2));
            prop_assert_eq!(twice, once);
        }
    }
}
