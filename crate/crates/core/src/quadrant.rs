//! Correlated Brownian bridges conditioned to stay in the positive quadrant,
//! cone excursions as relaxed loops, and the E_k tail experiment.
//!
//! Conditioning is by rejection on the sampling grid. Every attempt draws
//! from its own substream, so a ladder of relaxations evaluated with the same
//! (key, task) reuses the same Gaussian innovations.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brownian::normal;
use crate::error::{Error, Result};
use crate::path::{PathDim, SampledPath};
use crate::rng::{ModuleId, StreamKey, StreamRng};

/// Parameters of a relaxed quadrant bridge on [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadrantBridgeSpec {
    /// Correlation of the two coordinates, in (−1, 1).
    pub correlation_alpha: f64,
    /// End point on the boundary of the quadrant.
    pub endpoint: (f64, f64),
    /// Route a: start at the origin and stay ≥ −δ.
    pub relaxation_delta: f64,
    /// Route b: start at (s, s) and stay ≥ 0.
    pub start_offset: f64,
    pub n_steps: usize,
    pub max_attempts: u64,
}

impl QuadrantBridgeSpec {
    /// Route a loop back to the origin.
    pub fn relaxed_loop(alpha: f64, delta: f64, n_steps: usize) -> Self {
        Self {
            correlation_alpha: alpha,
            endpoint: (0.0, 0.0),
            relaxation_delta: delta,
            start_offset: 0.0,
            n_steps,
            max_attempts: 50_000_000,
        }
    }

    /// Route b loop back to the origin.
    pub fn offset_loop(alpha: f64, offset: f64, n_steps: usize) -> Self {
        Self {
            start_offset: offset,
            relaxation_delta: 0.0,
            ..Self::relaxed_loop(alpha, 0.0, n_steps)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.correlation_alpha > -1.0 && self.correlation_alpha < 1.0) {
            return Err(Error::domain(format!("correlation {} outside (-1,1)", self.correlation_alpha)));
        }
        let (x, y) = self.endpoint;
        if !(x >= 0.0 && y >= 0.0 && (x == 0.0 || y == 0.0)) {
            return Err(Error::domain(format!("endpoint {:?} is not on the quadrant boundary", self.endpoint)));
        }
        let a = self.relaxation_delta > 0.0;
        let b = self.start_offset > 0.0;
        if self.relaxation_delta < 0.0 || self.start_offset < 0.0 {
            return Err(Error::domain("relaxation parameters must be nonnegative"));
        }
        if a == b {
            return Err(Error::domain(
                "exactly one of relaxation_delta and start_offset must be positive",
            ));
        }
        if self.n_steps < 2 {
            return Err(Error::domain("need at least two steps"));
        }
        Ok(())
    }

    fn start(&self) -> (f64, f64) {
        (self.start_offset, self.start_offset)
    }

    /// Lower bound enforced at interior grid points.
    pub fn lower_bound(&self) -> f64 {
        -self.relaxation_delta
    }
}

/// The linear map sending correlated BM to standard planar BM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WedgeMap {
    pub theta: f64,
    pub zeta: f64,
    pub lambda_matrix: [[f64; 2]; 2],
}

impl WedgeMap {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > -1.0 && alpha < 1.0) {
            return Err(Error::domain(format!("|alpha| must be < 1, got {alpha}")));
        }
        let s = (1.0 - alpha * alpha).sqrt();
        let theta = (-alpha).acos();
        Ok(Self {
            theta,
            zeta: std::f64::consts::PI / theta,
            lambda_matrix: [[1.0, 0.0], [-alpha / s, 1.0 / s]],
        })
    }

    pub fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let m = &self.lambda_matrix;
        (m[0][0] * x + m[0][1] * y, m[1][0] * x + m[1][1] * y)
    }
}

/// Apply the wedge map pointwise.
pub fn wedge_transform(path: &SampledPath, map: &WedgeMap) -> Result<SampledPath> {
    if path.dim() != PathDim::Planar {
        return Err(Error::domain("wedge transform needs a planar path"));
    }
    let values = (0..path.len())
        .flat_map(|i| {
            let (a, b) = map.apply(path.point(i));
            [a, b]
        })
        .collect();
    SampledPath::new(path.times().to_vec(), values, PathDim::Planar)
}

/// A conditioned bridge together with the number of attempts it took.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrantSample {
    pub path: SampledPath,
    pub attempts: u64,
}

/// Correlated bridge from `from` at time `times[0]` to `to` at `times[last]`,
/// rejected as soon as an interior grid point has a coordinate below `lower`.
/// Returns interleaved values including both endpoints.
fn conditioned_bridge_attempt<R: Rng + ?Sized>(
    alpha: f64,
    times: &[f64],
    from: (f64, f64),
    to: (f64, f64),
    lower: f64,
    rng: &mut R,
) -> Option<Vec<f64>> {
    let perp = (1.0 - alpha * alpha).sqrt();
    let n = times.len() - 1;
    let t_end = times[n];
    let mut out = Vec::with_capacity(2 * (n + 1));
    out.extend([from.0, from.1]);
    let (mut x, mut y) = from;
    for k in 0..n - 1 {
        let (t, t1) = (times[k], times[k + 1]);
        let rem = t_end - t;
        let w = (t1 - t) / rem;
        let sd = ((t1 - t) * (t_end - t1) / rem).sqrt();
        let z1 = normal(rng);
        let z2 = normal(rng);
        x += w * (to.0 - x) + sd * z1;
        y += w * (to.1 - y) + sd * (alpha * z1 + perp * z2);
        if x < lower || y < lower {
            return None;
        }
        out.extend([x, y]);
    }
    out.extend([to.0, to.1]);
    Some(out)
}

fn attempt_rng(key: &StreamKey, task: u64, attempt: u64) -> StreamRng {
    key.sub_rng(ModuleId::Quadrant, task, attempt)
}

fn sample_bridge_with(spec: &QuadrantBridgeSpec, key: &StreamKey, task: u64) -> Result<QuadrantSample> {
    spec.validate()?;
    let n = spec.n_steps;
    let times: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
    for attempt in 0..spec.max_attempts {
        let mut rng = attempt_rng(key, task, attempt);
        if let Some(values) = conditioned_bridge_attempt(
            spec.correlation_alpha,
            &times,
            spec.start(),
            spec.endpoint,
            spec.lower_bound(),
            &mut rng,
        ) {
            return Ok(QuadrantSample {
                path: SampledPath::new(times, values, PathDim::Planar)?,
                attempts: attempt + 1,
            });
        }
    }
    Err(Error::retry(spec.max_attempts, 0))
}

/// Relaxed quadrant bridge on [0, 1], conditioned by rejection.
///
/// Route a starts at the origin and keeps both coordinates ≥ −δ at interior
/// grid points; route b starts at (s, s) and keeps them ≥ 0.
pub fn sample_quadrant_loop(spec: &QuadrantBridgeSpec, key: &StreamKey, task: u64) -> Result<QuadrantSample> {
    sample_bridge_with(spec, key, task)
}

/// Replace the path on [s, t] by a fresh bridge between Z_s and Z_t subject to
/// the same constraint as `spec`. `s` and `t` are snapped to the nearest grid
/// times; the endpoints of the window are left untouched.
pub fn resample_middle_segment(path: &SampledPath, s: f64, t: f64, spec: &QuadrantBridgeSpec, key: &StreamKey, task: u64) -> Result<QuadrantSample> {
    spec.validate()?;
    if !(0.0 < s && s < t && t < 1.0) {
        return Err(Error::domain(format!("need 0 < s < t < 1, got s={s}, t={t}")));
    }
    if path.dim() != PathDim::Planar {
        return Err(Error::domain("resampling needs a planar path"));
    }
    let i = path.index_near(s);
    let j = path.index_near(t);
    if j <= i {
        return Err(Error::domain("window collapses on the grid"));
    }
    if j == i + 1 {
        return Ok(QuadrantSample {
            path: path.clone(),
            attempts: 0,
        });
    }
    let times = &path.times()[i..=j];
    for attempt in 0..spec.max_attempts {
        let mut rng = attempt_rng(key, task, attempt);
        if let Some(seg) = conditioned_bridge_attempt(
            spec.correlation_alpha,
            times,
            path.point(i),
            path.point(j),
            spec.lower_bound(),
            &mut rng,
        ) {
            let mut values = path.values().to_vec();
            values[2 * i..2 * (j + 1)].copy_from_slice(&seg);
            return Ok(QuadrantSample {
                path: SampledPath::new(path.times().to_vec(), values, PathDim::Planar)?,
                attempts: attempt + 1,
            });
        }
    }
    Err(Error::retry(spec.max_attempts, 0))
}

/// A unit-length cone excursion ending at (ε, 0) or (0, ε), under the same
/// relaxation as `spec` (whose endpoint is ignored). The orientation is a fair
/// coin drawn from the task's own stream; ε = 0 gives the loop.
pub fn cone_excursion_as_loop(epsilon: f64, spec: &QuadrantBridgeSpec, key: &StreamKey, task: u64) -> Result<QuadrantSample> {
    if !(epsilon >= 0.0) {
        return Err(Error::domain("epsilon must be nonnegative"));
    }
    let mut coin = key.rng(ModuleId::Quadrant, task);
    let endpoint = if coin.random::<bool>() { (epsilon, 0.0) } else { (0.0, epsilon) };
    let spec = QuadrantBridgeSpec { endpoint, ..*spec };
    sample_bridge_with(&spec, key, task)
}

/// One row of an E_k table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EkEstimate {
    pub k: u32,
    pub p_hat: f64,
    pub stderr: f64,
    pub n_trials: u64,
}

/// Discretization of the E_k experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EkGrid {
    pub dt: f64,
    /// A trial is abandoned (counted as no event) after `horizon_factor·(k+1)`
    /// time units past the start window.
    pub horizon_factor: f64,
}

impl Default for EkGrid {
    fn default() -> Self {
        Self {
            dt: 1.0 / 32.0,
            horizon_factor: 5.0,
        }
    }
}

/// One trial: does a cone excursion start in the first unit of time, last at
/// least k+1 and close with terminal displacement ≤ 1?
fn ek_trial<R: Rng + ?Sized>(alpha: f64, k: u32, grid: &EkGrid, rng: &mut R) -> bool {
    let perp = (1.0 - alpha * alpha).sqrt();
    let sd = grid.dt.sqrt();
    let window = (1.0 / grid.dt).round() as usize;
    let min_len = ((k as f64 + 1.0) / grid.dt).round() as usize;
    let cap = window + ((grid.horizon_factor * (k as f64 + 1.0)) / grid.dt).ceil() as usize;
    // active candidates: (start index, base x, base y)
    let mut active: Vec<(usize, f64, f64)> = Vec::with_capacity(window + 1);
    let (mut x, mut y) = (0.0, 0.0);
    for i in 0..=cap {
        if i > 0 {
            let z1 = normal(rng);
            let z2 = normal(rng);
            let (px, py) = (x, y);
            x += sd * z1;
            y += sd * (alpha * z1 + perp * z2);
            let mut hit = false;
            active.retain(|&(s, bx, by)| {
                if x > bx && y > by {
                    return true;
                }
                if i - s >= min_len {
                    let wx = if x <= bx { (px - bx) / (px - x) } else { f64::INFINITY };
                    let wy = if y <= by { (py - by) / (py - y) } else { f64::INFINITY };
                    let terminal = if wx <= wy { py + wx * (y - py) - by } else { px + wy * (x - px) - bx };
                    if terminal <= 1.0 {
                        hit = true;
                    }
                }
                false
            });
            if hit {
                return true;
            }
        }
        if i <= window {
            active.push((i, x, y));
        } else if active.is_empty() {
            return false;
        }
    }
    false
}

/// Monte Carlo estimate of P[E_k] for each k. Trial `i` of rung `k` uses the
/// stream (seed, k, i), so the result does not depend on the thread count.
pub fn estimate_ek_probability(alpha: f64, k_values: &[u32], n_trials: u64, grid: &EkGrid, key: &StreamKey) -> Result<Vec<EkEstimate>> {
    if !(alpha > -1.0 && alpha < 1.0) {
        return Err(Error::domain("|alpha| must be < 1"));
    }
    if k_values.iter().any(|&k| k < 1) || n_trials == 0 {
        return Err(Error::domain("need k >= 1 and at least one trial"));
    }
    k_values
        .iter()
        .map(|&k| {
            let sub = key.child(&[k as u64]);
            let hits: u64 = (0..n_trials)
                .into_par_iter()
                .map(|i| {
                    let mut rng = sub.rng(ModuleId::Quadrant, i);
                    ek_trial(alpha, k, grid, &mut rng) as u64
                })
                .sum();
            let p = hits as f64 / n_trials as f64;
            Ok(EkEstimate {
                k,
                p_hat: p,
                stderr: crate::stats::binomial_stderr(p, n_trials as usize).max(1.0 / n_trials as f64),
                n_trials,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_distance, two_sample_ks};

    fn key() -> StreamKey {
        StreamKey::new(2024)
    }

    #[test]
    fn spec_validation() {
        let mut s = QuadrantBridgeSpec::relaxed_loop(0.0, 0.1, 64);
        assert!(s.validate().is_ok());
        s.start_offset = 0.1;
        assert!(s.validate().is_err());
        s.relaxation_delta = 0.0;
        assert!(s.validate().is_ok());
        s.start_offset = 0.0;
        assert!(s.validate().is_err());
        s.relaxation_delta = 0.1;
        s.endpoint = (1.0, 1.0);
        assert!(s.validate().is_err());
        s.endpoint = (0.0, 0.0);
        s.correlation_alpha = 1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn wedge_map_properties() {
        let id = WedgeMap::new(0.0).unwrap();
        assert_eq!(id.lambda_matrix, [[1.0, 0.0], [0.0, 1.0]]);
        assert!((id.zeta - 2.0).abs() < 1e-15);
        let m = WedgeMap::new(0.5).unwrap();
        assert!((m.theta - 2.0 * std::f64::consts::PI / 3.0).abs() < 1e-12);
        let (ax, ay) = m.apply((1.0, 0.0));
        let (bx, by) = m.apply((0.0, 1.0));
        let angle = ((ax * bx + ay * by) / ((ax * ax + ay * ay).sqrt() * (bx * bx + by * by).sqrt())).acos();
        assert!((angle - m.theta).abs() < 1e-9);
        assert!(m.zeta > 1.0);
        assert!(WedgeMap::new(-1.0).is_err());
    }

    #[test]
    fn wedge_whitens_increments() {
        let alpha = 0.5;
        let mut rng = crate::rng::seeded(1);
        let p = crate::brownian::sample_correlated_bm_rho(alpha, 1.0, 1_000_000, &mut rng).unwrap();
        let q = wedge_transform(&p, &WedgeMap::new(alpha).unwrap()).unwrap();
        let (xs, ys) = (q.xs(), q.ys());
        let dx: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let dy: Vec<f64> = ys.windows(2).map(|w| w[1] - w[0]).collect();
        let n = dx.len() as f64;
        let vxx: f64 = dx.iter().map(|d| d * d).sum::<f64>();
        let vyy: f64 = dy.iter().map(|d| d * d).sum::<f64>();
        let vxy: f64 = dx.iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>();
        let se = (2.0 / n).sqrt();
        assert!((vxx - 1.0).abs() < 3.0 * se && (vyy - 1.0).abs() < 3.0 * se);
        assert!(vxy.abs() < 3.0 / n.sqrt());
    }

    #[test]
    fn loops_are_exact_at_endpoints_and_positive() {
        let spec = QuadrantBridgeSpec::relaxed_loop(0.0, 0.3, 256);
        for task in 0..20 {
            let s = sample_quadrant_loop(&spec, &key(), task).unwrap();
            assert_eq!(s.path.point(0), (0.0, 0.0));
            assert_eq!(s.path.point(256), (0.0, 0.0));
            for i in 1..256 {
                let (x, y) = s.path.point(i);
                assert!(x >= -0.3 && y >= -0.3);
            }
        }
    }

    #[test]
    fn acceptance_rate_is_reproducible() {
        let spec = QuadrantBridgeSpec::relaxed_loop(0.0, 0.3, 256);
        let rate = |seed: u64| {
            let k = StreamKey::new(seed);
            let attempts: u64 = (0..400).map(|t| sample_quadrant_loop(&spec, &k, t).unwrap().attempts).sum();
            400.0 / attempts as f64
        };
        let (a, b) = (rate(1), rate(2));
        assert!(a > 0.0);
        // geometric means over 400 draws: relative sd ≈ sqrt((1-p)/400)
        let sd = (a * a * (1.0 - a) / 400.0).sqrt() + (b * b * (1.0 - b) / 400.0).sqrt();
        assert!((a - b).abs() < 3.0 * sd, "{a} {b}");
        assert_eq!(rate(1), a);
    }

    #[test]
    fn retry_limit_reports_rate() {
        let mut spec = QuadrantBridgeSpec::relaxed_loop(0.0, 1e-4, 256);
        spec.max_attempts = 3;
        match sample_quadrant_loop(&spec, &key(), 0) {
            Err(Error::RetryLimit { attempts, accepted, rate }) => {
                assert_eq!((attempts, accepted), (3, 0));
                assert_eq!(rate, 0.0);
            }
            other => panic!("expected retry limit, got {other:?}"),
        }
    }

    #[test]
    fn resample_keeps_window_endpoints() {
        let spec = QuadrantBridgeSpec::relaxed_loop(0.5, 0.2, 128);
        let p = sample_quadrant_loop(&spec, &key(), 3).unwrap().path;
        let q = resample_middle_segment(&p, 0.25, 0.75, &spec, &StreamKey::new(9), 3).unwrap().path;
        assert_eq!(p.point(32), q.point(32));
        assert_eq!(p.point(96), q.point(96));
        assert_eq!(p.point(0), q.point(0));
        assert_ne!(p.point(64), q.point(64));
        let adjacent = resample_middle_segment(&p, 0.25, 0.25 + 1.0 / 128.0, &spec, &key(), 0).unwrap();
        assert_eq!(adjacent.path, p);
    }

    #[test]
    fn loop_is_time_reversible() {
        let spec = QuadrantBridgeSpec::relaxed_loop(0.5, 0.2, 64);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for task in 0..3000 {
            let p = sample_quadrant_loop(&spec, &key(), task).unwrap().path;
            a.push(p.point(16).1);
            b.push(p.point(48).0);
        }
        assert!(two_sample_ks(&a, &b).unwrap().p_value > 0.01);
    }

    #[test]
    fn cone_excursion_terminal_point() {
        let spec = QuadrantBridgeSpec::relaxed_loop(0.0, 0.2, 64);
        for task in 0..10 {
            let p = cone_excursion_as_loop(0.4, &spec, &key(), task).unwrap().path;
            let (x, y) = p.point(64);
            assert!((x == 0.4 && y == 0.0) || (x == 0.0 && y == 0.4));
        }
    }

    #[test]
    fn large_epsilon_is_far_from_the_loop() {
        let spec = QuadrantBridgeSpec::relaxed_loop(0.5, 0.2, 64);
        let mid = |eps: f64| -> Vec<f64> {
            (0..2000)
                .map(|t| {
                    let (x, y) = cone_excursion_as_loop(eps, &spec, &key(), t).unwrap().path.point(32);
                    x + y
                })
                .collect()
        };
        let lp = mid(0.0);
        let far = ks_distance(&mid(2.0), &lp).unwrap();
        let near = ks_distance(&mid(0.05), &lp).unwrap();
        assert!(far > 3.0 * near, "far {far} near {near}");
    }

    #[test]
    fn ek_is_small_and_decreasing() {
        let grid = EkGrid::default();
        let est = estimate_ek_probability(0.0, &[1, 4], 4000, &grid, &key()).unwrap();
        assert!(est[0].p_hat > est[1].p_hat);
        assert!(est[0].p_hat < 0.5);
    }
}
