//! Correlated planar Brownian motion, Bessel processes and Bessel excursions.
//!
//! Bessel transitions are exact: the squared process is advanced with the
//! noncentral chi-square law and square-rooted afterwards.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::GammaParams;
use crate::path::{PathDim, SampledPath};

#[inline]
pub(crate) fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Planar Brownian motion from the origin with increment covariance
/// dt·[[1, ρ], [ρ, 1]], ρ = `params.bm_correlation`.
pub fn sample_correlated_bm<R: Rng + ?Sized>(params: &GammaParams, horizon: f64, n_steps: usize, rng: &mut R) -> Result<SampledPath> {
    sample_correlated_bm_rho(params.bm_correlation, horizon, n_steps, rng)
}

/// As [`sample_correlated_bm`] with an explicit correlation.
pub fn sample_correlated_bm_rho<R: Rng + ?Sized>(rho: f64, horizon: f64, n_steps: usize, rng: &mut R) -> Result<SampledPath> {
    if !(horizon > 0.0) || n_steps == 0 {
        return Err(Error::domain("need horizon > 0 and n_steps >= 1"));
    }
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::domain(format!("correlation {rho} outside [-1,1]")));
    }
    let sd = (horizon / n_steps as f64).sqrt();
    let perp = (1.0 - rho * rho).sqrt();
    let mut values = Vec::with_capacity(2 * (n_steps + 1));
    let (mut x, mut y) = (0.0, 0.0);
    values.extend([x, y]);
    for _ in 0..n_steps {
        let z1 = normal(rng);
        let z2 = normal(rng);
        x += sd * z1;
        y += sd * (rho * z1 + perp * z2);
        values.extend([x, y]);
    }
    SampledPath::uniform(0.0, horizon, values, PathDim::Planar)
}

/// Insert a Brownian-bridge midpoint between every pair of grid points of a
/// correlated planar BM, halving the step while keeping the original points.
pub fn refine_correlated_bm<R: Rng + ?Sized>(path: &SampledPath, rho: f64, rng: &mut R) -> Result<SampledPath> {
    if path.dim() != PathDim::Planar {
        return Err(Error::domain("refinement needs a planar path"));
    }
    let perp = (1.0 - rho * rho).sqrt();
    let n = path.len();
    let mut times = Vec::with_capacity(2 * n - 1);
    let mut values = Vec::with_capacity(4 * n - 2);
    for i in 0..n - 1 {
        let (t0, t1) = (path.times()[i], path.times()[i + 1]);
        let (x0, y0) = path.point(i);
        let (x1, y1) = path.point(i + 1);
        let sd = ((t1 - t0) / 4.0).sqrt();
        let z1 = normal(rng);
        let z2 = normal(rng);
        times.push(t0);
        values.extend([x0, y0]);
        times.push(0.5 * (t0 + t1));
        values.extend([
            0.5 * (x0 + x1) + sd * z1,
            0.5 * (y0 + y1) + sd * (rho * z1 + perp * z2),
        ]);
    }
    let (xl, yl) = path.point(n - 1);
    times.push(path.end_time());
    values.extend([xl, yl]);
    SampledPath::new(times, values, PathDim::Planar)
}

/// One exact step of a squared Bessel process of dimension `delta` over time `dt`.
pub fn besq_step<R: Rng + ?Sized>(x: f64, delta: f64, dt: f64, rng: &mut R) -> f64 {
    let lambda = x.max(0.0) / dt;
    let v = if delta >= 1.0 {
        let z = normal(rng) + lambda.sqrt();
        let rest = if delta > 1.0 {
            Gamma::new(0.5 * (delta - 1.0), 2.0).expect("positive shape").sample(rng)
        } else {
            0.0
        };
        z * z + rest
    } else {
        let n = if lambda > 0.0 {
            Poisson::new(0.5 * lambda).expect("positive mean").sample(rng)
        } else {
            0.0
        };
        let shape = 0.5 * delta + n;
        if shape <= 0.0 {
            0.0
        } else {
            Gamma::new(shape, 2.0).expect("positive shape").sample(rng)
        }
    };
    dt * v
}

/// Squared Bessel stepper with the chi-square part precomputed.
struct BesqStepper {
    delta: f64,
    chi: Option<Gamma<f64>>,
}

impl BesqStepper {
    fn new(delta: f64) -> Self {
        let chi = (delta > 1.0).then(|| Gamma::new(0.5 * (delta - 1.0), 2.0).expect("positive shape"));
        Self { delta, chi }
    }

    #[inline]
    fn step<R: Rng + ?Sized>(&self, x: f64, dt: f64, rng: &mut R) -> f64 {
        if self.delta >= 1.0 {
            let z = normal(rng) + (x.max(0.0) / dt).sqrt();
            let rest = self.chi.as_ref().map_or(0.0, |g| g.sample(rng));
            dt * (z * z + rest)
        } else {
            besq_step(x, self.delta, dt, rng)
        }
    }
}

/// Behaviour at 0 for dimensions below 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BesselBoundary {
    /// Instantaneous reflection; only defined for dimension > 0.
    #[default]
    Reflecting,
    /// Stop at the first hit of 0.
    Absorbing,
}

/// Bessel process of dimension `dimension` from `x0` on a uniform grid.
///
/// Dimensions ≥ 2 and reflecting dimensions in (0, 2) use exact transitions.
/// Absorbed paths end at their hitting time of 0, which is appended as the
/// last grid point. For dimension 0 absorption is exact; for other absorbing
/// dimensions below 2 the path comes from the exponential representation with
/// a fine internal time change.
pub fn sample_bessel<R: Rng + ?Sized>(
    dimension: f64,
    x0: f64,
    horizon: f64,
    n_steps: usize,
    boundary: BesselBoundary,
    rng: &mut R,
) -> Result<SampledPath> {
    if !(horizon > 0.0) || n_steps == 0 {
        return Err(Error::domain("need horizon > 0 and n_steps >= 1"));
    }
    if !(x0 >= 0.0) || !x0.is_finite() || !dimension.is_finite() {
        return Err(Error::domain("need a finite x0 >= 0 and finite dimension"));
    }
    if dimension <= 0.0 && boundary == BesselBoundary::Reflecting {
        return Err(Error::domain(format!(
            "dimension {dimension} <= 0 is absorbed at 0 and cannot be continued past absorption"
        )));
    }
    if dimension <= 0.0 && x0 == 0.0 {
        return Err(Error::domain("a process of dimension <= 0 started at 0 is absorbed immediately"));
    }
    let dt = horizon / n_steps as f64;
    let exact = dimension >= 2.0 || boundary == BesselBoundary::Reflecting || dimension == 0.0;
    if !exact {
        let a = 0.5 * dimension - 1.0;
        return exp_route(a, x0, horizon, n_steps, rng).map(|r| r.path);
    }
    let stepper = BesqStepper::new(dimension);
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut values = Vec::with_capacity(n_steps + 1);
    let mut sq = x0 * x0;
    times.push(0.0);
    values.push(x0);
    for k in 1..=n_steps {
        sq = stepper.step(sq, dt, rng);
        times.push(dt * k as f64);
        values.push(sq.sqrt());
        if dimension == 0.0 && sq == 0.0 {
            break;
        }
    }
    if times.len() < 2 {
        unreachable!("at least one step is always taken");
    }
    Ok(SampledPath::from_parts_unchecked(times, values, PathDim::Scalar))
}

/// A Bessel path obtained by exponentiating a drifted Brownian motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpBesselPath {
    pub path: SampledPath,
    /// δ = 2 + 2a
    pub dimension: f64,
    /// Hitting time of 0, when it happens before the horizon.
    pub hit_time: Option<f64>,
}

/// e^{B_s + a s} reparameterized by its quadratic variation, started at 1.
pub fn bessel_via_exponentiation<R: Rng + ?Sized>(drift_a: f64, horizon_qv: f64, n_steps: usize, rng: &mut R) -> Result<ExpBesselPath> {
    if !(horizon_qv > 0.0) || n_steps == 0 || !drift_a.is_finite() {
        return Err(Error::domain("need horizon > 0, n_steps >= 1 and finite drift"));
    }
    exp_route(drift_a, 1.0, horizon_qv, n_steps, rng)
}

const EXP_SUBSTEPS: f64 = 16.0;
const EXP_MAX_LOG_STEP: f64 = 0.01;
const EXP_FLOOR: f64 = 1e-9;

fn exp_route<R: Rng + ?Sized>(a: f64, x0: f64, horizon: f64, n_steps: usize, rng: &mut R) -> Result<ExpBesselPath> {
    let dt_out = horizon / n_steps as f64;
    let h = dt_out / EXP_SUBSTEPS;
    let floor = EXP_FLOOR * x0;
    let mut times = Vec::with_capacity(n_steps + 2);
    let mut values = Vec::with_capacity(n_steps + 2);
    times.push(0.0);
    values.push(x0);
    // log of the current value and the elapsed Bessel time
    let mut lx = x0.ln();
    let mut t = 0.0;
    let mut next_k = 1usize;
    let mut hit_time = None;
    let mut guard = 0u64;
    while next_k <= n_steps {
        let z_now = lx.exp();
        let ds = (h / (z_now * z_now)).min(EXP_MAX_LOG_STEP);
        let lx_new = lx + a * ds + ds.sqrt() * normal(rng);
        let z_new = lx_new.exp();
        let t_new = t + 0.5 * ds * (z_now * z_now + z_new * z_new);
        while next_k <= n_steps && dt_out * next_k as f64 <= t_new {
            let tk = dt_out * next_k as f64;
            let w = (tk - t) / (t_new - t);
            times.push(tk);
            values.push(z_now + w * (z_new - z_now));
            next_k += 1;
        }
        lx = lx_new;
        t = t_new;
        if z_new < floor && a < 0.0 {
            // the remaining time to 0 is of order floor², negligible on the output grid
            let th = t.max(*times.last().unwrap() + dt_out * 1e-9);
            if th > *times.last().unwrap() {
                times.push(th);
                values.push(0.0);
            } else {
                *values.last_mut().unwrap() = 0.0;
            }
            hit_time = Some(th);
            break;
        }
        guard += 1;
        if guard > 50_000_000 {
            return Err(Error::retry(guard, 0));
        }
    }
    let path = SampledPath::new(times, values, PathDim::Scalar)?;
    Ok(ExpBesselPath {
        path,
        dimension: 2.0 + 2.0 * a,
        hit_time,
    })
}

/// How the infinite Bessel excursion measure is truncated to a probability law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ExcursionTruncation {
    /// Condition on the lifetime.
    FixedDuration { duration: f64 },
    /// Restrict to excursions whose maximum is at least `min_max`.
    MinMax { min_max: f64 },
}

/// An excursion away from 0 with its lifetime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BesselExcursion {
    pub duration: f64,
    pub path: SampledPath,
    /// δ of the excursion measure; the path itself is a BES^{4−δ} bridge.
    pub dimension: f64,
    pub max: f64,
}

/// Squared Bessel bridge of dimension `d` from 0 to 0 over [0, 1] on `n` steps,
/// via Y_s = (1 − s)² X_{s/(1−s)} with X a squared Bessel process from 0.
fn besq_bridge_unit<R: Rng + ?Sized>(d: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let stepper = BesqStepper::new(d);
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    let mut x = 0.0;
    let mut u_prev = 0.0;
    for k in 1..n {
        let s = k as f64 / n as f64;
        let u = s / (1.0 - s);
        x = stepper.step(x, u - u_prev, rng);
        u_prev = u;
        out.push((1.0 - s) * (1.0 - s) * x);
    }
    out.push(0.0);
    out
}

/// BES^d from 0 until the first grid crossing of 1, with the crossing point
/// linearly interpolated. Returns (times, values) ending exactly at value 1.
fn bessel_to_level_one<R: Rng + ?Sized>(d: f64, dt: f64, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
    const MAX_STEPS: usize = 50_000_000;
    let stepper = BesqStepper::new(d);
    let mut times = vec![0.0];
    let mut values = vec![0.0];
    let mut sq = 0.0;
    for k in 1..MAX_STEPS {
        sq = stepper.step(sq, dt, rng);
        let v = sq.sqrt();
        if v >= 1.0 {
            let prev = *values.last().unwrap();
            let w = (1.0 - prev) / (v - prev);
            let t_prev = *times.last().unwrap();
            times.push(t_prev + w * dt);
            values.push(1.0);
            return Ok((times, values));
        }
        times.push(dt * k as f64);
        values.push(v);
    }
    Err(Error::retry(MAX_STEPS as u64, 0))
}

/// Sample an excursion of the Bessel excursion measure of dimension δ < 2.
///
/// `FixedDuration` gives a BES^{4−δ} bridge 0 → 0 with exact transitions.
/// `MinMax` draws the maximum from its Pareto law on [m, ∞) and glues two
/// independent BES^{4−δ} first-passage paths at the maximum (the second one
/// time-reversed); `n_steps` is then the number of steps per unit of time
/// after scaling the maximum to 1.
pub fn sample_bessel_excursion<R: Rng + ?Sized>(
    dimension_delta: f64,
    truncation: ExcursionTruncation,
    n_steps: usize,
    rng: &mut R,
) -> Result<BesselExcursion> {
    if !(dimension_delta < 2.0) || !dimension_delta.is_finite() {
        return Err(Error::domain(format!(
            "excursion measure needs dimension < 2, got {dimension_delta}"
        )));
    }
    if n_steps < 2 {
        return Err(Error::domain("need at least two steps"));
    }
    let d = 4.0 - dimension_delta;
    match truncation {
        ExcursionTruncation::FixedDuration { duration } => {
            if !(duration > 0.0) {
                return Err(Error::domain("duration must be positive"));
            }
            let sq = besq_bridge_unit(d, n_steps, rng);
            let values: Vec<f64> = sq.iter().map(|y| (duration * y).sqrt()).collect();
            let max = values.iter().cloned().fold(0.0, f64::max);
            let path = SampledPath::uniform(0.0, duration, values, PathDim::Scalar)?;
            Ok(BesselExcursion {
                duration,
                path,
                dimension: dimension_delta,
                max,
            })
        }
        ExcursionTruncation::MinMax { min_max } => {
            if !(min_max > 0.0) {
                return Err(Error::domain("min_max must be positive"));
            }
            let u: f64 = 1.0 - rng.random::<f64>();
            let m = min_max * u.powf(-1.0 / (2.0 - dimension_delta));
            let dt = 1.0 / n_steps as f64;
            let (t1, v1) = bessel_to_level_one(d, dt, rng)?;
            let (t2, v2) = bessel_to_level_one(d, dt, rng)?;
            let up = *t1.last().unwrap();
            let down = *t2.last().unwrap();
            let total = up + down;
            let mut times = Vec::with_capacity(t1.len() + t2.len());
            let mut values = Vec::with_capacity(t1.len() + t2.len());
            for (t, v) in t1.iter().zip(&v1) {
                times.push(m * m * t);
                values.push(m * v);
            }
            for (t, v) in t2.iter().zip(&v2).rev().skip(1) {
                let s = m * m * (up + (down - t));
                if s > times.last().copied().unwrap() {
                    times.push(s);
                    values.push(m * v);
                }
            }
            if *times.last().unwrap() < m * m * total {
                times.push(m * m * total);
                values.push(0.0);
            } else {
                *values.last_mut().unwrap() = 0.0;
            }
            let path = SampledPath::new(times, values, PathDim::Scalar)?;
            Ok(BesselExcursion {
                duration: m * m * total,
                path,
                dimension: dimension_delta,
                max: m,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Left,
    Right,
}

/// A π/2-cone excursion found on a sampled planar path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeExcursionRecord {
    pub start_index: usize,
    /// First grid index at which a coordinate is back at or below the base.
    pub end_index: usize,
    pub base: (f64, f64),
    /// `Left` when the X coordinate closes the excursion.
    pub orientation: Orientation,
    /// Displacement of the other coordinate at the (interpolated) closing time.
    pub terminal_displacement: f64,
    /// Grid tolerance: twice the largest coordinate increment scale √dt.
    pub tolerance: f64,
}

/// For each i, the first j > i with v[j] <= v[i] (or `usize::MAX`).
fn next_at_or_below(v: &[f64]) -> Vec<usize> {
    let mut out = vec![usize::MAX; v.len()];
    let mut stack: Vec<usize> = Vec::new();
    for (j, &x) in v.iter().enumerate() {
        while let Some(&i) = stack.last() {
            if x <= v[i] {
                out[i] = j;
                stack.pop();
            } else {
                break;
            }
        }
        stack.push(j);
    }
    out
}

/// All grid π/2-cone excursions whose terminal displacement lies in
/// `[min_terminal, max_terminal]`.
///
/// A start index s opens an excursion when the path stays coordinate-wise at
/// or above Z_s on at least one following grid point; it closes at the first
/// index where either coordinate is back at or below its base value. Nested
/// excursions are all reported.
pub fn find_cone_excursions(path: &SampledPath, min_terminal: f64, max_terminal: f64) -> Result<Vec<ConeExcursionRecord>> {
    if path.dim() != PathDim::Planar {
        return Err(Error::domain("cone excursions need a planar path"));
    }
    let xs = path.xs();
    let ys = path.ys();
    let nx = next_at_or_below(&xs);
    let ny = next_at_or_below(&ys);
    let max_dt = path.times().windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let tolerance = 2.0 * max_dt.sqrt();
    let mut out = Vec::new();
    for s in 0..xs.len() {
        let e = nx[s].min(ny[s]);
        if e == usize::MAX || e < s + 2 {
            continue;
        }
        let (bx, by) = (xs[s], ys[s]);
        // fraction of the last step at which each coordinate reaches its base
        let cross = |v: &[f64], b: f64| {
            if v[e] <= b {
                (v[e - 1] - b) / (v[e - 1] - v[e])
            } else {
                f64::INFINITY
            }
        };
        let wx = cross(&xs, bx);
        let wy = cross(&ys, by);
        let (orientation, terminal) = if wx <= wy {
            (Orientation::Left, ys[e - 1] + wx * (ys[e] - ys[e - 1]) - by)
        } else {
            (Orientation::Right, xs[e - 1] + wy * (xs[e] - xs[e - 1]) - bx)
        };
        let terminal = terminal.max(0.0);
        if terminal >= min_terminal && terminal <= max_terminal {
            out.push(ConeExcursionRecord {
                start_index: s,
                end_index: e,
                base: (bx, by),
                orientation,
                terminal_displacement: terminal,
                tolerance,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::make_params;
    use crate::rng::seeded;
    use crate::stats::{one_sample_ks, two_sample_ks};
    use statrs::function::erf::erf;

    fn maxwell_cdf(x: f64, scale: f64) -> f64 {
        let y = x / scale;
        erf(y / 2f64.sqrt()) - (2.0 / std::f64::consts::PI).sqrt() * y * (-y * y / 2.0).exp()
    }

    #[test]
    fn correlated_increments_at_pure_gamma() {
        let p = GammaParams::pure();
        let mut rng = seeded(1);
        let path = sample_correlated_bm(&p, 1.0, 1_000_000, &mut rng).unwrap();
        let (xs, ys) = (path.xs(), path.ys());
        let dx: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let dy: Vec<f64> = ys.windows(2).map(|w| w[1] - w[0]).collect();
        let r = crate::stats::correlation(&dx, &dy);
        // sd of a sample correlation ≈ (1 − ρ²)/√n
        assert!((r - 0.5).abs() < 3.0 * 0.75 / 1000.0, "corr {r}");
        let qv: f64 = dx.iter().map(|d| d * d).sum();
        assert!((qv - 1.0).abs() < 0.01, "qv {qv}");
    }

    #[test]
    fn independent_coordinates_at_sqrt2() {
        let p = make_params(2f64.sqrt()).unwrap();
        let mut rng = seeded(2);
        let path = sample_correlated_bm(&p, 1.0, 1_000_000, &mut rng).unwrap();
        let (xs, ys) = (path.xs(), path.ys());
        let dx: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let dy: Vec<f64> = ys.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(crate::stats::correlation(&dx, &dy).abs() < 3e-3);
    }

    #[test]
    fn bessel3_from_zero_is_maxwell() {
        let mut rng = seeded(3);
        let v: Vec<f64> = (0..100_000)
            .map(|_| sample_bessel(3.0, 0.0, 1.0, 4, BesselBoundary::Reflecting, &mut rng).unwrap().value(4))
            .collect();
        let r = one_sample_ks(&v, |x| maxwell_cdf(x, 1.0)).unwrap();
        assert!(r.p_value > 0.01, "{r:?}");
        // two-sample form against the modulus of three Gaussians
        let w: Vec<f64> = (0..100_000)
            .map(|_| (0..3).map(|_| normal(&mut rng).powi(2)).sum::<f64>().sqrt())
            .collect();
        assert!(two_sample_ks(&v, &w).unwrap().p_value > 0.01);
    }

    #[test]
    fn reflecting_bessel1_is_folded_normal() {
        let mut rng = seeded(4);
        let v: Vec<f64> = (0..50_000)
            .map(|_| sample_bessel(1.0, 0.0, 1.0, 8, BesselBoundary::Reflecting, &mut rng).unwrap().value(8))
            .collect();
        let r = one_sample_ks(&v, |x| erf(x / 2f64.sqrt())).unwrap();
        assert!(r.p_value > 0.01, "{r:?}");
    }

    #[test]
    fn grid_refinement_keeps_marginals() {
        let mut rng = seeded(5);
        let coarse: Vec<f64> = (0..20_000)
            .map(|_| sample_bessel(1.5, 0.3, 1.0, 4, BesselBoundary::Reflecting, &mut rng).unwrap().value(4))
            .collect();
        let fine: Vec<f64> = (0..20_000)
            .map(|_| sample_bessel(1.5, 0.3, 1.0, 8, BesselBoundary::Reflecting, &mut rng).unwrap().value(8))
            .collect();
        assert!(two_sample_ks(&coarse, &fine).unwrap().p_value > 0.01);
    }

    #[test]
    fn dimension_two_does_not_hit_zero() {
        let mut rng = seeded(6);
        let p = sample_bessel(2.0, 1.0, 1e6, 100_000, BesselBoundary::Absorbing, &mut rng).unwrap();
        assert_eq!(p.len(), 100_001);
        assert!(p.values().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn nonpositive_dimension_is_absorbed() {
        let mut rng = seeded(7);
        assert!(matches!(
            sample_bessel(-1.0, 1.0, 1.0, 10, BesselBoundary::Reflecting, &mut rng),
            Err(Error::Domain(_))
        ));
        for delta in [0.0, -1.0] {
            let p = sample_bessel(delta, 0.5, 100.0, 1000, BesselBoundary::Absorbing, &mut rng).unwrap();
            assert_eq!(*p.values().last().unwrap(), 0.0);
            assert!(p.end_time() < 100.0);
            assert!(p.values()[..p.len() - 1].iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn exponentiation_dimension_metadata() {
        let mut rng = seeded(8);
        for (a, d) in [(0.5, 3.0), (0.0, 2.0), (-0.5, 1.0)] {
            let r = bessel_via_exponentiation(a, 1.0, 10, &mut rng).unwrap();
            assert_eq!(r.dimension, d);
        }
    }

    #[test]
    fn exponentiation_matches_exact_bessel3() {
        let mut rng = seeded(9);
        let a: Vec<f64> = (0..20_000)
            .map(|_| bessel_via_exponentiation(0.5, 1.0, 4, &mut rng).unwrap().path.value(4))
            .collect();
        let b: Vec<f64> = (0..20_000)
            .map(|_| sample_bessel(3.0, 1.0, 1.0, 4, BesselBoundary::Reflecting, &mut rng).unwrap().value(4))
            .collect();
        let r = two_sample_ks(&a, &b).unwrap();
        assert!(r.p_value > 0.01, "{r:?}");
    }

    #[test]
    fn excursion_bridge_is_modulus_of_3d_bridge() {
        let mut rng = seeded(10);
        let mut mids = Vec::new();
        for _ in 0..20_000 {
            let e = sample_bessel_excursion(1.0, ExcursionTruncation::FixedDuration { duration: 1.0 }, 8, &mut rng).unwrap();
            assert_eq!(e.path.value(0), 0.0);
            assert_eq!(e.path.value(8), 0.0);
            assert!((1..8).all(|i| e.path.value(i) > 0.0));
            mids.push(e.path.value(4));
        }
        // each coordinate of a unit bridge at 1/2 has variance 1/4
        let r = one_sample_ks(&mids, |x| maxwell_cdf(x, 0.5)).unwrap();
        assert!(r.p_value > 0.01, "{r:?}");
    }

    #[test]
    fn min_max_durations_follow_power_law() {
        let mut rng = seeded(11);
        let delta = 1.0;
        let durations: Vec<f64> = (0..40_000)
            .map(|_| {
                sample_bessel_excursion(delta, ExcursionTruncation::MinMax { min_max: 1.0 }, 200, &mut rng)
                    .unwrap()
                    .duration
            })
            .collect();
        let fit = crate::stats::fit_tail_exponent(&durations, (10.0, 1000.0), 12, 1).unwrap();
        assert!(fit.within(delta / 2.0 - 2.0, 0.05), "{fit:?}");
    }

    #[test]
    fn min_max_excursion_shape() {
        let mut rng = seeded(12);
        let e = sample_bessel_excursion(1.0, ExcursionTruncation::MinMax { min_max: 2.0 }, 100, &mut rng).unwrap();
        let v = e.path.values();
        assert_eq!(v[0], 0.0);
        assert_eq!(*v.last().unwrap(), 0.0);
        assert!(v[1..v.len() - 1].iter().all(|&x| x > 0.0));
        assert!(e.max >= 2.0);
        assert!((v.iter().cloned().fold(0.0, f64::max) - e.max).abs() < 1e-12);
        // both halves keep every grid step (spacing m²/n, up to the interpolated crossing)
        let step = e.max * e.max / 100.0;
        assert!(e.path.times().windows(2).all(|w| w[1] - w[0] <= step * (1.0 + 1e-9)));
    }

    #[test]
    fn excursion_rejects_transient_dimension() {
        let mut rng = seeded(13);
        assert!(matches!(
            sample_bessel_excursion(2.0, ExcursionTruncation::FixedDuration { duration: 1.0 }, 10, &mut rng),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn monotone_path_has_no_small_excursions() {
        let values: Vec<f64> = (0..50).flat_map(|i| [i as f64, 2.0 * i as f64]).collect();
        let p = SampledPath::uniform(0.0, 1.0, values, PathDim::Planar).unwrap();
        assert!(find_cone_excursions(&p, 0.0, 10.0).unwrap().is_empty());
    }

    #[test]
    fn hand_built_excursion() {
        let p = SampledPath::uniform(0.0, 2.0, vec![0.0, 0.0, 1.0, 2.0, 1.0, 0.0], PathDim::Planar).unwrap();
        let ex = find_cone_excursions(&p, 0.0, f64::INFINITY).unwrap();
        assert_eq!(ex.len(), 1);
        let e = ex[0];
        assert_eq!((e.start_index, e.end_index), (0, 2));
        // Y closes the excursion; the X displacement at closing is the terminal value
        assert_eq!(e.orientation, Orientation::Right);
        assert_eq!(e.terminal_displacement, 1.0);
    }

    #[test]
    fn cone_records_close_within_tolerance() {
        let mut rng = seeded(14);
        let p = sample_correlated_bm(&GammaParams::pure(), 1.0, 20_000, &mut rng).unwrap();
        let ex = find_cone_excursions(&p, 0.0, f64::INFINITY).unwrap();
        assert!(!ex.is_empty());
        for e in ex {
            let (xe, ye) = p.point(e.end_index);
            let (dx, dy) = (xe - e.base.0, ye - e.base.1);
            assert!(dx.min(dy) <= e.tolerance);
            for i in e.start_index..e.end_index {
                let (x, y) = p.point(i);
                assert!(x >= e.base.0 && y >= e.base.1);
            }
        }
    }
}
