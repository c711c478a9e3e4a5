//! Spectrally one-sided α-stable processes, α ∈ (1, 2).
//!
//! Normalization: the spectrally positive process has E[e^{−λX_t}] = e^{tλ^α},
//! Lévy measure c_α u^{−1−α} du with c_α = α(α−1)/Γ(2−α).

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::path::{PathDim, SampledPath};
use crate::rng::{ModuleId, StreamKey};
use crate::stats::{two_sample_ks, KsReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpSign {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableSpec {
    pub stable_index: f64,
    pub jump_sign: JumpSign,
    /// 1 − 1/α
    pub positivity_rho: f64,
}

impl StableSpec {
    pub fn new(stable_index: f64, jump_sign: JumpSign) -> Result<Self> {
        if !(stable_index > 1.0 && stable_index < 2.0) {
            return Err(Error::domain(format!("stable index must lie in (1,2), got {stable_index}")));
        }
        Ok(Self {
            stable_index,
            jump_sign,
            positivity_rho: 1.0 - 1.0 / stable_index,
        })
    }

    /// α = 3/2 with upward jumps.
    pub fn three_halves() -> Self {
        Self::new(1.5, JumpSign::Positive).expect("valid index")
    }

    /// Constant c_α of the Lévy density c_α u^{−1−α}.
    pub fn levy_constant(&self) -> f64 {
        levy_constant(self.stable_index)
    }

    fn sign(&self) -> f64 {
        match self.jump_sign {
            JumpSign::Positive => 1.0,
            JumpSign::Negative => -1.0,
        }
    }
}

/// c_α = α(α−1)/Γ(2−α).
pub fn levy_constant(alpha: f64) -> f64 {
    alpha * (alpha - 1.0) / gamma(2.0 - alpha)
}

/// Chambers–Mallows–Stuck generator for the totally skewed law at unit time.
#[derive(Debug, Clone, Copy)]
pub struct StableGenerator {
    alpha: f64,
    b: f64,
    s: f64,
    sign: f64,
}

impl StableGenerator {
    pub fn new(spec: &StableSpec) -> Self {
        let alpha = spec.stable_index;
        let t = (PI * alpha / 2.0).tan();
        let sigma = (PI * alpha / 2.0).cos().abs().powf(1.0 / alpha);
        Self {
            alpha,
            b: t.atan() / alpha,
            s: sigma * (1.0 + t * t).powf(1.0 / (2.0 * alpha)),
            sign: spec.sign(),
        }
    }

    /// One draw of X_1.
    #[inline]
    pub fn unit<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let v = PI * (rng.random::<f64>() - 0.5);
        let w: f64 = rng.sample(Exp1);
        let a = self.alpha;
        let ab = a * (v + self.b);
        let x = self.s * ab.sin() / v.cos().powf(1.0 / a) * ((v - ab).cos() / w).powf((1.0 - a) / a);
        self.sign * x
    }

    /// One increment over time `dt`.
    #[inline]
    pub fn increment<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> f64 {
        dt.powf(1.0 / self.alpha) * self.unit(rng)
    }
}

/// One increment of the one-sided stable process over time `dt`.
pub fn sample_stable_increment<R: Rng + ?Sized>(spec: &StableSpec, dt: f64, rng: &mut R) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::domain("dt must be positive"));
    }
    Ok(StableGenerator::new(spec).increment(dt, rng))
}

/// A recorded jump; `size` is always positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub time: f64,
    pub size: f64,
}

/// Default ratio between the jump-recording threshold and dt^{1/α}.
pub const DEFAULT_JUMP_FACTOR: f64 = 10.0;

/// A sampled stable path with the jumps it resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StablePath {
    pub path: SampledPath,
    pub jumps: Vec<Jump>,
    pub threshold: f64,
}

impl StablePath {
    /// I_t = min(x0, inf_{s ≤ t} X_s) on the grid.
    pub fn running_infimum(&self) -> Vec<f64> {
        running_infimum(self.path.values())
    }
}

pub fn running_infimum(values: &[f64]) -> Vec<f64> {
    let mut m = f64::INFINITY;
    values
        .iter()
        .map(|&v| {
            m = m.min(v);
            m
        })
        .collect()
}

/// Jumps read off a path: increments whose signed size exceeds `threshold`,
/// placed at the right end of their step.
pub fn increment_jumps(path: &SampledPath, sign: JumpSign, threshold: f64) -> Vec<Jump> {
    let s = if sign == JumpSign::Positive { 1.0 } else { -1.0 };
    let v = path.values();
    let t = path.times();
    (1..v.len())
        .filter_map(|i| {
            let d = s * (v[i] - v[i - 1]);
            (d > threshold).then_some(Jump { time: t[i], size: d })
        })
        .collect()
}

/// The reflected path X − I.
pub fn reflect_at_infimum(path: &SampledPath) -> SampledPath {
    let inf = running_infimum(path.values());
    let values = path.values().iter().zip(&inf).map(|(x, i)| x - i).collect();
    SampledPath::from_parts_unchecked(path.times().to_vec(), values, PathDim::Scalar)
}

/// Path from `x0` on a uniform grid. Increments above
/// `jump_factor · dt^{1/α}` are recorded as jumps at a uniform time inside
/// their step.
pub fn sample_stable_path<R: Rng + ?Sized>(
    spec: &StableSpec,
    horizon: f64,
    n_steps: usize,
    x0: f64,
    jump_factor: f64,
    rng: &mut R,
) -> Result<StablePath> {
    if !(horizon > 0.0) || n_steps == 0 || !x0.is_finite() {
        return Err(Error::domain("need horizon > 0, n_steps >= 1 and finite x0"));
    }
    let gen = StableGenerator::new(spec);
    let dt = horizon / n_steps as f64;
    let scale = dt.powf(1.0 / spec.stable_index);
    let threshold = jump_factor * scale;
    let sign = spec.sign();
    let mut values = Vec::with_capacity(n_steps + 1);
    let mut jumps = Vec::new();
    let mut x = x0;
    values.push(x);
    for k in 0..n_steps {
        let d = scale * gen.unit(rng);
        if sign * d > threshold {
            jumps.push(Jump {
                time: (k as f64 + rng.random::<f64>()) * dt,
                size: sign * d,
            });
        }
        x += d;
        values.push(x);
    }
    Ok(StablePath {
        path: SampledPath::uniform(0.0, horizon, values, PathDim::Scalar)?,
        jumps,
        threshold,
    })
}

/// Truncations of the (infinite) excursion measure of X − I.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StableTruncation {
    FixedDuration { duration: f64 },
    MinHeight { min_height: f64 },
    MinMaxJump { min_jump: f64 },
}

/// Tuning of the excursion samplers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcursionConfig {
    /// Jump-recording threshold in units of dt^{1/α}.
    pub jump_factor: f64,
    /// Bridge endpoint window in units of dt^{1/α} (fixed duration).
    pub bridge_window: f64,
    /// Lifetime cap in units of m^α for the height / jump truncations.
    pub max_duration: f64,
    pub max_attempts: u64,
}

impl Default for ExcursionConfig {
    fn default() -> Self {
        Self {
            jump_factor: DEFAULT_JUMP_FACTOR,
            bridge_window: 1.0,
            max_duration: 1e4,
            max_attempts: 1_000_000,
        }
    }
}

/// An excursion of X − I away from 0 with its jumps (times relative to its start).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableExcursion {
    pub duration: f64,
    pub path: SampledPath,
    pub jumps: Vec<Jump>,
    pub attempts: u64,
}

impl StableExcursion {
    pub fn height(&self) -> f64 {
        self.path.values().iter().cloned().fold(0.0, f64::max)
    }

    pub fn max_jump(&self) -> f64 {
        self.jumps.iter().map(|j| j.size).fold(0.0, f64::max)
    }

    /// The same excursion run for `factor` times as long (space scaled by factor^{1/α}).
    pub fn rescaled(&self, factor: f64, alpha: f64) -> StableExcursion {
        let sp = factor.powf(1.0 / alpha);
        let times = self.path.times().iter().map(|t| t * factor).collect();
        let values = self.path.values().iter().map(|v| v * sp).collect();
        StableExcursion {
            duration: self.duration * factor,
            path: SampledPath::from_parts_unchecked(times, values, PathDim::Scalar),
            jumps: self
                .jumps
                .iter()
                .map(|j| Jump {
                    time: j.time * factor,
                    size: j.size * sp,
                })
                .collect(),
            attempts: self.attempts,
        }
    }
}

/// Sample one excursion of X − I for the spectrally positive process.
///
/// `FixedDuration` takes a discrete bridge (increments conditioned on a final
/// value in [−η, 0], residual spread linearly), cyclically shifts it at its
/// minimum, and rescales to the requested duration. The other truncations scan
/// a path started at its infimum and return the first excursion meeting the
/// criterion, using `n_steps` steps per unit of m^α.
pub fn sample_stable_excursion<R: Rng + ?Sized>(
    spec: &StableSpec,
    truncation: StableTruncation,
    n_steps: usize,
    config: &ExcursionConfig,
    rng: &mut R,
) -> Result<StableExcursion> {
    if spec.jump_sign != JumpSign::Positive {
        return Err(Error::domain("excursions of X - I are sampled for upward jumps only"));
    }
    if n_steps < 4 {
        return Err(Error::domain("need at least four steps"));
    }
    match truncation {
        StableTruncation::FixedDuration { duration } => {
            if !(duration > 0.0) {
                return Err(Error::domain("duration must be positive"));
            }
            let e = normalized_excursion(spec, n_steps, config, rng)?;
            Ok(e.rescaled(duration, spec.stable_index))
        }
        StableTruncation::MinHeight { min_height } => {
            if !(min_height > 0.0) {
                return Err(Error::domain("min_height must be positive"));
            }
            scan_excursion(spec, n_steps, config, rng, |h, _| h >= 1.0).map(|e| {
                e.rescaled(min_height.powf(spec.stable_index), spec.stable_index)
            })
        }
        StableTruncation::MinMaxJump { min_jump } => {
            if !(min_jump > 0.0) {
                return Err(Error::domain("min_jump must be positive"));
            }
            scan_excursion(spec, n_steps, config, rng, |_, j| j >= 1.0).map(|e| {
                e.rescaled(min_jump.powf(spec.stable_index), spec.stable_index)
            })
        }
    }
}

/// Unit-duration excursion by the cyclic shift of a discrete bridge.
fn normalized_excursion<R: Rng + ?Sized>(spec: &StableSpec, n: usize, config: &ExcursionConfig, rng: &mut R) -> Result<StableExcursion> {
    let gen = StableGenerator::new(spec);
    let dt = 1.0 / n as f64;
    let scale = dt.powf(1.0 / spec.stable_index);
    let eta = config.bridge_window * scale;
    let threshold = config.jump_factor * scale;
    let mut inc = vec![0.0; n];
    for attempt in 1..=config.max_attempts {
        let mut s = 0.0;
        for d in inc.iter_mut() {
            *d = scale * gen.unit(rng);
            s += *d;
        }
        if !(s <= 0.0 && s >= -eta) {
            continue;
        }
        let corr = s / n as f64;
        let mut bridge = Vec::with_capacity(n + 1);
        let mut b = 0.0;
        bridge.push(0.0);
        for d in inc.iter_mut() {
            *d -= corr;
            b += *d;
            bridge.push(b);
        }
        bridge[n] = 0.0;
        let kmin = (0..n).min_by(|&i, &j| bridge[i].total_cmp(&bridge[j])).unwrap();
        let base = bridge[kmin];
        let mut values = Vec::with_capacity(n + 1);
        let mut jumps = Vec::new();
        for j in 0..=n {
            let idx = (kmin + j) % n;
            values.push(if j == 0 || j == n { 0.0 } else { bridge[idx] - base });
        }
        for j in 0..n {
            let d = inc[(kmin + j) % n];
            if d > threshold {
                jumps.push(Jump {
                    time: (j as f64 + rng.random::<f64>()) * dt,
                    size: d,
                });
            }
        }
        if values[1..n].iter().any(|&v| v <= 0.0) {
            continue;
        }
        let path = SampledPath::uniform(0.0, 1.0, values, PathDim::Scalar)?;
        return Ok(StableExcursion {
            duration: 1.0,
            path,
            jumps,
            attempts: attempt,
        });
    }
    Err(Error::retry(config.max_attempts, 0))
}

/// First excursion of X − I (with m = 1) whose (height, max jump) passes `accept`.
fn scan_excursion<R: Rng + ?Sized>(
    spec: &StableSpec,
    n_steps: usize,
    config: &ExcursionConfig,
    rng: &mut R,
    accept: impl Fn(f64, f64) -> bool,
) -> Result<StableExcursion> {
    let gen = StableGenerator::new(spec);
    let dt = 1.0 / n_steps as f64;
    let scale = dt.powf(1.0 / spec.stable_index);
    let threshold = config.jump_factor * scale;
    let cap = (config.max_duration * n_steps as f64).ceil() as usize;
    let mut attempts = 0u64;
    // offsets above the infimum since the last grid infimum
    let mut buf: Vec<f64> = Vec::new();
    let mut jump_buf: Vec<Jump> = Vec::new();
    let mut height: f64 = 0.0;
    let mut max_jump: f64 = 0.0;
    let mut steps_total = 0u64;
    let step_budget = config.max_attempts.saturating_mul(cap as u64 + n_steps as u64);
    loop {
        let d = scale * gen.unit(rng);
        steps_total += 1;
        if steps_total > step_budget {
            return Err(Error::retry(attempts, 0));
        }
        let last = buf.last().copied().unwrap_or(0.0);
        let y = last + d;
        if y > 0.0 {
            if d > threshold {
                jump_buf.push(Jump {
                    time: (buf.len() as f64 + rng.random::<f64>()) * dt,
                    size: d,
                });
                max_jump = max_jump.max(d);
            }
            height = height.max(y);
            buf.push(y);
            if buf.len() > cap {
                // too long to finish: drop it and restart from a fresh infimum
                attempts += 1;
                if attempts >= config.max_attempts {
                    return Err(Error::retry(attempts, 0));
                }
                buf.clear();
                jump_buf.clear();
                height = 0.0;
                max_jump = 0.0;
            }
            continue;
        }
        // new infimum: the current excursion (if any) ends inside this step
        if !buf.is_empty() {
            attempts += 1;
            if accept(height, max_jump) {
                let n = buf.len();
                let w = last / (last - y);
                let end = (n as f64 + w) * dt;
                let mut times: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
                let mut values = Vec::with_capacity(n + 2);
                values.push(0.0);
                values.extend_from_slice(&buf);
                times.push(end);
                values.push(0.0);
                let jumps = std::mem::take(&mut jump_buf);
                return Ok(StableExcursion {
                    duration: end,
                    path: SampledPath::new(times, values, PathDim::Scalar)?,
                    jumps,
                    attempts,
                });
            }
            if attempts >= config.max_attempts {
                return Err(Error::retry(attempts, 0));
            }
        }
        buf.clear();
        jump_buf.clear();
        height = 0.0;
        max_jump = 0.0;
    }
}

/// Settings for the time-reversal comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualityConfig {
    /// Grid resolution: dt = (x0 / resolution)^α.
    pub resolution: f64,
    /// Lifetime censoring cap in units of x0^α.
    pub lifetime_cap: f64,
    /// The conditioned side is followed until it reaches `escape_level · x0`.
    pub escape_level: f64,
    /// Bound on upward increments of the negative-jump process, in units of dt^{1/α}.
    pub upper_bound: f64,
    pub jump_factor: f64,
}

impl Default for DualityConfig {
    fn default() -> Self {
        Self {
            resolution: 80.0,
            lifetime_cap: 30.0,
            escape_level: 400.0,
            upper_bound: 5.0,
            jump_factor: DEFAULT_JUMP_FACTOR,
        }
    }
}

/// Functionals of one side of the duality.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DualitySide {
    /// Lifetimes censored at the cap.
    pub lifetimes: Vec<f64>,
    /// Jump sizes from uncensored trials.
    pub jump_sizes: Vec<f64>,
    /// Value at half the lifetime (uncensored trials).
    pub half_life_values: Vec<f64>,
    /// Path maximum (uncensored trials).
    pub maxima: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub x0: f64,
    pub n_trials: u64,
    pub lifetime_cap: f64,
    pub lifetime_ks: Option<KsReport>,
    pub jump_ks: Option<KsReport>,
    pub half_life_ks: Option<KsReport>,
    pub max_ks: Option<KsReport>,
    /// Both sides are zero-length paths (x0 = 0).
    pub degenerate: bool,
    #[serde(skip)]
    pub first_passage: DualitySide,
    #[serde(skip)]
    pub conditioned: DualitySide,
}

impl DualityReport {
    pub fn passes(&self, level: f64) -> bool {
        self.degenerate
            || [self.lifetime_ks, self.jump_ks]
                .iter()
                .all(|r| r.map(|r| r.p_value > level).unwrap_or(false))
    }
}

/// Upward-jump process from x0 until its first passage below 0.
fn first_passage_trial<R: Rng + ?Sized>(gen: &StableGenerator, x0: f64, dt: f64, cfg: &DualityConfig, cap: f64, rng: &mut R) -> (f64, Vec<f64>, f64, f64) {
    let scale = dt.powf(1.0 / gen.alpha);
    let threshold = cfg.jump_factor * scale;
    let max_steps = (cap / dt).ceil() as usize;
    let mut path = vec![x0];
    let mut jumps = Vec::new();
    let mut x = x0;
    for k in 0..max_steps {
        let d = scale * gen.unit(rng);
        let y = x + d;
        if y <= 0.0 {
            let tau = (k as f64 + x / (x - y)) * dt;
            if tau > cap {
                break;
            }
            path.push(0.0);
            let half = interpolate_uniform(&path, dt, tau, 0.5 * tau);
            let max = path.iter().cloned().fold(0.0, f64::max);
            return (tau, jumps, half, max);
        }
        if d > threshold {
            jumps.push(d);
        }
        x = y;
        path.push(x);
    }
    (f64::INFINITY, Vec::new(), f64::NAN, f64::NAN)
}

/// Value at time `t` of a path sampled at k·dt for all but the last point,
/// which sits at `end`.
fn interpolate_uniform(path: &[f64], dt: f64, end: f64, t: f64) -> f64 {
    let n = path.len();
    let k = ((t / dt).floor() as usize).min(n - 2);
    let t0 = k as f64 * dt;
    let t1 = if k + 1 == n - 1 { end } else { (k + 1) as f64 * dt };
    let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
    path[k] + w * (path[k + 1] - path[k])
}

/// Downward-jump process from 0 conditioned to stay positive, run to its last
/// passage at x0.
fn conditioned_trial<R: Rng + ?Sized>(gen: &StableGenerator, x0: f64, dt0: f64, cfg: &DualityConfig, cap: f64, rng: &mut R) -> (f64, Vec<f64>, f64, f64) {
    let alpha = gen.alpha;
    let h = |y: f64| y.powf(alpha - 1.0);
    let scale0 = dt0.powf(1.0 / alpha);
    let threshold = cfg.jump_factor * scale0;
    let escape = cfg.escape_level * x0;
    let mut y = 0.0f64;
    let mut t = 0.0f64;
    // fine-grid history up to the cap: (time, value), plus jumps with their times
    let mut hist: Vec<f64> = vec![0.0];
    let mut jumps: Vec<(f64, f64)> = Vec::new();
    let mut last_below: Option<(usize, f64)> = Some((0, 0.0));
    let mut censored = false;
    loop {
        let fine = t < cap;
        let dt = if fine { dt0 } else { dt0 * (y / (2.0 * x0)).max(1.0).powf(alpha) };
        let scale = dt.powf(1.0 / alpha);
        let top = y + cfg.upper_bound * scale;
        let d = loop {
            let d = scale * gen.unit(rng);
            let z = y + d;
            if z <= 0.0 || z > top {
                continue;
            }
            if y == 0.0 || rng.random::<f64>() * h(top) <= h(z) {
                break d;
            }
        };
        let z = y + d;
        t += dt;
        if fine {
            hist.push(z);
            if -d > threshold {
                jumps.push((t, -d));
            }
            if z <= x0 {
                last_below = Some((hist.len() - 1, z));
            }
        } else if z <= x0 {
            censored = true;
            break;
        }
        y = z;
        if y >= escape {
            break;
        }
        if !fine && t > cap * 1e4 {
            censored = true;
            break;
        }
    }
    let (k, v) = last_below.expect("start is below x0");
    if censored || k + 1 >= hist.len() {
        return (f64::INFINITY, Vec::new(), f64::NAN, f64::NAN);
    }
    let w = (x0 - v) / (hist[k + 1] - v);
    let lifetime = (k as f64 + w) * dt0;
    if lifetime > cap {
        return (f64::INFINITY, Vec::new(), f64::NAN, f64::NAN);
    }
    let mut path: Vec<f64> = hist[..=k].to_vec();
    path.push(x0);
    let half = interpolate_uniform(&path, dt0, lifetime, 0.5 * lifetime);
    let max = path.iter().cloned().fold(0.0, f64::max);
    let sizes = jumps.into_iter().filter(|&(s, _)| s <= lifetime).map(|(_, u)| u).collect();
    (lifetime, sizes, half, max)
}

/// Compare the time reversal of the upward-jump process from x0 (stopped at
/// its first hit of 0) with the downward-jump process conditioned to stay
/// positive (started at 0, stopped at its last passage at x0).
///
/// Lifetimes are censored at `lifetime_cap · x0^α` on both sides; jump sizes,
/// half-lifetime values and maxima are pooled over uncensored trials.
pub fn check_time_reversal_duality(spec: &StableSpec, x0: f64, n_trials: u64, cfg: &DualityConfig, key: &StreamKey) -> Result<DualityReport> {
    if spec.jump_sign != JumpSign::Positive {
        return Err(Error::domain("the duality check starts from the upward-jump process"));
    }
    if !(x0 >= 0.0) {
        return Err(Error::domain("x0 must be nonnegative"));
    }
    let alpha = spec.stable_index;
    let cap = cfg.lifetime_cap * x0.powf(alpha);
    if x0 == 0.0 {
        return Ok(DualityReport {
            x0,
            n_trials,
            lifetime_cap: 0.0,
            lifetime_ks: None,
            jump_ks: None,
            half_life_ks: None,
            max_ks: None,
            degenerate: true,
            first_passage: DualitySide {
                lifetimes: vec![0.0; n_trials as usize],
                ..Default::default()
            },
            conditioned: DualitySide {
                lifetimes: vec![0.0; n_trials as usize],
                ..Default::default()
            },
        });
    }
    let dt = (x0 / cfg.resolution).powf(alpha);
    let up = StableGenerator::new(spec);
    let down = StableGenerator::new(&StableSpec::new(alpha, JumpSign::Negative)?);
    let run = |side: u64| -> DualitySide {
        let trials: Vec<_> = (0..n_trials)
            .into_par_iter()
            .map(|i| {
                let mut rng = key.sub_rng(ModuleId::Stable, side, i);
                if side == 0 {
                    first_passage_trial(&up, x0, dt, cfg, cap, &mut rng)
                } else {
                    conditioned_trial(&down, x0, dt, cfg, cap, &mut rng)
                }
            })
            .collect();
        let mut out = DualitySide::default();
        for (life, jumps, half, max) in trials {
            if life.is_finite() {
                out.lifetimes.push(life);
                out.jump_sizes.extend(jumps);
                out.half_life_values.push(half);
                out.maxima.push(max);
            } else {
                out.lifetimes.push(cap);
            }
        }
        out
    };
    let left = run(0);
    let right = run(1);
    let ks = |a: &[f64], b: &[f64]| two_sample_ks(a, b).ok();
    Ok(DualityReport {
        x0,
        n_trials,
        lifetime_cap: cap,
        lifetime_ks: ks(&left.lifetimes, &right.lifetimes),
        jump_ks: ks(&left.jump_sizes, &right.jump_sizes),
        half_life_ks: ks(&left.half_life_values, &right.half_life_values),
        max_ks: ks(&left.maxima, &right.maxima),
        degenerate: false,
        first_passage: left,
        conditioned: right,
    })
}

/// Elapsed-time estimate from jump counts at one dyadic-exponential band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeEstimate {
    pub estimate: f64,
    pub band_count: u64,
    pub j: u32,
    /// Set when there were no jumps at all; the estimate is then 0 and carries no information.
    pub infinite_variance: bool,
}

/// Expected number of jumps with size in [e^{−j−1}, e^{−j}] per unit time.
pub fn band_intensity(c0: f64, j: u32) -> f64 {
    (2.0 / 3.0) * c0 * (1.5 * j as f64).exp() * (1.5f64.exp() - 1.0)
}

/// Estimate the elapsed time of a 3/2-stable path from its jump sizes alone:
/// N(e^{−j−1}, e^{−j}) divided by its intensity, at j = `j_max`.
pub fn recover_elapsed_time<I>(jump_sizes: I, j_max: u32, c0: f64) -> TimeEstimate
where
    I: IntoIterator<Item = f64>,
{
    let lo = (-(j_max as f64) - 1.0).exp();
    let hi = (-(j_max as f64)).exp();
    let mut any = false;
    let mut count = 0u64;
    for u in jump_sizes {
        any = true;
        if u >= lo && u <= hi {
            count += 1;
        }
    }
    TimeEstimate {
        estimate: count as f64 / band_intensity(c0, j_max),
        band_count: count,
        j: j_max,
        infinite_variance: !any,
    }
}

/// Poisson point process of jumps on [0, horizon] × [u_min, ∞) with intensity
/// c₀ u^{−1−α} du dt, produced lazily in no particular time order.
pub struct JumpPpp<R> {
    rng: R,
    remaining: u64,
    horizon: f64,
    u_min: f64,
    inv_alpha: f64,
}

impl<R: Rng> JumpPpp<R> {
    pub fn new(c0: f64, alpha: f64, horizon: f64, u_min: f64, mut rng: R) -> Result<Self> {
        if !(c0 > 0.0 && horizon > 0.0 && u_min > 0.0 && alpha > 0.0) {
            return Err(Error::domain("PPP parameters must be positive"));
        }
        let mean = c0 * horizon * u_min.powf(-alpha) / alpha;
        let remaining = Poisson::new(mean)
            .map_err(|e| Error::domain(format!("bad Poisson mean {mean}: {e}")))?
            .sample(&mut rng) as u64;
        Ok(Self {
            rng,
            remaining,
            horizon,
            u_min,
            inv_alpha: 1.0 / alpha,
        })
    }

    pub fn len(&self) -> u64 {
        self.remaining
    }

    pub fn is_empty(&self) -> bool {
        self.remaining == 0
    }
}

impl<R: Rng> Iterator for JumpPpp<R> {
    type Item = Jump;

    fn next(&mut self) -> Option<Jump> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let u: f64 = 1.0 - self.rng.random::<f64>();
        Some(Jump {
            time: self.horizon * self.rng.random::<f64>(),
            size: self.u_min * u.powf(-self.inv_alpha),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::stats::{fit_tail_exponent, one_sample_ks, quantile};

    /// Gil-Pelaez inversion of the characteristic function of X_1.
    fn stable_cdf(x: f64, alpha: f64) -> f64 {
        let sig_a = (PI * alpha / 2.0).cos().abs();
        let tan = (PI * alpha / 2.0).tan();
        let integrand = |t: f64| {
            if t == 0.0 {
                return 0.0;
            }
            let ta = t.powf(alpha);
            let modulus = (-sig_a * ta).exp();
            let phase = sig_a * ta * tan - t * x;
            modulus * phase.sin() / t
        };
        // composite Simpson on [0, 40] after t = s², which tames the 1/t endpoint
        let n = 8_000;
        let smax = 40f64.sqrt();
        let h = smax / n as f64;
        let f = |s: f64| if s == 0.0 { 0.0 } else { integrand(s * s) * 2.0 * s };
        let mut acc = f(0.0) + f(smax);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(i as f64 * h);
        }
        0.5 - (acc * h / 3.0) / PI
    }

    #[test]
    fn spec_invariants() {
        let s = StableSpec::three_halves();
        assert!((s.positivity_rho - 1.0 / 3.0).abs() < 1e-15);
        assert!(StableSpec::new(2.0, JumpSign::Positive).is_err());
        assert!(StableSpec::new(1.0, JumpSign::Positive).is_err());
        assert!((s.levy_constant() - 0.423_142_2).abs() < 1e-6);
    }

    #[test]
    fn increments_match_characteristic_function() {
        let spec = StableSpec::three_halves();
        let mut rng = seeded(1);
        let xs: Vec<f64> = (0..20_000).map(|_| sample_stable_increment(&spec, 1.0, &mut rng).unwrap()).collect();
        // tabulate the oracle, with the power-law survival beyond the table
        let (lo, hi, step) = (-8.0, 60.0, 0.02);
        let table: Vec<f64> = (0..=((hi - lo) / step) as usize).map(|i| stable_cdf(lo + step * i as f64, 1.5)).collect();
        let tail = levy_constant(1.5) / 1.5;
        let cdf = |x: f64| {
            if x <= lo {
                0.0
            } else if x >= hi {
                1.0 - tail * x.powf(-1.5)
            } else {
                let p = (x - lo) / step;
                let i = p.floor() as usize;
                table[i] + (p - i as f64) * (table[i + 1] - table[i])
            }
        };
        assert!((cdf(hi - 1e-9) - (1.0 - tail * hi.powf(-1.5))).abs() < 2e-3);
        let r = one_sample_ks(&xs, cdf).unwrap();
        assert!(r.p_value > 0.01, "{r:?}");
    }

    #[test]
    fn laplace_exponent_normalization() {
        // E[e^{-λX_1}] = e^{λ^α}; λ small keeps the estimator's variance finite
        let spec = StableSpec::three_halves();
        let mut rng = seeded(2);
        let lambda = 0.3;
        let n = 400_000;
        let m: f64 = (0..n).map(|_| (-lambda * sample_stable_increment(&spec, 1.0, &mut rng).unwrap()).exp()).sum::<f64>() / n as f64;
        let expect = lambda.powf(1.5).exp();
        assert!((m / expect - 1.0).abs() < 0.01, "{m} vs {expect}");
    }

    #[test]
    fn scaling_of_increments() {
        let spec = StableSpec::three_halves();
        let mut rng = seeded(3);
        let a: Vec<f64> = (0..100_000).map(|_| sample_stable_increment(&spec, 4.0, &mut rng).unwrap()).collect();
        let b: Vec<f64> = (0..100_000)
            .map(|_| 4f64.powf(2.0 / 3.0) * sample_stable_increment(&spec, 1.0, &mut rng).unwrap())
            .collect();
        assert!(two_sample_ks(&a, &b).unwrap().p_value > 0.01);
    }

    #[test]
    fn right_tail_exponent() {
        let spec = StableSpec::three_halves();
        let mut rng = seeded(4);
        let xs: Vec<f64> = (0..2_000_000).map(|_| sample_stable_increment(&spec, 1.0, &mut rng).unwrap()).collect();
        // survival slope −3/2 <=> density slope −5/2
        let fit = fit_tail_exponent(&xs, (10.0, 1000.0), 16, 1).unwrap();
        assert!(fit.within(-2.5, 0.05), "{fit:?}");
    }

    #[test]
    fn x0_shifts_path() {
        let spec = StableSpec::three_halves();
        let a = sample_stable_path(&spec, 1.0, 100, 0.0, 10.0, &mut seeded(5)).unwrap();
        let b = sample_stable_path(&spec, 1.0, 100, 2.5, 10.0, &mut seeded(5)).unwrap();
        for (x, y) in a.path.values().iter().zip(b.path.values()) {
            assert!((y - x - 2.5).abs() < 1e-12);
        }
        assert_eq!(a.jumps, b.jumps);
    }

    #[test]
    fn running_infimum_properties() {
        let spec = StableSpec::three_halves();
        let p = sample_stable_path(&spec, 1.0, 1000, 0.7, 10.0, &mut seeded(6)).unwrap();
        let inf = p.running_infimum();
        assert_eq!(inf[0], 0.7);
        assert!(inf.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn reflected_path_has_same_jumps() {
        let spec = StableSpec::three_halves();
        let p = sample_stable_path(&spec, 5.0, 5000, 0.0, 10.0, &mut seeded(7)).unwrap();
        let r = reflect_at_infimum(&p.path);
        let a = increment_jumps(&p.path, JumpSign::Positive, p.threshold);
        let b = increment_jumps(&r, JumpSign::Positive, p.threshold);
        assert!(!a.is_empty());
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.time, y.time);
            assert!((x.size - y.size).abs() < 1e-9);
        }
    }

    #[test]
    fn first_passage_happens() {
        let spec = StableSpec::three_halves();
        let mut rng = seeded(8);
        let hits = (0..200)
            .filter(|_| {
                let p = sample_stable_path(&spec, 1000.0, 20_000, 1.0, 10.0, &mut rng).unwrap();
                p.path.values().iter().any(|&v| v <= 0.0)
            })
            .count();
        // P[τ > 1000] for τ = S_{2/3} is about 0.05
        assert!(hits > 170, "{hits}");
    }

    #[test]
    fn normalized_excursion_is_positive_with_zero_endpoints() {
        let spec = StableSpec::three_halves();
        let mut rng = seeded(9);
        for _ in 0..20 {
            let e = sample_stable_excursion(&spec, StableTruncation::FixedDuration { duration: 2.0 }, 256, &ExcursionConfig::default(), &mut rng).unwrap();
            let v = e.path.values();
            assert_eq!(v[0], 0.0);
            assert_eq!(*v.last().unwrap(), 0.0);
            assert!(v[1..v.len() - 1].iter().all(|&x| x > 0.0));
            assert_eq!(e.duration, 2.0);
            assert!(e.jumps.iter().all(|j| j.size > 0.0 && j.time > 0.0 && j.time < 2.0));
            assert!(e.jumps.windows(2).all(|w| w[0].time < w[1].time));
        }
    }

    #[test]
    fn jump_quantiles_scale_with_duration() {
        let spec = StableSpec::three_halves();
        let cfg = ExcursionConfig::default();
        let mut rng = seeded(10);
        let mut big = |t: f64| -> Vec<f64> {
            (0..1500)
                .map(|_| {
                    sample_stable_excursion(&spec, StableTruncation::FixedDuration { duration: t }, 128, &cfg, &mut rng)
                        .unwrap()
                        .max_jump()
                })
                .collect()
        };
        let a = big(1.0);
        let b = big(8.0);
        let qa = quantile(&a, 0.5);
        let qb = quantile(&b, 0.5);
        // 8^{2/3} = 4; the median of 1500 draws has a few percent of spread
        assert!((qb / qa / 4.0 - 1.0).abs() < 0.1, "{qa} {qb}");
    }

    #[test]
    fn scanned_excursions_meet_truncation() {
        let spec = StableSpec::three_halves();
        let cfg = ExcursionConfig::default();
        let mut rng = seeded(11);
        for _ in 0..50 {
            let e = sample_stable_excursion(&spec, StableTruncation::MinHeight { min_height: 0.5 }, 32, &cfg, &mut rng).unwrap();
            assert!(e.height() >= 0.5);
            let v = e.path.values();
            assert_eq!(v[0], 0.0);
            assert_eq!(*v.last().unwrap(), 0.0);
            assert!(v[1..v.len() - 1].iter().all(|&x| x > 0.0));
            let f = sample_stable_excursion(&spec, StableTruncation::MinMaxJump { min_jump: 0.5 }, 32, &cfg, &mut rng).unwrap();
            assert!(f.max_jump() >= 0.5);
        }
    }

    #[test]
    fn ppp_time_recovery() {
        let c0 = levy_constant(1.5);
        let jumps = JumpPpp::new(c0, 1.5, 1.0, (-9.0f64).exp(), seeded(12)).unwrap();
        let est = recover_elapsed_time(jumps.map(|j| j.size), 8, c0);
        assert!((est.estimate - 1.0).abs() < 0.05, "{est:?}");
        assert!(!est.infinite_variance);
        let empty = recover_elapsed_time(std::iter::empty(), 8, c0);
        assert_eq!(empty.estimate, 0.0);
        assert!(empty.infinite_variance);
    }

    #[test]
    fn degenerate_duality() {
        let r = check_time_reversal_duality(&StableSpec::three_halves(), 0.0, 10, &DualityConfig::default(), &StreamKey::new(1)).unwrap();
        assert!(r.degenerate);
        assert!(r.first_passage.lifetimes.iter().all(|&t| t == 0.0));
    }
}
