//! Estimators and hypothesis tests used by the verification suites.
//!
//! Everything here is a deterministic function of its inputs; the bootstrap
//! takes an explicit seed.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

/// Outcome of a Kolmogorov–Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    /// 0 for one-sample tests.
    pub n2: usize,
}

/// P[K > λ] for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.2 {
        // Alternating series converges slowly here; the survival is 1 to double precision.
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn check_finite(xs: &[f64], what: &str) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("{what} contains NaN or infinite values")));
    }
    Ok(())
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Supremum distance between two empirical CDFs.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_finite(a, "first sample")?;
    check_finite(b, "second sample")?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("empty sample".into()));
    }
    let a = sorted(a);
    let b = sorted(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Two-sample KS test with the asymptotic Kolmogorov p-value (Stephens' small-sample correction).
pub fn two_sample_ks(a: &[f64], b: &[f64]) -> Result<KsReport> {
    if a.len() < 50 || b.len() < 50 {
        return Err(Error::InsufficientData(format!(
            "two-sample KS needs at least 50 points per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let d = ks_distance(a, b)?;
    let ne = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
    let sq = ne.sqrt();
    let p = kolmogorov_survival((sq + 0.12 + 0.11 / sq) * d);
    Ok(KsReport {
        statistic: d,
        p_value: p,
        n1: a.len(),
        n2: b.len(),
    })
}

/// One-sample KS test against a continuous reference CDF.
pub fn one_sample_ks(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsReport> {
    check_finite(samples, "sample")?;
    if samples.len() < 50 {
        return Err(Error::InsufficientData("one-sample KS needs at least 50 points".into()));
    }
    let xs = sorted(samples);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    let sq = n.sqrt();
    Ok(KsReport {
        statistic: d,
        p_value: kolmogorov_survival((sq + 0.12 + 0.11 / sq) * d),
        n1: xs.len(),
        n2: 0,
    })
}

/// Typical fluctuation of a two-sample KS distance under the null.
pub fn ks_noise_scale(n1: usize, n2: usize) -> f64 {
    0.26 * ((n1 + n2) as f64 / (n1 as f64 * n2 as f64)).sqrt()
}

/// Result of a log-log slope fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub window: (f64, f64),
    pub n_points: usize,
    pub r_squared: f64,
}

impl SlopeFit {
    pub fn within(&self, target: f64, tol: f64) -> bool {
        (self.slope - target).abs() <= tol
    }
}

/// Weighted least squares of y on x: returns (slope, intercept, r², slope stderr).
pub fn weighted_line_fit(xs: &[f64], ys: &[f64], ws: &[f64]) -> Result<(f64, f64, f64, f64)> {
    if xs.len() < 3 {
        return Err(Error::InsufficientData("need at least three points for a line fit".into()));
    }
    let sw: f64 = ws.iter().sum();
    let mx = xs.iter().zip(ws).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = ys.iter().zip(ws).map(|(y, w)| y * w).sum::<f64>() / sw;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for ((x, y), w) in xs.iter().zip(ys).zip(ws) {
        sxx += w * (x - mx) * (x - mx);
        sxy += w * (x - mx) * (y - my);
        syy += w * (y - my) * (y - my);
    }
    if sxx <= 0.0 {
        return Err(Error::InsufficientData("degenerate abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .zip(ws)
        .map(|((x, y), w)| w * (y - intercept - slope * x).powi(2))
        .sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let dof = (xs.len() - 2) as f64;
    let stderr = (ss_res / dof / sxx).sqrt();
    Ok((slope, intercept, r2, stderr))
}

/// Plain least-squares slope of log(y) against log(x) with its standard error.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    if lx.iter().chain(&ly).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("log-log fit needs positive data".into()));
    }
    let ws = vec![1.0; lx.len()];
    let (slope, _, _, se) = weighted_line_fit(&lx, &ly, &ws)?;
    Ok((slope, se))
}

const BOOTSTRAP_RESAMPLES: usize = 200;

fn density_slope_from_counts(counts: &[u64], edges: &[f64]) -> Option<(f64, f64)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ws = Vec::new();
    for (k, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let (lo, hi) = (edges[k], edges[k + 1]);
        xs.push(0.5 * (lo.ln() + hi.ln()));
        ys.push((c as f64 / (hi - lo)).ln());
        ws.push(c as f64);
    }
    weighted_line_fit(&xs, &ys, &ws).ok().map(|(s, _, r2, _)| (s, r2))
}

/// Fit the log-log slope of the binned density of `samples` on `window`.
///
/// Bins are logarithmically spaced; each bin's log-density is weighted by its
/// count. The standard error comes from 200 multinomial bootstrap resamples.
pub fn fit_tail_exponent(samples: &[f64], window: (f64, f64), n_bins: usize, seed: u64) -> Result<SlopeFit> {
    check_finite(samples, "samples")?;
    let (lo, hi) = window;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::domain(format!("window must satisfy 0 < lo < hi, got {window:?}")));
    }
    if n_bins < 3 {
        return Err(Error::domain("need at least three bins"));
    }
    let ratio = (hi / lo).ln();
    let edges: Vec<f64> = (0..=n_bins)
        .map(|k| lo * (ratio * k as f64 / n_bins as f64).exp())
        .collect();
    let mut counts = vec![0u64; n_bins];
    for &x in samples {
        if x >= lo && x < hi {
            let k = (((x / lo).ln() / ratio) * n_bins as f64).floor() as usize;
            counts[k.min(n_bins - 1)] += 1;
        }
    }
    let in_window: u64 = counts.iter().sum();
    if in_window < 1000 {
        return Err(Error::InsufficientData(format!(
            "only {in_window} samples in window {window:?}; need at least 1000"
        )));
    }
    let (slope, r2) = density_slope_from_counts(&counts, &edges)
        .ok_or_else(|| Error::InsufficientData("too few occupied bins".into()))?;

    // Multinomial bootstrap over (bins, outside-window) via sequential binomials.
    let total = samples.len() as u64;
    let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    let mut rng = seeded(seed);
    let mut boot = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut resampled = vec![0u64; n_bins];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let mut remaining = total;
        let mut mass_left = 1.0f64;
        for (k, &p) in probs.iter().enumerate() {
            let q = if mass_left > 0.0 { (p / mass_left).clamp(0.0, 1.0) } else { 0.0 };
            let draw = if remaining == 0 || q == 0.0 {
                0
            } else {
                Binomial::new(remaining, q).expect("valid binomial").sample(&mut rng)
            };
            resampled[k] = draw;
            remaining -= draw;
            mass_left -= p;
        }
        if let Some((s, _)) = density_slope_from_counts(&resampled, &edges) {
            boot.push(s);
        }
    }
    let m = boot.iter().sum::<f64>() / boot.len() as f64;
    let var = boot.iter().map(|s| (s - m) * (s - m)).sum::<f64>() / (boot.len() - 1) as f64;
    Ok(SlopeFit {
        slope,
        stderr: var.sqrt().max(f64::MIN_POSITIVE),
        window,
        n_points: in_window as usize,
        r_squared: r2,
    })
}

/// Standard error of a binomial proportion.
pub fn binomial_stderr(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// True when no later value exceeds an earlier one by more than `n_sigma` combined standard errors.
pub fn is_non_increasing_within(values: &[f64], stderrs: &[f64], n_sigma: f64) -> bool {
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            let tol = n_sigma * (stderrs[i].powi(2) + stderrs[j].powi(2)).sqrt();
            if values[j] - values[i] > tol {
                return false;
            }
        }
    }
    true
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Sample Pearson correlation.
pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Empirical quantile by linear interpolation (q in [0,1]).
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let v = sorted(xs);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let w = pos - i as f64;
    if i + 1 < v.len() {
        v[i] * (1.0 - w) + v[i + 1] * w
    } else {
        v[i]
    }
}

/// One row of a convergence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub rung: f64,
    /// KS distance to the next (finer) rung; `None` for the finest.
    pub to_next: Option<f64>,
    /// KS distance to the finest rung (or to the reference sample when one is supplied).
    pub to_reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// Indices i where distance i+1 exceeds distance i by more than 2σ.
    pub non_monotone: Vec<usize>,
    pub noise_scale: f64,
}

impl ConvergenceTable {
    pub fn reference_distances(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.to_reference).collect()
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.reference_distances().windows(2).all(|w| w[1] < w[0])
    }
}

/// KS-distance table for an observable along a parameter ladder, coarse to fine.
///
/// With `reference = None` the finest rung is the reference and its own row has
/// distance 0; otherwise every rung is compared with the supplied sample.
pub fn dyadic_convergence_study<P, F>(ladder: &[P], rung_value: impl Fn(&P) -> f64, mut sampler: F, reference: Option<&[f64]>) -> Result<ConvergenceTable>
where
    F: FnMut(&P) -> Result<Vec<f64>>,
{
    if ladder.len() < 3 {
        return Err(Error::domain("a convergence ladder needs at least three rungs"));
    }
    let samples: Vec<Vec<f64>> = ladder.iter().map(&mut sampler).collect::<Result<_>>()?;
    let finest = samples.last().unwrap();
    let reference = reference.unwrap_or(finest);
    let mut rows = Vec::with_capacity(ladder.len());
    for (k, s) in samples.iter().enumerate() {
        let to_next = if k + 1 < samples.len() {
            Some(ks_distance(s, &samples[k + 1])?)
        } else {
            None
        };
        rows.push(ConvergenceRow {
            rung: rung_value(&ladder[k]),
            to_next,
            to_reference: ks_distance(s, reference)?,
        });
    }
    let noise = ks_noise_scale(finest.len(), reference.len());
    let non_monotone = rows
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1].to_reference - w[0].to_reference > 2.0 * noise)
        .map(|(i, _)| i)
        .collect();
    Ok(ConvergenceTable {
        rows,
        non_monotone,
        noise_scale: noise,
    })
}

/// Sample `n` standard normals; handy for calibrating tests.
pub fn normal_sample<R: Rng + ?Sized>(rng: &mut R, n: usize, shift: f64) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal) + shift)
        .collect()
}
