//! Sphere, disk and Lévy-tree sphere samplers.
//!
//! Line-average profiles are built in the coordinate where they have constant
//! quadratic variation. Seen from its maximum, each side of a sphere profile is
//! X_max − |W³_u + μu e₁| with μ = Q − γ (a drifted Brownian motion conditioned
//! to stay below the maximum); the disk uses the same law at quadratic variation
//! 2du. The maximum has measure e^{−2μx}dx (sphere) or e^{−μx}dx (disk), so a
//! profile can be built with its maximum at 0 and shifted afterwards.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brownian::{normal, BesselExcursion};
use crate::error::{Error, Result};
use crate::field::{
    compute_area_measure, compute_boundary_measure, sample_h2, CylinderField, FieldGrid, Geometry, QuantumMeasureGrid, StripEdge,
};
use crate::params::GammaParams;
use crate::rng::{ModuleId, StreamKey};
use crate::stable::{levy_constant, sample_stable_excursion, ExcursionConfig, StableExcursion, StableSpec, StableTruncation};

/// Discretization shared by sphere and disk fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub n_theta: usize,
    pub n_modes: usize,
    /// x spacing; the default equals the angular spacing.
    pub dx: f64,
    /// Regularization radius in grid cells (≥ 2).
    pub epsilon_cells: f64,
    /// Profiles are cut where they fall this many units of 1/γ below their maximum.
    pub floor_depth: f64,
    pub max_attempts: u64,
}

impl GridConfig {
    pub fn sphere() -> Self {
        Self {
            n_theta: 16,
            n_modes: 7,
            dx: 2.0 * PI / 16.0,
            epsilon_cells: 2.0,
            floor_depth: 10.0,
            max_attempts: 1_000_000,
        }
    }

    /// Strip grid with the same cell size as `sphere()`.
    pub fn disk() -> Self {
        Self {
            n_theta: 8,
            n_modes: 7,
            dx: PI / 8.0,
            ..Self::sphere()
        }
    }

    fn dtheta(&self, geometry: Geometry) -> f64 {
        geometry.theta_span() / self.n_theta as f64
    }

    pub fn epsilon_reg(&self, geometry: Geometry) -> f64 {
        self.epsilon_cells * self.dx.max(self.dtheta(geometry))
    }

    fn validate(&self) -> Result<()> {
        if !(self.dx > 0.0) || self.n_theta < 2 || self.n_modes < 1 || !(self.floor_depth > 0.0) || self.max_attempts == 0 {
            return Err(Error::domain("invalid grid configuration"));
        }
        if self.epsilon_cells < 2.0 {
            return Err(Error::domain("epsilon_cells must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Bessel,
    Bottleneck,
}

/// Acceptance statistics of a rejection sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub attempts: u64,
    pub rate: f64,
}

impl Acceptance {
    fn one(attempts: u64) -> Self {
        Self {
            attempts,
            rate: 1.0 / attempts as f64,
        }
    }
}

/// A sphere field on a cylinder window; the two marked points are x = ±∞.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereSample {
    pub field: CylinderField,
    pub area: f64,
    pub provenance: Provenance,
    pub epsilon_reg: f64,
    pub gamma: f64,
    /// Maximum of the line-average profile.
    pub profile_max: f64,
    pub acceptance: Acceptance,
    /// Truncation parameters (lower bound of the maximum, or r and β).
    pub truncation: serde_json::Value,
}

impl SphereSample {
    pub fn measure(&self, params: &GammaParams) -> Result<QuantumMeasureGrid> {
        compute_area_measure(&self.field, self.epsilon_reg, params)
    }

    /// Shift by C = −ln(A)/γ so that the area is 1.
    pub fn unit_area(&self, params: &GammaParams) -> SphereSample {
        let c = -self.area.ln() / params.gamma;
        SphereSample {
            field: self.field.shifted(c),
            area: 1.0,
            profile_max: self.profile_max + c,
            ..self.clone()
        }
    }
}

/// Grid values of a side of a profile seen from its maximum: R = scale·|W³_d + νd e₁|
/// at distances first, first + dx, … while R ≤ floor (always at least one point).
fn profile_side<R: Rng + ?Sized>(nu: f64, scale: f64, floor: f64, first: f64, dx: f64, rng: &mut R) -> Vec<f64> {
    let mut w = [0.0f64; 3];
    let mut out = Vec::new();
    let mut d_prev = 0.0;
    let mut d = first;
    loop {
        let step = d - d_prev;
        let sd = step.sqrt();
        w[0] += nu * step + sd * normal(rng);
        w[1] += sd * normal(rng);
        w[2] += sd * normal(rng);
        let r = scale * (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
        if r > floor && !out.is_empty() {
            return out;
        }
        out.push(r);
        d_prev = d;
        d += dx;
    }
}

/// Profile with its maximum 0 at a uniformly random sub-grid position, as
/// (x of the first grid point, values).
fn profile_from_max<R: Rng + ?Sized>(nu: f64, scale: f64, floor: f64, dx: f64, rng: &mut R) -> (f64, Vec<f64>) {
    let phase = rng.random::<f64>() * dx;
    let right = profile_side(nu, scale, floor, phase.max(1e-300), dx, rng);
    let left = profile_side(nu, scale, floor, dx - phase, dx, rng);
    let x0 = -(dx - phase) - (left.len() - 1) as f64 * dx;
    let values = left.iter().rev().chain(&right).map(|r| -r).collect();
    (x0, values)
}

fn field_on_profile<R: Rng + ?Sized>(geometry: Geometry, x0: f64, profile: Vec<f64>, cfg: &GridConfig, rng: &mut R) -> Result<CylinderField> {
    let n_x = profile.len().max(2);
    let mut profile = profile;
    profile.resize(n_x, *profile.last().unwrap());
    let grid = FieldGrid::new(geometry, x0, cfg.dx, n_x, cfg.n_theta)?;
    let lateral = sample_h2(&grid, cfg.n_modes, rng)?;
    CylinderField::from_parts(grid, profile, lateral.modes)
}

/// Sphere shape: field with profile maximum 0, and its area.
pub fn sphere_shape<R: Rng + ?Sized>(params: &GammaParams, cfg: &GridConfig, rng: &mut R) -> Result<(CylinderField, f64)> {
    let mu = params.cone_drift();
    let (x0, profile) = profile_from_max(mu, 1.0, cfg.floor_depth / params.gamma, cfg.dx, rng);
    let field = field_on_profile(Geometry::Cylinder, x0, profile, cfg, rng)?;
    let area = compute_area_measure(&field, cfg.epsilon_reg(Geometry::Cylinder), params)?.total();
    Ok((field, area))
}

/// Configuration of the Bessel-route sphere sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereConfig {
    pub grid: GridConfig,
    /// Area of a max-0 shape treated as unreachable; sets the lower bound
    /// x_lo = (ln a_lo − ln cap)/γ of the profile maximum.
    pub shape_area_cap: f64,
}

impl Default for SphereConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig::sphere(),
            shape_area_cap: 500.0,
        }
    }
}

/// Sphere from the Bessel excursion measure with area in [a_lo, a_hi].
///
/// The maximum is drawn from e^{−2(Q−γ)x}dx on [x_lo, ∞) (the min-max
/// truncation), the area is e^{γ X_max} times the area of the max-0 shape, and
/// the sample is accepted when it falls in the window.
pub fn sample_sphere_bessel(params: &GammaParams, area_window: (f64, f64), cfg: &SphereConfig, key: &StreamKey, task: u64) -> Result<SphereSample> {
    let (a_lo, a_hi) = area_window;
    if !(a_lo > 0.0 && a_hi > a_lo && a_hi.is_finite()) {
        return Err(Error::domain("area window needs 0 < a_lo < a_hi"));
    }
    cfg.grid.validate()?;
    let g = params.gamma;
    let mu = params.cone_drift();
    let x_lo = (a_lo.ln() - cfg.shape_area_cap.ln()) / g;
    let law = Exp::new(2.0 * mu).map_err(|e| Error::domain(e.to_string()))?;
    for attempt in 0..cfg.grid.max_attempts {
        let mut rng = key.sub_rng(ModuleId::Sphere, task, attempt);
        let x_max = x_lo + law.sample(&mut rng);
        let (shape, a0) = sphere_shape(params, &cfg.grid, &mut rng)?;
        let area = (g * x_max).exp() * a0;
        if area >= a_lo && area <= a_hi {
            return Ok(SphereSample {
                field: shape.shifted(x_max),
                area,
                provenance: Provenance::Bessel,
                epsilon_reg: cfg.grid.epsilon_reg(Geometry::Cylinder),
                gamma: g,
                profile_max: x_max,
                acceptance: Acceptance::one(attempt + 1),
                truncation: serde_json::json!({"profile_max_lower_bound": x_lo, "area_window": [a_lo, a_hi]}),
            });
        }
    }
    Err(Error::retry(cfg.grid.max_attempts, 0))
}

/// Independent samples for tasks `first_task..first_task + n`, in parallel.
pub fn sample_sphere_bessel_batch(params: &GammaParams, area_window: (f64, f64), cfg: &SphereConfig, key: &StreamKey, first_task: u64, n: u64) -> Result<Vec<SphereSample>> {
    (first_task..first_task + n)
        .into_par_iter()
        .map(|t| sample_sphere_bessel(params, area_window, cfg, key, t))
        .collect()
}

/// Sphere field from a given excursion of the Bessel excursion measure.
///
/// The profile (2/γ)log Z is reparameterized by its quadratic variation and
/// interpolated onto the grid (maximum at x = 0). Points where Z falls more
/// than `floor_depth/γ` (in profile units) below its maximum are dropped.
pub fn assemble_sphere_field<R: Rng + ?Sized>(params: &GammaParams, excursion: &BesselExcursion, cfg: &GridConfig, rng: &mut R) -> Result<SphereSample> {
    cfg.validate()?;
    let delta = params.dimensions().sphere_dim;
    if (excursion.dimension - delta).abs() > 1e-9 {
        return Err(Error::domain(format!(
            "excursion dimension {} does not match 4 - 8/gamma^2 = {delta}",
            excursion.dimension
        )));
    }
    let g = params.gamma;
    let z = excursion.path.values();
    let imax = z
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::domain("empty excursion"))?;
    let zmax = z[imax];
    if !(zmax > 0.0) {
        return Err(Error::domain("excursion has no positive values"));
    }
    let log_floor = zmax.ln() - 0.5 * cfg.floor_depth;
    let mut lo = imax;
    while lo > 0 && z[lo - 1] > 0.0 && z[lo - 1].ln() >= log_floor {
        lo -= 1;
    }
    let mut hi = imax;
    while hi + 1 < z.len() && z[hi + 1] > 0.0 && z[hi + 1].ln() >= log_floor {
        hi += 1;
    }
    // X = (2/γ) log Z has quadratic variation (4/γ²) d⟨log Z⟩
    let scale = 4.0 / (g * g);
    let mut u = vec![0.0; hi - lo + 1];
    let x: Vec<f64> = (lo..=hi).map(|i| 2.0 / g * z[i].ln()).collect();
    for k in 1..u.len() {
        let d = z[lo + k].ln() - z[lo + k - 1].ln();
        u[k] = u[k - 1] + scale * d * d;
    }
    let u_max = u[imax - lo];
    let (u_first, u_last) = (u[0] - u_max, u[u.len() - 1] - u_max);
    let phase = rng.random::<f64>() * cfg.dx;
    let k0 = ((u_first - phase) / cfg.dx).ceil() as i64;
    let k1 = ((u_last - phase) / cfg.dx).floor() as i64;
    if k1 - k0 < 1 {
        return Err(Error::domain("excursion is too short for the requested grid"));
    }
    let mut profile = Vec::with_capacity((k1 - k0 + 1) as usize);
    let mut j = 0;
    for k in k0..=k1 {
        let t = phase + k as f64 * cfg.dx + u_max;
        while j + 2 < u.len() && u[j + 1] < t {
            j += 1;
        }
        let w = if u[j + 1] > u[j] { ((t - u[j]) / (u[j + 1] - u[j])).clamp(0.0, 1.0) } else { 0.0 };
        profile.push(x[j] + w * (x[j + 1] - x[j]));
    }
    let x0 = phase + k0 as f64 * cfg.dx;
    let field = field_on_profile(Geometry::Cylinder, x0, profile, cfg, rng)?;
    let eps = cfg.epsilon_reg(Geometry::Cylinder);
    let area = compute_area_measure(&field, eps, params)?.total();
    Ok(SphereSample {
        field,
        area,
        provenance: Provenance::Bessel,
        epsilon_reg: eps,
        gamma: g,
        profile_max: 2.0 / g * zmax.ln(),
        acceptance: Acceptance::one(1),
        truncation: serde_json::json!({"excursion_max": excursion.max}),
    })
}

/// First grid index at or after which a profile is ≤ r.
pub fn first_passage_index(profile: &[f64], r: f64) -> Option<usize> {
    profile.iter().position(|&v| v <= r)
}

/// Cone profile right of x = 0: X₀ = 0 and drift −(Q−γ), run until it is ≤ `r`.
pub fn cone_profile_to_level<R: Rng + ?Sized>(params: &GammaParams, r: f64, dx: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(r < 0.0) || !(dx > 0.0) {
        return Err(Error::domain("need r < 0 and dx > 0"));
    }
    let mu = params.cone_drift();
    let sd = dx.sqrt();
    let mut out = vec![0.0];
    let mut x = 0.0;
    while x > r {
        x += -mu * dx + sd * normal(rng);
        out.push(x);
    }
    Ok(out)
}

/// One unconditioned proposal of the bottleneck sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct BottleneckCandidate {
    /// Field right of τ_r (the window starts at τ_r).
    pub field: CylinderField,
    /// Area of the half-cylinder right of τ_r.
    pub area: f64,
    pub tau_r: f64,
    pub profile_max: f64,
}

/// Cone field right of τ_r, conditioned on its profile reaching r/2.
///
/// Right of τ_r the profile is a drift −μ Brownian motion. Conditioning it to
/// reach r/2 (the auxiliary level γ⁻¹log β⁻¹ with β = e^{−γr/2}) turns its
/// drift into +μ until then. From there its future supremum is the current
/// value plus Exp(2μ); it rises with drift +μ to that supremum and then falls
/// as the supremum minus a conditioned drifted Brownian motion.
pub fn bottleneck_candidate<R: Rng + ?Sized>(params: &GammaParams, r: f64, cfg: &GridConfig, rng: &mut R) -> Result<BottleneckCandidate> {
    if !(r < 0.0) {
        return Err(Error::domain("need r < 0"));
    }
    cfg.validate()?;
    let g = params.gamma;
    let mu = params.cone_drift();
    let dx = cfg.dx;
    let sd = dx.sqrt();
    let level = r / 2.0;
    let sup_law = Exp::new(2.0 * mu).map_err(|e| Error::domain(e.to_string()))?;
    let cone = cone_profile_to_level(params, r, dx, rng)?;
    let tau_index = cone.len() - 1;
    let mut profile = vec![cone[tau_index]];
    let mut x = cone[tau_index];
    while x < level {
        x += mu * dx + sd * normal(rng);
        profile.push(x);
    }
    let sup = x + sup_law.sample(rng);
    let mut next = x + mu * dx + sd * normal(rng);
    while next < sup {
        profile.push(next);
        x = next;
        next = x + mu * dx + sd * normal(rng);
    }
    // the supremum is reached inside the last step
    let frac = (sup - x) / (next - x);
    let after = profile_side(mu, 1.0, cfg.floor_depth / g, (1.0 - frac) * dx, dx, rng);
    profile.extend(after.iter().map(|v| sup - v));
    let tau_r = tau_index as f64 * dx;
    let field = field_on_profile(Geometry::Cylinder, tau_r, profile, cfg, rng)?;
    let area = compute_area_measure(&field, cfg.epsilon_reg(Geometry::Cylinder), params)?.total();
    Ok(BottleneckCandidate {
        field,
        area,
        tau_r,
        profile_max: sup,
    })
}

/// Bottleneck sphere: a candidate accepted when its area lies in [1, 1 + ε].
pub fn sample_sphere_bottleneck(params: &GammaParams, r: f64, epsilon: f64, cfg: &GridConfig, key: &StreamKey, task: u64) -> Result<SphereSample> {
    if !(r < 0.0) || !(epsilon > 0.0) {
        return Err(Error::domain("need r < 0 and epsilon > 0"));
    }
    let g = params.gamma;
    for attempt in 0..cfg.max_attempts {
        let mut rng = key.sub_rng(ModuleId::Sphere, task, attempt);
        let c = bottleneck_candidate(params, r, cfg, &mut rng)?;
        if c.area >= 1.0 && c.area <= 1.0 + epsilon {
            return Ok(SphereSample {
                field: c.field,
                area: c.area,
                provenance: Provenance::Bottleneck,
                epsilon_reg: cfg.epsilon_reg(Geometry::Cylinder),
                gamma: g,
                profile_max: c.profile_max,
                acceptance: Acceptance::one(attempt + 1),
                truncation: serde_json::json!({"r": r, "epsilon": epsilon, "beta": (-g * r / 2.0).exp(), "tau_r": c.tau_r}),
            });
        }
    }
    Err(Error::retry(cfg.max_attempts, 0))
}

pub fn sample_sphere_bottleneck_batch(params: &GammaParams, r: f64, epsilon: f64, cfg: &GridConfig, key: &StreamKey, first_task: u64, n: u64) -> Result<Vec<SphereSample>> {
    (first_task..first_task + n)
        .into_par_iter()
        .map(|t| sample_sphere_bottleneck(params, r, epsilon, cfg, key, t))
        .collect()
}

/// What a quantum disk is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DiskConstraint {
    UnitArea,
    UnitBoundary,
    BoundaryLength { b: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiskSample {
    /// Field on a strip window of ℝ × [0, π].
    pub field: CylinderField,
    pub boundary_length: f64,
    pub area: f64,
    /// (x, edge) of the marked boundary point.
    pub marked_boundary_point: (f64, StripEdge),
    pub epsilon_reg: f64,
    pub acceptance: Acceptance,
}

/// Configuration of the disk sampler.
///
/// Conditioning on the boundary length (area) of a disk tilts the law of the
/// max-0 shape by L₀^{2(Q−γ)/γ} (A₀^{(Q−γ)/γ}); the tilt is applied by
/// rejection with the given caps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiskConfig {
    pub grid: GridConfig,
    pub boundary_cap: f64,
    pub area_cap: f64,
}

impl Default for DiskConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig::disk(),
            boundary_cap: 60.0,
            area_cap: 400.0,
        }
    }
}

impl DiskConfig {
    /// Caps set to four times the largest value over `n_pilot` shapes.
    pub fn calibrated(params: &GammaParams, grid: GridConfig, n_pilot: u64, key: &StreamKey) -> Result<Self> {
        let shapes: Vec<(f64, f64)> = (0..n_pilot)
            .into_par_iter()
            .map(|i| {
                let mut rng = key.rng(ModuleId::Sphere, i);
                disk_shape(params, &grid, &mut rng).map(|s| (s.boundary, s.area))
            })
            .collect::<Result<_>>()?;
        let lmax = shapes.iter().map(|s| s.0).fold(0.0, f64::max);
        let amax = shapes.iter().map(|s| s.1).fold(0.0, f64::max);
        Ok(Self {
            grid,
            boundary_cap: 4.0 * lmax,
            area_cap: 4.0 * amax,
        })
    }
}

/// Disk with profile maximum 0 and its measures.
pub struct DiskShape {
    pub field: CylinderField,
    pub boundary: f64,
    pub area: f64,
    pub boundary_measure: crate::field::BoundaryMeasure,
}

pub fn disk_shape<R: Rng + ?Sized>(params: &GammaParams, cfg: &GridConfig, rng: &mut R) -> Result<DiskShape> {
    cfg.validate()?;
    let mu = params.cone_drift();
    let s2 = 2f64.sqrt();
    // quadratic variation 2du: X = X_max − √2·|W³ + (μ/√2)u e₁|
    let (x0, profile) = profile_from_max(mu / s2, s2, cfg.floor_depth / params.gamma, cfg.dx, rng);
    let field = field_on_profile(Geometry::Strip, x0, profile, cfg, rng)?;
    let eps = cfg.epsilon_reg(Geometry::Strip);
    let area = compute_area_measure(&field, eps, params)?.total();
    let boundary_measure = compute_boundary_measure(&field, eps, params)?;
    Ok(DiskShape {
        boundary: boundary_measure.total(),
        field,
        area,
        boundary_measure,
    })
}

/// Quantum disk with the requested constraint.
pub fn sample_quantum_disk(params: &GammaParams, constraint: DiskConstraint, cfg: &DiskConfig, key: &StreamKey, task: u64) -> Result<DiskSample> {
    let g = params.gamma;
    let mu = params.cone_drift();
    let (exponent, cap) = match constraint {
        DiskConstraint::UnitArea => (mu / g, cfg.area_cap),
        DiskConstraint::UnitBoundary => (2.0 * mu / g, cfg.boundary_cap),
        DiskConstraint::BoundaryLength { b } => {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::domain("boundary length must be positive"));
            }
            (2.0 * mu / g, cfg.boundary_cap)
        }
    };
    for attempt in 0..cfg.grid.max_attempts {
        let mut rng = key.sub_rng(ModuleId::Sphere, task, attempt);
        let shape = disk_shape(params, &cfg.grid, &mut rng)?;
        let value = match constraint {
            DiskConstraint::UnitArea => shape.area,
            _ => shape.boundary,
        };
        if rng.random::<f64>() >= (value / cap).powf(exponent) {
            continue;
        }
        let c = match constraint {
            DiskConstraint::UnitArea => -shape.area.ln() / g,
            DiskConstraint::UnitBoundary => -2.0 / g * shape.boundary.ln(),
            DiskConstraint::BoundaryLength { b } => 2.0 / g * (b / shape.boundary).ln(),
        };
        let (x, edge) = shape.boundary_measure.sample_point(&mut rng);
        return Ok(DiskSample {
            field: shape.field.shifted(c),
            boundary_length: shape.boundary * (g * c / 2.0).exp(),
            area: shape.area * (g * c).exp(),
            marked_boundary_point: (x, edge),
            epsilon_reg: cfg.grid.epsilon_reg(Geometry::Strip),
            acceptance: Acceptance::one(attempt + 1),
        });
    }
    Err(Error::retry(cfg.grid.max_attempts, 0))
}

/// Areas of unit-boundary disks, used for disks that are not materialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiskAreaCalibration {
    pub unit_boundary_areas: Vec<f64>,
}

impl DiskAreaCalibration {
    pub const DEFAULT_SIZE: u64 = 10_000;

    pub fn build(params: &GammaParams, cfg: &DiskConfig, n: u64, key: &StreamKey) -> Result<Self> {
        let areas = (0..n)
            .into_par_iter()
            .map(|i| sample_quantum_disk(params, DiskConstraint::UnitBoundary, cfg, key, i).map(|d| d.area))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Self {
            unit_boundary_areas: areas,
        })
    }

    pub fn mean(&self) -> f64 {
        crate::stats::mean(&self.unit_boundary_areas)
    }

    /// Area of a disk with boundary length b: b² times a pooled unit-boundary area.
    pub fn draw<R: Rng + ?Sized>(&self, b: f64, rng: &mut R) -> f64 {
        let k = rng.random_range(0..self.unit_boundary_areas.len());
        b * b * self.unit_boundary_areas[k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiskOrientation {
    Clockwise,
    CounterClockwise,
}

/// Which disks of a Lévy sphere get a full field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Materialize {
    None,
    TopK { k: usize },
    AllAbove { s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoration {
    pub boundary_length: f64,
    pub orientation: DiskOrientation,
    /// Marked point as a fraction of the boundary, uniform on [0, 1).
    pub marked_point: f64,
    pub area: f64,
    pub disk: Option<DiskSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevySphereSample {
    pub excursion: StableExcursion,
    pub decorations: Vec<Decoration>,
    pub total_area: f64,
    /// Expected area of the disks below the jump-recording threshold (not in total_area).
    pub unresolved_area_estimate: f64,
    pub jump_threshold: f64,
}

/// Jump-recording threshold of the excursion samplers for this truncation.
pub fn levy_jump_threshold(truncation: StableTruncation, n_steps: usize, config: &ExcursionConfig) -> f64 {
    let alpha = 1.5;
    let dt = match truncation {
        StableTruncation::FixedDuration { duration } => duration / n_steps as f64,
        StableTruncation::MinHeight { min_height } => min_height.powf(alpha) / n_steps as f64,
        StableTruncation::MinMaxJump { min_jump } => min_jump.powf(alpha) / n_steps as f64,
    };
    config.jump_factor * dt.powf(1.0 / alpha)
}

/// Assemble a sphere from a 3/2-stable excursion and disks glued along its jumps.
#[allow(clippy::too_many_arguments)]
pub fn assemble_levy_sphere(
    params: &GammaParams,
    truncation: StableTruncation,
    n_steps: usize,
    materialize: Materialize,
    calibration: &DiskAreaCalibration,
    disk_cfg: &DiskConfig,
    key: &StreamKey,
    task: u64,
) -> Result<LevySphereSample> {
    if !params.is_pure() {
        return Err(Error::Unsupported("the Levy assembly needs gamma = sqrt(8/3)".into()));
    }
    if calibration.unit_boundary_areas.is_empty() {
        return Err(Error::InsufficientData("empty disk-area calibration".into()));
    }
    let ecfg = ExcursionConfig::default();
    let threshold = levy_jump_threshold(truncation, n_steps, &ecfg);
    if let Materialize::AllAbove { s } = materialize {
        if !(s >= threshold) {
            return Err(Error::domain(format!(
                "cannot materialize disks below the jump resolution {threshold}"
            )));
        }
    }
    let spec = StableSpec::three_halves();
    let mut rng = key.rng(ModuleId::Sphere, task);
    let excursion = sample_stable_excursion(&spec, truncation, n_steps, &ecfg, &mut rng)?;
    let chosen: Vec<bool> = match materialize {
        Materialize::None => vec![false; excursion.jumps.len()],
        Materialize::AllAbove { s } => excursion.jumps.iter().map(|j| j.size >= s).collect(),
        Materialize::TopK { k } => {
            let mut order: Vec<usize> = (0..excursion.jumps.len()).collect();
            order.sort_by(|&a, &b| excursion.jumps[b].size.total_cmp(&excursion.jumps[a].size));
            let mut c = vec![false; excursion.jumps.len()];
            for &i in order.iter().take(k) {
                c[i] = true;
            }
            c
        }
    };
    let disk_key = key.child(&[ModuleId::Sphere as u64, task]);
    let disks: Vec<Option<DiskSample>> = excursion
        .jumps
        .par_iter()
        .enumerate()
        .map(|(i, j)| {
            if chosen[i] {
                sample_quantum_disk(params, DiskConstraint::BoundaryLength { b: j.size }, disk_cfg, &disk_key, i as u64).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    let mut decorations = Vec::with_capacity(excursion.jumps.len());
    for (j, disk) in excursion.jumps.iter().zip(disks) {
        let orientation = if rng.random::<bool>() {
            DiskOrientation::Clockwise
        } else {
            DiskOrientation::CounterClockwise
        };
        let marked_point = rng.random::<f64>();
        let pooled = calibration.draw(j.size, &mut rng);
        let area = disk.as_ref().map_or(pooled, |d| d.area);
        decorations.push(Decoration {
            boundary_length: j.size,
            orientation,
            marked_point,
            area,
            disk,
        });
    }
    let total_area = decorations.iter().map(|d| d.area).sum();
    // ∫₀^θ b² · c b^{−5/2} db = 2c√θ per unit time
    let unresolved = excursion.duration * 2.0 * levy_constant(1.5) * threshold.sqrt() * calibration.mean();
    Ok(LevySphereSample {
        excursion,
        decorations,
        total_area,
        unresolved_area_estimate: unresolved,
        jump_threshold: threshold,
    })
}

/// Area weight A ↦ A^{−7/2+k} of the k-marked sphere family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaWeight {
    pub k: u32,
    pub exponent: f64,
}

impl AreaWeight {
    pub fn weight(&self, area: f64) -> f64 {
        area.powf(self.exponent)
    }
}

pub fn sphere_marked_point_weight(k: u32) -> AreaWeight {
    AreaWeight {
        k,
        exponent: -3.5 + k as f64,
    }
}
