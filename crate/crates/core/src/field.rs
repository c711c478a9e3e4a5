//! Discretized fields on cylinder and strip windows, their regularized area and
//! boundary measures, and conformal-map checks.
//!
//! The lateral part is h₂(x, θ) = Σₙ 2·Re(cₙ(x) e^{inθ}) with
//! E[cₙ(x) c̄ₙ(x′)] = e^{−n|x−x′|}/(2n). On the cylinder cₙ is complex; on the
//! strip (Neumann boundary) it is real, so only cosines appear.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::brownian::normal;
use crate::error::{Error, Result};
use crate::params::GammaParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    /// x ∈ window, θ ∈ [0, 2π) periodic; θ_j = j·2π/n_θ.
    Cylinder,
    /// x ∈ window, θ ∈ [0, π] with reflecting edges; θ_j = (j + ½)·π/n_θ.
    Strip,
}

impl Geometry {
    pub fn theta_span(self) -> f64 {
        match self {
            Geometry::Cylinder => 2.0 * PI,
            Geometry::Strip => PI,
        }
    }
}

/// Grid layout shared by a field and its measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub geometry: Geometry,
    pub x_min: f64,
    pub dx: f64,
    pub n_x: usize,
    pub n_theta: usize,
}

impl FieldGrid {
    pub fn new(geometry: Geometry, x_min: f64, dx: f64, n_x: usize, n_theta: usize) -> Result<Self> {
        if !(dx > 0.0) || n_x < 2 || n_theta < 2 || !x_min.is_finite() {
            return Err(Error::domain("grid needs dx > 0, n_x >= 2 and n_theta >= 2"));
        }
        Ok(Self {
            geometry,
            x_min,
            dx,
            n_x,
            n_theta,
        })
    }

    pub fn dtheta(&self) -> f64 {
        self.geometry.theta_span() / self.n_theta as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + self.dx * i as f64
    }

    pub fn theta(&self, j: usize) -> f64 {
        match self.geometry {
            Geometry::Cylinder => self.dtheta() * j as f64,
            Geometry::Strip => self.dtheta() * (j as f64 + 0.5),
        }
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.n_x - 1)
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dtheta()
    }

    pub fn len(&self) -> usize {
        self.n_x * self.n_theta
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.n_theta + j
    }

    /// Angular index after wrapping (cylinder) or reflecting (strip).
    #[inline]
    fn fold_theta(&self, j: i64) -> usize {
        let n = self.n_theta as i64;
        match self.geometry {
            Geometry::Cylinder => j.rem_euclid(n) as usize,
            Geometry::Strip => {
                let p = j.rem_euclid(2 * n);
                (if p < n { p } else { 2 * n - 1 - p }) as usize
            }
        }
    }

    #[inline]
    fn clamp_x(&self, i: i64) -> usize {
        i.clamp(0, self.n_x as i64 - 1) as usize
    }
}

/// Lateral (mean-zero on vertical lines) part of a field, as mode coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LateralModes {
    pub n_modes: usize,
    /// Re cₙ(xᵢ) at index (n−1)·n_x + i.
    pub re: Vec<f64>,
    /// Im cₙ(xᵢ); all zero on the strip.
    pub im: Vec<f64>,
}

impl LateralModes {
    pub fn zeros(n_modes: usize, n_x: usize) -> Self {
        Self {
            n_modes,
            re: vec![0.0; n_modes * n_x],
            im: vec![0.0; n_modes * n_x],
        }
    }

    /// cₙ(xᵢ) as (re, im), n ≥ 1.
    pub fn coefficient(&self, n: usize, i: usize, n_x: usize) -> (f64, f64) {
        let k = (n - 1) * n_x + i;
        (self.re[k], self.im[k])
    }
}

/// A field on a finite window: line-average profile plus lateral modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderField {
    pub grid: FieldGrid,
    /// Line average h₁(xᵢ).
    pub h1_profile: Vec<f64>,
    pub modes: LateralModes,
    /// h₁ + h₂ at (xᵢ, θⱼ), row-major in x.
    pub total: Vec<f64>,
}

impl CylinderField {
    /// Rebuild `total` from the profile and the modes.
    pub fn from_parts(grid: FieldGrid, h1_profile: Vec<f64>, modes: LateralModes) -> Result<Self> {
        if h1_profile.len() != grid.n_x || modes.re.len() != modes.n_modes * grid.n_x || modes.im.len() != modes.re.len() {
            return Err(Error::domain("profile and modes do not match the grid"));
        }
        let max_modes = match grid.geometry {
            Geometry::Cylinder => (grid.n_theta - 1) / 2,
            Geometry::Strip => grid.n_theta - 1,
        };
        if modes.n_modes > max_modes {
            return Err(Error::domain(format!(
                "{} modes alias on {} angular points (at most {max_modes})",
                modes.n_modes, grid.n_theta
            )));
        }
        let mut total = vec![0.0; grid.len()];
        let mut cs = vec![(0.0, 0.0); modes.n_modes * grid.n_theta];
        for n in 1..=modes.n_modes {
            for j in 0..grid.n_theta {
                let a = n as f64 * grid.theta(j);
                cs[(n - 1) * grid.n_theta + j] = (a.cos(), a.sin());
            }
        }
        for i in 0..grid.n_x {
            for j in 0..grid.n_theta {
                let mut v = 0.0;
                for n in 1..=modes.n_modes {
                    let (re, im) = modes.coefficient(n, i, grid.n_x);
                    let (c, s) = cs[(n - 1) * grid.n_theta + j];
                    v += 2.0 * (re * c - im * s);
                }
                total[grid.idx(i, j)] = h1_profile[i] + v;
            }
        }
        Ok(Self {
            grid,
            h1_profile,
            modes,
            total,
        })
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.total[self.grid.idx(i, j)]
    }

    /// The same field plus a constant.
    pub fn shifted(&self, c: f64) -> CylinderField {
        CylinderField {
            grid: self.grid,
            h1_profile: self.h1_profile.iter().map(|v| v + c).collect(),
            modes: self.modes.clone(),
            total: self.total.iter().map(|v| v + c).collect(),
        }
    }

    /// θ-mean of total − h₁ at each x.
    pub fn lateral_line_means(&self) -> Vec<f64> {
        (0..self.grid.n_x)
            .map(|i| {
                (0..self.grid.n_theta)
                    .map(|j| self.value(i, j) - self.h1_profile[i])
                    .sum::<f64>()
                    / self.grid.n_theta as f64
            })
            .collect()
    }

    /// Sub-window of x indices [i0, i1].
    pub fn rewindow(&self, i0: usize, i1: usize) -> Result<CylinderField> {
        if i1 <= i0 || i1 >= self.grid.n_x {
            return Err(Error::domain("bad sub-window"));
        }
        let n_x = i1 - i0 + 1;
        let grid = FieldGrid {
            x_min: self.grid.x(i0),
            n_x,
            ..self.grid
        };
        let nm = self.modes.n_modes;
        let mut modes = LateralModes::zeros(nm, n_x);
        for n in 0..nm {
            for i in 0..n_x {
                modes.re[n * n_x + i] = self.modes.re[n * self.grid.n_x + i0 + i];
                modes.im[n * n_x + i] = self.modes.im[n * self.grid.n_x + i0 + i];
            }
        }
        let nt = self.grid.n_theta;
        Ok(CylinderField {
            grid,
            h1_profile: self.h1_profile[i0..=i1].to_vec(),
            modes,
            total: self.total[i0 * nt..(i1 + 1) * nt].to_vec(),
        })
    }

    /// CSV matrix: one row per x, columns `x,θ_0,…`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "x")?;
        for j in 0..self.grid.n_theta {
            write!(out, ",theta_{j}")?;
        }
        writeln!(out)?;
        for i in 0..self.grid.n_x {
            write!(out, "{}", self.grid.x(i))?;
            for j in 0..self.grid.n_theta {
                write!(out, ",{}", self.value(i, j))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// JSON metadata describing the window and grid.
    pub fn metadata(&self, epsilon_reg: Option<f64>, gamma: Option<f64>) -> serde_json::Value {
        serde_json::json!({
            "geometry": self.grid.geometry,
            "window": [self.grid.x_min, self.grid.x_max()],
            "grid": {"n_x": self.grid.n_x, "n_theta": self.grid.n_theta, "dx": self.grid.dx, "dtheta": self.grid.dtheta()},
            "n_modes": self.modes.n_modes,
            "epsilon_reg": epsilon_reg,
            "gamma": gamma,
        })
    }

    /// Little-endian binary encoding; `from_bytes` restores it bit for bit.
    pub fn to_bytes(&self) -> Vec<u8> {
        let g = &self.grid;
        let mut out = Vec::with_capacity(64 + 8 * (g.n_x + 2 * self.modes.re.len() + self.total.len()));
        out.extend_from_slice(FIELD_MAGIC);
        out.push(match g.geometry {
            Geometry::Cylinder => 0,
            Geometry::Strip => 1,
        });
        for v in [g.n_x as u64, g.n_theta as u64, self.modes.n_modes as u64] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in [g.x_min, g.dx] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.h1_profile.iter().chain(&self.modes.re).chain(&self.modes.im).chain(&self.total) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<CylinderField> {
        let bad = || Error::Format("truncated or malformed field encoding".into());
        if bytes.len() < FIELD_MAGIC.len() + 1 + 40 || &bytes[..FIELD_MAGIC.len()] != FIELD_MAGIC {
            return Err(bad());
        }
        let mut pos = FIELD_MAGIC.len();
        let geometry = match bytes[pos] {
            0 => Geometry::Cylinder,
            1 => Geometry::Strip,
            _ => return Err(bad()),
        };
        pos += 1;
        let word = |pos: &mut usize| -> Result<[u8; 8]> {
            let w: [u8; 8] = bytes.get(*pos..*pos + 8).ok_or_else(bad)?.try_into().unwrap();
            *pos += 8;
            Ok(w)
        };
        let n_x = u64::from_le_bytes(word(&mut pos)?) as usize;
        let n_theta = u64::from_le_bytes(word(&mut pos)?) as usize;
        let n_modes = u64::from_le_bytes(word(&mut pos)?) as usize;
        let x_min = f64::from_le_bytes(word(&mut pos)?);
        let dx = f64::from_le_bytes(word(&mut pos)?);
        let need = n_x + 2 * n_modes * n_x + n_x * n_theta;
        if bytes.len() != pos + 8 * need {
            return Err(bad());
        }
        let mut read = |k: usize| -> Result<Vec<f64>> { (0..k).map(|_| word(&mut pos).map(f64::from_le_bytes)).collect() };
        let h1_profile = read(n_x)?;
        let re = read(n_modes * n_x)?;
        let im = read(n_modes * n_x)?;
        let total = read(n_x * n_theta)?;
        Ok(CylinderField {
            grid: FieldGrid::new(geometry, x_min, dx, n_x, n_theta)?,
            h1_profile,
            modes: LateralModes { n_modes, re, im },
            total,
        })
    }
}

const FIELD_MAGIC: &[u8] = b"LQGFIELD1";

/// Sample the lateral part on `grid`: each mode is an exact stationary
/// Ornstein–Uhlenbeck recursion in x.
pub fn sample_h2<R: Rng + ?Sized>(grid: &FieldGrid, n_modes: usize, rng: &mut R) -> Result<CylinderField> {
    if n_modes < 1 {
        return Err(Error::domain("need at least one mode"));
    }
    let mut modes = LateralModes::zeros(n_modes, grid.n_x);
    let complex = grid.geometry == Geometry::Cylinder;
    for n in 1..=n_modes {
        let var = 1.0 / (2.0 * n as f64);
        // per real component: the complex coefficient splits its variance in two
        let sd = if complex { (var / 2.0).sqrt() } else { var.sqrt() };
        let rho = (-(n as f64) * grid.dx).exp();
        let innov = sd * (1.0 - rho * rho).sqrt();
        let base = (n - 1) * grid.n_x;
        let mut a = sd * normal(rng);
        let mut b = if complex { sd * normal(rng) } else { 0.0 };
        for i in 0..grid.n_x {
            if i > 0 {
                a = rho * a + innov * normal(rng);
                if complex {
                    b = rho * b + innov * normal(rng);
                }
            }
            modes.re[base + i] = a;
            modes.im[base + i] = b;
        }
    }
    CylinderField::from_parts(*grid, vec![0.0; grid.n_x], modes)
}

/// Lateral part on a cylinder window.
pub fn sample_h2_cylinder<R: Rng + ?Sized>(x_min: f64, x_max: f64, n_x: usize, n_theta: usize, n_modes: usize, rng: &mut R) -> Result<CylinderField> {
    if !(x_max > x_min) || n_x < 2 {
        return Err(Error::domain("need x_max > x_min and n_x >= 2"));
    }
    let grid = FieldGrid::new(Geometry::Cylinder, x_min, (x_max - x_min) / (n_x - 1) as f64, n_x, n_theta)?;
    sample_h2(&grid, n_modes, rng)
}

/// Bilinear circle-average stencil: offsets (di, dj) with weights summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CircleStencil {
    pub radius: f64,
    pub taps: Vec<(i64, i64, f64)>,
}

pub const CIRCLE_POINTS: usize = 64;

impl CircleStencil {
    /// Average over `CIRCLE_POINTS` points at distance `radius` around
    /// (x, θ_center), where the center sits `theta_offset` cells above a grid row.
    pub fn new(grid: &FieldGrid, radius: f64, theta_offset: f64) -> Self {
        let dth = grid.dtheta();
        let mut acc: BTreeMap<(i64, i64), f64> = BTreeMap::new();
        let w0 = 1.0 / CIRCLE_POINTS as f64;
        for k in 0..CIRCLE_POINTS {
            let phi = 2.0 * PI * k as f64 / CIRCLE_POINTS as f64;
            let fx = radius * phi.cos() / grid.dx;
            let fy = radius * phi.sin() / dth + theta_offset;
            let (ix, iy) = (fx.floor(), fy.floor());
            let (tx, ty) = (fx - ix, fy - iy);
            for (ddx, ddy, w) in [
                (0, 0, (1.0 - tx) * (1.0 - ty)),
                (1, 0, tx * (1.0 - ty)),
                (0, 1, (1.0 - tx) * ty),
                (1, 1, tx * ty),
            ] {
                if w != 0.0 {
                    *acc.entry((ix as i64 + ddx, iy as i64 + ddy)).or_insert(0.0) += w0 * w;
                }
            }
        }
        Self {
            radius,
            taps: acc.into_iter().map(|((a, b), w)| (a, b, w)).collect(),
        }
    }

    /// Circle average of `values` around grid node (i, j).
    #[inline]
    pub fn apply(&self, grid: &FieldGrid, values: &[f64], i: usize, j: usize) -> f64 {
        let mut s = 0.0;
        for &(di, dj, w) in &self.taps {
            let ii = grid.clamp_x(i as i64 + di);
            let jj = grid.fold_theta(j as i64 + dj);
            s += w * values[grid.idx(ii, jj)];
        }
        s
    }
}

/// Regularized area masses per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumMeasureGrid {
    pub grid: FieldGrid,
    pub cell_mass: Vec<f64>,
    pub epsilon_reg: f64,
    pub gamma: f64,
}

impl QuantumMeasureGrid {
    pub fn total(&self) -> f64 {
        self.cell_mass.iter().sum()
    }

    /// Mass of all cells with x index in [i0, i1].
    pub fn mass_in_columns(&self, i0: usize, i1: usize) -> f64 {
        let nt = self.grid.n_theta;
        self.cell_mass[i0 * nt..(i1 + 1) * nt].iter().sum()
    }

    /// Mass per x column.
    pub fn column_masses(&self) -> Vec<f64> {
        self.cell_mass.chunks(self.grid.n_theta).map(|c| c.iter().sum()).collect()
    }

    /// Mass per θ row.
    pub fn theta_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.n_theta];
        for (k, m) in self.cell_mass.iter().enumerate() {
            out[k % self.grid.n_theta] += m;
        }
        out
    }

    pub fn mass_of(&self, cells: &[usize]) -> f64 {
        cells.iter().map(|&c| self.cell_mass[c]).sum()
    }

    /// Interquartile x-width of the cumulative column mass (shift invariant).
    pub fn interquartile_width(&self) -> f64 {
        let cols = self.column_masses();
        let total: f64 = cols.iter().sum();
        let q = |level: f64| {
            let target = level * total;
            let mut acc = 0.0;
            for (i, &m) in cols.iter().enumerate() {
                if acc + m >= target {
                    let frac = if m > 0.0 { (target - acc) / m } else { 0.0 };
                    return self.grid.x(i) - 0.5 * self.grid.dx + frac * self.grid.dx;
                }
                acc += m;
            }
            self.grid.x_max()
        };
        q(0.75) - q(0.25)
    }
}

fn check_epsilon(grid: &FieldGrid, epsilon_reg: f64) -> Result<()> {
    let cell = grid.dx.max(grid.dtheta());
    if !(epsilon_reg >= 2.0 * cell * (1.0 - 1e-12)) {
        return Err(Error::domain(format!(
            "epsilon_reg {epsilon_reg} is below two grid cells ({})",
            2.0 * cell
        )));
    }
    Ok(())
}

/// Circle averages of a field at every node.
pub fn circle_average(field: &CylinderField, epsilon_reg: f64) -> Vec<f64> {
    let grid = &field.grid;
    let offset = 0.0;
    let stencil = CircleStencil::new(grid, epsilon_reg, offset);
    let mut out = vec![0.0; grid.len()];
    for i in 0..grid.n_x {
        for j in 0..grid.n_theta {
            out[grid.idx(i, j)] = stencil.apply(grid, &field.total, i, j);
        }
    }
    out
}

/// ε^{γ²/2} e^{γ h_ε} · cell area, with h_ε the circle average at radius ε.
pub fn compute_area_measure(field: &CylinderField, epsilon_reg: f64, params: &GammaParams) -> Result<QuantumMeasureGrid> {
    check_epsilon(&field.grid, epsilon_reg)?;
    let g = params.gamma;
    let pref = epsilon_reg.powf(g * g / 2.0) * field.grid.cell_area();
    let cell_mass = circle_average(field, epsilon_reg).into_iter().map(|h| pref * (g * h).exp()).collect();
    Ok(QuantumMeasureGrid {
        grid: field.grid,
        cell_mass,
        epsilon_reg,
        gamma: g,
    })
}

/// Which boundary line of a strip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StripEdge {
    Lower,
    Upper,
}

/// Regularized boundary masses ε^{γ²/4} e^{(γ/2) h_ε} dx along both strip edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMeasure {
    pub grid: FieldGrid,
    /// Masses along θ = 0, one per x node.
    pub lower: Vec<f64>,
    /// Masses along θ = π.
    pub upper: Vec<f64>,
    pub epsilon_reg: f64,
}

impl BoundaryMeasure {
    pub fn total(&self) -> f64 {
        self.lower.iter().chain(&self.upper).sum()
    }

    /// Boundary point sampled from the measure: (x, edge).
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, StripEdge) {
        let target = rng.random::<f64>() * self.total();
        let mut acc = 0.0;
        for (edge, masses) in [(StripEdge::Lower, &self.lower), (StripEdge::Upper, &self.upper)] {
            for (i, &m) in masses.iter().enumerate() {
                acc += m;
                if acc >= target {
                    return (self.grid.x(i), edge);
                }
            }
        }
        (self.grid.x_max(), StripEdge::Upper)
    }
}

/// Boundary measure of a strip field; the semicircle average is a full circle
/// average on the reflected field.
pub fn compute_boundary_measure(field: &CylinderField, epsilon_reg: f64, params: &GammaParams) -> Result<BoundaryMeasure> {
    if field.grid.geometry != Geometry::Strip {
        return Err(Error::domain("boundary measure is defined for strip fields"));
    }
    check_epsilon(&field.grid, epsilon_reg)?;
    let grid = &field.grid;
    let g = params.gamma;
    let pref = epsilon_reg.powf(g * g / 4.0) * grid.dx;
    // boundary θ = 0 sits half a cell below row 0; θ = π half a cell above the last row
    let lower_st = CircleStencil::new(grid, epsilon_reg, -0.5);
    let upper_st = CircleStencil::new(grid, epsilon_reg, 0.5);
    let top = grid.n_theta - 1;
    let lower = (0..grid.n_x)
        .map(|i| pref * (0.5 * g * lower_st.apply(grid, &field.total, i, 0)).exp())
        .collect();
    let upper = (0..grid.n_x)
        .map(|i| pref * (0.5 * g * upper_st.apply(grid, &field.total, i, top)).exp())
        .collect();
    Ok(BoundaryMeasure {
        grid: *grid,
        lower,
        upper,
        epsilon_reg,
    })
}

/// Conformal maps used by the coordinate-change check (u = x + iθ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ConformalMap {
    Identity,
    /// u ↦ u + c (real c).
    Translation { c: f64 },
    /// u ↦ −log(e^{−u} − e^{−z}).
    PsiZ { z_re: f64, z_im: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct C64 {
    re: f64,
    im: f64,
}

impl C64 {
    fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }
    fn exp(self) -> Self {
        let r = self.re.exp();
        Self::new(r * self.im.cos(), r * self.im.sin())
    }
    fn ln(self) -> Self {
        Self::new(self.re.hypot(self.im).ln(), self.im.atan2(self.re))
    }
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.im - o.im)
    }
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.im + o.im)
    }
    fn neg(self) -> Self {
        Self::new(-self.re, -self.im)
    }
    fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }
}

impl ConformalMap {
    /// φ(u) and |φ′(u)|.
    pub fn eval(&self, x: f64, theta: f64) -> (f64, f64, f64) {
        match *self {
            ConformalMap::Identity => (x, theta, 1.0),
            ConformalMap::Translation { c } => (x + c, theta, 1.0),
            ConformalMap::PsiZ { z_re, z_im } => {
                let u = C64::new(x, theta);
                let z = C64::new(z_re, z_im);
                let w = u.neg().exp().sub(z.neg().exp()).ln().neg();
                // φ′(u) = 1/(1 − e^{u−z})
                let d = 1.0 / C64::new(1.0, 0.0).sub(u.sub(z).exp()).abs();
                (w.re, w.im.rem_euclid(2.0 * PI), d)
            }
        }
    }

    /// φ^{-1}(w).
    pub fn inverse(&self, x: f64, theta: f64) -> (f64, f64) {
        match *self {
            ConformalMap::Identity => (x, theta),
            ConformalMap::Translation { c } => (x - c, theta),
            ConformalMap::PsiZ { z_re, z_im } => {
                let v = C64::new(x, theta);
                let z = C64::new(z_re, z_im);
                let u = v.neg().exp().add(z.neg().exp()).ln().neg();
                (u.re, u.im.rem_euclid(2.0 * PI))
            }
        }
    }
}

/// Rectangle [x0, x1] × [θ0, θ1] in cylinder coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestRegion {
    pub x0: f64,
    pub x1: f64,
    pub theta0: f64,
    pub theta1: f64,
}

impl TestRegion {
    pub fn annulus(x0: f64, x1: f64) -> Self {
        Self {
            x0,
            x1,
            theta0: 0.0,
            theta1: 2.0 * PI,
        }
    }

    fn contains(&self, x: f64, theta: f64) -> bool {
        x >= self.x0 && x <= self.x1 && theta >= self.theta0 && theta < self.theta1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinateChangeReport {
    pub map: ConformalMap,
    /// μ_h(A) for h = h̃∘φ + Q log|φ′| on the domain grid.
    pub pulled_back_mass: f64,
    /// μ_h̃(φ(A)) on the target grid.
    pub image_mass: f64,
    pub relative_discrepancy: f64,
}

fn bilinear(field: &CylinderField, x: f64, theta: f64) -> f64 {
    let g = &field.grid;
    let fx = ((x - g.x_min) / g.dx).clamp(0.0, (g.n_x - 1) as f64);
    let fy = match g.geometry {
        Geometry::Cylinder => theta / g.dtheta(),
        Geometry::Strip => theta / g.dtheta() - 0.5,
    };
    let (ix, iy) = (fx.floor(), fy.floor());
    let (tx, ty) = (fx - ix, fy - iy);
    let i0 = g.clamp_x(ix as i64);
    let i1 = g.clamp_x(ix as i64 + 1);
    let j0 = g.fold_theta(iy as i64);
    let j1 = g.fold_theta(iy as i64 + 1);
    let v = |i, j| field.total[g.idx(i, j)];
    (1.0 - tx) * ((1.0 - ty) * v(i0, j0) + ty * v(i0, j1)) + tx * ((1.0 - ty) * v(i1, j0) + ty * v(i1, j1))
}

/// Compare μ_h(A) with μ_h̃(φ(A)) where h = h̃∘φ + Q log|φ′|.
///
/// Both measures are computed by the same regularization on the same grid;
/// A and φ(A) are unions of cells selected by their centers.
pub fn coordinate_change_check(field: &CylinderField, map: ConformalMap, region: TestRegion, epsilon_reg: f64, params: &GammaParams) -> Result<CoordinateChangeReport> {
    let grid = &field.grid;
    if grid.geometry != Geometry::Cylinder {
        return Err(Error::domain("coordinate changes are checked on cylinder fields"));
    }
    if let ConformalMap::PsiZ { z_re, z_im } = map {
        let margin = 2.0 * epsilon_reg;
        let near_x = z_re >= region.x0 - margin && z_re <= region.x1 + margin;
        if near_x {
            let _ = z_im;
            return Err(Error::domain("test region touches the singularity of psi_z"));
        }
    }
    let reach = epsilon_reg + grid.dx;
    let inside = |x: f64| x >= grid.x_min + reach && x <= grid.x_max() - reach;
    if !inside(region.x0) || !inside(region.x1) {
        return Err(Error::domain("test region must stay one regularization radius inside the window"));
    }
    let mut pulled = vec![0.0; grid.len()];
    for i in 0..grid.n_x {
        for j in 0..grid.n_theta {
            let (wx, wt, d) = map.eval(grid.x(i), grid.theta(j));
            pulled[grid.idx(i, j)] = bilinear(field, wx, wt) + params.q_charge * d.ln();
        }
    }
    let h = CylinderField {
        total: pulled,
        ..field.clone()
    };
    let mu_h = compute_area_measure(&h, epsilon_reg, params)?;
    let mu_t = compute_area_measure(field, epsilon_reg, params)?;
    let mut a = 0.0;
    let mut b = 0.0;
    for i in 0..grid.n_x {
        for j in 0..grid.n_theta {
            let (x, t) = (grid.x(i), grid.theta(j));
            if region.contains(x, t) {
                a += mu_h.cell_mass[grid.idx(i, j)];
            }
            let (ux, ut) = map.inverse(x, t);
            if region.contains(ux, ut) {
                b += mu_t.cell_mass[grid.idx(i, j)];
            }
        }
    }
    Ok(CoordinateChangeReport {
        map,
        pulled_back_mass: a,
        image_mass: b,
        relative_discrepancy: (a - b).abs() / b.max(f64::MIN_POSITIVE),
    })
}

/// One row of a distortion table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionRow {
    pub w: (f64, f64),
    pub displacement: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    pub rows: Vec<DistortionRow>,
    /// max displacement · e^{Re w} over the probes.
    pub fitted_constant: f64,
    pub all_within_bound: bool,
}

/// Displacement |F_z(w) − w| of the hull-removal map F_z(w) = log(e^w − e^z)
/// against the bound 2e^{Re z}·e^{−Re w}, valid once Re w ≥ Re z + ln 2.
pub fn distortion_bound_check(z_anchor: (f64, f64), probe_points: &[(f64, f64)]) -> Result<DistortionReport> {
    let z = C64::new(z_anchor.0, z_anchor.1);
    let mut rows = Vec::with_capacity(probe_points.len());
    let mut k: f64 = 0.0;
    let mut ok = true;
    for &(x, t) in probe_points {
        if x < z_anchor.0 + 2f64.ln() {
            return Err(Error::domain(format!("probe ({x}, {t}) is not far enough right of the anchor")));
        }
        let w = C64::new(x, t);
        let f = w.exp().sub(z.exp()).ln();
        let mut diff = f.sub(w);
        diff.im = (diff.im + PI).rem_euclid(2.0 * PI) - PI;
        let disp = diff.abs();
        let bound = 2.0 * (z_anchor.0 - x).exp();
        k = k.max(disp * x.exp());
        ok &= disp <= bound;
        rows.push(DistortionRow {
            w: (x, t),
            displacement: disp,
            bound,
        });
    }
    Ok(DistortionReport {
        rows,
        fitted_constant: k,
        all_within_bound: ok,
    })
}

/// |ψ_z(w) − w| for ψ_z(u) = −log(e^{−u} − e^{−z}).
pub fn psi_z_displacement(z: (f64, f64), w: (f64, f64)) -> f64 {
    let (x, t, _) = ConformalMap::PsiZ { z_re: z.0, z_im: z.1 }.eval(w.0, w.1);
    let dt = (t - w.1 + PI).rem_euclid(2.0 * PI) - PI;
    (x - w.0).hypot(dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::{prop_assert, proptest};

    fn cyl(n_x: usize) -> FieldGrid {
        FieldGrid::new(Geometry::Cylinder, 0.0, 2.0 * PI / 16.0, n_x, 16).unwrap()
    }

    #[test]
    fn lateral_part_has_zero_line_means() {
        let mut rng = seeded(1);
        for geometry in [Geometry::Cylinder, Geometry::Strip] {
            let grid = FieldGrid::new(geometry, -3.0, 0.2, 40, 16).unwrap();
            let f = sample_h2(&grid, 7, &mut rng).unwrap();
            assert!(f.lateral_line_means().iter().all(|m| m.abs() < 1e-10));
        }
    }

    #[test]
    fn mode_variance_and_decorrelation() {
        let mut rng = seeded(2);
        let grid = FieldGrid::new(Geometry::Cylinder, 0.0, 0.25, 5, 16).unwrap();
        let reps = 10_000;
        let n_modes = 3;
        let mut second = vec![0.0; n_modes];
        let mut cross = vec![0.0; n_modes];
        for _ in 0..reps {
            let f = sample_h2(&grid, n_modes, &mut rng).unwrap();
            for n in 1..=n_modes {
                let (a0, b0) = f.modes.coefficient(n, 0, 5);
                let (a1, b1) = f.modes.coefficient(n, 4, 5);
                second[n - 1] += a0 * a0 + b0 * b0;
                cross[n - 1] += a0 * a1 + b0 * b1;
            }
        }
        for n in 1..=n_modes {
            let var = 1.0 / (2.0 * n as f64);
            let m = second[n - 1] / reps as f64;
            // |c|² is var·Exp(1) for a circular Gaussian: sd var/√reps
            assert!((m - var).abs() < 3.0 * var / (reps as f64).sqrt(), "n={n} m={m}");
            let corr = cross[n - 1] / second[n - 1];
            let expect = (-(n as f64)).exp();
            assert!((corr - expect).abs() < 3.0 * (1.0 - expect * expect) / (reps as f64).sqrt() + 1e-3, "n={n} corr={corr}");
        }
    }

    #[test]
    fn strip_modes_are_real_with_neumann_variance() {
        let mut rng = seeded(3);
        let grid = FieldGrid::new(Geometry::Strip, 0.0, 0.25, 3, 8).unwrap();
        let reps = 10_000;
        let mut s = 0.0;
        for _ in 0..reps {
            let f = sample_h2(&grid, 1, &mut rng).unwrap();
            assert!(f.modes.im.iter().all(|&v| v == 0.0));
            s += f.modes.re[0].powi(2);
        }
        let m = s / reps as f64;
        assert!((m - 0.5).abs() < 3.0 * 0.5 * 2f64.sqrt() / (reps as f64).sqrt());
    }

    #[test]
    fn zero_field_area_and_constant_shift() {
        let p = GammaParams::pure();
        let grid = cyl(20);
        let f = CylinderField::from_parts(grid, vec![0.0; 20], LateralModes::zeros(3, 20)).unwrap();
        let eps = 2.0 * grid.dx;
        let m = compute_area_measure(&f, eps, &p).unwrap();
        let expect = eps.powf(p.gamma * p.gamma / 2.0) * grid.cell_area() * grid.len() as f64;
        assert!((m.total() - expect).abs() < 1e-12 * expect);
        let m2 = compute_area_measure(&f.shifted(0.7), eps, &p).unwrap();
        for (a, b) in m.cell_mass.iter().zip(&m2.cell_mass) {
            assert!((b / a - (p.gamma * 0.7).exp()).abs() < 1e-12);
        }
        assert!(compute_area_measure(&f, grid.dx, &p).is_err());
    }

    #[test]
    fn rotational_symmetry_without_lateral_part() {
        let p = GammaParams::pure();
        let grid = cyl(30);
        let profile: Vec<f64> = (0..30).map(|i| -((i as f64 - 15.0) * 0.2).powi(2)).collect();
        let f = CylinderField::from_parts(grid, profile, LateralModes::zeros(2, 30)).unwrap();
        let m = compute_area_measure(&f, 2.0 * grid.dx, &p).unwrap();
        let marg = m.theta_marginal();
        let mean = marg.iter().sum::<f64>() / marg.len() as f64;
        assert!(marg.iter().all(|v| ((v - mean) / mean).abs() < 1e-12));
    }

    #[test]
    fn additivity_of_cell_masses() {
        let p = GammaParams::pure();
        let mut rng = seeded(4);
        let f = sample_h2(&cyl(12), 5, &mut rng).unwrap();
        let m = compute_area_measure(&f, 0.8, &p).unwrap();
        let all: Vec<usize> = (0..m.cell_mass.len()).collect();
        let (a, b) = all.split_at(70);
        assert!((m.mass_of(a) + m.mass_of(b) - m.mass_of(&all)).abs() <= 1e-12 * m.mass_of(&all));
        assert!(m.cell_mass.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn dirichlet_orthogonality_of_profile_and_modes() {
        let mut rng = seeded(5);
        let grid = cyl(40);
        let f = sample_h2(&grid, 4, &mut rng).unwrap();
        let profile: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        for n in 1..=4 {
            // gradient inner product of h1(x) with Re cₙ(x)·2cos(nθ) on the grid
            let mut ip = 0.0;
            for i in 0..39 {
                let d1 = (profile[i + 1] - profile[i]) / grid.dx;
                let (a0, _) = f.modes.coefficient(n, i, 40);
                let (a1, _) = f.modes.coefficient(n, i + 1, 40);
                let d2 = (a1 - a0) / grid.dx;
                for j in 0..16 {
                    ip += d1 * d2 * 2.0 * (n as f64 * grid.theta(j)).cos() * grid.cell_area();
                }
            }
            assert!((ip / (2.0 * PI)).abs() < 1e-8);
        }
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let mut rng = seeded(6);
        let f = sample_h2(&FieldGrid::new(Geometry::Strip, -1.25, 0.3, 9, 8).unwrap(), 3, &mut rng).unwrap();
        let g = CylinderField::from_bytes(&f.to_bytes()).unwrap();
        assert_eq!(f.to_bytes(), g.to_bytes());
        assert_eq!(f, g);
        assert!(CylinderField::from_bytes(&f.to_bytes()[..40]).is_err());
    }

    #[test]
    fn identity_and_translation_maps() {
        let p = GammaParams::pure();
        let mut rng = seeded(7);
        let grid = cyl(60);
        let f = sample_h2(&grid, 7, &mut rng).unwrap();
        let eps = 2.0 * grid.dx;
        let r = coordinate_change_check(&f, ConformalMap::Identity, TestRegion::annulus(5.0, 15.0), eps, &p).unwrap();
        assert!(r.relative_discrepancy <= 1e-10);
        let c = 4.0 * grid.dx;
        let t = coordinate_change_check(&f, ConformalMap::Translation { c }, TestRegion::annulus(5.0, 15.0), eps, &p).unwrap();
        assert!(t.relative_discrepancy <= 1e-8, "{t:?}");
    }

    #[test]
    fn psi_z_far_field() {
        let p = GammaParams::pure();
        let mut rng = seeded(8);
        let grid = cyl(100);
        let f = sample_h2(&grid, 7, &mut rng).unwrap();
        let eps = 2.0 * grid.dx;
        let map = ConformalMap::PsiZ { z_re: 35.0, z_im: 1.0 };
        let r = coordinate_change_check(&f, map, TestRegion::annulus(3.0, 12.0), eps, &p).unwrap();
        assert!(r.relative_discrepancy < 0.1, "{r:?}");
        let bad = coordinate_change_check(&f, map, TestRegion::annulus(30.0, 36.0), eps, &p);
        assert!(matches!(bad, Err(Error::Domain(_))));
    }

    #[test]
    fn psi_z_inverse_round_trip() {
        let map = ConformalMap::PsiZ { z_re: 3.0, z_im: 0.5 };
        for &(x, t) in &[(-2.0, 0.3), (0.5, 4.0), (-6.0, 6.0)] {
            let (wx, wt, _) = map.eval(x, t);
            let (ux, ut) = map.inverse(wx, wt);
            assert!((ux - x).abs() < 1e-10 && (ut - t).abs() < 1e-10);
        }
    }

    #[test]
    fn distortion_decays() {
        let probes: Vec<(f64, f64)> = (0..30).map(|k| (1.0 + 0.5 * k as f64, 0.7)).collect();
        let r = distortion_bound_check((0.0, 2.0), &probes).unwrap();
        assert!(r.all_within_bound);
        assert!(r.rows.windows(2).all(|w| w[1].displacement < w[0].displacement));
        let far = distortion_bound_check((0.0, 0.0), &[(20.0, 0.0)]).unwrap();
        assert!(far.rows[0].displacement < 1e-6);
        // psi_z closed form: left of z the displacement decays like e^{Re w − Re z}
        for x in [-4.0, -8.0, -12.0] {
            let d = psi_z_displacement((0.0, 1.0), (x, 0.3));
            assert!(d <= 2.0 * f64::exp(x));
        }
    }

    proptest! {
        #[test]
        fn shift_multiplies_masses(c in -3.0f64..3.0, seed in 0u64..50) {
            let p = GammaParams::pure();
            let mut rng = seeded(seed);
            let f = sample_h2(&cyl(10), 3, &mut rng).unwrap();
            let a = compute_area_measure(&f, 0.8, &p).unwrap();
            let b = compute_area_measure(&f.shifted(c), 0.8, &p).unwrap();
            for (x, y) in a.cell_mass.iter().zip(&b.cell_mass) {
                prop_assert!((y / x / (p.gamma * c).exp() - 1.0).abs() < 1e-12);
            }
        }
    }
}
