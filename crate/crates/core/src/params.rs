//! Coupled LQG / SLE constants and the field-shift scaling rules.
//!
//! Everything downstream reads its constants from [`GammaParams`]; the values
//! are computed once at construction and never mutated.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// γ for which the sphere is pure √(8/3)-LQG and quantum natural time exists.
pub const GAMMA_PURE: f64 = 1.632_993_161_855_452; // sqrt(8/3)

/// Relative tolerance used to decide whether a γ equals √(8/3).
pub const PURE_GAMMA_TOL: f64 = 1e-12;

/// Coupled constants attached to a choice of γ ∈ (0, 2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub gamma: f64,
    /// κ = γ²
    pub kappa: f64,
    /// κ' = 16/γ²
    pub kappa_prime: f64,
    /// Q = 2/γ + γ/2
    pub q_charge: f64,
    /// Correlation of the left/right boundary length Brownian motions, −cos(πγ²/4).
    pub bm_correlation: f64,
}

impl GammaParams {
    pub fn new(gamma: f64) -> Result<Self> {
        make_params(gamma)
    }

    /// γ = √(8/3).
    pub fn pure() -> Self {
        make_params(GAMMA_PURE).expect("sqrt(8/3) is in range")
    }

    pub fn is_pure(&self) -> bool {
        ((self.gamma - GAMMA_PURE) / GAMMA_PURE).abs() <= PURE_GAMMA_TOL
    }

    /// Drift Q − γ of the field's line-average process away from a γ-singularity.
    pub fn cone_drift(&self) -> f64 {
        self.q_charge - self.gamma
    }

    pub fn dimensions(&self) -> BesselDimensions {
        BesselDimensions::new(self)
    }
}

/// Build the parameter set; rejects γ outside (0, 2).
pub fn make_params(gamma: f64) -> Result<GammaParams> {
    if !(gamma > 0.0 && gamma < 2.0) {
        return Err(Error::domain(format!("gamma must lie in (0,2), got {gamma}")));
    }
    let g2 = gamma * gamma;
    Ok(GammaParams {
        gamma,
        kappa: g2,
        kappa_prime: 16.0 / g2,
        q_charge: 2.0 / gamma + gamma / 2.0,
        bm_correlation: -(PI * g2 / 4.0).cos(),
    })
}

/// Bessel dimensions driving the line-average part of the sphere, disk and cone fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BesselDimensions {
    gamma: f64,
    q_charge: f64,
    /// 4 − 8/γ²
    pub sphere_dim: f64,
    /// 3 − 4/γ²
    pub disk_dim: f64,
}

impl BesselDimensions {
    pub fn new(params: &GammaParams) -> Self {
        let g2 = params.gamma * params.gamma;
        Self {
            gamma: params.gamma,
            q_charge: params.q_charge,
            sphere_dim: 4.0 - 8.0 / g2,
            disk_dim: 3.0 - 4.0 / g2,
        }
    }

    /// 2 + (4/γ)(Q − α) for an α-quantum cone.
    pub fn cone_dim(&self, alpha_weight: f64) -> f64 {
        2.0 + (4.0 / self.gamma) * (self.q_charge - alpha_weight)
    }
}

/// Which measured quantity a field shift is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantityKind {
    Area,
    Boundary,
    NaturalTime,
}

/// A quantity tagged with its kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tagged {
    pub kind: QuantityKind,
    pub value: f64,
}

impl Tagged {
    pub fn area(value: f64) -> Self {
        Self { kind: QuantityKind::Area, value }
    }
    pub fn boundary(value: f64) -> Self {
        Self { kind: QuantityKind::Boundary, value }
    }
    pub fn natural_time(value: f64) -> Self {
        Self { kind: QuantityKind::NaturalTime, value }
    }
}

/// Adding the constant `shift_c` to the field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingAction {
    pub shift_c: f64,
}

impl ScalingAction {
    pub fn new(shift_c: f64) -> Self {
        Self { shift_c }
    }

    /// The shift that multiplies area by `factor`.
    pub fn for_area_factor(params: &GammaParams, factor: f64) -> Self {
        Self::new(factor.ln() / params.gamma)
    }

    /// The shift that multiplies boundary length by `factor`.
    pub fn for_boundary_factor(params: &GammaParams, factor: f64) -> Self {
        Self::new(2.0 * factor.ln() / params.gamma)
    }

    pub fn area_factor(&self, params: &GammaParams) -> f64 {
        (params.gamma * self.shift_c).exp()
    }

    pub fn boundary_factor(&self, params: &GammaParams) -> f64 {
        (params.gamma * self.shift_c / 2.0).exp()
    }

    /// e^{3γC/4}; only meaningful for γ = √(8/3).
    pub fn natural_time_factor(&self, params: &GammaParams) -> Result<f64> {
        if !params.is_pure() {
            return Err(Error::Unsupported(format!(
                "quantum natural time scaling requires gamma = sqrt(8/3), got {}",
                params.gamma
            )));
        }
        Ok((0.75 * params.gamma * self.shift_c).exp())
    }

    pub fn compose(&self, other: &ScalingAction) -> ScalingAction {
        ScalingAction::new(self.shift_c + other.shift_c)
    }
}

/// Multiply `quantity` by the factor the field shift induces on its kind.
pub fn apply_scaling(action: &ScalingAction, quantity: Tagged, params: &GammaParams) -> Result<f64> {
    let factor = match quantity.kind {
        QuantityKind::Area => action.area_factor(params),
        QuantityKind::Boundary => action.boundary_factor(params),
        QuantityKind::NaturalTime => action.natural_time_factor(params)?,
    };
    Ok(quantity.value * factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn correlation_vanishes_at_sqrt2() {
        let p = make_params(2f64.sqrt()).unwrap();
        assert!(p.bm_correlation.abs() < 1e-15);
    }

    #[test]
    fn pure_gravity_constants() {
        let p = GammaParams::pure();
        assert!((p.bm_correlation - 0.5).abs() < 1e-14);
        assert!((p.q_charge - 5.0 / 6f64.sqrt()).abs() < 1e-14);
        assert!((p.q_charge - 2.041_241).abs() < 1e-6);
        assert!((p.dimensions().sphere_dim - 1.0).abs() < 1e-14);
        assert!((p.dimensions().disk_dim - 1.5).abs() < 1e-14);
        assert!(p.is_pure());
    }

    #[test]
    fn q_tends_to_two_near_critical() {
        let p = make_params(2.0 - 1e-9).unwrap();
        assert!(p.q_charge >= 2.0 - 1e-15 && p.q_charge - 2.0 < 1e-8);
    }

    #[test]
    fn rejects_out_of_range_gamma() {
        for g in [0.0, -1.0, 2.0, 2.5, f64::NAN] {
            assert!(matches!(make_params(g), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn identity_action() {
        let p = make_params(1.3).unwrap();
        let a = ScalingAction::new(0.0);
        assert_eq!(apply_scaling(&a, Tagged::area(3.5), &p).unwrap(), 3.5);
        assert_eq!(apply_scaling(&a, Tagged::boundary(0.25), &p).unwrap(), 0.25);
    }

    #[test]
    fn pure_gravity_area_and_time_scaling() {
        let p = GammaParams::pure();
        let a = ScalingAction::new(2.0 / p.gamma * 2f64.ln());
        let area = apply_scaling(&a, Tagged::area(1.0), &p).unwrap();
        assert!((area - 4.0).abs() < 1e-12);
        let t = apply_scaling(&a, Tagged::natural_time(1.0), &p).unwrap();
        assert!((t - 2f64.powf(1.5)).abs() < 1e-12);
    }

    #[test]
    fn natural_time_needs_pure_gamma() {
        let p = make_params(1.5).unwrap();
        let a = ScalingAction::new(0.3);
        assert!(matches!(
            apply_scaling(&a, Tagged::natural_time(1.0), &p),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn cone_dimension_exceeds_two_below_q() {
        let p = make_params(1.1).unwrap();
        let d = p.dimensions();
        assert!(d.cone_dim(p.gamma) > 2.0);
        assert!((d.cone_dim(p.q_charge) - 2.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn invariants_hold(g in 1e-3f64..1.999) {
            let p = make_params(g).unwrap();
            prop_assert!(p.kappa > 0.0 && p.kappa < 4.0);
            prop_assert!(p.kappa_prime > 4.0);
            prop_assert!(p.q_charge > 2.0);
            prop_assert!(((p.kappa * p.kappa_prime) - 16.0).abs() < 1e-12);
            prop_assert!(p.bm_correlation > -1.0 && p.bm_correlation < 1.0);
            prop_assert_eq!(p.bm_correlation >= -1e-15, g >= 2f64.sqrt() - 1e-12);
        }

        #[test]
        fn area_group_law(g in 0.05f64..1.99, c1 in -3.0f64..3.0, c2 in -3.0f64..3.0) {
            let p = make_params(g).unwrap();
            let a1 = ScalingAction::new(c1);
            let a2 = ScalingAction::new(c2);
            let two_step = apply_scaling(&a1, Tagged::area(apply_scaling(&a2, Tagged::area(1.0), &p).unwrap()), &p).unwrap();
            let one_step = apply_scaling(&a1.compose(&a2), Tagged::area(1.0), &p).unwrap();
            prop_assert!(((two_step - one_step) / one_step).abs() < 1e-12);
        }

        #[test]
        fn boundary_squared_is_area(g in 0.05f64..1.99, c in -4.0f64..4.0) {
            let p = make_params(g).unwrap();
            let a = ScalingAction::new(c);
            let b = a.boundary_factor(&p);
            prop_assert!(((b * b - a.area_factor(&p)) / a.area_factor(&p)).abs() < 1e-12);
        }

        #[test]
        fn natural_time_matches_three_halves_stable_scaling(c in -4.0f64..4.0) {
            let p = GammaParams::pure();
            let a = ScalingAction::new(c);
            let t = a.natural_time_factor(&p).unwrap();
            let b = a.boundary_factor(&p);
            prop_assert!(((t.powi(4) - b.powi(6)) / b.powi(6)).abs() < 1e-11);
        }
    }
}
