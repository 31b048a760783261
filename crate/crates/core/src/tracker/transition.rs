//! Closed-form path-state recurrence and its Jacobian.
//!
//! With `D1 = c²τa/v` the horizontal range and `D1' = D1 - vT` one block later,
//! `c²τ'² = D1'² + D2²` expands to
//!
//! `R = v²T² + c²τ² - 2c²aτT`, `τ' = √R / c`, `a' = (c²aτ - v²T) / (c √R)`.

use nalgebra::Matrix2;

use crate::error::{Error, Result};
use crate::geometry::{PathState, ScenarioConfig};

/// Kinematic constants the transition needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionModel {
    pub v: f64,
    pub c: f64,
    pub t: f64,
}

impl MotionModel {
    pub fn new(v: f64, c: f64, t: f64) -> Self {
        Self { v, c, t }
    }

    pub fn from_scenario(cfg: &ScenarioConfig) -> Self {
        Self::new(cfg.relative_speed_v, cfg.sound_speed_c, cfg.block_length_t)
    }

    fn radicand(&self, x: &PathState) -> Result<f64> {
        let (v, c, t) = (self.v, self.c, self.t);
        let r = v * v * t * t + c * c * x.delay * x.delay - 2.0 * c * c * x.doppler * x.delay * t;
        if r > 0.0 && r.is_finite() {
            Ok(r)
        } else {
            Err(Error::DegenerateTransition { radicand: r })
        }
    }
}

pub fn predict_state(x: &PathState, m: &MotionModel) -> Result<PathState> {
    let r = m.radicand(x)?;
    let (v, c, t) = (m.v, m.c, m.t);
    let root = r.sqrt();
    Ok(PathState::new(
        root / c,
        (c * c * x.doppler * x.delay - v * v * t) / (c * root),
    ))
}

/// `∂(τ', a') / ∂(τ, a)`.
pub fn transition_jacobian(x: &PathState, m: &MotionModel) -> Result<Matrix2<f64>> {
    let r = m.radicand(x)?;
    let (v, c, t) = (m.v, m.c, m.t);
    let (tau, a) = (x.delay, x.doppler);
    let root = r.sqrt();
    let dr_dtau = 2.0 * c * c * tau - 2.0 * c * c * a * t;
    let dr_da = -2.0 * c * c * tau * t;
    let num = c * c * a * tau - v * v * t;
    let dn_dtau = c * c * a;
    let dn_da = c * c * tau;
    let r32 = r * root;
    let da_dtau = dn_dtau / (c * root) - num * dr_dtau / (2.0 * c * r32);
    let da_da = dn_da / (c * root) - num * dr_da / (2.0 * c * r32);
    Ok(Matrix2::new(
        dr_dtau / (2.0 * c * root),
        dr_da / (2.0 * c * root),
        da_dtau,
        da_da,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{invert_params, path_params, PathSpec};
    use proptest::prelude::*;

    fn simulation() -> (ScenarioConfig, MotionModel) {
        let cfg = ScenarioConfig::default();
        let m = MotionModel::from_scenario(&cfg);
        (cfg, m)
    }

    fn oracle(x: &PathState, cfg: &ScenarioConfig) -> PathState {
        let (d1, d2) = invert_params(x, cfg).unwrap();
        let spec = PathSpec {
            label: 0,
            signature: vec![],
            equivalent_depth: d2,
        };
        path_params(d1 - cfg.relative_speed_v * cfg.block_length_t, &spec, cfg).unwrap()
    }

    #[test]
    fn direct_path_matches_geometry() {
        let (cfg, m) = simulation();
        let x = PathState::new(1.0 / 3.0, -1.0 / 300.0);
        let p = predict_state(&x, &m).unwrap();
        let o = oracle(&x, &cfg);
        assert!((p.delay - o.delay).abs() <= 1e-12 * o.delay);
        assert!((p.doppler - o.doppler).abs() <= 1e-12 * o.doppler.abs());
        assert!((p.delay - 505.0 / 1500.0).abs() < 1e-14);
    }

    #[test]
    fn static_broadside_state_is_fixed() {
        let m = MotionModel::new(0.0, 1500.0, 1.0);
        let x = PathState::new(0.4, 0.0);
        assert_eq!(predict_state(&x, &m).unwrap(), x);
    }

    #[test]
    fn trajectories_stay_in_observed_bands() {
        let (cfg, m) = simulation();
        let snap = crate::geometry::snapshot_at(&cfg, &crate::geometry::enumerate_paths(&cfg), 1).unwrap();
        for p in &snap.paths {
            let mut x = p.state;
            for _ in 0..25 {
                x = predict_state(&x, &m).unwrap();
                assert!((0.33..=0.55).contains(&x.delay));
                assert!((-3.4e-3..=-2.6e-3).contains(&x.doppler));
            }
        }
    }

    #[test]
    fn degenerate_radicand() {
        let m = MotionModel::new(-5.0, 1500.0, 1.0);
        assert!(matches!(
            predict_state(&PathState::new(0.4, 0.5), &m),
            Err(Error::DegenerateTransition { .. })
        ));
    }

    #[test]
    fn jacobian_at_static_broadside() {
        // v = 0 leaves valid a = 0 states fixed, but a perturbation in a
        // still moves τ' to first order: ∂τ'/∂a = -T.
        let m = MotionModel::new(0.0, 1500.0, 1.0);
        let j = transition_jacobian(&PathState::new(0.4, 0.0), &m).unwrap();
        assert!((j - Matrix2::new(1.0, -1.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn jacobian_tends_to_identity_as_block_shrinks() {
        let x = PathState::new(1.0 / 3.0, -1.0 / 300.0);
        for t in [1e-2, 1e-4, 1e-6] {
            let j = transition_jacobian(&x, &MotionModel::new(-5.0, 1500.0, t)).unwrap();
            assert!((j - Matrix2::identity()).norm() < 10.0 * t);
        }
    }

    fn central_difference(x: &PathState, m: &MotionModel) -> Matrix2<f64> {
        let f = |s: PathState| {
            let p = predict_state(&s, m).unwrap();
            nalgebra::Vector2::new(p.delay, p.doppler)
        };
        let mut j = Matrix2::zeros();
        for col in 0..2 {
            let h = 1e-7 * if col == 0 { x.delay } else { x.doppler.abs().max(1e-3) };
            let mut hi = *x;
            let mut lo = *x;
            if col == 0 {
                hi.delay += h;
                lo.delay -= h;
            } else {
                hi.doppler += h;
                lo.doppler -= h;
            }
            let d = (f(hi) - f(lo)) / (2.0 * h);
            j.set_column(col, &d);
        }
        j
    }

    #[test]
    fn jacobian_matches_finite_differences_at_direct_path() {
        let (_, m) = simulation();
        let x = PathState::new(1.0 / 3.0, -1.0 / 300.0);
        let a = transition_jacobian(&x, &m).unwrap();
        let n = central_difference(&x, &m);
        for i in 0..2 {
            for k in 0..2 {
                let scale = a[(i, k)].abs().max(1e-3 * a.norm());
                assert!((a[(i, k)] - n[(i, k)]).abs() <= 1e-5 * scale, "({i},{k}) {} vs {}", a[(i, k)], n[(i, k)]);
            }
        }
    }

    proptest! {
        #[test]
        fn closed_form_matches_geometry(d1 in 100.0f64..2000.0, d2 in 0.0f64..900.0, v in -10.0f64..-0.5) {
            let cfg = ScenarioConfig { relative_speed_v: v, ..Default::default() };
            let spec = PathSpec { label: 0, signature: vec![], equivalent_depth: d2 };
            let x = path_params(d1, &spec, &cfg).unwrap();
            let p = predict_state(&x, &MotionModel::from_scenario(&cfg)).unwrap();
            let o = path_params(d1 - v * cfg.block_length_t, &spec, &cfg).unwrap();
            prop_assert!((p.delay - o.delay).abs() <= 1e-12 * o.delay);
            prop_assert!((p.doppler - o.doppler).abs() <= 1e-12 * o.doppler.abs());
        }
    }
}
