//! Battery prosumers: feasible set, lazy projection and state-of-charge update.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::Load;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StorageSpec {
    /// Energy capacity (p.u.·h).
    pub d_max: f64,
    /// Inverter apparent-power rating (p.u.).
    pub b: f64,
}

impl StorageSpec {
    pub fn new(d_max: f64, b: f64) -> Result<Self> {
        if !(d_max > 0.0 && b > 0.0) {
            return Err(Error::argument(alloc::format!(
                "storage needs positive capacity and inverter rating, got d_max={d_max}, b={b}"
            )));
        }
        Ok(StorageSpec { d_max, b })
    }

    /// Sized from the prosumer's nominal load: `d_max = hours · p̄*`,
    /// `b = factor · |s̄*|`.
    pub fn from_nominal(load: Load, cfg: &DeviceConfig) -> Result<Self> {
        StorageSpec::new(
            cfg.capacity_hours * load.p,
            cfg.inverter_factor * libm::sqrt(load.p * load.p + load.q * load.q),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    pub capacity_hours: f64,
    pub inverter_factor: f64,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        DeviceConfig {
            capacity_hours: 6.0,
            inverter_factor: 1.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StorageFleet {
    /// State of charge per prosumer.
    pub d: Vec<f64>,
    pub specs: Vec<StorageSpec>,
}

/// Projected action with the almost-everywhere derivatives of the map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub value: [f64; 2],
    /// `∂value/∂a`, row `r` = output component.
    pub d_action: [[f64; 2]; 2],
    /// `∂value/∂d`.
    pub d_soc: [f64; 2],
    /// Distance from the raw action to the nearest switching surface of the map.
    pub kink_distance: f64,
}

/// Clip the real part into `[-d, d_max - d]`, then scale radially onto the
/// inverter disc if the pair is still too long.
pub fn project(a: [f64; 2], d: f64, spec: &StorageSpec) -> [f64; 2] {
    project_with_jacobian(a, d, spec).value
}

pub fn project_with_jacobian(a: [f64; 2], d: f64, spec: &StorageSpec) -> Projection {
    let (lo, hi) = (-d, spec.d_max - d);
    // Kinks take the interior branch.
    let (p, dp_da, dp_dd) = if a[0] < lo {
        (lo, 0.0, -1.0)
    } else if a[0] > hi {
        (hi, 0.0, -1.0)
    } else {
        (a[0], 1.0, 0.0)
    };
    let q = a[1];
    let mut kink = (a[0] - lo).abs().min((a[0] - hi).abs());
    let norm = libm::sqrt(p * p + q * q);
    kink = kink.min((norm - spec.b).abs());
    if norm <= spec.b {
        return Projection {
            value: [p, q],
            d_action: [[dp_da, 0.0], [0.0, 1.0]],
            d_soc: [dp_dd, 0.0],
            kink_distance: kink,
        };
    }
    let s = spec.b / norm;
    let (u0, u1) = (p / norm, q / norm);
    // ∂(b c/‖c‖)/∂c = (b/‖c‖)(I − u uᵀ), c = (p, q)
    let jc = [[s * (1.0 - u0 * u0), -s * u0 * u1], [-s * u0 * u1, s * (1.0 - u1 * u1)]];
    Projection {
        value: [s * p, s * q],
        d_action: [[jc[0][0] * dp_da, jc[0][1]], [jc[1][0] * dp_da, jc[1][1]]],
        d_soc: [jc[0][0] * dp_dd, jc[1][0] * dp_dd],
        kink_distance: kink,
    }
}

/// `d' = d + p̃`. Panics if `p̃` left the feasible box, which means the
/// projection was bypassed.
pub fn step_soc(d: f64, p: f64, spec: &StorageSpec) -> f64 {
    let next = d + p;
    let slack = 1e-9 * spec.d_max.max(1.0);
    assert!(
        next >= -slack && next <= spec.d_max + slack,
        "state of charge {next} outside [0, {}] after charging {p} from {d}",
        spec.d_max
    );
    next.clamp(0.0, spec.d_max)
}

/// Per-prosumer instantaneous benefit `u_i(d_i, p̃_i, q̃_i)`.
pub trait Utility: Send + Sync + core::fmt::Debug {
    fn value(&self, agent: usize, d: f64, p: f64, q: f64) -> f64;
    /// `(∂u/∂d, ∂u/∂p̃, ∂u/∂q̃)`.
    fn gradient(&self, agent: usize, d: f64, p: f64, q: f64) -> [f64; 3];
}

/// Pure arbitrage: no intrinsic benefit from device operation.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroUtility;

impl Utility for ZeroUtility {
    fn value(&self, _: usize, _: f64, _: f64, _: f64) -> f64 {
        0.0
    }

    fn gradient(&self, _: usize, _: f64, _: f64, _: f64) -> [f64; 3] {
        [0.0; 3]
    }
}

/// Throughput wear plus a penalty on deviation from a target state of charge:
/// `u = -wear (p̃² + q̃²) - soc_weight (d - soc_target)²`.
#[derive(Clone, Copy, Debug)]
pub struct QuadraticUtility {
    pub wear: f64,
    pub soc_weight: f64,
    pub soc_target: f64,
}

impl Utility for QuadraticUtility {
    fn value(&self, _: usize, d: f64, p: f64, q: f64) -> f64 {
        let e = d - self.soc_target;
        -self.wear * (p * p + q * q) - self.soc_weight * e * e
    }

    fn gradient(&self, _: usize, d: f64, p: f64, q: f64) -> [f64; 3] {
        [
            -2.0 * self.soc_weight * (d - self.soc_target),
            -2.0 * self.wear * p,
            -2.0 * self.wear * q,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SPEC: StorageSpec = StorageSpec { d_max: 4.0, b: 2.0 };

    #[test]
    fn clip_then_scale() {
        assert_eq!(project([5.0, 0.0], 1.0, &SPEC), [2.0, 0.0]);
        assert_eq!(project([0.1, 0.1], 1.0, &SPEC), [0.1, 0.1]);
        assert_eq!(project([-3.0, 1.0], 1.0, &SPEC), [-1.0, 1.0]);
    }

    #[test]
    fn soc_updates() {
        assert_eq!(step_soc(1.0, 0.5, &SPEC), 1.5);
        assert_eq!(step_soc(1.0, -1.0, &SPEC), 0.0);
    }

    #[test]
    #[should_panic]
    fn infeasible_charge_is_a_contract_violation() {
        step_soc(1.0, 3.5, &SPEC);
    }

    #[test]
    fn from_nominal_sizes() {
        let s = StorageSpec::from_nominal(Load { p: 0.3, q: 0.4 }, &DeviceConfig::default()).unwrap();
        assert!((s.d_max - 1.8).abs() < 1e-15);
        assert!((s.b - 0.75).abs() < 1e-15);
        assert!(StorageSpec::from_nominal(Load { p: 0.0, q: 0.0 }, &DeviceConfig::default()).is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let h = 1e-7;
        for &(a, d) in &[([5.0, 0.3], 1.0), ([0.1, 0.2], 1.0), ([1.5, 1.9], 2.0), ([-3.0, 1.0], 0.5), ([0.3, -3.0], 3.5)] {
            let j = project_with_jacobian(a, d, &SPEC);
            for c in 0..2 {
                let mut ap = a;
                let mut am = a;
                ap[c] += h;
                am[c] -= h;
                let (fp, fm) = (project(ap, d, &SPEC), project(am, d, &SPEC));
                for r in 0..2 {
                    let fd = (fp[r] - fm[r]) / (2.0 * h);
                    assert!((fd - j.d_action[r][c]).abs() < 1e-6, "a={a:?} r={r} c={c}");
                }
            }
            let (fp, fm) = (project(a, d + h, &SPEC), project(a, d - h, &SPEC));
            for r in 0..2 {
                assert!(((fp[r] - fm[r]) / (2.0 * h) - j.d_soc[r]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn radial_direction_has_zero_derivative_on_the_disc() {
        let a = [1.0, 3.0];
        let j = project_with_jacobian(a, 2.0, &SPEC);
        let n = (a[0] * a[0] + a[1] * a[1]).sqrt();
        let u = [a[0] / n, a[1] / n];
        for r in 0..2 {
            let dir = j.d_action[r][0] * u[0] + j.d_action[r][1] * u[1];
            assert!(dir.abs() < 1e-15);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn projection_is_feasible_and_idempotent(
            ap in -50.0..50.0f64,
            aq in -50.0..50.0f64,
            frac in 0.0..=1.0f64,
            d_max in 0.01..10.0f64,
            b in 0.01..5.0f64,
        ) {
            let spec = StorageSpec { d_max, b };
            let d = frac * d_max;
            let [p, q] = project([ap, aq], d, &spec);
            let eps = 1e-12;
            prop_assert!(p >= -d - eps && p <= d_max - d + eps);
            prop_assert!(p * p + q * q <= b * b * (1.0 + eps));
            let again = project([p, q], d, &spec);
            prop_assert!((again[0] - p).abs() <= 1e-12 && (again[1] - q).abs() <= 1e-12);
            let next = step_soc(d, p, &spec);
            prop_assert!((0.0..=d_max).contains(&next));
        }
    }
}
