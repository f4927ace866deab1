//! Beam-electron kinematics in natural units (ħ = mₑ = 1).
//!
//! Energies are angular frequencies. The relativistic variant is measured
//! from the rest energy, so `energy(0) == 0` for both variants and an energy
//! loss `Δω` means the same thing regardless of the dispersion used.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Offset subtracted from the relativistic dispersion, in units of mₑc².
pub const REST_ENERGY_OFFSET: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum KinematicsModel {
    Nonrelativistic,
    /// `c` is the speed of light in natural units (mₑc² = c²).
    Relativistic { c: f64 },
}

/// Final state of the beam electron after losing a given energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Channel {
    /// Propagating with the given wave-vector magnitude.
    Open(f64),
    /// Exactly at the excitation threshold; the final wave vector is zero.
    Threshold,
    /// Evanescent with decay constant κ.
    Closed(f64),
}

impl Channel {
    /// |q_j| for open channels, κ for closed ones, 0 at threshold.
    pub fn magnitude(&self) -> f64 {
        match *self {
            Channel::Open(q) | Channel::Closed(q) => q,
            Channel::Threshold => 0.0,
        }
    }

    pub fn is_open(&self) -> bool {
        matches!(self, Channel::Open(_))
    }
}

impl KinematicsModel {
    pub fn relativistic(c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::invalid("c", format!("must be finite and positive, got {c}")));
        }
        Ok(KinematicsModel::Relativistic { c })
    }

    /// Kinetic energy ε_q.
    pub fn energy(&self, q: f64) -> f64 {
        match *self {
            KinematicsModel::Nonrelativistic => 0.5 * q * q,
            // c(√(c²+q²) − c) written without cancellation
            KinematicsModel::Relativistic { c } => c * q * q / ((c * c + q * q).sqrt() + c),
        }
    }

    /// Group velocity dε/dq.
    pub fn group_velocity(&self, q: f64) -> f64 {
        match *self {
            KinematicsModel::Nonrelativistic => q,
            KinematicsModel::Relativistic { c } => c * q / (c * c + q * q).sqrt(),
        }
    }

    /// Wave-vector magnitude with kinetic energy `e` (`e >= 0`).
    fn wavevector_at(&self, e: f64) -> f64 {
        match *self {
            KinematicsModel::Nonrelativistic => (2.0 * e).sqrt(),
            KinematicsModel::Relativistic { c } => (2.0 * e + e * e / (c * c)).sqrt(),
        }
    }

    /// Final wave vector after the electron at `q` loses `loss`.
    pub fn scattered_wavevector(&self, q: f64, loss: f64) -> Result<Channel> {
        if !(loss >= 0.0) {
            return Err(Error::invalid("loss", format!("must be nonnegative, got {loss}")));
        }
        if !(q > 0.0) {
            return Err(Error::invalid("q", format!("must be positive, got {q}")));
        }
        let remaining = self.energy(q) - loss;
        if remaining > 0.0 {
            return Ok(Channel::Open(self.wavevector_at(remaining)));
        }
        if remaining == 0.0 {
            return Ok(Channel::Threshold);
        }
        let deficit = -remaining;
        let kappa = match *self {
            KinematicsModel::Nonrelativistic => (2.0 * deficit).sqrt(),
            KinematicsModel::Relativistic { c } => {
                let k2 = 2.0 * deficit - deficit * deficit / (c * c);
                k2.max(0.0).sqrt()
            }
        };
        Ok(Channel::Closed(kappa))
    }

    /// Smallest incident wave vector able to excite a level at `frequency`.
    pub fn threshold_wavevector(&self, frequency: f64) -> Result<f64> {
        if !(frequency >= 0.0) {
            return Err(Error::invalid(
                "frequency",
                format!("must be nonnegative, got {frequency}"),
            ));
        }
        Ok(self.wavevector_at(frequency))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const NR: KinematicsModel = KinematicsModel::Nonrelativistic;

    #[test]
    fn nonrelativistic_values() {
        assert_eq!(NR.energy(2.0), 2.0);
        assert_eq!(NR.energy(0.0), 0.0);
        assert_eq!(NR.group_velocity(1.5), 1.5);
        assert_eq!(NR.group_velocity(0.0), 0.0);
    }

    #[test]
    fn relativistic_values() {
        let m = KinematicsModel::relativistic(137.0).unwrap();
        // binomial series of c(√(c²+q²) − c) and cq/√(c²+q²) at q = 2
        let c2 = 137.0f64 * 137.0;
        let e_series = 2.0 - 2.0 / c2 + 4.0 / (c2 * c2);
        assert_relative_eq!(m.energy(2.0), e_series, max_relative = 1e-12);
        assert!((m.energy(2.0) - 1.99989).abs() < 1e-5);
        let v_series = 2.0 * (1.0 - 2.0 / c2 + 6.0 / (c2 * c2) - 20.0 / (c2 * c2 * c2));
        assert_relative_eq!(m.group_velocity(2.0), v_series, max_relative = 1e-12);
        assert!((m.group_velocity(2.0) - 1.99979).abs() < 1e-5);
        assert!(KinematicsModel::relativistic(0.0).is_err());
        assert!(KinematicsModel::relativistic(-1.0).is_err());
    }

    #[test]
    fn scattered_channels() {
        match NR.scattered_wavevector(2.0, 1.0).unwrap() {
            Channel::Open(q) => assert_relative_eq!(q, 2f64.sqrt(), max_relative = 1e-15),
            other => panic!("{other:?}"),
        }
        assert_eq!(NR.scattered_wavevector(2.0, 2.0).unwrap(), Channel::Threshold);
        assert_eq!(NR.scattered_wavevector(1.0, 1.0).unwrap(), Channel::Closed(1.0));
        assert!(NR.scattered_wavevector(1.0, -0.1).is_err());
        assert!(NR.scattered_wavevector(0.0, 0.1).is_err());
    }

    #[test]
    fn threshold_is_consistent() {
        for model in [NR, KinematicsModel::Relativistic { c: 3.0 }] {
            for w in [0.01, 0.5, 1.0, 7.0] {
                let q = model.threshold_wavevector(w).unwrap();
                assert_relative_eq!(model.energy(q), w, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn relativistic_approaches_nonrelativistic() {
        for c in [50.0, 137.0, 1000.0] {
            let m = KinematicsModel::Relativistic { c };
            for i in 1..=40 {
                let q = 0.1 * c * i as f64 / 40.0;
                let loss = 0.3 * NR.energy(q);
                let rel = m.scattered_wavevector(q, loss).unwrap().magnitude();
                let nonrel = NR.scattered_wavevector(q, loss).unwrap().magnitude();
                assert!((rel - nonrel).abs() <= 10.0 * (q / c).powi(2) * q);
            }
        }
    }

    #[test]
    fn group_velocity_is_derivative() {
        let m = KinematicsModel::Relativistic { c: 2.5 };
        for q in [0.1, 1.0, 4.0, -3.0] {
            let d = 1e-5;
            let fd = (m.energy(q + d) - m.energy(q - d)) / (2.0 * d);
            assert_relative_eq!(m.group_velocity(q), fd, max_relative = 1e-8);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn energy_conservation(q in 0.01f64..50.0, frac in 0.0f64..0.999, c in 1.0f64..500.0) {
                for model in [NR, KinematicsModel::Relativistic { c }] {
                    let loss = frac * model.energy(q);
                    let qj = model.scattered_wavevector(q, loss).unwrap().magnitude();
                    let lhs = model.energy(qj) + loss;
                    prop_assert!((lhs - model.energy(q)).abs() <= 1e-12 * model.energy(q));
                }
            }

            #[test]
            fn energy_even_and_increasing(q in 0.0f64..100.0, dq in 1e-6f64..10.0, c in 0.5f64..500.0) {
                for model in [NR, KinematicsModel::Relativistic { c }] {
                    prop_assert_eq!(model.energy(q), model.energy(-q));
                    prop_assert!(model.energy(q + dq) > model.energy(q));
                }
            }
        }
    }
}
