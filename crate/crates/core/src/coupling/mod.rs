//! Electron–sample coupling coefficients.
//!
//! A transition is characterised by its angular symmetry `(l, m, σ)`; the
//! momentum-space coupling is `A (sign q)^σ |q|^l K_m(|q| R_e)` as a function
//! of the wave-vector transfer `q`, and the real-space coupling is its
//! Fourier transform `∫ dq G(q) e^{iqz}`, available in closed form for the
//! five supported presets. The impact parameter lies along the x axis.

pub mod bessel;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{Channel, KinematicsModel};

pub use bessel::{bessel_k, bessel_k01, bessel_k_scaled};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Angular symmetry of a dipolar or quadrupolar transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TransitionSymmetry {
    #[serde(rename = "p_x")]
    Px,
    #[serde(rename = "p_z")]
    Pz,
    #[serde(rename = "d_z2")]
    Dz2,
    #[serde(rename = "d_xz")]
    Dxz,
    #[serde(rename = "d_x2y2")]
    Dx2y2,
}

impl TransitionSymmetry {
    pub const ALL: [TransitionSymmetry; 5] = [
        TransitionSymmetry::Px,
        TransitionSymmetry::Pz,
        TransitionSymmetry::Dz2,
        TransitionSymmetry::Dxz,
        TransitionSymmetry::Dx2y2,
    ];

    /// `(l, m, σ)`.
    pub fn quantum_numbers(self) -> (u32, u32, u32) {
        match self {
            TransitionSymmetry::Px => (1, 1, 0),
            TransitionSymmetry::Pz => (1, 0, 1),
            TransitionSymmetry::Dz2 => (2, 0, 0),
            TransitionSymmetry::Dxz => (2, 1, 1),
            TransitionSymmetry::Dx2y2 => (2, 2, 0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TransitionSymmetry::Px => "p_x",
            TransitionSymmetry::Pz => "p_z",
            TransitionSymmetry::Dz2 => "d_z2",
            TransitionSymmetry::Dxz => "d_xz",
            TransitionSymmetry::Dx2y2 => "d_x2y2",
        }
    }

    /// Odd couplings (σ = 1) change sign with q and with z.
    pub fn is_odd(self) -> bool {
        self.quantum_numbers().2 == 1
    }

    /// Unit-amplitude kernel `(sign q)^σ |q|^l K_m(|q|R)`, continuous at `q = 0`.
    pub fn kernel(self, q: f64, impact: f64) -> f64 {
        let (l, m, sigma) = self.quantum_numbers();
        let aq = q.abs();
        if aq == 0.0 {
            return zero_transfer_limit(l, m, impact);
        }
        let x = aq * impact;
        // |q|^l K_m(x) via the scaled Bessel function so large x underflows cleanly
        let value = match bessel_k_scaled(m, x) {
            Ok(k) => aq.powi(l as i32) * k * (-x).exp(),
            Err(_) => 0.0,
        };
        if sigma == 1 && q < 0.0 {
            -value
        } else {
            value
        }
    }

    /// Unit-amplitude real-space coupling, analytically continued to complex z.
    pub fn realspace(self, z: Complex64, impact: f64) -> Complex64 {
        let r = impact;
        let w = z * z + r * r;
        let w_half = w.sqrt();
        let w32 = w * w_half;
        let w52 = w * w32;
        match self {
            TransitionSymmetry::Px => PI * r / w32,
            TransitionSymmetry::Pz => I * PI * z / w32,
            TransitionSymmetry::Dz2 => PI * (r * r - 2.0 * z * z) / w52,
            TransitionSymmetry::Dxz => 3.0 * I * PI * z * r / w52,
            TransitionSymmetry::Dx2y2 => 3.0 * PI * r * r / w52,
        }
    }
}

/// `lim_{q→0} |q|^l K_m(|q|R)`.
fn zero_transfer_limit(l: u32, m: u32, impact: f64) -> f64 {
    if m == 0 || l > m {
        return 0.0;
    }
    if l < m {
        return f64::INFINITY;
    }
    // K_m(x) ~ (m−1)!/2 (2/x)^m
    let fact: f64 = (1..m).map(f64::from).product();
    fact * 2f64.powi(m as i32 - 1) / impact.powi(m as i32)
}

impl fmt::Display for TransitionSymmetry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransitionSymmetry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, '_' | '-' | '^' | ' '))
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "px" => Ok(TransitionSymmetry::Px),
            "pz" => Ok(TransitionSymmetry::Pz),
            "dz2" => Ok(TransitionSymmetry::Dz2),
            "dxz" => Ok(TransitionSymmetry::Dxz),
            "dx2y2" => Ok(TransitionSymmetry::Dx2y2),
            _ => Err(Error::invalid(
                "symmetry",
                format!("unknown symmetry `{s}` (expected p_x, p_z, d_z2, d_xz or d_x2y2)"),
            )),
        }
    }
}

/// Coupling for a `0 → 1` transition of given symmetry at impact parameter
/// `R_e`, with amplitude `A` absorbing the multipole strength and all
/// constant prefactors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingModel {
    pub symmetry: TransitionSymmetry,
    pub impact_parameter: f64,
    pub amplitude: f64,
    pub backscatter_in_normalization: bool,
}

impl CouplingModel {
    pub fn new(symmetry: TransitionSymmetry, impact_parameter: f64, amplitude: f64) -> Result<Self> {
        if !(impact_parameter.is_finite() && impact_parameter > 0.0) {
            return Err(Error::invalid(
                "impact_parameter",
                format!("must be finite and positive, got {impact_parameter}"),
            ));
        }
        if !(amplitude.is_finite() && amplitude > 0.0) {
            return Err(Error::invalid(
                "amplitude",
                format!("must be finite and positive, got {amplitude}"),
            ));
        }
        Ok(CouplingModel {
            symmetry,
            impact_parameter,
            amplitude,
            backscatter_in_normalization: false,
        })
    }

    /// Coupling with the amplitude fixed by a target first-order probability
    /// in the nonrecoil limit (no backscattering term).
    pub fn normalized_nonrecoil(
        symmetry: TransitionSymmetry,
        impact_parameter: f64,
        velocity: f64,
        frequency: f64,
        target_p1lin: f64,
    ) -> Result<Self> {
        let a = normalize_amplitude_nonrecoil(symmetry, impact_parameter, velocity, frequency, target_p1lin)?;
        CouplingModel::new(symmetry, impact_parameter, a)
    }

    /// Momentum-space coupling at wave-vector transfer `q ≠ 0`.
    pub fn momentum_coupling(&self, q: f64) -> Result<f64> {
        if q == 0.0 || !q.is_finite() {
            return Err(Error::invalid("q", format!("momentum coupling needs a finite nonzero transfer, got {q}")));
        }
        Ok(self.amplitude * self.symmetry.kernel(q, self.impact_parameter))
    }

    /// Real-space coupling `G_10(z)`.
    pub fn realspace_coupling(&self, z: f64) -> Complex64 {
        self.amplitude * self.symmetry.realspace(Complex64::new(z, 0.0), self.impact_parameter)
    }
}

/// Momentum-space coupling `G_{q1,q'0}` as a function of the transfer `q − q'`.
///
/// Implementations must be continuous at zero transfer, which the recoil
/// solver needs on the diagonal of its coupling matrices.
pub trait TransferKernel: Send + Sync {
    fn at_transfer(&self, dq: f64) -> Complex64;

    /// Transfer over which the kernel decays, if it does.
    fn transfer_width(&self) -> Option<f64> {
        None
    }
}

/// Real-space coupling `G_10(z)` continued analytically off the real axis
/// (singularities only on the imaginary axis).
pub trait RealSpaceCoupling: Send + Sync {
    fn at(&self, z: Complex64) -> Complex64;

    /// Length beyond which the coupling is in its algebraic tail.
    fn length_scale(&self) -> f64;
}

impl TransferKernel for CouplingModel {
    fn at_transfer(&self, dq: f64) -> Complex64 {
        Complex64::new(self.amplitude * self.symmetry.kernel(dq, self.impact_parameter), 0.0)
    }

    fn transfer_width(&self) -> Option<f64> {
        Some(1.0 / self.impact_parameter)
    }
}

impl RealSpaceCoupling for CouplingModel {
    fn at(&self, z: Complex64) -> Complex64 {
        self.amplitude * self.symmetry.realspace(z, self.impact_parameter)
    }

    fn length_scale(&self) -> f64 {
        self.impact_parameter
    }
}

/// q-independent coupling of a point-like sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointLikeCoupling {
    pub strength: f64,
}

impl PointLikeCoupling {
    pub fn new(strength: f64) -> Result<Self> {
        if !(strength.is_finite() && strength > 0.0) {
            return Err(Error::invalid("strength", format!("must be finite and positive, got {strength}")));
        }
        Ok(PointLikeCoupling { strength })
    }

    /// Strength reproducing `target` as first-order probability at incident
    /// wave vector `q0` for a level at `frequency` (nonrelativistic).
    pub fn normalized(q0: f64, frequency: f64, target: f64, include_backscatter: bool) -> Result<Self> {
        let (v0, v1) = open_velocities(q0, frequency)?;
        let channels = if include_backscatter { 2.0 } else { 1.0 };
        check_target(target)?;
        PointLikeCoupling::new((target * v0 * v1 / channels).sqrt() / (2.0 * PI))
    }
}

impl TransferKernel for PointLikeCoupling {
    fn at_transfer(&self, _dq: f64) -> Complex64 {
        Complex64::new(self.strength, 0.0)
    }
}

/// Any coupling multiplied by a global phase `e^{iφ}`.
#[derive(Debug, Clone, Copy)]
pub struct Phased<K> {
    pub inner: K,
    pub phase: Complex64,
}

impl<K> Phased<K> {
    pub fn new(inner: K, angle: f64) -> Self {
        Phased {
            inner,
            phase: Complex64::from_polar(1.0, angle),
        }
    }
}

impl<K: TransferKernel> TransferKernel for Phased<K> {
    fn at_transfer(&self, dq: f64) -> Complex64 {
        self.phase * self.inner.at_transfer(dq)
    }

    fn transfer_width(&self) -> Option<f64> {
        self.inner.transfer_width()
    }
}

impl<K: RealSpaceCoupling> RealSpaceCoupling for Phased<K> {
    fn at(&self, z: Complex64) -> Complex64 {
        self.phase * self.inner.at(z)
    }

    fn length_scale(&self) -> f64 {
        self.inner.length_scale()
    }
}

/// Term `(l, m)` of the multipolar expansion per unit multipole moment:
/// `(−i)^{l+m} e^{imφ} / √((l−m)!(l+m)!) · q^l K_|m|(|q|R)`, times `(−1)^m`
/// for negative transfer.
pub fn multipole_coupling(l: i32, m: i32, q: f64, impact: f64, azimuth: f64) -> Result<Complex64> {
    if l < 1 {
        return Err(Error::invalid("l", format!("must be at least 1, got {l}")));
    }
    if m.abs() > l {
        return Err(Error::invalid("m", format!("|m| must not exceed l = {l}, got {m}")));
    }
    if q == 0.0 || !q.is_finite() {
        return Err(Error::invalid("q", format!("transfer must be finite and nonzero, got {q}")));
    }
    if !(impact > 0.0) {
        return Err(Error::invalid("impact_parameter", format!("must be positive, got {impact}")));
    }
    let factorial = |n: i32| -> f64 { (1..=n).map(f64::from).product() };
    let norm = (factorial(l - m) * factorial(l + m)).sqrt();
    let phase = (-I).powi(l + m) * Complex64::from_polar(1.0, m as f64 * azimuth);
    let radial = q.powi(l) * bessel_k(m.unsigned_abs(), q.abs() * impact)?;
    let branch = if q < 0.0 && m % 2 != 0 { -1.0 } else { 1.0 };
    Ok(phase * radial * branch / norm)
}

fn check_target(target: f64) -> Result<()> {
    if !(target.is_finite() && target > 0.0) {
        return Err(Error::invalid("p1lin", format!("target probability must be positive, got {target}")));
    }
    Ok(())
}

fn open_velocities(q0: f64, frequency: f64) -> Result<(f64, f64)> {
    let kin = KinematicsModel::Nonrelativistic;
    match kin.scattered_wavevector(q0, frequency)? {
        Channel::Open(q1) => Ok((kin.group_velocity(q0), kin.group_velocity(q1))),
        _ => Err(Error::BelowThreshold {
            energy: kin.energy(q0),
            threshold: frequency,
        }),
    }
}

/// Amplitude `A` for which the first-order probability
/// `4π²/(v₀v₁) (|G(q₁−q₀)|² + |G(−q₁−q₀)|²)` equals `target`, with the
/// backward term only when `include_backscatter`.
pub fn normalize_amplitude(
    symmetry: TransitionSymmetry,
    impact: f64,
    q0: f64,
    frequency: f64,
    target: f64,
    include_backscatter: bool,
) -> Result<f64> {
    check_target(target)?;
    if !(impact > 0.0) {
        return Err(Error::invalid("impact_parameter", format!("must be positive, got {impact}")));
    }
    let (v0, v1) = open_velocities(q0, frequency)?;
    let q1 = v1;
    let forward = symmetry.kernel(q1 - q0, impact);
    let mut sum = forward * forward;
    if include_backscatter {
        let backward = symmetry.kernel(-q1 - q0, impact);
        sum += backward * backward;
    }
    if !(sum > 0.0) {
        return Err(Error::invalid("impact_parameter", "coupling vanishes at the transfer wave vector"));
    }
    Ok((target * v0 * v1 / sum).sqrt() / (2.0 * PI))
}

/// Nonrecoil amplitude: `A = v √target / (2π |G(ω/v)|)`.
pub fn normalize_amplitude_nonrecoil(
    symmetry: TransitionSymmetry,
    impact: f64,
    velocity: f64,
    frequency: f64,
    target: f64,
) -> Result<f64> {
    check_target(target)?;
    if !(velocity > 0.0) {
        return Err(Error::invalid("velocity", format!("must be positive, got {velocity}")));
    }
    if !(frequency > 0.0) {
        return Err(Error::invalid("frequency", format!("must be positive, got {frequency}")));
    }
    if !(impact > 0.0) {
        return Err(Error::invalid("impact_parameter", format!("must be positive, got {impact}")));
    }
    let g = symmetry.kernel(frequency / velocity, impact).abs();
    if !(g > 0.0) {
        return Err(Error::invalid("impact_parameter", "coupling underflows at the transfer wave vector"));
    }
    Ok(velocity * target.sqrt() / (2.0 * PI * g))
}

/// First-order nonrecoil probability `(4π²/v²)|G(ω/v)|²`.
pub fn linear_probability_nonrecoil(model: &CouplingModel, velocity: f64, frequency: f64) -> f64 {
    let g = model.amplitude * model.symmetry.kernel(frequency / velocity, model.impact_parameter);
    4.0 * PI * PI * g * g / (velocity * velocity)
}

/// Boson-ladder element `G_{jj'}` built from the `0 → 1` element `base`.
pub fn boson_ladder_coupling(j: usize, jp: usize, base: Complex64) -> Complex64 {
    if jp + 1 == j {
        (j as f64).sqrt() * base
    } else if j + 1 == jp {
        ((j + 1) as f64).sqrt() * base.conj()
    } else {
        Complex64::new(0.0, 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const K0_1: f64 = 0.421_024_438_240_708_3;
    const K1_1: f64 = 0.601_907_230_197_234_6;
    const K2_1: f64 = 1.624_838_898_635_177_5;

    fn unit(symmetry: TransitionSymmetry) -> CouplingModel {
        CouplingModel::new(symmetry, 1.0, 1.0).unwrap()
    }

    #[test]
    fn quantum_number_table() {
        use TransitionSymmetry::*;
        assert_eq!(Px.quantum_numbers(), (1, 1, 0));
        assert_eq!(Pz.quantum_numbers(), (1, 0, 1));
        assert_eq!(Dz2.quantum_numbers(), (2, 0, 0));
        assert_eq!(Dxz.quantum_numbers(), (2, 1, 1));
        assert_eq!(Dx2y2.quantum_numbers(), (2, 2, 0));
        for s in TransitionSymmetry::ALL {
            let (l, m, _) = s.quantum_numbers();
            assert!(m <= l);
            assert_eq!(s.name().parse::<TransitionSymmetry>().unwrap(), s);
        }
        assert_eq!("d_{x2-y2}".parse::<TransitionSymmetry>().ok(), None);
        assert_eq!("dx2-y2".parse::<TransitionSymmetry>().unwrap(), Dx2y2);
        assert!("f_xyz".parse::<TransitionSymmetry>().is_err());
    }

    #[test]
    fn momentum_examples() {
        use TransitionSymmetry::*;
        assert_relative_eq!(unit(Px).momentum_coupling(1.0).unwrap(), K1_1, max_relative = 1e-13);
        assert_relative_eq!(unit(Pz).momentum_coupling(-1.0).unwrap(), -K0_1, max_relative = 1e-13);
        assert_relative_eq!(unit(Dx2y2).momentum_coupling(-1.0).unwrap(), K2_1, max_relative = 1e-13);
        assert!(unit(Px).momentum_coupling(0.0).is_err());
    }

    #[test]
    fn realspace_examples() {
        use TransitionSymmetry::*;
        assert_relative_eq!(unit(Px).realspace_coupling(0.0).re, PI, max_relative = 1e-15);
        assert_eq!(unit(Pz).realspace_coupling(0.0).norm(), 0.0);
        let d = unit(Dz2).realspace_coupling(1.0);
        assert_relative_eq!(d.re, -PI / 2f64.powf(2.5), max_relative = 1e-14);
        assert_eq!(d.im, 0.0);
        assert_eq!(unit(Pz).realspace_coupling(0.7).re, 0.0);
        assert_eq!(unit(Dxz).realspace_coupling(0.7).re, 0.0);
    }

    #[test]
    fn parity() {
        for s in TransitionSymmetry::ALL {
            for q in [0.01, 0.3, 1.0, 4.0] {
                let (a, b) = (s.kernel(q, 0.8), s.kernel(-q, 0.8));
                if s.is_odd() {
                    assert_eq!(a, -b);
                } else {
                    assert_eq!(a, b);
                }
                let z = q;
                let m = unit(s);
                let (a, b) = (m.realspace_coupling(z), m.realspace_coupling(-z));
                if s.is_odd() {
                    assert!((a + b).norm() < 1e-15 * a.norm());
                    assert_eq!(a.re, 0.0);
                } else {
                    assert!((a - b).norm() < 1e-15 * a.norm());
                    assert_eq!(a.im, 0.0);
                }
            }
        }
    }

    #[test]
    fn kernel_is_continuous_at_zero() {
        for s in TransitionSymmetry::ALL {
            for r in [0.3, 1.0, 2.5] {
                let at0 = s.kernel(0.0, r);
                let near = s.kernel(1e-7, r);
                assert!((at0 - near).abs() < 1e-5 * (1.0 + at0.abs()), "{s} {r}: {at0} {near}");
            }
        }
    }

    #[test]
    fn large_transfer_underflows_to_zero() {
        assert_eq!(TransitionSymmetry::Px.kernel(1e4, 1.0), 0.0);
        assert!(TransitionSymmetry::Px.kernel(600.0, 1.0) > 0.0);
    }

    #[test]
    fn multipole_sign_rule() {
        for l in 1..=3 {
            for m in -l..=l {
                let pos = multipole_coupling(l, m, 0.8, 1.3, 0.4).unwrap();
                let neg = multipole_coupling(l, m, -0.8, 1.3, 0.4).unwrap();
                // q^l flips with l; the branch factor contributes (−1)^m
                let expected = pos * (-1f64).powi(l) * (-1f64).powi(m);
                assert!((neg - expected).norm() < 1e-14 * pos.norm().max(1e-300));
            }
        }
        assert!(multipole_coupling(0, 0, 1.0, 1.0, 0.0).is_err());
        assert!(multipole_coupling(1, 2, 1.0, 1.0, 0.0).is_err());
        assert!(multipole_coupling(1, 1, 0.0, 1.0, 0.0).is_err());
    }

    /// Real combinations of `Q_{lm}` matching the charge densities of the
    /// presets (and of the two uncoupled quadrupoles), with the
    /// proportionality constants relative to the preset kernels.
    #[test]
    fn multipole_reduces_to_presets() {
        use TransitionSymmetry::*;
        let combo = |l: i32, terms: &[(i32, f64)], q: f64| -> Complex64 {
            terms
                .iter()
                .map(|&(m, c)| c * multipole_coupling(l, m, q, 1.0, 0.0).unwrap())
                .sum()
        };
        // (symmetry, l, Q_lm pattern, constant)
        type Case = (TransitionSymmetry, i32, Vec<(i32, f64)>, Complex64);
        let cases: [Case; 5] = [
            (Px, 1, vec![(-1, 1.0), (1, -1.0)], Complex64::new(2f64.sqrt(), 0.0)),
            (Pz, 1, vec![(0, 1.0)], Complex64::new(0.0, -1.0)),
            (Dz2, 2, vec![(0, 1.0)], Complex64::new(-0.5, 0.0)),
            (Dxz, 2, vec![(-1, 1.0), (1, -1.0)], Complex64::new(0.0, -2.0 / 6f64.sqrt())),
            (Dx2y2, 2, vec![(-2, 1.0), (2, 1.0)], Complex64::new(2.0 / 24f64.sqrt(), 0.0)),
        ];
        for (sym, l, terms, constant) in cases.iter() {
            for q in [-2.0, -0.5, 0.3, 1.0, 3.0] {
                let got = combo(*l, terms, q);
                let want = constant * sym.kernel(q, 1.0);
                assert!((got - want).norm() < 1e-13 * want.norm(), "{sym} q={q}: {got} vs {want}");
            }
        }
        // p_x at q = 1 is proportional to K_1(1), d_z2 to K_0(1)
        assert_relative_eq!(combo(1, &[(-1, 1.0), (1, -1.0)], 1.0).re, 2f64.sqrt() * K1_1, max_relative = 1e-13);
        assert_relative_eq!(combo(2, &[(0, 1.0)], 1.0).re, -0.5 * K0_1, max_relative = 1e-13);
        // d_xy ∝ Y_{2,−2} − Y_{22} and d_yz ∝ Y_{2,−1} + Y_{21} do not couple
        for q in [-1.0, 0.5, 2.0] {
            assert!(combo(2, &[(-2, 1.0), (2, -1.0)], q).norm() < 1e-12);
            assert!(combo(2, &[(-1, 1.0), (1, 1.0)], q).norm() < 1e-12);
        }
    }

    #[test]
    fn normalization_scaling() {
        use TransitionSymmetry::*;
        for s in TransitionSymmetry::ALL {
            let a1 = normalize_amplitude(s, 0.7, 2.0, 1.0, 0.3, false).unwrap();
            let a2 = normalize_amplitude(s, 0.7, 2.0, 1.0, 0.6, false).unwrap();
            assert_relative_eq!(a2 / a1, 2f64.sqrt(), max_relative = 1e-14);
            let with_back = normalize_amplitude(s, 0.7, 2.0, 1.0, 0.3, true).unwrap();
            assert!(with_back <= a1);
        }
        // the defining relation holds
        let (q0, w, target) = (2.0f64, 1.0, 0.45);
        let a = normalize_amplitude(Dxz, 0.4, q0, w, target, true).unwrap();
        let q1 = (q0 * q0 - 2.0 * w).sqrt();
        let gf = a * Dxz.kernel(q1 - q0, 0.4);
        let gb = a * Dxz.kernel(-q1 - q0, 0.4);
        let p = 4.0 * PI * PI * (gf * gf + gb * gb) / (q0 * q1);
        assert_relative_eq!(p, target, max_relative = 1e-12);
        assert!(matches!(
            normalize_amplitude(Px, 1.0, 1.0, 1.0, 0.5, false),
            Err(Error::BelowThreshold { .. })
        ));
        assert!(normalize_amplitude(Px, 1.0, 2.0, 1.0, 0.0, false).is_err());
    }

    #[test]
    fn nonrecoil_normalization_round_trip() {
        for s in TransitionSymmetry::ALL {
            for (r, v, w, t) in [(0.2, 1.0, 1.0, 1.0), (3.0, 2.0, 0.5, 4.0), (0.05, 0.3, 1.7, 1e-3)] {
                let m = CouplingModel::normalized_nonrecoil(s, r, v, w, t).unwrap();
                assert_relative_eq!(linear_probability_nonrecoil(&m, v, w), t, max_relative = 1e-12);
                let a = normalize_amplitude_nonrecoil(s, r, v, w, t).unwrap();
                let expected = v / (2.0 * PI) * t.sqrt() / s.kernel(w / v, r).abs();
                assert_relative_eq!(a, expected, max_relative = 1e-14);
            }
        }
        // linear probability ratio p_x : d_x2y2 at equal amplitude
        let px = CouplingModel::new(TransitionSymmetry::Px, 1.0, 0.37).unwrap();
        let dx = CouplingModel::new(TransitionSymmetry::Dx2y2, 1.0, 0.37).unwrap();
        let ratio = linear_probability_nonrecoil(&px, 1.0, 1.0) / linear_probability_nonrecoil(&dx, 1.0, 1.0);
        assert_relative_eq!(ratio, (K1_1 / K2_1).powi(2), max_relative = 1e-12);
        assert!((ratio - 0.1372).abs() < 1e-4);
    }

    #[test]
    fn pointlike_normalization() {
        let p = PointLikeCoupling::normalized(2.0, 1.0, 2.0, true).unwrap();
        let q1 = 2f64.sqrt();
        let lin = 8.0 * PI * PI * p.strength * p.strength / (2.0 * q1);
        assert_relative_eq!(lin, 2.0, max_relative = 1e-14);
        assert!(PointLikeCoupling::new(0.0).is_err());
    }

    #[test]
    fn ladder_rule() {
        let base = Complex64::new(0.3, -0.4);
        assert_eq!(boson_ladder_coupling(3, 2, base), 3f64.sqrt() * base);
        assert_eq!(boson_ladder_coupling(2, 0, base), Complex64::new(0.0, 0.0));
        assert_eq!(boson_ladder_coupling(0, 1, base), base.conj());
        assert_eq!(boson_ladder_coupling(4, 4, base), Complex64::new(0.0, 0.0));
        for j in 0..6 {
            for jp in 0..6 {
                assert_eq!(boson_ladder_coupling(j, jp, base), boson_ladder_coupling(jp, j, base).conj());
            }
        }
    }
}
