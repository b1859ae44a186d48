//! Parameter and state types for the driven two-level atom.
//!
//! Operators use the basis `(|e>, |g>)` with `sigma_z |e> = |e>`, so that
//! `sigma_- = |g><e|` and `P_+ = sigma_+ sigma_- = |e><e|`. A state is the
//! Bloch vector `x_i = Tr[rho sigma_i]`, i.e. `rho = (1 + x . sigma) / 2`.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix2, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{ConfigError, Error, Result};

/// 2x2 complex operator on the atom.
pub type Op = Matrix2<Complex64>;

/// Tolerance for algebraic identities (channel sum, hermiticity, trace).
pub const ALGEBRAIC_TOL: f64 = 1e-12;
/// Slack for positivity (Bloch norm, eigenvalue sign).
pub const POSITIVITY_TOL: f64 = 1e-9;

const fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Fixed operators of the two-level atom.
pub mod ops {
    use super::*;

    pub fn identity() -> Op {
        Op::identity()
    }

    pub fn sigma_x() -> Op {
        Op::new(c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.))
    }

    pub fn sigma_y() -> Op {
        Op::new(c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.))
    }

    pub fn sigma_z() -> Op {
        Op::new(c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.))
    }

    /// `|g><e|`
    pub fn sigma_minus() -> Op {
        Op::new(c(0., 0.), c(0., 0.), c(1., 0.), c(0., 0.))
    }

    /// `|e><g|`
    pub fn sigma_plus() -> Op {
        Op::new(c(0., 0.), c(1., 0.), c(0., 0.), c(0., 0.))
    }

    /// Excited-state projector `|e><e|`.
    pub fn p_plus() -> Op {
        Op::new(c(1., 0.), c(0., 0.), c(0., 0.), c(0., 0.))
    }

    /// Ground-state projector `|g><g|`.
    pub fn p_minus() -> Op {
        Op::new(c(0., 0.), c(0., 0.), c(0., 0.), c(1., 0.))
    }

    /// `e^{i phi} sigma_- + e^{-i phi} sigma_+ = cos(phi) sigma_x + sin(phi) sigma_y`
    pub fn sigma_phi(phi: f64) -> Op {
        let e = Complex64::from_polar(1.0, phi);
        sigma_minus() * e + sigma_plus() * e.conj()
    }

    pub fn pauli() -> [Op; 3] {
        [sigma_x(), sigma_y(), sigma_z()]
    }
}

pub(crate) fn trace(m: &Op) -> Complex64 {
    m[(0, 0)] + m[(1, 1)]
}

/// Bloch components (Tr[m sigma_x], Tr[m sigma_y], Tr[m sigma_z]) of an
/// arbitrary operator, real parts only.
pub(crate) fn bloch_components(m: &Op) -> Vector3<f64> {
    // Tr[m sx] = m01 + m10, Tr[m sy] = i(m01 - m10), Tr[m sz] = m00 - m11
    let m01 = m[(0, 1)];
    let m10 = m[(1, 0)];
    Vector3::new(
        (m01 + m10).re,
        (Complex64::i() * (m01 - m10)).re,
        (m[(0, 0)] - m[(1, 1)]).re,
    )
}

/// Which homodyne side channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Channel {
    One,
    Two,
}

impl Channel {
    pub fn index(self) -> usize {
        match self {
            Channel::One => 1,
            Channel::Two => 2,
        }
    }
}

impl TryFrom<u8> for Channel {
    type Error = String;

    fn try_from(k: u8) -> std::result::Result<Self, String> {
        match k {
            1 => Ok(Channel::One),
            2 => Ok(Channel::Two),
            other => Err(format!("channel must be 1 or 2, got {other}")),
        }
    }
}

impl From<Channel> for u8 {
    fn from(k: Channel) -> u8 {
        k.index() as u8
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// Parses an angle in radians. Accepts a plain number or a multiple of pi
/// written `pi*<number>` (e.g. `pi*-0.5`), and the bare literal `pi`.
pub fn parse_angle(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    let value = if let Some(rest) = s.strip_prefix("pi*") {
        let f: f64 = rest
            .trim()
            .parse()
            .map_err(|e| format!("bad pi multiple `{rest}`: {e}"))?;
        PI * f
    } else if s == "pi" {
        PI
    } else if s == "-pi" {
        -PI
    } else {
        s.parse().map_err(|e| format!("bad angle `{s}`: {e}"))?
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(format!("angle `{s}` is not finite"))
    }
}

fn deserialize_angle<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(x) => Ok(x),
        Raw::Text(s) => parse_angle(&s).map_err(serde::de::Error::custom),
    }
}

/// All physical and control parameters, in the rotating frame.
///
/// The lab frequencies and the raw feedback gain only enter through
/// `delta_omega` and `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    /// Natural line-width.
    pub gamma: f64,
    /// Dephasing intensity.
    pub k_d: f64,
    /// Thermal occupation.
    pub n_bar: f64,
    /// Rabi frequency.
    pub omega_rabi: f64,
    /// Detuning `omega_0 - omega`.
    pub delta_omega: f64,
    /// Forward (lost) channel fraction `|alpha_0|^2`.
    pub alpha0_sq: f64,
    pub alpha1_sq: f64,
    pub alpha2_sq: f64,
    /// Local-oscillator phase of detector 1.
    #[serde(deserialize_with = "deserialize_angle")]
    pub theta1: f64,
    #[serde(deserialize_with = "deserialize_angle")]
    pub theta2: f64,
    /// Feedback strength.
    pub c: f64,
    /// Feedback phase relative to the driving laser.
    #[serde(deserialize_with = "deserialize_angle")]
    pub phi: f64,
}

impl Default for ControlConfig {
    /// `gamma = 1`, channel splits `(0.1, 0.45, 0.45)`, everything else zero.
    fn default() -> Self {
        ControlConfig {
            gamma: 1.0,
            k_d: 0.0,
            n_bar: 0.0,
            omega_rabi: 0.0,
            delta_omega: 0.0,
            alpha0_sq: 0.1,
            alpha1_sq: 0.45,
            alpha2_sq: 0.45,
            theta1: 0.0,
            theta2: 0.0,
            c: 0.0,
            phi: 0.0,
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        let finite = [
            ("gamma", self.gamma),
            ("k_d", self.k_d),
            ("n_bar", self.n_bar),
            ("omega_rabi", self.omega_rabi),
            ("delta_omega", self.delta_omega),
            ("alpha0_sq", self.alpha0_sq),
            ("alpha1_sq", self.alpha1_sq),
            ("alpha2_sq", self.alpha2_sq),
            ("theta1", self.theta1),
            ("theta2", self.theta2),
            ("c", self.c),
            ("phi", self.phi),
        ];
        for (name, value) in finite {
            if !value.is_finite() {
                return Err(ConfigError::NegativeParameter {
                    name,
                    value,
                    constraint: "finite",
                });
            }
        }
        if self.gamma <= 0.0 {
            return Err(ConfigError::NegativeParameter {
                name: "gamma",
                value: self.gamma,
                constraint: "> 0",
            });
        }
        for (name, value) in [
            ("k_d", self.k_d),
            ("n_bar", self.n_bar),
            ("omega_rabi", self.omega_rabi),
            ("c", self.c),
        ] {
            if value < 0.0 {
                return Err(ConfigError::NegativeParameter {
                    name,
                    value,
                    constraint: ">= 0",
                });
            }
        }
        for (name, value) in [
            ("alpha0_sq", self.alpha0_sq),
            ("alpha1_sq", self.alpha1_sq),
            ("alpha2_sq", self.alpha2_sq),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ConfigError::NegativeParameter {
                    name,
                    value,
                    constraint: "in [0, 1]",
                });
            }
        }
        let sum = self.alpha0_sq + self.alpha1_sq + self.alpha2_sq;
        if (sum - 1.0).abs() > ALGEBRAIC_TOL {
            return Err(ConfigError::ChannelSumError { sum });
        }
        if self.c > 0.0 && self.alpha1_sq == 0.0 {
            return Err(ConfigError::FeedbackWithoutChannel1 { c: self.c });
        }
        Ok(())
    }

    /// `|alpha_k|`
    pub fn alpha_abs(&self, k: Channel) -> f64 {
        match k {
            Channel::One => self.alpha1_sq.sqrt(),
            Channel::Two => self.alpha2_sq.sqrt(),
        }
    }

    pub fn alpha_sq(&self, k: Channel) -> f64 {
        match k {
            Channel::One => self.alpha1_sq,
            Channel::Two => self.alpha2_sq,
        }
    }

    /// Local-oscillator phase `theta_k = arg alpha_k`.
    pub fn theta(&self, k: Channel) -> f64 {
        match k {
            Channel::One => self.theta1,
            Channel::Two => self.theta2,
        }
    }

    /// Complex amplitude `alpha_k = |alpha_k| e^{i theta_k}`.
    pub fn alpha(&self, k: Channel) -> Complex64 {
        Complex64::from_polar(self.alpha_abs(k), self.theta(k))
    }

    /// Feedback-shifted detuning `delta_omega + c gamma |alpha_1| cos(theta_1 - phi)`.
    pub fn delta_omega_c(&self) -> f64 {
        self.delta_omega
            + self.c * self.gamma * self.alpha_abs(Channel::One) * (self.theta1 - self.phi).cos()
    }
}

/// Point in the Bloch ball.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        BlochVector { x, y, z }
    }

    pub fn try_new(x: f64, y: f64, z: f64) -> Result<Self> {
        let v = BlochVector { x, y, z };
        if v.is_valid() {
            Ok(v)
        } else {
            Err(Error::InvalidState(format!(
                "Bloch vector ({x}, {y}, {z}) lies outside the unit ball"
            )))
        }
    }

    pub fn ground() -> Self {
        BlochVector::new(0.0, 0.0, -1.0)
    }

    pub fn norm_sq(&self) -> f64 {
        self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.z.is_finite()
            && self.norm_sq() <= 1.0 + POSITIVITY_TOL
    }

    /// `1 - (x^2 + y^2) - |z|`; negative iff the state is squeezed.
    pub fn atomic_squeezing(&self) -> f64 {
        atomic_squeezing(self)
    }

    /// Rotation by `beta` about the z-axis.
    pub fn rotate_z(&self, beta: f64) -> Self {
        let (s, c) = beta.sin_cos();
        BlochVector::new(self.x * c - self.y * s, self.x * s + self.y * c, self.z)
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        BlochVector::new(v[0], v[1], v[2])
    }

    pub fn to_density(&self) -> DensityMatrix {
        density_from_bloch(self)
    }
}

/// Atomic squeezing parameter `AS = 1 - (x^2 + y^2) - |z|`. Bounded below by -1/4.
pub fn atomic_squeezing(v: &BlochVector) -> f64 {
    1.0 - (v.x * v.x + v.y * v.y) - v.z.abs()
}

/// Normalized state of the atom: Hermitian, unit trace, positive.
///
/// Serializes as its Bloch vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "BlochVector", try_from = "BlochVector")]
pub struct DensityMatrix(Op);

impl From<DensityMatrix> for BlochVector {
    fn from(rho: DensityMatrix) -> Self {
        rho.bloch()
    }
}

impl TryFrom<BlochVector> for DensityMatrix {
    type Error = Error;

    fn try_from(v: BlochVector) -> Result<Self> {
        let v = BlochVector::try_new(v.x, v.y, v.z)?;
        Ok(density_from_bloch(&v))
    }
}

impl DensityMatrix {
    pub fn try_new(m: Op) -> Result<Self> {
        let herm = (m - m.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if herm > ALGEBRAIC_TOL {
            return Err(Error::InvalidState(format!(
                "not Hermitian (defect {herm:e})"
            )));
        }
        let tr = trace(&m);
        if (tr - Complex64::new(1.0, 0.0)).norm() > ALGEBRAIC_TOL {
            return Err(Error::InvalidState(format!("trace {tr} != 1")));
        }
        let rho = DensityMatrix(m);
        let lmin = rho.min_eigenvalue();
        if lmin < -POSITIVITY_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {lmin:e}")));
        }
        Ok(rho)
    }

    /// Wraps a matrix the caller has already normalized.
    pub(crate) fn from_matrix_unchecked(m: Op) -> Self {
        DensityMatrix(m)
    }

    pub fn maximally_mixed() -> Self {
        DensityMatrix(ops::identity() * c(0.5, 0.0))
    }

    pub fn ground() -> Self {
        DensityMatrix(ops::p_minus())
    }

    pub fn excited() -> Self {
        DensityMatrix(ops::p_plus())
    }

    /// Projector onto a normalized pure state `a |e> + b |g>`.
    pub fn pure(a: Complex64, b: Complex64) -> Result<Self> {
        let n = (a.norm_sqr() + b.norm_sqr()).sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::InvalidState("zero state vector".into()));
        }
        let (a, b) = (a / n, b / n);
        Ok(DensityMatrix(Op::new(
            a * a.conj(),
            a * b.conj(),
            b * a.conj(),
            b * b.conj(),
        )))
    }

    pub fn matrix(&self) -> &Op {
        &self.0
    }

    pub fn into_matrix(self) -> Op {
        self.0
    }

    pub fn bloch(&self) -> BlochVector {
        bloch_from_density(self)
    }

    /// Smaller eigenvalue, `(1 - |x|) / 2` for a unit-trace Hermitian matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        let m = &self.0;
        let a = m[(0, 0)].re;
        let d = m[(1, 1)].re;
        let b = m[(0, 1)].norm();
        0.5 * (a + d - ((a - d) * (a - d) + 4.0 * b * b).sqrt())
    }

    /// `Tr[rho^2]`
    pub fn purity(&self) -> f64 {
        0.5 * (1.0 + self.bloch().norm_sq())
    }
}

/// `(Tr[rho sigma_x], Tr[rho sigma_y], Tr[rho sigma_z])`
pub fn bloch_from_density(rho: &DensityMatrix) -> BlochVector {
    BlochVector::from_vector(&bloch_components(&rho.0))
}

/// `(1 + x . sigma) / 2`
pub fn density_from_bloch(v: &BlochVector) -> DensityMatrix {
    DensityMatrix(Op::new(
        c(0.5 * (1.0 + v.z), 0.0),
        c(0.5 * v.x, -0.5 * v.y),
        c(0.5 * v.x, 0.5 * v.y),
        c(0.5 * (1.0 - v.z), 0.0),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn validate_examples() {
        let cfg = ControlConfig::default();
        assert_eq!(cfg.validate(), Ok(()));

        let bad = ControlConfig {
            alpha0_sq: 0.5,
            alpha1_sq: 0.5,
            alpha2_sq: 0.5,
            ..cfg
        };
        assert!(matches!(
            bad.validate(),
            Err(ConfigError::ChannelSumError { .. })
        ));

        let fb = ControlConfig {
            c: 0.3,
            alpha0_sq: 0.55,
            alpha1_sq: 0.0,
            ..cfg
        };
        assert!(matches!(
            fb.validate(),
            Err(ConfigError::FeedbackWithoutChannel1 { .. })
        ));
    }

    #[test]
    fn validate_ranges() {
        let cfg = ControlConfig::default();
        for bad in [
            ControlConfig { gamma: 0.0, ..cfg },
            ControlConfig { k_d: -0.1, ..cfg },
            ControlConfig {
                n_bar: -1e-3,
                ..cfg
            },
            ControlConfig {
                omega_rabi: -1.0,
                ..cfg
            },
            ControlConfig { c: -0.2, ..cfg },
            ControlConfig {
                theta1: f64::NAN,
                ..cfg
            },
            ControlConfig {
                alpha0_sq: -0.1,
                alpha1_sq: 0.65,
                ..cfg
            },
        ] {
            assert!(
                matches!(bad.validate(), Err(ConfigError::NegativeParameter { .. })),
                "{bad:?}"
            );
        }
        // negative detuning is allowed
        assert!(ControlConfig {
            delta_omega: -3.0,
            ..cfg
        }
        .validate()
        .is_ok());
    }

    #[test]
    fn bloch_examples() {
        let v = DensityMatrix::maximally_mixed().bloch();
        assert_eq!(v, BlochVector::new(0.0, 0.0, 0.0));
        assert_eq!(
            DensityMatrix::ground().bloch(),
            BlochVector::new(0.0, 0.0, -1.0)
        );
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let plus = DensityMatrix::pure(c(s, 0.0), c(s, 0.0)).unwrap().bloch();
        assert!(
            close(plus.x, 1.0, 1e-15) && close(plus.y, 0.0, 1e-15) && close(plus.z, 0.0, 1e-15)
        );
    }

    #[test]
    fn squeezing_examples() {
        assert_eq!(atomic_squeezing(&BlochVector::new(0.0, 0.0, 0.0)), 1.0);
        let v = BlochVector::new(3f64.sqrt() / 2.0, 0.0, 0.5);
        assert!(close(atomic_squeezing(&v), -0.25, 1e-15));
        assert_eq!(atomic_squeezing(&BlochVector::ground()), 0.0);
    }

    #[test]
    fn operator_conventions() {
        let sm = ops::sigma_minus();
        assert_eq!(ops::sigma_plus() * sm, ops::p_plus());
        assert_eq!(sm * ops::sigma_plus(), ops::p_minus());
        for phi in [0.0, 0.3, -1.7, 2.9] {
            let lhs = ops::sigma_phi(phi);
            let rhs = ops::sigma_x() * c(phi.cos(), 0.0) + ops::sigma_y() * c(phi.sin(), 0.0);
            assert!((lhs - rhs).norm() < 1e-15);
        }
        // sigma_- lowers |e> to |g>
        let e = nalgebra::Vector2::new(c(1., 0.), c(0., 0.));
        assert_eq!(sm * e, nalgebra::Vector2::new(c(0., 0.), c(1., 0.)));
    }

    #[test]
    fn density_rejects_bad_matrices() {
        let not_herm = Op::new(c(0.5, 0.), c(0.2, 0.), c(0.1, 0.), c(0.5, 0.));
        assert!(DensityMatrix::try_new(not_herm).is_err());
        let bad_trace = ops::p_plus() * c(2.0, 0.0);
        assert!(DensityMatrix::try_new(bad_trace).is_err());
        let negative = density_from_bloch(&BlochVector::new(0.0, 0.0, 1.2)).into_matrix();
        assert!(DensityMatrix::try_new(negative).is_err());
        assert!(BlochVector::try_new(0.8, 0.8, 0.0).is_err());
    }

    #[test]
    fn angle_parser() {
        assert_eq!(parse_angle("pi*-0.5").unwrap(), -PI / 2.0);
        assert_eq!(parse_angle("pi").unwrap(), PI);
        assert_eq!(parse_angle(" 0.25 ").unwrap(), 0.25);
        assert!(parse_angle("pi*x").is_err());
        assert!(parse_angle("inf").is_err());
    }

    #[test]
    fn config_json() {
        let text = r#"{"gamma":1,"k_d":0,"n_bar":0,"omega_rabi":4,"delta_omega":3,
            "alpha0_sq":0,"alpha1_sq":1,"alpha2_sq":0,"theta1":"pi*0.5","theta2":0,
            "c":1.3372,"phi":"pi*-0.025"}"#;
        let cfg: ControlConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.theta1, PI * 0.5);
        assert_eq!(cfg.phi, -PI / 40.0);
        let extra = text.replace("\"c\":", "\"g\":1,\"c\":");
        assert!(serde_json::from_str::<ControlConfig>(&extra).is_err());
        let missing = text.replace("\"c\":1.3372,", "");
        assert!(serde_json::from_str::<ControlConfig>(&missing).is_err());
        let back: ControlConfig =
            serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    fn ball_point() -> impl Strategy<Value = BlochVector> {
        (0.0f64..=1.0, -1.0f64..=1.0, 0.0f64..std::f64::consts::TAU).prop_map(|(r, cz, az)| {
            let sz = (1.0 - cz * cz).sqrt();
            BlochVector::new(r * sz * az.cos(), r * sz * az.sin(), r * cz)
        })
    }

    proptest! {
        #[test]
        fn density_bloch_round_trip(v in ball_point()) {
            let rho = density_from_bloch(&v);
            let rho = DensityMatrix::try_new(rho.into_matrix()).unwrap();
            let w = bloch_from_density(&rho);
            prop_assert!((w.to_vector() - v.to_vector()).norm() <= 1e-12);
            let again = density_from_bloch(&w);
            prop_assert!((again.matrix() - rho.matrix()).norm() <= 1e-12);
        }

        #[test]
        fn squeezing_bounded_below(v in ball_point()) {
            prop_assert!(atomic_squeezing(&v) >= -0.25 - 1e-15);
        }

        #[test]
        fn squeezing_bound_on_sphere(cz in -1.0f64..=1.0, az in 0.0f64..6.3) {
            let sz = (1.0 - cz * cz).sqrt();
            let v = BlochVector::new(sz * az.cos(), sz * az.sin(), cz);
            prop_assert!(atomic_squeezing(&v) >= -0.25 - 1e-15);
        }

        #[test]
        fn squeezing_invariant_under_z_rotation(v in ball_point(), beta in -10.0f64..10.0) {
            let r = v.rotate_z(beta);
            prop_assert!((atomic_squeezing(&r) - atomic_squeezing(&v)).abs() <= 1e-12);
        }
    }
}
