//! A priori (unconditioned) dynamics of the atom.
//!
//! The master equation `d eta = L eta dt` is affine on the Bloch ball:
//! `dx/dt = -A x + b`. [`Liouvillian`] evaluates `L` on 2x2 matrices term by
//! term; [`DriftModel`] holds the closed-form `A` and `b`. The two are
//! cross-checked in the tests.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ops, BlochVector, Channel, ControlConfig, Op};

/// Absolute tolerance on each of the equalities that define the singular
/// manifold `det A = 0`.
pub const EXCEPTIONAL_TOL: f64 = 1e-10;

/// Bloch-form drift: `dx/dt = -a x + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftModel {
    pub a: Matrix3<f64>,
    pub b: Vector3<f64>,
    pub delta_omega_c: f64,
}

impl DriftModel {
    /// `-A x + b`
    pub fn velocity(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.b - self.a * x
    }
}

pub fn build_drift(cfg: &ControlConfig) -> Result<DriftModel> {
    cfg.validate()?;
    Ok(drift_unchecked(cfg))
}

pub(crate) fn drift_unchecked(cfg: &ControlConfig) -> DriftModel {
    let g = cfg.gamma;
    let a1 = cfg.alpha_abs(Channel::One);
    let (c, phi, th1) = (cfg.c, cfg.phi, cfg.theta1);
    let base = 0.5 + cfg.n_bar + 2.0 * cfg.k_d;
    let dwc = cfg.delta_omega_c();
    let cross = g * (c * a1 * (th1 + phi).cos() + c * c * (2.0 * phi).sin());

    let a11 = g * (base + 2.0 * c * a1 * th1.cos() * phi.sin() + 2.0 * c * c * phi.sin().powi(2));
    let a12 = dwc - cross;
    let a21 = -dwc - cross;
    let a22 = g * (base - 2.0 * c * a1 * th1.sin() * phi.cos() + 2.0 * c * c * phi.cos().powi(2));
    let a33 = g * (1.0 + 2.0 * cfg.n_bar - 2.0 * c * a1 * (th1 - phi).sin() + 2.0 * c * c);
    let om = cfg.omega_rabi;

    DriftModel {
        a: Matrix3::new(a11, a12, 0.0, a21, a22, om, 0.0, -om, a33),
        b: Vector3::new(0.0, 0.0, -g * (1.0 - 2.0 * c * a1 * (th1 - phi).sin())),
        delta_omega_c: dwc,
    }
}

/// Coupling operator of homodyne channel `k` in the stochastic master
/// equation: `alpha_1 sigma_- - i c sigma_phi` for the feedback channel,
/// `alpha_2 sigma_-` for the other.
pub fn channel_operator(cfg: &ControlConfig, k: Channel) -> Op {
    let sm = ops::sigma_minus();
    match k {
        Channel::One => {
            sm * cfg.alpha(Channel::One) - ops::sigma_phi(cfg.phi) * Complex64::new(0.0, cfg.c)
        }
        Channel::Two => sm * cfg.alpha(Channel::Two),
    }
}

fn commutator(a: &Op, b: &Op) -> Op {
    a * b - b * a
}

fn anticommutator(a: &Op, b: &Op) -> Op {
    a * b + b * a
}

/// The generator of the a priori dynamics in the rotating frame.
#[derive(Debug, Clone)]
pub struct Liouvillian {
    gamma: f64,
    k_d: f64,
    n_bar: f64,
    loss: f64,
    hamiltonian: Op,
    feedback: Op,
    correction: Op,
}

impl Liouvillian {
    pub fn new(cfg: &ControlConfig) -> Result<Self> {
        cfg.validate()?;
        let a1 = cfg.alpha_abs(Channel::One);
        let re = |x: f64| Complex64::new(x, 0.0);
        let hamiltonian = ops::sigma_z() * re(cfg.delta_omega_c() / 2.0)
            + ops::sigma_x() * re(cfg.omega_rabi / 2.0);
        let correction = ops::p_plus()
            * re(cfg.alpha1_sq - 2.0 * cfg.c * a1 * (cfg.theta1 - cfg.phi).sin())
            + ops::identity() * re(cfg.c * cfg.c);
        Ok(Liouvillian {
            gamma: cfg.gamma,
            k_d: cfg.k_d,
            n_bar: cfg.n_bar,
            loss: cfg.n_bar + 1.0 - cfg.alpha1_sq,
            hamiltonian,
            feedback: channel_operator(cfg, Channel::One),
            correction,
        })
    }

    /// `L rho` for any 2x2 matrix (the map is linear; no normalization assumed).
    pub fn apply(&self, rho: &Op) -> Op {
        let i = Complex64::i();
        let re = |x: f64| Complex64::new(x, 0.0);
        let (sz, sm, sp) = (ops::sigma_z(), ops::sigma_minus(), ops::sigma_plus());
        let g = self.gamma;

        let mut out = commutator(&self.hamiltonian, rho) * (-i);
        out += (sz * rho * sz - rho) * re(g * self.k_d);
        out +=
            (sp * rho * sm - anticommutator(&ops::p_minus(), rho) * re(0.5)) * re(g * self.n_bar);
        out += (sm * rho * sp - anticommutator(&ops::p_plus(), rho) * re(0.5)) * re(g * self.loss);
        out += self.feedback * rho * self.feedback.adjoint() * re(g);
        out -= anticommutator(&self.correction, rho) * re(g / 2.0);
        out
    }
}

pub fn apply_liouvillian(cfg: &ControlConfig, rho: &Op) -> Result<Op> {
    Ok(Liouvillian::new(cfg)?.apply(rho))
}

/// The six equalities whose conjunction makes `det A = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExceptionalConditions {
    pub no_dephasing: bool,
    pub zero_temperature: bool,
    pub full_channel1: bool,
    pub feedback_balance: bool,
    pub drive_alignment: bool,
    pub detuning_balance: bool,
}

impl ExceptionalConditions {
    pub fn all(&self) -> bool {
        self.no_dephasing
            && self.zero_temperature
            && self.full_channel1
            && self.feedback_balance
            && self.drive_alignment
            && self.detuning_balance
    }

    /// `(description, satisfied)` pairs, in a fixed order.
    pub fn describe(&self) -> [(&'static str, bool); 6] {
        [
            ("k_d = 0", self.no_dephasing),
            ("n_bar = 0", self.zero_temperature),
            ("|alpha_1| = 1", self.full_channel1),
            ("2 c sin(theta_1 - phi) = 1", self.feedback_balance),
            ("Omega sin(theta_1) = 0", self.drive_alignment),
            (
                "delta_omega = -gamma c cos(theta_1 - phi)",
                self.detuning_balance,
            ),
        ]
    }
}

pub fn exceptional_conditions(cfg: &ControlConfig) -> ExceptionalConditions {
    let tol = EXCEPTIONAL_TOL;
    let d = cfg.theta1 - cfg.phi;
    ExceptionalConditions {
        no_dephasing: cfg.k_d.abs() <= tol,
        zero_temperature: cfg.n_bar.abs() <= tol,
        full_channel1: (cfg.alpha_abs(Channel::One) - 1.0).abs() <= tol,
        feedback_balance: (2.0 * cfg.c * d.sin() - 1.0).abs() <= tol,
        drive_alignment: (cfg.omega_rabi * cfg.theta1.sin()).abs() <= tol,
        detuning_balance: (cfg.delta_omega + cfg.gamma * cfg.c * d.cos()).abs() <= tol,
    }
}

pub fn is_exceptional(cfg: &ControlConfig) -> bool {
    exceptional_conditions(cfg).all()
}

/// Unique stationary Bloch vector, the solution of `A x = b`.
pub fn steady_state(cfg: &ControlConfig) -> Result<BlochVector> {
    let drift = build_drift(cfg)?;
    if is_exceptional(cfg) {
        return Err(Error::ExceptionalCase);
    }
    steady_state_of(&drift)
}

pub(crate) fn steady_state_of(drift: &DriftModel) -> Result<BlochVector> {
    let x = linalg::solve_guarded(&drift.a, &drift.b)
        .map_err(|condition| Error::SingularDrift { condition })?;
    Ok(BlochVector::from_vector(&x))
}

/// Exact flow of `dx/dt = -A x + b` for duration `t`, via the exponential
/// of the 4x4 affine embedding.
#[derive(Debug, Clone, Copy)]
pub struct AprioriFlow {
    map: Matrix4<f64>,
}

impl AprioriFlow {
    pub fn new(drift: &DriftModel, t: f64) -> Self {
        let mut gen = Matrix4::zeros();
        gen.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-drift.a * t));
        gen.fixed_view_mut::<3, 1>(0, 3).copy_from(&(drift.b * t));
        AprioriFlow {
            map: linalg::expm(&gen),
        }
    }

    pub fn apply(&self, x0: &BlochVector) -> BlochVector {
        let v = self.map * Vector4::new(x0.x, x0.y, x0.z, 1.0);
        BlochVector::new(v[0], v[1], v[2])
    }
}

pub fn propagate_apriori(cfg: &ControlConfig, x0: &BlochVector, t: f64) -> Result<BlochVector> {
    let drift = build_drift(cfg)?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "propagation time must be finite and >= 0, got {t}"
        )));
    }
    Ok(AprioriFlow::new(&drift, t).apply(x0))
}
