//! Incoherent homodyne spectrum of the side-channel photocurrents and the
//! squeezing functionals derived from it.
//!
//! `S_k(mu) = 1 + 2 gamma |alpha_k|^2 s_k . (A (A^2 + mu^2)^-1 t_k)`, where
//! `s_k` is the local-oscillator direction and `t_k` is read off the
//! stationary state. The resolvent is applied by solving
//! `(A^2 + mu^2) u = t_k`, never by forming an inverse.

use std::io::{self, Write};

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, DriftModel};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{
    bloch_components, density_from_bloch, ops, BlochVector, Channel, ControlConfig,
};

/// `s_k` and `t_k` for one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelVectors {
    pub s: Vector3<f64>,
    pub t: Vector3<f64>,
}

fn t_vector(cfg: &ControlConfig, eq: &BlochVector, k: Channel, theta: f64) -> Vector3<f64> {
    let eta = *density_from_bloch(eq).matrix();
    let e = Complex64::from_polar(1.0, theta);
    let sig = ops::sigma_phi(theta);
    let mean = (sig * eta).trace();
    let mut m = ops::sigma_minus() * eta * e + eta * ops::sigma_plus() * e.conj() - eta * mean;
    if k == Channel::One && cfg.c > 0.0 {
        let sp = ops::sigma_phi(cfg.phi);
        let coef = Complex64::new(0.0, cfg.c / cfg.alpha_abs(Channel::One));
        m += (eta * sp - sp * eta) * coef;
    }
    bloch_components(&m)
}

fn lo_direction(theta: f64) -> Vector3<f64> {
    Vector3::new(theta.cos(), theta.sin(), 0.0)
}

fn checked_steady_state(cfg: &ControlConfig) -> Result<(DriftModel, BlochVector)> {
    let drift = dynamics::build_drift(cfg)?;
    if dynamics::is_exceptional(cfg) {
        return Err(Error::ExceptionalCase);
    }
    let eq = dynamics::steady_state_of(&drift)?;
    Ok((drift, eq))
}

pub fn channel_vectors(cfg: &ControlConfig, k: Channel) -> Result<ChannelVectors> {
    let (_, eq) = checked_steady_state(cfg)?;
    let theta = cfg.theta(k);
    Ok(ChannelVectors {
        s: lo_direction(theta),
        t: t_vector(cfg, &eq, k, theta),
    })
}

/// Precomputed drift and channel vectors for repeated spectrum evaluation.
#[derive(Debug, Clone)]
pub struct SpectrumModel {
    channel: Channel,
    gamma: f64,
    alpha_sq: f64,
    a: Matrix3<f64>,
    a_sq: Matrix3<f64>,
    vectors: ChannelVectors,
}

impl SpectrumModel {
    pub fn new(cfg: &ControlConfig, k: Channel) -> Result<Self> {
        let (drift, eq) = checked_steady_state(cfg)?;
        let theta = cfg.theta(k);
        Ok(SpectrumModel {
            channel: k,
            gamma: cfg.gamma,
            alpha_sq: cfg.alpha_sq(k),
            a: drift.a,
            a_sq: drift.a * drift.a,
            vectors: ChannelVectors {
                s: lo_direction(theta),
                t: t_vector(cfg, &eq, k, theta),
            },
        })
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn vectors(&self) -> &ChannelVectors {
        &self.vectors
    }

    pub fn value(&self, mu: f64) -> Result<f64> {
        let m = self.a_sq + Matrix3::identity() * (mu * mu);
        let u = linalg::solve_guarded(&m, &self.vectors.t)
            .map_err(|condition| Error::SingularResolvent { mu, condition })?;
        let w = self.a * u;
        Ok(1.0 + 2.0 * self.gamma * self.alpha_sq * self.vectors.s.dot(&w))
    }

    /// Global minimum over `mu` (the curve is even, so only `mu >= 0` is
    /// scanned): a coarse grid of `opts.step * gamma` over
    /// `[0, opts.mu_max * gamma]`, then golden-section refinement around the
    /// best grid point. Minima narrower than the grid step can be missed.
    pub fn minimum(&self, opts: &MinimumSearch) -> Result<SpectrumMinimum> {
        let step = opts.step * self.gamma;
        let n = (opts.mu_max / opts.step).round() as usize;
        let mut best = (0usize, f64::INFINITY);
        for i in 0..=n {
            let v = self.value(i as f64 * step)?;
            if v < best.1 {
                best = (i, v);
            }
        }
        let lo = best.0.saturating_sub(1) as f64 * step;
        let hi = (best.0 + 1).min(n) as f64 * step;
        let mut failure = None;
        let (mu, value) = golden_section(
            |mu| match self.value(mu) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::INFINITY
                }
            },
            lo,
            hi,
            opts.tol,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        // the refined point can only improve on the grid
        if value <= best.1 {
            Ok(SpectrumMinimum { mu, value })
        } else {
            Ok(SpectrumMinimum {
                mu: best.0 as f64 * step,
                value: best.1,
            })
        }
    }
}

/// Coarse-grid parameters for [`SpectrumModel::minimum`], in units of gamma.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimumSearch {
    pub mu_max: f64,
    pub step: f64,
    pub tol: f64,
}

impl Default for MinimumSearch {
    fn default() -> Self {
        MinimumSearch {
            mu_max: 10.0,
            step: 0.01,
            tol: 1e-6,
        }
    }
}

/// Location `|mu|` and depth of the spectrum minimum; the mirror point `-mu`
/// has the same value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectrumMinimum {
    pub mu: f64,
    pub value: f64,
}

pub fn spectrum_value(cfg: &ControlConfig, k: Channel, mu: f64) -> Result<f64> {
    SpectrumModel::new(cfg, k)?.value(mu)
}

pub fn spectrum_minimum(cfg: &ControlConfig, k: Channel) -> Result<SpectrumMinimum> {
    SpectrumModel::new(cfg, k)?.minimum(&MinimumSearch::default())
}

/// Sampled spectrum of one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumCurve {
    pub channel: Channel,
    pub mu_grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Standard error per point, present for Monte Carlo estimates only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<Vec<f64>>,
    pub config: ControlConfig,
}

impl SpectrumCurve {
    /// CSV with header `mu,S`, or `mu,S,stderr` for estimates.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        match &self.std_errors {
            None => {
                writeln!(out, "mu,S")?;
                for (m, s) in self.mu_grid.iter().zip(&self.values) {
                    writeln!(out, "{m},{s}")?;
                }
            }
            Some(err) => {
                writeln!(out, "mu,S,stderr")?;
                for ((m, s), e) in self.mu_grid.iter().zip(&self.values).zip(err) {
                    writeln!(out, "{m},{s},{e}")?;
                }
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("curve serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Index of the smallest value.
    pub fn argmin(&self) -> Option<usize> {
        self.values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
    }
}

/// `n_points` values `mu_min + i (mu_max - mu_min) / (n_points - 1)`.
pub fn uniform_grid(mu_min: f64, mu_max: f64, n_points: usize) -> Result<Vec<f64>> {
    if !(mu_min < mu_max) || n_points < 2 {
        return Err(Error::InvalidArgument(format!(
            "need mu_min < mu_max and at least 2 points, got [{mu_min}, {mu_max}] with {n_points}"
        )));
    }
    let h = (mu_max - mu_min) / (n_points - 1) as f64;
    Ok((0..n_points)
        .map(|i| {
            if i + 1 == n_points {
                mu_max
            } else {
                mu_min + i as f64 * h
            }
        })
        .collect())
}

pub fn spectrum_sweep(
    cfg: &ControlConfig,
    k: Channel,
    mu_min: f64,
    mu_max: f64,
    n_points: usize,
) -> Result<SpectrumCurve> {
    let grid = uniform_grid(mu_min, mu_max, n_points)?;
    spectrum_on_grid(cfg, k, grid)
}

pub fn spectrum_on_grid(
    cfg: &ControlConfig,
    k: Channel,
    mu_grid: Vec<f64>,
) -> Result<SpectrumCurve> {
    let model = SpectrumModel::new(cfg, k)?;
    let values = mu_grid
        .par_iter()
        .map(|&mu| model.value(mu))
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectrumCurve {
        channel: k,
        mu_grid,
        values,
        std_errors: None,
        config: *cfg,
    })
}

/// `Pi_k = |alpha_k|^2 t_k . s_k`, the integrated excess of `S_k` over shot
/// noise in units of `2 pi gamma`.
pub fn mean_squeezing(cfg: &ControlConfig, k: Channel) -> Result<f64> {
    let v = channel_vectors(cfg, k)?;
    Ok(cfg.alpha_sq(k) * v.t.dot(&v.s))
}

/// Channel-2 squeezing parameter `inf_theta2 Pi_2 = |alpha_2|^2 [AS + z + |z|]`
/// at the stationary state.
pub fn sigma2(cfg: &ControlConfig) -> Result<f64> {
    let (_, eq) = checked_steady_state(cfg)?;
    Ok(cfg.alpha2_sq * (eq.atomic_squeezing() + eq.z + eq.z.abs()))
}

/// Numerical infimum of `Pi_2` over `theta2 in [0, 2 pi)`: grid of
/// `n_grid` phases, then golden-section refinement. Returns `(theta2, value)`.
pub fn sigma2_numeric(cfg: &ControlConfig, n_grid: usize) -> Result<(f64, f64)> {
    let (_, eq) = checked_steady_state(cfg)?;
    let pi2 = |theta: f64| {
        cfg.alpha2_sq * t_vector(cfg, &eq, Channel::Two, theta).dot(&lo_direction(theta))
    };
    let n = n_grid.max(8);
    let h = std::f64::consts::TAU / n as f64;
    let (i, _) = (0..n)
        .map(|i| (i, pi2(i as f64 * h)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("grid is non-empty");
    let centre = i as f64 * h;
    Ok(golden_section(pi2, centre - h, centre + h, 1e-9))
}

/// Golden-section search for a minimum of a unimodal `f` on `[lo, hi]`.
pub(crate) fn golden_section<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}
