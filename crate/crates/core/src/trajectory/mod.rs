//! A posteriori (conditioned) dynamics: Euler-Maruyama integration of the
//! diffusive stochastic master equation driven by the two homodyne
//! photocurrents, plus ensemble statistics and the periodogram estimate of
//! the photocurrent spectrum.
//!
//! Photocurrents are kept as increments over each step,
//! `dY_k = sqrt(gamma) |alpha_k| Tr[sigma_theta_k rho] dt + dW_k`, where the
//! same `dW_k` also drives the state update.

pub mod noise;

use std::io::{self, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, channel_operator, AprioriFlow, Liouvillian};
use crate::error::{Error, Result};
use crate::model::{BlochVector, Channel, ControlConfig, DensityMatrix, Op};
use crate::spectrum::SpectrumCurve;

pub use noise::NoiseStream;

/// Multiple of `dt + dW_1^2 + dW_2^2` that the positivity projection may move
/// the state (Frobenius norm) before a step is rejected.
pub const PROJECTION_BOUND_FACTOR: f64 = 10.0;

/// Phase recurrences are re-seeded from `exp(i mu t)` this often.
const PHASE_RESYNC: usize = 1024;

/// Linear map on 2x2 matrices, acting on `(m00, m01, m10, m11)`.
#[derive(Debug, Clone, Copy)]
struct Superop([[Complex64; 4]; 4]);

impl Superop {
    fn from_fn<F: Fn(&Op) -> Op>(f: F) -> Self {
        let mut cols = [[Complex64::new(0.0, 0.0); 4]; 4];
        for (c, col) in cols.iter_mut().enumerate() {
            let mut e = Op::zeros();
            e[(c / 2, c % 2)] = Complex64::new(1.0, 0.0);
            let img = f(&e);
            *col = [img[(0, 0)], img[(0, 1)], img[(1, 0)], img[(1, 1)]];
        }
        let mut m = [[Complex64::new(0.0, 0.0); 4]; 4];
        for r in 0..4 {
            for c in 0..4 {
                m[r][c] = cols[c][r];
            }
        }
        Superop(m)
    }

    fn is_zero(&self) -> bool {
        self.0.iter().flatten().all(|z| z.norm() == 0.0)
    }

    #[inline]
    fn apply(&self, v: &[Complex64; 4]) -> [Complex64; 4] {
        let m = &self.0;
        let mut out = [Complex64::new(0.0, 0.0); 4];
        for r in 0..4 {
            out[r] = m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2] + m[r][3] * v[3];
        }
        out
    }
}

fn flatten(m: &Op) -> [Complex64; 4] {
    [m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]]
}

#[cfg(test)]
fn unflatten(v: &[Complex64; 4]) -> Op {
    Op::new(v[0], v[1], v[2], v[3])
}

/// Result of one accepted step.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub state: DensityMatrix,
    /// Frobenius distance moved by the positivity projection (0 if none).
    pub projection: f64,
}

/// Precomputed Euler-Maruyama stepper for one configuration.
#[derive(Debug, Clone)]
pub struct SmeStepper {
    lindblad: Superop,
    // rho -> a rho + rho a^dagger for each channel operator a
    coupling: [Option<Superop>; 2],
    sqrt_gamma: f64,
    current_scale: [f64; 2],
    lo_phase: [Complex64; 2],
}

impl SmeStepper {
    pub fn new(cfg: &ControlConfig) -> Result<Self> {
        let l = Liouvillian::new(cfg)?;
        let coupling = [Channel::One, Channel::Two].map(|k| {
            let a = channel_operator(cfg, k);
            let s = Superop::from_fn(|m| a * m + m * a.adjoint());
            (!s.is_zero()).then_some(s)
        });
        let sqrt_gamma = cfg.gamma.sqrt();
        Ok(SmeStepper {
            lindblad: Superop::from_fn(|m| l.apply(m)),
            coupling,
            sqrt_gamma,
            current_scale: [Channel::One, Channel::Two].map(|k| sqrt_gamma * cfg.alpha_abs(k)),
            lo_phase: [Channel::One, Channel::Two]
                .map(|k| Complex64::from_polar(1.0, cfg.theta(k))),
        })
    }

    /// Drift `sqrt(gamma) |alpha_k| Tr[sigma_theta_k rho]` of photocurrent `k`
    /// (`index` 0 or 1).
    #[inline]
    pub fn mean_current(&self, index: usize, rho: &DensityMatrix) -> f64 {
        // Tr[sigma_theta rho] = 2 Re(e^{i theta} rho_01)
        2.0 * self.current_scale[index] * (self.lo_phase[index] * rho.matrix()[(0, 1)]).re
    }

    /// One Euler-Maruyama step, then Hermitian symmetrization, trace
    /// renormalization and, if an eigenvalue went negative, projection
    /// back onto the Bloch sphere.
    pub fn step(
        &self,
        rho: &DensityMatrix,
        dw: [f64; 2],
        dt: f64,
    ) -> std::result::Result<StepOutcome, (f64, f64)> {
        let v = flatten(rho.matrix());
        let l = self.lindblad.apply(&v);
        let mut out = [Complex64::new(0.0, 0.0); 4];
        for i in 0..4 {
            out[i] = v[i] + l[i] * dt;
        }
        for (coupling, dw) in self.coupling.iter().zip(dw) {
            if let Some(k) = coupling {
                let kv = k.apply(&v);
                let expect = (kv[0] + kv[3]).re;
                let w = self.sqrt_gamma * dw;
                for i in 0..4 {
                    out[i] += (kv[i] - v[i] * expect) * w;
                }
            }
        }

        let bound = PROJECTION_BOUND_FACTOR * (dt + dw[0] * dw[0] + dw[1] * dw[1]);
        let tr = out[0].re + out[3].re;
        if !(tr > 0.0) || !tr.is_finite() {
            return Err((f64::INFINITY, bound));
        }
        let off = (out[1] + out[2].conj()) * (0.5 / tr);
        let mut x = 2.0 * off.re;
        let mut y = -2.0 * off.im;
        let mut z = (out[0].re - out[3].re) / tr;
        let r = (x * x + y * y + z * z).sqrt();
        let mut projection = 0.0;
        if r > 1.0 {
            projection = (r - 1.0) / std::f64::consts::SQRT_2;
            if projection > bound {
                return Err((projection, bound));
            }
            x /= r;
            y /= r;
            z /= r;
        }
        let a = 0.5 * (1.0 + z);
        let m = Op::new(
            Complex64::new(a, 0.0),
            Complex64::new(0.5 * x, -0.5 * y),
            Complex64::new(0.5 * x, 0.5 * y),
            Complex64::new(1.0 - a, 0.0),
        );
        Ok(StepOutcome {
            state: DensityMatrix::from_matrix_unchecked(m),
            projection,
        })
    }
}

/// Single Euler-Maruyama step of the stochastic master equation.
pub fn sme_step(
    cfg: &ControlConfig,
    rho: &DensityMatrix,
    dw1: f64,
    dw2: f64,
    dt: f64,
) -> Result<DensityMatrix> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dt must be positive, got {dt}"
        )));
    }
    SmeStepper::new(cfg)?
        .step(rho, [dw1, dw2], dt)
        .map(|o| o.state)
        .map_err(|(displacement, bound)| Error::StepRejected {
            step: 0,
            displacement,
            bound,
        })
}

/// Time grid, ensemble size and randomness of a simulation. Times are in
/// the same units as `1 / gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationPlan {
    pub dt: f64,
    pub t_final: f64,
    pub n_trajectories: usize,
    pub base_seed: u64,
    pub initial_state: DensityMatrix,
    /// Start of the window used for spectral estimates.
    pub transient_cut: f64,
}

impl Default for SimulationPlan {
    fn default() -> Self {
        SimulationPlan {
            dt: 1e-3,
            t_final: 500.0,
            n_trajectories: 400,
            base_seed: 0,
            initial_state: DensityMatrix::ground(),
            transient_cut: 50.0,
        }
    }
}

impl SimulationPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPlan(m));
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_final > 0.0) || !self.t_final.is_finite() {
            return bad(format!("t_final must be positive, got {}", self.t_final));
        }
        if self.dt > self.t_final {
            return bad(format!(
                "dt = {} exceeds t_final = {}",
                self.dt, self.t_final
            ));
        }
        if !(self.transient_cut >= 0.0 && self.transient_cut < self.t_final) {
            return bad(format!(
                "transient_cut = {} must lie in [0, t_final)",
                self.transient_cut
            ));
        }
        if self.n_trajectories == 0 {
            return bad("n_trajectories must be at least 1".into());
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round().max(1.0) as usize
    }

    /// First step whose left end lies at or after `transient_cut`.
    pub fn window_start(&self) -> usize {
        (self.transient_cut / self.dt - 1e-9).ceil().max(0.0) as usize
    }

    /// Length of the spectral window.
    pub fn window_duration(&self) -> f64 {
        (self.n_steps() - self.window_start()) as f64 * self.dt
    }
}

/// Receives each step of a trajectory: the state at the left end `t` and
/// the current increments over `[t, t + dt]`.
pub trait StepObserver {
    fn observe(
        &mut self,
        step: usize,
        t: f64,
        rho: &DensityMatrix,
        increments: [f64; 2],
        mean_currents: [f64; 2],
    );

    fn finish(&mut self, _t: f64, _rho: &DensityMatrix) {}
}

/// Integrates trajectory `index` of `plan`, feeding every step to `observer`.
pub fn run_trajectory<O: StepObserver>(
    stepper: &SmeStepper,
    plan: &SimulationPlan,
    index: usize,
    observer: &mut O,
) -> Result<()> {
    let dt = plan.dt;
    let sqrt_dt = dt.sqrt();
    let mut noise = NoiseStream::new(plan.base_seed, index as u64);
    let mut rho = plan.initial_state;
    let n = plan.n_steps();
    for step in 0..n {
        let t = step as f64 * dt;
        let [z1, z2] = noise.next_pair();
        let dw = [z1 * sqrt_dt, z2 * sqrt_dt];
        let mean = [stepper.mean_current(0, &rho), stepper.mean_current(1, &rho)];
        observer.observe(
            step,
            t,
            &rho,
            [mean[0] * dt + dw[0], mean[1] * dt + dw[1]],
            mean,
        );
        rho = stepper
            .step(&rho, dw, dt)
            .map_err(|(displacement, bound)| Error::StepRejected {
                step,
                displacement,
                bound,
            })?
            .state;
    }
    observer.finish(n as f64 * dt, &rho);
    Ok(())
}

/// One sample path with both photocurrent increment streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub index: usize,
    pub config: ControlConfig,
    pub plan: SimulationPlan,
    /// `n_steps + 1` sample times, `t_n = n dt`.
    pub times: Vec<f64>,
    pub states: Vec<BlochVector>,
    /// `current_increments[k][n]` integrates `I_{k+1}` over `[t_n, t_{n+1}]`.
    pub current_increments: [Vec<f64>; 2],
}

impl TrajectoryRecord {
    /// CSV with header `t,x,y,z,dY1,dY2`, one row per step.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,x,y,z,dY1,dY2")?;
        for n in 0..self.current_increments[0].len() {
            let s = &self.states[n];
            writeln!(
                out,
                "{},{},{},{},{},{}",
                self.times[n],
                s.x,
                s.y,
                s.z,
                self.current_increments[0][n],
                self.current_increments[1][n]
            )?;
        }
        Ok(())
    }
}

struct Recorder {
    times: Vec<f64>,
    states: Vec<BlochVector>,
    increments: [Vec<f64>; 2],
}

impl StepObserver for Recorder {
    fn observe(
        &mut self,
        _step: usize,
        t: f64,
        rho: &DensityMatrix,
        inc: [f64; 2],
        _mean: [f64; 2],
    ) {
        self.times.push(t);
        self.states.push(rho.bloch());
        self.increments[0].push(inc[0]);
        self.increments[1].push(inc[1]);
    }

    fn finish(&mut self, t: f64, rho: &DensityMatrix) {
        self.times.push(t);
        self.states.push(rho.bloch());
    }
}

pub fn simulate_trajectory(
    cfg: &ControlConfig,
    plan: &SimulationPlan,
    index: usize,
) -> Result<TrajectoryRecord> {
    plan.validate()?;
    if index >= plan.n_trajectories {
        return Err(Error::InvalidArgument(format!(
            "trajectory index {index} out of range (plan has {})",
            plan.n_trajectories
        )));
    }
    let stepper = SmeStepper::new(cfg)?;
    let n = plan.n_steps();
    let mut rec = Recorder {
        times: Vec::with_capacity(n + 1),
        states: Vec::with_capacity(n + 1),
        increments: [Vec::with_capacity(n), Vec::with_capacity(n)],
    };
    run_trajectory(&stepper, plan, index, &mut rec)?;
    Ok(TrajectoryRecord {
        index,
        config: *cfg,
        plan: *plan,
        times: rec.times,
        states: rec.states,
        current_increments: rec.increments,
    })
}

/// Running sums `Z(mu) = sum_n e^{i mu t_n} dY_n` over the spectral window.
#[derive(Debug, Clone)]
struct FourierSums {
    mu: Vec<f64>,
    dt: f64,
    start: usize,
    phase: Vec<Complex64>,
    rotation: Vec<Complex64>,
    sums: Vec<Complex64>,
}

impl FourierSums {
    fn new(mu: &[f64], dt: f64, start: usize) -> Self {
        let t0 = start as f64 * dt;
        FourierSums {
            mu: mu.to_vec(),
            dt,
            start,
            phase: mu
                .iter()
                .map(|&m| Complex64::from_polar(1.0, m * t0))
                .collect(),
            rotation: mu
                .iter()
                .map(|&m| Complex64::from_polar(1.0, m * dt))
                .collect(),
            sums: vec![Complex64::new(0.0, 0.0); mu.len()],
        }
    }

    #[inline]
    fn push(&mut self, step: usize, increment: f64) {
        if step < self.start {
            return;
        }
        for ((z, p), r) in self
            .sums
            .iter_mut()
            .zip(self.phase.iter_mut())
            .zip(&self.rotation)
        {
            *z += *p * increment;
            *p *= *r;
        }
        if (step + 1 - self.start).is_multiple_of(PHASE_RESYNC) {
            let t = (step + 1) as f64 * self.dt;
            for (p, &m) in self.phase.iter_mut().zip(&self.mu) {
                *p = Complex64::from_polar(1.0, m * t);
            }
        }
    }
}

/// `(E|Z|^2 - |EZ|^2) / T` across trajectories, with its standard error.
fn periodogram_estimate(sums: &[&[Complex64]], duration: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = sums.len();
    if n < 2 {
        return Err(Error::InsufficientData(n));
    }
    let points = sums[0].len();
    let nf = n as f64;
    let mut values = Vec::with_capacity(points);
    let mut errors = Vec::with_capacity(points);
    for i in 0..points {
        let mean = sums.iter().map(|z| z[i]).sum::<Complex64>() / nf;
        // per-trajectory contributions whose average is the unbiased variance
        let contrib: Vec<f64> = sums
            .iter()
            .map(|z| (z[i] - mean).norm_sqr() * nf / ((nf - 1.0) * duration))
            .collect();
        let avg = contrib.iter().sum::<f64>() / nf;
        let var = contrib.iter().map(|c| (c - avg).powi(2)).sum::<f64>() / (nf - 1.0);
        values.push(avg);
        errors.push((var / nf).sqrt());
    }
    Ok((values, errors))
}

/// Periodogram estimate of `S_k` from stored trajectories, over the window
/// `[transient_cut, t_final]` of their common plan. The window must be long
/// compared with the correlation time `~1/gamma`.
pub fn periodogram_spectrum(
    records: &[TrajectoryRecord],
    k: Channel,
    mu_grid: &[f64],
) -> Result<SpectrumCurve> {
    if records.len() < 2 {
        return Err(Error::InsufficientData(records.len()));
    }
    let plan = records[0].plan;
    let config = records[0].config;
    if records.iter().any(|r| {
        r.plan.dt != plan.dt
            || r.plan.t_final != plan.t_final
            || r.plan.transient_cut != plan.transient_cut
    }) {
        return Err(Error::InvalidPlan(
            "records do not share one simulation plan".into(),
        ));
    }
    let ch = k.index() - 1;
    let sums: Vec<Vec<Complex64>> = records
        .par_iter()
        .map(|r| {
            let mut f = FourierSums::new(mu_grid, plan.dt, plan.window_start());
            for (n, &dy) in r.current_increments[ch].iter().enumerate() {
                f.push(n, dy);
            }
            f.sums
        })
        .collect();
    let views: Vec<&[Complex64]> = sums.iter().map(|v| v.as_slice()).collect();
    let (values, errors) = periodogram_estimate(&views, plan.window_duration())?;
    Ok(SpectrumCurve {
        channel: k,
        mu_grid: mu_grid.to_vec(),
        values,
        std_errors: Some(errors),
        config,
    })
}

/// What to collect from an ensemble run without storing full records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRequest {
    /// Frequencies for the periodogram; empty skips spectral estimation.
    #[serde(default)]
    pub mu_grid: Vec<f64>,
    #[serde(default)]
    pub channels: Vec<Channel>,
    /// Times at which the ensemble mean of the Bloch vector is reported
    /// (rounded to the step grid).
    #[serde(default)]
    pub checkpoints: Vec<f64>,
}

/// Ensemble mean of the conditioned Bloch vector at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointStats {
    pub t: f64,
    pub mean: BlochVector,
    pub std_error: BlochVector,
    /// Unconditioned solution at `t` from the same initial state.
    pub apriori: BlochVector,
}

/// Time-averaged photocurrent over the spectral window: the measured rate
/// `sum dY / T` and the state-predicted rate
/// `sum sqrt(gamma)|alpha| Tr[sigma_theta rho] dt / T`, ensemble means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurrentStats {
    pub channel: Channel,
    pub measured: f64,
    pub predicted: f64,
    /// Standard error of `measured - predicted`.
    pub difference_std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub config: ControlConfig,
    pub plan: SimulationPlan,
    pub checkpoints: Vec<CheckpointStats>,
    pub currents: Vec<CurrentStats>,
    pub spectra: Vec<SpectrumCurve>,
}

impl EnsembleSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

struct EnsembleObserver<'a> {
    checkpoint_steps: &'a [usize],
    next_checkpoint: usize,
    states: Vec<BlochVector>,
    fourier: Vec<FourierSums>,
    channels: &'a [Channel],
    window_start: usize,
    measured: [f64; 2],
    predicted: [f64; 2],
    dt: f64,
}

impl EnsembleObserver<'_> {
    fn record_checkpoints(&mut self, step: usize, rho: &DensityMatrix) {
        while self.next_checkpoint < self.checkpoint_steps.len()
            && self.checkpoint_steps[self.next_checkpoint] == step
        {
            self.states.push(rho.bloch());
            self.next_checkpoint += 1;
        }
    }
}

impl StepObserver for EnsembleObserver<'_> {
    fn observe(
        &mut self,
        step: usize,
        _t: f64,
        rho: &DensityMatrix,
        inc: [f64; 2],
        mean: [f64; 2],
    ) {
        self.record_checkpoints(step, rho);
        if step >= self.window_start {
            for c in 0..2 {
                self.measured[c] += inc[c];
                self.predicted[c] += mean[c] * self.dt;
            }
        }
        for (f, k) in self.fourier.iter_mut().zip(self.channels) {
            f.push(step, inc[k.index() - 1]);
        }
    }

    fn finish(&mut self, t: f64, rho: &DensityMatrix) {
        let step = (t / self.dt).round() as usize;
        self.record_checkpoints(step, rho);
    }
}

struct TrajectoryStats {
    states: Vec<BlochVector>,
    fourier: Vec<Vec<Complex64>>,
    measured: [f64; 2],
    predicted: [f64; 2],
}

fn mean_and_se(samples: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = samples.clone().sum::<f64>() / nf;
    let var = samples.map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0).max(1.0);
    (mean, (var / nf).sqrt())
}

/// Runs all trajectories of `plan` (in parallel) and aggregates them in index
/// order, so the summary does not depend on the thread count.
pub fn simulate_ensemble(
    cfg: &ControlConfig,
    plan: &SimulationPlan,
    request: &EnsembleRequest,
) -> Result<EnsembleSummary> {
    plan.validate()?;
    let stepper = SmeStepper::new(cfg)?;
    if !request.mu_grid.is_empty() && plan.n_trajectories < 2 {
        return Err(Error::InsufficientData(plan.n_trajectories));
    }
    let n_steps = plan.n_steps();
    let mut checkpoint_steps: Vec<(usize, f64)> = request
        .checkpoints
        .iter()
        .map(|&t| {
            if !(t >= 0.0) || t > plan.t_final + 0.5 * plan.dt {
                Err(Error::InvalidArgument(format!(
                    "checkpoint {t} outside [0, t_final]"
                )))
            } else {
                Ok((((t / plan.dt).round() as usize).min(n_steps), t))
            }
        })
        .collect::<Result<_>>()?;
    checkpoint_steps.sort_by_key(|c| c.0);
    let steps: Vec<usize> = checkpoint_steps.iter().map(|c| c.0).collect();
    let channels: &[Channel] = if request.mu_grid.is_empty() {
        &[]
    } else {
        &request.channels
    };

    let per_trajectory: Vec<TrajectoryStats> = (0..plan.n_trajectories)
        .into_par_iter()
        .map(|index| {
            let mut obs = EnsembleObserver {
                checkpoint_steps: &steps,
                next_checkpoint: 0,
                states: Vec::with_capacity(steps.len()),
                fourier: channels
                    .iter()
                    .map(|_| FourierSums::new(&request.mu_grid, plan.dt, plan.window_start()))
                    .collect(),
                channels,
                window_start: plan.window_start(),
                measured: [0.0; 2],
                predicted: [0.0; 2],
                dt: plan.dt,
            };
            run_trajectory(&stepper, plan, index, &mut obs)?;
            Ok(TrajectoryStats {
                states: obs.states,
                fourier: obs.fourier.into_iter().map(|f| f.sums).collect(),
                measured: obs.measured,
                predicted: obs.predicted,
            })
        })
        .collect::<Result<_>>()?;

    let n = plan.n_trajectories;
    let drift = dynamics::build_drift(cfg)?;
    let x0 = plan.initial_state.bloch();
    let checkpoints = checkpoint_steps
        .iter()
        .enumerate()
        .map(|(j, &(step, _))| {
            let comp = |f: fn(&BlochVector) -> f64| {
                mean_and_se(per_trajectory.iter().map(move |s| f(&s.states[j])), n)
            };
            let (mx, ex) = comp(|v| v.x);
            let (my, ey) = comp(|v| v.y);
            let (mz, ez) = comp(|v| v.z);
            let t = step as f64 * plan.dt;
            CheckpointStats {
                t,
                mean: BlochVector::new(mx, my, mz),
                std_error: BlochVector::new(ex, ey, ez),
                apriori: AprioriFlow::new(&drift, t).apply(&x0),
            }
        })
        .collect();

    let duration = plan.window_duration();
    let currents = [Channel::One, Channel::Two]
        .into_iter()
        .map(|k| {
            let c = k.index() - 1;
            let (measured, _) =
                mean_and_se(per_trajectory.iter().map(|s| s.measured[c] / duration), n);
            let (predicted, _) =
                mean_and_se(per_trajectory.iter().map(|s| s.predicted[c] / duration), n);
            let (_, se) = mean_and_se(
                per_trajectory
                    .iter()
                    .map(|s| (s.measured[c] - s.predicted[c]) / duration),
                n,
            );
            CurrentStats {
                channel: k,
                measured,
                predicted,
                difference_std_error: se,
            }
        })
        .collect();

    let spectra = channels
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let views: Vec<&[Complex64]> = per_trajectory
                .iter()
                .map(|s| s.fourier[j].as_slice())
                .collect();
            let (values, errors) = periodogram_estimate(&views, duration)?;
            Ok(SpectrumCurve {
                channel: k,
                mu_grid: request.mu_grid.clone(),
                values,
                std_errors: Some(errors),
                config: *cfg,
            })
        })
        .collect::<Result<_>>()?;

    Ok(EnsembleSummary {
        config: *cfg,
        plan: *plan,
        checkpoints,
        currents,
        spectra,
    })
}
