//! Multistart Nelder-Mead search over control parameters against the
//! analytic squeezing objectives.
//!
//! Angle parameters (`theta1`, `theta2`, `phi`, `phi_rel`) are unconstrained
//! during the search and wrapped into `(-pi, pi]` when a configuration is
//! built; their bounds only shape the initial design. All other parameters
//! are confined to their box. Invalid or exceptional configurations score
//! `+inf`. Global optimality is not guaranteed.

pub mod nelder_mead;

use std::collections::HashSet;
use std::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics;
use crate::error::{Error, Result};
use crate::model::{Channel, ControlConfig};
use crate::spectrum;

pub use nelder_mead::{nelder_mead, NelderMeadOptions, NelderMeadResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    OmegaRabi,
    DeltaOmega,
    Theta1,
    Theta2,
    C,
    Phi,
    /// `phi - theta1`; sets `phi` relative to whatever `theta1` is.
    PhiRel,
    Alpha1Sq,
    Alpha2Sq,
}

impl Parameter {
    pub fn is_angle(self) -> bool {
        matches!(
            self,
            Parameter::Theta1 | Parameter::Theta2 | Parameter::Phi | Parameter::PhiRel
        )
    }

    fn admissible(self) -> (f64, f64) {
        match self {
            Parameter::OmegaRabi | Parameter::C => (0.0, f64::INFINITY),
            Parameter::Alpha1Sq | Parameter::Alpha2Sq => (0.0, 1.0),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Objective {
    SpectrumAtMu { channel: Channel, mu: f64 },
    SpectrumMin { channel: Channel },
    AtomicSqueezingEq,
    Sigma2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeParameter {
    pub parameter: Parameter,
    pub lower: f64,
    pub upper: f64,
}

fn default_multistart() -> usize {
    32
}

fn default_tolerance() -> f64 {
    1e-8
}

fn default_max_evaluations() -> usize {
    4000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpec {
    pub objective: Objective,
    pub free: Vec<FreeParameter>,
    /// Supplies every parameter that is not free.
    pub template: ControlConfig,
    /// Number of Latin-hypercube starts.
    #[serde(default = "default_multistart")]
    pub multistart: usize,
    /// Simplex size at which a start is considered converged.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Objective evaluations allowed per start.
    #[serde(default = "default_max_evaluations")]
    pub max_evaluations: usize,
    #[serde(default)]
    pub seed: u64,
    /// Extra starts, in the order of `free`, run before the sampled ones.
    #[serde(default)]
    pub start_points: Vec<Vec<f64>>,
}

impl SearchSpec {
    pub fn new(objective: Objective, free: Vec<FreeParameter>, template: ControlConfig) -> Self {
        SearchSpec {
            objective,
            free,
            template,
            multistart: default_multistart(),
            tolerance: default_tolerance(),
            max_evaluations: default_max_evaluations(),
            seed: 0,
            start_points: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        let mut seen = HashSet::new();
        for f in &self.free {
            if !seen.insert(f.parameter) {
                return bad(format!("{:?} listed twice", f.parameter));
            }
            if !(f.lower.is_finite() && f.upper.is_finite() && f.lower <= f.upper) {
                return bad(format!(
                    "bounds of {:?} must be finite with lower <= upper",
                    f.parameter
                ));
            }
            let (lo, hi) = f.parameter.admissible();
            if f.lower < lo || f.upper > hi {
                return bad(format!(
                    "bounds of {:?} leave the range [{lo}, {hi}]",
                    f.parameter
                ));
            }
        }
        if seen.contains(&Parameter::Phi) && seen.contains(&Parameter::PhiRel) {
            return bad("phi and phi_rel cannot both be free".into());
        }
        let lower = |p: Parameter, fixed: f64| {
            self.free
                .iter()
                .find(|f| f.parameter == p)
                .map_or(fixed, |f| f.lower)
        };
        if lower(Parameter::Alpha1Sq, self.template.alpha1_sq)
            + lower(Parameter::Alpha2Sq, self.template.alpha2_sq)
            > 1.0
        {
            return bad("channel splits cannot sum to at most 1 anywhere in the box".into());
        }
        if let Objective::SpectrumAtMu { mu, .. } = self.objective {
            if !mu.is_finite() {
                return bad(format!("mu = {mu} is not finite"));
            }
        }
        if !(self.tolerance >= 0.0) || self.max_evaluations == 0 {
            return bad("tolerance must be >= 0 and max_evaluations > 0".into());
        }
        if self.multistart == 0 && self.start_points.is_empty() {
            return bad("no starting points".into());
        }
        for p in &self.start_points {
            if p.len() != self.free.len() {
                return bad(format!(
                    "start point has {} coordinates, expected {}",
                    p.len(),
                    self.free.len()
                ));
            }
        }
        Ok(())
    }

    /// Configuration at `point`: angles wrapped, splits completed.
    ///
    /// With one split free the other detected channel keeps the template
    /// value and `alpha0_sq` absorbs the remainder; the same holds with
    /// both free.
    pub fn config_at(&self, point: &[f64]) -> Result<ControlConfig> {
        if point.len() != self.free.len() {
            return Err(Error::InvalidPoint(format!(
                "point has {} coordinates, expected {}",
                point.len(),
                self.free.len()
            )));
        }
        let mut cfg = self.template;
        let mut phi_rel = None;
        for (f, &v) in self.free.iter().zip(point) {
            if !v.is_finite() {
                return Err(Error::InvalidPoint(format!("{:?} = {v}", f.parameter)));
            }
            if !f.parameter.is_angle() && !(f.lower..=f.upper).contains(&v) {
                return Err(Error::InvalidPoint(format!(
                    "{:?} = {v} outside [{}, {}]",
                    f.parameter, f.lower, f.upper
                )));
            }
            match f.parameter {
                Parameter::OmegaRabi => cfg.omega_rabi = v,
                Parameter::DeltaOmega => cfg.delta_omega = v,
                Parameter::Theta1 => cfg.theta1 = wrap_angle(v),
                Parameter::Theta2 => cfg.theta2 = wrap_angle(v),
                Parameter::C => cfg.c = v,
                Parameter::Phi => cfg.phi = wrap_angle(v),
                Parameter::PhiRel => phi_rel = Some(v),
                Parameter::Alpha1Sq => cfg.alpha1_sq = v,
                Parameter::Alpha2Sq => cfg.alpha2_sq = v,
            }
        }
        if let Some(rel) = phi_rel {
            cfg.phi = wrap_angle(cfg.theta1 + rel);
        }
        if self
            .free
            .iter()
            .any(|f| matches!(f.parameter, Parameter::Alpha1Sq | Parameter::Alpha2Sq))
        {
            cfg.alpha0_sq = 1.0 - cfg.alpha1_sq - cfg.alpha2_sq;
        }
        cfg.validate()
            .map_err(|e| Error::InvalidPoint(e.to_string()))?;
        Ok(cfg)
    }
}

/// Wraps into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Objective value of a configuration.
pub fn objective_value(objective: &Objective, cfg: &ControlConfig) -> Result<f64> {
    match *objective {
        Objective::SpectrumAtMu { channel, mu } => spectrum::spectrum_value(cfg, channel, mu),
        Objective::SpectrumMin { channel } => Ok(spectrum::spectrum_minimum(cfg, channel)?.value),
        Objective::AtomicSqueezingEq => Ok(dynamics::steady_state(cfg)?.atomic_squeezing()),
        Objective::Sigma2 => spectrum::sigma2(cfg),
    }
}

pub fn evaluate_objective(spec: &SearchSpec, point: &[f64]) -> Result<f64> {
    objective_value(&spec.objective, &spec.config_at(point)?)
}

/// One objective evaluation made during a search; `value` is `None` where
/// the point was infeasible or exceptional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub start: usize,
    pub point: Vec<f64>,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartOutcome {
    pub start_point: Vec<f64>,
    pub initial_value: Option<f64>,
    pub final_point: Vec<f64>,
    pub final_value: Option<f64>,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub parameters: Vec<Parameter>,
    /// Angles reported wrapped into `(-pi, pi]`.
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub best_config: ControlConfig,
    pub best_start: usize,
    pub starts: Vec<StartOutcome>,
    pub trace: Vec<TraceEntry>,
}

impl OptimizationResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Latin-hypercube sample of `n` points in the box.
pub fn latin_hypercube(bounds: &[(f64, f64)], n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![vec![0.0; bounds.len()]; n];
    for (d, &(lo, hi)) in bounds.iter().enumerate() {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        for (p, s) in points.iter_mut().zip(strata) {
            let u: f64 = rng.random();
            p[d] = lo + (hi - lo) * (s as f64 + u) / n as f64;
        }
    }
    points
}

/// Runs Nelder-Mead from every start (concurrently) and returns, per start,
/// its result and its evaluation trace.
pub fn multistart_minimize<F>(
    f: F,
    starts: &[Vec<f64>],
    steps: &[f64],
    opts: &NelderMeadOptions,
) -> Vec<(NelderMeadResult, Vec<TraceEntry>)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    starts
        .par_iter()
        .enumerate()
        .map(|(start, x0)| {
            let mut trace = Vec::new();
            let r = nelder_mead(
                |x| {
                    let v = f(x);
                    trace.push(TraceEntry {
                        start,
                        point: x.to_vec(),
                        value: finite(v),
                    });
                    v
                },
                x0,
                steps,
                opts,
            );
            (r, trace)
        })
        .collect()
}

pub fn optimize(spec: &SearchSpec) -> Result<OptimizationResult> {
    spec.validate()?;
    let bounds: Vec<(f64, f64)> = spec.free.iter().map(|f| (f.lower, f.upper)).collect();
    let mut starts = spec.start_points.clone();
    starts.extend(latin_hypercube(&bounds, spec.multistart, spec.seed));
    let steps: Vec<f64> = bounds
        .iter()
        .map(|&(lo, hi)| if hi > lo { 0.1 * (hi - lo) } else { 1e-3 })
        .collect();
    let opts = NelderMeadOptions {
        tolerance: spec.tolerance,
        max_evaluations: spec.max_evaluations,
    };
    let runs = multistart_minimize(
        |x| evaluate_objective(spec, x).unwrap_or(f64::INFINITY),
        &starts,
        &steps,
        &opts,
    );

    let mut best: Option<usize> = None;
    for (i, (r, _)) in runs.iter().enumerate() {
        if r.value.is_finite() && best.is_none_or(|b| r.value < runs[b].0.value) {
            best = Some(i);
        }
    }
    let best = best.ok_or(Error::NoFeasiblePoint)?;
    let wrap = |x: &[f64]| -> Vec<f64> {
        x.iter()
            .zip(&spec.free)
            .map(|(&v, f)| {
                if f.parameter.is_angle() {
                    wrap_angle(v)
                } else {
                    v
                }
            })
            .collect()
    };
    let best_run = &runs[best].0;
    let best_config = spec.config_at(&best_run.point)?;

    let outcomes = runs
        .iter()
        .zip(&starts)
        .map(|((r, trace), x0)| StartOutcome {
            start_point: x0.clone(),
            initial_value: trace.first().and_then(|t| t.value),
            final_point: wrap(&r.point),
            final_value: finite(r.value),
            evaluations: r.evaluations,
            converged: r.converged,
        })
        .collect();
    Ok(OptimizationResult {
        parameters: spec.free.iter().map(|f| f.parameter).collect(),
        best_point: wrap(&best_run.point),
        best_value: best_run.value,
        best_config,
        best_start: best,
        starts: outcomes,
        trace: runs.into_iter().flat_map(|(_, t)| t).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn free(parameter: Parameter, lower: f64, upper: f64) -> FreeParameter {
        FreeParameter {
            parameter,
            lower,
            upper,
        }
    }

    fn split(a1: f64, a2: f64) -> ControlConfig {
        ControlConfig {
            alpha0_sq: 1.0 - a1 - a2,
            alpha1_sq: a1,
            alpha2_sq: a2,
            ..ControlConfig::default()
        }
    }

    fn line3_spec() -> SearchSpec {
        let mut spec = SearchSpec::new(
            Objective::SpectrumAtMu {
                channel: Channel::One,
                mu: 0.0,
            },
            vec![
                free(Parameter::C, 0.0, 1.0),
                free(Parameter::PhiRel, -PI, PI),
            ],
            split(0.45, 0.45),
        );
        spec.multistart = 8;
        spec.start_points = vec![vec![0.2936, FRAC_PI_2]];
        spec
    }

    #[test]
    fn wrapping() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-15);
        assert!((wrap_angle(-7.0) - (-7.0 + TAU)).abs() < 1e-15);
    }

    #[test]
    fn objective_examples() {
        let as_cfg = ControlConfig {
            delta_omega: 3.0,
            omega_rabi: 4.0,
            theta1: FRAC_PI_2,
            c: 1.3372,
            phi: -PI / 40.0,
            ..split(1.0, 0.0)
        };
        let spec = SearchSpec::new(Objective::AtomicSqueezingEq, vec![], as_cfg);
        assert!((evaluate_objective(&spec, &[]).unwrap() + 0.2414).abs() < 5e-4);

        let spec = SearchSpec::new(Objective::Sigma2, vec![], ControlConfig::default());
        assert_eq!(evaluate_objective(&spec, &[]).unwrap(), 0.0);

        let in_loop = ControlConfig {
            theta1: FRAC_PI_2,
            c: 1.2818,
            ..split(1.0, 0.0)
        };
        let spec = SearchSpec::new(
            Objective::SpectrumMin {
                channel: Channel::One,
            },
            vec![],
            in_loop,
        );
        assert!((evaluate_objective(&spec, &[]).unwrap() - 0.3137849566870302).abs() < 1e-9);
    }

    #[test]
    fn point_checks() {
        let spec = line3_spec();
        assert!(matches!(
            evaluate_objective(&spec, &[1.5, 0.0]),
            Err(Error::InvalidPoint(_))
        ));
        assert!(matches!(
            evaluate_objective(&spec, &[0.5]),
            Err(Error::InvalidPoint(_))
        ));
        // angles are wrapped rather than bounded
        let a = evaluate_objective(&spec, &[0.3, 0.4]).unwrap();
        let b = evaluate_objective(&spec, &[0.3, 0.4 + 4.0 * PI]).unwrap();
        assert!((a - b).abs() < 1e-14);
        let exceptional_cfg = ControlConfig {
            theta1: FRAC_PI_2,
            c: 0.5,
            ..split(1.0, 0.0)
        };
        let exceptional = SearchSpec::new(Objective::AtomicSqueezingEq, vec![], exceptional_cfg);
        assert!(matches!(
            evaluate_objective(&exceptional, &[]),
            Err(Error::ExceptionalCase)
        ));
    }

    #[test]
    fn phi_rel_follows_theta1() {
        let mut spec = line3_spec();
        spec.free.push(free(Parameter::Theta1, -PI, PI));
        let cfg = spec.config_at(&[0.2, 0.5, 1.0]).unwrap();
        assert!((cfg.phi - 1.5).abs() < 1e-15);
    }

    #[test]
    fn free_splits_complete_the_sum() {
        let spec = SearchSpec::new(
            Objective::Sigma2,
            vec![free(Parameter::Alpha2Sq, 0.0, 0.9)],
            split(0.45, 0.45),
        );
        let cfg = spec.config_at(&[0.2]).unwrap();
        assert!((cfg.alpha0_sq - 0.35).abs() < 1e-15);
        assert!(matches!(
            spec.config_at(&[0.7]),
            Err(Error::InvalidPoint(_))
        ));
    }

    #[test]
    fn spec_validation() {
        let mut s = line3_spec();
        s.free.push(free(Parameter::C, 0.0, 1.0));
        assert!(matches!(s.validate(), Err(Error::InvalidSpec(_))));
        let mut s = line3_spec();
        s.free.push(free(Parameter::Phi, 0.0, 1.0));
        assert!(s.validate().is_err());
        let mut s = line3_spec();
        s.free[0] = free(Parameter::C, -1.0, 1.0);
        assert!(s.validate().is_err());
        let mut s = line3_spec();
        s.start_points.push(vec![0.1]);
        assert!(s.validate().is_err());
        let s = SearchSpec::new(
            Objective::Sigma2,
            vec![
                free(Parameter::Alpha1Sq, 0.6, 1.0),
                free(Parameter::Alpha2Sq, 0.5, 1.0),
            ],
            split(0.0, 0.0),
        );
        assert!(s.validate().is_err());
    }

    #[test]
    fn spec_json() {
        let text = r#"{
            "objective": {"kind": "spectrum_at_mu", "channel": 1, "mu": 0.0},
            "free": [{"parameter": "c", "lower": 0.0, "upper": 1.0},
                     {"parameter": "phi_rel", "lower": -3.14, "upper": 3.14}],
            "template": {"gamma": 1.0, "k_d": 0.0, "n_bar": 0.0, "omega_rabi": 0.0,
                         "delta_omega": 0.0, "alpha0_sq": 0.1, "alpha1_sq": 0.45,
                         "alpha2_sq": 0.45, "theta1": 0.0, "theta2": 0.0, "c": 0.0, "phi": 0.0},
            "start_points": [[0.2936, 1.5707963267948966]]
        }"#;
        let spec = SearchSpec::from_json(text).unwrap();
        assert_eq!(spec.multistart, 32);
        assert_eq!(spec.tolerance, 1e-8);
        assert_eq!(spec.free[1].parameter, Parameter::PhiRel);
        let back = SearchSpec::from_json(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        assert!(SearchSpec::from_json(r#"{"objective": {"kind": "nope"}}"#).is_err());
    }

    #[test]
    fn latin_hypercube_strata() {
        let pts = latin_hypercube(&[(0.0, 1.0), (-2.0, 2.0)], 10, 5);
        for d in 0..2 {
            let (lo, w) = if d == 0 { (0.0, 1.0) } else { (-2.0, 4.0) };
            let mut strata: Vec<usize> = pts
                .iter()
                .map(|p| ((p[d] - lo) / w * 10.0) as usize)
                .collect();
            strata.sort();
            assert_eq!(strata, (0..10).collect::<Vec<_>>());
        }
        assert_eq!(pts, latin_hypercube(&[(0.0, 1.0), (-2.0, 2.0)], 10, 5));
    }

    #[test]
    fn multistart_quadratic_hook() {
        let runs = multistart_minimize(
            |x| (x[0] - 2.0).powi(2),
            &[vec![-3.0], vec![0.0], vec![7.5]],
            &[0.5],
            &NelderMeadOptions::default(),
        );
        for (r, trace) in &runs {
            assert!((r.point[0] - 2.0).abs() < 1e-6);
            assert_eq!(trace.len(), r.evaluations);
        }
    }

    #[test]
    fn seeded_line3_is_not_lost() {
        let spec = line3_spec();
        let seeded = evaluate_objective(&spec, &spec.start_points[0]).unwrap();
        let r = optimize(&spec).unwrap();
        assert!(
            r.best_value <= seeded + 1e-12,
            "{} > {seeded}",
            r.best_value
        );
        assert_eq!(r.best_config, spec.config_at(&r.best_point).unwrap());
        assert!(r.best_value < 1.0);
    }

    #[test]
    fn never_worse_than_best_start_and_deterministic() {
        let mut spec = line3_spec();
        spec.start_points.clear();
        spec.seed = 17;
        let r = optimize(&spec).unwrap();
        let best_initial = r
            .starts
            .iter()
            .filter_map(|s| s.initial_value)
            .fold(f64::INFINITY, f64::min);
        assert!(r.best_value <= best_initial);
        assert_eq!(
            r.trace.len(),
            r.starts.iter().map(|s| s.evaluations).sum::<usize>()
        );
        assert_eq!(optimize(&spec).unwrap(), r);
    }

    #[test]
    fn atomic_squeezing_near_bound() {
        let mut spec = SearchSpec::new(
            Objective::AtomicSqueezingEq,
            vec![
                free(Parameter::OmegaRabi, 0.0, 6.0),
                free(Parameter::DeltaOmega, -5.0, 5.0),
                free(Parameter::Theta1, -PI, PI),
                free(Parameter::C, 0.0, 3.0),
                free(Parameter::Phi, -PI, PI),
            ],
            split(1.0, 0.0),
        );
        spec.multistart = 16;
        let r = optimize(&spec).unwrap();
        assert!(r.best_value <= -0.24, "{}", r.best_value);
        assert!(r.best_value >= -0.25 - 1e-12);
    }

    #[test]
    fn infeasible_box() {
        let spec = SearchSpec::new(
            Objective::Sigma2,
            vec![free(Parameter::C, 0.5, 1.0)],
            split(0.0, 0.5),
        );
        assert!(matches!(optimize(&spec), Err(Error::NoFeasiblePoint)));
    }
}
