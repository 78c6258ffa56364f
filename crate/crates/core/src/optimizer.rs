//! Levenberg-Marquardt solver for small dense nonlinear least-squares problems.
//!
//! The cost is the plain sum of squared residuals. Jacobians are computed by
//! central differences, so problems only provide residual evaluation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::wrap_angle;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("residual vector is not finite at the evaluated parameters")]
    NonFiniteResidual,
    #[error("damped normal equations could not be solved")]
    SingularNormalEquations,
    #[error("expected {expected} parameters, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid solver settings: {0}")]
    InvalidSettings(String),
}

/// How a parameter is kept inside its admissible range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamKind {
    Free,
    /// Periodic angle, wrapped modulo 2*pi into `[-pi, pi]`.
    Angle,
    /// Box-bounded, projected onto `[lo, hi]`.
    Bounded {
        lo: f64,
        hi: f64,
    },
}

impl ParamKind {
    fn project(self, value: f64) -> f64 {
        match self {
            ParamKind::Free => value,
            ParamKind::Angle => wrap_angle(value),
            ParamKind::Bounded { lo, hi } => value.clamp(lo, hi),
        }
    }
}

/// A residual function `params -> r(params)` with a fixed output length.
///
/// Residual evaluation must be a pure function of the parameters.
pub trait ResidualProblem {
    fn num_params(&self) -> usize;

    fn residuals(&self, params: &[f64]) -> DVector<f64>;

    fn param_kind(&self, _index: usize) -> ParamKind {
        ParamKind::Free
    }
}

/// Adapts a closure into a [`ResidualProblem`].
pub struct FnProblem<F> {
    num_params: usize,
    kinds: Vec<ParamKind>,
    f: F,
}

impl<F> FnProblem<F>
where
    F: Fn(&[f64]) -> DVector<f64>,
{
    pub fn new(num_params: usize, f: F) -> Self {
        Self {
            num_params,
            kinds: vec![ParamKind::Free; num_params],
            f,
        }
    }

    pub fn with_kinds(mut self, kinds: Vec<ParamKind>) -> Self {
        assert_eq!(kinds.len(), self.num_params);
        self.kinds = kinds;
        self
    }
}

impl<F> ResidualProblem for FnProblem<F>
where
    F: Fn(&[f64]) -> DVector<f64>,
{
    fn num_params(&self) -> usize {
        self.num_params
    }

    fn residuals(&self, params: &[f64]) -> DVector<f64> {
        (self.f)(params)
    }

    fn param_kind(&self, index: usize) -> ParamKind {
        self.kinds[index]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSettings {
    pub initial_damping: f64,
    pub damping_increase: f64,
    pub damping_decrease: f64,
    pub max_iterations: usize,
    /// Relative step-norm tolerance.
    pub step_tolerance: f64,
    /// Relative cost-decrease tolerance.
    pub cost_tolerance: f64,
    /// Infinity-norm tolerance on the gradient `J^T r`.
    pub gradient_tolerance: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        Self {
            initial_damping: 1e-3,
            damping_increase: 10.0,
            damping_decrease: 10.0,
            max_iterations: 200,
            step_tolerance: 1e-10,
            cost_tolerance: 1e-12,
            gradient_tolerance: 1e-14,
        }
    }
}

impl LmSettings {
    pub fn validate(&self) -> Result<(), OptimError> {
        let positive = [
            ("initial_damping", self.initial_damping),
            ("damping_increase", self.damping_increase),
            ("damping_decrease", self.damping_decrease),
            ("step_tolerance", self.step_tolerance),
            ("cost_tolerance", self.cost_tolerance),
            ("gradient_tolerance", self.gradient_tolerance),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(OptimError::InvalidSettings(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        if self.damping_increase <= 1.0 || self.damping_decrease <= 1.0 {
            return Err(OptimError::InvalidSettings(
                "damping factors must exceed 1".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(OptimError::InvalidSettings(
                "max_iterations must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    ZeroResidual,
    SmallGradient,
    SmallStep,
    SmallCostDecrease,
    /// Damping grew without finding a decreasing step.
    NoImprovement,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub params: Vec<f64>,
    pub initial_cost: f64,
    pub cost: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Cost after the initial evaluation and after each accepted step.
    pub cost_history: Vec<f64>,
}

impl FitReport {
    pub fn is_monotone(&self) -> bool {
        self.cost_history.windows(2).all(|w| w[1] <= w[0])
    }
}

const MAX_DAMPING: f64 = 1e32;

fn project(problem: &impl ResidualProblem, params: &mut [f64]) {
    for (i, p) in params.iter_mut().enumerate() {
        *p = problem.param_kind(i).project(*p);
    }
}

fn evaluate(problem: &impl ResidualProblem, params: &[f64]) -> Result<DVector<f64>, OptimError> {
    let r = problem.residuals(params);
    if r.iter().all(|v| v.is_finite()) {
        Ok(r)
    } else {
        Err(OptimError::NonFiniteResidual)
    }
}

/// Central-difference Jacobian with step `max(1e-6, 1e-6 * |x_j|)`.
pub fn numeric_jacobian(
    problem: &impl ResidualProblem,
    params: &[f64],
) -> Result<DMatrix<f64>, OptimError> {
    let n = problem.num_params();
    if params.len() != n {
        return Err(OptimError::DimensionMismatch {
            expected: n,
            got: params.len(),
        });
    }
    let mut x = params.to_vec();
    let mut columns = Vec::with_capacity(n);
    for j in 0..n {
        let h = (1e-6 * params[j].abs()).max(1e-6);
        x[j] = params[j] + h;
        let plus = evaluate(problem, &x)?;
        x[j] = params[j] - h;
        let minus = evaluate(problem, &x)?;
        x[j] = params[j];
        columns.push((plus - minus) / (2.0 * h));
    }
    Ok(DMatrix::from_columns(&columns))
}

/// Minimizes `|r(x)|^2` starting from `initial`.
pub fn solve_lm(
    problem: &impl ResidualProblem,
    initial: &[f64],
    settings: &LmSettings,
) -> Result<FitReport, OptimError> {
    settings.validate()?;
    let n = problem.num_params();
    if initial.len() != n {
        return Err(OptimError::DimensionMismatch {
            expected: n,
            got: initial.len(),
        });
    }

    let mut x = initial.to_vec();
    project(problem, &mut x);
    let mut r = evaluate(problem, &x)?;
    let mut cost = r.norm_squared();
    let initial_cost = cost;
    let mut history = vec![cost];

    let report = |x: Vec<f64>, cost: f64, iterations, termination, history: Vec<f64>| FitReport {
        params: x,
        initial_cost,
        cost,
        iterations,
        termination,
        cost_history: history,
    };

    if cost == 0.0 {
        return Ok(report(x, cost, 0, Termination::ZeroResidual, history));
    }

    let mut damping = settings.initial_damping;
    for iteration in 1..=settings.max_iterations {
        let jac = numeric_jacobian(problem, &x)?;
        let gradient = jac.tr_mul(&r);
        if gradient.amax() < settings.gradient_tolerance {
            return Ok(report(
                x,
                cost,
                iteration - 1,
                Termination::SmallGradient,
                history,
            ));
        }
        let normal = jac.tr_mul(&jac);
        let max_diag = normal.diagonal().amax();
        let floor = (max_diag * 1e-12).max(f64::MIN_POSITIVE);

        loop {
            let mut damped = normal.clone();
            for i in 0..n {
                damped[(i, i)] += damping * normal[(i, i)].max(floor);
            }
            let Some(chol) = damped.cholesky() else {
                damping *= settings.damping_increase;
                if damping > MAX_DAMPING {
                    return Err(OptimError::SingularNormalEquations);
                }
                continue;
            };
            let step = -chol.solve(&gradient);
            if step.iter().any(|v| !v.is_finite()) {
                return Err(OptimError::SingularNormalEquations);
            }

            let mut candidate: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            project(problem, &mut candidate);
            let trial = problem.residuals(&candidate);
            let trial_cost = trial.norm_squared();

            if trial_cost.is_finite() && trial_cost < cost {
                let decrease = cost - trial_cost;
                let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let step_small =
                    step.norm() <= settings.step_tolerance * (x_norm + settings.step_tolerance);
                let cost_small = decrease <= settings.cost_tolerance * cost;
                x = candidate;
                r = trial;
                cost = trial_cost;
                history.push(cost);
                damping = (damping / settings.damping_decrease).max(1e-300);
                if cost == 0.0 {
                    return Ok(report(
                        x,
                        cost,
                        iteration,
                        Termination::ZeroResidual,
                        history,
                    ));
                }
                if step_small {
                    return Ok(report(x, cost, iteration, Termination::SmallStep, history));
                }
                if cost_small {
                    return Ok(report(
                        x,
                        cost,
                        iteration,
                        Termination::SmallCostDecrease,
                        history,
                    ));
                }
                break;
            }

            damping *= settings.damping_increase;
            if damping > MAX_DAMPING {
                return Ok(report(
                    x,
                    cost,
                    iteration,
                    Termination::NoImprovement,
                    history,
                ));
            }
        }
    }
    Ok(report(
        x,
        cost,
        settings.max_iterations,
        Termination::MaxIterations,
        history,
    ))
}
