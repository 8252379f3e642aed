use super::solver::{solve_with_forcing, Forcing};
use super::{PathBundle, Population, SchemeConfig};
use crate::error::{input, Result};
use crate::model::ModelSpec;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Bounded error processes, evaluated along the unperturbed state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorProcess {
    Zero,
    Constant { value: f64 },
    Sinusoid { amp: f64, freq: f64 },
    /// amp * tanh(x), coordinatewise.
    StateProportional { amp: f64 },
}

impl ErrorProcess {
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        match *self {
            ErrorProcess::Zero => 0.0,
            ErrorProcess::Constant { value } => value,
            ErrorProcess::Sinusoid { amp, freq } => amp * (2.0 * PI * freq * t).sin(),
            ErrorProcess::StateProportional { amp } => amp * x.tanh(),
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, ErrorProcess::Zero)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSpec {
    pub e1: ErrorProcess,
    pub e2: ErrorProcess,
    pub e3: ErrorProcess,
    /// Shift added to every coordinate of every initial condition.
    pub xi_shift: f64,
}

impl Default for ErrorSpec {
    fn default() -> Self {
        Self {
            e1: ErrorProcess::Zero,
            e2: ErrorProcess::Zero,
            e3: ErrorProcess::Zero,
            xi_shift: 0.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityReport {
    pub players: usize,
    pub sup_dx2: f64,
    pub sup_dy2: f64,
    pub int_dalpha2: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    /// sum_i |Y^i_0 - Ybar^i_0|^2
    pub y0_gap2: f64,
    /// sum_i |xi^i - xibar^i|^2
    pub xi_gap2: f64,
}

/// Solve the N-player system with and without the perturbations on the same
/// paths and compare them.
pub fn perturbed_stability_experiment(
    model: &ModelSpec,
    xi: &[f64],
    paths: &PathBundle,
    scheme: &SchemeConfig,
    errors: &ErrorSpec,
) -> Result<StabilityReport> {
    if !errors.xi_shift.is_finite() {
        return input("non-finite shift");
    }
    let none = Forcing::default();
    let base = solve_with_forcing(model, Population::NPlayer, xi, paths, scheme, &none, None)?;
    let (d, n, steps, dt) = (model.dim, paths.particles, paths.steps, paths.dt);
    let w = n * d;
    let build = |e: &ErrorProcess| -> Option<Vec<f64>> {
        if e.is_zero() {
            return None;
        }
        let mut v = vec![0.0; (steps + 1) * w];
        for k in 0..=steps {
            let t = base.time(k);
            for j in 0..w {
                v[k * w + j] = e.eval(t, base.x[k * w + j]);
            }
        }
        Some(v)
    };
    let e1 = build(&errors.e1);
    let e2 = build(&errors.e2);
    let e3 = if errors.e3.is_zero() {
        None
    } else {
        let t = base.time(steps);
        Some((0..w).map(|j| errors.e3.eval(t, base.x[steps * w + j])).collect::<Vec<_>>())
    };
    let mut rhs = 0.0;
    let sum_sq = |v: &Option<Vec<f64>>, k: usize| -> f64 {
        v.as_ref()
            .map_or(0.0, |v| v[k * w..(k + 1) * w].iter().map(|a| a * a).sum())
    };
    for k in 0..steps {
        rhs += (sum_sq(&e1, k) + sum_sq(&e2, k)) * dt;
    }
    rhs += e3.as_ref().map_or(0.0, |v| v.iter().map(|a| a * a).sum());
    let xi_p: Vec<f64> = xi.iter().map(|v| v + errors.xi_shift).collect();
    let xi_gap2 = (w as f64) * errors.xi_shift * errors.xi_shift;
    rhs += xi_gap2;
    let forcing = Forcing { e1, e2, e3 };
    let pert = solve_with_forcing(model, Population::NPlayer, &xi_p, paths, scheme, &forcing, Some(&base))?;

    let gap = |a: &[f64], b: &[f64], k: usize| -> f64 {
        a[k * w..(k + 1) * w]
            .iter()
            .zip(&b[k * w..(k + 1) * w])
            .map(|(u, v)| (u - v) * (u - v))
            .sum()
    };
    let mut sup_dx2 = 0.0_f64;
    let mut sup_dy2 = 0.0_f64;
    let mut int_da = 0.0;
    for k in 0..=steps {
        sup_dx2 = sup_dx2.max(gap(&base.x, &pert.x, k));
        sup_dy2 = sup_dy2.max(gap(&base.y, &pert.y, k));
        if k < steps {
            int_da += gap(&base.alpha, &pert.alpha, k) * dt;
        }
    }
    let lhs = sup_dx2 + sup_dy2 + int_da;
    Ok(StabilityReport {
        players: n,
        sup_dx2,
        sup_dy2,
        int_dalpha2: int_da,
        lhs,
        rhs,
        ratio: if rhs > 0.0 { lhs / rhs } else { f64::NAN },
        y0_gap2: gap(&base.y, &pert.y, 0),
        xi_gap2,
    })
}
