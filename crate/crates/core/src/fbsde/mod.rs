//! Particle solvers for the mean-field and N-player forward-backward systems.

mod continuation;
mod decoupling;
mod paths;
pub mod regression;
mod solver;
mod stability;

pub use continuation::{solve_continuation, ContinuationReport};
pub use decoupling::{regress_decoupling_field, DecouplingField};
pub use paths::{generate_paths, PathBundle};
pub use solver::{solve_meanfield, solve_nplayer, solve_with_forcing, Forcing, Residuals};
pub use stability::{perturbed_stability_experiment, ErrorProcess, ErrorSpec, StabilityReport};

use crate::error::{input, Result};
use crate::fixedpoint::FixedPointConfig;
use crate::measures::{csv_err, EmpiricalMeasure};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeConfig {
    pub dt: f64,
    pub picard_tol: f64,
    pub picard_max: usize,
    pub basis_degree: usize,
    /// Relaxation of the regression coefficients between Picard sweeps.
    pub damping: f64,
    pub lambda_steps: usize,
    pub fixed_point: FixedPointConfig,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            dt: 1e-2,
            picard_tol: 1e-8,
            picard_max: 100,
            basis_degree: 2,
            damping: 1.0,
            lambda_steps: 10,
            fixed_point: FixedPointConfig::default(),
        }
    }
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return input("dt must be positive");
        }
        if !(self.picard_tol > 0.0) || self.picard_max == 0 {
            return input("picard tolerance and cap must be positive");
        }
        if self.basis_degree > 2 {
            return input("basis degree must be at most 2");
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return input("damping must lie in (0, 1]");
        }
        if self.lambda_steps == 0 {
            return input("lambda_steps must be positive");
        }
        Ok(())
    }

    /// Number of grid steps covering `horizon`.
    pub fn steps_for(&self, horizon: f64) -> Result<usize> {
        let s = (horizon / self.dt).round();
        if s < 1.0 || ((s * self.dt) - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return input(format!("dt {} does not divide the horizon {horizon}", self.dt));
        }
        Ok(s as usize)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Population {
    /// Particles interact through Phi applied to the whole cloud.
    MeanField,
    /// Players interact through a^N and leave-one-out measures.
    NPlayer,
}

/// Paths on the grid t_k = k dt, k = 0..=steps, stored time-major:
/// entry (k, i, c) lives at ((k * particles) + i) * dim + c.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FbsdeSolution {
    pub population: Population,
    pub dim: usize,
    pub particles: usize,
    pub steps: usize,
    pub dt: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Equilibrium controls from the fixed point at each step.
    pub alpha: Vec<f64>,
    /// Regression coefficients of Y_k on the state basis, per step.
    pub beta: Vec<Vec<f64>>,
    /// Sensitivity of Y to a common shift of all states, dim x dim per
    /// step k = 0..=steps.
    pub gamma: Vec<Vec<f64>>,
    /// Loadings of Y_{k+1} on the centred own increment (dim x dim, row
    /// per output), per step k < steps.
    pub z_own: Vec<Vec<f64>>,
    /// Loadings on the aggregate shocks (common increment, then mean
    /// idiosyncratic increment), dim x 2 dim per step k < steps.
    pub z_aggregate: Vec<Vec<f64>>,
    pub picard_history: Vec<f64>,
    pub iterations: usize,
    pub terminal_residual: f64,
    /// Largest fixed-point certificate met along the final sweep.
    pub fixed_point_residual: f64,
}

impl FbsdeSolution {
    fn at(&self, k: usize, i: usize) -> std::ops::Range<usize> {
        let s = (k * self.particles + i) * self.dim;
        s..s + self.dim
    }

    pub fn x_at(&self, k: usize, i: usize) -> &[f64] {
        &self.x[self.at(k, i)]
    }

    pub fn y_at(&self, k: usize, i: usize) -> &[f64] {
        &self.y[self.at(k, i)]
    }

    pub fn alpha_at(&self, k: usize, i: usize) -> &[f64] {
        &self.alpha[self.at(k, i)]
    }

    fn section(&self, k: usize) -> std::ops::Range<usize> {
        let w = self.particles * self.dim;
        k * w..(k + 1) * w
    }

    pub fn x_section(&self, k: usize) -> &[f64] {
        &self.x[self.section(k)]
    }

    pub fn y_section(&self, k: usize) -> &[f64] {
        &self.y[self.section(k)]
    }

    pub fn alpha_section(&self, k: usize) -> &[f64] {
        &self.alpha[self.section(k)]
    }

    /// Empirical state-control measure at step k.
    pub fn measure(&self, k: usize) -> EmpiricalMeasure {
        EmpiricalMeasure::new(
            self.dim,
            self.x_section(k).to_vec(),
            self.alpha_section(k).to_vec(),
        )
        .expect("solution clouds are well formed")
    }

    pub fn time(&self, k: usize) -> f64 {
        self.dt * k as f64
    }

    /// Mean over particles of Y at t = 0.
    pub fn y0_mean(&self) -> Vec<f64> {
        crate::measures::column_mean(self.y_section(0), self.dim)
    }

    /// One row per (step, particle): t, k, i, x.., y.., alpha..
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = vec!["t".to_string(), "step".into(), "particle".into()];
        for name in ["x", "y", "alpha"] {
            header.extend((0..self.dim).map(|c| format!("{name}{c}")));
        }
        w.write_record(&header).map_err(csv_err)?;
        for k in 0..=self.steps {
            for i in 0..self.particles {
                let mut row = vec![self.time(k).to_string(), k.to_string(), i.to_string()];
                for v in [self.x_at(k, i), self.y_at(k, i), self.alpha_at(k, i)] {
                    row.extend(v.iter().map(f64::to_string));
                }
                w.write_record(&row).map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> SolutionSummary {
        SolutionSummary {
            population: self.population,
            dim: self.dim,
            particles: self.particles,
            steps: self.steps,
            dt: self.dt,
            iterations: self.iterations,
            picard_history: self.picard_history.clone(),
            terminal_residual: self.terminal_residual,
            fixed_point_residual: self.fixed_point_residual,
            y0_mean: self.y0_mean(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub population: Population,
    pub dim: usize,
    pub particles: usize,
    pub steps: usize,
    pub dt: f64,
    pub iterations: usize,
    pub picard_history: Vec<f64>,
    pub terminal_residual: f64,
    pub fixed_point_residual: f64,
    pub y0_mean: Vec<f64>,
}
