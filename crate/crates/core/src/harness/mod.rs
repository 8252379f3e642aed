//! Experiment orchestration: convergence-rate runs, rate fitting and report
//! emission.

pub mod config;
pub mod rate;
pub mod report;

pub use config::{Backend, ExperimentConfig, InitialLaw, Metric};
pub use rate::{
    run_closedloop_gap, run_closedloop_gap_with_model, run_openloop_convergence,
    run_openloop_with_model, CellFailure, Criterion, MetricTable, RateReport, Row,
};
pub use report::{write_outputs, OutputFormat, Table};

use crate::error::{input, Error, Result};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% confidence interval on the slope.
    pub ci_low: f64,
    pub ci_high: f64,
}

impl RateFit {
    pub fn contains(&self, slope: f64) -> bool {
        (self.ci_low..=self.ci_high).contains(&slope)
    }
}

/// Ordinary least squares of log(value) on log(N) with a Student-t interval.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return input("rate fitting needs at least three points");
    }
    if let Some(p) = points.iter().find(|p| !(p.0 > 0.0 && p.1 > 0.0) || !p.1.is_finite()) {
        return Err(Error::Domain(format!("non-positive point ({}, {})", p.0, p.1)));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("all N values coincide".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let dof = n - 2.0;
    let se = (sse / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::Domain(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(RateFit {
        slope,
        intercept,
        ci_low: slope - t * se,
        ci_high: slope + t * se,
    })
}
