use super::solver::{run, Forcing, System};
use super::{FbsdeSolution, PathBundle, Population, SchemeConfig};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct ContinuationReport {
    #[serde(skip)]
    pub solution: FbsdeSolution,
    pub c_la: f64,
    pub lambdas: Vec<f64>,
    /// Outer contraction iterations needed at each lambda > 0.
    pub outer_iterations: Vec<usize>,
}

/// Mean-field system solved by continuation in lambda from the decoupled
/// linear system (drift -c y, no driver, zero terminal condition).
///
/// At each lambda the map that solves the previous system with the
/// lambda-increment of the coefficients frozen along the current iterate is
/// iterated to tolerance, warm-started from the previous lambda.
pub fn solve_continuation(
    model: &ModelSpec,
    xi: &[f64],
    paths: &PathBundle,
    scheme: &SchemeConfig,
) -> Result<ContinuationReport> {
    let c_la = model.convexity_margin();
    let none = Forcing::default();
    let base = System {
        model,
        population: Population::MeanField,
        lambda: 0.0,
        c_la,
        forcing: &none,
        fp: scheme.fixed_point,
        sens_lambda: None,
    };
    let mut sol = run(&base, xi, paths, scheme, None)?;
    let plain = System::plain(model, Population::MeanField, &none, scheme.fixed_point);
    let steps = scheme.lambda_steps;
    let mut lambdas = vec![0.0];
    let mut outer = Vec::with_capacity(steps);
    let w = paths.particles * model.dim;
    for j in 1..=steps {
        let lambda0 = (j - 1) as f64 / steps as f64;
        let delta = 1.0 / steps as f64;
        let mut converged = None;
        let mut history = Vec::new();
        for u in 1..=scheme.picard_max {
            let mut e1 = vec![0.0; sol.x.len()];
            let mut e2 = vec![0.0; sol.x.len()];
            for k in 0..=sol.steps {
                let r = k * w..(k + 1) * w;
                for q in r.clone() {
                    e1[q] = delta * (sol.alpha[q] + c_la * sol.y[q]);
                }
                plain.driver(k, &sol.x[r.clone()], &sol.alpha[r.clone()], &mut e2[r.clone()]);
                e2[r].iter_mut().for_each(|v| *v *= delta);
            }
            let mut e3 = vec![0.0; w];
            plain.terminal(&sol.x[sol.steps * w..], &mut e3);
            e3.iter_mut().for_each(|v| *v *= delta);
            let forcing = Forcing {
                e1: Some(e1),
                e2: Some(e2),
                e3: Some(e3),
            };
            let sys = System {
                model,
                population: Population::MeanField,
                lambda: lambda0,
                c_la,
                forcing: &forcing,
                fp: scheme.fixed_point,
                sens_lambda: Some(lambda0 + delta),
            };
            let next = run(&sys, xi, paths, scheme, Some(&sol)).map_err(|e| Error::Stall {
                lambda: lambda0,
                source: Box::new(e),
            })?;
            let num: f64 = next.y.iter().zip(&sol.y).map(|(a, b)| (a - b) * (a - b)).sum();
            let den: f64 = next.y.iter().map(|a| a * a).sum::<f64>().max(1e-300);
            let rel = num / den;
            history.push(rel);
            sol = next;
            if rel <= scheme.picard_tol {
                converged = Some(u);
                break;
            }
        }
        match converged {
            Some(u) => outer.push(u),
            None => {
                return Err(Error::Stall {
                    lambda: lambda0,
                    source: Box::new(Error::NoConvergence {
                        kind: "continuation",
                        iterations: history.len(),
                        residual: history.last().copied().unwrap_or(f64::NAN),
                        history,
                    }),
                })
            }
        }
        lambdas.push(lambda0 + delta);
    }
    Ok(ContinuationReport {
        solution: sol,
        c_la,
        lambdas,
        outer_iterations: outer,
    })
}
