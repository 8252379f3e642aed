use super::regression::{features_into, lstsq, monomials};
use super::FbsdeSolution;
use crate::error::{input, Result};
use crate::measures::column_mean;
use nalgebra::DMatrix;
use serde::Serialize;

/// Per-step polynomial fit y = Psi(t_k, x) on a solution's cross-sections,
/// together with the moments of the cloud it was fitted on.
#[derive(Clone, Debug, Serialize)]
pub struct DecouplingField {
    pub dim: usize,
    pub degree: usize,
    pub dt: f64,
    /// Coefficients per step, feature-major (feature j, output c at j*dim+c).
    pub coef: Vec<Vec<f64>>,
    pub mean_x: Vec<Vec<f64>>,
    pub second_moment: Vec<f64>,
    /// In-sample sum |y - fit|^2 / sum |y|^2 per step (0 when y vanishes).
    pub relative_residual: Vec<f64>,
    pub rank_deficient_steps: usize,
    #[serde(skip)]
    exps: Vec<Vec<u32>>,
}

impl DecouplingField {
    pub fn steps(&self) -> usize {
        self.coef.len() - 1
    }

    pub fn eval(&self, k: usize, x: &[f64]) -> Vec<f64> {
        let mut feat = vec![0.0; self.exps.len()];
        features_into(&self.exps, x, &mut feat);
        (0..self.dim)
            .map(|c| {
                feat.iter()
                    .enumerate()
                    .map(|(j, f)| f * self.coef[k][j * self.dim + c])
                    .sum()
            })
            .collect()
    }

    /// Coefficient of x_c in output c at step k (the linear slope).
    pub fn slope(&self, k: usize, c: usize) -> f64 {
        self.coef[k][(1 + c) * self.dim + c]
    }

    pub fn max_relative_residual(&self) -> f64 {
        self.relative_residual.iter().copied().fold(0.0, f64::max)
    }

    /// Smallest C with |Psi(t_k, x)| <= C (1 + |x| + M2^(1/2)) over the
    /// fitted clouds.
    pub fn growth_constant(&self, sol: &FbsdeSolution) -> f64 {
        let mut c = 0.0_f64;
        for k in 0..=self.steps() {
            for i in 0..sol.particles {
                let x = sol.x_at(k, i);
                let v = self.eval(k, x);
                let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
                c = c.max(nv / (1.0 + nx + self.second_moment[k].sqrt()));
            }
        }
        c
    }
}

pub fn regress_decoupling_field(sol: &FbsdeSolution, degree: usize) -> Result<DecouplingField> {
    if degree > 2 {
        return input("basis degree must be at most 2");
    }
    let (d, n) = (sol.dim, sol.particles);
    let exps = monomials(d, degree);
    let nf = exps.len();
    let mut coef = Vec::with_capacity(sol.steps + 1);
    let mut mean_x = Vec::with_capacity(sol.steps + 1);
    let mut second = Vec::with_capacity(sol.steps + 1);
    let mut rel = Vec::with_capacity(sol.steps + 1);
    let mut deficient = 0;
    let mut feat = vec![0.0; nf];
    for k in 0..=sol.steps {
        let xs = sol.x_section(k);
        let ys = sol.y_section(k);
        let mut a = DMatrix::<f64>::zeros(n, nf);
        let b = DMatrix::from_row_slice(n, d, ys);
        for i in 0..n {
            features_into(&exps, &xs[i * d..(i + 1) * d], &mut feat);
            for j in 0..nf {
                a[(i, j)] = feat[j];
            }
        }
        let (c, rank) = lstsq(a.clone(), &b);
        if rank < nf {
            deficient += 1;
        }
        let fit = &a * &c;
        let num: f64 = (&fit - &b).iter().map(|v| v * v).sum();
        let den: f64 = b.iter().map(|v| v * v).sum();
        rel.push(if den > 0.0 { num / den } else { num });
        let mut row = vec![0.0; nf * d];
        for j in 0..nf {
            for cc in 0..d {
                row[j * d + cc] = c[(j, cc)];
            }
        }
        coef.push(row);
        mean_x.push(column_mean(xs, d));
        second.push(xs.iter().map(|v| v * v).sum::<f64>() / n as f64);
    }
    if deficient > 0 {
        log::warn!("decoupling regression rank deficient on {deficient} step(s); reduced basis used");
    }
    Ok(DecouplingField {
        dim: d,
        degree,
        dt: sol.dt,
        coef,
        mean_x,
        second_moment: second,
        relative_residual: rel,
        rank_deficient_steps: deficient,
        exps,
    })
}
