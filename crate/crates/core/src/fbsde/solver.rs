use super::regression::{features_into, lstsq, monomials};
use super::{FbsdeSolution, PathBundle, Population, SchemeConfig};
use crate::error::{input, Error, Result};
use crate::fixedpoint::{a_n_in_place, phi_in_place, FixedPointConfig};
use crate::measures::{column_mean, Moments};
use crate::model::ModelSpec;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Additive perturbations of the drift (e1), driver (e2) and terminal
/// condition (e3). e1 and e2 use the time-major solution layout, e3 one
/// cross-section.
#[derive(Clone, Debug, Default)]
pub struct Forcing {
    pub e1: Option<Vec<f64>>,
    pub e2: Option<Vec<f64>>,
    pub e3: Option<Vec<f64>>,
}

/// Homotopy-deformed system: drift lambda b - c (1 - lambda) y, driver
/// lambda f, terminal lambda g, plus forcing.
pub(crate) struct System<'a> {
    pub model: &'a ModelSpec,
    pub population: Population,
    pub lambda: f64,
    pub c_la: f64,
    pub forcing: &'a Forcing,
    pub fp: FixedPointConfig,
    /// Homotopy parameter whose coefficients the forcing completes; the
    /// common-shift sensitivities are then taken from that unforced system.
    pub sens_lambda: Option<f64>,
}

impl System<'_> {
    pub fn plain<'a>(model: &'a ModelSpec, population: Population, forcing: &'a Forcing, fp: FixedPointConfig) -> System<'a> {
        System {
            model,
            population,
            lambda: 1.0,
            c_la: 0.0,
            forcing,
            fp,
            sens_lambda: None,
        }
    }

    fn linearized<'b>(&'b self, none: &'b Forcing) -> System<'b> {
        match self.sens_lambda {
            Some(lambda) => System {
                model: self.model,
                population: self.population,
                lambda,
                c_la: self.c_la,
                forcing: none,
                fp: self.fp,
                sens_lambda: None,
            },
            None => System { forcing: self.forcing, ..*self },
        }
    }

    /// Equilibrium controls for the cross-section (x, y); `alpha` is the warm
    /// start. Returns the fixed-point certificate.
    pub fn controls(&self, x: &[f64], y: &[f64], alpha: &mut [f64]) -> Result<f64> {
        let r = match self.population {
            Population::MeanField => phi_in_place(self.model, x, y, alpha, &self.fp)?,
            Population::NPlayer => a_n_in_place(self.model, x, y, alpha, &self.fp)?,
        };
        Ok(r.0)
    }

    fn moments_for(&self, x: &[f64], alpha: &[f64], i: usize, full: &Moments, m: &mut Moments) {
        let d = self.model.dim;
        match self.population {
            Population::MeanField => m.clone_from(full),
            Population::NPlayer => {
                let n = (x.len() / d) as f64;
                for k in 0..d {
                    m.mean_x[k] = (full.mean_x[k] * n - x[i * d + k]) / (n - 1.0);
                    m.mean_a[k] = (full.mean_a[k] * n - alpha[i * d + k]) / (n - 1.0);
                }
            }
        }
    }

    /// Backward driver lambda D_x H + e2 at step k.
    pub fn driver(&self, k: usize, x: &[f64], alpha: &[f64], out: &mut [f64]) {
        let d = self.model.dim;
        let full = Moments {
            mean_x: column_mean(x, d),
            mean_a: column_mean(alpha, d),
        };
        let mut m = Moments::zeros(d);
        let w = x.len();
        for i in 0..x.len() / d {
            let r = i * d..(i + 1) * d;
            self.moments_for(x, alpha, i, &full, &mut m);
            self.model
                .grad_x_l_into(&x[r.clone()], &alpha[r.clone()], &m, &mut out[r]);
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o *= -self.lambda;
            if let Some(e2) = &self.forcing.e2 {
                *o += e2[k * w + j];
            }
        }
    }

    /// Forward drift lambda alpha - c (1 - lambda) y + e1 at step k.
    pub fn drift(&self, k: usize, y: &[f64], alpha: &[f64], out: &mut [f64]) {
        let w = y.len();
        for j in 0..w {
            out[j] = self.lambda * alpha[j] - self.c_la * (1.0 - self.lambda) * y[j];
            if let Some(e1) = &self.forcing.e1 {
                out[j] += e1[k * w + j];
            }
        }
    }

    /// Terminal condition lambda D_x G + e3.
    pub fn terminal(&self, x: &[f64], out: &mut [f64]) {
        let d = self.model.dim;
        let n = x.len() / d;
        let full = column_mean(x, d);
        let mut mx = vec![0.0; d];
        for i in 0..n {
            let r = i * d..(i + 1) * d;
            match self.population {
                Population::MeanField => mx.copy_from_slice(&full),
                Population::NPlayer => {
                    for k in 0..d {
                        mx[k] = (full[k] * n as f64 - x[i * d + k]) / (n as f64 - 1.0);
                    }
                }
            }
            self.model.grad_x_g_into(&x[r.clone()], &mx, &mut out[r]);
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o *= self.lambda;
            if let Some(e3) = &self.forcing.e3 {
                *o += e3[j];
            }
        }
    }
}

fn check_inputs(
    model: &ModelSpec,
    population: Population,
    xi: &[f64],
    paths: &PathBundle,
    scheme: &SchemeConfig,
) -> Result<()> {
    model.validate()?;
    scheme.validate()?;
    if paths.dim != model.dim {
        return input("path bundle dimension differs from the model");
    }
    if (paths.horizon() - model.horizon).abs() > 1e-9 * model.horizon {
        return input(format!(
            "path horizon {} differs from the model horizon {}",
            paths.horizon(),
            model.horizon
        ));
    }
    if xi.len() != paths.particles * model.dim {
        return input("initial condition does not match the particle count");
    }
    if xi.iter().any(|v| !v.is_finite()) {
        return input("non-finite initial condition");
    }
    if population == Population::NPlayer && paths.particles < 2 {
        return input("the N-player system needs at least two players");
    }
    Ok(())
}

/// Aggregate shocks at step k: common increment (if sigma0 > 0) and the
/// mean idiosyncratic increment, packed into 2 dim slots.
fn shocks(paths: &PathBundle, k: usize, sigma0: f64) -> Vec<f64> {
    let d = paths.dim;
    let mut s = vec![0.0; 2 * d];
    if sigma0 > 0.0 {
        s[..d].copy_from_slice(paths.dw0(k));
    }
    s[d..].copy_from_slice(&paths.mean_dw(k));
    s
}

/// Common shift used to differentiate the fitted intercept in the measure
/// direction.
const SHIFT: f64 = 1e-4;

/// Y = beta . phi(x) for every particle of a cross-section.
fn eval_field(exps: &[Vec<u32>], beta: &[f64], x: &[f64], d: usize, out: &mut [f64]) {
    let nf = exps.len();
    let mut feat = vec![0.0; nf];
    for i in 0..x.len() / d {
        features_into(exps, &x[i * d..(i + 1) * d], &mut feat);
        for c in 0..d {
            out[i * d + c] = (0..nf).map(|j| feat[j] * beta[j * d + c]).sum();
        }
    }
}

/// Add gamma (xbar - xbar_fit) to every particle's Y.
fn shift_field(gamma: &[f64], xbar: &[f64], xbar_fit: &[f64], d: usize, y: &mut [f64]) {
    for yi in y.chunks_mut(d) {
        for c in 0..d {
            yi[c] += (0..d).map(|q| gamma[c * d + q] * (xbar[q] - xbar_fit[q])).sum::<f64>();
        }
    }
}

/// Regress targets on the state basis and, at steps with noise, on the
/// centred own increments. Rows of the result: basis, then noise loadings.
fn fit_cross_section(
    exps: &[Vec<u32>],
    x: &[f64],
    target: &[f64],
    paths: &PathBundle,
    step: Option<usize>,
    d: usize,
) -> (DMatrix<f64>, usize) {
    let n = x.len() / d;
    let nf = exps.len();
    let extra = if step.is_some() { d } else { 0 };
    let mut a = DMatrix::<f64>::zeros(n, nf + extra);
    let mut b = DMatrix::<f64>::zeros(n, d);
    let mut feat = vec![0.0; nf];
    let mean_dw = step.map(|k| paths.mean_dw(k));
    for i in 0..n {
        features_into(exps, &x[i * d..(i + 1) * d], &mut feat);
        for j in 0..nf {
            a[(i, j)] = feat[j];
        }
        for c in 0..d {
            if let (Some(k), Some(m)) = (step, &mean_dw) {
                a[(i, nf + c)] = paths.dw(i, k)[c] - m[c];
            }
            b[(i, c)] = target[i * d + c];
        }
    }
    lstsq(a, &b)
}

/// The field at step k + 1 seen from step k.
enum Next<'a> {
    Terminal,
    Field {
        beta: &'a [f64],
        gamma: &'a [f64],
        xbar_fit: &'a [f64],
        alpha: &'a [f64],
    },
}

/// Sensitivity gamma_k (dim x dim, row-major) of the fitted intercept at
/// step k to a common shift of the cross-section, by central differences
/// through one step of the scheme on the same increments.
#[allow(clippy::too_many_arguments)]
fn shift_sensitivity(
    sys: &System,
    exps: &[Vec<u32>],
    paths: &PathBundle,
    k: usize,
    xk: &[f64],
    alpha_k: &[f64],
    beta_k: &[f64],
    gamma_k: &[f64],
    next: &Next,
) -> Result<Vec<f64>> {
    let none = Forcing::default();
    let sys = &sys.linearized(&none);
    let d = sys.model.dim;
    let w = xk.len();
    let n = w / d;
    let dt = paths.dt;
    let sq2 = 2f64.sqrt();
    let sq2s0 = (2.0 * sys.model.sigma0).sqrt();
    let mut g = vec![0.0; d * d];
    let mut xs = vec![0.0; w];
    let mut ys = vec![0.0; w];
    let mut dr = vec![0.0; w];
    let mut xn = vec![0.0; w];
    let mut yn = vec![0.0; w];
    let mut fnext = vec![0.0; w];
    for q in 0..d {
        let mut icpt = [vec![0.0; d], vec![0.0; d]];
        for (side, sign) in [1.0, -1.0].into_iter().enumerate() {
            let delta = sign * SHIFT;
            xs.copy_from_slice(xk);
            xs.iter_mut().skip(q).step_by(d).for_each(|v| *v += delta);
            eval_field(exps, beta_k, &xs, d, &mut ys);
            for yi in ys.chunks_mut(d) {
                for c in 0..d {
                    yi[c] += gamma_k[c * d + q] * delta;
                }
            }
            let mut a = alpha_k.to_vec();
            sys.controls(&xs, &ys, &mut a)?;
            sys.drift(k, &ys, &a, &mut dr);
            let dw0 = paths.dw0(k);
            for i in 0..n {
                let dwi = paths.dw(i, k);
                for c in 0..d {
                    let j = i * d + c;
                    xn[j] = xs[j] + dr[j] * dt + sq2 * dwi[c] + sq2s0 * dw0[c];
                }
            }
            let mut an = match next {
                Next::Terminal => {
                    sys.terminal(&xn, &mut yn);
                    a
                }
                Next::Field { beta, gamma, xbar_fit, alpha } => {
                    eval_field(exps, beta, &xn, d, &mut yn);
                    shift_field(gamma, &column_mean(&xn, d), xbar_fit, d, &mut yn);
                    alpha.to_vec()
                }
            };
            sys.controls(&xn, &yn, &mut an)?;
            sys.driver(k + 1, &xn, &an, &mut fnext);
            let target: Vec<f64> = yn.iter().zip(&fnext).map(|(y, f)| y - f * dt).collect();
            let (coef, _) = fit_cross_section(exps, &xs, &target, paths, Some(k), d);
            for c in 0..d {
                icpt[side][c] = coef[(0, c)];
            }
        }
        for c in 0..d {
            g[c * d + q] = (icpt[0][c] - icpt[1][c]) / (2.0 * SHIFT);
        }
    }
    Ok(g)
}

/// Sensitivity of the terminal condition's intercept to a common shift.
fn terminal_sensitivity(sys: &System, exps: &[Vec<u32>], paths: &PathBundle, xt: &[f64]) -> Vec<f64> {
    let none = Forcing::default();
    let sys = &sys.linearized(&none);
    let d = sys.model.dim;
    let mut g = vec![0.0; d * d];
    let mut xs = vec![0.0; xt.len()];
    let mut ys = vec![0.0; xt.len()];
    for q in 0..d {
        let mut icpt = [vec![0.0; d], vec![0.0; d]];
        for (side, sign) in [1.0, -1.0].into_iter().enumerate() {
            xs.copy_from_slice(xt);
            xs.iter_mut().skip(q).step_by(d).for_each(|v| *v += sign * SHIFT);
            sys.terminal(&xs, &mut ys);
            let (coef, _) = fit_cross_section(exps, &xs, &ys, paths, None, d);
            for c in 0..d {
                icpt[side][c] = coef[(0, c)];
            }
        }
        for c in 0..d {
            g[c * d + q] = (icpt[0][c] - icpt[1][c]) / (2.0 * SHIFT);
        }
    }
    g
}

/// Largest basis up to `degree` leaving at least two residual degrees of
/// freedom in the cross-sectional regression.
pub(crate) fn basis_for(d: usize, n: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut deg = degree;
    while deg > 0 && monomials(d, deg).len() + d + 2 > n {
        deg -= 1;
    }
    if deg < degree {
        log::warn!("{n} particles support basis degree {deg} only (requested {degree})");
    }
    monomials(d, deg)
}

pub(crate) fn run(
    sys: &System,
    xi: &[f64],
    paths: &PathBundle,
    scheme: &SchemeConfig,
    warm: Option<&FbsdeSolution>,
) -> Result<FbsdeSolution> {
    let model = sys.model;
    check_inputs(model, sys.population, xi, paths, scheme)?;
    let (d, n, steps, dt) = (model.dim, paths.particles, paths.steps, paths.dt);
    let w = n * d;
    let exps = basis_for(d, n, scheme.basis_degree);
    let nf = exps.len();
    let sq2 = 2f64.sqrt();
    let sq2s0 = (2.0 * model.sigma0).sqrt();
    let s0 = model.sigma0.sqrt();

    let sh: Vec<Vec<f64>> = (0..steps).map(|k| shocks(paths, k, model.sigma0)).collect();
    let mut x = vec![0.0; (steps + 1) * w];
    let mut y = vec![0.0; (steps + 1) * w];
    let mut alpha = vec![0.0; (steps + 1) * w];
    let mut f = vec![0.0; (steps + 1) * w];
    let mut beta: Vec<Vec<f64>> = vec![vec![0.0; nf * d]; steps];
    let mut gamma: Vec<Vec<f64>> = vec![vec![0.0; d * d]; steps + 1];
    let mut xbar_fit: Vec<Vec<f64>> = vec![vec![0.0; d]; steps + 1];
    let mut have_beta = false;
    if let Some(ws) = warm {
        if ws.particles == n && ws.steps == steps && ws.dim == d && ws.beta.len() == steps {
            if ws.beta.iter().all(|b| b.len() == nf * d) && ws.gamma.len() == steps + 1 {
                beta.clone_from(&ws.beta);
                gamma.clone_from(&ws.gamma);
                for (k, m) in xbar_fit.iter_mut().enumerate() {
                    *m = column_mean(ws.x_section(k), d);
                }
                have_beta = true;
            }
            alpha.clone_from(&ws.alpha);
        }
    }
    let mut z_own = vec![vec![0.0; d * d]; steps];
    let mut z_agg = vec![vec![0.0; d * 2 * d]; steps];
    let mut history = Vec::new();
    let mut y_prev = vec![0.0; (steps + 1) * w];
    let mut drift = vec![0.0; w];
    let mut fp_worst;
    let mut deficient = 0usize;

    for iter in 1..=scheme.picard_max {
        // forward sweep with the current feedback
        x[..w].copy_from_slice(xi);
        for k in 0..steps {
            let (xs, xr) = x.split_at_mut((k + 1) * w);
            let xk = &xs[k * w..];
            let yk = &mut y[k * w..(k + 1) * w];
            if have_beta {
                eval_field(&exps, &beta[k], xk, d, yk);
                shift_field(&gamma[k], &column_mean(xk, d), &xbar_fit[k], d, yk);
            } else {
                yk.iter_mut().for_each(|v| *v = 0.0);
            }
            let ak = &mut alpha[k * w..(k + 1) * w];
            sys.controls(xk, yk, ak)?;
            sys.drift(k, yk, ak, &mut drift);
            let dw0 = paths.dw0(k);
            let xn = &mut xr[..w];
            for i in 0..n {
                let dwi = paths.dw(i, k);
                for c in 0..d {
                    let j = i * d + c;
                    xn[j] = xk[j] + drift[j] * dt + sq2 * dwi[c] + sq2s0 * dw0[c];
                }
            }
        }

        // backward sweep
        fp_worst = 0.0_f64;
        {
            let (xs, ys) = (&x[steps * w..], &mut y[steps * w..]);
            sys.terminal(xs, ys);
            let ak = &mut alpha[steps * w..];
            fp_worst = fp_worst.max(sys.controls(xs, ys, ak)?);
            sys.driver(steps, xs, ak, &mut f[steps * w..]);
            gamma[steps] = terminal_sensitivity(sys, &exps, paths, xs);
            xbar_fit[steps] = column_mean(xs, d);
        }
        for k in (0..steps).rev() {
            // targets T^i_k = Y_{k+1} - f_{k+1} dt
            let target: Vec<f64> = (0..w)
                .map(|j| y[(k + 1) * w + j] - f[(k + 1) * w + j] * dt)
                .collect();
            let s = &sh[k];
            let xk = &x[k * w..(k + 1) * w];
            let (mut coef, rank) = fit_cross_section(&exps, xk, &target, paths, Some(k), d);
            if rank < nf + d.min(n.saturating_sub(1)) {
                deficient += 1;
            }
            // Loadings on the aggregate shocks: the states move by
            // sqrt(2) dW^i + sqrt(2 sigma0) dW^0 and the mean state by
            // sqrt(2) <dW> + sqrt(2 sigma0) dW^0.
            for c in 0..d {
                for q in 0..d {
                    let z = coef[(nf + q, c)];
                    let g = gamma[k + 1][c * d + q];
                    z_own[k][c * d + q] = z;
                    z_agg[k][c * 2 * d + q] = s0 * z + sq2s0 * g;
                    z_agg[k][c * 2 * d + d + q] = z + sq2 * g;
                }
                // the constant feature comes first
                coef[(0, c)] -= (0..2 * d).map(|q| z_agg[k][c * 2 * d + q] * s[q]).sum::<f64>();
            }
            let theta = if have_beta { scheme.damping } else { 1.0 };
            for j in 0..nf {
                for c in 0..d {
                    let v = coef[(j, c)];
                    beta[k][j * d + c] = theta * v + (1.0 - theta) * beta[k][j * d + c];
                }
            }
            let (head, tail) = alpha.split_at_mut((k + 1) * w);
            let ak = &mut head[k * w..];
            let next = if k + 1 == steps {
                Next::Terminal
            } else {
                Next::Field {
                    beta: &beta[k + 1],
                    gamma: &gamma[k + 1],
                    xbar_fit: &xbar_fit[k + 1],
                    alpha: &tail[..w],
                }
            };
            let g = shift_sensitivity(sys, &exps, paths, k, xk, ak, &beta[k], &gamma[k], &next)?;
            let yk = &mut y[k * w..(k + 1) * w];
            eval_field(&exps, &beta[k], xk, d, yk);
            fp_worst = fp_worst.max(sys.controls(xk, yk, ak)?);
            sys.driver(k, xk, ak, &mut f[k * w..(k + 1) * w]);
            gamma[k] = g;
            xbar_fit[k] = column_mean(xk, d);
        }
        have_beta = true;

        let num: f64 = y.iter().zip(&y_prev).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = y.iter().map(|a| a * a).sum::<f64>().max(y_prev.iter().map(|a| a * a).sum());
        let rel = if num == 0.0 { 0.0 } else { num / den };
        history.push(rel);
        y_prev.copy_from_slice(&y);
        if !rel.is_finite() {
            break;
        }
        if rel <= scheme.picard_tol && iter > 1 {
            if deficient > 0 {
                log::warn!("regression design was rank deficient on {deficient} step(s); reduced basis used");
            }
            let terminal_residual = terminal_gap(sys, &x[steps * w..], &y[steps * w..]);
            return Ok(FbsdeSolution {
                population: sys.population,
                dim: d,
                particles: n,
                steps,
                dt,
                x,
                y,
                alpha,
                beta,
                gamma,
                z_own,
                z_aggregate: z_agg,
                iterations: iter,
                picard_history: history,
                terminal_residual,
                fixed_point_residual: fp_worst,
            });
        }
        deficient = 0;
    }
    let residual = history.last().copied().unwrap_or(f64::NAN);
    Err(Error::NoConvergence {
        kind: "picard",
        iterations: history.len(),
        residual,
        history,
    })
}

fn terminal_gap(sys: &System, x: &[f64], y: &[f64]) -> f64 {
    let mut g = vec![0.0; x.len()];
    sys.terminal(x, &mut g);
    g.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Mean-field system: particles interact through Phi on the whole cloud.
pub fn solve_meanfield(
    model: &ModelSpec,
    xi: &[f64],
    paths: &PathBundle,
    scheme: &SchemeConfig,
) -> Result<FbsdeSolution> {
    let forcing = Forcing::default();
    let sys = System::plain(model, Population::MeanField, &forcing, scheme.fixed_point);
    run(&sys, xi, paths, scheme, None)
}

/// N-player Pontryagin system: players interact through a^N.
pub fn solve_nplayer(
    model: &ModelSpec,
    xi: &[f64],
    paths: &PathBundle,
    scheme: &SchemeConfig,
) -> Result<FbsdeSolution> {
    let forcing = Forcing::default();
    let sys = System::plain(model, Population::NPlayer, &forcing, scheme.fixed_point);
    run(&sys, xi, paths, scheme, None)
}

/// Either system with additive forcing, optionally warm-started.
pub fn solve_with_forcing(
    model: &ModelSpec,
    population: Population,
    xi: &[f64],
    paths: &PathBundle,
    scheme: &SchemeConfig,
    forcing: &Forcing,
    warm: Option<&FbsdeSolution>,
) -> Result<FbsdeSolution> {
    let w = paths.particles * model.dim;
    let full = (paths.steps + 1) * w;
    for e in [&forcing.e1, &forcing.e2].into_iter().flatten() {
        if e.len() != full {
            return input("forcing process has the wrong length");
        }
    }
    if forcing.e3.as_ref().is_some_and(|e| e.len() != w) {
        return input("terminal forcing has the wrong length");
    }
    let sys = System::plain(model, population, forcing, scheme.fixed_point);
    run(&sys, xi, paths, scheme, warm)
}

/// Root accumulated mean-square residuals of the discrete dynamics.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Residuals {
    pub forward: f64,
    pub backward: f64,
    /// Largest |Y_T - D_x G| over particles.
    pub terminal: f64,
}

impl FbsdeSolution {
    /// Recompute drift and driver along the stored paths and report
    /// sqrt(E sum_k |r_k|^2) for the forward and backward dynamics. The
    /// backward residual includes the terminal mismatch.
    pub fn residuals(&self, model: &ModelSpec, paths: &PathBundle) -> Result<Residuals> {
        if paths.particles != self.particles || paths.steps != self.steps || paths.dim != self.dim {
            return input("path bundle does not match the solution");
        }
        let forcing = Forcing::default();
        let fp = FixedPointConfig {
            tol: 1e-13,
            max_iters: 2000,
            ..FixedPointConfig::default()
        };
        let sys = System::plain(model, self.population, &forcing, fp);
        let (d, n, dt) = (self.dim, self.particles, self.dt);
        let w = n * d;
        let sq2 = 2f64.sqrt();
        let sq2s0 = (2.0 * model.sigma0).sqrt();
        let mut fwd = 0.0;
        let mut bwd = 0.0;
        let mut alpha = self.alpha.clone();
        let mut f = vec![0.0; (self.steps + 1) * w];
        for k in 0..=self.steps {
            let r = k * w..(k + 1) * w;
            sys.controls(&self.x[r.clone()], &self.y[r.clone()], &mut alpha[r.clone()])?;
            sys.driver(k, &self.x[r.clone()], &alpha[r.clone()], &mut f[r]);
        }
        for k in 0..self.steps {
            let s = shocks(paths, k, model.sigma0);
            let mean_dw = &s[d..];
            let dw0 = paths.dw0(k);
            for i in 0..n {
                let dwi = paths.dw(i, k);
                for c in 0..d {
                    let j = k * w + i * d + c;
                    let rf = self.x[j + w] - self.x[j] - alpha[j] * dt - sq2 * dwi[c] - sq2s0 * dw0[c];
                    fwd += rf * rf;
                    let own: f64 = (0..d).map(|q| self.z_own[k][c * d + q] * (dwi[q] - mean_dw[q])).sum();
                    let agg: f64 = (0..2 * d).map(|q| self.z_aggregate[k][c * 2 * d + q] * s[q]).sum();
                    let rb = self.y[j + w] - self.y[j] - f[j] * dt - own - agg;
                    bwd += rb * rb;
                }
            }
        }
        let xt = &self.x[self.steps * w..];
        let yt = &self.y[self.steps * w..];
        let mut g = vec![0.0; w];
        sys.terminal(xt, &mut g);
        let mut term = 0.0_f64;
        for (a, b) in g.iter().zip(yt) {
            bwd += (a - b) * (a - b);
            term = term.max((a - b).abs());
        }
        Ok(Residuals {
            forward: (fwd / n as f64).sqrt(),
            backward: (bwd / n as f64).sqrt(),
            terminal: term,
        })
    }
}
