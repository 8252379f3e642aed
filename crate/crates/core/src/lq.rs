//! Linear-quadratic reference solutions.
//!
//! For models without smooth terms everything acts coordinatewise with
//! scalar coefficients. Mean field: Y = P x + Q <x>. N players (open loop):
//! Y^i = p x_i + q s_i with s_i the mean of the other players' states.
//! Closed loop: u^i = A/2 x_i^2 + B x_i s_i + C/2 s_i^2 + e(t), so that
//! D_i u^i = A x_i + B s_i.

use crate::error::{input, Error, Result};
use crate::fbsde::{FbsdeSolution, PathBundle, Population, Residuals};
use crate::measures::column_mean;
use crate::model::ModelSpec;
use serde::{Deserialize, Serialize};

/// RK4 substeps per grid step.
pub const SUBSTEPS: usize = 10;
const BLOW_UP: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RiccatiVariant {
    MeanField,
    OpenLoop { players: usize },
    ClosedLoop { players: usize },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RiccatiSolution {
    pub variant: RiccatiVariant,
    pub dt: f64,
    pub steps: usize,
    /// P, p or A at each grid time.
    pub own: Vec<f64>,
    /// Q, q or B at each grid time.
    pub other: Vec<f64>,
    /// C for the closed loop, empty otherwise.
    pub extra: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct LqParams {
    pub kx: f64,
    pub ka: f64,
    pub kg: f64,
    pub caa: f64,
    pub cxx: f64,
    pub cg: f64,
}

impl LqParams {
    pub fn from_model(model: &ModelSpec) -> Result<Self> {
        model.validate()?;
        if !model.is_lq() {
            return input("model has smooth terms and is not linear-quadratic");
        }
        let p = Self {
            kx: model.kappa_x,
            ka: model.kappa_a,
            kg: model.kappa_g,
            caa: model.interaction.c_aa,
            cxx: model.interaction.c_xx,
            cg: model.interaction.c_g,
        };
        if (p.ka + p.caa).abs() < 1e-12 {
            return input("kappa_a + c_aa vanishes; the mean control is undetermined");
        }
        Ok(p)
    }

    fn k_n(&self, n: usize) -> Result<f64> {
        if n < 2 {
            return input("need at least two players");
        }
        let k = self.ka - self.caa / (n - 1) as f64;
        if k.abs() < 1e-12 {
            return input("a^N is singular for this population size");
        }
        Ok(k)
    }
}

type Form = [f64; 2];

fn add(u: Form, v: Form) -> Form {
    [u[0] + v[0], u[1] + v[1]]
}

fn scale(a: f64, u: Form) -> Form {
    [a * u[0], a * u[1]]
}

/// Coefficients of x^2, x s and s^2 in u(x,s) v(x,s).
fn prod(u: Form, v: Form) -> [f64; 3] {
    [u[0] * v[0], u[0] * v[1] + u[1] * v[0], u[1] * v[1]]
}

/// Control forms for the N-player Isaacs profile given the gradient form
/// g = [g_own, g_other] of each player: returns (alpha^i, mean of the others'
/// controls), both as forms in (x_i, s_i).
fn nplayer_controls(par: &LqParams, n: usize, g: Form) -> Result<(Form, Form)> {
    let k = par.k_n(n)?;
    let nf = n as f64;
    let xbar = [1.0 / nf, (nf - 1.0) / nf];
    let abar = scale(-(g[0] + g[1]) / (par.ka + par.caa), xbar);
    let alpha = scale(-1.0 / k, add(g, scale(par.caa * nf / (nf - 1.0), abar)));
    let others = scale(1.0 / (nf - 1.0), add(scale(nf, abar), scale(-1.0, alpha)));
    Ok((alpha, others))
}

fn rhs(par: &LqParams, variant: RiccatiVariant, v: &[f64]) -> Result<Vec<f64>> {
    match variant {
        RiccatiVariant::MeanField => {
            let (p, q) = (v[0], v[1]);
            let abar = [0.0, -(p + q) / (par.ka + par.caa)];
            let alpha = scale(-1.0 / par.ka, add([p, q], scale(par.caa, abar)));
            let drift = add(scale(p, alpha), scale(q, abar));
            Ok(vec![-par.kx - drift[0], -par.cxx - drift[1]])
        }
        RiccatiVariant::OpenLoop { players } => {
            let (p, q) = (v[0], v[1]);
            let (alpha, others) = nplayer_controls(par, players, [p, q])?;
            let drift = add(scale(p, alpha), scale(q, others));
            Ok(vec![-par.kx - drift[0], -par.cxx - drift[1]])
        }
        RiccatiVariant::ClosedLoop { players } => {
            let (a, b, c) = (v[0], v[1], v[2]);
            let (alpha, others) = nplayer_controls(par, players, [a, b])?;
            let mut h = [0.5 * par.kx, par.cxx, 0.0];
            let terms = [
                (0.5 * par.ka, prod(alpha, alpha)),
                (par.caa, prod(alpha, others)),
                (1.0, prod(alpha, [a, b])),
                (1.0, prod([b, c], others)),
            ];
            for (w, t) in terms {
                for j in 0..3 {
                    h[j] += w * t[j];
                }
            }
            Ok(vec![-2.0 * h[0], -h[1], -2.0 * h[2]])
        }
    }
}

fn integrate(model: &ModelSpec, variant: RiccatiVariant, steps: usize) -> Result<RiccatiSolution> {
    let par = LqParams::from_model(model)?;
    if steps == 0 {
        return input("need at least one step");
    }
    let dt = model.horizon / steps as f64;
    let h = dt / SUBSTEPS as f64;
    let mut v = match variant {
        RiccatiVariant::ClosedLoop { .. } => vec![par.kg, par.cg, 0.0],
        _ => vec![par.kg, par.cg],
    };
    rhs(&par, variant, &v)?;
    let m = v.len();
    let mut own = vec![0.0; steps + 1];
    let mut other = vec![0.0; steps + 1];
    let mut extra = if m == 3 { vec![0.0; steps + 1] } else { Vec::new() };
    let store = |k: usize, v: &[f64], own: &mut [f64], other: &mut [f64], extra: &mut [f64]| {
        own[k] = v[0];
        other[k] = v[1];
        if m == 3 {
            extra[k] = v[2];
        }
    };
    store(steps, &v, &mut own, &mut other, &mut extra);
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + s * y).collect() };
    for k in (0..steps).rev() {
        for sub in 0..SUBSTEPS {
            // integrate backward: dv/ds = -rhs with s = T - t
            let k1 = rhs(&par, variant, &v)?;
            let k2 = rhs(&par, variant, &axpy(&v, -0.5 * h, &k1))?;
            let k3 = rhs(&par, variant, &axpy(&v, -0.5 * h, &k2))?;
            let k4 = rhs(&par, variant, &axpy(&v, -h, &k3))?;
            for j in 0..m {
                v[j] -= h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
            if v.iter().any(|x| !x.is_finite() || x.abs() > BLOW_UP) {
                let t = (k as f64 + 1.0 - (sub + 1) as f64 / SUBSTEPS as f64) * dt;
                return Err(Error::BlowUp { time: t });
            }
        }
        store(k, &v, &mut own, &mut other, &mut extra);
    }
    Ok(RiccatiSolution {
        variant,
        dt,
        steps,
        own,
        other,
        extra,
    })
}

pub fn riccati_meanfield(model: &ModelSpec, steps: usize) -> Result<RiccatiSolution> {
    integrate(model, RiccatiVariant::MeanField, steps)
}

pub fn riccati_nplayer(model: &ModelSpec, players: usize, steps: usize) -> Result<RiccatiSolution> {
    integrate(model, RiccatiVariant::OpenLoop { players }, steps)
}

pub fn riccati_closedloop(model: &ModelSpec, players: usize, steps: usize) -> Result<RiccatiSolution> {
    integrate(model, RiccatiVariant::ClosedLoop { players }, steps)
}

impl RiccatiSolution {
    pub fn players(&self) -> Option<usize> {
        match self.variant {
            RiccatiVariant::MeanField => None,
            RiccatiVariant::OpenLoop { players } | RiccatiVariant::ClosedLoop { players } => Some(players),
        }
    }

    /// Coefficients (own, aggregate) of Y^i in terms of x_i and the mean
    /// over all particles including i.
    pub fn full_mean_form(&self, k: usize) -> (f64, f64) {
        match self.players() {
            None => (self.own[k], self.other[k]),
            Some(n) => {
                let m = (n - 1) as f64;
                (self.own[k] - self.other[k] / m, self.other[k] * n as f64 / m)
            }
        }
    }

    /// Costates (Y^i, or D_i u^i for the closed loop) of a cross-section.
    pub fn costates(&self, k: usize, dim: usize, x: &[f64]) -> Vec<f64> {
        let (a, b) = self.full_mean_form(k);
        let mean = column_mean(x, dim);
        x.chunks(dim)
            .flat_map(|xi| xi.iter().zip(&mean).map(|(v, m)| a * v + b * m).collect::<Vec<_>>())
            .collect()
    }

    /// Operator norm of the closed-loop matrix A^N_{ij} = D_j D_i u^i.
    pub fn a_matrix_norm(&self, k: usize) -> Option<f64> {
        match self.variant {
            RiccatiVariant::ClosedLoop { players } => {
                let (a, b) = (self.own[k], self.other[k]);
                Some((a + b).abs().max((a - b / (players - 1) as f64).abs()))
            }
            _ => None,
        }
    }
}

/// Equilibrium controls of a linear-quadratic cross-section given costates.
pub fn lq_controls(
    model: &ModelSpec,
    population: Population,
    y: &[f64],
) -> Result<Vec<f64>> {
    let par = LqParams::from_model(model)?;
    let d = model.dim;
    let n = y.len() / d;
    let ybar = column_mean(y, d);
    let abar: Vec<f64> = ybar.iter().map(|v| -v / (par.ka + par.caa)).collect();
    let (k, shift) = match population {
        Population::MeanField => (par.ka, par.caa),
        Population::NPlayer => (par.k_n(n)?, par.caa * n as f64 / (n - 1) as f64),
    };
    Ok(y.chunks(d)
        .flat_map(|yi| {
            yi.iter()
                .zip(&abar)
                .map(|(v, a)| -(v + shift * a) / k)
                .collect::<Vec<_>>()
        })
        .collect())
}

/// sup over start times of the integral of |A^N(t)|_op^2, i.e. the integral
/// over the whole horizon. Simpson's rule on the grid when the step count is
/// even.
pub fn a_matrix_bound(sol: &RiccatiSolution) -> Result<f64> {
    let f: Vec<f64> = (0..=sol.steps)
        .map(|k| sol.a_matrix_norm(k).map(|v| v * v))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Input("a_matrix_bound needs a closed-loop solution".into()))?;
    Ok(quadrature(&f, sol.dt))
}

pub(crate) fn quadrature(f: &[f64], h: f64) -> f64 {
    let n = f.len() - 1;
    if n >= 2 && n % 2 == 0 {
        let mut s = f[0] + f[n];
        for (k, v) in f.iter().enumerate().take(n).skip(1) {
            s += if k % 2 == 1 { 4.0 * v } else { 2.0 * v };
        }
        s * h / 3.0
    } else {
        let inner: f64 = f[1..n].iter().sum();
        h * (0.5 * (f[0] + f[n]) + inner)
    }
}

/// The FBSDE solution induced by a Riccati field: states simulated by Euler
/// with the Riccati feedback on `paths`, Y from the feedback, Z from the
/// left-point coefficients.
pub fn induced_solution(
    model: &ModelSpec,
    ric: &RiccatiSolution,
    xi: &[f64],
    paths: &PathBundle,
) -> Result<FbsdeSolution> {
    let population = match ric.variant {
        RiccatiVariant::MeanField => Population::MeanField,
        RiccatiVariant::OpenLoop { players } => {
            if players != paths.particles {
                return input("player count differs from the path bundle");
            }
            Population::NPlayer
        }
        RiccatiVariant::ClosedLoop { .. } => {
            return input("closed-loop coefficients do not induce a Pontryagin solution")
        }
    };
    let d = model.dim;
    let (n, steps, dt) = (paths.particles, paths.steps, paths.dt);
    if ric.steps != steps || (ric.dt - dt).abs() > 1e-12 {
        return input("Riccati grid differs from the path grid");
    }
    if xi.len() != n * d || paths.dim != d {
        return input("initial condition does not match the bundle");
    }
    let w = n * d;
    let sq2 = 2f64.sqrt();
    let sq2s0 = (2.0 * model.sigma0).sqrt();
    let mut x = vec![0.0; (steps + 1) * w];
    let mut y = vec![0.0; (steps + 1) * w];
    let mut alpha = vec![0.0; (steps + 1) * w];
    x[..w].copy_from_slice(xi);
    let mut z_own = Vec::with_capacity(steps);
    let mut z_agg = Vec::with_capacity(steps);
    let gamma: Vec<Vec<f64>> = (0..=steps)
        .map(|k| {
            let pm = ric.full_mean_form(k).1;
            (0..d * d).map(|j| if j % (d + 1) == 0 { pm } else { 0.0 }).collect()
        })
        .collect();
    for k in 0..=steps {
        let xs = x[k * w..(k + 1) * w].to_vec();
        let ys = ric.costates(k, d, &xs);
        let a = lq_controls(model, population, &ys)?;
        y[k * w..(k + 1) * w].copy_from_slice(&ys);
        alpha[k * w..(k + 1) * w].copy_from_slice(&a);
        if k == steps {
            break;
        }
        let (po, pm) = ric.full_mean_form(k);
        let mut zo = vec![0.0; d * d];
        let mut za = vec![0.0; d * 2 * d];
        for c in 0..d {
            zo[c * d + c] = sq2 * po;
            za[c * 2 * d + c] = sq2s0 * (po + pm);
            za[c * 2 * d + d + c] = sq2 * (po + pm);
        }
        z_own.push(zo);
        z_agg.push(za);
        let dw0 = paths.dw0(k);
        for i in 0..n {
            let dwi = paths.dw(i, k);
            for c in 0..d {
                let j = i * d + c;
                x[(k + 1) * w + j] = xs[j] + a[j] * dt + sq2 * dwi[c] + sq2s0 * dw0[c];
            }
        }
    }
    let mut sol = FbsdeSolution {
        population,
        dim: d,
        particles: n,
        steps,
        dt,
        x,
        y,
        alpha,
        beta: vec![Vec::new(); steps],
        gamma,
        z_own,
        z_aggregate: z_agg,
        picard_history: Vec::new(),
        iterations: 0,
        terminal_residual: 0.0,
        fixed_point_residual: 0.0,
    };
    sol.terminal_residual = fbsde_residual(&sol, model, paths)?.terminal;
    Ok(sol)
}

/// Discrete forward and backward residuals of a solution along its paths.
pub fn fbsde_residual(sol: &FbsdeSolution, model: &ModelSpec, paths: &PathBundle) -> Result<Residuals> {
    sol.residuals(model, paths)
}
