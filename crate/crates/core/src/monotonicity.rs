//! Displacement monotonicity constants estimated by adversarial sampling.
//!
//! For random pairs of state-control clouds the displacement inequality
//!   E[(D_a L - D_a Lbar).(a - abar) + (D_x L - D_x Lbar).(x - xbar)]
//!     >= C_La E|a - abar|^2 - C_Lx E|x - xbar|^2
//! and its terminal analogue with C_G are fitted, and
//!   C_disp = C_La - T C_G - T^2/2 C_Lx.

use crate::error::{input, Error, Result};
use crate::measures::{column_mean, Moments};
use crate::model::ModelSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonotonicitySampler {
    pub seed: u64,
    pub min_size: usize,
    pub max_size: usize,
    pub min_scale: f64,
    pub max_scale: f64,
}

impl Default for MonotonicitySampler {
    fn default() -> Self {
        Self {
            seed: 0,
            min_size: 2,
            max_size: 64,
            min_scale: 0.1,
            max_scale: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// x = xbar, independent control perturbations.
    ControlIndependent,
    /// x = xbar, one common control shift.
    ControlShift,
    Independent,
    CommonShift,
}

const MODES: [SampleMode; 4] = [
    SampleMode::ControlIndependent,
    SampleMode::ControlShift,
    SampleMode::Independent,
    SampleMode::CommonShift,
];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Witness {
    pub trial: usize,
    pub mode: SampleMode,
    pub size: usize,
    pub scale: f64,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub c_la: f64,
    pub c_lx: f64,
    pub c_g: f64,
    pub c_disp: f64,
    pub horizon: f64,
    pub trials: usize,
    /// Population size for the leave-one-out version, if any.
    pub players: Option<usize>,
    pub witness: Witness,
}

impl MonotonicityReport {
    pub fn recompute_c_disp(&self) -> f64 {
        c_disp(self.c_la, self.c_lx, self.c_g, self.horizon)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn c_disp(c_la: f64, c_lx: f64, c_g: f64, horizon: f64) -> f64 {
    c_la - horizon * c_g - 0.5 * horizon * horizon * c_lx
}

struct Sample {
    mode: SampleMode,
    size: usize,
    scale: f64,
    lhs: f64,
    lhs_g: f64,
    da2: f64,
    dx2: f64,
}

fn draw(rng: &mut ChaCha8Rng, len: usize, s: f64) -> Vec<f64> {
    (0..len).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn perturb(rng: &mut ChaCha8Rng, base: &[f64], d: usize, s: f64, shift: bool) -> Vec<f64> {
    if shift {
        let delta = draw(rng, d, s);
        base.iter().enumerate().map(|(j, v)| v + delta[j % d]).collect()
    } else {
        base.iter().map(|v| v + s * rng.sample::<f64, _>(StandardNormal)).collect()
    }
}

/// Moments seen by point i: the whole cloud, or the others when `loo`.
fn moments_for(x: &[f64], a: &[f64], d: usize, i: usize, loo: bool) -> Moments {
    let n = x.len() / d;
    let mut m = Moments {
        mean_x: column_mean(x, d),
        mean_a: column_mean(a, d),
    };
    if loo {
        let nf = n as f64;
        for k in 0..d {
            m.mean_x[k] = (m.mean_x[k] * nf - x[i * d + k]) / (nf - 1.0);
            m.mean_a[k] = (m.mean_a[k] * nf - a[i * d + k]) / (nf - 1.0);
        }
    }
    m
}

fn evaluate(
    model: &ModelSpec,
    x: &[f64],
    a: &[f64],
    xb: &[f64],
    ab: &[f64],
    loo: bool,
) -> (f64, f64, f64, f64) {
    let d = model.dim;
    let n = x.len() / d;
    let (mut lhs, mut lhs_g, mut da2, mut dx2) = (0.0, 0.0, 0.0, 0.0);
    let mut gx = vec![0.0; d];
    let mut gxb = vec![0.0; d];
    for i in 0..n {
        let r = i * d..(i + 1) * d;
        let m = moments_for(x, a, d, i, loo);
        let mb = moments_for(xb, ab, d, i, loo);
        let ga = model.grad_a_l_m(&x[r.clone()], &a[r.clone()], &m);
        let gab = model.grad_a_l_m(&xb[r.clone()], &ab[r.clone()], &mb);
        model.grad_x_l_into(&x[r.clone()], &a[r.clone()], &m, &mut gx);
        model.grad_x_l_into(&xb[r.clone()], &ab[r.clone()], &mb, &mut gxb);
        let g = model.grad_x_g_m(&x[r.clone()], &m.mean_x);
        let gb = model.grad_x_g_m(&xb[r.clone()], &mb.mean_x);
        for k in 0..d {
            let j = i * d + k;
            let (ua, ux) = (a[j] - ab[j], x[j] - xb[j]);
            lhs += (ga[k] - gab[k]) * ua + (gx[k] - gxb[k]) * ux;
            lhs_g += (g[k] - gb[k]) * ux;
            da2 += ua * ua;
            dx2 += ux * ux;
        }
    }
    let nf = n as f64;
    (lhs / nf, lhs_g / nf, da2 / nf, dx2 / nf)
}

fn sample_all(
    model: &ModelSpec,
    sampler: &MonotonicitySampler,
    trials: usize,
    players: Option<usize>,
) -> Result<Vec<Sample>> {
    model.validate()?;
    if trials < MODES.len() {
        return input(format!("need at least {} trials", MODES.len()));
    }
    if sampler.min_size < 2 || sampler.max_size < sampler.min_size {
        return input("cloud sizes must satisfy 2 <= min <= max");
    }
    if !(sampler.min_scale > 0.0 && sampler.max_scale >= sampler.min_scale) {
        return input("scales must satisfy 0 < min <= max");
    }
    let d = model.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let (l0, l1) = (sampler.min_scale.ln(), sampler.max_scale.ln());
    let mut out = Vec::with_capacity(trials);
    for t in 0..trials {
        let mode = MODES[t % MODES.len()];
        let size = players.unwrap_or_else(|| rng.random_range(sampler.min_size..=sampler.max_size));
        let scale = (l0 + (l1 - l0) * rng.random::<f64>()).exp();
        let step = (l0 + (l1 - l0) * rng.random::<f64>()).exp();
        let x = draw(&mut rng, size * d, scale);
        let a = draw(&mut rng, size * d, scale);
        let (xb, ab) = match mode {
            SampleMode::ControlIndependent => (x.clone(), perturb(&mut rng, &a, d, step, false)),
            SampleMode::ControlShift => (x.clone(), perturb(&mut rng, &a, d, step, true)),
            SampleMode::Independent => (
                perturb(&mut rng, &x, d, step, false),
                perturb(&mut rng, &a, d, step, false),
            ),
            SampleMode::CommonShift => (
                perturb(&mut rng, &x, d, step, true),
                perturb(&mut rng, &a, d, step, true),
            ),
        };
        let (lhs, lhs_g, da2, dx2) = evaluate(model, &x, &a, &xb, &ab, players.is_some());
        out.push(Sample {
            mode,
            size,
            scale,
            lhs,
            lhs_g,
            da2,
            dx2,
        });
    }
    Ok(out)
}

fn fit(samples: &[Sample], horizon: f64, trials: usize, players: Option<usize>) -> MonotonicityReport {
    let mut c_la = f64::INFINITY;
    let mut witness = Witness {
        trial: 0,
        mode: SampleMode::ControlIndependent,
        size: 0,
        scale: 0.0,
        value: f64::INFINITY,
    };
    for (t, s) in samples.iter().enumerate() {
        if s.dx2 == 0.0 && s.da2 > 0.0 {
            let v = s.lhs / s.da2;
            if v < c_la {
                c_la = v;
                witness = Witness {
                    trial: t,
                    mode: s.mode,
                    size: s.size,
                    scale: s.scale,
                    value: v,
                };
            }
        }
    }
    let mut c_lx = 0.0_f64;
    let mut c_g = 0.0_f64;
    for s in samples.iter().filter(|s| s.dx2 > 0.0) {
        c_lx = c_lx.max((c_la * s.da2 - s.lhs) / s.dx2);
        c_g = c_g.max(-s.lhs_g / s.dx2);
    }
    MonotonicityReport {
        c_la,
        c_lx,
        c_g,
        c_disp: c_disp(c_la, c_lx, c_g, horizon),
        horizon,
        trials,
        players,
        witness,
    }
}

/// Mean-field constants over random clouds of random size and scale.
pub fn estimate_constants(
    model: &ModelSpec,
    sampler: &MonotonicitySampler,
    trials: usize,
) -> Result<MonotonicityReport> {
    let s = sample_all(model, sampler, trials, None)?;
    Ok(fit(&s, model.horizon, trials, None))
}

/// Constants of the leave-one-out inequality for N players.
pub fn estimate_constants_finite_n(
    model: &ModelSpec,
    players: usize,
    sampler: &MonotonicitySampler,
    trials: usize,
) -> Result<MonotonicityReport> {
    if players < 2 {
        return input("need at least two players");
    }
    let s = sample_all(model, sampler, trials, Some(players))?;
    Ok(fit(&s, model.horizon, trials, Some(players)))
}

/// Smallest normalised margin of the leave-one-out inequality measured
/// against the mean-field constants `mf`:
/// min [LHS_N - C_La E|da|^2 + C_Lx E|dx|^2] / (E|da|^2 + E|dx|^2).
pub fn check_finite_n(
    model: &ModelSpec,
    players: usize,
    mf: &MonotonicityReport,
    sampler: &MonotonicitySampler,
    trials: usize,
) -> Result<f64> {
    if players < 2 {
        return input("need at least two players");
    }
    let s = sample_all(model, sampler, trials, Some(players))?;
    let mut margin = f64::INFINITY;
    for x in &s {
        let den = x.da2 + x.dx2;
        let v = if den > 0.0 {
            (x.lhs - mf.c_la * x.da2 + mf.c_lx * x.dx2) / den
        } else {
            0.0
        };
        margin = margin.min(v);
    }
    Ok(margin)
}

/// Refuse models whose estimated C_disp is not positive, for the mean-field
/// inequality and for the leave-one-out inequality at the smallest
/// population size used.
pub fn gate(
    model: &ModelSpec,
    players: &[usize],
    sampler: &MonotonicitySampler,
    trials: usize,
) -> Result<(MonotonicityReport, Option<MonotonicityReport>)> {
    let mf = estimate_constants(model, sampler, trials)?;
    if !(mf.c_disp > 0.0) {
        return Err(Error::Gate { c_disp: mf.c_disp });
    }
    let finite = match players.iter().min() {
        Some(&n) => {
            let r = estimate_constants_finite_n(model, n, sampler, trials)?;
            if !(r.c_disp > 0.0) {
                return Err(Error::Gate { c_disp: r.c_disp });
            }
            Some(r)
        }
        None => None,
    };
    Ok((mf, finite))
}
