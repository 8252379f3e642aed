//! The measure fixed point Phi and the finite-population profile a^N.

use crate::error::{input, Error, Result};
use crate::measures::{wasserstein2, wasserstein2_sq, EmpiricalMeasure, Moments};
use crate::model::ModelSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointConfig {
    pub damping: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-10,
            max_iters: 500,
        }
    }
}

impl FixedPointConfig {
    fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return input("damping must lie in (0, 1]");
        }
        if !(self.tol > 0.0) {
            return input("tolerance must be positive");
        }
        Ok(())
    }
}

/// Fixed-point output with its residual certificate.
#[derive(Clone, Debug)]
pub struct FixedPoint {
    /// Returned profile (controls of Phi, or a^N).
    pub controls: Vec<f64>,
    /// Max over points of |alpha_i + D_p H(...)| at the returned profile.
    pub residual: f64,
    pub iterations: usize,
    pub history: Vec<f64>,
}

fn check_profile(model: &ModelSpec, x: &[f64], p: &[f64]) -> Result<usize> {
    let d = model.dim;
    if x.is_empty() || x.len() % d != 0 || x.len() != p.len() {
        return input("state and costate profiles must be non-empty and pair up");
    }
    if x.iter().chain(p).any(|v| !v.is_finite()) {
        return input("non-finite profile entry");
    }
    Ok(x.len() / d)
}

/// Damped Picard iteration for a profile map. `map` writes the image of
/// `alpha` into its second argument.
fn picard(
    kind: &'static str,
    alpha: &mut [f64],
    dim: usize,
    cfg: &FixedPointConfig,
    mut map: impl FnMut(&[f64], &mut [f64]) -> Result<()>,
) -> Result<(f64, usize, Vec<f64>)> {
    let mut image = vec![0.0; alpha.len()];
    // one undamped step from the warm start
    map(alpha, &mut image)?;
    alpha.copy_from_slice(&image);
    let mut theta = cfg.damping;
    let mut prev = f64::INFINITY;
    let mut history = Vec::new();
    for it in 0..=cfg.max_iters {
        map(alpha, &mut image)?;
        let r = alpha
            .chunks(dim)
            .zip(image.chunks(dim))
            .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>())
            .fold(0.0_f64, f64::max)
            .sqrt();
        history.push(r);
        if r <= cfg.tol {
            return Ok((r, it, history));
        }
        if !r.is_finite() || it == cfg.max_iters {
            return Err(Error::NoConvergence {
                kind,
                iterations: it,
                residual: r,
                history,
            });
        }
        if r > prev {
            theta = (theta * 0.5).max(1e-6);
        }
        prev = r;
        for (a, b) in alpha.iter_mut().zip(&image) {
            *a += theta * (b - *a);
        }
    }
    unreachable!()
}

/// Phi: given x_i and costates y_i, find controls alpha_i with
/// alpha_i = -D_p H(x_i, y_i, mu) where mu is the cloud {(x_i, alpha_i)}.
/// `alpha` holds the warm start on entry and the solution on exit.
pub fn phi_in_place(
    model: &ModelSpec,
    x: &[f64],
    y: &[f64],
    alpha: &mut [f64],
    cfg: &FixedPointConfig,
) -> Result<(f64, usize, Vec<f64>)> {
    let d = model.dim;
    let n = x.len() / d;
    let mean_x = crate::measures::column_mean(x, d);
    let mut m = Moments {
        mean_x,
        mean_a: vec![0.0; d],
    };
    picard("phi", alpha, d, cfg, |a, out| {
        m.mean_a = crate::measures::column_mean(a, d);
        for i in 0..n {
            let r = i * d..(i + 1) * d;
            model.optimal_control_into(&x[r.clone()], &y[r.clone()], &m, &mut out[r])?;
        }
        Ok(())
    })
}

/// a^N: alpha_i = -D_p H(x_i, p_i, m^{N,-i}_{x,alpha}) for every player.
pub fn a_n_in_place(
    model: &ModelSpec,
    x: &[f64],
    p: &[f64],
    alpha: &mut [f64],
    cfg: &FixedPointConfig,
) -> Result<(f64, usize, Vec<f64>)> {
    let d = model.dim;
    let n = x.len() / d;
    if n < 2 {
        return input("a^N needs at least two players");
    }
    let sx: Vec<f64> = crate::measures::column_mean(x, d)
        .iter()
        .map(|v| v * n as f64)
        .collect();
    let inv = 1.0 / (n - 1) as f64;
    let mut m = Moments::zeros(d);
    picard("a^N", alpha, d, cfg, |a, out| {
        let sa: Vec<f64> = crate::measures::column_mean(a, d)
            .iter()
            .map(|v| v * n as f64)
            .collect();
        for i in 0..n {
            let r = i * d..(i + 1) * d;
            for k in 0..d {
                m.mean_x[k] = (sx[k] - x[i * d + k]) * inv;
                m.mean_a[k] = (sa[k] - a[i * d + k]) * inv;
            }
            model.optimal_control_into(&x[r.clone()], &p[r.clone()], &m, &mut out[r])?;
        }
        Ok(())
    })
}

/// Solve Phi(nu) for a cloud nu of (x, y) pairs; the x-marginal is kept.
pub fn solve_phi(
    model: &ModelSpec,
    nu: &EmpiricalMeasure,
    cfg: &FixedPointConfig,
) -> Result<(EmpiricalMeasure, FixedPoint)> {
    cfg.validate()?;
    if nu.dim() != model.dim {
        return input("measure dimension differs from the model");
    }
    let x = nu.xs();
    let y = nu.controls();
    check_profile(model, x, y)?;
    let mut alpha = vec![0.0; y.len()];
    let (residual, iterations, history) = phi_in_place(model, x, y, &mut alpha, cfg)?;
    let mu = EmpiricalMeasure::new(model.dim, x.to_vec(), alpha.clone())?;
    Ok((
        mu,
        FixedPoint {
            controls: alpha,
            residual,
            iterations,
            history,
        },
    ))
}

/// Solve for the profile a^N(x, p).
pub fn solve_a_n(
    model: &ModelSpec,
    x: &[f64],
    p: &[f64],
    cfg: &FixedPointConfig,
) -> Result<FixedPoint> {
    cfg.validate()?;
    check_profile(model, x, p)?;
    let mut alpha = vec![0.0; p.len()];
    let (residual, iterations, history) = a_n_in_place(model, x, p, &mut alpha, cfg)?;
    Ok(FixedPoint {
        controls: alpha,
        residual,
        iterations,
        history,
    })
}

/// Re-applied Phi residual of a candidate measure mu = {(x_i, alpha_i)}
/// against costates y.
pub fn phi_residual(model: &ModelSpec, mu: &EmpiricalMeasure, y: &[f64]) -> Result<f64> {
    let m = mu.moments();
    let d = model.dim;
    let mut worst = 0.0_f64;
    for i in 0..mu.len() {
        let a = model.optimal_control_m(mu.x(i), &y[i * d..(i + 1) * d], &m)?;
        let e: f64 = a.iter().zip(mu.a(i)).map(|(u, v)| (u - v) * (u - v)).sum();
        worst = worst.max(e.sqrt());
    }
    Ok(worst)
}

/// Re-applied a^N residual of a candidate profile.
pub fn a_n_residual(model: &ModelSpec, x: &[f64], p: &[f64], alpha: &[f64]) -> Result<f64> {
    let mu = EmpiricalMeasure::new(model.dim, x.to_vec(), alpha.to_vec())?;
    let d = model.dim;
    let mut worst = 0.0_f64;
    for i in 0..mu.len() {
        let loo = mu.leave_one_out(i)?;
        let a = model.optimal_control(mu.x(i), &p[i * d..(i + 1) * d], &loo)?;
        let e: f64 = a.iter().zip(mu.a(i)).map(|(u, v)| (u - v) * (u - v)).sum();
        worst = worst.max(e.sqrt());
    }
    Ok(worst)
}

/// d_2^2(Phi(m^N_{x,p}), m^N_{x,a^N(x,p)}).
pub fn phi_an_discrepancy(model: &ModelSpec, x: &[f64], p: &[f64]) -> Result<f64> {
    let cfg = FixedPointConfig::default();
    let nu = EmpiricalMeasure::new(model.dim, x.to_vec(), p.to_vec())?;
    let (phi, _) = solve_phi(model, &nu, &cfg)?;
    let an = solve_a_n(model, x, p, &cfg)?;
    let mu_n = EmpiricalMeasure::new(model.dim, x.to_vec(), an.controls)?;
    wasserstein2_sq(&phi.joint(), &mu_n.joint())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Phi,
    AN,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// Only the costate (second) coordinate moves.
    CostateOnly,
    Both,
}

/// Random pairs of nearby profiles for Lipschitz estimation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairSampler {
    pub n: usize,
    pub scale: f64,
    pub step: f64,
    pub perturbation: Perturbation,
    pub seed: u64,
}

impl Default for PairSampler {
    fn default() -> Self {
        Self {
            n: 16,
            scale: 1.0,
            step: 0.1,
            perturbation: Perturbation::Both,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LipschitzEstimate {
    pub constant: f64,
    pub ratios: Vec<f64>,
}

pub fn estimate_lipschitz(
    model: &ModelSpec,
    kind: MapKind,
    sampler: &PairSampler,
    trials: usize,
) -> Result<LipschitzEstimate> {
    if sampler.n < 2 || trials == 0 {
        return input("need at least two points and one trial");
    }
    let cfg = FixedPointConfig::default();
    let len = sampler.n * model.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let normal = |rng: &mut ChaCha8Rng, s: f64| -> Vec<f64> {
        (0..len).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let mut ratios = Vec::with_capacity(trials);
    for _ in 0..trials {
        let x1 = normal(&mut rng, sampler.scale);
        let p1 = normal(&mut rng, sampler.scale);
        let dp = normal(&mut rng, sampler.step);
        let dx = match sampler.perturbation {
            Perturbation::CostateOnly => vec![0.0; len],
            Perturbation::Both => normal(&mut rng, sampler.step),
        };
        let x2: Vec<f64> = x1.iter().zip(&dx).map(|(a, b)| a + b).collect();
        let p2: Vec<f64> = p1.iter().zip(&dp).map(|(a, b)| a + b).collect();
        let ratio = match kind {
            MapKind::Phi => {
                let nu1 = EmpiricalMeasure::new(model.dim, x1, p1)?;
                let nu2 = EmpiricalMeasure::new(model.dim, x2, p2)?;
                let (m1, _) = solve_phi(model, &nu1, &cfg)?;
                let (m2, _) = solve_phi(model, &nu2, &cfg)?;
                let den = wasserstein2(&nu1.joint(), &nu2.joint())?;
                wasserstein2(&m1.joint(), &m2.joint())? / den
            }
            MapKind::AN => {
                let a1 = solve_a_n(model, &x1, &p1, &cfg)?.controls;
                let a2 = solve_a_n(model, &x2, &p2, &cfg)?.controls;
                let num: f64 = a1.iter().zip(&a2).map(|(u, v)| (u - v) * (u - v)).sum();
                let den: f64 = dx.iter().chain(&dp).map(|v| v * v).sum();
                (num / den).sqrt()
            }
        };
        if ratio.is_finite() {
            ratios.push(ratio);
        }
    }
    let constant = ratios.iter().copied().fold(0.0, f64::max);
    Ok(LipschitzEstimate { constant, ratios })
}
