//! Browser demo: three operations over the core library, each returning a
//! JSON string for the static page in `www/`.

use mfgc_core::fbsde::{generate_paths, Population};
use mfgc_core::fixedpoint::{a_n_residual, phi_residual, solve_a_n, solve_phi, FixedPointConfig};
use mfgc_core::harness::InitialLaw;
use mfgc_core::lq::{
    a_matrix_bound, induced_solution, lq_controls, riccati_closedloop, riccati_meanfield, riccati_nplayer,
};
use mfgc_core::measures::{wasserstein2_sq, EmpiricalMeasure};
use mfgc_core::model::ModelSpec;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
pub struct PhiView {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub phi: Vec<f64>,
    pub a_n: Vec<f64>,
    pub phi_residual: f64,
    pub a_n_residual: f64,
    pub phi_iterations: usize,
    pub a_n_iterations: usize,
    pub discrepancy: f64,
}

/// Equilibrium controls of both fixed points on a deterministic
/// one-dimensional cloud: x on a grid of [-1, 1], p = slope * x + tilt.
pub fn phi_view(kappa_a: f64, c_aa: f64, n: usize, slope: f64, tilt: f64) -> mfgc_core::Result<PhiView> {
    let model = ModelSpec::quadratic(1, 1.0, 0.0, kappa_a, 0.0).with_couplings(c_aa, 0.0, 0.0);
    let x: Vec<f64> = (0..n)
        .map(|i| if n == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (n - 1) as f64 })
        .collect();
    let p: Vec<f64> = x.iter().map(|v| slope * v + tilt).collect();
    let cfg = FixedPointConfig::default();
    let (mu, phi) = solve_phi(&model, &EmpiricalMeasure::new(1, x.clone(), p.clone())?, &cfg)?;
    let an = solve_a_n(&model, &x, &p, &cfg)?;
    let joint = |a: &[f64]| EmpiricalMeasure::new(1, x.clone(), a.to_vec()).map(|m| m.joint());
    Ok(PhiView {
        phi_residual: phi_residual(&model, &mu, &p)?,
        a_n_residual: a_n_residual(&model, &x, &p, &an.controls)?,
        discrepancy: wasserstein2_sq(&joint(&phi.controls)?, &joint(&an.controls)?)?,
        phi_iterations: phi.iterations,
        a_n_iterations: an.iterations,
        phi: phi.controls,
        a_n: an.controls,
        x,
        p,
    })
}

#[derive(Serialize)]
pub struct Curve {
    pub label: String,
    /// Coefficient of the own state in Y^i.
    pub own: Vec<f64>,
    /// Coefficient of the population mean in Y^i.
    pub mean: Vec<f64>,
}

#[derive(Serialize)]
pub struct RiccatiView {
    pub t: Vec<f64>,
    pub curves: Vec<Curve>,
}

fn lq_model(kappa_x: f64, kappa_a: f64, kappa_g: f64, c: f64) -> ModelSpec {
    ModelSpec::quadratic(1, 1.0, kappa_x, kappa_a, kappa_g).with_couplings(c, 0.5 * c, c)
}

/// Feedback coefficients of the mean-field, open-loop and closed-loop
/// Riccati systems in full-mean form.
pub fn riccati_view(kappa_x: f64, kappa_a: f64, kappa_g: f64, c: f64, n: usize) -> mfgc_core::Result<RiccatiView> {
    let model = lq_model(kappa_x, kappa_a, kappa_g, c);
    let steps = 200;
    let sols = [
        ("mean field".to_string(), riccati_meanfield(&model, steps)?),
        (format!("open loop N={n}"), riccati_nplayer(&model, n, steps)?),
        (format!("closed loop N={n}"), riccati_closedloop(&model, n, steps)?),
    ];
    let t = (0..=steps).map(|k| k as f64 * sols[0].1.dt).collect();
    let curves = sols
        .into_iter()
        .map(|(label, s)| {
            let (own, mean) = (0..=steps).map(|k| s.full_mean_form(k)).unzip();
            Curve { label, own, mean }
        })
        .collect();
    Ok(RiccatiView { t, curves })
}

#[derive(Serialize)]
pub struct GapRow {
    pub n: usize,
    pub gap: f64,
    pub a_bound: f64,
}

/// Mean per-player gap E int |alpha^OL - alpha^CL|^2 dt along open-loop
/// trajectories, over `seeds` seeds, for each N.
pub fn gap_view(c: f64, ns: &[usize], seeds: u64) -> mfgc_core::Result<Vec<GapRow>> {
    let model = lq_model(0.5, 1.0, 2.0, c).with_sigma0(0.5);
    let (dt, steps) = (0.01, 100);
    let law = InitialLaw::default();
    ns.iter()
        .map(|&n| {
            let ol = riccati_nplayer(&model, n, steps)?;
            let cl = riccati_closedloop(&model, n, steps)?;
            let mut gap = 0.0;
            for seed in 0..seeds {
                let paths = generate_paths(seed, dt, steps, n, 1)?;
                let sol = induced_solution(&model, &ol, &law.sample(seed, n, 1)?, &paths)?;
                for k in 0..steps {
                    let a_cl = lq_controls(&model, Population::NPlayer, &cl.costates(k, 1, sol.x_section(k)))?;
                    gap += sol.alpha_section(k).iter().zip(&a_cl).map(|(u, v)| (u - v).powi(2)).sum::<f64>() * dt;
                }
            }
            Ok(GapRow {
                n,
                gap: gap / (n as u64 * seeds.max(1)) as f64,
                a_bound: a_matrix_bound(&cl)?,
            })
        })
        .collect()
}

fn to_js<T: Serialize>(r: mfgc_core::Result<T>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn phi_explorer(kappa_a: f64, c_aa: f64, n: usize, slope: f64, tilt: f64) -> Result<String, JsError> {
    to_js(phi_view(kappa_a, c_aa, n, slope, tilt))
}

#[wasm_bindgen]
pub fn riccati_curves(kappa_x: f64, kappa_a: f64, kappa_g: f64, c: f64, n: usize) -> Result<String, JsError> {
    to_js(riccati_view(kappa_x, kappa_a, kappa_g, c, n))
}

#[wasm_bindgen]
pub fn closedloop_gap(c: f64, ns: Vec<usize>, seeds: u32) -> Result<String, JsError> {
    to_js(gap_view(c, &ns, seeds as u64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_view_certifies() {
        let v = phi_view(1.0, 0.5, 16, 1.0, 0.2).unwrap();
        assert!(v.phi_residual <= 1e-9 && v.a_n_residual <= 1e-9);
        assert_eq!(v.phi.len(), 16);
        assert!(v.discrepancy > 0.0);
        let sep = phi_view(2.0, 0.0, 5, 1.0, 0.0).unwrap();
        assert!(sep.phi.iter().zip(&sep.p).all(|(a, p)| (a + p / 2.0).abs() < 1e-12));
        assert!(phi_view(1.0, 0.5, 1, 1.0, 0.0).is_err());
    }

    #[test]
    fn riccati_view_shapes() {
        let v = riccati_view(0.0, 1.0, 1.0, 0.0, 4).unwrap();
        assert_eq!(v.t.len(), 201);
        assert_eq!(v.curves.len(), 3);
        assert!((v.curves[0].own[0] - 0.5).abs() < 1e-9);
        for c in &v.curves[1..] {
            assert!((c.own[0] - 0.5).abs() < 1e-9 && c.mean[0].abs() < 1e-12);
        }
    }

    #[test]
    fn gap_view_decreases() {
        let rows = gap_view(0.5, &[4, 8, 16], 2).unwrap();
        assert!(rows.windows(2).all(|w| w[1].gap < w[0].gap));
        assert!(gap_view(0.0, &[4, 8], 1).unwrap().iter().all(|r| r.gap < 1e-20));
    }
}
