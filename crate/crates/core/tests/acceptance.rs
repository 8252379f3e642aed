//! Acceptance suite. Each test prints one PASS/FAIL line per criterion with
//! the measured values, then asserts.

use mfgc_core::fbsde::*;
use mfgc_core::fixedpoint::*;
use mfgc_core::harness::*;
use mfgc_core::lq::*;
use mfgc_core::measures::*;
use mfgc_core::model::{ModelSpec, Profile, SmoothTerm, Target};
use mfgc_core::monotonicity::*;
use mfgc_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

fn verdict(id: u32, title: &str, passed: bool, detail: &str) -> bool {
    println!("{} criterion {id:>2} {title}: {detail}", if passed { "PASS" } else { "FAIL" });
    passed
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn coupled_lq() -> ModelSpec {
    ModelSpec::load(&configs().join("lq_coupled.toml")).unwrap()
}

fn uniform(rng: &mut ChaCha8Rng, len: usize, r: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-r..r)).collect()
}

fn ridge_model() -> ModelSpec {
    ModelSpec::quadratic(2, 1.0, 0.5, 1.5, 1.0)
        .with_couplings(0.4, 0.2, 0.1)
        .with_term(SmoothTerm {
            target: Target::Running,
            profile: Profile::Tanh,
            amp: 0.3,
            wx: 0.5,
            wa: 1.0,
            wmx: 0.2,
            wma: 0.6,
        })
        .with_term(SmoothTerm {
            target: Target::Running,
            profile: Profile::Sin,
            amp: 0.2,
            wx: 1.0,
            wa: 0.3,
            wmx: 0.0,
            wma: 0.4,
        })
}

#[test]
fn criterion_01_fixed_point_certificates() {
    let cfg = FixedPointConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst, mut slowest) = (0.0_f64, Duration::ZERO);
    for m in [ridge_model(), coupled_lq()] {
        let d = m.dim;
        for n in [2usize, 8, 32, 128, 256] {
            for _ in 0..4 {
                let x = uniform(&mut rng, n * d, 2.0);
                let p = uniform(&mut rng, n * d, 2.0);
                let start = Instant::now();
                let (mu, _) = solve_phi(&m, &EmpiricalMeasure::new(d, x.clone(), p.clone()).unwrap(), &cfg).unwrap();
                slowest = slowest.max(start.elapsed());
                worst = worst.max(phi_residual(&m, &mu, &p).unwrap());
                let start = Instant::now();
                let an = solve_a_n(&m, &x, &p, &cfg).unwrap();
                slowest = slowest.max(start.elapsed());
                worst = worst.max(a_n_residual(&m, &x, &p, &an.controls).unwrap());
            }
        }
    }
    let ok = worst <= 1e-9 && slowest < Duration::from_secs(1);
    assert!(verdict(
        1,
        "fixed-point certificates",
        ok,
        &format!("max residual {worst:.2e} (<= 1e-9), slowest instance {slowest:?} (< 1 s)")
    ));
}

#[test]
fn criterion_02_discrepancy_slope() {
    let start = Instant::now();
    let m = coupled_lq();
    let mut pts = Vec::new();
    for n in [8usize, 16, 32, 64, 128] {
        let mut acc = 0.0;
        for seed in 0..16 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 * n as u64 + seed);
            let x = uniform(&mut rng, n, 1.0);
            let p = uniform(&mut rng, n, 1.0);
            let s: f64 = x.iter().chain(&p).map(|v| v * v).sum::<f64>() / n as f64;
            acc += phi_an_discrepancy(&m, &x, &p).unwrap() / s;
        }
        pts.push((n as f64, acc / 16.0));
    }
    let fit = fit_rate(&pts).unwrap();
    let elapsed = start.elapsed();
    let ok = (fit.slope + 2.0).abs() <= 0.3 && elapsed < Duration::from_secs(120);
    assert!(verdict(
        2,
        "Phi vs a^N discrepancy slope",
        ok,
        &format!("slope {:.3} (target -2 +- 0.3), runtime {elapsed:?} (< 2 min)", fit.slope)
    ));
}

#[test]
fn criterion_03_hand_solved_fixed_points() {
    let cfg = FixedPointConfig::default();
    let m1 = ModelSpec::quadratic(1, 1.0, 0.0, 1.0, 0.0).with_couplings(1.0, 0.0, 0.0);
    let nu = EmpiricalMeasure::new(1, vec![0.0, 0.0], vec![0.0, 2.0]).unwrap();
    let (_, phi) = solve_phi(&m1, &nu, &cfg).unwrap();
    let e1 = (phi.controls[0] - 0.5).abs().max((phi.controls[1] + 1.5).abs());
    let m2 = ModelSpec::quadratic(1, 1.0, 0.0, 1.0, 0.0).with_couplings(0.5, 0.0, 0.0);
    let an = solve_a_n(&m2, &[0.0, 0.0], &[1.0, 0.0], &cfg).unwrap();
    let e2 = (an.controls[0] + 4.0 / 3.0).abs().max((an.controls[1] - 2.0 / 3.0).abs());
    let ok = e1 <= 1e-9 && e2 <= 1e-9;
    assert!(verdict(
        3,
        "hand-solved fixed points",
        ok,
        &format!("Phi {:?} err {e1:.1e}, a^N {:?} err {e2:.1e} (<= 1e-9)", phi.controls, an.controls)
    ));
}

#[test]
fn criterion_04_transport_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let cloud = |rng: &mut ChaCha8Rng, n: usize, d: usize| PointCloud::new(d, uniform(rng, n * d, 3.0)).unwrap();
    let sizes = [(1, 1), (2, 2), (3, 3), (4, 4), (5, 5), (6, 6), (1, 6), (2, 4), (2, 6), (3, 6), (2, 3), (1, 4)];
    let mut worst = 0.0_f64;
    for t in 0..200 {
        let (n, m) = sizes[t % sizes.len()];
        let d = 1 + t % 3;
        let (a, b) = (cloud(&mut rng, n, d), cloud(&mut rng, m, d));
        worst = worst.max((wasserstein2(&a, &b).unwrap() - wasserstein2_bruteforce(&a, &b).unwrap()).abs());
    }
    let mut violations = 0;
    for t in 0..200 {
        let d = 1 + t % 3;
        let n: Vec<usize> = (0..3).map(|_| rng.random_range(1..=8)).collect();
        let (a, b, c) = (cloud(&mut rng, n[0], d), cloud(&mut rng, n[1], d), cloud(&mut rng, n[2], d));
        let ab = wasserstein2(&a, &b).unwrap();
        let ok = (ab - wasserstein2(&b, &a).unwrap()).abs() <= 1e-12
            && wasserstein2(&a, &c).unwrap() <= ab + wasserstein2(&b, &c).unwrap() + 1e-12
            && wasserstein2(&a, &a).unwrap() == 0.0
            && ab >= 0.0;
        violations += usize::from(!ok);
    }
    let ok = worst <= 1e-12 && violations == 0;
    assert!(verdict(
        4,
        "optimal transport oracle",
        ok,
        &format!("max |fast - brute| {worst:.1e} over 200 pairs (<= 1e-12), {violations} axiom violations over 200 triples")
    ));
}

fn mean_rel_y0(model: &ModelSpec, dt: f64, seeds: u64, n: usize) -> (f64, f64) {
    let steps = (model.horizon / dt).round() as usize;
    let scheme = SchemeConfig { dt, ..SchemeConfig::default() };
    let ric_mf = riccati_meanfield(model, steps).unwrap();
    let ric_np = riccati_nplayer(model, n, steps).unwrap();
    let law = InitialLaw::default();
    let rel = |a: &[f64], b: &[f64]| {
        let num: f64 = a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum();
        (num / b.iter().map(|v| v * v).sum::<f64>()).sqrt()
    };
    let (mut emf, mut enp) = (0.0, 0.0);
    for seed in 0..seeds {
        let paths = generate_paths(seed, dt, steps, n, model.dim).unwrap();
        let xi = law.sample(seed, n, model.dim).unwrap();
        let mf = solve_meanfield(model, &xi, &paths, &scheme).unwrap();
        let np = solve_nplayer(model, &xi, &paths, &scheme).unwrap();
        emf += rel(mf.y_section(0), &ric_mf.costates(0, model.dim, &xi));
        enp += rel(np.y_section(0), &ric_np.costates(0, model.dim, &xi));
    }
    (emf / seeds as f64, enp / seeds as f64)
}

#[test]
fn criterion_05_lq_oracle_agreement() {
    let start = Instant::now();
    let plain = ModelSpec::quadratic(1, 1.0, 0.0, 1.0, 1.0);
    let p0 = riccati_meanfield(&plain, 1000).unwrap().full_mean_form(0).0;
    let (mf, np) = mean_rel_y0(&plain, 1e-3, 16, 8);
    let (cmf, cnp) = mean_rel_y0(&coupled_lq(), 1e-3, 16, 8);

    let mut pts = Vec::new();
    for dt in [0.01, 0.005, 0.0025, 0.00125] {
        let steps = (1.0_f64 / dt).round() as usize;
        let scheme = SchemeConfig { dt, ..SchemeConfig::default() };
        let mut acc = 0.0;
        for seed in 0..4 {
            let paths = generate_paths(seed, dt, steps, 8, 1).unwrap();
            let xi = InitialLaw::default().sample(seed, 8, 1).unwrap();
            let sol = solve_meanfield(&coupled_lq(), &xi, &paths, &scheme).unwrap();
            acc += fbsde_residual(&sol, &coupled_lq(), &paths).unwrap().backward;
        }
        pts.push((1.0 / dt, acc / 4.0));
    }
    let slope = -fit_rate(&pts).unwrap().slope;
    let elapsed = start.elapsed();
    let ok = (p0 - 0.5).abs() < 1e-9
        && [mf, np, cmf, cnp].iter().all(|e| *e <= 0.02)
        && (slope - 1.0).abs() <= 0.2
        && elapsed < Duration::from_secs(180);
    assert!(verdict(
        5,
        "LQ oracle agreement",
        ok,
        &format!(
            "P0 {p0:.9}; relative Y0 error mean field {mf:.2e} / N-player {np:.2e}, coupled {cmf:.2e} / {cnp:.2e} (<= 2%); residual slope in dt {slope:.3} (1 +- 0.2); runtime {elapsed:?} (< 3 min)"
        )
    ));
}

#[test]
fn criterion_06_dimension_free_stability() {
    let m = coupled_lq();
    let scheme = SchemeConfig { dt: 0.02, ..SchemeConfig::default() };
    let shift = ErrorSpec { xi_shift: 0.05, ..ErrorSpec::default() };
    let mut ratios = Vec::new();
    for n in [4usize, 8, 16, 32] {
        let paths = generate_paths(6, 0.02, 50, n, 1).unwrap();
        let xi = InitialLaw::default().sample(6, n, 1).unwrap();
        let r = perturbed_stability_experiment(&m, &xi, &paths, &scheme, &shift).unwrap();
        ratios.push(r.lhs / r.xi_gap2);
    }
    let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0_f64), |(a, b), &x| (a.min(x), b.max(x)));

    let paths = generate_paths(7, 0.02, 50, 16, 1).unwrap();
    let xi = InitialLaw::default().sample(7, 16, 1).unwrap();
    let mut pts = Vec::new();
    for eps in [0.2, 0.1, 0.05, 0.025] {
        let errs = ErrorSpec { e1: ErrorProcess::Constant { value: eps }, ..ErrorSpec::default() };
        let r = perturbed_stability_experiment(&m, &xi, &paths, &scheme, &errs).unwrap();
        pts.push((eps, r.lhs));
    }
    let slope = fit_rate(&pts).unwrap().slope;
    let ok = hi / lo < 2.0 && (slope - 2.0).abs() <= 0.2;
    assert!(verdict(
        6,
        "dimension-free stability",
        ok,
        &format!("ratio over N = 4..32 {ratios:.4?}, max/min {:.4} (< 2); epsilon slope {slope:.4} (2 +- 0.2)", hi / lo)
    ));
}

#[test]
fn criterion_07_openloop_rate() {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::load(&configs().join("rate_ol.toml")).unwrap();
    cfg.dt = 1e-3;
    let r = run_openloop_convergence(&cfg).unwrap();
    let elapsed = start.elapsed();
    let sup = r.criterion("sup_state_slope").unwrap();
    let w2 = r.criterion("w2_state_slope").unwrap();
    let joint = r.table("w2_joint").and_then(|t| t.fit).map_or(f64::NAN, |f| f.slope);
    let ok = sup.passed && w2.passed && r.failures.is_empty() && r.checksums_match && elapsed < Duration::from_secs(1800);
    assert!(verdict(
        7,
        "open-loop convergence rate",
        ok,
        &format!(
            "N = {:?}, {} seeds, dt {}: sup-state slope {:.3} (-0.5 +- 0.25); state W2 slope {:.3} vs reference {:.3} (+- 0.3); joint W2 slope {joint:.3} (report only); runtime {elapsed:?} (< 30 min)",
            r.n_list,
            r.seeds.len(),
            r.dt,
            sup.value,
            w2.value,
            w2.target
        )
    ));
}

#[test]
fn criterion_08_closedloop_gap() {
    let cfg = ExperimentConfig::load(&configs().join("rate_cl.toml")).unwrap();
    let r = run_closedloop_gap(&cfg).unwrap();
    let slope = r.criterion("gap_slope").unwrap().value;
    let flat = r.table("gap_times_n2").unwrap().rows.iter().map(|r| format!("{:.3e}", r.mean)).collect::<Vec<_>>().join(", ");
    let uncoupled = ModelSpec::load(&configs().join("lq_uncoupled.toml")).unwrap();
    let zero = run_closedloop_gap_with_model(&uncoupled, &cfg).unwrap();
    let worst = zero.table("gap").unwrap().rows.iter().map(|r| r.mean).fold(0.0, f64::max);
    let ok = (slope + 2.0).abs() <= 0.4 && worst <= 1e-10 && r.failures.is_empty();
    assert!(verdict(
        8,
        "closed-loop gap",
        ok,
        &format!("N = {:?}: gap slope {slope:.3} (-2 +- 0.4), N^2 gap [{flat}]; zero-coupling gap {worst:.1e} (<= 1e-10)", r.n_list)
    ));
}

#[test]
fn criterion_09_a_bound() {
    let plain = ModelSpec::quadratic(1, 1.0, 0.0, 1.0, 1.0);
    let analytic = a_matrix_bound(&riccati_closedloop(&plain, 8, 1000).unwrap()).unwrap();
    let m = coupled_lq();
    let vals: Vec<f64> = [4usize, 8, 16, 32, 64]
        .iter()
        .map(|&n| a_matrix_bound(&riccati_closedloop(&m, n, 1000).unwrap()).unwrap())
        .collect();
    let (lo, hi) = vals.iter().fold((f64::MAX, 0.0_f64), |(a, b), &x| (a.min(x), b.max(x)));
    let ok = (analytic - 0.5).abs() <= 1e-6 && hi / lo <= 2.0;
    assert!(verdict(
        9,
        "closed-loop A-bound",
        ok,
        &format!("decoupled value {analytic:.9} (0.5 +- 1e-6); coupled N = 4..64 {vals:.4?}, max/min {:.4} (<= 2)", hi / lo)
    ));
}

#[test]
fn criterion_10_monotonicity_certification() {
    let quad = ModelSpec::quadratic(1, 1.0, 0.0, 2.0, 0.0);
    let r = estimate_constants(&quad, &MonotonicitySampler::default(), 10_000).unwrap();
    let broken = ModelSpec::load(&configs().join("broken.toml")).unwrap();
    let refused = gate(&broken, &[8], &MonotonicitySampler::default(), 10_000);
    let rejected = matches!(refused, Err(Error::Gate { .. }));
    let ok = (1.98..=2.0).contains(&r.c_la) && rejected;
    assert!(verdict(
        10,
        "monotonicity certification",
        ok,
        &format!(
            "pure quadratic C_La {:.12} in [1.98, 2.0]; broken model (kappa_a {}, c_aa {}) gate: {}",
            r.c_la,
            broken.kappa_a,
            broken.interaction.c_aa,
            match &refused {
                Err(e) => e.to_string(),
                Ok(_) => "accepted".into(),
            }
        )
    ));
}

#[test]
fn criterion_11_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = |c: &str| configs().join(c).to_string_lossy().into_owned();
    let exp = dir.path().join("exp.toml");
    std::fs::write(
        &exp,
        format!(
            "model = {:?}\nn_list = [4, 8, 16]\nseeds = [0, 1, 2]\ndt = 0.02\nparticles = 8\nmonotonicity_trials = 500\n",
            cfg("lq_coupled.toml")
        ),
    )
    .unwrap();
    let exp = exp.to_string_lossy().into_owned();
    let runs: Vec<(&str, Vec<String>)> = vec![
        ("mono-check", vec![cfg("lq_coupled.toml"), "--trials".into(), "500".into(), "--players".into(), "8".into()]),
        ("fixed-point", vec![cfg("smooth.toml"), "--demo".into()]),
        ("solve-mf", vec![cfg("smooth.toml"), exp.clone()]),
        ("solve-np", vec![cfg("smooth.toml"), exp.clone()]),
        ("lq-compare", vec![cfg("lq_coupled.toml"), exp.clone()]),
        ("rate-ol", vec![exp.clone()]),
        ("rate-cl", vec![exp.clone()]),
    ];
    let mut differing = Vec::new();
    for (sub, args) in &runs {
        let mut bytes = Vec::new();
        for rep in 0..2 {
            let out = dir.path().join(format!("{sub}-{rep}"));
            let status = Command::new(env!("CARGO_BIN_EXE_mfgc"))
                .arg(sub)
                .args(args)
                .args(["--seed", "11", "--out"])
                .arg(&out)
                .output()
                .unwrap()
                .status;
            assert!(status.code().unwrap() <= 1, "{sub} exited with {status}");
            bytes.push(std::fs::read(out.join("report.json")).unwrap());
        }
        if bytes[0] != bytes[1] {
            differing.push(*sub);
        }
    }
    let ok = differing.is_empty();
    assert!(verdict(
        11,
        "CLI determinism",
        ok,
        &format!("{} subcommands run twice, report.json differs for {differing:?}", runs.len())
    ));
}
