use mfgc_core::measures::{EmpiricalMeasure, Moments, PointCloud};
use mfgc_core::model::{ModelSpec, Profile, SmoothTerm, Target};
use mfgc_core::Error;
use proptest::prelude::*;

fn quad(kx: f64, ka: f64) -> ModelSpec {
    ModelSpec::quadratic(1, 1.0, kx, ka, 0.0)
}

fn cloud_with_mean_a(mean_a: f64) -> EmpiricalMeasure {
    EmpiricalMeasure::new(1, vec![-1.0, 1.0], vec![mean_a - 0.5, mean_a + 0.5]).unwrap()
}

fn smooth_model(dim: usize, s: &[f64; 8]) -> ModelSpec {
    ModelSpec::quadratic(dim, 1.0, 0.5, 2.0, 1.0)
        .with_couplings(s[0], s[1], s[2])
        .with_term(SmoothTerm {
            target: Target::Running,
            profile: Profile::Sin,
            amp: 0.3,
            wx: s[3],
            wa: 0.8,
            wmx: s[4],
            wma: s[5],
        })
        .with_term(SmoothTerm {
            target: Target::Running,
            profile: Profile::Tanh,
            amp: -0.2,
            wx: 0.5,
            wa: s[6],
            wmx: 0.0,
            wma: 0.4,
        })
        .with_term(SmoothTerm {
            target: Target::Terminal,
            profile: Profile::Cos,
            amp: 0.4,
            wx: s[7],
            wa: 0.0,
            wmx: 0.7,
            wma: 0.0,
        })
}

#[test]
fn lagrangian_values() {
    let mu = cloud_with_mean_a(0.0);
    let m2 = ModelSpec::quadratic(2, 1.0, 0.0, 1.0, 0.0);
    let mu2 = EmpiricalMeasure::new(2, vec![0.0; 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(m2.lagrangian(&[0.0, 0.0], &[3.0, 4.0], &mu2).unwrap(), 12.5);
    assert_eq!(quad(2.0, 1.0).lagrangian(&[1.0], &[0.0], &mu).unwrap(), 1.0);
    let m = quad(0.0, 1.0).with_couplings(0.5, 0.0, 0.0);
    let v = m.lagrangian(&[0.0], &[1.0], &cloud_with_mean_a(2.0)).unwrap();
    assert!((v - 1.5).abs() < 1e-15);
}

#[test]
fn optimal_control_values() {
    let m2 = ModelSpec::quadratic(2, 1.0, 0.0, 1.0, 0.0);
    let mu2 = EmpiricalMeasure::new(2, vec![0.0; 2], vec![0.0; 2]).unwrap();
    assert_eq!(m2.optimal_control(&[0.0, 0.0], &[1.0, 0.0], &mu2).unwrap(), vec![-1.0, 0.0]);
    let mu = cloud_with_mean_a(0.0);
    assert_eq!(quad(0.0, 2.0).optimal_control(&[0.0], &[4.0], &mu).unwrap(), vec![-2.0]);
    let m = quad(0.0, 1.0).with_couplings(0.5, 0.0, 0.0);
    let a = m.optimal_control(&[0.0], &[1.0], &cloud_with_mean_a(2.0)).unwrap();
    assert!((a[0] + 2.0).abs() < 1e-14);
}

#[test]
fn hamiltonian_values() {
    let m2 = ModelSpec::quadratic(2, 1.0, 0.0, 1.0, 0.0);
    let mu2 = EmpiricalMeasure::new(2, vec![0.0; 2], vec![0.0; 2]).unwrap();
    assert!((m2.hamiltonian(&[0.0, 0.0], &[3.0, 4.0], &mu2).unwrap() - 12.5).abs() < 1e-12);
    let mu = cloud_with_mean_a(0.0);
    let h = quad(0.0, 2.0).hamiltonian(&[0.0], &[2.0], &mu).unwrap();
    assert!((h - 1.0).abs() < 1e-12);
    assert_eq!(m2.grad_p_h(&[0.0, 0.0], &[3.0, 4.0], &mu2).unwrap(), vec![3.0, 4.0]);
    assert_eq!(quad(2.0, 1.0).grad_x_h(&[1.0], &[0.3], &mu).unwrap(), vec![-2.0]);
}

#[test]
fn dimension_mismatch_is_input_error() {
    let m = quad(1.0, 1.0);
    let mu = cloud_with_mean_a(0.0);
    assert!(matches!(m.lagrangian(&[0.0, 1.0], &[0.0], &mu), Err(Error::Input(_))));
    let mu2 = EmpiricalMeasure::new(2, vec![0.0; 2], vec![0.0; 2]).unwrap();
    assert!(matches!(m.optimal_control(&[0.0], &[0.0], &mu2), Err(Error::Input(_))));
}

#[test]
fn validation_rejects_bad_models() {
    assert!(quad(1.0, 0.0).validate().is_err());
    assert!(ModelSpec::quadratic(0, 1.0, 1.0, 1.0, 0.0).validate().is_err());
    assert!(ModelSpec::quadratic(1, -1.0, 1.0, 1.0, 0.0).validate().is_err());
    assert!(quad(1.0, 1.0).with_sigma0(-0.1).validate().is_err());
    let nonconvex = quad(0.0, 1.0).with_term(SmoothTerm {
        target: Target::Running,
        profile: Profile::Sin,
        amp: 2.0,
        wx: 0.0,
        wa: 1.0,
        wmx: 0.0,
        wma: 0.0,
    });
    assert!(nonconvex.validate().is_err());
    let terminal_control = quad(0.0, 1.0).with_term(SmoothTerm {
        target: Target::Terminal,
        profile: Profile::Sin,
        amp: 0.1,
        wx: 0.0,
        wa: 1.0,
        wmx: 0.0,
        wma: 0.0,
    });
    assert!(terminal_control.validate().is_err());
}

#[test]
fn toml_round_trip_and_unknown_keys() {
    let m = smooth_model(2, &[0.5, 0.2, 0.1, 0.3, 0.2, -0.1, 0.2, 0.6]).with_sigma0(0.5);
    let text = m.to_toml_string();
    assert_eq!(ModelSpec::from_toml_str(&text).unwrap(), m);
    let bad = "dim = 1\nhorizon = 1.0\nkappa_a = 1.0\nkapa_x = 2.0\n";
    assert!(matches!(ModelSpec::from_toml_str(bad), Err(Error::Parse(_))));
    let minimal = ModelSpec::from_toml_str("dim = 1\nhorizon = 2.0\nkappa_a = 1.5\n").unwrap();
    assert_eq!(minimal, ModelSpec::quadratic(1, 2.0, 0.0, 1.5, 0.0));
}

#[test]
fn shipped_model_files_load() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["lq_coupled", "lq_uncoupled", "broken", "smooth"] {
        let m = ModelSpec::load(&dir.join(format!("{name}.toml"))).unwrap();
        assert!(m.validate().is_ok(), "{name}");
    }
}

fn fd<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut p = x.to_vec();
            let mut q = x.to_vec();
            p[k] += h;
            q[k] -= h;
            (f(&p) - f(&q)) / (2.0 * h)
        })
        .collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(u, v)| (u - v).abs() <= tol * (1.0 + u.abs().max(v.abs())))
}

fn mom(mx: &[f64], ma: &[f64]) -> Moments {
    Moments {
        mean_x: mx.to_vec(),
        mean_a: ma.to_vec(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn derivatives_match_finite_differences(
        s in prop::array::uniform8(-0.8f64..0.8),
        v in prop::collection::vec(-2.0f64..2.0, 8),
    ) {
        let m = smooth_model(2, &s);
        let (x, a, mx, ma) = (&v[0..2], &v[2..4], &v[4..6], &v[6..8]);
        let h = 1e-5;
        let ga = fd(|z| m.lagrangian_m(x, z, &mom(mx, ma)), a, h);
        prop_assert!(close(&m.grad_a_l_m(x, a, &mom(mx, ma)), &ga, 1e-6));
        let gx = fd(|z| m.lagrangian_m(z, a, &mom(mx, ma)), x, h);
        prop_assert!(close(&m.grad_x_l_m(x, a, &mom(mx, ma)), &gx, 1e-6));
        let gg = fd(|z| m.terminal_cost_m(z, mx), x, h);
        prop_assert!(close(&m.grad_x_g_m(x, mx), &gg, 1e-6));
        // flat derivative in the measure: moving one atom of an n-point cloud
        // moves the means by 1/n of the displacement
        let (gmx, gma) = m.grad_mu_l_m(x, a, &mom(mx, ma));
        let dmx = fd(|z| m.lagrangian_m(x, a, &mom(z, ma)), mx, h);
        let dma = fd(|z| m.lagrangian_m(x, a, &mom(mx, z)), ma, h);
        prop_assert!(close(&gmx, &dmx, 1e-6));
        prop_assert!(close(&gma, &dma, 1e-6));
    }

    #[test]
    fn legendre_duality_envelope(
        s in prop::array::uniform8(-0.8f64..0.8),
        v in prop::collection::vec(-3.0f64..3.0, 8),
    ) {
        let m = smooth_model(2, &s);
        let (x, p) = (&v[0..2], &v[2..4]);
        let mu = EmpiricalMeasure::new(2, v[4..8].to_vec(), v[0..4].to_vec()).unwrap();
        let mm = mu.moments();
        let a = m.optimal_control(x, p, &mu).unwrap();
        let g = m.grad_a_l_m(x, &a, &mm);
        for k in 0..2 {
            prop_assert!((g[k] + p[k]).abs() <= 1e-12 * (1.0 + p[k].abs()));
        }
        let h = m.hamiltonian(x, p, &mu).unwrap();
        let ap: f64 = a.iter().zip(p).map(|(u, w)| u * w).sum();
        prop_assert!((h + m.lagrangian(x, &a, &mu).unwrap() + ap).abs() < 1e-10);
        // Fenchel: H >= -b.p - L(b) for any b
        for b in [[0.0, 0.0], [1.0, -1.0], [p[0], p[1]], [-2.0 * p[0], 0.5]] {
            let bp = b[0] * p[0] + b[1] * p[1];
            prop_assert!(h >= -bp - m.lagrangian(x, &b, &mu).unwrap() - 1e-12);
        }
        // envelope: D_x H = -D_x L(a*) and matches differences of H
        let gx = m.grad_x_h(x, p, &mu).unwrap();
        let env: Vec<f64> = m.grad_x_l_m(x, &a, &mm).iter().map(|u| -u).collect();
        prop_assert!(close(&gx, &env, 1e-12));
        let fdx = fd(|z| m.hamiltonian_m(z, p, &mm).unwrap(), x, 1e-5);
        prop_assert!(close(&gx, &fdx, 1e-5));
        let fdp = fd(|z| m.hamiltonian_m(x, z, &mm).unwrap(), p, 1e-5);
        prop_assert!(close(&m.grad_p_h(x, p, &mu).unwrap(), &fdp, 1e-5));
        let (hx, _) = m.grad_mu_h(x, p, &mu, (&[0.0, 0.0], &[0.0, 0.0])).unwrap();
        let fdm = fd(|z| m.hamiltonian_m(x, p, &mom(z, &mm.mean_a)).unwrap(), &mm.mean_x, 1e-5);
        // a* depends on <x> only through the ridge terms; the envelope removes it
        prop_assert!(close(&hx, &fdm, 1e-5));
    }
}

#[test]
fn control_growth_is_linear() {
    use rand::{Rng, SeedableRng};
    let m = smooth_model(2, &[0.5, 0.3, -0.4, 0.7, 0.2, 0.3, -0.5, 0.6]);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let mut ratio = 0.0_f64;
    for _ in 0..10_000 {
        let x: Vec<f64> = (0..2).map(|_| rng.random_range(-7.0..7.0)).collect();
        let p: Vec<f64> = (0..2).map(|_| rng.random_range(-7.0..7.0)).collect();
        let n = rng.random_range(2..8);
        let s = rng.random_range(0.0..7.0);
        let xs: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-s..s)).collect();
        let asx: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-s..s)).collect();
        let mu = EmpiricalMeasure::new(2, xs, asx).unwrap();
        let g = m.grad_p_h(&x, &p, &mu).unwrap();
        let norm = |v: &[f64]| v.iter().map(|u| u * u).sum::<f64>().sqrt();
        let r = norm(&g) / (1.0 + norm(&x) + norm(&p) + mu.second_moment().powf(0.25));
        ratio = ratio.max(r);
    }
    assert!(ratio.is_finite() && ratio < 5.0, "fitted growth constant {ratio}");
}

#[test]
fn terminal_cost_uses_cloud_mean() {
    let m = ModelSpec::quadratic(1, 1.0, 0.0, 1.0, 2.0).with_couplings(0.0, 0.0, 0.5);
    let cloud = PointCloud::new(1, vec![1.0, 3.0]).unwrap();
    assert_eq!(m.terminal_cost(&[1.0], &cloud).unwrap(), 1.0 + 0.5 * 2.0);
    assert_eq!(m.grad_x_g(&[1.0], &cloud).unwrap(), vec![2.0 + 0.5 * 2.0]);
}
