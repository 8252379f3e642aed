use mfgc_core::measures::*;
use mfgc_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn line(v: &[f64]) -> PointCloud {
    PointCloud::new(1, v.to_vec()).unwrap()
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, d: usize) -> PointCloud {
    PointCloud::new(d, (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap()
}

#[test]
fn leave_one_out_examples() {
    let m = EmpiricalMeasure::new(1, vec![0.0, 1.0], vec![5.0, 6.0]).unwrap();
    let l = m.leave_one_out(0).unwrap();
    assert_eq!((l.xs(), l.controls()), (&[1.0][..], &[6.0][..]));
    let m = EmpiricalMeasure::new(1, vec![1.0, 2.0, 3.0], vec![0.0; 3]).unwrap();
    assert_eq!(m.leave_one_out(1).unwrap().xs(), &[1.0, 3.0]);
    let single = EmpiricalMeasure::dirac(&[1.0], &[0.0]).unwrap();
    assert!(single.leave_one_out(0).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let n = rng.random_range(2..=64);
        let m = EmpiricalMeasure::new(2, vec![0.5; 2 * n], vec![0.0; 2 * n]).unwrap();
        assert_eq!(m.leave_one_out(rng.random_range(0..n)).unwrap().len(), n - 1);
    }
}

#[test]
fn wasserstein_examples() {
    let d = wasserstein2(&PointCloud::new(2, vec![0.0, 0.0]).unwrap(), &PointCloud::new(2, vec![3.0, 4.0]).unwrap());
    assert!((d.unwrap() - 5.0).abs() < 1e-15);
    assert!((wasserstein2(&line(&[0.0, 2.0]), &line(&[1.0, 3.0])).unwrap() - 1.0).abs() < 1e-15);
    assert!((wasserstein2_bruteforce(&line(&[0.0, 2.0]), &line(&[1.0, 3.0])).unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(wasserstein2_bruteforce(&line(&[0.0, 1.0]), &line(&[0.0, 1.0])).unwrap(), 0.0);
    let c = PointCloud::new(3, (0..15).map(|v| v as f64).collect()).unwrap();
    assert_eq!(wasserstein2(&c, &c).unwrap(), 0.0);
}

#[test]
fn wasserstein_errors() {
    assert!(matches!(
        wasserstein2(&line(&[0.0]), &PointCloud::new(2, vec![0.0, 0.0]).unwrap()),
        Err(Error::Input(_))
    ));
    let nine = line(&[0.0; 9]);
    assert!(matches!(wasserstein2_bruteforce(&nine, &nine), Err(Error::Domain(_))));
    assert!(PointCloud::new(2, vec![0.0; 3]).is_err());
    assert!(PointCloud::new(1, vec![f64::NAN]).is_err());
}

#[test]
fn brute_force_oracle_on_random_clouds() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sizes = [(5, 5), (2, 4), (3, 6), (2, 3), (1, 5), (4, 4), (4, 8)];
    for t in 0..140 {
        let (n, m) = sizes[t % sizes.len()];
        let d = 1 + t % 3;
        let a = random_cloud(&mut rng, n, d);
        let b = random_cloud(&mut rng, m, d);
        let fast = wasserstein2(&a, &b).unwrap();
        let slow = wasserstein2_bruteforce(&a, &b).unwrap();
        assert!((fast - slow).abs() < 1e-12, "{n}x{m} d={d}: {fast} vs {slow}");
    }
}

#[test]
fn quantile_coupling_matches_assignment() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for t in 0..40 {
        let (n, m) = [(7, 7), (12, 18), (30, 20), (5, 40)][t % 4];
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
        let l = n * m / gcd(n, m);
        let (rn, rm) = (l / n, l / m);
        let hungarian = min_cost_assignment(l, |i, j| (a[i / rn] - b[j / rm]).powi(2)) / l as f64;
        assert!((quantile_w2_sq(&a, &b) - hungarian).abs() < 1e-10);
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn metric_axioms(seed in any::<u64>(), d in 1usize..4, n in 1usize..7, m in 1usize..7, k in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c) = (random_cloud(&mut rng, n, d), random_cloud(&mut rng, m, d), random_cloud(&mut rng, k, d));
        let ab = wasserstein2(&a, &b).unwrap();
        let ba = wasserstein2(&b, &a).unwrap();
        let bc = wasserstein2(&b, &c).unwrap();
        let ac = wasserstein2(&a, &c).unwrap();
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!(ac <= ab + bc + 1e-9);
        prop_assert_eq!(wasserstein2(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn fg_rate_decreases_in_n(d in 1usize..8, p in 2.5f64..12.0, n in 1usize..10_000) {
        prop_assume!((p - 4.0).abs() > 1e-9 && (d <= 2 || (p - d as f64 / (d as f64 - 2.0)).abs() > 1e-9));
        prop_assert!(fg_rate(d, p, n + 1).unwrap() < fg_rate(d, p, n).unwrap());
    }
}

#[test]
fn fg_rate_examples() {
    assert!((fg_rate(3, 6.0, 100).unwrap() - (0.1 + 100f64.powf(-2.0 / 3.0))).abs() < 1e-15);
    assert!((fg_rate(3, 6.0, 100).unwrap() - 0.146416).abs() < 1e-6);
    assert!((fg_rate(5, 3.0, 32).unwrap() - 0.564980).abs() < 1e-6);
    assert!((fg_rate(4, 8.0, 1).unwrap() - 1.693147).abs() < 1e-6);
    assert!(matches!(fg_rate(2, 4.0, 10), Err(Error::Domain(_))));
    assert!(matches!(fg_rate(3, 3.0, 10), Err(Error::Domain(_))));
    assert!(matches!(fg_rate(1, 2.0, 10), Err(Error::Domain(_))));
}

#[test]
fn leave_one_out_distance_is_order_one_over_n_squared() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0_f64;
    for n in [4usize, 8, 16, 32, 64] {
        for _ in 0..5 {
            let m = EmpiricalMeasure::new(1, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(), (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let cloud = |e: &EmpiricalMeasure| if n <= 16 { e.joint() } else { e.x_marginal() };
            let full = cloud(&m);
            let total: f64 = full.coords().iter().map(|c| c * c).sum();
            for i in [0, n / 2] {
                let w = wasserstein2_sq(&full, &cloud(&m.leave_one_out(i).unwrap())).unwrap();
                worst = worst.max(w * (n * n) as f64 / total);
            }
        }
    }
    assert!(worst.is_finite() && worst < 10.0, "fitted constant {worst}");
}

#[test]
fn csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = EmpiricalMeasure::new(2, vec![1.0, 2.0, 3.0, 4.0], vec![0.5, -0.5, 0.25, 1e-17]).unwrap();
    let path = dir.path().join("m.csv");
    m.write_csv(&path).unwrap();
    assert_eq!(EmpiricalMeasure::read_csv(&path).unwrap(), m);
    let c = PointCloud::new(3, vec![0.1, 0.2, 0.3]).unwrap();
    c.write_csv(&dir.path().join("c.csv"), "x").unwrap();
    assert_eq!(PointCloud::read_csv(&dir.path().join("c.csv")).unwrap(), c);
}
