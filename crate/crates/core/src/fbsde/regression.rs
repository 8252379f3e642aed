use nalgebra::DMatrix;

/// Exponent vectors of all monomials of total degree <= `degree` in `dim`
/// variables, constant first.
pub fn monomials(dim: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0u32; dim]];
    let mut frontier = out.clone();
    for _ in 0..degree {
        let mut next = Vec::new();
        for e in &frontier {
            // extend only at or after the last nonzero slot to avoid repeats
            let start = e.iter().rposition(|&v| v > 0).unwrap_or(0);
            for k in start..dim {
                let mut f = e.clone();
                f[k] += 1;
                next.push(f);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

pub fn features_into(exps: &[Vec<u32>], x: &[f64], out: &mut [f64]) {
    for (o, e) in out.iter_mut().zip(exps) {
        *o = e.iter().zip(x).map(|(&p, v)| v.powi(p as i32)).product();
    }
}

/// Least-squares (minimum-norm) solution of A c = B. Returns the
/// coefficients and the numerical rank of A.
pub fn lstsq(a: DMatrix<f64>, b: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let cols = a.ncols();
    let svd = a.svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return (DMatrix::zeros(cols, b.ncols()), 0);
    }
    let eps = 1e-11 * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let c = svd.solve(b, eps).expect("svd has both factors");
    (c, rank)
}
