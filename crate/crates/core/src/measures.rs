//! Empirical measures, exact quadratic Wasserstein distances and the
//! Fournier-Guillin empirical rate.

use crate::error::{input, Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Largest common refinement accepted by [`wasserstein2`].
pub const MAX_ASSIGNMENT: usize = 4096;

/// Uniformly weighted points in R^width, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    width: usize,
    coords: Vec<f64>,
}

impl PointCloud {
    pub fn new(width: usize, coords: Vec<f64>) -> Result<Self> {
        if width == 0 {
            return input("point width must be positive");
        }
        if coords.is_empty() || coords.len() % width != 0 {
            return input(format!(
                "{} coordinates do not form a non-empty cloud of width {width}",
                coords.len()
            ));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return input("non-finite coordinate");
        }
        Ok(Self { width, coords })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return input("ragged rows");
        }
        Self::new(width, rows.concat())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.width..(i + 1) * self.width]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn mean(&self) -> Vec<f64> {
        column_mean(&self.coords, self.width)
    }

    pub fn second_moment(&self) -> f64 {
        self.coords.iter().map(|c| c * c).sum::<f64>() / self.len() as f64
    }

    pub fn write_csv(&self, path: &Path, prefix: &str) -> Result<()> {
        let header: Vec<String> = (0..self.width).map(|k| format!("{prefix}{k}")).collect();
        write_rows(path, &header, self.coords.chunks(self.width))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let (width, coords) = read_rows(path)?;
        Self::new(width, coords)
    }
}

/// Uniform empirical measure on R^d x R^d: pairs (x_i, a_i).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    dim: usize,
    x: Vec<f64>,
    a: Vec<f64>,
}

/// First moments of a measure on state-control space.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub mean_x: Vec<f64>,
    pub mean_a: Vec<f64>,
}

impl Moments {
    pub fn zeros(dim: usize) -> Self {
        Self {
            mean_x: vec![0.0; dim],
            mean_a: vec![0.0; dim],
        }
    }
}

impl EmpiricalMeasure {
    pub fn new(dim: usize, x: Vec<f64>, a: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return input("dimension must be positive");
        }
        if x.is_empty() || x.len() % dim != 0 || x.len() != a.len() {
            return input(format!(
                "state ({}) and control ({}) coordinates do not pair up in dimension {dim}",
                x.len(),
                a.len()
            ));
        }
        if x.iter().chain(&a).any(|c| !c.is_finite()) {
            return input("non-finite coordinate");
        }
        Ok(Self { dim, x, a })
    }

    /// Dirac mass at a single pair.
    pub fn dirac(x: &[f64], a: &[f64]) -> Result<Self> {
        Self::new(x.len(), x.to_vec(), a.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn a(&self, i: usize) -> &[f64] {
        &self.a[i * self.dim..(i + 1) * self.dim]
    }

    pub fn xs(&self) -> &[f64] {
        &self.x
    }

    pub fn controls(&self) -> &[f64] {
        &self.a
    }

    pub fn moments(&self) -> Moments {
        Moments {
            mean_x: column_mean(&self.x, self.dim),
            mean_a: column_mean(&self.a, self.dim),
        }
    }

    /// Second moment of the joint law, E|x|^2 + E|a|^2.
    pub fn second_moment(&self) -> f64 {
        self.x.iter().chain(&self.a).map(|c| c * c).sum::<f64>() / self.len() as f64
    }

    /// m^{N,-i}: the empirical measure of all pairs except the i-th.
    pub fn leave_one_out(&self, i: usize) -> Result<Self> {
        let n = self.len();
        if n < 2 {
            return input("leave-one-out needs at least two points");
        }
        if i >= n {
            return input(format!("index {i} out of range for {n} points"));
        }
        let d = self.dim;
        let mut x = self.x.clone();
        let mut a = self.a.clone();
        x.drain(i * d..(i + 1) * d);
        a.drain(i * d..(i + 1) * d);
        Self::new(d, x, a)
    }

    pub fn x_marginal(&self) -> PointCloud {
        PointCloud {
            width: self.dim,
            coords: self.x.clone(),
        }
    }

    /// Points (x_i, a_i) in R^{2d}.
    pub fn joint(&self) -> PointCloud {
        let mut coords = Vec::with_capacity(2 * self.x.len());
        for i in 0..self.len() {
            coords.extend_from_slice(self.x(i));
            coords.extend_from_slice(self.a(i));
        }
        PointCloud {
            width: 2 * self.dim,
            coords,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header: Vec<String> = (0..self.dim)
            .map(|k| format!("x{k}"))
            .chain((0..self.dim).map(|k| format!("a{k}")))
            .collect();
        let joint = self.joint();
        write_rows(path, &header, joint.coords.chunks(joint.width))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let (width, coords) = read_rows(path)?;
        if width % 2 != 0 {
            return Err(Error::Parse(format!("odd column count {width}")));
        }
        let d = width / 2;
        let mut x = Vec::with_capacity(coords.len() / 2);
        let mut a = Vec::with_capacity(coords.len() / 2);
        for row in coords.chunks(width) {
            x.extend_from_slice(&row[..d]);
            a.extend_from_slice(&row[d..]);
        }
        Self::new(d, x, a)
    }
}

pub(crate) fn column_mean(coords: &[f64], width: usize) -> Vec<f64> {
    let mut m = vec![0.0; width];
    for row in coords.chunks(width) {
        for (mk, v) in m.iter_mut().zip(row) {
            *mk += v;
        }
    }
    let n = (coords.len() / width) as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

fn write_rows<'a>(
    path: &Path,
    header: &[String],
    rows: impl Iterator<Item = &'a [f64]>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows(path: &Path) -> Result<(usize, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let width = r.headers().map_err(csv_err)?.len();
    let mut coords = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        for field in rec.iter() {
            coords.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{field}: {e}")))?,
            );
        }
    }
    Ok((width, coords))
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn check_pair(mu: &PointCloud, nu: &PointCloud) -> Result<usize> {
    if mu.width != nu.width {
        return input(format!(
            "clouds live in different spaces ({} vs {})",
            mu.width, nu.width
        ));
    }
    let l = mu.len() / gcd(mu.len(), nu.len()) * nu.len();
    Ok(l)
}

fn sq_dist(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Exact d_2 between two uniform empirical measures.
///
/// Unequal sizes are brought to their least common multiple by replicating
/// atoms; the resulting balanced assignment is solved exactly. On the real
/// line the monotone (quantile) coupling is used instead.
pub fn wasserstein2(mu: &PointCloud, nu: &PointCloud) -> Result<f64> {
    wasserstein2_sq(mu, nu).map(f64::sqrt)
}

/// Squared distance d_2^2.
pub fn wasserstein2_sq(mu: &PointCloud, nu: &PointCloud) -> Result<f64> {
    let l = check_pair(mu, nu)?;
    if mu.width == 1 {
        return Ok(quantile_w2_sq(&mu.coords, &nu.coords));
    }
    if l > MAX_ASSIGNMENT {
        return Err(Error::Domain(format!(
            "common refinement of size {l} exceeds {MAX_ASSIGNMENT}"
        )));
    }
    let (rn, rm) = (l / mu.len(), l / nu.len());
    let cost = |i: usize, j: usize| sq_dist(mu.point(i / rn), nu.point(j / rm));
    let total = min_cost_assignment(l, cost);
    Ok((total / l as f64).max(0.0))
}

/// Exact squared distance on the real line through sorted quantiles.
pub fn quantile_w2_sq(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    quantile_w2_sq_sorted(&a, &b)
}

/// Same as [`quantile_w2_sq`] for inputs already sorted ascending.
pub fn quantile_w2_sq_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    // atom i of `a` covers [i m, (i+1) m) in units of 1/(n m); likewise for `b`
    let (mut i, mut j, mut pos) = (0usize, 0usize, 0usize);
    let mut total = 0.0;
    while i < n && j < m {
        let (end_a, end_b) = ((i + 1) * m, (j + 1) * n);
        let end = end_a.min(end_b);
        let d = a[i] - b[j];
        total += (end - pos) as f64 * d * d;
        pos = end;
        if end_a == end {
            i += 1;
        }
        if end_b == end {
            j += 1;
        }
    }
    total / (n as f64 * m as f64)
}

/// Minimum total cost of a perfect assignment on an n x n cost function
/// (shortest augmenting paths with potentials).
pub fn min_cost_assignment(n: usize, cost: impl Fn(usize, usize) -> f64) -> f64 {
    // 1-based arrays: p[j] is the row matched to column j
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| cost(p[j] - 1, j - 1)).sum()
}

/// Brute-force d_2 by enumerating all couplings of the common refinement.
/// Refuses refinements larger than 8 points.
pub fn wasserstein2_bruteforce(mu: &PointCloud, nu: &PointCloud) -> Result<f64> {
    let l = check_pair(mu, nu)?;
    if l > 8 {
        return Err(Error::Domain(format!(
            "brute force limited to 8 points, got {l}"
        )));
    }
    let (rn, rm) = (l / mu.len(), l / nu.len());
    let mut perm: Vec<usize> = (0..l).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let c: f64 = p
            .iter()
            .enumerate()
            .map(|(i, &j)| sq_dist(mu.point(i / rn), nu.point(j / rm)))
            .sum();
        best = best.min(c);
    });
    Ok((best / l as f64).sqrt())
}

fn permute(p: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}

/// Fournier-Guillin bound for E d_2^2(m^N, mu) with mu in R^d having a
/// finite moment of order p.
pub fn fg_rate(d: usize, p: f64, n: usize) -> Result<f64> {
    if d == 0 || n == 0 {
        return input("dimension and sample size must be positive");
    }
    if !(p > 2.0) || (p - 4.0).abs() < 1e-12 {
        return Err(Error::Domain(format!("moment order {p} not admissible")));
    }
    if d > 2 {
        let crit = d as f64 / (d as f64 - 2.0);
        if (p - crit).abs() < 1e-12 {
            return Err(Error::Domain(format!(
                "moment order {p} equals the critical value {crit}"
            )));
        }
    }
    let nf = n as f64;
    let tail = nf.powf(-(p - 2.0) / p);
    let lead = match d {
        1..=3 => nf.powf(-0.5),
        4 => nf.powf(-0.5) * (1.0 + nf).ln(),
        _ => nf.powf(-2.0 / d as f64),
    };
    Ok(lead + tail)
}
