use crate::error::{input, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::hash::{DefaultHasher, Hasher};

/// Brownian increments for a population plus one common-noise path.
///
/// Particle i always draws from stream i + 1 of the seeded generator and the
/// common noise from stream 0, so the first N particles of any bundle with
/// the same seed and grid coincide.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathBundle {
    pub seed: u64,
    pub dt: f64,
    pub steps: usize,
    pub particles: usize,
    pub dim: usize,
    idio: Vec<f64>,
    common: Vec<f64>,
}

fn stream(seed: u64, index: u64, len: usize, sd: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    (0..len)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

pub fn generate_paths(
    seed: u64,
    dt: f64,
    steps: usize,
    particles: usize,
    dim: usize,
) -> Result<PathBundle> {
    if !(dt > 0.0) || !dt.is_finite() {
        return input("dt must be positive");
    }
    if steps == 0 || particles == 0 || dim == 0 {
        return input("steps, particles and dim must be positive");
    }
    let sd = dt.sqrt();
    let mut idio = Vec::with_capacity(particles * steps * dim);
    for i in 0..particles {
        idio.extend(stream(seed, i as u64 + 1, steps * dim, sd));
    }
    Ok(PathBundle {
        seed,
        dt,
        steps,
        particles,
        dim,
        idio,
        common: stream(seed, 0, steps * dim, sd),
    })
}

impl PathBundle {
    /// Idiosyncratic increment of particle i over [t_k, t_{k+1}].
    pub fn dw(&self, i: usize, k: usize) -> &[f64] {
        let s = (i * self.steps + k) * self.dim;
        &self.idio[s..s + self.dim]
    }

    /// Common-noise increment over [t_k, t_{k+1}].
    pub fn dw0(&self, k: usize) -> &[f64] {
        &self.common[k * self.dim..(k + 1) * self.dim]
    }

    /// The first `n` particles with the same common noise.
    pub fn truncated(&self, n: usize) -> Result<PathBundle> {
        if n == 0 || n > self.particles {
            return input(format!("cannot keep {n} of {} particles", self.particles));
        }
        Ok(PathBundle {
            particles: n,
            idio: self.idio[..n * self.steps * self.dim].to_vec(),
            ..self.clone_common()
        })
    }

    /// Particle j of the result is particle `order[j]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Result<PathBundle> {
        let mut seen = vec![false; self.particles];
        if order.len() != self.particles || order.iter().any(|&i| i >= self.particles || std::mem::replace(&mut seen[i], true)) {
            return input("order is not a permutation of the particles");
        }
        let len = self.steps * self.dim;
        let idio = order
            .iter()
            .flat_map(|&i| self.idio[i * len..(i + 1) * len].iter().copied())
            .collect();
        Ok(PathBundle {
            particles: self.particles,
            idio,
            ..self.clone_common()
        })
    }

    fn clone_common(&self) -> PathBundle {
        PathBundle {
            seed: self.seed,
            dt: self.dt,
            steps: self.steps,
            particles: 0,
            dim: self.dim,
            idio: Vec::new(),
            common: self.common.clone(),
        }
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.dt * k as f64
    }

    /// Cross-sectional mean of the idiosyncratic increments at step k.
    pub fn mean_dw(&self, k: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for i in 0..self.particles {
            for (mc, v) in m.iter_mut().zip(self.dw(i, k)) {
                *mc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.particles as f64);
        m
    }

    /// Hash of particle i's increments, for checking stream sharing.
    pub fn stream_checksum(&self, i: usize) -> u64 {
        let mut h = DefaultHasher::new();
        let s = i * self.steps * self.dim;
        for v in &self.idio[s..s + self.steps * self.dim] {
            h.write_u64(v.to_bits());
        }
        h.finish()
    }

    pub fn common_checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for v in &self.common {
            h.write_u64(v.to_bits());
        }
        h.finish()
    }
}
