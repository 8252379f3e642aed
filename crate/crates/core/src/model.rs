//! Running cost L, terminal cost G and the Hamiltonian of the model family
//!
//! L(x,a,mu) = kappa_x/2 |x|^2 + kappa_a/2 |a|^2 + L0(x,a,mu),
//! G(x,m)    = kappa_g/2 |x|^2 + G0(x,m),
//!
//! where L0 and G0 collect the mean couplings c_aa a.<a>, c_xx x.<x>,
//! c_g x.<x> and a catalog of bounded ridge terms acting coordinatewise.
//! The measure enters only through its first moments.

use crate::error::{input, Error, Result};
use crate::measures::{EmpiricalMeasure, Moments, PointCloud};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const NEWTON_MAX_ITERS: usize = 50;
pub const NEWTON_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Sin,
    Cos,
    Tanh,
}

impl Profile {
    /// (phi, phi', phi'') at s.
    pub fn eval(self, s: f64) -> (f64, f64, f64) {
        match self {
            Profile::Sin => (s.sin(), s.cos(), -s.sin()),
            Profile::Cos => (s.cos(), -s.sin(), -s.cos()),
            Profile::Tanh => {
                let t = s.tanh();
                let d = 1.0 - t * t;
                (t, d, -2.0 * t * d)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Running,
    Terminal,
}

/// amp * sum_k phi(wx x_k + wa a_k + wmx <x>_k + wma <a>_k)
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothTerm {
    pub target: Target,
    pub profile: Profile,
    pub amp: f64,
    #[serde(default)]
    pub wx: f64,
    #[serde(default)]
    pub wa: f64,
    #[serde(default)]
    pub wmx: f64,
    #[serde(default)]
    pub wma: f64,
}

impl SmoothTerm {
    fn arg(&self, x: f64, a: f64, mx: f64, ma: f64) -> f64 {
        self.wx * x + self.wa * a + self.wmx * mx + self.wma * ma
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InteractionSpec {
    pub c_aa: f64,
    pub c_xx: f64,
    pub c_g: f64,
    pub smooth_terms: Vec<SmoothTerm>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dim: usize,
    pub horizon: f64,
    pub sigma0: f64,
    pub kappa_x: f64,
    pub kappa_a: f64,
    pub kappa_g: f64,
    pub interaction: InteractionSpec,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    dim: usize,
    horizon: f64,
    #[serde(default)]
    sigma0: f64,
    #[serde(default)]
    kappa_x: f64,
    kappa_a: f64,
    #[serde(default)]
    kappa_g: f64,
    #[serde(default)]
    c_aa: f64,
    #[serde(default)]
    c_xx: f64,
    #[serde(default)]
    c_g: f64,
    #[serde(default)]
    smooth_terms: Vec<SmoothTerm>,
}

impl ModelSpec {
    /// Pure quadratic model with no interaction.
    pub fn quadratic(dim: usize, horizon: f64, kappa_x: f64, kappa_a: f64, kappa_g: f64) -> Self {
        Self {
            dim,
            horizon,
            sigma0: 0.0,
            kappa_x,
            kappa_a,
            kappa_g,
            interaction: InteractionSpec::default(),
        }
    }

    pub fn with_couplings(mut self, c_aa: f64, c_xx: f64, c_g: f64) -> Self {
        self.interaction.c_aa = c_aa;
        self.interaction.c_xx = c_xx;
        self.interaction.c_g = c_g;
        self
    }

    pub fn with_sigma0(mut self, sigma0: f64) -> Self {
        self.sigma0 = sigma0;
        self
    }

    pub fn with_term(mut self, term: SmoothTerm) -> Self {
        self.interaction.smooth_terms.push(term);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let scalars = [
            self.horizon,
            self.sigma0,
            self.kappa_x,
            self.kappa_a,
            self.kappa_g,
            self.interaction.c_aa,
            self.interaction.c_xx,
            self.interaction.c_g,
        ];
        if scalars.iter().any(|v| !v.is_finite()) {
            return input("non-finite model parameter");
        }
        if self.dim == 0 {
            return input("dim must be at least 1");
        }
        if self.horizon <= 0.0 {
            return input("horizon must be positive");
        }
        if self.sigma0 < 0.0 {
            return input("sigma0 must be non-negative");
        }
        if self.kappa_a <= 0.0 {
            return input("kappa_a must be positive");
        }
        for t in &self.interaction.smooth_terms {
            let w = [t.amp, t.wx, t.wa, t.wmx, t.wma];
            if w.iter().any(|v| !v.is_finite()) {
                return input("non-finite smooth term");
            }
            if t.target == Target::Terminal && (t.wa != 0.0 || t.wma != 0.0) {
                return input("terminal terms cannot depend on controls");
            }
        }
        if self.convexity_margin() <= 0.0 {
            return input(format!(
                "running cost is not uniformly convex in the control (margin {})",
                self.convexity_margin()
            ));
        }
        Ok(())
    }

    /// Lower bound on the eigenvalues of D_aa L.
    pub fn convexity_margin(&self) -> f64 {
        self.kappa_a
            - self
                .running_terms()
                .map(|t| t.amp.abs() * t.wa * t.wa)
                .sum::<f64>()
    }

    /// True when there are no smooth terms, so the model is linear-quadratic.
    pub fn is_lq(&self) -> bool {
        self.interaction.smooth_terms.is_empty()
    }

    fn running_terms(&self) -> impl Iterator<Item = &SmoothTerm> {
        self.interaction
            .smooth_terms
            .iter()
            .filter(|t| t.target == Target::Running)
    }

    fn terminal_terms(&self) -> impl Iterator<Item = &SmoothTerm> {
        self.interaction
            .smooth_terms
            .iter()
            .filter(|t| t.target == Target::Terminal)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let f: ModelFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let m = Self {
            dim: f.dim,
            horizon: f.horizon,
            sigma0: f.sigma0,
            kappa_x: f.kappa_x,
            kappa_a: f.kappa_a,
            kappa_g: f.kappa_g,
            interaction: InteractionSpec {
                c_aa: f.c_aa,
                c_xx: f.c_xx,
                c_g: f.c_g,
                smooth_terms: f.smooth_terms,
            },
        };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        let f = ModelFile {
            dim: self.dim,
            horizon: self.horizon,
            sigma0: self.sigma0,
            kappa_x: self.kappa_x,
            kappa_a: self.kappa_a,
            kappa_g: self.kappa_g,
            c_aa: self.interaction.c_aa,
            c_xx: self.interaction.c_xx,
            c_g: self.interaction.c_g,
            smooth_terms: self.interaction.smooth_terms.clone(),
        };
        toml::to_string(&f).expect("model serializes")
    }

    fn check_dims(&self, pts: &[&[f64]]) -> Result<()> {
        if pts.iter().any(|p| p.len() != self.dim) {
            return input(format!("expected points in dimension {}", self.dim));
        }
        Ok(())
    }

    fn check_measure(&self, mu: &EmpiricalMeasure) -> Result<Moments> {
        if mu.dim() != self.dim {
            return input(format!(
                "measure dimension {} differs from model dimension {}",
                mu.dim(),
                self.dim
            ));
        }
        Ok(mu.moments())
    }

    // ---- moment-level evaluations (no validation, used by the solvers) ----

    pub fn lagrangian_m(&self, x: &[f64], a: &[f64], m: &Moments) -> f64 {
        let ia = &self.interaction;
        let mut v = 0.0;
        for k in 0..self.dim {
            let (xk, ak, mx, ma) = (x[k], a[k], m.mean_x[k], m.mean_a[k]);
            v += 0.5 * self.kappa_x * xk * xk
                + 0.5 * self.kappa_a * ak * ak
                + ia.c_aa * ak * ma
                + ia.c_xx * xk * mx;
            for t in self.running_terms() {
                v += t.amp * t.profile.eval(t.arg(xk, ak, mx, ma)).0;
            }
        }
        v
    }

    /// k-th component of D_a L and the k-th diagonal entry of D_aa L.
    fn da_l_k(&self, k: usize, x: f64, a: f64, m: &Moments) -> (f64, f64) {
        let (mx, ma) = (m.mean_x[k], m.mean_a[k]);
        let mut g = self.kappa_a * a + self.interaction.c_aa * ma;
        let mut h = self.kappa_a;
        for t in self.running_terms() {
            let (_, d1, d2) = t.profile.eval(t.arg(x, a, mx, ma));
            g += t.amp * d1 * t.wa;
            h += t.amp * d2 * t.wa * t.wa;
        }
        (g, h)
    }

    pub fn grad_a_l_m(&self, x: &[f64], a: &[f64], m: &Moments) -> Vec<f64> {
        (0..self.dim).map(|k| self.da_l_k(k, x[k], a[k], m).0).collect()
    }

    pub fn grad_x_l_m(&self, x: &[f64], a: &[f64], m: &Moments) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.grad_x_l_into(x, a, m, &mut out);
        out
    }

    pub fn grad_x_l_into(&self, x: &[f64], a: &[f64], m: &Moments, out: &mut [f64]) {
        for k in 0..self.dim {
            let (mx, ma) = (m.mean_x[k], m.mean_a[k]);
            let mut g = self.kappa_x * x[k] + self.interaction.c_xx * mx;
            for t in self.running_terms() {
                g += t.amp * t.profile.eval(t.arg(x[k], a[k], mx, ma)).1 * t.wx;
            }
            out[k] = g;
        }
    }

    /// Wasserstein gradient of L in the measure, evaluated at any support
    /// point: (state part, control part). Constant in the support point.
    pub fn grad_mu_l_m(&self, x: &[f64], a: &[f64], m: &Moments) -> (Vec<f64>, Vec<f64>) {
        let ia = &self.interaction;
        let mut gx = vec![0.0; self.dim];
        let mut ga = vec![0.0; self.dim];
        for k in 0..self.dim {
            let (mx, ma) = (m.mean_x[k], m.mean_a[k]);
            gx[k] = ia.c_xx * x[k];
            ga[k] = ia.c_aa * a[k];
            for t in self.running_terms() {
                let d1 = t.profile.eval(t.arg(x[k], a[k], mx, ma)).1;
                gx[k] += t.amp * d1 * t.wmx;
                ga[k] += t.amp * d1 * t.wma;
            }
        }
        (gx, ga)
    }

    /// Minimiser a* of a.p + L(x,a,mu), i.e. the root of D_a L + p, by
    /// damped Newton. The measure (and hence <a>) is held fixed.
    pub fn optimal_control_into(
        &self,
        x: &[f64],
        p: &[f64],
        m: &Moments,
        out: &mut [f64],
    ) -> Result<()> {
        for k in 0..self.dim {
            let c = self.interaction.c_aa * m.mean_a[k];
            let mut a = -(p[k] + c) / self.kappa_a;
            let (mut g, mut h) = self.da_l_k(k, x[k], a, m);
            let mut f = g + p[k];
            let mut iters = 0;
            while f.abs() > NEWTON_TOL * (1.0 + p[k].abs()) {
                if iters == NEWTON_MAX_ITERS {
                    return Err(Error::NoConvergence {
                        kind: "optimal control",
                        iterations: iters,
                        residual: f.abs(),
                        history: Vec::new(),
                    });
                }
                iters += 1;
                let step = f / h;
                let mut lam = 1.0;
                loop {
                    let trial = a - lam * step;
                    let (g2, h2) = self.da_l_k(k, x[k], trial, m);
                    if (g2 + p[k]).abs() < f.abs() || lam < 1e-8 {
                        a = trial;
                        g = g2;
                        h = h2;
                        break;
                    }
                    lam *= 0.5;
                }
                f = g + p[k];
            }
            out[k] = a;
        }
        Ok(())
    }

    pub fn optimal_control_m(&self, x: &[f64], p: &[f64], m: &Moments) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.optimal_control_into(x, p, m, &mut out)?;
        Ok(out)
    }

    pub fn hamiltonian_m(&self, x: &[f64], p: &[f64], m: &Moments) -> Result<f64> {
        let a = self.optimal_control_m(x, p, m)?;
        let ap: f64 = a.iter().zip(p).map(|(u, v)| u * v).sum();
        Ok(-ap - self.lagrangian_m(x, &a, m))
    }

    /// D_x H = -D_x L(x, a*, mu).
    pub fn grad_x_h_m(&self, x: &[f64], p: &[f64], m: &Moments) -> Result<Vec<f64>> {
        let a = self.optimal_control_m(x, p, m)?;
        Ok(self.grad_x_l_m(x, &a, m).into_iter().map(|v| -v).collect())
    }

    pub fn terminal_cost_m(&self, x: &[f64], mean_x: &[f64]) -> f64 {
        let mut v = 0.0;
        for k in 0..self.dim {
            v += 0.5 * self.kappa_g * x[k] * x[k] + self.interaction.c_g * x[k] * mean_x[k];
            for t in self.terminal_terms() {
                v += t.amp * t.profile.eval(t.arg(x[k], 0.0, mean_x[k], 0.0)).0;
            }
        }
        v
    }

    pub fn grad_x_g_into(&self, x: &[f64], mean_x: &[f64], out: &mut [f64]) {
        for k in 0..self.dim {
            let mut g = self.kappa_g * x[k] + self.interaction.c_g * mean_x[k];
            for t in self.terminal_terms() {
                g += t.amp * t.profile.eval(t.arg(x[k], 0.0, mean_x[k], 0.0)).1 * t.wx;
            }
            out[k] = g;
        }
    }

    pub fn grad_x_g_m(&self, x: &[f64], mean_x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.grad_x_g_into(x, mean_x, &mut out);
        out
    }

    // ---- validated public operations ----

    pub fn lagrangian(&self, x: &[f64], a: &[f64], mu: &EmpiricalMeasure) -> Result<f64> {
        self.check_dims(&[x, a])?;
        let m = self.check_measure(mu)?;
        Ok(self.lagrangian_m(x, a, &m))
    }

    pub fn optimal_control(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure) -> Result<Vec<f64>> {
        self.check_dims(&[x, p])?;
        let m = self.check_measure(mu)?;
        self.optimal_control_m(x, p, &m)
    }

    pub fn hamiltonian(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure) -> Result<f64> {
        self.check_dims(&[x, p])?;
        let m = self.check_measure(mu)?;
        self.hamiltonian_m(x, p, &m)
    }

    /// D_p H = -a*.
    pub fn grad_p_h(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure) -> Result<Vec<f64>> {
        Ok(self
            .optimal_control(x, p, mu)?
            .into_iter()
            .map(|v| -v)
            .collect())
    }

    pub fn grad_x_h(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure) -> Result<Vec<f64>> {
        self.check_dims(&[x, p])?;
        let m = self.check_measure(mu)?;
        self.grad_x_h_m(x, p, &m)
    }

    /// D_mu H(x,p,mu)(y) = -D_mu L(x,a*,mu)(y), returned as (state part,
    /// control part). `y` must be a point of R^d x R^d.
    pub fn grad_mu_h(
        &self,
        x: &[f64],
        p: &[f64],
        mu: &EmpiricalMeasure,
        y: (&[f64], &[f64]),
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_dims(&[x, p, y.0, y.1])?;
        let m = self.check_measure(mu)?;
        let a = self.optimal_control_m(x, p, &m)?;
        let (gx, ga) = self.grad_mu_l_m(x, &a, &m);
        Ok((
            gx.into_iter().map(|v| -v).collect(),
            ga.into_iter().map(|v| -v).collect(),
        ))
    }

    pub fn terminal_cost(&self, x: &[f64], m: &PointCloud) -> Result<f64> {
        self.check_dims(&[x])?;
        if m.width() != self.dim {
            return input("terminal measure has the wrong dimension");
        }
        Ok(self.terminal_cost_m(x, &m.mean()))
    }

    pub fn grad_x_g(&self, x: &[f64], m: &PointCloud) -> Result<Vec<f64>> {
        self.check_dims(&[x])?;
        if m.width() != self.dim {
            return input("terminal measure has the wrong dimension");
        }
        Ok(self.grad_x_g_m(x, &m.mean()))
    }
}
