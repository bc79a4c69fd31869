//! Synthetic nonconvex–PL minimax objectives.
//!
//! Every problem is an average of `K` local objectives `J_k(x, y)`. Stochasticity
//! enters only through an additive linear term: a sample `ξ` adds `ε_xᵀ x + ε_yᵀ y`
//! to `J_k`, so per-sample gradients are the exact local gradients plus `(ε_x, ε_y)`.
//! Offline problems hold a finite table of such vectors per agent, mean-centered and
//! rescaled so that the empirical mean square is exactly `σ²`; online problems draw
//! fresh Gaussian vectors with `E‖ε‖² = σ²`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::mixing::eigh_symmetric;
use crate::{Error, Result};

/// Ascent stops once `‖∇_y J‖ ≤ ASCENT_TOL`.
pub const ASCENT_TOL: f64 = 1e-10;
pub const ASCENT_CAP: usize = 1_000_000;

/// One stochastic sample drawn by an agent.
#[derive(Debug, Clone, PartialEq)]
pub enum Sample {
    /// Offline: index into the agent's local sample table.
    Index(usize),
    /// Online: a fresh noise vector of length `d1 + d2`.
    Fresh(Vec<f64>),
}

impl Sample {
    pub fn label(&self) -> String {
        match self {
            Sample::Index(i) => i.to_string(),
            Sample::Fresh(_) => "fresh".into(),
        }
    }
}

/// Realized problem constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// PL constant in `y`.
    pub nu: f64,
    /// Smoothness constant.
    pub l_f: f64,
    /// `L_f / ν`.
    pub kappa: f64,
    /// Per-sample gradient noise scale.
    pub sigma: f64,
}

impl ProblemConstants {
    pub fn new(nu: f64, l_f: f64, sigma: f64) -> Self {
        Self {
            nu,
            l_f,
            kappa: l_f / nu,
            sigma,
        }
    }

    /// Smoothness of the envelope `P(x) = max_y J(x, y)`: `L = L_f + κ L_f / 2`.
    pub fn envelope_smoothness(&self) -> f64 {
        self.l_f + self.kappa * self.l_f / 2.0
    }
}

pub trait MinimaxProblem: Send + Sync {
    fn agents(&self) -> usize;

    /// `(d1, d2)`.
    fn dims(&self) -> (usize, usize);

    /// Local sample count `N` (offline) or `None` (online).
    fn sample_count(&self) -> Option<usize>;

    fn is_online(&self) -> bool {
        self.sample_count().is_none()
    }

    fn constants(&self) -> ProblemConstants;

    fn noise(&self) -> &SampleNoise;

    /// Exact local gradient `(∇_x J_k, ∇_y J_k)` written into `gx`, `gy`.
    fn local_grad(&self, k: usize, x: &[f64], y: &[f64], gx: &mut [f64], gy: &mut [f64]);

    fn local_value(&self, k: usize, x: &[f64], y: &[f64]) -> f64;

    fn draw_sample(&self, k: usize, rng: &mut ChaCha8Rng) -> Sample {
        self.noise().draw(k, rng)
    }

    /// Per-sample gradient `(∇_x Q_k(x, y; ξ), ∇_y Q_k(x, y; ξ))`.
    fn grad_sample(
        &self,
        k: usize,
        sample: &Sample,
        x: &[f64],
        y: &[f64],
        gx: &mut [f64],
        gy: &mut [f64],
    ) -> Result<()> {
        self.local_grad(k, x, y, gx, gy);
        let eps = self.noise().vector(k, sample)?;
        let d1 = gx.len();
        for (g, e) in gx.iter_mut().zip(&eps[..d1]) {
            *g += e;
        }
        for (g, e) in gy.iter_mut().zip(&eps[d1..]) {
            *g += e;
        }
        Ok(())
    }

    /// Per-sample objective `Q_k(x, y; ξ)`.
    fn sample_value(&self, k: usize, sample: &Sample, x: &[f64], y: &[f64]) -> Result<f64> {
        let eps = self.noise().vector(k, sample)?;
        let d1 = x.len();
        let lin: f64 = x.iter().zip(&eps[..d1]).map(|(a, b)| a * b).sum::<f64>()
            + y.iter().zip(&eps[d1..]).map(|(a, b)| a * b).sum::<f64>();
        Ok(self.local_value(k, x, y) + lin)
    }

    /// Global objective `J(x, y) = (1/K) Σ_k J_k(x, y)`.
    fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        let k = self.agents();
        (0..k).map(|i| self.local_value(i, x, y)).sum::<f64>() / k as f64
    }

    /// Global gradient, accumulated in ascending agent order.
    fn grad(&self, x: &[f64], y: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let (d1, d2) = self.dims();
        let mut sx = DVector::zeros(d1);
        let mut sy = DVector::zeros(d2);
        let mut gx = vec![0.0; d1];
        let mut gy = vec![0.0; d2];
        for k in 0..self.agents() {
            self.local_grad(k, x, y, &mut gx, &mut gy);
            for (s, g) in sx.iter_mut().zip(&gx) {
                *s += g;
            }
            for (s, g) in sy.iter_mut().zip(&gy) {
                *s += g;
            }
        }
        let inv = 1.0 / self.agents() as f64;
        (sx * inv, sy * inv)
    }

    /// `(y°(x), P(x))` with `P(x) = max_y J(x, y)`.
    fn maximize(&self, x: &[f64]) -> Result<(DVector<f64>, f64)> {
        let (_, d2) = self.dims();
        maximize_by_ascent(self, x, &vec![0.0; d2])
    }
}

/// Gradient ascent on `y ↦ J(x, y)` with step `1/L_f` until `‖∇_y J‖ ≤ 1e-10`.
pub fn maximize_by_ascent<P: MinimaxProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    y_init: &[f64],
) -> Result<(DVector<f64>, f64)> {
    let step = 1.0 / problem.constants().l_f;
    let mut y = y_init.to_vec();
    for _ in 0..ASCENT_CAP {
        let (_, gy) = problem.grad(x, &y);
        if gy.norm() <= ASCENT_TOL {
            let p = problem.value(x, &y);
            return Ok((DVector::from_vec(y), p));
        }
        for (yi, g) in y.iter_mut().zip(gy.iter()) {
            *yi += step * g;
        }
    }
    let (_, gy) = problem.grad(x, &y);
    Err(Error::AscentCap {
        steps: ASCENT_CAP,
        residual: gy.norm(),
    })
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Additive sample noise shared by both problem families.
#[derive(Debug, Clone)]
pub struct SampleNoise {
    sigma: f64,
    dim: usize,
    /// `tables[k][s]` is the noise vector of sample `s` at agent `k` (offline only).
    tables: Option<Vec<Vec<Vec<f64>>>>,
}

impl SampleNoise {
    pub fn online(sigma: f64, dim: usize) -> Self {
        Self {
            sigma,
            dim,
            tables: None,
        }
    }

    /// Offline tables: Gaussian draws, mean-centered per agent, rescaled so that
    /// `(1/N) Σ_s ‖ε_s‖² = σ²` exactly.
    pub fn offline(sigma: f64, dim: usize, agents: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("offline sample count N must be >= 1".into()));
        }
        let mut tables = Vec::with_capacity(agents);
        for _ in 0..agents {
            let mut table: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect())
                .collect();
            let mut mean = vec![0.0; dim];
            for row in &table {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v / n as f64;
                }
            }
            let mut msq = 0.0;
            for row in &mut table {
                for (v, m) in row.iter_mut().zip(&mean) {
                    *v -= m;
                    msq += *v * *v / n as f64;
                }
            }
            let scale = if msq > 0.0 && sigma > 0.0 {
                sigma / msq.sqrt()
            } else {
                0.0
            };
            for row in &mut table {
                for v in row.iter_mut() {
                    *v *= scale;
                }
            }
            tables.push(table);
        }
        Ok(Self {
            sigma,
            dim,
            tables: Some(tables),
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn sample_count(&self) -> Option<usize> {
        self.tables.as_ref().map(|t| t.first().map_or(0, Vec::len))
    }

    pub fn draw(&self, _k: usize, rng: &mut ChaCha8Rng) -> Sample {
        match &self.tables {
            Some(t) => Sample::Index(rng.random_range(0..t[0].len())),
            None => {
                let scale = self.sigma / (self.dim as f64).sqrt();
                Sample::Fresh(
                    (0..self.dim)
                        .map(|_| scale * gauss(rng))
                        .collect(),
                )
            }
        }
    }

    pub fn vector<'a>(&'a self, k: usize, sample: &'a Sample) -> Result<std::borrow::Cow<'a, [f64]>> {
        match (sample, &self.tables) {
            (Sample::Index(i), Some(t)) => {
                let table = &t[k];
                table
                    .get(*i)
                    .map(|v| std::borrow::Cow::Borrowed(v.as_slice()))
                    .ok_or(Error::SampleOutOfRange {
                        index: *i,
                        n: table.len(),
                    })
            }
            (Sample::Fresh(v), None) if v.len() == self.dim => Ok(std::borrow::Cow::Borrowed(v)),
            (Sample::Fresh(v), None) => Err(Error::ShapeMismatch(format!(
                "fresh sample has length {}, expected {}",
                v.len(),
                self.dim
            ))),
            (Sample::Index(_), None) => Err(Error::InvalidConfig(
                "indexed sample used on an online problem".into(),
            )),
            (Sample::Fresh(_), Some(_)) => Err(Error::InvalidConfig(
                "fresh sample used on an offline problem".into(),
            )),
        }
    }
}

/// Local data of one agent: `J_k = ½xᵀQx + xᵀRy − ½yᵀSy + aᵀx + bᵀy`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticAgent {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub a: DVector<f64>,
    pub b: DVector<f64>,
}

/// Knobs for [`make_quadratic_problem`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadraticSpec {
    pub d1: usize,
    pub d2: usize,
    /// Eigenvalues of the mean `Q̄` are drawn from `[-x_curvature, x_curvature]`.
    pub x_curvature: f64,
    /// Lower end of the spectrum of `S̄`; this is the target PL constant `ν`.
    pub nu_target: f64,
    /// Upper end of the spectrum of `S̄`.
    pub s_max: f64,
    /// Singular values of `R̄`.
    pub coupling: f64,
    /// Scale of the zero-mean per-agent perturbations of every term.
    pub heterogeneity: f64,
    /// Scale of the mean linear terms `ā`, `b̄`.
    pub linear_scale: f64,
}

impl Default for QuadraticSpec {
    fn default() -> Self {
        Self {
            d1: 3,
            d2: 3,
            x_curvature: 0.5,
            nu_target: 0.5,
            s_max: 1.0,
            coupling: 1.0,
            heterogeneity: 0.2,
            linear_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticMinimaxProblem {
    agents: Vec<QuadraticAgent>,
    q_bar: DMatrix<f64>,
    r_bar: DMatrix<f64>,
    s_bar: DMatrix<f64>,
    a_bar: DVector<f64>,
    b_bar: DVector<f64>,
    s_bar_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    noise: SampleNoise,
    constants: ProblemConstants,
}

fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    (&g + g.transpose()) * 0.5
}

/// Replaces `items` by `items - mean(items)`.
fn center<T>(items: &mut [T])
where
    T: Clone + std::ops::SubAssign + std::ops::AddAssign + std::ops::MulAssign<f64>,
{
    if items.is_empty() {
        return;
    }
    let mut mean = items[0].clone();
    for it in &items[1..] {
        mean += it.clone();
    }
    mean *= 1.0 / items.len() as f64;
    for it in items.iter_mut() {
        *it -= mean.clone();
    }
}

pub fn make_quadratic_problem(
    agents: usize,
    samples: Option<usize>,
    sigma: f64,
    seed: u64,
    spec: &QuadraticSpec,
) -> Result<QuadraticMinimaxProblem> {
    if agents == 0 {
        return Err(Error::InvalidConfig("agent count must be at least 1".into()));
    }
    if spec.d1 == 0 || spec.d2 == 0 {
        return Err(Error::InvalidConfig("d1 and d2 must be at least 1".into()));
    }
    if !(spec.nu_target > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "nu_target must be positive, got {}",
            spec.nu_target
        )));
    }
    if spec.s_max < spec.nu_target {
        return Err(Error::InvalidConfig(format!(
            "s_max ({}) must be >= nu_target ({})",
            spec.s_max, spec.nu_target
        )));
    }
    if sigma < 0.0 || spec.x_curvature < 0.0 || spec.heterogeneity < 0.0 {
        return Err(Error::InvalidConfig(
            "sigma, x_curvature and heterogeneity must be non-negative".into(),
        ));
    }
    let (d1, d2) = (spec.d1, spec.d2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let oq = random_orthogonal(d1, &mut rng);
    let q_eigs = DVector::from_fn(d1, |_, _| rng.random_range(-1.0..=1.0) * spec.x_curvature);
    let q_bar = &oq * DMatrix::from_diagonal(&q_eigs) * oq.transpose();

    let os = random_orthogonal(d2, &mut rng);
    let s_eigs = DVector::from_fn(d2, |i, _| {
        if i == 0 {
            spec.nu_target
        } else {
            rng.random_range(spec.nu_target..=spec.s_max)
        }
    });
    let s_bar = &os * DMatrix::from_diagonal(&s_eigs) * os.transpose();

    let o1 = random_orthogonal(d1, &mut rng);
    let o2 = random_orthogonal(d2, &mut rng);
    let mut core = DMatrix::zeros(d1, d2);
    for i in 0..d1.min(d2) {
        core[(i, i)] = spec.coupling;
    }
    let r_bar = &o1 * core * o2.transpose();

    let a_bar = DVector::from_fn(d1, |_, _| spec.linear_scale * gauss(&mut rng));
    let b_bar = DVector::from_fn(d2, |_, _| spec.linear_scale * gauss(&mut rng));

    let h = spec.heterogeneity;
    let mut dq: Vec<DMatrix<f64>> = (0..agents).map(|_| random_symmetric(d1, &mut rng) * h).collect();
    let mut ds: Vec<DMatrix<f64>> = (0..agents).map(|_| random_symmetric(d2, &mut rng) * h).collect();
    let mut dr: Vec<DMatrix<f64>> = (0..agents)
        .map(|_| DMatrix::from_fn(d1, d2, |_, _| StandardNormal.sample(&mut rng)) * h)
        .collect();
    let mut da: Vec<DVector<f64>> = (0..agents)
        .map(|_| DVector::from_fn(d1, |_, _| StandardNormal.sample(&mut rng)) * h)
        .collect();
    let mut db: Vec<DVector<f64>> = (0..agents)
        .map(|_| DVector::from_fn(d2, |_, _| StandardNormal.sample(&mut rng)) * h)
        .collect();
    center(&mut dq);
    center(&mut ds);
    center(&mut dr);
    center(&mut da);
    center(&mut db);

    let locals: Vec<QuadraticAgent> = (0..agents)
        .map(|k| QuadraticAgent {
            q: &q_bar + &dq[k],
            r: &r_bar + &dr[k],
            s: &s_bar + &ds[k],
            a: &a_bar + &da[k],
            b: &b_bar + &db[k],
        })
        .collect();

    let noise = match samples {
        Some(n) => SampleNoise::offline(sigma, d1 + d2, agents, n, &mut rng)?,
        None => SampleNoise::online(sigma, d1 + d2),
    };
    QuadraticMinimaxProblem::with_noise(locals, noise)
}

/// Like [`make_quadratic_problem`], but with `nu_target` adjusted so that the
/// realized condition number `L_f / ν` equals `kappa`.
///
/// `L_f` depends only mildly on `ν` (all other random draws are unchanged), so
/// the fixed point `ν = L_f(ν) / κ` is found by direct iteration.
pub fn make_quadratic_problem_with_kappa(
    agents: usize,
    samples: Option<usize>,
    sigma: f64,
    seed: u64,
    spec: &QuadraticSpec,
    kappa: f64,
) -> Result<QuadraticMinimaxProblem> {
    if !(kappa >= 1.0) {
        return Err(Error::InvalidConfig(format!("kappa must be at least 1, got {kappa}")));
    }
    let mut spec = spec.clone();
    for _ in 0..200 {
        let p = make_quadratic_problem(agents, samples, sigma, seed, &spec)?;
        let c = p.constants();
        if (c.kappa / kappa - 1.0).abs() <= 1e-12 {
            return Ok(p);
        }
        let nu = c.l_f / kappa;
        if nu > spec.s_max {
            return Err(Error::InvalidConfig(format!(
                "kappa = {kappa} needs nu = {nu} above s_max = {}",
                spec.s_max
            )));
        }
        spec.nu_target = nu;
    }
    Err(Error::InvalidConfig(format!("could not reach kappa = {kappa}")))
}

impl QuadraticMinimaxProblem {
    /// Builds a problem from explicit local data.
    pub fn from_agents(
        agents: Vec<QuadraticAgent>,
        samples: Option<usize>,
        sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        let (d1, d2) = agents
            .first()
            .map(|a| (a.q.nrows(), a.s.nrows()))
            .ok_or_else(|| Error::InvalidConfig("at least one agent is required".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = match samples {
            Some(n) => SampleNoise::offline(sigma, d1 + d2, agents.len(), n, &mut rng)?,
            None => SampleNoise::online(sigma, d1 + d2),
        };
        Self::with_noise(agents, noise)
    }

    fn with_noise(agents: Vec<QuadraticAgent>, noise: SampleNoise) -> Result<Self> {
        let k = agents.len();
        let d1 = agents[0].q.nrows();
        let d2 = agents[0].s.nrows();
        for (i, ag) in agents.iter().enumerate() {
            let ok = ag.q.shape() == (d1, d1)
                && ag.r.shape() == (d1, d2)
                && ag.s.shape() == (d2, d2)
                && ag.a.len() == d1
                && ag.b.len() == d2;
            if !ok {
                return Err(Error::ShapeMismatch(format!("agent {i} has inconsistent dimensions")));
            }
        }
        let inv = 1.0 / k as f64;
        let q_bar = agents.iter().fold(DMatrix::zeros(d1, d1), |s, a| s + &a.q) * inv;
        let r_bar = agents.iter().fold(DMatrix::zeros(d1, d2), |s, a| s + &a.r) * inv;
        let s_bar = agents.iter().fold(DMatrix::zeros(d2, d2), |s, a| s + &a.s) * inv;
        let a_bar = agents.iter().fold(DVector::zeros(d1), |s, a| s + &a.a) * inv;
        let b_bar = agents.iter().fold(DVector::zeros(d2), |s, a| s + &a.b) * inv;

        let s_sym = (&s_bar + s_bar.transpose()) * 0.5;
        let (s_eigs, _) = eigh_symmetric(&s_sym, 1e-13)?;
        let nu = s_eigs[d2 - 1];
        if !(nu > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "mean S must be positive definite (lambda_min = {nu})"
            )));
        }
        let s_bar_chol = s_sym
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidConfig("mean S is not positive definite".into()))?;

        let mut l_f: f64 = 0.0;
        for ag in &agents {
            let n = d1 + d2;
            let mut hess = DMatrix::zeros(n, n);
            hess.view_mut((0, 0), (d1, d1)).copy_from(&ag.q);
            hess.view_mut((0, d1), (d1, d2)).copy_from(&ag.r);
            hess.view_mut((d1, 0), (d2, d1)).copy_from(&ag.r.transpose());
            hess.view_mut((d1, d1), (d2, d2)).copy_from(&(-&ag.s));
            let sym = (&hess + hess.transpose()) * 0.5;
            let (eigs, _) = eigh_symmetric(&sym, 1e-13)?;
            l_f = l_f.max(eigs.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        }
        let constants = ProblemConstants::new(nu, l_f, noise.sigma());
        Ok(Self {
            agents,
            q_bar,
            r_bar,
            s_bar: s_sym,
            a_bar,
            b_bar,
            s_bar_chol,
            noise,
            constants,
        })
    }

    pub fn agent(&self, k: usize) -> &QuadraticAgent {
        &self.agents[k]
    }

    pub fn mean_q(&self) -> &DMatrix<f64> {
        &self.q_bar
    }

    pub fn mean_r(&self) -> &DMatrix<f64> {
        &self.r_bar
    }

    pub fn mean_s(&self) -> &DMatrix<f64> {
        &self.s_bar
    }

    /// Smallest eigenvalue of the envelope Hessian `Q̄ + R̄ S̄⁻¹ R̄ᵀ`.
    pub fn envelope_curvature(&self) -> f64 {
        let h = &self.q_bar + &self.r_bar * self.s_bar_chol.solve(&self.r_bar.transpose());
        let sym = (&h + h.transpose()) * 0.5;
        eigh_symmetric(&sym, 1e-13)
            .map(|(v, _)| v[v.len() - 1])
            .unwrap_or(f64::NAN)
    }

    /// Saddle point of the global objective, if the envelope is strongly convex.
    pub fn saddle_point(&self) -> Option<(DVector<f64>, DVector<f64>)> {
        // ∇P(x) = (Q̄ + R̄S̄⁻¹R̄ᵀ) x + ā + R̄S̄⁻¹b̄ = 0
        let h = &self.q_bar + &self.r_bar * self.s_bar_chol.solve(&self.r_bar.transpose());
        let rhs = -(&self.a_bar + &self.r_bar * self.s_bar_chol.solve(&self.b_bar));
        let x = h.lu().solve(&rhs)?;
        let y = self.s_bar_chol.solve(&(self.r_bar.transpose() * &x + &self.b_bar));
        Some((x, y))
    }
}

impl MinimaxProblem for QuadraticMinimaxProblem {
    fn agents(&self) -> usize {
        self.agents.len()
    }

    fn dims(&self) -> (usize, usize) {
        (self.q_bar.nrows(), self.s_bar.nrows())
    }

    fn sample_count(&self) -> Option<usize> {
        self.noise.sample_count()
    }

    fn constants(&self) -> ProblemConstants {
        self.constants
    }

    fn noise(&self) -> &SampleNoise {
        &self.noise
    }

    fn local_grad(&self, k: usize, x: &[f64], y: &[f64], gx: &mut [f64], gy: &mut [f64]) {
        let ag = &self.agents[k];
        let (d1, d2) = (x.len(), y.len());
        for i in 0..d1 {
            let mut s = ag.a[i];
            for j in 0..d1 {
                s += ag.q[(i, j)] * x[j];
            }
            for j in 0..d2 {
                s += ag.r[(i, j)] * y[j];
            }
            gx[i] = s;
        }
        for i in 0..d2 {
            let mut s = ag.b[i];
            for j in 0..d1 {
                s += ag.r[(j, i)] * x[j];
            }
            for j in 0..d2 {
                s -= ag.s[(i, j)] * y[j];
            }
            gy[i] = s;
        }
    }

    fn local_value(&self, k: usize, x: &[f64], y: &[f64]) -> f64 {
        let ag = &self.agents[k];
        let xv = DVector::from_column_slice(x);
        let yv = DVector::from_column_slice(y);
        0.5 * xv.dot(&(&ag.q * &xv)) + xv.dot(&(&ag.r * &yv)) - 0.5 * yv.dot(&(&ag.s * &yv))
            + ag.a.dot(&xv)
            + ag.b.dot(&yv)
    }

    /// Closed form `y° = S̄⁻¹(R̄ᵀx + b̄)`.
    fn maximize(&self, x: &[f64]) -> Result<(DVector<f64>, f64)> {
        let xv = DVector::from_column_slice(x);
        let y = self.s_bar_chol.solve(&(self.r_bar.transpose() * &xv + &self.b_bar));
        let p = self.value(x, y.as_slice());
        Ok((y, p))
    }
}

/// Scalar two-sided PL landscape `x² + 3 sin²x sin²y − 4y² − 10 sin²y` with
/// zero-sum linear perturbations per agent.
#[derive(Debug, Clone)]
pub struct SinPlProblem {
    /// `(c_x, c_y)` per agent.
    shifts: Vec<(f64, f64)>,
    noise: SampleNoise,
    constants: ProblemConstants,
}

/// Grid used to estimate the PL constant of [`SinPlProblem`].
pub const SINPL_GRID_HALF_WIDTH: f64 = 3.0;
pub const SINPL_GRID_POINTS: usize = 41;
/// Analytic bound on the Hessian norm: `|J_xx| ≤ 8`, `|J_yy| ≤ 34`, `|J_xy| ≤ 3`.
pub const SINPL_SMOOTHNESS: f64 = 37.0;

fn sinpl_base(x: f64, y: f64) -> f64 {
    let (sx, sy) = (x.sin(), y.sin());
    x * x + 3.0 * sx * sx * sy * sy - 4.0 * y * y - 10.0 * sy * sy
}

fn sinpl_base_grad(x: f64, y: f64) -> (f64, f64) {
    let (sx, sy) = (x.sin(), y.sin());
    let gx = 2.0 * x + 3.0 * (2.0 * x).sin() * sy * sy;
    let gy = 3.0 * sx * sx * (2.0 * y).sin() - 8.0 * y - 10.0 * (2.0 * y).sin();
    (gx, gy)
}

pub fn make_sinpl_problem(
    agents: usize,
    samples: Option<usize>,
    sigma: f64,
    seed: u64,
) -> Result<SinPlProblem> {
    if agents == 0 {
        return Err(Error::InvalidConfig("agent count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shifts: Vec<(f64, f64)> = Vec::with_capacity(agents);
    let (mut sx, mut sy) = (0.0, 0.0);
    for _ in 0..agents.saturating_sub(1) {
        let c = (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
        sx += c.0;
        sy += c.1;
        shifts.push(c);
    }
    shifts.push((-sx, -sy));
    let noise = match samples {
        Some(n) => SampleNoise::offline(sigma, 2, agents, n, &mut rng)?,
        None => SampleNoise::online(sigma, 2),
    };
    let mut problem = SinPlProblem {
        shifts,
        noise,
        constants: ProblemConstants::new(1.0, SINPL_SMOOTHNESS, sigma),
    };
    let nu = problem.estimate_pl_constant(SINPL_GRID_HALF_WIDTH, SINPL_GRID_POINTS)?;
    if !(nu > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "estimated PL constant is not positive ({nu})"
        )));
    }
    problem.constants = ProblemConstants::new(nu, SINPL_SMOOTHNESS, sigma);
    Ok(problem)
}

impl SinPlProblem {
    pub fn shifts(&self) -> &[(f64, f64)] {
        &self.shifts
    }

    /// `min ‖∇_y J‖² / (2 (P − J))` over a uniform grid on `[-w, w]²`, with `P`
    /// from the ascent oracle. Points with `P − J < 1e-9` are skipped.
    pub fn estimate_pl_constant(&self, half_width: f64, points: usize) -> Result<f64> {
        let step = 2.0 * half_width / (points - 1) as f64;
        let mut best = f64::INFINITY;
        for i in 0..points {
            let x = -half_width + i as f64 * step;
            let (_, p) = self.maximize(&[x])?;
            for j in 0..points {
                let y = -half_width + j as f64 * step;
                let gap = p - self.value(&[x], &[y]);
                if gap < 1e-9 {
                    continue;
                }
                let (_, gy) = self.grad(&[x], &[y]);
                best = best.min(gy[0] * gy[0] / (2.0 * gap));
            }
        }
        Ok(best)
    }
}

impl MinimaxProblem for SinPlProblem {
    fn agents(&self) -> usize {
        self.shifts.len()
    }

    fn dims(&self) -> (usize, usize) {
        (1, 1)
    }

    fn sample_count(&self) -> Option<usize> {
        self.noise.sample_count()
    }

    fn constants(&self) -> ProblemConstants {
        self.constants
    }

    fn noise(&self) -> &SampleNoise {
        &self.noise
    }

    fn local_grad(&self, k: usize, x: &[f64], y: &[f64], gx: &mut [f64], gy: &mut [f64]) {
        let (bx, by) = sinpl_base_grad(x[0], y[0]);
        gx[0] = bx + self.shifts[k].0;
        gy[0] = by + self.shifts[k].1;
    }

    fn local_value(&self, k: usize, x: &[f64], y: &[f64]) -> f64 {
        sinpl_base(x[0], y[0]) + self.shifts[k].0 * x[0] + self.shifts[k].1 * y[0]
    }

    fn maximize(&self, x: &[f64]) -> Result<(DVector<f64>, f64)> {
        // the global y-maximizer of the base landscape is y = 0 for every x
        maximize_by_ascent(self, x, &[0.0])
    }
}

/// Either problem family behind one type, as selected by configuration.
#[derive(Debug, Clone)]
pub enum AnyProblem {
    Quadratic(QuadraticMinimaxProblem),
    SinPl(SinPlProblem),
}

impl AnyProblem {
    fn inner(&self) -> &dyn MinimaxProblem {
        match self {
            AnyProblem::Quadratic(p) => p,
            AnyProblem::SinPl(p) => p,
        }
    }
}

impl MinimaxProblem for AnyProblem {
    fn agents(&self) -> usize {
        self.inner().agents()
    }
    fn dims(&self) -> (usize, usize) {
        self.inner().dims()
    }
    fn sample_count(&self) -> Option<usize> {
        self.inner().sample_count()
    }
    fn constants(&self) -> ProblemConstants {
        self.inner().constants()
    }
    fn noise(&self) -> &SampleNoise {
        self.inner().noise()
    }
    fn local_grad(&self, k: usize, x: &[f64], y: &[f64], gx: &mut [f64], gy: &mut [f64]) {
        self.inner().local_grad(k, x, y, gx, gy)
    }
    fn local_value(&self, k: usize, x: &[f64], y: &[f64]) -> f64 {
        self.inner().local_value(k, x, y)
    }
    fn maximize(&self, x: &[f64]) -> Result<(DVector<f64>, f64)> {
        self.inner().maximize(x)
    }
}
