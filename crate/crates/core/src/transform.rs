//! Transformed-recursion diagnostics.
//!
//! On the consensus subspace `𝟙⊥` every design matrix is diagonal in the
//! eigenbasis `Û` of `W`, so the deviation recursion splits into independent 2×2
//! blocks `P_j = [[a_j c_j − b_j², −b_j], [b_j, 1]]`. Each block is brought into
//! a contractive form `P_j = Q_j T_j Q_j⁻¹`:
//!
//! - complex pair: `Q_j = [Re v, Im v]` for an eigenvector `v`, `T_j` a
//!   rotation-scaling with `‖T_j‖` equal to the eigenvalue modulus;
//! - real distinct: unit eigenvectors, `T_j` diagonal;
//! - repeated eigenvalue `λ₀` with a nilpotent part `N = P_j − λ₀I ≠ 0` (this is
//!   the case for every gradient-tracking variant): a scaled Jordan basis
//!   `Q_j = [N q/γ, q]` with `γ = (1 − |λ₀|)/2`, giving
//!   `T_j = [[λ₀, γ], [0, λ₀]]` and `‖T_j‖ ≤ (1 + |λ₀|)/2`.
//!
//! Each `Q_j` is then rescaled to `‖Q_j‖² = 2`; `T_j` is always recomputed as
//! `Q_j⁻¹ P_j Q_j` so the similarity residual stays at rounding level.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::Serialize;

use crate::mixing::MixingMatrix;
use crate::problems::ProblemConstants;
use crate::schedules::Condition;
use crate::strategies::{BlockVector, StrategyOps};
use crate::{Error, Result};

/// `|b_j|` below this on a non-principal mode means the mode is not damped.
pub const DEGENERATE_B_TOL: f64 = 1e-12;
/// Eigenvector condition numbers above this are flagged.
pub const COND_FLAG: f64 = 1e8;
/// Target for `‖Q_j‖²`.
pub const Q_NORM_SQ: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    RealDistinct,
    ComplexPair,
    Jordan,
    Scalar,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeBlock {
    pub eigenvalue_w: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub kind: ModeKind,
    #[serde(skip)]
    pub p: Matrix2<f64>,
    #[serde(skip)]
    pub q: Matrix2<f64>,
    #[serde(skip)]
    pub q_inv: Matrix2<f64>,
    #[serde(skip)]
    pub t: Matrix2<f64>,
    pub t_norm: f64,
    pub cond: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone)]
pub struct TransformBundle {
    /// `K × (K−1)` orthonormal basis of `𝟙⊥`.
    pub u_hat: DMatrix<f64>,
    pub lam_a: DVector<f64>,
    pub lam_b: DVector<f64>,
    pub lam_c: DVector<f64>,
    pub modes: Vec<ModeBlock>,
    /// Block matrices in stacked `[top; bottom]` ordering, `2(K−1)` square.
    pub p_mat: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub q_inv: DMatrix<f64>,
    pub t_mat: DMatrix<f64>,
    pub rho: f64,
    pub v1_sq: f64,
    pub v2_sq: f64,
    /// `max_j |a_j|`.
    pub lam_a_max: f64,
    /// `min_j |b_j|`.
    pub lam_b_underline: f64,
    pub tau: f64,
    pub similarity_residual: f64,
    /// Second-largest eigenvalue of `W` and its smallest nonzero eigenvalue.
    pub lambda: f64,
    pub lambda_underline: f64,
    a_mat: DMatrix<f64>,
    b_mat: DMatrix<f64>,
    b_sq: DMatrix<f64>,
}

/// Spectral norm of a 2×2 matrix.
pub fn norm2x2(m: &Matrix2<f64>) -> f64 {
    let s = m.iter().map(|v| v * v).sum::<f64>();
    let det = m.determinant();
    let disc = (s * s - 4.0 * det * det).max(0.0);
    ((s + disc.sqrt()) / 2.0).sqrt()
}

/// Eigenvector of `p` for eigenvalue `(re, im)`, as a complex pair `(real, imag)`;
/// chooses the better conditioned of the two row-based formulas.
fn eigvec(p: &Matrix2<f64>, re: f64, im: f64) -> (Vector2<f64>, Vector2<f64>) {
    // (P − ξI)v = 0; from row 1: v = (p12, ξ − p11); from row 2: v = (ξ − p22, p21)
    let v1 = (Vector2::new(p[(0, 1)], re - p[(0, 0)]), Vector2::new(0.0, im));
    let v2 = (Vector2::new(re - p[(1, 1)], p[(1, 0)]), Vector2::new(im, 0.0));
    let n1 = v1.0.norm_squared() + v1.1.norm_squared();
    let n2 = v2.0.norm_squared() + v2.1.norm_squared();
    let (r, i) = if n1 >= n2 { v1 } else { v2 };
    let n = (r.norm_squared() + i.norm_squared()).sqrt();
    (r / n, i / n)
}

fn cond2x2(m: &Matrix2<f64>) -> f64 {
    let smax = norm2x2(m);
    let det = m.determinant().abs();
    if det == 0.0 {
        f64::INFINITY
    } else {
        smax * smax / det
    }
}

/// Decomposes one mode block. Returns `(kind, Q)` before rescaling.
fn mode_basis(p: &Matrix2<f64>) -> (ModeKind, Matrix2<f64>) {
    let half = p.trace() / 2.0;
    let det = p.determinant();
    let disc = half * half - det;
    let scale = half * half;
    if disc.abs() <= 1e-12 * scale.max(1.0) {
        let n = p - Matrix2::identity() * half;
        let n_norm = norm2x2(&n);
        if n_norm <= 1e-14 * p.norm().max(1.0) {
            return (ModeKind::Scalar, Matrix2::identity());
        }
        // top right singular vector of N from the eigenvectors of NᵀN
        let ntn = n.transpose() * n;
        let sym = ntn.symmetric_eigen();
        let idx = if sym.eigenvalues[0] >= sym.eigenvalues[1] { 0 } else { 1 };
        let q2: Vector2<f64> = sym.eigenvectors.column(idx).into_owned();
        let gamma = if half.abs() < 1.0 { (1.0 - half.abs()) / 2.0 } else { 1.0 };
        let q1 = n * q2 / gamma;
        (ModeKind::Jordan, Matrix2::from_columns(&[q1, q2]))
    } else if disc < 0.0 {
        let (r, i) = eigvec(p, half, (-disc).sqrt());
        (ModeKind::ComplexPair, Matrix2::from_columns(&[r, i]))
    } else {
        let s = disc.sqrt();
        let (v1, _) = eigvec(p, half + s, 0.0);
        let (v2, _) = eigvec(p, half - s, 0.0);
        (ModeKind::RealDistinct, Matrix2::from_columns(&[v1, v2]))
    }
}

/// Places the 2×2 per-mode blocks into a `2n × 2n` matrix in stacked ordering.
fn assemble(blocks: impl Iterator<Item = Matrix2<f64>>, n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for (j, b) in blocks.enumerate() {
        m[(j, j)] = b[(0, 0)];
        m[(j, n + j)] = b[(0, 1)];
        m[(n + j, j)] = b[(1, 0)];
        m[(n + j, n + j)] = b[(1, 1)];
    }
    m
}

fn rayleigh(m: &DMatrix<f64>, u: &DVector<f64>) -> f64 {
    u.dot(&(m * u))
}

pub fn build_transform_bundle(ops: &StrategyOps, w: &MixingMatrix) -> Result<TransformBundle> {
    let k = w.size();
    if ops.agents() != k {
        return Err(Error::ShapeMismatch(format!(
            "strategy has {} agents, mixing matrix {k}",
            ops.agents()
        )));
    }
    let n = k - 1;
    let u_hat = w.eigvecs().columns(1, n).into_owned();
    let mut modes = Vec::with_capacity(n);
    for j in 0..n {
        let u = u_hat.column(j).into_owned();
        let (a, b, c) = (rayleigh(&ops.a, &u), rayleigh(&ops.b, &u), rayleigh(&ops.c, &u));
        if b.abs() <= DEGENERATE_B_TOL {
            return Err(Error::DegenerateMode { mode: j + 1 });
        }
        let p = Matrix2::new(a * c - b * b, -b, b, 1.0);
        let (kind, q0) = mode_basis(&p);
        let q = q0 * (Q_NORM_SQ.sqrt() / norm2x2(&q0));
        let q_inv = q.try_inverse().ok_or(Error::DegenerateMode { mode: j + 1 })?;
        let t = q_inv * p * q;
        let cond = cond2x2(&q);
        if cond > COND_FLAG {
            log::warn!("mode {} has an ill-conditioned basis (cond = {cond:e})", j + 1);
        }
        modes.push(ModeBlock {
            eigenvalue_w: w.eigvals()[j + 1],
            a,
            b,
            c,
            kind,
            p,
            q,
            q_inv,
            t,
            t_norm: norm2x2(&t),
            cond,
            flagged: cond > COND_FLAG,
        });
    }
    let p_mat = assemble(modes.iter().map(|m| m.p), n);
    let q = assemble(modes.iter().map(|m| m.q), n);
    let q_inv = assemble(modes.iter().map(|m| m.q_inv), n);
    let t_mat = assemble(modes.iter().map(|m| m.t), n);
    let similarity_residual = (&p_mat - &q * &t_mat * &q_inv).norm();
    let rho = modes.iter().map(|m| m.t_norm).fold(0.0, f64::max);
    let v1_sq = modes.iter().map(|m| norm2x2(&m.q).powi(2)).fold(0.0, f64::max);
    let v2_sq = modes.iter().map(|m| norm2x2(&m.q_inv).powi(2)).fold(0.0, f64::max);
    let lam_a = DVector::from_iterator(n, modes.iter().map(|m| m.a));
    let lam_b = DVector::from_iterator(n, modes.iter().map(|m| m.b));
    let lam_c = DVector::from_iterator(n, modes.iter().map(|m| m.c));
    let lam_a_max = lam_a.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let lam_b_underline = lam_b.iter().fold(f64::INFINITY, |s, v| s.min(v.abs()));
    Ok(TransformBundle {
        tau: (k as f64).sqrt() * v2_sq.sqrt(),
        u_hat,
        lam_a,
        lam_b,
        lam_c,
        modes,
        p_mat,
        q,
        q_inv,
        t_mat,
        rho,
        v1_sq,
        v2_sq,
        lam_a_max,
        lam_b_underline,
        similarity_residual,
        lambda: w.lambda(),
        lambda_underline: w.lambda_min_nonzero(),
        a_mat: ops.a.clone(),
        b_mat: ops.b.clone(),
        b_sq: &ops.b * &ops.b,
    })
}

impl TransformBundle {
    pub fn agents(&self) -> usize {
        self.u_hat.nrows()
    }

    pub fn lam_a_sq(&self) -> f64 {
        self.lam_a_max * self.lam_a_max
    }

    pub fn lam_b_underline_sq(&self) -> f64 {
        self.lam_b_underline * self.lam_b_underline
    }

    pub fn v1(&self) -> f64 {
        self.v1_sq.sqrt()
    }

    pub fn v2(&self) -> f64 {
        self.v2_sq.sqrt()
    }

    /// `Ê = (1/τ) Q⁻¹ [ÛᵀX; Λ_b⁻¹ÛᵀZ]`, flattened coordinate-major.
    fn ehat(&self, x: &BlockVector, z: &BlockVector) -> DVector<f64> {
        let n = self.modes.len();
        let ux = x.raw() * &self.u_hat; // d × (K−1)
        let uz = z.raw() * &self.u_hat;
        let d = x.dim();
        let mut out = DVector::zeros(2 * n * d);
        for coord in 0..d {
            for (j, m) in self.modes.iter().enumerate() {
                let v = m.q_inv * Vector2::new(ux[(coord, j)], uz[(coord, j)] / m.b) / self.tau;
                out[coord * 2 * n + j] = v[0];
                out[coord * 2 * n + n + j] = v[1];
            }
        }
        out
    }
}

/// Everything the coupled error depends on.
#[derive(Debug, Clone, Copy)]
pub struct IterateView<'a> {
    pub x: &'a BlockVector,
    pub y: &'a BlockVector,
    pub m_x: &'a BlockVector,
    pub m_y: &'a BlockVector,
    pub d_x: &'a BlockVector,
    pub d_y: &'a BlockVector,
}

#[derive(Debug, Clone)]
pub struct CoupledError {
    pub ehat_x: DVector<f64>,
    pub ehat_y: DVector<f64>,
    pub z_x: BlockVector,
    pub z_y: BlockVector,
}

impl CoupledError {
    pub fn ehat_x_sq(&self) -> f64 {
        self.ehat_x.norm_squared()
    }

    pub fn ehat_y_sq(&self) -> f64 {
        self.ehat_y.norm_squared()
    }
}

/// `𝒵_x = μ_x𝒜ℳ_x + ℬ𝒟_x − ℬ²𝒳`, `𝒵_y = −μ_y𝒜ℳ_y + ℬ𝒟_y − ℬ²𝒴`, and the
/// corresponding `Ê` blocks.
pub fn coupled_error_norms(
    view: IterateView<'_>,
    bundle: &TransformBundle,
    mu_x: f64,
    mu_y: f64,
) -> Result<CoupledError> {
    use crate::strategies::apply;
    let z = |m: &BlockVector, d: &BlockVector, v: &BlockVector, mu: f64| -> Result<BlockVector> {
        let mut z = apply(&bundle.a_mat, m)?.scaled(mu);
        z.axpy(1.0, &apply(&bundle.b_mat, d)?);
        z.axpy(-1.0, &apply(&bundle.b_sq, v)?);
        Ok(z)
    };
    let z_x = z(view.m_x, view.d_x, view.x, mu_x)?;
    let z_y = z(view.m_y, view.d_y, view.y, -mu_y)?;
    Ok(CoupledError {
        ehat_x: bundle.ehat(view.x, &z_x),
        ehat_y: bundle.ehat(view.y, &z_y),
        z_x,
        z_y,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConsensusCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// `‖𝒳−𝒳_c‖² + ‖𝒴−𝒴_c‖² ≤ K v₁² v₂² (‖Ê_x‖² + ‖Ê_y‖²)`.
pub fn check_consensus_bound(
    x: &BlockVector,
    y: &BlockVector,
    err: &CoupledError,
    bundle: &TransformBundle,
) -> ConsensusCheck {
    let lhs = x.consensus_sq() + y.consensus_sq();
    let rhs = bundle.agents() as f64 * bundle.v1_sq * bundle.v2_sq * (err.ehat_x_sq() + err.ehat_y_sq());
    ConsensusCheck {
        lhs,
        rhs,
        pass: lhs <= rhs + 1e-9 * rhs.max(1.0),
    }
}

/// The consensus-contraction step-size conditions that depend only on the
/// network constants.
pub fn verify_contraction(
    bundle: &TransformBundle,
    mu_x: f64,
    mu_y: f64,
    constants: &ProblemConstants,
) -> Vec<Condition> {
    let base = (1.0 - bundle.rho) * bundle.lam_b_underline
        / (constants.l_f * bundle.v1() * bundle.v2() * bundle.lam_a_max);
    vec![
        Condition::upper("rho < 1", bundle.rho, 1.0),
        Condition::upper("mu_x <= mu_y/(16 kappa^2)", mu_x, mu_y / (16.0 * constants.kappa * constants.kappa)),
        Condition::upper("mu_y <= (1-rho) lb_b / (sqrt(620) L_f v1 v2 lam_a)", mu_y, base / 620f64.sqrt()),
        Condition::upper("mu_y <= (1-rho) lb_b / (12 L_f v1 v2 lam_a)", mu_y, base / 12.0),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixing::{mixing_for, Topology};
    use crate::strategies::{build_strategy, StrategyKind};

    fn lazy_ring4() -> MixingMatrix {
        mixing_for(&Topology::ring(4), true).unwrap()
    }

    #[test]
    fn ed_lazy_ring4() {
        let w = lazy_ring4();
        let b = build_transform_bundle(&build_strategy(StrategyKind::Ed, &w).unwrap(), &w).unwrap();
        assert!((w.lambda() - 2.0 / 3.0).abs() < 1e-12);
        assert!((b.rho - (2.0f64 / 3.0).sqrt()).abs() < 1e-8);
        assert!((b.lam_a_max - 2.0 / 3.0).abs() < 1e-8);
        assert!((b.lam_b_underline - (1.0f64 / 3.0).sqrt()).abs() < 1e-8);
        assert!(b.similarity_residual < 1e-12);
        assert!(b.v1_sq <= 4.0 + 1e-8 && b.v2_sq <= 2.0 / w.lambda_min_nonzero() + 1e-8);
    }

    #[test]
    fn extra_lazy_ring4() {
        let w = lazy_ring4();
        let b = build_transform_bundle(&build_strategy(StrategyKind::Extra, &w).unwrap(), &w).unwrap();
        assert!((b.lam_a_max - 1.0).abs() < 1e-8);
        assert!((b.rho - (2.0f64 / 3.0).sqrt()).abs() < 1e-8);
    }

    #[test]
    fn atc_gt_lazy_ring4() {
        let w = lazy_ring4();
        let b = build_transform_bundle(&build_strategy(StrategyKind::AtcGt, &w).unwrap(), &w).unwrap();
        assert!(b.rho <= 5.0 / 6.0 + 1e-8);
        assert!((b.lam_a_max - 4.0 / 9.0).abs() < 1e-8);
        assert!((b.lam_b_underline - 1.0 / 3.0).abs() < 1e-8);
        assert!(b.v1_sq <= 3.0 + 1e-8 && b.v2_sq <= 9.0 + 1e-8);
        assert!(b.modes.iter().all(|m| m.kind == ModeKind::Jordan));
        assert!(b.similarity_residual < 1e-10);
    }

    #[test]
    fn complex_block_norm_is_modulus() {
        let p = Matrix2::new(0.2, -0.7, 0.7, 1.0);
        let (kind, q) = mode_basis(&p);
        assert_eq!(kind, ModeKind::ComplexPair);
        let t = q.try_inverse().unwrap() * p * q;
        assert!((norm2x2(&t) - p.determinant().sqrt()).abs() < 1e-12);
    }

    #[test]
    fn real_distinct_block_is_diagonalized() {
        let p = Matrix2::new(0.5, 0.1, 0.2, 0.3);
        let (kind, q) = mode_basis(&p);
        assert_eq!(kind, ModeKind::RealDistinct);
        let t = q.try_inverse().unwrap() * p * q;
        assert!(t[(0, 1)].abs() < 1e-12 && t[(1, 0)].abs() < 1e-12);
    }

    #[test]
    fn norm2x2_matches_svd() {
        let m = Matrix2::new(1.0, -2.0, 0.5, 3.0);
        assert!((norm2x2(&m) - m.singular_values().max()).abs() < 1e-12);
    }

    #[test]
    fn single_agent_bundle_is_empty() {
        let w = mixing_for(&Topology::ring(1), false).unwrap();
        let b = build_transform_bundle(&build_strategy(StrategyKind::Ed, &w).unwrap(), &w).unwrap();
        assert!(b.modes.is_empty());
        let z = BlockVector::zeros(1, 2);
        let e = coupled_error_norms(
            IterateView {
                x: &z,
                y: &z,
                m_x: &z,
                m_y: &z,
                d_x: &z,
                d_y: &z,
            },
            &b,
            0.1,
            0.1,
        )
        .unwrap();
        assert_eq!(e.ehat_x.len(), 0);
    }

    #[test]
    fn consensus_state_has_zero_ehat() {
        let w = mixing_for(&Topology::ring(6), true).unwrap();
        let b = build_transform_bundle(&build_strategy(StrategyKind::AtcGt, &w).unwrap(), &w).unwrap();
        let x = BlockVector::replicate(6, &[1.0, 2.0]);
        let m = BlockVector::replicate(6, &[-0.5, 0.25]);
        let d = BlockVector::zeros(6, 2);
        let e = coupled_error_norms(
            IterateView {
                x: &x,
                y: &x,
                m_x: &m,
                m_y: &m,
                d_x: &d,
                d_y: &d,
            },
            &b,
            0.1,
            0.2,
        )
        .unwrap();
        assert!(e.ehat_x_sq() < 1e-28 && e.ehat_y_sq() < 1e-28);
    }

    #[test]
    fn contraction_margin_reported() {
        let w = lazy_ring4();
        let b = build_transform_bundle(&build_strategy(StrategyKind::Ed, &w).unwrap(), &w).unwrap();
        let pc = ProblemConstants::new(1.0, 2.0, 0.0);
        let bound = (1.0 - b.rho) * b.lam_b_underline / (12.0 * 2.0 * b.v1() * b.v2() * b.lam_a_max);
        let rep = verify_contraction(&b, 0.0, 2.0 * bound, &pc);
        let c = rep.iter().find(|c| c.name.contains("(12 L_f")).unwrap();
        assert!(!c.satisfied);
        assert!((c.ratio - 2.0).abs() < 1e-12);
        assert!(verify_contraction(&b, 0.0, 1e-12, &pc).iter().all(|c| c.satisfied));
    }
}
