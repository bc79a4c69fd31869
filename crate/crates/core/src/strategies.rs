//! Design-matrix triples `(A, B, C)` for the five decentralized strategies.
//!
//! All matrices are polynomials in `W` (or its PSD square root), stored densely as
//! `K×K` matrices and applied along the agent axis of a [`BlockVector`]. This is
//! the Kronecker identity `(M ⊗ I_d) vec(V) = vec(M V)` without ever forming the
//! `Kd × Kd` operator.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::mixing::{sqrt_psd, MixingMatrix};
use crate::{Error, Result};

pub const ASSUMPTION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "ED")]
    Ed,
    #[serde(rename = "EXTRA")]
    Extra,
    #[serde(rename = "ATC_GT")]
    AtcGt,
    #[serde(rename = "SEMI_ATC_GT")]
    SemiAtcGt,
    #[serde(rename = "NON_ATC_GT")]
    NonAtcGt,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Ed,
        StrategyKind::Extra,
        StrategyKind::AtcGt,
        StrategyKind::SemiAtcGt,
        StrategyKind::NonAtcGt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Ed => "ED",
            StrategyKind::Extra => "EXTRA",
            StrategyKind::AtcGt => "ATC_GT",
            StrategyKind::SemiAtcGt => "SEMI_ATC_GT",
            StrategyKind::NonAtcGt => "NON_ATC_GT",
        }
    }

    /// ED and EXTRA use `B = (I - W)^{1/2}` and need a PSD `W`.
    pub fn uses_sqrt_laplacian(self) -> bool {
        matches!(self, StrategyKind::Ed | StrategyKind::Extra)
    }

    /// Strategies whose spectral constants have closed forms (ED, EXTRA, ATC-GT).
    pub fn has_closed_form_constants(self) -> bool {
        matches!(
            self,
            StrategyKind::Ed | StrategyKind::Extra | StrategyKind::AtcGt
        )
    }

    /// Whether the mixing matrix is lazified by default for this strategy.
    pub fn default_lazy(self) -> bool {
        self.has_closed_form_constants()
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy '{s}'")))
    }
}

/// Agent-major block of local vectors, one `d`-vector per agent.
///
/// Stored as a `d × K` matrix so each agent's vector is a contiguous column.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    data: DMatrix<f64>,
}

impl BlockVector {
    pub fn zeros(agents: usize, dim: usize) -> Self {
        Self {
            data: DMatrix::zeros(dim, agents),
        }
    }

    /// Every agent holds a copy of `v`.
    pub fn replicate(agents: usize, v: &[f64]) -> Self {
        Self {
            data: DMatrix::from_fn(v.len(), agents, |r, _| v[r]),
        }
    }

    /// Builds from a `K × d` agent-major matrix.
    pub fn from_agent_rows(rows: &DMatrix<f64>) -> Self {
        Self {
            data: rows.transpose(),
        }
    }

    pub fn agents(&self) -> usize {
        self.data.ncols()
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn agent(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.data.as_slice()[k * d..(k + 1) * d]
    }

    pub fn agent_mut(&mut self, k: usize) -> &mut [f64] {
        let d = self.dim();
        &mut self.data.as_mut_slice()[k * d..(k + 1) * d]
    }

    /// `K × d` view (rows are agents).
    pub fn to_agent_rows(&self) -> DMatrix<f64> {
        self.data.transpose()
    }

    /// Internal `d × K` storage.
    pub fn raw(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn from_raw(data: DMatrix<f64>) -> Self {
        Self { data }
    }

    /// Network average `(1/K) Σ_k v_k`.
    pub fn mean(&self) -> DVector<f64> {
        self.data.column_sum() / self.agents() as f64
    }

    /// `Σ_k v_k`, accumulated in ascending agent order.
    pub fn sum(&self) -> DVector<f64> {
        let mut s = DVector::zeros(self.dim());
        for k in 0..self.agents() {
            for (acc, v) in s.iter_mut().zip(self.agent(k)) {
                *acc += v;
            }
        }
        s
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.norm_squared()
    }

    /// `‖V - 1 ⊗ mean(V)‖²`.
    pub fn consensus_sq(&self) -> f64 {
        let c = self.mean();
        let mut s = 0.0;
        for k in 0..self.agents() {
            for (v, m) in self.agent(k).iter().zip(c.iter()) {
                s += (v - m) * (v - m);
            }
        }
        s
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| {
            if v.is_finite() {
                m.max(v.abs())
            } else {
                f64::INFINITY
            }
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &BlockVector) {
        self.data.zip_apply(&other.data, |a, b| *a += alpha * b);
    }

    pub fn scaled(&self, alpha: f64) -> BlockVector {
        BlockVector {
            data: &self.data * alpha,
        }
    }

    pub fn sub(&self, other: &BlockVector) -> BlockVector {
        BlockVector {
            data: &self.data - &other.data,
        }
    }

    pub fn add(&self, other: &BlockVector) -> BlockVector {
        BlockVector {
            data: &self.data + &other.data,
        }
    }
}

/// `(M ⊗ I_d) V`, realized as a product along the agent axis.
pub fn apply(m: &DMatrix<f64>, v: &BlockVector) -> Result<BlockVector> {
    if m.nrows() != m.ncols() || m.ncols() != v.agents() {
        return Err(Error::ShapeMismatch(format!(
            "cannot apply a {}x{} matrix to a block vector with {} agents",
            m.nrows(),
            m.ncols(),
            v.agents()
        )));
    }
    Ok(BlockVector {
        data: &v.data * m.transpose(),
    })
}

/// The operator triple of one strategy.
#[derive(Debug, Clone)]
pub struct StrategyOps {
    pub kind: StrategyKind,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    w: DMatrix<f64>,
}

impl StrategyOps {
    pub fn agents(&self) -> usize {
        self.a.nrows()
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }
}

pub fn build_strategy(kind: StrategyKind, w: &MixingMatrix) -> Result<StrategyOps> {
    let k = w.size();
    let id = DMatrix::<f64>::identity(k, k);
    let wm = w.matrix().clone();
    let laplacian = &id - &wm;
    if kind.uses_sqrt_laplacian() && !w.is_psd() {
        return Err(Error::NotPsd {
            min_eigenvalue: w.eigvals()[k - 1],
        });
    }
    let (a, b, c) = match kind {
        StrategyKind::Ed => (wm.clone(), sqrt_psd(&laplacian)?, id.clone()),
        StrategyKind::Extra => (id.clone(), sqrt_psd(&laplacian)?, wm.clone()),
        StrategyKind::AtcGt => (&wm * &wm, laplacian, id.clone()),
        StrategyKind::SemiAtcGt => (wm.clone(), laplacian, wm.clone()),
        StrategyKind::NonAtcGt => (id.clone(), laplacian, &wm * &wm),
    };
    Ok(StrategyOps {
        kind,
        a,
        b,
        c,
        w: wm,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StrategyReport {
    pub kind: StrategyKind,
    /// `‖A 1 - 1‖∞`
    pub a_preserves_ones: f64,
    /// `‖C 1 - 1‖∞`
    pub c_preserves_ones: f64,
    /// `‖1ᵀ B‖∞`
    pub b_annihilates_ones: f64,
    /// `‖B² - (I - W)‖_F` for ED / EXTRA.
    pub b_squared_residual: Option<f64>,
    pub passes: bool,
}

pub fn verify_strategy_assumptions(ops: &StrategyOps) -> StrategyReport {
    let k = ops.agents();
    let ones = DVector::from_element(k, 1.0);
    let a1 = (&ops.a * &ones - &ones).amax();
    let c1 = (&ops.c * &ones - &ones).amax();
    let b1 = (ones.transpose() * &ops.b).amax();
    let b_sq = ops.kind.uses_sqrt_laplacian().then(|| {
        let lap = DMatrix::<f64>::identity(k, k) - &ops.w;
        (&ops.b * &ops.b - lap).norm()
    });
    let passes = a1 <= ASSUMPTION_TOL
        && c1 <= ASSUMPTION_TOL
        && b1 <= ASSUMPTION_TOL
        && b_sq.is_none_or(|r| r <= ASSUMPTION_TOL);
    StrategyReport {
        kind: ops.kind,
        a_preserves_ones: a1,
        c_preserves_ones: c1,
        b_annihilates_ones: b1,
        b_squared_residual: b_sq,
        passes,
    }
}
