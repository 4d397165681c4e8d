//! Quadratic game data: per-agent objectives, private constraints, and the
//! assembled multi-agent problem.
//!
//! Agent `i` chooses `x_i` in a private polyhedron `{H_i x_i <= g_i}`
//! intersected with a finite box, and pays
//!
//! ```text
//!     J_i(x) = 1/2 x_i' Q_i x_i + p_i(x_-i)' x_i + r_i(x_-i),
//!     p_i(x_-i) = p0_i + P_i x_-i,       r_i(x_-i) = r0_i + rho_i' x_-i,
//! ```
//!
//! with `Q_i` symmetric positive definite. `x_-i` stacks the other agents'
//! blocks in ascending agent order. The shared chance constraint couples all
//! blocks; [`GnepProblem`] owns both halves and the block layout.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::drcc::DrccSpec;
use crate::error::Error;
use crate::Result;

/// Symmetry slack accepted when validating `Q_i`.
const SYM_TOL: f64 = 1e-9;

/// Finite per-coordinate bounds `lower <= y <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxBounds {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch(format!(
                "box lower has dim {}, upper {}",
                lower.len(),
                upper.len()
            )));
        }
        for i in 0..lower.len() {
            if !lower[i].is_finite() || !upper[i].is_finite() {
                return Err(Error::InvalidBox(format!("coordinate {i} has a non-finite bound")));
            }
            if lower[i] > upper[i] {
                return Err(Error::InvalidBox(format!(
                    "coordinate {i}: lower {} exceeds upper {}",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(BoxBounds { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> DVector<f64> {
        (&self.lower + &self.upper) * 0.5
    }

    pub fn contains(&self, y: &DVector<f64>, tol: f64) -> bool {
        (0..self.dim()).all(|i| y[i] >= self.lower[i] - tol && y[i] <= self.upper[i] + tol)
    }

    pub fn clamp(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|i| y[i].clamp(self.lower[i], self.upper[i])),
        )
    }

    /// Concatenate two boxes.
    pub fn stack(&self, other: &BoxBounds) -> BoxBounds {
        let cat = |a: &DVector<f64>, b: &DVector<f64>| {
            DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
        };
        BoxBounds { lower: cat(&self.lower, &other.lower), upper: cat(&self.upper, &other.upper) }
    }
}

/// One agent's quadratic objective and private feasible set.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    /// n_i x n_i symmetric positive definite curvature.
    pub q: DMatrix<f64>,
    /// Constant part of the price vector.
    pub p0: DVector<f64>,
    /// n_i x n_-i coupling into the price vector.
    pub p_cross: DMatrix<f64>,
    /// Constant part of the offset term.
    pub r0: f64,
    /// n_-i coupling into the offset term.
    pub rho: DVector<f64>,
    /// m_i x n_i private constraint rows (may have zero rows).
    pub h: DMatrix<f64>,
    /// m_i private right-hand sides.
    pub g: DVector<f64>,
    /// Finite bounds on x_i.
    pub bounds: BoxBounds,
}

impl AgentSpec {
    /// Decision dimension n_i.
    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    /// Private polyhedron row count m_i (box excluded).
    pub fn n_private_rows(&self) -> usize {
        self.h.nrows()
    }

    /// Validate shapes and definiteness; `others_dim` is the stacked
    /// dimension of all other agents.
    fn validate(&self, agent: usize, others_dim: usize) -> Result<()> {
        let n = self.dim();
        if self.q.ncols() != n {
            return Err(Error::DimensionMismatch(format!("agent {agent}: Q must be square")));
        }
        if self.p0.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "agent {agent}: p0 has dim {}, expected {n}",
                self.p0.len()
            )));
        }
        if self.p_cross.nrows() != n || self.p_cross.ncols() != others_dim {
            return Err(Error::DimensionMismatch(format!(
                "agent {agent}: coupling matrix is {}x{}, expected {n}x{others_dim}",
                self.p_cross.nrows(),
                self.p_cross.ncols()
            )));
        }
        if self.rho.len() != others_dim {
            return Err(Error::DimensionMismatch(format!(
                "agent {agent}: rho has dim {}, expected {others_dim}",
                self.rho.len()
            )));
        }
        if self.h.ncols() != n && self.h.nrows() > 0 {
            return Err(Error::DimensionMismatch(format!(
                "agent {agent}: H has {} columns, expected {n}",
                self.h.ncols()
            )));
        }
        if self.g.len() != self.h.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "agent {agent}: H has {} rows but g has {}",
                self.h.nrows(),
                self.g.len()
            )));
        }
        if self.bounds.dim() != n {
            return Err(Error::DimensionMismatch(format!(
                "agent {agent}: box has dim {}, expected {n}",
                self.bounds.dim()
            )));
        }
        let asym = (&self.q - self.q.transpose()).abs().max();
        if asym > SYM_TOL {
            return Err(Error::NotPositiveDefinite {
                agent,
                detail: format!("Q is not symmetric (max asymmetry {asym:.3e})"),
            });
        }
        if Cholesky::new(self.q.clone()).is_none() {
            return Err(Error::NotPositiveDefinite {
                agent,
                detail: "Cholesky factorization failed".into(),
            });
        }
        Ok(())
    }

    /// Price vector `p0 + P x_-i`.
    pub fn price(&self, others: &DVector<f64>) -> DVector<f64> {
        &self.p0 + &self.p_cross * others
    }

    /// Offset term `r0 + rho' x_-i`.
    pub fn offset(&self, others: &DVector<f64>) -> f64 {
        self.r0 + self.rho.dot(others)
    }

    /// Private rows with the box folded in: `[H; I; -I] x_i <= [g; u; -l]`.
    pub fn rows_with_box(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.dim();
        let m = self.h.nrows();
        let mut rows = DMatrix::zeros(m + 2 * n, n);
        let mut rhs = DVector::zeros(m + 2 * n);
        rows.view_mut((0, 0), (m, n)).copy_from(&self.h);
        rhs.rows_mut(0, m).copy_from(&self.g);
        for j in 0..n {
            rows[(m + j, j)] = 1.0;
            rhs[m + j] = self.bounds.upper[j];
            rows[(m + n + j, j)] = -1.0;
            rhs[m + n + j] = -self.bounds.lower[j];
        }
        (rows, rhs)
    }

    /// True when `x_i` satisfies the private rows and box within `tol`.
    pub fn local_feasible(&self, xi: &DVector<f64>, tol: f64) -> bool {
        if !self.bounds.contains(xi, tol) {
            return false;
        }
        let hx = &self.h * xi;
        (0..self.h.nrows()).all(|r| hx[r] <= self.g[r] + tol)
    }
}

/// The assembled game: agents plus the shared chance constraint, with the
/// block layout of the stacked decision vector.
#[derive(Debug, Clone)]
pub struct GnepProblem {
    pub agents: Vec<AgentSpec>,
    pub drcc: DrccSpec,
    offsets: Vec<usize>,
}

impl GnepProblem {
    pub fn new(agents: Vec<AgentSpec>, drcc: DrccSpec) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::InvalidData("a game needs at least one agent".into()));
        }
        let mut offsets = Vec::with_capacity(agents.len() + 1);
        let mut total = 0usize;
        offsets.push(0);
        for a in &agents {
            total += a.dim();
            offsets.push(total);
        }
        for (i, a) in agents.iter().enumerate() {
            a.validate(i, total - a.dim())?;
        }
        if drcc.decision_dim() != total {
            return Err(Error::DimensionMismatch(format!(
                "shared constraint acts on dim {}, agents stack to {total}",
                drcc.decision_dim()
            )));
        }
        Ok(GnepProblem { agents, drcc, offsets })
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn total_dim(&self) -> usize {
        *self.offsets.last().expect("nonempty")
    }

    pub fn agent_dim(&self, i: usize) -> usize {
        self.agents[i].dim()
    }

    /// Start of agent i's block in the stacked vector.
    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    /// Agent i's block of the stacked vector.
    pub fn block(&self, x: &DVector<f64>, i: usize) -> DVector<f64> {
        x.rows(self.offsets[i], self.agent_dim(i)).into_owned()
    }

    /// All other agents' blocks, concatenated in ascending agent order.
    pub fn others(&self, x: &DVector<f64>, i: usize) -> DVector<f64> {
        let n = self.total_dim() - self.agent_dim(i);
        let (lo, hi) = (self.offsets[i], self.offsets[i + 1]);
        DVector::from_iterator(
            n,
            x.iter().enumerate().filter(|(j, _)| *j < lo || *j >= hi).map(|(_, v)| *v),
        )
    }

    /// Copy of `x` with agent i's block replaced by `xi`.
    pub fn with_block(&self, x: &DVector<f64>, i: usize, xi: &DVector<f64>) -> DVector<f64> {
        let mut out = x.clone();
        out.rows_mut(self.offsets[i], self.agent_dim(i)).copy_from(xi);
        out
    }

    /// Agent i's objective at the full profile `x`.
    pub fn objective(&self, i: usize, x: &DVector<f64>) -> f64 {
        let xi = self.block(x, i);
        let others = self.others(x, i);
        let a = &self.agents[i];
        0.5 * xi.dot(&(&a.q * &xi)) + a.price(&others).dot(&xi) + a.offset(&others)
    }

    /// Gradient of agent i's objective with respect to its own block.
    pub fn objective_grad(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        let xi = self.block(x, i);
        let others = self.others(x, i);
        let a = &self.agents[i];
        &a.q * xi + a.price(&others)
    }

    /// Hull box of the stacked vector (concatenated agent boxes).
    pub fn box_hull(&self) -> BoxBounds {
        let n = self.total_dim();
        let mut lower = DVector::zeros(n);
        let mut upper = DVector::zeros(n);
        for (i, a) in self.agents.iter().enumerate() {
            lower.rows_mut(self.offsets[i], a.dim()).copy_from(&a.bounds.lower);
            upper.rows_mut(self.offsets[i], a.dim()).copy_from(&a.bounds.upper);
        }
        BoxBounds { lower, upper }
    }

    /// True when every agent's private set holds at `x` within `tol`.
    pub fn locally_feasible(&self, x: &DVector<f64>, tol: f64) -> bool {
        (0..self.num_agents()).all(|i| self.agents[i].local_feasible(&self.block(x, i), tol))
    }
}
