//! Dense convex quadratic programming:
//!
//! ```text
//!     minimize 1/2 y' Q y + c' y   subject to   G y <= h,
//! ```
//!
//! with `Q` symmetric positive definite. The solver is a primal-dual
//! interior-point method (Mehrotra predictor-corrector on the slack form
//! `G y + z = h`, `z, lambda >= 0`), followed by an active-set polish that
//! solves the equality KKT system on the identified active rows to push the
//! residual to machine precision. Infeasible problems are certified through
//! an elastic relaxation: minimize the uniform amount `t` by which the rows
//! must be loosened; a positive optimum is returned as
//! [`Error::Infeasible`] with that violation.
//!
//! Best responses, projections onto the mixed-integer nodes' continuous
//! polyhedra, and the dual objectives of the residual machinery all run
//! through [`qp_solve`].

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::Error;
use crate::Result;

/// Relative KKT residual demanded of a returned solution.
pub const KKT_TOL: f64 = 1e-8;

const MAX_ITER: usize = 200;
/// Accept slightly looser than `KKT_TOL` before declaring failure; polish
/// normally lands near machine precision anyway.
const ACCEPT_TOL: f64 = 1e-7;
/// Elastic violations above this certify infeasibility.
const INFEAS_TOL: f64 = 1e-7;

/// Primal solution with inequality multipliers (aligned with the rows of G).
#[derive(Debug, Clone)]
pub struct QpResult {
    pub y: DVector<f64>,
    pub multipliers: DVector<f64>,
    /// Relative KKT residual (stationarity, feasibility, complementarity).
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Relative KKT residual of a candidate primal-dual pair.
pub fn kkt_residual(
    q: &DMatrix<f64>,
    c: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    y: &DVector<f64>,
    lam: &DVector<f64>,
) -> f64 {
    let qy = q * y;
    let grad = &qy + c + g.tr_mul(lam);
    let sd = 1.0 + amax(c).max(amax(&qy));
    let mut res = amax(&grad) / sd;
    let m = g.nrows();
    if m > 0 {
        let slack = h - g * y;
        let sp = 1.0 + amax(h);
        let obj = 0.5 * y.dot(&qy) + c.dot(y);
        let sc = 1.0 + obj.abs();
        for i in 0..m {
            res = res.max((-slack[i]).max(0.0) / sp); // primal violation
            res = res.max((lam[i] * slack[i]).abs() / sc); // complementarity
            res = res.max(-lam[i].min(0.0)); // dual sign
        }
    }
    res
}

fn amax(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Cholesky with escalating diagonal regularization.
fn chol_reg(base: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let scale = base.diagonal().iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let mut reg = 0.0f64;
    loop {
        let mut m = base.clone();
        if reg > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += reg;
            }
        }
        if let Some(ch) = Cholesky::new(m) {
            return Ok(ch);
        }
        reg = if reg == 0.0 { 1e-12 * scale } else { reg * 100.0 };
        if reg > 1e-4 * scale {
            return Err(Error::Numerical(
                "reduced KKT matrix is numerically indefinite".into(),
            ));
        }
    }
}

/// Largest step in [0, 1] keeping `v + a*dv` nonnegative.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut a = 1.0f64;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            a = a.min(-v[i] / dv[i]);
        }
    }
    a
}

/// Solve the QP. Errors: [`Error::Infeasible`] with the certified uniform
/// violation when no point satisfies the rows, [`Error::Numerical`] when the
/// iteration cannot reach [`KKT_TOL`] accuracy.
pub fn qp_solve(
    q: &DMatrix<f64>,
    c: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
) -> Result<QpResult> {
    solve_inner(q, c, g, h, true)
}

fn solve_inner(
    q: &DMatrix<f64>,
    c: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    allow_elastic: bool,
) -> Result<QpResult> {
    let n = q.nrows();
    let m = g.nrows();
    if q.ncols() != n || c.len() != n || (m > 0 && g.ncols() != n) || h.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "qp shapes: Q {}x{}, c {}, G {}x{}, h {}",
            q.nrows(),
            q.ncols(),
            c.len(),
            g.nrows(),
            g.ncols(),
            h.len()
        )));
    }

    // Unconstrained: one factorization.
    if m == 0 {
        let ch = chol_reg(q)?;
        let y = ch.solve(&(-c));
        let lam = DVector::zeros(0);
        let res = kkt_residual(q, c, g, h, &y, &lam);
        return Ok(QpResult { y, multipliers: lam, kkt_residual: res, iterations: 0 });
    }

    // Row equilibration: unit-norm rows keep the reduced system well
    // conditioned when box rows mix with large deactivation rows, and give
    // the elastic certificate a per-row-relative meaning. Multipliers are
    // rescaled back before returning.
    let (g0, h0) = (g, h);
    let mut row_scale = DVector::from_element(m, 1.0);
    let mut gs = g0.clone();
    let mut hs = h0.clone();
    for i in 0..m {
        let norm = g0.row(i).amax();
        if norm > 0.0 {
            row_scale[i] = norm;
            gs.row_mut(i).unscale_mut(norm);
            hs[i] /= norm;
        }
    }
    let g = &gs;
    let h = &hs;

    let mut y = DVector::<f64>::zeros(n);
    let mut z = DVector::from_iterator(m, (0..m).map(|i| h[i].max(1.0)));
    let mut lam = DVector::from_element(m, 1.0);

    let sd = 1.0 + amax(c);
    let sp = 1.0 + amax(h);
    let mut iterations = 0;
    let mut stalls = 0;

    for iter in 0..MAX_ITER {
        iterations = iter + 1;
        let qy = q * &y;
        let r_d = &qy + c + g.tr_mul(&lam);
        let r_p = g * &y + &z - h;
        let mu = z.dot(&lam) / m as f64;
        let obj = 0.5 * y.dot(&qy) + c.dot(&y);

        let rd_rel = amax(&r_d) / (sd + amax(&qy));
        let rp_rel = amax(&r_p) / sp;
        if rd_rel <= 1e-10 && rp_rel <= 1e-10 && mu <= 1e-11 * (1.0 + obj.abs()) {
            break;
        }

        // Reduced matrix Q + G' W G with W = lambda / z.
        let w = DVector::from_iterator(m, (0..m).map(|i| lam[i] / z[i]));
        let mut gw = g.clone();
        for i in 0..m {
            let wi = w[i];
            gw.row_mut(i).scale_mut(wi);
        }
        let reduced = q + g.tr_mul(&gw);
        let ch = chol_reg(&reduced)?;

        // Affine predictor (sigma = 0, r_c = z.*lam).
        let rc_aff = z.component_mul(&lam);
        let rhs_aff = -&r_d
            + g.tr_mul(&DVector::from_iterator(
                m,
                (0..m).map(|i| (rc_aff[i] - lam[i] * r_p[i]) / z[i]),
            ));
        let dy_aff = ch.solve(&rhs_aff);
        let dz_aff = -&r_p - g * &dy_aff;
        let dl_aff =
            DVector::from_iterator(m, (0..m).map(|i| (-rc_aff[i] - lam[i] * dz_aff[i]) / z[i]));

        let a_p = max_step(&z, &dz_aff);
        let a_d = max_step(&lam, &dl_aff);
        let mu_aff = (&z + a_p * &dz_aff).dot(&(&lam + a_d * &dl_aff)) / m as f64;
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3).clamp(0.0, 1.0) } else { 0.0 };

        // Corrector.
        let rc = DVector::from_iterator(
            m,
            (0..m).map(|i| z[i] * lam[i] + dz_aff[i] * dl_aff[i] - sigma * mu),
        );
        let rhs = -&r_d
            + g.tr_mul(&DVector::from_iterator(
                m,
                (0..m).map(|i| (rc[i] - lam[i] * r_p[i]) / z[i]),
            ));
        let dy = ch.solve(&rhs);
        let dz = -&r_p - g * &dy;
        let dl = DVector::from_iterator(m, (0..m).map(|i| (-rc[i] - lam[i] * dz[i]) / z[i]));

        let eta = if mu > 1e-8 { 0.99 } else { 0.999 };
        let alpha = (eta * max_step(&z, &dz).min(max_step(&lam, &dl))).min(1.0);
        if alpha < 1e-10 {
            stalls += 1;
            if stalls >= 2 {
                break;
            }
        } else {
            stalls = 0;
        }
        y += alpha * &dy;
        z += alpha * &dz;
        lam += alpha * &dl;
    }

    // Candidate points: the interior-point iterate and the active-set
    // polish. Both are judged by the KKT residual of the caller's
    // (unequilibrated) system, with multipliers mapped back accordingly.
    let unscale =
        |ls: &DVector<f64>| DVector::from_iterator(m, (0..m).map(|i| ls[i] / row_scale[i]));
    let mut best_y = y.clone();
    let mut best_lam = unscale(&lam);
    let mut best_res = kkt_residual(q, c, g0, h0, &best_y, &best_lam);
    if let Some((py, plam)) = polish(q, c, g, h, &y, &lam) {
        let plam = unscale(&plam);
        let res = kkt_residual(q, c, g0, h0, &py, &plam);
        if res < best_res {
            best_y = py;
            best_lam = plam;
            best_res = res;
        }
    }

    if best_res <= ACCEPT_TOL {
        return Ok(QpResult {
            y: best_y,
            multipliers: best_lam,
            kkt_residual: best_res,
            iterations,
        });
    }

    // The iteration failed; decide between infeasibility and numerics.
    if allow_elastic {
        let t = elastic_violation(q, c, g, h)?;
        if t > INFEAS_TOL {
            return Err(Error::Infeasible { max_violation: t });
        }
    }
    Err(Error::Numerical(format!(
        "interior point stopped at relative KKT residual {best_res:.3e}"
    )))
}

/// Equality-KKT solve on the active rows; `None` when the polished point is
/// not acceptable (wrong multiplier sign or infeasible).
fn polish(
    q: &DMatrix<f64>,
    c: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    y: &DVector<f64>,
    lam: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let m = g.nrows();
    let slack = h - g * y;
    let active: Vec<usize> = (0..m).filter(|&i| lam[i] > slack[i]).collect();
    let chq = Cholesky::new(q.clone())?;
    let (py, nu) = if active.is_empty() {
        (chq.solve(&(-c)), DVector::zeros(0))
    } else {
        let a = active.len();
        let mut ga = DMatrix::zeros(a, g.ncols());
        let mut ha = DVector::zeros(a);
        for (r, &i) in active.iter().enumerate() {
            ga.row_mut(r).copy_from(&g.row(i));
            ha[r] = h[i];
        }
        // nu solves (G_A Q^-1 G_A') nu = -(h_A + G_A Q^-1 c).
        let qinv_gat = chq.solve(&ga.transpose());
        let kkt = &ga * &qinv_gat;
        let rhs = -(&ha + &ga * chq.solve(c));
        let nu = chol_reg(&kkt).ok()?.solve(&rhs);
        let py = chq.solve(&(-(c + ga.transpose() * &nu)));
        (py, nu)
    };
    if nu.iter().any(|v| *v < -1e-9) {
        return None;
    }
    let tol = 1e-9 * (1.0 + amax(h));
    let viol = (g * &py - h).iter().fold(0.0f64, |mx, v| mx.max(*v));
    if viol > tol {
        return None;
    }
    let mut plam = DVector::zeros(m);
    for (r, &i) in active.iter().enumerate() {
        plam[i] = nu[r].max(0.0);
    }
    Some((py, plam))
}

/// Minimal uniform relaxation `t` making `G y - t e <= h` solvable: the
/// optimum of a strictly convex elastic program. Positive values certify
/// infeasibility of the original rows.
fn elastic_violation(
    q: &DMatrix<f64>,
    _c: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
) -> Result<f64> {
    let n = q.nrows();
    let m = g.nrows();
    let mut qe = DMatrix::zeros(n + 1, n + 1);
    for i in 0..n {
        qe[(i, i)] = 1e-8;
    }
    qe[(n, n)] = 1.0;
    let ce = DVector::zeros(n + 1);
    let mut ge = DMatrix::zeros(m, n + 1);
    ge.view_mut((0, 0), (m, n)).copy_from(g);
    for i in 0..m {
        ge[(i, n)] = -1.0;
    }
    let r = solve_inner(&qe, &ce, &ge, h, false)?;
    Ok(r.y[n].max(0.0))
}
