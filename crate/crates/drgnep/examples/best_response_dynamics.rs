//! Gauss-Seidel best-response dynamics on the pricing market.
//!
//! From a cold start every station repeatedly plays its exact best
//! response to the others (a single convex QP per station per sweep). For
//! this market the iteration contracts, and its fixed point is the same
//! equilibrium the global residual search certifies — a useful
//! cross-check, and a much cheaper local method when contraction holds.
//!
//! ```text
//! cargo run --example best_response_dynamics
//! ```

use drgnep::casestudy::{build_gnep, CsMarketParams};
use drgnep::solver::{best_response_iteration, solve, BrOptions, SolverOptions};

fn main() -> drgnep::Result<()> {
    let params = CsMarketParams::default();
    let problem = build_gnep(&params, &params.samples()?)?;

    // Start from the center of the raw price box [0, 1]^3 — well outside
    // the privately feasible band; the first responses land inside it.
    let x0 = problem.box_hull().center();
    let opts = BrOptions { max_sweeps: 40, damping: 1.0, step_tol: 1e-12 };
    let trace = best_response_iteration(&problem, &x0, &opts)?;

    println!("{:>5}  {:>12}  {:>13}", "sweep", "price(0)", "residual");
    for (k, (point, residual)) in trace.points.iter().zip(&trace.residuals).enumerate() {
        if k < 6 || k + 1 == trace.points.len() {
            println!("{:5}  {:12.9}  {:13.6e}", k + 1, point[0], residual);
        } else if k == 6 {
            println!("  ...");
        }
    }
    println!("converged: {}", trace.converged);

    let fixed = trace.last_point().expect("at least one sweep ran");
    let res = solve(&problem, &SolverOptions::default())?;
    let star = res.x.expect("the default market admits an equilibrium");
    println!(
        "gap between the fixed point and the certified equilibrium: {:.3e}",
        (fixed - &star).amax()
    );
    Ok(())
}
