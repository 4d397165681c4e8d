//! The Nikaido-Isoda residual as a landscape over one price.
//!
//! The residual sums each agent's incentive to deviate unilaterally inside
//! the frozen shared rows; it is nonnegative on the coupled feasible set
//! and zero exactly at generalized Nash equilibria. This example solves
//! the market once, then slides station 0's price across its range while
//! the others stay at equilibrium, printing the residual and station 0's
//! deviation gap at each stop — a one-dimensional slice of the landscape
//! the solver descends.
//!
//! ```text
//! cargo run --example residual_landscape
//! ```

use drgnep::casestudy::{build_gnep, CsMarketParams};
use drgnep::reformulation::assemble;
use drgnep::residual::residual;
use drgnep::solver::{solve, SolverOptions};

fn main() -> drgnep::Result<()> {
    let params = CsMarketParams::default();
    let problem = build_gnep(&params, &params.samples()?)?;
    let system = assemble(&problem, None)?;

    let res = solve(&problem, &SolverOptions::default())?;
    let star = res.x.expect("the default market admits an equilibrium");
    println!("equilibrium price of station 0: {:.9}\n", star[0]);
    println!("{:>8}  {:>13}  {:>13}", "price", "residual", "gap(station0)");

    // The private rows confine prices to [0.12, 0.22]; scan that range,
    // with the exact equilibrium price inserted into the grid.
    let mut prices: Vec<f64> = (0..=20).map(|step| 0.12 + 0.005 * step as f64).collect();
    prices.push(star[0]);
    prices.sort_by(f64::total_cmp);
    for price in prices {
        let mut x = star.clone();
        x[0] = price;

        // Freeze the auxiliary point the solver itself would use at x: the
        // slackest feasible one when the witness pattern reaches the mass
        // threshold, the dual-optimal one otherwise.
        let q = system.witness_q(&x);
        let aux = system.node_slack_aux(&x, &q).unwrap_or_else(|| system.node_dual_aux(&x, &q));
        let rep = residual(&problem, &system, &x, &q, &aux)?;

        let marker = if price == star[0] { "  <- equilibrium" } else { "" };
        println!("{price:8.4}  {:13.6e}  {:13.6e}{marker}", rep.value, rep.gaps[0]);
    }

    println!("\nThe residual vanishes exactly where no station can improve alone.");
    Ok(())
}
