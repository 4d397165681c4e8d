//! Equilibrium prices as the market grows: 3 to 50 stations.
//!
//! The symmetric market has an interior equilibrium with a closed-form
//! price that decays toward the nominal price c0 as competition grows:
//!
//! ```text
//!     c* = c0 + (1+a) u0 / (alpha_u (2(1+a) + a(I-1)))
//! ```
//!
//! The sweep solves each market size end to end (reformulation, pattern
//! search, certification) and prints the certified price next to the
//! closed form — agreement across sizes is the scaling check.
//!
//! ```text
//! cargo run --example market_size_sweep
//! ```

use drgnep::casestudy::{run_sweep, CsMarketParams};
use drgnep::solver::SolverOptions;

/// Closed-form interior symmetric price at `stations`.
fn interior_price(base: &CsMarketParams, stations: usize) -> f64 {
    let a = base.a();
    base.c0
        + (1.0 + a) * base.u0
            / (base.alpha_u * (2.0 * (1.0 + a) + a * (stations as f64 - 1.0)))
}

fn main() -> drgnep::Result<()> {
    let base = CsMarketParams::default();
    let counts = [3usize, 5, 10, 25, 50];
    let rows = run_sweep(&counts, &base, &SolverOptions::default())?;

    println!(
        "{:>9} {:<8} {:>13} {:>13} {:>10}",
        "stations", "status", "price", "closed form", "gap"
    );
    for row in &rows {
        let oracle = interior_price(&base, row.stations);
        println!(
            "{:>9} {:<8} {:>13.9} {:>13.9} {:>10.2e}",
            row.stations,
            row.status.to_string(),
            row.price,
            oracle,
            (row.price - oracle).abs()
        );
    }
    println!("\nMore competitors bid the price toward the nominal c0 = {}.", base.c0);
    Ok(())
}
