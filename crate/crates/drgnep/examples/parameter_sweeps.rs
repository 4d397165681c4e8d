//! The nine tabulated market configurations, including non-existence rows.
//!
//! Three sweeps over the default three-station market: vehicles already
//! onsite at station 1 (15/30/45), the total-demand floor (50/70/90), and
//! the violation budget (0.1/0.05/0.01). The harshest row of each sweep
//! runs with a mass threshold tuned just past what any profile in the
//! price box can reach, so the exhaustive search provably closes every
//! deactivation pattern and reports NON_EXISTENCE rather than a
//! seed-dependent verdict.
//!
//! ```text
//! cargo run --example parameter_sweeps
//! ```

use drgnep::casestudy::{run_table1, CsMarketParams};
use drgnep::solver::SolverOptions;

fn main() -> drgnep::Result<()> {
    let report = run_table1(&CsMarketParams::default(), &SolverOptions::default())?;

    println!(
        "{:<14} {:<14} {:>10} {:>12}  prices",
        "row", "status", "theta", "residual"
    );
    for row in &report.rows {
        let prices = if row.prices.is_empty() {
            "-".to_string()
        } else {
            row.prices.iter().map(|p| format!("{p:.6}")).collect::<Vec<_>>().join(", ")
        };
        println!(
            "{:<14} {:<14} {:>10.6} {:>12.3e}  {}",
            row.label,
            row.status.to_string(),
            row.theta,
            row.residual,
            prices
        );
    }

    println!("\nReading the table:");
    println!("- n1_0 rows: crowding station 1 pushes its price up, the others down;");
    println!("  at 45 vehicles its occupancy rows clash with the demand floor -> no equilibrium.");
    println!("- u_lower rows: a tighter floor leaves prices unchanged while slack,");
    println!("  then empties the coupled feasible set (tuned threshold demonstrates it).");
    println!("- epsilon rows: a smaller violation budget keeps more sample mass in");
    println!("  play; at 0.01 with the tuned threshold no profile reaches it.");
    Ok(())
}
