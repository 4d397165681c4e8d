//! Problem, sample, and report files: the formats the CLI speaks.
//!
//! A problem file is JSON holding every agent's data and the shared
//! constraint (samples embedded or supplied separately); sample and point
//! files are whitespace-separated text with `#` comments. This example
//! writes the default market to disk, reads it back, solves from the
//! files, and prints the report JSON — exactly what
//! `drgnep solve --problem market.json --out report.json` produces.
//!
//! ```text
//! cargo run --example problem_files
//! ```

use drgnep::casestudy::{build_gnep, CsMarketParams};
use drgnep::io::{
    problem_to_json, read_problem, read_samples, result_to_json, write_problem, write_samples,
};
use drgnep::solver::{solve, SolverOptions};

fn main() -> drgnep::Result<()> {
    let dir = std::env::temp_dir().join("drgnep_problem_files_example");
    std::fs::create_dir_all(&dir)?;
    let problem_path = dir.join("market.json");
    let samples_path = dir.join("samples.txt");

    // Write the default market and its samples.
    let params = CsMarketParams::default();
    let samples = params.samples()?;
    let problem = build_gnep(&params, &samples)?;
    write_problem(&problem_path, &problem)?;
    write_samples(&samples_path, &samples)?;
    println!("wrote {}", problem_path.display());
    println!("wrote {}\n", samples_path.display());

    let json = problem_to_json(&problem);
    let head: String = json.lines().take(14).collect::<Vec<_>>().join("\n");
    println!("problem file starts:\n{head}\n  ...\n");

    // Read back; the samples file replaces the embedded samples (here they
    // are identical, so the round trip is exact).
    let external = read_samples(&samples_path)?;
    let reread = read_problem(&problem_path, Some(external))?;
    assert_eq!(problem_to_json(&reread), json);
    println!("round trip is byte-identical\n");

    // Solve from the files and render the report exactly as the CLI does.
    let res = solve(&reread, &SolverOptions::default())?;
    println!("report JSON:\n{}", result_to_json(&res, false));

    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
