//! Locates the global optima of the built-in problems by dense grid scan
//! (resolution 0.01 over [-15, 15]²) plus compass-search polishing, and prints
//! them in the form embedded as constants in `src/problems/`.
//!
//! cargo run --release --example optima_oracle

use samgs::problems::oracle::{compass_search, locate_optima, OracleConfig};
use samgs::problems::PROBLEM_NAMES;
use samgs::{problem_by_name, Result};

fn main() -> Result<()> {
    let cfg = OracleConfig::default();
    for name in PROBLEM_NAMES {
        let spec = problem_by_name(name)?;
        println!("{name}:");
        for o in locate_optima(&spec, &cfg)? {
            let x = o.location.as_slice();
            println!("    ([{:?}, {:?}], {:?}),", x[0], x[1], o.loss);
        }
    }

    // Diagnostic only: the saddle of the two-optima problem sits on θ₁ = 0,
    // where the θ₁-gradient vanishes by symmetry. Minimise along that line.
    let spec = problem_by_name("two_optima")?;
    let line = |y: f64| spec.combined_loss(&[0.0, y]).unwrap_or(f64::INFINITY);
    let (mut best_y, mut best) = (0.0, f64::INFINITY);
    for i in 0..=1500 {
        let y = -15.0 + i as f64 * 0.01;
        if line(y) < best {
            best = line(y);
            best_y = y;
        }
    }
    let (p, f) = compass_search(&spec, &[0.0, best_y], 0.01);
    println!("two_optima saddle (θ₁ = 0 line, then polished): ({:.6}, {:.6}) -> {:.6}", 0.0, best_y, best);
    println!("    unconstrained polish from there drifts to ({:.6}, {:.6}) -> {:.6}", p[0], p[1], f);
    Ok(())
}
