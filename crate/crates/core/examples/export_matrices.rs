//! Writes the physical beam matrices to text files and builds a scenario
//! config that loads them back.
//!
//! `cargo run --example export_matrices -- OUT_DIR`

use std::path::PathBuf;

use funnel_sim::beam_fem::{assemble, Actuation, BeamConfig};
use funnel_sim::matrix_io::write_matrix;
use funnel_sim::scenario::{check_config, resolve};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "beam_matrices".into()));
    std::fs::create_dir_all(&dir)?;
    let sys = assemble(&BeamConfig::unit(20, Actuation::Point { at: 0.5 }))?.to_passive_lti()?;
    for (name, m) in [("H", sys.h()), ("A", sys.a()), ("B", sys.b()), ("C", sys.c()), ("D", sys.d())] {
        write_matrix(dir.join(format!("{name}.txt")), m)?;
    }
    let config = serde_json::json!({
        "name": "beam_from_files",
        "system": { "matrices": { "h": "H.txt", "a": "A.txt", "b": "B.txt", "c": "C.txt", "d": "D.txt" } },
        "funnel": { "type": "exp_approach", "a": 10.0, "b": 9.5, "c": 0.5 },
        "y_ref": [{ "type": "cos", "omega": 1.0 }],
        "compensate_initial_mismatch": true,
        "horizon": 2.0,
        "rtol": 1e-7,
        "atol": 1e-9
    });
    let path = dir.join("beam_from_files.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config)?)?;
    println!("wrote {}", path.display());

    let (cfg, base) = resolve(path.to_str().unwrap())?;
    print!("{}", check_config(&cfg, &base).map_err(|f| f.to_string())?);
    println!("run it with: funnel-sim run {} --out results", path.display());
    Ok(())
}
