//! Drives a full experiment the way the `sgmcmc` binary does and lists the
//! files it writes.

use std::fs;

use sgmcmc::experiment::{run, ConfigFile, ExperimentKind};

fn main() -> sgmcmc::Result<()> {
    let out = std::env::temp_dir().join("sgmcmc-run-experiment");
    let config = ConfigFile::parse(
        "seed = 3\nsteps = 20000\npresets = sgld, gsgrhmc\ntargets = two-peaks\n\n[gsgrhmc]\nepsilon = 0.01\n",
    )?;
    let outcome = run(ExperimentKind::Synthetic1d, config, &out)?;
    for line in &outcome.summary {
        println!("{line}");
    }
    println!("exit code {}; files under {}:", outcome.exit_code(), out.display());
    let mut names: Vec<String> = fs::read_dir(&out)?.map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned())).collect::<Result<_, _>>()?;
    names.sort();
    println!("  {}", names.join(", "));
    Ok(())
}
