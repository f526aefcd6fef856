//! Topic model on a synthetic corpus with known topics. SGRLD and SGRHMC
//! precondition with the expanded-mean Fisher metric diag(θ)⁻¹.

use sgmcmc::experiment::{ConfigFile, LdaRun, Settings};

fn main() -> sgmcmc::Result<()> {
    let text = "seed = 5\nchains = 1\nsteps = 60\ntrain_docs = 300\nheldout_docs = 50\neval_every = 10\n";
    let run = LdaRun::from_settings(&Settings::new(ConfigFile::parse(text)?))?;
    let (train, heldout) = run.load_corpus()?;
    println!("{} training and {} held-out documents", train.len(), heldout.len());
    for chain in run.sample(&train, &heldout)? {
        let path: Vec<String> = chain.log.iter().map(|(docs, p)| format!("{docs}:{p:.1}")).collect();
        println!("{:>7} perplexity after n docs: {}", chain.preset, path.join("  "));
    }
    Ok(())
}
