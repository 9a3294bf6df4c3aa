//! `mvnet`: mixing, training, enhancement, evaluation, and gradient
//! verification for the complex-masking speech enhancer.
//!
//! Exit codes: 0 success, 1 when a run or check fails its own contract
//! (assertion, NaN abort, failed gradient row, unscored rows), 2 when an
//! input cannot be used (bad file, bad flag, malformed config).

use std::path::PathBuf;

use clap::{ArgGroup, Parser, Subcommand};

use mvnet_cli::fail::{input, run, Fail};
use mvnet_cli::runconfig::RunConfig;
use mvnet_cli::{enhance, evaluate, mixcmd, synth, trainer, wav};

#[derive(Parser)]
#[command(name = "mvnet", version, about = "Speech enhancement workbench")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a deterministic toy corpus (clean/ and noise/ WAV dirs)
    Synth {
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Corpus seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Mix clean speech with noise at drawn SNRs; write manifests
    Mix {
        /// Directory of clean WAVs (16 kHz mono PCM16)
        #[arg(long)]
        clean: PathBuf,
        /// Directory of noise WAVs
        #[arg(long)]
        noise: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// key=value run configuration
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model from manifests named in the config
    Train {
        /// key=value run configuration
        #[arg(long)]
        config: PathBuf,
        /// Output directory (checkpoints, train.log)
        #[arg(long)]
        out: PathBuf,
        /// Continue from a saved checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Enhance a WAV file or a directory of WAVs
    Enhance {
        /// Checkpoint with model weights and configuration
        #[arg(long)]
        ckpt: PathBuf,
        /// Input WAV or directory
        #[arg(long = "in")]
        input: PathBuf,
        /// Output WAV or directory
        #[arg(long)]
        out: PathBuf,
        /// Bypass the network: analysis/synthesis round trip only
        #[arg(long)]
        identity_mask: bool,
    },
    /// Score a manifest into a CSV report
    #[command(group(ArgGroup::new("source").required(true).args(["ckpt", "enhanced"])))]
    Evaluate {
        /// Manifest of utterances to score
        #[arg(long)]
        manifest: PathBuf,
        /// Enhance through this checkpoint, then score
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Score already-enhanced files from this directory
        #[arg(long)]
        enhanced: Option<PathBuf>,
        /// Report CSV path
        #[arg(long)]
        report: PathBuf,
    },
    /// Verify analytic gradients against finite differences
    Gradcheck {
        /// Base seed; trials run on consecutive seeds
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of seeds to sweep
        #[arg(long, default_value_t = 5)]
        trials: u64,
        /// Negative control: corrupt every gradient and expect failure
        #[arg(long, hide = true)]
        corrupt: bool,
    },
}

fn load_config(path: Option<&PathBuf>, seed: Option<u64>) -> Result<RunConfig, Fail> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn cmd_gradcheck(seed: u64, trials: u64, corrupt: bool) -> Result<(), Fail> {
    if trials == 0 {
        return Err(input("at least one trial is needed"));
    }
    println!("gradient checks over {trials} seed(s) starting at {seed}");
    // One row per op family: worst normalized error across the seeds.
    let mut rows: Vec<(String, f64, f64, bool)> = Vec::new();
    for t in 0..trials {
        let reports = mvnet_core::gradcheck::run_suite(seed.wrapping_add(t), corrupt)
            .map_err(Fail::from)?;
        for r in reports {
            match rows.iter_mut().find(|(n, ..)| *n == r.name) {
                Some(row) => {
                    row.1 = row.1.max(r.max_rel_err);
                    row.3 &= r.pass;
                }
                None => rows.push((r.name, r.max_rel_err, r.tol, r.pass)),
            }
        }
    }
    println!("{:<28} {:>12} {:>8}   result", "check", "max rel err", "tol");
    let mut all_pass = true;
    for (name, err, tol, pass) in &rows {
        println!(
            "{:<28} {:>12.4e} {:>8.2}   {}",
            name,
            err,
            tol,
            if *pass { "PASS" } else { "FAIL" }
        );
        all_pass &= *pass;
    }
    println!("{} checks, {} seed(s) each", rows.len(), trials);
    if !all_pass {
        return Err(run("gradient checks failed"));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Fail> {
    match cli.cmd {
        Cmd::Synth { out, seed } => {
            std::fs::create_dir_all(&out)
                .map_err(|e| input(format!("cannot create {}: {e}", out.display())))?;
            wav::atomic_write(
                &out.join("config.resolved"),
                format!("command=synth\nseed={seed}\n").as_bytes(),
            )?;
            let (n_clean, n_noise) = synth::synth_corpus(&out, seed)?;
            println!(
                "wrote {n_clean} clean utterances and {n_noise} noise files under {}",
                out.display()
            );
            Ok(())
        }
        Cmd::Mix { clean, noise, out, config, seed } => {
            let cfg = load_config(config.as_ref(), seed)?;
            mixcmd::run_mix(&clean, &noise, &out, &cfg)
        }
        Cmd::Train { config, out, resume } => {
            let cfg = RunConfig::load(&config)?;
            trainer::run_train(&cfg, &out, resume.as_deref())
        }
        Cmd::Enhance { ckpt, input, out, identity_mask } => {
            enhance::run_enhance(&ckpt, &input, &out, identity_mask)
        }
        Cmd::Evaluate { manifest, ckpt, enhanced, report } => {
            let source = match (&ckpt, &enhanced) {
                (Some(c), None) => evaluate::Source::Model(c),
                (None, Some(d)) => evaluate::Source::Directory(d),
                _ => unreachable!("clap enforces exactly one source"),
            };
            evaluate::run_evaluate(&manifest, source, &report)
        }
        Cmd::Gradcheck { seed, trials, corrupt } => cmd_gradcheck(seed, trials, corrupt),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {}", e.msg);
        std::process::exit(e.code);
    }
}
