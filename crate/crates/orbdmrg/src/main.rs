//! Command-line front end. The heavy lifting lives in the library; this
//! binary parses flags, merges them over an optional config file and
//! dispatches.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use orbdmrg::driver::{
    build_model, run_ground_state, write_mi_matrix, Checkpoint, ModelSpec, RunConfig, UnitaryFile,
};
use orbdmrg::operators::{Boundary, OperatorFile};
use orbdmrg::{oracle, Result};

#[derive(Parser)]
#[command(
    name = "orbdmrg",
    about = "Two-site DMRG with adaptive local mode transformations",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// FCIDUMP file with molecular integrals (p = 2 spin orbitals).
    #[arg(long)]
    fcidump: Option<PathBuf>,
    /// Hubbard chain: sites.
    #[arg(long)]
    n: Option<usize>,
    /// Species per site (1 or 2).
    #[arg(long, default_value_t = 1)]
    p: usize,
    /// Hopping amplitude.
    #[arg(long, default_value_t = 1.0)]
    t0: f64,
    /// Interaction strength.
    #[arg(long, default_value_t = 2.0)]
    u0: f64,
    /// Density-density decay rate; `inf` disables the tail.
    #[arg(long, default_value = "1.0")]
    gamma: String,
    /// Per-species particle counts, comma separated (default half filling).
    #[arg(long)]
    nelec: Option<String>,
}

impl ModelArgs {
    fn model(&self) -> Result<ModelSpec> {
        if let Some(path) = &self.fcidump {
            return Ok(ModelSpec::Fcidump { path: path.clone() });
        }
        let n = self.n.ok_or_else(|| {
            orbdmrg::Error::Config("specify --fcidump or a Hubbard chain via --n".into())
        })?;
        let gamma = if self.gamma == "inf" {
            f64::INFINITY
        } else {
            self.gamma
                .parse()
                .map_err(|_| orbdmrg::Error::Config(format!("bad gamma `{}`", self.gamma)))?
        };
        Ok(ModelSpec::Hubbard {
            n,
            p: self.p,
            t0: self.t0,
            u0: self.u0,
            gamma,
            boundary: Boundary::Open,
        })
    }

    fn counts(&self, n: usize, p: usize) -> Result<Vec<usize>> {
        match &self.nelec {
            Some(text) => text
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| orbdmrg::Error::Config(format!("bad nelec `{text}`")))
                })
                .collect(),
            None => Ok(vec![n / 2; p]),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the full ground-state schedule (sweeps, basis optimisation,
    /// reorders) from a config file with flag overrides.
    Run {
        /// Plain-text `key = value` config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config key, e.g. `--set d_max=64` (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory (reports, checkpoints, provenance).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Resume from a checkpoint file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Exact-diagonalisation reference energy for a desk-scale model.
    Ed {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Mutual-information matrix of a checkpointed state.
    Mi {
        /// Checkpoint written by `run`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Write the dense text matrix here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rotate an operator file by a unitary file.
    Rotate {
        #[arg(long)]
        operator: PathBuf,
        #[arg(long)]
        unitary: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Restricted Hartree-Fock reference basis and energy.
    Hf {
        #[command(flatten)]
        model: ModelArgs,
        /// Write the basis unitary here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, overrides, out_dir, resume } => {
            let mut map: BTreeMap<String, String> = BTreeMap::new();
            if let Some(path) = &config {
                let text = std::fs::read_to_string(path)?;
                for (lineno, raw) in text.lines().enumerate() {
                    let line = raw.split('#').next().unwrap_or("").trim();
                    if line.is_empty() {
                        continue;
                    }
                    let (key, value) = line.split_once('=').ok_or(orbdmrg::Error::Parse {
                        line: lineno + 1,
                        msg: format!("expected `key = value`, found `{line}`"),
                    })?;
                    map.insert(key.trim().into(), value.trim().into());
                }
            }
            for pair in &overrides {
                let (key, value) = pair.split_once('=').ok_or_else(|| {
                    orbdmrg::Error::Config(format!("--set needs KEY=VALUE, found `{pair}`"))
                })?;
                map.insert(key.trim().into(), value.trim().into());
            }
            if let Some(dir) = &out_dir {
                map.insert("out_dir".into(), dir.display().to_string());
            }
            let run_config = RunConfig::from_map(&map)?;
            let resume_cp = match resume {
                Some(path) => Some(Checkpoint::read(&path)?),
                None => None,
            };
            let outcome = run_ground_state(&run_config, resume_cp)?;
            println!("final energy: {:.12}", outcome.energy);
            println!("max bond dimension: {}", outcome.psi.max_bond_dim());
            if !outcome.provenance.permutations.is_empty() {
                println!("reorders applied: {}", outcome.provenance.permutations.len());
            }
            Ok(())
        }
        Command::Ed { model } => {
            let spec = model.model()?;
            let (op, file_counts) = build_model(&spec)?;
            let counts = match file_counts {
                Some(c) => c,
                None => model.counts(op.n_orbitals(), op.species())?,
            };
            let (e0, _) = oracle::exact_ground_state(&op, Some(&counts))?;
            println!("E0 = {e0:.12}");
            Ok(())
        }
        Command::Mi { checkpoint, out } => {
            let cp = Checkpoint::read(&checkpoint)?;
            let psi = cp.psi.to_mps()?;
            let mi = psi.mutual_information()?;
            match out {
                Some(path) => write_mi_matrix(&path, &mi)?,
                None => {
                    for q in 0..mi.nrows() {
                        let row: Vec<String> =
                            (0..mi.ncols()).map(|r| format!("{:.12e}", mi[(q, r)])).collect();
                        println!("{}", row.join(" "));
                    }
                }
            }
            Ok(())
        }
        Command::Rotate { operator, unitary, out } => {
            let text = std::fs::read_to_string(&operator)?;
            let file: OperatorFile = serde_json::from_str(&text)?;
            let (op, basis) = file.to_operator()?;
            let u = UnitaryFile::read(&unitary)?;
            let rotated = orbdmrg::operators::rotate_coefficients(&op, &u)?;
            let new_basis = match basis {
                Some(b) => b * &u,
                None => u.clone(),
            };
            let out_file = OperatorFile::from_operator(&rotated, Some(&new_basis));
            std::fs::write(&out, serde_json::to_string(&out_file)?)?;
            println!("rotated operator written to {}", out.display());
            Ok(())
        }
        Command::Hf { model, out } => {
            let spec = model.model()?;
            let (op, file_counts) = build_model(&spec)?;
            let counts = match file_counts {
                Some(c) => c,
                None => model.counts(op.n_orbitals(), op.species())?,
            };
            let hf = oracle::hartree_fock_basis(&op, &counts)?;
            println!("E_HF = {:.12}", hf.energy);
            if !hf.converged {
                eprintln!("warning: SCF did not converge; using the one-body eigenbasis");
            }
            if let Some(path) = out {
                UnitaryFile::write(&path, &hf.basis)?;
                println!("basis written to {}", path.display());
            }
            Ok(())
        }
    }
}
