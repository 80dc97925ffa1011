//! End-to-end ground-state runs: the macro-schedule of plain sweeps,
//! basis-optimising sweeps and mutual-information reorders, with
//! configuration, checkpointing, provenance and plot-ready reports.
//!
//! One macro-iteration executes `plain_sweeps` standard two-site DMRG
//! sweeps, then `opt_sweeps` sweeps with the local mode-transformation
//! hook enabled, then (optionally) one global reorder driven by the
//! mutual-information pattern of the current state. Defaults mirror the
//! published schedule: 2 plain sweeps, 8 optimising sweeps, reorder on.
//!
//! Every accepted rotation is folded into the [`ModeSpace`] ledger, so at
//! any point the coefficients equal the initial coefficients rotated by
//! the accumulated unitary; checkpoints carry everything needed for an
//! exact restart.
//!
//! # Config grammar
//!
//! Plain-text `key = value` lines, `#` comments. Keys:
//!
//! ```text
//! model            hubbard | fcidump
//! fcidump_path     path (model = fcidump)
//! n, p             chain length and species count (model = hubbard)
//! t0, u0, gamma    hopping, interaction, density-density decay (inf ok)
//! boundary         open | periodic
//! nelec            per-species counts, comma separated ("3,3"), or one
//!                  total electron count split evenly
//! initial_basis    identity | t_eigen | hf | file
//! unitary_file     path (initial_basis = file)
//! eps_trc, d_min, d_max        truncation policy
//! plain_sweeps, opt_sweeps, macro_iterations, reorder
//! cost             f1 | f4
//! method           nelder_mead | cg
//! restriction      none | spin_summed
//! max_evals, delta_accept, retry_budget
//! eig_tol, eig_max_iter
//! seed, init_bond
//! out_dir          output directory (report.jsonl, bonds.csv, mi.txt,
//!                  checkpoint.json, provenance.json, operator_final.json)
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dmrg::{DmrgEngine, SweepDirection, SweepOptions, SweepReport};
use crate::fock::ModeSpace;
use crate::linalg::DavidsonOptions;
use crate::modeopt::{
    CostFunction, LocalBasisOptimizer, LocalOptConfig, OptMethod, SymmetryRestriction,
};
use crate::mps::{MpsFile, SymmetricMps, TruncationPolicy};
use crate::operators::{
    build_hubbard, parse_fcidump, rotate_coefficients, Boundary, MatrixRepr, OperatorFile,
    SecondQuantizedOperator,
};
use crate::ordering::{apply_permutation, fiedler_order, OrbitalPermutation};
use crate::{CMat, Error, Result};

/// Model input of a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum ModelSpec {
    Hubbard {
        n: usize,
        p: usize,
        t0: f64,
        u0: f64,
        gamma: f64,
        boundary: Boundary,
    },
    Fcidump { path: PathBuf },
}

/// Initial single-particle basis applied before the first sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum InitialBasis {
    /// Keep the input basis.
    Identity,
    /// Eigenbasis of the one-body coefficients (species-resolved).
    TEigen,
    /// Restricted Hartree-Fock orbitals.
    HartreeFock,
    /// Unitary read from a JSON container.
    File(PathBuf),
}

/// Sweep schedule of one macro-iteration.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Schedule {
    pub plain_sweeps: usize,
    pub opt_sweeps: usize,
    pub macro_iterations: usize,
    pub reorder: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { plain_sweeps: 2, opt_sweeps: 8, macro_iterations: 1, reorder: true }
    }
}

/// Full configuration of a ground-state run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelSpec,
    /// Per-species particle counts; `None` means half filling.
    pub counts: Option<Vec<usize>>,
    pub initial_basis: InitialBasis,
    pub eps_trc: f64,
    pub d_min: usize,
    pub d_max: usize,
    pub schedule: Schedule,
    pub opt: LocalOptConfig,
    pub eig_tol: f64,
    pub eig_max_iter: usize,
    pub seed: u64,
    /// Bond-sector cap of the random starting state.
    pub init_bond: usize,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn hubbard_defaults(n: usize, p: usize, t0: f64, u0: f64, gamma: f64) -> Self {
        Self {
            model: ModelSpec::Hubbard { n, p, t0, u0, gamma, boundary: Boundary::Open },
            counts: None,
            initial_basis: InitialBasis::Identity,
            eps_trc: 1e-6,
            d_min: 1,
            d_max: 64,
            schedule: Schedule::default(),
            opt: LocalOptConfig::default(),
            eig_tol: 1e-9,
            eig_max_iter: 400,
            seed: 1,
            init_bond: 2,
            out_dir: None,
        }
    }

    pub fn policy(&self) -> Result<TruncationPolicy> {
        TruncationPolicy::new(self.eps_trc, self.d_min, self.d_max)
    }

    pub fn validate(&self) -> Result<()> {
        self.policy()?;
        self.opt.validate()?;
        if self.schedule.macro_iterations == 0 {
            return Err(Error::Config("macro_iterations must be at least 1".into()));
        }
        if self.eig_tol <= 0.0 || self.eig_max_iter == 0 {
            return Err(Error::Config("eigensolver settings must be positive".into()));
        }
        Ok(())
    }

    /// Parses the `key = value` grammar (later keys win).
    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: format!("expected `key = value`, found `{line}`"),
                });
            };
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Self::from_map(&map)
    }

    /// Builds a config from a key map; missing keys take defaults.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let bad = |key: &str, value: &str| Error::Config(format!("bad value `{value}` for {key}"));
        let get_usize = |key: &str, default: usize| -> Result<usize> {
            match map.get(key) {
                Some(v) => v.parse().map_err(|_| bad(key, v)),
                None => Ok(default),
            }
        };
        let get_f64 = |key: &str, default: f64| -> Result<f64> {
            match map.get(key) {
                Some(v) if v == "inf" => Ok(f64::INFINITY),
                Some(v) => v.parse().map_err(|_| bad(key, v)),
                None => Ok(default),
            }
        };
        let get_bool = |key: &str, default: bool| -> Result<bool> {
            match map.get(key).map(|s| s.as_str()) {
                Some("true") | Some("1") | Some("yes") => Ok(true),
                Some("false") | Some("0") | Some("no") => Ok(false),
                Some(v) => Err(bad(key, v)),
                None => Ok(default),
            }
        };

        let model = match map.get("model").map(|s| s.as_str()).unwrap_or("hubbard") {
            "hubbard" => ModelSpec::Hubbard {
                n: get_usize("n", 6)?,
                p: get_usize("p", 1)?,
                t0: get_f64("t0", 1.0)?,
                u0: get_f64("u0", 2.0)?,
                gamma: get_f64("gamma", 1.0)?,
                boundary: match map.get("boundary").map(|s| s.as_str()).unwrap_or("open") {
                    "open" => Boundary::Open,
                    "periodic" => Boundary::Periodic,
                    v => return Err(bad("boundary", v)),
                },
            },
            "fcidump" => ModelSpec::Fcidump {
                path: PathBuf::from(map.get("fcidump_path").ok_or_else(|| {
                    Error::Config("model = fcidump needs fcidump_path".into())
                })?),
            },
            v => return Err(bad("model", v)),
        };
        let counts = match map.get("nelec") {
            Some(text) => {
                let parts: Vec<usize> = text
                    .split(',')
                    .map(|s| s.trim().parse().map_err(|_| bad("nelec", text)))
                    .collect::<Result<_>>()?;
                Some(parts)
            }
            None => None,
        };
        let initial_basis = match map.get("initial_basis").map(|s| s.as_str()).unwrap_or("identity")
        {
            "identity" => InitialBasis::Identity,
            "t_eigen" => InitialBasis::TEigen,
            "hf" => InitialBasis::HartreeFock,
            "file" => InitialBasis::File(PathBuf::from(map.get("unitary_file").ok_or_else(
                || Error::Config("initial_basis = file needs unitary_file".into()),
            )?)),
            v => return Err(bad("initial_basis", v)),
        };
        let opt = LocalOptConfig {
            cost: match map.get("cost").map(|s| s.as_str()).unwrap_or("f1") {
                "f1" => CostFunction::F1,
                "f4" => CostFunction::F4,
                v => return Err(bad("cost", v)),
            },
            method: match map.get("method").map(|s| s.as_str()).unwrap_or("nelder_mead") {
                "nelder_mead" => OptMethod::NelderMead,
                "cg" | "conjugate_gradient" => OptMethod::ConjugateGradient,
                v => return Err(bad("method", v)),
            },
            restriction: match map
                .get("restriction")
                .map(|s| s.as_str())
                .unwrap_or("spin_summed")
            {
                "none" => SymmetryRestriction::None,
                "spin_summed" => SymmetryRestriction::SpinSummed,
                v => return Err(bad("restriction", v)),
            },
            max_evals: get_usize("max_evals", 200)?,
            delta_accept: get_f64("delta_accept", 1e-10)?,
            retry_budget: get_usize("retry_budget", 8)?,
        };
        let config = Self {
            model,
            counts,
            initial_basis,
            eps_trc: get_f64("eps_trc", 1e-6)?,
            d_min: get_usize("d_min", 1)?,
            d_max: get_usize("d_max", 64)?,
            schedule: Schedule {
                plain_sweeps: get_usize("plain_sweeps", 2)?,
                opt_sweeps: get_usize("opt_sweeps", 8)?,
                macro_iterations: get_usize("macro_iterations", 1)?,
                reorder: get_bool("reorder", true)?,
            },
            opt,
            eig_tol: get_f64("eig_tol", 1e-9)?,
            eig_max_iter: get_usize("eig_max_iter", 400)?,
            seed: get_usize("seed", 1)? as u64,
            init_bond: get_usize("init_bond", 2)?,
            out_dir: map.get("out_dir").map(PathBuf::from),
        };
        config.validate()?;
        Ok(config)
    }
}

/// Unitary container for basis files and the `rotate` tool.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UnitaryFile {
    pub format: String,
    pub matrix: MatrixRepr,
}

impl UnitaryFile {
    pub fn new(u: &CMat) -> Self {
        Self { format: "orbdmrg-unitary-v1".into(), matrix: MatrixRepr::from_mat(u) }
    }

    pub fn read(path: &Path) -> Result<CMat> {
        let text = std::fs::read_to_string(path)?;
        let file: UnitaryFile = serde_json::from_str(&text)?;
        file.matrix.to_mat()
    }

    pub fn write(path: &Path, u: &CMat) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&Self::new(u))?)?;
        Ok(())
    }
}

/// One JSON-lines record per two-site step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportRecord {
    pub iteration: usize,
    pub sweep: usize,
    pub site: usize,
    pub energy: f64,
    #[serde(rename = "D")]
    pub bond_dim: usize,
    pub eps_t: f64,
    pub accepted_rotation: bool,
}

/// Restartable snapshot written after every full sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: RunConfig,
    /// Completed macro-iterations.
    pub macro_index: usize,
    /// Completed full sweeps within the current macro-iteration.
    pub sweep_index: usize,
    pub psi: MpsFile,
    pub operator: OperatorFile,
    pub mode_order: Vec<usize>,
    pub accumulated: MatrixRepr,
    pub permutations: Vec<Vec<usize>>,
    pub energy_series: Vec<f64>,
}

impl Checkpoint {
    pub fn read(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }
}

/// Provenance of a finished run.
#[derive(Clone, Debug)]
pub struct RunProvenance {
    pub config: RunConfig,
    /// Orbital permutations applied at reorder points, in order.
    pub permutations: Vec<OrbitalPermutation>,
    /// Accumulated unitary mapping current modes to initial physical ones.
    pub accumulated: CMat,
    /// Energy after every completed full sweep.
    pub energy_series: Vec<f64>,
    /// Largest bond dimension after every completed full sweep.
    pub bond_series: Vec<usize>,
    /// Largest energy drift observed across an accepted rotation.
    pub max_rotation_drift: f64,
    pub crate_version: String,
}

/// Result of [`run_ground_state`].
pub struct RunOutcome {
    pub energy: f64,
    pub psi: SymmetricMps,
    pub coeffs: SecondQuantizedOperator,
    pub mode_space: ModeSpace,
    pub provenance: RunProvenance,
    pub report: Vec<ReportRecord>,
}

impl RunOutcome {
    /// Verifies the basis provenance: the initial coefficients rotated by
    /// the accumulated unitary must reproduce the final ones.
    pub fn verify_provenance(&self, initial: &SecondQuantizedOperator) -> Result<f64> {
        let replayed = rotate_coefficients(initial, &self.mode_space.accumulated)?;
        let mut dev = crate::linalg::max_diff(&replayed.t, &self.coeffs.t);
        for (a, b) in replayed.v.iter().zip(self.coeffs.v.iter()) {
            dev = dev.max((a - b).norm());
        }
        Ok(dev)
    }
}

/// Builds the bare operator of a model spec (identity basis, no rotation).
pub fn build_model(model: &ModelSpec) -> Result<(SecondQuantizedOperator, Option<Vec<usize>>)> {
    match model {
        ModelSpec::Hubbard { n, p, t0, u0, gamma, boundary } => {
            Ok((build_hubbard(*n, *p, *t0, *u0, *gamma, *boundary)?, None))
        }
        ModelSpec::Fcidump { path } => {
            let file = std::fs::File::open(path)?;
            let reader = std::io::BufReader::new(file);
            let (op, header) = parse_fcidump(reader)?;
            let up = ((header.nelec as i64 + header.ms2 as i64) / 2) as usize;
            let down = header.nelec - up;
            Ok((op, Some(vec![up, down])))
        }
    }
}

/// Default half-filled per-species counts.
fn default_counts(n: usize, p: usize) -> Vec<usize> {
    vec![n / 2; p]
}

/// The initial basis rotation of a run.
fn initial_rotation(
    basis: &InitialBasis,
    coeffs: &SecondQuantizedOperator,
    counts: &[usize],
) -> Result<CMat> {
    let np = coeffs.n_modes();
    let n = coeffs.n_orbitals();
    let p = coeffs.species();
    match basis {
        InitialBasis::Identity => Ok(CMat::identity(np, np)),
        InitialBasis::TEigen => {
            // Diagonalise the species-averaged one-body block and apply the
            // same spatial rotation to every species.
            let mut t_spatial = nalgebra::DMatrix::zeros(n, n);
            for q in 0..n {
                for r in 0..n {
                    let mut acc = crate::linalg::cr(0.0);
                    for s in 0..p {
                        acc += coeffs.t[(q * p + s, r * p + s)];
                    }
                    t_spatial[(q, r)] = acc / crate::linalg::cr(p as f64);
                }
            }
            let (_, vecs) = crate::linalg::eigh(&t_spatial);
            let mut u = CMat::zeros(np, np);
            for s in 0..p {
                for q in 0..n {
                    for k in 0..n {
                        u[(q * p + s, k * p + s)] = vecs[(q, k)];
                    }
                }
            }
            Ok(u)
        }
        InitialBasis::HartreeFock => {
            let hf = crate::oracle::hartree_fock_basis(coeffs, counts)?;
            Ok(hf.basis)
        }
        InitialBasis::File(path) => {
            let u = UnitaryFile::read(path)?;
            crate::linalg::require_unitary(&u, 1e-10)?;
            if u.nrows() != np {
                return Err(Error::DimensionMismatch {
                    context: "initial basis file",
                    expected: np,
                    got: u.nrows(),
                });
            }
            Ok(u)
        }
    }
}

struct OutputSink {
    report: Option<std::io::BufWriter<std::fs::File>>,
    bonds: Option<std::io::BufWriter<std::fs::File>>,
}

impl OutputSink {
    fn new(out_dir: Option<&Path>, resume: bool) -> Result<Self> {
        let Some(dir) = out_dir else {
            return Ok(Self { report: None, bonds: None });
        };
        std::fs::create_dir_all(dir)?;
        let open = |name: &str| -> Result<std::io::BufWriter<std::fs::File>> {
            let file = std::fs::OpenOptions::new()
                .create(true)
                .append(resume)
                .write(true)
                .truncate(!resume)
                .open(dir.join(name))?;
            Ok(std::io::BufWriter::new(file))
        };
        Ok(Self { report: Some(open("report.jsonl")?), bonds: Some(open("bonds.csv")?) })
    }

    fn write_record(&mut self, record: &ReportRecord) -> Result<()> {
        if let Some(w) = &mut self.report {
            serde_json::to_writer(&mut *w, record)?;
            writeln!(w)?;
        }
        Ok(())
    }

    fn write_bonds(&mut self, macro_index: usize, sweep: usize, psi: &SymmetricMps) -> Result<()> {
        if let Some(w) = &mut self.bonds {
            write!(w, "{macro_index},{sweep}")?;
            for b in 1..psi.n_sites() {
                write!(w, ",{}", psi.bond_dim(b))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        if let Some(w) = &mut self.report {
            w.flush()?;
        }
        if let Some(w) = &mut self.bonds {
            w.flush()?;
        }
        Ok(())
    }
}

/// Runs the full schedule, optionally resuming from a checkpoint.
pub fn run_ground_state(config: &RunConfig, resume: Option<Checkpoint>) -> Result<RunOutcome> {
    config.validate()?;
    let (initial_op, file_counts) = build_model(&config.model)?;
    let n = initial_op.n_orbitals();
    let p = initial_op.species();
    let counts = config
        .counts
        .clone()
        .or(file_counts)
        .unwrap_or_else(|| default_counts(n, p));
    if counts.len() != p {
        return Err(Error::Config(format!(
            "nelec needs {p} per-species counts, found {}",
            counts.len()
        )));
    }
    if p >= 2 && config.schedule.opt_sweeps > 0 && config.opt.restriction == SymmetryRestriction::None
    {
        return Err(Error::Config(
            "p ≥ 2 basis optimisation needs restriction = spin_summed to keep U(1)^p".into(),
        ));
    }
    let policy = config.policy()?;
    let eig = DavidsonOptions {
        tol: config.eig_tol,
        max_iter: config.eig_max_iter,
        max_subspace: 24,
    };
    let sweep_opts = SweepOptions { policy, eig };

    // State: fresh or resumed.
    let mut mode_space = ModeSpace::new(n, p)?;
    let mut permutations: Vec<OrbitalPermutation> = Vec::new();
    let mut energy_series: Vec<f64> = Vec::new();
    let mut bond_series: Vec<usize> = Vec::new();
    let mut start_macro = 0usize;
    let mut start_sweep = 0usize;
    let (psi, coeffs) = match &resume {
        Some(cp) => {
            let psi = cp.psi.to_mps()?;
            let (op, _) = cp.operator.to_operator()?;
            mode_space.mode_order = cp.mode_order.clone();
            mode_space.accumulated = cp.accumulated.to_mat()?;
            mode_space.validate_checkpoint()?;
            permutations = cp
                .permutations
                .iter()
                .map(|perm| OrbitalPermutation { perm: perm.clone() })
                .collect();
            energy_series = cp.energy_series.clone();
            start_macro = cp.macro_index;
            start_sweep = cp.sweep_index;
            (psi, op)
        }
        None => {
            let u0 = initial_rotation(&config.initial_basis, &initial_op, &counts)?;
            let rotated = rotate_coefficients(&initial_op, &u0)?;
            mode_space.push_rotation(&u0)?;
            let mut rng = {
                use rand::SeedableRng;
                rand_chacha::ChaCha8Rng::seed_from_u64(config.seed)
            };
            let cap = config.init_bond.clamp(1, config.d_max.max(1));
            let psi = SymmetricMps::random_in_sector(n, p, &counts, cap, &mut rng)?;
            (psi, rotated)
        }
    };

    let mut engine = DmrgEngine::new(psi, coeffs)?;
    let mut sink = OutputSink::new(config.out_dir.as_deref(), resume.is_some())?;
    let mut max_drift = 0.0f64;
    let total_sweeps = config.schedule.plain_sweeps + config.schedule.opt_sweeps;

    for macro_index in start_macro..config.schedule.macro_iterations {
        let sweep_start = if macro_index == start_macro { start_sweep } else { 0 };
        for sweep in sweep_start..total_sweeps {
            let optimising = sweep >= config.schedule.plain_sweeps;
            let mut hook_holder = if optimising {
                let seed = config
                    .seed
                    .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                    .wrapping_add((macro_index as u64) << 24)
                    .wrapping_add(sweep as u64);
                Some(LocalBasisOptimizer::new(config.opt.clone(), seed))
            } else {
                None
            };
            let mut half = |engine: &mut DmrgEngine, dir| -> Result<SweepReport> {
                let hook = hook_holder
                    .as_mut()
                    .map(|h| h as &mut dyn crate::dmrg::ModeOptHook);
                engine.sweep(dir, &sweep_opts, hook)
            };
            // On an inner failure, leave a restartable snapshot behind
            // before surfacing the error.
            let checked = |result: Result<SweepReport>,
                               engine: &DmrgEngine|
             -> Result<SweepReport> {
                if result.is_err() {
                    let _ = write_checkpoint(
                        config,
                        engine,
                        &mode_space,
                        &permutations,
                        &energy_series,
                        macro_index,
                        sweep,
                    );
                }
                result
            };
            let rep1 = {
                let r = half(&mut engine, SweepDirection::LeftToRight);
                checked(r, &engine)?
            };
            let rep2 = {
                let r = half(&mut engine, SweepDirection::RightToLeft);
                checked(r, &engine)?
            };
            let mut final_energy = f64::NAN;
            for rep in [&rep1, &rep2] {
                for step in &rep.steps {
                    max_drift = max_drift.max(step.rotation_drift);
                    final_energy = step.energy;
                    sink.write_record(&ReportRecord {
                        iteration: macro_index,
                        sweep,
                        site: step.site,
                        energy: step.energy,
                        bond_dim: step.bond_dim,
                        eps_t: step.eps_t,
                        accepted_rotation: step.accepted_rotation,
                    })?;
                }
                for (site, u_loc) in &rep.rotations {
                    let u = crate::operators::embed_local(u_loc, *site, n, p)?;
                    mode_space.push_rotation(&u)?;
                }
            }
            energy_series.push(final_energy);
            bond_series.push(engine.psi().max_bond_dim());
            sink.write_bonds(macro_index, sweep, engine.psi())?;
            sink.flush()?;
            write_checkpoint(
                config,
                &engine,
                &mode_space,
                &permutations,
                &energy_series,
                macro_index,
                sweep + 1,
            )?;
        }

        // Reorder between macro-iterations (skipped after the last one,
        // where no further sweeps would absorb the re-truncation). A
        // candidate ordering is applied only when its placement cost
        // strictly improves on the current ordering; this stops orderings
        // from flip-flopping and re-truncating the state to no benefit.
        if config.schedule.reorder && macro_index + 1 < config.schedule.macro_iterations {
            let mi = engine.psi().mutual_information()?;
            let perm = fiedler_order(&mi)?;
            let n_sites = engine.psi().n_sites();
            let improves = crate::ordering::placement_cost(&mi, &perm)
                < crate::ordering::placement_cost(&mi, &OrbitalPermutation::identity(n_sites))
                    * (1.0 - 1e-9);
            if !perm.is_identity() && improves {
                let mut psi = engine.psi().clone();
                let mut coeffs = engine.coeffs().clone();
                // Swap splits run at a relaxed cap so a reorder does not
                // discard weight the following sweeps could keep; they
                // re-truncate to the working cap variationally.
                let swap_policy = TruncationPolicy::new(
                    policy.eps_trc.max(1e-14),
                    policy.d_min,
                    policy.d_max.saturating_mul(8),
                )?;
                apply_permutation(&mut psi, &mut coeffs, &mut mode_space, &perm, &swap_policy)?;
                permutations.push(perm);
                engine.reset(psi, coeffs)?;
            }
            write_checkpoint(
                config,
                &engine,
                &mode_space,
                &permutations,
                &energy_series,
                macro_index + 1,
                0,
            )?;
        }
    }

    let energy = engine.energy()?;
    let (psi, coeffs) = engine.into_parts();
    if let Some(dir) = config.out_dir.as_deref() {
        let mi = psi.mutual_information()?;
        write_mi_matrix(&dir.join("mi.txt"), &mi)?;
        let op_file = OperatorFile::from_operator(&coeffs, Some(&mode_space.accumulated));
        std::fs::write(dir.join("operator_final.json"), serde_json::to_string(&op_file)?)?;
        let prov = serde_json::json!({
            "config": config,
            "permutations": permutations.iter().map(|p| p.perm.clone()).collect::<Vec<_>>(),
            "accumulated_unitary": MatrixRepr::from_mat(&mode_space.accumulated),
            "energy_series": energy_series,
            "bond_series": bond_series,
            "max_rotation_drift": max_drift,
            "crate_version": env!("CARGO_PKG_VERSION"),
        });
        std::fs::write(dir.join("provenance.json"), serde_json::to_string_pretty(&prov)?)?;
    }
    Ok(RunOutcome {
        energy,
        psi,
        coeffs,
        mode_space: mode_space.clone(),
        provenance: RunProvenance {
            config: config.clone(),
            permutations,
            accumulated: mode_space.accumulated,
            energy_series,
            bond_series,
            max_rotation_drift: max_drift,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
        },
        report: Vec::new(),
    })
}

fn write_checkpoint(
    config: &RunConfig,
    engine: &DmrgEngine,
    mode_space: &ModeSpace,
    permutations: &[OrbitalPermutation],
    energy_series: &[f64],
    macro_index: usize,
    sweep_index: usize,
) -> Result<()> {
    let Some(dir) = config.out_dir.as_deref() else {
        return Ok(());
    };
    let cp = Checkpoint {
        format: "orbdmrg-checkpoint-v1".into(),
        config: config.clone(),
        macro_index,
        sweep_index,
        psi: MpsFile::from_mps(engine.psi()),
        operator: OperatorFile::from_operator(engine.coeffs(), Some(&mode_space.accumulated)),
        mode_order: mode_space.mode_order.clone(),
        accumulated: MatrixRepr::from_mat(&mode_space.accumulated),
        permutations: permutations.iter().map(|p| p.perm.clone()).collect(),
        energy_series: energy_series.to_vec(),
    };
    cp.write(&dir.join("checkpoint.json"))
}

/// Writes a dense text matrix (rows of space-separated values).
pub fn write_mi_matrix(path: &Path, mi: &nalgebra::DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    for q in 0..mi.nrows() {
        for r in 0..mi.ncols() {
            if r > 0 {
                out.push(' ');
            }
            out.push_str(&format!("{:.12e}", mi[(q, r)]));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
