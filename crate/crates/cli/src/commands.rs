use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use bsbl::experiments::{
    dct_basis, gen_sparse_binary_matrix, nmse, recover_transform_domain, run_dct_demo_with,
    run_noisy_sweep_with, run_phase_transition_with, Algorithm, DctConfig, PhaseConfig, SweepBeta,
    SweepConfig,
};
use bsbl::{solve, BlockPartition, MeasurementSystem, RecoveryResult, SolverOptions};
use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{
    BetaArg, Cli, Command, DctArgs, OutputFlags, PhaseArgs, RunFlags, SolveArgs, SolverFlags,
    SweepArgs,
};
use crate::io::{self, fmt_f64, Format, JsonObject, RecordWriter};
use crate::{CliError, EXIT_NOT_CONVERGED};

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Phase(a) => cmd_phase(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::DctDemo(a) => cmd_dct(&a),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))
}

fn open_output(path: Option<&PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| {
            CliError::input(format!("cannot create {}: {e}", p.display()))
        })?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&PathBuf>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = read(path)?;
    let bad = |e: &dyn std::fmt::Display| {
        CliError::input(format!("invalid config {}: {e}", path.display()))
    };
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| bad(&e))
    } else {
        toml::from_str(&text).map_err(|e| bad(&e))
    }
}

fn header(command: &str, base_seed: u64, config: &impl Serialize) -> Result<Value, CliError> {
    let config = serde_json::to_value(config).map_err(CliError::output)?;
    Ok(json!({
        "tool": "bsbl",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "base_seed": base_seed,
        "config": config,
    }))
}

/// Overlay solver flags onto `options`; `known-snr` is rejected here.
fn apply_solver_flags(options: &mut SolverOptions, flags: &SolverFlags) -> Result<(), CliError> {
    if let Some(m) = flags.model {
        options.model = m.model();
    }
    if let Some(eta) = flags.eta {
        options.eta = eta;
    }
    if let Some(n) = flags.max_iters {
        options.max_iters = n;
    }
    match flags.beta_mode {
        Some(BetaArg::Mode(mode)) => options.beta_mode = mode,
        Some(BetaArg::KnownSnr) => {
            return Err(CliError::input(
                "--beta-mode known-snr is only available for sweep",
            ))
        }
        None => {}
    }
    if flags.learn_beta {
        options.learn_beta = true;
    }
    options.validate().map_err(CliError::from)
}

fn apply_run_flags(
    trials: &mut usize,
    seed: &mut u64,
    timing: &mut bool,
    run: &RunFlags,
    out: &OutputFlags,
) {
    if let Some(t) = run.trials {
        *trials = t;
    }
    if let Some(s) = out.seed {
        *seed = s;
    }
    if run.timing {
        *timing = true;
    }
}

/// Replace the BSBL-FM variants in `algorithms` by the one `--model` names.
fn restrict_model(algorithms: &mut Vec<Algorithm>, flags: &SolverFlags) {
    if let Some(m) = flags.model {
        let chosen = m.algorithm();
        let mut out = vec![chosen];
        out.extend(algorithms.iter().copied().filter(|a| a.model().is_none()));
        *algorithms = out;
    }
}

fn cmd_phase(a: &PhaseArgs) -> Result<(), CliError> {
    let mut config: PhaseConfig = load_config(a.run.config.as_ref())?;
    if let Some(v) = a.n_blocks {
        config.n_blocks = v;
    }
    if let Some(v) = a.block_size {
        config.block_size = v;
    }
    if let Some(v) = &a.m_values {
        config.m_values = v.clone();
    }
    if let Some(v) = &a.k_values {
        config.k_values = v.clone();
    }
    if let Some(v) = a.r {
        config.r = v;
    }
    if let Some(m) = a.solver.model {
        config.algorithm = m.algorithm();
    }
    apply_solver_flags(&mut config.solver, &a.solver)?;
    apply_run_flags(
        &mut config.trials,
        &mut config.base_seed,
        &mut config.timing,
        &a.run,
        &a.output,
    );
    config.validate()?;

    let head = header("phase", config.base_seed, &config)?;
    let mut writer =
        RecordWriter::new(open_output(a.output.out.as_ref())?, a.output.format, &head)?;
    let run = run_phase_transition_with(&config, |cell| {
        writer
            .write(cell)
            .map_err(|e| bsbl::BsblError::InvalidSpec(e.message))
    })?;
    writer.into_inner().flush()?;
    if let Some(path) = &a.grid {
        fs::write(path, io::format_grid(&run.grid))
            .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<(), CliError> {
    let mut config: SweepConfig = load_config(a.run.config.as_ref())?;
    if let Some(v) = &a.n_values {
        config.n_values = v.clone();
    }
    if let Some(v) = a.ratio {
        config.measurement_ratio = v;
    }
    if let Some(v) = a.n_blocks {
        config.n_blocks = v;
    }
    if let Some(v) = a.k_active {
        config.k_active = v;
    }
    if let Some(v) = &a.r_range {
        config.r_lo = v[0];
        config.r_hi = v[1];
    }
    if let Some(v) = a.snr {
        config.snr_db = Some(v);
    }
    if a.noiseless {
        config.snr_db = None;
    }
    if let Some(v) = &a.algorithms {
        config.algorithms = v.clone();
    }
    restrict_model(&mut config.algorithms, &a.solver);
    let mut flags = a.solver.clone();
    match flags.beta_mode {
        Some(BetaArg::KnownSnr) => {
            config.beta = SweepBeta::KnownSnr;
            flags.beta_mode = None;
        }
        Some(BetaArg::Mode(_)) => config.beta = SweepBeta::Solver,
        None => {}
    }
    apply_solver_flags(&mut config.solver, &flags)?;
    apply_run_flags(
        &mut config.trials,
        &mut config.base_seed,
        &mut config.timing,
        &a.run,
        &a.output,
    );
    config.validate()?;

    let head = header("sweep", config.base_seed, &config)?;
    let mut writer =
        RecordWriter::new(open_output(a.output.out.as_ref())?, a.output.format, &head)?;
    run_noisy_sweep_with(&config, |batch| {
        writer
            .write(batch)
            .map_err(|e| bsbl::BsblError::InvalidSpec(e.message))
    })?;
    writer.into_inner().flush()?;
    Ok(())
}

fn cmd_dct(a: &DctArgs) -> Result<(), CliError> {
    let mut config: DctConfig = load_config(a.run.config.as_ref())?;
    if let Some(v) = a.m {
        config.m = v;
    }
    if let Some(v) = a.n {
        config.ecg.n = v;
    }
    if let Some(v) = a.ones {
        config.ones_per_column = v;
    }
    if let Some(v) = a.block_size {
        config.block_size = v;
    }
    if let Some(v) = a.omp_budget {
        config.omp_budget = Some(v);
    }
    if let Some(v) = &a.algorithms {
        config.algorithms = v.clone();
    }
    restrict_model(&mut config.algorithms, &a.solver);
    apply_solver_flags(&mut config.solver, &a.solver)?;
    apply_run_flags(
        &mut config.trials,
        &mut config.base_seed,
        &mut config.timing,
        &a.run,
        &a.output,
    );
    config.validate()?;

    let head = header("dct-demo", config.base_seed, &config)?;
    let mut writer =
        RecordWriter::new(open_output(a.output.out.as_ref())?, a.output.format, &head)?;
    run_dct_demo_with(&config, |batch| {
        writer
            .write(batch)
            .map_err(|e| bsbl::BsblError::InvalidSpec(e.message))
    })?;
    writer.into_inner().flush()?;
    Ok(())
}

/// `MxNxK` for a sparse binary sensing matrix.
fn parse_binary_sensing(s: &str) -> Result<(usize, usize, usize), CliError> {
    let parts: Vec<usize> = s
        .split('x')
        .map(|t| t.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::input(format!("--binary-sensing expects MxNxK, got '{s}'")))?;
    match parts[..] {
        [m, n, k] if m > 0 && n > 0 && k > 0 => Ok((m, n, k)),
        _ => Err(CliError::input(format!(
            "--binary-sensing expects three positive sizes MxNxK, got '{s}'"
        ))),
    }
}

#[derive(Serialize)]
struct SolveConfig<'a> {
    matrix: Option<&'a Path>,
    binary_sensing: Option<&'a str>,
    observation: Option<&'a Path>,
    signal: Option<&'a Path>,
    blocks: Option<usize>,
    partition: &'a [usize],
    dct: bool,
    strict: bool,
    solver: SolverOptions,
}

fn cmd_solve(a: &SolveArgs) -> Result<(), CliError> {
    let seed = a.output.seed.unwrap_or(0);
    let phi = match (&a.matrix, &a.binary_sensing) {
        (Some(path), _) => io::parse_matrix(&read(path)?)?,
        (None, Some(spec)) => {
            let (m, n, k) = parse_binary_sensing(spec)?;
            gen_sparse_binary_matrix(m, n, k, seed)?
        }
        (None, None) => return Err(CliError::input("need --matrix or --binary-sensing")),
    };
    let signal = a
        .signal
        .as_ref()
        .map(|p| read(p).and_then(|t| io::parse_vector(&t)))
        .transpose()?;
    let y = match (&a.observation, &signal) {
        (Some(path), _) => io::parse_vector(&read(path)?)?,
        (None, Some(x)) => {
            if x.len() != phi.ncols() {
                return Err(CliError::input(format!(
                    "signal has length {} but the sensing matrix has {} columns",
                    x.len(),
                    phi.ncols()
                )));
            }
            &phi * x
        }
        (None, None) => return Err(CliError::input("need --observation or --signal")),
    };
    let n = phi.ncols();
    let partition = match (a.blocks, &a.partition) {
        (Some(d), _) => BlockPartition::with_block_size(n, d)?,
        (None, Some(sizes)) => BlockPartition::new(sizes.clone())?,
        (None, None) => return Err(CliError::input("need --blocks or --partition")),
    };
    let mut options = SolverOptions::default();
    apply_solver_flags(&mut options, &a.solver)?;

    let config = SolveConfig {
        matrix: a.matrix.as_deref(),
        binary_sensing: a.binary_sensing.as_deref(),
        observation: a.observation.as_deref(),
        signal: a.signal.as_deref(),
        blocks: a.blocks,
        partition: partition.sizes(),
        dct: a.dct,
        strict: a.strict,
        solver: options,
    };
    let head = header("solve", seed, &config)?;

    let (x, result): (DVector<f64>, RecoveryResult) = if a.dct {
        let basis = dct_basis(n)?;
        recover_transform_domain(&y, &phi, &basis, &partition, &options)?
    } else {
        let system = MeasurementSystem::new(phi, y, 1.0)?;
        let result = solve(&system, &partition, &options)?;
        (result.x.clone(), result)
    };
    let error = signal.as_ref().map(|s| nmse(&x, s)).transpose()?;

    let mut out = open_output(a.output.out.as_ref())?;
    write_solution(&mut out, a.output.format, &head, &x, &result, error)?;
    out.flush()?;
    if a.strict && !result.converged {
        return Err(CliError {
            code: EXIT_NOT_CONVERGED,
            message: format!(
                "solver stopped after {} iterations without converging",
                result.iterations
            ),
        });
    }
    Ok(())
}

fn write_solution(
    out: &mut dyn Write,
    format: Format,
    head: &Value,
    x: &DVector<f64>,
    result: &RecoveryResult,
    nmse: Option<f64>,
) -> Result<(), CliError> {
    let summary = JsonObject::default()
        .ints("active", result.active.iter().copied())
        .int("iterations", result.iterations as u64)
        .bool("converged", result.converged)
        .float("last_delta", result.last_delta)
        .float("beta", result.beta)
        .opt_float("nmse", nmse)
        .floats("cost_trace", result.cost_trace.iter().copied());
    match format {
        Format::Jsonl => {
            writeln!(out, "{}", json!({ "header": head }))?;
            let body = summary.floats("x", x.iter().copied()).finish();
            writeln!(out, "{{\"result\":{body}}}")?;
        }
        Format::Csv => {
            writeln!(out, "# {head}")?;
            writeln!(out, "# {}", summary.finish())?;
            writeln!(out, "index,x")?;
            for (i, v) in x.iter().enumerate() {
                writeln!(out, "{i},{}", fmt_f64(*v))?;
            }
        }
    }
    Ok(())
}
