//! Command-line front end: `validate`, `price`, `surface` and `check`.
//!
//! Exit codes: 0 on success, 1 on any configuration, domain or solver error,
//! 2 when the acceptance battery reports a failed criterion.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::acceptance::Battery;
use crate::config::{ExperimentConfig, OutputFormat};
use crate::error::{Error, Result};
use crate::greeks::{delta_integral, write_delta_csv};
use crate::volterra::{solve, write_surface_csv, PriceSurface, SurfaceData};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_ACCEPTANCE: i32 = 2;

const CACHE_DIR: &str = ".smgbm-cache";

#[derive(Debug, Parser)]
#[command(name = "smgbm", version, about = "European calls under semi-Markov regime-switching GBM")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Override `mc.seed` from the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Solve afresh instead of reading or writing the solve cache.
    #[arg(long, global = true)]
    pub no_cache: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a configuration file and report every problem.
    Validate(ConfigArg),
    /// Price and delta at one point.
    Price {
        #[command(flatten)]
        config: ConfigArg,
        /// `t,s,i,y` with the regime numbered from 1; `t` may be `T`.
        #[arg(long)]
        at: String,
    },
    /// Write the age-zero price surface as CSV.
    Surface {
        #[command(flatten)]
        config: ConfigArg,
        /// Output file (default `<output.dir>/surface.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write `<stem>_delta.csv`.
        #[arg(long)]
        with_delta: bool,
    },
    /// Run the acceptance battery.
    Check(ConfigArg),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Path to the TOML configuration.
    pub config: PathBuf,
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with_args<I, T>(args: I, out: &mut impl Write, err: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli, out, err),
        Err(e) => {
            let _ = write!(err, "{e}");
            if e.use_stderr() {
                EXIT_ERROR
            } else {
                let _ = write!(out, "{e}");
                EXIT_OK
            }
        }
    }
}

pub fn run(cli: &Cli, out: &mut impl Write, err: &mut impl Write) -> i32 {
    let outcome = match &cli.command {
        Command::Validate(c) => cmd_validate(&c.config, out),
        Command::Price { config, at } => cmd_price(&config.config, at, cli.no_cache, out, err),
        Command::Surface {
            config,
            out: path,
            with_delta,
        } => cmd_surface(&config.config, path.as_deref(), *with_delta, cli.no_cache, out, err),
        Command::Check(c) => cmd_check(&c.config, cli.seed, cli.no_cache, out, err),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_ERROR
        }
    }
}

/// Loads and validates a configuration, naming every violated key.
pub fn load_valid(path: &Path) -> Result<ExperimentConfig> {
    let config = ExperimentConfig::load(path)?;
    let report = config.validate();
    if report.is_empty() {
        Ok(config)
    } else {
        let lines: Vec<String> = report.violations.iter().map(|v| format!("{}: {}", v.key, v.message)).collect();
        Err(Error::Config(format!("{}:\n  {}", path.display(), lines.join("\n  "))))
    }
}

fn cmd_validate(path: &Path, out: &mut impl Write) -> Result<i32> {
    let config = load_valid(path)?;
    let estimate = crate::volterra::estimate_contraction(&config.model(), config.contract.maturity);
    writeln!(
        out,
        "ok: {} regimes, K = {}, T = {}, contraction estimate {:.6}",
        config.market.r.len(),
        config.contract.strike,
        config.contract.maturity,
        estimate.value
    )?;
    if let Some(w) = estimate.warning {
        writeln!(out, "warning: {w}")?;
    }
    Ok(EXIT_OK)
}

/// `(t, s, regime, y)` from `t,s,i,y` with a 1-based regime.
pub fn parse_point(text: &str, maturity: f64) -> Result<(f64, f64, usize, f64)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let bad = || Error::InvalidArgument(format!("--at expects t,s,i,y; got {text:?}"));
    if parts.len() != 4 {
        return Err(bad());
    }
    let t = if parts[0].eq_ignore_ascii_case("T") {
        maturity
    } else {
        parts[0].parse().map_err(|_| bad())?
    };
    let s: f64 = parts[1].parse().map_err(|_| bad())?;
    let i: usize = parts[2].parse().map_err(|_| bad())?;
    let y: f64 = parts[3].parse().map_err(|_| bad())?;
    if i == 0 {
        return Err(Error::Domain("regimes are numbered from 1".into()));
    }
    Ok((t, s, i - 1, y))
}

fn cache_path(config_path: &Path, config: &ExperimentConfig) -> PathBuf {
    config_path
        .parent()
        .unwrap_or(Path::new("."))
        .join(CACHE_DIR)
        .join(format!("{}.json", config.solve_key()))
}

fn read_cache(path: &Path, config: &ExperimentConfig) -> Option<PriceSurface> {
    let bytes = fs::read(path).ok()?;
    let data: SurfaceData = serde_json::from_slice(&bytes).ok()?;
    if data.model != config.model() || data.contract != config.contract() || data.config != config.solver {
        return None;
    }
    PriceSurface::from_data(data).ok()
}

fn write_cache(path: &Path, surface: &PriceSurface) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let bytes = serde_json::to_vec(&surface.to_data()).map_err(|e| Error::Config(e.to_string()))?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Solved surface for a configuration, through the cache unless bypassed.
pub fn surface_for(
    config_path: &Path,
    config: &ExperimentConfig,
    no_cache: bool,
    err: &mut impl Write,
) -> Result<PriceSurface> {
    let cache = cache_path(config_path, config);
    if !no_cache {
        if let Some(surface) = read_cache(&cache, config) {
            return Ok(surface);
        }
    }
    let surface = solve(&config.model(), &config.contract(), &config.solver)?;
    if let Some(w) = &surface.convergence.warning {
        writeln!(err, "warning: {w}")?;
    }
    if !no_cache {
        if let Err(e) = write_cache(&cache, &surface) {
            writeln!(err, "warning: could not write solve cache {}: {e}", cache.display())?;
        }
    }
    Ok(surface)
}

fn cmd_price(path: &Path, at: &str, no_cache: bool, out: &mut impl Write, err: &mut impl Write) -> Result<i32> {
    let config = load_valid(path)?;
    let (t, s, i, y) = parse_point(at, config.contract.maturity)?;
    let k = config.market.r.len();
    if i >= k {
        return Err(Error::Domain(format!("regime {} does not exist; the model has {k}", i + 1)));
    }
    config.contract().check_point(t, s, y)?;
    let surface = surface_for(path, &config, no_cache, err)?;
    let phi = surface.price_at(t, s, i, y)?;
    let psi = delta_integral(&surface, t, s, i, y)?;
    let c = &surface.convergence;
    writeln!(out, "phi = {phi:.10}")?;
    writeln!(out, "psi = {psi:.10}")?;
    writeln!(out, "iterations = {}", c.iterations)?;
    writeln!(out, "contraction J = {:.6}", c.contraction)?;
    writeln!(out, "residual = {:.3e}", c.final_residual)?;
    Ok(EXIT_OK)
}

/// Resolves a configured output directory against the configuration's folder.
fn output_dir(config_path: &Path, config: &ExperimentConfig) -> PathBuf {
    if config.output.dir.is_absolute() {
        config.output.dir.clone()
    } else {
        config_path.parent().unwrap_or(Path::new(".")).join(&config.output.dir)
    }
}

fn sibling(path: &Path, suffix: &str, extension: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "surface".into());
    path.with_file_name(format!("{stem}{suffix}.{extension}"))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// CSV rows re-emitted as JSON objects keyed by the header.
fn csv_to_jsonl(csv: &[u8]) -> Vec<u8> {
    let text = String::from_utf8_lossy(csv);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let mut out = Vec::new();
    for line in lines {
        let fields = line.split(',').zip(&header).map(|(v, k)| format!("\"{k}\":{v}"));
        out.extend_from_slice(format!("{{{}}}\n", fields.collect::<Vec<_>>().join(",")).as_bytes());
    }
    out
}

fn cmd_surface(
    path: &Path,
    out_path: Option<&Path>,
    with_delta: bool,
    no_cache: bool,
    out: &mut impl Write,
    err: &mut impl Write,
) -> Result<i32> {
    let config = load_valid(path)?;
    let surface = surface_for(path, &config, no_cache, err)?;
    let target = out_path.map(Path::to_path_buf).unwrap_or_else(|| output_dir(path, &config).join("surface.csv"));
    let mut csv = Vec::new();
    write_surface_csv(&surface, &mut csv)?;
    let mut delta = Vec::new();
    if with_delta {
        write_delta_csv(&surface, &mut delta)?;
    }
    let formats = &config.output.formats;
    if formats.contains(&OutputFormat::Csv) || out_path.is_some() {
        write_file(&target, &csv)?;
        writeln!(out, "wrote {}", target.display())?;
        if with_delta {
            let p = sibling(&target, "_delta", "csv");
            write_file(&p, &delta)?;
            writeln!(out, "wrote {}", p.display())?;
        }
    }
    if formats.contains(&OutputFormat::Jsonl) {
        let p = sibling(&target, "", "jsonl");
        write_file(&p, &csv_to_jsonl(&csv))?;
        writeln!(out, "wrote {}", p.display())?;
        if with_delta {
            let p = sibling(&target, "_delta", "jsonl");
            write_file(&p, &csv_to_jsonl(&delta))?;
            writeln!(out, "wrote {}", p.display())?;
        }
    }
    Ok(EXIT_OK)
}

fn cmd_check(
    path: &Path,
    seed: Option<u64>,
    no_cache: bool,
    out: &mut impl Write,
    err: &mut impl Write,
) -> Result<i32> {
    let mut config = load_valid(path)?;
    if let Some(seed) = seed {
        config.mc.seed = seed;
    }
    let surface = surface_for(path, &config, no_cache, err)?;
    let battery = Battery::from_config(&config);
    let mut io_error = None;
    let results = battery.run(Some(surface), |r| {
        if let Err(e) = writeln!(out, "{r}").and_then(|_| out.flush()) {
            io_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_error {
        return Err(e.into());
    }
    let passed = results.iter().filter(|r| r.passed).count();
    writeln!(out, "{passed}/{} criteria passed (seed {})", results.len(), config.mc.seed)?;
    if config.output.formats.contains(&OutputFormat::Jsonl) {
        let p = output_dir(path, &config).join("check.jsonl");
        let mut bytes = Vec::new();
        for r in &results {
            serde_json::to_writer(&mut bytes, r).map_err(|e| Error::Config(e.to_string()))?;
            bytes.push(b'\n');
        }
        write_file(&p, &bytes)?;
        writeln!(out, "wrote {}", p.display())?;
    }
    Ok(if passed == results.len() { EXIT_OK } else { EXIT_ACCEPTANCE })
}
