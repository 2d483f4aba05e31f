mod config;

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use suspension::fields::read_samples;
use suspension::geometry::{generate_lattice, generate_rsa, omega_delta_mask, validate_assumptions, DEFAULT_C_SEP, DEFAULT_EPS_PHI_LOG};
use suspension::selftest::{run_suite, SUITES};
use suspension::study::{beta_sweep, run_entry, ExperimentReport, ReportRow};
use suspension::ParticleConfig;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "suspension", version, about = "Effective-viscosity laboratory for dilute sphere suspensions")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Lattice,
    Rsa,
}

#[derive(Subcommand)]
enum Command {
    /// Write a particle configuration, or a default run configuration.
    Gen {
        #[arg(long, value_enum, default_value = "lattice")]
        generator: Kind,
        /// Particles per axis (lattice) or in total (rsa).
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 0.02)]
        phi: f64,
        #[arg(long, default_value_t = 1.0)]
        box_scale: f64,
        #[arg(long, default_value_t = 0.1)]
        jitter: f64,
        #[arg(long, default_value_t = 2.0)]
        gap: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Emit a run configuration with every default spelled out instead.
        #[arg(long)]
        run_config: bool,
        /// Output file (stdout if omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Check a particle configuration against the geometric assumptions.
    Validate {
        config: PathBuf,
        #[arg(long, default_value_t = DEFAULT_C_SEP)]
        c_sep: f64,
        #[arg(long, default_value_t = DEFAULT_EPS_PHI_LOG)]
        eps_phi_log: f64,
    },
    /// Run an invariant suite: kernels, fields, reflections, homogenize or all.
    Selftest { suite: String },
    /// Run the convergence study described by a run configuration.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Compare two sampled fields ("x,y,z,ux,uy,uz" CSV at the same points).
    Norms {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Restrict to Ω_δ of this particle configuration.
        #[arg(long)]
        region: Option<PathBuf>,
        #[arg(long)]
        delta: Option<f64>,
    },
}

/// Failure classes mapped to exit codes.
enum Failure {
    /// Assumption or test failure: exit 1.
    Check(String),
    /// Bad arguments, unreadable or malformed input: exit 2.
    Usage(String),
}

impl From<suspension::Error> for Failure {
    fn from(e: suspension::Error) -> Failure {
        match e {
            suspension::Error::Io(_) | suspension::Error::Parse { .. } | suspension::Error::InvalidInput(_) => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Check(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Failure {
        Failure::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Gen { generator, n, phi, box_scale, jitter, gap, seed, run_config, output } => {
            gen(generator, n, phi, box_scale, jitter, gap, seed, run_config, output.as_deref())
        }
        Command::Validate { config, c_sep, eps_phi_log } => validate(&config, c_sep, eps_phi_log),
        Command::Selftest { suite } => selftest(&suite),
        Command::Run { config, output } => run(config.as_deref(), output.as_deref()),
        Command::Norms { a, b, region, delta } => norms(&a, &b, region.as_deref(), delta),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(m)) => {
            eprintln!("{m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            eprintln!("usage: suspension [--threads N] <gen|validate|selftest|run|norms> ...");
            ExitCode::from(2)
        }
    }
}

fn write_out(output: Option<&Path>, text: &[u8]) -> Result<(), Failure> {
    match output {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text)?,
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn gen(
    kind: Kind,
    n: usize,
    phi: f64,
    box_scale: f64,
    jitter: f64,
    gap: f64,
    seed: u64,
    run_config: bool,
    output: Option<&Path>,
) -> Result<(), Failure> {
    if run_config {
        return write_out(output, RunConfig::default().render().as_bytes());
    }
    let cfg = match kind {
        Kind::Lattice => generate_lattice(n, phi, box_scale, jitter, seed),
        Kind::Rsa => generate_rsa(n, phi, box_scale, gap, seed),
    }
    .map_err(|e| Failure::Usage(e.to_string()))?;
    let mut buf = Vec::new();
    cfg.write(&mut buf)?;
    write_out(output, &buf)
}

fn validate(path: &Path, c_sep: f64, eps: f64) -> Result<(), Failure> {
    let cfg = ParticleConfig::load(path)?;
    let report = validate_assumptions(&cfg, c_sep, eps);
    println!("{report}");
    if report.all_pass() {
        Ok(())
    } else {
        Err(Failure::Check("assumption check failed".into()))
    }
}

fn selftest(suite: &str) -> Result<(), Failure> {
    let names: Vec<&str> = if suite == "all" { SUITES.to_vec() } else { vec![suite] };
    let mut ok = true;
    for name in names {
        let report = run_suite(name)?;
        println!("{report}");
        ok &= report.all_passed();
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Check("self-test failed".into()))
    }
}

fn run(config: Option<&Path>, output: Option<&Path>) -> Result<(), Failure> {
    let start = Instant::now();
    let text = match config {
        Some(p) => fs::read_to_string(p)?,
        None => String::new(),
    };
    let cfg = RunConfig::parse(&text).map_err(|e| Failure::Usage(e.to_string()))?;
    let dir = output
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| Failure::Usage("no output directory: pass -o DIR or set [output] dir".into()))?;
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.echo"), &text)?;
    fs::write(dir.join("config.resolved"), cfg.render())?;

    let schedule = &cfg.schedule;
    let mut report = ExperimentReport::default();
    let mut last = None;
    for i in 0..schedule.entries.len() {
        let e = &schedule.entries[i];
        eprintln!("entry {}/{}: N = {}, phi = {}", i + 1, schedule.entries.len(), e.n(), e.phi);
        match run_entry(schedule, i, &cfg.options) {
            Ok(run) => {
                report.rows.push(run.row.clone());
                if cfg.beta_sweep && i + 1 == schedule.entries.len() {
                    last = Some(run);
                }
            }
            Err(err) => {
                eprintln!("  failed: {err}");
                report.rows.push(ReportRow::failed(e, err.to_string()));
                last = None;
            }
        }
    }
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    fs::write(dir.join("report.csv"), &csv)?;
    if cfg.plots {
        report.write_plots(&dir)?;
    }
    let mut sweep_line = String::new();
    if cfg.beta_sweep {
        let run = last.ok_or_else(|| Failure::Check("final entry failed; no beta sweep".into()))?;
        let sweep = beta_sweep(&run, cfg.beta_range.0, cfg.beta_range.1, 9, 1e-3)?;
        let mut s = String::from("beta,objective\n");
        for (b, j) in &sweep.evaluations {
            s.push_str(&format!("{b:e},{j:e}\n"));
        }
        fs::write(dir.join("beta_sweep.csv"), s)?;
        sweep_line = format!("beta_opt = {}\nbeta_objective = {:e}\n", sweep.beta, sweep.objective);
    }

    let mut manifest = format!(
        "program = suspension {}\nroot_seed = {}\nthreads = {}\n",
        env!("CARGO_PKG_VERSION"),
        schedule.seed,
        rayon::current_num_threads()
    );
    for i in 0..schedule.entries.len() {
        manifest.push_str(&format!("entry_seed[{i}] = {}\n", schedule.entry_seed(i)));
    }
    for (i, r) in report.rows.iter().enumerate() {
        if let Some(f) = &r.failure {
            manifest.push_str(&format!("failure[{i}] = {f}\n"));
        }
    }
    manifest.push_str(&sweep_line);
    manifest.push_str(&format!("wall_seconds = {:.3}\n", start.elapsed().as_secs_f64()));
    fs::write(dir.join("manifest.txt"), manifest)?;
    print!("{}", String::from_utf8_lossy(&csv));
    if report.rows.iter().any(|r| r.failure.is_some()) {
        Err(Failure::Check("some schedule entries failed; see manifest.txt".into()))
    } else {
        Ok(())
    }
}

fn norms(a: &Path, b: &Path, region: Option<&Path>, delta: Option<f64>) -> Result<(), Failure> {
    let read = |p: &Path| -> Result<_, Failure> {
        let (pts, vals) = read_samples(BufReader::new(fs::File::open(p)?))?;
        let vals = vals.ok_or_else(|| Failure::Usage(format!("{} has no value columns", p.display())))?;
        Ok((pts, vals))
    };
    let (pa, va) = read(a)?;
    let (pb, vb) = read(b)?;
    if pa.len() != pb.len() || pa.iter().zip(&pb).any(|(x, y)| (x - y).norm() > 1e-12 * (1.0 + x.norm())) {
        return Err(Failure::Usage("the two files must sample the same points".into()));
    }
    let mask = match region {
        Some(p) => {
            let cfg = ParticleConfig::load(p)?;
            let delta = delta.unwrap_or_else(|| suspension::geometry::default_delta(cfg.n()));
            Some(omega_delta_mask(&cfg, delta)?)
        }
        None => None,
    };
    let diffs: Vec<f64> = pa
        .iter()
        .zip(va.iter().zip(&vb))
        .filter(|(x, _)| mask.as_ref().is_none_or(|m| m.contains(x)))
        .map(|(_, (u, w))| (u - w).norm())
        .collect();
    if diffs.is_empty() {
        return Err(Failure::Check("no sample points in the region".into()));
    }
    let sup = diffs.iter().cloned().fold(0.0, f64::max);
    let rms = (diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt();
    println!("points = {}\nsup = {sup:e}\nrms = {rms:e}", diffs.len());
    Ok(())
}
