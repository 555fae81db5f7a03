use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use maxhom::bloch::FiberContext;
use maxhom::cell::{solve_cell_problems, CorrectorSet, MatrixField};
use maxhom::config::RunConfig;
use maxhom::germ::{fibonacci_sphere, GermAnalysis};
use maxhom::harness::{sweep, tau_scaling_probe, Scenario, Verdict};
use maxhom::io::write_real_dump;
use maxhom::linalg::{Mat3, Mat4, Vec3, C64};
use maxhom::spectral::Band;
use maxhom::wave::TorusProblem;
use maxhom::{Error, ErrorKind};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "maxhom", version, about = "Periodic homogenization of the nonstationary Maxwell system")]
struct Cli {
    /// Worker threads (overrides the config; 0 = available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Turn acceptance thresholds into the exit status.
    #[arg(long)]
    check: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Cell problems, effective tensors and corrector fields.
    Effective {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "effective")]
        out: PathBuf,
    },
    /// Spectral germ, threshold operator N(θ) and the improvement conditions.
    Germ {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sphere_samples: Option<usize>,
        #[arg(long, default_value = "germ.json")]
        out: PathBuf,
    },
    /// Lowest Bloch branches along tθ and their series fit.
    Bloch {
        #[command(flatten)]
        common: Common,
        /// Direction, e.g. 1,0,0 (normalized).
        #[arg(long, value_parser = parse_vec3)]
        theta: Vec3,
        /// Largest t of the fit window (default t0/4).
        #[arg(long)]
        tmax: Option<f64>,
        #[arg(long, default_value = "branches.csv")]
        out: PathBuf,
    },
    /// Oscillating problem at ε = 1/n on the torus.
    Propagate {
        #[command(flatten)]
        common: Common,
        /// ε as 1/n or a decimal.
        #[arg(long, value_parser = parse_inverse_eps)]
        eps: usize,
        #[arg(long)]
        tau: f64,
        #[arg(long, default_value = "state.bin")]
        out: PathBuf,
    },
    /// ε-sweep with error norms and rate fits.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "sweep.json")]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Also run the growth probe in τ.
        #[arg(long)]
        probe: bool,
    },
    /// Prints the full configuration with all defaults.
    PrintConfig {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x}: {e}")))
        .collect::<Result<_, _>>()?;
    if v.len() != 3 {
        return Err("expected three comma-separated numbers".into());
    }
    let t = Vec3::new(v[0], v[1], v[2]);
    if t.norm() == 0.0 {
        return Err("direction must be nonzero".into());
    }
    Ok(t.normalize())
}

fn parse_inverse_eps(s: &str) -> Result<usize, String> {
    let inv = if let Some(d) = s.strip_prefix("1/") {
        d.trim().parse::<usize>().map_err(|e| e.to_string())?
    } else {
        let e: f64 = s.parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
        let n = (1.0 / e).round();
        if !(e > 0.0) || ((1.0 / e) - n).abs() > 1e-9 * n {
            return Err(format!("eps = {s} is not of the form 1/n"));
        }
        n as usize
    };
    if inv == 0 {
        return Err("n must be positive".into());
    }
    Ok(inv)
}

enum Failure {
    Schema(String),
    Solver(String),
    Io(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e.kind() {
            ErrorKind::Input => Failure::Schema(e.to_string()),
            ErrorKind::Solver => Failure::Solver(e.to_string()),
            ErrorKind::Io => Failure::Io(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

struct Loaded {
    config: RunConfig,
    hash: String,
}

fn load(path: &Path) -> Result<Loaded, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Schema(format!("{}: {e}", path.display())))?;
    let config: RunConfig = toml::from_str(&text).map_err(|e| Failure::Schema(format!("{}: {e}", path.display())))?;
    config.validate()?;
    let hash = config_hash(&config)?;
    Ok(Loaded { config, hash })
}

/// sha256 of the configuration with all defaults filled in.
fn config_hash(config: &RunConfig) -> Result<String, Failure> {
    let canonical = toml::to_string(config).map_err(|e| Failure::Io(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
}

fn provenance(hash: &str) -> Value {
    json!({ "config_hash": hash, "version": VERSION })
}

fn write_json<T: Serialize>(path: &Path, hash: &str, body: &T) -> Result<(), Failure> {
    let mut v = serde_json::to_value(body)?;
    if let Value::Object(m) = &mut v {
        m.insert("provenance".into(), provenance(hash));
    }
    create_parent(path)?;
    fs::write(path, serde_json::to_string_pretty(&v)? + "\n")?;
    Ok(())
}

fn create_parent(path: &Path) -> Result<(), Failure> {
    if let Some(d) = path.parent() {
        if !d.as_os_str().is_empty() {
            fs::create_dir_all(d)?;
        }
    }
    Ok(())
}

fn rows3(m: &Mat3) -> [[f64; 3]; 3] {
    [0, 1, 2].map(|i| [0, 1, 2].map(|j| m[(i, j)]))
}

fn rows4(m: &Mat4) -> [[f64; 4]; 4] {
    [0, 1, 2, 3].map(|i| [0, 1, 2, 3].map(|j| m[(i, j)]))
}

fn grid_values(band: &Band, comps: &[Vec<C64>]) -> Vec<Vec<f64>> {
    band.to_field(comps, true)
        .to_values()
        .into_iter()
        .map(|c| c.into_iter().map(|x| x.re).collect())
        .collect()
}

fn matrix_components(name: &str, m: &MatrixField) -> (Vec<String>, Vec<Vec<C64>>) {
    let mut names = Vec::new();
    for i in 0..m.rows {
        for j in 0..m.cols {
            names.push(format!("{name}[{}][{}]", i + 1, j + 1));
        }
    }
    (names, m.entries.clone())
}

fn effective(loaded: &Loaded, out: &Path, check: bool) -> Result<(), Failure> {
    let cs = loaded.config.coefficient_set()?;
    let cells = solve_cell_problems(&cs, &loaded.config.solver)?;
    fs::create_dir_all(out)?;
    let d = &cells.diagnostics;
    let body = json!({
        "eta0": rows3(&cells.eta0),
        "eta0_inverse": rows3(&cells.eta0_inv),
        "eta_bar": rows3(&cells.eta_bar),
        "eta_under": rows3(&cells.eta_under),
        "nu_under": cells.nu_under,
        "nu_bar": cells.nu_bar,
        "g0": rows4(&cells.g0),
        "constants": cs.constants,
        "grid": cs.grid,
        "diagnostics": d,
        "max_solution_coefficient": cells.max_solution_coefficient(),
        "max_solution_mean": cells.max_solution_mean(),
    });
    write_json(&out.join("effective.json"), &loaded.hash, &body)?;
    dump_correctors(&cs.lattice, &cells, out, &loaded.hash)?;
    println!("eta0 = {:?}", rows3(&cells.eta0));
    println!("nu_under = {:.12}", cells.nu_under);
    println!("Voigt-Reuss slack = {:?}", d.voigt_reuss_slack);
    println!("defining-formula defect = {:.3e}", d.defining_formula_defect);
    println!("wrote {}", out.display());
    if check {
        let mut bad = Vec::new();
        if d.voigt_reuss_slack.iter().any(|s| *s < -1e-8) {
            bad.push(format!("Voigt-Reuss slack {:?}", d.voigt_reuss_slack));
        }
        if d.defining_formula_mean_defect > 1e-7 {
            bad.push(format!("defining-formula mean defect {:e}", d.defining_formula_mean_defect));
        }
        if d.sigma_consistency > 1e-8 {
            bad.push(format!("Sigma consistency {:e}", d.sigma_consistency));
        }
        if !bad.is_empty() {
            return Err(Failure::Check(bad.join("; ")));
        }
    }
    Ok(())
}

fn dump_correctors(lattice: &maxhom::lattice::Lattice, cells: &CorrectorSet, out: &Path, hash: &str) -> Result<(), Failure> {
    let band = &cells.band;
    let meta = provenance(hash);
    let mut fields: Vec<(&str, Vec<String>, Vec<Vec<C64>>)> = vec![
        ("phi", (1..=3).map(|j| format!("Phi_{j}")).collect(), cells.phi.to_vec()),
        ("phi_tilde", (1..=3).map(|j| format!("PhiTilde_{j}")).collect(), cells.phi_tilde.to_vec()),
        ("rho", vec!["rho".into()], vec![cells.rho.clone()]),
        ("grad_rho", (1..=3).map(|j| format!("gradRho_{j}")).collect(), cells.grad_rho().to_vec()),
    ];
    let mut p_names = Vec::new();
    let mut p_vals = Vec::new();
    for (j, p) in cells.p.iter().enumerate() {
        for (c, v) in p.iter().enumerate() {
            p_names.push(format!("p_{}[{}]", j + 1, c + 1));
            p_vals.push(v.clone());
        }
    }
    fields.push(("p", p_names, p_vals));
    for (name, m) in [("sigma_circ", cells.sigma_circ()), ("sigma", cells.sigma()), ("psi", cells.psi())] {
        let (names, vals) = matrix_components(name, &m);
        fields.push((name, names, vals));
    }
    for (file, names, comps) in fields {
        let vals = grid_values(band, &comps);
        write_real_dump(&out.join(format!("{file}.bin")), band.grid, lattice, &names, &vals, meta.clone())?;
    }
    Ok(())
}

fn germ(loaded: &Loaded, samples: Option<usize>, out: &Path, check: bool) -> Result<(), Failure> {
    let cfg = &loaded.config;
    let cs = cfg.coefficient_set()?;
    let cells = solve_cell_problems(&cs, &cfg.solver)?;
    let g = GermAnalysis::new(&cells, cs.lattice.cell_volume);
    let samples = samples.unwrap_or(cfg.germ.sphere_samples);
    let report = g.report(&fibonacci_sphere(cfg.germ.directions), samples)?;
    write_json(out, &loaded.hash, &json!({ "sphere_samples": samples, "report": report }))?;
    let c = &report.conditions;
    println!("condition1 (f = 0): {} (|sym F| = {:.3e}, threshold {:.3e})", c.condition1, c.sym_f_norm, c.condition1_threshold);
    println!("branches gamma1/gamma2: {:?} (min gap {:.3e} at {:?})", c.condition2, c.min_gap, c.min_gap_direction.as_slice());
    if let Some(m) = &report.crossing_mu12 {
        println!("crossing: mu1,2 = {:?}", m.mu);
    }
    println!("wrote {}", out.display());
    if check {
        let worst = report.directions.iter().map(|d| d.n_route_defect).fold(0.0, f64::max);
        if worst > 1e-7 {
            return Err(Failure::Check(format!("N(theta) routes differ by {worst:e}")));
        }
    }
    Ok(())
}

fn bloch(loaded: &Loaded, theta: Vec3, tmax: Option<f64>, out: &Path) -> Result<(), Failure> {
    let cfg = &loaded.config;
    let cs = cfg.coefficient_set()?;
    let ctx = FiberContext::new(&cs, cfg.bloch.cutoff)?;
    let t_grid = match tmax {
        None => ctx.default_t_grid(cfg.bloch.t_points),
        Some(tm) => {
            let n = cfg.bloch.t_points.max(2);
            (0..n).map(|i| tm / 4.0 + 0.75 * tm * i as f64 / (n - 1) as f64).collect()
        }
    };
    let fit = ctx.branch_fit(&theta, &t_grid, &cfg.bloch)?;
    create_parent(out)?;
    let header = format!(
        "# config_hash={} version={} theta={:?} fit_window_max={:e} (heuristic t0/4 = {:e})\n",
        loaded.hash,
        VERSION,
        theta.as_slice(),
        t_grid.iter().fold(0.0f64, |a, &b| a.max(b)),
        ctx.t0 / 4.0
    );
    fs::write(out, header + &fit.to_csv())?;
    write_json(&out.with_extension("json"), &loaded.hash, &fit)?;
    for b in 0..fit.gamma.len() {
        println!(
            "branch {b} ({:?}): gamma = {:.10e}, mu = {:.4e}, fit residual = {:.2e}",
            fit.branch_label[b], fit.gamma[b], fit.mu[b], fit.fit_residual[b]
        );
    }
    if fit.ambiguous {
        println!("branch tracking ambiguous (min overlap {:.3})", fit.min_overlap);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn propagate(loaded: &Loaded, n: usize, tau: f64, out: &Path) -> Result<(), Failure> {
    let sc = Scenario::new(&loaded.config)?;
    let t: TorusProblem = sc.torus(n)?;
    let (phi, _f, psi) = sc.data(&t);
    let traj = t.propagate_eps(&phi, &psi, tau)?;
    let vals = grid_values(&t.band, &traj.v);
    let energy_csv = out.with_extension("energy.csv");
    let meta = json!({
        "provenance": provenance(&loaded.hash),
        "eps": t.eps,
        "tau": traj.tau,
        "dt": traj.dt,
        "steps": traj.steps,
        "energy_drift": traj.energy_drift,
        "divergence_drift": traj.divergence_drift,
        "energy_series": energy_csv.file_name().map(|s| s.to_string_lossy().into_owned()),
    });
    let names: Vec<String> = (1..=3).map(|j| format!("v_{j}")).collect();
    write_real_dump(out, t.band.grid, &t.band.lattice, &names, &vals, meta)?;
    let mut csv = format!("# config_hash={} version={}\nt,energy\n", loaded.hash, VERSION);
    for (s, e) in &traj.energy {
        csv.push_str(&format!("{s:.10e},{e:.17e}\n"));
    }
    fs::write(&energy_csv, csv)?;
    println!(
        "eps = 1/{n}, tau = {}, steps = {}, energy drift = {:.3e}, divergence drift = {:.3e}",
        traj.tau, traj.steps, traj.energy_drift, traj.divergence_drift
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn run_sweep(loaded: &Loaded, out: &Path, csv: Option<&Path>, probe: bool, check: bool) -> Result<(), Failure> {
    let sc = Scenario::new(&loaded.config)?;
    let report = sweep(&sc)?;
    let probe_report = if probe {
        Some(tau_scaling_probe(&sc, &loaded.config.sweep.probe_taus, loaded.config.sweep.probe_n)?)
    } else {
        None
    };
    write_json(
        out,
        &loaded.hash,
        &json!({ "config": &loaded.config, "sweep": &report, "tau_probe": probe_report }),
    )?;
    if let Some(p) = csv {
        create_parent(p)?;
        fs::write(p, format!("# config_hash={} version={}\n", loaded.hash, VERSION) + &report.to_csv())?;
    }
    for m in &report.metrics {
        let slope = m.fit.as_ref().map(|f| format!("{:.3}", f.slope)).unwrap_or_else(|| "-".into());
        println!("{:20} slope {:>7} {:?}{}", m.metric, slope, m.verdict, if m.checked { "" } else { " (not checked)" });
    }
    if let Some(p) = &probe_report {
        println!("tau growth exponent {:?} (bound {}, consistent {})", p.growth_exponent, p.exponent_bound, p.consistent);
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("verdict: {:?}", report.verdict);
    println!("wrote {}", out.display());
    if check {
        if report.verdict == Verdict::Fail {
            return Err(Failure::Check("slope criteria not met".into()));
        }
        if let Some(p) = &probe_report {
            if !p.consistent {
                return Err(Failure::Check("tau growth exceeds bound".into()));
            }
        }
    }
    Ok(())
}

fn print_config(path: Option<&Path>) -> Result<(), Failure> {
    let config = match path {
        Some(p) => load(p)?.config,
        None => RunConfig::default(),
    };
    let text = toml::to_string(&config).map_err(|e| Failure::Io(e.to_string()))?;
    print!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let with_config = |c: &Common| -> Result<Loaded, Failure> {
        let loaded = load(&c.config)?;
        let workers = cli.workers.unwrap_or(loaded.config.workers);
        if workers > 0 {
            // ignore the error if the pool was already configured
            let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
        }
        Ok(loaded)
    };
    match &cli.command {
        Command::Effective { common, out } => effective(&with_config(common)?, out, common.check),
        Command::Germ { common, sphere_samples, out } => germ(&with_config(common)?, *sphere_samples, out, common.check),
        Command::Bloch { common, theta, tmax, out } => bloch(&with_config(common)?, *theta, *tmax, out),
        Command::Propagate { common, eps, tau, out } => propagate(&with_config(common)?, *eps, *tau, out),
        Command::Sweep { common, out, csv, probe } => {
            run_sweep(&with_config(common)?, out, csv.as_deref(), *probe, common.check)
        }
        Command::PrintConfig { config } => print_config(config.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Schema(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(m)) => {
            eprintln!("solver failure: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Check(m)) => {
            eprintln!("check failed: {m}");
            ExitCode::from(4)
        }
        Err(Failure::Io(m)) => {
            eprintln!("i/o error: {m}");
            ExitCode::from(1)
        }
    }
}
