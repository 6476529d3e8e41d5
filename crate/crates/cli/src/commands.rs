use std::collections::BTreeMap;
use std::path::Path;

use kvbeam::acceptance::{run_all, CriterionReport};
use kvbeam::config::{parse_config_text, validate_config};
use kvbeam::format::csv_table;
use kvbeam::resolvent::{classify, scan};
use kvbeam::semianalytic::{count_roots, refine_root, Rect};
use kvbeam::spectrum::{eigen_dense, spectral_abscissa};
use kvbeam::timestepper::{first_mode_state, fit_decay, simulate, DecayReport};
use kvbeam::{BeamConfig, SystemMatrices};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::output::OutDir;
use crate::{Cli, Command, ResolventArgs, SimulateArgs, SpectrumArgs};

pub const ORACLE_CSV_HEADER: &str = "re_lambda,im_lambda,re_root,im_root,relative_discrepancy";

/// Number of modes compared against the characteristic determinant.
const ORACLE_MODES: usize = 10;

struct LoadedConfig {
    config: BeamConfig,
    path: Option<String>,
    digest: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Reads and validates the config; without a path the reference
/// configuration is used and its canonical text is hashed.
fn load_config(path: Option<&Path>) -> Result<LoadedConfig, CliError> {
    let Some(path) = path else {
        let config = BeamConfig::reference();
        let digest = sha256_hex(config.to_text().as_bytes());
        return Ok(LoadedConfig { config, path: None, digest });
    };
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| {
        CliError::Config(kvbeam::Error::Parse { line: 0, message: format!("not UTF-8: {e}") })
    })?;
    let config = validate_config(&parse_config_text(&text)?)?;
    Ok(LoadedConfig { config, path: Some(path.display().to_string()), digest: sha256_hex(&bytes) })
}

#[derive(Debug, Serialize)]
struct RunReport {
    command: &'static str,
    config_path: Option<String>,
    config_digest: String,
    seed: u64,
    threads: u16,
    /// Free degrees of freedom of the mesh.
    mesh_n: Option<usize>,
    n_per_segment: Option<usize>,
    dt: Option<f64>,
    t_end: Option<f64>,
    lambda_range: Option<[f64; 2]>,
    outputs: Vec<String>,
    measured: BTreeMap<String, f64>,
    checks: Vec<CriterionReport>,
    notes: Vec<String>,
}

impl RunReport {
    fn new(command: &'static str, cli: &Cli, loaded: &LoadedConfig) -> Self {
        RunReport {
            command,
            config_path: loaded.path.clone(),
            config_digest: loaded.digest.clone(),
            seed: cli.global.seed,
            threads: cli.global.threads,
            mesh_n: None,
            n_per_segment: None,
            dt: None,
            t_end: None,
            lambda_range: None,
            outputs: Vec::new(),
            measured: BTreeMap::new(),
            checks: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn measure(&mut self, key: &str, value: f64) {
        self.measured.insert(key.to_string(), value);
    }

    /// Writes `<command>_report.json` listing every file written before it.
    fn finish(mut self, out: &mut OutDir) -> Result<(), CliError> {
        self.outputs = out.written().to_vec();
        out.write_json(&format!("{}_report.json", self.command), &self)
    }
}

/// Elements per segment for a requested total element count.
fn per_segment(total: u32) -> usize {
    (total as usize).div_ceil(5)
}

fn thread_pool(threads: u16) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads as usize)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {threads} threads: {e}")))
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    // Config errors stop everything before any computation or output.
    let loaded = load_config(cli.global.config.as_deref())?;
    match &cli.command {
        Command::Validate => {
            println!("valid configuration, sha256 {}", loaded.digest);
            print!("{}", loaded.config.to_text());
            Ok(())
        }
        Command::Spectrum(args) => cmd_spectrum(cli, &loaded, args),
        Command::Resolvent(args) => cmd_resolvent(cli, &loaded, args),
        Command::Simulate(args) => cmd_simulate(cli, &loaded, args),
        Command::Verify => cmd_verify(cli, &loaded),
    }
}

fn cmd_spectrum(cli: &Cli, loaded: &LoadedConfig, args: &SpectrumArgs) -> Result<(), CliError> {
    let config = &loaded.config;
    let rect = match &args.rect {
        Some(r) => Some(Rect::new(r[0], r[1], r[2], r[3])?),
        None => None,
    };
    let nps = per_segment(args.n);
    let matrices = SystemMatrices::build(config, nps)?;
    let eig = eigen_dense(&matrices)?;
    let abscissa = spectral_abscissa(&eig)?;

    let mut out = OutDir::create(&cli.global.out)?;
    let mut report = RunReport::new("spectrum", cli, loaded);
    report.mesh_n = Some(matrices.n());
    report.n_per_segment = Some(nps);
    out.write("spectrum.csv", &eig.to_csv())?;
    let certified = eig.certified.iter().filter(|c| **c).count();
    report.measure("eigenvalues", eig.eigenvalues.len() as f64);
    report.measure("certified", certified as f64);
    report.measure("abscissa", abscissa);
    if config.is_conservative() {
        report.notes.push("conservative: no dissipation, the abscissa is 0 up to rounding".into());
    }

    if let Some(rect) = rect {
        let roots = count_roots(&rect, config)?;
        let fem = eig
            .eigenvalues
            .iter()
            .zip(&eig.certified)
            .filter(|(l, c)| **c && rect.contains(**l))
            .count();
        report.measure("roots_in_rect", roots as f64);
        report.measure("certified_eigenvalues_in_rect", fem as f64);
    }

    if args.oracle {
        let modes = eig.oscillatory_modes();
        if modes.len() < ORACLE_MODES {
            report.notes.push(format!("only {} certified oscillatory modes", modes.len()));
        }
        let mut rows = Vec::new();
        let mut worst = 0.0f64;
        for mode in modes.iter().take(ORACLE_MODES) {
            let root = refine_root(*mode, config)?.lambda;
            let discrepancy = (mode - root).norm() / root.norm();
            worst = worst.max(discrepancy);
            rows.push(vec![mode.re, mode.im, root.re, root.im, discrepancy]);
        }
        out.write("oracle.csv", &csv_table(ORACLE_CSV_HEADER, rows))?;
        report.measure("max_oracle_discrepancy", worst);
        println!("max relative discrepancy over the first {ORACLE_MODES} modes: {worst:.3e}");
    }
    println!(
        "{} eigenvalues, {certified} certified, spectral abscissa {abscissa:.10}",
        eig.eigenvalues.len()
    );
    for note in &report.notes {
        println!("note: {note}");
    }
    report.finish(&mut out)
}

fn cmd_resolvent(cli: &Cli, loaded: &LoadedConfig, args: &ResolventArgs) -> Result<(), CliError> {
    if !(args.lmin >= 1.0 && args.lmax.is_finite()) || args.lmax <= args.lmin {
        return Err(CliError::Usage(format!(
            "frequency range [{}, {}] must satisfy 1 <= lmin < lmax",
            args.lmin, args.lmax
        )));
    }
    let pool = thread_pool(cli.global.threads)?;
    let result = pool.install(|| {
        scan(&loaded.config, args.lmin, args.lmax, args.ppd as usize, args.n_policy, args.sampling)
    })?;

    let mut out = OutDir::create(&cli.global.out)?;
    let mut report = RunReport::new("resolvent", cli, loaded);
    report.lambda_range = Some([args.lmin, args.lmax]);
    out.write("scan.csv", &result.to_csv())?;
    let converged = result.converged.iter().filter(|c| **c).count();
    report.measure("points", result.lambdas.len() as f64);
    report.measure("converged_points", converged as f64);
    report.measure("gaps", result.gaps.len() as f64);
    report.notes.push(format!("mesh policy {}, sampling {:?}", result.mesh_tag, result.sampling));
    println!("{} points, {converged} converged, {} near-singular gaps", result.lambdas.len(), result.gaps.len());

    if args.lmax / args.lmin < 100.0 {
        report.notes.push("classification needs at least two decades; skipped".into());
        return report.finish(&mut out);
    }
    match classify(&result) {
        Ok(c) => {
            out.write_json("classification.json", &c)?;
            report.measure("bound_constant", c.bound_constant);
            report.measure("fitted_slope", c.fitted_slope);
            println!(
                "gevrey4_consistent {}, gevrey2_excluded {}, analytic_excluded {}, C = {:.6}, slope {:.4}",
                c.gevrey4_consistent, c.gevrey2_excluded, c.analytic_excluded, c.bound_constant, c.fitted_slope
            );
            report.finish(&mut out)
        }
        Err(e) => {
            report.notes.push(format!("classification failed: {e}"));
            report.finish(&mut out)?;
            Err(CliError::Numerical(e))
        }
    }
}

fn cmd_simulate(cli: &Cli, loaded: &LoadedConfig, args: &SimulateArgs) -> Result<(), CliError> {
    let (t_end, dt) = (args.t_end, args.dt);
    if !(t_end > 0.0 && t_end.is_finite() && dt > 0.0 && dt <= t_end) {
        return Err(CliError::Usage(format!("need T > 0 and 0 < dt <= T, got T = {t_end}, dt = {dt}")));
    }
    let config = &loaded.config;
    let nps = per_segment(args.n);
    let matrices = SystemMatrices::build(config, nps)?;
    let u0 = first_mode_state(&matrices, cli.global.seed)?;
    let trajectory = simulate(&matrices, &u0, t_end, dt)?;

    let mut out = OutDir::create(&cli.global.out)?;
    let mut report = RunReport::new("simulate", cli, loaded);
    report.mesh_n = Some(matrices.n());
    report.n_per_segment = Some(nps);
    report.dt = Some(dt);
    report.t_end = Some(t_end);
    out.write("trajectory.csv", &trajectory.to_csv())?;
    let monotone = trajectory.is_monotone();
    report.measure("steps", (trajectory.times.len() - 1) as f64);
    report.measure("max_balance_residual", trajectory.max_balance());
    report.measure("monotone", monotone as u8 as f64);
    println!(
        "{} steps, energy monotone {monotone}, max balance residual {:.6e}",
        trajectory.times.len() - 1,
        trajectory.max_balance()
    );

    if config.is_conservative() {
        let e0 = trajectory.energies[0];
        let drift = trajectory.energies.iter().map(|e| (e - e0).abs() / e0).fold(0.0, f64::max);
        report.measure("relative_energy_drift", drift);
        report.notes.push("conservative: no decay to fit".into());
        println!("conservative configuration, relative energy drift {drift:.3e}");
        return report.finish(&mut out);
    }
    let abscissa = spectral_abscissa(&eigen_dense(&matrices)?)?;
    let fit = match fit_decay(&trajectory.times, &trajectory.energies) {
        Ok(fit) => fit,
        Err(e) => {
            report.notes.push(format!("decay fit failed: {e}"));
            report.finish(&mut out)?;
            return Err(e.into());
        }
    };
    let decay = DecayReport::new(&fit, abscissa);
    out.write_json("decay.json", &decay)?;
    report.measure("rate", decay.rate);
    report.measure("abscissa", abscissa);
    report.measure("ratio", decay.ratio);
    println!(
        "decay rate {:.6} vs 2|abscissa| {:.6}, ratio {:.4}",
        decay.rate,
        2.0 * abscissa.abs(),
        decay.ratio
    );
    report.finish(&mut out)
}

fn cmd_verify(cli: &Cli, loaded: &LoadedConfig) -> Result<(), CliError> {
    let mut out = OutDir::create(&cli.global.out)?;
    let pool = thread_pool(cli.global.threads)?;
    let checks = pool.install(|| run_all(&loaded.config));
    for check in &checks {
        println!("{}", check.line());
    }
    let failed: Vec<u8> = checks.iter().filter(|c| c.outcome == kvbeam::acceptance::Outcome::Fail).map(|c| c.id).collect();
    let mut report = RunReport::new("verify", cli, loaded);
    if loaded.config.is_conservative() {
        report.notes.push("conservative: damped-only criteria skipped".into());
    }
    report.checks = checks;
    report.finish(&mut out)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Acceptance(failed))
    }
}
