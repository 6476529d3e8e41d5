mod commands;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kvbeam::resolvent::{MeshPolicy, Sampling};

const SPECTRUM_HELP: &str = "\
Outputs (in --out):
  spectrum.csv   re_lambda,im_lambda,residual,certified
                 re_lambda, im_lambda  eigenvalue of the discrete generator
                 residual              relative pencil residual of the eigenpair
                 certified             1 if residual <= 1e-8, else 0
  oracle.csv     re_lambda,im_lambda,re_root,im_root,relative_discrepancy   (with --oracle)
                 re_lambda, im_lambda  FEM eigenvalue (first 10 oscillatory modes)
                 re_root, im_root      root of the characteristic determinant refined from it
                 relative_discrepancy  |lambda - root| / |root|
  spectrum_report.json";

const RESOLVENT_HELP: &str = "\
Outputs (in --out):
  scan.csv       lambda,norm,scaled_norm,mesh_n,converged
                 lambda       grid frequency (the resolvent is taken at i*lambda)
                 norm         ||(i lambda - A_h)^-1|| in the energy norm
                 scaled_norm  lambda^(1/4) * norm
                 mesh_n       free degrees of freedom of the mesh used
                 converged    1 if the norm changes by <= 5 % on the doubled mesh, else 0
  classification.json   gevrey4_consistent, analytic_excluded, gevrey2_excluded,
                        bound_constant, fitted_slope, growth_half, growth_one
  resolvent_report.json";

const SIMULATE_HELP: &str = "\
Outputs (in --out):
  trajectory.csv  t,energy,balance_residual
                  t                 time
                  energy            E = (int alpha |u''|^2 + v^T M v) / 2
                  balance_residual  (E_k - E_(k-1)) / dt + (v^T D v (t_(k-1)) + v^T D v (t_k)) / 2;
                                    0 in the first row
  decay.json      rate, stderr, abscissa_ref, ratio   (damped configurations)
  simulate_report.json";

const VERIFY_HELP: &str = "\
Runs the nine acceptance criteria on the configuration and prints one line
per criterion. Criteria that need dissipation are reported as skipped for an
undamped configuration. Exit code 1 if any criterion fails.
Outputs (in --out): verify_report.json";

const EXIT_HELP: &str = "\
Exit codes: 0 success, 1 acceptance failure, 2 config or usage error,
3 I/O error, 4 numerical non-convergence.";

#[derive(Debug, Parser)]
#[command(
    name = "kvbeam",
    version,
    about = "Damped Euler-Bernoulli transmission beam: spectrum, resolvent, time stepping and acceptance checks",
    after_help = EXIT_HELP
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Config file (`key = value` lines); the reference configuration if omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,

    /// Worker threads for parallel parts (resolvent scan).
    #[arg(long, global = true, value_name = "N", default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: u16,

    /// Seed for randomized initial data.
    #[arg(long, global = true, value_name = "N", default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a config file and print its diagnostics.
    Validate,

    /// FEM spectrum of the discrete generator.
    #[command(after_help = SPECTRUM_HELP)]
    Spectrum(SpectrumArgs),

    /// Resolvent norm scan along the imaginary axis.
    #[command(after_help = RESOLVENT_HELP)]
    Resolvent(ResolventArgs),

    /// Implicit midpoint time integration with energy bookkeeping.
    #[command(after_help = SIMULATE_HELP)]
    Simulate(SimulateArgs),

    /// Run the acceptance suite.
    #[command(after_help = VERIFY_HELP)]
    Verify,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    /// Number of elements along the beam, split evenly over the five segments (rounded up).
    #[arg(long, default_value_t = 130, value_parser = clap::value_parser!(u32).range(5..))]
    pub n: u32,

    /// Count characteristic roots in RE_MIN,RE_MAX,IM_MIN,IM_MAX (argument principle).
    #[arg(long, value_name = "RE_MIN,RE_MAX,IM_MIN,IM_MAX", value_parser = parse_rect)]
    pub rect: Option<[f64; 4]>,

    /// Refine the first 10 oscillatory modes as roots of the characteristic determinant.
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Args)]
pub struct ResolventArgs {
    /// Lower end of the frequency range (>= 1).
    #[arg(long, default_value_t = 1e2)]
    pub lmin: f64,

    /// Upper end of the frequency range.
    #[arg(long, default_value_t = 1e6)]
    pub lmax: f64,

    /// Grid points per decade.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..))]
    pub ppd: u32,

    /// `wavelength:E` (E elements per shortest bending wavelength, at least 8
    /// per segment) or `fixed:N` (N elements per segment).
    #[arg(long = "n-policy", default_value = "wavelength:8", value_parser = parse_policy)]
    pub n_policy: MeshPolicy,

    /// `band`: maximum of the norm over each grid cell; `point`: norm at the grid point.
    #[arg(long, default_value = "band", value_parser = parse_sampling)]
    pub sampling: Sampling,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Final time.
    #[arg(long = "T", default_value_t = 50.0)]
    pub t_end: f64,

    /// Time step.
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,

    /// Number of elements along the beam, split evenly over the five segments (rounded up).
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u32).range(5..))]
    pub n: u32,
}

fn parse_policy(s: &str) -> Result<MeshPolicy, String> {
    s.parse().map_err(|e: kvbeam::Error| e.to_string())
}

fn parse_rect(s: &str) -> Result<[f64; 4], String> {
    let values: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("'{v}': {e}")))
        .collect::<Result<_, _>>()?;
    values.try_into().map_err(|v: Vec<f64>| format!("expected 4 comma-separated numbers, got {}", v.len()))
}

fn parse_sampling(s: &str) -> Result<Sampling, String> {
    s.parse().map_err(|e: kvbeam::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kvbeam: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn help_documents_every_csv_column() {
        use kvbeam::resolvent::SCAN_CSV_HEADER;
        use kvbeam::spectrum::SPECTRUM_CSV_HEADER;
        use kvbeam::timestepper::TRAJECTORY_CSV_HEADER;
        for (help, header) in [
            (SPECTRUM_HELP, SPECTRUM_CSV_HEADER),
            (SPECTRUM_HELP, commands::ORACLE_CSV_HEADER),
            (RESOLVENT_HELP, SCAN_CSV_HEADER),
            (SIMULATE_HELP, TRAJECTORY_CSV_HEADER),
        ] {
            assert!(help.contains(header), "{header}");
            for column in header.split(',') {
                assert!(help.contains(&format!("  {column}")) || help.contains(&format!(", {column}")), "{column}");
            }
        }
    }

    #[test]
    fn rejects_low_lmin_only_at_run_time() {
        let cli = Cli::try_parse_from(["kvbeam", "resolvent", "--lmin", "0.1"]).unwrap();
        let err = commands::run(&cli).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
