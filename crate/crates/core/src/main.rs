use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dicke_feedback::config::{RunSettings, SweepSpec};
use dicke_feedback::engine::{run_batch, run_trajectory, SeedPlan};
use dicke_feedback::output::{self, RunManifest, SweepPoint};
use dicke_feedback::verify::{run_checks, Fault};
use dicke_feedback::Error;

#[derive(Parser)]
#[command(
    name = "dicke-feedback",
    version,
    about = "Feedback-assisted entanglement of two atomic ensembles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trajectory and write its time series as CSV.
    Simulate(RunArgs),
    /// Run a seeded batch and print the summary as JSON.
    Batch(RunArgs),
    /// Run one batch per grid point, e.g. `eta=1.0,0.9;feedback=none,adiabatic`.
    Sweep {
        spec: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Check the algebraic and protocol invariants.
    Verify {
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// `key = value` file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    n_atoms: Option<String>,
    /// Phase shift per photon (radians).
    #[arg(long, allow_hyphen_values = true)]
    chi: Option<String>,
    /// Frame rotation per photon as a fraction of pi.
    #[arg(long, allow_hyphen_values = true)]
    omega_div_pi: Option<String>,
    /// Detector efficiency in [0, 1].
    #[arg(long, allow_hyphen_values = true)]
    eta: Option<String>,
    #[arg(long)]
    photons: Option<String>,
    /// none | simple-exact | simple-approx | adiabatic
    #[arg(long)]
    feedback: Option<String>,
    /// Angle formula under the adiabatic cut: approx | exact
    #[arg(long)]
    adiabatic_base: Option<String>,
    #[arg(long)]
    cut_scale: Option<String>,
    #[arg(long)]
    activation_step: Option<String>,
    /// Frame angle in the closed-form feedback: incremental | accumulated
    #[arg(long)]
    frame_angle: Option<String>,
    /// Relative uniform noise on each applied feedback angle.
    #[arg(long)]
    lambda_noise: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    runs: Option<String>,
    /// Comma-separated overlap thresholds.
    #[arg(long)]
    thresholds: Option<String>,
    /// Record every this many photons.
    #[arg(long)]
    stride: Option<String>,
    /// Output file (simulate, batch) or directory (sweep).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn settings(&self) -> Result<RunSettings, Error> {
        let mut settings = match &self.config {
            Some(path) => RunSettings::load(path)?,
            None => RunSettings::default(),
        };
        let flags = [
            ("n-atoms", &self.n_atoms),
            ("chi", &self.chi),
            ("omega-div-pi", &self.omega_div_pi),
            ("eta", &self.eta),
            ("photons", &self.photons),
            ("feedback", &self.feedback),
            ("adiabatic-base", &self.adiabatic_base),
            ("cut-scale", &self.cut_scale),
            ("activation-step", &self.activation_step),
            ("frame-angle", &self.frame_angle),
            ("lambda-noise", &self.lambda_noise),
            ("seed", &self.seed),
            ("runs", &self.runs),
            ("thresholds", &self.thresholds),
            ("stride", &self.stride),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                settings.set(key, v)?;
            }
        }
        for w in settings.validate()? {
            eprintln!("warning: {w}");
        }
        Ok(settings)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::StateHealth { .. }
        | Error::NotNormalized { .. }
        | Error::NotHermitian { .. }
        | Error::ZeroProbabilityBranch { .. }
        | Error::DegenerateDenominator { .. } => 2,
        _ => 1,
    }
}

fn write_with_manifest(
    path: &Path,
    contents: &str,
    command: &str,
    settings: &RunSettings,
) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    RunManifest::new(command, settings, vec![path.display().to_string()])
        .write(&output::manifest_path(path))
}

fn simulate(args: &RunArgs) -> Result<(), Error> {
    let settings = args.settings()?;
    let config = &settings.protocol;
    let seed = SeedPlan::new(config.seed).trajectory_seed(0);
    let result = run_trajectory(config, seed)?;
    if result.final_metrics.entropy.is_none() {
        eprintln!(
            "warning: entanglement entropy is undefined for the mixed state; column left empty"
        );
    }
    let path = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("trajectory.csv"));
    write_with_manifest(&path, &output::series_csv(&result), "simulate", &settings)?;
    print!("{}", output::to_json(&result.final_metrics)?);
    Ok(())
}

fn batch(args: &RunArgs) -> Result<(), Error> {
    let settings = args.settings()?;
    let summary = run_batch(
        &settings.protocol,
        settings.runs,
        SeedPlan::new(settings.protocol.seed),
        &settings.thresholds,
    )?;
    let text = output::batch_json(&summary)?;
    if let Some(path) = &args.out {
        write_with_manifest(path, &text, "batch", &settings)?;
    }
    print!("{text}");
    Ok(())
}

fn sweep(spec: &str, args: &RunArgs) -> Result<(), Error> {
    let template = args.settings()?;
    let grid = SweepSpec::parse(spec)?;
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from("sweep"));
    std::fs::create_dir_all(&dir)?;
    let plan = SeedPlan::new(template.protocol.seed);
    let mut points = Vec::new();
    let mut outputs = Vec::new();
    for (index, assignment) in grid.points().into_iter().enumerate() {
        let settings = SweepSpec::apply(&template, &assignment)?;
        for w in settings.validate()? {
            eprintln!("warning: point {index}: {w}");
        }
        let summary = run_batch(
            &settings.protocol,
            settings.runs,
            plan.grid_point(index),
            &settings.thresholds,
        )?;
        let file = dir.join(format!("point_{index:03}.json"));
        std::fs::write(&file, output::batch_json(&summary)?)?;
        outputs.push(file.display().to_string());
        let label: Vec<String> = assignment.iter().map(|(k, v)| format!("{k}={v}")).collect();
        points.push(SweepPoint {
            index,
            assignment: label.join(";"),
            summary,
        });
    }
    let csv_path = dir.join("sweep.csv");
    let csv = output::sweep_csv(&points);
    std::fs::write(&csv_path, &csv)?;
    outputs.push(csv_path.display().to_string());
    let mut manifest = RunManifest::new("sweep", &template, outputs);
    manifest.command = format!("sweep {spec}");
    manifest.write(&output::manifest_path(&csv_path))?;
    print!("{csv}");
    Ok(())
}

fn verify(inject_fault: Option<&str>) -> Result<bool, Error> {
    let fault = match inject_fault {
        None => None,
        Some("chi-sign") => Some(Fault::ChiSign),
        Some(other) => {
            return Err(Error::config(
                "inject-fault",
                format!("unknown fault `{other}`"),
            ))
        }
    };
    let checks = run_checks(fault)?;
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    println!("{} checks, {} failed", checks.len(), failed);
    Ok(failed == 0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    let outcome = match &cli.command {
        Command::Simulate(args) => simulate(args).map(|_| true),
        Command::Batch(args) => batch(args).map(|_| true),
        Command::Sweep { spec, run } => sweep(spec, run).map(|_| true),
        Command::Verify { inject_fault } => verify(inject_fault.as_deref()),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            let code = exit_code(&e);
            let kind = if code == 2 { "health" } else { "config" };
            eprintln!("error[{kind}]: {e}");
            ExitCode::from(code)
        }
    }
}
