//! Command-line driver for stage-aware experiment analysis.
//!
//! Four subcommands cover the full loop: `simulate` writes a synthetic
//! roster with a ground-truth sidecar, `analyze` walks the enrollment
//! window day by day and emits stage-appropriate estimates, `validate`
//! runs the assignment and pre-experiment checks on their own, and
//! `evaluate` scores stopping policies against a power-analysis baseline
//! on suites of synthetic experiments.
//!
//! Exit codes: 0 on success, 1 when the invocation or its inputs are
//! invalid (unreadable config, malformed roster, bad thresholds, missing
//! output directory), 2 when the inputs were accepted but the analysis
//! itself failed partway.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use stagewise_core::harness::{
    self, AnalysisOptions, EvaluationSummary, StoppingPolicy, SuiteConfig,
};
use stagewise_core::inference;
use stagewise_core::roster::{self, PopulationRoster, RosterSchema};
use stagewise_core::stages::StageConfig;
use stagewise_core::survival::SurvivalKind;
use stagewise_core::synth::{self, SynthConfig};

// ── Command-line surface ────────────────────────────────────────────────

#[derive(Parser)]
#[command(
    name = "stagewise",
    version,
    about = "Stage-aware analysis of experiments that enroll units over time",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic experiment roster with known ground truth.
    Simulate(SimulateArgs),
    /// Walk the enrollment window day by day: stages, estimates, checks.
    Analyze(AnalyzeArgs),
    /// Run the assignment-ratio and A/A validity checks on their own.
    Validate(ValidateArgs),
    /// Score stopping policies on a suite of synthetic experiments.
    Evaluate(EvaluateArgs),
}

/// Stage-threshold overrides shared by `analyze` and `evaluate`. Values
/// given here win over the config file.
#[derive(Args)]
struct StageFlags {
    /// Participation-envelope threshold that ends the unstable stage.
    #[arg(long = "eta-o", value_name = "F")]
    eta_o: Option<f64>,
    /// Explicit representative threshold; overrides the value derived
    /// from --c-const and --rho-frac.
    #[arg(long = "eta-r", value_name = "F")]
    eta_r: Option<f64>,
    /// Acceptable bias as a fraction of the effect scale.
    #[arg(long = "rho-frac", value_name = "F")]
    rho_frac: Option<f64>,
    /// Effect-heterogeneity constant behind the derived threshold.
    #[arg(long = "c-const", value_name = "F")]
    c_const: Option<f64>,
}

/// Which participation model to fit.
#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Km,
    Cox,
}

impl From<ModelArg> for SurvivalKind {
    fn from(value: ModelArg) -> Self {
        match value {
            ModelArg::Km => SurvivalKind::KaplanMeier,
            ModelArg::Cox => SurvivalKind::Cox,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Generator configuration JSON; omitted fields keep their defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; overrides the seed in the config file.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Directory for roster.csv and ground_truth.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Roster CSV, as written by `simulate` or an external pipeline.
    #[arg(value_name = "ROSTER")]
    roster: PathBuf,
    /// Schema JSON — either a bare schema or a ground-truth sidecar.
    /// Defaults to ground_truth.json next to the roster.
    #[arg(long, value_name = "PATH")]
    schema: Option<PathBuf>,
    /// Analysis options JSON; the flags below override its fields.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(flatten)]
    stage: StageFlags,
    /// Participation model behind the envelope and the weights.
    #[arg(long, value_name = "MODEL")]
    model: Option<ModelArg>,
    /// Bootstrap replicates behind every confidence interval.
    #[arg(long, value_name = "B")]
    bootstrap: Option<usize>,
    /// Two-sided test level; intervals are reported at 1 - alpha.
    #[arg(long, value_name = "F")]
    alpha: Option<f64>,
    /// Master seed for the bootstrap streams.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Directory for stages.csv, estimates.csv, validity.json, summary.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    /// Roster CSV, as written by `simulate` or an external pipeline.
    #[arg(value_name = "ROSTER")]
    roster: PathBuf,
    /// Schema JSON — either a bare schema or a ground-truth sidecar.
    /// Defaults to ground_truth.json next to the roster.
    #[arg(long, value_name = "PATH")]
    schema: Option<PathBuf>,
    /// Test level for the per-day checks.
    #[arg(long, value_name = "F", default_value_t = 0.05)]
    alpha: f64,
    /// Directory for validity.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Evaluation spec JSON (suite, policies, alpha, seed); the flags
    /// below override its fields.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(flatten)]
    stage: StageFlags,
    /// Participation model the policies fit on each experiment.
    #[arg(long, value_name = "MODEL")]
    model: Option<ModelArg>,
    /// Bootstrap replicates for the overlap policy's interval test.
    #[arg(long, value_name = "B")]
    bootstrap: Option<usize>,
    /// Test level for every policy's decision.
    #[arg(long, value_name = "F")]
    alpha: Option<f64>,
    /// Master seed for experiment generation and tests.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Directory for evaluation.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

// ── Failure classification ──────────────────────────────────────────────

/// A failed run, split by exit code: bad inputs exit 1, failures during
/// the analysis itself exit 2.
enum Failure {
    Validation(anyhow::Error),
    Analysis(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Analysis(_) => 2,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Validation(e) | Failure::Analysis(e) => e,
        }
    }
}

type CmdResult<T> = Result<T, Failure>;

/// Tags a fallible step with the exit class its failure belongs to.
trait Phase<T> {
    fn validation(self) -> CmdResult<T>;
    fn analysis(self) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> Phase<T> for Result<T, E> {
    fn validation(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Validation(e.into()))
    }

    fn analysis(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Analysis(e.into()))
    }
}

fn main() -> ExitCode {
    // Usage errors are input-validation failures and must exit 1 (clap
    // would exit 2 on its own, which is reserved for analysis failures);
    // --help and --version exit 0.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = u8::from(err.use_stderr());
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => run_simulate(args),
        Command::Analyze(args) => run_analyze(args),
        Command::Validate(args) => run_validate(args),
        Command::Evaluate(args) => run_evaluate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.code())
        }
    }
}

// ── Shared plumbing ─────────────────────────────────────────────────────

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn prepare_out(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

/// Extracts a roster schema from JSON text that is either a bare
/// [`RosterSchema`] or a ground-truth sidecar carrying one under `schema`.
fn schema_from_json(text: &str) -> anyhow::Result<RosterSchema> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let node = match value.get("schema") {
        Some(inner) => inner.clone(),
        None => value,
    };
    Ok(serde_json::from_value(node)?)
}

/// Loads the schema for a roster: an explicit `--schema` path wins,
/// otherwise the `ground_truth.json` sidecar next to the roster is used.
fn resolve_schema(roster_path: &Path, explicit: Option<&Path>) -> anyhow::Result<RosterSchema> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let sidecar = roster_path
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join("ground_truth.json");
            if !sidecar.exists() {
                return Err(anyhow!(
                    "no schema: pass --schema <path> or keep the ground_truth.json sidecar next \
                     to {}",
                    roster_path.display()
                ));
            }
            sidecar
        }
    };
    let text =
        fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    schema_from_json(&text).with_context(|| format!("parsing schema from {}", path.display()))
}

fn load_roster_with_schema(
    roster_path: &Path,
    explicit_schema: Option<&Path>,
) -> anyhow::Result<PopulationRoster> {
    let schema = resolve_schema(roster_path, explicit_schema)?;
    roster::load_roster(roster_path, &schema)
        .with_context(|| format!("loading roster {}", roster_path.display()))
}

fn apply_stage_flags(stage: &mut StageConfig, flags: &StageFlags) {
    if let Some(v) = flags.eta_o {
        stage.eta_overlap = v;
    }
    if let Some(v) = flags.eta_r {
        stage.eta_representative = Some(v);
    }
    if let Some(v) = flags.rho_frac {
        stage.rho_fraction = v;
    }
    if let Some(v) = flags.c_const {
        stage.c_constant = v;
    }
}

// ── simulate ────────────────────────────────────────────────────────────

fn run_simulate(args: SimulateArgs) -> CmdResult<()> {
    let mut config: SynthConfig = match &args.config {
        Some(path) => read_json(path).validation()?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate().validation()?;
    prepare_out(&args.out).validation()?;

    let (roster, truth) = synth::generate(&config).analysis()?;
    roster::write_roster(&roster, args.out.join("roster.csv")).analysis()?;
    write_json(&args.out.join("ground_truth.json"), &truth).analysis()?;

    println!(
        "simulated {} units over {} days (true effect {}) -> {}",
        config.n_units,
        config.horizon,
        truth.true_tau,
        args.out.display()
    );
    Ok(())
}

// ── analyze ─────────────────────────────────────────────────────────────

fn run_analyze(args: AnalyzeArgs) -> CmdResult<()> {
    let roster = load_roster_with_schema(&args.roster, args.schema.as_deref()).validation()?;
    let mut options: AnalysisOptions = match &args.config {
        Some(path) => read_json(path).validation()?,
        None => AnalysisOptions::default(),
    };
    apply_stage_flags(&mut options.stage, &args.stage);
    if let Some(model) = args.model {
        options.survival = model.into();
    }
    if let Some(b) = args.bootstrap {
        options.bootstrap_replicates = b;
    }
    if let Some(alpha) = args.alpha {
        options.alpha = alpha;
    }
    if let Some(seed) = args.seed {
        options.seed = seed;
    }
    options.validate().validation()?;
    options.stage.validate().validation()?;
    prepare_out(&args.out).validation()?;

    let output = harness::analyze(&roster, &options).analysis()?;

    let stages_file = fs::File::create(args.out.join("stages.csv")).analysis()?;
    output.stages.export_csv(stages_file).analysis()?;
    let estimates_file = fs::File::create(args.out.join("estimates.csv")).analysis()?;
    harness::write_estimates_csv(&output.estimates, estimates_file).analysis()?;
    write_json(&args.out.join("validity.json"), &output.validity).analysis()?;
    write_json(&args.out.join("summary.json"), &output.summary()).analysis()?;

    let summary = output.summary();
    let crossing = |day: Option<u32>| day.map_or("never".to_string(), |d| format!("day {d}"));
    println!(
        "analyzed {} days: overlap {}, representative {}; {} estimate rows, {} gaps -> {}",
        summary.horizon,
        crossing(summary.stages.t_overlap),
        crossing(summary.stages.t_representative),
        output.estimates.len(),
        output.gaps.len(),
        args.out.display()
    );
    Ok(())
}

// ── validate ────────────────────────────────────────────────────────────

fn run_validate(args: ValidateArgs) -> CmdResult<()> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(anyhow!("alpha must lie in (0, 1), got {}", args.alpha)).validation();
    }
    let roster = load_roster_with_schema(&args.roster, args.schema.as_deref()).validation()?;
    prepare_out(&args.out).validation()?;

    let metrics = roster.pre_metric_names().to_vec();
    let alphas = if (args.alpha - 0.01).abs() < 1e-12 {
        vec![args.alpha]
    } else {
        vec![args.alpha, 0.01]
    };
    let report =
        inference::validity_report(&roster, &metrics, 1..=roster.horizon(), 1.0, &alphas)
            .analysis()?;
    write_json(&args.out.join("validity.json"), &report).analysis()?;

    let srm_alarms = report.srm.iter().filter(|c| c.p <= args.alpha).count();
    let aa_flagged = report
        .flags(inference::Correction::BenjaminiHochberg, args.alpha)
        .map(|flags| flags.iter().filter(|&&f| f).count())
        .unwrap_or(0);
    println!(
        "checked {} days: {} ratio alarms at alpha {}, {}/{} A/A cells flagged -> {}",
        report.srm.len(),
        srm_alarms,
        args.alpha,
        aa_flagged,
        report.aa.len(),
        args.out.display()
    );
    Ok(())
}

// ── evaluate ────────────────────────────────────────────────────────────

/// Everything `evaluate` needs, bundled so a single JSON file can describe
/// a full study; command-line flags override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvaluateSpec {
    suite: SuiteConfig,
    policies: Vec<StoppingPolicy>,
    alpha: f64,
    seed: u64,
}

impl Default for EvaluateSpec {
    fn default() -> Self {
        EvaluateSpec {
            suite: SuiteConfig::default(),
            policies: default_policies(),
            alpha: 0.05,
            seed: 0,
        }
    }
}

/// The three policies compared throughout: the power-analysis baseline and
/// the two stage-triggered rules at the published thresholds.
fn default_policies() -> Vec<StoppingPolicy> {
    vec![
        StoppingPolicy::PowerBaseline { sigma_sq: 0.06, delta: 0.08, per_arm: true },
        StoppingPolicy::StopAtOverlap { stage: StageConfig::default() },
        StoppingPolicy::StopAtRepresentative {
            stage: StageConfig { eta_representative: Some(0.85), ..StageConfig::default() },
        },
    ]
}

fn run_evaluate(args: EvaluateArgs) -> CmdResult<()> {
    let mut spec: EvaluateSpec = match &args.config {
        Some(path) => read_json(path).validation()?,
        None => EvaluateSpec::default(),
    };
    for policy in &mut spec.policies {
        if let StoppingPolicy::StopAtOverlap { stage }
        | StoppingPolicy::StopAtRepresentative { stage } = policy
        {
            apply_stage_flags(stage, &args.stage);
        }
    }
    if let Some(model) = args.model {
        spec.suite.survival = model.into();
    }
    if let Some(b) = args.bootstrap {
        spec.suite.bootstrap_replicates = b;
    }
    if let Some(alpha) = args.alpha {
        spec.alpha = alpha;
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    for policy in &spec.policies {
        policy.validate().validation()?;
    }
    spec.suite.validate().validation()?;
    if !(spec.alpha > 0.0 && spec.alpha < 1.0) {
        return Err(anyhow!("alpha must lie in (0, 1), got {}", spec.alpha)).validation();
    }
    prepare_out(&args.out).validation()?;

    let summary: EvaluationSummary =
        harness::evaluate(&spec.policies, &spec.suite, spec.alpha, spec.seed).analysis()?;
    write_json(&args.out.join("evaluation.json"), &summary).analysis()?;

    println!(
        "evaluated {} policies on {} experiments -> {}",
        summary.policies.len(),
        summary.n_experiments,
        args.out.display()
    );
    for outcome in &summary.policies {
        let rate = |r: Option<f64>| r.map_or("-".to_string(), |v| format!("{v:.3}"));
        let stop = outcome
            .median_stop_day
            .map_or("-".to_string(), |d| format!("{d}"));
        println!(
            "  {:<24} TPR {:<6} FPR {:<6} median stop {:<5} no-decision {}",
            outcome.policy.label(),
            rate(outcome.tpr),
            rate(outcome.fpr),
            stop,
            outcome.no_decision
        );
    }
    Ok(())
}

// ── Tests ───────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_surface_is_well_formed() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn stage_flags_override_only_what_they_name() {
        let mut stage = StageConfig::default();
        let flags = StageFlags { eta_o: Some(0.4), eta_r: None, rho_frac: None, c_const: Some(3.0) };
        apply_stage_flags(&mut stage, &flags);
        assert_eq!(stage.eta_overlap, 0.4);
        assert_eq!(stage.c_constant, 3.0);
        assert_eq!(stage.rho_fraction, StageConfig::default().rho_fraction);
        assert_eq!(stage.eta_representative, None, "no explicit threshold was set");

        let flags = StageFlags { eta_o: None, eta_r: Some(0.9), rho_frac: None, c_const: None };
        apply_stage_flags(&mut stage, &flags);
        assert_eq!(stage.eta_representative, Some(0.9));
    }

    #[test]
    fn schema_loads_from_both_bare_and_sidecar_json() {
        let schema = RosterSchema::new(vec![("x", 4u16)], 30);
        let bare = serde_json::to_string(&schema).unwrap();
        assert_eq!(schema_from_json(&bare).unwrap(), schema);

        let sidecar = format!(r#"{{"schema": {bare}, "true_tau": 0.0, "seed": 7}}"#);
        assert_eq!(schema_from_json(&sidecar).unwrap(), schema);

        assert!(schema_from_json("{\"horizon\": 3}").is_err(), "covariates are required");
    }

    #[test]
    fn evaluate_spec_fills_defaults_from_sparse_json() {
        let spec: EvaluateSpec = serde_json::from_str("{}").unwrap();
        assert_eq!(spec, EvaluateSpec::default());
        assert_eq!(spec.policies.len(), 3);
        assert_eq!(spec.policies[0].label(), "power_baseline");

        let spec: EvaluateSpec =
            serde_json::from_str(r#"{"alpha": 0.01, "suite": {"null_experiments": 5}}"#).unwrap();
        assert_eq!(spec.alpha, 0.01);
        assert_eq!(spec.suite.null_experiments, 5);
        assert_eq!(
            spec.suite.effective_experiments,
            SuiteConfig::default().effective_experiments
        );

        let bad: Result<EvaluateSpec, _> = serde_json::from_str(r#"{"alfa": 0.01}"#);
        assert!(bad.is_err(), "misspelled fields must be rejected");
    }

    #[test]
    fn model_argument_maps_to_survival_kinds() {
        assert_eq!(SurvivalKind::from(ModelArg::Km), SurvivalKind::KaplanMeier);
        assert_eq!(SurvivalKind::from(ModelArg::Cox), SurvivalKind::Cox);
    }
}
