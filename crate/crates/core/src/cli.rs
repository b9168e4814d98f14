//! Command-line front end.
//!
//! Exit codes: 0 success, 1 a check failed or a signal was inadmissible,
//! 2 malformed or invalid input, 3 zero-mass context (unless
//! `--skip-zero-mass`), 4 inputs do not cover the requested work.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::coherence::{commutativity_residual, EventValueFunction};
use crate::countable::{
    log_normalizer_truncated, tilt_truncated, CertificateStatus, TruncationCertificate,
    TruncationConfig,
};
use crate::dist::{Assignment, DistVector, JointTable};
use crate::error::Error;
use crate::fixtures;
use crate::identification::{
    apply_gauge, calibrate_rewards, check_admissibility, construct_posterior, context_prior,
    context_problem, direction_contexts, gauge_equivalent, identify_interaction, ContextValues,
    Direction, GaugeShift, Groups, InteractionTable, Orientation, RewardTable,
};
use crate::io::{self, InteractionFile, JointFile, LoadedRewards, RewardFile};
use crate::numeric::total_variation;
use crate::report::{to_report_json, CheckReport, ExtReal, SkipEntry};
use crate::soft_update::{SoftUpdateProblem, SolverConfig};

pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_ZERO_MASS: i32 = 3;
pub const EXIT_COVERAGE: i32 = 4;

const TOL_IDENTITY: f64 = 1e-10;
const TOL_EXTERNAL: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(
    name = "tiltid",
    version,
    about = "Soft updates, posterior identification and coherence checks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the tilted update per context, or a single problem file.
    Solve(SolveArgs),
    /// Compute interactions and calibrated rewards from a joint.
    Identify(IdentifyArgs),
    /// Run residual checks and emit one report per check.
    Check(CheckArgs),
    /// Build posteriors from a joint and an interaction file.
    Construct(ConstructArgs),
    /// Truncated log-normalizer of a countable family, with certificate.
    Countable(CountableArgs),
    /// Print a shipped joint table.
    Fixture(FixtureArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Inverse temperature; overrides any value stored in input files.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Variable groups as "X;Y;Z", each a comma-separated list.
    #[arg(long)]
    pub groups: Option<String>,
    /// Event-keyed terminal values.
    #[arg(long)]
    pub values: Option<PathBuf>,
    /// Treat missing rewards and terminal values as 0.
    #[arg(long)]
    pub fill_zero: bool,
    /// Skip zero-mass contexts instead of failing.
    #[arg(long)]
    pub skip_zero_mass: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    XGivenYz,
    ZGivenYx,
}

impl DirectionArg {
    fn orientation(self) -> Orientation {
        match self {
            DirectionArg::XGivenYz => Orientation::XGivenYZ,
            DirectionArg::ZGivenYx => Orientation::ZGivenYX,
        }
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, conflicts_with = "problem", required_unless_present = "problem")]
    pub joint: Option<PathBuf>,
    /// Single problem: {"prior", "reward", "terminal", "alpha"?}.
    #[arg(long)]
    pub problem: Option<PathBuf>,
    #[arg(long, requires = "joint")]
    pub rewards: Option<PathBuf>,
    /// Direction used when no reward file is given.
    #[arg(long, value_enum, default_value = "x-given-yz")]
    pub direction: DirectionArg,
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub joint: PathBuf,
    #[arg(long, value_enum, default_value = "x-given-yz")]
    pub direction: DirectionArg,
    /// Context baseline K(context); without it K = 0.
    #[arg(long)]
    pub baseline_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum CheckKind {
    Gauge,
    Admissibility,
    Commute,
    Decomposition,
    Identification,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub joint: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', required = true)]
    pub checks: Vec<CheckKind>,
    #[arg(long)]
    pub rewards: Option<PathBuf>,
    /// Reward file for the opposite direction (commute check).
    #[arg(long)]
    pub rewards_swapped: Option<PathBuf>,
    /// Second reward file to test for gauge equivalence.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// External interaction file (admissibility check).
    #[arg(long)]
    pub interaction: Option<PathBuf>,
    /// Shift used by the gauge-invariance check; defaults to 1 everywhere.
    #[arg(long)]
    pub baseline_file: Option<PathBuf>,
    /// Tolerance for every check, replacing the per-check defaults.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ConstructArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub joint: PathBuf,
    #[arg(long)]
    pub interaction: PathBuf,
    #[arg(long, default_value_t = TOL_EXTERNAL)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct CountableArgs {
    #[arg(long)]
    pub family: PathBuf,
    #[arg(long = "eps-tail", default_value_t = 1e-9)]
    pub eps_tail: f64,
    #[arg(long, default_value_t = 16)]
    pub initial_n: u64,
    #[arg(long, default_value_t = 20)]
    pub max_doublings: u32,
    #[arg(long, default_value_t = 1e12)]
    pub explosion_threshold: f64,
    /// Also report the truncated tilted distribution.
    #[arg(long)]
    pub tilt: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FixtureName {
    F1,
    F3,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    pub name: FixtureName,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failed run: exit code and message for stderr.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn input(e: Error) -> Self {
        Self {
            code: EXIT_INPUT,
            message: e.to_string(),
        }
    }

    fn coverage(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_COVERAGE,
            message: format!("coverage mismatch: {}", msg.into()),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::ZeroMassContext(_) => EXIT_ZERO_MASS,
            Error::CoverageMismatch(_)
            | Error::MissingEntry(_)
            | Error::MissingShift(_)
            | Error::DomainMismatch(_) => EXIT_COVERAGE,
            Error::InadmissibleSignal { .. } => EXIT_CHECK_FAILED,
            _ => EXIT_INPUT,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// Report text and exit code of a completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub report: String,
    pub code: i32,
}

type CliResult<T> = std::result::Result<T, Failure>;

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .map_err(|e| Failure::input(Error::Io(format!("{}: {e}", path.display()))))
}

fn load<T>(path: &Path, f: impl FnOnce(&str) -> crate::Result<T>) -> CliResult<T> {
    let text = read(path)?;
    f(&text).map_err(|e| Failure::input(with_path(e, path)))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn parse_groups(spec: Option<&str>) -> CliResult<Groups> {
    let Some(spec) = spec else {
        return Ok(Groups::xyz());
    };
    let parts: Vec<Vec<String>> = spec
        .split(';')
        .map(|p| {
            p.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        })
        .collect();
    if parts.len() != 3 {
        return Err(Failure::input(Error::Parse(format!(
            "--groups expects \"X;Y;Z\", got `{spec}`"
        ))));
    }
    Groups::new(parts[0].clone(), parts[1].clone(), parts[2].clone()).map_err(Failure::input)
}

fn resolve_alpha(flag: Option<f64>, file: Option<f64>) -> CliResult<SolverConfig> {
    let alpha = flag
        .or(file)
        .ok_or_else(|| Failure::input(Error::Parse("no alpha given (use --alpha)".into())))?;
    SolverConfig::new(alpha).map_err(Failure::input)
}

/// Terminal values: `--values` if given, else the reward file's `V` fields.
fn resolve_terminal(
    common: &Common,
    from_rewards: Option<&EventValueFunction>,
) -> CliResult<EventValueFunction> {
    let mut terminal = match (&common.values, from_rewards) {
        (Some(path), _) => load(path, io::load_values)?,
        (None, Some(t)) => t.clone(),
        (None, None) => EventValueFunction::new(),
    };
    if common.fill_zero && terminal.fallback().is_none() {
        terminal = terminal.with_fallback(Some(0.0));
    }
    Ok(terminal)
}

/// Adds zero rewards for every prior-supported cell the table lacks.
fn fill_rewards(joint: &JointTable, rewards: &RewardTable) -> crate::Result<RewardTable> {
    let mut filled = rewards.clone();
    let direction = rewards.direction().clone();
    for ctx in direction_contexts(joint, &direction)?.positive {
        let prior = context_prior(joint, &direction, &ctx)?;
        for (outcome, &p) in prior.outcomes().iter().zip(prior.probs()) {
            if p > 0.0 && rewards.get(&ctx, outcome).is_none() {
                filled.insert(ctx.clone(), outcome.clone(), 0.0)?;
            }
        }
    }
    Ok(filled)
}

/// Every labelled cell must name labels the joint knows.
fn check_labels(joint: &JointTable, rewards: &RewardTable) -> CliResult<()> {
    for ctx in rewards.contexts() {
        joint.event_mass(&ctx).map_err(Failure::input)?;
    }
    for ((ctx, outcome), _) in rewards.cells() {
        joint
            .event_mass(&ctx.union(outcome).map_err(Failure::input)?)
            .map_err(Failure::input)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct OutcomeProb {
    outcome: Assignment,
    q: ExtReal,
}

fn probs_of(d: &DistVector) -> Vec<OutcomeProb> {
    d.outcomes()
        .into_iter()
        .zip(d.probs())
        .map(|(outcome, &q)| OutcomeProb {
            outcome,
            q: ExtReal(q),
        })
        .collect()
}

#[derive(Serialize)]
struct ContextSolution {
    context: Assignment,
    optimizer: Vec<OutcomeProb>,
    soft_value: ExtReal,
    log_normalizer: ExtReal,
}

#[derive(Serialize)]
struct SolveReport {
    command: &'static str,
    direction: &'static str,
    alpha: ExtReal,
    contexts: Vec<ContextSolution>,
    skipped: Vec<SkipEntry>,
}

#[derive(Serialize)]
struct SingleSolveReport {
    command: &'static str,
    alpha: ExtReal,
    optimizer: Vec<ExtReal>,
    soft_value: ExtReal,
    log_normalizer: ExtReal,
}

fn zero_mass_skips(contexts: &[Assignment], skip: bool) -> CliResult<Vec<SkipEntry>> {
    if let Some(first) = contexts.first() {
        if !skip {
            return Err(Error::ZeroMassContext(first.to_string()).into());
        }
    }
    Ok(contexts
        .iter()
        .map(|c| SkipEntry {
            context: c.clone(),
            reason: "zero-mass context".into(),
        })
        .collect())
}

fn solve(args: &SolveArgs) -> CliResult<Outcome> {
    let common = &args.common;
    if let Some(path) = &args.problem {
        let file: io::ProblemFile = load(path, |t| io::parse(t, "problem file"))?;
        let problem = file.into_problem(common.alpha).map_err(Failure::input)?;
        let s = problem.solve_tilt()?;
        let report = SingleSolveReport {
            command: "solve",
            alpha: ExtReal(problem.alpha()),
            optimizer: s.optimizer.probs().iter().map(|&q| ExtReal(q)).collect(),
            soft_value: ExtReal(s.soft_value),
            log_normalizer: ExtReal(s.log_normalizer),
        };
        return Ok(Outcome {
            report: to_report_json(&report),
            code: 0,
        });
    }
    let joint_path = args
        .joint
        .as_ref()
        .expect("clap enforces --joint or --problem");
    let joint = load(joint_path, io::load_joint)?;
    let groups = parse_groups(common.groups.as_deref())?;
    let loaded = match &args.rewards {
        Some(p) => Some(load(p, |t| io::load_rewards(t, &groups))?),
        None => None,
    };
    let direction = match &loaded {
        Some(l) => l.rewards.direction().clone(),
        None => Direction::new(groups, args.direction.orientation()),
    };
    direction.groups.validate(&joint).map_err(Failure::input)?;
    let config = resolve_alpha(common.alpha, loaded.as_ref().and_then(|l| l.alpha))?;
    let terminal = resolve_terminal(common, loaded.as_ref().map(|l| &l.terminal))?;
    let mut rewards = match loaded {
        Some(l) => {
            check_labels(&joint, &l.rewards)?;
            l.rewards
        }
        None if common.fill_zero => RewardTable::new(direction.clone(), "zero"),
        None => {
            return Err(Failure::coverage(
                "no reward file given (use --rewards or --fill-zero)",
            ))
        }
    };
    if common.fill_zero {
        rewards = fill_rewards(&joint, &rewards)?;
    }
    let contexts = direction_contexts(&joint, &direction)?;
    let skipped = zero_mass_skips(&contexts.zero_mass, common.skip_zero_mass)?;
    let mut solutions = Vec::new();
    for ctx in contexts.positive {
        let problem = context_problem(&joint, &direction, &ctx, &rewards, &terminal, config)?;
        let s = problem.solve_tilt()?;
        solutions.push(ContextSolution {
            context: ctx,
            optimizer: probs_of(&s.optimizer),
            soft_value: ExtReal(s.soft_value),
            log_normalizer: ExtReal(s.log_normalizer),
        });
    }
    let report = SolveReport {
        command: "solve",
        direction: direction.tag(),
        alpha: ExtReal(config.alpha),
        contexts: solutions,
        skipped,
    };
    Ok(Outcome {
        report: to_report_json(&report),
        code: 0,
    })
}

#[derive(Serialize)]
struct CellRef {
    context: Assignment,
    outcome: Assignment,
}

#[derive(Serialize)]
struct IdentifySidecar {
    command: &'static str,
    direction: &'static str,
    alpha: ExtReal,
    convention: String,
    skipped: Vec<SkipEntry>,
    neg_inf_cells: Vec<CellRef>,
}

#[derive(Serialize)]
struct IdentifyBundle<'a> {
    interaction: &'a InteractionFile,
    rewards: &'a RewardFile,
    report: &'a IdentifySidecar,
}

/// Files to write, as `(path, contents)`.
type Artifacts = Vec<(PathBuf, String)>;

fn identify(args: &IdentifyArgs) -> CliResult<(Outcome, Option<Artifacts>)> {
    let common = &args.common;
    let joint = load(&args.joint, io::load_joint)?;
    let groups = parse_groups(common.groups.as_deref())?;
    let direction = Direction::new(groups, args.direction.orientation());
    direction.groups.validate(&joint).map_err(Failure::input)?;
    let config = resolve_alpha(common.alpha, None)?;
    let terminal = match &common.values {
        Some(_) => resolve_terminal(common, None)?,
        None => EventValueFunction::constant(0.0),
    };
    let baseline = match &args.baseline_file {
        Some(p) => Some(load(p, io::load_gauge)?),
        None => None,
    };
    let cal = calibrate_rewards(
        &joint,
        &direction,
        &terminal,
        config.alpha,
        baseline.as_ref(),
    )?;
    let interaction_file = InteractionFile::new(&cal.interaction);
    let rewards_file = RewardFile::new(
        &cal.rewards,
        &terminal,
        Some(&cal.context_values),
        Some(config.alpha),
    )?;
    let sidecar = IdentifySidecar {
        command: "identify",
        direction: direction.tag(),
        alpha: ExtReal(config.alpha),
        convention: cal.rewards.convention().to_string(),
        skipped: cal
            .interaction
            .skipped()
            .iter()
            .map(|c| SkipEntry {
                context: c.clone(),
                reason: "zero-mass context".into(),
            })
            .collect(),
        neg_inf_cells: cal
            .interaction
            .neg_inf_cells()
            .into_iter()
            .map(|(context, outcome)| CellRef { context, outcome })
            .collect(),
    };
    match &common.out {
        Some(dir) => {
            let files = vec![
                (
                    dir.join("interaction.json"),
                    to_report_json(&interaction_file),
                ),
                (dir.join("rewards.json"), to_report_json(&rewards_file)),
                (dir.join("report.json"), to_report_json(&sidecar)),
            ];
            Ok((
                Outcome {
                    report: to_report_json(&sidecar),
                    code: 0,
                },
                Some(files),
            ))
        }
        None => {
            let bundle = IdentifyBundle {
                interaction: &interaction_file,
                rewards: &rewards_file,
                report: &sidecar,
            };
            Ok((
                Outcome {
                    report: to_report_json(&bundle),
                    code: 0,
                },
                None,
            ))
        }
    }
}

/// Everything a reward-based check needs for one direction.
struct Prepared {
    rewards: RewardTable,
    terminal: EventValueFunction,
    context_values: Option<ContextValues>,
    config: SolverConfig,
}

fn prepare(joint: &JointTable, common: &Common, loaded: LoadedRewards) -> CliResult<Prepared> {
    check_labels(joint, &loaded.rewards)?;
    loaded
        .rewards
        .direction()
        .groups
        .validate(joint)
        .map_err(Failure::input)?;
    let config = resolve_alpha(common.alpha, loaded.alpha)?;
    let terminal = resolve_terminal(common, Some(&loaded.terminal))?;
    let rewards = if common.fill_zero {
        fill_rewards(joint, &loaded.rewards)?
    } else {
        loaded.rewards
    };
    Ok(Prepared {
        rewards,
        terminal,
        context_values: loaded.context_values,
        config,
    })
}

fn skips_for(
    joint: &JointTable,
    direction: &Direction,
) -> CliResult<(Vec<Assignment>, Vec<SkipEntry>)> {
    let contexts = direction_contexts(joint, direction)?;
    let skipped = contexts
        .zero_mass
        .iter()
        .map(|c| SkipEntry {
            context: c.clone(),
            reason: format!("zero-mass context ({})", direction.tag()),
        })
        .collect();
    Ok((contexts.positive, skipped))
}

fn problem_for(
    joint: &JointTable,
    p: &Prepared,
    ctx: &Assignment,
) -> crate::Result<SoftUpdateProblem> {
    context_problem(
        joint,
        p.rewards.direction(),
        ctx,
        &p.rewards,
        &p.terminal,
        p.config,
    )
}

fn gauge_check(
    joint: &JointTable,
    p: &Prepared,
    args: &CheckArgs,
    groups: &Groups,
    tol: f64,
) -> CliResult<CheckReport> {
    if let Some(path) = &args.compare {
        let other = load(path, |t| io::load_rewards(t, groups))?;
        let other = prepare(joint, &args.common, other)?;
        let cmp = gauge_equivalent(
            (&p.rewards, &p.terminal),
            (&other.rewards, &other.terminal),
            tol,
        )?;
        let mut report = CheckReport::new("gauge", &cmp.deviations, tol, Vec::new());
        if !report.pass {
            report.witness = cmp.witness.map(|(c, o)| c.union(&o)).transpose()?;
        }
        return Ok(report);
    }
    let direction = p.rewards.direction().clone();
    let (positive, skipped) = skips_for(joint, &direction)?;
    let shift = match &args.baseline_file {
        Some(path) => load(path, io::load_gauge)?,
        None => GaugeShift::constant(p.rewards.contexts(), 1.0)?,
    };
    let values = p.context_values.clone().unwrap_or_default();
    let (shifted, _) = apply_gauge(&p.rewards, &values, &shift)?;
    let moved = Prepared {
        rewards: shifted,
        terminal: p.terminal.clone(),
        context_values: None,
        config: p.config,
    };
    let mut residuals = BTreeMap::new();
    for ctx in positive {
        let a = problem_for(joint, p, &ctx)?.solve_tilt()?;
        let b = problem_for(joint, &moved, &ctx)?.solve_tilt()?;
        let c = shift.get(&ctx)?;
        let tv = total_variation(a.optimizer.probs(), b.optimizer.probs());
        let dv = (b.soft_value - a.soft_value - c).abs();
        residuals.insert(ctx, tv.max(dv));
    }
    Ok(CheckReport::new("gauge", &residuals, tol, skipped))
}

fn admissibility_check(
    joint: &JointTable,
    table: &InteractionTable,
    tol: f64,
) -> CliResult<CheckReport> {
    let rep = check_admissibility(table, joint)?;
    let skipped = rep
        .skipped
        .iter()
        .map(|c| SkipEntry {
            context: c.clone(),
            reason: "zero-mass context".into(),
        })
        .collect();
    Ok(CheckReport::new(
        "admissibility",
        &rep.residuals,
        tol,
        skipped,
    ))
}

/// Context values from the file, else each context's soft value.
fn context_values_of(joint: &JointTable, p: &Prepared) -> CliResult<ContextValues> {
    if let Some(v) = &p.context_values {
        return Ok(v.clone());
    }
    let mut out = ContextValues::new();
    for ctx in direction_contexts(joint, p.rewards.direction())?.positive {
        if p.rewards.contexts().contains(&ctx) {
            out.insert(ctx.clone(), problem_for(joint, p, &ctx)?.soft_value()?);
        }
    }
    Ok(out)
}

fn commute_check(
    joint: &JointTable,
    a: &Prepared,
    b: &Prepared,
    tol: f64,
) -> CliResult<CheckReport> {
    let (fwd, swp) = match (
        a.rewards.direction().orientation,
        b.rewards.direction().orientation,
    ) {
        (Orientation::XGivenYZ, Orientation::ZGivenYX) => (a, b),
        (Orientation::ZGivenYX, Orientation::XGivenYZ) => (b, a),
        _ => {
            return Err(Failure::coverage(
                "commute needs one reward file per direction",
            ))
        }
    };
    let v_fwd = context_values_of(joint, fwd)?;
    let v_swp = context_values_of(joint, swp)?;
    let rep = commutativity_residual(&fwd.rewards, &v_fwd, &swp.rewards, &v_swp)?;
    let mut skipped: Vec<SkipEntry> = rep
        .skipped
        .iter()
        .map(|(t, reason)| SkipEntry {
            context: t.clone(),
            reason: reason.clone(),
        })
        .collect();
    skipped.extend(skips_for(joint, fwd.rewards.direction())?.1);
    skipped.extend(skips_for(joint, swp.rewards.direction())?.1);
    Ok(CheckReport::new("commute", &rep.residuals, tol, skipped))
}

fn decomposition_check(joint: &JointTable, p: &Prepared, tol: f64) -> CliResult<CheckReport> {
    let direction = p.rewards.direction().clone();
    let (positive, skipped) = skips_for(joint, &direction)?;
    let mut residuals = BTreeMap::new();
    for ctx in positive {
        let problem = problem_for(joint, p, &ctx)?;
        let optimizer = problem.solve_tilt()?.optimizer;
        let posterior = joint.conditional(direction.updated(), &ctx)?;
        let mut worst = 0.0f64;
        for candidate in [problem.prior(), &posterior, &optimizer] {
            match problem.kl_decomposition_residual(candidate) {
                Ok(r) => worst = worst.max(r),
                Err(Error::SupportViolation { .. }) => {}
                Err(e) => return Err(e.into()),
            }
        }
        residuals.insert(ctx, worst);
    }
    Ok(CheckReport::new("decomposition", &residuals, tol, skipped))
}

fn identification_check(joint: &JointTable, p: &Prepared, tol: f64) -> CliResult<CheckReport> {
    let direction = p.rewards.direction().clone();
    let (positive, skipped) = skips_for(joint, &direction)?;
    let mut residuals = BTreeMap::new();
    for ctx in positive {
        let q = problem_for(joint, p, &ctx)?.solve_tilt()?.optimizer;
        let posterior = joint.conditional(direction.updated(), &ctx)?;
        residuals.insert(ctx, total_variation(q.probs(), posterior.probs()));
    }
    Ok(CheckReport::new("identification", &residuals, tol, skipped))
}

#[derive(Serialize)]
struct CheckOutput {
    command: &'static str,
    pass: bool,
    reports: Vec<CheckReport>,
}

fn check(args: &CheckArgs) -> CliResult<Outcome> {
    let common = &args.common;
    let joint = load(&args.joint, io::load_joint)?;
    let groups = parse_groups(common.groups.as_deref())?;
    let primary = match &args.rewards {
        Some(path) => Some(prepare(
            &joint,
            common,
            load(path, |t| io::load_rewards(t, &groups))?,
        )?),
        None => None,
    };
    let secondary = match &args.rewards_swapped {
        Some(path) => Some(prepare(
            &joint,
            common,
            load(path, |t| io::load_rewards(t, &groups))?,
        )?),
        None => None,
    };
    let need = |what: &str| Failure::coverage(format!("check `{what}` needs --rewards"));
    let mut checks = args.checks.clone();
    checks.sort();
    checks.dedup();
    let mut reports = Vec::new();
    for kind in checks {
        let report = match kind {
            CheckKind::Gauge => {
                let p = primary.as_ref().ok_or_else(|| need("gauge"))?;
                gauge_check(&joint, p, args, &groups, args.tol.unwrap_or(TOL_IDENTITY))?
            }
            CheckKind::Admissibility => match &args.interaction {
                Some(path) => {
                    let table = load(path, |t| io::load_interaction(t, &groups))?;
                    admissibility_check(&joint, &table, args.tol.unwrap_or(TOL_EXTERNAL))?
                }
                None => {
                    let direction = match &primary {
                        Some(p) => p.rewards.direction().clone(),
                        None => Direction::forward(groups.clone()),
                    };
                    direction.groups.validate(&joint).map_err(Failure::input)?;
                    let table = identify_interaction(&joint, &direction)?;
                    admissibility_check(&joint, &table, args.tol.unwrap_or(TOL_IDENTITY))?
                }
            },
            CheckKind::Commute => {
                let (Some(a), Some(b)) = (&primary, &secondary) else {
                    return Err(Failure::coverage(
                        "check `commute` needs --rewards and --rewards-swapped",
                    ));
                };
                commute_check(&joint, a, b, args.tol.unwrap_or(TOL_IDENTITY))?
            }
            CheckKind::Decomposition => {
                let p = primary.as_ref().ok_or_else(|| need("decomposition"))?;
                decomposition_check(&joint, p, args.tol.unwrap_or(TOL_IDENTITY))?
            }
            CheckKind::Identification => {
                let p = primary.as_ref().ok_or_else(|| need("identification"))?;
                identification_check(&joint, p, args.tol.unwrap_or(TOL_IDENTITY))?
            }
        };
        reports.push(report);
    }
    let pass = reports.iter().all(|r| r.pass);
    let out = CheckOutput {
        command: "check",
        pass,
        reports,
    };
    Ok(Outcome {
        report: to_report_json(&out),
        code: if pass { 0 } else { EXIT_CHECK_FAILED },
    })
}

#[derive(Serialize)]
struct ContextPosterior {
    context: Assignment,
    posterior: Vec<OutcomeProb>,
}

#[derive(Serialize)]
struct ConstructReport {
    command: &'static str,
    direction: &'static str,
    posteriors: Vec<ContextPosterior>,
    skipped: Vec<SkipEntry>,
}

fn construct(args: &ConstructArgs) -> CliResult<Outcome> {
    let common = &args.common;
    let joint = load(&args.joint, io::load_joint)?;
    let groups = parse_groups(common.groups.as_deref())?;
    let table = load(&args.interaction, |t| io::load_interaction(t, &groups))?;
    let direction = table.direction().clone();
    direction.groups.validate(&joint).map_err(Failure::input)?;
    let mut zero = Vec::new();
    let mut posteriors = Vec::new();
    for ctx in table.values().keys() {
        if joint.event_mass(ctx).map_err(Failure::input)? <= 0.0 {
            zero.push(ctx.clone());
            continue;
        }
        let prior = context_prior(&joint, &direction, ctx)?;
        let signal = table.aligned(ctx, &prior)?;
        let posterior = construct_posterior(&prior, &signal, args.tol).map_err(|e| {
            let mut f = Failure::from(e);
            f.message = format!("context {ctx}: {}", f.message);
            f
        })?;
        posteriors.push(ContextPosterior {
            context: ctx.clone(),
            posterior: probs_of(&posterior),
        });
    }
    let skipped = zero_mass_skips(&zero, common.skip_zero_mass)?;
    let report = ConstructReport {
        command: "construct",
        direction: direction.tag(),
        posteriors,
        skipped,
    };
    Ok(Outcome {
        report: to_report_json(&report),
        code: 0,
    })
}

#[derive(Serialize)]
struct TiltReport {
    probabilities: Vec<ExtReal>,
    tail_mass: ExtReal,
}

#[derive(Serialize)]
struct CountableReport {
    command: &'static str,
    log_z: ExtReal,
    certificate: CertificateOut,
    #[serde(skip_serializing_if = "Option::is_none")]
    tilt: Option<TiltReport>,
}

#[derive(Serialize)]
struct CertificateOut {
    n_max: u64,
    partial: ExtReal,
    log_partial: ExtReal,
    tail_bound: ExtReal,
    status: CertificateStatus,
}

impl From<TruncationCertificate> for CertificateOut {
    fn from(c: TruncationCertificate) -> Self {
        Self {
            n_max: c.n_max,
            partial: ExtReal(c.partial),
            log_partial: ExtReal(c.log_partial),
            tail_bound: ExtReal(c.tail_bound),
            status: c.status,
        }
    }
}

fn countable(args: &CountableArgs) -> CliResult<Outcome> {
    let family = load(&args.family, io::load_countable)?;
    let config = TruncationConfig {
        eps_tail: args.eps_tail,
        initial_n: args.initial_n,
        max_doublings: args.max_doublings,
        explosion_threshold: args.explosion_threshold,
    };
    let (log_z, cert) = log_normalizer_truncated(&family, &config).map_err(Failure::input)?;
    let tilt = if args.tilt && cert.status == CertificateStatus::Finite {
        let t = tilt_truncated(&family, &config)?;
        Some(TiltReport {
            probabilities: t.head().iter().map(|&p| ExtReal(p)).collect(),
            tail_mass: ExtReal(t.tail_mass),
        })
    } else {
        None
    };
    let code = if cert.status == CertificateStatus::Finite {
        0
    } else {
        EXIT_CHECK_FAILED
    };
    let report = CountableReport {
        command: "countable",
        log_z: ExtReal(log_z),
        certificate: cert.into(),
        tilt,
    };
    Ok(Outcome {
        report: to_report_json(&report),
        code,
    })
}

fn write_out(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| Failure::input(Error::Io(format!("{}: {e}", parent.display()))))?;
        }
    }
    fs::write(path, text).map_err(|e| Failure::input(Error::Io(format!("{}: {e}", path.display()))))
}

/// Runs a parsed command. On success the report is written to `--out` (and
/// the returned text is what goes to stdout).
pub fn run(cli: &Cli) -> CliResult<Outcome> {
    let (outcome, out) = match &cli.command {
        Command::Solve(a) => (solve(a)?, a.common.out.clone()),
        Command::Check(a) => (check(a)?, a.common.out.clone()),
        Command::Construct(a) => (construct(a)?, a.common.out.clone()),
        Command::Countable(a) => (countable(a)?, a.out.clone()),
        Command::Fixture(a) => {
            let joint = match a.name {
                FixtureName::F1 => fixtures::independent_bits(),
                FixtureName::F3 => fixtures::noisy_copy(),
            };
            let outcome = Outcome {
                report: to_report_json(&JointFile::from_joint(&joint)),
                code: 0,
            };
            (outcome, a.out.clone())
        }
        Command::Identify(a) => {
            let (outcome, files) = identify(a)?;
            for (path, text) in files.unwrap_or_default() {
                write_out(&path, &text)?;
            }
            return Ok(outcome);
        }
    };
    if let Some(path) = out {
        write_out(&path, &outcome.report)?;
        return Ok(Outcome {
            report: String::new(),
            code: outcome.code,
        });
    }
    Ok(outcome)
}
