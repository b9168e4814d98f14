//! Posterior identification: interactions, reward calibration and gauge.
//!
//! Requiring the tilt optimizer of the forward update to equal the joint's
//! own conditional `P(x|y,z)` pins the combination
//! `alpha [r_z(x|y) + V(x,y,z) - V(y,z)]` to the conditional PMI
//! `i(x;z|y)`. Rewards are then determined only up to a context baseline
//! `c(y,z)` added to both `r_z(.|y)` and `V(y,z)`.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::coherence::EventValueFunction;
use crate::dist::{enumerate_assignments, Assignment, DistVector, JointTable};
use crate::error::{Error, Result};
use crate::numeric::log_sum_exp;
use crate::soft_update::{SoftUpdateProblem, SolverConfig};

/// Default admissibility tolerance for externally supplied PMI signals.
pub const TOL_ADMIT: f64 = 1e-8;

/// Context values `V(y,z)` (or `V(x,y)` for the swapped direction).
pub type ContextValues = BTreeMap<Assignment, f64>;

/// The three variable groups `X`, `Y`, `Z`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Groups {
    x: Vec<String>,
    y: Vec<String>,
    z: Vec<String>,
}

impl Groups {
    /// `x` and `z` must be non-empty; `y` may be empty. Groups are disjoint.
    pub fn new<S: Into<String>>(
        x: impl IntoIterator<Item = S>,
        y: impl IntoIterator<Item = S>,
        z: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        let collect = |it: &mut dyn Iterator<Item = S>| it.map(Into::into).collect::<Vec<String>>();
        let x = collect(&mut x.into_iter());
        let y = collect(&mut y.into_iter());
        let z = collect(&mut z.into_iter());
        if x.is_empty() || z.is_empty() {
            return Err(Error::InvalidVariable {
                name: if x.is_empty() { "X".into() } else { "Z".into() },
                reason: "update and evidence groups must be non-empty".into(),
            });
        }
        let mut seen = BTreeSet::new();
        for v in x.iter().chain(&y).chain(&z) {
            if !seen.insert(v.clone()) {
                return Err(Error::OverlappingGroups(v.clone()));
            }
        }
        Ok(Self { x, y, z })
    }

    /// Single variables named `X`, `Y`, `Z`.
    pub fn xyz() -> Self {
        Self {
            x: vec!["X".into()],
            y: vec!["Y".into()],
            z: vec!["Z".into()],
        }
    }

    pub fn x(&self) -> &[String] {
        &self.x
    }

    pub fn y(&self) -> &[String] {
        &self.y
    }

    pub fn z(&self) -> &[String] {
        &self.z
    }

    pub fn validate(&self, joint: &JointTable) -> Result<()> {
        for v in self.x.iter().chain(&self.y).chain(&self.z) {
            joint.variable(v)?;
        }
        Ok(())
    }
}

/// Which group is revised given which context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Orientation {
    /// `P(x|y) -> P(x|y,z)`.
    XGivenYZ,
    /// `P(z|y) -> P(z|y,x)`.
    ZGivenYX,
}

impl Orientation {
    pub fn tag(self) -> &'static str {
        match self {
            Orientation::XGivenYZ => "x_given_yz",
            Orientation::ZGivenYX => "z_given_yx",
        }
    }

    pub fn parse(tag: &str) -> Option<Self> {
        match tag {
            "x_given_yz" => Some(Orientation::XGivenYZ),
            "z_given_yx" => Some(Orientation::ZGivenYX),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Direction {
    pub groups: Groups,
    pub orientation: Orientation,
}

impl Direction {
    pub fn new(groups: Groups, orientation: Orientation) -> Self {
        Self {
            groups,
            orientation,
        }
    }

    pub fn forward(groups: Groups) -> Self {
        Self::new(groups, Orientation::XGivenYZ)
    }

    pub fn reversed(&self) -> Self {
        let orientation = match self.orientation {
            Orientation::XGivenYZ => Orientation::ZGivenYX,
            Orientation::ZGivenYX => Orientation::XGivenYZ,
        };
        Self::new(self.groups.clone(), orientation)
    }

    pub fn tag(&self) -> &'static str {
        self.orientation.tag()
    }

    /// The group whose distribution is revised.
    pub fn updated(&self) -> &[String] {
        match self.orientation {
            Orientation::XGivenYZ => &self.groups.x,
            Orientation::ZGivenYX => &self.groups.z,
        }
    }

    /// The group observed on top of the base context.
    pub fn evidence(&self) -> &[String] {
        match self.orientation {
            Orientation::XGivenYZ => &self.groups.z,
            Orientation::ZGivenYX => &self.groups.x,
        }
    }

    pub fn base(&self) -> &[String] {
        &self.groups.y
    }

    pub fn context_vars(&self) -> Vec<String> {
        self.base().iter().chain(self.evidence()).cloned().collect()
    }
}

/// Contexts of a direction split by whether they carry mass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DirectionContexts {
    pub positive: Vec<Assignment>,
    pub zero_mass: Vec<Assignment>,
}

/// All contexts of `direction`, in canonical assignment order.
pub fn direction_contexts(joint: &JointTable, direction: &Direction) -> Result<DirectionContexts> {
    direction.groups.validate(joint)?;
    let specs = joint.specs(&direction.context_vars())?;
    let mut all = enumerate_assignments(&specs);
    all.sort();
    let mut out = DirectionContexts::default();
    for ctx in all {
        if joint.event_mass(&ctx)? > 0.0 {
            out.positive.push(ctx);
        } else {
            out.zero_mass.push(ctx);
        }
    }
    Ok(out)
}

/// `P(updated | base)` for a context of `direction`.
pub fn context_prior(
    joint: &JointTable,
    direction: &Direction,
    context: &Assignment,
) -> Result<DistVector> {
    joint.conditional(direction.updated(), &context.restrict(direction.base()))
}

/// Per-context PMI values for one update direction.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionTable {
    direction: Direction,
    values: BTreeMap<Assignment, BTreeMap<Assignment, f64>>,
    skipped: Vec<Assignment>,
}

impl InteractionTable {
    pub fn new(direction: Direction) -> Self {
        Self {
            direction,
            values: BTreeMap::new(),
            skipped: Vec::new(),
        }
    }

    /// Sets one cell; `-inf` is allowed, `+inf` and NaN are not.
    pub fn insert(&mut self, context: Assignment, outcome: Assignment, value: f64) -> Result<()> {
        if value.is_nan() || value == f64::INFINITY {
            return Err(Error::NonFinite {
                what: format!("interaction at {context} / {outcome}"),
                value,
            });
        }
        self.values
            .entry(context)
            .or_default()
            .insert(outcome, value);
        Ok(())
    }

    pub fn direction(&self) -> &Direction {
        &self.direction
    }

    pub fn values(&self) -> &BTreeMap<Assignment, BTreeMap<Assignment, f64>> {
        &self.values
    }

    pub fn get(&self, context: &Assignment, outcome: &Assignment) -> Option<f64> {
        self.values.get(context)?.get(outcome).copied()
    }

    /// Zero-mass contexts that were left out.
    pub fn skipped(&self) -> &[Assignment] {
        &self.skipped
    }

    /// Cells carrying the `-inf` sentinel.
    pub fn neg_inf_cells(&self) -> Vec<(Assignment, Assignment)> {
        self.cells()
            .filter(|(_, _, v)| *v == f64::NEG_INFINITY)
            .map(|(c, o, _)| (c.clone(), o.clone()))
            .collect()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&Assignment, &Assignment, f64)> {
        self.values
            .iter()
            .flat_map(|(c, m)| m.iter().map(move |(o, &v)| (c, o, v)))
    }

    /// Values of one context aligned with `prior`'s outcomes. Outcomes
    /// outside the prior's support get 0 and are ignored downstream.
    pub fn aligned(&self, context: &Assignment, prior: &DistVector) -> Result<Vec<f64>> {
        let cells = self
            .values
            .get(context)
            .ok_or_else(|| Error::MissingEntry(format!("no interaction for context {context}")))?;
        prior
            .outcomes()
            .iter()
            .zip(prior.probs())
            .map(|(o, &p)| {
                if p == 0.0 {
                    return Ok(0.0);
                }
                cells.get(o).copied().ok_or_else(|| {
                    Error::MissingEntry(format!("no interaction for {o} in context {context}"))
                })
            })
            .collect()
    }
}

/// PMI of every prior-supported outcome in every positive-mass context.
///
/// Zero-mass contexts are recorded in [`InteractionTable::skipped`].
pub fn identify_interaction(joint: &JointTable, direction: &Direction) -> Result<InteractionTable> {
    let contexts = direction_contexts(joint, direction)?;
    let mut table = InteractionTable::new(direction.clone());
    table.skipped = contexts.zero_mass;
    for ctx in contexts.positive {
        let base = ctx.restrict(direction.base());
        let evidence = ctx.restrict(direction.evidence());
        let prior = context_prior(joint, direction, &ctx)?;
        for (outcome, &p) in prior.outcomes().iter().zip(prior.probs()) {
            if p == 0.0 {
                continue;
            }
            let i = joint.pmi(outcome, &evidence, &base)?;
            table.insert(ctx.clone(), outcome.clone(), i)?;
        }
    }
    Ok(table)
}

/// Direction-indexed rewards `r(outcome | context)`.
///
/// Cells whose interaction is `-inf` have no finite reward. They are kept in
/// [`RewardTable::excluded`] and read back as `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    direction: Direction,
    entries: BTreeMap<Assignment, BTreeMap<Assignment, f64>>,
    excluded: BTreeSet<(Assignment, Assignment)>,
    convention: String,
}

impl RewardTable {
    pub fn new(direction: Direction, convention: impl Into<String>) -> Self {
        Self {
            direction,
            entries: BTreeMap::new(),
            excluded: BTreeSet::new(),
            convention: convention.into(),
        }
    }

    /// Sets one cell. `-inf` marks the cell as excluded.
    pub fn insert(&mut self, context: Assignment, outcome: Assignment, r: f64) -> Result<()> {
        if r == f64::NEG_INFINITY {
            if let Some(m) = self.entries.get_mut(&context) {
                m.remove(&outcome);
            }
            self.excluded.insert((context, outcome));
            return Ok(());
        }
        if !r.is_finite() {
            return Err(Error::NonFinite {
                what: format!("reward at {context} / {outcome}"),
                value: r,
            });
        }
        self.excluded.remove(&(context.clone(), outcome.clone()));
        self.entries.entry(context).or_default().insert(outcome, r);
        Ok(())
    }

    pub fn remove(&mut self, context: &Assignment, outcome: &Assignment) {
        if let Some(m) = self.entries.get_mut(context) {
            m.remove(outcome);
            if m.is_empty() {
                self.entries.remove(context);
            }
        }
        self.excluded.remove(&(context.clone(), outcome.clone()));
    }

    pub fn direction(&self) -> &Direction {
        &self.direction
    }

    pub fn convention(&self) -> &str {
        &self.convention
    }

    pub fn entries(&self) -> &BTreeMap<Assignment, BTreeMap<Assignment, f64>> {
        &self.entries
    }

    pub fn excluded(&self) -> &BTreeSet<(Assignment, Assignment)> {
        &self.excluded
    }

    /// Finite cells as `((context, outcome), r)`.
    pub fn cells(&self) -> impl Iterator<Item = ((&Assignment, &Assignment), f64)> {
        self.entries
            .iter()
            .flat_map(|(c, m)| m.iter().map(move |(o, &r)| ((c, o), r)))
    }

    /// Reward of a cell; `-inf` for excluded cells, `None` when absent.
    pub fn get(&self, context: &Assignment, outcome: &Assignment) -> Option<f64> {
        if let Some(r) = self.entries.get(context).and_then(|m| m.get(outcome)) {
            return Some(*r);
        }
        if self.excluded.contains(&(context.clone(), outcome.clone())) {
            return Some(f64::NEG_INFINITY);
        }
        None
    }

    /// Every context that has at least one cell, finite or excluded.
    pub fn contexts(&self) -> BTreeSet<Assignment> {
        self.entries
            .keys()
            .cloned()
            .chain(self.excluded.iter().map(|(c, _)| c.clone()))
            .collect()
    }
}

/// A context-only baseline `c(y,z)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GaugeShift {
    shifts: BTreeMap<Assignment, f64>,
}

impl GaugeShift {
    pub fn new(shifts: BTreeMap<Assignment, f64>) -> Result<Self> {
        for (ctx, &c) in &shifts {
            if !c.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("gauge shift at {ctx}"),
                    value: c,
                });
            }
        }
        Ok(Self { shifts })
    }

    /// The same shift `c` on every listed context.
    pub fn constant(contexts: impl IntoIterator<Item = Assignment>, c: f64) -> Result<Self> {
        Self::new(contexts.into_iter().map(|k| (k, c)).collect())
    }

    pub fn get(&self, context: &Assignment) -> Result<f64> {
        self.shifts
            .get(context)
            .copied()
            .ok_or_else(|| Error::MissingShift(context.to_string()))
    }

    pub fn shifts(&self) -> &BTreeMap<Assignment, f64> {
        &self.shifts
    }
}

/// Output of [`calibrate_rewards`].
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub interaction: InteractionTable,
    pub rewards: RewardTable,
    pub context_values: ContextValues,
}

/// Rewards that make the tilt reproduce the joint's conditional:
/// `r(x|ctx) = i(x;ctx)/alpha - V(x,ctx) + K(ctx)` with context value
/// `V(ctx) = K(ctx)`. Without a baseline, `K = 0`.
///
/// Posterior-null cells (`i = -inf`) get no reward and are recorded as
/// excluded.
pub fn calibrate_rewards(
    joint: &JointTable,
    direction: &Direction,
    terminal: &EventValueFunction,
    alpha: f64,
    baseline: Option<&GaugeShift>,
) -> Result<Calibration> {
    SolverConfig::new(alpha)?;
    let interaction = identify_interaction(joint, direction)?;
    let convention = match baseline {
        None => "baseline K(context) = 0".to_string(),
        Some(_) => "baseline K(context) from supplied gauge shift".to_string(),
    };
    let mut rewards = RewardTable::new(direction.clone(), convention);
    let mut context_values = ContextValues::new();
    for (ctx, cells) in interaction.values() {
        let k = match baseline {
            Some(b) => b.get(ctx)?,
            None => 0.0,
        };
        for (outcome, &i) in cells {
            if i == f64::NEG_INFINITY {
                rewards.insert(ctx.clone(), outcome.clone(), f64::NEG_INFINITY)?;
                continue;
            }
            let v = terminal.value(&ctx.union(outcome)?)?;
            rewards.insert(ctx.clone(), outcome.clone(), i / alpha - v + k)?;
        }
        context_values.insert(ctx.clone(), k);
    }
    Ok(Calibration {
        interaction,
        rewards,
        context_values,
    })
}

/// `r -> r + c(ctx)` and `V(ctx) -> V(ctx) + c(ctx)`.
pub fn apply_gauge(
    rewards: &RewardTable,
    values: &ContextValues,
    shift: &GaugeShift,
) -> Result<(RewardTable, ContextValues)> {
    let mut out = rewards.clone();
    for (ctx, cells) in rewards.entries() {
        let c = shift.get(ctx)?;
        for (outcome, &r) in cells {
            out.insert(ctx.clone(), outcome.clone(), r + c)?;
        }
    }
    for (ctx, _) in rewards.excluded() {
        shift.get(ctx)?;
    }
    let mut shifted = ContextValues::new();
    for (ctx, &v) in values {
        shifted.insert(ctx.clone(), v + shift.get(ctx)?);
    }
    Ok((out, shifted))
}

/// Outcome of [`gauge_equivalent`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaugeComparison {
    pub equivalent: bool,
    pub max_deviation: f64,
    /// Per-context spread of `(r_b + V_b) - (r_a + V_a)` around its baseline.
    pub deviations: BTreeMap<Assignment, f64>,
    /// Cell with the largest deviation.
    pub witness: Option<(Assignment, Assignment)>,
    /// Recovered `c(ctx)`, present when the tables are equivalent.
    pub shift: Option<GaugeShift>,
}

/// Picks the baseline of a context's differences: the mean of the densest
/// window of width `tol`, ties going to the smaller values.
fn baseline_of(diffs: &[f64], tol: f64) -> f64 {
    let mut sorted = diffs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mut best_lo, mut best_len) = (0usize, 0usize);
    let mut hi = 0usize;
    for lo in 0..sorted.len() {
        while hi < sorted.len() && sorted[hi] - sorted[lo] <= tol {
            hi += 1;
        }
        if hi - lo > best_len {
            best_lo = lo;
            best_len = hi - lo;
        }
    }
    let window = &sorted[best_lo..best_lo + best_len];
    window.iter().sum::<f64>() / window.len() as f64
}

/// Whether two reward/terminal splits differ only by a context baseline.
///
/// Compares within-context differences of `r(x) + V(x, ctx)`. Excluded cells
/// must coincide.
pub fn gauge_equivalent(
    a: (&RewardTable, &EventValueFunction),
    b: (&RewardTable, &EventValueFunction),
    tol: f64,
) -> Result<GaugeComparison> {
    let (ra, va) = a;
    let (rb, vb) = b;
    if ra.direction() != rb.direction() {
        return Err(Error::DomainMismatch(format!(
            "directions differ: {} vs {}",
            ra.direction().tag(),
            rb.direction().tag()
        )));
    }
    if ra.excluded() != rb.excluded() {
        return Err(Error::DomainMismatch("excluded cells differ".into()));
    }
    let keys_a: Vec<_> = ra
        .entries()
        .iter()
        .map(|(c, m)| (c, m.keys().collect::<Vec<_>>()))
        .collect();
    let keys_b: Vec<_> = rb
        .entries()
        .iter()
        .map(|(c, m)| (c, m.keys().collect::<Vec<_>>()))
        .collect();
    if keys_a != keys_b {
        return Err(Error::DomainMismatch("tables cover different cells".into()));
    }

    let mut deviations = BTreeMap::new();
    let mut shifts = BTreeMap::new();
    let mut witness: Option<((Assignment, Assignment), f64)> = None;
    for (ctx, cells_a) in ra.entries() {
        let cells_b = &rb.entries()[ctx];
        let mut diffs = Vec::with_capacity(cells_a.len());
        for (outcome, &r_a) in cells_a {
            let event = ctx.union(outcome)?;
            let combined_a = r_a + va.value(&event)?;
            let combined_b = cells_b[outcome] + vb.value(&event)?;
            diffs.push(combined_b - combined_a);
        }
        let c = baseline_of(&diffs, tol);
        let mut worst = 0.0f64;
        for (outcome, d) in cells_a.keys().zip(&diffs) {
            let dev = (d - c).abs();
            worst = worst.max(dev);
            if witness.as_ref().is_none_or(|(_, w)| dev > *w) {
                witness = Some(((ctx.clone(), outcome.clone()), dev));
            }
        }
        deviations.insert(ctx.clone(), worst);
        shifts.insert(ctx.clone(), c);
    }
    let max_deviation = deviations.values().copied().fold(0.0, f64::max);
    let equivalent = max_deviation <= tol;
    Ok(GaugeComparison {
        equivalent,
        max_deviation,
        deviations,
        witness: witness.map(|(w, _)| w),
        shift: if equivalent {
            Some(GaugeShift::new(shifts)?)
        } else {
            None
        },
    })
}

/// Per-context residuals `|log sum_x P(x|base) exp{i(x)}|`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub residuals: BTreeMap<Assignment, f64>,
    /// Contexts of the table that carry no mass in the joint.
    pub skipped: Vec<Assignment>,
}

impl AdmissibilityReport {
    pub fn max_residual(&self) -> f64 {
        self.residuals.values().copied().fold(0.0, f64::max)
    }
}

/// Checks each context of `table` normalizes against the joint's prior.
/// Cells at prior-null outcomes are ignored; `-inf` cells contribute 0.
pub fn check_admissibility(
    table: &InteractionTable,
    joint: &JointTable,
) -> Result<AdmissibilityReport> {
    let direction = table.direction();
    let mut report = AdmissibilityReport::default();
    for (ctx, cells) in table.values() {
        if joint.event_mass(ctx)? <= 0.0 {
            report.skipped.push(ctx.clone());
            continue;
        }
        let prior = context_prior(joint, direction, ctx)?;
        let mut terms = Vec::with_capacity(cells.len());
        for (outcome, &i) in cells {
            let idx = prior.index_of(outcome).ok_or_else(|| {
                Error::DomainMismatch(format!(
                    "outcome {outcome} is not over {:?}",
                    direction.updated()
                ))
            })?;
            let p = prior.probs()[idx];
            if p > 0.0 {
                terms.push(p.ln() + i);
            }
        }
        report
            .residuals
            .insert(ctx.clone(), log_sum_exp(&terms).abs());
    }
    Ok(report)
}

/// `p(x) exp{i(x)}`, renormalized, provided the signal is admissible within
/// `tol_admit`.
pub fn construct_posterior(
    prior: &DistVector,
    interaction: &[f64],
    tol_admit: f64,
) -> Result<DistVector> {
    if interaction.len() != prior.len() {
        return Err(Error::LengthMismatch {
            expected: prior.len(),
            got: interaction.len(),
        });
    }
    let log_terms: Vec<f64> = prior
        .probs()
        .iter()
        .zip(interaction)
        .map(|(&p, &i)| {
            if p == 0.0 {
                f64::NEG_INFINITY
            } else {
                p.ln() + i
            }
        })
        .collect();
    for (k, &t) in log_terms.iter().enumerate() {
        if t.is_nan() || t == f64::INFINITY {
            return Err(Error::NonFinite {
                what: format!("interaction at outcome {k}"),
                value: interaction[k],
            });
        }
    }
    let residual = log_sum_exp(&log_terms);
    if residual.is_nan() || residual.abs() > tol_admit {
        return Err(Error::InadmissibleSignal {
            residual: residual.abs(),
            tol: tol_admit,
        });
    }
    let probs = log_terms
        .iter()
        .map(|&t| {
            if t == f64::NEG_INFINITY {
                0.0
            } else {
                (t - residual).exp()
            }
        })
        .collect();
    prior.with_probs(probs)
}

/// The single-context problem for `direction` at `context`, with prior
/// `P(updated | base)`, rewards from `rewards` and terminal values read at the
/// event `context ∪ outcome`.
pub fn context_problem(
    joint: &JointTable,
    direction: &Direction,
    context: &Assignment,
    rewards: &RewardTable,
    terminal: &EventValueFunction,
    config: SolverConfig,
) -> Result<SoftUpdateProblem> {
    if joint.event_mass(context)? <= 0.0 {
        return Err(Error::ZeroMassContext(context.to_string()));
    }
    let prior = context_prior(joint, direction, context)?;
    let outcomes = prior.outcomes();
    let mut r = vec![0.0; prior.len()];
    let mut v = vec![0.0; prior.len()];
    for (k, (outcome, &p)) in outcomes.iter().zip(prior.probs()).enumerate() {
        if p == 0.0 {
            continue;
        }
        r[k] = rewards.get(context, outcome).ok_or_else(|| {
            Error::MissingEntry(format!("no reward for {outcome} in context {context}"))
        })?;
        v[k] = terminal.value(&context.union(outcome)?)?;
    }
    SoftUpdateProblem::new(prior, r, v, config)
}
