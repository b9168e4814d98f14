//! Event-keyed values and the cross-direction consistency checks.
//!
//! The forward update revises `X` given `(Y, Z)`; the swapped update revises
//! `Z` given `(Y, X)`. When both are posterior-identified and share one
//! event-keyed value function, `r_z(x|y) - V(y,z) = r_x(z|y) - V(x,y)` must
//! hold on every positive-mass triple.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dist::{Assignment, JointTable};
use crate::error::{Error, Result};
use crate::identification::{
    context_problem, direction_contexts, identify_interaction, ContextValues, Direction, Groups,
    Orientation, RewardTable,
};
use crate::numeric::total_variation;
use crate::soft_update::{SoftUpdateProblem, SolverConfig};

/// Values keyed by information events.
///
/// An event is an [`Assignment`], whose keys are kept sorted by variable
/// name, so `V(x,y,z)` and `V(z,y,x)` are the same map entry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventValueFunction {
    entries: BTreeMap<Assignment, f64>,
    fallback: Option<f64>,
}

impl EventValueFunction {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every event maps to `v` unless overridden.
    pub fn constant(v: f64) -> Self {
        Self {
            entries: BTreeMap::new(),
            fallback: Some(v),
        }
    }

    pub fn with_fallback(mut self, v: Option<f64>) -> Self {
        self.fallback = v;
        self
    }

    pub fn insert(&mut self, event: Assignment, v: f64) -> Result<()> {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: format!("value of event {event}"),
                value: v,
            });
        }
        self.entries.insert(event, v);
        Ok(())
    }

    pub fn get(&self, event: &Assignment) -> Option<f64> {
        self.entries.get(event).copied().or(self.fallback)
    }

    pub fn value(&self, event: &Assignment) -> Result<f64> {
        self.get(event)
            .ok_or_else(|| Error::MissingEntry(format!("no value for event {event}")))
    }

    pub fn entries(&self) -> &BTreeMap<Assignment, f64> {
        &self.entries
    }

    pub fn fallback(&self) -> Option<f64> {
        self.fallback
    }
}

/// The forward and swapped update directions over one joint.
#[derive(Debug, Clone)]
pub struct DirectionPair<'a> {
    joint: &'a JointTable,
    groups: Groups,
    forward_values: &'a EventValueFunction,
    swapped_values: &'a EventValueFunction,
    config: SolverConfig,
}

impl<'a> DirectionPair<'a> {
    /// Both directions read terminal values from the same event function.
    pub fn new(
        joint: &'a JointTable,
        groups: Groups,
        values: &'a EventValueFunction,
        config: SolverConfig,
    ) -> Result<Self> {
        Self::with_split_values(joint, groups, values, values, config)
    }

    /// Separate terminal tables per direction. This models an order-sensitive
    /// value assignment and is only useful to exhibit commutativity failures.
    pub fn with_split_values(
        joint: &'a JointTable,
        groups: Groups,
        forward_values: &'a EventValueFunction,
        swapped_values: &'a EventValueFunction,
        config: SolverConfig,
    ) -> Result<Self> {
        groups.validate(joint)?;
        Ok(Self {
            joint,
            groups,
            forward_values,
            swapped_values,
            config,
        })
    }

    pub fn joint(&self) -> &JointTable {
        self.joint
    }

    pub fn config(&self) -> SolverConfig {
        self.config
    }

    pub fn forward(&self) -> Direction {
        Direction::new(self.groups.clone(), Orientation::XGivenYZ)
    }

    pub fn swapped(&self) -> Direction {
        Direction::new(self.groups.clone(), Orientation::ZGivenYX)
    }

    pub fn shares_values(&self) -> bool {
        std::ptr::eq(self.forward_values, self.swapped_values)
    }

    /// Problem for `P(x|y) -> P(x|y,z)` at context `(y,z)`.
    pub fn build_forward_problem(
        &self,
        rewards: &RewardTable,
        context: &Assignment,
    ) -> Result<SoftUpdateProblem> {
        self.problem(&self.forward(), self.forward_values, rewards, context)
    }

    /// Problem for `P(z|y) -> P(z|y,x)` at context `(y,x)`. Terminal values
    /// are read at the event `{x,y,z}`, the same event the forward direction
    /// uses.
    pub fn build_swapped_problem(
        &self,
        rewards_swapped: &RewardTable,
        context: &Assignment,
    ) -> Result<SoftUpdateProblem> {
        self.problem(
            &self.swapped(),
            self.swapped_values,
            rewards_swapped,
            context,
        )
    }

    fn problem(
        &self,
        direction: &Direction,
        values: &EventValueFunction,
        rewards: &RewardTable,
        context: &Assignment,
    ) -> Result<SoftUpdateProblem> {
        if rewards.direction() != direction {
            return Err(Error::DomainMismatch(format!(
                "reward table is for {}, expected {}",
                rewards.direction().tag(),
                direction.tag()
            )));
        }
        context_problem(self.joint, direction, context, rewards, values, self.config)
    }
}

/// Per-triple residuals of the commutativity constraint.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CommutativityReport {
    pub residuals: BTreeMap<Assignment, f64>,
    /// Triples where both directions carry a `-inf` interaction.
    pub skipped: Vec<(Assignment, String)>,
}

impl CommutativityReport {
    pub fn max_residual(&self) -> f64 {
        self.residuals.values().copied().fold(0.0, f64::max)
    }

    /// Triple with the largest residual.
    pub fn worst(&self) -> Option<(&Assignment, f64)> {
        self.residuals
            .iter()
            .map(|(k, &v)| (k, v))
            .fold(None, |best, cur| match best {
                Some((_, b)) if b >= cur.1 => best,
                _ => Some(cur),
            })
    }
}

/// `|[r_z(x|y) - V(y,z)] - [r_x(z|y) - V(x,y)]|` on every triple.
pub fn commutativity_residual(
    r_fwd: &RewardTable,
    v_fwd: &ContextValues,
    r_swp: &RewardTable,
    v_swp: &ContextValues,
) -> Result<CommutativityReport> {
    let fwd = r_fwd.direction();
    let swp = r_swp.direction();
    if fwd.orientation != Orientation::XGivenYZ || swp.orientation != Orientation::ZGivenYX {
        return Err(Error::DomainMismatch(format!(
            "expected forward and swapped tables, got {} and {}",
            fwd.tag(),
            swp.tag()
        )));
    }
    if fwd.groups != swp.groups {
        return Err(Error::DomainMismatch(
            "reward tables use different variable groups".into(),
        ));
    }
    let swapped_ctx_vars = swp.context_vars();
    let swapped_out_vars = swp.updated().to_vec();

    let mut report = CommutativityReport::default();
    let mut visited = 0usize;
    let split = |triple: &Assignment| {
        (
            triple.restrict(&swapped_ctx_vars),
            triple.restrict(&swapped_out_vars),
        )
    };

    for (ctx, outcomes) in r_fwd.entries() {
        let v_yz = *v_fwd.get(ctx).ok_or_else(|| {
            Error::CoverageMismatch(format!("no forward context value for {ctx}"))
        })?;
        for (x, &r_f) in outcomes {
            let triple = ctx.union(x)?;
            let (ctx_s, z) = split(&triple);
            let r_s = match r_swp.get(&ctx_s, &z) {
                Some(v) if v.is_finite() => v,
                Some(_) => {
                    return Err(Error::CoverageMismatch(format!(
                        "triple {triple} is finite forward but excluded in the swapped table"
                    )))
                }
                None => {
                    return Err(Error::CoverageMismatch(format!(
                        "swapped table has no entry for triple {triple}"
                    )))
                }
            };
            let v_yx = *v_swp.get(&ctx_s).ok_or_else(|| {
                Error::CoverageMismatch(format!("no swapped context value for {ctx_s}"))
            })?;
            visited += 1;
            report
                .residuals
                .insert(triple, ((r_f - v_yz) - (r_s - v_yx)).abs());
        }
    }
    for (ctx, x) in r_fwd.excluded() {
        let triple = ctx.union(x)?;
        let (ctx_s, z) = split(&triple);
        if r_swp.get(&ctx_s, &z) != Some(f64::NEG_INFINITY) {
            return Err(Error::CoverageMismatch(format!(
                "triple {triple} is excluded forward but not in the swapped table"
            )));
        }
        visited += 1;
        report
            .skipped
            .push((triple, "posterior-null triple in both directions".into()));
    }
    let swapped_cells =
        r_swp.entries().values().map(|m| m.len()).sum::<usize>() + r_swp.excluded().len();
    if swapped_cells != visited {
        return Err(Error::CoverageMismatch(format!(
            "swapped table has {swapped_cells} cells, forward table covers {visited}"
        )));
    }
    report.skipped.sort();
    Ok(report)
}

/// Result of [`order_independence_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderIndependenceReport {
    /// Total variation between each direction's tilt and the joint's
    /// conditional, per context.
    pub forward_identification: BTreeMap<Assignment, f64>,
    pub swapped_identification: BTreeMap<Assignment, f64>,
    /// `|i(x;z|y) - i(z;x|y)|` per triple.
    pub interaction_symmetry: BTreeMap<Assignment, f64>,
    pub commutativity: CommutativityReport,
    /// Soft values derived per direction, used as `V(y,z)` and `V(x,y)`.
    pub forward_values: ContextValues,
    pub swapped_values: ContextValues,
    pub skipped: Vec<(Assignment, String)>,
    pub tol: f64,
    pub pass: bool,
}

fn max_of<'a>(xs: impl IntoIterator<Item = &'a f64>) -> f64 {
    xs.into_iter().copied().fold(0.0, f64::max)
}

impl OrderIndependenceReport {
    pub fn max_identification(&self) -> f64 {
        max_of(self.forward_identification.values())
            .max(max_of(self.swapped_identification.values()))
    }

    pub fn max_symmetry(&self) -> f64 {
        max_of(self.interaction_symmetry.values())
    }
}

/// Identification residuals per direction, interaction symmetry, and
/// commutativity, with context values taken from each direction's soft value.
pub fn order_independence_check(
    pair: &DirectionPair<'_>,
    r_fwd: &RewardTable,
    r_swp: &RewardTable,
    tol: f64,
) -> Result<OrderIndependenceReport> {
    let mut skipped = Vec::new();
    let mut run = |direction: Direction,
                   rewards: &RewardTable|
     -> Result<(BTreeMap<Assignment, f64>, ContextValues)> {
        let contexts = direction_contexts(pair.joint, &direction)?;
        for ctx in &contexts.zero_mass {
            skipped.push((
                ctx.clone(),
                format!("zero-mass context ({})", direction.tag()),
            ));
        }
        let mut ident = BTreeMap::new();
        let mut values = ContextValues::new();
        for ctx in &contexts.positive {
            let problem = match direction.orientation {
                Orientation::XGivenYZ => pair.build_forward_problem(rewards, ctx)?,
                Orientation::ZGivenYX => pair.build_swapped_problem(rewards, ctx)?,
            };
            let solution = problem.solve_tilt()?;
            let posterior = pair.joint.conditional(direction.updated(), ctx)?;
            ident.insert(
                ctx.clone(),
                total_variation(solution.optimizer.probs(), posterior.probs()),
            );
            values.insert(ctx.clone(), solution.soft_value);
        }
        Ok((ident, values))
    };
    let (forward_identification, forward_values) = run(pair.forward(), r_fwd)?;
    let (swapped_identification, swapped_values) = run(pair.swapped(), r_swp)?;

    let i_fwd = identify_interaction(pair.joint, &pair.forward())?;
    let i_swp = identify_interaction(pair.joint, &pair.swapped())?;
    let swp_dir = pair.swapped();
    let mut interaction_symmetry = BTreeMap::new();
    for (ctx, cells) in i_fwd.values() {
        for (x, &a) in cells {
            let triple = ctx.union(x)?;
            let ctx_s = triple.restrict(&swp_dir.context_vars());
            let z = triple.restrict(swp_dir.updated());
            let b = i_swp.get(&ctx_s, &z).ok_or_else(|| {
                Error::CoverageMismatch(format!("swapped interaction missing triple {triple}"))
            })?;
            let r = if a == b { 0.0 } else { (a - b).abs() };
            interaction_symmetry.insert(triple, r);
        }
    }

    let commutativity = commutativity_residual(r_fwd, &forward_values, r_swp, &swapped_values)?;
    skipped.sort();

    let mut report = OrderIndependenceReport {
        forward_identification,
        swapped_identification,
        interaction_symmetry,
        commutativity,
        forward_values,
        swapped_values,
        skipped,
        tol,
        pass: false,
    };
    report.pass = report.max_identification() <= tol
        && report.max_symmetry() <= tol
        && report.commutativity.max_residual() <= tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::identification::calibrate_rewards;

    fn a(pairs: &[(&str, &str)]) -> Assignment {
        Assignment::from_pairs(pairs.iter().copied()).unwrap()
    }

    #[test]
    fn event_lookup_ignores_listing_order() {
        let mut v = EventValueFunction::new();
        v.insert(a(&[("X", "0"), ("Y", "1"), ("Z", "1")]), 0.3)
            .unwrap();
        assert_eq!(v.get(&a(&[("Z", "1"), ("Y", "1"), ("X", "0")])), Some(0.3));
        v.insert(a(&[("Y", "1"), ("X", "0")]), -1.0).unwrap();
        assert_eq!(v.get(&a(&[("X", "0"), ("Y", "1")])), Some(-1.0));
        assert_eq!(v.get(&a(&[("X", "1")])), None);
        assert!(v.value(&a(&[("X", "1")])).is_err());
        assert!(v.insert(a(&[("X", "1")]), f64::NAN).is_err());
    }

    #[test]
    fn swapped_problem_on_independent_bits_returns_prior() {
        let f1 = fixtures::independent_bits();
        let values = EventValueFunction::constant(0.0);
        let cfg = SolverConfig::new(1.0).unwrap();
        let pair = DirectionPair::new(&f1, Groups::xyz(), &values, cfg).unwrap();
        let cal = calibrate_rewards(&f1, &pair.swapped(), &values, 1.0, None).unwrap();
        for (_, r) in cal.rewards.cells() {
            assert_eq!(r, 0.0);
        }
        let p = pair
            .build_swapped_problem(&cal.rewards, &a(&[("Y", "0"), ("X", "1")]))
            .unwrap();
        let s = p.solve_tilt().unwrap();
        assert_eq!(s.optimizer.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn swapped_problem_reproduces_noisy_copy_posterior() {
        let f3 = fixtures::noisy_copy();
        let values = EventValueFunction::constant(0.0);
        let cfg = SolverConfig::new(1.0).unwrap();
        let pair = DirectionPair::new(&f3, Groups::xyz(), &values, cfg).unwrap();
        let cal = calibrate_rewards(&f3, &pair.swapped(), &values, 1.0, None).unwrap();
        let ctx = a(&[("Y", "0"), ("X", "1")]);
        let s = pair
            .build_swapped_problem(&cal.rewards, &ctx)
            .unwrap()
            .solve_tilt()
            .unwrap();
        let post = f3.conditional(&["Z"], &ctx).unwrap();
        assert!(total_variation(s.optimizer.probs(), post.probs()) < 1e-15);
        assert!((s.optimizer.probs()[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn swapped_terminal_lookup_matches_forward_event() {
        let f3 = fixtures::noisy_copy();
        let mut values = EventValueFunction::new();
        for (cell, _) in f3.cells() {
            let k = cell
                .iter()
                .map(|(_, l)| l.parse::<f64>().unwrap())
                .sum::<f64>();
            values.insert(cell, 0.1 + k).unwrap();
        }
        let cfg = SolverConfig::new(1.0).unwrap();
        let pair = DirectionPair::new(&f3, Groups::xyz(), &values, cfg).unwrap();
        let fwd = calibrate_rewards(&f3, &pair.forward(), &values, 1.0, None).unwrap();
        let swp = calibrate_rewards(&f3, &pair.swapped(), &values, 1.0, None).unwrap();
        // swapped (y=0,x=1), outcome z=0  vs  forward (y=0,z=0), outcome x=1
        let ps = pair
            .build_swapped_problem(&swp.rewards, &a(&[("Y", "0"), ("X", "1")]))
            .unwrap();
        let pf = pair
            .build_forward_problem(&fwd.rewards, &a(&[("Y", "0"), ("Z", "0")]))
            .unwrap();
        assert_eq!(ps.terminal()[0], pf.terminal()[1]);
        assert!(pair.shares_values());
    }

    #[test]
    fn wrong_direction_table_is_rejected() {
        let f3 = fixtures::noisy_copy();
        let values = EventValueFunction::constant(0.0);
        let cfg = SolverConfig::new(1.0).unwrap();
        let pair = DirectionPair::new(&f3, Groups::xyz(), &values, cfg).unwrap();
        let fwd = calibrate_rewards(&f3, &pair.forward(), &values, 1.0, None).unwrap();
        assert!(matches!(
            pair.build_swapped_problem(&fwd.rewards, &a(&[("Y", "0"), ("X", "1")])),
            Err(Error::DomainMismatch(_))
        ));
    }

    fn calibrated(
        joint: &JointTable,
        values: &EventValueFunction,
        alpha: f64,
    ) -> (
        crate::identification::Calibration,
        crate::identification::Calibration,
    ) {
        let fwd = Direction::new(Groups::xyz(), Orientation::XGivenYZ);
        let swp = fwd.reversed();
        (
            calibrate_rewards(joint, &fwd, values, alpha, None).unwrap(),
            calibrate_rewards(joint, &swp, values, alpha, None).unwrap(),
        )
    }

    #[test]
    fn commutativity_holds_for_shared_calibration() {
        let f3 = fixtures::noisy_copy();
        let mut values = EventValueFunction::new();
        for (i, (cell, _)) in f3.cells().enumerate() {
            values.insert(cell, (i as f64 * 0.37).sin()).unwrap();
        }
        let (f, s) = calibrated(&f3, &values, 1.5);
        let rep =
            commutativity_residual(&f.rewards, &f.context_values, &s.rewards, &s.context_values)
                .unwrap();
        assert_eq!(rep.residuals.len(), 8);
        assert!(rep.max_residual() <= 1e-10);
    }

    #[test]
    fn commutativity_localizes_a_perturbation() {
        let f3 = fixtures::noisy_copy();
        let values = EventValueFunction::constant(0.0);
        let (f, s) = calibrated(&f3, &values, 1.0);
        let ctx = a(&[("Y", "1"), ("Z", "0")]);
        let x = a(&[("X", "1")]);
        let mut perturbed = f.rewards.clone();
        let r = perturbed.get(&ctx, &x).unwrap();
        perturbed.insert(ctx.clone(), x.clone(), r + 0.01).unwrap();
        let rep =
            commutativity_residual(&perturbed, &f.context_values, &s.rewards, &s.context_values)
                .unwrap();
        let target = ctx.union(&x).unwrap();
        for (triple, &res) in &rep.residuals {
            if *triple == target {
                assert!((res - 0.01).abs() < 1e-12);
            } else {
                assert!(res <= 1e-12);
            }
        }
        assert_eq!(rep.worst().unwrap().0, &target);
    }

    #[test]
    fn commutativity_cancels_gauge_shifts() {
        let f3 = fixtures::noisy_copy();
        let values = EventValueFunction::constant(0.25);
        let fwd = Direction::new(Groups::xyz(), Orientation::XGivenYZ);
        let contexts = direction_contexts(&f3, &fwd).unwrap().positive;
        let k = crate::identification::GaugeShift::constant(contexts, 2.0).unwrap();
        let f = calibrate_rewards(&f3, &fwd, &values, 1.0, Some(&k)).unwrap();
        let s = calibrate_rewards(&f3, &fwd.reversed(), &values, 1.0, None).unwrap();
        let rep =
            commutativity_residual(&f.rewards, &f.context_values, &s.rewards, &s.context_values)
                .unwrap();
        assert!(rep.max_residual() <= 1e-10);
    }

    #[test]
    fn commutativity_coverage_mismatch() {
        let f3 = fixtures::noisy_copy();
        let values = EventValueFunction::constant(0.0);
        let (f, s) = calibrated(&f3, &values, 1.0);
        let mut v = f.context_values.clone();
        v.remove(&a(&[("Y", "0"), ("Z", "0")]));
        assert!(matches!(
            commutativity_residual(&f.rewards, &v, &s.rewards, &s.context_values),
            Err(Error::CoverageMismatch(_))
        ));
        let mut short = s.rewards.clone();
        short.remove(&a(&[("Y", "0"), ("X", "0")]), &a(&[("Z", "1")]));
        assert!(matches!(
            commutativity_residual(&f.rewards, &f.context_values, &short, &s.context_values),
            Err(Error::CoverageMismatch(_))
        ));
        // Direction tags swapped.
        assert!(matches!(
            commutativity_residual(&s.rewards, &s.context_values, &f.rewards, &f.context_values),
            Err(Error::DomainMismatch(_))
        ));
    }

    #[test]
    fn order_independence_on_calibrated_noisy_copy() {
        let f3 = fixtures::noisy_copy();
        let values = EventValueFunction::constant(0.4);
        let cfg = SolverConfig::new(1.0).unwrap();
        let pair = DirectionPair::new(&f3, Groups::xyz(), &values, cfg).unwrap();
        let (f, s) = calibrated(&f3, &values, 1.0);
        let rep = order_independence_check(&pair, &f.rewards, &s.rewards, 1e-10).unwrap();
        assert!(rep.pass);
        assert!(rep.max_identification() <= 1e-10);
        assert_eq!(rep.max_symmetry(), 0.0);
        assert!(rep.skipped.is_empty());
    }

    #[test]
    fn order_independence_with_zero_rewards_on_independent_bits() {
        let f1 = fixtures::independent_bits();
        let values = EventValueFunction::constant(0.0);
        let cfg = SolverConfig::new(2.0).unwrap();
        let pair = DirectionPair::new(&f1, Groups::xyz(), &values, cfg).unwrap();
        let mut f = RewardTable::new(pair.forward(), "zero");
        let mut s = RewardTable::new(pair.swapped(), "zero");
        for (cell, _) in f1.cells() {
            f.insert(cell.restrict(&["Y", "Z"]), cell.restrict(&["X"]), 0.0)
                .unwrap();
            s.insert(cell.restrict(&["Y", "X"]), cell.restrict(&["Z"]), 0.0)
                .unwrap();
        }
        let rep = order_independence_check(&pair, &f, &s, 1e-10).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.commutativity.max_residual(), 0.0);
        assert_eq!(rep.max_identification(), 0.0);
    }

    #[test]
    fn order_sensitive_values_break_commutativity_by_the_perturbation() {
        let f3 = fixtures::noisy_copy();
        let shared = EventValueFunction::constant(0.0);
        let mut perturbed = EventValueFunction::constant(0.0);
        let event = a(&[("X", "0"), ("Y", "1"), ("Z", "1")]);
        let eps = 0.03;
        perturbed.insert(event.clone(), eps).unwrap();
        let cfg = SolverConfig::new(1.0).unwrap();
        let pair =
            DirectionPair::with_split_values(&f3, Groups::xyz(), &shared, &perturbed, cfg).unwrap();
        assert!(!pair.shares_values());
        let f = calibrate_rewards(&f3, &pair.forward(), &shared, 1.0, None).unwrap();
        let s = calibrate_rewards(&f3, &pair.swapped(), &perturbed, 1.0, None).unwrap();
        let rep = order_independence_check(&pair, &f.rewards, &s.rewards, 1e-10).unwrap();
        assert!(!rep.pass);
        assert!(rep.max_identification() <= 1e-12);
        for (triple, &res) in &rep.commutativity.residuals {
            if *triple == event {
                assert!((res - eps).abs() < 1e-12);
            } else {
                assert!(res < 1e-12);
            }
        }
    }
}
