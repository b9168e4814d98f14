//! JSON file formats for joints, rewards, interactions, values, gauge shifts,
//! single problems and countable families.

use std::collections::BTreeSet;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::coherence::EventValueFunction;
use crate::countable::{Geometric, Payoff};
use crate::dist::{Assignment, DistVector, JointTable, VariableSpec};
use crate::error::{Error, Result};
use crate::identification::{
    ContextValues, Direction, GaugeShift, Groups, InteractionTable, Orientation, RewardTable,
};
use crate::numeric::compensated_sum;
use crate::report::ExtReal;
use crate::soft_update::{SoftUpdateProblem, SolverConfig};

/// Loaded joints may be off by this much before renormalization.
pub const TOL_LOAD: f64 = 1e-9;

/// Parses `text`, naming `what` and the error location on failure.
pub fn parse<T: DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse(format!("{what}: {e}")))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableDecl {
    pub name: String,
    pub alphabet: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassEntry {
    pub assign: Assignment,
    pub p: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointFile {
    pub variables: Vec<VariableDecl>,
    pub mass: Vec<MassEntry>,
}

impl JointFile {
    pub fn from_joint(joint: &JointTable) -> Self {
        Self {
            variables: joint
                .variables()
                .iter()
                .map(|v| VariableDecl {
                    name: v.name().to_string(),
                    alphabet: v.alphabet().to_vec(),
                })
                .collect(),
            mass: joint
                .cells()
                .map(|(assign, p)| MassEntry { assign, p })
                .collect(),
        }
    }

    /// Omitted cells are zero. A total within [`TOL_LOAD`] of 1 is accepted
    /// and rescaled when it is off by more than the table tolerance.
    pub fn into_joint(self) -> Result<JointTable> {
        let vars = self
            .variables
            .into_iter()
            .map(|v| VariableSpec::new(v.name, v.alphabet))
            .collect::<Result<Vec<_>>>()?;
        let total = compensated_sum(self.mass.iter().map(|m| m.p));
        let scale =
            if (total - 1.0).abs() > crate::dist::TOL_NORM && (total - 1.0).abs() <= TOL_LOAD {
                1.0 / total
            } else {
                1.0
            };
        JointTable::from_assignments(
            vars,
            self.mass.into_iter().map(|m| (m.assign, m.p * scale)),
            TOL_LOAD,
        )
    }
}

pub fn load_joint(text: &str) -> Result<JointTable> {
    parse::<JointFile>(text, "joint file")?.into_joint()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupsDecl {
    pub x: Vec<String>,
    #[serde(default)]
    pub y: Vec<String>,
    pub z: Vec<String>,
}

impl GroupsDecl {
    pub fn from_groups(g: &Groups) -> Self {
        Self {
            x: g.x().to_vec(),
            y: g.y().to_vec(),
            z: g.z().to_vec(),
        }
    }

    pub fn to_groups(&self) -> Result<Groups> {
        Groups::new(self.x.clone(), self.y.clone(), self.z.clone())
    }
}

fn direction_from(tag: &str, groups: Option<&GroupsDecl>, default: &Groups) -> Result<Direction> {
    let orientation = Orientation::parse(tag).ok_or_else(|| {
        Error::Parse(format!(
            "unknown direction `{tag}` (expected x_given_yz or z_given_yx)"
        ))
    })?;
    let groups = match groups {
        Some(g) => g.to_groups()?,
        None => default.clone(),
    };
    Ok(Direction::new(groups, orientation))
}

fn check_vars(a: &Assignment, expected: &[String], role: &str) -> Result<()> {
    let got: BTreeSet<&str> = a.variables().collect();
    let want: BTreeSet<&str> = expected.iter().map(String::as_str).collect();
    if got != want {
        return Err(Error::Parse(format!(
            "{role} {a} must bind exactly {:?}",
            want.into_iter().collect::<Vec<_>>()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardEntry {
    pub context: Assignment,
    pub outcome: Assignment,
    pub r: ExtReal,
    /// Terminal value at the event `context ∪ outcome`.
    #[serde(rename = "V", default, skip_serializing_if = "Option::is_none")]
    pub v: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextValueEntry {
    pub context: Assignment,
    pub v: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardFile {
    pub direction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<GroupsDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convention: Option<String>,
    pub entries: Vec<RewardEntry>,
    /// `V(context)`, needed by the commutativity check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_values: Option<Vec<ContextValueEntry>>,
}

/// A reward file after validation.
#[derive(Debug, Clone)]
pub struct LoadedRewards {
    pub rewards: RewardTable,
    /// Terminal values read from the `V` fields.
    pub terminal: EventValueFunction,
    pub context_values: Option<ContextValues>,
    pub alpha: Option<f64>,
}

impl RewardFile {
    pub fn new(
        rewards: &RewardTable,
        terminal: &EventValueFunction,
        context_values: Option<&ContextValues>,
        alpha: Option<f64>,
    ) -> Result<Self> {
        let mut entries = Vec::new();
        let mut push = |ctx: &Assignment, outcome: &Assignment, r: f64| -> Result<()> {
            let v = terminal.get(&ctx.union(outcome)?);
            entries.push(RewardEntry {
                context: ctx.clone(),
                outcome: outcome.clone(),
                r: ExtReal(r),
                v,
            });
            Ok(())
        };
        for ctx in rewards.contexts() {
            let mut cells: Vec<(Assignment, f64)> = rewards
                .entries()
                .get(&ctx)
                .map(|m| m.iter().map(|(o, &r)| (o.clone(), r)).collect())
                .unwrap_or_default();
            cells.extend(
                rewards
                    .excluded()
                    .iter()
                    .filter(|(c, _)| *c == ctx)
                    .map(|(_, o)| (o.clone(), f64::NEG_INFINITY)),
            );
            cells.sort_by(|a, b| a.0.cmp(&b.0));
            for (o, r) in cells {
                push(&ctx, &o, r)?;
            }
        }
        let direction = rewards.direction();
        Ok(Self {
            direction: direction.tag().to_string(),
            alpha,
            groups: Some(GroupsDecl::from_groups(&direction.groups)),
            convention: Some(rewards.convention().to_string()),
            entries,
            context_values: context_values.map(|m| {
                m.iter()
                    .map(|(c, &v)| ContextValueEntry {
                        context: c.clone(),
                        v,
                    })
                    .collect()
            }),
        })
    }

    pub fn load(self, default_groups: &Groups) -> Result<LoadedRewards> {
        let direction = direction_from(&self.direction, self.groups.as_ref(), default_groups)?;
        let outcome_vars = direction.updated().to_vec();
        let context_vars = direction.context_vars();
        let mut rewards = RewardTable::new(
            direction,
            self.convention.unwrap_or_else(|| "unspecified".into()),
        );
        let mut terminal = EventValueFunction::new();
        let mut seen = BTreeSet::new();
        for e in self.entries {
            check_vars(&e.context, &context_vars, "context")?;
            check_vars(&e.outcome, &outcome_vars, "outcome")?;
            if !seen.insert((e.context.clone(), e.outcome.clone())) {
                return Err(Error::Parse(format!(
                    "duplicate reward entry for {} in context {}",
                    e.outcome, e.context
                )));
            }
            if let Some(v) = e.v {
                terminal.insert(e.context.union(&e.outcome)?, v)?;
            }
            rewards.insert(e.context, e.outcome, e.r.0)?;
        }
        let context_values = match self.context_values {
            None => None,
            Some(list) => {
                let mut m = ContextValues::new();
                for cv in list {
                    check_vars(&cv.context, &context_vars, "context")?;
                    if !cv.v.is_finite() {
                        return Err(Error::NonFinite {
                            what: format!("context value at {}", cv.context),
                            value: cv.v,
                        });
                    }
                    if m.insert(cv.context.clone(), cv.v).is_some() {
                        return Err(Error::Parse(format!(
                            "duplicate context value for {}",
                            cv.context
                        )));
                    }
                }
                Some(m)
            }
        };
        if let Some(a) = self.alpha {
            SolverConfig::new(a)?;
        }
        Ok(LoadedRewards {
            rewards,
            terminal,
            context_values,
            alpha: self.alpha,
        })
    }
}

pub fn load_rewards(text: &str, default_groups: &Groups) -> Result<LoadedRewards> {
    parse::<RewardFile>(text, "reward file")?.load(default_groups)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionEntry {
    pub context: Assignment,
    pub outcome: Assignment,
    pub i: ExtReal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionFile {
    pub direction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<GroupsDecl>,
    pub entries: Vec<InteractionEntry>,
}

impl InteractionFile {
    pub fn new(table: &InteractionTable) -> Self {
        Self {
            direction: table.direction().tag().to_string(),
            groups: Some(GroupsDecl::from_groups(&table.direction().groups)),
            entries: table
                .cells()
                .map(|(c, o, i)| InteractionEntry {
                    context: c.clone(),
                    outcome: o.clone(),
                    i: ExtReal(i),
                })
                .collect(),
        }
    }

    pub fn load(self, default_groups: &Groups) -> Result<InteractionTable> {
        let direction = direction_from(&self.direction, self.groups.as_ref(), default_groups)?;
        let outcome_vars = direction.updated().to_vec();
        let context_vars = direction.context_vars();
        let mut table = InteractionTable::new(direction);
        for e in self.entries {
            check_vars(&e.context, &context_vars, "context")?;
            check_vars(&e.outcome, &outcome_vars, "outcome")?;
            if table.get(&e.context, &e.outcome).is_some() {
                return Err(Error::Parse(format!(
                    "duplicate interaction entry for {} in context {}",
                    e.outcome, e.context
                )));
            }
            table.insert(e.context, e.outcome, e.i.0)?;
        }
        Ok(table)
    }
}

pub fn load_interaction(text: &str, default_groups: &Groups) -> Result<InteractionTable> {
    parse::<InteractionFile>(text, "interaction file")?.load(default_groups)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueEntry {
    pub event: Assignment,
    pub v: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValuesFile {
    pub entries: Vec<ValueEntry>,
    /// Value of every event not listed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<f64>,
}

pub fn load_values(text: &str) -> Result<EventValueFunction> {
    let file: ValuesFile = parse(text, "values file")?;
    let mut f = EventValueFunction::new().with_fallback(file.fallback);
    for e in file.entries {
        if f.entries().contains_key(&e.event) {
            return Err(Error::Parse(format!(
                "duplicate value for event {}",
                e.event
            )));
        }
        f.insert(e.event, e.v)?;
    }
    Ok(f)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftEntry {
    pub context: Assignment,
    pub c: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaugeFile {
    pub shifts: Vec<ShiftEntry>,
}

pub fn load_gauge(text: &str) -> Result<GaugeShift> {
    let file: GaugeFile = parse(text, "gauge file")?;
    let mut m = std::collections::BTreeMap::new();
    for e in file.shifts {
        if m.insert(e.context.clone(), e.c).is_some() {
            return Err(Error::Parse(format!(
                "duplicate shift for context {}",
                e.context
            )));
        }
    }
    GaugeShift::new(m)
}

/// A single problem over an indexed outcome set.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub prior: Vec<f64>,
    pub reward: Vec<ExtReal>,
    pub terminal: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl ProblemFile {
    pub fn into_problem(self, alpha: Option<f64>) -> Result<SoftUpdateProblem> {
        let alpha = alpha
            .or(self.alpha)
            .ok_or_else(|| Error::Parse("problem file: no alpha given".into()))?;
        let prior = DistVector::indexed(self.prior)?;
        SoftUpdateProblem::new(
            prior,
            self.reward.into_iter().map(|r| r.0).collect(),
            self.terminal,
            SolverConfig::new(alpha)?,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorDecl {
    Geometric { q: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayoffDecl {
    Constant {
        value: f64,
    },
    Linear {
        slope: f64,
        #[serde(default)]
        intercept: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsDecl {
    pub tail: String,
    pub payoff: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountableFile {
    pub prior: PriorDecl,
    pub payoff: PayoffDecl,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsDecl>,
}

impl CountableFile {
    pub fn into_family(self) -> Result<Geometric> {
        let PriorDecl::Geometric { q } = self.prior;
        let (payoff, payoff_kind) = match self.payoff {
            PayoffDecl::Constant { value } => (Payoff::Constant(value), "constant"),
            PayoffDecl::Linear { slope, intercept } => {
                (Payoff::Linear { slope, intercept }, "linear")
            }
        };
        if let Some(b) = &self.bounds {
            if b.tail != "geometric" {
                return Err(Error::Parse(format!("unsupported tail bound `{}`", b.tail)));
            }
            if b.payoff != payoff_kind {
                return Err(Error::Parse(format!(
                    "payoff bound `{}` does not match payoff kind `{payoff_kind}`",
                    b.payoff
                )));
            }
        }
        Geometric::new(q, payoff)
    }
}

pub fn load_countable(text: &str) -> Result<Geometric> {
    parse::<CountableFile>(text, "countable family file")?.into_family()
}
