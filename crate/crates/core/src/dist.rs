//! Finite joint distributions over named discrete variables.
//!
//! A [`JointTable`] stores dense probability mass in row-major order (the last
//! variable varies fastest). Marginal tables remember the table they were cut
//! from, and every query is evaluated against that original mass with the same
//! cell order, so `marginal(marginal(J, A ∪ B), A)` equals `marginal(J, A)`
//! bit for bit.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, CompensatedSum};

/// Default tolerance on `|sum(p) - 1|` for tables and distribution vectors.
pub const TOL_NORM: f64 = 1e-12;

/// A named discrete variable with an ordered alphabet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSpec {
    name: String,
    alphabet: Vec<String>,
}

impl VariableSpec {
    pub fn new<S: Into<String>, L: Into<String>>(
        name: S,
        alphabet: impl IntoIterator<Item = L>,
    ) -> Result<Self> {
        let name = name.into();
        let alphabet: Vec<String> = alphabet.into_iter().map(Into::into).collect();
        if name.is_empty() {
            return Err(Error::InvalidVariable {
                name,
                reason: "empty name".into(),
            });
        }
        if alphabet.is_empty() {
            return Err(Error::InvalidVariable {
                name,
                reason: "empty alphabet".into(),
            });
        }
        let mut seen = BTreeSet::new();
        for label in &alphabet {
            if !seen.insert(label.as_str()) {
                return Err(Error::InvalidVariable {
                    name,
                    reason: format!("duplicate label `{label}`"),
                });
            }
        }
        Ok(Self { name, alphabet })
    }

    /// Alphabet `"0".."k-1"`.
    pub fn indexed<S: Into<String>>(name: S, size: usize) -> Result<Self> {
        Self::new(name, (0..size).map(|i| i.to_string()))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn size(&self) -> usize {
        self.alphabet.len()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.alphabet.iter().position(|l| l == label)
    }
}

/// A set of `variable = label` bindings, kept sorted by variable name.
///
/// Because the key order is canonical, two assignments built in different
/// orders compare, hash and print identically.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Assignment(BTreeMap<String, String>);

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds from pairs; a variable bound twice is an error.
    pub fn from_pairs<K: Into<String>, V: Into<String>>(
        pairs: impl IntoIterator<Item = (K, V)>,
    ) -> Result<Self> {
        let mut a = Self::new();
        for (k, v) in pairs {
            let k = k.into();
            if a.0.contains_key(&k) {
                return Err(Error::DuplicateAssignment(format!(
                    "variable `{k}` bound twice"
                )));
            }
            a.0.insert(k, v.into());
        }
        Ok(a)
    }

    pub fn get(&self, variable: &str) -> Option<&str> {
        self.0.get(variable).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    /// Union of two assignments; conflicting bindings are an error.
    pub fn union(&self, other: &Assignment) -> Result<Assignment> {
        let mut out = self.clone();
        for (k, v) in &other.0 {
            match out.0.get(k) {
                Some(existing) if existing != v => {
                    return Err(Error::DuplicateAssignment(format!(
                        "`{k}` bound to both `{existing}` and `{v}`"
                    )))
                }
                _ => {
                    out.0.insert(k.clone(), v.clone());
                }
            }
        }
        Ok(out)
    }

    /// Keeps only the listed variables.
    pub fn restrict<S: AsRef<str>>(&self, variables: &[S]) -> Assignment {
        Assignment(
            variables
                .iter()
                .filter_map(|v| {
                    let v = v.as_ref();
                    self.0.get(v).map(|l| (v.to_string(), l.clone()))
                })
                .collect(),
        )
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}={v}")?;
        }
        f.write_str("}")
    }
}

/// Enumerates the product of the given variables' alphabets (last fastest).
pub fn enumerate_assignments(vars: &[VariableSpec]) -> Vec<Assignment> {
    let total: usize = vars.iter().map(VariableSpec::size).product();
    (0..total)
        .map(|flat| {
            let mut rem = flat;
            let mut labels = vec![0usize; vars.len()];
            for (k, v) in vars.iter().enumerate().rev() {
                labels[k] = rem % v.size();
                rem /= v.size();
            }
            Assignment(
                vars.iter()
                    .zip(labels)
                    .map(|(v, l)| (v.name.clone(), v.alphabet[l].clone()))
                    .collect(),
            )
        })
        .collect()
}

/// A probability vector over the alphabet product of a variable group.
#[derive(Debug, Clone, PartialEq)]
pub struct DistVector {
    over: Vec<VariableSpec>,
    probs: Vec<f64>,
}

impl DistVector {
    pub fn new(over: Vec<VariableSpec>, probs: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(over, probs, TOL_NORM)
    }

    pub fn with_tolerance(over: Vec<VariableSpec>, probs: Vec<f64>, tol: f64) -> Result<Self> {
        let expected: usize = over.iter().map(VariableSpec::size).product();
        if probs.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: probs.len(),
            });
        }
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("probability at index {i}"),
                    value: p,
                });
            }
            if p < 0.0 {
                return Err(Error::NegativeMass {
                    at: format!("index {i}"),
                    p,
                });
            }
        }
        let total = compensated_sum(probs.iter().copied());
        if (total - 1.0).abs() > tol {
            return Err(Error::NotNormalized { total, tol });
        }
        Ok(Self { over, probs })
    }

    /// Distribution over a single synthetic variable `n` with labels `0..len`.
    pub fn indexed(probs: Vec<f64>) -> Result<Self> {
        let var = VariableSpec::indexed("n", probs.len().max(1))?;
        Self::new(vec![var], probs)
    }

    /// Same outcome space, different probabilities.
    pub fn with_probs(&self, probs: Vec<f64>) -> Result<Self> {
        Self::new(self.over.clone(), probs)
    }

    pub fn over(&self) -> &[VariableSpec] {
        &self.over
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn outcomes(&self) -> Vec<Assignment> {
        enumerate_assignments(&self.over)
    }

    pub fn index_of(&self, outcome: &Assignment) -> Option<usize> {
        if outcome.len() != self.over.len() {
            return None;
        }
        let mut flat = 0;
        for v in &self.over {
            let l = v.label_index(outcome.get(&v.name)?)?;
            flat = flat * v.size() + l;
        }
        Some(flat)
    }

    /// Indices with positive probability.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| i)
    }
}

#[derive(Debug)]
struct Dense {
    variables: Vec<VariableSpec>,
    mass: Vec<f64>,
}

impl Dense {
    fn position(&self, name: &str) -> Result<usize> {
        self.variables
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    /// (variable position, label index) pairs for a partial assignment.
    fn resolve(&self, a: &Assignment) -> Result<Vec<(usize, usize)>> {
        a.iter()
            .map(|(var, label)| {
                let pos = self.position(var)?;
                let l =
                    self.variables[pos]
                        .label_index(label)
                        .ok_or_else(|| Error::UnknownLabel {
                            variable: var.to_string(),
                            label: label.to_string(),
                        })?;
                Ok((pos, l))
            })
            .collect()
    }

    /// Sums cells matching `filter`, grouped by the labels of `group`.
    ///
    /// Cells are visited in row-major order, which fixes the summation order
    /// for every query.
    fn grouped_sums(&self, group: &[usize], filter: &[(usize, usize)]) -> Vec<f64> {
        let sizes: Vec<usize> = self.variables.iter().map(VariableSpec::size).collect();
        let out_len: usize = group.iter().map(|&g| sizes[g]).product();
        let mut acc = vec![CompensatedSum::new(); out_len];
        let mut labels = vec![0usize; sizes.len()];
        for (flat, &p) in self.mass.iter().enumerate() {
            let mut rem = flat;
            for k in (0..sizes.len()).rev() {
                labels[k] = rem % sizes[k];
                rem /= sizes[k];
            }
            if filter.iter().any(|&(pos, l)| labels[pos] != l) {
                continue;
            }
            let mut idx = 0;
            for &g in group {
                idx = idx * sizes[g] + labels[g];
            }
            acc[idx].add(p);
        }
        acc.iter().map(CompensatedSum::value).collect()
    }
}

/// An exact finite joint distribution over named variables.
#[derive(Debug, Clone)]
pub struct JointTable {
    table: Arc<Dense>,
    root: Arc<Dense>,
}

impl PartialEq for JointTable {
    fn eq(&self, other: &Self) -> bool {
        self.table.variables == other.table.variables && self.table.mass == other.table.mass
    }
}

impl JointTable {
    /// Dense constructor; `mass` is row-major over `variables`.
    pub fn new(variables: Vec<VariableSpec>, mass: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(variables, mass, TOL_NORM)
    }

    pub fn with_tolerance(variables: Vec<VariableSpec>, mass: Vec<f64>, tol: f64) -> Result<Self> {
        let mut names = BTreeSet::new();
        for v in &variables {
            if !names.insert(v.name.as_str()) {
                return Err(Error::InvalidVariable {
                    name: v.name.clone(),
                    reason: "variable declared twice".into(),
                });
            }
        }
        let dense = Dense { variables, mass };
        let expected: usize = dense.variables.iter().map(VariableSpec::size).product();
        if dense.mass.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: dense.mass.len(),
            });
        }
        for (flat, &p) in dense.mass.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                let at = enumerate_one(&dense.variables, flat).to_string();
                if !p.is_finite() {
                    return Err(Error::NonFinite {
                        what: format!("probability at {at}"),
                        value: p,
                    });
                }
                return Err(Error::NegativeMass { at, p });
            }
        }
        let total = compensated_sum(dense.mass.iter().copied());
        if (total - 1.0).abs() > tol {
            return Err(Error::NotNormalized { total, tol });
        }
        let dense = Arc::new(dense);
        Ok(Self {
            table: dense.clone(),
            root: dense,
        })
    }

    /// Sparse constructor: omitted full assignments carry zero mass.
    pub fn from_assignments(
        variables: Vec<VariableSpec>,
        cells: impl IntoIterator<Item = (Assignment, f64)>,
        tol: f64,
    ) -> Result<Self> {
        let probe = Dense {
            variables,
            mass: Vec::new(),
        };
        let sizes: Vec<usize> = probe.variables.iter().map(VariableSpec::size).collect();
        let mut mass = vec![0.0; sizes.iter().product()];
        let mut filled = vec![false; mass.len()];
        for (a, p) in cells {
            let resolved = probe.resolve(&a)?;
            if resolved.len() != probe.variables.len() {
                return Err(Error::PartialAssignment(a.to_string()));
            }
            let mut labels = vec![0; sizes.len()];
            for (pos, l) in resolved {
                labels[pos] = l;
            }
            let flat = labels.iter().zip(&sizes).fold(0, |acc, (l, s)| acc * s + l);
            if filled[flat] {
                return Err(Error::DuplicateAssignment(a.to_string()));
            }
            if p < 0.0 {
                return Err(Error::NegativeMass {
                    at: a.to_string(),
                    p,
                });
            }
            filled[flat] = true;
            mass[flat] = p;
        }
        Self::with_tolerance(probe.variables, mass, tol)
    }

    pub fn variables(&self) -> &[VariableSpec] {
        &self.table.variables
    }

    pub fn variable(&self, name: &str) -> Result<&VariableSpec> {
        let pos = self.table.position(name)?;
        Ok(&self.table.variables[pos])
    }

    /// Variable specs for a list of names, in the given order.
    pub fn specs<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<VariableSpec>> {
        names
            .iter()
            .map(|n| self.variable(n.as_ref()).cloned())
            .collect()
    }

    /// Row-major dense mass.
    pub fn mass(&self) -> &[f64] {
        &self.table.mass
    }

    /// Full assignments paired with their probability, in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (Assignment, f64)> + '_ {
        enumerate_assignments(&self.table.variables)
            .into_iter()
            .zip(self.table.mass.iter().copied())
    }

    fn check_in_table(&self, a: &Assignment) -> Result<()> {
        self.table.resolve(a).map(|_| ())
    }

    /// Probability of the event described by a (possibly partial) assignment.
    pub fn event_mass(&self, event: &Assignment) -> Result<f64> {
        self.check_in_table(event)?;
        let filter = self.root.resolve(event)?;
        Ok(self.root.grouped_sums(&[], &filter)[0])
    }

    /// Sums every variable outside `keep` out of the table.
    pub fn marginal<S: AsRef<str>>(&self, keep: &[S]) -> Result<JointTable> {
        let mut wanted = BTreeSet::new();
        for name in keep {
            let name = name.as_ref();
            self.table.position(name)?;
            wanted.insert(name);
        }
        let kept: Vec<VariableSpec> = self
            .table
            .variables
            .iter()
            .filter(|v| wanted.contains(v.name.as_str()))
            .cloned()
            .collect();
        let group: Vec<usize> = kept
            .iter()
            .map(|v| self.root.position(&v.name))
            .collect::<Result<_>>()?;
        let mass = self.root.grouped_sums(&group, &[]);
        Ok(JointTable {
            table: Arc::new(Dense {
                variables: kept,
                mass,
            }),
            root: self.root.clone(),
        })
    }

    /// `P(target | context)`, renormalizing the matching slice.
    ///
    /// Outcomes follow the alphabet product of `target` in the given order.
    pub fn conditional<S: AsRef<str>>(
        &self,
        target: &[S],
        context: &Assignment,
    ) -> Result<DistVector> {
        self.check_in_table(context)?;
        let mut over = Vec::with_capacity(target.len());
        let mut group = Vec::with_capacity(target.len());
        for name in target {
            let name = name.as_ref();
            if context.get(name).is_some() {
                return Err(Error::OverlappingGroups(name.to_string()));
            }
            over.push(self.variable(name)?.clone());
            group.push(self.root.position(name)?);
        }
        let filter = self.root.resolve(context)?;
        let context_mass = self.root.grouped_sums(&[], &filter)[0];
        if context_mass <= 0.0 {
            return Err(Error::ZeroMassContext(context.to_string()));
        }
        let slice = self.root.grouped_sums(&group, &filter);
        let probs = slice.into_iter().map(|p| p / context_mass).collect();
        DistVector::with_tolerance(over, probs, 1e-9)
    }

    /// Conditional pointwise mutual information `log P(x|y,z) / P(x|y)`.
    ///
    /// Evaluated as `log [P(x,y,z) P(y)] / [P(y,z) P(x,y)]`, a form that is
    /// exactly symmetric under `x <-> z`. Returns `-inf` when `P(x|y,z) = 0`
    /// while `P(x|y) > 0`.
    pub fn pmi(&self, x: &Assignment, z: &Assignment, y: &Assignment) -> Result<f64> {
        for (a, b) in [(x, z), (x, y), (z, y)] {
            if let Some(v) = a.variables().find(|v| b.get(v).is_some()) {
                return Err(Error::OverlappingGroups(v.to_string()));
            }
        }
        let yz = y.union(z)?;
        let xy = x.union(y)?;
        let xyz = xy.union(z)?;
        let p_y = self.event_mass(y)?;
        if p_y <= 0.0 {
            return Err(Error::ZeroMassContext(y.to_string()));
        }
        let p_yz = self.event_mass(&yz)?;
        if p_yz <= 0.0 {
            return Err(Error::ZeroMassContext(yz.to_string()));
        }
        let p_xy = self.event_mass(&xy)?;
        if p_xy <= 0.0 {
            return Err(Error::UndefinedPmi {
                outcome: x.to_string(),
                context: y.to_string(),
            });
        }
        let p_xyz = self.event_mass(&xyz)?;
        if p_xyz == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(((p_xyz * p_y) / (p_yz * p_xy)).ln())
    }
}

fn enumerate_one(vars: &[VariableSpec], flat: usize) -> Assignment {
    let mut rem = flat;
    let mut pairs = Vec::with_capacity(vars.len());
    for v in vars.iter().rev() {
        pairs.push((v.name.clone(), v.alphabet[rem % v.size()].clone()));
        rem /= v.size();
    }
    Assignment(pairs.into_iter().collect())
}
