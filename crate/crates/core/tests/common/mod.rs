#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tiltid::coherence::EventValueFunction;
use tiltid::dist::{Assignment, DistVector, JointTable, VariableSpec};
use tiltid::identification::GaugeShift;
use tiltid::soft_update::{SoftUpdateProblem, SolverConfig};

pub const INSTANCES: usize = 200;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Flat Dirichlet draw of length `n`.
pub fn dirichlet(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

/// `X`, `Y`, `Z` with alphabets of size 2 to 4 and strictly positive mass.
pub fn random_joint(rng: &mut impl Rng) -> JointTable {
    let vars: Vec<VariableSpec> = ["X", "Y", "Z"]
        .iter()
        .map(|n| VariableSpec::indexed(*n, rng.random_range(2..=4)).unwrap())
        .collect();
    let size = vars.iter().map(VariableSpec::size).product();
    JointTable::new(vars, dirichlet(rng, size)).unwrap()
}

/// Outcomes 2 to 6, `|r|, |V| <= 5`, `alpha` uniform on `[0.1, 10]`.
pub fn random_problem(rng: &mut impl Rng) -> SoftUpdateProblem {
    let n = rng.random_range(2..=6);
    random_problem_of_size(rng, n)
}

pub fn random_problem_of_size(rng: &mut impl Rng, n: usize) -> SoftUpdateProblem {
    let prior = DistVector::indexed(dirichlet(rng, n)).unwrap();
    let r = (0..n).map(|_| rng.random_range(-5.0..=5.0)).collect();
    let v = (0..n).map(|_| rng.random_range(-5.0..=5.0)).collect();
    let alpha = rng.random_range(0.1..=10.0);
    SoftUpdateProblem::new(prior, r, v, SolverConfig::new(alpha).unwrap()).unwrap()
}

/// A candidate on the prior's support, sometimes with a smaller support.
pub fn random_candidate(rng: &mut impl Rng, prior: &DistVector) -> DistVector {
    let support: Vec<usize> = prior.support().collect();
    let mut keep: Vec<usize> = support
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() < 0.8)
        .collect();
    if keep.is_empty() {
        keep.push(support[rng.random_range(0..support.len())]);
    }
    let w = dirichlet(rng, keep.len());
    let mut probs = vec![0.0; prior.len()];
    for (&i, &p) in keep.iter().zip(&w) {
        probs[i] = p;
    }
    prior.with_probs(probs).unwrap()
}

/// Terminal values on every full cell of `joint`, uniform on `[-5, 5]`.
pub fn random_terminal(rng: &mut impl Rng, joint: &JointTable) -> EventValueFunction {
    let mut f = EventValueFunction::new();
    for (cell, _) in joint.cells() {
        f.insert(cell, rng.random_range(-5.0..=5.0)).unwrap();
    }
    f
}

/// Independent uniform shift on `[-5, 5]` for each context.
pub fn random_shift(
    rng: &mut impl Rng,
    contexts: impl IntoIterator<Item = Assignment>,
) -> GaugeShift {
    GaugeShift::new(
        contexts
            .into_iter()
            .map(|c| (c, rng.random_range(-5.0..=5.0)))
            .collect(),
    )
    .unwrap()
}
