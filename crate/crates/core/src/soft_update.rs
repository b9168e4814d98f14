//! KL-regularized single-context update.
//!
//! For a prior `p`, rewards `r` and terminal values `V` the objective
//!
//! ```text
//! J(q) = sum_x q(x) [ r(x) - (1/alpha) log(q(x)/p(x)) + V(x) ]
//! ```
//!
//! is maximized by the exponential tilt `q*(x) ∝ p(x) exp{alpha [r(x) + V(x)]}`
//! and its optimal value is the soft value `(1/alpha) log Z`. For every
//! candidate `q << p`,
//!
//! ```text
//! J(q) = (1/alpha) log Z - (1/alpha) KL(q || q*)
//! ```
//!
//! which [`SoftUpdateProblem::kl_decomposition_residual`] checks numerically.
//!
//! A reward of `-inf` marks an outcome the tilt must drop (weight zero). It is
//! how posterior-null outcomes of a calibrated reward table enter a problem.

use crate::dist::DistVector;
use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, CompensatedSum};

/// Inverse temperature and numerical tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub alpha: f64,
    pub tol: f64,
}

impl SolverConfig {
    pub const DEFAULT_TOL: f64 = 1e-12;

    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidAlpha(alpha));
        }
        Ok(Self {
            alpha,
            tol: Self::DEFAULT_TOL,
        })
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }
}

/// One context's slice of the objective: prior, rewards, terminal values.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftUpdateProblem {
    prior: DistVector,
    reward: Vec<f64>,
    terminal: Vec<f64>,
    config: SolverConfig,
}

/// Maximizer and optimal value of a [`SoftUpdateProblem`].
#[derive(Debug, Clone, PartialEq)]
pub struct SoftSolution {
    pub optimizer: DistVector,
    pub soft_value: f64,
    pub log_normalizer: f64,
}

impl SoftUpdateProblem {
    /// Rewards and terminals must be finite on the prior's support (rewards
    /// may also be `-inf`); entries off the support are ignored.
    pub fn new(
        prior: DistVector,
        reward: Vec<f64>,
        terminal: Vec<f64>,
        config: SolverConfig,
    ) -> Result<Self> {
        for v in [&reward, &terminal] {
            if v.len() != prior.len() {
                return Err(Error::LengthMismatch {
                    expected: prior.len(),
                    got: v.len(),
                });
            }
        }
        SolverConfig::new(config.alpha)?;
        for i in prior.support() {
            if reward[i].is_nan() || reward[i] == f64::INFINITY {
                return Err(Error::NonFinite {
                    what: format!("reward at outcome {i}"),
                    value: reward[i],
                });
            }
            if !terminal[i].is_finite() {
                return Err(Error::NonFinite {
                    what: format!("terminal value at outcome {i}"),
                    value: terminal[i],
                });
            }
        }
        Ok(Self {
            prior,
            reward,
            terminal,
            config,
        })
    }

    pub fn prior(&self) -> &DistVector {
        &self.prior
    }

    pub fn reward(&self) -> &[f64] {
        &self.reward
    }

    pub fn terminal(&self) -> &[f64] {
        &self.terminal
    }

    pub fn config(&self) -> SolverConfig {
        self.config
    }

    pub fn alpha(&self) -> f64 {
        self.config.alpha
    }

    /// Same problem with every reward shifted by `c`.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        let reward = self.reward.iter().map(|r| r + c).collect();
        Self::new(
            self.prior.clone(),
            reward,
            self.terminal.clone(),
            self.config,
        )
    }

    /// `log p(x) + alpha (r(x) + V(x))`, `-inf` off the support.
    pub(crate) fn log_weights(&self) -> Vec<f64> {
        let alpha = self.config.alpha;
        self.prior
            .probs()
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                if p == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    p.ln() + alpha * (self.reward[i] + self.terminal[i])
                }
            })
            .collect()
    }

    fn check_candidate(&self, candidate: &DistVector) -> Result<()> {
        if candidate.len() != self.prior.len() {
            return Err(Error::LengthMismatch {
                expected: self.prior.len(),
                got: candidate.len(),
            });
        }
        for (index, (&q, &p)) in candidate.probs().iter().zip(self.prior.probs()).enumerate() {
            if q > 0.0 && p == 0.0 {
                return Err(Error::SupportViolation { index, mass: q });
            }
        }
        Ok(())
    }

    /// `J(q)`, with `0 log 0 = 0`.
    pub fn objective_value(&self, candidate: &DistVector) -> Result<f64> {
        self.check_candidate(candidate)?;
        let mut expected = CompensatedSum::new();
        let mut kl = CompensatedSum::new();
        for (i, (&q, &p)) in candidate.probs().iter().zip(self.prior.probs()).enumerate() {
            if q == 0.0 {
                continue;
            }
            if self.reward[i] == f64::NEG_INFINITY {
                return Ok(f64::NEG_INFINITY);
            }
            expected.add(q * (self.reward[i] + self.terminal[i]));
            kl.add(q * (q / p).ln());
        }
        Ok(expected.value() - kl.value() / self.config.alpha)
    }

    /// Closed-form maximizer via max-shifted log-sum-exp.
    pub fn solve_tilt(&self) -> Result<SoftSolution> {
        let weights = self.log_weights();
        let log_normalizer = log_sum_exp(&weights);
        if log_normalizer == f64::NEG_INFINITY {
            return Err(Error::DegenerateProblem);
        }
        let probs = weights
            .iter()
            .map(|&w| {
                if w == f64::NEG_INFINITY {
                    0.0
                } else {
                    (w - log_normalizer).exp()
                }
            })
            .collect();
        let optimizer = self.prior.with_probs(probs)?;
        Ok(SoftSolution {
            optimizer,
            soft_value: log_normalizer / self.config.alpha,
            log_normalizer,
        })
    }

    /// `(1/alpha) log sum_x p(x) exp{alpha [r(x) + V(x)]}`.
    pub fn soft_value(&self) -> Result<f64> {
        let log_normalizer = log_sum_exp(&self.log_weights());
        if log_normalizer == f64::NEG_INFINITY {
            return Err(Error::DegenerateProblem);
        }
        Ok(log_normalizer / self.config.alpha)
    }

    /// `|J(q) - [soft_value - (1/alpha) KL(q || q*)]|`.
    ///
    /// The KL term is evaluated from log-weights, so optimizer atoms that
    /// underflow to zero do not turn the residual infinite.
    pub fn kl_decomposition_residual(&self, candidate: &DistVector) -> Result<f64> {
        let objective = self.objective_value(candidate)?;
        let weights = self.log_weights();
        let log_normalizer = log_sum_exp(&weights);
        if log_normalizer == f64::NEG_INFINITY {
            return Err(Error::DegenerateProblem);
        }
        let mut kl = CompensatedSum::new();
        for (index, (&q, &w)) in candidate.probs().iter().zip(&weights).enumerate() {
            if q == 0.0 {
                continue;
            }
            if w == f64::NEG_INFINITY {
                // The candidate charges an outcome the tilt excludes.
                return Err(Error::SupportViolation { index, mass: q });
            }
            kl.add(q * (q.ln() - (w - log_normalizer)));
        }
        let alpha = self.config.alpha;
        Ok((objective - (log_normalizer / alpha - kl.value() / alpha)).abs())
    }
}
