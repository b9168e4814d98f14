//! Log-normalizers over countable index sets, with truncation certificates.
//!
//! `Z = sum_n p_n exp{payoff(n)}` is summed up to a truncation index `N`
//! that doubles until a user-supplied analytic bound on the remaining tail
//! falls below `eps_tail` times the partial sum. Divergence is only
//! semidecidable, so the result carries a three-valued status.

use serde::Serialize;

use crate::dist::{DistVector, VariableSpec};
use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, CompensatedSum, LogAccumulator};
use crate::soft_update::SoftUpdateProblem;

/// A prior over `n = 0, 1, 2, ...` with a payoff and analytic tail bounds.
///
/// `payoff(n)` is the already-scaled exponent `alpha [r(n) + V(n)]`.
pub trait CountableFamily {
    /// `ln p_n`, `-inf` where `p_n = 0`.
    fn log_prior(&self, n: u64) -> f64;

    fn payoff(&self, n: u64) -> f64;

    /// `T(N) >= sum_{n > N} p_n`.
    fn prior_tail(&self, n: u64) -> f64;

    /// `B(N) >= sup_{n > N} payoff(n)`; may be `+inf`.
    fn payoff_sup(&self, n: u64) -> f64;

    /// Upper bound on `sum_{n > N} p_n exp{payoff(n)}`.
    ///
    /// Defaults to `T(N) exp{B(N)}` with `0 * inf = 0`. Families with a
    /// sharper closed form should override it.
    fn tilted_tail(&self, n: u64) -> f64 {
        let t = self.prior_tail(n);
        if t == 0.0 {
            return 0.0;
        }
        t * self.payoff_sup(n).exp()
    }

    /// Last index that can carry mass, for finitely supported families.
    fn support_end(&self) -> Option<u64> {
        None
    }
}

/// Payoff rules for [`Geometric`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Payoff {
    Constant(f64),
    /// `slope * n + intercept`.
    Linear {
        slope: f64,
        intercept: f64,
    },
}

impl Payoff {
    fn slope(self) -> f64 {
        match self {
            Payoff::Constant(_) => 0.0,
            Payoff::Linear { slope, .. } => slope,
        }
    }

    fn intercept(self) -> f64 {
        match self {
            Payoff::Constant(v) => v,
            Payoff::Linear { intercept, .. } => intercept,
        }
    }
}

/// `p_n = (1 - q) q^n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Geometric {
    q: f64,
    payoff: Payoff,
}

impl Geometric {
    pub fn new(q: f64, payoff: Payoff) -> Result<Self> {
        if !(0.0..1.0).contains(&q) {
            return Err(Error::InvalidBounds(format!(
                "geometric ratio must lie in [0, 1), got {q}"
            )));
        }
        if !payoff.slope().is_finite() || !payoff.intercept().is_finite() {
            return Err(Error::NonFinite {
                what: "payoff coefficient".into(),
                value: if payoff.slope().is_finite() {
                    payoff.intercept()
                } else {
                    payoff.slope()
                },
            });
        }
        Ok(Self { q, payoff })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn payoff_rule(&self) -> Payoff {
        self.payoff
    }

    /// Ratio of consecutive tilted terms, `q exp{slope}`.
    pub fn tilted_ratio(&self) -> f64 {
        self.q * self.payoff.slope().exp()
    }
}

impl CountableFamily for Geometric {
    fn log_prior(&self, n: u64) -> f64 {
        if n == 0 {
            return (1.0 - self.q).ln();
        }
        (1.0 - self.q).ln() + n as f64 * self.q.ln()
    }

    fn payoff(&self, n: u64) -> f64 {
        self.payoff.intercept() + self.payoff.slope() * n as f64
    }

    fn prior_tail(&self, n: u64) -> f64 {
        self.q.powf(n as f64 + 1.0)
    }

    fn payoff_sup(&self, n: u64) -> f64 {
        match self.payoff {
            Payoff::Constant(v) => v,
            Payoff::Linear { slope, .. } if slope > 0.0 => f64::INFINITY,
            Payoff::Linear { .. } => self.payoff(n + 1),
        }
    }

    /// Closed form `(1 - q) e^b rho^(N+1) / (1 - rho)` with `rho = q e^slope`.
    fn tilted_tail(&self, n: u64) -> f64 {
        let rho = self.tilted_ratio();
        if rho >= 1.0 {
            return f64::INFINITY;
        }
        if rho == 0.0 {
            return 0.0;
        }
        ((1.0 - self.q).ln() + self.payoff.intercept() + (n as f64 + 1.0) * rho.ln()
            - (-rho).ln_1p())
        .exp()
    }
}

/// A finite problem viewed as a countable family with zeros past its last
/// outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteEmbedded {
    log_prior: Vec<f64>,
    payoff: Vec<f64>,
}

impl FiniteEmbedded {
    pub fn from_problem(problem: &SoftUpdateProblem) -> Self {
        let alpha = problem.alpha();
        let log_prior = problem
            .prior()
            .probs()
            .iter()
            .map(|&p| if p == 0.0 { f64::NEG_INFINITY } else { p.ln() })
            .collect();
        let payoff = problem
            .reward()
            .iter()
            .zip(problem.terminal())
            .map(|(r, v)| alpha * (r + v))
            .collect();
        Self { log_prior, payoff }
    }
}

impl CountableFamily for FiniteEmbedded {
    fn log_prior(&self, n: u64) -> f64 {
        self.log_prior
            .get(n as usize)
            .copied()
            .unwrap_or(f64::NEG_INFINITY)
    }

    fn payoff(&self, n: u64) -> f64 {
        self.payoff.get(n as usize).copied().unwrap_or(0.0)
    }

    fn prior_tail(&self, n: u64) -> f64 {
        if n as usize + 1 >= self.log_prior.len() {
            return 0.0;
        }
        let probs: Vec<f64> = self.log_prior[n as usize + 1..]
            .iter()
            .map(|l| l.exp())
            .collect();
        probs.iter().sum()
    }

    fn payoff_sup(&self, n: u64) -> f64 {
        self.payoff
            .iter()
            .skip(n as usize + 1)
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn support_end(&self) -> Option<u64> {
        Some(self.log_prior.len().saturating_sub(1) as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateStatus {
    /// The tail bound is below `eps_tail` times the partial sum.
    Finite,
    /// Partial sums passed the explosion threshold with nondecreasing terms
    /// and no finite tail bound exists.
    Diverged,
    /// Neither of the above within the doubling budget.
    Inconclusive,
}

impl CertificateStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CertificateStatus::Finite => "finite",
            CertificateStatus::Diverged => "diverged",
            CertificateStatus::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruncationCertificate {
    /// Truncation index `N`; terms `0..=N` were summed.
    pub n_max: u64,
    pub log_partial: f64,
    /// `sum_{n <= N} p_n exp{payoff(n)}`; may overflow to `inf`.
    pub partial: f64,
    pub tail_bound: f64,
    pub status: CertificateStatus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationConfig {
    pub eps_tail: f64,
    pub initial_n: u64,
    pub max_doublings: u32,
    pub explosion_threshold: f64,
}

impl TruncationConfig {
    pub fn new(eps_tail: f64) -> Self {
        Self {
            eps_tail,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps_tail > 0.0 && self.eps_tail.is_finite()) {
            return Err(Error::InvalidBounds(format!(
                "eps_tail must be positive, got {}",
                self.eps_tail
            )));
        }
        if self.initial_n == 0 {
            return Err(Error::InvalidBounds(
                "initial truncation index must be positive".into(),
            ));
        }
        if self.explosion_threshold.is_nan() || self.explosion_threshold <= 0.0 {
            return Err(Error::InvalidBounds(
                "explosion threshold must be positive".into(),
            ));
        }
        Ok(())
    }
}

impl Default for TruncationConfig {
    fn default() -> Self {
        Self {
            eps_tail: 1e-9,
            initial_n: 16,
            max_doublings: 20,
            explosion_threshold: 1e12,
        }
    }
}

fn log_term(family: &dyn CountableFamily, n: u64) -> f64 {
    let lp = family.log_prior(n);
    if lp == f64::NEG_INFINITY {
        return lp;
    }
    lp + family.payoff(n)
}

/// Bounds seen at the previous sample point, for monotonicity checks.
struct BoundTracker {
    prior_tail: f64,
    payoff_sup: f64,
    tilted_tail: f64,
}

impl BoundTracker {
    fn check(&mut self, n: u64, family: &dyn CountableFamily, prior_mass: f64) -> Result<f64> {
        let t = family.prior_tail(n);
        let b = family.payoff_sup(n);
        let u = family.tilted_tail(n);
        if t.is_nan() || t < 0.0 || t > self.prior_tail {
            return Err(Error::InvalidBounds(format!(
                "prior tail T({n}) = {t} is negative or increasing"
            )));
        }
        if b.is_nan() || b > self.payoff_sup {
            return Err(Error::InvalidBounds(format!(
                "payoff bound B({n}) = {b} is increasing"
            )));
        }
        if u.is_nan() || u < 0.0 || u > self.tilted_tail {
            return Err(Error::InvalidBounds(format!(
                "tilted tail at {n} = {u} is negative or increasing"
            )));
        }
        if t < 1.0 - prior_mass - 1e-12 {
            return Err(Error::InvalidBounds(format!(
                "T({n}) = {t} is below the remaining prior mass {}",
                1.0 - prior_mass
            )));
        }
        *self = BoundTracker {
            prior_tail: t,
            payoff_sup: b,
            tilted_tail: u,
        };
        Ok(u)
    }
}

/// Estimate of `log Z` with its truncation certificate.
///
/// The estimate is `log(partial)`. For a finite status the true value lies in
/// `[log partial, log(partial + tail_bound)]`.
pub fn log_normalizer_truncated(
    family: &dyn CountableFamily,
    config: &TruncationConfig,
) -> Result<(f64, TruncationCertificate)> {
    config.validate()?;
    let mut bounds = BoundTracker {
        prior_tail: f64::INFINITY,
        payoff_sup: f64::INFINITY,
        tilted_tail: f64::INFINITY,
    };

    if let Some(end) = family.support_end() {
        let terms: Vec<f64> = (0..=end).map(|n| log_term(family, n)).collect();
        let prior_mass: f64 = (0..=end).map(|n| family.log_prior(n).exp()).sum();
        let tail_bound = bounds.check(end, family, prior_mass)?;
        let log_partial = log_sum_exp(&terms);
        if log_partial == f64::NEG_INFINITY {
            return Err(Error::DegenerateProblem);
        }
        let status = if tail_bound == 0.0 || tail_bound.ln() < config.eps_tail.ln() + log_partial {
            CertificateStatus::Finite
        } else {
            CertificateStatus::Inconclusive
        };
        let cert = TruncationCertificate {
            n_max: end,
            log_partial,
            partial: log_partial.exp(),
            tail_bound,
            status,
        };
        return Ok((log_partial, cert));
    }

    let mut acc = LogAccumulator::new();
    let mut prior_mass = CompensatedSum::new();
    let mut next = 0u64;
    let mut n_max = config.initial_n;
    let mut last = None;
    for doubling in 0..=config.max_doublings {
        if doubling > 0 {
            n_max = n_max
                .checked_mul(2)
                .ok_or_else(|| Error::InvalidBounds("truncation index overflowed".into()))?;
        }
        let mut nondecreasing = true;
        let mut prev = f64::NEG_INFINITY;
        while next <= n_max {
            let t = log_term(family, next);
            if t.is_nan() || t == f64::INFINITY {
                return Err(Error::NonFinite {
                    what: format!("log term at n = {next}"),
                    value: t,
                });
            }
            if t < prev {
                nondecreasing = false;
            }
            prev = t;
            acc.add_log(t);
            prior_mass.add(family.log_prior(next).exp());
            next += 1;
        }
        let tail_bound = bounds.check(n_max, family, prior_mass.value())?;
        let log_partial = acc.ln();
        let cert = |status| TruncationCertificate {
            n_max,
            log_partial,
            partial: log_partial.exp(),
            tail_bound,
            status,
        };
        if log_partial > f64::NEG_INFINITY
            && (tail_bound == 0.0 || tail_bound.ln() < config.eps_tail.ln() + log_partial)
        {
            return Ok((log_partial, cert(CertificateStatus::Finite)));
        }
        if tail_bound == f64::INFINITY
            && nondecreasing
            && log_partial > config.explosion_threshold.ln()
        {
            return Ok((log_partial, cert(CertificateStatus::Diverged)));
        }
        last = Some(cert(CertificateStatus::Inconclusive));
    }
    let cert = last.expect("at least one truncation step");
    if cert.log_partial == f64::NEG_INFINITY && cert.tail_bound == 0.0 {
        return Err(Error::DegenerateProblem);
    }
    Ok((cert.log_partial, cert))
}

/// Tilted distribution over `0..=N` plus a final `>N` bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedTilt {
    /// Over a single variable `n` with labels `"0"`, ..., `"N"`, `">N"`.
    pub optimizer: DistVector,
    /// Mass of the `>N` bucket, `U / (partial + U)`.
    pub tail_mass: f64,
    pub certificate: TruncationCertificate,
}

impl TruncatedTilt {
    /// Probabilities of `0..=N`, without the tail bucket.
    pub fn head(&self) -> &[f64] {
        let p = self.optimizer.probs();
        &p[..p.len() - 1]
    }
}

/// Tilt `p_n exp{payoff(n)} / (partial + U)` for `n <= N`, where `U` is the
/// certified tail bound. Requires a finite certificate.
pub fn tilt_truncated(
    family: &dyn CountableFamily,
    config: &TruncationConfig,
) -> Result<TruncatedTilt> {
    let (_, certificate) = log_normalizer_truncated(family, config)?;
    if certificate.status != CertificateStatus::Finite {
        return Err(Error::NotFinite(certificate.status.as_str().into()));
    }
    let log_total = if certificate.tail_bound == 0.0 {
        certificate.log_partial
    } else {
        log_sum_exp(&[certificate.log_partial, certificate.tail_bound.ln()])
    };
    let n = certificate.n_max;
    let mut probs: Vec<f64> = (0..=n)
        .map(|k| {
            let t = log_term(family, k);
            if t == f64::NEG_INFINITY {
                0.0
            } else {
                (t - log_total).exp()
            }
        })
        .collect();
    let tail_mass = if certificate.tail_bound == 0.0 {
        0.0
    } else {
        (certificate.tail_bound.ln() - log_total).exp()
    };
    probs.push(tail_mass);
    let labels = (0..=n)
        .map(|k| k.to_string())
        .chain(std::iter::once(format!(">{n}")));
    let over = vec![VariableSpec::new("n", labels)?];
    let optimizer = DistVector::with_tolerance(over, probs, 1e-9)?;
    Ok(TruncatedTilt {
        optimizer,
        tail_mass,
        certificate,
    })
}
