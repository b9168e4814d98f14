//! Small numerically careful helpers shared by the solvers.

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated sum of an iterator.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut acc = CompensatedSum::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// `log(sum(exp(xs)))`, shifted by the maximum so nothing overflows.
///
/// Returns `-inf` for an empty slice or when every entry is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + compensated_sum(xs.iter().map(|&x| (x - m).exp())).ln()
}

/// Streaming log-domain accumulator: keeps `total = exp(shift) * scaled`.
#[derive(Debug, Clone, Copy)]
pub struct LogAccumulator {
    shift: f64,
    scaled: CompensatedSum,
}

impl Default for LogAccumulator {
    fn default() -> Self {
        Self {
            shift: f64::NEG_INFINITY,
            scaled: CompensatedSum::new(),
        }
    }
}

impl LogAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `exp(log_term)`.
    pub fn add_log(&mut self, log_term: f64) {
        if log_term == f64::NEG_INFINITY {
            return;
        }
        if log_term > self.shift {
            let rescale = (self.shift - log_term).exp();
            let old = self.scaled.value() * rescale;
            self.scaled = CompensatedSum::new();
            self.scaled.add(old);
            self.shift = log_term;
        }
        self.scaled.add((log_term - self.shift).exp());
    }

    /// Natural log of the accumulated total.
    pub fn ln(&self) -> f64 {
        if self.shift == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        self.shift + self.scaled.value().ln()
    }
}

/// `KL(q || p)` with `0 log 0 = 0`; `+inf` when `q` charges a `p`-null atom.
pub fn kl_divergence(q: &[f64], p: &[f64]) -> f64 {
    debug_assert_eq!(q.len(), p.len());
    let mut acc = CompensatedSum::new();
    for (&qi, &pi) in q.iter().zip(p) {
        if qi == 0.0 {
            continue;
        }
        if pi == 0.0 {
            return f64::INFINITY;
        }
        acc.add(qi * (qi / pi).ln());
    }
    acc.value()
}

/// Total variation distance `0.5 * sum |a - b|`.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    0.5 * compensated_sum(a.iter().zip(b).map(|(x, y)| (x - y).abs()))
}
