//! Log-domain accumulation and Gaussian tail helpers.

use libm::erfc;
use std::f64::consts::FRAC_1_SQRT_2;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Accumulates positive terms given by their natural logarithms.
///
/// Terms are combined in descending order relative to the largest one, so
/// sums spanning hundreds of orders of magnitude keep full relative precision.
#[derive(Debug, Clone, Default)]
pub struct LogSum {
    terms: Vec<f64>,
}

impl LogSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, ln_term: f64) {
        if ln_term > f64::NEG_INFINITY {
            self.terms.push(ln_term);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Largest term pushed so far (`-inf` when empty).
    pub fn max(&self) -> f64 {
        self.terms.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Natural log of the sum; `-inf` for an empty sum.
    pub fn ln_value(&self) -> f64 {
        ln_sum_exp(&self.terms)
    }

    pub fn value(&self) -> f64 {
        self.ln_value().exp()
    }
}

/// `ln(sum(exp(terms)))`, summing in descending order with compensation.
pub fn ln_sum_exp(terms: &[f64]) -> f64 {
    let mut sorted: Vec<f64> = terms
        .iter()
        .copied()
        .filter(|t| *t > f64::NEG_INFINITY)
        .collect();
    if sorted.is_empty() {
        return f64::NEG_INFINITY;
    }
    sorted.sort_by(|a, b| b.total_cmp(a));
    let top = sorted[0];
    if top == f64::INFINITY {
        return f64::INFINITY;
    }
    let mut acc = CompensatedSum::new();
    for t in &sorted {
        acc.add((t - top).exp());
    }
    top + acc.value().ln()
}

/// `ln(exp(a) + exp(b))`.
pub fn ln_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}


/// Standard normal upper tail `P(Z > x)`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// `P(lo < Z < hi)` for a standard normal, computed on the tail that avoids
/// cancellation.
pub fn normal_interval(lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    if lo >= 0.0 {
        (normal_sf(lo) - normal_sf(hi)).max(0.0)
    } else if hi <= 0.0 {
        (normal_cdf(hi) - normal_cdf(lo)).max(0.0)
    } else {
        1.0 - normal_cdf(lo) - normal_sf(hi)
    }
}

/// `P(lo < L < hi)` for a Laplace variable with density `(k/2) exp(-k|x|)`.
pub fn laplace_interval(lo: f64, hi: f64, k: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    // upper tail P(L > x) for x >= 0 is exp(-k x)/2
    let sf = |x: f64| {
        if x >= 0.0 {
            0.5 * (-k * x).exp()
        } else {
            1.0 - 0.5 * (k * x).exp()
        }
    };
    if lo >= 0.0 {
        0.5 * ((-k * lo).exp() - (-k * hi).exp())
    } else if hi <= 0.0 {
        0.5 * ((k * hi).exp() - (k * lo).exp())
    } else {
        sf(lo) - sf(hi)
    }
}
