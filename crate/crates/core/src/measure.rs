//! Lévy measures of subordinators and their elementary functionals.
//!
//! Three representations are supported:
//!
//! * [`AtomicSum`]: `Σ H_m δ_{A_m}`, either a finite list or an infinite
//!   [`QuadraticFamily`] whose weights and locations are powers of two with
//!   quadratic exponents. Families carry closed-form tails, so masses and
//!   moments over unbounded index ranges are exact.
//! * [`ExpMixture`]: density `Σ (H_m / A_m) exp(-x / A_m)`, again finite or a
//!   family.
//! * [`GeneralDensity`]: an arbitrary density handled by adaptive quadrature
//!   in the variable `ln x`.
//!
//! Positive terms are accumulated in the log domain ([`LogSum`]), largest
//! first, because the catalogued examples span ranges like `2^{n^2}`.

use std::f64::consts::LN_2;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::LogSum;
use crate::quad::{integrate_with_breaks, QuadOptions};

/// Terms below `max - FAMILY_CUTOFF_NATS` are treated as negligible.
const FAMILY_CUTOFF_NATS: f64 = 46.0;
const MAX_FAMILY_TERMS: u64 = 1_000_000;

/// One weighted term: an atom `(H, A)` or an exponential component `(H, A)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub weight: f64,
    #[serde(alias = "scale")]
    pub location: f64,
}

impl Term {
    pub fn new(weight: f64, location: f64) -> Self {
        Self { weight, location }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Increasing,
    Decreasing,
}

/// Infinite family `H_m = 2^{w0 + w1 m + w2 m²}`, `A_m = 2^{l0 + l1 m + l2 m²}`
/// for `m = 0, 1, 2, ...`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFamily {
    pub weight_log2: [f64; 3],
    pub location_log2: [f64; 3],
}

fn poly(c: &[f64; 3], m: f64) -> f64 {
    c[0] + c[1] * m + c[2] * m * m
}

/// `ln Σ_{m ≥ from} 2^{c0 + c1 m + c2 m²}`, or `None` when the series diverges.
///
/// Geometric series (`c2 = 0`) are summed in closed form. Otherwise terms are
/// added until past the peak, with successive ratio at most 1/2 and the
/// current term 46 nats below the largest; the remainder is then bounded by
/// the current term, i.e. below `1e-20` relative.
pub fn ln_tail_quadratic(c: [f64; 3], from: u64) -> Option<f64> {
    if !c.iter().all(|x| x.is_finite()) {
        return None;
    }
    if c[2] > 0.0 || (c[2] == 0.0 && c[1] >= 0.0) {
        return None;
    }
    let k = from as f64;
    if c[2] == 0.0 {
        let ln_one_minus_ratio = (-(LN_2 * c[1]).exp_m1()).ln();
        return Some(LN_2 * poly(&c, k) - ln_one_minus_ratio);
    }
    let mut acc = LogSum::new();
    let mut top = f64::NEG_INFINITY;
    let mut m = k;
    loop {
        let lt = LN_2 * poly(&c, m);
        acc.push(lt);
        top = top.max(lt);
        let ln_ratio = LN_2 * (c[1] + c[2] * (2.0 * m + 1.0));
        if ln_ratio <= -LN_2 && lt < top - FAMILY_CUTOFF_NATS {
            break;
        }
        m += 1.0;
    }
    Some(acc.ln_value())
}

impl QuadraticFamily {
    pub fn new(weight_log2: [f64; 3], location_log2: [f64; 3]) -> Self {
        Self {
            weight_log2,
            location_log2,
        }
    }

    pub fn ln_weight(&self, m: u64) -> f64 {
        LN_2 * poly(&self.weight_log2, m as f64)
    }

    pub fn ln_location(&self, m: u64) -> f64 {
        LN_2 * poly(&self.location_log2, m as f64)
    }

    /// `H_m`, exact for integer exponents (may overflow to infinity).
    pub fn weight(&self, m: u64) -> f64 {
        poly(&self.weight_log2, m as f64).exp2()
    }

    /// `A_m`, exact for integer exponents (may overflow to infinity).
    pub fn location(&self, m: u64) -> f64 {
        poly(&self.location_log2, m as f64).exp2()
    }

    pub fn log2_location(&self, m: u64) -> f64 {
        poly(&self.location_log2, m as f64)
    }

    /// Strict monotonicity of `A_m` over `m ≥ 0`, if any.
    pub fn direction(&self) -> Option<Direction> {
        let l = &self.location_log2;
        if l[2] >= 0.0 && l[1] + l[2] > 0.0 {
            Some(Direction::Increasing)
        } else if l[2] <= 0.0 && l[1] + l[2] < 0.0 {
            Some(Direction::Decreasing)
        } else {
            None
        }
    }

    /// Exponent coefficients of `H_m A_m^p`.
    pub fn moment_coeffs(&self, p: f64) -> [f64; 3] {
        let (w, l) = (&self.weight_log2, &self.location_log2);
        [w[0] + p * l[0], w[1] + p * l[1], w[2] + p * l[2]]
    }

    /// `ln Σ_{m ≥ from} H_m A_m^p`, `None` when divergent.
    pub fn ln_tail(&self, p: f64, from: u64) -> Option<f64> {
        ln_tail_quadratic(self.moment_coeffs(p), from)
    }

    /// The first `count` terms as an explicit list.
    pub fn head(&self, count: u64) -> Vec<Term> {
        (0..count)
            .map(|m| Term::new(self.weight(m), self.location(m)))
            .collect()
    }

    /// Contiguous index range `{m : A_m ∈ interval}`; `end = None` means unbounded.
    pub fn index_range(&self, iv: &Interval) -> Result<Option<(u64, Option<u64>)>> {
        let dir = self.direction().ok_or_else(|| {
            Error::InvalidSpec(vec!["family locations are not strictly monotone".into()])
        })?;
        // compare in log2 so that locations beyond f64 range still order correctly
        let loc = |m: u64| self.log2_location(m);
        let lo2 = if iv.lo == 0.0 { f64::NEG_INFINITY } else { iv.lo.log2() };
        let hi2 = iv.hi.log2();
        let above_lo = |e: f64| if iv.lo_closed { e >= lo2 } else { e > lo2 };
        let below_hi = |e: f64| if iv.hi_closed { e <= hi2 } else { e < hi2 };
        let scan = |start: u64, pred: &dyn Fn(f64) -> bool| -> Result<u64> {
            let mut m = start;
            while pred(loc(m)) {
                m += 1;
                if m - start > MAX_FAMILY_TERMS {
                    return Err(Error::PrecisionUnattainable(
                        "family index scan exceeded 1e6 terms".into(),
                    ));
                }
            }
            Ok(m)
        };
        match dir {
            Direction::Increasing => {
                let start = scan(0, &|a| !above_lo(a))?;
                if !below_hi(loc(start)) {
                    return Ok(None);
                }
                if iv.hi.is_infinite() {
                    return Ok(Some((start, None)));
                }
                let stop = scan(start, &|a| below_hi(a))?;
                Ok(Some((start, Some(stop - 1))))
            }
            Direction::Decreasing => {
                let start = scan(0, &|a| !below_hi(a))?;
                if !above_lo(loc(start)) {
                    return Ok(None);
                }
                if iv.lo == 0.0 {
                    return Ok(Some((start, None)));
                }
                let stop = scan(start, &|a| above_lo(a))?;
                Ok(Some((start, Some(stop - 1))))
            }
        }
    }
}

/// A subinterval of `(0, ∞)` with independently open or closed ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub lo_closed: bool,
    pub hi: f64,
    pub hi_closed: bool,
}

impl Interval {
    fn checked(self) -> Result<Self> {
        let ok = self.lo >= 0.0
            && self.lo.is_finite()
            && !self.hi.is_nan()
            && self.lo <= self.hi
            && !(self.lo == 0.0 && self.lo_closed)
            && !(self.hi.is_infinite() && self.hi_closed);
        if ok {
            Ok(self)
        } else {
            Err(Error::InvalidInterval(format!("{self}")))
        }
    }

    /// `[a, b]` with `0 < a ≤ b`.
    pub fn closed(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0) {
            return Err(Error::InvalidInterval(format!("[{a}, {b}] needs a > 0")));
        }
        Self {
            lo: a,
            lo_closed: true,
            hi: b,
            hi_closed: true,
        }
        .checked()
    }

    /// `(a, b]`.
    pub fn left_open(a: f64, b: f64) -> Result<Self> {
        Self {
            lo: a,
            lo_closed: false,
            hi: b,
            hi_closed: true,
        }
        .checked()
    }

    /// `(b, ∞)`.
    pub fn above(b: f64) -> Result<Self> {
        Self {
            lo: b,
            lo_closed: false,
            hi: f64::INFINITY,
            hi_closed: false,
        }
        .checked()
    }

    /// `[a, ∞)`.
    pub fn at_least(a: f64) -> Result<Self> {
        if !(a > 0.0) {
            return Err(Error::InvalidInterval(format!("[{a}, ∞) needs a > 0")));
        }
        Self {
            lo: a,
            lo_closed: true,
            hi: f64::INFINITY,
            hi_closed: false,
        }
        .checked()
    }

    /// `(0, b]`.
    pub fn up_to(b: f64) -> Result<Self> {
        Self::left_open(0.0, b)
    }

    /// The whole half-line `(0, ∞)`.
    pub fn all() -> Self {
        Self {
            lo: 0.0,
            lo_closed: false,
            hi: f64::INFINITY,
            hi_closed: false,
        }
    }

    pub fn above_lo(&self, x: f64) -> bool {
        if self.lo_closed {
            x >= self.lo
        } else {
            x > self.lo
        }
    }

    pub fn below_hi(&self, x: f64) -> bool {
        if self.hi_closed {
            x <= self.hi
        } else {
            x < self.hi
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.above_lo(x) && self.below_hi(x)
    }

    pub fn is_empty(&self) -> bool {
        self.lo == self.hi && !(self.lo_closed && self.hi_closed)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = if self.lo_closed { '[' } else { '(' };
        let r = if self.hi_closed { ']' } else { ')' };
        write!(f, "{l}{}, {}{r}", self.lo, self.hi)
    }
}

/// `Σ H_m δ_{A_m}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AtomicSum {
    Finite { atoms: Vec<Term> },
    Family { family: QuadraticFamily },
}

/// Density `Σ (H_m / A_m) exp(-x / A_m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExpMixture {
    Finite { components: Vec<Term> },
    Family { family: QuadraticFamily },
}

/// Borrowed view of the terms of an atomic sum or exponential mixture.
#[derive(Debug, Clone, Copy)]
pub enum TermSource<'a> {
    Finite(&'a [Term]),
    Family(&'a QuadraticFamily),
}

impl AtomicSum {
    pub fn source(&self) -> TermSource<'_> {
        match self {
            AtomicSum::Finite { atoms } => TermSource::Finite(atoms),
            AtomicSum::Family { family } => TermSource::Family(family),
        }
    }
}

impl ExpMixture {
    pub fn source(&self) -> TermSource<'_> {
        match self {
            ExpMixture::Finite { components } => TermSource::Finite(components),
            ExpMixture::Family { family } => TermSource::Family(family),
        }
    }
}

/// Integrability information for a [`GeneralDensity`]: the density behaves
/// like `x^zero_exponent` near 0 and like `x^tail_exponent` at infinity
/// (`None` means faster than any power). `lower`/`upper` bracket the bulk
/// and seed the quadrature subdivision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityHints {
    pub lower: f64,
    pub upper: f64,
    pub zero_exponent: f64,
    pub tail_exponent: Option<f64>,
}

pub type DensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A user-supplied density with explicit integrability hints.
#[derive(Clone)]
pub struct CustomDensity {
    pub density: DensityFn,
    pub hints: DensityHints,
}

impl fmt::Debug for CustomDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomDensity")
            .field("hints", &self.hints)
            .finish_non_exhaustive()
    }
}

impl PartialEq for CustomDensity {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.density, &other.density) && self.hints == other.hints
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum GeneralDensity {
    /// `c x^{-1-β} exp(-x / scale)`; without `scale` a pure power law.
    TemperedStable {
        c: f64,
        beta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<f64>,
    },
    #[serde(skip)]
    Custom(CustomDensity),
}

impl GeneralDensity {
    pub fn custom(density: impl Fn(f64) -> f64 + Send + Sync + 'static, hints: DensityHints) -> Self {
        GeneralDensity::Custom(CustomDensity {
            density: Arc::new(density),
            hints,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            GeneralDensity::TemperedStable { c, beta, scale } => {
                let base = c * (-(1.0 + beta) * x.ln()).exp();
                match scale {
                    Some(s) => base * (-x / s).exp(),
                    None => base,
                }
            }
            GeneralDensity::Custom(cd) => (cd.density)(x),
        }
    }

    pub fn hints(&self) -> DensityHints {
        match self {
            GeneralDensity::TemperedStable { beta, scale, .. } => {
                let s = scale.unwrap_or(1.0);
                DensityHints {
                    lower: 1e-3 * s,
                    upper: 1e3 * s,
                    zero_exponent: -1.0 - beta,
                    tail_exponent: if scale.is_some() {
                        None
                    } else {
                        Some(-1.0 - beta)
                    },
                }
            }
            GeneralDensity::Custom(cd) => cd.hints,
        }
    }

    /// `∫ g(x) ρ(x) x^p dx` over the interval, integrated in `v = ln x`.
    fn integrate_weighted(&self, p: f64, iv: &Interval, g: impl Fn(f64) -> f64) -> Result<f64> {
        if iv.is_empty() || iv.lo == iv.hi {
            return Ok(0.0);
        }
        let h = self.hints();
        let a = if iv.lo == 0.0 { f64::NEG_INFINITY } else { iv.lo.ln() };
        let b = iv.hi.ln();
        let breaks = [h.lower.ln(), h.upper.ln()];
        let r = integrate_with_breaks(
            |v| {
                let x = v.exp();
                if x == 0.0 || x.is_infinite() {
                    return 0.0;
                }
                let val = self.eval(x) * g(x) * ((p + 1.0) * v).exp();
                if val.is_finite() {
                    val
                } else {
                    0.0
                }
            },
            a,
            b,
            &breaks,
            &QuadOptions::rel(1e-10),
        )?;
        Ok(r.value)
    }
}

/// A Lévy measure on `(0, ∞)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum LevyMeasure {
    #[serde(rename = "atomic")]
    Atomic(AtomicSum),
    #[serde(rename = "expmix")]
    ExpMixture(ExpMixture),
    #[serde(rename = "density")]
    Density(GeneralDensity),
}

/// Which terms survive a cutoff, for term-wise bounds.
fn check_terms(terms: TermSource<'_>, what: &str, atomic: bool, out: &mut Vec<String>) {
    match terms {
        TermSource::Finite(list) => {
            for (i, t) in list.iter().enumerate() {
                if !(t.weight > 0.0 && t.weight.is_finite()) {
                    out.push(format!("{what} {i}: weight {} is not positive", t.weight));
                }
                if !(t.location > 0.0 && t.location.is_finite()) {
                    out.push(format!("{what} {i}: location {} is not positive", t.location));
                }
            }
            if atomic && list.len() > 1 {
                let inc = list.windows(2).all(|w| w[0].location < w[1].location);
                let dec = list.windows(2).all(|w| w[0].location > w[1].location);
                if !inc && !dec {
                    out.push("atom locations are not strictly monotone".into());
                }
            }
        }
        TermSource::Family(fam) => {
            let coeffs_ok = fam
                .weight_log2
                .iter()
                .chain(fam.location_log2.iter())
                .all(|x| x.is_finite());
            if !coeffs_ok {
                out.push("family coefficients must be finite".into());
                return;
            }
            match fam.direction() {
                None => out.push("family locations are not strictly monotone".into()),
                Some(Direction::Increasing) => {
                    if fam.ln_tail(0.0, 0).is_none() {
                        out.push("∫(1∧x) μ(dx) diverges: Σ H_m is infinite for growing A_m".into());
                    }
                }
                Some(Direction::Decreasing) => {
                    if fam.ln_tail(1.0, 0).is_none() {
                        out.push(
                            "∫(1∧x) μ(dx) diverges: Σ H_m A_m is infinite for shrinking A_m".into(),
                        );
                    }
                }
            }
        }
    }
}

/// Result of summing a term series in the log domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesSum {
    pub ln_value: f64,
    /// Log of a rigorous bound on the omitted remainder (`-inf` when exact).
    pub ln_tail_bound: f64,
    pub terms: u64,
}

/// Remainder bounds: the pair `(p, ln K)` asserts `term_m ≤ K · H_m A_m^p`.
fn ln_remainder(fam: &QuadraticFamily, candidates: &[(f64, f64)], m: u64) -> Option<f64> {
    candidates
        .iter()
        .filter_map(|(p, lk)| fam.ln_tail(*p, m + 1).map(|t| t + lk))
        .reduce(f64::min)
}

/// Sums `ln_term(ln H, ln A)` over a finite list, or over a family until the
/// remainder bound drops `cutoff` nats below the largest term. Returns
/// `Ok(None)` when no remainder bound converges.
pub(crate) fn sum_series(
    source: TermSource<'_>,
    ln_term: &mut dyn FnMut(f64, f64) -> Result<f64>,
    candidates: &[(f64, f64)],
    cutoff: f64,
) -> Result<Option<SeriesSum>> {
    // an all-zero series is accepted once the bound is this small in absolute terms
    const ABS_FLOOR: f64 = -1000.0;
    let mut acc = LogSum::new();
    match source {
        TermSource::Finite(list) => {
            for t in list {
                acc.push(ln_term(t.weight.ln(), t.location.ln())?);
            }
            Ok(Some(SeriesSum {
                ln_value: acc.ln_value(),
                ln_tail_bound: f64::NEG_INFINITY,
                terms: list.len() as u64,
            }))
        }
        TermSource::Family(fam) => {
            if ln_remainder(fam, candidates, 0).is_none() {
                return Ok(None);
            }
            let mut top = f64::NEG_INFINITY;
            for m in 0..MAX_FAMILY_TERMS {
                let lt = ln_term(fam.ln_weight(m), fam.ln_location(m))?;
                acc.push(lt);
                top = top.max(lt);
                if let Some(lb) = ln_remainder(fam, candidates, m) {
                    let done = lb < top - cutoff
                        || lb == f64::NEG_INFINITY
                        || (top == f64::NEG_INFINITY && lb < ABS_FLOOR);
                    if done {
                        return Ok(Some(SeriesSum {
                            ln_value: acc.ln_value(),
                            ln_tail_bound: lb,
                            terms: m + 1,
                        }));
                    }
                }
            }
            Err(Error::PrecisionUnattainable(
                "family series did not settle within 1e6 terms".into(),
            ))
        }
    }
}

fn sum_terms(
    source: TermSource<'_>,
    ln_term: &dyn Fn(f64, f64) -> Result<f64>,
    candidates: &[(f64, f64)],
    divergence: &dyn Fn() -> Error,
) -> Result<f64> {
    match sum_series(source, &mut |h, a| ln_term(h, a), candidates, FAMILY_CUTOFF_NATS)? {
        Some(s) => Ok(s.ln_value),
        None => Err(divergence()),
    }
}

/// `ln ∫_{z1}^{z2} u^p e^{-u} du`.
fn ln_gamma_window(p: f64, z1: f64, z2: f64) -> Result<f64> {
    if z2 <= z1 {
        return Ok(f64::NEG_INFINITY);
    }
    if p == 0.0 {
        let v = if z2.is_infinite() {
            -z1
        } else {
            -z1 + (-(-(z2 - z1)).exp_m1()).ln()
        };
        return Ok(v);
    }
    if p == 1.0 {
        // lower incomplete gamma γ(2, z) with a series near zero
        let lower = |z: f64| -> f64 {
            if z.is_infinite() {
                1.0
            } else if z < 0.5 {
                let mut s = 0.0;
                let mut pw = z * z;
                let mut fact = 1.0;
                for k in 0..30 {
                    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                    s += sign * pw / (fact * (k as f64 + 2.0));
                    pw *= z;
                    fact *= k as f64 + 1.0;
                }
                s
            } else {
                1.0 - (-z).exp() * (1.0 + z)
            }
        };
        let upper = |z: f64| -> f64 {
            if z.is_infinite() {
                0.0
            } else {
                (-z).exp() * (1.0 + z)
            }
        };
        let v = if z1 < 1.0 {
            lower(z2) - lower(z1)
        } else {
            upper(z1) - upper(z2)
        };
        return Ok(v.ln());
    }
    if z1 == 0.0 && p <= -1.0 {
        return Err(Error::DivergentMoment(format!(
            "∫ u^{p} e^-u du diverges at 0"
        )));
    }
    let a = if z1 == 0.0 { f64::NEG_INFINITY } else { z1.ln() };
    let b = z2.ln();
    // shift by the integrand's peak so large windows do not underflow
    let peak = if z1 > 0.0 {
        (p + 1.0) * a - z1
    } else {
        0.0
    };
    let r = integrate_with_breaks(
        |v| ((p + 1.0) * v - v.exp() - peak).exp(),
        a,
        b,
        &[(p + 1.0).abs().max(1e-3).ln()],
        &QuadOptions::rel(1e-12),
    )?;
    Ok(r.value.ln() + peak)
}

fn ln_gamma_fn(x: f64) -> f64 {
    libm::lgamma(x)
}

impl LevyMeasure {
    /// Finite list of atoms.
    pub fn atoms(atoms: Vec<Term>) -> Self {
        LevyMeasure::Atomic(AtomicSum::Finite { atoms })
    }

    pub fn atomic_family(family: QuadraticFamily) -> Self {
        LevyMeasure::Atomic(AtomicSum::Family { family })
    }

    pub fn exp_mixture(components: Vec<Term>) -> Self {
        LevyMeasure::ExpMixture(ExpMixture::Finite { components })
    }

    pub fn exp_mixture_family(family: QuadraticFamily) -> Self {
        LevyMeasure::ExpMixture(ExpMixture::Family { family })
    }

    pub fn dirac(location: f64) -> Self {
        Self::atoms(vec![Term::new(1.0, location)])
    }

    /// True for the zero measure (an empty finite list).
    pub fn is_zero(&self) -> bool {
        match self {
            LevyMeasure::Atomic(AtomicSum::Finite { atoms }) => atoms.is_empty(),
            LevyMeasure::ExpMixture(ExpMixture::Finite { components }) => components.is_empty(),
            _ => false,
        }
    }

    pub fn validate_into(&self, out: &mut Vec<String>) {
        match self {
            LevyMeasure::Atomic(a) => check_terms(a.source(), "atom", true, out),
            LevyMeasure::ExpMixture(e) => check_terms(e.source(), "component", false, out),
            LevyMeasure::Density(d) => {
                let h = d.hints();
                if let GeneralDensity::TemperedStable { c, beta, scale } = d {
                    if !(*c > 0.0 && c.is_finite()) {
                        out.push(format!("density constant c = {c} is not positive"));
                    }
                    if !(*beta < 1.0) {
                        out.push(format!("β = {beta} ≥ 1 makes ∫(1∧x) μ(dx) diverge at 0"));
                    }
                    match scale {
                        Some(s) if !(*s > 0.0 && s.is_finite()) => {
                            out.push(format!("tempering scale {s} is not positive"))
                        }
                        None if !(*beta > 0.0) => out.push(format!(
                            "untempered density with β = {beta} ≤ 0 has an infinite tail"
                        )),
                        _ => {}
                    }
                    return;
                }
                if !(h.lower > 0.0 && h.upper > h.lower && h.upper.is_finite()) {
                    out.push(format!(
                        "density hints need 0 < lower < upper < ∞, got {} and {}",
                        h.lower, h.upper
                    ));
                    return;
                }
                if !(h.zero_exponent > -2.0) {
                    out.push(format!(
                        "density ~ x^{} near 0 makes ∫(1∧x) μ(dx) diverge",
                        h.zero_exponent
                    ));
                }
                if let Some(t) = h.tail_exponent {
                    if !(t < -1.0) {
                        out.push(format!("density ~ x^{t} at ∞ has an infinite tail"));
                    }
                }
                if out.is_empty() {
                    let v = d.integrate_weighted(0.0, &Interval::all(), |x| x.min(1.0));
                    match v {
                        Ok(v) if v.is_finite() => {}
                        Ok(v) => out.push(format!("∫(1∧x) μ(dx) evaluated to {v}")),
                        Err(e) => out.push(format!("∫(1∧x) μ(dx) could not be evaluated: {e}")),
                    }
                }
            }
        }
    }

    /// `ln ∫_I x^p μ(dx)`, `-inf` for an empty result.
    pub fn ln_moment(&self, p: f64, iv: &Interval) -> Result<f64> {
        if iv.is_empty() {
            return Ok(f64::NEG_INFINITY);
        }
        let divergence = || {
            if p == 0.0 {
                Error::UnboundedMass(format!("μ({iv}) is infinite"))
            } else {
                Error::DivergentMoment(format!("∫_{iv} x^{p} μ(dx) diverges"))
            }
        };
        match self {
            LevyMeasure::Atomic(a) => match a.source() {
                TermSource::Finite(list) => {
                    let mut acc = LogSum::new();
                    for t in list.iter().filter(|t| iv.contains(t.location)) {
                        acc.push(t.weight.ln() + p * t.location.ln());
                    }
                    Ok(acc.ln_value())
                }
                TermSource::Family(fam) => match fam.index_range(iv)? {
                    None => Ok(f64::NEG_INFINITY),
                    Some((start, None)) => fam.ln_tail(p, start).ok_or_else(divergence),
                    Some((start, Some(end))) => {
                        if end - start > MAX_FAMILY_TERMS {
                            return Err(Error::PrecisionUnattainable(
                                "interval spans more than 1e6 atoms".into(),
                            ));
                        }
                        let mut acc = LogSum::new();
                        for m in start..=end {
                            acc.push(fam.ln_weight(m) + p * fam.ln_location(m));
                        }
                        Ok(acc.ln_value())
                    }
                },
            },
            LevyMeasure::ExpMixture(e) => {
                let (lo, hi) = (iv.lo, iv.hi);
                if lo == 0.0 && p <= -1.0 {
                    return Err(divergence());
                }
                let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
                let ln_term = |lh: f64, la: f64| -> Result<f64> {
                    let (z1, z2) = ((ln_lo - la).exp(), (ln_hi - la).exp());
                    Ok(lh + p * la + ln_gamma_window(p, z1, z2)?)
                };
                let bounds = {
                    let xsup_ln = if p <= 0.0 {
                        if lo > 0.0 {
                            Some(p * lo.ln())
                        } else {
                            None
                        }
                    } else if hi.is_finite() {
                        Some(p * hi.ln())
                    } else {
                        None
                    };
                    let mut candidates = Vec::new();
                    if let Some(xs) = xsup_ln {
                        candidates.push((0.0, xs));
                        if lo > 0.0 {
                            candidates.push((1.0, xs - 1.0 - lo.ln()));
                        }
                        if hi.is_finite() {
                            candidates.push((-1.0, xs + (hi - lo).ln()));
                        }
                    }
                    if p > -1.0 {
                        candidates.push((p, ln_gamma_fn(p + 1.0)));
                    }
                    candidates
                };
                sum_terms(e.source(), &ln_term, &bounds, &divergence)
            }
            LevyMeasure::Density(d) => {
                let h = d.hints();
                if iv.lo == 0.0 && h.zero_exponent + p <= -1.0 {
                    return Err(divergence());
                }
                if iv.hi.is_infinite() {
                    if let Some(t) = h.tail_exponent {
                        if t + p >= -1.0 {
                            return Err(divergence());
                        }
                    }
                }
                Ok(d.integrate_weighted(p, iv, |_| 1.0)?.ln())
            }
        }
    }

    pub fn mass(&self, iv: &Interval) -> Result<f64> {
        Ok(self.ln_moment(0.0, iv)?.exp())
    }

    pub fn ln_mass(&self, iv: &Interval) -> Result<f64> {
        self.ln_moment(0.0, iv)
    }

    pub fn partial_moment(&self, p: f64, iv: &Interval) -> Result<f64> {
        Ok(self.ln_moment(p, iv)?.exp())
    }

    /// Total mass `μ((0, ∞))`; an error for infinite-activity measures.
    pub fn total_mass(&self) -> Result<f64> {
        self.mass(&Interval::all())
    }

    /// `∫ (1 - e^{-λx}) μ(dx)`.
    pub fn ln_laplace_integral(&self, lambda: f64) -> Result<f64> {
        let divergence = || Error::UnboundedMass("∫(1 - e^{-λx}) μ(dx) diverges".into());
        let bounds = [(0.0, 0.0), (1.0, lambda.ln())];
        match self {
            LevyMeasure::Atomic(a) => {
                let ln_term =
                    |lh: f64, la: f64| Ok(lh + (-(-lambda * la.exp()).exp_m1()).ln());
                sum_terms(a.source(), &ln_term, &bounds, &divergence)
            }
            LevyMeasure::ExpMixture(e) => {
                let ln_term = |lh: f64, la: f64| {
                    let la_lambda = la + lambda.ln();
                    // λA / (1 + λA) in logs
                    Ok(lh + la_lambda - crate::numeric::ln_add_exp(0.0, la_lambda))
                };
                sum_terms(e.source(), &ln_term, &bounds, &divergence)
            }
            LevyMeasure::Density(d) => Ok(d
                .integrate_weighted(0.0, &Interval::all(), |x| -(-lambda * x).exp_m1())?
                .ln()),
        }
    }
}

/// Drift plus Lévy measure: the full parameterisation of a subordinated
/// Brownian motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubordinatorSpec {
    pub drift: f64,
    pub measure: LevyMeasure,
}

/// Violated invariants of a spec; empty when valid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl SubordinatorSpec {
    pub fn new(drift: f64, measure: LevyMeasure) -> Self {
        Self { drift, measure }
    }

    pub fn pure_jump(measure: LevyMeasure) -> Self {
        Self::new(0.0, measure)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        if !(self.drift >= 0.0 && self.drift.is_finite()) {
            violations.push(format!("drift γ = {} must be finite and ≥ 0", self.drift));
        }
        self.measure.validate_into(&mut violations);
        if self.drift == 0.0 && self.measure.is_zero() {
            violations.push("trivial process: zero drift and zero Lévy measure".into());
        }
        ValidationReport { violations }
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(report.violations))
        }
    }

    /// Laplace exponent `φ(λ) = γλ + ∫ (1 - e^{-λx}) μ(dx)`.
    pub fn laplace_exponent(&self, lambda: f64) -> Result<f64> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Domain(format!("λ = {lambda} must be positive")));
        }
        self.ensure_valid()?;
        let jumps = if self.measure.is_zero() {
            0.0
        } else {
            self.measure.ln_laplace_integral(lambda)?.exp()
        };
        Ok(self.drift * lambda + jumps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn large_scale() -> LevyMeasure {
        LevyMeasure::atomic_family(QuadraticFamily::new([0.0, -1.0, 0.0], [0.0, 0.0, 1.0]))
    }

    fn small_scale() -> LevyMeasure {
        LevyMeasure::atomic_family(QuadraticFamily::new([0.0, 0.0, 0.0], [0.0, 0.0, -1.0]))
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn validate_examples() {
        assert!(SubordinatorSpec::pure_jump(LevyMeasure::dirac(1.0))
            .validate()
            .is_valid());
        assert!(SubordinatorSpec::pure_jump(small_scale()).validate().is_valid());
        let trivial = SubordinatorSpec::pure_jump(LevyMeasure::atoms(vec![]));
        let r = trivial.validate();
        assert_eq!(r.violations.len(), 1);
        assert!(r.violations[0].contains("trivial"));
        // drift-only Brownian motion is fine
        assert!(SubordinatorSpec::new(1.0, LevyMeasure::atoms(vec![]))
            .validate()
            .is_valid());
    }

    #[test]
    fn validate_rejects_bad_atoms_and_families() {
        let bad = SubordinatorSpec::new(
            -1.0,
            LevyMeasure::atoms(vec![Term::new(1.0, 2.0), Term::new(0.0, 1.0), Term::new(1.0, 3.0)]),
        );
        let r = bad.validate();
        assert_eq!(r.violations.len(), 3, "{:?}", r.violations);
        // Σ H_m = Σ 1 diverges with A_m growing
        let heavy = LevyMeasure::atomic_family(QuadraticFamily::new([0.0; 3], [0.0, 1.0, 0.0]));
        assert!(!SubordinatorSpec::pure_jump(heavy).validate().is_valid());
        // Σ H_m A_m diverges with A_m = 2^{-m}, H_m = 2^{m}
        let dense = LevyMeasure::atomic_family(QuadraticFamily::new([0.0, 1.0, 0.0], [0.0, -1.0, 0.0]));
        assert!(!SubordinatorSpec::pure_jump(dense).validate().is_valid());
        let wiggly = LevyMeasure::atomic_family(QuadraticFamily::new([0.0, -1.0, 0.0], [0.0, 3.0, -1.0]));
        assert!(!SubordinatorSpec::pure_jump(wiggly).validate().is_valid());
    }

    #[test]
    fn mass_examples() {
        let d = LevyMeasure::dirac(1.0);
        assert_eq!(d.mass(&Interval::closed(0.5, 2.0).unwrap()).unwrap(), 1.0);
        let e = LevyMeasure::exp_mixture(vec![Term::new(1.0, 1.0)]);
        for b in [0.1, 1.0, 7.5] {
            let m = e.mass(&Interval::above(b).unwrap()).unwrap();
            assert!(rel(m, (-b).exp()) < 1e-14);
        }
        let ls = large_scale();
        for n in 0..12u64 {
            let a_n = 2f64.powi((n * n) as i32);
            let m = ls.mass(&Interval::above(a_n).unwrap()).unwrap();
            // direct summation oracle
            let direct: f64 = (n + 1..200).map(|k| 2f64.powi(-(k as i32))).sum();
            assert!(rel(m, direct) < 1e-14, "n = {n}: {m} vs {direct}");
            assert!(rel(m, 2f64.powi(-(n as i32))) < 1e-14);
        }
    }

    #[test]
    fn unbounded_mass_near_zero() {
        let err = small_scale().mass(&Interval::up_to(0.5).unwrap()).unwrap_err();
        assert!(matches!(err, Error::UnboundedMass(_)));
        assert!(small_scale().total_mass().is_err());
        // but the finite head above 2^{-4} is fine: atoms m = 0, 1, 2
        let head = small_scale().mass(&Interval::at_least(1.0 / 16.0).unwrap()).unwrap();
        assert!((head - 3.0).abs() < 1e-15);
    }

    #[test]
    fn partial_moment_examples() {
        let d = LevyMeasure::dirac(1.0);
        assert_eq!(d.partial_moment(1.0, &Interval::up_to(2.0).unwrap()).unwrap(), 1.0);
        let ls = large_scale();
        let v = ls.partial_moment(1.0, &Interval::up_to(2.0).unwrap()).unwrap();
        assert!(rel(v, 2.0) < 1e-15);
        // Σ_{m≥2} 2^{-m²}: enumeration oracle
        let ss = small_scale();
        let v = ss.partial_moment(1.0, &Interval::up_to(1.0 / 16.0).unwrap()).unwrap();
        let oracle: f64 = (2..12).map(|m: i32| 2f64.powi(-m * m)).sum();
        assert!(rel(v, oracle) < 1e-14, "{v} vs {oracle}");
        assert!((v - 0.064_468_413_605_938_58).abs() < 1e-15);
        // tail-of-family bound quoted in the small-scale argument
        assert!(v < 2.0 * 2f64.powi(-4));
        let err = ls.partial_moment(1.0, &Interval::above(2.0).unwrap()).unwrap_err();
        assert!(matches!(err, Error::DivergentMoment(_)));
    }

    #[test]
    fn negative_moment_of_large_scale_tail() {
        let ls = large_scale();
        for n in 1..6u32 {
            let b = 2f64.powi((n * n) as i32);
            let v = ls.ln_moment(-0.5, &Interval::above(b).unwrap()).unwrap();
            let oracle: f64 = (n + 1..40)
                .map(|m| -(m as f64) * LN_2 - 0.5 * (m * m) as f64 * LN_2)
                .map(f64::exp)
                .sum();
            assert!(rel(v.exp(), oracle) < 1e-13);
        }
    }

    #[test]
    fn laplace_exponent_examples() {
        let s = SubordinatorSpec::pure_jump(LevyMeasure::dirac(1.0));
        assert!((s.laplace_exponent(1.0).unwrap() - 0.632_120_558_828_557_7).abs() < 1e-15);
        let s = SubordinatorSpec::new(2.0, LevyMeasure::dirac(1.0));
        assert!((s.laplace_exponent(3.0).unwrap() - 6.950_212_931_632_136).abs() < 1e-14);
        let s = SubordinatorSpec::new(2.0, LevyMeasure::atoms(vec![]));
        assert_eq!(s.laplace_exponent(3.0).unwrap(), 6.0);
        let e = SubordinatorSpec::pure_jump(LevyMeasure::exp_mixture(vec![Term::new(1.0, 1.0)]));
        assert!((e.laplace_exponent(1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(s.laplace_exponent(0.0).is_err());
    }

    #[test]
    fn laplace_exponent_of_mixture_matches_quadrature() {
        let comps = vec![Term::new(0.7, 0.3), Term::new(2.0, 5.0)];
        let e = LevyMeasure::exp_mixture(comps.clone());
        for lambda in [0.01, 0.5, 3.0, 100.0] {
            let closed = e.ln_laplace_integral(lambda).unwrap().exp();
            let quad = crate::quad::integrate(
                |x| {
                    -(-lambda * x).exp_m1()
                        * comps
                            .iter()
                            .map(|t| t.weight / t.location * (-x / t.location).exp())
                            .sum::<f64>()
                },
                0.0,
                f64::INFINITY,
                &QuadOptions::rel(1e-12),
            )
            .unwrap()
            .value;
            assert!(rel(closed, quad) < 1e-10);
        }
    }

    #[test]
    fn exp_mixture_moments_match_quadrature() {
        let comps = vec![Term::new(1.0, 0.5), Term::new(0.25, 8.0)];
        let e = LevyMeasure::exp_mixture(comps.clone());
        let dens = |x: f64| -> f64 {
            comps
                .iter()
                .map(|t| t.weight / t.location * (-x / t.location).exp())
                .sum()
        };
        for (p, iv) in [
            (1.0, Interval::up_to(3.0).unwrap()),
            (1.0, Interval::up_to(1e-4).unwrap()),
            (-0.5, Interval::above(2.0).unwrap()),
            (-1.5, Interval::above(0.1).unwrap()),
            (0.0, Interval::closed(0.2, 4.0).unwrap()),
        ] {
            let v = e.partial_moment(p, &iv).unwrap();
            let q = crate::quad::integrate(|x| x.powf(p) * dens(x), iv.lo, iv.hi, &QuadOptions::rel(1e-12))
                .unwrap()
                .value;
            assert!(rel(v, q) < 1e-9, "p={p} {iv}: {v} vs {q}");
        }
    }

    #[test]
    fn exp_mixture_family_mass_and_moments() {
        // the continuous example's mixture: H_m = 2^{-m}, A_m = 2^{m²}
        let e = LevyMeasure::exp_mixture_family(QuadraticFamily::new([0.0, -1.0, 0.0], [0.0, 0.0, 1.0]));
        let total = e.total_mass().unwrap();
        assert!(rel(total, 2.0) < 1e-14, "{total}");
        let b = 3.0;
        let tail = e.mass(&Interval::above(b).unwrap()).unwrap();
        let oracle: f64 = (0..200)
            .map(|m: i32| 2f64.powi(-m) * (-b / 2f64.powi(m * m)).exp())
            .sum();
        assert!(rel(tail, oracle) < 1e-13);
        let mom = e.partial_moment(1.0, &Interval::up_to(b).unwrap()).unwrap();
        let oracle: f64 = (0..25)
            .map(|m: i32| {
                let a = 2f64.powi(m * m);
                let z = b / a;
                2f64.powi(-m) * a * (1.0 - (-z).exp() * (1.0 + z))
            })
            .sum();
        assert!(rel(mom, oracle) < 1e-9, "{mom} vs {oracle}");
    }

    #[test]
    fn density_quadrature() {
        // gamma-type density x^{-1} e^{-x}: μ((b, ∞)) = E1(b)
        let g = LevyMeasure::Density(GeneralDensity::TemperedStable {
            c: 1.0,
            beta: 0.0,
            scale: Some(1.0),
        });
        let spec = SubordinatorSpec::pure_jump(g.clone());
        assert!(spec.validate().is_valid());
        let e1_of_1 = 0.219_383_934_395_520_3;
        assert!(rel(g.mass(&Interval::above(1.0).unwrap()).unwrap(), e1_of_1) < 1e-9);
        // ∫_0^b x μ(dx) = 1 - e^{-b}
        let m = g.partial_moment(1.0, &Interval::up_to(2.0).unwrap()).unwrap();
        assert!(rel(m, 1.0 - (-2.0f64).exp()) < 1e-9);
        // Laplace exponent of the gamma subordinator: ln(1 + λ)
        let phi = spec.laplace_exponent(3.0).unwrap();
        assert!(rel(phi, 4f64.ln()) < 1e-9);
        assert!(matches!(g.total_mass(), Err(Error::UnboundedMass(_))));
    }

    #[test]
    fn stable_density_errors() {
        let s = LevyMeasure::Density(GeneralDensity::TemperedStable {
            c: 1.0,
            beta: 0.5,
            scale: None,
        });
        assert!(SubordinatorSpec::pure_jump(s.clone()).validate().is_valid());
        assert!(matches!(
            s.partial_moment(1.0, &Interval::above(1.0).unwrap()),
            Err(Error::DivergentMoment(_))
        ));
        // ∫_1^∞ x^{-1.5} dx = 2
        assert!(rel(s.mass(&Interval::above(1.0).unwrap()).unwrap(), 2.0) < 1e-9);
        let bad = LevyMeasure::Density(GeneralDensity::TemperedStable {
            c: 1.0,
            beta: 1.2,
            scale: None,
        });
        assert!(!SubordinatorSpec::pure_jump(bad).validate().is_valid());
    }

    #[test]
    fn custom_density_requires_sane_hints() {
        let d = GeneralDensity::custom(
            |x| (-x).exp(),
            DensityHints {
                lower: 1.0,
                upper: 0.5,
                zero_exponent: 0.0,
                tail_exponent: None,
            },
        );
        let r = SubordinatorSpec::pure_jump(LevyMeasure::Density(d)).validate();
        assert!(!r.is_valid());
        let d = GeneralDensity::custom(
            |x| (-x).exp(),
            DensityHints {
                lower: 0.01,
                upper: 50.0,
                zero_exponent: 0.0,
                tail_exponent: None,
            },
        );
        let m = LevyMeasure::Density(d);
        assert!(rel(m.total_mass().unwrap(), 1.0) < 1e-10);
    }

    #[test]
    fn json_round_trip() {
        let specs = vec![
            SubordinatorSpec::pure_jump(large_scale()),
            SubordinatorSpec::new(0.5, LevyMeasure::dirac(2.0)),
            SubordinatorSpec::pure_jump(LevyMeasure::exp_mixture(vec![Term::new(1.0, 3.0)])),
            SubordinatorSpec::pure_jump(LevyMeasure::Density(GeneralDensity::TemperedStable {
                c: 2.0,
                beta: 0.5,
                scale: Some(4.0),
            })),
        ];
        for s in specs {
            let js = serde_json::to_string(&s).unwrap();
            let back: SubordinatorSpec = serde_json::from_str(&js).unwrap();
            assert_eq!(back, s, "{js}");
        }
        let parsed: SubordinatorSpec = serde_json::from_str(
            r#"{"drift": 0, "measure": {"type": "expmix", "components": [{"weight": 1, "scale": 2}]}}"#,
        )
        .unwrap();
        assert_eq!(
            parsed.measure,
            LevyMeasure::exp_mixture(vec![Term::new(1.0, 2.0)])
        );
    }

    #[test]
    fn tail_of_geometric_family_is_closed_form() {
        let t = ln_tail_quadratic([0.0, -1.0, 0.0], 3).unwrap();
        assert!(rel(t.exp(), 0.25) < 1e-15);
        assert!(ln_tail_quadratic([0.0, 1.0, 0.0], 0).is_none());
        assert!(ln_tail_quadratic([0.0, -1.0, 1e-9], 0).is_none());
    }
}
