//! Criteria engine for the three-sequence construction `(a_n, b_n, c_n)`
//! that certifies failure of the elliptic Harnack inequality, plus the
//! catalogue of worked examples.
//!
//! For a subordinator with drift `γ` and Lévy measure `μ` the engine computes
//!
//! ```text
//! R_n² = a_n (d ln(c_n/b_n) + 2 ln(μ[a_n,b_n] / μ(b_n,∞)))
//! θ_n  = (γ + ∫_(0,b_n] s μ(ds)) / μ(b_n,∞)
//! ```
//!
//! and checks `c_n ≫ R_n² ≫ max(b_n, θ_n)` (as ratio trends and thresholds),
//! the tail condition `∫_(b_n,∞) s^{-d/2} μ(ds) / μ(b_n,∞) ≤ c_n^{-d/2}`, and
//! the kernel-ratio bound `j(R_n)/j(R_n/2) ≤ 2 exp(-3 f_n / 8)`, `f_n = R_n²/b_n`.

use std::f64::consts::{LN_2, SQRT_2};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelEvaluator;
use crate::measure::{Interval, LevyMeasure, QuadraticFamily, SubordinatorSpec, TermSource};
use crate::numeric::LogSum;

/// A positive sequence indexed by `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Sequence {
    /// `2^{c0 + c1 n + c2 n²}`.
    Log2Quadratic { coeffs: [f64; 3] },
    /// `values[n - start]`.
    Values { start: u32, values: Vec<f64> },
}

impl Sequence {
    pub fn constant(v: f64) -> Self {
        Sequence::Log2Quadratic {
            coeffs: [v.log2(), 0.0, 0.0],
        }
    }

    /// `A_{n+shift}` for a family with `A_m = 2^{l0 + l1 m + l2 m²}`.
    pub fn family_location(fam: &QuadraticFamily, shift: i32) -> Self {
        let [l0, l1, l2] = fam.location_log2;
        let k = shift as f64;
        Sequence::Log2Quadratic {
            coeffs: [l0 + l1 * k + l2 * k * k, l1 + 2.0 * l2 * k, l2],
        }
    }

    pub fn value(&self, n: u32) -> Result<f64> {
        match self {
            Sequence::Log2Quadratic { coeffs } => {
                let x = n as f64;
                Ok((coeffs[0] + coeffs[1] * x + coeffs[2] * x * x).exp2())
            }
            Sequence::Values { start, values } => n
                .checked_sub(*start)
                .and_then(|i| values.get(i as usize))
                .copied()
                .ok_or_else(|| Error::Domain(format!("sequence has no value at n = {n}"))),
        }
    }
}

/// Which definitions of `R_n`, `θ_n` and `f_n` apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    /// Mass-based `R_n`, `θ_n`; `f_n = R_n²/b_n`; bound `2 exp(-3f/8)`.
    General,
    /// Component-indexed variant for exponential mixtures:
    /// `R_n = √(a_n/8) ln(c_n/b_n)`, `θ_n = (γ + Σ_{m≤n} H_m A_m) / Σ_{m>n} H_m`,
    /// `f_n = R_n/√a_n`, bound `2 exp(-f/√2)`.
    ComponentSplit,
}

/// Closed forms known for the catalogued examples, kept for cross-checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClosedForm {
    LargeScaleDirac,
    SmallScaleDirac,
    ContinuousExpmix,
}

impl ClosedForm {
    /// `R_n²` in dimension `d`.
    pub fn r_n_sq(&self, n: u32, d: u32) -> f64 {
        let (nf, df) = (n as f64, d as f64);
        match self {
            ClosedForm::LargeScaleDirac => (nf * nf).exp2() * df * LN_2 * (2.0 * nf + 1.0),
            ClosedForm::SmallScaleDirac => {
                (-nf * nf).exp2() * (df * LN_2 * (2.0 * nf - 1.0) - 2.0 * nf.ln())
            }
            ClosedForm::ContinuousExpmix => {
                let g = (2.0 * nf + 1.0) * LN_2;
                (nf * nf).exp2() / 8.0 * g * g
            }
        }
    }

    pub fn theta_n(&self, n: u32) -> f64 {
        match self {
            ClosedForm::LargeScaleDirac | ClosedForm::ContinuousExpmix => {
                let s: f64 = (0..=n)
                    .map(|m| ((m * m) as f64 - m as f64).exp2())
                    .sum();
                (n as f64).exp2() * s
            }
            ClosedForm::SmallScaleDirac => {
                let s: f64 = (n..n + 40).map(|m| (-((m * m) as f64)).exp2()).sum();
                s / n as f64
            }
        }
    }

    /// Upper bound on `θ_n` quoted with each example.
    pub fn theta_bound(&self, n: u32) -> f64 {
        let nf = n as f64;
        match self {
            ClosedForm::LargeScaleDirac | ClosedForm::ContinuousExpmix => {
                (nf * nf).exp2() * (1.0 + nf * (-2.0 * nf + 2.0).exp2())
            }
            ClosedForm::SmallScaleDirac => 2.0 * (-nf * nf).exp2() / nf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeInput {
    pub spec: SubordinatorSpec,
    pub d: u32,
    pub a: Sequence,
    pub b: Sequence,
    pub c: Sequence,
    pub rule: Rule,
    /// Smallest index at which the sequences are meant to be used.
    pub first_n: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_form: Option<ClosedForm>,
}

impl RecipeInput {
    pub fn new(spec: SubordinatorSpec, d: u32, a: Sequence, b: Sequence, c: Sequence) -> Self {
        Self {
            spec,
            d,
            a,
            b,
            c,
            rule: Rule::General,
            first_n: 0,
            closed_form: None,
        }
    }

    pub fn with_dimension(mut self, d: u32) -> Self {
        self.d = d;
        self
    }

    /// `(a_n, b_n, c_n)`, checked for `0 < a_n ≤ b_n ≤ c_n`.
    pub fn abc(&self, n: u32) -> Result<(f64, f64, f64)> {
        let (a, b, c) = (self.a.value(n)?, self.b.value(n)?, self.c.value(n)?);
        if !(a > 0.0 && a <= b && b <= c && c.is_finite()) {
            return Err(Error::RecipeInapplicable {
                n,
                reason: format!("need 0 < a_n ≤ b_n ≤ c_n < ∞, got {a}, {b}, {c}"),
            });
        }
        Ok((a, b, c))
    }
}

fn mixture_family(spec: &SubordinatorSpec) -> Option<TermSource<'_>> {
    match &spec.measure {
        LevyMeasure::ExpMixture(e) => Some(e.source()),
        _ => None,
    }
}

/// `R_n` for the input's rule.
pub fn compute_rn(input: &RecipeInput, n: u32) -> Result<f64> {
    let (a, b, c) = input.abc(n)?;
    match input.rule {
        Rule::General => {
            let ln_core = input.spec.measure.ln_mass(&Interval::closed(a, b)?)?;
            let ln_tail = input.spec.measure.ln_mass(&Interval::above(b)?)?;
            if ln_tail == f64::NEG_INFINITY {
                return Err(Error::NoLargeJumps(b));
            }
            let bracket = input.d as f64 * (c / b).ln() + 2.0 * (ln_core - ln_tail);
            if !(bracket > 0.0) {
                return Err(Error::RecipeInapplicable {
                    n,
                    reason: format!("bracket d ln(c/b) + 2 ln(mass ratio) = {bracket} ≤ 0"),
                });
            }
            Ok((a * bracket).sqrt())
        }
        Rule::ComponentSplit => {
            let gap = (c / b).ln();
            if !(gap > 0.0) {
                return Err(Error::RecipeInapplicable {
                    n,
                    reason: "c_n must exceed b_n".into(),
                });
            }
            Ok((a / 8.0).sqrt() * gap)
        }
    }
}

/// `θ_n` for the input's rule.
pub fn compute_theta_n(input: &RecipeInput, n: u32) -> Result<f64> {
    let (_, b, _) = input.abc(n)?;
    let gamma = input.spec.drift;
    match input.rule {
        Rule::General => {
            let tail = input.spec.measure.mass(&Interval::above(b)?)?;
            if !(tail > 0.0) {
                return Err(Error::NoLargeJumps(b));
            }
            let small = input.spec.measure.partial_moment(1.0, &Interval::up_to(b)?)?;
            Ok((gamma + small) / tail)
        }
        Rule::ComponentSplit => {
            let source = mixture_family(&input.spec).ok_or_else(|| {
                Error::Unsupported("component split needs an exponential mixture".into())
            })?;
            let (head, ln_tail) = match source {
                TermSource::Finite(list) => {
                    let k = (n as usize + 1).min(list.len());
                    let head: f64 = list[..k].iter().map(|t| t.weight * t.location).sum();
                    let mut tail = LogSum::new();
                    for t in &list[k..] {
                        tail.push(t.weight.ln());
                    }
                    (head, tail.ln_value())
                }
                TermSource::Family(fam) => {
                    let mut head = LogSum::new();
                    for m in 0..=n as u64 {
                        head.push(fam.ln_weight(m) + fam.ln_location(m));
                    }
                    let tail = fam
                        .ln_tail(0.0, n as u64 + 1)
                        .ok_or_else(|| Error::UnboundedMass("Σ H_m diverges".into()))?;
                    (head.value(), tail)
                }
            };
            if ln_tail == f64::NEG_INFINITY {
                return Err(Error::NoLargeJumps(b));
            }
            Ok((gamma + head) / ln_tail.exp())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecipeOptions {
    /// Kernel-ratio constant `c` in `j(R)/j(cR)`.
    pub c: f64,
    /// Minimum value both `≫` ratios must reach at the last checked `n`.
    pub threshold: f64,
    /// Also evaluate `j(R_n)/j(c R_n)` with the kernel.
    pub with_kernel: bool,
}

impl Default for RecipeOptions {
    fn default() -> Self {
        Self {
            c: 0.5,
            threshold: 10.0,
            with_kernel: true,
        }
    }
}

/// One row of a recipe check. CSV column order follows field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeRow {
    pub n: u32,
    pub a_n: f64,
    pub b_n: f64,
    pub c_n: f64,
    pub r_n: f64,
    pub r_n_sq: f64,
    pub theta_n: f64,
    pub f_n: f64,
    pub ratio_large: f64,
    pub ratio_small: f64,
    pub cn_lhs: f64,
    pub cn_rhs: f64,
    pub cn_holds: bool,
    pub kernel_bound: f64,
    pub ln_kernel_bound: f64,
    pub kernel_ln_ratio: Option<f64>,
    pub kernel_bound_holds: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeSummary {
    pub cn_all: bool,
    pub ratio_large_increasing: bool,
    pub ratio_small_increasing: bool,
    pub ratio_large_above_threshold: bool,
    pub ratio_small_above_threshold: bool,
    pub kernel_bound_all: Option<bool>,
    pub kernel_ratio_decreasing: Option<bool>,
}

impl RecipeSummary {
    /// Every flag, including the threshold reading of `≫`.
    pub fn all(&self) -> bool {
        self.cn_all
            && self.ratio_large_increasing
            && self.ratio_small_increasing
            && self.ratio_large_above_threshold
            && self.ratio_small_above_threshold
            && self.kernel_bound_all.unwrap_or(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeReport {
    pub rows: Vec<RecipeRow>,
    pub summary: RecipeSummary,
    pub options: RecipeOptions,
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

/// Evaluates one index.
pub fn recipe_row(
    input: &RecipeInput,
    n: u32,
    opts: &RecipeOptions,
    kernel: Option<&KernelEvaluator>,
) -> Result<RecipeRow> {
    let (a, b, c) = input.abc(n)?;
    let r = compute_rn(input, n)?;
    let theta = compute_theta_n(input, n)?;
    let r2 = r * r;
    let d = input.d as f64;
    let tail = input.spec.measure.mass(&Interval::above(b)?)?;
    let cn_lhs = input
        .spec
        .measure
        .partial_moment(-d / 2.0, &Interval::above(b)?)?
        / tail;
    let cn_rhs = c.powf(-d / 2.0);
    let (f, ln_bound) = match input.rule {
        Rule::General => {
            let f = r2 / b;
            (f, LN_2 - 3.0 * f / 8.0)
        }
        Rule::ComponentSplit => {
            let f = r / a.sqrt();
            (f, LN_2 - f / SQRT_2)
        }
    };
    let (kernel_ln_ratio, kernel_bound_holds) = match kernel {
        Some(k) => {
            let lr = k.kernel_ratio(r, opts.c)?.ln_ratio;
            (Some(lr), Some(lr <= ln_bound))
        }
        None => (None, None),
    };
    Ok(RecipeRow {
        n,
        a_n: a,
        b_n: b,
        c_n: c,
        r_n: r,
        r_n_sq: r2,
        theta_n: theta,
        f_n: f,
        ratio_large: c / r2,
        ratio_small: r2 / b.max(theta),
        cn_lhs,
        cn_rhs,
        cn_holds: cn_lhs <= cn_rhs,
        kernel_bound: ln_bound.exp(),
        ln_kernel_bound: ln_bound,
        kernel_ln_ratio,
        kernel_bound_holds,
    })
}

/// Evaluates every index in `ns` and summarises the flags.
pub fn check_recipe(
    input: &RecipeInput,
    ns: std::ops::RangeInclusive<u32>,
    opts: &RecipeOptions,
) -> Result<RecipeReport> {
    let kernel = if opts.with_kernel {
        Some(KernelEvaluator::new(input.d, input.spec.clone())?)
    } else {
        None
    };
    let rows = ns
        .map(|n| recipe_row(input, n, opts, kernel.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let large: Vec<f64> = rows.iter().map(|r| r.ratio_large).collect();
    let small: Vec<f64> = rows.iter().map(|r| r.ratio_small).collect();
    let last = rows.last();
    let kernel_bound_all = kernel
        .as_ref()
        .map(|_| rows.iter().all(|r| r.kernel_bound_holds == Some(true)));
    let kernel_ratio_decreasing = kernel.as_ref().map(|_| {
        let lr: Vec<f64> = rows.iter().filter_map(|r| r.kernel_ln_ratio).collect();
        lr.windows(2).all(|w| w[1] < w[0])
    });
    let summary = RecipeSummary {
        cn_all: rows.iter().all(|r| r.cn_holds),
        ratio_large_increasing: rows.len() > 1 && strictly_increasing(&large),
        ratio_small_increasing: rows.len() > 1 && strictly_increasing(&small),
        ratio_large_above_threshold: last.is_some_and(|r| r.ratio_large >= opts.threshold),
        ratio_small_above_threshold: last.is_some_and(|r| r.ratio_small >= opts.threshold),
        kernel_bound_all,
        kernel_ratio_decreasing,
    };
    Ok(RecipeReport {
        rows,
        summary,
        options: *opts,
    })
}

/// Stable CSV header; one row per `n`.
pub const RECIPE_CSV_COLUMNS: [&str; 17] = [
    "n",
    "a_n",
    "b_n",
    "c_n",
    "r_n",
    "r_n_sq",
    "theta_n",
    "f_n",
    "ratio_large",
    "ratio_small",
    "cn_lhs",
    "cn_rhs",
    "cn_holds",
    "kernel_bound",
    "ln_kernel_bound",
    "kernel_ln_ratio",
    "kernel_bound_holds",
];

impl RecipeReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.rows {
            out.serialize(row)
                .map_err(|e| Error::Io(e.to_string()))?;
        }
        out.flush().map_err(|e| Error::Io(e.to_string()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
    }
}

pub const CATALOG_NAMES: [&str; 3] = ["large-scale-dirac", "small-scale-dirac", "continuous-expmix"];

/// A named example: its recipe input plus metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: String,
    pub family: QuadraticFamily,
    pub input: RecipeInput,
    /// Whether the example is one of the two whose kernel ratio is plotted.
    pub plotted: bool,
    /// Whether the dimension is fixed by the construction.
    pub fixed_dimension: bool,
}

impl CatalogEntry {
    pub fn with_dimension(mut self, d: u32) -> Result<Self> {
        if self.fixed_dimension && d != self.input.d {
            return Err(Error::Unsupported(format!(
                "{} is defined in dimension {} only",
                self.name, self.input.d
            )));
        }
        if d == 0 {
            return Err(Error::Domain("dimension must be at least 1".into()));
        }
        self.input.d = d;
        Ok(self)
    }

    /// `A_m`.
    pub fn location(&self, m: u64) -> f64 {
        self.family.location(m)
    }

    pub fn kernel(&self) -> Result<KernelEvaluator> {
        KernelEvaluator::new(self.input.d, self.input.spec.clone())
    }
}

/// Looks up a catalogued example (dimension 1 by default).
pub fn catalog(name: &str) -> Result<CatalogEntry> {
    let large = QuadraticFamily::new([0.0, -1.0, 0.0], [0.0, 0.0, 1.0]);
    let small = QuadraticFamily::new([0.0, 0.0, 0.0], [0.0, 0.0, -1.0]);
    let entry = match name {
        "large-scale-dirac" => CatalogEntry {
            name: name.into(),
            family: large,
            input: RecipeInput {
                spec: SubordinatorSpec::pure_jump(LevyMeasure::atomic_family(large)),
                d: 1,
                a: Sequence::family_location(&large, 0),
                b: Sequence::family_location(&large, 0),
                c: Sequence::family_location(&large, 1),
                rule: Rule::General,
                first_n: 1,
                closed_form: Some(ClosedForm::LargeScaleDirac),
            },
            plotted: true,
            fixed_dimension: false,
        },
        "small-scale-dirac" => CatalogEntry {
            name: name.into(),
            family: small,
            input: RecipeInput {
                spec: SubordinatorSpec::pure_jump(LevyMeasure::atomic_family(small)),
                d: 1,
                a: Sequence::family_location(&small, 0),
                b: Sequence::family_location(&small, 0),
                c: Sequence::family_location(&small, -1),
                rule: Rule::General,
                first_n: 2,
                closed_form: Some(ClosedForm::SmallScaleDirac),
            },
            plotted: false,
            fixed_dimension: false,
        },
        "continuous-expmix" => CatalogEntry {
            name: name.into(),
            family: large,
            input: RecipeInput {
                spec: SubordinatorSpec::pure_jump(LevyMeasure::exp_mixture_family(large)),
                d: 1,
                a: Sequence::family_location(&large, 0),
                b: Sequence::family_location(&large, 0),
                c: Sequence::family_location(&large, 1),
                rule: Rule::ComponentSplit,
                first_n: 1,
                closed_form: Some(ClosedForm::ContinuousExpmix),
            },
            plotted: true,
            fixed_dimension: true,
        },
        other => return Err(Error::UnknownExample(other.into())),
    };
    Ok(entry)
}
