//! Jump kernel `j(r) = ∫ (2πs)^{-d/2} exp(-r²/2s) μ(ds)` of a subordinated
//! Brownian motion, kernel ratios, and box integrals `J(x, U) = ∫_U j(|x-y|) dy`.
//!
//! Every series is summed in the log domain; family series stop once a
//! rigorous remainder bound is `cutoff_nats` below the largest term, and that
//! bound is reported alongside the value.

use std::cell::RefCell;
use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{
    sum_series, GeneralDensity, LevyMeasure, SeriesSum, SubordinatorSpec, TermSource,
};
use crate::numeric::{laplace_interval, normal_interval};
use crate::quad::{integrate_with_breaks, QuadOptions};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    ClosedFormAtomic,
    ClosedFormExpmix1d,
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelOptions {
    /// Family series stop when the remainder bound is this many nats below
    /// the largest term.
    pub cutoff_nats: f64,
    /// Relative tolerance of one-dimensional kernel quadratures.
    pub quad_rel_tol: f64,
    /// Relative tolerance of box integrals.
    pub region_rel_tol: f64,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            cutoff_nats: 60.0,
            quad_rel_tol: 1e-10,
            region_rel_tol: 1e-8,
        }
    }
}

/// A product of intervals in `ℝ^d`. Endpoints may be infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub bounds: Vec<(f64, f64)>,
}

impl BoxRegion {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::Domain("a box needs at least one side".into()));
        }
        for &(lo, hi) in &bounds {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(Error::Domain(format!("invalid box side ({lo}, {hi})")));
            }
        }
        Ok(Self { bounds })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![(lo, hi)])
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    /// True when some side has zero length.
    pub fn is_degenerate(&self) -> bool {
        self.bounds.iter().any(|(lo, hi)| lo == hi)
    }

    pub fn volume(&self) -> f64 {
        self.bounds.iter().map(|(lo, hi)| hi - lo).product()
    }

    /// Open-box membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.bounds)
            .all(|(xi, (lo, hi))| *xi > *lo && *xi < *hi)
    }

    pub fn closure_contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.bounds)
            .all(|(xi, (lo, hi))| *xi >= *lo && *xi <= *hi)
    }

    /// Largest coordinate-wise distance from `x` to the box (0 inside).
    pub fn coordinate_gap(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.bounds)
            .map(|(xi, (lo, hi))| (lo - xi).max(xi - hi).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn translated(&self, h: &[f64]) -> Self {
        Self {
            bounds: self
                .bounds
                .iter()
                .zip(h)
                .map(|((lo, hi), hi_shift)| (lo + hi_shift, hi + hi_shift))
                .collect(),
        }
    }
}

/// `j(r)` with its truncation accounting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelValue {
    pub ln_value: f64,
    /// Log of the bound on omitted terms, `-inf` for exact sums.
    pub ln_tail_bound: f64,
    pub terms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelRatio {
    /// `j(r) / j(cr)`, possibly underflowed to 0.
    pub value: f64,
    pub ln_ratio: f64,
}

/// `ln K` with `(2πs)^{-d/2} e^{-r²/2s} ≤ K s^{-q}` for all `s > 0`, `q ≤ d/2`.
fn ln_gauss_bound(q: f64, d: f64, r: f64) -> f64 {
    let beta = d / 2.0 - q;
    if beta == 0.0 {
        -0.5 * d * LN_2PI
    } else {
        -0.5 * d * LN_2PI - beta * (r * r / (2.0 * beta)).ln() - beta
    }
}

/// `ln K` with `(2A)^{-1/2} e^{-√2 r/√A} ≤ K A^{-q}` for all `A > 0`, `q ≤ 1/2`.
fn ln_laplace_bound(q: f64, r: f64) -> f64 {
    let g = 1.0 - 2.0 * q;
    if g == 0.0 {
        -0.5 * LN_2
    } else {
        -0.5 * LN_2 + g * (g / (2f64.sqrt() * r)).ln() - g
    }
}

/// `ln ∫ exp(h(v)) dv` for a strictly concave `h` peaking at `v0`.
fn ln_integral_concave(h: impl Fn(f64) -> f64, v0: f64, rel_tol: f64) -> Result<f64> {
    let top = h(v0);
    if !top.is_finite() {
        return Ok(top);
    }
    let reach = |dir: f64| {
        let mut step = 1.0;
        while h(v0 + dir * step) > top - 80.0 && step < 1e6 {
            step *= 2.0;
        }
        v0 + dir * step
    };
    let (a, b) = (reach(-1.0), reach(1.0));
    let r = integrate_with_breaks(
        |v| (h(v) - top).exp(),
        a,
        b,
        &[v0 - 1.0, v0, v0 + 1.0],
        &QuadOptions::rel(rel_tol),
    )?;
    Ok(top + r.value.ln())
}

/// Evaluates the jump kernel of `W(S_t)` in dimension `d`.
#[derive(Debug, Clone)]
pub struct KernelEvaluator {
    d: u32,
    spec: SubordinatorSpec,
    strategy: Strategy,
    opts: KernelOptions,
}

impl KernelEvaluator {
    /// Picks the closed form when one exists, quadrature otherwise.
    pub fn new(d: u32, spec: SubordinatorSpec) -> Result<Self> {
        let strategy = match (&spec.measure, d) {
            (LevyMeasure::Atomic(_), _) => Strategy::ClosedFormAtomic,
            (LevyMeasure::ExpMixture(_), 1) => Strategy::ClosedFormExpmix1d,
            _ => Strategy::Quadrature,
        };
        Self::with_strategy(d, spec, strategy)
    }

    pub fn with_strategy(d: u32, spec: SubordinatorSpec, strategy: Strategy) -> Result<Self> {
        if d == 0 {
            return Err(Error::Domain("dimension must be at least 1".into()));
        }
        spec.ensure_valid()?;
        let ok = matches!(
            (strategy, &spec.measure, d),
            (Strategy::ClosedFormAtomic, LevyMeasure::Atomic(_), _)
                | (Strategy::ClosedFormExpmix1d, LevyMeasure::ExpMixture(_), 1)
                | (Strategy::Quadrature, LevyMeasure::ExpMixture(_), _)
                | (Strategy::Quadrature, LevyMeasure::Density(_), _)
        );
        if !ok {
            return Err(Error::Unsupported(format!(
                "strategy {strategy:?} does not apply to this measure in dimension {d}"
            )));
        }
        Ok(Self {
            d,
            spec,
            strategy,
            opts: KernelOptions::default(),
        })
    }

    pub fn with_options(mut self, opts: KernelOptions) -> Self {
        self.opts = opts;
        self
    }

    pub fn dim(&self) -> u32 {
        self.d
    }

    pub fn spec(&self) -> &SubordinatorSpec {
        &self.spec
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn options(&self) -> &KernelOptions {
        &self.opts
    }

    pub fn j(&self, r: f64) -> Result<f64> {
        Ok(self.ln_j(r)?.exp())
    }

    pub fn ln_j(&self, r: f64) -> Result<f64> {
        Ok(self.ln_j_detailed(r)?.ln_value)
    }

    pub fn ln_j_detailed(&self, r: f64) -> Result<KernelValue> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::Domain(format!("j(r) needs r > 0, got {r}")));
        }
        let d = self.d as f64;
        let r2 = r * r;
        let series = |source: TermSource<'_>,
                      ln_term: &mut dyn FnMut(f64, f64) -> Result<f64>,
                      candidates: &[(f64, f64)]|
         -> Result<KernelValue> {
            let s: SeriesSum = sum_series(source, ln_term, candidates, self.opts.cutoff_nats)?
                .ok_or_else(|| {
                    Error::PrecisionUnattainable(format!("no convergent tail bound for j({r})"))
                })?;
            Ok(KernelValue {
                ln_value: s.ln_value,
                ln_tail_bound: s.ln_tail_bound,
                terms: s.terms,
            })
        };
        match (&self.spec.measure, self.strategy) {
            (LevyMeasure::Atomic(a), _) => {
                let mut term = |lh: f64, la: f64| {
                    Ok(lh - 0.5 * d * (LN_2PI + la) - 0.5 * r2 * (-la).exp())
                };
                let candidates = [
                    (-0.5 * d, ln_gauss_bound(0.5 * d, d, r)),
                    (1.0, ln_gauss_bound(-1.0, d, r)),
                ];
                series(a.source(), &mut term, &candidates)
            }
            (LevyMeasure::ExpMixture(e), Strategy::ClosedFormExpmix1d) => {
                let sqrt2r = 2f64.sqrt() * r;
                let mut term =
                    |lh: f64, la: f64| Ok(lh - 0.5 * (LN_2 + la) - sqrt2r * (-0.5 * la).exp());
                let candidates = [
                    (-0.5, ln_laplace_bound(0.5, r)),
                    (1.0, ln_laplace_bound(-1.0, r)),
                ];
                series(e.source(), &mut term, &candidates)
            }
            (LevyMeasure::ExpMixture(e), _) => {
                let tol = self.opts.quad_rel_tol;
                let mut term = |lh: f64, la: f64| Ok(lh + ln_exp_component(d, r, la, tol)?);
                let candidates = [
                    (1.0, ln_gauss_bound(-1.0, d, r)),
                    (-0.5, ln_gauss_bound(0.5, d, r) + 0.5 * PI.ln()),
                ];
                series(e.source(), &mut term, &candidates)
            }
            (LevyMeasure::Density(g), _) => Ok(KernelValue {
                ln_value: self.ln_density_kernel(g, r)?,
                ln_tail_bound: f64::NEG_INFINITY,
                terms: 0,
            }),
        }
    }

    fn ln_density_kernel(&self, g: &GeneralDensity, r: f64) -> Result<f64> {
        let d = self.d as f64;
        let h = g.hints();
        let v_star = (r * r / d).ln();
        let res = integrate_with_breaks(
            |v| {
                let s = v.exp();
                if s == 0.0 || s.is_infinite() {
                    return 0.0;
                }
                let ln_gauss = -0.5 * d * (LN_2PI + v) - 0.5 * r * r / s;
                let val = g.eval(s) * (ln_gauss + v).exp();
                if val.is_finite() {
                    val
                } else {
                    0.0
                }
            },
            f64::NEG_INFINITY,
            f64::INFINITY,
            &[h.lower.ln(), v_star, h.upper.ln()],
            &QuadOptions::rel(self.opts.quad_rel_tol),
        )?;
        Ok(res.value.ln())
    }

    /// `j(r) / j(cr)` computed from two log-domain evaluations.
    pub fn kernel_ratio(&self, r: f64, c: f64) -> Result<KernelRatio> {
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::Domain(format!("ratio constant c = {c} must lie in (0, 1)")));
        }
        let num = self.ln_j(r)?;
        let den = self.ln_j(c * r)?;
        if den == f64::NEG_INFINITY || !den.is_finite() {
            return Err(Error::DynamicRange(format!(
                "j({}) is not representable even in logs",
                c * r
            )));
        }
        let ln_ratio = num - den;
        Ok(KernelRatio {
            value: ln_ratio.exp(),
            ln_ratio,
        })
    }

    /// `J(x, y) = j(|x - y|)`.
    pub fn j_points(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.j(euclid(x, y))
    }

    fn check_region(&self, x: &[f64], u: &BoxRegion) -> Result<()> {
        if x.len() != self.d as usize || u.dim() != self.d as usize {
            return Err(Error::Domain(format!(
                "point and box must have dimension {}",
                self.d
            )));
        }
        Ok(())
    }

    /// `J(x, U)`: closed form for atomic measures and one-dimensional
    /// mixtures, nested quadrature otherwise.
    pub fn j_region(&self, x: &[f64], u: &BoxRegion) -> Result<f64> {
        self.check_region(x, u)?;
        if u.is_degenerate() {
            return Ok(0.0);
        }
        match (&self.spec.measure, self.strategy) {
            (LevyMeasure::Atomic(a), _) => {
                let mut term = |lh: f64, la: f64| {
                    let sa = (0.5 * la).exp();
                    let p: f64 = x
                        .iter()
                        .zip(&u.bounds)
                        .map(|(xi, (lo, hi))| normal_interval((lo - xi) / sa, (hi - xi) / sa))
                        .product();
                    Ok(lh + p.ln())
                };
                let d = self.d as f64;
                let mut candidates = vec![(0.0, 0.0)];
                let vol = u.volume();
                if vol.is_finite() {
                    candidates.push((-0.5 * d, vol.ln() - 0.5 * d * LN_2PI));
                }
                let gap = u.coordinate_gap(x);
                if gap > 0.0 {
                    candidates.push((1.0, -2.0 * gap.ln()));
                }
                self.region_series(a.source(), &mut term, &candidates)
            }
            (LevyMeasure::ExpMixture(e), Strategy::ClosedFormExpmix1d) => {
                let (lo, hi) = u.bounds[0];
                let mut term = |lh: f64, la: f64| {
                    let k = 2f64.sqrt() * (-0.5 * la).exp();
                    Ok(lh + laplace_interval(lo - x[0], hi - x[0], k).ln())
                };
                let mut candidates = vec![(0.0, 0.0)];
                if (hi - lo).is_finite() {
                    candidates.push((-0.5, (hi - lo).ln() - 0.5 * LN_2));
                }
                let gap = u.coordinate_gap(x);
                if gap > 0.0 {
                    candidates.push((1.0, LN_2 - 2.0 - 2.0 * gap.ln()));
                }
                self.region_series(e.source(), &mut term, &candidates)
            }
            _ => self.j_region_quadrature(x, u),
        }
    }

    fn region_series(
        &self,
        source: TermSource<'_>,
        term: &mut dyn FnMut(f64, f64) -> Result<f64>,
        candidates: &[(f64, f64)],
    ) -> Result<f64> {
        match sum_series(source, term, candidates, self.opts.cutoff_nats)? {
            Some(s) => Ok(s.ln_value.exp()),
            None => Err(Error::SingularRegion(
                "J(x, U) diverges: infinitely many small jumps land in U".into(),
            )),
        }
    }

    /// `J(x, U)` by nested adaptive quadrature of `j(|x - y|)` over the box.
    pub fn j_region_quadrature(&self, x: &[f64], u: &BoxRegion) -> Result<f64> {
        self.check_region(x, u)?;
        if u.is_degenerate() {
            return Ok(0.0);
        }
        if u.closure_contains(x) && self.spec.measure.total_mass().is_err() {
            return Err(Error::SingularRegion(
                "x lies in the closure of U and μ has infinite mass".into(),
            ));
        }
        let failure = RefCell::new(None);
        let mut y = vec![0.0; x.len()];
        let v = self.nested(x, u, &mut y, 0, &failure);
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        Ok(v)
    }

    fn nested(
        &self,
        x: &[f64],
        u: &BoxRegion,
        y: &mut [f64],
        level: usize,
        failure: &RefCell<Option<Error>>,
    ) -> f64 {
        let tol = if level == 0 {
            self.opts.region_rel_tol
        } else {
            self.opts.region_rel_tol * 1e-2
        };
        let (lo, hi) = u.bounds[level];
        let last = level + 1 == x.len();
        let res = integrate_with_breaks(
            |t| {
                if failure.borrow().is_some() {
                    return 0.0;
                }
                y[level] = t;
                if last {
                    let rho = euclid(x, y).max(1e-300);
                    match self.j(rho) {
                        Ok(v) => v,
                        Err(e) => {
                            failure.borrow_mut().get_or_insert(e);
                            0.0
                        }
                    }
                } else {
                    self.nested(x, u, y, level + 1, failure)
                }
            },
            lo,
            hi,
            &[x[level]],
            &QuadOptions::rel(tol),
        );
        match res {
            Ok(r) => r.value,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e.into());
                0.0
            }
        }
    }
}

/// `ln E[(2π A Y)^{-d/2} exp(-r² / (2 A Y))]` for a standard exponential `Y`.
fn ln_exp_component(d: f64, r: f64, la: f64, rel_tol: f64) -> Result<f64> {
    // integrand in v = ln s: (1 - d/2) v - r²/2 e^{-v} - e^{v - la} - la + const
    let b = 1.0 - 0.5 * d;
    let ln_eps = (2.0 * r * r).ln() - la;
    let eps = ln_eps.exp();
    let ln_y = if b > 0.0 {
        ((b + (b * b + eps).sqrt()) / 2.0).ln()
    } else if b == 0.0 {
        0.5 * ln_eps - LN_2
    } else {
        ln_eps - LN_2 - ((b * b + eps).sqrt() - b).ln()
    };
    let v0 = la + ln_y;
    let h = |v: f64| b * v - 0.5 * d * LN_2PI - 0.5 * r * r * (-v).exp() - (v - la).exp() - la;
    ln_integral_concave(h, v0, rel_tol)
}

fn euclid(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// `∫_0^∞ exp(-(t² + r²/t²)) dt = (√π/2) e^{-2r}`.
pub fn gaussian_exponential_integral(r: f64) -> f64 {
    0.5 * PI.sqrt() * (-2.0 * r).exp()
}

/// The left-hand side of [`gaussian_exponential_integral`] by quadrature.
pub fn gaussian_exponential_integral_quadrature(r: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::Domain(format!("r = {r} must be ≥ 0")));
    }
    let breaks: Vec<f64> = if r > 0.0 { vec![r.sqrt()] } else { vec![] };
    let res = integrate_with_breaks(
        |t| {
            if t == 0.0 {
                return if r == 0.0 { 1.0 } else { 0.0 };
            }
            (-(t * t + r * r / (t * t))).exp()
        },
        0.0,
        f64::INFINITY,
        &breaks,
        &QuadOptions {
            rel_tol: 1e-12,
            abs_tol: 1e-15,
            ..QuadOptions::default()
        },
    )?;
    Ok(res.value)
}
