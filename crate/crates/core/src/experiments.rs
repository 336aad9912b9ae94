//! Runnable checks of the analytic identities and inequalities behind the
//! construction, plus the kernel-ratio figure data.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::kernel::{gaussian_exponential_integral, gaussian_exponential_integral_quadrature, BoxRegion, KernelEvaluator};
use crate::measure::SubordinatorSpec;
use crate::recipe::{compute_rn, CatalogEntry};
use crate::sim::{
    catalog_truncation, estimate_escape_probability, estimate_exit_distribution, estimate_exit_paired,
    estimate_position_probability, ExitEstimate, JumpSampler, McConfig, Region, RngStream, Truncation,
};

pub const MAX_ENUMERATION_TERMS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    /// `|lhs - rhs| ≤ tol`
    Equal,
    /// `lhs ≤ rhs + tol`
    AtMost,
    /// `lhs ≥ rhs - tol`
    AtLeast,
}

impl Relation {
    pub fn holds(self, lhs: f64, rhs: f64, tol: f64) -> bool {
        match self {
            Relation::Equal => (lhs - rhs).abs() <= tol,
            Relation::AtMost => lhs <= rhs + tol,
            Relation::AtLeast => lhs >= rhs - tol,
        }
    }
}

/// Outcome of one check, with everything needed to re-derive `pass`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub name: String,
    pub relation: Relation,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    /// Per-comparison tolerance (absolute, or a multiple of a joint standard error).
    pub tolerance: Vec<f64>,
    pub pass: bool,
    #[serde(default)]
    pub checks: Vec<VerificationResult>,
    #[serde(default)]
    pub metadata: BTreeMap<String, Value>,
}

impl VerificationResult {
    pub fn new(name: impl Into<String>, relation: Relation, lhs: Vec<f64>, rhs: Vec<f64>, tolerance: Vec<f64>) -> Self {
        let mut r = Self {
            name: name.into(),
            relation,
            lhs,
            rhs,
            tolerance,
            pass: false,
            checks: Vec::new(),
            metadata: BTreeMap::new(),
        };
        r.pass = r.evaluate();
        r
    }

    /// Recomputes the pass flag from the recorded values.
    pub fn evaluate(&self) -> bool {
        self.lhs.len() == self.rhs.len()
            && self.lhs.len() == self.tolerance.len()
            && self
                .lhs
                .iter()
                .zip(&self.rhs)
                .zip(&self.tolerance)
                .all(|((l, r), t)| self.relation.holds(*l, *r, *t))
            && self.checks.iter().all(|c| c.evaluate())
    }

    pub fn with_check(mut self, check: VerificationResult) -> Self {
        self.checks.push(check);
        self.pass = self.evaluate();
        self
    }

    pub fn with_meta(mut self, key: &str, value: impl Serialize) -> Self {
        self.metadata
            .insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
        self
    }
}

fn mc_meta(r: VerificationResult, cfg: &McConfig) -> VerificationResult {
    r.with_meta("seed", cfg.seed)
        .with_meta("paths", cfg.paths)
        .with_meta("stream_offset", cfg.stream_offset)
        .with_meta("confidence", cfg.confidence)
}

/// `P(even number of successes)` for independent Bernoulli(a_i).
pub fn bernoulli_even_closed_form(weights: &[f64]) -> f64 {
    0.5 * (1.0 + weights.iter().map(|a| 1.0 - 2.0 * a).product::<f64>())
}

/// Same probability by summing over all `2^k` outcomes.
pub fn bernoulli_even_enumerated(weights: &[f64]) -> Result<f64> {
    let k = weights.len();
    if k > MAX_ENUMERATION_TERMS {
        return Err(Error::Domain(format!(
            "enumeration is limited to {MAX_ENUMERATION_TERMS} weights, got {k}"
        )));
    }
    let mut total = 0.0;
    for mask in 0u32..(1u32 << k) {
        if mask.count_ones() % 2 != 0 {
            continue;
        }
        let mut p = 1.0;
        for (i, a) in weights.iter().enumerate() {
            p *= if mask >> i & 1 == 1 { *a } else { 1.0 - a };
        }
        total += p;
    }
    Ok(total)
}

pub fn verify_bernoulli_even(weights: &[f64]) -> Result<VerificationResult> {
    if let Some(a) = weights.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::Domain(format!("weight {a} is outside [0, 1]")));
    }
    let brute = bernoulli_even_enumerated(weights)?;
    let closed = bernoulli_even_closed_form(weights);
    Ok(
        VerificationResult::new("bernoulli-even", Relation::Equal, vec![closed], vec![brute], vec![1e-12])
            .with_meta("weights", weights),
    )
}

pub const INTEGRAL_LEMMA_GRID: [f64; 4] = [0.0, 0.5, 1.0, 2.0];

pub fn verify_integral_lemma(grid: &[f64]) -> Result<VerificationResult> {
    let mut lhs = Vec::with_capacity(grid.len());
    for &r in grid {
        lhs.push(gaussian_exponential_integral_quadrature(r)?);
    }
    let rhs = grid.iter().map(|r| gaussian_exponential_integral(*r)).collect();
    Ok(
        VerificationResult::new("integral-lemma", Relation::Equal, lhs, rhs, vec![1e-8; grid.len()])
            .with_meta("r", grid),
    )
}

fn boxes_disjoint(a: &BoxRegion, b: &BoxRegion) -> bool {
    a.bounds
        .iter()
        .zip(&b.bounds)
        .any(|((alo, ahi), (blo, bhi))| ahi <= blo || bhi <= alo)
}

fn paired_result(name: &str, p: &crate::sim::PairedEstimate, cfg: &McConfig) -> VerificationResult {
    let r = VerificationResult::new(
        name,
        Relation::Equal,
        vec![p.first.mean],
        vec![p.second.mean],
        vec![3.0 * p.difference.stderr],
    );
    mc_meta(r, cfg)
        .with_meta("lhs_stderr", p.first.stderr)
        .with_meta("rhs_stderr", p.second.stderr)
        .with_meta("joint_stderr", p.difference.stderr)
        .with_meta("correlation", p.correlation)
        .with_meta("censored", p.censored)
        .with_meta("horizon", p.horizon)
        .with_meta("truncation", &p.truncation)
}

/// Exit probability into `target` against the time integral of `J(X_s, target)`,
/// on common paths.
pub fn verify_levy_system(
    spec: &SubordinatorSpec,
    domain: &BoxRegion,
    target: &BoxRegion,
    x: &[f64],
    truncation: Truncation,
    cfg: &McConfig,
) -> Result<VerificationResult> {
    let d = x.len();
    if domain.dim() != d || target.dim() != d {
        return Err(Error::InvalidScenario("dimension mismatch".into()));
    }
    if !boxes_disjoint(domain, target) {
        return Err(Error::InvalidScenario("domain and target must be disjoint".into()));
    }
    let kernel = KernelEvaluator::new(d as u32, spec.clone())?;
    let sampler = JumpSampler::new(spec, d, truncation)?;
    let g = |p: &[f64]| kernel.j_region(p, target).unwrap_or(f64::NAN);
    let p = estimate_exit_paired(
        &sampler,
        &Region::Box(domain.clone()),
        &Region::Box(target.clone()),
        &g,
        x,
        cfg,
    )?;
    Ok(paired_result("levy-system", &p, cfg)
        .with_meta("domain", domain)
        .with_meta("target", target)
        .with_meta("x", x))
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Distance from `x` to the closure of a bounded region, and the largest
/// distance from `x` to a point of it.
fn distance_range(region: &Region, x: &[f64]) -> Result<Option<(f64, f64)>> {
    match region {
        Region::Empty => Ok(None),
        Region::Ball { center, radius } => {
            let c = euclid(center, x);
            Ok(Some(((c - radius).max(0.0), c + radius)))
        }
        Region::Box(b) => {
            let mut near = 0.0;
            let mut far = 0.0;
            for (xi, (lo, hi)) in x.iter().zip(&b.bounds) {
                let n = (lo - xi).max(xi - hi).max(0.0);
                let f = (xi - lo).abs().max((hi - xi).abs());
                near += n * n;
                far += f * f;
            }
            Ok(Some((near.sqrt(), far.sqrt())))
        }
        _ => Err(Error::InvalidScenario(
            "intermediate-jump geometry needs bounded regions".into(),
        )),
    }
}

/// Checks `B(x, r1) ∩ E2 = ∅` and `E1 ∪ E2 ⊆ B(x, r2)`.
pub fn intermediate_jump_geometry(e1: &Region, e2: &Region, x: &[f64], r1: f64, r2: f64) -> Result<()> {
    if !(r1 > 0.0 && r2 > r1) {
        return Err(Error::InvalidScenario(format!("need 0 < r1 < r2, got {r1}, {r2}")));
    }
    if let Some((near, far)) = distance_range(e2, x)? {
        if near < r1 {
            return Err(Error::InvalidScenario("E2 meets B(x, r1)".into()));
        }
        if far > r2 {
            return Err(Error::InvalidScenario("E2 is not inside B(x, r2)".into()));
        }
    }
    if let Some((_, far)) = distance_range(e1, x)? {
        if far > r2 {
            return Err(Error::InvalidScenario("E1 is not inside B(x, r2)".into()));
        }
    }
    Ok(())
}

/// `P_x(X_{τ_{E1}} ∈ E2) ≤ P_0(X_{τ_{B(0,r1)}} ∈ B(0,r2))`, estimated on
/// independent streams.
#[allow(clippy::too_many_arguments)]
pub fn verify_intermediate_jump(
    spec: &SubordinatorSpec,
    e1: &Region,
    e2: &Region,
    x: &[f64],
    r1: f64,
    r2: f64,
    truncation: Truncation,
    cfg: &McConfig,
) -> Result<VerificationResult> {
    intermediate_jump_geometry(e1, e2, x, r1, r2)?;
    let d = x.len();
    let sampler = JumpSampler::new(spec, d, truncation)?;
    let lhs = estimate_exit_distribution(&sampler, e1, e2, x, cfg)?;
    let rcfg = McConfig {
        stream_offset: cfg.stream_offset + cfg.paths,
        ..cfg.clone()
    };
    let rhs = estimate_exit_distribution(
        &sampler,
        &Region::centered_ball(d, r1)?,
        &Region::centered_ball(d, r2)?,
        &vec![0.0; d],
        &rcfg,
    )?;
    let joint = lhs.estimate.stderr.hypot(rhs.estimate.stderr);
    let r = VerificationResult::new(
        "intermediate-jump",
        Relation::AtMost,
        vec![lhs.estimate.mean],
        vec![rhs.estimate.mean],
        vec![3.0 * joint],
    );
    Ok(mc_meta(r, cfg)
        .with_meta("lhs", &lhs)
        .with_meta("rhs", &rhs)
        .with_meta("r1", r1)
        .with_meta("r2", r2))
}

/// Closed half-space `{x : x·normal ≥ offset}` with reflection across its
/// boundary hyperplane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl HalfSpace {
    pub fn new(normal: Vec<f64>, offset: f64) -> Result<Self> {
        let n2: f64 = normal.iter().map(|v| v * v).sum();
        if !(n2 > 0.0 && n2.is_finite()) {
            return Err(Error::Domain("half-space normal must be non-zero".into()));
        }
        let scale = n2.sqrt();
        Ok(Self {
            normal: normal.iter().map(|v| v / scale).collect(),
            offset: offset / scale,
        })
    }

    /// Signed distance to the boundary, non-negative inside.
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.normal).map(|(a, b)| a * b).sum::<f64>() - self.offset
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.signed_distance(x) >= 0.0
    }

    pub fn reflect(&self, x: &[f64]) -> Vec<f64> {
        let s = self.signed_distance(x);
        x.iter().zip(&self.normal).map(|(a, n)| a - 2.0 * s * n).collect()
    }

    pub fn region(&self) -> Region {
        Region::HalfSpace {
            normal: self.normal.clone(),
            offset: self.offset,
        }
    }
}

/// Probability that a folded jump from `x` to `y` crosses the boundary,
/// `J(x, y') / (J(x, y) + J(x, y'))`. Uses `|x - y'|² = |x - y|² + 4 s_x s_y`.
pub fn p_flip(kernel: &KernelEvaluator, v: &HalfSpace, x: &[f64], y: &[f64]) -> Result<f64> {
    let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let cross = 4.0 * v.signed_distance(x) * v.signed_distance(y);
    let near = kernel.ln_j(r2.sqrt())?;
    let far = kernel.ln_j((r2 + cross).sqrt())?;
    if near == f64::NEG_INFINITY {
        return Err(Error::DynamicRange("both kernel values underflow".into()));
    }
    Ok(1.0 / (1.0 + (near - far).exp()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferredSideScenario {
    pub half_space: HalfSpace,
    pub start: Vec<f64>,
    pub time: f64,
    /// Number of random point pairs for the flip-probability check.
    pub pairs: usize,
    /// Pair coordinates are drawn within this distance of the start's projection.
    pub pair_scale: f64,
}

pub fn verify_preferred_side(
    spec: &SubordinatorSpec,
    scenario: &PreferredSideScenario,
    truncation: Truncation,
    cfg: &McConfig,
) -> Result<VerificationResult> {
    let v = &scenario.half_space;
    let x = &scenario.start;
    let d = x.len();
    if v.normal.len() != d {
        return Err(Error::InvalidScenario("dimension mismatch".into()));
    }
    if !v.contains(x) {
        return Err(Error::InvalidScenario("start point must lie in the half-space".into()));
    }
    let sampler = JumpSampler::new(spec, d, truncation)?;
    let est = estimate_position_probability(&sampler, &v.region(), x, scenario.time, cfg)?;

    let kernel = KernelEvaluator::new(d as u32, spec.clone())?;
    let mut rng = RngStream::new(cfg.seed, u64::MAX).rng();
    let base = v.reflect(x);
    let base: Vec<f64> = x.iter().zip(&base).map(|(a, b)| 0.5 * (a + b)).collect();
    let scale = scenario.pair_scale;
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        let mut p: Vec<f64> = base.iter().map(|b| b + scale * (2.0 * rng.random::<f64>() - 1.0)).collect();
        let s = v.signed_distance(&p);
        if s < 0.0 {
            p = v.reflect(&p);
        }
        p
    };
    let mut worst = 0.0f64;
    let mut evaluated = 0usize;
    for _ in 0..scenario.pairs {
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        if a == b {
            continue;
        }
        worst = worst.max(p_flip(&kernel, v, &a, &b)?);
        evaluated += 1;
    }
    let main = VerificationResult::new(
        "preferred-side",
        Relation::AtLeast,
        vec![est.estimate.mean],
        vec![0.5],
        vec![3.0 * est.estimate.stderr],
    );
    let flip = VerificationResult::new("p-flip", Relation::AtMost, vec![worst], vec![0.5], vec![0.0])
        .with_meta("pairs", evaluated);
    Ok(mc_meta(main, cfg)
        .with_meta("estimate", &est)
        .with_meta("scenario", scenario)
        .with_check(flip))
}

/// Two-dimensional cylinder geometry around a ball of radius `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagramScenario {
    pub radius: f64,
    pub alpha: f64,
    pub c: f64,
}

impl DiagramScenario {
    pub fn new(radius: f64, alpha: f64, c: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidScenario(format!("radius must be positive, got {radius}")));
        }
        if !(alpha > 0.0 && 29f64.sqrt() * alpha <= c && c < 1.0) {
            return Err(Error::InvalidScenario(format!(
                "need 0 < √29·α ≤ c < 1, got α = {alpha}, c = {c}"
            )));
        }
        Ok(Self { radius, alpha, c })
    }

    pub fn domain(&self) -> BoxRegion {
        let r = self.radius;
        BoxRegion { bounds: vec![(-r, r), (-r, r)] }
    }

    pub fn target(&self) -> BoxRegion {
        let (r, a) = (self.radius, self.alpha);
        BoxRegion {
            bounds: vec![((1.0 + a) * r, (3.0 + a) * r), (-r, r)],
        }
    }

    /// `x_0 = (1 - α) R e_1`.
    pub fn x0(&self) -> [f64; 2] {
        [(1.0 - self.alpha) * self.radius, 0.0]
    }

    /// Thin slab at the far side of the domain containing `-x_0`.
    pub fn left_slab(&self) -> BoxRegion {
        let (r, a) = (self.radius, self.alpha);
        BoxRegion {
            bounds: vec![(-r, -(1.0 - 2.0 * a) * r), (-a * r, a * r)],
        }
    }

    /// Points of the left half of the domain outside [`Self::left_slab`].
    pub fn in_left_half(&self, p: &[f64]) -> bool {
        self.domain().contains(p) && p[0] <= 0.0 && !self.left_slab().contains(p)
    }

    /// Square grid of `res × res` points over `[-ρ, ρ]²`, `ρ = (1 - α/2) R`,
    /// restricted to the closed disc of radius `ρ`.
    pub fn start_grid(&self, res: usize) -> Vec<[f64; 2]> {
        let rho = (1.0 - 0.5 * self.alpha) * self.radius;
        let mut pts = Vec::new();
        if res < 2 {
            return vec![[0.0, 0.0]];
        }
        let step = 2.0 * rho / (res - 1) as f64;
        let mid = 0.5 * (res - 1) as f64;
        for i in 0..res {
            for k in 0..res {
                let p = [(i as f64 - mid) * step, (k as f64 - mid) * step];
                if p[0].hypot(p[1]) <= rho * (1.0 + 1e-12) {
                    pts.push(p);
                }
            }
        }
        pts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub x: [f64; 2],
    pub mean: f64,
    pub stderr: f64,
    pub censored: u64,
}

impl PointEstimate {
    fn from(x: [f64; 2], e: &ExitEstimate) -> Self {
        Self {
            x,
            mean: e.estimate.mean,
            stderr: e.estimate.stderr,
            censored: e.censored,
        }
    }
}

pub const MIN_GRID_RESOLUTION: usize = 5;

/// Exit-into-target probability at `-x_0` against the kernel-ratio bracket
/// times the grid maximum, in dimension 2.
pub fn verify_diagram_prop(
    entry: &CatalogEntry,
    n: u32,
    alpha: f64,
    c: f64,
    grid_resolution: usize,
    cfg: &McConfig,
) -> Result<VerificationResult> {
    let entry = entry.clone().with_dimension(2)?;
    let radius = compute_rn(&entry.input, n)?;
    let scenario = DiagramScenario::new(radius, alpha, c)?;
    let sampler = JumpSampler::new(&entry.input.spec, 2, catalog_truncation(&entry, n)?)?;
    let domain = Region::Box(scenario.domain());
    let target = Region::Box(scenario.target());

    let grid = scenario.start_grid(grid_resolution);
    let mut points: Vec<[f64; 2]> = vec![{
        let x0 = scenario.x0();
        [-x0[0], -x0[1]]
    }];
    points.extend(grid.iter().copied());

    let mut estimates = Vec::with_capacity(points.len());
    for (k, p) in points.iter().enumerate() {
        let pcfg = McConfig {
            stream_offset: cfg.stream_offset + k as u64 * cfg.paths,
            ..cfg.clone()
        };
        let e = estimate_exit_distribution(&sampler, &domain, &target, p, &pcfg)?;
        if e.flagged {
            return Err(Error::InvalidScenario(format!(
                "censored fraction {} at {p:?} exceeds the threshold",
                e.censored_fraction
            )));
        }
        estimates.push(PointEstimate::from(*p, &e));
    }
    let esc_cfg = McConfig {
        stream_offset: cfg.stream_offset + points.len() as u64 * cfg.paths,
        ..cfg.clone()
    };
    let escape = estimate_escape_probability(&entry, n, alpha, &esc_cfg)?;
    if escape.flagged {
        return Err(Error::InvalidScenario("escape estimate exceeds the censoring threshold".into()));
    }
    let ratio = entry.kernel()?.kernel_ratio(radius, c)?;

    let lhs = &estimates[0];
    let grid_est = &estimates[1..];
    let sup = grid_est
        .iter()
        .max_by(|a, b| a.mean.total_cmp(&b.mean))
        .expect("non-empty grid");
    let ln_first = -2.0 * alpha.ln() + ratio.ln_ratio;
    let bracket = ln_first.exp() + 2.0 * escape.estimate.mean;
    let rhs = bracket * sup.mean;
    let rhs_se = (bracket * sup.stderr).hypot(2.0 * sup.mean * escape.estimate.stderr);
    let joint = lhs.stderr.hypot(rhs_se);

    let center = grid_est
        .iter()
        .find(|e| e.x == [0.0, 0.0])
        .ok_or_else(|| Error::InvalidScenario("grid resolution must be odd to contain the origin".into()))?;

    let mut left = VerificationResult::new(
        "left-half-below-center",
        Relation::AtMost,
        vec![lhs.mean],
        vec![center.mean],
        vec![3.0 * lhs.stderr.hypot(center.stderr)],
    );
    for e in grid_est.iter().filter(|e| scenario.in_left_half(&e.x)) {
        left.lhs.push(e.mean);
        left.rhs.push(center.mean);
        left.tolerance.push(3.0 * e.stderr.hypot(center.stderr));
    }
    left.pass = left.evaluate();

    let mut mirror = VerificationResult::new("mirror-symmetry", Relation::Equal, vec![], vec![], vec![]);
    for e in grid_est.iter().filter(|e| e.x[0] == 0.0 && e.x[1] > 0.0) {
        if let Some(m) = grid_est.iter().find(|m| m.x[0] == 0.0 && m.x[1] == -e.x[1]) {
            mirror.lhs.push(e.mean);
            mirror.rhs.push(m.mean);
            mirror.tolerance.push(3.0 * e.stderr.hypot(m.stderr));
        }
    }
    mirror.pass = mirror.evaluate();

    let result = VerificationResult::new("diagram-prop", Relation::AtMost, vec![lhs.mean], vec![rhs], vec![3.0 * joint]);
    Ok(mc_meta(result, cfg)
        .with_meta("example", &entry.name)
        .with_meta("n", n)
        .with_meta("scenario", &scenario)
        .with_meta("grid_resolution", grid_resolution)
        .with_meta("sup_surrogate_coarse", grid_resolution < MIN_GRID_RESOLUTION)
        .with_meta("ln_kernel_ratio", ratio.ln_ratio)
        .with_meta("bracket", bracket)
        .with_meta("escape", &escape)
        .with_meta("grid_max", sup)
        .with_meta("points", &estimates)
        .with_check(left)
        .with_check(mirror))
}

/// How the figure's `r` grid is laid out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RGridPolicy {
    /// Bands `m = 0..=last_band`, band `m` spanning `[√A_m, √A_{m+1})`.
    pub last_band: u32,
    pub per_band: usize,
}

impl Default for RGridPolicy {
    fn default() -> Self {
        Self {
            last_band: 4,
            per_band: 64,
        }
    }
}

pub const FIGURE_CSV_COLUMNS: [&str; 7] = ["r", "j_r", "j_half_r", "ratio", "log_ratio", "is_marker", "m"];

/// One row of the kernel-ratio figure. Kernel values that do not fit in a
/// double are left empty and only the log ratio is kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureRow {
    pub r: f64,
    pub j_r: Option<f64>,
    pub j_half_r: Option<f64>,
    pub ratio: Option<f64>,
    pub log_ratio: f64,
    pub is_marker: bool,
    pub m: u32,
}

fn representable(ln: f64) -> Option<f64> {
    let v = ln.exp();
    (v > 0.0 && v.is_finite()).then_some(v)
}

pub fn jratio_row(kernel: &KernelEvaluator, r: f64, c: f64, m: u32, is_marker: bool) -> Result<FigureRow> {
    let ln_r = kernel.ln_j(r)?;
    let ln_c = kernel.ln_j(c * r)?;
    if !ln_c.is_finite() || !ln_r.is_finite() {
        return Err(Error::DynamicRange(format!("kernel at r = {r} is not finite in logs")));
    }
    let log_ratio = ln_r - ln_c;
    Ok(FigureRow {
        r,
        j_r: representable(ln_r),
        j_half_r: representable(ln_c),
        ratio: representable(log_ratio),
        log_ratio,
        is_marker,
        m,
    })
}

pub fn figure_jratio_data(entry: &CatalogEntry, policy: RGridPolicy, c: f64) -> Result<Vec<FigureRow>> {
    if !entry.plotted {
        return Err(Error::Unsupported(format!("{} has no kernel-ratio figure", entry.name)));
    }
    if policy.per_band == 0 {
        return Err(Error::Domain("at least one point per band is required".into()));
    }
    let kernel = entry.kernel()?;
    let mut rows = Vec::new();
    for m in 0..=policy.last_band {
        let lo = 0.5 * entry.family.ln_location(m as u64);
        let hi = 0.5 * entry.family.ln_location(m as u64 + 1);
        for i in 0..policy.per_band {
            let r = (lo + (hi - lo) * i as f64 / policy.per_band as f64).exp();
            rows.push(jratio_row(&kernel, r, c, m, false)?);
        }
        if m >= entry.input.first_n {
            let rm = compute_rn(&entry.input, m)?;
            rows.push(jratio_row(&kernel, rm, c, m, true)?);
        }
    }
    let end = (0.5 * entry.family.ln_location(policy.last_band as u64 + 1)).exp();
    rows.push(jratio_row(&kernel, end, c, policy.last_band, false)?);
    rows.sort_by(|a, b| a.r.total_cmp(&b.r).then(a.is_marker.cmp(&b.is_marker)));
    Ok(rows)
}

pub fn write_figure_csv<W: Write>(rows: &[FigureRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row).map_err(|e| Error::Io(e.to_string()))?;
    }
    out.flush().map_err(|e| Error::Io(e.to_string()))
}

/// Marker placement inside its band and strict decrease of marker log ratios.
pub fn check_figure_markers(entry: &CatalogEntry, rows: &[FigureRow]) -> VerificationResult {
    let markers: Vec<&FigureRow> = rows.iter().filter(|r| r.is_marker).collect();
    let mut lower = VerificationResult::new("marker-above-band-start", Relation::AtLeast, vec![], vec![], vec![]);
    let mut upper = VerificationResult::new("marker-below-band-end", Relation::AtMost, vec![], vec![], vec![]);
    for row in &markers {
        lower.lhs.push(row.r);
        lower.rhs.push(entry.family.location(row.m as u64).sqrt());
        lower.tolerance.push(0.0);
        upper.lhs.push(row.r);
        upper.rhs.push(entry.family.location(row.m as u64 + 1).sqrt());
        upper.tolerance.push(0.0);
    }
    lower.pass = lower.evaluate();
    upper.pass = upper.evaluate();
    let mut decreasing = VerificationResult::new("marker-log-ratio-decreasing", Relation::AtMost, vec![], vec![], vec![]);
    for w in markers.windows(2) {
        // strict: lhs < rhs encoded as lhs ≤ rhs with a tolerance of -ε
        decreasing.lhs.push(w[1].log_ratio);
        decreasing.rhs.push(w[0].log_ratio);
        decreasing.tolerance.push(-f64::MIN_POSITIVE);
    }
    decreasing.pass = decreasing.evaluate();
    VerificationResult::new("figure-markers", Relation::Equal, vec![], vec![], vec![])
        .with_meta("example", &entry.name)
        .with_meta("markers", markers.len())
        .with_check(lower)
        .with_check(upper)
        .with_check(decreasing)
}

/// JSON record of a verification, with parameters for reproduction.
pub fn to_json(result: &VerificationResult) -> Value {
    json!(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::LevyMeasure;
    use crate::recipe::catalog;

    #[test]
    fn bernoulli_small_cases() {
        assert_eq!(bernoulli_even_closed_form(&[]), 1.0);
        assert_eq!(bernoulli_even_enumerated(&[]).unwrap(), 1.0);
        assert_eq!(bernoulli_even_closed_form(&[0.5]), 0.5);
        let r = verify_bernoulli_even(&[0.3, 0.2]).unwrap();
        assert!(r.pass);
        assert!((r.lhs[0] - 0.62).abs() < 1e-15);
        assert!((r.rhs[0] - 0.62).abs() < 1e-15);
        assert!(verify_bernoulli_even(&[1.5]).is_err());
        assert!(bernoulli_even_enumerated(&[0.1; 21]).is_err());
    }

    #[test]
    fn integral_lemma_grid() {
        let r = verify_integral_lemma(&INTEGRAL_LEMMA_GRID).unwrap();
        assert!(r.pass, "{r:?}");
        assert!((r.rhs[0] - 0.886_226_925_452_758).abs() < 1e-12);
        assert!((r.rhs[3] - 0.016_231_812_340_065_862).abs() < 1e-12);
    }

    #[test]
    fn pass_flag_is_recomputable() {
        let mut r = VerificationResult::new("x", Relation::AtMost, vec![1.0], vec![0.5], vec![0.6]);
        assert!(r.pass);
        r.tolerance[0] = 0.4;
        assert!(!r.evaluate());
        assert!(Relation::AtLeast.holds(0.4, 0.5, 0.1));
        assert!(!Relation::Equal.holds(0.0, 1.0, 0.5));
    }

    #[test]
    fn diagram_constraint() {
        assert!(DiagramScenario::new(1.0, 0.05, 0.5).is_ok());
        assert!(DiagramScenario::new(1.0, 0.1, 0.5).is_err());
        assert!(DiagramScenario::new(1.0, 0.05, 1.0).is_err());
        assert!(DiagramScenario::new(1.0, 0.0, 0.5).is_err());
        let s = DiagramScenario::new(2.0, 0.05, 0.5).unwrap();
        let g = s.start_grid(9);
        assert_eq!(g.len(), 49);
        assert!(g.contains(&[0.0, 0.0]));
        let x0 = s.x0();
        assert!(s.left_slab().contains(&[-x0[0], 0.0]));
        assert!(!s.in_left_half(&[-x0[0], 0.0]));
        assert!(s.in_left_half(&[-0.5, 1.0]));
    }

    #[test]
    fn p_flip_on_boundary_is_half() {
        let spec = SubordinatorSpec::pure_jump(LevyMeasure::dirac(1.0));
        let k = KernelEvaluator::new(1, spec).unwrap();
        let v = HalfSpace::new(vec![1.0], 0.0).unwrap();
        assert_eq!(p_flip(&k, &v, &[0.0], &[0.7]).unwrap(), 0.5);
        assert!(p_flip(&k, &v, &[0.3], &[0.7]).unwrap() < 0.5);
    }

    #[test]
    fn intermediate_geometry_rejections() {
        let e1 = Region::centered_ball(1, 1.0).unwrap();
        let e2 = Region::Box(BoxRegion::interval(1.5, 2.0).unwrap());
        assert!(intermediate_jump_geometry(&e1, &e2, &[0.0], 1.0, 3.0).is_ok());
        assert!(intermediate_jump_geometry(&e1, &e2, &[0.0], 1.6, 3.0).is_err());
        assert!(intermediate_jump_geometry(&e1, &e2, &[0.0], 1.0, 1.9).is_err());
        assert!(intermediate_jump_geometry(&e1, &Region::Empty, &[0.0], 1.0, 1.9).is_ok());
    }

    #[test]
    fn empty_target_gives_zero_on_both_sides() {
        let spec = SubordinatorSpec::pure_jump(LevyMeasure::dirac(1.0));
        let d = BoxRegion::interval(-1.0, 1.0).unwrap();
        let u = BoxRegion::interval(2.0, 2.0).unwrap();
        let r = verify_levy_system(&spec, &d, &u, &[0.0], Truncation::None, &McConfig::new(500, 3)).unwrap();
        assert_eq!(r.lhs, vec![0.0]);
        assert_eq!(r.rhs, vec![0.0]);
        assert!(r.pass);
    }

    #[test]
    fn figure_rows_and_csv() {
        let e = catalog("large-scale-dirac").unwrap();
        let rows = figure_jratio_data(&e, RGridPolicy { last_band: 2, per_band: 4 }, 0.5).unwrap();
        assert_eq!(rows.iter().filter(|r| r.is_marker).count(), 2);
        assert!(rows.windows(2).all(|w| w[0].r <= w[1].r));
        assert!(rows.iter().all(|r| r.log_ratio <= 0.0));
        let mut buf = Vec::new();
        write_figure_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), FIGURE_CSV_COLUMNS.join(","));
        assert_eq!(text.lines().count(), rows.len() + 1);
        assert!(figure_jratio_data(&catalog("small-scale-dirac").unwrap(), RGridPolicy::default(), 0.5).is_err());
    }

    #[test]
    fn ratio_near_origin_is_one() {
        let e = catalog("continuous-expmix").unwrap();
        let row = jratio_row(&e.kernel().unwrap(), 1e-9, 0.5, 0, false).unwrap();
        assert!(row.log_ratio.abs() < 1e-6);
    }
}
