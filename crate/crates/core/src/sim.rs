//! Event-driven Monte Carlo for pure-jump subordinated Brownian motion.
//!
//! Every path draws from its own ChaCha8 stream `(seed, stream_offset + i)`,
//! so results do not depend on how paths are spread over threads. Paths are
//! processed in fixed blocks whose summaries are merged in block order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::kernel::BoxRegion;
use crate::measure::{Direction, LevyMeasure, SubordinatorSpec, TermSource};
use crate::numeric::normal_sf;
use crate::recipe::{compute_rn, CatalogEntry};

const BLOCK: u64 = 1024;
/// Increasing families are cut once the remaining jump rate drops below this.
const RATE_FLOOR: f64 = 1e-15;
/// Relative omitted mass tolerated by [`Truncation::Auto`].
const AUTO_MASS_FRACTION: f64 = 1e-9;
const MAX_COMPONENTS: u64 = 100_000;
const MAX_CHAIN_EVENTS: usize = 50_000_000;

/// A reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Which jump components are simulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Truncation {
    /// Keep everything. Infinite families with finite total rate drop only
    /// components past the point where the remaining rate is negligible.
    #[default]
    None,
    /// Keep components with index `m ≤ max_index`.
    MaxIndex { max_index: u64 },
    /// Keep components with size `A_m ≥ floor`.
    SizeFloor { floor: f64 },
    /// Smallest index set whose omitted mass rate is below `1e-9 · scale`.
    Auto { scale: f64 },
}

/// What was dropped by a [`Truncation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub truncation: Truncation,
    pub kept: usize,
    pub first_index: Option<u64>,
    pub last_index: Option<u64>,
    pub total_rate: f64,
    /// Expected number of omitted jumps per unit time.
    pub omitted_rate: f64,
    /// `Σ_{omitted} H_m A_m`: expected omitted subordinator growth per unit time.
    pub omitted_mass_rate: f64,
}

/// Compound Poisson jump generator for a truncated pure-jump spec.
#[derive(Debug, Clone)]
pub struct JumpSampler {
    d: usize,
    sizes: Vec<f64>,
    cum: Vec<f64>,
    total_rate: f64,
    exponential: bool,
    report: TruncationReport,
}

struct Kept {
    index: u64,
    rate: f64,
    size: f64,
}

fn select_components(source: TermSource<'_>, trunc: Truncation) -> Result<(Vec<Kept>, f64, f64)> {
    let mut kept = Vec::new();
    let mut omitted_rate = 0.0;
    let mut omitted_mass = 0.0;
    match source {
        TermSource::Finite(terms) => {
            for (i, t) in terms.iter().enumerate() {
                let keep = match trunc {
                    Truncation::None | Truncation::Auto { .. } => true,
                    Truncation::MaxIndex { max_index } => (i as u64) <= max_index,
                    Truncation::SizeFloor { floor } => t.location >= floor,
                };
                if t.weight == 0.0 {
                    continue;
                }
                if keep {
                    kept.push(Kept {
                        index: i as u64,
                        rate: t.weight,
                        size: t.location,
                    });
                } else {
                    omitted_rate += t.weight;
                    omitted_mass += t.weight * t.location;
                }
            }
        }
        TermSource::Family(fam) => {
            let tail_rate = |from: u64| fam.ln_tail(0.0, from).map_or(f64::INFINITY, f64::exp);
            let tail_mass = |from: u64| fam.ln_tail(1.0, from).map_or(f64::INFINITY, f64::exp);
            let finite_rate = fam.ln_tail(0.0, 0).is_some();
            let decreasing = fam.direction() == Some(Direction::Decreasing);
            let first = match trunc {
                Truncation::SizeFloor { floor } if !decreasing => {
                    let mut m = 0;
                    while fam.location(m) < floor {
                        m += 1;
                        if m > MAX_COMPONENTS {
                            return Ok((kept, tail_rate(0), tail_mass(0)));
                        }
                    }
                    m
                }
                _ => 0,
            };
            for m in 0..first {
                omitted_rate += fam.weight(m);
                omitted_mass += fam.weight(m) * fam.location(m);
            }
            if let Truncation::None = trunc {
                if !finite_rate {
                    return Err(Error::TruncationRequired(
                        "the Lévy measure has infinite total mass".into(),
                    ));
                }
            }
            let mut m = first;
            loop {
                let (h, a) = (fam.weight(m), fam.location(m));
                let stop_before = match trunc {
                    Truncation::MaxIndex { max_index } => m > max_index,
                    Truncation::SizeFloor { floor } => decreasing && a < floor,
                    _ => false,
                };
                if stop_before || !a.is_finite() || a == 0.0 {
                    break;
                }
                if h > 0.0 {
                    kept.push(Kept {
                        index: m,
                        rate: h,
                        size: a,
                    });
                }
                let done = match trunc {
                    Truncation::Auto { scale } if !finite_rate || decreasing => {
                        tail_mass(m + 1) < AUTO_MASS_FRACTION * scale
                    }
                    Truncation::MaxIndex { .. } => false,
                    Truncation::SizeFloor { .. } if decreasing => false,
                    _ => tail_rate(m + 1) < RATE_FLOOR,
                };
                if done {
                    m += 1;
                    break;
                }
                m += 1;
                if m - first > MAX_COMPONENTS {
                    return Err(Error::TruncationRequired(format!(
                        "more than {MAX_COMPONENTS} components survive the truncation"
                    )));
                }
            }
            omitted_rate += tail_rate(m);
            omitted_mass += tail_mass(m);
        }
    }
    Ok((kept, omitted_rate, omitted_mass))
}

impl JumpSampler {
    /// Builds the sampler for `X = W(S_t)` in dimension `d` (`d = 0` gives the
    /// subordinator alone).
    pub fn new(spec: &SubordinatorSpec, d: usize, truncation: Truncation) -> Result<Self> {
        spec.ensure_valid()?;
        if spec.drift > 0.0 {
            return Err(Error::DriftPathsUnsupported);
        }
        if let Truncation::Auto { scale } = truncation {
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(Error::Domain(format!("truncation scale must be positive, got {scale}")));
            }
        }
        let (source, exponential) = match &spec.measure {
            LevyMeasure::Atomic(a) => (a.source(), false),
            LevyMeasure::ExpMixture(e) => (e.source(), true),
            LevyMeasure::Density(_) => {
                return Err(Error::Unsupported(
                    "path sampling for general densities".into(),
                ))
            }
        };
        let (kept, omitted_rate, omitted_mass_rate) = select_components(source, truncation)?;
        let mut cum = Vec::with_capacity(kept.len());
        let mut acc = 0.0;
        for k in &kept {
            acc += k.rate;
            cum.push(acc);
        }
        if !acc.is_finite() {
            return Err(Error::TruncationRequired(
                "the retained jump rate is infinite".into(),
            ));
        }
        let report = TruncationReport {
            truncation,
            kept: kept.len(),
            first_index: kept.first().map(|k| k.index),
            last_index: kept.last().map(|k| k.index),
            total_rate: acc,
            omitted_rate,
            omitted_mass_rate,
        };
        Ok(Self {
            d,
            sizes: kept.iter().map(|k| k.size).collect(),
            cum,
            total_rate: acc,
            exponential,
            report,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn total_rate(&self) -> f64 {
        self.total_rate
    }

    pub fn report(&self) -> &TruncationReport {
        &self.report
    }

    /// Retained `(rate, size)` pairs; `size` is the mean jump for mixtures.
    pub fn components(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let mut prev = 0.0;
        self.cum.iter().zip(&self.sizes).map(move |(c, s)| {
            let r = c - prev;
            prev = *c;
            (r, *s)
        })
    }

    /// Draws the next event: holding time, subordinator jump, and the spatial
    /// displacement written to `disp`. `None` when no jumps are retained.
    fn step<R: Rng>(&self, rng: &mut R, disp: &mut [f64]) -> Option<(f64, f64)> {
        if self.total_rate == 0.0 {
            return None;
        }
        let dt = rng.sample::<f64, _>(Exp1) / self.total_rate;
        let u = rng.random::<f64>() * self.total_rate;
        let k = self.cum.partition_point(|c| *c <= u).min(self.sizes.len() - 1);
        let mut s = self.sizes[k];
        if self.exponential {
            s *= rng.sample::<f64, _>(Exp1);
        }
        let sd = s.sqrt();
        for v in disp.iter_mut() {
            *v = sd * rng.sample::<f64, _>(StandardNormal);
        }
        Some((dt, s))
    }

    /// Probability that one jump moves some coordinate by more than `width`.
    fn coordinate_escape(&self, width: f64) -> f64 {
        if !width.is_finite() {
            return 0.0;
        }
        if self.total_rate == 0.0 {
            return 0.0;
        }
        let mut p = 0.0;
        for (rate, a) in self.components() {
            let q = if self.exponential {
                (-width * (2.0 / a).sqrt()).exp()
            } else {
                2.0 * normal_sf(width / a.sqrt())
            };
            p += rate * q;
        }
        p / self.total_rate
    }

    /// Default horizon for exiting `domain`: 20 expected exit-relevant events.
    pub fn auto_horizon(&self, domain: &Region) -> f64 {
        let p = self.coordinate_escape(domain.exit_width());
        if p > 0.0 {
            20.0 / (p * self.total_rate)
        } else {
            f64::INFINITY
        }
    }
}

/// One subordinator jump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubordinatorEvent {
    pub time: f64,
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubordinatorPath {
    pub horizon: f64,
    pub events: Vec<SubordinatorEvent>,
    pub truncation: TruncationReport,
}

/// Jumps of `S` on `[0, horizon]`.
pub fn sample_subordinator_events(
    spec: &SubordinatorSpec,
    truncation: Truncation,
    horizon: f64,
    stream: RngStream,
) -> Result<SubordinatorPath> {
    check_horizon(horizon)?;
    let sampler = JumpSampler::new(spec, 0, truncation)?;
    let mut rng = stream.rng();
    let mut events = Vec::new();
    let mut t = 0.0;
    while let Some((dt, s)) = sampler.step(&mut rng, &mut []) {
        t += dt;
        if t > horizon {
            break;
        }
        events.push(SubordinatorEvent { time: t, size: s });
        if events.len() > MAX_CHAIN_EVENTS {
            return Err(Error::Domain("event count exceeds the storage cap".into()));
        }
    }
    Ok(SubordinatorPath {
        horizon,
        events,
        truncation: sampler.report.clone(),
    })
}

fn check_horizon(horizon: f64) -> Result<()> {
    if horizon > 0.0 && horizon.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("horizon must be positive and finite, got {horizon}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainEvent {
    pub time: f64,
    pub size: f64,
    pub displacement: Vec<f64>,
    pub position: Vec<f64>,
}

/// A stored path of `X` up to a horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpChain {
    pub start: Vec<f64>,
    pub horizon: f64,
    pub events: Vec<ChainEvent>,
    pub truncation: TruncationReport,
}

impl JumpChain {
    /// Position at time `t` (right-continuous).
    pub fn position_at(&self, t: f64) -> &[f64] {
        let k = self.events.partition_point(|e| e.time <= t);
        if k == 0 {
            &self.start
        } else {
            &self.events[k - 1].position
        }
    }

    /// Index of the first event whose post-jump position leaves `domain`.
    pub fn first_exit(&self, domain: &Region) -> Option<usize> {
        self.events.iter().position(|e| !domain.contains(&e.position))
    }
}

pub fn sample_sbm_chain_with(
    sampler: &JumpSampler,
    start: &[f64],
    horizon: f64,
    stream: RngStream,
) -> Result<JumpChain> {
    check_horizon(horizon)?;
    check_dim(sampler.d, start.len())?;
    let mut rng = stream.rng();
    let mut pos = start.to_vec();
    let mut disp = vec![0.0; sampler.d];
    let mut t = 0.0;
    let mut events = Vec::new();
    while let Some((dt, s)) = sampler.step(&mut rng, &mut disp) {
        t += dt;
        if t > horizon {
            break;
        }
        for (p, v) in pos.iter_mut().zip(&disp) {
            *p += v;
        }
        events.push(ChainEvent {
            time: t,
            size: s,
            displacement: disp.clone(),
            position: pos.clone(),
        });
        if events.len() > MAX_CHAIN_EVENTS {
            return Err(Error::Domain("event count exceeds the storage cap".into()));
        }
    }
    Ok(JumpChain {
        start: start.to_vec(),
        horizon,
        events,
        truncation: sampler.report.clone(),
    })
}

/// Samples a jump chain of `X` in dimension `start.len()`.
pub fn sample_sbm_chain(
    spec: &SubordinatorSpec,
    truncation: Truncation,
    start: &[f64],
    horizon: f64,
    stream: RngStream,
) -> Result<JumpChain> {
    let sampler = JumpSampler::new(spec, start.len(), truncation)?;
    sample_sbm_chain_with(&sampler, start, horizon, stream)
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::InvalidScenario(format!(
            "dimension mismatch: expected {expected}, got {got}"
        )))
    }
}

/// Sets used as domains and targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum Region {
    /// Open ball.
    Ball { center: Vec<f64>, radius: f64 },
    /// Open box.
    Box(BoxRegion),
    /// Closed half-space `{x : x·normal ≥ offset}`.
    HalfSpace { normal: Vec<f64>, offset: f64 },
    Whole,
    Empty,
}

impl Region {
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || center.is_empty() {
            return Err(Error::Domain(format!("invalid ball radius {radius}")));
        }
        Ok(Region::Ball { center, radius })
    }

    pub fn centered_ball(d: usize, radius: f64) -> Result<Self> {
        Self::ball(vec![0.0; d], radius)
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            Region::Ball { center, .. } => Some(center.len()),
            Region::Box(b) => Some(b.dim()),
            Region::HalfSpace { normal, .. } => Some(normal.len()),
            Region::Whole | Region::Empty => None,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Region::Ball { center, radius } => {
                let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                r2 < radius * radius
            }
            Region::Box(b) => b.contains(x),
            Region::HalfSpace { normal, offset } => {
                x.iter().zip(normal).map(|(a, b)| a * b).sum::<f64>() >= *offset
            }
            Region::Whole => true,
            Region::Empty => false,
        }
    }

    /// A coordinate move longer than this leaves the region from anywhere.
    pub fn exit_width(&self) -> f64 {
        match self {
            Region::Ball { radius, .. } => 2.0 * radius,
            Region::Box(b) => b.bounds.iter().map(|(lo, hi)| hi - lo).fold(f64::INFINITY, f64::min),
            Region::HalfSpace { .. } | Region::Whole => f64::INFINITY,
            Region::Empty => 0.0,
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        match self.dim() {
            Some(k) => check_dim(d, k),
            None => Ok(()),
        }
    }
}

/// Monte Carlo run parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub paths: u64,
    pub seed: u64,
    /// Path `i` uses stream `stream_offset + i`.
    pub stream_offset: u64,
    /// Thread cap; `None` uses the global pool.
    pub workers: Option<usize>,
    /// Censoring time; `None` picks [`JumpSampler::auto_horizon`].
    pub horizon: Option<f64>,
    pub max_events: u64,
    pub confidence: f64,
    /// Censored fraction above which results are flagged.
    pub censor_threshold: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            paths: 10_000,
            seed: 0,
            stream_offset: 0,
            workers: None,
            horizon: None,
            max_events: 10_000_000,
            confidence: 0.99,
            censor_threshold: 1e-3,
        }
    }
}

impl McConfig {
    pub fn new(paths: u64, seed: u64) -> Self {
        Self {
            paths,
            seed,
            ..Self::default()
        }
    }
}

/// Sample mean with standard error and a two-sided normal interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
    pub confidence: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Two-sided standard normal quantile for `confidence`.
pub fn z_value(confidence: f64) -> f64 {
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    std.inverse_cdf(0.5 + 0.5 * confidence)
}

impl Estimate {
    pub fn new(mean: f64, stderr: f64, n: u64, confidence: f64) -> Self {
        let z = z_value(confidence);
        Self {
            mean,
            stderr,
            n,
            confidence,
            ci_low: mean - z * stderr,
            ci_high: mean + z * stderr,
        }
    }

    /// Exact zero-variance value.
    pub fn exact(value: f64, n: u64, confidence: f64) -> Self {
        Self::new(value, 0.0, n, confidence)
    }

    pub fn overlaps(&self, other: &Estimate) -> bool {
        self.ci_low <= other.ci_high && other.ci_low <= self.ci_high
    }

    /// Clopper–Pearson interval, treating the estimate as a proportion.
    pub fn clopper_pearson(&self) -> (f64, f64) {
        let k = (self.mean * self.n as f64).round();
        clopper_pearson(k as u64, self.n, self.confidence)
    }
}

/// Exact binomial interval for `k` successes out of `n`.
pub fn clopper_pearson(k: u64, n: u64, confidence: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let a = 0.5 * (1.0 - confidence);
    let (kf, nf) = (k as f64, n as f64);
    let lo = if k == 0 {
        0.0
    } else {
        Beta::new(kf, nf - kf + 1.0).expect("beta").inverse_cdf(a)
    };
    let hi = if k == n {
        1.0
    } else {
        Beta::new(kf + 1.0, nf - kf).expect("beta").inverse_cdf(1.0 - a)
    };
    (lo, hi)
}

/// Mergeable first and second moments of up to two per-path outputs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PairMoments {
    pub n: u64,
    pub mean: [f64; 2],
    pub m2: [f64; 2],
    pub co: f64,
    pub censored: u64,
}

impl PairMoments {
    pub fn push(&mut self, x: [f64; 2], censored: bool) {
        let one = PairMoments {
            n: 1,
            mean: x,
            m2: [0.0; 2],
            co: 0.0,
            censored: censored as u64,
        };
        self.merge(&one);
    }

    pub fn merge(&mut self, o: &PairMoments) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let (na, nb) = (self.n as f64, o.n as f64);
        let n = na + nb;
        let d0 = o.mean[0] - self.mean[0];
        let d1 = o.mean[1] - self.mean[1];
        let w = na * nb / n;
        self.mean[0] += d0 * nb / n;
        self.mean[1] += d1 * nb / n;
        self.m2[0] += o.m2[0] + d0 * d0 * w;
        self.m2[1] += o.m2[1] + d1 * d1 * w;
        self.co += o.co + d0 * d1 * w;
        self.n += o.n;
        self.censored += o.censored;
    }

    fn var(&self, i: usize) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2[i] / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn estimate(&self, i: usize, confidence: f64) -> Estimate {
        let se = (self.var(i) / self.n.max(1) as f64).sqrt();
        Estimate::new(self.mean[i], se, self.n, confidence)
    }

    /// Estimate of `E[first] − E[second]` with the paired standard error.
    pub fn difference(&self, confidence: f64) -> Estimate {
        let cov = if self.n < 2 {
            0.0
        } else {
            self.co / (self.n - 1) as f64
        };
        let v = (self.var(0) + self.var(1) - 2.0 * cov).max(0.0);
        Estimate::new(
            self.mean[0] - self.mean[1],
            (v / self.n.max(1) as f64).sqrt(),
            self.n,
            confidence,
        )
    }

    pub fn correlation(&self) -> f64 {
        let den = (self.m2[0] * self.m2[1]).sqrt();
        if den > 0.0 {
            self.co / den
        } else {
            0.0
        }
    }
}

/// Runs `per_path` over all paths deterministically.
pub fn run_paths<F>(cfg: &McConfig, per_path: F) -> Result<PairMoments>
where
    F: Fn(&mut ChaCha8Rng) -> Result<([f64; 2], bool)> + Sync,
{
    if cfg.paths == 0 {
        return Err(Error::Domain("at least one path is required".into()));
    }
    if !(cfg.confidence > 0.0 && cfg.confidence < 1.0) {
        return Err(Error::Domain(format!("confidence must lie in (0, 1), got {}", cfg.confidence)));
    }
    let blocks = cfg.paths.div_ceil(BLOCK);
    let job = || -> Result<Vec<PairMoments>> {
        (0..blocks)
            .into_par_iter()
            .map(|b| {
                let mut m = PairMoments::default();
                let end = ((b + 1) * BLOCK).min(cfg.paths);
                for i in b * BLOCK..end {
                    let mut rng = RngStream::new(cfg.seed, cfg.stream_offset + i).rng();
                    let (x, c) = per_path(&mut rng)?;
                    m.push(x, c);
                }
                Ok(m)
            })
            .collect()
    };
    let parts = match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::Io(e.to_string()))?
            .install(job)?,
        None => job()?,
    };
    let mut total = PairMoments::default();
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}

/// How a path ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathEnd {
    Exited,
    /// Still inside at the horizon.
    Censored,
    /// Hit the per-path event cap.
    EventCap,
}

/// Walks one path until it leaves `domain`. `hold(position, duration)` is
/// called for every holding interval before the exit (the last one cut at
/// the horizon for censored paths). `pos` holds the final position.
fn walk_exit<R: Rng>(
    sampler: &JumpSampler,
    domain: &Region,
    horizon: f64,
    max_events: u64,
    rng: &mut R,
    pos: &mut [f64],
    disp: &mut [f64],
    mut hold: impl FnMut(&[f64], f64),
) -> (PathEnd, f64, u64) {
    let mut t = 0.0;
    let mut events = 0u64;
    loop {
        if events >= max_events {
            return (PathEnd::EventCap, t, events);
        }
        let Some((dt, _)) = sampler.step(rng, disp) else {
            if horizon.is_finite() {
                hold(pos, horizon - t);
            }
            return (PathEnd::Censored, horizon, events);
        };
        if t + dt > horizon {
            hold(pos, horizon - t);
            return (PathEnd::Censored, horizon, events);
        }
        hold(pos, dt);
        t += dt;
        events += 1;
        for (p, v) in pos.iter_mut().zip(disp.iter()) {
            *p += v;
        }
        if !domain.contains(pos) {
            return (PathEnd::Exited, t, events);
        }
    }
}

/// Outcome of one simulated exit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathOutcome {
    pub end: PathEnd,
    pub time: f64,
    pub events: u64,
    pub position: Vec<f64>,
}

/// Simulates the exit of path `stream` from `domain`, exposing what the
/// estimators see for that path.
pub fn simulate_exit_path(
    sampler: &JumpSampler,
    domain: &Region,
    x: &[f64],
    horizon: f64,
    max_events: u64,
    stream: RngStream,
) -> Result<PathOutcome> {
    check_exit_problem(sampler, domain, None, x)?;
    let mut rng = stream.rng();
    let mut pos = x.to_vec();
    let mut disp = vec![0.0; x.len()];
    let (end, time, events) =
        walk_exit(sampler, domain, horizon, max_events, &mut rng, &mut pos, &mut disp, |_, _| {});
    Ok(PathOutcome {
        end,
        time,
        events,
        position: pos,
    })
}

fn check_exit_problem(
    sampler: &JumpSampler,
    domain: &Region,
    target: Option<&Region>,
    x: &[f64],
) -> Result<()> {
    check_dim(sampler.d, x.len())?;
    domain.check_dim(x.len())?;
    if let Some(t) = target {
        t.check_dim(x.len())?;
    }
    if !domain.contains(x) {
        return Err(Error::InvalidScenario(format!("start point {x:?} is not in the domain")));
    }
    Ok(())
}

/// Result record of an exit-type estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitEstimate {
    #[serde(flatten)]
    pub estimate: Estimate,
    pub censored: u64,
    pub censored_fraction: f64,
    /// Censored fraction exceeded the configured threshold.
    pub flagged: bool,
    pub seed: u64,
    pub stream_offset: u64,
    pub horizon: f64,
    pub truncation: TruncationReport,
}

/// Two outputs estimated on common paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedEstimate {
    pub first: Estimate,
    pub second: Estimate,
    pub difference: Estimate,
    pub correlation: f64,
    pub censored: u64,
    pub censored_fraction: f64,
    pub flagged: bool,
    pub seed: u64,
    pub stream_offset: u64,
    pub horizon: f64,
    pub truncation: TruncationReport,
}

fn resolve_horizon(sampler: &JumpSampler, domain: &Region, cfg: &McConfig) -> Result<f64> {
    match cfg.horizon {
        Some(h) if h > 0.0 => Ok(h),
        Some(h) => Err(Error::Domain(format!("horizon must be positive, got {h}"))),
        None => Ok(sampler.auto_horizon(domain)),
    }
}

fn finish(sampler: &JumpSampler, m: &PairMoments, i: usize, horizon: f64, cfg: &McConfig) -> ExitEstimate {
    let frac = m.censored as f64 / m.n as f64;
    ExitEstimate {
        estimate: m.estimate(i, cfg.confidence),
        censored: m.censored,
        censored_fraction: frac,
        flagged: frac > cfg.censor_threshold,
        seed: cfg.seed,
        stream_offset: cfg.stream_offset,
        horizon,
        truncation: sampler.report.clone(),
    }
}

/// `P_x(X_{τ_D} ∈ T)`. Censored paths count as not landing in `T`.
pub fn estimate_exit_distribution(
    sampler: &JumpSampler,
    domain: &Region,
    target: &Region,
    x: &[f64],
    cfg: &McConfig,
) -> Result<ExitEstimate> {
    check_exit_problem(sampler, domain, Some(target), x)?;
    let horizon = resolve_horizon(sampler, domain, cfg)?;
    let d = x.len();
    let m = run_paths(cfg, |rng| {
        let mut pos = x.to_vec();
        let mut disp = vec![0.0; d];
        let (end, _, _) =
            walk_exit(sampler, domain, horizon, cfg.max_events, rng, &mut pos, &mut disp, |_, _| {});
        let hit = end == PathEnd::Exited && target.contains(&pos);
        Ok(([hit as u8 as f64, 0.0], end != PathEnd::Exited))
    })?;
    Ok(finish(sampler, &m, 0, horizon, cfg))
}

/// `E_x[∫_0^{τ_D} g(X_t) dt]`. Censored paths contribute their integral up
/// to the horizon.
pub fn estimate_exit_functional(
    sampler: &JumpSampler,
    domain: &Region,
    g: &(dyn Fn(&[f64]) -> f64 + Sync),
    x: &[f64],
    cfg: &McConfig,
) -> Result<ExitEstimate> {
    check_exit_problem(sampler, domain, None, x)?;
    let horizon = resolve_horizon(sampler, domain, cfg)?;
    let d = x.len();
    let m = run_paths(cfg, |rng| {
        let mut pos = x.to_vec();
        let mut disp = vec![0.0; d];
        let mut acc = 0.0;
        let (end, _, _) =
            walk_exit(sampler, domain, horizon, cfg.max_events, rng, &mut pos, &mut disp, |p, dt| {
                if dt > 0.0 {
                    acc += dt * g(p)
                }
            });
        if !acc.is_finite() {
            return Err(Error::Domain("path functional is not finite".into()));
        }
        Ok(([acc, 0.0], end != PathEnd::Exited))
    })?;
    Ok(finish(sampler, &m, 0, horizon, cfg))
}

/// `P_x(X_{τ_D} ∈ T)` and `E_x[∫_0^{τ_D} g(X_t) dt]` on the same paths.
pub fn estimate_exit_paired(
    sampler: &JumpSampler,
    domain: &Region,
    target: &Region,
    g: &(dyn Fn(&[f64]) -> f64 + Sync),
    x: &[f64],
    cfg: &McConfig,
) -> Result<PairedEstimate> {
    check_exit_problem(sampler, domain, Some(target), x)?;
    let horizon = resolve_horizon(sampler, domain, cfg)?;
    let d = x.len();
    let m = run_paths(cfg, |rng| {
        let mut pos = x.to_vec();
        let mut disp = vec![0.0; d];
        let mut acc = 0.0;
        let (end, _, _) =
            walk_exit(sampler, domain, horizon, cfg.max_events, rng, &mut pos, &mut disp, |p, dt| {
                if dt > 0.0 {
                    acc += dt * g(p)
                }
            });
        if !acc.is_finite() {
            return Err(Error::Domain("path functional is not finite".into()));
        }
        let hit = end == PathEnd::Exited && target.contains(&pos);
        Ok(([hit as u8 as f64, acc], end != PathEnd::Exited))
    })?;
    let frac = m.censored as f64 / m.n as f64;
    Ok(PairedEstimate {
        first: m.estimate(0, cfg.confidence),
        second: m.estimate(1, cfg.confidence),
        difference: m.difference(cfg.confidence),
        correlation: m.correlation(),
        censored: m.censored,
        censored_fraction: frac,
        flagged: frac > cfg.censor_threshold,
        seed: cfg.seed,
        stream_offset: cfg.stream_offset,
        horizon,
        truncation: sampler.report.clone(),
    })
}

/// `P_x(X_t ∈ V)`.
pub fn estimate_position_probability(
    sampler: &JumpSampler,
    set: &Region,
    x: &[f64],
    t: f64,
    cfg: &McConfig,
) -> Result<ExitEstimate> {
    check_dim(sampler.d, x.len())?;
    set.check_dim(x.len())?;
    check_horizon(t)?;
    let d = x.len();
    let m = run_paths(cfg, |rng| {
        let mut pos = x.to_vec();
        let mut disp = vec![0.0; d];
        // Region::Whole never exits, so the walk ends at `t`.
        let (end, _, _) =
            walk_exit(sampler, &Region::Whole, t, cfg.max_events, rng, &mut pos, &mut disp, |_, _| {});
        Ok(([set.contains(&pos) as u8 as f64, 0.0], end == PathEnd::EventCap))
    })?;
    Ok(finish(sampler, &m, 0, t, cfg))
}

/// Truncation used for a catalogued example at index `n`.
pub fn catalog_truncation(entry: &CatalogEntry, n: u32) -> Result<Truncation> {
    let (_, b, _) = entry.input.abc(n)?;
    Ok(Truncation::Auto { scale: b })
}

/// `P_0(X_{τ_{B(0, αR_n)}} ∈ B(0, 10 R_n))` for a catalogued example.
pub fn estimate_escape_probability(
    entry: &CatalogEntry,
    n: u32,
    alpha: f64,
    cfg: &McConfig,
) -> Result<ExitEstimate> {
    if !(alpha > 0.0 && alpha < 10.0) {
        return Err(Error::Domain(format!("α must lie in (0, 10), got {alpha}")));
    }
    let d = entry.input.d as usize;
    let r = compute_rn(&entry.input, n)?;
    let sampler = JumpSampler::new(&entry.input.spec, d, catalog_truncation(entry, n)?)?;
    let domain = Region::centered_ball(d, alpha * r)?;
    let target = Region::centered_ball(d, 10.0 * r)?;
    estimate_exit_distribution(&sampler, &domain, &target, &vec![0.0; d], cfg)
}
