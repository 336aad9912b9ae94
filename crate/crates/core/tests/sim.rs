use ehi_sbm::kernel::BoxRegion;
use ehi_sbm::measure::{LevyMeasure, SubordinatorSpec, Term};
use ehi_sbm::recipe::catalog;
use ehi_sbm::sim::*;

fn dirac(a: f64) -> SubordinatorSpec {
    SubordinatorSpec::pure_jump(LevyMeasure::dirac(a))
}

fn interval(lo: f64, hi: f64) -> Region {
    Region::Box(BoxRegion::interval(lo, hi).unwrap())
}

#[test]
fn displacement_variance_matches_atom_size() {
    let sampler = JumpSampler::new(&dirac(4.0), 1, Truncation::None).unwrap();
    let mut xs = Vec::new();
    for i in 0..200 {
        let chain = sample_sbm_chain_with(&sampler, &[0.0], 500.0, RngStream::new(11, i)).unwrap();
        xs.extend(chain.events.iter().map(|e| e.displacement[0]));
    }
    let n = xs.len() as f64;
    assert!(n > 90_000.0);
    let var = xs.iter().map(|x| x * x).sum::<f64>() / n;
    // Var(X²) = 2σ⁴ for a centred normal
    let se = (2.0f64 * 16.0 / n).sqrt();
    assert!((var - 4.0).abs() < 4.0 * se, "variance {var}, se {se}");
}

#[test]
fn squared_displacement_in_the_plane() {
    let sampler = JumpSampler::new(&dirac(1.0), 2, Truncation::None).unwrap();
    let chain = sample_sbm_chain_with(&sampler, &[0.0, 0.0], 50_000.0, RngStream::new(5, 0)).unwrap();
    let n = chain.events.len() as f64;
    let mean = chain
        .events
        .iter()
        .map(|e| e.displacement.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / n;
    // chi-square with two degrees of freedom has variance 4
    assert!((mean - 2.0).abs() < 4.0 * (4.0 / n).sqrt(), "mean {mean}");
}

#[test]
fn exit_walk_agrees_with_stored_chain() {
    let spec = SubordinatorSpec::pure_jump(LevyMeasure::atoms(vec![Term::new(1.0, 0.01), Term::new(0.2, 1.0)]));
    let sampler = JumpSampler::new(&spec, 2, Truncation::None).unwrap();
    let domain = Region::centered_ball(2, 0.7).unwrap();
    let horizon = 40.0;
    for i in 0..500 {
        let stream = RngStream::new(99, i);
        let chain = sample_sbm_chain_with(&sampler, &[0.1, -0.2], horizon, stream).unwrap();
        let out = simulate_exit_path(&sampler, &domain, &[0.1, -0.2], horizon, u64::MAX, stream).unwrap();
        match chain.first_exit(&domain) {
            Some(k) => {
                assert_eq!(out.end, PathEnd::Exited);
                assert_eq!(out.events, k as u64 + 1);
                assert_eq!(out.time, chain.events[k].time);
                assert_eq!(out.position, chain.events[k].position);
            }
            None => {
                assert_eq!(out.end, PathEnd::Censored);
                assert_eq!(out.position, chain.position_at(horizon));
            }
        }
    }
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let sampler = JumpSampler::new(&dirac(1.0), 1, Truncation::None).unwrap();
    let (d, t) = (interval(-1.0, 1.0), interval(1.0, 3.0));
    let run = |workers| {
        let cfg = McConfig {
            workers: Some(workers),
            ..McConfig::new(5_000, 17)
        };
        estimate_exit_distribution(&sampler, &d, &t, &[0.2], &cfg).unwrap()
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a, b);
    assert_eq!(a.estimate.mean.to_bits(), b.estimate.mean.to_bits());
}

#[test]
fn stream_offsets_give_independent_estimates() {
    let sampler = JumpSampler::new(&dirac(1.0), 1, Truncation::None).unwrap();
    let (d, t) = (interval(-1.0, 1.0), interval(1.0, 3.0));
    let a = estimate_exit_distribution(&sampler, &d, &t, &[0.0], &McConfig::new(4_000, 3)).unwrap();
    let cfg = McConfig {
        stream_offset: 4_000,
        ..McConfig::new(4_000, 3)
    };
    let b = estimate_exit_distribution(&sampler, &d, &t, &[0.0], &cfg).unwrap();
    assert_ne!(a.estimate.mean, b.estimate.mean);
    assert!(a.estimate.overlaps(&b.estimate));
}

#[test]
fn standard_error_shrinks_with_paths() {
    let sampler = JumpSampler::new(&dirac(1.0), 1, Truncation::None).unwrap();
    let (d, t) = (interval(-1.0, 1.0), interval(1.0, 3.0));
    let small = estimate_exit_distribution(&sampler, &d, &t, &[0.0], &McConfig::new(10_000, 8)).unwrap();
    let large = estimate_exit_distribution(&sampler, &d, &t, &[0.0], &McConfig::new(40_000, 8)).unwrap();
    let ratio = large.estimate.stderr / small.estimate.stderr;
    assert!((ratio - 0.5).abs() < 0.05, "ratio {ratio}");
}

#[test]
fn narrow_domain_exits_into_wide_target() {
    let sampler = JumpSampler::new(&dirac(1.0), 1, Truncation::None).unwrap();
    let e = estimate_exit_distribution(
        &sampler,
        &interval(-0.1, 0.1),
        &interval(-10.0, 10.0),
        &[0.0],
        &McConfig::new(20_000, 1),
    )
    .unwrap();
    assert_eq!(e.censored, 0);
    assert!(e.estimate.mean > 0.999);
}

#[test]
fn exit_never_lands_in_the_domain() {
    let sampler = JumpSampler::new(&dirac(1.0), 2, Truncation::None).unwrap();
    let d = Region::centered_ball(2, 1.5).unwrap();
    let e = estimate_exit_distribution(&sampler, &d, &d, &[0.0, 0.0], &McConfig::new(5_000, 2)).unwrap();
    assert_eq!(e.estimate.mean, 0.0);
}

#[test]
fn escape_probability_is_a_probability() {
    let entry = catalog("large-scale-dirac").unwrap();
    let e = estimate_escape_probability(&entry, 1, 0.5, &McConfig::new(5_000, 4)).unwrap();
    assert!(e.estimate.mean > 0.0 && e.estimate.mean <= 1.0);
    assert!(!e.flagged);
    // jumps past 2^1024 are dropped; their mass rate diverges
    assert!(e.truncation.omitted_rate < 1e-9);
    assert_eq!(e.truncation.omitted_mass_rate, f64::INFINITY);
    assert!(estimate_escape_probability(&entry, 1, 0.0, &McConfig::new(10, 4)).is_err());
}

#[test]
fn position_probability_at_time_zero_is_indicator() {
    let sampler = JumpSampler::new(&dirac(1.0), 1, Truncation::None).unwrap();
    let e = estimate_position_probability(&sampler, &interval(-1.0, 1.0), &[0.0], 1e-300, &McConfig::new(1_000, 0))
        .unwrap();
    assert_eq!(e.estimate.mean, 1.0);
}

#[test]
fn position_probability_matches_poisson_mixture() {
    // one atom of size 1 at rate 1: X_1 is normal with Poisson(1) variance
    let sampler = JumpSampler::new(&dirac(1.0), 1, Truncation::None).unwrap();
    let e = estimate_position_probability(&sampler, &interval(-1.0, 1.0), &[0.0], 1.0, &McConfig::new(40_000, 6))
        .unwrap();
    let mut exact = 0.0;
    let mut pk = (-1.0f64).exp();
    for k in 0..40 {
        let p = if k == 0 { 1.0 } else { libm::erf(1.0 / (2.0 * k as f64).sqrt()) };
        exact += pk * p;
        pk /= (k + 1) as f64;
    }
    assert!(e.estimate.ci_low <= exact && exact <= e.estimate.ci_high, "{} vs {exact}", e.estimate.mean);
}

#[test]
fn event_cap_counts_as_censored() {
    let sampler = JumpSampler::new(&dirac(1e-6), 1, Truncation::None).unwrap();
    let cfg = McConfig {
        max_events: 10,
        ..McConfig::new(100, 0)
    };
    let e = estimate_exit_distribution(&sampler, &interval(-1.0, 1.0), &Region::Whole, &[0.0], &cfg).unwrap();
    assert_eq!(e.censored, 100);
    assert!(e.flagged);
}

#[test]
fn rejects_bad_scenarios() {
    let sampler = JumpSampler::new(&dirac(1.0), 1, Truncation::None).unwrap();
    let cfg = McConfig::new(10, 0);
    assert!(estimate_exit_distribution(&sampler, &interval(-1.0, 1.0), &Region::Whole, &[2.0], &cfg).is_err());
    assert!(estimate_exit_distribution(&sampler, &interval(-1.0, 1.0), &Region::Whole, &[0.0, 0.0], &cfg).is_err());
    let drift = SubordinatorSpec::new(1.0, LevyMeasure::dirac(1.0));
    assert!(JumpSampler::new(&drift, 1, Truncation::None).is_err());
}

#[test]
fn truncation_modes_select_components() {
    let entry = catalog("large-scale-dirac").unwrap();
    let spec = &entry.input.spec;
    let s = JumpSampler::new(spec, 1, Truncation::MaxIndex { max_index: 3 }).unwrap();
    assert_eq!(s.report().last_index, Some(3));
    let small = catalog("small-scale-dirac").unwrap();
    let auto = JumpSampler::new(&small.input.spec, 1, Truncation::Auto { scale: 1.0 }).unwrap();
    assert!(auto.report().omitted_mass_rate < 1e-9);
    assert!(JumpSampler::new(&small.input.spec, 1, Truncation::None).is_err());
    let floor = JumpSampler::new(spec, 1, Truncation::SizeFloor { floor: 16.0 }).unwrap();
    assert!(floor.components().all(|(_, a)| a >= 16.0));
}

#[test]
fn region_json_round_trip() {
    let regions = [
        Region::centered_ball(2, 1.0).unwrap(),
        interval(0.0, 1.0),
        Region::HalfSpace {
            normal: vec![1.0, 0.0],
            offset: 0.5,
        },
        Region::Whole,
        Region::Empty,
    ];
    for r in regions {
        let back: Region = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
