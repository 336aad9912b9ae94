use ehi_sbm::experiments::*;
use ehi_sbm::kernel::BoxRegion;
use ehi_sbm::measure::{LevyMeasure, SubordinatorSpec, Term};
use ehi_sbm::recipe::{catalog, compute_rn};
use ehi_sbm::sim::{catalog_truncation, McConfig, Region, Truncation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn intermediate_jump_for_large_scale_example() {
    let entry = catalog("large-scale-dirac").unwrap();
    let r1 = compute_rn(&entry.input, 1).unwrap();
    let alpha = 0.5;
    let e1 = Region::Box(BoxRegion::interval(-alpha * r1, alpha * r1).unwrap());
    let e2 = Region::Box(BoxRegion::interval(2.0 * r1, 5.0 * r1).unwrap());
    let r = verify_intermediate_jump(
        &entry.input.spec,
        &e1,
        &e2,
        &[0.0],
        alpha * r1,
        10.0 * r1,
        catalog_truncation(&entry, 1).unwrap(),
        &McConfig::new(20_000, 7),
    )
    .unwrap();
    assert!(r.pass, "{:?} vs {:?}", r.lhs, r.rhs);
}

#[test]
fn intermediate_jump_geometry_is_checked() {
    let e1 = Region::Box(BoxRegion::interval(-1.0, 1.0).unwrap());
    let near = Region::Box(BoxRegion::interval(0.5, 3.0).unwrap());
    let far = Region::Box(BoxRegion::interval(2.0, 30.0).unwrap());
    assert!(intermediate_jump_geometry(&e1, &near, &[0.0], 1.0, 10.0).is_err());
    assert!(intermediate_jump_geometry(&e1, &far, &[0.0], 1.0, 10.0).is_err());
    assert!(intermediate_jump_geometry(&e1, &far, &[0.0], 1.0, 40.0).is_ok());
    assert!(intermediate_jump_geometry(&e1, &far, &[0.0], 2.0, 1.0).is_err());
}

#[test]
fn levy_system_random_battery() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cases = 20;
    let mut passed = 0;
    for case in 0..cases {
        let k = rng.random_range(1..=3);
        let mut a = 0.0;
        let atoms: Vec<Term> = (0..k)
            .map(|_| {
                a += rng.random_range(0.05..2.0);
                Term::new(rng.random_range(0.2..2.0), a)
            })
            .collect();
        let spec = SubordinatorSpec::pure_jump(LevyMeasure::atoms(atoms));
        let half = rng.random_range(0.3..1.5);
        let lo = half + rng.random_range(0.0..1.0);
        let hi = lo + rng.random_range(0.2..2.0);
        let domain = BoxRegion::interval(-half, half).unwrap();
        let target = BoxRegion::interval(lo, hi).unwrap();
        let x = rng.random_range(-0.9..0.9) * half;
        let cfg = McConfig {
            stream_offset: case * 10_000,
            ..McConfig::new(10_000, 31)
        };
        let r = verify_levy_system(&spec, &domain, &target, &[x], Truncation::None, &cfg).unwrap();
        if r.pass {
            passed += 1;
        }
    }
    assert!(passed * 100 >= 95 * cases, "{passed}/{cases}");
}

#[test]
fn levy_system_rejects_overlapping_sets() {
    let spec = SubordinatorSpec::pure_jump(LevyMeasure::dirac(1.0));
    let d = BoxRegion::interval(-1.0, 1.0).unwrap();
    let t = BoxRegion::interval(0.5, 2.0).unwrap();
    assert!(verify_levy_system(&spec, &d, &t, &[0.0], Truncation::None, &McConfig::new(10, 0)).is_err());
}

#[test]
fn flip_probability_is_below_one_half() {
    let entry = catalog("large-scale-dirac").unwrap();
    let kernel = entry.kernel().unwrap();
    let v = HalfSpace::new(vec![1.0], 0.0).unwrap();
    for (x, y) in [(0.1, 0.2), (1.0, 5.0), (3.0, 3.5), (1e-3, 40.0)] {
        let p = p_flip(&kernel, &v, &[x], &[y]).unwrap();
        assert!(p > 0.0 && p < 0.5, "{x} {y}: {p}");
    }
    // on the boundary the reflection is the point itself
    assert_eq!(p_flip(&kernel, &v, &[0.0], &[2.0]).unwrap(), 0.5);
}

#[test]
fn diagram_grid_is_symmetric_and_inside_the_disc() {
    let s = DiagramScenario::new(2.0, 0.1, 0.6).unwrap();
    let grid = s.start_grid(9);
    let rho = (1.0 - s.alpha / 2.0) * s.radius;
    assert!(grid.contains(&[0.0, 0.0]));
    for p in &grid {
        assert!(p[0].hypot(p[1]) <= rho * (1.0 + 1e-12));
        assert!(grid.contains(&[p[0], -p[1]]));
        assert!(grid.contains(&[-p[0], p[1]]));
    }
    assert!(DiagramScenario::new(2.0, 0.5, 0.6).is_err());
}

#[test]
fn diagram_mirror_check_has_pairs() {
    let entry = catalog("large-scale-dirac").unwrap();
    let cfg = McConfig::new(2_000, 12);
    let r = verify_diagram_prop(&entry, 1, 0.1, 0.6, 5, &cfg).unwrap();
    let mirror = r.checks.iter().find(|c| c.name == "mirror-symmetry").unwrap();
    assert!(!mirror.lhs.is_empty());
    assert_eq!(mirror.lhs.len(), mirror.rhs.len());
}

#[test]
fn figure_ratios_lie_in_unit_interval() {
    let entry = catalog("large-scale-dirac").unwrap();
    let rows = figure_jratio_data(&entry, RGridPolicy::default(), 0.5).unwrap();
    assert!(rows.windows(2).all(|w| w[0].r <= w[1].r));
    for row in &rows {
        assert!(row.log_ratio <= 0.0 && row.log_ratio.is_finite(), "{row:?}");
        if let Some(q) = row.ratio {
            assert!(q > 0.0 && q <= 1.0);
        }
    }
    let markers = rows.iter().filter(|r| r.is_marker).count() as u32;
    assert_eq!(markers, RGridPolicy::default().last_band + 1 - entry.input.first_n);
}

#[test]
fn figure_csv_has_fixed_header() {
    let entry = catalog("large-scale-dirac").unwrap();
    let rows = figure_jratio_data(&entry, RGridPolicy { last_band: 2, per_band: 4 }, 0.5).unwrap();
    let mut buf = Vec::new();
    write_figure_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), FIGURE_CSV_COLUMNS.join(","));
    assert_eq!(lines.count(), rows.len());
}

#[test]
fn figure_requires_plotted_example() {
    let entry = catalog("small-scale-dirac").unwrap();
    if !entry.plotted {
        assert!(figure_jratio_data(&entry, RGridPolicy::default(), 0.5).is_err());
    }
}

#[test]
fn bernoulli_identity_over_weights() {
    for w in [vec![0.3, 0.2], vec![0.5], vec![0.1, 0.9, 0.4, 0.25]] {
        let r = verify_bernoulli_even(&w).unwrap();
        assert!(r.pass);
        let closed = bernoulli_even_closed_form(&w);
        assert!((0.0..=1.0).contains(&closed));
        if w.iter().all(|a| *a <= 0.5) {
            assert!(closed >= 0.5);
        }
    }
}

#[test]
fn results_serialize_with_checks() {
    let r = verify_bernoulli_even(&[0.3, 0.2]).unwrap();
    let v = to_json(&r);
    assert_eq!(v["name"], "bernoulli-even");
    assert_eq!(v["pass"], true);
}
