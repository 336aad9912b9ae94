use ehi_sbm::experiments::{Relation, VerificationResult};
use ehi_sbm::kernel::{BoxRegion, KernelEvaluator};
use ehi_sbm::measure::{Interval, LevyMeasure, SubordinatorSpec, Term};
use ehi_sbm::sim::PairMoments;
use proptest::prelude::*;

fn terms(max: usize) -> impl Strategy<Value = Vec<Term>> {
    // locations must be strictly increasing
    prop::collection::vec((0.01f64..5.0, 0.01f64..10.0), 1..=max).prop_map(|v| {
        let mut a = 0.0;
        v.into_iter()
            .map(|(w, step)| {
                a += step;
                Term::new(w, a)
            })
            .collect()
    })
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mass_is_additive(atoms in terms(6), a in 0.0f64..5.0, w1 in 0.0f64..20.0, w2 in 0.0f64..20.0) {
        let m = LevyMeasure::atoms(atoms);
        let (b, c) = (a + w1, a + w1 + w2);
        let left = m.mass(&Interval::closed(a, b).unwrap()).unwrap();
        let right = m.mass(&Interval::left_open(b, c).unwrap()).unwrap();
        let whole = m.mass(&Interval::closed(a, c).unwrap()).unwrap();
        prop_assert!(close(left + right, whole, 1e-12));
        let pl = m.partial_moment(1.0, &Interval::closed(a, b).unwrap()).unwrap();
        let pr = m.partial_moment(1.0, &Interval::left_open(b, c).unwrap()).unwrap();
        let pw = m.partial_moment(1.0, &Interval::closed(a, c).unwrap()).unwrap();
        prop_assert!(close(pl + pr, pw, 1e-12));
    }

    #[test]
    fn laplace_exponent_is_bernstein(comps in terms(5), drift in 0.0f64..3.0, expmix in any::<bool>()) {
        let m = if expmix { LevyMeasure::exp_mixture(comps) } else { LevyMeasure::atoms(comps) };
        let spec = SubordinatorSpec::new(drift, m);
        let grid: Vec<f64> = (0..60).map(|i| 1e-3 * 1.2f64.powi(i)).collect();
        let vals: Vec<f64> = grid.iter().map(|l| spec.laplace_exponent(*l).unwrap()).collect();
        for w in vals.windows(2) {
            prop_assert!(w[1] >= w[0] * (1.0 - 1e-12));
        }
        // concavity on the non-uniform grid: slopes decrease
        let slopes: Vec<f64> = grid.windows(2).zip(vals.windows(2)).map(|(g, v)| (v[1] - v[0]) / (g[1] - g[0])).collect();
        for s in slopes.windows(2) {
            prop_assert!(s[1] <= s[0] * (1.0 + 1e-6) + 1e-9);
        }
    }

    #[test]
    fn kernel_is_positive_and_monotone(comps in terms(5), d in 1u32..=3, expmix in any::<bool>()) {
        let m = if expmix && d == 1 { LevyMeasure::exp_mixture(comps) } else { LevyMeasure::atoms(comps) };
        let k = KernelEvaluator::new(d, SubordinatorSpec::pure_jump(m)).unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..120 {
            let r = 1e-3 * 10f64.powf(6.0 * i as f64 / 119.0);
            let v = k.ln_j(r).unwrap();
            prop_assert!(v > f64::NEG_INFINITY);
            prop_assert!(v <= prev + 1e-12 * prev.abs().max(1.0), "r = {r}: {v} > {prev}");
            prev = v;
        }
    }

    #[test]
    fn single_atom_scaling(a in 1e-3f64..1e3, r in 1e-3f64..30.0, d in 1u32..=4) {
        let ka = KernelEvaluator::new(d, SubordinatorSpec::pure_jump(LevyMeasure::dirac(a))).unwrap();
        let k1 = KernelEvaluator::new(d, SubordinatorSpec::pure_jump(LevyMeasure::dirac(1.0))).unwrap();
        let lhs = ka.ln_j(r * a.sqrt()).unwrap();
        let rhs = -0.5 * d as f64 * a.ln() + k1.ln_j(r).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn region_integral_is_additive(comps in terms(3), x in -3.0f64..3.0, lo in -5.0f64..5.0, w in 0.1f64..6.0, t in 0.05f64..0.95) {
        let k = KernelEvaluator::new(1, SubordinatorSpec::pure_jump(LevyMeasure::atoms(comps))).unwrap();
        let mid = lo + t * w;
        let whole = k.j_region(&[x], &BoxRegion::interval(lo, lo + w).unwrap());
        let left = k.j_region(&[x], &BoxRegion::interval(lo, mid).unwrap());
        let right = k.j_region(&[x], &BoxRegion::interval(mid, lo + w).unwrap());
        if let (Ok(a), Ok(b), Ok(c)) = (whole, left, right) {
            prop_assert!(close(a, b + c, 1e-9), "{a} vs {}", b + c);
        }
    }

    #[test]
    fn moment_merge_is_order_independent(xs in prop::collection::vec((-1e3f64..1e3, 0.0f64..1.0), 2..200), cut in 0.0f64..1.0) {
        let k = ((xs.len() as f64 * cut) as usize).min(xs.len());
        let mut all = PairMoments::default();
        let mut a = PairMoments::default();
        let mut b = PairMoments::default();
        for (i, (u, v)) in xs.iter().enumerate() {
            all.push([*u, *v], false);
            if i < k { a.push([*u, *v], false) } else { b.push([*u, *v], false) }
        }
        let mut ab = a;
        ab.merge(&b);
        let mut ba = b;
        ba.merge(&a);
        for m in [ab, ba] {
            prop_assert_eq!(m.n, all.n);
            for i in 0..2 {
                prop_assert!((m.mean[i] - all.mean[i]).abs() <= 1e-12 * all.mean[i].abs().max(1.0));
                prop_assert!((m.m2[i] - all.m2[i]).abs() <= 1e-10 * all.m2[i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn verification_pass_survives_serialization(l in prop::collection::vec(-2.0f64..2.0, 1..5), tol in 0.0f64..1.0, rel in 0usize..3) {
        let relation = [Relation::Equal, Relation::AtMost, Relation::AtLeast][rel];
        let rhs = vec![0.0; l.len()];
        let r = VerificationResult::new("p", relation, l.clone(), rhs, vec![tol; l.len()]);
        let back: VerificationResult = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        prop_assert_eq!(back.pass, r.pass);
        prop_assert_eq!(back.evaluate(), r.pass);
    }

    #[test]
    fn spec_json_round_trip(comps in terms(4), drift in 0.0f64..2.0, expmix in any::<bool>()) {
        let m = if expmix { LevyMeasure::exp_mixture(comps) } else { LevyMeasure::atoms(comps) };
        let spec = SubordinatorSpec::new(drift, m);
        let text = serde_json::to_string(&spec).unwrap();
        let back: SubordinatorSpec = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(serde_json::to_string(&back).unwrap(), text);
        prop_assert_eq!(back, spec);
    }
}
