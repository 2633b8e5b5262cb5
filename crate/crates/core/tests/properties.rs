mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use isoharness::manifest::{
    parse_manifest, ArtifactPath, FunctionDecl, Hazard, ParamKind, ParamSpec, ReturnSpec, TargetManifest,
};
use isoharness::stats::{mann_whitney_u, vargha_delaney_a12};
use isoharness::testcase::{Generator, StatementLocator, TestCase};
use isoharness::triage::{dedupe, CrashReport, DedupeKey};

fn param() -> impl Strategy<Value = ParamSpec> {
    let kind = prop_oneof![
        (-1000i64..1000, 0i64..1000).prop_map(|(min, w)| ParamKind::Int { min, max: min + w }),
        (-1e6f64..1e6, 0f64..1e3).prop_map(|(min, w)| ParamKind::Float { min, max: min + w }),
        (0usize..32).prop_map(|max_len| ParamKind::Bytes { max_len }),
        prop::collection::vec(-50i64..50, 1..5).prop_map(|values| ParamKind::Enum { values }),
        Just(ParamKind::Handle { type_tag: "H".into() }),
    ];
    (kind, any::<bool>()).prop_map(|(kind, nullable)| ParamSpec { kind, nullable })
}

fn returns() -> impl Strategy<Value = ReturnSpec> {
    prop_oneof![
        Just(ReturnSpec::Void),
        Just(ReturnSpec::Int),
        Just(ReturnSpec::Float),
        Just(ReturnSpec::Handle { type_tag: "H".into() }),
    ]
}

/// Random valid manifests. Function `f0` always produces handle type `H`.
fn manifest() -> impl Strategy<Value = TargetManifest> {
    let rest = prop::collection::vec((prop::collection::vec(param(), 0..4), returns()), 0..5);
    (rest, any::<bool>(), 1usize..64).prop_map(|(rest, native, edges)| {
        let hazard = if native { Hazard::NativeUnchecked } else { Hazard::Managed };
        let mut functions = vec![FunctionDecl {
            symbol: "f0".into(),
            params: vec![],
            returns: ReturnSpec::Handle { type_tag: "H".into() },
            hazard,
        }];
        for (i, (params, returns)) in rest.into_iter().enumerate() {
            functions.push(FunctionDecl { symbol: format!("f{}", i + 1), params, returns, hazard });
        }
        TargetManifest {
            target_id: "generated".into(),
            artifact_path: ArtifactPath::Library("libgenerated.so".into()),
            hazard,
            whitelisted: false,
            functions,
            coverage_edges: edges,
            setup_symbol: None,
            teardown_symbol: None,
            source_dir: None,
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn generated_and_varied_tests_stay_valid(seed in any::<u64>(), max_len in 1usize..12) {
        for name in ["branchy", "seeded"] {
            let m = common::builtin_manifest(name);
            let g = Generator::new(&m, max_len);
            let a = g.random_test(seed).unwrap();
            let b = g.random_test(seed ^ 0x5555).unwrap();
            prop_assert!(a.check(&m, max_len).is_ok());
            let mutant = g.mutate(&a, seed.rotate_left(7));
            prop_assert!(mutant.check(&m, max_len).is_ok(), "{:?}", mutant.check(&m, max_len));
            prop_assert!(mutant.len() <= a.len());
            let child = g.crossover(&a, &b, seed.rotate_left(13));
            prop_assert!(child.check(&m, max_len).is_ok(), "{:?}", child.check(&m, max_len));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn generation_works_on_arbitrary_manifests(m in manifest(), seed in any::<u64>()) {
        let g = Generator::new(&m, 6);
        let a = g.random_test(seed).unwrap();
        prop_assert!(a.check(&m, 6).is_ok());
        let mutant = g.mutate(&a, seed ^ 1);
        prop_assert!(mutant.check(&m, 6).is_ok());
        let child = g.crossover(&a, &mutant, seed ^ 2);
        prop_assert!(child.check(&m, 6).is_ok());
    }

    #[test]
    fn manifests_round_trip(m in manifest()) {
        let text = m.to_json_pretty();
        let back = parse_manifest(&text).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(back.to_json(), m.to_json());
        prop_assert_eq!(back.hash(), m.hash());
    }

    #[test]
    fn canonical_test_encoding_round_trips(seed in any::<u64>(), max_len in 1usize..20) {
        let m = common::builtin_manifest("seeded");
        let tc = Generator::new(&m, max_len).random_test(seed).unwrap();
        let bytes = tc.to_bytes();
        let back = TestCase::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &tc);
        prop_assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn a12_complements_and_ignores_order(
        a in prop::collection::vec(0u8..4, 1..25),
        b in prop::collection::vec(0u8..4, 1..25),
        seed in any::<u64>(),
    ) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let ab = vargha_delaney_a12(&a, &b).unwrap();
        let ba = vargha_delaney_a12(&b, &a).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab + ba - 1.0).abs() < 1e-12);
        let mut shuffled = a.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(vargha_delaney_a12(&shuffled, &b).unwrap(), ab);
        prop_assert_eq!(vargha_delaney_a12(&a, &a).unwrap(), 0.5);
    }

    #[test]
    fn mann_whitney_is_symmetric(
        a in prop::collection::vec(0u8..5, 1..22),
        b in prop::collection::vec(0u8..5, 1..22),
    ) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let ab = mann_whitney_u(&a, &b).unwrap();
        let ba = mann_whitney_u(&b, &a).unwrap();
        prop_assert!((ab.p - ba.p).abs() < 1e-12, "{:?} {:?}", ab, ba);
        prop_assert!(ab.p > 0.0 && ab.p <= 1.0);
        prop_assert_eq!(ab.u + ba.u, (a.len() * b.len()) as f64);
        prop_assert_eq!(ab.exact, a.len() + b.len() <= 16);
    }
}

fn reports() -> impl Strategy<Value = Vec<CrashReport>> {
    let m = common::builtin_manifest("seeded");
    let one = (any::<u64>(), 0u64..4, prop::sample::select(vec![Some(-11), Some(-6), Some(-8), Some(-9), None]), any::<bool>(), any::<prop::sample::Index>());
    prop::collection::vec(one, 0..40).prop_map(move |items| {
        let g = Generator::new(&m, 5);
        items
            .into_iter()
            .map(|(seed, id, exit_code, reproduced, at)| {
                let tc = g.random_test(seed).unwrap();
                let tc = TestCase::new(id, seed, tc.statements().to_vec()).unwrap();
                let locator: Option<StatementLocator> = tc.locator(at.index(tc.len()));
                CrashReport {
                    testcase: tc,
                    exit_code,
                    timed_out: exit_code.is_none(),
                    signal_name: None,
                    locator,
                    reproduced,
                    replay_runs: 1,
                    note: None,
                }
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn dedupe_ignores_order_and_is_idempotent(list in reports(), seed in any::<u64>()) {
        for mode in [DedupeKey::Callee, DedupeKey::CalleeIndex] {
            let causes = dedupe(&list, mode);
            let mut shuffled = list.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(&dedupe(&shuffled, mode), &causes);
            let again: Vec<_> = dedupe(&causes.iter().map(|c| c.to_report()).collect::<Vec<_>>(), mode);
            prop_assert_eq!(again.len(), causes.len());
            for (x, y) in again.iter().zip(&causes) {
                prop_assert_eq!(&x.key, &y.key);
                prop_assert_eq!(&x.representative, &y.representative);
                prop_assert_eq!(x.member_count, 1);
            }
            let total: usize = causes.iter().map(|c| c.member_count).sum();
            prop_assert_eq!(total, list.iter().filter(|r| r.reproduced).count());
        }
    }
}
