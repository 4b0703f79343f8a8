use gpr_core::repr::haar_sample;
use gpr_core::repr::GroupAction;
use gpr_core::rng::stream_rng;
use gpr_core::*;
use proptest::prelude::*;

fn structure(field: Field) -> impl Strategy<Value = RepresentationStructure> {
    prop::collection::vec((1usize..5, 1usize..4), 1..4).prop_map(move |blocks| {
        let blocks: Vec<(usize, usize)> = blocks.into_iter().map(|(n, r)| (n.max(r), r)).collect();
        RepresentationStructure::new(field, blocks).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gram_tuple_is_invariant(s in structure(Field::Complex), seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 0);
        let x = random_signal::<Complex64, _>(&s, &mut rng).unwrap();
        let g = haar_sample::<Complex64, _>(GroupAction::FullAmbiguity, &s, &mut rng).unwrap();
        let moved = apply(&g, &x).unwrap();
        prop_assert!(gram_tuple(&moved).distance(&gram_tuple(&x)) < 1e-10 * (1.0 + gram_tuple(&x).norm()));
        prop_assert!((sqrt_gram_map(&moved).unwrap()[0].clone() - &sqrt_gram_map(&x).unwrap()[0]).norm() < 1e-9);
    }

    #[test]
    fn procrustes_is_idempotent(s in structure(Field::Real), seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 1);
        let x = random_signal::<f64, _>(&s, &mut rng).unwrap();
        let y = random_signal::<f64, _>(&s, &mut rng).unwrap();
        for (gx, my) in gram_tuple(&x).grams().iter().zip(y.matrices()) {
            let p = procrustes_project(gx, my).unwrap();
            let q = procrustes_project(gx, &p).unwrap();
            prop_assert!((&p - &q).norm() < 1e-9 * (1.0 + p.norm()));
            prop_assert!((p.transpose() * &p - gx).norm() < 1e-9 * (1.0 + gx.norm()));
        }
    }

    #[test]
    fn rho_is_sign_symmetric(s in structure(Field::Real), seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 2);
        let x = random_signal::<f64, _>(&s, &mut rng).unwrap();
        let y = random_signal::<f64, _>(&s, &mut rng).unwrap();
        let z = random_signal::<f64, _>(&s, &mut rng).unwrap();
        let d = rho(&x, &y).unwrap();
        prop_assert_eq!(d, rho(&y, &x).unwrap());
        prop_assert_eq!(d, rho(&x.scale(-1.0), &y).unwrap());
        prop_assert!(d <= rho(&x, &z).unwrap() + rho(&z, &y).unwrap() + 1e-12);
    }

    #[test]
    fn extract_gram_inverts_the_analytic_moment(s in structure(Field::Complex), seed in any::<u64>()) {
        let x = random_signal::<Complex64, _>(&s, &mut stream_rng(seed, 3)).unwrap();
        let g = extract_gram(&analytic_second_moment(&x), &s).unwrap();
        prop_assert!(g.distance(&gram_tuple(&x)) < 1e-10 * (1.0 + g.norm()));
    }
}
