use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::gradcheck::check_gradients;

fn random_features(seed: u64, n_frames: usize) -> LogMelFrames {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n_frames * N_MELS).map(|_| rng.random_range(-2.0..2.0)).collect();
    LogMelFrames::from_rows(data, n_frames).unwrap()
}

fn random_enrollment(seed: u64) -> SpeakerEmbedding {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SpeakerEmbedding::normalized((0..EMBEDDING_DIM).map(|_| rng.random_range(-1.0..1.0)).collect())
        .unwrap()
}

#[test]
fn parameter_counts_match_hand_totals() {
    let expected = [
        (VariantKind::Ef, 133_955),
        (VariantKind::Lf, 84_803),
        (VariantKind::Clf, 101_315),
        (VariantKind::Dclf, 405_571),
    ];
    for (v, n) in expected {
        let m = build_model(v, 1).unwrap();
        assert_eq!(m.parameter_count(), n, "{v}");
        assert_eq!(v.analytic_parameter_count(), Some(n), "{v}");
    }
    assert_eq!(VadModel::new(1).unwrap().parameter_count(), 68_354);
    let dsc = build_model(VariantKind::Dsc, 1).unwrap();
    assert_eq!(dsc.parameter_count(), 1_423_106);
    assert!((1_300_000..=1_600_000).contains(&dsc.parameter_count()));
}

#[test]
fn end_to_end_variants_are_smaller_than_dsc() {
    let dsc = build_model(VariantKind::Dsc, 3).unwrap().parameter_count();
    for v in VariantKind::END_TO_END {
        assert!(build_model(v, 3).unwrap().parameter_count() < dsc);
    }
}

#[test]
fn variant_names_round_trip() {
    for v in VariantKind::ALL {
        assert_eq!(v.to_string().parse::<VariantKind>().unwrap(), v);
        assert_eq!(v.as_str().to_lowercase().parse::<VariantKind>().unwrap(), v);
    }
    assert!(matches!("XYZ".parse::<VariantKind>(), Err(Error::Usage(_))));
}

#[test]
fn posteriors_are_distributions_for_every_variant() {
    let f = random_features(2, 12);
    for v in VariantKind::ALL {
        let m = build_model(v, 7).unwrap();
        for e in [random_enrollment(4), SpeakerEmbedding::zero()] {
            let post = m.posteriors(&f, &e).unwrap();
            assert_eq!(post.len(), 12);
            for p in &post {
                assert!(p.is_valid(), "{v}: {p:?}");
            }
        }
    }
}

#[test]
fn outputs_are_causal() {
    let f = random_features(9, 20);
    let e = random_enrollment(10);
    for v in VariantKind::ALL {
        let m = build_model(v, 11).unwrap();
        let full = m.posteriors(&f, &e).unwrap();
        let prefix = m.posteriors(&f.slice(0, 8), &e).unwrap();
        for (a, b) in prefix.iter().zip(&full) {
            assert!((a.p_ts - b.p_ts).abs() < 1e-12, "{v}");
            assert!((a.p_ns - b.p_ns).abs() < 1e-12, "{v}");
        }
    }
}

#[test]
fn forward_pvad_rejects_dsc_and_bad_inputs() {
    let f = random_features(1, 5);
    let e = random_enrollment(1);
    let dsc = build_model(VariantKind::Dsc, 1).unwrap();
    assert!(matches!(forward_pvad(&dsc, &f, &e), Err(Error::Usage(_))));
    let ef = build_model(VariantKind::Ef, 1).unwrap();
    let empty = LogMelFrames::from_rows(Vec::new(), 0).unwrap();
    assert!(forward_pvad(&ef, &empty, &e).is_err());
}

#[test]
fn dsc_with_zero_enrollment_reports_no_nontarget_speech() {
    let f = random_features(5, 10);
    let m = build_model(VariantKind::Dsc, 5).unwrap();
    let (vad, _) = m.dsc_parts().unwrap();
    let v = forward_vad(vad, &f).unwrap();
    let post = m.posteriors(&f, &SpeakerEmbedding::zero()).unwrap();
    for (p, v) in post.iter().zip(&v) {
        assert_eq!(p.p_nts, 0.0);
        assert_eq!(p.p_ts, v.p_s);
    }
}

#[test]
fn dsc_combine_examples() {
    let vad = VadPosterior { p_s: 0.8, p_ns: 0.2 };
    let p = dsc_combine(vad, Some(0.5)).unwrap();
    assert!((p.p_ts - 0.6).abs() < 1e-12);
    assert!((p.p_nts - 0.2).abs() < 1e-12);
    assert!((p.p_ns - 0.2).abs() < 1e-12);
    let p = dsc_combine(vad, Some(-1.0)).unwrap();
    assert_eq!((p.p_ts, p.p_nts), (0.0, 0.8));
    let p = dsc_combine(vad, None).unwrap();
    assert_eq!((p.p_ts, p.p_nts, p.p_ns), (0.8, 0.0, 0.2));
    let bad = VadPosterior { p_s: 0.8, p_ns: 0.3 };
    assert!(matches!(dsc_combine(bad, Some(0.0)), Err(Error::InvalidInput(_))));
}

#[test]
fn from_params_rejects_wrong_layout() {
    let lf = build_model(VariantKind::Lf, 1).unwrap();
    let err = PvadModel::from_params(VariantKind::Ef, lf.params().unwrap().clone());
    assert!(matches!(err, Err(Error::Shape { .. })));
    let ok = PvadModel::from_params(VariantKind::Lf, lf.params().unwrap().clone()).unwrap();
    assert_eq!(ok, lf);
}

fn gradcheck_variant(v: VariantKind, enrollment: SpeakerEmbedding) {
    let m = build_model(v, 21).unwrap();
    let p = m.params().unwrap();
    let feats = features_tensor(&random_features(22, 5));
    let labels = [0, 1, 2, 0, 1];
    let loss = |q: &ParameterSet| {
        let mut g = Graph::new(q);
        let x = g.input(feats.clone());
        let z = PvadModel::logits(v, &mut g, x, &enrollment).unwrap();
        let l = g.softmax_cross_entropy(z, &labels).unwrap();
        (g.value(l).data()[0], g.backward(l).unwrap())
    };
    let (_, analytic) = loss(p);
    let report = check_gradients(p, &analytic, |q| loss(q).0, 12, 1e-4, 3);
    assert!(report.max_rel_err < 1e-4, "{v}: {report:?}");
}

#[test]
fn gradcheck_every_end_to_end_variant() {
    for v in VariantKind::END_TO_END {
        gradcheck_variant(v, random_enrollment(30));
    }
    gradcheck_variant(VariantKind::Dclf, SpeakerEmbedding::zero());
}

#[test]
fn gradcheck_vad() {
    let vad = VadModel::new(2).unwrap();
    let feats = features_tensor(&random_features(3, 6));
    let labels = [0, 1, 1, 0, 0, 1];
    let loss = |q: &ParameterSet| {
        let mut g = Graph::new(q);
        let x = g.input(feats.clone());
        let z = VadModel::logits(&mut g, x).unwrap();
        let l = g.softmax_cross_entropy(z, &labels).unwrap();
        (g.value(l).data()[0], g.backward(l).unwrap())
    };
    let (_, analytic) = loss(vad.params());
    let report = check_gradients(vad.params(), &analytic, |q| loss(q).0, 12, 1e-4, 4);
    assert!(report.max_rel_err < 1e-4, "{report:?}");
}
