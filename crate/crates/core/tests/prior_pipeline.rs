use fieldinv::chaos::{build_forward_surrogate, field_model, InputMap, PCSurrogate, PriorSurrogates};
use fieldinv::com_prior::ComPrior;
use fieldinv::kernels::{AmplitudePrior, HyperQuadrature, LengthPrior, NoisePrior};
use fieldinv::sampler::{ExactPrior, Mode, Posterior, PriorModel};
use fieldinv::{build_reference_basis, HyperParams, HyperPriorSpec, KernelKind, ReferenceBasis, SpatialGrid};
use proptest::prelude::*;

fn spec() -> HyperPriorSpec {
    HyperPriorSpec {
        amplitude: AmplitudePrior::InvGamma { shape: 3.0, scale: 1.0 },
        length: LengthPrior::LogUniform { lo: 0.1, hi: 0.7 },
        trend: None,
        noise: NoisePrior::Jeffreys,
    }
}

fn basis() -> ReferenceBasis {
    let grid = SpatialGrid::uniform_1d(0.0, 1.0, 81).unwrap();
    let hq = HyperQuadrature::analytic_amplitude(&spec(), 48).unwrap();
    build_reference_basis(KernelKind::SquaredExponential, &grid, 6, 12, &hq).unwrap()
}

#[test]
fn surrogate_and_exact_posteriors_agree() {
    let b = basis();
    let prior = ComPrior::new(b.clone());
    let sur = PriorSurrogates::build(&prior, &spec().length, 15).unwrap();
    let exact = ExactPrior(&prior);
    let model = field_model(&b, false, 0.0, |g: &[f64]| Ok(g.iter().step_by(8).map(|v| v.tanh()).collect()));
    let fwd = build_forward_surrogate(&model, vec![InputMap::Gaussian; 6], 2, None).unwrap().surrogate;
    let data = fwd.eval(&[0.3, -0.2, 0.1, 0.0, 0.05, -0.1]).unwrap();
    let a = Posterior::new(spec(), data.clone(), Mode::Com, &fwd, &sur, None).unwrap();
    let e = Posterior::new(spec(), data, Mode::Com, &fwd, &exact, None).unwrap();
    for (amp, l) in [(0.4, 0.15), (0.8, 0.3), (0.3, 0.65)] {
        let theta = a.layout.pack(&[0.5, -0.4, 0.3, 0.2, -0.1, 0.05], HyperParams::new(amp, l), None, 0.1);
        let sa = a.evaluate(&theta).unwrap().unwrap();
        let se = e.evaluate(&theta).unwrap().unwrap();
        let rel = (sa.logpost - se.logpost).abs() / se.logpost.abs();
        assert!(rel < 1e-3, "l={l}: {} vs {}", sa.logpost, se.logpost);
        let xa = a.coordinates(&theta).unwrap();
        let xe = e.coordinates(&theta).unwrap();
        for (u, v) in xa.iter().zip(&xe) {
            assert!((u - v).abs() < 1e-3 * (1.0 + v.abs()));
        }
    }
}

#[test]
fn bundles_round_trip_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let b = basis();
    let p = dir.path().join("basis.bin");
    b.write(&p).unwrap();
    assert_eq!(ReferenceBasis::read(&p).unwrap(), b);

    let prior = ComPrior::new(b);
    let sur = PriorSurrogates::build(&prior, &spec().length, 7).unwrap();
    sur.write(&dir.path().join("prior")).unwrap();
    let back = PriorSurrogates::read(&dir.path().join("prior")).unwrap();
    assert_eq!(back, sur);
    let q = HyperParams::new(0.5, 0.2);
    assert_eq!(back.eval(q).unwrap().sqrt, sur.eval(q).unwrap().sqrt);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projection_inverts_reconstruction(xi in prop::collection::vec(-3.0f64..3.0, 6), c in -1.0f64..1.0) {
        let b = basis();
        let g = b.reconstruct_field(&xi, c).unwrap();
        let centered: Vec<f64> = g.iter().map(|v| v - c).collect();
        let back = b.project_field(&centered).unwrap();
        for (u, v) in back.iter().zip(&xi) {
            prop_assert!((u - v).abs() < 1e-8);
        }
    }

    #[test]
    fn prior_surrogate_stays_spd(l in 0.1f64..0.7, a in 0.05f64..3.0) {
        let prior = ComPrior::new(basis());
        let sur = PriorSurrogates::build(&prior, &spec().length, 15).unwrap();
        let q = HyperParams::new(a, l);
        let e = sur.eval(q).unwrap();
        let s = &e.sqrt * &e.sqrt;
        prop_assert!(s.clone().cholesky().is_some());
        prop_assert!(e.inv.clone().cholesky().is_some());
        let exact = prior.sigma(q).unwrap();
        prop_assert!((&s - &exact).norm() < 1e-3 * exact.norm());
    }
}

#[test]
fn forward_surrogate_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = |x: &[f64]| Ok(vec![x[0] * x[1], x[0].sin(), 1.0 + x[1]]);
    let s = build_forward_surrogate(model, vec![InputMap::Gaussian, InputMap::Uniform { lo: 6.9, hi: 8.1 }], 3, None)
        .unwrap()
        .surrogate;
    let p = dir.path().join("fwd.bin");
    s.write(&p).unwrap();
    let back = PCSurrogate::read(&p).unwrap();
    assert_eq!(back.eval(&[0.3, 7.2]).unwrap(), s.eval(&[0.3, 7.2]).unwrap());
}
