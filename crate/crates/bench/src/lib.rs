//! Shared fixtures for the criterion benches.

use fieldinv::chaos::{build_forward_surrogate, InputMap, PCSurrogate, PriorSurrogates};
use fieldinv::com_prior::ComPrior;
use fieldinv::kernels::{AmplitudePrior, HyperQuadrature, LengthPrior, NoisePrior};
use fieldinv::{build_reference_basis, HyperPriorSpec, KernelKind, ReferenceBasis, SpatialGrid};

pub fn td_spec() -> HyperPriorSpec {
    HyperPriorSpec {
        amplitude: AmplitudePrior::InvGamma { shape: 3.0, scale: 1.0 },
        length: LengthPrior::LogUniform { lo: 0.1, hi: 0.7 },
        trend: None,
        noise: NoisePrior::Jeffreys,
    }
}

pub fn td_basis() -> ReferenceBasis {
    let grid = SpatialGrid::uniform_1d(0.0, 1.0, 201).expect("valid grid");
    let hq = HyperQuadrature::analytic_amplitude(&td_spec(), 64).expect("valid prior");
    build_reference_basis(KernelKind::SquaredExponential, &grid, 8, 24, &hq).expect("basis")
}

pub fn td_prior_surrogates(basis: &ReferenceBasis, order: usize) -> PriorSurrogates {
    PriorSurrogates::build(&ComPrior::new(basis.clone()), &td_spec().length, order).expect("prior surrogates")
}

/// Smooth synthetic map `R^dim -> R^outputs` standing in for a solver.
pub fn toy_model(dim: usize, outputs: usize) -> impl Fn(&[f64]) -> fieldinv::Result<Vec<f64>> + Sync {
    move |x: &[f64]| {
        Ok((0..outputs)
            .map(|k| {
                let s: f64 = x.iter().enumerate().map(|(i, v)| v * ((k + 1) as f64 / (i + 2) as f64)).sum();
                (0.1 * s).tanh() + 0.01 * x.iter().take(dim).map(|v| v * v).sum::<f64>()
            })
            .collect())
    }
}

pub fn toy_surrogate(dim: usize, outputs: usize, level: usize) -> PCSurrogate {
    build_forward_surrogate(toy_model(dim, outputs), vec![InputMap::Gaussian; dim], level, None)
        .expect("surrogate")
        .surrogate
}
