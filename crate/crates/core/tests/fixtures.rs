//! Frozen values computed independently with 40-digit arithmetic.

use approx::assert_relative_eq;
use ndarray::Array2;

use diffbid::denoiser::{DenoiserConfig, DenoiserNet};
use diffbid::sampler::{reverse_mean, reverse_step};
use diffbid::schedule::{cosine_alpha_bar, NoiseSchedule};

const COSINE_K10: [f64; 9] = [
    0.98594763406276764306,
    0.94800101297388331907,
    0.88707976594601080778,
    0.80466030792285505422,
    0.70274005894116902358,
    0.58378903703249176752,
    0.45068999780152382307,
    0.30666857138717986799,
    0.15521508992390480609,
];

#[test]
fn cosine_alpha_bar_k10() {
    let s = NoiseSchedule::cosine(10, 0.008, false).unwrap();
    assert_eq!(s.alpha_bar[0], 1.0);
    for (k, want) in COSINE_K10.iter().enumerate() {
        assert_relative_eq!(cosine_alpha_bar(k + 1, 10, 0.008, false), *want, max_relative = 1e-13);
        assert_relative_eq!(s.alpha_bar[k + 1], *want, max_relative = 1e-12);
    }
    // The formula reaches ~2e-43 at k = K, so β_K is clipped and ᾱ_K = 0.001·ᾱ_{K−1}.
    assert_eq!(s.beta[10], 0.999);
    assert_relative_eq!(s.alpha_bar[10], 0.001 * COSINE_K10[8], max_relative = 1e-12);
}

#[test]
fn reverse_step_fixture() {
    let s = NoiseSchedule::from_alpha_bar(&[1.0, 0.75, 0.5]).unwrap();
    let x = Array2::from_elem((1, 1), 1.0);
    let eps = Array2::from_elem((1, 1), 0.5);
    let mu = reverse_mean(&x, &eps, 2, &s).unwrap();
    assert_relative_eq!(mu[[0, 0]], 0.93606973679677616684, max_relative = 1e-15);

    // variance temperature·β_k = 0.5/3; z = 1.
    let z = Array2::from_elem((1, 1), 1.0);
    let step = reverse_step(&x, &eps, 2, &s, 0.5, &z).unwrap();
    assert_relative_eq!(step[[0, 0]], 0.93606973679677616684 + 0.40824829046386301637, max_relative = 1e-15);
}

#[test]
fn parameter_counts() {
    let desk = DenoiserNet::new(&DenoiserConfig::default()).unwrap();
    assert_eq!(desk.n_params(), 221_765);
    let small = DenoiserConfig {
        channels: vec![8, 16],
        groups: 4,
        embed_dim: 16,
        hidden_dim: 32,
        ..Default::default()
    };
    assert_eq!(DenoiserNet::new(&small).unwrap().n_params(), 8_517);
    let two_slots = DenoiserConfig { cond_dim: 2, ..small };
    assert_eq!(DenoiserNet::new(&two_slots).unwrap().n_params(), 8_549);
}
