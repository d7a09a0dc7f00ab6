//! Shared fixtures for the integration suites: tiny float64 builds for
//! finite-difference checks and batch construction helpers.

use asgan::data::{labels_to_batch, AttributeLabel, ATTRIBUTE_NAMES};
use asgan::networks::{
    build_gs, init_weights, DiscConfig, Discriminator, GenConfig, GeneratorA, WNet,
};
use asgan::nn::Scalar;
use asgan::training::Batch;
use ndarray::Array4;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub const TINY_RES: usize = 8;
pub const TINY_DEPTH: usize = 2;

/// Fills every parameter with order-one values. The training-time
/// Gaussian(0, 0.02) init leaves a fresh W-net emitting near-zero images,
/// which parks the downstream pre-activations on their LeakyReLU kinks and
/// makes finite differences meaningless; gradient checks instead run at a
/// scale where no kink sits within a finite-difference step.
pub fn randomize_params<N: asgan::networks::Network<f64>>(net: &N, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, p) in net.named_params() {
        let mut v = p.value_mut();
        if name.ends_with(".bn.gamma") {
            v.mapv_inplace(|_| rng.gen_range(0.6..1.4));
        } else if name.ends_with(".bn.beta") || name.ends_with(".bias") {
            v.mapv_inplace(|_| rng.gen_range(-0.3..0.3));
        } else {
            v.mapv_inplace(|_| rng.gen_range(-scale..scale));
        }
    }
}

/// Tiny W-net in f64 for gradient checks: 8x8 inputs, 2-layer encoder and
/// decoder, widths small enough to perturb every parameter.
pub fn tiny_wnet(seed: u64) -> WNet<f64> {
    let cfg = GenConfig::tiny(TINY_RES, TINY_DEPTH, 2, 4);
    let ga = GeneratorA::<f64>::new(cfg).unwrap();
    let gs = build_gs(TINY_RES, &ga).unwrap();
    let wnet = WNet::from_parts(ga, gs);
    randomize_params(&wnet.ga, seed, 0.35);
    randomize_params(&wnet.gs, seed.wrapping_add(1), 0.35);
    wnet
}

pub fn tiny_disc(in_channels: usize, seed: u64) -> Discriminator<f64> {
    let d = Discriminator::<f64>::new(DiscConfig::tiny(in_channels, TINY_RES, TINY_DEPTH, 2, 4))
        .unwrap();
    randomize_params(&d, seed, 0.15);
    d
}

pub fn rand_images<S: Scalar>(rng: &mut ChaCha8Rng, n: usize, res: usize) -> Array4<S> {
    Array4::from_shape_simple_fn((n, 3, res, res), || S::from_f(rng.gen_range(-0.9..0.9)))
}

/// Targets bounded away from zero. Freshly initialised generators emit
/// values near zero, so no pixel sits close to an `|x - t|` kink and the
/// finite-difference step never crosses one.
pub fn rand_targets<S: Scalar>(rng: &mut ChaCha8Rng, n: usize, res: usize) -> Array4<S> {
    Array4::from_shape_simple_fn((n, 3, res, res), || {
        let mag = rng.gen_range(0.45..0.85);
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        S::from_f(sign * mag)
    })
}

/// Random batch with one sample per attribute up to `n`.
pub fn tiny_batch(seed: u64, n: usize) -> Batch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<AttributeLabel> = (0..n)
        .map(|i| AttributeLabel::from_name(ATTRIBUTE_NAMES[i % 3]).unwrap())
        .collect();
    Batch {
        input: rand_images(&mut rng, n, TINY_RES),
        target_attr: rand_targets(&mut rng, n, TINY_RES),
        target_out: rand_targets(&mut rng, n, TINY_RES),
        labels: labels_to_batch(&labels),
    }
}

/// Relative error with an absolute floor: gradients below the floor are
/// compared absolutely (at the 1e-4 threshold this matches the usual
/// rtol = 1e-4 / atol = 1e-8 gradient-check convention).
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}
