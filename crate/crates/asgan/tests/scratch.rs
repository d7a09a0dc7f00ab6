// Temporary isolation probe for the G_s backward mismatch.

mod common;

use asgan::networks::{build_gs, GenConfig, GeneratorA, Network};
use asgan::networks::init_weights;
use common::*;
use ndarray::Array4;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

#[test]
fn isolate_gs_backward() {
    let mut cfg = GenConfig::tiny(TINY_RES, TINY_DEPTH, 2, 4);
    cfg.dropout_layers = 0;
    let ga = GeneratorA::<f64>::new(cfg).unwrap();
    let gs = build_gs(TINY_RES, &ga).unwrap();
    init_weights(&ga, 31);
    init_weights(&gs, 32);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x: Array4<f64> = Array4::from_shape_simple_fn((2, 3, 8, 8), || rng.gen_range(-0.9..0.9));
    let w2: Array4<f64> = Array4::from_shape_simple_fn((2, 3, 8, 8), || rng.gen_range(-1.0..1.0));

    let objective = |x: &Array4<f64>| -> f64 {
        let mut r = ChaCha8Rng::seed_from_u64(99);
        let cache = gs.forward(x, &mut r).unwrap();
        cache.output().iter().zip(w2.iter()).map(|(a, w)| a * w).sum()
    };

    gs.zero_grads();
    ga.zero_grads();
    let dx_analytic = {
        let mut r = ChaCha8Rng::seed_from_u64(99);
        let cache = gs.forward(&x, &mut r).unwrap();
        gs.backward(&w2, &cache, true)
    };

    let h = 1e-6;
    // Input gradient first.
    let mut worst_in = 0.0f64;
    for idx in [(0, 0, 0, 0), (1, 2, 7, 7), (0, 1, 3, 4), (1, 0, 5, 2)] {
        let mut xp = x.clone();
        xp[idx] += h;
        let mut xm = x.clone();
        xm[idx] -= h;
        let fd = (objective(&xp) - objective(&xm)) / (2.0 * h);
        worst_in = worst_in.max(rel_err(dx_analytic[idx], fd));
    }
    println!("gs input grad worst rel: {worst_in:.3e}");

    // Every parameter of gs (including tied kernels, whose perturbation
    // only affects gs here since ga is not re-run).
    for (name, p) in gs.named_params() {
        let Some(grad) = p.grad() else {
            println!("NO GRAD {name}");
            continue;
        };
        let grad: Vec<f64> = grad.iter().copied().collect();
        let len: usize = p.shape().iter().product();
        let mut worst = 0.0f64;
        let mut worst_at = 0usize;
        let mut worst_pair = (0.0, 0.0);
        for idx in 0..len {
            let orig = {
                let mut v = p.value_mut();
                let o = v.as_slice_mut().unwrap()[idx];
                v.as_slice_mut().unwrap()[idx] = o + h;
                o
            };
            let up = objective(&x);
            {
                let mut v = p.value_mut();
                v.as_slice_mut().unwrap()[idx] = orig - h;
            }
            let down = objective(&x);
            {
                let mut v = p.value_mut();
                v.as_slice_mut().unwrap()[idx] = orig;
            }
            let fd = (up - down) / (2.0 * h);
            let e = rel_err(grad[idx], fd);
            if e > worst {
                worst = e;
                worst_at = idx;
                worst_pair = (grad[idx], fd);
            }
        }
        println!(
            "{name}: worst {worst:.3e} at [{worst_at}] an {} fd {}",
            worst_pair.0, worst_pair.1
        );
    }
}
