//! Adversarial and reconstruction losses. The residual discriminator only
//! ever sees difference images `x2 - x1`; the triplex discriminator sees the
//! channel-concatenated `(x1, x2, y)` triple. Generator terms use the
//! non-saturating form `-log D(fake)`. All scalars are negative
//! log-likelihoods in nats, averaged over the batch; pixel losses average
//! over every element.

use crate::error::{Error, Result};
use crate::networks::Discriminator;
use crate::nn::Scalar;
use ndarray::{Array1, Array4};

/// Scalar loss values for one iteration, in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub d_a_loss: f64,
    pub d_s_loss: f64,
    pub g_attr_adv: f64,
    pub g_sketch_adv: f64,
    pub l1_ga: f64,
    pub l1_gs: f64,
    pub total_g: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str =
        "iteration,d_a_loss,d_s_loss,g_attr_adv,g_sketch_adv,l1_ga,l1_gs,total_g";

    pub fn csv_row(&self, iteration: u64) -> String {
        format!(
            "{iteration},{},{},{},{},{},{},{}",
            self.d_a_loss,
            self.d_s_loss,
            self.g_attr_adv,
            self.g_sketch_adv,
            self.l1_ga,
            self.l1_gs,
            self.total_g
        )
    }

    /// Field in which the first non-finite value appears, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            (self.d_a_loss, "d_a_loss"),
            (self.d_s_loss, "d_s_loss"),
            (self.g_attr_adv, "g_attr_adv"),
            (self.g_sketch_adv, "g_sketch_adv"),
            (self.l1_ga, "l1_ga"),
            (self.l1_gs, "l1_gs"),
            (self.total_g, "total_g"),
        ]
        .into_iter()
        .find(|(v, _)| !v.is_finite())
        .map(|(_, name)| name)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ObjectiveConfig {
    pub lambda_l1: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig { lambda_l1: 100.0 }
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus<S: Scalar>(x: S) -> S {
    let zero = S::zero();
    let m = if x > zero { x } else { zero };
    m + ((-x.abs()).exp() + S::one()).ln()
}

/// `-ln(sigmoid(s))`, the real-sample and non-saturating generator term.
pub(crate) fn neg_log_sigmoid<S: Scalar>(s: S) -> S {
    softplus(-s)
}

/// `-ln(1 - sigmoid(s))`, the fake-sample discriminator term.
pub(crate) fn neg_log_one_minus_sigmoid<S: Scalar>(s: S) -> S {
    softplus(s)
}

fn mean<S: Scalar>(v: &Array1<S>) -> S {
    v.iter().copied().sum::<S>() / S::from_f(v.len() as f64)
}

fn check_same_shape<S: Scalar>(images: &[&Array4<S>]) -> Result<()> {
    let dim = images[0].dim();
    if images.iter().any(|im| im.dim() != dim) {
        return Err(Error::invalid("loss inputs must share the same shape"));
    }
    Ok(())
}

/// Residual-adversarial attribute loss. The discriminator is applied to the
/// pixelwise residuals `x2 - x1` (real) and `xh2 - x1` (fake); returns
/// `(d_loss, g_loss)` where `d_loss = -[ln D(real) + ln(1 - D(fake))]` and
/// `g_loss = -ln D(fake)`.
pub fn attribute_adv_loss<S: Scalar>(
    d_a: &Discriminator<S>,
    x1: &Array4<S>,
    x2: &Array4<S>,
    xh2: &Array4<S>,
) -> Result<(S, S)> {
    check_same_shape(&[x1, x2, xh2])?;
    let real = x2 - x1;
    let fake = xh2 - x1;
    let s_real = d_a.forward(&real)?.logits;
    let s_fake = d_a.forward(&fake)?.logits;
    let d_loss = mean(&s_real.mapv(neg_log_sigmoid)) + mean(&s_fake.mapv(neg_log_one_minus_sigmoid));
    let g_loss = mean(&s_fake.mapv(neg_log_sigmoid));
    Ok((d_loss, g_loss))
}

/// Triplex-adversarial sketch loss over channel-concatenated triples in the
/// fixed order `(x1, x2-slot, y-slot)`.
pub fn sketch_adv_loss<S: Scalar>(
    d_s: &Discriminator<S>,
    x1: &Array4<S>,
    x2: &Array4<S>,
    y: &Array4<S>,
    xh2: &Array4<S>,
    yh: &Array4<S>,
) -> Result<(S, S)> {
    check_same_shape(&[x1, x2, y, xh2, yh])?;
    let real = crate::nn::ops::concat_channels(&[x1, x2, y]);
    let fake = crate::nn::ops::concat_channels(&[x1, xh2, yh]);
    let s_real = d_s.forward(&real)?.logits;
    let s_fake = d_s.forward(&fake)?.logits;
    let d_loss = mean(&s_real.mapv(neg_log_sigmoid)) + mean(&s_fake.mapv(neg_log_one_minus_sigmoid));
    let g_loss = mean(&s_fake.mapv(neg_log_sigmoid));
    Ok((d_loss, g_loss))
}

/// Mean absolute difference over every element.
pub fn l1_loss<S: Scalar>(a: &Array4<S>, b: &Array4<S>) -> Result<S> {
    check_same_shape(&[a, b])?;
    let n = S::from_f(a.len() as f64);
    Ok(a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y).abs())
        .sum::<S>()
        / n)
}

/// Final generator objective: both adversarial terms plus the weighted sum
/// of the two pixel losses.
pub fn total_generator_objective<S: Scalar>(
    g_attr_adv: S,
    g_sketch_adv: S,
    l1_ga: S,
    l1_gs: S,
    cfg: &ObjectiveConfig,
) -> S {
    g_attr_adv + g_sketch_adv + S::from_f(cfg.lambda_l1) * (l1_ga + l1_gs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{build_discriminator, init_weights};
    use ndarray::Array4;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rand4(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_simple_fn(shape, || rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn untrained_discriminator_gives_ln2_losses() {
        // Zero parameters mean logits of exactly zero, so D outputs 0.5 on
        // everything: d_loss = 2 ln 2, g_loss = ln 2.
        let d = build_discriminator::<f64>(3, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x1 = rand4(&mut rng, (1, 3, 64, 64));
        let x2 = rand4(&mut rng, (1, 3, 64, 64));
        let xh2 = rand4(&mut rng, (1, 3, 64, 64));
        let (d_loss, g_loss) = attribute_adv_loss(&d, &x1, &x2, &xh2).unwrap();
        assert!((d_loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((g_loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn identical_fake_and_real_share_discriminator_value() {
        let d = build_discriminator::<f64>(3, 64).unwrap();
        init_weights(&d, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x1 = rand4(&mut rng, (1, 3, 64, 64));
        let x2 = rand4(&mut rng, (1, 3, 64, 64));
        let (d_loss, _) = attribute_adv_loss(&d, &x1, &x2, &x2).unwrap();
        let p = d.forward_prob(&(&x2 - &x1)).unwrap()[0];
        let oracle = -(p.ln() + (1.0 - p).ln());
        assert!((d_loss - oracle).abs() < 1e-12, "{d_loss} vs {oracle}");
    }

    #[test]
    fn losses_match_scalar_recomputation_from_probabilities() {
        let d_a = build_discriminator::<f64>(3, 64).unwrap();
        let d_s = build_discriminator::<f64>(9, 64).unwrap();
        init_weights(&d_a, 7);
        init_weights(&d_s, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let imgs: Vec<Array4<f64>> = (0..5).map(|_| rand4(&mut rng, (2, 3, 64, 64))).collect();
        let (x1, x2, y, xh2, yh) = (&imgs[0], &imgs[1], &imgs[2], &imgs[3], &imgs[4]);

        let (d_loss, g_loss) = attribute_adv_loss(&d_a, x1, x2, xh2).unwrap();
        let p_real = d_a.forward_prob(&(x2 - x1)).unwrap();
        let p_fake = d_a.forward_prob(&(xh2 - x1)).unwrap();
        let oracle_d = -p_real.iter().map(|p| p.ln()).sum::<f64>() / 2.0
            - p_fake.iter().map(|p| (1.0 - p).ln()).sum::<f64>() / 2.0;
        let oracle_g = -p_fake.iter().map(|p| p.ln()).sum::<f64>() / 2.0;
        assert!((d_loss - oracle_d).abs() < 1e-12);
        assert!((g_loss - oracle_g).abs() < 1e-12);

        let (ds_loss, gs_loss) = sketch_adv_loss(&d_s, x1, x2, y, xh2, yh).unwrap();
        let real = crate::nn::ops::concat_channels(&[x1, x2, y]);
        let fake = crate::nn::ops::concat_channels(&[x1, xh2, yh]);
        let p_real = d_s.forward_prob(&real).unwrap();
        let p_fake = d_s.forward_prob(&fake).unwrap();
        let oracle_d = -p_real.iter().map(|p| p.ln()).sum::<f64>() / 2.0
            - p_fake.iter().map(|p| (1.0 - p).ln()).sum::<f64>() / 2.0;
        let oracle_g = -p_fake.iter().map(|p| p.ln()).sum::<f64>() / 2.0;
        assert!((ds_loss - oracle_d).abs() < 1e-12);
        assert!((gs_loss - oracle_g).abs() < 1e-12);
    }

    #[test]
    fn swapping_fake_slots_changes_the_triplex_loss() {
        let d_s = build_discriminator::<f64>(9, 64).unwrap();
        init_weights(&d_s, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let imgs: Vec<Array4<f64>> = (0..5).map(|_| rand4(&mut rng, (1, 3, 64, 64))).collect();
        let (x1, x2, y, xh2, yh) = (&imgs[0], &imgs[1], &imgs[2], &imgs[3], &imgs[4]);
        let (a, _) = sketch_adv_loss(&d_s, x1, x2, y, xh2, yh).unwrap();
        let (b, _) = sketch_adv_loss(&d_s, x1, x2, y, yh, xh2).unwrap();
        assert!((a - b).abs() > 1e-9, "slot order must matter");
    }

    #[test]
    fn residual_interface_ignores_common_translation() {
        // Shifting both x1 and x2 by the same constant leaves the residual
        // unchanged, so the attribute discriminator sees the same input.
        let d = build_discriminator::<f64>(3, 64).unwrap();
        init_weights(&d, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x1 = rand4(&mut rng, (1, 3, 64, 64));
        let x2 = rand4(&mut rng, (1, 3, 64, 64));
        let xh2 = rand4(&mut rng, (1, 3, 64, 64));
        let (a, _) = attribute_adv_loss(&d, &x1, &x2, &xh2).unwrap();
        let shift = 0.25;
        let (b, _) =
            attribute_adv_loss(&d, &(&x1 + shift), &(&x2 + shift), &(&xh2 + shift)).unwrap();
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn l1_cases() {
        let zeros = Array4::<f64>::zeros((1, 3, 8, 8));
        let ones = Array4::<f64>::ones((1, 3, 8, 8));
        assert_eq!(l1_loss(&ones, &ones).unwrap(), 0.0);
        assert_eq!(l1_loss(&ones, &zeros).unwrap(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rand4(&mut rng, (2, 3, 8, 8));
        let b = rand4(&mut rng, (2, 3, 8, 8));
        let oracle = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / a.len() as f64;
        assert!((l1_loss(&a, &b).unwrap() - oracle).abs() < 1e-12);
        let c = Array4::<f64>::zeros((1, 3, 4, 4));
        assert!(l1_loss(&a, &c).is_err());
    }

    #[test]
    fn objective_arithmetic() {
        let cfg = ObjectiveConfig { lambda_l1: 0.0 };
        assert_eq!(total_generator_objective(0.7f64, 0.7, 0.1, 0.2, &cfg), 1.4);
        let cfg = ObjectiveConfig { lambda_l1: 100.0 };
        let v: f64 = total_generator_objective(0.7, 0.7, 0.1, 0.2, &cfg);
        assert!((v - 31.4).abs() < 1e-12);
        // Linearity in lambda.
        let cfg2 = ObjectiveConfig { lambda_l1: 200.0 };
        let v2: f64 = total_generator_objective(0.7, 0.7, 0.1, 0.2, &cfg2);
        assert!((v2 - v - 100.0 * 0.3).abs() < 1e-12);
    }

    #[test]
    fn batch_permutation_leaves_losses_unchanged() {
        let d = build_discriminator::<f64>(3, 64).unwrap();
        init_weights(&d, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x1 = rand4(&mut rng, (2, 3, 64, 64));
        let x2 = rand4(&mut rng, (2, 3, 64, 64));
        let xh2 = rand4(&mut rng, (2, 3, 64, 64));
        let flip = |a: &Array4<f64>| -> Array4<f64> {
            let mut out = a.clone();
            out.index_axis_mut(ndarray::Axis(0), 0)
                .assign(&a.index_axis(ndarray::Axis(0), 1));
            out.index_axis_mut(ndarray::Axis(0), 1)
                .assign(&a.index_axis(ndarray::Axis(0), 0));
            out
        };
        let (a, ga) = attribute_adv_loss(&d, &x1, &x2, &xh2).unwrap();
        let (b, gb) = attribute_adv_loss(&d, &flip(&x1), &flip(&x2), &flip(&xh2)).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!((ga - gb).abs() < 1e-12);
    }
}
