//! Network builders: the attribute generator (encoder–decoder with label
//! fusion at the bottleneck), the sketch generator (U-net whose encoder
//! kernels are the attribute generator's decoder kernels), the residual and
//! triplex discriminators, and the two untied baselines.
//!
//! All convolutions are 4x4 with stride 2; encoders halve the spatial side
//! per layer and decoders double it. At resolution 256 the encoder schedule
//! is [64, 128, 256, 512, 512, 512, 512, 512] with a 1x1x512 bottleneck; the
//! desk-scale variant at 64 drops the two innermost 512 layers.

mod discriminator;
mod generators;
mod wnet;

pub use discriminator::{build_discriminator, DiscConfig, Discriminator, DiscriminatorCache};
pub use generators::{
    build_baseline_ed, build_baseline_unet, build_ga, build_gs, GaCache, GenConfig, GeneratorA,
    GeneratorS, GsCache,
};
pub use wnet::{build_wnet, forward_wnet, WNet, WNetCache};

use crate::error::{Error, Result};
use crate::nn::param::count_unique_params;
use crate::nn::{Param, Scalar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    GeneratorA,
    GeneratorS,
    Discriminator,
    BaselineEd,
    BaselineUnet,
}

/// A built network with an inspectable, named parameter store.
pub trait Network<S: Scalar> {
    fn topology(&self) -> Topology;

    /// Parameters in a stable build order. Tied tensors appear under the
    /// same name in every network that holds them.
    fn named_params(&self) -> Vec<(String, Param<S>)>;

    fn param_by_name(&self, name: &str) -> Option<Param<S>> {
        self.named_params()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p)
    }

    fn zero_grads(&self) {
        for (_, p) in self.named_params() {
            p.zero_grad();
        }
    }
}

/// Number of scalar parameters, counting shared storages once.
pub fn count_params<S: Scalar>(nets: &[&dyn Network<S>]) -> usize {
    let mut all = Vec::new();
    for net in nets {
        all.extend(net.named_params());
    }
    count_unique_params(&all)
}

/// Gaussian(0, 0.02) init for conv and linear kernels, Gaussian(1, 0.02)
/// for batch-norm scales, zeros for biases and shifts. Deterministic in the
/// seed; parameter order is the build order.
pub fn init_weights<S: Scalar>(net: &dyn Network<S>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernel_dist = Normal::new(0.0f64, 0.02).expect("valid normal");
    let scale_dist = Normal::new(1.0f64, 0.02).expect("valid normal");
    for (name, param) in net.named_params() {
        let mut value = param.value_mut();
        if name.ends_with(".weight") {
            value.mapv_inplace(|_| S::from_f(kernel_dist.sample(&mut rng)));
        } else if name.ends_with(".bn.gamma") {
            value.mapv_inplace(|_| S::from_f(scale_dist.sample(&mut rng)));
        } else {
            value.fill(S::zero());
        }
    }
}

pub(crate) fn validate_resolution(resolution: usize, depth: usize) -> Result<()> {
    if !resolution.is_power_of_two() || resolution < (1 << depth) {
        return Err(Error::invalid(format!(
            "resolution must be a power of two >= 2^{depth}, got {resolution}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ConvDown;

    struct OneConv(ConvDown<f64>);

    impl Network<f64> for OneConv {
        fn topology(&self) -> Topology {
            Topology::Discriminator
        }
        fn named_params(&self) -> Vec<(String, Param<f64>)> {
            vec![
                ("conv.weight".into(), self.0.w.clone()),
                ("conv.bias".into(), self.0.b.clone()),
            ]
        }
    }

    #[test]
    fn single_conv_param_count() {
        // A 4x4 conv from 3 to 64 channels with bias: 3*64*16 + 64.
        let net = OneConv(ConvDown::new(3, 64, 4, 2, 1));
        assert_eq!(count_params(&[&net]), 3 * 64 * 16 + 64);
    }

    #[test]
    fn init_is_seed_deterministic_with_gaussian_kernels() {
        let net = OneConv(ConvDown::new(64, 512, 4, 2, 1));
        init_weights(&net, 9);
        let w1 = net.0.w.value().clone();
        let b1 = net.0.b.value().clone();
        assert!(b1.iter().all(|&v| v == 0.0));
        let n = w1.len() as f64;
        let mean = w1.iter().sum::<f64>() / n;
        let std = (w1.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        assert!(std > 0.019 && std < 0.021, "std {std}");
        assert!(mean.abs() < 3.0 * 0.02 / n.sqrt(), "mean {mean}");
        init_weights(&net, 9);
        assert_eq!(&w1, &*net.0.w.value());
    }
}
