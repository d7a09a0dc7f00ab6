use super::{validate_resolution, Network, Topology};
use crate::error::{Error, Result};
use crate::nn::layers::ConvKind;
use crate::nn::{Activation, BatchNorm, ConvBlock, ConvBlockCache, ConvDown, Param, Scalar};
use ndarray::{Array1, Array4};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

/// Discriminator shape. Six stride-2 layers `[64, 128, 256, 512, 512, 512]`
/// followed by one valid convolution that collapses the remaining spatial
/// extent to a single logit, then a sigmoid. `in_channels` is 3 for the
/// residual discriminator and 9 for the triplex one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscConfig {
    pub in_channels: usize,
    pub resolution: usize,
    pub depth: usize,
    pub base_width: usize,
    pub max_width: usize,
}

impl DiscConfig {
    pub fn new(in_channels: usize, resolution: usize) -> Result<Self> {
        let cfg = DiscConfig {
            in_channels,
            resolution,
            depth: 6,
            base_width: 64,
            max_width: 512,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn tiny(in_channels: usize, resolution: usize, depth: usize, base_width: usize,
        max_width: usize) -> Self {
        DiscConfig {
            in_channels,
            resolution,
            depth,
            base_width,
            max_width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_resolution(self.resolution, self.depth).map_err(|_| {
            Error::invalid(format!(
                "discriminator input spatial size must be a power of two >= {}, got {}",
                1 << self.depth,
                self.resolution
            ))
        })
    }

    fn widths(&self) -> Vec<usize> {
        (0..self.depth)
            .map(|i| (self.base_width << i).min(self.max_width))
            .collect()
    }

    /// Spatial side left after the strided stack; the final collapse kernel.
    pub fn final_kernel(&self) -> usize {
        self.resolution >> self.depth
    }
}

pub struct Discriminator<S> {
    pub cfg: DiscConfig,
    pub blocks: Vec<ConvBlock<S>>,
    pub final_conv: ConvDown<S>,
}

pub struct DiscriminatorCache<S> {
    pub blocks: Vec<ConvBlockCache<S>>,
    /// Pre-sigmoid outputs, one per batch element.
    pub logits: Array1<S>,
}

pub fn build_discriminator<S: Scalar>(
    in_channels: usize,
    resolution: usize,
) -> Result<Discriminator<S>> {
    Discriminator::new(DiscConfig::new(in_channels, resolution)?)
}

impl<S: Scalar> Discriminator<S> {
    pub fn new(cfg: DiscConfig) -> Result<Self> {
        cfg.validate()?;
        let widths = cfg.widths();
        let blocks = (0..cfg.depth)
            .map(|i| {
                let in_c = if i == 0 { cfg.in_channels } else { widths[i - 1] };
                // No norm on the first layer, nor on a layer whose output is
                // a single spatial site, where batch statistics at batch
                // size one would flatten the activation to a constant.
                let normed = i != 0 && (cfg.resolution >> (i + 1)) > 1;
                ConvBlock {
                    conv: ConvKind::Down(ConvDown::new(in_c, widths[i], 4, 2, 1)),
                    bn: normed.then(|| BatchNorm::new(widths[i])),
                    dropout: None,
                    act: Activation::LeakyRelu(0.2),
                }
            })
            .collect();
        let final_conv = ConvDown::new(widths[cfg.depth - 1], 1, cfg.final_kernel().max(1), 1, 0);
        Ok(Discriminator {
            cfg,
            blocks,
            final_conv,
        })
    }

    fn check_input(&self, x: &Array4<S>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if c != self.cfg.in_channels {
            return Err(Error::invalid(format!(
                "discriminator expects {} channels, got {c}",
                self.cfg.in_channels
            )));
        }
        if h != self.cfg.resolution || w != self.cfg.resolution {
            return Err(Error::invalid(format!(
                "discriminator expects {0}x{0} input, got {h}x{w}",
                self.cfg.resolution
            )));
        }
        Ok(())
    }

    /// Forward to pre-sigmoid logits, keeping caches for backward.
    pub fn forward(&self, x: &Array4<S>) -> Result<DiscriminatorCache<S>> {
        self.check_input(x)?;
        // Discriminator blocks hold no dropout; the rng is never consumed.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut caches = Vec::with_capacity(self.cfg.depth);
        let mut h = x.clone();
        for block in &self.blocks {
            let cache = block.forward(&h, &mut rng);
            h = cache.y.clone();
            caches.push(cache);
        }
        let out = self.final_conv.forward(&h);
        let n = out.dim().0;
        let logits = Array1::from_shape_fn(n, |i| out[(i, 0, 0, 0)]);
        Ok(DiscriminatorCache {
            blocks: caches,
            logits,
        })
    }

    /// Probabilities in the open interval (0, 1).
    pub fn forward_prob(&self, x: &Array4<S>) -> Result<Array1<S>> {
        let cache = self.forward(x)?;
        Ok(cache.logits.mapv(|v| S::one() / (S::one() + (-v).exp())))
    }

    /// Backpropagates per-sample logit gradients. Parameter gradients are
    /// accumulated only when `accumulate` is set (frozen when judging the
    /// generators); the input gradient is returned when `need_dx` is set.
    pub fn backward(
        &self,
        d_logits: &Array1<S>,
        cache: &DiscriminatorCache<S>,
        accumulate: bool,
        need_dx: bool,
    ) -> Option<Array4<S>> {
        let n = d_logits.len();
        let mut dy = Array4::<S>::zeros((n, 1, 1, 1));
        for i in 0..n {
            dy[(i, 0, 0, 0)] = d_logits[i];
        }
        let last = cache.blocks.last().expect("blocks are nonempty");
        let mut d = self
            .final_conv
            .backward(&last.y, &dy, accumulate, true)
            .expect("final conv input gradient");
        for (i, (block, bc)) in self.blocks.iter().zip(cache.blocks.iter()).enumerate().rev() {
            match block.backward(&d, bc, accumulate, i > 0 || need_dx) {
                Some(dx) => d = dx,
                None => return None,
            }
        }
        need_dx.then_some(d)
    }
}

impl<S: Scalar> Network<S> for Discriminator<S> {
    fn topology(&self) -> Topology {
        Topology::Discriminator
    }

    fn named_params(&self) -> Vec<(String, Param<S>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            let (w, bias) = match &b.conv {
                ConvKind::Down(c) => (&c.w, &c.b),
                ConvKind::Up(c) => (&c.w, &c.b),
            };
            out.push((format!("conv.{i}.weight"), w.clone()));
            out.push((format!("conv.{i}.bias"), bias.clone()));
            if let Some(bn) = &b.bn {
                out.push((format!("conv.{i}.bn.gamma"), bn.gamma.clone()));
                out.push((format!("conv.{i}.bn.beta"), bn.beta.clone()));
            }
        }
        out.push(("head.weight".into(), self.final_conv.w.clone()));
        out.push(("head.bias".into(), self.final_conv.b.clone()));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::init_weights;

    #[test]
    fn output_is_scalar_probability() {
        let d = build_discriminator::<f32>(3, 64).unwrap();
        init_weights(&d, 1);
        let x = Array4::from_shape_fn((2, 3, 64, 64), |(n, c, h, w)| {
            ((n + c + h + w) % 7) as f32 / 7.0 - 0.5
        });
        let p = d.forward_prob(&x).unwrap();
        assert_eq!(p.len(), 2);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn triplex_input_is_nine_channels() {
        let d = build_discriminator::<f32>(9, 64).unwrap();
        assert_eq!(d.blocks[0].in_channels(), 9);
    }

    #[test]
    fn small_input_is_rejected() {
        assert!(build_discriminator::<f32>(3, 32).is_err());
        let d = build_discriminator::<f32>(3, 64).unwrap();
        let x = Array4::<f32>::zeros((1, 3, 32, 32));
        assert!(d.forward(&x).is_err());
    }

    #[test]
    fn final_kernel_collapses_remaining_extent() {
        assert_eq!(DiscConfig::new(3, 256).unwrap().final_kernel(), 4);
        assert_eq!(DiscConfig::new(3, 64).unwrap().final_kernel(), 1);
        let d = build_discriminator::<f32>(3, 256).unwrap();
        init_weights(&d, 2);
        let x = Array4::<f32>::zeros((1, 3, 256, 256));
        let cache = d.forward(&x).unwrap();
        assert_eq!(cache.logits.len(), 1);
        // After six stride-2 layers a 256 input is 4x4, collapsed by a 4x4
        // valid conv.
        assert_eq!(cache.blocks.last().unwrap().y.dim(), (1, 512, 4, 4));
    }
}
