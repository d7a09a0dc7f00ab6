use super::{validate_resolution, Network, Topology};
use crate::error::{Error, Result};
use crate::nn::layers::ConvKind;
use crate::nn::ops::{concat_channels, split_channels};
use crate::nn::{Activation, BatchNorm, ConvBlock, ConvBlockCache, ConvDown, ConvUp, Linear, Param,
    Scalar};
use ndarray::{Array2, Array4, Axis};
use rand_chacha::ChaCha8Rng;

/// Shape of a generator. `for_resolution` gives the standard builds (depth 8
/// at 256, depth 6 at 64); the tiny constructor is for gradient-check scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenConfig {
    pub resolution: usize,
    pub depth: usize,
    pub base_width: usize,
    pub max_width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub num_attributes: usize,
    pub embed_dim: usize,
    pub dropout_layers: usize,
}

pub const DROPOUT_RATE: f64 = 0.5;

impl GenConfig {
    pub fn for_resolution(resolution: usize, num_attributes: usize) -> Result<Self> {
        if resolution < 8 {
            return Err(Error::invalid(format!(
                "resolution {resolution} below the minimum of 8"
            )));
        }
        let depth = resolution.trailing_zeros() as usize;
        validate_resolution(resolution, depth)?;
        Ok(GenConfig {
            resolution,
            depth,
            base_width: 64,
            max_width: 512,
            in_channels: 3,
            out_channels: 3,
            num_attributes,
            embed_dim: 64,
            dropout_layers: 3,
        })
    }

    /// A small variant with the same topology, used for finite-difference
    /// gradient checks where every parameter is perturbed.
    pub fn tiny(resolution: usize, depth: usize, base_width: usize, max_width: usize) -> Self {
        GenConfig {
            resolution,
            depth,
            base_width,
            max_width,
            in_channels: 3,
            out_channels: 3,
            num_attributes: 3,
            embed_dim: 4,
            dropout_layers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::invalid("generator depth must be at least 2"));
        }
        validate_resolution(self.resolution, self.depth)
    }

    /// Encoder output widths, shallow to deep.
    pub fn enc_widths(&self) -> Vec<usize> {
        (0..self.depth)
            .map(|i| (self.base_width << i).min(self.max_width))
            .collect()
    }

    /// Spatial side of the bottleneck (1 for the standard builds).
    pub fn bottleneck_side(&self) -> usize {
        self.resolution >> self.depth
    }

    fn bottleneck_dim(&self) -> usize {
        let w = self.enc_widths();
        w[self.depth - 1] * self.bottleneck_side() * self.bottleneck_side()
    }
}

fn encoder_blocks<S: Scalar>(cfg: &GenConfig) -> Vec<ConvBlock<S>> {
    let widths = cfg.enc_widths();
    (0..cfg.depth)
        .map(|i| {
            let in_c = if i == 0 { cfg.in_channels } else { widths[i - 1] };
            ConvBlock {
                conv: ConvKind::Down(ConvDown::new(in_c, widths[i], 4, 2, 1)),
                // No norm on the first layer, and none at the bottleneck
                // where batch statistics would erase the single spatial
                // activation at batch size one.
                bn: (i != 0 && i != cfg.depth - 1).then(|| BatchNorm::new(widths[i])),
                dropout: None,
                act: Activation::LeakyRelu(0.2),
            }
        })
        .collect()
}

fn decoder_block<S: Scalar>(
    cfg: &GenConfig,
    j: usize,
    conv: ConvKind<S>,
    out_c: usize,
) -> ConvBlock<S> {
    let last = j == cfg.depth - 1;
    ConvBlock {
        conv,
        bn: (!last).then(|| BatchNorm::new(out_c)),
        dropout: (!last && j < cfg.dropout_layers).then_some(DROPOUT_RATE),
        act: if last { Activation::Tanh } else { Activation::Relu },
    }
}

/// Reshape regardless of the source layout (BLAS-backed products may come
/// back column-major); elements are taken in logical row-major order.
fn reshape_to_4<S: Scalar>(a: Array2<S>, dim: (usize, usize, usize, usize)) -> Array4<S> {
    let data: Vec<S> = a.iter().copied().collect();
    Array4::from_shape_vec(dim, data).expect("element count preserved")
}

fn reshape_to_2<S: Scalar>(a: Array4<S>, dim: (usize, usize)) -> Array2<S> {
    let data: Vec<S> = a.iter().copied().collect();
    Array2::from_shape_vec(dim, data).expect("element count preserved")
}

/// Output width of decoder layer `j` (both generators share the rule).
fn dec_out_width(cfg: &GenConfig, j: usize) -> usize {
    if j == cfg.depth - 1 {
        cfg.out_channels
    } else {
        cfg.enc_widths()[cfg.depth - 2 - j]
    }
}

/// Encoder–decoder generator that adds the requested attribute to a face.
/// The one-hot label is embedded to `embed_dim` features, concatenated with
/// the flattened bottleneck and mapped back to the bottleneck width by a
/// fully connected layer.
pub struct GeneratorA<S> {
    pub cfg: GenConfig,
    pub enc: Vec<ConvBlock<S>>,
    pub embed: Linear<S>,
    pub fuse: Linear<S>,
    pub dec: Vec<ConvBlock<S>>,
}

pub struct GaCache<S> {
    pub enc: Vec<ConvBlockCache<S>>,
    labels: Array2<S>,
    fused_in: Array2<S>,
    pub dec: Vec<ConvBlockCache<S>>,
}

impl<S: Scalar> GaCache<S> {
    pub fn output(&self) -> &Array4<S> {
        &self.dec.last().expect("decoder is nonempty").y
    }

    /// Bottleneck activation shape `(n, c, h, w)` before label fusion.
    pub fn bottleneck_dim(&self) -> (usize, usize, usize, usize) {
        self.enc.last().expect("encoder is nonempty").y.dim()
    }
}

pub fn build_ga<S: Scalar>(resolution: usize, num_attributes: usize) -> Result<GeneratorA<S>> {
    GeneratorA::new(GenConfig::for_resolution(resolution, num_attributes)?)
}

impl<S: Scalar> GeneratorA<S> {
    pub fn new(cfg: GenConfig) -> Result<Self> {
        cfg.validate()?;
        let widths = cfg.enc_widths();
        let enc = encoder_blocks(&cfg);
        let bdim = cfg.bottleneck_dim();
        let embed = Linear::new(cfg.num_attributes, cfg.embed_dim);
        let fuse = Linear::new(bdim + cfg.embed_dim, bdim);
        let dec = (0..cfg.depth)
            .map(|j| {
                let in_c = widths[cfg.depth - 1 - j];
                let out_c = dec_out_width(&cfg, j);
                decoder_block(&cfg, j, ConvKind::Up(ConvUp::new(in_c, out_c, 4, 2, 1)), out_c)
            })
            .collect();
        Ok(GeneratorA {
            cfg,
            enc,
            embed,
            fuse,
            dec,
        })
    }

    fn check_input(&self, x: &Array4<S>, labels: &Array2<S>) -> Result<()> {
        let (n, c, h, w) = x.dim();
        if c != self.cfg.in_channels || h != self.cfg.resolution || w != self.cfg.resolution {
            return Err(Error::invalid(format!(
                "generator input must be {}x{}x{}, got {}x{}x{}",
                self.cfg.in_channels, self.cfg.resolution, self.cfg.resolution, c, h, w
            )));
        }
        if labels.dim() != (n, self.cfg.num_attributes) {
            return Err(Error::invalid(format!(
                "label batch must be {}x{}, got {}x{}",
                n,
                self.cfg.num_attributes,
                labels.dim().0,
                labels.dim().1
            )));
        }
        Ok(())
    }

    pub fn forward(
        &self,
        x: &Array4<S>,
        labels: &Array2<S>,
        rng: &mut ChaCha8Rng,
    ) -> Result<GaCache<S>> {
        self.check_input(x, labels)?;
        let n = x.dim().0;
        let mut enc_caches = Vec::with_capacity(self.cfg.depth);
        let mut h = x.clone();
        for block in &self.enc {
            let cache = block.forward(&h, rng);
            h = cache.y.clone();
            enc_caches.push(cache);
        }
        let bdim = self.cfg.bottleneck_dim();
        let flat = reshape_to_2(h, (n, bdim));
        let emb = self.embed.forward(labels);
        let fused_in = ndarray::concatenate(Axis(1), &[flat.view(), emb.view()])
            .expect("fusion concat");
        let fused = self.fuse.forward(&fused_in);
        let side = self.cfg.bottleneck_side();
        let widths = self.cfg.enc_widths();
        let mut d = reshape_to_4(fused, (n, widths[self.cfg.depth - 1], side, side));
        let mut dec_caches = Vec::with_capacity(self.cfg.depth);
        for block in &self.dec {
            let cache = block.forward(&d, rng);
            d = cache.y.clone();
            dec_caches.push(cache);
        }
        Ok(GaCache {
            enc: enc_caches,
            labels: labels.clone(),
            fused_in,
            dec: dec_caches,
        })
    }

    /// Backpropagates a gradient w.r.t. the generator output, accumulating
    /// parameter gradients when `accumulate` is set. The gradient w.r.t. the
    /// input image is not needed by any caller and is not produced.
    pub fn backward(&self, d_out: &Array4<S>, cache: &GaCache<S>, accumulate: bool) {
        let n = d_out.dim().0;
        let mut d = d_out.clone();
        for (block, bc) in self.dec.iter().zip(cache.dec.iter()).rev() {
            d = block
                .backward(&d, bc, accumulate, true)
                .expect("decoder input gradient");
        }
        let bdim = self.cfg.bottleneck_dim();
        let d_fused = reshape_to_2(d, (n, bdim));
        let d_fused_in = self.fuse.backward(&cache.fused_in, &d_fused, accumulate);
        let d_flat = d_fused_in.slice(ndarray::s![.., ..bdim]).to_owned();
        let d_emb = d_fused_in.slice(ndarray::s![.., bdim..]).to_owned();
        // Labels are constants; only the embedding parameters receive grads.
        self.embed.backward(&cache.labels, &d_emb, accumulate);
        let (bn, bc, bh, bw) = cache.bottleneck_dim();
        let mut d_enc = reshape_to_4(d_flat, (bn, bc, bh, bw));
        for (i, (block, bcache)) in self.enc.iter().zip(cache.enc.iter()).enumerate().rev() {
            match block.backward(&d_enc, bcache, accumulate, i > 0) {
                Some(dx) => d_enc = dx,
                None => break,
            }
        }
    }
}

/// U-net generator translating an attributed face into a sketch. Its
/// encoder convolutions reuse the decoder kernels of a [`GeneratorA`]
/// (shared storage, adjoint orientation); skip connections concatenate each
/// mirrored encoder activation into the decoder.
pub struct GeneratorS<S> {
    pub cfg: GenConfig,
    pub tied: bool,
    pub enc: Vec<ConvBlock<S>>,
    pub dec: Vec<ConvBlock<S>>,
}

pub struct GsCache<S> {
    pub enc: Vec<ConvBlockCache<S>>,
    pub dec: Vec<ConvBlockCache<S>>,
}

impl<S: Scalar> GsCache<S> {
    pub fn output(&self) -> &Array4<S> {
        &self.dec.last().expect("decoder is nonempty").y
    }
}

pub fn build_gs<S: Scalar>(resolution: usize, shared_from: &GeneratorA<S>) -> Result<GeneratorS<S>> {
    if shared_from.cfg.resolution != resolution {
        return Err(Error::invalid(format!(
            "shared generator was built at resolution {}, requested {resolution}",
            shared_from.cfg.resolution
        )));
    }
    GeneratorS::new_tied(shared_from)
}

impl<S: Scalar> GeneratorS<S> {
    /// Builds the sketch generator with encoder kernels tied to the decoder
    /// kernels of `ga`, innermost to outermost reversed: encoder layer `j`
    /// shares storage with decoder layer `depth - 1 - j` of `ga`.
    pub fn new_tied(ga: &GeneratorA<S>) -> Result<Self> {
        let cfg = ga.cfg;
        cfg.validate()?;
        if ga.dec.len() != cfg.depth {
            return Err(Error::invalid("shared generator has incompatible topology"));
        }
        let widths = cfg.enc_widths();
        let mut enc = Vec::with_capacity(cfg.depth);
        for j in 0..cfg.depth {
            let src = &ga.dec[cfg.depth - 1 - j];
            let kernel = match &src.conv {
                ConvKind::Up(up) => &up.w,
                _ => return Err(Error::invalid("shared generator has incompatible topology")),
            };
            let conv = ConvDown::tied(kernel, 2, 1);
            let expect_in = if j == 0 { cfg.in_channels } else { widths[j - 1] };
            if conv.in_channels() != expect_in || conv.out_channels() != widths[j] {
                return Err(Error::invalid(format!(
                    "tied kernel {} has shape {}->{}, expected {}->{}",
                    cfg.depth - 1 - j,
                    conv.in_channels(),
                    conv.out_channels(),
                    expect_in,
                    widths[j]
                )));
            }
            enc.push(ConvBlock {
                conv: ConvKind::Down(conv),
                bn: (j != 0 && j != cfg.depth - 1).then(|| BatchNorm::new(widths[j])),
                dropout: None,
                act: Activation::LeakyRelu(0.2),
            });
        }
        Ok(GeneratorS {
            cfg,
            tied: true,
            enc,
            dec: Self::decoder(&cfg),
        })
    }

    /// Untied variant (the U-net baseline).
    pub fn new_untied(cfg: GenConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(GeneratorS {
            cfg,
            tied: false,
            enc: encoder_blocks(&cfg),
            dec: Self::decoder(&cfg),
        })
    }

    /// Decoder layer `j` takes the previous decoder output concatenated with
    /// the mirrored encoder activation, so its input width is twice the up
    /// path width everywhere except at the bottleneck.
    fn decoder(cfg: &GenConfig) -> Vec<ConvBlock<S>> {
        let widths = cfg.enc_widths();
        (0..cfg.depth)
            .map(|j| {
                let up_in = widths[cfg.depth - 1 - j];
                let in_c = if j == 0 { up_in } else { up_in * 2 };
                let out_c = dec_out_width(cfg, j);
                decoder_block(cfg, j, ConvKind::Up(ConvUp::new(in_c, out_c, 4, 2, 1)), out_c)
            })
            .collect()
    }

    /// Input widths of the decoder convolutions, for shape-suite assertions.
    pub fn decoder_input_widths(&self) -> Vec<usize> {
        self.dec.iter().map(|b| b.in_channels()).collect()
    }

    pub fn forward(&self, x: &Array4<S>, rng: &mut ChaCha8Rng) -> Result<GsCache<S>> {
        let (_, c, h, w) = x.dim();
        if c != self.cfg.in_channels || h != self.cfg.resolution || w != self.cfg.resolution {
            return Err(Error::invalid(format!(
                "generator input must be {}x{}x{}, got {}x{}x{}",
                self.cfg.in_channels, self.cfg.resolution, self.cfg.resolution, c, h, w
            )));
        }
        let mut enc_caches: Vec<ConvBlockCache<S>> = Vec::with_capacity(self.cfg.depth);
        let mut h = x.clone();
        for block in &self.enc {
            let cache = block.forward(&h, rng);
            h = cache.y.clone();
            enc_caches.push(cache);
        }
        let mut dec_caches = Vec::with_capacity(self.cfg.depth);
        for (j, block) in self.dec.iter().enumerate() {
            let input = if j == 0 {
                h.clone()
            } else {
                concat_channels(&[&h, &enc_caches[self.cfg.depth - 1 - j].y])
            };
            let cache = block.forward(&input, rng);
            h = cache.y.clone();
            dec_caches.push(cache);
        }
        Ok(GsCache {
            enc: enc_caches,
            dec: dec_caches,
        })
    }

    /// Backpropagates through decoder, skips and encoder; returns the
    /// gradient w.r.t. the input (the attributed face), through which the
    /// attribute generator receives its share of the sketch losses.
    pub fn backward(
        &self,
        d_out: &Array4<S>,
        cache: &GsCache<S>,
        accumulate: bool,
    ) -> Array4<S> {
        let depth = self.cfg.depth;
        let mut skip_grads: Vec<Option<Array4<S>>> = (0..depth).map(|_| None).collect();
        let mut d = d_out.clone();
        for (j, (block, bc)) in self.dec.iter().zip(cache.dec.iter()).enumerate().rev() {
            let dx = block
                .backward(&d, bc, accumulate, true)
                .expect("decoder input gradient");
            if j == 0 {
                d = dx;
            } else {
                let up_in = self.cfg.enc_widths()[depth - 1 - j];
                let parts = split_channels(&dx, &[up_in, up_in]);
                let mut it = parts.into_iter();
                d = it.next().expect("up-path gradient");
                skip_grads[depth - 1 - j] = Some(it.next().expect("skip gradient"));
            }
        }
        for (i, (block, bc)) in self.enc.iter().zip(cache.enc.iter()).enumerate().rev() {
            if let Some(sg) = skip_grads[i].take() {
                d += &sg;
            }
            d = block
                .backward(&d, bc, accumulate, true)
                .expect("encoder input gradient");
        }
        d
    }
}

/// Plain encoder–decoder baseline (no skips, no label fusion, no tying).
pub fn build_baseline_ed<S: Scalar>(resolution: usize) -> Result<BaselineEd<S>> {
    let cfg = GenConfig::for_resolution(resolution, 1)?;
    Ok(BaselineEd {
        cfg,
        enc: encoder_blocks(&cfg),
        dec: (0..cfg.depth)
            .map(|j| {
                let widths = cfg.enc_widths();
                let in_c = widths[cfg.depth - 1 - j];
                let out_c = dec_out_width(&cfg, j);
                decoder_block(&cfg, j, ConvKind::Up(ConvUp::new(in_c, out_c, 4, 2, 1)), out_c)
            })
            .collect(),
    })
}

pub struct BaselineEd<S> {
    pub cfg: GenConfig,
    pub enc: Vec<ConvBlock<S>>,
    pub dec: Vec<ConvBlock<S>>,
}

pub struct EdCache<S> {
    pub enc: Vec<ConvBlockCache<S>>,
    pub dec: Vec<ConvBlockCache<S>>,
}

impl<S: Scalar> EdCache<S> {
    pub fn output(&self) -> &Array4<S> {
        &self.dec.last().expect("decoder is nonempty").y
    }
}

impl<S: Scalar> BaselineEd<S> {
    pub fn forward(&self, x: &Array4<S>, rng: &mut ChaCha8Rng) -> Result<EdCache<S>> {
        let mut enc_caches = Vec::with_capacity(self.cfg.depth);
        let mut h = x.clone();
        for block in &self.enc {
            let cache = block.forward(&h, rng);
            h = cache.y.clone();
            enc_caches.push(cache);
        }
        let mut dec_caches = Vec::with_capacity(self.cfg.depth);
        for block in &self.dec {
            let cache = block.forward(&h, rng);
            h = cache.y.clone();
            dec_caches.push(cache);
        }
        Ok(EdCache {
            enc: enc_caches,
            dec: dec_caches,
        })
    }

    pub fn backward(&self, d_out: &Array4<S>, cache: &EdCache<S>, accumulate: bool) {
        let mut d = d_out.clone();
        for (block, bc) in self.dec.iter().zip(cache.dec.iter()).rev() {
            d = block
                .backward(&d, bc, accumulate, true)
                .expect("decoder input gradient");
        }
        for (i, (block, bc)) in self.enc.iter().zip(cache.enc.iter()).enumerate().rev() {
            match block.backward(&d, bc, accumulate, i > 0) {
                Some(dx) => d = dx,
                None => break,
            }
        }
    }

    /// The decoder reads only the bottleneck: no layer consumes a
    /// concatenated skip, which is checkable directly from the layer widths.
    pub fn has_skip_connections(&self) -> bool {
        let widths = self.cfg.enc_widths();
        self.dec
            .iter()
            .enumerate()
            .any(|(j, b)| b.in_channels() != widths[self.cfg.depth - 1 - j])
    }
}

/// Untied U-net baseline.
pub fn build_baseline_unet<S: Scalar>(resolution: usize) -> Result<GeneratorS<S>> {
    GeneratorS::new_untied(GenConfig::for_resolution(resolution, 1)?)
}

fn block_params<S: Scalar>(
    out: &mut Vec<(String, Param<S>)>,
    prefix: &str,
    idx: usize,
    block: &ConvBlock<S>,
    include_kernel: bool,
    kernel_name: Option<String>,
) {
    let (w, b) = match &block.conv {
        ConvKind::Down(c) => (&c.w, &c.b),
        ConvKind::Up(c) => (&c.w, &c.b),
    };
    if include_kernel {
        let name = kernel_name.unwrap_or_else(|| format!("{prefix}.{idx}.weight"));
        out.push((name, w.clone()));
    }
    out.push((format!("{prefix}.{idx}.bias"), b.clone()));
    if let Some(bn) = &block.bn {
        out.push((format!("{prefix}.{idx}.bn.gamma"), bn.gamma.clone()));
        out.push((format!("{prefix}.{idx}.bn.beta"), bn.beta.clone()));
    }
}

impl<S: Scalar> Network<S> for GeneratorA<S> {
    fn topology(&self) -> Topology {
        Topology::GeneratorA
    }

    fn named_params(&self) -> Vec<(String, Param<S>)> {
        let mut out = Vec::new();
        for (i, b) in self.enc.iter().enumerate() {
            block_params(&mut out, "enc", i, b, true, None);
        }
        out.push(("embed.weight".into(), self.embed.w.clone()));
        out.push(("embed.bias".into(), self.embed.b.clone()));
        out.push(("fuse.weight".into(), self.fuse.w.clone()));
        out.push(("fuse.bias".into(), self.fuse.b.clone()));
        for (j, b) in self.dec.iter().enumerate() {
            block_params(&mut out, "dec", j, b, true, None);
        }
        out
    }
}

impl<S: Scalar> Network<S> for GeneratorS<S> {
    fn topology(&self) -> Topology {
        if self.tied {
            Topology::GeneratorS
        } else {
            Topology::BaselineUnet
        }
    }

    fn named_params(&self) -> Vec<(String, Param<S>)> {
        let mut out = Vec::new();
        for (j, b) in self.enc.iter().enumerate() {
            // Tied kernels keep their attribute-decoder name in both
            // networks, so the shared-name list is valid against either map.
            let kernel_name = if self.tied {
                Some(format!("dec.{}.weight", self.cfg.depth - 1 - j))
            } else {
                Some(format!("enc.{j}.weight"))
            };
            block_params(&mut out, "enc", j, b, true, kernel_name);
        }
        for (j, b) in self.dec.iter().enumerate() {
            block_params(&mut out, "up", j, b, true, Some(format!("up.{j}.weight")));
        }
        out
    }
}

impl<S: Scalar> Network<S> for BaselineEd<S> {
    fn topology(&self) -> Topology {
        Topology::BaselineEd
    }

    fn named_params(&self) -> Vec<(String, Param<S>)> {
        let mut out = Vec::new();
        for (i, b) in self.enc.iter().enumerate() {
            block_params(&mut out, "enc", i, b, true, None);
        }
        for (j, b) in self.dec.iter().enumerate() {
            block_params(&mut out, "dec", j, b, true, None);
        }
        out
    }
}
