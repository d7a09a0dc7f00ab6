use super::generators::{build_ga, build_gs, GaCache, GeneratorA, GeneratorS, GsCache};
use super::Network;
use crate::data::{AttributeLabel, ImageTensor};
use crate::error::{Error, Result};
use crate::nn::Scalar;
use ndarray::{Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The two chained generators with their shared kernels. `shared_names`
/// lists the tied tensors by the name they carry in both parameter maps.
pub struct WNet<S> {
    pub ga: GeneratorA<S>,
    pub gs: GeneratorS<S>,
    pub shared_names: Vec<String>,
}

pub struct WNetCache<S> {
    pub ga: GaCache<S>,
    pub gs: GsCache<S>,
}

impl<S: Scalar> WNetCache<S> {
    pub fn attributed(&self) -> &Array4<S> {
        self.ga.output()
    }

    pub fn sketch(&self) -> &Array4<S> {
        self.gs.output()
    }
}

pub fn build_wnet<S: Scalar>(resolution: usize, num_attributes: usize) -> Result<WNet<S>> {
    let ga = build_ga(resolution, num_attributes)?;
    let gs = build_gs(resolution, &ga)?;
    Ok(WNet::from_parts(ga, gs))
}

impl<S: Scalar> WNet<S> {
    pub fn from_parts(ga: GeneratorA<S>, gs: GeneratorS<S>) -> Self {
        let shared_names = (0..ga.cfg.depth)
            .map(|j| format!("dec.{j}.weight"))
            .collect();
        WNet {
            ga,
            gs,
            shared_names,
        }
    }

    /// Checks the tying invariant: every shared name resolves to the same
    /// storage in both parameter maps.
    pub fn tying_intact(&self) -> bool {
        self.shared_names.iter().all(|name| {
            match (self.ga.param_by_name(name), self.gs.param_by_name(name)) {
                (Some(a), Some(b)) => a.id() == b.id(),
                _ => false,
            }
        })
    }

    /// Runs both generators on a batch: the attributed face from the first,
    /// the sketch of that face from the second.
    pub fn forward(
        &self,
        x1: &Array4<S>,
        labels: &Array2<S>,
        rng: &mut ChaCha8Rng,
    ) -> Result<WNetCache<S>> {
        let ga = self.ga.forward(x1, labels, rng)?;
        let gs = self.gs.forward(ga.output(), rng)?;
        Ok(WNetCache { ga, gs })
    }

    pub fn params(&self) -> Vec<(String, crate::nn::Param<S>)> {
        let mut out: Vec<(String, crate::nn::Param<S>)> = self
            .ga
            .named_params()
            .into_iter()
            .map(|(n, p)| (format!("ga.{n}"), p))
            .collect();
        out.extend(
            self.gs
                .named_params()
                .into_iter()
                .map(|(n, p)| (format!("gs.{n}"), p)),
        );
        out
    }

    pub fn zero_grads(&self) {
        Network::zero_grads(&self.ga);
        Network::zero_grads(&self.gs);
    }
}

/// Single-image W-net inference with noise realised as dropout. Dropout
/// stays active in both modes, so generation is stochastic during training
/// and deterministic under the fixed seed at test time; `train_mode` is
/// accepted for call-site clarity but does not change the math.
pub fn forward_wnet<S: Scalar>(
    wnet: &WNet<S>,
    x1: &ImageTensor,
    label: &AttributeLabel,
    train_mode: bool,
    seed: u64,
) -> Result<(ImageTensor, ImageTensor)> {
    let _ = train_mode;
    if label.vocabulary_size() != wnet.ga.cfg.num_attributes {
        return Err(Error::invalid(format!(
            "label vocabulary {} does not match generator ({})",
            label.vocabulary_size(),
            wnet.ga.cfg.num_attributes
        )));
    }
    let x = x1.to_batch::<S>();
    let labels = crate::data::labels_to_batch::<S>(std::slice::from_ref(label));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cache = wnet.forward(&x, &labels, &mut rng)?;
    Ok((
        ImageTensor::from_batch(cache.attributed(), 0),
        ImageTensor::from_batch(cache.sketch(), 0),
    ))
}
