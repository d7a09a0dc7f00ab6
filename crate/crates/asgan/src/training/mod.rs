//! Alternating adversarial optimization: one gradient step on both
//! discriminators with the generators fixed, then one step on both
//! generators with the discriminators fixed. Discriminators are trained on
//! half their raw objective to slow them relative to the generators;
//! generators use the non-saturating `-log D(fake)` form. Adam runs with
//! beta1 = 0.5, beta2 = 0.999 and learning rate 2e-4.

mod adam;
mod checkpoint;

pub use adam::Adam;
pub use checkpoint::{checkpoint_load, checkpoint_save, CHECKPOINT_VERSION};

use crate::data::{
    augment_flip, labels_to_batch, load_manifest, synth_triplet, task_transform, AttributeLabel,
    ImageTensor, Split, TaskConfig, Triplet, ATTRIBUTE_NAMES,
};
use crate::error::{Error, Result};
use crate::losses::{
    l1_loss, neg_log_sigmoid, softplus, total_generator_objective, LossReport, ObjectiveConfig,
};
use crate::networks::{
    build_discriminator, build_wnet, Discriminator, Network, WNet, WNetCache,
};
use crate::nn::ops::split_channels;
use crate::nn::{Param, Scalar};
use ndarray::{Array2, Array4, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

/// The discriminator objective is halved relative to the written loss.
pub const D_OBJECTIVE_SCALE: f64 = 0.5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_l1: f64,
    pub seed: u64,
    pub resolution: usize,
    pub task: String,
    pub mask_fraction: f64,
    pub flip_augment: bool,
    /// Iterations between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: usize,
    /// Ablation mode: apply the generator update to only one of the two
    /// generators per iteration, alternating between them.
    pub alternate_generators: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epochs: 200,
            batch_size: 1,
            lambda_l1: 100.0,
            seed: 0,
            resolution: 64,
            task: "attributed_sketch".into(),
            mask_fraction: 0.25,
            flip_augment: true,
            checkpoint_interval: 0,
            alternate_generators: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 && self.learning_rate != 0.0 {
            return Err(Error::Config("learning_rate must be non-negative".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.lambda_l1 < 0.0 {
            return Err(Error::Config("lambda_l1 must be non-negative".into()));
        }
        self.task_config()?;
        Ok(())
    }

    pub fn task_config(&self) -> Result<TaskConfig> {
        TaskConfig::new(self.task.parse()?, self.mask_fraction)
    }
}

/// One task-transformed mini batch.
pub struct Batch<S> {
    pub input: Array4<S>,
    pub target_attr: Array4<S>,
    pub target_out: Array4<S>,
    pub labels: Array2<S>,
}

impl<S: Scalar> Batch<S> {
    pub fn from_samples(
        samples: &[(ImageTensor, ImageTensor, ImageTensor, AttributeLabel)],
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("batch must be nonempty"));
        }
        let stack = |pick: &dyn Fn(&(ImageTensor, ImageTensor, ImageTensor, AttributeLabel))
            -> Array4<S>|
         -> Result<Array4<S>> {
            let arrays: Vec<Array4<S>> = samples.iter().map(pick).collect();
            let views: Vec<_> = arrays.iter().map(|a| a.view()).collect();
            ndarray::concatenate(Axis(0), &views)
                .map_err(|_| Error::invalid("batch samples must share shapes"))
        };
        let input = stack(&|s| s.0.to_batch())?;
        let target_attr = stack(&|s| s.1.to_batch())?;
        let target_out = stack(&|s| s.2.to_batch())?;
        let labels: Vec<AttributeLabel> = samples.iter().map(|s| s.3.clone()).collect();
        Ok(Batch {
            input,
            target_attr,
            target_out,
            labels: labels_to_batch(&labels),
        })
    }
}

/// Everything the trainer mutates, plus the config that built it.
pub struct TrainState<S> {
    pub wnet: WNet<S>,
    pub d_a: Discriminator<S>,
    pub d_s: Discriminator<S>,
    pub adam_g: Adam<S>,
    pub adam_da: Adam<S>,
    pub adam_ds: Adam<S>,
    pub iteration: u64,
    pub rng: ChaCha8Rng,
    pub config: TrainConfig,
}

impl<S: Scalar> TrainState<S> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let k = ATTRIBUTE_NAMES.len();
        let wnet = build_wnet::<S>(config.resolution, k)?;
        let d_a = build_discriminator::<S>(3, config.resolution)?;
        let d_s = build_discriminator::<S>(9, config.resolution)?;
        crate::networks::init_weights(&wnet.ga, config.seed);
        crate::networks::init_weights(&wnet.gs, config.seed.wrapping_add(1));
        crate::networks::init_weights(&d_a, config.seed.wrapping_add(2));
        crate::networks::init_weights(&d_s, config.seed.wrapping_add(3));
        let adam_g = Adam::new(config.learning_rate, config.beta1, config.beta2);
        let adam_da = Adam::new(config.learning_rate, config.beta1, config.beta2);
        let adam_ds = Adam::new(config.learning_rate, config.beta1, config.beta2);
        let rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        Ok(TrainState {
            wnet,
            d_a,
            d_s,
            adam_g,
            adam_da,
            adam_ds,
            iteration: 0,
            rng,
            config,
        })
    }

    /// Unique generator parameters (tied tensors once, via the shared id).
    pub fn generator_params(&self) -> Vec<(String, Param<S>)> {
        self.wnet.params()
    }

    /// One alternating update on a batch; returns the raw loss scalars.
    pub fn train_step(&mut self, batch: &Batch<S>) -> Result<LossReport> {
        // (1) W-net forward; the same activations back the generator update.
        let cache = self
            .wnet
            .forward(&batch.input, &batch.labels, &mut self.rng)?;
        let attributed = cache.attributed().clone();
        let sketch = cache.sketch().clone();

        // (2) Discriminator steps on half the raw objective, generators
        // frozen (the fakes enter as constants).
        let real_res = &batch.target_attr - &batch.input;
        let fake_res = &attributed - &batch.input;
        self.d_a.zero_grads();
        let d_a_loss = discriminator_phase(&self.d_a, &real_res, &fake_res, D_OBJECTIVE_SCALE)?;
        self.adam_da.step(&self.d_a.named_params());

        let real_trip =
            crate::nn::ops::concat_channels(&[&batch.input, &batch.target_attr, &batch.target_out]);
        let fake_trip = crate::nn::ops::concat_channels(&[&batch.input, &attributed, &sketch]);
        self.d_s.zero_grads();
        let d_s_loss = discriminator_phase(&self.d_s, &real_trip, &fake_trip, D_OBJECTIVE_SCALE)?;
        self.adam_ds.step(&self.d_s.named_params());

        // (3) Generator step against the just-updated discriminators.
        self.wnet.zero_grads();
        let gen = generator_phase(
            &self.wnet,
            &self.d_a,
            &self.d_s,
            batch,
            self.config.lambda_l1,
            &cache,
            true,
        )?;
        if self.config.alternate_generators {
            let params: Vec<(String, Param<S>)> = if self.iteration % 2 == 0 {
                self.wnet
                    .ga
                    .named_params()
                    .into_iter()
                    .map(|(n, p)| (format!("ga.{n}"), p))
                    .collect()
            } else {
                self.wnet
                    .gs
                    .named_params()
                    .into_iter()
                    .map(|(n, p)| (format!("gs.{n}"), p))
                    .collect()
            };
            self.adam_g.step(&params);
        } else {
            self.adam_g.step(&self.generator_params());
        }

        let report = LossReport {
            d_a_loss: d_a_loss.to_f(),
            d_s_loss: d_s_loss.to_f(),
            g_attr_adv: gen.g_attr_adv.to_f(),
            g_sketch_adv: gen.g_sketch_adv.to_f(),
            l1_ga: gen.l1_ga.to_f(),
            l1_gs: gen.l1_gs.to_f(),
            total_g: gen.total.to_f(),
        };
        if let Some(term) = report.non_finite_term() {
            return Err(Error::NonFiniteLoss {
                term: term.into(),
                iteration: self.iteration,
            });
        }
        self.iteration += 1;
        Ok(report)
    }
}

/// Raw discriminator loss `-[ln D(real) + ln(1 - D(fake))]` with gradients
/// accumulated at `scale` times the raw loss. The trainer passes
/// [`D_OBJECTIVE_SCALE`]; tests pass 1.0 to observe the unscaled gradient.
pub fn discriminator_phase<S: Scalar>(
    d: &Discriminator<S>,
    real: &Array4<S>,
    fake: &Array4<S>,
    scale: f64,
) -> Result<S> {
    let n = real.dim().0;
    let inv_n = S::from_f(scale / n as f64);
    let cache_real = d.forward(real)?;
    let cache_fake = d.forward(fake)?;
    let raw = cache_real
        .logits
        .iter()
        .map(|&s| neg_log_sigmoid(s))
        .sum::<S>()
        / S::from_f(n as f64)
        + cache_fake.logits.iter().map(|&s| softplus(s)).sum::<S>() / S::from_f(n as f64);
    // d/ds of -ln(sigmoid(s)) is sigmoid(s) - 1; of -ln(1 - sigmoid(s)), sigmoid(s).
    let d_real = cache_real
        .logits
        .mapv(|s| (sigmoid(s) - S::one()) * inv_n);
    let d_fake = cache_fake.logits.mapv(|s| sigmoid(s) * inv_n);
    d.backward(&d_real, &cache_real, true, false);
    d.backward(&d_fake, &cache_fake, true, false);
    Ok(raw)
}

fn sigmoid<S: Scalar>(s: S) -> S {
    S::one() / (S::one() + (-s).exp())
}

#[derive(Debug, Clone, Copy)]
pub struct GeneratorPhaseOutput<S> {
    pub g_attr_adv: S,
    pub g_sketch_adv: S,
    pub l1_ga: S,
    pub l1_gs: S,
    pub total: S,
}

/// Generator objective and, when `accumulate` is set, its gradients w.r.t.
/// every W-net parameter. Gradients flow through the shared kernels from
/// both branches and into the attribute generator through both the residual
/// discriminator and the sketch chain; the discriminators stay frozen.
pub fn generator_phase<S: Scalar>(
    wnet: &WNet<S>,
    d_a: &Discriminator<S>,
    d_s: &Discriminator<S>,
    batch: &Batch<S>,
    lambda_l1: f64,
    cache: &WNetCache<S>,
    accumulate: bool,
) -> Result<GeneratorPhaseOutput<S>> {
    let attributed = cache.attributed();
    let sketch = cache.sketch();
    let n = batch.input.dim().0;
    let inv_n = S::from_f(1.0 / n as f64);

    let fake_res = attributed - &batch.input;
    let cache_a = d_a.forward(&fake_res)?;
    let fake_trip = crate::nn::ops::concat_channels(&[&batch.input, attributed, sketch]);
    let cache_s = d_s.forward(&fake_trip)?;

    let g_attr_adv = cache_a
        .logits
        .iter()
        .map(|&s| neg_log_sigmoid(s))
        .sum::<S>()
        * inv_n;
    let g_sketch_adv = cache_s
        .logits
        .iter()
        .map(|&s| neg_log_sigmoid(s))
        .sum::<S>()
        * inv_n;
    let l1_ga = l1_loss(attributed, &batch.target_attr)?;
    let l1_gs = l1_loss(sketch, &batch.target_out)?;
    let cfg = ObjectiveConfig { lambda_l1 };
    let total = total_generator_objective(g_attr_adv, g_sketch_adv, l1_ga, l1_gs, &cfg);

    if accumulate {
        // d/ds of -ln(sigmoid(s)) is sigmoid(s) - 1.
        let d_sa = cache_a.logits.mapv(|s| (sigmoid(s) - S::one()) * inv_n);
        let d_ss = cache_s.logits.mapv(|s| (sigmoid(s) - S::one()) * inv_n);
        let mut d_attr = d_a
            .backward(&d_sa, &cache_a, false, true)
            .expect("residual input gradient");
        let d_trip = d_s
            .backward(&d_ss, &cache_s, false, true)
            .expect("triple input gradient");
        let parts = split_channels(&d_trip, &[3, 3, 3]);
        let mut it = parts.into_iter();
        let _d_x1 = it.next();
        d_attr += &it.next().expect("attributed-slot gradient");
        let mut d_sketch = it.next().expect("sketch-slot gradient");

        let lam = S::from_f(lambda_l1);
        let l1_scale = lam / S::from_f(attributed.len() as f64);
        let sign_grad = |out: &mut Array4<S>, pred: &Array4<S>, target: &Array4<S>| {
            ndarray::Zip::from(out).and(pred).and(target).for_each(|o, &p, &t| {
                let s = if p > t {
                    l1_scale
                } else if p < t {
                    -l1_scale
                } else {
                    S::zero()
                };
                *o = *o + s;
            });
        };
        sign_grad(&mut d_attr, attributed, &batch.target_attr);
        sign_grad(&mut d_sketch, sketch, &batch.target_out);

        let d_attr_from_sketch = wnet.gs.backward(&d_sketch, &cache.gs, true);
        d_attr += &d_attr_from_sketch;
        wnet.ga.backward(&d_attr, &cache.ga, true);
    }

    Ok(GeneratorPhaseOutput {
        g_attr_adv,
        g_sketch_adv,
        l1_ga,
        l1_gs,
        total,
    })
}

/// Where the training data comes from.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// Deterministic synthetic triplets with seeds `base_seed..base_seed+count`.
    Synthetic { count: usize, base_seed: u64 },
    /// A dataset directory with a JSON-lines manifest.
    Manifest { root: PathBuf },
}

pub fn load_training_triplets(
    source: &DataSource,
    resolution: usize,
    split: Split,
) -> Result<Vec<Triplet>> {
    match source {
        DataSource::Synthetic { count, base_seed } => (0..*count)
            .map(|i| {
                let label =
                    AttributeLabel::from_name(ATTRIBUTE_NAMES[i % ATTRIBUTE_NAMES.len()])?;
                synth_triplet(base_seed + i as u64, &label, resolution)
            })
            .collect(),
        DataSource::Manifest { root } => {
            let manifest = load_manifest(root, split)?;
            manifest
                .entries
                .iter()
                .map(|e| {
                    Ok(Triplet {
                        x1: crate::data::decode_image(&e.x1, resolution)?,
                        x2: crate::data::decode_image(&e.x2, resolution)?,
                        y: crate::data::decode_image(&e.y, resolution)?,
                        label: e.label.clone(),
                        id: e.id.clone(),
                    })
                })
                .collect()
        }
    }
}

fn mix_seed(a: u64, b: u64, c: u64) -> u64 {
    let mut v = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ c.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    v ^= v >> 31;
    v = v.wrapping_mul(0x94d0_49bb_1331_11eb);
    v ^ (v >> 29)
}

pub struct TrainOutcome {
    pub final_report: Option<LossReport>,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
}

/// Full training loop: `epochs` passes over the data in a per-epoch
/// deterministic order, one `train_step` per batch, a CSV loss row per
/// iteration and periodic checkpoints. Reproducible under a fixed seed.
pub fn train<S: Scalar>(
    mut state: TrainState<S>,
    triplets: &[Triplet],
    out_dir: &Path,
) -> Result<TrainOutcome> {
    if triplets.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join("loss_log.csv");
    let resume = state.iteration > 0;
    let mut log = if resume {
        std::fs::OpenOptions::new()
            .append(true)
            .create(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?
    } else {
        let mut f = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        writeln!(f, "{}", LossReport::CSV_HEADER).map_err(|e| Error::io(&log_path, e))?;
        f
    };

    let config = state.config.clone();
    let task_cfg = config.task_config()?;
    let batches_per_epoch = triplets.len().div_ceil(config.batch_size);
    let total_iterations = (config.epochs * batches_per_epoch) as u64;
    let mut final_report = None;

    while state.iteration < total_iterations {
        let epoch = state.iteration / batches_per_epoch as u64;
        let batch_in_epoch = (state.iteration % batches_per_epoch as u64) as usize;

        let mut order: Vec<usize> = (0..triplets.len()).collect();
        let mut order_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, epoch, 0x0e0));
        order.shuffle(&mut order_rng);

        let start = batch_in_epoch * config.batch_size;
        let end = (start + config.batch_size).min(order.len());
        let mut samples = Vec::with_capacity(end - start);
        for &idx in &order[start..end] {
            let t = &triplets[idx];
            let flip = config.flip_augment && state.rng.gen::<bool>();
            let t = augment_flip(t, flip);
            let noise_seed = mix_seed(config.seed, epoch, idx as u64);
            let (input, target_attr, target_out) = task_transform(&t, &task_cfg, noise_seed)?;
            samples.push((input, target_attr, target_out, t.label.clone()));
        }
        let batch = Batch::from_samples(&samples)?;
        let report = state.train_step(&batch)?;
        writeln!(log, "{}", report.csv_row(state.iteration - 1))
            .map_err(|e| Error::io(&log_path, e))?;
        final_report = Some(report);

        if config.checkpoint_interval > 0
            && state.iteration % config.checkpoint_interval as u64 == 0
            && state.iteration < total_iterations
        {
            let path = out_dir.join(format!("checkpoint_{:06}.ckpt", state.iteration));
            checkpoint_save(&state, &path)?;
        }
    }

    let checkpoint_path = out_dir.join("checkpoint_final.ckpt");
    checkpoint_save(&state, &checkpoint_path)?;
    Ok(TrainOutcome {
        final_report,
        checkpoint_path,
        log_path,
    })
}
