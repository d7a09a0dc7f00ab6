//! Triplet data for all three tasks: domain types, the deterministic
//! synthetic dataset, manifest loading and the per-task input/target
//! transforms. Everything here is a pure function of its seed.

mod manifest;
mod synth;
mod transform;

pub use manifest::{load_manifest, write_manifest, DatasetManifest, ManifestEntry, Split};
pub use synth::{attribute_mask, synth_triplet, MIN_SYNTH_RESOLUTION};
pub use transform::{
    augment_flip, decode_image, encode_png, resize_normalize, task_transform, Task, TaskConfig,
};

use crate::error::{Error, Result};
use crate::nn::Scalar;
use ndarray::{Array2, Array3, Array4, Axis};

/// Default attribute vocabulary, in label-index order.
pub const ATTRIBUTE_NAMES: [&str; 3] = ["glasses", "beard", "bowtie"];

/// One-hot attribute label over a vocabulary of size `k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AttributeLabel {
    index: usize,
    k: usize,
}

impl AttributeLabel {
    pub fn new(index: usize, k: usize) -> Result<Self> {
        if k == 0 || index >= k {
            return Err(Error::invalid(format!(
                "attribute index {index} out of range for vocabulary size {k}"
            )));
        }
        Ok(AttributeLabel { index, k })
    }

    /// Looks a name up in the default vocabulary.
    pub fn from_name(name: &str) -> Result<Self> {
        match ATTRIBUTE_NAMES.iter().position(|&n| n == name) {
            Some(index) => AttributeLabel::new(index, ATTRIBUTE_NAMES.len()),
            None => Err(Error::invalid(format!(
                "unknown attribute `{name}`; expected one of: {}",
                ATTRIBUTE_NAMES.join(", ")
            ))),
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn vocabulary_size(&self) -> usize {
        self.k
    }

    pub fn name(&self) -> &'static str {
        ATTRIBUTE_NAMES
            .get(self.index)
            .copied()
            .unwrap_or("attribute")
    }

    pub fn as_one_hot<S: Scalar>(&self) -> Vec<S> {
        let mut v = vec![S::zero(); self.k];
        v[self.index] = S::one();
        v
    }
}

/// A channels-first image with values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array3<f32>,
}

impl ImageTensor {
    pub fn new(data: Array3<f32>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if h == 0 || w == 0 || !(c == 1 || c == 3) {
            return Err(Error::invalid(format!(
                "image tensor must be 1 or 3 channels with positive size, got {c}x{h}x{w}"
            )));
        }
        Ok(ImageTensor { data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        ImageTensor {
            data: Array3::zeros((channels, height, width)),
        }
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f32> {
        &mut self.data
    }

    pub fn in_range(&self) -> bool {
        self.data.iter().all(|&v| (-1.0..=1.0).contains(&v))
    }

    /// Per-pixel luminance in `[0, 1]` (Rec. 601 weights for RGB).
    pub fn luminance(&self) -> Array2<f32> {
        let (c, h, w) = self.data.dim();
        let mut out = Array2::zeros((h, w));
        if c == 1 {
            out.assign(&self.data.index_axis(Axis(0), 0));
        } else {
            let r = self.data.index_axis(Axis(0), 0);
            let g = self.data.index_axis(Axis(0), 1);
            let b = self.data.index_axis(Axis(0), 2);
            ndarray::Zip::from(&mut out)
                .and(&r)
                .and(&g)
                .and(&b)
                .for_each(|o, &r, &g, &b| {
                    *o = 0.299 * r + 0.587 * g + 0.114 * b;
                });
        }
        out.mapv_inplace(|v| (v + 1.0) * 0.5);
        out
    }

    /// Single-sample batch in the network element type.
    pub fn to_batch<S: Scalar>(&self) -> Array4<S> {
        let (c, h, w) = self.data.dim();
        let mut out = Array4::zeros((1, c, h, w));
        ndarray::Zip::from(&mut out.index_axis_mut(Axis(0), 0))
            .and(&self.data)
            .for_each(|o, &v| *o = S::from_f(v as f64));
        out
    }

    pub fn from_batch<S: Scalar>(batch: &Array4<S>, index: usize) -> Self {
        let slice = batch.index_axis(Axis(0), index);
        ImageTensor {
            data: slice.mapv(|v| v.to_f() as f32),
        }
    }
}

/// A training sample: photo without attribute, photo with attribute, sketch
/// with attribute, and the attribute label.
#[derive(Debug, Clone)]
pub struct Triplet {
    pub x1: ImageTensor,
    pub x2: ImageTensor,
    pub y: ImageTensor,
    pub label: AttributeLabel,
    pub id: String,
}

impl Triplet {
    pub fn validate(&self) -> Result<()> {
        let dims = |t: &ImageTensor| (t.channels(), t.height(), t.width());
        if dims(&self.x1) != dims(&self.x2) || dims(&self.x1) != dims(&self.y) {
            return Err(Error::invalid(format!(
                "triplet `{}` images have mismatched dimensions",
                self.id
            )));
        }
        Ok(())
    }
}

/// Stacks per-sample one-hot labels into a `[n, k]` batch.
pub fn labels_to_batch<S: Scalar>(labels: &[AttributeLabel]) -> Array2<S> {
    let k = labels.first().map(|l| l.vocabulary_size()).unwrap_or(0);
    let mut out = Array2::zeros((labels.len(), k));
    for (i, l) in labels.iter().enumerate() {
        out[(i, l.index())] = S::one();
    }
    out
}
