use super::{ImageTensor, Triplet};
use crate::error::{Error, Result};
use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    AttributedSketch,
    Colorization,
    Completion,
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attributed_sketch" => Ok(Task::AttributedSketch),
            "colorization" => Ok(Task::Colorization),
            "completion" => Ok(Task::Completion),
            other => Err(Error::invalid(format!(
                "unknown task `{other}`; expected attributed_sketch, colorization or completion"
            ))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Task::AttributedSketch => "attributed_sketch",
            Task::Colorization => "colorization",
            Task::Completion => "completion",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TaskConfig {
    pub task: Task,
    /// Side of the square noise patch as a fraction of the image side
    /// (completion task only).
    pub mask_fraction: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            task: Task::AttributedSketch,
            mask_fraction: 0.25,
        }
    }
}

impl TaskConfig {
    pub fn new(task: Task, mask_fraction: f64) -> Result<Self> {
        if !(0.0 < mask_fraction && mask_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "mask_fraction must lie in (0, 1), got {mask_fraction}"
            )));
        }
        Ok(TaskConfig {
            task,
            mask_fraction,
        })
    }
}

/// Decodes an image file from raw bytes, resizes bilinearly to
/// `resolution` x `resolution` RGB and maps `[0, 255]` linearly to `[-1, 1]`.
pub fn resize_normalize(raw: &[u8], resolution: usize, origin: &Path) -> Result<ImageTensor> {
    if raw.is_empty() {
        return Err(Error::ImageDecode {
            path: origin.to_path_buf(),
            message: "empty file".into(),
        });
    }
    let decoded = image::load_from_memory(raw).map_err(|e| Error::ImageDecode {
        path: origin.to_path_buf(),
        message: e.to_string(),
    })?;
    let resized = image::imageops::resize(
        &decoded.to_rgb8(),
        resolution as u32,
        resolution as u32,
        image::imageops::FilterType::Triangle,
    );
    let mut data = Array3::zeros((3, resolution, resolution));
    for (px, py, pixel) in resized.enumerate_pixels() {
        for c in 0..3 {
            data[(c, py as usize, px as usize)] = pixel.0[c] as f32 * (2.0 / 255.0) - 1.0;
        }
    }
    ImageTensor::new(data)
}

pub fn decode_image(path: &Path, resolution: usize) -> Result<ImageTensor> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    resize_normalize(&raw, resolution, path)
}

/// Encodes an image tensor as an 8-bit RGB PNG, mapping `[-1, 1]` back to
/// `[0, 255]` with round-to-nearest.
pub fn encode_png(img: &ImageTensor, path: &Path) -> Result<()> {
    let (c, h, w) = img.data().dim();
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for py in 0..h {
        for px in 0..w {
            let mut rgb = [0u8; 3];
            for ch in 0..3 {
                let v = img.data()[(ch.min(c - 1), py, px)];
                rgb[ch] = (((v + 1.0) * 0.5 * 255.0).round()).clamp(0.0, 255.0) as u8;
            }
            buf.put_pixel(px as u32, py as u32, image::Rgb(rgb));
        }
    }
    buf.save(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn flip_image(img: &ImageTensor) -> ImageTensor {
    let (c, h, w) = img.data().dim();
    let mut out = Array3::zeros((c, h, w));
    for ch in 0..c {
        for py in 0..h {
            for px in 0..w {
                out[(ch, py, px)] = img.data()[(ch, py, w - 1 - px)];
            }
        }
    }
    ImageTensor::new(out).expect("flip preserves validity")
}

/// Mirrors all three images left-right when `apply` is set; an involution.
pub fn augment_flip(t: &Triplet, apply: bool) -> Triplet {
    if !apply {
        return t.clone();
    }
    Triplet {
        x1: flip_image(&t.x1),
        x2: flip_image(&t.x2),
        y: flip_image(&t.y),
        label: t.label.clone(),
        id: t.id.clone(),
    }
}

fn grayscale3(img: &ImageTensor) -> ImageTensor {
    let lum = img.luminance();
    let (h, w) = lum.dim();
    let mut out = Array3::zeros((3, h, w));
    for c in 0..3 {
        let mut plane = out.index_axis_mut(ndarray::Axis(0), c);
        ndarray::Zip::from(&mut plane).and(&lum).for_each(|o, &l| *o = l * 2.0 - 1.0);
    }
    ImageTensor::new(out).expect("grayscale replication is valid")
}

fn noise_patch(img: &ImageTensor, mask_fraction: f64, rng_seed: u64) -> ImageTensor {
    let (c, h, w) = img.data().dim();
    let side = ((w as f64) * mask_fraction).round() as usize;
    let y0 = (h - side) / 2;
    let x0 = (w - side) / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = img.clone();
    for py in y0..y0 + side {
        for px in x0..x0 + side {
            for ch in 0..c {
                out.data_mut()[(ch, py, px)] = rng.gen_range(-1.0f32..=1.0);
            }
        }
    }
    out
}

/// Maps a triplet onto `(input, target_attr, target_out)` for the requested
/// task. The attributed-sketch task passes the triplet through unchanged;
/// colorization feeds a grayscale input and asks for the color photo as the
/// final output; completion feeds a photo with a noised central square and
/// asks for the completed attributed photo.
pub fn task_transform(
    t: &Triplet,
    cfg: &TaskConfig,
    rng_seed: u64,
) -> Result<(ImageTensor, ImageTensor, ImageTensor)> {
    TaskConfig::new(cfg.task, cfg.mask_fraction)?;
    Ok(match cfg.task {
        Task::AttributedSketch => (t.x1.clone(), t.x2.clone(), t.y.clone()),
        Task::Colorization => (grayscale3(&t.x1), t.x2.clone(), t.x2.clone()),
        Task::Completion => (
            noise_patch(&t.x1, cfg.mask_fraction, rng_seed),
            t.x2.clone(),
            t.x2.clone(),
        ),
    })
}
