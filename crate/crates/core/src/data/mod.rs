//! Samples, image files, augmentation, synthetic data and checkpoints.

pub mod augment;
pub mod checkpoint;
pub mod morphology;
pub mod netpbm;
pub mod resize;
pub mod synth;

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use augment::{augment, AugmentPlan, Morph};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use morphology::{dilate, erode, Element};
pub use netpbm::{decode_netpbm, encode_netpbm, load_image, load_mask, load_netpbm, save_netpbm};
pub use resize::{resize_image, resize_mask};
pub use synth::{synth_dataset, synth_sample};

/// `image: [3, H, W]` in `[0, 1]`, `mask: [1, H, W]` with values in `{0, 1}`.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
    pub id: String,
}

impl Sample {
    pub fn resized(&self, size: usize) -> Result<Sample> {
        Ok(Sample {
            image: resize_image(&self.image, (size, size))?,
            mask: resize_mask(&self.mask, (size, size))?,
            id: self.id.clone(),
        })
    }
}

/// Reads `images/<id>.ppm` paired with `masks/<id>.pgm`, sorted by id and
/// resized to `size×size`.
pub fn load_dataset_dir(dir: impl AsRef<Path>, size: usize) -> Result<Vec<Sample>> {
    let dir = dir.as_ref();
    let images = dir.join("images");
    let listing = std::fs::read_dir(&images).map_err(|e| Error::io(&images, e))?;
    let mut ids = Vec::new();
    for entry in listing {
        let path = entry.map_err(|e| Error::io(&images, e))?.path();
        if path.extension().is_some_and(|e| e == "ppm") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    ids.into_iter()
        .map(|id| {
            let image = load_image(images.join(format!("{id}.ppm")))?;
            let mask = load_mask(dir.join("masks").join(format!("{id}.pgm")))?;
            if image.shape()[1..] != mask.shape()[1..] {
                return Err(Error::ShapeMismatch(format!(
                    "{id}: image {:?} vs mask {:?}",
                    image.shape(),
                    mask.shape()
                )));
            }
            Sample { image, mask, id }.resized(size)
        })
        .collect()
}

pub fn save_dataset_dir(samples: &[Sample], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for s in samples {
        save_netpbm(&s.image, dir.join("images").join(format!("{}.ppm", s.id)))?;
        save_netpbm(&s.mask, dir.join("masks").join(format!("{}.pgm", s.id)))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = synth_dataset(3, 32, 4).unwrap();
        save_dataset_dir(&samples, dir.path()).unwrap();
        let back = load_dataset_dir(dir.path(), 32).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.mask.data(), b.mask.data());
            assert!(a.image.max_abs_diff(&b.image) <= 0.5 / 255.0 + 1e-6);
        }
        let resized = load_dataset_dir(dir.path(), 64).unwrap();
        assert_eq!(resized[0].image.shape(), &[3, 64, 64]);
        std::fs::remove_file(dir.path().join("masks").join("synth00001.pgm")).unwrap();
        assert!(matches!(load_dataset_dir(dir.path(), 32), Err(Error::Io { .. })));
    }
}
