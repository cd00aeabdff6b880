//! Patients, slices and pre-processing.
//!
//! A slice carries the T2w-like intensity image, the whole-gland (WG) mask
//! and the central-gland (CG) mask; the peripheral zone is always derived as
//! `WG ∖ CG`.

mod io;
mod phantom;

use serde::{Deserialize, Serialize};

pub use io::{
    load_dataset, load_dataset_with_manifest, read_image_png, read_label_png, read_mask_png, save_dataset, write_image_png,
    write_label_png, write_mask_png, Manifest, ManifestPatient, MANIFEST_FILE,
};
pub use phantom::{generate_phantoms, InstitutionProfile, PhantomConfig};

use crate::error::{Error, Result};
use crate::postprocess::{derive_pz, BinaryMask};
use crate::raster::Raster;

#[derive(Clone, Debug, PartialEq)]
pub struct SliceRecord {
    pub image: Raster<f64>,
    pub wg: BinaryMask,
    pub cg: BinaryMask,
    pub spacing_mm: f64,
    pub index: usize,
}

impl SliceRecord {
    pub fn new(image: Raster<f64>, wg: BinaryMask, cg: BinaryMask, spacing_mm: f64, index: usize) -> Result<Self> {
        let s = Self {
            image,
            wg,
            cg,
            spacing_mm,
            index,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }

    /// Shapes agree and every CG pixel lies inside WG.
    pub fn validate(&self) -> Result<()> {
        let dims = self.image.dims();
        if self.wg.dims() != dims || self.cg.dims() != dims {
            return Err(Error::ShapeMismatch {
                op: "slice record",
                left: vec![dims.0, dims.1],
                right: vec![self.cg.dims().0, self.cg.dims().1],
            });
        }
        if let Some((row, col)) = self.cg.coords().find(|&(r, c)| !self.wg.get(r, c)) {
            return Err(Error::MaskViolation {
                slice: self.index,
                row,
                col,
            });
        }
        Ok(())
    }

    pub fn pz(&self) -> BinaryMask {
        derive_pz(&self.wg, &self.cg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatientCase {
    pub id: String,
    pub slices: Vec<SliceRecord>,
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub tag: String,
    pub patient_count: usize,
    /// Native frame `(height, width)` of the slices.
    pub canvas: (usize, usize),
    pub spacing_mm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<InstitutionProfile>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub descriptor: DatasetDescriptor,
    pub patients: Vec<PatientCase>,
}

impl Dataset {
    pub fn tag(&self) -> &str {
        &self.descriptor.tag
    }

    pub fn slice_count(&self) -> usize {
        self.patients.iter().map(|p| p.slices.len()).sum()
    }
}

fn window_origin(src: usize, target: usize) -> isize {
    // crop: centre, extra pixel removed from the trailing side
    // pad: centre, extra pixel added on the trailing side
    if src >= target {
        ((src - target) / 2) as isize
    } else {
        -(((target - src) / 2) as isize)
    }
}

/// Centre-crops or zero-pads each dimension independently to `canvas`;
/// image and masks move together.
pub fn to_canvas(slice: &SliceRecord, canvas: (usize, usize)) -> SliceRecord {
    let (h, w) = slice.dims();
    let top = window_origin(h, canvas.0);
    let left = window_origin(w, canvas.1);
    let win_mask = |m: &BinaryMask| BinaryMask::new(m.pixels().window(top, left, canvas.0, canvas.1), m.provenance());
    SliceRecord {
        image: slice.image.window(top, left, canvas.0, canvas.1),
        wg: win_mask(&slice.wg),
        cg: win_mask(&slice.cg),
        spacing_mm: slice.spacing_mm,
        index: slice.index,
    }
}

/// Centre crop used at evaluation time in place of the random training crop.
pub fn center_crop(slice: &SliceRecord, size: (usize, usize)) -> SliceRecord {
    to_canvas(slice, size)
}

#[derive(Clone, Debug, PartialEq)]
pub enum MaskOutcome {
    Masked(SliceRecord),
    /// Empty WG: the slice is returned unchanged and must not be trained on.
    ProstateFree(SliceRecord),
}

impl MaskOutcome {
    pub fn into_masked(self) -> Option<SliceRecord> {
        match self {
            MaskOutcome::Masked(s) => Some(s),
            MaskOutcome::ProstateFree(_) => None,
        }
    }
}

/// Zeroes every intensity outside the whole gland.
pub fn mask_to_wg(slice: &SliceRecord) -> MaskOutcome {
    if slice.wg.is_empty() {
        return MaskOutcome::ProstateFree(slice.clone());
    }
    let mut out = slice.clone();
    for (v, &inside) in out.image.data_mut().iter_mut().zip(slice.wg.pixels().data()) {
        if !inside {
            *v = 0.0;
        }
    }
    MaskOutcome::Masked(out)
}

/// `to_canvas` then `mask_to_wg` over every slice of a patient, dropping
/// prostate-free slices.
pub fn preprocess_patient(patient: &PatientCase, canvas: (usize, usize)) -> Vec<SliceRecord> {
    patient
        .slices
        .iter()
        .filter_map(|s| mask_to_wg(&to_canvas(s, canvas)).into_masked())
        .collect()
}
