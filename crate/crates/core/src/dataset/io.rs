//! On-disk layout: `root/dataset.json` plus one directory per patient holding
//! `slice_###_img.png` (16-bit gray) and `slice_###_mask.png` (8-bit labels
//! 0 = background, 1 = WG only, 2 = CG).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetDescriptor, PatientCase, SliceRecord};
use crate::error::{Error, Result};
use crate::postprocess::{BinaryMask, Provenance};
use crate::raster::Raster;

pub const MANIFEST_FILE: &str = "dataset.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestPatient {
    pub id: String,
    pub slices: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub descriptor: DatasetDescriptor,
    pub patients: Vec<ManifestPatient>,
}

fn image_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("slice_{index:03}_img.png"))
}

fn mask_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("slice_{index:03}_mask.png"))
}

pub fn save_dataset(dataset: &Dataset, root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    dataset.patients.par_iter().try_for_each(|p| {
        let dir = root.join(&p.id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        p.slices.iter().try_for_each(|s| {
            write_image_png(&image_path(&dir, s.index), &s.image)?;
            write_label_png(&mask_path(&dir, s.index), &s.wg, &s.cg)
        })
    })?;
    let manifest = Manifest {
        descriptor: dataset.descriptor.clone(),
        patients: dataset
            .patients
            .iter()
            .map(|p| ManifestPatient {
                id: p.id.clone(),
                slices: p.slices.len(),
            })
            .collect(),
    };
    let path = root.join(MANIFEST_FILE);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &manifest)?;
    Ok(())
}

/// Patients ordered by id. An empty directory yields an empty list.
pub fn load_dataset(root: &Path) -> Result<Vec<PatientCase>> {
    let manifest = read_manifest(root)?;
    let tag = manifest.as_ref().map_or_else(
        || root.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()),
        |m| m.descriptor.tag.clone(),
    );
    let spacing = manifest.as_ref().map_or(1.0, |m| m.descriptor.spacing_mm);

    let mut ids: Vec<String> = match &manifest {
        Some(m) => m.patients.iter().map(|p| p.id.clone()).collect(),
        None => {
            let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
            let mut ids = Vec::new();
            for entry in entries {
                let entry = entry.map_err(|e| Error::io(root, e))?;
                if entry.path().is_dir() {
                    ids.push(entry.file_name().to_string_lossy().into_owned());
                }
            }
            ids
        }
    };
    ids.sort();
    if ids.is_empty() {
        log::warn!("no patients found under {}", root.display());
        return Ok(Vec::new());
    }
    let expected: Option<Vec<usize>> = manifest.as_ref().map(|m| {
        ids.iter()
            .map(|id| m.patients.iter().find(|p| &p.id == id).map_or(0, |p| p.slices))
            .collect()
    });

    ids.par_iter()
        .enumerate()
        .map(|(i, id)| {
            let patient = load_patient(&root.join(id), id, &tag, spacing)?;
            if let Some(expected) = &expected {
                if patient.slices.len() != expected[i] {
                    return Err(Error::Format {
                        path: root.join(id),
                        message: format!("manifest lists {} slices, found {}", expected[i], patient.slices.len()),
                    });
                }
            }
            Ok(patient)
        })
        .collect()
}

/// [`load_dataset`] plus the manifest descriptor.
pub fn load_dataset_with_manifest(root: &Path) -> Result<Dataset> {
    let manifest = read_manifest(root)?.ok_or_else(|| Error::MissingFile(root.join(MANIFEST_FILE)))?;
    let patients = load_dataset(root)?;
    Ok(Dataset {
        descriptor: manifest.descriptor,
        patients,
    })
}

fn read_manifest(root: &Path) -> Result<Option<Manifest>> {
    if !root.is_dir() {
        return Err(Error::MissingFile(root.to_path_buf()));
    }
    let path = root.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    Ok(Some(serde_json::from_reader(BufReader::new(file))?))
}

fn load_patient(dir: &Path, id: &str, tag: &str, spacing: f64) -> Result<PatientCase> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut indices = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let name = entry.map_err(|e| Error::io(dir, e))?.file_name();
        let name = name.to_string_lossy();
        if let Some(idx) = name.strip_prefix("slice_").and_then(|n| n.strip_suffix("_img.png")) {
            if let Ok(idx) = idx.parse::<usize>() {
                indices.push(idx);
            }
        }
    }
    indices.sort_unstable();
    let slices = indices
        .into_iter()
        .map(|index| {
            let image = read_image_png(&image_path(dir, index))?;
            let (wg, cg) = read_label_png(&mask_path(dir, index))?;
            SliceRecord::new(image, wg, cg, spacing, index)
        })
        .collect::<Result<Vec<_>>>()?;
    if slices.is_empty() {
        return Err(Error::Format {
            path: dir.to_path_buf(),
            message: "patient has no slices".into(),
        });
    }
    Ok(PatientCase {
        id: id.to_string(),
        slices,
        source: tag.to_string(),
    })
}

fn encode(path: &Path, width: usize, height: usize, depth: png::BitDepth, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(depth);
    let mut writer = enc.write_header()?;
    writer.write_image_data(bytes)?;
    writer.finish()?;
    Ok(())
}

fn decode(path: &Path, depth: png::BitDepth) -> Result<(usize, usize, Vec<u8>)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info()?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != depth {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("expected {depth:?}-bit grayscale, found {:?} {:?}", info.bit_depth, info.color_type),
        });
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let size = reader.output_buffer_size().ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        message: "image too large".into(),
    })?;
    let mut buf = vec![0; size];
    let frame = reader.next_frame(&mut buf)?;
    buf.truncate(frame.buffer_size());
    Ok((h, w, buf))
}

/// Intensities in `[0, 1]` stored as big-endian 16-bit samples.
pub fn write_image_png(path: &Path, image: &Raster<f64>) -> Result<()> {
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .flat_map(|&v| ((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes())
        .collect();
    encode(path, image.width(), image.height(), png::BitDepth::Sixteen, &bytes)
}

pub fn read_image_png(path: &Path) -> Result<Raster<f64>> {
    let (h, w, buf) = decode(path, png::BitDepth::Sixteen)?;
    let data = buf
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0)
        .collect();
    Ok(Raster::from_vec(h, w, data))
}

pub fn write_label_png(path: &Path, wg: &BinaryMask, cg: &BinaryMask) -> Result<()> {
    let (h, w) = wg.dims();
    let bytes: Vec<u8> = wg
        .pixels()
        .data()
        .iter()
        .zip(cg.pixels().data())
        .map(|(&g, &c)| if c { 2 } else { g as u8 })
        .collect();
    encode(path, w, h, png::BitDepth::Eight, &bytes)
}

/// Returns `(wg, cg)`; any label outside `{0, 1, 2}` is rejected with its
/// position.
pub fn read_label_png(path: &Path) -> Result<(BinaryMask, BinaryMask)> {
    let (h, w, buf) = decode(path, png::BitDepth::Eight)?;
    if let Some(i) = buf.iter().position(|&v| v > 2) {
        return Err(Error::BadMaskLabel {
            path: path.to_path_buf(),
            label: buf[i],
            row: i / w,
            col: i % w,
        });
    }
    let wg = BinaryMask::new(Raster::from_vec(h, w, buf.iter().map(|&v| v > 0).collect()), Provenance::Truth);
    let cg = BinaryMask::new(Raster::from_vec(h, w, buf.iter().map(|&v| v == 2).collect()), Provenance::Truth);
    Ok((wg, cg))
}

/// Single binary mask as 8-bit 0/255.
pub fn write_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    let (h, w) = mask.dims();
    let bytes: Vec<u8> = mask.pixels().data().iter().map(|&v| if v { 255 } else { 0 }).collect();
    encode(path, w, h, png::BitDepth::Eight, &bytes)
}

/// Any non-zero sample is foreground.
pub fn read_mask_png(path: &Path, provenance: Provenance) -> Result<BinaryMask> {
    let (h, w, buf) = decode(path, png::BitDepth::Eight)?;
    Ok(BinaryMask::new(Raster::from_vec(h, w, buf.iter().map(|&v| v != 0).collect()), provenance))
}
