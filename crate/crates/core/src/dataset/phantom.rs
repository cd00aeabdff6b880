use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetDescriptor, PatientCase, SliceRecord};
use crate::architectures::fnv1a;
use crate::error::{Error, Result};
use crate::postprocess::{BinaryMask, Provenance};
use crate::raster::Raster;

/// Acquisition character of one synthetic institution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstitutionProfile {
    pub tag: String,
    pub background: f64,
    pub cg_intensity: f64,
    pub pz_intensity: f64,
    pub noise_sigma: f64,
    /// Peak-to-peak amplitude of a multiplicative left-right bias ramp.
    pub bias_strength: f64,
    /// Native `(height, width)`.
    pub canvas: (usize, usize),
    pub spacing_mm: f64,
}

impl InstitutionProfile {
    pub fn phantom_a() -> Self {
        Self {
            tag: "phantom-A".into(),
            background: 0.25,
            cg_intensity: 0.35,
            pz_intensity: 0.75,
            noise_sigma: 0.04,
            bias_strength: 0.10,
            canvas: (36, 36),
            spacing_mm: 0.625,
        }
    }

    pub fn phantom_b() -> Self {
        Self {
            tag: "phantom-B".into(),
            background: 0.30,
            cg_intensity: 0.45,
            pz_intensity: 0.65,
            noise_sigma: 0.06,
            bias_strength: 0.20,
            canvas: (40, 40),
            spacing_mm: 0.5,
        }
    }

    pub fn phantom_c() -> Self {
        Self {
            tag: "phantom-C".into(),
            background: 0.20,
            cg_intensity: 0.25,
            pz_intensity: 0.50,
            noise_sigma: 0.05,
            bias_strength: 0.15,
            canvas: (34, 30),
            spacing_mm: 0.7,
        }
    }

    /// A, B and C in that order.
    pub fn standard() -> Vec<Self> {
        vec![Self::phantom_a(), Self::phantom_b(), Self::phantom_c()]
    }

    pub fn with_canvas(mut self, canvas: (usize, usize)) -> Self {
        self.canvas = canvas;
        self
    }

    /// Noise-free PZ/CG intensity ratio.
    pub fn contrast_ratio(&self) -> f64 {
        self.pz_intensity / self.cg_intensity
    }

    fn validate(&self) -> Result<()> {
        let unit = [self.background, self.cg_intensity, self.pz_intensity];
        if unit.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!("{}: intensities must lie in [0, 1]", self.tag)));
        }
        if self.cg_intensity <= 0.0 || self.cg_intensity >= self.pz_intensity {
            return Err(Error::InvalidArgument(format!("{}: CG must be darker than PZ and positive", self.tag)));
        }
        if !(self.noise_sigma >= 0.0) || !(0.0..1.0).contains(&self.bias_strength) {
            return Err(Error::InvalidArgument(format!("{}: bad noise or bias parameters", self.tag)));
        }
        if self.canvas.0 < 8 || self.canvas.1 < 8 {
            return Err(Error::InvalidArgument(format!("{}: canvas {:?} below 8x8", self.tag, self.canvas)));
        }
        if !(self.spacing_mm > 0.0) {
            return Err(Error::InvalidArgument(format!("{}: spacing must be positive", self.tag)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub profiles: Vec<InstitutionProfile>,
    pub patients_per_set: usize,
    pub slices_per_patient: usize,
    pub seed: u64,
    /// Range of the CG/WG axis ratio.
    #[serde(default = "default_cg_ratio")]
    pub cg_ratio: (f64, f64),
    /// Range of the WG semi-axes at mid-gland, as a fraction of the frame.
    #[serde(default = "default_wg_extent")]
    pub wg_extent: (f64, f64),
}

fn default_cg_ratio() -> (f64, f64) {
    (0.4, 0.7)
}

fn default_wg_extent() -> (f64, f64) {
    (0.26, 0.36)
}

impl PhantomConfig {
    pub fn new(profiles: Vec<InstitutionProfile>, patients_per_set: usize, slices_per_patient: usize, seed: u64) -> Self {
        Self {
            profiles,
            patients_per_set,
            slices_per_patient,
            seed,
            cg_ratio: default_cg_ratio(),
            wg_extent: default_wg_extent(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.profiles.is_empty() {
            return Err(Error::InvalidArgument("no institution profiles".into()));
        }
        if self.patients_per_set == 0 || self.slices_per_patient == 0 {
            return Err(Error::InvalidArgument("patient and slice counts must be positive".into()));
        }
        let (lo, hi) = self.cg_ratio;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::InvalidArgument(format!("cg_ratio {:?} must satisfy 0 < lo <= hi < 1", self.cg_ratio)));
        }
        let (lo, hi) = self.wg_extent;
        if !(lo > 0.0 && lo <= hi && hi <= 0.45) {
            return Err(Error::InvalidArgument(format!("wg_extent {:?} must satisfy 0 < lo <= hi <= 0.45", self.wg_extent)));
        }
        let mut tags: Vec<&str> = self.profiles.iter().map(|p| p.tag.as_str()).collect();
        tags.sort_unstable();
        tags.dedup();
        if tags.len() != self.profiles.len() {
            return Err(Error::InvalidArgument("profile tags must be unique".into()));
        }
        self.profiles.iter().try_for_each(InstitutionProfile::validate)
    }
}

/// Per-patient anatomy; slices scale it along the apex-base axis.
struct Anatomy {
    center: (f64, f64),
    semi_axes: (f64, f64),
    angle: f64,
    cg_ratio: f64,
    /// Anterior CG shift as a fraction of the largest containment-safe shift.
    shift: f64,
}

/// One dataset per profile, patients `P001`, `P002`, ... Pure in the config.
pub fn generate_phantoms(config: &PhantomConfig) -> Result<Vec<Dataset>> {
    config.validate()?;
    Ok(config
        .profiles
        .iter()
        .map(|profile| {
            let patients = (0..config.patients_per_set)
                .into_par_iter()
                .map(|p| generate_patient(config, profile, p))
                .collect();
            Dataset {
                descriptor: DatasetDescriptor {
                    tag: profile.tag.clone(),
                    patient_count: config.patients_per_set,
                    canvas: profile.canvas,
                    spacing_mm: profile.spacing_mm,
                    profile: Some(profile.clone()),
                },
                patients,
            }
        })
        .collect())
}

fn generate_patient(config: &PhantomConfig, profile: &InstitutionProfile, index: usize) -> PatientCase {
    let id = format!("P{:03}", index + 1);
    let seed = config.seed ^ fnv1a(format!("{}/{}", profile.tag, id).as_bytes());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (profile.canvas.0 as f64, profile.canvas.1 as f64);
    let frame = h.min(w);
    let (elo, ehi) = config.wg_extent;
    let anatomy = Anatomy {
        center: (h / 2.0 + rng.random_range(-0.04..=0.04) * h, w / 2.0 + rng.random_range(-0.04..=0.04) * w),
        semi_axes: (rng.random_range(elo..=ehi) * frame * 0.85, rng.random_range(elo..=ehi) * frame),
        angle: rng.random_range(-0.25..=0.25),
        cg_ratio: rng.random_range(config.cg_ratio.0..=config.cg_ratio.1),
        shift: rng.random_range(0.3..=0.9),
    };
    let n = config.slices_per_patient;
    let slices = (0..n)
        .map(|k| {
            let t = (k as f64 + 0.5) / n as f64;
            let scale = 0.65 + 0.35 * (std::f64::consts::PI * t).sin();
            render_slice(profile, &anatomy, scale, k, &mut rng)
        })
        .collect();
    PatientCase {
        id,
        slices,
        source: profile.tag.clone(),
    }
}

fn render_slice(profile: &InstitutionProfile, a: &Anatomy, scale: f64, index: usize, rng: &mut ChaCha8Rng) -> SliceRecord {
    let (h, w) = profile.canvas;
    let (sa, sb) = (a.semi_axes.0 * scale, a.semi_axes.1 * scale);
    let (cos, sin) = (a.angle.cos(), a.angle.sin());
    // CG offset toward row 0 (anterior) in the gland frame.
    let dy = a.shift * (1.0 - a.cg_ratio) * sa;
    let local = |r: usize, c: usize| {
        let y = r as f64 + 0.5 - a.center.0;
        let x = c as f64 + 0.5 - a.center.1;
        (cos * y - sin * x, sin * y + cos * x)
    };
    let wg = BinaryMask::from_fn(h, w, Provenance::Truth, |r, c| {
        let (y, x) = local(r, c);
        (y / sa).powi(2) + (x / sb).powi(2) <= 1.0
    });
    let cg = BinaryMask::from_fn(h, w, Provenance::Truth, |r, c| {
        let (y, x) = local(r, c);
        ((y + dy) / (a.cg_ratio * sa)).powi(2) + (x / (a.cg_ratio * sb)).powi(2) <= 1.0
    })
    .and(&wg);
    let image = Raster::from_fn(h, w, |r, c| {
        let base = if cg.get(r, c) {
            profile.cg_intensity
        } else if wg.get(r, c) {
            profile.pz_intensity
        } else {
            profile.background
        };
        let ramp = 1.0 + profile.bias_strength * ((c as f64 + 0.5) / w as f64 - 0.5);
        let noise: f64 = StandardNormal.sample(rng);
        quantize(base * ramp + profile.noise_sigma * noise)
    });
    let slice = SliceRecord {
        image,
        wg,
        cg,
        spacing_mm: profile.spacing_mm,
        index,
    };
    debug_assert!(slice.validate().is_ok());
    slice
}

/// Clamps to `[0, 1]` and snaps to the 16-bit grid used on disk.
pub(crate) fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 65535.0).round() / 65535.0
}
