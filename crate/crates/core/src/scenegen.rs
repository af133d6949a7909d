//! Statistical surrogate for a weather-model digital twin.
//!
//! Each image scatters storm cells as a Poisson process over a padded domain.
//! A pixel's ground-truth class is set by the distance to its nearest cell
//! center (concentric rings: core, anvil, cirrus, thin cirrus, else clear).
//! Science variables are drawn from the class's distribution and pushed
//! through a forward radiance model that depresses each band's clear-sky
//! brightness temperature in proportion to ln(1 + iwp).

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BandId, CloudClass5, PixelRecord, RadianceVector, Region, SceneGrid, ScienceVector, N_BANDS};
use crate::seed;

const TROPICAL_DEFAULT: &str = include_str!("../configs/scenegen_tropical.json");
const NONTROPICAL_DEFAULT: &str = include_str!("../configs/scenegen_nontropical.json");

/// Lower/upper clamp for generated brightness temperatures (K).
pub const TB_MIN: f64 = 100.0;
pub const TB_MAX: f64 = 350.0;

/// Particle size (µm) at which the size term of the radiance modifier is half saturated.
pub const SIZE_HALF_SATURATION: f64 = 100.0;
/// Cloud-top height (m) at which the height term of the radiance modifier is half saturated.
pub const HEIGHT_HALF_SATURATION: f64 = 10_000.0;

/// Slack between the analytic expected mix and `target_mix` accepted at validation.
/// Sampling noise on top of this stays inside the ±10 point realized-mix contract.
pub const MIX_VALIDATION_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StormRadii {
    pub core: f64,
    pub anvil: f64,
    pub cirrus: f64,
    pub thin_cirrus: f64,
}

impl StormRadii {
    fn as_array(&self) -> [f64; 4] {
        [self.core, self.anvil, self.cirrus, self.thin_cirrus]
    }
}

/// Log-normal distribution given by its median and the sd of the log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalParams {
    pub median: f64,
    pub log_sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalParams {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScienceParams {
    pub iwp: LogNormalParams,
    pub particle_size: LogNormalParams,
    pub cloud_top_height: NormalParams,
}

/// Science distributions for the four cloudy classes; clear sky is always zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScience {
    pub thin_cirrus: ClassScienceParams,
    pub cirrus: ClassScienceParams,
    pub rainy_anvil: ClassScienceParams,
    pub convection_core: ClassScienceParams,
}

impl ClassScience {
    pub fn get(&self, class: CloudClass5) -> Option<&ClassScienceParams> {
        match class {
            CloudClass5::ClearSky => None,
            CloudClass5::ThinCirrus => Some(&self.thin_cirrus),
            CloudClass5::Cirrus => Some(&self.cirrus),
            CloudClass5::RainyAnvil => Some(&self.rainy_anvil),
            CloudClass5::ConvectionCore => Some(&self.convection_core),
        }
    }

    fn in_order(&self) -> [&ClassScienceParams; 4] {
        [&self.thin_cirrus, &self.cirrus, &self.rainy_anvil, &self.convection_core]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGenConfig {
    pub region: Region,
    pub seed: u64,
    pub images: usize,
    pub height: usize,
    pub width: usize,
    pub pixel_size_km: f64,
    /// Poisson rate of storm cells per image (over the padded domain).
    pub cells_per_image_mean: f64,
    pub radii: StormRadii,
    pub class_science_params: ClassScience,
    pub separability: f64,
    pub band_gain: [f64; N_BANDS],
    pub clear_sky_tb: [f64; N_BANDS],
    /// Per-pixel, per-band i.i.d. nuisance sd (K).
    pub nuisance_sd: f64,
    /// Per-image offset shared by every pixel and band (K).
    #[serde(default = "default_shared_offset_sd")]
    pub shared_offset_sd: f64,
    pub target_mix: [f64; CloudClass5::COUNT],
}

fn default_shared_offset_sd() -> f64 {
    0.5
}

impl SceneGenConfig {
    pub fn tropical_default() -> Self {
        serde_json::from_str(TROPICAL_DEFAULT).expect("bundled tropical config parses")
    }

    /// Non-tropical defaults at full cutout geometry (29 × 1998×270).
    pub fn nontropical_default() -> Self {
        serde_json::from_str(NONTROPICAL_DEFAULT).expect("bundled non-tropical config parses")
    }

    pub fn default_for(region: Region) -> Self {
        match region {
            Region::Tropical => Self::tropical_default(),
            Region::NonTropical => Self::nontropical_default(),
        }
    }

    /// Same storm statistics on a smaller grid: the cell rate is rescaled so
    /// the cell intensity per padded pixel, and hence the expected class mix,
    /// is unchanged.
    pub fn cropped(&self, height: usize, width: usize) -> Self {
        let pad = 2.0 * self.radii.thin_cirrus;
        let old_area = (self.height as f64 + pad) * (self.width as f64 + pad);
        let new_area = (height as f64 + pad) * (width as f64 + pad);
        SceneGenConfig {
            height,
            width,
            cells_per_image_mean: self.cells_per_image_mean * new_area / old_area,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |msg: String| Err(Error::Config(msg));
        if self.images == 0 || self.height == 0 || self.width == 0 {
            return cfg_err("images, height and width must be positive".into());
        }
        if !(self.pixel_size_km > 0.0) {
            return cfg_err(format!("pixel_size_km must be positive, got {}", self.pixel_size_km));
        }
        if !(self.cells_per_image_mean >= 0.0) || !self.cells_per_image_mean.is_finite() {
            return cfg_err(format!("cells_per_image_mean must be finite and >= 0, got {}", self.cells_per_image_mean));
        }
        let r = self.radii.as_array();
        if !(r[0] > 0.0) || r.windows(2).any(|w| !(w[0] < w[1])) || !r[3].is_finite() {
            return cfg_err(format!(
                "storm radii must be positive and strictly increasing (core < anvil < cirrus < thin_cirrus), got {r:?}"
            ));
        }
        for (name, p) in ["thin_cirrus", "cirrus", "rainy_anvil", "convection_core"]
            .iter()
            .zip(self.class_science_params.in_order())
        {
            let ok = p.iwp.median > 0.0
                && p.iwp.log_sd >= 0.0
                && p.particle_size.median > 0.0
                && p.particle_size.log_sd >= 0.0
                && p.cloud_top_height.mean > 0.0
                && p.cloud_top_height.sd >= 0.0;
            if !ok {
                return cfg_err(format!("science parameters for {name} must be positive with nonnegative spreads"));
            }
        }
        let sci = self.class_science_params.in_order();
        for w in sci.windows(2) {
            if !(w[0].iwp.median < w[1].iwp.median)
                || !(w[0].particle_size.median < w[1].particle_size.median)
                || !(w[0].cloud_top_height.mean > w[1].cloud_top_height.mean)
            {
                return cfg_err(
                    "class science medians must have iwp and particle_size strictly increasing and \
                     cloud_top_height strictly decreasing from ThinCirrus to ConvectionCore"
                        .into(),
                );
            }
        }
        if !(self.separability > 0.0) || !self.separability.is_finite() {
            return cfg_err(format!("separability must be positive, got {}", self.separability));
        }
        if self.band_gain.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
            return cfg_err("band_gain entries must be finite and strictly positive".into());
        }
        let (tb380, other): (Vec<BandId>, Vec<BandId>) = BandId::ALL.iter().partition(|b| b.is_tb380());
        let min_380 = tb380.iter().map(|b| self.band_gain[b.ordinal()]).fold(f64::INFINITY, f64::min);
        let max_other = other.iter().map(|b| self.band_gain[b.ordinal()]).fold(f64::NEG_INFINITY, f64::max);
        if !(min_380 > max_other) {
            return cfg_err(format!(
                "every Tb380 band gain must exceed every other band gain (min Tb380 {min_380}, max other {max_other})"
            ));
        }
        if self.clear_sky_tb.iter().any(|t| !(TB_MIN..=TB_MAX).contains(t)) {
            return cfg_err(format!("clear_sky_tb entries must lie in [{TB_MIN}, {TB_MAX}] K"));
        }
        if !(self.nuisance_sd >= 0.0) || !(self.shared_offset_sd >= 0.0) {
            return cfg_err("nuisance_sd and shared_offset_sd must be nonnegative".into());
        }
        let sum: f64 = self.target_mix.iter().sum();
        if self.target_mix.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return cfg_err(format!("target_mix must be nonnegative and sum to 1, got {:?}", self.target_mix));
        }
        let expected = self.expected_mix();
        for (c, (e, t)) in CloudClass5::ALL.iter().zip(expected.iter().zip(&self.target_mix)) {
            if (e - t).abs() > MIX_VALIDATION_TOLERANCE {
                return cfg_err(format!(
                    "target_mix is unreachable with this storm geometry: {c} expected {e:.3}, target {t:.3} \
                     (expected mix {expected:.3?})"
                ));
            }
        }
        Ok(())
    }

    /// Expected class fractions implied by the cell rate and radii.
    ///
    /// Cell centers form a Poisson process on the grid padded by the outer
    /// radius, so for every pixel the nearest-center distance D satisfies
    /// P(D ≤ r) = 1 − exp(−λπr²) with λ the per-pixel² intensity.
    pub fn expected_mix(&self) -> [f64; CloudClass5::COUNT] {
        let pad = 2.0 * self.radii.thin_cirrus;
        let area = (self.height as f64 + pad) * (self.width as f64 + pad);
        let lambda = self.cells_per_image_mean / area;
        let cov = self.radii.as_array().map(|r| 1.0 - (-lambda * PI * r * r).exp());
        [1.0 - cov[3], cov[3] - cov[2], cov[2] - cov[1], cov[1] - cov[0], cov[0]]
    }
}

/// Positive, bounded modifier of the radiance depression; increasing in
/// particle size, mildly increasing in cloud-top height. Range [0.375, 1.5).
pub fn radiance_modifier(particle_size: f64, cloud_top_height: f64) -> f64 {
    let size = particle_size / (particle_size + SIZE_HALF_SATURATION);
    let height = cloud_top_height / (cloud_top_height + HEIGHT_HALF_SATURATION);
    (0.5 + size) * (0.75 + 0.25 * height)
}

/// Surrogate radiative transfer from science variables to brightness temperatures.
pub fn forward_radiance(science: &ScienceVector, cfg: &SceneGenConfig, nuisance: &[f64; N_BANDS]) -> RadianceVector {
    let depth = cfg.separability
        * science.iwp.ln_1p()
        * radiance_modifier(science.particle_size, science.cloud_top_height);
    let mut tb = [0.0; N_BANDS];
    for b in 0..N_BANDS {
        tb[b] = (cfg.clear_sky_tb[b] - cfg.band_gain[b] * depth + nuisance[b]).clamp(TB_MIN, TB_MAX);
    }
    RadianceVector(tb)
}

/// Ring membership for a nearest-center distance.
pub fn class_for_distance(distance: f64, radii: &StormRadii) -> CloudClass5 {
    if distance <= radii.core {
        CloudClass5::ConvectionCore
    } else if distance <= radii.anvil {
        CloudClass5::RainyAnvil
    } else if distance <= radii.cirrus {
        CloudClass5::Cirrus
    } else if distance <= radii.thin_cirrus {
        CloudClass5::ThinCirrus
    } else {
        CloudClass5::ClearSky
    }
}

pub fn sample_science(class: CloudClass5, params: &ClassScience, rng: &mut seed::Rng) -> ScienceVector {
    let Some(p) = params.get(class) else {
        return ScienceVector::ZERO;
    };
    let mut lognormal = |q: &LogNormalParams| {
        let z: f64 = StandardNormal.sample(rng);
        q.median * (q.log_sd * z).exp()
    };
    let iwp = lognormal(&p.iwp);
    let particle_size = lognormal(&p.particle_size);
    let z: f64 = StandardNormal.sample(rng);
    let cloud_top_height = (p.cloud_top_height.mean + p.cloud_top_height.sd * z).max(0.0);
    ScienceVector { iwp, particle_size, cloud_top_height }
}

/// Buckets cell centers on a square grid of side `radius` so that only the
/// 3×3 neighbourhood needs to be searched for centers within `radius`.
struct CenterIndex {
    radius: f64,
    origin: f64,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<(f64, f64)>>,
}

impl CenterIndex {
    fn new(centers: &[(f64, f64)], radius: f64, height: usize, width: usize) -> Self {
        let origin = -radius;
        let rows = ((height as f64 + 2.0 * radius) / radius).ceil() as usize + 1;
        let cols = ((width as f64 + 2.0 * radius) / radius).ceil() as usize + 1;
        let mut buckets = vec![Vec::new(); rows * cols];
        for &(y, x) in centers {
            let br = (((y - origin) / radius).floor() as usize).min(rows - 1);
            let bc = (((x - origin) / radius).floor() as usize).min(cols - 1);
            buckets[br * cols + bc].push((y, x));
        }
        CenterIndex { radius, origin, cols, rows, buckets }
    }

    /// Distance to the nearest center if it lies within `radius`.
    fn nearest_within(&self, y: f64, x: f64) -> Option<f64> {
        let br = ((y - self.origin) / self.radius).floor() as isize;
        let bc = ((x - self.origin) / self.radius).floor() as isize;
        let mut best = f64::INFINITY;
        for r in br - 1..=br + 1 {
            for c in bc - 1..=bc + 1 {
                if r < 0 || c < 0 || r as usize >= self.rows || c as usize >= self.cols {
                    continue;
                }
                for &(cy, cx) in &self.buckets[r as usize * self.cols + c as usize] {
                    best = best.min((cy - y).hypot(cx - x));
                }
            }
        }
        (best <= self.radius).then_some(best)
    }
}

/// Generate one image. Image ids are 1-based.
pub fn generate_image(cfg: &SceneGenConfig, image_id: u32) -> Result<SceneGrid> {
    let mut rng = seed::rng_for(cfg.seed, &[image_id as u64]);
    let outer = cfg.radii.thin_cirrus;
    let n_cells = if cfg.cells_per_image_mean > 0.0 {
        let poisson = Poisson::new(cfg.cells_per_image_mean).map_err(|e| Error::Config(e.to_string()))?;
        poisson.sample(&mut rng) as usize
    } else {
        0
    };
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let centers: Vec<(f64, f64)> = (0..n_cells)
        .map(|_| (rng.random_range(-outer..h + outer), rng.random_range(-outer..w + outer)))
        .collect();
    let index = CenterIndex::new(&centers, outer, cfg.height, cfg.width);
    let offset = if cfg.shared_offset_sd > 0.0 {
        Normal::new(0.0, cfg.shared_offset_sd).map_err(|e| Error::Config(e.to_string()))?.sample(&mut rng)
    } else {
        0.0
    };

    let mut pixels = Vec::with_capacity(cfg.height * cfg.width);
    for row in 0..cfg.height {
        for col in 0..cfg.width {
            let distance = index.nearest_within(row as f64 + 0.5, col as f64 + 0.5).unwrap_or(f64::INFINITY);
            let class = class_for_distance(distance, &cfg.radii);
            let science = sample_science(class, &cfg.class_science_params, &mut rng);
            let mut nuisance = [offset; N_BANDS];
            for v in nuisance.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += cfg.nuisance_sd * z;
            }
            pixels.push(PixelRecord {
                image_id,
                row: row as u32,
                col: col as u32,
                radiance: forward_radiance(&science, cfg, &nuisance),
                science: Some(science),
                label: Some(class),
            });
        }
    }
    SceneGrid::new(cfg.region, cfg.pixel_size_km, cfg.height, cfg.width, pixels)
}

/// Generate the full batch. Each image draws from its own sub-seed, so the
/// result does not depend on how images are scheduled.
pub fn generate_scenes(cfg: &SceneGenConfig) -> Result<Vec<SceneGrid>> {
    cfg.validate()?;
    (1..=cfg.images as u32).into_par_iter().map(|id| generate_image(cfg, id)).collect()
}

/// Realized ground-truth class fractions over a batch.
pub fn class_mix(scenes: &[SceneGrid]) -> [f64; CloudClass5::COUNT] {
    let mut counts = [0u64; CloudClass5::COUNT];
    let mut total = 0u64;
    for p in scenes.iter().flat_map(|s| &s.pixels) {
        if let Some(c) = p.label {
            counts[c.index()] += 1;
            total += 1;
        }
    }
    counts.map(|c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
}
