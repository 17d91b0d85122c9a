//! From a raw frame to network-ready samples: ego-motion compensation,
//! static-target filtering, cube bin lookup, block cropping, normalization
//! and training-time augmentation.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::BlockShape;
use crate::types::{CubeGeometry, Frame, RadarCube, RadarTarget, RoadClass};

/// Compensated speeds below this magnitude are treated as static.
pub const STATIC_SPEED_THRESHOLD_MPS: f64 = 0.3;

/// Standard deviation of the augmentation noise on normalized `r` and `v_r`.
pub const FEATURE_NOISE_STD: f64 = 0.05;

pub const FEATURE_NAMES: [&str; 4] = ["range", "azimuth", "radial_velocity", "rcs"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutOfBounds {
    #[default]
    ZeroFill,
}

/// Size of the cube block cropped around each target, in bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropConfig {
    pub range: usize,
    pub azimuth: usize,
    pub doppler: usize,
    #[serde(default)]
    pub out_of_bounds: OutOfBounds,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            range: 5,
            azimuth: 5,
            doppler: 32,
            out_of_bounds: OutOfBounds::ZeroFill,
        }
    }
}

impl CropConfig {
    pub fn validate(&self) -> Result<()> {
        if self.range.is_multiple_of(2) || self.azimuth.is_multiple_of(2) {
            return Err(Error::Config("crop range and azimuth extents must be odd".into()));
        }
        if self.doppler == 0 || !self.doppler.is_multiple_of(2) {
            return Err(Error::Config("crop Doppler extent must be even".into()));
        }
        Ok(())
    }

    pub fn block_shape(&self) -> BlockShape {
        BlockShape {
            azimuth: self.azimuth,
            range: self.range,
            doppler: self.doppler,
        }
    }

    pub fn len(&self) -> usize {
        self.range * self.azimuth * self.doppler
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Radial speed with the ego vehicle's own motion removed. The sensor looks
/// along +x, so a stationary reflector at azimuth `a` is measured at
/// `-ego * cos(a)`.
pub fn compensate_ego_motion(target: &RadarTarget, ego_speed_mps: f64) -> f64 {
    target.v_r_mps + ego_speed_mps * target.azimuth_rad.cos()
}

/// Indices of targets whose compensated speed magnitude is at least
/// `threshold`.
pub fn filter_static(targets: &[RadarTarget], ego_speed_mps: f64, threshold: f64) -> Vec<usize> {
    targets
        .iter()
        .enumerate()
        .filter(|(_, t)| compensate_ego_motion(t, ego_speed_mps).abs() >= threshold)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BinIndex {
    pub range: usize,
    pub azimuth: usize,
    pub doppler: usize,
}

fn axis_bin(axis: &'static str, value: f64, min: f64, res: f64, n: usize) -> Result<usize> {
    let max = min + n as f64 * res;
    if !(value >= min && value < max) {
        return Err(Error::OutsideCube { axis, value });
    }
    Ok((((value - min) / res).floor() as usize).min(n - 1))
}

/// Cube cell of a target. Doppler uses the measured (uncompensated) radial
/// velocity because the cube is recorded relative to the sensor.
pub fn locate_bin(target: &RadarTarget, geometry: &CubeGeometry) -> Result<BinIndex> {
    Ok(BinIndex {
        range: axis_bin(
            "range",
            target.range_m,
            geometry.range_min_m,
            geometry.range_res_m,
            geometry.n_range,
        )?,
        azimuth: axis_bin(
            "azimuth",
            target.azimuth_rad,
            geometry.azimuth_min_rad,
            geometry.azimuth_res_rad,
            geometry.n_azimuth,
        )?,
        doppler: axis_bin(
            "doppler",
            target.v_r_mps,
            geometry.doppler_min_mps,
            geometry.doppler_res_mps,
            geometry.n_doppler,
        )?,
    })
}

/// A block of the cube around one cell, stored `[azimuth][range][doppler]`
/// to match the network's input layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CroppedBlock {
    pub shape: BlockShape,
    pub values: Vec<f32>,
}

impl CroppedBlock {
    #[inline]
    pub fn get(&self, azimuth: usize, range: usize, doppler: usize) -> f32 {
        self.values[(azimuth * self.shape.range + range) * self.shape.doppler + doppler]
    }

    /// Reverses the azimuth axis.
    pub fn mirrored(&self) -> CroppedBlock {
        let plane = self.shape.range * self.shape.doppler;
        let values = self.values.chunks_exact(plane).rev().flatten().copied().collect();
        CroppedBlock {
            shape: self.shape,
            values,
        }
    }
}

/// Crops the block centered on `center`. The block spans `extent / 2` bins
/// on either side for odd extents; for the even Doppler extent it spans
/// `extent / 2` bins below and `extent / 2 - 1` above. Cells outside the
/// cube are zero.
pub fn crop_block(cube: &RadarCube, center: BinIndex, config: &CropConfig) -> CroppedBlock {
    let g = &cube.geometry;
    let shape = config.block_shape();
    let mut values = vec![0.0f32; shape.len()];
    let r0 = center.range as isize - (config.range / 2) as isize;
    let a0 = center.azimuth as isize - (config.azimuth / 2) as isize;
    let d0 = center.doppler as isize - (config.doppler / 2) as isize;

    // Doppler overlap with the cube is the same for every row.
    let d_lo = (-d0).max(0) as usize;
    let d_hi = ((g.n_doppler as isize - d0).min(config.doppler as isize)).max(0) as usize;

    for ia in 0..config.azimuth {
        let a = a0 + ia as isize;
        if a < 0 || a >= g.n_azimuth as isize {
            continue;
        }
        for ir in 0..config.range {
            let r = r0 + ir as isize;
            if r < 0 || r >= g.n_range as isize || d_lo >= d_hi {
                continue;
            }
            let column = cube.doppler_column(r as usize, a as usize);
            let dst = (ia * config.range + ir) * config.doppler;
            let src_lo = (d0 + d_lo as isize) as usize;
            values[dst + d_lo..dst + d_hi].copy_from_slice(&column[src_lo..src_lo + (d_hi - d_lo)]);
        }
    }
    CroppedBlock { shape, values }
}

/// One dynamic target with its cropped block, in physical units.
///
/// `features` are `(range, azimuth, compensated radial speed, rcs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub frame_id: u64,
    pub target_index: usize,
    pub features: [f64; 4],
    pub block: CroppedBlock,
    pub label: RoadClass,
}

impl Sample {
    /// Mirrors the scene about the boresight: azimuth changes sign and the
    /// block's azimuth axis is reversed.
    pub fn mirrored(&self) -> Sample {
        let mut s = self.clone();
        s.features[1] = -s.features[1];
        s.block = self.block.mirrored();
        s
    }
}

/// Samples for every dynamic target of `frame`. Targets outside the cube
/// extent are reported as errors.
pub fn extract_samples(frame: &Frame, crop: &CropConfig, threshold: f64) -> Result<Vec<Sample>> {
    let labels = frame.target_labels();
    filter_static(&frame.targets, frame.ego_speed_mps, threshold)
        .into_iter()
        .map(|i| {
            let t = &frame.targets[i];
            let bin = locate_bin(t, &frame.cube.geometry)?;
            Ok(Sample {
                frame_id: frame.frame_id,
                target_index: i,
                features: [
                    t.range_m,
                    t.azimuth_rad,
                    compensate_ego_motion(t, frame.ego_speed_mps),
                    t.rcs_dbsm,
                ],
                block: crop_block(&frame.cube, bin, crop),
                label: labels[i],
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub feature_mean: [f64; 4],
    pub feature_std: [f64; 4],
    pub cube_mean: f64,
    pub cube_std: f64,
}

impl NormalizationStats {
    pub fn normalize_features(&self, raw: &[f64; 4]) -> [f64; 4] {
        std::array::from_fn(|i| (raw[i] - self.feature_mean[i]) / self.feature_std[i])
    }

    pub fn denormalize_features(&self, z: &[f64; 4]) -> [f64; 4] {
        std::array::from_fn(|i| z[i] * self.feature_std[i] + self.feature_mean[i])
    }

    pub fn normalize_block(&self, block: &[f32]) -> Vec<f32> {
        let mean = self.cube_mean as f32;
        let inv = (1.0 / self.cube_std) as f32;
        block.iter().map(|&v| (v - mean) * inv).collect()
    }

    pub fn denormalize_block(&self, block: &[f32]) -> Vec<f32> {
        let (mean, std) = (self.cube_mean as f32, self.cube_std as f32);
        block.iter().map(|&v| v * std + mean).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.feature_std.iter().enumerate() {
            if !(s.is_finite() && *s > 0.0) {
                return Err(Error::ZeroVariance(FEATURE_NAMES[i]));
            }
        }
        if !(self.cube_std.is_finite() && self.cube_std > 0.0) {
            return Err(Error::ZeroVariance("cube"));
        }
        Ok(())
    }
}

/// Streaming mean/variance with Chan's pairwise merge.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&mut self, other: Moments) {
        if other.n == 0.0 {
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n / n;
        self.m2 += other.m2 + d * d * self.n * other.n / n;
        self.n = n;
    }

    fn std(&self) -> f64 {
        (self.m2 / self.n).sqrt()
    }
}

/// Accumulates normalization statistics frame by frame.
#[derive(Debug, Clone, Default)]
pub struct NormalizationFit {
    features: [Moments; 4],
    cube: Moments,
}

impl NormalizationFit {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_features(&mut self, raw: &[f64; 4]) {
        for (m, &x) in self.features.iter_mut().zip(raw) {
            m.push(x);
        }
    }

    pub fn add_cube(&mut self, cube: &RadarCube) {
        let mut m = Moments::default();
        for &v in &cube.values {
            m.push(v as f64);
        }
        self.cube.merge(m);
    }

    pub fn add_frame(&mut self, frame: &Frame, threshold: f64) {
        for i in filter_static(&frame.targets, frame.ego_speed_mps, threshold) {
            let t = &frame.targets[i];
            self.add_features(&[
                t.range_m,
                t.azimuth_rad,
                compensate_ego_motion(t, frame.ego_speed_mps),
                t.rcs_dbsm,
            ]);
        }
        self.add_cube(&frame.cube);
    }

    pub fn finish(&self) -> Result<NormalizationStats> {
        let n = self.features[0].n as usize;
        if n < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: n });
        }
        let stats = NormalizationStats {
            feature_mean: std::array::from_fn(|i| self.features[i].mean),
            feature_std: std::array::from_fn(|i| self.features[i].std()),
            cube_mean: self.cube.mean,
            cube_std: self.cube.std(),
        };
        stats.validate()?;
        Ok(stats)
    }
}

/// Statistics of the dynamic targets' features and of all cube cells of
/// `frames`.
pub fn fit_normalization<'a>(
    frames: impl IntoIterator<Item = &'a Frame>,
    threshold: f64,
) -> Result<NormalizationStats> {
    let mut fit = NormalizationFit::new();
    for f in frames {
        fit.add_frame(f, threshold);
    }
    fit.finish()
}

/// Network-ready `(block, features)` in `f32`, normalized with `stats`.
pub fn apply_normalization(sample: &Sample, stats: &NormalizationStats) -> (Vec<f32>, [f32; 4]) {
    let z = stats.normalize_features(&sample.features);
    (stats.normalize_block(&sample.block.values), z.map(|v| v as f32))
}

/// The sample itself, its mirror image and a copy with N(0, 0.05^2) noise
/// added to the normalized range and radial speed. The noise is applied in
/// physical units scaled by the feature's standard deviation, which is the
/// same perturbation of the normalized value.
pub fn augment<R: Rng + ?Sized>(sample: &Sample, stats: &NormalizationStats, rng: &mut R) -> Vec<Sample> {
    let normal = Normal::new(0.0, FEATURE_NOISE_STD).expect("valid std");
    let mut noisy = sample.clone();
    for i in [0, 2] {
        noisy.features[i] += normal.sample(rng) * stats.feature_std[i];
    }
    vec![sample.clone(), sample.mirrored(), noisy]
}
