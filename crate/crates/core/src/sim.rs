//! Synthetic scenes: road users with class-dependent extent, reflection
//! count, RCS and micro-Doppler profile, plus moving clutter and static
//! reflectors, rendered into a target list and a log-compressed cube.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal, Poisson};
use serde::{Deserialize, Serialize};

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::DatasetWriter;
use crate::model::derive_seed;
use crate::preprocess::compensate_ego_motion;
use crate::types::{Annotation, CubeGeometry, Frame, RadarCube, RadarTarget, RoadClass};

const MAX_PLACEMENT_ATTEMPTS: usize = 200;
/// Compensated speed magnitude every annotated reflection is kept above.
const MIN_DYNAMIC_SPEED: f64 = 0.35;
const CAR_SIGMA: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub geometry: CubeGeometry,
    /// Road users per frame, drawn uniformly from `objects_min..=objects_max`.
    pub objects_min: usize,
    pub objects_max: usize,
    /// Pedestrian, cyclist and car proportions of annotated instances.
    /// Members of a pedestrian group count individually.
    pub class_mix: [f64; 3],
    /// Mean reflections per instance for pedestrian, cyclist and car.
    pub reflections_mean: [f64; 3],
    /// Poisson mean of unannotated moving clutter targets per frame.
    pub clutter_mean: f64,
    /// Poisson mean of static reflectors per frame.
    pub static_mean: f64,
    pub ego_speed_min_mps: f64,
    pub ego_speed_max_mps: f64,
    pub noise_floor: f64,
    /// 0 keeps the class micro-Doppler profiles apart; 1 collapses all of
    /// them onto the narrow car profile.
    pub signature_overlap: f64,
    /// Probability that a drawn pedestrian walks in a group.
    pub pedestrian_group_probability: f64,
    pub pedestrian_group_size: [usize; 2],
    pub pedestrian_group_spacing_m: f64,
    pub min_object_separation_m: f64,
    pub placement_range_m: [f64; 2],
    pub placement_azimuth_rad: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::separable(0)
    }
}

impl SimConfig {
    pub fn default_geometry() -> CubeGeometry {
        CubeGeometry::new(50, 24, 64, 0.5, 0.05, 0.25, 0.0, -0.6)
    }

    /// About one isolated road user per frame with distinct signatures.
    pub fn separable(seed: u64) -> Self {
        Self {
            seed,
            geometry: Self::default_geometry(),
            objects_min: 0,
            objects_max: 2,
            class_mix: [0.4, 0.3, 0.3],
            reflections_mean: [2.04, 3.0, 3.3],
            clutter_mean: 0.5,
            static_mean: 2.0,
            ego_speed_min_mps: 0.0,
            ego_speed_max_mps: 3.0,
            noise_floor: 1.0,
            signature_overlap: 0.0,
            pedestrian_group_probability: 0.0,
            pedestrian_group_size: [2, 3],
            pedestrian_group_spacing_m: 1.0,
            min_object_separation_m: 4.0,
            placement_range_m: [3.0, 22.0],
            placement_azimuth_rad: 0.5,
        }
    }

    /// Crowded scenes: pedestrians walking in groups about a meter apart
    /// and cars with many reflections.
    pub fn hard(seed: u64) -> Self {
        Self {
            objects_min: 2,
            objects_max: 4,
            class_mix: [0.5, 0.2, 0.3],
            reflections_mean: [2.04, 3.0, 6.0],
            signature_overlap: 0.15,
            pedestrian_group_probability: 0.7,
            pedestrian_group_size: [2, 3],
            pedestrian_group_spacing_m: 1.0,
            ..Self::separable(seed)
        }
    }

    /// Per-draw class weights; a pedestrian draw yields a whole group on
    /// average, so its weight shrinks by the expected group size.
    fn draw_weights(&self) -> [f64; 3] {
        let [lo, hi] = self.pedestrian_group_size;
        let mean_group = (lo + hi) as f64 / 2.0;
        let per_draw = 1.0 + self.pedestrian_group_probability * (mean_group - 1.0);
        let [p, c, v] = self.class_mix;
        [p / per_draw, c, v]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let issues = self.geometry.validate();
        if !issues.is_empty() {
            return Err(Error::Config(issues.join("; ")));
        }
        if self.objects_min > self.objects_max {
            return bad("objects_min exceeds objects_max");
        }
        if self.class_mix.iter().any(|&p| !(p >= 0.0)) || self.class_mix.iter().sum::<f64>() <= 0.0 {
            return bad("class_mix must be non-negative with a positive sum");
        }
        if self.reflections_mean.iter().any(|&m| !(m >= 1.0)) {
            return bad("reflections_mean must be at least 1");
        }
        if !(self.clutter_mean >= 0.0 && self.static_mean >= 0.0) {
            return bad("clutter and static means must be non-negative");
        }
        if !(0.0 <= self.ego_speed_min_mps && self.ego_speed_min_mps <= self.ego_speed_max_mps) {
            return bad("ego speed range must satisfy 0 <= min <= max");
        }
        if !(self.noise_floor > 0.0) {
            return bad("noise_floor must be positive");
        }
        if !(0.0..=1.0).contains(&self.signature_overlap) {
            return bad("signature_overlap must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.pedestrian_group_probability) {
            return bad("pedestrian_group_probability must be in [0, 1]");
        }
        let [gmin, gmax] = self.pedestrian_group_size;
        if gmin < 1 || gmin > gmax {
            return bad("pedestrian_group_size must be 1 <= min <= max");
        }
        let [rlo, rhi] = self.placement_range_m;
        if !(self.geometry.range_min_m < rlo && rlo < rhi && rhi < self.geometry.range_max_m()) {
            return bad("placement_range_m must lie inside the cube's range extent");
        }
        if !(self.placement_azimuth_rad > 0.0
            && -self.placement_azimuth_rad > self.geometry.azimuth_min_rad
            && self.placement_azimuth_rad < self.geometry.azimuth_max_rad())
        {
            return bad("placement_azimuth_rad must lie inside the cube's azimuth extent");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Ground truth of one generated road user.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub class_label: RoadClass,
    pub center_xy_m: [f64; 2],
    pub velocity_xy_mps: [f64; 2],
    /// Length along the heading and width across it.
    pub extent_m: [f64; 2],
    pub micro_doppler_sigma_mps: f64,
    pub rcs_mean_dbsm: f64,
    /// Indices of its reflections in the frame's target list.
    pub target_indices: Vec<usize>,
}

impl SceneObject {
    pub fn speed_mps(&self) -> f64 {
        self.velocity_xy_mps[0].hypot(self.velocity_xy_mps[1])
    }

    /// Compensated radial speed of the bulk motion seen at the center.
    pub fn bulk_radial_mps(&self) -> f64 {
        let az = self.center_xy_m[1].atan2(self.center_xy_m[0]);
        self.velocity_xy_mps[0] * az.cos() + self.velocity_xy_mps[1] * az.sin()
    }
}

/// One Gaussian lobe of a Doppler profile, relative to the bulk speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DopplerLobe {
    pub offset_mps: f64,
    pub sigma_mps: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy)]
struct ClassModel {
    extent_m: [f64; 2],
    speed_mps: [f64; 2],
    rcs_dbsm: (f64, f64),
    /// Spread of the reflections' radial speed around the bulk speed.
    sigma_mps: f64,
}

fn class_model(class: RoadClass) -> ClassModel {
    match class {
        RoadClass::Pedestrian => ClassModel {
            extent_m: [0.5, 0.5],
            speed_mps: [0.7, 2.0],
            rcs_dbsm: (-6.0, 3.0),
            sigma_mps: 0.4,
        },
        RoadClass::Cyclist => ClassModel {
            extent_m: [1.8, 0.6],
            speed_mps: [2.0, 6.0],
            rcs_dbsm: (-2.0, 3.0),
            sigma_mps: 0.3,
        },
        RoadClass::Car => ClassModel {
            extent_m: [4.5, 1.8],
            speed_mps: [2.0, 8.0],
            rcs_dbsm: (6.0, 4.0),
            sigma_mps: 0.1,
        },
        RoadClass::Other => ClassModel {
            extent_m: [0.3, 0.3],
            speed_mps: [0.4, 5.0],
            rcs_dbsm: (-4.0, 5.0),
            sigma_mps: 0.0,
        },
    }
}

/// Doppler profile of a road user moving at `speed`: pedestrians show a
/// torso lobe with limb lobes on both sides, cyclists a frame lobe on a
/// wide wheel skirt, cars a single narrow lobe. `overlap` pulls every
/// profile towards the car's.
pub fn doppler_profile(class: RoadClass, speed_mps: f64, overlap: f64) -> Vec<DopplerLobe> {
    let keep = 1.0 - overlap;
    let lobe = |offset: f64, sigma: f64, weight: f64| DopplerLobe {
        offset_mps: offset * keep,
        sigma_mps: CAR_SIGMA + (sigma - CAR_SIGMA) * keep,
        weight,
    };
    match class {
        RoadClass::Pedestrian => vec![
            lobe(0.0, 0.25, 1.0),
            lobe(0.8 * speed_mps + 0.3, 0.4, 0.6),
            lobe(-0.6 * speed_mps - 0.3, 0.4, 0.6),
        ],
        RoadClass::Cyclist => vec![lobe(0.0, 0.2, 1.0), lobe(0.0, 0.3 + 0.15 * speed_mps, 0.5)],
        RoadClass::Car => vec![lobe(0.0, CAR_SIGMA, 1.0)],
        RoadClass::Other => vec![lobe(0.0, 1.0, 0.5)],
    }
}

const STATIC_PROFILE: [DopplerLobe; 1] = [DopplerLobe {
    offset_mps: 0.0,
    sigma_mps: 0.12,
    weight: 1.0,
}];

struct Scene {
    ego: f64,
    targets: Vec<RadarTarget>,
    annotations: Vec<Annotation>,
    objects: Vec<SceneObject>,
    power: Vec<f64>,
}

impl Scene {
    fn inside(g: &CubeGeometry, t: &RadarTarget) -> bool {
        let margin = g.doppler_res_mps;
        t.range_m > g.range_min_m
            && t.range_m < g.range_max_m()
            && t.azimuth_rad >= g.azimuth_min_rad
            && t.azimuth_rad < g.azimuth_max_rad()
            && t.v_r_mps >= g.doppler_min_mps + margin
            && t.v_r_mps < g.doppler_max_mps() - margin
    }

    /// Adds one reflector's power around its cell, spread over Doppler
    /// by `profile` centred on the measured speed `center_v`.
    fn deposit(&mut self, g: &CubeGeometry, t: &RadarTarget, center_v: f64, profile: &[DopplerLobe]) {
        let snr_db = t.rcs_dbsm + 20.0 - 20.0 * (t.range_m.max(1.0) / 10.0).log10();
        let peak = 10f64.powf(snr_db / 10.0);
        let ir = ((t.range_m - g.range_min_m) / g.range_res_m).floor() as isize;
        let ia = ((t.azimuth_rad - g.azimuth_min_rad) / g.azimuth_res_rad).floor() as isize;
        let column: Vec<f64> = (0..g.n_doppler)
            .map(|d| {
                let v = g.doppler_min_mps + (d as f64 + 0.5) * g.doppler_res_mps;
                profile
                    .iter()
                    .map(|l| {
                        let z = (v - center_v - l.offset_mps) / l.sigma_mps;
                        l.weight * (-0.5 * z * z).exp()
                    })
                    .sum::<f64>()
            })
            .collect();
        const SPREAD: [f64; 3] = [0.3, 1.0, 0.3];
        for (dr, wr) in SPREAD.iter().enumerate() {
            let r = ir + dr as isize - 1;
            if r < 0 || r >= g.n_range as isize {
                continue;
            }
            for (da, wa) in SPREAD.iter().enumerate() {
                let a = ia + da as isize - 1;
                if a < 0 || a >= g.n_azimuth as isize {
                    continue;
                }
                let start = g.offset(r as usize, a as usize, 0);
                let w = peak * wr * wa;
                for (p, c) in self.power[start..start + g.n_doppler].iter_mut().zip(&column) {
                    *p += w * c;
                }
            }
        }
    }
}

fn pick_class<R: Rng>(mix: &[f64; 3], rng: &mut R) -> RoadClass {
    let total: f64 = mix.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &p) in mix.iter().enumerate() {
        if u < p {
            return RoadClass::ROAD_USERS[i];
        }
        u -= p;
    }
    RoadClass::Car
}

fn poisson<R: Rng>(mean: f64, rng: &mut R) -> usize {
    if mean <= 0.0 {
        0
    } else {
        Poisson::new(mean).expect("positive mean").sample(rng) as usize
    }
}

fn target_at(xy: [f64; 2], v_comp: f64, ego: f64, rcs: f64) -> RadarTarget {
    let az = xy[1].atan2(xy[0]);
    let mut t = RadarTarget::new(xy[0].hypot(xy[1]), az, 0.0, rcs);
    t.v_r_mps = v_comp - ego * az.cos();
    t
}

/// Tries to place one road user (or a walking group) and append its
/// reflections. Returns false when the draw does not fit.
fn try_place<R: Rng>(cfg: &SimConfig, scene: &mut Scene, class: RoadClass, group: usize, rng: &mut R) -> bool {
    let g = &cfg.geometry;
    let model = class_model(class);
    let r = rng.random_range(cfg.placement_range_m[0]..cfg.placement_range_m[1]);
    let az = rng.random_range(-cfg.placement_azimuth_rad..cfg.placement_azimuth_rad);
    let center = [r * az.cos(), r * az.sin()];
    let speed = rng.random_range(model.speed_mps[0]..model.speed_mps[1]);
    let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let velocity = [speed * heading.cos(), speed * heading.sin()];
    let bulk_radial = velocity[0] * az.cos() + velocity[1] * az.sin();
    if bulk_radial.abs() < 2.0 * MIN_DYNAMIC_SPEED {
        return false;
    }
    // walking groups line up across the direction of travel
    let across = [-heading.sin(), heading.cos()];
    let centers: Vec<[f64; 2]> = (0..group)
        .map(|k| {
            let s = if k == 0 {
                0.0
            } else {
                k as f64 * cfg.pedestrian_group_spacing_m * rng.random_range(0.9..1.1)
            };
            [center[0] + s * across[0], center[1] + s * across[1]]
        })
        .collect();
    for c in &centers {
        for o in &scene.objects {
            let d = (c[0] - o.center_xy_m[0]).hypot(c[1] - o.center_xy_m[1]);
            if d < cfg.min_object_separation_m {
                return false;
            }
        }
    }

    let rcs_dist = Normal::new(model.rcs_dbsm.0, model.rcs_dbsm.1).expect("valid std");
    let v_noise = Normal::new(0.0, model.sigma_mps).expect("valid std");
    let mean_extra = cfg.reflections_mean[class.index()] - 1.0;
    let profile = doppler_profile(class, speed, cfg.signature_overlap);
    let mut placed: Vec<(SceneObject, Vec<RadarTarget>, f64)> = Vec::with_capacity(group);
    for c in &centers {
        let n = 1 + poisson(mean_extra, rng);
        let rcs_mean = rcs_dist.sample(rng);
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            let (u, w) = if class == RoadClass::Pedestrian {
                // uniform over a disc of the pedestrian's footprint
                let rho = 0.5 * model.extent_m[0] * rng.random::<f64>().sqrt();
                let phi = rng.random_range(0.0..std::f64::consts::TAU);
                (rho * phi.cos(), rho * phi.sin())
            } else {
                (
                    rng.random_range(-0.5..0.5) * model.extent_m[0],
                    rng.random_range(-0.5..0.5) * model.extent_m[1],
                )
            };
            let p = [
                c[0] + u * heading.cos() - w * heading.sin(),
                c[1] + u * heading.sin() + w * heading.cos(),
            ];
            let paz = p[1].atan2(p[0]);
            let radial = velocity[0] * paz.cos() + velocity[1] * paz.sin();
            let mut v_comp = radial + v_noise.sample(rng);
            let mut tries = 0;
            while v_comp.abs() < MIN_DYNAMIC_SPEED && tries < 20 {
                v_comp = radial + v_noise.sample(rng);
                tries += 1;
            }
            let t = target_at(p, v_comp, scene.ego, rcs_mean + rng.random_range(-1.0..1.0));
            if v_comp.abs() < MIN_DYNAMIC_SPEED || !Scene::inside(g, &t) {
                return false;
            }
            targets.push(t);
        }
        let caz = c[1].atan2(c[0]);
        let center_v = bulk_radial_at(velocity, caz) - scene.ego * caz.cos();
        if !(center_v - 4.0 > g.doppler_min_mps && center_v + 4.0 < g.doppler_max_mps()) {
            return false;
        }
        let object = SceneObject {
            class_label: class,
            center_xy_m: *c,
            velocity_xy_mps: velocity,
            extent_m: model.extent_m,
            micro_doppler_sigma_mps: model.sigma_mps,
            rcs_mean_dbsm: rcs_mean,
            target_indices: Vec::new(),
        };
        placed.push((object, targets, center_v));
    }

    for (mut object, targets, center_v) in placed {
        let start = scene.targets.len();
        for t in &targets {
            scene.deposit(g, t, center_v, &profile);
        }
        scene.targets.extend(targets);
        object.target_indices = (start..scene.targets.len()).collect();
        scene.annotations.push(Annotation {
            object_id: scene.annotations.len() as u64,
            class_label: class,
            target_indices: object.target_indices.clone(),
        });
        scene.objects.push(object);
    }
    true
}

fn bulk_radial_at(velocity: [f64; 2], az: f64) -> f64 {
    velocity[0] * az.cos() + velocity[1] * az.sin()
}

/// Unannotated single reflectors: moving clutter when `moving`, static
/// world points otherwise.
fn add_loose_target<R: Rng>(cfg: &SimConfig, scene: &mut Scene, moving: bool, rng: &mut R) -> bool {
    let g = &cfg.geometry;
    let r = rng.random_range(cfg.placement_range_m[0]..cfg.placement_range_m[1]);
    let az = rng.random_range(-cfg.placement_azimuth_rad..cfg.placement_azimuth_rad);
    let model = class_model(RoadClass::Other);
    let (v_comp, rcs) = if moving {
        let s = rng.random_range(model.speed_mps[0]..model.speed_mps[1]);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        (
            sign * s,
            Normal::new(model.rcs_dbsm.0, model.rcs_dbsm.1)
                .expect("std")
                .sample(rng),
        )
    } else {
        (rng.random_range(-0.1..0.1), rng.random_range(-5.0..10.0))
    };
    let t = target_at([r * az.cos(), r * az.sin()], v_comp, scene.ego, rcs);
    if !Scene::inside(g, &t) {
        return false;
    }
    let profile = if moving {
        doppler_profile(RoadClass::Other, 0.0, cfg.signature_overlap)
    } else {
        STATIC_PROFILE.to_vec()
    };
    scene.deposit(g, &t, t.v_r_mps, &profile);
    scene.targets.push(t);
    true
}

/// Generates frame `frame_id` from its own seed stream, so frames can be
/// produced independently and in any order.
pub fn generate_frame(cfg: &SimConfig, frame_id: u64) -> Result<Frame> {
    generate_scene(cfg, frame_id).map(|(f, _)| f)
}

/// The frame together with the ground truth of its road users.
pub fn generate_scene(cfg: &SimConfig, frame_id: u64) -> Result<(Frame, Vec<SceneObject>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, frame_id));
    let g = cfg.geometry;
    let ego = if cfg.ego_speed_max_mps > cfg.ego_speed_min_mps {
        rng.random_range(cfg.ego_speed_min_mps..cfg.ego_speed_max_mps)
    } else {
        cfg.ego_speed_min_mps
    };
    let mut scene = Scene {
        ego,
        targets: Vec::new(),
        annotations: Vec::new(),
        objects: Vec::new(),
        power: vec![0.0; g.cell_count()],
    };

    let n_objects = rng.random_range(cfg.objects_min..=cfg.objects_max);
    let draw_weights = cfg.draw_weights();
    for _ in 0..n_objects {
        let class = pick_class(&draw_weights, &mut rng);
        let group = if class == RoadClass::Pedestrian && rng.random::<f64>() < cfg.pedestrian_group_probability {
            rng.random_range(cfg.pedestrian_group_size[0]..=cfg.pedestrian_group_size[1])
        } else {
            1
        };
        let mut attempt = 0;
        while !try_place(cfg, &mut scene, class, group, &mut rng) {
            attempt += 1;
            if attempt >= MAX_PLACEMENT_ATTEMPTS {
                return Err(Error::PlacementFailed(MAX_PLACEMENT_ATTEMPTS));
            }
        }
    }
    for moving in [true, false] {
        let n = poisson(if moving { cfg.clutter_mean } else { cfg.static_mean }, &mut rng);
        for _ in 0..n {
            let mut attempt = 0;
            while !add_loose_target(cfg, &mut scene, moving, &mut rng) {
                attempt += 1;
                if attempt >= MAX_PLACEMENT_ATTEMPTS {
                    return Err(Error::PlacementFailed(MAX_PLACEMENT_ATTEMPTS));
                }
            }
        }
    }

    let mut cube = RadarCube::zeros(g);
    for (v, p) in cube.values.iter_mut().zip(&scene.power) {
        let noise: f64 = Exp1.sample(&mut rng);
        *v = (1.0 + p / cfg.noise_floor + noise).ln() as f32;
    }
    let frame = Frame {
        frame_id,
        ego_speed_mps: ego,
        targets: scene.targets,
        cube,
        annotations: scene.annotations,
    };
    Ok((frame, scene.objects))
}

/// Frames `0..n` in order.
pub fn generate_frames(cfg: &SimConfig, n: usize) -> impl Iterator<Item = Result<Frame>> + '_ {
    (0..n as u64).map(move |i| generate_frame(cfg, i))
}

/// Per-class counts over a generated dataset, in class index order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DatasetSummary {
    pub n_frames: u64,
    pub objects: [u64; 4],
    pub targets: [u64; 4],
}

impl DatasetSummary {
    pub fn add(&mut self, frame: &Frame) {
        self.n_frames += 1;
        for a in &frame.annotations {
            self.objects[a.class_label.index()] += 1;
        }
        for l in frame.target_labels() {
            self.targets[l.index()] += 1;
        }
    }
}

/// Simulates frames `0..n` into a dataset directory. Frames are generated
/// in parallel and written in order.
pub fn generate_dataset(cfg: &SimConfig, n: usize, dir: &Path) -> Result<DatasetSummary> {
    cfg.validate()?;
    let mut writer = DatasetWriter::create(dir, cfg.geometry, None)?;
    let mut summary = DatasetSummary::default();
    let ids: Vec<u64> = (0..n as u64).collect();
    for chunk in ids.chunks(64) {
        let frames = chunk
            .par_iter()
            .map(|&i| generate_frame(cfg, i))
            .collect::<Result<Vec<_>>>()?;
        for f in &frames {
            writer.push(f)?;
            summary.add(f);
        }
    }
    writer.finish()?;
    Ok(summary)
}

/// Whether a generated reflection of an annotated object is dynamic at the
/// frame's ego speed.
pub fn is_dynamic(frame: &Frame, index: usize, threshold: f64) -> bool {
    compensate_ego_motion(&frame.targets[index], frame.ego_speed_mps).abs() >= threshold
}
