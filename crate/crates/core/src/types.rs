//! Domain types shared by every stage of the pipeline.
//!
//! Class indices are fixed as pedestrian = 0, cyclist = 1, car = 2,
//! other = 3 everywhere (checkpoints, score vectors, confusion matrices).

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub const NUM_CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoadClass {
    Pedestrian,
    Cyclist,
    Car,
    Other,
}

impl RoadClass {
    pub const ALL: [RoadClass; NUM_CLASSES] = [
        RoadClass::Pedestrian,
        RoadClass::Cyclist,
        RoadClass::Car,
        RoadClass::Other,
    ];

    /// The three classes that form object proposals.
    pub const ROAD_USERS: [RoadClass; 3] = [RoadClass::Pedestrian, RoadClass::Cyclist, RoadClass::Car];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<RoadClass> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            RoadClass::Pedestrian => "pedestrian",
            RoadClass::Cyclist => "cyclist",
            RoadClass::Car => "car",
            RoadClass::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<RoadClass> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

impl fmt::Display for RoadClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One processed radar reflection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarTarget {
    pub range_m: f64,
    pub azimuth_rad: f64,
    /// Radial velocity relative to the sensor, positive receding.
    pub v_r_mps: f64,
    pub rcs_dbsm: f64,
}

impl RadarTarget {
    pub fn new(range_m: f64, azimuth_rad: f64, v_r_mps: f64, rcs_dbsm: f64) -> Self {
        Self {
            range_m,
            azimuth_rad,
            v_r_mps,
            rcs_dbsm,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        polar_to_cartesian(self)
    }
}

/// Boresight is the +x axis; azimuth grows towards +y.
pub fn polar_to_cartesian(target: &RadarTarget) -> [f64; 2] {
    [
        target.range_m * target.azimuth_rad.cos(),
        target.range_m * target.azimuth_rad.sin(),
    ]
}

/// Bin layout of a range x azimuth x Doppler cube. Each axis is a set of
/// half-open bins `[min + i*res, min + (i+1)*res)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubeGeometry {
    pub n_range: usize,
    pub n_azimuth: usize,
    pub n_doppler: usize,
    pub range_res_m: f64,
    pub azimuth_res_rad: f64,
    pub doppler_res_mps: f64,
    pub range_min_m: f64,
    pub azimuth_min_rad: f64,
    pub doppler_min_mps: f64,
}

impl CubeGeometry {
    /// Geometry whose Doppler axis is symmetric around zero.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_range: usize,
        n_azimuth: usize,
        n_doppler: usize,
        range_res_m: f64,
        azimuth_res_rad: f64,
        doppler_res_mps: f64,
        range_min_m: f64,
        azimuth_min_rad: f64,
    ) -> Self {
        Self {
            n_range,
            n_azimuth,
            n_doppler,
            range_res_m,
            azimuth_res_rad,
            doppler_res_mps,
            range_min_m,
            azimuth_min_rad,
            doppler_min_mps: -((n_doppler / 2) as f64) * doppler_res_mps,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.n_range * self.n_azimuth * self.n_doppler
    }

    pub fn range_max_m(&self) -> f64 {
        self.range_min_m + self.n_range as f64 * self.range_res_m
    }

    pub fn azimuth_max_rad(&self) -> f64 {
        self.azimuth_min_rad + self.n_azimuth as f64 * self.azimuth_res_rad
    }

    pub fn doppler_max_mps(&self) -> f64 {
        self.doppler_min_mps + self.n_doppler as f64 * self.doppler_res_mps
    }

    /// Flat offset of `[range][azimuth][doppler]`.
    #[inline]
    pub fn offset(&self, i_range: usize, i_azimuth: usize, i_doppler: usize) -> usize {
        (i_range * self.n_azimuth + i_azimuth) * self.n_doppler + i_doppler
    }

    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if self.n_range == 0 || self.n_azimuth == 0 || self.n_doppler == 0 {
            issues.push("cube geometry has a zero bin count".to_string());
        }
        let resolutions = [self.range_res_m, self.azimuth_res_rad, self.doppler_res_mps];
        if resolutions.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            issues.push("cube geometry resolutions must be positive".to_string());
        }
        issues
    }

    /// Bit-exact comparison, used to check a model against a dataset.
    pub fn same_as(&self, other: &CubeGeometry) -> bool {
        self.n_range == other.n_range
            && self.n_azimuth == other.n_azimuth
            && self.n_doppler == other.n_doppler
            && self.range_res_m.to_bits() == other.range_res_m.to_bits()
            && self.azimuth_res_rad.to_bits() == other.azimuth_res_rad.to_bits()
            && self.doppler_res_mps.to_bits() == other.doppler_res_mps.to_bits()
            && self.range_min_m.to_bits() == other.range_min_m.to_bits()
            && self.azimuth_min_rad.to_bits() == other.azimuth_min_rad.to_bits()
            && self.doppler_min_mps.to_bits() == other.doppler_min_mps.to_bits()
    }
}

/// Dense reflectivity grid indexed `[range][azimuth][doppler]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarCube {
    pub geometry: CubeGeometry,
    pub values: Vec<f32>,
}

impl RadarCube {
    pub fn zeros(geometry: CubeGeometry) -> Self {
        Self {
            values: vec![0.0; geometry.cell_count()],
            geometry,
        }
    }

    #[inline]
    pub fn get(&self, i_range: usize, i_azimuth: usize, i_doppler: usize) -> f32 {
        self.values[self.geometry.offset(i_range, i_azimuth, i_doppler)]
    }

    /// The Doppler column at one range/azimuth cell.
    pub fn doppler_column(&self, i_range: usize, i_azimuth: usize) -> &[f32] {
        let start = self.geometry.offset(i_range, i_azimuth, 0);
        &self.values[start..start + self.geometry.n_doppler]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub object_id: u64,
    pub class_label: RoadClass,
    pub target_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub frame_id: u64,
    pub ego_speed_mps: f64,
    pub targets: Vec<RadarTarget>,
    pub cube: RadarCube,
    pub annotations: Vec<Annotation>,
}

impl Frame {
    /// Ground-truth class of every target; targets outside any annotation
    /// are `Other`.
    pub fn target_labels(&self) -> Vec<RoadClass> {
        let mut labels = vec![RoadClass::Other; self.targets.len()];
        for ann in &self.annotations {
            for &i in &ann.target_indices {
                if let Some(l) = labels.get_mut(i) {
                    *l = ann.class_label;
                }
            }
        }
        labels
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameIssue {
    InvalidGeometry(String),
    CubeLength { expected: usize, actual: usize },
    NonFiniteReflectivity { offset: usize },
    NegativeReflectivity { offset: usize },
    NegativeEgoSpeed,
    NonPositiveRange { target: usize },
    AzimuthOutsideExtent { target: usize },
    NonFiniteTarget { target: usize },
    EmptyAnnotation { object_id: u64 },
    IndexOutOfBounds { object_id: u64, index: usize },
    SharedTarget { index: usize },
}

impl fmt::Display for FrameIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameIssue::InvalidGeometry(msg) => write!(f, "invalid geometry: {msg}"),
            FrameIssue::CubeLength { expected, actual } => {
                write!(f, "cube has {actual} cells, expected {expected}")
            }
            FrameIssue::NonFiniteReflectivity { offset } => {
                write!(f, "non-finite reflectivity at cell {offset}")
            }
            FrameIssue::NegativeReflectivity { offset } => {
                write!(f, "negative reflectivity at cell {offset}")
            }
            FrameIssue::NegativeEgoSpeed => f.write_str("negative ego speed"),
            FrameIssue::NonPositiveRange { target } => {
                write!(f, "target {target}: range must be positive")
            }
            FrameIssue::AzimuthOutsideExtent { target } => {
                write!(f, "target {target}: azimuth outside the cube extent")
            }
            FrameIssue::NonFiniteTarget { target } => write!(f, "target {target}: non-finite field"),
            FrameIssue::EmptyAnnotation { object_id } => {
                write!(f, "annotation {object_id}: no target indices")
            }
            FrameIssue::IndexOutOfBounds { object_id, index } => {
                write!(f, "annotation {object_id}: target index {index} out of bounds")
            }
            FrameIssue::SharedTarget { index } => {
                write!(f, "target {index} belongs to more than one annotation")
            }
        }
    }
}

/// Reports every invariant violation in `frame`; an empty list means valid.
pub fn validate_frame(frame: &Frame) -> Vec<FrameIssue> {
    let mut issues = Vec::new();
    let geom = &frame.cube.geometry;
    issues.extend(geom.validate().into_iter().map(FrameIssue::InvalidGeometry));

    if frame.cube.values.len() != geom.cell_count() {
        issues.push(FrameIssue::CubeLength {
            expected: geom.cell_count(),
            actual: frame.cube.values.len(),
        });
    }
    for (offset, v) in frame.cube.values.iter().enumerate() {
        if !v.is_finite() {
            issues.push(FrameIssue::NonFiniteReflectivity { offset });
        } else if *v < 0.0 {
            issues.push(FrameIssue::NegativeReflectivity { offset });
        }
    }
    if !(frame.ego_speed_mps >= 0.0) {
        issues.push(FrameIssue::NegativeEgoSpeed);
    }

    for (i, t) in frame.targets.iter().enumerate() {
        if ![t.range_m, t.azimuth_rad, t.v_r_mps, t.rcs_dbsm]
            .iter()
            .all(|v| v.is_finite())
        {
            issues.push(FrameIssue::NonFiniteTarget { target: i });
            continue;
        }
        if t.range_m <= 0.0 {
            issues.push(FrameIssue::NonPositiveRange { target: i });
        }
        if t.azimuth_rad < geom.azimuth_min_rad || t.azimuth_rad >= geom.azimuth_max_rad() {
            issues.push(FrameIssue::AzimuthOutsideExtent { target: i });
        }
    }

    let mut seen = HashSet::new();
    for ann in &frame.annotations {
        if ann.target_indices.is_empty() {
            issues.push(FrameIssue::EmptyAnnotation {
                object_id: ann.object_id,
            });
        }
        for &index in &ann.target_indices {
            if index >= frame.targets.len() {
                issues.push(FrameIssue::IndexOutOfBounds {
                    object_id: ann.object_id,
                    index,
                });
            } else if !seen.insert(index) {
                issues.push(FrameIssue::SharedTarget { index });
            }
        }
    }
    issues
}

/// Per-class score vector in canonical class order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores(pub [f64; NUM_CLASSES]);

impl ClassScores {
    pub fn uniform() -> Self {
        ClassScores([1.0 / NUM_CLASSES as f64; NUM_CLASSES])
    }

    /// Scales to unit sum. An all-zero vector becomes uniform.
    pub fn normalized(self) -> Self {
        let sum: f64 = self.0.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Self::uniform();
        }
        let mut out = self.0;
        for v in &mut out {
            *v /= sum;
        }
        ClassScores(out)
    }

    /// Argmax, lowest index on ties.
    pub fn argmax(&self) -> RoadClass {
        let mut best = 0;
        for i in 1..NUM_CLASSES {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        RoadClass::ALL[best]
    }

    pub fn get(&self, class: RoadClass) -> f64 {
        self.0[class.index()]
    }

    pub fn distance(&self, other: &ClassScores) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifiedTarget {
    /// Index into the frame's full target list.
    pub index: usize,
    pub target: RadarTarget,
    pub predicted_class: RoadClass,
    pub scores: ClassScores,
    pub position_xy_m: [f64; 2],
    /// Ego-motion compensated radial speed, the velocity used for clustering.
    pub v_comp_mps: f64,
}

impl ClassifiedTarget {
    pub fn new(index: usize, target: RadarTarget, ego_speed_mps: f64, scores: ClassScores) -> Self {
        Self {
            index,
            target,
            predicted_class: scores.argmax(),
            scores,
            position_xy_m: polar_to_cartesian(&target),
            v_comp_mps: crate::preprocess::compensate_ego_motion(&target, ego_speed_mps),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectProposal {
    pub class_label: RoadClass,
    /// Indices into the frame's full target list, ascending.
    pub member_indices: Vec<usize>,
    pub mean_scores: ClassScores,
    pub centroid_xy_m: [f64; 2],
    /// Mean ego-motion compensated radial speed of the members.
    pub mean_v_r_mps: f64,
}
