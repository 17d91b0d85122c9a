//! Class-specific DBSCAN over position and radial speed, and the merge
//! filter that folds small-class clusters into adjacent larger-class ones.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ClassScores, ClassifiedTarget, ObjectProposal, RoadClass, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassClusterParams {
    pub gamma_xy_m: f64,
    pub gamma_v_mps: f64,
    pub min_points: usize,
}

impl ClassClusterParams {
    pub const fn new(gamma_xy_m: f64, gamma_v_mps: f64, min_points: usize) -> Self {
        Self {
            gamma_xy_m,
            gamma_v_mps,
            min_points,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_xy_m > 0.0 && self.gamma_v_mps > 0.0) {
            return Err(Error::Config("cluster thresholds must be positive".into()));
        }
        if self.min_points == 0 {
            return Err(Error::Config("min_points must be at least 1".into()));
        }
        Ok(())
    }
}

/// One parameter set per road-user class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub pedestrian: ClassClusterParams,
    pub cyclist: ClassClusterParams,
    pub car: ClassClusterParams,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            pedestrian: ClassClusterParams::new(0.5, 2.0, 1),
            cyclist: ClassClusterParams::new(1.6, 1.5, 2),
            car: ClassClusterParams::new(4.0, 1.0, 3),
        }
    }
}

impl ClusterParams {
    pub const UNIVERSAL_DEFAULT: ClassClusterParams = ClassClusterParams::new(1.2, 1.3, 2);

    /// The same parameters for every class.
    pub fn universal(p: ClassClusterParams) -> Self {
        Self {
            pedestrian: p,
            cyclist: p,
            car: p,
        }
    }

    pub fn for_class(&self, class: RoadClass) -> Option<&ClassClusterParams> {
        match class {
            RoadClass::Pedestrian => Some(&self.pedestrian),
            RoadClass::Cyclist => Some(&self.cyclist),
            RoadClass::Car => Some(&self.car),
            RoadClass::Other => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pedestrian.validate()?;
        self.cyclist.validate()?;
        self.car.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeParams {
    pub spatial_m: f64,
    pub score_distance: f64,
    pub v_pedestrian_cyclist_mps: f64,
    /// Pedestrian-to-car and cyclist-to-car merges.
    pub v_to_car_mps: f64,
}

impl Default for MergeParams {
    fn default() -> Self {
        Self {
            spatial_m: 1.0,
            score_distance: 0.6,
            v_pedestrian_cyclist_mps: 2.0,
            v_to_car_mps: 1.2,
        }
    }
}

impl MergeParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.spatial_m,
            self.score_distance,
            self.v_pedestrian_cyclist_mps,
            self.v_to_car_mps,
        ];
        if all.iter().all(|&v| v > 0.0) {
            Ok(())
        } else {
            Err(Error::Config("merge thresholds must be positive".into()))
        }
    }
}

/// `(x, y, v_r)` neighborhood test: planar distance within `gamma_xy` and
/// speed difference within `gamma_v`, both inclusive.
#[inline]
pub fn are_neighbors(p: &[f64; 3], q: &[f64; 3], gamma_xy: f64, gamma_v: f64) -> bool {
    let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
    dx * dx + dy * dy <= gamma_xy * gamma_xy && (p[2] - q[2]).abs() <= gamma_v
}

/// DBSCAN with the point itself counted towards `min_points`. Clusters are
/// numbered in order of creation, which scans points by ascending index;
/// a border point reachable from several clusters stays with the first.
/// `None` marks noise.
pub fn dbscan(points: &[[f64; 3]], gamma_xy: f64, gamma_v: f64, min_points: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| are_neighbors(&points[i], &points[j], gamma_xy, gamma_v))
                .collect()
        })
        .collect();
    let is_core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_points).collect();

    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for seed in 0..n {
        if label[seed].is_some() || !is_core[seed] {
            continue;
        }
        label[seed] = Some(next);
        queue.push_back(seed);
        while let Some(p) = queue.pop_front() {
            for &q in &neighbors[p] {
                if label[q].is_none() {
                    label[q] = Some(next);
                    if is_core[q] {
                        queue.push_back(q);
                    }
                }
            }
        }
        next += 1;
    }
    label
}

fn proposal_from(class: RoadClass, members: &[&ClassifiedTarget]) -> ObjectProposal {
    let n = members.len() as f64;
    let mut scores = [0.0; NUM_CLASSES];
    let (mut x, mut y, mut v) = (0.0, 0.0, 0.0);
    for t in members {
        let s = t.scores.normalized();
        scores.iter_mut().zip(s.0).for_each(|(a, b)| *a += b);
        x += t.position_xy_m[0];
        y += t.position_xy_m[1];
        v += t.v_comp_mps;
    }
    let mut member_indices: Vec<usize> = members.iter().map(|t| t.index).collect();
    member_indices.sort_unstable();
    ObjectProposal {
        class_label: class,
        member_indices,
        mean_scores: ClassScores(scores.map(|s| s / n)).normalized(),
        centroid_xy_m: [x / n, y / n],
        mean_v_r_mps: v / n,
    }
}

/// Runs DBSCAN separately on the targets predicted as each road-user class.
/// Targets predicted "other" and noise points produce no proposals.
/// Proposals are ordered by class, then by cluster number.
pub fn cluster_by_class(targets: &[ClassifiedTarget], params: &ClusterParams) -> Vec<ObjectProposal> {
    let mut out = Vec::new();
    for class in RoadClass::ROAD_USERS {
        let p = params.for_class(class).expect("road-user class");
        let members: Vec<&ClassifiedTarget> = targets.iter().filter(|t| t.predicted_class == class).collect();
        let points: Vec<[f64; 3]> = members
            .iter()
            .map(|t| [t.position_xy_m[0], t.position_xy_m[1], t.v_comp_mps])
            .collect();
        let labels = dbscan(&points, p.gamma_xy_m, p.gamma_v_mps, p.min_points);
        let n_clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
        let mut groups: Vec<Vec<&ClassifiedTarget>> = vec![Vec::new(); n_clusters];
        for (t, l) in members.iter().zip(&labels) {
            if let Some(c) = l {
                groups[*c].push(t);
            }
        }
        out.extend(groups.iter().map(|g| proposal_from(class, g)));
    }
    out
}

fn absorb(into: &mut ObjectProposal, from: &ObjectProposal) {
    let (a, b) = (into.member_indices.len() as f64, from.member_indices.len() as f64);
    let mix = |x: f64, y: f64| (a * x + b * y) / (a + b);
    into.centroid_xy_m = [
        mix(into.centroid_xy_m[0], from.centroid_xy_m[0]),
        mix(into.centroid_xy_m[1], from.centroid_xy_m[1]),
    ];
    into.mean_v_r_mps = mix(into.mean_v_r_mps, from.mean_v_r_mps);
    into.mean_scores = ClassScores(std::array::from_fn(|i| {
        mix(into.mean_scores.0[i], from.mean_scores.0[i])
    }))
    .normalized();
    into.member_indices.extend_from_slice(&from.member_indices);
    into.member_indices.sort_unstable();
}

/// True when `small` may be merged into `large` under `v_threshold`.
pub fn should_merge(small: &ObjectProposal, large: &ObjectProposal, params: &MergeParams, v_threshold: f64) -> bool {
    let dx = small.centroid_xy_m[0] - large.centroid_xy_m[0];
    let dy = small.centroid_xy_m[1] - large.centroid_xy_m[1];
    large.member_indices.len() > small.member_indices.len()
        && dx * dx + dy * dy <= params.spatial_m * params.spatial_m
        && (small.mean_v_r_mps - large.mean_v_r_mps).abs() <= v_threshold
        && small.mean_scores.distance(&large.mean_scores) <= params.score_distance
}

/// Folds pedestrian clusters into cyclist clusters, then pedestrians into
/// cars, then cyclists into cars. Within a rule, smaller-class proposals
/// are visited by ascending position and join the first qualifying
/// larger-class proposal; aggregates are updated after every merge. A
/// single pass: merged proposals are not revisited by earlier rules.
pub fn merge_filter(proposals: &[ObjectProposal], params: &MergeParams) -> Vec<ObjectProposal> {
    use RoadClass::{Car, Cyclist, Pedestrian};
    let rules = [
        (Pedestrian, Cyclist, params.v_pedestrian_cyclist_mps),
        (Pedestrian, Car, params.v_to_car_mps),
        (Cyclist, Car, params.v_to_car_mps),
    ];
    let mut props = proposals.to_vec();
    let mut alive = vec![true; props.len()];
    for (small_class, large_class, v_thr) in rules {
        for i in 0..props.len() {
            if !alive[i] || props[i].class_label != small_class {
                continue;
            }
            let target = (0..props.len()).find(|&j| {
                alive[j] && props[j].class_label == large_class && should_merge(&props[i], &props[j], params, v_thr)
            });
            if let Some(j) = target {
                let small = props[i].clone();
                absorb(&mut props[j], &small);
                alive[i] = false;
            }
        }
    }
    props
        .into_iter()
        .zip(alive)
        .filter_map(|(p, a)| a.then_some(p))
        .collect()
}
