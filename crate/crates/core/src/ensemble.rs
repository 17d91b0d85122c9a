//! One-vs-All and One-vs-One binary members combined by weighted voting,
//! and the frame-level classification entry point.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    derive_seed, train_prepared, LabelMapping, PreparedInput, PreparedSet, RtcNetModel, TrainConfig, TrainingLog,
};
use crate::preprocess::{extract_samples, CropConfig, NormalizationStats, Sample};
use crate::types::{ClassScores, ClassifiedTarget, CubeGeometry, Frame, RoadClass, NUM_CLASSES};

use RoadClass::{Car, Cyclist, Other, Pedestrian};

/// Unordered class pairs, each stored with the lower class index first.
pub const OVO_PAIRS: [(RoadClass, RoadClass); 6] = [
    (Pedestrian, Cyclist),
    (Pedestrian, Car),
    (Pedestrian, Other),
    (Cyclist, Car),
    (Cyclist, Other),
    (Car, Other),
];

pub const N_MEMBERS: usize = NUM_CLASSES + OVO_PAIRS.len();

/// Member mappings in canonical order: the four OvA members by class,
/// then the OvO pairs.
pub fn member_mappings() -> Vec<LabelMapping> {
    RoadClass::ALL
        .iter()
        .map(|&class| LabelMapping::OneVsAll { class })
        .chain(
            OVO_PAIRS
                .iter()
                .map(|&(first, second)| LabelMapping::OneVsOne { first, second }),
        )
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    members: Vec<RtcNetModel>,
}

/// Member outputs for one sample. `ovo[c][j]` is the probability the
/// `(c, j)` member assigns to `c`; `ovo[j][c] = 1 - ovo[c][j]`. The diagonal
/// is unused.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemberProbabilities {
    pub ova: [f64; NUM_CLASSES],
    pub ovo: [[f64; NUM_CLASSES]; NUM_CLASSES],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vote {
    pub scores: ClassScores,
    /// The weighted votes summed to zero and the scores fell back to
    /// uniform.
    pub degenerate: bool,
}

/// `raw_c = sum_{j != c} ovo[c][j] * (ova_c + ova_j)`, normalized to sum 1.
pub fn vote_from_probabilities(p: &MemberProbabilities) -> Vote {
    let raw: [f64; NUM_CLASSES] = std::array::from_fn(|c| {
        (0..NUM_CLASSES)
            .filter(|&j| j != c)
            .map(|j| p.ovo[c][j] * (p.ova[c] + p.ova[j]))
            .sum()
    });
    let total: f64 = raw.iter().sum();
    if total > 0.0 && total.is_finite() && raw.iter().all(|&r| r >= 0.0) {
        Vote {
            scores: ClassScores(raw.map(|r| r / total)),
            degenerate: false,
        }
    } else {
        Vote {
            scores: ClassScores::uniform(),
            degenerate: true,
        }
    }
}

impl EnsembleModel {
    /// Checks that `members` holds exactly the ten canonical mappings (in
    /// any order) with one normalization and crop, and stores them in
    /// canonical order.
    pub fn from_members(members: Vec<RtcNetModel>) -> Result<Self> {
        if members.len() != N_MEMBERS {
            return Err(Error::Config(format!(
                "an ensemble needs {N_MEMBERS} members, got {}",
                members.len()
            )));
        }
        let mut slots: Vec<Option<RtcNetModel>> = vec![None; N_MEMBERS];
        let order = member_mappings();
        for m in members {
            let k = order
                .iter()
                .position(|x| *x == m.mapping)
                .ok_or_else(|| Error::Config(format!("{} is not an ensemble member", m.mapping.tag())))?;
            if slots[k].is_some() {
                return Err(Error::Config(format!("duplicate member {}", m.mapping.tag())));
            }
            slots[k] = Some(m);
        }
        let members: Vec<RtcNetModel> = slots.into_iter().map(|m| m.expect("all slots filled")).collect();
        let first = &members[0];
        if members
            .iter()
            .any(|m| m.normalization != first.normalization || m.crop != first.crop || m.geometry != first.geometry)
        {
            return Err(Error::Config(
                "ensemble members disagree on normalization, crop or geometry".into(),
            ));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[RtcNetModel] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [RtcNetModel] {
        &mut self.members
    }

    pub fn ova(&self, class: RoadClass) -> &RtcNetModel {
        &self.members[class.index()]
    }

    pub fn ovo(&self, a: RoadClass, b: RoadClass) -> Option<&RtcNetModel> {
        let (lo, hi) = if a.index() < b.index() { (a, b) } else { (b, a) };
        OVO_PAIRS
            .iter()
            .position(|&p| p == (lo, hi))
            .map(|k| &self.members[NUM_CLASSES + k])
    }

    pub fn normalization(&self) -> &NormalizationStats {
        &self.members[0].normalization
    }

    pub fn crop(&self) -> CropConfig {
        self.members[0].crop
    }

    pub fn geometry(&self) -> Option<CubeGeometry> {
        self.members[0].geometry
    }

    pub fn member_probabilities(&self, input: &PreparedInput) -> Result<MemberProbabilities> {
        let mut ova = [0.0; NUM_CLASSES];
        for c in RoadClass::ALL {
            ova[c.index()] = self.ova(c).predict_prepared(input)?[1];
        }
        let mut ovo = [[0.0; NUM_CLASSES]; NUM_CLASSES];
        for (k, &(a, b)) in OVO_PAIRS.iter().enumerate() {
            let p = self.members[NUM_CLASSES + k].predict_prepared(input)?;
            ovo[a.index()][b.index()] = p[0];
            ovo[b.index()][a.index()] = p[1];
        }
        Ok(MemberProbabilities { ova, ovo })
    }

    pub fn vote(&self, sample: &Sample) -> Result<Vote> {
        let input = PreparedInput::new(sample, self.normalization());
        Ok(vote_from_probabilities(&self.member_probabilities(&input)?))
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleOutcome {
    pub model: EnsembleModel,
    /// Members at their best validation epoch.
    pub best: EnsembleModel,
    pub logs: Vec<TrainingLog>,
}

/// Trains the ten members, in parallel, on one shared normalized and
/// augmented sample set. Member `k` uses seed `derive_seed(config.seed,
/// 100 + k)`.
pub fn train_ensemble(
    samples: &[Sample],
    stats: &NormalizationStats,
    crop: CropConfig,
    config: &TrainConfig,
) -> Result<EnsembleOutcome> {
    config.validate()?;
    for c in RoadClass::ALL {
        if !samples.iter().any(|s| s.label == c) {
            return Err(Error::MissingClass(c));
        }
    }
    let set = PreparedSet::new(samples, stats, config.augment, config.seed);
    let results: Vec<Result<_>> = member_mappings()
        .into_par_iter()
        .enumerate()
        .map(|(k, mapping)| {
            let member_config = TrainConfig {
                seed: derive_seed(config.seed, 100 + k as u64),
                ..*config
            };
            train_prepared(&set, stats, crop, &member_config, mapping)
        })
        .collect();
    let mut models = Vec::with_capacity(N_MEMBERS);
    let mut best = Vec::with_capacity(N_MEMBERS);
    let mut logs = Vec::with_capacity(N_MEMBERS);
    for r in results {
        let out = r?;
        models.push(out.model);
        best.push(out.best);
        logs.push(out.log);
    }
    Ok(EnsembleOutcome {
        model: EnsembleModel::from_members(models)?,
        best: EnsembleModel::from_members(best)?,
        logs,
    })
}

/// Either the voting ensemble or a single multi-class network.
// Only a handful of these exist at a time; boxing buys nothing.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Ensemble(EnsembleModel),
    MultiClass(RtcNetModel),
}

/// Classification of one dynamic target.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub target: ClassifiedTarget,
    /// Positive-class probability of each OvA member (ensemble only).
    pub ova_scores: Option<[f64; NUM_CLASSES]>,
    pub degenerate: bool,
}

impl Classifier {
    pub fn normalization(&self) -> &NormalizationStats {
        match self {
            Classifier::Ensemble(e) => e.normalization(),
            Classifier::MultiClass(m) => &m.normalization,
        }
    }

    pub fn crop(&self) -> CropConfig {
        match self {
            Classifier::Ensemble(e) => e.crop(),
            Classifier::MultiClass(m) => m.crop,
        }
    }

    pub fn geometry(&self) -> Option<CubeGeometry> {
        match self {
            Classifier::Ensemble(e) => e.geometry(),
            Classifier::MultiClass(m) => m.geometry,
        }
    }

    pub fn set_geometry(&mut self, geometry: Option<CubeGeometry>) {
        match self {
            Classifier::Ensemble(e) => e.members_mut().iter_mut().for_each(|m| m.geometry = geometry),
            Classifier::MultiClass(m) => m.geometry = geometry,
        }
    }

    /// Scores, OvA member outputs and the degenerate-vote flag.
    pub fn score(&self, sample: &Sample) -> Result<(ClassScores, Option<[f64; NUM_CLASSES]>, bool)> {
        let input = PreparedInput::new(sample, self.normalization());
        match self {
            Classifier::Ensemble(e) => {
                let p = e.member_probabilities(&input)?;
                let v = vote_from_probabilities(&p);
                Ok((v.scores, Some(p.ova), v.degenerate))
            }
            Classifier::MultiClass(m) => {
                let p = m.predict_prepared(&input)?;
                Ok((ClassScores(std::array::from_fn(|i| p[i])), None, false))
            }
        }
    }
}

/// Classifies every dynamic target of `frame`; static targets are skipped.
pub fn classify_frame(classifier: &Classifier, frame: &Frame, static_threshold: f64) -> Result<Vec<Prediction>> {
    if let Some(g) = classifier.geometry() {
        if !g.same_as(&frame.cube.geometry) {
            return Err(Error::GeometryMismatch);
        }
    }
    let samples = extract_samples(frame, &classifier.crop(), static_threshold)?;
    samples
        .par_iter()
        .map(|s| {
            let (scores, ova_scores, degenerate) = classifier.score(s)?;
            let index = s.target_index;
            Ok(Prediction {
                target: ClassifiedTarget::new(index, frame.targets[index], frame.ego_speed_mps, scores),
                ova_scores,
                degenerate,
            })
        })
        .collect()
}
