//! Object labels from tagger/detector scores: thresholding, AND/OR merging,
//! soft-label variants, and the per-head training targets they feed.

mod io;
mod synth;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::Variant;

pub use io::{label_histogram, parse_labels, parse_scores, read_labels, read_scores, render_labels, render_scores, write_labels, write_scores, LabelFile, ScoreFile};
pub use synth::{synth_scores, SynthScoreConfig};

/// Thresholds that performed best in the threshold sweeps.
pub const DEFAULT_AUDIO_THRESHOLD: f64 = 0.5;
pub const DEFAULT_VISUAL_THRESHOLD: f64 = 0.4;

/// Ordered, unique label names.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::input(format!("duplicate label name {n:?}")));
            }
        }
        Ok(Vocabulary { names, index })
    }

    /// `object_00`, `object_01`, ...
    pub fn numbered(n: usize) -> Self {
        Self::new((0..n).map(|i| format!("object_{i:02}")).collect()).expect("unique names")
    }

    /// One name per non-empty line.
    pub fn from_text(text: &str) -> Result<Self> {
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Visual,
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "audio" => Ok(Modality::Audio),
            "visual" => Ok(Modality::Visual),
            other => Err(Error::Config(format!("unknown modality {other:?} (expected audio|visual)"))),
        }
    }
}

/// Per-clip scores from the audio tagger (cosine similarities in `[-1, 1]`)
/// or the object detector (probabilities in `[0, 1]`).
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector {
    pub clip: String,
    pub modality: Modality,
    pub scores: Vec<f64>,
}

impl ScoreVector {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.scores.len() != classes {
            return Err(Error::input(format!("expected {classes} scores, got {}", self.scores.len())));
        }
        if let Some(v) = self.scores.iter().find(|v| !v.is_finite()) {
            return Err(Error::input(format!("non-finite score {v}")));
        }
        let (lo, hi) = match self.modality {
            Modality::Audio => (-1.0, 1.0),
            Modality::Visual => (0.0, 1.0),
        };
        if let Some(v) = self.scores.iter().find(|v| !(lo..=hi).contains(*v)) {
            return Err(Error::input(format!("{:?} score {v} outside [{lo}, {hi}]", self.modality)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Hard,
    Soft,
}

/// Where a label vector came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Audio,
    Visual,
    And,
    Or,
    Max,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelVector {
    pub clip: String,
    pub kind: LabelKind,
    pub provenance: Provenance,
    pub values: Vec<f64>,
}

impl LabelVector {
    /// Indices with a non-zero value.
    pub fn active(&self) -> Vec<usize> {
        self.values.iter().enumerate().filter(|(_, &v)| v > 0.0).map(|(i, _)| i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            LabelKind::Hard => self.values.iter().all(|&v| v == 0.0 || v == 1.0),
            LabelKind::Soft => self.values.iter().all(|v| (0.0..=1.0).contains(v)),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::input(format!("{:?} label for {} has out-of-range values", self.kind, self.clip)))
        }
    }
}

fn provenance_of(m: Modality) -> Provenance {
    match m {
        Modality::Audio => Provenance::Audio,
        Modality::Visual => Provenance::Visual,
    }
}

fn check_threshold(theta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&theta) {
        Ok(())
    } else {
        Err(Error::input(format!("threshold {theta} outside [0, 1]")))
    }
}

/// Hard labels: 1 exactly where the score exceeds `theta` (strictly).
pub fn threshold_labels(s: &ScoreVector, theta: f64) -> Result<LabelVector> {
    check_threshold(theta)?;
    Ok(LabelVector {
        clip: s.clip.clone(),
        kind: LabelKind::Hard,
        provenance: provenance_of(s.modality),
        values: s.scores.iter().map(|&v| if v > theta { 1.0 } else { 0.0 }).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeOp {
    And,
    Or,
}

fn check_pair(a_clip: &str, a_len: usize, b_clip: &str, b_len: usize) -> Result<()> {
    if a_clip != b_clip {
        return Err(Error::contract(format!("cannot combine labels of clips {a_clip:?} and {b_clip:?}")));
    }
    if a_len != b_len {
        return Err(Error::contract(format!("vocabulary sizes differ for {a_clip}: {a_len} vs {b_len}")));
    }
    Ok(())
}

/// Element-wise logical AND / OR of two hard label vectors.
pub fn merge(a: &LabelVector, b: &LabelVector, op: MergeOp) -> Result<LabelVector> {
    check_pair(&a.clip, a.values.len(), &b.clip, b.values.len())?;
    if a.kind != LabelKind::Hard || b.kind != LabelKind::Hard {
        return Err(Error::contract("only hard labels can be merged"));
    }
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(&x, &y)| {
            let (x, y) = (x == 1.0, y == 1.0);
            let on = match op {
                MergeOp::And => x && y,
                MergeOp::Or => x || y,
            };
            if on {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let provenance = match op {
        MergeOp::And => Provenance::And,
        MergeOp::Or => Provenance::Or,
    };
    Ok(LabelVector { clip: a.clip.clone(), kind: LabelKind::Hard, provenance, values })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoftKind {
    Audio,
    Visual,
    Max,
}

/// Soft targets: clamped similarities, detector probabilities, or their
/// element-wise maximum.
pub fn soft_labels(audio: &ScoreVector, visual: &ScoreVector, kind: SoftKind) -> Result<LabelVector> {
    check_pair(&audio.clip, audio.scores.len(), &visual.clip, visual.scores.len())?;
    if audio.modality != Modality::Audio || visual.modality != Modality::Visual {
        return Err(Error::contract("soft_labels takes (audio, visual) score vectors"));
    }
    let a = audio.scores.iter().map(|v| v.clamp(0.0, 1.0));
    let v = visual.scores.iter().map(|v| v.clamp(0.0, 1.0));
    let (values, provenance) = match kind {
        SoftKind::Audio => (a.collect(), Provenance::Audio),
        SoftKind::Visual => (v.collect(), Provenance::Visual),
        SoftKind::Max => (a.zip(v).map(|(x, y)| x.max(y)).collect(), Provenance::Max),
    };
    Ok(LabelVector { clip: audio.clip.clone(), kind: LabelKind::Soft, provenance, values })
}

/// How head targets are derived from scores for a training run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetKind {
    /// Thresholded labels combined according to the variant.
    #[default]
    #[serde(rename = "hard")]
    Hard,
    #[serde(rename = "soft-audio")]
    SoftAudio,
    #[serde(rename = "soft-visual")]
    SoftVisual,
    #[serde(rename = "soft-max")]
    SoftMax,
}

impl TargetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetKind::Hard => "hard",
            TargetKind::SoftAudio => "soft-audio",
            TargetKind::SoftVisual => "soft-visual",
            TargetKind::SoftMax => "soft-max",
        }
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TargetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [TargetKind::Hard, TargetKind::SoftAudio, TargetKind::SoftVisual, TargetKind::SoftMax]
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown label kind {s:?} (expected hard|soft-audio|soft-visual|soft-max)")))
    }
}

/// Target vectors for the audio and visual prediction heads of one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadTargets {
    pub audio: Vec<f64>,
    pub visual: Vec<f64>,
}

/// Label-derivation settings shared by training and sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelPlan {
    pub variant: Variant,
    pub kind: TargetKind,
    pub theta_audio: f64,
    pub theta_visual: f64,
}

impl Default for LabelPlan {
    fn default() -> Self {
        Self::new(Variant::Or)
    }
}

impl LabelPlan {
    pub fn new(variant: Variant) -> Self {
        LabelPlan {
            variant,
            kind: TargetKind::Hard,
            theta_audio: DEFAULT_AUDIO_THRESHOLD,
            theta_visual: DEFAULT_VISUAL_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_threshold(self.theta_audio)?;
        check_threshold(self.theta_visual)?;
        if self.kind != TargetKind::Hard && !self.variant.uses_labels() {
            return Err(Error::Config(format!("label kind {} requires a label-using variant, got {}", self.kind, self.variant)));
        }
        Ok(())
    }

    /// Head targets for one clip. Soft kinds feed the same soft vector to
    /// both heads in place of the merged hard label.
    pub fn targets(&self, audio: &ScoreVector, visual: &ScoreVector) -> Result<Option<HeadTargets>> {
        self.validate()?;
        if !self.variant.uses_labels() {
            return Ok(None);
        }
        let both = |v: Vec<f64>| Some(HeadTargets { audio: v.clone(), visual: v });
        let soft = |k| soft_labels(audio, visual, k).map(|l| both(l.values));
        match self.kind {
            TargetKind::SoftAudio => return soft(SoftKind::Audio),
            TargetKind::SoftVisual => return soft(SoftKind::Visual),
            TargetKind::SoftMax => return soft(SoftKind::Max),
            TargetKind::Hard => {}
        }
        let ya = threshold_labels(audio, self.theta_audio)?;
        let yv = threshold_labels(visual, self.theta_visual)?;
        Ok(match self.variant {
            Variant::Base => None,
            Variant::Audio => both(ya.values),
            Variant::Visual => both(yv.values),
            Variant::Separate => Some(HeadTargets { audio: ya.values, visual: yv.values }),
            Variant::And => both(merge(&ya, &yv, MergeOp::And)?.values),
            Variant::Or => both(merge(&ya, &yv, MergeOp::Or)?.values),
        })
    }

    /// Targets for every clip that has both score vectors.
    pub fn build(&self, pairs: &BTreeMap<String, (ScoreVector, ScoreVector)>) -> Result<BTreeMap<String, HeadTargets>> {
        let mut out = BTreeMap::new();
        for (clip, (a, v)) in pairs {
            if let Some(t) = self.targets(a, v)? {
                out.insert(clip.clone(), t);
            }
        }
        Ok(out)
    }
}

/// Label derivations exposed on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelOp {
    #[serde(rename = "audio")]
    Audio,
    #[serde(rename = "visual")]
    Visual,
    #[serde(rename = "and")]
    And,
    #[serde(rename = "or")]
    Or,
    #[serde(rename = "soft-audio")]
    SoftAudio,
    #[serde(rename = "soft-visual")]
    SoftVisual,
    #[serde(rename = "soft-max")]
    SoftMax,
}

impl LabelOp {
    pub const ALL: [LabelOp; 7] = [LabelOp::Audio, LabelOp::Visual, LabelOp::And, LabelOp::Or, LabelOp::SoftAudio, LabelOp::SoftVisual, LabelOp::SoftMax];

    pub fn as_str(self) -> &'static str {
        match self {
            LabelOp::Audio => "audio",
            LabelOp::Visual => "visual",
            LabelOp::And => "and",
            LabelOp::Or => "or",
            LabelOp::SoftAudio => "soft-audio",
            LabelOp::SoftVisual => "soft-visual",
            LabelOp::SoftMax => "soft-max",
        }
    }
}

impl FromStr for LabelOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LabelOp::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown label op {s:?} (expected audio|visual|and|or|soft-audio|soft-visual|soft-max)")))
    }
}

/// One label vector per clip, in clip order.
pub fn derive_labels(pairs: &BTreeMap<String, (ScoreVector, ScoreVector)>, op: LabelOp, theta_audio: f64, theta_visual: f64) -> Result<Vec<LabelVector>> {
    pairs
        .values()
        .map(|(a, v)| match op {
            LabelOp::Audio => threshold_labels(a, theta_audio),
            LabelOp::Visual => threshold_labels(v, theta_visual),
            LabelOp::And | LabelOp::Or => {
                let m = if op == LabelOp::And { MergeOp::And } else { MergeOp::Or };
                merge(&threshold_labels(a, theta_audio)?, &threshold_labels(v, theta_visual)?, m)
            }
            LabelOp::SoftAudio => soft_labels(a, v, SoftKind::Audio),
            LabelOp::SoftVisual => soft_labels(a, v, SoftKind::Visual),
            LabelOp::SoftMax => soft_labels(a, v, SoftKind::Max),
        })
        .collect()
}

/// Groups score vectors into `(audio, visual)` pairs by clip.
pub fn pair_scores(vectors: &[ScoreVector]) -> Result<BTreeMap<String, (ScoreVector, ScoreVector)>> {
    let mut audio = BTreeMap::new();
    let mut visual = BTreeMap::new();
    for s in vectors {
        let slot = match s.modality {
            Modality::Audio => &mut audio,
            Modality::Visual => &mut visual,
        };
        if slot.insert(s.clip.clone(), s.clone()).is_some() {
            return Err(Error::contract(format!("duplicate {:?} scores for clip {}", s.modality, s.clip)));
        }
    }
    let mut out = BTreeMap::new();
    for (clip, a) in audio {
        let v = visual.remove(&clip).ok_or_else(|| Error::contract(format!("clip {clip} has audio scores but no visual scores")))?;
        out.insert(clip, (a, v));
    }
    if let Some(clip) = visual.keys().next() {
        return Err(Error::contract(format!("clip {clip} has visual scores but no audio scores")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(clip: &str, m: Modality, s: &[f64]) -> ScoreVector {
        ScoreVector { clip: clip.into(), modality: m, scores: s.to_vec() }
    }

    fn hard(values: &[f64]) -> LabelVector {
        LabelVector { clip: "c".into(), kind: LabelKind::Hard, provenance: Provenance::Audio, values: values.to_vec() }
    }

    #[test]
    fn threshold_is_strict() {
        let l = threshold_labels(&sv("c", Modality::Visual, &[0.6, 0.4, 0.5]), 0.5).unwrap();
        assert_eq!(l.values, vec![1.0, 0.0, 0.0]);
        assert_eq!(l.provenance, Provenance::Visual);
    }

    #[test]
    fn threshold_extremes() {
        let s = sv("c", Modality::Visual, &[0.0, 0.2, 1.0]);
        assert_eq!(threshold_labels(&s, 0.0).unwrap().values, vec![0.0, 1.0, 1.0]);
        assert_eq!(threshold_labels(&s, 1.0).unwrap().values, vec![0.0, 0.0, 0.0]);
        assert!(matches!(threshold_labels(&s, 1.5), Err(Error::Input(_))));
        assert!(threshold_labels(&s, -0.1).is_err());
    }

    #[test]
    fn merge_examples() {
        let (a, b) = (hard(&[1.0, 0.0, 1.0]), hard(&[1.0, 1.0, 0.0]));
        assert_eq!(merge(&a, &b, MergeOp::And).unwrap().values, vec![1.0, 0.0, 0.0]);
        let or = merge(&a, &b, MergeOp::Or).unwrap();
        assert_eq!(or.values, vec![1.0, 1.0, 1.0]);
        assert_eq!(or.provenance, Provenance::Or);
        assert_eq!(merge(&a, &hard(&[0.0; 3]), MergeOp::Or).unwrap().values, a.values);
        assert_eq!(merge(&a, &hard(&[1.0; 3]), MergeOp::And).unwrap().values, a.values);
    }

    #[test]
    fn merge_rejects_mismatches() {
        let a = hard(&[1.0, 0.0]);
        let mut other = hard(&[1.0, 0.0]);
        other.clip = "d".into();
        assert!(matches!(merge(&a, &other, MergeOp::Or), Err(Error::Contract(_))));
        assert!(matches!(merge(&a, &hard(&[1.0]), MergeOp::And), Err(Error::Contract(_))));
    }

    #[test]
    fn soft_label_examples() {
        let a = sv("c", Modality::Audio, &[0.2, -0.1]);
        let v = sv("c", Modality::Visual, &[0.5, 0.3]);
        assert_eq!(soft_labels(&a, &v, SoftKind::Max).unwrap().values, vec![0.5, 0.3]);
        assert_eq!(soft_labels(&a, &v, SoftKind::Visual).unwrap().values, v.scores);
        assert_eq!(soft_labels(&a, &v, SoftKind::Audio).unwrap().values, vec![0.2, 0.0]);
        let vv = sv("c", Modality::Audio, &[0.5, 0.3]);
        let same = soft_labels(&vv, &v, SoftKind::Max).unwrap();
        assert_eq!(same.values, v.scores);
        assert!(soft_labels(&a, &sv("d", Modality::Visual, &[0.1, 0.1]), SoftKind::Max).is_err());
    }

    #[test]
    fn plan_targets_per_variant() {
        let a = sv("c", Modality::Audio, &[0.9, 0.1, 0.9]);
        let v = sv("c", Modality::Visual, &[0.9, 0.9, 0.1]);
        let t = |variant| LabelPlan::new(variant).targets(&a, &v).unwrap();
        assert_eq!(t(Variant::Base), None);
        assert_eq!(t(Variant::Or).unwrap().audio, vec![1.0, 1.0, 1.0]);
        assert_eq!(t(Variant::And).unwrap().visual, vec![1.0, 0.0, 0.0]);
        let sep = t(Variant::Separate).unwrap();
        assert_eq!((sep.audio, sep.visual), (vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]));
        assert_eq!(t(Variant::Audio).unwrap().visual, vec![1.0, 0.0, 1.0]);

        let soft = LabelPlan { kind: TargetKind::SoftMax, ..LabelPlan::new(Variant::Or) };
        assert_eq!(soft.targets(&a, &v).unwrap().unwrap().audio, vec![0.9, 0.9, 0.9]);
        let invalid = LabelPlan { kind: TargetKind::SoftMax, ..LabelPlan::new(Variant::Base) };
        assert!(invalid.validate().is_err());
    }

    #[test]
    fn pairing_requires_both_modalities() {
        let ok = pair_scores(&[sv("a", Modality::Audio, &[0.1]), sv("a", Modality::Visual, &[0.2])]).unwrap();
        assert_eq!(ok.len(), 1);
        assert!(pair_scores(&[sv("a", Modality::Audio, &[0.1])]).is_err());
        assert!(pair_scores(&[sv("a", Modality::Visual, &[0.1])]).is_err());
    }

    #[test]
    fn vocabulary_rejects_duplicates() {
        assert!(Vocabulary::new(vec!["dog".into(), "dog".into()]).is_err());
        let v = Vocabulary::from_text("dog\n\nflute\n").unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.index_of("flute"), Some(1));
    }
}
