//! Demonstrations: sub-task schemas, samples, the composite fusion, scripted
//! experts and the line-delimited dataset file format.

mod expert;
mod format;
mod fusion;
mod record;

pub use expert::{ExpertGains, ScriptedExpert};
pub use format::{load, parse, store, to_text, DemoWriter};
pub use fusion::{f_action, f_state, fuse, orthogonality_audit};
pub use record::{demonstrated_action, samples_from_trajectory, Recorder};

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{ManoeuvreKind, ACTION_DIM, OBSERVATION_DIM};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("expected {expected} components, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("schema version {found} does not match {expected}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("incompatible demonstrations: {0}")]
    Incompatible(String),
    #[error("invalid sample {index}: {message}")]
    InvalidSample { index: usize, message: String },
    #[error("sub-task {0} is not declared in the header")]
    UnknownSubTask(u32),
    #[error("orthogonality audit failed: {0}")]
    Orthogonality(String),
    #[error("cannot split an empty demonstration set")]
    Empty,
    #[error("split ratio must lie in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One action channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dim {
    Pitch,
    Roll,
    Vertical,
    Yaw,
}

impl Dim {
    pub const ALL: [Dim; ACTION_DIM] = [Dim::Pitch, Dim::Roll, Dim::Vertical, Dim::Yaw];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Set of action channels, serialized as a list of names.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<Dim>", into = "Vec<Dim>")]
pub struct DimSet(u8);

impl DimSet {
    pub const EMPTY: DimSet = DimSet(0);
    pub const ALL: DimSet = DimSet(0b1111);

    pub fn of(dims: &[Dim]) -> Self {
        dims.iter().fold(Self::EMPTY, |acc, d| acc.with(*d))
    }

    pub fn with(self, d: Dim) -> Self {
        DimSet(self.0 | 1 << d.index())
    }

    pub fn contains(self, d: Dim) -> bool {
        self.0 & (1 << d.index()) != 0
    }

    pub fn union(self, other: DimSet) -> Self {
        DimSet(self.0 | other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_superset(self, other: DimSet) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = Dim> {
        Dim::ALL.into_iter().filter(move |d| self.contains(*d))
    }
}

impl From<Vec<Dim>> for DimSet {
    fn from(v: Vec<Dim>) -> Self {
        DimSet::of(&v)
    }
}

impl From<DimSet> for Vec<Dim> {
    fn from(s: DimSet) -> Self {
        s.iter().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Any,
    Positive,
    Negative,
}

/// A channel (and optionally a direction on it) that identifies a sub-task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Distinguishing {
    pub dim: Dim,
    pub sign: Sign,
}

impl Distinguishing {
    pub fn overlaps(&self, other: &Distinguishing) -> bool {
        self.dim == other.dim
            && !matches!(
                (self.sign, other.sign),
                (Sign::Positive, Sign::Negative) | (Sign::Negative, Sign::Positive)
            )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubTaskSpec {
    pub id: u32,
    pub manoeuvre: ManoeuvreKind,
    pub active: DimSet,
    #[serde(default)]
    pub distinguishing: Vec<Distinguishing>,
}

impl SubTaskSpec {
    /// Sub-task assignment for the three primitives plus the composite task.
    ///
    /// Climb and descend share the vertical channel and differ by its sign.
    /// Unless `strict`, they also command low-gain centring on pitch and roll.
    pub fn preset(kind: ManoeuvreKind, strict: bool) -> Self {
        use Dim::*;
        let vertical = if strict { DimSet::of(&[Vertical]) } else { DimSet::of(&[Pitch, Roll, Vertical]) };
        let d = |dim, sign| Distinguishing { dim, sign };
        match kind {
            ManoeuvreKind::FixedAltitude => SubTaskSpec {
                id: 1,
                manoeuvre: kind,
                active: DimSet::of(&[Pitch, Roll]),
                distinguishing: vec![d(Pitch, Sign::Any), d(Roll, Sign::Any)],
            },
            ManoeuvreKind::Climb => SubTaskSpec {
                id: 2,
                manoeuvre: kind,
                active: vertical,
                distinguishing: vec![d(Vertical, Sign::Positive)],
            },
            ManoeuvreKind::Descend => SubTaskSpec {
                id: 3,
                manoeuvre: kind,
                active: vertical,
                distinguishing: vec![d(Vertical, Sign::Negative)],
            },
            ManoeuvreKind::Combined => SubTaskSpec {
                id: 4,
                manoeuvre: kind,
                active: DimSet::of(&[Pitch, Roll, Vertical]),
                distinguishing: Vec::new(),
            },
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.active.is_empty() {
            return Err(DatasetError::Incompatible(format!("sub-task {} has no active dims", self.id)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Human,
    Scripted,
}

/// Timestamped state-action pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: [f64; OBSERVATION_DIM],
    pub action: [f64; ACTION_DIM],
    pub episode: u32,
    /// Id of the [`SubTaskSpec`] the sample demonstrates.
    pub tag: u32,
}

impl Sample {
    pub fn check(&self, index: usize) -> Result<(), DatasetError> {
        let bad = |message: &str| Err(DatasetError::InvalidSample { index, message: message.into() });
        if !self.t.is_finite() {
            return bad("non-finite timestamp");
        }
        if !self.state.iter().all(|v| v.is_finite()) {
            return bad("non-finite state");
        }
        if !self.action.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)) {
            return bad("action outside [-1, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoHeader {
    pub version: u32,
    pub dt: f64,
    pub manoeuvre: ManoeuvreKind,
    pub subtasks: Vec<SubTaskSpec>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_fingerprint: Option<String>,
}

impl DemoHeader {
    pub fn new(dt: f64, subtask: SubTaskSpec, provenance: Provenance) -> Self {
        Self {
            version: SCHEMA_VERSION,
            dt,
            manoeuvre: subtask.manoeuvre,
            subtasks: vec![subtask],
            provenance,
            config_fingerprint: None,
        }
    }

    pub fn subtask(&self, id: u32) -> Option<&SubTaskSpec> {
        self.subtasks.iter().find(|s| s.id == id)
    }
}

/// An ordered set of demonstrations with the schema they were recorded under.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoSet {
    pub header: DemoHeader,
    pub samples: Vec<Sample>,
}

impl DemoSet {
    pub fn new(header: DemoHeader) -> Self {
        Self { header, samples: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Contiguous index ranges sharing an episode id.
    pub fn episodes(&self) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.samples.len() {
            if i == self.samples.len() || self.samples[i].episode != self.samples[start].episode {
                out.push(start..i);
                start = i;
            }
        }
        out
    }

    /// Check arity, ranges, sub-task tags and per-episode time ordering.
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.header.version != SCHEMA_VERSION {
            return Err(DatasetError::VersionMismatch { expected: SCHEMA_VERSION, found: self.header.version });
        }
        for st in &self.header.subtasks {
            st.validate()?;
        }
        for (i, s) in self.samples.iter().enumerate() {
            s.check(i)?;
            let spec = self.header.subtask(s.tag).ok_or(DatasetError::UnknownSubTask(s.tag))?;
            if self.header.manoeuvre.is_primitive() && spec.manoeuvre != self.header.manoeuvre {
                return Err(DatasetError::InvalidSample {
                    index: i,
                    message: format!("tag {} is a {} sub-task in a {} set", s.tag, spec.manoeuvre, self.header.manoeuvre),
                });
            }
            if i > 0 && self.samples[i - 1].episode == s.episode && self.samples[i - 1].t >= s.t {
                return Err(DatasetError::InvalidSample { index: i, message: "timestamps not increasing".into() });
            }
        }
        Ok(())
    }

    /// SHA-256 over the exact bit patterns of every sample, hex encoded.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for s in &self.samples {
            h.update(s.t.to_bits().to_le_bytes());
            for v in s.state.iter().chain(s.action.iter()) {
                h.update(v.to_bits().to_le_bytes());
            }
            h.update(s.episode.to_le_bytes());
            h.update(s.tag.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Uniform random partition into `⌊ratio·N⌋` training samples and the rest.
///
/// Both parts keep the original sample order.
pub fn split(d: &DemoSet, ratio: f64, seed: u64) -> Result<(DemoSet, DemoSet), DatasetError> {
    if d.is_empty() {
        return Err(DatasetError::Empty);
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::InvalidRatio(ratio));
    }
    let n = d.len();
    // Guard against ratio·N landing a hair below an integer (0.67·100).
    let n_train = ((ratio * n as f64) + 1e-9).floor() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_train = vec![false; n];
    for &i in &idx[..n_train] {
        in_train[i] = true;
    }
    let mut train = DemoSet::new(d.header.clone());
    let mut val = DemoSet::new(d.header.clone());
    for (i, s) in d.samples.iter().enumerate() {
        if in_train[i] { &mut train } else { &mut val }.samples.push(s.clone());
    }
    Ok((train, val))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn synthetic(kind: ManoeuvreKind, n: usize, episodes: u32) -> DemoSet {
        let spec = SubTaskSpec::preset(kind, false);
        let mut d = DemoSet::new(DemoHeader::new(0.05, spec.clone(), Provenance::Scripted));
        let per = (n as u32).div_ceil(episodes).max(1);
        for i in 0..n {
            let k = i as u32;
            let mut state = [0.0; OBSERVATION_DIM];
            for (j, v) in state.iter_mut().enumerate() {
                *v = ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5;
            }
            let mut action = [0.0; ACTION_DIM];
            for dim in spec.active.iter() {
                action[dim.index()] = ((i + dim.index()) % 5) as f64 / 5.0 - 0.4;
            }
            d.samples.push(Sample { t: (k % per) as f64 * 0.05, state, action, episode: k / per, tag: spec.id });
        }
        d
    }

    #[test]
    fn split_sizes_and_partition() {
        let d = synthetic(ManoeuvreKind::Climb, 100, 4);
        let (train, val) = split(&d, 0.67, 42).unwrap();
        assert_eq!((train.len(), val.len()), (67, 33));
        let mut all: Vec<_> = train.samples.iter().chain(val.samples.iter()).map(|s| (s.episode, s.t.to_bits())).collect();
        all.sort();
        let mut orig: Vec<_> = d.samples.iter().map(|s| (s.episode, s.t.to_bits())).collect();
        orig.sort();
        assert_eq!(all, orig);
        train.validate().unwrap();
        val.validate().unwrap();
    }

    #[test]
    fn split_is_seed_deterministic() {
        let d = synthetic(ManoeuvreKind::Descend, 57, 3);
        assert_eq!(split(&d, 0.5, 9).unwrap(), split(&d, 0.5, 9).unwrap());
        assert_ne!(split(&d, 0.5, 9).unwrap().0, split(&d, 0.5, 10).unwrap().0);
    }

    #[test]
    fn split_rejects_bad_input() {
        let empty = DemoSet::new(DemoHeader::new(0.05, SubTaskSpec::preset(ManoeuvreKind::Climb, false), Provenance::Human));
        assert!(matches!(split(&empty, 0.67, 1), Err(DatasetError::Empty)));
        let d = synthetic(ManoeuvreKind::Climb, 10, 1);
        assert!(matches!(split(&d, 1.0, 1), Err(DatasetError::InvalidRatio(_))));
    }

    #[test]
    fn validation_catches_bad_samples() {
        let mut d = synthetic(ManoeuvreKind::Climb, 10, 1);
        d.validate().unwrap();
        d.samples[3].t = d.samples[2].t;
        assert!(d.validate().is_err());
        let mut d = synthetic(ManoeuvreKind::Climb, 10, 1);
        d.samples[0].action[0] = 1.5;
        assert!(d.validate().is_err());
        let mut d = synthetic(ManoeuvreKind::Climb, 10, 1);
        d.samples[0].tag = 99;
        assert!(matches!(d.validate(), Err(DatasetError::UnknownSubTask(99))));
    }

    #[test]
    fn episodes_are_contiguous_ranges() {
        let d = synthetic(ManoeuvreKind::Climb, 10, 3);
        let eps = d.episodes();
        assert_eq!(eps.len(), 3);
        assert_eq!(eps.iter().map(|r| r.len()).sum::<usize>(), 10);
    }

    #[test]
    fn dimset_serializes_as_names() {
        let s = DimSet::of(&[Dim::Roll, Dim::Pitch]);
        assert_eq!(serde_json::to_string(&s).unwrap(), r#"["pitch","roll"]"#);
        assert_eq!(s.len(), 2);
        assert!(DimSet::ALL.is_superset(s));
    }
}
