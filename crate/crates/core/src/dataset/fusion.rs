//! Composite-set construction: every sub-task sample is lifted into the
//! composite state and action spaces and appended to one set.

use std::collections::BTreeMap;

use super::{DatasetError, DemoHeader, DemoSet, DimSet, Provenance, Sample, SubTaskSpec};
use crate::sim::{ManoeuvreKind, ACTION_DIM, OBSERVATION_DIM};

/// State fusion. Every sub-task observes the full 11-D state, so this is the
/// identity with an arity check.
pub fn f_state(s: &[f64]) -> Result<[f64; OBSERVATION_DIM], DatasetError> {
    s.try_into().map_err(|_| DatasetError::Arity { expected: OBSERVATION_DIM, got: s.len() })
}

/// Action fusion: place the sub-action on the sub-task's active dims (in
/// channel order) and zero the rest.
pub fn f_action(a_sub: &[f64], spec: &SubTaskSpec) -> Result<[f64; ACTION_DIM], DatasetError> {
    if a_sub.len() != spec.active.len() {
        return Err(DatasetError::Arity { expected: spec.active.len(), got: a_sub.len() });
    }
    let mut out = [0.0; ACTION_DIM];
    for (dim, v) in spec.active.iter().zip(a_sub) {
        out[dim.index()] = *v;
    }
    Ok(out)
}

fn sub_action(a: &[f64; ACTION_DIM], active: DimSet) -> Vec<f64> {
    active.iter().map(|d| a[d.index()]).collect()
}

/// Fuse sub-task demonstrations into one composite set.
///
/// Sources are concatenated in order with their internal ordering kept;
/// episode ids are renumbered so they stay distinct across sources.
pub fn fuse(demos: &[DemoSet]) -> Result<DemoSet, DatasetError> {
    let first = demos.first().ok_or(DatasetError::Empty)?;
    let mut subtasks: BTreeMap<u32, SubTaskSpec> = BTreeMap::new();
    for d in demos {
        if d.header.version != first.header.version {
            return Err(DatasetError::VersionMismatch { expected: first.header.version, found: d.header.version });
        }
        if d.header.dt != first.header.dt {
            return Err(DatasetError::Incompatible(format!("step {} differs from {}", d.header.dt, first.header.dt)));
        }
        for st in &d.header.subtasks {
            match subtasks.get(&st.id) {
                Some(existing) if existing != st => {
                    return Err(DatasetError::Incompatible(format!("sub-task {} defined twice differently", st.id)))
                }
                _ => {
                    subtasks.insert(st.id, st.clone());
                }
            }
        }
    }
    let provenance = if demos.iter().all(|d| d.header.provenance == Provenance::Scripted) {
        Provenance::Scripted
    } else {
        Provenance::Human
    };
    let manoeuvre = if demos.len() == 1 { first.header.manoeuvre } else { ManoeuvreKind::Combined };
    let fingerprints: Vec<_> = demos.iter().filter_map(|d| d.header.config_fingerprint.clone()).collect();
    let config_fingerprint = match fingerprints.first() {
        Some(f) if fingerprints.iter().all(|g| g == f) => Some(f.clone()),
        _ => None,
    };
    let header = DemoHeader {
        version: first.header.version,
        dt: first.header.dt,
        manoeuvre,
        subtasks: subtasks.into_values().collect(),
        provenance,
        config_fingerprint,
    };

    let mut out = DemoSet::new(header);
    out.samples.reserve(demos.iter().map(DemoSet::len).sum());
    let mut episode_offset = 0u32;
    for d in demos {
        let mut max_episode = None;
        for s in &d.samples {
            let spec = d.header.subtask(s.tag).ok_or(DatasetError::UnknownSubTask(s.tag))?;
            let state = f_state(&s.state)?;
            let action = f_action(&sub_action(&s.action, spec.active), spec)?;
            out.samples.push(Sample { t: s.t, state, action, episode: s.episode + episode_offset, tag: s.tag });
            max_episode = max_episode.max(Some(s.episode));
        }
        if let Some(m) = max_episode {
            episode_offset += m + 1;
        }
    }
    Ok(out)
}

/// Check that the sub-tasks' distinguishing channels are pairwise disjoint and
/// that together they activate every channel in `required`.
pub fn orthogonality_audit(specs: &[SubTaskSpec], required: DimSet) -> Result<(), DatasetError> {
    for (i, a) in specs.iter().enumerate() {
        a.validate()?;
        for b in &specs[i + 1..] {
            for da in &a.distinguishing {
                if b.distinguishing.iter().any(|db| da.overlaps(db)) {
                    return Err(DatasetError::Orthogonality(format!(
                        "sub-tasks {} and {} both claim {:?}",
                        a.id, b.id, da.dim
                    )));
                }
            }
        }
    }
    let covered = specs.iter().fold(DimSet::EMPTY, |acc, s| acc.union(s.active));
    if !covered.is_superset(required) {
        return Err(DatasetError::Orthogonality(format!(
            "active dims {:?} do not cover {:?}",
            Vec::from(covered),
            Vec::from(required)
        )));
    }
    Ok(())
}
