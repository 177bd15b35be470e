//! Line-delimited dataset files.
//!
//! The first line is a header record; each following line holds one sample:
//!
//! ```text
//! {"record":"header","version":1,"dt":0.05,"manoeuvre":"climb","subtasks":[...],"provenance":"scripted"}
//! {"record":"sample","t":0.0,"s":[...11 numbers...],"a":[...4 numbers...],"episode":0,"tag":2}
//! ```
//!
//! Numbers are written in shortest round-trip decimal form, so a store/load
//! cycle is bit-exact. Files may be concatenated: a repeated header must match
//! the first one, and episodes after it are renumbered past those already read.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetError, DemoHeader, DemoSet, Sample, SCHEMA_VERSION};
use crate::sim::{ACTION_DIM, OBSERVATION_DIM};

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Header(DemoHeader),
    Sample(SampleLine),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleLine {
    t: f64,
    s: Vec<f64>,
    a: Vec<f64>,
    episode: u32,
    tag: u32,
}

fn sample_line(s: &Sample) -> Line {
    Line::Sample(SampleLine { t: s.t, s: s.state.to_vec(), a: s.action.to_vec(), episode: s.episode, tag: s.tag })
}

fn write_line<W: Write>(w: &mut W, line: &Line) -> Result<(), DatasetError> {
    serde_json::to_writer(&mut *w, line).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn to_text(d: &DemoSet) -> String {
    let mut buf = Vec::new();
    write_line(&mut buf, &Line::Header(d.header.clone())).expect("writing to memory");
    for s in &d.samples {
        write_line(&mut buf, &sample_line(s)).expect("writing to memory");
    }
    String::from_utf8(buf).expect("json is utf-8")
}

pub fn store(d: &DemoSet, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(to_text(d).as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<DemoSet, DatasetError> {
    parse(&std::fs::read_to_string(path)?)
}

/// Decode a dataset from text and validate it.
pub fn parse(text: &str) -> Result<DemoSet, DatasetError> {
    let mut set: Option<DemoSet> = None;
    let mut offset = 0u32;
    let mut next_offset = 0u32;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let schema = |message: String| DatasetError::Schema { line: lineno, message };
        let line: Line = serde_json::from_str(raw).map_err(|e| schema(e.to_string()))?;
        match (line, set.as_mut()) {
            (Line::Header(h), None) => {
                if h.version != SCHEMA_VERSION {
                    return Err(DatasetError::VersionMismatch { expected: SCHEMA_VERSION, found: h.version });
                }
                set = Some(DemoSet::new(h));
            }
            (Line::Header(h), Some(d)) => {
                if h != d.header {
                    return Err(schema("concatenated header differs from the first".into()));
                }
                offset = next_offset;
            }
            (Line::Sample(_), None) => return Err(schema("sample before header".into())),
            (Line::Sample(s), Some(d)) => {
                let state: [f64; OBSERVATION_DIM] = s.s.as_slice().try_into().map_err(|_| {
                    schema(format!("state has {} components, expected {OBSERVATION_DIM}", s.s.len()))
                })?;
                let action: [f64; ACTION_DIM] = s.a.as_slice().try_into().map_err(|_| {
                    schema(format!("action has {} components, expected {ACTION_DIM}", s.a.len()))
                })?;
                let episode = s
                    .episode
                    .checked_add(offset)
                    .ok_or_else(|| schema("episode id overflow".into()))?;
                next_offset = next_offset.max(episode.saturating_add(1));
                d.samples.push(Sample { t: s.t, state, action, episode, tag: s.tag });
            }
        }
    }
    let set = set.ok_or(DatasetError::Schema { line: 0, message: "missing header".into() })?;
    set.validate()?;
    Ok(set)
}

/// Append-only writer for live recording: header first, then one flushed line
/// per sample.
pub struct DemoWriter {
    out: BufWriter<File>,
    count: usize,
}

impl DemoWriter {
    pub fn create(path: impl AsRef<Path>, header: &DemoHeader) -> Result<Self, DatasetError> {
        let mut out = BufWriter::new(File::create(path)?);
        write_line(&mut out, &Line::Header(header.clone()))?;
        out.flush()?;
        Ok(Self { out, count: 0 })
    }

    pub fn append(&mut self, sample: &Sample) -> Result<(), DatasetError> {
        sample.check(self.count)?;
        write_line(&mut self.out, &sample_line(sample))?;
        self.out.flush()?;
        self.count += 1;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}
