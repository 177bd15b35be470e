use super::{DatasetError, DemoHeader, DemoSet, Sample};
use crate::evaluator::{StepRecord, Trajectory};
use crate::safety::Verdict;
use crate::sim::{Action, Observation};

/// The command the demonstrator gave at a step: the operator's manual action
/// while overriding, the proposed action otherwise (including safety hovers,
/// which are not demonstrations).
pub fn demonstrated_action(r: &StepRecord) -> Action {
    match r.arbitration.verdict {
        Verdict::Manual => r.arbitration.effective,
        Verdict::Pass | Verdict::Hover => r.proposed,
    }
}

/// Convert every step of a trajectory into a sample with the given sub-task
/// tag and episode id.
pub fn samples_from_trajectory(tr: &Trajectory, tag: u32, episode: u32) -> Vec<Sample> {
    tr.records
        .iter()
        .map(|r| Sample {
            t: r.t,
            state: r.observation.to_vector(),
            action: demonstrated_action(r).as_array(),
            episode,
            tag,
        })
        .collect()
}

/// Accumulates live samples into a [`DemoSet`], one episode at a time.
#[derive(Clone, Debug)]
pub struct Recorder {
    set: DemoSet,
    episode: Option<u32>,
    next_episode: u32,
}

impl Recorder {
    pub fn new(header: DemoHeader) -> Self {
        Self { set: DemoSet::new(header), episode: None, next_episode: 0 }
    }

    /// Start a new episode and return its id.
    pub fn begin_episode(&mut self) -> u32 {
        let id = self.next_episode;
        self.next_episode += 1;
        self.episode = Some(id);
        id
    }

    pub fn end_episode(&mut self) {
        self.episode = None;
    }

    pub fn in_episode(&self) -> bool {
        self.episode.is_some()
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    pub fn header(&self) -> &DemoHeader {
        &self.set.header
    }

    /// Append one sample to the current episode (starting one if needed).
    pub fn push(&mut self, t: f64, obs: &Observation, action: Action, tag: u32) -> Result<&Sample, DatasetError> {
        let episode = match self.episode {
            Some(e) => e,
            None => self.begin_episode(),
        };
        let index = self.set.len();
        if self.set.header.subtask(tag).is_none() {
            return Err(DatasetError::UnknownSubTask(tag));
        }
        let sample = Sample { t, state: obs.to_vector(), action: action.as_array(), episode, tag };
        sample.check(index)?;
        if let Some(last) = self.set.samples.last() {
            if last.episode == episode && last.t >= t {
                return Err(DatasetError::InvalidSample { index, message: "timestamps not increasing".into() });
            }
        }
        self.set.samples.push(sample);
        Ok(&self.set.samples[index])
    }

    /// Append a whole closed-loop trajectory as its own episode.
    pub fn push_trajectory(&mut self, tr: &Trajectory, tag: u32) -> Result<usize, DatasetError> {
        if self.set.header.subtask(tag).is_none() {
            return Err(DatasetError::UnknownSubTask(tag));
        }
        let episode = self.begin_episode();
        let samples = samples_from_trajectory(tr, tag, episode);
        let start = self.set.len();
        for (i, s) in samples.iter().enumerate() {
            s.check(start + i)?;
        }
        let n = samples.len();
        self.set.samples.extend(samples);
        self.end_episode();
        Ok(n)
    }

    pub fn finish(self) -> Result<DemoSet, DatasetError> {
        self.set.validate()?;
        Ok(self.set)
    }
}
