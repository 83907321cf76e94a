use crate::error::{Error, Result};
use crate::model::{Action, Mode};
use crate::sim::{Observation, TaskKind};

/// How an episode was collected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Demonstration,
    Intervention,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Demonstration => "demonstration",
            Phase::Intervention => "intervention",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Phase::Demonstration => 0,
            Phase::Intervention => 1,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Phase> {
        match c {
            0 => Some(Phase::Demonstration),
            1 => Some(Phase::Intervention),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EpisodeMeta {
    pub task: TaskKind,
    pub seed: u64,
    pub phase: Phase,
}

/// One recorded tick: what the robot saw, the commanded mode and the label.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub obs: Observation,
    pub mode: Mode,
    pub action: Action,
    pub intervention: bool,
    /// Simulator tick index.
    pub time: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub meta: EpisodeMeta,
    records: Vec<StepRecord>,
}

impl Episode {
    /// Checks that the episode is non-empty, tick indices strictly increase
    /// and all observations share one size.
    pub fn new(meta: EpisodeMeta, records: Vec<StepRecord>) -> Result<Episode> {
        let Some(first) = records.first() else {
            return Err(Error::Data("episode has no records".into()));
        };
        let size = first.obs.size();
        for w in records.windows(2) {
            if w[1].time <= w[0].time {
                return Err(Error::Data(format!(
                    "tick indices not increasing: {} then {}",
                    w[0].time, w[1].time
                )));
            }
        }
        if let Some(r) = records.iter().find(|r| r.obs.size() != size) {
            return Err(Error::Data(format!(
                "mixed observation sizes {size} and {}",
                r.obs.size()
            )));
        }
        Ok(Episode { meta, records })
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.records[0].obs.size()
    }

    pub fn mode_counts(&self) -> [usize; Mode::COUNT] {
        let mut c = [0; Mode::COUNT];
        for r in &self.records {
            c[r.mode.index()] += 1;
        }
        c
    }
}
