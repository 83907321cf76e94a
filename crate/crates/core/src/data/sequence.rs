use super::episode::Episode;
use crate::error::{Error, Result};
use crate::model::Mode;
use crate::sim::TaskKind;

/// Window lengths are multiplied by this for elevator episodes.
pub const ELEVATOR_FACTOR: usize = 3;

/// Record indices `0, stride, 2·stride, …` below `len`.
pub fn subsample_stride(len: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    Ok((0..len).step_by(stride).collect())
}

/// A window of strided frames from one episode, stored as record indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceSample {
    pub episode: usize,
    pub frames: Vec<usize>,
    /// Built with the tripled elevator length.
    pub long: bool,
}

impl SequenceSample {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn modes<'a>(&'a self, episodes: &'a [Episode]) -> impl Iterator<Item = Mode> + 'a {
        let recs = episodes[self.episode].records();
        self.frames.iter().map(move |&i| recs[i].mode)
    }

    /// Mode that characterises the window: the elevator mode if present,
    /// otherwise the most frequent turn, otherwise go-forward.
    pub fn salient_mode(&self, episodes: &[Episode]) -> Mode {
        let mut counts = [0usize; Mode::COUNT];
        for m in self.modes(episodes) {
            counts[m.index()] += 1;
        }
        if counts[Mode::TakeElevator.index()] > 0 {
            return Mode::TakeElevator;
        }
        let (l, r) = (counts[Mode::TurnLeft.index()], counts[Mode::TurnRight.index()]);
        match (l, r) {
            (0, 0) => Mode::GoForward,
            _ if l >= r => Mode::TurnLeft,
            _ => Mode::TurnRight,
        }
    }
}

/// Sliding windows of `length` strided frames with a hop of one strided
/// frame. Elevator episodes use `3 · length`. Short episodes give nothing.
pub fn build_sequences(episodes: &[Episode], length: usize, stride: usize) -> Result<Vec<SequenceSample>> {
    if length == 0 {
        return Err(Error::Config("sequence length must be at least 1".into()));
    }
    let mut out = Vec::new();
    for (e, ep) in episodes.iter().enumerate() {
        let idx = subsample_stride(ep.len(), stride)?;
        let long = ep.meta.task == TaskKind::Elevator;
        let l = if long { ELEVATOR_FACTOR * length } else { length };
        if idx.len() < l {
            continue;
        }
        for start in 0..=idx.len() - l {
            out.push(SequenceSample {
                episode: e,
                frames: idx[start..start + l].to_vec(),
                long,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EpisodeMeta, Phase, StepRecord};
    use crate::model::Action;
    use crate::sim::Observation;

    pub(crate) fn toy_episode(task: TaskKind, len: usize, modes: &[Mode]) -> Episode {
        let records = (0..len)
            .map(|t| StepRecord {
                obs: Observation::new(2, vec![(t % 256) as u8; 12]).unwrap(),
                mode: modes[t % modes.len()],
                action: Action::new(0.1 * t as f64, 0.5),
                intervention: false,
                time: t as u64,
            })
            .collect();
        Episode::new(
            EpisodeMeta {
                task,
                seed: len as u64,
                phase: Phase::Demonstration,
            },
            records,
        )
        .unwrap()
    }

    #[test]
    fn stride_indices() {
        assert_eq!(subsample_stride(10, 3).unwrap(), vec![0, 3, 6, 9]);
        assert_eq!(subsample_stride(4, 1).unwrap(), vec![0, 1, 2, 3]);
        assert!(subsample_stride(4, 0).is_err());
    }

    #[test]
    fn window_counts() {
        let ep = toy_episode(TaskKind::Blindspot, 120, &[Mode::GoForward]);
        let s = build_sequences(&[ep], 35, 3).unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!(s[0].frames.last(), Some(&102));
        let short = toy_episode(TaskKind::Blindspot, 100, &[Mode::GoForward]);
        assert!(build_sequences(&[short], 35, 3).unwrap().is_empty());
        let lift = toy_episode(TaskKind::Elevator, 330, &[Mode::TakeElevator]);
        let s = build_sequences(&[lift], 35, 3).unwrap();
        assert_eq!(s.len(), 6);
        assert!(s.iter().all(|w| w.len() == 105 && w.long));
    }
}
