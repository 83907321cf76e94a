use std::fs;
use std::path::Path;

use super::episode::{Episode, EpisodeMeta, Phase, StepRecord};
use super::normalize::NormStats;
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::model::{Action, Mode};
use crate::sim::{Observation, TaskKind};

const MAGIC: &[u8; 4] = b"DCDS";
const VERSION: u32 = 1;

/// Summary of a dataset: per-episode index, per-mode frame counts and,
/// once computed, normalization statistics and the sampling target.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub episodes: Vec<(EpisodeMeta, usize)>,
    pub mode_counts: [usize; Mode::COUNT],
    pub stats: Option<NormStats>,
    pub target: Option<[f64; Mode::COUNT]>,
}

impl DatasetManifest {
    pub fn from_episodes(episodes: &[Episode]) -> DatasetManifest {
        let mut mode_counts = [0; Mode::COUNT];
        for e in episodes {
            for (c, n) in mode_counts.iter_mut().zip(e.mode_counts()) {
                *c += n;
            }
        }
        DatasetManifest {
            episodes: episodes.iter().map(|e| (e.meta, e.len())).collect(),
            mode_counts,
            stats: None,
            target: None,
        }
    }

    pub fn total_frames(&self) -> usize {
        self.episodes.iter().map(|e| e.1).sum()
    }

    /// Human-readable `key = value` form.
    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("episodes", self.episodes.len());
        m.set("frames", self.total_frames());
        for mode in Mode::ALL {
            m.set(&format!("frames.{}", mode.name()), self.mode_counts[mode.index()]);
        }
        if let Some(s) = &self.stats {
            m.extend_prefixed("norm", &s.to_kv());
        }
        if let Some(t) = &self.target {
            m.set_list("target", t);
        }
        for (i, (meta, len)) in self.episodes.iter().enumerate() {
            m.set(
                &format!("episode.{i}"),
                format!("{} {} {} {}", meta.task.name(), meta.seed, meta.phase.name(), len),
            );
        }
        m
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn encode_episode(e: &Episode) -> Vec<u8> {
    let mut out = Vec::new();
    out.push(task_code(e.meta.task));
    put_u64(&mut out, e.meta.seed);
    out.push(e.meta.phase.code());
    put_u64(&mut out, e.len() as u64);
    put_u32(&mut out, e.image_size() as u32);
    for r in e.records() {
        out.push(r.mode.index() as u8);
        out.extend_from_slice(&r.action.steering.to_le_bytes());
        out.extend_from_slice(&r.action.velocity.to_le_bytes());
        out.push(r.intervention as u8);
        put_u64(&mut out, r.time);
        out.extend_from_slice(r.obs.bytes());
    }
    out
}

fn task_code(t: TaskKind) -> u8 {
    TaskKind::ALL.iter().position(|&k| k == t).expect("known task") as u8
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Truncated(self.what.into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn decode_episode(buf: &[u8]) -> Result<Episode> {
    let mut r = Reader {
        buf,
        pos: 0,
        what: "episode block",
    };
    let task = *TaskKind::ALL
        .get(r.u8()? as usize)
        .ok_or_else(|| Error::Format("unknown task code".into()))?;
    let seed = r.u64()?;
    let phase = Phase::from_code(r.u8()?).ok_or_else(|| Error::Format("unknown phase code".into()))?;
    let n = r.u64()? as usize;
    let size = r.u32()? as usize;
    let mut records = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let mode = Mode::from_index(r.u8()? as usize).map_err(|_| Error::Format("unknown mode code".into()))?;
        let action = Action::new(r.f64()?, r.f64()?);
        let intervention = match r.u8()? {
            0 => false,
            1 => true,
            _ => return Err(Error::Format("bad intervention flag".into())),
        };
        let time = r.u64()?;
        let obs = Observation::new(size, r.take(3 * size * size)?.to_vec())?;
        records.push(StepRecord {
            obs,
            mode,
            action,
            intervention,
            time,
        });
    }
    if r.pos != buf.len() {
        return Err(Error::Format("trailing bytes in episode block".into()));
    }
    Episode::new(EpisodeMeta { task, seed, phase }, records)
}

/// Serialized dataset.
///
/// Layout (little-endian): magic, version `u32`, manifest text (`u64`
/// length + bytes) with its CRC-32, episode count `u64`, then one block per
/// episode: payload length `u64`, payload, CRC-32 of the payload.
pub fn encode_dataset(episodes: &[Episode]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let manifest = DatasetManifest::from_episodes(episodes).to_kv().to_text();
    put_u64(&mut out, manifest.len() as u64);
    out.extend_from_slice(manifest.as_bytes());
    put_u32(&mut out, crc32fast::hash(manifest.as_bytes()));
    put_u64(&mut out, episodes.len() as u64);
    for e in episodes {
        let block = encode_episode(e);
        put_u64(&mut out, block.len() as u64);
        put_u32(&mut out, crc32fast::hash(&block));
        out.extend_from_slice(&block);
    }
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<Episode>> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        what: "dataset header",
    };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a dataset file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let len = r.u64()? as usize;
    let manifest = r.take(len)?;
    if crc32fast::hash(manifest) != r.u32()? {
        return Err(Error::Checksum("dataset manifest".into()));
    }
    let count = r.u64()? as usize;
    let mut episodes = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        r.what = "episode block";
        let len = r.u64()? as usize;
        let crc = r.u32()?;
        let block = r.take(len)?;
        if crc32fast::hash(block) != crc {
            return Err(Error::Checksum(format!("episode {i}")));
        }
        episodes.push(decode_episode(block)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after episodes".into()));
    }
    let text = std::str::from_utf8(manifest).map_err(|_| Error::Format("manifest is not UTF-8".into()))?;
    if KvMap::parse(text)? != DatasetManifest::from_episodes(&episodes).to_kv() {
        return Err(Error::Mismatch("manifest does not describe the stored episodes".into()));
    }
    Ok(episodes)
}

pub fn save_dataset(episodes: &[Episode], path: &Path) -> Result<()> {
    fs::write(path, encode_dataset(episodes))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<Episode>> {
    decode_dataset(&fs::read(path)?)
}
