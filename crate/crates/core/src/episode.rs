//! Stream pairing and the in-memory episode model.
//!
//! The visual stream paces the episode: each visual sample is matched to
//! the nearest unused tactile and joint samples, and a record is emitted
//! only when both lie within the pairing tolerance.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::contrastive::JointVector;
use crate::error::{Error, Result};
use crate::frame::RasterFrame;

/// Half the 30 Hz frame period.
pub const DEFAULT_TOLERANCE_US: u64 = 16_667;
pub const DEFAULT_HZ: u32 = 30;
pub const DEFAULT_RESOLUTION: (usize, usize) = (640, 480);

#[derive(Debug, Clone, PartialEq)]
pub struct StreamSample<P> {
    pub t_us: u64,
    pub payload: P,
}

impl<P> StreamSample<P> {
    pub fn new(t_us: u64, payload: P) -> Self {
        Self { t_us, payload }
    }
}

/// Indices of one matched triple into the three input streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pairing {
    pub visual: usize,
    pub tactile: usize,
    pub joints: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DroppedCounts {
    pub visual: usize,
    pub tactile: usize,
    pub joints: usize,
}

fn check_sorted(times: &[u64], stream: &str, strict: bool) -> Result<()> {
    for (i, w) in times.windows(2).enumerate() {
        if w[1] < w[0] || (strict && w[1] == w[0]) {
            return Err(Error::Ordering {
                index: i + 1,
                message: format!("{stream} timestamp {} after {}", w[1], w[0]),
            });
        }
    }
    Ok(())
}

/// Nearest unused sample to `t` within `tol`, ties to the earlier sample.
fn nearest_unused(times: &[u64], used: &[bool], t: u64, tol: u64) -> Option<usize> {
    let pos = times.partition_point(|&x| x < t);
    let mut best: Option<(u64, usize)> = None;
    let mut consider = |i: usize| {
        let d = times[i].abs_diff(t);
        if d <= tol && !used[i] && best.is_none_or(|(bd, bi)| d < bd || (d == bd && i < bi)) {
            best = Some((d, i));
        }
    };
    for i in (0..pos).rev() {
        if t - times[i] > tol {
            break;
        }
        consider(i);
    }
    for i in pos..times.len() {
        if times[i] - t > tol {
            break;
        }
        consider(i);
    }
    best.map(|(_, i)| i)
}

/// Greedy nearest-neighbour pairing of timestamp streams.
///
/// Visual timestamps must be strictly increasing, the other two
/// non-decreasing.
pub fn pair_timestamps(
    visual: &[u64],
    tactile: &[u64],
    joints: &[u64],
    tolerance_us: u64,
) -> Result<(Vec<Pairing>, DroppedCounts)> {
    check_sorted(visual, "visual", true)?;
    check_sorted(tactile, "tactile", false)?;
    check_sorted(joints, "joints", false)?;
    let mut used_t = alloc::vec![false; tactile.len()];
    let mut used_j = alloc::vec![false; joints.len()];
    let mut pairs = Vec::new();
    for (v, &t) in visual.iter().enumerate() {
        let tac = nearest_unused(tactile, &used_t, t, tolerance_us);
        let jnt = nearest_unused(joints, &used_j, t, tolerance_us);
        if let (Some(ti), Some(ji)) = (tac, jnt) {
            used_t[ti] = true;
            used_j[ji] = true;
            pairs.push(Pairing { visual: v, tactile: ti, joints: ji });
        }
    }
    let dropped = DroppedCounts {
        visual: visual.len() - pairs.len(),
        tactile: tactile.len() - pairs.len(),
        joints: joints.len() - pairs.len(),
    };
    Ok((pairs, dropped))
}

/// [`pair_timestamps`] over sample streams.
pub fn pair_streams<V, T, J>(
    visual: &[StreamSample<V>],
    tactile: &[StreamSample<T>],
    joints: &[StreamSample<J>],
    tolerance_us: u64,
) -> Result<(Vec<Pairing>, DroppedCounts)> {
    pair_timestamps(&times_of(visual), &times_of(tactile), &times_of(joints), tolerance_us)
}

fn times_of<P>(s: &[StreamSample<P>]) -> Vec<u64> {
    s.iter().map(|x| x.t_us).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub index: usize,
    /// Visual timestamp, microseconds.
    pub t_us: u64,
    pub visual: RasterFrame,
    pub tactile: RasterFrame,
    pub joints: JointVector,
    pub t_tactile_us: Option<u64>,
    pub t_joints_us: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMeta {
    pub episode_id: String,
    pub task: String,
    pub hz: u32,
    pub resolution: (usize, usize),
    pub sensor: String,
    pub robot: String,
    pub created_at: String,
    pub config_hash: String,
    pub tolerance_us: u64,
}

impl EpisodeMeta {
    pub fn new(episode_id: &str, task: &str) -> Self {
        Self {
            episode_id: episode_id.into(),
            task: task.into(),
            hz: DEFAULT_HZ,
            resolution: DEFAULT_RESOLUTION,
            sensor: String::new(),
            robot: String::new(),
            created_at: String::new(),
            config_hash: String::new(),
            tolerance_us: DEFAULT_TOLERANCE_US,
        }
    }
}

/// Episode ids become directory names, so only ASCII letters, digits, `-`
/// and `_` are accepted.
pub fn validate_episode_id(id: &str) -> Result<()> {
    if id.is_empty() || !id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_') {
        return Err(Error::Validation { index: None, message: format!("invalid episode id {id:?}") });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub meta: EpisodeMeta,
    pub records: Vec<EpisodeRecord>,
}

impl Episode {
    pub fn validate(&self) -> Result<()> {
        validate_episode_id(&self.meta.episode_id)?;
        let (w, h) = self.meta.resolution;
        let tol = self.meta.tolerance_us;
        let mut prev: Option<u64> = None;
        for (i, r) in self.records.iter().enumerate() {
            let fail = |message: String| Err(Error::Validation { index: Some(i), message });
            if r.index != i {
                return fail(format!("index {} out of sequence", r.index));
            }
            if prev.is_some_and(|p| r.t_us <= p) {
                return fail(format!("timestamp {} does not increase", r.t_us));
            }
            for (name, t) in [("tactile", r.t_tactile_us), ("joints", r.t_joints_us)] {
                if let Some(t) = t {
                    if t.abs_diff(r.t_us) > tol {
                        return fail(format!("{name} timestamp {t} is more than {tol} us from {}", r.t_us));
                    }
                }
            }
            for (name, f) in [("visual", &r.visual), ("tactile", &r.tactile)] {
                if f.size() != (w, h) {
                    return fail(format!("{name} frame is {}x{}, expected {w}x{h}", f.width(), f.height()));
                }
            }
            prev = Some(r.t_us);
        }
        Ok(())
    }

    /// Pairs three streams and keeps the matched samples as records.
    pub fn assemble(
        meta: EpisodeMeta,
        visual: Vec<StreamSample<RasterFrame>>,
        tactile: Vec<StreamSample<RasterFrame>>,
        joints: Vec<StreamSample<JointVector>>,
    ) -> Result<(Episode, DroppedCounts)> {
        let (pairs, dropped) = pair_streams(&visual, &tactile, &joints, meta.tolerance_us)?;
        let records = pairs
            .iter()
            .enumerate()
            .map(|(index, p)| EpisodeRecord {
                index,
                t_us: visual[p.visual].t_us,
                visual: visual[p.visual].payload.clone(),
                tactile: tactile[p.tactile].payload.clone(),
                joints: joints[p.joints].payload,
                t_tactile_us: Some(tactile[p.tactile].t_us),
                t_joints_us: Some(joints[p.joints].t_us),
            })
            .collect();
        let episode = Episode { meta, records };
        episode.validate()?;
        Ok((episode, dropped))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn identical_timestamps_pair_fully() {
        let t: Vec<u64> = (0..10).map(|i| i * 33_333).collect();
        let (p, d) = pair_timestamps(&t, &t, &t, DEFAULT_TOLERANCE_US).unwrap();
        assert_eq!(p.len(), 10);
        assert_eq!(d, DroppedCounts::default());
        assert!(p.iter().enumerate().all(|(i, x)| x.visual == i && x.tactile == i && x.joints == i));
    }

    #[test]
    fn offset_beyond_tolerance_pairs_nothing() {
        let t: Vec<u64> = (0..10).map(|i| 100_000 + i * 100_000).collect();
        let late: Vec<u64> = t.iter().map(|x| x + DEFAULT_TOLERANCE_US + 1).collect();
        let (p, d) = pair_timestamps(&t, &late, &t, DEFAULT_TOLERANCE_US).unwrap();
        assert!(p.is_empty());
        assert_eq!(d, DroppedCounts { visual: 10, tactile: 10, joints: 10 });
    }

    #[test]
    fn shifted_30hz_stream_slides_to_the_next_frame() {
        let t: Vec<u64> = (0..10).map(|i| 100_000 + i * 33_333).collect();
        let late: Vec<u64> = t.iter().map(|x| x + DEFAULT_TOLERANCE_US + 1).collect();
        let (p, d) = pair_timestamps(&t, &late, &t, DEFAULT_TOLERANCE_US).unwrap();
        assert_eq!(p.len(), 9);
        assert!(p.iter().all(|x| x.tactile + 1 == x.visual));
        assert_eq!(d, DroppedCounts { visual: 1, tactile: 1, joints: 1 });
    }

    #[test]
    fn ties_go_to_the_earlier_sample_and_samples_are_used_once() {
        let (p, d) = pair_timestamps(&[100, 101], &[90, 110], &[100, 101], 20).unwrap();
        assert_eq!(p[0].tactile, 0);
        assert_eq!(p[1].tactile, 1);
        assert_eq!(d.tactile, 0);
        let (p, d) = pair_timestamps(&[100, 101], &[100], &[100, 101], 20).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(d, DroppedCounts { visual: 1, tactile: 0, joints: 1 });
    }

    #[test]
    fn a_missing_joint_does_not_consume_the_tactile_sample() {
        let (p, d) = pair_timestamps(&[0, 1000], &[990], &[1000], 50).unwrap();
        assert_eq!(p, vec![Pairing { visual: 1, tactile: 0, joints: 0 }]);
        assert_eq!(d.visual, 1);
    }

    #[test]
    fn unsorted_streams_rejected() {
        assert!(matches!(pair_timestamps(&[5, 3], &[], &[], 10), Err(Error::Ordering { index: 1, .. })));
        assert!(matches!(pair_timestamps(&[5, 5], &[], &[], 10), Err(Error::Ordering { .. })));
        assert!(pair_timestamps(&[1], &[4, 4], &[3, 3], 10).is_ok());
        assert!(matches!(pair_timestamps(&[1], &[4, 2], &[], 10), Err(Error::Ordering { .. })));
    }

    fn record(index: usize, t_us: u64) -> EpisodeRecord {
        let f = RasterFrame::filled(4, 2, 1, 9).unwrap();
        EpisodeRecord {
            index,
            t_us,
            visual: f.clone(),
            tactile: f,
            joints: JointVector::new([0.0; 7]).unwrap(),
            t_tactile_us: Some(t_us),
            t_joints_us: None,
        }
    }

    #[test]
    fn episode_invariants() {
        let mut meta = EpisodeMeta::new("ep-1", "pick");
        meta.resolution = (4, 2);
        let mut ep = Episode { meta, records: vec![record(0, 10), record(1, 20)] };
        assert!(ep.validate().is_ok());
        ep.records[1].t_us = 10;
        ep.records[1].t_tactile_us = Some(10);
        assert!(matches!(ep.validate(), Err(Error::Validation { index: Some(1), .. })));
        ep.records[1] = record(2, 30);
        assert!(matches!(ep.validate(), Err(Error::Validation { index: Some(1), .. })));
        ep.records[1] = record(1, 30);
        ep.records[1].tactile = RasterFrame::filled(5, 2, 1, 0).unwrap();
        assert!(ep.validate().is_err());
        ep.meta.episode_id = "../x".into();
        assert!(ep.validate().is_err());
    }
}
