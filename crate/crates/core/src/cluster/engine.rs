//! The greedy clustering loop.
//!
//! Candidates live in a min-heap keyed by (error increment, action kind,
//! operand indices). Entries are invalidated lazily: every candidate carries
//! the generation of the planes it touches, and entries whose operands have
//! changed are discarded when popped. After applying a candidate, only the
//! extensions and merges of the created or updated plane are recomputed;
//! everything else in the pool is still exact, because an action's increment
//! depends only on its own operands. Tetromino creations are enumerated once
//! at startup: cells only ever leave the atomic state, so no new placements
//! appear later.
//!
//! The applied sequence is identical to recomputing every candidate from
//! scratch each iteration; the test suite checks this against an independent
//! enumeration oracle.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::eval::Segmentation;
use crate::geometry::OrganizedScan;

use super::{
    enumerate_tetrominoes, evaluate_create, evaluate_extend, evaluate_merge, CandidateAction,
    ClusterError, MergeCandidate, PlaneMap, PpeConfig, StoppingCriterion,
};

/// One applied clustering action.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub action: CandidateAction,
    pub increment: f64,
    /// Total plane count (atomic + regular) after the step.
    pub planes_after: usize,
}

struct HeapEntry {
    key: (u64, u8, [u64; 2]),
    candidate: MergeCandidate,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.cmp(&other.key)
    }
}

/// Stepwise clustering engine. Drive it with [`PpeEngine::step`] to observe
/// every applied action, or use [`extract`] to run to completion.
pub struct PpeEngine<'a> {
    scan: &'a OrganizedScan,
    config: PpeConfig,
    map: PlaneMap,
    heap: BinaryHeap<Reverse<HeapEntry>>,
    applied: Vec<StepRecord>,
}

impl<'a> PpeEngine<'a> {
    pub fn new(scan: &'a OrganizedScan, config: PpeConfig) -> Result<Self, ClusterError> {
        let map = PlaneMap::init_atomic(scan)?;
        let mut engine = Self {
            scan,
            config,
            map,
            heap: BinaryHeap::new(),
            applied: Vec::new(),
        };
        for cells in enumerate_tetrominoes(scan, &engine.map, config.outlier_distance) {
            if let Some(candidate) = evaluate_create(scan, cells) {
                engine.push(candidate);
            }
        }
        Ok(engine)
    }

    pub fn map(&self) -> &PlaneMap {
        &self.map
    }

    pub fn config(&self) -> &PpeConfig {
        &self.config
    }

    /// Steps applied so far, in order.
    pub fn applied(&self) -> &[StepRecord] {
        &self.applied
    }

    fn push(&mut self, candidate: MergeCandidate) {
        self.heap.push(Reverse(HeapEntry {
            key: candidate.ordering_key(),
            candidate,
        }));
    }

    /// Pop the cheapest still-valid candidate.
    fn pop_valid(&mut self) -> Option<MergeCandidate> {
        while let Some(Reverse(entry)) = self.heap.pop() {
            if self.map.is_current(&entry.candidate) {
                return Some(entry.candidate);
            }
        }
        None
    }

    /// Apply the cheapest feasible action, unless a stopping criterion
    /// fires. Returns None when clustering has ended.
    pub fn step(&mut self) -> Option<StepRecord> {
        if let StoppingCriterion::MaxPlanes(max_planes) = self.config.stopping {
            if self.map.plane_count() <= max_planes {
                return None;
            }
        }
        let candidate = self.pop_valid()?;
        if let StoppingCriterion::MaxErrorIncrement(max_increment) = self.config.stopping {
            if candidate.error_increment > max_increment {
                return None;
            }
        }
        let updated = self.map.apply(&candidate).expect("candidate validated");
        self.refresh(updated);
        let record = StepRecord {
            action: candidate.action,
            increment: candidate.error_increment,
            planes_after: self.map.plane_count(),
        };
        self.applied.push(record.clone());
        Some(record)
    }

    /// Recompute all extensions and merges of a created or updated plane.
    fn refresh(&mut self, plane: u32) {
        for ray in self.map.adjacent_atomic(plane) {
            if let Some(candidate) = evaluate_extend(self.scan, &self.map, plane, ray, &self.config)
            {
                self.push(candidate);
            }
        }
        for other in self.map.adjacent_regular(plane) {
            if let Some(candidate) = evaluate_merge(self.scan, &self.map, plane, other, &self.config)
            {
                self.push(candidate);
            }
        }
    }

    /// Run to completion.
    pub fn run(&mut self) {
        while self.step().is_some() {}
    }

    pub fn into_result(self) -> (PlaneMap, Segmentation) {
        let segmentation = self.map.to_segmentation();
        (self.map, segmentation)
    }
}

/// Cluster a scan into planes. Leftover atomic planes are reported as
/// outlier pixels (label 0) in the segmentation.
pub fn extract(
    scan: &OrganizedScan,
    config: PpeConfig,
) -> Result<(PlaneMap, Segmentation), ClusterError> {
    let mut engine = PpeEngine::new(scan, config)?;
    engine.run();
    Ok(engine.into_result())
}
