//! Greedy agglomerative plane clustering.
//!
//! The scan starts as one atomic plane per reflection. Three kinds of actions
//! reduce the plane count: creating a regular plane from four atomic cells
//! forming a tetromino, extending a regular plane by a 4-adjacent atomic
//! cell, and merging two adjacent regular planes. Every action is scored by
//! its error increment, the growth of the total squared radial error caused
//! by applying it, and the engine always applies the candidate with the
//! smallest increment until a stopping criterion fires.
//!
//! Equal increments are broken by action kind (create before extend before
//! merge) and then by the smallest operand indices, which makes runs fully
//! reproducible.

mod engine;
mod tetromino;

use std::collections::BTreeSet;

use thiserror::Error;

pub use engine::{extract, PpeEngine, StepRecord};
pub use tetromino::SHAPES;

use crate::eval::{Segmentation, SegmentPlane};
use crate::geometry::{
    fit_plane_radial, fit_plane_radial_from, OrganizedScan, PlaneGeometry, RadialFit, Vec3,
    PARALLEL_EPS,
};

/// Sentinel for pixels owned by no plane (invalid rays).
const UNOWNED: u32 = u32::MAX;

/// When to stop clustering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StoppingCriterion {
    /// Stop once the total number of planes (atomic and regular) is at most
    /// this value.
    MaxPlanes(usize),
    /// Stop when the cheapest remaining action would increase the total
    /// error by more than this (m²).
    MaxErrorIncrement(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpeConfig {
    pub stopping: StoppingCriterion,
    /// Geometric outlier filter: 4-adjacent cells whose endpoints are
    /// farther apart than this (meters) are never clustered together.
    pub outlier_distance: f64,
    /// Rays with |n·v| below this are treated as parallel to the plane.
    pub parallel_eps: f64,
}

impl PpeConfig {
    pub fn new(stopping: StoppingCriterion, outlier_distance: f64) -> Self {
        assert!(outlier_distance > 0.0);
        Self {
            stopping,
            outlier_distance,
            parallel_eps: PARALLEL_EPS,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClusterError {
    #[error("scan contains no valid rays")]
    EmptyScan,
    #[error("candidate operands changed since it was evaluated")]
    StaleCandidate,
}

/// One plane in the map, with its cached fit.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneEntry {
    pub geometry: PlaneGeometry,
    /// Member ray indices, sorted ascending.
    pub members: Vec<u32>,
    /// Attained minimum of the squared radial error of the members (m²).
    /// Zero for atomic planes, which explain their reflection exactly.
    pub residual: f64,
    pub atomic: bool,
    /// Bumped on every membership change; stale candidates are detected by
    /// comparing generations.
    pub generation: u32,
}

/// The clustering state: a partition of all valid pixels into planes.
///
/// Atomic planes use their ray index as plane id; regular planes receive
/// fresh ids starting at width·height, so ids are never reused.
#[derive(Debug, Clone)]
pub struct PlaneMap {
    width: usize,
    height: usize,
    planes: Vec<Option<PlaneEntry>>,
    owner: Vec<u32>,
    atomic_count: usize,
    regular_count: usize,
}

impl PlaneMap {
    /// One atomic plane per valid ray: support = endpoint, normal = ray
    /// direction.
    pub fn init_atomic(scan: &OrganizedScan) -> Result<Self, ClusterError> {
        let cells = scan.len();
        let mut planes: Vec<Option<PlaneEntry>> = vec![None; cells];
        let mut owner = vec![UNOWNED; cells];
        let mut atomic_count = 0;
        for k in scan.valid_indices() {
            let ray = scan.ray(k);
            planes[k] = Some(PlaneEntry {
                geometry: PlaneGeometry::new(ray.endpoint(), ray.direction),
                members: vec![k as u32],
                residual: 0.0,
                atomic: true,
                generation: 0,
            });
            owner[k] = k as u32;
            atomic_count += 1;
        }
        if atomic_count == 0 {
            return Err(ClusterError::EmptyScan);
        }
        Ok(Self {
            width: scan.width,
            height: scan.height,
            planes,
            owner,
            atomic_count,
            regular_count: 0,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Total number of planes, atomic and regular.
    pub fn plane_count(&self) -> usize {
        self.atomic_count + self.regular_count
    }

    pub fn atomic_count(&self) -> usize {
        self.atomic_count
    }

    pub fn regular_count(&self) -> usize {
        self.regular_count
    }

    pub fn plane(&self, id: u32) -> Option<&PlaneEntry> {
        self.planes.get(id as usize).and_then(|p| p.as_ref())
    }

    /// Owning plane id of a pixel, if any.
    pub fn owner_of(&self, pixel: usize) -> Option<u32> {
        let id = self.owner[pixel];
        (id != UNOWNED).then_some(id)
    }

    /// Whether a pixel is still its own atomic plane.
    pub fn is_atomic(&self, pixel: usize) -> bool {
        self.owner[pixel] == pixel as u32
            && self.planes[pixel].as_ref().is_some_and(|p| p.atomic)
    }

    /// All live plane ids in ascending order.
    pub fn plane_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.planes
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_some())
            .map(|(id, _)| id as u32)
    }

    /// Ids of regular (non-atomic) planes in ascending order.
    pub fn regular_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.planes
            .iter()
            .enumerate()
            .filter(|(_, p)| p.as_ref().is_some_and(|e| !e.atomic))
            .map(|(id, _)| id as u32)
    }

    /// Sum of the cached residuals of all planes, i.e. the total squared
    /// radial error of the current clustering.
    pub fn total_error(&self) -> f64 {
        self.planes
            .iter()
            .flatten()
            .map(|entry| entry.residual)
            .sum()
    }

    fn neighbors4(&self, pixel: usize) -> impl Iterator<Item = usize> + '_ {
        let (row, col) = (pixel / self.width, pixel % self.width);
        let (w, h) = (self.width, self.height);
        [
            (row.wrapping_sub(1), col),
            (row, col.wrapping_sub(1)),
            (row, col + 1),
            (row + 1, col),
        ]
        .into_iter()
        .filter(move |&(r, c)| r < h && c < w)
        .map(move |(r, c)| r * w + c)
    }

    /// Atomic rays 4-adjacent to members of the given plane, ascending.
    pub fn adjacent_atomic(&self, id: u32) -> Vec<u32> {
        let entry = self.plane(id).expect("live plane");
        let mut found = BTreeSet::new();
        for &m in &entry.members {
            for n in self.neighbors4(m as usize) {
                if self.is_atomic(n) && self.owner[n] != id {
                    found.insert(n as u32);
                }
            }
        }
        found.into_iter().collect()
    }

    /// Regular planes 4-adjacent to members of the given plane, ascending.
    pub fn adjacent_regular(&self, id: u32) -> Vec<u32> {
        let entry = self.plane(id).expect("live plane");
        let mut found = BTreeSet::new();
        for &m in &entry.members {
            for n in self.neighbors4(m as usize) {
                let other = self.owner[n];
                if other != UNOWNED
                    && other != id
                    && self.planes[other as usize].as_ref().is_some_and(|p| !p.atomic)
                {
                    found.insert(other);
                }
            }
        }
        found.into_iter().collect()
    }

    /// Apply a validated candidate; returns the id of the created or updated
    /// plane. Fails with [`ClusterError::StaleCandidate`] if the operands
    /// changed since the candidate was evaluated.
    pub fn apply(&mut self, candidate: &MergeCandidate) -> Result<u32, ClusterError> {
        if !self.is_current(candidate) {
            return Err(ClusterError::StaleCandidate);
        }
        match candidate.action {
            CandidateAction::Create { rays } => {
                let id = self.planes.len() as u32;
                let members: Vec<u32> = rays.to_vec();
                for &r in &rays {
                    self.planes[r as usize] = None;
                    self.owner[r as usize] = id;
                }
                self.planes.push(Some(PlaneEntry {
                    geometry: candidate.fitted.geometry,
                    members,
                    residual: candidate.fitted.residual,
                    atomic: false,
                    generation: 0,
                }));
                self.atomic_count -= 4;
                self.regular_count += 1;
                Ok(id)
            }
            CandidateAction::Extend { plane, ray } => {
                self.planes[ray as usize] = None;
                self.owner[ray as usize] = plane;
                let entry = self.planes[plane as usize].as_mut().unwrap();
                let pos = entry.members.partition_point(|&m| m < ray);
                entry.members.insert(pos, ray);
                entry.geometry = candidate.fitted.geometry;
                entry.residual = candidate.fitted.residual;
                entry.generation += 1;
                self.atomic_count -= 1;
                Ok(plane)
            }
            CandidateAction::Merge { first, second } => {
                let absorbed = self.planes[second as usize].take().unwrap();
                for &m in &absorbed.members {
                    self.owner[m as usize] = first;
                }
                let entry = self.planes[first as usize].as_mut().unwrap();
                let mut merged = Vec::with_capacity(entry.members.len() + absorbed.members.len());
                let (mut a, mut b) = (entry.members.iter().peekable(), absorbed.members.iter().peekable());
                loop {
                    match (a.peek(), b.peek()) {
                        (Some(&&x), Some(&&y)) => {
                            if x < y {
                                merged.push(x);
                                a.next();
                            } else {
                                merged.push(y);
                                b.next();
                            }
                        }
                        (Some(&&x), None) => {
                            merged.push(x);
                            a.next();
                        }
                        (None, Some(&&y)) => {
                            merged.push(y);
                            b.next();
                        }
                        (None, None) => break,
                    }
                }
                entry.members = merged;
                entry.geometry = candidate.fitted.geometry;
                entry.residual = candidate.fitted.residual;
                entry.generation += 1;
                self.regular_count -= 1;
                Ok(first)
            }
        }
    }

    /// Whether the candidate's operands are unmodified.
    pub fn is_current(&self, candidate: &MergeCandidate) -> bool {
        match (&candidate.action, &candidate.stamps) {
            (CandidateAction::Create { rays }, Stamps::Create) => {
                rays.iter().all(|&r| self.is_atomic(r as usize))
            }
            (CandidateAction::Extend { plane, ray }, Stamps::Extend { plane_generation }) => {
                self.is_atomic(*ray as usize)
                    && self
                        .plane(*plane)
                        .is_some_and(|e| !e.atomic && e.generation == *plane_generation)
            }
            (
                CandidateAction::Merge { first, second },
                Stamps::Merge {
                    first_generation,
                    second_generation,
                },
            ) => {
                self.plane(*first)
                    .is_some_and(|e| !e.atomic && e.generation == *first_generation)
                    && self
                        .plane(*second)
                        .is_some_and(|e| !e.atomic && e.generation == *second_generation)
            }
            _ => false,
        }
    }

    /// Labeled segmentation: regular planes get dense labels 1.. in id
    /// order; leftover atomic planes and invalid pixels are outliers (0).
    pub fn to_segmentation(&self) -> Segmentation {
        let mut labels = vec![0u32; self.owner.len()];
        let mut planes = std::collections::BTreeMap::new();
        let mut next_label = 1u32;
        for id in self.regular_ids() {
            let entry = self.plane(id).unwrap();
            for &m in &entry.members {
                labels[m as usize] = next_label;
            }
            planes.insert(
                next_label,
                SegmentPlane {
                    geometry: Some(entry.geometry),
                    member_count: entry.members.len(),
                },
            );
            next_label += 1;
        }
        Segmentation {
            width: self.width,
            height: self.height,
            labels,
            planes,
        }
    }
}

/// The three kinds of clustering actions, in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateAction {
    /// Four atomic rays, sorted ascending, forming a valid tetromino.
    Create { rays: [u32; 4] },
    /// A regular plane and a 4-adjacent atomic ray.
    Extend { plane: u32, ray: u32 },
    /// Two adjacent regular planes, first < second.
    Merge { first: u32, second: u32 },
}

impl CandidateAction {
    fn rank(&self) -> u8 {
        match self {
            CandidateAction::Create { .. } => 0,
            CandidateAction::Extend { .. } => 1,
            CandidateAction::Merge { .. } => 2,
        }
    }

    /// Packed operand indices for lexicographic tie-breaking.
    fn operand_key(&self) -> [u64; 2] {
        match *self {
            CandidateAction::Create { rays } => [
                (rays[0] as u64) << 32 | rays[1] as u64,
                (rays[2] as u64) << 32 | rays[3] as u64,
            ],
            CandidateAction::Extend { plane, ray } => [(plane as u64) << 32 | ray as u64, 0],
            CandidateAction::Merge { first, second } => [(first as u64) << 32 | second as u64, 0],
        }
    }
}

/// Generation stamps recorded when a candidate was evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stamps {
    Create,
    Extend {
        plane_generation: u32,
    },
    Merge {
        first_generation: u32,
        second_generation: u32,
    },
}

/// A scored clustering action with its hypothetical fit.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeCandidate {
    pub action: CandidateAction,
    /// Nonnegative growth of the total error if applied (m²).
    pub error_increment: f64,
    /// Plane and residual the action would produce.
    pub fitted: RadialFit,
    stamps: Stamps,
}

impl MergeCandidate {
    /// Total greedy order: increment, then kind, then operand indices.
    pub fn ordering_key(&self) -> (u64, u8, [u64; 2]) {
        (
            // total_cmp order as sortable bits; increments are nonnegative.
            self.error_increment.to_bits(),
            self.action.rank(),
            self.action.operand_key(),
        )
    }
}

/// Increments are nonnegative up to floating-point wiggle in the fits; tiny
/// negatives are clamped to exactly +0.0 so the ordering key stays sound.
fn clamp_increment(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn endpoint(scan: &OrganizedScan, pixel: u32) -> Vec3 {
    scan.ray(pixel as usize).endpoint()
}

/// Whether two pixels may be clustered together: their endpoints must be
/// within the outlier distance.
fn pair_allowed(scan: &OrganizedScan, a: u32, b: u32, outlier_distance: f64) -> bool {
    (endpoint(scan, a) - endpoint(scan, b)).norm() <= outlier_distance
}

fn cells_adjacent(width: usize, a: u32, b: u32) -> bool {
    let (ar, ac) = (a as usize / width, a as usize % width);
    let (br, bc) = (b as usize / width, b as usize % width);
    ar.abs_diff(br) + ac.abs_diff(bc) == 1
}

/// All valid tetromino placements over the current atomic cells: every cell
/// atomic and valid, and every 4-adjacent pair of cells within the outlier
/// distance. Placements are deduplicated by anchoring.
pub fn enumerate_tetrominoes(
    scan: &OrganizedScan,
    map: &PlaneMap,
    outlier_distance: f64,
) -> Vec<[u32; 4]> {
    let mut placements = Vec::new();
    for row in 0..map.height() {
        for col in 0..map.width() {
            if !map.is_atomic(map.width() * row + col) {
                continue;
            }
            for shape in &tetromino::SHAPES {
                let Some(cells) = tetromino::place(shape, row, col, map.width(), map.height())
                else {
                    continue;
                };
                if !cells.iter().all(|&c| map.is_atomic(c as usize)) {
                    continue;
                }
                let gaps_ok = cells.iter().enumerate().all(|(i, &a)| {
                    cells[i + 1..].iter().all(|&b| {
                        !cells_adjacent(map.width(), a, b)
                            || pair_allowed(scan, a, b, outlier_distance)
                    })
                });
                if gaps_ok {
                    placements.push(cells);
                }
            }
        }
    }
    placements
}

/// Score a tetromino creation; None if the fit is infeasible.
pub fn evaluate_create(scan: &OrganizedScan, cells: [u32; 4]) -> Option<MergeCandidate> {
    let mut rays = cells;
    rays.sort_unstable();
    let fitted = fit_plane_radial(scan, &rays).ok()?;
    Some(MergeCandidate {
        action: CandidateAction::Create { rays },
        error_increment: clamp_increment(fitted.residual),
        fitted,
        stamps: Stamps::Create,
    })
}

/// Score extending a regular plane by an atomic ray; None if the extension
/// fails the outlier filter or the fit is infeasible.
pub fn evaluate_extend(
    scan: &OrganizedScan,
    map: &PlaneMap,
    plane: u32,
    ray: u32,
    config: &PpeConfig,
) -> Option<MergeCandidate> {
    let entry = map.plane(plane)?;
    // Every member 4-adjacent to the new ray must be within reach.
    for n in map.neighbors4(ray as usize) {
        if map.owner[n] == plane && !pair_allowed(scan, ray, n as u32, config.outlier_distance) {
            return None;
        }
    }
    let mut members = Vec::with_capacity(entry.members.len() + 1);
    members.extend_from_slice(&entry.members);
    let pos = members.partition_point(|&m| m < ray);
    members.insert(pos, ray);
    let fitted =
        fit_plane_radial_from(scan, &members, &entry.geometry, config.parallel_eps).ok()?;
    Some(MergeCandidate {
        action: CandidateAction::Extend { plane, ray },
        error_increment: clamp_increment(fitted.residual - entry.residual),
        fitted,
        stamps: Stamps::Extend {
            plane_generation: entry.generation,
        },
    })
}

/// Score merging two adjacent regular planes; None if any 4-adjacent pair of
/// member pixels across the boundary exceeds the outlier distance or the fit
/// is infeasible.
pub fn evaluate_merge(
    scan: &OrganizedScan,
    map: &PlaneMap,
    a: u32,
    b: u32,
    config: &PpeConfig,
) -> Option<MergeCandidate> {
    let (first, second) = if a < b { (a, b) } else { (b, a) };
    let first_entry = map.plane(first)?;
    let second_entry = map.plane(second)?;
    // Walk the smaller plane's members when checking boundary pairs.
    let (walk, other_id) = if first_entry.members.len() <= second_entry.members.len() {
        (first_entry, second)
    } else {
        (second_entry, first)
    };
    for &m in &walk.members {
        for n in map.neighbors4(m as usize) {
            if map.owner[n] == other_id
                && !pair_allowed(scan, m, n as u32, config.outlier_distance)
            {
                return None;
            }
        }
    }
    let mut members =
        Vec::with_capacity(first_entry.members.len() + second_entry.members.len());
    members.extend_from_slice(&first_entry.members);
    members.extend_from_slice(&second_entry.members);
    // Warm start from the larger operand's plane; ties go to the smaller id.
    let warm = if second_entry.members.len() > first_entry.members.len() {
        &second_entry.geometry
    } else {
        &first_entry.geometry
    };
    let fitted = fit_plane_radial_from(scan, &members, warm, config.parallel_eps).ok()?;
    Some(MergeCandidate {
        action: CandidateAction::Merge { first, second },
        error_increment: clamp_increment(
            fitted.residual - first_entry.residual - second_entry.residual,
        ),
        fitted,
        stamps: Stamps::Merge {
            first_generation: first_entry.generation,
            second_generation: second_entry.generation,
        },
    })
}

fn better(best: Option<MergeCandidate>, challenger: Option<MergeCandidate>) -> Option<MergeCandidate> {
    match (best, challenger) {
        (None, c) => c,
        (b, None) => b,
        (Some(b), Some(c)) => {
            if c.ordering_key() < b.ordering_key() {
                Some(c)
            } else {
                Some(b)
            }
        }
    }
}

/// Cheapest tetromino creation over the current atomic cells, if any.
pub fn best_create(
    scan: &OrganizedScan,
    map: &PlaneMap,
    config: &PpeConfig,
) -> Option<MergeCandidate> {
    let mut best = None;
    for cells in enumerate_tetrominoes(scan, map, config.outlier_distance) {
        best = better(best, evaluate_create(scan, cells));
    }
    best
}

/// Cheapest extension over all (regular plane, adjacent atomic ray) pairs.
pub fn best_extend(
    scan: &OrganizedScan,
    map: &PlaneMap,
    config: &PpeConfig,
) -> Option<MergeCandidate> {
    let mut best = None;
    for plane in map.regular_ids().collect::<Vec<_>>() {
        for ray in map.adjacent_atomic(plane) {
            best = better(best, evaluate_extend(scan, map, plane, ray, config));
        }
    }
    best
}

/// Cheapest merge over all adjacent regular plane pairs.
pub fn best_merge(
    scan: &OrganizedScan,
    map: &PlaneMap,
    config: &PpeConfig,
) -> Option<MergeCandidate> {
    let mut best = None;
    for a in map.regular_ids().collect::<Vec<_>>() {
        for b in map.adjacent_regular(a) {
            if b > a {
                best = better(best, evaluate_merge(scan, map, a, b, config));
            }
        }
    }
    best
}

#[cfg(test)]
mod tests;
