//! Segmentation comparison metrics.
//!
//! Regions of a machine segmentation are compared against ground truth with
//! the classic mutual-overlap taxonomy: a ground-truth/machine region pair is
//! a correct detection when each covers at least a threshold fraction T of
//! the other; a ground-truth region is oversegmented when two or more machine
//! regions each lie mostly (≥ T of their own size) inside it and jointly
//! cover ≥ T of it; undersegmentation is the mirror image. Remaining
//! ground-truth regions are missed, remaining machine regions are spurious.
//!
//! For T > 0.5 the correct pairs form a one-to-one matching and a region can
//! satisfy at most one of the over/under rules; where the rules could still
//! overlap through an already-matched region, classification precedence is
//! correct, then oversegmentation, then undersegmentation, with classified
//! regions excluded from later instances.
//!
//! Two scalar summaries complement the classification: the k-value, the
//! fraction of all scan pixels belonging to correctly detected ground-truth
//! planes, and the RMSE, the square root of the total squared radial error
//! of all labeled pixels divided by the number of planes.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::geometry::{intersect_ray_plane, OrganizedScan, PlaneGeometry};

/// Label 0 marks unlabeled/outlier pixels in every segmentation.
pub const OUTLIER_LABEL: u32 = 0;

/// Per-pixel plane labels plus the fitted parameters of each plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub width: usize,
    pub height: usize,
    /// Row-major plane labels; 0 = unlabeled/outlier.
    pub labels: Vec<u32>,
    pub planes: BTreeMap<u32, SegmentPlane>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentPlane {
    /// Fitted plane, when known. Label-only segmentations (e.g. loaded from
    /// a label image without a plane list) carry None.
    pub geometry: Option<PlaneGeometry>,
    pub member_count: usize,
}

impl Segmentation {
    /// Build from a label grid alone; plane geometries are unknown.
    pub fn from_labels(width: usize, height: usize, labels: Vec<u32>) -> Self {
        assert_eq!(labels.len(), width * height);
        let mut planes: BTreeMap<u32, SegmentPlane> = BTreeMap::new();
        for &label in &labels {
            if label != OUTLIER_LABEL {
                planes
                    .entry(label)
                    .or_insert(SegmentPlane {
                        geometry: None,
                        member_count: 0,
                    })
                    .member_count += 1;
            }
        }
        Self {
            width,
            height,
            labels,
            planes,
        }
    }

    /// Attach plane geometries by label.
    pub fn with_geometry(mut self, geometry: &BTreeMap<u32, PlaneGeometry>) -> Self {
        for (label, plane) in self.planes.iter_mut() {
            plane.geometry = geometry.get(label).copied();
        }
        self
    }

    pub fn label_at(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("segmentation dimensions differ: {0}×{1} vs {2}×{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("threshold {0} outside (0.5, 1]")]
    BadThreshold(f64),
    #[error("no planes to evaluate")]
    NoPlanes,
    #[error("label {0} has no plane geometry")]
    MissingGeometry(u32),
    #[error("labeled ray {0} is invalid or missed by its plane")]
    BadLabeledRay(usize),
}

/// Classification counts and scalar metrics of one comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct HooverReport {
    pub threshold: f64,
    pub gt_regions: usize,
    pub ms_regions: usize,
    /// Number of correctly detected ground-truth regions.
    pub correct: usize,
    /// correct / gt_regions.
    pub f: f64,
    pub n_o: usize,
    pub n_u: usize,
    pub n_m: usize,
    pub n_s: usize,
    /// Mean angle between ground-truth and machine normals over correct
    /// pairs, degrees; None when no pair has normals on both sides.
    pub mean_angle_deg: Option<f64>,
    /// Fraction of all pixels in correctly detected ground-truth planes.
    pub k_value: f64,
    /// Filled by [`evaluate`]; plain [`compare`] leaves it None.
    pub rmse_m: Option<f64>,
}

impl HooverReport {
    /// Human-readable summary table.
    pub fn render_table(&self) -> String {
        let rows: Vec<(&str, String)> = vec![
            ("threshold", format!("{:.2}", self.threshold)),
            ("gt regions", self.gt_regions.to_string()),
            ("ms regions", self.ms_regions.to_string()),
            ("correct", self.correct.to_string()),
            ("f [%]", format!("{:.1}", 100.0 * self.f)),
            ("k [%]", format!("{:.1}", 100.0 * self.k_value)),
            (
                "rmse [mm]",
                self.rmse_m
                    .map_or("-".to_string(), |r| format!("{:.2}", 1000.0 * r)),
            ),
            (
                "alpha [deg]",
                self.mean_angle_deg
                    .map_or("-".to_string(), |a| format!("{:.2}", a)),
            ),
            ("oversegmented", self.n_o.to_string()),
            ("undersegmented", self.n_u.to_string()),
            ("missed", self.n_m.to_string()),
            ("spurious", self.n_s.to_string()),
        ];
        let mut out = format!("{:<16} {:>10}\n", "metric", "value");
        for (name, value) in rows {
            out.push_str(&format!("{:<16} {:>10}\n", name, value));
        }
        out
    }

    /// Machine-readable records: one `name value unit` line per metric.
    pub fn render_records(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("threshold {} fraction\n", self.threshold));
        out.push_str(&format!("gt_regions {} count\n", self.gt_regions));
        out.push_str(&format!("ms_regions {} count\n", self.ms_regions));
        out.push_str(&format!("correct {} count\n", self.correct));
        out.push_str(&format!("f {} fraction\n", self.f));
        out.push_str(&format!("k {} fraction\n", self.k_value));
        if let Some(rmse) = self.rmse_m {
            out.push_str(&format!("rmse {} m\n", rmse));
        }
        if let Some(angle) = self.mean_angle_deg {
            out.push_str(&format!("alpha {} deg\n", angle));
        }
        out.push_str(&format!("n_o {} count\n", self.n_o));
        out.push_str(&format!("n_u {} count\n", self.n_u));
        out.push_str(&format!("n_m {} count\n", self.n_m));
        out.push_str(&format!("n_s {} count\n", self.n_s));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RegionClass {
    Unclassified,
    Correct,
    Over,
    Under,
}

/// Classify machine regions against ground truth at the given overlap
/// threshold and compute f, the k-value, and the mean normal angle.
pub fn compare(
    gt: &Segmentation,
    ms: &Segmentation,
    threshold: f64,
) -> Result<HooverReport, EvalError> {
    if gt.width != ms.width || gt.height != ms.height {
        return Err(EvalError::DimensionMismatch(
            gt.width, gt.height, ms.width, ms.height,
        ));
    }
    if !(threshold > 0.5 && threshold <= 1.0) {
        return Err(EvalError::BadThreshold(threshold));
    }

    // Region sizes and the pixel overlap table, nonzero labels only.
    let mut gt_size: BTreeMap<u32, usize> = BTreeMap::new();
    let mut ms_size: BTreeMap<u32, usize> = BTreeMap::new();
    let mut overlap: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (&g, &m) in gt.labels.iter().zip(ms.labels.iter()) {
        if g != OUTLIER_LABEL {
            *gt_size.entry(g).or_insert(0) += 1;
        }
        if m != OUTLIER_LABEL {
            *ms_size.entry(m).or_insert(0) += 1;
        }
        if g != OUTLIER_LABEL && m != OUTLIER_LABEL {
            *overlap.entry((g, m)).or_insert(0) += 1;
        }
    }

    let mut gt_class: BTreeMap<u32, RegionClass> = gt_size
        .keys()
        .map(|&g| (g, RegionClass::Unclassified))
        .collect();
    let mut ms_class: BTreeMap<u32, RegionClass> = ms_size
        .keys()
        .map(|&m| (m, RegionClass::Unclassified))
        .collect();

    // Correct detections: mutual overlap ≥ T. One-to-one for T > 0.5.
    let mut correct_pairs: Vec<(u32, u32)> = Vec::new();
    for (&(g, m), &o) in &overlap {
        let o = o as f64;
        if o >= threshold * gt_size[&g] as f64 && o >= threshold * ms_size[&m] as f64 {
            debug_assert_eq!(gt_class[&g], RegionClass::Unclassified);
            debug_assert_eq!(ms_class[&m], RegionClass::Unclassified);
            gt_class.insert(g, RegionClass::Correct);
            ms_class.insert(m, RegionClass::Correct);
            correct_pairs.push((g, m));
        }
    }

    // Oversegmentation: several machine regions mostly inside one ground-
    // truth region, jointly covering ≥ T of it.
    let mut n_o = 0;
    let gt_labels: Vec<u32> = gt_class.keys().copied().collect();
    for g in gt_labels {
        if gt_class[&g] != RegionClass::Unclassified {
            continue;
        }
        let mut parts = Vec::new();
        let mut covered = 0usize;
        for (&m, &m_class) in &ms_class {
            if m_class != RegionClass::Unclassified {
                continue;
            }
            if let Some(&o) = overlap.get(&(g, m)) {
                if o as f64 >= threshold * ms_size[&m] as f64 {
                    parts.push(m);
                    covered += o;
                }
            }
        }
        if parts.len() >= 2 && covered as f64 >= threshold * gt_size[&g] as f64 {
            gt_class.insert(g, RegionClass::Over);
            for m in parts {
                ms_class.insert(m, RegionClass::Over);
            }
            n_o += 1;
        }
    }

    // Undersegmentation: several ground-truth regions mostly inside one
    // machine region, jointly covering ≥ T of it.
    let mut n_u = 0;
    let ms_labels: Vec<u32> = ms_class.keys().copied().collect();
    for m in ms_labels {
        if ms_class[&m] != RegionClass::Unclassified {
            continue;
        }
        let mut parts = Vec::new();
        let mut covered = 0usize;
        for (&g, &g_class) in &gt_class {
            if g_class != RegionClass::Unclassified {
                continue;
            }
            if let Some(&o) = overlap.get(&(g, m)) {
                if o as f64 >= threshold * gt_size[&g] as f64 {
                    parts.push(g);
                    covered += o;
                }
            }
        }
        if parts.len() >= 2 && covered as f64 >= threshold * ms_size[&m] as f64 {
            ms_class.insert(m, RegionClass::Under);
            for g in parts {
                gt_class.insert(g, RegionClass::Under);
            }
            n_u += 1;
        }
    }

    let n_m = gt_class
        .values()
        .filter(|&&c| c == RegionClass::Unclassified)
        .count();
    let n_s = ms_class
        .values()
        .filter(|&&c| c == RegionClass::Unclassified)
        .count();

    let correct = correct_pairs.len();
    let f = if gt_size.is_empty() {
        0.0
    } else {
        correct as f64 / gt_size.len() as f64
    };

    // k-value: pixels of correctly detected ground-truth planes over all
    // pixels of the grid.
    let total_pixels = (gt.width * gt.height) as f64;
    let k_value = correct_pairs
        .iter()
        .map(|&(g, _)| gt_size[&g] as f64)
        .sum::<f64>()
        / total_pixels;

    // Mean angle between normals over correct pairs, sign-agnostic.
    let mut angles = Vec::new();
    for &(g, m) in &correct_pairs {
        let gt_normal = gt.planes.get(&g).and_then(|p| p.geometry).map(|p| p.normal);
        let ms_normal = ms.planes.get(&m).and_then(|p| p.geometry).map(|p| p.normal);
        if let (Some(a), Some(b)) = (gt_normal, ms_normal) {
            angles.push(a.dot(&b).abs().clamp(0.0, 1.0).acos().to_degrees());
        }
    }
    let mean_angle_deg = if angles.is_empty() {
        None
    } else {
        Some(angles.iter().sum::<f64>() / angles.len() as f64)
    };

    Ok(HooverReport {
        threshold,
        gt_regions: gt_size.len(),
        ms_regions: ms_size.len(),
        correct,
        f,
        n_o,
        n_u,
        n_m,
        n_s,
        mean_angle_deg,
        k_value,
        rmse_m: None,
    })
}

/// Fraction of all pixels belonging to correctly detected ground-truth
/// planes at the given threshold.
pub fn k_value(gt: &Segmentation, ms: &Segmentation, threshold: f64) -> Result<f64, EvalError> {
    Ok(compare(gt, ms, threshold)?.k_value)
}

/// Square root of (total squared radial error of labeled pixels against
/// their own plane) / (number of planes). With `per_plane_cutoff` set,
/// planes whose own RMSE exceeds the cutoff are excluded from both the error
/// sum and the plane count.
pub fn rmse(
    scan: &OrganizedScan,
    seg: &Segmentation,
    per_plane_cutoff: Option<f64>,
) -> Result<f64, EvalError> {
    if scan.width != seg.width || scan.height != seg.height {
        return Err(EvalError::DimensionMismatch(
            scan.width,
            scan.height,
            seg.width,
            seg.height,
        ));
    }
    if seg.planes.is_empty() {
        return Err(EvalError::NoPlanes);
    }
    let mut per_plane: BTreeMap<u32, f64> = seg.planes.keys().map(|&l| (l, 0.0)).collect();
    for (pixel, &label) in seg.labels.iter().enumerate() {
        if label == OUTLIER_LABEL {
            continue;
        }
        let plane = seg
            .planes
            .get(&label)
            .and_then(|p| p.geometry)
            .ok_or(EvalError::MissingGeometry(label))?;
        let ray = scan.ray(pixel);
        if !ray.valid {
            return Err(EvalError::BadLabeledRay(pixel));
        }
        let predicted =
            intersect_ray_plane(ray, &plane).ok_or(EvalError::BadLabeledRay(pixel))?;
        let residual = ray.range - predicted;
        *per_plane.get_mut(&label).unwrap() += residual * residual;
    }
    let mut total = 0.0;
    let mut planes = 0usize;
    for (_, error) in per_plane {
        if let Some(cutoff) = per_plane_cutoff {
            if error.sqrt() > cutoff {
                continue;
            }
        }
        total += error;
        planes += 1;
    }
    if planes == 0 {
        return Err(EvalError::NoPlanes);
    }
    Ok((total / planes as f64).sqrt())
}

/// Full comparison: classification metrics plus the RMSE of the machine
/// segmentation against the scan.
pub fn evaluate(
    scan: &OrganizedScan,
    gt: &Segmentation,
    ms: &Segmentation,
    threshold: f64,
    rmse_cutoff: Option<f64>,
) -> Result<HooverReport, EvalError> {
    let mut report = compare(gt, ms, threshold)?;
    report.rmse_m = Some(rmse(scan, ms, rmse_cutoff)?);
    Ok(report)
}

#[cfg(test)]
mod tests;
