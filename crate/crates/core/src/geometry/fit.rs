//! Maximum-likelihood radial plane fitting.
//!
//! The fit minimizes the sum of squared radial residuals of a set of rays,
//! `F(n, c) = Σ_q (r_q − (c − n·s_q)/(n·v_q))²`, over unit normals `n` and
//! offsets `c`. It starts from the orthogonal PCA plane and refines with
//! Gauss-Newton on a 2-dof tangent parameterization of the normal plus the
//! offset, using backtracking line search. The refinement is monotone, so
//! the returned radial error never exceeds the PCA plane's radial error.
//!
//! Member indices are sorted internally, which makes the result bit-identical
//! under permutation of the member set.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use super::{OrganizedScan, PlaneGeometry, Vec3, PARALLEL_EPS};

const MAX_ITERATIONS: usize = 50;
const RELATIVE_DECREASE_TOL: f64 = 1e-12;
/// Relative eigenvalue threshold below which a point set counts as collinear.
const COLLINEAR_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FitError {
    #[error("member endpoints are collinear; the plane is underdetermined")]
    DegenerateSet,
    #[error("radial refinement failed to produce a usable plane")]
    NoConvergence,
}

/// Result of a radial plane fit: the plane and the attained minimum of the
/// sum of squared radial residuals (m²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialFit {
    pub geometry: PlaneGeometry,
    pub residual: f64,
}

/// Orthogonal least-squares plane: support = centroid, normal = eigenvector
/// of the smallest scatter eigenvalue, oriented toward the sensor origin.
pub fn pca_plane(points: &[Vec3], origin: &Vec3) -> Result<PlaneGeometry, FitError> {
    assert!(points.len() >= 3);
    let centroid = points.iter().sum::<Vec3>() / points.len() as f64;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        scatter += d * d.transpose();
    }
    let eigen = scatter.symmetric_eigen();
    // Ascending order of eigenvalues, without assuming nalgebra's ordering.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eigen.eigenvalues[a].total_cmp(&eigen.eigenvalues[b]));
    let [lo, mid, hi] = order;
    if eigen.eigenvalues[mid] <= COLLINEAR_EPS * eigen.eigenvalues[hi].max(f64::MIN_POSITIVE) {
        return Err(FitError::DegenerateSet);
    }
    let mut normal = eigen.eigenvectors.column(lo).into_owned();
    normal /= normal.norm();
    let toward_origin = normal.dot(&(origin - centroid));
    if toward_origin < 0.0 {
        normal = -normal;
    } else if toward_origin == 0.0 {
        normal = canonical_sign(normal);
    }
    Ok(PlaneGeometry::new(centroid, normal))
}

fn canonical_sign(normal: Vec3) -> Vec3 {
    let lead = normal
        .iter()
        .copied()
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap();
    if lead < 0.0 {
        -normal
    } else {
        normal
    }
}

/// Deterministic orthonormal basis of the tangent plane at a unit normal.
/// Used as the chart for Gauss-Newton steps and for the exposed gradient.
pub fn tangent_basis(normal: &Vec3) -> (Vec3, Vec3) {
    let mut smallest = 0;
    for axis in 1..3 {
        if normal[axis].abs() < normal[smallest].abs() {
            smallest = axis;
        }
    }
    let mut axis = Vec3::zeros();
    axis[smallest] = 1.0;
    let t1 = axis.cross(normal).normalize();
    let t2 = normal.cross(&t1);
    (t1, t2)
}

/// Sum of squared radial residuals of `members` against `plane`, or None if
/// any member ray is near-parallel to the plane (|n·v| < eps) or intersects
/// it behind the sensor.
pub fn radial_objective(
    scan: &OrganizedScan,
    members: &[u32],
    plane: &PlaneGeometry,
    eps_parallel: f64,
) -> Option<f64> {
    let normal = plane.normal;
    let offset = plane.offset();
    let mut total = 0.0;
    for &q in members {
        let ray = scan.ray(q as usize);
        let denom = normal.dot(&ray.direction);
        if denom.abs() < eps_parallel {
            return None;
        }
        let predicted = (offset - normal.dot(&ray.start)) / denom;
        if predicted <= 0.0 {
            return None;
        }
        let residual = ray.range - predicted;
        total += residual * residual;
    }
    Some(total)
}

/// Objective value and its gradient in the chart (t1-step, t2-step, offset),
/// where (t1, t2) = [`tangent_basis`] of the plane normal.
pub fn radial_objective_with_gradient(
    scan: &OrganizedScan,
    members: &[u32],
    plane: &PlaneGeometry,
    eps_parallel: f64,
) -> Option<(f64, Vector3<f64>)> {
    let normal = plane.normal;
    let offset = plane.offset();
    let (t1, t2) = tangent_basis(&normal);
    let mut total = 0.0;
    let mut gradient = Vector3::zeros();
    for &q in members {
        let ray = scan.ray(q as usize);
        let denom = normal.dot(&ray.direction);
        if denom.abs() < eps_parallel {
            return None;
        }
        let predicted = (offset - normal.dot(&ray.start)) / denom;
        if predicted <= 0.0 {
            return None;
        }
        let residual = ray.range - predicted;
        total += residual * residual;
        // d r̂ / d n, with c held fixed.
        let dpred_dn = -(ray.start + predicted * ray.direction) / denom;
        let dpred = Vector3::new(dpred_dn.dot(&t1), dpred_dn.dot(&t2), 1.0 / denom);
        // df/dθ = −dr̂/dθ, so ∇F = Σ 2 f · (−dr̂/dθ).
        gradient -= 2.0 * residual * dpred;
    }
    Some((total, gradient))
}

/// Fit a plane to the given rays, minimizing squared radial residuals.
/// Initializes from the PCA plane of the endpoints.
pub fn fit_plane_radial(scan: &OrganizedScan, members: &[u32]) -> Result<RadialFit, FitError> {
    let sorted = sorted_members(members);
    let points: Vec<Vec3> = sorted
        .iter()
        .map(|&q| scan.ray(q as usize).endpoint())
        .collect();
    let origin = scan.ray(sorted[0] as usize).start;
    let init = pca_plane(&points, &origin)?;
    refine(scan, &sorted, &init, PARALLEL_EPS)
}

/// Fit with an explicit starting plane, e.g. the current fit of a plane that
/// is being extended. Skips the PCA initializer.
pub fn fit_plane_radial_from(
    scan: &OrganizedScan,
    members: &[u32],
    init: &PlaneGeometry,
    eps_parallel: f64,
) -> Result<RadialFit, FitError> {
    let sorted = sorted_members(members);
    refine(scan, &sorted, init, eps_parallel)
}

fn sorted_members(members: &[u32]) -> Vec<u32> {
    assert!(members.len() >= 3);
    let mut sorted = members.to_vec();
    sorted.sort_unstable();
    sorted
}

fn refine(
    scan: &OrganizedScan,
    members: &[u32],
    init: &PlaneGeometry,
    eps_parallel: f64,
) -> Result<RadialFit, FitError> {
    let mut normal = init.normal;
    let mut offset = init.offset();
    let mut objective = evaluate(scan, members, &normal, offset, eps_parallel)
        .ok_or(FitError::NoConvergence)?;

    for _ in 0..MAX_ITERATIONS {
        if objective == 0.0 {
            break;
        }
        let Some((jtj, jtf)) = normal_equations(scan, members, &normal, offset, eps_parallel)
        else {
            return Err(FitError::NoConvergence);
        };
        let Some(step) = solve_damped(&jtj, &jtf) else {
            break;
        };
        let (t1, t2) = tangent_basis(&normal);

        // Backtracking line search; reject infeasible trial planes outright.
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial_normal = (normal + alpha * (step[0] * t1 + step[1] * t2)).normalize();
            let trial_offset = offset + alpha * step[2];
            if let Some(value) =
                evaluate(scan, members, &trial_normal, trial_offset, eps_parallel)
            {
                if value < objective {
                    accepted = Some((trial_normal, trial_offset, value));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((new_normal, new_offset, new_objective)) = accepted else {
            break;
        };
        let decrease = objective - new_objective;
        normal = new_normal;
        offset = new_offset;
        objective = new_objective;
        if decrease < RELATIVE_DECREASE_TOL * objective {
            break;
        }
    }

    // Orient the normal toward the sensor: n·v < 0 for the majority of rays.
    let facing_away = members
        .iter()
        .filter(|&&q| normal.dot(&scan.ray(q as usize).direction) > 0.0)
        .count();
    if 2 * facing_away > members.len() {
        normal = -normal;
        offset = -offset;
    }
    let geometry = PlaneGeometry::from_normal_offset(normal, offset);
    let residual =
        radial_objective(scan, members, &geometry, eps_parallel).ok_or(FitError::NoConvergence)?;
    Ok(RadialFit { geometry, residual })
}

fn evaluate(
    scan: &OrganizedScan,
    members: &[u32],
    normal: &Vec3,
    offset: f64,
    eps_parallel: f64,
) -> Option<f64> {
    let plane = PlaneGeometry::from_normal_offset(*normal, offset);
    radial_objective(scan, members, &plane, eps_parallel)
}

/// Gauss-Newton normal equations in the chart (t1-step, t2-step, offset).
/// Returns JᵀJ and −Jᵀf, so the step solves JᵀJ Δ = −Jᵀf directly.
fn normal_equations(
    scan: &OrganizedScan,
    members: &[u32],
    normal: &Vec3,
    offset: f64,
    eps_parallel: f64,
) -> Option<(Matrix3<f64>, Vector3<f64>)> {
    let (t1, t2) = tangent_basis(normal);
    let mut jtj = Matrix3::zeros();
    let mut neg_jtf = Vector3::zeros();
    for &q in members {
        let ray = scan.ray(q as usize);
        let denom = normal.dot(&ray.direction);
        if denom.abs() < eps_parallel {
            return None;
        }
        let predicted = (offset - normal.dot(&ray.start)) / denom;
        let residual = ray.range - predicted;
        let dpred_dn = -(ray.start + predicted * ray.direction) / denom;
        // J rows are −dr̂/dθ; the sign cancels in JᵀJ but not in Jᵀf.
        let dpred = Vector3::new(dpred_dn.dot(&t1), dpred_dn.dot(&t2), 1.0 / denom);
        jtj += dpred * dpred.transpose();
        neg_jtf += residual * dpred;
    }
    Some((jtj, neg_jtf))
}

/// Solve (JᵀJ + λI) Δ = rhs, escalating the damping if the system is
/// numerically singular.
fn solve_damped(jtj: &Matrix3<f64>, rhs: &Vector3<f64>) -> Option<Vector3<f64>> {
    let scale = jtj.diagonal().max().max(f64::MIN_POSITIVE);
    let mut damping = 0.0;
    for _ in 0..6 {
        let system = jtj + Matrix3::identity() * damping;
        if let Some(chol) = system.cholesky() {
            return Some(chol.solve(rhs));
        }
        damping = if damping == 0.0 {
            scale * 1e-12
        } else {
            damping * 100.0
        };
    }
    None
}
