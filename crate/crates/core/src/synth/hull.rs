//! Convex hull of a small point set, as polygon faces.
//!
//! Brute force over supporting planes: every point triple spans a candidate
//! plane; if all points lie on one side it is a hull plane. Coplanar hull
//! points are grouped per plane and ordered into one convex polygon, so a box
//! given by its 8 corners yields 6 quads, not 12 triangles. Intended for
//! object tessellation (tens of vertices), not large clouds.

use super::SynthError;
use crate::geometry::Vec3;

const PLANE_TOL: f64 = 1e-9;

/// Faces of the convex hull, each a convex polygon with outward-ordered
/// vertices. Fails on degenerate input (fewer than 4 points or all points
/// coplanar).
pub fn convex_hull_faces(points: &[Vec3]) -> Result<Vec<Vec<Vec3>>, SynthError> {
    if points.len() < 4 {
        return Err(SynthError::InvalidRecipe(format!(
            "hull needs at least 4 vertices, got {}",
            points.len()
        )));
    }
    let scale = points
        .iter()
        .map(|p| p.norm())
        .fold(1.0_f64, f64::max);
    let tol = PLANE_TOL * scale;

    // Supporting planes, deduplicated by (normal, offset).
    let mut planes: Vec<(Vec3, f64)> = Vec::new();
    let n = points.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let normal = (points[j] - points[i]).cross(&(points[k] - points[i]));
                let len = normal.norm();
                if len < tol {
                    continue;
                }
                let mut normal = normal / len;
                let mut offset = normal.dot(&points[i]);
                let mut above = false;
                let mut below = false;
                for p in points {
                    let d = normal.dot(p) - offset;
                    if d > tol {
                        above = true;
                    } else if d < -tol {
                        below = true;
                    }
                }
                if above && below {
                    continue;
                }
                // Orient outward: all points on or below the plane.
                if above {
                    normal = -normal;
                    offset = -offset;
                }
                if !planes
                    .iter()
                    .any(|(pn, po)| pn.dot(&normal) > 1.0 - 1e-9 && (po - offset).abs() <= tol)
                {
                    planes.push((normal, offset));
                }
            }
        }
    }
    if planes.len() < 4 {
        return Err(SynthError::InvalidRecipe(
            "degenerate polyhedron: all vertices coplanar".into(),
        ));
    }

    let mut faces = Vec::with_capacity(planes.len());
    for (normal, offset) in planes {
        let members: Vec<Vec3> = points
            .iter()
            .filter(|p| (normal.dot(p) - offset).abs() <= tol)
            .copied()
            .collect();
        faces.push(order_convex(&members, &normal));
    }
    Ok(faces)
}

/// Order coplanar points counter-clockwise around the normal by angle about
/// their centroid. All hull-face point sets are convex, so angular order is
/// the polygon order.
fn order_convex(points: &[Vec3], normal: &Vec3) -> Vec<Vec3> {
    let centroid = points.iter().sum::<Vec3>() / points.len() as f64;
    let (t1, t2) = crate::geometry::tangent_basis(normal);
    let mut angled: Vec<(f64, Vec3)> = points
        .iter()
        .map(|p| {
            let d = p - centroid;
            (d.dot(&t2).atan2(d.dot(&t1)), *p)
        })
        .collect();
    angled.sort_by(|a, b| a.0.total_cmp(&b.0));
    // tangent_basis yields a right-handed (t1, t2, n) frame, so increasing
    // angle is counter-clockwise around n.
    angled.into_iter().map(|(_, p)| p).collect()
}
