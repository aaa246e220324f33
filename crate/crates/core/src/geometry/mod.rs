//! Rays, planes, the squared radial error functional, and plane fitting.
//!
//! A measurement is a ray: start point `s`, unit direction `v`, and measured
//! range `r`. A plane is a support point `x` with unit normal `n`. The range
//! predicted by a plane along a ray is the distance to their intersection,
//! `t = n·(x − s) / (n·v)`, and the scan error is the sum of squared
//! differences between measured and predicted ranges. All residuals here are
//! radial (along the ray), not orthogonal point-to-plane distances.

mod fit;

use std::collections::BTreeMap;

use nalgebra::Vector3;
use thiserror::Error;

pub use fit::{
    fit_plane_radial, fit_plane_radial_from, pca_plane, radial_objective,
    radial_objective_with_gradient, tangent_basis, FitError, RadialFit,
};

pub type Vec3 = Vector3<f64>;

/// Rays closer to parallel than this (measured as |n·v|) do not produce a
/// usable intersection; candidates containing such rays are infeasible.
pub const PARALLEL_EPS: f64 = 1e-6;

/// One laser measurement: start point, unit direction, measured range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub start: Vec3,
    pub direction: Vec3,
    pub range: f64,
    pub valid: bool,
}

impl Ray {
    /// A valid measurement. `direction` must already be unit length and
    /// `range` positive; this is debug-asserted, not normalized away.
    pub fn new(start: Vec3, direction: Vec3, range: f64) -> Self {
        debug_assert!((direction.norm() - 1.0).abs() < 1e-9);
        debug_assert!(range > 0.0);
        Self {
            start,
            direction,
            range,
            valid: true,
        }
    }

    /// A dropout (no return). Carries a canonical placeholder direction so
    /// that scans round-trip exactly through files.
    pub fn invalid(start: Vec3) -> Self {
        Self {
            start,
            direction: Vec3::new(0.0, 0.0, 1.0),
            range: 0.0,
            valid: false,
        }
    }

    /// Reconstruct a ray from its endpoint, as stored in scan files.
    pub fn from_endpoint(start: Vec3, endpoint: Vec3) -> Self {
        let delta = endpoint - start;
        let range = delta.norm();
        Self {
            start,
            direction: delta / range,
            range,
            valid: true,
        }
    }

    /// The measured reflection point `s + r v`.
    pub fn endpoint(&self) -> Vec3 {
        self.start + self.range * self.direction
    }
}

/// A grid of rays, row-major, with the radial noise level of the sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OrganizedScan {
    pub width: usize,
    pub height: usize,
    pub rays: Vec<Ray>,
    pub noise_sigma: f64,
}

impl OrganizedScan {
    pub fn new(width: usize, height: usize, rays: Vec<Ray>, noise_sigma: f64) -> Self {
        assert_eq!(rays.len(), width * height);
        assert!(noise_sigma > 0.0);
        Self {
            width,
            height,
            rays,
            noise_sigma,
        }
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn ray(&self, index: usize) -> &Ray {
        &self.rays[index]
    }

    /// Indices of all valid rays, in row-major order.
    pub fn valid_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.rays
            .iter()
            .enumerate()
            .filter(|(_, r)| r.valid)
            .map(|(i, _)| i)
    }

    pub fn valid_count(&self) -> usize {
        self.rays.iter().filter(|r| r.valid).count()
    }

    /// 4-connected neighbors of a grid cell, in row-major order.
    pub fn neighbors4(&self, index: usize) -> impl Iterator<Item = usize> + '_ {
        let (row, col) = (index / self.width, index % self.width);
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
}

/// Infinite plane: support point and unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneGeometry {
    pub support: Vec3,
    pub normal: Vec3,
}

impl PlaneGeometry {
    pub fn new(support: Vec3, normal: Vec3) -> Self {
        debug_assert!((normal.norm() - 1.0).abs() < 1e-9);
        Self { support, normal }
    }

    /// Build from a unit normal and signed offset `c` so that `n·p = c` on
    /// the plane. The support point is `c·n`.
    pub fn from_normal_offset(normal: Vec3, offset: f64) -> Self {
        Self::new(normal * offset, normal)
    }

    /// Signed offset `c = n·x` of the plane equation `n·p = c`.
    pub fn offset(&self) -> f64 {
        self.normal.dot(&self.support)
    }

    /// Orthogonal (perpendicular) distance from a point to the plane.
    pub fn orthogonal_distance(&self, point: &Vec3) -> f64 {
        (self.normal.dot(point) - self.offset()).abs()
    }
}

/// A plane together with the rays it explains. Atomic planes represent a
/// single reflection exactly: support = endpoint, normal = ray direction.
/// Regular planes are fitted to three or more rays.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub geometry: PlaneGeometry,
    /// Member ray indices, sorted ascending.
    pub members: Vec<u32>,
    pub atomic: bool,
}

impl Plane {
    pub fn atomic_for(ray_index: u32, ray: &Ray) -> Self {
        Self {
            geometry: PlaneGeometry::new(ray.endpoint(), ray.direction),
            members: vec![ray_index],
            atomic: true,
        }
    }

    pub fn regular(geometry: PlaneGeometry, mut members: Vec<u32>) -> Self {
        assert!(members.len() >= 3);
        members.sort_unstable();
        Self {
            geometry,
            members,
            atomic: false,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GeometryError {
    #[error("ray {ray} is assigned to a plane that does not intersect it")]
    NoIntersection { ray: u32 },
    #[error("invalid ray {ray} appears in the assignment")]
    InvalidRay { ray: u32 },
}

/// Distance along the ray to the plane, if the ray hits it in front of the
/// sensor. Absence (parallel ray or intersection behind the start point) is
/// a value, not an error.
#[inline]
pub fn intersect_ray_plane(ray: &Ray, plane: &PlaneGeometry) -> Option<f64> {
    intersect_ray_plane_eps(ray, plane, PARALLEL_EPS)
}

#[inline]
pub fn intersect_ray_plane_eps(ray: &Ray, plane: &PlaneGeometry, eps: f64) -> Option<f64> {
    let denom = plane.normal.dot(&ray.direction);
    if denom.abs() < eps {
        return None;
    }
    let t = plane.normal.dot(&(plane.support - ray.start)) / denom;
    (t > 0.0).then_some(t)
}

/// Range predicted by a set of planes: distance to the first (nearest
/// positive) intersection, if any.
pub fn predicted_range(ray: &Ray, planes: &[PlaneGeometry]) -> Option<f64> {
    planes
        .iter()
        .filter_map(|p| intersect_ray_plane(ray, p))
        .min_by(f64::total_cmp)
}

/// Sum of squared radial residuals over the assigned rays, each ray scored
/// against its own plane. Unassigned rays contribute nothing.
pub fn scan_error(
    scan: &OrganizedScan,
    assignment: &BTreeMap<u32, PlaneGeometry>,
) -> Result<f64, GeometryError> {
    let mut total = 0.0;
    for (&ray_index, plane) in assignment {
        let ray = scan.ray(ray_index as usize);
        if !ray.valid {
            return Err(GeometryError::InvalidRay { ray: ray_index });
        }
        let predicted =
            intersect_ray_plane(ray, plane).ok_or(GeometryError::NoIntersection { ray: ray_index })?;
        let residual = ray.range - predicted;
        total += residual * residual;
    }
    Ok(total)
}
