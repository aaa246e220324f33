//! Synthetic benchmark scans.
//!
//! A scene is a set of planar convex faces with unique ground-truth ids. A
//! spherical scan pattern raycasts the scene into an organized scan with
//! per-pixel face labels; a noise model then perturbs each ray direction by a
//! small random rotation, re-intersects the scene (so angular noise couples
//! into range exactly as it does for a real scanner, strongest at grazing
//! incidence), and finally adds radial Gaussian noise.
//!
//! All randomness is counter-based: every pixel draws from its own ChaCha8
//! stream (stream = pixel index, seeded by the scan seed), so generation is
//! deterministic regardless of evaluation order, and scene randomization uses
//! the dedicated [`SCENE_STREAM`].

mod hull;
mod recipe;

use nalgebra::{Rotation3, Unit};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use thiserror::Error;

use crate::eval::{Segmentation, SegmentPlane};
use crate::geometry::{OrganizedScan, PlaneGeometry, Ray, Vec3};

pub use hull::convex_hull_faces;
pub use recipe::{
    NoiseSpec, ObjectSpec, PoseSpec, RoomSpec, SceneRecipe, SensorSpec,
};

/// ChaCha stream reserved for scene randomization; pixel noise streams use
/// the pixel index, which is always far below this.
pub const SCENE_STREAM: u64 = u64::MAX;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),
    #[error("invalid face {id}: {reason}")]
    InvalidFace { id: u32, reason: String },
}

/// A planar convex face with a unique ground-truth id.
#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    pub id: u32,
    /// Vertices ordered counter-clockwise around the outward normal.
    pub vertices: Vec<Vec3>,
    plane: PlaneGeometry,
}

impl Face {
    /// Validates vertex count and coplanarity (1e-9 m) and normalizes the
    /// winding to counter-clockwise around the normal.
    pub fn new(id: u32, vertices: Vec<Vec3>) -> Result<Self, SynthError> {
        if vertices.len() < 3 {
            return Err(SynthError::InvalidFace {
                id,
                reason: format!("{} vertices", vertices.len()),
            });
        }
        let normal = newell_normal(&vertices).ok_or(SynthError::InvalidFace {
            id,
            reason: "degenerate polygon".into(),
        })?;
        let centroid = vertices.iter().sum::<Vec3>() / vertices.len() as f64;
        let plane = PlaneGeometry::new(centroid, normal);
        for v in &vertices {
            if plane.orthogonal_distance(v) > 1e-9 {
                return Err(SynthError::InvalidFace {
                    id,
                    reason: format!("vertex off plane by {}", plane.orthogonal_distance(v)),
                });
            }
        }
        Ok(Self {
            id,
            vertices,
            plane,
        })
    }

    pub fn plane(&self) -> PlaneGeometry {
        self.plane
    }

    /// Distance along the ray to this face, if the ray hits the polygon.
    pub fn intersect(&self, origin: &Vec3, direction: &Vec3) -> Option<f64> {
        let denom = self.plane.normal.dot(direction);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = self.plane.normal.dot(&(self.plane.support - origin)) / denom;
        if t <= 0.0 {
            return None;
        }
        let point = origin + t * direction;
        self.contains(&point).then_some(t)
    }

    /// Point-in-convex-polygon test for points on the face plane; edges are
    /// inclusive.
    pub fn contains(&self, point: &Vec3) -> bool {
        let n = self.vertices.len();
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let edge = b - a;
            let side = edge.cross(&(point - a)).dot(&self.plane.normal);
            if side < -1e-9 * edge.norm() {
                return false;
            }
        }
        true
    }
}

/// Polygon normal by Newell's method; None for degenerate polygons.
fn newell_normal(vertices: &[Vec3]) -> Option<Vec3> {
    let mut normal = Vec3::zeros();
    for i in 0..vertices.len() {
        let a = vertices[i];
        let b = vertices[(i + 1) % vertices.len()];
        normal += Vec3::new(
            (a.y - b.y) * (a.z + b.z),
            (a.z - b.z) * (a.x + b.x),
            (a.x - b.x) * (a.y + b.y),
        );
    }
    let len = normal.norm();
    (len > 1e-12).then(|| normal / len)
}

/// A polyhedral world with labeled faces.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    pub name: String,
    pub faces: Vec<Face>,
}

impl SceneModel {
    pub fn new(name: impl Into<String>, faces: Vec<Face>) -> Self {
        Self {
            name: name.into(),
            faces,
        }
    }

    /// Nearest face hit by a ray: (face index, distance). Ties go to the
    /// earlier face.
    pub fn nearest_hit(&self, origin: &Vec3, direction: &Vec3) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (index, face) in self.faces.iter().enumerate() {
            if let Some(t) = face.intersect(origin, direction) {
                if best.is_none_or(|(_, bt)| t < bt) {
                    best = Some((index, t));
                }
            }
        }
        best
    }
}

/// Equiangular spherical scan grid. Row r sweeps elevation, column c sweeps
/// azimuth; single-count axes use the midpoint of their range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPattern {
    pub origin: Vec3,
    pub azimuth: (f64, f64),
    pub elevation: (f64, f64),
    pub width: usize,
    pub height: usize,
}

impl ScanPattern {
    pub fn direction(&self, row: usize, col: usize) -> Vec3 {
        let azimuth = interpolate(self.azimuth, col, self.width);
        let elevation = interpolate(self.elevation, row, self.height);
        Vec3::new(
            elevation.cos() * azimuth.cos(),
            elevation.cos() * azimuth.sin(),
            elevation.sin(),
        )
    }
}

fn interpolate(range: (f64, f64), index: usize, count: usize) -> f64 {
    if count == 1 {
        (range.0 + range.1) / 2.0
    } else {
        range.0 + (range.1 - range.0) * index as f64 / (count - 1) as f64
    }
}

/// Gaussian sensor noise: angular perturbation of the ray direction and
/// additive radial noise, deterministic per seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma_angular: f64,
    pub sigma_radial: f64,
    pub rng_seed: u64,
}

/// Noise-free raycast of the scene: per pixel the nearest face hit, its
/// distance as range, and its face id as label; misses become invalid pixels
/// with label 0.
pub fn raycast(scene: &SceneModel, pattern: &ScanPattern, noise_sigma: f64) -> (OrganizedScan, Segmentation) {
    assert!(!scene.faces.is_empty());
    let cells = pattern.width * pattern.height;
    let mut rays = Vec::with_capacity(cells);
    let mut labels = Vec::with_capacity(cells);
    for row in 0..pattern.height {
        for col in 0..pattern.width {
            let direction = pattern.direction(row, col);
            match scene.nearest_hit(&pattern.origin, &direction) {
                Some((face_index, t)) => {
                    rays.push(Ray::new(pattern.origin, direction, t));
                    labels.push(scene.faces[face_index].id);
                }
                None => {
                    rays.push(Ray::invalid(pattern.origin));
                    labels.push(0);
                }
            }
        }
    }
    let scan = OrganizedScan::new(pattern.width, pattern.height, rays, noise_sigma.max(1e-12));
    let segmentation = ground_truth_segmentation(scene, pattern.width, pattern.height, labels);
    (scan, segmentation)
}

fn ground_truth_segmentation(
    scene: &SceneModel,
    width: usize,
    height: usize,
    labels: Vec<u32>,
) -> Segmentation {
    let mut segmentation = Segmentation::from_labels(width, height, labels);
    for face in &scene.faces {
        if let Some(plane) = segmentation.planes.get_mut(&face.id) {
            plane.geometry = Some(face.plane);
        }
    }
    segmentation
}

/// ChaCha8 generator for one pixel of one scan.
fn pixel_rng(seed: u64, pixel: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pixel as u64);
    rng
}

/// Apply sensor noise to a noise-free raycast. Each valid ray's direction is
/// rotated by an angle ~ N(0, σ_ang²) about a uniformly random perpendicular
/// axis, the perturbed ray is re-intersected with the scene (updating range,
/// label, and validity), and the resulting range receives additive
/// N(0, σ_rad²) noise. Per-pixel draw order: angle, axis, radial.
pub fn add_noise(
    scene: &SceneModel,
    scan: &OrganizedScan,
    labels: &Segmentation,
    noise: &NoiseModel,
) -> (OrganizedScan, Segmentation) {
    let mut rays = scan.rays.clone();
    let mut new_labels = labels.labels.clone();
    let angular = (noise.sigma_angular > 0.0)
        .then(|| Normal::new(0.0, noise.sigma_angular).unwrap());
    let radial = (noise.sigma_radial > 0.0)
        .then(|| Normal::new(0.0, noise.sigma_radial).unwrap());
    let axis_angle = Uniform::new(0.0, std::f64::consts::TAU);
    for pixel in 0..rays.len() {
        if !rays[pixel].valid {
            continue;
        }
        let mut rng = pixel_rng(noise.rng_seed, pixel);
        if let Some(angular) = &angular {
            let angle: f64 = angular.sample(&mut rng);
            let phi: f64 = axis_angle.sample(&mut rng);
            let direction = rays[pixel].direction;
            let (t1, t2) = crate::geometry::tangent_basis(&direction);
            let axis = Unit::new_normalize(phi.cos() * t1 + phi.sin() * t2);
            let rotated = Rotation3::from_axis_angle(&axis, angle) * direction;
            let perturbed = rotated.normalize();
            match scene.nearest_hit(&rays[pixel].start, &perturbed) {
                Some((face_index, t)) => {
                    rays[pixel] = Ray::new(rays[pixel].start, perturbed, t);
                    new_labels[pixel] = scene.faces[face_index].id;
                }
                None => {
                    rays[pixel] = Ray::invalid(rays[pixel].start);
                    new_labels[pixel] = 0;
                    continue;
                }
            }
        }
        if let Some(radial) = &radial {
            let delta: f64 = radial.sample(&mut rng);
            let ray = &mut rays[pixel];
            ray.range += delta;
            if ray.range <= 0.0 {
                *ray = Ray::invalid(ray.start);
                new_labels[pixel] = 0;
            }
        }
    }
    let noisy = OrganizedScan::new(
        scan.width,
        scan.height,
        rays,
        noise.sigma_radial.max(1e-12),
    );
    let segmentation = ground_truth_segmentation(scene, scan.width, scan.height, new_labels);
    (noisy, segmentation)
}

/// Generate one benchmark scan per seed: instantiate the recipe's scene
/// (randomized objects draw from the scan seed), raycast, and apply the
/// recipe's noise model with the scan seed.
pub fn generate_benchmark(
    recipe: &SceneRecipe,
    seeds: &[u64],
) -> Result<Vec<(OrganizedScan, Segmentation)>, SynthError> {
    let mut scans = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        scans.push(generate_scan(recipe, seed)?);
    }
    Ok(scans)
}

/// Generate a single benchmark scan for one seed.
pub fn generate_scan(
    recipe: &SceneRecipe,
    seed: u64,
) -> Result<(OrganizedScan, Segmentation), SynthError> {
    let scene = recipe.build_scene(seed)?;
    let pattern = recipe.sensor.pattern();
    let (scan, labels) = raycast(&scene, &pattern, recipe.noise.sigma_rad_m);
    let noise = NoiseModel {
        sigma_angular: recipe.noise.sigma_ang_rad,
        sigma_radial: recipe.noise.sigma_rad_m,
        rng_seed: seed,
    };
    Ok(add_noise(&scene, &scan, &labels, &noise))
}

/// Axis-aligned box faces, outward-facing, for object construction.
pub fn box_faces(min: Vec3, max: Vec3) -> Vec<Vec<Vec3>> {
    let v = |x: f64, y: f64, z: f64| Vec3::new(x, y, z);
    vec![
        // -z, +z
        vec![v(min.x, min.y, min.z), v(min.x, max.y, min.z), v(max.x, max.y, min.z), v(max.x, min.y, min.z)],
        vec![v(min.x, min.y, max.z), v(max.x, min.y, max.z), v(max.x, max.y, max.z), v(min.x, max.y, max.z)],
        // -y, +y
        vec![v(min.x, min.y, min.z), v(max.x, min.y, min.z), v(max.x, min.y, max.z), v(min.x, min.y, max.z)],
        vec![v(min.x, max.y, min.z), v(min.x, max.y, max.z), v(max.x, max.y, max.z), v(max.x, max.y, min.z)],
        // -x, +x
        vec![v(min.x, min.y, min.z), v(min.x, min.y, max.z), v(min.x, max.y, max.z), v(min.x, max.y, min.z)],
        vec![v(max.x, min.y, min.z), v(max.x, max.y, min.z), v(max.x, max.y, max.z), v(max.x, min.y, max.z)],
    ]
}
