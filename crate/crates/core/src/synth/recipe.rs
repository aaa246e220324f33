//! Scene recipes: JSON descriptions of a polyhedral world plus sensor and
//! noise parameters.
//!
//! ```json
//! {
//!   "name": "room-with-boxes",
//!   "room": {"min": [-3.0, -3.5, 0.0], "max": [3.0, 3.5, 3.0]},
//!   "objects": [
//!     {"type": "box", "params": {"size": [1.0, 0.8, 1.2]},
//!      "pose": {"position": [1.0, 1.5, 0.6], "rpy": [0.0, 0.0, 0.4]}},
//!     {"type": "polyhedron", "params": {"vertices": [[0,0,0], [1,0,0], ...]}},
//!     {"type": "random_boxes",
//!      "params": {"count": 6, "size_min": 0.4, "size_max": 1.4}},
//!     {"type": "random_polyhedra",
//!      "params": {"count": 2, "vertex_count": 10,
//!                 "radius_min": 0.3, "radius_max": 0.8}}
//!   ],
//!   "sensor": {"origin": [0.0, 0.0, 1.5],
//!              "azimuth": [-0.9, 0.9], "elevation": [-0.6, 0.6],
//!              "counts": [100, 100]},
//!   "noise": {"sigma_ang_rad": 1.745e-5, "sigma_rad_m": 0.02, "seed": 1}
//! }
//! ```
//!
//! The room is an axis-aligned box with inward-facing walls. Explicit
//! polyhedra are given by their vertices and tessellated into hull faces at
//! load time. The `random_*` object kinds are instantiated per scan from the
//! scan seed (see [`super::SCENE_STREAM`]), inside the room shrunk by the
//! object size; they require a room. Face ids are assigned sequentially from
//! 1 in construction order: room walls first, then objects in list order.

use nalgebra::Rotation3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{box_faces, convex_hull_faces, Face, SceneModel, ScanPattern, SynthError, SCENE_STREAM};
use crate::geometry::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecipe {
    pub name: String,
    #[serde(default)]
    pub room: Option<RoomSpec>,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    pub sensor: SensorSpec,
    pub noise: NoiseSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ObjectSpec {
    Box {
        params: BoxParams,
        #[serde(default)]
        pose: Option<PoseSpec>,
    },
    Polyhedron {
        params: PolyhedronParams,
        #[serde(default)]
        pose: Option<PoseSpec>,
    },
    RandomBoxes { params: RandomBoxesParams },
    RandomPolyhedra { params: RandomPolyhedraParams },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxParams {
    pub size: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyhedronParams {
    pub vertices: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomBoxesParams {
    pub count: usize,
    pub size_min: f64,
    pub size_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomPolyhedraParams {
    pub count: usize,
    pub vertex_count: usize,
    pub radius_min: f64,
    pub radius_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSpec {
    pub position: [f64; 3],
    /// Roll, pitch, yaw in radians.
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl PoseSpec {
    fn transform(&self, points: Vec<Vec3>) -> Vec<Vec3> {
        let rotation = Rotation3::from_euler_angles(self.rpy[0], self.rpy[1], self.rpy[2]);
        let translation = Vec3::from(self.position);
        points
            .into_iter()
            .map(|p| rotation * p + translation)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub origin: [f64; 3],
    /// Azimuth range in radians, swept by columns.
    pub azimuth: [f64; 2],
    /// Elevation range in radians, swept by rows.
    pub elevation: [f64; 2],
    /// [width, height].
    pub counts: [usize; 2],
}

impl SensorSpec {
    pub fn pattern(&self) -> ScanPattern {
        ScanPattern {
            origin: Vec3::from(self.origin),
            azimuth: (self.azimuth[0], self.azimuth[1]),
            elevation: (self.elevation[0], self.elevation[1]),
            width: self.counts[0],
            height: self.counts[1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma_ang_rad: f64,
    pub sigma_rad_m: f64,
    pub seed: u64,
}

impl SceneRecipe {
    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let recipe: SceneRecipe =
            serde_json::from_str(text).map_err(|e| SynthError::InvalidRecipe(e.to_string()))?;
        recipe.validate()?;
        Ok(recipe)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("recipe serializes")
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.sensor.counts[0] == 0 || self.sensor.counts[1] == 0 {
            return Err(SynthError::InvalidRecipe("sensor counts must be ≥ 1".into()));
        }
        if self.noise.sigma_ang_rad < 0.0 || self.noise.sigma_rad_m < 0.0 {
            return Err(SynthError::InvalidRecipe("noise sigmas must be ≥ 0".into()));
        }
        if let Some(room) = &self.room {
            for axis in 0..3 {
                if room.min[axis] >= room.max[axis] {
                    return Err(SynthError::InvalidRecipe(format!(
                        "room min/max inverted on axis {axis}"
                    )));
                }
            }
        }
        let has_random = self.objects.iter().any(|o| {
            matches!(
                o,
                ObjectSpec::RandomBoxes { .. } | ObjectSpec::RandomPolyhedra { .. }
            )
        });
        if has_random && self.room.is_none() {
            return Err(SynthError::InvalidRecipe(
                "random objects require a room to be placed in".into(),
            ));
        }
        Ok(())
    }

    /// Instantiate the scene for one scan seed. Explicit geometry is
    /// deterministic; random objects draw from the seed's scene stream.
    pub fn build_scene(&self, seed: u64) -> Result<SceneModel, SynthError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(SCENE_STREAM);
        let mut polygons: Vec<Vec<Vec3>> = Vec::new();

        if let Some(room) = &self.room {
            // Inward-facing: reverse the outward box faces.
            for mut face in box_faces(Vec3::from(room.min), Vec3::from(room.max)) {
                face.reverse();
                polygons.push(face);
            }
        }

        for object in &self.objects {
            match object {
                ObjectSpec::Box { params, pose } => {
                    polygons.extend(posed_box(params.size, pose));
                }
                ObjectSpec::Polyhedron { params, pose } => {
                    let vertices: Vec<Vec3> =
                        params.vertices.iter().map(|&v| Vec3::from(v)).collect();
                    let vertices = match pose {
                        Some(pose) => pose.transform(vertices),
                        None => vertices,
                    };
                    polygons.extend(convex_hull_faces(&vertices)?);
                }
                ObjectSpec::RandomBoxes { params } => {
                    let room = self.room.as_ref().expect("validated");
                    for _ in 0..params.count {
                        let size = [
                            rng.gen_range(params.size_min..=params.size_max),
                            rng.gen_range(params.size_min..=params.size_max),
                            rng.gen_range(params.size_min..=params.size_max),
                        ];
                        let pose = random_pose(&mut rng, room, size.iter().copied().fold(0.0, f64::max));
                        polygons.extend(posed_box(size, &Some(pose)));
                    }
                }
                ObjectSpec::RandomPolyhedra { params } => {
                    let room = self.room.as_ref().expect("validated");
                    if params.vertex_count < 4 {
                        return Err(SynthError::InvalidRecipe(
                            "random polyhedra need vertex_count ≥ 4".into(),
                        ));
                    }
                    for _ in 0..params.count {
                        let radius = rng.gen_range(params.radius_min..=params.radius_max);
                        let pose = random_pose(&mut rng, room, 2.0 * radius);
                        let mut vertices = Vec::with_capacity(params.vertex_count);
                        for _ in 0..params.vertex_count {
                            // Uniform direction via rejection sampling.
                            let v = loop {
                                let v = Vec3::new(
                                    rng.gen_range(-1.0..1.0),
                                    rng.gen_range(-1.0..1.0),
                                    rng.gen_range(-1.0..1.0),
                                );
                                let norm = v.norm();
                                if norm > 1e-3 && norm <= 1.0 {
                                    break v / norm;
                                }
                            };
                            vertices.push(v * radius);
                        }
                        polygons.extend(convex_hull_faces(&pose.transform(vertices))?);
                    }
                }
            }
        }

        let mut faces = Vec::with_capacity(polygons.len());
        for (index, polygon) in polygons.into_iter().enumerate() {
            faces.push(Face::new(index as u32 + 1, polygon)?);
        }
        Ok(SceneModel::new(self.name.clone(), faces))
    }
}

fn posed_box(size: [f64; 3], pose: &Option<PoseSpec>) -> Vec<Vec<Vec3>> {
    let half = Vec3::from(size) / 2.0;
    let faces = box_faces(-half, half);
    match pose {
        Some(pose) => faces.into_iter().map(|f| pose.transform(f)).collect(),
        None => faces,
    }
}

/// Uniform position inside the room with a margin, uniform yaw.
fn random_pose(rng: &mut ChaCha8Rng, room: &RoomSpec, extent: f64) -> PoseSpec {
    let margin = extent / 2.0 + 0.05;
    let mut position = [0.0; 3];
    for axis in 0..3 {
        let lo = room.min[axis] + margin;
        let hi = (room.max[axis] - margin).max(lo + 1e-6);
        position[axis] = rng.gen_range(lo..hi);
    }
    PoseSpec {
        position,
        rpy: [0.0, 0.0, rng.gen_range(0.0..std::f64::consts::TAU)],
    }
}
