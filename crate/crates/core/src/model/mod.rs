//! Parametric body model: shape blendshapes, linear blend skinning,
//! landmark regression and marker extrusion along surface normals.

mod desk;
mod file;
mod skin;

use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, param, Error, Result};
use crate::rotation;

pub use desk::{desk_body, desk_body_alternate, toy_model, DeskLayout};
pub use file::{LandmarkEntry, ModelFile};
pub use skin::{extract_landmarks, skin, vertex_normals, Normals, SkinState};

/// Default marker extrusion distance in meters.
pub const DEFAULT_MARKER_RADIUS: f64 = 0.0095;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LandmarkKind {
    Marker,
    Joint,
}

/// One row of the landmark regressor, resolved to vertex weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkDef {
    pub name: String,
    pub kind: LandmarkKind,
    pub weights: Vec<(usize, f64)>,
    pub extrude: bool,
}

/// Posed mesh: vertices plus the model's shared face list.
#[derive(Debug, Clone)]
pub struct MeshSurface {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Arc<[[usize; 3]]>,
}

/// Rigid transform stored as an axis-angle rotation and a translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootTransform {
    pub rotation: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RootTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RootTransform {
    pub fn identity() -> Self {
        Self { rotation: Vector3::zeros(), translation: Vector3::zeros() }
    }

    pub fn from_matrix(r: &Matrix3<f64>, t: Vector3<f64>) -> Self {
        Self { rotation: rotation::log_map(r), translation: t }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        rotation::rodrigues(&self.rotation)
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.matrix() * p + self.translation
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &RootTransform) -> RootTransform {
        let r = self.matrix();
        Self::from_matrix(&(r * other.matrix()), r * other.translation + self.translation)
    }
}

/// One line of a pose stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub frame_id: u64,
    pub params: BodyParams,
}

/// Shape coefficients, per-joint axis-angle pose and the root transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    pub beta: Vec<f64>,
    pub theta: Vec<Vector3<f64>>,
    pub root: RootTransform,
}

impl BodyParams {
    pub fn rest(model: &BodyModel) -> Self {
        Self {
            beta: vec![0.0; model.num_shapes()],
            theta: vec![Vector3::zeros(); model.num_joints()],
            root: RootTransform::identity(),
        }
    }

    /// β and root components uniform in [−1, 1], each pose component
    /// uniform in [−amplitude, amplitude] radians.
    pub fn random<R: rand::Rng + ?Sized>(model: &BodyModel, rng: &mut R, amplitude: f64) -> Self {
        Self {
            beta: (0..model.num_shapes()).map(|_| rng.random_range(-1.0..=1.0)).collect(),
            theta: (0..model.num_joints()).map(|_| Vector3::from_fn(|_, _| rng.random_range(-amplitude..=amplitude))).collect(),
            root: RootTransform {
                rotation: Vector3::from_fn(|_, _| rng.random_range(-1.0..=1.0)),
                translation: Vector3::from_fn(|_, _| rng.random_range(-1.0..=1.0)),
            },
        }
    }

    pub fn theta_flat(&self) -> Vec<f64> {
        self.theta.iter().flat_map(|w| [w.x, w.y, w.z]).collect()
    }

    pub fn theta_from_flat(flat: &[f64]) -> Result<Vec<Vector3<f64>>> {
        if flat.len() % 3 != 0 {
            return param(format!("pose vector length {} is not a multiple of 3", flat.len()));
        }
        Ok(flat.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect())
    }

    pub fn validate(&self, model: &BodyModel) -> Result<()> {
        check_len(model.num_shapes(), self.beta.len())?;
        check_len(model.num_joints(), self.theta.len())?;
        let finite = self.beta.iter().all(|b| b.is_finite())
            && self.theta.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.root.rotation.iter().chain(self.root.translation.iter()).all(|v| v.is_finite());
        if !finite {
            return param("body parameters contain non-finite values");
        }
        Ok(())
    }
}

/// Landmark positions with their kinds and canonical names.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    pub positions: Vec<Vector3<f64>>,
    pub kinds: Vec<LandmarkKind>,
    pub labels: Vec<String>,
}

impl LandmarkSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn of_kind(&self, kind: LandmarkKind) -> impl Iterator<Item = (usize, &Vector3<f64>)> {
        self.positions.iter().enumerate().filter(move |(i, _)| self.kinds[*i] == kind)
    }

    pub fn markers(&self) -> Vec<Vector3<f64>> {
        self.of_kind(LandmarkKind::Marker).map(|(_, p)| *p).collect()
    }

    pub fn joints(&self) -> Vec<Vector3<f64>> {
        self.of_kind(LandmarkKind::Joint).map(|(_, p)| *p).collect()
    }
}

/// Immutable body model. Sparse rows are `(index, weight)` lists.
#[derive(Debug, Clone)]
pub struct BodyModel {
    pub(crate) template: Vec<Vector3<f64>>,
    pub(crate) faces: Arc<[[usize; 3]]>,
    pub(crate) shape_dirs: Vec<Vec<Vector3<f64>>>,
    pub(crate) skin_weights: Vec<Vec<(usize, f64)>>,
    pub(crate) joint_regressor: Vec<Vec<(usize, f64)>>,
    pub(crate) parents: Vec<Option<usize>>,
    /// Joints ordered so every parent precedes its children.
    pub(crate) order: Vec<usize>,
    pub(crate) landmarks: Vec<LandmarkDef>,
    pub(crate) marker_radius: f64,
    pub(crate) joint_names: Vec<String>,
    pub(crate) mirror_pairs: Vec<(usize, usize)>,
    /// Faces incident to each vertex.
    pub(crate) vertex_faces: Vec<Vec<usize>>,
}

const WEIGHT_TOL: f64 = 1e-9;

impl BodyModel {
    /// Builds and validates a model from dense and sparse parts.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        template: Vec<Vector3<f64>>,
        faces: Vec<[usize; 3]>,
        shape_dirs: Vec<Vec<Vector3<f64>>>,
        skin_weights: Vec<Vec<(usize, f64)>>,
        joint_regressor: Vec<Vec<(usize, f64)>>,
        parents: Vec<Option<usize>>,
        landmarks: Vec<LandmarkDef>,
        marker_radius: f64,
        joint_names: Vec<String>,
        mirror_pairs: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let v = template.len();
        let p = parents.len();
        if v == 0 {
            return param("model has no vertices");
        }
        if p == 0 {
            return param("model has no joints");
        }
        for f in &faces {
            if f.iter().any(|&i| i >= v) {
                return param(format!("face {f:?} references a vertex out of range"));
            }
        }
        for (s, dir) in shape_dirs.iter().enumerate() {
            if dir.len() != v {
                return param(format!("blendshape {s} has {} rows, expected {v}", dir.len()));
            }
        }
        check_len(v, skin_weights.len())?;
        for (i, row) in skin_weights.iter().enumerate() {
            if row.iter().any(|&(j, w)| j >= p || w < 0.0 || !w.is_finite()) {
                return param(format!("skinning weights of vertex {i} are invalid"));
            }
            let sum: f64 = row.iter().map(|r| r.1).sum();
            if (sum - 1.0).abs() > WEIGHT_TOL {
                return param(format!("skinning weights of vertex {i} sum to {sum}"));
            }
        }
        check_len(p, joint_regressor.len())?;
        for (j, row) in joint_regressor.iter().enumerate() {
            if row.iter().any(|&(i, _)| i >= v) {
                return param(format!("joint regressor row {j} references a vertex out of range"));
            }
            let sum: f64 = row.iter().map(|r| r.1).sum();
            if (sum - 1.0).abs() > WEIGHT_TOL {
                return param(format!("joint regressor row {j} sums to {sum}"));
            }
        }
        let order = topological_order(&parents)?;
        for lm in &landmarks {
            if lm.weights.is_empty() || lm.weights.iter().any(|&(i, w)| i >= v || !w.is_finite()) {
                return param(format!("landmark {} has an invalid regressor row", lm.name));
            }
            if lm.kind == LandmarkKind::Marker {
                let nz = lm.weights.iter().filter(|r| r.1 != 0.0).count();
                let sum: f64 = lm.weights.iter().map(|r| r.1).sum();
                if nz > 3 || (sum - 1.0).abs() > WEIGHT_TOL {
                    return param(format!(
                        "marker {} must be a vertex pick or barycentric row (nonzeros {nz}, sum {sum})",
                        lm.name
                    ));
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        for lm in &landmarks {
            if !seen.insert(lm.name.as_str()) {
                return param(format!("duplicate landmark name {}", lm.name));
            }
        }
        if !(marker_radius.is_finite() && marker_radius >= 0.0) {
            return param("marker radius must be a finite non-negative distance");
        }
        let joint_names = if joint_names.is_empty() {
            (0..p).map(|j| format!("joint_{j}")).collect()
        } else {
            check_len(p, joint_names.len())?;
            joint_names
        };
        for &(a, b) in &mirror_pairs {
            if a >= p || b >= p || a == b {
                return param(format!("invalid mirror pair ({a}, {b})"));
            }
        }
        let mut vertex_faces = vec![Vec::new(); v];
        for (fi, f) in faces.iter().enumerate() {
            for &i in f {
                vertex_faces[i].push(fi);
            }
        }
        Ok(Self {
            template,
            faces: faces.into(),
            shape_dirs,
            skin_weights,
            joint_regressor,
            parents,
            order,
            landmarks,
            marker_radius,
            joint_names,
            mirror_pairs,
            vertex_faces,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.template.len()
    }

    pub fn num_shapes(&self) -> usize {
        self.shape_dirs.len()
    }

    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    pub fn num_landmarks(&self) -> usize {
        self.landmarks.len()
    }

    pub fn num_markers(&self) -> usize {
        self.landmarks.iter().filter(|l| l.kind == LandmarkKind::Marker).count()
    }

    pub fn template(&self) -> &[Vector3<f64>] {
        &self.template
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn shape_dirs(&self) -> &[Vec<Vector3<f64>>] {
        &self.shape_dirs
    }

    pub fn skin_weights(&self) -> &[Vec<(usize, f64)>] {
        &self.skin_weights
    }

    pub fn joint_regressor(&self) -> &[Vec<(usize, f64)>] {
        &self.joint_regressor
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn landmarks(&self) -> &[LandmarkDef] {
        &self.landmarks
    }

    pub fn marker_radius(&self) -> f64 {
        self.marker_radius
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn mirror_pairs(&self) -> &[(usize, usize)] {
        &self.mirror_pairs
    }

    pub fn landmark_labels(&self) -> Vec<String> {
        self.landmarks.iter().map(|l| l.name.clone()).collect()
    }

    pub fn landmark_kinds(&self) -> Vec<LandmarkKind> {
        self.landmarks.iter().map(|l| l.kind).collect()
    }

    /// Indices of marker landmarks in landmark order.
    pub fn marker_indices(&self) -> Vec<usize> {
        self.landmarks
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind == LandmarkKind::Marker)
            .map(|(i, _)| i)
            .collect()
    }

    /// Indices of joint landmarks in landmark order.
    pub fn joint_landmark_indices(&self) -> Vec<usize> {
        self.landmarks
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind == LandmarkKind::Joint)
            .map(|(i, _)| i)
            .collect()
    }

    /// Returns a copy with a different marker extrusion distance.
    pub fn with_marker_radius(&self, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius >= 0.0) {
            return Err(Error::Parameter("marker radius must be non-negative".into()));
        }
        let mut m = self.clone();
        m.marker_radius = radius;
        Ok(m)
    }
}

fn topological_order(parents: &[Option<usize>]) -> Result<Vec<usize>> {
    let p = parents.len();
    let roots: Vec<usize> = (0..p).filter(|&j| parents[j].is_none()).collect();
    if roots.len() != 1 {
        return param(format!("kinematic tree must have exactly one root, found {}", roots.len()));
    }
    let mut children = vec![Vec::new(); p];
    for (j, parent) in parents.iter().enumerate() {
        if let Some(q) = *parent {
            if q >= p {
                return param(format!("joint {j} has parent {q} out of range"));
            }
            children[q].push(j);
        }
    }
    let mut order = Vec::with_capacity(p);
    let mut stack = vec![roots[0]];
    while let Some(j) = stack.pop() {
        order.push(j);
        stack.extend(children[j].iter().rev().copied());
    }
    if order.len() != p {
        return param("kinematic tree contains a cycle or disconnected joints");
    }
    Ok(order)
}
