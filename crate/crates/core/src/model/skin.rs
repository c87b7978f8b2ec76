use nalgebra::{Matrix3, Vector3};

use super::{BodyModel, BodyParams, LandmarkKind, LandmarkSet, MeshSurface};
use crate::error::{check_len, param, Result};
use crate::rotation;

/// Intermediate quantities of one skinning pass, kept for differentiation.
#[derive(Debug, Clone)]
pub struct SkinState {
    pub rest_vertices: Vec<Vector3<f64>>,
    pub rest_joints: Vec<Vector3<f64>>,
    pub local_rot: Vec<Matrix3<f64>>,
    pub local_jac: Vec<[Matrix3<f64>; 3]>,
    pub global_rot: Vec<Matrix3<f64>>,
    /// Posed joint positions before the root transform.
    pub global_trans: Vec<Vector3<f64>>,
    /// Skinned vertices before the root transform.
    pub lbs_vertices: Vec<Vector3<f64>>,
    pub root_rot: Matrix3<f64>,
    pub root_jac: [Matrix3<f64>; 3],
    pub vertices: Vec<Vector3<f64>>,
}

impl SkinState {
    pub fn compute(model: &BodyModel, params: &BodyParams) -> Result<Self> {
        params.validate(model)?;
        let mut rest_vertices = model.template.clone();
        for (dir, &b) in model.shape_dirs.iter().zip(&params.beta) {
            if b != 0.0 {
                for (v, d) in rest_vertices.iter_mut().zip(dir) {
                    *v += d * b;
                }
            }
        }
        let rest_joints: Vec<Vector3<f64>> = model
            .joint_regressor
            .iter()
            .map(|row| row.iter().map(|&(i, w)| rest_vertices[i] * w).sum())
            .collect();

        let p = model.num_joints();
        let mut local_rot = Vec::with_capacity(p);
        let mut local_jac = Vec::with_capacity(p);
        for w in &params.theta {
            let (r, j) = rotation::rodrigues_with_jacobian(w);
            local_rot.push(r);
            local_jac.push(j);
        }
        let mut global_rot = vec![Matrix3::identity(); p];
        let mut global_trans = vec![Vector3::zeros(); p];
        for &j in &model.order {
            match model.parents[j] {
                None => {
                    global_rot[j] = local_rot[j];
                    global_trans[j] = rest_joints[j];
                }
                Some(q) => {
                    global_rot[j] = global_rot[q] * local_rot[j];
                    global_trans[j] = global_rot[q] * (rest_joints[j] - rest_joints[q]) + global_trans[q];
                }
            }
        }
        let lbs_vertices: Vec<Vector3<f64>> = rest_vertices
            .iter()
            .zip(&model.skin_weights)
            .map(|(v, row)| {
                row.iter()
                    .map(|&(j, w)| (global_rot[j] * (v - rest_joints[j]) + global_trans[j]) * w)
                    .sum()
            })
            .collect();
        let (root_rot, root_jac) = rotation::rodrigues_with_jacobian(&params.root.rotation);
        let t = params.root.translation;
        let vertices = lbs_vertices.iter().map(|v| root_rot * v + t).collect();
        Ok(Self {
            rest_vertices,
            rest_joints,
            local_rot,
            local_jac,
            global_rot,
            global_trans,
            lbs_vertices,
            root_rot,
            root_jac,
            vertices,
        })
    }

    pub fn into_mesh(self, model: &BodyModel) -> MeshSurface {
        MeshSurface { vertices: self.vertices, faces: model.faces.clone() }
    }
}

/// Poses the model: blendshapes, then linear blend skinning, then the root transform.
pub fn skin(model: &BodyModel, params: &BodyParams) -> Result<MeshSurface> {
    Ok(SkinState::compute(model, params)?.into_mesh(model))
}

/// Unit vertex normals plus the vertices whose incident area was zero.
#[derive(Debug, Clone)]
pub struct Normals {
    pub normals: Vec<Vector3<f64>>,
    pub zero_area: Vec<usize>,
}

/// Area-weighted vertex normals: the sum of incident face cross products, normalized.
pub fn vertex_normals(mesh: &MeshSurface) -> Result<Normals> {
    if mesh.vertices.is_empty() || mesh.faces.is_empty() {
        return param("cannot compute normals of an empty mesh");
    }
    let n = mesh.vertices.len();
    let mut acc = vec![Vector3::zeros(); n];
    for f in mesh.faces.iter() {
        if f.iter().any(|&i| i >= n) {
            return param(format!("face {f:?} references a vertex out of range"));
        }
        let [a, b, c] = f.map(|i| mesh.vertices[i]);
        let cross = (b - a).cross(&(c - a));
        for &i in f {
            acc[i] += cross;
        }
    }
    let mut zero_area = Vec::new();
    let normals = acc
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let len = v.norm();
            if len > 0.0 && len.is_finite() {
                v / len
            } else {
                zero_area.push(i);
                Vector3::zeros()
            }
        })
        .collect();
    Ok(Normals { normals, zero_area })
}

/// Regresses landmarks from the posed surface; markers flagged for extrusion
/// are pushed out by the marker radius along the re-normalized regressed normal.
pub fn extract_landmarks(model: &BodyModel, mesh: &MeshSurface, normals: &[Vector3<f64>]) -> Result<LandmarkSet> {
    check_len(model.num_vertices(), mesh.vertices.len())?;
    check_len(model.num_vertices(), normals.len())?;
    let d = model.marker_radius;
    let positions = model
        .landmarks
        .iter()
        .map(|lm| {
            let mut p: Vector3<f64> = lm.weights.iter().map(|&(i, w)| mesh.vertices[i] * w).sum();
            if lm.kind == LandmarkKind::Marker && lm.extrude && d != 0.0 {
                let n: Vector3<f64> = lm.weights.iter().map(|&(i, w)| normals[i] * w).sum();
                let len = n.norm();
                if len > 0.0 {
                    p += n * (d / len);
                }
            }
            p
        })
        .collect();
    Ok(LandmarkSet { positions, kinds: model.landmark_kinds(), labels: model.landmark_labels() })
}

impl BodyModel {
    /// Convenience: skin, compute normals, extract landmarks.
    pub fn landmarks_for(&self, params: &BodyParams) -> Result<LandmarkSet> {
        let mesh = skin(self, params)?;
        let normals = vertex_normals(&mesh)?;
        extract_landmarks(self, &mesh, &normals.normals)
    }

    /// Unit surface normals at the marker landmarks, in marker order.
    pub fn marker_normals(&self, params: &BodyParams) -> Result<Vec<Vector3<f64>>> {
        let normals = vertex_normals(&skin(self, params)?)?.normals;
        Ok(self
            .landmarks
            .iter()
            .filter(|lm| lm.kind == LandmarkKind::Marker)
            .map(|lm| {
                let n: Vector3<f64> = lm.weights.iter().map(|&(i, w)| normals[i] * w).sum();
                n.try_normalize(0.0).unwrap_or_else(Vector3::zeros)
            })
            .collect())
    }

    /// Posed joint positions (joint regressor applied to the posed surface).
    pub fn posed_joints(&self, params: &BodyParams) -> Result<Vec<Vector3<f64>>> {
        let mesh = skin(self, params)?;
        Ok(self
            .joint_regressor
            .iter()
            .map(|row| row.iter().map(|&(i, w)| mesh.vertices[i] * w).sum())
            .collect())
    }

    /// Global joint rotations including the root, one per joint.
    pub fn global_rotations(&self, params: &BodyParams) -> Result<Vec<Matrix3<f64>>> {
        let state = SkinState::compute(self, params)?;
        Ok(state.global_rot.iter().map(|r| state.root_rot * r).collect())
    }
}
