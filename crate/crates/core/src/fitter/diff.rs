//! Landmark evaluation with a reverse-mode pass back to the body parameters.

use nalgebra::{Matrix3, Vector3};

use crate::error::Result;
use crate::model::{BodyModel, BodyParams, LandmarkKind, SkinState};
use crate::rotation;

const NONE: usize = usize::MAX;

/// Gradient of a scalar with respect to the body parameters.
#[derive(Debug, Clone)]
pub struct ParamGrad {
    pub beta: Vec<f64>,
    pub theta: Vec<Vector3<f64>>,
    pub root_rotation: Vector3<f64>,
    pub root_translation: Vector3<f64>,
}

/// Precomputed sparsity for one model: which vertex normals and faces the
/// extruded markers depend on.
#[derive(Debug, Clone)]
pub struct LandmarkEvaluator<'m> {
    model: &'m BodyModel,
    normal_vertices: Vec<usize>,
    normal_slot: Vec<usize>,
    faces: Vec<usize>,
}

/// Cached forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub skin: SkinState,
    pub positions: Vec<Vector3<f64>>,
    raw_normals: Vec<Vector3<f64>>,
}

impl<'m> LandmarkEvaluator<'m> {
    pub fn new(model: &'m BodyModel) -> Self {
        let extrude = model.marker_radius != 0.0;
        let mut normal_slot = vec![NONE; model.num_vertices()];
        let mut normal_vertices = Vec::new();
        for lm in &model.landmarks {
            if extrude && lm.kind == LandmarkKind::Marker && lm.extrude {
                for &(i, _) in &lm.weights {
                    if normal_slot[i] == NONE {
                        normal_slot[i] = normal_vertices.len();
                        normal_vertices.push(i);
                    }
                }
            }
        }
        let mut face_used = vec![false; model.faces.len()];
        for &v in &normal_vertices {
            for &f in &model.vertex_faces[v] {
                face_used[f] = true;
            }
        }
        let faces = face_used.iter().enumerate().filter(|(_, u)| **u).map(|(f, _)| f).collect();
        Self { model, normal_vertices, normal_slot, faces }
    }

    pub fn model(&self) -> &'m BodyModel {
        self.model
    }

    pub fn forward(&self, params: &BodyParams) -> Result<Forward> {
        let model = self.model;
        let skin = SkinState::compute(model, params)?;
        let verts = &skin.vertices;
        let face_cross: Vec<Vector3<f64>> = self
            .faces
            .iter()
            .map(|&f| {
                let [a, b, c] = model.faces[f].map(|i| verts[i]);
                (b - a).cross(&(c - a))
            })
            .collect();
        let mut raw_normals = vec![Vector3::zeros(); self.normal_vertices.len()];
        for (slot, &f) in self.faces.iter().enumerate() {
            for &i in &model.faces[f] {
                let s = self.normal_slot[i];
                if s != NONE {
                    raw_normals[s] += face_cross[slot];
                }
            }
        }
        let unit = |s: usize| {
            let n = raw_normals[s];
            let len = n.norm();
            if len > 0.0 {
                n / len
            } else {
                Vector3::zeros()
            }
        };
        let d = model.marker_radius;
        let positions = model
            .landmarks
            .iter()
            .map(|lm| {
                let mut p: Vector3<f64> = lm.weights.iter().map(|&(i, w)| verts[i] * w).sum();
                if d != 0.0 && lm.kind == LandmarkKind::Marker && lm.extrude {
                    let m: Vector3<f64> = lm.weights.iter().map(|&(i, w)| unit(self.normal_slot[i]) * w).sum();
                    let len = m.norm();
                    if len > 0.0 {
                        p += m * (d / len);
                    }
                }
                p
            })
            .collect();
        Ok(Forward { skin, positions, raw_normals })
    }

    /// Pulls `∂E/∂ℓ` (one 3-vector per landmark) back to the body parameters.
    pub fn backward(&self, fwd: &Forward, grad_landmarks: &[Vector3<f64>]) -> ParamGrad {
        let model = self.model;
        let nv = model.num_vertices();
        let d = model.marker_radius;
        let mut gv = vec![Vector3::zeros(); nv];
        let mut g_unit = vec![Vector3::zeros(); self.normal_vertices.len()];

        for (lm, g) in model.landmarks.iter().zip(grad_landmarks) {
            if *g == Vector3::zeros() {
                continue;
            }
            for &(i, w) in &lm.weights {
                gv[i] += g * w;
            }
            if d != 0.0 && lm.kind == LandmarkKind::Marker && lm.extrude {
                let units: Vec<Vector3<f64>> =
                    lm.weights.iter().map(|&(i, _)| self.unit_normal(fwd, self.normal_slot[i])).collect();
                let m: Vector3<f64> = lm.weights.iter().zip(&units).map(|(&(_, w), u)| u * w).sum();
                let len = m.norm();
                if len > 0.0 {
                    let mh = m / len;
                    let gm = (g - mh * mh.dot(g)) * (d / len);
                    for &(i, w) in &lm.weights {
                        g_unit[self.normal_slot[i]] += gm * w;
                    }
                }
            }
        }

        // Unit normals → raw normals → face cross products → vertices.
        let mut g_raw = vec![Vector3::zeros(); self.normal_vertices.len()];
        for (s, gu) in g_unit.iter().enumerate() {
            let n = fwd.raw_normals[s];
            let len = n.norm();
            if len > 0.0 && *gu != Vector3::zeros() {
                let nh = n / len;
                g_raw[s] = (gu - nh * nh.dot(gu)) / len;
            }
        }
        for &f in &self.faces {
            let face = model.faces[f];
            let gc: Vector3<f64> = face
                .iter()
                .map(|&i| {
                    let s = self.normal_slot[i];
                    if s != NONE {
                        g_raw[s]
                    } else {
                        Vector3::zeros()
                    }
                })
                .sum();
            if gc == Vector3::zeros() {
                continue;
            }
            let [a, b, c] = face.map(|i| fwd.skin.vertices[i]);
            let e1 = b - a;
            let e2 = c - a;
            let g1 = e2.cross(&gc);
            let g2 = gc.cross(&e1);
            gv[face[0]] -= g1 + g2;
            gv[face[1]] += g1;
            gv[face[2]] += g2;
        }

        // Root transform.
        let skin = &fwd.skin;
        let mut g_root_r = Matrix3::zeros();
        let mut g_root_t = Vector3::zeros();
        let mut g_lbs = vec![Vector3::zeros(); nv];
        for i in 0..nv {
            let g = gv[i];
            if g == Vector3::zeros() {
                continue;
            }
            g_root_t += g;
            g_root_r += g * skin.lbs_vertices[i].transpose();
            g_lbs[i] = skin.root_rot.transpose() * g;
        }

        // Linear blend skinning.
        let p = model.num_joints();
        let mut g_grot = vec![Matrix3::zeros(); p];
        let mut g_gtrans = vec![Vector3::zeros(); p];
        let mut g_rest_v = vec![Vector3::zeros(); nv];
        let mut g_rest_j = vec![Vector3::zeros(); p];
        for i in 0..nv {
            let g = g_lbs[i];
            if g == Vector3::zeros() {
                continue;
            }
            for &(j, w) in &model.skin_weights[i] {
                let gw = g * w;
                let rel = skin.rest_vertices[i] - skin.rest_joints[j];
                g_grot[j] += gw * rel.transpose();
                let back = skin.global_rot[j].transpose() * gw;
                g_rest_v[i] += back;
                g_rest_j[j] -= back;
                g_gtrans[j] += gw;
            }
        }

        // Kinematic chain, children before parents.
        let mut g_local = vec![Matrix3::zeros(); p];
        for &j in model.order.iter().rev() {
            match model.parents[j] {
                None => {
                    g_local[j] += g_grot[j];
                    g_rest_j[j] += g_gtrans[j];
                }
                Some(q) => {
                    let gq = skin.global_rot[q];
                    let rel = skin.rest_joints[j] - skin.rest_joints[q];
                    let gr = g_grot[j];
                    let gt = g_gtrans[j];
                    g_grot[q] += gr * skin.local_rot[j].transpose() + gt * rel.transpose();
                    g_local[j] += gq.transpose() * gr;
                    let back = gq.transpose() * gt;
                    g_rest_j[j] += back;
                    g_rest_j[q] -= back;
                    g_gtrans[q] += gt;
                }
            }
        }
        let theta = (0..p).map(|j| rotation::rodrigues_vjp(&skin.local_jac[j], &g_local[j])).collect();
        let root_rotation = rotation::rodrigues_vjp(&skin.root_jac, &g_root_r);

        // Rest joints come from rest vertices; rest vertices from β.
        for (row, gj) in model.joint_regressor.iter().zip(&g_rest_j) {
            for &(i, w) in row {
                g_rest_v[i] += gj * w;
            }
        }
        let beta = model
            .shape_dirs
            .iter()
            .map(|dir| dir.iter().zip(&g_rest_v).map(|(b, g)| b.dot(g)).sum())
            .collect();

        ParamGrad { beta, theta, root_rotation, root_translation: g_root_t }
    }

    fn unit_normal(&self, fwd: &Forward, slot: usize) -> Vector3<f64> {
        let n = fwd.raw_normals[slot];
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vector3::zeros()
        }
    }
}
