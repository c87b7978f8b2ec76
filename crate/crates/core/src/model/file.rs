//! JSON model file: dense row-major arrays in SI meters.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{BodyModel, LandmarkDef, LandmarkKind, DEFAULT_MARKER_RADIUS};
use crate::error::{param, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LandmarkEntry {
    pub name: String,
    pub kind: LandmarkKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertex_weights: Option<Vec<(usize, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bary: Option<[f64; 3]>,
    /// Joint landmarks may reference a joint regressor row instead of weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint: Option<usize>,
    #[serde(default)]
    pub extrude: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub template: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    #[serde(default)]
    pub blendshapes: Vec<Vec<[f64; 3]>>,
    /// V × P skinning weights.
    pub weights: Vec<Vec<f64>>,
    /// P × V joint regressor.
    pub joint_regressor: Vec<Vec<f64>>,
    pub parents: Vec<Option<usize>>,
    pub landmarks: Vec<LandmarkEntry>,
    #[serde(default = "default_radius")]
    pub marker_radius: f64,
    #[serde(default)]
    pub joint_names: Vec<String>,
    #[serde(default)]
    pub mirror_pairs: Vec<(usize, usize)>,
}

fn default_radius() -> f64 {
    DEFAULT_MARKER_RADIUS
}

fn sparse(row: &[f64]) -> Vec<(usize, f64)> {
    row.iter().enumerate().filter(|(_, w)| **w != 0.0).map(|(i, w)| (i, *w)).collect()
}

fn dense(row: &[(usize, f64)], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for &(i, w) in row {
        out[i] += w;
    }
    out
}

impl ModelFile {
    pub fn into_model(self) -> Result<BodyModel> {
        let p = self.parents.len();
        let v = self.template.len();
        for row in &self.weights {
            if row.len() != p {
                return param(format!("skinning weight row has {} columns, expected {p}", row.len()));
            }
        }
        for row in &self.joint_regressor {
            if row.len() != v {
                return param(format!("joint regressor row has {} columns, expected {v}", row.len()));
            }
        }
        let joint_regressor: Vec<Vec<(usize, f64)>> = self.joint_regressor.iter().map(|r| sparse(r)).collect();
        let mut landmarks = Vec::with_capacity(self.landmarks.len());
        for e in self.landmarks {
            let weights = match (e.vertex_weights, e.face, e.bary, e.joint) {
                (Some(w), None, None, None) => w,
                (None, Some(f), Some(b), None) => {
                    let Some(face) = self.faces.get(f) else {
                        return param(format!("landmark {} references face {f} out of range", e.name));
                    };
                    face.iter().zip(b).map(|(&i, w)| (i, w)).collect()
                }
                (None, None, None, Some(jt)) => match joint_regressor.get(jt) {
                    Some(row) => row.clone(),
                    None => return param(format!("landmark {} references joint {jt} out of range", e.name)),
                },
                _ => {
                    return param(format!(
                        "landmark {} needs exactly one of vertex_weights, face+bary or joint",
                        e.name
                    ))
                }
            };
            landmarks.push(LandmarkDef { name: e.name, kind: e.kind, weights, extrude: e.extrude });
        }
        BodyModel::new(
            self.template.into_iter().map(Vector3::from).collect(),
            self.faces,
            self.blendshapes.into_iter().map(|s| s.into_iter().map(Vector3::from).collect()).collect(),
            self.weights.iter().map(|r| sparse(r)).collect(),
            joint_regressor,
            self.parents,
            landmarks,
            self.marker_radius,
            self.joint_names,
            self.mirror_pairs,
        )
    }

    pub fn from_model(model: &BodyModel) -> Self {
        let v = model.num_vertices();
        let p = model.num_joints();
        Self {
            template: model.template.iter().map(|x| [x.x, x.y, x.z]).collect(),
            faces: model.faces.to_vec(),
            blendshapes: model
                .shape_dirs
                .iter()
                .map(|s| s.iter().map(|x| [x.x, x.y, x.z]).collect())
                .collect(),
            weights: model.skin_weights.iter().map(|r| dense(r, p)).collect(),
            joint_regressor: model.joint_regressor.iter().map(|r| dense(r, v)).collect(),
            parents: model.parents.clone(),
            landmarks: model
                .landmarks
                .iter()
                .map(|l| LandmarkEntry {
                    name: l.name.clone(),
                    kind: l.kind,
                    vertex_weights: Some(l.weights.clone()),
                    face: None,
                    bary: None,
                    joint: None,
                    extrude: l.extrude,
                })
                .collect(),
            marker_radius: model.marker_radius,
            joint_names: model.joint_names.clone(),
            mirror_pairs: model.mirror_pairs.clone(),
        }
    }
}

impl BodyModel {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<ModelFile>(text)?.into_model()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile::from_model(self))?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}
