//! Small procedural models that ship with the crate for tests and demos.
//!
//! The humanoid is a set of closed hexagonal tubes, one per bone plus end
//! segments for the head, hands and feet, in a T-pose with +y up, +z forward
//! and the body's left side on +x.

use nalgebra::Vector3;

use super::{BodyModel, LandmarkDef, LandmarkKind, DEFAULT_MARKER_RADIUS};

/// Joint and marker layout of the procedural humanoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeskLayout {
    /// 18 joints, 53 markers.
    Standard,
    /// 24 joints, 56 markers.
    Extended,
}

impl DeskLayout {
    pub fn num_markers(self) -> usize {
        match self {
            DeskLayout::Standard => 53,
            DeskLayout::Extended => 56,
        }
    }
}

struct JointSpec {
    name: &'static str,
    parent: Option<&'static str>,
    pos: [f64; 3],
    radius: f64,
}

const fn j(name: &'static str, parent: Option<&'static str>, pos: [f64; 3], radius: f64) -> JointSpec {
    JointSpec { name, parent, pos, radius }
}

fn standard_joints() -> Vec<JointSpec> {
    vec![
        j("pelvis", None, [0.0, 0.95, 0.0], 0.12),
        j("spine1", Some("pelvis"), [0.0, 1.08, 0.0], 0.11),
        j("spine2", Some("spine1"), [0.0, 1.22, 0.0], 0.11),
        j("chest", Some("spine2"), [0.0, 1.36, 0.0], 0.12),
        j("neck", Some("chest"), [0.0, 1.50, 0.0], 0.05),
        j("head", Some("neck"), [0.0, 1.60, 0.0], 0.09),
        j("l_shoulder", Some("chest"), [0.19, 1.44, 0.0], 0.05),
        j("l_elbow", Some("l_shoulder"), [0.46, 1.44, 0.0], 0.04),
        j("l_wrist", Some("l_elbow"), [0.71, 1.44, 0.0], 0.03),
        j("r_shoulder", Some("chest"), [-0.19, 1.44, 0.0], 0.05),
        j("r_elbow", Some("r_shoulder"), [-0.46, 1.44, 0.0], 0.04),
        j("r_wrist", Some("r_elbow"), [-0.71, 1.44, 0.0], 0.03),
        j("l_hip", Some("pelvis"), [0.09, 0.88, 0.0], 0.07),
        j("l_knee", Some("l_hip"), [0.10, 0.49, 0.0], 0.05),
        j("l_ankle", Some("l_knee"), [0.10, 0.08, 0.0], 0.04),
        j("r_hip", Some("pelvis"), [-0.09, 0.88, 0.0], 0.07),
        j("r_knee", Some("r_hip"), [-0.10, 0.49, 0.0], 0.05),
        j("r_ankle", Some("r_knee"), [-0.10, 0.08, 0.0], 0.04),
    ]
}

fn extended_joints() -> Vec<JointSpec> {
    vec![
        j("pelvis", None, [0.0, 0.95, 0.0], 0.12),
        j("spine1", Some("pelvis"), [0.0, 1.08, 0.0], 0.11),
        j("spine2", Some("spine1"), [0.0, 1.22, 0.0], 0.11),
        j("chest", Some("spine2"), [0.0, 1.36, 0.0], 0.12),
        j("neck", Some("chest"), [0.0, 1.50, 0.0], 0.05),
        j("head", Some("neck"), [0.0, 1.60, 0.0], 0.09),
        j("l_collar", Some("chest"), [0.08, 1.44, 0.0], 0.06),
        j("l_shoulder", Some("l_collar"), [0.19, 1.44, 0.0], 0.05),
        j("l_elbow", Some("l_shoulder"), [0.46, 1.44, 0.0], 0.04),
        j("l_wrist", Some("l_elbow"), [0.71, 1.44, 0.0], 0.03),
        j("l_hand", Some("l_wrist"), [0.78, 1.44, 0.0], 0.03),
        j("r_collar", Some("chest"), [-0.08, 1.44, 0.0], 0.06),
        j("r_shoulder", Some("r_collar"), [-0.19, 1.44, 0.0], 0.05),
        j("r_elbow", Some("r_shoulder"), [-0.46, 1.44, 0.0], 0.04),
        j("r_wrist", Some("r_elbow"), [-0.71, 1.44, 0.0], 0.03),
        j("r_hand", Some("r_wrist"), [-0.78, 1.44, 0.0], 0.03),
        j("l_hip", Some("pelvis"), [0.09, 0.88, 0.0], 0.07),
        j("l_knee", Some("l_hip"), [0.10, 0.49, 0.0], 0.05),
        j("l_ankle", Some("l_knee"), [0.10, 0.08, 0.0], 0.04),
        j("l_foot", Some("l_ankle"), [0.10, 0.03, 0.10], 0.035),
        j("r_hip", Some("pelvis"), [-0.09, 0.88, 0.0], 0.07),
        j("r_knee", Some("r_hip"), [-0.10, 0.49, 0.0], 0.05),
        j("r_ankle", Some("r_knee"), [-0.10, 0.08, 0.0], 0.04),
        j("r_foot", Some("r_ankle"), [-0.10, 0.03, 0.10], 0.035),
    ]
}

const RING: usize = 6;
const STATIONS: [f64; 4] = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
const NUM_SHAPES: usize = 10;

/// A tube from `start` to `end`, rigidly driven by `driver` and blended
/// half-and-half with `start_blend` / `end_blend` at its end rings.
struct Segment {
    name: String,
    start: Vector3<f64>,
    end: Vector3<f64>,
    radius: f64,
    driver: usize,
    start_blend: Option<usize>,
    end_blend: Option<usize>,
    region: Region,
}

#[derive(Clone, Copy, PartialEq)]
enum Region {
    Torso,
    Head,
    Arm,
    Leg,
}

fn region_of(name: &str) -> Region {
    if name.contains("shoulder") || name.contains("elbow") || name.contains("wrist") || name.contains("hand") {
        Region::Arm
    } else if name.contains("hip") || name.contains("knee") || name.contains("ankle") || name.contains("foot") {
        Region::Leg
    } else if name == "head" || name == "neck" {
        Region::Head
    } else {
        Region::Torso
    }
}

fn end_extension(name: &str, pos: &Vector3<f64>) -> Option<Vector3<f64>> {
    if name == "head" {
        Some(Vector3::new(0.0, 0.2, 0.0))
    } else if name.contains("wrist") || name.contains("hand") {
        Some(Vector3::new(0.08 * pos.x.signum(), 0.0, 0.0))
    } else if name.contains("ankle") {
        Some(Vector3::new(0.0, -0.03, 0.15))
    } else if name.contains("foot") {
        Some(Vector3::new(0.0, 0.0, 0.08))
    } else {
        None
    }
}

fn build(joints: &[JointSpec], num_markers: usize) -> BodyModel {
    let index = |name: &str| joints.iter().position(|s| s.name == name).expect("joint name");
    let parents: Vec<Option<usize>> = joints.iter().map(|s| s.parent.map(index)).collect();
    let pos: Vec<Vector3<f64>> = joints.iter().map(|s| Vector3::from(s.pos)).collect();
    let has_child = |p: usize| parents.iter().any(|q| *q == Some(p));

    // Bones in joint order, then leaf end segments.
    let mut segments = Vec::new();
    for (c, spec) in joints.iter().enumerate() {
        if let Some(q) = parents[c] {
            segments.push(Segment {
                name: format!("{}_{}", joints[q].name, spec.name),
                start: pos[q],
                end: pos[c],
                radius: spec.radius,
                driver: q,
                start_blend: parents[q],
                end_blend: Some(c),
                region: region_of(spec.name),
            });
        }
    }
    for (c, spec) in joints.iter().enumerate() {
        if !has_child(c) {
            if let Some(ext) = end_extension(spec.name, &pos[c]) {
                segments.push(Segment {
                    name: format!("{}_end", spec.name),
                    start: pos[c],
                    end: pos[c] + ext,
                    radius: spec.radius,
                    driver: c,
                    start_blend: parents[c],
                    end_blend: None,
                    region: region_of(spec.name),
                });
            }
        }
    }

    let mut template = Vec::new();
    let mut faces = Vec::new();
    let mut weights: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut radial_dirs = Vec::new();
    let mut regions = Vec::new();
    // Per segment: index of ring vertex (station, k) and the two cap centers.
    let mut ring_index: Vec<[[usize; RING]; 4]> = Vec::new();

    for seg in &segments {
        let axis = seg.end - seg.start;
        let a = axis.normalize();
        let helper = if a.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
        let u = helper.cross(&a).normalize();
        let w = a.cross(&u);
        let blend = |t: f64| -> Vec<(usize, f64)> {
            let other = if t == 0.0 {
                seg.start_blend
            } else if t == 1.0 {
                seg.end_blend
            } else {
                None
            };
            match other {
                Some(o) => vec![(seg.driver, 0.5), (o, 0.5)],
                None => vec![(seg.driver, 1.0)],
            }
        };
        let mut rings = [[0usize; RING]; 4];
        for (s, &t) in STATIONS.iter().enumerate() {
            let c = seg.start + axis * t;
            for (k, slot) in rings[s].iter_mut().enumerate() {
                let phi = 2.0 * std::f64::consts::PI * k as f64 / RING as f64;
                let radial = u * phi.cos() + w * phi.sin();
                *slot = template.len();
                template.push(c + radial * seg.radius);
                weights.push(blend(t));
                radial_dirs.push(radial);
                regions.push(seg.region);
            }
        }
        for s in 0..3 {
            for k in 0..RING {
                let k1 = (k + 1) % RING;
                let (a0, a1, b0, b1) = (rings[s][k], rings[s][k1], rings[s + 1][k], rings[s + 1][k1]);
                faces.push([a0, a1, b1]);
                faces.push([a0, b1, b0]);
            }
        }
        for (s, t) in [(0usize, 0.0), (3usize, 1.0)] {
            let center = template.len();
            template.push(seg.start + axis * t);
            weights.push(blend(t));
            radial_dirs.push(if s == 0 { -a } else { a });
            regions.push(seg.region);
            for k in 0..RING {
                let k1 = (k + 1) % RING;
                if s == 0 {
                    faces.push([center, rings[0][k1], rings[0][k]]);
                } else {
                    faces.push([center, rings[3][k], rings[3][k1]]);
                }
            }
        }
        ring_index.push(rings);
    }

    // Joint regressor: average of the ring centered on the joint.
    let ring_avg = |ring: &[usize; RING]| ring.iter().map(|&i| (i, 1.0 / RING as f64)).collect::<Vec<_>>();
    let joint_regressor: Vec<Vec<(usize, f64)>> = (0..joints.len())
        .map(|c| {
            if let Some(si) = segments.iter().position(|s| s.end_blend == Some(c)) {
                ring_avg(&ring_index[si][3])
            } else {
                let si = segments.iter().position(|s| s.driver == c).expect("root has a segment");
                ring_avg(&ring_index[si][0])
            }
        })
        .collect();

    let shape_dirs = shape_basis(&template, &radial_dirs, &regions);

    // Marker candidates in passes over the segments.
    let mut markers: Vec<LandmarkDef> = Vec::new();
    'passes: for pass in 0..4 {
        for (si, seg) in segments.iter().enumerate() {
            if markers.len() == num_markers {
                break 'passes;
            }
            let rings = &ring_index[si];
            let (suffix, w) = match pass {
                0 => ("front", vec![(rings[1][1], 1.0)]),
                1 => ("back", vec![(rings[2][4], 1.0)]),
                2 => ("side", vec![(rings[1][2], 0.3), (rings[1][3], 0.3), (rings[2][3], 0.4)]),
                _ => ("low", vec![(rings[1][5], 1.0)]),
            };
            markers.push(LandmarkDef {
                name: format!("{}_{}", seg.name, suffix),
                kind: LandmarkKind::Marker,
                weights: w,
                extrude: true,
            });
        }
    }
    assert_eq!(markers.len(), num_markers, "not enough marker sites");
    let mut landmarks = markers;
    for (c, row) in joint_regressor.iter().enumerate() {
        landmarks.push(LandmarkDef {
            name: joints[c].name.to_string(),
            kind: LandmarkKind::Joint,
            weights: row.clone(),
            extrude: false,
        });
    }

    let names: Vec<String> = joints.iter().map(|s| s.name.to_string()).collect();
    let mirror_pairs = names
        .iter()
        .enumerate()
        .filter_map(|(i, n)| {
            let other = n.strip_prefix("l_")?;
            let k = names.iter().position(|m| m.strip_prefix("r_") == Some(other))?;
            Some((i, k))
        })
        .collect();

    BodyModel::new(
        template,
        faces,
        shape_dirs,
        weights,
        joint_regressor,
        parents,
        landmarks,
        DEFAULT_MARKER_RADIUS,
        names,
        mirror_pairs,
    )
    .expect("procedural model is valid")
}

/// Ten smooth displacement fields (a few centimeters per unit coefficient).
fn shape_basis(template: &[Vector3<f64>], radial: &[Vector3<f64>], regions: &[Region]) -> Vec<Vec<Vector3<f64>>> {
    let mut dirs = vec![Vec::with_capacity(template.len()); NUM_SHAPES];
    for ((v, r), &reg) in template.iter().zip(radial).zip(regions) {
        let in_region = |want: Region| if reg == want { 1.0 } else { 0.0 };
        let fields = [
            Vector3::new(0.0, 0.05 * v.y, 0.0),
            r * 0.015,
            Vector3::new(0.04 * v.x, 0.0, 0.0),
            Vector3::new(0.0, 0.0, 0.6 * v.z * 0.05),
            Vector3::new(0.05 * v.x, 0.0, 0.0) * in_region(Region::Arm),
            Vector3::new(0.0, 0.05 * (v.y - 0.95), 0.0) * in_region(Region::Leg),
            Vector3::new(0.0, 0.04 * (v.y - 0.95), 0.0) * in_region(Region::Torso),
            Vector3::new(0.02 * v.x.signum(), 0.0, 0.0) * (in_region(Region::Arm) + 0.5 * in_region(Region::Torso) * v.x.abs()),
            Vector3::new(0.0, 0.0, 0.02 * r.z.max(0.0)) * in_region(Region::Torso),
            r * (0.02 * in_region(Region::Head)),
        ];
        for (d, f) in dirs.iter_mut().zip(fields) {
            d.push(f);
        }
    }
    dirs
}

/// The 18-joint, 53-marker desk humanoid.
pub fn desk_body() -> BodyModel {
    build(&standard_joints(), DeskLayout::Standard.num_markers())
}

/// The 24-joint, 56-marker alternate layout.
pub fn desk_body_alternate() -> BodyModel {
    build(&extended_joints(), DeskLayout::Extended.num_markers())
}

/// A 12-vertex, 3-joint chain used for low-level skinning tests.
pub fn toy_model() -> BodyModel {
    let heights = [0.0, 0.5, 1.0, 2.0];
    let mut template = Vec::new();
    for &y in &heights {
        for k in 0..3 {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / 3.0;
            template.push(Vector3::new(0.1 * phi.cos(), y, 0.1 * phi.sin()));
        }
    }
    let mut faces = Vec::new();
    for s in 0..3 {
        for k in 0..3 {
            let k1 = (k + 1) % 3;
            let (a0, a1, b0, b1) = (3 * s + k, 3 * s + k1, 3 * (s + 1) + k, 3 * (s + 1) + k1);
            faces.push([a0, b1, a1]);
            faces.push([a0, b0, b1]);
        }
    }
    faces.push([0, 1, 2]);
    faces.push([9, 11, 10]);
    let weights = [
        vec![(0, 1.0)],
        vec![(0, 0.6), (1, 0.4)],
        vec![(0, 0.2), (1, 0.8)],
        vec![(1, 0.3), (2, 0.7)],
    ];
    let skin_weights = (0..12).map(|i| weights[i / 3].clone()).collect();
    let shape_dirs = vec![
        template.iter().map(|v| Vector3::new(0.0, 0.1 * v.y, 0.0)).collect(),
        template.iter().map(|v| Vector3::new(0.5 * v.x, 0.0, 0.5 * v.z)).collect(),
    ];
    let ring = |s: usize| (0..3).map(|k| (3 * s + k, 1.0 / 3.0)).collect::<Vec<_>>();
    let joint_regressor = vec![ring(0), ring(2), ring(3)];
    let mut landmarks = vec![
        LandmarkDef { name: "m0".into(), kind: LandmarkKind::Marker, weights: vec![(4, 1.0)], extrude: true },
        LandmarkDef { name: "m1".into(), kind: LandmarkKind::Marker, weights: vec![(8, 1.0)], extrude: true },
        LandmarkDef {
            name: "m2".into(),
            kind: LandmarkKind::Marker,
            weights: vec![(6, 0.2), (7, 0.3), (10, 0.5)],
            extrude: true,
        },
        LandmarkDef { name: "m3".into(), kind: LandmarkKind::Marker, weights: vec![(9, 1.0)], extrude: false },
    ];
    for (c, row) in joint_regressor.iter().enumerate() {
        landmarks.push(LandmarkDef {
            name: format!("j{c}"),
            kind: LandmarkKind::Joint,
            weights: row.clone(),
            extrude: false,
        });
    }
    BodyModel::new(
        template,
        faces,
        shape_dirs,
        skin_weights,
        joint_regressor,
        vec![None, Some(0), Some(1)],
        landmarks,
        DEFAULT_MARKER_RADIUS,
        vec!["j0".into(), "j1".into(), "j2".into()],
        vec![],
    )
    .expect("toy model is valid")
}
