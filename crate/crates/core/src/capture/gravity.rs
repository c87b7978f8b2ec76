use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::Rigid;
use crate::rotation::align_vectors;

/// The long edge of the Γ must exceed the short edge by this factor.
pub const GAMMA_EDGE_RATIO: f64 = 1.1;

/// Floor alignment from three markers laid out as a Γ. The corner is the
/// vertex opposite the longest side; up is `long × short`, flipped into the
/// current +y hemisphere. The result rotates up onto +y and then shifts
/// vertically so the corner sits at height 0.
pub fn gravity_align(markers: &[Vector3<f64>; 3]) -> Result<Rigid> {
    let side = |i: usize| (markers[(i + 1) % 3] - markers[(i + 2) % 3]).norm();
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| side(b).total_cmp(&side(a)));
    let [corner, ..] = order;
    if side(order[0]) <= side(order[1]) * (1.0 + 1e-9) {
        return Err(Error::Degenerate("no unique corner: the two longest sides are equal".into()));
    }
    let c = markers[corner];
    let mut edges = [markers[(corner + 1) % 3] - c, markers[(corner + 2) % 3] - c];
    edges.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    let [long, short] = edges;
    if short.norm() == 0.0 || long.norm() <= GAMMA_EDGE_RATIO * short.norm() {
        return Err(Error::Degenerate(format!(
            "edge lengths {:.4} and {:.4} are not distinct enough to tell long from short",
            long.norm(),
            short.norm()
        )));
    }
    let mut up = long.cross(&short).try_normalize(1e-12).ok_or(Error::Degenerate("Γ markers are collinear".into()))?;
    if up.y.abs() < 1e-12 {
        return Err(Error::Degenerate("Γ plane is vertical".into()));
    }
    if up.y < 0.0 {
        up = -up;
    }
    let rotation = align_vectors(&up, &Vector3::y());
    let height = (rotation * c).y;
    Ok(Rigid { rotation, translation: Vector3::new(0.0, -height, 0.0) })
}
