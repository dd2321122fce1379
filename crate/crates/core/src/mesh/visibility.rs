use super::{Bvh, TriMesh};
use crate::camera::Camera;
use crate::par;
use crate::tensor::Real;

/// Shortening applied at the vertex end of visibility rays.
pub fn visibility_epsilon(mesh: &TriMesh) -> Real {
    1e-4 * mesh.bounding_radius()
}

/// Per-vertex visibility from `cam`.
///
/// A vertex is visible when it projects in front of the camera inside the
/// image, and the segment from the camera center to the vertex (shortened by
/// [`visibility_epsilon`] at the vertex end) crosses no triangle. Triangles
/// incident to the vertex are ignored.
pub fn vertex_visibility(mesh: &TriMesh, bvh: &Bvh, cam: &Camera) -> Vec<bool> {
    let eps = visibility_epsilon(mesh);
    let o = cam.center();
    par::map_range(mesh.n_vertices(), |i| {
        let v = mesh.vertices[i];
        if !cam.project(v).in_image(cam) {
            return false;
        }
        let d = v - o;
        let len = d.norm();
        if len <= eps {
            return false;
        }
        let end = o + d * ((len - eps) / len);
        !bvh.segment_blocked(o, end, |f| f.contains(&i))
    })
}
