use super::TriMesh;
use crate::geom::Vec3;
use crate::tensor::Real;

/// Closest point on a triangle `(a, b, c)` to `p`, with barycentric weights
/// `[wa, wb, wc]`. Handles the vertex, edge, and interior regions.
pub fn closest_point_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> (Vec3, [Real; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosestPoint {
    pub point: Vec3,
    pub squared_distance: Real,
    pub face: usize,
    pub bary: [Real; 3],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriangleHit {
    pub face: usize,
    /// Ray parameter of the hit.
    pub t: Real,
}

#[derive(Clone, Copy, Debug)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        let inf = Real::INFINITY;
        Aabb {
            lo: Vec3 { x: inf, y: inf, z: inf },
            hi: Vec3 { x: -inf, y: -inf, z: -inf },
        }
    }

    fn grow(&mut self, p: Vec3) {
        self.lo = self.lo.min(p);
        self.hi = self.hi.max(p);
    }

    fn merge(a: &Aabb, b: &Aabb) -> Aabb {
        Aabb {
            lo: a.lo.min(b.lo),
            hi: a.hi.max(b.hi),
        }
    }

    fn contains(&self, o: &Aabb) -> bool {
        self.lo.x <= o.lo.x
            && self.lo.y <= o.lo.y
            && self.lo.z <= o.lo.z
            && self.hi.x >= o.hi.x
            && self.hi.y >= o.hi.y
            && self.hi.z >= o.hi.z
    }

    fn distance2(&self, p: Vec3) -> Real {
        let mut d = 0.0;
        for i in 0..3 {
            let v = p[i];
            let e = if v < self.lo[i] {
                self.lo[i] - v
            } else if v > self.hi[i] {
                v - self.hi[i]
            } else {
                0.0
            };
            d += e * e;
        }
        d
    }

    /// Slab test against the segment `origin + t·dir`, `t ∈ [0, t_max]`.
    fn hits_segment(&self, origin: Vec3, inv_dir: Vec3, t_max: Real) -> bool {
        let mut t0: Real = 0.0;
        let mut t1 = t_max;
        for i in 0..3 {
            let mut a = (self.lo[i] - origin[i]) * inv_dir[i];
            let mut b = (self.hi[i] - origin[i]) * inv_dir[i];
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            // NaN (0·∞) leaves the bounds unchanged.
            if a > t0 {
                t0 = a;
            }
            if b < t1 {
                t1 = b;
            }
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

#[derive(Clone, Debug)]
enum NodeKind {
    Leaf { start: usize, count: usize },
    Inner { left: usize, right: usize },
}

#[derive(Clone, Debug)]
struct Node {
    bounds: Aabb,
    kind: NodeKind,
}

const LEAF_SIZE: usize = 4;

/// Axis-aligned bounding-box tree over a mesh's triangles. It stores the
/// triangle corners, so it answers queries without the mesh.
#[derive(Clone, Debug)]
pub struct Bvh {
    nodes: Vec<Node>,
    /// Triangle ids in leaf order.
    order: Vec<usize>,
    tris: Vec<[Vec3; 3]>,
    faces: Vec<[usize; 3]>,
}

impl Bvh {
    pub fn build(mesh: &TriMesh) -> Bvh {
        let tris: Vec<[Vec3; 3]> = (0..mesh.n_faces()).map(|f| mesh.triangle(f)).collect();
        let boxes: Vec<Aabb> = tris
            .iter()
            .map(|t| {
                let mut b = Aabb::empty();
                t.iter().for_each(|&p| b.grow(p));
                b
            })
            .collect();
        let centroids: Vec<Vec3> = tris.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let mut order: Vec<usize> = (0..tris.len()).collect();
        let mut nodes = Vec::new();
        if !tris.is_empty() {
            build_node(&mut nodes, &mut order, 0, tris.len(), &boxes, &centroids);
        }
        Bvh {
            nodes,
            order,
            tris,
            faces: mesh.faces.clone(),
        }
    }

    pub fn n_triangles(&self) -> usize {
        self.tris.len()
    }

    /// Nearest surface point over all triangles. `None` for an empty mesh.
    pub fn closest_point(&self, p: Vec3) -> Option<ClosestPoint> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = ClosestPoint {
            point: p,
            squared_distance: Real::INFINITY,
            face: usize::MAX,
            bary: [0.0; 3],
        };
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if node.bounds.distance2(p) >= best.squared_distance {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for &f in &self.order[start..start + count] {
                        let [a, b, c] = self.tris[f];
                        let (q, bary) = closest_point_on_triangle(p, a, b, c);
                        let d = (q - p).norm2();
                        if d < best.squared_distance || (d == best.squared_distance && f < best.face) {
                            best = ClosestPoint {
                                point: q,
                                squared_distance: d,
                                face: f,
                                bary,
                            };
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    let dl = self.nodes[left].bounds.distance2(p);
                    let dr = self.nodes[right].bounds.distance2(p);
                    // Visit the nearer child first.
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        Some(best)
    }

    /// Whether the segment from `from` to `to` crosses any triangle other
    /// than those for which `skip(face_vertices)` holds.
    pub fn segment_blocked(&self, from: Vec3, to: Vec3, skip: impl Fn(&[usize; 3]) -> bool) -> bool {
        self.first_hit(from, to, skip).is_some()
    }

    /// Nearest triangle crossed by the segment `from → to`.
    pub fn first_hit(&self, from: Vec3, to: Vec3, skip: impl Fn(&[usize; 3]) -> bool) -> Option<TriangleHit> {
        if self.nodes.is_empty() {
            return None;
        }
        let dir = to - from;
        let inv = Vec3 {
            x: 1.0 / dir.x,
            y: 1.0 / dir.y,
            z: 1.0 / dir.z,
        };
        let mut best: Option<TriangleHit> = None;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            let t_max = best.map_or(1.0, |h| h.t);
            if !node.bounds.hits_segment(from, inv, t_max) {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for &f in &self.order[start..start + count] {
                        if skip(&self.faces[f]) {
                            continue;
                        }
                        let [a, b, c] = self.tris[f];
                        if let Some(t) = segment_triangle(from, dir, a, b, c) {
                            if best.is_none_or(|h| t < h.t) {
                                best = Some(TriangleHit { face: f, t });
                            }
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        best
    }

    /// Checks the structural invariants: every triangle in exactly one leaf
    /// and parent boxes enclosing their children.
    pub fn check_invariants(&self) -> bool {
        let mut seen = vec![0usize; self.tris.len()];
        let mut ok = true;
        for node in &self.nodes {
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for &f in &self.order[start..start + count] {
                        seen[f] += 1;
                        for &p in &self.tris[f] {
                            let mut b = Aabb::empty();
                            b.grow(p);
                            ok &= node.bounds.contains(&b);
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    ok &= node.bounds.contains(&self.nodes[left].bounds);
                    ok &= node.bounds.contains(&self.nodes[right].bounds);
                }
            }
        }
        ok && seen.iter().all(|&c| c == 1)
    }
}

fn build_node(
    nodes: &mut Vec<Node>,
    order: &mut [usize],
    start: usize,
    end: usize,
    boxes: &[Aabb],
    centroids: &[Vec3],
) -> usize {
    let mut bounds = Aabb::empty();
    let mut cbounds = Aabb::empty();
    for &f in &order[start..end] {
        bounds = Aabb::merge(&bounds, &boxes[f]);
        cbounds.grow(centroids[f]);
    }
    let id = nodes.len();
    nodes.push(Node {
        bounds,
        kind: NodeKind::Leaf {
            start,
            count: end - start,
        },
    });
    let count = end - start;
    if count <= LEAF_SIZE {
        return id;
    }
    let ext = cbounds.hi - cbounds.lo;
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = start + count / 2;
    order[start..end].sort_by(|&a, &b| {
        centroids[a][axis]
            .total_cmp(&centroids[b][axis])
            .then(a.cmp(&b))
    });
    let left = build_node(nodes, order, start, mid, boxes, centroids);
    let right = build_node(nodes, order, mid, end, boxes, centroids);
    nodes[id].kind = NodeKind::Inner { left, right };
    id
}

/// Möller–Trumbore intersection restricted to `t ∈ (0, 1]` along `dir`.
fn segment_triangle(origin: Vec3, dir: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Option<Real> {
    let e1 = b - a;
    let e2 = c - a;
    let pv = dir.cross(e2);
    let det = e1.dot(pv);
    let scale = e1.norm() * e2.norm() * dir.norm();
    if det.abs() <= 1e-14 * scale {
        return None;
    }
    let inv = 1.0 / det;
    let tv = origin - a;
    let u = tv.dot(pv) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qv = tv.cross(e1);
    let v = dir.dot(qv) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(qv) * inv;
    (t > 0.0 && t <= 1.0).then_some(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::vec3;

    fn big_triangle() -> TriMesh {
        TriMesh::new(
            vec![vec3(-10.0, -10.0, 0.0), vec3(10.0, -10.0, 0.0), vec3(0.0, 10.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn perpendicular_case() {
        let bvh = Bvh::build(&big_triangle());
        let c = bvh.closest_point(vec3(0.0, 0.0, 1.0)).unwrap();
        assert!((c.squared_distance - 1.0).abs() < 1e-15);
        assert!((c.point - vec3(0.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn beyond_edge_uses_segment() {
        let m = TriMesh::new(
            vec![vec3(0.0, 0.0, 0.0), vec3(2.0, 0.0, 0.0), vec3(0.0, 2.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let bvh = Bvh::build(&m);
        // Below the x-axis edge and above the plane.
        let c = bvh.closest_point(vec3(1.0, -3.0, 4.0)).unwrap();
        assert!((c.squared_distance - 25.0).abs() < 1e-12);
        assert!((c.point - vec3(1.0, 0.0, 0.0)).norm() < 1e-12);
        assert!((c.bary[0] - 0.5).abs() < 1e-12 && (c.bary[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn vertex_region() {
        let (q, bary) = closest_point_on_triangle(
            vec3(-1.0, -1.0, 0.5),
            vec3(0.0, 0.0, 0.0),
            vec3(1.0, 0.0, 0.0),
            vec3(0.0, 1.0, 0.0),
        );
        assert_eq!(q, vec3(0.0, 0.0, 0.0));
        assert_eq!(bary, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_mesh_has_no_closest_point() {
        let bvh = Bvh::build(&TriMesh::new(vec![], vec![]).unwrap());
        assert!(bvh.closest_point(Vec3::ZERO).is_none());
        assert!(bvh.check_invariants());
    }

    #[test]
    fn segment_hits() {
        let bvh = Bvh::build(&big_triangle());
        assert!(bvh.segment_blocked(vec3(0.0, 0.0, 1.0), vec3(0.0, 0.0, -1.0), |_| false));
        assert!(!bvh.segment_blocked(vec3(0.0, 0.0, 1.0), vec3(0.0, 0.0, 0.5), |_| false));
        assert!(!bvh.segment_blocked(vec3(0.0, 0.0, 1.0), vec3(0.0, 0.0, -1.0), |_| true));
        let h = bvh.first_hit(vec3(0.0, 0.0, 1.0), vec3(0.0, 0.0, -3.0), |_| false).unwrap();
        assert!((h.t - 0.25).abs() < 1e-12);
    }
}
