//! Triangle meshes with fixed topology.

mod bvh;
mod visibility;

pub use bvh::{closest_point_on_triangle, Bvh, ClosestPoint, TriangleHit};
pub use visibility::{vertex_visibility, visibility_epsilon};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

/// Per-vertex unit normals; `degenerate[i]` marks vertices whose 1-ring has
/// zero area (their normal is the zero vector).
#[derive(Clone, Debug)]
pub struct VertexNormals {
    pub normals: Vec<Vec3>,
    pub degenerate: Vec<bool>,
}

/// Unstructured surface points, e.g. a scan.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScanCloud {
    pub points: Vec<Vec3>,
    pub valid: Option<Vec<bool>>,
}

impl ScanCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        ScanCloud { points, valid: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points whose validity flag is set (all points when there are no flags).
    pub fn valid_points(&self) -> Vec<Vec3> {
        match &self.valid {
            Some(v) => self
                .points
                .iter()
                .zip(v)
                .filter(|(_, &ok)| ok)
                .map(|(p, _)| *p)
                .collect(),
            None => self.points.clone(),
        }
    }
}

/// A surface sample with its source face and barycentric coordinates.
#[derive(Clone, Copy, Debug)]
pub struct SurfaceSample {
    pub point: Vec3,
    pub face: usize,
    pub bary: [Real; 3],
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = TriMesh { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::Mesh(format!("face {fi} {f:?} indexes past {n} vertices")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Mesh(format!("face {fi} {f:?} repeats a vertex")));
            }
        }
        if let Some(i) = self.vertices.iter().position(|v| !v.is_finite()) {
            return Err(Error::Mesh(format!("vertex {i} is not finite")));
        }
        Ok(())
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn same_topology(&self, other: &TriMesh) -> bool {
        self.vertices.len() == other.vertices.len() && self.faces == other.faces
    }

    /// Same faces, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> TriMesh {
        assert_eq!(vertices.len(), self.vertices.len(), "vertex count changed");
        TriMesh {
            vertices,
            faces: self.faces.clone(),
        }
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_area(&self, f: usize) -> Real {
        let [a, b, c] = self.triangle(f);
        0.5 * (b - a).cross(c - a).norm()
    }

    pub fn total_area(&self) -> Real {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Unique undirected edges as `(min, max)` pairs, sorted lexicographically.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    /// Area-weighted average of incident face normals.
    pub fn vertex_normals(&self) -> VertexNormals {
        let mut acc = vec![Vec3::ZERO; self.vertices.len()];
        for f in 0..self.faces.len() {
            let [a, b, c] = self.triangle(f);
            // Cross product length is twice the area, so this is area-weighted.
            let n = (b - a).cross(c - a);
            for &i in &self.faces[f] {
                acc[i] += n;
            }
        }
        let scale = self.bounding_radius().max(1e-300);
        let mut degenerate = vec![false; acc.len()];
        let normals = acc
            .into_iter()
            .enumerate()
            .map(|(i, n)| {
                if n.norm() <= 1e-12 * scale * scale {
                    degenerate[i] = true;
                    Vec3::ZERO
                } else {
                    n / n.norm()
                }
            })
            .collect();
        VertexNormals { normals, degenerate }
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3 {
            x: Real::INFINITY,
            y: Real::INFINITY,
            z: Real::INFINITY,
        };
        let mut hi = -lo;
        for &v in &self.vertices {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Radius of the sphere around the bounding-box center that holds every
    /// vertex.
    pub fn bounding_radius(&self) -> Real {
        if self.vertices.is_empty() {
            return 0.0;
        }
        let (lo, hi) = self.bounds();
        let c = (lo + hi) * 0.5;
        self.vertices
            .iter()
            .map(|&v| (v - c).norm())
            .fold(0.0, Real::max)
    }

    pub fn vertex_tensor(&self) -> Tensor {
        let data = self.vertices.iter().flat_map(|v| v.to_array()).collect();
        Tensor::from_vec(&[self.vertices.len().max(1), 3], data)
    }

    pub fn from_vertex_tensor(&self, t: &Tensor) -> TriMesh {
        assert_eq!(t.shape(), &[self.vertices.len(), 3], "vertex tensor shape");
        self.with_vertices(t.data().chunks_exact(3).map(Vec3::from_slice).collect())
    }

    /// Area-proportional face choice with uniform barycentric sampling.
    pub fn sample_surface(&self, count: usize, rng: &mut impl Rng) -> Result<Vec<SurfaceSample>> {
        if count == 0 {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        let mut cdf = Vec::with_capacity(self.faces.len());
        let mut total = 0.0;
        for f in 0..self.faces.len() {
            total += self.face_area(f);
            cdf.push(total);
        }
        if !(total > 0.0) {
            return Err(Error::Degenerate("cannot sample a mesh with zero area".into()));
        }
        Ok((0..count)
            .map(|_| {
                let x: Real = rng.random::<Real>() * total;
                let face = cdf.partition_point(|&c| c <= x).min(cdf.len() - 1);
                let (r1, r2): (Real, Real) = (rng.random(), rng.random());
                let s = r1.sqrt();
                let bary = [1.0 - s, s * (1.0 - r2), s * r2];
                let [a, b, c] = self.triangle(face);
                SurfaceSample {
                    point: a * bary[0] + b * bary[1] + c * bary[2],
                    face,
                    bary,
                }
            })
            .collect())
    }
}

/// Seeded area-uniform surface points.
pub fn sample_surface_points(mesh: &TriMesh, count: usize, seed: u64) -> Result<ScanCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = mesh.sample_surface(count, &mut rng)?;
    Ok(ScanCloud::new(samples.into_iter().map(|s| s.point).collect()))
}
