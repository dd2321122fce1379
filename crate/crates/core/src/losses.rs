//! Scan-to-mesh, edge-regularization, and vertex losses.
//!
//! All three take the predicted vertices as a `[n_v, 3]` tape variable so
//! gradients reach whatever produced them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::{Bvh, TriMesh};
use crate::par;
use crate::tensor::{Real, Tensor};

/// Geman–McClure penalty on a squared distance: `σ²e / (σ² + e)`.
pub fn geman_mcclure(e: Real, sigma: Real) -> Real {
    let s2 = sigma * sigma;
    s2 * e / (s2 + e)
}

/// `dρ/de = σ⁴ / (σ² + e)²`.
pub fn geman_mcclure_grad(e: Real, sigma: Real) -> Real {
    let s2 = sigma * sigma;
    let d = s2 + e;
    s2 * s2 / (d * d)
}

/// Loss weights for one training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_s2m: Real,
    pub lambda_reg: Real,
    /// Geman–McClure scale σ_ρ in scene units.
    pub gm_scale: Real,
    /// One weight γ per template edge, in canonical edge order.
    pub edge_weights: Vec<Real>,
    /// Per-vertex ω for the vertex loss.
    pub vertex_mask: Vec<Real>,
    /// Scan points drawn per step.
    pub scan_samples: usize,
}

impl LossConfig {
    /// Uniform γ = 1 and ω = 0 for a template with `n_e` edges and `n_v`
    /// vertices; λ_s2m = 10, λ_reg = 1.
    pub fn new(n_e: usize, n_v: usize) -> Self {
        LossConfig {
            lambda_s2m: 10.0,
            lambda_reg: 1.0,
            gm_scale: 1.0,
            edge_weights: vec![1.0; n_e],
            vertex_mask: vec![0.0; n_v],
            scan_samples: 5000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_s2m >= 0.0 && self.lambda_reg >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(self.gm_scale > 0.0) {
            return Err(Error::Config("Geman-McClure scale must be positive".into()));
        }
        if self.edge_weights.iter().any(|&g| !(g >= 0.0)) {
            return Err(Error::Config("edge weights must be non-negative".into()));
        }
        if self.vertex_mask.iter().any(|&w| w != 0.0 && w != 1.0) {
            return Err(Error::Config("vertex mask entries must be 0 or 1".into()));
        }
        if self.scan_samples == 0 {
            return Err(Error::Config("scan sample count must be positive".into()));
        }
        Ok(())
    }
}

/// Vertex-index mask file: one index per line.
pub fn parse_mask(text: &str, n_v: usize) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let i: usize = line
            .parse()
            .map_err(|_| Error::parse("mask file", format!("line {}: {line:?} is not an index", ln + 1)))?;
        if i >= n_v {
            return Err(Error::parse("mask file", format!("line {}: index {i} >= {n_v}", ln + 1)));
        }
        out.push(i);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

pub fn read_mask(path: &Path, n_v: usize) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mask(&text, n_v)
}

pub fn mask_to_string(indices: &[usize]) -> String {
    indices.iter().map(|i| format!("{i}\n")).collect()
}

/// Edge-weight file: one `i j w` line per canonical edge, in edge order.
pub fn parse_edge_weights(text: &str, edges: &[(usize, usize)]) -> Result<Vec<Real>> {
    let mut out = Vec::with_capacity(edges.len());
    for (ln, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let bad = |m: String| Error::parse("edge weight file", format!("line {}: {m}", ln + 1));
        if parts.len() != 3 {
            return Err(bad(format!("expected \"i j w\", got {line:?}")));
        }
        let i: usize = parts[0].parse().map_err(|_| bad("bad index".into()))?;
        let j: usize = parts[1].parse().map_err(|_| bad("bad index".into()))?;
        let w: Real = parts[2].parse().map_err(|_| bad("bad weight".into()))?;
        if edges.get(ln) != Some(&(i, j)) {
            return Err(bad(format!("edge ({i},{j}) is not canonical edge #{ln}")));
        }
        if !(w >= 0.0) {
            return Err(bad(format!("negative weight {w}")));
        }
        out.push(w);
    }
    if out.len() != edges.len() {
        return Err(Error::parse(
            "edge weight file",
            format!("{} weights for {} edges", out.len(), edges.len()),
        ));
    }
    Ok(out)
}

pub fn edge_weights_to_string(edges: &[(usize, usize)], weights: &[Real]) -> String {
    edges
        .iter()
        .zip(weights)
        .map(|((i, j), w)| format!("{i} {j} {w}\n"))
        .collect()
}

fn vertices_of(v: &Tensor) -> Vec<Vec3> {
    v.data().chunks_exact(3).map(Vec3::from_slice).collect()
}

/// `λ_s2m · (1/|S|) Σ ρ(min_m ‖s − m‖²)` against the surface spanned by
/// `vertices` and `faces`.
///
/// Closest points are found once in the forward pass; the backward pass
/// keeps each point's face and barycentric weights fixed.
pub fn scan_to_mesh_loss<'t>(
    vertices: Var<'t>,
    faces: &[[usize; 3]],
    scan: &[Vec3],
    lambda: Real,
    sigma: Real,
) -> Var<'t> {
    assert!(!scan.is_empty(), "scan-to-mesh loss needs at least one scan point");
    let vs = vertices.shape();
    assert!(vs.len() == 2 && vs[1] == 3, "vertices must be [n_v,3], got {vs:?}");
    let mesh = TriMesh {
        vertices: vertices_of(&vertices.value()),
        faces: faces.to_vec(),
    };
    let bvh = Bvh::build(&mesh);
    let hits = par::map_slice(scan, |&s| {
        bvh.closest_point(s)
            .expect("scan-to-mesh loss needs a mesh with faces")
    });
    let scale = lambda / scan.len() as Real;
    let total: Real = hits.iter().map(|h| geman_mcclure(h.squared_distance, sigma)).sum::<Real>() * scale;
    let scan = scan.to_vec();
    let faces = faces.to_vec();
    vertices.tape().op(
        &[vertices],
        Tensor::scalar(total),
        Box::new(move |a| {
            let g = a.grad.item() * scale;
            let mut d = vec![0.0; vs[0] * 3];
            for (s, h) in scan.iter().zip(&hits) {
                // d/dm of ρ(‖s − m‖²)
                let coef = g * geman_mcclure_grad(h.squared_distance, sigma) * -2.0;
                let dm = (*s - h.point) * coef;
                for (k, &vi) in faces[h.face].iter().enumerate() {
                    let b = h.bary[k];
                    d[vi * 3] += b * dm.x;
                    d[vi * 3 + 1] += b * dm.y;
                    d[vi * 3 + 2] += b * dm.z;
                }
            }
            vec![Some(Tensor::from_vec(&vs, d))]
        }),
    )
}

/// `λ_reg · (1/n_e) Σ γ_i ‖e^m_i − e^t_i‖²` with edges `e = v_max − v_min`.
pub fn edge_regularization<'t>(
    vertices: Var<'t>,
    reference: &TriMesh,
    gamma: &[Real],
    lambda: Real,
) -> Var<'t> {
    let vs = vertices.shape();
    assert_eq!(
        vs,
        vec![reference.n_vertices(), 3],
        "edge regularization: mesh and reference differ in topology"
    );
    let edges = reference.edges();
    assert_eq!(gamma.len(), edges.len(), "one edge weight per edge expected");
    let vv = vertices.value();
    let v = vv.data();
    let diff: Vec<[Real; 3]> = edges
        .iter()
        .map(|&(i, j)| {
            let et = reference.vertices[j] - reference.vertices[i];
            [
                v[j * 3] - v[i * 3] - et.x,
                v[j * 3 + 1] - v[i * 3 + 1] - et.y,
                v[j * 3 + 2] - v[i * 3 + 2] - et.z,
            ]
        })
        .collect();
    let scale = lambda / edges.len() as Real;
    let total: Real = diff
        .iter()
        .zip(gamma)
        .map(|(d, g)| g * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]))
        .sum::<Real>()
        * scale;
    let gamma = gamma.to_vec();
    vertices.tape().op(
        &[vertices],
        Tensor::scalar(total),
        Box::new(move |a| {
            let g = a.grad.item() * scale;
            let mut out = vec![0.0; vs[0] * 3];
            for ((&(i, j), d), w) in edges.iter().zip(&diff).zip(&gamma) {
                for c in 0..3 {
                    let x = 2.0 * g * w * d[c];
                    out[j * 3 + c] += x;
                    out[i * 3 + c] -= x;
                }
            }
            vec![Some(Tensor::from_vec(&vs, out))]
        }),
    )
}

/// `(1/n_v) Σ ω_i ‖v^m_i − v^t_i‖²`.
pub fn vertex_loss<'t>(vertices: Var<'t>, reference: &TriMesh, mask: &[Real]) -> Var<'t> {
    let vs = vertices.shape();
    assert_eq!(
        vs,
        vec![reference.n_vertices(), 3],
        "vertex loss: mesh and reference differ in topology"
    );
    assert_eq!(mask.len(), vs[0], "one mask weight per vertex expected");
    let target = reference.vertex_tensor();
    let vv = vertices.value();
    let n = vs[0] as Real;
    let total: Real = vv
        .data()
        .chunks_exact(3)
        .zip(target.data().chunks_exact(3))
        .zip(mask)
        .map(|((p, q), w)| w * p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<Real>())
        .sum::<Real>()
        / n;
    let mask = mask.to_vec();
    vertices.tape().op(
        &[vertices],
        Tensor::scalar(total),
        Box::new(move |a| {
            let g = a.grad.item() * 2.0 / n;
            let d = a.inputs[0]
                .data()
                .iter()
                .zip(target.data())
                .enumerate()
                .map(|(k, (p, q))| g * mask[k / 3] * (p - q))
                .collect();
            vec![Some(Tensor::from_vec(&vs, d))]
        }),
    )
}

/// Per-term values of one loss evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub s2m: Real,
    pub reg: Real,
    pub v2v: Real,
}

impl LossTerms {
    pub fn total(&self) -> Real {
        self.s2m + self.reg + self.v2v
    }
}

/// `E_s2m + E_reg + E_v2v` on a fixed mesh, with per-term values.
pub fn evaluate_terms(mesh: &TriMesh, scan: &[Vec3], reference: &TriMesh, cfg: &LossConfig) -> LossTerms {
    let tape = Tape::new();
    let v = tape.constant(mesh.vertex_tensor());
    let s2m = if cfg.lambda_s2m > 0.0 {
        scan_to_mesh_loss(v, &mesh.faces, scan, cfg.lambda_s2m, cfg.gm_scale).value().item()
    } else {
        0.0
    };
    LossTerms {
        s2m,
        reg: edge_regularization(v, reference, &cfg.edge_weights, cfg.lambda_reg).value().item(),
        v2v: vertex_loss(v, reference, &cfg.vertex_mask).value().item(),
    }
}
