//! Scan-to-mesh error statistics per head region.
//!
//! Errors run from each scan point to the predicted surface (never the other
//! way), so holes in the scan do not penalize the prediction. Scan points get
//! the region labels of their nearest reference-registration vertex.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::io::{colored_points_to_ply, read_obj, read_scan};
use crate::losses::read_mask;
use crate::mesh::{Bvh, TriMesh};
use crate::par;
use crate::tensor::Real;

pub const COMPLETE_HEAD: &str = "complete-head";
/// Region masks looked up next to the eyeball mask.
pub const REGION_NAMES: [&str; 3] = ["face", "scalp", "neck"];
/// Errors at or above this are drawn pure red.
pub const HEATMAP_MAX: Real = 3.0;
pub const CSV_HEADER: &str = "frame_id,region,median,mean,std,n_points";

/// Named vertex sets on the template. The complete head is implicit.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RegionMasks {
    pub regions: Vec<(String, Vec<usize>)>,
}

impl RegionMasks {
    /// Reads `face.txt`, `scalp.txt`, and `neck.txt` from `dir`. Missing
    /// files are skipped with a warning.
    pub fn load(dir: &Path, n_v: usize) -> Result<(RegionMasks, Vec<String>)> {
        let mut regions = Vec::new();
        let mut warnings = Vec::new();
        for name in REGION_NAMES {
            let path = dir.join(format!("{name}.txt"));
            if !path.exists() {
                warnings.push(format!(
                    "region mask {} not found; {name} statistics omitted",
                    path.display()
                ));
                continue;
            }
            regions.push((name.to_string(), read_mask(&path, n_v)?));
        }
        Ok((RegionMasks { regions }, warnings))
    }

    pub fn validate(&self, n_v: usize) -> Result<()> {
        for (name, idx) in &self.regions {
            if name == COMPLETE_HEAD {
                return Err(Error::Config(format!("region name {COMPLETE_HEAD:?} is reserved")));
            }
            if let Some(&i) = idx.iter().find(|&&i| i >= n_v) {
                return Err(Error::Mismatch(format!(
                    "region {name} references vertex {i} of a {n_v}-vertex mesh"
                )));
            }
        }
        Ok(())
    }

    /// Per-vertex membership flags, one row per region.
    fn labels(&self, n_v: usize) -> Vec<Vec<bool>> {
        self.regions
            .iter()
            .map(|(_, idx)| {
                let mut f = vec![false; n_v];
                for &i in idx {
                    f[i] = true;
                }
                f
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub region: String,
    pub median: Real,
    pub mean: Real,
    /// Population standard deviation.
    pub std: Real,
    pub n_points: usize,
}

impl RegionStats {
    /// NaN statistics for an empty set.
    pub fn of(region: &str, errors: &[Real]) -> RegionStats {
        let n = errors.len();
        if n == 0 {
            return RegionStats {
                region: region.into(),
                median: Real::NAN,
                mean: Real::NAN,
                std: Real::NAN,
                n_points: 0,
            };
        }
        let mut sorted = errors.to_vec();
        sorted.sort_by(Real::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        // Sum in sorted order so the result does not depend on input order.
        let mean = sorted.iter().sum::<Real>() / n as Real;
        let var = sorted.iter().map(|e| (e - mean) * (e - mean)).sum::<Real>() / n as Real;
        RegionStats {
            region: region.into(),
            median,
            mean,
            std: var.sqrt(),
            n_points: n,
        }
    }

    fn csv(&self, frame_id: &str) -> String {
        format!(
            "{frame_id},{},{},{},{},{}",
            self.region, self.median, self.mean, self.std, self.n_points
        )
    }
}

/// Per-point errors and region labels of one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEval {
    pub frame_id: String,
    pub regions: Vec<RegionStats>,
    #[serde(skip)]
    pub points: Vec<Vec3>,
    #[serde(skip)]
    pub errors: Vec<Real>,
    /// Region membership per point, parallel to `RegionMasks::regions`.
    #[serde(skip)]
    pub labels: Vec<Vec<bool>>,
}

impl FrameEval {
    pub fn region(&self, name: &str) -> Option<&RegionStats> {
        self.regions.iter().find(|r| r.region == name)
    }
}

/// Distance from each scan point to the closest point on `mesh`.
pub fn scan_to_mesh_distances(mesh: &TriMesh, scan: &[Vec3]) -> Result<Vec<Real>> {
    if mesh.n_faces() == 0 {
        return Err(Error::Mesh("prediction has no faces".into()));
    }
    let bvh = Bvh::build(mesh);
    Ok(par::map_slice(scan, |&p| {
        bvh.closest_point(p)
            .expect("non-empty mesh has a closest point")
            .squared_distance
            .sqrt()
    }))
}

/// Index of the nearest vertex for each point; ties go to the lower index.
pub fn nearest_vertices(mesh: &TriMesh, points: &[Vec3]) -> Vec<usize> {
    par::map_slice(points, |&p| {
        let mut best = (Real::INFINITY, 0);
        for (i, &v) in mesh.vertices.iter().enumerate() {
            let d = (v - p).norm2();
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    })
}

pub fn evaluate_frame(
    frame_id: &str,
    prediction: &TriMesh,
    scan: &[Vec3],
    reference: &TriMesh,
    masks: &RegionMasks,
) -> Result<FrameEval> {
    if !prediction.same_topology(reference) {
        return Err(Error::Mismatch(format!(
            "prediction and reference registration of {frame_id} differ in topology"
        )));
    }
    masks.validate(reference.n_vertices())?;
    let errors = scan_to_mesh_distances(prediction, scan)?;
    let nearest = nearest_vertices(reference, scan);
    let vlabels = masks.labels(reference.n_vertices());
    let labels: Vec<Vec<bool>> = vlabels
        .iter()
        .map(|flags| nearest.iter().map(|&v| flags[v]).collect())
        .collect();
    let mut regions = vec![RegionStats::of(COMPLETE_HEAD, &errors)];
    for ((name, _), flags) in masks.regions.iter().zip(&labels) {
        let sel: Vec<Real> = errors.iter().zip(flags).filter(|(_, &f)| f).map(|(&e, _)| e).collect();
        regions.push(RegionStats::of(name, &sel));
    }
    Ok(FrameEval {
        frame_id: frame_id.into(),
        regions,
        points: scan.to_vec(),
        errors,
        labels,
    })
}

/// Fraction of points whose error is at most each threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CumulativeRow {
    pub threshold: Real,
    pub fraction: Real,
}

/// Thresholds 0, 0.1, …, 5.0.
pub fn default_thresholds() -> Vec<Real> {
    (0..=50).map(|i| i as Real * 0.1).collect()
}

pub fn cumulative(errors: &[Real], thresholds: &[Real]) -> Vec<CumulativeRow> {
    let mut sorted = errors.to_vec();
    sorted.sort_by(Real::total_cmp);
    let n = sorted.len().max(1) as Real;
    thresholds
        .iter()
        .map(|&t| CumulativeRow {
            threshold: t,
            fraction: sorted.partition_point(|&e| e <= t) as Real / n,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: Vec<FrameEval>,
    /// Statistics pooled over all points of all frames.
    pub overall: Vec<RegionStats>,
    /// Pooled over the complete head.
    pub cumulative: Vec<CumulativeRow>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    /// Frames are ordered by id, so input order never matters.
    pub fn assemble(mut frames: Vec<FrameEval>, masks: &RegionMasks, warnings: Vec<String>) -> EvalReport {
        frames.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
        let all: Vec<Real> = frames.iter().flat_map(|f| f.errors.iter().copied()).collect();
        let mut overall = vec![RegionStats::of(COMPLETE_HEAD, &all)];
        for (r, (name, _)) in masks.regions.iter().enumerate() {
            let sel: Vec<Real> = frames
                .iter()
                .flat_map(|f| f.errors.iter().zip(&f.labels[r]).filter(|(_, &l)| l).map(|(&e, _)| e))
                .collect();
            overall.push(RegionStats::of(name, &sel));
        }
        EvalReport {
            cumulative: cumulative(&all, &default_thresholds()),
            frames,
            overall,
            warnings,
        }
    }

    pub fn overall(&self, region: &str) -> Option<&RegionStats> {
        self.overall.iter().find(|r| r.region == region)
    }

    /// Median over all complete-head points.
    pub fn median(&self) -> Real {
        self.overall(COMPLETE_HEAD).map_or(Real::NAN, |r| r.median)
    }

    /// Per-frame rows, then pooled rows under frame id `all`.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for f in &self.frames {
            for r in &f.regions {
                s.push_str(&r.csv(&f.frame_id));
                s.push('\n');
            }
        }
        for r in &self.overall {
            s.push_str(&r.csv("all"));
            s.push('\n');
        }
        s
    }

    pub fn cumulative_csv(&self) -> String {
        let mut s = String::from("threshold,fraction\n");
        for r in &self.cumulative {
            s.push_str(&format!("{},{}\n", r.threshold, r.fraction));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `report.csv`, `report.json`, `cumulative.csv`, and one
    /// `heatmaps/<frame>.ply` per frame.
    pub fn write(&self, out: &Path) -> Result<()> {
        let hm = out.join("heatmaps");
        std::fs::create_dir_all(&hm).map_err(|e| Error::io(&hm, e))?;
        let write = |name: &str, text: String| {
            let p = out.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(p, e))
        };
        write("report.csv", self.to_csv())?;
        write("report.json", self.to_json())?;
        write("cumulative.csv", self.cumulative_csv())?;
        for f in &self.frames {
            let p = hm.join(format!("{}.ply", f.frame_id));
            std::fs::write(&p, heatmap_ply(&f.points, &f.errors)).map_err(|e| Error::io(p, e))?;
        }
        Ok(())
    }
}

/// White at zero error, fading to pure red at `HEATMAP_MAX` and beyond.
pub fn heatmap_color(error: Real) -> [u8; 3] {
    let t = (error / HEATMAP_MAX).clamp(0.0, 1.0);
    let c = (255.0 * (1.0 - t)).round() as u8;
    [255, c, c]
}

pub fn heatmap_ply(points: &[Vec3], errors: &[Real]) -> String {
    let colors: Vec<[u8; 3]> = errors.iter().map(|&e| heatmap_color(e)).collect();
    colored_points_to_ply(points, &colors)
}

/// Evaluates `<predictions>/<id>/<mesh_name>.obj` against
/// `<scans>/<id>/scan.ply` and `<scans>/<id>/ref.obj` for every prediction.
pub fn evaluate_dirs(predictions: &Path, scans: &Path, mesh_name: &str, masks_dir: Option<&Path>) -> Result<EvalReport> {
    let frames = crate::synth::list_frames(predictions)?;
    if frames.is_empty() {
        return Err(Error::Config(format!("no prediction frames in {}", predictions.display())));
    }
    let first_ref = read_obj(&scans.join(&frames[0].id).join("ref.obj"))?;
    let n_v = first_ref.n_vertices();
    let (masks, warnings) = match masks_dir {
        Some(d) => RegionMasks::load(d, n_v)?,
        None => (
            RegionMasks::default(),
            vec!["no region masks given; only complete-head statistics reported".to_string()],
        ),
    };
    let results = par::map_slice(&frames, |f| -> Result<FrameEval> {
        let pred = read_obj(&f.dir.join(format!("{mesh_name}.obj")))?;
        let dir = scans.join(&f.id);
        let scan = read_scan(&dir.join("scan.ply"))?.valid_points();
        let reference = read_obj(&dir.join("ref.obj"))?;
        evaluate_frame(&f.id, &pred, &scan, &reference, &masks)
    });
    let frames = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::assemble(frames, &masks, warnings))
}
