//! Two-stage head reconstruction.
//!
//! Coarse: per-view features → volume on the capture grid → localization →
//! volume on the transformed grid → 3D network → per-vertex probability
//! volumes → soft-argmax. Refinement: per-vertex local grids around the
//! coarse mesh, surface-aware fusion plus the template vertex as identifier
//! → 3D network → soft-argmax within the local grid.

pub mod nets;

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::ops::{concat, reshape, soft_argmax, softmax_volume};
use crate::autodiff::{checkpoint, Bound, ParamStore, Parameter, Tape, Var};
use crate::camera::Rig;
use crate::error::{Error, Result};
use crate::fusion::{
    sample_views, surface_weights, transform_grid_op, HeadTransform, SampleGrid, ViewWeights,
};
use crate::geom::{vec3, Vec3};
use crate::io::GrayImage;
use crate::mesh::{vertex_visibility, Bvh, TriMesh};
use crate::par;
use crate::tensor::{Real, Tensor};

use nets::{LocHead, UNet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    SurfaceAware,
    Naive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub d_c: usize,
    pub d_r: usize,
    pub d_f: usize,
    /// Integer image downsampling for the coarse and refinement stages.
    pub coarse_downsample: usize,
    pub refine_downsample: usize,
    pub volume_min: Vec3,
    pub volume_max: Vec3,
    /// Half-extent of each per-vertex refinement grid, scene units.
    pub local_half_extent: Real,
    pub backbone_widths: Vec<usize>,
    pub rec_widths: Vec<usize>,
    pub ref_widths: Vec<usize>,
    pub loc_channels: usize,
    pub loc_hidden: usize,
    /// When false the coarse grid is used untransformed.
    pub localize: bool,
    pub fusion: FusionMode,
}

impl PipelineConfig {
    /// Grid sizes, feature count, and image scales as published.
    pub fn paper() -> PipelineConfig {
        let volume_min = vec3(-180.0, -180.0, -180.0);
        let volume_max = vec3(180.0, 180.0, 180.0);
        PipelineConfig {
            d_c: 32,
            d_r: 8,
            d_f: 8,
            coarse_downsample: 8,
            refine_downsample: 4,
            local_half_extent: 0.03 * (volume_max - volume_min).norm(),
            volume_min,
            volume_max,
            backbone_widths: vec![16, 32, 64],
            rec_widths: vec![16, 32, 64],
            ref_widths: vec![16, 32],
            loc_channels: 16,
            loc_hidden: 64,
            localize: true,
            fusion: FusionMode::SurfaceAware,
        }
    }

    /// Reduced setting for single-machine training on 200×150 images.
    pub fn desk() -> PipelineConfig {
        PipelineConfig {
            d_c: 16,
            d_r: 6,
            coarse_downsample: 4,
            refine_downsample: 2,
            backbone_widths: vec![8, 16, 16],
            rec_widths: vec![16, 32, 32],
            ref_widths: vec![12, 24],
            loc_channels: 8,
            loc_hidden: 32,
            ..PipelineConfig::paper()
        }
    }

    /// Smallest setting, used for gradient checks.
    pub fn tiny() -> PipelineConfig {
        PipelineConfig {
            d_c: 8,
            d_r: 4,
            d_f: 2,
            coarse_downsample: 2,
            refine_downsample: 1,
            backbone_widths: vec![2, 3],
            rec_widths: vec![3, 4],
            ref_widths: vec![2],
            loc_channels: 2,
            loc_hidden: 4,
            ..PipelineConfig::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("pipeline config: {m}")));
        if self.d_c < 2 || self.d_r < 2 || self.d_f == 0 {
            return bad(format!("grid sizes must be >= 2 and d_f >= 1, got d_c={} d_r={} d_f={}", self.d_c, self.d_r, self.d_f));
        }
        if self.coarse_downsample == 0 || self.refine_downsample == 0 {
            return bad("downsampling factors must be >= 1".into());
        }
        if self.backbone_widths.is_empty() || self.rec_widths.is_empty() || self.ref_widths.is_empty() {
            return bad("network widths must be non-empty".into());
        }
        let all = self.backbone_widths.iter().chain(&self.rec_widths).chain(&self.ref_widths);
        if all.chain([&self.loc_channels, &self.loc_hidden]).any(|&w| w == 0) {
            return bad("network widths must be positive".into());
        }
        if !(self.local_half_extent > 0.0) {
            return bad("local grid extent must be positive".into());
        }
        for i in 0..3 {
            if !(self.volume_min[i] < self.volume_max[i]) {
                return bad("capture volume must satisfy min < max".into());
            }
        }
        Ok(())
    }

    pub fn coarse_grid(&self) -> SampleGrid {
        SampleGrid::axis_aligned(self.volume_min, self.volume_max, self.d_c).expect("validated volume")
    }
}

/// Which sub-network a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    CoarseImage,
    Localization,
    CoarseVolume,
    RefineImage,
    RefineVolume,
}

impl ParamGroup {
    pub fn of(p: &Parameter) -> ParamGroup {
        let n = p.name.as_str();
        if n.starts_with("coarse.img.") {
            ParamGroup::CoarseImage
        } else if n.starts_with("coarse.loc.") {
            ParamGroup::Localization
        } else if n.starts_with("coarse.rec.") {
            ParamGroup::CoarseVolume
        } else if n.starts_with("refine.img.") {
            ParamGroup::RefineImage
        } else {
            ParamGroup::RefineVolume
        }
    }

    pub fn is_coarse(self) -> bool {
        matches!(
            self,
            ParamGroup::CoarseImage | ParamGroup::Localization | ParamGroup::CoarseVolume
        )
    }
}

/// Images of one frame at both stage resolutions, scaled to `[0, 1]`.
#[derive(Clone, Debug)]
pub struct FrameInput {
    /// `[k, 1, H_c, W_c]`.
    pub coarse: Tensor,
    /// `[k, 1, H_r, W_r]`.
    pub refine: Tensor,
}

fn stack_images(images: &[GrayImage]) -> Tensor {
    let (w, h) = (images[0].width, images[0].height);
    let mut data = Vec::with_capacity(images.len() * w * h);
    for img in images {
        assert_eq!((img.width, img.height), (w, h), "views differ in size");
        data.extend(img.pixels.iter().map(|&p| p as Real / 255.0));
    }
    Tensor::from_vec(&[images.len(), 1, h, w], data)
}

/// Rigs matching the downsampled images of each stage.
#[derive(Clone, Debug)]
pub struct StageRigs {
    pub full: Rig,
    pub coarse: Rig,
    pub refine: Rig,
}

impl StageRigs {
    pub fn new(rig: &Rig, cfg: &PipelineConfig) -> StageRigs {
        StageRigs {
            full: rig.clone(),
            coarse: rig.downsampled(cfg.coarse_downsample),
            refine: rig.downsampled(cfg.refine_downsample),
        }
    }
}

/// Checks the views against the rig and builds both stage inputs.
pub fn prepare_input(images: &[GrayImage], rig: &Rig, cfg: &PipelineConfig) -> Result<FrameInput> {
    if images.len() != rig.len() {
        return Err(Error::Mismatch(format!(
            "{} images for a rig of {} cameras",
            images.len(),
            rig.len()
        )));
    }
    for (img, cam) in images.iter().zip(&rig.cameras) {
        if img.width != cam.width || img.height != cam.height {
            return Err(Error::Mismatch(format!(
                "camera {} expects {}x{} images, got {}x{}",
                cam.name, cam.width, cam.height, img.width, img.height
            )));
        }
    }
    let down = |f: usize| images.iter().map(|i| i.downsample(f)).collect::<Vec<_>>();
    Ok(FrameInput {
        coarse: stack_images(&down(cfg.coarse_downsample)),
        refine: stack_images(&down(cfg.refine_downsample)),
    })
}

/// Coarse-stage outputs on a tape.
pub struct CoarseVars<'t> {
    /// `[n_v, 3]`.
    pub vertices: Var<'t>,
    /// Raw localization output `[12]`, absent without localization.
    pub raw_transform: Option<Var<'t>>,
    /// Transformed grid `[d_c³, 3]`.
    pub grid: Var<'t>,
}

/// Precomputed per-frame refinement inputs that depend only on the coarse
/// mesh.
#[derive(Clone, Debug)]
pub struct RefineSetup {
    /// `[n_v · d_r³, 3]` local grid points.
    pub points: Tensor,
    /// `[n_v, d_r³, 3]`, the same points grouped per vertex.
    pub grids: Tensor,
    pub weights: ViewWeights,
}

#[derive(Clone, Debug)]
pub struct HeadModel {
    pub cfg: PipelineConfig,
    pub store: ParamStore,
    pub template: TriMesh,
    coarse_img: UNet,
    loc: LocHead,
    rec: UNet,
    refine_img: UNet,
    refine_vol: UNet,
    /// `[n_v, 3]` template vertices scaled to unit bounding radius.
    identifiers: Tensor,
    local_offsets: Vec<Vec3>,
}

impl HeadModel {
    pub fn new(cfg: PipelineConfig, template: TriMesh, seed: u64) -> Result<HeadModel> {
        cfg.validate()?;
        template.validate()?;
        if template.n_faces() == 0 {
            return Err(Error::Mesh("template has no faces".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let n_v = template.n_vertices();
        let df = cfg.d_f;
        let coarse_img = UNet::new(&mut store, "coarse.img", 2, 1, &cfg.backbone_widths, df, 1.0, &mut rng);
        let loc = LocHead::new(&mut store, "coarse.loc", 2 * df, cfg.d_c, cfg.loc_channels, cfg.loc_hidden, &mut rng);
        let rec = UNet::new(&mut store, "coarse.rec", 3, 2 * df, &cfg.rec_widths, n_v, 0.1, &mut rng);
        let refine_img = UNet::new(&mut store, "refine.img", 2, 1, &cfg.backbone_widths, df, 1.0, &mut rng);
        let refine_vol = UNet::new(&mut store, "refine.ref", 3, 2 * df + 3, &cfg.ref_widths, 1, 0.1, &mut rng);
        let (lo, hi) = template.bounds();
        let c = (lo + hi) * 0.5;
        let r = template.bounding_radius().max(1e-12);
        let identifiers = TriMesh {
            vertices: template.vertices.iter().map(|&v| (v - c) / r).collect(),
            faces: vec![],
        }
        .vertex_tensor();
        let local_offsets = SampleGrid::centered(Vec3::ZERO, cfg.local_half_extent, cfg.d_r)?.points;
        Ok(HeadModel {
            cfg,
            store,
            template,
            coarse_img,
            loc,
            rec,
            refine_img,
            refine_vol,
            identifiers,
            local_offsets,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.template.n_vertices()
    }

    /// Coarse stage on a tape. `input` is `[k, 1, H_c, W_c]`.
    pub fn coarse_forward<'t>(&self, p: &Bound<'t>, input: &Tensor, rig: &Rig) -> CoarseVars<'t> {
        let tape = p.tape();
        let cfg = &self.cfg;
        let d = cfg.d_c;
        let maps = self.coarse_img.forward(p, tape.constant(input.clone()));
        let base = tape.constant(cfg.coarse_grid().to_tensor());
        let (raw, grid) = if cfg.localize {
            let q = sample_views(base, maps, rig, ViewWeights::Uniform, 1);
            let q = reshape(q, &[1, 2 * cfg.d_f, d, d, d]);
            let raw = self.loc.forward(p, q);
            (Some(raw), transform_grid_op(raw, base))
        } else {
            (None, base)
        };
        let q = sample_views(grid, maps, rig, ViewWeights::Uniform, 1);
        let q = reshape(q, &[1, 2 * cfg.d_f, d, d, d]);
        let logits = self.rec.forward(p, q);
        let n_v = self.n_vertices();
        let prob = softmax_volume(reshape(logits, &[n_v, d, d, d]));
        let vertices = soft_argmax(reshape(prob, &[n_v, d * d * d]), grid);
        CoarseVars {
            vertices,
            raw_transform: raw,
            grid,
        }
    }

    /// Local grids, visibility, and view weights around a coarse mesh.
    pub fn refine_setup(&self, coarse: &[Vec3], rig: &Rig) -> Result<RefineSetup> {
        let n_v = self.n_vertices();
        assert_eq!(coarse.len(), n_v, "coarse mesh vertex count");
        let mesh = self.template.with_vertices(coarse.to_vec());
        let s = self.local_offsets.len();
        let mut pts = Vec::with_capacity(n_v * s * 3);
        for &v in coarse {
            for &o in &self.local_offsets {
                pts.extend_from_slice(&(v + o).to_array());
            }
        }
        let weights = match self.cfg.fusion {
            FusionMode::Naive => ViewWeights::Uniform,
            FusionMode::SurfaceAware => {
                let bvh = Bvh::build(&mesh);
                let normals = mesh.vertex_normals();
                let vis: Vec<Vec<bool>> = rig
                    .cameras
                    .iter()
                    .map(|cam| vertex_visibility(&mesh, &bvh, cam))
                    .collect();
                let eta = par::map_range(n_v, |i| {
                    let flags: Vec<bool> = vis.iter().map(|v| v[i]).collect();
                    surface_weights(coarse[i], normals.normals[i], &flags, rig)
                });
                let mut w = Vec::with_capacity(n_v * rig.len());
                for e in eta {
                    w.extend(e?);
                }
                ViewWeights::PerGroup(Tensor::from_vec(&[n_v, rig.len()], w))
            }
        };
        let points = Tensor::from_vec(&[n_v * s, 3], pts);
        let grids = points.clone().reshape(&[n_v, s, 3]);
        Ok(RefineSetup { points, grids, weights })
    }

    /// Refinement stage on a tape. `input` is `[k, 1, H_r, W_r]`.
    pub fn refine_forward<'t>(&self, p: &Bound<'t>, input: &Tensor, rig: &Rig, setup: &RefineSetup) -> Var<'t> {
        let tape = p.tape();
        let (n_v, d) = (self.n_vertices(), self.cfg.d_r);
        let s = d * d * d;
        let maps = self.refine_img.forward(p, tape.constant(input.clone()));
        let pts = tape.constant(setup.points.clone());
        let fused = sample_views(pts, maps, rig, setup.weights.clone(), n_v);
        let ids: Vec<Real> = self
            .identifiers
            .data()
            .chunks_exact(3)
            .flat_map(|v| v.iter().flat_map(|&c| std::iter::repeat_n(c, s)))
            .collect();
        let ids = tape.constant(Tensor::from_vec(&[n_v, 3, s], ids));
        let feat = reshape(concat(&[fused, ids], 1), &[n_v, 2 * self.cfg.d_f + 3, d, d, d]);
        let logits = self.refine_vol.forward(p, feat);
        let prob = softmax_volume(reshape(logits, &[n_v, d, d, d]));
        soft_argmax(reshape(prob, &[n_v, s]), tape.constant(setup.grids.clone()))
    }

    pub fn coarse_infer(&self, input: &FrameInput, rigs: &StageRigs) -> (TriMesh, HeadTransform, SampleGrid) {
        let tape = Tape::new();
        let p = self.store.bind(&tape, |_| false);
        let out = self.coarse_forward(&p, &input.coarse, &rigs.coarse);
        let mesh = self.template.from_vertex_tensor(&out.vertices.value());
        let ht = out
            .raw_transform
            .map(|r| HeadTransform::from_raw(r.value().data()))
            .unwrap_or(HeadTransform::IDENTITY);
        (mesh, ht, SampleGrid::from_tensor(&out.grid.value()))
    }

    pub fn refine_vertices(&self, coarse: &TriMesh, input: &FrameInput, rigs: &StageRigs) -> Result<TriMesh> {
        let setup = self.refine_setup(&coarse.vertices, &rigs.refine)?;
        let tape = Tape::new();
        let p = self.store.bind(&tape, |_| false);
        let v = self.refine_forward(&p, &input.refine, &rigs.refine, &setup);
        Ok(self.template.from_vertex_tensor(&v.value()))
    }

    /// Both stages from full-resolution views.
    pub fn infer(&self, images: &[GrayImage], rig: &Rig) -> Result<Inference> {
        let t0 = Instant::now();
        let input = prepare_input(images, rig, &self.cfg)?;
        let rigs = StageRigs::new(rig, &self.cfg);
        let t1 = Instant::now();
        let (coarse, transform, grid) = self.coarse_infer(&input, &rigs);
        let t2 = Instant::now();
        let refined = self.refine_vertices(&coarse, &input, &rigs)?;
        let t3 = Instant::now();
        let ms = |a: Instant, b: Instant| (b - a).as_secs_f64() * 1e3;
        Ok(Inference {
            coarse,
            refined,
            transform,
            grid,
            timing: Timing {
                prepare_ms: ms(t0, t1),
                coarse_ms: ms(t1, t2),
                refine_ms: ms(t2, t3),
                total_ms: ms(t0, t3),
            },
        })
    }

    /// Writes `model.ckpt`, `config.json`, and `template.obj` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        checkpoint::save(&self.store, &dir.join("model.ckpt"))?;
        let cfg = serde_json::to_string_pretty(&self.cfg).expect("config serializes");
        let p = dir.join("config.json");
        std::fs::write(&p, cfg).map_err(|e| Error::io(p, e))?;
        crate::io::write_obj(&dir.join("template.obj"), &self.template)
    }

    pub fn load(dir: &Path) -> Result<HeadModel> {
        let p = dir.join("config.json");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| Error::parse(p.display().to_string(), e))?;
        let template = crate::io::read_obj(&dir.join("template.obj"))?;
        let mut model = HeadModel::new(cfg, template, 0)?;
        checkpoint::load(&mut model.store, &dir.join("model.ckpt"))?;
        Ok(model)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub prepare_ms: f64,
    pub coarse_ms: f64,
    pub refine_ms: f64,
    pub total_ms: f64,
}

#[derive(Clone, Debug)]
pub struct Inference {
    pub coarse: TriMesh,
    pub refined: TriMesh,
    pub transform: HeadTransform,
    pub grid: SampleGrid,
    pub timing: Timing,
}
