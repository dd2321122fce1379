//! Staged training against scans and reference registrations.
//!
//! 1. `coarse-pretrain`: coarse stage on the vertex loss only (ω ≡ 1).
//! 2. `coarse`: coarse stage on `E_s2m + E_reg + E_v2v` with ω on the
//!    detached component.
//! 3. `refine`: coarse stage frozen; refinement on the same terms with a
//!    smaller edge weight.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::ops::add_all;
use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::losses::{edge_regularization, scan_to_mesh_loss, vertex_loss, LossTerms};
use crate::mesh::TriMesh;
use crate::par;
use crate::pipeline::{prepare_input, FrameInput, HeadModel, ParamGroup, StageRigs};
use crate::synth::Dataset;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "coarse-pretrain")]
    CoarsePretrain,
    #[serde(rename = "coarse")]
    Coarse,
    #[serde(rename = "refine")]
    Refine,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::CoarsePretrain, Stage::Coarse, Stage::Refine];

    pub fn name(self) -> &'static str {
        match self {
            Stage::CoarsePretrain => "coarse-pretrain",
            Stage::Coarse => "coarse",
            Stage::Refine => "refine",
        }
    }

    fn trains(self, g: ParamGroup) -> bool {
        match self {
            Stage::CoarsePretrain | Stage::Coarse => g.is_coarse(),
            Stage::Refine => !g.is_coarse(),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Stage> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Iterations of coarse pre-training, coarse training, and refinement.
    pub iterations: [usize; 3],
    pub lr_localization: Real,
    pub lr_other: Real,
    pub batch_size: usize,
    pub weight_decay: Real,
    pub lambda_s2m: Real,
    pub lambda_reg_coarse: Real,
    pub lambda_reg_refine: Real,
    pub gm_scale: Real,
    pub scan_samples: usize,
    /// When false, stages 2 and 3 fit the reference registration (ω ≡ 1)
    /// instead of the scan.
    pub use_scan_loss: bool,
    /// Per-edge γ; uniform 1 when absent.
    pub edge_weights: Option<Vec<Real>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: [300_000, 300_000, 150_000],
            lr_localization: 1e-4,
            lr_other: 1e-3,
            batch_size: 2,
            weight_decay: 0.01,
            lambda_s2m: 10.0,
            lambda_reg_coarse: 1.0,
            lambda_reg_refine: 0.3,
            gm_scale: 1.0,
            scan_samples: 5000,
            use_scan_loss: true,
            edge_weights: None,
        }
    }
}

impl TrainConfig {
    /// Schedule scaled to 3k / 5k / 3k iterations.
    pub fn desk() -> TrainConfig {
        TrainConfig {
            iterations: [3000, 5000, 3000],
            ..TrainConfig::default()
        }
    }

    pub fn iterations_for(&self, stage: Stage) -> usize {
        self.iterations[stage as usize]
    }

    pub fn validate(&self, n_e: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("training config: {m}")));
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.lr_localization > 0.0 && self.lr_other > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight decay must be non-negative");
        }
        if !(self.lambda_s2m >= 0.0 && self.lambda_reg_coarse >= 0.0 && self.lambda_reg_refine >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if !(self.gm_scale > 0.0) {
            return bad("Geman-McClure scale must be positive");
        }
        if self.scan_samples == 0 {
            return bad("scan_samples must be positive");
        }
        if let Some(w) = &self.edge_weights {
            if w.len() != n_e {
                return Err(Error::Config(format!("{} edge weights for {n_e} edges", w.len())));
            }
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay and per-parameter learning rates.
/// Biases are not decayed.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    pub weight_decay: Real,
    lr: Vec<Real>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl AdamW {
    /// `lr(p) = 0` freezes a parameter.
    pub fn new(store: &ParamStore, weight_decay: Real, lr: impl Fn(&crate::autodiff::Parameter) -> Real) -> AdamW {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            lr: store.iter().map(|(_, p)| lr(p)).collect(),
            m: store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect(),
            v: store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect(),
            t: 0,
        }
    }

    /// One update from the gradients stored in `store`.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t);
        let b2t = 1.0 - self.beta2.powi(self.t);
        for (i, p) in store.iter_mut().enumerate() {
            let lr = self.lr[i];
            if lr == 0.0 {
                continue;
            }
            let decay = if p.name.ends_with(".b") { 0.0 } else { self.weight_decay };
            let mut value = (*p.value).clone();
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (k, x) in value.data_mut().iter_mut().enumerate() {
                let g = p.grad[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let mh = m[k] / b1t;
                let vh = v[k] / b2t;
                *x -= lr * (decay * *x + mh / (vh.sqrt() + self.eps));
            }
            p.value = std::sync::Arc::new(value);
        }
    }
}

/// A training frame held in memory.
#[derive(Clone, Debug)]
pub struct TrainFrame {
    pub id: String,
    pub input: FrameInput,
    pub scan: Vec<Vec3>,
    pub reference: TriMesh,
}

/// Loads every frame of `split`, downsampled for `model`.
pub fn load_frames(ds: &Dataset, split: &str, model: &HeadModel) -> Result<Vec<TrainFrame>> {
    let files = ds.frames(split)?;
    let loaded = par::map_slice(&files, |f| -> Result<TrainFrame> {
        let images = f.images(ds.rig.len())?;
        let reference = f.reference()?;
        if !reference.same_topology(&model.template) {
            return Err(Error::Mismatch(format!(
                "reference registration of {} does not match the template topology",
                f.id
            )));
        }
        let scan = f.scan()?.valid_points();
        if scan.is_empty() {
            return Err(Error::Degenerate(format!("scan of {} is empty", f.id)));
        }
        Ok(TrainFrame {
            id: f.id.clone(),
            input: prepare_input(&images, &ds.rig, &model.cfg)?,
            scan,
            reference,
        })
    });
    loaded.into_iter().collect()
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub stage: Stage,
    pub terms: LossTerms,
}

pub const LOG_HEADER: &str = "iteration,stage,E_s2m,E_reg,E_v2v,total";

impl LogRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iteration,
            self.stage,
            self.terms.s2m,
            self.terms.reg,
            self.terms.v2v,
            self.terms.total()
        )
    }
}

pub fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut text = String::from(LOG_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&r.csv());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct FrameLoss {
    terms: LossTerms,
    grads: Vec<Option<Tensor>>,
}

/// Loss terms of one stage for predicted vertices `v`.
#[allow(clippy::too_many_arguments)]
fn stage_loss<'t>(
    stage: Stage,
    cfg: &TrainConfig,
    v: Var<'t>,
    faces: &[[usize; 3]],
    scan: &[Vec3],
    reference: &TriMesh,
    gamma: &[Real],
    eyeball: &[Real],
) -> (Var<'t>, [Option<Var<'t>>; 3]) {
    let ones = vec![1.0; reference.n_vertices()];
    let lambda_reg = if stage == Stage::Refine {
        cfg.lambda_reg_refine
    } else {
        cfg.lambda_reg_coarse
    };
    let terms = match stage {
        Stage::CoarsePretrain => [None, None, Some(vertex_loss(v, reference, &ones))],
        _ if !cfg.use_scan_loss => [
            None,
            Some(edge_regularization(v, reference, gamma, lambda_reg)),
            Some(vertex_loss(v, reference, &ones)),
        ],
        _ => [
            Some(scan_to_mesh_loss(v, faces, scan, cfg.lambda_s2m, cfg.gm_scale)),
            Some(edge_regularization(v, reference, gamma, lambda_reg)),
            Some(vertex_loss(v, reference, eyeball)),
        ],
    };
    let present: Vec<Var<'t>> = terms.iter().flatten().copied().collect();
    (add_all(&present), terms)
}

/// Trains one stage in place and appends to `log`.
#[allow(clippy::too_many_arguments)]
pub fn train_stage(
    model: &mut HeadModel,
    frames: &[TrainFrame],
    rigs: &StageRigs,
    eyeball: &[usize],
    stage: Stage,
    cfg: &TrainConfig,
    seed: u64,
    log: &mut Vec<LogRow>,
    progress: &mut dyn Write,
) -> Result<()> {
    let n_e = model.template.edges().len();
    cfg.validate(n_e)?;
    if frames.is_empty() {
        return Err(Error::Config("no training frames".into()));
    }
    let n_v = model.n_vertices();
    let gamma = cfg.edge_weights.clone().unwrap_or_else(|| vec![1.0; n_e]);
    let mut eye_mask = vec![0.0; n_v];
    for &i in eyeball {
        eye_mask[i] = 1.0;
    }
    let mut opt = AdamW::new(&model.store, cfg.weight_decay, |p| {
        let g = ParamGroup::of(p);
        if !stage.trains(g) {
            0.0
        } else if g == ParamGroup::Localization {
            cfg.lr_localization
        } else {
            cfg.lr_other
        }
    });
    // The frozen coarse stage's meshes are fixed for the whole refinement.
    let coarse: Vec<Vec<Vec3>> = if stage == Stage::Refine {
        par::map_slice(frames, |f| model.coarse_infer(&f.input, rigs).0.vertices)
    } else {
        Vec::new()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (stage as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let iterations = cfg.iterations_for(stage);
    for it in 0..iterations {
        let batch: Vec<(usize, u64)> = (0..cfg.batch_size)
            .map(|_| (rng.random_range(0..frames.len()), rng.random()))
            .collect();
        let model_ref = &*model;
        let results = par::map_slice(&batch, |&(fi, sample_seed)| -> Result<FrameLoss> {
            let f = &frames[fi];
            let mut srng = ChaCha8Rng::seed_from_u64(sample_seed);
            let scan: Vec<Vec3> = (0..cfg.scan_samples)
                .map(|_| f.scan[srng.random_range(0..f.scan.len())])
                .collect();
            let tape = Tape::new();
            let p = model_ref
                .store
                .bind(&tape, |p| stage.trains(ParamGroup::of(p)));
            let v = match stage {
                Stage::Refine => {
                    let setup = model_ref.refine_setup(&coarse[fi], &rigs.refine)?;
                    model_ref.refine_forward(&p, &f.input.refine, &rigs.refine, &setup)
                }
                _ => model_ref.coarse_forward(&p, &f.input.coarse, &rigs.coarse).vertices,
            };
            let faces = &model_ref.template.faces;
            let (total, terms) = stage_loss(stage, cfg, v, faces, &scan, &f.reference, &gamma, &eye_mask);
            let val = |t: &Option<Var>| t.map(|t| t.value().item()).unwrap_or(0.0);
            let terms = LossTerms {
                s2m: val(&terms[0]),
                reg: val(&terms[1]),
                v2v: val(&terms[2]),
            };
            let mut grads = tape.backward(total);
            Ok(FrameLoss {
                terms,
                grads: p.collect(&mut grads),
            })
        });
        model.store.zero_grad();
        let mut mean = LossTerms::default();
        let inv = 1.0 / batch.len() as Real;
        for r in results {
            let r = r?;
            for (name, value) in [("E_s2m", r.terms.s2m), ("E_reg", r.terms.reg), ("E_v2v", r.terms.v2v)] {
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        stage: stage.name().into(),
                        iteration: it,
                        term: name.into(),
                        value,
                    });
                }
            }
            mean.s2m += r.terms.s2m * inv;
            mean.reg += r.terms.reg * inv;
            mean.v2v += r.terms.v2v * inv;
            let scaled: Vec<Option<Tensor>> = r
                .grads
                .into_iter()
                .map(|g| g.map(|g| g.map(|x| x * inv)))
                .collect();
            model.store.accumulate(&scaled);
        }
        if let Some((_, p)) = model.store.iter().find(|(_, p)| !p.grad.all_finite()) {
            return Err(Error::NonFiniteLoss {
                stage: stage.name().into(),
                iteration: it,
                term: format!("gradient of {}", p.name),
                value: f64::NAN,
            });
        }
        opt.step(&mut model.store);
        let row = LogRow {
            iteration: it,
            stage,
            terms: mean,
        };
        if it % 50 == 0 || it + 1 == iterations {
            // Progress output is best effort.
            let _ = writeln!(progress, "{}", row.csv());
        }
        log.push(row);
    }
    Ok(())
}
