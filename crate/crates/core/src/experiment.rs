//! End-to-end runs: train every stage, then predict and score a split.

use std::io::Write;

use crate::error::Result;
use crate::eval::{evaluate_frame, EvalReport, RegionMasks};
use crate::par;
use crate::pipeline::{HeadModel, Inference, StageRigs};
use crate::synth::Dataset;
use crate::tensor::Real;
use crate::train::{load_frames, train_stage, LogRow, Stage, TrainConfig};

/// Trains `stages` in order on the `train` split.
pub fn train_model(
    model: &mut HeadModel,
    ds: &Dataset,
    stages: &[Stage],
    cfg: &TrainConfig,
    seed: u64,
    progress: &mut dyn Write,
) -> Result<Vec<LogRow>> {
    let frames = load_frames(ds, "train", model)?;
    let rigs = StageRigs::new(&ds.rig, &model.cfg);
    let mut log = Vec::new();
    for &stage in stages {
        train_stage(model, &frames, &rigs, &ds.eyeball, stage, cfg, seed, &mut log, progress)?;
    }
    Ok(log)
}

#[derive(Clone, Debug)]
pub struct SplitResult {
    pub coarse: EvalReport,
    pub refined: EvalReport,
    /// Fraction of ground-truth vertices inside the localized coarse grid.
    pub localization_coverage: Real,
}

/// Runs inference on every frame of `split` and scores both stages.
pub fn evaluate_split(model: &HeadModel, ds: &Dataset, split: &str, masks: &RegionMasks) -> Result<SplitResult> {
    let files = ds.frames(split)?;
    let per_frame = par::map_slice(&files, |f| -> Result<_> {
        let images = f.images(ds.rig.len())?;
        let inf: Inference = model.infer(&images, &ds.rig)?;
        let scan = f.scan()?.valid_points();
        let reference = f.reference()?;
        let gt = f.gt()?;
        let inside = gt.vertices.iter().filter(|&&v| inf.grid.contains(v, 0.0)).count();
        let c = evaluate_frame(&f.id, &inf.coarse, &scan, &reference, masks)?;
        let r = evaluate_frame(&f.id, &inf.refined, &scan, &reference, masks)?;
        Ok((c, r, inside, gt.n_vertices()))
    });
    let (mut coarse, mut refined) = (Vec::new(), Vec::new());
    let (mut inside, mut total) = (0, 0);
    for r in per_frame {
        let (c, f, i, n) = r?;
        coarse.push(c);
        refined.push(f);
        inside += i;
        total += n;
    }
    Ok(SplitResult {
        coarse: EvalReport::assemble(coarse, masks, Vec::new()),
        refined: EvalReport::assemble(refined, masks, Vec::new()),
        localization_coverage: inside as Real / total.max(1) as Real,
    })
}
