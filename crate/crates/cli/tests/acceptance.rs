//! One test per acceptance criterion. Each writes a single
//! `acceptance <n> PASS|FAIL ...` line to stderr (outside the test harness's
//! capture) before asserting.
//!
//! Criteria 4 to 6 train full models and are ignored by default:
//! `cargo test --release -p tempeh-cli --test acceptance -- --ignored`.
//! `TEMPEH_ACCEPTANCE_ITERS=a,b,c` shortens the schedule for trial runs; the
//! result line then says so.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use tempeh::autodiff::ops::soft_argmax;
use tempeh::autodiff::ops::softplus_scalar;
use tempeh::autodiff::{conv2d, conv3d, Tape};
use tempeh::camera::Rig;
use tempeh::eval::{evaluate_dirs, RegionMasks, RegionStats};
use tempeh::experiment::{evaluate_split, train_model, SplitResult};
use tempeh::fusion::{fuse_surface_aware, SampleGrid};
use tempeh::geom::{vec3, Vec3};
use tempeh::losses::{edge_regularization, evaluate_terms, geman_mcclure, LossConfig};
use tempeh::mesh::{closest_point_on_triangle, sample_surface_points, Bvh, TriMesh};
use tempeh::pipeline::{FusionMode, HeadModel, PipelineConfig};
use tempeh::synth::{build_dataset, icosphere, look_at, Dataset, DatasetSpec, Template};
use tempeh::tensor::{Real, Tensor};
use tempeh::train::{Stage, TrainConfig};

const GRADCHECK_BUDGET_S: f64 = 60.0;
const BVH_TOL: Real = 1e-12;
const CONV_TOL: Real = 1e-12;
const EVAL_TOL: Real = 1e-9;
const FORMULA_TOL: Real = 1e-12;
const FUSION_TOL: Real = 1e-10;
const DISLOCATION_TOL: Real = 1e-9;
/// Head radius of the synthetic template, scene units.
const HEAD_RADIUS: Real = 100.0;
const COARSE_MEDIAN_MAX: Real = 0.05 * HEAD_RADIUS;
const REFINE_RATIO_MAX: Real = 0.6;
const TRAIN_BUDGET_S: f64 = 2.0 * 3600.0;
const ABLATION_MARGIN: Real = 1.10;
const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];
const COVERAGE_MIN: Real = 0.99;

fn report(n: u32, ok: bool, detail: &str) {
    let line = format!("acceptance {n} {} {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "criterion {n}: {detail}");
}

fn tempeh_bin() -> &'static str {
    env!("CARGO_BIN_EXE_tempeh")
}

#[test]
fn criterion_1_autodiff_soundness() {
    let t0 = Instant::now();
    let results = tempeh::gradcheck::run_ops(tempeh::gradcheck::DEFAULT_SEEDS, 0);
    let secs = t0.elapsed().as_secs_f64();
    let failed: Vec<_> = results.iter().filter(|r| !r.passed()).map(|r| r.op).collect();
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, Real::max);
    let ok = failed.is_empty() && results.iter().all(|r| r.seeds >= 20) && secs < GRADCHECK_BUDGET_S;
    report(
        1,
        ok,
        &format!(
            "{} operators x {} seeds, worst relative error {worst:.2e} (limit {:.0e}), {secs:.1} s (limit {GRADCHECK_BUDGET_S} s), failing: {failed:?}",
            results.len(),
            tempeh::gradcheck::DEFAULT_SEEDS,
            tempeh::gradcheck::TOLERANCE
        ),
    );
}

fn lcg(state: &mut u64) -> Real {
    *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (*state >> 11) as Real / (1u64 << 53) as Real * 2.0 - 1.0
}

fn filled(shape: &[usize], state: &mut u64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| lcg(state)).collect())
}

fn conv_loops(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    // Works for both 2D (`[C,H,W]`) and 3D (`[C,D,H,W]`) inputs.
    let sp = &x.shape()[1..];
    let k = w.shape()[2];
    let (c_in, c_out) = (x.shape()[0], w.shape()[0]);
    let osz: Vec<usize> = sp.iter().map(|&n| (n + 2 * pad - k) / stride + 1).collect();
    let dims = sp.len();
    let on: usize = osz.iter().product();
    let kn = k.pow(dims as u32);
    let mut out = vec![0.0; c_out * on];
    let unflat = |mut i: usize, sizes: &[usize]| {
        let mut idx = vec![0; sizes.len()];
        for d in (0..sizes.len()).rev() {
            idx[d] = i % sizes[d];
            i /= sizes[d];
        }
        idx
    };
    for o in 0..c_out {
        for oi in 0..on {
            let op = unflat(oi, &osz);
            let mut acc = b.data()[o];
            for c in 0..c_in {
                for ki in 0..kn {
                    let kp = unflat(ki, &vec![k; dims]);
                    let mut xi = 0usize;
                    let mut inside = true;
                    for d in 0..dims {
                        let p = (op[d] * stride + kp[d]) as isize - pad as isize;
                        if p < 0 || p >= sp[d] as isize {
                            inside = false;
                            break;
                        }
                        xi = xi * sp[d] + p as usize;
                    }
                    if inside {
                        let xn: usize = sp.iter().product();
                        acc += w.data()[(o * c_in + c) * kn + ki] * x.data()[c * xn + xi];
                    }
                }
            }
            out[o * on + oi] = acc;
        }
    }
    let mut shape = vec![c_out];
    shape.extend(osz);
    Tensor::from_vec(&shape, out)
}

fn eval_reference_gap() -> Result<Real, String> {
    let ok = Command::new("python3").args(["-c", "import numpy"]).status().map(|s| s.success()).unwrap_or(false);
    if !ok {
        return Err("python3 with numpy unavailable".into());
    }
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = DatasetSpec::tiny();
    spec.width = 40;
    spec.height = 30;
    spec.focal = 60.0;
    let data = tmp.path().join("data");
    build_dataset(&spec, &data).unwrap();
    let preds = tmp.path().join("preds");
    let mut state = 7u64;
    for f in tempeh::synth::list_frames(&data.join("test")).unwrap() {
        let gt = f.gt().unwrap();
        let v = gt.vertices.iter().map(|&p| p + vec3(lcg(&mut state), lcg(&mut state), lcg(&mut state)) * 2.0).collect();
        std::fs::create_dir_all(preds.join(&f.id)).unwrap();
        tempeh::io::write_obj(&preds.join(&f.id).join("refined.obj"), &gt.with_vertices(v)).unwrap();
    }
    let masks = data.join("masks");
    let ours = evaluate_dirs(&preds, &data.join("test"), "refined", Some(&masks)).unwrap();
    let out = tmp.path().join("ref.json");
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scripts/eval_reference.py");
    let st = Command::new("python3")
        .arg(script)
        .args([&preds, &data.join("test")])
        .arg("refined")
        .args([&masks, &out])
        .status()
        .unwrap();
    if !st.success() {
        return Err("reference script failed".into());
    }
    let theirs: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    let mut gap: Real = 0.0;
    let mut cmp = |a: &[RegionStats], b: &serde_json::Value| -> Result<(), String> {
        let b = b.as_array().unwrap();
        if a.len() != b.len() {
            return Err("region count differs".into());
        }
        for (x, y) in a.iter().zip(b) {
            if x.n_points as u64 != y["n_points"].as_u64().unwrap() {
                return Err(format!("{} point count differs", x.region));
            }
            for (v, key) in [(x.median, "median"), (x.mean, "mean"), (x.std, "std")] {
                gap = gap.max((v - y[key].as_f64().unwrap() as Real).abs());
            }
        }
        Ok(())
    };
    for (f, t) in ours.frames.iter().zip(theirs["frames"].as_array().unwrap()) {
        cmp(&f.regions, &t["regions"])?;
    }
    cmp(&ours.overall, &theirs["overall"])?;
    Ok(gap)
}

#[test]
fn criterion_2_geometric_oracles() {
    let mut state = 11u64;
    let s = icosphere(3);
    let mesh = s.with_vertices(s.vertices.iter().map(|&v| v * (50.0 + 5.0 * lcg(&mut state))).collect());
    let bvh = Bvh::build(&mesh);
    let mut bvh_gap: Real = 0.0;
    for _ in 0..1000 {
        let p = vec3(lcg(&mut state), lcg(&mut state), lcg(&mut state)) * 90.0;
        let brute = (0..mesh.n_faces())
            .map(|f| {
                let [a, b, c] = mesh.triangle(f);
                (closest_point_on_triangle(p, a, b, c).0 - p).norm2()
            })
            .fold(Real::INFINITY, Real::min);
        bvh_gap = bvh_gap.max((bvh.closest_point(p).unwrap().squared_distance - brute).abs());
    }

    let mut conv_gap: Real = 0.0;
    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        let x = filled(&[2, 6, 5], &mut state);
        let w = filled(&[3, 2, 3, 3], &mut state);
        let b = filled(&[3], &mut state);
        let tape = Tape::new();
        let got = conv2d(tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()), stride, pad).value();
        conv_gap = conv_gap.max(got.max_abs_diff(&conv_loops(&x, &w, &b, stride, pad)));
        let x = filled(&[2, 4, 5, 3], &mut state);
        let w = filled(&[3, 2, 3, 3, 3], &mut state);
        let got = conv3d(tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()), stride, pad).value();
        conv_gap = conv_gap.max(got.max_abs_diff(&conv_loops(&x, &w, &b, stride, pad)));
    }

    let eval = eval_reference_gap();
    let eval_ok = matches!(eval, Ok(g) if g <= EVAL_TOL);
    let ok = mesh.n_faces() >= 500 && bvh_gap <= BVH_TOL && conv_gap <= CONV_TOL && eval_ok;
    report(
        2,
        ok,
        &format!(
            "BVH vs brute force on 1000 points x {} triangles: {bvh_gap:.1e} (limit {BVH_TOL:.0e}); conv2d/conv3d vs loops: {conv_gap:.1e} (limit {CONV_TOL:.0e}); eval vs reference script: {eval:?} (limit {EVAL_TOL:.0e})",
            mesh.n_faces()
        ),
    );
}

#[test]
#[allow(clippy::approx_constant)]
fn criterion_3_formula_exactness() {
    let softplus_gap = (softplus_scalar(0.0) - (2.0 as Real).ln()).abs();
    let sigma: Real = 1.7;
    let rho_gap = (geman_mcclure(sigma * sigma, sigma) - sigma * sigma / 2.0).abs();

    let grid = SampleGrid::axis_aligned(vec3(-2.0, 0.0, 1.0), vec3(3.0, 4.0, 5.0), 4).unwrap();
    let mut onehot_gap: Real = 0.0;
    let tape = Tape::new();
    for cell in [0, 21, 63] {
        let mut p = vec![0.0; 64];
        p[cell] = 1.0;
        let v = soft_argmax(tape.constant(Tensor::from_vec(&[1, 64], p)), tape.constant(grid.to_tensor())).value();
        onehot_gap = onehot_gap.max((Vec3::from_slice(v.data()) - grid.points[cell]).norm());
    }

    let reference = Template::new().mesh;
    let gamma = vec![1.0; reference.edges().len()];
    let warped = reference.with_vertices(reference.vertices.iter().map(|&v| v * 1.1 + vec3(0.0, 3.0, 0.0)).collect());
    let moved = warped.with_vertices(warped.vertices.iter().map(|&v| v + vec3(40.0, -25.0, 12.5)).collect());
    let e = |m: &TriMesh| {
        let t = Tape::new();
        edge_regularization(t.constant(m.vertex_tensor()), &reference, &gamma, 1.0).value().item()
    };
    let reg_gap = (e(&warped) - e(&moved)).abs();

    // Two views: one facing the surface (δ=1, cosθ=1) and one hidden.
    let rig = Rig::new(vec![
        look_at("front".into(), vec3(0.0, 0.0, 100.0), Vec3::ZERO, 21, 21, 30.0, [0.0, 0.0]),
        look_at("side".into(), vec3(100.0 * 0.19f64.sqrt() as Real, 0.0, 90.0), Vec3::ZERO, 21, 21, 30.0, [0.0, 0.0]),
    ])
    .unwrap();
    let (f1, f2) = ([0.4, -1.2], [2.0, 0.5]);
    let mut data = Vec::new();
    for f in [f1, f2] {
        for v in f {
            data.extend(std::iter::repeat_n(v, 21 * 21));
        }
    }
    let maps = Tensor::from_vec(&[2, 2, 21, 21], data);
    let out = fuse_surface_aware(Vec3::ZERO, vec3(0.0, 0.0, 1.0), &maps, &rig, &[true, false], Vec3::ZERO).unwrap();
    // softplus(1) and softplus(0), evaluated by hand.
    let (w1, w2): (Real, Real) = (1.313_261_687_518_222_8, 0.693_147_180_559_945_3);
    let mut fusion_gap: Real = 0.0;
    for c in 0..2 {
        let mu = (w1 * f1[c] + w2 * f2[c]) / (w1 + w2);
        let var = (w1 * (f1[c] - mu).powi(2) + w2 * (f2[c] - mu).powi(2)) / (w1 + w2);
        fusion_gap = fusion_gap.max((out[c] - mu).abs()).max((out[2 + c] - var).abs());
    }

    let ok = softplus_gap <= FORMULA_TOL
        && rho_gap <= FORMULA_TOL
        && onehot_gap == 0.0
        && reg_gap <= FORMULA_TOL * e(&warped).max(1.0)
        && fusion_gap <= FUSION_TOL;
    report(
        3,
        ok,
        &format!(
            "softplus(0)-ln2 {softplus_gap:.1e}; rho(sigma^2)-sigma^2/2 {rho_gap:.1e}; one-hot soft-argmax {onehot_gap:.1e} (exact); edge energy under translation {reg_gap:.1e} (limit {FORMULA_TOL:.0e} relative); weighted fusion vs hand values {fusion_gap:.1e} (limit {FUSION_TOL:.0e})"
        ),
    );
}

fn schedule() -> (TrainConfig, Option<String>) {
    let mut cfg = TrainConfig::desk();
    match std::env::var("TEMPEH_ACCEPTANCE_ITERS") {
        Ok(v) => {
            let it: Vec<usize> = v.split(',').map(|s| s.trim().parse().expect("iteration count")).collect();
            cfg.iterations = it.try_into().expect("three iteration counts");
            (cfg, Some(format!("REDUCED schedule {v}")))
        }
        Err(_) => (cfg, None),
    }
}

struct Shared {
    _dir: tempfile::TempDir,
    ds: Dataset,
    masks: RegionMasks,
}

fn shared_dataset() -> &'static Shared {
    static DS: OnceLock<Shared> = OnceLock::new();
    DS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        build_dataset(&DatasetSpec::default(), dir.path()).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        let (masks, _) = RegionMasks::load(&dir.path().join("masks"), ds.template.n_vertices()).unwrap();
        Shared { _dir: dir, ds, masks }
    })
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum Variant {
    Full,
    NaiveFusion,
    NoLocalization,
    NoScanLoss,
}

struct Run {
    result: SplitResult,
    seconds: f64,
}

type RunCache = Mutex<BTreeMap<(Variant, u64), std::sync::Arc<Run>>>;

/// Trains and evaluates each `(variant, seed)` once per process.
fn run(variant: Variant, seed: u64) -> std::sync::Arc<Run> {
    static RUNS: OnceLock<RunCache> = OnceLock::new();
    let runs = RUNS.get_or_init(|| Mutex::new(BTreeMap::new()));
    let mut guard = runs.lock().unwrap_or_else(|e| e.into_inner());
    if let Some(r) = guard.get(&(variant, seed)) {
        return r.clone();
    }
    let shared = shared_dataset();
    let mut pcfg = PipelineConfig::desk();
    let (mut tcfg, _) = schedule();
    match variant {
        Variant::Full => {}
        Variant::NaiveFusion => pcfg.fusion = FusionMode::Naive,
        Variant::NoLocalization => pcfg.localize = false,
        Variant::NoScanLoss => tcfg.use_scan_loss = false,
    }
    let t0 = Instant::now();
    let mut model = HeadModel::new(pcfg, shared.ds.template.clone(), seed).unwrap();
    train_model(&mut model, &shared.ds, &Stage::ALL, &tcfg, seed, &mut std::io::sink()).unwrap();
    let seconds = t0.elapsed().as_secs_f64();
    let result = evaluate_split(&model, &shared.ds, "test", &shared.masks).unwrap();
    let r = std::sync::Arc::new(Run { result, seconds });
    guard.insert((variant, seed), r.clone());
    r
}

#[test]
#[ignore = "trains a desk-scale model (about 30 min on 8 cores)"]
fn criterion_4_desk_training() {
    let (_, note) = schedule();
    let r = run(Variant::Full, 0);
    let coarse = r.result.coarse.median();
    let refined = r.result.refined.median();
    let ok = coarse < COARSE_MEDIAN_MAX && refined < REFINE_RATIO_MAX * coarse && r.seconds < TRAIN_BUDGET_S;
    report(
        4,
        ok,
        &format!(
            "coarse median {coarse:.3} (limit {COARSE_MEDIAN_MAX}), refined median {refined:.3} = {:.1}% of coarse (limit {:.0}%), training {:.0} s on {} threads (limit {TRAIN_BUDGET_S} s){}",
            100.0 * refined / coarse,
            100.0 * REFINE_RATIO_MAX,
            r.seconds,
            tempeh::par::current_threads(),
            note.map(|n| format!(", {n}")).unwrap_or_default()
        ),
    );
}

#[test]
#[ignore = "trains twelve desk-scale models"]
fn criterion_5_ablation_directions() {
    let (_, note) = schedule();
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in ABLATION_SEEDS {
        let full = run(Variant::Full, seed);
        let naive = run(Variant::NaiveFusion, seed);
        let noloc = run(Variant::NoLocalization, seed);
        let nos2m = run(Variant::NoScanLoss, seed);
        let checks = [
            ("naive fusion refined", naive.result.refined.median(), full.result.refined.median()),
            ("no localization coarse", noloc.result.coarse.median(), full.result.coarse.median()),
            ("no scan loss refined", nos2m.result.refined.median(), full.result.refined.median()),
        ];
        for (name, ablated, base) in checks {
            let pass = ablated >= ABLATION_MARGIN * base;
            ok &= pass;
            lines.push(format!("seed {seed} {name} {ablated:.3} vs {base:.3} ({:+.1}%)", 100.0 * (ablated / base - 1.0)));
        }
    }
    report(
        5,
        ok,
        &format!(
            "ablations must be >= {:.0}% worse: {}{}",
            100.0 * (ABLATION_MARGIN - 1.0),
            lines.join("; "),
            note.map(|n| format!(", {n}")).unwrap_or_default()
        ),
    );
}

#[test]
#[ignore = "trains a desk-scale model (shared with criterion 4)"]
fn criterion_6_localization_coverage() {
    let (_, note) = schedule();
    let r = run(Variant::Full, 0);
    let cov = r.result.localization_coverage;
    report(
        6,
        cov >= COVERAGE_MIN,
        &format!(
            "test-split ground-truth vertices inside the localized grid: {:.2}% (limit {:.0}%){}",
            100.0 * cov,
            100.0 * COVERAGE_MIN,
            note.map(|n| format!(", {n}")).unwrap_or_default()
        ),
    );
}

#[test]
fn criterion_7_dislocation_degeneracy() {
    let t = Template::new();
    let mesh = &t.mesh;
    let eye = t.eyeball();
    let head_only = TriMesh::new(mesh.vertices[..t.n_head].to_vec(), {
        mesh.faces.iter().filter(|f| f.iter().all(|&i| i < t.n_head)).copied().collect()
    })
    .unwrap();
    // Scan covers the head surface only, as eyeballs are not captured.
    let scan = sample_surface_points(&head_only, 3000, 5).unwrap().points;
    // Push the detached component deep inside the head: edge lengths are
    // unchanged and no scan point is closer to it than to the head surface.
    let shift = vec3(-35.0, -20.0, -60.0);
    let mut dislocated = mesh.clone();
    for &i in &eye {
        dislocated.vertices[i] += shift;
    }
    let mut cfg = LossConfig::new(mesh.edges().len(), mesh.n_vertices());
    let a = evaluate_terms(mesh, &scan, mesh, &cfg).total();
    let b = evaluate_terms(&dislocated, &scan, mesh, &cfg).total();
    let unmasked_gap = (a - b).abs();
    for &i in &eye {
        cfg.vertex_mask[i] = 1.0;
    }
    let am = evaluate_terms(mesh, &scan, mesh, &cfg).total();
    let bm = evaluate_terms(&dislocated, &scan, mesh, &cfg).total();
    let ok = unmasked_gap <= DISLOCATION_TOL && bm > am;
    report(
        7,
        ok,
        &format!(
            "loss without eyeball mask {a:.6} vs dislocated {b:.6} (gap {unmasked_gap:.1e}, limit {DISLOCATION_TOL:.0e}); with mask {am:.6} vs dislocated {bm:.6}"
        ),
    );
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let key = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            let mut bytes = std::fs::read(&p).unwrap();
            if p.file_name().is_some_and(|n| n == "meta.json") {
                // Wall-clock timings are the one intentionally variable field.
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                v.as_object_mut().unwrap().remove("timing_ms");
                bytes = serde_json::to_vec(&v).unwrap();
            }
            out.insert(key, bytes);
        }
    }
    out
}

fn pipeline_run(root: &Path) -> Vec<(String, BTreeMap<String, Vec<u8>>)> {
    let step = |args: &[&str]| {
        let out = Command::new(tempeh_bin())
            .current_dir(root)
            .args(["--seed", "3", "--threads", "2"])
            .args(args)
            .output()
            .unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    step(&["synth", "--tiny", "--out", "ds"]);
    step(&["train", "--dataset", "ds", "--out", "run", "--preset", "tiny", "--iterations", "4,4,4"]);
    step(&["infer", "--model", "run/model", "--rig", "ds/rig.json", "--input", "ds/test", "--out", "pred"]);
    step(&["eval", "--predictions", "pred", "--scans", "ds/test", "--masks", "ds/masks", "--out", "rep"]);
    ["ds", "run", "pred", "rep"].iter().map(|d| (d.to_string(), tree(&root.join(d)))).collect()
}

#[test]
fn criterion_8_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = pipeline_run(a.path());
    let rb = pipeline_run(b.path());
    let mut differing = Vec::new();
    let mut files = 0;
    for ((name, ta), (_, tb)) in ra.iter().zip(&rb) {
        files += ta.len();
        if ta.keys().ne(tb.keys()) {
            differing.push(format!("{name}: file lists differ"));
            continue;
        }
        for (k, v) in ta {
            if tb[k] != *v {
                differing.push(format!("{name}/{k}"));
            }
        }
    }
    report(
        8,
        differing.is_empty(),
        &format!("synth, train, infer, eval run twice with seed 3 and 2 threads: {files} files compared, differing: {differing:?}"),
    );
}
