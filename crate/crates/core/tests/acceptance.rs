//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ctp_core::commands::{cmd_stats, cmd_synth, with_jobs};
use ctp_core::config::Config;
use ctp_core::eval::{auc, success_curve, success_curve_from_ious, SuccessCurve, SUCCESS_STEPS};
use ctp_core::geometry::iou;
use ctp_core::imaging::ImageBuffer;
use ctp_core::pairs::{export_manifest, ManifestRecord, SampleRecord};
use ctp_core::synthesis::{
    build_patch_library, pad_blend_mask, paste, synthesize, BoxSource, Frame, Sequence, SequenceDataset,
    SynthesisSettings, DISTRACTOR_MAX_IOU,
};
use ctp_core::toy::{self, ToyScene};
use ctp_core::tracker::{cross_correlate_fft, track_sequence, FilterParams};
use ctp_core::transforms::{apply_chain, sample_chain, KindPolicy, Preset, TransformKind, TransformParams};
use ctp_core::{seed, BoundingBox, SchedulePolicy, TargetPatch};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn in_memory_dataset(names: &[&str], scene: &ToyScene, seed_v: u64) -> SequenceDataset {
    let mut ds = SequenceDataset::default();
    for name in names {
        let seq_seed = seed::mix64(&[seed_v, seed::hash_str(name)]);
        let frames =
            (0..scene.frames).map(|t| Frame::from_image(*name, t, toy::render_frame(scene, seq_seed, t))).collect();
        let seq = Sequence { id: name.to_string(), frames, attributes: Vec::new() };
        ds.insert(seq, toy::object_box(scene, 0), BoxSource::Annotated).unwrap();
    }
    ds
}

/// Marker rendered in the inner box, pushed through the geometric steps of a
/// sampled chain and pasted into a frame; its pixel extent must match the
/// propagated box within one pixel per edge.
fn box_propagation() -> Outcome {
    let mut default_flip = SchedulePolicy::default();
    default_flip.flip.enable = true;
    let mut heavy = default_flip.clone();
    heavy.rescale = KindPolicy::new(true, 1.0, 0.5, 1.6);
    heavy.shear = KindPolicy::new(true, 1.0, -0.3, 0.3);
    heavy.anisotropic_rescale = true;
    let policies = [SchedulePolicy::default(), default_flip, heavy];

    let mut rng = seed::rng(101);
    let (mut checked, mut collapsed, mut worst) = (0, 0, 0.0f64);
    for i in 0..1200u64 {
        let (w, h) = (rng.random_range(12..=64usize), rng.random_range(12..=64usize));
        let pad = rng.random_range(2..=10usize);
        let (pw, ph) = (w + 2 * pad, h + 2 * pad);
        let image = ImageBuffer::from_fn(pw, ph, |x, y| {
            let inside = x >= pad && x < pad + w && y >= pad && y < pad + h;
            if inside { [255; 3] } else { [0; 3] }
        });
        let patch = TargetPatch {
            image,
            inner_box: BoundingBox::new(pad as f64, pad as f64, w as f64, h as f64).unwrap(),
            pad,
            provenance: format!("marker{i}"),
        };
        let policy = &policies[i as usize % policies.len()];
        let chain = sample_chain(policy, seed::mix64(&[7, i])).unwrap().only(|k| k.is_geometric());
        let out = match apply_chain(&patch, &chain) {
            Ok(p) => p,
            Err(ctp_core::Error::TransformCollapsed) => {
                collapsed += 1;
                continue;
            }
            Err(e) => return Err(format!("chain {i}: {e}")),
        };
        let frame = ImageBuffer::filled(320, 320, [0; 3]);
        let ib = out.inner_box;
        let at = (rng.random_range(1.0..319.0 - ib.w), rng.random_range(1.0..319.0 - ib.h));
        let pasted = paste(&out, &frame, at).map_err(|e| format!("chain {i}: {e}"))?;
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..320 {
            for x in 0..320 {
                if pasted.image.get(x, y)[0] >= 128 {
                    (x0, y0, x1, y1) = (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1));
                }
            }
        }
        let b = pasted.bbox;
        let err = [x0 as f64 - b.x, y0 as f64 - b.y, x1 as f64 - b.right(), y1 as f64 - b.bottom()]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        worst = worst.max(err);
        ensure(err <= 1.0, || format!("chain {i} {:?}: marker [{x0},{y0},{x1},{y1}) vs {b:?}", chain.steps))?;
        checked += 1;
    }
    ensure(checked >= 1000, || format!("only {checked} chains checked"))?;
    Ok(format!("{checked} chains, worst edge error {worst:.3} px, {collapsed} collapsed"))
}

/// 10,000 default-policy samples through the synthesis pipeline, summarized
/// by the stats command from a written manifest.
fn schedule_distribution() -> Outcome {
    let scene = ToyScene { width: 200, height: 160, frames: 4, ..Default::default() };
    let ds = in_memory_dataset(&["seq"], &scene, 5);
    let samples = synthesize(&ds, "seq", &SynthesisSettings::default(), 10_000, 2024, None).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.jsonl");
    let records: Vec<ManifestRecord> =
        samples.iter().map(|s| ManifestRecord::Sample(SampleRecord::new(s, "unused.png"))).collect();
    export_manifest(&records, &manifest).map_err(|e| e.to_string())?;
    let stats = cmd_stats(&manifest).map_err(|e| e.to_string())?;
    ensure(stats.samples == 10_000, || format!("{} samples", stats.samples))?;

    let expected = [
        (TransformKind::Cutout, 0.15),
        (TransformKind::ShakingBlur, 0.2),
        (TransformKind::SimilarPatchPaste, 0.8),
        (TransformKind::ColorJitter, 0.4),
        (TransformKind::Shear, 0.5),
    ];
    let mut detail = Vec::new();
    for (kind, p) in expected {
        let f = stats.frequency(kind);
        detail.push(format!("{}={f:.4}", kind.key()));
        ensure((f - p).abs() <= 0.02, || format!("{} frequency {f:.4}, expected {p} +- 0.02", kind.key()))?;
    }
    ensure(stats.cutout_and_blur == 0, || format!("{} cutout+blur chains", stats.cutout_and_blur))?;
    for s in &samples {
        for step in &s.chain.steps {
            match *step {
                TransformParams::Shift { dx, dy } => {
                    ensure(dx.abs() <= 96.0 && dy.abs() <= 96.0, || format!("{}: shift ({dx}, {dy})", s.id))?
                }
                TransformParams::Rescale { sx, sy } => ensure(
                    (0.7..=1.3).contains(&sx) && (0.7..=1.3).contains(&sy),
                    || format!("{}: rescale ({sx}, {sy})", s.id),
                )?,
                _ => {}
            }
        }
    }
    Ok(format!("{}, cutout+blur=0, shift within 96 px, rescale within [0.7, 1.3]", detail.join(" ")))
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Two synth runs with the same config produce identical trees, with one
/// and with eight worker threads.
fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    toy::write_dataset(&data, &["one", "two", "three"], &ToyScene::default(), 9).map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for (run, jobs) in [(0, 1), (1, 8), (2, 8)] {
        let cfg = Config {
            master_seed: 7,
            data_root: data.clone(),
            out_dir: tmp.path().join(format!("run{run}")),
            samples_per_sequence: 40,
            ..Default::default()
        };
        with_jobs(jobs, || cmd_synth(&cfg, &[])).unwrap().map_err(|e| e.to_string())?;
        trees.push(tree(&cfg.out_dir));
    }
    let files = trees[0].len();
    let pngs = trees[0].keys().filter(|p| p.extension().is_some_and(|e| e == "png")).count();
    ensure(pngs == 120, || format!("{pngs} frames written"))?;
    ensure(trees[0] == trees[1], || "jobs 1 and jobs 8 differ".into())?;
    ensure(trees[1] == trees[2], || "repeated jobs 8 runs differ".into())?;
    Ok(format!("{files} files ({pngs} PNG) identical across 3 runs, jobs 1 vs 8"))
}

/// Inner-box pixels come from the patch, the patch border from the
/// background, and alpha rises monotonically across the pad ring.
fn blend_correctness() -> Outcome {
    let mut rng = seed::rng(33);
    let policy = SchedulePolicy::default();
    let mut checked_pixels = 0usize;
    for i in 0..200u64 {
        let (w, h) = (rng.random_range(8..=48usize), rng.random_range(8..=48usize));
        let pad = rng.random_range(2..=8usize);
        let mut r = seed::rng(i);
        let image = ImageBuffer::from_fn(w + 2 * pad, h + 2 * pad, |_, _| std::array::from_fn(|_| r.random()));
        let base = TargetPatch {
            image,
            inner_box: BoundingBox::new(pad as f64, pad as f64, w as f64, h as f64).unwrap(),
            pad,
            provenance: String::new(),
        };
        let chain = sample_chain(&policy, seed::mix64(&[9, i])).unwrap();
        let Ok(patch) = apply_chain(&base, &chain) else { continue };
        let bg = ImageBuffer::from_fn(200, 200, |_, _| std::array::from_fn(|_| r.random()));
        let ib = patch.inner_box;
        let at = (rng.random_range(1.0..199.0 - ib.w), rng.random_range(1.0..199.0 - ib.h));
        let pasted = paste(&patch, &bg, at).map_err(|e| format!("case {i}: {e}"))?;
        let (ox, oy) = pasted.offset;
        let (pw, ph) = (patch.image.width(), patch.image.height());
        let mask = pad_blend_mask(pw, ph, &ib);
        for py in 0..ph {
            for px in 0..pw {
                let (fx, fy) = (ox + px as i64, oy + py as i64);
                if fx < 0 || fy < 0 || fx >= 200 || fy >= 200 {
                    continue;
                }
                let (fx, fy) = (fx as usize, fy as usize);
                let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
                let inside = cx > ib.x && cx < ib.right() && cy > ib.y && cy < ib.bottom();
                let border = px == 0 || py == 0 || px == pw - 1 || py == ph - 1;
                if inside {
                    ensure(pasted.image.get(fx, fy) == patch.image.get(px, py), || {
                        format!("case {i}: inner pixel ({px},{py}) not from patch")
                    })?;
                    checked_pixels += 1;
                } else if border {
                    ensure(pasted.image.get(fx, fy) == bg.get(fx, fy), || {
                        format!("case {i}: border pixel ({px},{py}) not background")
                    })?;
                    checked_pixels += 1;
                }
            }
        }
        // sampled rows and columns through the inner box
        let mid_y = ((ib.y + ib.h / 2.0) as usize).min(ph - 1);
        let mid_x = ((ib.x + ib.w / 2.0) as usize).min(pw - 1);
        for x in 1..=mid_x {
            ensure(mask.get(x, mid_y) >= mask.get(x - 1, mid_y), || format!("case {i}: alpha falls at x={x}"))?;
        }
        for x in mid_x + 1..pw {
            ensure(mask.get(x, mid_y) <= mask.get(x - 1, mid_y), || format!("case {i}: alpha rises at x={x}"))?;
        }
        for y in 1..=mid_y {
            ensure(mask.get(mid_x, y) >= mask.get(mid_x, y - 1), || format!("case {i}: alpha falls at y={y}"))?;
        }
        for y in mid_y + 1..ph {
            ensure(mask.get(mid_x, y) <= mask.get(mid_x, y - 1), || format!("case {i}: alpha rises at y={y}"))?;
        }
    }
    Ok(format!("200 pastes, {checked_pixels} pixels checked exactly"))
}

fn rand_box(rng: &mut impl Rng) -> BoundingBox {
    BoundingBox::new(
        rng.random_range(0.0..50.0),
        rng.random_range(0.0..50.0),
        rng.random_range(1.0..30.0),
        rng.random_range(1.0..30.0),
    )
    .unwrap()
}

/// IoU and AUC against counting oracles.
fn metric_oracles() -> Outcome {
    let mut rng = seed::rng(55);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let mut int_box = || {
            let (x, y) = (rng.random_range(0..60i64), rng.random_range(0..60i64));
            (x, y, rng.random_range(1..40i64), rng.random_range(1..40i64))
        };
        let (a, b) = (int_box(), int_box());
        let mut inter = 0i64;
        for y in 0..120 {
            for x in 0..120 {
                let ina = x >= a.0 && x < a.0 + a.2 && y >= a.1 && y < a.1 + a.3;
                let inb = x >= b.0 && x < b.0 + b.2 && y >= b.1 && y < b.1 + b.3;
                inter += (ina && inb) as i64;
            }
        }
        let oracle = inter as f64 / (a.2 * a.3 + b.2 * b.3 - inter) as f64;
        let to_box = |t: (i64, i64, i64, i64)| BoundingBox::new(t.0 as f64, t.1 as f64, t.2 as f64, t.3 as f64).unwrap();
        let got = iou(&to_box(a), &to_box(b));
        worst = worst.max((got - oracle).abs());
        ensure((got - oracle).abs() <= 1e-6, || format!("iou instance {i}: {got} vs {oracle}"))?;
    }
    let mut worst_auc = 0.0f64;
    for i in 0..100 {
        let n = rng.random_range(1..80usize);
        let pred: Vec<BoundingBox> = (0..n).map(|_| rand_box(&mut rng)).collect();
        let gt: Vec<BoundingBox> =
            pred.iter().map(|p| if rng.random::<f64>() < 0.3 { *p } else { rand_box(&mut rng) }).collect();
        let curve = success_curve(&pred, &gt).map_err(|e| e.to_string())?;
        ensure(curve.success_rate.windows(2).all(|w| w[1] <= w[0]), || format!("curve {i} not monotone"))?;
        let mut cleared = 0usize;
        for (p, g) in pred.iter().zip(&gt) {
            let v = iou(p, g);
            cleared += (0..SUCCESS_STEPS).filter(|&k| v > k as f64 * 0.05).count();
        }
        let oracle = cleared as f64 / (n * SUCCESS_STEPS) as f64;
        let got = auc(&curve);
        worst_auc = worst_auc.max((got - oracle).abs());
        ensure((got - oracle).abs() <= 1e-6, || format!("auc instance {i}: {got} vs {oracle}"))?;
    }
    let ones = SuccessCurve { thresholds: success_curve_from_ious(&[]).thresholds, success_rate: vec![1.0; SUCCESS_STEPS] };
    ensure(auc(&ones) == 1.0, || format!("all-ones auc {}", auc(&ones)))?;
    Ok(format!("iou max err {worst:.1e}, auc max err {worst_auc:.1e}, all-ones auc 1.0"))
}

fn fft_vs_naive() -> Outcome {
    let mut rng = seed::rng(77);
    let mut worst = 0.0f64;
    for case in 0..40 {
        let (w, h) = (rng.random_range(1..=32usize), rng.random_range(1..=32usize));
        let a: Vec<f64> = (0..w * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..w * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = cross_correlate_fft(&a, &b, w, h);
        let mut naive = vec![0.0; w * h];
        for dy in 0..h {
            for dx in 0..w {
                let mut s = 0.0;
                for y in 0..h {
                    for x in 0..w {
                        s += a[y * w + x] * b[((y + dy) % h) * w + (x + dx) % w];
                    }
                }
                naive[dy * w + dx] = s;
            }
        }
        let scale = naive.iter().fold(f64::MIN_POSITIVE, |m, v| m.max(v.abs()));
        for (f, s) in fast.iter().zip(&naive) {
            let rel = (f - s).abs() / scale;
            worst = worst.max(rel);
            ensure(rel <= 1e-6, || format!("case {case} ({w}x{h}): {f} vs {s}"))?;
        }
    }
    Ok(format!("40 windows up to 32x32, max relative error {worst:.1e}"))
}

/// Tracks a synthesized 100-frame sequence from its first box.
fn closed_loop_iou(policy: SchedulePolicy) -> Result<f64, String> {
    let scene = ToyScene { width: 240, height: 180, frames: 30, object: (40.0, 32.0), ..Default::default() };
    let ds = in_memory_dataset(&["loop"], &scene, 12);
    let settings = SynthesisSettings { policy, ..Default::default() };
    let samples = synthesize(&ds, "loop", &settings, 100, 99, None).map_err(|e| e.to_string())?;
    let gt: Vec<BoundingBox> = samples.iter().map(|s| s.bbox).collect();
    let pred = track_sequence(samples.iter().map(|s| Ok(s.image.clone())), &gt[0], FilterParams::default())
        .map_err(|e| e.to_string())?;
    Ok(pred.iter().zip(&gt).map(|(p, g)| iou(p, g)).sum::<f64>() / gt.len() as f64)
}

fn closed_loop() -> Outcome {
    let mut shift_only = SchedulePolicy::identity();
    shift_only.shift = KindPolicy::new(true, 1.0, -10.0, 10.0);
    let mut occ = shift_only.clone();
    Preset::Occlusion.apply(&mut occ);
    let start = Instant::now();
    let plain = closed_loop_iou(shift_only)?;
    let occluded = closed_loop_iou(occ)?;
    let took = start.elapsed();
    ensure(plain >= 0.6, || format!("shift-only mean IoU {plain:.3} < 0.6"))?;
    ensure(occluded >= 0.4, || format!("occlusion mean IoU {occluded:.3} < 0.4"))?;
    ensure(took < Duration::from_secs(60), || format!("took {took:?}"))?;
    Ok(format!("mean IoU shift-only {plain:.3} (>= 0.6), occlusion {occluded:.3} (>= 0.4)"))
}

fn distractor_constraint() -> Outcome {
    let scene = ToyScene { width: 200, height: 160, frames: 4, ..Default::default() };
    let ds = in_memory_dataset(&["a", "b", "c"], &scene, 21);
    let library = build_patch_library(&ds, 4, 0.1, 3).map_err(|e| e.to_string())?;
    let mut policy = SchedulePolicy::default();
    Preset::BackgroundClutter.apply(&mut policy);
    let settings = SynthesisSettings { policy, ..Default::default() };
    let (mut placed, mut skipped, mut samples, mut worst) = (0, 0, 0, 0.0f64);
    for (seq, n) in [("a", 334), ("b", 333), ("c", 333)] {
        for s in synthesize(&ds, seq, &settings, n, 8, Some(&library)).map_err(|e| e.to_string())? {
            samples += 1;
            skipped += s.skipped_distractors;
            for d in &s.distractor_boxes {
                placed += 1;
                let v = iou(d, &s.bbox);
                worst = worst.max(v);
                ensure(v <= DISTRACTOR_MAX_IOU, || format!("{}: distractor IoU {v:.4}", s.id))?;
            }
        }
    }
    ensure(samples == 1000, || format!("{samples} samples"))?;
    ensure(placed > 0, || "no distractors placed".into())?;
    Ok(format!("{samples} samples, {placed} distractors ({skipped} skipped), max IoU {worst:.4}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("box propagation oracle", box_propagation, Some(Duration::from_secs(120))),
        ("schedule distribution", schedule_distribution, None),
        ("determinism", determinism, None),
        ("blend correctness", blend_correctness, None),
        ("metric oracles", metric_oracles, None),
        ("fft vs naive correlation", fft_vs_naive, None),
        ("closed loop", closed_loop, None),
        ("distractor constraint", distractor_constraint, None),
    ];
    let mut failed = 0;
    for (name, run, limit) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let took = start.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(_), Some(l)) if took > l => Err(format!("took {took:.1?}, limit {l:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{took:.1?}]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{took:.1?}]");
            }
        }
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
