//! Pipeline commands behind the `ctp` binary. Each returns a summary and
//! leaves printing to the caller.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::eval::{attribute_report, score_sequence, EvalReport};
use crate::geometry::BoundingBox;
use crate::imaging::{resize, ImageBuffer};
use crate::otb;
use crate::pairs::{
    export_manifest, make_pair, read_manifest, sample_pair_indices, ManifestRecord, PairRecord, SampleRecord,
};
use crate::seed;
use crate::synthesis::{build_patch_library, synthesize, SequenceDataset, SynthesizedSample};
use crate::tracker::track_sequence;
use crate::transforms::{sample_chain, SchedulePolicy, TransformChain, TransformKind, TransformParams};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const PAIRS_MANIFEST_FILE: &str = "pairs.jsonl";
pub const SEQUENCES_DIR: &str = "sequences";
pub const PAIRS_DIR: &str = "pairs";
pub const RESULTS_DIR: &str = "results";

const LIBRARY_TAG: u64 = 0x4c49_4252;
const PAIRS_TAG: u64 = 0x5041_4952;

/// Runs `f` on a dedicated pool of `jobs` threads (0 = rayon default).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn manifest_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Sequence part of a sample id (`seq/000012` → `seq`).
pub fn sequence_of(sample_id: &str) -> &str {
    sample_id.rsplit_once('/').map_or(sample_id, |(s, _)| s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub manifest: PathBuf,
    pub per_sequence: Vec<(String, usize)>,
    pub distractors: usize,
    pub skipped_distractors: usize,
}

impl SynthSummary {
    pub fn total(&self) -> usize {
        self.per_sequence.iter().map(|(_, n)| n).sum()
    }
}

/// Synthesizes `config.samples_per_sequence` frames for every sequence under
/// `config.data_root` (or only those in `filter`). Writes an OTB-style tree
/// under `<out>/sequences/` and `<out>/manifest.jsonl`.
pub fn cmd_synth(config: &Config, filter: &[String]) -> Result<SynthSummary> {
    config.validate()?;
    if !config.data_root.is_dir() {
        return Err(Error::io(
            &config.data_root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root not found"),
        ));
    }
    let dataset = SequenceDataset::load(&config.data_root, config.box_source, config.master_seed)?;
    if dataset.sequences.is_empty() {
        return Err(Error::Empty(format!("no sequences under {}", config.data_root.display())));
    }
    let ids: Vec<String> = if filter.is_empty() {
        dataset.sequences.keys().cloned().collect()
    } else {
        let mut ids = filter.to_vec();
        ids.sort();
        ids.dedup();
        for id in &ids {
            dataset.sequence(id)?;
        }
        ids
    };
    let spp = config.policy.similar_patch_paste;
    let library = if spp.enable && spp.probability > 0.0 && config.library_per_sequence > 0 {
        let lib = build_patch_library(
            &dataset,
            config.library_per_sequence,
            config.pad_ratio,
            seed::mix64(&[config.master_seed, LIBRARY_TAG]),
        )?;
        info!("distractor library: {} patches", lib.len());
        Some(lib)
    } else {
        None
    };

    let settings = config.synthesis_settings();
    let out = &config.out_dir;
    let mut records = Vec::new();
    let mut summary = SynthSummary {
        manifest: out.join(MANIFEST_FILE),
        per_sequence: Vec::new(),
        distractors: 0,
        skipped_distractors: 0,
    };
    for id in &ids {
        let samples = synthesize(
            &dataset,
            id,
            &settings,
            config.samples_per_sequence,
            config.master_seed,
            library.as_ref(),
        )?;
        let rel_dir = format!("{SEQUENCES_DIR}/{id}/{}", otb::IMAGE_DIR);
        let seq_dir = out.join(SEQUENCES_DIR).join(id);
        create_dir(&seq_dir.join(otb::IMAGE_DIR))?;
        samples
            .par_iter()
            .enumerate()
            .try_for_each(|(j, s)| s.image.save(seq_dir.join(otb::IMAGE_DIR).join(otb::frame_file_name(j))))?;
        let boxes: Vec<BoundingBox> = samples.iter().map(|s| s.bbox).collect();
        otb::write_boxes(seq_dir.join(otb::GROUNDTRUTH_FILE), &boxes)?;
        let attrs = &dataset.sequence(id)?.attributes;
        if !attrs.is_empty() {
            write_file(&seq_dir.join(otb::ATTRIBUTES_FILE), attrs.join(",") + "\n")?;
        }
        for (j, s) in samples.iter().enumerate() {
            summary.distractors += s.distractor_boxes.len();
            summary.skipped_distractors += s.skipped_distractors;
            records.push(ManifestRecord::Sample(SampleRecord::new(
                s,
                format!("{rel_dir}/{}", otb::frame_file_name(j)),
            )));
        }
        info!("{id}: {} samples", samples.len());
        summary.per_sequence.push((id.clone(), samples.len()));
    }
    export_manifest(&records, &summary.manifest)?;
    Ok(summary)
}

fn load_sample(rec: &SampleRecord, dir: &Path) -> Result<SynthesizedSample> {
    Ok(SynthesizedSample {
        id: rec.id.clone(),
        image: ImageBuffer::open(dir.join(&rec.frame_path))?,
        bbox: rec.bbox()?,
        background: rec.background.clone(),
        chain: TransformChain { steps: rec.chain.clone(), seed: rec.seed },
        distractor_boxes: Vec::new(),
        skipped_distractors: 0,
        seed: rec.seed,
    })
}

pub fn sample_records(records: &[ManifestRecord]) -> Vec<&SampleRecord> {
    records
        .iter()
        .filter_map(|r| match r {
            ManifestRecord::Sample(s) => Some(s),
            ManifestRecord::Pair(_) => None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairsSummary {
    pub manifest: PathBuf,
    pub samples: usize,
    pub pairs: usize,
}

/// Draws `config.pairs_per_sequence` template/search pairs within each
/// sequence of a sample manifest and writes `<out>/pairs.jsonl` holding
/// the sample records followed by the pair records. Crops go under
/// `<out>/pairs/` when `config.materialize_pairs` is set.
pub fn cmd_pairs(config: &Config, manifest: &Path) -> Result<PairsSummary> {
    config.pair.validate()?;
    let records = read_manifest(manifest)?;
    let src_dir = manifest_dir(manifest);
    let out = &config.out_dir;
    create_dir(out)?;
    let same_dir = fs::canonicalize(&src_dir).ok() == fs::canonicalize(out).ok();

    let samples = sample_records(&records);
    if samples.is_empty() {
        return Err(Error::Empty(format!("{} has no sample records", manifest.display())));
    }
    let mut by_seq: BTreeMap<&str, Vec<&SampleRecord>> = BTreeMap::new();
    for s in &samples {
        by_seq.entry(sequence_of(&s.id)).or_default().push(s);
    }

    let mut out_records: Vec<ManifestRecord> = Vec::with_capacity(samples.len());
    for s in &samples {
        let mut s = (*s).clone();
        if !same_dir && Path::new(&s.frame_path).is_relative() {
            let abs = src_dir.join(&s.frame_path);
            let abs = fs::canonicalize(&abs).map_err(|e| Error::io(&abs, e))?;
            s.frame_path = abs.display().to_string();
        }
        out_records.push(ManifestRecord::Sample(s));
    }

    let mut n_pairs = 0;
    for (seq_id, recs) in &by_seq {
        let loaded: Vec<SynthesizedSample> = recs.par_iter().map(|r| load_sample(r, &src_dir)).collect::<Result<_>>()?;
        let pair_seed = seed::mix64(&[config.master_seed, seed::hash_str(seq_id), PAIRS_TAG]);
        let idx = sample_pair_indices(loaded.len(), config.pairs_per_sequence, pair_seed)?;
        let pair_dir = out.join(PAIRS_DIR).join(seq_id);
        if config.materialize_pairs {
            create_dir(&pair_dir)?;
        }
        let pairs: Vec<PairRecord> = idx
            .into_par_iter()
            .enumerate()
            .map(|(k, (t, s))| {
                let pair = make_pair(&loaded[t], &loaded[s], &config.pair, seed::mix64(&[pair_seed, k as u64]))?;
                let mut rec = PairRecord::new(&pair);
                if config.materialize_pairs {
                    let t_name = format!("{k:06}_template.png");
                    let s_name = format!("{k:06}_search.png");
                    pair.template.save(pair_dir.join(&t_name))?;
                    pair.search.save(pair_dir.join(&s_name))?;
                    rec.template_path = Some(format!("{PAIRS_DIR}/{seq_id}/{t_name}"));
                    rec.search_path = Some(format!("{PAIRS_DIR}/{seq_id}/{s_name}"));
                }
                Ok(rec)
            })
            .collect::<Result<_>>()?;
        n_pairs += pairs.len();
        out_records.extend(pairs.into_iter().map(ManifestRecord::Pair));
    }
    let path = out.join(PAIRS_MANIFEST_FILE);
    export_manifest(&out_records, &path)?;
    Ok(PairsSummary { manifest: path, samples: samples.len(), pairs: n_pairs })
}

/// Initial box for tracking: the first ground-truth line, falling back to
/// the detector file.
pub fn initial_box(seq_dir: &Path) -> Result<BoundingBox> {
    let gt = seq_dir.join(otb::GROUNDTRUTH_FILE);
    if gt.is_file() {
        return otb::read_first_box(gt);
    }
    let det = seq_dir.join(otb::DETECTOR_FILE);
    if det.is_file() {
        return otb::read_first_box(det);
    }
    Err(Error::MissingAnnotation(seq_dir.display().to_string()))
}

fn sequence_name(seq_dir: &Path) -> String {
    seq_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "sequence".into())
}

/// Tracks one sequence directory and writes `<out>/results/<name>.txt`.
pub fn cmd_track(config: &Config, seq_dir: &Path, init: Option<BoundingBox>) -> Result<PathBuf> {
    let init = match init {
        Some(b) => b,
        None => initial_box(seq_dir)?,
    };
    let frames = otb::list_frames(seq_dir)?;
    let boxes = track_sequence(frames.iter().map(ImageBuffer::open), &init, config.filter)?;
    let path = config.out_dir.join(RESULTS_DIR).join(format!("{}.txt", sequence_name(seq_dir)));
    create_dir(path.parent().expect("results path has a parent"))?;
    otb::write_boxes(&path, &boxes)?;
    Ok(path)
}

/// Tracks every sequence under `root` in parallel.
pub fn cmd_track_all(config: &Config, root: &Path) -> Result<Vec<PathBuf>> {
    let seqs = otb::list_sequences(root)?;
    if seqs.is_empty() {
        return Err(Error::Empty(format!("no sequences under {}", root.display())));
    }
    seqs.par_iter().map(|(_, dir)| cmd_track(config, dir, None)).collect()
}

/// Scores every `<name>.txt` in `results_dir` against
/// `<gt_root>/<name>/groundtruth_rect.txt`. Writes `report.json`,
/// `report.txt` and `curves.csv` into `out_dir`.
pub fn cmd_eval(results_dir: &Path, gt_root: &Path, out_dir: &Path) -> Result<EvalReport> {
    let mut files: Vec<PathBuf> = fs::read_dir(results_dir)
        .map_err(|e| Error::io(results_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt") && p.is_file())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Empty(format!("no result files in {}", results_dir.display())));
    }
    let mut scores = BTreeMap::new();
    let mut tags = BTreeMap::new();
    for f in files {
        let name = f.file_stem().expect("txt file has a stem").to_string_lossy().into_owned();
        let seq_dir = gt_root.join(&name);
        let gt_path = seq_dir.join(otb::GROUNDTRUTH_FILE);
        if !gt_path.is_file() {
            return Err(Error::UnknownSequence(name));
        }
        let pred = otb::read_boxes(&f)?;
        let gt = otb::read_boxes(&gt_path)?;
        scores.insert(name.clone(), score_sequence(&pred, &gt)?);
        tags.insert(name, otb::read_attributes(&seq_dir)?);
    }
    let report = attribute_report(scores, &tags);
    let json = serde_json::to_string_pretty(&report).map_err(|source| Error::Json {
        path: out_dir.join("report.json"),
        source,
    })?;
    write_file(&out_dir.join("report.json"), json + "\n")?;
    write_file(&out_dir.join("report.txt"), report.to_table())?;
    write_file(&out_dir.join("curves.csv"), report.curves_csv())?;
    Ok(report)
}

pub const TARGET_COLOR: [u8; 3] = [0, 255, 0];
pub const DISTRACTOR_COLOR: [u8; 3] = [255, 0, 0];
pub const PREVIEW_CELL: (usize, usize) = (256, 192);

/// Contact sheet of the first `n` samples, target boxes in green and
/// distractor boxes in red, scaled into fixed-size cells.
pub fn render_preview(samples: &[(ImageBuffer, BoundingBox, Vec<BoundingBox>)]) -> Result<ImageBuffer> {
    if samples.is_empty() {
        return Err(Error::Empty("nothing to preview".into()));
    }
    let (cw, ch) = PREVIEW_CELL;
    let cols = (samples.len() as f64).sqrt().ceil() as usize;
    let rows = samples.len().div_ceil(cols);
    let mut sheet = ImageBuffer::filled(cols * cw, rows * ch, [32, 32, 32]);
    for (i, (img, bbox, distractors)) in samples.iter().enumerate() {
        let s = (cw as f64 / img.width() as f64).min(ch as f64 / img.height() as f64);
        let w = ((img.width() as f64 * s).round() as usize).clamp(1, cw);
        let h = ((img.height() as f64 * s).round() as usize).clamp(1, ch);
        let (sx, sy) = (w as f64 / img.width() as f64, h as f64 / img.height() as f64);
        let scale_box = |b: &BoundingBox| BoundingBox { x: b.x * sx, y: b.y * sy, w: b.w * sx, h: b.h * sy };
        let mut cell = resize(img, w, h)?;
        for d in distractors {
            cell.draw_rect(&scale_box(d), DISTRACTOR_COLOR, 2);
        }
        cell.draw_rect(&scale_box(bbox), TARGET_COLOR, 2);
        let (ox, oy) = ((i % cols) * cw, (i / cols) * ch);
        for y in 0..h {
            for x in 0..w {
                sheet.set(ox + x, oy + y, cell.get(x, y));
            }
        }
    }
    Ok(sheet)
}

pub fn cmd_preview(manifest: &Path, n: usize, out_png: &Path) -> Result<PathBuf> {
    let records = read_manifest(manifest)?;
    let dir = manifest_dir(manifest);
    let cells = sample_records(&records)
        .into_iter()
        .take(n)
        .map(|r| {
            let img = ImageBuffer::open(dir.join(&r.frame_path))?;
            let distractors = r
                .distractors
                .iter()
                .map(|&[x, y, w, h]| BoundingBox::new(x, y, w, h))
                .collect::<Result<Vec<_>>>()?;
            Ok((img, r.bbox()?, distractors))
        })
        .collect::<Result<Vec<_>>>()?;
    let sheet = render_preview(&cells)?;
    if let Some(d) = out_png.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(d)?;
    }
    sheet.save(out_png)?;
    Ok(out_png.to_path_buf())
}

pub const HISTOGRAM_BUCKETS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub min: f64,
    pub max: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    fn from_values(values: &[f64]) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut counts = vec![0; HISTOGRAM_BUCKETS];
        let span = max - min;
        for &v in values {
            let b = if span > 0.0 { (((v - min) / span) * HISTOGRAM_BUCKETS as f64) as usize } else { 0 };
            counts[b.min(HISTOGRAM_BUCKETS - 1)] += 1;
        }
        Histogram { min, max, counts }
    }
}

/// Empirical transform statistics over a set of chains.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainStats {
    pub samples: usize,
    /// Chains containing each kind, keyed by config key.
    pub inclusion: BTreeMap<String, usize>,
    pub cutout_and_blur: usize,
    /// `kind.param` → histogram of drawn values.
    pub params: BTreeMap<String, Histogram>,
}

impl ChainStats {
    pub fn from_chains<'a>(chains: impl IntoIterator<Item = &'a [TransformParams]>) -> Self {
        let mut inclusion: BTreeMap<String, usize> =
            TransformKind::ALL.iter().map(|k| (k.key().to_string(), 0)).collect();
        let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut samples = 0;
        let mut both = 0;
        for steps in chains {
            samples += 1;
            let has = |k| steps.iter().any(|s| s.kind() == k);
            if has(TransformKind::Cutout) && has(TransformKind::ShakingBlur) {
                both += 1;
            }
            for step in steps {
                let kind = step.kind().key();
                *inclusion.get_mut(kind).expect("every kind is listed") += 1;
                for (name, v) in step.values() {
                    values.entry(format!("{kind}.{name}")).or_default().push(v);
                }
            }
        }
        let params = values.into_iter().map(|(k, v)| (k, Histogram::from_values(&v))).collect();
        ChainStats { samples, inclusion, cutout_and_blur: both, params }
    }

    pub fn frequency(&self, kind: TransformKind) -> f64 {
        if self.samples == 0 {
            return 0.0;
        }
        self.inclusion[kind.key()] as f64 / self.samples as f64
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "samples: {}", self.samples);
        let _ = writeln!(s, "{:<22} {:>8} {:>9}", "transform", "count", "frequency");
        for kind in TransformKind::ALL {
            let _ = writeln!(s, "{:<22} {:>8} {:>9.4}", kind.key(), self.inclusion[kind.key()], self.frequency(kind));
        }
        let _ = writeln!(s, "{:<22} {:>8}", "cutout+shaking_blur", self.cutout_and_blur);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<28} {:>10} {:>10}  histogram", "parameter", "min", "max");
        for (name, h) in &self.params {
            let counts: Vec<String> = h.counts.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "{:<28} {:>10.4} {:>10.4}  {}", name, h.min, h.max, counts.join(" "));
        }
        s
    }
}

/// Statistics over the chains recorded in a manifest.
pub fn cmd_stats(manifest: &Path) -> Result<ChainStats> {
    let records = read_manifest(manifest)?;
    let samples = sample_records(&records);
    Ok(ChainStats::from_chains(samples.iter().map(|r| r.chain.as_slice())))
}

/// Statistics over `n` chains drawn straight from `policy`, without
/// rendering.
pub fn schedule_stats(policy: &SchedulePolicy, n: usize, master_seed: u64) -> Result<ChainStats> {
    let chains: Vec<TransformChain> = (0..n)
        .into_par_iter()
        .map(|j| sample_chain(policy, seed::mix64(&[master_seed, j as u64])))
        .collect::<Result<_>>()?;
    Ok(ChainStats::from_chains(chains.iter().map(|c| c.steps.as_slice())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequence_of_strips_index() {
        assert_eq!(sequence_of("Basketball/000012"), "Basketball");
        assert_eq!(sequence_of("plain"), "plain");
    }

    #[test]
    fn histogram_buckets() {
        let h = Histogram::from_values(&[0.0, 0.05, 0.5, 1.0]);
        assert_eq!(h.counts.iter().sum::<usize>(), 4);
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[5], 1);
        assert_eq!(h.counts[9], 1);
        let flat = Histogram::from_values(&[3.0, 3.0]);
        assert_eq!(flat.counts[0], 2);
    }

    #[test]
    fn stats_count_kinds() {
        let a = vec![TransformParams::Shift { dx: 1.0, dy: 2.0 }, TransformParams::ShakingBlur { k: 5 }];
        let b = vec![TransformParams::Shift { dx: -1.0, dy: 0.0 }];
        let st = ChainStats::from_chains([a.as_slice(), b.as_slice()]);
        assert_eq!(st.samples, 2);
        assert_eq!(st.frequency(TransformKind::Shift), 1.0);
        assert_eq!(st.frequency(TransformKind::ShakingBlur), 0.5);
        assert_eq!(st.frequency(TransformKind::Cutout), 0.0);
        assert_eq!(st.params["shift.dx"].min, -1.0);
        assert!(st.to_table().contains("shaking_blur"));
    }

    #[test]
    fn preview_draws_distinct_colors() {
        let img = ImageBuffer::filled(128, 96, [128, 128, 128]);
        let target = BoundingBox::new(10.0, 10.0, 40.0, 30.0).unwrap();
        let distractor = BoundingBox::new(70.0, 40.0, 30.0, 30.0).unwrap();
        let sheet = render_preview(&[(img, target, vec![distractor])]).unwrap();
        assert_eq!((sheet.width(), sheet.height()), PREVIEW_CELL);
        // 128x96 scales by 2 into a 256x192 cell
        assert_eq!(sheet.get(20, 40), TARGET_COLOR);
        assert_eq!(sheet.get(140, 100), DISTRACTOR_COLOR);
        assert_eq!(sheet.get(100, 100), [128, 128, 128]);
    }
}
