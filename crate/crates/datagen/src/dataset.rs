//! Dataset builds, manifests, fingerprints, and integrity checks.
//!
//! A dataset root holds one directory per split, each with a
//! `manifest.jsonl` (one JSON record per sample: id, captions, full script,
//! seed) next to one binary video tensor per sample, plus a `dataset.json`
//! summary at the root carrying a SHA-256 fingerprint of everything written.
//!
//! Every sample is a pure function of `(base_seed, kind, split, index)`, so
//! generation is embarrassingly parallel: the parallel path fans samples out
//! with rayon and reassembles them in index order, producing byte-identical
//! output to the sequential path.

use crate::caption::{self, CaptionMode};
use crate::render;
use crate::sampler;
use crate::types::*;
use crate::DatagenError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl DatasetConfig {
    /// Paper-scale defaults for a kind; desk runs override the counts.
    pub fn with_default_counts(kind: DatasetKind, seed: u64, out_dir: PathBuf) -> DatasetConfig {
        let (n_train, n_test) = kind.default_counts();
        DatasetConfig { kind, n_train, n_test, seed, out_dir }
    }
}

/// One line of `manifest.jsonl`.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub explicit_caption: String,
    pub ambiguous_caption: String,
    pub script: SceneScript,
    pub seed: u64,
}

/// `dataset.json` at the dataset root.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub kind: DatasetKind,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    /// SHA-256 over every manifest line and video file, in index order.
    pub fingerprint: String,
}

pub fn split_dir(root: &Path, split: Split) -> PathBuf {
    root.join(split.as_str())
}

pub fn video_path(split_dir: &Path, id: &str) -> PathBuf {
    split_dir.join(format!("{id}.mvid"))
}

/// Derive the per-sample seed. Samples never share RNG state, which is what
/// makes any generation schedule equivalent.
pub fn sample_seed(base: u64, kind: DatasetKind, split: Split, index: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(kind.as_str().as_bytes());
    h.update(split.as_str().as_bytes());
    h.update((index as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 yields at least 8 bytes"))
}

/// Fully synthesize one sample: script, frames, both captions.
pub fn synthesize_sample(
    kind: DatasetKind,
    split: Split,
    index: usize,
    base_seed: u64,
) -> (ManifestRecord, VideoTensor) {
    let seed = sample_seed(base_seed, kind, split, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let script = sampler::sample_scene(kind, split, &mut rng);
    let video = render::render_scene(&script);
    let explicit_caption = caption::describe_scene(&script, CaptionMode::Explicit, seed);
    let ambiguous_caption = caption::describe_scene(&script, CaptionMode::Ambiguous, seed);
    let record = ManifestRecord {
        id: format!("{split}_{index:06}"),
        explicit_caption,
        ambiguous_caption,
        script,
        seed,
    };
    (record, video)
}

/// Sequential reference path.
pub fn synthesize_range_sequential(
    kind: DatasetKind,
    split: Split,
    range: std::ops::Range<usize>,
    base_seed: u64,
) -> Vec<(ManifestRecord, VideoTensor)> {
    range.map(|i| synthesize_sample(kind, split, i, base_seed)).collect()
}

/// Rayon path; collects in index order, so output bytes match the
/// sequential path exactly.
#[cfg(feature = "parallel")]
pub fn synthesize_range_parallel(
    kind: DatasetKind,
    split: Split,
    range: std::ops::Range<usize>,
    base_seed: u64,
) -> Vec<(ManifestRecord, VideoTensor)> {
    use rayon::prelude::*;
    range
        .into_par_iter()
        .map(|i| synthesize_sample(kind, split, i, base_seed))
        .collect()
}

fn synthesize_range(
    kind: DatasetKind,
    split: Split,
    range: std::ops::Range<usize>,
    base_seed: u64,
) -> Vec<(ManifestRecord, VideoTensor)> {
    #[cfg(feature = "parallel")]
    {
        synthesize_range_parallel(kind, split, range, base_seed)
    }
    #[cfg(not(feature = "parallel"))]
    {
        synthesize_range_sequential(kind, split, range, base_seed)
    }
}

/// Samples synthesized and written per chunk; bounds peak memory on big runs.
const CHUNK: usize = 32;

/// Build the full dataset on disk and return its summary.
pub fn build_dataset(cfg: &DatasetConfig) -> Result<DatasetSummary, DatagenError> {
    if cfg.out_dir.join("dataset.json").exists() {
        return Err(DatagenError::Config(format!(
            "output directory {} already holds a dataset; refusing to overwrite",
            cfg.out_dir.display()
        )));
    }
    let mut hasher = Sha256::new();
    for (split, count) in [(Split::Train, cfg.n_train), (Split::Test, cfg.n_test)] {
        build_split(cfg, split, count, &mut hasher)?;
    }
    let summary = DatasetSummary {
        kind: cfg.kind,
        n_train: cfg.n_train,
        n_test: cfg.n_test,
        seed: cfg.seed,
        fingerprint: format!("{:x}", hasher.finalize()),
    };
    let json = serde_json::to_string_pretty(&summary)?;
    fs::write(cfg.out_dir.join("dataset.json"), json)?;
    Ok(summary)
}

fn build_split(
    cfg: &DatasetConfig,
    split: Split,
    count: usize,
    hasher: &mut Sha256,
) -> Result<(), DatagenError> {
    let dir = split_dir(&cfg.out_dir, split);
    fs::create_dir_all(&dir)?;
    let mut manifest = fs::File::create(dir.join("manifest.jsonl"))?;
    let mut start = 0;
    while start < count {
        let end = (start + CHUNK).min(count);
        let chunk = synthesize_range(cfg.kind, split, start..end, cfg.seed);
        for (record, video) in &chunk {
            let line = serde_json::to_string(record)?;
            manifest.write_all(line.as_bytes())?;
            manifest.write_all(b"\n")?;
            hasher.update(line.as_bytes());
            let mut bytes = Vec::new();
            video.write_to(&mut bytes).expect("writing to a Vec cannot fail");
            hasher.update(&bytes);
            fs::write(video_path(&dir, &record.id), &bytes)?;
        }
        start = end;
    }
    Ok(())
}

pub fn read_manifest(split_dir: &Path) -> Result<Vec<ManifestRecord>, DatagenError> {
    let file = fs::File::open(split_dir.join("manifest.jsonl"))?;
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        records.push(serde_json::from_str(&line?)?);
    }
    Ok(records)
}

pub fn read_summary(root: &Path) -> Result<DatasetSummary, DatagenError> {
    Ok(serde_json::from_str(&fs::read_to_string(root.join("dataset.json"))?)?)
}

pub fn load_video(split_dir: &Path, id: &str) -> Result<VideoTensor, DatagenError> {
    Ok(VideoTensor::load(&video_path(split_dir, id))?)
}

// ---------------------------------------------------------------------------
// Split exclusivity
// ---------------------------------------------------------------------------

/// A glyph motion pattern as a `(digit, "direction+bounce")` pair.
pub type MotionPair = (u8, String);

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ExclusivityReport {
    pub train_pairs: BTreeSet<MotionPair>,
    pub test_pairs: BTreeSet<MotionPair>,
    pub overlap: BTreeSet<MotionPair>,
}

impl ExclusivityReport {
    pub fn passes(&self) -> bool {
        self.overlap.is_empty()
    }
}

fn motion_pairs(records: &[ManifestRecord]) -> BTreeSet<MotionPair> {
    let mut pairs = BTreeSet::new();
    for r in records {
        for a in &r.script.actions {
            if let ActionKind::GlyphMove { direction, bounce, .. } = &a.kind {
                let digit = r
                    .script
                    .object(a.subject_id)
                    .digit_class
                    .expect("glyph mover has a digit class");
                let mode = match bounce {
                    BounceMode::Stop => "stop",
                    BounceMode::BounceOnce => "bounce",
                };
                pairs.insert((digit, format!("{}+{}", direction.word(), mode)));
            }
        }
    }
    pairs
}

/// Check that no (digit, motion pattern) pair appears in both splits.
pub fn check_split_exclusivity(
    train: &[ManifestRecord],
    test: &[ManifestRecord],
) -> Result<ExclusivityReport, DatagenError> {
    let kinds: BTreeSet<&str> = train
        .iter()
        .chain(test.iter())
        .map(|r| r.script.kind.as_str())
        .collect();
    if kinds.len() > 1 {
        return Err(DatagenError::Config(format!(
            "exclusivity check got mixed dataset kinds: {kinds:?}"
        )));
    }
    if let Some(kind) = kinds.first() {
        let kind = DatasetKind::parse(kind).expect("kind came from a script");
        if !kind.is_glyph() {
            return Err(DatagenError::Config(format!(
                "exclusivity is a glyph-dataset property, got {kind}"
            )));
        }
    }
    let train_pairs = motion_pairs(train);
    let test_pairs = motion_pairs(test);
    let overlap = train_pairs.intersection(&test_pairs).cloned().collect();
    Ok(ExclusivityReport { train_pairs, test_pairs, overlap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caption::explicit_caption_matches_script;

    fn tiny_cfg(kind: DatasetKind, dir: &Path) -> DatasetConfig {
        DatasetConfig {
            kind,
            n_train: 6,
            n_test: 3,
            seed: 99,
            out_dir: dir.to_path_buf(),
        }
    }

    #[test]
    fn build_round_trips_and_is_byte_identical_across_runs() {
        let tmp = tempfile::tempdir().unwrap();
        let a = build_dataset(&tiny_cfg(DatasetKind::SingleMnist, &tmp.path().join("a"))).unwrap();
        let b = build_dataset(&tiny_cfg(DatasetKind::SingleMnist, &tmp.path().join("b"))).unwrap();
        assert_eq!(a.fingerprint, b.fingerprint, "two runs must be byte-identical");

        let train = read_manifest(&split_dir(&tmp.path().join("a"), Split::Train)).unwrap();
        assert_eq!(train.len(), 6);
        for r in &train {
            assert!(explicit_caption_matches_script(&r.script, &r.explicit_caption));
            let v = load_video(&split_dir(&tmp.path().join("a"), Split::Train), &r.id).unwrap();
            assert_eq!(v.t, r.script.raw_frames);
            assert_eq!(v.h, r.script.kind.canvas());
        }
        let summary = read_summary(&tmp.path().join("a")).unwrap();
        assert_eq!(summary, a);
    }

    #[test]
    fn rebuilding_into_the_same_directory_is_refused() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(DatasetKind::SingleMnist, tmp.path());
        build_dataset(&cfg).unwrap();
        let err = build_dataset(&cfg).unwrap_err();
        assert!(matches!(err, DatagenError::Config(_)));
    }

    #[test]
    fn empty_dataset_builds_cleanly() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg(DatasetKind::CaterV1, tmp.path());
        cfg.n_train = 0;
        cfg.n_test = 0;
        build_dataset(&cfg).unwrap();
        assert!(read_manifest(&split_dir(tmp.path(), Split::Train)).unwrap().is_empty());
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_and_sequential_generation_agree_exactly() {
        for kind in [DatasetKind::ModifiedMnist, DatasetKind::CaterV2] {
            let seq = synthesize_range_sequential(kind, Split::Train, 0..8, 7);
            let par = synthesize_range_parallel(kind, Split::Train, 0..8, 7);
            assert_eq!(seq, par, "{kind}");
        }
    }

    #[test]
    fn generated_splits_are_exclusive_and_adversarial_overlap_is_caught() {
        let train: Vec<ManifestRecord> = (0..40)
            .map(|i| synthesize_sample(DatasetKind::DoubleMnist, Split::Train, i, 1).0)
            .collect();
        let test: Vec<ManifestRecord> = (0..40)
            .map(|i| synthesize_sample(DatasetKind::DoubleMnist, Split::Test, i, 1).0)
            .collect();
        let report = check_split_exclusivity(&train, &test).unwrap();
        assert!(report.passes(), "overlap: {:?}", report.overlap);
        assert!(!report.train_pairs.is_empty() && !report.test_pairs.is_empty());

        // adversarial: siphon one training record into the test manifest
        let mut poisoned = test.clone();
        poisoned.push(train[0].clone());
        let report = check_split_exclusivity(&train, &poisoned).unwrap();
        assert!(!report.passes());
        let first_pair = motion_pairs(&train[..1]).into_iter().next().unwrap();
        assert!(report.overlap.contains(&first_pair), "failure must name the shared pair");
    }

    #[test]
    fn exclusivity_rejects_mixed_or_nonglyph_kinds() {
        let glyph = vec![synthesize_sample(DatasetKind::SingleMnist, Split::Train, 0, 1).0];
        let table = vec![synthesize_sample(DatasetKind::CaterV1, Split::Test, 0, 1).0];
        assert!(check_split_exclusivity(&glyph, &table).is_err());
        assert!(check_split_exclusivity(&table, &table.clone()).is_err());
    }

    #[test]
    fn sample_seeds_differ_across_indices_splits_and_kinds() {
        let mut seeds = BTreeSet::new();
        for kind in DatasetKind::ALL {
            for split in [Split::Train, Split::Test] {
                for i in 0..10 {
                    seeds.insert(sample_seed(5, kind, split, i));
                }
            }
        }
        assert_eq!(seeds.len(), 5 * 2 * 10);
    }
}
