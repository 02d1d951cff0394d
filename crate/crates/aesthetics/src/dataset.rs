//! Manifest-backed batch loading and a synthetic desk-scale corpus.
//!
//! The loader memoizes decoded images and built variant tensors for small
//! datasets: every variant tensor is a pure function of (seed, record,
//! variant), so cached entries stay valid across epochs and stages.

use std::collections::{HashMap, HashSet};
use std::io;
use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ava::{AestheticLabel, ImageRecord};
use crate::geometry::ImagePlane;
use crate::multicolumn::{
    build_variant, select_column_variant, ColumnConfig, ColumnVariant, SelectMode, SelectStrategy,
    VariantParams,
};

/// Records at or below this count get full plane + tensor memoization;
/// larger datasets stream from disk every epoch.
const CACHE_RECORD_LIMIT: usize = 128;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read image `{path}`: {detail}")]
    BadImage { path: String, detail: String },
    #[error("record `{id}` has no label")]
    Unlabeled { id: String },
    #[error("cannot write `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// Decode an image file into a planar [0,1] tensor.
pub fn load_plane(path: &Path) -> Result<ImagePlane, DatasetError> {
    let img = image::open(path).map_err(|e| DatasetError::BadImage {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    ImagePlane::from_image(&img).map_err(|e| DatasetError::BadImage {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// One assembled training or evaluation batch.
#[derive(Debug)]
pub struct Batch {
    /// One (B,3,S,S) tensor per column; B counts only usable records.
    pub inputs: Vec<Array4<f32>>,
    /// 0 = LOW, 1 = HIGH, aligned with the batch rows.
    pub labels: Vec<usize>,
    /// Record indices behind each row, aligned with `labels`.
    pub row_indices: Vec<usize>,
    /// Records dropped because no menu variant was constructible.
    pub skipped: usize,
}

pub struct Loader {
    pub records: Vec<ImageRecord>,
    images_root: PathBuf,
    params: VariantParams,
    strategy: SelectStrategy,
    seed: u64,
    plane_cache: HashMap<usize, ImagePlane>,
    tensor_cache: HashMap<(usize, ColumnVariant), Array3<f32>>,
    cache_enabled: bool,
    warned: HashSet<usize>,
}

impl Loader {
    pub fn new(
        records: Vec<ImageRecord>,
        images_root: PathBuf,
        params: VariantParams,
        strategy: SelectStrategy,
        seed: u64,
    ) -> Loader {
        let cache_enabled = records.len() <= CACHE_RECORD_LIMIT;
        Loader {
            records,
            images_root,
            params,
            strategy,
            seed,
            plane_cache: HashMap::new(),
            tensor_cache: HashMap::new(),
            cache_enabled,
            warned: HashSet::new(),
        }
    }

    pub fn params(&self) -> &VariantParams {
        &self.params
    }

    fn record_path(&self, record: &ImageRecord) -> PathBuf {
        if record.path.is_absolute() {
            record.path.clone()
        } else {
            self.images_root.join(&record.path)
        }
    }

    fn plane(&mut self, index: usize) -> Result<ImagePlane, DatasetError> {
        if let Some(p) = self.plane_cache.get(&index) {
            return Ok(p.clone());
        }
        let path = self.record_path(&self.records[index]);
        let plane = load_plane(&path)?;
        if self.cache_enabled {
            self.plane_cache.insert(index, plane.clone());
        }
        Ok(plane)
    }

    fn tensor(
        &mut self,
        index: usize,
        plane: &ImagePlane,
        variant: ColumnVariant,
    ) -> Result<Array3<f32>, crate::geometry::GeometryError> {
        if let Some(t) = self.tensor_cache.get(&(index, variant)) {
            return Ok(t.clone());
        }
        let id = self.records[index].id.clone();
        let t = build_variant(plane, variant, &self.params, &id, self.seed)?;
        if self.cache_enabled {
            self.tensor_cache.insert((index, variant), t.clone());
        }
        Ok(t)
    }

    /// Assemble a batch from record indices. Records whose menus are fully
    /// infeasible are skipped with a one-time warning; decode failures are
    /// hard errors.
    pub fn batch(
        &mut self,
        indices: &[usize],
        configs: &[ColumnConfig],
        mode: SelectMode,
    ) -> Result<Batch, DatasetError> {
        let columns = configs.len();
        let mut per_column: Vec<Vec<Array3<f32>>> = vec![Vec::new(); columns];
        let mut labels = Vec::new();
        let mut row_indices = Vec::new();
        let mut skipped = 0usize;
        for &idx in indices {
            let record = &self.records[idx];
            let label = match record.label {
                Some(AestheticLabel::Low) => 0usize,
                Some(AestheticLabel::High) => 1usize,
                Some(AestheticLabel::Excluded) | None => {
                    return Err(DatasetError::Unlabeled {
                        id: record.id.clone(),
                    })
                }
            };
            let id = record.id.clone();
            let plane = self.plane(idx)?;
            let mut tensors = Vec::with_capacity(columns);
            let mut usable = true;
            for (col, cfg) in configs.iter().enumerate() {
                let strategy = self.strategy;
                let seed = self.seed;
                let picked = select_column_variant(
                    &cfg.menu,
                    col,
                    mode,
                    strategy,
                    seed,
                    &id,
                    |v| self.tensor(idx, &plane, v),
                );
                match picked {
                    Ok((_, t)) => tensors.push(t),
                    Err(_) => {
                        usable = false;
                        break;
                    }
                }
            }
            if !usable {
                skipped += 1;
                if self.warned.insert(idx) {
                    eprintln!(
                        "warning: record `{id}` has no constructible variant for some column; skipping"
                    );
                }
                continue;
            }
            for (col, t) in tensors.into_iter().enumerate() {
                per_column[col].push(t);
            }
            labels.push(label);
            row_indices.push(idx);
        }
        let s = self.params.input_size;
        let inputs: Vec<Array4<f32>> = per_column
            .into_iter()
            .map(|tensors| {
                let mut stacked = Array4::<f32>::zeros((tensors.len(), 3, s, s));
                for (i, t) in tensors.iter().enumerate() {
                    stacked.index_axis_mut(Axis(0), i).assign(t);
                }
                stacked
            })
            .collect();
        Ok(Batch {
            inputs,
            labels,
            row_indices,
            skipped,
        })
    }
}

fn io_err(path: &Path, source: io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Vote histogram peaked at the given rating, with deterministic jitter that
/// never displaces the mode.
fn synthetic_votes(peak: usize, rng: &mut ChaCha8Rng) -> [u32; 10] {
    let mut counts = [0u32; 10];
    for (i, c) in counts.iter_mut().enumerate() {
        let dist = (i as i32 - (peak as i32 - 1)).unsigned_abs();
        let base = match dist {
            0 => 120,
            1 => 40,
            2 => 12,
            _ => 2,
        };
        *c = base + rng.gen_range(0..8);
    }
    // Jitter stays under the 80-vote gap between the peak and its
    // neighbours, so the mode is stable by construction.
    counts[peak - 1] += 60;
    counts
}

/// A soft radial bump centered at (cx, cy), radius r, in [0,1].
fn bump(x: f32, y: f32, cx: f32, cy: f32, r: f32) -> f32 {
    let d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
    (1.0 - d2 / (r * r)).max(0.0)
}

fn synthetic_image(label: AestheticLabel, seed: u64, size: usize) -> ImagePlane {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = match label {
        AestheticLabel::High => 0.75f32,
        _ => 0.25f32,
    };
    // A few random soft blobs give crops and saliency maps real structure.
    let blobs: Vec<(f32, f32, f32, f32)> = (0..4)
        .map(|_| {
            (
                rng.gen::<f32>(),
                rng.gen::<f32>(),
                0.1 + 0.2 * rng.gen::<f32>(),
                0.3 * (rng.gen::<f32>() - 0.5),
            )
        })
        .collect();
    let tint: [f32; 3] = [
        0.05 * (rng.gen::<f32>() - 0.5),
        0.05 * (rng.gen::<f32>() - 0.5),
        0.05 * (rng.gen::<f32>() - 0.5),
    ];
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    ImagePlane::from_fn(3, size, size, |c, x, y| {
        let fx = x as f32 / size as f32;
        let fy = y as f32 / size as f32;
        let mut v = base + tint[c];
        for &(cx, cy, r, a) in &blobs {
            v += a * bump(fx, fy, cx, cy, r);
        }
        v += 0.15 * (noise_rng.gen::<f32>() - 0.5);
        v.clamp(0.0, 1.0)
    })
    .expect("valid synthetic dimensions")
}

/// Write a balanced synthetic corpus: `count` JPEG images under
/// `dir/images/` plus an AVA-layout metadata file. Returns the metadata
/// path. Even indices are LOW, odd are HIGH.
pub fn generate_synthetic(dir: &Path, count: usize, seed: u64) -> Result<PathBuf, DatasetError> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| io_err(&images, e))?;
    let mut metadata = String::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let id = format!("synth{:04}", i + 1);
        let label = if i % 2 == 0 {
            AestheticLabel::Low
        } else {
            AestheticLabel::High
        };
        let peak = if label == AestheticLabel::High { 8 } else { 3 };
        let img = synthetic_image(label, seed.wrapping_add(i as u64 * 7919), 448);
        let path = images.join(format!("{id}.jpg"));
        img.to_rgb_image()
            .save(&path)
            .map_err(|e| DatasetError::BadImage {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
        let votes = synthetic_votes(peak, &mut rng);
        let vote_cols = votes.map(|v| v.to_string()).join(" ");
        // Same column layout as the real metadata: index, id, ten counts,
        // two semantic tags, challenge id.
        metadata.push_str(&format!("{} {} {} 1 22 0\n", i + 1, id, vote_cols));
    }
    let meta_path = dir.join("metadata.txt");
    std::fs::write(&meta_path, metadata).map_err(|e| io_err(&meta_path, e))?;
    Ok(meta_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ava::{self, Split};
    use crate::backbones::BackboneKind;
    use crate::multicolumn::standard_configs;
    use std::io::BufRead;

    fn synth_records(dir: &Path, count: usize) -> Vec<ImageRecord> {
        let meta = generate_synthetic(dir, count, 5).unwrap();
        let file = std::fs::File::open(meta).unwrap();
        let outcome = ava::parse_metadata(io::BufReader::new(file)).unwrap();
        assert!(outcome.issues.is_empty());
        let mut records = outcome.records;
        ava::derive_labels(&mut records).unwrap();
        records
    }

    #[test]
    fn synthetic_corpus_is_balanced_and_parseable() {
        let dir = tempfile::tempdir().unwrap();
        let records = synth_records(dir.path(), 8);
        assert_eq!(records.len(), 8);
        let low = records
            .iter()
            .filter(|r| r.label == Some(AestheticLabel::Low))
            .count();
        assert_eq!(low, 4, "half the corpus is LOW");
        for r in &records {
            assert!(dir.path().join("images").join(&r.path).exists());
        }
    }

    #[test]
    fn synthetic_classes_differ_in_brightness() {
        let dir = tempfile::tempdir().unwrap();
        let records = synth_records(dir.path(), 4);
        let mean_of = |r: &ImageRecord| {
            let p = load_plane(&dir.path().join("images").join(&r.path)).unwrap();
            p.pixel_sum() / (p.data().len() as f64)
        };
        for pair in records.chunks(2) {
            let low = mean_of(&pair[0]);
            let high = mean_of(&pair[1]);
            assert!(
                high - low > 0.2,
                "LOW {low:.3} vs HIGH {high:.3} must separate"
            );
        }
    }

    #[test]
    fn batches_stack_per_column_tensors_with_labels() {
        let dir = tempfile::tempdir().unwrap();
        let records = synth_records(dir.path(), 6);
        let mut params = VariantParams {
            input_size: 64,
            ..VariantParams::default()
        };
        params.fine_scales = vec![4, 8];
        let mut loader = Loader::new(
            records,
            dir.path().join("images"),
            params,
            SelectStrategy::Random,
            3,
        );
        let (configs, _) = standard_configs(3, BackboneKind::Tiny, 64, &[2]).unwrap();
        let batch = loader
            .batch(&[0, 1, 2, 3], &configs, SelectMode::Train { epoch: 0 })
            .unwrap();
        assert_eq!(batch.inputs.len(), 3);
        for t in &batch.inputs {
            assert_eq!(t.dim(), (4, 3, 64, 64));
        }
        assert_eq!(batch.labels, vec![0, 1, 0, 1]);
        assert_eq!(batch.skipped, 0);
    }

    #[test]
    fn batches_are_deterministic_and_cache_transparent() {
        let dir = tempfile::tempdir().unwrap();
        let records = synth_records(dir.path(), 4);
        let params = VariantParams {
            input_size: 64,
            fine_scales: vec![4, 8],
            ..VariantParams::default()
        };
        let mut loader = Loader::new(
            records,
            dir.path().join("images"),
            params,
            SelectStrategy::Random,
            9,
        );
        let (configs, _) = standard_configs(2, BackboneKind::Tiny, 64, &[2]).unwrap();
        let b1 = loader
            .batch(&[0, 1], &configs, SelectMode::Train { epoch: 1 })
            .unwrap();
        let b2 = loader
            .batch(&[0, 1], &configs, SelectMode::Train { epoch: 1 })
            .unwrap();
        for (t1, t2) in b1.inputs.iter().zip(&b2.inputs) {
            assert_eq!(t1, t2, "cached and fresh builds agree bitwise");
        }
    }

    #[test]
    fn records_without_usable_variants_are_skipped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        // A 224x224 image cannot host separated 224-crops, so a crops-only
        // column leaves the record unusable.
        let small = synthetic_image(AestheticLabel::Low, 1, 224);
        let img_dir = dir.path().join("images");
        std::fs::create_dir_all(&img_dir).unwrap();
        small.to_rgb_image().save(img_dir.join("tiny0001.jpg")).unwrap();
        let mut records = synth_records(dir.path(), 2);
        records[0].id = "tiny0001".into();
        records[0].path = PathBuf::from("tiny0001.jpg");
        let mut loader = Loader::new(
            records,
            img_dir,
            VariantParams::default(),
            SelectStrategy::Random,
            4,
        );
        let (configs, _) = standard_configs(2, BackboneKind::Tiny, 224, &[2]).unwrap();
        let batch = loader
            .batch(&[0, 1], &configs, SelectMode::Eval)
            .unwrap();
        assert_eq!(batch.skipped, 1);
        assert_eq!(batch.labels, vec![1], "only the usable record remains");
        assert_eq!(batch.inputs[0].dim().0, 1);
    }

    #[test]
    fn missing_image_is_a_bad_image_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut records = synth_records(dir.path(), 2);
        records[0].path = PathBuf::from("gone.jpg");
        let mut loader = Loader::new(
            records,
            dir.path().join("images"),
            VariantParams::default(),
            SelectStrategy::Random,
            4,
        );
        let (configs, _) = standard_configs(1, BackboneKind::Tiny, 224, &[2]).unwrap();
        let err = loader.batch(&[0], &configs, SelectMode::Eval).unwrap_err();
        assert!(matches!(err, DatasetError::BadImage { .. }));
    }

    #[test]
    fn unlabeled_records_are_rejected_in_batches() {
        let dir = tempfile::tempdir().unwrap();
        let mut records = synth_records(dir.path(), 2);
        records[0].label = Some(AestheticLabel::Excluded);
        records[0].split = Split::None;
        let mut loader = Loader::new(
            records,
            dir.path().join("images"),
            VariantParams::default(),
            SelectStrategy::Random,
            4,
        );
        let (configs, _) = standard_configs(1, BackboneKind::Tiny, 224, &[2]).unwrap();
        let err = loader.batch(&[0], &configs, SelectMode::Eval).unwrap_err();
        assert!(matches!(err, DatasetError::Unlabeled { .. }));
    }

    #[test]
    fn metadata_round_trips_through_the_standard_parser() {
        let dir = tempfile::tempdir().unwrap();
        let meta = generate_synthetic(dir.path(), 3, 11).unwrap();
        let lines: Vec<String> = std::fs::File::open(&meta)
            .map(io::BufReader::new)
            .unwrap()
            .lines()
            .map(|l| l.unwrap())
            .collect();
        assert_eq!(lines.len(), 3);
        for line in &lines {
            assert_eq!(line.split_whitespace().count(), 15, "AVA column layout");
        }
    }
}
