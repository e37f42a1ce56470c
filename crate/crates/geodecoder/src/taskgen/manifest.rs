//! Dataset assembly: manifest rows, split hashing, and the build pipeline.
//!
//! A dataset directory holds `manifest.jsonl` (header line, then one JSON row
//! per sample), `images/<id>.ppm`, and `vocab.txt` covering every prompt and
//! target. Builds are kind-major and deterministic: sample `i` draws from its
//! own rng substream, so output bytes do not depend on thread count.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::render::Raster;
use crate::textcodec::Vocab;
use crate::worldgen::MapWorld;

use super::factory::make_sample_with_id;
use super::{fnv1a64, mix2, truth_of, Sample, TaskGenError, TaskKind, Truth, ViewPolicy};

pub const MANIFEST_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Split assignment by id hash: stable under re-ordering and re-generation.
pub fn split_of(id: &str) -> Split {
    match fnv1a64(id.as_bytes()) % 100 {
        0..=89 => Split::Train,
        90..=94 => Split::Val,
        _ => Split::Test,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub kind: TaskKind,
    /// Image path relative to the manifest's directory.
    pub image: String,
    pub input_text: String,
    pub target_text: String,
    pub truth: Truth,
    pub split: Split,
}

impl ManifestRow {
    pub fn load_image(&self, manifest_dir: &Path) -> Result<Raster, TaskGenError> {
        let path = manifest_dir.join(&self.image);
        let bytes = fs::read(&path)
            .map_err(|source| TaskGenError::Io { path: path.display().to_string(), source })?;
        Raster::from_ppm(&bytes).map_err(|e| TaskGenError::BadManifest {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestHeader {
    manifest_format: u32,
    n: usize,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TaskGenError + '_ {
    move |source| TaskGenError::Io { path: path.display().to_string(), source }
}

pub fn save_manifest(path: &Path, seed: u64, rows: &[ManifestRow]) -> Result<(), TaskGenError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let header = ManifestHeader { manifest_format: MANIFEST_FORMAT, n: rows.len(), seed };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(io_err(path))?;
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn load_manifest(path: &Path) -> Result<Manifest, TaskGenError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    let bad = |detail: String| TaskGenError::BadManifest {
        path: path.display().to_string(),
        detail,
    };
    let mut lines = reader.lines();
    let header_line = match lines.next() {
        Some(line) => line.map_err(io_err(path))?,
        None => return Err(bad("empty file".into())),
    };
    let header: ManifestHeader =
        serde_json::from_str(&header_line).map_err(|e| bad(format!("bad header: {e}")))?;
    if header.manifest_format != MANIFEST_FORMAT {
        return Err(TaskGenError::UnsupportedFormat(header.manifest_format));
    }
    let mut rows = Vec::with_capacity(header.n);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.is_empty() {
            continue;
        }
        let row: ManifestRow =
            serde_json::from_str(&line).map_err(|e| bad(format!("row {i}: {e}")))?;
        // Reject rows whose truth payload and kind drifted apart.
        truth_of(row.kind, &row.id, &row.truth)?;
        rows.push(row);
    }
    if rows.len() != header.n {
        return Err(bad(format!("header says {} rows, found {}", header.n, rows.len())));
    }
    Ok(Manifest { seed: header.seed, rows })
}

/// Generates `mix` into `out_dir`: images, manifest, and vocabulary.
///
/// Samples are ordered kind-major in mix order; sample ids are
/// `<kind>-<index>` with a per-kind index. Each sample uses the rng substream
/// keyed by (seed, global index), so any subset can be regenerated
/// independently and results are identical across thread counts.
pub fn build_dataset(
    world: &MapWorld,
    mix: &[(TaskKind, usize)],
    policy: &ViewPolicy,
    seed: u64,
    out_dir: &Path,
) -> Result<Manifest, TaskGenError> {
    let images_dir = out_dir.join("images");
    fs::create_dir_all(&images_dir).map_err(io_err(&images_dir))?;

    let mut specs: Vec<(TaskKind, usize, u64)> = Vec::new();
    for &(kind, count) in mix {
        for k in 0..count {
            specs.push((kind, k, specs.len() as u64));
        }
    }

    let samples: Vec<Sample> = specs
        .par_iter()
        .map(|&(kind, k, global)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix2(seed, global));
            let id = format!("{}-{:05}", kind.name(), k);
            make_sample_with_id(world, kind, policy, &mut rng, id)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::with_capacity(samples.len());
    for sample in &samples {
        let image = format!("images/{}.ppm", sample.id);
        let image_path = out_dir.join(&image);
        fs::write(&image_path, sample.raster.to_ppm()).map_err(io_err(&image_path))?;
        rows.push(ManifestRow {
            id: sample.id.clone(),
            kind: sample.kind,
            image,
            input_text: sample.input_text.clone(),
            target_text: sample.target_text.clone(),
            truth: sample.truth.clone(),
            split: split_of(&sample.id),
        });
    }

    let vocab = Vocab::from_corpus(
        rows.iter().flat_map(|r| [r.input_text.as_str(), r.target_text.as_str()]),
    );
    let vocab_path = out_dir.join("vocab.txt");
    vocab.save(&vocab_path).map_err(io_err(&vocab_path))?;

    save_manifest(&out_dir.join("manifest.jsonl"), seed, &rows)?;
    Ok(Manifest { seed, rows })
}
