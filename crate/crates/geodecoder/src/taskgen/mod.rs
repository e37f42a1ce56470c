//! Task sample generation: turns a [`MapWorld`](crate::worldgen::MapWorld)
//! into rendered image+text training samples.
//!
//! Every sample is produced by a rejection loop that only accepts instances a
//! symbolic oracle can re-derive from the world and the rendered raster, so
//! the dataset carries no unanswerable questions. Generation is deterministic:
//! each sample gets its own RNG substream keyed by (seed, sample index), so
//! datasets are reproducible byte for byte and insensitive to thread count.

mod factory;
mod manifest;
pub(crate) mod oracle;

pub use factory::{element_id_at, make_sample};
pub use manifest::{
    build_dataset, load_manifest, save_manifest, split_of, Manifest, ManifestRow, Split,
    MANIFEST_FORMAT,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoError, Viewport};
use crate::render::Raster;
use crate::textcodec::TextCodecError;
use crate::worldgen::{MapWorld, Poi, WorldGenError};

#[derive(Debug, Error)]
pub enum TaskGenError {
    #[error("world cannot support {kind:?} samples: {detail}")]
    MissingPrerequisite { kind: TaskKind, detail: String },
    #[error("no unambiguous {kind:?} sample found after {attempts} attempts")]
    Unsatisfiable { kind: TaskKind, attempts: usize },
    #[error("sample {id}: truth payload does not match kind {kind:?}")]
    TruthMismatch { id: String, kind: TaskKind },
    #[error("cannot re-derive the {kind:?} answer: {detail}")]
    OracleFailed { kind: TaskKind, detail: String },
    #[error("manifest {path}: {detail}")]
    BadManifest { path: String, detail: String },
    #[error("unsupported manifest format {0}")]
    UnsupportedFormat(u32),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    World(#[from] WorldGenError),
    #[error(transparent)]
    Text(#[from] TextCodecError),
}

/// The eleven task families. Serialized names double as sample-id prefixes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ElementId,
    TagId,
    PoiId,
    AoiId,
    RoadId,
    CoordGen,
    Geocoding,
    ReverseGeocoding,
    ParentChild,
    PoiCoordGen,
    ArrivalPoint,
}

impl TaskKind {
    pub const ALL: [TaskKind; 11] = [
        TaskKind::ElementId,
        TaskKind::TagId,
        TaskKind::PoiId,
        TaskKind::AoiId,
        TaskKind::RoadId,
        TaskKind::CoordGen,
        TaskKind::Geocoding,
        TaskKind::ReverseGeocoding,
        TaskKind::ParentChild,
        TaskKind::PoiCoordGen,
        TaskKind::ArrivalPoint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::ElementId => "element_id",
            TaskKind::TagId => "tag_id",
            TaskKind::PoiId => "poi_id",
            TaskKind::AoiId => "aoi_id",
            TaskKind::RoadId => "road_id",
            TaskKind::CoordGen => "coord_gen",
            TaskKind::Geocoding => "geocoding",
            TaskKind::ReverseGeocoding => "reverse_geocoding",
            TaskKind::ParentChild => "parent_child",
            TaskKind::PoiCoordGen => "poi_coord_gen",
            TaskKind::ArrivalPoint => "arrival_point",
        }
    }
}

/// Ground truth retained beside the text target so evaluation never has to
/// re-parse the world. Pixel-space truths embed the viewport because scoring
/// needs to map predicted pixels back to geo coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Truth {
    /// Closed-class or free-text answer compared by exact match.
    Label { value: String },
    /// Geographic coordinate; text target is `format_coord` of it.
    Coord { lng: f64, lat: f64 },
    /// Canvas pixel plus the geo point it denotes.
    Pixel { x: i64, y: i64, lng: f64, lat: f64, view: Viewport },
    /// Arrival pixel plus the road the arrival must lie on.
    Arrival { x: i64, y: i64, lng: f64, lat: f64, road: u32, view: Viewport },
}

/// Viewport/rendering policy shared by all factories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewPolicy {
    /// Square canvas edge in pixels.
    pub image_px: u32,
    /// Scale for identification and coordinate tasks (wide context).
    pub scale_coarse: u8,
    /// Scale for display-point and arrival tasks (street level).
    pub scale_fine: u8,
    /// Anchor jitter as a fraction of the canvas span; keeps the subject
    /// away from the border while varying its on-screen position.
    pub center_jitter_frac: f64,
    /// Draw the reported-location heatmap on arrival samples.
    pub arrival_heatmap: bool,
    /// Rejection budget per sample before giving up.
    pub max_attempts: usize,
}

impl Default for ViewPolicy {
    fn default() -> Self {
        ViewPolicy {
            image_px: 96,
            scale_coarse: 11,
            scale_fine: 15,
            center_jitter_frac: 0.3,
            arrival_heatmap: true,
            max_attempts: 64,
        }
    }
}

/// One generated training instance.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub kind: TaskKind,
    pub raster: Raster,
    pub input_text: String,
    pub target_text: String,
    pub truth: Truth,
    pub viewport: Viewport,
}

/// Production mix: per-kind counts for a 20k-sample dataset, scaled from the
/// full corpus proportions by largest remainder so the total is exact.
pub fn default_mix() -> Vec<(TaskKind, usize)> {
    vec![
        (TaskKind::ElementId, 267),
        (TaskKind::TagId, 447),
        (TaskKind::PoiId, 5161),
        (TaskKind::AoiId, 4163),
        (TaskKind::RoadId, 603),
        (TaskKind::CoordGen, 1194),
        (TaskKind::Geocoding, 4687),
        (TaskKind::ReverseGeocoding, 3478),
    ]
}

/// Total sample count of [`default_mix`].
pub const DEFAULT_MIX_TOTAL: usize = 20_000;

/// Answer set of the relation task, indexed as no-relation / first-parent /
/// second-parent.
pub const RELATION_LABELS: [&str; 3] = ["no relation", "first is parent", "second is parent"];

/// Checks that a truth payload matches its task kind and returns it.
/// Catches manifest rows whose kind and truth were edited out of sync.
pub fn truth_of(kind: TaskKind, id: &str, truth: &Truth) -> Result<Truth, TaskGenError> {
    let ok = match kind {
        TaskKind::ElementId
        | TaskKind::TagId
        | TaskKind::PoiId
        | TaskKind::AoiId
        | TaskKind::RoadId
        | TaskKind::ReverseGeocoding
        | TaskKind::ParentChild => matches!(truth, Truth::Label { .. }),
        TaskKind::CoordGen | TaskKind::Geocoding => matches!(truth, Truth::Coord { .. }),
        TaskKind::PoiCoordGen => matches!(truth, Truth::Pixel { .. }),
        TaskKind::ArrivalPoint => matches!(truth, Truth::Arrival { .. }),
    };
    if ok {
        Ok(truth.clone())
    } else {
        Err(TaskGenError::TruthMismatch { id: id.to_string(), kind })
    }
}

/// Harmonic number H(n), the Zipf(1) normalizer.
pub fn zipf_harmonic(n: usize) -> f64 {
    (1..=n).map(|r| 1.0 / r as f64).sum()
}

/// Draws a POI with probability proportional to 1/popularity_rank.
pub fn sample_poi_by_popularity<'w>(
    world: &'w MapWorld,
    rng: &mut impl rand::Rng,
) -> Result<&'w Poi, TaskGenError> {
    let n = world.pois.len();
    if n == 0 {
        return Err(TaskGenError::MissingPrerequisite {
            kind: TaskKind::PoiId,
            detail: "world has no POIs".into(),
        });
    }
    let mut u = rng.gen::<f64>() * zipf_harmonic(n);
    let mut rank = n as u32;
    for r in 1..=n {
        u -= 1.0 / r as f64;
        if u <= 0.0 {
            rank = r as u32;
            break;
        }
    }
    // popularity_rank is a permutation of 1..=n, so exactly one POI matches.
    world
        .pois
        .iter()
        .find(|p| p.popularity_rank == rank)
        .ok_or_else(|| TaskGenError::MissingPrerequisite {
            kind: TaskKind::PoiId,
            detail: format!("no POI with popularity rank {rank}"),
        })
}

/// Uniform POI draw, for kinds where popularity skew is not wanted.
pub(crate) fn uniform_poi<'w>(
    world: &'w MapWorld,
    rng: &mut impl rand::Rng,
    kind: TaskKind,
) -> Result<&'w Poi, TaskGenError> {
    if world.pois.is_empty() {
        return Err(TaskGenError::MissingPrerequisite {
            kind,
            detail: "world has no POIs".into(),
        });
    }
    Ok(&world.pois[rng.gen_range(0..world.pois.len())])
}

pub(crate) fn in_canvas(policy: &ViewPolicy, x: f64, y: f64, margin: f64) -> bool {
    let hi = policy.image_px as f64 - margin;
    x >= margin && x < hi && y >= margin && y < hi
}

pub(crate) use crate::stablehash::{fnv1a64, mix2};

#[cfg(test)]
mod tests;

/// Shared test fixture: small world, generated once per test binary.
#[cfg(test)]
pub(crate) fn test_world() -> &'static MapWorld {
    use std::sync::OnceLock;
    static WORLD: OnceLock<MapWorld> = OnceLock::new();
    WORLD.get_or_init(|| {
        crate::worldgen::generate_world(&crate::worldgen::WorldConfig::tiny(), 11).unwrap()
    })
}
