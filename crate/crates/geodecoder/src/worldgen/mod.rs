//! Deterministic synthetic city worlds.
//!
//! A world is a perturbed grid of named roads, road-bounded areas (water,
//! green space, and categorized AOIs), and POIs addressed along their nearest
//! street. Everything derives from a single seed through ChaCha8, so equal
//! seeds give byte-identical worlds.

mod names;
mod query;

pub use query::{
    aoi_at, element_at, nearest_on_polyline, nearest_road, point_at_arc, point_in_ring,
    polyline_length_m, ELEMENT_CLASSES,
};
use query::point_and_dir_at_arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{local_meters, offset_meters, GeoPoint};

pub const WORLD_FORMAT: u32 = 1;

/// Distance in meters between consecutive address numbers along a street.
pub const ADDRESS_STEP_M: f64 = 10.0;
/// Half-widths of road corridors in meters, used when classifying points.
pub const MAJOR_ROAD_HALF_WIDTH_M: f64 = 10.0;
pub const MINOR_ROAD_HALF_WIDTH_M: f64 = 6.0;

#[derive(Debug, Error)]
pub enum WorldGenError {
    #[error("extent of {0} km cannot fit the requested {1} areas; grow the extent or shrink counts")]
    NotEnoughCells(f64, usize),
    #[error("could not place poi {0} after bounded retries")]
    PoiPlacement(usize),
    #[error("world format {0} unsupported (expected {WORLD_FORMAT})")]
    UnsupportedFormat(u32),
    #[error("address does not match '<city> <district> <street> <number>号 [unit]': {0}")]
    BadAddress(String),
    #[error("address refers to unknown street {0}")]
    UnknownStreet(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadClass {
    Major,
    Minor,
}

/// Area-of-interest category; doubles as a map element class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AoiKind {
    Residential,
    Campus,
    Park,
    Mall,
    OfficeArea,
}

impl AoiKind {
    pub const ALL: [AoiKind; 5] =
        [AoiKind::Residential, AoiKind::Campus, AoiKind::Park, AoiKind::Mall, AoiKind::OfficeArea];

    /// Human-readable element class name, as used in task answers.
    pub fn class_name(self) -> &'static str {
        match self {
            AoiKind::Residential => "residential area",
            AoiKind::Campus => "campus",
            AoiKind::Park => "park",
            AoiKind::Mall => "mall",
            AoiKind::OfficeArea => "office area",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Road {
    pub id: u32,
    pub name: String,
    pub class: RoadClass,
    pub points: Vec<GeoPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aoi {
    pub id: u32,
    pub name: String,
    pub kind: AoiKind,
    /// Closed ring, counterclockwise, first point not repeated.
    pub ring: Vec<GeoPoint>,
    /// Containing AOI for nested areas.
    pub parent: Option<u32>,
}

impl Aoi {
    pub fn centroid(&self) -> GeoPoint {
        let n = self.ring.len() as f64;
        let lng = self.ring.iter().map(|p| p.lng).sum::<f64>() / n;
        let lat = self.ring.iter().map(|p| p.lat).sum::<f64>() / n;
        GeoPoint { lng, lat }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub id: u32,
    pub name: String,
    pub category: String,
    pub at: GeoPoint,
    pub address: String,
    /// 1 = most popular; a permutation over all POIs.
    pub popularity_rank: u32,
    /// AOI this POI belongs to, for named children like gates and buildings.
    pub parent: Option<u32>,
    /// Road the address is anchored on.
    pub road: u32,
}

/// Unnamed landcover area (water or green space).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub ring: Vec<GeoPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: GeoPoint,
    pub max: GeoPoint,
}

impl Rect {
    pub fn contains(&self, p: GeoPoint) -> bool {
        p.lng >= self.min.lng && p.lng <= self.max.lng && p.lat >= self.min.lat && p.lat <= self.max.lat
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint { lng: (self.min.lng + self.max.lng) / 2.0, lat: (self.min.lat + self.max.lat) / 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct District {
    pub name: String,
    pub bounds: Rect,
    pub streets: Vec<String>,
}

/// City -> district -> street hierarchy with geometry bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistrictTree {
    pub city: String,
    pub bounds: Rect,
    pub districts: Vec<District>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapWorld {
    pub world_format: u32,
    pub seed: u64,
    pub roads: Vec<Road>,
    pub aois: Vec<Aoi>,
    pub pois: Vec<Poi>,
    pub water: Vec<Area>,
    pub green: Vec<Area>,
    pub districts: DistrictTree,
}

impl MapWorld {
    pub fn to_json(&self) -> Result<String, WorldGenError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, WorldGenError> {
        let world: MapWorld = serde_json::from_str(s)?;
        if world.world_format != WORLD_FORMAT {
            return Err(WorldGenError::UnsupportedFormat(world.world_format));
        }
        Ok(world)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), WorldGenError> {
        Ok(std::fs::write(path, self.to_json()?)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, WorldGenError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn road(&self, id: u32) -> &Road {
        &self.roads[id as usize]
    }

    pub fn aoi(&self, id: u32) -> &Aoi {
        &self.aois[id as usize]
    }

    pub fn find_road(&self, name: &str) -> Option<&Road> {
        self.roads.iter().find(|r| r.name == name)
    }

    pub fn bounds(&self) -> Rect {
        self.districts.bounds
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub center_lng: f64,
    pub center_lat: f64,
    pub extent_km: f64,
    pub road_spacing_min_m: f64,
    pub road_spacing_max_m: f64,
    pub n_aois: usize,
    pub n_child_aois: usize,
    pub n_pois: usize,
    pub water_cells: usize,
    pub green_cells: usize,
    /// Fraction of POIs generated as named children of an AOI.
    pub parent_fraction: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            center_lng: 116.4,
            center_lat: 39.9,
            extent_km: 12.0,
            road_spacing_min_m: 400.0,
            road_spacing_max_m: 800.0,
            n_aois: 140,
            n_child_aois: 8,
            n_pois: 600,
            water_cells: 2,
            green_cells: 6,
            parent_fraction: 0.3,
        }
    }
}

impl WorldConfig {
    pub fn center(&self) -> GeoPoint {
        GeoPoint { lng: self.center_lng, lat: self.center_lat }
    }

    /// Small world for tests: one district row of cells, a handful of POIs.
    pub fn tiny() -> Self {
        WorldConfig {
            extent_km: 4.0,
            n_aois: 12,
            n_child_aois: 2,
            n_pois: 60,
            water_cells: 1,
            green_cells: 2,
            ..WorldConfig::default()
        }
    }
}

/// Meter-space coordinates relative to the world center, east/north.
type M2 = (f64, f64);

/// Side of a rectangular cell, in grid terms.
#[derive(Clone, Copy, PartialEq)]
enum Side {
    West,
    East,
    South,
    North,
}

struct Cell {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    /// Road index bounding each side: [west, east, south, north].
    bounding: [usize; 4],
}

/// Inset from a road centerline to the AOI edge facing it, in meters.
const AOI_INSET_MIN_M: f64 = 20.0;
const AOI_INSET_MAX_M: f64 = 24.0;
/// POI offsets from the addressing road centerline.
const FREE_POI_OFFSET_M: (f64, f64) = (15.0, 45.0);
const CHILD_POI_OFFSET_M: (f64, f64) = (38.0, 45.0);
/// Minimum clearance between any POI and any road.
const POI_ROAD_CLEARANCE_M: f64 = 12.0;

pub fn generate_world(cfg: &WorldConfig, seed: u64) -> Result<MapWorld, WorldGenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = cfg.center();
    let half = cfg.extent_km * 1000.0 / 2.0;

    // Road grid: one set of north-south lines, one east-west, with vertex
    // jitter so streets are not perfectly straight.
    let xs = axis_positions(&mut rng, half, cfg.road_spacing_min_m, cfg.road_spacing_max_m);
    let ys = axis_positions(&mut rng, half, cfg.road_spacing_min_m, cfg.road_spacing_max_m);
    let mut roads_m: Vec<Vec<M2>> = Vec::new();
    for &x in &xs {
        roads_m.push(jittered_line(&mut rng, x, half, true));
    }
    for &y in &ys {
        roads_m.push(jittered_line(&mut rng, y, half, false));
    }

    let mut name_gen = names::NameGen::new();
    let mut roads: Vec<Road> = Vec::new();
    for (i, pts) in roads_m.iter().enumerate() {
        let class = if i % 3 == 0 { RoadClass::Major } else { RoadClass::Minor };
        roads.push(Road {
            id: i as u32,
            name: name_gen.street(i),
            class,
            points: pts.iter().map(|&(e, n)| offset_meters(center, e, n)).collect(),
        });
    }

    // Interior cells, each bounded by four roads.
    let mut cells: Vec<Cell> = Vec::new();
    for i in 0..xs.len().saturating_sub(1) {
        for j in 0..ys.len().saturating_sub(1) {
            cells.push(Cell {
                x0: xs[i],
                x1: xs[i + 1],
                y0: ys[j],
                y1: ys[j + 1],
                bounding: [i, i + 1, xs.len() + j, xs.len() + j + 1],
            });
        }
    }
    let needed = cfg.n_aois + cfg.water_cells + cfg.green_cells;
    if cells.len() < needed {
        return Err(WorldGenError::NotEnoughCells(cfg.extent_km, needed));
    }
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.shuffle(&mut rng);

    let mut water = Vec::new();
    let mut green = Vec::new();
    for k in 0..cfg.water_cells {
        water.push(Area { ring: landcover_ring(&mut rng, &cells[order[k]], 50.0, center) });
    }
    for k in 0..cfg.green_cells {
        let cell = &cells[order[cfg.water_cells + k]];
        green.push(Area { ring: landcover_ring(&mut rng, cell, 45.0, center) });
    }

    // Top-level AOIs: inset rectangles inside their cell, kinds round-robin.
    let mut aois: Vec<Aoi> = Vec::new();
    let aoi_cells_base = cfg.water_cells + cfg.green_cells;
    for k in 0..cfg.n_aois {
        let cell = &cells[order[aoi_cells_base + k]];
        let kind = AoiKind::ALL[k % AoiKind::ALL.len()];
        let insets = [
            rng.gen_range(AOI_INSET_MIN_M..AOI_INSET_MAX_M),
            rng.gen_range(AOI_INSET_MIN_M..AOI_INSET_MAX_M),
            rng.gen_range(AOI_INSET_MIN_M..AOI_INSET_MAX_M),
            rng.gen_range(AOI_INSET_MIN_M..AOI_INSET_MAX_M),
        ];
        let (x0, x1) = (cell.x0 + insets[0], cell.x1 - insets[1]);
        let (y0, y1) = (cell.y0 + insets[2], cell.y1 - insets[3]);
        let ring = vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)];
        aois.push(Aoi {
            id: k as u32,
            name: name_gen.aoi(&mut rng, kind),
            kind,
            ring: ring.into_iter().map(|(e, n)| offset_meters(center, e, n)).collect(),
            parent: None,
        });
    }

    // Nested AOIs: a corner sub-rectangle of a large parent.
    let n_top = aois.len();
    for k in 0..cfg.n_child_aois {
        let parent_idx = rng.gen_range(0..n_top);
        let parent = &aois[parent_idx];
        let pm: Vec<M2> = parent.ring.iter().map(|&p| local_meters(center, p)).collect();
        let (px0, py0) = pm[0];
        let (px1, py1) = pm[2];
        let margin = 15.0;
        let w = (px1 - px0 - 2.0 * margin) * 0.4;
        let h = (py1 - py0 - 2.0 * margin) * 0.4;
        if w < 30.0 || h < 30.0 {
            continue;
        }
        let corner = rng.gen_range(0..4u8);
        let (cx0, cy0) = match corner {
            0 => (px0 + margin, py0 + margin),
            1 => (px1 - margin - w, py0 + margin),
            2 => (px1 - margin - w, py1 - margin - h),
            _ => (px0 + margin, py1 - margin - h),
        };
        let ring = vec![(cx0, cy0), (cx0 + w, cy0), (cx0 + w, cy0 + h), (cx0, cy0 + h)];
        let kind = parent.kind;
        let name = name_gen.child(&mut rng, &parent.name);
        let parent_id = parent.id;
        aois.push(Aoi {
            id: (n_top + k) as u32,
            name,
            kind,
            ring: ring.into_iter().map(|(e, n)| offset_meters(center, e, n)).collect(),
            parent: Some(parent_id),
        });
    }

    // Districts: a 2x2 split of the extent, named, with their street lists.
    let districts = build_districts(center, half, &roads, &mut name_gen);

    // POIs: children attached to AOI edges, the rest free along roads.
    let n_children = (cfg.parent_fraction * cfg.n_pois as f64).round() as usize;
    let mut pois: Vec<Poi> = Vec::new();
    for k in 0..cfg.n_pois {
        let poi = if k < n_children {
            place_child_poi(&mut rng, k, cfg, center, &cells, &order[aoi_cells_base..aoi_cells_base + n_top], &aois, &roads, &water, &districts, &mut name_gen)?
        } else {
            place_free_poi(&mut rng, k, center, half, &roads, &water, &districts, &mut name_gen)?
        };
        pois.push(poi);
    }

    // Popularity is a permutation: rank 1 is the single most popular POI.
    let mut ranks: Vec<u32> = (1..=cfg.n_pois as u32).collect();
    ranks.shuffle(&mut rng);
    for (poi, rank) in pois.iter_mut().zip(ranks) {
        poi.popularity_rank = rank;
    }

    Ok(MapWorld {
        world_format: WORLD_FORMAT,
        seed,
        roads,
        aois,
        pois,
        water,
        green,
        districts,
    })
}

fn axis_positions(rng: &mut ChaCha8Rng, half: f64, min_gap: f64, max_gap: f64) -> Vec<f64> {
    let mut positions = Vec::new();
    let mut pos = -half;
    loop {
        pos += rng.gen_range(min_gap..max_gap);
        if pos > half - min_gap / 2.0 {
            break;
        }
        positions.push(pos);
    }
    positions
}

fn jittered_line(rng: &mut ChaCha8Rng, at: f64, half: f64, vertical: bool) -> Vec<M2> {
    let step = 1500.0;
    let mut pts = Vec::new();
    let mut t = -half;
    loop {
        let jitter = rng.gen_range(-6.0..6.0);
        let p = if vertical { (at + jitter, t) } else { (t, at + jitter) };
        pts.push(p);
        if t >= half {
            break;
        }
        t = (t + step).min(half);
    }
    pts
}

fn landcover_ring(rng: &mut ChaCha8Rng, cell: &Cell, inset: f64, center: GeoPoint) -> Vec<GeoPoint> {
    // Octagon: an inset rectangle with chamfered corners.
    let (x0, x1) = (cell.x0 + inset, cell.x1 - inset);
    let (y0, y1) = (cell.y0 + inset, cell.y1 - inset);
    let c = rng.gen_range(30.0..80.0f64).min((x1 - x0) / 3.0).min((y1 - y0) / 3.0);
    let pts = vec![
        (x0 + c, y0),
        (x1 - c, y0),
        (x1, y0 + c),
        (x1, y1 - c),
        (x1 - c, y1),
        (x0 + c, y1),
        (x0, y1 - c),
        (x0, y0 + c),
    ];
    pts.into_iter().map(|(e, n)| offset_meters(center, e, n)).collect()
}

fn build_districts(center: GeoPoint, half: f64, roads: &[Road], names: &mut names::NameGen) -> DistrictTree {
    let bounds = Rect {
        min: offset_meters(center, -half, -half),
        max: offset_meters(center, half, half),
    };
    let mut districts = Vec::new();
    for dy in 0..2 {
        for dx in 0..2 {
            let min = offset_meters(center, -half + dx as f64 * half, -half + dy as f64 * half);
            let max = offset_meters(center, dx as f64 * half, dy as f64 * half);
            let rect = Rect { min, max };
            let streets = roads
                .iter()
                .filter(|r| r.points.iter().any(|&p| rect.contains(p)))
                .map(|r| r.name.clone())
                .collect();
            districts.push(District { name: names.district(dy * 2 + dx), bounds: rect, streets });
        }
    }
    DistrictTree { city: names.city(), bounds, districts }
}

/// Road-anchored placement: a point `offset` meters to one side of the
/// polyline at arc position `along`, plus the address derived from them.
fn road_anchor(road: &Road, along: f64, offset: f64, left: bool) -> GeoPoint {
    let (p, dir) = point_and_dir_at_arc(&road.points, along);
    // Unit normal, left of travel direction.
    let (nx, ny) = if left { (-dir.1, dir.0) } else { (dir.1, -dir.0) };
    offset_meters(p, nx * offset, ny * offset)
}

#[allow(clippy::too_many_arguments)]
fn place_child_poi(
    rng: &mut ChaCha8Rng,
    idx: usize,
    _cfg: &WorldConfig,
    center: GeoPoint,
    cells: &[Cell],
    aoi_cell_order: &[usize],
    aois: &[Aoi],
    roads: &[Road],
    water: &[Area],
    districts: &DistrictTree,
    names: &mut names::NameGen,
) -> Result<Poi, WorldGenError> {
    for _attempt in 0..100 {
        let a = rng.gen_range(0..aoi_cell_order.len());
        let aoi = &aois[a];
        let cell = &cells[aoi_cell_order[a]];
        let side = match rng.gen_range(0..4u8) {
            0 => Side::West,
            1 => Side::East,
            2 => Side::South,
            _ => Side::North,
        };
        let road_idx = match side {
            Side::West => cell.bounding[0],
            Side::East => cell.bounding[1],
            Side::South => cell.bounding[2],
            Side::North => cell.bounding[3],
        };
        let road = &roads[road_idx];
        // Arc range of the cell edge along the road, shrunk at the corners.
        let (lo, hi) = edge_arc_range(road, cell, side, center);
        if hi - lo < 40.0 {
            continue;
        }
        let along = rng.gen_range(lo + 20.0..hi - 20.0);
        let offset = rng.gen_range(CHILD_POI_OFFSET_M.0..CHILD_POI_OFFSET_M.1);
        // The cell interior is on the left of the edge road iff the road runs
        // with the cell on its left; resolve by trying both normals.
        let candidates = [road_anchor(road, along, offset, true), road_anchor(road, along, offset, false)];
        for at in candidates {
            if point_in_ring(&aoi.ring, at)
                && !water.iter().any(|wa| point_in_ring(&wa.ring, at))
                && road_clearance_ok(roads, at, road_idx)
            {
                let (name, category) = names.poi_child(rng, &aoi.name);
                let address = compose_address(districts, road, along, at, Some(&aoi.name));
                return Ok(Poi {
                    id: idx as u32,
                    name,
                    category,
                    at,
                    address,
                    popularity_rank: 0,
                    parent: Some(aoi.id),
                    road: road.id as u32,
                });
            }
        }
    }
    Err(WorldGenError::PoiPlacement(idx))
}

fn place_free_poi(
    rng: &mut ChaCha8Rng,
    idx: usize,
    _center: GeoPoint,
    _half: f64,
    roads: &[Road],
    water: &[Area],
    districts: &DistrictTree,
    names: &mut names::NameGen,
) -> Result<Poi, WorldGenError> {
    for _attempt in 0..100 {
        let road_idx = rng.gen_range(0..roads.len());
        let road = &roads[road_idx];
        let len = polyline_length_m(&road.points);
        if len < 100.0 {
            continue;
        }
        let along = rng.gen_range(40.0..len - 40.0);
        let offset = rng.gen_range(FREE_POI_OFFSET_M.0..FREE_POI_OFFSET_M.1);
        let left = rng.gen_bool(0.5);
        let at = road_anchor(road, along, offset, left);
        if water.iter().any(|wa| point_in_ring(&wa.ring, at)) {
            continue;
        }
        if !road_clearance_ok(roads, at, road_idx) {
            continue;
        }
        if !districts.bounds.contains(at) {
            continue;
        }
        let (name, category) = names.poi_free(rng);
        let address = compose_address(districts, road, along, at, None);
        return Ok(Poi {
            id: idx as u32,
            name,
            category,
            at,
            address,
            popularity_rank: 0,
            parent: None,
            road: road.id as u32,
        });
    }
    Err(WorldGenError::PoiPlacement(idx))
}

/// True when `at` keeps clearance from every road except its own anchor.
fn road_clearance_ok(roads: &[Road], at: GeoPoint, own: usize) -> bool {
    roads.iter().enumerate().all(|(i, r)| {
        i == own || nearest_on_polyline(&r.points, at).1 >= POI_ROAD_CLEARANCE_M
    })
}

/// Arc range (meters along `road`) spanned by one side of `cell`.
fn edge_arc_range(road: &Road, cell: &Cell, side: Side, center: GeoPoint) -> (f64, f64) {
    let (a, b) = match side {
        Side::West | Side::East => ((0.0, cell.y0), (0.0, cell.y1)),
        Side::South | Side::North => ((cell.x0, 0.0), (cell.x1, 0.0)),
    };
    let pa = match side {
        Side::West => offset_meters(center, cell.x0, a.1),
        Side::East => offset_meters(center, cell.x1, a.1),
        Side::South => offset_meters(center, a.0, cell.y0),
        Side::North => offset_meters(center, a.0, cell.y1),
    };
    let pb = match side {
        Side::West => offset_meters(center, cell.x0, b.1),
        Side::East => offset_meters(center, cell.x1, b.1),
        Side::South => offset_meters(center, b.0, cell.y0),
        Side::North => offset_meters(center, b.0, cell.y1),
    };
    let sa = nearest_on_polyline(&road.points, pa).2;
    let sb = nearest_on_polyline(&road.points, pb).2;
    (sa.min(sb), sa.max(sb))
}

fn compose_address(
    districts: &DistrictTree,
    road: &Road,
    along: f64,
    at: GeoPoint,
    unit: Option<&str>,
) -> String {
    let number = (along / ADDRESS_STEP_M).round() as u64 + 1;
    let district = districts
        .districts
        .iter()
        .find(|d| d.bounds.contains(at))
        .map(|d| d.name.as_str())
        .unwrap_or_else(|| districts.districts[0].name.as_str());
    match unit {
        Some(u) => format!("{} {} {} {}号 {}", districts.city, district, road.name, number, u),
        None => format!("{} {} {} {}号", districts.city, district, road.name, number),
    }
}

/// Parsed form of `<city> <district> <street> <number>号 [unit]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAddress {
    pub city: String,
    pub district: String,
    pub street: String,
    pub number: u64,
    pub unit: Option<String>,
}

pub fn parse_address(addr: &str) -> Result<ParsedAddress, WorldGenError> {
    let tokens: Vec<&str> = addr.split(' ').filter(|t| !t.is_empty()).collect();
    if tokens.len() < 4 {
        return Err(WorldGenError::BadAddress(addr.to_string()));
    }
    let num_pos = tokens
        .iter()
        .position(|t| t.ends_with('号') && t.trim_end_matches('号').chars().all(|c| c.is_ascii_digit()) && t.len() > "号".len())
        .ok_or_else(|| WorldGenError::BadAddress(addr.to_string()))?;
    if num_pos < 3 {
        return Err(WorldGenError::BadAddress(addr.to_string()));
    }
    let number: u64 = tokens[num_pos]
        .trim_end_matches('号')
        .parse()
        .map_err(|_| WorldGenError::BadAddress(addr.to_string()))?;
    let unit = if num_pos + 1 < tokens.len() {
        Some(tokens[num_pos + 1..].join(" "))
    } else {
        None
    };
    Ok(ParsedAddress {
        city: tokens[0].to_string(),
        district: tokens[1].to_string(),
        street: tokens[2..num_pos].join(" "),
        number,
        unit,
    })
}

/// Street-and-number anchor of an address: the point `(number-1) * 10` meters
/// along the named road.
pub fn resolve_address(world: &MapWorld, addr: &ParsedAddress) -> Result<GeoPoint, WorldGenError> {
    let road = world
        .find_road(&addr.street)
        .ok_or_else(|| WorldGenError::UnknownStreet(addr.street.clone()))?;
    let s = (addr.number.saturating_sub(1)) as f64 * ADDRESS_STEP_M;
    Ok(point_at_arc(&road.points, s))
}
