//! Per-kind sample factories.
//!
//! Every factory follows the same shape: draw an instance, render it, then
//! accept only if the answerability oracle re-derives the stored target from
//! the world plus the raster. Rejected draws retry up to the policy budget,
//! so emitted samples are unambiguous by construction.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geo::{
    local_meters, meters_per_pixel, offset_meters, project, unproject, GeoPoint, Viewport,
};
use crate::render::{
    render, render_base, Colormap, HeatPoint, Overlay, Style, CHANNEL_CAMERA, CHANNEL_USER,
    CHANNEL_WAYBILL, CHANNEL_WIFI, DISTRICT_OUTLINE, HIGHLIGHT_BLUE_FILL, HIGHLIGHT_BLUE_OUTLINE,
    HIGHLIGHT_ORANGE, MARKER_GREEN, MARKER_RED, TAGS,
};
use crate::textcodec::{format_coord, format_pixel, parse_coord, round_half_up};
use crate::worldgen::{
    aoi_at, element_at, nearest_on_polyline, nearest_road, point_at_arc, point_in_ring,
    polyline_length_m, Aoi, MapWorld, Poi, Rect,
};

use super::{
    in_canvas, oracle, sample_poi_by_popularity, uniform_poi, Sample, TaskGenError, TaskKind,
    Truth, ViewPolicy, RELATION_LABELS,
};

/// Marker dot radius for point tasks.
const DOT_RADIUS_PX: f64 = 3.0;
/// Channel-report dot radius; smaller so clustered reports stay separable.
const CHANNEL_RADIUS_PX: f64 = 2.5;
/// Camera fixes land this far from the true spot, toward the area edge.
const CAMERA_OFFSET_M: f64 = 15.0;
/// Waybill fixes scatter this far in a random direction.
const WAYBILL_OFFSET_M: f64 = 80.0;
/// User-report fixes scatter this far in a random direction.
const USER_OFFSET_M: f64 = 40.0;
/// Wifi fixes scatter this far in a random direction.
const WIFI_OFFSET_M: f64 = 10.0;
/// Arrival-heatmap spread and composition.
const HEAT_POINTS: usize = 30;
const HEAT_SIGMA_M: f64 = 25.0;
const HEAT_OUTLIER_FRAC: f64 = 0.2;

/// Builds one sample of `kind`. All randomness comes from `rng`, so equal
/// (world, kind, policy, rng state) inputs yield identical samples.
pub fn make_sample(
    world: &MapWorld,
    kind: TaskKind,
    policy: &ViewPolicy,
    rng: &mut ChaCha8Rng,
) -> Result<Sample, TaskGenError> {
    make_sample_with_id(world, kind, policy, rng, format!("{}-adhoc", kind.name()))
}

/// Same as [`make_sample`] but with a caller-chosen id. The id is never fed
/// into the rng, so renaming a sample cannot change its content.
pub(crate) fn make_sample_with_id(
    world: &MapWorld,
    kind: TaskKind,
    policy: &ViewPolicy,
    rng: &mut ChaCha8Rng,
    id: String,
) -> Result<Sample, TaskGenError> {
    match kind {
        TaskKind::ElementId => element_id(world, policy, rng, id),
        TaskKind::TagId => tag_id(world, policy, rng, id),
        TaskKind::PoiId => poi_id(world, policy, rng, id),
        TaskKind::AoiId => aoi_id(world, policy, rng, id),
        TaskKind::RoadId => road_id(world, policy, rng, id),
        TaskKind::CoordGen => coord_gen(world, policy, rng, id),
        TaskKind::Geocoding => geocoding(world, policy, rng, id),
        TaskKind::ReverseGeocoding => reverse_geocoding(world, policy, rng, id),
        TaskKind::ParentChild => parent_child(world, policy, rng, id),
        TaskKind::PoiCoordGen => poi_coord_gen(world, policy, rng, id),
        TaskKind::ArrivalPoint => arrival_point(world, policy, rng, id),
    }
}

/// Viewport at `scale` whose jittered center keeps `anchor` inside the
/// central region of the canvas.
fn anchored_viewport(
    anchor: GeoPoint,
    scale: u8,
    policy: &ViewPolicy,
    rng: &mut ChaCha8Rng,
) -> Result<Viewport, TaskGenError> {
    let span_m = meters_per_pixel(scale)? * policy.image_px as f64;
    let r = 0.5 * policy.center_jitter_frac * span_m;
    let east = rng.gen_range(-r..=r);
    let north = rng.gen_range(-r..=r);
    Ok(Viewport::new(offset_meters(anchor, east, north), scale, policy.image_px, policy.image_px)?)
}

fn random_point_in(rect: &Rect, rng: &mut ChaCha8Rng) -> GeoPoint {
    GeoPoint {
        lng: rect.min.lng + rng.gen::<f64>() * (rect.max.lng - rect.min.lng),
        lat: rect.min.lat + rng.gen::<f64>() * (rect.max.lat - rect.min.lat),
    }
}

fn gave_up(kind: TaskKind, policy: &ViewPolicy) -> TaskGenError {
    TaskGenError::Unsatisfiable { kind, attempts: policy.max_attempts }
}

/// Accepts a candidate only when the oracle maps raster+world back to the
/// target text.
fn oracle_accepts(world: &MapWorld, sample: &Sample) -> bool {
    matches!(oracle::rederive_label(world, sample), Ok(ref t) if *t == sample.target_text)
}

// --- element identification ---

fn element_id(
    world: &MapWorld,
    policy: &ViewPolicy,
    rng: &mut ChaCha8Rng,
    id: String,
) -> Result<Sample, TaskGenError> {
    let bounds = world.bounds();
    for _ in 0..policy.max_attempts {
        let anchor = random_point_in(&bounds, rng);
        let vp = anchored_viewport(anchor, policy.scale_coarse, policy, rng)?;
        let px = rng.gen_range(4..policy.image_px - 4);
        let py = rng.gen_range(4..policy.image_px - 4);
        let p = unproject(&vp, px as f64 + 0.5, py as f64 + 0.5);
        if let Some(sample) = try_element_sample(world, policy, p, vp, &id) {
            return Ok(sample);
        }
    }
    Err(gave_up(TaskKind::ElementId, policy))
}

/// ElementId sample whose dot sits at a caller-chosen point; used to build
/// class-balanced datasets. Fails if the point never lands cleanly on canvas.
pub fn element_id_at(
    world: &MapWorld,
    at: GeoPoint,
    policy: &ViewPolicy,
    rng: &mut ChaCha8Rng,
) -> Result<Sample, TaskGenError> {
    for _ in 0..policy.max_attempts {
        let vp = anchored_viewport(at, policy.scale_coarse, policy, rng)?;
        let id = format!("{}-adhoc", TaskKind::ElementId.name());
        if let Some(sample) = try_element_sample(world, policy, at, vp, &id) {
            return Ok(sample);
        }
    }
    Err(gave_up(TaskKind::ElementId, policy))
}

/// One ElementId candidate: accept only when the pixel under the dot depicts
/// exactly the class the world reports there, and the oracle agrees.
fn try_element_sample(
    world: &MapWorld,
    policy: &ViewPolicy,
    p: GeoPoint,
    vp: Viewport,
    id: &str,
) -> Option<Sample> {
    let style = Style::default();
    let (x, y) = project(&vp, p);
    if !in_canvas(policy, x, y, 4.0) {
        return None;
    }
    let want = element_at(world, p);
    let base = render_base(world, &vp, &style);
    if style.classify(base.get(x as u32, y as u32)) != Some(want) {
        return None;
    }
    let raster =
        render(world, &vp, &style, &[Overlay::Dot { at: p, color: MARKER_RED, radius_px: DOT_RADIUS_PX }]);
    let sample = Sample {
        id: id.to_string(),
        kind: TaskKind::ElementId,
        raster,
        input_text: "what is at the red dot?".to_string(),
        target_text: want.to_string(),
        truth: Truth::Label { value: want.to_string() },
        viewport: vp,
    };
    oracle_accepts(world, &sample).then_some(sample)
}

// --- tag legend ---

fn tag_id(
    world: &MapWorld,
    policy: &ViewPolicy,
    rng: &mut ChaCha8Rng,
    id: String,
) -> Result<Sample, TaskGenError> {
    for _ in 0..policy.max_attempts {
        let spec = &TAGS[rng.gen_range(0..TAGS.len())];
        let poi = uniform_poi(world, rng, TaskKind::TagId)?;
        let vp = anchored_viewport(poi.at, policy.scale_coarse, policy, rng)?;
        let overlay = match spec.letter {
            Some(letter) => Overlay::LetterMarker { at: poi.at, letter, color: spec.color },
            None => Overlay::Diamond { at: poi.at, color: spec.color, half_px: 4.0 },
        };
        let raster = render(world, &vp, &Style::default(), &[overlay]);
        let sample = Sample {
            id: id.clone(),
            kind: TaskKind::TagId,
            raster,
            input_text: format!("what does the {} symbol mean?", spec.color_name),
            target_text: spec.meaning.to_string(),
            truth: Truth::Label { value: spec.meaning.to_string() },
            viewport: vp,
        };
        if oracle_accepts(world, &sample) {
            return Ok(sample);
        }
    }
    Err(gave_up(TaskKind::TagId, policy))
}

// --- POI identification ---

fn poi_id(
    world: &MapWorld,
    policy: &ViewPolicy,
    rng: &mut ChaCha8Rng,
    id: String,
) -> Result<Sample, TaskGenError> {
    let mpp = meters_per_pixel(policy.scale_coarse)?;
    for _ in 0..policy.max_attempts {
        let poi = sample_poi_by_popularity(world, rng)?;
        // The dot must single out this POI: no neighbor within two pixels.
        let crowded = world
            .pois
            .iter()
            .any(|o| o.id != poi.id && crate::geo::haversine_m(o.at, poi.at) < 2.0 * mpp);
        if crowded {
            continue;
        }
        let vp = anchored_viewport(poi.at, policy.scale_coarse, policy, rng)?;
        let raster = render(
            world,
            &vp,
            &Style::default(),
            &[Overlay::Dot { at: poi.at, color: MARKER_GREEN, radius_px: DOT_RADIUS_PX }],
        );
        let sample = Sample {
            id: id.clone(),
            kind: TaskKind::PoiId,
            raster,
            input_text: "what is the name of the place at the green dot?".to_string(),
            target_text: poi.name.clone(),
            truth: Truth::Label { value: poi.name.clone() },
            viewport: vp,
        };
        if oracle_accepts(world, &sample) {
            return Ok(sample);
        }
    }
    Err(gave_up(TaskKind::PoiId, policy))
}

// --- AOI identification ---

fn aoi_id(
    world: &MapWorld,
    policy: &ViewPolicy,
    rng: &mut ChaCha8Rng,
    id: String,
) -> Result<Sample, TaskGenError> {
    if world.aois.is_empty() {
        return Err(TaskGenError::MissingPrerequisite {
            kind: TaskKind::AoiId,
            detail: "world has no AOIs".into(),
        });
    }
    for _ in 0..policy.max_attempts {
        let aoi = &world.aois[rng.gen_range(0..world.aois.len())];
        let vp = anchored_viewport(aoi.centroid(), policy.scale_coarse, policy, rng)?;
        let on_canvas = aoi.ring.iter().all(|&v| {
            let (x, y) = project(&vp, v);
            in_canvas(policy, x, y, 3.0)
        });
        if !on_canvas {
            continue;
        }
        let raster = render(
            world,
            &vp,
            &Style::default(),
            &[Overlay::Polygon {
                ring: aoi.ring.clone(),
                fill: Some((HIGHLIGHT_BLUE_FILL, 0.45)),
                outline: Some((HIGHLIGHT_BLUE_OUTLINE, 1.5)),
            }],
        );
        let sample = Sample {
            id: id.clone(),
            kind: TaskKind::AoiId,
            raster,
            input_text: "what is the name of the blue highlighted area?".to_string(),
            target_text: aoi.name.clone(),
            truth: Truth::Label { value: aoi.name.clone() },
            viewport: vp,
        };
        if oracle_accepts(world, &sample) {
            return Ok(sample);
        }
    }
    Err(gave_up(TaskKind::AoiId, policy))
}

// --- road identification ---

fn road_id(
    world: &MapWorld,
    policy: &ViewPolicy,
    rng: &mut ChaCha8Rng,
    id: String,
) -> Result<Sample, TaskGenError> {
    let mpp = meters_per_pixel(policy.scale_coarse)?;
    for _ in 0..policy.max_attempts {
        let road = &world.roads[rng.gen_range(0..world.roads.len())];
        let len = polyline_length_m(&road.points);
        let seg = 1200.0_f64.min(len * 0.8);
        if seg < 100.0 {
            continue;
        }
        let s0 = rng.gen_range(0.0..=(len - seg));
        let mid = point_at_arc(&road.points, s0 + seg / 2.0);
        // The midpoint must be clearly closer to this road than to any other,
        // otherwise the highlight straddles an intersection.
        let rival = world
            .roads
            .iter()
            .filter(|r| r.id != road.id)
            .map(|r| nearest_on_polyline(&r.points, mid).1)
            .fold(f64::INFINITY, f64::min);
        if rival < mpp {
            continue;
        }
        let pts = sub_polyline(&road.points, s0, s0 + seg);
        let vp = anchored_viewport(mid, policy.scale_coarse, policy, rng)?;
        let ends_on_canvas = [pts[0], pts[pts.len() - 1]].iter().all(|&e| {
            let (x, y) = project(&vp, e);
            in_canvas(policy, x, y, 3.0)
        });
        if !ends_on_canvas {
            continue;
        }
        let raster = render(
            world,
            &vp,
            &Style::default(),
            &[Overlay::Path { points: pts, color: HIGHLIGHT_ORANGE, width_px: 5.0 }],
        );
        let sample = Sample {
            id: id.clone(),
            kind: TaskKind::RoadId,
            raster,
            input_text: "what is the name of the highlighted road?".to_string(),
            target_text: road.name.clone(),
            truth: Truth::Label { value: road.name.clone() },
            viewport: vp,
        };
        if oracle_accepts(world, &sample) {
            return Ok(sample);
        }
    }
    Err(gave_up(TaskKind::RoadId, policy))
}

/// Slice of a polyline between arc positions `s0 < s1`, endpoints
/// interpolated, interior vertices kept.
fn sub_polyline(points: &[GeoPoint], s0: f64, s1: f64) -> Vec<GeoPoint> {
    let mut out = vec![point_at_arc(points, s0)];
    let mut acc = 0.0;
    for w in points.windows(2) {
        let (e, n) = local_meters(w[0], w[1]);
        acc += (e * e + n * n).sqrt();
        if acc > s0 && acc < s1 {
            out.push(w[1]);
        }
    }
    out.push(point_at_arc(points, s1));
    out
}

// --- coordinate generation ---

fn coord_gen(
    world: &MapWorld,
    policy: &ViewPolicy,
    rng: &mut ChaCha8Rng,
    id: String,
) -> Result<Sample, TaskGenError> {
    let poi = uniform_poi(world, rng, TaskKind::CoordGen)?;
    let vp = anchored_viewport(poi.at, policy.scale_coarse, policy, rng)?;
    let raster = render(
        world,
        &vp,
        &Style::default(),
        &[Overlay::Dot { at: poi.at, color: MARKER_RED, radius_px: DOT_RADIUS_PX }],
    );
    let target = format_coord(poi.at);
    // Truth carries the quantized coordinate so text and truth agree exactly.
    let q = parse_coord(&target)?;
    Ok(Sample {
        id,
        kind: TaskKind::CoordGen,
        raster,
        input_text: "what are the coordinates of the red dot?".to_string(),
        target_text: target,
        truth: Truth::Coord { lng: q.lng, lat: q.lat },
        viewport: vp,
    })
}

// --- geocoding ---

fn geocoding(
    world: &MapWorld,
    policy: &ViewPolicy,
    rng: &mut ChaCha8Rng,
    id: String,
) -> Result<Sample, TaskGenError> {
    let poi = sample_poi_by_popularity(world, rng)?;
    let vp = anchored_viewport(poi.at, policy.scale_coarse, policy, rng)?;
    // Outline the containing district for coarse location context.
    let mut overlays = Vec::new();
    if let Some(d) = world.districts.districts.iter().find(|d| d.bounds.contains(poi.at)) {
        overlays.push(Overlay::Polygon {
            ring: rect_ring(&d.bounds),
            fill: None,
            outline: Some((DISTRICT_OUTLINE, 2.0)),
        });
    }
    let raster = render(world, &vp, &Style::default(), &overlays);
    let target = format_coord(poi.at);
    let q = parse_coord(&target)?;
    Ok(Sample {
        id,
        kind: TaskKind::Geocoding,
        raster,
        input_text: format!("where is {}, {}?", poi.name, poi.address),
        target_text: target,
        truth: Truth::Coord { lng: q.lng, lat: q.lat },
        viewport: vp,
    })
}

fn rect_ring(r: &Rect) -> Vec<GeoPoint> {
    vec![
        r.min,
        GeoPoint { lng: r.max.lng, lat: r.min.lat },
        r.max,
        GeoPoint { lng: r.min.lng, lat: r.max.lat },
    ]
}

// --- reverse geocoding ---

fn reverse_geocoding(
    world: &MapWorld,
    policy: &ViewPolicy,
    rng: &mut ChaCha8Rng,
    id: String,
) -> Result<Sample, TaskGenError> {
    let poi = sample_poi_by_popularity(world, rng)?;
    let vp = anchored_viewport(poi.at, policy.scale_coarse, policy, rng)?;
    let raster = render(
        world,
        &vp,
        &Style::default(),
        &[Overlay::Dot { at: poi.at, color: MARKER_RED, radius_px: DOT_RADIUS_PX }],
    );
    Ok(Sample {
        id,
        kind: TaskKind::ReverseGeocoding,
        raster,
        input_text: format!("what is the address of the red dot at {}?", format_coord(poi.at)),
        target_text: poi.address.clone(),
        truth: Truth::Label { value: poi.address.clone() },
        viewport: vp,
    })
}

// --- parent/child relations ---

/// An entity that can appear in a relation question.
#[derive(Clone, Copy)]
enum Ent<'w> {
    Area(&'w Aoi),
    Place(&'w Poi),
}

impl<'w> Ent<'w> {
    fn name(&self) -> &'w str {
        match self {
            Ent::Area(a) => &a.name,
            Ent::Place(p) => &p.name,
        }
    }

    fn anchor(&self) -> GeoPoint {
        match self {
            Ent::Area(a) => a.centroid(),
            Ent::Place(p) => p.at,
        }
    }

    /// Every point that must stay on canvas for the entity to be visible.
    fn key_points(&self) -> Vec<GeoPoint> {
        match self {
            Ent::Area(a) => a.ring.clone(),
            Ent::Place(p) => vec![p.at],
        }
    }

    fn overlay(&self, color: [u8; 3]) -> Overlay {
        match self {
            Ent::Area(a) => Overlay::Polygon {
                ring: a.ring.clone(),
                fill: None,
                outline: Some((color, 2.0)),
            },
            Ent::Place(p) => Overlay::Dot { at: p.at, color, radius_px: DOT_RADIUS_PX },
        }
    }

    /// True when this entity is a registered child of `area`.
    fn child_of(&self, area: &Aoi) -> bool {
        match self {
            Ent::Area(a) => a.parent == Some(area.id),
            Ent::Place(p) => p.parent == Some(area.id),
        }
    }
}

fn parent_child(
    world: &MapWorld,
    policy: &ViewPolicy,
    rng: &mut ChaCha8Rng,
    id: String,
) -> Result<Sample, TaskGenError> {
    // Registered containment pairs: (parent area, child entity).
    let mut pairs: Vec<(&Aoi, Ent)> = Vec::new();
    for a in &world.aois {
        if let Some(pid) = a.parent {
            pairs.push((world.aoi(pid), Ent::Area(a)));
        }
    }
    for p in &world.pois {
        if let Some(pid) = p.parent {
            pairs.push((world.aoi(pid), Ent::Place(p)));
        }
    }
    let top_areas: Vec<&Aoi> = world.aois.iter().filter(|a| a.parent.is_none()).collect();
    let free_places: Vec<&Poi> = world.pois.iter().filter(|p| p.parent.is_none()).collect();

    for _ in 0..policy.max_attempts {
        let label = rng.gen_range(0..3usize);
        let (first, second): (Ent, Ent) = if label == 0 {
            if top_areas.len() + free_places.len() < 2 {
                return Err(TaskGenError::MissingPrerequisite {
                    kind: TaskKind::ParentChild,
                    detail: "world has fewer than two unrelated entities".into(),
                });
            }
            let a = top_areas[rng.gen_range(0..top_areas.len())];
            let b = if !free_places.is_empty() && rng.gen_bool(0.5) {
                Ent::Place(free_places[rng.gen_range(0..free_places.len())])
            } else {
                Ent::Area(top_areas[rng.gen_range(0..top_areas.len())])
            };
            // Must be genuinely unrelated: different entity, no registered
            // link, no geometric containment either way.
            if let Ent::Area(b_area) = b {
                if b_area.id == a.id {
                    continue;
                }
            }
            if b.child_of(a) || point_in_ring(&a.ring, b.anchor()) {
                continue;
            }
            if let Ent::Area(b_area) = b {
                if point_in_ring(&b_area.ring, a.centroid()) {
                    continue;
                }
            }
            if rng.gen_bool(0.5) {
                (Ent::Area(a), b)
            } else {
                (b, Ent::Area(a))
            }
        } else {
            if pairs.is_empty() {
                return Err(TaskGenError::MissingPrerequisite {
                    kind: TaskKind::ParentChild,
                    detail: "world has no parent/child pairs".into(),
                });
            }
            let (parent, child) = pairs[rng.gen_range(0..pairs.len())];
            if label == 1 {
                (Ent::Area(parent), child)
            } else {
                (child, Ent::Area(parent))
            }
        };

        // Both entities must fit on one canvas.
        let (me, mn) = local_meters(first.anchor(), second.anchor());
        let mid = offset_meters(first.anchor(), me / 2.0, mn / 2.0);
        let vp = anchored_viewport(mid, policy.scale_coarse, policy, rng)?;
        let visible = first
            .key_points()
            .iter()
            .chain(second.key_points().iter())
            .all(|&p| {
                let (x, y) = project(&vp, p);
                in_canvas(policy, x, y, 3.0)
            });
        if !visible {
            continue;
        }
        let raster = render(
            world,
            &vp,
            &Style::default(),
            &[first.overlay(HIGHLIGHT_BLUE_OUTLINE), second.overlay(HIGHLIGHT_ORANGE)],
        );
        return Ok(Sample {
            id,
            kind: TaskKind::ParentChild,
            raster,
            input_text: format!(
                "what is the relation between {} and {}?",
                first.name(),
                second.name()
            ),
            target_text: RELATION_LABELS[label].to_string(),
            truth: Truth::Label { value: RELATION_LABELS[label].to_string() },
            viewport: vp,
        });
    }
    Err(gave_up(TaskKind::ParentChild, policy))
}

// --- display-point generation ---

/// Categories displayed at the containing area's centroid.
const AREA_CATEGORIES: [&str; 4] = ["office", "school", "hospital", "station"];
/// Categories displayed at the wifi fix (indoor places).
const INDOOR_CATEGORIES: [&str; 10] = [
    "cafe", "restaurant", "shop", "supermarket", "pharmacy", "clinic", "bank", "gym", "cinema",
    "hotel",
];

enum DisplayRule {
    AreaCentroid,
    WifiFix,
    EdgeSnappedCamera,
}

fn display_rule(category: &str) -> DisplayRule {
    if AREA_CATEGORIES.contains(&category) {
        DisplayRule::AreaCentroid
    } else if INDOOR_CATEGORIES.contains(&category) {
        DisplayRule::WifiFix
    } else {
        DisplayRule::EdgeSnappedCamera
    }
}

/// Nearest point on any AOI ring, if the world has AOIs.
fn nearest_aoi_edge(world: &MapWorld, p: GeoPoint) -> Option<GeoPoint> {
    let mut best: Option<(GeoPoint, f64)> = None;
    for aoi in &world.aois {
        let mut ring = aoi.ring.clone();
        ring.push(aoi.ring[0]);
        let (q, d, _) = nearest_on_polyline(&ring, p);
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((q, d));
        }
    }
    best.map(|(q, _)| q)
}

fn containing_area<'w>(world: &'w MapWorld, poi: &Poi) -> Option<&'w Aoi> {
    match poi.parent {
        Some(pid) => Some(world.aoi(pid)),
        None => aoi_at(world, poi.at),
    }
}

fn unit_dir(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let th = rng.gen::<f64>() * std::f64::consts::TAU;
    (th.cos(), th.sin())
}

fn poi_coord_gen(
    world: &MapWorld,
    policy: &ViewPolicy,
    rng: &mut ChaCha8Rng,
    id: String,
) -> Result<Sample, TaskGenError> {
    for _ in 0..policy.max_attempts {
        let poi = uniform_poi(world, rng, TaskKind::PoiCoordGen)?;

        // Camera fixes drift toward the nearest area edge (the face being
        // photographed); everything else scatters isotropically.
        let camera_dir = match nearest_aoi_edge(world, poi.at) {
            Some(edge) => {
                let (e, n) = local_meters(poi.at, edge);
                let len = (e * e + n * n).sqrt();
                if len < 1e-9 {
                    (1.0, 0.0)
                } else {
                    (e / len, n / len)
                }
            }
            None => (1.0, 0.0),
        };
        let camera =
            offset_meters(poi.at, camera_dir.0 * CAMERA_OFFSET_M, camera_dir.1 * CAMERA_OFFSET_M);
        let (we, wn) = unit_dir(rng);
        let wifi = offset_meters(poi.at, we * WIFI_OFFSET_M, wn * WIFI_OFFSET_M);

        // Camera and wifi always report; 0..=3 extra fixes from the noisier
        // channels for a total of 2 to 5 dots.
        let mut dots = vec![(camera, CHANNEL_CAMERA)];
        for _ in 0..rng.gen_range(0..=3usize) {
            let (de, dn) = unit_dir(rng);
            if rng.gen_bool(0.5) {
                dots.push((
                    offset_meters(poi.at, de * WAYBILL_OFFSET_M, dn * WAYBILL_OFFSET_M),
                    CHANNEL_WAYBILL,
                ));
            } else {
                dots.push((
                    offset_meters(poi.at, de * USER_OFFSET_M, dn * USER_OFFSET_M),
                    CHANNEL_USER,
                ));
            }
        }
        dots.push((wifi, CHANNEL_WIFI));

        let truth_point = match display_rule(&poi.category) {
            DisplayRule::AreaCentroid => match containing_area(world, poi) {
                Some(area) => area.centroid(),
                // Free-standing place of an area category: no area to stand
                // for, so fall back to the entrance rule.
                None => nearest_aoi_edge(world, camera).unwrap_or(camera),
            },
            DisplayRule::WifiFix => wifi,
            DisplayRule::EdgeSnappedCamera => nearest_aoi_edge(world, camera).unwrap_or(camera),
        };

        let vp = anchored_viewport(poi.at, policy.scale_fine, policy, rng)?;
        let all_visible = dots
            .iter()
            .map(|&(p, _)| p)
            .chain(std::iter::once(truth_point))
            .all(|p| {
                let (x, y) = project(&vp, p);
                in_canvas(policy, x, y, 4.0)
            });
        if !all_visible {
            continue;
        }
        let (tx, ty) = project(&vp, truth_point);
        let overlays: Vec<Overlay> = dots
            .iter()
            .map(|&(at, color)| Overlay::Dot { at, color, radius_px: CHANNEL_RADIUS_PX })
            .collect();
        let raster = render(world, &vp, &Style::default(), &overlays);
        return Ok(Sample {
            id,
            kind: TaskKind::PoiCoordGen,
            raster,
            input_text: format!("where should {} be displayed?", poi.name),
            target_text: format_pixel(tx, ty),
            truth: Truth::Pixel {
                x: round_half_up(tx),
                y: round_half_up(ty),
                lng: truth_point.lng,
                lat: truth_point.lat,
                view: vp,
            },
            viewport: vp,
        });
    }
    Err(gave_up(TaskKind::PoiCoordGen, policy))
}

// --- arrival point ---

fn arrival_point(
    world: &MapWorld,
    policy: &ViewPolicy,
    rng: &mut ChaCha8Rng,
    id: String,
) -> Result<Sample, TaskGenError> {
    let normal = Normal::new(0.0, HEAT_SIGMA_M).expect("sigma is positive");
    for _ in 0..policy.max_attempts {
        let poi = uniform_poi(world, rng, TaskKind::ArrivalPoint)?;
        let (road, _, arc) = nearest_road(world, poi.at);
        let arrival = point_at_arc(&road.points, arc);

        let (me, mn) = local_meters(poi.at, arrival);
        let mid = offset_meters(poi.at, me / 2.0, mn / 2.0);
        let vp = anchored_viewport(mid, policy.scale_fine, policy, rng)?;
        let (px, py) = project(&vp, poi.at);
        let (ax, ay) = project(&vp, arrival);
        if !in_canvas(policy, px, py, 4.0) || !in_canvas(policy, ax, ay, 4.0) {
            continue;
        }
        // A pixel-perfect prediction must resolve back to this road within
        // the scoring threshold, else the sample cannot be answered cleanly.
        let xi = round_half_up(ax);
        let yi = round_half_up(ay);
        let resolved = unproject(&vp, xi as f64, yi as f64);
        let (back, dist, _) = nearest_road(world, resolved);
        if back.id != road.id || dist > 15.0 {
            continue;
        }

        let mut overlays =
            vec![Overlay::Dot { at: poi.at, color: MARKER_RED, radius_px: DOT_RADIUS_PX }];
        if policy.arrival_heatmap {
            let mut points = Vec::with_capacity(HEAT_POINTS);
            for _ in 0..HEAT_POINTS {
                let at = if rng.gen::<f64>() < HEAT_OUTLIER_FRAC {
                    // Stray report well off the road.
                    let (de, dn) = unit_dir(rng);
                    let r = rng.gen_range(50.0..150.0);
                    offset_meters(arrival, de * r, dn * r)
                } else {
                    offset_meters(arrival, normal.sample(rng), normal.sample(rng))
                };
                points.push(HeatPoint { at, weight: 1.0 });
            }
            overlays.push(Overlay::Heat {
                points,
                sigma_m: HEAT_SIGMA_M,
                colormap: Colormap::Heat,
            });
        }
        let raster = render(world, &vp, &Style::default(), &overlays);
        return Ok(Sample {
            id,
            kind: TaskKind::ArrivalPoint,
            raster,
            input_text: format!("where should you arrive for {}?", poi.name),
            target_text: format_pixel(ax, ay),
            truth: Truth::Arrival {
                x: xi,
                y: yi,
                lng: arrival.lng,
                lat: arrival.lat,
                road: road.id,
                view: vp,
            },
            viewport: vp,
        });
    }
    Err(gave_up(TaskKind::ArrivalPoint, policy))
}
