//! Answer re-derivation for identification tasks.
//!
//! Given only the world and a rendered sample, these routines recompute the
//! expected answer. Factories accept a candidate sample only when the oracle
//! output equals the stored target, which keeps every emitted sample
//! answerable from its pixels.

use crate::geo::{local_meters, offset_meters, project, unproject, GeoPoint};
use crate::render::{render_base, tag_by_color_name, Raster, Rgb, Style, HIGHLIGHT_ORANGE, MARKER_GREEN, MARKER_RED};
use crate::worldgen::{element_at, nearest_road, MapWorld};

use super::{Sample, TaskGenError, TaskKind};

/// Recomputes the answer of an identification sample from world + raster.
pub(crate) fn rederive_label(world: &MapWorld, sample: &Sample) -> Result<String, TaskGenError> {
    match sample.kind {
        TaskKind::ElementId => element_label(world, sample),
        TaskKind::TagId => tag_label(sample),
        TaskKind::PoiId => poi_label(world, sample),
        TaskKind::AoiId => aoi_label(world, sample),
        TaskKind::RoadId => road_label(world, sample),
        kind => Err(TaskGenError::OracleFailed {
            kind,
            detail: "not an identification task".into(),
        }),
    }
}

fn fail(kind: TaskKind, detail: impl Into<String>) -> TaskGenError {
    TaskGenError::OracleFailed { kind, detail: detail.into() }
}

fn color_pixels(raster: &Raster, color: Rgb) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for y in 0..raster.height() {
        for x in 0..raster.width() {
            if raster.get(x, y) == color {
                out.push((x, y));
            }
        }
    }
    out
}

/// Mean pixel-center position of a set of pixels.
fn centroid(pixels: &[(u32, u32)]) -> Option<(f64, f64)> {
    if pixels.is_empty() {
        return None;
    }
    let n = pixels.len() as f64;
    let sx: f64 = pixels.iter().map(|&(x, _)| x as f64 + 0.5).sum();
    let sy: f64 = pixels.iter().map(|&(_, y)| y as f64 + 0.5).sum();
    Some((sx / n, sy / n))
}

fn element_label(world: &MapWorld, sample: &Sample) -> Result<String, TaskGenError> {
    let kind = TaskKind::ElementId;
    let (cx, cy) = centroid(&color_pixels(&sample.raster, MARKER_RED))
        .ok_or_else(|| fail(kind, "no red marker on canvas"))?;
    let p = unproject(&sample.viewport, cx, cy);
    Ok(element_at(world, p).to_string())
}

fn tag_label(sample: &Sample) -> Result<String, TaskGenError> {
    let kind = TaskKind::TagId;
    let color_word = sample
        .input_text
        .strip_prefix("what does the ")
        .and_then(|s| s.strip_suffix(" symbol mean?"))
        .ok_or_else(|| fail(kind, "prompt does not name a symbol color"))?;
    let spec = tag_by_color_name(color_word)
        .ok_or_else(|| fail(kind, format!("unknown symbol color {color_word:?}")))?;
    if color_pixels(&sample.raster, spec.color).is_empty() {
        return Err(fail(kind, "named symbol is not on the canvas"));
    }
    Ok(spec.meaning.to_string())
}

fn poi_label(world: &MapWorld, sample: &Sample) -> Result<String, TaskGenError> {
    let kind = TaskKind::PoiId;
    let (cx, cy) = centroid(&color_pixels(&sample.raster, MARKER_GREEN))
        .ok_or_else(|| fail(kind, "no green marker on canvas"))?;
    let p = unproject(&sample.viewport, cx, cy);
    world
        .pois
        .iter()
        .min_by(|a, b| {
            crate::geo::haversine_m(a.at, p)
                .partial_cmp(&crate::geo::haversine_m(b.at, p))
                .expect("distances are finite")
        })
        .map(|poi| poi.name.clone())
        .ok_or_else(|| fail(kind, "world has no POIs"))
}

fn aoi_label(world: &MapWorld, sample: &Sample) -> Result<String, TaskGenError> {
    let kind = TaskKind::AoiId;
    let vp = &sample.viewport;
    let base = render_base(world, vp, &Style::default());
    // None = probe off canvas (treated as unchanged).
    let changed = |p: GeoPoint| -> Option<bool> {
        let (x, y) = project(vp, p);
        if x < 0.0 || y < 0.0 || x >= base.width() as f64 || y >= base.height() as f64 {
            return None;
        }
        Some(sample.raster.get(x as u32, y as u32) != base.get(x as u32, y as u32))
    };
    // Outward probes must clear both pixel snapping and the outline stroke.
    let off_m = (2.5 * vp.meters_per_pixel()).max(60.0);

    let mut hits = Vec::new();
    'candidates: for aoi in &world.aois {
        let c = aoi.centroid();
        if changed(c) != Some(true) {
            continue;
        }
        for &v in &aoi.ring {
            // A highlighted area is blended strictly inside its ring and
            // untouched strictly outside it.
            let inner = GeoPoint {
                lng: v.lng + 0.35 * (c.lng - v.lng),
                lat: v.lat + 0.35 * (c.lat - v.lat),
            };
            if changed(inner) != Some(true) {
                continue 'candidates;
            }
            let (e, n) = local_meters(c, v);
            let len = (e * e + n * n).sqrt();
            if len < 1e-9 {
                continue 'candidates;
            }
            let outer = offset_meters(v, e / len * off_m, n / len * off_m);
            if changed(outer) == Some(true) {
                continue 'candidates;
            }
        }
        hits.push(aoi);
    }
    match hits[..] {
        [only] => Ok(only.name.clone()),
        [] => Err(fail(kind, "no area matches the highlight")),
        _ => Err(fail(kind, format!("{} areas match the highlight", hits.len()))),
    }
}

fn road_label(world: &MapWorld, sample: &Sample) -> Result<String, TaskGenError> {
    let kind = TaskKind::RoadId;
    let pixels = color_pixels(&sample.raster, HIGHLIGHT_ORANGE);
    let (cx, cy) = centroid(&pixels).ok_or_else(|| fail(kind, "no highlighted road on canvas"))?;
    // The stroke centroid can fall off the stroke at bends; snap to the
    // nearest highlighted pixel.
    let (x, y) = pixels
        .iter()
        .min_by(|&&(ax, ay), &&(bx, by)| {
            let da = (ax as f64 + 0.5 - cx).powi(2) + (ay as f64 + 0.5 - cy).powi(2);
            let db = (bx as f64 + 0.5 - cx).powi(2) + (by as f64 + 0.5 - cy).powi(2);
            da.partial_cmp(&db).expect("distances are finite")
        })
        .copied()
        .expect("pixel list is nonempty");
    let p = unproject(&sample.viewport, x as f64 + 0.5, y as f64 + 0.5);
    let (road, dist, _) = nearest_road(world, p);
    if dist > sample.viewport.meters_per_pixel() {
        return Err(fail(kind, "highlight is not on a road"));
    }
    Ok(road.name.clone())
}
