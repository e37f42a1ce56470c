//! Spatial queries against a world: containment, nearest road, element class.

use crate::geo::{local_meters, offset_meters, GeoPoint};

use super::{Aoi, MapWorld, Road, RoadClass, MAJOR_ROAD_HALF_WIDTH_M, MINOR_ROAD_HALF_WIDTH_M};

/// Every element class an on-map point can resolve to.
pub const ELEMENT_CLASSES: [&str; 10] = [
    "open area",
    "water",
    "green area",
    "major road",
    "minor road",
    "residential area",
    "campus",
    "park",
    "mall",
    "office area",
];

/// Even-odd containment test in degree space. The ring is closed implicitly.
pub fn point_in_ring(ring: &[GeoPoint], p: GeoPoint) -> bool {
    let mut inside = false;
    let n = ring.len();
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        if (a.lat > p.lat) != (b.lat > p.lat) {
            let t = (p.lat - a.lat) / (b.lat - a.lat);
            let x = a.lng + t * (b.lng - a.lng);
            if p.lng < x {
                inside = !inside;
            }
        }
    }
    inside
}

pub fn polyline_length_m(points: &[GeoPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| {
            let (e, n) = local_meters(w[0], w[1]);
            (e * e + n * n).sqrt()
        })
        .sum()
}

/// Closest point of a polyline: returns (point, distance in meters, arc
/// position of the projection in meters from the start).
pub fn nearest_on_polyline(points: &[GeoPoint], p: GeoPoint) -> (GeoPoint, f64, f64) {
    let mut best = (points[0], f64::MAX, 0.0);
    let mut walked = 0.0;
    for w in points.windows(2) {
        let (ax, ay) = local_meters(p, w[0]);
        let (bx, by) = local_meters(p, w[1]);
        let (dx, dy) = (bx - ax, by - ay);
        let seg_sq = dx * dx + dy * dy;
        let t = if seg_sq > 0.0 { (-(ax * dx + ay * dy) / seg_sq).clamp(0.0, 1.0) } else { 0.0 };
        let (nx, ny) = (ax + t * dx, ay + t * dy);
        let dist = (nx * nx + ny * ny).sqrt();
        let seg = seg_sq.sqrt();
        if dist < best.1 {
            best = (offset_meters(p, nx, ny), dist, walked + t * seg);
        }
        walked += seg;
    }
    best
}

/// Point at arc position `s` meters from the polyline start, clamped.
pub fn point_at_arc(points: &[GeoPoint], s: f64) -> GeoPoint {
    point_and_dir_at_arc(points, s).0
}

/// Point and unit direction (east, north) at arc position `s` meters,
/// clamped to the polyline ends.
pub(crate) fn point_and_dir_at_arc(points: &[GeoPoint], s: f64) -> (GeoPoint, (f64, f64)) {
    let mut remaining = s.max(0.0);
    let last = points.len().saturating_sub(2);
    for (i, w) in points.windows(2).enumerate() {
        let (e, n) = local_meters(w[0], w[1]);
        let seg = (e * e + n * n).sqrt();
        if remaining <= seg || i == last {
            let t = if seg > 0.0 { (remaining / seg).min(1.0) } else { 0.0 };
            let p = offset_meters(w[0], e * t, n * t);
            let dir = if seg > 0.0 { (e / seg, n / seg) } else { (1.0, 0.0) };
            return (p, dir);
        }
        remaining -= seg;
    }
    (points[0], (1.0, 0.0))
}

/// Road whose centerline is closest to `p`, with distance and arc position.
pub fn nearest_road(world: &MapWorld, p: GeoPoint) -> (&Road, f64, f64) {
    let mut best: Option<(&Road, f64, f64)> = None;
    for road in &world.roads {
        let (_, dist, along) = nearest_on_polyline(&road.points, p);
        if best.map_or(true, |(_, d, _)| dist < d) {
            best = Some((road, dist, along));
        }
    }
    best.expect("world has roads")
}

/// Innermost AOI containing `p`: nested areas win over their parents.
pub fn aoi_at(world: &MapWorld, p: GeoPoint) -> Option<&Aoi> {
    world
        .aois
        .iter()
        .filter(|a| a.parent.is_some())
        .find(|a| point_in_ring(&a.ring, p))
        .or_else(|| world.aois.iter().filter(|a| a.parent.is_none()).find(|a| point_in_ring(&a.ring, p)))
}

/// Element class at a point, matching render order: roads cover areas, areas
/// cover landcover, everything else is open area.
pub fn element_at(world: &MapWorld, p: GeoPoint) -> &'static str {
    let (road, dist, _) = nearest_road(world, p);
    let half_width = match road.class {
        RoadClass::Major => MAJOR_ROAD_HALF_WIDTH_M,
        RoadClass::Minor => MINOR_ROAD_HALF_WIDTH_M,
    };
    if dist <= half_width {
        return match road.class {
            RoadClass::Major => "major road",
            RoadClass::Minor => "minor road",
        };
    }
    if let Some(aoi) = aoi_at(world, p) {
        return aoi.kind.class_name();
    }
    if world.water.iter().any(|a| point_in_ring(&a.ring, p)) {
        return "water";
    }
    if world.green.iter().any(|a| point_in_ring(&a.ring, p)) {
        return "green area";
    }
    "open area"
}
