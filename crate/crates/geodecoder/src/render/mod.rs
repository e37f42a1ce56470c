//! Deterministic software rasterizer for worlds and task overlays.
//!
//! Painting order is fixed: background, green, water, areas, roads, then
//! overlays in caller order. Equal inputs render byte-identical rasters.

mod draw;
mod font;
mod heatmap;
mod raster;
mod style;

pub use heatmap::{render_heatmap, Colormap, HeatPoint};
pub use raster::{Raster, RasterError};
pub use style::{
    tag_by_color_name, Rgb, Style, TagSpec, CHANNEL_CAMERA, CHANNEL_USER, CHANNEL_WAYBILL,
    CHANNEL_WIFI, DISTRICT_OUTLINE, HIGHLIGHT_BLUE_FILL, HIGHLIGHT_BLUE_OUTLINE, HIGHLIGHT_ORANGE,
    MARKER_GREEN, MARKER_RED, TAGS,
};

use crate::geo::{project, GeoPoint, Viewport};
use crate::worldgen::{MapWorld, RoadClass};

/// Rendered road widths in pixels.
pub const ROAD_WIDTH_MINOR_PX: f64 = 2.0;
pub const ROAD_WIDTH_MAJOR_PX: f64 = 4.0;
const AOI_OUTLINE_PX: f64 = 1.0;

/// Marks drawn on top of the base map.
#[derive(Debug, Clone, PartialEq)]
pub enum Overlay {
    Dot { at: GeoPoint, color: Rgb, radius_px: f64 },
    Ring { at: GeoPoint, color: Rgb, radius_px: f64 },
    Diamond { at: GeoPoint, color: Rgb, half_px: f64 },
    /// Colored disc with a white letter, the tag-symbol shape.
    LetterMarker { at: GeoPoint, letter: char, color: Rgb },
    /// Closed ring; fill carries an alpha, outline a width.
    Polygon { ring: Vec<GeoPoint>, fill: Option<(Rgb, f64)>, outline: Option<(Rgb, f64)> },
    Path { points: Vec<GeoPoint>, color: Rgb, width_px: f64 },
    Heat { points: Vec<HeatPoint>, sigma_m: f64, colormap: Colormap },
}

fn project_ring(vp: &Viewport, ring: &[GeoPoint]) -> Vec<draw::Px> {
    ring.iter().map(|&p| project(vp, p)).collect()
}

/// Base map only: landcover, areas, roads.
pub fn render_base(world: &MapWorld, vp: &Viewport, style: &Style) -> Raster {
    let mut raster = Raster::new(vp.width_px, vp.height_px, style.background);
    for area in &world.green {
        draw::fill_polygon(&mut raster, &project_ring(vp, &area.ring), style.green);
    }
    for area in &world.water {
        draw::fill_polygon(&mut raster, &project_ring(vp, &area.ring), style.water);
    }
    // Parents first so nested areas stay visible on top.
    let (parents, children): (Vec<_>, Vec<_>) = world.aois.iter().partition(|a| a.parent.is_none());
    for aoi in parents.iter().chain(children.iter()) {
        let ring = project_ring(vp, &aoi.ring);
        draw::fill_polygon(&mut raster, &ring, style.aoi_fill(aoi.kind));
        draw::polygon_outline(&mut raster, &ring, AOI_OUTLINE_PX, style.aoi_outline(aoi.kind));
    }
    for class in [RoadClass::Minor, RoadClass::Major] {
        let (width, color) = match class {
            RoadClass::Minor => (ROAD_WIDTH_MINOR_PX, style.road_minor),
            RoadClass::Major => (ROAD_WIDTH_MAJOR_PX, style.road_major),
        };
        for road in world.roads.iter().filter(|r| r.class == class) {
            draw::polyline(&mut raster, &project_ring(vp, &road.points), width, color);
        }
    }
    raster
}

/// Base map plus overlays, applied in order.
pub fn render(world: &MapWorld, vp: &Viewport, style: &Style, overlays: &[Overlay]) -> Raster {
    let mut raster = render_base(world, vp, style);
    for overlay in overlays {
        apply_overlay(&mut raster, vp, overlay);
    }
    raster
}

pub fn apply_overlay(raster: &mut Raster, vp: &Viewport, overlay: &Overlay) {
    match overlay {
        Overlay::Dot { at, color, radius_px } => {
            draw::disc(raster, project(vp, *at), *radius_px, *color);
        }
        Overlay::Ring { at, color, radius_px } => {
            draw::ring(raster, project(vp, *at), *radius_px, 1.5, *color);
        }
        Overlay::Diamond { at, color, half_px } => {
            draw::diamond(raster, project(vp, *at), *half_px, *color);
        }
        Overlay::LetterMarker { at, letter, color } => {
            draw::letter_marker(raster, project(vp, *at), *letter, *color);
        }
        Overlay::Polygon { ring, fill, outline } => {
            let px = project_ring(vp, ring);
            if let Some((color, alpha)) = fill {
                if *alpha >= 1.0 {
                    draw::fill_polygon(raster, &px, *color);
                } else {
                    draw::fill_polygon_with(raster, &px, |r, x, y| r.blend(x, y, *color, *alpha));
                }
            }
            if let Some((color, width)) = outline {
                draw::polygon_outline(raster, &px, *width, *color);
            }
        }
        Overlay::Path { points, color, width_px } => {
            draw::polyline(raster, &project_ring(vp, points), *width_px, *color);
        }
        Overlay::Heat { points, sigma_m, colormap } => {
            render_heatmap(raster, vp, points, *sigma_m, *colormap);
        }
    }
}
