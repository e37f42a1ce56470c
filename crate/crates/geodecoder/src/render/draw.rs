//! Pixel-space drawing primitives. No anti-aliasing anywhere: a pixel is
//! either written or untouched, which keeps rasters byte-deterministic.

use super::font;
use super::raster::Raster;
use super::style::Rgb;

/// Fractional pixel position, x right, y down.
pub type Px = (f64, f64);

fn clamp_range(lo: f64, hi: f64, max: u32) -> Option<(u32, u32)> {
    let a = lo.floor().max(0.0) as i64;
    let b = hi.ceil().min(max as f64 - 1.0) as i64;
    if a > b || b < 0 {
        None
    } else {
        Some((a as u32, b as u32))
    }
}

/// Filled disc; pixel centers within `radius` of `center` are painted.
pub fn disc(r: &mut Raster, center: Px, radius: f64, color: Rgb) {
    let Some((x0, x1)) = clamp_range(center.0 - radius - 1.0, center.0 + radius + 1.0, r.width()) else {
        return;
    };
    let Some((y0, y1)) = clamp_range(center.1 - radius - 1.0, center.1 + radius + 1.0, r.height()) else {
        return;
    };
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = x as f64 + 0.5 - center.0;
            let dy = y as f64 + 0.5 - center.1;
            if dx * dx + dy * dy <= radius * radius {
                r.set(x, y, color);
            }
        }
    }
}

/// Ring: pixel centers between `radius - thickness` and `radius`.
pub fn ring(r: &mut Raster, center: Px, radius: f64, thickness: f64, color: Rgb) {
    let Some((x0, x1)) = clamp_range(center.0 - radius - 1.0, center.0 + radius + 1.0, r.width()) else {
        return;
    };
    let Some((y0, y1)) = clamp_range(center.1 - radius - 1.0, center.1 + radius + 1.0, r.height()) else {
        return;
    };
    let inner = (radius - thickness).max(0.0);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = x as f64 + 0.5 - center.0;
            let dy = y as f64 + 0.5 - center.1;
            let d2 = dx * dx + dy * dy;
            if d2 <= radius * radius && d2 >= inner * inner {
                r.set(x, y, color);
            }
        }
    }
}

/// Filled diamond (L1 ball) with the given half-diagonal.
pub fn diamond(r: &mut Raster, center: Px, half: f64, color: Rgb) {
    let Some((x0, x1)) = clamp_range(center.0 - half - 1.0, center.0 + half + 1.0, r.width()) else {
        return;
    };
    let Some((y0, y1)) = clamp_range(center.1 - half - 1.0, center.1 + half + 1.0, r.height()) else {
        return;
    };
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = (x as f64 + 0.5 - center.0).abs();
            let dy = (y as f64 + 0.5 - center.1).abs();
            if dx + dy <= half {
                r.set(x, y, color);
            }
        }
    }
}

/// Thick segment: pixel centers within `width / 2` of the segment.
pub fn line(r: &mut Raster, a: Px, b: Px, width: f64, color: Rgb) {
    let half = width / 2.0;
    let Some((x0, x1)) = clamp_range(a.0.min(b.0) - half - 1.0, a.0.max(b.0) + half + 1.0, r.width()) else {
        return;
    };
    let Some((y0, y1)) = clamp_range(a.1.min(b.1) - half - 1.0, a.1.max(b.1) + half + 1.0, r.height()) else {
        return;
    };
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len_sq = dx * dx + dy * dy;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let px = x as f64 + 0.5 - a.0;
            let py = y as f64 + 0.5 - a.1;
            let t = if len_sq > 0.0 { ((px * dx + py * dy) / len_sq).clamp(0.0, 1.0) } else { 0.0 };
            let ex = px - t * dx;
            let ey = py - t * dy;
            if ex * ex + ey * ey <= half * half {
                r.set(x, y, color);
            }
        }
    }
}

pub fn polyline(r: &mut Raster, points: &[Px], width: f64, color: Rgb) {
    for w in points.windows(2) {
        line(r, w[0], w[1], width, color);
    }
}

/// Even-odd scanline fill of a closed polygon (ring not repeated).
pub fn fill_polygon(r: &mut Raster, ring: &[Px], color: Rgb) {
    fill_polygon_with(r, ring, |raster, x, y| raster.set(x, y, color));
}

/// Even-odd scanline fill calling `paint` per covered pixel.
pub fn fill_polygon_with(r: &mut Raster, ring: &[Px], mut paint: impl FnMut(&mut Raster, u32, u32)) {
    if ring.len() < 3 {
        return;
    }
    let min_y = ring.iter().map(|p| p.1).fold(f64::MAX, f64::min);
    let max_y = ring.iter().map(|p| p.1).fold(f64::MIN, f64::max);
    let Some((y0, y1)) = clamp_range(min_y, max_y, r.height()) else {
        return;
    };
    let n = ring.len();
    let mut xs: Vec<f64> = Vec::with_capacity(8);
    for y in y0..=y1 {
        let scan = y as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            let (x1p, y1p) = ring[i];
            let (x2p, y2p) = ring[(i + 1) % n];
            // Half-open in y so shared vertices count once.
            if (y1p > scan) != (y2p > scan) {
                let t = (scan - y1p) / (y2p - y1p);
                xs.push(x1p + t * (x2p - x1p));
            }
        }
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for pair in xs.chunks_exact(2) {
            // Pixel centers in [pair0, pair1).
            let from = (pair[0] - 0.5).ceil().max(0.0) as i64;
            let to = ((pair[1] - 0.5).ceil() - 1.0).min(r.width() as f64 - 1.0) as i64;
            for x in from..=to.max(from - 1) {
                if x >= 0 && (x as u32) < r.width() {
                    paint(r, x as u32, y);
                }
            }
        }
    }
}

pub fn polygon_outline(r: &mut Raster, ring: &[Px], width: f64, color: Rgb) {
    let n = ring.len();
    for i in 0..n {
        line(r, ring[i], ring[(i + 1) % n], width, color);
    }
}

/// 5x7 letter with its top-left corner at `top_left`.
pub fn glyph(r: &mut Raster, c: char, top_left: (i64, i64), color: Rgb) {
    let Some(rows) = font::glyph(c) else { return };
    for (dy, row) in rows.iter().enumerate() {
        for dx in 0..font::GLYPH_W as i64 {
            if row & (1 << (font::GLYPH_W as i64 - 1 - dx)) != 0 {
                let (x, y) = (top_left.0 + dx, top_left.1 + dy as i64);
                if x >= 0 && y >= 0 && (x as u32) < r.width() && (y as u32) < r.height() {
                    r.set(x as u32, y as u32, color);
                }
            }
        }
    }
}

/// Letter marker: colored disc with the character knocked out in white.
pub fn letter_marker(r: &mut Raster, center: Px, c: char, color: Rgb) {
    disc(r, center, 6.0, color);
    let top_left = (
        (center.0 - font::GLYPH_W as f64 / 2.0).round() as i64,
        (center.1 - font::GLYPH_H as f64 / 2.0).round() as i64,
    );
    glyph(r, c, top_left, [255, 255, 255]);
}
