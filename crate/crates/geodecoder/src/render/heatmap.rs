//! Gaussian intensity overlay blended onto a base map.

use crate::geo::{project, GeoPoint, Viewport};

use super::raster::Raster;
use super::style::Rgb;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatPoint {
    pub at: GeoPoint,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Colormap {
    /// Black through red and orange to near-white.
    Heat,
    /// Plain intensity ramp.
    Gray,
}

impl Colormap {
    pub fn sample(self, t: f64) -> Rgb {
        let t = t.clamp(0.0, 1.0);
        match self {
            Colormap::Gray => {
                let v = (t * 255.0 + 0.5).floor() as u8;
                [v, v, v]
            }
            Colormap::Heat => {
                const STOPS: [(f64, [f64; 3]); 4] = [
                    (0.0, [0.0, 0.0, 0.0]),
                    (0.35, [180.0, 0.0, 20.0]),
                    (0.7, [255.0, 140.0, 0.0]),
                    (1.0, [255.0, 255.0, 230.0]),
                ];
                let mut out = STOPS[3].1;
                for w in STOPS.windows(2) {
                    let (t0, c0) = w[0];
                    let (t1, c1) = w[1];
                    if t <= t1 {
                        let f = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
                        out = [
                            c0[0] + f * (c1[0] - c0[0]),
                            c0[1] + f * (c1[1] - c0[1]),
                            c0[2] + f * (c1[2] - c0[2]),
                        ];
                        break;
                    }
                }
                [
                    (out[0] + 0.5).floor() as u8,
                    (out[1] + 0.5).floor() as u8,
                    (out[2] + 0.5).floor() as u8,
                ]
            }
        }
    }
}

/// Intensity ignored below this fraction of the maximum; those pixels keep
/// the base map untouched.
const VISIBLE_THRESHOLD: f64 = 0.004;
/// Heat layer opacity over the base map.
const HEAT_ALPHA: f64 = 0.6;

/// Blends a kernel-density layer over `raster`.
///
/// Each point contributes a Gaussian of `sigma_m` meters (converted to pixels
/// through the viewport scale); the field is normalized by its own maximum,
/// so the hottest pixel always gets the top of the ramp.
pub fn render_heatmap(
    raster: &mut Raster,
    vp: &Viewport,
    points: &[HeatPoint],
    sigma_m: f64,
    colormap: Colormap,
) {
    if points.is_empty() || sigma_m <= 0.0 {
        return;
    }
    let sigma_px = sigma_m / vp.meters_per_pixel();
    let centers: Vec<(f64, f64, f64)> = points
        .iter()
        .map(|hp| {
            let (x, y) = project(vp, hp.at);
            (x, y, hp.weight)
        })
        .collect();
    let (w, h) = (raster.width(), raster.height());
    let mut field = vec![0.0f64; (w * h) as usize];
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma_px * sigma_px);
    // Contributions beyond 4 sigma are invisible after thresholding.
    let reach = 4.0 * sigma_px;
    for &(cx, cy, weight) in &centers {
        let x0 = ((cx - reach).floor().max(0.0)) as u32;
        let x1 = ((cx + reach).ceil().min(w as f64 - 1.0)).max(0.0) as u32;
        let y0 = ((cy - reach).floor().max(0.0)) as u32;
        let y1 = ((cy + reach).ceil().min(h as f64 - 1.0)).max(0.0) as u32;
        if cx + reach < 0.0 || cy + reach < 0.0 {
            continue;
        }
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                field[(y * w + x) as usize] += weight * (-(dx * dx + dy * dy) * inv_two_sigma_sq).exp();
            }
        }
    }
    let max = field.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return;
    }
    for y in 0..h {
        for x in 0..w {
            let t = field[(y * w + x) as usize] / max;
            if t > VISIBLE_THRESHOLD {
                raster.blend(x, y, colormap.sample(t), HEAT_ALPHA);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::unproject;

    fn viewport() -> Viewport {
        Viewport::new(GeoPoint { lng: 116.4, lat: 39.9 }, 15, 96, 96).unwrap()
    }

    #[test]
    fn peak_lands_on_the_point_pixel() {
        let vp = viewport();
        let mut r = Raster::new(96, 96, [100, 100, 100]);
        let at = unproject(&vp, 30.5, 40.5);
        render_heatmap(&mut r, &vp, &[HeatPoint { at, weight: 1.0 }], 25.0, Colormap::Heat);
        // The hottest pixel gets ramp(1.0) blended at 60% over gray 100:
        // 0.4*100 + 0.6*255 = 193 on the red channel.
        assert_eq!(r.get(30, 40), [193, 193, 178]);
    }

    #[test]
    fn far_pixels_keep_the_base_map() {
        let vp = viewport();
        let mut r = Raster::new(96, 96, [100, 100, 100]);
        let at = unproject(&vp, 10.5, 10.5);
        render_heatmap(&mut r, &vp, &[HeatPoint { at, weight: 1.0 }], 10.0, Colormap::Heat);
        assert_eq!(r.get(90, 90), [100, 100, 100]);
    }

    #[test]
    fn empty_input_changes_nothing() {
        let vp = viewport();
        let mut r = Raster::new(96, 96, [1, 2, 3]);
        let before = r.clone();
        render_heatmap(&mut r, &vp, &[], 25.0, Colormap::Heat);
        assert_eq!(r, before);
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(Colormap::Heat.sample(0.0), [0, 0, 0]);
        assert_eq!(Colormap::Heat.sample(1.0), [255, 255, 230]);
        assert_eq!(Colormap::Gray.sample(0.5), [128, 128, 128]);
    }

    #[test]
    fn intensity_is_normalized_per_raster() {
        // Two weights that differ by 10x still produce a full-ramp peak.
        let vp = viewport();
        let at = unproject(&vp, 48.5, 48.5);
        for weight in [0.1, 1.0] {
            let mut r = Raster::new(96, 96, [0, 0, 0]);
            render_heatmap(&mut r, &vp, &[HeatPoint { at, weight }], 25.0, Colormap::Gray);
            assert_eq!(r.get(48, 48), [153, 153, 153]); // 0.6 * 255
        }
    }
}
