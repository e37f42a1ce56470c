//! Map palette and tag symbol table.
//!
//! Every class of element gets a distinct color, and classification goes the
//! other way: a palette color identifies its element class exactly. Marker
//! and highlight colors are separate from the base palette so overlays never
//! masquerade as map elements.

use serde::{Deserialize, Serialize};

use crate::worldgen::AoiKind;

pub type Rgb = [u8; 3];

/// Base map colors. The default palette is pairwise distinct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Style {
    pub background: Rgb,
    pub water: Rgb,
    pub green: Rgb,
    pub road_minor: Rgb,
    pub road_major: Rgb,
    pub residential_fill: Rgb,
    pub residential_outline: Rgb,
    pub campus_fill: Rgb,
    pub campus_outline: Rgb,
    pub park_fill: Rgb,
    pub park_outline: Rgb,
    pub mall_fill: Rgb,
    pub mall_outline: Rgb,
    pub office_fill: Rgb,
    pub office_outline: Rgb,
}

impl Default for Style {
    fn default() -> Self {
        Style {
            background: [240, 238, 230],
            water: [140, 180, 245],
            green: [190, 225, 170],
            road_minor: [252, 252, 252],
            road_major: [250, 210, 120],
            residential_fill: [255, 225, 215],
            residential_outline: [205, 140, 120],
            campus_fill: [225, 215, 245],
            campus_outline: [150, 120, 200],
            park_fill: [205, 235, 190],
            park_outline: [110, 170, 90],
            mall_fill: [255, 215, 235],
            mall_outline: [210, 110, 170],
            office_fill: [215, 230, 250],
            office_outline: [110, 140, 190],
        }
    }
}

impl Style {
    pub fn aoi_fill(&self, kind: AoiKind) -> Rgb {
        match kind {
            AoiKind::Residential => self.residential_fill,
            AoiKind::Campus => self.campus_fill,
            AoiKind::Park => self.park_fill,
            AoiKind::Mall => self.mall_fill,
            AoiKind::OfficeArea => self.office_fill,
        }
    }

    pub fn aoi_outline(&self, kind: AoiKind) -> Rgb {
        match kind {
            AoiKind::Residential => self.residential_outline,
            AoiKind::Campus => self.campus_outline,
            AoiKind::Park => self.park_outline,
            AoiKind::Mall => self.mall_outline,
            AoiKind::OfficeArea => self.office_outline,
        }
    }

    pub fn palette(&self) -> Vec<(Rgb, &'static str)> {
        let mut out = vec![
            (self.background, "open area"),
            (self.water, "water"),
            (self.green, "green area"),
            (self.road_minor, "minor road"),
            (self.road_major, "major road"),
        ];
        for kind in AoiKind::ALL {
            out.push((self.aoi_fill(kind), kind.class_name()));
            out.push((self.aoi_outline(kind), kind.class_name()));
        }
        out
    }

    /// Element class of an exact palette color, if it is one.
    pub fn classify(&self, color: Rgb) -> Option<&'static str> {
        self.palette().into_iter().find(|&(c, _)| c == color).map(|(_, name)| name)
    }
}

/// On-map symbol: a colored marker whose color names it in prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagSpec {
    /// Letter drawn in the disc; `None` renders a plain diamond.
    pub letter: Option<char>,
    pub color: Rgb,
    /// Color word used in prompts ("what does the {color_name} symbol mean?").
    pub color_name: &'static str,
    /// The answer: what the symbol stands for.
    pub meaning: &'static str,
}

/// The full symbol legend. Colors are unique so a color word picks exactly
/// one tag.
pub const TAGS: [TagSpec; 8] = [
    TagSpec { letter: Some('P'), color: [60, 90, 220], color_name: "blue", meaning: "parking lot" },
    TagSpec { letter: Some('G'), color: [120, 120, 120], color_name: "gray", meaning: "gate" },
    TagSpec { letter: None, color: [20, 20, 25], color_name: "black", meaning: "camera capture point" },
    TagSpec { letter: Some('H'), color: [200, 40, 60], color_name: "red", meaning: "hospital" },
    TagSpec { letter: Some('S'), color: [40, 160, 80], color_name: "green", meaning: "subway station" },
    TagSpec { letter: Some('W'), color: [110, 200, 235], color_name: "light blue", meaning: "signal base station" },
    TagSpec { letter: Some('B'), color: [235, 150, 40], color_name: "orange", meaning: "bus stop" },
    TagSpec { letter: Some('F'), color: [210, 190, 40], color_name: "yellow", meaning: "fuel station" },
];

pub fn tag_by_color_name(name: &str) -> Option<&'static TagSpec> {
    TAGS.iter().find(|t| t.color_name == name)
}

/// Overlay marker colors, distinct from the base palette.
pub const MARKER_RED: Rgb = [230, 20, 20];
pub const MARKER_GREEN: Rgb = [20, 170, 40];
pub const HIGHLIGHT_BLUE_FILL: Rgb = [70, 110, 235];
pub const HIGHLIGHT_BLUE_OUTLINE: Rgb = [25, 50, 180];
pub const HIGHLIGHT_ORANGE: Rgb = [245, 140, 25];
pub const DISTRICT_OUTLINE: Rgb = [150, 60, 200];

/// Location-channel colors for the coordinate-evidence task.
pub const CHANNEL_CAMERA: Rgb = [230, 20, 20];
pub const CHANNEL_WAYBILL: Rgb = [240, 130, 20];
pub const CHANNEL_USER: Rgb = [150, 60, 200];
pub const CHANNEL_WIFI: Rgb = [30, 190, 210];
