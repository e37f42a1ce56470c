//! Name pools and the uniqueness-enforcing generator.
//!
//! Everything is invented but shaped like transliterated street atlases so
//! the text tasks read naturally. Lengths are capped so the longest composed
//! address stays within the text budget of the model.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::AoiKind;

const CITY: &str = "Jinghua";

const DISTRICTS: [&str; 4] = ["Haiyun", "Qingxi", "Luming", "Dongyuan"];

const PREFIXES: [&str; 64] = [
    "Anhe", "Baiyang", "Beixin", "Changle", "Chenguang", "Chunhua", "Deshan", "Dongfeng",
    "Dongyue", "Emei", "Fenglin", "Furong", "Gaoxin", "Guyun", "Haitang", "Hehua",
    "Heping", "Hongmei", "Huaxi", "Huimin", "Jianguo", "Jinsong", "Jinxiu", "Kunlun",
    "Lantian", "Liuyun", "Longquan", "Luxia", "Meiyuan", "Minzhu", "Nanhu", "Ningyuan",
    "Oulu", "Panshan", "Qingfeng", "Qinghe", "Qingpu", "Renhe", "Ruiyun", "Sanhe",
    "Shuangyu", "Shuiyun", "Songzhu", "Taoyuan", "Tianlun", "Tongji", "Wanliu", "Weiming",
    "Wenhua", "Wuyi", "Xihe", "Xingfu", "Xinghai", "Xinyuan", "Yanshan", "Yinghua",
    "Yongan", "Yudai", "Yuehai", "Yunhe", "Zhenxing", "Zhufeng", "Zizhu", "Ziyun",
];

const STREET_SUFFIXES: [&str; 4] = ["Road", "Street", "Avenue", "Lane"];

const CHILD_AOI_SUFFIXES: [&str; 10] = [
    "North Wing", "South Wing", "East Wing", "West Wing", "Annex",
    "Block A", "Block B", "Block C", "Phase 2", "Phase 3",
];

/// Child POI suffixes with the category they imply.
const CHILD_POI_SUFFIXES: [(&str, &str); 17] = [
    ("East Gate", "gate"),
    ("West Gate", "gate"),
    ("South Gate", "gate"),
    ("North Gate", "gate"),
    ("Building 1", "office"),
    ("Building 2", "office"),
    ("Building 3", "office"),
    ("Building 5", "office"),
    ("Reception", "office"),
    ("Canteen", "restaurant"),
    ("Cafe", "cafe"),
    ("Parking", "parking"),
    ("Tower A", "office"),
    ("Tower B", "office"),
    ("Front Desk", "hotel"),
    ("Metro Exit", "station"),
    ("Mini Mart", "shop"),
];

/// Free-standing POI categories with the trailing word used in names.
const FREE_POI_CATEGORIES: [(&str, &str); 14] = [
    ("restaurant", "Restaurant"),
    ("cafe", "Cafe"),
    ("shop", "Shop"),
    ("hotel", "Hotel"),
    ("office", "Office"),
    ("school", "School"),
    ("hospital", "Hospital"),
    ("bank", "Bank"),
    ("gym", "Gym"),
    ("supermarket", "Market"),
    ("pharmacy", "Pharmacy"),
    ("cinema", "Cinema"),
    ("station", "Station"),
    ("clinic", "Clinic"),
];

fn aoi_words(kind: AoiKind) -> &'static [&'static str] {
    match kind {
        AoiKind::Residential => &["Community", "Garden", "Court", "Residence"],
        AoiKind::Campus => &["Campus", "College", "Academy", "Institute"],
        AoiKind::Park => &["Park", "Green", "Commons"],
        AoiKind::Mall => &["Mall", "Plaza", "Market", "Outlets"],
        AoiKind::OfficeArea => &["Center", "Tower", "Hub", "Exchange"],
    }
}

pub struct NameGen {
    used: HashSet<String>,
    free_poi_cursor: usize,
}

impl NameGen {
    pub fn new() -> Self {
        NameGen { used: HashSet::new(), free_poi_cursor: 0 }
    }

    pub fn city(&self) -> String {
        CITY.to_string()
    }

    pub fn district(&self, i: usize) -> String {
        DISTRICTS[i % DISTRICTS.len()].to_string()
    }

    /// Street names enumerate (prefix, suffix) pairs, so the first 256 are
    /// unique without bookkeeping.
    pub fn street(&mut self, i: usize) -> String {
        let name = format!(
            "{} {}",
            PREFIXES[i % PREFIXES.len()],
            STREET_SUFFIXES[(i / PREFIXES.len()) % STREET_SUFFIXES.len()]
        );
        self.claim(name)
    }

    pub fn aoi(&mut self, rng: &mut ChaCha8Rng, kind: AoiKind) -> String {
        let words = aoi_words(kind);
        let name = format!(
            "{} {}",
            PREFIXES.choose(rng).unwrap(),
            words[rng.gen_range(0..words.len())]
        );
        self.claim(name)
    }

    /// Nested AOI: parent name plus a wing/block/phase suffix.
    pub fn child(&mut self, rng: &mut ChaCha8Rng, parent: &str) -> String {
        let suffix = CHILD_AOI_SUFFIXES[rng.gen_range(0..CHILD_AOI_SUFFIXES.len())];
        self.claim(format!("{parent} {suffix}"))
    }

    pub fn poi_child(&mut self, rng: &mut ChaCha8Rng, parent: &str) -> (String, String) {
        let (suffix, category) = CHILD_POI_SUFFIXES[rng.gen_range(0..CHILD_POI_SUFFIXES.len())];
        (self.claim(format!("{parent} {suffix}")), category.to_string())
    }

    pub fn poi_free(&mut self, rng: &mut ChaCha8Rng) -> (String, String) {
        // Cycle categories so every kind of place exists, pick prefixes freely.
        let (category, word) = FREE_POI_CATEGORIES[self.free_poi_cursor % FREE_POI_CATEGORIES.len()];
        self.free_poi_cursor += 1;
        let name = format!("{} {}", PREFIXES.choose(rng).unwrap(), word);
        (self.claim(name), category.to_string())
    }

    /// Returns the name, suffixed with a counter when already taken.
    fn claim(&mut self, name: String) -> String {
        if self.used.insert(name.clone()) {
            return name;
        }
        let mut k = 2;
        loop {
            let candidate = format!("{name} {k}");
            if self.used.insert(candidate.clone()) {
                return candidate;
            }
            k += 1;
        }
    }
}
