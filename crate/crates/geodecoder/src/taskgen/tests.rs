use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geo::{haversine_m, unproject, GeoPoint};
use crate::render::{
    tag_by_color_name, Raster, CHANNEL_CAMERA, CHANNEL_USER, CHANNEL_WAYBILL, CHANNEL_WIFI,
    MARKER_GREEN, MARKER_RED,
};
use crate::textcodec::{format_coord, parse_coord, parse_pixel, Vocab};
use crate::worldgen::{
    aoi_at, nearest_on_polyline, nearest_road, parse_address, Aoi, MapWorld, Poi, WorldConfig,
    ELEMENT_CLASSES,
};

use super::factory::make_sample_with_id;
use super::oracle::rederive_label;
use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn make(kind: TaskKind, seed: u64) -> Sample {
    make_sample(test_world(), kind, &ViewPolicy::default(), &mut rng(seed)).unwrap()
}

fn pixels_of(raster: &Raster, color: [u8; 3]) -> Vec<(u32, u32)> {
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

// --- mix and sampling ---

#[test]
fn default_mix_is_frozen_and_proportional() {
    let mix = default_mix();
    assert_eq!(
        mix,
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
    );
    assert_eq!(mix.iter().map(|&(_, n)| n).sum::<usize>(), DEFAULT_MIX_TOTAL);

    // Production-scale per-kind counts the desk mix is scaled down from.
    let full: [f64; 8] =
        [296_636.0, 495_309.0, 5_725_200.0, 4_618_350.0, 668_622.0, 1_324_625.0, 5_198_512.0, 3_858_043.0];
    let total: f64 = full.iter().sum();
    for (&(_, n), &w) in mix.iter().zip(full.iter()) {
        let quota = DEFAULT_MIX_TOTAL as f64 * w / total;
        assert!((n as f64 - quota).abs() <= 1.0, "count {n} too far from quota {quota}");
    }
}

#[test]
fn harmonic_numbers_are_exact() {
    assert_eq!(zipf_harmonic(1), 1.0);
    assert_eq!(zipf_harmonic(2), 1.5);
    let h100 = zipf_harmonic(100);
    assert!((h100 - 5.187377517639621).abs() < 1e-14, "H(100) = {h100}");
}

#[test]
fn popularity_sampling_follows_inverse_rank() {
    let world = test_world();
    let n = world.pois.len();
    let mut r = rng(15);
    let mut counts: HashMap<u32, usize> = HashMap::new();
    let draws = 10_000;
    for _ in 0..draws {
        let poi = sample_poi_by_popularity(world, &mut r).unwrap();
        *counts.entry(poi.popularity_rank).or_default() += 1;
    }
    let h = zipf_harmonic(n);
    for rank in 1..=10u32 {
        let expected = draws as f64 / (rank as f64 * h);
        let got = *counts.get(&rank).unwrap_or(&0) as f64;
        assert!(
            (got - expected).abs() <= 0.1 * expected,
            "rank {rank}: got {got}, expected {expected}"
        );
    }
}

// --- per-kind factories ---

#[test]
fn element_sample_marks_what_the_world_says() {
    let sample = make(TaskKind::ElementId, 1);
    assert!(ELEMENT_CLASSES.contains(&sample.target_text.as_str()));
    assert!(!pixels_of(&sample.raster, MARKER_RED).is_empty());
    assert_eq!(rederive_label(test_world(), &sample).unwrap(), sample.target_text);
    truth_of(sample.kind, &sample.id, &sample.truth).unwrap();
}

#[test]
fn element_sample_at_a_chosen_point() {
    let world = test_world();
    let ring = &world.water[0].ring;
    let center = GeoPoint {
        lng: ring.iter().map(|p| p.lng).sum::<f64>() / ring.len() as f64,
        lat: ring.iter().map(|p| p.lat).sum::<f64>() / ring.len() as f64,
    };
    let want = crate::worldgen::element_at(world, center);
    let sample = element_id_at(world, center, &ViewPolicy::default(), &mut rng(5)).unwrap();
    assert_eq!(sample.target_text, want);
    assert_eq!(rederive_label(world, &sample).unwrap(), want);
}

#[test]
fn tag_sample_explains_its_symbol() {
    let sample = make(TaskKind::TagId, 2);
    let word = sample
        .input_text
        .strip_prefix("what does the ")
        .and_then(|s| s.strip_suffix(" symbol mean?"))
        .unwrap();
    let spec = tag_by_color_name(word).unwrap();
    assert_eq!(sample.target_text, spec.meaning);
    assert!(!pixels_of(&sample.raster, spec.color).is_empty());
}

#[test]
fn poi_sample_names_the_dotted_place() {
    let world = test_world();
    let sample = make(TaskKind::PoiId, 3);
    assert!(world.pois.iter().any(|p| p.name == sample.target_text));
    assert!(!pixels_of(&sample.raster, MARKER_GREEN).is_empty());
    assert_eq!(rederive_label(world, &sample).unwrap(), sample.target_text);
}

#[test]
fn aoi_sample_is_unambiguous() {
    let world = test_world();
    let sample = make(TaskKind::AoiId, 4);
    assert!(world.aois.iter().any(|a| a.name == sample.target_text));
    assert_eq!(rederive_label(world, &sample).unwrap(), sample.target_text);
}

#[test]
fn road_sample_names_the_highlighted_road() {
    let world = test_world();
    let sample = make(TaskKind::RoadId, 5);
    assert!(world.find_road(&sample.target_text).is_some());
    assert_eq!(rederive_label(world, &sample).unwrap(), sample.target_text);
}

#[test]
fn coord_sample_text_and_truth_agree_exactly() {
    let sample = make(TaskKind::CoordGen, 6);
    let Truth::Coord { lng, lat } = sample.truth else { panic!("wrong truth variant") };
    let parsed = parse_coord(&sample.target_text).unwrap();
    assert_eq!(parsed.lng, lng);
    assert_eq!(parsed.lat, lat);
    assert!(!pixels_of(&sample.raster, MARKER_RED).is_empty());
}

#[test]
fn geocoding_prompt_carries_name_and_address() {
    let world = test_world();
    let sample = make(TaskKind::Geocoding, 7);
    let poi = world
        .pois
        .iter()
        .find(|p| sample.input_text == format!("where is {}, {}?", p.name, p.address))
        .expect("prompt names a real POI");
    let Truth::Coord { lng, lat } = sample.truth else { panic!("wrong truth variant") };
    let parsed = parse_coord(&sample.target_text).unwrap();
    assert_eq!((parsed.lng, parsed.lat), (lng, lat));
    assert!(haversine_m(parsed, poi.at) < 0.2, "quantized target stays at the POI");
}

#[test]
fn reverse_geocoding_answers_with_the_address() {
    let world = test_world();
    let sample = make(TaskKind::ReverseGeocoding, 8);
    let poi = world
        .pois
        .iter()
        .find(|p| {
            sample.input_text
                == format!("what is the address of the red dot at {}?", format_coord(p.at))
        })
        .expect("prompt quotes a real POI coordinate");
    assert_eq!(sample.target_text, poi.address);
    parse_address(&sample.target_text).unwrap();
}

fn entity_by_name<'w>(world: &'w MapWorld, name: &str) -> Result<&'w Aoi, &'w Poi> {
    if let Some(a) = world.aois.iter().find(|a| a.name == name) {
        return Ok(a);
    }
    Err(world.pois.iter().find(|p| p.name == name).expect("prompt names a real entity"))
}

fn registered_child_of(child: Result<&Aoi, &Poi>, area: Result<&Aoi, &Poi>) -> bool {
    let Ok(area) = area else { return false };
    match child {
        Ok(a) => a.parent == Some(area.id),
        Err(p) => p.parent == Some(area.id),
    }
}

#[test]
fn relation_labels_match_the_world() {
    let world = test_world();
    let mut seen = [false; 3];
    for seed in 0..24 {
        let sample = make(TaskKind::ParentChild, seed);
        let q = sample
            .input_text
            .strip_prefix("what is the relation between ")
            .and_then(|s| s.strip_suffix('?'))
            .unwrap();
        let (first_name, second_name) = q.split_once(" and ").unwrap();
        let first = entity_by_name(world, first_name);
        let second = entity_by_name(world, second_name);
        let expected = if registered_child_of(second, first) {
            "first is parent"
        } else if registered_child_of(first, second) {
            "second is parent"
        } else {
            "no relation"
        };
        assert_eq!(sample.target_text, expected, "prompt: {}", sample.input_text);
        match sample.target_text.as_str() {
            "no relation" => seen[0] = true,
            "first is parent" => seen[1] = true,
            "second is parent" => seen[2] = true,
            other => panic!("unexpected label {other}"),
        }
    }
    assert!(seen.iter().all(|&s| s), "all three labels appear over 24 draws");
}

const AREA_CATEGORIES: [&str; 4] = ["office", "school", "hospital", "station"];
const INDOOR_CATEGORIES: [&str; 10] = [
    "cafe", "restaurant", "shop", "supermarket", "pharmacy", "clinic", "bank", "gym", "cinema",
    "hotel",
];

fn nearest_aoi_edge_dist(world: &MapWorld, p: GeoPoint) -> f64 {
    world
        .aois
        .iter()
        .map(|aoi| {
            let mut ring = aoi.ring.clone();
            ring.push(aoi.ring[0]);
            nearest_on_polyline(&ring, p).1
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn display_point_follows_the_category_rule() {
    let world = test_world();
    for seed in 0..10 {
        let sample = make(TaskKind::PoiCoordGen, seed);
        let name = sample
            .input_text
            .strip_prefix("where should ")
            .and_then(|s| s.strip_suffix(" be displayed?"))
            .unwrap();
        let poi = world.pois.iter().find(|p| p.name == name).unwrap();
        let Truth::Pixel { x, y, lng, lat, view } = sample.truth.clone() else {
            panic!("wrong truth variant")
        };
        assert_eq!(parse_pixel(&sample.target_text).unwrap(), (x, y));
        assert_eq!(view, sample.viewport);
        let truth_point = GeoPoint { lng, lat };

        let area = match poi.parent {
            Some(id) => Some(world.aoi(id)),
            None => aoi_at(world, poi.at),
        };
        if AREA_CATEGORIES.contains(&poi.category.as_str()) && area.is_some() {
            let c = area.unwrap().centroid();
            assert!(haversine_m(truth_point, c) < 1e-6, "area place displays at the centroid");
        } else if INDOOR_CATEGORIES.contains(&poi.category.as_str()) {
            let d = haversine_m(truth_point, poi.at);
            assert!((d - 10.0).abs() < 0.05, "indoor place displays at the wifi fix, d={d}");
        } else {
            assert!(
                nearest_aoi_edge_dist(world, truth_point) < 0.01,
                "entrance-style place displays on an area edge"
            );
        }

        // Camera and wifi reports are always drawn; every channel dot stays
        // within its channel's scatter radius of the true place.
        let camera = pixels_of(&sample.raster, CHANNEL_CAMERA);
        let wifi = pixels_of(&sample.raster, CHANNEL_WIFI);
        assert!(!camera.is_empty() && !wifi.is_empty());
        let check_range = |pixels: &[(u32, u32)], lo: f64, hi: f64, what: &str| {
            for &(px, py) in pixels {
                let p = unproject(&view, px as f64 + 0.5, py as f64 + 0.5);
                let d = haversine_m(p, poi.at);
                assert!(d >= lo && d <= hi, "{what} pixel at {d} m, expected [{lo}, {hi}]");
            }
        };
        check_range(&camera, 0.0, 35.0, "camera");
        check_range(&wifi, 0.0, 30.0, "wifi");
        check_range(&pixels_of(&sample.raster, CHANNEL_WAYBILL), 55.0, 105.0, "waybill");
        check_range(&pixels_of(&sample.raster, CHANNEL_USER), 15.0, 65.0, "user");
    }
}

#[test]
fn arrival_sample_resolves_back_to_its_road() {
    let world = test_world();
    for seed in 0..8 {
        let sample = make(TaskKind::ArrivalPoint, seed);
        let Truth::Arrival { x, y, lng, lat, road, view } = sample.truth.clone() else {
            panic!("wrong truth variant")
        };
        assert_eq!(parse_pixel(&sample.target_text).unwrap(), (x, y));
        // The text answer, mapped back to the world, lands on the stated road
        // inside the same-road scoring threshold.
        let q = unproject(&view, x as f64, y as f64);
        let (r, d, _) = nearest_road(world, q);
        assert_eq!(r.id, road);
        assert!(d <= 15.0);
        // The stored geo truth is exactly on the road centerline.
        let (_, d0, _) = nearest_on_polyline(&world.road(road).points, GeoPoint { lng, lat });
        assert!(d0 < 1e-6);
    }
}

#[test]
fn heatmap_toggle_changes_pixels_not_answers() {
    let world = test_world();
    let with = ViewPolicy::default();
    let without = ViewPolicy { arrival_heatmap: false, ..ViewPolicy::default() };
    let a = make_sample(world, TaskKind::ArrivalPoint, &with, &mut rng(9)).unwrap();
    let b = make_sample(world, TaskKind::ArrivalPoint, &without, &mut rng(9)).unwrap();
    assert_eq!(a.target_text, b.target_text);
    assert_eq!(a.truth, b.truth);
    assert_ne!(a.raster, b.raster);
}

#[test]
fn answerability_holds_across_identification_kinds() {
    let world = test_world();
    let kinds =
        [TaskKind::ElementId, TaskKind::TagId, TaskKind::PoiId, TaskKind::AoiId, TaskKind::RoadId];
    for kind in kinds {
        for seed in 0..8 {
            let sample = make(kind, seed);
            assert_eq!(
                rederive_label(world, &sample).unwrap(),
                sample.target_text,
                "{kind:?} seed {seed}"
            );
        }
    }
}

#[test]
fn prompts_and_answers_fit_the_text_windows() {
    // Desk model budgets: 160 input tokens (incl. <bos>), 64 output (incl. <eos>).
    for kind in TaskKind::ALL {
        for seed in 0..4 {
            let sample = make(kind, seed);
            assert!(sample.input_text.chars().count() + 1 <= 160, "{kind:?}: long prompt");
            assert!(sample.target_text.chars().count() + 1 <= 64, "{kind:?}: long answer");
        }
    }
}

#[test]
fn sample_content_ignores_the_id() {
    let world = test_world();
    let policy = ViewPolicy::default();
    let a = make_sample(world, TaskKind::PoiId, &policy, &mut rng(12)).unwrap();
    let b = make_sample_with_id(world, TaskKind::PoiId, &policy, &mut rng(12), "custom".into())
        .unwrap();
    assert_eq!(b.id, "custom");
    assert_eq!(a.raster, b.raster);
    assert_eq!(a.input_text, b.input_text);
    assert_eq!(a.target_text, b.target_text);
}

#[test]
fn worlds_without_nesting_cannot_pose_relation_questions() {
    let cfg = WorldConfig { n_child_aois: 0, parent_fraction: 0.0, ..WorldConfig::tiny() };
    let world = crate::worldgen::generate_world(&cfg, 3).unwrap();
    let policy = ViewPolicy::default();
    let mut hit = false;
    for seed in 0..30 {
        match make_sample(&world, TaskKind::ParentChild, &policy, &mut rng(seed)) {
            Err(TaskGenError::MissingPrerequisite { kind: TaskKind::ParentChild, .. }) => {
                hit = true;
                break;
            }
            Ok(sample) => assert_eq!(sample.target_text, "no relation"),
            Err(e) => panic!("unexpected error {e}"),
        }
    }
    assert!(hit, "a parent-needing label must be reported as unposable");
}

// --- truth validation ---

#[test]
fn truth_of_checks_kind_against_payload() {
    let label = Truth::Label { value: "x".into() };
    let coord = Truth::Coord { lng: 116.4, lat: 39.9 };
    truth_of(TaskKind::PoiId, "a", &label).unwrap();
    truth_of(TaskKind::CoordGen, "b", &coord).unwrap();
    let err = truth_of(TaskKind::CoordGen, "c", &label).unwrap_err();
    assert!(matches!(err, TaskGenError::TruthMismatch { kind: TaskKind::CoordGen, .. }));
    let err = truth_of(TaskKind::ArrivalPoint, "d", &coord).unwrap_err();
    assert!(matches!(err, TaskGenError::TruthMismatch { kind: TaskKind::ArrivalPoint, .. }));
}

#[test]
fn kind_names_match_their_serialized_forms() {
    for kind in TaskKind::ALL {
        let json = serde_json::to_string(&kind).unwrap();
        assert_eq!(json, format!("\"{}\"", kind.name()));
    }
}

// --- dataset assembly ---

#[test]
fn single_kind_mix_yields_only_that_kind() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_dataset(
        test_world(),
        &[(TaskKind::TagId, 10)],
        &ViewPolicy::default(),
        0,
        dir.path(),
    )
    .unwrap();
    assert_eq!(manifest.rows.len(), 10);
    assert!(manifest.rows.iter().all(|r| r.kind == TaskKind::TagId));
}

#[test]
fn dataset_directory_is_complete_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let mix = [(TaskKind::TagId, 6), (TaskKind::CoordGen, 4)];
    let manifest =
        build_dataset(test_world(), &mix, &ViewPolicy::default(), 1, dir.path()).unwrap();

    assert_eq!(manifest.rows.len(), 10);
    let ids: Vec<&str> = manifest.rows.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids[0], "tag_id-00000");
    assert_eq!(ids[5], "tag_id-00005");
    assert_eq!(ids[6], "coord_gen-00000");

    let vocab = Vocab::load(&dir.path().join("vocab.txt")).unwrap();
    for row in &manifest.rows {
        assert_eq!(row.split, split_of(&row.id));
        vocab.encode(&row.input_text).unwrap();
        vocab.encode(&row.target_text).unwrap();
        let image = row.load_image(dir.path()).unwrap();
        assert_eq!(image.width(), 96);
        truth_of(row.kind, &row.id, &row.truth).unwrap();
    }

    let loaded = load_manifest(&dir.path().join("manifest.jsonl")).unwrap();
    assert_eq!(loaded, manifest);
}

#[test]
fn dataset_builds_are_byte_identical() {
    let mix = [(TaskKind::TagId, 3), (TaskKind::PoiId, 2), (TaskKind::ArrivalPoint, 2)];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = build_dataset(test_world(), &mix, &ViewPolicy::default(), 4, a.path()).unwrap();
    let _ = build_dataset(test_world(), &mix, &ViewPolicy::default(), 4, b.path()).unwrap();

    let bytes = |root: &std::path::Path, rel: &str| std::fs::read(root.join(rel)).unwrap();
    assert_eq!(bytes(a.path(), "manifest.jsonl"), bytes(b.path(), "manifest.jsonl"));
    assert_eq!(bytes(a.path(), "vocab.txt"), bytes(b.path(), "vocab.txt"));
    for row in &ma.rows {
        assert_eq!(bytes(a.path(), &row.image), bytes(b.path(), &row.image), "{}", row.id);
    }
}

#[test]
fn split_hashing_is_near_the_quota() {
    let mut counts = [0usize; 3];
    let n = 10_000;
    for i in 0..n {
        let id = format!("poi_id-{i:05}");
        match split_of(&id) {
            Split::Train => counts[0] += 1,
            Split::Val => counts[1] += 1,
            Split::Test => counts[2] += 1,
        }
    }
    let frac = |c: usize| c as f64 / n as f64;
    assert!((frac(counts[0]) - 0.90).abs() < 0.02, "train {}", counts[0]);
    assert!((frac(counts[1]) - 0.05).abs() < 0.01, "val {}", counts[1]);
    assert!((frac(counts[2]) - 0.05).abs() < 0.01, "test {}", counts[2]);
}

#[test]
fn manifest_rejects_unknown_format() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.jsonl");
    std::fs::write(&path, "{\"manifest_format\":9,\"n\":0,\"seed\":0}\n").unwrap();
    let err = load_manifest(&path).unwrap_err();
    assert!(matches!(err, TaskGenError::UnsupportedFormat(9)));
}

#[test]
fn manifest_rejects_kind_truth_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.jsonl");
    let row = "{\"id\":\"coord_gen-00000\",\"kind\":\"coord_gen\",\"image\":\"images/x.ppm\",\
               \"input_text\":\"q\",\"target_text\":\"a\",\
               \"truth\":{\"type\":\"label\",\"value\":\"a\"},\"split\":\"train\"}";
    std::fs::write(&path, format!("{{\"manifest_format\":1,\"n\":1,\"seed\":0}}\n{row}\n"))
        .unwrap();
    let err = load_manifest(&path).unwrap_err();
    assert!(matches!(err, TaskGenError::TruthMismatch { kind: TaskKind::CoordGen, .. }));
}

#[test]
fn manifest_rejects_row_count_drift() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.jsonl");
    std::fs::write(&path, "{\"manifest_format\":1,\"n\":2,\"seed\":0}\n").unwrap();
    let err = load_manifest(&path).unwrap_err();
    assert!(matches!(err, TaskGenError::BadManifest { .. }));
}
