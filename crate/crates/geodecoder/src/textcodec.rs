//! Character-level tokenizer and the numeric text formats.
//!
//! The vocabulary is four specials followed by every distinct character of
//! the training corpus, sorted by codepoint. Coordinates always print
//! longitude first with six decimals; pixels print as `x=<col>,y=<row>` with
//! halves rounding up.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::geo::GeoPoint;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const SEP: usize = 3;
/// Number of special ids preceding the character table.
pub const N_SPECIALS: usize = 4;

pub const SPECIAL_NAMES: [&str; N_SPECIALS] = ["<pad>", "<bos>", "<eos>", "<sep>"];

#[derive(Debug, Error, PartialEq)]
pub enum TextCodecError {
    #[error("character {ch:?} at byte {at} is not in the vocabulary")]
    UnknownChar { ch: char, at: usize },
    #[error("token id {0} out of range for vocabulary of {1}")]
    IdOutOfRange(usize, usize),
    #[error("bad vocab file at line {line}: {detail}")]
    BadVocabFile { line: usize, detail: String },
    #[error("bad coordinate string {0:?}: expected '<lng>,<lat>' in decimal degrees")]
    BadCoord(String),
    #[error("bad pixel string {0:?}: expected 'x=<int>,y=<int>'")]
    BadPixel(String),
}

/// Immutable character vocabulary with reserved special ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    chars: Vec<char>,
}

impl Vocab {
    /// Builds from a corpus: distinct characters, codepoint order.
    pub fn from_corpus<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<char> = texts.into_iter().flat_map(|t| t.chars()).collect();
        Vocab { chars: set.into_iter().collect() }
    }

    /// Total id count including specials.
    pub fn len(&self) -> usize {
        N_SPECIALS + self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn id_of(&self, c: char) -> Option<usize> {
        self.chars.binary_search(&c).ok().map(|i| i + N_SPECIALS)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>, TextCodecError> {
        let mut out = Vec::with_capacity(text.len());
        for (at, ch) in text.char_indices() {
            out.push(self.id_of(ch).ok_or(TextCodecError::UnknownChar { ch, at })?);
        }
        Ok(out)
    }

    /// Inverse of `encode`; special ids render as empty strings so decoded
    /// generations read as plain text.
    pub fn decode(&self, ids: &[usize]) -> Result<String, TextCodecError> {
        let mut out = String::with_capacity(ids.len());
        for &id in ids {
            if id >= self.len() {
                return Err(TextCodecError::IdOutOfRange(id, self.len()));
            }
            if id >= N_SPECIALS {
                out.push(self.chars[id - N_SPECIALS]);
            }
        }
        Ok(out)
    }

    /// `decode` that never fails: ids past the table render as U+FFFD.
    /// Model output is not guaranteed to stay inside the dataset charset, so
    /// consumers of generations use this.
    pub fn decode_lossy(&self, ids: &[usize]) -> String {
        let mut out = String::with_capacity(ids.len());
        for &id in ids {
            if id >= self.len() {
                out.push('\u{FFFD}');
            } else if id >= N_SPECIALS {
                out.push(self.chars[id - N_SPECIALS]);
            }
        }
        out
    }

    /// One token per line; the line number is the token id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for name in SPECIAL_NAMES {
            out.push_str(name);
            out.push('\n');
        }
        for &c in &self.chars {
            out.push(c);
            out.push('\n');
        }
        out
    }

    pub fn from_text(s: &str) -> Result<Self, TextCodecError> {
        let bad = |line: usize, detail: String| TextCodecError::BadVocabFile { line, detail };
        let mut lines = s.lines().enumerate();
        for want in SPECIAL_NAMES {
            match lines.next() {
                Some((_, got)) if got == want => {}
                Some((i, got)) => {
                    return Err(bad(i, format!("expected special token {want}, found {got:?}")))
                }
                None => return Err(bad(0, format!("missing special token {want}"))),
            }
        }
        let mut chars = Vec::new();
        for (i, line) in lines {
            let mut it = line.chars();
            let c = it
                .next()
                .ok_or_else(|| bad(i, "empty token line".to_string()))?;
            if it.next().is_some() {
                return Err(bad(i, format!("token {line:?} is not a single character")));
            }
            if chars.last().is_some_and(|&prev| prev >= c) {
                return Err(bad(i, format!("token {c:?} out of codepoint order")));
            }
            chars.push(c);
        }
        Ok(Vocab { chars })
    }

    pub fn save(&self, path: &std::path::Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_text())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, TextCodecError> {
        let s = std::fs::read_to_string(path).map_err(|e| TextCodecError::BadVocabFile {
            line: 0,
            detail: format!("{}: {e}", path.display()),
        })?;
        Self::from_text(&s)
    }
}

/// `"<lng>,<lat>"`, six decimals, longitude first.
pub fn format_coord(p: GeoPoint) -> String {
    format!("{:.6},{:.6}", p.lng, p.lat)
}

pub fn parse_coord(s: &str) -> Result<GeoPoint, TextCodecError> {
    let err = || TextCodecError::BadCoord(s.to_string());
    let (lng_s, lat_s) = s.split_once(',').ok_or_else(err)?;
    let lng: f64 = lng_s.trim().parse().map_err(|_| err())?;
    let lat: f64 = lat_s.trim().parse().map_err(|_| err())?;
    GeoPoint::new(lng, lat).map_err(|_| err())
}

/// Half-up rounding to an integer pixel index.
pub fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

/// `"x=<col>,y=<row>"` from fractional pixel coordinates.
pub fn format_pixel(x: f64, y: f64) -> String {
    format!("x={},y={}", round_half_up(x), round_half_up(y))
}

pub fn parse_pixel(s: &str) -> Result<(i64, i64), TextCodecError> {
    let err = || TextCodecError::BadPixel(s.to_string());
    let (xs, ys) = s.split_once(',').ok_or_else(err)?;
    let x = xs.strip_prefix("x=").ok_or_else(err)?.trim().parse().map_err(|_| err())?;
    let y = ys.strip_prefix("y=").ok_or_else(err)?.trim().parse().map_err(|_| err())?;
    Ok((x, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab() -> Vocab {
        Vocab::from_corpus(["what is here?", "x=12,y=40", "116.400000,39.900000", "Anhe Road 5号"])
    }

    #[test]
    fn special_ids_are_fixed() {
        assert_eq!((PAD, BOS, EOS, SEP), (0, 1, 2, 3));
    }

    #[test]
    fn character_ids_follow_codepoint_order() {
        let v = vocab();
        // ',' < '.' < digits < '=' < '?' < letters in codepoint order.
        let comma = v.id_of(',').unwrap();
        let dot = v.id_of('.').unwrap();
        let zero = v.id_of('0').unwrap();
        let hao = v.id_of('号').unwrap();
        assert!(comma < dot && dot < zero);
        assert_eq!(hao, v.len() - 1, "号 sorts last");
        assert!(v.id_of('!').is_none());
    }

    #[test]
    fn encode_decode_round_trips() {
        let v = vocab();
        for text in ["what is here?", "x=12,y=40", "Anhe Road 5号"] {
            let ids = v.encode(text).unwrap();
            assert_eq!(v.decode(&ids).unwrap(), text);
            assert!(ids.iter().all(|&id| id >= N_SPECIALS && id < v.len()));
        }
    }

    #[test]
    fn unknown_characters_report_position() {
        let v = vocab();
        assert_eq!(
            v.encode("what!"),
            Err(TextCodecError::UnknownChar { ch: '!', at: 4 })
        );
    }

    #[test]
    fn decode_skips_specials_and_rejects_junk_ids() {
        let v = vocab();
        let mut ids = vec![BOS];
        ids.extend(v.encode("ah").unwrap());
        ids.push(EOS);
        assert_eq!(v.decode(&ids).unwrap(), "ah");
        assert_eq!(v.decode(&[v.len()]), Err(TextCodecError::IdOutOfRange(v.len(), v.len())));

        let mut ids = v.encode("a").unwrap();
        ids.push(v.len() + 7);
        ids.push(PAD);
        assert_eq!(v.decode_lossy(&ids), "a\u{FFFD}");
    }

    #[test]
    fn vocab_file_round_trips_with_line_number_as_id() {
        let v = vocab();
        let text = v.to_text();
        assert_eq!(Vocab::from_text(&text).unwrap(), v);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(&lines[..4], &["<pad>", "<bos>", "<eos>", "<sep>"]);
        // Line number = id: the space character lands on its encode id.
        let space_id = v.id_of(' ').unwrap();
        assert_eq!(lines[space_id], " ");
    }

    #[test]
    fn vocab_rejects_malformed_files() {
        assert!(matches!(
            Vocab::from_text("<pad>\n<bos>\n<eos>\n"),
            Err(TextCodecError::BadVocabFile { .. })
        ));
        assert!(Vocab::from_text("<pad>\n<bos>\n<eos>\n<sep>\nab\n").is_err());
        assert!(Vocab::from_text("<pad>\n<bos>\n<eos>\n<sep>\nb\na\n").is_err());
        assert!(Vocab::from_text("<pad>\n<bos>\n<eos>\nwrong\na\n").is_err());
    }

    #[test]
    fn coord_format_is_lng_first_six_decimals() {
        let p = GeoPoint { lng: 116.51963, lat: 39.774726 };
        assert_eq!(format_coord(p), "116.519630,39.774726");
    }

    #[test]
    fn coord_parse_rejects_garbage() {
        assert!(parse_coord("116.5").is_err());
        assert!(parse_coord("abc,39.9").is_err());
        assert!(parse_coord("200.0,39.9").is_err());
        assert!(parse_coord("116.4,95.0").is_err());
    }

    #[test]
    fn pixel_format_rounds_half_up() {
        assert_eq!(format_pixel(12.5, 40.49), "x=13,y=40");
        assert_eq!(format_pixel(0.5, 1.5), "x=1,y=2");
        assert_eq!(format_pixel(2.4, -0.5), "x=2,y=0");
        assert_eq!(parse_pixel("x=13,y=40").unwrap(), (13, 40));
        assert!(parse_pixel("13,40").is_err());
        assert!(parse_pixel("x=a,y=1").is_err());
    }

    proptest! {
        #[test]
        fn coord_round_trip_is_within_quantization(
            lng in -180.0f64..180.0,
            lat in -90.0f64..90.0,
        ) {
            let p = GeoPoint { lng, lat };
            let q = parse_coord(&format_coord(p)).unwrap();
            // Six decimals quantize at 5e-7 degrees.
            prop_assert!((q.lng - p.lng).abs() <= 5.0e-7);
            prop_assert!((q.lat - p.lat).abs() <= 5.0e-7);
        }

        #[test]
        fn any_corpus_string_round_trips(s in "[ -~]{0,40}") {
            let v = Vocab::from_corpus([s.as_str()]);
            let ids = v.encode(&s).unwrap();
            prop_assert_eq!(v.decode(&ids).unwrap(), s);
        }

        #[test]
        fn pixel_round_trip(x in -10_000i64..10_000, y in -10_000i64..10_000) {
            let s = format_pixel(x as f64, y as f64);
            prop_assert_eq!(parse_pixel(&s).unwrap(), (x, y));
        }
    }
}
