//! RGB8 raster with binary PPM (P6) serialization.

use std::io::{Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("ppm parse error at byte {offset}: {detail}")]
    Ppm { offset: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major RGB8 image. All rendering is byte-exact: the same scene always
/// produces the same pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Raster {
    pub fn new(width: u32, height: u32, fill: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity((width * height * 3) as usize);
        for _ in 0..width * height {
            data.extend_from_slice(&fill);
        }
        Raster { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, color: [u8; 3]) {
        let i = ((y * self.width + x) * 3) as usize;
        self.data[i..i + 3].copy_from_slice(&color);
    }

    /// Alpha-blends `color` over the pixel; `alpha` 0 keeps the base, 1
    /// replaces it. Channels round half up.
    pub fn blend(&mut self, x: u32, y: u32, color: [u8; 3], alpha: f64) {
        let base = self.get(x, y);
        let mut out = [0u8; 3];
        for c in 0..3 {
            let v = (1.0 - alpha) * base[c] as f64 + alpha * color[c] as f64;
            out[c] = (v + 0.5).floor().clamp(0.0, 255.0) as u8;
        }
        self.set(x, y, out);
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn write_ppm(&self, mut w: impl Write) -> Result<(), RasterError> {
        w.write_all(&self.to_ppm())?;
        Ok(())
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self, RasterError> {
        let mut pos = 0usize;
        let magic = take_token(bytes, &mut pos)?;
        if magic != b"P6" {
            return Err(RasterError::Ppm {
                offset: 0,
                detail: format!("magic {:?}, expected P6", String::from_utf8_lossy(magic)),
            });
        }
        let width = parse_int(bytes, &mut pos)?;
        let height = parse_int(bytes, &mut pos)?;
        let maxval = parse_int(bytes, &mut pos)?;
        if maxval != 255 {
            return Err(RasterError::Ppm { offset: pos, detail: format!("maxval {maxval}, expected 255") });
        }
        // Exactly one whitespace byte separates the header from pixel data.
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(RasterError::Ppm { offset: pos, detail: "missing whitespace before pixel data".into() });
        }
        pos += 1;
        let need = (width * height * 3) as usize;
        if bytes.len() - pos < need {
            return Err(RasterError::Ppm {
                offset: pos,
                detail: format!("expected {need} pixel bytes, found {}", bytes.len() - pos),
            });
        }
        Ok(Raster { width, height, data: bytes[pos..pos + need].to_vec() })
    }

    pub fn read_ppm(mut r: impl Read) -> Result<Self, RasterError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_ppm(&bytes)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), RasterError> {
        Ok(std::fs::write(path, self.to_ppm())?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, RasterError> {
        Self::from_ppm(&std::fs::read(path)?)
    }
}

/// Advances past whitespace and `#` comments, then returns the next token.
fn take_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8], RasterError> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(RasterError::Ppm { offset: start, detail: "unexpected end of header".into() });
    }
    Ok(&bytes[start..*pos])
}

fn parse_int(bytes: &[u8], pos: &mut usize) -> Result<u32, RasterError> {
    let tok = take_token(bytes, pos)?;
    let start = *pos - tok.len();
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| RasterError::Ppm {
            offset: start,
            detail: format!("bad integer {:?}", String::from_utf8_lossy(tok)),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trips() {
        let mut r = Raster::new(3, 2, [10, 20, 30]);
        r.set(2, 1, [255, 0, 128]);
        let bytes = r.to_ppm();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        let back = Raster::from_ppm(&bytes).unwrap();
        assert_eq!(r, back);
    }

    #[test]
    fn reader_accepts_comments_and_extra_whitespace() {
        let mut bytes = b"P6 # banner\n# size\n  3\t2\n255\n".to_vec();
        bytes.extend_from_slice(&[7u8; 18]);
        let r = Raster::from_ppm(&bytes).unwrap();
        assert_eq!((r.width(), r.height()), (3, 2));
        assert_eq!(r.get(0, 0), [7, 7, 7]);
    }

    #[test]
    fn reader_reports_offsets_for_garbage() {
        let err = Raster::from_ppm(b"P5\n1 1\n255\n\x00\x00\x00").unwrap_err();
        assert!(matches!(err, RasterError::Ppm { offset: 0, .. }), "{err}");
        let err = Raster::from_ppm(b"P6\n1 x\n255\n").unwrap_err();
        let RasterError::Ppm { offset, .. } = err else { panic!() };
        assert_eq!(offset, 5);
        let err = Raster::from_ppm(b"P6\n2 2\n255\n\x01\x02").unwrap_err();
        assert!(format!("{err}").contains("expected 12 pixel bytes"));
    }

    #[test]
    fn blend_rounds_half_up() {
        let mut r = Raster::new(1, 1, [0, 0, 0]);
        r.blend(0, 0, [255, 1, 100], 0.5);
        // 127.5 rounds to 128, 0.5 to 1, 50 stays 50.
        assert_eq!(r.get(0, 0), [128, 1, 50]);
    }

    #[test]
    fn identical_scenes_share_bytes() {
        let a = Raster::new(16, 16, [1, 2, 3]).to_ppm();
        let b = Raster::new(16, 16, [1, 2, 3]).to_ppm();
        assert_eq!(a, b);
    }
}
