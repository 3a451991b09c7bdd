//! Binary PPM (P6) reading and writing.

use super::{CorpusError, RgbImage};
use std::io::Write;
use std::path::Path;

pub fn encode(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.pixels);
    out
}

pub fn write(path: &Path, image: &RgbImage) -> Result<(), CorpusError> {
    let mut f = std::fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
    f.write_all(&encode(image))
        .map_err(|e| CorpusError::io(path, e))
}

pub fn read(path: &Path) -> Result<RgbImage, CorpusError> {
    let bytes = std::fs::read(path).map_err(|e| CorpusError::io(path, e))?;
    decode(&bytes).map_err(|detail| CorpusError::MalformedFile {
        path: path.display().to_string(),
        detail,
    })
}

pub fn decode(bytes: &[u8]) -> Result<RgbImage, String> {
    let mut pos = 0usize;
    let magic = header_token(bytes, &mut pos)?;
    if magic != "P6" {
        return Err(format!("expected P6 magic, found {magic:?}"));
    }
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(format!("only 8-bit PPM is supported (maxval {maxval})"));
    }
    if width == 0 || height == 0 {
        return Err("zero image dimension".into());
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing separator before pixel data".into());
    }
    pos += 1;
    let expected = width as usize * height as usize * 3;
    let raster = &bytes[pos..];
    if raster.len() < expected {
        return Err(format!(
            "pixel data truncated: {} of {expected} bytes",
            raster.len()
        ));
    }
    Ok(RgbImage {
        width,
        height,
        pixels: raster[..expected].to_vec(),
    })
}

fn header_token(bytes: &[u8], pos: &mut usize) -> Result<String, String> {
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
        return Err("unexpected end of header".into());
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32, String> {
    let tok = header_token(bytes, pos)?;
    tok.parse()
        .map_err(|_| format!("invalid {what} in header: {tok:?}"))
}
