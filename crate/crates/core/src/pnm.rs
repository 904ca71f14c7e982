//! Portable graymap / pixmap reading (P2, P3, P5, P6) and writing (P5, P6).
//!
//! Samples are scaled to `[0, 1]` by the declared maxval on load. Writing
//! quantizes with `round(255 * v)`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{MultiChannelField, ScalarField};

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: u32,
    data_start: usize,
}

fn skip_ws_and_comments(buf: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < buf.len() && buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < buf.len() && buf[pos] == b'#' {
            while pos < buf.len() && buf[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn read_uint(buf: &[u8], pos: &mut usize, what: &str) -> Result<u32> {
    *pos = skip_ws_and_comments(buf, *pos);
    let start = *pos;
    while *pos < buf.len() && buf[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::MalformedImage(format!("expected {what}")));
    }
    std::str::from_utf8(&buf[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::MalformedImage(format!("{what} does not fit in 32 bits")))
}

fn parse_header(buf: &[u8]) -> Result<Header> {
    if buf.len() < 2 || buf[0] != b'P' {
        return Err(Error::MalformedImage("missing P-magic".into()));
    }
    let magic = [buf[0], buf[1]];
    if !matches!(magic[1], b'2' | b'3' | b'5' | b'6') {
        return Err(Error::UnsupportedFormat(
            String::from_utf8_lossy(&magic).into_owned(),
        ));
    }
    let mut pos = 2;
    let width = read_uint(buf, &mut pos, "width")? as usize;
    let height = read_uint(buf, &mut pos, "height")? as usize;
    let maxval = read_uint(buf, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::MalformedImage("zero image dimension".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::MalformedImage(format!("maxval {maxval} out of range")));
    }
    // binary payloads start after exactly one whitespace byte
    if pos >= buf.len() || !buf[pos].is_ascii_whitespace() {
        return Err(Error::MalformedImage("header not terminated".into()));
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval,
        data_start: pos + 1,
    })
}

/// Decodes an in-memory PNM file.
pub fn decode(buf: &[u8]) -> Result<MultiChannelField> {
    let h = parse_header(buf)?;
    let channels = if matches!(h.magic[1], b'2' | b'5') { 1 } else { 3 };
    let count = h.width * h.height * channels;
    let scale = h.maxval as f64;
    let mut samples = Vec::with_capacity(count);
    match h.magic[1] {
        b'2' | b'3' => {
            let mut pos = h.data_start;
            for _ in 0..count {
                let v = read_uint(buf, &mut pos, "sample")
                    .map_err(|_| Error::MalformedImage("truncated pixel payload".into()))?;
                if v > h.maxval {
                    return Err(Error::MalformedImage(format!(
                        "sample {v} exceeds maxval {}",
                        h.maxval
                    )));
                }
                samples.push(v as f64 / scale);
            }
        }
        _ => {
            let bytes_per = if h.maxval < 256 { 1 } else { 2 };
            let payload = &buf[h.data_start..];
            if payload.len() < count * bytes_per {
                return Err(Error::MalformedImage(format!(
                    "truncated pixel payload: need {} bytes, found {}",
                    count * bytes_per,
                    payload.len()
                )));
            }
            for i in 0..count {
                let v = if bytes_per == 1 {
                    payload[i] as u32
                } else {
                    u16::from_be_bytes([payload[2 * i], payload[2 * i + 1]]) as u32
                };
                if v > h.maxval {
                    return Err(Error::MalformedImage(format!(
                        "sample {v} exceeds maxval {}",
                        h.maxval
                    )));
                }
                samples.push(v as f64 / scale);
            }
        }
    }
    let plane = h.width * h.height;
    let fields = (0..channels)
        .map(|c| {
            let data = (0..plane).map(|i| samples[i * channels + c]).collect();
            ScalarField::from_vec(h.width, h.height, data)
        })
        .collect::<Result<Vec<_>>>()?;
    MultiChannelField::new(fields)
}

/// Reads a P2/P3/P5/P6 file. Graymaps yield one channel, pixmaps three.
pub fn load_image(path: impl AsRef<Path>) -> Result<MultiChannelField> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&buf)
}

fn quantize(values: &[f64]) -> Result<Vec<u8>> {
    values
        .iter()
        .enumerate()
        .map(|(index, &value)| {
            if !(0.0..=1.0).contains(&value) {
                Err(Error::OutOfRange { index, value })
            } else {
                Ok((255.0 * value).round() as u8)
            }
        })
        .collect()
}

/// Encodes a field as a binary P5 graymap with maxval 255.
pub fn encode_p5(field: &ScalarField) -> Result<Vec<u8>> {
    let mut out = format!("P5\n{} {}\n255\n", field.width(), field.height()).into_bytes();
    out.extend(quantize(field.as_slice())?);
    Ok(out)
}

/// Encodes a 3-channel field as a binary P6 pixmap with maxval 255.
pub fn encode_p6(image: &MultiChannelField) -> Result<Vec<u8>> {
    if image.channel_count() != 3 {
        return Err(Error::param("channels", "P6 output needs exactly 3 channels"));
    }
    let (w, h) = image.dims();
    let planes: Vec<Vec<u8>> = image
        .channels()
        .iter()
        .map(|c| quantize(c.as_slice()))
        .collect::<Result<_>>()?;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for i in 0..w * h {
        out.extend(planes.iter().map(|p| p[i]));
    }
    Ok(out)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `field` as P5; every value must lie in `[0, 1]`.
pub fn save_field(field: &ScalarField, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode_p5(field)?)
}

/// Writes a 1-channel image as P5 or a 3-channel image as P6.
pub fn save_image(image: &MultiChannelField, path: impl AsRef<Path>) -> Result<()> {
    match image.channel_count() {
        1 => save_field(&image.channels()[0], path),
        _ => write(path.as_ref(), &encode_p6(image)?),
    }
}
