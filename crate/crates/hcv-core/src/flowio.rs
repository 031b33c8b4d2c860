//! Image and flow-field file formats plus flow visualization.
//!
//! Images are binary PPM (P6) and PGM (P5) with maxval 255. Flow fields use
//! the standard `.flo` layout: the float 202021.25 ("PIEH") as magic, i32
//! width and height, then row-major interleaved (u, v) f32 pairs, all
//! little-endian.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::Image;
use crate::flow::FlowField;
use crate::tensor::BitMask;

/// `.flo` magic number; the bytes spell "PIEH".
pub const FLO_MAGIC: f32 = 202021.25;

/// Magnitude above which a `.flo` value marks an invalid pixel.
pub const FLO_INVALID_THRESHOLD: f32 = 1e9;

/// Value written for invalid pixels.
pub const FLO_INVALID_VALUE: f32 = 1e10;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn fmt_err(path: &Path, field: &'static str, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        field,
        detail: detail.into(),
    }
}

/// Reads a binary PPM (P6) or PGM (P5) image with maxval 255.
pub fn read_image(path: &Path) -> Result<Image> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;
    parse_netpbm(&bytes, path)
}

fn parse_netpbm(bytes: &[u8], path: &Path) -> Result<Image> {
    let mut pos = 0usize;
    let magic = next_token(bytes, &mut pos)
        .ok_or_else(|| fmt_err(path, "magic", "missing magic token"))?;
    let channels = match magic {
        b"P5" => 1usize,
        b"P6" => 3usize,
        other => {
            return Err(fmt_err(
                path,
                "magic",
                format!("expected P5 or P6, got {:?}", String::from_utf8_lossy(other)),
            ))
        }
    };
    let width = parse_dim(bytes, &mut pos, path, "width")?;
    let height = parse_dim(bytes, &mut pos, path, "height")?;
    let maxval = parse_dim(bytes, &mut pos, path, "maxval")?;
    if maxval != 255 {
        return Err(fmt_err(path, "maxval", format!("must be 255, got {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(fmt_err(path, "raster", "missing separator before raster"));
    }
    pos += 1;
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .filter(|&n| n <= 1 << 34)
        .ok_or_else(|| {
            fmt_err(path, "size", format!("implausible extents {width}x{height}"))
        })?;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(fmt_err(
            path,
            "raster",
            format!("truncated: need {need} bytes, have {}", raster.len()),
        ));
    }
    Image::new(width, height, channels, raster[..need].to_vec())
}

/// Advances past whitespace and `#` comments, returning the next token.
fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
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
    if *pos >= bytes.len() {
        return None;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Some(&bytes[start..*pos])
}

fn parse_dim(bytes: &[u8], pos: &mut usize, path: &Path, field: &'static str) -> Result<usize> {
    let tok = next_token(bytes, pos).ok_or_else(|| fmt_err(path, field, "missing token"))?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| {
            fmt_err(
                path,
                field,
                format!("not a number: {:?}", String::from_utf8_lossy(tok)),
            )
        })
}

/// Writes a gray image as P5 or an RGB image as P6, maxval 255.
pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let magic = if image.channels() == 1 { "P5" } else { "P6" };
    write!(w, "{magic}\n{} {}\n255\n", image.width(), image.height()).map_err(|e| io_err(path, e))?;
    w.write_all(image.data()).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Reads a `.flo` flow field; values with magnitude above 1e9 (or non-finite)
/// mark invalid pixels.
pub fn read_flo(path: &Path) -> Result<FlowField> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;
    parse_flo(&bytes, path)
}

fn parse_flo(bytes: &[u8], path: &Path) -> Result<FlowField> {
    if bytes.len() < 12 {
        return Err(fmt_err(path, "header", "file shorter than 12 bytes"));
    }
    let magic = f32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if magic != FLO_MAGIC {
        return Err(fmt_err(path, "magic", format!("expected 202021.25, got {magic}")));
    }
    let width = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if width <= 0 || height <= 0 {
        return Err(fmt_err(path, "size", format!("bad extents {width}x{height}")));
    }
    let (width, height) = (width as usize, height as usize);
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(12))
        .filter(|&n| n <= 1 << 36)
        .ok_or_else(|| fmt_err(path, "size", format!("implausible extents {width}x{height}")))?;
    if bytes.len() != need {
        return Err(fmt_err(
            path,
            "size",
            format!("payload is {} bytes, header implies {need}", bytes.len()),
        ));
    }
    let n = width * height;
    let mut u = vec![0.0f32; n];
    let mut v = vec![0.0f32; n];
    let mut mask = BitMask::new_false(n);
    let mut any_invalid = false;
    for i in 0..n {
        let off = 12 + i * 8;
        let uu = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let vv = f32::from_le_bytes(bytes[off + 4..off + 8].try_into().unwrap());
        u[i] = uu;
        v[i] = vv;
        let ok = uu.is_finite()
            && vv.is_finite()
            && uu.abs() <= FLO_INVALID_THRESHOLD
            && vv.abs() <= FLO_INVALID_THRESHOLD;
        if ok {
            mask.set(i, true);
        } else {
            any_invalid = true;
        }
    }
    let mut flow = FlowField::from_components(height, width, 1, u, v)?;
    flow.valid = if any_invalid { Some(mask) } else { None };
    Ok(flow)
}

/// Writes a `.flo` flow field; invalid pixels are stored as 1e10.
pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        w.write_all(&FLO_MAGIC.to_le_bytes())?;
        w.write_all(&(flow.width as i32).to_le_bytes())?;
        w.write_all(&(flow.height as i32).to_le_bytes())?;
        for i in 0..flow.u.len() {
            let (u, v) = if flow.is_valid(i) {
                (flow.u[i], flow.v[i])
            } else {
                (FLO_INVALID_VALUE, FLO_INVALID_VALUE)
            };
            w.write_all(&u.to_le_bytes())?;
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    })();
    res.map_err(|e| io_err(path, e))
}

/// The 55-entry color wheel: RY 15, YG 6, GC 4, CB 11, BM 13, MR 6 segments.
pub fn color_wheel() -> Vec<[f32; 3]> {
    const SEGMENTS: [(usize, usize, usize); 6] = [
        (15, 0, 1), // red -> yellow: raise G
        (6, 1, 0),  // yellow -> green: lower R
        (4, 1, 2),  // green -> cyan: raise B
        (11, 2, 1), // cyan -> blue: lower G
        (13, 2, 0), // blue -> magenta: raise R
        (6, 0, 2),  // magenta -> red: lower B
    ];
    let mut wheel = Vec::with_capacity(55);
    let mut col = [0.0f32; 3];
    for (count, hold, move_ch) in SEGMENTS {
        for i in 0..count {
            let mut rgb = [0.0f32; 3];
            rgb[hold] = 255.0;
            let ramp = (255.0 * i as f32 / count as f32).floor();
            // even segments ramp the moving channel up, odd ramp it down
            rgb[move_ch] = if col[move_ch] == 0.0 { ramp } else { 255.0 - ramp };
            wheel.push(rgb);
        }
        col = *wheel.last().unwrap();
    }
    wheel
}

/// Maximum magnitude used for normalization: explicit, or the 99th
/// percentile of finite magnitudes.
pub fn flow_max_magnitude(flow: &FlowField, explicit: Option<f32>) -> f32 {
    if let Some(m) = explicit {
        return m.max(1e-6);
    }
    let mut mags: Vec<f32> = (0..flow.u.len())
        .filter(|&i| flow.u[i].is_finite() && flow.v[i].is_finite())
        .map(|i| flow.magnitude(i))
        .collect();
    if mags.is_empty() {
        return 1e-6;
    }
    mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((mags.len() as f64) * 0.99).ceil() as usize;
    mags[rank.saturating_sub(1).min(mags.len() - 1)].max(1e-6)
}

/// Interpolated wheel color for one normalized flow vector.
fn wheel_color(wheel: &[[f32; 3]], fu: f32, fv: f32) -> [u8; 3] {
    let rad = (fu * fu + fv * fv).sqrt();
    let a = (-fv).atan2(-fu) / std::f32::consts::PI;
    let fk = (a + 1.0) / 2.0 * (wheel.len() - 1) as f32;
    let k0 = fk.floor() as usize;
    let k1 = (k0 + 1) % wheel.len();
    let f = fk - k0 as f32;
    let mut out = [0u8; 3];
    for ch in 0..3 {
        let col0 = wheel[k0][ch] / 255.0;
        let col1 = wheel[k1][ch] / 255.0;
        let mut col = (1.0 - f) * col0 + f * col1;
        if rad <= 1.0 {
            // saturate toward white as magnitude falls
            col = 1.0 - rad * (1.0 - col);
        } else {
            col *= 0.75;
        }
        out[ch] = (255.0 * col).round() as u8;
    }
    out
}

/// Renders a flow field with the Middlebury color wheel: hue encodes
/// direction, saturation magnitude; zero flow is white, non-finite pixels
/// are black.
pub fn flow_to_color(flow: &FlowField, max_magnitude: Option<f32>) -> Image {
    let wheel = color_wheel();
    let max = flow_max_magnitude(flow, max_magnitude);
    let mut data = vec![0u8; flow.u.len() * 3];
    for i in 0..flow.u.len() {
        let (u, v) = (flow.u[i], flow.v[i]);
        if !u.is_finite() || !v.is_finite() {
            continue; // stays black
        }
        let rgb = wheel_color(&wheel, u / max, v / max);
        data[i * 3..i * 3 + 3].copy_from_slice(&rgb);
    }
    Image::new(flow.width, flow.height, 3, data).expect("flow grids are at least 16x16 in practice")
}
