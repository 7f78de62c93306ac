//! Depth images as 16-bit PGM or as a plain-text float grid
//! (`width height` on the first line, then one row per line).

use std::fmt::Write as _;
use std::path::Path;

use super::{read_bytes, read_text, write_bytes, write_text};
use crate::encoder::{DepthImage, DEPTH_SIZE};
use crate::error::{Error, Result};

const MAXVAL: f64 = 65535.0;

pub fn encode_pgm(img: &DepthImage) -> Vec<u8> {
    let mut out = format!("P5\n{DEPTH_SIZE} {DEPTH_SIZE}\n65535\n").into_bytes();
    for &v in img.values() {
        let q = (v * MAXVAL).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

/// Reads binary (P5) or ASCII (P2) graymaps of any size and bit depth;
/// values are scaled by the maximum and resized to 64×64.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<DepthImage> {
    let err = |msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: msg.to_string(),
    };
    // header: magic, width, height, maxval, separated by whitespace and comments
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| err("bad header"))?);
    }
    let magic = fields[0];
    let num = |s: &str| s.parse::<usize>().map_err(|_| err("bad header number"));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(err("maxval out of range"));
    }
    let n = w * h;
    let values: Vec<f64> = match magic {
        "P5" => {
            let data = &bytes[(pos + 1).min(bytes.len())..];
            let wide = maxval > 255;
            let need = if wide { 2 * n } else { n };
            if data.len() < need {
                return Err(err("truncated pixel data"));
            }
            (0..n)
                .map(|i| {
                    let v = if wide {
                        u16::from_be_bytes([data[2 * i], data[2 * i + 1]]) as f64
                    } else {
                        data[i] as f64
                    };
                    v / maxval as f64
                })
                .collect()
        }
        "P2" => {
            let rest = std::str::from_utf8(&bytes[pos..]).map_err(|_| err("bad ASCII pixel data"))?;
            let v: Vec<f64> = rest
                .split_whitespace()
                .take(n)
                .map(|s| s.parse::<f64>().map(|v| v / maxval as f64).map_err(|_| err("bad pixel value")))
                .collect::<Result<_>>()?;
            if v.len() < n {
                return Err(err("truncated pixel data"));
            }
            v
        }
        _ => return Err(Error::Format(format!("{}: not a graymap ({magic})", path.display()))),
    };
    DepthImage::resized(w, h, &values)
}

pub fn format_grid(img: &DepthImage) -> String {
    let mut s = format!("{DEPTH_SIZE} {DEPTH_SIZE}\n");
    for row in img.values().chunks(DEPTH_SIZE) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}

pub fn parse_grid(text: &str, path: &Path) -> Result<DepthImage> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| err(1, format!("bad size {t:?}"))))
        .collect::<Result<_>>()?;
    let [w, h] = dims[..] else {
        return Err(err(1, "header must be `width height`".into()));
    };
    let mut values = Vec::with_capacity(w * h);
    for (n, l) in lines {
        for t in l.split_whitespace() {
            values.push(t.parse::<f64>().map_err(|_| err(n + 1, format!("bad value {t:?}")))?);
        }
    }
    if values.len() != w * h {
        return Err(err(0, format!("{} values for a {w}x{h} grid", values.len())));
    }
    DepthImage::resized(w, h, &values)
}

fn is_pgm(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

/// Chooses the format from the extension: `.pgm` or float grid otherwise.
pub fn read_depth(path: &Path) -> Result<DepthImage> {
    if is_pgm(path) {
        decode_pgm(&read_bytes(path)?, path)
    } else {
        parse_grid(&read_text(path)?, path)
    }
}

pub fn write_depth(path: &Path, img: &DepthImage) -> Result<()> {
    if is_pgm(path) {
        write_bytes(path, &encode_pgm(img))
    } else {
        write_text(path, &format_grid(img))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> DepthImage {
        DepthImage::new((0..4096).map(|i| (i % 97) as f64 / 96.0).collect()).unwrap()
    }

    #[test]
    fn grid_round_trip_is_exact() {
        let img = ramp();
        assert_eq!(parse_grid(&format_grid(&img), Path::new("x")).unwrap(), img);
    }

    #[test]
    fn pgm_round_trip_within_quantization() {
        let img = ramp();
        let back = decode_pgm(&encode_pgm(&img), Path::new("x.pgm")).unwrap();
        for (a, b) in img.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-15);
        }
        // quantized values survive a second pass unchanged
        assert_eq!(decode_pgm(&encode_pgm(&back), Path::new("x.pgm")).unwrap(), back);
    }

    #[test]
    fn small_ascii_graymaps_are_resized() {
        let img = decode_pgm(b"P2\n# c\n2 1\n255\n0 255\n", Path::new("a.pgm")).unwrap();
        assert_eq!(img.get(5, 0), 0.0);
        assert_eq!(img.get(5, 63), 1.0);
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00", Path::new("a.pgm")).is_err());
        assert!(decode_pgm(b"P6\n1 1\n255\n\x00\x00\x00", Path::new("a.pgm")).is_err());
    }
}
