//! Text and binary encodings for trajectories, point clouds and images.
//!
//! Trajectories are one `timestamp tx ty tz qx qy qz qw` row per line with
//! `#` comments. Clouds carry a four-line header (`VERSION`, `FIELDS x y z`,
//! `POINTS n`, `DATA ascii|binary`) followed by float32 triplets. Images are
//! 8-bit binary PGM (`P5`).

use mapalign_core::geometry::{Point3, Pose, Timestamp, Trajectory, Vector3};
use mapalign_core::GrayImage;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct DecodeError(pub String);

fn fail<T>(msg: impl Into<String>) -> Result<T, DecodeError> {
    Err(DecodeError(msg.into()))
}

/// Nine decimals, unless that would not read back as the same value; then
/// the shortest exact representation.
pub fn format_timestamp(t: Timestamp) -> String {
    let fixed = format!("{t:.9}");
    if fixed.parse::<f64>() == Ok(t) {
        fixed
    } else {
        format!("{t}")
    }
}

pub fn parse_timestamp(s: &str) -> Result<Timestamp, DecodeError> {
    match s.parse::<f64>() {
        Ok(t) if t.is_finite() => Ok(t),
        _ => fail(format!("`{s}` is not a timestamp")),
    }
}

/// `tx ty tz qx qy qz qw`, every value in its shortest exact form.
pub fn format_pose(pose: &Pose) -> String {
    let t = pose.translation();
    let q = pose.rotation().quaternion();
    format!("{} {} {} {} {} {} {}", t.x, t.y, t.z, q.i, q.j, q.k, q.w)
}

fn parse_pose_fields(fields: &[&str]) -> Result<Pose, String> {
    let mut v = [0.0; 7];
    for (slot, f) in v.iter_mut().zip(fields) {
        *slot = f.parse::<f64>().map_err(|_| format!("`{f}` is not a number"))?;
        if !slot.is_finite() {
            return Err(format!("`{f}` is not finite"));
        }
    }
    let [tx, ty, tz, qx, qy, qz, qw] = v;
    let norm = (qx * qx + qy * qy + qz * qz + qw * qw).sqrt();
    if !(norm > 1e-6) {
        return Err("quaternion has zero length".into());
    }
    Ok(Pose::from_parts(qw, qx, qy, qz, Vector3::new(tx, ty, tz)))
}

pub fn parse_pose(line: &str) -> Result<Pose, DecodeError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 7 {
        return fail(format!("expected 7 pose values, found {}", fields.len()));
    }
    parse_pose_fields(&fields).map_err(DecodeError)
}

pub fn parse_trajectory(text: &str) -> Result<Trajectory, DecodeError> {
    let mut samples: Vec<(Timestamp, Pose)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let n = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return fail(format!("line {n}: expected 8 values, found {}", fields.len()));
        }
        let t = parse_timestamp(fields[0]).map_err(|e| DecodeError(format!("line {n}: {e}")))?;
        if let Some((prev, _)) = samples.last() {
            if t <= *prev {
                return fail(format!("line {n}: timestamp {} does not increase", fields[0]));
            }
        }
        let pose = parse_pose_fields(&fields[1..]).map_err(|e| DecodeError(format!("line {n}: {e}")))?;
        samples.push((t, pose));
    }
    if samples.len() < 2 {
        return fail(format!("need at least 2 poses, found {}", samples.len()));
    }
    Trajectory::new(samples).map_err(|e| DecodeError(e.to_string()))
}

pub fn format_trajectory(trajectory: &Trajectory) -> String {
    let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for (t, pose) in trajectory.samples() {
        out.push_str(&format_timestamp(*t));
        out.push(' ');
        out.push_str(&format_pose(pose));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CloudEncoding {
    #[default]
    Ascii,
    Binary,
}

impl std::str::FromStr for CloudEncoding {
    type Err = DecodeError;

    fn from_str(s: &str) -> Result<Self, DecodeError> {
        match s {
            "ascii" => Ok(CloudEncoding::Ascii),
            "binary" => Ok(CloudEncoding::Binary),
            _ => fail(format!("unknown cloud encoding `{s}`")),
        }
    }
}

/// Coordinates are stored as float32.
pub fn encode_cloud(points: &[Point3], encoding: CloudEncoding) -> Vec<u8> {
    let data = match encoding {
        CloudEncoding::Ascii => "ascii",
        CloudEncoding::Binary => "binary",
    };
    let mut out = format!("VERSION 1\nFIELDS x y z\nPOINTS {}\nDATA {data}\n", points.len()).into_bytes();
    match encoding {
        CloudEncoding::Ascii => {
            for p in points {
                out.extend_from_slice(format!("{} {} {}\n", p.x as f32, p.y as f32, p.z as f32).as_bytes());
            }
        }
        CloudEncoding::Binary => {
            out.reserve(points.len() * 12);
            for p in points {
                for c in [p.x, p.y, p.z] {
                    out.extend_from_slice(&(c as f32).to_le_bytes());
                }
            }
        }
    }
    out
}

fn header_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str, DecodeError> {
    let rest = &bytes[*pos..];
    let Some(end) = rest.iter().position(|&b| b == b'\n') else {
        return fail("header ends before DATA");
    };
    *pos += end + 1;
    std::str::from_utf8(&rest[..end])
        .map(str::trim)
        .map_err(|_| DecodeError("header is not text".into()))
}

pub fn decode_cloud(bytes: &[u8]) -> Result<Vec<Point3>, DecodeError> {
    let mut pos = 0;
    let mut count = None;
    let mut fields_ok = false;
    let binary = loop {
        let line = header_line(bytes, &mut pos)?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let value = value.trim();
        match key {
            "VERSION" => {}
            "FIELDS" => {
                if value.split_whitespace().ne(["x", "y", "z"]) {
                    return fail(format!("unsupported FIELDS `{value}`"));
                }
                fields_ok = true;
            }
            "POINTS" => {
                count = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| DecodeError(format!("bad POINTS `{value}`")))?,
                );
            }
            "DATA" => match value {
                "ascii" => break false,
                "binary" => break true,
                _ => return fail(format!("unsupported DATA `{value}`")),
            },
            _ => return fail(format!("unknown header key `{key}`")),
        }
    };
    if !fields_ok {
        return fail("missing FIELDS x y z");
    }
    let Some(n) = count else {
        return fail("missing POINTS");
    };
    let body = &bytes[pos..];
    let mut points = Vec::with_capacity(n);
    if binary {
        if body.len() != n * 12 {
            return fail(format!("expected {} data bytes, found {}", n * 12, body.len()));
        }
        for chunk in body.chunks_exact(12) {
            let c = |i: usize| f32::from_le_bytes(chunk[i..i + 4].try_into().expect("4 bytes")) as f64;
            points.push(Point3::new(c(0), c(4), c(8)));
        }
    } else {
        let text = std::str::from_utf8(body).map_err(|_| DecodeError("ascii data is not text".into()))?;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let mut v = [0.0f64; 3];
            let mut it = line.split_whitespace();
            for slot in &mut v {
                let f = it.next().ok_or_else(|| DecodeError(format!("short point row `{line}`")))?;
                *slot = f.parse::<f32>().map_err(|_| DecodeError(format!("`{f}` is not a number")))? as f64;
            }
            if it.next().is_some() {
                return fail(format!("long point row `{line}`"));
            }
            points.push(Point3::new(v[0], v[1], v[2]));
        }
        if points.len() != n {
            return fail(format!("header says {n} points, found {}", points.len()));
        }
    }
    if let Some(i) = points.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
        return fail(format!("point {i} is not finite"));
    }
    Ok(points)
}

pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.data);
    out
}

/// Reads binary PGM with a maximum value of at most 255; smaller ranges are
/// stretched to the full byte.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, DecodeError> {
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return fail("truncated PGM header");
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if tokens[0] != "P5" {
        return fail(format!("expected P5 magic, found `{}`", tokens[0]));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| DecodeError(format!("bad PGM header value `{s}`")));
    let (w, h, max) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if !(1..=255).contains(&max) {
        return fail(format!("only 8-bit PGM is supported, maxval {max}"));
    }
    // exactly one whitespace byte separates the header from the raster
    let data = bytes.get(pos + 1..).unwrap_or(&[]);
    if data.len() != w * h {
        return fail(format!("expected {} pixels, found {}", w * h, data.len()));
    }
    let data = if max == 255 {
        data.to_vec()
    } else {
        data.iter()
            .map(|&v| ((v.min(max as u8) as usize * 255 + max / 2) / max) as u8)
            .collect()
    };
    GrayImage::new(w, h, data).map_err(|e| DecodeError(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamps_keep_nine_decimals_when_exact() {
        assert_eq!(format_timestamp(1_700_000_000.25), "1700000000.250000000");
        let odd = 0.1 + 0.2;
        assert_eq!(format_timestamp(odd).parse::<f64>().unwrap(), odd);
    }

    #[test]
    fn trajectory_rejects_bad_rows() {
        assert!(parse_trajectory("0 0 0 0 0 0 0 1\n1 0 0 0 0 0 1\n").is_err());
        assert!(parse_trajectory("0 0 0 0 0 0 0 1\n").is_err());
        assert!(parse_trajectory("1 0 0 0 0 0 0 1\n0 0 0 0 0 0 0 1\n").is_err());
        assert!(parse_trajectory("0 0 0 0 0 0 0 0\n1 0 0 0 0 0 0 1\n").is_err());
    }

    #[test]
    fn trajectory_skips_comments_and_normalizes() {
        let t = parse_trajectory("# header\n\n0 1 2 3 0 0 0 2\n1.5 1 2 3 0 0 0 1\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.samples()[0].1.rotation_angle(), 0.0);
        assert_eq!(t.end(), 1.5);
    }

    #[test]
    fn cloud_header_is_validated() {
        assert!(decode_cloud(b"VERSION 1\nFIELDS x y\nPOINTS 0\nDATA ascii\n").is_err());
        assert!(decode_cloud(b"VERSION 1\nFIELDS x y z\nPOINTS 2\nDATA ascii\n1 2 3\n").is_err());
        assert!(decode_cloud(b"VERSION 1\nFIELDS x y z\nPOINTS 1\nDATA binary\n\0\0").is_err());
        assert!(decode_cloud(b"VERSION 1\nFIELDS x y z\nPOINTS 1\nDATA ascii\n1 nan 3\n").is_err());
        assert!(decode_cloud(b"FIELDS x y z\nPOINTS 1\n").is_err());
        let p = decode_cloud(b"VERSION 1\nFIELDS x y z\nPOINTS 1\nDATA ascii\n1 2 3\n").unwrap();
        assert_eq!(p, vec![Point3::new(1.0, 2.0, 3.0)]);
    }

    #[test]
    fn pgm_handles_comments_and_short_range() {
        let mut bytes = b"P5\n# made by hand\n64 64\n15\n".to_vec();
        bytes.extend(std::iter::repeat_n(15u8, 64 * 64));
        let img = decode_pgm(&bytes).unwrap();
        assert!(img.data.iter().all(|&v| v == 255));
        assert!(decode_pgm(b"P2\n64 64\n255\n").is_err());
        assert!(decode_pgm(b"P5\n64 64\n255\n\0").is_err());
    }
}
