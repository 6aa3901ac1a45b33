//! Oriented FAST corners with steered BRIEF descriptors (ORB-style).

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

// shadowed by inherent methods whenever std is linked
#[allow(unused_imports)]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::session::GrayImage;

/// 256-bit binary descriptor. Bit `i` lives in word `i / 64`, bit `i % 64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Descriptor(pub [u64; 4]);

impl Descriptor {
    pub const BITS: u32 = 256;
    pub const BYTES: usize = 32;

    #[inline]
    pub fn hamming(&self, other: &Descriptor) -> u32 {
        (self.0[0] ^ other.0[0]).count_ones()
            + (self.0[1] ^ other.0[1]).count_ones()
            + (self.0[2] ^ other.0[2]).count_ones()
            + (self.0[3] ^ other.0[3]).count_ones()
    }

    #[inline]
    pub fn bit(&self, i: usize) -> bool {
        (self.0[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set_bit(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    pub fn flip_bit(&mut self, i: usize) {
        self.0[i / 64] ^= 1 << (i % 64);
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        for (w, chunk) in self.0.iter().zip(out.chunks_exact_mut(8)) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8; 32]) -> Self {
        let mut words = [0u64; 4];
        for (w, chunk) in words.iter_mut().zip(bytes.chunks_exact(8)) {
            let mut b = [0u8; 8];
            b.copy_from_slice(chunk);
            *w = u64::from_le_bytes(b);
        }
        Descriptor(words)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyPoint {
    /// Position in full-resolution pixels.
    pub x: f64,
    pub y: f64,
    /// Orientation in radians.
    pub angle: f64,
    /// Pyramid level the corner was detected on.
    pub level: u8,
    /// Harris corner response.
    pub response: f32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSet {
    pub keypoints: Vec<KeyPoint>,
    pub descriptors: Vec<Descriptor>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbParams {
    pub max_features: usize,
    pub levels: usize,
    pub scale_factor: f64,
    pub fast_threshold: i16,
}

impl Default for OrbParams {
    fn default() -> Self {
        Self {
            max_features: 1000,
            levels: 4,
            scale_factor: 1.2,
            fast_threshold: 20,
        }
    }
}

const PATCH_RADIUS: i32 = 15;
/// Pixels skipped at every border so steered test pairs stay inside the image.
const EDGE: usize = 20;
const PATTERN_SEED: u64 = 0x0_5eed_b41e;
const HARRIS_K: f32 = 0.04;

const CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

/// Test-pair layout of the binary descriptor: 256 pairs of patch offsets
/// drawn from an isotropic Gaussian and clipped to the patch.
pub fn test_pattern() -> Vec<[(f64, f64); 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(PATTERN_SEED);
    let normal = Normal::new(0.0, 31.0 / 5.0).expect("valid sigma");
    let mut sample = || -> f64 { normal.sample(&mut rng).round().clamp(-13.0, 13.0) };
    (0..256)
        .map(|_| [(sample(), sample()), (sample(), sample())])
        .collect()
}

struct Level {
    img: GrayImage,
    smooth: GrayImage,
    scale: f64,
}

fn resize_bilinear(src: &GrayImage, width: usize, height: usize) -> GrayImage {
    let sx = src.width as f64 / width as f64;
    let sy = src.height as f64 / height as f64;
    GrayImage::from_fn(width, height, |x, y| {
        let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (src.width - 1) as f64);
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (src.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(src.width - 1);
        let y1 = (y0 + 1).min(src.height - 1);
        let ax = fx - x0 as f64;
        let ay = fy - y0 as f64;
        let top = src.get(x0, y0) as f64 * (1.0 - ax) + src.get(x1, y0) as f64 * ax;
        let bot = src.get(x0, y1) as f64 * (1.0 - ax) + src.get(x1, y1) as f64 * ax;
        (top * (1.0 - ay) + bot * ay).round() as u8
    })
}

/// Separable 7-tap Gaussian blur, sigma 2, clamped borders.
fn gaussian_blur(src: &GrayImage) -> GrayImage {
    let sigma = 2.0f64;
    let raw: Vec<f64> = (-3..=3)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = raw.iter().sum();
    let k: Vec<f64> = raw.iter().map(|v| v / norm).collect();
    let (w, h) = (src.width as i64, src.height as i64);
    let mut tmp = vec![0.0f64; src.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let xx = (x + j as i64 - 3).clamp(0, w - 1);
                acc += kv * src.get(xx as usize, y as usize) as f64;
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    GrayImage::from_fn(src.width, src.height, |x, y| {
        let mut acc = 0.0;
        for (j, kv) in k.iter().enumerate() {
            let yy = (y as i64 + j as i64 - 3).clamp(0, h - 1);
            acc += kv * tmp[(yy * w) as usize + x];
        }
        acc.round().clamp(0.0, 255.0) as u8
    })
}

/// FAST-9 segment test. Returns a score (sum of excess contrast over the
/// circle) when the pixel is a corner.
fn fast_score(img: &GrayImage, x: usize, y: usize, threshold: i16) -> Option<i32> {
    let c = img.get(x, y) as i16;
    let mut state = [0i8; 16];
    let mut diffs = [0i16; 16];
    for (k, (dx, dy)) in CIRCLE.iter().enumerate() {
        let v = img.get((x as i32 + dx) as usize, (y as i32 + dy) as usize) as i16;
        diffs[k] = v - c;
        state[k] = if v > c + threshold {
            1
        } else if v < c - threshold {
            -1
        } else {
            0
        };
    }
    // a 9-long arc covers at least two of the four compass pixels
    let bright = [0, 4, 8, 12].iter().filter(|&&k| state[k] == 1).count();
    let dark = [0, 4, 8, 12].iter().filter(|&&k| state[k] == -1).count();
    if bright < 2 && dark < 2 {
        return None;
    }
    for sign in [1i8, -1] {
        let mut run = 0;
        for k in 0..32 {
            if state[k % 16] == sign {
                run += 1;
                if run >= 9 {
                    let score = diffs
                        .iter()
                        .filter(|d| d.signum() as i8 == sign && d.abs() > threshold)
                        .map(|d| (d.abs() - threshold) as i32)
                        .sum();
                    return Some(score);
                }
            } else {
                run = 0;
            }
        }
    }
    None
}

fn harris_response(img: &GrayImage, x: usize, y: usize) -> f32 {
    let (mut a, mut b, mut c) = (0f32, 0f32, 0f32);
    let p = |xx: i32, yy: i32| img.get(xx as usize, yy as usize) as f32;
    for dy in -3i32..=3 {
        for dx in -3i32..=3 {
            let (cx, cy) = (x as i32 + dx, y as i32 + dy);
            let ix = (p(cx + 1, cy - 1) + 2.0 * p(cx + 1, cy) + p(cx + 1, cy + 1))
                - (p(cx - 1, cy - 1) + 2.0 * p(cx - 1, cy) + p(cx - 1, cy + 1));
            let iy = (p(cx - 1, cy + 1) + 2.0 * p(cx, cy + 1) + p(cx + 1, cy + 1))
                - (p(cx - 1, cy - 1) + 2.0 * p(cx, cy - 1) + p(cx + 1, cy - 1));
            a += ix * ix;
            b += iy * iy;
            c += ix * iy;
        }
    }
    let scale = 1.0 / (4.0 * 49.0 * 255.0);
    let (a, b, c) = (a * scale * scale, b * scale * scale, c * scale * scale);
    a * b - c * c - HARRIS_K * (a + b) * (a + b)
}

/// Orientation from the intensity centroid of a circular patch.
fn centroid_angle(img: &GrayImage, x: usize, y: usize) -> f64 {
    let (mut m01, mut m10) = (0i64, 0i64);
    for dy in -PATCH_RADIUS..=PATCH_RADIUS {
        let span = ((PATCH_RADIUS * PATCH_RADIUS - dy * dy) as f64).sqrt() as i32;
        for dx in -span..=span {
            let v = img.get((x as i32 + dx) as usize, (y as i32 + dy) as usize) as i64;
            m10 += dx as i64 * v;
            m01 += dy as i64 * v;
        }
    }
    (m01 as f64).atan2(m10 as f64)
}

fn describe(smooth: &GrayImage, x: usize, y: usize, angle: f64, pattern: &[[(f64, f64); 2]]) -> Descriptor {
    let (s, c) = angle.sin_cos();
    let sample = |(px, py): (f64, f64)| -> u8 {
        let rx = (c * px - s * py).round() as i32;
        let ry = (s * px + c * py).round() as i32;
        smooth.get((x as i32 + rx) as usize, (y as i32 + ry) as usize)
    };
    let mut d = Descriptor::default();
    for (i, [a, b]) in pattern.iter().enumerate() {
        if sample(*a) < sample(*b) {
            d.set_bit(i);
        }
    }
    d
}

/// Detects up to `params.max_features` corners ranked by Harris response and
/// computes a steered 256-bit descriptor for each.
pub fn extract_features(image: &GrayImage, params: &OrbParams) -> Result<FeatureSet> {
    if image.width < 64 || image.height < 64 {
        return Err(Error::ImageTooSmall {
            width: image.width,
            height: image.height,
        });
    }
    if params.max_features < 8 {
        return Err(Error::Config(alloc::format!(
            "max_features must be at least 8, got {}",
            params.max_features
        )));
    }
    let mut levels = Vec::with_capacity(params.levels.max(1));
    for l in 0..params.levels.max(1) {
        let scale = params.scale_factor.powi(l as i32);
        let w = (image.width as f64 / scale).round() as usize;
        let h = (image.height as f64 / scale).round() as usize;
        if w < 2 * EDGE + 8 || h < 2 * EDGE + 8 {
            break;
        }
        let img = if l == 0 {
            image.clone()
        } else {
            resize_bilinear(image, w, h)
        };
        let smooth = gaussian_blur(&img);
        levels.push(Level { img, smooth, scale });
    }

    let inv2 = 1.0 / (params.scale_factor * params.scale_factor);
    let weights: Vec<f64> = (0..levels.len()).map(|l| inv2.powi(l as i32)).collect();
    let total: f64 = weights.iter().sum();
    let pattern = test_pattern();

    let mut all: Vec<(KeyPoint, Descriptor)> = Vec::new();
    for (l, level) in levels.iter().enumerate() {
        let quota = ((params.max_features as f64 * weights[l] / total).round() as usize).max(1);
        let img = &level.img;
        let (w, h) = (img.width, img.height);
        let mut scores = vec![0i32; w * h];
        for y in EDGE..h - EDGE {
            for x in EDGE..w - EDGE {
                if let Some(s) = fast_score(img, x, y, params.fast_threshold) {
                    scores[y * w + x] = s;
                }
            }
        }
        let mut corners: Vec<(f32, usize, usize)> = Vec::new();
        for y in EDGE..h - EDGE {
            for x in EDGE..w - EDGE {
                let s = scores[y * w + x];
                if s == 0 {
                    continue;
                }
                // 3x3 non-maximum suppression, ties resolved by raster order
                let mut is_max = true;
                'nms: for dy in -1i32..=1 {
                    for dx in -1i32..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let j = (y as i32 + dy) as usize * w + (x as i32 + dx) as usize;
                        let n = scores[j];
                        if n > s || (n == s && (dy < 0 || (dy == 0 && dx < 0))) {
                            is_max = false;
                            break 'nms;
                        }
                    }
                }
                if is_max {
                    corners.push((harris_response(img, x, y), x, y));
                }
            }
        }
        corners.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));
        corners.truncate(quota);
        for (response, x, y) in corners {
            let angle = centroid_angle(img, x, y);
            let desc = describe(&level.smooth, x, y, angle, &pattern);
            let kp = KeyPoint {
                x: ((x as f64 + 0.5) * level.scale - 0.5).clamp(0.0, (image.width - 1) as f64),
                y: ((y as f64 + 0.5) * level.scale - 0.5).clamp(0.0, (image.height - 1) as f64),
                angle,
                level: l as u8,
                response,
            };
            all.push((kp, desc));
        }
    }
    all.sort_by(|a, b| {
        b.0.response
            .total_cmp(&a.0.response)
            .then(a.0.level.cmp(&b.0.level))
            .then(a.0.y.total_cmp(&b.0.y))
            .then(a.0.x.total_cmp(&b.0.x))
    });
    all.truncate(params.max_features);
    let (keypoints, descriptors) = all.into_iter().unzip();
    Ok(FeatureSet {
        keypoints,
        descriptors,
    })
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn noise_image(w: usize, h: usize, seed: u64) -> GrayImage {
        // blocky random texture, then blurred a little so corners are stable
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells: Vec<u8> = (0..(w / 6 + 1) * (h / 6 + 1)).map(|_| rng.random()).collect();
        let raw = GrayImage::from_fn(w, h, |x, y| cells[(y / 6) * (w / 6 + 1) + x / 6]);
        gaussian_blur(&raw)
    }

    #[test]
    fn rejects_small_images() {
        let img = GrayImage::filled(63, 100, 0);
        assert!(matches!(
            extract_features(&img, &OrbParams::default()),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn uniform_image_has_no_corners() {
        let img = GrayImage::filled(128, 128, 117);
        let f = extract_features(&img, &OrbParams::default()).unwrap();
        assert!(f.is_empty());
    }

    #[test]
    fn separated_squares_give_corner_per_region() {
        // Dark 12 px squares on a 24 px pitch: every square corner is an L
        // junction. Count the corner regions from the generated layout.
        let (pitch, side, origin) = (24usize, 12usize, 30usize);
        let n = 5;
        let img = GrayImage::from_fn(200, 200, |x, y| {
            if x >= origin && y >= origin {
                let (i, j) = ((x - origin) / pitch, (y - origin) / pitch);
                let (u, v) = ((x - origin) % pitch, (y - origin) % pitch);
                if i < n && j < n && u < side && v < side {
                    return 20;
                }
            }
            230
        });
        let f = extract_features(&img, &OrbParams::default()).unwrap();
        let mut regions = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let x0 = (origin + i * pitch) as f64;
                let y0 = (origin + j * pitch) as f64;
                for (cx, cy) in [(x0, y0), (x0 + side as f64, y0), (x0, y0 + side as f64), (x0 + side as f64, y0 + side as f64)] {
                    regions.push((cx, cy));
                }
            }
        }
        assert_eq!(regions.len(), 100);
        for (cx, cy) in regions {
            let hit = f
                .keypoints
                .iter()
                .any(|k| (k.x - cx).abs() <= 4.0 && (k.y - cy).abs() <= 4.0);
            assert!(hit, "no keypoint near corner ({cx}, {cy})");
        }
    }

    #[test]
    fn respects_max_features_and_bounds() {
        let img = noise_image(320, 240, 5);
        let params = OrbParams {
            max_features: 150,
            ..OrbParams::default()
        };
        let f = extract_features(&img, &params).unwrap();
        assert!(f.len() <= 150 && f.len() > 100);
        assert_eq!(f.keypoints.len(), f.descriptors.len());
        assert!(f.keypoints.iter().all(|k| k.x >= 0.0 && k.x < 320.0 && k.y >= 0.0 && k.y < 240.0));
        assert!(f.keypoints.windows(2).all(|w| w[0].response >= w[1].response));
    }

    #[test]
    fn descriptors_survive_quarter_turn() {
        let img = noise_image(240, 240, 11);
        let n = img.width;
        // rotate 90 degrees clockwise: (x, y) -> (n - 1 - y, x)
        let rot = GrayImage::from_fn(n, n, |x, y| img.get(y, n - 1 - x));
        let params = OrbParams::default();
        let a = extract_features(&img, &params).unwrap();
        let b = extract_features(&rot, &params).unwrap();
        let nearest = |d: &Descriptor, set: &FeatureSet| -> (usize, u32) {
            set.descriptors
                .iter()
                .enumerate()
                .map(|(i, e)| (i, d.hamming(e)))
                .min_by_key(|x| (x.1, x.0))
                .unwrap()
        };
        let mut matches = 0;
        let mut consistent = 0;
        for (i, d) in a.descriptors.iter().enumerate() {
            let (j, dist) = nearest(d, &b);
            if dist >= 64 || nearest(&b.descriptors[j], &a).0 != i {
                continue;
            }
            matches += 1;
            let (ka, kb) = (&a.keypoints[i], &b.keypoints[j]);
            let (ex, ey) = ((n - 1) as f64 - ka.y, ka.x);
            let tol = 3.0 * 1.2f64.powi(ka.level.max(kb.level) as i32);
            if (kb.x - ex).abs() <= tol && (kb.y - ey).abs() <= tol {
                consistent += 1;
            }
        }
        assert!(matches >= 20, "only {matches} mutual matches");
        assert!(
            consistent * 2 >= matches,
            "{consistent} of {matches} matches agree with the rotation"
        );
    }

    #[test]
    fn deterministic() {
        let img = noise_image(200, 150, 2);
        let a = extract_features(&img, &OrbParams::default()).unwrap();
        let b = extract_features(&img, &OrbParams::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn descriptor_bytes_roundtrip() {
        let d = Descriptor([1, u64::MAX, 0x1234_5678_9abc_def0, 7]);
        assert_eq!(Descriptor::from_bytes(&d.to_bytes()), d);
        assert_eq!(d.hamming(&d), 0);
        assert!(d.bit(0) && !d.bit(1) && d.bit(64));
    }
}
