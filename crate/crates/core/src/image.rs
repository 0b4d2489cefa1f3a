//! HWC float images, binary PPM (P6) I/O, and token-retention masks.

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::reduction::GroupRecord;

pub const KEEP_TINT: [f32; 3] = [1.0, 0.0, 0.0];
pub const TARGET_TINT: [f32; 3] = [0.0, 0.0, 1.0];
/// Share of the tint colour in a tinted pixel.
pub const TINT_ALPHA: f32 = 0.5;

/// Row-major `height × width × channels`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::dim(
                "Image::new",
                &[height, width, channels],
                &[data.len()],
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Square test image: a few seeded soft blobs over a gradient.
    pub fn synthetic(size: usize, channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blobs: Vec<(f32, f32, f32, Vec<f32>)> = (0..4)
            .map(|_| {
                let cy = rng.gen_range(0.0..size as f32);
                let cx = rng.gen_range(0.0..size as f32);
                let r = rng.gen_range(0.1..0.35) * size as f32;
                let color = (0..channels).map(|_| rng.gen_range(0.0..1.0)).collect();
                (cy, cx, r, color)
            })
            .collect();
        let mut data = Vec::with_capacity(size * size * channels);
        for y in 0..size {
            for x in 0..size {
                for c in 0..channels {
                    let mut v = 0.15 + 0.2 * (x + y) as f32 / (2 * size) as f32;
                    for (cy, cx, r, color) in &blobs {
                        let d2 = (y as f32 - cy).powi(2) + (x as f32 - cx).powi(2);
                        v += color[c] * (-d2 / (r * r)).exp();
                    }
                    data.push(v.clamp(0.0, 1.0));
                }
            }
        }
        Self {
            width: size,
            height: size,
            channels,
            data,
        }
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            // Skip whitespace and comments between header fields.
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
                return Err(Error::Image("truncated PPM header".into()));
            }
            fields.push(
                std::str::from_utf8(&bytes[start..pos])
                    .unwrap_or("")
                    .to_string(),
            );
        }
        if fields[0] != "P6" {
            return Err(Error::Image(format!("expected P6, found {:?}", fields[0])));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Image(format!("bad PPM header field {s:?}")))
        };
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(Error::Image(format!("unsupported maxval {maxval}")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let n = width * height * 3;
        let raster = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::Image("truncated PPM raster".into()))?;
        let data = raster.iter().map(|&b| b as f32 / maxval as f32).collect();
        Self::new(width, height, 3, data)
    }

    pub fn to_ppm(&self) -> Result<Vec<u8>> {
        if self.channels != 3 {
            return Err(Error::Image(format!(
                "PPM needs 3 channels, image has {}",
                self.channels
            )));
        }
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| to_byte(v)));
        Ok(out)
    }

    pub fn read_ppm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_ppm(&bytes)
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_ppm()?).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Interleaved RGBA bytes, e.g. for a canvas `ImageData`.
    pub fn to_rgba(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.width * self.height * 4);
        for px in self.data.chunks(self.channels) {
            for c in 0..3 {
                out.push(to_byte(px[c.min(self.channels - 1)]));
            }
            out.push(255);
        }
        out
    }
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Role a patch plays at one reduction point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatchRole {
    Keep,
    Target,
    /// A source at this layer, or already absorbed at an earlier one.
    Removed,
}

/// Per-patch role at one reduction, in raster order. `present` lists the
/// `orig_index` of every token entering the reduction.
pub fn patch_roles(
    config: &ModelConfig,
    record: &GroupRecord,
    present: &[usize],
) -> Vec<PatchRole> {
    let mut roles = vec![PatchRole::Removed; config.patch_count()];
    let present: HashSet<usize> = present.iter().copied().collect();
    let source: HashSet<usize> = record.source.iter().copied().collect();
    let keep: HashSet<usize> = record.keep.iter().copied().collect();
    for &orig in &present {
        let Some(p) = config.patch_of(orig) else {
            continue;
        };
        roles[p] = if source.contains(&orig) {
            PatchRole::Removed
        } else if keep.contains(&orig) {
            PatchRole::Keep
        } else {
            PatchRole::Target
        };
    }
    roles
}

/// Keep patches tinted red, target patches blue, removed patches black. A
/// layer that removed nothing renders the input unchanged.
pub fn render_mask(
    image: &Image,
    config: &ModelConfig,
    record: &GroupRecord,
    present: &[usize],
) -> Image {
    if record.source.is_empty() {
        return image.clone();
    }
    let roles = patch_roles(config, record, present);
    let ps = config.patch_size;
    let side = config.patches_per_side();
    let mut out = image.clone();
    for y in 0..image.height {
        for x in 0..image.width {
            let role = roles[(y / ps) * side + x / ps];
            let base = (y * image.width + x) * image.channels;
            for c in 0..image.channels {
                let v = &mut out.data[base + c];
                *v = match role {
                    PatchRole::Removed => 0.0,
                    PatchRole::Keep => (1.0 - TINT_ALPHA) * *v + TINT_ALPHA * KEEP_TINT[c.min(2)],
                    PatchRole::Target => {
                        (1.0 - TINT_ALPHA) * *v + TINT_ALPHA * TARGET_TINT[c.min(2)]
                    }
                };
            }
        }
    }
    out
}
