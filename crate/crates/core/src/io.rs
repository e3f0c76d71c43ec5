//! On-disk formats: the light-field container, PFM float maps, PNG images
//! and masks, the binary gaussian cloud, run manifests and loss traces.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{MotionParams, Point3};
use crate::lightfield::{Image, LFIntrinsics, LightField4D, Mask, RSTiming};
use crate::pipeline::{LossRecord, RunArtifacts, RunManifest};
use crate::splat::{Gaussian2D, GaussianCloud};
use crate::synth::{SceneArtifacts, SceneSpec};

pub const SCHEMA_VERSION: u32 = 1;
pub const CLOUD_VERSION: u32 = 1;
const CLOUD_MAGIC: &[u8; 4] = b"RSLF";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::data(path, format!("invalid JSON: {e}")))
}

/// Quantize `[0, 1]` to 16 bits.
#[inline]
pub fn quantize16(x: f64) -> u16 {
    (x.clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn png16_bytes(img: &Image) -> Result<Vec<u8>> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(
        img.width() as u32,
        img.height() as u32,
        img.data().iter().map(|&x| quantize16(x)).collect(),
    )
    .ok_or_else(|| Error::Internal("image buffer size".into()))?;
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::Internal(format!("PNG encoding failed: {e}")))?;
    Ok(out.into_inner())
}

/// 16-bit grayscale PNG of an image in `[0, 1]`.
pub fn write_png16(path: &Path, img: &Image) -> Result<()> {
    write_bytes(path, &png16_bytes(img)?)
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<Image> {
    let dynimg = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::data(path, format!("cannot decode PNG: {e}")))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    // Color inputs are averaged over channels.
    let data: Vec<f64> = if dynimg.color().has_color() {
        dynimg
            .into_rgb16()
            .pixels()
            .map(|p| (p.0[0] as f64 + p.0[1] as f64 + p.0[2] as f64) / (3.0 * 65535.0))
            .collect()
    } else {
        dynimg.into_luma16().pixels().map(|p| p.0[0] as f64 / 65535.0).collect()
    };
    Image::from_vec(w, h, data)
}

/// Grayscale image from an 8- or 16-bit PNG; RGB is averaged.
pub fn read_png(path: &Path) -> Result<Image> {
    decode_png(path, &read_bytes(path)?)
}

/// 8-bit mask, 255 where set.
pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(
        mask.width() as u32,
        mask.height() as u32,
        mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect(),
    )
    .ok_or_else(|| Error::Internal("mask buffer size".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::data(path, format!("cannot write PNG: {e}")))
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let bytes = read_bytes(path)?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| Error::data(path, format!("cannot decode PNG: {e}")))?
        .into_luma8();
    let (w, h) = img.dimensions();
    Mask::from_vec(w as usize, h as usize, img.pixels().map(|p| p.0[0] >= 128).collect())
}

/// Single-channel PFM, little-endian (scale −1), rows stored bottom-up.
pub fn pfm_bytes(width: usize, height: usize, data: &[f32]) -> Result<Vec<u8>> {
    if data.len() != width * height {
        return Err(Error::Argument("PFM buffer does not match its size".into()));
    }
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(4 * data.len());
    for v in (0..height).rev() {
        for x in &data[v * width..(v + 1) * width] {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_pfm(path: &Path, width: usize, height: usize, data: &[f32]) -> Result<()> {
    write_bytes(path, &pfm_bytes(width, height, data)?)
}

pub fn write_pfm_image(path: &Path, img: &Image) -> Result<()> {
    let data: Vec<f32> = img.data().iter().map(|&x| x as f32).collect();
    write_pfm(path, img.width(), img.height(), &data)
}

/// Parse a single-channel PFM of either byte order into top-down rows.
pub fn parse_pfm(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("PFM header is truncated".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        if pos - start > 32 {
            return Err(Error::Parse("PFM header field too long".into()));
        }
    }
    // Exactly one whitespace byte separates the header from the data.
    pos += 1;
    if fields[0] != "Pf" {
        return Err(Error::Parse(format!("unsupported PFM magic {:?}", fields[0])));
    }
    let parse_dim = |s: &str| -> Result<usize> {
        s.parse::<usize>()
            .ok()
            .filter(|&n| n > 0 && n <= 1 << 16)
            .ok_or_else(|| Error::Parse(format!("bad PFM dimension {s:?}")))
    };
    let width = parse_dim(&fields[1])?;
    let height = parse_dim(&fields[2])?;
    let scale: f64 = fields[3]
        .parse()
        .map_err(|_| Error::Parse(format!("bad PFM scale {:?}", fields[3])))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Parse(format!("bad PFM scale {scale}")));
    }
    let little = scale < 0.0;
    let n = width * height;
    let payload = bytes.get(pos..).unwrap_or(&[]);
    if payload.len() < 4 * n {
        return Err(Error::Parse(format!(
            "PFM payload has {} bytes, expected {}",
            payload.len(),
            4 * n
        )));
    }
    let mut data = vec![0.0f32; n];
    for (i, chunk) in payload[..4 * n].chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let x = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row, col) = (i / width, i % width);
        data[(height - 1 - row) * width + col] = x;
    }
    Ok((width, height, data))
}

pub fn read_pfm(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = read_bytes(path)?;
    parse_pfm(&bytes).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn read_pfm_image(path: &Path) -> Result<Image> {
    let (w, h, data) = read_pfm(path)?;
    Image::from_vec(w, h, data.into_iter().map(f64::from).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerManifest {
    pub schema_version: u32,
    pub angular: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub bit_depth: u32,
    pub intrinsics: LFIntrinsics,
    pub row_period: f64,
    pub origin_row: f64,
    pub readout: crate::lightfield::ReadoutDirection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion_gt: Option<MotionParams>,
    /// SHA-256 of every SAI file, keyed by file name.
    pub hashes: BTreeMap<String, String>,
}

impl ContainerManifest {
    pub fn timing(&self) -> RSTiming {
        RSTiming {
            row_period: self.row_period,
            origin_row: self.origin_row,
            readout: self.readout,
        }
    }
}

pub fn sai_file_name(x: usize, y: usize) -> String {
    format!("sai_{x:02}_{y:02}.png")
}

pub fn write_lightfield(
    lf: &LightField4D,
    intr: &LFIntrinsics,
    timing: &RSTiming,
    motion_gt: Option<MotionParams>,
    dir: &Path,
) -> Result<ContainerManifest> {
    create_dir(dir)?;
    let a = lf.angular();
    let mut hashes = BTreeMap::new();
    for y in 0..a {
        for x in 0..a {
            let bytes = png16_bytes(&lf.sai_view(x, y)?.to_image())?;
            let name = sai_file_name(x, y);
            hashes.insert(name.clone(), sha256_hex(&bytes));
            write_bytes(&dir.join(&name), &bytes)?;
        }
    }
    let manifest = ContainerManifest {
        schema_version: SCHEMA_VERSION,
        angular: a,
        width: lf.width(),
        height: lf.height(),
        channels: 1,
        bit_depth: 16,
        intrinsics: *intr,
        row_period: timing.row_period,
        origin_row: timing.origin_row,
        readout: timing.readout,
        motion_gt,
        hashes,
    };
    write_json(&dir.join("meta.json"), &manifest)?;
    Ok(manifest)
}

pub fn read_container_manifest(dir: &Path) -> Result<ContainerManifest> {
    let path = dir.join("meta.json");
    if !path.exists() {
        return Err(Error::data(&path, "missing light-field metadata"));
    }
    let raw: serde_json::Value = read_json(&path)?;
    let version = raw
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::data(&path, "schema_version missing"))?;
    if version != SCHEMA_VERSION as u64 {
        return Err(Error::Version {
            path,
            found: version as u32,
            supported: SCHEMA_VERSION,
        });
    }
    serde_json::from_value(raw).map_err(|e| Error::data(&path, format!("invalid metadata: {e}")))
}

/// Load and verify a light-field container.
pub fn read_lightfield(dir: &Path) -> Result<(LightField4D, LFIntrinsics, RSTiming, ContainerManifest)> {
    let meta = read_container_manifest(dir)?;
    let a = meta.angular;
    if a == 0 || a % 2 == 0 || a > 64 {
        return Err(Error::data(dir.join("meta.json"), format!("bad angular resolution {a}")));
    }
    let mut views = Vec::with_capacity(a * a);
    for y in 0..a {
        for x in 0..a {
            let name = sai_file_name(x, y);
            let path = dir.join(&name);
            let bytes = read_bytes(&path)?;
            match meta.hashes.get(&name) {
                Some(h) if *h == sha256_hex(&bytes) => {}
                Some(_) => return Err(Error::Corruption { path }),
                None => return Err(Error::data(&path, "no content hash recorded")),
            }
            let img = decode_png(&path, &bytes)?;
            if img.width() != meta.width || img.height() != meta.height {
                return Err(Error::data(&path, "view size differs from metadata"));
            }
            views.push(img);
        }
    }
    let lf = LightField4D::from_views(a, views)?;
    meta.intrinsics
        .validate(meta.width)
        .map_err(|e| Error::data(dir.join("meta.json"), e.to_string()))?;
    Ok((lf, meta.intrinsics, meta.timing(), meta))
}

/// Binary cloud: magic, version, count, background, then `(X, Y, Z, σ, i)` records.
pub fn cloud_bytes(cloud: &GaussianCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 20 * cloud.len());
    out.extend_from_slice(CLOUD_MAGIC);
    out.extend_from_slice(&CLOUD_VERSION.to_le_bytes());
    out.extend_from_slice(&(cloud.len() as u64).to_le_bytes());
    out.extend_from_slice(&(cloud.background as f32).to_le_bytes());
    for g in &cloud.gaussians {
        for x in [g.center.x, g.center.y, g.center.z, g.sigma, g.intensity] {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

pub fn parse_cloud(bytes: &[u8]) -> Result<GaussianCloud> {
    if bytes.len() < 20 || &bytes[..4] != CLOUD_MAGIC {
        return Err(Error::Parse("not a cloud file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CLOUD_VERSION {
        return Err(Error::Parse(format!("unsupported cloud version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let background = f32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes")) as f64;
    let body = &bytes[20..];
    let expected = n.checked_mul(20).filter(|&e| e == body.len() as u64);
    if expected.is_none() {
        return Err(Error::Parse(format!(
            "cloud declares {n} gaussians but holds {} payload bytes",
            body.len()
        )));
    }
    let gaussians = body
        .chunks_exact(20)
        .map(|rec| {
            let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().expect("4 bytes")) as f64;
            Gaussian2D {
                center: Point3::new(f(0), f(1), f(2)),
                sigma: f(3),
                intensity: f(4),
            }
        })
        .collect();
    Ok(GaussianCloud {
        gaussians,
        background,
    })
}

pub fn write_cloud(path: &Path, cloud: &GaussianCloud) -> Result<()> {
    write_bytes(path, &cloud_bytes(cloud))
}

pub fn read_cloud(path: &Path) -> Result<GaussianCloud> {
    parse_cloud(&read_bytes(path)?).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_losses_csv(path: &Path, losses: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(path, e.to_string()))?;
    for r in losses {
        w.serialize(r).map_err(|e| Error::data(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_losses_csv(path: &Path) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::data(path, e.to_string()))?;
    r.deserialize()
        .map(|rec| rec.map_err(|e| Error::data(path, e.to_string())))
        .collect()
}

/// File names inside a dataset directory.
pub mod names {
    pub const META: &str = "meta.json";
    pub const GT_CENTRAL: &str = "gt_central.png";
    pub const GT_DEPTH: &str = "gt_depth.pfm";
    pub const MASK: &str = "mask.png";
    pub const SCENE: &str = "scene.json";

    pub const RUN: &str = "run.json";
    pub const LOSSES: &str = "losses.csv";
    pub const CLOUD: &str = "cloud.bin";
    pub const CLOUD_JSON: &str = "cloud.json";
    pub const STATIC_CLOUD: &str = "static_cloud.bin";
    pub const MOTION: &str = "motion.json";
    pub const INTENSITY: &str = "compensated_intensity.pfm";
    pub const INTENSITY_PNG: &str = "compensated_intensity.png";
    pub const DISPARITY: &str = "compensated_disparity.pfm";
    pub const DEPTH: &str = "compensated_depth.pfm";
    pub const ALPHA: &str = "compensated_alpha.pfm";
    pub const INITIAL_DISPARITY: &str = "initial_disparity.pfm";
}

/// Everything a synthetic scene ships.
pub fn write_dataset(art: &SceneArtifacts, spec: &SceneSpec, dir: &Path) -> Result<ContainerManifest> {
    let meta = write_lightfield(&art.lf, &art.intr, &art.timing, Some(art.motion_gt), dir)?;
    write_png16(&dir.join(names::GT_CENTRAL), &art.gt_central)?;
    write_pfm_image(&dir.join(names::GT_DEPTH), &art.gt_depth)?;
    write_mask(&dir.join(names::MASK), &art.mask)?;
    write_json(&dir.join(names::SCENE), spec)?;
    Ok(meta)
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub lf: LightField4D,
    pub intr: LFIntrinsics,
    pub timing: RSTiming,
    pub meta: ContainerManifest,
    /// Hash of `meta.json`, which itself covers every view.
    pub hash: String,
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let (lf, intr, timing, meta) = read_lightfield(dir)?;
    let hash = sha256_hex(&read_bytes(&dir.join(names::META))?);
    Ok(Dataset {
        lf,
        intr,
        timing,
        meta,
        hash,
    })
}

/// Ground truth of a synthetic dataset.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub central: Image,
    pub depth: Image,
    pub mask: Mask,
    pub motion: Option<MotionParams>,
    pub intr: LFIntrinsics,
}

pub fn read_ground_truth(dir: &Path) -> Result<GroundTruth> {
    let meta = read_container_manifest(dir)?;
    let central = read_png(&dir.join(names::GT_CENTRAL))?;
    let depth = read_pfm_image(&dir.join(names::GT_DEPTH))?;
    let mask = read_mask(&dir.join(names::MASK))?;
    Ok(GroundTruth {
        central,
        depth,
        mask,
        motion: meta.motion_gt,
        intr: meta.intrinsics.enlarged(meta.width, meta.height, 2),
    })
}

/// Writes all artifacts of a run; returns the paths written.
pub fn write_run(run: &RunArtifacts, manifest: &RunManifest, dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    write_cloud(&put(names::CLOUD), &run.cloud)?;
    write_json(&put(names::CLOUD_JSON), &run.cloud)?;
    write_cloud(&put(names::STATIC_CLOUD), &run.static_cloud)?;
    write_json(&put(names::MOTION), &run.motion)?;
    let c = &run.compensated;
    write_pfm_image(&put(names::INTENSITY), &c.intensity)?;
    write_png16(&put(names::INTENSITY_PNG), &c.intensity)?;
    write_pfm_image(&put(names::DISPARITY), &c.disparity)?;
    write_pfm_image(&put(names::ALPHA), &c.alpha)?;
    let depth = run.compensated_depth();
    write_pfm_image(&put(names::DEPTH), &depth)?;
    let d0 = run.initial_disparity.to_image();
    write_pfm_image(&put(names::INITIAL_DISPARITY), &d0)?;
    write_losses_csv(&put(names::LOSSES), &manifest.losses)?;
    write_json(&put(names::RUN), manifest)?;
    Ok(written)
}

/// Hash of every file in a directory, sorted by name.
pub fn hash_dir(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() {
            let name = entry.file_name().to_string_lossy().into_owned();
            out.insert(name, sha256_hex(&read_bytes(&path)?));
        }
    }
    Ok(out)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pfm_round_trip_and_scale_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f32> = (0..35).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let bytes = pfm_bytes(7, 5, &data).unwrap();
        assert!(bytes.starts_with(b"Pf\n7 5\n-1.0\n"));
        let (w, h, back) = parse_pfm(&bytes).unwrap();
        assert_eq!((w, h), (7, 5));
        assert_eq!(back, data);
    }

    #[test]
    fn big_endian_pfm_is_byte_swapped() {
        // Written by hand: 2x1, scale +1, rows bottom-up (a single row here).
        let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&1.5f32.to_be_bytes());
        bytes.extend_from_slice(&(-2.25f32).to_be_bytes());
        let (_, _, data) = parse_pfm(&bytes).unwrap();
        assert_eq!(data, vec![1.5, -2.25]);
    }

    #[test]
    fn pfm_rows_are_bottom_up_on_disk() {
        let bytes = pfm_bytes(1, 2, &[1.0, 2.0]).unwrap();
        let payload = &bytes[bytes.len() - 8..];
        assert_eq!(&payload[..4], &2.0f32.to_le_bytes());
    }

    #[test]
    fn truncated_pfm_errors() {
        let bytes = pfm_bytes(4, 4, &[0.5; 16]).unwrap();
        for cut in 0..bytes.len() {
            assert!(parse_pfm(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        assert!(parse_pfm(b"Pf\n99999999 99999999\n-1.0\n").is_err());
        assert!(parse_pfm(b"PF\n1 1\n-1.0\n\0\0\0\0").is_err());
    }

    #[test]
    fn cloud_round_trip_and_truncation() {
        let cloud = GaussianCloud {
            gaussians: vec![
                Gaussian2D {
                    center: Point3::new(0.25, -0.5, 1.5),
                    sigma: 2.0,
                    intensity: 0.75,
                },
                Gaussian2D {
                    center: Point3::new(1.0, 2.0, 3.0),
                    sigma: 0.5,
                    intensity: 0.0,
                },
            ],
            background: 0.125,
        };
        let bytes = cloud_bytes(&cloud);
        assert_eq!(bytes.len(), 20 + 40);
        assert_eq!(parse_cloud(&bytes).unwrap(), cloud);
        for cut in 0..bytes.len() {
            assert!(parse_cloud(&bytes[..cut]).is_err());
        }
        let mut huge = bytes.clone();
        huge[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(parse_cloud(&huge).is_err());
    }

    #[test]
    fn quantization_is_idempotent() {
        for k in 0..=65535u16 {
            assert_eq!(quantize16(k as f64 / 65535.0), k);
        }
    }
}
