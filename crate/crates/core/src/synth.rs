//! Synthetic rolling-shutter light fields of textured rigid scenes.
//!
//! Every row `v` of every view is ray-cast with the scene at its pose at
//! `row_time(v)`: a point with static position `Ps` sits at
//! `R(t ω) Ps + t v`. Rays are moved into the static frame by the inverse
//! transform, so primitives are always intersected in their rest pose.
//! Ground truth (appearance, depth) is rendered at `t = 0` from the central
//! view on a canvas twice as large in each direction.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rodrigues, MotionParams, Point3, Rotation3};
use crate::lightfield::{Image, LFIntrinsics, LightField4D, Mask, RSTiming};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    Checker {
        period: f64,
        low: f64,
        high: f64,
    },
    /// Seeded fractal value noise; `cell` is the lattice spacing of the
    /// coarsest octave in scene units.
    Noise {
        seed: u64,
        cell: f64,
        octaves: u32,
        low: f64,
        high: f64,
    },
    /// Grayscale image tiled over the surface, `scale` scene units per texel.
    Image { path: PathBuf, scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    /// Fronto-parallel plane at depth `center[2]`; unbounded when
    /// `half_extent` is absent.
    Plane {
        center: [f64; 3],
        half_extent: Option<[f64; 2]>,
        texture: Texture,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
        texture: Texture,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    pub motion: MotionParams,
    pub intr: LFIntrinsics,
    pub timing: RSTiming,
    pub angular: usize,
    pub width: usize,
    pub height: usize,
    /// Samples per pixel along each axis.
    pub supersample: usize,
    pub background: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shutter {
    Rolling,
    Global,
}

/// Pose bookkeeping of a light-field render: one pose per row, shared by
/// every view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct RenderStats {
    pub poses_computed: usize,
    pub pose_lookups: usize,
}

#[derive(Debug, Clone)]
pub struct SceneArtifacts {
    pub lf: LightField4D,
    pub gt_central: Image,
    pub gt_depth: Image,
    /// Ground-truth canvas pixels seen by the rolling-shutter central view.
    pub mask: Mask,
    pub motion_gt: MotionParams,
    pub intr: LFIntrinsics,
    pub gt_intr: LFIntrinsics,
    pub timing: RSTiming,
    pub stats: RenderStats,
}

/// Texture lookup with images already decoded.
enum Sampler {
    Checker { period: f64, low: f64, high: f64 },
    Noise { lattice: Vec<f64>, cell: f64, octaves: u32, low: f64, high: f64 },
    Image { img: Image, scale: f64 },
}

const LATTICE: usize = 256;

impl Sampler {
    fn new(t: &Texture) -> Result<Self> {
        Ok(match t {
            Texture::Checker { period, low, high } => {
                if !(*period > 0.0) {
                    return Err(Error::Scene(format!("checker period {period} must be positive")));
                }
                Sampler::Checker {
                    period: *period,
                    low: *low,
                    high: *high,
                }
            }
            Texture::Noise {
                seed,
                cell,
                octaves,
                low,
                high,
            } => {
                if !(*cell > 0.0) || *octaves == 0 {
                    return Err(Error::Scene("noise needs a positive cell and octaves".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Sampler::Noise {
                    lattice: (0..LATTICE * LATTICE).map(|_| rng.gen::<f64>()).collect(),
                    cell: *cell,
                    octaves: *octaves,
                    low: *low,
                    high: *high,
                }
            }
            Texture::Image { path, scale } => {
                let img = image::open(path)
                    .map_err(|e| Error::data(path, e.to_string()))?
                    .into_luma16();
                let (w, h) = img.dimensions();
                let data = img.pixels().map(|p| p.0[0] as f64 / 65535.0).collect();
                Sampler::Image {
                    img: Image::from_vec(w as usize, h as usize, data)?,
                    scale: *scale,
                }
            }
        })
    }

    fn sample(&self, s: f64, t: f64) -> f64 {
        match self {
            Sampler::Checker { period, low, high } => {
                let k = (s / period).floor() as i64 + (t / period).floor() as i64;
                if k.rem_euclid(2) == 0 {
                    *low
                } else {
                    *high
                }
            }
            Sampler::Noise {
                lattice,
                cell,
                octaves,
                low,
                high,
            } => {
                let mut sum = 0.0;
                let mut norm = 0.0;
                let mut amp = 1.0;
                let mut freq = 1.0 / cell;
                for o in 0..*octaves {
                    // Offset octaves so that lattice points do not line up.
                    let off = 17.0 * o as f64;
                    sum += amp * value_noise(lattice, s * freq + off, t * freq + off);
                    norm += amp;
                    amp *= 0.5;
                    freq *= 2.0;
                }
                let n = (0.5 + 2.2 * (sum / norm - 0.5)).clamp(0.0, 1.0);
                low + (high - low) * n
            }
            Sampler::Image { img, scale } => {
                let w = img.width() as f64;
                let h = img.height() as f64;
                let u = (s / scale).rem_euclid(w);
                let v = (t / scale).rem_euclid(h);
                img.view().sample_bilinear(u, v)
            }
        }
    }
}

fn value_noise(lattice: &[f64], x: f64, y: f64) -> f64 {
    let xf = x.floor();
    let yf = y.floor();
    let fx = x - xf;
    let fy = y - yf;
    let ix = (xf as i64).rem_euclid(LATTICE as i64) as usize;
    let iy = (yf as i64).rem_euclid(LATTICE as i64) as usize;
    let ix1 = (ix + 1) % LATTICE;
    let iy1 = (iy + 1) % LATTICE;
    let sx = fx * fx * (3.0 - 2.0 * fx);
    let sy = fy * fy * (3.0 - 2.0 * fy);
    let at = |i: usize, j: usize| lattice[j * LATTICE + i];
    let top = at(ix, iy) * (1.0 - sx) + at(ix1, iy) * sx;
    let bottom = at(ix, iy1) * (1.0 - sx) + at(ix1, iy1) * sx;
    top * (1.0 - sy) + bottom * sy
}

/// A primitive in its rest pose with a decoded texture.
struct Body {
    shape: Shape,
    sampler: Sampler,
}

enum Shape {
    Plane {
        center: Point3,
        half_extent: Option<[f64; 2]>,
    },
    Sphere {
        center: Point3,
        radius: f64,
    },
}

impl Body {
    /// Ray parameter and texture value of the nearest hit with `s > 0`.
    fn intersect(&self, o: &Point3, d: &Point3) -> Option<(f64, f64)> {
        match &self.shape {
            Shape::Plane {
                center,
                half_extent,
            } => {
                if d.z == 0.0 {
                    return None;
                }
                let s = (center.z - o.z) / d.z;
                if !(s > 0.0) {
                    return None;
                }
                let px = o.x + s * d.x - center.x;
                let py = o.y + s * d.y - center.y;
                if let Some([hx, hy]) = half_extent {
                    if px.abs() > *hx || py.abs() > *hy {
                        return None;
                    }
                }
                Some((s, self.sampler.sample(px, py)))
            }
            Shape::Sphere { center, radius } => {
                let oc = o - center;
                let a = d.dot(d);
                let b = oc.dot(d);
                let c = oc.dot(&oc) - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let mut s = (-b - sq) / a;
                if !(s > 0.0) {
                    s = (-b + sq) / a;
                    if !(s > 0.0) {
                        return None;
                    }
                }
                let p = o + d * s - center;
                // Planar map seen from the camera; the back face is never visible.
                Some((s, self.sampler.sample(p.x, p.y)))
            }
        }
    }
}

/// Rest-to-camera pose at one instant, stored inverted for ray transport.
#[derive(Debug, Clone, Copy)]
struct Pose {
    rot_inv: Rotation3,
    trans: Point3,
}

impl Pose {
    fn at(m: &MotionParams, t: f64) -> Self {
        Self {
            rot_inv: rodrigues(&(-t * m.omega)),
            trans: t * m.vel,
        }
    }

    /// Camera-frame ray to the rest frame.
    #[inline]
    fn to_rest(&self, o: &Point3, d: &Point3) -> (Point3, Point3) {
        (self.rot_inv * (o - self.trans), self.rot_inv * d)
    }
}

struct Tracer {
    bodies: Vec<Body>,
    background: f64,
}

struct Hit {
    value: f64,
    /// Camera-frame depth, 0 when nothing is hit.
    depth: f64,
    rest: Option<Point3>,
}

impl Tracer {
    fn new(spec: &SceneSpec) -> Result<Self> {
        let bodies = spec
            .primitives
            .iter()
            .map(|p| {
                Ok(match p {
                    Primitive::Plane {
                        center,
                        half_extent,
                        texture,
                    } => Body {
                        shape: Shape::Plane {
                            center: Point3::from(*center),
                            half_extent: *half_extent,
                        },
                        sampler: Sampler::new(texture)?,
                    },
                    Primitive::Sphere {
                        center,
                        radius,
                        texture,
                    } => Body {
                        shape: Shape::Sphere {
                            center: Point3::from(*center),
                            radius: *radius,
                        },
                        sampler: Sampler::new(texture)?,
                    },
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            bodies,
            background: spec.background,
        })
    }

    fn trace(&self, o: &Point3, d: &Point3, pose: &Pose) -> Hit {
        let (ro, rd) = pose.to_rest(o, d);
        let mut best: Option<(f64, f64)> = None;
        for b in &self.bodies {
            if let Some((s, val)) = b.intersect(&ro, &rd) {
                if best.map_or(true, |(bs, _)| s < bs) {
                    best = Some((s, val));
                }
            }
        }
        match best {
            Some((s, value)) => Hit {
                value,
                depth: s * d.z,
                rest: Some(ro + rd * s),
            },
            None => Hit {
                value: self.background,
                depth: 0.0,
                rest: None,
            },
        }
    }
}

/// Ray of view `(x, y)` through pixel `(u, v)`: from the view's center of
/// projection to the point of the focal plane imaged at `(u, v)`.
/// The sub-pixel offset is added after centering so that the same pixel on
/// a recentered canvas yields the identical ray.
#[inline]
fn view_ray(intr: &LFIntrinsics, offset: (f64, f64), u: usize, v: usize, du: f64, dv: f64) -> (Point3, Point3) {
    let pf = intr.focal_plane;
    let o = Point3::new(offset.0, offset.1, 0.0);
    let x = (u as f64 - intr.u0) + du;
    let y = (v as f64 - intr.v0) + dv;
    let q = Point3::new(x * pf / intr.f, y * pf / intr.f, pf);
    (o, q - o)
}

fn sub_offsets(n: usize) -> Vec<f64> {
    let n = n.max(1);
    (0..n).map(|i| (i as f64 + 0.5) / n as f64 - 0.5).collect()
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::Scene("a scene needs at least one primitive".into()));
        }
        if self.angular == 0 || self.angular % 2 == 0 {
            return Err(Error::Scene(format!("angular resolution {} is not odd", self.angular)));
        }
        if self.width == 0 || self.height == 0 || self.supersample == 0 {
            return Err(Error::Scene("empty resolution".into()));
        }
        if !self.motion.is_finite() {
            return Err(Error::Scene("motion is not finite".into()));
        }
        self.intr.validate(self.width).map_err(|e| Error::Scene(e.to_string()))?;
        let t0 = self.timing.row_time(0.0);
        let t1 = self.timing.row_time((self.height - 1) as f64);
        for (i, p) in self.primitives.iter().enumerate() {
            let probes: Vec<(Point3, f64)> = match p {
                Primitive::Plane {
                    center,
                    half_extent,
                    ..
                } => {
                    let c = Point3::from(*center);
                    match half_extent {
                        Some([hx, hy]) => [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)]
                            .iter()
                            .map(|(sx, sy)| (c + Point3::new(sx * hx, sy * hy, 0.0), 0.0))
                            .collect(),
                        None => vec![(c, 0.0)],
                    }
                }
                Primitive::Sphere { center, radius, .. } => {
                    if !(*radius > 0.0) {
                        return Err(Error::Scene(format!("primitive {i}: radius must be positive")));
                    }
                    vec![(Point3::from(*center), *radius)]
                }
            };
            for k in 0..=8 {
                let t = t0 + (t1 - t0) * k as f64 / 8.0;
                for (c, r) in &probes {
                    let z = self.motion.at_time(c, t).z - r;
                    if !(z > 0.0) {
                        return Err(Error::Scene(format!(
                            "primitive {i} is behind the camera at t = {t:.3}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Central-view intrinsics on the doubled ground-truth canvas.
    pub fn gt_intrinsics(&self) -> LFIntrinsics {
        self.intr.enlarged(self.width, self.height, 2)
    }
}

/// Render the rolling-shutter light field and all ground-truth artifacts.
pub fn render_rslf(spec: &SceneSpec) -> Result<SceneArtifacts> {
    spec.validate()?;
    let tracer = Tracer::new(spec)?;
    let (lf, stats) = render_views(spec, &tracer, Shutter::Rolling)?;
    let gt_intr = spec.gt_intrinsics();
    let (gt_central, gt_depth) = render_gt(spec, &tracer, &gt_intr)?;
    let mask = visibility_mask(spec, &tracer, &gt_intr, &gt_depth)?;
    Ok(SceneArtifacts {
        lf,
        gt_central,
        gt_depth,
        mask,
        motion_gt: spec.motion,
        intr: spec.intr,
        gt_intr,
        timing: spec.timing,
        stats,
    })
}

/// All views of the scene; with [`Shutter::Global`] every row is read at `t = 0`.
pub fn render_lightfield(spec: &SceneSpec, shutter: Shutter) -> Result<(LightField4D, RenderStats)> {
    spec.validate()?;
    let tracer = Tracer::new(spec)?;
    render_views(spec, &tracer, shutter)
}

fn render_views(spec: &SceneSpec, tracer: &Tracer, shutter: Shutter) -> Result<(LightField4D, RenderStats)> {
    let (a, w, h) = (spec.angular, spec.width, spec.height);
    let poses: Vec<Pose> = (0..h)
        .map(|v| {
            let t = match shutter {
                Shutter::Rolling => spec.timing.row_time(v as f64),
                Shutter::Global => 0.0,
            };
            Pose::at(&spec.motion, t)
        })
        .collect();
    let lookups = AtomicUsize::new(0);
    let c = (a - 1) as f64 / 2.0;
    let baseline = spec.intr.view_baseline();
    let offs = sub_offsets(spec.supersample);
    let norm = 1.0 / (offs.len() * offs.len()) as f64;

    let rows: Vec<Vec<f64>> = (0..a * a * h)
        .into_par_iter()
        .map(|k| {
            let view = k / h;
            let v = k % h;
            let (x, y) = (view % a, view / a);
            let offset = ((x as f64 - c) * baseline, (y as f64 - c) * baseline);
            let pose = &poses[v];
            lookups.fetch_add(1, Ordering::Relaxed);
            (0..w)
                .map(|u| {
                    let mut acc = 0.0;
                    for dv in &offs {
                        for du in &offs {
                            let (o, d) = view_ray(&spec.intr, offset, u, v, *du, *dv);
                            acc += tracer.trace(&o, &d, pose).value;
                        }
                    }
                    (acc * norm).clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect();
    let data = rows.concat();
    let lf = LightField4D::from_raw(a, w, h, data)?;
    Ok((
        lf,
        RenderStats {
            poses_computed: poses.len(),
            pose_lookups: lookups.into_inner(),
        },
    ))
}

fn render_gt(spec: &SceneSpec, tracer: &Tracer, gt_intr: &LFIntrinsics) -> Result<(Image, Image)> {
    let (w2, h2) = (2 * spec.width, 2 * spec.height);
    let pose = Pose::at(&spec.motion, 0.0);
    let offs = sub_offsets(spec.supersample);
    let norm = 1.0 / (offs.len() * offs.len()) as f64;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..h2)
        .into_par_iter()
        .map(|v| {
            let mut vals = Vec::with_capacity(w2);
            let mut depths = Vec::with_capacity(w2);
            for u in 0..w2 {
                let mut acc = 0.0;
                for dv in &offs {
                    for du in &offs {
                        let (o, d) = view_ray(gt_intr, (0.0, 0.0), u, v, *du, *dv);
                        acc += tracer.trace(&o, &d, &pose).value;
                    }
                }
                vals.push((acc * norm).clamp(0.0, 1.0));
                let (o, d) = view_ray(gt_intr, (0.0, 0.0), u, v, 0.0, 0.0);
                depths.push(tracer.trace(&o, &d, &pose).depth);
            }
            (vals, depths)
        })
        .collect();
    let (vals, depths): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    Ok((
        Image::from_vec(w2, h2, vals.concat())?,
        Image::from_vec(w2, h2, depths.concat())?,
    ))
}

/// Forward-map rolling-shutter hits of the central view to the ground-truth
/// canvas and keep the pixels whose depth agrees there.
fn visibility_mask(spec: &SceneSpec, tracer: &Tracer, gt_intr: &LFIntrinsics, gt_depth: &Image) -> Result<Mask> {
    let (w, h) = (spec.width, spec.height);
    let (w2, h2) = (2 * w, 2 * h);
    let offs = sub_offsets(3);
    let hits: Vec<Vec<usize>> = (0..h)
        .into_par_iter()
        .map(|v| {
            let pose = Pose::at(&spec.motion, spec.timing.row_time(v as f64));
            let mut out = Vec::new();
            for u in 0..w {
                for dv in &offs {
                    for du in &offs {
                        let (o, d) = view_ray(&spec.intr, (0.0, 0.0), u, v, *du, *dv);
                        let hit = tracer.trace(&o, &d, &pose);
                        let Some(p) = hit.rest else { continue };
                        if !(p.z > 0.0) {
                            continue;
                        }
                        let gu = (gt_intr.u0 + gt_intr.f * p.x / p.z).round();
                        let gv = (gt_intr.v0 + gt_intr.f * p.y / p.z).round();
                        if gu < 0.0 || gv < 0.0 || gu >= w2 as f64 || gv >= h2 as f64 {
                            continue;
                        }
                        let (gu, gv) = (gu as usize, gv as usize);
                        let gz = gt_depth.get(gu, gv);
                        if gz > 0.0 && (gz - p.z).abs() <= 0.02 * gz {
                            out.push(gv * w2 + gu);
                        }
                    }
                }
            }
            out
        })
        .collect();
    let mut mask = Mask::new(w2, h2, false);
    for k in hits.into_iter().flatten() {
        mask.set(k % w2, k / w2, true);
    }
    Ok(mask)
}

/// Largest image displacement over one readout of a grid of points on the
/// focal plane: `|π(T_t1 P) − π(T_t0 P)|` between the first and last rows.
pub fn max_displacement(m: &MotionParams, intr: &LFIntrinsics, timing: &RSTiming, width: usize, height: usize) -> f64 {
    let t0 = timing.row_time(0.0);
    let t1 = timing.row_time((height - 1) as f64);
    let project = |p: &Point3| (intr.u0 + intr.f * p.x / p.z, intr.v0 + intr.f * p.y / p.z);
    let mut best: f64 = 0.0;
    for j in 0..=8 {
        for i in 0..=8 {
            let u = (width - 1) as f64 * i as f64 / 8.0;
            let v = (height - 1) as f64 * j as f64 / 8.0;
            let z = intr.focal_plane;
            let p = Point3::new(z * (u - intr.u0) / intr.f, z * (v - intr.v0) / intr.f, z);
            let a = project(&m.at_time(&p, t0));
            let b = project(&m.at_time(&p, t1));
            best = best.max(((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt());
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionCategory {
    Gs,
    Slow,
    Fast,
}

impl MotionCategory {
    /// Category of a motion from its readout displacement in pixels.
    pub fn from_displacement(px: f64) -> Self {
        if px < 0.5 {
            MotionCategory::Gs
        } else if px < 8.0 {
            MotionCategory::Slow
        } else {
            MotionCategory::Fast
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MotionCategory::Gs => "GS",
            MotionCategory::Slow => "slow",
            MotionCategory::Fast => "fast",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteMotion {
    pub label: &'static str,
    pub category: MotionCategory,
    pub motion: MotionParams,
    pub displacement_px: f64,
}

pub const SLOW_DISPLACEMENT_PX: f64 = 5.0;
pub const FAST_DISPLACEMENT_PX: f64 = 20.0;

/// The eleven-motion protocol: static, five slow and five fast motions.
///
/// Slow motions each favour one axis (`vx`, `vz`, `ωz`, `ωy`, then a mixed
/// one); the fast ones reuse those axes with flipped signs. Magnitudes are set
/// by bisection so that [`max_displacement`] hits the target.
pub fn motion_suite(intr: &LFIntrinsics, timing: &RSTiming, width: usize, height: usize) -> Vec<SuiteMotion> {
    let slow: [(&'static str, [f64; 3], [f64; 3]); 5] = [
        ("slow-vx", [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]),
        ("slow-vz", [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]),
        ("slow-wz", [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]),
        ("slow-wy", [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]),
        ("slow-mixed", [0.3, -0.5, 0.4], [0.6, 0.4, -0.5]),
    ];
    let fast: [(&'static str, [f64; 3], [f64; 3]); 5] = [
        ("fast-vx", [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]),
        ("fast-vz", [0.0, 0.0, 0.0], [0.0, 0.0, -1.0]),
        ("fast-wz", [0.0, 0.0, -1.0], [0.0, 0.0, 0.0]),
        ("fast-wy", [0.0, -1.0, 0.0], [0.0, 0.0, 0.0]),
        ("fast-mixed", [-0.4, 0.3, -0.3], [-0.5, 0.5, 0.4]),
    ];
    let mut out = vec![SuiteMotion {
        label: "static",
        category: MotionCategory::Gs,
        motion: MotionParams::zero(),
        displacement_px: 0.0,
    }];
    for (list, target, category) in [
        (&slow, SLOW_DISPLACEMENT_PX, MotionCategory::Slow),
        (&fast, FAST_DISPLACEMENT_PX, MotionCategory::Fast),
    ] {
        for (label, w, v) in list.iter() {
            let dir = MotionParams::new(*w, *v);
            let disp = |s: f64| max_displacement(&dir.scaled(s), intr, timing, width, height);
            let (mut lo, mut hi) = (0.0, 1.0);
            while disp(hi) < target {
                hi *= 2.0;
            }
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if disp(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let motion = dir.scaled(0.5 * (lo + hi));
            out.push(SuiteMotion {
                label,
                category,
                motion,
                displacement_px: max_displacement(&motion, intr, timing, width, height),
            });
        }
    }
    out
}

pub const PRESETS: [&str; 4] = ["plane", "checker", "sphere", "mixed"];

fn noise(seed: u64, cell: f64) -> Texture {
    Texture::Noise {
        seed,
        cell,
        octaves: 2,
        low: 0.1,
        high: 0.9,
    }
}

/// Built-in scenes at desk scale: square `size` views, `angular × angular` array.
pub fn preset(name: &str, size: usize, angular: usize, seed: u64, motion: MotionParams) -> Result<SceneSpec> {
    let intr = LFIntrinsics::desk(size, size);
    let timing = RSTiming::for_height(size, intr.v0);
    let primitives = match name {
        "plane" => vec![Primitive::Plane {
            center: [0.0, 0.0, 0.8],
            half_extent: None,
            texture: noise(seed, 0.1),
        }],
        "checker" => vec![
            Primitive::Plane {
                center: [0.0, 0.0, 1.6],
                half_extent: None,
                texture: noise(seed, 0.15),
            },
            Primitive::Plane {
                center: [-0.12, -0.05, 0.75],
                half_extent: Some([0.14, 0.2]),
                texture: Texture::Checker {
                    period: 0.09,
                    low: 0.2,
                    high: 0.8,
                },
            },
            Primitive::Plane {
                center: [0.2, 0.1, 1.05],
                half_extent: Some([0.18, 0.16]),
                texture: noise(seed ^ 0x5eed, 0.1),
            },
        ],
        "sphere" => vec![
            Primitive::Plane {
                center: [0.0, 0.0, 1.6],
                half_extent: None,
                texture: noise(seed, 0.15),
            },
            Primitive::Sphere {
                center: [0.02, 0.0, 1.0],
                radius: 0.28,
                texture: noise(seed.wrapping_add(1), 0.09),
            },
        ],
        "mixed" => vec![
            Primitive::Plane {
                center: [0.0, 0.0, 1.7],
                half_extent: None,
                texture: noise(seed, 0.15),
            },
            Primitive::Sphere {
                center: [-0.15, 0.12, 0.9],
                radius: 0.17,
                texture: Texture::Checker {
                    period: 0.1,
                    low: 0.2,
                    high: 0.8,
                },
            },
            Primitive::Plane {
                center: [0.18, -0.08, 1.15],
                half_extent: Some([0.2, 0.15]),
                texture: noise(seed.wrapping_add(2), 0.11),
            },
            Primitive::Plane {
                center: [0.05, 0.22, 0.72],
                half_extent: Some([0.12, 0.06]),
                texture: noise(seed.wrapping_add(3), 0.08),
            },
        ],
        other => {
            return Err(Error::Argument(format!(
                "unknown preset {other:?}; expected one of {PRESETS:?}"
            )))
        }
    };
    Ok(SceneSpec {
        primitives,
        motion,
        intr,
        timing,
        angular,
        width: size,
        height: size,
        supersample: 3,
        background: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(name: &str, motion: MotionParams) -> SceneSpec {
        preset(name, 32, 5, 3, motion).unwrap()
    }

    #[test]
    fn zero_motion_rolling_equals_global() {
        let spec = small("mixed", MotionParams::zero());
        let (rs, _) = render_lightfield(&spec, Shutter::Rolling).unwrap();
        let (gs, _) = render_lightfield(&spec, Shutter::Global).unwrap();
        assert_eq!(rs, gs);
        let moving = small("mixed", MotionParams::new([0.0, 0.0, 0.1], [0.05, 0.0, 0.0]));
        let (rs2, _) = render_lightfield(&moving, Shutter::Rolling).unwrap();
        assert_ne!(rs2, gs);
    }

    #[test]
    fn focal_plane_scene_has_no_parallax() {
        let mut spec = small("plane", MotionParams::zero());
        spec.primitives = vec![Primitive::Plane {
            center: [0.0, 0.0, spec.intr.focal_plane],
            half_extent: None,
            texture: noise(1, 0.05),
        }];
        let (lf, _) = render_lightfield(&spec, Shutter::Rolling).unwrap();
        let c = lf.central_view().to_image();
        for x in 0..5 {
            for y in 0..5 {
                let v = lf.sai_view(x, y).unwrap();
                for (a, b) in v.data().iter().zip(c.data()) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn central_sai_matches_gt_center_when_static() {
        let spec = small("sphere", MotionParams::zero());
        let art = render_rslf(&spec).unwrap();
        let c = art.lf.central_view();
        for v in 0..32 {
            for u in 0..32 {
                assert_eq!(c.get(u, v), art.gt_central.get(u + 16, v + 16));
            }
        }
        // Mask is exactly the central field of view.
        for v in 0..64 {
            for u in 0..64 {
                let inside = (16..48).contains(&u) && (16..48).contains(&v);
                assert_eq!(art.mask.get(u, v), inside, "({u},{v})");
            }
        }
    }

    #[test]
    fn pose_is_computed_once_per_row() {
        let spec = small("plane", MotionParams::new([0.0, 0.1, 0.0], [0.0; 3]));
        let (_, stats) = render_lightfield(&spec, Shutter::Rolling).unwrap();
        assert_eq!(stats.poses_computed, 32);
        assert_eq!(stats.pose_lookups, 25 * 32);
    }

    #[test]
    fn positive_vx_shears_lower_rows_to_the_right() {
        // Vertical black/white edge on a plane at depth z.
        let z = 1.3;
        let vx = 0.2;
        let mut spec = small("plane", MotionParams::new([0.0; 3], [vx, 0.0, 0.0]));
        spec.width = 64;
        spec.height = 64;
        spec.intr = LFIntrinsics::desk(64, 64);
        spec.timing = RSTiming::for_height(64, spec.intr.v0);
        spec.primitives = vec![Primitive::Plane {
            center: [1.0, 0.0, z],
            half_extent: Some([1.0, 10.0]),
            texture: Texture::Checker {
                period: 10.0,
                low: 1.0,
                high: 1.0,
            },
        }];
        spec.background = 0.0;
        let (lf, _) = render_lightfield(&spec, Shutter::Rolling).unwrap();
        let c = lf.central_view();
        for v in [0usize, 16, 32, 48, 63] {
            // Sub-pixel edge from the row's coverage.
            let covered: f64 = c.row(v).iter().sum();
            let edge = 64.0 - covered - 0.5;
            let t = spec.timing.row_time(v as f64);
            let expected = spec.intr.u0 + spec.intr.f * vx * t / z;
            assert!((edge - expected).abs() < 0.5, "row {v}: {edge} vs {expected}");
        }
    }

    #[test]
    fn suite_shape() {
        let intr = LFIntrinsics::desk(128, 128);
        let timing = RSTiming::for_height(128, intr.v0);
        let suite = motion_suite(&intr, &timing, 128, 128);
        assert_eq!(suite.len(), 11);
        assert!(suite[0].motion.is_zero());
        for s in &suite[1..6] {
            assert!((s.displacement_px - SLOW_DISPLACEMENT_PX).abs() < 1e-6);
        }
        for s in &suite[6..] {
            assert!((s.displacement_px - FAST_DISPLACEMENT_PX).abs() < 1e-6);
        }
        for (i, a) in suite.iter().enumerate() {
            for b in &suite[i + 1..] {
                assert_ne!(a.motion, b.motion);
            }
        }
    }

    #[test]
    fn behind_camera_is_rejected() {
        let mut spec = small("plane", MotionParams::new([0.0; 3], [0.0, 0.0, -3.0]));
        spec.primitives = vec![Primitive::Plane {
            center: [0.0, 0.0, 0.8],
            half_extent: None,
            texture: noise(0, 0.05),
        }];
        assert!(matches!(render_rslf(&spec), Err(Error::Scene(_))));
    }
}
