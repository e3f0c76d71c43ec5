//! Minimal 2D Gaussian splats and their differentiable band renderer.
//!
//! Each splat has five degrees of freedom: a 3D center, an isotropic radius
//! in pixels and a scalar intensity. A splat is drawn in view `(x, y)` at its
//! parallax-shifted projection and composited front to back, nearest
//! (largest disparity) first. With a motion hypothesis, every center is first
//! moved to its static position and re-imaged at the band time.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{motion_jacobians, project_unchecked, MotionParams, Point3, RelativeTransform};
use crate::lightfield::{Image, LFIntrinsics, RSTiming};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian2D {
    pub center: Point3,
    pub sigma: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianCloud {
    pub gaussians: Vec<Gaussian2D>,
    pub background: f64,
}

impl GaussianCloud {
    pub fn new(gaussians: Vec<Gaussian2D>, background: f64) -> Result<Self> {
        let cloud = Self {
            gaussians,
            background,
        };
        cloud.validate(&RenderSettings::default())?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self, settings: &RenderSettings) -> Result<()> {
        if self.gaussians.is_empty() {
            return Err(Error::Argument("a cloud needs at least one gaussian".into()));
        }
        for (i, g) in self.gaussians.iter().enumerate() {
            let finite = g.center.iter().all(|x| x.is_finite());
            if !finite
                || !(settings.sigma_min..=settings.sigma_max).contains(&g.sigma)
                || !(0.0..=1.0).contains(&g.intensity)
            {
                return Err(Error::Argument(format!(
                    "gaussian {i} violates invariants: {g:?}"
                )));
            }
        }
        Ok(())
    }

    /// Index of the first gaussian holding a non-finite parameter.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.gaussians.iter().position(|g| {
            !(g.center.iter().all(|x| x.is_finite()) && g.sigma.is_finite() && g.intensity.is_finite())
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    /// Opacity ceiling of a splat at its center.
    pub alpha_cap: f64,
    /// Support radius in units of sigma; the kernel reaches zero there with
    /// a continuous first derivative.
    pub support: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            alpha_cap: 0.99,
            support: 3.0,
            sigma_min: 0.5,
            sigma_max: 32.0,
        }
    }
}

/// Truncated Gaussian kernel `k(q)` with `q = r² / 2σ²`, normalized to
/// `k(0) = 1` and tapered so that `k` and `k'` vanish at the support edge.
#[derive(Debug, Clone, Copy)]
pub struct SplatKernel {
    alpha_cap: f64,
    q_max: f64,
    tail: f64,
    inv_k0: f64,
}

impl SplatKernel {
    pub fn new(settings: &RenderSettings) -> Self {
        let q_max = settings.support * settings.support / 2.0;
        let tail = (-q_max).exp();
        let k0 = 1.0 - tail * (1.0 + q_max);
        Self {
            alpha_cap: settings.alpha_cap,
            q_max,
            tail,
            inv_k0: 1.0 / k0,
        }
    }

    #[inline]
    pub fn alpha(&self, q: f64) -> f64 {
        if q >= self.q_max {
            return 0.0;
        }
        self.alpha_cap * ((-q).exp() - self.tail * (1.0 + self.q_max - q)) * self.inv_k0
    }

    /// `(α, dα/dq)`.
    #[inline]
    pub fn alpha_grad(&self, q: f64) -> (f64, f64) {
        if q >= self.q_max {
            return (0.0, 0.0);
        }
        let e = (-q).exp();
        let a = self.alpha_cap * (e - self.tail * (1.0 + self.q_max - q)) * self.inv_k0;
        let da = self.alpha_cap * (self.tail - e) * self.inv_k0;
        (a, da)
    }

    pub fn q_max(&self) -> f64 {
        self.q_max
    }
}

/// Rows `[start, end)` of a view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Band {
    pub start: usize,
    pub end: usize,
}

impl Band {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn rows(&self) -> usize {
        self.end - self.start
    }

    /// Consecutive bands of `height` rows covering `0..total`; the last one may be shorter.
    pub fn split(total: usize, height: usize) -> Vec<Band> {
        let height = height.max(1);
        (0..total)
            .step_by(height)
            .map(|s| Band::new(s, (s + height).min(total)))
            .collect()
    }
}

/// Rolling-shutter re-imaging parameters for a render: the motion
/// hypothesis, the per-gaussian observation times and the row clock.
#[derive(Debug, Clone, Copy)]
pub struct MotionContext<'a> {
    pub motion: MotionParams,
    pub taus: &'a [f64],
    pub timing: RSTiming,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedBand {
    pub band: Band,
    pub width: usize,
    pub intensity: Vec<f64>,
    /// Opacity-normalized disparity; 0 where nothing was drawn.
    pub disparity: Vec<f64>,
    pub alpha_acc: Vec<f64>,
}

/// A gaussian as drawn in one band: its image-space mean and the data the
/// backward pass needs.
#[derive(Debug, Clone, Copy)]
struct Drawn {
    index: usize,
    mu: [f64; 2],
    disparity: f64,
    sigma: f64,
    intensity: f64,
    p_lambda: Point3,
}

/// State kept between a forward band render and its backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    view: (usize, usize),
    band: Band,
    cloud_len: usize,
    band_time: Option<f64>,
    drawn: Vec<Drawn>,
    final_color: Vec<f64>,
}

impl ForwardCache {
    /// Indices of the gaussians drawn in this band, in compositing order.
    pub fn order(&self) -> Vec<usize> {
        self.drawn.iter().map(|d| d.index).collect()
    }

    pub fn band(&self) -> Band {
        self.band
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub position: Vec<Vector3<f64>>,
    pub sigma: Vec<f64>,
    pub intensity: Vec<f64>,
    pub omega: Vector3<f64>,
    pub vel: Vector3<f64>,
}

impl Gradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            position: vec![Vector3::zeros(); n],
            sigma: vec![0.0; n],
            intensity: vec![0.0; n],
            omega: Vector3::zeros(),
            vel: Vector3::zeros(),
        }
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.position.iter_mut().zip(&other.position) {
            *a += b;
        }
        for (a, b) in self.sigma.iter_mut().zip(&other.sigma) {
            *a += b;
        }
        for (a, b) in self.intensity.iter_mut().zip(&other.intensity) {
            *a += b;
        }
        self.omega += other.omega;
        self.vel += other.vel;
    }

    pub fn is_zero(&self) -> bool {
        self.position.iter().all(|p| *p == Vector3::zeros())
            && self.sigma.iter().all(|&x| x == 0.0)
            && self.intensity.iter().all(|&x| x == 0.0)
            && self.omega == Vector3::zeros()
            && self.vel == Vector3::zeros()
    }
}

/// Renders clouds into the views of one light-field geometry.
#[derive(Debug, Clone)]
pub struct SplatRenderer {
    pub intr: LFIntrinsics,
    pub width: usize,
    pub height: usize,
    /// Index of the central view along both angular axes.
    pub center: usize,
    pub settings: RenderSettings,
    kernel: SplatKernel,
}

impl SplatRenderer {
    pub fn new(intr: LFIntrinsics, width: usize, height: usize, angular: usize) -> Self {
        Self::with_settings(intr, width, height, angular, RenderSettings::default())
    }

    pub fn with_settings(
        intr: LFIntrinsics,
        width: usize,
        height: usize,
        angular: usize,
        settings: RenderSettings,
    ) -> Self {
        Self {
            intr,
            width,
            height,
            center: angular.saturating_sub(1) / 2,
            settings,
            kernel: SplatKernel::new(&settings),
        }
    }

    pub fn kernel(&self) -> &SplatKernel {
        &self.kernel
    }

    /// Pixel position of a gaussian in view `(x, y)` (no motion).
    pub fn project_to_view(&self, g: &Gaussian2D, x: usize, y: usize) -> (f64, f64) {
        let (mu, _) = self.project_point(&g.center, x, y);
        (mu[0], mu[1])
    }

    #[inline]
    fn project_point(&self, p: &Point3, x: usize, y: usize) -> ([f64; 2], f64) {
        let (u, v, d) = project_unchecked(p, &self.intr);
        let s = self.intr.parallax_scale();
        let dx = self.center as f64 - x as f64;
        let dy = self.center as f64 - y as f64;
        ([u + d * dx * s, v + d * dy * s], d)
    }

    /// Gaussians intersecting the band, sorted nearest first (ties by index).
    fn collect(
        &self,
        cloud: &GaussianCloud,
        x: usize,
        y: usize,
        band: Band,
        motion: Option<&MotionContext<'_>>,
    ) -> Result<(Vec<Drawn>, Option<f64>)> {
        let band_time = motion.map(|m| m.timing.band_time(band.start, band.end));
        if let Some(m) = motion {
            if m.taus.len() != cloud.len() {
                return Err(Error::Argument(format!(
                    "{} observation times for {} gaussians",
                    m.taus.len(),
                    cloud.len()
                )));
            }
        }
        let top = band.start as f64;
        let bottom = (band.end - 1) as f64;
        let right = (self.width - 1) as f64;
        let mut drawn: Vec<Drawn> = cloud
            .gaussians
            .iter()
            .enumerate()
            .filter_map(|(index, g)| {
                let p_lambda = match (motion, band_time) {
                    (Some(m), Some(tl)) => {
                        RelativeTransform::new(m.taus[index], tl, &m.motion).apply(&g.center)
                    }
                    _ => g.center,
                };
                if !(p_lambda.z > 0.0) {
                    return None;
                }
                let (mu, disparity) = self.project_point(&p_lambda, x, y);
                let r = self.settings.support * g.sigma;
                if mu[1] + r <= top || mu[1] - r >= bottom || mu[0] + r <= 0.0 || mu[0] - r >= right {
                    return None;
                }
                Some(Drawn {
                    index,
                    mu,
                    disparity,
                    sigma: g.sigma,
                    intensity: g.intensity,
                    p_lambda,
                })
            })
            .collect();
        drawn.sort_by(|a, b| {
            b.disparity
                .total_cmp(&a.disparity)
                .then(a.index.cmp(&b.index))
        });
        Ok((drawn, band_time))
    }

    /// Pixel window touched by a drawn gaussian inside the band.
    #[inline]
    fn footprint(&self, g: &Drawn, band: Band) -> Option<(usize, usize, usize, usize)> {
        let r = self.settings.support * g.sigma;
        let u_lo = (g.mu[0] - r).ceil().max(0.0);
        let u_hi = (g.mu[0] + r).floor().min((self.width - 1) as f64);
        let v_lo = (g.mu[1] - r).ceil().max(band.start as f64);
        let v_hi = (g.mu[1] + r).floor().min((band.end - 1) as f64);
        if u_lo > u_hi || v_lo > v_hi {
            return None;
        }
        Some((u_lo as usize, u_hi as usize, v_lo as usize, v_hi as usize))
    }

    /// Forward render of one band, returning the image and a backward cache.
    pub fn render_band_cached(
        &self,
        cloud: &GaussianCloud,
        x: usize,
        y: usize,
        band: Band,
        motion: Option<&MotionContext<'_>>,
    ) -> Result<(RenderedBand, ForwardCache)> {
        if band.start >= band.end || band.end > self.height {
            return Err(Error::Argument(format!(
                "band [{}, {}) is empty or exceeds {} rows",
                band.start, band.end, self.height
            )));
        }
        let (drawn, band_time) = self.collect(cloud, x, y, band, motion)?;
        let w = self.width;
        let n = band.rows() * w;
        let mut trans = vec![1.0; n];
        let mut color = vec![0.0; n];
        let mut disp = vec![0.0; n];
        for g in &drawn {
            let Some((u_lo, u_hi, v_lo, v_hi)) = self.footprint(g, band) else {
                continue;
            };
            let inv_2s2 = 0.5 / (g.sigma * g.sigma);
            for v in v_lo..=v_hi {
                let dy = v as f64 - g.mu[1];
                let row = (v - band.start) * w;
                for u in u_lo..=u_hi {
                    let dx = u as f64 - g.mu[0];
                    let a = self.kernel.alpha((dx * dx + dy * dy) * inv_2s2);
                    if a == 0.0 {
                        continue;
                    }
                    let k = row + u;
                    let wgt = a * trans[k];
                    color[k] += g.intensity * wgt;
                    disp[k] += g.disparity * wgt;
                    trans[k] *= 1.0 - a;
                }
            }
        }
        let bg = cloud.background;
        let intensity: Vec<f64> = color.iter().zip(&trans).map(|(c, t)| c + bg * t).collect();
        let alpha_acc: Vec<f64> = trans.iter().map(|t| 1.0 - t).collect();
        let disparity = disp
            .iter()
            .zip(&alpha_acc)
            .map(|(d, a)| if *a > 0.0 { d / a } else { 0.0 })
            .collect();
        let cache = ForwardCache {
            view: (x, y),
            band,
            cloud_len: cloud.len(),
            band_time,
            drawn,
            final_color: intensity.clone(),
        };
        Ok((
            RenderedBand {
                band,
                width: w,
                intensity,
                disparity,
                alpha_acc,
            },
            cache,
        ))
    }

    pub fn render_band(
        &self,
        cloud: &GaussianCloud,
        x: usize,
        y: usize,
        band: Band,
        motion: Option<&MotionContext<'_>>,
    ) -> Result<RenderedBand> {
        self.render_band_cached(cloud, x, y, band, motion).map(|r| r.0)
    }

    /// Exact gradients of `L` given `residual = ∂L/∂C` over the band, with
    /// the compositing order and the observation times held fixed.
    pub fn backward_band(
        &self,
        cloud: &GaussianCloud,
        cache: &ForwardCache,
        motion: Option<&MotionContext<'_>>,
        residual: &[f64],
    ) -> Result<Gradients> {
        let band = cache.band;
        let n_px = band.rows() * self.width;
        if cache.cloud_len != cloud.len() || residual.len() != n_px || cache.final_color.len() != n_px {
            return Err(Error::Internal(format!(
                "forward cache for view {:?} band {:?} does not match this backward call",
                cache.view, cache.band
            )));
        }
        if motion.is_some() != cache.band_time.is_some() {
            return Err(Error::Internal(
                "forward and backward passes disagree on motion".into(),
            ));
        }
        let (x, y) = cache.view;
        let w = self.width;
        let mut grads = Gradients::zeros(cloud.len());
        if residual.iter().all(|&r| r == 0.0) {
            return Ok(grads);
        }
        let mut trans = vec![1.0; n_px];
        let mut acc = vec![0.0; n_px];
        let s = self.intr.parallax_scale();
        let dxv = (self.center as f64 - x as f64) * s;
        let dyv = (self.center as f64 - y as f64) * s;
        let k_disp = self.intr.beta() / self.intr.w;
        let f = self.intr.f;

        for g in &cache.drawn {
            let Some((u_lo, u_hi, v_lo, v_hi)) = self.footprint(g, band) else {
                continue;
            };
            let sig2 = g.sigma * g.sigma;
            let inv_2s2 = 0.5 / sig2;
            let mut d_mu = [0.0f64; 2];
            let mut d_sigma = 0.0;
            let mut d_int = 0.0;
            for v in v_lo..=v_hi {
                let ddy = v as f64 - g.mu[1];
                let row = (v - band.start) * w;
                for u in u_lo..=u_hi {
                    let ddx = u as f64 - g.mu[0];
                    let q = (ddx * ddx + ddy * ddy) * inv_2s2;
                    let (a, da_dq) = self.kernel.alpha_grad(q);
                    if a == 0.0 {
                        continue;
                    }
                    let k = row + u;
                    let t = trans[k];
                    acc[k] += g.intensity * a * t;
                    let after = cache.final_color[k] - acc[k];
                    let r = residual[k];
                    d_int += r * a * t;
                    let dl_da = r * (g.intensity * t - after / (1.0 - a));
                    let dl_dq = dl_da * da_dq;
                    d_mu[0] += dl_dq * (-ddx / sig2);
                    d_mu[1] += dl_dq * (-ddy / sig2);
                    d_sigma += dl_dq * (-2.0 * q / g.sigma);
                    trans[k] = t * (1.0 - a);
                }
            }
            let j = g.index;
            grads.sigma[j] += d_sigma;
            grads.intensity[j] += d_int;

            let p = g.p_lambda;
            let iz = 1.0 / p.z;
            let dd_dz = -k_disp * iz * iz;
            // ∂μ/∂Pλ for μ = (u + d·dx, v + d·dy).
            let g_pl = Vector3::new(
                d_mu[0] * f * iz,
                d_mu[1] * f * iz,
                d_mu[0] * (-f * p.x * iz * iz + dxv * dd_dz)
                    + d_mu[1] * (-f * p.y * iz * iz + dyv * dd_dz),
            );
            match (motion, cache.band_time) {
                (Some(m), Some(tl)) => {
                    let tau = m.taus[j];
                    let rel = RelativeTransform::new(tau, tl, &m.motion);
                    grads.position[j] += rel.rot.transpose() * g_pl;
                    let (jw, jv) = motion_jacobians(&cloud.gaussians[j].center, tau, tl, &m.motion);
                    grads.omega += jw.transpose() * g_pl;
                    grads.vel += jv.transpose() * g_pl;
                }
                _ => grads.position[j] += g_pl,
            }
        }
        Ok(grads)
    }

    /// Global-shutter render of a whole view: intensity, disparity and opacity.
    pub fn render_view_gs(&self, cloud: &GaussianCloud, x: usize, y: usize) -> Result<ViewRender> {
        self.render_view(cloud, x, y, None, 32)
    }

    /// Whole view assembled from bands of `band_height` rows.
    pub fn render_view(
        &self,
        cloud: &GaussianCloud,
        x: usize,
        y: usize,
        motion: Option<&MotionContext<'_>>,
        band_height: usize,
    ) -> Result<ViewRender> {
        let bands = Band::split(self.height, band_height);
        let parts: Vec<RenderedBand> = bands
            .par_iter()
            .map(|b| self.render_band(cloud, x, y, *b, motion))
            .collect::<Result<_>>()?;
        let mut intensity = Vec::with_capacity(self.width * self.height);
        let mut disparity = Vec::with_capacity(self.width * self.height);
        let mut alpha = Vec::with_capacity(self.width * self.height);
        for p in parts {
            intensity.extend(p.intensity);
            disparity.extend(p.disparity);
            alpha.extend(p.alpha_acc);
        }
        Ok(ViewRender {
            intensity: Image::from_vec(self.width, self.height, intensity)?,
            disparity: Image::from_vec(self.width, self.height, disparity)?,
            alpha: Image::from_vec(self.width, self.height, alpha)?,
        })
    }

    /// Global-shutter composite of per-gaussian colors with the learned opacities.
    pub fn render_rgb_gs(
        &self,
        cloud: &GaussianCloud,
        colors: &[[f64; 3]],
        background: [f64; 3],
        x: usize,
        y: usize,
    ) -> Result<[Image; 3]> {
        if colors.len() != cloud.len() {
            return Err(Error::Argument("one color per gaussian required".into()));
        }
        let band = Band::new(0, self.height);
        let (drawn, _) = self.collect(cloud, x, y, band, None)?;
        let n = self.width * self.height;
        let mut trans = vec![1.0; n];
        let mut rgb = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for g in &drawn {
            let Some((u_lo, u_hi, v_lo, v_hi)) = self.footprint(g, band) else {
                continue;
            };
            let inv_2s2 = 0.5 / (g.sigma * g.sigma);
            let c = colors[g.index];
            for v in v_lo..=v_hi {
                let dy = v as f64 - g.mu[1];
                for u in u_lo..=u_hi {
                    let dx = u as f64 - g.mu[0];
                    let a = self.kernel.alpha((dx * dx + dy * dy) * inv_2s2);
                    if a == 0.0 {
                        continue;
                    }
                    let k = v * self.width + u;
                    let wgt = a * trans[k];
                    for ch in 0..3 {
                        rgb[ch][k] += c[ch] * wgt;
                    }
                    trans[k] *= 1.0 - a;
                }
            }
        }
        let [r, g, b] = rgb;
        let finish = |mut ch: Vec<f64>, bg: f64| {
            for (c, t) in ch.iter_mut().zip(&trans) {
                *c += bg * t;
            }
            Image::from_vec(self.width, self.height, ch)
        };
        Ok([
            finish(r, background[0])?,
            finish(g, background[1])?,
            finish(b, background[2])?,
        ])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewRender {
    pub intensity: Image,
    pub disparity: Image,
    pub alpha: Image,
}

/// Per-gaussian observation time: the row clock at its central-view projection.
pub fn observation_times(cloud: &GaussianCloud, intr: &LFIntrinsics, timing: &RSTiming) -> Vec<f64> {
    cloud
        .gaussians
        .iter()
        .map(|g| {
            let (_, v, _) = project_unchecked(&g.center, intr);
            timing.row_time(v)
        })
        .collect()
}
