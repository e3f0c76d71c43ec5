//! The two optimization stages and the full reconstruction run.
//!
//! Stage 1 refines the seeded cloud photometrically against central-row
//! views, one `(view, band)` pair per iteration. Stage 2 freezes the cloud
//! and fits the constant velocity by rendering the corner views band by band
//! under the motion hypothesis.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{deform_to_static, disparity_to_depth, MotionParams};
use crate::init::{default_gaussian_count, estimate_disparity_central_row, seed_gaussians, DisparityMap, PlaneSweepOptions};
use crate::lightfield::{central_row_views, corner_views, Image, LFIntrinsics, RSTiming, SaiSource};
use crate::splat::{observation_times, Band, GaussianCloud, MotionContext, RenderSettings, SplatRenderer, ViewRender};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossNorm {
    L1,
    #[default]
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub u: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            u: vec![0.0; n],
            t: 0,
        }
    }
}

/// One Adam update with bias correction and a learning rate per entry.
pub fn adam_step(params: &mut [f64], grads: &[f64], lr: &[f64], state: &mut AdamState, hyper: &AdamHyper) -> Result<()> {
    let n = params.len();
    if grads.len() != n || lr.len() != n || state.m.len() != n || state.u.len() != n {
        return Err(Error::Argument(format!(
            "adam shapes disagree: {} params, {} grads, {} rates, state {}",
            n,
            grads.len(),
            lr.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for i in 0..n {
        let g = grads[i];
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
        state.u[i] = hyper.beta2 * state.u[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let u_hat = state.u[i] / c2;
        params[i] -= lr[i] * m_hat / (u_hat.sqrt() + hyper.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub iters_stage1: usize,
    pub iters_stage2: usize,
    pub lr_position: f64,
    /// Step size of the depth coordinate; `lr_position` when absent.
    pub lr_depth: Option<f64>,
    pub lr_sigma: f64,
    pub lr_intensity: f64,
    pub lr_omega: f64,
    pub lr_vel: f64,
    /// Rows per band.
    pub band_height: usize,
    /// Rows per band in stage 2; `band_height` when absent.
    pub stage2_band_height: Option<usize>,
    /// `(view, band)` pairs whose gradients are summed per stage-2 step.
    pub stage2_batch: usize,
    /// Linearly decay the stage-2 step size to zero.
    pub stage2_anneal: bool,
    pub loss_norm: LossNorm,
    pub adam: AdamHyper,
    pub seed: u64,
    /// Central-row views used by stage 1.
    pub stage1_views: usize,
    /// Views used by stage 2; the four corners when absent.
    pub stage2_views: Option<Vec<(usize, usize)>>,
    /// Gaussian count; proportional to the pixel count when absent.
    pub gaussians: Option<usize>,
    pub sweep: PlaneSweepOptions,
    pub render: RenderSettings,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            iters_stage1: 100,
            iters_stage2: 100,
            lr_position: 1e-3,
            lr_depth: None,
            lr_sigma: 1e-2,
            lr_intensity: 1e-2,
            lr_omega: 1e-3,
            lr_vel: 1e-3,
            band_height: 16,
            stage2_band_height: None,
            stage2_batch: 1,
            stage2_anneal: false,
            loss_norm: LossNorm::L2,
            adam: AdamHyper::default(),
            seed: 0,
            stage1_views: 5,
            stage2_views: None,
            gaussians: None,
            sweep: PlaneSweepOptions::default(),
            render: RenderSettings::default(),
        }
    }
}

impl OptimConfig {
    /// Settings used for motion recovery on 128² desk scenes: L1 photometric
    /// loss, a dense cloud and thin annealed stage-2 bands.
    pub fn desk_motion() -> Self {
        Self {
            iters_stage1: 8000,
            iters_stage2: 6000,
            lr_position: 3e-4,
            lr_omega: 3e-3,
            lr_vel: 3e-3,
            band_height: 16,
            stage2_band_height: Some(2),
            stage2_anneal: true,
            loss_norm: LossNorm::L1,
            gaussians: Some(5000),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("lr_position", self.lr_position),
            ("lr_depth", self.lr_depth.unwrap_or(self.lr_position)),
            ("lr_sigma", self.lr_sigma),
            ("lr_intensity", self.lr_intensity),
            ("lr_omega", self.lr_omega),
            ("lr_vel", self.lr_vel),
        ];
        for (name, v) in rates {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Argument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.band_height == 0 || self.stage2_band_height == Some(0) {
            return Err(Error::Argument("band height must be positive".into()));
        }
        if self.stage2_batch == 0 {
            return Err(Error::Argument("stage-2 batch must be positive".into()));
        }
        if self.gaussians == Some(0) {
            return Err(Error::Argument("gaussian count must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Stage1,
    Stage2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iter: usize,
    pub stage: Stage,
    pub view_x: usize,
    pub view_y: usize,
    pub band: usize,
    pub loss: f64,
}

/// Which parts of the pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Seeded cloud only.
    None,
    /// Seeding then motion estimation, no photometric refinement.
    NoInit,
    /// Seeding and refinement, no motion.
    NoMotion,
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::None, Ablation::NoInit, Ablation::NoMotion, Ablation::Full];

    pub fn refines(&self) -> bool {
        matches!(self, Ablation::NoMotion | Ablation::Full)
    }

    pub fn estimates_motion(&self) -> bool {
        matches!(self, Ablation::NoInit | Ablation::Full)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoInit => "no-init",
            Ablation::NoMotion => "no-motion",
            Ablation::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.replace('_', "-").as_str() {
            "none" => Ablation::None,
            "no-init" => Ablation::NoInit,
            "no-motion" => Ablation::NoMotion,
            "full" => Ablation::Full,
            other => {
                return Err(Error::Argument(format!(
                    "unknown ablation {other:?}; expected full, no-init, no-motion or none"
                )))
            }
        })
    }
}

/// Record of a run: resolved configuration, inputs and the loss trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: OptimConfig,
    pub ablation: Ablation,
    pub dataset_hash: Option<String>,
    /// Dataset directory as given on the command line.
    #[serde(default)]
    pub dataset: Option<String>,
    pub gaussians: usize,
    pub losses: Vec<LossRecord>,
    pub motion: MotionParams,
    /// Absent in deterministic mode.
    pub wall_clock_s: Option<f64>,
}

/// `(loss, ∂loss/∂C)` between a rendered and a measured band.
pub fn band_loss(rendered: &[f64], measured: &[f64], norm: LossNorm) -> (f64, Vec<f64>) {
    let n = rendered.len() as f64;
    match norm {
        LossNorm::L2 => {
            let loss = rendered.iter().zip(measured).map(|(r, m)| (r - m) * (r - m)).sum::<f64>() / n;
            let res = rendered.iter().zip(measured).map(|(r, m)| 2.0 * (r - m) / n).collect();
            (loss, res)
        }
        LossNorm::L1 => {
            let loss = rendered.iter().zip(measured).map(|(r, m)| (r - m).abs()).sum::<f64>() / n;
            let res = rendered
                .iter()
                .zip(measured)
                .map(|(r, m)| {
                    let e = r - m;
                    if e > 0.0 {
                        1.0 / n
                    } else if e < 0.0 {
                        -1.0 / n
                    } else {
                        0.0
                    }
                })
                .collect();
            (loss, res)
        }
    }
}

/// Seeded shuffled round-robin over `(view, band)` pairs.
struct Schedule {
    pairs: Vec<((usize, usize), usize)>,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Schedule {
    fn new(views: &[(usize, usize)], bands: usize, seed: u64) -> Self {
        let pairs: Vec<_> = views
            .iter()
            .flat_map(|&v| (0..bands).map(move |b| (v, b)))
            .collect();
        let order = (0..pairs.len()).collect();
        let mut s = Self {
            pairs,
            order,
            pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    fn next(&mut self) -> ((usize, usize), usize) {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let p = self.pairs[self.order[self.pos]];
        self.pos += 1;
        p
    }
}

fn band_rows<'a, S: SaiSource + ?Sized>(lf: &'a S, x: usize, y: usize, band: Band) -> Result<Vec<f64>> {
    let view = lf.sai(x, y)?;
    let w = view.width();
    Ok(view.data()[band.start * w..band.end * w].to_vec())
}

fn check_geometry<S: SaiSource + ?Sized>(lf: &S, r: &SplatRenderer) -> Result<()> {
    if lf.width() != r.width || lf.height() != r.height || lf.center() != r.center {
        return Err(Error::Argument(format!(
            "renderer is {}x{} (center {}) but the light field is {}x{} (center {})",
            r.width,
            r.height,
            r.center,
            lf.width(),
            lf.height(),
            lf.center()
        )));
    }
    Ok(())
}

/// Photometric refinement of all `5N` gaussian parameters against
/// central-row views, without motion.
pub fn stage1_finetune<S: SaiSource + ?Sized>(
    cloud: &GaussianCloud,
    lf: &S,
    renderer: &SplatRenderer,
    config: &OptimConfig,
    trace: &mut Vec<LossRecord>,
) -> Result<GaussianCloud> {
    check_geometry(lf, renderer)?;
    let views = central_row_views(lf.angular(), config.stage1_views.min(lf.angular()))?;
    let bands = Band::split(lf.height(), config.band_height);
    let mut schedule = Schedule::new(&views, bands.len(), config.seed ^ 0x5741_4745_0001);
    let mut cloud = cloud.clone();
    let n = cloud.len();
    let mut params = vec![0.0; 5 * n];
    let mut lr = vec![0.0; 5 * n];
    for j in 0..n {
        lr[5 * j..5 * j + 2].fill(config.lr_position);
        lr[5 * j + 2] = config.lr_depth.unwrap_or(config.lr_position);
        lr[5 * j + 3] = config.lr_sigma;
        lr[5 * j + 4] = config.lr_intensity;
    }
    let mut state = AdamState::new(5 * n);
    let mut flat = vec![0.0; 5 * n];
    let min_z = 1e-3 * renderer.intr.focal_plane;
    let s = &config.render;

    for iter in 0..config.iters_stage1 {
        let ((x, y), b) = schedule.next();
        let band = bands[b];
        let measured = band_rows(lf, x, y, band)?;
        let (out, cache) = renderer.render_band_cached(&cloud, x, y, band, None)?;
        let (loss, residual) = band_loss(&out.intensity, &measured, config.loss_norm);
        if !loss.is_finite() {
            let culprit = cloud.first_non_finite();
            return Err(Error::Numerical(format!(
                "stage 1 loss is {loss} at iteration {iter}; first non-finite gaussian: {culprit:?}"
            )));
        }
        trace.push(LossRecord {
            iter,
            stage: Stage::Stage1,
            view_x: x,
            view_y: y,
            band: b,
            loss,
        });
        let g = renderer.backward_band(&cloud, &cache, None, &residual)?;
        for (j, gs) in cloud.gaussians.iter().enumerate() {
            params[5 * j] = gs.center.x;
            params[5 * j + 1] = gs.center.y;
            params[5 * j + 2] = gs.center.z;
            params[5 * j + 3] = gs.sigma;
            params[5 * j + 4] = gs.intensity;
            flat[5 * j] = g.position[j].x;
            flat[5 * j + 1] = g.position[j].y;
            flat[5 * j + 2] = g.position[j].z;
            flat[5 * j + 3] = g.sigma[j];
            flat[5 * j + 4] = g.intensity[j];
        }
        adam_step(&mut params, &flat, &lr, &mut state, &config.adam)?;
        for (j, gs) in cloud.gaussians.iter_mut().enumerate() {
            gs.center.x = params[5 * j];
            gs.center.y = params[5 * j + 1];
            gs.center.z = params[5 * j + 2].max(min_z);
            gs.sigma = params[5 * j + 3].clamp(s.sigma_min, s.sigma_max);
            gs.intensity = params[5 * j + 4].clamp(0.0, 1.0);
        }
    }
    Ok(cloud)
}

/// Iterations in a row above ten times the initial loss that abort stage 2.
pub const DIVERGENCE_PATIENCE: usize = 20;

/// Constant-velocity estimation from the corner views with the cloud frozen.
pub fn stage2_motion<S: SaiSource + ?Sized>(
    cloud: &GaussianCloud,
    lf: &S,
    renderer: &SplatRenderer,
    timing: &RSTiming,
    config: &OptimConfig,
    trace: &mut Vec<LossRecord>,
) -> Result<MotionParams> {
    check_geometry(lf, renderer)?;
    let views = match &config.stage2_views {
        Some(v) => v.clone(),
        None => corner_views(lf.angular())?,
    };
    let bands = Band::split(lf.height(), config.stage2_band_height.unwrap_or(config.band_height));
    let mut schedule = Schedule::new(&views, bands.len(), config.seed ^ 0x5741_4745_0002);
    let taus = observation_times(cloud, &renderer.intr, timing);
    let mut params = [0.0; 6];
    let base_lr = [
        config.lr_omega,
        config.lr_omega,
        config.lr_omega,
        config.lr_vel,
        config.lr_vel,
        config.lr_vel,
    ];
    let mut state = AdamState::new(6);
    let mut first_loss: HashMap<((usize, usize), usize), f64> = HashMap::new();
    let mut bad_run = 0;
    let offset = trace.len();
    let mut iter = 0;
    let total = config.iters_stage2;

    while iter < total {
        let ctx = MotionContext {
            motion: MotionParams::from_array(params),
            taus: &taus,
            timing: *timing,
        };
        let mut grads = [0.0; 6];
        let batch = config.stage2_batch.min(total - iter);
        let step = iter;
        for _ in 0..batch {
            let ((x, y), b) = schedule.next();
            let band = bands[b];
            let measured = band_rows(lf, x, y, band)?;
            let (out, cache) = renderer.render_band_cached(cloud, x, y, band, Some(&ctx))?;
            let (loss, residual) = band_loss(&out.intensity, &measured, config.loss_norm);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "stage 2 loss is {loss} at iteration {iter} with motion {params:?}"
                )));
            }
            trace.push(LossRecord {
                iter: offset + iter,
                stage: Stage::Stage2,
                view_x: x,
                view_y: y,
                band: b,
                loss,
            });
            let reference = *first_loss.entry(((x, y), b)).or_insert(loss);
            if loss > 10.0 * reference && reference > 0.0 {
                bad_run += 1;
                if bad_run >= DIVERGENCE_PATIENCE {
                    return Err(Error::Numerical(format!(
                        "stage 2 diverged: loss above ten times its initial value for {DIVERGENCE_PATIENCE} iterations (last {loss:.3e} at iteration {iter})"
                    )));
                }
            } else {
                bad_run = 0;
            }
            let g = renderer.backward_band(cloud, &cache, Some(&ctx), &residual)?;
            for (acc, gi) in grads.iter_mut().zip([g.omega.x, g.omega.y, g.omega.z, g.vel.x, g.vel.y, g.vel.z]) {
                *acc += gi;
            }
            iter += 1;
        }
        let scale = if config.stage2_anneal {
            1.0 - step as f64 / total as f64
        } else {
            1.0
        };
        let lr = base_lr.map(|r| r * scale);
        adam_step(&mut params, &grads, &lr, &mut state, &config.adam)?;
    }
    let m = MotionParams::from_array(params);
    if !m.is_finite() {
        return Err(Error::Numerical("stage 2 produced a non-finite motion".into()));
    }
    Ok(m)
}

/// Moves every gaussian to its static position and renders the central view
/// on a canvas twice as large, principal point recentered.
pub fn compensate(
    cloud: &GaussianCloud,
    m: &MotionParams,
    renderer: &SplatRenderer,
    timing: &RSTiming,
) -> Result<(GaussianCloud, ViewRender)> {
    if !m.is_finite() {
        return Err(Error::Argument("motion must be finite".into()));
    }
    let taus = observation_times(cloud, &renderer.intr, timing);
    let mut static_cloud = cloud.clone();
    for (g, tau) in static_cloud.gaussians.iter_mut().zip(&taus) {
        g.center = deform_to_static(&g.center, *tau, m);
    }
    let big = enlarged_renderer(renderer);
    let c = big.center;
    let render = big.render_view_gs(&static_cloud, c, c)?;
    Ok((static_cloud, render))
}

/// Renderer of the central view on the doubled canvas.
pub fn enlarged_renderer(r: &SplatRenderer) -> SplatRenderer {
    let intr = r.intr.enlarged(r.width, r.height, 2);
    SplatRenderer::with_settings(intr, 2 * r.width, 2 * r.height, 2 * r.center + 1, r.settings)
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub initial_disparity: DisparityMap,
    pub seeded: GaussianCloud,
    /// Cloud after stage 1 (the seeded cloud when stage 1 is skipped).
    pub cloud: GaussianCloud,
    pub motion: MotionParams,
    pub static_cloud: GaussianCloud,
    /// Compensated central view on the doubled canvas.
    pub compensated: ViewRender,
    pub compensated_intr: LFIntrinsics,
    pub manifest: RunManifest,
}

impl RunArtifacts {
    /// Depth of the compensated view; 0 where nothing was drawn.
    pub fn compensated_depth(&self) -> Image {
        let c = &self.compensated;
        let data = c
            .disparity
            .data()
            .iter()
            .zip(c.alpha.data())
            .map(|(&d, &a)| match disparity_to_depth(d, &self.compensated_intr) {
                Some(z) if a > 0.0 => z,
                _ => 0.0,
            })
            .collect();
        Image::from_vec(c.disparity.width(), c.disparity.height(), data).expect("render dimensions")
    }
}

/// Seed, then refine and estimate motion as the ablation allows.
pub fn run_full<S: SaiSource + ?Sized>(
    lf: &S,
    intr: &LFIntrinsics,
    timing: &RSTiming,
    config: &OptimConfig,
    ablation: Ablation,
) -> Result<RunArtifacts> {
    config.validate()?;
    intr.validate(lf.width())?;
    let renderer = SplatRenderer::with_settings(*intr, lf.width(), lf.height(), lf.angular(), config.render);
    let disparity = estimate_disparity_central_row(lf, &config.sweep)?;
    let c = lf.center();
    let n = config
        .gaussians
        .unwrap_or_else(|| default_gaussian_count(lf.width(), lf.height()));
    let seeded = seed_gaussians(lf.sai(c, c)?, &disparity, n, intr, &config.render, config.seed)?;
    let mut losses = Vec::new();
    let cloud = if ablation.refines() {
        stage1_finetune(&seeded, lf, &renderer, config, &mut losses)?
    } else {
        seeded.clone()
    };
    let motion = if ablation.estimates_motion() {
        stage2_motion(&cloud, lf, &renderer, timing, config, &mut losses)?
    } else {
        MotionParams::zero()
    };
    let (static_cloud, compensated) = compensate(&cloud, &motion, &renderer, timing)?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        ablation,
        dataset_hash: None,
        dataset: None,
        gaussians: n,
        losses,
        motion,
        wall_clock_s: None,
    };
    Ok(RunArtifacts {
        initial_disparity: disparity,
        seeded,
        cloud,
        motion,
        static_cloud,
        compensated,
        compensated_intr: enlarged_renderer(&renderer).intr,
        manifest,
    })
}
