//! Finite-difference verification of the analytic band gradients.
//!
//! The oracle only calls the forward renderer: the loss is a fixed linear
//! functional `L = Σ r_p C_p`, so `∂L/∂C = r` and every parameter derivative
//! is estimated by central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::geometry::{disparity_to_point, MotionParams};
use crate::lightfield::{LFIntrinsics, RSTiming};
use crate::splat::{observation_times, Band, Gaussian2D, GaussianCloud, MotionContext, SplatRenderer};

/// Step in normalized parameter units.
pub const FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub configs: usize,
    pub max_gaussians: usize,
    pub seed: u64,
    /// Scales the analytic gradients before comparison (negative control).
    pub corrupt: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            configs: 20,
            max_gaussians: 50,
            seed: 0,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ClassError {
    pub position: f64,
    pub sigma: f64,
    pub intensity: f64,
    pub omega: f64,
    pub vel: f64,
}

impl ClassError {
    pub fn max(&self) -> f64 {
        [self.position, self.sigma, self.intensity, self.omega, self.vel]
            .into_iter()
            .fold(0.0, f64::max)
    }

    fn merge(&mut self, o: &ClassError) {
        self.position = self.position.max(o.position);
        self.sigma = self.sigma.max(o.sigma);
        self.intensity = self.intensity.max(o.intensity);
        self.omega = self.omega.max(o.omega);
        self.vel = self.vel.max(o.vel);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub configs: usize,
    pub max_relative_error: ClassError,
    pub checked_entries: usize,
}

impl GradcheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_relative_error.max() < tol
    }
}

/// One random test problem.
pub struct GradProblem {
    pub renderer: SplatRenderer,
    pub cloud: GaussianCloud,
    pub view: (usize, usize),
    pub band: Band,
    pub motion: Option<(MotionParams, Vec<f64>, RSTiming)>,
    pub weights: Vec<f64>,
}

impl GradProblem {
    pub fn random(rng: &mut ChaCha8Rng, max_gaussians: usize, with_motion: bool) -> Self {
        let (w, h) = (24usize, 24usize);
        let angular = if rng.gen_bool(0.5) { 5 } else { 9 };
        let intr = LFIntrinsics::desk(w, h);
        let renderer = SplatRenderer::new(intr, w, h, angular);
        let n = rng.gen_range(1..=max_gaussians.max(1));
        // Keep disparities at least 1e-3 apart so that no perturbation can
        // reorder the compositing.
        let mut disparities: Vec<f64> = Vec::with_capacity(n);
        while disparities.len() < n {
            let d = rng.gen_range(-1.5..1.5);
            if disparities.iter().all(|&o: &f64| (o - d).abs() > 1e-3) {
                disparities.push(d);
            }
        }
        let gaussians = disparities
            .iter()
            .map(|&d| Gaussian2D {
                center: disparity_to_point(rng.gen_range(0.0..24.0), rng.gen_range(0.0..24.0), d, &intr)
                    .expect("valid disparity"),
                sigma: rng.gen_range(0.7..3.5),
                intensity: rng.gen_range(0.0..1.0),
            })
            .collect();
        let cloud = GaussianCloud {
            gaussians,
            background: rng.gen_range(0.0..0.3),
        };
        let view = (rng.gen_range(0..angular), rng.gen_range(0..angular));
        let start = rng.gen_range(0..h - 4);
        let band = Band::new(start, (start + rng.gen_range(1..=8)).min(h));
        let motion = with_motion.then(|| {
            let timing = RSTiming::for_height(h, intr.v0);
            let m = MotionParams::new(
                [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)],
                [rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)],
            );
            let taus = observation_times(&cloud, &intr, &timing);
            (m, taus, timing)
        });
        let weights = (0..band.rows() * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Self {
            renderer,
            cloud,
            view,
            band,
            motion,
            weights,
        }
    }

    fn ctx<'a>(&self, m: &MotionParams, taus: &'a [f64], timing: RSTiming) -> MotionContext<'a> {
        MotionContext {
            motion: *m,
            taus,
            timing,
        }
    }

    pub fn loss(&self, cloud: &GaussianCloud, motion: Option<&MotionParams>) -> Result<f64> {
        let ctx = match (&self.motion, motion) {
            (Some((_, taus, timing)), Some(m)) => Some(self.ctx(m, taus, *timing)),
            _ => None,
        };
        let out = self
            .renderer
            .render_band(cloud, self.view.0, self.view.1, self.band, ctx.as_ref())?;
        Ok(out.intensity.iter().zip(&self.weights).map(|(c, r)| c * r).sum())
    }

    pub fn check(&self, corrupt: bool) -> Result<(ClassError, usize)> {
        let motion = self.motion.as_ref().map(|(m, _, _)| *m);
        let ctx = self
            .motion
            .as_ref()
            .map(|(m, taus, timing)| self.ctx(m, taus, *timing));
        let (_, cache) = self.renderer.render_band_cached(
            &self.cloud,
            self.view.0,
            self.view.1,
            self.band,
            ctx.as_ref(),
        )?;
        let mut grads = self
            .renderer
            .backward_band(&self.cloud, &cache, ctx.as_ref(), &self.weights)?;
        if corrupt {
            for p in grads.position.iter_mut() {
                *p *= 1.01;
            }
            for s in grads.sigma.iter_mut() {
                *s *= 1.01;
            }
            grads.intensity.iter_mut().for_each(|x| *x *= 1.01);
            grads.omega *= 1.01;
            grads.vel *= 1.01;
        }

        let intr = &self.renderer.intr;
        let fd = |edit: &dyn Fn(&mut GaussianCloud, &mut MotionParams, f64), h: f64| -> Result<f64> {
            let mut cp = self.cloud.clone();
            let mut mp = motion.unwrap_or_default();
            edit(&mut cp, &mut mp, h);
            let lp = self.loss(&cp, motion.map(|_| mp).as_ref())?;
            let mut cm = self.cloud.clone();
            let mut mm = motion.unwrap_or_default();
            edit(&mut cm, &mut mm, -h);
            let lm = self.loss(&cm, motion.map(|_| mm).as_ref())?;
            Ok((lp - lm) / (2.0 * h))
        };

        let mut pairs_pos = Vec::new();
        let mut pairs_sigma = Vec::new();
        let mut pairs_int = Vec::new();
        for (j, g) in self.cloud.gaussians.iter().enumerate() {
            // One pixel for X and Y, one disparity unit for Z.
            let z = g.center.z;
            let scales = [z / intr.f, z / intr.f, z * z * intr.w / intr.beta()];
            for (k, scale) in scales.iter().enumerate() {
                let num = fd(&|c, _, h| c.gaussians[j].center[k] += h, FD_STEP * scale)?;
                pairs_pos.push((grads.position[j][k], num));
            }
            let num = fd(&|c, _, h| c.gaussians[j].sigma += h, FD_STEP)?;
            pairs_sigma.push((grads.sigma[j], num));
            let num = fd(&|c, _, h| c.gaussians[j].intensity += h, FD_STEP)?;
            pairs_int.push((grads.intensity[j], num));
        }
        let mut pairs_omega = Vec::new();
        let mut pairs_vel = Vec::new();
        if motion.is_some() {
            for k in 0..3 {
                let num = fd(&|_, m, h| m.omega[k] += h, FD_STEP * 1e-2)?;
                pairs_omega.push((grads.omega[k], num));
                let num = fd(&|_, m, h| m.vel[k] += h, FD_STEP * 1e-2)?;
                pairs_vel.push((grads.vel[k], num));
            }
        }
        let count = pairs_pos.len() + pairs_sigma.len() + pairs_int.len() + pairs_omega.len() + pairs_vel.len();
        Ok((
            ClassError {
                position: class_error(&pairs_pos),
                sigma: class_error(&pairs_sigma),
                intensity: class_error(&pairs_int),
                omega: class_error(&pairs_omega),
                vel: class_error(&pairs_vel),
            },
            count,
        ))
    }
}

/// Largest entry-wise relative error in a parameter class. Entries far below
/// the class magnitude are measured against `1e-3 ×` the largest gradient.
pub fn class_error(pairs: &[(f64, f64)]) -> f64 {
    let scale = pairs
        .iter()
        .map(|(a, n)| a.abs().max(n.abs()))
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let floor = 1e-3 * scale;
    pairs
        .iter()
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut total = ClassError::default();
    let mut entries = 0;
    for i in 0..opts.configs {
        let problem = GradProblem::random(&mut rng, opts.max_gaussians, i % 4 != 3);
        let (err, n) = problem.check(opts.corrupt)?;
        total.merge(&err);
        entries += n;
    }
    Ok(GradcheckReport {
        configs: opts.configs,
        max_relative_error: total,
        checked_entries: entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_error_basics() {
        assert_eq!(class_error(&[]), 0.0);
        assert_eq!(class_error(&[(1.0, 1.0), (2.0, 2.0)]), 0.0);
        assert!((class_error(&[(1.01, 1.0)]) - 0.01 / 1.01).abs() < 1e-12);
    }

    #[test]
    fn small_gradcheck_passes_and_negative_control_fails() {
        let opts = GradcheckOptions {
            configs: 4,
            max_gaussians: 12,
            seed: 11,
            corrupt: false,
        };
        let report = run_gradcheck(&opts).unwrap();
        assert!(report.passes(1e-4), "{:?}", report.max_relative_error);
        let bad = run_gradcheck(&GradcheckOptions { corrupt: true, ..opts }).unwrap();
        assert!(!bad.passes(1e-4));
    }
}
