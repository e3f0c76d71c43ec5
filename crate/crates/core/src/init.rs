//! Motion-agnostic initialization from the central row of views.
//!
//! Views of the central row share their rows with the central view, so every
//! pixel they match was read at the same instant: the disparity estimated
//! there is free of rolling-shutter inconsistencies.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::disparity_to_point;
use crate::lightfield::{central_row_views, Image, ImageView, LFIntrinsics, SaiSource};
use crate::splat::{Gaussian2D, GaussianCloud, RenderSettings};

/// Per-pixel normalized disparity of the central view with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DisparityMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if values.len() != width * height || valid.len() != width * height {
            return Err(Error::Argument("disparity map buffers do not match its size".into()));
        }
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid_count() as f64 / self.valid.len().max(1) as f64
    }

    /// Median over valid pixels.
    pub fn median(&self) -> Option<f64> {
        let mut v: Vec<f64> = self
            .values
            .iter()
            .zip(&self.valid)
            .filter(|(_, ok)| **ok)
            .map(|(d, _)| *d)
            .collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(v[v.len() / 2])
    }

    /// Values with every invalid pixel replaced by its nearest valid pixel
    /// (Euclidean distance, ties to the smaller row then column). All zeros
    /// when nothing is valid.
    pub fn filled(&self) -> Vec<f64> {
        let (w, h) = (self.width as i64, self.height as i64);
        if self.valid_count() == 0 {
            return vec![0.0; self.values.len()];
        }
        let mut out = self.values.clone();
        for v in 0..h {
            for u in 0..w {
                let k = (v * w + u) as usize;
                if self.valid[k] {
                    continue;
                }
                // Best as (squared distance, row, column).
                let mut best: Option<(i64, i64, i64)> = None;
                let mut r = 1i64;
                loop {
                    for dv in -r..=r {
                        for du in -r..=r {
                            if dv.abs() != r && du.abs() != r {
                                continue;
                            }
                            let (nu, nv) = (u + du, v + dv);
                            if nu < 0 || nv < 0 || nu >= w || nv >= h {
                                continue;
                            }
                            if !self.valid[(nv * w + nu) as usize] {
                                continue;
                            }
                            let cand = (du * du + dv * dv, nv, nu);
                            if best.map_or(true, |b| cand < b) {
                                best = Some(cand);
                            }
                        }
                    }
                    if let Some((d2, _, _)) = best {
                        if r * r >= d2 {
                            break;
                        }
                    }
                    r += 1;
                }
                let (_, nv, nu) = best.expect("a valid pixel exists");
                out[k] = self.values[(nv * w + nu) as usize];
            }
        }
        out
    }

    pub fn to_image(&self) -> Image {
        Image::from_vec(self.width, self.height, self.values.clone()).expect("sizes checked")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneSweepOptions {
    pub d_min: f64,
    pub d_max: f64,
    pub steps: usize,
    /// Side of the square aggregation window, odd.
    pub window: usize,
    /// Mean absolute difference above which a match is rejected.
    pub cost_max: f64,
    /// A cost curve whose spread is below this is considered flat.
    pub flat_eps: f64,
    /// Central-row views used, including the center.
    pub views: Option<usize>,
}

impl Default for PlaneSweepOptions {
    fn default() -> Self {
        Self {
            d_min: -2.0,
            d_max: 2.0,
            steps: 64,
            window: 7,
            cost_max: 0.08,
            flat_eps: 2e-3,
            views: None,
        }
    }
}

impl PlaneSweepOptions {
    pub fn step(&self) -> f64 {
        (self.d_max - self.d_min) / (self.steps - 1) as f64
    }

    pub fn hypothesis(&self, k: usize) -> f64 {
        self.d_min + self.step() * k as f64
    }
}

/// Plane-sweep disparity of the central view from central-row views only.
pub fn estimate_disparity_central_row<S: SaiSource + ?Sized>(
    lf: &S,
    opts: &PlaneSweepOptions,
) -> Result<DisparityMap> {
    if !(opts.d_min < opts.d_max) {
        return Err(Error::Argument(format!(
            "degenerate disparity range [{}, {}]",
            opts.d_min, opts.d_max
        )));
    }
    if opts.steps < 2 {
        return Err(Error::Argument("plane sweep needs at least two hypotheses".into()));
    }
    if opts.window % 2 == 0 {
        return Err(Error::Argument(format!("window {} must be odd", opts.window)));
    }
    let a = lf.angular();
    let (w, h) = (lf.width(), lf.height());
    let c = lf.center();
    let count = opts.views.unwrap_or(a);
    let views = central_row_views(a, count)?;
    let central = lf.sai(c, c)?;
    let others: Vec<(f64, ImageView<'_>)> = views
        .iter()
        .filter(|(x, _)| *x != c)
        .map(|&(x, y)| Ok((c as f64 - x as f64, lf.sai(x, y)?)))
        .collect::<Result<_>>()?;

    // Window-aggregated cost per hypothesis; infinite where no view overlaps.
    let volume: Vec<Vec<f64>> = (0..opts.steps)
        .into_par_iter()
        .map(|k| {
            let d = opts.hypothesis(k);
            let mut sum = vec![0.0; w * h];
            let mut cnt = vec![0.0; w * h];
            for (dx, view) in &others {
                let shift = d * dx;
                for v in 0..h {
                    let crow = central.row(v);
                    for u in 0..w {
                        if let Some(val) = view.sample_row(u as f64 + shift, v) {
                            sum[v * w + u] += (val - crow[u]).abs();
                            cnt[v * w + u] += 1.0;
                        }
                    }
                }
            }
            let sum = box_sum(&sum, w, h, opts.window / 2);
            let cnt = box_sum(&cnt, w, h, opts.window / 2);
            sum.iter()
                .zip(&cnt)
                .map(|(s, n)| if *n > 0.0 { s / n } else { f64::INFINITY })
                .collect()
        })
        .collect();

    let mut values = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    for p in 0..w * h {
        let mut best = 0;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (k, layer) in volume.iter().enumerate() {
            let cst = layer[p];
            if cst < lo {
                lo = cst;
                best = k;
            }
            if cst.is_finite() {
                hi = hi.max(cst);
            }
        }
        if !lo.is_finite() {
            continue;
        }
        let mut d = opts.hypothesis(best);
        if best > 0 && best + 1 < opts.steps {
            let (cm, c0, cp) = (volume[best - 1][p], lo, volume[best + 1][p]);
            let denom = cm - 2.0 * c0 + cp;
            if cm.is_finite() && cp.is_finite() && denom > 0.0 {
                d += (0.5 * (cm - cp) / denom).clamp(-0.5, 0.5) * opts.step();
            }
        }
        values[p] = d;
        valid[p] = lo <= opts.cost_max && hi - lo >= opts.flat_eps;
    }
    DisparityMap::new(w, h, values, valid)
}

/// Sum over a `(2r+1)²` window clipped to the image.
fn box_sum(src: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let mut tmp = vec![0.0; w * h];
    for v in 0..h {
        let row = &src[v * w..(v + 1) * w];
        let mut prefix = vec![0.0; w + 1];
        for u in 0..w {
            prefix[u + 1] = prefix[u] + row[u];
        }
        for u in 0..w {
            let lo = u.saturating_sub(r);
            let hi = (u + r + 1).min(w);
            tmp[v * w + u] = prefix[hi] - prefix[lo];
        }
    }
    let mut out = vec![0.0; w * h];
    for u in 0..w {
        let mut prefix = vec![0.0; h + 1];
        for v in 0..h {
            prefix[v + 1] = prefix[v] + tmp[v * w + u];
        }
        for v in 0..h {
            let lo = v.saturating_sub(r);
            let hi = (v + r + 1).min(h);
            out[v * w + u] = prefix[hi] - prefix[lo];
        }
    }
    out
}

/// Floor of the density relative to the mean smoothed gradient.
pub const DENSITY_FLOOR: f64 = 0.25;
const DENSITY_SMOOTHING: f64 = 1.5;

/// Sampling density favouring high-frequency regions: smoothed gradient
/// magnitude plus a uniform floor, normalized to sum to 1.
pub fn frequency_density(img: ImageView<'_>) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let at = |u: i64, v: i64| img.get(u.clamp(0, w as i64 - 1) as usize, v.clamp(0, h as i64 - 1) as usize);
    let mut g = vec![0.0; w * h];
    for v in 0..h as i64 {
        for u in 0..w as i64 {
            let gx = 0.5 * (at(u + 1, v) - at(u - 1, v));
            let gy = 0.5 * (at(u, v + 1) - at(u, v - 1));
            g[v as usize * w + u as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    let g = gaussian_blur(&g, w, h, DENSITY_SMOOTHING);
    let mean = g.iter().sum::<f64>() / g.len() as f64;
    let floor = if mean > 0.0 { DENSITY_FLOOR * mean } else { 1.0 };
    let total: f64 = g.iter().map(|x| x + floor).sum();
    g.iter().map(|x| (x + floor) / total).collect()
}

fn gaussian_blur(src: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let pass = |src: &[f64], horizontal: bool| {
        let mut out = vec![0.0; w * h];
        for v in 0..h as i64 {
            for u in 0..w as i64 {
                let mut acc = 0.0;
                let mut norm = 0.0;
                for (j, k) in kernel.iter().enumerate() {
                    let o = j as i64 - r;
                    let (uu, vv) = if horizontal { (u + o, v) } else { (u, v + o) };
                    if uu < 0 || vv < 0 || uu >= w as i64 || vv >= h as i64 {
                        continue;
                    }
                    acc += k * src[vv as usize * w + uu as usize];
                    norm += k;
                }
                out[v as usize * w + u as usize] = acc / norm;
            }
        }
        out
    };
    let tmp = pass(src, true);
    pass(&tmp, false)
}

/// Seed radius relative to the local site spacing.
pub const SIGMA_PER_SPACING: f64 = 1.0;

/// Default gaussian count: 20 000 at 512², proportional to the pixel count.
pub fn default_gaussian_count(width: usize, height: usize) -> usize {
    ((20_000.0 * (width * height) as f64 / (512.0 * 512.0)).round() as usize).max(1)
}

/// Seed `n` gaussians on pixel sites drawn without replacement from the
/// frequency density of the central view.
pub fn seed_gaussians(
    central: ImageView<'_>,
    disp: &DisparityMap,
    n: usize,
    intr: &LFIntrinsics,
    settings: &RenderSettings,
    seed: u64,
) -> Result<GaussianCloud> {
    let (w, h) = (central.width(), central.height());
    if n < 1 {
        return Err(Error::Argument("at least one gaussian must be seeded".into()));
    }
    if n > w * h {
        return Err(Error::Argument(format!("cannot seed {n} gaussians on {} pixels", w * h)));
    }
    if disp.width != w || disp.height != h {
        return Err(Error::Argument("disparity map and view differ in size".into()));
    }
    let filled = disp.filled();
    let mut weights = frequency_density(central);
    if disp.valid_count() >= n {
        for (wt, ok) in weights.iter_mut().zip(&disp.valid) {
            if !ok {
                *wt = 0.0;
            }
        }
    }
    // The sampler keys are `u^(1/w)`; unit-scale weights keep them from underflowing.
    let wmax = weights.iter().cloned().fold(0.0, f64::max);
    if wmax > 0.0 {
        weights.iter_mut().for_each(|x| *x /= wmax);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sites = rand::seq::index::sample_weighted(&mut rng, w * h, |i| weights[i], n)
        .map_err(|e| Error::Numerical(format!("site sampling failed: {e}")))?
        .into_vec();
    sites.sort_unstable();
    let coords: Vec<(f64, f64)> = sites.iter().map(|&k| ((k % w) as f64, (k / w) as f64)).collect();
    let sigmas = neighbour_sigmas(&coords, w, h);
    let gaussians = sites
        .iter()
        .zip(&coords)
        .zip(&sigmas)
        .map(|((&k, &(u, v)), &s)| {
            Ok(Gaussian2D {
                center: disparity_to_point(u, v, filled[k], intr)?,
                sigma: s.clamp(settings.sigma_min, settings.sigma_max),
                intensity: central.get(k % w, k / w),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    GaussianCloud::new(gaussians, 0.0)
}

/// `SIGMA_PER_SPACING` times the mean distance to the four nearest other sites, through a
/// uniform bucket grid.
fn neighbour_sigmas(coords: &[(f64, f64)], w: usize, h: usize) -> Vec<f64> {
    const K: usize = 4;
    let n = coords.len();
    if n == 1 {
        return vec![0.25 * ((w * h) as f64).sqrt()];
    }
    let cell = ((w * h) as f64 / n as f64).sqrt().max(1.0);
    let gw = (w as f64 / cell).ceil() as usize;
    let gh = (h as f64 / cell).ceil() as usize;
    let mut grid: Vec<Vec<usize>> = vec![Vec::new(); gw * gh];
    let bucket = |(u, v): (f64, f64)| {
        (
            ((u / cell) as usize).min(gw - 1),
            ((v / cell) as usize).min(gh - 1),
        )
    };
    for (i, &p) in coords.iter().enumerate() {
        let (bx, by) = bucket(p);
        grid[by * gw + bx].push(i);
    }
    let k = K.min(n - 1);
    coords
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let (bx, by) = bucket(p);
            let mut best: Vec<f64> = Vec::with_capacity(k + 1);
            let mut r = 0usize;
            loop {
                let x0 = bx.saturating_sub(r);
                let y0 = by.saturating_sub(r);
                for gy in y0..=(by + r).min(gh - 1) {
                    for gx in x0..=(bx + r).min(gw - 1) {
                        if gx.abs_diff(bx) != r && gy.abs_diff(by) != r {
                            continue;
                        }
                        for &j in &grid[gy * gw + gx] {
                            if j == i {
                                continue;
                            }
                            let d = ((coords[j].0 - p.0).powi(2) + (coords[j].1 - p.1).powi(2)).sqrt();
                            best.push(d);
                        }
                    }
                }
                best.sort_by(f64::total_cmp);
                best.truncate(k);
                // Cells beyond ring r are at least r * cell away.
                let covered = r + 1 >= gw.max(gh);
                if (best.len() == k && best[k - 1] <= r as f64 * cell) || covered {
                    break;
                }
                r += 1;
            }
            SIGMA_PER_SPACING * best.iter().sum::<f64>() / best.len() as f64
        })
        .collect()
}
