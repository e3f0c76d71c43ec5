//! Masked depth and intensity metrics, run evaluation, motion-recovery
//! scoring and the ablation report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::MotionParams;
use crate::io::{self, names};
use crate::lightfield::{Image, LFIntrinsics, Mask, RSTiming};
use crate::synth::{max_displacement, MotionCategory};

/// Relative depth error below which a pixel counts as accurate.
pub const DELTA_THRESHOLD: f64 = 0.25;

/// Prediction pixels with less accumulated opacity are not compared.
pub const MIN_ALPHA: f64 = 0.5;

fn check_shapes(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<()> {
    if pred.len() != gt.len() || pred.len() != mask.len() {
        return Err(Error::Argument(format!(
            "metric inputs differ in length: pred {}, gt {}, mask {}",
            pred.len(),
            gt.len(),
            mask.len()
        )));
    }
    Ok(())
}

fn masked_pairs<'a>(pred: &'a [f64], gt: &'a [f64], mask: &'a [bool]) -> impl Iterator<Item = (f64, f64)> + 'a {
    pred.iter()
        .zip(gt)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&p, &g), _)| (p, g))
}

/// Mean of `|pred − gt|` over the mask.
pub fn abs_diff(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<f64> {
    check_shapes(pred, gt, mask)?;
    let (sum, n) = masked_pairs(pred, gt, mask).fold((0.0, 0usize), |(s, n), (p, g)| (s + (p - g).abs(), n + 1));
    if n == 0 {
        return Err(Error::Argument("empty mask".into()));
    }
    Ok(sum / n as f64)
}

/// Root mean squared error over the mask.
pub fn rmse(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<f64> {
    check_shapes(pred, gt, mask)?;
    let (sum, n) = masked_pairs(pred, gt, mask).fold((0.0, 0usize), |(s, n), (p, g)| (s + (p - g) * (p - g), n + 1));
    if n == 0 {
        return Err(Error::Argument("empty mask".into()));
    }
    Ok((sum / n as f64).sqrt())
}

/// `(fraction with |pred − gt| / gt < 0.25, masked pixels skipped for gt ≤ 0)`.
pub fn delta_125_counted(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<(f64, usize)> {
    check_shapes(pred, gt, mask)?;
    let mut good = 0usize;
    let mut n = 0usize;
    let mut skipped = 0usize;
    for (p, g) in masked_pairs(pred, gt, mask) {
        if !(g > 0.0) {
            skipped += 1;
            continue;
        }
        n += 1;
        if (p - g).abs() / g < DELTA_THRESHOLD {
            good += 1;
        }
    }
    if n == 0 {
        return Err(Error::Argument("no masked pixel with positive ground truth".into()));
    }
    Ok((good as f64 / n as f64, skipped))
}

pub fn delta_125(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<f64> {
    delta_125_counted(pred, gt, mask).map(|r| r.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub abs_diff: f64,
    pub rmse: f64,
    pub delta_125: f64,
    pub rmse_intensity: f64,
    pub pixel_count: usize,
    /// Compared pixels whose ground-truth depth is not positive.
    pub zero_gt_excluded: usize,
}

/// Resamples a ground-truth map onto a prediction canvas of another size
/// by matching pixel centers.
fn resample(gt: &Image, width: usize, height: usize, nearest: bool) -> Image {
    if gt.width() == width && gt.height() == height {
        return gt.clone();
    }
    let sx = gt.width() as f64 / width as f64;
    let sy = gt.height() as f64 / height as f64;
    let view = gt.view();
    let mut out = Image::new(width, height);
    for v in 0..height {
        for u in 0..width {
            let gu = (u as f64 + 0.5) * sx - 0.5;
            let gv = (v as f64 + 0.5) * sy - 0.5;
            let value = if nearest {
                let iu = (gu.round().max(0.0) as usize).min(gt.width() - 1);
                let iv = (gv.round().max(0.0) as usize).min(gt.height() - 1);
                gt.get(iu, iv)
            } else {
                view.sample_bilinear(gu, gv)
            };
            out.set(u, v, value);
        }
    }
    out
}

fn resample_mask(mask: &Mask, width: usize, height: usize) -> Mask {
    if mask.width() == width && mask.height() == height {
        return mask.clone();
    }
    let img = Image::from_vec(
        mask.width(),
        mask.height(),
        mask.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
    )
    .expect("mask dimensions");
    let r = resample(&img, width, height, true);
    Mask::from_vec(width, height, r.data().iter().map(|&x| x > 0.5).collect()).expect("resampled mask")
}

/// In-memory evaluation of a compensated render against ground truth.
///
/// Compared pixels are those inside `mask`, covered by the prediction
/// (`alpha ≥ 0.5`) and with a positive predicted depth.
pub fn evaluate_maps(
    pred_intensity: &Image,
    pred_depth: &Image,
    pred_alpha: &Image,
    gt_intensity: &Image,
    gt_depth: &Image,
    mask: &Mask,
) -> Result<MetricReport> {
    let (w, h) = (pred_depth.width(), pred_depth.height());
    for (name, img) in [("intensity", pred_intensity), ("alpha", pred_alpha)] {
        if img.width() != w || img.height() != h {
            return Err(Error::Argument(format!("predicted {name} differs in size from the depth")));
        }
    }
    let gt_i = resample(gt_intensity, w, h, false);
    let gt_d = resample(gt_depth, w, h, true);
    let mask = resample_mask(mask, w, h);
    let compare: Vec<bool> = (0..w * h)
        .map(|k| mask.data()[k] && pred_alpha.data()[k] >= MIN_ALPHA && pred_depth.data()[k] > 0.0)
        .collect();
    let pixel_count = compare.iter().filter(|&&b| b).count();
    if pixel_count == 0 {
        return Err(Error::Argument("no pixel is both visible and predicted".into()));
    }
    let (delta, skipped) = delta_125_counted(pred_depth.data(), gt_d.data(), &compare)?;
    Ok(MetricReport {
        abs_diff: abs_diff(pred_depth.data(), gt_d.data(), &compare)?,
        rmse: rmse(pred_depth.data(), gt_d.data(), &compare)?,
        delta_125: delta,
        rmse_intensity: rmse(pred_intensity.data(), gt_i.data(), &compare)?,
        pixel_count,
        zero_gt_excluded: skipped,
    })
}

/// Scores a run directory against the dataset it was reconstructed from.
pub fn evaluate_run(run_dir: &Path, dataset_dir: &Path) -> Result<(MetricReport, MotionCategory)> {
    let need = |dir: &Path, name: &str| {
        let p = dir.join(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::data(&p, "missing artifact"))
        }
    };
    let intensity = io::read_pfm_image(&need(run_dir, names::INTENSITY)?)?;
    let depth = io::read_pfm_image(&need(run_dir, names::DEPTH)?)?;
    let alpha = io::read_pfm_image(&need(run_dir, names::ALPHA)?)?;
    need(dataset_dir, names::GT_CENTRAL)?;
    need(dataset_dir, names::GT_DEPTH)?;
    need(dataset_dir, names::MASK)?;
    let gt = io::read_ground_truth(dataset_dir)?;
    let meta = io::read_container_manifest(dataset_dir)?;
    let report = evaluate_maps(&intensity, &depth, &alpha, &gt.central, &gt.depth, &gt.mask)?;
    let category = match gt.motion {
        Some(m) => MotionCategory::from_displacement(max_displacement(
            &m,
            &meta.intrinsics,
            &meta.timing(),
            meta.width,
            meta.height,
        )),
        None => MotionCategory::Gs,
    };
    Ok((report, category))
}

/// Accuracy of one motion component, rotation or translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentError {
    pub gt_norm: f64,
    pub est_norm: f64,
    /// `| |est| − |gt| | / |gt|`; absent when the ground truth is zero.
    pub magnitude_rel: Option<f64>,
    /// Angle between estimate and ground truth in degrees.
    pub angle_deg: Option<f64>,
    /// Largest image displacement, in pixels, that the estimated component
    /// alone induces over a frame.
    pub induced_px: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionError {
    pub rotation: ComponentError,
    pub translation: ComponentError,
    pub gt_displacement_px: f64,
}

fn component_error(gt: [f64; 3], est: [f64; 3], induced_px: f64) -> ComponentError {
    let norm = |a: [f64; 3]| (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    let (g, e) = (norm(gt), norm(est));
    let (magnitude_rel, angle_deg) = if g > 0.0 {
        let angle = if e > 0.0 {
            let cos = (gt[0] * est[0] + gt[1] * est[1] + gt[2] * est[2]) / (g * e);
            Some(cos.clamp(-1.0, 1.0).acos().to_degrees())
        } else {
            None
        };
        (Some((e - g).abs() / g), angle)
    } else {
        (None, None)
    };
    ComponentError {
        gt_norm: g,
        est_norm: e,
        magnitude_rel,
        angle_deg,
        induced_px,
    }
}

pub fn motion_error(
    gt: &MotionParams,
    est: &MotionParams,
    intr: &LFIntrinsics,
    timing: &RSTiming,
    width: usize,
    height: usize,
) -> MotionError {
    let rot_only = MotionParams::new(est.omega.into(), [0.0; 3]);
    let trans_only = MotionParams::new([0.0; 3], est.vel.into());
    MotionError {
        rotation: component_error(
            gt.omega.into(),
            est.omega.into(),
            max_displacement(&rot_only, intr, timing, width, height),
        ),
        translation: component_error(
            gt.vel.into(),
            est.vel.into(),
            max_displacement(&trans_only, intr, timing, width, height),
        ),
        gt_displacement_px: max_displacement(gt, intr, timing, width, height),
    }
}

/// Per-category bounds on motion recovery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionTolerance {
    pub magnitude_rel: f64,
    pub angle_deg: f64,
}

impl MotionTolerance {
    pub fn for_category(c: MotionCategory) -> Self {
        match c {
            MotionCategory::Fast => Self {
                magnitude_rel: 0.2,
                angle_deg: 20.0,
            },
            _ => Self {
                magnitude_rel: 0.1,
                angle_deg: 15.0,
            },
        }
    }

    /// A nonzero component must match in magnitude and direction; a zero one
    /// may induce at most `magnitude_rel` of the true displacement.
    pub fn component_ok(&self, c: &ComponentError, gt_displacement_px: f64) -> bool {
        match (c.magnitude_rel, c.angle_deg) {
            (Some(m), Some(a)) => m <= self.magnitude_rel && a <= self.angle_deg,
            (Some(_), None) => false,
            _ => c.induced_px <= self.magnitude_rel * gt_displacement_px,
        }
    }

    pub fn accepts(&self, e: &MotionError) -> bool {
        self.component_ok(&e.rotation, e.gt_displacement_px) && self.component_ok(&e.translation, e.gt_displacement_px)
    }
}

/// One evaluated run in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub method: String,
    pub scene: String,
    pub motion: String,
    pub category: MotionCategory,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub abs_diff: f64,
    pub rmse: f64,
    pub delta_125: f64,
    pub rmse_intensity: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub entries: Vec<ReportEntry>,
    /// Means keyed by method, then category name.
    pub summary: BTreeMap<String, BTreeMap<String, Aggregate>>,
    pub notes: Vec<String>,
}

const CATEGORIES: [MotionCategory; 3] = [MotionCategory::Gs, MotionCategory::Slow, MotionCategory::Fast];

impl Report {
    pub fn new(entries: Vec<ReportEntry>) -> Self {
        let mut summary: BTreeMap<String, BTreeMap<String, Aggregate>> = BTreeMap::new();
        for e in &entries {
            let agg = summary
                .entry(e.method.clone())
                .or_default()
                .entry(e.category.name().to_string())
                .or_insert(Aggregate {
                    abs_diff: 0.0,
                    rmse: 0.0,
                    delta_125: 0.0,
                    rmse_intensity: 0.0,
                    runs: 0,
                });
            agg.abs_diff += e.metrics.abs_diff;
            agg.rmse += e.metrics.rmse;
            agg.delta_125 += e.metrics.delta_125;
            agg.rmse_intensity += e.metrics.rmse_intensity;
            agg.runs += 1;
        }
        for per in summary.values_mut() {
            for a in per.values_mut() {
                let n = a.runs as f64;
                a.abs_diff /= n;
                a.rmse /= n;
                a.delta_125 /= n;
                a.rmse_intensity /= n;
            }
        }
        Self {
            entries,
            summary,
            notes: vec![
                "depth compared where the visibility mask is set and the prediction has alpha >= 0.5".into(),
                "ground truth resampled to the prediction canvas: nearest for depth, bilinear for intensity".into(),
                "delta_125 counts |pred - gt| / gt < 0.25".into(),
            ],
        }
    }

    /// Methods as rows, metric × category as column groups.
    pub fn to_markdown(&self) -> String {
        let metrics: [(&str, fn(&Aggregate) -> f64); 4] = [
            ("abs diff", |a| a.abs_diff),
            ("rmse", |a| a.rmse),
            ("δ<1.25", |a| a.delta_125),
            ("rmse (intensity)", |a| a.rmse_intensity),
        ];
        let mut s = String::from("| method |");
        for (m, _) in &metrics {
            for c in CATEGORIES {
                let _ = write!(s, " {m} {} |", c.name());
            }
        }
        s.push_str("\n|---|");
        s.push_str(&"---:|".repeat(metrics.len() * CATEGORIES.len()));
        s.push('\n');
        for (method, per) in &self.summary {
            let _ = write!(s, "| {method} |");
            for (_, f) in &metrics {
                for c in CATEGORIES {
                    match per.get(c.name()) {
                        Some(a) => {
                            let _ = write!(s, " {:.4} |", f(a));
                        }
                        None => s.push_str(" - |"),
                    }
                }
            }
            s.push('\n');
        }
        if !self.notes.is_empty() {
            s.push('\n');
            for n in &self.notes {
                let _ = writeln!(s, "- {n}");
            }
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        io::write_json(&dir.join("report.json"), self)?;
        io::write_text(&dir.join("report.md"), &self.to_markdown())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_element_oracle() {
        let (p, g, m) = ([1.0, 2.0], [1.0, 4.0], [true, true]);
        assert_eq!(abs_diff(&p, &g, &m).unwrap(), 1.0);
        assert!((rmse(&p, &g, &m).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(delta_125(&p, &g, &m).unwrap(), 0.5);
    }

    #[test]
    fn mask_selecting_equal_pixel() {
        let (p, g, m) = ([1.0, 2.0], [1.0, 4.0], [true, false]);
        assert_eq!(abs_diff(&p, &g, &m).unwrap(), 0.0);
        assert_eq!(rmse(&p, &g, &m).unwrap(), 0.0);
        assert_eq!(delta_125(&p, &g, &m).unwrap(), 1.0);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let m = [false, false];
        assert!(abs_diff(&[1.0, 2.0], &[1.0, 2.0], &m).is_err());
        assert!(rmse(&[1.0, 2.0], &[1.0, 2.0], &m).is_err());
        assert!(delta_125(&[1.0, 2.0], &[1.0, 2.0], &m).is_err());
        assert!(abs_diff(&[1.0], &[1.0, 2.0], &[true]).is_err());
    }

    #[test]
    fn delta_threshold_boundary() {
        let g = [0.5, 1.0, 3.0, 7.5];
        let m = [true; 4];
        let lo: Vec<f64> = g.iter().map(|x| 1.24 * x).collect();
        let hi: Vec<f64> = g.iter().map(|x| 1.26 * x).collect();
        assert_eq!(delta_125(&lo, &g, &m).unwrap(), 1.0);
        assert_eq!(delta_125(&hi, &g, &m).unwrap(), 0.0);
    }

    #[test]
    fn zero_gt_pixels_are_counted_not_scored() {
        let (frac, skipped) = delta_125_counted(&[1.0, 5.0, 2.0], &[1.0, 0.0, 4.0], &[true; 3]).unwrap();
        assert_eq!(frac, 0.5);
        assert_eq!(skipped, 1);
        assert!(delta_125(&[1.0], &[0.0], &[true]).is_err());
    }

    #[test]
    fn constant_offset_rmse() {
        let g = [0.3, 1.7, 2.2];
        let p: Vec<f64> = g.iter().map(|x| x - 0.4).collect();
        assert!((rmse(&p, &g, &[true; 3]).unwrap() - 0.4).abs() < 1e-12);
    }

    fn maps(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> Image {
        let mut img = Image::new(w, h);
        for v in 0..h {
            for u in 0..w {
                img.set(u, v, f(u, v));
            }
        }
        img
    }

    #[test]
    fn ground_truth_against_itself() {
        let depth = maps(6, 4, |u, v| 1.0 + 0.1 * (u + v) as f64);
        let inten = maps(6, 4, |u, _| u as f64 / 6.0);
        let alpha = Image::filled(6, 4, 1.0);
        let mask = Mask::new(6, 4, true);
        let r = evaluate_maps(&inten, &depth, &alpha, &inten, &depth, &mask).unwrap();
        assert_eq!((r.abs_diff, r.rmse, r.delta_125, r.rmse_intensity), (0.0, 0.0, 1.0, 0.0));
        assert_eq!(r.pixel_count, 24);
    }

    #[test]
    fn uncovered_prediction_pixels_are_skipped() {
        let depth = Image::filled(2, 1, 1.0);
        let gt = maps(2, 1, |u, _| if u == 0 { 1.0 } else { 9.0 });
        let alpha = maps(2, 1, |u, _| if u == 0 { 1.0 } else { 0.2 });
        let r = evaluate_maps(&depth, &depth, &alpha, &depth, &gt, &Mask::new(2, 1, true)).unwrap();
        assert_eq!(r.pixel_count, 1);
        assert_eq!(r.abs_diff, 0.0);
    }

    #[test]
    fn component_scores() {
        let c = component_error([1.0, 0.0, 0.0], [1.1, 0.1, 0.0], 0.0);
        assert!((c.magnitude_rel.unwrap() - ((1.21f64 + 0.01).sqrt() - 1.0)).abs() < 1e-12);
        assert!((c.angle_deg.unwrap() - (0.1f64 / 1.1).atan().to_degrees()).abs() < 1e-9);
        let z = component_error([0.0; 3], [0.0, 0.2, 0.0], 0.7);
        assert_eq!((z.magnitude_rel, z.angle_deg), (None, None));
        let tol = MotionTolerance::for_category(MotionCategory::Slow);
        assert!(tol.component_ok(&z, 7.0));
        assert!(!tol.component_ok(&z, 6.9));
    }

    #[test]
    fn markdown_has_one_row_per_method() {
        let m = MetricReport {
            abs_diff: 0.1,
            rmse: 0.2,
            delta_125: 0.9,
            rmse_intensity: 0.05,
            pixel_count: 10,
            zero_gt_excluded: 0,
        };
        let entry = |method: &str, category| ReportEntry {
            method: method.into(),
            scene: "s".into(),
            motion: "m".into(),
            category,
            metrics: m,
        };
        let r = Report::new(vec![
            entry("full", MotionCategory::Fast),
            entry("full", MotionCategory::Fast),
            entry("no-motion", MotionCategory::Gs),
        ]);
        assert_eq!(r.summary["full"]["fast"].runs, 2);
        let md = r.to_markdown();
        assert_eq!(md.lines().filter(|l| l.starts_with("| full")).count(), 1);
        assert!(md.contains("| no-motion |"));
    }
}
