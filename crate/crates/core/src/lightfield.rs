//! Light-field data model: the 4D container, sub-aperture views, camera
//! intrinsics and the rolling-shutter row clock shared by every view.
//!
//! Axes follow the `(x, y, u, v)` convention: `(x, y)` pick the view in the
//! `A × A` array (column, row) and `(u, v)` the pixel inside that view
//! (column, row). Pixel centers sit on integer coordinates.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Owned row-major grayscale image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Argument(format!(
                "image buffer has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        self.data[v * self.width + u] = value;
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.data[v * self.width..(v + 1) * self.width]
    }

    pub fn view(&self) -> ImageView<'_> {
        ImageView {
            width: self.width,
            height: self.height,
            data: &self.data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

/// Borrowed row-major grayscale image.
#[derive(Debug, Clone, Copy)]
pub struct ImageView<'a> {
    width: usize,
    height: usize,
    data: &'a [f64],
}

impl<'a> ImageView<'a> {
    pub fn new(width: usize, height: usize, data: &'a [f64]) -> Self {
        assert_eq!(data.len(), width * height, "view buffer size");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &'a [f64] {
        self.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    pub fn row(&self, v: usize) -> &'a [f64] {
        &self.data[v * self.width..(v + 1) * self.width]
    }

    /// Linear interpolation along a row; `None` outside `[0, W-1]`.
    #[inline]
    pub fn sample_row(&self, u: f64, v: usize) -> Option<f64> {
        if !(u >= 0.0 && u <= (self.width - 1) as f64) {
            return None;
        }
        let u0 = u.floor() as usize;
        let t = u - u0 as f64;
        let row = self.row(v);
        if u0 + 1 >= self.width {
            return Some(row[u0]);
        }
        Some(row[u0] * (1.0 - t) + row[u0 + 1] * t)
    }

    /// Bilinear sample with border clamping.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> f64 {
        let u = u.clamp(0.0, (self.width - 1) as f64);
        let v = v.clamp(0.0, (self.height - 1) as f64);
        let u0 = (u.floor() as usize).min(self.width.saturating_sub(2));
        let v0 = (v.floor() as usize).min(self.height.saturating_sub(2));
        let u1 = (u0 + 1).min(self.width - 1);
        let v1 = (v0 + 1).min(self.height - 1);
        let tu = u - u0 as f64;
        let tv = v - v0 as f64;
        let top = self.get(u0, v0) * (1.0 - tu) + self.get(u1, v0) * tu;
        let bottom = self.get(u0, v1) * (1.0 - tu) + self.get(u1, v1) * tu;
        top * (1.0 - tv) + bottom * tv
    }

    pub fn to_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.to_vec(),
        }
    }
}

/// Boolean per-pixel mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Argument(format!(
                "mask buffer has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: bool) {
        self.data[v * self.width + u] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Argument("mask sizes differ".into()));
        }
        Ok(Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
        })
    }
}

/// 4D grayscale light field with `A × A` views of `W × H` pixels, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LightField4D {
    angular: usize,
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl LightField4D {
    /// Build from views listed in `(y, x)` raster order: index `y * A + x`.
    pub fn from_views(angular: usize, views: Vec<Image>) -> Result<Self> {
        if angular == 0 || angular % 2 == 0 {
            return Err(Error::Argument(format!(
                "angular resolution must be odd, got {angular}"
            )));
        }
        if views.len() != angular * angular {
            return Err(Error::Argument(format!(
                "expected {} views, got {}",
                angular * angular,
                views.len()
            )));
        }
        let width = views[0].width();
        let height = views[0].height();
        let mut data = Vec::with_capacity(views.len() * width * height);
        for view in views {
            if view.width() != width || view.height() != height {
                return Err(Error::Argument("views differ in size".into()));
            }
            data.extend_from_slice(view.data());
        }
        Self::from_raw(angular, width, height, data)
    }

    pub fn from_raw(angular: usize, width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if angular == 0 || angular % 2 == 0 {
            return Err(Error::Argument(format!(
                "angular resolution must be odd, got {angular}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::Argument("empty view size".into()));
        }
        if data.len() != angular * angular * width * height {
            return Err(Error::Argument("light-field buffer size mismatch".into()));
        }
        if let Some(bad) = data.iter().position(|x| !(x.is_finite() && (0.0..=1.0).contains(x))) {
            return Err(Error::Argument(format!(
                "intensity {} at flat index {bad} is not finite in [0, 1]",
                data[bad]
            )));
        }
        Ok(Self {
            angular,
            width,
            height,
            data,
        })
    }

    pub fn constant(angular: usize, width: usize, height: usize, value: f64) -> Result<Self> {
        Self::from_raw(
            angular,
            width,
            height,
            vec![value; angular * angular * width * height],
        )
    }

    pub fn angular(&self) -> usize {
        self.angular
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn center(&self) -> usize {
        (self.angular - 1) / 2
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn sai_view(&self, x: usize, y: usize) -> Result<ImageView<'_>> {
        check_view(self.angular, x, y)?;
        let n = self.width * self.height;
        let start = (y * self.angular + x) * n;
        Ok(ImageView::new(
            self.width,
            self.height,
            &self.data[start..start + n],
        ))
    }

    pub fn central_view(&self) -> ImageView<'_> {
        let c = self.center();
        self.sai_view(c, c).expect("center is in range")
    }

    /// All views in `(y, x)` raster order, copied.
    pub fn views(&self) -> Vec<Image> {
        (0..self.angular)
            .flat_map(|y| (0..self.angular).map(move |x| (x, y)))
            .map(|(x, y)| self.sai_view(x, y).unwrap().to_image())
            .collect()
    }
}

fn check_view(angular: usize, x: usize, y: usize) -> Result<()> {
    if x >= angular {
        return Err(Error::OutOfBounds {
            axis: "view x",
            index: x,
            len: angular,
        });
    }
    if y >= angular {
        return Err(Error::OutOfBounds {
            axis: "view y",
            index: y,
            len: angular,
        });
    }
    Ok(())
}

/// Read access to sub-aperture images. Stages take this instead of the
/// concrete container so that view access can be audited.
pub trait SaiSource: Sync {
    fn angular(&self) -> usize;
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn sai(&self, x: usize, y: usize) -> Result<ImageView<'_>>;

    fn center(&self) -> usize {
        (self.angular() - 1) / 2
    }
}

impl SaiSource for LightField4D {
    fn angular(&self) -> usize {
        self.angular
    }

    fn width(&self) -> usize {
        self.width
    }

    fn height(&self) -> usize {
        self.height
    }

    fn sai(&self, x: usize, y: usize) -> Result<ImageView<'_>> {
        self.sai_view(x, y)
    }
}

/// Wraps a source and records every `(x, y)` that is read.
pub struct RecordingSource<'a, S: SaiSource> {
    inner: &'a S,
    log: Mutex<Vec<(usize, usize)>>,
}

impl<'a, S: SaiSource> RecordingSource<'a, S> {
    pub fn new(inner: &'a S) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn accesses(&self) -> Vec<(usize, usize)> {
        self.log.lock().unwrap().clone()
    }

    /// Distinct views read, sorted.
    pub fn distinct(&self) -> Vec<(usize, usize)> {
        let mut v = self.accesses();
        v.sort_unstable();
        v.dedup();
        v
    }
}

impl<S: SaiSource> SaiSource for RecordingSource<'_, S> {
    fn angular(&self) -> usize {
        self.inner.angular()
    }

    fn width(&self) -> usize {
        self.inner.width()
    }

    fn height(&self) -> usize {
        self.inner.height()
    }

    fn sai(&self, x: usize, y: usize) -> Result<ImageView<'_>> {
        self.log.lock().unwrap().push((x, y));
        self.inner.sai(x, y)
    }
}

/// Camera intrinsics of the light field.
///
/// `f` is in pixels, `(u0, v0)` the principal point in pixels, `w` the sensor
/// width and `F` the focal length (both mm), `b` the inter-view baseline (mm)
/// and `Pf` the distance of the focal plane in scene units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LFIntrinsics {
    pub f: f64,
    pub u0: f64,
    pub v0: f64,
    pub w: f64,
    #[serde(rename = "F")]
    pub focal_mm: f64,
    pub b: f64,
    #[serde(rename = "Pf")]
    pub focal_plane: f64,
}

impl LFIntrinsics {
    /// Intrinsics for a `width × height` sensor with the principal point at
    /// the image center and `f = F / pixel size`.
    pub fn centered(width: usize, height: usize, f: f64, w: f64, b: f64, focal_plane: f64) -> Self {
        let focal_mm = f * w / width as f64;
        Self {
            f,
            u0: (width as f64 - 1.0) / 2.0,
            v0: (height as f64 - 1.0) / 2.0,
            w,
            focal_mm,
            b,
            focal_plane,
        }
    }

    /// Desk-scale defaults: 53° horizontal field of view, focal plane at 1,
    /// and a baseline giving about 1.6 px of disparity per view step at
    /// depth 0.7 whatever the resolution.
    pub fn desk(width: usize, height: usize) -> Self {
        let f = width as f64;
        Self::centered(width, height, f, 8.0, 3.84 / width as f64, 1.0)
    }

    /// `β = b · F · max(2 u0, 2 v0)`.
    pub fn beta(&self) -> f64 {
        self.b * self.focal_mm * (2.0 * self.u0).max(2.0 * self.v0)
    }

    /// Pixel shift per view step per unit of normalized disparity.
    pub fn parallax_scale(&self) -> f64 {
        1.0
    }

    /// Distance between adjacent view centers of projection in scene units.
    ///
    /// Fixed so that a point of normalized disparity `d` moves by
    /// `d · parallax_scale()` pixels per view step.
    pub fn view_baseline(&self) -> f64 {
        self.parallax_scale() * self.beta() / (self.f * self.w)
    }

    /// Same camera on a canvas enlarged by `factor`, principal point recentered.
    pub fn enlarged(&self, width: usize, height: usize, factor: usize) -> Self {
        let extra_w = (factor as f64 - 1.0) * width as f64 / 2.0;
        let extra_h = (factor as f64 - 1.0) * height as f64 / 2.0;
        Self {
            u0: self.u0 + extra_w,
            v0: self.v0 + extra_h,
            ..*self
        }
    }

    pub fn validate(&self, width: usize) -> Result<()> {
        let fields = [
            ("f", self.f),
            ("w", self.w),
            ("F", self.focal_mm),
            ("b", self.b),
            ("Pf", self.focal_plane),
            ("beta", self.beta()),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Argument(format!(
                    "intrinsic {name} must be positive, got {value}"
                )));
            }
        }
        let lhs = self.f * self.w;
        let rhs = self.focal_mm * width as f64;
        if ((lhs - rhs) / rhs).abs() > 1e-6 {
            return Err(Error::Argument(format!(
                "inconsistent intrinsics: f*w = {lhs} but F*W = {rhs}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutDirection {
    #[default]
    TopToBottom,
    BottomToTop,
}

/// Rolling-shutter row clock. One full-frame readout lasts 1.0 time unit and
/// the row `origin_row` (the principal row) is read at time 0. Every view
/// shares this clock: the time of a pixel depends only on its row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RSTiming {
    pub row_period: f64,
    pub origin_row: f64,
    #[serde(default)]
    pub readout: ReadoutDirection,
}

impl RSTiming {
    pub fn for_height(height: usize, origin_row: f64) -> Self {
        Self {
            row_period: 1.0 / height as f64,
            origin_row,
            readout: ReadoutDirection::TopToBottom,
        }
    }

    #[inline]
    pub fn row_time(&self, v: f64) -> f64 {
        match self.readout {
            ReadoutDirection::TopToBottom => (v - self.origin_row) * self.row_period,
            ReadoutDirection::BottomToTop => (self.origin_row - v) * self.row_period,
        }
    }

    /// Time of the band of rows `[va, vb)`, taken at its center row.
    pub fn band_time(&self, va: usize, vb: usize) -> f64 {
        self.row_time((va + vb - 1) as f64 / 2.0)
    }
}

pub fn row_time(v: f64, timing: &RSTiming) -> f64 {
    timing.row_time(v)
}

/// `count` views of the central row, symmetric about the center and spread
/// over the whole row.
pub fn central_row_views(angular: usize, count: usize) -> Result<Vec<(usize, usize)>> {
    if count == 0 || count % 2 == 0 || count > angular {
        return Err(Error::Argument(format!(
            "central-row view count must be odd and at most {angular}, got {count}"
        )));
    }
    let c = (angular - 1) / 2;
    if count == 1 {
        return Ok(vec![(c, c)]);
    }
    let half = (count as i64 - 1) / 2;
    let step = (angular - 1) as f64 / (count - 1) as f64;
    Ok((-half..=half)
        .map(|j| {
            let offset = (j as f64 * step).round() as i64;
            ((c as i64 + offset) as usize, c)
        })
        .collect())
}

/// The four extreme corners of the view array.
pub fn corner_views(angular: usize) -> Result<Vec<(usize, usize)>> {
    if angular < 3 {
        return Err(Error::Argument(format!(
            "corner views need an angular resolution of at least 3, got {angular}"
        )));
    }
    let a = angular - 1;
    Ok(vec![(0, 0), (a, 0), (0, a), (a, a)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_view() {
        let lf = LightField4D::constant(3, 4, 5, 0.5).unwrap();
        let view = lf.sai_view(2, 1).unwrap();
        assert_eq!(view.width(), 4);
        assert_eq!(view.height(), 5);
        assert!(view.data().iter().all(|&x| x == 0.5));
    }

    #[test]
    fn view_out_of_range() {
        let lf = LightField4D::constant(9, 2, 2, 0.0).unwrap();
        match lf.sai_view(9, 0) {
            Err(Error::OutOfBounds { axis, index, len }) => {
                assert_eq!(axis, "view x");
                assert_eq!(index, 9);
                assert_eq!(len, 9);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            lf.sai_view(0, 12),
            Err(Error::OutOfBounds { axis: "view y", .. })
        ));
    }

    #[test]
    fn rejects_even_angular_and_bad_values() {
        assert!(LightField4D::constant(4, 2, 2, 0.0).is_err());
        assert!(LightField4D::constant(3, 2, 2, 1.5).is_err());
        assert!(LightField4D::from_raw(1, 1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn stack_round_trip() {
        let a = 3;
        let data: Vec<f64> = (0..a * a * 4 * 3).map(|i| (i as f64 * 0.37).fract()).collect();
        let lf = LightField4D::from_raw(a, 4, 3, data).unwrap();
        let rebuilt = LightField4D::from_views(a, lf.views()).unwrap();
        assert_eq!(rebuilt, lf);
        assert_eq!(rebuilt.data(), lf.data());
    }

    #[test]
    fn row_time_definition() {
        let h = 128;
        let timing = RSTiming::for_height(h, 63.5);
        assert_eq!(timing.row_time(63.5), 0.0);
        assert!((timing.row_time(64.5) - 1.0 / h as f64).abs() < 1e-15);
        let span = timing.row_time((h - 1) as f64) - timing.row_time(0.0);
        assert!((span - (h - 1) as f64 / h as f64).abs() < 1e-12);
        for v in 1..h {
            assert!(timing.row_time(v as f64) > timing.row_time((v - 1) as f64));
        }
        let flipped = RSTiming {
            readout: ReadoutDirection::BottomToTop,
            ..timing
        };
        assert_eq!(flipped.row_time(63.5), 0.0);
        assert!(flipped.row_time(10.0) > flipped.row_time(11.0));
    }

    #[test]
    fn row_time_is_shared_by_all_views() {
        // The clock takes no view index: synchronization holds structurally.
        let timing = RSTiming::for_height(16, 7.5);
        let lf = LightField4D::constant(3, 4, 16, 0.0).unwrap();
        for v in 0..16 {
            let t: Vec<f64> = (0..9).map(|_| row_time(v as f64, &timing)).collect();
            assert!(t.iter().all(|&x| x == t[0]));
        }
        assert_eq!(lf.height(), 16);
    }

    #[test]
    fn central_row_selection() {
        assert_eq!(
            central_row_views(9, 5).unwrap(),
            vec![(0, 4), (2, 4), (4, 4), (6, 4), (8, 4)]
        );
        assert_eq!(central_row_views(9, 1).unwrap(), vec![(4, 4)]);
        assert_eq!(
            central_row_views(5, 3).unwrap(),
            vec![(0, 2), (2, 2), (4, 2)]
        );
        let seven: Vec<usize> = central_row_views(9, 7).unwrap().iter().map(|v| v.0).collect();
        assert_eq!(seven, vec![0, 1, 3, 4, 5, 7, 8]);
        assert!(central_row_views(9, 4).is_err());
        assert!(central_row_views(9, 11).is_err());
    }

    #[test]
    fn corners() {
        assert_eq!(
            corner_views(9).unwrap(),
            vec![(0, 0), (8, 0), (0, 8), (8, 8)]
        );
        assert_eq!(
            corner_views(3).unwrap(),
            vec![(0, 0), (2, 0), (0, 2), (2, 2)]
        );
        assert!(corner_views(2).is_err());
    }

    #[test]
    fn intrinsics_consistency() {
        let intr = LFIntrinsics::desk(128, 128);
        intr.validate(128).unwrap();
        assert!(intr.beta() > 0.0);
        let bad = LFIntrinsics { f: 100.0, ..intr };
        assert!(bad.validate(128).is_err());
        let big = intr.enlarged(128, 128, 2);
        assert_eq!(big.u0, (256.0 - 1.0) / 2.0);
    }

    #[test]
    fn recording_source_logs() {
        let lf = LightField4D::constant(3, 2, 2, 0.1).unwrap();
        let rec = RecordingSource::new(&lf);
        rec.sai(0, 1).unwrap();
        rec.sai(0, 1).unwrap();
        rec.sai(2, 2).unwrap();
        assert_eq!(rec.accesses().len(), 3);
        assert_eq!(rec.distinct(), vec![(0, 1), (2, 2)]);
    }
}
