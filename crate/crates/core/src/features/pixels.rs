//! Pixel features: mouth-ROI sharpness, non-mouth temporal MSE and mouth-ROI
//! colour shift in CIELAB.

use super::{FeatureError, MouthRoi};

/// Borrowed row-major RGB24 image.
#[derive(Debug, Clone, Copy)]
pub struct RgbView<'a> {
    pub width: usize,
    pub height: usize,
    pub data: &'a [u8],
}

impl<'a> RgbView<'a> {
    pub fn new(width: usize, height: usize, data: &'a [u8]) -> Result<Self, FeatureError> {
        if data.len() != width * height * 3 {
            return Err(FeatureError::ShapeMismatch(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Copy of the ROI box.
    pub fn crop(&self, roi: &MouthRoi) -> RgbImage {
        let w = roi.x1 - roi.x0;
        let h = roi.y1 - roi.y0;
        let mut data = Vec::with_capacity(w * h * 3);
        for y in roi.y0..roi.y1 {
            let start = (y * self.width + roi.x0) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        RgbImage {
            width: w,
            height: h,
            data,
        }
    }
}

/// Owned row-major RGB24 image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, FeatureError> {
        RgbView::new(width, height, &data)?;
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, data }
    }

    pub fn view(&self) -> RgbView<'_> {
        RgbView {
            width: self.width,
            height: self.height,
            data: &self.data,
        }
    }
}

/// Row-major grayscale image with real-valued intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "gray image size");
        Self { width, height, data }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// BT.601 luma rounded to the nearest integer gray level.
pub fn grayscale(img: RgbView<'_>) -> GrayImage {
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).round())
        .collect();
    GrayImage::new(img.width, img.height, data)
}

/// Population variance of the valid-mode 4-neighbour Laplacian response.
/// Sharp regions score high; blurred ones approach zero.
pub fn laplacian_blurriness(roi: &GrayImage) -> Result<f64, FeatureError> {
    if roi.width < 3 || roi.height < 3 {
        return Err(FeatureError::RoiTooSmall {
            width: roi.width,
            height: roi.height,
        });
    }
    let n = ((roi.width - 2) * (roi.height - 2)) as f64;
    let mut responses = Vec::with_capacity(n as usize);
    for y in 1..roi.height - 1 {
        for x in 1..roi.width - 1 {
            let r = roi.at(x, y - 1) + roi.at(x - 1, y) + roi.at(x + 1, y) + roi.at(x, y + 1)
                - 4.0 * roi.at(x, y);
            responses.push(r);
        }
    }
    let mean = responses.iter().sum::<f64>() / n;
    Ok(responses.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n)
}

/// Mean squared difference over every pixel and channel outside `roi`.
pub fn non_mouth_mse(cur: RgbView<'_>, prev: RgbView<'_>, roi: &MouthRoi) -> Result<f64, FeatureError> {
    if cur.width != prev.width || cur.height != prev.height {
        return Err(FeatureError::ShapeMismatch(format!(
            "frames {}x{} and {}x{}",
            cur.width, cur.height, prev.width, prev.height
        )));
    }
    roi.check_within(cur.width, cur.height)?;
    let inside = (roi.x1 - roi.x0) * (roi.y1 - roi.y0);
    let outside = cur.width * cur.height - inside;
    if outside == 0 {
        return Err(FeatureError::EmptyComplement);
    }
    let mut acc = 0u64;
    for y in 0..cur.height {
        let row = y * cur.width * 3;
        let in_rows = y >= roi.y0 && y < roi.y1;
        for x in 0..cur.width {
            if in_rows && x >= roi.x0 && x < roi.x1 {
                continue;
            }
            let i = row + x * 3;
            for c in 0..3 {
                let d = cur.data[i + c] as i64 - prev.data[i + c] as i64;
                acc += (d * d) as u64;
            }
        }
    }
    Ok(acc as f64 / (outside * 3) as f64)
}

const D65_WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];
const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];
const LAB_EPSILON: f64 = 216.0 / 24389.0;
const LAB_KAPPA: f64 = 24389.0 / 27.0;

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    if t > LAB_EPSILON {
        t.cbrt()
    } else {
        (LAB_KAPPA * t + 16.0) / 116.0
    }
}

/// sRGB (D65, 8 bits per channel) to CIELAB.
pub fn srgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = rgb.map(|c| srgb_to_linear(c as f64 / 255.0));
    let mut xyz = [0.0; 3];
    for (i, row) in SRGB_TO_XYZ.iter().enumerate() {
        xyz[i] = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
    }
    let fx = lab_f(xyz[0] / D65_WHITE[0]);
    let fy = lab_f(xyz[1] / D65_WHITE[1]);
    let fz = lab_f(xyz[2] / D65_WHITE[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// ROI converted to CIELAB, kept so consecutive frames convert only once.
#[derive(Debug, Clone)]
pub(crate) struct LabImage {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

impl LabImage {
    pub(crate) fn from_rgb(img: RgbView<'_>) -> Self {
        Self {
            width: img.width,
            height: img.height,
            data: img.data.chunks_exact(3).map(|p| srgb_to_lab([p[0], p[1], p[2]])).collect(),
        }
    }

    #[inline]
    fn sample(&self, x: usize, y: usize, w: usize, h: usize) -> [f64; 3] {
        // nearest neighbour from a w x h grid onto this image
        let sx = x * self.width / w;
        let sy = y * self.height / h;
        self.data[sy * self.width + sx]
    }
}

pub(crate) fn mean_lab_distance(a: &LabImage, b: &LabImage) -> Result<f64, FeatureError> {
    let w = a.width.min(b.width);
    let h = a.height.min(b.height);
    if w == 0 || h == 0 {
        return Err(FeatureError::EmptyRoi);
    }
    let mut acc = 0.0;
    for y in 0..h {
        for x in 0..w {
            let p = a.sample(x, y, w, h);
            let q = b.sample(x, y, w, h);
            let d0 = p[0] - q[0];
            let d1 = p[1] - q[1];
            let d2 = p[2] - q[2];
            acc += (d0 * d0 + d1 * d1 + d2 * d2).sqrt();
        }
    }
    Ok(acc / (w * h) as f64)
}

/// Mean per-pixel Euclidean distance in (L*, a*, b*) between two mouth ROIs.
/// If the shapes differ, both are nearest-neighbour resampled to the smaller
/// width and the smaller height.
pub fn lab_color_shift(roi_t: RgbView<'_>, roi_prev: RgbView<'_>) -> Result<f64, FeatureError> {
    mean_lab_distance(&LabImage::from_rgb(roi_t), &LabImage::from_rgb(roi_prev))
}
