//! Computed visual descriptors.
//!
//! Zonal descriptors use five zones: a central ellipse and the four corner
//! regions outside it. Histograms are L1-normalized per zone; a zone with no
//! contributing pixels keeps an all-zero histogram.

use std::collections::BTreeMap;

use image::RgbImage;
use rustfft::{num_complex::Complex, FftPlanner};

use super::color::srgb_to_lab;
use crate::error::{Error, Result};

pub const LAB_MEAN: &str = "lab_mean";
pub const LAB_MOMENTS: &str = "lab_moments";
pub const SOBEL_HISTOGRAM: &str = "sobel_hist";
pub const SOBEL_COOCCURRENCE: &str = "sobel_cooc";
pub const SOBEL_FFT: &str = "sobel_fft";
pub const RELATIVE_BRIGHTNESS: &str = "brightness_rel";

/// Names and dimensions of every descriptor produced by [`extract_features`].
pub const COMPUTED_FEATURES: [(&str, usize); 6] = [
    (LAB_MEAN, 15),
    (LAB_MOMENTS, 45),
    (SOBEL_HISTOGRAM, 20),
    (SOBEL_COOCCURRENCE, 80),
    (SOBEL_FFT, 128),
    (RELATIVE_BRIGHTNESS, 40),
];

pub const ZONES: usize = 5;
pub const MIN_SIDE: u32 = 16;

const DIRECTIONS: usize = 4;
const FFT_SIDE: usize = 16;
/// Sobel magnitude (in L* units) below which a pixel carries no direction.
const EDGE_THRESHOLD: f64 = 8.0;
/// Bin edges for L* differences between neighbouring pixels.
const BRIGHTNESS_EDGES: [f64; 7] = [-20.0, -8.0, -3.0, 0.0, 3.0, 8.0, 20.0];

/// Zone of pixel `(x, y)`: 0 is the central ellipse, 1..=4 the corners
/// (top-left, top-right, bottom-left, bottom-right).
pub fn zone_of(x: u32, y: u32, width: u32, height: u32) -> usize {
    let u = (f64::from(x) + 0.5) / f64::from(width) * 2.0 - 1.0;
    let v = (f64::from(y) + 0.5) / f64::from(height) * 2.0 - 1.0;
    if u * u + v * v <= 0.5 {
        return 0;
    }
    match (u < 0.0, v < 0.0) {
        (true, true) => 1,
        (false, true) => 2,
        (true, false) => 3,
        (false, false) => 4,
    }
}

struct LabImage {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
    zones: Vec<usize>,
}

impl LabImage {
    fn new(raster: &RgbImage) -> Self {
        let (w, h) = raster.dimensions();
        let mut pixels = Vec::with_capacity((w * h) as usize);
        let mut zones = Vec::with_capacity((w * h) as usize);
        for y in 0..h {
            for x in 0..w {
                pixels.push(srgb_to_lab(raster.get_pixel(x, y).0));
                zones.push(zone_of(x, y, w, h));
            }
        }
        LabImage {
            width: w as usize,
            height: h as usize,
            pixels,
            zones,
        }
    }

    fn lightness(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x][0]
    }

    fn lightness_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.lightness(x, y)
    }
}

struct Gradient {
    magnitude: Vec<f64>,
    direction: Vec<Option<usize>>,
}

fn sobel(img: &LabImage) -> Gradient {
    let n = img.width * img.height;
    let mut magnitude = Vec::with_capacity(n);
    let mut direction = Vec::with_capacity(n);
    for y in 0..img.height as isize {
        for x in 0..img.width as isize {
            let p = |dx: isize, dy: isize| img.lightness_clamped(x + dx, y + dy);
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let mag = gx.hypot(gy);
            magnitude.push(mag);
            direction.push((mag > EDGE_THRESHOLD).then(|| {
                let angle = gy.atan2(gx).rem_euclid(std::f64::consts::PI);
                (angle / std::f64::consts::FRAC_PI_4).round() as usize % DIRECTIONS
            }));
        }
    }
    Gradient {
        magnitude,
        direction,
    }
}

fn normalize_blocks(values: &mut [f64], block: usize) {
    for chunk in values.chunks_mut(block) {
        let total: f64 = chunk.iter().sum();
        if total > 0.0 {
            chunk.iter_mut().for_each(|v| *v /= total);
        }
    }
}

fn lab_statistics(img: &LabImage) -> (Vec<f64>, Vec<f64>) {
    let mut counts = [0usize; ZONES];
    let mut sums = [[0.0; 3]; ZONES];
    for (px, &z) in img.pixels.iter().zip(&img.zones) {
        counts[z] += 1;
        for c in 0..3 {
            sums[z][c] += px[c];
        }
    }
    let mut means = [[0.0; 3]; ZONES];
    for z in 0..ZONES {
        for c in 0..3 {
            means[z][c] = if counts[z] > 0 {
                sums[z][c] / counts[z] as f64
            } else {
                0.0
            };
        }
    }

    // Second, third and fourth central moments, per zone and channel.
    let mut central = [[[0.0; 3]; 3]; ZONES];
    for (px, &z) in img.pixels.iter().zip(&img.zones) {
        for c in 0..3 {
            let d = px[c] - means[z][c];
            central[z][c][0] += d * d;
            central[z][c][1] += d * d * d;
            central[z][c][2] += d * d * d * d;
        }
    }

    let mean_vec = means.iter().flatten().copied().collect();
    let mut moments = Vec::with_capacity(ZONES * 9);
    for z in 0..ZONES {
        let n = counts[z].max(1) as f64;
        for channel in &central[z] {
            let [m2, m3, m4] = channel.map(|m| m / n);
            // Roots bring every moment back to L*a*b* units.
            moments.push(m2.sqrt());
            moments.push(m3.cbrt());
            moments.push(m4.sqrt().sqrt());
        }
    }
    (mean_vec, moments)
}

fn edge_histograms(img: &LabImage, grad: &Gradient) -> (Vec<f64>, Vec<f64>) {
    let mut hist = vec![0.0; ZONES * DIRECTIONS];
    let mut cooc = vec![0.0; ZONES * DIRECTIONS * DIRECTIONS];
    let (w, h) = (img.width, img.height);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let Some(d) = grad.direction[i] else { continue };
            let z = img.zones[i];
            hist[z * DIRECTIONS + d] += 1.0;
            let neighbours = [(x + 1 < w).then(|| i + 1), (y + 1 < h).then(|| i + w)];
            for j in neighbours.into_iter().flatten() {
                if let Some(e) = grad.direction[j] {
                    cooc[z * DIRECTIONS * DIRECTIONS + d * DIRECTIONS + e] += 1.0;
                }
            }
        }
    }
    normalize_blocks(&mut hist, DIRECTIONS);
    normalize_blocks(&mut cooc, DIRECTIONS * DIRECTIONS);
    (hist, cooc)
}

fn edge_spectrum(img: &LabImage, grad: &Gradient) -> Vec<f64> {
    // Area-average the edge magnitude onto a 16x16 grid.
    let mut cells = vec![Complex::new(0.0, 0.0); FFT_SIDE * FFT_SIDE];
    for gy in 0..FFT_SIDE {
        let y0 = gy * img.height / FFT_SIDE;
        let y1 = ((gy + 1) * img.height / FFT_SIDE).max(y0 + 1);
        for gx in 0..FFT_SIDE {
            let x0 = gx * img.width / FFT_SIDE;
            let x1 = ((gx + 1) * img.width / FFT_SIDE).max(x0 + 1);
            let mut sum = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += grad.magnitude[y * img.width + x];
                }
            }
            cells[gy * FFT_SIDE + gx].re = sum / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }

    let fft = FftPlanner::new().plan_fft_forward(FFT_SIDE);
    for row in cells.chunks_mut(FFT_SIDE) {
        fft.process(row);
    }
    let mut column = vec![Complex::new(0.0, 0.0); FFT_SIDE];
    for x in 0..FFT_SIDE {
        for y in 0..FFT_SIDE {
            column[y] = cells[y * FFT_SIDE + x];
        }
        fft.process(&mut column);
        for y in 0..FFT_SIDE {
            cells[y * FFT_SIDE + x] = column[y];
        }
    }

    // Real input: columns 8..16 mirror 0..8, so keep the first half.
    let scale = (FFT_SIDE * FFT_SIDE) as f64;
    let mut out = Vec::with_capacity(FFT_SIDE * FFT_SIDE / 2);
    for y in 0..FFT_SIDE {
        for x in 0..FFT_SIDE / 2 {
            out.push(cells[y * FFT_SIDE + x].norm() / scale);
        }
    }
    out
}

fn brightness_bin(delta: f64) -> usize {
    BRIGHTNESS_EDGES.iter().take_while(|&&e| delta >= e).count()
}

fn relative_brightness(img: &LabImage) -> Vec<f64> {
    let bins = BRIGHTNESS_EDGES.len() + 1;
    let mut hist = vec![0.0; ZONES * bins];
    let (w, h) = (img.width, img.height);
    for y in 0..h {
        for x in 0..w {
            let here = img.lightness(x, y);
            let z = img.zones[y * w + x];
            if x + 1 < w {
                hist[z * bins + brightness_bin(img.lightness(x + 1, y) - here)] += 1.0;
            }
            if y + 1 < h {
                hist[z * bins + brightness_bin(img.lightness(x, y + 1) - here)] += 1.0;
            }
        }
    }
    normalize_blocks(&mut hist, bins);
    hist
}

/// Computes the six built-in descriptors for an RGB raster.
pub fn extract_features(raster: &RgbImage) -> Result<BTreeMap<String, Vec<f64>>> {
    let (w, h) = raster.dimensions();
    if w < MIN_SIDE || h < MIN_SIDE {
        return Err(Error::DegenerateInput(format!(
            "raster is {w}x{h}, need at least {MIN_SIDE}x{MIN_SIDE}"
        )));
    }
    let img = LabImage::new(raster);
    let grad = sobel(&img);
    let (mean, moments) = lab_statistics(&img);
    let (hist, cooc) = edge_histograms(&img, &grad);

    let mut out = BTreeMap::new();
    out.insert(LAB_MEAN.to_owned(), mean);
    out.insert(LAB_MOMENTS.to_owned(), moments);
    out.insert(SOBEL_HISTOGRAM.to_owned(), hist);
    out.insert(SOBEL_COOCCURRENCE.to_owned(), cooc);
    out.insert(SOBEL_FFT.to_owned(), edge_spectrum(&img, &grad));
    out.insert(RELATIVE_BRIGHTNESS.to_owned(), relative_brightness(&img));
    Ok(out)
}
