//! Minimal PNG line charts: identity drift over frame pairs and ROC curves.
//! No text is drawn; axes are the plot frame, and the data ranges are
//! returned alongside the image so callers can label them elsewhere.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{PiaError, Result};
use crate::identity::DriftSeries;

const MARGIN: u32 = 24;
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([40, 40, 40]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const LINE: Rgb<u8> = Rgb([31, 119, 180]);
/// Line colours for successive drift series.
pub const SERIES_COLOURS: [Rgb<u8>; 3] = [LINE, Rgb([44, 160, 44]), Rgb([148, 103, 189])];
const ACCENT: Rgb<u8> = Rgb([214, 39, 40]);
const MASKED: Rgb<u8> = Rgb([160, 160, 160]);

/// Maps data coordinates into the plot area of an image.
struct Canvas {
    img: RgbImage,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl Canvas {
    fn new(width: u32, height: u32, x_range: (f64, f64), y_range: (f64, f64)) -> Self {
        let mut img = RgbImage::from_pixel(width, height, BACKGROUND);
        let (x0, y0, x1, y1) = (MARGIN, MARGIN, width - MARGIN, height - MARGIN);
        for k in 1..5 {
            let y = y0 + (y1 - y0) * k / 5;
            for x in x0..=x1 {
                img.put_pixel(x, y, GRID);
            }
        }
        for x in x0..=x1 {
            img.put_pixel(x, y0, AXIS);
            img.put_pixel(x, y1, AXIS);
        }
        for y in y0..=y1 {
            img.put_pixel(x0, y, AXIS);
            img.put_pixel(x1, y, AXIS);
        }
        Self { img, x_range, y_range }
    }

    fn to_px(&self, x: f64, y: f64) -> (f64, f64) {
        let (w, h) = (self.img.width() as f64, self.img.height() as f64);
        let m = MARGIN as f64;
        let span = |r: (f64, f64)| if r.1 > r.0 { r.1 - r.0 } else { 1.0 };
        let px = m + (x - self.x_range.0) / span(self.x_range) * (w - 2.0 * m);
        let py = h - m - (y - self.y_range.0) / span(self.y_range) * (h - 2.0 * m);
        (px, py)
    }

    fn dot(&mut self, px: f64, py: f64, c: Rgb<u8>) {
        let (x, y) = (px.round(), py.round());
        if x >= 0.0 && y >= 0.0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
        let (p, q) = (self.to_px(a.0, a.1), self.to_px(b.0, b.1));
        let steps = ((q.0 - p.0).abs().max((q.1 - p.1).abs()).ceil() as usize).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            self.dot(p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1), c);
        }
    }

    fn marker(&mut self, x: f64, y: f64, c: Rgb<u8>) {
        let (px, py) = self.to_px(x, y);
        for dy in -2..=2 {
            for dx in -2..=2 {
                self.dot(px + dx as f64, py + dy as f64, c);
            }
        }
    }
}

/// Consecutive-pair L2 drift of one or more videos (drawn in turn with
/// [`SERIES_COLOURS`]) with a dashed threshold line. Spikes above the
/// threshold get markers; pairs with a cleared mask bit are drawn grey.
pub fn drift_plot(series: &[DriftSeries], threshold: f64, width: u32, height: u32) -> Result<RgbImage> {
    if series.is_empty() || series.iter().any(DriftSeries::is_empty) {
        return Err(PiaError::EmptySeries("nothing to plot".into()));
    }
    let n = series.iter().map(DriftSeries::len).max().unwrap_or(0);
    let y_max = series
        .iter()
        .flat_map(|s| s.l2.iter().copied())
        .filter(|v| v.is_finite())
        .fold(threshold, f64::max)
        * 1.1;
    let x_end = (n.max(2) - 1) as f64;
    let mut c = Canvas::new(width, height, (0.0, x_end), (0.0, y_max));
    let mut x = 0.0;
    while x < x_end {
        c.line((x, threshold), ((x + 0.5).min(x_end), threshold), ACCENT);
        x += 1.0;
    }
    for (k, s) in series.iter().enumerate() {
        let colour = SERIES_COLOURS[k % SERIES_COLOURS.len()];
        for t in 1..s.len() {
            let col = if s.mask[t - 1] && s.mask[t] { colour } else { MASKED };
            c.line(((t - 1) as f64, s.l2[t - 1]), (t as f64, s.l2[t]), col);
        }
        for t in 0..s.len() {
            if s.mask[t] && s.l2[t] > threshold {
                c.marker(t as f64, s.l2[t], ACCENT);
            }
        }
    }
    Ok(c.img)
}

/// ROC curve from `(fpr, tpr)` points with the chance diagonal.
pub fn roc_plot(points: &[(f64, f64)], width: u32, height: u32) -> Result<RgbImage> {
    if points.len() < 2 {
        return Err(PiaError::InvalidInput("a ROC curve needs at least two points".into()));
    }
    let mut c = Canvas::new(width, height, (0.0, 1.0), (0.0, 1.0));
    c.line((0.0, 0.0), (1.0, 1.0), GRID);
    for w in points.windows(2) {
        c.line(w[0], w[1], LINE);
    }
    Ok(c.img)
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| PiaError::Io(std::io::Error::other(e.to_string())))
}
