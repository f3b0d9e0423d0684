//! Minimal 8-bit RGB raster with hard-edged drawing primitives.
//!
//! A pixel `(i, j)` covers `[i, i+1) × [j, j+1)`; coverage tests use the pixel
//! center `(i + 0.5, j + 0.5)`. There is no anti-aliasing, so output depends
//! only on IEEE arithmetic and is bit-reproducible.

use alloc::vec;
use alloc::vec::Vec;

use crate::font;
use crate::geometry::Pixel;

pub type Rgb = [u8; 3];

/// Integer pixel rectangle, `x0..x1` × `y0..y1` (exclusive upper bounds).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl Rect {
    pub fn width(&self) -> i64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> i64 {
        self.y1 - self.y0
    }

    pub fn intersects(&self, o: &Rect) -> bool {
        self.x0 < o.x1 && o.x0 < self.x1 && self.y0 < o.y1 && o.y0 < self.y1
    }

    pub fn translated(&self, dx: i64, dy: i64) -> Rect {
        Rect {
            x0: self.x0 + dx,
            y0: self.y0 + dy,
            x1: self.x1 + dx,
            y1: self.y1 + dy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, fill: Rgb) -> Self {
        let mut data = vec![0u8; width as usize * height as usize * 3];
        for px in data.chunks_exact_mut(3) {
            px.copy_from_slice(&fill);
        }
        RgbImage { width, height, data }
    }

    /// Wraps packed row-major RGB bytes; `None` if the length does not match.
    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Option<Self> {
        (data.len() == width as usize * height as usize * 3).then_some(RgbImage { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    fn offset(&self, x: i64, y: i64) -> Option<usize> {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return None;
        }
        Some((y as usize * self.width as usize + x as usize) * 3)
    }

    pub fn get(&self, x: i64, y: i64) -> Option<Rgb> {
        self.offset(x, y).map(|o| [self.data[o], self.data[o + 1], self.data[o + 2]])
    }

    /// Writes a pixel; out-of-bounds writes are dropped.
    pub fn put(&mut self, x: i64, y: i64, c: Rgb) {
        if let Some(o) = self.offset(x, y) {
            self.data[o..o + 3].copy_from_slice(&c);
        }
    }

    /// Pixel index range covering `[lo, hi]`, clipped to `0..limit`.
    fn clip_span(lo: f64, hi: f64, limit: u32) -> Option<(i64, i64)> {
        if !(lo.is_finite() && hi.is_finite()) {
            return None;
        }
        let a = libm::floor(lo).max(0.0);
        let b = libm::ceil(hi).min(limit as f64);
        if a >= b {
            return None;
        }
        Some((a as i64, b as i64))
    }

    /// Fills every pixel whose center lies within `width / 2` (at least 0.5) of
    /// the segment `a`–`b`.
    pub fn fill_segment(&mut self, a: Pixel, b: Pixel, width: f64, c: Rgb) {
        let hw = (width / 2.0).max(0.5);
        let Some((x0, x1)) = Self::clip_span(a.u.min(b.u) - hw, a.u.max(b.u) + hw, self.width) else {
            return;
        };
        let Some((y0, y1)) = Self::clip_span(a.v.min(b.v) - hw, a.v.max(b.v) + hw, self.height) else {
            return;
        };
        let (dx, dy) = (b.u - a.u, b.v - a.v);
        let len2 = dx * dx + dy * dy;
        let hw2 = hw * hw;
        for y in y0..y1 {
            let py = y as f64 + 0.5;
            for x in x0..x1 {
                let px = x as f64 + 0.5;
                let t = if len2 > 0.0 {
                    (((px - a.u) * dx + (py - a.v) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (ex, ey) = (px - (a.u + t * dx), py - (a.v + t * dy));
                if ex * ex + ey * ey <= hw2 {
                    self.put(x, y, c);
                }
            }
        }
    }

    pub fn fill_disk(&mut self, center: Pixel, radius: f64, c: Rgb) {
        let Some((x0, x1)) = Self::clip_span(center.u - radius, center.u + radius, self.width) else {
            return;
        };
        let Some((y0, y1)) = Self::clip_span(center.v - radius, center.v + radius, self.height) else {
            return;
        };
        let r2 = radius * radius;
        for y in y0..y1 {
            let dy = y as f64 + 0.5 - center.v;
            for x in x0..x1 {
                let dx = x as f64 + 0.5 - center.u;
                if dx * dx + dy * dy <= r2 {
                    self.put(x, y, c);
                }
            }
        }
    }

    /// Fills a convex polygon (either winding) by pixel-center containment.
    pub fn fill_convex_polygon(&mut self, pts: &[Pixel], c: Rgb) {
        if pts.len() < 3 {
            return;
        }
        let (mut lo_u, mut hi_u, mut lo_v, mut hi_v) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in pts {
            lo_u = lo_u.min(p.u);
            hi_u = hi_u.max(p.u);
            lo_v = lo_v.min(p.v);
            hi_v = hi_v.max(p.v);
        }
        let Some((x0, x1)) = Self::clip_span(lo_u, hi_u, self.width) else {
            return;
        };
        let Some((y0, y1)) = Self::clip_span(lo_v, hi_v, self.height) else {
            return;
        };
        let n = pts.len();
        for y in y0..y1 {
            let py = y as f64 + 0.5;
            for x in x0..x1 {
                let px = x as f64 + 0.5;
                let (mut pos, mut neg) = (false, false);
                for i in 0..n {
                    let a = pts[i];
                    let b = pts[(i + 1) % n];
                    let cross = (b.u - a.u) * (py - a.v) - (b.v - a.v) * (px - a.u);
                    if cross > 0.0 {
                        pos = true;
                    } else if cross < 0.0 {
                        neg = true;
                    }
                }
                if !(pos && neg) {
                    self.put(x, y, c);
                }
            }
        }
    }

    /// Draws `text` with its top-left corner at `(x, y)` and returns the
    /// occupied rectangle. Characters without a glyph leave a blank cell.
    pub fn draw_text(&mut self, x: i64, y: i64, text: &str, scale: u32, c: Rgb) -> Rect {
        let s = scale.max(1) as i64;
        let advance = (font::GLYPH_WIDTH + font::GLYPH_SPACING) as i64 * s;
        for (i, ch) in text.chars().enumerate() {
            let Some(rows) = font::glyph(ch) else {
                continue;
            };
            let gx = x + i as i64 * advance;
            for (r, bits) in rows.iter().enumerate() {
                for col in 0..font::GLYPH_WIDTH as i64 {
                    if bits & (0x10 >> col) != 0 {
                        for oy in 0..s {
                            for ox in 0..s {
                                self.put(gx + col * s + ox, y + r as i64 * s + oy, c);
                            }
                        }
                    }
                }
            }
        }
        let (w, h) = font::text_size(text, scale.max(1));
        Rect {
            x0: x,
            y0: y,
            x1: x + w as i64,
            y1: y + h as i64,
        }
    }

    /// Number of pixels whose value differs from `other`. Panics on size mismatch.
    pub fn count_diff(&self, other: &RgbImage) -> usize {
        assert_eq!((self.width, self.height), (other.width, other.height));
        self.data.chunks_exact(3).zip(other.data.chunks_exact(3)).filter(|(a, b)| a != b).count()
    }
}
