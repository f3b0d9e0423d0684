//! The coordinate-frame mark: three colored axes from the frame origin with
//! equally spaced ticks and numeric labels, axis letters, and labeled
//! keypoint disks.
//!
//! Draw order is fixed: tick strokes, tick labels, axis lines, axis letters,
//! then keypoints. Because everything drawn without the scale is drawn after
//! the scale ink, turning the scale off only ever removes ink.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::font;
use crate::geometry::{Axis, CameraModel, CoordinateFrame, Pixel, Vec3, MIN_DEPTH};
use crate::raster::{Rect, Rgb, RgbImage};

pub const DEFAULT_AXIS_COLORS: [Rgb; 3] = [[220, 30, 30], [20, 160, 40], [30, 60, 220]];
pub const KEYPOINT_COLOR: Rgb = [255, 0, 200];
pub const KEYPOINT_TEXT_COLOR: Rgb = [10, 10, 10];
pub const KEYPOINT_RADIUS: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OverlayError {
    #[error("frame origin projects behind the camera")]
    FrameNotVisible,
    #[error("keypoint {0} projects behind the camera")]
    KeypointBehindCamera(String),
    #[error("invalid overlay style: {0}")]
    InvalidStyle(&'static str),
    #[error("image is {image:?} but camera expects {camera:?}")]
    SizeMismatch { image: (u32, u32), camera: (u32, u32) },
    #[error("keypoint label {0:?} is empty or duplicated")]
    BadLabel(String),
}

/// How the mark is drawn.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OverlayStyle {
    /// Ticks on each side of the origin, per axis.
    pub ticks_per_direction: u32,
    /// `false` draws axes and axis letters only: no ticks, no numbers.
    pub show_scale: bool,
    /// X, Y, Z colors.
    pub axis_colors: [Rgb; 3],
    pub line_width: u32,
    pub tick_length: u32,
    pub label_height: u32,
    /// Draw the negative half of each axis.
    pub negative_extent: bool,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        OverlayStyle {
            ticks_per_direction: 5,
            show_scale: true,
            axis_colors: DEFAULT_AXIS_COLORS,
            line_width: 2,
            tick_length: 8,
            label_height: 14,
            negative_extent: true,
        }
    }
}

impl OverlayStyle {
    pub fn validate(&self) -> Result<(), OverlayError> {
        let c = &self.axis_colors;
        if c[0] == c[1] || c[1] == c[2] || c[0] == c[2] {
            return Err(OverlayError::InvalidStyle("axis colors must be pairwise distinct"));
        }
        if self.line_width < 1 {
            return Err(OverlayError::InvalidStyle("line_width must be at least 1"));
        }
        if self.tick_length < 2 {
            return Err(OverlayError::InvalidStyle("tick_length must be at least 2"));
        }
        if self.label_height < 6 {
            return Err(OverlayError::InvalidStyle("label_height must be at least 6"));
        }
        Ok(())
    }

    pub fn color(&self, axis: Axis) -> Rgb {
        self.axis_colors[axis.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Keypoint {
    pub label: String,
    /// Frame coordinates in world units.
    pub position: Vec3,
}

impl Keypoint {
    pub fn new(label: impl Into<String>, position: Vec3) -> Self {
        Keypoint { label: label.into(), position }
    }
}

/// A raster plus everything needed to draw the mark on it.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub image: RgbImage,
    pub camera: CameraModel,
    pub frame: CoordinateFrame,
    pub style: OverlayStyle,
    pub keypoints: Vec<Keypoint>,
    /// `false` skips the axes entirely (keypoints only).
    pub show_axes: bool,
}

impl AnnotatedImage {
    pub fn new(image: RgbImage, camera: CameraModel, frame: CoordinateFrame, style: OverlayStyle, keypoints: Vec<Keypoint>) -> Result<Self, OverlayError> {
        let a = AnnotatedImage {
            image,
            camera,
            frame,
            style,
            keypoints,
            show_axes: true,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<(), OverlayError> {
        let img = (self.image.width(), self.image.height());
        let cam = (self.camera.width(), self.camera.height());
        if img != cam {
            return Err(OverlayError::SizeMismatch { image: img, camera: cam });
        }
        self.style.validate()?;
        for (i, k) in self.keypoints.iter().enumerate() {
            if k.label.is_empty() || self.keypoints[..i].iter().any(|o| o.label == k.label) {
                return Err(OverlayError::BadLabel(k.label.clone()));
            }
        }
        Ok(())
    }

    /// Axes (when enabled) followed by keypoints.
    pub fn render(&self) -> Result<RgbImage, OverlayError> {
        let mut out = self.image.clone();
        if self.show_axes {
            draw_axes(&mut out, &self.camera, &self.frame, &self.style)?;
        }
        draw_keypoints(&mut out, &self.camera, &self.frame, &self.style, &self.keypoints)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickPoint {
    pub axis: Axis,
    pub k: i32,
    pub world: Vec3,
}

/// World positions of every tick: `origin + k · unit_length · axis` for
/// `k ∈ [-n, n] \ {0}`, negative `k` only with `negative_extent`.
pub fn tick_points(frame: &CoordinateFrame, style: &OverlayStyle) -> Vec<TickPoint> {
    let n = style.ticks_per_direction as i32;
    let mut out = Vec::new();
    for axis in Axis::ALL {
        let dir = frame.axis(axis);
        let lo = if style.negative_extent { -n } else { 1 };
        for k in lo..=n {
            if k == 0 {
                continue;
            }
            out.push(TickPoint {
                axis,
                k,
                world: frame.origin() + dir * (k as f64 * frame.unit_length()),
            });
        }
    }
    out
}

/// Tick value text: integer when `unit_length` is integral, else one decimal.
pub fn tick_label(k: i32, unit_length: f64) -> String {
    let v = k as f64 * unit_length;
    if libm::trunc(unit_length) == unit_length && libm::fabs(v) < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{:.1}", v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrawnTick {
    pub k: i32,
    pub world: Vec3,
    /// Center of the tick stroke.
    pub center: Pixel,
    pub label: Option<(String, Rect)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxisLayout {
    pub axis: Axis,
    /// Far end of the positive half-axis, if any of it is visible.
    pub positive_end: Option<Pixel>,
    pub negative_end: Option<Pixel>,
    pub ticks: Vec<DrawnTick>,
    pub letter: Option<Rect>,
}

/// Where things landed when the mark was drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct AxesLayout {
    pub origin: Pixel,
    pub axes: Vec<AxisLayout>,
}

pub fn render_axes(base: &AnnotatedImage) -> Result<RgbImage, OverlayError> {
    render_axes_with_layout(base).map(|(img, _)| img)
}

pub fn render_axes_with_layout(base: &AnnotatedImage) -> Result<(RgbImage, AxesLayout), OverlayError> {
    base.validate()?;
    let mut out = base.image.clone();
    let layout = draw_axes(&mut out, &base.camera, &base.frame, &base.style)?;
    Ok((out, layout))
}

fn round_i(x: f64) -> i64 {
    libm::floor(x + 0.5) as i64
}

fn visible_projection(camera: &CameraModel, p: Vec3) -> Option<Pixel> {
    if camera.depth(p) > MIN_DEPTH {
        camera.project(p).ok()
    } else {
        None
    }
}

/// Draws the mark in place and reports its layout.
pub fn draw_axes(out: &mut RgbImage, camera: &CameraModel, frame: &CoordinateFrame, style: &OverlayStyle) -> Result<AxesLayout, OverlayError> {
    style.validate()?;
    let origin = visible_projection(camera, frame.origin()).ok_or(OverlayError::FrameNotVisible)?;
    let n = style.ticks_per_direction as i32;
    let unit = frame.unit_length();
    let lw = style.line_width as f64;
    let tl = style.tick_length as f64;
    let scale = font::scale_for_height(style.label_height);

    let mut axes = Vec::new();
    for axis in Axis::ALL {
        let dir = frame.axis(axis);
        let at = |k: i32| frame.origin() + dir * (k as f64 * unit);

        // Walk outward until a tick falls behind the camera.
        let walk = |sign: i32| -> (Option<Pixel>, Vec<(i32, Vec3, Pixel)>) {
            let mut ticks = Vec::new();
            for step in 1..=n {
                let k = sign * step;
                match visible_projection(camera, at(k)) {
                    Some(px) => ticks.push((k, at(k), px)),
                    None => break,
                }
            }
            let end = match ticks.last() {
                Some(t) => Some(t.2),
                None if n == 0 => visible_projection(camera, at(sign)),
                None => None,
            };
            (end, ticks)
        };
        let (positive_end, pos_ticks) = walk(1);
        let (negative_end, neg_ticks) = if style.negative_extent { walk(-1) } else { (None, Vec::new()) };

        // Image-space direction of the axis; ticks are drawn perpendicular to it.
        let span = positive_end
            .map(|e| (e.u - origin.u, e.v - origin.v))
            .or_else(|| negative_end.map(|e| (origin.u - e.u, origin.v - e.v)))
            .unwrap_or((1.0, 0.0));
        let len = libm::hypot(span.0, span.1);
        let (du, dv) = if len > 1e-9 { (span.0 / len, span.1 / len) } else { (1.0, 0.0) };
        let (mut pu, mut pv) = (-dv, du);
        if pu < 0.0 || (pu == 0.0 && pv < 0.0) {
            pu = -pu;
            pv = -pv;
        }

        let color = style.color(axis);
        let mut ticks = Vec::new();
        for (k, world, center) in neg_ticks.into_iter().rev().chain(pos_ticks) {
            let mut label = None;
            if style.show_scale {
                let a = Pixel::new(center.u - pu * tl / 2.0, center.v - pv * tl / 2.0);
                let b = Pixel::new(center.u + pu * tl / 2.0, center.v + pv * tl / 2.0);
                out.fill_segment(a, b, lw, color);
                let text = tick_label(k, unit);
                let (w, h) = font::text_size(&text, scale);
                let gap = tl / 2.0 + 3.0 + (w.max(h) as f64) / 2.0;
                let cu = center.u + pu * gap;
                let cv = center.v + pv * gap;
                let rect = out.draw_text(round_i(cu - w as f64 / 2.0), round_i(cv - h as f64 / 2.0), &text, scale, color);
                label = Some((text, rect));
            }
            ticks.push(DrawnTick { k, world, center, label });
        }
        axes.push(AxisLayout {
            axis,
            positive_end,
            negative_end,
            ticks,
            letter: None,
        });
    }

    for a in &axes {
        let color = style.color(a.axis);
        if let Some(e) = a.positive_end {
            out.fill_segment(origin, e, lw, color);
        }
        if let Some(e) = a.negative_end {
            out.fill_segment(origin, e, lw, color);
        }
    }

    for a in axes.iter_mut() {
        let Some(end) = a.positive_end else { continue };
        let (du, dv) = {
            let (x, y) = (end.u - origin.u, end.v - origin.v);
            let l = libm::hypot(x, y);
            if l > 1e-9 {
                (x / l, y / l)
            } else {
                (1.0, 0.0)
            }
        };
        let (w, h) = font::text_size(a.axis.name(), scale);
        let gap = 6.0 + (w.max(h) as f64) / 2.0;
        let cu = end.u + du * gap;
        let cv = end.v + dv * gap;
        let color = style.color(a.axis);
        a.letter = Some(out.draw_text(round_i(cu - w as f64 / 2.0), round_i(cv - h as f64 / 2.0), a.axis.name(), scale, color));
    }

    Ok(AxesLayout { origin, axes })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointLayout {
    pub label: String,
    pub center: Pixel,
    pub label_rect: Rect,
}

pub fn render_keypoints(base: &AnnotatedImage) -> Result<RgbImage, OverlayError> {
    render_keypoints_with_layout(base).map(|(img, _)| img)
}

pub fn render_keypoints_with_layout(base: &AnnotatedImage) -> Result<(RgbImage, Vec<KeypointLayout>), OverlayError> {
    base.validate()?;
    let mut out = base.image.clone();
    let layout = draw_keypoints(&mut out, &base.camera, &base.frame, &base.style, &base.keypoints)?;
    Ok((out, layout))
}

/// Filled disk per keypoint with its label to the right. A label closer than
/// `label_height` to the top edge moves below the disk; a label overlapping an
/// earlier one moves down until it no longer does.
pub fn draw_keypoints(
    out: &mut RgbImage,
    camera: &CameraModel,
    frame: &CoordinateFrame,
    style: &OverlayStyle,
    keypoints: &[Keypoint],
) -> Result<Vec<KeypointLayout>, OverlayError> {
    let mut centers = Vec::with_capacity(keypoints.len());
    for k in keypoints {
        let px = visible_projection(camera, frame.frame_to_world(k.position)).ok_or_else(|| OverlayError::KeypointBehindCamera(k.label.clone()))?;
        centers.push(px);
    }
    let scale = font::scale_for_height(style.label_height);
    let r = KEYPOINT_RADIUS.max(style.line_width as f64 + 2.0);
    let mut layout: Vec<KeypointLayout> = Vec::with_capacity(keypoints.len());
    for (k, &c) in keypoints.iter().zip(&centers) {
        out.fill_disk(c, r, KEYPOINT_COLOR);
        let (w, h) = font::text_size(&k.label, scale);
        let x = round_i(c.u + r + 2.0);
        let mut y = round_i(c.v - h as f64 / 2.0);
        if y < style.label_height as i64 {
            y = round_i(c.v + r + 2.0);
        }
        let mut rect = Rect {
            x0: x,
            y0: y,
            x1: x + w as i64,
            y1: y + h as i64,
        };
        while layout.iter().any(|l| l.label_rect.intersects(&rect)) {
            rect = rect.translated(0, h as i64 + 2);
        }
        out.draw_text(rect.x0, rect.y0, &k.label, scale, KEYPOINT_TEXT_COLOR);
        layout.push(KeypointLayout {
            label: k.label.clone(),
            center: c,
            label_rect: rect,
        });
    }
    Ok(layout)
}
