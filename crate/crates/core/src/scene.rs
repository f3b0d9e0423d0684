//! Synthetic furniture scenes with exact ground truth.
//!
//! Objects are unions of axis-aligned cuboids expressed in frame coordinates
//! (centimeters). The frame origin sits at the object's back-left-bottom
//! corner; X runs along the width, Y from the back toward the front, Z up.
//!
//! Keypoint labels are fixed per category:
//!
//! | label | chair | table | sofa | cabinet |
//! |---|---|---|---|---|
//! | A | back-left foot (origin) | back-left foot (origin) | back-left-bottom (origin) | back-left-bottom (origin) |
//! | B | back-right foot | back-right foot | back-right-bottom | back-right-bottom |
//! | C | front-right foot | front-right foot | front-right-bottom | front-right-bottom |
//! | D | front-left foot | front-left foot | front-left-bottom | front-left-bottom |
//! | E | front-left leg top | top back-left corner | left armrest front-top | top back-left |
//! | F | seat front-right top | top back-right corner | right armrest front-top | top back-right |
//! | G | backrest top-left | top front-right corner | backrest top-left | top front-right |
//! | H | backrest top-right | top front-left corner | backrest top-right | top front-left |

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{build_frame, CameraModel, CoordinateFrame, GeometryError, Handedness, Pixel, Vec3, MIN_DEPTH};
use crate::overlay::{Keypoint, OverlayStyle};
use crate::raster::{Rgb, RgbImage};

pub const BACKGROUND: Rgb = [235, 235, 235];
pub const EDGE_COLOR: Rgb = [40, 40, 40];
pub const DEFAULT_WIDTH: u32 = 640;
pub const DEFAULT_HEIGHT: u32 = 480;
pub const DEFAULT_HFOV_DEG: f64 = 50.0;
/// Camera elevations cycled over views, degrees.
pub const VIEW_ELEVATIONS_DEG: [f64; 2] = [20.0, 40.0];
/// Azimuth of the first view, degrees from the frame X axis.
pub const FIRST_AZIMUTH_DEG: f64 = 35.0;
/// Camera distance as a multiple of the object diagonal.
pub const CAMERA_DISTANCE_FACTOR: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("object is not entirely in front of the camera")]
    ObjectBehindCamera,
    #[error("entry needs at least 2 views, got {0}")]
    TooFewViews(usize),
    #[error("views of one entry must share one frame")]
    FrameMismatch,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Category {
    Chair,
    Table,
    Sofa,
    Cabinet,
}

impl Category {
    /// Table column order.
    pub const ALL: [Category; 4] = [Category::Chair, Category::Table, Category::Sofa, Category::Cabinet];

    pub fn name(self) -> &'static str {
        match self {
            Category::Chair => "chair",
            Category::Table => "table",
            Category::Sofa => "sofa",
            Category::Cabinet => "cabinet",
        }
    }

    pub fn parse(s: &str) -> Option<Category> {
        Category::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(s.trim()))
    }

    /// World units per tick used for generated entries.
    pub fn unit_length(self) -> f64 {
        match self {
            Category::Sofa => 20.0,
            _ => 10.0,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Axis-aligned box in frame coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Box3D {
    pub min: Vec3,
    pub max: Vec3,
}

impl Box3D {
    /// `None` unless `min <= max` componentwise and all values are finite.
    pub fn new(min: Vec3, max: Vec3) -> Option<Self> {
        let ok = min.is_finite() && max.is_finite() && min.x <= max.x && min.y <= max.y && min.z <= max.z;
        ok.then_some(Box3D { min, max })
    }

    /// Box from two opposite corners in any order.
    pub fn from_corners(a: Vec3, b: Vec3) -> Self {
        Box3D {
            min: a.component_min(b),
            max: a.component_max(b),
        }
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y && p.z >= self.min.z && p.z <= self.max.z
    }

    pub fn contains_box(&self, o: &Box3D) -> bool {
        self.contains(o.min) && self.contains(o.max)
    }

    pub fn translated(&self, d: Vec3) -> Box3D {
        Box3D {
            min: self.min + d,
            max: self.max + d,
        }
    }

    /// The eight corners; bit 0 selects max X, bit 1 max Y, bit 2 max Z.
    pub fn corners(&self) -> [Vec3; 8] {
        let mut out = [Vec3::ZERO; 8];
        for (i, c) in out.iter_mut().enumerate() {
            *c = Vec3::new(
                if i & 1 == 0 { self.min.x } else { self.max.x },
                if i & 2 == 0 { self.min.y } else { self.max.y },
                if i & 4 == 0 { self.min.z } else { self.max.z },
            );
        }
        out
    }

    /// Whether `p` lies on the boundary within `tol`.
    pub fn on_surface(&self, p: Vec3, tol: f64) -> bool {
        let grown = Box3D {
            min: self.min - Vec3::new(tol, tol, tol),
            max: self.max + Vec3::new(tol, tol, tol),
        };
        if !grown.contains(p) {
            return false;
        }
        let near = |a: f64, b: f64| libm::fabs(a - b) <= tol;
        near(p.x, self.min.x) || near(p.x, self.max.x) || near(p.y, self.min.y) || near(p.y, self.max.y) || near(p.z, self.min.z) || near(p.z, self.max.z)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Part {
    pub name: String,
    #[cfg_attr(feature = "serde", serde(rename = "box"))]
    pub bounds: Box3D,
    pub color: Rgb,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SceneObject {
    pub category: Category,
    /// Named dimensions in centimeters.
    pub dims: BTreeMap<String, f64>,
    pub parts: Vec<Part>,
    pub gt_keypoints: Vec<Keypoint>,
    pub gt_box: Box3D,
}

impl SceneObject {
    pub fn keypoint(&self, label: &str) -> Option<Vec3> {
        self.gt_keypoints.iter().find(|k| k.label == label).map(|k| k.position)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.gt_keypoints.iter().map(|k| k.label.as_str())
    }

    pub fn diagonal(&self) -> f64 {
        self.gt_box.diagonal()
    }
}

/// Componentwise min/max over all part corners. `None` for an empty part list.
pub fn bounding_box(parts: &[Part]) -> Option<Box3D> {
    let first = parts.first()?;
    let mut b = first.bounds;
    for p in &parts[1..] {
        b.min = b.min.component_min(p.bounds.min);
        b.max = b.max.component_max(p.bounds.max);
    }
    Some(b)
}

struct Builder {
    category: Category,
    dims: BTreeMap<String, f64>,
    parts: Vec<Part>,
    keypoints: Vec<Keypoint>,
}

impl Builder {
    fn new(category: Category) -> Self {
        Builder {
            category,
            dims: BTreeMap::new(),
            parts: Vec::new(),
            keypoints: Vec::new(),
        }
    }

    fn dim(&mut self, rng: &mut ChaCha8Rng, name: &str, lo: i32, hi: i32) -> f64 {
        let v = rng.random_range(lo..=hi) as f64;
        self.dims.insert(name.to_string(), v);
        v
    }

    fn part(&mut self, name: &str, min: [f64; 3], max: [f64; 3], color: Rgb) {
        self.parts.push(Part {
            name: name.to_string(),
            bounds: Box3D::from_corners(min.into(), max.into()),
            color,
        });
    }

    fn keypoints(&mut self, pts: [[f64; 3]; 8]) {
        for (i, p) in pts.iter().enumerate() {
            let label = char::from(b'A' + i as u8).to_string();
            self.keypoints.push(Keypoint::new(label, Vec3::from(*p)));
        }
    }

    fn finish(self) -> SceneObject {
        let gt_box = bounding_box(&self.parts).expect("every category has parts");
        SceneObject {
            category: self.category,
            dims: self.dims,
            parts: self.parts,
            gt_keypoints: self.keypoints,
            gt_box,
        }
    }
}

fn category_seed(category: Category, seed: u64) -> u64 {
    seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(category as u64 + 1))
}

/// Deterministic object for `(category, seed)`; integer dimensions drawn from
/// per-category ranges.
pub fn generate_object(category: Category, seed: u64) -> SceneObject {
    let mut rng = ChaCha8Rng::seed_from_u64(category_seed(category, seed));
    let mut b = Builder::new(category);
    match category {
        Category::Chair => {
            let wood: Rgb = [176, 122, 72];
            let seat_c: Rgb = [196, 150, 96];
            let w = b.dim(&mut rng, "seat_width", 40, 55);
            let d = b.dim(&mut rng, "seat_depth", 40, 50);
            let l = b.dim(&mut rng, "leg_height", 35, 50);
            let t = b.dim(&mut rng, "seat_thickness", 3, 6);
            let bh = b.dim(&mut rng, "back_height", 35, 50);
            let s = b.dim(&mut rng, "leg_size", 3, 5);
            let bt = b.dim(&mut rng, "back_thickness", 3, 5);
            b.part("leg_back_left", [0.0, 0.0, 0.0], [s, s, l], wood);
            b.part("leg_back_right", [w - s, 0.0, 0.0], [w, s, l], wood);
            b.part("leg_front_right", [w - s, d - s, 0.0], [w, d, l], wood);
            b.part("leg_front_left", [0.0, d - s, 0.0], [s, d, l], wood);
            b.part("seat", [0.0, 0.0, l], [w, d, l + t], seat_c);
            b.part("back", [0.0, 0.0, l + t], [w, bt, l + t + bh], wood);
            b.keypoints([
                [0.0, 0.0, 0.0],
                [w, 0.0, 0.0],
                [w, d, 0.0],
                [0.0, d, 0.0],
                [0.0, d, l],
                [w, d, l + t],
                [0.0, 0.0, l + t + bh],
                [w, 0.0, l + t + bh],
            ]);
        }
        Category::Table => {
            let wood: Rgb = [150, 105, 70];
            let top_c: Rgb = [170, 128, 88];
            let w = b.dim(&mut rng, "top_width", 80, 140);
            let d = b.dim(&mut rng, "top_depth", 50, 90);
            let h = b.dim(&mut rng, "height", 70, 80);
            let t = b.dim(&mut rng, "top_thickness", 3, 6);
            let s = b.dim(&mut rng, "leg_size", 4, 7);
            let lh = h - t;
            b.part("leg_back_left", [0.0, 0.0, 0.0], [s, s, lh], wood);
            b.part("leg_back_right", [w - s, 0.0, 0.0], [w, s, lh], wood);
            b.part("leg_front_right", [w - s, d - s, 0.0], [w, d, lh], wood);
            b.part("leg_front_left", [0.0, d - s, 0.0], [s, d, lh], wood);
            b.part("top", [0.0, 0.0, lh], [w, d, h], top_c);
            b.keypoints([
                [0.0, 0.0, 0.0],
                [w, 0.0, 0.0],
                [w, d, 0.0],
                [0.0, d, 0.0],
                [0.0, 0.0, h],
                [w, 0.0, h],
                [w, d, h],
                [0.0, d, h],
            ]);
        }
        Category::Sofa => {
            let fabric: Rgb = [92, 112, 160];
            let dark: Rgb = [70, 88, 130];
            let w = b.dim(&mut rng, "width", 150, 220);
            let d = b.dim(&mut rng, "depth", 75, 95);
            let sh = b.dim(&mut rng, "seat_height", 38, 45);
            let bh = b.dim(&mut rng, "back_height", 30, 45);
            let aw = b.dim(&mut rng, "arm_width", 15, 25);
            let ah = b.dim(&mut rng, "arm_height", 15, 25);
            let bt = b.dim(&mut rng, "back_thickness", 15, 25);
            b.part("base", [0.0, 0.0, 0.0], [w, d, sh], fabric);
            b.part("back", [0.0, 0.0, sh], [w, bt, sh + bh], dark);
            b.part("arm_left", [0.0, bt, sh], [aw, d, sh + ah], dark);
            b.part("arm_right", [w - aw, bt, sh], [w, d, sh + ah], dark);
            b.keypoints([
                [0.0, 0.0, 0.0],
                [w, 0.0, 0.0],
                [w, d, 0.0],
                [0.0, d, 0.0],
                [0.0, d, sh + ah],
                [w, d, sh + ah],
                [0.0, 0.0, sh + bh],
                [w, 0.0, sh + bh],
            ]);
        }
        Category::Cabinet => {
            let body: Rgb = [205, 194, 172];
            let top_c: Rgb = [160, 140, 110];
            let w = b.dim(&mut rng, "width", 60, 120);
            let d = b.dim(&mut rng, "depth", 35, 60);
            let h = b.dim(&mut rng, "height", 80, 180);
            let t = b.dim(&mut rng, "top_thickness", 2, 4);
            b.part("body", [0.0, 0.0, 0.0], [w, d, h - t], body);
            b.part("top", [0.0, 0.0, h - t], [w, d, h], top_c);
            b.keypoints([
                [0.0, 0.0, 0.0],
                [w, 0.0, 0.0],
                [w, d, 0.0],
                [0.0, d, 0.0],
                [0.0, 0.0, h],
                [w, 0.0, h],
                [w, d, h],
                [0.0, d, h],
            ]);
        }
    }
    b.finish()
}

/// Places an object in the world: a seeded yaw about world Z and a seeded
/// horizontal offset, right-handed, with the category's tick unit.
pub fn place_frame(category: Category, seed: u64) -> Result<CoordinateFrame, GeometryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(category_seed(category, seed).rotate_left(17));
    let yaw = (rng.random_range(0..360) as f64).to_radians();
    let ox = rng.random_range(-50..=50) as f64;
    let oy = rng.random_range(-50..=50) as f64;
    let (s, c) = (libm::sin(yaw), libm::cos(yaw));
    build_frame(
        Vec3::new(ox, oy, 0.0),
        Vec3::new(c, s, 0.0),
        Vec3::new(-s, c, 0.0),
        Handedness::Right,
        category.unit_length(),
    )
}

/// Cameras on a sphere of radius `3 × diagonal` around the object center:
/// elevations cycle through 20° and 40°, azimuths are evenly spaced starting
/// at 35° from the frame X axis. Frame Z projects to image-up.
pub fn view_cameras(object: &SceneObject, frame: &CoordinateFrame, views: usize, width: u32, height: u32) -> Result<Vec<CameraModel>, GeometryError> {
    let center = object.gt_box.center();
    let r = CAMERA_DISTANCE_FACTOR * object.diagonal();
    let (fx, fy, cx, cy) = CameraModel::intrinsics_from_hfov(DEFAULT_HFOV_DEG, width, height);
    let mut out = Vec::with_capacity(views);
    for k in 0..views {
        let el = VIEW_ELEVATIONS_DEG[k % VIEW_ELEVATIONS_DEG.len()].to_radians();
        let az = (FIRST_AZIMUTH_DEG + 360.0 * k as f64 / views as f64).to_radians();
        let offset = Vec3::new(libm::cos(el) * libm::cos(az), libm::cos(el) * libm::sin(az), libm::sin(el)) * r;
        let eye = frame.frame_to_world(center + offset);
        let target = frame.frame_to_world(center);
        out.push(CameraModel::look_at(eye, target, frame.axis_z(), fx, fy, cx, cy, width, height)?);
    }
    Ok(out)
}

/// Ticks per direction so the axes span the object's largest extent.
pub fn ticks_for(object: &SceneObject, unit_length: f64) -> u32 {
    let e = object.gt_box.max;
    let m = e.x.max(e.y).max(e.z);
    libm::ceil(m / unit_length).max(1.0) as u32
}

fn shade(c: Rgb, f: f64) -> Rgb {
    let s = |v: u8| libm::floor((v as f64 * f).clamp(0.0, 255.0)) as u8;
    [s(c[0]), s(c[1]), s(c[2])]
}

struct Face {
    depth: f64,
    corners: [Pixel; 4],
    color: Rgb,
}

/// Flat-shaded rendering of the object's cuboids on a light background.
///
/// Back faces are culled; the rest are painted far to near by face-center
/// depth, each followed by its dark outline.
pub fn render_view(object: &SceneObject, camera: &CameraModel, frame: &CoordinateFrame) -> Result<RgbImage, SceneError> {
    let mut img = RgbImage::new(camera.width(), camera.height(), BACKGROUND);
    let light = Vec3::new(0.35, -0.55, 0.76);
    let light = light / light.norm();
    let eye = camera.center();
    let mut faces: Vec<Face> = Vec::new();
    for part in &object.parts {
        let corners = part.bounds.corners();
        for c in corners {
            if !(camera.depth(frame.frame_to_world(c)) > MIN_DEPTH) {
                return Err(SceneError::ObjectBehindCamera);
            }
        }
        // (normal in frame coordinates, corner indices in cyclic order)
        const FACES: [([f64; 3], [usize; 4]); 6] = [
            ([-1.0, 0.0, 0.0], [0, 2, 6, 4]),
            ([1.0, 0.0, 0.0], [1, 3, 7, 5]),
            ([0.0, -1.0, 0.0], [0, 1, 5, 4]),
            ([0.0, 1.0, 0.0], [2, 3, 7, 6]),
            ([0.0, 0.0, -1.0], [0, 1, 3, 2]),
            ([0.0, 0.0, 1.0], [4, 5, 7, 6]),
        ];
        for (n, idx) in FACES {
            let n = Vec3::from(n);
            let center_f = (corners[idx[0]] + corners[idx[1]] + corners[idx[2]] + corners[idx[3]]) * 0.25;
            let center_w = frame.frame_to_world(center_f);
            let normal_w = frame.frame_to_world(n) - frame.origin();
            if normal_w.dot(eye - center_w) <= 0.0 {
                continue;
            }
            let mut px = [Pixel::default(); 4];
            for (slot, &i) in px.iter_mut().zip(idx.iter()) {
                *slot = camera.project(frame.frame_to_world(corners[i]))?;
            }
            let lambert = n.dot(light).max(0.0);
            faces.push(Face {
                depth: camera.depth(center_w),
                corners: px,
                color: shade(part.color, 0.5 + 0.5 * lambert),
            });
        }
    }
    faces.sort_by(|a, b| b.depth.total_cmp(&a.depth));
    for f in &faces {
        img.fill_convex_polygon(&f.corners, f.color);
        for i in 0..4 {
            img.fill_segment(f.corners[i], f.corners[(i + 1) % 4], 1.0, EDGE_COLOR);
        }
    }
    Ok(img)
}

/// One calibrated view of an entry.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ViewRecord {
    /// Image path relative to the entry directory.
    pub image: String,
    pub camera: CameraModel,
    pub frame: CoordinateFrame,
    pub style: OverlayStyle,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetEntry {
    pub id: String,
    pub category: Category,
    pub rng_seed: u64,
    pub object: SceneObject,
    pub views: Vec<ViewRecord>,
}

impl DatasetEntry {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.views.len() < 2 {
            return Err(SceneError::TooFewViews(self.views.len()));
        }
        let f = &self.views[0].frame;
        if self.views.iter().any(|v| &v.frame != f) {
            return Err(SceneError::FrameMismatch);
        }
        Ok(())
    }

    pub fn frame(&self) -> &CoordinateFrame {
        &self.views[0].frame
    }
}

pub fn entry_id(category: Category, index: usize) -> String {
    format!("{}_{:03}", category.name(), index)
}

/// Builds an entry (object, shared frame, per-view cameras and style) without
/// rendering anything.
pub fn build_entry(category: Category, index: usize, seed: u64, views: usize, width: u32, height: u32) -> Result<DatasetEntry, SceneError> {
    if views < 2 {
        return Err(SceneError::TooFewViews(views));
    }
    let object = generate_object(category, seed);
    let frame = place_frame(category, seed)?;
    let style = OverlayStyle {
        ticks_per_direction: ticks_for(&object, frame.unit_length()),
        ..OverlayStyle::default()
    };
    let cameras = view_cameras(&object, &frame, views, width, height)?;
    let views = cameras
        .into_iter()
        .enumerate()
        .map(|(k, camera)| ViewRecord {
            image: format!("view_{k}.png"),
            camera,
            frame,
            style: style.clone(),
        })
        .collect();
    Ok(DatasetEntry {
        id: entry_id(category, index),
        category,
        rng_seed: seed,
        object,
        views,
    })
}
