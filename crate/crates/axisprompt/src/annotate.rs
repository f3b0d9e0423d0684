//! Manual frame annotation: turning clicked pixels into a frame, rendering
//! previews, and storing versioned annotations next to the images.
//!
//! Lifting convention: the clicked origin and the two axis endpoints are
//! back-projected onto the ground plane `z = 0` of the camera's world. The
//! camera is the one recorded in the dataset for that view when available;
//! otherwise a default camera is assumed (60° horizontal field of view,
//! principal point at the image center, eye at `(0, -300, 150)` looking at
//! the world origin with Z up).

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axisprompt_core::geometry::build_frame;
use axisprompt_core::overlay::{render_axes, AnnotatedImage, Keypoint, OverlayError, OverlayStyle};
use axisprompt_core::scene::DatasetEntry;
use axisprompt_core::{CameraModel, CoordinateFrame, Handedness, Pixel, RgbImage, Vec3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ANNOTATION;
use crate::io::{self, IoError};

pub const DEFAULT_CAMERA_HFOV_DEG: f64 = 60.0;
pub const DEFAULT_CAMERA_EYE: [f64; 3] = [0.0, -300.0, 150.0];
/// Axis endpoints must be at least this far from the origin, in pixels.
pub const MIN_AXIS_PX: f64 = 5.0;
pub const MAX_TICKS: u32 = 100;

/// What the CLI `annotate` command draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSpec {
    pub camera: CameraModel,
    pub frame: CoordinateFrame,
    pub style: OverlayStyle,
    #[serde(default)]
    pub keypoints: Vec<Keypoint>,
    #[serde(default = "yes")]
    pub show_axes: bool,
}

fn yes() -> bool {
    true
}

pub fn annotate(image: RgbImage, spec: &AnnotationSpec) -> Result<RgbImage, OverlayError> {
    let mut a = AnnotatedImage::new(image, spec.camera, spec.frame, spec.style.clone(), spec.keypoints.clone())?;
    a.show_axes = spec.show_axes;
    a.render()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationDraft {
    /// Image id: path below the image root without the `.png` suffix.
    pub image: String,
    pub origin_px: Pixel,
    /// X and Y axis endpoint hints.
    pub axis_px: [Pixel; 2],
    pub handedness: Handedness,
    pub unit_length: f64,
    pub ticks_per_direction: u32,
    #[serde(default = "yes")]
    pub show_scale: bool,
}

impl AnnotationDraft {
    pub fn style(&self) -> OverlayStyle {
        OverlayStyle {
            ticks_per_direction: self.ticks_per_direction,
            show_scale: self.show_scale,
            ..OverlayStyle::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

fn field_error(field: &str, message: impl Into<String>) -> FieldError {
    FieldError {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraSource {
    Dataset,
    Default,
}

/// Machine-readable validation rules, shared with clients.
pub fn validation_rules() -> serde_json::Value {
    serde_json::json!({
        "origin_px": "inside the image: 0 <= u < width, 0 <= v < height",
        "min_axis_px": MIN_AXIS_PX,
        "unit_length": { "exclusive_min": 0.0 },
        "ticks_per_direction": { "min": 0, "max": MAX_TICKS },
        "handedness": ["left", "right"],
        "ground_plane": "z = 0",
        "default_camera": {
            "hfov_deg": DEFAULT_CAMERA_HFOV_DEG,
            "principal_point": "image center",
            "eye": DEFAULT_CAMERA_EYE,
            "target": [0.0, 0.0, 0.0],
            "up": [0.0, 0.0, 1.0]
        }
    })
}

pub fn validate_draft(draft: &AnnotationDraft, width: u32, height: u32) -> Vec<FieldError> {
    let mut errs = Vec::new();
    let o = draft.origin_px;
    if !(o.is_finite() && o.u >= 0.0 && o.v >= 0.0 && o.u < width as f64 && o.v < height as f64) {
        errs.push(field_error("origin_px", format!("must lie inside the {width}x{height} image")));
    }
    for (i, p) in draft.axis_px.iter().enumerate() {
        let field = format!("axis_px[{i}]");
        if !p.is_finite() {
            errs.push(field_error(&field, "must be finite"));
        } else if o.is_finite() && p.distance(o) < MIN_AXIS_PX {
            errs.push(field_error(&field, format!("must be at least {MIN_AXIS_PX} px from the origin")));
        }
    }
    if !(draft.unit_length > 0.0 && draft.unit_length.is_finite()) {
        errs.push(field_error("unit_length", "must be positive"));
    }
    if draft.ticks_per_direction > MAX_TICKS {
        errs.push(field_error("ticks_per_direction", format!("must be at most {MAX_TICKS}")));
    }
    errs
}

pub fn default_camera(width: u32, height: u32) -> CameraModel {
    let (fx, fy, cx, cy) = CameraModel::intrinsics_from_hfov(DEFAULT_CAMERA_HFOV_DEG, width, height);
    CameraModel::look_at(Vec3::from(DEFAULT_CAMERA_EYE), Vec3::ZERO, Vec3::Z, fx, fy, cx, cy, width, height).expect("default camera is valid")
}

/// Back-projects the draft's pixels onto `z = 0` and builds the frame.
pub fn lift_draft(draft: &AnnotationDraft, camera: &CameraModel) -> Result<CoordinateFrame, Vec<FieldError>> {
    let lift = |px: Pixel, field: &str| {
        camera
            .back_project_to_plane(px, Vec3::Z, 0.0)
            .ok_or_else(|| field_error(field, "viewing ray does not meet the ground plane in front of the camera"))
    };
    let mut errs = Vec::new();
    let o = lift(draft.origin_px, "origin_px").map_err(|e| errs.push(e)).ok();
    let x = lift(draft.axis_px[0], "axis_px[0]").map_err(|e| errs.push(e)).ok();
    let y = lift(draft.axis_px[1], "axis_px[1]").map_err(|e| errs.push(e)).ok();
    let (Some(o), Some(x), Some(y)) = (o, x, y) else {
        return Err(errs);
    };
    build_frame(o, x - o, y - o, draft.handedness, draft.unit_length).map_err(|e| vec![field_error("axis_px", e.to_string())])
}

/// The saved record. The leading fields match a dataset view record, so a
/// saved annotation loads wherever a view record or an [`AnnotationSpec`]
/// is expected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image: String,
    pub camera: CameraModel,
    pub frame: CoordinateFrame,
    pub style: OverlayStyle,
    pub version: u32,
    pub camera_source: CameraSource,
    pub draft: AnnotationDraft,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown image {0:?}")]
    UnknownImage(String),
    #[error("invalid draft")]
    Invalid(Vec<FieldError>),
    #[error("conflict: latest version is {current:?}, expected {expected:?}")]
    Conflict { current: Option<u32>, expected: Option<u32> },
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Overlay(#[from] OverlayError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub has_annotation: bool,
}

/// Images and annotations under one root directory. Annotations for image
/// `<id>.png` live beside it as `<id>.annotation.v<N>.json`, with
/// `<id>.annotation.latest` naming the newest version file.
#[derive(Debug, Clone)]
pub struct AnnotationStore {
    root: PathBuf,
    locks: Arc<Mutex<HashMap<String, Arc<Mutex<()>>>>>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('/')
        && id.split('/').all(|seg| !seg.is_empty() && seg != "." && seg != "..")
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | '/'))
}

impl AnnotationStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        AnnotationStore {
            root: root.into(),
            locks: Arc::default(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn image_path(&self, id: &str) -> Result<PathBuf, StoreError> {
        if !valid_id(id) {
            return Err(StoreError::UnknownImage(id.to_string()));
        }
        let p = self.root.join(format!("{id}.png"));
        if p.is_file() {
            Ok(p)
        } else {
            Err(StoreError::UnknownImage(id.to_string()))
        }
    }

    fn pointer_path(&self, id: &str) -> PathBuf {
        self.root.join(format!("{id}.annotation.latest"))
    }

    fn version_path(&self, id: &str, version: u32) -> PathBuf {
        self.root.join(format!("{id}.annotation.v{version}.json"))
    }

    pub fn list(&self) -> Result<Vec<ImageInfo>, StoreError> {
        let mut out = Vec::new();
        self.walk(&self.root, &mut out)?;
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }

    fn walk(&self, dir: &Path, out: &mut Vec<ImageInfo>) -> Result<(), StoreError> {
        let rd = fs::read_dir(dir).map_err(|e| IoError::fs(dir, e))?;
        let mut paths: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for p in paths {
            if p.is_dir() {
                self.walk(&p, out)?;
                continue;
            }
            if p.extension().and_then(|e| e.to_str()) != Some("png") {
                continue;
            }
            let Ok(rel) = p.strip_prefix(&self.root) else { continue };
            let Some(rel) = rel.to_str() else { continue };
            let id = rel.trim_end_matches(".png").replace(std::path::MAIN_SEPARATOR, "/");
            if !valid_id(&id) {
                continue;
            }
            // unreadable PNGs are not listed
            let Ok((width, height)) = io::png_size(&p) else { continue };
            out.push(ImageInfo {
                has_annotation: self.pointer_path(&id).is_file(),
                id,
                width,
                height,
            });
        }
        Ok(())
    }

    pub fn read_image(&self, id: &str) -> Result<RgbImage, StoreError> {
        Ok(io::read_png(&self.image_path(id)?)?)
    }

    /// The dataset camera recorded for this image when one exists and fits
    /// the image size, else the default camera.
    pub fn camera_for(&self, id: &str, width: u32, height: u32) -> (CameraModel, CameraSource) {
        let path = self.root.join(format!("{id}.png"));
        let found = (|| {
            let dir = path.parent()?;
            let name = path.file_name()?.to_str()?;
            let entry: DatasetEntry = io::read_json(&dir.join(ANNOTATION)).ok()?;
            let view = entry.views.into_iter().find(|v| v.image == name)?;
            (view.camera.width() == width && view.camera.height() == height).then_some(view.camera)
        })();
        match found {
            Some(c) => (c, CameraSource::Dataset),
            None => (default_camera(width, height), CameraSource::Default),
        }
    }

    /// Validates and lifts a draft against its image.
    pub fn resolve(&self, draft: &AnnotationDraft) -> Result<(RgbImage, AnnotationRecord), StoreError> {
        let image = self.read_image(&draft.image)?;
        let errs = validate_draft(draft, image.width(), image.height());
        if !errs.is_empty() {
            return Err(StoreError::Invalid(errs));
        }
        let (camera, camera_source) = self.camera_for(&draft.image, image.width(), image.height());
        let frame = lift_draft(draft, &camera).map_err(StoreError::Invalid)?;
        let name = draft.image.rsplit('/').next().unwrap_or(&draft.image);
        let record = AnnotationRecord {
            image: format!("{name}.png"),
            camera,
            frame,
            style: draft.style(),
            version: 0,
            camera_source,
            draft: draft.clone(),
        };
        Ok((image, record))
    }

    /// Preview PNG bytes for a draft; touches no stored state.
    pub fn preview(&self, draft: &AnnotationDraft) -> Result<Vec<u8>, StoreError> {
        let (image, rec) = self.resolve(draft)?;
        let a = AnnotatedImage::new(image, rec.camera, rec.frame, rec.style, Vec::new())?;
        Ok(io::encode_png(&render_axes(&a)?))
    }

    pub fn latest_version(&self, id: &str) -> Result<Option<u32>, StoreError> {
        let p = self.pointer_path(id);
        let text = match fs::read_to_string(&p) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(IoError::fs(&p, e).into()),
        };
        let v = text
            .trim()
            .rsplit(".annotation.v")
            .next()
            .and_then(|s| s.strip_suffix(".json"))
            .and_then(|s| s.parse().ok());
        Ok(v)
    }

    pub fn latest(&self, id: &str) -> Result<Option<AnnotationRecord>, StoreError> {
        if !valid_id(id) {
            return Err(StoreError::UnknownImage(id.to_string()));
        }
        match self.latest_version(id)? {
            Some(v) => Ok(Some(io::read_json(&self.version_path(id, v))?)),
            None => Ok(None),
        }
    }

    fn lock_for(&self, id: &str) -> Arc<Mutex<()>> {
        let mut map = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        map.entry(id.to_string()).or_default().clone()
    }

    /// Stores a new version. `base_version` must equal the current latest
    /// version (`None` when the image has no annotation yet); otherwise the
    /// save is rejected. Earlier versions are never modified.
    pub fn save(&self, draft: &AnnotationDraft, base_version: Option<u32>) -> Result<AnnotationRecord, StoreError> {
        let (_, mut record) = self.resolve(draft)?;
        let lock = self.lock_for(&draft.image);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let current = self.latest_version(&draft.image)?;
        if current != base_version {
            return Err(StoreError::Conflict {
                current,
                expected: base_version,
            });
        }
        let version = current.map_or(1, |v| v + 1);
        record.version = version;
        let path = self.version_path(&draft.image, version);
        if path.exists() {
            return Err(StoreError::Conflict {
                current,
                expected: base_version,
            });
        }
        io::write_json(&path, &record)?;
        let file = path.file_name().and_then(|f| f.to_str()).unwrap_or_default().to_string();
        io::write_atomic(&self.pointer_path(&draft.image), format!("{file}\n").as_bytes())?;
        Ok(record)
    }
}
