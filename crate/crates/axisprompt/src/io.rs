//! PNG and JSON file helpers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use axisprompt_core::RgbImage;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs { path: PathBuf, source: std::io::Error },
    #[error("{path}: invalid JSON: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {msg}")]
    Png { path: PathBuf, msg: String },
}

impl IoError {
    pub fn fs(path: &Path, source: std::io::Error) -> Self {
        IoError::Fs {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// 8-bit RGB PNG, no alpha, default compression.
pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width(), img.height());
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("in-memory PNG header");
        w.write_image_data(img.as_raw()).expect("in-memory PNG data");
    }
    out
}

/// Decodes any 8-bit PNG into RGB (gray and alpha channels are expanded or
/// dropped).
pub fn decode_png(bytes: &[u8]) -> Result<RgbImage, String> {
    let mut dec = png::Decoder::new(std::io::Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| e.to_string())?;
    let size = reader.output_buffer_size().ok_or("image too large")?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let (w, h) = (info.width, info.height);
    let px = (w as usize) * (h as usize);
    let data = match info.color_type {
        png::ColorType::Rgb => buf[..px * 3].to_vec(),
        png::ColorType::Rgba => buf[..px * 4].chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => buf[..px].iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => buf[..px * 2].chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        png::ColorType::Indexed => return Err("unexpanded palette image".into()),
    };
    RgbImage::from_raw(w, h, data).ok_or_else(|| "pixel buffer size mismatch".into())
}

pub fn read_png(path: &Path) -> Result<RgbImage, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::fs(path, e))?;
    decode_png(&bytes).map_err(|msg| IoError::Png { path: path.to_path_buf(), msg })
}

/// Width and height from the PNG header without decoding pixel data.
pub fn png_size(path: &Path) -> Result<(u32, u32), IoError> {
    let f = fs::File::open(path).map_err(|e| IoError::fs(path, e))?;
    let dec = png::Decoder::new(std::io::BufReader::new(f));
    let reader = dec.read_info().map_err(|e| IoError::Png {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let info = reader.info();
    Ok((info.width, info.height))
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<(), IoError> {
    write_atomic(path, &encode_png(img))
}

/// Pretty JSON with 2-space indentation and a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    write_atomic(path, to_json(value).as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::fs(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes via a temporary file in the same directory and a rename, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| IoError::fs(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| IoError::fs(dir, e))?;
    tmp.write_all(bytes).map_err(|e| IoError::fs(path, e))?;
    tmp.as_file().sync_all().map_err(|e| IoError::fs(path, e))?;
    tmp.persist(path).map_err(|e| IoError::fs(path, e.error))?;
    Ok(())
}

pub fn create_dir_all(path: &Path) -> Result<(), IoError> {
    fs::create_dir_all(path).map_err(|e| IoError::fs(path, e))
}

/// True if `path` does not exist or is an empty directory.
pub fn is_empty_or_missing(path: &Path) -> Result<bool, IoError> {
    match fs::read_dir(path) {
        Ok(mut it) => Ok(it.next().is_none()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(true),
        Err(e) => Err(IoError::fs(path, e)),
    }
}
