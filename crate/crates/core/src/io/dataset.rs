//! Posed image sets in the `transforms_{split}.json` layout.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Aabb;
use crate::render::{Camera, Image, Ray};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransformsFile {
    pub camera_angle_x: f64,
    pub frames: Vec<FrameEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrameEntry {
    pub file_path: String,
    pub transform_matrix: [[f64; 4]; 4],
}

/// One posed training or test image.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub name: String,
    pub camera: Camera,
    pub image: Image,
}

/// Box that encloses the standard synthetic scenes.
pub fn default_aabb() -> Aabb {
    Aabb::cube(1.5)
}

/// Reads an image file; RGBA pixels are composited over `background`.
pub fn load_png(path: &Path, background: [f64; 3]) -> Result<Image> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::Png("image too large".into()))?];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(Error::Png(format!("{}: unexpanded palette", path.display()))),
    };
    let data = &buf[..info.buffer_size()];
    let pixels = data
        .chunks_exact(channels)
        .map(|px| {
            let f = |v: u8| v as f64 / 255.0;
            let (rgb, a) = match channels {
                1 => ([f(px[0]); 3], 1.0),
                2 => ([f(px[0]); 3], f(px[1])),
                3 => ([f(px[0]), f(px[1]), f(px[2])], 1.0),
                _ => ([f(px[0]), f(px[1]), f(px[2])], f(px[3])),
            };
            std::array::from_fn(|k| (rgb[k] * a + background[k] * (1.0 - a)) as f32)
        })
        .collect();
    Image::new(info.width, info.height, pixels)
}

fn image_path(dir: &Path, file_path: &str) -> PathBuf {
    let p = dir.join(file_path);
    if p.extension().is_some() {
        p
    } else {
        p.with_extension("png")
    }
}

/// Loads one split (`train`, `test`, `val`).
pub fn load_split(dir: impl AsRef<Path>, split: &str, background: [f64; 3]) -> Result<Vec<View>> {
    let dir = dir.as_ref();
    let path = dir.join(format!("transforms_{split}.json"));
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let tf: TransformsFile = serde_json::from_str(&text)?;
    let mut size: Option<(u32, u32)> = None;
    tf.frames
        .iter()
        .map(|fr| {
            let m = Matrix4::from_fn(|r, c| fr.transform_matrix[r][c]);
            let img_path = image_path(dir, &fr.file_path);
            let image = load_png(&img_path, background).map_err(|e| Error::Dataset {
                frame: fr.file_path.clone(),
                reason: e.to_string(),
            })?;
            let dims = (image.width, image.height);
            if *size.get_or_insert(dims) != dims {
                let (w, h) = size.unwrap();
                return Err(Error::Dataset {
                    frame: fr.file_path.clone(),
                    reason: format!("image is {}x{}, earlier frames are {w}x{h}", dims.0, dims.1),
                });
            }
            let camera = Camera::from_fov(image.width, image.height, tf.camera_angle_x, m).map_err(|e| Error::Dataset {
                frame: fr.file_path.clone(),
                reason: e.to_string(),
            })?;
            Ok(View {
                name: fr.file_path.clone(),
                camera,
                image,
            })
        })
        .collect()
}

/// Every pixel of every view as a ray with its target color.
pub fn rays_of(views: &[View]) -> (Vec<Ray>, Vec<[f32; 3]>) {
    let mut rays = Vec::new();
    let mut colors = Vec::new();
    for v in views {
        for py in 0..v.camera.height {
            for px in 0..v.camera.width {
                rays.push(v.camera.ray(px, py));
                colors.push(v.image.get(px, py));
            }
        }
    }
    (rays, colors)
}
