//! Posed image sets, initial point clouds, images and checkpoints on disk.
//!
//! Two dataset layouts are understood: COLMAP text models
//! (`cameras.txt`, `images.txt`, `points3D.txt`) and transforms-style JSON
//! with OpenGL camera-to-world matrices. Both are converted to the
//! world-to-camera, x-right / y-down / z-forward convention of [`Camera`].

mod checkpoint;
mod colmap;
mod image_io;
mod transforms;

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Point2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::image::Image;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use colmap::{
    load_colmap_text, parse_cameras, parse_images, parse_points, write_points, ColmapImage,
};
pub use image_io::{load_image, save_image};
pub use transforms::{load_transforms, parse_transforms};

/// Pinhole intrinsics shared by one or more views.
#[derive(Clone, Debug, PartialEq)]
pub struct Intrinsics {
    pub id: u64,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// One posed image. The pose is world-to-camera.
#[derive(Clone, Debug)]
pub struct View {
    pub name: String,
    /// Index into [`Dataset::cameras`].
    pub camera: usize,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub image_path: PathBuf,
    pub image: Option<Image>,
    /// Recorded 2D features `(pixel, point id)`, when the source has them.
    pub observations: Vec<(Point2<f64>, i64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SfmPoint {
    pub id: i64,
    pub position: Vector3<f64>,
    /// RGB in [0, 1].
    pub color: Vector3<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub cameras: Vec<Intrinsics>,
    pub views: Vec<View>,
    pub points: Vec<SfmPoint>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    Colmap,
    Transforms,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "colmap" => Ok(DataFormat::Colmap),
            "transforms" => Ok(DataFormat::Transforms),
            other => Err(Error::Config(format!(
                "unknown data format {other:?} (expected colmap or transforms)"
            ))),
        }
    }
}

impl Dataset {
    /// Full camera (intrinsics plus pose) of view `i`.
    pub fn camera(&self, i: usize) -> Result<Camera> {
        let view = &self.views[i];
        let k = self.cameras.get(view.camera).ok_or_else(|| {
            Error::Config(format!("view {} references missing camera {}", view.name, view.camera))
        })?;
        Camera::new(k.width, k.height, k.fx, k.fy, k.cx, k.cy, view.rotation, view.translation)
    }

    pub fn view_by_name(&self, name: &str) -> Option<usize> {
        self.views.iter().position(|v| v.name == name)
    }

    /// Loads every view's image and checks it against the camera size.
    pub fn load_images(&mut self) -> Result<()> {
        for view in &mut self.views {
            let image = load_image(&view.image_path)?;
            let k = &self.cameras[view.camera];
            if image.width != k.width || image.height != k.height {
                return Err(Error::Dimension(format!(
                    "{}: image is {}x{} but its camera is {}x{}",
                    view.image_path.display(),
                    image.width,
                    image.height,
                    k.width,
                    k.height
                )));
            }
            view.image = Some(image);
        }
        Ok(())
    }

    /// Ground-truth image of view `i`; images must have been loaded.
    pub fn image(&self, i: usize) -> Result<&Image> {
        self.views[i]
            .image
            .as_ref()
            .ok_or_else(|| Error::Config(format!("image of view {} not loaded", self.views[i].name)))
    }
}

/// Locates the COLMAP model files below `dir`: the directory itself,
/// `sparse/0` or `sparse`.
pub fn find_colmap_model(dir: &Path) -> Result<PathBuf> {
    for cand in [dir.to_path_buf(), dir.join("sparse").join("0"), dir.join("sparse")] {
        if cand.join("cameras.txt").is_file() {
            return Ok(cand);
        }
    }
    Err(Error::io(
        dir.join("cameras.txt"),
        std::io::Error::new(std::io::ErrorKind::NotFound, "no COLMAP text model found"),
    ))
}

/// Loads a dataset directory without decoding images.
///
/// COLMAP images are looked up in `<dir>/images`. For the transforms layout
/// the file is `<dir>/transforms.json` and initial points, when present, are
/// read from `<dir>/points3D.txt`.
pub fn load_dataset(dir: &Path, format: DataFormat) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "data directory not found"),
        ));
    }
    match format {
        DataFormat::Colmap => {
            let model = find_colmap_model(dir)?;
            let mut ds = load_colmap_text(&model)?;
            for v in &mut ds.views {
                v.image_path = dir.join("images").join(&v.name);
            }
            Ok(ds)
        }
        DataFormat::Transforms => {
            let mut ds = load_transforms(&dir.join("transforms.json"))?;
            let points = dir.join("points3D.txt");
            if points.is_file() {
                let text = read_text(&points)?;
                ds.points = parse_points(&text, &points.display().to_string())?;
            }
            Ok(ds)
        }
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
