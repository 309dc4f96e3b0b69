//! Synthetic scenes: a textured unit square in the z = 0 plane seen from
//! cameras on the upper hemisphere.
//!
//! Texture values lie in [0.1, 0.9] so colors stay inside the range the
//! sigmoid-activated primitives can represent. The focal length is chosen so
//! that every view sees only the square, never the black background.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::dataio::{save_image, write_points, SfmPoint};
use crate::error::{Error, Result};
use crate::geometry::{Camera, Ray};
use crate::image::Image;

const CAMERA_DISTANCE: f64 = 2.0;
const MIN_ELEVATION_DEG: f64 = 55.0;
const MAX_ELEVATION_DEG: f64 = 80.0;
/// Image corners must land at most this far from the square's center.
const COVERAGE: f64 = 0.47;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Stripes,
    Checker,
    Rings,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stripes" => Ok(Preset::Stripes),
            "checker" => Ok(Preset::Checker),
            "rings" => Ok(Preset::Rings),
            other => Err(Error::Config(format!(
                "invalid preset {other:?} (expected stripes, checker or rings)"
            ))),
        }
    }
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Stripes => "stripes",
            Preset::Checker => "checker",
            Preset::Rings => "rings",
        }
    }

    /// Gray level at plane point `(x, y)`, `freq` cycles per unit length.
    pub fn texture(self, freq: f64, x: f64, y: f64) -> f64 {
        let t = match self {
            Preset::Stripes => 0.5 + 0.5 * (2.0 * PI * freq * x).cos(),
            Preset::Rings => 0.5 + 0.5 * (2.0 * PI * freq * (x * x + y * y).sqrt()).cos(),
            Preset::Checker => {
                let cell = (2.0 * freq * (x + 0.5)).floor() + (2.0 * freq * (y + 0.5)).floor();
                cell.rem_euclid(2.0)
            }
        };
        0.1 + 0.8 * t
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub preset: Preset,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub freq: f64,
    pub seed: u64,
    /// Init points form a `grid x grid` lattice over the square.
    pub grid: usize,
    /// Samples per pixel along each axis for the ground truth.
    pub supersample: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            preset: Preset::Stripes,
            views: 16,
            width: 128,
            height: 128,
            freq: 8.0,
            seed: 0,
            grid: 8,
            supersample: 4,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.views < 2 {
            return Err(Error::Config(format!("need at least 2 views, got {}", self.views)));
        }
        if self.width == 0 || self.height == 0 || self.width > 8192 || self.height > 8192 {
            return Err(Error::Config(format!(
                "resolution {}x{} outside 1x1..=8192x8192",
                self.width, self.height
            )));
        }
        if !(self.freq.is_finite() && self.freq >= 0.0) {
            return Err(Error::Config(format!("frequency {} must be finite and >= 0", self.freq)));
        }
        if self.grid == 0 || self.grid > 1024 {
            return Err(Error::Config(format!("grid {} outside 1..=1024", self.grid)));
        }
        if self.supersample == 0 || self.supersample > 16 {
            return Err(Error::Config(format!("supersample {} outside 1..=16", self.supersample)));
        }
        Ok(())
    }
}

pub struct SynthScene {
    pub names: Vec<String>,
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    pub points: Vec<SfmPoint>,
}

fn plane_hit(ray: &Ray) -> Option<(f64, f64)> {
    if ray.direction.z.abs() < 1e-12 {
        return None;
    }
    let t = -ray.origin.z / ray.direction.z;
    if t <= 0.0 {
        return None;
    }
    let p = ray.origin + ray.direction * t;
    Some((p.x, p.y))
}

fn ray_through(camera: &Camera, px: f64, py: f64) -> Ray {
    let d_cam = Vector3::new((px - camera.cx) / camera.fx, (py - camera.cy) / camera.fy, 1.0);
    Ray {
        origin: camera.center(),
        direction: (camera.rotation.transpose() * d_cam).normalize(),
    }
}

fn poses(config: &SynthConfig) -> Vec<(Vector3<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.views)
        .map(|k| {
            // Stratified azimuths, random elevations.
            let azimuth = 2.0 * PI * (k as f64 + rng.gen::<f64>()) / config.views as f64;
            let elevation = rng.gen_range(MIN_ELEVATION_DEG..MAX_ELEVATION_DEG).to_radians();
            let eye = CAMERA_DISTANCE
                * Vector3::new(
                    elevation.cos() * azimuth.cos(),
                    elevation.cos() * azimuth.sin(),
                    elevation.sin(),
                );
            (eye, azimuth)
        })
        .collect()
}

fn camera_at(eye: Vector3<f64>, f: f64, config: &SynthConfig) -> Result<Camera> {
    Camera::look_at(
        eye,
        Vector3::zeros(),
        Vector3::new(0.0, 0.0, 1.0),
        config.width,
        config.height,
        f,
        f,
        config.width as f64 / 2.0,
        config.height as f64 / 2.0,
    )
}

fn corners_covered(cameras: &[Camera]) -> bool {
    cameras.iter().all(|c| {
        let (w, h) = (c.width as f64, c.height as f64);
        [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)].iter().all(|&(x, y)| {
            plane_hit(&ray_through(c, x, y))
                .is_some_and(|(px, py)| px.abs() <= COVERAGE && py.abs() <= COVERAGE)
        })
    })
}

/// Cameras sharing the smallest focal length (to 1e-6 relative) for which
/// every view is filled by the square.
pub fn synth_cameras(config: &SynthConfig) -> Result<Vec<Camera>> {
    let eyes = poses(config);
    let build = |f: f64| -> Result<Vec<Camera>> { eyes.iter().map(|(e, _)| camera_at(*e, f, config)).collect() };
    let scale = config.width.max(config.height) as f64;
    let (mut lo, mut hi) = (0.1 * scale, 0.5 * scale);
    while !corners_covered(&build(hi)?) {
        hi *= 2.0;
        if hi > 1e4 * scale {
            return Err(Error::Config("cannot frame the synthetic plane".into()));
        }
    }
    while (hi - lo) > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if corners_covered(&build(mid)?) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    build(hi)
}

/// Box-filtered ground truth of `camera`.
pub fn render_ground_truth(camera: &Camera, config: &SynthConfig) -> Image {
    let s = config.supersample;
    let rows: Vec<Vec<f64>> = (0..camera.height)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(3 * camera.width);
            for x in 0..camera.width {
                let mut acc = 0.0;
                for j in 0..s {
                    for i in 0..s {
                        let px = x as f64 + (i as f64 + 0.5) / s as f64;
                        let py = y as f64 + (j as f64 + 0.5) / s as f64;
                        if let Some((u, v)) = plane_hit(&ray_through(camera, px, py)) {
                            if u.abs() <= 0.5 && v.abs() <= 0.5 {
                                acc += config.preset.texture(config.freq, u, v);
                            }
                        }
                    }
                }
                let g = acc / (s * s) as f64;
                row.extend_from_slice(&[g, g, g]);
            }
            row
        })
        .collect();
    Image {
        width: camera.width,
        height: camera.height,
        data: rows.concat(),
    }
}

/// Lattice points at cell centers, colored with the cell-averaged texture
/// (point samples of a high-frequency texture would alias).
pub fn grid_points(config: &SynthConfig) -> Vec<SfmPoint> {
    let k = config.grid;
    let sub = 16;
    let cell = 1.0 / k as f64;
    let mut points = Vec::with_capacity(k * k);
    for j in 0..k {
        for i in 0..k {
            let (x0, y0) = (-0.5 + i as f64 * cell, -0.5 + j as f64 * cell);
            let mut acc = 0.0;
            for b in 0..sub {
                for a in 0..sub {
                    let x = x0 + (a as f64 + 0.5) / sub as f64 * cell;
                    let y = y0 + (b as f64 + 0.5) / sub as f64 * cell;
                    acc += config.preset.texture(config.freq, x, y);
                }
            }
            let g = acc / (sub * sub) as f64;
            points.push(SfmPoint {
                id: (j * k + i + 1) as i64,
                position: Vector3::new(x0 + 0.5 * cell, y0 + 0.5 * cell, 0.0),
                color: Vector3::new(g, g, g),
            });
        }
    }
    points
}

pub fn generate(config: &SynthConfig) -> Result<SynthScene> {
    config.validate()?;
    let cameras = synth_cameras(config)?;
    let images = cameras.iter().map(|c| render_ground_truth(c, config)).collect();
    let names = (0..config.views).map(|k| format!("view_{k:03}.png")).collect();
    Ok(SynthScene {
        names,
        cameras,
        images,
        points: grid_points(config),
    })
}

/// OpenGL camera-to-world matrix of `camera`.
pub fn c2w_opengl(camera: &Camera) -> Matrix4<f64> {
    let r_c2w = camera.rotation.transpose();
    let center = camera.center();
    let mut m = Matrix4::identity();
    for i in 0..3 {
        m[(i, 0)] = r_c2w[(i, 0)];
        m[(i, 1)] = -r_c2w[(i, 1)];
        m[(i, 2)] = -r_c2w[(i, 2)];
        m[(i, 3)] = center[i];
    }
    m
}

pub fn transforms_json(scene: &SynthScene, config: &SynthConfig) -> String {
    let c0 = &scene.cameras[0];
    let frames: Vec<_> = scene
        .names
        .iter()
        .zip(&scene.cameras)
        .map(|(name, cam)| {
            let m = c2w_opengl(cam);
            let rows: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| m[(i, j)]).collect()).collect();
            json!({ "file_path": format!("images/{name}"), "transform_matrix": rows })
        })
        .collect();
    let doc = json!({
        "fl_x": c0.fx,
        "fl_y": c0.fy,
        "cx": c0.cx,
        "cy": c0.cy,
        "w": c0.width,
        "h": c0.height,
        "preset": config.preset.name(),
        "freq": config.freq,
        "seed": config.seed,
        "frames": frames,
    });
    serde_json::to_string_pretty(&doc).expect("JSON values are finite") + "\n"
}

/// Writes `transforms.json`, `images/*.png` and `points3D.txt` into `out`.
pub fn write_synth(out: &Path, config: &SynthConfig) -> Result<SynthScene> {
    let scene = generate(config)?;
    std::fs::create_dir_all(out.join("images")).map_err(|e| Error::io(out, e))?;
    for (name, img) in scene.names.iter().zip(&scene.images) {
        save_image(&out.join("images").join(name), img)?;
    }
    let json_path = out.join("transforms.json");
    std::fs::write(&json_path, transforms_json(&scene, config)).map_err(|e| Error::io(&json_path, e))?;
    let pts_path = out.join("points3D.txt");
    std::fs::write(&pts_path, write_points(&scene.points)).map_err(|e| Error::io(&pts_path, e))?;
    Ok(scene)
}
