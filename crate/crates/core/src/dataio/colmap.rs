//! COLMAP text model reader (`cameras.txt`, `images.txt`, `points3D.txt`).
//!
//! Only the undistorted pinhole models are accepted. Image poses are stored
//! by COLMAP as world-to-camera quaternion `(qw, qx, qy, qz)` plus
//! translation, which is already the convention used by [`Camera`].
//!
//! [`Camera`]: crate::geometry::Camera

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix3, Point2, Vector3, Vector4};

use super::{read_text, Dataset, Intrinsics, SfmPoint, View};
use crate::error::{Error, Result};
use crate::geometry::rotation_matrix;

/// One record of `images.txt`.
#[derive(Clone, Debug)]
pub struct ColmapImage {
    pub id: u64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub camera_id: u64,
    pub name: String,
    pub observations: Vec<(Point2<f64>, i64)>,
}

/// Non-comment lines with their 1-based line numbers. Blank lines are kept
/// because `images.txt` uses them for images without observations.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.starts_with('#'))
}

struct LineCtx<'a> {
    path: &'a str,
    line: usize,
}

impl LineCtx<'_> {
    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::parse(self.path, format!("line {}: {msg}", self.line))
    }

    fn num<T: FromStr>(&self, tok: &str, what: &str) -> Result<T> {
        tok.parse()
            .map_err(|_| self.err(format_args!("malformed {what} {tok:?}")))
    }

    fn real(&self, tok: &str, what: &str) -> Result<f64> {
        let v: f64 = self.num(tok, what)?;
        if !v.is_finite() {
            return Err(self.err(format_args!("non-finite {what} {tok:?}")));
        }
        Ok(v)
    }
}

pub fn parse_cameras(text: &str, path: &str) -> Result<Vec<Intrinsics>> {
    let mut cams = Vec::new();
    for (line, l) in content_lines(text) {
        if l.is_empty() {
            continue;
        }
        let cx = LineCtx { path, line };
        let tok: Vec<&str> = l.split_whitespace().collect();
        if tok.len() < 4 {
            return Err(cx.err("expected CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]"));
        }
        let id: u64 = cx.num(tok[0], "camera id")?;
        let model = tok[1];
        let width: usize = cx.num(tok[2], "width")?;
        let height: usize = cx.num(tok[3], "height")?;
        if width == 0 || height == 0 {
            return Err(cx.err(format_args!("camera size {width}x{height} is empty")));
        }
        let params = tok[4..]
            .iter()
            .map(|t| cx.real(t, "camera parameter"))
            .collect::<Result<Vec<f64>>>()?;
        let (fx, fy, ccx, ccy) = match (model, params.len()) {
            ("SIMPLE_PINHOLE", 3) => (params[0], params[0], params[1], params[2]),
            ("PINHOLE", 4) => (params[0], params[1], params[2], params[3]),
            ("SIMPLE_PINHOLE" | "PINHOLE", n) => {
                return Err(cx.err(format_args!("{model} camera with {n} parameters")))
            }
            _ => {
                return Err(cx.err(format_args!(
                    "unsupported camera model {model} (only PINHOLE and SIMPLE_PINHOLE)"
                )))
            }
        };
        if !(fx > 0.0 && fy > 0.0) {
            return Err(cx.err("focal length must be positive"));
        }
        if cams.iter().any(|c: &Intrinsics| c.id == id) {
            return Err(cx.err(format_args!("duplicate camera id {id}")));
        }
        cams.push(Intrinsics {
            id,
            width,
            height,
            fx,
            fy,
            cx: ccx,
            cy: ccy,
        });
    }
    if cams.is_empty() {
        return Err(Error::parse(path, "no cameras"));
    }
    Ok(cams)
}

pub fn parse_images(text: &str, path: &str) -> Result<Vec<ColmapImage>> {
    let mut images = Vec::new();
    let mut lines = content_lines(text).peekable();
    while let Some((line, l)) = lines.next() {
        if l.is_empty() {
            continue;
        }
        let cx = LineCtx { path, line };
        let tok: Vec<&str> = l.split_whitespace().collect();
        if tok.len() < 10 {
            return Err(cx.err(
                "expected IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME",
            ));
        }
        let id: u64 = cx.num(tok[0], "image id")?;
        let mut v = [0.0; 7];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = cx.real(tok[1 + k], "pose value")?;
        }
        let q = Vector4::new(v[0], v[1], v[2], v[3]);
        let norm = q.norm();
        if !(norm > 1e-12) || !norm.is_finite() {
            return Err(cx.err("degenerate quaternion"));
        }
        let camera_id: u64 = cx.num(tok[8], "camera id")?;
        let name = tok[9..].join(" ");

        let mut observations = Vec::new();
        if let Some(&(obs_line, obs)) = lines.peek() {
            // The observation line never has the 10+ mixed tokens of a header
            // whose 10th token is a name; a line of triples is observations.
            let otok: Vec<&str> = obs.split_whitespace().collect();
            let looks_like_header = otok.len() >= 10 && otok.len() % 3 != 0;
            if !looks_like_header {
                lines.next();
                let ocx = LineCtx { path, line: obs_line };
                if otok.len() % 3 != 0 {
                    return Err(ocx.err("observations must be X Y POINT3D_ID triples"));
                }
                for t in otok.chunks(3) {
                    let x = ocx.real(t[0], "feature x")?;
                    let y = ocx.real(t[1], "feature y")?;
                    let pid: i64 = ocx.num(t[2], "point id")?;
                    observations.push((Point2::new(x, y), pid));
                }
            }
        }
        images.push(ColmapImage {
            id,
            rotation: rotation_matrix(&(q / norm)),
            translation: Vector3::new(v[4], v[5], v[6]),
            camera_id,
            name,
            observations,
        });
    }
    Ok(images)
}

pub fn parse_points(text: &str, path: &str) -> Result<Vec<SfmPoint>> {
    let mut points = Vec::new();
    for (line, l) in content_lines(text) {
        if l.is_empty() {
            continue;
        }
        let cx = LineCtx { path, line };
        let tok: Vec<&str> = l.split_whitespace().collect();
        if tok.len() < 7 {
            return Err(cx.err("expected POINT3D_ID X Y Z R G B [ERROR TRACK[]]"));
        }
        let id: i64 = cx.num(tok[0], "point id")?;
        let position = Vector3::new(
            cx.real(tok[1], "x")?,
            cx.real(tok[2], "y")?,
            cx.real(tok[3], "z")?,
        );
        let mut rgb = [0.0; 3];
        for (k, c) in rgb.iter_mut().enumerate() {
            let v: u8 = cx.num(tok[4 + k], "color channel")?;
            *c = v as f64 / 255.0;
        }
        points.push(SfmPoint {
            id,
            position,
            color: Vector3::from(rgb),
        });
    }
    Ok(points)
}

/// `points3D.txt` text for `points` (zero error, empty tracks).
pub fn write_points(points: &[SfmPoint]) -> String {
    let mut s = String::from("# 3D point list with one line of data per point:\n");
    s.push_str("#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n");
    for p in points {
        let c = p.color.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} 0",
            p.id, p.position.x, p.position.y, p.position.z, c.x, c.y, c.z
        );
    }
    s
}

/// Reads a COLMAP text model. Image paths are set to the bare image names;
/// callers resolve them against their image directory.
pub fn load_colmap_text(dir: &Path) -> Result<Dataset> {
    let read = |name: &str| {
        let p = dir.join(name);
        read_text(&p).map(|t| (t, p.display().to_string()))
    };
    let (text, path) = read("cameras.txt")?;
    let cameras = parse_cameras(&text, &path)?;
    let (text, path) = read("images.txt")?;
    let images = parse_images(&text, &path)?;
    let (text, path) = read("points3D.txt")?;
    let points = parse_points(&text, &path)?;

    let index: HashMap<u64, usize> = cameras.iter().enumerate().map(|(i, c)| (c.id, i)).collect();
    let views = images
        .into_iter()
        .map(|im| {
            let camera = *index.get(&im.camera_id).ok_or_else(|| {
                Error::parse(
                    &path,
                    format!("image {} references unknown camera {}", im.name, im.camera_id),
                )
            })?;
            Ok(View {
                image_path: im.name.clone().into(),
                name: im.name,
                camera,
                rotation: im.rotation,
                translation: im.translation,
                image: None,
                observations: im.observations,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        cameras,
        views,
        points,
    })
}
