//! Transforms-style JSON camera files.
//!
//! ```text
//! { "fl_x": 120, "fl_y": 120, "cx": 64, "cy": 64, "w": 128, "h": 128,
//!   "frames": [ { "file_path": "images/view_000.png",
//!                 "transform_matrix": [[...4...], [...], [...], [...]] } ] }
//! ```
//!
//! Intrinsics may also be given per frame, overriding the shared ones.
//! `fl_y` defaults to `fl_x` and the principal point to the image center.
//! `transform_matrix` is camera-to-world in the OpenGL convention (x right,
//! y up, looking down -z); it is flipped to y-down / z-forward and inverted.

use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde_json::{Map, Value};

use super::{read_text, Dataset, Intrinsics, View};
use crate::error::{Error, Result};

fn field<'a>(obj: &'a Map<String, Value>, frame: &'a Map<String, Value>, key: &str) -> Option<&'a Value> {
    frame.get(key).or_else(|| obj.get(key))
}

fn number(v: Option<&Value>, key: &str, path: &str, whose: &str) -> Result<Option<f64>> {
    match v {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Number(n)) => match n.as_f64() {
            Some(x) if x.is_finite() => Ok(Some(x)),
            _ => Err(Error::parse(path, format!("{whose}: field {key:?} is not a finite number"))),
        },
        Some(_) => Err(Error::parse(path, format!("{whose}: field {key:?} must be a number"))),
    }
}

fn size(v: Option<&Value>, key: &str, path: &str, whose: &str) -> Result<usize> {
    let x = number(v, key, path, whose)?
        .ok_or_else(|| Error::parse(path, format!("{whose}: missing field {key:?}")))?;
    if !(x >= 1.0 && x.fract() == 0.0 && x <= 1e6) {
        return Err(Error::parse(path, format!("{whose}: field {key:?} must be a positive integer")));
    }
    Ok(x as usize)
}

fn matrix(v: Option<&Value>, path: &str, whose: &str) -> Result<Matrix4<f64>> {
    let rows = v
        .ok_or_else(|| Error::parse(path, format!("{whose}: missing field \"transform_matrix\"")))?
        .as_array()
        .filter(|r| r.len() == 4)
        .ok_or_else(|| Error::parse(path, format!("{whose}: transform_matrix must be 4x4")))?;
    let mut m = Matrix4::zeros();
    for (i, row) in rows.iter().enumerate() {
        let row = row
            .as_array()
            .filter(|r| r.len() == 4)
            .ok_or_else(|| Error::parse(path, format!("{whose}: transform_matrix must be 4x4")))?;
        for (j, x) in row.iter().enumerate() {
            m[(i, j)] = number(Some(x), "transform_matrix", path, whose)?.ok_or_else(|| {
                Error::parse(path, format!("{whose}: transform_matrix entry is null"))
            })?;
        }
    }
    Ok(m)
}

/// World-to-camera pose from an OpenGL camera-to-world matrix. The linear
/// part must be invertible; it is replaced by its closest rotation.
pub(crate) fn pose_from_c2w(c2w: &Matrix4<f64>) -> Option<(Matrix3<f64>, Vector3<f64>)> {
    let flip = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
    let lin: Matrix3<f64> = c2w.fixed_view::<3, 3>(0, 0).into_owned() * flip;
    let det = lin.determinant();
    if !(det.abs() > 1e-12) || !det.is_finite() {
        return None;
    }
    let svd = lin.svd(true, true);
    let r_c2w = svd.u? * svd.v_t?;
    if r_c2w.determinant() < 0.0 {
        return None;
    }
    let center: Vector3<f64> = c2w.fixed_view::<3, 1>(0, 3).into_owned();
    let rotation = r_c2w.transpose();
    Some((rotation, -(rotation * center)))
}

pub fn parse_transforms(text: &str, path: &str, base: &Path) -> Result<Dataset> {
    let root: Value = serde_json::from_str(text)
        .map_err(|e| Error::parse(path, format!("invalid JSON: {e}")))?;
    let obj = root
        .as_object()
        .ok_or_else(|| Error::parse(path, "top level must be an object"))?;
    let frames = obj
        .get("frames")
        .ok_or_else(|| Error::parse(path, "missing field \"frames\""))?
        .as_array()
        .ok_or_else(|| Error::parse(path, "\"frames\" must be an array"))?;
    if frames.is_empty() {
        return Err(Error::parse(path, "no frames"));
    }

    let mut ds = Dataset::default();
    for (i, frame) in frames.iter().enumerate() {
        let whose = format!("frame {i}");
        let fr = frame
            .as_object()
            .ok_or_else(|| Error::parse(path, format!("{whose}: must be an object")))?;
        let file = fr
            .get("file_path")
            .ok_or_else(|| Error::parse(path, format!("{whose}: missing field \"file_path\"")))?
            .as_str()
            .ok_or_else(|| Error::parse(path, format!("{whose}: file_path must be a string")))?;
        let w = size(field(obj, fr, "w"), "w", path, &whose)?;
        let h = size(field(obj, fr, "h"), "h", path, &whose)?;
        let fx = number(field(obj, fr, "fl_x"), "fl_x", path, &whose)?
            .ok_or_else(|| Error::parse(path, format!("{whose}: missing field \"fl_x\"")))?;
        let fy = number(field(obj, fr, "fl_y"), "fl_y", path, &whose)?.unwrap_or(fx);
        let cx = number(field(obj, fr, "cx"), "cx", path, &whose)?.unwrap_or(w as f64 / 2.0);
        let cy = number(field(obj, fr, "cy"), "cy", path, &whose)?.unwrap_or(h as f64 / 2.0);
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::parse(path, format!("{whose}: focal length must be positive")));
        }
        let c2w = matrix(fr.get("transform_matrix"), path, &whose)?;
        let (rotation, translation) = pose_from_c2w(&c2w)
            .ok_or_else(|| Error::parse(path, format!("{whose}: non-invertible transform_matrix")))?;

        let k = Intrinsics {
            id: ds.cameras.len() as u64,
            width: w,
            height: h,
            fx,
            fy,
            cx,
            cy,
        };
        let camera = match ds.cameras.iter().position(|c| {
            (c.width, c.height, c.fx, c.fy, c.cx, c.cy) == (k.width, k.height, k.fx, k.fy, k.cx, k.cy)
        }) {
            Some(c) => c,
            None => {
                ds.cameras.push(k);
                ds.cameras.len() - 1
            }
        };
        let rel = file.trim_start_matches("./");
        let mut image_path = base.join(rel);
        if image_path.extension().is_none() {
            image_path.set_extension("png");
        }
        let name = Path::new(rel)
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| rel.to_string());
        ds.views.push(View {
            name,
            camera,
            rotation,
            translation,
            image_path,
            image: None,
            observations: Vec::new(),
        });
    }
    Ok(ds)
}

pub fn load_transforms(file: &Path) -> Result<Dataset> {
    let text = read_text(file)?;
    let base = file.parent().unwrap_or(Path::new("."));
    parse_transforms(&text, &file.display().to_string(), base)
}
