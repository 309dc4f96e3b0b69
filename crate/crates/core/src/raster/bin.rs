//! Screen-space bounds, tile binning and depth ordering.

use nalgebra::{Matrix3, Vector3};

use super::{config, prepare, PreparedSplat};
use crate::error::Result;
use crate::gabor::SCREEN_SIGMA;
use crate::geometry::Camera;
use crate::scene::Scene;

/// Axis-aligned bounds in continuous image coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelBounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

const BOUNDS_MARGIN: f64 = 1e-6;

/// Region outside of which the splat's contribution `alpha * G_hat` is below
/// the skip threshold. The object-space part is the exact bounding box of the
/// projected ellipse at that threshold; the screen-space part is the disk of
/// the low-pass term. Returns `None` when the splat can never contribute.
pub fn splat_bounds(
    camera: &Camera,
    center: &Vector3<f64>,
    tangent_u: &Vector3<f64>,
    tangent_v: &Vector3<f64>,
    scales: [f64; 2],
    alpha: f64,
) -> Option<PixelBounds> {
    if alpha < config::ALPHA_MIN {
        return None;
    }
    // alpha * exp(-r^2 / 2) >= ALPHA_MIN  <=>  r^2 <= 2 ln(alpha / ALPHA_MIN)
    let r2 = 2.0 * (alpha / config::ALPHA_MIN).ln().max(0.0);
    let radius = r2.sqrt() * (1.0 + 1e-9) + 1e-12;
    let center_cam = camera.to_camera(center);
    let k = Matrix3::new(
        camera.fx, 0.0, camera.cx, 0.0, camera.fy, camera.cy, 0.0, 0.0, 1.0,
    );
    let a = k * (camera.rotation * tangent_u) * (scales[0] * radius);
    let b = k * (camera.rotation * tangent_v) * (scales[1] * radius);
    let c = k * center_cam;

    let whole = PixelBounds {
        x_min: f64::NEG_INFINITY,
        x_max: f64::INFINITY,
        y_min: f64::NEG_INFINITY,
        y_max: f64::INFINITY,
    };
    // Depth over the disk ranges over c.z +- |(a.z, b.z)|.
    let min_depth = c.z - (a.z * a.z + b.z * b.z).sqrt();
    let object = if min_depth > 1e-9 * c.z.abs().max(1.0) {
        // x is an extreme iff the line x*m2 - m0 is tangent to the unit circle,
        // a quadratic in x with the form diag(1, 1, -1).
        let form = |m: (f64, f64, f64), n: (f64, f64, f64)| m.0 * n.0 + m.1 * n.1 - m.2 * n.2;
        let row = |i: usize| (a[i], b[i], c[i]);
        let m2 = row(2);
        let aa = form(m2, m2);
        let extent = |i: usize| {
            let mi = row(i);
            let mid = form(mi, m2) / aa;
            let half = (mid * mid - form(mi, mi) / aa).max(0.0).sqrt();
            (mid - half, mid + half)
        };
        let (x_min, x_max) = extent(0);
        let (y_min, y_max) = extent(1);
        PixelBounds {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    } else {
        whole
    };

    let screen_r = SCREEN_SIGMA * r2.sqrt() * (1.0 + 1e-9);
    let (sx, sy) = if center_cam.z > 0.0 {
        (
            camera.fx * center_cam.x / center_cam.z + camera.cx,
            camera.fy * center_cam.y / center_cam.z + camera.cy,
        )
    } else {
        return Some(whole);
    };
    Some(PixelBounds {
        x_min: object.x_min.min(sx - screen_r) - BOUNDS_MARGIN,
        x_max: object.x_max.max(sx + screen_r) + BOUNDS_MARGIN,
        y_min: object.y_min.min(sy - screen_r) - BOUNDS_MARGIN,
        y_max: object.y_max.max(sy + screen_r) + BOUNDS_MARGIN,
    })
}

/// Inclusive pixel-index range whose centers fall inside `bounds`, clipped to
/// the image. `None` if empty.
fn pixel_range(bounds: &PixelBounds, width: usize, height: usize) -> Option<[usize; 4]> {
    let lo = |v: f64| (v - 0.5).ceil().max(0.0);
    let hi = |v: f64, n: usize| (v - 0.5).floor().min(n as f64 - 1.0);
    let (x0, x1) = (lo(bounds.x_min), hi(bounds.x_max, width));
    let (y0, y1) = (lo(bounds.y_min), hi(bounds.y_max, height));
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    Some([x0 as usize, x1 as usize, y0 as usize, y1 as usize])
}

pub(crate) fn tile_grid(camera: &Camera, tile_size: usize) -> (usize, usize) {
    (
        camera.width.div_ceil(tile_size),
        camera.height.div_ceil(tile_size),
    )
}

/// Bins prepared splats (by position in `splats`) into tiles, each list in
/// front-to-back order.
pub(crate) fn bin_prepared(
    splats: &[PreparedSplat],
    camera: &Camera,
    tile_size: usize,
) -> Vec<Vec<usize>> {
    let (tx, ty) = tile_grid(camera, tile_size);
    let mut tiles = vec![Vec::new(); tx * ty];
    for (k, s) in splats.iter().enumerate() {
        let f = &s.prim.frame;
        let Some(bounds) = splat_bounds(
            camera,
            &f.center,
            &f.tangent_u,
            &f.tangent_v,
            [f.scale_u, f.scale_v],
            s.prim.alpha,
        ) else {
            continue;
        };
        let Some([x0, x1, y0, y1]) = pixel_range(&bounds, camera.width, camera.height) else {
            continue;
        };
        for ty_i in y0 / tile_size..=y1 / tile_size {
            for tx_i in x0 / tile_size..=x1 / tile_size {
                tiles[ty_i * tx + tx_i].push(k);
            }
        }
    }
    let depths: Vec<f64> = splats.iter().map(|s| s.depth).collect();
    let ids: Vec<usize> = splats.iter().map(|s| s.index).collect();
    for list in &mut tiles {
        sort_by_key(list, &depths, &ids);
    }
    tiles
}

fn sort_by_key(list: &mut [usize], depths: &[f64], ids: &[usize]) {
    list.sort_by(|&a, &b| depths[a].total_cmp(&depths[b]).then(ids[a].cmp(&ids[b])));
}

/// Orders primitive indices by ascending center depth, ties by index.
pub fn sort_front_to_back(list: &mut [usize], depths: &[f64]) {
    list.sort_by(|&a, &b| depths[a].total_cmp(&depths[b]).then(a.cmp(&b)));
}

/// Per-tile lists of primitive indices (row-major tiles), front to back.
pub fn cull_and_bin(scene: &Scene, camera: &Camera, tile_size: usize) -> Result<Vec<Vec<usize>>> {
    let splats = prepare(scene, camera)?;
    let tiles = bin_prepared(&splats, camera, tile_size.max(1));
    Ok(tiles
        .into_iter()
        .map(|list| list.into_iter().map(|k| splats[k].index).collect())
        .collect())
}
