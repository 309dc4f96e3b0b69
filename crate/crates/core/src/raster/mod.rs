//! Tiled CPU rasterizer for Gabor splats: culling and binning, front-to-back
//! alpha compositing, and the reverse pass that turns per-pixel output
//! gradients into per-primitive parameter gradients.
//!
//! Both passes parallelize over tiles. Every tile owns its outputs and its
//! partial gradients, and partials are summed in tile-index order, so results
//! are bitwise independent of the number of worker threads.

mod backward;
mod bin;
mod forward;

use nalgebra::{Point2, Vector2, Vector3};

use crate::error::Result;
use crate::gabor::{eval_alpha_hat_branch, ColorModel, FalloffBranch, GaborPrimitive};
use crate::geometry::{forward_axis, pixel_center, pixel_ray, ray_splat_intersect, Camera, Ray};
use crate::image::Image;
use crate::scene::Scene;

pub use backward::{render_backward, GradientBuffer, OutputGrads};
pub use bin::{cull_and_bin, sort_front_to_back, splat_bounds, PixelBounds};
pub use forward::{dominant_splats, reference_render, render_forward};

/// Rasterizer constants.
pub mod config {
    /// Tile edge length in pixels.
    pub const TILE_SIZE: usize = 16;
    /// Contributions with `alpha * G < ALPHA_MIN` are skipped.
    pub const ALPHA_MIN: f64 = 1.0 / 255.0;
    /// Compositing stops once transmittance falls below this value.
    pub const T_STOP: f64 = 1e-4;
    /// Primitives whose center depth is at or below this are culled.
    pub const NEAR: f64 = 0.01;
}

/// Per-pixel render buffers. `normal_map` holds camera-space normals.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// Linear, unclamped color.
    pub color: Image,
    /// `1 - final transmittance`.
    pub accum_alpha: Vec<f64>,
    /// `sum_k depth_k * w_k` with blend weights `w_k = a_k * T_k`.
    pub expected_depth: Vec<f64>,
    pub normal_map: Vec<f64>,
    /// `sum_{i,j} w_i w_j |z_i - z_j|` per pixel.
    pub distortion: Vec<f64>,
    pub contributors: Vec<u32>,
    /// Hash of the ordered contributor set and falloff branches per pixel.
    pub signature: Vec<u64>,
}

impl RenderOutput {
    pub(crate) fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        RenderOutput {
            width,
            height,
            color: Image::new(width, height),
            accum_alpha: vec![0.0; n],
            expected_depth: vec![0.0; n],
            normal_map: vec![0.0; 3 * n],
            distortion: vec![0.0; n],
            contributors: vec![0; n],
            signature: vec![0; n],
        }
    }

    /// Hash over all pixel signatures, in row-major order. Two renders with the
    /// same value used the same contributors and falloff branches everywhere.
    pub fn signature(&self) -> u64 {
        self.signature
            .iter()
            .fold(FNV_OFFSET, |h, &s| fnv_mix(h, s))
    }

    pub(crate) fn store(&mut self, idx: usize, px: &PixelResult) {
        self.color.data[3 * idx..3 * idx + 3].copy_from_slice(px.color.as_slice());
        self.accum_alpha[idx] = px.accum_alpha;
        self.expected_depth[idx] = px.depth;
        self.normal_map[3 * idx..3 * idx + 3].copy_from_slice(px.normal.as_slice());
        self.distortion[idx] = px.distortion;
        self.contributors[idx] = px.count;
        self.signature[idx] = px.signature;
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

fn fnv_mix(h: u64, x: u64) -> u64 {
    (h ^ x).wrapping_mul(0x0000_0100_0000_01b3)
}

/// A primitive after view-dependent setup.
#[derive(Clone, Debug)]
pub(crate) struct PreparedSplat {
    pub index: usize,
    pub prim: GaborPrimitive,
    /// Camera-space z of the center; the sort key.
    pub depth: f64,
    pub center_px: Point2<f64>,
    /// +1 or -1 so that `flip * normal` faces the camera.
    pub flip: f64,
    pub normal_cam: Vector3<f64>,
}

/// Activates and prepares every primitive that passes the near-plane and
/// opacity culls. Culling is part of the image model, shared by the tiled
/// and the reference renderer.
pub(crate) fn prepare(scene: &Scene, camera: &Camera) -> Result<Vec<PreparedSplat>> {
    let cam_center = camera.center();
    let mut out = Vec::with_capacity(scene.len());
    for index in 0..scene.len() {
        let prim = scene.activate(index)?;
        let depth = camera.to_camera(&prim.frame.center).z;
        if !(depth > config::NEAR) || prim.alpha < config::ALPHA_MIN {
            continue;
        }
        let center_px = camera
            .project(&prim.frame.center)
            .expect("center in front of the near plane");
        let facing = (prim.frame.center - cam_center).dot(&prim.frame.normal);
        let flip = if facing > 0.0 { -1.0 } else { 1.0 };
        let normal_cam = camera.rotation * (prim.frame.normal * flip);
        out.push(PreparedSplat {
            index,
            prim,
            depth,
            center_px,
            flip,
            normal_cam,
        });
    }
    Ok(out)
}

/// Ray through one pixel plus the quantities every splat test needs.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PixelRay {
    pub ray: Ray,
    pub center: Point2<f64>,
    pub forward: Vector3<f64>,
}

impl PixelRay {
    pub fn new(camera: &Camera, forward: &Vector3<f64>, x: usize, y: usize) -> Self {
        PixelRay {
            ray: pixel_ray(camera, x, y),
            center: pixel_center(x, y),
            forward: *forward,
        }
    }
}

pub(crate) fn camera_forward(camera: &Camera) -> Vector3<f64> {
    forward_axis(camera)
}

/// One splat's contribution at one pixel.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Hit {
    pub u: f64,
    pub v: f64,
    pub t: f64,
    pub depth: f64,
    pub falloff: f64,
    pub branch: FalloffBranch,
    pub d_px: Vector2<f64>,
    pub a: f64,
}

#[inline]
pub(crate) fn evaluate_hit(splat: &PreparedSplat, pr: &PixelRay) -> Option<Hit> {
    let hit = ray_splat_intersect(&pr.ray, &splat.prim.frame, &pr.forward)?;
    let d_px = pr.center - splat.center_px;
    let (falloff, branch) = eval_alpha_hat_branch(hit.u, hit.v, d_px);
    let a = splat.prim.alpha * falloff;
    if a < config::ALPHA_MIN {
        return None;
    }
    Some(Hit {
        u: hit.u,
        v: hit.v,
        t: hit.t,
        depth: hit.depth,
        falloff,
        branch,
        d_px,
        a,
    })
}

#[derive(Clone, Debug, Default)]
pub(crate) struct PixelResult {
    pub color: Vector3<f64>,
    pub accum_alpha: f64,
    pub depth: f64,
    pub normal: Vector3<f64>,
    pub distortion: f64,
    pub count: u32,
    pub signature: u64,
}

/// Scratch storage reused across pixels.
#[derive(Default)]
pub(crate) struct Scratch {
    weights: Vec<f64>,
    depths: Vec<f64>,
}

/// Front-to-back compositing of `order` (indices into `splats`) at one pixel.
pub(crate) fn composite_pixel(
    splats: &[PreparedSplat],
    order: impl Iterator<Item = usize>,
    pr: &PixelRay,
    model: &ColorModel,
    scratch: &mut Scratch,
) -> PixelResult {
    scratch.weights.clear();
    scratch.depths.clear();
    let mut out = PixelResult {
        signature: FNV_OFFSET,
        ..Default::default()
    };
    let mut transmittance = 1.0;
    for k in order {
        let splat = &splats[k];
        let Some(hit) = evaluate_hit(splat, pr) else {
            continue;
        };
        let w = hit.a * transmittance;
        out.color += model.eval_color(hit.u, hit.v, &splat.prim) * w;
        out.depth += hit.depth * w;
        out.normal += splat.normal_cam * w;
        let mut pair = 0.0;
        for (wj, zj) in scratch.weights.iter().zip(&scratch.depths) {
            pair += wj * (hit.depth - zj).abs();
        }
        out.distortion += 2.0 * w * pair;
        scratch.weights.push(w);
        scratch.depths.push(hit.depth);
        out.count += 1;
        let branch_bit = matches!(hit.branch, FalloffBranch::Screen) as u64;
        out.signature = fnv_mix(out.signature, ((splat.index as u64) << 1) | branch_bit);
        transmittance *= 1.0 - hit.a;
        if transmittance < config::T_STOP {
            break;
        }
    }
    out.accum_alpha = 1.0 - transmittance;
    out
}
