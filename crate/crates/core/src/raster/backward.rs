//! Reverse pass. Per pixel the contributor list is recomputed front to back
//! from the scene, then gradients flow back through compositing, the filtered
//! falloff, the Gabor color and the ray/plane intersection. Each tile
//! accumulates into a private buffer; buffers are summed in tile order.

use nalgebra::{Matrix2x3, Matrix3, Vector3, Vector4};
use rayon::prelude::*;

use super::bin::{bin_prepared, tile_grid};
use super::{camera_forward, config, evaluate_hit, prepare, Hit, PixelRay, PreparedSplat};
use crate::error::{Error, Result};
use crate::gabor::{ColorModel, ColorParamGrads, FalloffBranch, Mode, SCREEN_SIGMA};
use crate::geometry::Camera;
use crate::scene::{self, param_name, Scene};

/// Upstream gradients of a scalar loss with respect to every render buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputGrads {
    pub width: usize,
    pub height: usize,
    pub color: Vec<f64>,
    pub accum_alpha: Vec<f64>,
    pub expected_depth: Vec<f64>,
    pub normal_map: Vec<f64>,
    pub distortion: Vec<f64>,
}

impl OutputGrads {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        OutputGrads {
            width,
            height,
            color: vec![0.0; 3 * n],
            accum_alpha: vec![0.0; n],
            expected_depth: vec![0.0; n],
            normal_map: vec![0.0; 3 * n],
            distortion: vec![0.0; n],
        }
    }

    fn pixel_is_zero(&self, i: usize) -> bool {
        self.color[3 * i..3 * i + 3].iter().all(|&g| g == 0.0)
            && self.normal_map[3 * i..3 * i + 3].iter().all(|&g| g == 0.0)
            && self.accum_alpha[i] == 0.0
            && self.expected_depth[i] == 0.0
            && self.distortion[i] == 0.0
    }
}

/// Loss gradient with respect to every raw parameter, in the scene layout.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBuffer {
    pub n_waves: usize,
    pub grads: Vec<f64>,
}

impl GradientBuffer {
    pub fn zeros(scene: &Scene) -> Self {
        GradientBuffer {
            n_waves: scene.n_waves,
            grads: vec![0.0; scene.params.len()],
        }
    }

    pub fn prim(&self, i: usize) -> &[f64] {
        let s = scene::stride(self.n_waves);
        &self.grads[i * s..(i + 1) * s]
    }

    pub fn check_finite(&self) -> Result<()> {
        let s = scene::stride(self.n_waves);
        match self.grads.iter().position(|g| !g.is_finite()) {
            None => Ok(()),
            Some(k) => Err(Error::NonFiniteGradient {
                primitive: k / s,
                parameter: param_name(k % s, self.n_waves),
            }),
        }
    }
}

// Activated-space accumulator layout.
const A_POS: usize = 0;
const A_R0: usize = 3;
const A_R1: usize = 6;
const A_R2: usize = 9;
const A_SCALE: usize = 12;
const A_ALPHA: usize = 14;
const A_COLOR_A: usize = 15;
const A_COLOR_B: usize = 18;
const A_WAVES: usize = 21;

fn act_stride(n_waves: usize) -> usize {
    A_WAVES + 3 * n_waves
}

struct Contribution {
    slot: usize,
    splat: usize,
    hit: Hit,
    transmittance: f64,
    color: Vector3<f64>,
}

/// Gradient of the loss with respect to all raw scene parameters.
pub fn render_backward(
    scene: &Scene,
    camera: &Camera,
    mode: Mode,
    grads: &OutputGrads,
) -> Result<GradientBuffer> {
    if grads.width != camera.width || grads.height != camera.height {
        return Err(Error::Dimension(format!(
            "output gradients {}x{} for a {}x{} camera",
            grads.width, grads.height, camera.width, camera.height
        )));
    }
    let model = ColorModel::new(mode, scene.n_waves)?;
    let splats = prepare(scene, camera)?;
    let ts = config::TILE_SIZE;
    let tiles = bin_prepared(&splats, camera, ts);
    let (tiles_x, _) = tile_grid(camera, ts);
    let forward = camera_forward(camera);
    let jacobians: Vec<Matrix2x3<f64>> = splats
        .iter()
        .map(|s| camera.project_jacobian(&s.prim.frame.center))
        .collect();
    let stride = act_stride(scene.n_waves);
    let ctx = Context {
        camera,
        splats: &splats,
        jacobians: &jacobians,
        model: &model,
        grads,
        stride,
        n_waves: scene.n_waves,
    };

    let partials: Vec<Vec<f64>> = tiles
        .par_iter()
        .enumerate()
        .map(|(tile, list)| {
            let mut acc = vec![0.0; list.len() * stride];
            if list.is_empty() {
                return acc;
            }
            let (x0, y0) = ((tile % tiles_x) * ts, (tile / tiles_x) * ts);
            let x1 = (x0 + ts).min(camera.width);
            let y1 = (y0 + ts).min(camera.height);
            let mut contribs = Vec::new();
            for y in y0..y1 {
                for x in x0..x1 {
                    let idx = y * camera.width + x;
                    if grads.pixel_is_zero(idx) {
                        continue;
                    }
                    let pr = PixelRay::new(camera, &forward, x, y);
                    ctx.backward_pixel(list, idx, &pr, &mut contribs, &mut acc);
                }
            }
            acc
        })
        .collect();

    let mut act = vec![0.0; splats.len() * stride];
    for (list, acc) in tiles.iter().zip(&partials) {
        for (slot, &k) in list.iter().enumerate() {
            let dst = &mut act[k * stride..(k + 1) * stride];
            for (d, s) in dst.iter_mut().zip(&acc[slot * stride..(slot + 1) * stride]) {
                *d += s;
            }
        }
    }

    let mut out = GradientBuffer::zeros(scene);
    for (k, splat) in splats.iter().enumerate() {
        to_raw(
            scene,
            splat,
            &act[k * stride..(k + 1) * stride],
            &mut out.grads[splat.index * scene.stride()..(splat.index + 1) * scene.stride()],
        );
    }
    out.check_finite()?;
    Ok(out)
}

/// Chains activated-space gradients through the raw-parameter activations.
fn to_raw(scene: &Scene, splat: &PreparedSplat, act: &[f64], raw_grad: &mut [f64]) {
    let n = scene.n_waves;
    let raw = scene.prim(splat.index);
    let prim = &splat.prim;
    raw_grad[scene::POSITION..scene::POSITION + 3].copy_from_slice(&act[A_POS..A_POS + 3]);

    let grad_r = Matrix3::from_columns(&[
        Vector3::from_column_slice(&act[A_R0..A_R0 + 3]),
        Vector3::from_column_slice(&act[A_R1..A_R1 + 3]),
        Vector3::from_column_slice(&act[A_R2..A_R2 + 3]),
    ]);
    let quat = Vector4::from_column_slice(&raw[scene::ROTATION..scene::ROTATION + 4]);
    let g_quat = crate::geometry::rotation_grad_to_quaternion(&quat, &grad_r);
    raw_grad[scene::ROTATION..scene::ROTATION + 4].copy_from_slice(g_quat.as_slice());

    raw_grad[scene::SCALE] = act[A_SCALE] * prim.frame.scale_u;
    raw_grad[scene::SCALE + 1] = act[A_SCALE + 1] * prim.frame.scale_v;
    raw_grad[scene::OPACITY] = act[A_ALPHA] * prim.alpha * (1.0 - prim.alpha);
    for c in 0..3 {
        let (ca, cb) = (prim.color_a[c], prim.color_b[c]);
        raw_grad[scene::COLOR_A + c] = act[A_COLOR_A + c] * ca * (1.0 - ca);
        raw_grad[scene::COLOR_B + c] = act[A_COLOR_B + c] * cb * (1.0 - cb);
    }
    raw_grad[scene::WAVES..scene::WAVES + 3 * n].copy_from_slice(&act[A_WAVES..A_WAVES + 3 * n]);
}

struct Context<'a> {
    camera: &'a Camera,
    splats: &'a [PreparedSplat],
    jacobians: &'a [Matrix2x3<f64>],
    model: &'a ColorModel,
    grads: &'a OutputGrads,
    stride: usize,
    n_waves: usize,
}

impl Context<'_> {
    fn backward_pixel(
        &self,
        list: &[usize],
        idx: usize,
        pr: &PixelRay,
        contribs: &mut Vec<Contribution>,
        acc: &mut [f64],
    ) {
        contribs.clear();
        let mut transmittance = 1.0;
        for (slot, &k) in list.iter().enumerate() {
            let splat = &self.splats[k];
            let Some(hit) = evaluate_hit(splat, pr) else {
                continue;
            };
            contribs.push(Contribution {
                slot,
                splat: k,
                hit,
                transmittance,
                color: self.model.eval_color(hit.u, hit.v, &splat.prim),
            });
            transmittance *= 1.0 - hit.a;
            if transmittance < config::T_STOP {
                break;
            }
        }
        if contribs.is_empty() {
            return;
        }

        let g = self.grads;
        let g_color = Vector3::from_column_slice(&g.color[3 * idx..3 * idx + 3]);
        let g_normal = Vector3::from_column_slice(&g.normal_map[3 * idx..3 * idx + 3]);
        let (g_alpha, g_depth, g_dist) = (g.accum_alpha[idx], g.expected_depth[idx], g.distortion[idx]);

        let weights: Vec<f64> = contribs.iter().map(|c| c.hit.a * c.transmittance).collect();
        // Upstream gradient on each blend weight, and direct depth gradients.
        let mut g_weight = vec![0.0; contribs.len()];
        let mut g_z = vec![0.0; contribs.len()];
        for (i, c) in contribs.iter().enumerate() {
            let n_cam = self.splats[c.splat].normal_cam;
            g_weight[i] =
                g_color.dot(&c.color) + g_depth * c.hit.depth + g_normal.dot(&n_cam) + g_alpha;
            g_z[i] = weights[i] * g_depth;
            if g_dist != 0.0 {
                let (mut dw, mut dz) = (0.0, 0.0);
                for (j, o) in contribs.iter().enumerate() {
                    let diff = c.hit.depth - o.hit.depth;
                    dw += weights[j] * diff.abs();
                    dz += weights[j] * sign(diff);
                }
                g_weight[i] += g_dist * 2.0 * dw;
                g_z[i] += g_dist * 2.0 * weights[i] * dz;
            }
        }

        // w_i = a_i * prod_{j<i} (1 - a_j)
        let mut later = 0.0;
        for i in (0..contribs.len()).rev() {
            let c = &contribs[i];
            let g_a = g_weight[i] * c.transmittance - later / (1.0 - c.hit.a);
            later += g_weight[i] * weights[i];
            let slot = &mut acc[c.slot * self.stride..(c.slot + 1) * self.stride];
            self.chain_splat(c, g_a, weights[i], &g_color, g_z[i], &g_normal, pr, slot);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn chain_splat(
        &self,
        c: &Contribution,
        g_a: f64,
        weight: f64,
        g_color: &Vector3<f64>,
        g_z: f64,
        g_normal: &Vector3<f64>,
        pr: &PixelRay,
        acc: &mut [f64],
    ) {
        let splat = &self.splats[c.splat];
        let prim = &splat.prim;
        let frame = &prim.frame;
        let hit = &c.hit;
        let n = self.n_waves;

        acc[A_ALPHA] += g_a * hit.falloff;
        let g_falloff = g_a * prim.alpha;

        let (head, waves) = acc.split_at_mut(A_WAVES);
        let (weight_g, rest) = waves.split_at_mut(n);
        let (freq_g, phase_g) = rest.split_at_mut(n);
        let (head, color_b) = head.split_at_mut(A_COLOR_B);
        let (_, color_a) = head.split_at_mut(A_COLOR_A);
        let g_uv = self.model.backprop_color(
            hit.u,
            hit.v,
            prim,
            &(g_color * weight),
            &mut ColorParamGrads {
                color_a,
                color_b: &mut color_b[..3],
                weight: weight_g,
                frequency: freq_g,
                phase: phase_g,
            },
        );
        let (mut g_u, mut g_v) = (g_uv.x, g_uv.y);
        let mut g_q = Vector3::zeros();
        match hit.branch {
            FalloffBranch::Object => {
                g_u -= g_falloff * hit.u * hit.falloff;
                g_v -= g_falloff * hit.v * hit.falloff;
            }
            FalloffBranch::Screen => {
                // G = exp(-|d|^2 / 2 s^2) with d = pixel - proj(q)
                let scale = g_falloff * hit.falloff / (SCREEN_SIGMA * SCREEN_SIGMA);
                g_q += self.jacobians[c.splat].transpose() * hit.d_px * scale;
            }
        }

        let dir = pr.ray.direction;
        let rel = pr.ray.origin + dir * hit.t - frame.center;
        let d_dot_n = dir.dot(&frame.normal);
        let (su, sv) = (frame.scale_u, frame.scale_v);
        let g_t = g_z * dir.dot(&pr.forward)
            + g_u * dir.dot(&frame.tangent_u) / su
            + g_v * dir.dot(&frame.tangent_v) / sv;

        g_q += frame.normal * (g_t / d_dot_n) - frame.tangent_u * (g_u / su)
            - frame.tangent_v * (g_v / sv);
        let g_r0 = rel * (g_u / su);
        let g_r1 = rel * (g_v / sv);
        let g_r2 = rel * (-g_t / d_dot_n)
            + self.camera.rotation.transpose() * (g_normal * (weight * splat.flip));

        for k in 0..3 {
            acc[A_POS + k] += g_q[k];
            acc[A_R0 + k] += g_r0[k];
            acc[A_R1 + k] += g_r1[k];
            acc[A_R2 + k] += g_r2[k];
        }
        acc[A_SCALE] -= g_u * hit.u / su;
        acc[A_SCALE + 1] -= g_v * hit.v / sv;
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
