//! Training losses (L1, D-SSIM, depth distortion, normal consistency) and the
//! PSNR/SSIM evaluation metrics.
//!
//! Every differentiable loss returns its value together with the gradient
//! with respect to the render buffers it reads.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::image::Image;
use crate::raster::{OutputGrads, RenderOutput};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
const SSIM_C1: f64 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
const SSIM_C2: f64 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);

/// Pixels whose accumulated alpha is at or below this have no defined
/// normalized depth.
const DEPTH_ALPHA_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_dssim: f64,
    pub w_dist: f64,
    pub w_normal: f64,
    pub normal_start_iter: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_dssim: 0.2,
            w_dist: 1000.0,
            w_normal: 0.05,
            normal_start_iter: 7000,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.lambda_dssim) || self.lambda_dssim > 1.0 {
            return Err(Error::Config(format!(
                "lambda_dssim {} outside [0, 1]",
                self.lambda_dssim
            )));
        }
        if !ok(self.w_dist) || !ok(self.w_normal) {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Loss terms of one iteration. `normal` is zero while the term is gated off.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub l1: f64,
    pub dssim: f64,
    pub dist: f64,
    pub normal: f64,
}

/// Mean absolute difference and its gradient with respect to `rendered`.
pub fn l1_loss(rendered: &Image, target: &Image) -> Result<(f64, Vec<f64>)> {
    rendered.same_size(target)?;
    let n = rendered.data.len() as f64;
    let mut sum = 0.0;
    let grad = rendered
        .data
        .iter()
        .zip(&target.data)
        .map(|(r, t)| {
            let d = r - t;
            sum += d.abs();
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((sum / n, grad))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable "valid" correlation of a `h x w` plane with the SSIM window.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let src = &plane[y * w + x..y * w + x + SSIM_WINDOW];
            rows[y * ow + x] = src.iter().zip(k).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|j| rows[(y + j) * ow + x] * k[j]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: spreads a `(h-10) x (w-10)` map back onto `h x w`.
fn filter_valid_adjoint(map: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut cols = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = map[y * ow + x];
            for j in 0..SSIM_WINDOW {
                cols[(y + j) * ow + x] += v * k[j];
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = cols[y * ow + x];
            for i in 0..SSIM_WINDOW {
                out[y * w + x + i] += v * k[i];
            }
        }
    }
    out
}

fn check_window(img: &Image) -> Result<()> {
    if img.width < SSIM_WINDOW || img.height < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            width: img.width,
            height: img.height,
            window: SSIM_WINDOW,
        });
    }
    Ok(())
}

/// Mean SSIM over channels and valid window positions, with the gradient
/// with respect to `x` when `want_grad` is set.
fn ssim_impl(x: &Image, y: &Image, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    x.same_size(y)?;
    check_window(x)?;
    let (w, h) = (x.width, x.height);
    let k = gaussian_window();
    let count = ((w + 1 - SSIM_WINDOW) * (h + 1 - SSIM_WINDOW) * 3) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; x.data.len()]);
    for c in 0..3 {
        let (xp, yp) = (x.channel(c), y.channel(c));
        let xx: Vec<f64> = xp.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = yp.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = xp.iter().zip(&yp).map(|(a, b)| a * b).collect();
        let mx = filter_valid(&xp, w, h, &k);
        let my = filter_valid(&yp, w, h, &k);
        let exx = filter_valid(&xx, w, h, &k);
        let eyy = filter_valid(&yy, w, h, &k);
        let exy = filter_valid(&xy, w, h, &k);
        let m = mx.len();
        let (mut d_mx, mut d_exx, mut d_exy) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        for i in 0..m {
            let (ux, uy) = (mx[i], my[i]);
            let vx = exx[i] - ux * ux;
            let vy = eyy[i] - uy * uy;
            let cxy = exy[i] - ux * uy;
            let n1 = 2.0 * ux * uy + SSIM_C1;
            let n2 = 2.0 * cxy + SSIM_C2;
            let d1 = ux * ux + uy * uy + SSIM_C1;
            let d2 = vx + vy + SSIM_C2;
            let s = n1 * n2 / (d1 * d2);
            total += s;
            if want_grad {
                d_mx[i] = s * (2.0 * uy / n1 - 2.0 * ux / d1 - 2.0 * uy / n2 + 2.0 * ux / d2) / count;
                d_exx[i] = -s / d2 / count;
                d_exy[i] = 2.0 * s / n2 / count;
            }
        }
        if let Some(g) = grad.as_mut() {
            let a = filter_valid_adjoint(&d_mx, w, h, &k);
            let b = filter_valid_adjoint(&d_exx, w, h, &k);
            let cc = filter_valid_adjoint(&d_exy, w, h, &k);
            for p in 0..w * h {
                g[3 * p + c] = a[p] + 2.0 * b[p] * xp[p] + cc[p] * yp[p];
            }
        }
    }
    Ok((total / count, grad))
}

/// Structural similarity on images as given (no clamping).
pub fn ssim_raw(x: &Image, y: &Image) -> Result<f64> {
    Ok(ssim_impl(x, y, false)?.0)
}

/// SSIM metric: both images are clamped to [0, 1] first.
pub fn ssim(rendered: &Image, target: &Image) -> Result<f64> {
    ssim_raw(&rendered.clamped(), &target.clamped())
}

/// `(1 - SSIM) / 2` on unclamped images, with the gradient wrt `rendered`.
pub fn dssim_loss(rendered: &Image, target: &Image) -> Result<(f64, Vec<f64>)> {
    let (s, grad) = ssim_impl(rendered, target, true)?;
    let grad = grad.expect("gradient requested").into_iter().map(|g| -g / 2.0).collect();
    Ok(((1.0 - s) / 2.0, grad))
}

/// PSNR in dB on clamped images; `f64::INFINITY` for identical inputs.
pub fn psnr(rendered: &Image, target: &Image) -> Result<f64> {
    rendered.same_size(target)?;
    let n = rendered.data.len() as f64;
    let mse = rendered
        .data
        .iter()
        .zip(&target.data)
        .map(|(a, b)| {
            let d = a.clamp(0.0, 1.0) - b.clamp(0.0, 1.0);
            d * d
        })
        .sum::<f64>()
        / n;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Formats a metric, writing "inf" for the identical-image sentinel.
pub fn format_metric(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

/// Pairwise depth spread along one ray: `sum_{i,j} w_i w_j |z_i - z_j|`.
pub fn pixel_distortion(weights: &[f64], depths: &[f64]) -> f64 {
    let mut d = 0.0;
    for (wi, zi) in weights.iter().zip(depths) {
        for (wj, zj) in weights.iter().zip(depths) {
            d += wi * wj * (zi - zj).abs();
        }
    }
    d
}

/// Mean per-pixel distortion of a render and its (constant) pixel gradient.
pub fn distortion_loss(render: &RenderOutput) -> (f64, f64) {
    let n = render.distortion.len() as f64;
    (render.distortion.iter().sum::<f64>() / n, 1.0 / n)
}

/// Normals from the alpha-normalized depth map, one per interior pixel
/// (zero where undefined), facing the camera.
pub fn depth_normals(render: &RenderOutput, camera: &Camera) -> Vec<Vector3<f64>> {
    let geo = DepthGeometry::new(render, camera);
    let mut normals = vec![Vector3::zeros(); render.width * render.height];
    for y in 1..render.height.saturating_sub(1) {
        for x in 1..render.width.saturating_sub(1) {
            if let Some((n, _, _, _)) = geo.normal(x, y) {
                normals[y * render.width + x] = n;
            }
        }
    }
    normals
}

struct DepthGeometry<'a> {
    render: &'a RenderOutput,
    camera: &'a Camera,
}

impl<'a> DepthGeometry<'a> {
    fn new(render: &'a RenderOutput, camera: &'a Camera) -> Self {
        DepthGeometry { render, camera }
    }

    fn ray(&self, x: usize, y: usize) -> Vector3<f64> {
        self.camera
            .camera_direction(crate::geometry::pixel_center(x, y))
    }

    fn depth(&self, x: usize, y: usize) -> f64 {
        let i = y * self.render.width + x;
        let a = self.render.accum_alpha[i];
        if a > DEPTH_ALPHA_EPS {
            self.render.expected_depth[i] / a
        } else {
            0.0
        }
    }

    fn point(&self, x: usize, y: usize) -> Vector3<f64> {
        self.ray(x, y) * self.depth(x, y)
    }

    /// Unit normal plus the tangents and the unnormalized cross product.
    fn normal(
        &self,
        x: usize,
        y: usize,
    ) -> Option<(Vector3<f64>, Vector3<f64>, Vector3<f64>, f64)> {
        let dx = self.point(x + 1, y) - self.point(x - 1, y);
        let dy = self.point(x, y + 1) - self.point(x, y - 1);
        let c = dy.cross(&dx);
        let len = c.norm();
        if !(len > 1e-12) {
            return None;
        }
        Some((c / len, dx, dy, len))
    }
}

/// `mean over interior pixels of (A - n_render . N_depth)`, which equals
/// `sum_k w_k (1 - n_k . N_depth)` per pixel. Gradients flow into the normal
/// map, the accumulated alpha and (through the depth normals) the depth map.
pub fn normal_consistency_loss(
    render: &RenderOutput,
    camera: &Camera,
    grads: Option<&mut OutputGrads>,
    scale: f64,
) -> f64 {
    let (w, h) = (render.width, render.height);
    if w < 3 || h < 3 {
        return 0.0;
    }
    let geo = DepthGeometry::new(render, camera);
    let count = ((w - 2) * (h - 2)) as f64;
    let mut total = 0.0;
    let mut grads = grads;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let a = render.accum_alpha[i];
            let n_render = Vector3::from_column_slice(&render.normal_map[3 * i..3 * i + 3]);
            let normal = geo.normal(x, y);
            let dot = normal.map_or(0.0, |(n, ..)| n_render.dot(&n));
            total += a - dot;
            let Some(g) = grads.as_deref_mut() else {
                continue;
            };
            let s = scale / count;
            g.accum_alpha[i] += s;
            let Some((n, dx, dy, len)) = normal else {
                continue;
            };
            for c in 0..3 {
                g.normal_map[3 * i + c] -= s * n[c];
            }
            // d(-n_render . n)/dc with n = c/|c|, c = dy x dx
            let g_n = -n_render * s;
            let g_c = (Matrix3::identity() - n * n.transpose()) * g_n / len;
            let g_dy = dx.cross(&g_c);
            let g_dx = g_c.cross(&dy);
            let mut push = |px: usize, py: usize, gp: Vector3<f64>| {
                let j = py * w + px;
                let alpha = render.accum_alpha[j];
                if alpha > DEPTH_ALPHA_EPS {
                    let g_depth = gp.dot(&geo.ray(px, py));
                    g.expected_depth[j] += g_depth / alpha;
                    g.accum_alpha[j] -= g_depth * render.expected_depth[j] / (alpha * alpha);
                }
            };
            push(x + 1, y, g_dx);
            push(x - 1, y, -g_dx);
            push(x, y + 1, g_dy);
            push(x, y - 1, -g_dy);
        }
    }
    total / count
}

/// Weighted training objective and its gradient with respect to the render
/// buffers. The normal term is active from `normal_start_iter` on.
pub fn training_loss(
    render: &RenderOutput,
    target: &Image,
    camera: &Camera,
    weights: &LossWeights,
    iteration: usize,
) -> Result<(LossBreakdown, OutputGrads)> {
    let mut grads = OutputGrads::zeros(render.width, render.height);
    let lambda = weights.lambda_dssim;
    let (l1, g_l1) = l1_loss(&render.color, target)?;
    let (dssim, g_dssim) = if lambda > 0.0 {
        dssim_loss(&render.color, target)?
    } else {
        (0.0, vec![0.0; g_l1.len()])
    };
    for (g, (a, b)) in grads.color.iter_mut().zip(g_l1.iter().zip(&g_dssim)) {
        *g = (1.0 - lambda) * a + lambda * b;
    }
    let (dist, g_dist) = distortion_loss(render);
    if weights.w_dist > 0.0 {
        grads.distortion.fill(weights.w_dist * g_dist);
    }
    let normal = if iteration >= weights.normal_start_iter && weights.w_normal > 0.0 {
        normal_consistency_loss(render, camera, Some(&mut grads), weights.w_normal)
    } else {
        0.0
    };
    let total = (1.0 - lambda) * l1 + lambda * dssim + weights.w_dist * dist + weights.w_normal * normal;
    Ok((
        LossBreakdown {
            total,
            l1,
            dssim,
            dist,
            normal,
        },
        grads,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
        Image::from_data(w, h, (0..w * h * 3).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    fn constant_ssim(a: f64, b: f64) -> f64 {
        (2.0 * a * b + SSIM_C1) * SSIM_C2 / ((a * a + b * b + SSIM_C1) * SSIM_C2)
    }

    #[test]
    fn l1_examples_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = random_image(&mut rng, 5, 4);
        assert_eq!(l1_loss(&a, &a).unwrap().0, 0.0);
        let zeros = Image::new(3, 3);
        let ones = Image::filled(3, 3, [1.0; 3]);
        assert_eq!(l1_loss(&zeros, &ones).unwrap().0, 1.0);
        let b = random_image(&mut rng, 5, 4);
        let (_, g) = l1_loss(&a, &b).unwrap();
        let h = 1e-6;
        for k in [0, 7, 59] {
            let mut p = a.clone();
            let mut m = a.clone();
            p.data[k] += h;
            m.data[k] -= h;
            let fd = (l1_loss(&p, &b).unwrap().0 - l1_loss(&m, &b).unwrap().0) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-9);
        }
        assert!(matches!(l1_loss(&a, &zeros), Err(Error::Dimension(_))));
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        for (a, b) in [(0.2, 0.7), (0.5, 0.5), (0.0, 1.0), (0.9, 0.4)] {
            let x = Image::filled(13, 12, [a; 3]);
            let y = Image::filled(13, 12, [b; 3]);
            let s = ssim(&x, &y).unwrap();
            assert!((s - constant_ssim(a, b)).abs() < 1e-9, "{a} {b}: {s}");
        }
        let x = Image::filled(11, 11, [0.25; 3]);
        let y = Image::filled(11, 11, [0.75; 3]);
        let (d, _) = dssim_loss(&x, &y).unwrap();
        assert!((d - (1.0 - constant_ssim(0.25, 0.75)) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_identity_and_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, 16, 14);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(dssim_loss(&a, &a).unwrap().0.abs() < 1e-12, true);
        let neg = Image::from_data(16, 14, a.data.iter().map(|v| 1.0 - v).collect()).unwrap();
        assert!(ssim(&a, &neg).unwrap() < 0.0);
        let small = Image::new(10, 20);
        assert!(matches!(ssim(&small, &small), Err(Error::ImageTooSmall { .. })));
    }

    #[test]
    fn ssim_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_image(&mut rng, 12, 15);
        let b = random_image(&mut rng, 12, 15);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-14);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn dssim_gradient_matches_finite_differences() {
        let (w, h) = (14, 12);
        let mut checker = Image::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let v = ((x / 2 + y / 2) % 2) as f64;
                checker.set_pixel(x, y, &Vector3::new(v, 1.0 - v, v));
            }
        }
        let target = checker.clone();
        let rendered =
            Image::from_data(w, h, checker.data.iter().map(|v| 1.0 - v).collect()).unwrap();
        let (value, g) = dssim_loss(&rendered, &target).unwrap();
        assert!(value > 0.0 && value <= 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let soft = random_image(&mut rng, w, h);
        let h_step = 1e-6;
        for (img, grad) in [(&rendered, &g), (&soft, &dssim_loss(&soft, &target).unwrap().1)] {
            for k in (0..img.data.len()).step_by(7) {
                let mut p = img.clone();
                let mut m = img.clone();
                p.data[k] += h_step;
                m.data[k] -= h_step;
                let fd = (dssim_loss(&p, &target).unwrap().0 - dssim_loss(&m, &target).unwrap().0)
                    / (2.0 * h_step);
                let err = (fd - grad[k]).abs();
                assert!(
                    err <= 1e-4 * fd.abs().max(grad[k].abs()) || err < 1e-9,
                    "pixel {k}: fd {fd} analytic {}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn psnr_examples() {
        let a = Image::filled(4, 4, [0.5; 3]);
        let b = Image::filled(4, 4, [0.6; 3]);
        let p = psnr(&a, &b).unwrap();
        assert!((p - 20.0).abs() < 1e-9, "{p}");
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert_eq!(format_metric(f64::INFINITY), "inf");
        let zeros = Image::new(4, 4);
        let ones = Image::filled(4, 4, [1.0; 3]);
        assert_eq!(psnr(&zeros, &ones).unwrap(), 0.0);
        // clamping happens before comparison
        let over = Image::filled(4, 4, [3.0; 3]);
        assert_eq!(psnr(&over, &ones).unwrap(), f64::INFINITY);
        assert_eq!(psnr_from_mse(0.01), 20.0);
    }

    #[test]
    fn pixel_distortion_examples() {
        assert_eq!(pixel_distortion(&[0.8], &[3.0]), 0.0);
        assert_eq!(pixel_distortion(&[0.5, 0.5], &[2.0, 2.0]), 0.0);
        assert_eq!(pixel_distortion(&[0.5, 0.5], &[1.0, 3.0]), 1.0);
    }
}
