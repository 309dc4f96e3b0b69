//! Pinhole cameras, viewing rays, quaternion frames and the ray/splat-plane
//! intersection that yields local splat coordinates.
//!
//! Camera convention: x right, y down, z forward. `rotation`/`translation`
//! map world points into camera space (`x_cam = R * x_world + t`), the same
//! layout COLMAP writes. Pixel `(i, j)` is sampled at its center
//! `(i + 0.5, j + 0.5)` in continuous image coordinates.

use nalgebra::{Matrix3, Point2, Vector3, Vector4};

use crate::error::{Error, Result};

/// Rays whose direction is this close to the splat plane count as parallel.
pub const PARALLEL_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation.
    pub translation: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

/// Oriented plane patch of a splat: `p(u, v) = center + u*s_u*t_u + v*s_v*t_v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplatFrame {
    pub center: Vector3<f64>,
    pub tangent_u: Vector3<f64>,
    pub tangent_v: Vector3<f64>,
    pub scale_u: f64,
    pub scale_v: f64,
    pub normal: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneHit {
    pub u: f64,
    pub v: f64,
    /// Distance along the (unit) ray.
    pub t: f64,
    /// Camera-space z of the hit point.
    pub depth: f64,
}

impl Camera {
    pub fn new(
        width: usize,
        height: usize,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let camera = Camera {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
        };
        camera.validate()?;
        Ok(camera)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config(format!(
                "camera size {}x{} must be at least 1x1",
                self.width, self.height
            )));
        }
        let positive = |f: f64| f > 0.0 && f.is_finite();
        if !positive(self.fx) || !positive(self.fy) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::Config(format!(
                "invalid intrinsics fx={} fy={} cx={} cy={}",
                self.fx, self.fy, self.cx, self.cy
            )));
        }
        let err = (self.rotation * self.rotation.transpose() - Matrix3::identity()).abs().max();
        if !(err <= 1e-9) || self.rotation.determinant() < 0.0 {
            return Err(Error::Config(format!(
                "camera rotation is not a proper rotation (orthonormality error {err:e})"
            )));
        }
        if !self.translation.iter().all(|x| x.is_finite()) {
            return Err(Error::Config("camera translation is not finite".into()));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`; `up` is the approximate world up
    /// direction (image y points away from it).
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        width: usize,
        height: usize,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if !(right.norm() > 1e-9) {
            return Err(Error::Config("look_at: up is parallel to the view direction".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation =
            Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Camera::new(width, height, fx, fy, cx, cy, rotation, translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }

    /// Camera-space direction (not normalized) through a continuous image point.
    pub fn camera_direction(&self, image: Point2<f64>) -> Vector3<f64> {
        Vector3::new(
            (image.x - self.cx) / self.fx,
            (image.y - self.cy) / self.fy,
            1.0,
        )
    }

    /// Projects a world point; `None` when it is not strictly in front of the camera.
    pub fn project(&self, world: &Vector3<f64>) -> Option<Point2<f64>> {
        let p = self.to_camera(world);
        if p.z <= 0.0 {
            return None;
        }
        Some(Point2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Jacobian of the image projection with respect to the world point.
    pub fn project_jacobian(&self, world: &Vector3<f64>) -> nalgebra::Matrix2x3<f64> {
        let p = self.to_camera(world);
        let iz = 1.0 / p.z;
        let j = nalgebra::Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * p.x * iz * iz,
            0.0,
            self.fy * iz,
            -self.fy * p.y * iz * iz,
        );
        j * self.rotation
    }
}

pub fn pixel_center(px: usize, py: usize) -> Point2<f64> {
    Point2::new(px as f64 + 0.5, py as f64 + 0.5)
}

/// World-space ray through the center of pixel `(px, py)`.
pub fn pixel_ray(camera: &Camera, px: usize, py: usize) -> Ray {
    let dir_cam = camera.camera_direction(pixel_center(px, py)).normalize();
    Ray {
        origin: camera.center(),
        direction: camera.rotation.transpose() * dir_cam,
    }
}

/// Rotation matrix of a unit quaternion stored as `(w, x, y, z)`.
pub fn rotation_matrix(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Orthonormal right-handed frame `(t_u, t_v, n)` from the columns of the
/// rotation of the normalized quaternion.
pub fn frame_from_quaternion(
    quat: &Vector4<f64>,
) -> Result<(Vector3<f64>, Vector3<f64>, Vector3<f64>)> {
    let norm = quat.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::DegenerateRotation);
    }
    let r = rotation_matrix(&(quat / norm));
    Ok((
        r.column(0).into_owned(),
        r.column(1).into_owned(),
        r.column(2).into_owned(),
    ))
}

/// Back-propagates a gradient on the rotation matrix entries to the raw
/// (unnormalized) quaternion.
pub fn rotation_grad_to_quaternion(quat: &Vector4<f64>, grad_r: &Matrix3<f64>) -> Vector4<f64> {
    let norm = quat.norm();
    let q = quat / norm;
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let g = grad_r;
    let gw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let g_unit = Vector4::new(gw, gx, gy, gz);
    (g_unit - q * q.dot(&g_unit)) / norm
}

impl SplatFrame {
    pub fn from_quaternion(
        center: Vector3<f64>,
        quat: &Vector4<f64>,
        scale_u: f64,
        scale_v: f64,
    ) -> Result<Self> {
        let (tangent_u, tangent_v, normal) = frame_from_quaternion(quat)?;
        Ok(SplatFrame {
            center,
            tangent_u,
            tangent_v,
            scale_u,
            scale_v,
            normal,
        })
    }

    /// World point at local coordinates `(u, v)`.
    pub fn point(&self, u: f64, v: f64) -> Vector3<f64> {
        self.center + self.tangent_u * (u * self.scale_u) + self.tangent_v * (v * self.scale_v)
    }
}

/// Intersects a ray with the splat plane and inverts the plane parameterization.
///
/// `depth_axis` is the world-space camera forward axis; the returned depth is
/// the camera-space z of the hit. Returns `None` for rays parallel to the plane
/// or hits behind the ray origin.
pub fn ray_splat_intersect(
    ray: &Ray,
    frame: &SplatFrame,
    depth_axis: &Vector3<f64>,
) -> Option<PlaneHit> {
    let denom = ray.direction.dot(&frame.normal);
    if denom.abs() < PARALLEL_EPS {
        return None;
    }
    let t = (frame.center - ray.origin).dot(&frame.normal) / denom;
    if !(t > 0.0) {
        return None;
    }
    let rel = ray.origin + ray.direction * t - frame.center;
    Some(PlaneHit {
        u: rel.dot(&frame.tangent_u) / frame.scale_u,
        v: rel.dot(&frame.tangent_v) / frame.scale_v,
        t,
        depth: t * ray.direction.dot(depth_axis),
    })
}

/// World-space forward (+z) axis of the camera.
pub fn forward_axis(camera: &Camera) -> Vector3<f64> {
    camera.rotation.row(2).transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Camera {
        let forward = (target - eye).normalize();
        let up_hint = if forward.z.abs() > 0.9 {
            Vector3::y()
        } else {
            Vector3::z()
        };
        let right = up_hint.cross(&forward).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Camera::new(32, 24, 30.0, 31.0, 16.0, 12.0, rotation, translation).unwrap()
    }

    #[test]
    fn principal_point_ray_is_forward_axis() {
        let cam = look_at(Vector3::new(1.0, 2.0, 3.0), Vector3::zeros());
        // cx = 16, cy = 12 are centers of pixel (15.5, 11.5) -> pixel index (15.5 - 0.5)
        let dir_cam = cam.camera_direction(Point2::new(16.0, 12.0)).normalize();
        let world = cam.rotation.transpose() * dir_cam;
        assert!((world - forward_axis(&cam)).norm() < 1e-12);
        let integer_cam = Camera {
            cx: 15.5,
            cy: 11.5,
            ..cam.clone()
        };
        let ray = pixel_ray(&integer_cam, 15, 11);
        assert!((ray.direction - forward_axis(&cam)).norm() < 1e-12);
    }

    #[test]
    fn adjacent_pixels_subtend_pinhole_angle() {
        let cam = Camera {
            cx: 16.5,
            ..look_at(Vector3::new(0.0, 0.0, -4.0), Vector3::zeros())
        };
        let a = pixel_ray(&cam, 16, 12);
        let b = pixel_ray(&cam, 15, 12);
        let angle = a.direction.dot(&b.direction).clamp(-1.0, 1.0).acos();
        // a is on the x-axis of the principal point, b one pixel left.
        let expected = (1.0 / cam.fx).atan();
        assert!((angle - expected).abs() < 5e-3 * expected, "{angle} vs {expected}");
    }

    #[test]
    fn ray_grid_is_unit_and_distinct() {
        let cam = Camera::new(4, 4, 4.0, 4.0, 2.0, 2.0, Matrix3::identity(), Vector3::zeros())
            .unwrap();
        let rays: Vec<Ray> = (0..4)
            .flat_map(|y| (0..4).map(move |x| (x, y)))
            .map(|(x, y)| pixel_ray(&cam, x, y))
            .collect();
        assert_eq!(rays.len(), 16);
        for (i, a) in rays.iter().enumerate() {
            assert!((a.direction.norm() - 1.0).abs() < 1e-9);
            for b in &rays[i + 1..] {
                assert!((a.direction - b.direction).norm() > 1e-6);
            }
        }
    }

    #[test]
    fn identity_and_known_quaternions() {
        let (tu, tv, n) = frame_from_quaternion(&Vector4::new(1.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(tu, Vector3::x());
        assert_eq!(tv, Vector3::y());
        assert_eq!(n, Vector3::z());

        let q = Vector4::new(0.3, -0.2, 0.5, 0.7);
        let a = frame_from_quaternion(&q).unwrap();
        let b = frame_from_quaternion(&(q * 3.0)).unwrap();
        assert!((a.0 - b.0).norm() < 1e-15 && (a.1 - b.1).norm() < 1e-15);

        let rz = Vector4::new(FRAC_PI_4.cos(), 0.0, 0.0, FRAC_PI_4.sin());
        let (tu, _, _) = frame_from_quaternion(&rz).unwrap();
        assert!((tu - Vector3::y()).norm() < 1e-12);
    }

    #[test]
    fn zero_quaternion_is_degenerate() {
        assert!(matches!(
            frame_from_quaternion(&Vector4::zeros()),
            Err(Error::DegenerateRotation)
        ));
    }

    #[test]
    fn center_and_axis_hits() {
        let frame = SplatFrame::from_quaternion(
            Vector3::new(0.1, -0.2, 3.0),
            &Vector4::new(0.9, 0.1, 0.2, -0.3),
            0.5,
            0.25,
        )
        .unwrap();
        let fwd = Vector3::z();
        let ray = Ray {
            origin: frame.center + frame.normal * 2.0,
            direction: -frame.normal,
        };
        let hit = ray_splat_intersect(&ray, &frame, &fwd).unwrap();
        assert!(close(hit.u, 0.0, 1e-12) && close(hit.v, 0.0, 1e-12));

        let target = frame.point(2.0, 0.0);
        let origin = Vector3::new(0.0, 0.0, -1.0);
        let ray = Ray {
            origin,
            direction: (target - origin).normalize(),
        };
        let hit = ray_splat_intersect(&ray, &frame, &fwd).unwrap();
        assert!(close(hit.u, 2.0, 1e-9) && close(hit.v, 0.0, 1e-9));

        let parallel = Ray {
            origin,
            direction: frame.tangent_u,
        };
        assert!(ray_splat_intersect(&parallel, &frame, &fwd).is_none());

        let behind = Ray {
            origin: frame.center + frame.normal,
            direction: frame.normal,
        };
        assert!(ray_splat_intersect(&behind, &frame, &fwd).is_none());
    }

    #[test]
    fn quaternion_gradient_matches_finite_differences() {
        let q = Vector4::new(0.7, -0.4, 0.25, 1.3);
        let weights = Matrix3::new(0.3, -1.2, 0.5, 0.8, 0.1, -0.7, 1.5, -0.2, 0.9);
        let f = |q: &Vector4<f64>| rotation_matrix(&q.normalize()).component_mul(&weights).sum();
        let g = rotation_grad_to_quaternion(&q, &weights);
        let h = 1e-6;
        for k in 0..4 {
            let mut qp = q;
            let mut qm = q;
            qp[k] += h;
            qm[k] -= h;
            let fd = (f(&qp) - f(&qm)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-7, "component {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn projection_roundtrip_along_ray() {
        let cam = look_at(Vector3::new(2.0, -1.0, 3.0), Vector3::new(0.1, 0.0, 0.0));
        for (px, py) in [(0, 0), (7, 3), (31, 23), (16, 12)] {
            let ray = pixel_ray(&cam, px, py);
            for t in [0.5, 1.0, 7.0] {
                let p = cam.project(&(ray.origin + ray.direction * t)).unwrap();
                let c = pixel_center(px, py);
                assert!((p - c).norm() < 1e-6);
            }
        }
    }
}
