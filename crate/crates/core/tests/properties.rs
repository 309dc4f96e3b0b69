//! Property tests for geometric, color-model, metric and I/O invariants.

use std::path::Path;

use gabor_splat::dataio::{decode_checkpoint, encode_checkpoint, parse_cameras, parse_images, parse_points, parse_transforms};
use gabor_splat::gabor::{ColorModel, Mode, WaveParam};
use gabor_splat::geometry::{frame_from_quaternion, pixel_ray, ray_splat_intersect, Camera, Ray, SplatFrame};
use gabor_splat::image::Image;
use gabor_splat::loss::{psnr, ssim};
use gabor_splat::optim::{adam_step, AdamState, LearningRates};
use gabor_splat::raster::GradientBuffer;
use gabor_splat::scene::{activate, deactivate, to_storage, PrimitiveInit, Scene};
use nalgebra::{Matrix3, Vector3, Vector4};
use proptest::prelude::*;

fn quat() -> impl Strategy<Value = Vector4<f64>> {
    prop::array::uniform4(-1.0f64..1.0)
        .prop_filter("non-degenerate", |q| q.iter().map(|x| x * x).sum::<f64>() > 1e-2)
        .prop_map(|q| Vector4::new(q[0], q[1], q[2], q[3]))
}

fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-r..r).prop_map(|a| Vector3::new(a[0], a[1], a[2]))
}

fn look_at_camera(eye: Vector3<f64>) -> Camera {
    Camera::look_at(eye, Vector3::zeros(), Vector3::new(0.0, 0.0, 1.0), 48, 40, 50.0, 55.0, 24.0, 20.0).unwrap()
}

fn wave_strategy() -> impl Strategy<Value = WaveParam> {
    (-1.0f64..1.0, 0.0f64..3.0, 0.0f64..6.3).prop_map(|(weight, frequency, phase)| WaveParam {
        weight,
        frequency,
        phase,
    })
}

fn prim_strategy(n: usize) -> impl Strategy<Value = PrimitiveInit> {
    (
        vec3(2.0),
        quat(),
        (0.01f64..2.0, 0.01f64..2.0),
        0.01f64..0.99,
        prop::array::uniform3(0.01f64..0.99),
        prop::array::uniform3(0.01f64..0.99),
        prop::collection::vec(wave_strategy(), n),
    )
        .prop_map(|(center, rotation, (su, sv), alpha, ca, cb, waves)| PrimitiveInit {
            center,
            rotation: rotation.normalize(),
            scale: [su, sv],
            alpha,
            color_a: Vector3::from(ca),
            color_b: Vector3::from(cb),
            waves,
        })
}

fn image_strategy(w: usize, h: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0f64..1.0, w * h * 3).prop_map(move |d| Image::from_data(w, h, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ray_to_plane_point_recovers_local_coordinates(
        center in vec3(1.0),
        q in quat(),
        su in 0.05f64..2.0,
        sv in 0.05f64..2.0,
        u in -3.0f64..3.0,
        v in -3.0f64..3.0,
        eye in vec3(1.0),
    ) {
        let frame = SplatFrame::from_quaternion(center, &q, su, sv).unwrap();
        let p = frame.point(u, v);
        let origin = p + frame.normal * 3.0 + frame.tangent_u * eye.x + frame.tangent_v * eye.y;
        let ray = Ray { origin, direction: (p - origin).normalize() };
        let hit = ray_splat_intersect(&ray, &frame, &ray.direction).unwrap();
        prop_assert!((hit.u - u).abs() < 1e-9, "u {} vs {}", hit.u, u);
        prop_assert!((hit.v - v).abs() < 1e-9, "v {} vs {}", hit.v, v);
    }

    #[test]
    fn projecting_points_on_a_pixel_ray_returns_the_pixel_center(
        eye in vec3(3.0).prop_filter("away from origin", |e| e.norm() > 1.0 && e.x.hypot(e.y) > 0.1),
        px in 0usize..48,
        py in 0usize..40,
        t in 0.1f64..20.0,
    ) {
        let cam = look_at_camera(eye);
        let ray = pixel_ray(&cam, px, py);
        let p = cam.project(&(ray.origin + ray.direction * t)).unwrap();
        prop_assert!((p.x - (px as f64 + 0.5)).abs() < 1e-6);
        prop_assert!((p.y - (py as f64 + 0.5)).abs() < 1e-6);
    }

    #[test]
    fn splat_frames_are_right_handed(q in quat()) {
        let (tu, tv, n) = frame_from_quaternion(&q).unwrap();
        let m = Matrix3::from_columns(&[tu, tv, n]);
        prop_assert!((m.determinant() - 1.0).abs() < 1e-9);
        prop_assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-9);
    }

    #[test]
    fn activate_inverts_deactivate(prim in prim_strategy(3)) {
        let raw = deactivate(&prim, 3).unwrap();
        let p = activate(&raw, 3).unwrap();
        prop_assert!((p.frame.center - prim.center).norm() < 1e-12);
        prop_assert!((p.alpha - prim.alpha).abs() < 1e-12);
        prop_assert!((p.color_a - prim.color_a).norm() < 1e-12);
        prop_assert!((p.color_b - prim.color_b).norm() < 1e-12);
        prop_assert!((p.frame.scale_u - prim.scale[0]).abs() < 1e-12 * prim.scale[0].max(1.0));
        prop_assert!((p.frame.scale_v - prim.scale[1]).abs() < 1e-12 * prim.scale[1].max(1.0));
        for (a, b) in p.waves.iter().zip(&prim.waves) {
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn single_wave_color_stays_on_the_color_segment(
        prim in prim_strategy(1),
        u in -4.0f64..4.0,
        v in -4.0f64..4.0,
    ) {
        let mut prim = prim;
        prim.waves[0].weight = 1.0;
        let raw = deactivate(&prim, 1).unwrap();
        let p = activate(&raw, 1).unwrap();
        let c = ColorModel::new(Mode::Gabor, 1).unwrap().eval_color(u, v, &p);
        for k in 0..3 {
            let (lo, hi) = (p.color_a[k].min(p.color_b[k]), p.color_a[k].max(p.color_b[k]));
            prop_assert!(c[k] >= lo - 1e-12 && c[k] <= hi + 1e-12);
        }
    }

    #[test]
    fn metrics_are_symmetric(a in image_strategy(12, 13), b in image_strategy(12, 13)) {
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn adam_never_leaves_the_valid_parameter_set(
        prims in prop::collection::vec(prim_strategy(2), 1..4),
        grads in prop::collection::vec(-1e6f64..1e6, 200),
        steps in 1usize..20,
    ) {
        let mut scene = Scene::new(2, Mode::Gabor).unwrap();
        for p in &prims {
            scene.push(p).unwrap();
        }
        let mut state = AdamState::new(scene.params.len());
        let lr = LearningRates::default().by_group(0, 1);
        for s in 0..steps {
            let g = GradientBuffer {
                n_waves: 2,
                grads: (0..scene.params.len()).map(|k| grads[(k + 7 * s) % grads.len()]).collect(),
            };
            adam_step(&mut scene, &mut state, &g, &lr).unwrap();
            scene.round_to_storage();
        }
        for i in 0..scene.len() {
            let p = scene.activate(i).unwrap();
            p.validate().unwrap();
            prop_assert!(p.alpha >= 0.0 && p.alpha <= 1.0);
            prop_assert!(p.frame.scale_u > 0.0 && p.frame.scale_v > 0.0);
        }
    }

    #[test]
    fn checkpoints_round_trip_bitwise(
        n in 1usize..=8,
        values in prop::collection::vec(-50.0f64..50.0, 0..400),
        tag in 0u32..5,
    ) {
        let mut scene = Scene::new(n, Mode::from_tag(tag).unwrap()).unwrap();
        let keep = values.len() / scene.stride() * scene.stride();
        scene.params = values[..keep].iter().map(|&x| to_storage(x)).collect();
        let back = decode_checkpoint(&encode_checkpoint(&scene)).unwrap();
        prop_assert_eq!(back, scene);
    }

    #[test]
    fn parsers_never_panic_on_arbitrary_text(text in "\\PC{0,300}") {
        let _ = parse_cameras(&text, "cameras.txt");
        let _ = parse_images(&text, "images.txt");
        let _ = parse_points(&text, "points3D.txt");
        let _ = parse_transforms(&text, "transforms.json", Path::new("."));
    }

    #[test]
    fn decoder_never_panics_on_arbitrary_bytes(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = decode_checkpoint(&bytes);
        let mut framed = b"GSPL".to_vec();
        framed.extend_from_slice(&bytes);
        let _ = decode_checkpoint(&framed);
    }
}
