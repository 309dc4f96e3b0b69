use std::f64::consts::PI;

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::SfmPoint;
use crate::error::{Error, Result};
use crate::gabor::{Mode, WaveParam};
use crate::scene::{PrimitiveInit, Scene};

const INIT_ALPHA: f64 = 0.1;
/// Scale used when a point has no neighbors.
const FALLBACK_SCALE: f64 = 0.1;
const MIN_SCALE: f64 = 1e-7;
/// Colors are stored as logits, so they are kept off 0 and 1.
const COLOR_MARGIN: f64 = 1e-3;

/// Mean distance from each point to its (up to) three nearest neighbors.
/// Brute force; fine for the point counts used here.
pub fn mean_neighbor_distance(points: &[Vector3<f64>]) -> Vec<f64> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut best = [f64::INFINITY; 3];
            for (j, q) in points.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = (p - q).norm();
                if d < best[2] {
                    best[2] = d;
                    best.sort_by(f64::total_cmp);
                }
            }
            let found: Vec<f64> = best.into_iter().filter(|d| d.is_finite()).collect();
            if found.is_empty() {
                FALLBACK_SCALE
            } else {
                (found.iter().sum::<f64>() / found.len() as f64).max(MIN_SCALE)
            }
        })
        .collect()
}

/// Uniform random rotation (Shoemake's method), as a unit quaternion.
fn random_quaternion(rng: &mut ChaCha8Rng) -> Vector4<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    Vector4::new(
        a * (2.0 * PI * u2).sin(),
        a * (2.0 * PI * u2).cos(),
        b * (2.0 * PI * u3).sin(),
        b * (2.0 * PI * u3).cos(),
    )
}

/// One primitive per point: centered on it, isotropic with the mean
/// 3-nearest-neighbor distance as scale, random orientation, opacity 0.1,
/// both colors equal to the point color, a single active wave with random
/// frequency in [0, 2) and phase in [0, 2pi). Parameters are rounded to
/// storage precision.
pub fn init_from_points(points: &[SfmPoint], n_waves: usize, mode: Mode, seed: u64) -> Result<Scene> {
    if points.is_empty() {
        return Err(Error::Config("cannot initialize from an empty point list".into()));
    }
    let mut scene = Scene::new(n_waves, mode)?;
    let positions: Vec<Vector3<f64>> = points.iter().map(|p| p.position).collect();
    let scales = mean_neighbor_distance(&positions);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (p, &s) in points.iter().zip(&scales) {
        let rotation = random_quaternion(&mut rng);
        let freqs: Vec<f64> = (0..n_waves).map(|_| rng.gen_range(0.0..2.0)).collect();
        let phases: Vec<f64> = (0..n_waves).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        let color = p.color.map(|c| {
            let c = if c.is_finite() { c } else { 0.5 };
            c.clamp(COLOR_MARGIN, 1.0 - COLOR_MARGIN)
        });
        scene.push(&PrimitiveInit {
            center: p.position,
            rotation,
            scale: [s, s],
            alpha: INIT_ALPHA,
            color_a: color,
            color_b: color,
            waves: (0..n_waves)
                .map(|i| WaveParam {
                    weight: if i == 0 { 1.0 } else { 0.0 },
                    frequency: freqs[i],
                    phase: phases[i],
                })
                .collect(),
        })?;
    }
    scene.round_to_storage();
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{sigmoid, OPACITY, SCALE, WAVES};

    fn pt(x: f64, y: f64, z: f64, c: f64) -> SfmPoint {
        SfmPoint {
            id: 0,
            position: Vector3::new(x, y, z),
            color: Vector3::new(c, c, c),
        }
    }

    #[test]
    fn single_gray_point() {
        let s = init_from_points(&[pt(0.0, 0.0, 0.0, 0.5)], 4, Mode::Gabor, 1).unwrap();
        assert_eq!(s.len(), 1);
        let p = s.activate(0).unwrap();
        assert_eq!(p.frame.center, Vector3::zeros());
        assert_eq!(p.color_a, Vector3::new(0.5, 0.5, 0.5));
        assert_eq!(p.color_b, Vector3::new(0.5, 0.5, 0.5));
        assert!((p.frame.scale_u - FALLBACK_SCALE).abs() < 1e-7);
        assert!((p.alpha - 0.1).abs() < 1e-7);
        assert_eq!(p.waves[0].weight, 1.0);
        assert!(p.waves[1..].iter().all(|w| w.weight == 0.0));
    }

    #[test]
    fn same_seed_same_scene() {
        let pts: Vec<SfmPoint> = (0..20).map(|i| pt(i as f64, (i * i) as f64 * 0.1, 0.0, 0.3)).collect();
        let a = init_from_points(&pts, 3, Mode::Gabor, 9).unwrap();
        let b = init_from_points(&pts, 3, Mode::Gabor, 9).unwrap();
        assert!(a.params.iter().zip(&b.params).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = init_from_points(&pts, 3, Mode::Gabor, 10).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn random_points_give_valid_primitives() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<SfmPoint> = (0..100)
            .map(|_| SfmPoint {
                id: 0,
                position: Vector3::new(rng.gen(), rng.gen(), rng.gen()),
                color: Vector3::new(rng.gen(), rng.gen(), rng.gen()),
            })
            .collect();
        let n = 4;
        let s = init_from_points(&pts, n, Mode::Gabor, 2).unwrap();
        assert_eq!(s.len(), 100);
        for i in 0..s.len() {
            let p = s.activate(i).unwrap();
            p.validate().unwrap();
            assert!(p.frame.scale_u > 0.0 && p.frame.scale_u == p.frame.scale_v);
            assert!(p.alpha > 0.0 && p.alpha < 1.0);
            let raw = s.prim(i);
            for k in 0..n {
                assert!((0.0..2.0).contains(&raw[WAVES + n + k]));
                assert!((0.0..2.0 * PI + 1e-6).contains(&raw[WAVES + 2 * n + k]));
            }
            assert!((sigmoid(raw[OPACITY]) - 0.1).abs() < 1e-7);
            assert!(raw[SCALE].exp() > 0.0);
        }
    }

    #[test]
    fn neighbor_distance_on_a_line() {
        let pts: Vec<Vector3<f64>> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let d = mean_neighbor_distance(&pts);
        assert!((d[0] - 2.0).abs() < 1e-12);
        assert!((d[2] - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_point_list_is_an_error() {
        assert!(init_from_points(&[], 4, Mode::Gabor, 0).is_err());
    }
}
