//! Central finite-difference verification of the analytic scene gradients.
//!
//! The numeric side only ever calls the forward renderer and the loss
//! values, so it is independent of the reverse pass it checks. The renderer is
//! piecewise smooth: contributions switch on and off at the skip threshold and
//! the filtered falloff switches branches. A probe is only meaningful when the
//! contributor signature is identical at `theta - h`, `theta` and `theta + h`;
//! a scene that places any probe across such a boundary is redrawn.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gabor::{Mode, WaveParam};
use crate::geometry::Camera;
use crate::image::Image;
use crate::loss::{training_loss, LossWeights};
use crate::raster::{render_backward, render_forward, GradientBuffer};
use crate::scene::{param_name, ParamGroup, PrimitiveInit, Scene};

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-7;
const MAX_DRAWS: usize = 64;

#[derive(Clone, Debug)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub primitives: usize,
    pub width: usize,
    pub height: usize,
    pub n_waves: usize,
    pub mode: Mode,
    /// Test hook: perturbs the analytic gradient of one group.
    pub corrupt: Option<ParamGroup>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            seed: 0,
            primitives: 8,
            width: 24,
            height: 24,
            n_waves: 4,
            mode: Mode::Gabor,
            corrupt: None,
        }
    }
}

impl GradcheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.primitives == 0 || self.primitives > 32 {
            return Err(Error::Config(format!(
                "gradcheck needs 1..=32 primitives, got {}",
                self.primitives
            )));
        }
        if self.width < 11 || self.height < 11 || self.width > 64 || self.height > 64 {
            return Err(Error::Config(format!(
                "gradcheck resolution {}x{} outside 11x11..=64x64",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroupStats {
    pub count: usize,
    /// Over probes whose absolute error exceeds [`ABS_TOL`]; zero if none do.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Largest numeric derivative magnitude seen in the group.
    pub max_magnitude: f64,
    pub failures: usize,
}

#[derive(Clone, Debug)]
pub struct ProbeFailure {
    pub primitive: usize,
    pub parameter: String,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub groups: BTreeMap<ParamGroup, GroupStats>,
    pub failures: Vec<ProbeFailure>,
    /// Scenes discarded because a probe crossed a contributor boundary.
    pub redraws: usize,
    pub seed_used: u64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn failing_groups(&self) -> Vec<ParamGroup> {
        self.groups
            .iter()
            .filter(|(_, s)| s.failures > 0)
            .map(|(g, _)| *g)
            .collect()
    }
}

/// Camera for gradient-check scenes: looks at the origin from -z.
pub fn gradcheck_camera(width: usize, height: usize) -> Result<Camera> {
    let f = 0.9 * width.max(height) as f64;
    Camera::look_at(
        Vector3::new(0.0, 0.0, -3.0),
        Vector3::zeros(),
        Vector3::new(0.0, -1.0, 0.0),
        width,
        height,
        f,
        f,
        width as f64 / 2.0,
        height as f64 / 2.0,
    )
}

/// Random scene in front of `camera`: moderate sizes, no splat close to
/// edge-on, all wave parameters nonzero.
pub fn random_scene(rng: &mut ChaCha8Rng, camera: &Camera, primitives: usize, n_waves: usize, mode: Mode) -> Result<Scene> {
    let mut scene = Scene::new(n_waves, mode)?;
    let view = (-camera.center()).normalize();
    for _ in 0..primitives {
        let rotation = loop {
            let q = Vector4::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if q.norm() < 0.2 {
                continue;
            }
            let (_, _, n) = crate::geometry::frame_from_quaternion(&q)?;
            if n.dot(&view).abs() > 0.4 {
                break q;
            }
        };
        let mut unit3 = || Vector3::new(rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95));
        let (color_a, color_b) = (unit3(), unit3());
        let waves = (0..n_waves)
            .map(|_| WaveParam {
                weight: rng.gen_range(-0.5..1.0),
                frequency: rng.gen_range(-1.5..1.5),
                phase: rng.gen_range(-PI..PI),
            })
            .collect();
        scene.push(&PrimitiveInit {
            center: Vector3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.6..0.6),
            ),
            rotation,
            scale: [rng.gen_range(0.12..0.5), rng.gen_range(0.12..0.5)],
            alpha: rng.gen_range(0.2..0.7),
            color_a,
            color_b,
            waves,
        })?;
    }
    Ok(scene)
}

/// Loss weights used by the sweep: every term active.
pub fn gradcheck_weights() -> LossWeights {
    LossWeights {
        normal_start_iter: 0,
        ..LossWeights::default()
    }
}

pub struct Objective<'a> {
    pub camera: &'a Camera,
    pub target: &'a Image,
    pub weights: LossWeights,
    pub mode: Mode,
}

impl Objective<'_> {
    /// Loss value and render signature.
    pub fn value(&self, scene: &Scene) -> Result<(f64, u64)> {
        let render = render_forward(scene, self.camera, self.mode)?;
        let (loss, _) = training_loss(&render, self.target, self.camera, &self.weights, usize::MAX)?;
        Ok((loss.total, render.signature()))
    }

    pub fn gradient(&self, scene: &Scene) -> Result<GradientBuffer> {
        let render = render_forward(scene, self.camera, self.mode)?;
        let (_, grads) = training_loss(&render, self.target, self.camera, &self.weights, usize::MAX)?;
        render_backward(scene, self.camera, self.mode, &grads)
    }
}

pub enum SweepOutcome {
    Report(BTreeMap<ParamGroup, GroupStats>, Vec<ProbeFailure>),
    /// A probe crossed a contributor boundary at this parameter.
    Straddled(usize),
}

pub fn within_tolerance(analytic: f64, numeric: f64) -> bool {
    let err = (analytic - numeric).abs();
    err <= ABS_TOL || err <= REL_TOL * analytic.abs().max(numeric.abs())
}

/// Compares `analytic` with central differences of `objective` for every
/// parameter of `scene`.
pub fn sweep(objective: &Objective<'_>, scene: &Scene, analytic: &GradientBuffer) -> Result<SweepOutcome> {
    let (_, base_sig) = objective.value(scene)?;
    let stride = scene.stride();
    let mut groups: BTreeMap<ParamGroup, GroupStats> = BTreeMap::new();
    let mut failures = Vec::new();
    let mut probe = scene.clone();
    for k in 0..scene.params.len() {
        let orig = scene.params[k];
        probe.params[k] = orig + FD_STEP;
        let (plus, sig_p) = objective.value(&probe)?;
        probe.params[k] = orig - FD_STEP;
        let (minus, sig_m) = objective.value(&probe)?;
        probe.params[k] = orig;
        if sig_p != base_sig || sig_m != base_sig {
            return Ok(SweepOutcome::Straddled(k));
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let a = analytic.grads[k];
        let group = ParamGroup::of_offset(k % stride, scene.n_waves);
        let stats = groups.entry(group).or_default();
        stats.count += 1;
        let abs_err = (a - numeric).abs();
        let rel_err = abs_err / a.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
        stats.max_abs_err = stats.max_abs_err.max(abs_err);
        stats.max_magnitude = stats.max_magnitude.max(numeric.abs());
        if abs_err > ABS_TOL {
            stats.max_rel_err = stats.max_rel_err.max(rel_err);
        }
        if !within_tolerance(a, numeric) {
            stats.failures += 1;
            failures.push(ProbeFailure {
                primitive: k / stride,
                parameter: param_name(k % stride, scene.n_waves),
                analytic: a,
                numeric,
            });
        }
    }
    Ok(SweepOutcome::Report(groups, failures))
}

fn random_target(rng: &mut ChaCha8Rng, width: usize, height: usize) -> Image {
    Image {
        width,
        height,
        data: (0..width * height * 3).map(|_| rng.gen::<f64>()).collect(),
    }
}

/// Full sweep over a random scene, redrawing scenes whose probes straddle a
/// contributor boundary.
pub fn run_gradcheck(config: &GradcheckConfig) -> Result<GradcheckReport> {
    config.validate()?;
    let camera = gradcheck_camera(config.width, config.height)?;
    let mut redraws = 0;
    for draw in 0..MAX_DRAWS {
        let seed = config.seed.wrapping_add(draw as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = random_scene(&mut rng, &camera, config.primitives, config.n_waves, config.mode)?;
        let target = random_target(&mut rng, config.width, config.height);
        let objective = Objective {
            camera: &camera,
            target: &target,
            weights: gradcheck_weights(),
            mode: config.mode,
        };
        let mut analytic = objective.gradient(&scene)?;
        if let Some(group) = config.corrupt {
            let stride = scene.stride();
            for (k, g) in analytic.grads.iter_mut().enumerate() {
                if ParamGroup::of_offset(k % stride, scene.n_waves) == group {
                    *g = *g * 1.5 + 1e-3;
                }
            }
        }
        match sweep(&objective, &scene, &analytic)? {
            SweepOutcome::Straddled(_) => redraws += 1,
            SweepOutcome::Report(groups, failures) => {
                return Ok(GradcheckReport {
                    groups,
                    failures,
                    redraws,
                    seed_used: seed,
                })
            }
        }
    }
    Err(Error::Config(format!(
        "no scene without contributor-boundary probes in {MAX_DRAWS} draws"
    )))
}
