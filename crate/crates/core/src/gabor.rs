//! Gabor splat kernel: Gaussian alpha falloff plus a color field built from
//! N cosine waves at fixed, uniformly spaced orientations.
//!
//! Wave `i` of `N` runs along `(cos(i*pi/N), sin(i*pi/N))` in the splat's local
//! `(u, v)` plane with phase `2*pi*f_i*(dir_i . (u, v)) + phi_i`. Each wave
//! blends the two splat colors, and the blends are summed with weights `w_i`.
//! The sum is not clamped here; clamping only happens on image write-out.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::SplatFrame;

/// Standard deviation of the screen-space low-pass term, in pixels.
pub const SCREEN_SIGMA: f64 = FRAC_1_SQRT_2;

pub const MAX_WAVES: usize = 16;

/// Color-model variants used for the full model and the ablation baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Full model: N waves at angles `i*pi/N` with free phases.
    Gabor,
    /// Single wave (only wave 0 is evaluated).
    BaselineA,
    /// N waves, all along the local u-axis.
    BaselineB,
    /// N uniformly oriented waves with phases fixed at zero.
    BaselineC,
    /// Constant color `c_A` per splat.
    GaussianOnly,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Gabor,
        Mode::BaselineA,
        Mode::BaselineB,
        Mode::BaselineC,
        Mode::GaussianOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Gabor => "gabor",
            Mode::BaselineA => "baselineA",
            Mode::BaselineB => "baselineB",
            Mode::BaselineC => "baselineC",
            Mode::GaussianOnly => "gaussian_only",
        }
    }

    pub fn tag(self) -> u32 {
        match self {
            Mode::Gabor => 0,
            Mode::BaselineA => 1,
            Mode::BaselineB => 2,
            Mode::BaselineC => 3,
            Mode::GaussianOnly => 4,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.tag() == tag)
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown mode '{s}' (expected gabor, baselineA, baselineB, baselineC or gaussian_only)"
                ))
            })
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WaveParam {
    pub weight: f64,
    /// Cycles per unit of local coordinate.
    pub frequency: f64,
    /// Radians.
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaborPrimitive {
    pub frame: SplatFrame,
    pub alpha: f64,
    pub color_a: Vector3<f64>,
    pub color_b: Vector3<f64>,
    pub waves: Vec<WaveParam>,
}

/// Which term of the filtered falloff produced the value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FalloffBranch {
    Object,
    Screen,
}

pub fn eval_gaussian(u: f64, v: f64) -> f64 {
    (-(u * u + v * v) / 2.0).exp()
}

pub fn eval_screen_gaussian(d_px: Vector2<f64>) -> f64 {
    (-d_px.norm_squared() / (2.0 * SCREEN_SIGMA * SCREEN_SIGMA)).exp()
}

/// Low-pass filtered falloff: the larger of the object-space Gaussian and a
/// screen-space Gaussian around the projected center. Ties go to the object term.
pub fn eval_alpha_hat_branch(u: f64, v: f64, d_px: Vector2<f64>) -> (f64, FalloffBranch) {
    let object = eval_gaussian(u, v);
    let screen = eval_screen_gaussian(d_px);
    if screen > object {
        (screen, FalloffBranch::Screen)
    } else {
        (object, FalloffBranch::Object)
    }
}

pub fn eval_alpha_hat(u: f64, v: f64, d_px: Vector2<f64>) -> f64 {
    eval_alpha_hat_branch(u, v, d_px).0
}

pub fn wave_direction(i: usize, n: usize) -> Result<Vector2<f64>> {
    if i >= n {
        return Err(Error::WaveIndex { index: i, count: n });
    }
    let angle = i as f64 * PI / n as f64;
    Ok(Vector2::new(angle.cos(), angle.sin()))
}

pub fn eval_phase(i: usize, u: f64, v: f64, wave: &WaveParam, n: usize) -> Result<f64> {
    let dir = wave_direction(i, n)?;
    Ok(phase_along(&dir, u, v, wave.frequency, wave.phase))
}

#[inline]
fn phase_along(dir: &Vector2<f64>, u: f64, v: f64, frequency: f64, phase: f64) -> f64 {
    TAU * frequency * (dir.x * u + dir.y * v) + phase
}

/// Wave orientations and restrictions for one mode at a fixed wave count.
#[derive(Clone, Debug)]
pub struct ColorModel {
    mode: Mode,
    directions: Vec<Vector2<f64>>,
}

impl ColorModel {
    pub fn new(mode: Mode, n_waves: usize) -> Result<Self> {
        if n_waves == 0 || n_waves > MAX_WAVES {
            return Err(Error::Config(format!(
                "wave count {n_waves} outside 1..={MAX_WAVES}"
            )));
        }
        let active = match mode {
            Mode::BaselineA => 1,
            Mode::GaussianOnly => 0,
            _ => n_waves,
        };
        let directions = (0..active)
            .map(|i| match mode {
                Mode::BaselineB => Vector2::new(1.0, 0.0),
                Mode::BaselineA => wave_direction(0, 1).expect("index 0 of 1"),
                _ => wave_direction(i, n_waves).expect("index below wave count"),
            })
            .collect();
        Ok(ColorModel { mode, directions })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Number of waves that take part in the color (0 for Gaussian-only).
    pub fn active_waves(&self) -> usize {
        self.directions.len()
    }

    #[inline]
    fn phase_of(&self, wave: &WaveParam) -> f64 {
        if self.mode == Mode::BaselineC {
            0.0
        } else {
            wave.phase
        }
    }

    #[inline]
    fn theta(&self, i: usize, u: f64, v: f64, wave: &WaveParam) -> f64 {
        phase_along(&self.directions[i], u, v, wave.frequency, self.phase_of(wave))
    }

    pub fn eval_color(&self, u: f64, v: f64, prim: &GaborPrimitive) -> Vector3<f64> {
        if self.mode == Mode::GaussianOnly {
            return prim.color_a;
        }
        let mut color = Vector3::zeros();
        for (i, wave) in prim.waves.iter().take(self.active_waves()).enumerate() {
            let cos_t = self.theta(i, u, v, wave).cos();
            color += blend(prim, cos_t) * wave.weight;
        }
        color
    }

    pub fn eval_color_and_grads(&self, u: f64, v: f64, prim: &GaborPrimitive) -> ColorGrads {
        let n = prim.waves.len();
        let mut grads = ColorGrads {
            color: Vector3::zeros(),
            d_color_a: 0.0,
            d_color_b: 0.0,
            d_weight: vec![Vector3::zeros(); n],
            d_frequency: vec![Vector3::zeros(); n],
            d_phase: vec![Vector3::zeros(); n],
            d_u: Vector3::zeros(),
            d_v: Vector3::zeros(),
        };
        if self.mode == Mode::GaussianOnly {
            grads.color = prim.color_a;
            grads.d_color_a = 1.0;
            return grads;
        }
        let half_diff = (prim.color_a - prim.color_b) / 2.0;
        for (i, wave) in prim.waves.iter().take(self.active_waves()).enumerate() {
            let dir = self.directions[i];
            let (sin_t, cos_t) = self.theta(i, u, v, wave).sin_cos();
            let bracket = blend(prim, cos_t);
            grads.color += bracket * wave.weight;
            grads.d_color_a += wave.weight * (1.0 + cos_t) / 2.0;
            grads.d_color_b += wave.weight * (1.0 - cos_t) / 2.0;
            grads.d_weight[i] = bracket;
            // d color / d theta_i
            let d_theta = half_diff * (-wave.weight * sin_t);
            grads.d_frequency[i] = d_theta * (TAU * (dir.x * u + dir.y * v));
            if self.mode != Mode::BaselineC {
                grads.d_phase[i] = d_theta;
            }
            grads.d_u += d_theta * (TAU * wave.frequency * dir.x);
            grads.d_v += d_theta * (TAU * wave.frequency * dir.y);
        }
        grads
    }

    /// Accumulates `grad_color . d color / d param` for every color parameter.
    /// Returns the color (bitwise equal to [`ColorModel::eval_color`]) and the
    /// gradient with respect to `(u, v)`.
    pub fn backprop_color(
        &self,
        u: f64,
        v: f64,
        prim: &GaborPrimitive,
        grad_color: &Vector3<f64>,
        out: &mut ColorParamGrads<'_>,
    ) -> Vector2<f64> {
        if self.mode == Mode::GaussianOnly {
            add3(out.color_a, grad_color, 1.0);
            return Vector2::zeros();
        }
        let g_diff = grad_color.dot(&(prim.color_a - prim.color_b)) / 2.0;
        let mut g_uv = Vector2::zeros();
        for (i, wave) in prim.waves.iter().take(self.active_waves()).enumerate() {
            let dir = self.directions[i];
            let (sin_t, cos_t) = self.theta(i, u, v, wave).sin_cos();
            add3(out.color_a, grad_color, wave.weight * (1.0 + cos_t) / 2.0);
            add3(out.color_b, grad_color, wave.weight * (1.0 - cos_t) / 2.0);
            out.weight[i] += grad_color.dot(&blend(prim, cos_t));
            let g_theta = -wave.weight * sin_t * g_diff;
            out.frequency[i] += g_theta * TAU * (dir.x * u + dir.y * v);
            if self.mode != Mode::BaselineC {
                out.phase[i] += g_theta;
            }
            g_uv += dir * (g_theta * TAU * wave.frequency);
        }
        g_uv
    }
}

#[inline]
fn add3(dst: &mut [f64], g: &Vector3<f64>, scale: f64) {
    for c in 0..3 {
        dst[c] += g[c] * scale;
    }
}

#[inline]
fn blend(prim: &GaborPrimitive, cos_t: f64) -> Vector3<f64> {
    prim.color_a * ((1.0 + cos_t) / 2.0) + prim.color_b * ((1.0 - cos_t) / 2.0)
}

/// Partial derivatives of the color at one `(u, v)`. Color gradients with
/// respect to `c_A`/`c_B` are the same scalar on every channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorGrads {
    pub color: Vector3<f64>,
    pub d_color_a: f64,
    pub d_color_b: f64,
    pub d_weight: Vec<Vector3<f64>>,
    pub d_frequency: Vec<Vector3<f64>>,
    pub d_phase: Vec<Vector3<f64>>,
    pub d_u: Vector3<f64>,
    pub d_v: Vector3<f64>,
}

/// Mutable views into a gradient accumulator for one primitive's color parameters.
pub struct ColorParamGrads<'a> {
    pub color_a: &'a mut [f64],
    pub color_b: &'a mut [f64],
    pub weight: &'a mut [f64],
    pub frequency: &'a mut [f64],
    pub phase: &'a mut [f64],
}

/// Full-model color at `(u, v)` with `N = prim.waves.len()`.
pub fn eval_color(u: f64, v: f64, prim: &GaborPrimitive) -> Vector3<f64> {
    ColorModel::new(Mode::Gabor, prim.waves.len().max(1))
        .expect("wave count validated by caller")
        .eval_color(u, v, prim)
}

pub fn eval_color_and_grads(u: f64, v: f64, prim: &GaborPrimitive) -> ColorGrads {
    ColorModel::new(Mode::Gabor, prim.waves.len().max(1))
        .expect("wave count validated by caller")
        .eval_color_and_grads(u, v, prim)
}

impl GaborPrimitive {
    pub fn validate(&self) -> Result<()> {
        if self.waves.is_empty() || self.waves.len() > MAX_WAVES {
            return Err(Error::Config(format!(
                "primitive has {} waves, expected 1..={MAX_WAVES}",
                self.waves.len()
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("opacity {} outside (0, 1)", self.alpha)));
        }
        let in_unit = |c: &Vector3<f64>| c.iter().all(|x| (0.0..=1.0).contains(x));
        if !in_unit(&self.color_a) || !in_unit(&self.color_b) {
            return Err(Error::Config("colors must lie in [0, 1]".into()));
        }
        let finite = self
            .waves
            .iter()
            .all(|w| w.weight.is_finite() && w.frequency.is_finite() && w.phase.is_finite());
        if !finite {
            return Err(Error::Config("wave parameters must be finite".into()));
        }
        Ok(())
    }
}
