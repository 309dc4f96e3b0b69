//! Trainable scene state: raw (pre-activation) parameters stored as one flat
//! `f64` array with a fixed per-primitive layout, and the activations that
//! turn them into renderable [`GaborPrimitive`]s.
//!
//! Per-primitive layout (stride `16 + 3N`):
//!
//! | offset      | field                          | activation |
//! |-------------|--------------------------------|------------|
//! | 0..3        | center `q`                     | identity   |
//! | 3..7        | rotation quaternion (w,x,y,z)  | normalize  |
//! | 7..9        | log scales `s_u`, `s_v`        | exp        |
//! | 9           | opacity logit                  | sigmoid    |
//! | 10..13      | color A logits                 | sigmoid    |
//! | 13..16      | color B logits                 | sigmoid    |
//! | 16..16+N    | wave weights                   | identity   |
//! | 16+N..16+2N | wave frequencies               | identity   |
//! | 16+2N..     | wave phases                    | identity   |

use nalgebra::{Vector3, Vector4};

use crate::error::{Error, Result};
use crate::gabor::{GaborPrimitive, Mode, WaveParam, MAX_WAVES};
use crate::geometry::SplatFrame;

pub const POSITION: usize = 0;
pub const ROTATION: usize = 3;
pub const SCALE: usize = 7;
pub const OPACITY: usize = 9;
pub const COLOR_A: usize = 10;
pub const COLOR_B: usize = 13;
pub const WAVES: usize = 16;

pub fn stride(n_waves: usize) -> usize {
    WAVES + 3 * n_waves
}

/// Parameter groups, used for learning rates and gradient-check reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Position,
    Rotation,
    Scale,
    Opacity,
    ColorA,
    ColorB,
    WaveWeight,
    WaveFrequency,
    WavePhase,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 9] = [
        ParamGroup::Position,
        ParamGroup::Rotation,
        ParamGroup::Scale,
        ParamGroup::Opacity,
        ParamGroup::ColorA,
        ParamGroup::ColorB,
        ParamGroup::WaveWeight,
        ParamGroup::WaveFrequency,
        ParamGroup::WavePhase,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Position => "position",
            ParamGroup::Rotation => "rotation",
            ParamGroup::Scale => "scale",
            ParamGroup::Opacity => "opacity",
            ParamGroup::ColorA => "color_a",
            ParamGroup::ColorB => "color_b",
            ParamGroup::WaveWeight => "wave_weight",
            ParamGroup::WaveFrequency => "wave_frequency",
            ParamGroup::WavePhase => "wave_phase",
        }
    }

    pub fn from_name(s: &str) -> Option<ParamGroup> {
        ParamGroup::ALL.into_iter().find(|g| g.name() == s)
    }

    /// Group of the parameter at `offset` within a primitive record.
    pub fn of_offset(offset: usize, n_waves: usize) -> ParamGroup {
        match offset {
            o if o < ROTATION => ParamGroup::Position,
            o if o < SCALE => ParamGroup::Rotation,
            o if o < OPACITY => ParamGroup::Scale,
            o if o < COLOR_A => ParamGroup::Opacity,
            o if o < COLOR_B => ParamGroup::ColorA,
            o if o < WAVES => ParamGroup::ColorB,
            o if o < WAVES + n_waves => ParamGroup::WaveWeight,
            o if o < WAVES + 2 * n_waves => ParamGroup::WaveFrequency,
            _ => ParamGroup::WavePhase,
        }
    }
}

/// Human-readable name of one parameter slot, e.g. `rotation[2]`.
pub fn param_name(offset: usize, n_waves: usize) -> String {
    let group = ParamGroup::of_offset(offset, n_waves);
    let base = match group {
        ParamGroup::Position => POSITION,
        ParamGroup::Rotation => ROTATION,
        ParamGroup::Scale => SCALE,
        ParamGroup::Opacity => OPACITY,
        ParamGroup::ColorA => COLOR_A,
        ParamGroup::ColorB => COLOR_B,
        ParamGroup::WaveWeight => WAVES,
        ParamGroup::WaveFrequency => WAVES + n_waves,
        ParamGroup::WavePhase => WAVES + 2 * n_waves,
    };
    format!("{}[{}]", group.name(), offset - base)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Rounds to the nearest single-precision value; parameters are stored at
/// checkpoint precision so save/load is exact.
pub fn to_storage(x: f64) -> f64 {
    x as f32 as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub n_waves: usize,
    pub mode: Mode,
    pub params: Vec<f64>,
}

impl Scene {
    pub fn new(n_waves: usize, mode: Mode) -> Result<Self> {
        if n_waves == 0 || n_waves > MAX_WAVES {
            return Err(Error::Config(format!(
                "wave count {n_waves} outside 1..={MAX_WAVES}"
            )));
        }
        Ok(Scene {
            n_waves,
            mode,
            params: Vec::new(),
        })
    }

    pub fn stride(&self) -> usize {
        stride(self.n_waves)
    }

    pub fn len(&self) -> usize {
        self.params.len() / self.stride()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn prim(&self, i: usize) -> &[f64] {
        let s = self.stride();
        &self.params[i * s..(i + 1) * s]
    }

    pub fn prim_mut(&mut self, i: usize) -> &mut [f64] {
        let s = self.stride();
        &mut self.params[i * s..(i + 1) * s]
    }

    /// Appends a primitive given in activated form.
    pub fn push(&mut self, prim: &PrimitiveInit) -> Result<()> {
        let raw = deactivate(prim, self.n_waves)?;
        self.params.extend_from_slice(&raw);
        Ok(())
    }

    /// Renderable primitive `i`.
    pub fn activate(&self, i: usize) -> Result<GaborPrimitive> {
        activate(self.prim(i), self.n_waves).map_err(|e| match e {
            Error::NonFiniteParameter { parameter, .. } => Error::NonFiniteParameter {
                primitive: i,
                parameter,
            },
            other => other,
        })
    }

    pub fn activate_all(&self) -> Result<Vec<GaborPrimitive>> {
        (0..self.len()).map(|i| self.activate(i)).collect()
    }

    pub fn round_to_storage(&mut self) {
        for p in &mut self.params {
            *p = to_storage(*p);
        }
    }
}

/// Activated description of a primitive, used to build raw parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimitiveInit {
    pub center: Vector3<f64>,
    pub rotation: Vector4<f64>,
    pub scale: [f64; 2],
    pub alpha: f64,
    pub color_a: Vector3<f64>,
    pub color_b: Vector3<f64>,
    pub waves: Vec<WaveParam>,
}

/// Raw record to primitive. Fails on non-finite entries or a zero quaternion.
pub fn activate(raw: &[f64], n_waves: usize) -> Result<GaborPrimitive> {
    if let Some(k) = raw.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteParameter {
            primitive: 0,
            parameter: param_name(k, n_waves),
        });
    }
    let v3 = |o: usize| Vector3::new(raw[o], raw[o + 1], raw[o + 2]);
    let quat = Vector4::new(raw[ROTATION], raw[ROTATION + 1], raw[ROTATION + 2], raw[ROTATION + 3]);
    let frame = SplatFrame::from_quaternion(
        v3(POSITION),
        &quat,
        raw[SCALE].exp(),
        raw[SCALE + 1].exp(),
    )?;
    let waves = (0..n_waves)
        .map(|i| WaveParam {
            weight: raw[WAVES + i],
            frequency: raw[WAVES + n_waves + i],
            phase: raw[WAVES + 2 * n_waves + i],
        })
        .collect();
    Ok(GaborPrimitive {
        frame,
        alpha: sigmoid(raw[OPACITY]),
        color_a: v3(COLOR_A).map(sigmoid),
        color_b: v3(COLOR_B).map(sigmoid),
        waves,
    })
}

/// Inverse of [`activate`] for alpha and colors in (0, 1) and positive scales.
pub fn deactivate(prim: &PrimitiveInit, n_waves: usize) -> Result<Vec<f64>> {
    if prim.waves.len() != n_waves {
        return Err(Error::Config(format!(
            "primitive has {} waves, scene expects {n_waves}",
            prim.waves.len()
        )));
    }
    let open_unit = |x: f64| x > 0.0 && x < 1.0;
    if !open_unit(prim.alpha) {
        return Err(Error::Config(format!("opacity {} outside (0, 1)", prim.alpha)));
    }
    if !prim.color_a.iter().chain(prim.color_b.iter()).all(|&c| open_unit(c)) {
        return Err(Error::Config("colors must lie in (0, 1) to be stored as logits".into()));
    }
    if !(prim.scale[0] > 0.0 && prim.scale[1] > 0.0) {
        return Err(Error::Config("scales must be positive".into()));
    }
    if !(prim.rotation.norm() > 0.0) {
        return Err(Error::DegenerateRotation);
    }
    let mut raw = vec![0.0; stride(n_waves)];
    raw[POSITION..POSITION + 3].copy_from_slice(prim.center.as_slice());
    raw[ROTATION..ROTATION + 4].copy_from_slice(prim.rotation.as_slice());
    raw[SCALE] = prim.scale[0].ln();
    raw[SCALE + 1] = prim.scale[1].ln();
    raw[OPACITY] = logit(prim.alpha);
    for c in 0..3 {
        raw[COLOR_A + c] = logit(prim.color_a[c]);
        raw[COLOR_B + c] = logit(prim.color_b[c]);
    }
    for (i, w) in prim.waves.iter().enumerate() {
        raw[WAVES + i] = w.weight;
        raw[WAVES + n_waves + i] = w.frequency;
        raw[WAVES + 2 * n_waves + i] = w.phase;
    }
    Ok(raw)
}
