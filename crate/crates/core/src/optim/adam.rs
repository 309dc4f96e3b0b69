use crate::error::{Error, Result};
use crate::raster::GradientBuffer;
use crate::scene::{ParamGroup, Scene};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-15;

/// Per-group learning rates. The position rate decays exponentially from
/// `position` to `position_final` over the run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRates {
    pub position: f64,
    pub position_final: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub color: f64,
    pub wave: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 1.6e-4,
            position_final: 1.6e-6,
            rotation: 1e-3,
            scale: 5e-3,
            opacity: 5e-2,
            color: 2.5e-3,
            wave: 2.5e-3,
        }
    }
}

impl LearningRates {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.position,
            self.position_final,
            self.rotation,
            self.scale,
            self.opacity,
            self.color,
            self.wave,
        ];
        if all.iter().any(|lr| !(lr.is_finite() && *lr >= 0.0)) {
            return Err(Error::Config("learning rates must be finite and >= 0".into()));
        }
        if (self.position > 0.0) != (self.position_final > 0.0) {
            return Err(Error::Config(
                "position learning rate and its final value must both be zero or both positive".into(),
            ));
        }
        Ok(())
    }

    /// Position rate at `step` of a run with `total` steps.
    pub fn position_at(&self, step: usize, total: usize) -> f64 {
        if self.position == 0.0 {
            return 0.0;
        }
        let t = if total > 1 {
            (step as f64 / (total - 1) as f64).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (self.position.ln() * (1.0 - t) + self.position_final.ln() * t).exp()
    }

    /// Rates indexed like [`ParamGroup::ALL`].
    pub fn by_group(&self, step: usize, total: usize) -> [f64; 9] {
        let mut out = [0.0; 9];
        for (slot, g) in out.iter_mut().zip(ParamGroup::ALL) {
            *slot = match g {
                ParamGroup::Position => self.position_at(step, total),
                ParamGroup::Rotation => self.rotation,
                ParamGroup::Scale => self.scale,
                ParamGroup::Opacity => self.opacity,
                ParamGroup::ColorA | ParamGroup::ColorB => self.color,
                ParamGroup::WaveWeight | ParamGroup::WaveFrequency | ParamGroup::WavePhase => {
                    self.wave
                }
            };
        }
        out
    }
}

/// First and second moment estimates for every raw parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `scene` with the given per-group rates.
/// Non-finite gradients are rejected before anything is modified.
pub fn adam_step(
    scene: &mut Scene,
    state: &mut AdamState,
    grads: &GradientBuffer,
    lr: &[f64; 9],
) -> Result<()> {
    if grads.grads.len() != scene.params.len() || state.m.len() != scene.params.len() {
        return Err(Error::Dimension(format!(
            "adam: {} parameters, {} gradients, {} moments",
            scene.params.len(),
            grads.grads.len(),
            state.m.len()
        )));
    }
    grads.check_finite()?;
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    let stride = scene.stride();
    let group_lr: Vec<f64> = (0..stride)
        .map(|o| {
            let g = ParamGroup::of_offset(o, scene.n_waves);
            lr[ParamGroup::ALL.iter().position(|x| *x == g).expect("group listed")]
        })
        .collect();
    for (k, p) in scene.params.iter_mut().enumerate() {
        let g = grads.grads[k];
        let m = ADAM_BETA1 * state.m[k] + (1.0 - ADAM_BETA1) * g;
        let v = ADAM_BETA2 * state.v[k] + (1.0 - ADAM_BETA2) * g * g;
        state.m[k] = m;
        state.v[k] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        *p -= group_lr[k % stride] * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gabor::Mode;

    fn scene(len_prims: usize) -> Scene {
        let mut s = Scene::new(1, Mode::Gabor).unwrap();
        s.params = vec![0.5; len_prims * s.stride()];
        s
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = scene(1);
        let mut st = AdamState::new(s.params.len());
        let g = GradientBuffer {
            n_waves: 1,
            grads: vec![1.0; s.params.len()],
        };
        adam_step(&mut s, &mut st, &g, &[0.01; 9]).unwrap();
        for p in &s.params {
            assert!((p - (0.5 - 0.01)).abs() < 1e-12);
        }
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_changes_nothing() {
        let mut s = scene(2);
        let before = s.clone();
        let mut st = AdamState::new(s.params.len());
        let g = GradientBuffer {
            n_waves: 1,
            grads: vec![0.0; s.params.len()],
        };
        adam_step(&mut s, &mut st, &g, &[0.01; 9]).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn equal_gradients_give_equal_updates() {
        let mut s = scene(2);
        let stride = s.stride();
        let mut st = AdamState::new(s.params.len());
        let mut grads = vec![0.0; s.params.len()];
        grads[0] = 0.3;
        grads[stride] = 0.3;
        let g = GradientBuffer { n_waves: 1, grads };
        for _ in 0..5 {
            adam_step(&mut s, &mut st, &g, &[0.02; 9]).unwrap();
        }
        assert_eq!(s.params[0], s.params[stride]);
        assert!(s.params[0] < 0.5);
    }

    #[test]
    fn non_finite_gradient_is_rejected_untouched() {
        let mut s = scene(2);
        let before = s.clone();
        let mut st = AdamState::new(s.params.len());
        let mut grads = vec![0.1; s.params.len()];
        grads[s.stride() + 9] = f64::NAN;
        let err = adam_step(&mut s, &mut st, &GradientBuffer { n_waves: 1, grads }, &[0.01; 9])
            .unwrap_err()
            .to_string();
        assert!(err.contains("primitive 1") && err.contains("opacity"), "{err}");
        assert_eq!(s, before);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn position_rate_decays_geometrically() {
        let lr = LearningRates::default();
        assert_eq!(lr.position_at(0, 101), 1.6e-4);
        assert!((lr.position_at(100, 101) - 1.6e-6).abs() < 1e-18);
        assert!((lr.position_at(50, 101) - 1.6e-5).abs() < 1e-17);
    }
}
