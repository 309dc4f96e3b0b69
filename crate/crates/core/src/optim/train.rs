use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamState, LearningRates};
use super::init::init_from_points;
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::gabor::{Mode, MAX_WAVES};
use crate::loss::{format_metric, psnr, ssim, training_loss, LossBreakdown, LossWeights};
use crate::raster::{render_backward, render_forward};
use crate::scene::Scene;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitPolicy {
    /// Every 8th view by sorted name is held out.
    EveryEighth,
    /// A seeded random eighth is held out.
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub mode: Mode,
    pub n_waves: usize,
    pub seed: u64,
    pub lr: LearningRates,
    pub loss: LossWeights,
    /// Held-out evaluation every this many iterations (0: only at the end).
    pub eval_every: usize,
    /// Checkpoint every this many iterations (0: only at the end).
    pub checkpoint_every: usize,
    pub split: SplitPolicy,
    /// Always rejected; kept so configurations asking for it fail loudly.
    pub densify: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 30_000,
            mode: Mode::Gabor,
            n_waves: 4,
            seed: 0,
            lr: LearningRates::default(),
            loss: LossWeights::default(),
            eval_every: 1000,
            checkpoint_every: 0,
            split: SplitPolicy::EveryEighth,
            densify: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.densify {
            return Err(Error::Config("densification unsupported".into()));
        }
        if self.n_waves == 0 || self.n_waves > MAX_WAVES {
            return Err(Error::Config(format!(
                "wave count {} outside 1..={MAX_WAVES}",
                self.n_waves
            )));
        }
        self.lr.validate()?;
        self.loss.validate()
    }

    /// Wave count of the parameter layout. The single-wave baseline trains
    /// a one-wave scene, so it shares its layout with `gabor` at N = 1.
    pub fn layout_waves(&self) -> usize {
        match self.mode {
            Mode::BaselineA => 1,
            _ => self.n_waves,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub warning: Option<String>,
}

/// Holds out one eighth of the views. With the default policy the 8th,
/// 16th, ... views in name order are held out, so fewer than 8 views leave
/// the test set empty (with a warning).
pub fn split_train_test(names: &[String], policy: SplitPolicy, seed: u64) -> Result<Split> {
    if names.is_empty() {
        return Err(Error::Config("no views to split".into()));
    }
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| names[a].cmp(&names[b]).then(a.cmp(&b)));
    let mut test: Vec<usize> = match policy {
        SplitPolicy::EveryEighth => order.iter().skip(7).step_by(8).copied().collect(),
        SplitPolicy::Random => {
            let mut shuffled = order.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            shuffled.truncate(names.len() / 8);
            shuffled
        }
    };
    test.sort_unstable();
    let train: Vec<usize> = order.into_iter().filter(|i| !test.contains(i)).collect();
    let warning = test.is_empty().then(|| {
        format!(
            "only {} views: held-out set is empty, metrics are reported on training views",
            names.len()
        )
    });
    Ok(Split {
        train,
        test,
        warning,
    })
}

/// Mean metrics over a set of views. Renders are quantized to 8 bits first,
/// like a saved PNG.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub per_view: Vec<(String, f64, f64)>,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn evaluate(scene: &Scene, dataset: &Dataset, views: &[usize], mode: Mode) -> Result<EvalResult> {
    let mut per_view = Vec::with_capacity(views.len());
    for &i in views {
        let camera = dataset.camera(i)?;
        let target = dataset.image(i)?;
        let render = render_forward(scene, &camera, mode)?;
        let img = render.color.quantized();
        per_view.push((dataset.views[i].name.clone(), psnr(&img, target)?, ssim(&img, target)?));
    }
    let n = per_view.len().max(1) as f64;
    Ok(EvalResult {
        psnr: per_view.iter().map(|v| v.1).sum::<f64>() / n,
        ssim: per_view.iter().map(|v| v.2).sum::<f64>() / n,
        per_view,
    })
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub iteration: usize,
    pub view: String,
    pub loss: LossBreakdown,
    pub eval: Option<(f64, f64)>,
}

impl fmt::Display for LogRecord {
    /// `iter=12 view=a.png total=.. l1=.. dssim=.. dist=.. normal=.. [psnr=.. ssim=..]`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = &self.loss;
        write!(
            f,
            "iter={} view={} total={:e} l1={:e} dssim={:e} dist={:e} normal={:e}",
            self.iteration, self.view, l.total, l.l1, l.dssim, l.dist, l.normal
        )?;
        if let Some((p, s)) = self.eval {
            write!(f, " psnr={} ssim={}", format_metric(p), format_metric(s))?;
        }
        Ok(())
    }
}

pub enum TrainEvent<'a> {
    Log(&'a LogRecord),
    /// Scene after `iteration` completed iterations.
    Checkpoint { iteration: usize, scene: &'a Scene },
}

pub struct TrainOutcome {
    pub scene: Scene,
    pub log: Vec<LogRecord>,
    pub split: Split,
    /// Final metrics on the held-out views (training views if none).
    pub final_eval: EvalResult,
}

/// Initializes from the dataset's points and runs [`optimize`].
pub fn train(
    dataset: &Dataset,
    config: &TrainConfig,
    on_event: impl FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let scene = init_from_points(&dataset.points, config.layout_waves(), config.mode, config.seed)?;
    optimize(dataset, scene, config, on_event)
}

/// Training loop. Views are visited round-robin in a seed-shuffled order;
/// each iteration renders, evaluates the loss, back-propagates and takes
/// one Adam step, then rounds parameters to storage precision.
pub fn optimize(
    dataset: &Dataset,
    mut scene: Scene,
    config: &TrainConfig,
    mut on_event: impl FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if scene.n_waves != config.layout_waves() {
        return Err(Error::Config(format!(
            "scene has {} waves but mode {} trains {}",
            scene.n_waves,
            config.mode,
            config.layout_waves()
        )));
    }
    scene.mode = config.mode;
    let names: Vec<String> = dataset.views.iter().map(|v| v.name.clone()).collect();
    let split = split_train_test(&names, config.split, config.seed)?;
    if split.train.len() < 2 {
        return Err(Error::Config(format!(
            "training needs at least 2 training views, have {}",
            split.train.len()
        )));
    }
    let eval_views = if split.test.is_empty() { split.train.clone() } else { split.test.clone() };
    let cameras = (0..dataset.views.len())
        .map(|i| dataset.camera(i))
        .collect::<Result<Vec<_>>>()?;
    let mut order = split.train.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));

    let mut adam = AdamState::new(scene.params.len());
    let mut log = Vec::with_capacity(config.iterations);
    for iter in 0..config.iterations {
        let vi = order[iter % order.len()];
        let view_name = &dataset.views[vi].name;
        let camera = &cameras[vi];
        let render = render_forward(&scene, camera, config.mode)?;
        let (loss, grads) = training_loss(&render, dataset.image(vi)?, camera, &config.loss, iter)?;
        if !loss.total.is_finite() {
            return Err(Error::Divergence {
                iteration: iter,
                view: view_name.clone(),
            });
        }
        let g = render_backward(&scene, camera, config.mode, &grads)?;
        let lr = config.lr.by_group(iter, config.iterations);
        adam_step(&mut scene, &mut adam, &g, &lr)?;
        scene.round_to_storage();
        if let Some(k) = scene.params.iter().position(|p| !p.is_finite()) {
            let s = scene.stride();
            return Err(Error::NonFiniteParameter {
                primitive: k / s,
                parameter: crate::scene::param_name(k % s, scene.n_waves),
            });
        }

        let done = iter + 1;
        let eval = if done == config.iterations || (config.eval_every > 0 && done % config.eval_every == 0) {
            let r = evaluate(&scene, dataset, &eval_views, config.mode)?;
            Some((r.psnr, r.ssim))
        } else {
            None
        };
        let record = LogRecord {
            iteration: iter,
            view: view_name.clone(),
            loss,
            eval,
        };
        on_event(TrainEvent::Log(&record))?;
        log.push(record);
        if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done != config.iterations {
            on_event(TrainEvent::Checkpoint {
                iteration: done,
                scene: &scene,
            })?;
        }
    }
    on_event(TrainEvent::Checkpoint {
        iteration: config.iterations,
        scene: &scene,
    })?;
    let final_eval = evaluate(&scene, dataset, &eval_views, config.mode)?;
    Ok(TrainOutcome {
        scene,
        log,
        split,
        final_eval,
    })
}
