//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or data error, 2 numerical
//! failure (divergence, non-finite values, failed gradient check).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::{load_checkpoint, load_dataset, load_transforms, save_checkpoint, save_image, DataFormat};
use crate::error::{Error, Result};
use crate::gabor::Mode;
use crate::geometry::Camera;
use crate::gradcheck::{run_gradcheck, GradcheckConfig};
use crate::image::Image;
use crate::optim::{split_train_test, evaluate, train, SplitPolicy, TrainConfig, TrainEvent};
use crate::raster::{dominant_splats, render_forward};
use crate::scene::ParamGroup;
use crate::synth::{write_synth, Preset, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "gabor-splat", version, about = "Gabor splatting: train, render and evaluate textured 2D splats")]
pub struct Cli {
    /// Worker threads for rendering (0: one per core). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize a scene from a posed image set.
    Train(TrainArgs),
    /// Render a checkpoint from a dataset view or a pose file.
    Render(RenderArgs),
    /// Report per-view PSNR/SSIM of a checkpoint as TSV.
    Eval(EvalArgs),
    /// Generate a synthetic textured-plane dataset.
    Synth(SynthArgs),
    /// Compare analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Dataset layout: colmap or transforms.
    #[arg(long, default_value = "colmap")]
    pub format: DataFormat,
    /// Output directory for train.log, checkpoints and summary.txt.
    #[arg(long)]
    pub out: PathBuf,
    /// key=value file with training options (keys are the long flag names); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Random seed (required here or in the config file).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Color model: gabor, baselineA, baselineB, baselineC or gaussian_only [default: gabor].
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Waves per primitive, 1..=8 [default: 4].
    #[arg(long)]
    pub n_waves: Option<usize>,
    /// Training iterations [default: 30000].
    #[arg(long)]
    pub iters: Option<usize>,
    /// Initial position learning rate [default: 1.6e-4].
    #[arg(long)]
    pub lr_position: Option<f64>,
    /// Final position learning rate (exponential decay) [default: 1.6e-6].
    #[arg(long)]
    pub lr_position_final: Option<f64>,
    /// Rotation learning rate [default: 1e-3].
    #[arg(long)]
    pub lr_rotation: Option<f64>,
    /// Scale learning rate [default: 5e-3].
    #[arg(long)]
    pub lr_scale: Option<f64>,
    /// Opacity learning rate [default: 5e-2].
    #[arg(long)]
    pub lr_opacity: Option<f64>,
    /// Color learning rate [default: 2.5e-3].
    #[arg(long)]
    pub lr_color: Option<f64>,
    /// Wave weight/frequency/phase learning rate [default: 2.5e-3].
    #[arg(long)]
    pub lr_wave: Option<f64>,
    /// D-SSIM weight in the photometric loss [default: 0.2].
    #[arg(long)]
    pub lambda_dssim: Option<f64>,
    /// Depth-distortion weight [default: 1000].
    #[arg(long)]
    pub w_dist: Option<f64>,
    /// Normal-consistency weight [default: 0.05].
    #[arg(long)]
    pub w_normal: Option<f64>,
    /// Iteration at which the normal term switches on [default: 7000].
    #[arg(long)]
    pub normal_start_iter: Option<usize>,
    /// Held-out evaluation cadence in iterations, 0 for only at the end [default: 1000].
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Checkpoint cadence in iterations, 0 for only the final one [default: 0].
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Held-out view policy: every8 (every 8th view by name) or random [default: every8].
    #[arg(long)]
    pub split: Option<String>,
    /// Adaptive densification (not supported; rejected).
    #[arg(long)]
    pub densify: bool,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Checkpoint file.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// View index or name in --data, or without --data a transforms-style pose file (first frame).
    #[arg(long)]
    pub camera: String,
    /// Dataset directory the camera is taken from.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Dataset layout: colmap or transforms.
    #[arg(long, default_value = "colmap")]
    pub format: DataFormat,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write <out>_splats.png with each primitive in a random flat color.
    #[arg(long)]
    pub show_splats: bool,
    /// Seed for the --show-splats colors.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint file.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Dataset layout: colmap or transforms.
    #[arg(long, default_value = "colmap")]
    pub format: DataFormat,
    /// Views to evaluate: test, train or all.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Held-out view policy: every8 or random.
    #[arg(long, default_value = "every8")]
    pub holdout: String,
    /// Seed of the random held-out policy.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Texture: stripes, checker or rings.
    #[arg(long, default_value = "stripes")]
    pub preset: String,
    /// Number of views (at least 2).
    #[arg(long, default_value_t = 16)]
    pub views: usize,
    /// Image resolution as WxH.
    #[arg(long, default_value = "128x128")]
    pub res: String,
    /// Texture frequency in cycles per unit length.
    #[arg(long, default_value_t = 8.0)]
    pub freq: f64,
    /// Init points form a GRID x GRID lattice on the plane.
    #[arg(long, default_value_t = 8)]
    pub grid: usize,
    /// Ground-truth samples per pixel along each axis.
    #[arg(long, default_value_t = 4)]
    pub supersample: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Random seed (camera azimuth jitter).
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Random seed of the test scene.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of primitives, 1..=32.
    #[arg(long, default_value_t = 8)]
    pub primitives: usize,
    /// Image resolution as WxH, at most 64x64.
    #[arg(long, default_value = "24x24")]
    pub res: String,
    /// Waves per primitive.
    #[arg(long, default_value_t = 4)]
    pub n_waves: usize,
    /// Color model to check.
    #[arg(long, default_value = "gabor")]
    pub mode: Mode,
    /// Perturb the analytic gradient of one parameter group (self-test of the checker).
    #[arg(long, hide = true)]
    pub corrupt_group: Option<String>,
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Divergence { .. } | Error::NonFiniteGradient { .. } | Error::NonFiniteParameter { .. } => 2,
        _ => 1,
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Messages go to stdout/stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(&cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: &Command) -> Result<i32> {
    match cmd {
        Command::Train(a) => cmd_train(a),
        Command::Render(a) => cmd_render(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

/// Parses `WxH`.
pub fn parse_resolution(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("resolution {s:?} must look like 128x128"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((w.trim().parse().map_err(|_| bad())?, h.trim().parse().map_err(|_| bad())?))
}

fn parse_split_policy(s: &str) -> Result<SplitPolicy> {
    match s {
        "every8" => Ok(SplitPolicy::EveryEighth),
        "random" => Ok(SplitPolicy::Random),
        other => Err(Error::Config(format!("unknown split policy {other:?} (expected every8 or random)"))),
    }
}

/// Reads a `key = value` file. Blank lines and `#` comments are skipped;
/// `_` and `-` are interchangeable in keys.
pub fn parse_config_file(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::parse(path.display().to_string(), format!("line {}: expected key=value", n + 1))
        })?;
        let key = k.trim().replace('_', "-");
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::parse(path.display().to_string(), format!("line {}: duplicate key {key:?}", n + 1)));
        }
    }
    Ok(out)
}

fn take<T: std::str::FromStr>(map: &mut BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    match map.remove(key) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("config key {key}: invalid value {v:?}"))),
    }
}

/// Training configuration from defaults, then the config file, then flags.
pub fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut file = match &a.config {
        Some(p) => parse_config_file(&crate::dataio::read_text(p)?, p)?,
        None => BTreeMap::new(),
    };
    let mut c = TrainConfig::default();
    macro_rules! set {
        ($field:expr, $key:literal, $flag:expr) => {
            if let Some(v) = take(&mut file, $key)? {
                $field = v;
            }
            if let Some(v) = $flag.clone() {
                $field = v;
            }
        };
    }
    let mut seed: Option<u64> = take(&mut file, "seed")?;
    if a.seed.is_some() {
        seed = a.seed;
    }
    let mut split = "every8".to_string();
    let mut densify = false;
    set!(c.mode, "mode", a.mode);
    set!(c.n_waves, "n-waves", a.n_waves);
    set!(c.iterations, "iters", a.iters);
    set!(c.lr.position, "lr-position", a.lr_position);
    set!(c.lr.position_final, "lr-position-final", a.lr_position_final);
    set!(c.lr.rotation, "lr-rotation", a.lr_rotation);
    set!(c.lr.scale, "lr-scale", a.lr_scale);
    set!(c.lr.opacity, "lr-opacity", a.lr_opacity);
    set!(c.lr.color, "lr-color", a.lr_color);
    set!(c.lr.wave, "lr-wave", a.lr_wave);
    set!(c.loss.lambda_dssim, "lambda-dssim", a.lambda_dssim);
    set!(c.loss.w_dist, "w-dist", a.w_dist);
    set!(c.loss.w_normal, "w-normal", a.w_normal);
    set!(c.loss.normal_start_iter, "normal-start-iter", a.normal_start_iter);
    set!(c.eval_every, "eval-every", a.eval_every);
    set!(c.checkpoint_every, "checkpoint-every", a.checkpoint_every);
    set!(split, "split", a.split);
    set!(densify, "densify", a.densify.then_some(true));
    if let Some(key) = file.keys().next() {
        return Err(Error::Config(format!("unknown config key {key:?}")));
    }
    c.split = parse_split_policy(&split)?;
    c.densify = densify;
    c.seed = seed.ok_or_else(|| Error::Config("a seed is required (--seed or seed= in the config file)".into()))?;
    c.validate()?;
    Ok(c)
}

fn checkpoint_name(iteration: usize) -> String {
    format!("ckpt_{iteration:06}.gspl")
}

fn cmd_train(a: &TrainArgs) -> Result<i32> {
    let config = train_config(a)?;
    let mut dataset = load_dataset(&a.data, a.format)?;
    dataset.load_images()?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let log_path = a.out.join("train.log");
    let file = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = std::io::BufWriter::new(file);
    let out = &a.out;
    let outcome = train(&dataset, &config, |event| match event {
        TrainEvent::Log(r) => writeln!(log, "{r}").map_err(|e| Error::io(&log_path, e)),
        TrainEvent::Checkpoint { iteration, scene } => {
            let name = if iteration == config.iterations {
                "final.gspl".to_string()
            } else {
                checkpoint_name(iteration)
            };
            save_checkpoint(scene, &out.join(name))
        }
    });
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let outcome = outcome?;
    if let Some(w) = &outcome.split.warning {
        eprintln!("warning: {w}");
    }
    let eval_set = if outcome.split.test.is_empty() { "train" } else { "test" };
    let mut summary = String::new();
    let _ = writeln!(summary, "mode={}", config.mode);
    let _ = writeln!(summary, "n_waves={}", outcome.scene.n_waves);
    let _ = writeln!(summary, "primitives={}", outcome.scene.len());
    let _ = writeln!(summary, "iterations={}", config.iterations);
    let _ = writeln!(summary, "seed={}", config.seed);
    let _ = writeln!(summary, "eval_set={eval_set}");
    let _ = writeln!(summary, "eval_views={}", outcome.final_eval.per_view.len());
    let _ = writeln!(summary, "psnr={}", crate::loss::format_metric(outcome.final_eval.psnr));
    let _ = writeln!(summary, "ssim={}", crate::loss::format_metric(outcome.final_eval.ssim));
    let path = a.out.join("summary.txt");
    std::fs::write(&path, &summary).map_err(|e| Error::io(&path, e))?;
    print!("{summary}");
    Ok(0)
}

fn render_camera(a: &RenderArgs) -> Result<Camera> {
    match &a.data {
        Some(dir) => {
            let ds = load_dataset(dir, a.format)?;
            let index = match a.camera.parse::<usize>() {
                Ok(i) if i < ds.views.len() => i,
                _ => ds.view_by_name(&a.camera).ok_or_else(|| {
                    Error::Config(format!(
                        "camera {:?} is neither a view index below {} nor a view name",
                        a.camera,
                        ds.views.len()
                    ))
                })?,
            };
            ds.camera(index)
        }
        None => load_transforms(Path::new(&a.camera))?.camera(0),
    }
}

/// `<dir>/<stem>_splats.png` next to `out`.
fn splats_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}_splats.png"))
}

fn cmd_render(a: &RenderArgs) -> Result<i32> {
    let scene = load_checkpoint(&a.ckpt)?;
    let camera = render_camera(a)?;
    let render = render_forward(&scene, &camera, scene.mode)?;
    save_image(&a.out, &render.color)?;
    if a.show_splats {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let colors: Vec<[f64; 3]> = (0..scene.len())
            .map(|_| [rng.gen_range(0.15..1.0), rng.gen_range(0.15..1.0), rng.gen_range(0.15..1.0)])
            .collect();
        let ids = dominant_splats(&scene, &camera)?;
        let mut img = Image::new(camera.width, camera.height);
        for (px, id) in ids.iter().enumerate() {
            if let Some(k) = id {
                img.data[3 * px..3 * px + 3].copy_from_slice(&colors[*k]);
            }
        }
        save_image(&splats_path(&a.out), &img)?;
    }
    Ok(0)
}

fn cmd_eval(a: &EvalArgs) -> Result<i32> {
    let scene = load_checkpoint(&a.ckpt)?;
    let mut dataset = load_dataset(&a.data, a.format)?;
    dataset.load_images()?;
    let names: Vec<String> = dataset.views.iter().map(|v| v.name.clone()).collect();
    let split = split_train_test(&names, parse_split_policy(&a.holdout)?, a.seed)?;
    let views = match a.split.as_str() {
        "test" => split.test,
        "train" => split.train,
        "all" => (0..names.len()).collect(),
        other => return Err(Error::Config(format!("unknown split {other:?} (expected test, train or all)"))),
    };
    if views.is_empty() {
        return Err(Error::Config(format!("split {:?} has no views", a.split)));
    }
    let r = evaluate(&scene, &dataset, &views, scene.mode)?;
    let fm = crate::loss::format_metric;
    let mut out = String::from("view\tpsnr\tssim\n");
    for (name, p, s) in &r.per_view {
        let _ = writeln!(out, "{name}\t{}\t{}", fm(*p), fm(*s));
    }
    let _ = writeln!(out, "mean\t{}\t{}", fm(r.psnr), fm(r.ssim));
    out.push_str("# LPIPS: not supported\n");
    print!("{out}");
    Ok(0)
}

fn cmd_synth(a: &SynthArgs) -> Result<i32> {
    let (width, height) = parse_resolution(&a.res)?;
    let config = SynthConfig {
        preset: a.preset.parse::<Preset>()?,
        views: a.views,
        width,
        height,
        freq: a.freq,
        seed: a.seed,
        grid: a.grid,
        supersample: a.supersample,
    };
    config.validate()?;
    let scene = write_synth(&a.out, &config)?;
    println!("views={}", scene.cameras.len());
    println!("points={}", scene.points.len());
    Ok(0)
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<i32> {
    let (width, height) = parse_resolution(&a.res)?;
    let corrupt = match &a.corrupt_group {
        Some(g) => Some(
            ParamGroup::from_name(g).ok_or_else(|| Error::Config(format!("unknown parameter group {g:?}")))?,
        ),
        None => None,
    };
    let config = GradcheckConfig {
        seed: a.seed,
        primitives: a.primitives,
        width,
        height,
        n_waves: a.n_waves,
        mode: a.mode,
        corrupt,
    };
    config.validate()?;
    let report = run_gradcheck(&config)?;
    for (g, s) in &report.groups {
        println!(
            "group={} count={} max_rel_err={:e} max_abs_err={:e} failures={}",
            g.name(),
            s.count,
            s.max_rel_err,
            s.max_abs_err,
            s.failures
        );
    }
    println!("redraws={} seed_used={}", report.redraws, report.seed_used);
    if report.passed() {
        println!("result=pass");
        return Ok(0);
    }
    println!("result=fail");
    let groups: Vec<&str> = report.failing_groups().iter().map(|g| g.name()).collect();
    eprintln!("gradcheck failed in groups: {}", groups.join(", "));
    for f in report.failures.iter().take(20) {
        eprintln!(
            "  primitive {} {}: analytic {:e}, numeric {:e}",
            f.primitive, f.parameter, f.analytic, f.numeric
        );
    }
    if report.failures.len() > 20 {
        eprintln!("  ... {} more", report.failures.len() - 20);
    }
    Ok(2)
}
