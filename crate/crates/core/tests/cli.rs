//! End-to-end tests of the `gabor-splat` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clap::CommandFactory;
use gabor_splat::cli::Cli;
use gabor_splat::dataio::{load_image, save_checkpoint, save_image};
use gabor_splat::gabor::{Mode, WaveParam};
use gabor_splat::image::Image;
use gabor_splat::loss::psnr;
use gabor_splat::scene::{PrimitiveInit, Scene};
use nalgebra::{Vector3, Vector4};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gabor-splat"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small stripes dataset under `dir/syn`.
fn synth(dir: &Path, views: usize, res: &str) -> PathBuf {
    let out = dir.join("syn");
    let r = run(&["synth", "--preset", "stripes", "--views", &views.to_string(), "--res", res, "--out", p(&out), "--seed", "5"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    out
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", p(data), "--format", "transforms", "--out", p(out)];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn help_documents_every_flag() {
    let root = Cli::command();
    for sub in root.get_subcommands() {
        let name = sub.get_name().to_string();
        let help = stdout(&run(&[&name, "--help"]));
        for arg in sub.get_arguments().filter(|a| !a.is_hide_set()) {
            let Some(long) = arg.get_long() else { continue };
            assert!(help.contains(&format!("--{long}")), "{name} --help lacks --{long}");
            let doc = arg.get_help().map(|h| h.to_string()).unwrap_or_default();
            assert!(!doc.trim().is_empty(), "{name} --{long} has no help text");
        }
    }
    let help = stdout(&run(&["--help"]));
    for sub in ["train", "render", "eval", "synth", "gradcheck"] {
        assert!(help.contains(sub), "top-level help lacks {sub}");
    }
}

#[test]
fn synth_writes_images_json_and_points() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("s");
    let r = run(&["synth", "--preset", "stripes", "--freq", "8", "--views", "8", "--res", "128x128", "--out", p(&out), "--seed", "1"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let pngs = std::fs::read_dir(out.join("images")).unwrap().filter(|e| {
        e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png")
    });
    assert_eq!(pngs.count(), 8);
    assert!(out.join("transforms.json").is_file());
    assert!(out.join("points3D.txt").is_file());
    let img = load_image(&out.join("images").join("view_000.png")).unwrap();
    assert_eq!((img.width, img.height), (128, 128));
}

fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_byte_identical_for_equal_seeds() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let r = run(&["--threads", threads, "synth", "--preset", "rings", "--views", "3", "--res", "40x30", "--out", p(out), "--seed", "9"]);
        assert_eq!(code(&r), 0);
    }
    assert_eq!(tree_bytes(&a), tree_bytes(&b));
}

#[test]
fn zero_frequency_gives_constant_gray() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("s");
    let r = run(&["synth", "--preset", "stripes", "--freq", "0", "--views", "2", "--res", "32x32", "--out", p(&out), "--seed", "1"]);
    assert_eq!(code(&r), 0);
    let img = load_image(&out.join("images").join("view_001.png")).unwrap();
    assert!(img.data.iter().all(|&x| x == img.data[0]));
}

#[test]
fn synth_rejects_bad_arguments() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("s");
    let r = run(&["synth", "--preset", "plaid", "--out", p(&out), "--seed", "1"]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("invalid preset"));
    assert_eq!(code(&run(&["synth", "--views", "1", "--out", p(&out), "--seed", "1"])), 1);
    assert_eq!(code(&run(&["synth", "--out", p(&out)])), 1, "seed is required");
}

#[test]
fn train_writes_log_checkpoints_and_summary() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), 8, "48x48");
    let out = dir.path().join("run");
    let r = train(&data, &out, &["--seed", "2", "--iters", "500", "--eval-every", "250", "--checkpoint-every", "200"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let log = std::fs::read_to_string(out.join("train.log")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 500);
    assert!(lines.iter().enumerate().all(|(i, l)| l.starts_with(&format!("iter={i} "))));
    assert!(lines[249].contains(" psnr=") && lines[499].contains(" psnr="));
    assert!(!lines[100].contains(" psnr="));
    for f in ["ckpt_000200.gspl", "ckpt_000400.gspl", "final.gspl", "summary.txt"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("iterations=500") && summary.contains("eval_set=test"));
    assert!(stdout(&r).contains("psnr="));

    // Rendering the held-out view reproduces the logged metric.
    let logged: f64 = lines[499]
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix("psnr="))
        .unwrap()
        .parse()
        .unwrap();
    let png = dir.path().join("r.png");
    let r = run(&["render", "--ckpt", p(&out.join("final.gspl")), "--data", p(&data), "--format", "transforms", "--camera", "view_007.png", "--out", p(&png)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let rendered = load_image(&png).unwrap();
    let target = load_image(&data.join("images").join("view_007.png")).unwrap();
    let value = psnr(&rendered, &target).unwrap();
    assert!(value >= logged - 0.01, "{value} vs logged {logged}");
}

#[test]
fn train_rejects_bad_configuration() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), 4, "24x24");
    let out = dir.path().join("run");
    let r = train(&data, &out, &["--seed", "1", "--densify"]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("densification unsupported"));
    let r = train(&dir.path().join("missing"), &out, &["--seed", "1"]);
    assert_eq!(code(&r), 1);
    assert_eq!(code(&train(&data, &out, &[])), 1, "seed is required");
    assert_eq!(code(&train(&data, &out, &["--seed", "1", "--n-waves", "0"])), 1);
    assert_eq!(code(&train(&data, &out, &["--seed", "1", "--lambda-dssim", "2"])), 1);
    assert_eq!(code(&train(&data, &out, &["--seed", "1", "--mode", "fancy"])), 1);
    assert_eq!(code(&train(&data, &out, &["--seed", "1", "--format", "colmap"])), 1);
}

#[test]
fn config_file_is_read_and_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), 4, "24x24");
    let cfg = dir.path().join("train.cfg");
    std::fs::write(&cfg, "# options\nseed = 3\niters = 7\nw_dist = 10\nlr-opacity=0.01\n").unwrap();
    let out = dir.path().join("run");
    let r = train(&data, &out, &["--config", p(&cfg), "--iters", "5"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let log = std::fs::read_to_string(out.join("train.log")).unwrap();
    assert_eq!(log.lines().count(), 5);
    assert!(stdout(&r).contains("seed=3"));

    std::fs::write(&cfg, "seed = 3\nlearning_rate = 1\n").unwrap();
    let r = train(&data, &out, &["--config", p(&cfg)]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("learning-rate"));
}

/// Three opaque primitives side by side, seen from a camera on the -z axis.
fn three_splat_scene() -> Scene {
    let mut scene = Scene::new(2, Mode::Gabor).unwrap();
    for (i, x) in [-0.5, 0.0, 0.5].into_iter().enumerate() {
        scene
            .push(&PrimitiveInit {
                center: Vector3::new(x, 0.1 * i as f64 - 0.1, 0.01 * i as f64),
                rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
                scale: [0.15, 0.3],
                alpha: 0.9,
                color_a: Vector3::new(0.8, 0.2, 0.1),
                color_b: Vector3::new(0.1, 0.3, 0.9),
                waves: vec![
                    WaveParam { weight: 0.7, frequency: 1.5, phase: 0.3 },
                    WaveParam { weight: 0.3, frequency: 0.5, phase: 1.0 },
                ],
            })
            .unwrap();
    }
    scene.round_to_storage();
    scene
}

/// Transforms-style pose file: camera at (0, 0, -2) looking along +z.
fn write_pose(path: &Path) {
    // OpenGL camera-to-world: x right, y up (world -y), looking down -z (world +z).
    let json = r#"{"fl_x": 40, "w": 48, "h": 40, "frames": [{"file_path": "unused",
        "transform_matrix": [[1,0,0,0],[0,-1,0,0],[0,0,-1,-2],[0,0,0,1]]}]}"#;
    std::fs::write(path, json).unwrap();
}

#[test]
fn show_splats_uses_one_flat_color_per_primitive() {
    let dir = TempDir::new().unwrap();
    let ckpt = dir.path().join("three.gspl");
    save_checkpoint(&three_splat_scene(), &ckpt).unwrap();
    let pose = dir.path().join("pose.json");
    write_pose(&pose);
    let out = dir.path().join("view.png");
    let r = run(&["render", "--ckpt", p(&ckpt), "--camera", p(&pose), "--out", p(&out), "--show-splats", "--seed", "4"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let render = load_image(&out).unwrap();
    assert!(render.data.iter().any(|&x| x > 0.0));
    let vis = load_image(&dir.path().join("view_splats.png")).unwrap();
    let mut colors: Vec<[u8; 3]> = vis
        .data
        .chunks(3)
        .map(|c| [0, 1, 2].map(|k| (c[k] * 255.0).round() as u8))
        .filter(|c| *c != [0, 0, 0])
        .collect();
    colors.sort();
    colors.dedup();
    assert!(!colors.is_empty() && colors.len() <= 3, "{} colors", colors.len());

    let again = dir.path().join("again.png");
    run(&["render", "--ckpt", p(&ckpt), "--camera", p(&pose), "--out", p(&again), "--show-splats", "--seed", "4"]);
    assert_eq!(
        std::fs::read(dir.path().join("view_splats.png")).unwrap(),
        std::fs::read(dir.path().join("again_splats.png")).unwrap()
    );
}

#[test]
fn render_rejects_bad_inputs() {
    let dir = TempDir::new().unwrap();
    let pose = dir.path().join("pose.json");
    write_pose(&pose);
    let out = dir.path().join("x.png");
    let r = run(&["render", "--ckpt", p(&dir.path().join("none.gspl")), "--camera", p(&pose), "--out", p(&out)]);
    assert_eq!(code(&r), 1);
    let ckpt = dir.path().join("c.gspl");
    std::fs::write(&ckpt, b"GSPL\x01\x00").unwrap();
    assert_eq!(code(&run(&["render", "--ckpt", p(&ckpt), "--camera", p(&pose), "--out", p(&out)])), 1);
    save_checkpoint(&three_splat_scene(), &ckpt).unwrap();
    assert_eq!(code(&run(&["render", "--ckpt", p(&ckpt), "--camera", "nope.json", "--out", p(&out)])), 1);
    let data = synth(dir.path(), 3, "16x16");
    let r = run(&["render", "--ckpt", p(&ckpt), "--data", p(&data), "--format", "transforms", "--camera", "17", "--out", p(&out)]);
    assert_eq!(code(&r), 1);
}

/// Replaces every image of `data` with the checkpoint's own render.
fn overwrite_with_renders(ckpt: &Path, data: &Path, views: usize) {
    for i in 0..views {
        let out = data.join("images").join(format!("view_{i:03}.png"));
        let r = run(&["render", "--ckpt", p(ckpt), "--data", p(data), "--format", "transforms", "--camera", &i.to_string(), "--out", p(&out)]);
        assert_eq!(code(&r), 0, "{}", stderr(&r));
    }
}

#[test]
fn eval_prints_tsv_and_handles_self_comparison() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), 16, "24x24");
    let out = dir.path().join("run");
    assert_eq!(code(&train(&data, &out, &["--seed", "1", "--iters", "20"])), 0);
    let ckpt = out.join("final.gspl");

    let r = run(&["eval", "--ckpt", p(&ckpt), "--data", p(&data), "--format", "transforms"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let text = stdout(&r);
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "view\tpsnr\tssim");
    assert_eq!(rows.len(), 4, "{text}");
    assert!(rows[3].starts_with("mean\t"));
    assert!(text.contains("LPIPS: not supported"));

    overwrite_with_renders(&ckpt, &data, 16);
    let r = run(&["eval", "--ckpt", p(&ckpt), "--data", p(&data), "--format", "transforms", "--split", "all"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let text = stdout(&r);
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 18);
    let mean = text.lines().find(|l| l.starts_with("mean\t")).unwrap();
    assert_eq!(mean, "mean\tinf\t1.000000");

    let img = Image::filled(10, 10, [0.5; 3]);
    save_image(&data.join("images").join("view_007.png"), &img).unwrap();
    let r = run(&["eval", "--ckpt", p(&ckpt), "--data", p(&data), "--format", "transforms"]);
    assert_eq!(code(&r), 1);
}

#[test]
fn eval_rejects_an_empty_split() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), 4, "16x16");
    let out = dir.path().join("run");
    let r = train(&data, &out, &["--seed", "1", "--iters", "3"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert!(stdout(&r).contains("eval_set=train"));
    assert!(stderr(&r).contains("held-out set is empty"));
    let r = run(&["eval", "--ckpt", p(&out.join("final.gspl")), "--data", p(&data), "--format", "transforms"]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("no views"));
}

#[test]
fn gradcheck_exit_codes() {
    let r = run(&["gradcheck", "--primitives", "3", "--res", "16x16"]);
    assert_eq!(code(&r), 0, "{}", stdout(&r));
    assert!(stdout(&r).contains("group=wave_phase"));
    assert!(stdout(&r).contains("result=pass"));

    let r = run(&["gradcheck", "--primitives", "3", "--res", "16x16", "--corrupt-group", "opacity"]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("groups: opacity"), "{}", stderr(&r));

    assert_eq!(code(&run(&["gradcheck", "--primitives", "0"])), 1);
    assert_eq!(code(&run(&["gradcheck", "--res", "65x65"])), 1);
    assert_eq!(code(&run(&["gradcheck", "--res", "big"])), 1);
}

#[test]
fn unknown_subcommand_and_flags_exit_1() {
    assert_eq!(code(&run(&["fly"])), 1);
    assert_eq!(code(&run(&["synth", "--bogus"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}
