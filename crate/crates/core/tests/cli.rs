use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use exwave::checkpoint;
use exwave::data::{encode_idx_images, encode_idx_labels, Split};
use exwave::diffraction::PropagationGeometry;
use exwave::network::Network;
use exwave::wavelet::{CircleMap, WaveletLayer};

fn exwave(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exwave")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Writes tiny 28x28 train/test splits (class-dependent blobs) into `dir`.
fn write_fixture(dir: &Path, train: usize, test: usize) {
    fs::create_dir_all(dir).unwrap();
    for (split, count) in [(Split::Train, train), (Split::Test, test)] {
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for i in 0..count {
            let c = i % 10;
            let (cx, cy) = (4 + (c % 5) * 5, 8 + (c / 5) * 10);
            for y in 0..28usize {
                for x in 0..28usize {
                    let d2 = (x.abs_diff(cx).pow(2) + y.abs_diff(cy).pow(2)) as f64;
                    pixels.push((255.0 * (-d2 / 6.0).exp()) as u8);
                }
            }
            labels.push(c as u8);
        }
        fs::write(dir.join(split.images_file()), encode_idx_images(28, 28, &pixels)).unwrap();
        fs::write(dir.join(split.labels_file()), encode_idx_labels(&labels)).unwrap();
    }
}

struct Env {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    data: PathBuf,
}

fn env() -> Env {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let data = root.join("data");
    write_fixture(&data, 40, 20);
    Env { _tmp: tmp, root, data }
}

fn small_train_args<'a>(e: &'a Env, out: &'a str, epochs: &'a str) -> Vec<String> {
    [
        "train", "--side", "28", "--layers", "2", "--epochs", epochs, "--batch-size", "8", "--seed", "3",
        "--data-dir",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain([e.data.display().to_string(), "--out".into(), e.root.join(out).display().to_string()])
    .collect()
}

fn run(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    exwave(&refs)
}

#[test]
fn train_writes_outputs_and_reruns_identically() {
    let e = env();
    let o = run(&small_train_args(&e, "a", "2"));
    assert!(o.status.success(), "{}", stderr(&o));
    let a = e.root.join("a");
    let csv = fs::read_to_string(a.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("epoch,train_loss,test_accuracy,grad_norm_l1,grad_norm_l2,express_w1"));
    for (i, line) in lines[1..].iter().enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[0], (i + 1).to_string());
        let acc: f64 = cols[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
    assert!(a.join("checkpoint.bin").is_file());

    // Re-running from the echoed configuration reproduces the run.
    let resolved = a.join("config.resolved");
    let b = e.root.join("b");
    let o = exwave(&["train", "--config", resolved.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
    assert_eq!(fs::read(a.join("checkpoint.bin")).unwrap(), fs::read(b.join("checkpoint.bin")).unwrap());

    // ... and so does a different worker count.
    let c = e.root.join("c");
    let o = exwave(&[
        "train", "--config", resolved.to_str().unwrap(), "--out", c.to_str().unwrap(), "--threads", "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(c.join("metrics.csv")).unwrap());
    assert_eq!(fs::read(a.join("checkpoint.bin")).unwrap(), fs::read(c.join("checkpoint.bin")).unwrap());

    let o = exwave(&[
        "evaluate", "--data-dir", e.data.to_str().unwrap(), "--checkpoint",
        a.join("checkpoint.bin").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let last_acc = lines[2].split(',').nth(2).unwrap();
    assert_eq!(stdout(&o).trim(), format!("test accuracy: {last_acc}"));
}

#[test]
fn zero_epochs_is_a_config_error() {
    let e = env();
    let o = run(&small_train_args(&e, "z", "0"));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("epochs"), "{}", stderr(&o));
    assert!(!e.root.join("z").join("metrics.csv").exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let e = env();
    let cfg = e.root.join("bad.toml");
    fs::write(&cfg, "[train]\nlearning_rat = 0.1\n").unwrap();
    let o = exwave(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("learning_rat"), "{}", stderr(&o));
}

#[test]
fn missing_dataset_names_expected_files() {
    let e = env();
    let empty = e.root.join("empty");
    fs::create_dir_all(&empty).unwrap();
    let o = exwave(&["train", "--side", "28", "--layers", "1", "--data-dir", empty.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("train-images-idx3-ubyte"), "{err}");
}

#[test]
fn phase_maps_follow_snapshot_epochs() {
    let e = env();
    let mut args = small_train_args(&e, "m", "10");
    args.push("--phase-maps".into());
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let maps = e.root.join("m").join("phase_maps");
    for epoch in [0, 10] {
        for layer in 1..=2 {
            let pgm = fs::read(maps.join(format!("epoch_{epoch}")).join(format!("layer_{layer}.pgm"))).unwrap();
            assert!(pgm.starts_with(b"P5\n28 28\n255\n"));
            assert_eq!(pgm.len(), 13 + 28 * 28);
        }
    }
    assert!(!maps.join("epoch_20").exists());
    assert!(!maps.join("epoch_5").exists());
}

#[test]
fn render_writes_one_map_per_layer() {
    let e = env();
    let o = run(&small_train_args(&e, "r", "1"));
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = e.root.join("r").join("checkpoint.bin");
    let out1 = e.root.join("maps1");
    let out2 = e.root.join("maps2");
    for out in [&out1, &out2] {
        let o = exwave(&["render", "--checkpoint", ckpt.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let mut names: Vec<String> =
        fs::read_dir(&out1).unwrap().map(|d| d.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["layer_1.pgm", "layer_2.pgm"]);
    for n in &names {
        assert_eq!(fs::read(out1.join(n)).unwrap(), fs::read(out2.join(n)).unwrap());
    }
}

#[test]
fn render_zero_phase_layer_is_uniform_mid_gray() {
    let e = env();
    let n = 16;
    let map = CircleMap::build(n, (4, 9)).unwrap();
    let zeros = vec![0.0; map.num_circles()];
    let layer = WaveletLayer::wavelet(map, zeros).unwrap();
    let net = Network::new(vec![layer], PropagationGeometry::with_defaults(n).unwrap(), true, vec![1.0], 0)
        .unwrap();
    let ckpt = e.root.join("zero.bin");
    checkpoint::save(&net, &ckpt).unwrap();
    let out = e.root.join("zero_maps");
    let o = exwave(&["render", "--checkpoint", ckpt.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let pgm = fs::read(out.join("layer_1.pgm")).unwrap();
    let header = b"P5\n16 16\n255\n";
    assert_eq!(&pgm[..header.len()], header);
    assert!(pgm[header.len()..].iter().all(|&v| v == 128));
}

#[test]
fn render_rejects_corrupt_checkpoint() {
    let e = env();
    let bad = e.root.join("bad.bin");
    fs::write(&bad, b"EXWAVECK\x07\x00\x00\x00rest").unwrap();
    let o = exwave(&["render", "--checkpoint", bad.to_str().unwrap(), "--out", e.root.join("x").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("version 7"), "{}", stderr(&o));
    fs::write(&bad, b"garbage").unwrap();
    let o = exwave(&["render", "--checkpoint", bad.to_str().unwrap(), "--out", e.root.join("x").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("magic"), "{}", stderr(&o));
}

#[test]
fn ablate_writes_table_in_order() {
    let e = env();
    let out = e.root.join("abl");
    let o = exwave(&[
        "ablate", "--side", "28", "--layers", "2", "--epochs", "2", "--batch-size", "8",
        "--data-dir", e.data.to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "mode,mnist_accuracy");
    let modes: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(modes, ["full", "shift_only", "express_only", "neither"]);
    let epochs = |mode: &str| -> Vec<String> {
        fs::read_to_string(out.join("curves").join(format!("{mode}.csv")))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap().to_string())
            .collect()
    };
    let axis = epochs("full");
    assert_eq!(axis, ["1", "2"]);
    for m in &modes[1..] {
        assert_eq!(epochs(m), axis);
    }
}

#[test]
fn gradcheck_passes_and_detects_injected_fault() {
    let o = exwave(&["gradcheck"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("max relative error: ")).unwrap();
    let value = line.trim_start_matches("max relative error: ");
    assert!(!value.contains('e'), "{value}");
    assert!(value.parse::<f64>().unwrap() < 1e-4);
    assert!(text.contains("worst parameter: group"));

    let o = exwave(&["gradcheck", "--inject-sign-flip"]);
    assert!(!o.status.success());
    assert!(stdout(&o).contains("FAIL"));

    let o = exwave(&["gradcheck", "--mode", "dense", "--layers", "3", "--side", "8"]);
    assert!(o.status.success(), "{}", stdout(&o));
}

#[test]
fn bad_flag_values_are_rejected() {
    let o = exwave(&["train", "--mode", "sideways"]);
    assert!(!o.status.success());
    let o = exwave(&["train", "--dataset", "cifar"]);
    assert!(!o.status.success());
}
