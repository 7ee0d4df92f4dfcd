use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SPEC_32: &str = "num_classes = 6\ngrid = 4\ncell = 8\nfill = 0.75\ntexture_pairs = 1-2,3-4\ncontext_class = 5\nnoise_sigma = 0.03\nseed = 0\n";

fn rethseg(args: &[&str]) -> Output {
    rethseg_env(args, &[])
}

fn rethseg_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rethseg"));
    cmd.args(args).env_remove("RETHSEG_PRECISION");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn ok(o: Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a spec and generates a dataset under `dir/data`.
fn gen(dir: &Path, spec: &str, counts: [usize; 3]) -> std::path::PathBuf {
    let spec_path = dir.join("spec.txt");
    fs::write(&spec_path, spec).unwrap();
    let data = dir.join("data");
    let [tr, va, te] = counts.map(|c| c.to_string());
    ok(rethseg(&[
        "gen", "--spec", s(&spec_path), "--out", s(&data), "--count-train", &tr, "--count-val", &va,
        "--count-test", &te,
    ]));
    data
}

/// Small two-stage model on 32x32 samples.
fn small_config(data: &Path, extra: &str) -> String {
    format!(
        "dataset_root = {}\nepochs = 2\nbase_lr = 0.01\nbatch_size = 2\naugment = standard\n\
         model.input_h = 32\nmodel.input_w = 32\nmodel.num_stages = 2\n\
         model.stages.0.out_channels = 8\nmodel.stages.0.stride = 2\nmodel.stages.0.n = 4\nmodel.stages.0.variant = rethinker_e\n\
         model.stages.1.out_channels = 8\nmodel.stages.1.stride = 2\nmodel.stages.1.n = 2\nmodel.stages.1.variant = rethinker_e\n\
         model.decoder_low_level_stage = 0\nmodel.decoder_channels = 8\n{extra}",
        data.display()
    )
}

fn kv_value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn overfit_then_eval_and_infer_reproduce_the_sample() {
    let dir = tempfile::tempdir().unwrap();
    // One 64x64 sample whose objects sit clear of the decoder's coarse grid limits.
    let data = gen(dir.path(), &SPEC_32.replace("grid = 4", "grid = 2").replace("cell = 8", "cell = 32"), [1, 0, 0]);
    let cfg = dir.path().join("overfit.conf");
    fs::write(
        &cfg,
        format!(
            "dataset_root = {}\nepochs = 800\nbase_lr = 0.03\nlr_drop_every = 200\nbatch_size = 1\naugment = none\ntrain_samples = 1\n",
            data.display()
        ),
    )
    .unwrap();
    let run = dir.path().join("run");
    ok(rethseg(&["train", "--config", s(&cfg), "--out", s(&run)]));
    let log = fs::read_to_string(run.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 801);

    let ckpt = run.join("last.ckpt");
    let report = dir.path().join("report");
    let text = ok(rethseg(&[
        "eval", "--ckpt", s(&ckpt), "--data", s(&data), "--split", "train", "--report", s(&report),
    ]));
    let miou = kv_value(&text, "miou");
    assert!(miou > 0.95, "{text}");
    assert_eq!(fs::read_to_string(report.with_extension("txt")).unwrap(), text);
    assert_eq!(fs::read_to_string(report.with_extension("csv")).unwrap().lines().count(), 2);

    let prefix = dir.path().join("pred");
    ok(rethseg(&[
        "infer", "--ckpt", s(&ckpt), "--in", s(&data.join("train/img_00000.ppm")), "--out", s(&prefix),
    ]));
    let pgm_payload = |p: &Path| {
        let b = fs::read(p).unwrap();
        b[b.len() - 64 * 64..].to_vec()
    };
    let pred = pgm_payload(&dir.path().join("pred_mask.pgm"));
    let truth = pgm_payload(&data.join("train/msk_00000.pgm"));
    let agree = pred.iter().zip(&truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64;
    assert!(agree > 0.95, "pixel agreement {agree}");
    assert!(dir.path().join("pred_overlay.ppm").exists());
}

#[test]
fn resume_continues_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), SPEC_32, [6, 2, 2]);
    let four = dir.path().join("four.conf");
    let two = dir.path().join("two.conf");
    fs::write(&four, small_config(&data, "").replace("epochs = 2", "epochs = 4")).unwrap();
    fs::write(&two, small_config(&data, "")).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(rethseg(&["train", "--config", s(&four), "--out", s(&a)]));
    ok(rethseg(&["train", "--config", s(&two), "--out", s(&b)]));
    ok(rethseg(&[
        "train", "--config", s(&four), "--out", s(&b), "--resume", s(&b.join("last.ckpt")),
    ]));
    for f in ["last.ckpt", "best.ckpt", "log.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    // Anything but the epoch count must match the checkpoint.
    let changed = dir.path().join("changed.conf");
    fs::write(&changed, small_config(&data, "momentum = 0.5\n")).unwrap();
    let o = rethseg(&[
        "train", "--config", s(&changed), "--out", s(&b), "--resume", s(&b.join("last.ckpt")),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn f64_mode_trains_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), SPEC_32, [2, 0, 2]);
    let cfg = dir.path().join("c.conf");
    fs::write(&cfg, small_config(&data, "").replace("epochs = 2", "epochs = 1")).unwrap();
    let run = dir.path().join("run");
    let out = ok(rethseg_env(
        &["train", "--config", s(&cfg), "--out", s(&run)],
        &[("RETHSEG_PRECISION", "f64")],
    ));
    assert!(out.contains("precision f64"), "{out}");
    let text = ok(rethseg_env(
        &["eval", "--ckpt", s(&run.join("best.ckpt")), "--data", s(&data)],
        &[("RETHSEG_PRECISION", "f64")],
    ));
    assert!((0.0..=1.0).contains(&kv_value(&text, "pixel_acc")));
}

#[test]
fn ablate_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), SPEC_32, [4, 0, 2]);
    let cfg = dir.path().join("c.conf");
    fs::write(&cfg, small_config(&data, "").replace("epochs = 2", "epochs = 1")).unwrap();
    let out = dir.path().join("abl");
    let text = ok(rethseg(&[
        "ablate", "--config", s(&cfg), "--variants", "baseline_c,rethinker_e", "--seeds", "1", "--out", s(&out),
    ]));
    assert!(text.contains("baseline_c") && text.contains("rethinker_e"), "{text}");
    assert!(out.join("ablation.txt").exists());
    // header, one row per run, one for the window oracle
    assert_eq!(fs::read_to_string(out.join("ablation.csv")).unwrap().lines().count(), 4);
    assert!(out.join("rethinker_e_seed0/last.ckpt").exists());

    let bad = rethseg(&["ablate", "--config", s(&cfg), "--variants", "rethinker_z"]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&rethseg(&["--help"])), 0);
    assert_eq!(code(&rethseg(&[])), 1);
    assert_eq!(code(&rethseg(&["train", "--bogus"])), 1);
    assert_eq!(code(&rethseg(&["eval", "--ckpt", "x", "--data", "y", "--split", "holdout"])), 1);

    let data = gen(dir.path(), SPEC_32, [2, 0, 1]);
    let cfg = dir.path().join("c.conf");
    fs::write(&cfg, small_config(&data, "")).unwrap();
    let o = rethseg_env(
        &["train", "--config", s(&cfg), "--out", s(&dir.path().join("r"))],
        &[("RETHSEG_PRECISION", "f16")],
    );
    assert_eq!(code(&o), 1);

    let unknown_key = dir.path().join("unknown.conf");
    fs::write(&unknown_key, small_config(&data, "learning_rate = 0.1\n")).unwrap();
    assert_eq!(code(&rethseg(&["train", "--config", s(&unknown_key), "--out", s(&dir.path().join("r"))])), 1);

    let missing = dir.path().join("missing.conf");
    fs::write(&missing, small_config(&dir.path().join("nowhere"), "")).unwrap();
    let o = rethseg(&["train", "--config", s(&missing), "--out", s(&dir.path().join("r"))]);
    assert_eq!(code(&o), 2);

    let junk = dir.path().join("junk.ckpt");
    fs::write(&junk, b"RTHN\x01\x00\x00\x00trunc").unwrap();
    let o = rethseg(&["eval", "--ckpt", s(&junk), "--data", s(&data)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("junk.ckpt"));

    let huge = dir.path().join("huge.conf");
    fs::write(&huge, small_config(&data, "base_lr = 1e30\n").replace("base_lr = 0.01\n", "")).unwrap();
    let o = rethseg(&["train", "--config", s(&huge), "--out", s(&dir.path().join("h"))]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("not finite at epoch ") && err.contains(" step "), "{err}");
}
