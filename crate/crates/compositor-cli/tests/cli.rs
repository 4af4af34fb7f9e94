//! End-to-end checks of the `compositor` binary: exit codes and byte
//! parity between CLI invocations and direct library calls.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use compositor::augment::{synth_asset, synth_texture};
use compositor::composite::{alpha_composite, copy_paste, feather_mask, make_trimap};
use compositor::img::{load_image, load_mask, save_image, save_mask};
use compositor::pyramid::pyramid_blend;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_compositor"))
        .args(args)
        .output()
        .expect("failed to spawn the compositor binary")
}

#[track_caller]
fn assert_exit(out: &Output, expected: i32) {
    assert_eq!(
        out.status.code(),
        Some(expected),
        "wrong exit code\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// fg/bg/mask PNGs for a 48×40 scene, written by the library.
fn write_fixtures(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let fg = synth_texture(&mut rng, 48, 40);
    let bg = synth_texture(&mut rng, 48, 40);
    let mask = synth_asset(&mut rng, 48, 40).alpha;
    let (fg_p, bg_p, mask_p) =
        (dir.join("fg.png"), dir.join("bg.png"), dir.join("mask.png"));
    save_image(&fg, &fg_p).unwrap();
    save_image(&bg, &bg_p).unwrap();
    save_mask(&mask, &mask_p).unwrap();
    (fg_p, bg_p, mask_p)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    assert_exit(&run(&["--help"]), 0);
    assert_exit(&run(&["--version"]), 0);
    assert_exit(&run(&["composite", "--help"]), 0);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let (fg, bg, mask) = write_fixtures(dir.path());
    let out_p = dir.path().join("out.png");

    // unknown subcommand / unknown flag / bad enum value
    assert_exit(&run(&["frobnicate"]), 1);
    assert_exit(&run(&["composite", "--no-such-flag"]), 1);
    assert_exit(
        &run(&[
            "composite", "--fg", s(&fg), "--bg", s(&bg), "--mask", s(&mask), "--out",
            s(&out_p), "--method", "bogus",
        ]),
        1,
    );
    // semantic usage errors
    assert_exit(
        &run(&[
            "composite", "--fg", s(&fg), "--bg", s(&bg), "--mask", s(&mask), "--out",
            s(&out_p), "--method", "mlf",
        ]),
        1,
    );
    assert_exit(&run(&["--threads", "0", "gradcheck", "--suite", "ops"]), 1);
    // config file with a line that is not key=value
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "this is not a pair\n").unwrap();
    assert_exit(
        &run(&["--config", s(&cfg), "feather", "--mask", s(&mask), "--out", s(&out_p)]),
        1,
    );
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let (fg, bg, mask) = write_fixtures(dir.path());
    let out_p = dir.path().join("out.png");

    // missing input file
    let gone = dir.path().join("gone.png");
    assert_exit(
        &run(&[
            "composite", "--fg", s(&gone), "--bg", s(&bg), "--mask", s(&mask), "--out",
            s(&out_p),
        ]),
        2,
    );
    // corrupt image payload
    let junk = dir.path().join("junk.png");
    std::fs::write(&junk, b"not a png at all").unwrap();
    assert_exit(
        &run(&[
            "composite", "--fg", s(&junk), "--bg", s(&bg), "--mask", s(&mask), "--out",
            s(&out_p),
        ]),
        2,
    );
    // dimension mismatch without --fit
    let small = dir.path().join("small.png");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    save_image(&synth_texture(&mut rng, 16, 16), &small).unwrap();
    assert_exit(
        &run(&[
            "composite", "--fg", s(&fg), "--bg", s(&small), "--mask", s(&mask), "--out",
            s(&out_p),
        ]),
        2,
    );
}

#[test]
fn numeric_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();

    // a well-formed checkpoint with a NaN weight sends the first training
    // loss non-finite
    let init = dir.path().join("init.bin");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    compositor::fusion::FusionNet::two_stream(1, 2, 1, 1, &mut rng)
        .unwrap()
        .save(&init)
        .unwrap();
    let (mut store, meta) = compositor::nn::load_checkpoint(&init).unwrap();
    let name = store.names().next().unwrap().to_string();
    store.get_mut(&name).unwrap().data_mut()[0] = f64::NAN;
    let meta: Vec<(String, String)> = meta.into_iter().collect();
    let poisoned = dir.path().join("poisoned.bin");
    compositor::nn::save_checkpoint(&poisoned, &store, &meta).unwrap();

    let out = run(&[
        "train",
        "--synth",
        "2",
        "--synth-size",
        "16",
        "--crop-size",
        "16",
        "--init",
        s(&poisoned),
        "--iterations",
        "5",
        "--seed",
        "3",
        "--out",
        s(&dir.path().join("ck.bin")),
    ]);
    assert_exit(&out, 3);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("non-finite"), "stderr should name the failure: {stderr}");

    // an unreachable tolerance fails every gradient check
    assert_exit(&run(&["gradcheck", "--suite", "ops", "--tol", "1e-12"]), 3);
}

#[test]
fn cli_output_matches_direct_library_calls() {
    let dir = tempfile::tempdir().unwrap();
    let (fg_p, bg_p, mask_p) = write_fixtures(dir.path());

    // The library side starts from the same decoded PNGs the CLI sees.
    let fg = load_image(&fg_p).unwrap();
    let bg = load_image(&bg_p).unwrap();
    let mask = load_mask(&mask_p).unwrap();

    let cases: Vec<(&str, Vec<String>, PathBuf)> = vec![
        ("copy-paste", vec!["--method".into(), "copy-paste".into()], {
            let p = dir.path().join("lib_cp.png");
            save_image(&copy_paste(&fg, &bg, &mask).unwrap(), &p).unwrap();
            p
        }),
        ("feather", vec!["--method".into(), "feather".into(), "--sigma".into(), "2".into()], {
            let p = dir.path().join("lib_fe.png");
            let soft = feather_mask(&mask, 2.0).unwrap();
            save_image(&alpha_composite(&fg, &bg, &soft).unwrap(), &p).unwrap();
            p
        }),
        ("pyramid", vec!["--method".into(), "pyramid".into(), "--levels".into(), "3".into()], {
            let p = dir.path().join("lib_py.png");
            save_image(&pyramid_blend(&fg, &bg, &mask, 3).unwrap(), &p).unwrap();
            p
        }),
    ];
    for (name, extra, lib_path) in cases {
        let cli_path = dir.path().join(format!("cli_{name}.png"));
        let mut args: Vec<String> = vec![
            "composite".into(),
            "--fg".into(),
            s(&fg_p).into(),
            "--bg".into(),
            s(&bg_p).into(),
            "--mask".into(),
            s(&mask_p).into(),
            "--out".into(),
            s(&cli_path).into(),
        ];
        args.extend(extra);
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        assert_exit(&run(&refs), 0);
        assert_eq!(
            std::fs::read(&cli_path).unwrap(),
            std::fs::read(&lib_path).unwrap(),
            "composite --method {name} must be byte-identical to the library"
        );
    }

    // feather and trimap subcommands against their library counterparts
    let cli_feather = dir.path().join("cli_feather_mask.png");
    assert_exit(
        &run(&[
            "feather", "--mask", s(&mask_p), "--sigma", "2", "--out", s(&cli_feather),
        ]),
        0,
    );
    let lib_feather = dir.path().join("lib_feather_mask.png");
    save_mask(&feather_mask(&mask, 2.0).unwrap(), &lib_feather).unwrap();
    assert_eq!(std::fs::read(&cli_feather).unwrap(), std::fs::read(&lib_feather).unwrap());

    let cli_tri = dir.path().join("cli_tri.png");
    assert_exit(
        &run(&[
            "trimap", "--mask", s(&mask_p), "--band", "16", "--threshold", "0.5", "--out",
            s(&cli_tri),
        ]),
        0,
    );
    let lib_tri = dir.path().join("lib_tri.png");
    save_mask(&make_trimap(&mask, 16, 0.5).unwrap().to_mask(), &lib_tri).unwrap();
    assert_eq!(std::fs::read(&cli_tri).unwrap(), std::fs::read(&lib_tri).unwrap());
}

#[test]
fn eval_with_no_methods_writes_empty_report_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report");
    let out = run(&[
        "eval",
        "--data",
        s(&dir.path().join("never-created")),
        "--methods",
        "",
        "--out",
        s(&report),
    ]);
    assert_exit(&out, 0);
    let text = std::fs::read_to_string(report.join("report.csv")).unwrap();
    assert_eq!(text.lines().count(), 1, "header only: {text:?}");
}

#[test]
fn omitted_seed_is_logged_and_explicit_seed_is_not() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["augment", "--out", s(&dir.path().join("a")), "--easy", "1"]);
    assert_exit(&out, 0);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("seed: "), "random seed must be logged: {stderr:?}");

    let out = run(&["augment", "--out", s(&dir.path().join("b")), "--easy", "1", "--seed", "8"]);
    assert_exit(&out, 0);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(!stderr.contains("seed: "), "explicit seed must not relog: {stderr:?}");
}

#[test]
fn train_zero_iterations_saves_the_untouched_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    for (path, iters) in [(&a, "0"), (&b, "0")] {
        assert_exit(
            &run(&[
                "train",
                "--synth",
                "2",
                "--synth-size",
                "16",
                "--levels",
                "2",
                "--base",
                "2",
                "--growth",
                "1",
                "--db-layers",
                "1",
                "--iterations",
                iters,
                "--seed",
                "21",
                "--threads",
                "1",
                "--out",
                s(path),
            ]),
            0,
        );
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap(), "zero-iteration runs must be identical");

    // and it really is the seed-21 initialization, untouched by training
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let net = compositor::fusion::FusionNet::two_stream(2, 2, 1, 1, &mut rng).unwrap();
    let lib = dir.path().join("lib.bin");
    net.save(&lib).unwrap();
    assert_eq!(bytes, std::fs::read(&lib).unwrap(), "checkpoint must equal the library init");
}
