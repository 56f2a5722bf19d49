use std::path::Path;
use std::process::{Command, Output};

fn imram(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imram"))
        .args(args)
        .output()
        .expect("spawn imram")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn gen(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["gen-data", "--data", s(dir)];
    args.extend_from_slice(extra);
    imram(&args)
}

#[test]
fn gen_data_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = gen(d, &["--pairs", "10", "--val-pairs", "3", "--seed", "4", "--signal", "0.7"]);
        assert!(o.status.success(), "{o:?}");
    }
    for f in ["features.imft", "captions.txt", "vocab.txt", "train.manifest", "val.manifest"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = tmp.path().join("c");
    gen(&c, &["--pairs", "10", "--val-pairs", "3", "--seed", "5", "--signal", "0.7"]);
    assert_ne!(std::fs::read(a.join("features.imft")).unwrap(), std::fs::read(c.join("features.imft")).unwrap());
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(gen(tmp.path(), &["--pairs", "0"]).status.code(), Some(2));
    assert_eq!(imram(&["gen-data"]).status.code(), Some(2));
    assert_eq!(imram(&["no-such-command"]).status.code(), Some(2));
    let missing = tmp.path().join("missing");
    assert_eq!(imram(&["eval", "--data", s(&missing), "--checkpoint", "x.imrm"]).status.code(), Some(2));
    assert_eq!(imram(&["train", "--data", s(tmp.path())]).status.code(), Some(2));
    assert_eq!(imram(&["gradcheck", "--K", "0"]).status.code(), Some(2));
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "depth=3\n").unwrap();
    assert_eq!(imram(&["eval", "--config", s(&cfg)]).status.code(), Some(2));
}

#[test]
fn train_eval_score_salience() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let ckpt = tmp.path().join("m.imrm");
    let log = tmp.path().join("train.log");
    assert!(gen(&data, &["--pairs", "12", "--val-pairs", "4"]).status.success());
    let common = ["--data", s(&data), "--checkpoint", s(&ckpt), "--d", "12", "--word-dim", "6", "--K", "2"];
    let mut train = vec!["train", "--epochs", "2", "--batch", "4", "--log", s(&log)];
    train.extend_from_slice(&common);
    let o = imram(&train);
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    assert!(out.contains("epoch=1 ") && out.contains("epoch=2 ") && out.contains("done best_rsum="), "{out}");
    assert_eq!(std::fs::read_to_string(&log).unwrap(), out);
    assert!(ckpt.exists());
    assert!(Path::new(&format!("{}.last", ckpt.display())).exists());

    let mut eval = vec!["eval"];
    eval.extend_from_slice(&common);
    let o = imram(&eval);
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    for key in ["i2t_r1=", "i2t_r5=", "i2t_r10=", "t2i_r1=", "t2i_r5=", "t2i_r10=", "rsum="] {
        assert!(out.contains(key), "{key} missing in {out}");
    }

    let mut score = vec!["score", "--image", "1", "--text", "2"];
    score.extend_from_slice(&common);
    let out = stdout(&imram(&score));
    assert_eq!(out.lines().filter(|l| l.starts_with("step=")).count(), 2);
    assert!(out.lines().last().unwrap().starts_with("total="));

    let mut salience = vec!["salience", "--image", "0", "--text", "0", "--step", "2"];
    salience.extend_from_slice(&common);
    let o = imram(&salience);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).starts_with("step=2 mean="));

    let mut bad_step = vec!["salience", "--image", "0", "--text", "0", "--step", "3"];
    bad_step.extend_from_slice(&common);
    assert_eq!(imram(&bad_step).status.code(), Some(2));
    let mut bad_id = vec!["score", "--image", "99", "--text", "0"];
    bad_id.extend_from_slice(&common);
    assert_eq!(imram(&bad_id).status.code(), Some(2));
}

#[test]
fn resume_continues_the_epoch_count() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let ckpt = tmp.path().join("m.imrm");
    assert!(gen(&data, &["--pairs", "8"]).status.success());
    let base = ["train", "--data", s(&data), "--checkpoint", s(&ckpt), "--d", "8", "--word-dim", "4", "--K", "1", "--batch", "4"];
    let mut first = base.to_vec();
    first.extend_from_slice(&["--epochs", "1"]);
    assert!(imram(&first).status.success());
    let last = format!("{}.last", ckpt.display());
    let mut second = base.to_vec();
    second.extend_from_slice(&["--epochs", "2", "--resume", &last]);
    let o = imram(&second);
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    assert!(out.starts_with("start epoch=1 "), "{out}");
    assert!(out.contains("epoch=2 ") && !out.contains("epoch=1 steps"), "{out}");
}

#[test]
fn corrupt_files_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(gen(&data, &["--pairs", "6"]).status.success());
    let ckpt = tmp.path().join("m.imrm");
    std::fs::write(&ckpt, b"IMRM\x02\x00\x00\x00").unwrap();
    let o = imram(&["eval", "--data", s(&data), "--checkpoint", s(&ckpt)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("version"));
    let missing = tmp.path().join("absent.imrm");
    assert_eq!(imram(&["eval", "--data", s(&data), "--checkpoint", s(&missing)]).status.code(), Some(4));
    std::fs::write(data.join("train.manifest"), "name=x\nsplit=train\nbogus=1\n").unwrap();
    assert_eq!(imram(&["eval", "--data", s(&data), "--checkpoint", s(&ckpt)]).status.code(), Some(4));
}

#[test]
fn gradcheck_reports_and_passes() {
    let o = imram(&["gradcheck", "--seed", "1", "--probes", "2"]);
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    let err: f64 = out
        .split_whitespace()
        .find_map(|w| w.strip_prefix("max_rel_error="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(err < 1e-4, "{out}");
}

#[test]
fn diverging_training_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(gen(&data, &["--pairs", "8"]).status.success());
    let ckpt = tmp.path().join("m.imrm");
    let o = imram(&[
        "train", "--data", s(&data), "--checkpoint", s(&ckpt), "--d", "8", "--word-dim", "4", "--K", "1", "--epochs", "3",
        "--batch", "4", "--optimizer", "sgd", "--lr", "1e300", "--clip", "0",
    ]);
    assert_eq!(o.status.code(), Some(3), "{o:?}");
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-finite"));
}

#[test]
fn one_and_three_steps_both_train() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(gen(&data, &["--pairs", "32"]).status.success());
    for k in ["1", "3"] {
        let ckpt = tmp.path().join(format!("k{k}.imrm"));
        let o = imram(&[
            "train", "--data", s(&data), "--checkpoint", s(&ckpt), "--d", "16", "--word-dim", "8", "--K", k, "--epochs",
            "2",
        ]);
        assert!(o.status.success(), "{o:?}");
        assert!(stdout(&o).contains(&format!("K={k} ")));
    }
}

#[test]
fn trained_model_retrieves_the_clean_set_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let ckpt = tmp.path().join("m.imrm");
    assert!(gen(&data, &["--pairs", "32", "--seed", "0"]).status.success());
    let common = ["--data", s(&data), "--checkpoint", s(&ckpt), "--d", "32", "--word-dim", "16", "--K", "2"];
    let mut train = vec!["train", "--epochs", "200"];
    train.extend_from_slice(&common);
    assert!(imram(&train).status.success());
    let mut eval = vec!["eval"];
    eval.extend_from_slice(&common);
    let out = stdout(&imram(&eval));
    assert!(out.lines().any(|l| l == "rsum=600"), "{out}");
}
