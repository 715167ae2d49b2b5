use std::path::Path;
use std::process::{Command, Output};

fn nbdebias(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nbdebias"))
        .args(args)
        .output()
        .unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn coat(dir: &Path) -> (String, String) {
    let out = nbdebias(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--set",
        "synth.format=coat",
        "--set",
        "coat.n_users=80",
        "--set",
        "coat.n_items=60",
        "--set",
        "coat.logged_per_user=12",
        "--set",
        "coat.uniform_per_user=8",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (
        format!("data.train={}", dir.join("train.tsv").display()),
        format!("data.test={}", dir.join("test.tsv").display()),
    )
}

#[test]
fn synth_world_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifests = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = nbdebias(&[
            "synth",
            "--out",
            out_dir.to_str().unwrap(),
            "--set",
            "completion.epochs=5",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let manifest = read(&out_dir.join("world/manifest.txt"));
        let listed = manifest.lines().filter(|l| l.starts_with("sha256.")).count();
        assert_eq!(listed, 9, "{manifest}");
        manifests.push(manifest);
    }
    assert_eq!(manifests[0], manifests[1]);
}

#[test]
fn missing_dataset_fails_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = nbdebias(&[
        "synth",
        "--out",
        out_dir.to_str().unwrap(),
        "--set",
        "source.kind=file",
        "--set",
        "data.train=/nonexistent/ratings.tsv",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
    assert!(!out_dir.exists());
}

#[test]
fn config_errors_exit_two() {
    for args in [
        vec!["train", "--set", "no.such.key=1"],
        vec!["train", "--set", "train.method=sgd"],
        vec!["verify-bias-variance", "--set", "verify.grid=0.1"],
    ] {
        assert_eq!(nbdebias(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn malformed_data_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "u1\ti1\tfive\n").unwrap();
    let set = format!("data.train={}", bad.display());
    let out = nbdebias(&["train", "--out", dir.path().to_str().unwrap(), "--set", &set]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn infeasible_world_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let out = nbdebias(&[
        "synth",
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "world.fraction=0.9",
        "--set",
        "completion.epochs=2",
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = coat(dir.path());
    let out_dir = dir.path().join("run");
    let base = |cmd: &'static str| {
        vec![
            cmd.to_string(),
            "--out".into(),
            out_dir.to_str().unwrap().into(),
            "--set".into(),
            train.clone(),
            "--set".into(),
            test.clone(),
            "--set".into(),
            "train.epochs=8".into(),
        ]
    };
    let run = |args: Vec<String>| {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = nbdebias(&refs);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    run(base("train"));
    let metrics = read(&out_dir.join("metrics.csv"));
    let model = read(&out_dir.join("model.kv"));
    assert!(metrics.starts_with("# config_hash="));
    assert!(read(&out_dir.join("curve.csv")).starts_with("# config_hash="));

    // idempotent
    run(base("train"));
    assert_eq!(read(&out_dir.join("metrics.csv")), metrics);
    assert_eq!(read(&out_dir.join("model.kv")), model);

    run(base("eval"));
    let body = |s: &str| s.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    assert_eq!(body(&read(&out_dir.join("eval.csv"))), body(&metrics));

    let mut random = base("eval");
    random.extend(["--set".into(), "eval.init=random".into()]);
    run(random);
    let auc = |s: &str| -> f64 {
        s.lines()
            .find(|l| l.starts_with("auc,"))
            .and_then(|l| l.rsplit(',').nth(1))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!(auc(&metrics) > auc(&read(&out_dir.join("eval_random.csv"))));
}

#[test]
fn estimate_table_shape() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let small = [
        "--set",
        "source.n_users=60",
        "--set",
        "source.n_items=60",
        "--set",
        "source.density=0.2",
        "--set",
        "world.mask_users=4",
        "--set",
        "world.mask_items=4",
        "--set",
        "completion.epochs=10",
    ];
    let mut args = vec!["synth", "--out", d];
    args.extend(small);
    assert!(nbdebias(&args).status.success());
    let mut args = vec!["estimate", "--out", d, "--set", "imputation.epochs=2"];
    args.extend(small);
    let out = nbdebias(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let wide = read(&dir.path().join("estimate_table.csv"));
    let rows: Vec<&str> = wide.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 8);
    assert!(rows[1..].iter().all(|r| r.split(',').count() == 7));
    let long = read(&dir.path().join("estimate.csv"));
    assert!(long
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .all(|l| l.ends_with(",10")));
}

#[test]
fn verify_and_sweep_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = nbdebias(&[
        "verify-bias-variance",
        "--out",
        d,
        "--set",
        "verify.replications=20",
        "--set",
        "verify.grid=0.1 0.2 3",
        "--set",
        "verify.estimators=n-ips",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(&dir.path().join("bias_variance_n-ips.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# config_hash="));
    assert_eq!(lines.iter().filter(|l| !l.starts_with('#')).count(), 4);
    assert!(lines.contains(&"h,bias,variance,mse"));

    let out = nbdebias(&[
        "sweep-bandwidth",
        "--out",
        d,
        "--set",
        "verify.replications=20",
        "--set",
        "sweep.grid=0.05 0.25 4",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(read(&dir.path().join("sweep_bandwidth_n-ips.csv")).contains("h_star="));

    let oracle = nbdebias(&["sweep-bandwidth", "--out", d, "--set", "sweep.estimator=n-dr-oracle"]);
    assert_eq!(oracle.status.code(), Some(4));
}
