use std::path::{Path, PathBuf};
use std::process::Command;

use privsec::harness::config::ExperimentConfig;
use privsec::harness::metrics::{read_metrics, write_metrics};
use privsec::harness::run_experiment;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn load(name: &str) -> ExperimentConfig {
    let text = std::fs::read_to_string(configs().join(name)).unwrap();
    ExperimentConfig::parse(&text).unwrap()
}

fn values(cfg: &ExperimentConfig, stage: &str, key: &str) -> Vec<Option<f64>> {
    run_experiment(cfg)
        .unwrap()
        .records
        .iter()
        .filter(|r| r.stage == stage)
        .map(|r| r.get(key))
        .collect()
}

#[test]
fn paillier_starves_the_inversion_server() {
    let plain = values(&load("fed_inversion.ini"), "inversion", "mse_vs_truth");
    let enc = values(
        &load("fed_inversion_paillier.ini"),
        "inversion",
        "mse_vs_truth",
    );
    assert_eq!(plain.len(), 2);
    assert_eq!(enc.len(), 2);
    for (p, e) in plain.iter().zip(&enc) {
        assert!(p.unwrap() < 1e-2);
        // no gradient reached the attack, so there is no reconstruction at all
        assert_eq!(*e, None);
    }
}

#[test]
fn tcp_transport_gives_identical_metrics() {
    let mut cfg = load("fed_labelflip.ini");
    let a = run_experiment(&cfg).unwrap();
    cfg.fed.as_mut().unwrap().1 = privsec::fed::Transport::Tcp;
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn metrics_file_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&load("fed_mpaf.ini")).unwrap();
    let p = dir.path().join("m.jsonl");
    write_metrics(&out.records, &p).unwrap();
    let (back, summary) = read_metrics(&p).unwrap();
    assert_eq!(back, out.records);
    assert_eq!(summary.records, out.records.len() as u64);
    assert_eq!(summary.run_id.as_deref(), Some("fed-mpaf-5"));
}

fn cli(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_privsec"))
        .args(args)
        .current_dir(dir)
        .env_remove("PRIVSEC_SEED")
        .output()
        .unwrap()
}

fn one_line_error(out: &std::process::Output) -> serde_json::Value {
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    serde_json::from_str(err.trim()).unwrap()
}

#[test]
fn cli_reports_errors_as_one_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("bad.ini"),
        "seed = 1\n[dataset]\nkind = moons\nbogus = 3\n",
    )
    .unwrap();
    let e = one_line_error(&cli(&["train", "--config", "bad.ini"], d));
    assert_eq!(e["error"], "config");
    assert!(e["message"].as_str().unwrap().contains("bogus"));

    let e = one_line_error(&cli(&["train", "--config", "missing.ini"], d));
    assert_eq!(e["error"], "io");
    let e = one_line_error(&cli(&["frobnicate"], d));
    assert_eq!(e["error"], "usage");
    let cfg = configs().join("fgsm.ini");
    let e = one_line_error(&cli(
        &["attack", "mpaf", "--config", cfg.to_str().unwrap()],
        d,
    ));
    assert_eq!(e["error"], "config");
}

#[test]
fn cli_subcommands_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = cli(
        &[
            "dataset",
            "gen",
            "--kind",
            "gaussians",
            "--n",
            "50",
            "--seed",
            "3",
            "--out",
            "g.csv",
        ],
        d,
    );
    assert!(out.status.success());
    let text = std::fs::read_to_string(d.join("g.csv")).unwrap();
    assert_eq!(text.lines().count(), 51);

    std::fs::write(
        d.join("t.ini"),
        "seed = 5\n[dataset]\npath = g.csv\n[model]\narch = linear\nepochs = 5\n[output]\nmetrics = out/m.jsonl\n",
    )
    .unwrap();
    let out = cli(&["train", "--config", "t.ini"], d);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["summary"], true);
    assert!(d.join("out/m.jsonl").exists());

    let out = cli(
        &[
            "audit", "dp", "--q", "1", "--sigma", "1", "--steps", "1", "--delta", "1e-5",
        ],
        d,
    );
    let audit: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((audit["epsilon"].as_f64().unwrap() - 5.303).abs() < 1e-3);
    assert_eq!(audit["order"], 5);

    std::fs::write(
        d.join("p.csv"),
        "age,zip,dx\n30,100,a\n31,101,b\n40,200,a\n45,201,c\n50,300,b\n",
    )
    .unwrap();
    let out = cli(
        &[
            "anonymize",
            "--k",
            "2",
            "--qi",
            "age,zip",
            "--sensitive",
            "dx",
            "p.csv",
            "q.csv",
        ],
        d,
    );
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["k_anonymous"], true);
    let e = one_line_error(&cli(
        &["anonymize", "--k", "9", "--qi", "age", "p.csv", "r.csv"],
        d,
    ));
    assert_eq!(e["error"], "anonymize");
}

#[test]
fn env_seed_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = configs().join("baseline.ini");
    let run = |seed: Option<&str>, out: &str| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_privsec"));
        c.args(["train", "--config", cfg.to_str().unwrap(), "--metrics", out])
            .current_dir(d);
        match seed {
            Some(s) => c.env("PRIVSEC_SEED", s),
            None => c.env_remove("PRIVSEC_SEED"),
        };
        assert!(c.output().unwrap().status.success());
        read_metrics(&d.join(out)).unwrap().1
    };
    assert_eq!(run(None, "a.jsonl").seed, Some(1));
    assert_eq!(run(Some("77"), "b.jsonl").seed, Some(77));
}

#[test]
fn multi_process_federation_matches_local_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = configs().join("fed_baseline.ini");
    let cfg = cfg.to_str().unwrap();
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    drop(listener);
    let bin = env!("CARGO_BIN_EXE_privsec");
    let mut server = Command::new(bin)
        .args([
            "fed",
            "run",
            "--role",
            "server",
            "--addr",
            &addr,
            "--config",
            cfg,
            "--metrics",
            "srv.jsonl",
        ])
        .current_dir(d)
        .env_remove("PRIVSEC_SEED")
        .stdout(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let clients: Vec<_> = (1..=4)
        .map(|r| {
            Command::new(bin)
                .args([
                    "fed",
                    "run",
                    "--role",
                    "client",
                    "--rank",
                    &r.to_string(),
                    "--addr",
                    &addr,
                    "--config",
                    cfg,
                ])
                .env_remove("PRIVSEC_SEED")
                .stdout(std::process::Stdio::null())
                .spawn()
                .unwrap()
        })
        .collect();
    for mut c in clients {
        assert!(c.wait().unwrap().success());
    }
    assert!(server.wait().unwrap().success());
    assert!(cli(
        &["fed", "run", "--config", cfg, "--metrics", "local.jsonl"],
        d
    )
    .status
    .success());
    assert_eq!(
        std::fs::read(d.join("srv.jsonl")).unwrap(),
        std::fs::read(d.join("local.jsonl")).unwrap()
    );
}
