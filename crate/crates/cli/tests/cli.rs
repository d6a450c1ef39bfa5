use std::path::Path;
use std::process::{Command, Output};

const HEADER: &str =
    "wall_time_s,learner_steps,actor_steps,eval_return_mean,eval_return_std,critic_loss_mean,actor_objective_mean,snapshot_version";

fn d4pg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_d4pg")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.cfg");
    std::fs::write(
        &path,
        "env = lq\nactors = 2\nbatch = 8\nreplay = 512\nactor_hidden = 8\ncritic_hidden = 8\n\
         atoms = 11\nvmin = 0\nvmax = 20\neval_episodes = 2\n",
    )
    .unwrap();
    path.display().to_string()
}

fn train(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let cfg = small_config(dir);
    let out = dir.join(out).display().to_string();
    let mut args = vec!["train", "--config", &cfg, "--out", &out, "--deterministic", "--eval-every", "20"];
    if !extra.contains(&"--steps") {
        args.extend_from_slice(&["--steps", "40"]);
    }
    args.extend_from_slice(extra);
    d4pg(&args)
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&d4pg(&[])), 2);
    assert_eq!(code(&d4pg(&["train", "--bogus"])), 2);
    assert_eq!(code(&d4pg(&["train", "--head", "gaussian", "--out", "x"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "nsteps = 3\n").unwrap();
    let o = d4pg(&["train", "--config", bad.to_str().unwrap(), "--out", "x"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nsteps"));
    std::fs::write(&bad, "head = categorical\nmixture_size = 3\n").unwrap();
    assert_eq!(code(&d4pg(&["train", "--config", bad.to_str().unwrap(), "--out", "x"])), 2);
    assert_eq!(code(&d4pg(&["train", "--steps", "0"])), 2);
}

#[test]
fn train_writes_csv_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(dir.path(), "run", &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(HEADER));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().flatten().all(|v| v.is_finite()));
    assert_eq!((rows[0][1], rows[1][1]), (20.0, 40.0));
    assert!(dir.path().join("run/checkpoint.bin").exists());
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train(dir.path(), "a", &[])), 0);
    assert_eq!(code(&train(dir.path(), "b", &[])), 0);
    let a = std::fs::read(dir.path().join("a/metrics.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/metrics.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn empty_run_writes_header_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(dir.path(), "empty", &["--steps", "0"]);
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(dir.path().join("empty/metrics.csv")).unwrap();
    assert_eq!(csv, format!("{HEADER}\n"));
    assert!(dir.path().join("empty/checkpoint.bin").exists());
}

#[test]
fn eval_reports_and_rejects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train(dir.path(), "run", &[])), 0);
    let cfg = small_config(dir.path());
    let ck = dir.path().join("run/checkpoint.bin");
    let o = d4pg(&["eval", "--config", &cfg, "--checkpoint", ck.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout).to_string();
    for key in ["mean ", "std ", "min ", "max "] {
        assert!(text.lines().any(|l| l.starts_with(key)), "{text}");
    }
    let again = d4pg(&["eval", "--config", &cfg, "--checkpoint", ck.to_str().unwrap()]);
    assert_eq!(o.stdout, again.stdout);

    let mut bytes = std::fs::read(&ck).unwrap();
    bytes[40] ^= 0xff;
    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, bytes).unwrap();
    let o = d4pg(&["eval", "--config", &cfg, "--checkpoint", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("checksum"));

    let o = d4pg(&["eval", "--config", &cfg, "--set", "actor_hidden=9", "--checkpoint", ck.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("layer 0"));
}

#[test]
fn resume_guards_configuration() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train(dir.path(), "run", &[])), 0);
    let ck = dir.path().join("run/checkpoint.bin").display().to_string();
    let o = train(dir.path(), "run", &["--resume", &ck, "--seed", "7", "--steps", "60"]);
    assert_eq!(code(&o), 2);
    let o = train(dir.path(), "run", &["--resume", &ck, "--seed", "7", "--steps", "60", "--force"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
}

#[test]
fn selftest_passes() {
    let o = d4pg(&["selftest"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).lines().all(|l| l.starts_with("PASS")));
}
