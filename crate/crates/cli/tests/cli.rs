use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn msc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msc"))
        .args(args)
        .output()
        .expect("run msc")
}

fn ok(args: &[&str]) -> Output {
    let out = msc(args);
    assert!(
        out.status.success(),
        "msc {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const DIMS: [&str; 3] = ["18", "20", "22"];

fn generate(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let t = dir.join("t.msc3");
    let g = dir.join("truth.json");
    let mut args = vec!["generate", "--dims"];
    args.extend(DIMS);
    args.extend(["--l", "3", "--gamma", "60", "--seed", "5", "--out", s(&t), "--ground-truth", s(&g)]);
    ok(&args);
    (t, g)
}

#[test]
fn generate_run_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (t, g) = generate(dir.path());
    assert_eq!(fs::metadata(&t).unwrap().len(), 4 + 24 + 8 * 18 * 20 * 22);
    let truth = json(&g);
    assert_eq!(truth["J1"], serde_json::json!([0, 1, 2]));
    assert_eq!(truth["dims"], serde_json::json!([18, 20, 22]));

    let r = dir.path().join("result.json");
    ok(&["run", "--input", s(&t), "--out", s(&r)]);
    let result = json(&r);
    for key in ["J1", "J2", "J3"] {
        let mode = &result[key];
        assert_eq!(mode["J"], serde_json::json!([0, 1, 2]), "{key}");
        for field in ["mode", "d", "iterations", "eps", "hypothesis_ok"] {
            assert!(!mode[field].is_null(), "{key}.{field}");
        }
    }
    assert!(result.get("timings_file").is_none());

    let out = ok(&["eval", "--truth", s(&g), "--result", s(&r), "--input", s(&t)]);
    let q: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(q["rec"], 1.0);
    let sim = q["sim"].as_f64().unwrap();
    assert!(sim > 0.0 && sim <= 1.0);
}

#[test]
fn multi_process_run_matches_sequential() {
    let dir = tempfile::tempdir().unwrap();
    let (t, _) = generate(dir.path());
    let seq = dir.path().join("seq.json");
    ok(&["run", "--input", s(&t), "--out", s(&seq)]);
    let seq = json(&seq);
    for np in ["3", "6"] {
        let out = dir.path().join(format!("par{np}.json"));
        ok(&["par", "--np", np, "--input", s(&t), "--out", s(&out)]);
        let par = json(&out);
        for key in ["J1", "J2", "J3"] {
            assert_eq!(par[key], seq[key], "np={np} {key}");
        }
        let timings = par["timings_file"].as_str().unwrap();
        let csv = fs::read_to_string(timings).unwrap();
        assert!(csv.starts_with("rank,group,phase,seconds\n"));
        let ranks: std::collections::BTreeSet<&str> =
            csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(ranks.len(), np.parse::<usize>().unwrap());
    }
}

#[test]
fn synthetic_ranks_match_generated_file() {
    let dir = tempfile::tempdir().unwrap();
    let (t, _) = generate(dir.path());
    let seq = dir.path().join("seq.json");
    ok(&["run", "--input", s(&t), "--out", s(&seq)]);
    let out = dir.path().join("par.json");
    let mut args = vec!["par", "--np", "3", "--dims"];
    args.extend(DIMS);
    args.extend(["--l", "3", "--gamma", "60", "--seed", "5", "--out", s(&out)]);
    ok(&args);
    let (seq, par) = (json(&seq), json(&out));
    for key in ["J1", "J2", "J3"] {
        assert_eq!(par[key], seq[key]);
    }
}

#[test]
fn parallel_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (t, _) = generate(dir.path());
    let out = dir.path().join("r.json");
    let tim = dir.path().join("t.csv");
    let args = ["par", "--np", "6", "--input", s(&t), "--out", s(&out), "--timings", s(&tim)];
    ok(&args);
    let first = fs::read(&out).unwrap();
    ok(&args);
    assert_eq!(first, fs::read(&out).unwrap());
    // threads and processes agree as well
    let threads = dir.path().join("threads.json");
    ok(&["par", "--np", "6", "--launcher", "threads", "--input", s(&t), "--out", s(&threads), "--timings", s(&tim)]);
    let (a, b) = (json(&out), json(&threads));
    for key in ["J1", "J2", "J3"] {
        assert_eq!(a[key], b[key]);
    }
}

#[test]
fn world_size_not_multiple_of_three_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (t, _) = generate(dir.path());
    let out = msc(&["par", "--np", "4", "--input", s(&t), "--out", s(&dir.path().join("r.json"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("multiple of 3"));
}

#[test]
fn corrupt_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.msc3");
    fs::write(&bad, b"NOPE").unwrap();
    let out = msc(&["run", "--input", s(&bad)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn bench_commands_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let gamma = dir.path().join("gamma.csv");
    ok(&[
        "bench", "gamma", "--dims", "12", "12", "12", "--l", "2", "--gamma-min", "5", "--gamma-max", "50", "--steps",
        "2", "--reps", "2", "--out", s(&gamma),
    ]);
    let text = fs::read_to_string(&gamma).unwrap();
    assert!(text.starts_with("gamma,rec_mean,rec_std,sim_mean,sim_std\n"));
    assert_eq!(text.lines().count(), 3);

    let scaling = dir.path().join("scaling.csv");
    ok(&["bench", "scaling", "--sizes", "9", "--procs", "3", "--reps", "1", "--out", s(&scaling)]);
    let text = fs::read_to_string(&scaling).unwrap();
    assert!(text.starts_with("dims,p,seconds_mean,seconds_std,speedup_vs_sequential\n"));
    let ps: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(ps, ["1", "3"]);
}

#[test]
fn wishart_summary() {
    let out = ok(&["wishart", "--m2", "10", "--m3", "10", "--samples", "20"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["mean"].as_f64().unwrap().is_finite());
}

#[test]
fn external_launcher_with_rank_zero_hosting_the_coordinator() {
    let dir = tempfile::tempdir().unwrap();
    let (t, _) = generate(dir.path());
    let seq = dir.path().join("seq.json");
    ok(&["run", "--input", s(&t), "--out", s(&seq)]);
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let out = dir.path().join("par.json");
    let np = 6;
    // started the way Open MPI starts ranks, rank 0 last so peers must wait
    let children: Vec<_> = (0..np)
        .rev()
        .map(|rank| {
            Command::new(env!("CARGO_BIN_EXE_msc"))
                .args(["par", "--input", s(&t), "--out", s(&out)])
                .env("OMPI_COMM_WORLD_RANK", rank.to_string())
                .env("OMPI_COMM_WORLD_SIZE", np.to_string())
                .env("MSC_COORD", format!("127.0.0.1:{port}"))
                .env("MSC_HOST_COORD", "1")
                .stderr(std::process::Stdio::piped())
                .spawn()
                .unwrap()
        })
        .collect();
    for c in children {
        let o = c.wait_with_output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (seq, par) = (json(&seq), json(&out));
    for key in ["J1", "J2", "J3"] {
        assert_eq!(par[key], seq[key]);
    }
}
