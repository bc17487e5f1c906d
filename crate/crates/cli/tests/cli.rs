use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn missbart(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_missbart")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data.csv");
    let out = missbart(&["simulate", "--fixture", "mnar1", "--n", "120", "--out", p(&data)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    data
}

const QUICK: [&str; 8] = ["--burn-in", "20", "--draws", "40", "--forest-thin", "5", "--seed", "3"];

#[test]
fn simulate_fit_diagnose_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path());
    let text = fs::read_to_string(&data).unwrap();
    assert!(text.starts_with("X1,X2,X3,X4,X5,Y1,Y2\n"));
    assert!(text.contains("NA"));

    let chain = dir.path().join("chain.json");
    let ex = dir.path().join("ex");
    let mut args = vec!["fit-missbart2", "--data", p(&data), "--responses", "Y1,Y2", "--out", p(&chain)];
    args.extend(["--export-dir", p(&ex)]);
    args.extend(QUICK);
    let out = missbart(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for kind in ["imputations", "importance", "interactions"] {
        let t = fs::read_to_string(ex.join(format!("{kind}.csv"))).unwrap();
        assert!(t.starts_with(&format!("# missbart-export v1 kind={kind}\n")));
    }
    let importance = fs::read_to_string(ex.join("importance.csv")).unwrap();
    assert_eq!(importance.lines().count(), 2 + 7);

    let dg = dir.path().join("dg");
    let out = missbart(&[
        "diagnose", "--chain", p(&chain), "--export", "detection,pdp", "--out-dir", p(&dg), "--data", p(&data),
        "--responses", "Y1,Y2", "--var", "X1", "--grid-points", "4", "--ice-rows", "10",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let pdp = fs::read_to_string(dg.join("pdp.csv")).unwrap();
    assert_eq!(pdp.lines().filter(|l| l.starts_with("pdp,")).count(), 4);
    assert!(dg.join("detection.csv").exists());
}

#[test]
fn missbart1_exports_coefficient_intervals_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path());
    let run = |tag: &str| {
        let chain = dir.path().join(format!("{tag}.json"));
        let ex = dir.path().join(tag);
        let mut args = vec!["fit-missbart1", "--data", p(&data), "--responses", "Y1,Y2", "--out", p(&chain)];
        args.extend(["--export-dir", p(&ex), "--burn-in", "20", "--draws", "120", "--seed", "3"]);
        let out = missbart(&args);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        ex
    };
    let (a, b) = (run("a"), run("b"));
    let intervals = fs::read_to_string(a.join("intervals.csv")).unwrap();
    // header lines plus (1 + q + p) x p coefficients
    assert_eq!(intervals.lines().count(), 2 + 8 * 2);
    for kind in ["imputations", "importance", "interactions", "intervals"] {
        let f = format!("{kind}.csv");
        assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap());
    }
}

#[test]
fn config_file_supplies_data_and_sampler_settings() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path());
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        format!(
            "data = {:?}\n[load]\nresponses = [\"Y1\", \"Y2\"]\n[sampler]\nburn_in = 10\nn_draws = 30\nseed = 9\n",
            p(&data)
        ),
    )
    .unwrap();
    let chain = dir.path().join("chain.json");
    let out = missbart(&["fit-missbart2", "--config", p(&config), "--out", p(&chain)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("30 draws"));
}

#[test]
fn cv_writes_metric_table() {
    let dir = tempfile::tempdir().unwrap();
    let metrics = dir.path().join("metrics.csv");
    let out = missbart(&[
        "cv", "--fixture", "mnar1", "--n", "80", "--folds", "2", "--models", "missbart2,mvbart", "--burn-in", "10",
        "--draws", "20", "--out", p(&metrics),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let t = fs::read_to_string(&metrics).unwrap();
    assert!(t.starts_with("# missbart-export v1 kind=metrics\n"));
    assert!(t.contains("missbart2") && t.contains("mvbart") && t.contains("frobenius"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&missbart(&[])), 2);
    assert_eq!(code(&missbart(&["fit-missbart1", "--bogus"])), 2);
    assert_eq!(code(&missbart(&["cv", "--fixture", "mnar1", "--models", "nope", "--out", "/dev/null"])), 2);
    assert_eq!(code(&missbart(&["simulate", "--fixture", "no-such-fixture"])), 2);
    assert_eq!(code(&missbart(&["--help"])), 0);

    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path());
    let chain = dir.path().join("c.json");
    let out = missbart(&[
        "fit-missbart2", "--data", p(&data), "--responses", "Y1,Y2", "--burn-in", "0", "--out", p(&chain),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out_chain = dir.path().join("c.json");
    let missing = missbart(&["fit-missbart1", "--data", "/nonexistent.csv", "--responses", "y", "--out", p(&out_chain)]);
    assert_eq!(code(&missing), 3);

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "x,y\n1,2\n2,oops\n3,4\n").unwrap();
    let out = missbart(&["fit-missbart1", "--data", p(&bad), "--responses", "y", "--out", p(&out_chain)]);
    assert_eq!(code(&out), 3);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("row") && stderr.contains('y'), "{stderr}");

    let negative = dir.path().join("neg.csv");
    fs::write(&negative, "x,y\n1,2\n2,-1\n3,4\n").unwrap();
    let out = missbart(&[
        "fit-missbart1", "--data", p(&negative), "--responses", "y", "--log", "y", "--out", p(&out_chain),
    ]);
    assert_eq!(code(&out), 3);

    let truncated = dir.path().join("trunc.json");
    fs::write(&truncated, "{\"format\": \"missbart-chain\", \"vers").unwrap();
    let out = missbart(&["diagnose", "--chain", p(&truncated), "--export", "imputations", "--out-dir", p(dir.path())]);
    assert_eq!(code(&out), 3);
}
