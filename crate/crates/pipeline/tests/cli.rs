use std::process::Command;

fn quanv(ws: &std::path::Path, args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_quanv"))
        .arg("--workspace")
        .arg(ws)
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn stages_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path();

    let (code, _, err) = quanv(ws, &["train"]);
    assert_eq!(code, 3, "{err}");

    let (code, out, _) = quanv(ws, &["generate"]);
    assert_eq!(code, 0);
    assert!(out.contains("healthy 150, faulty 149"), "{out}");

    let (code, out, _) = quanv(ws, &["learn-filters", "--level", "1"]);
    assert_eq!(code, 0);
    assert!(out.contains("K-means objective"), "{out}");

    let (code, _, _) = quanv(ws, &["learn-filters", "--level", "3"]);
    assert_eq!(code, 2);

    let (code, out, _) = quanv(ws, &["run-all"]);
    assert_eq!(code, 0);
    assert!(out.contains("test accuracy"), "{out}");

    let (code, out, _) = quanv(ws, &["inspect-bank", "--level", "2"]);
    assert_eq!(code, 0);
    assert_eq!(out.lines().filter(|l| l.contains("pool row")).count(), 4, "{out}");

    std::fs::write(ws.join("banks/level_1/filter_00.json"), "{}").unwrap();
    let (code, _, err) = quanv(ws, &["extract"]);
    assert_eq!(code, 4, "{err}");
    assert!(err.contains("filter_00.json"), "{err}");
}

#[test]
fn bad_config_exits_with_config_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[levels]\nwindow = 4\n").unwrap();
    let (code, _, err) = quanv(dir.path(), &["--config", cfg.to_str().unwrap(), "generate"]);
    assert_eq!(code, 2, "{err}");

    let (code, out, _) = quanv(dir.path(), &["default-config"]);
    assert_eq!(code, 0);
    let good = dir.path().join("good.toml");
    std::fs::write(&good, out).unwrap();
    let (code, _, err) = quanv(dir.path(), &["--config", good.to_str().unwrap(), "--seed-override", "3", "generate"]);
    assert_eq!(code, 0, "{err}");
}
