use std::path::Path;
use std::process::{Command, Output};

fn vlcbc(args: &[&str], out: &Path) -> Output {
    let o = Command::new(env!("CARGO_BIN_EXE_vlcbc")).args(args).arg("-o").arg(out).output().unwrap();
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

#[test]
fn heatmap_writes_grid_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    vlcbc(&["heatmap", "--kind", "rss", "--resolution", "0.25", "--seed", "5"], dir.path());
    assert!(dir.path().join("heatmap_rss.grid").is_file());
    let manifest = std::fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 5"), "{manifest}");
}

#[test]
fn synth_then_decode_recovers_the_led() {
    let dir = tempfile::tempdir().unwrap();
    vlcbc(&["synth", "--x", "0.4", "--y", "1.2", "--noiseless", "--duration", "0.05"], dir.path());
    let iq = dir.path().join("reader.iq");
    let o = Command::new(env!("CARGO_BIN_EXE_vlcbc")).arg("decode").arg(&iq).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("epoch,id,rss_db"));
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("3")), "{text}");
}

#[test]
fn track_writes_metrics_and_cdf() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    std::fs::write(&cfg, "[tracker]\nnum_particles = 300\n").unwrap();
    let o = vlcbc(&["track", "-c", cfg.to_str().unwrap(), "--reps", "2", "--traces"], dir.path());
    assert!(String::from_utf8(o.stdout).unwrap().contains("path-1"));
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 4 * 2);
    assert!(dir.path().join("cdf.csv").is_file());
    assert_eq!(std::fs::read_dir(dir.path().join("traces")).unwrap().count(), 8);
}

#[test]
fn rejects_positions_outside_the_room() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_vlcbc"))
        .args(["synth", "--x", "9", "--y", "0.5", "-o"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!o.status.success());
}
