use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use reflectsim::allocator::{user_rate, Allocation};
use reflectsim::config::ScenarioConfig;
use tempfile::TempDir;

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reflectsim")).args(args).output().unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

const ONE_USER: &str = r#"
version = 1
[scene]
tx = [0.0, 0.0, 1.0]
[[scene.users]]
position = [3.0, 0.0, 1.0]
rate_threshold_bps = 1e9
[allocation]
p_t_tot_w = 1.0
n_a_tot = 8
m_s_tot = 6
snr_threshold_db = 10.0
power_levels_w = [0.5, 1.0]
antenna_block = 2
element_block = 2
"#;

// Closed 10 m x 10 m x 2 m room, so reach saturates at the walls.
const ROOM: &str = r#"
[[scene.surfaces]]
id = "s"
corner = [-5.0, -5.0, 0.0]
edge_u = [10.0, 0.0, 0.0]
edge_v = [0.0, 0.0, 2.0]
[[scene.surfaces]]
id = "n"
corner = [-5.0, 5.0, 0.0]
edge_u = [10.0, 0.0, 0.0]
edge_v = [0.0, 0.0, 2.0]
[[scene.surfaces]]
id = "w"
corner = [-5.0, -5.0, 0.0]
edge_u = [0.0, 10.0, 0.0]
edge_v = [0.0, 0.0, 2.0]
[[scene.surfaces]]
id = "e"
corner = [5.0, -5.0, 0.0]
edge_u = [0.0, 10.0, 0.0]
edge_v = [0.0, 0.0, 2.0]
"#;

fn two_users(threshold: f64) -> String {
    format!(
        r#"
version = 1
[scene]
tx = [0.0, 0.0, 1.0]
[[scene.users]]
position = [3.0, 0.0, 1.0]
rate_threshold_bps = {threshold:e}
[[scene.users]]
position = [-3.0, 0.0, 1.0]
rate_threshold_bps = {threshold:e}
{ROOM}
[allocation]
p_t_tot_w = 2.0
n_a_tot = 1024
m_s_tot = 64
snr_threshold_db = 10.0
power_levels_w = [0.5, 1.0, 1.5, 2.0]
antenna_block = 128
element_block = 8
"#
    )
}

#[test]
fn validate_bundled_fixtures() {
    for name in ["l_corridor.toml", "four_users.toml", "empty_room.toml"] {
        let out = bin(&["validate", "--scenario", scenarios().join(name).to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{name}");
        assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "OK");
    }
}

#[test]
fn validate_reports_field_paths() {
    let dir = TempDir::new().unwrap();
    let text = ONE_USER.replace("[scene]", "[scene]\nbandwidth_hz = -5.0");
    let p = write(&dir, "bad.toml", &text);
    let out = bin(&["validate", "--scenario", &p]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("scene.bandwidth_hz must be > 0"));

    let text = format!("{ONE_USER}\n[[scene.panels]]\nid = \"p\"\nm_cells = 2\nn_cells = 2\ncell_spacing_m = 1e-3\nmode = \"mirror\"\n");
    let p = write(&dir, "mode.toml", &text);
    let out = bin(&["validate", "--scenario", &p]);
    let msg = String::from_utf8_lossy(&out.stdout);
    assert!(msg.contains("scene.panels[0].mode"), "{msg}");
    assert!(msg.contains("specular, controlled_reflect, polarization_convert, absorb, waveguide"), "{msg}");
}

#[test]
fn unreadable_and_malformed_input_exit_one() {
    let out = bin(&["map", "--scenario", "/nonexistent.toml", "--out", "/tmp/x.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "broken.toml", "version = 1\n[scene\n");
    let out = bin(&["validate", "--scenario", &p]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("line 2"));
}

#[test]
fn empty_room_map_follows_inverse_square() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("map.csv");
    let status = bin(&[
        "map",
        "--scenario",
        scenarios().join("empty_room.toml").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(status.status.code(), Some(0));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("x,y,received_power_dbm\n"));
    let rows = rows(&out);
    assert_eq!(rows.len(), 9);
    let power = |r: &Vec<String>| -> (f64, f64) {
        let x: f64 = r[0].parse().unwrap();
        let y: f64 = r[1].parse().unwrap();
        (x.hypot(y), r[2].parse().unwrap())
    };
    let (d0, p0) = power(&rows[0]);
    for r in &rows {
        let (d, p) = power(r);
        // 20·log10(2) ≈ 6.02 dB per doubling
        assert!((p0 - p - 20.0 * (d / d0).log10()).abs() < 1e-5, "{r:?}");
    }
}

#[test]
fn map_is_reproducible_and_panels_only_add_power() {
    let dir = TempDir::new().unwrap();
    let scenario = scenarios().join("l_corridor.toml");
    let s = scenario.to_str().unwrap();
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["map", "--scenario", s, "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        assert_eq!(bin(&args).status.code(), Some(0));
        std::fs::read(out).unwrap()
    };
    let a = run("a.csv", &["--jobs", "8"]);
    let b = run("b.csv", &["--jobs", "1", "--seed", "99"]);
    assert_eq!(a, b);
    let base = run("base.csv", &["--no-panels", "--jobs", "4"]);

    let with = rows(&dir.path().join("a.csv"));
    let without = rows(&dir.path().join("base.csv"));
    assert_eq!(with.len(), 100 * 100);
    assert_eq!(without.len(), with.len());
    let mut seen = std::collections::HashSet::new();
    for (w, b) in with.iter().zip(&without) {
        assert_eq!(w[..2], b[..2]);
        assert!(seen.insert((w[0].clone(), w[1].clone())));
        let pw: f64 = w[2].parse().unwrap();
        let pb: f64 = b[2].parse().unwrap();
        assert!(pw.is_finite() && pb.is_finite());
        assert!(pw >= pb - 1e-9, "{w:?} vs {b:?}");
    }
    assert_ne!(a, base);
}

#[test]
fn allocate_single_user_takes_everything() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "one.toml", ONE_USER);
    let out = dir.path().join("plan.csv");
    let res = bin(&["allocate", "--scenario", &p, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let r = rows(&out);
    assert_eq!(r.len(), 1);
    assert_eq!(r[0][..4], ["0", "1", "8", "6"]);
    let objective = std::fs::read_to_string(dir.path().join("plan.csv.objective.csv")).unwrap();
    assert!(objective.starts_with("sum_distance_m,sum_rate_bps,scalarized\n"));
}

#[test]
fn allocate_infeasible_exits_two() {
    let dir = TempDir::new().unwrap();
    let text = ONE_USER.replace("rate_threshold_bps = 1e9", "rate_threshold_bps = 1e15");
    let p = write(&dir, "inf.toml", &text);
    let out = dir.path().join("plan.csv");
    let res = bin(&["allocate", "--scenario", &p, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("infeasible thresholds") && err.contains("[0]"), "{err}");
}

#[test]
fn allocate_symmetric_pair_splits_evenly() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "two.toml", &two_users(1e9));
    let run = |name: &str| {
        let out = dir.path().join(name);
        let res = bin(&["allocate", "--scenario", &p, "--out", out.to_str().unwrap()]);
        assert_eq!(res.status.code(), Some(0));
        std::fs::read(out).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    let r = rows(&dir.path().join("a.csv"));
    assert_eq!(r[0][1..4], ["1", "512", "32"]);
    assert_eq!(r[1][1..4], ["1", "512", "32"]);
}

#[test]
fn rate_sweep_rows() {
    let dir = TempDir::new().unwrap();
    let text = format!("{ONE_USER}\n[sweep]\npanel_elements = [6]\n");
    let p = write(&dir, "sweep.toml", &text);
    let out = dir.path().join("sweep.csv");
    assert_eq!(bin(&["rate-sweep", "--scenario", &p, "--out", out.to_str().unwrap()]).status.code(), Some(0));
    let r = rows(&out);
    assert_eq!(r.len(), 1);
    assert_eq!(r[0][0], "6");
    let problem = ScenarioConfig::from_toml(&text).unwrap().resource_problem().unwrap();
    let direct = user_rate(&problem, 0, Allocation { p_w: 1.0, n_a: 8, m_s: 6 }).unwrap();
    let swept: f64 = r[0][1].parse().unwrap();
    assert!((swept - direct).abs() / direct < 1e-6);

    let text = format!("{ONE_USER}\n[sweep]\npanel_elements = []\n");
    let p = write(&dir, "empty.toml", &text);
    assert_eq!(bin(&["rate-sweep", "--scenario", &p, "--out", out.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "m_s,sum_rate_bits_per_s,status\n");

    let text = format!("{}\n[sweep]\npanel_elements = [64, 8]\n", two_users(1e11));
    let p = write(&dir, "flag.toml", &text);
    assert_eq!(bin(&["rate-sweep", "--scenario", &p, "--out", out.to_str().unwrap()]).status.code(), Some(0));
    let r = rows(&out);
    assert_eq!(r[0][0], "8");
    assert_eq!(r[0][2], "infeasible");
    assert_eq!(r[1][0], "64");
    assert_eq!(r[1][2], "ok");
}

#[test]
fn taps_and_phase_exports() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("taps.csv");
    let res = bin(&[
        "taps",
        "--scenario",
        scenarios().join("empty_room.toml").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0));
    let r = rows(&out);
    assert_eq!(r.len(), 2);
    assert_eq!(r[0][1], "los");

    let out = dir.path().join("psi.csv");
    let res = bin(&[
        "phases",
        "--scenario",
        scenarios().join("l_corridor.toml").to_str().unwrap(),
        "--panel",
        "corner",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0));
    let r = rows(&out);
    assert_eq!(r.len(), 32 * 32);
    assert!(r.iter().all(|row| {
        let v: f64 = row[2].parse().unwrap();
        (0.0..std::f64::consts::TAU).contains(&v)
    }));
}
