use std::fs;
use std::io::{BufRead, BufReader};
use std::net::TcpStream;
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use mlsim_core::coord::{session_run, Channel, EntityRecord, InitPayload};
use mlsim_core::metrics::read_rows;
use mlsim_core::{EntityId, EntityKind, InstanceId};

fn mlsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlsim"))
        .args(args)
        .output()
        .expect("running mlsim")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn simulate_prints_one_metrics_row() {
    let o = mlsim(&["simulate", "--ses", "200", "--timesteps", "10", "--seed", "4", "--l1-schedule", "3:0:2"]);
    let rows = read_rows(stdout(&o).as_bytes()).unwrap();
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert_eq!((r.num_ses, r.timesteps, r.seed, r.l1_activations), (200, 10, 4, 1));
    assert!(r.total_wct >= r.l0_only_wct);
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "ses = 150\ntimesteps = 8\nttl = 2\nl1_schedule = [\"2:1:3\"]\nlps = 2\n").unwrap();
    let report = dir.path().join("steps.csv");
    let o = mlsim(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--timesteps",
        "6",
        "--out",
        report.to_str().unwrap(),
    ]);
    let r = &read_rows(stdout(&o).as_bytes()).unwrap()[0];
    assert_eq!((r.num_ses, r.timesteps, r.ttl, r.num_lps, r.l1_activations), (150, 6, 2, 2, 1));

    let mut csv = csv::Reader::from_path(&report).unwrap();
    let headers = csv.headers().unwrap().clone();
    assert_eq!(&headers[0], "timestep");
    let ai = headers.iter().position(|h| h == "active").unwrap();
    let di = headers.iter().position(|h| h == "delegated").unwrap();
    let rows: Vec<csv::StringRecord> = csv.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 6);
    for row in &rows {
        let a: usize = row[ai].parse().unwrap();
        let d: usize = row[di].parse().unwrap();
        assert_eq!(a + d, 150);
    }
    assert_eq!(&rows[2][di], "3");
}

#[test]
fn subprocess_level1_gives_the_same_run() {
    let args = ["simulate", "--ses", "200", "--timesteps", "12", "--seed", "6", "--l1-schedule", "4:0:3"];
    let inproc = read_rows(stdout(&mlsim(&args)).as_bytes()).unwrap().remove(0);
    let mut sub_args = args.to_vec();
    sub_args.extend(["--l1-mode", "subprocess"]);
    let sub = read_rows(stdout(&mlsim(&sub_args)).as_bytes()).unwrap().remove(0);
    assert_eq!(
        (inproc.generated, inproc.forwarded, inproc.delivered, inproc.l1_rreq, inproc.l1_arrivals),
        (sub.generated, sub.forwarded, sub.delivered, sub.l1_rreq, sub.l1_arrivals)
    );
    assert!(sub.l1_rreq > 0);
}

#[test]
fn invalid_input_exits_nonzero() {
    for args in [
        &["simulate", "--ses", "100", "--timesteps", "5", "--l1-schedule", "9:0:1"][..],
        &["simulate", "--l1-schedule", "1:0"],
        &["simulate", "--prob", "1.5"],
        &["simulate", "--config", "/nonexistent.toml"],
    ] {
        let o = mlsim(args);
        assert!(!o.status.success(), "{args:?} succeeded");
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn sweep_averages_each_value() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.toml");
    fs::write(
        &plan,
        "axis = \"num_l1_activations\"\nvalues = [0, 1, 2]\nrepetitions = 2\n[base]\nses = 150\ntimesteps = 10\n",
    )
    .unwrap();
    let out = dir.path().join("sweep.csv");
    let o = mlsim(&["sweep", plan.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    stdout(&o);
    let mut csv = csv::Reader::from_path(&out).unwrap();
    let h = csv.headers().unwrap().clone();
    let col = |name: &str| h.iter().position(|x| x == name).unwrap();
    let rows: Vec<csv::StringRecord> = csv.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    for (row, k) in rows.iter().zip(["0", "1", "2"]) {
        assert_eq!(&row[col("value")], k);
        assert_eq!(&row[col("l1_activations")], k);
        assert_eq!(&row[col("status")], "ok");
        assert_eq!(&row[col("runs_ok")], "2");
    }
}

#[test]
fn sweep_with_a_bad_plan_fails() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.toml");
    fs::write(&plan, "axis = \"num_ses\"\nvalues = [100]\nrepetitions = 0\n").unwrap();
    assert!(!mlsim(&["sweep", plan.to_str().unwrap()]).status.success());
}

#[test]
fn l1_server_announces_its_port_and_serves_one_session() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_mlsim"))
        .args(["l1-server", "--instance-id", "3"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("LISTENING ").expect("announcement");
    let stream = TcpStream::connect(addr).unwrap();
    let init = InitPayload {
        instance_id: InstanceId(3),
        seed: 1,
        grid_side: 10,
        fine_steps: 100,
        width: 300.0,
        height: 300.0,
        entities: vec![EntityRecord::new(EntityId(0), 150.0, 150.0, EntityKind::Mobile)],
    };
    let timeout = Duration::from_secs(10);
    let (outcome, _) = session_run(Channel::tcp(stream, timeout).unwrap(), init, &[0, 1]).unwrap();
    assert_eq!(outcome.steps.len(), 2);
    assert_eq!(outcome.last.entities.len(), 1);
    assert!(child.wait().unwrap().success());
}
