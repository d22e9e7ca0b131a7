use std::process::{Command, Output};

fn gtedit(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gtedit"));
    cmd.args(args).env_remove("GT_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn fig1_prints_ace_for_both_engines() {
    let o = gtedit(&["fig1"], &[]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert_eq!(out.matches("result \"ace\"/\"ace\"").count(), 2, "{out}");
    assert!(out.contains("s1  receive   O2.1 as I 1 c"));
    assert!(out.contains("BUF=[D 1@1.1, I 1 c@2.1]"));
    assert!(out.contains("s2 broadcasts I(c, 2.1, 0.2, 0.3)"));
}

#[test]
fn fuzz_prints_json_summary() {
    let o = gtedit(
        &["fuzz", "--runs", "40", "--sites", "3", "--seed", "7", "--max-ops", "50"],
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["runs"], 40);
    assert_eq!(v["seed"], 7);
    assert_eq!(v["failures"].as_array().unwrap().len(), 0);
}

#[test]
fn ablation_run_fails_with_divergence_report() {
    let o = gtedit(
        &["run", "--ablation", "skip34", "--scenario", "fig1", "--engine", "woot"],
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["convergence"]["passed"], false);
    assert_eq!(v["sites"][0]["text"], "ae");
    assert_eq!(v["sites"][1]["text"], "abce");
    assert!(String::from_utf8_lossy(&o.stderr).contains("--seed 0"));
}

#[test]
fn bad_arguments_exit_2() {
    assert_eq!(gtedit(&["run", "--bogus"], &[]).status.code(), Some(2));
    assert_eq!(gtedit(&["frobnicate"], &[]).status.code(), Some(2));
    assert_eq!(
        gtedit(&["run", "--scenario", "fig1", "--engine", "crdt"], &[])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        gtedit(&["run", "--scenario", "/nonexistent/file"], &[]).status.code(),
        Some(2)
    );
    assert_eq!(
        gtedit(&["run", "--scenario", "fig1"], &[("GT_SEED", "x")])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn csv_row_and_seed_override() {
    let o = gtedit(
        &["run", "--scenario", "fig1", "--engine", "woot", "--format", "csv"],
        &[],
    );
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        stdout(&o),
        "run_id,engine,sites,doc_len,ops,max_c,mean_c,C,C_t,local_ns_mean,remote_ns_mean,init_cost,gc_total,converged\n\
         fig1,woot,2,3,2,0,0.0,3,4,0.0,0.0,3,0,true\n"
    );
    let o = gtedit(&["run", "--scenario", "fig1", "--seed", "3"], &[("GT_SEED", "42")]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["seed"], 42);
}

#[test]
fn scenario_file_and_trace_output() {
    let dir = std::env::temp_dir().join(format!("gtedit-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let sc = dir.join("s.txt");
    std::fs::write(
        &sc,
        "name three\nsites 3\ndoc xyz\nmode sequencer\nseed 5\nlatency uniform 1 5\n@0 s1 I 0 a\n@0 s2 D 2\n@1 s3 I 3 b\n",
    )
    .unwrap();
    let trace = dir.join("trace.txt");
    let args = [
        "run",
        "--scenario",
        sc.to_str().unwrap(),
        "--engine",
        "ot",
        "--trace",
        trace.to_str().unwrap(),
    ];
    let o = gtedit(&args, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["sites"][0]["text"], "axyb");
    let t = std::fs::read_to_string(&trace).unwrap();
    assert!(t.starts_with("tick=0 site=0 kind=start engine=ot mode=sequencer sites=3 doc=xyz\n"));
    assert_eq!(t, std::fs::read_to_string(&trace).unwrap());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn bench_reports_checks() {
    let o = gtedit(&["bench", "--doc-len", "2000", "--ops", "100"], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
    assert!(v["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
}
