use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use infrelax::market::parameter_set;
use serde_json::{json, Value};
use tempfile::TempDir;

fn infrelax(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_infrelax"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_json(path: &Path, value: &Value) {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

/// Solve set 1 on a small grid; returns the grid file path.
fn small_grid(dir: &TempDir) -> PathBuf {
    let config = dir.path().join("solve.json");
    write_json(
        &config,
        &json!({ "parameter_set": 1, "grid": { "nodes": 9, "lo": -2.0, "hi": 2.0 } }),
    );
    let grid = dir.path().join("grid.json");
    let out = infrelax(&["solve", "--config", arg(&config), "--out", arg(&grid)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    grid
}

#[test]
fn gen_params_writes_the_published_set() {
    let out = infrelax(&["gen-params", "1"]);
    assert_eq!(code(&out), 0);
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["lambda"], json!(0.336));
    assert_eq!(v["gamma"], json!(1.5));
}

#[test]
fn unknown_parameter_set_lists_valid_ids() {
    let out = infrelax(&["gen-params", "5"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("1, 2, 3, 4"), "{}", stderr(&out));
}

#[test]
fn solve_from_generated_params_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let params = dir.path().join("p1.json");
    assert_eq!(code(&infrelax(&["gen-params", "1", "--out", arg(&params)])), 0);
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let first = infrelax(&["solve", "--config", arg(&params), "--out", arg(&a)]);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    assert!(stdout(&first).starts_with("J_0("), "{}", stdout(&first));
    assert_eq!(code(&infrelax(&["solve", "--config", arg(&params), "--workers", "3", "--out", arg(&b)])), 0);
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());

    let file: Value = serde_json::from_slice(&bytes).unwrap();
    let values = file["value_grid"]["values"].as_array().unwrap();
    assert_eq!(values.len(), 11);
    assert!(values.iter().all(|row| row.as_array().unwrap().len() == 21));
}

#[test]
fn solve_requires_an_output_file() {
    let out = infrelax(&["solve"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn all_cash_problem_prints_the_closed_form() {
    let dir = TempDir::new().unwrap();
    let mut p = parameter_set(1).unwrap();
    p.alpha = 0.0;
    p.mu1 = vec![0.0; p.mu1.len()];
    let rf = p.gross_rf();
    p.mu0 = vec![rf.ln() / p.delta; p.mu0.len()];
    let closed = (p.beta.powf(p.delta) * rf.powf(1.0 - p.gamma)).powi(p.periods as i32) / (1.0 - p.gamma);

    let config = dir.path().join("solve.json");
    write_json(
        &config,
        &json!({ "params": p, "grid": { "nodes": 7, "lo": -2.0, "hi": 2.0 } }),
    );
    let grid = dir.path().join("grid.json");
    let out = infrelax(&["solve", "--config", arg(&config), "--out", arg(&grid)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let printed: f64 = stdout(&out).trim().rsplit(' ').next().unwrap().parse().unwrap();
    assert!((printed - closed).abs() < 1e-9 * closed.abs(), "{printed} vs {closed}");
}

#[test]
fn grid_with_tampered_parameters_is_rejected() {
    let dir = TempDir::new().unwrap();
    let grid = small_grid(&dir);
    let mut file: Value = serde_json::from_str(&std::fs::read_to_string(&grid).unwrap()).unwrap();
    file["params"]["gamma"] = json!(2.0);
    let tampered = dir.path().join("tampered.json");
    write_json(&tampered, &file);
    let out = infrelax(&["lower", "--grid", arg(&tampered), "--seed", "1", "--paths", "2", "--runs", "2"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn config_parameters_must_match_the_grid() {
    let dir = TempDir::new().unwrap();
    let grid = small_grid(&dir);
    let config = dir.path().join("bounds.json");
    write_json(&config, &json!({ "params": parameter_set(2).unwrap(), "seed": 3 }));
    let out = infrelax(&["lower", "--config", arg(&config), "--grid", arg(&grid), "--paths", "2", "--runs", "2"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    let out = infrelax(&["lower", "--grid", arg(&grid), "--gamma", "3", "--seed", "1"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn bound_commands_require_a_seed() {
    let dir = TempDir::new().unwrap();
    let grid = small_grid(&dir);
    for cmd in ["lower", "upper", "feasibility"] {
        let out = infrelax(&[cmd, "--grid", arg(&grid)]);
        assert_eq!(code(&out), 2, "{cmd}: {}", stderr(&out));
        assert!(stderr(&out).contains("--seed"), "{}", stderr(&out));
    }
}

#[test]
fn unknown_config_fields_are_input_errors() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("bad.json");
    write_json(&config, &json!({ "seed": 1, "pathz": 3 }));
    let out = infrelax(&["upper", "--config", arg(&config), "--print-config"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("pathz"), "{}", stderr(&out));
}

#[test]
fn print_config_shows_effective_settings() {
    let out = infrelax(&["upper", "--penalty", "M2", "--seed", "9", "--runs", "4", "--print-config"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["penalty"], json!("m2"));
    assert_eq!(v["seed"], json!(9));
    assert_eq!(v["runs"], json!(4));
    assert_eq!(v["paths_per_run"], json!(30));
    assert_eq!(v["antithetic"], json!(true));

    let lower: Value = serde_json::from_str(&stdout(&infrelax(&["lower", "--print-config"]))).unwrap();
    assert_eq!(lower["paths_per_run"], json!(100));

    let solve: Value = serde_json::from_str(&stdout(&infrelax(&["solve", "--gamma", "3", "--print-config"]))).unwrap();
    assert_eq!(solve["gamma"], json!(3.0));
    assert_eq!(solve["grid"]["nodes"], json!(21));
    assert_eq!(solve["quadrature_points"], json!(3));
}

#[test]
fn unknown_penalty_name_is_rejected() {
    let out = infrelax(&["upper", "--penalty", "m3", "--print-config"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn csv_rows_append_under_one_header() {
    let dir = TempDir::new().unwrap();
    let grid = small_grid(&dir);
    let csv = dir.path().join("bounds.csv");
    let common = ["--grid", arg(&grid), "--seed", "5", "--paths", "2", "--runs", "2", "--out", arg(&csv)];
    let lower = infrelax(&[&["lower"][..], &common].concat());
    assert_eq!(code(&lower), 0, "{}", stderr(&lower));
    for penalty in ["zero", "m1", "m2"] {
        let out = infrelax(&[&["upper", "--penalty", penalty][..], &common].concat());
        assert_eq!(code(&out), 0, "{penalty}: {}", stderr(&out));
    }
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5, "{text}");
    assert!(lines[0].starts_with("parameter_set,gamma,bound_type,penalty,value_mean"));
    assert!(lines[1].starts_with("1,1.5,lower,none,"), "{text}");
    assert!(lines[2].starts_with("1,1.5,upper,zero,"), "{text}");

    let mut reader = csv::Reader::from_path(&csv).unwrap();
    let rows: Vec<Value> = reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            json!({ "mean": r[4].parse::<f64>().unwrap(), "flagged": r[11].parse::<u64>().unwrap() })
        })
        .collect();
    let lower_mean = rows[0]["mean"].as_f64().unwrap();
    let zero_mean = rows[1]["mean"].as_f64().unwrap();
    assert!(zero_mean > lower_mean, "zero-penalty bound {zero_mean} below lower bound {lower_mean}");
    assert!(rows.iter().all(|r| r["flagged"] == json!(0)));

    let report = infrelax(&["report", arg(&csv)]);
    assert_eq!(code(&report), 0, "{}", stderr(&report));
    let table = stdout(&report);
    let header = table.lines().next().unwrap();
    for column in ["Lower", "Dual Bound 1", "Dual Bound 2", "Zero Penalty", "Gap", "CE(1e-1)"] {
        assert!(header.contains(column), "{table}");
    }
    assert_eq!(table.lines().count(), 2, "{table}");
    assert!(!table.contains("n/a"), "{table}");
}

#[test]
fn report_marks_missing_bounds_absent() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("only_lower.csv");
    std::fs::write(
        &csv,
        "parameter_set,gamma,bound_type,penalty,value_mean,value_stderr,ce_mean,ce_stderr,paths_per_run,runs,seed,flagged_paths\n\
         1,1.5,lower,none,-5.48,0.003,0.1332,0.0001,100,10,42,0\n\
         1,3,lower,none,-42.887,0.05,0.108,0.0001,100,10,42,0\n",
    )
    .unwrap();
    let out = infrelax(&["report", arg(&csv)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = stdout(&out);
    assert_eq!(table.lines().count(), 3, "{table}");
    assert!(table.lines().skip(1).all(|l| l.ends_with("n/a")), "{table}");
    assert_eq!(code(&infrelax(&["report"])), 2);
}

#[test]
fn feasibility_reports_json() {
    let dir = TempDir::new().unwrap();
    let grid = small_grid(&dir);
    let report = dir.path().join("feas.json");
    let out = infrelax(&[
        "feasibility", "--grid", arg(&grid), "--penalty", "m2", "--seed", "8", "--paths", "2000", "--workers", "2",
        "--out", arg(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["pass"], json!(true));
    assert_eq!(v["pairs"], json!(2000));
    assert_eq!(v["penalty"], json!("m2"));

    let small = infrelax(&["feasibility", "--grid", arg(&grid), "--seed", "8", "--paths", "10"]);
    assert_eq!(code(&small), 2);
}

fn matching_mdp() -> Value {
    json!({
        "horizon": 1,
        "states": ["start", "hit", "miss"],
        "actions": ["a0", "a1"],
        "outcomes": ["v0", "v1"],
        "outcome_probs": [0.5, 0.5],
        "transition": [[["hit", "miss"], ["miss", "hit"]], [[1, 1], [1, 1]], [[2, 2], [2, 2]]],
        "stage_reward": [[[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]],
        "terminal_reward": [0.0, 1.0, 0.0],
        "initial_state": "start"
    })
}

#[test]
fn verify_finite_on_the_matching_problem() {
    let dir = TempDir::new().unwrap();
    let mdp = dir.path().join("matching.json");
    write_json(&mdp, &matching_mdp());
    let out = infrelax(&["verify-finite", arg(&mdp)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["pass"], json!(true));
    let r = &v["report"];
    assert_eq!(
        (r["v0"].as_f64(), r["zero_penalty_bound"].as_f64(), r["optimal_penalty_bound"].as_f64()),
        (Some(0.5), Some(1.0), Some(0.5))
    );
}

#[test]
fn verify_finite_on_a_deterministic_problem_gives_equal_values() {
    let dir = TempDir::new().unwrap();
    let mut doc = matching_mdp();
    doc["outcome_probs"] = json!([1.0, 0.0]);
    let mdp = dir.path().join("det.json");
    write_json(&mdp, &doc);
    let out = infrelax(&["verify-finite", arg(&mdp)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = &serde_json::from_str::<Value>(&stdout(&out)).unwrap()["report"];
    assert_eq!(r["v0"], json!(1.0));
    assert_eq!(r["zero_penalty_bound"], json!(1.0));
    assert_eq!(r["optimal_penalty_bound"], json!(1.0));
}

#[test]
fn corrupted_mdp_reports_the_parse_location() {
    let dir = TempDir::new().unwrap();
    let mdp = dir.path().join("broken.json");
    let text = serde_json::to_string_pretty(&matching_mdp()).unwrap();
    std::fs::write(&mdp, &text[..text.len() / 2]).unwrap();
    let out = infrelax(&["verify-finite", arg(&mdp)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line"), "{}", stderr(&out));
    assert!(stderr(&out).contains("column"), "{}", stderr(&out));
}

#[test]
fn enumeration_guard_exits_with_resource_code() {
    // 3^13 scenario sequences exceed the enumeration limit.
    let horizon = 13;
    let doc = json!({
        "horizon": horizon,
        "states": ["s"],
        "actions": ["a"],
        "outcomes": ["o0", "o1", "o2"],
        "outcome_probs": [0.2, 0.3, 0.5],
        "transition": [[[0, 0, 0]]],
        "stage_reward": vec![json!([[1.0]]); horizon],
        "terminal_reward": [0.0],
        "initial_state": 0
    });
    let dir = TempDir::new().unwrap();
    let mdp = dir.path().join("big.json");
    write_json(&mdp, &doc);
    let out = infrelax(&["verify-finite", arg(&mdp)]);
    assert_eq!(code(&out), 5, "{}", stderr(&out));
}

#[test]
fn worker_count_does_not_change_csv_output() {
    let dir = TempDir::new().unwrap();
    let grid = small_grid(&dir);
    for (cmd, penalty) in [("lower", "m1"), ("upper", "m1"), ("upper", "m2"), ("upper", "zero")] {
        let rows: Vec<String> = ["1", "4"]
            .iter()
            .map(|w| {
                let out = infrelax(&[
                    cmd, "--grid", arg(&grid), "--penalty", penalty, "--seed", "77", "--paths", "3", "--runs", "3",
                    "--workers", w,
                ]);
                assert_eq!(code(&out), 0, "{}", stderr(&out));
                stdout(&out)
            })
            .collect();
        assert_eq!(rows[0], rows[1], "{cmd} {penalty}");
    }
}
