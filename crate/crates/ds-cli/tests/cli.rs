//! End-to-end tests of the `ds` binary: bank inspection, ingestion with a
//! replay cassette, development with record/replay against a local HTTP
//! stub, and deployment baselines.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ds_core::case_bank::{Case, CaseBank, CaseKind, Modality};
use ds_core::llm_gateway::{fingerprint, Cassette, CassetteEntry};
use ds_core::prompt_kit::{self, AdapterExample};
use ds_core::retrieval::{Embedder, MockEmbedder};

const MODEL: &str = "stub-model";

fn ds() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ds"))
}

fn write_config(dir: &Path, iterations: usize, base_url: &str) -> PathBuf {
    let path = dir.join("ds.toml");
    let banks = dir.join("bank");
    std::fs::write(
        &path,
        format!(
            "[provider]\nbase_url = \"{base_url}\"\nchat_model = \"{MODEL}\"\nembedding = \"mock\"\n\n\
             [pipeline]\niterations = {iterations}\n\n\
             [sandbox]\ntimeout_secs = 60\n\n\
             [banks]\ninsight = \"{}\"\nagent = \"{}\"\n",
            banks.join("insight").display(),
            banks.join("agent").display(),
        ),
    )
    .unwrap();
    path
}

fn seed_insight_bank(dir: &Path, n: usize) {
    let embedder = MockEmbedder::default();
    let mut bank = CaseBank::load_or_create(&dir.join("bank/insight")).unwrap();
    for i in 0..n {
        let body = format!("insight {i}: prefer gradient boosting for tabular work");
        let e = embedder.embed(&body).unwrap();
        bank.add_case(Case {
            id: format!("ins-{i}"),
            kind: CaseKind::Insight,
            modality: Modality::Tabular,
            task_desc: String::new(),
            body,
            embedding: e.values().to_vec(),
            source: "seed".into(),
        })
        .unwrap();
    }
}

fn seed_agent_bank(dir: &Path, tasks: &[&str]) {
    let embedder = MockEmbedder::default();
    let mut bank = CaseBank::load_or_create(&dir.join("bank/agent")).unwrap();
    for (i, t) in tasks.iter().enumerate() {
        let e = embedder.embed(t).unwrap();
        bank.add_case(Case {
            id: format!("sol-{i}"),
            kind: CaseKind::Solution,
            modality: Modality::Other,
            task_desc: t.to_string(),
            body: format!("print('solution {i}')"),
            embedding: e.values().to_vec(),
            source: "seed".into(),
        })
        .unwrap();
    }
}

const TASK_DESC: &str = "Predict the failure rate of synthetic widgets. The evaluation metric is root mean squared error (RMSE).";
const SCAFFOLD: &str = "print('final RMSE on validation set: 10.0')\n";

fn make_task(parent: &Path, name: &str) -> PathBuf {
    let dir = parent.join(name);
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("task.md"), TASK_DESC).unwrap();
    std::fs::write(dir.join("train.py"), SCAFFOLD).unwrap();
    dir
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_str(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

// -- minimal scripted chat stub (content-only, always 200) --

fn spawn_stub(responses: Vec<String>) -> (String, std::thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = std::thread::spawn(move || {
        let mut queue = responses.into_iter();
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            if !consume_request(&mut stream) {
                continue;
            }
            let Some(content) = queue.next() else { break };
            let body = serde_json::json!({
                "choices": [{"message": {"content": content}, "finish_reason": "stop"}],
                "usage": {"prompt_tokens": 100, "completion_tokens": 20}
            })
            .to_string();
            let _ = stream.write_all(
                format!(
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    body.len(),
                    body
                )
                .as_bytes(),
            );
        }
    });
    (format!("http://{addr}"), handle)
}

fn consume_request(stream: &mut TcpStream) -> bool {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        match reader.read_line(&mut line) {
            Ok(0) => return false,
            Ok(_) => {
                let t = line.trim_end();
                if t.is_empty() {
                    break;
                }
                if let Some((name, value)) = t.split_once(':') {
                    if name.eq_ignore_ascii_case("content-length") {
                        content_length = value.trim().parse().unwrap_or(0);
                    }
                }
            }
            Err(_) => return false,
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body).is_ok()
}

// ---------------------------------------------------------------------------

#[test]
fn bank_ls_empty_prints_header_only() {
    let tmp = tempfile::TempDir::new().unwrap();
    let config = write_config(tmp.path(), 5, "http://127.0.0.1:9");
    std::fs::create_dir_all(tmp.path().join("bank/insight")).unwrap();
    let out = ds().args(["--config"]).arg(&config).args(["bank", "ls"]).output().unwrap();
    assert!(out.status.success());
    let stdout = stdout_str(&out);
    assert_eq!(stdout.lines().count(), 1);
    assert!(stdout.starts_with("ID"));
}

#[test]
fn bank_show_unknown_id_is_config_error() {
    let tmp = tempfile::TempDir::new().unwrap();
    let config = write_config(tmp.path(), 5, "http://127.0.0.1:9");
    seed_insight_bank(tmp.path(), 1);
    let out =
        ds().args(["--config"]).arg(&config).args(["bank", "show", "missing-id"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_str(&out).contains("not found"));
}

#[test]
fn bank_stats_counts_kinds() {
    let tmp = tempfile::TempDir::new().unwrap();
    let config = write_config(tmp.path(), 5, "http://127.0.0.1:9");
    seed_insight_bank(tmp.path(), 3);
    // Mix a solution case into the insight bank, as retain would.
    let embedder = MockEmbedder::default();
    let mut bank = CaseBank::load(&tmp.path().join("bank/insight")).unwrap();
    let e = embedder.embed("solved task").unwrap();
    bank.add_case(Case {
        id: "sol-x".into(),
        kind: CaseKind::Solution,
        modality: Modality::Other,
        task_desc: "solved task".into(),
        body: "print('x')".into(),
        embedding: e.values().to_vec(),
        source: "test".into(),
    })
    .unwrap();
    let out = ds().args(["--config"]).arg(&config).args(["bank", "stats"]).output().unwrap();
    assert!(out.status.success());
    let stdout = stdout_str(&out);
    assert!(stdout.contains("cases:     4"));
    assert!(stdout.contains("insight:   3"));
    assert!(stdout.contains("solution:  1"));
    assert!(stdout.contains("dim:       64"));
}

#[test]
fn ingest_reports_and_summarized_code() {
    let tmp = tempfile::TempDir::new().unwrap();
    let config = write_config(tmp.path(), 5, "http://127.0.0.1:9");
    let reports = tmp.path().join("reports");
    std::fs::create_dir_all(&reports).unwrap();
    for i in 0..3 {
        std::fs::write(
            reports.join(format!("report{i}.md")),
            format!("Insight {i}: use cross validation.\n\n\n\nBlend checkpoints.   \n"),
        )
        .unwrap();
    }
    let code_a = "import lightgbm\nmodel = lightgbm.train({}, data)\n";
    let code_b = "import torch\nmodel = torch.nn.Linear(4, 1)\n";
    std::fs::write(reports.join("sol_a.py"), code_a).unwrap();
    std::fs::write(reports.join("sol_b.py"), code_b).unwrap();

    // Replay cassette holding the two summarization exchanges.
    let mut cassette = Cassette::new();
    for (code, summary) in
        [(code_a, "(1) Gradient boosted trees."), (code_b, "(1) A linear torch model.")]
    {
        let prompt = prompt_kit::render_solution_extractor(code).unwrap();
        cassette.insert(CassetteEntry {
            fingerprint: fingerprint(MODEL, 0.5, &prompt),
            response: summary.to_string(),
            prompt_tokens: 40,
            completion_tokens: 8,
        });
    }
    let cassette_path = tmp.path().join("cassette.jsonl");
    cassette.save(&cassette_path).unwrap();

    let out = ds()
        .args(["--config"])
        .arg(&config)
        .arg("ingest")
        .arg(&reports)
        .args(["--summarize", "--modality", "tabular", "--replay"])
        .arg(&cassette_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_str(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert_eq!(report["ingested"].as_array().unwrap().len(), 5);
    assert_eq!(report["chat_exchanges"], 2);

    let bank = CaseBank::load(&tmp.path().join("bank/insight")).unwrap();
    assert_eq!(bank.len(), 5);
    // Report whitespace was cleaned.
    let md_case = bank.cases().iter().find(|c| c.source.starts_with("report0")).unwrap();
    assert!(!md_case.body.contains("\n\n\n"));
    assert!(!md_case.body.contains("   \n"));
}

#[test]
fn ingest_code_without_summarize_is_rejected() {
    let tmp = tempfile::TempDir::new().unwrap();
    let config = write_config(tmp.path(), 5, "http://127.0.0.1:9");
    let reports = tmp.path().join("reports");
    std::fs::create_dir_all(&reports).unwrap();
    std::fs::write(reports.join("solution.py"), "print(1)\n").unwrap();
    let out = ds().args(["--config"]).arg(&config).arg("ingest").arg(&reports).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_str(&out).contains("--summarize"));
    assert!(stderr_str(&out).contains("solution.py"));
}

#[test]
fn ingest_skips_whitespace_only_report() {
    let tmp = tempfile::TempDir::new().unwrap();
    let config = write_config(tmp.path(), 5, "http://127.0.0.1:9");
    let reports = tmp.path().join("reports");
    std::fs::create_dir_all(&reports).unwrap();
    std::fs::write(reports.join("real.md"), "A useful insight.").unwrap();
    std::fs::write(reports.join("blank.md"), "   \n\n\t\n").unwrap();
    let out = ds().args(["--config"]).arg(&config).arg("ingest").arg(&reports).output().unwrap();
    assert!(out.status.success());
    assert!(stderr_str(&out).contains("whitespace-only"));
    let report: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert_eq!(report["ingested"].as_array().unwrap().len(), 1);
}

#[test]
fn develop_record_then_replay_is_byte_identical_and_prints_steps() {
    let tmp = tempfile::TempDir::new().unwrap();
    // Scripted stub for a 5-iteration full run.
    let metrics = [5.0, 4.0, 4.5, 3.0, 3.5];
    let mut responses = Vec::new();
    for (i, m) in metrics.iter().enumerate() {
        responses.push("[1] > [2] > [3] > [4] > [5]".to_string());
        responses.push(format!("[Decision]: configuration {}", i + 1));
        responses.push(format!("```python\nprint('final RMSE on validation set: {m}')\n```"));
        responses.push(format!("[Experiment Summary]: step {}\n[Experiment Result]: ok", i + 1));
    }
    let (base_url, _handle) = spawn_stub(responses);
    let config = write_config(tmp.path(), 5, &base_url);
    seed_insight_bank(tmp.path(), 5);

    let cassette = tmp.path().join("cassette.jsonl");
    let task_a = make_task(tmp.path(), "task-a");
    let out = ds()
        .current_dir(tmp.path())
        .args(["--config"])
        .arg(&config)
        .arg("develop")
        .arg(&task_a)
        .args(["--run-id", "rec", "--record"])
        .arg(&cassette)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_str(&out));
    let progress = stderr_str(&out);
    for step in 1..=5 {
        assert!(progress.contains(&format!("step {step}/5")), "missing step {step} line");
    }

    // Fresh banks and an identically-named task dir for the replay.
    std::fs::remove_dir_all(tmp.path().join("bank")).unwrap();
    seed_insight_bank(tmp.path(), 5);
    let other = tmp.path().join("elsewhere");
    std::fs::create_dir_all(&other).unwrap();
    let task_b = make_task(&other, "task-a");
    let out = ds()
        .current_dir(tmp.path())
        .args(["--config"])
        .arg(&config)
        .arg("develop")
        .arg(&task_b)
        .args(["--run-id", "rep", "--replay"])
        .arg(&cassette)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_str(&out));

    let trace_a = std::fs::read(tmp.path().join("runs/rec/trace.jsonl")).unwrap();
    let trace_b = std::fs::read(tmp.path().join("runs/rep/trace.jsonl")).unwrap();
    assert_eq!(trace_a, trace_b);
}

#[test]
fn develop_missing_task_md_fails_before_any_network() {
    let tmp = tempfile::TempDir::new().unwrap();
    // Dead base_url: any network attempt would fail as a provider error.
    let config = write_config(tmp.path(), 5, "http://127.0.0.1:9");
    seed_insight_bank(tmp.path(), 5);
    let task_dir = tmp.path().join("broken-task");
    std::fs::create_dir_all(&task_dir).unwrap();
    std::fs::write(task_dir.join("train.py"), SCAFFOLD).unwrap();
    let out = ds()
        .current_dir(tmp.path())
        .args(["--config"])
        .arg(&config)
        .arg("develop")
        .arg(&task_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_str(&out).contains("task description"));
}

#[test]
fn develop_no_cbr_prints_cases_none() {
    let tmp = tempfile::TempDir::new().unwrap();
    let config = write_config(tmp.path(), 1, "http://127.0.0.1:9");
    let task_dir = make_task(tmp.path(), "task-nc");

    // The no-cbr run needs planner, programmer, and logger replies.
    let desc = std::fs::read_to_string(task_dir.join("task.md")).unwrap();
    let planner_prompt = prompt_kit::render_planner_no_case(&desc, "", SCAFFOLD).unwrap();
    let plan = "configuration one";
    let programmer_prompt = prompt_kit::render_programmer(SCAFFOLD, plan).unwrap();
    let code = "print('final RMSE on validation set: 3.0')";
    let exec_log = "final RMSE on validation set: 3.0\n";
    let diff = prompt_kit::code_diff(SCAFFOLD, code);
    let logger_prompt = prompt_kit::render_logger(plan, exec_log, &diff, "").unwrap();
    let mut cassette = Cassette::new();
    for (prompt, response) in [
        (planner_prompt, format!("[Decision]: {plan}")),
        (programmer_prompt, format!("```python\n{code}\n```")),
        (logger_prompt, "[Experiment Summary]: done\n[Experiment Result]: 3.0".to_string()),
    ] {
        cassette.insert(CassetteEntry {
            fingerprint: fingerprint(MODEL, 0.5, &prompt),
            response,
            prompt_tokens: 10,
            completion_tokens: 5,
        });
    }
    let cassette_path = tmp.path().join("nc.jsonl");
    cassette.save(&cassette_path).unwrap();

    let out = ds()
        .current_dir(tmp.path())
        .args(["--config"])
        .arg(&config)
        .arg("develop")
        .arg(&task_dir)
        .args(["--mode", "no-cbr", "--run-id", "nc", "--replay"])
        .arg(&cassette_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_str(&out));
    assert!(stderr_str(&out).contains("cases: none"));
}

#[test]
fn develop_replay_miss_is_a_provider_error() {
    let tmp = tempfile::TempDir::new().unwrap();
    let config = write_config(tmp.path(), 5, "http://127.0.0.1:9");
    seed_insight_bank(tmp.path(), 5);
    let task_dir = make_task(tmp.path(), "task-miss");
    let cassette_path = tmp.path().join("empty.jsonl");
    Cassette::new().save(&cassette_path).unwrap();
    let out = ds()
        .current_dir(tmp.path())
        .args(["--config"])
        .arg(&config)
        .arg("develop")
        .arg(&task_dir)
        .args(["--run-id", "miss", "--replay"])
        .arg(&cassette_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr_str(&out));
    assert!(stderr_str(&out).contains("replay miss"));
}

#[test]
fn malformed_config_is_rejected_before_any_work() {
    let tmp = tempfile::TempDir::new().unwrap();
    let config = tmp.path().join("ds.toml");
    std::fs::write(&config, "[pipeline]\nk = 0\n").unwrap();
    let out = ds().args(["--config"]).arg(&config).args(["bank", "ls"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_str(&out).contains("k must be >= 1"));
}

#[test]
fn deploy_zero_shot_runs_offline_and_passes() {
    let tmp = tempfile::TempDir::new().unwrap();
    let config = write_config(tmp.path(), 5, "http://127.0.0.1:9");
    seed_agent_bank(tmp.path(), &["past widget task"]);
    let task_dir = make_task(tmp.path(), "task-zs");

    let prompt = prompt_kit::render_adapter(&[], TASK_DESC, SCAFFOLD).unwrap();
    let mut cassette = Cassette::new();
    cassette.insert(CassetteEntry {
        fingerprint: fingerprint(MODEL, 0.7, &prompt),
        response: "```python\nprint('final RMSE on validation set: 2.0')\n```".into(),
        prompt_tokens: 12,
        completion_tokens: 6,
    });
    let cassette_path = tmp.path().join("zs.jsonl");
    cassette.save(&cassette_path).unwrap();

    let out = ds()
        .current_dir(tmp.path())
        .args(["--config"])
        .arg(&config)
        .arg("deploy")
        .arg(&task_dir)
        .args(["--zero-shot", "--run-id", "zs", "--replay"])
        .arg(&cassette_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_str(&out));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("runs/zs/deploy_summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["one_pass_rate"], 1.0);
    assert_eq!(summary["tasks"][0]["selected_case_ids"].as_array().unwrap().len(), 0);
    // Zero-shot issues no embedding exchange.
    let trace = std::fs::read_to_string(tmp.path().join("runs/zs/task-zs/trace.jsonl")).unwrap();
    assert!(!trace.contains("\"event\":\"embed\""));
}

#[test]
fn deploy_random_with_seed_is_reproducible() {
    let tmp = tempfile::TempDir::new().unwrap();
    let config = write_config(tmp.path(), 5, "http://127.0.0.1:9");
    let tasks: Vec<String> = (0..10).map(|i| format!("past task number {i}")).collect();
    let refs: Vec<&str> = tasks.iter().map(String::as_str).collect();
    seed_agent_bank(tmp.path(), &refs);

    // Pre-compute which cases seed 7 picks so the adapter prompt (and thus
    // the cassette fingerprint) is known.
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let picks = rand::seq::index::sample(&mut rng, 10, 1);
    let picked = picks.iter().next().unwrap();
    let example = AdapterExample {
        task: &tasks[picked],
        scaffold: SCAFFOLD,
        solution: &format!("print('solution {picked}')"),
    };
    let prompt = prompt_kit::render_adapter(&[example], TASK_DESC, SCAFFOLD).unwrap();
    let mut cassette = Cassette::new();
    cassette.insert(CassetteEntry {
        fingerprint: fingerprint(MODEL, 0.7, &prompt),
        response: "```python\nprint('final RMSE on validation set: 2.0')\n```".into(),
        prompt_tokens: 12,
        completion_tokens: 6,
    });
    let cassette_path = tmp.path().join("rand.jsonl");
    cassette.save(&cassette_path).unwrap();

    let mut selected: Vec<serde_json::Value> = Vec::new();
    for run in ["r1", "r2"] {
        // Each run gets a pristine copy of the task dir: execution uses the
        // task dir as its workdir and overwrites train.py.
        let parent = tmp.path().join(format!("copy-{run}"));
        std::fs::create_dir_all(&parent).unwrap();
        let task_dir = make_task(&parent, "task-rand");
        let out = ds()
            .current_dir(tmp.path())
            .args(["--config"])
            .arg(&config)
            .arg("deploy")
            .arg(&task_dir)
            .args(["--random", "--seed", "7", "--run-id", run, "--replay"])
            .arg(&cassette_path)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_str(&out));
        let summary: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(tmp.path().join(format!("runs/{run}/deploy_summary.json")))
                .unwrap(),
        )
        .unwrap();
        selected.push(summary["tasks"][0]["selected_case_ids"].clone());
    }
    assert_eq!(selected[0], selected[1]);
    assert_eq!(selected[0].as_array().unwrap().len(), 1);
}

#[test]
fn deploy_three_examples_render_three_solution_sections() {
    let tmp = tempfile::TempDir::new().unwrap();
    let config = write_config(tmp.path(), 5, "http://127.0.0.1:9");
    let tasks = ["alpha forecasting", "beta classification", "gamma regression", "delta ranking"];
    seed_agent_bank(tmp.path(), &tasks);
    let task_dir = make_task(tmp.path(), "task-3ex");

    // Retrieval order is deterministic with the mock embedder; compute it.
    let embedder = MockEmbedder::default();
    let bank = CaseBank::load(&tmp.path().join("bank/agent")).unwrap();
    let query = embedder.embed(TASK_DESC).unwrap();
    let scored = ds_core::retrieval::top_k(&query, &bank, 3).unwrap();
    let examples: Vec<AdapterExample<'_>> = scored
        .iter()
        .map(|s| {
            let case = bank.get(&s.case_id).unwrap();
            AdapterExample { task: &case.task_desc, scaffold: SCAFFOLD, solution: &case.body }
        })
        .collect();
    let prompt = prompt_kit::render_adapter(&examples, TASK_DESC, SCAFFOLD).unwrap();
    assert_eq!(prompt.matches("[Solution] ```python").count(), 3);
    let mut cassette = Cassette::new();
    cassette.insert(CassetteEntry {
        fingerprint: fingerprint(MODEL, 0.7, &prompt),
        response: "```python\nprint('final RMSE on validation set: 2.0')\n```".into(),
        prompt_tokens: 12,
        completion_tokens: 6,
    });
    let cassette_path = tmp.path().join("3ex.jsonl");
    cassette.save(&cassette_path).unwrap();

    let out = ds()
        .current_dir(tmp.path())
        .args(["--config"])
        .arg(&config)
        .arg("deploy")
        .arg(&task_dir)
        .args(["--examples", "3", "--run-id", "ex3", "--replay"])
        .arg(&cassette_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_str(&out));
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("runs/ex3/deploy_summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["tasks"][0]["selected_case_ids"].as_array().unwrap().len(), 3);
}
