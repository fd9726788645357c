//! Shared fixtures for the integration suites: a scripted local HTTP stub
//! speaking the chat-completions shape, canned provider scripts for full
//! dev runs, and the fixed slot values behind the golden prompt files.
//!
//! Each integration test binary compiles this module separately and uses a
//! different slice of it.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::thread::JoinHandle;

/// One scripted reaction of the HTTP stub.
#[derive(Debug, Clone)]
pub enum StubResponse {
    /// 200 with a chat-completions body carrying this content.
    Content(String),
    /// A bare status code with an empty body (e.g. 429, 500).
    Status(u16),
    /// A status code with a verbatim JSON body.
    Raw(u16, String),
}

pub struct StubServer {
    pub base_url: String,
    shutdown: mpsc::Sender<()>,
    handle: Option<JoinHandle<()>>,
}

impl Drop for StubServer {
    fn drop(&mut self) {
        let _ = self.shutdown.send(());
        // Wake the accept loop with a throwaway connection.
        if let Some(addr) = self.base_url.strip_prefix("http://") {
            let _ = TcpStream::connect(addr);
        }
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Fixed usage numbers keep recorded cassettes and cost metering exact.
pub const STUB_PROMPT_TOKENS: u64 = 100;
pub const STUB_COMPLETION_TOKENS: u64 = 20;

/// Spawn a local HTTP stub that serves the scripted responses in order,
/// closing each connection after one exchange.
pub fn spawn_chat_stub(script: Vec<StubResponse>) -> StubServer {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = mpsc::channel::<()>();
    let handle = std::thread::spawn(move || {
        let mut queue = script.into_iter();
        for stream in listener.incoming() {
            if rx.try_recv().is_ok() {
                break;
            }
            let Ok(mut stream) = stream else { break };
            if !read_request(&mut stream) {
                continue;
            }
            let response = match queue.next() {
                Some(r) => r,
                None => StubResponse::Status(500),
            };
            let payload = match response {
                StubResponse::Content(content) => {
                    let body = serde_json::json!({
                        "choices": [{
                            "message": {"role": "assistant", "content": content},
                            "finish_reason": "stop"
                        }],
                        "usage": {
                            "prompt_tokens": STUB_PROMPT_TOKENS,
                            "completion_tokens": STUB_COMPLETION_TOKENS
                        }
                    })
                    .to_string();
                    format!(
                        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                        body.len(),
                        body
                    )
                }
                StubResponse::Status(code) => format!(
                    "HTTP/1.1 {code} Stub\r\nContent-Length: 0\r\nConnection: close\r\n\r\n"
                ),
                StubResponse::Raw(code, body) => format!(
                    "HTTP/1.1 {code} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    body.len(),
                    body
                ),
            };
            let _ = stream.write_all(payload.as_bytes());
            let _ = stream.flush();
        }
    });
    StubServer { base_url: format!("http://{addr}"), shutdown: tx, handle: Some(handle) }
}

/// Consume one HTTP request (headers + content-length body). Returns false
/// for an empty/poison connection.
fn read_request(stream: &mut TcpStream) -> bool {
    let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        match reader.read_line(&mut line) {
            Ok(0) => return false,
            Ok(_) => {
                let trimmed = line.trim_end();
                if trimmed.is_empty() {
                    break;
                }
                if let Some((name, value)) = trimmed.split_once(':') {
                    if name.eq_ignore_ascii_case("content-length") {
                        content_length = value.trim().parse().unwrap_or(0);
                    }
                }
            }
            Err(_) => return false,
        }
    }
    if content_length > 0 {
        let mut body = vec![0u8; content_length];
        if reader.read_exact(&mut body).is_err() {
            return false;
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Canned provider scripts for development runs
// ---------------------------------------------------------------------------

pub const SCAFFOLD: &str = "print('final RMSE on validation set: 10.0')\n";

pub fn plan_reply(text: &str) -> String {
    format!("[Reflection]: reviewed the running log.\n[Thought]: one improvement at a time.\n[Decision]: {text}")
}

pub fn code_reply(metric: f64) -> String {
    format!("```python\nprint('final RMSE on validation set: {metric}')\n```")
}

pub fn logger_reply(step: usize) -> String {
    format!(
        "[Experiment Summary]: Step {step} changed the model configuration as instructed.\n[Experiment Result]: The validation metric was recorded."
    )
}

pub fn rank_reply(k: usize) -> String {
    (1..=k).map(|i| format!("[{i}]")).collect::<Vec<_>>().join(" > ")
}

/// Chat responses for a clean full-mode run over the given metrics, one
/// iteration each: rerank, plan, program, log.
pub fn full_run_responses(k: usize, metrics: &[f64]) -> Vec<String> {
    let mut out = Vec::new();
    for (i, m) in metrics.iter().enumerate() {
        out.push(rank_reply(k));
        out.push(plan_reply(&format!("try configuration {}", i + 1)));
        out.push(code_reply(*m));
        out.push(logger_reply(i + 1));
    }
    out
}

// ---------------------------------------------------------------------------
// Fixed slot values behind the golden prompt files
// ---------------------------------------------------------------------------

pub mod goldens {
    use ds_core::prompt_kit::{self, AdapterExample};

    /// Task description wording from the provided-task family.
    pub const TASK: &str = "You are solving this machine learning tasks of regression: \nThe dataset presented here (the Airline reviews) comprises customer feedback for British Airways. Here, we provide the textual reviews. Your task is to predict the corresponding rating in the range of {1, ..., 10} given the reviews in the test set. The evaluation metric is root mean squared error (RMSE).\nWe provide an overall pipeline in train.py. Now fill in the provided train.py script to train a language model to get a good performance.";

    pub const LOG: &str = "======Step 1======\n\n[Experiment Summary]: Trained a TF-IDF and ridge regression baseline.\n[Experiment Result]: The RMSE on the validation set was 3.21.";

    pub const CASES: [&str; 5] = [
        "Deberta is the king for text regression; EMA stabilizes training and differential learning rates help.",
        "Use k-fold cross validation and blend fold checkpoints; average by folds first, then across the rest.",
        "Token_type_ids separate prompt, question and essay; custom pooling concatenates CLS with meanpooling.",
        "Gradient boosting over handcrafted features is a strong tabular baseline before any deep model.",
        "Reverse autocorrect augmentation: randomly replace words with close analogues to fight overfitting.",
    ];

    pub const SCRIPT: &str = "import pandas as pd\nfrom sklearn.linear_model import Ridge\n\ndef train_model(X_train, y_train):\n    model = Ridge()\n    model.fit(X_train, y_train)\n    return model\n";

    pub const BUGGY_SCRIPT: &str = "import pandas as pd\nfrom sklearn.linear_model import Ridge\n\ndef train_model(X_train, y_train):\n    model = Ridge()\n    model.fit(X_train, y_labels)\n    return model\n";

    pub const PLAN: &str = "Replace the ridge regression with a pretrained DeBERTa-v3-base regressor fine-tuned for 3 epochs with learning rate 2e-5 and batch size 16.";

    pub const EXEC_LOG: &str = "Traceback (most recent call last):\n  File \"train.py\", line 6, in train_model\n    model.fit(X_train, y_labels)\nNameError: name 'y_labels' is not defined";

    pub const EXAMPLE_TASK: &str = "You are solving this machine learning tasks of classification: predict the smoker status given tabular health records. The evaluation metric is AUROC.";

    pub const EXAMPLE_SCAFFOLD: &str = "import pandas as pd\n\ndef train_model(X_train, y_train):\n    # TODO. define and train the model\n    return None\n";

    pub const EXAMPLE_SOLUTION: &str = "import pandas as pd\nfrom sklearn.ensemble import GradientBoostingClassifier\n\ndef train_model(X_train, y_train):\n    model = GradientBoostingClassifier(random_state=42)\n    model.fit(X_train, y_train)\n    return model\n";

    pub const EXTRACTOR_CODE: &str = "import lightgbm as lgb\n\nparams = {'learning_rate': 0.05, 'num_leaves': 64}\nmodel = lgb.train(params, lgb.Dataset(X, y), num_boost_round=500)\n";

    /// Render every prompt on the fixed slot values, in a stable order.
    pub fn render_all() -> Vec<(&'static str, String)> {
        let case_refs: Vec<&str> = CASES.to_vec();
        let diff = prompt_kit::code_diff(SCRIPT, BUGGY_SCRIPT);
        vec![
            (
                "revise_rank",
                prompt_kit::render_revise_rank(TASK, LOG, &case_refs).unwrap(),
            ),
            ("planner", prompt_kit::render_planner(TASK, LOG, SCRIPT, CASES[0]).unwrap()),
            ("programmer", prompt_kit::render_programmer(SCRIPT, PLAN).unwrap()),
            (
                "debugger",
                prompt_kit::render_debugger(SCRIPT, PLAN, BUGGY_SCRIPT, EXEC_LOG).unwrap(),
            ),
            ("logger", prompt_kit::render_logger(PLAN, EXEC_LOG, &diff, LOG).unwrap()),
            (
                "adapter",
                prompt_kit::render_adapter(
                    &[AdapterExample {
                        task: EXAMPLE_TASK,
                        scaffold: EXAMPLE_SCAFFOLD,
                        solution: EXAMPLE_SOLUTION,
                    }],
                    TASK,
                    EXAMPLE_SCAFFOLD,
                )
                .unwrap(),
            ),
            (
                "solution_extractor",
                prompt_kit::render_solution_extractor(EXTRACTOR_CODE).unwrap(),
            ),
        ]
    }
}
