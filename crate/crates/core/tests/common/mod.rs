#![allow(dead_code)]

use std::path::PathBuf;

use semprobe::gateway::{GatewayConfig, PTrueBlock};
use semprobe::QARecord;

pub fn golden(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn record(question: &str, context: Option<&str>, answer: &str) -> QARecord {
    QARecord {
        id: "q1".into(),
        question: question.into(),
        context: context.map(str::to_owned),
        answers: vec![answer.into()],
        dataset: "demo".into(),
    }
}

pub fn short_form_shots() -> Vec<(String, String)> {
    [
        ("What is the capital of Italy?", "Rome"),
        ("How many legs does a spider have?", "Eight"),
        ("Who painted the Mona Lisa?", "Leonardo da Vinci"),
        ("What is the chemical symbol for gold?", "Au"),
        ("In which year did World War II end?", "1945"),
    ]
    .iter()
    .map(|(q, a)| (q.to_string(), a.to_string()))
    .collect()
}

pub fn france_block() -> PTrueBlock {
    PTrueBlock {
        question: "What is the capital of France?".into(),
        brainstormed: vec![
            "The capital of France is Paris.".into(),
            "Paris is the capital of France.".into(),
            "It's Paris.".into(),
        ],
        possible_answer: "The capital of France is Paris.".into(),
        correct: true,
    }
}

pub fn fast_config(url: String) -> GatewayConfig {
    GatewayConfig {
        base_url: url,
        timeout_secs: 5.0,
        max_retries: 3,
        backoff_base_ms: 20,
        ..GatewayConfig::default()
    }
}
