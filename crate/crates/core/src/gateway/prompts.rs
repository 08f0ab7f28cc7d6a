//! Prompt templates for generation, p(True), and the two LLM judges.
//!
//! Rendering is pure. Templates reproduce the reference wording exactly;
//! only the bracketed slots vary.

use serde::{Deserialize, Serialize};

use super::GatewayError;
use crate::dataset_store::QARecord;

pub const SHORT_FORM_SHOTS: usize = 5;
pub const PTRUE_SHOTS: usize = 10;

const SHORT_INSTRUCTION: &str = "Answer the following question as briefly as possible.";
const LONG_INSTRUCTION: &str =
    "Answer the following question in a single brief but complete sentence.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PromptKind {
    ShortForm,
    LongForm,
    Context,
    Ptrue,
    EntailmentJudge,
    CorrectnessJudge,
}

impl PromptKind {
    /// Generation prompts whose answers are expected on a single line.
    pub fn stops_at_newline(self) -> bool {
        matches!(self, PromptKind::ShortForm | PromptKind::Context)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub kind: PromptKind,
    /// (question, answer) demonstrations; used by `ShortForm` only.
    #[serde(default)]
    pub few_shot_examples: Vec<(String, String)>,
}

impl PromptTemplate {
    pub fn new(kind: PromptKind) -> Self {
        Self {
            kind,
            few_shot_examples: Vec::new(),
        }
    }

    pub fn short_form(examples: Vec<(String, String)>) -> Self {
        Self {
            kind: PromptKind::ShortForm,
            few_shot_examples: examples,
        }
    }
}

/// One composed p(True) demonstration (or the trailing query block, in which
/// case `correct` is ignored).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PTrueBlock {
    pub question: String,
    pub brainstormed: Vec<String>,
    pub possible_answer: String,
    pub correct: bool,
}

/// Slot values that do not live on the QA record.
#[derive(Debug, Clone, Default)]
pub struct PromptExtras<'a> {
    pub answer_a: Option<&'a str>,
    pub answer_b: Option<&'a str>,
    pub proposed: Option<&'a str>,
    pub ptrue_blocks: Option<&'a [PTrueBlock]>,
    pub brainstormed: Option<&'a [String]>,
    pub possible_answer: Option<&'a str>,
}

pub fn render_prompt(
    template: &PromptTemplate,
    record: &QARecord,
    extras: &PromptExtras<'_>,
) -> Result<String, GatewayError> {
    match template.kind {
        PromptKind::LongForm => Ok(long_form(&record.question)),
        PromptKind::ShortForm => short_form(&template.few_shot_examples, &record.question),
        PromptKind::Context => {
            let ctx = record
                .context
                .as_deref()
                .ok_or(GatewayError::MissingSlot("context"))?;
            Ok(context_prompt(ctx, &record.question))
        }
        PromptKind::EntailmentJudge => {
            let a = extras.answer_a.ok_or(GatewayError::MissingSlot("answer_a"))?;
            let b = extras.answer_b.ok_or(GatewayError::MissingSlot("answer_b"))?;
            Ok(entailment_prompt(a, b))
        }
        PromptKind::CorrectnessJudge => {
            let proposed = extras.proposed.ok_or(GatewayError::MissingSlot("proposed"))?;
            let expected = record
                .answers
                .first()
                .ok_or(GatewayError::MissingSlot("ground truth label"))?;
            Ok(correctness_prompt(&record.question, expected, proposed))
        }
        PromptKind::Ptrue => {
            let blocks = extras
                .ptrue_blocks
                .ok_or(GatewayError::MissingSlot("ptrue_blocks"))?;
            let brainstormed = extras
                .brainstormed
                .ok_or(GatewayError::MissingSlot("brainstormed"))?;
            let possible = extras
                .possible_answer
                .ok_or(GatewayError::MissingSlot("possible_answer"))?;
            ptrue_prompt(blocks, &record.question, brainstormed, possible)
        }
    }
}

pub fn long_form(question: &str) -> String {
    format!("{LONG_INSTRUCTION}\nQuestion: {question}\nAnswer:")
}

pub fn short_form(examples: &[(String, String)], question: &str) -> Result<String, GatewayError> {
    if examples.len() != SHORT_FORM_SHOTS {
        return Err(GatewayError::BadFewShot(format!(
            "short-form prompt needs {SHORT_FORM_SHOTS} demonstrations, got {}",
            examples.len()
        )));
    }
    let mut s = String::from(SHORT_INSTRUCTION);
    s.push('\n');
    for (q, a) in examples {
        s.push_str(&format!("Question: {q}\nAnswer:   {a}\n"));
    }
    s.push_str(&format!("Question: {question}\nAnswer:"));
    Ok(s)
}

pub fn context_prompt(context: &str, question: &str) -> String {
    format!("Context: {context}\nQuestion: {question}\nAnswer:")
}

pub fn entailment_prompt(a: &str, b: &str) -> String {
    format!(
        "Here are two possible answers:\n\
         Possible Answer 1: {a}\n\
         Possible Answer 2: {b}\n\
         Does Possible Answer 1 semantically entail Possible Answer 2?\n\
         Respond with entailment, contradiction, or neutral."
    )
}

pub fn correctness_prompt(question: &str, expected: &str, proposed: &str) -> String {
    format!(
        "We are assessing the quality of answers to the following question: {question}\n\
         The expected answer is: {expected}.\n\
         The proposed answer is: {proposed}.\n\
         Within the context of the question,\n\
         does the proposed answer mean the same as the expected answer?\n\
         Respond only with yes or no.\n\
         Response:"
    )
}

fn ptrue_body(question: &str, brainstormed: &[String], possible: &str) -> String {
    format!(
        "Question: {question}\nBrainstormed Answers: {}\nPossible answer: {possible}\n\
         Is the possible answer:\nA) True\nB) False\nThe possible answer is:",
        brainstormed.join("\n")
    )
}

pub fn ptrue_block(block: &PTrueBlock) -> String {
    let verdict = if block.correct { "A" } else { "B" };
    format!(
        "{} {verdict}",
        ptrue_body(&block.question, &block.brainstormed, &block.possible_answer)
    )
}

/// Ten demonstrations followed by the open query block, newline-separated.
pub fn ptrue_prompt(
    blocks: &[PTrueBlock],
    question: &str,
    brainstormed: &[String],
    possible: &str,
) -> Result<String, GatewayError> {
    if blocks.len() != PTRUE_SHOTS {
        return Err(GatewayError::BadFewShot(format!(
            "p(True) prompt needs {PTRUE_SHOTS} blocks, got {}",
            blocks.len()
        )));
    }
    let mut parts: Vec<String> = blocks.iter().map(ptrue_block).collect();
    parts.push(ptrue_body(question, brainstormed, possible));
    Ok(parts.join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(q: &str, ctx: Option<&str>) -> QARecord {
        QARecord {
            id: "q".into(),
            question: q.into(),
            context: ctx.map(str::to_owned),
            answers: vec!["Shakespeare".into()],
            dataset: "demo".into(),
        }
    }

    #[test]
    fn long_form_text() {
        let p = render_prompt(
            &PromptTemplate::new(PromptKind::LongForm),
            &rec("Who wrote Hamlet?", None),
            &PromptExtras::default(),
        )
        .unwrap();
        assert!(p.starts_with(
            "Answer the following question in a single brief but complete sentence."
        ));
        assert!(p.ends_with("Question: Who wrote Hamlet?\nAnswer:"));
    }

    #[test]
    fn context_prefix_and_missing_slot() {
        let t = PromptTemplate::new(PromptKind::Context);
        let p = render_prompt(&t, &rec("Q?", Some("C")), &PromptExtras::default()).unwrap();
        assert!(p.starts_with("Context: C\nQuestion: "));
        assert!(matches!(
            render_prompt(&t, &rec("Q?", None), &PromptExtras::default()),
            Err(GatewayError::MissingSlot("context"))
        ));
    }

    #[test]
    fn short_form_has_five_shots_before_query() {
        let shots: Vec<_> = (1..=5).map(|i| (format!("q{i}"), format!("a{i}"))).collect();
        let p = render_prompt(
            &PromptTemplate::short_form(shots),
            &rec("Final?", None),
            &PromptExtras::default(),
        )
        .unwrap();
        assert_eq!(p.matches("Question: ").count(), 6);
        assert!(p.find("q5").unwrap() < p.find("Final?").unwrap());
        let bad = PromptTemplate::short_form(vec![("q".into(), "a".into())]);
        assert!(matches!(
            render_prompt(&bad, &rec("x", None), &PromptExtras::default()),
            Err(GatewayError::BadFewShot(_))
        ));
    }

    #[test]
    fn rendering_is_pure() {
        let r = rec("Q?", Some("ctx"));
        let t = PromptTemplate::new(PromptKind::Context);
        let a = render_prompt(&t, &r, &PromptExtras::default()).unwrap();
        let b = render_prompt(&t, &r, &PromptExtras::default()).unwrap();
        assert_eq!(a.as_bytes(), b.as_bytes());
    }
}
