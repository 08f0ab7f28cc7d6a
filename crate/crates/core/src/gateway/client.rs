use std::thread;
use std::time::Duration;

use log::warn;
use serde_json::{json, Value};

use super::prompts::{self, PTrueBlock, PromptExtras, PromptKind, PromptTemplate};
use super::{ApiStyle, GatewayConfig, GatewayError};
use crate::dataset_store::{DecodeConfig, GenerationSample, GenerationSet, QARecord};
use crate::entailment::EntailmentLabel;
use crate::par::{self, Execution};

type Result<T> = std::result::Result<T, GatewayError>;

const JUDGE_MAX_TOKENS: u32 = 32;
const PTRUE_TOP_LOGPROBS: u32 = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub top_p: Option<f64>,
    pub top_k: Option<u32>,
    pub max_tokens: u32,
    pub n: usize,
    /// Number of alternatives to return per position; `Some(0)` asks for
    /// sampled-token log-probs only.
    pub logprobs: Option<u32>,
    pub stop: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Completion {
    pub text: String,
    pub token_log_probs: Vec<f64>,
    /// Per position, the returned (token, log-prob) alternatives.
    pub top_logprobs: Vec<Vec<(String, f64)>>,
}

/// Blocking client; cheap to share across threads.
#[derive(Clone)]
pub struct GatewayClient {
    config: GatewayConfig,
    agent: ureq::Agent,
}

impl GatewayClient {
    pub fn new(config: GatewayConfig) -> Result<Self> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, agent })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        let base = self.config.base_url.trim_end_matches('/');
        match self.config.api_style {
            ApiStyle::Completions => format!("{base}/v1/completions"),
            ApiStyle::Chat => format!("{base}/v1/chat/completions"),
        }
    }

    fn request_body(&self, req: &CompletionRequest) -> Value {
        let mut body = json!({
            "model": self.config.model_name,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
            "n": req.n,
        });
        match self.config.api_style {
            ApiStyle::Completions => {
                body["prompt"] = json!(req.prompt);
                if let Some(k) = req.logprobs {
                    body["logprobs"] = json!(k.max(1));
                }
            }
            ApiStyle::Chat => {
                body["messages"] = json!([{ "role": "user", "content": req.prompt }]);
                if let Some(k) = req.logprobs {
                    body["logprobs"] = json!(true);
                    if k > 0 {
                        body["top_logprobs"] = json!(k);
                    }
                }
            }
        }
        if let Some(p) = req.top_p {
            body["top_p"] = json!(p);
        }
        if let (Some(k), true) = (req.top_k, self.config.send_top_k) {
            body["top_k"] = json!(k);
        }
        if !req.stop.is_empty() {
            body["stop"] = json!(req.stop);
        }
        body
    }

    /// POSTs with exponential backoff on transport errors, 5xx, and 429.
    fn post_json(&self, body: &Value) -> Result<Value> {
        let url = self.endpoint();
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        let mut rate_limited = false;
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.config.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(16));
                thread::sleep(Duration::from_millis(delay));
            }
            let mut req = self.agent.post(&url);
            if let Some(key) = &self.config.api_key {
                req = req.header("Authorization", format!("Bearer {key}"));
            }
            match req.send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.body_mut().read_to_string().unwrap_or_default();
                    match status {
                        200..=299 => {
                            return serde_json::from_str(&text)
                                .map_err(|e| GatewayError::MalformedResponse(e.to_string()))
                        }
                        429 => {
                            rate_limited = true;
                            last = format!("status 429: {text}");
                        }
                        500..=599 => {
                            rate_limited = false;
                            last = format!("status {status}: {text}");
                        }
                        _ => return Err(GatewayError::Http { status, body: text }),
                    }
                }
                Err(e) => {
                    rate_limited = false;
                    last = e.to_string();
                }
            }
            warn!("gateway attempt {}/{} failed: {}", attempt + 1, attempts, last);
        }
        if rate_limited {
            Err(GatewayError::RateLimited { attempts })
        } else {
            Err(GatewayError::Timeout { attempts, last })
        }
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<Vec<Completion>> {
        let resp = self.post_json(&self.request_body(req))?;
        parse_choices(&resp, self.config.api_style)
    }

    fn max_tokens_for(&self, kind: PromptKind) -> u32 {
        if kind.stops_at_newline() {
            self.config.short_max_tokens
        } else {
            self.config.long_max_tokens
        }
    }

    /// Greedy answer first, then `n_samples` draws at the configured
    /// temperature. Follow-up requests only ask for the samples still missing.
    pub fn sample_generations(
        &self,
        record: &QARecord,
        template: &PromptTemplate,
        decode: &DecodeConfig,
    ) -> Result<GenerationSet> {
        let prompt = prompts::render_prompt(template, record, &PromptExtras::default())?;
        let stop = if template.kind.stops_at_newline() {
            vec!["\n".to_owned()]
        } else {
            Vec::new()
        };
        let max_tokens = self.max_tokens_for(template.kind);
        let greedy_req = CompletionRequest {
            prompt: prompt.clone(),
            temperature: 0.0,
            top_p: None,
            top_k: None,
            max_tokens,
            n: 1,
            logprobs: Some(0),
            stop: stop.clone(),
        };
        let greedy = self
            .complete(&greedy_req)?
            .into_iter()
            .next()
            .ok_or_else(|| GatewayError::MalformedResponse("no choices".into()))?;
        let greedy = to_sample(greedy, 0.0);

        let mut samples = Vec::with_capacity(decode.n_samples);
        while samples.len() < decode.n_samples {
            let req = CompletionRequest {
                prompt: prompt.clone(),
                temperature: decode.temperature,
                top_p: Some(decode.top_p),
                top_k: Some(decode.top_k),
                max_tokens,
                n: decode.n_samples - samples.len(),
                logprobs: Some(0),
                stop: stop.clone(),
            };
            let got = self.complete(&req)?;
            if got.is_empty() {
                return Err(GatewayError::MalformedResponse("no choices".into()));
            }
            let room = decode.n_samples - samples.len();
            samples.extend(
                got.into_iter()
                    .take(room)
                    .map(|c| to_sample(c, decode.temperature)),
            );
        }
        Ok(GenerationSet {
            id: record.id.clone(),
            greedy,
            samples,
            decode_config: *decode,
        })
    }

    /// Fans sampling out over at most `max_parallel_requests` workers.
    pub fn sample_many(
        &self,
        records: &[QARecord],
        template: &PromptTemplate,
        decode: &DecodeConfig,
        exec: Execution,
    ) -> Vec<Result<GenerationSet>> {
        par::map_bounded(exec, self.config.max_parallel_requests, records, |r| {
            self.sample_generations(r, template, decode)
        })
    }

    /// Probability mass the model puts on an `A` verdict for the query's
    /// greedy answer, given ten composed demonstrations.
    pub fn p_true_score(
        &self,
        record: &QARecord,
        gen_set: &GenerationSet,
        few_shot: &[PTrueBlock],
    ) -> Result<f64> {
        let brainstormed: Vec<String> = gen_set.samples.iter().map(|s| s.text.clone()).collect();
        let prompt =
            prompts::ptrue_prompt(few_shot, &record.question, &brainstormed, &gen_set.greedy.text)?;
        let req = CompletionRequest {
            prompt,
            temperature: 0.0,
            top_p: None,
            top_k: None,
            max_tokens: 1,
            n: 1,
            logprobs: Some(PTRUE_TOP_LOGPROBS),
            stop: Vec::new(),
        };
        let choice = self
            .complete(&req)?
            .into_iter()
            .next()
            .ok_or_else(|| GatewayError::MalformedResponse("no choices".into()))?;
        let top = choice.top_logprobs.first().ok_or(GatewayError::NoLogProbs)?;
        if top.is_empty() {
            return Err(GatewayError::NoLogProbs);
        }
        let p = a_token_mass(top);
        if p == 0.0 {
            warn!("p(True) for {}: no \"A\" token among top log-probs", record.id);
        }
        Ok(p)
    }

    fn judge(&self, prompt: String) -> Result<String> {
        let req = CompletionRequest {
            prompt,
            temperature: 0.0,
            top_p: None,
            top_k: None,
            max_tokens: JUDGE_MAX_TOKENS,
            n: 1,
            logprobs: None,
            stop: Vec::new(),
        };
        self.complete(&req)?
            .into_iter()
            .next()
            .map(|c| c.text)
            .ok_or_else(|| GatewayError::MalformedResponse("no choices".into()))
    }

    pub fn judge_entailment(&self, a: &str, b: &str) -> Result<EntailmentLabel> {
        let reply = self.judge(prompts::entailment_prompt(a, b))?;
        Ok(parse_entailment_reply(&reply))
    }

    pub fn judge_correctness(&self, record: &QARecord, proposed: &str) -> Result<bool> {
        let expected = record
            .answers
            .first()
            .ok_or(GatewayError::MissingSlot("ground truth label"))?;
        let reply = self.judge(prompts::correctness_prompt(&record.question, expected, proposed))?;
        parse_correctness_reply(&reply)
    }
}

/// Sums the probability of returned tokens that read `A` once whitespace is
/// stripped.
pub fn a_token_mass(top: &[(String, f64)]) -> f64 {
    top.iter()
        .filter(|(tok, _)| tok.trim() == "A")
        .map(|(_, lp)| lp.exp())
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// Earliest keyword wins; replies naming none of the three map to neutral.
pub fn parse_entailment_reply(reply: &str) -> EntailmentLabel {
    let lower = reply.to_lowercase();
    let found = [
        ("entailment", EntailmentLabel::Entailment),
        ("contradiction", EntailmentLabel::Contradiction),
        ("neutral", EntailmentLabel::Neutral),
    ]
    .into_iter()
    .filter_map(|(kw, label)| lower.find(kw).map(|at| (at, label)))
    .min_by_key(|(at, _)| *at);
    match found {
        Some((_, label)) => label,
        None => {
            warn!("unrecognized entailment verdict {reply:?}; using neutral");
            EntailmentLabel::Neutral
        }
    }
}

/// The leading word decides; otherwise exactly one of `yes`/`no` must occur.
pub fn parse_correctness_reply(reply: &str) -> Result<bool> {
    let words: Vec<String> = reply
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    match words.first().map(String::as_str) {
        Some("yes") => return Ok(true),
        Some("no") => return Ok(false),
        _ => {}
    }
    let yes = words.iter().any(|w| w == "yes");
    let no = words.iter().any(|w| w == "no");
    match (yes, no) {
        (true, false) => Ok(true),
        (false, true) => Ok(false),
        _ => Err(GatewayError::AmbiguousVerdict(reply.to_owned())),
    }
}

fn to_sample(c: Completion, temperature: f64) -> GenerationSample {
    GenerationSample {
        text: c.text.trim().to_owned(),
        token_log_probs: c.token_log_probs,
        temperature,
    }
}

fn malformed(what: &str) -> GatewayError {
    GatewayError::MalformedResponse(what.to_owned())
}

fn parse_choices(resp: &Value, style: ApiStyle) -> Result<Vec<Completion>> {
    let choices = resp
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("missing choices array"))?;
    let mut indexed = Vec::with_capacity(choices.len());
    for (pos, ch) in choices.iter().enumerate() {
        let index = ch.get("index").and_then(Value::as_u64).unwrap_or(pos as u64);
        let c = match style {
            ApiStyle::Completions => parse_completion_choice(ch)?,
            ApiStyle::Chat => parse_chat_choice(ch)?,
        };
        indexed.push((index, c));
    }
    indexed.sort_by_key(|(i, _)| *i);
    Ok(indexed.into_iter().map(|(_, c)| c).collect())
}

/// Token log-probs are kept only when every position reported one.
fn collect_logprobs(values: impl Iterator<Item = Option<f64>>) -> Vec<f64> {
    let all: Option<Vec<f64>> = values.collect();
    all.unwrap_or_default()
        .into_iter()
        .map(|lp| lp.min(0.0))
        .collect()
}

fn parse_completion_choice(ch: &Value) -> Result<Completion> {
    let text = ch
        .get("text")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed("choice without text"))?
        .to_owned();
    let lp = ch.get("logprobs").filter(|v| !v.is_null());
    let token_log_probs = lp
        .and_then(|l| l.get("token_logprobs"))
        .and_then(Value::as_array)
        .map(|xs| collect_logprobs(xs.iter().map(Value::as_f64)))
        .unwrap_or_default();
    let top_logprobs = lp
        .and_then(|l| l.get("top_logprobs"))
        .and_then(Value::as_array)
        .map(|positions| {
            positions
                .iter()
                .map(|m| {
                    m.as_object()
                        .map(|o| {
                            o.iter()
                                .filter_map(|(t, v)| v.as_f64().map(|lp| (t.clone(), lp)))
                                .collect()
                        })
                        .unwrap_or_default()
                })
                .collect()
        })
        .unwrap_or_default();
    Ok(Completion {
        text,
        token_log_probs,
        top_logprobs,
    })
}

fn parse_chat_choice(ch: &Value) -> Result<Completion> {
    let text = ch
        .get("message")
        .and_then(|m| m.get("content"))
        .and_then(Value::as_str)
        .ok_or_else(|| malformed("choice without message content"))?
        .to_owned();
    let content = ch
        .get("logprobs")
        .and_then(|l| l.get("content"))
        .and_then(Value::as_array);
    let token_log_probs = content
        .map(|xs| collect_logprobs(xs.iter().map(|t| t.get("logprob").and_then(Value::as_f64))))
        .unwrap_or_default();
    let top_logprobs = content
        .map(|xs| {
            xs.iter()
                .map(|t| {
                    t.get("top_logprobs")
                        .and_then(Value::as_array)
                        .map(|alts| {
                            alts.iter()
                                .filter_map(|a| {
                                    Some((
                                        a.get("token")?.as_str()?.to_owned(),
                                        a.get("logprob")?.as_f64()?,
                                    ))
                                })
                                .collect()
                        })
                        .unwrap_or_default()
                })
                .collect()
        })
        .unwrap_or_default();
    Ok(Completion {
        text,
        token_log_probs,
        top_logprobs,
    })
}
