use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BackendKind, Entailer, EntailmentError, EntailmentJudgment, EntailmentLabel};
use crate::gateway::{GatewayClient, GatewayError};

/// Client for an NLI classifier service:
/// `POST {premise, hypothesis}` → `{label, scores}`.
#[derive(Clone)]
pub struct NliHttpEntailer {
    endpoint: String,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct NliRequest<'a> {
    premise: &'a str,
    hypothesis: &'a str,
}

#[derive(Deserialize)]
struct NliResponse {
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    scores: Option<Value>,
}

impl NliHttpEntailer {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            agent,
        }
    }
}

fn label_from_name(name: &str) -> Option<EntailmentLabel> {
    match name.trim().to_lowercase().as_str() {
        "entailment" => Some(EntailmentLabel::Entailment),
        "contradiction" => Some(EntailmentLabel::Contradiction),
        "neutral" => Some(EntailmentLabel::Neutral),
        _ => None,
    }
}

/// Argmax over the three class scores; falls back to the reported label.
/// Scores may be a `{name: score}` map or an `[entailment, neutral,
/// contradiction]` array.
fn decide(resp: &NliResponse) -> Option<EntailmentLabel> {
    let from_scores = match &resp.scores {
        Some(Value::Object(map)) => map
            .iter()
            .filter_map(|(k, v)| Some((label_from_name(k)?, v.as_f64()?)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(l, _)| l),
        Some(Value::Array(xs)) if xs.len() == 3 => {
            let order = [
                EntailmentLabel::Entailment,
                EntailmentLabel::Neutral,
                EntailmentLabel::Contradiction,
            ];
            xs.iter()
                .zip(order)
                .filter_map(|(v, l)| Some((l, v.as_f64()?)))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(l, _)| l)
        }
        _ => None,
    };
    from_scores.or_else(|| resp.label.as_deref().and_then(label_from_name))
}

impl Entailer for NliHttpEntailer {
    fn kind(&self) -> BackendKind {
        BackendKind::NliHttp
    }

    fn judge(&self, a: &str, b: &str) -> Result<EntailmentJudgment, EntailmentError> {
        let unavailable = |m: String| EntailmentError::BackendUnavailable(m);
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(NliRequest {
                premise: a,
                hypothesis: b,
            })
            .map_err(|e| unavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| unavailable(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(unavailable(format!("status {status}: {text}")));
        }
        let parsed: NliResponse =
            serde_json::from_str(&text).map_err(|e| unavailable(format!("bad body: {e}")))?;
        let label = decide(&parsed).ok_or_else(|| unavailable("no usable label".into()))?;
        Ok(EntailmentJudgment {
            label,
            source: BackendKind::NliHttp,
            cached: false,
        })
    }
}

/// LLM judge via the gateway's entailment prompt.
#[derive(Clone)]
pub struct JudgeEntailer {
    client: GatewayClient,
}

impl JudgeEntailer {
    pub fn new(client: GatewayClient) -> Self {
        Self { client }
    }
}

impl Entailer for JudgeEntailer {
    fn kind(&self) -> BackendKind {
        BackendKind::LlmJudge
    }

    fn judge(&self, a: &str, b: &str) -> Result<EntailmentJudgment, EntailmentError> {
        let label = self.client.judge_entailment(a, b).map_err(|e: GatewayError| {
            EntailmentError::BackendUnavailable(e.to_string())
        })?;
        Ok(EntailmentJudgment {
            label,
            source: BackendKind::LlmJudge,
            cached: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn resp(v: Value) -> NliResponse {
        serde_json::from_value(v).unwrap()
    }

    #[test]
    fn argmax_over_scores() {
        let r = resp(json!({"label": "neutral", "scores": {"entailment": 0.7, "neutral": 0.2, "contradiction": 0.1}}));
        assert_eq!(decide(&r), Some(EntailmentLabel::Entailment));
        let r = resp(json!({"scores": [0.1, 0.2, 0.7]}));
        assert_eq!(decide(&r), Some(EntailmentLabel::Contradiction));
        let r = resp(json!({"label": "NEUTRAL"}));
        assert_eq!(decide(&r), Some(EntailmentLabel::Neutral));
        assert_eq!(decide(&resp(json!({}))), None);
    }

    #[test]
    fn unreachable_service_is_unavailable() {
        let e = NliHttpEntailer::new("http://127.0.0.1:9/nli", Duration::from_millis(200));
        assert!(matches!(
            e.judge("a", "b"),
            Err(EntailmentError::BackendUnavailable(_))
        ));
    }
}
