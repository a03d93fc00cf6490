//! Chat-completion client for intent rankings.
//!
//! Configured only through the environment:
//! `PEARL_LLM_URL` (chat-completions endpoint), `PEARL_LLM_MODEL`,
//! `PEARL_LLM_TOKEN` (optional bearer token) and `PEARL_LLM_TIMEOUT`
//! (seconds, default 30).

use std::time::Duration;

use log::warn;
use pearl_core::intent::{build_prompt, parse_llm_ranking, IntentDetector, IntentError, IntentRanking, PromptExamples};
use serde_json::{json, Value};

pub const ATTEMPTS: u32 = 3;

/// Sends one request body and returns the response body.
pub trait Transport {
    fn post(&self, body: &str) -> Result<String, String>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmSettings {
    pub url: String,
    pub model: String,
    pub token: Option<String>,
    pub timeout: Duration,
}

impl LlmSettings {
    /// `None` when no endpoint is configured.
    pub fn from_env() -> Result<Option<LlmSettings>, String> {
        let Ok(url) = std::env::var("PEARL_LLM_URL") else {
            return Ok(None);
        };
        let model = std::env::var("PEARL_LLM_MODEL").map_err(|_| "PEARL_LLM_URL is set but PEARL_LLM_MODEL is not")?;
        let timeout = match std::env::var("PEARL_LLM_TIMEOUT") {
            Ok(s) => s.parse::<f64>().map_err(|_| format!("PEARL_LLM_TIMEOUT is not a number: {s:?}"))?,
            Err(_) => 30.0,
        };
        Ok(Some(LlmSettings {
            url,
            model,
            token: std::env::var("PEARL_LLM_TOKEN").ok(),
            timeout: Duration::from_secs_f64(timeout),
        }))
    }
}

pub struct HttpTransport {
    agent: ureq::Agent,
    settings: LlmSettings,
}

impl HttpTransport {
    pub fn new(settings: LlmSettings) -> HttpTransport {
        let agent = ureq::Agent::config_builder().timeout_global(Some(settings.timeout)).build().into();
        HttpTransport { agent, settings }
    }
}

impl Transport for HttpTransport {
    fn post(&self, body: &str) -> Result<String, String> {
        let mut req = self.agent.post(&self.settings.url).header("Content-Type", "application/json");
        if let Some(t) = &self.settings.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send(body).map_err(|e| e.to_string())?;
        resp.body_mut().read_to_string().map_err(|e| e.to_string())
    }
}

pub struct LlmDetector<T: Transport> {
    pub transport: T,
    pub model: String,
    pub examples: PromptExamples,
    /// Delay before the second attempt; doubles after each failure.
    pub backoff: Duration,
}

impl<T: Transport> LlmDetector<T> {
    pub fn new(transport: T, model: &str) -> LlmDetector<T> {
        LlmDetector {
            transport,
            model: model.to_string(),
            examples: PromptExamples::default(),
            backoff: Duration::from_millis(500),
        }
    }

    pub fn request_body(&self, query: &str) -> String {
        let prompt = build_prompt(query, &self.examples);
        json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt.text}],
        })
        .to_string()
    }

    /// Posts with up to [`ATTEMPTS`] tries and exponential backoff.
    pub fn complete(&self, query: &str) -> Result<String, IntentError> {
        let body = self.request_body(query);
        let mut delay = self.backoff;
        let mut last = String::new();
        for attempt in 1..=ATTEMPTS {
            match self.transport.post(&body).and_then(|r| message_content(&r)) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    warn!("intent request for {query:?} failed (attempt {attempt}/{ATTEMPTS}): {e}");
                    last = e;
                }
            }
            if attempt < ATTEMPTS {
                std::thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(IntentError::Transport { attempts: ATTEMPTS, message: last })
    }
}

/// `choices[0].message.content` of a chat-completion response.
pub fn message_content(response: &str) -> Result<String, String> {
    let v: Value = serde_json::from_str(response).map_err(|e| format!("response is not JSON: {e}"))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| "response lacks choices[0].message.content".to_string())
}

impl<T: Transport> IntentDetector for LlmDetector<T> {
    fn detect(&self, query: &str) -> Result<IntentRanking, IntentError> {
        parse_llm_ranking(&self.complete(query)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::RefCell;

    struct Scripted(RefCell<Vec<Result<String, String>>>, RefCell<usize>);

    impl Transport for Scripted {
        fn post(&self, body: &str) -> Result<String, String> {
            assert!(body.contains("\"temperature\":0"));
            *self.1.borrow_mut() += 1;
            self.0.borrow_mut().remove(0)
        }
    }

    fn answer(text: &str) -> Result<String, String> {
        Ok(json!({"choices": [{"message": {"content": text}}]}).to_string())
    }

    fn detector(script: Vec<Result<String, String>>) -> LlmDetector<Scripted> {
        let mut d = LlmDetector::new(Scripted(RefCell::new(script), RefCell::new(0)), "m");
        d.backoff = Duration::ZERO;
        d
    }

    #[test]
    fn retries_then_parses() {
        let d = detector(vec![Err("boom".into()), Ok("{}".into()), answer("so: IP > Entity > OCR > Style > Meaning")]);
        assert_eq!(d.detect("q").unwrap().symbols(), "ceovm");
        assert_eq!(*d.transport.1.borrow(), 3);
    }

    #[test]
    fn gives_up_after_three_attempts() {
        let d = detector(vec![Err("a".into()), Err("b".into()), Err("c".into())]);
        assert_eq!(d.detect("q"), Err(IntentError::Transport { attempts: 3, message: "c".into() }));
    }

    #[test]
    fn unparsable_answer_is_not_a_transport_error() {
        let d = detector(vec![answer("no idea")]);
        assert_eq!(d.detect("q"), Err(IntentError::MissingChain));
    }
}
