//! Text-completion endpoints (`POST {endpoint}/v1/completions`).

use std::time::Duration;

use serde_json::{json, Value};

use super::{
    logits_from_generation, logits_from_top_tokens, Backend, BackendDescriptor, BackendError, BackendKind,
    ClassLogits, Mode, ProbeContext,
};
use crate::taskgen::CoordSpace;
use crate::{Error, Point, Result};

pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

/// Blocking JSON POST with retries on 429 and 5xx.
pub(crate) struct JsonClient {
    agent: ureq::Agent,
    api_key: Option<String>,
    retry: super::RetryPolicy,
}

impl JsonClient {
    pub(crate) fn new(descriptor: &BackendDescriptor, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        JsonClient {
            agent,
            api_key,
            retry: descriptor.retry,
        }
    }

    pub(crate) fn post(&self, url: &str, body: &Value) -> std::result::Result<Value, BackendError> {
        let payload = serde_json::to_string(body).expect("request bodies serialize");
        let attempts = self.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.retry.delay(attempt - 1));
            }
            let mut request = self.agent.post(url).header("Content-Type", "application/json");
            if let Some(key) = &self.api_key {
                request = request.header("Authorization", &format!("Bearer {key}"));
            }
            let mut response = match request.send(payload.as_str()) {
                Ok(r) => r,
                Err(e) => return Err(BackendError::Unavailable(format!("{url}: {e}"))),
            };
            let status = response.status().as_u16();
            let text = response
                .body_mut()
                .read_to_string()
                .map_err(|e| BackendError::Unavailable(format!("{url}: reading body: {e}")))?;
            match status {
                200..=299 => {
                    return serde_json::from_str(&text)
                        .map_err(|e| BackendError::Protocol(format!("{url}: invalid JSON: {e}")))
                }
                429 | 500..=599 => {
                    last = format!("{url}: HTTP {status}");
                    log::debug!("transient failure (attempt {}): {last}", attempt + 1);
                }
                _ => return Err(BackendError::Protocol(format!("{url}: HTTP {status}: {text}"))),
            }
        }
        Err(BackendError::Unavailable(format!("{last} after {attempts} attempts")))
    }
}

pub struct CompletionBackend {
    descriptor: BackendDescriptor,
    url: String,
    client: JsonClient,
}

impl CompletionBackend {
    pub fn new(descriptor: BackendDescriptor) -> Result<Self> {
        if descriptor.kind != BackendKind::Completion {
            return Err(Error::Config(format!("{:?} is not a completion backend", descriptor.name)));
        }
        let endpoint = descriptor
            .endpoint
            .clone()
            .ok_or_else(|| Error::Config(format!("completion backend {:?} needs an endpoint", descriptor.name)))?;
        if descriptor.decode.temperature != 0.0 {
            return Err(Error::Config("probing runs require temperature 0".into()));
        }
        let key_var = descriptor.api_key_env.as_deref().unwrap_or(DEFAULT_API_KEY_ENV);
        let api_key = std::env::var(key_var).ok().filter(|k| !k.is_empty());
        let client = JsonClient::new(&descriptor, api_key);
        Ok(CompletionBackend {
            url: format!("{}/v1/completions", endpoint.trim_end_matches('/')),
            descriptor,
            client,
        })
    }

    pub fn request_body(&self, prompt: &str) -> Value {
        let decode = &self.descriptor.decode;
        let mut body = json!({
            "model": self.descriptor.model_name,
            "prompt": prompt,
            "temperature": decode.temperature,
            "max_tokens": decode.max_tokens,
            "echo": false,
        });
        if self.descriptor.mode == Mode::Logprob {
            body["logprobs"] = json!(decode.top_logprobs);
        }
        body
    }
}

/// `choices[0].logprobs.top_logprobs[0]` as (token, logprob), best first.
pub fn parse_top_logprobs(response: &Value) -> std::result::Result<Vec<(String, f64)>, BackendError> {
    let first = response
        .pointer("/choices/0/logprobs/top_logprobs/0")
        .and_then(Value::as_object)
        .ok_or_else(|| BackendError::Protocol("missing choices[0].logprobs.top_logprobs[0]".into()))?;
    let mut tokens = Vec::with_capacity(first.len());
    for (token, lp) in first {
        let lp = lp
            .as_f64()
            .ok_or_else(|| BackendError::Protocol(format!("non-numeric logprob for {token:?}")))?;
        tokens.push((token.clone(), lp));
    }
    tokens.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(tokens)
}

pub fn parse_generated_text(response: &Value) -> std::result::Result<String, BackendError> {
    response
        .pointer("/choices/0/text")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::Protocol("missing choices[0].text".into()))
}

impl Backend for CompletionBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn space(&self) -> CoordSpace {
        CoordSpace::Prompt
    }

    fn payload(&self, ctx: &ProbeContext<'_>, query: Point) -> Vec<u8> {
        ctx.render(query).into_bytes()
    }

    fn classify_logits(&self, ctx: &ProbeContext<'_>, query: Point) -> std::result::Result<ClassLogits, BackendError> {
        let prompt = ctx.render(query);
        let response = self.client.post(&self.url, &self.request_body(&prompt))?;
        match self.descriptor.mode {
            Mode::Logprob => logits_from_top_tokens(&parse_top_logprobs(&response)?, ctx.labels),
            Mode::Generation => logits_from_generation(&parse_generated_text(&response)?, ctx.labels),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_legacy_completion_logprobs() {
        let response = json!({
            "choices": [{
                "text": " Bar",
                "logprobs": {"top_logprobs": [{" Bar": -0.1, " Foo": -2.3, "\n": -5.0}]}
            }]
        });
        let tokens = parse_top_logprobs(&response).unwrap();
        assert_eq!(tokens[0], (" Bar".to_string(), -0.1));
        assert_eq!(tokens.len(), 3);
        assert_eq!(parse_generated_text(&response).unwrap(), " Bar");
        assert!(matches!(parse_top_logprobs(&json!({"choices": []})), Err(BackendError::Protocol(_))));
    }

    #[test]
    fn body_follows_the_wire_protocol() {
        let mut desc = BackendDescriptor::new("c", BackendKind::Completion);
        desc.endpoint = Some("http://localhost:1".into());
        desc.model_name = "m".into();
        let backend = CompletionBackend::new(desc).unwrap();
        let body = backend.request_body("hi");
        assert_eq!(body["model"], "m");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["max_tokens"], 4);
        assert_eq!(body["logprobs"], 20);
        assert_eq!(body["echo"], false);
        assert_eq!(backend.url, "http://localhost:1/v1/completions");
    }

    #[test]
    fn nonzero_temperature_is_rejected() {
        let mut desc = BackendDescriptor::new("c", BackendKind::Completion);
        desc.endpoint = Some("http://localhost:1".into());
        desc.decode.temperature = 0.7;
        assert!(matches!(CompletionBackend::new(desc), Err(Error::Config(_))));
    }
}
