//! OpenAI-compatible HTTP chat provider.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatProvider, CompletionRequest, ProviderError};

/// POSTs a JSON body and returns the decoded JSON response. Non-2xx status
/// codes become [`ProviderError::Status`].
pub fn post_json(agent: &ureq::Agent, url: &str, auth_env: Option<&str>, body: &Value) -> Result<Value, ProviderError> {
    let mut req = agent.post(url).set("Content-Type", "application/json");
    if let Some(var) = auth_env {
        let token = std::env::var(var)
            .map_err(|_| ProviderError::Config(format!("auth environment variable {var} is not set")))?;
        req = req.set("Authorization", &format!("Bearer {token}"));
    }
    match req.send_json(body) {
        Ok(resp) => resp
            .into_json::<Value>()
            .map_err(|e| ProviderError::Malformed(e.to_string())),
        Err(ureq::Error::Status(status, resp)) => Err(ProviderError::Status {
            status,
            body: resp.into_string().unwrap_or_default(),
        }),
        Err(ureq::Error::Transport(t)) => Err(ProviderError::Transport(t.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpChatConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    /// Name of the environment variable holding a bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    120
}

pub struct HttpChatProvider {
    tag: String,
    config: HttpChatConfig,
    agent: ureq::Agent,
}

impl HttpChatProvider {
    pub fn new(tag: impl Into<String>, config: HttpChatConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build();
        Self {
            tag: tag.into(),
            config,
            agent,
        }
    }
}

impl ChatProvider for HttpChatProvider {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, ProviderError> {
        let mut body = json!({
            "model": req.model,
            "messages": req.messages,
            "temperature": req.temperature,
            "seed": req.seed,
        });
        if let Some(max) = req.max_tokens {
            body["max_tokens"] = json!(max);
        }
        let resp = post_json(
            &self.agent,
            &self.config.endpoint,
            self.config.auth_env.as_deref(),
            &body,
        )?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Malformed("missing choices[0].message.content".into()))
    }
}
