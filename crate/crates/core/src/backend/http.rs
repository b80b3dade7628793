use std::time::Duration;

use reqwest::blocking::Client;
use serde_json::{json, Value};

use super::{Attempt, AttemptError, Backend, BackendError, EndpointConfig};
use crate::prompts::RenderedPrompt;

/// Client for an OpenAI-style `/chat/completions` endpoint.
pub struct HttpBackend {
    client: Client,
    model_name: String,
}

impl HttpBackend {
    pub fn new(config: &EndpointConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let client = Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::InvalidConfig(e.to_string()))?;
        Ok(Self {
            client,
            model_name: config.model_name.clone(),
        })
    }
}

fn extract_content(body: &Value) -> Option<String> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
}

impl Backend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}", self.model_name)
    }

    fn dispatch(&self, config: &EndpointConfig, prompt: &RenderedPrompt) -> Attempt {
        let client = self.client.clone();
        let url = format!("{}/chat/completions", config.base_url.trim_end_matches('/'));
        let body = json!({
            "model": config.model_name,
            "messages": [{"role": "user", "content": prompt.text}],
            "temperature": config.temperature,
            "max_tokens": config.max_tokens,
        });
        // The key is read here and only lives inside the request closure.
        let key = config.api_key_env.as_deref().and_then(|v| std::env::var(v).ok());
        Box::new(move || {
            let mut req = client.post(&url).json(&body);
            if let Some(k) = &key {
                req = req.bearer_auth(k);
            }
            let resp = req.send().map_err(|e| AttemptError::Transport(e.to_string()))?;
            let status = resp.status();
            let text = resp.text().map_err(|e| AttemptError::Transport(e.to_string()))?;
            if !status.is_success() {
                let mut body = text;
                body.truncate(500);
                return Err(AttemptError::Status {
                    code: status.as_u16(),
                    body,
                });
            }
            let value: Value = serde_json::from_str(&text).map_err(|e| AttemptError::Malformed(e.to_string()))?;
            extract_content(&value).ok_or_else(|| AttemptError::Malformed("no choices[0].message.content".into()))
        })
    }
}
