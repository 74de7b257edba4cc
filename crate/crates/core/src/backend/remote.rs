//! OpenAI-compatible chat-completions client.

use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendConfig, BackendError, CallTags, ChatBackend, ChatExchange, ResponseCache};
use crate::net::{http_agent, join_url, TransportCounter};

pub const API_KEY_ENV: &str = "SEVADE_API_KEY";

pub struct RemoteBackend {
    config: BackendConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    cache: Option<ResponseCache>,
    counter: TransportCounter,
    retry_backoff: Duration,
}

enum Failure {
    Retryable(String),
    Fatal(String),
}

impl RemoteBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let cache = config.cache_dir.as_ref().map(ResponseCache::open).transpose()?;
        Ok(RemoteBackend {
            agent: http_agent(config.timeout()),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            cache,
            counter: TransportCounter::new(),
            retry_backoff: Duration::from_millis(500),
            config,
        })
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_retry_backoff(mut self, backoff: Duration) -> Self {
        self.retry_backoff = backoff;
        self
    }

    pub fn counter(&self) -> TransportCounter {
        self.counter.clone()
    }

    fn endpoint(&self) -> String {
        join_url(self.config.base_url.as_deref().unwrap_or_default(), "chat/completions")
    }

    fn request_once(&self, body: &Value) -> Result<String, Failure> {
        self.counter.record();
        let mut req = self.agent.post(&self.endpoint());
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Retryable(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(Failure::Retryable(format!("HTTP {status}: {}", truncate(&text))));
        }
        if !(200..300).contains(&status) {
            return Err(Failure::Fatal(format!("HTTP {status}: {}", truncate(&text))));
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| Failure::Fatal(format!("invalid JSON body: {e}")))?;
        match value.pointer("/choices/0/message/content").and_then(Value::as_str) {
            Some(content) if !content.is_empty() => Ok(content.to_string()),
            Some(_) => Err(Failure::Retryable("empty completion content".into())),
            None => Err(Failure::Fatal("response lacks choices[0].message.content".into())),
        }
    }

    fn fetch(&self, system_prompt: &str, user_prompt: &str) -> Result<String, BackendError> {
        let body = json!({
            "model": self.config.model_name,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": system_prompt},
                {"role": "user", "content": user_prompt},
            ],
        });
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.request_once(&body) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(message)) => return Err(BackendError::Transport { attempts, message }),
                Err(Failure::Retryable(message)) if attempts > self.config.max_retries => {
                    return Err(BackendError::Transport { attempts, message })
                }
                Err(Failure::Retryable(message)) => {
                    log::debug!("retrying chat completion after: {message}");
                    thread::sleep(self.retry_backoff * 2u32.pow(attempts - 1));
                }
            }
        }
    }
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(200) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl ChatBackend for RemoteBackend {
    fn complete(&self, system_prompt: &str, user_prompt: &str, _tags: &CallTags) -> Result<ChatExchange, BackendError> {
        let key = ResponseCache::key(&self.config.model_name, system_prompt, user_prompt);
        if let Some(cache) = &self.cache {
            if let Some(text) = cache.get(&key)? {
                return Ok(ChatExchange {
                    system_prompt: system_prompt.to_string(),
                    user_prompt: user_prompt.to_string(),
                    response_text: text,
                    cached: true,
                });
            }
        }
        let text = self.fetch(system_prompt, user_prompt)?;
        if let Some(cache) = &self.cache {
            cache.put(&key, &text)?;
        }
        Ok(ChatExchange {
            system_prompt: system_prompt.to_string(),
            user_prompt: user_prompt.to_string(),
            response_text: text,
            cached: false,
        })
    }

    fn network_operations(&self) -> u64 {
        self.counter.get()
    }
}
