//! Chat-completion transport: a blocking HTTP client for local model servers
//! plus deterministic in-process clients for offline use.

use std::fmt;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChatError {
    #[error("chat endpoint unreachable: {0}")]
    ClientUnreachable(String),
    #[error("chat request timed out")]
    Timeout,
    #[error("chat protocol error (status {status:?}): {excerpt}")]
    ProtocolError { status: Option<u16>, excerpt: String },
    #[error("invalid chat configuration: {0}")]
    InvalidConfig(String),
    #[error("message list is empty")]
    EmptyMessages,
    #[error("scripted client has no replies left")]
    ScriptExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatClientConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    #[serde(with = "secs")]
    pub timeout: Duration,
    pub max_repair_retries: u32,
    /// Dot-separated path to the completion text in the reply body.
    /// Numeric segments index arrays, e.g. `choices.0.message.content`.
    pub response_path: String,
}

impl Default for ChatClientConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "http://127.0.0.1:11434/api/chat".into(),
            model_name: "llama3:8b".into(),
            temperature: 0.1,
            timeout: Duration::from_secs(60),
            max_repair_retries: 1,
            response_path: "message.content".into(),
        }
    }
}

impl ChatClientConfig {
    pub fn validate(&self) -> Result<(), ChatError> {
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(ChatError::InvalidConfig(format!(
                "temperature {} outside [0, 1]",
                self.temperature
            )));
        }
        if self.timeout.is_zero() {
            return Err(ChatError::InvalidConfig("timeout must be positive".into()));
        }
        Ok(())
    }
}

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

/// A single-shot, non-streaming chat completion.
pub trait ChatClient: Send + Sync {
    fn complete(&self, config: &ChatClientConfig, messages: &[ChatMessage]) -> Result<String, ChatError>;

    fn name(&self) -> &str;
}

/// Checks preconditions, then delegates to `client`.
pub fn chat_complete(
    client: &dyn ChatClient,
    config: &ChatClientConfig,
    messages: &[ChatMessage],
) -> Result<String, ChatError> {
    config.validate()?;
    if messages.is_empty() {
        return Err(ChatError::EmptyMessages);
    }
    client.complete(config, messages)
}

/// JSON-over-HTTP client speaking the `{"model", "messages", "temperature",
/// "stream": false}` request shape common to local model servers.
pub struct HttpChatClient {
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    /// Must not be called from within an async runtime.
    pub fn new() -> Result<Self, ChatError> {
        let http = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| ChatError::InvalidConfig(e.to_string()))?;
        Ok(Self { http })
    }
}

impl fmt::Debug for HttpChatClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpChatClient").finish_non_exhaustive()
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, config: &ChatClientConfig, messages: &[ChatMessage]) -> Result<String, ChatError> {
        let body = json!({
            "model": config.model_name,
            "messages": messages,
            "temperature": config.temperature,
            "stream": false,
        });
        let response = self
            .http
            .post(&config.endpoint_url)
            .timeout(config.timeout)
            .json(&body)
            .send()
            .map_err(classify)?;
        let status = response.status();
        let text = response.text().map_err(classify)?;
        if !status.is_success() {
            return Err(ChatError::ProtocolError {
                status: Some(status.as_u16()),
                excerpt: excerpt(&text),
            });
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| ChatError::ProtocolError {
            status: Some(status.as_u16()),
            excerpt: format!("invalid JSON ({e}): {}", excerpt(&text)),
        })?;
        lookup_path(&value, &config.response_path)
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| ChatError::ProtocolError {
                status: Some(status.as_u16()),
                excerpt: format!("no string at `{}`: {}", config.response_path, excerpt(&text)),
            })
    }

    fn name(&self) -> &str {
        "http"
    }
}

fn classify(e: reqwest::Error) -> ChatError {
    if e.is_timeout() {
        ChatError::Timeout
    } else if e.is_connect() || e.is_request() {
        ChatError::ClientUnreachable(e.to_string())
    } else {
        ChatError::ProtocolError { status: e.status().map(|s| s.as_u16()), excerpt: e.to_string() }
    }
}

fn excerpt(body: &str) -> String {
    body.chars().take(200).collect()
}

fn lookup_path<'a>(value: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').filter(|s| !s.is_empty()).try_fold(value, |v, seg| match v {
        Value::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get(i)),
        Value::Object(map) => map.get(seg),
        _ => None,
    })
}

/// Replies with the content of the last user message.
#[derive(Debug, Default, Clone, Copy)]
pub struct EchoChatClient;

impl ChatClient for EchoChatClient {
    fn complete(&self, _config: &ChatClientConfig, messages: &[ChatMessage]) -> Result<String, ChatError> {
        messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.clone())
            .ok_or(ChatError::EmptyMessages)
    }

    fn name(&self) -> &str {
        "echo"
    }
}

/// Replays canned replies in order. With `cycle` set the script wraps
/// around, otherwise running past the end is an error.
#[derive(Debug)]
pub struct ScriptedChatClient {
    replies: Vec<String>,
    cycle: bool,
    cursor: Mutex<usize>,
    transcript: Mutex<Vec<Vec<ChatMessage>>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptFile {
    Replies(Vec<Reply>),
    Full {
        replies: Vec<Reply>,
        #[serde(default)]
        cycle: bool,
    },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Reply {
    Text(String),
    Json(Value),
}

impl ScriptedChatClient {
    pub fn new(replies: Vec<String>) -> Self {
        Self::with_cycle(replies, false)
    }

    pub fn cycling(replies: Vec<String>) -> Self {
        Self::with_cycle(replies, true)
    }

    fn with_cycle(replies: Vec<String>, cycle: bool) -> Self {
        Self {
            replies,
            cycle,
            cursor: Mutex::new(0),
            transcript: Mutex::new(Vec::new()),
        }
    }

    /// Loads a script: either a JSON array of replies or
    /// `{"replies": [...], "cycle": bool}`. A reply given as a JSON value
    /// rather than a string is sent as its compact serialization.
    pub fn from_json(text: &str) -> Result<Self, ChatError> {
        let file: ScriptFile =
            serde_json::from_str(text).map_err(|e| ChatError::InvalidConfig(format!("bad script: {e}")))?;
        let (replies, cycle) = match file {
            ScriptFile::Replies(r) => (r, false),
            ScriptFile::Full { replies, cycle } => (replies, cycle),
        };
        let replies = replies
            .into_iter()
            .map(|r| match r {
                Reply::Text(s) => s,
                Reply::Json(v) => v.to_string(),
            })
            .collect();
        Ok(Self::with_cycle(replies, cycle))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ChatError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ChatError::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn call_count(&self) -> usize {
        self.transcript.lock().expect("transcript lock").len()
    }

    /// Every message list received so far, in call order.
    pub fn transcript(&self) -> Vec<Vec<ChatMessage>> {
        self.transcript.lock().expect("transcript lock").clone()
    }

    pub fn reset(&self) {
        *self.cursor.lock().expect("cursor lock") = 0;
        self.transcript.lock().expect("transcript lock").clear();
    }
}

impl ChatClient for ScriptedChatClient {
    fn complete(&self, _config: &ChatClientConfig, messages: &[ChatMessage]) -> Result<String, ChatError> {
        self.transcript.lock().expect("transcript lock").push(messages.to_vec());
        let mut cursor = self.cursor.lock().expect("cursor lock");
        if self.replies.is_empty() {
            return Err(ChatError::ScriptExhausted);
        }
        let index = if self.cycle { *cursor % self.replies.len() } else { *cursor };
        let reply = self.replies.get(index).cloned().ok_or(ChatError::ScriptExhausted)?;
        *cursor += 1;
        Ok(reply)
    }

    fn name(&self) -> &str {
        "scripted"
    }
}
