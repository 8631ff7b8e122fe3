//! Turns a clinician's free-text question into a specialized analysis
//! prompt by way of a meta-prompt sent to a chat model.

mod client;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::report::{extract_json_block, ReportField};

pub use client::{
    chat_complete, ChatClient, ChatClientConfig, ChatError, ChatMessage, EchoChatClient,
    HttpChatClient, Role, ScriptedChatClient,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("query is empty")]
    EmptyQuery,
    #[error(transparent)]
    Client(#[from] ChatError),
    #[error("prompt synthesis failed: {0}")]
    SynthesisFailed(String),
}

const PERSONA: &str = "You are a pathology assistant who writes analysis instructions for a \
vision-language model that reads immunohistochemistry (IHC) slide images.";

const FEW_SHOT_QUERY: &str = "ki67 stained breast biopsy, how proliferative is it?";

const FEW_SHOT_ANSWER: &str = r#"{"system_prompt": "Act as an IHC scoring assistant. Examine the Ki-67 stained breast biopsy image and report proliferation findings as one JSON object with the keys below.", "notes": "Count only tumor nuclei; exclude lymphocytes and stromal cells. Brown nuclear staining of any intensity is positive.", "required_json_keys": ["stain_type", "percentage_of_cells_stained", "staining_intensity_grade", "type_of_cells_stained", "staining_location_per_cell", "report", "explanation"]}"#;

/// Persona, formatting rules, one worked example and the user's query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaPrompt {
    pub system_text: String,
    pub few_shot: (String, String),
    pub user_query: String,
}

impl MetaPrompt {
    pub fn messages(&self) -> Vec<ChatMessage> {
        vec![
            ChatMessage::system(&self.system_text),
            ChatMessage::user(&self.few_shot.0),
            ChatMessage::assistant(&self.few_shot.1),
            ChatMessage::user(&self.user_query),
        ]
    }

    /// Flat text of the whole conversation, one `[role]` header per message.
    pub fn render(&self) -> String {
        self.messages()
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::System => "system",
                    Role::User => "user",
                    Role::Assistant => "assistant",
                };
                format!("[{role}]\n{}\n", m.content)
            })
            .collect()
    }
}

fn schema_key_list() -> String {
    ReportField::ALL
        .iter()
        .map(|f| f.key())
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn build_meta_prompt(query: &str) -> Result<MetaPrompt, PromptError> {
    if query.trim().is_empty() {
        return Err(PromptError::EmptyQuery);
    }
    let system_text = format!(
        "{PERSONA}\n\
         Rewrite the clinician's question as a precise instruction for that model.\n\
         Output rules:\n\
         1. Reply with exactly one JSON object and no other text.\n\
         2. The object has the keys \"system_prompt\" (string), \"notes\" (string) and \"required_json_keys\" (array of strings).\n\
         3. \"system_prompt\" names the stain and the tissue when the question gives them.\n\
         4. \"notes\" lists stain-specific pitfalls the model should avoid.\n\
         5. \"required_json_keys\" contains every one of: {keys}.",
        keys = schema_key_list()
    );
    Ok(MetaPrompt {
        system_text,
        few_shot: (FEW_SHOT_QUERY.to_string(), FEW_SHOT_ANSWER.to_string()),
        user_query: query.to_string(),
    })
}

/// Instruction handed to the vision-language model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecializedPrompt {
    pub system_prompt: String,
    pub notes: String,
    pub required_json_keys: Vec<String>,
}

impl SpecializedPrompt {
    /// Parses a chat reply. Accepts `required_json_keys` as a list, or a
    /// `required_json_structure` object whose keys are taken.
    pub fn parse(reply: &str) -> Result<Self, String> {
        let block = extract_json_block(reply).map_err(|_| "reply contains no JSON object".to_string())?;
        let obj: Map<String, Value> = serde_json::from_str(block).map_err(|e| format!("invalid JSON: {e}"))?;

        let system_prompt = match obj.get("system_prompt") {
            Some(Value::String(s)) if !s.trim().is_empty() => s.clone(),
            Some(_) => return Err("\"system_prompt\" must be a non-empty string".into()),
            None => return Err("missing \"system_prompt\"".into()),
        };
        let notes = match obj.get("notes") {
            Some(Value::String(s)) => s.clone(),
            None | Some(Value::Null) => String::new(),
            Some(_) => return Err("\"notes\" must be a string".into()),
        };
        let required_json_keys: Vec<String> = match (obj.get("required_json_keys"), obj.get("required_json_structure")) {
            (Some(Value::Array(items)), _) => items
                .iter()
                .map(|v| v.as_str().map(str::to_owned))
                .collect::<Option<_>>()
                .ok_or("\"required_json_keys\" must contain only strings")?,
            (None, Some(Value::Object(structure))) => structure.keys().cloned().collect(),
            _ => return Err("missing \"required_json_keys\" list".into()),
        };

        let prompt = Self { system_prompt, notes, required_json_keys };
        let missing = prompt.missing_keys();
        if !missing.is_empty() {
            return Err(format!("required_json_keys is missing: {}", missing.join(", ")));
        }
        Ok(prompt)
    }

    pub fn missing_keys(&self) -> Vec<&'static str> {
        ReportField::ALL
            .iter()
            .map(|f| f.key())
            .filter(|k| !self.required_json_keys.iter().any(|r| r == k))
            .collect()
    }

    /// Text form given to the vision-language model, ending in a JSON
    /// skeleton of the required keys.
    pub fn render(&self) -> String {
        let mut skeleton = Map::new();
        for key in &self.required_json_keys {
            let hint = match key.parse::<ReportField>() {
                Ok(ReportField::StainType) => "KI67 | PDL1 | BRAF | OTHER",
                Ok(ReportField::PercentageOfCellsStained) => "0-100",
                Ok(ReportField::StainingIntensityGrade) => "0-3",
                Ok(ReportField::StainingLocationPerCell) => "nuclear | cytoplasmic | membranous | mixed",
                _ => "...",
            };
            skeleton.insert(key.clone(), Value::String(hint.into()));
        }
        let skeleton = serde_json::to_string_pretty(&Value::Object(skeleton)).expect("skeleton serializes");
        let mut out = self.system_prompt.clone();
        if !self.notes.is_empty() {
            out.push_str("\n\nNotes: ");
            out.push_str(&self.notes);
        }
        out.push_str("\n\nRequired JSON Structure:\n");
        out.push_str(&skeleton);
        out
    }
}

/// A validated prompt and how many repair rounds it took.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Synthesis {
    pub prompt: SpecializedPrompt,
    pub retry_count: u32,
}

/// Sends the meta-prompt and validates the reply. On a structurally invalid
/// reply the error is appended to the conversation and the model is asked
/// again, at most `max_repair_retries` times.
pub fn synthesize_prompt(
    query: &str,
    client: &dyn ChatClient,
    config: &ChatClientConfig,
) -> Result<Synthesis, PromptError> {
    let meta = build_meta_prompt(query)?;
    let mut messages = meta.messages();
    let mut last_error = String::new();
    for attempt in 0..=config.max_repair_retries {
        let reply = chat_complete(client, config, &messages)?;
        match SpecializedPrompt::parse(&reply) {
            Ok(prompt) => return Ok(Synthesis { prompt, retry_count: attempt }),
            Err(e) => {
                messages.push(ChatMessage::assistant(reply));
                messages.push(ChatMessage::user(format!(
                    "Your previous reply was rejected: {e}. Reply again with only the corrected JSON object."
                )));
                last_error = e;
            }
        }
    }
    Err(PromptError::SynthesisFailed(last_error))
}
