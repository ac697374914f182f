use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::message::{ChatImage, ChatMessage, Prompt};
use super::template::Templates;
use crate::error::{Error, Result};

/// Anything that turns a message list into assistant text.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub digest: String,
    pub template_id: String,
    pub response: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { entries })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_jsonl())?)
    }
}

enum Mode {
    Live(Box<dyn ChatBackend>),
    Record {
        backend: Box<dyn ChatBackend>,
        sink: Option<Mutex<File>>,
    },
    Replay {
        entries: Vec<TranscriptEntry>,
        cursor: Mutex<usize>,
    },
}

/// Sends prompts to a backend, optionally recording every exchange, or
/// answers them from a transcript in order.
pub struct ChatClient {
    mode: Mode,
    log: Mutex<Vec<TranscriptEntry>>,
}

impl ChatClient {
    pub fn live(backend: Box<dyn ChatBackend>) -> Self {
        Self::with_mode(Mode::Live(backend))
    }

    /// Records to memory, and line by line to `path` when given.
    pub fn record(backend: Box<dyn ChatBackend>, path: Option<&Path>) -> Result<Self> {
        let sink = path.map(File::create).transpose()?.map(Mutex::new);
        Ok(Self::with_mode(Mode::Record { backend, sink }))
    }

    pub fn replay(transcript: Transcript) -> Self {
        Self::with_mode(Mode::Replay {
            entries: transcript.entries,
            cursor: Mutex::new(0),
        })
    }

    pub fn replay_file(path: &Path) -> Result<Self> {
        Ok(Self::replay(Transcript::load(path)?))
    }

    fn with_mode(mode: Mode) -> Self {
        Self {
            mode,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self.mode {
            Mode::Live(_) => "live",
            Mode::Record { .. } => "record",
            Mode::Replay { .. } => "replay",
        }
    }

    pub fn chat(&self, prompt: &Prompt) -> Result<String> {
        let digest = prompt.digest();
        let response = match &self.mode {
            Mode::Live(backend) => backend.complete(&prompt.messages)?,
            Mode::Record { backend, sink } => {
                let response = backend.complete(&prompt.messages)?;
                if let Some(sink) = sink {
                    let entry = TranscriptEntry {
                        digest: digest.clone(),
                        template_id: prompt.template_id.clone(),
                        response: response.clone(),
                    };
                    let mut f = sink.lock().expect("transcript sink poisoned");
                    writeln!(f, "{}", serde_json::to_string(&entry)?)?;
                    f.flush()?;
                }
                response
            }
            Mode::Replay { entries, cursor } => {
                let mut at = cursor.lock().expect("replay cursor poisoned");
                let index = *at;
                let entry = entries.get(index).ok_or_else(|| Error::ReplayMismatch {
                    index,
                    expected: "<end of transcript>".into(),
                    actual: digest.clone(),
                })?;
                if entry.digest != digest {
                    return Err(Error::ReplayMismatch {
                        index,
                        expected: entry.digest.clone(),
                        actual: digest,
                    });
                }
                *at += 1;
                entry.response.clone()
            }
        };
        self.log.lock().expect("log poisoned").push(TranscriptEntry {
            digest,
            template_id: prompt.template_id.clone(),
            response: response.clone(),
        });
        Ok(response)
    }

    /// Every exchange made through this client so far.
    pub fn transcript(&self) -> Transcript {
        Transcript {
            entries: self.log.lock().expect("log poisoned").clone(),
        }
    }
}

/// A chat client paired with the templates it renders.
pub struct Advisor {
    pub client: ChatClient,
    pub templates: Templates,
}

impl Advisor {
    pub fn new(client: ChatClient) -> Self {
        Self {
            client,
            templates: Templates::builtin(),
        }
    }

    pub fn ask(&self, template_id: &str, bindings: &[(&str, String)], images: Vec<ChatImage>) -> Result<String> {
        let map: BTreeMap<String, String> = bindings.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        let prompt = self.templates.render(template_id, &map, images)?;
        self.client.chat(&prompt)
    }
}
