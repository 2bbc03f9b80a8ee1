use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SluError};

/// Reserved id for the transducer BLANK symbol.
pub const BLANK_ID: u32 = 0;
/// Reserved id for the decoder start-of-sequence symbol.
pub const SOS_ID: u32 = 1;
const N_SPECIALS: u32 = 2;

pub const BLANK_TOKEN: &str = "<blank>";
pub const SOS_TOKEN: &str = "<s>";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SymbolKind {
    Blank,
    Start,
    Spoken,
    Label,
    Intent,
}

/// Symbol table with disjoint id ranges: specials, spoken words, B-/I- entity
/// labels, INTENT-* tokens. The transducer BLANK occupies a reserved id that
/// never appears in targets.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Vocab {
    spoken: Vec<String>,
    labels: Vec<String>,
    intents: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new(spoken: Vec<String>, labels: Vec<String>, intents: Vec<String>) -> Result<Self> {
        let mut v = Vocab {
            spoken,
            labels,
            intents,
            index: HashMap::new(),
        };
        v.build_index()?;
        Ok(v)
    }

    fn build_index(&mut self) -> Result<()> {
        for l in &self.labels {
            if !(l.starts_with("B-") || l.starts_with("I-")) || l.len() <= 2 {
                return Err(SluError::validation(
                    "label_tokens",
                    format!("label `{l}` must match B-<name> or I-<name>"),
                ));
            }
        }
        for i in &self.intents {
            if !i.starts_with("INTENT-") || i.len() <= 7 {
                return Err(SluError::validation(
                    "intent_tokens",
                    format!("intent `{i}` must match INTENT-<name>"),
                ));
            }
        }
        let mut index = HashMap::new();
        index.insert(BLANK_TOKEN.to_string(), BLANK_ID);
        index.insert(SOS_TOKEN.to_string(), SOS_ID);
        let all = self
            .spoken
            .iter()
            .chain(self.labels.iter())
            .chain(self.intents.iter());
        for (off, tok) in all.enumerate() {
            if index.insert(tok.clone(), N_SPECIALS + off as u32).is_some() {
                return Err(SluError::validation(
                    "tokens",
                    format!("duplicate token `{tok}`"),
                ));
            }
        }
        self.index = index;
        Ok(())
    }

    /// Restore the lookup index after deserialization.
    pub fn reindex(&mut self) -> Result<()> {
        self.build_index()
    }

    pub fn size(&self) -> usize {
        N_SPECIALS as usize + self.spoken.len() + self.labels.len() + self.intents.len()
    }

    pub fn blank_id(&self) -> u32 {
        BLANK_ID
    }

    pub fn sos_id(&self) -> u32 {
        SOS_ID
    }

    fn spoken_start(&self) -> u32 {
        N_SPECIALS
    }

    fn label_start(&self) -> u32 {
        N_SPECIALS + self.spoken.len() as u32
    }

    fn intent_start(&self) -> u32 {
        self.label_start() + self.labels.len() as u32
    }

    pub fn kind(&self, id: u32) -> SymbolKind {
        match id {
            BLANK_ID => SymbolKind::Blank,
            SOS_ID => SymbolKind::Start,
            _ if id < self.label_start() => SymbolKind::Spoken,
            _ if id < self.intent_start() => SymbolKind::Label,
            _ => SymbolKind::Intent,
        }
    }

    pub fn contains_id(&self, id: u32) -> bool {
        (id as usize) < self.size()
    }

    pub fn token(&self, id: u32) -> &str {
        match id {
            BLANK_ID => BLANK_TOKEN,
            SOS_ID => SOS_TOKEN,
            _ => {
                let off = (id - N_SPECIALS) as usize;
                if off < self.spoken.len() {
                    &self.spoken[off]
                } else if off < self.spoken.len() + self.labels.len() {
                    &self.labels[off - self.spoken.len()]
                } else {
                    &self.intents[off - self.spoken.len() - self.labels.len()]
                }
            }
        }
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn require_id(&self, token: &str) -> Result<u32> {
        self.id(token)
            .ok_or_else(|| SluError::validation("token", format!("unknown token `{token}`")))
    }

    pub fn spoken_ids(&self) -> impl Iterator<Item = u32> {
        self.spoken_start()..self.label_start()
    }

    pub fn spoken_tokens(&self) -> &[String] {
        &self.spoken
    }

    pub fn label_tokens(&self) -> &[String] {
        &self.labels
    }

    pub fn intent_tokens(&self) -> &[String] {
        &self.intents
    }

    pub fn b_label_id(&self, name: &str) -> Option<u32> {
        self.id(&format!("B-{name}"))
    }

    pub fn i_label_id(&self, name: &str) -> Option<u32> {
        self.id(&format!("I-{name}"))
    }

    pub fn intent_id(&self, name: &str) -> Option<u32> {
        self.id(&format!("INTENT-{name}"))
    }

    /// Entity name of a label token (`B-`/`I-` stripped).
    pub fn label_entity_name(&self, id: u32) -> Option<&str> {
        if self.kind(id) == SymbolKind::Label {
            Some(&self.token(id)[2..])
        } else {
            None
        }
    }

    pub fn is_b_label(&self, id: u32) -> bool {
        self.kind(id) == SymbolKind::Label && self.token(id).starts_with("B-")
    }

    pub fn intent_name(&self, id: u32) -> Option<&str> {
        if self.kind(id) == SymbolKind::Intent {
            Some(&self.token(id)[7..])
        } else {
            None
        }
    }

    /// Token strings for a symbol id sequence.
    pub fn render(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// Parse token strings back to ids.
    pub fn ids_for(&self, tokens: &[String]) -> Result<Vec<u32>> {
        tokens.iter().map(|t| self.require_id(t)).collect()
    }
}
