//! Interleaved caption/structural-token target sequences.
//!
//! Walking the partition in order, a transition segment emits `<tst>` and an
//! event segment emits its caption tokens followed by `<ent>`. The sequence
//! ends with `<eos>`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::temporal::{SegmentPartition, StructuralTokenSeq, TokenKind};

pub const ENT: &str = "<ent>";
pub const TST: &str = "<tst>";
pub const EOS: &str = "<eos>";

/// Closed whitespace vocabulary. Ids 0..3 are `<ent>`, `<tst>`, `<eos>`;
/// corpus words follow in sorted order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
}

impl Vocabulary {
    pub fn from_corpus<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let corpus: BTreeSet<&str> = texts
            .into_iter()
            .flat_map(str::split_whitespace)
            .filter(|w| ![ENT, TST, EOS].contains(w))
            .collect();
        let mut words: Vec<String> = [ENT, TST, EOS].iter().map(|s| s.to_string()).collect();
        words.extend(corpus.into_iter().map(String::from));
        Self { words }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        match word {
            ENT => Some(0),
            TST => Some(1),
            EOS => Some(2),
            _ => self.words[3..]
                .binary_search_by(|w| w.as_str().cmp(word))
                .ok()
                .map(|i| i + 3),
        }
    }

    pub fn ent_id(&self) -> usize {
        0
    }

    pub fn tst_id(&self) -> usize {
        1
    }

    pub fn eos_id(&self) -> usize {
        2
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|w| {
                self.id(w)
                    .ok_or_else(|| Error::invalid(format!("word `{w}` is not in the vocabulary")))
            })
            .collect()
    }

    pub fn render(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.word(i).unwrap_or("<unk>").to_string())
            .collect()
    }
}

/// Builds the target token sequence for one video.
pub fn assemble_interleaved_sequence(
    partition: &SegmentPartition,
    tokens: &StructuralTokenSeq,
    captions: &[String],
    vocab: &Vocabulary,
) -> Result<Vec<usize>> {
    if tokens.len() != partition.len() {
        return Err(Error::invalid(format!(
            "{} structural tokens for {} segments",
            tokens.len(),
            partition.len()
        )));
    }
    let n_events = tokens.ent_indices().len();
    if captions.len() != n_events {
        return Err(Error::invalid(format!(
            "{} captions for {n_events} events",
            captions.len()
        )));
    }
    let mut out = Vec::new();
    let mut caption_iter = captions.iter();
    for kind in tokens.labels() {
        match kind {
            TokenKind::Transition => out.push(vocab.tst_id()),
            TokenKind::Event => {
                let caption = caption_iter.next().expect("caption count checked");
                out.extend(vocab.tokenize(caption)?);
                out.push(vocab.ent_id());
            }
        }
    }
    out.push(vocab.eos_id());
    Ok(out)
}
