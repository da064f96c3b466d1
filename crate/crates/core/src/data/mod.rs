//! Dataset model: action triplets, captioned frames, vocabularies, and the
//! TripletWorld synthetic renderer with its inverse-rendering oracle.
//!
//! Images are `f32` RGB in `[0,1]`; conversion to the diffusion range
//! `[-1,1]` happens inside the diffusion module.

mod imagebuf;
mod ingest;
mod toyworld;

pub use imagebuf::Image;
pub use ingest::{export_dataset, load_annotations, IngestReport};
pub use toyworld::{
    default_toy_vocab, glyph_window, make_toy_dataset, oracle_classify, render_toy,
    render_toy_pair, stripe_value, toy_class_color, zipf_probs, OracleDecode, ToyOracle,
    ToyWorldConfig,
};

use crate::error::{Error, Result};

/// Content-hash identifier of a vocabulary; triplets record which vocabulary
/// their ids index into.
pub type VocabId = u64;

/// Three id→word maps with contiguous ids from zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    instruments: Vec<String>,
    verbs: Vec<String>,
    targets: Vec<String>,
    id: VocabId,
}

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = seed ^ 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl Vocab {
    pub fn new(
        instruments: Vec<String>,
        verbs: Vec<String>,
        targets: Vec<String>,
    ) -> Result<Self> {
        for (kind, words) in [
            ("instrument", &instruments),
            ("verb", &verbs),
            ("target", &targets),
        ] {
            if words.len() < 1 {
                return Err(Error::Config(format!("empty {kind} vocabulary")));
            }
            for w in words {
                if w.is_empty() || w != &w.to_lowercase() {
                    return Err(Error::Config(format!(
                        "{kind} word {w:?} must be non-empty lowercase"
                    )));
                }
            }
        }
        let mut id = 0xf017_5eed_u64;
        for words in [&instruments, &verbs, &targets] {
            for w in words {
                id = fnv1a(w.as_bytes(), id);
                id = fnv1a(b"|", id);
            }
            id = fnv1a(b";", id);
        }
        Ok(Vocab { instruments, verbs, targets, id })
    }

    pub fn id(&self) -> VocabId {
        self.id
    }

    pub fn instruments(&self) -> &[String] {
        &self.instruments
    }

    pub fn verbs(&self) -> &[String] {
        &self.verbs
    }

    pub fn targets(&self) -> &[String] {
        &self.targets
    }

    pub fn instrument_word(&self, id: u16) -> Result<&str> {
        self.instruments
            .get(id as usize)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Lookup(format!("instrument id {id} out of range")))
    }

    pub fn verb_word(&self, id: u16) -> Result<&str> {
        self.verbs
            .get(id as usize)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Lookup(format!("verb id {id} out of range")))
    }

    pub fn target_word(&self, id: u16) -> Result<&str> {
        self.targets
            .get(id as usize)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Lookup(format!("target id {id} out of range")))
    }

    /// Number of (instrument, verb, target) combinations.
    pub fn n_combinations(&self) -> usize {
        self.instruments.len() * self.verbs.len() * self.targets.len()
    }

    /// Find component ids by word; used when parsing prompts.
    pub fn resolve(&self, instrument: &str, verb: &str, target: &str) -> Result<Triplet> {
        let find = |words: &[String], w: &str, kind: &str| -> Result<u16> {
            words
                .iter()
                .position(|x| x == w)
                .map(|i| i as u16)
                .ok_or_else(|| Error::Lookup(format!("unknown {kind} word {w:?}")))
        };
        Triplet::new(
            find(&self.instruments, instrument, "instrument")?,
            find(&self.verbs, verb, "verb")?,
            find(&self.targets, target, "target")?,
            self,
        )
    }
}

/// ⟨instrument, verb, target⟩ with the id of the vocabulary it indexes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    pub instrument: u16,
    pub verb: u16,
    pub target: u16,
    pub vocab_ref: VocabId,
}

impl Triplet {
    pub fn new(instrument: u16, verb: u16, target: u16, vocab: &Vocab) -> Result<Self> {
        vocab.instrument_word(instrument)?;
        vocab.verb_word(verb)?;
        vocab.target_word(target)?;
        Ok(Triplet { instrument, verb, target, vocab_ref: vocab.id() })
    }

    pub fn check_vocab(&self, vocab: &Vocab) -> Result<()> {
        if self.vocab_ref != vocab.id() {
            return Err(Error::Lookup(format!(
                "triplet references vocabulary {:#x}, got {:#x}",
                self.vocab_ref,
                vocab.id()
            )));
        }
        Ok(())
    }

    /// Whether the verb is the reserved "null" word.
    pub fn has_null_verb(&self, vocab: &Vocab) -> bool {
        vocab.verb_word(self.verb).map(|w| w == "null").unwrap_or(false)
    }

    pub fn has_null_target(&self, vocab: &Vocab) -> bool {
        vocab.target_word(self.target).map(|w| w == "null").unwrap_or(false)
    }
}

/// Caption for one triplet: lowercase, space-joined, null components dropped.
pub fn triplet_caption(triplet: &Triplet, vocab: &Vocab) -> Result<String> {
    triplet.check_vocab(vocab)?;
    let mut parts: Vec<&str> = vec![vocab.instrument_word(triplet.instrument)?];
    let verb = vocab.verb_word(triplet.verb)?;
    if verb != "null" {
        parts.push(verb);
    }
    let target = vocab.target_word(triplet.target)?;
    if target != "null" {
        parts.push(target);
    }
    Ok(parts.join(" "))
}

/// Caption for a frame: the k triplet captions joined by ". " in annotation order.
pub fn frame_caption(frame: &AnnotatedFrame, vocab: &Vocab) -> Result<String> {
    let captions: Vec<String> = frame
        .triplets
        .iter()
        .map(|t| triplet_caption(t, vocab))
        .collect::<Result<_>>()?;
    Ok(captions.join(". "))
}

/// One image with its k ≥ 1 triplet annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedFrame {
    pub image: Image,
    pub triplets: Vec<Triplet>,
    pub frame_id: String,
    pub source_video: String,
}

impl AnnotatedFrame {
    pub fn new(
        image: Image,
        triplets: Vec<Triplet>,
        frame_id: String,
        source_video: String,
    ) -> Result<Self> {
        if triplets.is_empty() {
            return Err(Error::Input(format!("frame {frame_id} has no triplets")));
        }
        for i in 0..triplets.len() {
            for j in (i + 1)..triplets.len() {
                if triplets[i] == triplets[j] {
                    return Err(Error::Input(format!(
                        "frame {frame_id} has duplicate triplet {:?}",
                        triplets[i]
                    )));
                }
            }
        }
        Ok(AnnotatedFrame { image, triplets, frame_id, source_video })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Ingested,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frames: Vec<AnnotatedFrame>,
    pub vocab: Vocab,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(frames: Vec<AnnotatedFrame>, vocab: Vocab, provenance: Provenance) -> Result<Self> {
        for f in &frames {
            for t in &f.triplets {
                t.check_vocab(&vocab)?;
                vocab.instrument_word(t.instrument)?;
                vocab.verb_word(t.verb)?;
                vocab.target_word(t.target)?;
            }
        }
        Ok(Dataset { frames, vocab, provenance })
    }

    pub fn n(&self) -> usize {
        self.frames.len()
    }
}
