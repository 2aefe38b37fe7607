//! Document object model: paragraphs, sentences, typed entities and their
//! mentions, plus k-sentence segment enumeration.
//!
//! Documents arrive pre-tokenized with paragraph and sentence boundaries
//! already decided; nothing here re-segments text. The on-disk format is one
//! JSON object per line:
//!
//! ```text
//! {"id": "...",
//!  "paragraphs": [{"sentences": [{"tokens": ["..."]}]}],
//!  "entities": [{"id": "...", "type": "drug", "name": "...", "mentions": ["m0"]}],
//!  "mentions": [{"id": "m0", "entity": "e0", "kind": "named_entity", "p": 0, "s": 0, "t0": 0, "t1": 1}]}
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type DocumentId = String;
pub type EntityId = String;
pub type MentionId = String;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum EntityType {
    Drug,
    Gene,
    Mutation,
    Other(String),
}

impl From<String> for EntityType {
    fn from(s: String) -> Self {
        match s.to_ascii_lowercase().as_str() {
            "drug" => EntityType::Drug,
            "gene" => EntityType::Gene,
            "mutation" => EntityType::Mutation,
            _ => EntityType::Other(s),
        }
    }
}

impl From<EntityType> for String {
    fn from(t: EntityType) -> Self {
        t.to_string()
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityType::Drug => f.write_str("drug"),
            EntityType::Gene => f.write_str("gene"),
            EntityType::Mutation => f.write_str("mutation"),
            EntityType::Other(tag) => f.write_str(tag),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MentionKind {
    NamedEntity,
    CandidateNounPhrase,
}

/// Position of a sentence: paragraph ordinal and sentence ordinal within it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SentenceRef {
    pub paragraph: usize,
    pub sentence: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sentence {
    pub index: usize,
    pub tokens: Vec<String>,
    /// Half-open character offsets into [`Document::text`].
    pub char_span: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Paragraph {
    pub index: usize,
    pub sentences: Vec<Sentence>,
    pub char_span: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entity {
    pub id: EntityId,
    pub entity_type: EntityType,
    pub canonical_name: String,
    pub mentions: Vec<MentionId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mention {
    pub id: MentionId,
    pub entity: Option<EntityId>,
    pub surface: String,
    pub sentence: SentenceRef,
    /// Half-open token range inside the sentence.
    pub token_span: (usize, usize),
    pub kind: MentionKind,
}

impl Mention {
    /// Reading-order key: paragraph, sentence, start token, end token.
    pub fn order_key(&self) -> (usize, usize, usize, usize) {
        (
            self.sentence.paragraph,
            self.sentence.sentence,
            self.token_span.0,
            self.token_span.1,
        )
    }

    pub fn overlaps(&self, other: &Mention) -> bool {
        self.sentence == other.sentence
            && self.token_span.0 < other.token_span.1
            && other.token_span.0 < self.token_span.1
    }

    /// True when `other` lies inside this mention's span and is not the same span.
    pub fn strictly_contains(&self, other: &Mention) -> bool {
        self.sentence == other.sentence
            && self.token_span.0 <= other.token_span.0
            && other.token_span.1 <= self.token_span.1
            && self.token_span != other.token_span
    }

    pub fn normalized_surface(&self) -> String {
        self.surface.to_lowercase()
    }
}

#[derive(Clone, Debug)]
pub struct Document {
    pub id: DocumentId,
    pub paragraphs: Vec<Paragraph>,
    pub entities: Vec<Entity>,
    /// Mentions sorted in reading order.
    pub mentions: Vec<Mention>,
    mention_index: HashMap<MentionId, usize>,
    entity_index: HashMap<EntityId, usize>,
    by_sentence: Vec<Vec<Vec<usize>>>,
}

/// A window of consecutive sentences inside one paragraph.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Segment {
    pub document: DocumentId,
    pub paragraph: usize,
    /// Inclusive sentence range.
    pub sentence_range: (usize, usize),
    pub mentions: Vec<MentionId>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.sentence_range.1 + 1 - self.sentence_range.0
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, at: SentenceRef) -> bool {
        at.paragraph == self.paragraph
            && self.sentence_range.0 <= at.sentence
            && at.sentence <= self.sentence_range.1
    }
}

// ---------------------------------------------------------------------------
// Wire format

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub paragraphs: Vec<RawParagraph>,
    #[serde(default)]
    pub entities: Vec<RawEntity>,
    #[serde(default)]
    pub mentions: Vec<RawMention>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RawParagraph {
    pub sentences: Vec<RawSentence>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RawSentence {
    pub tokens: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RawEntity {
    pub id: String,
    #[serde(rename = "type")]
    pub entity_type: EntityType,
    pub name: String,
    #[serde(default)]
    pub mentions: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RawMention {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<String>,
    pub kind: MentionKind,
    pub p: usize,
    pub s: usize,
    pub t0: usize,
    pub t1: usize,
}

impl Document {
    /// Builds a document from its wire form, checking every structural invariant.
    pub fn from_raw(raw: RawDocument) -> Result<Self> {
        let mut offset = 0usize;
        let mut paragraphs = Vec::with_capacity(raw.paragraphs.len());
        for (pi, rp) in raw.paragraphs.into_iter().enumerate() {
            if pi > 0 {
                offset += 2;
            }
            let p_start = offset;
            let mut sentences = Vec::with_capacity(rp.sentences.len());
            for (si, rs) in rp.sentences.into_iter().enumerate() {
                if si > 0 {
                    offset += 1;
                }
                let s_start = offset;
                let len: usize = rs.tokens.iter().map(|t| t.len()).sum::<usize>()
                    + rs.tokens.len().saturating_sub(1);
                offset += len;
                sentences.push(Sentence {
                    index: si,
                    tokens: rs.tokens,
                    char_span: (s_start, offset),
                });
            }
            paragraphs.push(Paragraph {
                index: pi,
                sentences,
                char_span: (p_start, offset),
            });
        }

        let doc_id = raw.id;
        let mut mentions = Vec::with_capacity(raw.mentions.len());
        let mut seen = BTreeSet::new();
        for rm in raw.mentions {
            if !seen.insert(rm.id.clone()) {
                return Err(Error::Validation(format!(
                    "document {doc_id}: duplicate mention id {}",
                    rm.id
                )));
            }
            let sentence = paragraphs
                .get(rm.p)
                .and_then(|p| p.sentences.get(rm.s))
                .ok_or_else(|| {
                    Error::Validation(format!(
                        "document {doc_id}: mention {} points at missing sentence ({}, {})",
                        rm.id, rm.p, rm.s
                    ))
                })?;
            if rm.t0 >= rm.t1 {
                return Err(Error::Validation(format!(
                    "document {doc_id}: mention {} has an empty token span",
                    rm.id
                )));
            }
            if rm.t1 > sentence.tokens.len() {
                return Err(Error::Validation(format!(
                    "document {doc_id}: mention {} span {}..{} crosses the end of sentence ({}, {})",
                    rm.id, rm.t0, rm.t1, rm.p, rm.s
                )));
            }
            let surface = sentence.tokens[rm.t0..rm.t1].join(" ");
            mentions.push(Mention {
                id: rm.id,
                entity: rm.entity,
                surface,
                sentence: SentenceRef {
                    paragraph: rm.p,
                    sentence: rm.s,
                },
                token_span: (rm.t0, rm.t1),
                kind: rm.kind,
            });
        }
        mentions.sort_by(|a, b| a.order_key().cmp(&b.order_key()).then(a.id.cmp(&b.id)));

        let mention_index: HashMap<_, _> = mentions
            .iter()
            .enumerate()
            .map(|(i, m)| (m.id.clone(), i))
            .collect();

        let mut entities = Vec::with_capacity(raw.entities.len());
        let mut entity_index = HashMap::new();
        for (i, re) in raw.entities.into_iter().enumerate() {
            if entity_index.insert(re.id.clone(), i).is_some() {
                return Err(Error::Validation(format!(
                    "document {doc_id}: duplicate entity id {}",
                    re.id
                )));
            }
            for mid in &re.mentions {
                let m = mention_index
                    .get(mid)
                    .map(|&ix| &mentions[ix])
                    .ok_or_else(|| {
                        Error::Validation(format!(
                            "document {doc_id}: entity {} lists unknown mention {mid}",
                            re.id
                        ))
                    })?;
                if m.entity.as_deref() != Some(re.id.as_str()) {
                    return Err(Error::Validation(format!(
                        "document {doc_id}: entity {} lists mention {mid} linked elsewhere",
                        re.id
                    )));
                }
            }
            entities.push(Entity {
                id: re.id,
                entity_type: re.entity_type,
                canonical_name: re.name,
                mentions: re.mentions,
            });
        }
        for m in &mentions {
            if let Some(eid) = &m.entity {
                let listed = entity_index
                    .get(eid)
                    .map(|&ix| entities[ix].mentions.contains(&m.id))
                    .unwrap_or(false);
                if !listed {
                    return Err(Error::Validation(format!(
                        "document {doc_id}: mention {} links to entity {eid} which does not list it",
                        m.id
                    )));
                }
            }
        }

        let mut by_sentence: Vec<Vec<Vec<usize>>> = paragraphs
            .iter()
            .map(|p| vec![Vec::new(); p.sentences.len()])
            .collect();
        for (i, m) in mentions.iter().enumerate() {
            by_sentence[m.sentence.paragraph][m.sentence.sentence].push(i);
        }

        Ok(Document {
            id: doc_id,
            paragraphs,
            entities,
            mentions,
            mention_index,
            entity_index,
            by_sentence,
        })
    }

    pub fn to_raw(&self) -> RawDocument {
        RawDocument {
            id: self.id.clone(),
            paragraphs: self
                .paragraphs
                .iter()
                .map(|p| RawParagraph {
                    sentences: p
                        .sentences
                        .iter()
                        .map(|s| RawSentence {
                            tokens: s.tokens.clone(),
                        })
                        .collect(),
                })
                .collect(),
            entities: self
                .entities
                .iter()
                .map(|e| RawEntity {
                    id: e.id.clone(),
                    entity_type: e.entity_type.clone(),
                    name: e.canonical_name.clone(),
                    mentions: e.mentions.clone(),
                })
                .collect(),
            mentions: self
                .mentions
                .iter()
                .map(|m| RawMention {
                    id: m.id.clone(),
                    entity: m.entity.clone(),
                    kind: m.kind,
                    p: m.sentence.paragraph,
                    s: m.sentence.sentence,
                    t0: m.token_span.0,
                    t1: m.token_span.1,
                })
                .collect(),
        }
    }

    pub fn mention(&self, id: &str) -> Option<&Mention> {
        self.mention_index.get(id).map(|&i| &self.mentions[i])
    }

    pub fn mention_position(&self, id: &str) -> Option<usize> {
        self.mention_index.get(id).copied()
    }

    pub fn require_mention(&self, id: &str) -> Result<&Mention> {
        self.mention(id).ok_or_else(|| Error::lookup("mention", id))
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entity_index.get(id).map(|&i| &self.entities[i])
    }

    /// Case-insensitive lookup by canonical name, optionally restricted to a type.
    pub fn entity_by_name(&self, name: &str, ty: Option<&EntityType>) -> Option<&Entity> {
        let wanted = name.trim().to_lowercase();
        self.entities.iter().find(|e| {
            e.canonical_name.to_lowercase() == wanted && ty.map_or(true, |t| &e.entity_type == t)
        })
    }

    /// Type of the entity a mention is linked to, if any.
    pub fn mention_type(&self, m: &Mention) -> Option<&EntityType> {
        m.entity
            .as_deref()
            .and_then(|e| self.entity(e))
            .map(|e| &e.entity_type)
    }

    pub fn sentence(&self, at: SentenceRef) -> &Sentence {
        &self.paragraphs[at.paragraph].sentences[at.sentence]
    }

    pub fn num_sentences(&self) -> usize {
        self.paragraphs.iter().map(|p| p.sentences.len()).sum()
    }

    pub fn sentence_refs(&self) -> impl Iterator<Item = SentenceRef> + '_ {
        self.paragraphs.iter().flat_map(|p| {
            (0..p.sentences.len()).map(move |s| SentenceRef {
                paragraph: p.index,
                sentence: s,
            })
        })
    }

    /// Indices (into `mentions`) of the mentions in one sentence, reading order.
    pub fn mentions_in(&self, at: SentenceRef) -> &[usize] {
        &self.by_sentence[at.paragraph][at.sentence]
    }

    /// Mentions strictly nested inside `m`.
    pub fn sub_mentions<'a>(&'a self, m: &'a Mention) -> impl Iterator<Item = &'a Mention> + 'a {
        self.mentions_in(m.sentence)
            .iter()
            .map(move |&i| &self.mentions[i])
            .filter(move |o| m.strictly_contains(o))
    }

    /// Entities a mention refers to directly or through a nested named mention.
    pub fn referenced_entities<'a>(&'a self, m: &'a Mention) -> BTreeSet<&'a str> {
        let mut out: BTreeSet<&str> = BTreeSet::new();
        if let Some(e) = m.entity.as_deref() {
            out.insert(e);
        }
        for s in self.sub_mentions(m) {
            if let Some(e) = s.entity.as_deref() {
                out.insert(e);
            }
        }
        out
    }

    /// Plain text of the whole document: tokens joined by spaces, sentences by
    /// a space, paragraphs by a blank line. Character spans index into this.
    pub fn text(&self) -> String {
        self.paragraphs
            .iter()
            .map(|p| {
                p.sentences
                    .iter()
                    .map(|s| s.tokens.join(" "))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn segment_text(&self, seg: &Segment) -> String {
        (seg.sentence_range.0..=seg.sentence_range.1)
            .map(|s| {
                self.sentence(SentenceRef {
                    paragraph: seg.paragraph,
                    sentence: s,
                })
                .tokens
                .join(" ")
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn segment(&self, paragraph: usize, first: usize, last: usize) -> Segment {
        let mentions = (first..=last)
            .flat_map(|s| {
                self.mentions_in(SentenceRef {
                    paragraph,
                    sentence: s,
                })
                .iter()
                .map(|&i| self.mentions[i].id.clone())
            })
            .collect();
        Segment {
            document: self.id.clone(),
            paragraph,
            sentence_range: (first, last),
            mentions,
        }
    }
}

// ---------------------------------------------------------------------------
// Operations

/// Reads a line-delimited corpus. Blank lines are skipped; documents come back
/// sorted by id.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_corpus(reader: impl BufRead) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut ids = BTreeSet::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<corpus>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDocument = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        let doc = Document::from_raw(raw).map_err(|e| match e {
            Error::Validation(msg) => Error::Validation(format!("line {}: {msg}", n + 1)),
            other => other,
        })?;
        if !ids.insert(doc.id.clone()) {
            return Err(Error::Validation(format!(
                "line {}: duplicate document id {}",
                n + 1,
                doc.id
            )));
        }
        docs.push(doc);
    }
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(docs)
}

pub fn write_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in docs {
        serde_json::to_writer(&mut w, &d.to_raw())?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// All windows of `1..=k_max` consecutive sentences inside each paragraph, in
/// reading order (paragraph, first sentence, last sentence).
pub fn enumerate_segments(doc: &Document, k_max: usize) -> Vec<Segment> {
    let mut out = Vec::new();
    for p in &doc.paragraphs {
        let n = p.sentences.len();
        for first in 0..n {
            for len in 1..=k_max.min(n - first) {
                out.push(doc.segment(p.index, first, first + len - 1));
            }
        }
    }
    out
}

/// Ordered mention pairs inside a segment whose entity types match
/// `type_pair`. Unlinked mentions never match.
pub fn co_occurring_pairs(
    doc: &Document,
    segment: &Segment,
    type_pair: (&EntityType, &EntityType),
) -> Vec<(MentionId, MentionId)> {
    let typed: Vec<(&Mention, &EntityType)> = segment
        .mentions
        .iter()
        .filter_map(|id| doc.mention(id))
        .filter_map(|m| doc.mention_type(m).map(|t| (m, t)))
        .collect();
    let mut out = Vec::new();
    for (a, ta) in &typed {
        if *ta != type_pair.0 {
            continue;
        }
        for (b, tb) in &typed {
            if *tb == type_pair.1 && a.id != b.id {
                out.push((a.id.clone(), b.id.clone()));
            }
        }
    }
    out
}
