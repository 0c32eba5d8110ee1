use std::collections::{BTreeSet, HashMap};

use super::{Corpus, Document};

pub const UNK: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const MARKER: u32 = 3;
const RESERVED: [&str; 4] = ["[UNK]", "[BOS]", "[EOS]", "*"];

/// Word-level vocabulary. Ids 0..4 are reserved for UNK, BOS, EOS and the
/// mention marker `*`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Reserved tokens followed by `words` in the given order (duplicates and
    /// reserved spellings skipped).
    pub fn from_words<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> Self {
        let mut v = Self {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for w in RESERVED {
            v.push(w);
        }
        for w in words {
            v.push(w.as_ref());
        }
        v
    }

    /// Every word appearing in the corpora, sorted.
    pub fn from_corpora(corpora: &[&Corpus]) -> Self {
        let words: BTreeSet<&str> = corpora
            .iter()
            .flat_map(|c| &c.documents)
            .flat_map(|d| &d.sentences)
            .flatten()
            .map(String::as_str)
            .collect();
        Self::from_words(words)
    }

    fn push(&mut self, w: &str) {
        if !self.index.contains_key(w) {
            self.index.insert(w.to_string(), self.words.len() as u32);
            self.words.push(w.to_string());
        }
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Non-reserved words in id order.
    pub fn words(&self) -> &[String] {
        &self.words[RESERVED.len()..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Bos,
    Eos,
    Marker,
    Word,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenizeOptions {
    pub bos_eos: bool,
}

impl Default for TokenizeOptions {
    fn default() -> Self {
        Self { bos_eos: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedDocument {
    pub ids: Vec<u32>,
    pub kinds: Vec<TokenKind>,
    /// Original word for `Word` tokens, the marker or special spelling
    /// otherwise.
    pub surface: Vec<String>,
    /// Inclusive `[start, end]` token range of each sentence.
    pub sentence_spans: Vec<(usize, usize)>,
    /// Per entity, positions of the `*` opening each of its mentions.
    pub mention_starts: Vec<Vec<usize>>,
    pub bos: Option<usize>,
    pub eos: Option<usize>,
}

impl TokenizedDocument {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_sentences(&self) -> usize {
        self.sentence_spans.len()
    }

    /// Sentence index of each token; `None` for BOS/EOS.
    pub fn sentence_of_token(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.len()];
        for (i, &(s, e)) in self.sentence_spans.iter().enumerate() {
            out[s..=e].iter_mut().for_each(|x| *x = Some(i));
        }
        out
    }

    /// Surface sentences with markers and specials removed.
    pub fn reconstruct_sentences(&self) -> Vec<Vec<String>> {
        self.sentence_spans
            .iter()
            .map(|&(s, e)| {
                (s..=e)
                    .filter(|&j| self.kinds[j] == TokenKind::Word)
                    .map(|j| self.surface[j].clone())
                    .collect()
            })
            .collect()
    }
}

/// Inserts `*` before and after every mention and maps words to ids.
///
/// Mentions sharing a start position open longest-first, then by ascending
/// entity index; closings at one position mirror the openings, so spans stay
/// well nested. Identical spans therefore open in entity order and close in
/// reverse.
pub fn tokenize_with_markers(doc: &Document, vocab: &Vocabulary, opts: TokenizeOptions) -> TokenizedDocument {
    let mut out = TokenizedDocument {
        ids: Vec::with_capacity(doc.num_tokens() + 2 * doc.num_mentions() + 2),
        kinds: Vec::new(),
        surface: Vec::new(),
        sentence_spans: Vec::with_capacity(doc.sentences.len()),
        mention_starts: vec![Vec::new(); doc.entities.len()],
        bos: None,
        eos: None,
    };
    let emit = |out: &mut TokenizedDocument, id: u32, kind: TokenKind, s: &str| {
        out.ids.push(id);
        out.kinds.push(kind);
        out.surface.push(s.to_string());
        out.ids.len() - 1
    };
    if opts.bos_eos {
        out.bos = Some(emit(&mut out, BOS, TokenKind::Bos, RESERVED[1]));
    }

    // (sent, start, end, entity, mention index)
    let mut spans: Vec<(usize, usize, usize, usize, usize)> = doc
        .entities
        .iter()
        .enumerate()
        .flat_map(|(e, ent)| {
            ent.mentions
                .iter()
                .enumerate()
                .map(move |(mi, m)| (m.sent_id, m.start, m.end, e, mi))
        })
        .collect();
    // Opening order.
    spans.sort_by(|a, b| (a.0, a.1, std::cmp::Reverse(a.2), a.3, a.4).cmp(&(b.0, b.1, std::cmp::Reverse(b.2), b.3, b.4)));
    let rank: HashMap<(usize, usize), usize> = spans
        .iter()
        .enumerate()
        .map(|(r, s)| ((s.3, s.4), r))
        .collect();
    let mut starts_at: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
    let mut ends_at: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
    for &(sent, start, end, e, mi) in &spans {
        starts_at.entry((sent, start)).or_default().push((e, mi));
        ends_at.entry((sent, end)).or_default().push((e, mi));
    }
    for v in ends_at.values_mut() {
        v.sort_by_key(|k| std::cmp::Reverse(rank[k]));
    }

    for (si, sent) in doc.sentences.iter().enumerate() {
        let first = out.ids.len();
        for j in 0..=sent.len() {
            if let Some(closing) = ends_at.get(&(si, j)) {
                for _ in closing {
                    emit(&mut out, MARKER, TokenKind::Marker, RESERVED[3]);
                }
            }
            if j == sent.len() {
                break;
            }
            if let Some(opening) = starts_at.get(&(si, j)) {
                for &(e, _) in opening {
                    let pos = emit(&mut out, MARKER, TokenKind::Marker, RESERVED[3]);
                    out.mention_starts[e].push(pos);
                }
            }
            emit(&mut out, vocab.id(&sent[j]), TokenKind::Word, &sent[j]);
        }
        out.sentence_spans.push((first, out.ids.len() - 1));
    }
    if opts.bos_eos {
        out.eos = Some(emit(&mut out, EOS, TokenKind::Eos, RESERVED[2]));
    }
    for starts in &mut out.mention_starts {
        starts.sort_unstable();
    }
    out
}
