//! Synthetic DocRED-shaped corpora.
//!
//! Each relation has a keyword token and a (head type, tail type)
//! signature. A planted triple `(s, r, o)` is expressed by one evidence
//! sentence holding a mention of `s`, a mention of `o` and the keyword of
//! `r`; occasionally the triple is restated in a second evidence sentence.
//! Every other sentence is a distractor holding at most
//! `distractor_entities` entities and, when it holds fewer than two, maybe
//! a keyword, so no non-evidence sentence ever states a relation.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Document, Entity, Mention, RelationId, RelationInstance, RelationSchema};
use crate::numerics::{seeded_rng, Rng};

const TYPE_NAMES: [&str; 6] = ["PER", "ORG", "LOC", "TIME", "MISC", "NUM"];
/// Title-like word opening every mention of a type, the way "Mr." or "Inc."
/// signal entity types in real text.
const TYPE_CUES: [&str; 6] = ["mr", "corp", "city", "year", "item", "number"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub train_docs: usize,
    pub dev_docs: usize,
    pub distant_docs: usize,
    pub num_relations: usize,
    pub num_entity_types: usize,
    pub names_per_type: usize,
    pub filler_words: usize,
    pub sentences_per_doc: (usize, usize),
    pub entities_per_doc: (usize, usize),
    pub relations_per_doc: (usize, usize),
    pub fillers_per_sentence: (usize, usize),
    /// Probability that a planted triple gets a second evidence sentence.
    pub double_evidence_prob: f64,
    /// Entity capacity of a distractor sentence (1 or 2).
    pub distractor_entities: usize,
    /// Probability that a distractor with room gets a stray keyword.
    pub distractor_keyword_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train_docs: 200,
            dev_docs: 50,
            distant_docs: 400,
            num_relations: 5,
            num_entity_types: 3,
            names_per_type: 25,
            filler_words: 60,
            sentences_per_doc: (5, 7),
            entities_per_doc: (3, 5),
            relations_per_doc: (3, 3),
            fillers_per_sentence: (3, 6),
            double_evidence_prob: 0.15,
            distractor_entities: 1,
            distractor_keyword_prob: 0.2,
        }
    }
}

impl SynthConfig {
    fn check(&self) -> Result<(), CorpusError> {
        let err = |m: String| Err(CorpusError::Config(m));
        let ranges = [
            ("sentences_per_doc", self.sentences_per_doc),
            ("entities_per_doc", self.entities_per_doc),
            ("relations_per_doc", self.relations_per_doc),
            ("fillers_per_sentence", self.fillers_per_sentence),
        ];
        for (name, (lo, hi)) in ranges {
            if lo > hi {
                return err(format!("{name}: min {lo} exceeds max {hi}"));
            }
        }
        if self.sentences_per_doc.0 == 0 {
            return err("documents need at least one sentence".into());
        }
        if self.num_relations == 0 {
            return err("at least one relation required".into());
        }
        if !(2..=TYPE_NAMES.len()).contains(&self.num_entity_types) {
            return err(format!("num_entity_types must be in 2..={}", TYPE_NAMES.len()));
        }
        if self.filler_words == 0 {
            return err("filler_words must be positive".into());
        }
        if !(1..=2).contains(&self.distractor_entities) {
            return err("distractor_entities must be 1 or 2".into());
        }
        if self.entities_per_doc.1 > self.distractor_entities * self.sentences_per_doc.0 {
            return err(format!(
                "{} entities do not fit in {} sentences",
                self.entities_per_doc.1, self.sentences_per_doc.0
            ));
        }
        if self.entities_per_doc.1 > self.names_per_type {
            return err("names_per_type must cover entities_per_doc".into());
        }
        if self.relations_per_doc.1 > self.sentences_per_doc.0 {
            return err("relations_per_doc exceeds the sentence budget".into());
        }
        if !(0.0..=1.0).contains(&self.double_evidence_prob) {
            return err("double_evidence_prob must be a probability".into());
        }
        if !(0.0..=1.0).contains(&self.distractor_keyword_prob) {
            return err("distractor_keyword_prob must be a probability".into());
        }
        Ok(())
    }

    fn signature(&self, r: usize) -> (usize, usize) {
        let pairs: Vec<(usize, usize)> = (0..self.num_entity_types)
            .flat_map(|a| (a + 1..self.num_entity_types).map(move |b| (a, b)))
            .collect();
        pairs[r % pairs.len()]
    }

    fn keyword(r: usize) -> String {
        format!("kw{}", r + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpora {
    pub schema: RelationSchema,
    pub train: Corpus,
    pub dev: Corpus,
    pub distant: Corpus,
}

pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<SynthCorpora, CorpusError> {
    cfg.check()?;
    let schema = RelationSchema::new((1..=cfg.num_relations).map(|r| format!("rel{r}")))?;
    let split = |name: &str, n: usize, salt: u64, keep_evidence: bool| -> Corpus {
        let mut rng = seeded_rng(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(salt));
        let docs = (0..n)
            .map(|i| {
                let mut d = generate_doc(cfg, &mut rng, format!("{name}_{i:04}"));
                if !keep_evidence {
                    d.labels.iter_mut().for_each(|l| l.evidence.clear());
                }
                d
            })
            .collect();
        Corpus::new(docs)
    };
    let train = split("train", cfg.train_docs, 1, true);
    let dev = split("dev", cfg.dev_docs, 2, true);
    let distant = split("distant", cfg.distant_docs, 3, false);
    Ok(SynthCorpora {
        schema,
        train,
        dev,
        distant,
    })
}

enum Item {
    Entity(usize),
    Keyword(usize),
}

fn generate_doc(cfg: &SynthConfig, rng: &mut Rng, doc_id: String) -> Document {
    let n_sent = rng.gen_range(cfg.sentences_per_doc.0..=cfg.sentences_per_doc.1);
    let n_ent = rng.gen_range(cfg.entities_per_doc.0..=cfg.entities_per_doc.1);
    let cap = cfg.distractor_entities;
    let types: Vec<usize> = (0..n_ent).map(|_| rng.gen_range(0..cfg.num_entity_types)).collect();

    let mut used_names: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); cfg.num_entity_types];
    let names: Vec<String> = types
        .iter()
        .map(|&t| loop {
            let k = rng.gen_range(0..cfg.names_per_type);
            if used_names[t].insert(k) {
                break format!("{}{k}", TYPE_NAMES[t].to_lowercase());
            }
        })
        .collect();

    // Candidate triples, at most one relation per unordered pair.
    let mut candidates: Vec<(usize, usize, usize)> = Vec::new();
    for s in 0..n_ent {
        for o in 0..n_ent {
            if s == o {
                continue;
            }
            for r in 0..cfg.num_relations {
                if cfg.signature(r) == (types[s], types[o]) {
                    candidates.push((s, o, r));
                }
            }
        }
    }
    candidates.shuffle(rng);
    let want = rng.gen_range(cfg.relations_per_doc.0..=cfg.relations_per_doc.1);
    let mut pairs_used = BTreeSet::new();
    let mut in_triples = BTreeSet::new();
    let mut triples = Vec::new();
    for (s, o, r) in candidates {
        if triples.len() == want {
            break;
        }
        if pairs_used.contains(&(s.min(o), s.max(o))) {
            continue;
        }
        // Entities left for the distractors must still fit.
        let covered = in_triples.len() + usize::from(!in_triples.contains(&s)) + usize::from(!in_triples.contains(&o));
        if n_ent - covered > cap * (n_sent - triples.len() - 1) {
            continue;
        }
        pairs_used.insert((s.min(o), s.max(o)));
        in_triples.insert(s);
        in_triples.insert(o);
        triples.push((s, o, r));
    }

    // Sentence roles.
    let mut order: Vec<usize> = (0..n_sent).collect();
    order.shuffle(rng);
    let mut free = order.into_iter();
    let mut role: Vec<Option<usize>> = vec![None; n_sent];
    let mut evidence: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); triples.len()];
    for (ti, ev) in evidence.iter_mut().enumerate() {
        let si = free.next().expect("relations_per_doc <= sentences");
        role[si] = Some(ti);
        ev.insert(si);
    }
    let mut distractors: Vec<usize> = free.collect();
    // Entities that still need a mention after the evidence sentences.
    let mut mentioned = vec![false; n_ent];
    for &(s, o, _) in &triples {
        mentioned[s] = true;
        mentioned[o] = true;
    }
    let unmentioned: Vec<usize> = (0..n_ent).filter(|&e| !mentioned[e]).collect();
    // Restating a triple consumes a distractor; keep room for the unmentioned.
    for ti in 0..triples.len() {
        if !distractors.is_empty()
            && cap * (distractors.len() - 1) >= unmentioned.len()
            && rng.gen_bool(cfg.double_evidence_prob)
        {
            let si = distractors.pop().expect("checked non-empty");
            role[si] = Some(ti);
            evidence[ti].insert(si);
        }
    }

    let mut contents: Vec<Vec<Item>> = (0..n_sent).map(|_| Vec::new()).collect();
    for (si, r) in role.iter().enumerate() {
        if let Some(ti) = *r {
            let (s, o, rel) = triples[ti];
            contents[si] = vec![Item::Entity(s), Item::Keyword(rel), Item::Entity(o)];
        }
    }
    distractors.sort_unstable();
    let mut slots: Vec<usize> = Vec::new();
    for &si in &distractors {
        slots.extend(std::iter::repeat(si).take(cap));
    }
    slots.shuffle(rng);
    for (e, si) in unmentioned.iter().zip(slots) {
        contents[si].push(Item::Entity(*e));
    }
    for &si in &distractors {
        // Extra mentions give entities several occurrences.
        while contents[si].len() < cap && rng.gen_bool(0.5) {
            let e = rng.gen_range(0..n_ent);
            if !contents[si].iter().any(|it| matches!(it, Item::Entity(x) if *x == e)) {
                contents[si].push(Item::Entity(e));
            }
        }
        if contents[si].len() < 2 && rng.gen_bool(cfg.distractor_keyword_prob) {
            contents[si].push(Item::Keyword(rng.gen_range(0..cfg.num_relations)));
        }
    }

    let mut entities: Vec<Entity> = types
        .iter()
        .map(|&t| Entity {
            mentions: Vec::new(),
            type_tag: TYPE_NAMES[t].to_string(),
        })
        .collect();
    let mut sentences = Vec::with_capacity(n_sent);
    for (si, mut items) in contents.into_iter().enumerate() {
        items.shuffle(rng);
        let n_fill = rng.gen_range(cfg.fillers_per_sentence.0..=cfg.fillers_per_sentence.1);
        let mut slots: Vec<Option<Item>> = items.into_iter().map(Some).collect();
        for _ in 0..n_fill {
            let at = rng.gen_range(0..=slots.len());
            slots.insert(at, None);
        }
        let mut words = Vec::with_capacity(slots.len() + 1);
        for slot in slots {
            match slot {
                None => words.push(format!("w{}", rng.gen_range(0..cfg.filler_words))),
                Some(Item::Keyword(r)) => words.push(SynthConfig::keyword(r)),
                Some(Item::Entity(e)) => {
                    let cue = TYPE_CUES[types[e]];
                    entities[e].mentions.push(Mention {
                        sent_id: si,
                        start: words.len(),
                        end: words.len() + 2,
                        surface: format!("{cue} {}", names[e]),
                    });
                    words.push(cue.to_string());
                    words.push(names[e].clone());
                }
            }
        }
        words.push(".".to_string());
        sentences.push(words);
    }

    let labels = triples
        .iter()
        .zip(evidence)
        .map(|(&(s, o, r), ev)| RelationInstance {
            head: s,
            tail: o,
            relation: RelationId(r + 1),
            evidence: ev,
        })
        .collect();
    Document {
        doc_id,
        sentences,
        entities,
        labels,
    }
}
