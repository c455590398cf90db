//! Seeded synthetic corpus for desk-scale runs: a small event KB, tagged
//! train/test queries, an extraction lexicon and replacement pools for the
//! mock generator.
//!
//! Every argument value is a made-up single token drawn without
//! replacement, so values never repeat across events or pools. Queries
//! mention only some of their event's arguments amid shared filler words.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IteratorRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::{EventQuery, Lexicon, Pos, Span};
use crate::formatting::NamedEntity;
use crate::kb::{KbEntry, KnowledgeBase, Label};
use crate::rng::{seeded, SeededRng};

struct EventKind {
    name: &'static str,
    roles: [&'static str; 4],
    verbs: &'static [&'static str],
    nouns: &'static [&'static str],
}

const KINDS: [EventKind; 3] = [
    EventKind {
        name: "Attack",
        roles: ["Attacker", "Target", "Place", "Time"],
        verbs: &["attacked", "raided", "stormed"],
        nouns: &["attack", "raid", "assault"],
    },
    EventKind {
        name: "Election",
        roles: ["Winner", "Loser", "Place", "Time"],
        verbs: &["defeated", "outpolled", "beat"],
        nouns: &["election", "vote", "ballot"],
    },
    EventKind {
        name: "Treaty",
        roles: ["Signer", "Partner", "Place", "Time"],
        verbs: &["joined", "bound", "allied"],
        nouns: &["treaty", "accord", "pact"],
    },
];

const FILLER: &[&str] = &[
    "reports", "said", "officials", "later", "many", "people", "that", "year", "news", "spread",
    "quickly", "across", "region", "while", "witnesses", "described", "scene", "after", "local",
    "papers", "noted", "long", "debate", "about", "causes", "historians", "still", "argue", "over",
    "details", "records", "show", "several", "days", "events", "followed", "soon", "observers",
    "recalled", "how", "crowds", "gathered", "morning", "evening", "letters", "mention", "great",
    "confusion", "among", "residents", "according", "accounts", "written", "decades", "some",
    "claimed", "others", "denied", "everything", "was", "different", "then", "most", "agree",
    "it", "changed", "much", "in", "the", "and", "of", "a", "on", "with", "for", "by", "at", "to",
];

const SYLLABLES: &[&str] = &[
    "ka", "ro", "mi", "te", "su", "va", "lo", "ne", "di", "ga", "pe", "zu", "ha", "bo", "ri", "sa",
    "tor", "len", "mar", "vik", "dun", "sel", "bra", "qui",
];

fn entity_type(role: &str) -> &'static str {
    match role {
        "Attacker" => "ORG",
        "Winner" | "Loser" => "PER",
        "Target" | "Signer" | "Partner" => "GPE",
        "Place" => "LOC",
        _ => "DATE",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub seed: u64,
    /// Events in the knowledge base.
    pub kb_events: usize,
    /// Extra events kept out of the knowledge base (out-of-KB test queries).
    pub held_out_events: usize,
    pub train_queries: usize,
    pub test_in_kb: usize,
    /// Replacement values per role for each mock-generator pool.
    pub pool_size: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            kb_events: 50,
            held_out_events: 10,
            train_queries: 200,
            test_in_kb: 40,
            pool_size: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEvent {
    pub id: String,
    pub event_type: String,
    /// `(role, value)` in role order.
    pub arguments: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyData {
    pub kb: KnowledgeBase,
    pub events: Vec<ToyEvent>,
    pub train: Vec<EventQuery>,
    /// In-KB queries first, then one NIL query per held-out event.
    pub test: Vec<EventQuery>,
    pub lexicon: Lexicon,
    /// Replacement values for generating training negatives.
    pub train_pools: BTreeMap<String, Vec<String>>,
    /// Disjoint replacement values for held-out negatives.
    pub test_pools: BTreeMap<String, Vec<String>>,
}

struct Names {
    used: BTreeSet<String>,
    years: Vec<u32>,
}

impl Names {
    fn new(rng: &mut SeededRng) -> Self {
        let mut years: Vec<u32> = (1500..2000).collect();
        years.shuffle(rng);
        Self {
            used: BTreeSet::new(),
            years,
        }
    }

    fn next(&mut self, role: &str, rng: &mut SeededRng) -> Result<String> {
        if role == "Time" {
            return self
                .years
                .pop()
                .map(|y| y.to_string())
                .ok_or_else(|| Error::Config("toy corpus ran out of years".into()));
        }
        for _ in 0..10_000 {
            let n = rng.gen_range(2..=3);
            let mut s: String = (0..n).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
            s[..1].make_ascii_uppercase();
            if !FILLER.contains(&s.to_lowercase().as_str()) && self.used.insert(s.clone()) {
                return Ok(s);
            }
        }
        Err(Error::Config("toy corpus ran out of names".into()))
    }
}

fn kind_of(event: &ToyEvent) -> &'static EventKind {
    KINDS.iter().find(|k| k.name == event.event_type).expect("known kind")
}

fn filler(rng: &mut SeededRng, lo: usize, hi: usize) -> Vec<String> {
    let n = rng.gen_range(lo..=hi);
    (0..n).map(|_| FILLER.choose(rng).expect("non-empty").to_string()).collect()
}

fn kb_entry(e: &ToyEvent, rng: &mut SeededRng) -> KbEntry {
    let k = kind_of(e);
    let v = |i: usize| e.arguments[i].1.as_str();
    let title = format!("{} {} of {}", v(2), k.nouns[0], v(3));
    let mut desc = vec![
        v(0).to_string(),
        k.verbs[0].to_string(),
        v(1).to_string(),
        "at".into(),
        v(2).to_string(),
        "in".into(),
        v(3).to_string(),
        ".".into(),
    ];
    desc.extend(filler(rng, 6, 10));
    KbEntry::new(e.id.clone(), title, desc.join(" "))
}

/// One query for `e`: a trigger and two to four of its arguments in a
/// random order, wrapped in filler.
fn query(e: &ToyEvent, id: String, gold: Label, rng: &mut SeededRng) -> Result<EventQuery> {
    let k = kind_of(e);
    let (pos, trigger) = if rng.gen_bool(0.5) {
        (Pos::Verb, *k.verbs.choose(rng).expect("non-empty"))
    } else {
        (Pos::Noun, *k.nouns.choose(rng).expect("non-empty"))
    };
    let n_args = rng.gen_range(2..=4);
    let mut picked: Vec<usize> = (0..4).choose_multiple(rng, n_args);
    picked.shuffle(rng);
    let split = rng.gen_range(0..=picked.len());

    let mut tokens = filler(rng, 1, 4);
    let mut entities = Vec::new();
    let mut push_arg = |tokens: &mut Vec<String>, i: usize, rng: &mut SeededRng| {
        if rng.gen_bool(0.5) {
            tokens.push(FILLER.choose(rng).expect("non-empty").to_string());
        }
        let (role, value) = &e.arguments[i];
        entities.push(NamedEntity::new(tokens.len(), tokens.len(), entity_type(role)));
        tokens.push(value.clone());
    };
    for &i in &picked[..split] {
        push_arg(&mut tokens, i, rng);
    }
    let at = tokens.len();
    tokens.push(trigger.to_string());
    for &i in &picked[split..] {
        push_arg(&mut tokens, i, rng);
    }
    tokens.extend(filler(rng, 1, 4));
    let mut q = EventQuery::new(id, tokens, Span::single(at), pos, gold)?;
    q.entities = entities;
    Ok(q)
}

/// Builds the toy corpus; identical for identical configs.
pub fn generate_toy(cfg: &ToyConfig) -> Result<ToyData> {
    if cfg.kb_events == 0 || cfg.train_queries == 0 {
        return Err(Error::Config("toy corpus needs events and training queries".into()));
    }
    let mut rng = seeded(cfg.seed);
    let mut names = Names::new(&mut rng);
    let total = cfg.kb_events + cfg.held_out_events;
    let mut events = Vec::with_capacity(total);
    for i in 0..total {
        let k = &KINDS[i % KINDS.len()];
        let arguments = k
            .roles
            .iter()
            .map(|r| Ok((r.to_string(), names.next(r, &mut rng)?)))
            .collect::<Result<_>>()?;
        events.push(ToyEvent {
            id: format!("EV{:03}", i + 1),
            event_type: k.name.to_string(),
            arguments,
        });
    }
    let kb = KnowledgeBase::from_entries(
        events[..cfg.kb_events].iter().map(|e| kb_entry(e, &mut rng)).collect(),
    )?;

    let mut train = Vec::with_capacity(cfg.train_queries);
    for i in 0..cfg.train_queries {
        let e = &events[i % cfg.kb_events];
        train.push(query(e, format!("train{:04}", i + 1), Label::entry(e.id.clone()), &mut rng)?);
    }
    let mut test = Vec::new();
    for i in 0..cfg.test_in_kb {
        let e = &events[(i * 7 + 3) % cfg.kb_events];
        test.push(query(e, format!("test{:04}", i + 1), Label::entry(e.id.clone()), &mut rng)?);
    }
    for (j, e) in events[cfg.kb_events..].iter().enumerate() {
        test.push(query(e, format!("test{:04}", cfg.test_in_kb + j + 1), Label::Nil, &mut rng)?);
    }

    let mut lexicon = Lexicon::default();
    for k in &KINDS {
        for t in k.verbs.iter().chain(k.nouns) {
            lexicon = lexicon.with_trigger(t, k.name);
        }
    }
    for e in &events {
        for (role, value) in &e.arguments {
            lexicon = lexicon.with_role(value, role);
        }
    }
    let roles: BTreeSet<&str> = KINDS.iter().flat_map(|k| k.roles).collect();
    let mut pools = |lexicon: &mut Lexicon| -> Result<BTreeMap<String, Vec<String>>> {
        let mut out = BTreeMap::new();
        for &role in &roles {
            let values = (0..cfg.pool_size)
                .map(|_| names.next(role, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            for v in &values {
                lexicon.roles.insert(v.clone(), role.to_string());
            }
            out.insert(role.to_string(), values);
        }
        Ok(out)
    };
    let train_pools = pools(&mut lexicon)?;
    let test_pools = pools(&mut lexicon)?;
    Ok(ToyData {
        kb,
        events,
        train,
        test,
        lexicon,
        train_pools,
        test_pools,
    })
}
