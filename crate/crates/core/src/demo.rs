//! Bundled synthetic news-flavored corpus for demos, tests, and the
//! acceptance suite. Generation is a pure function of (doc count, seed):
//! each document mixes shared topic vocabulary with a pair of coined
//! entity names that make it identifiable, plus author/source/category
//! metadata for constraint queries.

use std::collections::BTreeMap;

use rand::prelude::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::corpus::DocRecord;

const TOPICS: [(&str, [&str; 6]); 8] = [
    ("markets", ["traders", "shares", "prices", "bonds", "index", "futures"]),
    ("harbors", ["vessels", "cargo", "docks", "tides", "freight", "anchors"]),
    ("orchards", ["growers", "apples", "blooms", "crops", "cider", "groves"]),
    ("rails", ["engines", "tracks", "depots", "signals", "cars", "fares"]),
    ("skies", ["scopes", "comets", "orbits", "flares", "charts", "domes"]),
    ("museums", ["halls", "fossils", "relics", "plaques", "busts", "crates"]),
    ("fishing", ["boats", "salmon", "nets", "quotas", "tides", "piers"]),
    ("cellars", ["grapes", "barrels", "presses", "casks", "corks", "racks"]),
];

const VERBS: [&str; 12] = [
    "tracked", "weighed", "graded", "mapped", "listed", "probed", "framed", "tallied",
    "audited", "revised", "counted", "scored",
];

const ADJECTIVES: [&str; 10] = [
    "steady", "sudden", "record", "modest", "narrow", "broad", "early", "brisk",
    "quiet", "sharp",
];

const PLACES: [&str; 10] = [
    "Carrow", "Lunden", "Veldham", "Oakdale", "Brinmor", "千畳", "Salford", "Estley",
    "Marden", "Wickbay",
];

const AUTHORS: [&str; 10] = [
    "Ada Linwood", "Bram Okafor", "Caro Vance", "Dove Marek", "Edan Ruiz", "Fenna Holt",
    "Gil Navarro", "Hana Brook", "Ivo Castell", "Juno Ferris",
];

const SOURCES: [&str; 6] = [
    "Harborline", "The Ledger", "Northwire", "Daily Orbit", "Fieldpost", "Yardbarker",
];

const ENTITY_HEADS: [&str; 24] = [
    "vel", "dar", "mor", "zan", "kel", "tor", "fen", "gal", "rish", "bel", "quil", "nav",
    "sol", "pim", "vor", "jas", "lum", "crag", "dru", "wex", "tam", "osk", "yev", "hol",
];

const ENTITY_TAILS: [&str; 25] = [
    "korin", "nique", "mandel", "thorpe", "バル", "grano", "micka", "lussa", "verno", "datto",
    "rillo", "quent", "fosse", "bruno", "stell", "maric", "donne", "pellu", "ganto", "wisse",
    "parda", "nellis", "covan", "murto", "zetti",
];

/// Generate `n_docs` synthetic documents. Entity names are assigned
/// without repetition while the pool lasts, so identifiers stay apart.
pub fn demo_corpus(n_docs: usize, seed: u64) -> Vec<DocRecord> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut entities: Vec<String> = ENTITY_HEADS
        .iter()
        .flat_map(|h| ENTITY_TAILS.iter().map(move |t| format!("{h}{t}")))
        .collect();
    use rand::seq::SliceRandom;
    entities.shuffle(&mut rng);

    let mut docs = Vec::with_capacity(n_docs);
    for i in 0..n_docs {
        let (topic, nouns) = TOPICS[rng.random_range(0..TOPICS.len())];
        let e1 = entities[(2 * i) % entities.len()].clone();
        let e2 = entities[(2 * i + 1) % entities.len()].clone();
        let author = *AUTHORS.choose(&mut rng).unwrap();
        let source = *SOURCES.choose(&mut rng).unwrap();
        let place = *PLACES.choose(&mut rng).unwrap();

        let mut sentences = Vec::new();
        sentences.push(format!(
            "The {e1} {topic} review and the {e2} audit covered {place} this week."
        ));
        let n_body = rng.random_range(3..=4);
        for _ in 0..n_body {
            let noun_a = nouns.choose(&mut rng).unwrap();
            let noun_b = nouns.choose(&mut rng).unwrap();
            let verb = VERBS.choose(&mut rng).unwrap();
            let adj = ADJECTIVES.choose(&mut rng).unwrap();
            match rng.random_range(0..4) {
                0 => sentences.push(format!(
                    "The {e1} team {verb} how {noun_a} and {noun_b} moved."
                )),
                1 => sentences.push(format!(
                    "Field notes on {noun_a} {verb} the {adj} drift around {e2}."
                )),
                2 => sentences.push(format!(
                    "Under the {place} charter the {e1} unit {verb} {noun_b} totals."
                )),
                _ => sentences.push(format!(
                    "Local {noun_a} {verb} a {adj} shift near the {place} {topic}."
                )),
            }
        }
        sentences.push(format!(
            "A closing note credits the {e2} ledger with the {topic} figures."
        ));

        let metadata = BTreeMap::from([
            ("author".to_string(), author.to_string()),
            ("source".to_string(), source.to_string()),
            ("category".to_string(), topic.to_string()),
        ]);
        docs.push(DocRecord {
            doc_key: format!("doc-{i:04}"),
            text: sentences.join(" "),
            metadata,
        });
    }
    docs
}
