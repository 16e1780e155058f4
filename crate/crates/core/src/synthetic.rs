//! Seeded synthetic review data with noisy auxiliary targets.
//!
//! Every sentence holds one polarity indicator plus a target and filler
//! words. Explicit sentences use a lexicon opinion word; implicit ones use a
//! class cue word that no lexicon lists. The auxiliary aspect target is the
//! target's category and the opinion target is a copy of the indicator.
//! With probability `noise_rate` both are replaced, the opinion by an
//! indicator of a wrong class, and the confidences drop to the bottom of the
//! clipped range.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{AugmentedInstance, Dataset, Entry, Instance, Polarity};

const EXPLICIT: [&[&str]; 3] = [
    &["great", "delicious", "friendly", "wonderful", "tasty"],
    &["awful", "rude", "bland", "terrible", "stale"],
    &["fine", "clean", "cheap", "fast", "fresh"],
];

const CUES: [&[&str]; 3] = [
    &["returned", "recommended", "lingered", "refilled", "celebrated", "savored", "applauded", "booked"],
    &["waited", "refunded", "overcharged", "ignored", "complained", "spilled", "burnt", "soggy"],
    &["ordered", "arrived", "sat", "visited", "paid", "parked", "walked", "asked"],
];

const TARGETS: &[(&str, &str)] = &[
    ("pasta", "food"),
    ("pizza", "food"),
    ("sushi", "food"),
    ("staff", "service"),
    ("waiter", "service"),
    ("wine", "drinks"),
    ("coffee", "drinks"),
    ("music", "ambience"),
    ("terrace", "ambience"),
    ("bill", "price"),
];

const CATEGORIES: &[&str] = &["food", "service", "drinks", "ambience", "price"];

const FILLER: &[&str] = &[
    "the", "a", "we", "our", "it", "was", "were", "and", "this", "that", "place", "there", "again",
    "then", "with", "for", "at", "on", "today", "night",
];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub implicit_rate: f64,
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 200,
            n_test: 100,
            implicit_rate: 0.5,
            noise_rate: 0.3,
            seed: 7,
        }
    }
}

pub struct SynthData {
    pub train: Dataset,
    pub test: Dataset,
}

fn instance(rng: &mut ChaCha8Rng, id: String, config: &SynthConfig) -> AugmentedInstance {
    let k = rng.random_range(0..3);
    let polarity = Polarity::ALL[k];
    let &(target, category) = TARGETS.choose(rng).unwrap();
    let implicit = rng.random_bool(config.implicit_rate);
    let indicator = if implicit { CUES[k] } else { EXPLICIT[k] }.choose(rng).unwrap();

    let mut words = vec![target, *indicator];
    let fillers = rng.random_range(2..=4);
    words.extend(FILLER.choose_multiple(rng, fillers));
    words.shuffle(rng);

    let noisy = rng.random_bool(config.noise_rate);
    let (aspect, opinion, aspect_confidence, opinion_confidence) = if noisy {
        let wrong = (k + rng.random_range(1..3)) % 3;
        let pool = if implicit { CUES[wrong] } else { EXPLICIT[wrong] };
        let other = CATEGORIES.iter().filter(|c| **c != category).collect::<Vec<_>>();
        (
            **other.choose(rng).unwrap(),
            *pool.choose(rng).unwrap(),
            rng.random_range(0.5..0.65),
            rng.random_range(0.5..0.65),
        )
    } else {
        (
            category,
            *indicator,
            rng.random_range(0.8..=1.0),
            rng.random_range(0.8..=1.0),
        )
    };
    AugmentedInstance {
        base: Instance {
            id,
            sentence: words.join(" "),
            target: target.to_string(),
            polarity,
            implicit,
        },
        aspect: aspect.to_string(),
        aspect_confidence,
        opinion: opinion.to_string(),
        opinion_confidence,
        refine_epochs_used: 1,
        consensus_reached: !noisy,
    }
}

/// Train and test splits drawn from one seeded stream.
pub fn generate(config: &SynthConfig) -> SynthData {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut split = |name: &str, n: usize| {
        let entries: Vec<Entry> = (0..n)
            .map(|i| instance(&mut rng, format!("{name}-{i:04}"), config).into())
            .collect();
        Dataset::new(name, entries).expect("generated ids are unique")
    };
    let train = split("train", config.n_train);
    let test = split("test", config.n_test);
    SynthData { train, test }
}

/// Words that mark polarity, for checks against the lexicon heuristic.
pub fn indicator_words() -> impl Iterator<Item = (Polarity, &'static str, bool)> {
    (0..3).flat_map(|k| {
        EXPLICIT[k]
            .iter()
            .map(move |w| (Polarity::ALL[k], *w, false))
            .chain(CUES[k].iter().map(move |w| (Polarity::ALL[k], *w, true)))
    })
}
