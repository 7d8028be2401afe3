//! Template grammar `the <noun> was [not] [very] <adj>` with a deterministic
//! five-class label, used as a small compositional benchmark.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainingUnit;

pub const NOUNS: [&str; 20] = [
    "movie",
    "film",
    "plot",
    "script",
    "cast",
    "story",
    "ending",
    "score",
    "acting",
    "dialogue",
    "pacing",
    "director",
    "sequel",
    "premise",
    "soundtrack",
    "camera",
    "villain",
    "hero",
    "finale",
    "editing",
];

/// Nouns per split; the two noun pools never overlap.
pub const TRAIN_NOUNS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub negated: bool,
    pub intensified: bool,
    pub positive: bool,
}

impl Template {
    pub fn all() -> [Template; 8] {
        let mut out = [Template {
            negated: false,
            intensified: false,
            positive: false,
        }; 8];
        for (i, t) in out.iter_mut().enumerate() {
            t.negated = i & 4 != 0;
            t.intensified = i & 2 != 0;
            t.positive = i & 1 != 0;
        }
        out
    }

    /// `good` 3, `very good` 4, `bad` 1, `very bad` 0; `not` maps `c` to `4 - c`.
    pub fn label(self) -> u8 {
        let base = match (self.positive, self.intensified) {
            (true, true) => 4,
            (true, false) => 3,
            (false, false) => 1,
            (false, true) => 0,
        };
        if self.negated {
            4 - base
        } else {
            base
        }
    }

    pub fn sentence(self, noun: &str) -> Vec<String> {
        let mut words = vec!["the", noun, "was"];
        if self.negated {
            words.push("not");
        }
        if self.intensified {
            words.push("very");
        }
        words.push(if self.positive { "good" } else { "bad" });
        words.into_iter().map(str::to_string).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<TrainingUnit>,
    pub test: Vec<TrainingUnit>,
    pub train_nouns: Vec<String>,
    pub test_nouns: Vec<String>,
}

impl SyntheticCorpus {
    pub fn all_units(&self) -> impl Iterator<Item = &TrainingUnit> {
        self.train.iter().chain(&self.test)
    }
}

fn split(count: usize, nouns: &[&str], rng: &mut ChaCha8Rng) -> Vec<TrainingUnit> {
    let templates = Template::all();
    let mut order: Vec<Template> = (0..count).map(|i| templates[i % templates.len()]).collect();
    order.shuffle(rng);
    order
        .into_iter()
        .map(|t| {
            let noun = nouns.choose(rng).expect("nonempty noun pool");
            TrainingUnit {
                tokens: t.sentence(noun),
                label: t.label(),
                is_full_sentence: true,
            }
        })
        .collect()
}

/// `size` sentences split 80/20 into train and test, each split cycling
/// through all eight templates so the four occurring labels stay balanced.
/// Panics if `size < 10`.
pub fn generate_synthetic_corpus(size: usize, seed: u64) -> SyntheticCorpus {
    assert!(size >= 10, "synthetic corpus needs at least 10 sentences");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nouns = NOUNS.to_vec();
    nouns.shuffle(&mut rng);
    let (train_nouns, test_nouns) = nouns.split_at(TRAIN_NOUNS);
    let test_count = size / 5;
    let train = split(size - test_count, train_nouns, &mut rng);
    let test = split(test_count, test_nouns, &mut rng);
    SyntheticCorpus {
        train,
        test,
        train_nouns: train_nouns.iter().map(|s| s.to_string()).collect(),
        test_nouns: test_nouns.iter().map(|s| s.to_string()).collect(),
    }
}
