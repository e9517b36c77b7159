//! Demo data: the fixture pack plus a small synthetic corpus with two annotators.

use flipfeed_core::domain::{FeedbackInstance, RubricLabels, Slug, Source, Strategy};
use flipfeed_core::harness::Harness;
use flipfeed_core::pack::{ingest_problem_pack, PackError, ValidatedPack, FIXTURE_PACK};
use flipfeed_core::store::{Store, StoreError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ops::{self, OpsError};

/// Word counts of the synthetic student corpus; five of them fall inside 5..=200.
pub const DEMO_WORD_COUNTS: [usize; 10] = [1, 4, 5, 50, 100, 150, 200, 201, 250, 295];
pub const DEMO_ANNOTATORS: [&str; 2] = ["expert-a", "expert-b"];
pub const DEMO_MODEL: &str = "demo-model";

const VOCABULARY: &[&str] = &[
    "check", "the", "loop", "index", "and", "what", "you", "add", "to", "sum", "each", "value", "in", "array",
    "compare", "with", "zero", "before", "counting", "it", "look", "at", "line", "where", "variable", "changes",
];

#[derive(Debug)]
pub enum DemoError {
    Pack(PackError),
    Store(StoreError),
    Ops(OpsError),
}

impl std::fmt::Display for DemoError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DemoError::Pack(e) => write!(f, "fixture pack: {e}"),
            DemoError::Store(e) => e.fmt(f),
            DemoError::Ops(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for DemoError {}

/// Deterministic text of exactly `n` words, with a sentence break every 12 words.
pub fn synthetic_text(n: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for i in 0..n {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(VOCABULARY[rng.random_range(0..VOCABULARY.len())]);
        if (i + 1) % 12 == 0 || i + 1 == n {
            out.push('.');
        }
    }
    out
}

pub fn synthetic_corpus(pack: &ValidatedPack) -> Vec<FeedbackInstance> {
    let mut out = Vec::new();
    for (i, &n) in DEMO_WORD_COUNTS.iter().enumerate() {
        let problem = &pack.problems[i % pack.problems.len()];
        let programs: Vec<&Slug> = pack.programs_for(problem.id.as_str()).map(|p| &p.id).collect();
        out.push(FeedbackInstance {
            id: format!("demo-{i:02}"),
            problem_id: problem.id.clone(),
            buggy_program_id: programs[(i / pack.problems.len()) % programs.len()].clone(),
            source: Source::Student,
            session_id: Some(format!("demo-session-{i:02}")),
            model_name: None,
            strategy: None,
            text: synthetic_text(n, i as u64),
            understanding: Some(i % 2 == 0),
        });
    }
    for (i, problem) in pack.problems.iter().enumerate() {
        let program = pack.programs_for(problem.id.as_str()).next().expect("validated packs have programs");
        for strategy in [Strategy::Basic, Strategy::Engineered] {
            out.push(FeedbackInstance {
                id: format!("demo-{DEMO_MODEL}-{}-{}", strategy.as_str(), program.id),
                problem_id: problem.id.clone(),
                buggy_program_id: program.id.clone(),
                source: Source::Model,
                session_id: None,
                model_name: Some(DEMO_MODEL.into()),
                strategy: Some(strategy),
                text: synthetic_text(20 + 5 * i, 100 + i as u64),
                understanding: None,
            });
        }
    }
    out
}

fn labels(rng: &mut ChaCha8Rng) -> RubricLabels {
    RubricLabels {
        correct: rng.random_bool(0.75),
        gives_fix: rng.random_bool(0.5),
        mentions_variables: rng.random_bool(0.4),
        mentions_lines: rng.random_bool(0.15),
    }
}

fn perturb(l: RubricLabels, rng: &mut ChaCha8Rng) -> RubricLabels {
    let mut flip = |x: bool| if rng.random_bool(0.1) { !x } else { x };
    RubricLabels {
        correct: flip(l.correct),
        gives_fix: flip(l.gives_fix),
        mentions_variables: flip(l.mentions_variables),
        mentions_lines: flip(l.mentions_lines),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemoSummary {
    pub pack_id: String,
    pub feedback: usize,
    pub annotations: usize,
}

/// Ingests the fixture pack and writes the demo corpus. Safe to run twice.
pub fn seed_demo(store: &Store, harness: &Harness) -> Result<DemoSummary, DemoError> {
    let pack = ingest_problem_pack(FIXTURE_PACK, harness).map_err(DemoError::Pack)?;
    store.put_pack(&pack).map_err(DemoError::Store)?;
    let corpus = synthetic_corpus(&pack);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut annotations = 0;
    for f in &corpus {
        store.put_feedback(&pack, f).map_err(DemoError::Store)?;
        let a = labels(&mut rng);
        let b = perturb(a, &mut rng);
        for (who, l) in DEMO_ANNOTATORS.iter().zip([a, b]) {
            ops::record_annotation(store, &f.id, who, l, true).map_err(DemoError::Ops)?;
            annotations += 1;
        }
    }
    Ok(DemoSummary { pack_id: pack.id.to_string(), feedback: corpus.len(), annotations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use flipfeed_core::rubric::count_words;

    #[test]
    fn synthetic_text_has_exact_word_counts() {
        for n in DEMO_WORD_COUNTS {
            assert_eq!(count_words(&synthetic_text(n, 3)), n);
        }
        assert_eq!(synthetic_text(5, 1), synthetic_text(5, 1));
    }
}
