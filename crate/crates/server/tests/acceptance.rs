//! Acceptance suite. Run with `cargo test -p flipfeed-server --test acceptance`.
//! Prints one PASS/FAIL line per criterion and exits non-zero if any fail.

mod common;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitCode, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{correct_claim, fixture_pack, harness, start_server, STAFF};
use flipfeed_core::dataset::{
    build_finetune_dataset, export_records, filter_by_length, render_prompt, unwrap_completion, wrap_completion,
    ExportOptions, PromptStrategy, Scenario,
};
use flipfeed_core::domain::{
    FeedbackInstance, PrefeedbackSubmission, ReasonCode, RubricAnnotation, RubricLabels, Slug, Source, Strategy,
};
use flipfeed_core::harness::{validate_prefeedback, Harness, HarnessConfig};
use flipfeed_core::pack::FIXTURE_PACK;
use flipfeed_core::rubric::{
    aggregate, cohens_kappa, count_sentences, count_words, group_specs, round_1dp, AgreementBand, GroupBy,
};
use flipfeed_core::store::{EntityKind, Store};
use flipfeed_core::taskflow::TaskFlow;
use flipfeed_genai::mock::{MockReply, MockServer};
use flipfeed_genai::{batch_generate, BatchOptions, CellStatus, EndpointConfig, EndpointKind, GenAiClient};
use flipfeed_server::auth::{STAFF_TOKEN_ENV, TOKEN_SECRET_ENV};
use flipfeed_server::demo::synthetic_corpus;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reqwest::Client;
use serde_json::{json, Value};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(start: Instant, limit: Duration) -> Result<Duration, String> {
    let took = start.elapsed();
    if took < limit {
        Ok(took)
    } else {
        Err(format!("took {took:?}, limit {limit:?}"))
    }
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap()
}

// ---------------------------------------------------------------- metrics

const SAMPLE_FEEDBACK: &str = "The program needs to output the sum of all the positive values.\nThis program is outputting the sum of all of the indexes of the values.\nTo fix it make sure you add the values not the index i.";

fn oracle_words(text: &str) -> usize {
    let mut n = 0;
    let mut in_word = false;
    for c in text.chars() {
        if c.is_whitespace() {
            in_word = false;
        } else if !in_word {
            in_word = true;
            n += 1;
        }
    }
    n
}

fn oracle_sentences(text: &str) -> usize {
    let mut n = 0;
    let mut has_content = false;
    for c in text.chars() {
        if matches!(c, '.' | '!' | '?' | '\n') {
            if has_content {
                n += 1;
            }
            has_content = false;
        } else if !c.is_whitespace() {
            has_content = true;
        }
    }
    n + usize::from(has_content)
}

fn metric_texts() -> Vec<String> {
    let fixed = [
        SAMPLE_FEEDBACK,
        "",
        "   ",
        "\n\n",
        "Fix it.",
        "Fix it",
        "Wait... what?!",
        "one two  three\tfour\nfive",
        "Line one\nline two\n",
        "a.b.c",
        "Use values[i] instead of i.",
        "Is the loop right? Check the bound!",
        "  leading and trailing  ",
        "x = y + 1; // hmm.",
        "Non\u{00a0}breaking space here.",
        "Unicode: naïve café résumé.",
        ".!?",
        "Check line 5.\n\nThen line 7.",
        "sum += values[i];\nnot sum += i;",
        "Hint: compare >= with >.",
    ];
    let mut out: Vec<String> = fixed.iter().map(|s| s.to_string()).collect();
    let alphabet = ['a', 'b', ' ', ' ', '.', '!', '?', '\n', '\t', 'é'];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    while out.len() < 25 {
        let len = rng.random_range(0..80);
        out.push((0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect());
    }
    out
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let texts = metric_texts();
    ensure!(texts.len() == 25, "suite has {} texts", texts.len());
    for t in &texts {
        ensure!(count_words(t) == oracle_words(t), "words differ on {t:?}");
        ensure!(count_sentences(t) == oracle_sentences(t), "sentences differ on {t:?}");
    }
    ensure!(count_words(SAMPLE_FEEDBACK) == 39, "sample words {}", count_words(SAMPLE_FEEDBACK));
    ensure!(count_sentences(SAMPLE_FEEDBACK) == 3, "sample sentences {}", count_sentences(SAMPLE_FEEDBACK));
    let took = within(start, Duration::from_secs(1))?;
    Ok(format!("25 texts agree with the character scan, sample 39 words / 3 sentences, {took:?}"))
}

// ---------------------------------------------------------------- kappa

fn oracle_kappa(a: &[bool], b: &[bool]) -> f64 {
    let mut table = [[0u64; 2]; 2];
    for (&x, &y) in a.iter().zip(b) {
        table[usize::from(x)][usize::from(y)] += 1;
    }
    let n = a.len() as u64;
    let rows = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
    let cols = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
    let chance_num = rows[0] * cols[0] + rows[1] * cols[1];
    if chance_num == n * n {
        return 1.0;
    }
    let nf = n as f64;
    let p_o = (table[0][0] + table[1][1]) as f64 / nf;
    let p_e = chance_num as f64 / (nf * nf);
    (p_o - p_e) / (1.0 - p_e)
}

fn kappa_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let len = rng.random_range(1..=200);
        let pa = rng.random_range(0.0..=1.0);
        let agree = rng.random_range(0.0..=1.0);
        let a: Vec<bool> = (0..len).map(|_| rng.random_bool(pa)).collect();
        let b: Vec<bool> = a.iter().map(|&x| if rng.random_bool(agree) { x } else { !x }).collect();
        let k = cohens_kappa(&a, &b).map_err(|e| e.to_string())?.kappa;
        let expected = oracle_kappa(&a, &b);
        worst = worst.max((k - expected).abs());
        ensure!((k - expected).abs() <= 1e-9, "kappa {k} vs oracle {expected} (len {len})");
        let self_k = cohens_kappa(&a, &a).map_err(|e| e.to_string())?.kappa;
        ensure!(self_k == 1.0, "kappa(x, x) = {self_k}");
        let swapped = cohens_kappa(&b, &a).map_err(|e| e.to_string())?.kappa;
        ensure!((swapped - k).abs() <= 1e-12, "asymmetric: {k} vs {swapped}");
    }
    ensure!(
        AgreementBand::from_kappa(0.63) == AgreementBand::Substantial,
        "0.63 maps to {}",
        AgreementBand::from_kappa(0.63)
    );
    let took = within(start, Duration::from_secs(5))?;
    Ok(format!("1000 random pairs, max deviation {worst:.2e}, 0.63 is substantial, {took:?}"))
}

// ---------------------------------------------------------------- aggregation

fn instance(id: &str, problem: &Slug, program: &Slug, understanding: bool, words: usize) -> FeedbackInstance {
    FeedbackInstance {
        id: id.into(),
        problem_id: problem.clone(),
        buggy_program_id: program.clone(),
        source: Source::Student,
        session_id: Some(format!("s-{id}")),
        model_name: None,
        strategy: None,
        text: vec!["word"; words].join(" ") + ".",
        understanding: Some(understanding),
    }
}

fn annotation(f: &FeedbackInstance, correct: bool, gives_fix: bool) -> RubricAnnotation {
    RubricAnnotation {
        feedback_id: f.id.clone(),
        annotator_id: "expert".into(),
        labels: RubricLabels { correct, gives_fix, mentions_variables: false, mentions_lines: correct && gives_fix },
        num_words: count_words(&f.text),
        num_sentences: count_sentences(&f.text),
        updated_at: 0,
    }
}

fn aggregation() -> Outcome {
    let pack = fixture_pack();
    let problems = &pack.problems;
    let program = |i: usize| &pack.programs_for(problems[i].id.as_str()).next().unwrap().id;

    // Hand-computed case: 4 annotations on problem 1.
    let small: Vec<FeedbackInstance> =
        [10, 20, 30, 40].iter().enumerate().map(|(i, &w)| instance(&format!("h{i}"), &problems[0].id, program(0), true, w)).collect();
    let small_ann: Vec<RubricAnnotation> = small
        .iter()
        .zip([(true, true), (true, false), (false, false), (true, true)])
        .map(|(f, (c, g))| annotation(f, c, g))
        .collect();
    let rows = aggregate(&small, &small_ann, &group_specs(GroupBy::Problem, problems, &small)).map_err(|e| e.to_string())?;
    let r = &rows[1];
    let close = |x: Option<f64>, y: f64| x.is_some_and(|x| (x - y).abs() <= 1e-9);
    ensure!(r.sample_size == 4, "size {}", r.sample_size);
    ensure!(close(r.correct_pct, 75.0), "correct {:?}", r.correct_pct);
    ensure!(close(r.gives_fix_pct, 50.0), "gives_fix {:?}", r.gives_fix_pct);
    ensure!(close(r.mentions_lines_pct, 50.0), "lines {:?}", r.mentions_lines_pct);
    ensure!(close(r.mentions_variables_pct, 0.0), "variables {:?}", r.mentions_variables_pct);
    ensure!(close(r.mean_words, 25.0), "words {:?}", r.mean_words);
    ensure!(close(r.mean_sentences, 1.0), "sentences {:?}", r.mean_sentences);
    ensure!(rows[2].sample_size == 0 && rows[2].correct_pct.is_none(), "empty group not empty");

    // Equal-size partition: 100 per problem with 78, 79 and 75 correct, 172 of 300 understood.
    let correct_counts = [78, 79, 75];
    let understood_counts = [60, 57, 55];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut instances = Vec::new();
    let mut annotations = Vec::new();
    for p in 0..3 {
        for i in 0..100 {
            let f = instance(&format!("p{p}-{i:03}"), &problems[p].id, program(p), i < understood_counts[p], rng.random_range(1..60));
            annotations.push(annotation(&f, i >= 100 - correct_counts[p], rng.random_bool(0.4)));
            instances.push(f);
        }
    }
    let rows = aggregate(&instances, &annotations, &group_specs(GroupBy::Problem, problems, &instances))
        .map_err(|e| e.to_string())?;
    let (all, groups) = (&rows[0], &rows[1..]);
    type Metric = fn(&flipfeed_core::domain::AggregateRow) -> Option<f64>;
    let metrics: [(&str, Metric); 6] = [
        ("correct", |r| r.correct_pct),
        ("words", |r| r.mean_words),
        ("sentences", |r| r.mean_sentences),
        ("gives_fix", |r| r.gives_fix_pct),
        ("variables", |r| r.mentions_variables_pct),
        ("lines", |r| r.mentions_lines_pct),
    ];
    for (name, m) in metrics {
        let mean = groups.iter().map(|g| m(g).unwrap()).sum::<f64>() / 3.0;
        ensure!((m(all).unwrap() - mean).abs() <= 1e-9, "{name}: combined {:?} vs mean {mean}", m(all));
    }
    let shown: Vec<f64> = rows.iter().map(|r| round_1dp(r.correct_pct.unwrap())).collect();
    ensure!(shown == [77.3, 78.0, 79.0, 75.0], "displayed correct {shown:?}");

    let rows = aggregate(&instances, &annotations, &group_specs(GroupBy::ProblemUnderstanding, problems, &instances))
        .map_err(|e| e.to_string())?;
    let size = |label: &str| rows.iter().find(|r| r.label == label).map(|r| r.sample_size);
    ensure!(size("Three problems:Understanding=Any") == Some(300), "parent size {:?}", size("Three problems:Understanding=Any"));
    ensure!(size("Three problems:Understanding=1") == Some(172), "understood {:?}", size("Three problems:Understanding=1"));
    ensure!(size("Three problems:Understanding=0") == Some(128), "not understood {:?}", size("Three problems:Understanding=0"));
    for p in 1..=3 {
        let parent = size(&format!("Problem {p}:Understanding=Any")).unwrap();
        let parts = size(&format!("Problem {p}:Understanding=1")).unwrap() + size(&format!("Problem {p}:Understanding=0")).unwrap();
        ensure!(parent == parts, "problem {p}: {parent} != {parts}");
    }
    Ok("hand means exact, 77.3 = mean(78.0, 79.0, 75.0), 172 + 128 = 300".into())
}

// ---------------------------------------------------------------- classifier

fn classifier() -> Outcome {
    let pack = fixture_pack();
    // A fresh harness so the timing includes compiling both programs.
    let start = Instant::now();
    let harness = Harness::new(HarnessConfig::default()).map_err(|e| e.to_string())?;
    let program = pack.program("spv-index-sum").ok_or("fixture lacks spv-index-sum")?;
    let per_problem: BTreeMap<&str, usize> =
        pack.problems.iter().map(|p| (p.id.as_str(), pack.programs_for(p.id.as_str()).count())).collect();
    ensure!(per_problem.len() == 3 && per_problem.values().all(|&n| n >= 2), "pack shape {per_problem:?}");

    let claim = |input: &str, buggy: &str, fixed: &str| PrefeedbackSubmission {
        input: input.into(),
        claimed_buggy_output: buggy.into(),
        claimed_correct_output: fixed.into(),
    };
    let run = |s: &PrefeedbackSubmission| validate_prefeedback(&harness, program, s).map_err(|e| e.to_string());

    let good = run(&claim("{10, 20, 30}", "3", "60"))?;
    ensure!(good.understanding && good.reasons.is_empty(), "correct claim: {good:?}");
    ensure!(good.actual_buggy_output == "3" && good.actual_fixed_output == "60", "actual outputs {good:?}");
    let swapped = run(&claim("{10, 20, 30}", "60", "3"))?;
    ensure!(!swapped.understanding && swapped.reasons.contains(&ReasonCode::BuggyMismatch), "swapped: {swapped:?}");
    let same = run(&claim("-5 -10", "0", "0"))?;
    ensure!(!same.understanding && same.reasons == [ReasonCode::NoDivergence], "non-triggering: {same:?}");
    let took = within(start, Duration::from_secs(10))?;
    Ok(format!("1 / 0 buggy_mismatch / 0 no_divergence, {took:?}"))
}

// ---------------------------------------------------------------- prompts

fn prompt_goldens() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden");
    let scenario = Scenario::from_pack(fixture_pack(), "spv-index-sum").map_err(|e| e.to_string())?;
    for strategy in PromptStrategy::ALL {
        let rendered = render_prompt(strategy, &scenario).map_err(|e| e.to_string())?;
        let path = dir.join(format!("prompt_{}.golden", strategy.as_str().replace('-', "_")));
        let golden = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        ensure!(rendered.as_bytes() == golden.as_slice(), "{} differs from {}", strategy.as_str(), path.display());
        ensure!(rendered.contains("Can you help by giving feedback?"), "{} lacks the request", strategy.as_str());
        ensure!(!rendered.contains("{problem_description}"), "{} has an unfilled slot", strategy.as_str());
    }
    let engineered = render_prompt(PromptStrategy::Engineered, &scenario).map_err(|e| e.to_string())?;
    ensure!(
        engineered.contains("Limit your response for the hint to a sentence or two at most"),
        "engineered prompt lacks the hint limit"
    );
    Ok("basic, engineered and finetune prompts byte-identical".into())
}

// ---------------------------------------------------------------- pipeline

fn pipeline() -> Outcome {
    let pack = fixture_pack();
    let p = &pack.problems[0].id;
    let prog = &pack.programs_for(p.as_str()).next().unwrap().id;
    let sized = |n: usize| instance(&format!("w{n}"), p, prog, true, n);
    let edge: Vec<FeedbackInstance> = [4, 5, 200, 201].into_iter().map(sized).collect();
    let kept: Vec<usize> = filter_by_length(&edge, 5, 200)
        .map_err(|e| e.to_string())?
        .iter()
        .map(|f| count_words(&f.text))
        .collect();
    ensure!(kept == [5, 200], "bounds kept {kept:?}");

    let corpus: Vec<FeedbackInstance> =
        synthetic_corpus(pack).into_iter().filter(|f| f.source == Source::Student).collect();
    ensure!(corpus.len() == 10, "corpus has {} instances", corpus.len());
    let kept = filter_by_length(&corpus, 5, 200).map_err(|e| e.to_string())?;
    ensure!(kept.len() == 5, "kept {} of 10", kept.len());

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let chars: Vec<char> = "ab <>/feedback\n\t.éü{}".chars().collect();
    for _ in 0..100 {
        let len = rng.random_range(0..120);
        let t: String = (0..len).map(|_| chars[rng.random_range(0..chars.len())]).collect();
        ensure!(unwrap_completion(&wrap_completion(&t)) == Some(t.as_str()), "round trip failed for {t:?}");
    }

    let records = build_finetune_dataset(&kept, pack).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let options = ExportOptions { pack_id: pack.id.to_string(), min_words: 5, max_words: 200, split: None };
    let first = export_records(&records, &dir.path().join("a.jsonl"), &options).map_err(|e| e.to_string())?;
    let again = export_records(&records, &dir.path().join("b.jsonl"), &options).map_err(|e| e.to_string())?;
    ensure!(first.digest == again.digest, "digest changed: {} vs {}", first.digest, again.digest);
    let a = std::fs::read(dir.path().join("a.jsonl")).map_err(|e| e.to_string())?;
    let b = std::fs::read(dir.path().join("b.jsonl")).map_err(|e| e.to_string())?;
    ensure!(a == b, "re-export bytes differ");
    Ok(format!("bounds inclusive, 10 -> 5 records, 100 round trips, digest {}", &first.digest[..12]))
}

// ---------------------------------------------------------------- batch

fn batch() -> Outcome {
    let start = Instant::now();
    runtime().block_on(async {
        let broken = Arc::new(AtomicBool::new(true));
        let flag = broken.clone();
        let server = MockServer::start(move |r| {
            if flag.load(Ordering::SeqCst) && r.prompt.contains("sum += i;") && r.prompt.contains("1. Describe the bugs") {
                MockReply::error(400)
            } else {
                MockReply::ok("1. The loop adds indexes.\n2. What does your loop add each time?")
            }
        })
        .await
        .map_err(|e| e.to_string())?;
        let mut endpoint = EndpointConfig::new("mock", &server.base_url(), "mock-model", EndpointKind::Base);
        endpoint.backoff_ms = 5;
        let store = Store::in_memory();
        let strategies = [Strategy::Basic, Strategy::Engineered];
        let manifest =
            batch_generate(&GenAiClient::new(), &[endpoint], &strategies, fixture_pack(), &store, &BatchOptions::default())
                .await;
        ensure!(manifest.cells.len() == 60, "{} cells", manifest.cells.len());
        ensure!(manifest.count(CellStatus::Succeeded) == 59, "{} succeeded", manifest.count(CellStatus::Succeeded));
        let failed: Vec<_> = manifest.cells.iter().filter(|c| c.status == CellStatus::Failed).collect();
        ensure!(
            failed.len() == 1 && failed[0].cell_id == "gen-mock-engineered-spv-index-sum" && failed[0].message.is_some(),
            "failed cells {failed:?}"
        );

        broken.store(false, Ordering::SeqCst);
        let rerun = BatchOptions { skip_existing: true, ..Default::default() };
        let second = batch_generate(
            &GenAiClient::new(),
            &[EndpointConfig { backoff_ms: 5, ..EndpointConfig::new("mock", &server.base_url(), "mock-model", EndpointKind::Base) }],
            &strategies,
            fixture_pack(),
            &store,
            &rerun,
        )
        .await;
        ensure!(
            second.count(CellStatus::Skipped) == 59 && second.count(CellStatus::Succeeded) == 1,
            "rerun counts {:?}",
            second.counts()
        );

        let stored: Vec<FeedbackInstance> = store.list(EntityKind::Feedback).map_err(|e| e.to_string())?;
        ensure!(stored.len() == 60, "{} persisted instances", stored.len());
        let mut grid: BTreeMap<(String, String), usize> = BTreeMap::new();
        for f in &stored {
            *grid.entry((f.problem_id.to_string(), format!("{:?}", f.strategy))).or_default() += 1;
        }
        ensure!(grid.len() == 6 && grid.values().all(|&n| n == 10), "grid {grid:?}");
        let took = within(start, Duration::from_secs(30))?;
        Ok(format!("60 instances (3 problems x 10 programs x 2 strategies), 59 + 1 failed then resumed, {took:?}"))
    })
}

// ---------------------------------------------------------------- service

struct Http {
    client: Client,
    base: String,
}

impl Http {
    async fn send(&self, method: &str, path: &str, token: &str, body: Option<Value>) -> Result<(u16, Value), String> {
        let url = format!("{}{path}", self.base);
        let mut req = if method == "GET" { self.client.get(url) } else { self.client.post(url) };
        req = req.bearer_auth(token);
        if let Some(b) = body {
            req = req.json(&b);
        }
        let r = req.send().await.map_err(|e| e.to_string())?;
        let status = r.status().as_u16();
        Ok((status, r.json().await.map_err(|e| e.to_string())?))
    }

    async fn start(&self, student: &str) -> Result<(String, String), String> {
        let (status, v) = self.send("POST", "/v1/sessions", "", Some(json!({"student_id": student}))).await?;
        ensure!(status == 201, "start returned {status}: {v}");
        Ok((v["session_id"].as_str().unwrap().into(), v["token"].as_str().unwrap().into()))
    }

    async fn task(&self, id: &str, token: &str) -> Result<Value, String> {
        let (status, v) = self.send("GET", &format!("/v1/sessions/{id}/task"), token, None).await?;
        ensure!(status == 200, "task returned {status}: {v}");
        Ok(v)
    }

    async fn prefeedback(&self, id: &str, token: &str, program: &str) -> Result<Value, String> {
        let claim = serde_json::to_value(correct_claim(program)).unwrap();
        let (status, v) = self.send("POST", &format!("/v1/sessions/{id}/prefeedback"), token, Some(claim)).await?;
        ensure!(status == 200, "prefeedback returned {status}: {v}");
        Ok(v)
    }

    async fn feedback(&self, id: &str, token: &str, text: &str) -> Result<Value, String> {
        let (status, v) = self.send("POST", &format!("/v1/sessions/{id}/feedback"), token, Some(json!({"text": text}))).await?;
        ensure!(status == 200, "feedback returned {status}: {v}");
        Ok(v)
    }
}

const TEXTS: [&str; 3] = [
    "Check what you add to the sum inside the loop.",
    "Which counter is printed after which label?",
    "Think about the type of the division result.",
];

fn service_session() -> Result<String, String> {
    runtime().block_on(async {
        let server = start_server(None).await;
        let http = Http { client: Client::new(), base: server.base.clone() };
        let (id, token) = http.start("acceptance-student").await?;
        for (i, text) in TEXTS.iter().enumerate() {
            let task = http.task(&id, &token).await?;
            ensure!(task["task_index"] == i && task.get("fixed_source").is_none(), "task {i} before reveal: {task}");
            let program = task["buggy_program_id"].as_str().unwrap().to_string();
            let out = http.prefeedback(&id, &token, &program).await?;
            ensure!(out["understanding"] == 1 && out["fixed_source"].is_string(), "prefeedback {i}: {out}");
            let task = http.task(&id, &token).await?;
            ensure!(task["state"] == "fixed_shown" && task["fixed_source"].is_string(), "task {i} after reveal: {task}");
            http.feedback(&id, &token, text).await?;
        }

        let direct = Arc::new(Store::in_memory());
        direct.put_pack(fixture_pack()).map_err(|e| e.to_string())?;
        let flow = TaskFlow::new(direct.clone(), harness());
        let direct_id = tokio::task::spawn_blocking(move || -> Result<String, String> {
            let s = flow.start_session("acceptance-student", fixture_pack().id.as_str()).map_err(|e| e.to_string())?;
            for text in TEXTS {
                let view = flow.get_current_task(&s.id).map_err(|e| e.to_string())?;
                flow.submit_prefeedback(&s.id, &correct_claim(view.buggy_program_id.as_str())).map_err(|e| e.to_string())?;
                flow.submit_feedback(&s.id, text).map_err(|e| e.to_string())?;
            }
            Ok(s.id)
        })
        .await
        .map_err(|e| e.to_string())??;
        ensure!(id == direct_id, "session ids differ: {id} vs {direct_id}");
        for kind in [EntityKind::Session, EntityKind::Feedback] {
            let a: Vec<Value> = server.store.list_records(kind).into_iter().map(|r| r.payload).collect();
            let b: Vec<Value> = direct.list_records(kind).into_iter().map(|r| r.payload).collect();
            ensure!(a == b, "{} payloads differ", kind.as_str());
        }
        Ok("3 tasks over HTTP, stored state equals direct task flow".to_string())
    })
}

struct Daemon {
    child: Child,
    base: String,
}

impl Daemon {
    fn spawn(store: &Path) -> Result<Self, String> {
        let mut child = Command::new(env!("CARGO_BIN_EXE_flipfeed"))
            .arg("--store")
            .arg(store)
            .args(["serve", "--bind", "127.0.0.1:0"])
            .env(STAFF_TOKEN_ENV, STAFF)
            .env(TOKEN_SECRET_ENV, "acceptance-secret")
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| e.to_string())?;
        let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
        let addr = loop {
            match lines.next() {
                Some(Ok(line)) => {
                    if let Some(addr) = line.strip_prefix("listening on ") {
                        break addr.to_string();
                    }
                }
                _ => {
                    let _ = child.kill();
                    return Err("server exited before listening".into());
                }
            }
        };
        std::thread::spawn(move || lines.for_each(drop));
        Ok(Daemon { child, base: format!("http://{addr}") })
    }

    fn wait_exit(&mut self, limit: Duration) -> Result<std::process::ExitStatus, String> {
        let start = Instant::now();
        loop {
            if let Some(status) = self.child.try_wait().map_err(|e| e.to_string())? {
                return Ok(status);
            }
            ensure!(start.elapsed() < limit, "server still running after {limit:?}");
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}

impl Drop for Daemon {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn crash_restart() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = dir.path().join("store.journal");
    let pack_file: PathBuf = dir.path().join("pack.toml");
    std::fs::write(&pack_file, FIXTURE_PACK).map_err(|e| e.to_string())?;
    let ingest = Command::new(env!("CARGO_BIN_EXE_flipfeed"))
        .arg("--store")
        .arg(&store)
        .arg("ingest")
        .arg(&pack_file)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(ingest.status.success(), "ingest failed: {}", String::from_utf8_lossy(&ingest.stderr));

    let rt = runtime();
    let mut daemon = Daemon::spawn(&store)?;
    let (id, token, program) = rt.block_on(async {
        let http = Http { client: Client::new(), base: daemon.base.clone() };
        let (id, token) = http.start("crash-student").await?;
        let first = http.task(&id, &token).await?;
        http.prefeedback(&id, &token, first["buggy_program_id"].as_str().unwrap()).await?;
        http.feedback(&id, &token, TEXTS[0]).await?;
        let second = http.task(&id, &token).await?;
        let program = second["buggy_program_id"].as_str().unwrap().to_string();
        http.prefeedback(&id, &token, &program).await?;
        Ok::<_, String>((id, token, program))
    })?;
    daemon.child.kill().map_err(|e| e.to_string())?;
    daemon.wait_exit(Duration::from_secs(5))?;

    let mut daemon = Daemon::spawn(&store)?;
    rt.block_on(async {
        let http = Http { client: Client::new(), base: daemon.base.clone() };
        let (again, _) = http.start("crash-student").await?;
        ensure!(again == id, "restart gave a new session {again}");
        let task = http.task(&id, &token).await?;
        ensure!(
            task["task_index"] == 1 && task["state"] == "fixed_shown" && task["buggy_program_id"] == program.as_str(),
            "resumed at {task}"
        );
        http.feedback(&id, &token, TEXTS[1]).await?;
        let third = http.task(&id, &token).await?;
        http.prefeedback(&id, &token, third["buggy_program_id"].as_str().unwrap()).await?;
        let done = http.feedback(&id, &token, TEXTS[2]).await?;
        ensure!(done.get("next_task").is_none(), "session not complete: {done}");
        Ok::<_, String>(())
    })?;

    let pid = daemon.child.id() as libc::pid_t;
    // SAFETY: pid is our own live child process.
    ensure!(unsafe { libc::kill(pid, libc::SIGTERM) } == 0, "cannot signal server");
    let status = daemon.wait_exit(Duration::from_secs(10))?;
    ensure!(status.success(), "SIGTERM exit status {status}");

    let reopened = Store::open(&store).map_err(|e| e.to_string())?;
    let n = reopened.list_records(EntityKind::Feedback).len();
    ensure!(n == 3, "{n} feedback records after restart");
    Ok("kill -9 after a committed prefeedback, restart resumed at task 1 fixed_shown, clean SIGTERM exit".into())
}

fn service() -> Outcome {
    let a = service_session()?;
    let b = crash_restart()?;
    Ok(format!("{a}; {b}"))
}

// ---------------------------------------------------------------- runner

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("metric oracle", metric_oracle),
        ("kappa oracle", kappa_oracle),
        ("aggregation consistency", aggregation),
        ("understanding classifier", classifier),
        ("prompt golden files", prompt_goldens),
        ("pipeline round-trip", pipeline),
        ("batch generation against mock endpoint", batch),
        ("service end-to-end and crash-restart", service),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let result = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
