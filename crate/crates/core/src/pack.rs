//! Problem-pack documents and their validating ingest.
//!
//! A pack is one TOML file:
//!
//! ```toml
//! id = "intro-c-feedback"
//!
//! [[problems]]
//! id = "sum-positive-values"
//! title = "Sum Positive Values"
//! ordinal = 1
//! description = '''...markdown...'''
//!
//! [[problems.buggy_programs]]
//! id = "spv-index-sum"
//! buggy_source = '''...C source...'''
//! fixed_source = '''...C source...'''
//! reference_test = { input = "10 20 30", expected_output = "60" }
//! ```
//!
//! Ingest is all-or-nothing: every issue found is reported, and nothing is returned
//! unless every program compiles and its reference test separates buggy from fixed.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{BuggyProgram, Problem, Slug, TestCase};
use crate::harness::{normalize_output, Harness, HarnessError, RunResult};

/// The pack shipped with the crate: three problems with ten buggy programs each.
pub const FIXTURE_PACK: &str = include_str!("../fixtures/problem_pack.toml");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackDocument {
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub problems: Vec<PackProblem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackProblem {
    pub id: String,
    pub title: String,
    pub ordinal: u32,
    pub description: String,
    #[serde(default)]
    pub buggy_programs: Vec<PackProgram>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackProgram {
    pub id: String,
    pub buggy_source: String,
    pub fixed_source: String,
    pub reference_test: TestCase,
}

impl PackDocument {
    pub fn parse(text: &str) -> Result<Self, PackError> {
        toml::from_str(text).map_err(|e| PackError::Schema(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pack documents always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PackIssue {
    NoProblems,
    InvalidId { item: String, detail: String },
    DuplicateId { item: String },
    OrdinalGap { expected: Vec<u32>, found: Vec<u32> },
    NoPrograms { problem: String },
    EmptyField { item: String, field: String },
    CompileFailure { program: String, which: String, diagnostics: String },
    RunFailure { program: String, which: String, detail: String },
    ExpectedOutputMismatch { program: String, expected: String, actual: String },
    NonDivergent { program: String, output: String },
}

impl fmt::Display for PackIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PackIssue::NoProblems => write!(f, "no problems"),
            PackIssue::InvalidId { item, detail } => write!(f, "{item}: {detail}"),
            PackIssue::DuplicateId { item } => write!(f, "{item}: duplicate id"),
            PackIssue::OrdinalGap { expected, found } => {
                write!(f, "ordinals must be {expected:?}, found {found:?}")
            }
            PackIssue::NoPrograms { problem } => write!(f, "problem {problem}: no buggy programs"),
            PackIssue::EmptyField { item, field } => write!(f, "{item}: `{field}` is empty"),
            PackIssue::CompileFailure { program, which, diagnostics } => {
                write!(f, "program {program}: {which} source does not compile:\n{diagnostics}")
            }
            PackIssue::RunFailure { program, which, detail } => {
                write!(f, "program {program}: {which} run failed on the reference input: {detail}")
            }
            PackIssue::ExpectedOutputMismatch { program, expected, actual } => write!(
                f,
                "program {program}: expected_output {expected:?} differs from fixed program output {actual:?}"
            ),
            PackIssue::NonDivergent { program, output } => write!(
                f,
                "program {program}: reference test does not fail, both versions print {output:?}"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<PackIssue>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} issue(s):", self.issues.len())?;
        for issue in &self.issues {
            writeln!(f, "  - {issue}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PackError {
    #[error("problem pack does not parse: {0}")]
    Schema(String),
    #[error("problem pack rejected: {0}")]
    Invalid(ValidationReport),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

impl PackError {
    pub fn issues(&self) -> &[PackIssue] {
        match self {
            PackError::Invalid(r) => &r.issues,
            _ => &[],
        }
    }
}

/// A pack whose every program has been compiled and checked against its reference test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatedPack {
    pub id: Slug,
    /// SHA-256 of the canonical pack document.
    pub digest: String,
    /// Sorted by ordinal.
    pub problems: Vec<Problem>,
    /// Grouped by problem ordinal, in document order within a problem.
    pub programs: Vec<BuggyProgram>,
    /// Normalized output of each buggy program on its reference input.
    pub reference_buggy_outputs: BTreeMap<String, String>,
}

impl ValidatedPack {
    pub fn problem(&self, id: &str) -> Option<&Problem> {
        self.problems.iter().find(|p| p.id.as_str() == id)
    }

    pub fn program(&self, id: &str) -> Option<&BuggyProgram> {
        self.programs.iter().find(|p| p.id.as_str() == id)
    }

    pub fn programs_for<'a>(&'a self, problem_id: &'a str) -> impl Iterator<Item = &'a BuggyProgram> + 'a {
        self.programs.iter().filter(move |p| p.problem_id.as_str() == problem_id)
    }

    /// True when `program_id` exists and belongs to `problem_id`.
    pub fn contains(&self, problem_id: &str, program_id: &str) -> bool {
        self.program(program_id).is_some_and(|p| p.problem_id.as_str() == problem_id)
    }

    pub fn ordinal_of(&self, problem_id: &str) -> Option<u32> {
        self.problem(problem_id).map(|p| p.ordinal)
    }

    pub fn to_document(&self) -> PackDocument {
        PackDocument {
            id: self.id.to_string(),
            problems: self
                .problems
                .iter()
                .map(|p| PackProblem {
                    id: p.id.to_string(),
                    title: p.title.clone(),
                    ordinal: p.ordinal,
                    description: p.description.clone(),
                    buggy_programs: self
                        .programs_for(p.id.as_str())
                        .map(|b| PackProgram {
                            id: b.id.to_string(),
                            buggy_source: b.buggy_source.clone(),
                            fixed_source: b.fixed_source.clone(),
                            reference_test: b.reference_test.clone(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

fn digest_document(doc: &PackDocument) -> String {
    hex::encode(Sha256::digest(doc.to_toml().as_bytes()))
}

/// Parses, structurally validates, compiles and runs a pack.
pub fn ingest_problem_pack(text: &str, harness: &Harness) -> Result<ValidatedPack, PackError> {
    let mut doc = PackDocument::parse(text)?;
    doc.problems.sort_by_key(|p| p.ordinal);

    let issues = structural_issues(&doc);
    if !issues.is_empty() {
        return Err(PackError::Invalid(ValidationReport { issues }));
    }

    let jobs: Vec<(&PackProblem, &PackProgram)> = doc
        .problems
        .iter()
        .flat_map(|p| p.buggy_programs.iter().map(move |b| (p, b)))
        .collect();
    let checks: Vec<Result<ProgramCheck, HarnessError>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(_, program)| s.spawn(|| check_program(harness, program)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("pack check thread panicked"))
            .collect()
    });

    let mut issues = Vec::new();
    let mut outputs = BTreeMap::new();
    for ((_, program), check) in jobs.iter().zip(checks) {
        match check? {
            ProgramCheck::Ok { buggy_output } => {
                outputs.insert(program.id.clone(), buggy_output);
            }
            ProgramCheck::Failed(mut found) => issues.append(&mut found),
        }
    }
    if !issues.is_empty() {
        return Err(PackError::Invalid(ValidationReport { issues }));
    }

    let slug = |s: &str| Slug::new(s).expect("validated");
    let problems = doc
        .problems
        .iter()
        .map(|p| Problem {
            id: slug(&p.id),
            title: p.title.clone(),
            description: p.description.clone(),
            ordinal: p.ordinal,
        })
        .collect();
    let programs = jobs
        .iter()
        .map(|(p, b)| BuggyProgram {
            id: slug(&b.id),
            problem_id: slug(&p.id),
            buggy_source: b.buggy_source.clone(),
            fixed_source: b.fixed_source.clone(),
            reference_test: b.reference_test.clone(),
        })
        .collect();

    let mut pack = ValidatedPack {
        id: slug(&doc.id),
        digest: String::new(),
        problems,
        programs,
        reference_buggy_outputs: outputs,
    };
    pack.digest = digest_document(&pack.to_document());
    Ok(pack)
}

fn structural_issues(doc: &PackDocument) -> Vec<PackIssue> {
    let mut issues = Vec::new();
    if let Err(e) = Slug::new(doc.id.clone()) {
        issues.push(PackIssue::InvalidId { item: "pack".into(), detail: e.to_string() });
    }
    if doc.problems.is_empty() {
        issues.push(PackIssue::NoProblems);
        return issues;
    }

    let mut problem_ids = HashSet::new();
    let mut program_ids = HashSet::new();
    for p in &doc.problems {
        let item = format!("problem {}", p.id);
        if let Err(e) = Slug::new(p.id.clone()) {
            issues.push(PackIssue::InvalidId { item: item.clone(), detail: e.to_string() });
        }
        if !problem_ids.insert(p.id.as_str()) {
            issues.push(PackIssue::DuplicateId { item: item.clone() });
        }
        for (field, value) in [("title", &p.title), ("description", &p.description)] {
            if value.trim().is_empty() {
                issues.push(PackIssue::EmptyField { item: item.clone(), field: field.into() });
            }
        }
        if p.buggy_programs.is_empty() {
            issues.push(PackIssue::NoPrograms { problem: p.id.clone() });
        }
        for b in &p.buggy_programs {
            let item = format!("program {}", b.id);
            if let Err(e) = Slug::new(b.id.clone()) {
                issues.push(PackIssue::InvalidId { item: item.clone(), detail: e.to_string() });
            }
            if !program_ids.insert(b.id.as_str()) {
                issues.push(PackIssue::DuplicateId { item: item.clone() });
            }
            for (field, value) in [
                ("buggy_source", &b.buggy_source),
                ("fixed_source", &b.fixed_source),
                ("reference_test.input", &b.reference_test.input),
                ("reference_test.expected_output", &b.reference_test.expected_output),
            ] {
                if value.trim().is_empty() {
                    issues.push(PackIssue::EmptyField { item: item.clone(), field: field.into() });
                }
            }
        }
    }

    let found: Vec<u32> = doc.problems.iter().map(|p| p.ordinal).collect();
    let expected: Vec<u32> = (1..=doc.problems.len() as u32).collect();
    if found.iter().copied().collect::<BTreeSet<_>>() != expected.iter().copied().collect() {
        issues.push(PackIssue::OrdinalGap { expected, found });
    }
    issues
}

enum ProgramCheck {
    Ok { buggy_output: String },
    Failed(Vec<PackIssue>),
}

fn check_program(harness: &Harness, program: &PackProgram) -> Result<ProgramCheck, HarnessError> {
    let mut issues = Vec::new();
    let mut compiled = Vec::new();
    for (which, source) in [("buggy", &program.buggy_source), ("fixed", &program.fixed_source)] {
        match harness.compile(source) {
            Ok(a) => compiled.push(a),
            Err(HarnessError::Compile { diagnostics }) => issues.push(PackIssue::CompileFailure {
                program: program.id.clone(),
                which: which.into(),
                diagnostics,
            }),
            Err(e) => return Err(e),
        }
    }
    if !issues.is_empty() {
        return Ok(ProgramCheck::Failed(issues));
    }

    let input = &program.reference_test.input;
    let buggy_run = harness.execute(&compiled[0], input)?;
    let fixed_run = harness.execute(&compiled[1], input)?;
    for (which, run) in [("buggy", &buggy_run), ("fixed", &fixed_run)] {
        if !run.is_clean() {
            issues.push(PackIssue::RunFailure {
                program: program.id.clone(),
                which: which.into(),
                detail: describe_failure(run),
            });
        }
    }
    if !issues.is_empty() {
        return Ok(ProgramCheck::Failed(issues));
    }

    let buggy_output = normalize_output(&buggy_run.stdout);
    let fixed_output = normalize_output(&fixed_run.stdout);
    let expected = normalize_output(&program.reference_test.expected_output);
    if expected != fixed_output {
        issues.push(PackIssue::ExpectedOutputMismatch {
            program: program.id.clone(),
            expected,
            actual: fixed_output.clone(),
        });
    }
    if buggy_output == fixed_output {
        issues.push(PackIssue::NonDivergent { program: program.id.clone(), output: fixed_output });
    }
    if issues.is_empty() {
        Ok(ProgramCheck::Ok { buggy_output })
    } else {
        Ok(ProgramCheck::Failed(issues))
    }
}

fn describe_failure(run: &RunResult) -> String {
    if run.timed_out {
        format!("timed out after {} ms", run.duration_ms)
    } else if run.stdout_truncated || run.stderr_truncated {
        "output exceeded the cap".to_string()
    } else {
        format!("exit {:?}; stderr: {}", run.exit, run.stderr.trim())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::HarnessConfig;

    const ONE: &str = r#"
id = "tiny"

[[problems]]
id = "double"
title = "Double"
ordinal = 1
description = "Print twice the input."

[[problems.buggy_programs]]
id = "double-add-one"
buggy_source = '''
#include <stdio.h>
int main(void){int x=0;if(scanf("%d",&x)!=1)return 0;printf("%d\n",x+1);return 0;}
'''
fixed_source = '''
#include <stdio.h>
int main(void){int x=0;if(scanf("%d",&x)!=1)return 0;printf("%d\n",x*2);return 0;}
'''
reference_test = { input = "5", expected_output = "10" }
"#;

    fn harness() -> Harness {
        Harness::new(HarnessConfig::default()).unwrap()
    }

    #[test]
    fn tiny_pack_ingests() {
        let pack = ingest_problem_pack(ONE, &harness()).unwrap();
        assert_eq!(pack.problems.len(), 1);
        assert_eq!(pack.programs.len(), 1);
        assert_eq!(pack.reference_buggy_outputs["double-add-one"], "6");
        assert_eq!(pack.digest.len(), 64);
        assert!(pack.contains("double", "double-add-one"));
        assert!(!pack.contains("other", "double-add-one"));
    }

    #[test]
    fn empty_pack_has_no_problems() {
        let err = ingest_problem_pack("id = \"x\"\n", &harness()).unwrap_err();
        assert_eq!(err.issues(), &[PackIssue::NoProblems]);
        assert!(err.to_string().contains("no problems"));
    }

    #[test]
    fn non_divergent_program_is_rejected() {
        let fixed = r#"fixed_source = '''
#include <stdio.h>
int main(void){int x=0;if(scanf("%d",&x)!=1)return 0;printf("%d\n",x*2);return 0;}
'''"#;
        let same = ONE.replace(
            "buggy_source = '''\n#include <stdio.h>\nint main(void){int x=0;if(scanf(\"%d\",&x)!=1)return 0;printf(\"%d\\n\",x+1);return 0;}\n'''",
            &fixed.replace("fixed_source", "buggy_source"),
        );
        assert_ne!(same, ONE);
        let err = ingest_problem_pack(&same, &harness()).unwrap_err();
        assert!(matches!(err.issues(), [PackIssue::NonDivergent { .. }]), "{err}");
    }

    #[test]
    fn compile_failure_names_program() {
        let broken = ONE.replace("x+1);", "x+);");
        let err = ingest_problem_pack(&broken, &harness()).unwrap_err();
        match err.issues() {
            [PackIssue::CompileFailure { program, which, diagnostics }] => {
                assert_eq!(program, "double-add-one");
                assert_eq!(which, "buggy");
                assert!(!diagnostics.is_empty());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_expected_output_is_reported() {
        let wrong = ONE.replace("expected_output = \"10\"", "expected_output = \"11\"");
        let err = ingest_problem_pack(&wrong, &harness()).unwrap_err();
        assert!(matches!(err.issues(), [PackIssue::ExpectedOutputMismatch { .. }]));
    }

    #[test]
    fn structural_problems_are_all_listed() {
        let text = r#"
id = "Bad Pack"
[[problems]]
id = "a"
title = "A"
ordinal = 1
description = "x"
[[problems]]
id = "a"
title = "B"
ordinal = 3
description = "y"
"#;
        let err = ingest_problem_pack(text, &harness()).unwrap_err();
        let issues = err.issues();
        assert!(issues.iter().any(|i| matches!(i, PackIssue::InvalidId { item, .. } if item == "pack")));
        assert!(issues.iter().any(|i| matches!(i, PackIssue::DuplicateId { .. })));
        assert!(issues.iter().any(|i| matches!(i, PackIssue::OrdinalGap { .. })));
        assert!(issues.iter().any(|i| matches!(i, PackIssue::NoPrograms { .. })));
    }

    #[test]
    fn unknown_fields_are_schema_errors() {
        let err = PackDocument::parse("id = \"x\"\nproblemz = []\n").unwrap_err();
        assert!(matches!(err, PackError::Schema(_)));
    }
}

#[cfg(test)]
mod fixture_tests {
    use super::*;
    use crate::harness::HarnessConfig;

    #[test]
    fn fixture_pack_is_valid() {
        let harness = Harness::new(HarnessConfig::default()).unwrap();
        let pack = match ingest_problem_pack(FIXTURE_PACK, &harness) {
            Ok(p) => p,
            Err(e) => panic!("{e}"),
        };
        assert_eq!(pack.problems.len(), 3);
        assert_eq!(pack.programs.len(), 30);
        let ordinals: Vec<u32> = pack.problems.iter().map(|p| p.ordinal).collect();
        assert_eq!(ordinals, vec![1, 2, 3]);
        assert_eq!(pack.reference_buggy_outputs["spv-index-sum"], "3");

        // Serializing the validated pack reproduces the authored content.
        let authored = PackDocument::parse(FIXTURE_PACK).unwrap();
        let again = PackDocument::parse(&pack.to_document().to_toml()).unwrap();
        assert_eq!(authored, again);
    }
}
