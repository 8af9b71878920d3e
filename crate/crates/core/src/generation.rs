//! Candidate test generation with execution feedback.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::change::DiffModel;
use crate::coverage::{
    annotate_lines, lines_in, span_text, FocalFunction, LineRef, PatchCoverage,
    COVERED_BY_TEST_MARKER, UNCOVERED_MARKER,
};
use crate::exec::{ExecBackend, ExecError, Workspace};
use crate::llm::{first_code_block, LlmError, LlmGateway, Message, Role};
use crate::pr_context::PrContextSummary;
use crate::test_context::{TestContext, TestContextMap};
use crate::util::tail_chars;

pub const STDERR_EXCERPT_CHARS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FeedbackState {
    Accept,
    FixError,
    FixPreserveCoverage,
    IncreaseCoverage,
    Exhausted,
}

pub fn next_state(passed: bool, added_any: bool, round: u32, max_rounds: u32) -> FeedbackState {
    if passed && added_any {
        return FeedbackState::Accept;
    }
    if round >= max_rounds {
        return FeedbackState::Exhausted;
    }
    match (passed, added_any) {
        (false, false) => FeedbackState::FixError,
        (false, true) => FeedbackState::FixPreserveCoverage,
        (true, false) => FeedbackState::IncreaseCoverage,
        (true, true) => unreachable!(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub passed: bool,
    pub added_lines: BTreeSet<LineRef>,
    pub stderr_excerpt: String,
    pub duration_secs: f64,
    #[serde(default)]
    pub timed_out: bool,
}

/// One execution of a candidate and the state it led to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: u32,
    pub passed: bool,
    pub added: usize,
    pub state: FeedbackState,
    pub stderr_excerpt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTest {
    pub id: String,
    pub source: String,
    pub focal: String,
    pub context_used: TestContext,
    pub round: u32,
    pub outcome: Option<TestOutcome>,
    pub state: Option<FeedbackState>,
    pub uncovered_summary: String,
    #[serde(default)]
    pub history: Vec<RoundLog>,
    #[serde(default)]
    pub llm_call_ids: Vec<String>,
    #[serde(skip)]
    conversation: Vec<Message>,
}

impl CandidateTest {
    /// A candidate that has not been run yet.
    pub fn new(id: impl Into<String>, source: impl Into<String>, focal: impl Into<String>, ctx: TestContext) -> Self {
        CandidateTest {
            id: id.into(),
            source: source.into(),
            focal: focal.into(),
            context_used: ctx,
            round: 0,
            outcome: None,
            state: None,
            uncovered_summary: String::new(),
            history: Vec::new(),
            llm_call_ids: Vec::new(),
            conversation: Vec::new(),
        }
    }

    pub fn is_accepted(&self) -> bool {
        self.state == Some(FeedbackState::Accept)
    }

    pub fn added_lines(&self) -> BTreeSet<LineRef> {
        self.outcome
            .as_ref()
            .map(|o| o.added_lines.clone())
            .unwrap_or_default()
    }
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("the model reply contained no fenced code block")]
    NoCodeBlock,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

const SYSTEM: &str = "You are an expert Python developer writing pytest regression tests for \
a pull request. Lines the existing test suite does not execute are marked with `# UNCOVERED!`; \
partially covered branches are marked with `# BRANCH PARTIALLY UNCOVERED!`.";

fn diff_listing(diff: &DiffModel) -> String {
    diff.files
        .iter()
        .map(|f| format!("- {}\n", f.path))
        .collect()
}

fn summarize_messages(
    diff: &DiffModel,
    pr_ctx: &PrContextSummary,
    focal: &FocalFunction,
) -> Vec<Message> {
    vec![
        Message::system(SYSTEM),
        Message::user(format!(
            "Pull request summary:\n\n{}\n\nFiles changed:\n{}\n\
             Function `{}` in `{}` (annotated with uncovered lines):\n\n```python\n{}```\n\n\
             Inspect and summarize the lines modified by the PR that are not covered, and what \
             inputs would make them execute.",
            pr_ctx.summary,
            diff_listing(diff),
            focal.qualified_name,
            focal.file,
            focal.annotated_source
        )),
    ]
}

pub fn summarize_uncovered(
    llm: &LlmGateway,
    diff: &DiffModel,
    pr_ctx: &PrContextSummary,
    focal: &FocalFunction,
) -> Result<String, GenError> {
    if !focal.annotated_source.contains(UNCOVERED_MARKER) {
        return Err(GenError::Precondition(format!(
            "{} has no uncovered line marker",
            focal.qualified_name
        )));
    }
    let reply = llm.complete(Role::SummarizeUncovered, summarize_messages(diff, pr_ctx, focal))?;
    Ok(reply.text.trim().to_string())
}

fn generate_prompt(ctx: &TestContext) -> String {
    let place = match &ctx.class_name {
        Some(c) => format!("class `{c}` in `{}`", ctx.file),
        None => format!("`{}`", ctx.file),
    };
    format!(
        "Here is the existing test `{}` from {place}, with the imports, fixtures and setup it \
         relies on:\n\n```python\n{}```\n\nWrite a new test for the uncovered lines, in the same \
         style. Return a complete standalone pytest module (imports, any fixtures or setup it \
         needs, and the test) in a single ```python code block.",
        ctx.method_name, ctx.scaffold
    )
}

/// Send `messages` and pull the first code block out of the reply, asking
/// once more if there is none.
fn ask_for_code(
    llm: &LlmGateway,
    role: Role,
    messages: &mut Vec<Message>,
    call_ids: &mut Vec<String>,
) -> Result<String, GenError> {
    for attempt in 0..2 {
        let reply = llm.complete(role, messages.clone())?;
        call_ids.push(reply.call_id);
        let block = first_code_block(&reply.text).filter(|b| !b.trim().is_empty());
        messages.push(Message::assistant(reply.text));
        if let Some(code) = block {
            return Ok(code);
        }
        if attempt == 0 {
            messages.push(Message::user(
                "Your reply had no code. Return the complete test module in one ```python code block.",
            ));
        }
    }
    Err(GenError::NoCodeBlock)
}

pub fn generate_candidate(
    llm: &LlmGateway,
    id: impl Into<String>,
    diff: &DiffModel,
    pr_ctx: &PrContextSummary,
    focal: &FocalFunction,
    uncovered_summary: &str,
    ctx: &TestContext,
) -> Result<CandidateTest, GenError> {
    let mut conversation = summarize_messages(diff, pr_ctx, focal);
    conversation.push(Message::assistant(uncovered_summary));
    conversation.push(Message::user(generate_prompt(ctx)));
    let mut call_ids = Vec::new();
    let source = ask_for_code(llm, Role::GenerateTest, &mut conversation, &mut call_ids)?;
    let mut candidate = CandidateTest::new(id, source, focal.qualified_name.clone(), ctx.clone());
    candidate.uncovered_summary = uncovered_summary.to_string();
    candidate.llm_call_ids = call_ids;
    candidate.conversation = conversation;
    Ok(candidate)
}

/// The focal span with `covered` lines marked as reached by the candidate
/// and `missing` lines marked uncovered.
pub fn feedback_annotation(
    source: &str,
    focal: &FocalFunction,
    covered: &BTreeSet<u32>,
    missing: &BTreeSet<u32>,
) -> String {
    let mut markers = BTreeMap::new();
    for &l in covered {
        markers.insert(l, COVERED_BY_TEST_MARKER);
    }
    for &l in missing {
        markers.insert(l, UNCOVERED_MARKER);
    }
    let (start, end) = focal.span;
    match annotate_lines(source, &markers) {
        Ok(text) => span_text(&text, start, end),
        Err(_) => focal.annotated_source.clone(),
    }
}

pub fn refine(
    llm: &LlmGateway,
    mut candidate: CandidateTest,
    pc: &PatchCoverage,
    focal: &FocalFunction,
    file_source: &str,
) -> Result<CandidateTest, GenError> {
    let outcome = candidate
        .outcome
        .clone()
        .ok_or_else(|| GenError::Precondition("candidate has not been executed".into()))?;
    let state = candidate
        .state
        .ok_or_else(|| GenError::Precondition("candidate has no feedback state".into()))?;
    let in_focal = |l: &u32| focal.span.0 <= *l && *l <= focal.span.1;
    let added: BTreeSet<u32> = lines_in(&outcome.added_lines, &focal.file)
        .into_iter()
        .filter(in_focal)
        .collect();
    let missing: BTreeSet<u32> = pc
        .uncovered_in(&focal.file)
        .into_iter()
        .filter(|l| in_focal(l) && !added.contains(l))
        .collect();
    let (role, prompt) = match state {
        FeedbackState::FixError => (
            Role::FixError,
            format!(
                "The test failed and did not cover any of the uncovered lines. Error output:\n\n\
                 ```\n{}\n```\n\nFix the test and return the complete module in one ```python \
                 code block.",
                outcome.stderr_excerpt
            ),
        ),
        FeedbackState::FixPreserveCoverage => (
            Role::FixPreserveCoverage,
            format!(
                "The test failed, but it did reach new lines. Error output:\n\n```\n{}\n```\n\n\
                 Coverage of the function under test (`{}` marks lines this test reached, `{}` \
                 lines still missed):\n\n```python\n{}```\n\nFix the failure without losing the \
                 coverage, and return the complete module in one ```python code block.",
                outcome.stderr_excerpt,
                COVERED_BY_TEST_MARKER,
                UNCOVERED_MARKER,
                feedback_annotation(file_source, focal, &added, &missing)
            ),
        ),
        FeedbackState::IncreaseCoverage => (
            Role::IncreaseCoverage,
            format!(
                "The test passed but did not execute any uncovered line. These lines are still \
                 missed:\n\n```python\n{}```\n\nChange the test so it reaches them, and return \
                 the complete module in one ```python code block.",
                feedback_annotation(file_source, focal, &BTreeSet::new(), &missing)
            ),
        ),
        FeedbackState::Accept | FeedbackState::Exhausted => {
            return Err(GenError::Precondition(format!(
                "cannot refine a candidate in state {state:?}"
            )))
        }
    };
    candidate.conversation.push(Message::user(prompt));
    let source = ask_for_code(llm, role, &mut candidate.conversation, &mut candidate.llm_call_ids)?;
    candidate.source = source;
    candidate.round += 1;
    candidate.outcome = None;
    candidate.state = None;
    Ok(candidate)
}

/// Run the candidate alone and intersect what it covered with the PR's
/// uncovered lines.
pub fn evaluate(
    backend: &dyn ExecBackend,
    ws: &Workspace,
    source: &str,
    pc: &PatchCoverage,
) -> Result<TestOutcome, ExecError> {
    match backend.run_candidate(ws, source) {
        Ok(result) => {
            let covered = result.coverage.map(|c| c.covered()).unwrap_or_default();
            let added = covered.intersection(&pc.uncovered).cloned().collect();
            let err = if result.stderr.trim().is_empty() {
                &result.stdout
            } else {
                &result.stderr
            };
            Ok(TestOutcome {
                passed: result.passed,
                added_lines: added,
                stderr_excerpt: tail_chars(err, STDERR_EXCERPT_CHARS).to_string(),
                duration_secs: result.duration_secs,
                timed_out: false,
            })
        }
        Err(ExecError::Timeout(limit)) => Ok(TestOutcome {
            passed: false,
            added_lines: BTreeSet::new(),
            stderr_excerpt: format!("TIMEOUT: the test did not finish within {}s", limit.as_secs()),
            duration_secs: limit.as_secs_f64(),
            timed_out: true,
        }),
        Err(e) => Err(e),
    }
}

pub struct GenerationInputs<'a> {
    pub diff: &'a DiffModel,
    pub pr_ctx: &'a PrContextSummary,
    pub pc: &'a PatchCoverage,
    pub focals: &'a [FocalFunction],
    pub contexts: &'a TestContextMap,
    /// Post-PR text of each source file holding a focal function.
    pub sources: &'a BTreeMap<String, String>,
    pub n: usize,
    pub max_rounds: u32,
}

/// Execute and refine one candidate until it is accepted or exhausted.
pub fn drive_candidate(
    llm: &LlmGateway,
    backend: &dyn ExecBackend,
    ws: &Workspace,
    inp: &GenerationInputs<'_>,
    focal: &FocalFunction,
    mut candidate: CandidateTest,
) -> Result<CandidateTest, GenError> {
    let file_source = inp.sources.get(&focal.file).map(String::as_str).unwrap_or("");
    loop {
        let outcome = match evaluate(backend, ws, &candidate.source, inp.pc) {
            Ok(o) => o,
            Err(e) => {
                log::warn!("{}: backend failure, giving up on this candidate: {e}", candidate.id);
                candidate.outcome = Some(TestOutcome {
                    passed: false,
                    added_lines: BTreeSet::new(),
                    stderr_excerpt: e.to_string(),
                    duration_secs: 0.0,
                    timed_out: false,
                });
                candidate.state = Some(FeedbackState::Exhausted);
                candidate.history.push(RoundLog {
                    round: candidate.round,
                    passed: false,
                    added: 0,
                    state: FeedbackState::Exhausted,
                    stderr_excerpt: e.to_string(),
                });
                return Ok(candidate);
            }
        };
        let state = next_state(
            outcome.passed,
            !outcome.added_lines.is_empty(),
            candidate.round,
            inp.max_rounds,
        );
        log::info!(
            "{} round {}: passed={} added={} -> {:?}",
            candidate.id,
            candidate.round,
            outcome.passed,
            outcome.added_lines.len(),
            state
        );
        candidate.history.push(RoundLog {
            round: candidate.round,
            passed: outcome.passed,
            added: outcome.added_lines.len(),
            state,
            stderr_excerpt: outcome.stderr_excerpt.clone(),
        });
        candidate.outcome = Some(outcome);
        candidate.state = Some(state);
        if matches!(state, FeedbackState::Accept | FeedbackState::Exhausted) {
            return Ok(candidate);
        }
        let snapshot = candidate.clone();
        match refine(llm, candidate, inp.pc, focal, file_source) {
            Ok(next) => candidate = next,
            Err(GenError::NoCodeBlock) => {
                let mut c = snapshot;
                c.state = Some(FeedbackState::Exhausted);
                if let Some(last) = c.history.last_mut() {
                    last.state = FeedbackState::Exhausted;
                }
                return Ok(c);
            }
            Err(e) => return Err(e),
        }
    }
}

/// Generate up to `n` candidates, cycling over focal functions and, for each
/// focal, over its test contexts.
pub fn run_generation(
    llm: &LlmGateway,
    backend: &dyn ExecBackend,
    ws: &Workspace,
    inp: &GenerationInputs<'_>,
) -> Result<Vec<CandidateTest>, GenError> {
    if inp.n == 0 {
        return Err(GenError::Precondition("tests_per_pr must be at least 1".into()));
    }
    let targets: Vec<(&FocalFunction, &Vec<TestContext>)> = inp
        .focals
        .iter()
        .filter_map(|f| {
            inp.contexts
                .entries
                .get(&f.qualified_name)
                .filter(|c| !c.is_empty())
                .map(|c| (f, c))
        })
        .collect();
    if targets.is_empty() {
        log::warn!("no focal function has a test context; nothing to generate");
        return Ok(Vec::new());
    }
    let mut summaries: BTreeMap<&str, String> = BTreeMap::new();
    let mut per_focal: BTreeMap<&str, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for attempt in 0..inp.n {
        let (focal, contexts) = targets[attempt % targets.len()];
        let k = per_focal.entry(&focal.qualified_name).or_insert(0);
        let ctx = &contexts[*k % contexts.len()];
        *k += 1;
        let summary = match summaries.get(focal.qualified_name.as_str()) {
            Some(s) => s.clone(),
            None => {
                let s = summarize_uncovered(llm, inp.diff, inp.pr_ctx, focal)?;
                summaries.insert(&focal.qualified_name, s.clone());
                s
            }
        };
        let id = format!("candidate-{}", attempt + 1);
        let candidate = match generate_candidate(llm, &id, inp.diff, inp.pr_ctx, focal, &summary, ctx) {
            Ok(c) => c,
            Err(GenError::NoCodeBlock) => {
                log::warn!("{id}: no code in the reply after a re-ask; attempt dropped");
                continue;
            }
            Err(e) => return Err(e),
        };
        out.push(drive_candidate(llm, backend, ws, inp, focal, candidate)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use FeedbackState::*;

    #[test]
    fn transition_table() {
        assert_eq!(next_state(true, true, 0, 3), Accept);
        assert_eq!(next_state(true, true, 3, 3), Accept);
        assert_eq!(next_state(false, true, 1, 3), FixPreserveCoverage);
        assert_eq!(next_state(false, false, 2, 3), FixError);
        assert_eq!(next_state(true, false, 0, 3), IncreaseCoverage);
        assert_eq!(next_state(true, false, 3, 3), Exhausted);
        assert_eq!(next_state(false, false, 3, 3), Exhausted);
    }

    #[test]
    fn feedback_markers() {
        let src = "def f(x):\n    if x:\n        return 1\n    return 2\n";
        let focal = FocalFunction {
            qualified_name: "m.f".into(),
            file: "m.py".into(),
            span: (1, 4),
            uncovered_lines: [3, 4].into(),
            annotated_source: String::new(),
        };
        let text = feedback_annotation(src, &focal, &[3].into(), &[4].into());
        assert_eq!(
            text,
            "def f(x):\n    if x:\n        return 1 # COVERED BY THIS TEST\n    return 2 # UNCOVERED!\n"
        );
    }
}
