//! Merging an accepted standalone test into an existing test file.
//!
//! The merge only ever inserts whole lines; every byte of the original file
//! outside the insertion points is kept as is.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use similar::TextDiff;
use thiserror::Error;

use crate::llm::{LlmError, LlmGateway, Message, Role};
use crate::pysource::{
    check_parses, normalize_code, render_imports, ClassInfo, FunctionInfo, ImportUnit, Item,
    ItemKind, ParseFailure, PyModule,
};
use crate::test_context::TestContext;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IntegrationMode {
    NewTest,
    ExtendExisting,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    /// After the last member of the class.
    EndOfClass(String),
    EndOfFile,
    /// After the last statement of an existing test.
    EndOfTest(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrationPlan {
    pub mode: IntegrationMode,
    pub file: String,
    pub class_name: Option<String>,
    pub method_name: String,
    pub anchor: Anchor,
}

impl IntegrationPlan {
    pub fn new_test(ctx: &TestContext) -> Self {
        IntegrationPlan {
            mode: IntegrationMode::NewTest,
            file: ctx.file.clone(),
            class_name: ctx.class_name.clone(),
            method_name: ctx.method_name.clone(),
            anchor: match &ctx.class_name {
                Some(c) => Anchor::EndOfClass(c.clone()),
                None => Anchor::EndOfFile,
            },
        }
    }

    pub fn extend(ctx: &TestContext) -> Self {
        IntegrationPlan {
            mode: IntegrationMode::ExtendExisting,
            file: ctx.file.clone(),
            class_name: ctx.class_name.clone(),
            method_name: ctx.method_name.clone(),
            anchor: Anchor::EndOfTest(ctx.method_name.clone()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeResult {
    pub merged_file: String,
    pub added_imports: Vec<String>,
    pub skipped_imports: Vec<String>,
    pub added_defs: Vec<String>,
    pub notices: Vec<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MergeError {
    #[error(transparent)]
    Parse(#[from] ParseFailure),
    #[error("a different definition named {0} already exists in the target scope")]
    NameCollision(String),
    #[error("candidate has top-level code at line {0} that is not an import, assignment, fixture or test")]
    UnmergeableTopLevel(u32),
    #[error("candidate defines no test function")]
    NoTest,
    #[error("target {0} does not exist in the test file")]
    MissingTarget(String),
}

/// Test functions of a parsed candidate, with the class that holds each
/// one (if any).
fn candidate_tests(m: &PyModule) -> Vec<(Option<&ClassInfo>, &Item, &FunctionInfo)> {
    let mut out = Vec::new();
    for item in &m.items {
        match &item.kind {
            ItemKind::Function(f) if f.is_test() => out.push((None, item, f)),
            ItemKind::Class(c) => {
                for member in &c.members {
                    if let ItemKind::Function(f) = &member.kind {
                        if f.is_test() {
                            out.push((Some(c), member, f));
                        }
                    }
                }
            }
            _ => {}
        }
    }
    out
}

fn is_test_class(c: &ClassInfo) -> bool {
    c.members
        .iter()
        .any(|m| matches!(&m.kind, ItemKind::Function(f) if f.is_test()))
}

const MODE_SYSTEM: &str = "You maintain a test suite. Decide how a new passing test should be \
added to an existing test file: as a separate test (NEW_TEST), or by appending its statements \
to the existing test shown (EXTEND_EXISTING). Prefer NEW_TEST unless the new checks clearly \
belong to the existing test. Reply with NEW_TEST or EXTEND_EXISTING.";

pub fn parse_mode(reply: &str) -> Option<IntegrationMode> {
    static MODE_RE: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r"(?i)\b(NEW[_ ]TEST|EXTEND(?:[_ ]EXISTING)?)\b").unwrap());
    let m = MODE_RE.find(reply)?;
    if m.as_str().to_ascii_uppercase().starts_with("NEW") {
        Some(IntegrationMode::NewTest)
    } else {
        Some(IntegrationMode::ExtendExisting)
    }
}

/// Ask the model for the integration mode. Anything other than a usable
/// EXTEND_EXISTING answer becomes NEW_TEST.
pub fn decide_integration_mode(
    llm: &LlmGateway,
    candidate_source: &str,
    ctx: &TestContext,
    existing_file: &str,
) -> Result<IntegrationPlan, LlmError> {
    let reply = llm.complete(
        Role::IntegrationMode,
        vec![
            Message::system(MODE_SYSTEM),
            Message::user(format!(
                "Existing test `{}` in `{}`:\n\n```python\n{}```\n\nNew test:\n\n```python\n{}```",
                ctx.test_id(),
                ctx.file,
                ctx.scaffold,
                candidate_source
            )),
        ],
    )?;
    let plan = match parse_mode(&reply.text) {
        Some(IntegrationMode::ExtendExisting) if can_extend(candidate_source, ctx, existing_file) => {
            IntegrationPlan::extend(ctx)
        }
        Some(IntegrationMode::ExtendExisting) => {
            log::info!("cannot extend {}; adding a new test instead", ctx.test_id());
            IntegrationPlan::new_test(ctx)
        }
        _ => IntegrationPlan::new_test(ctx),
    };
    Ok(plan)
}

/// Extension needs exactly one candidate test whose parameters the target
/// test already provides.
pub fn can_extend(candidate_source: &str, ctx: &TestContext, existing_file: &str) -> bool {
    let (Ok(cand), Ok(existing)) = (
        PyModule::parse(candidate_source, "candidate"),
        PyModule::parse(existing_file, &ctx.file),
    ) else {
        return false;
    };
    let tests = candidate_tests(&cand);
    let [(_, _, test)] = tests.as_slice() else {
        return false;
    };
    let Some((_, target)) = find_function(&existing, ctx.class_name.as_deref(), &ctx.method_name) else {
        return false;
    };
    let have: BTreeSet<&String> = target.params.iter().collect();
    test.params
        .iter()
        .filter(|p| p.as_str() != "self")
        .all(|p| have.contains(p))
}

fn find_function<'a>(
    m: &'a PyModule,
    class: Option<&str>,
    name: &str,
) -> Option<(&'a Item, &'a FunctionInfo)> {
    match class {
        Some(c) => m.class(c).and_then(|(_, ci)| ci.function(name)),
        None => m.function(name),
    }
}

/// Text of one function from `m`, re-indented to `indent` and with a
/// leading `self` parameter added or removed as requested.
fn function_text(
    m: &PyModule,
    item: &Item,
    f: &FunctionInfo,
    indent: &str,
    want_self: bool,
) -> Result<String, MergeError> {
    let has_self = f.first_param.as_deref() == Some("self");
    let src = m.text();
    let edited: String = if want_self && !has_self {
        let ins = if f.has_params { "self, " } else { "self" };
        format!("{}{ins}{}", &src[..f.params_open], &src[f.params_open..])
    } else if !want_self && has_self {
        let (s, e) = f.first_param_removal.expect("self is a positional parameter");
        format!("{}{}", &src[..s], &src[e..])
    } else {
        return Ok(m.reindent(item.start_line, item.end_line, m.indent_of_line(item.start_line), indent));
    };
    // Both edits stay on the signature line, so line numbers are unchanged.
    let m2 = PyModule::parse(&edited, "candidate")?;
    Ok(m2.reindent(item.start_line, item.end_line, m.indent_of_line(item.start_line), indent))
}

fn member_indent(m: &PyModule, c: &ClassInfo, class_item: &Item) -> String {
    c.members
        .first()
        .map(|mem| m.indent_of_line(mem.start_line).to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("{}    ", m.indent_of_line(class_item.start_line)))
}

/// Pending line insertions: text to place after a given 1-based line
/// (0 = before the first line).
#[derive(Default)]
struct Edits {
    at: BTreeMap<u32, Vec<String>>,
}

impl Edits {
    fn insert_after(&mut self, line: u32, text: String) {
        self.at.entry(line).or_default().push(text);
    }

    fn apply(&self, original: &str) -> String {
        let mut out = String::with_capacity(original.len() + 256);
        let push = |out: &mut String, chunks: &[String]| {
            for c in chunks {
                if !out.is_empty() && !out.ends_with('\n') {
                    out.push('\n');
                }
                out.push_str(c);
            }
        };
        let mut n = 0;
        if let Some(chunks) = self.at.get(&0) {
            push(&mut out, chunks);
        }
        for line in original.split_inclusive('\n') {
            n += 1;
            out.push_str(line);
            if let Some(chunks) = self.at.get(&n) {
                push(&mut out, chunks);
            }
        }
        // Anchors past the last line (end of file).
        for chunks in self.at.range(n.max(1) + 1..).map(|(_, c)| c) {
            push(&mut out, chunks);
        }
        out
    }
}

fn ensure_newline(mut s: String) -> String {
    if !s.ends_with('\n') {
        s.push('\n');
    }
    s
}

/// Merge `candidate` into `existing` according to `plan`.
pub fn merge_test(plan: &IntegrationPlan, candidate: &str, existing: &str) -> Result<MergeResult, MergeError> {
    let cand = PyModule::parse(candidate, "candidate")?;
    let ex = PyModule::parse(existing, &plan.file)?;
    let mut result = MergeResult::default();
    let mut edits = Edits::default();

    let tests = candidate_tests(&cand);
    if tests.is_empty() {
        return Err(MergeError::NoTest);
    }

    // Sort candidate top-level items into buckets.
    let mut cand_imports: Vec<ImportUnit> = Vec::new();
    let mut module_defs: Vec<&Item> = Vec::new();
    let mut test_classes: Vec<(&Item, &ClassInfo)> = Vec::new();
    for item in &cand.items {
        match &item.kind {
            ItemKind::Import(units) => cand_imports.extend(units.iter().cloned()),
            ItemKind::Assign(_) => module_defs.push(item),
            ItemKind::Function(f) if f.is_test() => {}
            ItemKind::Function(_) => module_defs.push(item),
            ItemKind::Class(c) if is_test_class(c) => test_classes.push((item, c)),
            ItemKind::Class(_) => module_defs.push(item),
            ItemKind::Docstring | ItemKind::MainGuard => {}
            ItemKind::Other => return Err(MergeError::UnmergeableTopLevel(item.start_line)),
        }
    }

    // Imports.
    let existing_units = ex.import_units();
    let mut seen = BTreeSet::new();
    let mut missing = Vec::new();
    for u in cand_imports {
        if !seen.insert(u.clone()) {
            continue;
        }
        if existing_units.contains(&u) {
            result.skipped_imports.extend(render_imports(std::slice::from_ref(&u)));
        } else {
            missing.push(u);
        }
    }
    if !missing.is_empty() {
        let rendered = render_imports(&missing);
        let block: String = rendered.iter().map(|l| format!("{l}\n")).collect();
        match ex.imports().last() {
            Some((last, _)) => edits.insert_after(last.end_line, block),
            None => {
                let after = ex
                    .items
                    .first()
                    .filter(|i| matches!(i.kind, ItemKind::Docstring))
                    .map(|i| i.end_line)
                    .unwrap_or(0);
                edits.insert_after(after, format!("{block}\n"));
            }
        }
        result.added_imports = rendered;
    }

    // Module-level assignments, fixtures, helpers: only when absent.
    let existing_names = ex.module_names();
    let first_def_line = ex
        .items
        .iter()
        .find(|i| matches!(i.kind, ItemKind::Function(_) | ItemKind::Class(_)))
        .map(|i| i.start_line);
    for item in module_defs {
        let names = item.names();
        let label = names.join(", ");
        if !names.is_empty() && names.iter().all(|n| existing_names.contains(n)) {
            if !item_matches_existing(&cand, item, &ex) {
                result
                    .notices
                    .push(format!("kept the existing definition of `{label}`; the candidate's version differs"));
            }
            continue;
        }
        if names.iter().any(|n| existing_names.contains(n)) {
            result
                .notices
                .push(format!("skipped `{label}`: it would rebind a name the file already defines"));
            continue;
        }
        let text = ensure_newline(cand.item_text(item).to_string());
        match first_def_line {
            Some(line) => edits.insert_after(line - 1, format!("{text}\n\n")),
            None => edits.insert_after(u32::MAX, format!("\n\n{text}")),
        }
        result.added_defs.push(label);
    }

    match plan.mode {
        IntegrationMode::NewTest => {
            merge_new_tests(plan, &cand, &ex, &tests, &test_classes, &mut edits, &mut result)?
        }
        IntegrationMode::ExtendExisting => merge_extension(plan, &cand, &ex, &tests, &mut edits, &mut result)?,
    }

    let merged = edits.apply(existing);
    check_parses(&merged, &plan.file)?;
    result.merged_file = merged;
    Ok(result)
}

fn item_matches_existing(cand: &PyModule, item: &Item, ex: &PyModule) -> bool {
    let want = normalize_code(cand.item_text(item));
    ex.items
        .iter()
        .any(|i| i.names() == item.names() && normalize_code(ex.item_text(i)) == want)
}

fn merge_new_tests(
    plan: &IntegrationPlan,
    cand: &PyModule,
    ex: &PyModule,
    tests: &[(Option<&ClassInfo>, &Item, &FunctionInfo)],
    test_classes: &[(&Item, &ClassInfo)],
    edits: &mut Edits,
    result: &mut MergeResult,
) -> Result<(), MergeError> {
    let target_class = plan.class_name.as_deref().and_then(|c| ex.class(c));
    if plan.class_name.is_some() && target_class.is_none() {
        return Err(MergeError::MissingTarget(plan.class_name.clone().unwrap_or_default()));
    }

    match target_class {
        Some((citem, c)) => {
            let indent = member_indent(ex, c, citem);
            let anchor = c.members.last().map(|m| m.end_line).unwrap_or(c.header_end_line);
            let mut chunks = Vec::new();
            // Fixture/setup methods and helpers of the candidate's own class.
            for (_, cc) in test_classes {
                for member in &cc.members {
                    let name = match &member.kind {
                        ItemKind::Function(f) if !f.is_test() => f.name.clone(),
                        _ => continue,
                    };
                    let ItemKind::Function(f) = &member.kind else { unreachable!() };
                    let text = function_text(cand, member, f, &indent, true)?;
                    match c.member(&name) {
                        Some(existing) => {
                            if normalize_code(ex.item_text(existing)) != normalize_code(&text) {
                                result.notices.push(format!(
                                    "kept the existing `{name}` of `{}`; the candidate's version differs",
                                    c.name
                                ));
                            }
                        }
                        None => {
                            chunks.push(text);
                            result.added_defs.push(format!("{}.{name}", c.name));
                        }
                    }
                }
            }
            for (_, item, f) in tests {
                let text = function_text(cand, item, f, &indent, true)?;
                if let Some(existing) = c.member(&f.name) {
                    if normalize_code(ex.item_text(existing)) == normalize_code(&text) {
                        continue;
                    }
                    return Err(MergeError::NameCollision(format!("{}.{}", c.name, f.name)));
                }
                chunks.push(text);
            }
            for chunk in chunks {
                edits.insert_after(anchor, format!("\n{chunk}"));
            }
        }
        None => {
            let names = ex.module_names();
            // New module-level tests go before a trailing `__main__` guard.
            let tail = match ex.items.iter().position(|i| matches!(i.kind, ItemKind::MainGuard)) {
                Some(0) => 0,
                Some(g) => ex.items[g - 1].end_line,
                None => u32::MAX,
            };
            // Candidate test classes move over whole; bare test functions
            // go to module level.
            for (citem, c) in test_classes {
                if names.contains(&c.name) {
                    if normalize_code(cand.item_text(citem)) == normalize_code(
                        ex.top_level(&c.name).map(|i| ex.item_text(i)).unwrap_or(""),
                    ) {
                        continue;
                    }
                    return Err(MergeError::NameCollision(c.name.clone()));
                }
                edits.insert_after(tail, format!("\n\n{}", ensure_newline(cand.item_text(citem).to_string())));
            }
            for (owner, item, f) in tests {
                if owner.is_some() {
                    continue;
                }
                let text = function_text(cand, item, f, "", false)?;
                if let Some(existing) = ex.top_level(&f.name) {
                    if normalize_code(ex.item_text(existing)) == normalize_code(&text) {
                        continue;
                    }
                    return Err(MergeError::NameCollision(f.name.clone()));
                }
                edits.insert_after(tail, format!("\n\n{text}"));
            }
        }
    }
    Ok(())
}

fn merge_extension(
    plan: &IntegrationPlan,
    cand: &PyModule,
    ex: &PyModule,
    tests: &[(Option<&ClassInfo>, &Item, &FunctionInfo)],
    edits: &mut Edits,
    result: &mut MergeResult,
) -> Result<(), MergeError> {
    let (titem, target) = find_function(ex, plan.class_name.as_deref(), &plan.method_name)
        .ok_or_else(|| MergeError::MissingTarget(plan.method_name.clone()))?;
    let (_, _, test) = tests[0];
    if tests.len() > 1 {
        result
            .notices
            .push(format!("only the body of `{}` was appended; other candidate tests were ignored", test.name));
    }
    let Some(&(first, _)) = test.body.first() else {
        return Ok(());
    };
    let last = test.body.last().map(|&(_, e)| e).unwrap_or(first);
    let from = cand.indent_of_line(first).to_string();
    let to = target
        .body
        .first()
        .map(|&(l, _)| ex.indent_of_line(l).to_string())
        .unwrap_or_else(|| format!("{}    ", ex.indent_of_line(titem.start_line)));
    let block = cand.reindent(first, last, &from, &to);

    let body_text = match (target.body.first(), target.body.last()) {
        (Some(&(s, _)), Some(&(_, e))) => ex.lines_text(s, e).to_string(),
        _ => String::new(),
    };
    if normalize_code(&body_text).ends_with(&normalize_code(&block)) {
        return Ok(());
    }
    if target.is_parametrized() {
        result.notices.push(format!(
            "`{}` is parametrized; the appended statements run once per parameter set",
            plan.method_name
        ));
    }
    edits.insert_after(titem.end_line, block);
    Ok(())
}

/// Unified diff of the test file before and after the merge.
pub fn test_patch(path: &str, before: &str, after: &str) -> String {
    TextDiff::from_lines(before, after)
        .unified_diff()
        .context_radius(3)
        .header(&format!("a/{path}"), &format!("b/{path}"))
        .to_string()
}
