//! Line-oriented outline of Python test modules.
//!
//! Parsing is delegated to `rustpython-parser`; this module turns its AST
//! into line-granular items (imports, assignments, defs, classes) so that
//! callers can slice or splice the original text without reformatting it.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use rustpython_parser::ast::{self, Ranged};
use rustpython_parser::{lexer, Mode, Parse, Tok};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{origin}: Python parse error: {message}")]
pub struct ParseFailure {
    pub origin: String,
    pub message: String,
}

pub fn check_parses(text: &str, origin: &str) -> Result<(), ParseFailure> {
    ast::Suite::parse(text, origin)
        .map(|_| ())
        .map_err(|e| ParseFailure {
            origin: origin.to_string(),
            message: e.to_string(),
        })
}

/// One imported binding: `import module as asname` or
/// `from module import name as asname`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ImportUnit {
    /// `Some` for `from` imports, including leading dots of relative imports.
    pub from: Option<String>,
    pub name: String,
    pub asname: Option<String>,
}

impl ImportUnit {
    /// Name bound in the importing scope.
    pub fn bound_name(&self) -> String {
        match (&self.asname, &self.from) {
            (Some(a), _) => a.clone(),
            (None, Some(_)) => self.name.clone(),
            (None, None) => self.name.split('.').next().unwrap_or(&self.name).to_string(),
        }
    }

    fn alias_text(&self) -> String {
        match &self.asname {
            Some(a) => format!("{} as {}", self.name, a),
            None => self.name.clone(),
        }
    }
}

/// Render import units as whitespace-normalized statements, grouping
/// consecutive `from` units that share a module.
pub fn render_imports(units: &[ImportUnit]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut i = 0;
    while i < units.len() {
        match &units[i].from {
            None => {
                out.push(format!("import {}", units[i].alias_text()));
                i += 1;
            }
            Some(module) => {
                let mut names = vec![units[i].alias_text()];
                let mut j = i + 1;
                while j < units.len() && units[j].from.as_deref() == Some(module.as_str()) {
                    names.push(units[j].alias_text());
                    j += 1;
                }
                out.push(format!("from {module} import {}", names.join(", ")));
                i = j;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionInfo {
    pub name: String,
    pub decorators: Vec<String>,
    /// Name of the first positional parameter, if any.
    pub first_param: Option<String>,
    /// Byte span to delete to drop the first parameter (incl. trailing comma).
    pub first_param_removal: Option<(usize, usize)>,
    /// Byte offset just after the opening parenthesis of the signature.
    pub params_open: usize,
    pub has_params: bool,
    /// Names of all declared parameters, in order.
    pub params: Vec<String>,
    /// Line ranges of body statements, docstring excluded.
    pub body: Vec<(u32, u32)>,
    pub has_docstring: bool,
}

impl FunctionInfo {
    pub fn is_test(&self) -> bool {
        self.name.starts_with("test")
    }

    pub fn is_fixture(&self) -> bool {
        self.decorators.iter().any(|d| d.contains("fixture"))
            || FIXTURE_METHODS.contains(&self.name.as_str())
    }

    pub fn is_parametrized(&self) -> bool {
        self.decorators.iter().any(|d| d.contains("parametrize"))
    }
}

pub const FIXTURE_METHODS: &[&str] = &[
    "setup_method",
    "teardown_method",
    "setup_class",
    "teardown_class",
    "setup",
    "teardown",
    "setUp",
    "tearDown",
    "setUpClass",
    "tearDownClass",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassInfo {
    pub name: String,
    /// Last line of the class header (decorators and `class ...:`).
    pub header_end_line: u32,
    pub members: Vec<Item>,
}

impl ClassInfo {
    pub fn member(&self, name: &str) -> Option<&Item> {
        self.members.iter().find(|m| m.name() == Some(name))
    }

    pub fn function(&self, name: &str) -> Option<(&Item, &FunctionInfo)> {
        self.members.iter().find_map(|m| match &m.kind {
            ItemKind::Function(f) if f.name == name => Some((m, f)),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ItemKind {
    Import(Vec<ImportUnit>),
    /// Assignment with its simple target names.
    Assign(Vec<String>),
    Function(FunctionInfo),
    Class(ClassInfo),
    Docstring,
    /// `if __name__ == "__main__":`
    MainGuard,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Item {
    pub kind: ItemKind,
    /// 1-based inclusive line span, decorators included.
    pub start_line: u32,
    pub end_line: u32,
}

impl Item {
    pub fn name(&self) -> Option<&str> {
        match &self.kind {
            ItemKind::Function(f) => Some(&f.name),
            ItemKind::Class(c) => Some(&c.name),
            _ => None,
        }
    }

    pub fn names(&self) -> Vec<String> {
        match &self.kind {
            ItemKind::Function(f) => vec![f.name.clone()],
            ItemKind::Class(c) => vec![c.name.clone()],
            ItemKind::Assign(t) => t.clone(),
            ItemKind::Import(units) => units.iter().map(|u| u.bound_name()).collect(),
            _ => vec![],
        }
    }
}

/// Parsed outline of a Python module with line bookkeeping.
#[derive(Debug, Clone)]
pub struct PyModule {
    text: String,
    line_starts: Vec<usize>,
    string_interior: BTreeSet<u32>,
    pub items: Vec<Item>,
}

static IDENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[A-Za-z_][A-Za-z0-9_]*").unwrap());

pub fn identifiers(text: &str) -> BTreeSet<String> {
    IDENT.find_iter(text).map(|m| m.as_str().to_string()).collect()
}

impl PyModule {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ParseFailure> {
        let suite = ast::Suite::parse(text, origin).map_err(|e| ParseFailure {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        let mut line_starts = vec![0];
        line_starts.extend(text.match_indices('\n').map(|(i, _)| i + 1));
        let mut module = PyModule {
            text: text.to_string(),
            line_starts,
            string_interior: BTreeSet::new(),
            items: Vec::new(),
        };
        module.string_interior = module.string_interior_lines();
        module.items = suite.iter().map(|s| module.item(s, true)).collect();
        Ok(module)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn line_count(&self) -> u32 {
        let n = self.line_starts.len();
        if self.text.ends_with('\n') || self.text.is_empty() {
            (n - 1) as u32
        } else {
            n as u32
        }
    }

    fn line_of(&self, offset: usize) -> u32 {
        match self.line_starts.binary_search(&offset) {
            Ok(i) => i as u32 + 1,
            Err(i) => i as u32,
        }
    }

    /// Byte offset where `line` starts.
    pub fn line_start(&self, line: u32) -> usize {
        self.line_starts
            .get(line as usize - 1)
            .copied()
            .unwrap_or(self.text.len())
    }

    /// Byte offset just past `line`, including its terminator.
    pub fn line_end(&self, line: u32) -> usize {
        self.line_starts
            .get(line as usize)
            .copied()
            .unwrap_or(self.text.len())
    }

    pub fn lines_text(&self, start: u32, end: u32) -> &str {
        &self.text[self.line_start(start)..self.line_end(end)]
    }

    pub fn item_text(&self, item: &Item) -> &str {
        self.lines_text(item.start_line, item.end_line)
    }

    pub fn line(&self, line: u32) -> &str {
        self.lines_text(line, line)
    }

    pub fn indent_of_line(&self, line: u32) -> &str {
        let l = self.line(line);
        &l[..l.len() - l.trim_start().len()]
    }

    pub fn is_string_interior(&self, line: u32) -> bool {
        self.string_interior.contains(&line)
    }

    /// Lines that begin inside a multi-line string literal; re-indenting
    /// them would change the string's value.
    fn string_interior_lines(&self) -> BTreeSet<u32> {
        let mut out = BTreeSet::new();
        for tok in lexer::lex(&self.text, Mode::Module).flatten() {
            if let (Tok::String { .. }, range) = tok {
                let (s, e) = (range.start().to_usize(), range.end().to_usize());
                let first = self.line_of(s);
                let last = self.line_of(e.saturating_sub(1));
                for l in first + 1..=last {
                    out.insert(l);
                }
            }
        }
        out
    }

    fn item(&self, stmt: &ast::Stmt, top_level: bool) -> Item {
        let range = stmt.range();
        let mut start = range.start().to_usize();
        let decorators: &[ast::Expr] = match stmt {
            ast::Stmt::FunctionDef(f) => &f.decorator_list,
            ast::Stmt::AsyncFunctionDef(f) => &f.decorator_list,
            ast::Stmt::ClassDef(c) => &c.decorator_list,
            _ => &[],
        };
        for d in decorators {
            start = start.min(d.range().start().to_usize());
        }
        let start_line = self.line_of(start);
        let end_line = self.line_of(range.end().to_usize().saturating_sub(1).max(start));
        let decorator_texts = || {
            decorators
                .iter()
                .map(|d| self.text[d.range()].to_string())
                .collect::<Vec<_>>()
        };

        let kind = match stmt {
            ast::Stmt::Import(imp) => ItemKind::Import(
                imp.names
                    .iter()
                    .map(|a| ImportUnit {
                        from: None,
                        name: a.name.to_string(),
                        asname: a.asname.as_ref().map(|s| s.to_string()),
                    })
                    .collect(),
            ),
            ast::Stmt::ImportFrom(imp) => {
                let level = imp.level.map(|l| l.to_u32()).unwrap_or(0) as usize;
                let module = format!(
                    "{}{}",
                    ".".repeat(level),
                    imp.module.as_ref().map(|m| m.as_str()).unwrap_or("")
                );
                ItemKind::Import(
                    imp.names
                        .iter()
                        .map(|a| ImportUnit {
                            from: Some(module.clone()),
                            name: a.name.to_string(),
                            asname: a.asname.as_ref().map(|s| s.to_string()),
                        })
                        .collect(),
                )
            }
            ast::Stmt::Assign(a) => {
                ItemKind::Assign(a.targets.iter().flat_map(target_names).collect())
            }
            ast::Stmt::AnnAssign(a) => ItemKind::Assign(target_names(&a.target)),
            ast::Stmt::AugAssign(a) => ItemKind::Assign(target_names(&a.target)),
            ast::Stmt::FunctionDef(f) => ItemKind::Function(self.function_info(
                f.name.as_str(),
                &f.args,
                &f.body,
                range.start().to_usize(),
                decorator_texts(),
            )),
            ast::Stmt::AsyncFunctionDef(f) => ItemKind::Function(self.function_info(
                f.name.as_str(),
                &f.args,
                &f.body,
                range.start().to_usize(),
                decorator_texts(),
            )),
            ast::Stmt::ClassDef(c) => {
                let members: Vec<Item> = c.body.iter().map(|s| self.item(s, false)).collect();
                let first_body_line = members.first().map(|m| m.start_line).unwrap_or(end_line);
                let header_end_line = if first_body_line > start_line {
                    first_body_line - 1
                } else {
                    start_line
                };
                ItemKind::Class(ClassInfo {
                    name: c.name.to_string(),
                    header_end_line,
                    members,
                })
            }
            ast::Stmt::Expr(e) if is_string_literal(&e.value) => ItemKind::Docstring,
            ast::Stmt::If(i) if top_level && is_main_guard(&i.test) => ItemKind::MainGuard,
            _ => ItemKind::Other,
        };
        Item {
            kind,
            start_line,
            end_line,
        }
    }

    fn function_info(
        &self,
        name: &str,
        args: &ast::Arguments,
        body: &[ast::Stmt],
        def_start: usize,
        decorators: Vec<String>,
    ) -> FunctionInfo {
        let after_name = self.text[def_start..]
            .find(name)
            .map(|i| def_start + i + name.len())
            .unwrap_or(def_start);
        let params_open = self.text[after_name..]
            .find('(')
            .map(|i| after_name + i + 1)
            .unwrap_or(after_name);
        let positional: Vec<&ast::Arg> = args
            .posonlyargs
            .iter()
            .chain(args.args.iter())
            .map(|a| &a.def)
            .collect();
        let first_param = positional.first().map(|a| a.arg.to_string());
        let first_param_removal = positional.first().map(|a| {
            let s = a.range.start().to_usize();
            let mut e = a.range.end().to_usize();
            // include a default value, if any
            if let Some(d) = args
                .posonlyargs
                .iter()
                .chain(args.args.iter())
                .next()
                .and_then(|a| a.default.as_ref())
            {
                e = e.max(d.range().end().to_usize());
            }
            let rest = &self.text[e..];
            let trimmed = rest.trim_start();
            if let Some(after_comma) = trimmed.strip_prefix(',') {
                let skip_ws = after_comma.len() - after_comma.trim_start().len();
                e += rest.len() - trimmed.len() + 1 + skip_ws;
            }
            (s, e)
        });
        let has_params = !positional.is_empty()
            || args.vararg.is_some()
            || !args.kwonlyargs.is_empty()
            || args.kwarg.is_some();

        let params = args
            .posonlyargs
            .iter()
            .chain(args.args.iter())
            .chain(args.kwonlyargs.iter())
            .map(|a| a.def.arg.to_string())
            .chain(args.vararg.iter().map(|a| a.arg.to_string()))
            .chain(args.kwarg.iter().map(|a| a.arg.to_string()))
            .collect();
        let has_docstring = matches!(body.first(), Some(ast::Stmt::Expr(e)) if is_string_literal(&e.value));
        let body = body
            .iter()
            .skip(usize::from(has_docstring))
            .map(|s| {
                let it = self.item(s, false);
                (it.start_line, it.end_line)
            })
            .collect();
        FunctionInfo {
            name: name.to_string(),
            decorators,
            first_param,
            first_param_removal,
            params_open,
            has_params,
            params,
            body,
            has_docstring,
        }
    }

    pub fn top_level(&self, name: &str) -> Option<&Item> {
        self.items.iter().find(|i| i.name() == Some(name))
    }

    pub fn class(&self, name: &str) -> Option<(&Item, &ClassInfo)> {
        self.items.iter().find_map(|i| match &i.kind {
            ItemKind::Class(c) if c.name == name => Some((i, c)),
            _ => None,
        })
    }

    pub fn function(&self, name: &str) -> Option<(&Item, &FunctionInfo)> {
        self.items.iter().find_map(|i| match &i.kind {
            ItemKind::Function(f) if f.name == name => Some((i, f)),
            _ => None,
        })
    }

    pub fn imports(&self) -> impl Iterator<Item = (&Item, &Vec<ImportUnit>)> {
        self.items.iter().filter_map(|i| match &i.kind {
            ItemKind::Import(u) => Some((i, u)),
            _ => None,
        })
    }

    pub fn import_units(&self) -> BTreeSet<ImportUnit> {
        self.imports().flat_map(|(_, u)| u.iter().cloned()).collect()
    }

    /// Names bound at module level by assignments and defs.
    pub fn module_names(&self) -> BTreeSet<String> {
        self.items.iter().flat_map(|i| i.names()).collect()
    }

    /// Re-indent lines `start..=end` from `from` to `to` leading whitespace.
    /// Lines inside multi-line strings are copied verbatim.
    pub fn reindent(&self, start: u32, end: u32, from: &str, to: &str) -> String {
        let mut out = String::new();
        for line in start..=end {
            let raw = self.line(line);
            if self.is_string_interior(line) {
                out.push_str(raw);
                continue;
            }
            let content = raw.trim_end_matches(['\n', '\r']);
            if content.trim().is_empty() {
                out.push_str(&raw[content.len()..]);
                continue;
            }
            let rest = content.strip_prefix(from).unwrap_or_else(|| content.trim_start());
            out.push_str(to);
            out.push_str(rest);
            out.push('\n');
        }
        out
    }
}

fn target_names(expr: &ast::Expr) -> Vec<String> {
    match expr {
        ast::Expr::Name(n) => vec![n.id.to_string()],
        ast::Expr::Tuple(t) => t.elts.iter().flat_map(target_names).collect(),
        ast::Expr::List(l) => l.elts.iter().flat_map(target_names).collect(),
        ast::Expr::Starred(s) => target_names(&s.value),
        _ => vec![],
    }
}

fn is_string_literal(expr: &ast::Expr) -> bool {
    matches!(expr, ast::Expr::Constant(c) if matches!(c.value, ast::Constant::Str(_)))
}

fn is_main_guard(test: &ast::Expr) -> bool {
    match test {
        ast::Expr::Compare(c) => {
            matches!(&*c.left, ast::Expr::Name(n) if n.id.as_str() == "__name__")
        }
        _ => false,
    }
}

/// Whitespace-insensitive form used to compare code fragments.
pub fn normalize_code(text: &str) -> String {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Path → dotted module name (`pkg/tests/test_a.py` → `pkg.tests.test_a`).
pub fn module_name(path: &str) -> String {
    let stem = path
        .strip_suffix(".py")
        .unwrap_or(path)
        .trim_start_matches("./");
    let stem = stem.strip_suffix("/__init__").unwrap_or(stem);
    stem.replace('/', ".")
}

#[cfg(test)]
mod tests {
    use super::*;

    const FILE: &str = r#""""Module docstring."""
import numpy as np
from numpy.testing import (assert_allclose,
                           assert_equal)

dtypes = [np.float32, np.float64]


@pytest.fixture
def rng():
    return np.random.default_rng(0)


class TestThing:
    """Doc."""

    def setup_method(self):
        np.random.seed(1234)

    @pytest.mark.parametrize("dt", dtypes)
    def test_one(self, dt, rng=None):
        text = """
inner
"""
        assert_equal(1, 1)


if __name__ == "__main__":
    pass
"#;

    #[test]
    fn outline_items() {
        let m = PyModule::parse(FILE, "t.py").unwrap();
        let kinds: Vec<&str> = m
            .items
            .iter()
            .map(|i| match &i.kind {
                ItemKind::Docstring => "doc",
                ItemKind::Import(_) => "import",
                ItemKind::Assign(_) => "assign",
                ItemKind::Function(_) => "def",
                ItemKind::Class(_) => "class",
                ItemKind::MainGuard => "main",
                ItemKind::Other => "other",
            })
            .collect();
        assert_eq!(kinds, ["doc", "import", "import", "assign", "def", "class", "main"]);
        let (item, f) = m.function("rng").unwrap();
        assert_eq!(item.start_line, 9);
        assert!(f.is_fixture());
        let (citem, c) = m.class("TestThing").unwrap();
        assert_eq!(citem.start_line, 14);
        assert_eq!(c.header_end_line, 14);
        let (t_item, t) = c.function("test_one").unwrap();
        assert_eq!(t_item.start_line, 20);
        assert!(t.is_parametrized());
        assert_eq!(t.first_param.as_deref(), Some("self"));
        assert_eq!(t.body.len(), 2);
        assert!(m.is_string_interior(23));
        assert!(m.is_string_interior(24));
        assert!(!m.is_string_interior(25));
        assert!(c.function("setup_method").unwrap().1.is_fixture());
    }

    #[test]
    fn import_units_and_rendering() {
        let m = PyModule::parse("import os.path\nimport numpy as np\nfrom . import a\nfrom ..x import (b as c, d)\n", "t").unwrap();
        let units: Vec<ImportUnit> = m.imports().flat_map(|(_, u)| u.clone()).collect();
        assert_eq!(units[0].bound_name(), "os");
        assert_eq!(units[1].bound_name(), "np");
        assert_eq!(units[3].from.as_deref(), Some("..x"));
        assert_eq!(units[3].bound_name(), "c");
        assert_eq!(
            render_imports(&units),
            ["import os.path", "import numpy as np", "from . import a", "from ..x import b as c, d"]
        );
    }

    #[test]
    fn reindent_keeps_string_interiors() {
        let m = PyModule::parse(FILE, "t.py").unwrap();
        let out = m.reindent(20, 25, "    ", "");
        assert!(out.starts_with("@pytest.mark.parametrize"));
        assert!(out.contains("\n    text = \"\"\"\ninner\n\"\"\"\n    assert_equal"));
    }

    #[test]
    fn first_param_removal_span() {
        let src = "def f(self, a):\n    pass\ndef g(self):\n    pass\n";
        let m = PyModule::parse(src, "t").unwrap();
        let (_, f) = m.function("f").unwrap();
        let (s, e) = f.first_param_removal.unwrap();
        assert_eq!(&src[s..e], "self, ");
        let (_, g) = m.function("g").unwrap();
        let (s, e) = g.first_param_removal.unwrap();
        assert_eq!(&src[s..e], "self");
    }

    #[test]
    fn parse_failure_is_reported() {
        assert!(check_parses("def f(:\n", "x").is_err());
        assert!(PyModule::parse("class A:\npass\n", "x").is_err());
    }

    #[test]
    fn module_names_from_paths() {
        assert_eq!(module_name("pkg/tests/test_a.py"), "pkg.tests.test_a");
        assert_eq!(module_name("pkg/__init__.py"), "pkg");
    }
}
