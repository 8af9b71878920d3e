//! PR context enrichment: summarize the PR page, then repeatedly let the
//! model pick an outgoing link, fetch it and fold it into the summary.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::change::{ChangeKind, PullRequest};
use crate::llm::{LlmError, LlmGateway, Message, Role};
use crate::provenance::{sha256_hex, ProvenanceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LinkCategory {
    Doc,
    Forum,
    IssueOrPr,
    Nav,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkCandidate {
    pub url: String,
    pub anchor_text: String,
    pub category: LinkCategory,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrContextSummary {
    pub summary: String,
    pub visited_urls: Vec<String>,
    pub llm_call_ids: Vec<String>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnrichConfig {
    pub max_links: usize,
    pub max_page_chars: usize,
}

impl Default for EnrichConfig {
    fn default() -> Self {
        EnrichConfig {
            max_links: 3,
            max_page_chars: 20_000,
        }
    }
}

const FORGE_HOSTS: &[&str] = &["github.com", "gitlab.com", "bitbucket.org", "codeberg.org"];

const FORGE_NAV_SEGMENTS: &[&str] = &[
    "pulls", "commits", "labels", "milestones", "actions", "network", "graphs", "pulse",
    "settings", "stargazers", "watchers", "forks", "search", "compare", "branches", "tags",
    "releases", "projects", "security", "wiki",
];

const FORGE_ACCOUNT_PAGES: &[&str] = &[
    "login", "logout", "join", "signup", "settings", "notifications", "marketplace", "explore",
    "topics", "sponsors", "orgs", "features", "pricing", "about", "search",
];

const FORUM_HOSTS: &[&str] = &[
    "stackoverflow.com",
    "stackexchange.com",
    "mail.python.org",
    "groups.google.com",
    "reddit.com",
    "mail.scipy.org",
];

struct UrlParts<'a> {
    host: String,
    segments: Vec<&'a str>,
    has_query: bool,
}

fn split_url(url: &str) -> UrlParts<'_> {
    let rest = url.split_once("://").map(|(_, r)| r).unwrap_or(url);
    let rest = rest.split('#').next().unwrap_or(rest);
    let (before_query, has_query) = match rest.split_once('?') {
        Some((b, _)) => (b, true),
        None => (rest, false),
    };
    let (host, path) = before_query.split_once('/').unwrap_or((before_query, ""));
    let host = host.rsplit('@').next().unwrap_or(host);
    let host = host.split(':').next().unwrap_or(host).to_ascii_lowercase();
    let host = host.strip_prefix("www.").map(str::to_string).unwrap_or(host);
    UrlParts {
        host,
        segments: path.split('/').filter(|s| !s.is_empty()).collect(),
        has_query,
    }
}

fn host_matches(host: &str, pattern: &str) -> bool {
    host == pattern || host.ends_with(&format!(".{pattern}"))
}

pub fn categorize_url(url: &str) -> LinkCategory {
    let u = split_url(url);
    let segs: Vec<String> = u.segments.iter().map(|s| s.to_ascii_lowercase()).collect();
    if FORGE_HOSTS.iter().any(|h| host_matches(&u.host, h)) {
        match segs.as_slice() {
            [] => return LinkCategory::Nav,
            [one] if FORGE_ACCOUNT_PAGES.contains(&one.as_str()) || !u.has_query => {
                return LinkCategory::Nav
            }
            [first, ..] if FORGE_ACCOUNT_PAGES.contains(&first.as_str()) => {
                return LinkCategory::Nav
            }
            _ => {}
        }
        if segs.len() >= 3 {
            let kind = segs[2].as_str();
            let numbered = segs.get(3).is_some_and(|s| s.chars().all(|c| c.is_ascii_digit()));
            match kind {
                "issues" | "pull" | "merge_requests" if numbered => return LinkCategory::IssueOrPr,
                "issues" | "pull" | "merge_requests" => return LinkCategory::Nav,
                "discussions" => return LinkCategory::Forum,
                k if FORGE_NAV_SEGMENTS.contains(&k) => return LinkCategory::Nav,
                "-" if segs.get(3).is_some_and(|s| s == "issues" || s == "merge_requests") => {
                    return if segs.get(4).is_some_and(|s| s.chars().all(|c| c.is_ascii_digit())) {
                        LinkCategory::IssueOrPr
                    } else {
                        LinkCategory::Nav
                    };
                }
                _ => {}
            }
        }
        if segs.len() == 2 {
            // Repository landing page.
            return LinkCategory::Nav;
        }
    }
    if FORUM_HOSTS.iter().any(|h| host_matches(&u.host, h))
        || u.host.starts_with("discuss.")
        || u.host.starts_with("discourse.")
        || u.host.starts_with("forum.")
        || u.host.starts_with("forums.")
    {
        return LinkCategory::Forum;
    }
    if u.host.starts_with("docs.")
        || u.host.ends_with(".readthedocs.io")
        || host_matches(&u.host, "readthedocs.org")
        || segs.iter().any(|s| s == "docs" || s == "doc" || s == "manual")
    {
        return LinkCategory::Doc;
    }
    LinkCategory::Other
}

static LINK_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r#"\[([^\]]*)\]\((https?://[^)\s]+)\)|<(https?://[^>\s]+)>|(https?://[^\s<>()\[\]"'`]+)"#,
    )
    .unwrap()
});

fn trim_url(url: &str) -> &str {
    url.trim_end_matches(['.', ',', ';', ':', '!', '?'])
}

/// Links in order of first appearance: those in `page_markdown`, then any
/// declared PR links not already found.
pub fn extract_links(pr: &PullRequest, page_markdown: &str) -> Vec<LinkCandidate> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut push = |url: &str, anchor: &str| {
        let url = trim_url(url);
        if seen.insert(url.to_string()) {
            out.push(LinkCandidate {
                url: url.to_string(),
                anchor_text: anchor.to_string(),
                category: categorize_url(url),
            });
        }
    };
    for cap in LINK_RE.captures_iter(page_markdown) {
        if let Some(url) = cap.get(2) {
            push(url.as_str(), cap.get(1).map_or("", |m| m.as_str()));
        } else if let Some(url) = cap.get(3).or_else(|| cap.get(4)) {
            push(url.as_str(), "");
        }
    }
    for link in &pr.meta.links {
        push(link, "");
    }
    out
}

/// Markdown rendering of the PR used when no page capture is supplied.
pub fn render_pr_markdown(pr: &PullRequest) -> String {
    let mut s = format!("# {} (#{})\n\n", pr.meta.title, pr.meta.id);
    if !pr.meta.body.trim().is_empty() {
        s.push_str(pr.meta.body.trim_end());
        s.push_str("\n\n");
    }
    if !pr.diff.files.is_empty() {
        s.push_str("## Files changed\n\n");
        for f in &pr.diff.files {
            let verb = match f.change {
                ChangeKind::Added => "added",
                ChangeKind::Modified => "modified",
                ChangeKind::Deleted => "deleted",
            };
            s.push_str(&format!("- `{}` ({verb}, {} lines)\n", f.path, f.touched_lines.len()));
        }
        s.push('\n');
    }
    if !pr.meta.comments.is_empty() {
        s.push_str("## Comments\n\n");
        for c in &pr.meta.comments {
            s.push_str(&format!("**{}**: {}\n\n", c.author, c.text.trim_end()));
        }
    }
    s
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FetchError {
    #[error("not available: {0}")]
    NotFound(String),
    #[error("fetch failed: {0}")]
    Failed(String),
}

pub trait Fetcher: Send + Sync {
    /// Markdown text of the page at `url`.
    fn fetch(&self, url: &str) -> Result<String, FetchError>;
}

/// Serves pre-captured pages. `index.json` in the directory maps URLs to
/// file names.
#[derive(Debug, Clone, Default)]
pub struct MapFetcher {
    pages: BTreeMap<String, String>,
}

impl MapFetcher {
    pub fn new(pages: BTreeMap<String, String>) -> Self {
        MapFetcher { pages }
    }

    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let index = dir.join("index.json");
        if !index.exists() {
            return Ok(Self::default());
        }
        let map: BTreeMap<String, String> =
            serde_json::from_str(&fs::read_to_string(&index)?).map_err(std::io::Error::other)?;
        let mut pages = BTreeMap::new();
        for (url, file) in map {
            pages.insert(url, fs::read_to_string(dir.join(file))?);
        }
        Ok(MapFetcher { pages })
    }
}

impl Fetcher for MapFetcher {
    fn fetch(&self, url: &str) -> Result<String, FetchError> {
        self.pages
            .get(url)
            .cloned()
            .ok_or_else(|| FetchError::NotFound(url.to_string()))
    }
}

/// Runs `program args.. URL` and takes its stdout as the page markdown.
pub struct CommandFetcher {
    program: PathBuf,
    args: Vec<String>,
}

impl CommandFetcher {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        CommandFetcher {
            program: program.into(),
            args,
        }
    }
}

impl Fetcher for CommandFetcher {
    fn fetch(&self, url: &str) -> Result<String, FetchError> {
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(url)
            .output()
            .map_err(|e| FetchError::Failed(e.to_string()))?;
        if !out.status.success() {
            return Err(FetchError::Failed(format!(
                "{}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    }
}

const SUMMARIZE_SYSTEM: &str = "You are reviewing a pull request. Write a concise technical \
summary of what the change does, why it was made, and any behaviour a regression test should pin down.";

const SELECT_SYSTEM: &str = "You are gathering background for a pull request. Pick the one link \
most likely to explain the intended behaviour of the change, preferring official documentation, \
community discussions and technical guides. Answer with the link's number only, or NONE if no \
link is worth reading.";

pub fn truncate_chars(text: &str, max: usize) -> String {
    match text.char_indices().nth(max) {
        Some((i, _)) => format!("{}\n[truncated]", &text[..i]),
        None => text.to_string(),
    }
}

/// Index into a list of `len` items, or `None` for a decline or anything
/// unparseable.
pub fn parse_link_choice(response: &str, len: usize) -> Option<usize> {
    static NONE_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bNONE\b").unwrap());
    static NUM_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").unwrap());
    if NONE_RE.is_match(response) {
        return None;
    }
    let n: usize = NUM_RE.find(response)?.as_str().parse().ok()?;
    (n < len).then_some(n)
}

pub fn enrich_context(
    pr: &PullRequest,
    page_markdown: &str,
    fetcher: &dyn Fetcher,
    llm: &LlmGateway,
    cfg: &EnrichConfig,
) -> Result<PrContextSummary, LlmError> {
    let page = truncate_chars(page_markdown, cfg.max_page_chars);
    let mut out = PrContextSummary::default();

    let first = llm.complete(
        Role::SummarizePr,
        vec![
            Message::system(SUMMARIZE_SYSTEM),
            Message::user(format!("Pull request page:\n\n{page}")),
        ],
    )?;
    out.llm_call_ids.push(first.call_id);
    out.summary = first.text.trim().to_string();

    let mut remaining: Vec<LinkCandidate> = extract_links(pr, page_markdown)
        .into_iter()
        .filter(|c| c.category != LinkCategory::Nav)
        .collect();

    while out.visited_urls.len() < cfg.max_links && !remaining.is_empty() {
        let listing: String = remaining
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let anchor = if c.anchor_text.is_empty() { "-" } else { &c.anchor_text };
                format!("{i}. {} [{anchor}]\n", c.url)
            })
            .collect();
        let choice = llm.complete(
            Role::SelectLink,
            vec![
                Message::system(SELECT_SYSTEM),
                Message::user(format!(
                    "Current summary:\n\n{}\n\nCandidate links:\n\n{listing}",
                    out.summary
                )),
            ],
        )?;
        out.llm_call_ids.push(choice.call_id);
        let Some(idx) = parse_link_choice(&choice.text, remaining.len()) else {
            break;
        };
        let link = remaining.remove(idx);
        let mut rec = ProvenanceRecord::fetch(&link.url);
        match fetcher.fetch(&link.url) {
            Err(e) => {
                log::warn!("skipping {}: {e}", link.url);
                rec.error = Some(e.to_string());
                llm.provenance().append(rec).map_err(LlmError::Io)?;
                continue;
            }
            Ok(text) => {
                rec.content_hash = Some(sha256_hex(&text));
                llm.provenance().append(rec).map_err(LlmError::Io)?;
                out.visited_urls.push(link.url.clone());
                let fetched = truncate_chars(&text, cfg.max_page_chars);
                let next = llm.complete(
                    Role::SummarizePr,
                    vec![
                        Message::system(SUMMARIZE_SYSTEM),
                        Message::user(format!(
                            "Pull request page:\n\n{page}\n\nSummary so far:\n\n{}\n\n\
                             Content of {}:\n\n{fetched}\n\nUpdate the summary with anything relevant.",
                            out.summary, link.url
                        )),
                    ],
                )?;
                out.llm_call_ids.push(next.call_id);
                out.summary = next.text.trim().to_string();
            }
        }
    }
    out.iterations = out.visited_urls.len();
    Ok(out)
}
