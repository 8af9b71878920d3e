//! Dynamic call graph recorded by a profiler run over selected test files.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::coverage::{versioned, SchemaError, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CallEdge {
    pub caller: String,
    pub callee: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallTrace {
    pub schema_version: u32,
    #[serde(default)]
    pub test_roots: BTreeSet<String>,
    #[serde(default)]
    pub edges: Vec<CallEdge>,
}

impl Default for CallTrace {
    fn default() -> Self {
        CallTrace {
            schema_version: SCHEMA_VERSION,
            test_roots: BTreeSet::new(),
            edges: Vec::new(),
        }
    }
}

impl CallTrace {
    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        versioned(text)
    }

    pub fn from_edges<'a>(edges: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        CallTrace {
            edges: edges
                .into_iter()
                .map(|(a, b)| CallEdge {
                    caller: a.to_string(),
                    callee: b.to_string(),
                })
                .collect(),
            ..Default::default()
        }
    }

    fn callers_by_callee(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut rev: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for e in &self.edges {
            rev.entry(e.callee.as_str()).or_default().push(e.caller.as_str());
        }
        rev
    }
}

/// Every node with a path of length >= 1 to `foc`.
pub fn ancestors_of(trace: &CallTrace, foc: &str) -> BTreeSet<String> {
    let rev = trace.callers_by_callee();
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    let mut queue: VecDeque<&str> = VecDeque::from([foc]);
    while let Some(node) = queue.pop_front() {
        for &caller in rev.get(node).map(Vec::as_slice).unwrap_or(&[]) {
            if seen.insert(caller) {
                queue.push_back(caller);
            }
        }
    }
    seen.into_iter().map(str::to_string).collect()
}
