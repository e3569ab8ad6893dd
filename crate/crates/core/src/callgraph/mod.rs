//! Static call graph, pre-existing call instances and the two traversal
//! orders used by summarization.

mod build;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::index::{IndexError, ProjectIndex};

pub use self::build::build_call_graph;

pub const DEFAULT_INSTANCE_CAP: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CallSite {
    pub file: String,
    pub line: u32,
    pub column: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub caller: String,
    pub callee: String,
    pub call_site: CallSite,
    /// Last line of the statement holding the call (simple statements), or of the call itself.
    pub statement_end_line: u32,
    pub argument_texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeKey {
    pub caller: String,
    pub callee: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallGraph {
    pub nodes: BTreeSet<String>,
    pub edges: BTreeSet<Edge>,
    /// Caller/callee pairs dropped to make the graph acyclic.
    pub broken_edges: BTreeSet<EdgeKey>,
    pub diagnostics: Vec<String>,
}

/// Nodes in caller-first order; `roots` have no retained callers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticsOrder {
    pub order: Vec<String>,
    pub roots: BTreeSet<String>,
}

impl CallGraph {
    /// Builds a graph and breaks its cycles.
    pub fn new(nodes: BTreeSet<String>, edges: BTreeSet<Edge>) -> Self {
        let mut nodes = nodes;
        for e in &edges {
            nodes.insert(e.caller.clone());
            nodes.insert(e.callee.clone());
        }
        let pairs: BTreeSet<EdgeKey> = edges.iter().map(|e| EdgeKey { caller: e.caller.clone(), callee: e.callee.clone() }).collect();
        let broken_edges = break_cycles(&nodes, &pairs);
        Self { nodes, edges, broken_edges, diagnostics: Vec::new() }
    }

    /// Graph from bare caller/callee pairs with synthetic call sites.
    pub fn from_pairs<I, S>(nodes: I, pairs: &[(&str, &str)]) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let nodes = nodes.into_iter().map(Into::into).collect();
        let edges = pairs
            .iter()
            .enumerate()
            .map(|(i, (a, b))| Edge {
                caller: a.to_string(),
                callee: b.to_string(),
                call_site: CallSite { file: String::new(), line: i as u32 + 1, column: 0 },
                statement_end_line: i as u32 + 1,
                argument_texts: Vec::new(),
            })
            .collect();
        Self::new(nodes, edges)
    }

    pub fn pairs(&self) -> BTreeSet<EdgeKey> {
        self.edges.iter().map(|e| EdgeKey { caller: e.caller.clone(), callee: e.callee.clone() }).collect()
    }

    /// Caller/callee pairs that survive cycle breaking.
    pub fn retained(&self) -> BTreeSet<EdgeKey> {
        self.pairs().into_iter().filter(|k| !self.broken_edges.contains(k)).collect()
    }

    /// Called(f): distinct callees of `f`, including through broken edges.
    pub fn callees(&self, f: &str) -> BTreeSet<String> {
        self.edges.iter().filter(|e| e.caller == f).map(|e| e.callee.clone()).collect()
    }

    /// Call(f): distinct callers of `f`, including through broken edges.
    pub fn callers(&self, f: &str) -> BTreeSet<String> {
        self.edges.iter().filter(|e| e.callee == f).map(|e| e.caller.clone()).collect()
    }

    pub fn is_broken(&self, caller: &str, callee: &str) -> bool {
        self.broken_edges.contains(&EdgeKey { caller: caller.to_string(), callee: callee.to_string() })
    }

    /// Callees before callers; ties resolved lexicographically.
    pub fn behavior_order(&self) -> Vec<String> {
        let retained = self.retained();
        let mut pending: BTreeMap<&str, usize> = self.nodes.iter().map(|n| (n.as_str(), 0)).collect();
        let mut dependents: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for k in &retained {
            *pending.get_mut(k.caller.as_str()).expect("edge endpoint is a node") += 1;
            dependents.entry(k.callee.as_str()).or_default().push(k.caller.as_str());
        }
        kahn(pending, dependents)
    }

    /// Callers before callees; ties resolved lexicographically.
    pub fn semantics_order(&self) -> SemanticsOrder {
        let retained = self.retained();
        let mut pending: BTreeMap<&str, usize> = self.nodes.iter().map(|n| (n.as_str(), 0)).collect();
        let mut dependents: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for k in &retained {
            *pending.get_mut(k.callee.as_str()).expect("edge endpoint is a node") += 1;
            dependents.entry(k.caller.as_str()).or_default().push(k.callee.as_str());
        }
        let roots = pending.iter().filter(|(_, d)| **d == 0).map(|(n, _)| n.to_string()).collect();
        SemanticsOrder { order: kahn(pending, dependents), roots }
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph calls {\n");
        for n in &self.nodes {
            let _ = writeln!(out, "  \"{n}\";");
        }
        for k in self.pairs() {
            let style = if self.broken_edges.contains(&k) { " [style=dashed]" } else { "" };
            let _ = writeln!(out, "  \"{}\" -> \"{}\"{style};", k.caller, k.callee);
        }
        out.push_str("}\n");
        out
    }
}

fn kahn<'a>(mut pending: BTreeMap<&'a str, usize>, dependents: BTreeMap<&'a str, Vec<&'a str>>) -> Vec<String> {
    let mut ready: BTreeSet<&str> = pending.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
    let mut order = Vec::with_capacity(pending.len());
    while let Some(n) = ready.pop_first() {
        order.push(n.to_string());
        for d in dependents.get(n).into_iter().flatten() {
            let c = pending.get_mut(d).expect("dependent is a node");
            *c -= 1;
            if *c == 0 {
                ready.insert(d);
            }
        }
    }
    debug_assert_eq!(order.len(), pending.len(), "retained graph must be acyclic");
    order
}

/// Repeatedly finds a cycle and drops its lexicographically greatest pair.
fn break_cycles(nodes: &BTreeSet<String>, pairs: &BTreeSet<EdgeKey>) -> BTreeSet<EdgeKey> {
    let mut live: BTreeSet<EdgeKey> = pairs.clone();
    let mut broken = BTreeSet::new();
    while let Some(cycle) = find_cycle(nodes, &live) {
        let worst = cycle.into_iter().max().expect("cycle has at least one edge");
        live.remove(&worst);
        broken.insert(worst);
    }
    broken
}

fn find_cycle(nodes: &BTreeSet<String>, pairs: &BTreeSet<EdgeKey>) -> Option<Vec<EdgeKey>> {
    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for k in pairs {
        adj.entry(k.caller.as_str()).or_default().push(k.callee.as_str());
    }
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Gray,
        Black,
    }
    let mut mark: BTreeMap<&str, Mark> = nodes.iter().map(|n| (n.as_str(), Mark::White)).collect();
    for start in nodes {
        if mark[start.as_str()] != Mark::White {
            continue;
        }
        // (node, next child index)
        let mut stack: Vec<(&str, usize)> = vec![(start.as_str(), 0)];
        mark.insert(start.as_str(), Mark::Gray);
        while let Some((node, idx)) = stack.last().copied() {
            let next = adj.get(node).and_then(|v| v.get(idx)).copied();
            match next {
                Some(child) => {
                    stack.last_mut().expect("non-empty").1 += 1;
                    match mark[child] {
                        Mark::White => {
                            mark.insert(child, Mark::Gray);
                            stack.push((child, 0));
                        }
                        Mark::Gray => {
                            let pos = stack.iter().position(|(n, _)| *n == child).expect("gray node is on the stack");
                            let path: Vec<&str> = stack[pos..].iter().map(|(n, _)| *n).collect();
                            let mut cycle: Vec<EdgeKey> = path.windows(2).map(|w| EdgeKey { caller: w[0].to_string(), callee: w[1].to_string() }).collect();
                            cycle.push(EdgeKey { caller: node.to_string(), callee: child.to_string() });
                            return Some(cycle);
                        }
                        Mark::Black => {}
                    }
                }
                None => {
                    mark.insert(node, Mark::Black);
                    stack.pop();
                }
            }
        }
    }
    None
}

/// A concrete invocation of a function found elsewhere in the project.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallInstance {
    pub callee: String,
    pub caller: String,
    pub call_site: CallSite,
    /// Caller source truncated right after the calling statement.
    pub context: String,
    pub argument_texts: Vec<String>,
    pub context_length: usize,
}

/// All call sites of `f`, shortest caller context first, at most `cap`.
pub fn pre_existing_instances(cg: &CallGraph, index: &ProjectIndex, f: &str, cap: usize) -> Result<Vec<CallInstance>, IndexError> {
    if !cg.nodes.contains(f) {
        return Err(IndexError::UnknownUnit(f.to_string()));
    }
    let mut out = Vec::new();
    for e in cg.edges.iter().filter(|e| e.callee == f) {
        let caller = index.unit(&e.caller)?;
        let keep = (e.statement_end_line.saturating_sub(caller.span.start_line) + 1) as usize;
        let context = caller.source.split('\n').take(keep).collect::<Vec<_>>().join("\n");
        out.push(CallInstance {
            callee: f.to_string(),
            caller: e.caller.clone(),
            call_site: e.call_site.clone(),
            context_length: context.chars().count(),
            context,
            argument_texts: e.argument_texts.clone(),
        });
    }
    out.sort_by(|a, b| a.context_length.cmp(&b.context_length).then_with(|| a.caller.cmp(&b.caller)).then_with(|| a.call_site.cmp(&b.call_site)));
    out.truncate(cap);
    Ok(out)
}
