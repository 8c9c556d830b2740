//! Prefetch planning over pattern trees.
//!
//! A request that matches a tree root triggers a plan according to the
//! configured heuristic:
//!
//! * fetch-all: every item of the tree;
//! * fetch-top-n: the `n` nodes with the highest cumulative probability;
//! * fetch-progressive: the next `n` levels, then one more level each time a
//!   later request follows the tree from the root without gaps.
//!
//! Plans are emitted level by level (ties: higher cumulative probability,
//! then item encoding) and never contain the item that triggered them.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::metastore::{Metastore, NodeId, PatternTree, RootMatch};
use crate::types::DataContainer;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeuristicKind {
    FetchAll,
    FetchTopN(usize),
    FetchProgressively(usize),
}

impl HeuristicKind {
    pub const DEFAULT_TOP_N: usize = 5;
    pub const DEFAULT_PROGRESSIVE_N: usize = 2;

    /// Parse a heuristic name with an optional explicit `n`.
    pub fn from_name(name: &str, n: Option<usize>) -> Result<Self> {
        let kind = match name {
            "fetch-all" => HeuristicKind::FetchAll,
            "fetch-top-n" => HeuristicKind::FetchTopN(n.unwrap_or(Self::DEFAULT_TOP_N)),
            "fetch-progressive" | "fetch-progressively" => {
                HeuristicKind::FetchProgressively(n.unwrap_or(Self::DEFAULT_PROGRESSIVE_N))
            }
            other => {
                return Err(Error::config(
                    "heuristic",
                    format!(
                        "unknown heuristic {other:?} (expected fetch-all, fetch-top-n or fetch-progressive)"
                    ),
                ))
            }
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            HeuristicKind::FetchTopN(0) | HeuristicKind::FetchProgressively(0) => {
                Err(Error::config("heuristic.n", "must be >= 1"))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            HeuristicKind::FetchAll => "fetch-all",
            HeuristicKind::FetchTopN(_) => "fetch-top-n",
            HeuristicKind::FetchProgressively(_) => "fetch-progressive",
        }
    }

    pub fn n(&self) -> Option<usize> {
        match self {
            HeuristicKind::FetchAll => None,
            HeuristicKind::FetchTopN(n) | HeuristicKind::FetchProgressively(n) => Some(*n),
        }
    }
}

impl fmt::Display for HeuristicKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeuristicKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_name(s, None)
    }
}

/// An item to prefetch with its depth in the originating tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedItem {
    pub item: DataContainer,
    pub depth: usize,
}

pub fn plan_items(plan: &[PlannedItem]) -> Vec<DataContainer> {
    plan.iter().map(|p| p.item.clone()).collect()
}

fn level_order(tree: &PatternTree, nodes: &mut [NodeId]) {
    nodes.sort_by(|&a, &b| {
        let (na, nb) = (tree.node(a), tree.node(b));
        na.depth
            .cmp(&nb.depth)
            .then(nb.weight.cmp(&na.weight))
            .then_with(|| na.item.cmp(&nb.item))
    });
}

/// Emit nodes in their given order as items, skipping repeats and `exclude`.
fn emit(tree: &PatternTree, nodes: &[NodeId], exclude: &[&DataContainer]) -> Vec<PlannedItem> {
    let mut seen: HashSet<&DataContainer> = exclude.iter().copied().collect();
    nodes
        .iter()
        .map(|&id| tree.node(id))
        .filter(|n| seen.insert(&n.item))
        .map(|n| PlannedItem {
            item: n.item.clone(),
            depth: n.depth,
        })
        .collect()
}

/// Every non-root item of the tree, level by level.
pub fn plan_fetch_all(tree: &PatternTree) -> Vec<PlannedItem> {
    let mut nodes: Vec<NodeId> = (1..tree.len()).collect();
    level_order(tree, &mut nodes);
    emit(tree, &nodes, &[tree.root_item()])
}

/// The `n` nodes most likely to be reached from the root (ties: shallower,
/// then item encoding), emitted level by level.
pub fn plan_fetch_top_n(tree: &PatternTree, n: usize) -> Vec<PlannedItem> {
    let root = tree.root_item();
    let mut nodes: Vec<NodeId> = (1..tree.len())
        .filter(|&id| tree.node(id).item != *root)
        .collect();
    nodes.sort_by(|&a, &b| {
        let (na, nb) = (tree.node(a), tree.node(b));
        nb.weight
            .cmp(&na.weight)
            .then(na.depth.cmp(&nb.depth))
            .then_with(|| na.item.cmp(&nb.item))
    });
    nodes.truncate(n);
    level_order(tree, &mut nodes);
    emit(tree, &nodes, &[root])
}

/// Advancing state of a fetch-progressive walk down one tree.
#[derive(Debug, Clone)]
pub struct PrefetchContext {
    tree: Arc<PatternTree>,
    tree_generation: u64,
    current: NodeId,
    matched_depth: usize,
    n: usize,
    live: bool,
}

impl PrefetchContext {
    pub fn tree_generation(&self) -> u64 {
        self.tree_generation
    }

    pub fn current_node(&self) -> NodeId {
        self.current
    }

    pub fn matched_depth(&self) -> usize {
        self.matched_depth
    }

    pub fn is_live(&self) -> bool {
        self.live
    }

    /// Follow `requested` one level down. A mismatch, a stale generation or
    /// an exhausted subtree kills the context.
    pub fn advance(
        &mut self,
        requested: &DataContainer,
        current_generation: u64,
    ) -> Result<Vec<PlannedItem>> {
        if !self.live {
            return Err(Error::DeadContext);
        }
        if current_generation != self.tree_generation {
            self.live = false;
            return Ok(Vec::new());
        }
        let Some(child) = self.tree.child_with_item(self.current, requested) else {
            self.live = false;
            return Ok(Vec::new());
        };
        self.current = child;
        self.matched_depth += 1;
        let target = self.matched_depth + self.n;
        let mut nodes = self.tree.descendants_at_depth(child, target);
        level_order(&self.tree, &mut nodes);
        let plan = emit(&self.tree, &nodes, &[requested, self.tree.root_item()]);
        self.live = self.tree.node(child).height > target;
        Ok(plan)
    }
}

/// Start a fetch-progressive context at the root and plan levels `1..=n`.
pub fn context_on_root(root: &RootMatch, n: usize) -> (PrefetchContext, Vec<PlannedItem>) {
    let tree = &root.tree;
    let mut nodes: Vec<NodeId> = (1..tree.len())
        .filter(|&id| tree.node(id).depth <= n)
        .collect();
    level_order(tree, &mut nodes);
    let plan = emit(tree, &nodes, &[tree.root_item()]);
    let ctx = PrefetchContext {
        tree: Arc::clone(tree),
        tree_generation: root.generation,
        current: PatternTree::ROOT,
        matched_depth: 0,
        n,
        live: true,
    };
    (ctx, plan)
}

/// A group of items fetched in one backstore round trip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchBatch {
    pub items: Vec<DataContainer>,
}

/// Depth-1 items go out alone and first so they land before the next
/// request; the rest are grouped into one multi-get per table.
pub fn batch_plan(plan: &[PlannedItem]) -> Vec<FetchBatch> {
    let mut batches: Vec<FetchBatch> = plan
        .iter()
        .filter(|p| p.depth == 1)
        .map(|p| FetchBatch {
            items: vec![p.item.clone()],
        })
        .collect();
    let mut tables: Vec<(Option<&str>, Vec<DataContainer>)> = Vec::new();
    for p in plan.iter().filter(|p| p.depth != 1) {
        let table = p.item.table();
        match tables.iter_mut().find(|(t, _)| *t == table) {
            Some((_, items)) => items.push(p.item.clone()),
            None => tables.push((table, vec![p.item.clone()])),
        }
    }
    batches.extend(tables.into_iter().map(|(_, items)| FetchBatch { items }));
    batches
}

/// Per-client planning state: the heuristic plus live progressive contexts.
#[derive(Debug)]
pub struct ClientPrefetcher {
    heuristic: HeuristicKind,
    max_contexts: usize,
    contexts: VecDeque<PrefetchContext>,
}

impl ClientPrefetcher {
    pub const DEFAULT_MAX_CONTEXTS: usize = 16;

    pub fn new(heuristic: HeuristicKind, max_contexts: usize) -> Self {
        Self {
            heuristic,
            max_contexts: max_contexts.max(1),
            contexts: VecDeque::new(),
        }
    }

    pub fn heuristic(&self) -> HeuristicKind {
        self.heuristic
    }

    pub fn live_contexts(&self) -> usize {
        self.contexts.len()
    }

    /// Plan prefetches triggered by a read of `requested`.
    pub fn on_request(&mut self, requested: &DataContainer, store: &Metastore) -> Vec<PlannedItem> {
        let generation = store.generation();
        let mut plan = Vec::new();
        for ctx in &mut self.contexts {
            if let Ok(step) = ctx.advance(requested, generation) {
                plan.extend(step);
            }
        }
        self.contexts.retain(PrefetchContext::is_live);

        if let Some(root) = store.lookup_root(requested) {
            match self.heuristic {
                HeuristicKind::FetchAll => plan.extend(plan_fetch_all(&root.tree)),
                HeuristicKind::FetchTopN(n) => plan.extend(plan_fetch_top_n(&root.tree, n)),
                HeuristicKind::FetchProgressively(n) => {
                    let (ctx, step) = context_on_root(&root, n);
                    plan.extend(step);
                    if self.contexts.len() == self.max_contexts {
                        self.contexts.pop_front();
                    }
                    self.contexts.push_back(ctx);
                }
            }
        }

        let mut seen = HashSet::new();
        seen.insert(requested.clone());
        plan.retain(|p| seen.insert(p.item.clone()));
        plan
    }
}
