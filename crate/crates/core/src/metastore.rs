//! Pattern metastore: ranking, capacity bound and probabilistic trees.
//!
//! Patterns sharing a first item are merged into one trie. A node's weight is
//! the summed support of the patterns passing through it, so the edge
//! probability of a child is `child.weight / parent.weight` and the
//! cumulative probability of a node (reaching it from the root) is
//! `node.weight / root.weight`.
//!
//! Patterns file format, one pattern per line:
//!
//! ```text
//! <supportCount>\t<item> <item> ...
//! ```

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};
use crate::types::{cmp_items, decode_container, join_encoded, DataContainer, SequencePattern};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetastoreConfig {
    pub capacity_sequences: usize,
    pub max_elements_per_sequence: usize,
}

impl Default for MetastoreConfig {
    fn default() -> Self {
        Self {
            capacity_sequences: 10_000,
            max_elements_per_sequence: 15,
        }
    }
}

impl MetastoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity_sequences == 0 {
            return Err(Error::config("metastore.capacity", "must be > 0"));
        }
        Ok(())
    }
}

/// Ranking score: pattern length times support fraction.
pub fn score(p: &SequencePattern) -> f64 {
    p.items.len() as f64 * p.support_fraction
}

/// Drop over-long patterns, rank the rest by [`score`] and keep the top
/// `capacity_sequences`. Ties go to the higher support count, then to the
/// lexicographically smaller item list.
pub fn rank_and_cap(patterns: Vec<SequencePattern>, cfg: &MetastoreConfig) -> Vec<SequencePattern> {
    let mut kept: Vec<SequencePattern> = patterns
        .into_iter()
        .filter(|p| p.items.len() <= cfg.max_elements_per_sequence)
        .collect();
    kept.sort_by(|a, b| {
        score(b)
            .total_cmp(&score(a))
            .then(b.support_count.cmp(&a.support_count))
            .then_with(|| cmp_items(&a.items, &b.items))
    });
    kept.truncate(cfg.capacity_sequences);
    kept
}

pub type NodeId = usize;

#[derive(Debug, Clone)]
pub struct TreeNode {
    pub item: DataContainer,
    pub weight: u64,
    pub depth: usize,
    pub parent: Option<NodeId>,
    /// Ordered by descending weight, then item encoding.
    pub children: Vec<NodeId>,
    /// Deepest depth reachable below (or at) this node.
    pub height: usize,
    terminal: bool,
}

/// Probabilistic trie of the patterns that start with one item.
#[derive(Debug, Clone)]
pub struct PatternTree {
    nodes: Vec<TreeNode>,
    patterns: usize,
}

impl PatternTree {
    pub const ROOT: NodeId = 0;

    fn new(root_item: DataContainer) -> Self {
        Self {
            nodes: vec![TreeNode {
                item: root_item,
                weight: 0,
                depth: 0,
                parent: None,
                children: Vec::new(),
                height: 0,
                terminal: false,
            }],
            patterns: 0,
        }
    }

    fn insert(&mut self, items: &[DataContainer], count: u64) {
        let mut at = Self::ROOT;
        self.nodes[at].weight += count;
        for item in &items[1..] {
            let next = self.nodes[at]
                .children
                .iter()
                .copied()
                .find(|&c| self.nodes[c].item == *item);
            at = match next {
                Some(c) => c,
                None => {
                    let id = self.nodes.len();
                    self.nodes.push(TreeNode {
                        item: item.clone(),
                        weight: 0,
                        depth: self.nodes[at].depth + 1,
                        parent: Some(at),
                        children: Vec::new(),
                        height: 0,
                        terminal: false,
                    });
                    self.nodes[at].children.push(id);
                    id
                }
            };
            self.nodes[at].weight += count;
        }
        if !self.nodes[at].terminal {
            self.patterns += 1;
        }
        self.nodes[at].terminal = true;
    }

    fn finish(&mut self) -> Result<()> {
        for id in (0..self.nodes.len()).rev() {
            let node = &self.nodes[id];
            if node.terminal && !node.children.is_empty() {
                return Err(Error::PatternEndsInternally {
                    pattern: join_encoded(&self.path_items(id)),
                });
            }
            let height = node
                .children
                .iter()
                .map(|&c| self.nodes[c].height)
                .max()
                .unwrap_or(node.depth);
            self.nodes[id].height = height;
        }
        let nodes = &self.nodes;
        let mut ordered: Vec<Vec<NodeId>> = nodes.iter().map(|n| n.children.clone()).collect();
        for children in &mut ordered {
            children.sort_by(|&a, &b| {
                nodes[b]
                    .weight
                    .cmp(&nodes[a].weight)
                    .then_with(|| nodes[a].item.cmp(&nodes[b].item))
            });
        }
        for (node, children) in self.nodes.iter_mut().zip(ordered) {
            node.children = children;
        }
        Ok(())
    }

    pub fn root_item(&self) -> &DataContainer {
        &self.nodes[Self::ROOT].item
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of distinct patterns stored in this tree.
    pub fn pattern_count(&self) -> usize {
        self.patterns
    }

    pub fn height(&self) -> usize {
        self.nodes[Self::ROOT].height
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id].children
    }

    /// `child.weight / parent.weight` as an exact ratio; `(1, 1)` at the root.
    pub fn edge_ratio(&self, id: NodeId) -> (u64, u64) {
        match self.nodes[id].parent {
            None => (1, 1),
            Some(p) => (self.nodes[id].weight, self.nodes[p].weight),
        }
    }

    pub fn edge_probability(&self, id: NodeId) -> f64 {
        let (num, den) = self.edge_ratio(id);
        num as f64 / den as f64
    }

    pub fn cumulative_probability(&self, id: NodeId) -> f64 {
        self.nodes[id].weight as f64 / self.nodes[Self::ROOT].weight as f64
    }

    /// Child of `id` holding `item`, if any.
    pub fn child_with_item(&self, id: NodeId, item: &DataContainer) -> Option<NodeId> {
        self.nodes[id]
            .children
            .iter()
            .copied()
            .find(|&c| self.nodes[c].item == *item)
    }

    /// Items on the path from the root to `id`, inclusive.
    pub fn path_items(&self, id: NodeId) -> Vec<DataContainer> {
        let mut path = Vec::new();
        let mut at = Some(id);
        while let Some(n) = at {
            path.push(self.nodes[n].item.clone());
            at = self.nodes[n].parent;
        }
        path.reverse();
        path
    }

    /// Nodes of the subtree under `id` (excluding `id`) at absolute `depth`.
    pub fn descendants_at_depth(&self, id: NodeId, depth: usize) -> Vec<NodeId> {
        let mut frontier = vec![id];
        while let Some(&first) = frontier.first() {
            if self.nodes[first].depth >= depth {
                break;
            }
            frontier = frontier
                .iter()
                .flat_map(|&n| self.nodes[n].children.iter().copied())
                .collect();
        }
        frontier.retain(|&n| n != id && self.nodes[n].depth == depth);
        frontier
    }

    /// Stored patterns as root-to-leaf paths with their support counts.
    pub fn patterns(&self) -> Vec<(Vec<DataContainer>, u64)> {
        (0..self.nodes.len())
            .filter(|&id| self.nodes[id].terminal)
            .map(|id| (self.path_items(id), self.nodes[id].weight))
            .collect()
    }
}

/// Trees keyed by their root item.
#[derive(Debug, Clone, Default)]
pub struct PatternForest {
    trees: HashMap<DataContainer, Arc<PatternTree>>,
    pattern_count: usize,
}

impl PatternForest {
    pub fn get(&self, item: &DataContainer) -> Option<&Arc<PatternTree>> {
        self.trees.get(item)
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn pattern_count(&self) -> usize {
        self.pattern_count
    }

    pub fn roots(&self) -> impl Iterator<Item = &DataContainer> {
        self.trees.keys()
    }

    pub fn trees(&self) -> impl Iterator<Item = &Arc<PatternTree>> {
        self.trees.values()
    }
}

/// Group patterns by first item and merge each group into a trie.
///
/// Identical patterns are merged with their counts summed. A pattern that is
/// a proper prefix of another would end at an internal node, which maximal
/// mining rules out; it is rejected with [`Error::PatternEndsInternally`].
pub fn build_trees(patterns: &[SequencePattern]) -> Result<PatternForest> {
    let mut trees: HashMap<DataContainer, PatternTree> = HashMap::new();
    for p in patterns {
        let Some(first) = p.items.first() else { continue };
        trees
            .entry(first.clone())
            .or_insert_with(|| PatternTree::new(first.clone()))
            .insert(&p.items, p.support_count);
    }
    let mut pattern_count = 0;
    let mut forest = HashMap::with_capacity(trees.len());
    for (root, mut tree) in trees {
        tree.finish()?;
        pattern_count += tree.pattern_count();
        forest.insert(root, Arc::new(tree));
    }
    Ok(PatternForest {
        trees: forest,
        pattern_count,
    })
}

/// A forest installed under a generation number.
#[derive(Debug, Default)]
pub struct Generation {
    pub number: u64,
    pub forest: PatternForest,
}

#[derive(Debug, Clone)]
pub struct RootMatch {
    pub generation: u64,
    pub tree: Arc<PatternTree>,
}

/// Concurrent holder of the current pattern forest. Readers see either the
/// old or the new forest in full; the background miner is the only writer.
#[derive(Debug)]
pub struct Metastore {
    cfg: MetastoreConfig,
    current: RwLock<Arc<Generation>>,
}

impl Metastore {
    pub fn new(cfg: MetastoreConfig) -> Self {
        Self {
            cfg,
            current: RwLock::new(Arc::new(Generation::default())),
        }
    }

    pub fn config(&self) -> &MetastoreConfig {
        &self.cfg
    }

    pub fn snapshot(&self) -> Arc<Generation> {
        Arc::clone(&self.current.read().unwrap())
    }

    pub fn generation(&self) -> u64 {
        self.current.read().unwrap().number
    }

    pub fn lookup_root(&self, item: &DataContainer) -> Option<RootMatch> {
        let current = self.snapshot();
        current.forest.get(item).map(|tree| RootMatch {
            generation: current.number,
            tree: Arc::clone(tree),
        })
    }

    /// Atomically replace the forest and bump the generation.
    pub fn swap_generation(&self, forest: PatternForest) -> Result<u64> {
        if forest.pattern_count() > self.cfg.capacity_sequences {
            return Err(Error::CapacityExceeded {
                capacity: self.cfg.capacity_sequences,
                stored: forest.pattern_count(),
            });
        }
        let mut current = self.current.write().unwrap();
        let number = current.number + 1;
        *current = Arc::new(Generation { number, forest });
        Ok(number)
    }

    /// Rank, cap, build and swap in one step. Returns the patterns kept.
    pub fn install(&self, patterns: Vec<SequencePattern>) -> Result<Vec<SequencePattern>> {
        let kept = rank_and_cap(patterns, &self.cfg);
        let forest = build_trees(&kept)?;
        self.swap_generation(forest)?;
        Ok(kept)
    }
}

/// Union of two pattern lists that stays an antichain: identical patterns
/// are combined by summing their counts, and any pattern contiguously
/// contained in a longer one is dropped. Order follows `primary`, then `extra`.
pub fn merge_patterns(
    primary: Vec<SequencePattern>,
    extra: Vec<SequencePattern>,
) -> Vec<SequencePattern> {
    let mut index: HashMap<Vec<DataContainer>, usize> = HashMap::new();
    let mut all: Vec<SequencePattern> = Vec::with_capacity(primary.len() + extra.len());
    for p in primary.into_iter().chain(extra) {
        match index.get(&p.items) {
            Some(&i) => {
                let q = &mut all[i];
                q.support_count += p.support_count;
                q.support_fraction = q.support_fraction.max(p.support_fraction);
            }
            None => {
                index.insert(p.items.clone(), all.len());
                all.push(p);
            }
        }
    }
    let mut contained: HashSet<&[DataContainer]> = HashSet::new();
    for p in &all {
        let n = p.items.len();
        for len in 1..n {
            for w in p.items.windows(len) {
                contained.insert(w);
            }
        }
    }
    let keep: Vec<bool> = all
        .iter()
        .map(|p| !contained.contains(p.items.as_slice()))
        .collect();
    all.into_iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(p))
        .collect()
}

pub fn format_patterns(patterns: &[SequencePattern]) -> String {
    let mut out = String::new();
    for p in patterns {
        out.push_str(&format!("{}\t{}\n", p.support_count, join_encoded(&p.items)));
    }
    out
}

pub fn write_patterns_file(path: &Path, patterns: &[SequencePattern]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    out.write_all(format_patterns(patterns).as_bytes())
        .and_then(|()| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// Parse a patterns file. Support fractions are `count / denominator`,
/// clamped to 1.
pub fn parse_patterns(text: &str, origin: &Path, denominator: u64) -> Result<Vec<SequencePattern>> {
    let mut patterns = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| Error::Parse {
            path: origin.to_owned(),
            line: n + 1,
            reason,
        };
        let (count, items) = line
            .split_once('\t')
            .ok_or_else(|| err("expected `<count>\\t<items>`".into()))?;
        let count: u64 = count
            .parse()
            .map_err(|_| err(format!("invalid support count {count:?}")))?;
        let items = items
            .split(' ')
            .map(|tok| decode_container(tok).map_err(|e| err(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        if items.len() < 2 {
            return Err(err("a pattern needs at least two items".into()));
        }
        let fraction = (count as f64 / denominator.max(1) as f64).min(1.0);
        patterns.push(SequencePattern::new(items, count, fraction));
    }
    Ok(patterns)
}

pub fn read_patterns_file(path: &Path, denominator: u64) -> Result<Vec<SequencePattern>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_patterns(&text, path, denominator)
}
