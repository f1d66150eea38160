//! Balanced signature tree.
//!
//! Internal entries carry the bitwise union of their subtree's signatures
//! plus a child link; leaves carry (signature, oid). Insertion descends by
//! minimal EMD between the new signature and each entry's union, overfull
//! nodes split around the two entries with maximum pairwise EMD, and search
//! filters children by bit containment before descending.
//!
//! All tie-breaks (descent, seed pair, distribution) go to the lowest entry
//! index so that identical input orders always build identical trees.

use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::emd::{emd_signatures, CostMatrix};
use crate::signature::Signature;

pub type NodeId = usize;

#[derive(Debug, Error)]
pub enum STreeError {
    #[error("invalid tree parameters: {0}")]
    InvalidParams(String),
    #[error("oid {0} is already stored")]
    DuplicateOid(u64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("node is not overfull")]
    NotOverfull,
    #[error("malformed tree blob: {0}")]
    Blob(String),
}

/// Structural parameters. `max_entries` is the node capacity M, and every
/// non-root node keeps at least `min_entries` entries, with
/// 1 <= min_entries <= M/2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeParams {
    pub max_entries: usize,
    pub min_entries: usize,
    pub bins: u16,
    pub bits_per_block: u16,
}

impl TreeParams {
    pub fn check(&self) -> Result<(), STreeError> {
        if self.max_entries < 2 {
            return Err(STreeError::InvalidParams(format!(
                "max_entries {} < 2",
                self.max_entries
            )));
        }
        if self.min_entries < 1 || self.min_entries > self.max_entries / 2 {
            return Err(STreeError::InvalidParams(format!(
                "min_entries {} outside 1..={}",
                self.min_entries,
                self.max_entries / 2
            )));
        }
        if self.bins == 0 || self.bits_per_block == 0 {
            return Err(STreeError::InvalidParams("bins and bits_per_block must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Child(NodeId),
    Image(u64),
}

#[derive(Debug, Clone)]
pub struct Entry {
    pub sig: Signature,
    pub target: Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Leaf,
    Internal,
}

#[derive(Debug)]
pub struct Node {
    kind: NodeKind,
    entries: Vec<Entry>,
    parent: Option<NodeId>,
}

impl Node {
    pub fn kind(&self) -> NodeKind {
        self.kind
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn parent(&self) -> Option<NodeId> {
        self.parent
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    SinglePath,
    MultiPath,
}

impl SearchMode {
    pub fn code(self) -> u8 {
        match self {
            SearchMode::SinglePath => 0,
            SearchMode::MultiPath => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(SearchMode::SinglePath),
            1 => Some(SearchMode::MultiPath),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SearchMode::SinglePath => "single",
            SearchMode::MultiPath => "multi",
        }
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SearchStats {
    pub emd_evaluations: u64,
    pub coverage_tests: u64,
}

#[derive(Debug)]
pub struct SearchOutcome {
    pub hits: Vec<(Signature, u64)>,
    pub stats: SearchStats,
}

#[derive(Debug)]
pub struct STree {
    nodes: Vec<Node>,
    root: NodeId,
    params: TreeParams,
    cost: CostMatrix,
    count: usize,
    oids: HashSet<u64>,
    emd_evaluations: AtomicU64,
    coverage_tests: AtomicU64,
}

impl STree {
    pub fn new(params: TreeParams, cost: CostMatrix) -> Result<Self, STreeError> {
        params.check()?;
        if cost.rows() != params.bins as usize || cost.cols() != params.bins as usize {
            return Err(STreeError::DimensionMismatch(format!(
                "cost matrix {}x{} vs {} bins",
                cost.rows(),
                cost.cols(),
                params.bins
            )));
        }
        Ok(Self {
            nodes: vec![Node { kind: NodeKind::Leaf, entries: Vec::new(), parent: None }],
            root: 0,
            params,
            cost,
            count: 0,
            oids: HashSet::new(),
            emd_evaluations: AtomicU64::new(0),
            coverage_tests: AtomicU64::new(0),
        })
    }

    pub fn params(&self) -> &TreeParams {
        &self.params
    }

    /// Number of stored images.
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    /// Edges from the root down to any leaf; 0 for a tree that is a single
    /// leaf. All leaves sit at the same depth.
    pub fn height(&self) -> usize {
        let mut h = 0;
        let mut id = self.root;
        while self.nodes[id].kind == NodeKind::Internal {
            match self.nodes[id].entries[0].target {
                Target::Child(c) => {
                    id = c;
                    h += 1;
                }
                Target::Image(_) => break,
            }
        }
        h
    }

    pub fn emd_evaluations(&self) -> u64 {
        self.emd_evaluations.load(Ordering::Relaxed)
    }

    pub fn coverage_tests(&self) -> u64 {
        self.coverage_tests.load(Ordering::Relaxed)
    }

    fn distance(&self, a: &Signature, b: &Signature) -> f64 {
        // Two all-zero signatures are the only error case and they are
        // trivially identical.
        emd_signatures(a, b, &self.cost).unwrap_or(0.0)
    }

    fn check_dims(&self, sig: &Signature) -> Result<(), STreeError> {
        if sig.bins() != self.params.bins || sig.bits_per_block() != self.params.bits_per_block {
            return Err(STreeError::DimensionMismatch(format!(
                "signature {}x{} vs tree {}x{}",
                sig.bins(),
                sig.bits_per_block(),
                self.params.bins,
                self.params.bits_per_block
            )));
        }
        Ok(())
    }

    /// Descends to the leaf whose entry unions sit closest to `sig`,
    /// appends the entry there, restores union signatures up the path, and
    /// splits any overfull node.
    pub fn insert(&mut self, sig: Signature, oid: u64) -> Result<(), STreeError> {
        self.check_dims(&sig)?;
        if !self.oids.insert(oid) {
            return Err(STreeError::DuplicateOid(oid));
        }

        let mut id = self.root;
        while self.nodes[id].kind == NodeKind::Internal {
            let node = &self.nodes[id];
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, e) in node.entries.iter().enumerate() {
                let d = self.distance(&e.sig, &sig);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            self.emd_evaluations
                .fetch_add(node.entries.len() as u64, Ordering::Relaxed);
            match self.nodes[id].entries[best].target {
                Target::Child(c) => id = c,
                Target::Image(_) => unreachable!("internal entry must point at a child"),
            }
        }

        self.nodes[id].entries.push(Entry { sig, target: Target::Image(oid) });
        self.count += 1;

        let mut settled = id;
        while self.nodes[settled].entries.len() > self.params.max_entries {
            let (alpha, _beta) = self.split_node(settled)?;
            settled = self.nodes[alpha].parent.expect("split always leaves a parent");
        }
        self.union_signature_up(settled);
        Ok(())
    }

    /// Splits an overfull node around the entry pair with maximum pairwise
    /// EMD, assigning each remaining entry to the strictly closer seed (the
    /// second seed on ties). When one group would otherwise be left below
    /// the occupancy floor, the trailing unassigned entries are forced into
    /// it. Returns the ids holding the first and second groups.
    pub fn split_node(&mut self, id: NodeId) -> Result<(NodeId, NodeId), STreeError> {
        if self.nodes[id].entries.len() <= self.params.max_entries {
            return Err(STreeError::NotOverfull);
        }
        let entries = std::mem::take(&mut self.nodes[id].entries);
        let k = entries.len();

        let mut seed_a = 0;
        let mut seed_b = 1;
        let mut best = f64::NEG_INFINITY;
        for i in 0..k {
            for j in i + 1..k {
                let d = self.distance(&entries[i].sig, &entries[j].sig);
                if d > best {
                    best = d;
                    seed_a = i;
                    seed_b = j;
                }
            }
        }
        self.emd_evaluations
            .fetch_add((k * (k - 1) / 2) as u64, Ordering::Relaxed);

        let mut group_a: Vec<usize> = vec![seed_a];
        let mut group_b: Vec<usize> = vec![seed_b];
        let rest: Vec<usize> = (0..k).filter(|&i| i != seed_a && i != seed_b).collect();
        for (pos, &i) in rest.iter().enumerate() {
            let remaining = rest.len() - pos;
            if group_a.len() + remaining <= self.params.min_entries {
                group_a.push(i);
                continue;
            }
            if group_b.len() + remaining <= self.params.min_entries {
                group_b.push(i);
                continue;
            }
            let da = self.distance(&entries[i].sig, &entries[seed_a].sig);
            let db = self.distance(&entries[i].sig, &entries[seed_b].sig);
            self.emd_evaluations.fetch_add(2, Ordering::Relaxed);
            if da < db {
                group_a.push(i);
            } else {
                group_b.push(i);
            }
        }

        let collect = |group: &[usize]| -> (Vec<Entry>, Signature) {
            let mut out = Vec::with_capacity(group.len());
            let mut union = Signature::zero(self.params.bins, self.params.bits_per_block);
            for &i in group {
                union.union_in_place(&entries[i].sig).expect("dims checked on insert");
                out.push(entries[i].clone());
            }
            (out, union)
        };
        let (entries_a, union_a) = collect(&group_a);
        let (entries_b, union_b) = collect(&group_b);

        let kind = self.nodes[id].kind;
        self.nodes[id].entries = entries_a;
        let sibling = self.nodes.len();
        self.nodes.push(Node { kind, entries: entries_b, parent: None });
        if kind == NodeKind::Internal {
            for i in 0..self.nodes[sibling].entries.len() {
                if let Target::Child(c) = self.nodes[sibling].entries[i].target {
                    self.nodes[c].parent = Some(sibling);
                }
            }
        }

        match self.nodes[id].parent {
            None => {
                let root = self.nodes.len();
                self.nodes.push(Node {
                    kind: NodeKind::Internal,
                    entries: vec![
                        Entry { sig: union_a, target: Target::Child(id) },
                        Entry { sig: union_b, target: Target::Child(sibling) },
                    ],
                    parent: None,
                });
                self.nodes[id].parent = Some(root);
                self.nodes[sibling].parent = Some(root);
                self.root = root;
            }
            Some(p) => {
                let idx = self.nodes[p]
                    .entries
                    .iter()
                    .position(|e| e.target == Target::Child(id))
                    .expect("parent must link the split node");
                self.nodes[p].entries[idx].sig = union_a;
                self.nodes[p]
                    .entries
                    .insert(idx + 1, Entry { sig: union_b, target: Target::Child(sibling) });
                self.nodes[sibling].parent = Some(p);
            }
        }
        Ok((id, sibling))
    }

    /// Recomputes the parent entry for `id` as the union of `id`'s entry
    /// signatures, repeating up to the root. No-op for the root itself.
    pub fn union_signature_up(&mut self, mut id: NodeId) {
        while let Some(p) = self.nodes[id].parent {
            let mut union = Signature::zero(self.params.bins, self.params.bits_per_block);
            for e in &self.nodes[id].entries {
                union.union_in_place(&e.sig).expect("dims checked on insert");
            }
            let idx = self.nodes[p]
                .entries
                .iter()
                .position(|e| e.target == Target::Child(id))
                .expect("parent must link the child");
            self.nodes[p].entries[idx].sig = union;
            id = p;
        }
    }

    /// Worklist search. Internal entries are filtered by containment of the
    /// query bits; single-path mode descends only into the closest passing
    /// entry by EMD, multi-path into all passing entries. When nothing
    /// passes at a node the closest entry is taken anyway, unless
    /// `strict_coverage` is set, which prunes that branch instead. All leaf
    /// entries reached are returned.
    pub fn search(
        &self,
        query: &Signature,
        mode: SearchMode,
        strict_coverage: bool,
    ) -> Result<SearchOutcome, STreeError> {
        self.check_dims(query)?;
        let mut stats = SearchStats::default();
        let mut hits = Vec::new();
        if self.count > 0 {
            let mut stack = vec![self.root];
            while let Some(id) = stack.pop() {
                let node = &self.nodes[id];
                if node.kind == NodeKind::Leaf {
                    for e in &node.entries {
                        if let Target::Image(oid) = e.target {
                            hits.push((e.sig.clone(), oid));
                        }
                    }
                    continue;
                }
                let mut passing = Vec::new();
                for (i, e) in node.entries.iter().enumerate() {
                    stats.coverage_tests += 1;
                    if e.sig.covers(query).expect("dims checked above") {
                        passing.push(i);
                    }
                }
                let descend_min = |candidates: &[usize], stats: &mut SearchStats| {
                    let mut best = candidates[0];
                    let mut best_d = f64::INFINITY;
                    for &i in candidates {
                        let d = self.distance(&node.entries[i].sig, query);
                        stats.emd_evaluations += 1;
                        if d < best_d {
                            best_d = d;
                            best = i;
                        }
                    }
                    best
                };
                let chosen: Vec<usize> = if !passing.is_empty() {
                    match mode {
                        SearchMode::SinglePath => vec![descend_min(&passing, &mut stats)],
                        SearchMode::MultiPath => passing,
                    }
                } else if strict_coverage {
                    Vec::new()
                } else {
                    let all: Vec<usize> = (0..node.entries.len()).collect();
                    vec![descend_min(&all, &mut stats)]
                };
                // Reverse keeps pop order equal to entry order.
                for &i in chosen.iter().rev() {
                    if let Target::Child(c) = node.entries[i].target {
                        stack.push(c);
                    }
                }
            }
        }
        self.emd_evaluations
            .fetch_add(stats.emd_evaluations, Ordering::Relaxed);
        self.coverage_tests
            .fetch_add(stats.coverage_tests, Ordering::Relaxed);
        Ok(SearchOutcome { hits, stats })
    }

    /// All stored (signature, oid) pairs in leaf scan order.
    pub fn leaf_entries(&self) -> Vec<(Signature, u64)> {
        let mut out = Vec::with_capacity(self.count);
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            match node.kind {
                NodeKind::Leaf => {
                    for e in &node.entries {
                        if let Target::Image(oid) = e.target {
                            out.push((e.sig.clone(), oid));
                        }
                    }
                }
                NodeKind::Internal => {
                    for e in node.entries.iter().rev() {
                        if let Target::Child(c) = e.target {
                            stack.push(c);
                        }
                    }
                }
            }
        }
        out
    }

    /// Checks every structural invariant and returns one message per
    /// violation; an empty list means the tree is healthy.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        let mut leaf_depths = Vec::new();
        let mut seen_oids = HashSet::new();
        let mut leaf_entry_count = 0usize;
        let mut stack = vec![(self.root, 0usize)];
        while let Some((id, depth)) = stack.pop() {
            let node = &self.nodes[id];
            let is_root = id == self.root;

            if is_root && node.parent.is_some() {
                violations.push(format!("node {id}: root has a parent link"));
            }

            let (lo, hi) = if is_root {
                match node.kind {
                    NodeKind::Leaf => (0, self.params.max_entries),
                    NodeKind::Internal => (2, self.params.max_entries),
                }
            } else {
                (self.params.min_entries, self.params.max_entries)
            };
            if node.entries.len() < lo || node.entries.len() > hi {
                violations.push(format!(
                    "node {id}: occupancy {} outside {lo}..={hi}",
                    node.entries.len()
                ));
            }

            for (i, e) in node.entries.iter().enumerate() {
                if e.sig.bins() != self.params.bins
                    || e.sig.bits_per_block() != self.params.bits_per_block
                {
                    violations.push(format!(
                        "node {id} entry {i}: signature dimensions {}x{} differ from tree {}x{}",
                        e.sig.bins(),
                        e.sig.bits_per_block(),
                        self.params.bins,
                        self.params.bits_per_block
                    ));
                    continue;
                }
                match (node.kind, e.target) {
                    (NodeKind::Leaf, Target::Image(oid)) => {
                        leaf_entry_count += 1;
                        if !seen_oids.insert(oid) {
                            violations.push(format!("node {id} entry {i}: duplicate oid {oid}"));
                        }
                        if e.sig.validate_image_signature().is_err() {
                            violations.push(format!(
                                "node {id} entry {i}: leaf signature block has more than one set bit"
                            ));
                        }
                    }
                    (NodeKind::Internal, Target::Child(c)) => {
                        if self.nodes[c].parent != Some(id) {
                            violations.push(format!(
                                "node {id} entry {i}: child {c} does not link back to its parent"
                            ));
                        }
                        let mut union =
                            Signature::zero(self.params.bins, self.params.bits_per_block);
                        for ce in &self.nodes[c].entries {
                            if ce.sig.bins() == self.params.bins
                                && ce.sig.bits_per_block() == self.params.bits_per_block
                            {
                                union.union_in_place(&ce.sig).expect("dims just checked");
                            }
                        }
                        if union != e.sig {
                            violations.push(format!(
                                "node {id} entry {i}: union mismatch with child {c}"
                            ));
                        }
                        stack.push((c, depth + 1));
                    }
                    (NodeKind::Leaf, Target::Child(_)) => {
                        violations.push(format!("node {id} entry {i}: leaf entry links a child"));
                    }
                    (NodeKind::Internal, Target::Image(oid)) => {
                        violations.push(format!(
                            "node {id} entry {i}: internal entry stores image {oid}"
                        ));
                    }
                }
            }
            if node.kind == NodeKind::Leaf {
                leaf_depths.push(depth);
            }
        }

        if leaf_depths.iter().any(|&d| d != leaf_depths[0]) {
            violations.push(format!("leaves at unequal depths {leaf_depths:?}"));
        }
        if leaf_entry_count != self.count {
            violations.push(format!(
                "stored-image count {} does not match {leaf_entry_count} leaf entries",
                self.count
            ));
        }
        violations
    }

    /// Test hook: replaces an entry signature in place without maintaining
    /// any invariant.
    #[cfg(test)]
    pub(crate) fn corrupt_entry(&mut self, id: NodeId, idx: usize, sig: Signature) {
        self.nodes[id].entries[idx].sig = sig;
    }

    /// Serializes the structure as a pre-order blob: per node a kind byte
    /// (0 leaf, 1 internal), entry count as u16, then entries; each entry
    /// is its signature followed by a u64 that is an oid at leaves and a
    /// child byte-offset into the blob at internal nodes. Little-endian
    /// throughout.
    pub fn to_blob(&self) -> Vec<u8> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            order.push(id);
            let node = &self.nodes[id];
            if node.kind == NodeKind::Internal {
                for e in node.entries.iter().rev() {
                    if let Target::Child(c) = e.target {
                        stack.push(c);
                    }
                }
            }
        }
        let node_size = |id: NodeId| -> u64 {
            let node = &self.nodes[id];
            let entries: u64 = node
                .entries
                .iter()
                .map(|e| 4 + e.sig.byte_len() as u64 + 8)
                .sum();
            1 + 2 + entries
        };
        let mut offsets = vec![0u64; self.nodes.len()];
        let mut at = 0u64;
        for &id in &order {
            offsets[id] = at;
            at += node_size(id);
        }
        let mut blob = Vec::with_capacity(at as usize);
        for &id in &order {
            let node = &self.nodes[id];
            blob.push(match node.kind {
                NodeKind::Leaf => 0u8,
                NodeKind::Internal => 1u8,
            });
            blob.extend_from_slice(&(node.entries.len() as u16).to_le_bytes());
            for e in &node.entries {
                e.sig.serialize_into(&mut blob);
                let word = match e.target {
                    Target::Image(oid) => oid,
                    Target::Child(c) => offsets[c],
                };
                blob.extend_from_slice(&word.to_le_bytes());
            }
        }
        blob
    }

    /// Rebuilds a tree from `to_blob` output. The blob must be exactly one
    /// pre-order tree with child offsets pointing where the pre-order walk
    /// actually lands.
    pub fn from_blob(
        params: TreeParams,
        cost: CostMatrix,
        blob: &[u8],
    ) -> Result<Self, STreeError> {
        let mut tree = Self::new(params, cost)?;
        if blob.is_empty() {
            return Err(STreeError::Blob("empty blob".into()));
        }
        tree.nodes.clear();
        let mut cursor = 0usize;
        let root = parse_node(&mut tree, blob, &mut cursor, 0)?;
        if cursor != blob.len() {
            return Err(STreeError::Blob(format!(
                "{} trailing bytes after the tree",
                blob.len() - cursor
            )));
        }
        tree.root = root;
        tree.count = tree.oids.len();
        Ok(tree)
    }
}

fn parse_node(
    tree: &mut STree,
    blob: &[u8],
    cursor: &mut usize,
    depth: usize,
) -> Result<NodeId, STreeError> {
    if depth > 64 {
        return Err(STreeError::Blob("nesting deeper than 64 levels".into()));
    }
    let start = *cursor;
    if blob.len() < start + 3 {
        return Err(STreeError::Blob(format!("truncated node header at {start}")));
    }
    let kind = match blob[start] {
        0 => NodeKind::Leaf,
        1 => NodeKind::Internal,
        k => return Err(STreeError::Blob(format!("unknown node kind {k} at {start}"))),
    };
    let entry_count = u16::from_le_bytes([blob[start + 1], blob[start + 2]]) as usize;
    *cursor = start + 3;

    let id = tree.nodes.len();
    tree.nodes.push(Node { kind, entries: Vec::with_capacity(entry_count), parent: None });

    let mut words = Vec::with_capacity(entry_count);
    for _ in 0..entry_count {
        let (sig, used) = Signature::deserialize_from(&blob[*cursor..])
            .map_err(|e| STreeError::Blob(format!("bad signature at {}: {e}", *cursor)))?;
        if sig.bins() != tree.params.bins || sig.bits_per_block() != tree.params.bits_per_block {
            return Err(STreeError::Blob(format!(
                "signature {}x{} does not match tree {}x{}",
                sig.bins(),
                sig.bits_per_block(),
                tree.params.bins,
                tree.params.bits_per_block
            )));
        }
        *cursor += used;
        if blob.len() < *cursor + 8 {
            return Err(STreeError::Blob(format!("truncated entry word at {}", *cursor)));
        }
        let word = u64::from_le_bytes(blob[*cursor..*cursor + 8].try_into().unwrap());
        *cursor += 8;
        words.push((sig, word));
    }

    for (sig, word) in words {
        match kind {
            NodeKind::Leaf => {
                if !tree.oids.insert(word) {
                    return Err(STreeError::Blob(format!("duplicate oid {word}")));
                }
                tree.nodes[id].entries.push(Entry { sig, target: Target::Image(word) });
            }
            NodeKind::Internal => {
                // Children are laid out in pre-order, so each stored offset
                // must equal the position the walk has reached.
                if word != *cursor as u64 {
                    return Err(STreeError::Blob(format!(
                        "child offset {word} does not match walk position {}",
                        *cursor
                    )));
                }
                let child = parse_node(tree, blob, cursor, depth + 1)?;
                tree.nodes[child].parent = Some(id);
                tree.nodes[id].entries.push(Entry { sig, target: Target::Child(child) });
            }
        }
    }
    Ok(id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emd::CostMatrix;
    use crate::palette::Histogram;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Three bins on a line: costs 5 between neighbors, 10 across.
    fn line_cost() -> CostMatrix {
        CostMatrix::from_rows(vec![
            vec![0.0, 5.0, 10.0],
            vec![5.0, 0.0, 5.0],
            vec![10.0, 5.0, 0.0],
        ])
        .unwrap()
    }

    fn small_params() -> TreeParams {
        TreeParams { max_entries: 2, min_entries: 1, bins: 3, bits_per_block: 4 }
    }

    /// Signature with all mass in one of the 3 bins.
    fn pure(bin: usize) -> Signature {
        let mut v = vec![0.0; 3];
        v[bin] = 1.0;
        Signature::encode(&Histogram::new(v).unwrap(), 4)
    }

    fn three_entry_tree() -> STree {
        let mut t = STree::new(small_params(), line_cost()).unwrap();
        t.insert(pure(0), 1).unwrap(); // A
        t.insert(pure(1), 2).unwrap(); // B
        t.insert(pure(2), 3).unwrap(); // C
        t
    }

    #[test]
    fn params_are_checked() {
        assert!(matches!(
            STree::new(
                TreeParams { max_entries: 6, min_entries: 4, bins: 3, bits_per_block: 4 },
                line_cost()
            ),
            Err(STreeError::InvalidParams(_))
        ));
        assert!(matches!(
            STree::new(
                TreeParams { max_entries: 6, min_entries: 2, bins: 4, bits_per_block: 4 },
                line_cost()
            ),
            Err(STreeError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn first_insert_makes_single_entry_leaf() {
        let mut t = STree::new(small_params(), line_cost()).unwrap();
        t.insert(pure(0), 7).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.height(), 0);
        assert_eq!(t.node(t.root()).kind(), NodeKind::Leaf);
        assert_eq!(t.node(t.root()).entries().len(), 1);
        assert!(t.validate().is_empty());
    }

    #[test]
    fn duplicate_oid_and_dimension_errors() {
        let mut t = STree::new(small_params(), line_cost()).unwrap();
        t.insert(pure(0), 7).unwrap();
        assert!(matches!(t.insert(pure(1), 7), Err(STreeError::DuplicateOid(7))));
        let wrong = Signature::zero(5, 4);
        assert!(matches!(t.insert(wrong, 8), Err(STreeError::DimensionMismatch(_))));
    }

    #[test]
    fn third_insert_splits_around_farthest_pair() {
        // EMD(A,B) = EMD(B,C) = 5, EMD(A,C) = 10, so A and C seed the split
        // and B joins C's side on the tie.
        let t = three_entry_tree();
        assert_eq!(t.height(), 1);
        let root = t.node(t.root());
        assert_eq!(root.kind(), NodeKind::Internal);
        assert_eq!(root.entries().len(), 2);

        let child_oids: Vec<Vec<u64>> = root
            .entries()
            .iter()
            .map(|e| match e.target {
                Target::Child(c) => t
                    .node(c)
                    .entries()
                    .iter()
                    .map(|e| match e.target {
                        Target::Image(oid) => oid,
                        _ => panic!("leaf expected"),
                    })
                    .collect(),
                _ => panic!("child expected"),
            })
            .collect();
        assert_eq!(child_oids, vec![vec![1], vec![3, 2]]);

        for e in root.entries() {
            if let Target::Child(c) = e.target {
                let mut union = Signature::zero(3, 4);
                for ce in t.node(c).entries() {
                    union.union_in_place(&ce.sig).unwrap();
                }
                assert_eq!(union, e.sig);
            }
        }
        assert!(t.validate().is_empty());
    }

    #[test]
    fn identical_pair_stays_together_on_split() {
        let mut t = STree::new(small_params(), line_cost()).unwrap();
        t.insert(pure(0), 1).unwrap();
        t.insert(pure(0), 2).unwrap();
        t.insert(pure(2), 3).unwrap();
        let root = t.node(t.root());
        let groups: Vec<Vec<u64>> = root
            .entries()
            .iter()
            .map(|e| match e.target {
                Target::Child(c) => t
                    .node(c)
                    .entries()
                    .iter()
                    .filter_map(|e| match e.target {
                        Target::Image(oid) => Some(oid),
                        _ => None,
                    })
                    .collect(),
                _ => panic!(),
            })
            .collect();
        assert_eq!(groups, vec![vec![1, 2], vec![3]]);
    }

    #[test]
    fn split_requires_overfull_node() {
        let mut t = STree::new(small_params(), line_cost()).unwrap();
        t.insert(pure(0), 1).unwrap();
        let root = t.root();
        assert!(matches!(t.split_node(root), Err(STreeError::NotOverfull)));
    }

    #[test]
    fn union_up_is_idempotent() {
        let mut t = three_entry_tree();
        let leaf = match t.node(t.root()).entries()[1].target {
            Target::Child(c) => c,
            _ => panic!(),
        };
        let before = t.to_blob();
        t.union_signature_up(leaf);
        t.union_signature_up(leaf);
        assert_eq!(before, t.to_blob());
    }

    #[test]
    fn search_single_leaf_exact_match() {
        let mut t = STree::new(small_params(), line_cost()).unwrap();
        t.insert(pure(1), 42).unwrap();
        let out = t.search(&pure(1), SearchMode::MultiPath, false).unwrap();
        assert_eq!(out.hits.len(), 1);
        assert_eq!(out.hits[0].1, 42);
        assert_eq!(out.hits[0].0, pure(1));
    }

    #[test]
    fn empty_tree_search_is_empty() {
        let t = STree::new(small_params(), line_cost()).unwrap();
        let out = t.search(&pure(0), SearchMode::SinglePath, false).unwrap();
        assert!(out.hits.is_empty());
        assert_eq!(out.stats.emd_evaluations, 0);
    }

    #[test]
    fn zero_query_multi_path_reaches_every_leaf() {
        let t = three_entry_tree();
        let zero = Signature::zero(3, 4);
        let out = t.search(&zero, SearchMode::MultiPath, false).unwrap();
        let mut oids: Vec<u64> = out.hits.iter().map(|h| h.1).collect();
        oids.sort_unstable();
        assert_eq!(oids, vec![1, 2, 3]);
        // Containment alone steers a zero query; no EMD needed.
        assert_eq!(out.stats.emd_evaluations, 0);
        assert_eq!(out.stats.coverage_tests, 2);
    }

    #[test]
    fn single_path_respects_coverage_and_cost_bound() {
        let t = three_entry_tree();
        let out = t.search(&pure(0), SearchMode::SinglePath, false).unwrap();
        assert_eq!(out.hits.len(), 1);
        assert_eq!(out.hits[0].1, 1);
        let bound = (t.params().max_entries * (t.height() + 1)) as u64;
        assert!(out.stats.emd_evaluations <= bound);

        let out = t.search(&pure(2), SearchMode::SinglePath, false).unwrap();
        let oids: Vec<u64> = out.hits.iter().map(|h| h.1).collect();
        assert_eq!(oids, vec![3, 2]);
    }

    #[test]
    fn strict_coverage_prunes_uncoverable_queries() {
        // Query bit (25% mass in bin 0) is below every stored signature's
        // bit, so no union covers it.
        let t = three_entry_tree();
        let q = Signature::encode(&Histogram::new(vec![0.25, 0.25, 0.5]).unwrap(), 4);
        let strict = t.search(&q, SearchMode::SinglePath, true).unwrap();
        assert!(strict.hits.is_empty());
        let lax = t.search(&q, SearchMode::SinglePath, false).unwrap();
        assert!(!lax.hits.is_empty());
    }

    #[test]
    fn corrupted_parent_union_is_reported_once() {
        let mut t = three_entry_tree();
        let mut bad = pure(0);
        bad.union_in_place(&pure(1)).unwrap();
        bad.union_in_place(&pure(2)).unwrap();
        t.corrupt_entry(t.root(), 0, bad);
        let violations = t.validate();
        assert_eq!(violations.len(), 1, "{violations:?}");
        assert!(violations[0].contains("union mismatch"));
    }

    #[test]
    fn blob_round_trip_preserves_structure_and_results() {
        let t = three_entry_tree();
        let blob = t.to_blob();
        let back = STree::from_blob(*t.params(), line_cost(), &blob).unwrap();
        assert_eq!(back.to_blob(), blob);
        assert_eq!(back.len(), 3);
        for q in [pure(0), pure(1), pure(2)] {
            let a = t.search(&q, SearchMode::MultiPath, false).unwrap();
            let b = back.search(&q, SearchMode::MultiPath, false).unwrap();
            let mut ao: Vec<u64> = a.hits.iter().map(|h| h.1).collect();
            let mut bo: Vec<u64> = b.hits.iter().map(|h| h.1).collect();
            ao.sort_unstable();
            bo.sort_unstable();
            assert_eq!(ao, bo);
        }
        assert!(back.validate().is_empty());
    }

    #[test]
    fn malformed_blobs_are_rejected() {
        let t = three_entry_tree();
        let blob = t.to_blob();
        assert!(matches!(
            STree::from_blob(*t.params(), line_cost(), &blob[..blob.len() - 3]),
            Err(STreeError::Blob(_))
        ));
        let mut extra = blob.clone();
        extra.push(0);
        assert!(matches!(
            STree::from_blob(*t.params(), line_cost(), &extra),
            Err(STreeError::Blob(_))
        ));
        let mut bad_kind = blob.clone();
        bad_kind[0] = 9;
        assert!(matches!(
            STree::from_blob(*t.params(), line_cost(), &bad_kind),
            Err(STreeError::Blob(_))
        ));
        assert!(matches!(
            STree::from_blob(*t.params(), line_cost(), &[]),
            Err(STreeError::Blob(_))
        ));
    }

    fn random_signature(rng: &mut ChaCha8Rng, bins: usize, m: u16) -> Signature {
        loop {
            let v: Vec<f64> = (0..bins)
                .map(|_| if rng.random_bool(0.4) { rng.random_range(0.0..1.0) } else { 0.0 })
                .collect();
            if v.iter().sum::<f64>() > 0.0 {
                return Signature::encode(&Histogram::from_weights(&v).unwrap(), m);
            }
        }
    }

    #[test]
    fn random_inserts_keep_every_invariant() {
        let p = crate::palette::default_palette();
        let cost = crate::emd::cost_matrix(&p);
        let params = TreeParams { max_entries: 6, min_entries: 2, bins: 16, bits_per_block: 8 };
        let mut t = STree::new(params, cost).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for oid in 0..300 {
            let sig = random_signature(&mut rng, 16, 8);
            t.insert(sig, oid).unwrap();
        }
        assert_eq!(t.len(), 300);
        let violations = t.validate();
        assert!(violations.is_empty(), "{violations:?}");
        assert!(t.height() <= (300f64.ln() / 2f64.ln()).ceil() as usize);

        // Multi-path exact-match completeness over all stored signatures.
        for (sig, oid) in t.leaf_entries() {
            let out = t.search(&sig, SearchMode::MultiPath, false).unwrap();
            assert!(
                out.hits.iter().any(|h| h.1 == oid),
                "oid {oid} missing from its own exact-match search"
            );
        }
    }

    #[test]
    fn identical_insert_orders_build_identical_blobs() {
        let build = || {
            let mut t = STree::new(small_params(), line_cost()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for oid in 0..40 {
                t.insert(random_signature(&mut rng, 3, 4), oid).unwrap();
            }
            t.to_blob()
        };
        assert_eq!(build(), build());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        /// Occupancy, balance, and union invariants hold for arbitrary
        /// insert sequences under several parameter choices.
        #[test]
        fn invariants_hold_for_random_sequences(
            seed in 0u64..1000,
            count in 1usize..120,
            max_entries in 2usize..8,
        ) {
            let min_entries = (max_entries / 2).max(1).min(2);
            let params = TreeParams {
                max_entries,
                min_entries,
                bins: 3,
                bits_per_block: 4,
            };
            let mut t = STree::new(params, line_cost()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for oid in 0..count as u64 {
                t.insert(random_signature(&mut rng, 3, 4), oid).unwrap();
            }
            let violations = t.validate();
            prop_assert!(violations.is_empty(), "{violations:?}");
        }
    }
}
