//! Agents, characteristics and the probability tree of arrival realizations.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::Matching;

/// Exact rational used for utilities, discounts, probabilities and payoffs.
pub type Q = BigRational;

pub fn q(num: i64, den: i64) -> Q {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn qi(n: i64) -> Q {
    BigRational::from_integer(BigInt::from(n))
}

/// Upper bound on the number of agents a single arrival event may carry per side.
pub const MAX_ARRIVALS_PER_SIDE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::A => "A",
            Side::B => "B",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Agent {
    pub id: AgentId,
    pub side: Side,
    pub characteristic: String,
    pub name: Option<String>,
}

/// Utilities `u(a, b)` for side-A characteristics, `v(a, b)` for side-B characteristics,
/// and per-characteristic discount factors. Self-matches are worth zero by construction.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CharacteristicTable {
    pub side_a: BTreeSet<String>,
    pub side_b: BTreeSet<String>,
    pub u: BTreeMap<(String, String), Q>,
    pub v: BTreeMap<(String, String), Q>,
    pub delta: BTreeMap<String, Q>,
}

/// Agents arriving in one period. Both lists are kept sorted.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ArrivalEvent {
    pub a: Vec<AgentId>,
    pub b: Vec<AgentId>,
}

impl ArrivalEvent {
    pub fn new(mut a: Vec<AgentId>, mut b: Vec<AgentId>) -> Self {
        a.sort();
        b.sort();
        ArrivalEvent { a, b }
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty() && self.b.is_empty()
    }

    pub fn contains(&self, k: AgentId) -> bool {
        self.a.binary_search(&k).is_ok() || self.b.binary_search(&k).is_ok()
    }

    pub fn side(&self, side: Side) -> &[AgentId] {
        match side {
            Side::A => &self.a,
            Side::B => &self.b,
        }
    }
}

/// The history of arrival events up to some period.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Realization {
    pub events: Vec<ArrivalEvent>,
}

impl Realization {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Agents that arrived during the first `s` periods of `r`, per side.
pub fn cumulative_arrivals(r: &Realization, s: usize) -> Result<(Vec<AgentId>, Vec<AgentId>)> {
    if s == 0 || s > r.len() {
        if s == 0 && r.is_empty() {
            return Ok((Vec::new(), Vec::new()));
        }
        return Err(Error::Range(format!("period {s} outside 1..={}", r.len())));
    }
    let mut a: Vec<AgentId> = r.events[..s].iter().flat_map(|e| e.a.iter().copied()).collect();
    let mut b: Vec<AgentId> = r.events[..s].iter().flat_map(|e| e.b.iter().copied()).collect();
    a.sort();
    b.sort();
    Ok((a, b))
}

/// True iff `short` is a truncation of `long`.
pub fn follows(long: &Realization, short: &Realization) -> bool {
    short.len() <= long.len() && long.events[..short.len()] == short.events[..]
}

/// Input form of a tree node: the edge probability from its parent, its arrivals, its children.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeNode {
    pub prob: Q,
    pub arrivals: ArrivalEvent,
    pub children: Vec<TreeNode>,
}

impl TreeNode {
    pub fn new(prob: Q, arrivals: ArrivalEvent, children: Vec<TreeNode>) -> Self {
        TreeNode { prob, arrivals, children }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);
}

#[derive(Clone, Debug)]
pub struct Node {
    pub parent: Option<NodeId>,
    pub depth: usize,
    pub event: ArrivalEvent,
    /// Conditional probability of this node given its parent.
    pub prob: Q,
    pub children: Vec<NodeId>,
    /// Position among the parent's children in canonical order.
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationResult {
    pub violations: Vec<Violation>,
}

impl ValidationResult {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation { path: path.into(), message: message.into() });
    }

    pub fn summary(&self) -> String {
        self.violations
            .iter()
            .map(|v| if v.path.is_empty() { v.message.clone() } else { format!("{}: {}", v.path, v.message) })
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// A finite-horizon economy: characteristics, agents, and the arrival tree.
///
/// Children of every node are stored in canonical order (sorted by their arrival event),
/// and node ids follow a depth-first traversal in that order, root first.
#[derive(Clone, Debug)]
pub struct Economy {
    horizon: usize,
    table: CharacteristicTable,
    agents: Vec<Agent>,
    nodes: Vec<Node>,
    slot: HashMap<AgentId, usize>,
    /// `own[i][j]`: utility of agent slot `i` for partner slot `j` (missing if undefined).
    own: Vec<Vec<Option<Q>>>,
    delta: Vec<Option<Q>>,
    zero: Q,
    validation: ValidationResult,
}

impl Economy {
    pub fn new(horizon: usize, table: CharacteristicTable, agents: Vec<Agent>, tree: Vec<TreeNode>) -> Economy {
        let mut v = ValidationResult::default();
        let mut agents = agents;
        agents.sort_by_key(|a| a.id);
        for w in agents.windows(2) {
            if w[0].id == w[1].id {
                v.push("", format!("duplicate agent id {}", w[0].id));
            }
        }
        agents.dedup_by_key(|a| a.id);
        let slot: HashMap<AgentId, usize> = agents.iter().enumerate().map(|(i, a)| (a.id, i)).collect();

        let n = agents.len();
        let mut own = vec![vec![None; n]; n];
        let mut delta = vec![None; n];
        for (i, ai) in agents.iter().enumerate() {
            delta[i] = table.delta.get(&ai.characteristic).cloned();
            for (j, aj) in agents.iter().enumerate() {
                if i == j {
                    own[i][j] = Some(Q::zero());
                    continue;
                }
                own[i][j] = match (ai.side, aj.side) {
                    (Side::A, Side::B) => table.u.get(&(ai.characteristic.clone(), aj.characteristic.clone())).cloned(),
                    (Side::B, Side::A) => table.v.get(&(aj.characteristic.clone(), ai.characteristic.clone())).cloned(),
                    _ => None,
                };
            }
        }

        let mut nodes = vec![Node {
            parent: None,
            depth: 0,
            event: ArrivalEvent::default(),
            prob: Q::one(),
            children: Vec::new(),
            rank: 0,
        }];
        fn build(nodes: &mut Vec<Node>, parent: NodeId, children: &[TreeNode]) {
            let mut order: Vec<&TreeNode> = children.iter().collect();
            order.sort_by(|x, y| x.arrivals.cmp(&y.arrivals));
            for (rank, child) in order.into_iter().enumerate() {
                let id = NodeId(nodes.len());
                let depth = nodes[parent.0].depth + 1;
                nodes.push(Node {
                    parent: Some(parent),
                    depth,
                    event: child.arrivals.clone(),
                    prob: child.prob.clone(),
                    children: Vec::new(),
                    rank,
                });
                nodes[parent.0].children.push(id);
                build(nodes, id, &child.children);
            }
        }
        build(&mut nodes, NodeId::ROOT, &tree);

        let mut e = Economy { horizon, table, agents, nodes, slot, own, delta, zero: Q::zero(), validation: v };
        let mut v = std::mem::take(&mut e.validation);
        e.check(&mut v);
        e.validation = v;
        e
    }

    fn check(&self, v: &mut ValidationResult) {
        if self.horizon == 0 {
            v.push("", "horizon must be at least 1");
        }
        let t = &self.table;
        for c in t.side_a.intersection(&t.side_b) {
            v.push("", format!("characteristic {c} declared on both sides"));
        }
        for c in t.side_a.iter().chain(t.side_b.iter()) {
            match t.delta.get(c) {
                None => v.push("", format!("missing discount factor for {c}")),
                Some(d) => {
                    if d.is_negative() || *d >= Q::one() {
                        v.push("", format!("discount factor for {c} outside [0,1)"));
                    }
                }
            }
        }
        for c in t.delta.keys() {
            if !t.side_a.contains(c) && !t.side_b.contains(c) {
                v.push("", format!("discount factor for unknown characteristic {c}"));
            }
        }
        for a in &t.side_a {
            for b in &t.side_b {
                let key = (a.clone(), b.clone());
                if !t.u.contains_key(&key) {
                    v.push("", format!("u({a},{b}) missing"));
                }
                if !t.v.contains_key(&key) {
                    v.push("", format!("v({a},{b}) missing"));
                }
            }
        }
        for (name, map) in [("u", &t.u), ("v", &t.v)] {
            for (a, b) in map.keys() {
                if !t.side_a.contains(a) || !t.side_b.contains(b) {
                    v.push("", format!("{name}({a},{b}) refers to an unknown characteristic pair"));
                }
            }
        }
        for ag in &self.agents {
            let known = match ag.side {
                Side::A => t.side_a.contains(&ag.characteristic),
                Side::B => t.side_b.contains(&ag.characteristic),
            };
            if !known {
                v.push(
                    "",
                    format!("agent {} has unknown side-{} characteristic {}", ag.id, ag.side, ag.characteristic),
                );
            }
        }

        for (i, node) in self.nodes.iter().enumerate() {
            let id = NodeId(i);
            let path = self.path(id);
            if node.depth > 0 {
                if !node.prob.is_positive() {
                    v.push(path.clone(), "probability must be strictly positive");
                }
                for (side, ids) in [(Side::A, &node.event.a), (Side::B, &node.event.b)] {
                    if ids.len() > MAX_ARRIVALS_PER_SIDE {
                        v.push(path.clone(), format!("more than {MAX_ARRIVALS_PER_SIDE} side-{side} arrivals"));
                    }
                    for w in ids.windows(2) {
                        if w[0] == w[1] {
                            v.push(path.clone(), format!("duplicate arrival {}", w[0]));
                        }
                    }
                    for k in ids.iter() {
                        match self.agent(*k) {
                            None => v.push(path.clone(), format!("unknown agent {k}")),
                            Some(ag) if ag.side != side => v.push(
                                path.clone(),
                                format!("agent {k} listed on side {side} but belongs to side {}", ag.side),
                            ),
                            _ => {}
                        }
                    }
                }
                // disjointness against ancestors
                let mut anc = node.parent;
                while let Some(p) = anc {
                    for k in node.event.a.iter().chain(node.event.b.iter()) {
                        if self.nodes[p.0].event.contains(*k) {
                            v.push(
                                path.clone(),
                                format!("duplicate arrival {k} (already arrived at {})", self.path(p)),
                            );
                        }
                    }
                    anc = self.nodes[p.0].parent;
                }
                for k in node.event.a.iter() {
                    if node.event.b.binary_search(k).is_ok() {
                        v.push(path.clone(), format!("duplicate arrival {k} on both sides"));
                    }
                }
            }
            if node.depth < self.horizon {
                if node.children.is_empty() {
                    v.push(path.clone(), format!("leaf at depth {} but horizon is {}", node.depth, self.horizon));
                } else {
                    let total: Q = node.children.iter().map(|c| self.nodes[c.0].prob.clone()).sum();
                    if total != Q::one() {
                        v.push(path.clone(), format!("probabilities sum ≠ 1 (sum is {total})"));
                    }
                }
            } else if !node.children.is_empty() {
                v.push(path.clone(), format!("node deeper than horizon {}", self.horizon));
            }
            for w in node.children.windows(2) {
                if self.nodes[w[0].0].event == self.nodes[w[1].0].event {
                    v.push(path.clone(), "duplicate sibling arrival events");
                }
            }
        }
    }

    pub fn validation(&self) -> &ValidationResult {
        &self.validation
    }

    pub fn ensure_valid(&self) -> Result<()> {
        if self.validation.is_ok() {
            Ok(())
        } else {
            Err(Error::InvalidEconomy(self.validation.summary()))
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn table(&self) -> &CharacteristicTable {
        &self.table
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn agent(&self, k: AgentId) -> Option<&Agent> {
        self.slot.get(&k).map(|&i| &self.agents[i])
    }

    pub fn side(&self, k: AgentId) -> Side {
        self.agents[self.slot[&k]].side
    }

    pub fn label(&self, k: AgentId) -> String {
        match self.agent(k) {
            Some(a) => a.name.clone().unwrap_or_else(|| a.characteristic.clone()),
            None => k.to_string(),
        }
    }

    /// Agent with the given display name or characteristic label.
    pub fn agent_named(&self, name: &str) -> Option<AgentId> {
        self.agents
            .iter()
            .find(|a| a.name.as_deref() == Some(name))
            .or_else(|| self.agents.iter().find(|a| a.characteristic == name))
            .map(|a| a.id)
    }

    /// Utility `k` gets from being matched to `partner` (zero when `partner == k`).
    pub fn utility(&self, k: AgentId, partner: AgentId) -> &Q {
        if k == partner {
            return &self.zero;
        }
        self.own[self.slot[&k]][self.slot[&partner]].as_ref().expect("utility undefined; economy not validated")
    }

    /// `u(a, b)` for side-A agent `a` and side-B agent `b`.
    pub fn u(&self, a: AgentId, b: AgentId) -> &Q {
        self.utility(a, b)
    }

    /// `v(a, b)` for side-A agent `a` and side-B agent `b`.
    pub fn v(&self, a: AgentId, b: AgentId) -> &Q {
        self.utility(b, a)
    }

    pub fn delta(&self, k: AgentId) -> &Q {
        self.delta[self.slot[&k]].as_ref().expect("discount undefined; economy not validated")
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).map(NodeId)
    }

    /// Non-root nodes in canonical depth-first order.
    pub fn period_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (1..self.nodes.len()).map(NodeId)
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id.0].depth == self.horizon
    }

    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.node_ids().filter(|&n| self.nodes[n.0].depth == self.horizon && n != NodeId::ROOT)
    }

    /// Node path as child ranks joined by `/`; the root is the empty string.
    pub fn path(&self, id: NodeId) -> String {
        let mut ranks = Vec::new();
        let mut cur = id;
        while let Some(p) = self.nodes[cur.0].parent {
            ranks.push(self.nodes[cur.0].rank.to_string());
            cur = p;
        }
        ranks.reverse();
        ranks.join("/")
    }

    pub fn node_at(&self, path: &str) -> Result<NodeId> {
        let mut cur = NodeId::ROOT;
        if path.is_empty() {
            return Ok(cur);
        }
        for part in path.split('/') {
            let rank: usize = part.parse().map_err(|_| Error::Range(format!("bad node path {path:?}")))?;
            cur = *self.nodes[cur.0]
                .children
                .get(rank)
                .ok_or_else(|| Error::Range(format!("node path {path:?} not in tree")))?;
        }
        Ok(cur)
    }

    /// Ancestors from the depth-1 node down to `id` inclusive.
    pub fn lineage(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut cur = id;
        while cur != NodeId::ROOT {
            out.push(cur);
            cur = self.nodes[cur.0].parent.expect("non-root node has parent");
        }
        out.reverse();
        out
    }

    pub fn realization(&self, id: NodeId) -> Realization {
        Realization { events: self.lineage(id).into_iter().map(|n| self.nodes[n.0].event.clone()).collect() }
    }

    pub fn node_of(&self, r: &Realization) -> Result<NodeId> {
        let mut cur = NodeId::ROOT;
        for ev in &r.events {
            cur = *self.nodes[cur.0]
                .children
                .iter()
                .find(|c| self.nodes[c.0].event == *ev)
                .ok_or_else(|| Error::Range("realization is not a node of the tree".into()))?;
        }
        Ok(cur)
    }

    /// True iff `desc` weakly follows `anc`.
    pub fn is_descendant(&self, desc: NodeId, anc: NodeId) -> bool {
        let mut cur = Some(desc);
        while let Some(c) = cur {
            if c == anc {
                return true;
            }
            cur = self.nodes[c.0].parent;
        }
        false
    }

    /// Nodes of the subtree rooted at `id` (including `id`) in depth-first order.
    pub fn subtree(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = vec![id];
        let mut i = 0;
        while i < out.len() {
            let n = out[i];
            out.extend(self.nodes[n.0].children.iter().copied());
            i += 1;
        }
        out.sort();
        out
    }

    /// Probability of reaching `desc` from its ancestor `anc`.
    pub fn conditional_prob(&self, desc: NodeId, anc: NodeId) -> Q {
        let mut p = Q::one();
        let mut cur = desc;
        while cur != anc {
            p *= &self.nodes[cur.0].prob;
            cur = self.nodes[cur.0].parent.expect("anc must be an ancestor");
        }
        p
    }

    /// Cumulative arrivals along the path to `id`, per side, sorted.
    pub fn arrived(&self, id: NodeId) -> (Vec<AgentId>, Vec<AgentId>) {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for n in self.lineage(id) {
            a.extend(self.nodes[n.0].event.a.iter().copied());
            b.extend(self.nodes[n.0].event.b.iter().copied());
        }
        a.sort();
        b.sort();
        (a, b)
    }

    /// Period (depth) at which `k` arrives on the path to `id`, if it does.
    pub fn arrival_period(&self, k: AgentId, id: NodeId) -> Option<usize> {
        self.lineage(id).into_iter().find(|n| self.nodes[n.0].event.contains(k)).map(|n| self.nodes[n.0].depth)
    }

    pub fn with_tree(&self, horizon: usize, tree: Vec<TreeNode>) -> Economy {
        Economy::new(horizon, self.table.clone(), self.agents.clone(), tree)
    }

    /// Input-form copy of the subtree below `id` (children of `id`).
    pub fn tree_below(&self, id: NodeId) -> Vec<TreeNode> {
        self.nodes[id.0]
            .children
            .iter()
            .map(|&c| TreeNode {
                prob: self.nodes[c.0].prob.clone(),
                arrivals: self.nodes[c.0].event.clone(),
                children: self.tree_below(c),
            })
            .collect()
    }

    /// Input-form copy of the whole tree.
    pub fn tree(&self) -> Vec<TreeNode> {
        self.tree_below(NodeId::ROOT)
    }
}

/// Agents who can match at `node` given the matching `m` at its parent: those unmatched
/// through the previous period plus the current arrivals.
pub fn available_agents(e: &Economy, m: &Matching, node: NodeId) -> Result<(Vec<AgentId>, Vec<AgentId>)> {
    let n = e.node(node);
    let parent = n.parent.ok_or_else(|| Error::Range("the root is not a period node".into()))?;
    let (mut a, mut b) = if parent == NodeId::ROOT {
        (Vec::new(), Vec::new())
    } else {
        let pm = m
            .get(parent)
            .ok_or_else(|| Error::Structural(format!("matching undefined at parent {}", e.path(parent))))?;
        let (aa, ab) = e.arrived(parent);
        (
            aa.into_iter().filter(|k| !pm.is_matched(*k)).collect(),
            ab.into_iter().filter(|k| !pm.is_matched(*k)).collect(),
        )
    };
    a.extend(n.event.a.iter().copied());
    b.extend(n.event.b.iter().copied());
    a.sort();
    b.sort();
    Ok((a, b))
}

/// Economy of horizon `T - t` that starts after `node`: its first event at each child is the
/// agents left unmatched at `node` plus that child's arrivals, with conditional probabilities.
pub fn continuation_economy(e: &Economy, m: &Matching, node: NodeId) -> Result<Economy> {
    let depth = e.node(node).depth;
    if depth >= e.horizon() {
        return Err(Error::EmptyHorizon);
    }
    let (leftover_a, leftover_b) = if node == NodeId::ROOT {
        (Vec::new(), Vec::new())
    } else {
        let (aa, ab) = available_agents(e, m, node)?;
        let pm = m.get(node).ok_or_else(|| Error::Structural(format!("matching undefined at {}", e.path(node))))?;
        (
            aa.into_iter().filter(|k| !pm.is_matched(*k)).collect::<Vec<_>>(),
            ab.into_iter().filter(|k| !pm.is_matched(*k)).collect::<Vec<_>>(),
        )
    };
    let tree = e
        .tree_below(node)
        .into_iter()
        .map(|mut c| {
            let mut a = leftover_a.clone();
            a.extend(c.arrivals.a.iter().copied());
            let mut b = leftover_b.clone();
            b.extend(c.arrivals.b.iter().copied());
            c.arrivals = ArrivalEvent::new(a, b);
            c
        })
        .collect();
    Ok(e.with_tree(e.horizon() - depth, tree))
}

pub fn validate_economy(e: &Economy) -> ValidationResult {
    e.validation().clone()
}
