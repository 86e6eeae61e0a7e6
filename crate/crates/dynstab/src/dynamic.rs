//! Dynamic stability: conjecture sets, verdicts with witnesses, and the stable sets
//! themselves.
//!
//! The set of dynamically stable matchings factors over subtrees. Below a node, only the
//! agents still available there matter, so the solver works on pairs (node, available agents)
//! and memoizes them in a [`StableSetCache`]. A [`Plan`] is a matching of one such subproblem:
//! the pairs formed at the node plus one plan per child, with every available agent's payoff.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use num_traits::Zero;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io;
use crate::matching::{validate_matching, Matching, PeriodMatching};
use crate::model::{available_agents, AgentId, Economy, NodeId, Side, Q};
use crate::payoff::payoff;
use crate::stability::{stable_among_matchers, stable_among_matchers_matchings, static_stable_set, BlockWitness};

pub const DEFAULT_LIMIT: u64 = 10_000_000;

/// Which solution concept a computation targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Concept {
    /// Both sides' waiting conditions and no blocking pair.
    Dynamic,
    /// Only side A's waiting condition and no blocking pair; conjectures drawn from side-A sets.
    SideA,
    /// Diagnostic: every conjecture (not just some) must be weakly worse than the matching.
    Universal,
}

/// Which agents the waiting conditions are checked for at each node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WaitCheck {
    /// Only agents matched at the node; sufficient for the existential concepts.
    MatchedOnly,
    /// Every available agent.
    AllAvailable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mode {
    pub concept: Concept,
    pub wait_check: WaitCheck,
}

impl Mode {
    pub const DYNAMIC: Mode = Mode { concept: Concept::Dynamic, wait_check: WaitCheck::MatchedOnly };
    pub const SIDE_A: Mode = Mode { concept: Concept::SideA, wait_check: WaitCheck::MatchedOnly };
    pub const UNIVERSAL: Mode = Mode { concept: Concept::Universal, wait_check: WaitCheck::AllAvailable };

    pub fn new(concept: Concept, wait_check: WaitCheck) -> Self {
        Mode { concept, wait_check }
    }

    /// Mode whose stable sets supply the conjectured continuations.
    fn conjectures(self) -> Mode {
        match self.concept {
            Concept::Universal => Mode { concept: Concept::Dynamic, wait_check: WaitCheck::MatchedOnly },
            _ => self,
        }
    }

    fn checks(self, side: Side) -> bool {
        self.concept != Concept::SideA || side == Side::A
    }

    fn checks_unmatched(self) -> bool {
        self.wait_check == WaitCheck::AllAvailable || self.concept == Concept::Universal
    }

    /// Whether payoff `u` meets the waiting condition given the conjecture payoff range.
    fn waiting_ok(self, u: &Q, range: Option<&(Q, Q)>) -> bool {
        match (self.concept, range) {
            (Concept::Universal, None) => true,
            (Concept::Universal, Some((_, best))) => u >= best,
            (_, None) => false,
            (_, Some((worst, _))) => u >= worst,
        }
    }
}

/// A matching of a subproblem (node, available agents).
#[derive(Debug)]
pub struct Plan {
    /// Pairs `(a, b)` formed at the node, sorted.
    pub pairs: Vec<(AgentId, AgentId)>,
    /// One plan per child of the node, in canonical child order.
    pub children: Vec<Arc<Plan>>,
    /// Payoff at the node of every available agent, sorted by agent.
    pub values: Vec<(AgentId, Q)>,
}

impl Plan {
    pub fn value(&self, k: AgentId) -> &Q {
        let i = self.values.binary_search_by_key(&k, |(x, _)| *x).expect("agent available at plan node");
        &self.values[i].1
    }

    fn cmp_structure(&self, other: &Plan) -> std::cmp::Ordering {
        self.pairs.cmp(&other.pairs).then_with(|| {
            for (x, y) in self.children.iter().zip(other.children.iter()) {
                let c = x.cmp_structure(y);
                if c != std::cmp::Ordering::Equal {
                    return c;
                }
            }
            self.children.len().cmp(&other.children.len())
        })
    }
}

/// Solution of a subproblem: its stable plans and, per available agent, the range
/// (worst, best) of payoffs over the agent's conjectures (absent if the agent has none).
#[derive(Debug)]
pub struct NodeSolution {
    pub avail_a: Vec<AgentId>,
    pub avail_b: Vec<AgentId>,
    pub plans: Vec<Arc<Plan>>,
    pub conjecture_range: BTreeMap<AgentId, Option<(Q, Q)>>,
}

impl NodeSolution {
    pub fn worst(&self, k: AgentId) -> Option<&Q> {
        self.conjecture_range.get(&k).and_then(|r| r.as_ref()).map(|r| &r.0)
    }

    fn contains(&self, plan: &Plan) -> bool {
        self.plans.binary_search_by(|p| p.cmp_structure(plan)).is_ok()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct CacheKey {
    mode: Mode,
    subtree: u32,
    a: Vec<AgentId>,
    b: Vec<AgentId>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub entries: u64,
}

/// Memo of subproblem solutions keyed by the economy's characteristics and roster, the
/// subtree below the node (arrivals and probabilities), the available agents, and the mode.
/// Safe to share across threads and across economies.
#[derive(Debug)]
pub struct StableSetCache {
    enabled: bool,
    interner: Mutex<HashMap<String, u32>>,
    map: RwLock<HashMap<CacheKey, Arc<NodeSolution>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl Default for StableSetCache {
    fn default() -> Self {
        Self::new()
    }
}

impl StableSetCache {
    pub fn new() -> Self {
        StableSetCache {
            enabled: true,
            interner: Mutex::new(HashMap::new()),
            map: RwLock::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// A cache that never stores anything.
    pub fn disabled() -> Self {
        StableSetCache { enabled: false, ..Self::new() }
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            entries: self.map.read().expect("cache lock").len() as u64,
        }
    }

    fn intern(&self, s: String) -> u32 {
        let mut m = self.interner.lock().expect("interner lock");
        let n = m.len() as u32;
        *m.entry(s).or_insert(n)
    }

    fn get(&self, key: &CacheKey) -> Option<Arc<NodeSolution>> {
        if !self.enabled {
            return None;
        }
        let hit = self.map.read().expect("cache lock").get(key).cloned();
        if hit.is_some() {
            self.hits.fetch_add(1, Ordering::Relaxed);
        }
        hit
    }

    fn put(&self, key: CacheKey, sol: Arc<NodeSolution>) {
        self.misses.fetch_add(1, Ordering::Relaxed);
        if self.enabled {
            self.map.write().expect("cache lock").insert(key, sol);
        }
    }
}

fn merge(x: &[AgentId], y: &[AgentId]) -> Vec<AgentId> {
    let mut out: Vec<AgentId> = x.iter().chain(y.iter()).copied().collect();
    out.sort();
    out
}

/// Cartesian product of plan lists, first list varying slowest.
fn for_each_combo(lists: &[&[Arc<Plan>]], mut f: impl FnMut(&[Arc<Plan>]) -> Result<()>) -> Result<()> {
    if lists.iter().any(|l| l.is_empty()) {
        return Ok(());
    }
    let mut idx = vec![0usize; lists.len()];
    loop {
        let combo: Vec<Arc<Plan>> = idx.iter().zip(lists).map(|(&i, l)| l[i].clone()).collect();
        f(&combo)?;
        let mut pos = lists.len();
        loop {
            if pos == 0 {
                return Ok(());
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < lists[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// Solver for one economy, backed by a shared cache.
pub struct Solver<'a> {
    e: &'a Economy,
    cache: &'a StableSetCache,
    subtree_ids: Vec<u32>,
    limit: u64,
    work: AtomicU64,
}

impl<'a> Solver<'a> {
    pub fn new(e: &'a Economy, cache: &'a StableSetCache, limit: u64) -> Result<Self> {
        e.ensure_valid()?;
        let signature = io::roster_signature(e);
        let mut fingerprints = vec![String::new(); e.nodes().len()];
        for n in e.node_ids().collect::<Vec<_>>().into_iter().rev() {
            let mut s = String::from("[");
            for &c in &e.node(n).children {
                let node = e.node(c);
                s.push_str(&format!("{:?}|{:?}|{}|{};", node.event.a, node.event.b, node.prob, fingerprints[c.0]));
            }
            s.push(']');
            fingerprints[n.0] = s;
        }
        let subtree_ids = fingerprints.into_iter().map(|f| cache.intern(format!("{signature}#{f}"))).collect();
        Ok(Solver { e, cache, subtree_ids, limit, work: AtomicU64::new(0) })
    }

    pub fn economy(&self) -> &Economy {
        self.e
    }

    /// Candidate evaluations performed so far.
    pub fn work(&self) -> u64 {
        self.work.load(Ordering::Relaxed)
    }

    fn charge(&self, units: u64) -> Result<()> {
        let total = self.work.fetch_add(units, Ordering::Relaxed) + units;
        if total > self.limit {
            return Err(Error::EconomyTooLarge {
                bound: format!("more than {total} candidate evaluations"),
                limit: self.limit,
            });
        }
        Ok(())
    }

    /// Solve the subproblem at `node` with the given available agents.
    pub fn solve(&self, node: NodeId, a: &[AgentId], b: &[AgentId], mode: Mode) -> Result<Arc<NodeSolution>> {
        let key = CacheKey { mode, subtree: self.subtree_ids[node.0], a: a.to_vec(), b: b.to_vec() };
        if let Some(sol) = self.cache.get(&key) {
            return Ok(sol);
        }
        let sol = Arc::new(if self.e.is_leaf(node) {
            self.solve_leaf(a, b, mode)?
        } else {
            self.solve_inner(node, a, b, mode)?
        });
        self.cache.put(key, sol.clone());
        Ok(sol)
    }

    fn solve_leaf(&self, a: &[AgentId], b: &[AgentId], mode: Mode) -> Result<NodeSolution> {
        let e = self.e;
        let zero = Q::zero();
        let candidates: Vec<Vec<(AgentId, AgentId)>> = if mode.concept == Concept::SideA {
            stable_among_matchers_matchings(e, a, b, true, false)
                .into_iter()
                .filter(|pairs| {
                    let pm = PeriodMatching::from_pairs(pairs.iter().copied()).expect("matching");
                    !a.iter().any(|&x| {
                        b.iter().any(|&y| {
                            e.u(x, y) > e.utility(x, pm.partner(x)) && e.v(x, y) > e.utility(y, pm.partner(y))
                        })
                    })
                })
                .collect()
        } else {
            static_stable_set(e, a, b).into_iter().map(|pm| pm.pairs(e)).collect()
        };
        self.charge(candidates.len() as u64 + 1)?;
        let mut plans: Vec<Arc<Plan>> = candidates
            .into_iter()
            .map(|pairs| {
                let pm = PeriodMatching::from_pairs(pairs.iter().copied()).expect("matching");
                let values = merge(a, b).into_iter().map(|k| (k, e.utility(k, pm.partner(k)).clone())).collect();
                Arc::new(Plan { pairs, children: Vec::new(), values })
            })
            .collect();
        plans.sort_by(|x, y| x.cmp_structure(y));
        let conjecture_range = merge(a, b).into_iter().map(|k| (k, Some((zero.clone(), zero.clone())))).collect();
        Ok(NodeSolution { avail_a: a.to_vec(), avail_b: b.to_vec(), plans, conjecture_range })
    }

    /// Child subproblems reached when `leftover` agents stay unmatched at `node`.
    fn children_of(
        &self,
        node: NodeId,
        left_a: &[AgentId],
        left_b: &[AgentId],
        mode: Mode,
    ) -> Result<Vec<Arc<NodeSolution>>> {
        self.e
            .node(node)
            .children
            .iter()
            .map(|&c| {
                let ev = &self.e.node(c).event;
                self.solve(c, &merge(left_a, &ev.a), &merge(left_b, &ev.b), mode)
            })
            .collect()
    }

    fn solve_inner(&self, node: NodeId, a: &[AgentId], b: &[AgentId], mode: Mode) -> Result<NodeSolution> {
        let e = self.e;
        let children = &e.node(node).children;
        let probs: Vec<&Q> = children.iter().map(|c| &e.node(*c).prob).collect();

        // Conjecture payoff ranges from period matchings stable among matchers.
        let conj_mode = mode.conjectures();
        let conjecture_range = if conj_mode != mode {
            self.solve(node, a, b, conj_mode)?.conjecture_range.clone()
        } else {
            let sam = stable_among_matchers_matchings(e, a, b, true, true);
            let mut range: BTreeMap<AgentId, Option<(Q, Q)>> = merge(a, b).into_iter().map(|k| (k, None)).collect();
            for (left_a, left_b) in leftovers(a, b, &sam) {
                let sols = self.children_of(node, &left_a, &left_b, conj_mode)?;
                if sols.iter().any(|s| s.plans.is_empty()) {
                    continue;
                }
                for k in left_a.iter().chain(left_b.iter()) {
                    let mut lo = Q::zero();
                    let mut hi = Q::zero();
                    for (s, p) in sols.iter().zip(&probs) {
                        let vals = s.plans.iter().map(|pl| pl.value(*k));
                        lo += *p * vals.clone().min().expect("nonempty");
                        hi += *p * vals.max().expect("nonempty");
                    }
                    lo *= e.delta(*k);
                    hi *= e.delta(*k);
                    let entry = range.get_mut(k).expect("available agent");
                    *entry = Some(match entry.take() {
                        None => (lo, hi),
                        Some((w, bst)) => (w.min(lo), bst.max(hi)),
                    });
                }
            }
            range
        };

        let candidates = if mode.concept == Concept::SideA {
            stable_among_matchers_matchings(e, a, b, true, false)
        } else {
            stable_among_matchers_matchings(e, a, b, true, true)
        };
        // Drop candidates whose matched agents would rather wait.
        let candidates: Vec<Vec<(AgentId, AgentId)>> = candidates
            .into_iter()
            .filter(|pairs| {
                pairs.iter().all(|&(x, y)| {
                    (!mode.checks(Side::A) || mode.waiting_ok(e.u(x, y), conjecture_range[&x].as_ref()))
                        && (!mode.checks(Side::B) || mode.waiting_ok(e.v(x, y), conjecture_range[&y].as_ref()))
                })
            })
            .collect();

        let mut groups: BTreeMap<(Vec<AgentId>, Vec<AgentId>), Vec<Vec<(AgentId, AgentId)>>> = BTreeMap::new();
        for pairs in candidates {
            let key = leftover_of(a, b, &pairs);
            groups.entry(key).or_default().push(pairs);
        }

        let all: Vec<AgentId> = merge(a, b);
        let mut plans = Vec::new();
        for ((left_a, left_b), group) in groups {
            let sols = self.children_of(node, &left_a, &left_b, mode)?;
            let lists: Vec<&[Arc<Plan>]> = sols.iter().map(|s| s.plans.as_slice()).collect();
            let left: Vec<AgentId> = merge(&left_a, &left_b);
            let pms: Vec<PeriodMatching> =
                group.iter().map(|p| PeriodMatching::from_pairs(p.iter().copied()).expect("matching")).collect();
            for_each_combo(&lists, |combo| {
                self.charge(pms.len() as u64)?;
                let cont: HashMap<AgentId, Q> = left
                    .iter()
                    .map(|&k| {
                        let mut v = Q::zero();
                        for (pl, p) in combo.iter().zip(&probs) {
                            v += *p * pl.value(k);
                        }
                        (k, e.delta(k) * v)
                    })
                    .collect();
                for (pairs, pm) in group.iter().zip(&pms) {
                    let value = |k: AgentId| -> &Q {
                        match pm.partner_of(k) {
                            Some(p) => e.utility(k, p),
                            None => &cont[&k],
                        }
                    };
                    let blocked = a.iter().any(|&x| {
                        let ux = value(x);
                        b.iter().any(|&y| e.u(x, y) > ux && e.v(x, y) > value(y))
                    });
                    if blocked {
                        continue;
                    }
                    if mode.checks_unmatched() {
                        let waits = left.iter().any(|&k| {
                            mode.checks(e.side(k)) && !mode.waiting_ok(value(k), conjecture_range[&k].as_ref())
                        });
                        if waits {
                            continue;
                        }
                    }
                    let values = all.iter().map(|&k| (k, value(k).clone())).collect();
                    plans.push(Arc::new(Plan { pairs: pairs.clone(), children: combo.to_vec(), values }));
                }
                Ok(())
            })?;
        }
        plans.sort_by(|x, y| x.cmp_structure(y));
        Ok(NodeSolution { avail_a: a.to_vec(), avail_b: b.to_vec(), plans, conjecture_range })
    }

    /// Solution of the subproblem `m` induces at `node`.
    pub fn solve_at(&self, m: &Matching, node: NodeId, mode: Mode) -> Result<Arc<NodeSolution>> {
        let (a, b) = available_agents(self.e, m, node)?;
        self.solve(node, &a, &b, mode)
    }

    /// Write `plan` into `m` at `node` and below, on top of the matching at `node`'s parent.
    pub fn apply_plan(&self, m: &mut Matching, node: NodeId, plan: &Plan) {
        let mut pm = match self.e.node(node).parent {
            Some(p) if p != NodeId::ROOT => m.at(p).clone(),
            _ => PeriodMatching::new(),
        };
        for &(x, y) in &plan.pairs {
            pm.insert(x, y);
        }
        m.set(node, pm);
        for (&c, child) in self.e.node(node).children.iter().zip(&plan.children) {
            self.apply_plan(m, c, child);
        }
    }

    /// The plan `m` induces at `node`, without payoffs.
    fn plan_of(&self, m: &Matching, node: NodeId) -> Plan {
        Plan {
            pairs: m.new_pairs(self.e, node),
            children: self.e.node(node).children.iter().map(|&c| Arc::new(self.plan_of(m, c))).collect(),
            values: Vec::new(),
        }
    }

    /// All stable matchings of the economy under `mode`, sorted.
    pub fn stable_set(&self, mode: Mode) -> Result<Vec<Matching>> {
        let e = self.e;
        let roots = &e.node(NodeId::ROOT).children;
        let sols: Vec<Arc<NodeSolution>> = roots
            .par_iter()
            .map(|&c| {
                let ev = &e.node(c).event;
                self.solve(c, &ev.a, &ev.b, mode)
            })
            .collect::<Result<_>>()?;
        let total = sols.iter().fold(1u128, |acc, s| acc.saturating_mul(s.plans.len() as u128));
        if total > self.limit as u128 {
            return Err(Error::EconomyTooLarge { bound: total.to_string(), limit: self.limit });
        }
        let lists: Vec<&[Arc<Plan>]> = sols.iter().map(|s| s.plans.as_slice()).collect();
        let mut out = Vec::new();
        for_each_combo(&lists, |combo| {
            let mut m = Matching::undefined();
            for (&c, plan) in roots.iter().zip(combo) {
                self.apply_plan(&mut m, c, plan);
            }
            out.push(m);
            Ok(())
        })?;
        out.sort();
        Ok(out)
    }

    /// Members of `k`'s conjecture set at `node` relative to `m`, sorted.
    pub fn conjectures(&self, k: AgentId, m: &Matching, node: NodeId, mode: Mode) -> Result<Vec<Matching>> {
        let e = self.e;
        let mode = mode.conjectures();
        let (a, b) = available_agents(e, m, node)?;
        if a.binary_search(&k).is_err() && b.binary_search(&k).is_err() {
            return Err(Error::Domain(format!("agent {k} not available at {}", e.path(node))));
        }
        let mut out = Vec::new();
        for pairs in stable_among_matchers_matchings(e, &a, &b, true, true) {
            if pairs.iter().any(|&(x, y)| x == k || y == k) {
                continue;
            }
            let (left_a, left_b) = leftover_of(&a, &b, &pairs);
            let sols = self.children_of(node, &left_a, &left_b, mode)?;
            let lists: Vec<&[Arc<Plan>]> = sols.iter().map(|s| s.plans.as_slice()).collect();
            let head = Plan { pairs: pairs.clone(), children: Vec::new(), values: Vec::new() };
            for_each_combo(&lists, |combo| {
                self.charge(1)?;
                let mut c = m.clone();
                let plan = Plan {
                    children: combo.to_vec(),
                    ..Plan { pairs: head.pairs.clone(), children: Vec::new(), values: Vec::new() }
                };
                self.apply_plan(&mut c, node, &plan);
                out.push(c);
                Ok(())
            })?;
        }
        out.sort();
        out.dedup();
        Ok(out)
    }

    /// Verdict for `m` under `mode`.
    pub fn verdict(&self, m: &Matching, mode: Mode) -> Result<DsVerdict> {
        let v = validate_matching(m, self.e);
        if !v.is_ok() {
            return Err(Error::InvalidMatching(v.summary()));
        }
        let nodes = post_order(self.e, NodeId::ROOT);
        self.check_nodes(m, &nodes, mode)
    }

    /// Check the node conditions at each of `nodes`, in order, stopping at the first failure.
    fn check_nodes(&self, m: &Matching, nodes: &[NodeId], mode: Mode) -> Result<DsVerdict> {
        let e = self.e;
        for &n in nodes {
            let (a, b) = available_agents(e, m, n)?;
            let pm = m.at(n);
            let mut pay: HashMap<AgentId, Q> = HashMap::new();
            for &k in a.iter().chain(b.iter()) {
                pay.insert(k, payoff(e, k, m, n)?);
            }
            for &x in &a {
                for &y in &b {
                    if pm.partner(x) == y {
                        continue;
                    }
                    if e.u(x, y) > &pay[&x] && e.v(x, y) > &pay[&y] {
                        return Ok(DsVerdict::unstable(DsWitness::BlockingPair {
                            node: n,
                            a: x,
                            b: y,
                            u_ab: e.u(x, y).clone(),
                            payoff_a: pay[&x].clone(),
                            v_ab: e.v(x, y).clone(),
                            payoff_b: pay[&y].clone(),
                        }));
                    }
                }
            }
            let sol = self.solve(n, &a, &b, mode)?;
            for &k in a.iter().chain(b.iter()) {
                let side = e.side(k);
                if !mode.checks(side) || (!pm.is_matched(k) && !mode.checks_unmatched()) {
                    continue;
                }
                let range = sol.conjecture_range[&k].as_ref();
                if mode.waiting_ok(&pay[&k], range) {
                    continue;
                }
                let conjecture = match range {
                    None => None,
                    Some(_) => {
                        let members = self.conjectures(k, m, n, mode)?;
                        let mut scored = Vec::new();
                        for c in members {
                            let v = payoff(e, k, &c, n)?;
                            scored.push((v, c));
                        }
                        let pick = if mode.concept == Concept::Universal {
                            scored.into_iter().fold(None, |best: Option<(Q, Matching)>, (v, c)| match best {
                                Some((bv, bc)) if bv >= v => Some((bv, bc)),
                                _ => Some((v, c)),
                            })
                        } else {
                            scored.into_iter().fold(None, |best: Option<(Q, Matching)>, (v, c)| match best {
                                Some((bv, bc)) if bv <= v => Some((bv, bc)),
                                _ => Some((v, c)),
                            })
                        };
                        pick.map(|(v, c)| (c, v))
                    }
                };
                return Ok(DsVerdict::unstable(DsWitness::ProfitableWait {
                    node: n,
                    agent: k,
                    condition: if side == Side::A { Condition::Ds2 } else { Condition::Ds3 },
                    payoff: pay[&k].clone(),
                    conjecture,
                }));
            }
        }
        Ok(DsVerdict { stable: true, witness: None })
    }

    /// Why `candidate` is not in `k`'s conjecture set at `node` relative to `m`, if it is not.
    pub fn conjecture_rejection(
        &self,
        k: AgentId,
        m: &Matching,
        node: NodeId,
        candidate: &Matching,
        mode: Mode,
    ) -> Result<Option<ConjectureRejection>> {
        let e = self.e;
        let mode = mode.conjectures();
        let v = validate_matching(candidate, e);
        if !v.is_ok() {
            return Ok(Some(ConjectureRejection::InvalidMatching(v.summary())));
        }
        if !crate::matching::coincides_off_subtree(m, candidate, e, node)? {
            return Ok(Some(ConjectureRejection::DiffersOffSubtree));
        }
        if candidate.at(node).is_matched(k) {
            return Ok(Some(ConjectureRejection::AgentMatched));
        }
        let sam = stable_among_matchers(e, candidate, node)?;
        if let Some(w) = sam.witness {
            return Ok(Some(ConjectureRejection::NotStableAmongMatchers(w)));
        }
        let below: Vec<NodeId> = post_order(e, node).into_iter().filter(|n| *n != node).collect();
        let verdict = self.check_nodes(candidate, &below, mode)?;
        if let Some(w) = verdict.witness {
            return Ok(Some(ConjectureRejection::ContinuationNotStable(Box::new(w))));
        }
        Ok(None)
    }

    /// Whether the continuation of `m` below `node` is in the stable sets (fast membership test).
    pub fn continuation_is_stable(&self, m: &Matching, node: NodeId, mode: Mode) -> Result<bool> {
        let pm = m.at(node);
        let (a, b) = available_agents(self.e, m, node)?;
        let left_a: Vec<AgentId> = a.into_iter().filter(|k| !pm.is_matched(*k)).collect();
        let left_b: Vec<AgentId> = b.into_iter().filter(|k| !pm.is_matched(*k)).collect();
        let sols = self.children_of(node, &left_a, &left_b, mode)?;
        Ok(self.e.node(node).children.iter().zip(&sols).all(|(&c, s)| s.contains(&self.plan_of(m, c))))
    }
}

fn leftover_of(a: &[AgentId], b: &[AgentId], pairs: &[(AgentId, AgentId)]) -> (Vec<AgentId>, Vec<AgentId>) {
    let la = a.iter().copied().filter(|k| !pairs.iter().any(|(x, _)| x == k)).collect();
    let lb = b.iter().copied().filter(|k| !pairs.iter().any(|(_, y)| y == k)).collect();
    (la, lb)
}

fn leftovers(a: &[AgentId], b: &[AgentId], pms: &[Vec<(AgentId, AgentId)>]) -> Vec<(Vec<AgentId>, Vec<AgentId>)> {
    let mut out: Vec<_> = pms.iter().map(|p| leftover_of(a, b, p)).collect();
    out.sort();
    out.dedup();
    out
}

/// Nodes of the subtree at `root` with every node after its descendants; siblings in canonical order.
fn post_order(e: &Economy, root: NodeId) -> Vec<NodeId> {
    fn go(e: &Economy, n: NodeId, out: &mut Vec<NodeId>) {
        for &c in &e.node(n).children {
            go(e, c, out);
        }
        if n != NodeId::ROOT {
            out.push(n);
        }
    }
    let mut out = Vec::new();
    go(e, root, &mut out);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Condition {
    /// No contemporaneous blocking pair.
    #[serde(rename = "DS1")]
    Ds1,
    /// Side-A agents do not gain by waiting.
    #[serde(rename = "DS2")]
    Ds2,
    /// Side-B agents do not gain by waiting.
    #[serde(rename = "DS3")]
    Ds3,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DsWitness {
    BlockingPair {
        node: NodeId,
        a: AgentId,
        b: AgentId,
        u_ab: Q,
        payoff_a: Q,
        v_ab: Q,
        payoff_b: Q,
    },
    /// The agent's payoff falls short of what its conjectures guarantee. `conjecture` is the
    /// payoff-minimizing conjecture (payoff-maximizing for the universal diagnostic), or
    /// `None` when the agent has no conjecture at all.
    ProfitableWait {
        node: NodeId,
        agent: AgentId,
        condition: Condition,
        payoff: Q,
        conjecture: Option<(Matching, Q)>,
    },
}

impl DsWitness {
    pub fn node(&self) -> NodeId {
        match self {
            DsWitness::BlockingPair { node, .. } | DsWitness::ProfitableWait { node, .. } => *node,
        }
    }

    pub fn condition(&self) -> Condition {
        match self {
            DsWitness::BlockingPair { .. } => Condition::Ds1,
            DsWitness::ProfitableWait { condition, .. } => *condition,
        }
    }

    pub fn agents(&self) -> Vec<AgentId> {
        match self {
            DsWitness::BlockingPair { a, b, .. } => vec![*a, *b],
            DsWitness::ProfitableWait { agent, .. } => vec![*agent],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DsVerdict {
    pub stable: bool,
    pub witness: Option<DsWitness>,
}

impl DsVerdict {
    fn unstable(w: DsWitness) -> Self {
        DsVerdict { stable: false, witness: Some(w) }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConjectureRejection {
    InvalidMatching(String),
    DiffersOffSubtree,
    AgentMatched,
    NotStableAmongMatchers(BlockWitness),
    ContinuationNotStable(Box<DsWitness>),
}

/// An agent's conjecture set at a node, materialized.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConjectureSet {
    pub agent: AgentId,
    pub node: NodeId,
    pub members: Vec<Matching>,
}

pub fn conjecture_set(
    k: AgentId,
    m: &Matching,
    node: NodeId,
    e: &Economy,
    cache: &StableSetCache,
) -> Result<ConjectureSet> {
    let s = Solver::new(e, cache, DEFAULT_LIMIT)?;
    Ok(ConjectureSet { agent: k, node, members: s.conjectures(k, m, node, Mode::DYNAMIC)? })
}

pub fn dynamically_stable_set(e: &Economy, cache: &StableSetCache) -> Result<Vec<Matching>> {
    Solver::new(e, cache, DEFAULT_LIMIT)?.stable_set(Mode::DYNAMIC)
}

pub fn is_dynamically_stable(m: &Matching, e: &Economy, cache: &StableSetCache) -> Result<DsVerdict> {
    Solver::new(e, cache, DEFAULT_LIMIT)?.verdict(m, Mode::DYNAMIC)
}

pub fn side_a_dynamically_stable(m: &Matching, e: &Economy, cache: &StableSetCache) -> Result<DsVerdict> {
    Solver::new(e, cache, DEFAULT_LIMIT)?.verdict(m, Mode::SIDE_A)
}

/// The diagnostic set in which every conjecture must be weakly worse than the matching.
pub fn universal_blocking_set(e: &Economy, cache: &StableSetCache) -> Result<Vec<Matching>> {
    Solver::new(e, cache, DEFAULT_LIMIT)?.stable_set(Mode::UNIVERSAL)
}

/// For `m` dynamically stable: whether `m` is in the conjecture set of every agent it leaves
/// unmatched at every node.
pub fn check_shortcut(m: &Matching, e: &Economy, cache: &StableSetCache) -> Result<bool> {
    let s = Solver::new(e, cache, DEFAULT_LIMIT)?;
    check_shortcut_with(&s, m)
}

pub fn check_shortcut_with(s: &Solver, m: &Matching) -> Result<bool> {
    let e = s.economy();
    if !s.verdict(m, Mode::DYNAMIC)?.stable {
        return Err(Error::Contract("matching is not dynamically stable".into()));
    }
    for n in e.period_nodes() {
        let (a, b) = available_agents(e, m, n)?;
        for k in a.into_iter().chain(b) {
            if m.at(n).is_matched(k) {
                continue;
            }
            if s.conjecture_rejection(k, m, n, m, Mode::DYNAMIC)?.is_some() {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
