//! Per-node matchings, their validation, and bounded exhaustive enumeration.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{available_agents, AgentId, ArrivalEvent, Economy, NodeId, Side, ValidationResult, Violation};

/// Cumulative pairing at one node. Stored symmetrically; agents absent from the map are single.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PeriodMatching {
    pairing: BTreeMap<AgentId, AgentId>,
}

impl PeriodMatching {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build from `(a, b)` pairs; fails if an agent appears twice.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (AgentId, AgentId)>) -> Result<Self> {
        let mut pm = PeriodMatching::new();
        for (a, b) in pairs {
            if a == b || pm.pairing.contains_key(&a) || pm.pairing.contains_key(&b) {
                return Err(Error::InvalidMatching(format!("agent appears in two pairs ({a},{b})")));
            }
            pm.pairing.insert(a, b);
            pm.pairing.insert(b, a);
        }
        Ok(pm)
    }

    /// Raw map form; the result may violate the involution property and is meant for validation tests.
    pub fn from_map(pairing: BTreeMap<AgentId, AgentId>) -> Self {
        PeriodMatching { pairing }
    }

    pub fn insert(&mut self, a: AgentId, b: AgentId) {
        self.pairing.insert(a, b);
        self.pairing.insert(b, a);
    }

    pub fn partner(&self, k: AgentId) -> AgentId {
        self.pairing.get(&k).copied().unwrap_or(k)
    }

    pub fn partner_of(&self, k: AgentId) -> Option<AgentId> {
        self.pairing.get(&k).copied()
    }

    pub fn is_matched(&self, k: AgentId) -> bool {
        self.pairing.contains_key(&k)
    }

    pub fn map(&self) -> &BTreeMap<AgentId, AgentId> {
        &self.pairing
    }

    pub fn is_empty(&self) -> bool {
        self.pairing.is_empty()
    }

    /// Pairs oriented (side A, side B), sorted.
    pub fn pairs(&self, e: &Economy) -> Vec<(AgentId, AgentId)> {
        self.pairing
            .iter()
            .filter(|(k, _)| e.agent(**k).map(|a| a.side) == Some(Side::A))
            .map(|(k, p)| (*k, *p))
            .collect()
    }
}

/// A matching: a period matching at every non-root node.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Matching {
    per_node: BTreeMap<NodeId, PeriodMatching>,
}

impl Matching {
    /// Everyone single at every node.
    pub fn empty(e: &Economy) -> Self {
        Matching { per_node: e.period_nodes().map(|n| (n, PeriodMatching::new())).collect() }
    }

    /// Undefined at every node.
    pub fn undefined() -> Self {
        Matching { per_node: BTreeMap::new() }
    }

    pub fn get(&self, node: NodeId) -> Option<&PeriodMatching> {
        self.per_node.get(&node)
    }

    pub fn at(&self, node: NodeId) -> &PeriodMatching {
        self.per_node.get(&node).expect("matching undefined at node")
    }

    pub fn set(&mut self, node: NodeId, pm: PeriodMatching) {
        self.per_node.insert(node, pm);
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&NodeId, &PeriodMatching)> {
        self.per_node.iter()
    }

    /// Pairs formed at `node` that did not exist at its parent.
    pub fn new_pairs(&self, e: &Economy, node: NodeId) -> Vec<(AgentId, AgentId)> {
        let parent = e.node(node).parent;
        let before = parent.and_then(|p| self.get(p));
        self.at(node).pairs(e).into_iter().filter(|(a, _)| before.is_none_or(|pm| !pm.is_matched(*a))).collect()
    }

    /// Build a matching from the pairs newly formed at each node.
    pub fn from_new_pairs(e: &Economy, new: &BTreeMap<NodeId, Vec<(AgentId, AgentId)>>) -> Result<Self> {
        let mut m = Matching::undefined();
        for n in e.period_nodes() {
            let mut pm = match e.node(n).parent {
                Some(p) if p != NodeId::ROOT => m.at(p).clone(),
                _ => PeriodMatching::new(),
            };
            for &(a, b) in new.get(&n).map(|v| v.as_slice()).unwrap_or(&[]) {
                if pm.is_matched(a) || pm.is_matched(b) {
                    return Err(Error::InvalidMatching(format!("agent re-matched at {}", e.path(n))));
                }
                pm.insert(a, b);
            }
            m.set(n, pm);
        }
        Ok(m)
    }
}

/// Agents newly matched at a node, per side.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MatchedSets {
    pub a: Vec<AgentId>,
    pub b: Vec<AgentId>,
}

pub fn matched_sets(e: &Economy, m: &Matching, node: NodeId) -> Result<MatchedSets> {
    let (aa, ab) = available_agents(e, m, node)?;
    let pm = m.get(node).ok_or_else(|| Error::Structural(format!("matching undefined at {}", e.path(node))))?;
    Ok(MatchedSets {
        a: aa.into_iter().filter(|k| pm.is_matched(*k)).collect(),
        b: ab.into_iter().filter(|k| pm.is_matched(*k)).collect(),
    })
}

pub fn validate_matching(m: &Matching, e: &Economy) -> ValidationResult {
    let mut out = Vec::new();
    let mut push = |path: String, message: String| out.push(Violation { path, message });
    for (n, _) in m.nodes() {
        if n.0 == 0 || n.0 >= e.nodes().len() {
            push(String::new(), format!("matching defined at unknown node {}", n.0));
        }
    }
    for n in e.period_nodes() {
        let path = e.path(n);
        let Some(pm) = m.get(n) else {
            push(path, "matching undefined at node".into());
            continue;
        };
        let (arr_a, arr_b) = e.arrived(n);
        for (&k, &p) in pm.map() {
            if pm.partner(p) != k {
                push(path.clone(), format!("not an involution at agent {k}"));
            }
            let (Some(ak), Some(ap)) = (e.agent(k), e.agent(p)) else {
                push(path.clone(), format!("unknown agent in pair ({k},{p})"));
                continue;
            };
            if ak.side == ap.side {
                push(path.clone(), format!("agents {k} and {p} are on the same side"));
            }
            let arrived = |x: AgentId, side: Side| match side {
                Side::A => arr_a.binary_search(&x).is_ok(),
                Side::B => arr_b.binary_search(&x).is_ok(),
            };
            if !arrived(k, ak.side) {
                push(path.clone(), format!("agent {k} matched but not yet arrived"));
            } else if !arrived(p, ap.side) {
                push(path.clone(), format!("partner not yet arrived: {p} (matched to {k})"));
            }
        }
        if let Some(parent) = e.node(n).parent.filter(|p| *p != NodeId::ROOT) {
            if let Some(prev) = m.get(parent) {
                for (&k, &p) in prev.map() {
                    if pm.partner(k) != p {
                        push(path.clone(), format!("irreversibility: agent {k} matched to {p} earlier"));
                    }
                }
            }
        }
    }
    out.sort();
    out.dedup();
    ValidationResult { violations: out }
}

/// True iff the two matchings agree at every node that does not weakly follow `node`.
pub fn coincides_off_subtree(m1: &Matching, m2: &Matching, e: &Economy, node: NodeId) -> Result<bool> {
    if node.0 >= e.nodes().len() {
        return Err(Error::Range(format!("node {} not in tree", node.0)));
    }
    Ok(e.period_nodes().filter(|n| !e.is_descendant(*n, node)).all(|n| m1.get(n) == m2.get(n)))
}

/// Number of one-to-one partial matchings between sets of sizes `n` and `m`.
pub fn partial_matching_count(n: usize, m: usize) -> BigUint {
    // sum_k C(n,k) C(m,k) k!
    let mut total = BigUint::from(0u32);
    let mut term = BigUint::one();
    for k in 0..=n.min(m) {
        if k > 0 {
            term = term * BigUint::from(n - k + 1) * BigUint::from(m - k + 1) / BigUint::from(k);
        }
        total += &term;
    }
    total
}

/// All partial matchings between `a` and `b`, in enumeration order: side-A agents in
/// ascending order, each trying "single" first and then partners in ascending order.
pub fn partial_matchings(a: &[AgentId], b: &[AgentId]) -> Vec<Vec<(AgentId, AgentId)>> {
    fn go(
        i: usize,
        a: &[AgentId],
        b: &[AgentId],
        used: &mut Vec<bool>,
        cur: &mut Vec<(AgentId, AgentId)>,
        out: &mut Vec<Vec<(AgentId, AgentId)>>,
    ) {
        if i == a.len() {
            out.push(cur.clone());
            return;
        }
        go(i + 1, a, b, used, cur, out);
        for j in 0..b.len() {
            if !used[j] {
                used[j] = true;
                cur.push((a[i], b[j]));
                go(i + 1, a, b, used, cur, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(0, a, b, &mut vec![false; b.len()], &mut Vec::new(), &mut out);
    out
}

/// Upper bound on the number of matchings: the product over nodes of the number of partial
/// matchings between the agents that have arrived by that node.
pub fn matching_count_bound(e: &Economy) -> BigUint {
    e.period_nodes()
        .map(|n| {
            let (a, b) = e.arrived(n);
            partial_matching_count(a.len(), b.len())
        })
        .product()
}

/// Visit every valid matching once, in deterministic order. The visitor returns `false` to stop.
pub fn for_each_matching(e: &Economy, limit: u64, mut visit: impl FnMut(&Matching) -> bool) -> Result<()> {
    e.ensure_valid()?;
    let bound = matching_count_bound(e);
    if bound.to_u64().is_none_or(|b| b > limit) {
        return Err(Error::EconomyTooLarge { bound: bound.to_string(), limit });
    }
    let order: Vec<NodeId> = e.period_nodes().collect();
    fn go(
        e: &Economy,
        order: &[NodeId],
        i: usize,
        m: &mut Matching,
        visit: &mut dyn FnMut(&Matching) -> bool,
    ) -> Result<bool> {
        if i == order.len() {
            return Ok(visit(m));
        }
        let n = order[i];
        let (aa, ab) = available_agents(e, m, n)?;
        let base = match e.node(n).parent {
            Some(p) if p != NodeId::ROOT => m.at(p).clone(),
            _ => PeriodMatching::new(),
        };
        for pairs in partial_matchings(&aa, &ab) {
            let mut pm = base.clone();
            for (a, b) in pairs {
                pm.insert(a, b);
            }
            m.set(n, pm);
            if !go(e, order, i + 1, m, visit)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
    let mut m = Matching::undefined();
    go(e, &order, 0, &mut m, &mut visit)?;
    Ok(())
}

/// Every valid matching, in deterministic order.
pub fn enumerate_matchings(e: &Economy, limit: u64) -> Result<impl Iterator<Item = Matching>> {
    let mut out = Vec::new();
    for_each_matching(e, limit, |m| {
        out.push(m.clone());
        true
    })?;
    Ok(out.into_iter())
}

/// The part of `m` strictly below `node`, expressed on `cont` (the continuation economy at
/// `node`): pairs formed at or before `node` are dropped.
pub fn continuation_matching(e: &Economy, m: &Matching, node: NodeId, cont: &Economy) -> Result<Matching> {
    let (fixed, leftover) = if node == NodeId::ROOT {
        (PeriodMatching::new(), (Vec::new(), Vec::new()))
    } else {
        let pm = m.get(node).ok_or_else(|| Error::Structural(format!("matching undefined at {}", e.path(node))))?;
        let (a, b) = available_agents(e, m, node)?;
        let unmatched = |v: Vec<AgentId>| v.into_iter().filter(|k| !pm.is_matched(*k)).collect::<Vec<_>>();
        (pm.clone(), (unmatched(a), unmatched(b)))
    };
    let depth = e.node(node).depth;
    let mut out = Matching::undefined();
    for d in e.subtree(node).into_iter().filter(|d| *d != node) {
        let mut r = e.realization(d);
        r.events.drain(..depth);
        let first = &mut r.events[0];
        let mut a = leftover.0.clone();
        a.extend(first.a.iter().copied());
        let mut b = leftover.1.clone();
        b.extend(first.b.iter().copied());
        *first = ArrivalEvent::new(a, b);
        let cn = cont.node_of(&r)?;
        let pm = m.get(d).ok_or_else(|| Error::Structural(format!("matching undefined at {}", e.path(d))))?;
        let mut keep = PeriodMatching::new();
        for (&k, &p) in pm.map() {
            if !fixed.is_matched(k) {
                keep.pairing.insert(k, p);
            }
        }
        out.set(cn, keep);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{continuation_economy, q, Agent, CharacteristicTable, TreeNode};
    use std::collections::HashSet;

    pub(crate) fn one_period(n: usize, m: usize) -> Economy {
        let mut t = CharacteristicTable::default();
        let mut agents = Vec::new();
        for i in 0..n {
            t.side_a.insert(format!("a{i}"));
            t.delta.insert(format!("a{i}"), q(1, 2));
            agents.push(Agent { id: AgentId(i as u32), side: Side::A, characteristic: format!("a{i}"), name: None });
        }
        for j in 0..m {
            t.side_b.insert(format!("b{j}"));
            t.delta.insert(format!("b{j}"), q(1, 2));
            agents.push(Agent {
                id: AgentId((n + j) as u32),
                side: Side::B,
                characteristic: format!("b{j}"),
                name: None,
            });
        }
        for i in 0..n {
            for j in 0..m {
                t.u.insert((format!("a{i}"), format!("b{j}")), q((i + j) as i64 + 1, 1));
                t.v.insert((format!("a{i}"), format!("b{j}")), q((i * j) as i64 + 1, 1));
            }
        }
        let ev =
            ArrivalEvent::new((0..n as u32).map(AgentId).collect(), (n as u32..(n + m) as u32).map(AgentId).collect());
        Economy::new(1, t, agents, vec![TreeNode::new(q(1, 1), ev, vec![])])
    }

    #[test]
    fn counts_match_direct_formula() {
        assert_eq!(enumerate_matchings(&one_period(1, 1), 100).unwrap().count(), 2);
        assert_eq!(enumerate_matchings(&one_period(2, 2), 100).unwrap().count(), 7);
        for n in 0..=3 {
            for m in 0..=3 {
                let count = enumerate_matchings(&one_period(n, m), 1000).unwrap().count();
                assert_eq!(BigUint::from(count), partial_matching_count(n, m), "n={n} m={m}");
            }
        }
    }

    #[test]
    fn example1_stream_is_valid_and_distinct() {
        let f = fixtures::load_fixture("example1").unwrap();
        let mut seen = HashSet::new();
        for m in enumerate_matchings(&f.economy, 1_000_000).unwrap() {
            assert!(validate_matching(&m, &f.economy).is_ok());
            assert!(seen.insert(crate::io::matching_to_json(&f.economy, &m)));
        }
        assert!(seen.len() > 100);
    }

    #[test]
    fn limit_is_enforced() {
        let f = fixtures::load_fixture("example1").unwrap();
        assert!(matches!(enumerate_matchings(&f.economy, 10), Err(Error::EconomyTooLarge { .. })));
    }

    #[test]
    fn fixture_matchings_validate() {
        for name in fixtures::FIXTURES {
            let f = fixtures::load_fixture(name).unwrap();
            for (label, m) in &f.matchings {
                assert!(
                    validate_matching(m, &f.economy).is_ok(),
                    "{name}/{label}: {:?}",
                    validate_matching(m, &f.economy)
                );
            }
        }
    }

    #[test]
    fn availability_and_irreversibility_violations() {
        let f = fixtures::load_fixture("example1").unwrap();
        let e = &f.economy;
        let [kuhn, tucker, erdos, renyi, nash] =
            ["Kuhn", "Tucker", "Erdős", "Rényi", "Nash"].map(|n| e.agent_named(n).unwrap());
        let first = e.node(NodeId::ROOT).children[0];
        let second = e.node(first).children[0];
        let mut m = Matching::empty(e);
        m.set(first, PeriodMatching::from_pairs([(kuhn, tucker)]).unwrap());
        m.set(second, PeriodMatching::from_pairs([(kuhn, tucker)]).unwrap());
        let v = validate_matching(&m, e);
        assert!(v.violations.iter().any(|x| x.message.contains("partner not yet arrived")));

        let mut m = Matching::empty(e);
        m.set(first, PeriodMatching::from_pairs([(erdos, renyi)]).unwrap());
        m.set(second, PeriodMatching::from_pairs([(erdos, nash)]).unwrap());
        let v = validate_matching(&m, e);
        assert!(v.violations.iter().any(|x| x.message.contains("irreversibility")));
    }

    #[test]
    fn matched_sets_example1() {
        let f = fixtures::load_fixture("example1").unwrap();
        let e = &f.economy;
        let id = |n: &str| e.agent_named(n).unwrap();
        let first = e.node(NodeId::ROOT).children[0];
        let second = e.node(first).children[0];
        let ml = f.matching("mL");
        let s = matched_sets(e, ml, first).unwrap();
        let mut a = vec![id("Erdős"), id("Gale")];
        a.sort();
        let mut b = vec![id("Rényi"), id("Shapley")];
        b.sort();
        assert_eq!(s, MatchedSets { a, b });
        assert_eq!(matched_sets(e, ml, second).unwrap(), MatchedSets { a: vec![id("Kuhn")], b: vec![id("Tucker")] });
        assert_eq!(matched_sets(e, &Matching::empty(e), first).unwrap(), MatchedSets::default());
    }

    #[test]
    fn coincidence_off_subtree() {
        let f = fixtures::load_fixture("example1").unwrap();
        let e = &f.economy;
        let first = e.node(NodeId::ROOT).children[0];
        assert!(coincides_off_subtree(f.matching("mbarE1"), f.matching("mL"), e, first).unwrap());
        assert!(coincides_off_subtree(f.matching("mL"), f.matching("mL"), e, first).unwrap());
        assert!(coincides_off_subtree(f.matching("mL"), f.matching("mL"), e, NodeId(999)).is_err());
    }

    #[test]
    fn coincidence_detects_sibling_difference() {
        let f = fixtures::load_fixture("example1").unwrap();
        let e = &f.economy;
        let mut tree = e.tree();
        let mut alt = tree[0].children[0].clone();
        alt.arrivals = ArrivalEvent::default();
        tree[0].children[0].prob = q(1, 2);
        alt.prob = q(1, 2);
        tree[0].children.push(alt);
        let e2 = e.with_tree(2, tree);
        assert!(e2.validation().is_ok());
        let first = e2.node(NodeId::ROOT).children[0];
        let (x, y) = (e2.node(first).children[0], e2.node(first).children[1]);
        let kuhn = e2.agent_named("Kuhn").unwrap();
        let shapley = e2.agent_named("Shapley").unwrap();
        let base = Matching::empty(&e2);
        let mut other = base.clone();
        other.set(y, PeriodMatching::from_pairs([(kuhn, shapley)]).unwrap());
        assert!(validate_matching(&other, &e2).is_ok());
        assert!(!coincides_off_subtree(&base, &other, &e2, x).unwrap());
        assert!(coincides_off_subtree(&base, &other, &e2, y).unwrap());
    }

    #[test]
    fn continuation_matching_round_trip() {
        let f = fixtures::load_fixture("example1").unwrap();
        let e = &f.economy;
        let first = e.node(NodeId::ROOT).children[0];
        let ml = f.matching("mL");
        let cont = continuation_economy(e, ml, first).unwrap();
        let cm = continuation_matching(e, ml, first, &cont).unwrap();
        assert!(validate_matching(&cm, &cont).is_ok());
        let leaf = cont.leaves().next().unwrap();
        assert_eq!(cm.at(leaf).pairs(&cont), vec![(e.agent_named("Kuhn").unwrap(), e.agent_named("Tucker").unwrap())]);
    }
}
