//! One-period stability, individual rationality, stability among those who match, and
//! deferred acceptance.

use std::collections::{BTreeMap, VecDeque};

use num_traits::Zero;
use serde::Serialize;

use crate::error::Result;
use crate::matching::{matched_sets, Matching, PeriodMatching};
use crate::model::{AgentId, Economy, NodeId, Side, Q};

/// A strict ranking of acceptable partners; anyone absent is unacceptable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PreferenceList {
    pub owner: AgentId,
    pub ranking: Vec<AgentId>,
}

impl PreferenceList {
    pub fn empty(owner: AgentId) -> Self {
        PreferenceList { owner, ranking: Vec::new() }
    }

    pub fn rank(&self, k: AgentId) -> Option<usize> {
        self.ranking.iter().position(|x| *x == k)
    }
}

/// The partners among `candidates` whose utility to `k` is at least `threshold`, by decreasing
/// utility; utility ties go to the lower agent index.
pub fn preference_list(e: &Economy, k: AgentId, candidates: &[AgentId], threshold: &Q) -> PreferenceList {
    let mut ranking: Vec<AgentId> = candidates.iter().copied().filter(|p| e.utility(k, *p) >= threshold).collect();
    ranking.sort_by(|x, y| e.utility(k, *y).cmp(e.utility(k, *x)).then(x.cmp(y)));
    PreferenceList { owner: k, ranking }
}

/// Truthful lists restricted to individually rational partners.
pub fn truthful_lists(e: &Economy, a: &[AgentId], b: &[AgentId]) -> BTreeMap<AgentId, PreferenceList> {
    let zero = Q::zero();
    let mut out = BTreeMap::new();
    for &k in a {
        out.insert(k, preference_list(e, k, b, &zero));
    }
    for &k in b {
        out.insert(k, preference_list(e, k, a, &zero));
    }
    out
}

/// Proposer-optimal stable matching with respect to the submitted lists. Agents without a
/// list are treated as listing nobody.
pub fn deferred_acceptance(
    agents_a: &[AgentId],
    agents_b: &[AgentId],
    lists: &BTreeMap<AgentId, PreferenceList>,
    proposer: Side,
) -> PeriodMatching {
    let (proposers, receivers) = match proposer {
        Side::A => (agents_a, agents_b),
        Side::B => (agents_b, agents_a),
    };
    let empty = Vec::new();
    let list = |k: AgentId| lists.get(&k).map(|l| &l.ranking).unwrap_or(&empty);
    let mut next: BTreeMap<AgentId, usize> = proposers.iter().map(|k| (*k, 0)).collect();
    let mut held: BTreeMap<AgentId, AgentId> = BTreeMap::new();
    let mut free: VecDeque<AgentId> = proposers.iter().copied().collect();
    while let Some(p) = free.pop_front() {
        let ranking = list(p);
        let i = next[&p];
        if i >= ranking.len() {
            continue;
        }
        next.insert(p, i + 1);
        let r = ranking[i];
        if !receivers.contains(&r) {
            free.push_front(p);
            continue;
        }
        let Some(rank_p) = list(r).iter().position(|x| *x == p) else {
            free.push_front(p);
            continue;
        };
        match held.get(&r).copied() {
            None => {
                held.insert(r, p);
            }
            Some(cur) => {
                let rank_cur = list(r).iter().position(|x| *x == cur).expect("held proposer is listed");
                if rank_p < rank_cur {
                    held.insert(r, p);
                    free.push_front(cur);
                } else {
                    free.push_front(p);
                }
            }
        }
    }
    let mut pm = PeriodMatching::new();
    for (r, p) in held {
        pm.insert(r, p);
    }
    pm
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKind {
    PairBlock,
    IrViolation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BlockWitness {
    pub kind: BlockKind,
    pub agents: Vec<AgentId>,
    #[serde(skip)]
    pub node: Option<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StaticVerdict {
    pub stable: bool,
    pub witness: Option<BlockWitness>,
}

impl StaticVerdict {
    fn from_witness(witness: Option<BlockWitness>) -> Self {
        StaticVerdict { stable: witness.is_none(), witness }
    }
}

/// Blocking pairs are searched first (side-A agents ascending, then partners ascending),
/// then individual rationality.
fn first_block(e: &Economy, pm: &PeriodMatching, agents_a: &[AgentId], agents_b: &[AgentId]) -> Option<BlockWitness> {
    for &a in agents_a {
        let ua = e.utility(a, pm.partner(a));
        for &b in agents_b {
            if pm.partner(a) == b {
                continue;
            }
            if e.u(a, b) > ua && e.v(a, b) > e.utility(b, pm.partner(b)) {
                return Some(BlockWitness { kind: BlockKind::PairBlock, agents: vec![a, b], node: None });
            }
        }
    }
    for &k in agents_a.iter().chain(agents_b) {
        if e.utility(k, pm.partner(k)) < &Q::zero() {
            return Some(BlockWitness { kind: BlockKind::IrViolation, agents: vec![k], node: None });
        }
    }
    None
}

/// One-period stability of `pm` among the given agents.
pub fn static_stable(e: &Economy, pm: &PeriodMatching, agents_a: &[AgentId], agents_b: &[AgentId]) -> StaticVerdict {
    StaticVerdict::from_witness(first_block(e, pm, agents_a, agents_b))
}

pub fn is_individually_rational(e: &Economy, m: &Matching) -> StaticVerdict {
    for leaf in e.leaves() {
        let pm = m.at(leaf);
        for (&k, &p) in pm.map() {
            if e.utility(k, p) < &Q::zero() {
                return StaticVerdict::from_witness(Some(BlockWitness {
                    kind: BlockKind::IrViolation,
                    agents: vec![k],
                    node: Some(leaf),
                }));
            }
        }
    }
    StaticVerdict::from_witness(None)
}

/// Static stability of the period matching at `node` restricted to those newly matched there.
pub fn stable_among_matchers(e: &Economy, m: &Matching, node: NodeId) -> Result<StaticVerdict> {
    let ms = matched_sets(e, m, node)?;
    let mut w = first_block(e, m.at(node), &ms.a, &ms.b);
    if let Some(w) = w.as_mut() {
        w.node = Some(node);
    }
    Ok(StaticVerdict::from_witness(w))
}

/// Whether a pair `(a, b)` and an existing pair `(a2, b2)` block each other when all four are matched.
fn cross_block(e: &Economy, a: AgentId, b: AgentId, a2: AgentId, b2: AgentId) -> bool {
    (e.u(a, b2) > e.u(a, b) && e.v(a, b2) > e.v(a2, b2)) || (e.u(a2, b) > e.u(a2, b2) && e.v(a2, b) > e.v(a, b))
}

/// Partial matchings over `a` × `b` that are stable among those they match: every pair is
/// individually rational for the required sides and no two pairs block each other. Order as in
/// [`crate::matching::partial_matchings`].
pub fn stable_among_matchers_matchings(
    e: &Economy,
    a: &[AgentId],
    b: &[AgentId],
    ir_a: bool,
    ir_b: bool,
) -> Vec<Vec<(AgentId, AgentId)>> {
    let zero = Q::zero();
    let options: Vec<Vec<usize>> = a
        .iter()
        .map(|&x| {
            (0..b.len()).filter(|&j| (!ir_a || *e.u(x, b[j]) >= zero) && (!ir_b || *e.v(x, b[j]) >= zero)).collect()
        })
        .collect();
    let mut out = Vec::new();
    search_with(e, a, b, &options, &|_| true, &mut out);
    out
}

/// Whether every agent ranks all opposite-side agents and remaining single strictly.
fn strict_preferences(e: &Economy, a: &[AgentId], b: &[AgentId]) -> bool {
    let strict = |k: AgentId, others: &[AgentId]| {
        let mut vals: Vec<&Q> = others.iter().map(|p| e.utility(k, *p)).collect();
        let zero = Q::zero();
        vals.push(&zero);
        vals.sort();
        vals.windows(2).all(|w| w[0] != w[1])
    };
    a.iter().all(|k| strict(*k, b)) && b.iter().all(|k| strict(*k, a))
}

/// Every statically stable matching of `a` × `b`, sorted.
///
/// With strict preferences the search is confined to the lattice between the two
/// deferred-acceptance outcomes and to the agents they match; otherwise it falls back to all
/// matchings that are stable among those they match.
pub fn static_stable_set(e: &Economy, a: &[AgentId], b: &[AgentId]) -> Vec<PeriodMatching> {
    let candidates = if strict_preferences(e, a, b) {
        let lists = truthful_lists(e, a, b);
        let ma = deferred_acceptance(a, b, &lists, Side::A);
        let mb = deferred_acceptance(a, b, &lists, Side::B);
        let options: Vec<Vec<usize>> = a
            .iter()
            .map(|&x| {
                if !ma.is_matched(x) {
                    return Vec::new();
                }
                let hi = e.u(x, ma.partner(x));
                let lo = e.utility(x, mb.partner(x));
                (0..b.len())
                    .filter(|&j| {
                        let y = b[j];
                        ma.is_matched(y)
                            && e.u(x, y) <= hi
                            && e.u(x, y) >= lo
                            && e.v(x, y) >= e.utility(y, ma.partner(y))
                            && e.v(x, y) <= e.utility(y, mb.partner(y))
                    })
                    .collect()
            })
            .collect();
        let matched: Vec<bool> = a.iter().map(|x| ma.is_matched(*x)).collect();
        let mut out = Vec::new();
        let allow = |i: usize| !matched[i];
        search_with(e, a, b, &options, &allow, &mut out);
        out
    } else {
        stable_among_matchers_matchings(e, a, b, true, true)
    };
    let mut out: Vec<PeriodMatching> = candidates
        .into_iter()
        .map(|pairs| PeriodMatching::from_pairs(pairs).expect("search yields a matching"))
        .filter(|pm| first_block(e, pm, a, b).is_none())
        .collect();
    out.sort();
    out
}

fn search_with(
    e: &Economy,
    a: &[AgentId],
    b: &[AgentId],
    options: &[Vec<usize>],
    allow_single: &dyn Fn(usize) -> bool,
    out: &mut Vec<Vec<(AgentId, AgentId)>>,
) {
    fn go(
        e: &Economy,
        i: usize,
        a: &[AgentId],
        b: &[AgentId],
        options: &[Vec<usize>],
        allow_single: &dyn Fn(usize) -> bool,
        used: &mut Vec<bool>,
        cur: &mut Vec<(AgentId, AgentId)>,
        out: &mut Vec<Vec<(AgentId, AgentId)>>,
    ) {
        if i == a.len() {
            out.push(cur.clone());
            return;
        }
        if allow_single(i) {
            go(e, i + 1, a, b, options, allow_single, used, cur, out);
        }
        for &j in &options[i] {
            if used[j] || cur.iter().any(|&(a2, b2)| cross_block(e, a[i], b[j], a2, b2)) {
                continue;
            }
            used[j] = true;
            cur.push((a[i], b[j]));
            go(e, i + 1, a, b, options, allow_single, used, cur, out);
            cur.pop();
            used[j] = false;
        }
    }
    go(e, 0, a, b, options, allow_single, &mut vec![false; b.len()], &mut Vec::new(), out);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::continuation_economy;

    #[test]
    fn example1_static_checks() {
        let f = fixtures::load_fixture("example1").unwrap();
        let e = &f.economy;
        let id = |n: &str| e.agent_named(n).unwrap();
        let first = e.node(NodeId::ROOT).children[0];
        let leaf = e.node(first).children[0];
        for name in ["mL", "mC", "mR"] {
            assert!(is_individually_rational(e, f.matching(name)).stable, "{name}");
        }
        assert!(is_individually_rational(e, &Matching::empty(e)).stable);

        // m^C at E^2 in the continuation economy after E^1
        let mc = f.matching("mC");
        let (a, b) = crate::model::available_agents(e, mc, leaf).unwrap();
        let v = static_stable(e, mc.at(leaf), &a, &b);
        assert!(!v.stable);
        assert_eq!(v.witness.unwrap().agents, vec![id("Kuhn"), id("Nash")]);

        let ml = f.matching("mL");
        let cont = continuation_economy(e, ml, first).unwrap();
        let cl = cont.leaves().next().unwrap();
        let cm = crate::matching::continuation_matching(e, ml, first, &cont).unwrap();
        let ev = &cont.node(cl).event;
        assert!(static_stable(&cont, cm.at(cl), &ev.a, &ev.b).stable);
        assert!(static_stable(e, &PeriodMatching::new(), &[], &[]).stable);
    }

    #[test]
    fn stable_among_matchers_examples() {
        let f = fixtures::load_fixture("example1").unwrap();
        let e = &f.economy;
        let id = |n: &str| e.agent_named(n).unwrap();
        let first = e.node(NodeId::ROOT).children[0];
        let v = stable_among_matchers(e, f.matching("mbarE4"), first).unwrap();
        assert!(!v.stable);
        let w = v.witness.unwrap();
        assert_eq!((w.kind, w.agents), (BlockKind::PairBlock, vec![id("Kuhn"), id("Shapley")]));
        assert!(stable_among_matchers(e, f.matching("mL"), first).unwrap().stable);
        assert!(stable_among_matchers(e, &Matching::empty(e), first).unwrap().stable);
    }

    #[test]
    fn ir_violation_is_witnessed() {
        let f = fixtures::load_fixture("example1").unwrap();
        let e = &f.economy;
        let id = |n: &str| e.agent_named(n).unwrap();
        let first = e.node(NodeId::ROOT).children[0];
        let leaf = e.node(first).children[0];
        let mut m = Matching::empty(e);
        m.set(first, PeriodMatching::from_pairs([(id("Kuhn"), id("Rényi"))]).unwrap());
        m.set(leaf, PeriodMatching::from_pairs([(id("Kuhn"), id("Rényi"))]).unwrap());
        let v = is_individually_rational(e, &m);
        assert!(!v.stable);
        assert_eq!(v.witness.unwrap().kind, BlockKind::IrViolation);
    }

    #[test]
    fn da_on_college_period_one() {
        let f = fixtures::load_fixture("college").unwrap();
        let e = &f.economy;
        let id = |n: &str| e.agent_named(n).unwrap();
        let first = e.node(NodeId::ROOT).children[0];
        let ev = &e.node(first).event;
        let lists = truthful_lists(e, &ev.a, &ev.b);
        let pm = deferred_acceptance(&ev.a, &ev.b, &lists, Side::A);
        assert_eq!(pm.partner(id("Shapley")), id("Kuhn"));
        assert!(!pm.is_matched(id("Gale")));
    }

    #[test]
    fn da_trivial_cases() {
        let f = fixtures::load_fixture("example1").unwrap();
        let e = &f.economy;
        let id = |n: &str| e.agent_named(n).unwrap();
        let (a, b) = (vec![id("Erdős")], vec![id("Rényi")]);
        let lists = truthful_lists(e, &a, &b);
        assert_eq!(deferred_acceptance(&a, &b, &lists, Side::A).partner(id("Erdős")), id("Rényi"));
        let mut lists2 = lists.clone();
        lists2.insert(id("Erdős"), PreferenceList::empty(id("Erdős")));
        assert!(deferred_acceptance(&a, &b, &lists2, Side::A).is_empty());
    }
}
