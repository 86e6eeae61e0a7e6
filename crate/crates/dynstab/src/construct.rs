//! Constructive existence (worst conjectures, truncated lists, DA at every node) and the
//! one-shot dynamic DA for two-period economies.

use std::collections::BTreeMap;

use num_traits::Zero;

use crate::dynamic::{Mode, Solver, StableSetCache, DEFAULT_LIMIT};
use crate::error::{Error, Result};
use crate::matching::{Matching, PeriodMatching};
use crate::model::{available_agents, AgentId, Economy, NodeId, Side, Q};
use crate::payoff::{payoff, pow};
use crate::stability::{deferred_acceptance, preference_list, PreferenceList};

/// Payoff of an agent's worst conjecture at a node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TruncationThreshold {
    pub agent: AgentId,
    pub node: NodeId,
    pub value: Q,
}

/// The payoff-minimizing member of `k`'s conjecture set at `node`, given the matching `prefix`
/// up to the node's parent. Ties go to the first member in canonical order.
pub fn worst_conjecture(
    k: AgentId,
    node: NodeId,
    prefix: &Matching,
    e: &Economy,
    cache: &StableSetCache,
) -> Result<(Matching, TruncationThreshold)> {
    let solver = Solver::new(e, cache, DEFAULT_LIMIT)?;
    worst_conjecture_with(&solver, k, node, prefix)
}

pub fn worst_conjecture_with(
    solver: &Solver,
    k: AgentId,
    node: NodeId,
    prefix: &Matching,
) -> Result<(Matching, TruncationThreshold)> {
    let e = solver.economy();
    let mut best: Option<(Q, Matching)> = None;
    for c in solver.conjectures(k, prefix, node, Mode::DYNAMIC)? {
        let v = payoff(e, k, &c, node)?;
        if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
            best = Some((v, c));
        }
    }
    let (value, m) = best.ok_or_else(|| Error::Contract(format!("agent {k} has no conjecture at {}", e.path(node))))?;
    Ok((m, TruncationThreshold { agent: k, node, value }))
}

/// Lists of contemporaneous partners whose utility reaches each agent's threshold.
pub fn truncated_lists(
    e: &Economy,
    a: &[AgentId],
    b: &[AgentId],
    thresholds: &BTreeMap<AgentId, Q>,
) -> BTreeMap<AgentId, PreferenceList> {
    let mut out = BTreeMap::new();
    for (&k, others) in a.iter().map(|k| (k, b)).chain(b.iter().map(|k| (k, a))) {
        let list = match thresholds.get(&k) {
            Some(t) => preference_list(e, k, others, t),
            None => PreferenceList::empty(k),
        };
        out.insert(k, list);
    }
    out
}

pub fn construct_mstar(e: &Economy, cache: &StableSetCache) -> Result<Matching> {
    construct_mstar_with(&Solver::new(e, cache, DEFAULT_LIMIT)?)
}

/// Top-down: at every node, side-A DA over the available agents with lists truncated at the
/// worst-conjecture payoffs; at the last period the thresholds are zero.
pub fn construct_mstar_with(solver: &Solver) -> Result<Matching> {
    let e = solver.economy();
    let mut m = Matching::undefined();
    for n in e.period_nodes() {
        let (a, b) = available_agents(e, &m, n)?;
        let sol = solver.solve(n, &a, &b, Mode::DYNAMIC)?;
        let mut thresholds = BTreeMap::new();
        for &k in a.iter().chain(&b) {
            let w =
                sol.worst(k).ok_or_else(|| Error::Contract(format!("agent {k} has no conjecture at {}", e.path(n))))?;
            thresholds.insert(k, w.clone());
        }
        let lists = truncated_lists(e, &a, &b, &thresholds);
        let da = deferred_acceptance(&a, &b, &lists, Side::A);
        let mut pm = match e.node(n).parent {
            Some(p) if p != NodeId::ROOT => m.at(p).clone(),
            _ => PeriodMatching::new(),
        };
        for (x, y) in da.pairs(e) {
            pm.insert(x, y);
        }
        m.set(n, pm);
    }
    Ok(m)
}

/// One-shot DA over both periods of a deterministic two-period economy, each agent ranking
/// partners by discounted utility at the later of the two arrival periods. Pairs form at that
/// period.
pub fn dynamic_da(e: &Economy, proposer: Side) -> Result<Matching> {
    dynamic_da_inner(e, proposer, None)
}

/// [`dynamic_da`] with `late`, a first-period side-A agent, treated as arriving in the second
/// period by everyone, including itself.
pub fn dynamic_da_as_if_late(e: &Economy, proposer: Side, late: AgentId) -> Result<Matching> {
    dynamic_da_inner(e, proposer, Some(late))
}

fn dynamic_da_inner(e: &Economy, proposer: Side, late: Option<AgentId>) -> Result<Matching> {
    e.ensure_valid()?;
    if e.horizon() != 2 {
        return Err(Error::Unsupported(format!("dynamic DA needs two periods, got {}", e.horizon())));
    }
    let first = match e.node(NodeId::ROOT).children.as_slice() {
        [c] => *c,
        _ => return Err(Error::Unsupported("dynamic DA needs a single-branch tree".into())),
    };
    let leaf = match e.node(first).children.as_slice() {
        [c] => *c,
        _ => return Err(Error::Unsupported("dynamic DA needs a single-branch tree".into())),
    };
    if let Some(k) = late {
        if !e.node(first).event.a.contains(&k) {
            return Err(Error::Domain(format!("agent {k} is not a first-period side-A agent")));
        }
    }
    let period = |k: AgentId| if Some(k) != late && e.node(first).event.contains(k) { 1 } else { 2 };
    let (a, b) = e.arrived(leaf);
    let zero = Q::zero();
    let value = |k: AgentId, p: AgentId| pow(e.delta(k), period(k).max(period(p)) - period(k)) * e.utility(k, p);
    let mut lists = BTreeMap::new();
    for (&k, others) in a.iter().map(|k| (k, &b)).chain(b.iter().map(|k| (k, &a))) {
        let mut ranked: Vec<(Q, AgentId)> =
            others.iter().map(|&p| (value(k, p), p)).filter(|(v, _)| *v >= zero).collect();
        ranked.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
        lists.insert(k, PreferenceList { owner: k, ranking: ranked.into_iter().map(|(_, p)| p).collect() });
    }
    let outcome = deferred_acceptance(&a, &b, &lists, proposer);
    let mut new: BTreeMap<NodeId, Vec<(AgentId, AgentId)>> = BTreeMap::new();
    for (x, y) in outcome.pairs(e) {
        let at = if period(x).max(period(y)) == 1 { first } else { leaf };
        new.entry(at).or_default().push((x, y));
    }
    Matching::from_new_pairs(e, &new)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamic::dynamically_stable_set;
    use crate::fixtures::load_fixture;
    use crate::model::q;

    #[test]
    fn example1_thresholds() {
        let f = load_fixture("example1").unwrap();
        let e = &f.economy;
        let cache = StableSetCache::new();
        let first = e.node(NodeId::ROOT).children[0];
        let id = |n: &str| e.agent_named(n).unwrap();
        let (m, t) = worst_conjecture(id("Erdős"), first, &Matching::undefined(), e, &cache).unwrap();
        assert_eq!(t.value, e.delta(id("Erdős")) * e.u(id("Erdős"), id("Rényi")));
        assert_eq!(t.value, q(3, 2));
        assert_eq!(m, *f.matching("mbarE2"));
        let (m, t) = worst_conjecture(id("Kuhn"), first, &Matching::undefined(), e, &cache).unwrap();
        assert_eq!(t.value, e.delta(id("Kuhn")) * e.u(id("Kuhn"), id("Nash")));
        assert!(t.value < *e.u(id("Kuhn"), id("Shapley")));
        assert_eq!(m.at(e.node(first).children[0]).partner(id("Kuhn")), id("Nash"));
    }

    #[test]
    fn truncation_edges() {
        let f = load_fixture("example1").unwrap();
        let e = &f.economy;
        let (a, b) = e.arrived(e.node(NodeId::ROOT).children[0]);
        let all_zero: BTreeMap<AgentId, Q> = a.iter().chain(&b).map(|k| (*k, Q::zero())).collect();
        let lists = truncated_lists(e, &a, &b, &all_zero);
        let erdos = e.agent_named("Erdős").unwrap();
        assert_eq!(lists[&erdos].ranking, vec![e.agent_named("Rényi").unwrap()]);
        let high: BTreeMap<AgentId, Q> = a.iter().chain(&b).map(|k| (*k, q(100, 1))).collect();
        assert!(truncated_lists(e, &a, &b, &high).values().all(|l| l.ranking.is_empty()));
    }

    #[test]
    fn mstar_on_fixtures_is_stable() {
        for name in ["example1", "lonewolf", "college"] {
            let f = load_fixture(name).unwrap();
            let cache = StableSetCache::new();
            let m = construct_mstar(&f.economy, &cache).unwrap();
            assert!(dynamically_stable_set(&f.economy, &cache).unwrap().contains(&m), "{name}");
        }
    }

    #[test]
    fn college_dynamic_da() {
        let f = load_fixture("college").unwrap();
        assert_eq!(dynamic_da(&f.economy, Side::A).unwrap(), *f.matching("mADA"));
        assert_eq!(dynamic_da(&f.economy, Side::B).unwrap(), *f.matching("mBDA"));
    }

    #[test]
    fn dynamic_da_rejects_other_shapes() {
        let f = load_fixture("college").unwrap();
        let e = &f.economy;
        let tree = e.tree_below(e.node(NodeId::ROOT).children[0]);
        let one = e.with_tree(
            1,
            tree.into_iter()
                .map(|mut c| {
                    c.children.clear();
                    c
                })
                .collect(),
        );
        assert!(matches!(dynamic_da(&one, Side::A), Err(Error::Unsupported(_))));
    }
}
