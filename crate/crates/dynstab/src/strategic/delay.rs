//! Incentives to report one's arrival a period late.

use std::collections::BTreeMap;

use num_traits::Zero;
use serde::Serialize;

use crate::dynamic::{Mode, Solver, StableSetCache, DEFAULT_LIMIT};
use crate::error::Result;
use crate::matching::{validate_matching, Matching};
use crate::model::{available_agents, AgentId, ArrivalEvent, Economy, NodeId, Q};
use crate::payoff::{first_match_time, payoff, pow};
use crate::stability::is_individually_rational;

/// Whether leaves with the same cumulative arrivals always carry the same probability.
pub fn is_exchangeable(e: &Economy) -> bool {
    let mut seen: BTreeMap<(Vec<AgentId>, Vec<AgentId>), Q> = BTreeMap::new();
    for leaf in e.leaves() {
        let p = e.conditional_prob(leaf, NodeId::ROOT);
        match seen.get(&e.arrived(leaf)) {
            Some(q) if *q != p => return false,
            Some(_) => {}
            None => {
                seen.insert(e.arrived(leaf), p);
            }
        }
    }
    true
}

/// Why no delay witness was searched for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precondition {
    InvalidMatching,
    NotPairwiseStable,
    NotIndividuallyRational,
    NotExchangeable,
    /// No agent gains from waiting anywhere.
    DynamicallyStable,
    /// Somewhere an agent gains from waiting, but no agent arriving in that period does.
    StableForArrivingAgents,
    /// The branches needed to reroute a late arrival are missing from the tree.
    NoFullSupport,
}

/// An arriving agent who gains by reporting their arrival one period late.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DelayWitness {
    pub period: usize,
    pub node: NodeId,
    pub agent: AgentId,
    /// Utility from the partner the matching assigns on arrival.
    pub stay: Q,
    /// Expected discounted utility when arriving one period later.
    pub delay: Q,
    pub gain: Q,
    /// The node the late report leads to, and the children it then reaches with their weights.
    pub reroute: NodeId,
    pub branches: Vec<(Q, NodeId)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DelayCheck {
    Witness(DelayWitness),
    Rejected(Precondition),
    /// Preconditions hold but no candidate gains.
    NoWitness,
}

/// The sibling of `node` without `k` in its arrivals, and for every child of `node` the child
/// of that sibling with `k` added, matched event for event further down.
fn reroute(e: &Economy, node: NodeId, k: AgentId) -> Option<(NodeId, Vec<(NodeId, NodeId)>)> {
    let parent = e.node(node).parent?;
    let ev = &e.node(node).event;
    let without = ArrivalEvent::new(
        ev.a.iter().copied().filter(|x| *x != k).collect(),
        ev.b.iter().copied().filter(|x| *x != k).collect(),
    );
    let sibling = *e.node(parent).children.iter().find(|c| e.node(**c).event == without)?;
    let mut pairs = Vec::new();
    for &c in &e.node(node).children {
        let cev = &e.node(c).event;
        let mut a = cev.a.clone();
        let mut b = cev.b.clone();
        if ev.a.contains(&k) {
            a.push(k);
        } else {
            b.push(k);
        }
        let with = ArrivalEvent::new(a, b);
        let c2 = *e.node(sibling).children.iter().find(|x| e.node(**x).event == with)?;
        pairs.push((c, c2));
    }
    Some((sibling, pairs))
}

/// Leaves below `from` mapped to the leaves below `to` with the same events.
fn mirror_leaves(e: &Economy, from: NodeId, to: NodeId, out: &mut Vec<(NodeId, NodeId)>) -> bool {
    if e.is_leaf(from) {
        out.push((from, to));
        return true;
    }
    for &c in &e.node(from).children {
        let Some(&c2) = e.node(to).children.iter().find(|x| e.node(**x).event == e.node(c).event) else {
            return false;
        };
        if !mirror_leaves(e, c, c2, out) {
            return false;
        }
    }
    true
}

/// Direct evaluation of the late-arrival payoff: probability-weighted discounted utility over
/// the rerouted leaves, discounting from the period of the original arrival.
fn delayed_value(e: &Economy, m: &Matching, node: NodeId, k: AgentId, branches: &[(NodeId, NodeId)]) -> Option<Q> {
    let t = e.node(node).depth;
    let mut total = Q::zero();
    for &(c, c2) in branches {
        let mut leaves = Vec::new();
        if !mirror_leaves(e, c, c2, &mut leaves) {
            return None;
        }
        for (l, l2) in leaves {
            let tm = first_match_time(e, k, m, l2).ok()?;
            total += e.conditional_prob(l, node) * pow(e.delta(k), tm - t) * e.utility(k, m.at(l2).partner(k));
        }
    }
    Some(total)
}

/// The same late-arrival payoff computed from continuation payoffs at the rerouted children.
pub fn reevaluate(e: &Economy, m: &Matching, w: &DelayWitness) -> Result<Q> {
    let mut total = Q::zero();
    for (p, c2) in &w.branches {
        total += p * payoff(e, w.agent, m, *c2)?;
    }
    Ok(e.delta(w.agent) * total)
}

pub fn delay_incentive_witness(m: &Matching, e: &Economy, cache: &StableSetCache) -> Result<DelayCheck> {
    let solver = Solver::new(e, cache, DEFAULT_LIMIT)?;
    if !validate_matching(m, e).is_ok() {
        return Ok(DelayCheck::Rejected(Precondition::InvalidMatching));
    }
    let nodes: Vec<NodeId> = e.period_nodes().collect();
    let mut pay: BTreeMap<(NodeId, AgentId), Q> = BTreeMap::new();
    for &n in &nodes {
        let (a, b) = available_agents(e, m, n)?;
        for k in a.iter().chain(&b) {
            pay.insert((n, *k), payoff(e, *k, m, n)?);
        }
        for &x in &a {
            for &y in &b {
                if m.at(n).partner(x) != y && e.u(x, y) > &pay[&(n, x)] && e.v(x, y) > &pay[&(n, y)] {
                    return Ok(DelayCheck::Rejected(Precondition::NotPairwiseStable));
                }
            }
        }
    }
    if !is_individually_rational(e, m).stable {
        return Ok(DelayCheck::Rejected(Precondition::NotIndividuallyRational));
    }
    if !is_exchangeable(e) {
        return Ok(DelayCheck::Rejected(Precondition::NotExchangeable));
    }

    let mut any_gain = false;
    let mut arriving_gain = false;
    let mut consistent = true;
    for &n in &nodes {
        let (a, b) = available_agents(e, m, n)?;
        let sol = solver.solve(n, &a, &b, Mode::DYNAMIC)?;
        let gains: Vec<AgentId> =
            a.iter().chain(&b).copied().filter(|k| sol.worst(*k).is_none_or(|w| pay[&(n, *k)] < *w)).collect();
        if !gains.is_empty() {
            any_gain = true;
            if gains.iter().any(|k| e.node(n).event.contains(*k)) {
                arriving_gain = true;
            } else {
                consistent = false;
            }
        }
    }
    if !any_gain {
        return Ok(DelayCheck::Rejected(Precondition::DynamicallyStable));
    }
    if !consistent || !arriving_gain {
        return Ok(DelayCheck::Rejected(Precondition::StableForArrivingAgents));
    }

    let mut supported = false;
    let mut order = nodes.clone();
    order.sort_by_key(|n| std::cmp::Reverse(e.node(*n).depth));
    for n in order {
        if e.is_leaf(n) {
            continue;
        }
        let ev = &e.node(n).event;
        for &k in ev.a.iter().chain(&ev.b) {
            let pm = m.at(n);
            if !pm.is_matched(k) {
                continue;
            }
            let Some((sibling, branches)) = reroute(e, n, k) else { continue };
            let Some(delay) = delayed_value(e, m, n, k, &branches) else { continue };
            supported = true;
            let stay = e.utility(k, pm.partner(k)).clone();
            let gain = &delay - &stay;
            if gain > Q::zero() {
                return Ok(DelayCheck::Witness(DelayWitness {
                    period: e.node(n).depth,
                    node: n,
                    agent: k,
                    stay,
                    delay,
                    gain,
                    reroute: sibling,
                    branches: branches.iter().map(|(c, c2)| (e.node(*c).prob.clone(), *c2)).collect(),
                }));
            }
        }
    }
    if !supported {
        return Ok(DelayCheck::Rejected(Precondition::NoFullSupport));
    }
    Ok(DelayCheck::NoWitness)
}
