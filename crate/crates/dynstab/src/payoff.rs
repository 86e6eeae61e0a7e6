//! Discounted expected payoffs and first-match times.

use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::matching::Matching;
use crate::model::{AgentId, Economy, NodeId, Q};

/// First period along the path to `leaf` at which `k` is matched; the horizon if never.
pub fn first_match_time(e: &Economy, k: AgentId, m: &Matching, leaf: NodeId) -> Result<usize> {
    if e.arrival_period(k, leaf).is_none() {
        return Err(Error::Domain(format!("agent {k} does not arrive on the path to {}", e.path(leaf))));
    }
    for n in e.lineage(leaf) {
        let pm = m.get(n).ok_or_else(|| Error::Structural(format!("matching undefined at {}", e.path(n))))?;
        if pm.is_matched(k) {
            return Ok(e.node(n).depth);
        }
    }
    Ok(e.horizon())
}

/// `k`'s expected discounted payoff from `m` evaluated at `node`.
pub fn payoff(e: &Economy, k: AgentId, m: &Matching, node: NodeId) -> Result<Q> {
    if node == NodeId::ROOT || e.arrival_period(k, node).is_none() {
        return Err(Error::Domain(format!("agent {k} has not arrived at {}", e.path(node))));
    }
    if let Some(p) = e.node(node).parent.filter(|p| *p != NodeId::ROOT) {
        if m.get(p).is_some_and(|pm| pm.is_matched(k)) {
            return Err(Error::Domain(format!("agent {k} already matched before {}", e.path(node))));
        }
    }
    value(e, k, m, node)
}

fn value(e: &Economy, k: AgentId, m: &Matching, node: NodeId) -> Result<Q> {
    let pm = m.get(node).ok_or_else(|| Error::Structural(format!("matching undefined at {}", e.path(node))))?;
    if let Some(p) = pm.partner_of(k) {
        return Ok(e.utility(k, p).clone());
    }
    let children = &e.node(node).children;
    if children.is_empty() {
        return Ok(Q::zero());
    }
    let mut total = Q::zero();
    for &c in children {
        total += &e.node(c).prob * value(e, k, m, c)?;
    }
    Ok(e.delta(k) * total)
}

/// `delta^exp` for a rational base.
pub fn pow(base: &Q, exp: usize) -> Q {
    let mut out = Q::one();
    for _ in 0..exp {
        out *= base;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{q, TreeNode};

    /// Payoff straight from the leaf-sum definition.
    fn leaf_sum(e: &Economy, k: AgentId, m: &Matching, node: NodeId) -> Q {
        let t = e.node(node).depth;
        e.leaves()
            .filter(|l| e.is_descendant(*l, node))
            .map(|l| {
                let tm = first_match_time(e, k, m, l).unwrap();
                e.conditional_prob(l, node) * pow(e.delta(k), tm - t) * e.utility(k, m.at(l).partner(k))
            })
            .sum()
    }

    #[test]
    fn example1_payoffs() {
        let f = fixtures::load_fixture("example1").unwrap();
        let e = &f.economy;
        let ml = f.matching("mL");
        let first = e.node(NodeId::ROOT).children[0];
        let leaf = e.node(first).children[0];
        let id = |n: &str| e.agent_named(n).unwrap();
        assert_eq!(first_match_time(e, id("Kuhn"), ml, leaf).unwrap(), 2);
        assert_eq!(first_match_time(e, id("Erdős"), ml, leaf).unwrap(), 1);
        assert_eq!(first_match_time(e, id("Nash"), ml, leaf).unwrap(), 2);
        assert_eq!(payoff(e, id("Erdős"), ml, first).unwrap(), *e.u(id("Erdős"), id("Rényi")));
        let kuhn = payoff(e, id("Kuhn"), ml, first).unwrap();
        assert_eq!(kuhn, e.delta(id("Kuhn")) * e.u(id("Kuhn"), id("Tucker")));
        assert_eq!(kuhn, q(25, 8));
        assert!(kuhn > *e.u(id("Kuhn"), id("Nash")));
        assert_eq!(payoff(e, id("Nash"), ml, leaf).unwrap(), Q::zero());
        assert!(payoff(e, id("Tucker"), ml, first).is_err());
        assert!(payoff(e, id("Erdős"), ml, leaf).is_err());
    }

    #[test]
    fn recursion_matches_leaf_sum_on_fixtures() {
        for name in fixtures::FIXTURES {
            let f = fixtures::load_fixture(name).unwrap();
            let e = &f.economy;
            for m in f.matchings.values() {
                for n in e.period_nodes() {
                    let (a, b) = crate::model::available_agents(e, m, n).unwrap();
                    for k in a.into_iter().chain(b) {
                        assert_eq!(payoff(e, k, m, n).unwrap(), leaf_sum(e, k, m, n));
                    }
                }
            }
        }
    }

    #[test]
    fn splitting_a_branch_with_inert_arrivals_leaves_payoffs_unchanged() {
        use crate::model::{Agent, ArrivalEvent, Side};
        let f = fixtures::load_fixture("example1").unwrap();
        let e = &f.economy;
        let mut table = e.table().clone();
        table.side_b.insert("inert".into());
        table.delta.insert("inert".into(), q(1, 2));
        for a in table.side_a.clone() {
            table.u.insert((a.clone(), "inert".into()), q(-1, 1));
            table.v.insert((a, "inert".into()), q(-1, 1));
        }
        let mut agents = e.agents().to_vec();
        let (d1, d2) = (AgentId(100), AgentId(101));
        for d in [d1, d2] {
            agents.push(Agent { id: d, side: Side::B, characteristic: "inert".into(), name: None });
        }
        let mut tree = e.tree();
        let base = tree[0].children[0].clone();
        let with = |d: AgentId| {
            let mut b = base.arrivals.b.clone();
            b.push(d);
            TreeNode::new(q(1, 2), ArrivalEvent::new(base.arrivals.a.clone(), b), vec![])
        };
        tree[0].children = vec![with(d1), with(d2)];
        let split = crate::model::Economy::new(2, table, agents, tree);
        assert!(split.validation().is_ok(), "{:?}", split.validation());
        let first = split.node(NodeId::ROOT).children[0];
        for m in f.matchings.values() {
            let mut m2 = Matching::undefined();
            m2.set(first, m.at(e.node(NodeId::ROOT).children[0]).clone());
            for &c in &split.node(first).children {
                m2.set(c, m.at(e.leaves().next().unwrap()).clone());
            }
            for k in e
                .node(e.node(NodeId::ROOT).children[0])
                .event
                .a
                .iter()
                .chain(&e.node(e.node(NodeId::ROOT).children[0]).event.b)
            {
                assert_eq!(
                    payoff(&split, *k, &m2, first).unwrap(),
                    payoff(e, *k, m, e.node(NodeId::ROOT).children[0]).unwrap()
                );
            }
        }
    }

    #[test]
    fn zero_discount_only_counts_immediate_matches() {
        let f = fixtures::load_fixture("example1").unwrap();
        let mut table = f.economy.table().clone();
        for d in table.delta.values_mut() {
            *d = Q::zero();
        }
        let e = crate::model::Economy::new(2, table, f.economy.agents().to_vec(), f.economy.tree());
        let first = e.node(NodeId::ROOT).children[0];
        let ml = f.matching("mL");
        let kuhn = e.agent_named("Kuhn").unwrap();
        let erdos = e.agent_named("Erdős").unwrap();
        assert_eq!(payoff(&e, kuhn, ml, first).unwrap(), Q::zero());
        assert_eq!(payoff(&e, erdos, ml, first).unwrap(), *e.u(erdos, e.agent_named("Rényi").unwrap()));
    }
}
