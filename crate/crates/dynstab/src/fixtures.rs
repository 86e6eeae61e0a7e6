//! Built-in economies with named matchings.
//!
//! Preferences come as ordinal lists of `(partner, periods of delay)` entries. Utilities are
//! small integers plus a per-agent discount factor chosen so that the discounted values
//! `delta^delay * u` rank exactly as listed; unlisted partners get utility -1.
//! [`check_ordering`] verifies this for each fixture.

use std::collections::BTreeMap;

use num_traits::Zero;

use crate::error::{Error, Result};
use crate::matching::{validate_matching, Matching, PeriodMatching};
use crate::model::{q, qi, Agent, AgentId, ArrivalEvent, CharacteristicTable, Economy, NodeId, Side, TreeNode, Q};
use crate::payoff::pow;

pub const FIXTURES: [&str; 3] = ["example1", "lonewolf", "college"];

/// An agent's ordinal list: partners with the delay at which each entry is evaluated.
#[derive(Clone, Debug)]
pub struct OrdinalList {
    pub agent: String,
    pub entries: Vec<(String, usize)>,
}

#[derive(Clone, Debug)]
pub struct Fixture {
    pub name: String,
    pub economy: Economy,
    pub matchings: BTreeMap<String, Matching>,
    pub lists: Vec<OrdinalList>,
}

impl Fixture {
    pub fn matching(&self, label: &str) -> &Matching {
        self.matchings.get(label).unwrap_or_else(|| panic!("fixture {} has no matching {label}", self.name))
    }
}

pub fn load_fixture(name: &str) -> Result<Fixture> {
    match name {
        "example1" => Ok(example1()),
        "lonewolf" => Ok(lonewolf()),
        "college" => Ok(college()),
        _ => Err(Error::UnknownFixture(name.to_string())),
    }
}

struct Builder {
    table: CharacteristicTable,
    agents: Vec<Agent>,
    ids: BTreeMap<String, AgentId>,
    lists: Vec<OrdinalList>,
}

fn label(name: &str) -> String {
    name.chars()
        .map(|c| match c {
            'ő' | 'ö' => 'o',
            'é' => 'e',
            c => c.to_ascii_lowercase(),
        })
        .collect()
}

impl Builder {
    fn new() -> Self {
        Builder { table: CharacteristicTable::default(), agents: Vec::new(), ids: BTreeMap::new(), lists: Vec::new() }
    }

    fn agent(&mut self, name: &str, side: Side, delta: Q) {
        let id = AgentId(self.agents.len() as u32);
        let c = label(name);
        match side {
            Side::A => self.table.side_a.insert(c.clone()),
            Side::B => self.table.side_b.insert(c.clone()),
        };
        self.table.delta.insert(c.clone(), delta);
        self.agents.push(Agent { id, side, characteristic: c, name: Some(name.to_string()) });
        self.ids.insert(name.to_string(), id);
    }

    /// Set `who`'s utilities for the listed partners; everyone else gets -1.
    fn prefs(&mut self, who: &str, utilities: &[(&str, i64)], list: &[(&str, usize)]) {
        let side = self.agents[self.ids[who].0 as usize].side;
        let me = label(who);
        let others: Vec<String> = match side {
            Side::A => self.table.side_b.iter().cloned().collect(),
            Side::B => self.table.side_a.iter().cloned().collect(),
        };
        for other in others {
            let value = utilities.iter().find(|(p, _)| label(p) == other).map_or(qi(-1), |(_, u)| qi(*u));
            match side {
                Side::A => self.table.u.insert((me.clone(), other), value),
                Side::B => self.table.v.insert((other, me.clone()), value),
            };
        }
        self.lists.push(OrdinalList {
            agent: who.to_string(),
            entries: list.iter().map(|(p, d)| (p.to_string(), *d)).collect(),
        });
    }

    fn ids(&self, names: &[&str]) -> Vec<AgentId> {
        names.iter().map(|n| self.ids[*n]).collect()
    }

    /// A single-branch two-period economy.
    fn two_periods(&self, first: (&[&str], &[&str]), second: (&[&str], &[&str])) -> Economy {
        let leaf = TreeNode::new(qi(1), ArrivalEvent::new(self.ids(second.0), self.ids(second.1)), vec![]);
        let tree = vec![TreeNode::new(qi(1), ArrivalEvent::new(self.ids(first.0), self.ids(first.1)), vec![leaf])];
        Economy::new(2, self.table.clone(), self.agents.clone(), tree)
    }

    fn finish(self, name: &str, economy: Economy, matchings: &[(&str, &[(&str, &str)], &[(&str, &str)])]) -> Fixture {
        let first = economy.node(NodeId::ROOT).children[0];
        let leaf = economy.node(first).children[0];
        let mut out = BTreeMap::new();
        for (label, t1, t2) in matchings {
            let pairs = |ps: &[(&str, &str)]| ps.iter().map(|(a, b)| (self.ids[*a], self.ids[*b])).collect::<Vec<_>>();
            let mut new = BTreeMap::new();
            new.insert(first, pairs(t1));
            new.insert(leaf, pairs(t2));
            let m = Matching::from_new_pairs(&economy, &new).expect("fixture matching");
            out.insert(label.to_string(), m);
        }
        Fixture { name: name.to_string(), economy, matchings: out, lists: self.lists }
    }
}

fn example1() -> Fixture {
    let mut f = Builder::new();
    f.agent("Erdős", Side::A, q(3, 4));
    f.agent("Kuhn", Side::A, q(5, 8));
    f.agent("Gale", Side::A, q(1, 2));
    f.agent("Rényi", Side::B, q(1, 2));
    f.agent("Shapley", Side::B, q(1, 2));
    f.agent("Tucker", Side::B, q(1, 2));
    f.agent("Nash", Side::B, q(1, 2));
    f.prefs("Erdős", &[("Tucker", 3), ("Rényi", 2), ("Nash", 1)], &[("Tucker", 1), ("Rényi", 0), ("Nash", 0)]);
    f.prefs(
        "Kuhn",
        &[("Tucker", 5), ("Nash", 3), ("Shapley", 2)],
        &[("Tucker", 1), ("Nash", 0), ("Shapley", 0), ("Nash", 1)],
    );
    f.prefs("Gale", &[("Shapley", 2), ("Tucker", 1)], &[("Shapley", 0), ("Tucker", 1)]);
    f.prefs("Rényi", &[("Erdős", 1)], &[("Erdős", 0)]);
    f.prefs("Shapley", &[("Kuhn", 2), ("Gale", 1)], &[("Kuhn", 0), ("Gale", 0)]);
    f.prefs("Tucker", &[("Gale", 3), ("Erdős", 2), ("Kuhn", 1)], &[("Gale", 0), ("Erdős", 0), ("Kuhn", 0)]);
    f.prefs("Nash", &[("Kuhn", 2), ("Erdős", 1)], &[("Kuhn", 0), ("Erdős", 0)]);
    let e = f.two_periods((&["Erdős", "Kuhn", "Gale"], &["Rényi", "Shapley"]), (&[], &["Tucker", "Nash"]));
    f.finish(
        "example1",
        e,
        &[
            ("mL", &[("Erdős", "Rényi"), ("Gale", "Shapley")], &[("Kuhn", "Tucker")]),
            ("mC", &[("Erdős", "Rényi")], &[("Kuhn", "Shapley"), ("Gale", "Tucker")]),
            ("mR", &[("Gale", "Shapley")], &[("Erdős", "Tucker"), ("Kuhn", "Nash")]),
            ("mbarL", &[("Erdős", "Rényi"), ("Kuhn", "Shapley")], &[("Gale", "Tucker")]),
            ("mbarE1", &[("Gale", "Shapley")], &[("Kuhn", "Nash"), ("Erdős", "Tucker")]),
            ("mbarE2", &[("Kuhn", "Shapley")], &[("Gale", "Tucker"), ("Erdős", "Rényi")]),
            ("mbarE3", &[("Gale", "Shapley")], &[("Kuhn", "Tucker"), ("Erdős", "Rényi")]),
            ("mbarE4", &[("Gale", "Shapley"), ("Kuhn", "Rényi")], &[("Erdős", "Tucker")]),
        ],
    )
}

fn lonewolf() -> Fixture {
    let mut f = Builder::new();
    f.agent("a11", Side::A, q(5, 8));
    f.agent("a12", Side::A, q(1, 2));
    f.agent("a21", Side::A, q(1, 2));
    f.agent("a22", Side::A, q(1, 2));
    f.agent("b11", Side::B, q(1, 2));
    f.agent("b21", Side::B, q(1, 2));
    f.agent("b22", Side::B, q(1, 2));
    f.prefs("a11", &[("b21", 5), ("b22", 3), ("b11", 2)], &[("b21", 1), ("b22", 0), ("b11", 0), ("b22", 1)]);
    f.prefs("a12", &[("b11", 1)], &[("b11", 0)]);
    f.prefs("a21", &[("b21", 1)], &[("b21", 0)]);
    f.prefs("a22", &[("b22", 2), ("b21", 1)], &[("b22", 0), ("b21", 0)]);
    f.prefs("b11", &[("a11", 2), ("a12", 1)], &[("a11", 0), ("a12", 0)]);
    f.prefs("b21", &[("a22", 3), ("a11", 2), ("a21", 1)], &[("a22", 0), ("a11", 0), ("a21", 0)]);
    f.prefs("b22", &[("a11", 2), ("a22", 1)], &[("a11", 0), ("a22", 0)]);
    let e = f.two_periods((&["a11", "a12"], &["b11"]), (&["a21", "a22"], &["b21", "b22"]));
    f.finish(
        "lonewolf",
        e,
        &[
            ("mL", &[("a11", "b11")], &[("a21", "b21"), ("a22", "b22")]),
            ("mR", &[("a12", "b11")], &[("a11", "b21"), ("a22", "b22")]),
            ("mbarL", &[("a12", "b11")], &[("a11", "b22"), ("a22", "b21")]),
            ("mbarR", &[], &[("a11", "b21"), ("a22", "b22"), ("a12", "b11")]),
        ],
    )
}

fn college() -> Fixture {
    let mut f = Builder::new();
    f.agent("Erdős", Side::A, q(1, 2));
    f.agent("Kuhn", Side::A, q(5, 8));
    f.agent("Gale", Side::A, q(1, 2));
    f.agent("Shapley", Side::B, q(1, 2));
    f.agent("Tucker", Side::B, q(1, 2));
    f.agent("Nash", Side::B, q(1, 2));
    f.prefs("Erdős", &[("Nash", 1)], &[("Nash", 0)]);
    f.prefs(
        "Kuhn",
        &[("Tucker", 5), ("Nash", 3), ("Shapley", 2)],
        &[("Tucker", 1), ("Nash", 0), ("Shapley", 0), ("Nash", 1)],
    );
    f.prefs("Gale", &[("Shapley", 2), ("Tucker", 1)], &[("Shapley", 0), ("Tucker", 1)]);
    f.prefs("Shapley", &[("Kuhn", 2), ("Gale", 1)], &[("Kuhn", 0), ("Gale", 0)]);
    f.prefs("Tucker", &[("Gale", 2), ("Kuhn", 1)], &[("Gale", 0), ("Kuhn", 0)]);
    f.prefs("Nash", &[("Kuhn", 2), ("Erdős", 1)], &[("Kuhn", 0), ("Erdős", 0)]);
    let e = f.two_periods((&["Kuhn", "Gale"], &["Shapley"]), (&["Erdős"], &["Tucker", "Nash"]));
    f.finish(
        "college",
        e,
        &[
            ("mADA", &[("Gale", "Shapley")], &[("Kuhn", "Tucker"), ("Erdős", "Nash")]),
            ("mBDA", &[("Kuhn", "Shapley")], &[("Gale", "Tucker"), ("Erdős", "Nash")]),
        ],
    )
}

/// Check that a fixture's utilities reproduce its ordinal lists: discounted values strictly
/// decrease along each list and stay positive, and every unlisted partner is unacceptable.
pub fn check_ordering(f: &Fixture) -> std::result::Result<(), String> {
    let e = &f.economy;
    for list in &f.lists {
        let k = e.agent_named(&list.agent).ok_or_else(|| format!("unknown agent {}", list.agent))?;
        let mut prev: Option<Q> = None;
        for (p, delay) in &list.entries {
            let partner = e.agent_named(p).ok_or_else(|| format!("unknown agent {p}"))?;
            let value = pow(e.delta(k), *delay) * e.utility(k, partner);
            if value <= Q::zero() {
                return Err(format!("{}: entry ({p}, {delay}) is not acceptable", list.agent));
            }
            if let Some(prev) = &prev {
                if value >= *prev {
                    return Err(format!("{}: entry ({p}, {delay}) does not rank below its predecessor", list.agent));
                }
            }
            prev = Some(value);
        }
        for other in e.agents().iter().filter(|a| a.side != e.side(k)) {
            let listed = list.entries.iter().any(|(p, _)| e.agent_named(p) == Some(other.id));
            if !listed && *e.utility(k, other.id) >= Q::zero() {
                return Err(format!("{}: unlisted partner {} is acceptable", list.agent, e.label(other.id)));
            }
        }
    }
    for (label, m) in &f.matchings {
        let v = validate_matching(m, e);
        if !v.is_ok() {
            return Err(format!("matching {label}: {}", v.summary()));
        }
    }
    Ok(())
}

/// Period matching from named pairs.
pub fn pairs(e: &Economy, names: &[(&str, &str)]) -> PeriodMatching {
    PeriodMatching::from_pairs(names.iter().map(|(a, b)| (e.agent_named(a).unwrap(), e.agent_named(b).unwrap())))
        .expect("fixture pairs")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_pass_ordering_oracle() {
        for name in FIXTURES {
            let f = load_fixture(name).unwrap();
            assert!(f.economy.validation().is_ok(), "{name}: {:?}", f.economy.validation());
            check_ordering(&f).unwrap_or_else(|err| panic!("{name}: {err}"));
        }
    }

    #[test]
    fn oracle_catches_misordered_list() {
        let mut f = load_fixture("example1").unwrap();
        f.lists[1].entries.swap(1, 2);
        assert!(check_ordering(&f).is_err());
    }

    #[test]
    fn unknown_fixture() {
        assert!(matches!(load_fixture("nope"), Err(Error::UnknownFixture(_))));
    }
}
