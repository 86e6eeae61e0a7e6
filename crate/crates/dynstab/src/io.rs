//! JSON forms of economies and matchings.
//!
//! Economy:
//!
//! ```json
//! {
//!   "horizon": 2,
//!   "characteristics": {
//!     "A": ["a1"], "B": ["b1"],
//!     "u": {"a1": {"b1": [3, 1]}},
//!     "v": {"a1": {"b1": [1, 1]}},
//!     "delta": {"a1": [1, 2], "b1": [1, 2]}
//!   },
//!   "agents": [{"id": 0, "side": "A", "characteristic": "a1", "name": "Ann"}],
//!   "tree": [{"prob": [1, 1], "arrivals": {"A": [0], "B": []}, "children": []}]
//! }
//! ```
//!
//! `u` holds side-A utilities and `v` side-B utilities, both indexed by (A label, B label).
//! Unknown keys are rejected. Matching: an object from node path (`"0"`, `"0/1"`, ...) to the
//! cumulative list of `[a, b]` pairs at that node; nodes not listed have no pairs.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{Matching, PeriodMatching};
use crate::model::{Agent, AgentId, ArrivalEvent, CharacteristicTable, Economy, NodeId, Side, TreeNode, Q};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EconomyDoc {
    horizon: usize,
    characteristics: TableDoc,
    agents: Vec<AgentDoc>,
    tree: Vec<NodeDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableDoc {
    #[serde(rename = "A")]
    a: Vec<String>,
    #[serde(rename = "B")]
    b: Vec<String>,
    u: BTreeMap<String, BTreeMap<String, [i64; 2]>>,
    v: BTreeMap<String, BTreeMap<String, [i64; 2]>>,
    delta: BTreeMap<String, [i64; 2]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentDoc {
    id: u32,
    side: Side,
    characteristic: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    prob: [i64; 2],
    arrivals: ArrivalsDoc,
    #[serde(default)]
    children: Vec<NodeDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrivalsDoc {
    #[serde(rename = "A", default)]
    a: Vec<u32>,
    #[serde(rename = "B", default)]
    b: Vec<u32>,
}

fn rat_in(x: [i64; 2]) -> Result<Q> {
    if x[1] == 0 {
        return Err(Error::Parse(format!("zero denominator in [{}, {}]", x[0], x[1])));
    }
    Ok(Q::new(BigInt::from(x[0]), BigInt::from(x[1])))
}

fn rat_out(x: &Q) -> Result<[i64; 2]> {
    match (x.numer().to_i64(), x.denom().to_i64()) {
        (Some(n), Some(d)) => Ok([n, d]),
        _ => Err(Error::Range(format!("rational {x} does not fit in 64-bit integers"))),
    }
}

fn node_in(d: NodeDoc) -> Result<TreeNode> {
    let arrivals = ArrivalEvent::new(
        d.arrivals.a.into_iter().map(AgentId).collect(),
        d.arrivals.b.into_iter().map(AgentId).collect(),
    );
    let children = d.children.into_iter().map(node_in).collect::<Result<_>>()?;
    Ok(TreeNode::new(rat_in(d.prob)?, arrivals, children))
}

fn node_out(n: &TreeNode) -> Result<NodeDoc> {
    Ok(NodeDoc {
        prob: rat_out(&n.prob)?,
        arrivals: ArrivalsDoc {
            a: n.arrivals.a.iter().map(|k| k.0).collect(),
            b: n.arrivals.b.iter().map(|k| k.0).collect(),
        },
        children: n.children.iter().map(node_out).collect::<Result<_>>()?,
    })
}

/// Parse an economy. Structural problems are reported by the economy's validation, not here.
pub fn economy_from_json(s: &str) -> Result<Economy> {
    let doc: EconomyDoc = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
    let mut table = CharacteristicTable {
        side_a: doc.characteristics.a.into_iter().collect(),
        side_b: doc.characteristics.b.into_iter().collect(),
        ..Default::default()
    };
    for (map, out) in [(doc.characteristics.u, &mut table.u), (doc.characteristics.v, &mut table.v)] {
        for (a, row) in map {
            for (b, x) in row {
                out.insert((a.clone(), b), rat_in(x)?);
            }
        }
    }
    for (c, x) in doc.characteristics.delta {
        table.delta.insert(c, rat_in(x)?);
    }
    let agents = doc
        .agents
        .into_iter()
        .map(|a| Agent { id: AgentId(a.id), side: a.side, characteristic: a.characteristic, name: a.name })
        .collect();
    let tree = doc.tree.into_iter().map(node_in).collect::<Result<_>>()?;
    Ok(Economy::new(doc.horizon, table, agents, tree))
}

fn economy_doc(e: &Economy) -> Result<EconomyDoc> {
    let t = e.table();
    let mut u: BTreeMap<String, BTreeMap<String, [i64; 2]>> = BTreeMap::new();
    let mut v: BTreeMap<String, BTreeMap<String, [i64; 2]>> = BTreeMap::new();
    for ((a, b), x) in &t.u {
        u.entry(a.clone()).or_default().insert(b.clone(), rat_out(x)?);
    }
    for ((a, b), x) in &t.v {
        v.entry(a.clone()).or_default().insert(b.clone(), rat_out(x)?);
    }
    let delta = t.delta.iter().map(|(c, x)| Ok((c.clone(), rat_out(x)?))).collect::<Result<_>>()?;
    Ok(EconomyDoc {
        horizon: e.horizon(),
        characteristics: TableDoc {
            a: t.side_a.iter().cloned().collect(),
            b: t.side_b.iter().cloned().collect(),
            u,
            v,
            delta,
        },
        agents: e
            .agents()
            .iter()
            .map(|a| AgentDoc {
                id: a.id.0,
                side: a.side,
                characteristic: a.characteristic.clone(),
                name: a.name.clone(),
            })
            .collect(),
        tree: e.tree().iter().map(node_out).collect::<Result<_>>()?,
    })
}

/// Canonical pretty JSON of an economy: agents by id, children in canonical order.
pub fn economy_to_json(e: &Economy) -> Result<String> {
    Ok(serde_json::to_string_pretty(&economy_doc(e)?).expect("serializable") + "\n")
}

/// Compact string identifying characteristics and roster, for cache keys.
pub(crate) fn roster_signature(e: &Economy) -> String {
    let t = e.table();
    let agents: Vec<_> = e.agents().iter().map(|a| (a.id.0, a.side, &a.characteristic)).collect();
    format!("{:?}|{:?}|{:?}|{:?}|{:?}|{:?}", t.side_a, t.side_b, t.u, t.v, t.delta, agents)
}

pub fn matching_from_json(e: &Economy, s: &str) -> Result<Matching> {
    let doc: BTreeMap<String, Vec<[u32; 2]>> = serde_json::from_str(s).map_err(|err| Error::Parse(err.to_string()))?;
    let mut by_node: BTreeMap<NodeId, Vec<[u32; 2]>> = BTreeMap::new();
    for (path, pairs) in doc {
        let n = e.node_at(&path)?;
        if n == NodeId::ROOT {
            return Err(Error::Range("the root carries no matching".into()));
        }
        by_node.insert(n, pairs);
    }
    let mut m = Matching::undefined();
    for n in e.period_nodes() {
        let pairs = by_node.remove(&n).unwrap_or_default();
        let pm = PeriodMatching::from_pairs(pairs.into_iter().map(|[a, b]| (AgentId(a), AgentId(b))))?;
        m.set(n, pm);
    }
    Ok(m)
}

/// Node path to cumulative pairs, every node listed.
pub fn matching_value(e: &Economy, m: &Matching) -> serde_json::Value {
    let mut out = serde_json::Map::new();
    for n in e.period_nodes() {
        let pairs: Vec<[u32; 2]> =
            m.get(n).map(|pm| pm.pairs(e)).unwrap_or_default().into_iter().map(|(a, b)| [a.0, b.0]).collect();
        out.insert(e.path(n), serde_json::json!(pairs));
    }
    serde_json::Value::Object(out)
}

pub fn matching_to_json(e: &Economy, m: &Matching) -> String {
    serde_json::to_string_pretty(&matching_value(e, m)).expect("serializable") + "\n"
}
