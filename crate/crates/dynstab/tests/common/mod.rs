//! Random economies and brute-force oracles shared by the integration tests. The oracles share
//! nothing with the solver beyond the data model and the matching enumerator.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_traits::{One, Zero};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use dynstab::matching::{enumerate_matchings, Matching, PeriodMatching};
use dynstab::model::{q, qi, Agent, AgentId, ArrivalEvent, CharacteristicTable, Economy, NodeId, Side, TreeNode, Q};
use dynstab::stability::PreferenceList;

pub use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Nonzero utilities. Every discount below times any of them is never another of them, so
/// intertemporal rankings stay strict.
const UTILITIES: [i64; 10] = [-3, -2, -1, 1, 2, 3, 4, 5, 6, 8];
const DISCOUNTS: [(i64, i64); 5] = [(7, 10), (9, 10), (3, 7), (5, 11), (2, 13)];

#[derive(Clone, Copy, Debug)]
pub struct GenConfig {
    pub min_horizon: usize,
    pub max_horizon: usize,
    /// Cap on arrivals per side in one event.
    pub per_side: usize,
    /// Agents per side that may arrive somewhere in the tree.
    pub pool: usize,
    pub branches: usize,
}

impl GenConfig {
    pub const SMALL: GenConfig = GenConfig { min_horizon: 1, max_horizon: 3, per_side: 2, pool: 3, branches: 2 };
    pub const WIDE: GenConfig = GenConfig { min_horizon: 1, max_horizon: 3, per_side: 3, pool: 6, branches: 2 };
}

/// Agents `0..na` on side A and `na..na+nb` on side B, each with its own characteristic and
/// strict random utilities.
pub fn random_roster(rng: &mut impl Rng, na: usize, nb: usize) -> (CharacteristicTable, Vec<Agent>) {
    let mut table = CharacteristicTable::default();
    let mut agents = Vec::new();
    let name = |i: usize| if i < na { format!("a{i}") } else { format!("b{}", i - na) };
    for i in 0..na + nb {
        let side = if i < na { Side::A } else { Side::B };
        let c = name(i);
        match side {
            Side::A => table.side_a.insert(c.clone()),
            Side::B => table.side_b.insert(c.clone()),
        };
        let (n, d) = *DISCOUNTS.choose(rng).unwrap();
        table.delta.insert(c.clone(), q(n, d));
        agents.push(Agent { id: AgentId(i as u32), side, characteristic: c, name: None });
    }
    for i in 0..na {
        let mut vals = UTILITIES.to_vec();
        vals.shuffle(rng);
        for (j, x) in vals.iter().take(nb).enumerate() {
            table.u.insert((name(i), name(na + j)), qi(*x));
        }
    }
    for j in 0..nb {
        let mut vals = UTILITIES.to_vec();
        vals.shuffle(rng);
        for (i, x) in vals.iter().take(na).enumerate() {
            table.v.insert((name(i), name(na + j)), qi(*x));
        }
    }
    (table, agents)
}

fn pick(rng: &mut impl Rng, pool: &[AgentId], cap: usize) -> Vec<AgentId> {
    let n = rng.gen_range(0..=cap.min(pool.len()));
    let mut v: Vec<AgentId> = pool.choose_multiple(rng, n).copied().collect();
    v.sort();
    v
}

fn normalize(weights: &[i64]) -> Vec<Q> {
    let total: i64 = weights.iter().sum();
    weights.iter().map(|w| q(*w, total)).collect()
}

fn random_children(
    rng: &mut impl Rng,
    cfg: &GenConfig,
    depth: usize,
    horizon: usize,
    left_a: &[AgentId],
    left_b: &[AgentId],
) -> Vec<TreeNode> {
    let n = rng.gen_range(1..=cfg.branches);
    let mut events: Vec<ArrivalEvent> = Vec::new();
    for _ in 0..n {
        let ev = ArrivalEvent::new(pick(rng, left_a, cfg.per_side), pick(rng, left_b, cfg.per_side));
        if !events.contains(&ev) {
            events.push(ev);
        }
    }
    let weights: Vec<i64> = events.iter().map(|_| rng.gen_range(1..=4)).collect();
    events
        .into_iter()
        .zip(normalize(&weights))
        .map(|(ev, p)| {
            let children = if depth + 1 < horizon {
                let la: Vec<AgentId> = left_a.iter().copied().filter(|k| !ev.contains(*k)).collect();
                let lb: Vec<AgentId> = left_b.iter().copied().filter(|k| !ev.contains(*k)).collect();
                random_children(rng, cfg, depth + 1, horizon, &la, &lb)
            } else {
                Vec::new()
            };
            TreeNode::new(p, ev, children)
        })
        .collect()
}

pub fn random_economy(rng: &mut impl Rng, cfg: &GenConfig) -> Economy {
    let horizon = rng.gen_range(cfg.min_horizon..=cfg.max_horizon);
    let (table, agents) = random_roster(rng, cfg.pool, cfg.pool);
    let a: Vec<AgentId> = (0..cfg.pool).map(|i| AgentId(i as u32)).collect();
    let b: Vec<AgentId> = (cfg.pool..2 * cfg.pool).map(|i| AgentId(i as u32)).collect();
    let tree = random_children(rng, cfg, 0, horizon, &a, &b);
    let e = Economy::new(horizon, table, agents, tree);
    assert!(e.validation().is_ok(), "generator produced an invalid economy: {:?}", e.validation());
    e
}

/// Deterministic two-period economy: one branch per period.
pub fn random_deterministic_t2(rng: &mut impl Rng, pool: usize) -> Economy {
    let (table, agents) = random_roster(rng, pool, pool);
    let mut a: Vec<AgentId> = (0..pool).map(|i| AgentId(i as u32)).collect();
    let mut b: Vec<AgentId> = (pool..2 * pool).map(|i| AgentId(i as u32)).collect();
    a.shuffle(rng);
    b.shuffle(rng);
    let (ka, kb) = (rng.gen_range(1..=pool), rng.gen_range(1..=pool));
    let first = ArrivalEvent::new(a[..ka].to_vec(), b[..kb].to_vec());
    let second = ArrivalEvent::new(a[ka..].to_vec(), b[kb..].to_vec());
    let tree = vec![TreeNode::new(Q::one(), first, vec![TreeNode::new(Q::one(), second, vec![])])];
    let e = Economy::new(2, table, agents, tree);
    assert!(e.validation().is_ok());
    e
}

/// Two periods where every subset of the first-period cohort may show up first and the rest
/// arrive in the second period together with a fixed second cohort. All leaves share the same
/// cumulative arrivals and equal probability, so the tree is exchangeable and every one-agent
/// delay has a branch to land in.
pub fn random_full_support_t2(
    rng: &mut impl Rng,
    first_a: usize,
    first_b: usize,
    later_a: usize,
    later_b: usize,
) -> Economy {
    let na = first_a + later_a;
    let nb = first_b + later_b;
    let (table, agents) = random_roster(rng, na, nb);
    let cohort: Vec<AgentId> = (0..first_a).chain(na..na + first_b).map(|i| AgentId(i as u32)).collect();
    let later_a: Vec<AgentId> = (first_a..na).map(|i| AgentId(i as u32)).collect();
    let later_b: Vec<AgentId> = (na + first_b..na + nb).map(|i| AgentId(i as u32)).collect();
    let subsets = 1usize << cohort.len();
    let mut tree = Vec::new();
    for mask in 0..subsets {
        let (early, late): (Vec<AgentId>, Vec<AgentId>) =
            cohort.iter().enumerate().fold((vec![], vec![]), |(mut e, mut l), (i, k)| {
                if mask >> i & 1 == 1 {
                    e.push(*k)
                } else {
                    l.push(*k)
                }
                (e, l)
            });
        let split = |ks: &[AgentId]| -> (Vec<AgentId>, Vec<AgentId>) { ks.iter().partition(|k| (k.0 as usize) < na) };
        let (ea, eb) = split(&early);
        let (mut la, mut lb) = split(&late);
        la.extend(&later_a);
        lb.extend(&later_b);
        let leaf = TreeNode::new(Q::one(), ArrivalEvent::new(la, lb), vec![]);
        tree.push(TreeNode::new(q(1, subsets as i64), ArrivalEvent::new(ea, eb), vec![leaf]));
    }
    let e = Economy::new(2, table, agents, tree);
    assert!(e.validation().is_ok(), "{:?}", e.validation());
    e
}

// ---- brute-force dynamic stability ----

fn ancestors_matched(e: &Economy, m: &Matching, node: NodeId) -> BTreeSet<AgentId> {
    match e.node(node).parent {
        Some(p) if p != NodeId::ROOT => m.at(p).map().keys().copied().collect(),
        _ => BTreeSet::new(),
    }
}

/// Agents present and not yet matched when `node` opens.
pub fn available(e: &Economy, m: &Matching, node: NodeId) -> (Vec<AgentId>, Vec<AgentId>) {
    let gone = ancestors_matched(e, m, node);
    let (a, b) = e.arrived(node);
    (a.into_iter().filter(|k| !gone.contains(k)).collect(), b.into_iter().filter(|k| !gone.contains(k)).collect())
}

fn leaves_below(e: &Economy, node: NodeId, out: &mut Vec<NodeId>) {
    if e.node(node).children.is_empty() {
        out.push(node);
    }
    for &c in &e.node(node).children {
        leaves_below(e, c, out);
    }
}

/// Expected utility from `node` on, each leaf weighted by its conditional probability and
/// discounted from `node` to the first node on the path where `k` is matched.
pub fn oracle_payoff(e: &Economy, k: AgentId, m: &Matching, node: NodeId) -> Q {
    let t = e.node(node).depth;
    let mut leaves = Vec::new();
    leaves_below(e, node, &mut leaves);
    let mut total = Q::zero();
    for leaf in leaves {
        let mut path = vec![leaf];
        while *path.last().unwrap() != node {
            path.push(e.node(*path.last().unwrap()).parent.unwrap());
        }
        path.reverse();
        let mut prob = Q::one();
        for n in &path[1..] {
            prob *= &e.node(*n).prob;
        }
        if let Some(n) = path.iter().find(|n| m.at(**n).is_matched(k)) {
            let partner = m.at(*n).partner(k);
            let mut disc = Q::one();
            for _ in t..e.node(*n).depth {
                disc *= e.delta(k);
            }
            total += prob * disc * e.utility(k, partner);
        }
    }
    total
}

fn immediate(e: &Economy, k: AgentId, pm: &PeriodMatching) -> Q {
    pm.partner_of(k).map_or_else(Q::zero, |p| e.utility(k, p).clone())
}

/// No blocking pair and no individually irrational pair among agents newly matched at `node`.
pub fn oracle_stable_among_matchers(e: &Economy, m: &Matching, node: NodeId) -> bool {
    let pm = m.at(node);
    let (a, b) = available(e, m, node);
    let ma: Vec<AgentId> = a.into_iter().filter(|k| pm.is_matched(*k)).collect();
    let mb: Vec<AgentId> = b.into_iter().filter(|k| pm.is_matched(*k)).collect();
    let zero = Q::zero();
    for &x in &ma {
        let y = pm.partner(x);
        if e.u(x, y) < &zero || e.v(x, y) < &zero {
            return false;
        }
        for &z in &mb {
            if z != y && e.u(x, z) > e.u(x, y) && e.v(x, z) > &immediate(e, z, pm) {
                return false;
            }
        }
    }
    true
}

/// Dynamic stability by exhaustive search over every matching of the economy, checking every
/// available agent's waiting option (no matched-only shortcut).
pub struct BruteForce<'a> {
    e: &'a Economy,
    all: Vec<Matching>,
    groups: HashMap<(NodeId, Vec<Option<PeriodMatching>>), Vec<usize>>,
    memo: HashMap<(usize, NodeId), bool>,
    sam: HashMap<(usize, NodeId), bool>,
}

impl<'a> BruteForce<'a> {
    pub fn new(e: &'a Economy, limit: u64) -> Option<Self> {
        let all: Vec<Matching> = enumerate_matchings(e, limit).ok()?.collect();
        let mut bf = BruteForce { e, all, groups: HashMap::new(), memo: HashMap::new(), sam: HashMap::new() };
        for i in 0..bf.all.len() {
            for n in e.period_nodes() {
                let key = bf.outside_key(i, n);
                bf.groups.entry((n, key)).or_default().push(i);
            }
        }
        Some(bf)
    }

    pub fn matchings(&self) -> &[Matching] {
        &self.all
    }

    fn outside_key(&self, i: usize, n: NodeId) -> Vec<Option<PeriodMatching>> {
        let inside: BTreeSet<NodeId> = self.e.subtree(n).into_iter().collect();
        self.e.period_nodes().filter(|x| !inside.contains(x)).map(|x| self.all[i].get(x).cloned()).collect()
    }

    fn sam(&mut self, i: usize, n: NodeId) -> bool {
        if let Some(v) = self.sam.get(&(i, n)) {
            return *v;
        }
        let v = oracle_stable_among_matchers(self.e, &self.all[i], n);
        self.sam.insert((i, n), v);
        v
    }

    /// Conjectures of `k` at `n` against matching `i`, as indices.
    pub fn conjectures(&mut self, k: AgentId, i: usize, n: NodeId) -> Vec<usize> {
        let group = self.groups[&(n, self.outside_key(i, n))].clone();
        let children = self.e.node(n).children.clone();
        group
            .into_iter()
            .filter(|&j| {
                !self.all[j].at(n).is_matched(k) && self.sam(j, n) && children.iter().all(|&c| self.holds_from(j, c))
            })
            .collect()
    }

    /// Whether matching `i` satisfies every condition at `n` and at all nodes below.
    pub fn holds_from(&mut self, i: usize, n: NodeId) -> bool {
        if let Some(v) = self.memo.get(&(i, n)) {
            return *v;
        }
        let v = self.holds_at(i, n) && self.e.node(n).children.clone().into_iter().all(|c| self.holds_from(i, c));
        self.memo.insert((i, n), v);
        v
    }

    fn holds_at(&mut self, i: usize, n: NodeId) -> bool {
        let e = self.e;
        let m = self.all[i].clone();
        let (a, b) = available(e, &m, n);
        let pay: BTreeMap<AgentId, Q> = a.iter().chain(&b).map(|k| (*k, oracle_payoff(e, *k, &m, n))).collect();
        for &x in &a {
            for &y in &b {
                if m.at(n).partner_of(x) != Some(y) && e.u(x, y) > &pay[&x] && e.v(x, y) > &pay[&y] {
                    return false;
                }
            }
        }
        for &k in a.iter().chain(&b) {
            let ok = self.conjectures(k, i, n).into_iter().any(|j| oracle_payoff(e, k, &self.all[j], n) <= pay[&k]);
            if !ok {
                return false;
            }
        }
        true
    }

    pub fn stable_set(&mut self) -> BTreeSet<Matching> {
        let roots = self.e.node(NodeId::ROOT).children.clone();
        let keep: Vec<usize> = (0..self.all.len()).filter(|&i| roots.iter().all(|&c| self.holds_from(i, c))).collect();
        keep.into_iter().map(|i| self.all[i].clone()).collect()
    }
}

// ---- one-period oracle ----

/// Every partial matching between `a` and `b`.
pub fn partial_matchings(a: &[AgentId], b: &[AgentId]) -> Vec<PeriodMatching> {
    fn go(
        a: &[AgentId],
        b: &[AgentId],
        used: &mut Vec<bool>,
        cur: &mut Vec<(AgentId, AgentId)>,
        out: &mut Vec<PeriodMatching>,
    ) {
        let Some((&x, rest)) = a.split_first() else {
            out.push(PeriodMatching::from_pairs(cur.iter().copied()).unwrap());
            return;
        };
        go(rest, b, used, cur, out);
        for j in 0..b.len() {
            if !used[j] {
                used[j] = true;
                cur.push((x, b[j]));
                go(rest, b, used, cur, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(a, b, &mut vec![false; b.len()], &mut Vec::new(), &mut out);
    out
}

pub fn statically_stable(e: &Economy, pm: &PeriodMatching, a: &[AgentId], b: &[AgentId]) -> bool {
    let zero = Q::zero();
    a.iter().chain(b).all(|k| immediate(e, *k, pm) >= zero)
        && a.iter().all(|&x| b.iter().all(|&y| !(e.u(x, y) > &immediate(e, x, pm) && e.v(x, y) > &immediate(e, y, pm))))
}

/// For a one-period economy: every combination of statically stable matchings at the nodes.
pub fn one_period_oracle(e: &Economy) -> BTreeSet<Matching> {
    assert_eq!(e.horizon(), 1);
    let mut out = vec![Matching::undefined()];
    for n in e.period_nodes() {
        let (a, b) = e.arrived(n);
        let stable: Vec<PeriodMatching> =
            partial_matchings(&a, &b).into_iter().filter(|pm| statically_stable(e, pm, &a, &b)).collect();
        out = out
            .into_iter()
            .flat_map(|m| {
                stable.iter().map(move |pm| {
                    let mut m2 = m.clone();
                    m2.set(n, pm.clone());
                    m2
                })
            })
            .collect();
    }
    out.into_iter().collect()
}

// ---- static list instances ----

pub struct ListInstance {
    pub a: Vec<AgentId>,
    pub b: Vec<AgentId>,
    pub lists: BTreeMap<AgentId, PreferenceList>,
}

/// Random strict lists over random subsets of the other side.
pub fn random_lists(rng: &mut impl Rng, max_a: usize, max_b: usize) -> ListInstance {
    let na = rng.gen_range(1..=max_a);
    let nb = rng.gen_range(1..=max_b);
    let a: Vec<AgentId> = (0..na).map(|i| AgentId(i as u32)).collect();
    let b: Vec<AgentId> = (na..na + nb).map(|i| AgentId(i as u32)).collect();
    let mut lists = BTreeMap::new();
    for (k, others) in a.iter().map(|k| (k, &b)).chain(b.iter().map(|k| (k, &a))) {
        let mut r = others.clone();
        r.shuffle(rng);
        r.truncate(rng.gen_range(0..=r.len()));
        lists.insert(*k, PreferenceList { owner: *k, ranking: r });
    }
    ListInstance { a, b, lists }
}

/// Whether `k` ranks `p` above its partner in `pm` (being single ranks below every listed partner).
pub fn list_prefers(lists: &BTreeMap<AgentId, PreferenceList>, k: AgentId, p: AgentId, pm: &PeriodMatching) -> bool {
    match (lists[&k].rank(p), pm.partner_of(k).map(|c| lists[&k].rank(c))) {
        (None, _) => false,
        (Some(_), None) => true,
        (Some(r), Some(cur)) => cur.is_none_or(|c| r < c),
    }
}

pub fn stable_wrt_lists(inst: &ListInstance, pm: &PeriodMatching) -> bool {
    let acceptable = pm.map().iter().all(|(k, p)| inst.lists[k].rank(*p).is_some());
    acceptable
        && inst.a.iter().all(|&x| {
            inst.b.iter().all(|&y| {
                pm.partner_of(x) == Some(y)
                    || !(list_prefers(&inst.lists, x, y, pm) && list_prefers(&inst.lists, y, x, pm))
            })
        })
}

pub fn stable_list_matchings(inst: &ListInstance) -> Vec<PeriodMatching> {
    partial_matchings(&inst.a, &inst.b).into_iter().filter(|pm| stable_wrt_lists(inst, pm)).collect()
}

/// A uniformly random choice of new pairs among available agents at every node, top-down.
pub fn random_matching(rng: &mut impl Rng, e: &Economy) -> Matching {
    let mut m = Matching::undefined();
    for n in e.period_nodes() {
        let (mut a, mut b) = available(e, &m, n);
        a.shuffle(rng);
        b.shuffle(rng);
        let mut pm = match e.node(n).parent {
            Some(p) if p != NodeId::ROOT => m.at(p).clone(),
            _ => PeriodMatching::new(),
        };
        let pairs = rng.gen_range(0..=a.len().min(b.len()));
        for i in 0..pairs {
            pm.insert(a[i], b[i]);
        }
        m.set(n, pm);
    }
    m
}
