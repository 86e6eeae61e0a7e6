//! Sequential spot-mechanism games and their pure subgame-perfect equilibria.
//!
//! Every period, each present unmatched agent submits a rank-order list (ROL) to that period's
//! spot mechanism. Strategies condition on the public history, which at a node is the
//! realization and the matching so far; a subgame is therefore a node plus the set of agents
//! still available there. Equilibria are found by backward induction over those subgames.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use num_traits::Zero;
use serde::Serialize;

use crate::dynamic::{Mode, Solver, StableSetCache, DEFAULT_LIMIT};
use crate::error::{Error, Result};
use crate::matching::{partial_matchings, Matching, PeriodMatching};
use crate::model::{AgentId, Economy, NodeId, Side, Q};
use crate::stability::{deferred_acceptance, PreferenceList};

pub const DEFAULT_GAME_LIMIT: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Side-A DA every period; side B reports truthfully and is not strategic.
    Gamma1,
    /// A stable spot mechanism; both sides strategic; pairs may deviate jointly.
    Gamma2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    DaA,
    DaB,
    /// The first matching, in enumeration order, that is stable for the reports.
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GameSpec {
    pub variant: Variant,
    pub mechanism: Mechanism,
    /// Let strategic agents submit any ordered list of present partners, not just
    /// truncations of their true ranking and the empty list.
    pub full_rols: bool,
    pub limit: u64,
}

impl GameSpec {
    pub fn new(variant: Variant, mechanism: Mechanism) -> Self {
        GameSpec { variant, mechanism, full_rols: false, limit: DEFAULT_GAME_LIMIT }
    }
}

/// A submitted list; empty means the owner lists only themself.
pub type Rol = PreferenceList;

/// The owner's true ranking of `partners`, acceptable ones only.
pub fn true_ranking(e: &Economy, k: AgentId, partners: &[AgentId]) -> Vec<AgentId> {
    crate::stability::preference_list(e, k, partners, &Q::zero()).ranking
}

/// The empty list and every nonempty prefix of the true ranking.
pub fn truncations(e: &Economy, k: AgentId, partners: &[AgentId]) -> Vec<Rol> {
    let ranking = true_ranking(e, k, partners);
    (0..=ranking.len()).map(|n| PreferenceList { owner: k, ranking: ranking[..n].to_vec() }).collect()
}

fn all_lists(k: AgentId, partners: &[AgentId]) -> Vec<Rol> {
    fn go(k: AgentId, rest: &[AgentId], cur: &mut Vec<AgentId>, out: &mut Vec<Rol>) {
        out.push(PreferenceList { owner: k, ranking: cur.clone() });
        for &p in rest {
            if !cur.contains(&p) {
                cur.push(p);
                go(k, rest, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(k, partners, &mut Vec::new(), &mut out);
    out
}

/// Whether `pm` is stable for the reports: matched pairs list each other and no two
/// participants both prefer each other to their assignment.
pub fn stable_for_reports(a: &[AgentId], b: &[AgentId], rols: &BTreeMap<AgentId, Rol>, pm: &PeriodMatching) -> bool {
    let rank = |k: AgentId, p: AgentId| rols.get(&k).and_then(|l| l.rank(p));
    let prefers = |k: AgentId, p: AgentId| match (rank(k, p), pm.partner_of(k)) {
        (None, _) => false,
        (Some(_), None) => true,
        (Some(r), Some(cur)) => rank(k, cur).is_none_or(|rc| r < rc),
    };
    for (&x, &y) in pm.map() {
        if rank(x, y).is_none() || !(a.contains(&x) || b.contains(&x)) {
            return false;
        }
    }
    !a.iter().any(|&x| b.iter().any(|&y| pm.partner_of(x) != Some(y) && prefers(x, y) && prefers(y, x)))
}

/// One period of a spot mechanism over participants `a` × `b`.
pub fn spot_run(
    mech: Mechanism,
    a: &[AgentId],
    b: &[AgentId],
    rols: &BTreeMap<AgentId, Rol>,
) -> Result<PeriodMatching> {
    let pm = match mech {
        Mechanism::DaA => deferred_acceptance(a, b, rols, Side::A),
        Mechanism::DaB => deferred_acceptance(a, b, rols, Side::B),
        Mechanism::Custom => partial_matchings(a, b)
            .into_iter()
            .map(|pairs| PeriodMatching::from_pairs(pairs).expect("partial matching"))
            .find(|pm| stable_for_reports(a, b, rols, pm))
            .ok_or_else(|| Error::MechanismContract("no matching is stable for the reports".into()))?,
    };
    if !stable_for_reports(a, b, rols, &pm) {
        return Err(Error::MechanismContract("spot mechanism output is not stable for the reports".into()));
    }
    Ok(pm)
}

/// Equilibrium play of a subgame: the on-path lists and pairs at the node, continuation play at
/// each child, and every available agent's payoff.
#[derive(Debug)]
struct Play {
    rols: BTreeMap<AgentId, Rol>,
    pairs: Vec<(AgentId, AgentId)>,
    children: Vec<Arc<Play>>,
    values: BTreeMap<AgentId, Q>,
}

impl Play {
    fn same_outcome(&self, other: &Play) -> bool {
        self.pairs == other.pairs && self.children.iter().zip(&other.children).all(|(x, y)| x.same_outcome(y))
    }
}

/// A pure equilibrium: its outcome and the on-path lists at every node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Equilibrium {
    pub outcome: Matching,
    pub profile: BTreeMap<NodeId, BTreeMap<AgentId, Rol>>,
}

/// Subgames are identified by node and the agents still available there.
type SubgameKey = (NodeId, Vec<AgentId>, Vec<AgentId>);

pub struct Game<'a> {
    e: &'a Economy,
    spec: GameSpec,
    memo: HashMap<SubgameKey, Arc<Vec<Arc<Play>>>>,
    profiles: u64,
}

/// Continuation choices after one period matching: for each combination of child equilibria,
/// every available agent's payoff.
struct Branch {
    plays: Vec<Vec<Arc<Play>>>,
    values: Vec<BTreeMap<AgentId, Q>>,
}

#[derive(Clone, Copy)]
enum Deviator {
    One(AgentId),
    Pair(AgentId, AgentId),
}

impl<'a> Game<'a> {
    pub fn new(e: &'a Economy, spec: GameSpec) -> Result<Self> {
        e.ensure_valid()?;
        if spec.variant == Variant::Gamma1 && spec.mechanism != Mechanism::DaA {
            return Err(Error::Unsupported("the first game uses side-A DA in every period".into()));
        }
        Ok(Game { e, spec, memo: HashMap::new(), profiles: 0 })
    }

    /// Strategy profiles examined so far.
    pub fn profiles_examined(&self) -> u64 {
        self.profiles
    }

    fn strategic(&self, k: AgentId) -> bool {
        self.spec.variant == Variant::Gamma2 || self.e.side(k) == Side::A
    }

    fn options(&self, k: AgentId, partners: &[AgentId]) -> Vec<Rol> {
        if !self.strategic(k) {
            return vec![PreferenceList { owner: k, ranking: true_ranking(self.e, k, partners) }];
        }
        if self.spec.full_rols {
            all_lists(k, partners)
        } else {
            truncations(self.e, k, partners)
        }
    }

    fn branch(&mut self, node: NodeId, a: &[AgentId], b: &[AgentId], pm: &PeriodMatching) -> Result<Option<Branch>> {
        let e = self.e;
        let left_a: Vec<AgentId> = a.iter().copied().filter(|k| !pm.is_matched(*k)).collect();
        let left_b: Vec<AgentId> = b.iter().copied().filter(|k| !pm.is_matched(*k)).collect();
        let mut child_sets = Vec::new();
        for &c in &e.node(node).children {
            let ev = &e.node(c).event;
            let mut ca = left_a.clone();
            ca.extend(&ev.a);
            ca.sort();
            let mut cb = left_b.clone();
            cb.extend(&ev.b);
            cb.sort();
            let set = self.solve(c, &ca, &cb)?;
            if set.is_empty() {
                return Ok(None);
            }
            child_sets.push(set);
        }
        let mut plays = Vec::new();
        let mut values = Vec::new();
        let mut idx = vec![0usize; child_sets.len()];
        loop {
            let combo: Vec<Arc<Play>> = idx.iter().zip(&child_sets).map(|(&i, s)| s[i].clone()).collect();
            let mut v = BTreeMap::new();
            for &k in a.iter().chain(b) {
                let x = match pm.partner_of(k) {
                    Some(p) => e.utility(k, p).clone(),
                    None => {
                        let mut total = Q::zero();
                        for (&c, play) in e.node(node).children.iter().zip(&combo) {
                            total += &e.node(c).prob * &play.values[&k];
                        }
                        e.delta(k) * total
                    }
                };
                v.insert(k, x);
            }
            plays.push(combo);
            values.push(v);
            let mut pos = idx.len();
            loop {
                if pos == 0 {
                    return Ok(Some(Branch { plays, values }));
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < child_sets[pos].len() {
                    break;
                }
                idx[pos] = 0;
            }
        }
    }

    /// Equilibrium plays of the subgame at `node` with available agents `a` × `b`, one per
    /// distinct outcome. Empty if some reachable subgame has no equilibrium.
    fn solve(&mut self, node: NodeId, a: &[AgentId], b: &[AgentId]) -> Result<Arc<Vec<Arc<Play>>>> {
        let key = (node, a.to_vec(), b.to_vec());
        if let Some(s) = self.memo.get(&key) {
            return Ok(s.clone());
        }
        let e = self.e;
        let agents: Vec<AgentId> = a.iter().chain(b).copied().collect();
        let options: Vec<Vec<Rol>> =
            agents.iter().map(|&k| self.options(k, if e.side(k) == Side::A { b } else { a })).collect();
        let count = options.iter().fold(1u128, |acc, o| acc.saturating_mul(o.len() as u128));
        if count.saturating_add(self.profiles as u128) > self.spec.limit as u128 {
            return Err(Error::GameTooLarge { profiles: count.to_string(), limit: self.spec.limit });
        }
        self.profiles += count as u64;

        // Outcome of every profile, with profiles indexed in mixed radix (last agent fastest).
        let radix: Vec<usize> = options.iter().map(|o| o.len()).collect();
        let decode = |mut i: usize| -> Vec<usize> {
            let mut out = vec![0; radix.len()];
            for j in (0..radix.len()).rev() {
                out[j] = i % radix[j];
                i /= radix[j];
            }
            out
        };
        let encode = |choice: &[usize]| choice.iter().zip(&radix).fold(0usize, |acc, (c, r)| acc * r + c);
        let rols_of = |choice: &[usize]| -> BTreeMap<AgentId, Rol> {
            agents.iter().zip(choice).zip(&options).map(|((&k, &c), o)| (k, o[c].clone())).collect()
        };
        let mut outcome_ids: HashMap<PeriodMatching, usize> = HashMap::new();
        let mut outcomes: Vec<PeriodMatching> = Vec::new();
        let mut profile_outcome = Vec::with_capacity(count as usize);
        for i in 0..count as usize {
            let pm = spot_run(self.spec.mechanism, a, b, &rols_of(&decode(i)))?;
            let id = *outcome_ids.entry(pm.clone()).or_insert_with(|| {
                outcomes.push(pm);
                outcomes.len() - 1
            });
            profile_outcome.push(id);
        }

        // Joint deviations in the second game may use lists naming only the partner.
        let mut extra_outcomes: HashMap<(usize, AgentId, usize, AgentId, usize), usize> = HashMap::new();
        let pairs: Vec<(usize, usize)> = if self.spec.variant == Variant::Gamma2 {
            let mut v = Vec::new();
            for (i, &x) in agents.iter().enumerate() {
                for (j, &y) in agents.iter().enumerate() {
                    if e.side(x) == Side::A && e.side(y) == Side::B {
                        v.push((i, j));
                    }
                }
            }
            v
        } else {
            Vec::new()
        };
        let mut pair_options: HashMap<(usize, usize), (Vec<Rol>, Vec<Rol>)> = HashMap::new();
        for &(i, j) in &pairs {
            let (x, y) = (agents[i], agents[j]);
            let mut ox = options[i].clone();
            let mut oy = options[j].clone();
            let only_y = PreferenceList { owner: x, ranking: vec![y] };
            let only_x = PreferenceList { owner: y, ranking: vec![x] };
            if !ox.contains(&only_y) {
                ox.push(only_y);
            }
            if !oy.contains(&only_x) {
                oy.push(only_x);
            }
            pair_options.insert((i, j), (ox, oy));
        }

        let mut branches: Vec<Option<Branch>> = Vec::new();
        for pm in outcomes.clone() {
            let br = self.branch(node, a, b, &pm)?;
            if br.is_none() {
                let empty = Arc::new(Vec::new());
                self.memo.insert(key, empty.clone());
                return Ok(empty);
            }
            branches.push(br);
        }

        let mut found: Vec<Arc<Play>> = Vec::new();
        for i in 0..count as usize {
            let choice = decode(i);
            let on = profile_outcome[i];
            // Deviations grouped by the outcome they lead to.
            let mut devs: BTreeMap<usize, Vec<Deviator>> = BTreeMap::new();
            for (j, &k) in agents.iter().enumerate() {
                if !self.strategic(k) {
                    continue;
                }
                for c in 0..radix[j] {
                    if c == choice[j] {
                        continue;
                    }
                    let mut alt = choice.clone();
                    alt[j] = c;
                    let o = profile_outcome[encode(&alt)];
                    if o != on {
                        devs.entry(o).or_default().push(Deviator::One(k));
                    }
                }
            }
            for &(p, q) in &pairs {
                let (ox, oy) = &pair_options[&(p, q)];
                for (cx, rx) in ox.iter().enumerate() {
                    for (cy, ry) in oy.iter().enumerate() {
                        if (cx < radix[p] && cx == choice[p]) || (cy < radix[q] && cy == choice[q]) {
                            continue;
                        }
                        let o = if cx < radix[p] && cy < radix[q] {
                            let mut alt = choice.clone();
                            alt[p] = cx;
                            alt[q] = cy;
                            profile_outcome[encode(&alt)]
                        } else {
                            let k = (i, agents[p], cx, agents[q], cy);
                            if let Some(o) = extra_outcomes.get(&k) {
                                *o
                            } else {
                                let mut rols = rols_of(&choice);
                                rols.insert(agents[p], rx.clone());
                                rols.insert(agents[q], ry.clone());
                                let pm = spot_run(self.spec.mechanism, a, b, &rols)?;
                                let o = match outcome_ids.get(&pm) {
                                    Some(o) => *o,
                                    None => {
                                        outcome_ids.insert(pm.clone(), outcomes.len());
                                        outcomes.push(pm.clone());
                                        let br = self.branch(node, a, b, &pm)?;
                                        if br.is_none() {
                                            let empty = Arc::new(Vec::new());
                                            self.memo.insert(key, empty.clone());
                                            return Ok(empty);
                                        }
                                        branches.push(br);
                                        outcomes.len() - 1
                                    }
                                };
                                extra_outcomes.insert(k, o);
                                o
                            }
                        };
                        if o != on {
                            devs.entry(o).or_default().push(Deviator::Pair(agents[p], agents[q]));
                        }
                    }
                }
            }

            let on_branch = branches[on].as_ref().expect("branch");
            for (ci, on_values) in on_branch.values.iter().enumerate() {
                let deterred = devs.iter().all(|(o, who)| {
                    let br = branches[*o].as_ref().expect("branch");
                    br.values.iter().any(|v| {
                        who.iter().all(|d| match *d {
                            Deviator::One(k) => v[&k] <= on_values[&k],
                            Deviator::Pair(x, y) => v[&x] <= on_values[&x] || v[&y] <= on_values[&y],
                        })
                    })
                });
                if !deterred {
                    continue;
                }
                let play = Play {
                    rols: rols_of(&choice),
                    pairs: outcomes[on].pairs(e),
                    children: on_branch.plays[ci].clone(),
                    values: on_values.clone(),
                };
                if !found.iter().any(|p| p.same_outcome(&play)) {
                    found.push(Arc::new(play));
                }
            }
        }
        let out = Arc::new(found);
        self.memo.insert(key, out.clone());
        Ok(out)
    }

    /// Pure equilibria (pairwise for the second game), one representative per distinct outcome,
    /// sorted by outcome.
    pub fn equilibria(&mut self) -> Result<Vec<Equilibrium>> {
        let e = self.e;
        let roots = e.node(NodeId::ROOT).children.clone();
        let mut sets = Vec::new();
        for &c in &roots {
            let ev = &e.node(c).event;
            let set = self.solve(c, &ev.a.clone(), &ev.b.clone())?;
            if set.is_empty() {
                return Ok(Vec::new());
            }
            sets.push(set);
        }
        let mut out = Vec::new();
        let mut idx = vec![0usize; sets.len()];
        loop {
            let mut eq = Equilibrium { outcome: Matching::undefined(), profile: BTreeMap::new() };
            for ((&c, set), &i) in roots.iter().zip(&sets).zip(&idx) {
                write_play(e, &mut eq, c, &set[i]);
            }
            out.push(eq);
            let mut pos = idx.len();
            loop {
                if pos == 0 {
                    out.sort_by(|x, y| x.outcome.cmp(&y.outcome));
                    return Ok(out);
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < sets[pos].len() {
                    break;
                }
                idx[pos] = 0;
            }
        }
    }
}

fn write_play(e: &Economy, eq: &mut Equilibrium, node: NodeId, play: &Play) {
    let mut pm = match e.node(node).parent {
        Some(p) if p != NodeId::ROOT => eq.outcome.at(p).clone(),
        _ => PeriodMatching::new(),
    };
    for &(x, y) in &play.pairs {
        pm.insert(x, y);
    }
    eq.outcome.set(node, pm);
    eq.profile.insert(node, play.rols.clone());
    for (&c, child) in e.node(node).children.iter().zip(&play.children) {
        write_play(e, eq, c, child);
    }
}

pub fn find_pure_spne(e: &Economy, spec: GameSpec) -> Result<Vec<Equilibrium>> {
    Game::new(e, spec)?.equilibria()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EquilibriumStabilityCheck {
    pub holds: bool,
    pub equilibria: Vec<Equilibrium>,
    /// Verdict per equilibrium, in the same order.
    pub stable: Vec<bool>,
    pub counterexample: Option<Matching>,
}

/// Whether every equilibrium outcome is side-A dynamically stable (first game) or dynamically
/// stable (second game).
pub fn check_equilibrium_stability(
    e: &Economy,
    spec: GameSpec,
    cache: &StableSetCache,
) -> Result<EquilibriumStabilityCheck> {
    let equilibria = find_pure_spne(e, spec)?;
    let solver = Solver::new(e, cache, DEFAULT_LIMIT)?;
    let mode = match spec.variant {
        Variant::Gamma1 => Mode::SIDE_A,
        Variant::Gamma2 => Mode::DYNAMIC,
    };
    let mut stable = Vec::new();
    for eq in &equilibria {
        stable.push(solver.verdict(&eq.outcome, mode)?.stable);
    }
    let counterexample = equilibria.iter().zip(&stable).find(|(_, s)| !**s).map(|(eq, _)| eq.outcome.clone());
    Ok(EquilibriumStabilityCheck { holds: counterexample.is_none(), equilibria, stable, counterexample })
}
