//! Command-line front end. Every command prints one JSON report on standard output.
//!
//! Exit codes: 0 stable or success, 1 unstable or witness found, 2 input error, 3 resource
//! limit.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use num_traits::ToPrimitive;
use serde_json::{json, Map, Value};

use crate::construct::{construct_mstar_with, dynamic_da};
use crate::dynamic::{ConjectureSet, DsVerdict, DsWitness, Mode, Solver, StableSetCache, DEFAULT_LIMIT};
use crate::error::{Error, Result};
use crate::io::{economy_from_json, matching_from_json, matching_value};
use crate::matching::{validate_matching, Matching};
use crate::model::{available_agents, AgentId, Economy, Side, Q};
use crate::stability::static_stable;
use crate::strategic::delay::{delay_incentive_witness, reevaluate, DelayCheck};
use crate::strategic::game::{Game, GameSpec, Mechanism, Variant, DEFAULT_GAME_LIMIT};

#[derive(Debug, Parser)]
#[command(name = "dynstab", version, about = "Stability analysis for dynamic two-sided matching markets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Cap on candidate evaluations (and on strategy profiles for games).
    #[arg(long, global = true, env = "DYNSTAB_LIMIT")]
    pub limit: Option<u64>,
    /// Worker threads for parallel solving.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Leave the timing field out of the report.
    #[arg(long, global = true)]
    pub no_timing: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check an economy file against the model's invariants.
    Validate { economy: PathBuf },
    /// List every dynamically stable matching.
    Enumerate {
        economy: PathBuf,
        /// Also report the set under the all-conjectures diagnostic.
        #[arg(long)]
        universal_blocking: bool,
    },
    /// Dynamic stability verdict for a matching, with a witness if unstable.
    Check {
        /// Economy and matching files, in either order.
        first: PathBuf,
        second: PathBuf,
        /// Check only side A's waiting condition, with side-A conjectures.
        #[arg(long, conflicts_with = "universal_blocking")]
        side_a: bool,
        /// Require every conjecture, not just some, to be weakly worse.
        #[arg(long)]
        universal_blocking: bool,
    },
    /// Period-by-period static stability among available agents.
    CheckStatic { first: PathBuf, second: PathBuf },
    /// Build a dynamically stable matching by truncated deferred acceptance.
    Construct { economy: PathBuf },
    /// One-shot DA across both periods of a deterministic two-period economy.
    DynamicDa {
        economy: PathBuf,
        #[arg(long, value_enum)]
        proposer: SideArg,
    },
    /// Pure equilibria of a sequential spot-mechanism game and their stability.
    Game {
        economy: PathBuf,
        #[arg(long, value_enum)]
        variant: VariantArg,
        #[arg(long, value_enum, default_value = "da-a")]
        mechanism: MechanismArg,
        /// Search all ordered lists instead of truncations (tiny instances only).
        #[arg(long)]
        full_rols: bool,
    },
    /// Look for an arriving agent who gains by reporting arrival one period late.
    DelayCheck { first: PathBuf, second: PathBuf },
    /// The set of matchings under the all-conjectures diagnostic.
    DiagUniversalBlocking { economy: PathBuf },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SideArg {
    A,
    B,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum VariantArg {
    Gamma1,
    Gamma2,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MechanismArg {
    DaA,
    DaB,
    Custom,
}

pub struct Outcome {
    pub code: i32,
    pub report: Value,
}

fn rat(x: &Q) -> Value {
    match (x.numer().to_i64(), x.denom().to_i64()) {
        (Some(n), Some(d)) => json!([n, d]),
        _ => json!(x.to_string()),
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn load_economy(path: &Path) -> Result<Economy> {
    let e = economy_from_json(&read(path)?)?;
    e.ensure_valid()?;
    Ok(e)
}

/// Economy and matching from two files given in either order.
fn load_pair(first: &Path, second: &Path) -> Result<(Economy, Matching)> {
    let (s1, s2) = (read(first)?, read(second)?);
    let is_economy = |s: &str| serde_json::from_str::<Value>(s).map(|v| v.get("horizon").is_some()).unwrap_or(false);
    let (es, ms) = if !is_economy(&s1) && is_economy(&s2) { (s2, s1) } else { (s1, s2) };
    let e = economy_from_json(&es)?;
    e.ensure_valid()?;
    let m = matching_from_json(&e, &ms)?;
    let v = validate_matching(&m, &e);
    if !v.is_ok() {
        return Err(Error::InvalidMatching(v.summary()));
    }
    Ok((e, m))
}

fn names(e: &Economy, ks: &[AgentId]) -> Value {
    json!(ks.iter().map(|k| e.label(*k)).collect::<Vec<_>>())
}

fn witness_json(e: &Economy, w: &DsWitness) -> Value {
    match w {
        DsWitness::BlockingPair { node, a, b, u_ab, payoff_a, v_ab, payoff_b } => json!({
            "node": e.path(*node),
            "condition": "DS1",
            "agents": [a, b],
            "names": names(e, &[*a, *b]),
            "utility_a": rat(u_ab),
            "payoff_a": rat(payoff_a),
            "utility_b": rat(v_ab),
            "payoff_b": rat(payoff_b),
        }),
        DsWitness::ProfitableWait { node, agent, condition, payoff, conjecture } => {
            let mut o = json!({
                "node": e.path(*node),
                "condition": condition,
                "agents": [agent],
                "names": names(e, &[*agent]),
                "payoff": rat(payoff),
            });
            if let Some((m, v)) = conjecture {
                o["conjecture"] = matching_value(e, m);
                o["conjecture_payoff"] = rat(v);
            }
            o
        }
    }
}

fn verdict_json(e: &Economy, v: &DsVerdict) -> Value {
    json!({
        "stable": v.stable,
        "witness": v.witness.as_ref().map(|w| witness_json(e, w)),
    })
}

fn stats(cache: &StableSetCache, solver: &Solver) -> Value {
    let s = cache.stats();
    json!({ "cache_hits": s.hits, "cache_misses": s.misses, "cache_entries": s.entries, "candidates": solver.work() })
}

fn matchings_json(e: &Economy, ms: &[Matching]) -> Value {
    json!(ms.iter().map(|m| matching_value(e, m)).collect::<Vec<_>>())
}

pub fn conjecture_json(e: &Economy, set: &ConjectureSet) -> Value {
    json!({ "agent": set.agent, "node": e.path(set.node), "members": matchings_json(e, &set.members) })
}

fn execute(cli: &Cli) -> Result<Outcome> {
    let limit = cli.limit.unwrap_or(DEFAULT_LIMIT);
    let cache = StableSetCache::new();
    let ok = |report: Value| Ok(Outcome { code: 0, report });
    match &cli.command {
        Command::Validate { economy } => {
            let e = economy_from_json(&read(economy)?)?;
            let v = e.validation();
            Ok(Outcome {
                code: if v.is_ok() { 0 } else { 1 },
                report: json!({ "valid": v.is_ok(), "violations": v.violations }),
            })
        }
        Command::Enumerate { economy, universal_blocking } => {
            let e = load_economy(economy)?;
            let solver = Solver::new(&e, &cache, limit)?;
            let set = solver.stable_set(Mode::DYNAMIC)?;
            let mut report = json!({ "count": set.len(), "matchings": matchings_json(&e, &set) });
            if *universal_blocking {
                let u = solver.stable_set(Mode::UNIVERSAL)?;
                report["universal_blocking"] = json!({ "count": u.len(), "matchings": matchings_json(&e, &u) });
            }
            report["stats"] = stats(&cache, &solver);
            Ok(Outcome { code: if set.is_empty() { 1 } else { 0 }, report })
        }
        Command::Check { first, second, side_a, universal_blocking } => {
            let (e, m) = load_pair(first, second)?;
            let solver = Solver::new(&e, &cache, limit)?;
            let mode = if *side_a {
                Mode::SIDE_A
            } else if *universal_blocking {
                Mode::UNIVERSAL
            } else {
                Mode::DYNAMIC
            };
            let v = solver.verdict(&m, mode)?;
            let mut report = verdict_json(&e, &v);
            report["concept"] = json!(mode.concept);
            report["stats"] = stats(&cache, &solver);
            Ok(Outcome { code: if v.stable { 0 } else { 1 }, report })
        }
        Command::CheckStatic { first, second } => {
            let (e, m) = load_pair(first, second)?;
            let mut nodes = Vec::new();
            let mut all = true;
            for n in e.period_nodes() {
                let (a, b) = available_agents(&e, &m, n)?;
                let v = static_stable(&e, m.at(n), &a, &b);
                all &= v.stable;
                nodes.push(json!({
                    "node": e.path(n),
                    "stable": v.stable,
                    "witness": v.witness.map(|w| json!({ "kind": w.kind, "agents": w.agents, "names": names(&e, &w.agents) })),
                }));
            }
            Ok(Outcome { code: if all { 0 } else { 1 }, report: json!({ "stable": all, "nodes": nodes }) })
        }
        Command::Construct { economy } => {
            let e = load_economy(economy)?;
            let solver = Solver::new(&e, &cache, limit)?;
            let m = construct_mstar_with(&solver)?;
            let v = solver.verdict(&m, Mode::DYNAMIC)?;
            ok(
                json!({ "matching": matching_value(&e, &m), "verdict": verdict_json(&e, &v), "stats": stats(&cache, &solver) }),
            )
        }
        Command::DynamicDa { economy, proposer } => {
            let e = load_economy(economy)?;
            let side = match proposer {
                SideArg::A => Side::A,
                SideArg::B => Side::B,
            };
            let m = dynamic_da(&e, side)?;
            ok(json!({ "proposer": side, "matching": matching_value(&e, &m) }))
        }
        Command::Game { economy, variant, mechanism, full_rols } => {
            let e = load_economy(economy)?;
            let mut spec = GameSpec::new(
                match variant {
                    VariantArg::Gamma1 => Variant::Gamma1,
                    VariantArg::Gamma2 => Variant::Gamma2,
                },
                match mechanism {
                    MechanismArg::DaA => Mechanism::DaA,
                    MechanismArg::DaB => Mechanism::DaB,
                    MechanismArg::Custom => Mechanism::Custom,
                },
            );
            spec.full_rols = *full_rols;
            spec.limit = cli.limit.unwrap_or(DEFAULT_GAME_LIMIT);
            let mut game = Game::new(&e, spec)?;
            let eqs = game.equilibria()?;
            let solver = Solver::new(&e, &cache, limit)?;
            let mode = if spec.variant == Variant::Gamma1 { Mode::SIDE_A } else { Mode::DYNAMIC };
            let mut holds = true;
            let mut list = Vec::new();
            for eq in &eqs {
                let v = solver.verdict(&eq.outcome, mode)?;
                holds &= v.stable;
                let profile: Map<String, Value> = eq
                    .profile
                    .iter()
                    .map(|(n, rols)| {
                        let lists: Map<String, Value> =
                            rols.iter().map(|(k, r)| (k.to_string(), json!(r.ranking))).collect();
                        (e.path(*n), Value::Object(lists))
                    })
                    .collect();
                list.push(json!({ "outcome": matching_value(&e, &eq.outcome), "profile": profile, "verdict": verdict_json(&e, &v) }));
            }
            Ok(Outcome {
                code: if holds { 0 } else { 1 },
                report: json!({
                    "variant": spec.variant,
                    "mechanism": spec.mechanism,
                    "equilibria": list,
                    "all_outcomes_stable": holds,
                    "profiles_examined": game.profiles_examined(),
                }),
            })
        }
        Command::DelayCheck { first, second } => {
            let (e, m) = load_pair(first, second)?;
            match delay_incentive_witness(&m, &e, &cache)? {
                DelayCheck::Witness(w) => {
                    let check = reevaluate(&e, &m, &w)?;
                    Ok(Outcome {
                        code: 1,
                        report: json!({
                            "witness": {
                                "period": w.period,
                                "node": e.path(w.node),
                                "agent": w.agent,
                                "name": e.label(w.agent),
                                "stay": rat(&w.stay),
                                "delay": rat(&w.delay),
                                "gain": rat(&w.gain),
                                "reroute": e.path(w.reroute),
                                "reevaluated_delay": rat(&check),
                            }
                        }),
                    })
                }
                DelayCheck::Rejected(p) => ok(json!({ "witness": null, "precondition_failed": p })),
                DelayCheck::NoWitness => ok(json!({ "witness": null })),
            }
        }
        Command::DiagUniversalBlocking { economy } => {
            let e = load_economy(economy)?;
            let solver = Solver::new(&e, &cache, limit)?;
            let set = solver.stable_set(Mode::UNIVERSAL)?;
            ok(json!({ "count": set.len(), "matchings": matchings_json(&e, &set), "stats": stats(&cache, &solver) }))
        }
    }
}

fn verb(c: &Command) -> &'static str {
    match c {
        Command::Validate { .. } => "validate",
        Command::Enumerate { .. } => "enumerate",
        Command::Check { .. } => "check",
        Command::CheckStatic { .. } => "check-static",
        Command::Construct { .. } => "construct",
        Command::DynamicDa { .. } => "dynamic-da",
        Command::Game { .. } => "game",
        Command::DelayCheck { .. } => "delay-check",
        Command::DiagUniversalBlocking { .. } => "diag-universal-blocking",
    }
}

/// Run a parsed command; never panics on bad input.
pub fn run(cli: &Cli) -> Outcome {
    if let Some(n) = cli.threads {
        // Only the first call in a process can size the global pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let start = Instant::now();
    let mut out = match execute(cli) {
        Ok(o) => o,
        Err(err) => {
            Outcome { code: if err.is_resource_limit() { 3 } else { 2 }, report: json!({ "error": err.to_string() }) }
        }
    };
    let mut report = Map::new();
    report.insert("command".into(), json!(verb(&cli.command)));
    if let Value::Object(fields) = std::mem::take(&mut out.report) {
        report.extend(fields);
    }
    if !cli.no_timing {
        report.insert("elapsed_ms".into(), json!(start.elapsed().as_millis() as u64));
    }
    out.report = Value::Object(report);
    out
}
