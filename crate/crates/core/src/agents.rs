//! Agent best responses and the principal–agent interaction simulator.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::{Acceptance, CostShares, Mechanism, SharedBranch};
use crate::model::{cap_value, CapValues, Instance, Marginal, ModelKind, OutcomeSpace, Profile, TOL};
use crate::set_systems::mask_to_set;
use crate::solvers::threshold_strategy_run;
use crate::stats::{expect_over_profiles, rng_for, EvalMode, Estimate};

/// Guard on the number of DP states, `Π (cells_i + 1)`.
pub const BEST_RESPONSE_LIMIT: f64 = 2e7;

/// Largest candidate set enumerated exactly by the maximal-set agents.
pub const MAXIMAL_SET_LIMIT: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    ExactDp,
    WeitzmanIndex,
    AdversarialMaximal,
    FavorPrincipalMaximal,
    PrescribedThreshold,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    FavorPrincipal,
    AgainstPrincipal,
    LowestId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentPolicy {
    pub kind: AgentKind,
    pub tie: TieBreak,
}

impl AgentPolicy {
    pub fn new(kind: AgentKind) -> Self {
        AgentPolicy { kind, tie: TieBreak::FavorPrincipal }
    }
}

/// The agent each constructor's guarantee is evaluated against.
pub fn default_agent(inst: &Instance, mech: &Mechanism) -> AgentPolicy {
    let dp_fits = compressed_cells(inst, mech).iter().map(|c| c.len() as f64 + 1.0).product::<f64>() <= BEST_RESPONSE_LIMIT;
    let fallback = if dp_fits { AgentKind::ExactDp } else { AgentKind::WeitzmanIndex };
    let kind = match inst.model.kind {
        ModelKind::FreeAgent => AgentKind::AdversarialMaximal,
        ModelKind::SharedCost if mech.branch == Some(SharedBranch::ZeroSurplus) => AgentKind::PrescribedThreshold,
        _ => fallback,
    };
    AgentPolicy::new(kind)
}

/// A merged outcome cell as the players see it.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Cell {
    prob: f64,
    accepted: bool,
    x: f64,
    y: f64,
}

/// Cells of the mechanism's outcome space merged when indistinguishable to
/// both players: rejected cells collapse, and elements outside the
/// whitelist have a single cell.
struct Compressed {
    space: OutcomeSpace,
    cells: Vec<Vec<Cell>>,
    map: Vec<Vec<usize>>,
}

fn compressed_cells(inst: &Instance, mech: &Mechanism) -> Vec<Vec<Cell>> {
    compress(inst, mech).cells
}

fn compress(inst: &Instance, mech: &Mechanism) -> Compressed {
    let space = mech.outcome_space(inst);
    let mut cells = Vec::with_capacity(inst.n());
    let mut map = Vec::with_capacity(inst.n());
    for (i, list) in space.per_element.iter().enumerate() {
        let mut merged: Vec<Cell> = Vec::new();
        let mut idx = Vec::with_capacity(list.len());
        for o in list {
            let accepted = mech.accepts_outcome(inst, i, o.atom, o.tag());
            let atom = inst.atom(i, o.atom);
            let cell = if accepted {
                Cell { prob: o.prob, accepted, x: atom.x, y: atom.y }
            } else {
                Cell { prob: o.prob, accepted, x: 0.0, y: 0.0 }
            };
            match merged.iter().position(|c| c.accepted == cell.accepted && c.x == cell.x && c.y == cell.y) {
                Some(k) => {
                    merged[k].prob += cell.prob;
                    idx.push(k);
                }
                None => {
                    idx.push(merged.len());
                    merged.push(cell);
                }
            }
        }
        cells.push(merged);
        map.push(idx);
    }
    Compressed { space, cells, map }
}

const STOP: usize = usize::MAX;

#[derive(Clone, Copy, Debug)]
struct Node {
    agent: f64,
    principal: f64,
    action: usize,
}

/// Agent best response computed exactly, with the induced values of both
/// players and a memo that replays the strategy on any profile.
pub struct DpSolution {
    pub agent_value: f64,
    pub principal_value: f64,
    comp: Compressed,
    place: Vec<u64>,
    memo: HashMap<u64, Node>,
    tie: TieBreak,
}

struct DpCtx<'a> {
    mech: &'a Mechanism,
    cells: &'a [Vec<Cell>],
    shares: &'a CostShares,
    place: &'a [u64],
    tie: TieBreak,
    memo: HashMap<u64, Node>,
}

/// Best proposal among probed accepted cells: maximal agent value, ties by
/// the tie-break rule. Returns (set, agent value, principal value).
fn best_proposal(
    mech: &Mechanism,
    cells: &[Vec<Cell>],
    digits: &[usize],
    tie: TieBreak,
) -> (Vec<usize>, f64, f64) {
    let open: Vec<usize> = (0..digits.len()).filter(|&i| digits[i] > 0 && cells[i][digits[i] - 1].accepted).collect();
    let mut best = (Vec::new(), 0.0, 0.0);
    if open.is_empty() {
        return best;
    }
    for mask in 1..1u64 << open.len() {
        let set: Vec<usize> = mask_to_set(mask).into_iter().map(|b| open[b]).collect();
        if !mech.sub_family.contains(&set) {
            continue;
        }
        let y: f64 = set.iter().map(|&i| cells[i][digits[i] - 1].y).sum();
        let x: f64 = set.iter().map(|&i| cells[i][digits[i] - 1].x).sum();
        let better = if y > best.1 + TOL {
            true
        } else if y >= best.1 - TOL {
            match tie {
                TieBreak::FavorPrincipal => x > best.2 + TOL,
                TieBreak::AgainstPrincipal => x < best.2 - TOL,
                TieBreak::LowestId => false,
            }
        } else {
            false
        };
        if better {
            best = (set, y, x);
        }
    }
    best
}

impl DpCtx<'_> {
    fn solve(&mut self, digits: &mut [usize], key: u64) -> Node {
        if let Some(&node) = self.memo.get(&key) {
            return node;
        }
        let (_, sy, sx) = best_proposal(self.mech, self.cells, digits, self.tie);
        let mut options = vec![Node { agent: sy, principal: sx, action: STOP }];
        for i in 0..digits.len() {
            if digits[i] != 0 {
                continue;
            }
            let mut agent = -self.shares.agent[i];
            let mut principal = -self.shares.principal[i];
            for c in 0..self.cells[i].len() {
                digits[i] = c + 1;
                let child = self.solve(digits, key + (c as u64 + 1) * self.place[i]);
                agent += self.cells[i][c].prob * child.agent;
                principal += self.cells[i][c].prob * child.principal;
            }
            digits[i] = 0;
            options.push(Node { agent, principal, action: i });
        }
        let top = options.iter().map(|o| o.agent).fold(f64::NEG_INFINITY, f64::max);
        let mut pick = options[0];
        let mut first = true;
        for o in options.into_iter().filter(|o| o.agent >= top - TOL) {
            let better = first
                || match self.tie {
                    TieBreak::FavorPrincipal => o.principal > pick.principal + TOL,
                    TieBreak::AgainstPrincipal => o.principal < pick.principal - TOL,
                    TieBreak::LowestId => false,
                };
            if better {
                pick = o;
                first = false;
            }
        }
        self.memo.insert(key, pick);
        pick
    }
}

/// Exact agent best response by memoized search over probed sets and
/// realized cells. Sunk costs never enter a decision.
pub fn best_response_dp(inst: &Instance, mech: &Mechanism, tie: TieBreak) -> Result<DpSolution> {
    mech.check(inst)?;
    let comp = compress(inst, mech);
    let size: f64 = comp.cells.iter().map(|c| c.len() as f64 + 1.0).product();
    if size > BEST_RESPONSE_LIMIT {
        return Err(Error::TooLarge { what: "agent best-response DP", size, limit: BEST_RESPONSE_LIMIT });
    }
    let n = inst.n();
    let mut place = vec![1u64; n];
    for i in 1..n {
        place[i] = place[i - 1] * (comp.cells[i - 1].len() as u64 + 1);
    }
    let shares = mech.cost_shares(inst);
    let mut ctx = DpCtx { mech, cells: &comp.cells, shares: &shares, place: &place, tie, memo: HashMap::new() };
    let root = ctx.solve(&mut vec![0; n], 0);
    let memo = ctx.memo;
    Ok(DpSolution { agent_value: root.agent, principal_value: root.principal, comp, place, memo, tie })
}

impl DpSolution {
    /// Replays the strategy: (probed in order, proposal).
    pub fn play(&self, mech: &Mechanism, profile: &Profile) -> (Vec<usize>, Vec<usize>) {
        let n = self.place.len();
        let mut digits = vec![0usize; n];
        let mut key = 0u64;
        let mut probed = Vec::new();
        loop {
            let node = self.memo[&key];
            if node.action == STOP {
                let (set, _, _) = best_proposal(mech, &self.comp.cells, &digits, self.tie);
                return (probed, set);
            }
            let i = node.action;
            let cell = self.comp.map[i][self.comp.space.locate(i, profile.atom[i], profile.tag[i])];
            digits[i] = cell + 1;
            key += (cell as u64 + 1) * self.place[i];
            probed.push(i);
        }
    }
}

/// Law of the agent's effective value `y · 1{accepted}` for element `i`.
fn effective_law(inst: &Instance, mech: &Mechanism, i: usize) -> Marginal {
    let atoms = inst.elements[i].atoms.atoms();
    Marginal::from_pairs(atoms.iter().enumerate().flat_map(|(a, atom)| {
        let acc = mech.accept_prob(inst, i, a);
        [(atom.y, atom.p * acc), (0.0, atom.p * (1.0 - acc))]
    }))
}

/// Agent caps on effective values at the agent's cost share; `None` when
/// probing can never pay off. Elements whose every outcome is accepted at
/// full cost reuse the precomputed agent cap.
pub fn agent_caps(inst: &Instance, mech: &Mechanism, shares: &CostShares) -> Vec<Option<f64>> {
    let full = CapValues::compute(inst).ok();
    (0..inst.n())
        .map(|i| {
            if !mech.whitelist[i] {
                return None;
            }
            let e = &inst.elements[i];
            let open = (0..e.atoms.len()).all(|a| mech.accept_prob(inst, i, a) == 1.0);
            let cap = match &full {
                Some(c) if open && shares.agent[i] == e.cost => Some(c.tau_y[i]),
                _ => cap_value(&effective_law(inst, mech, i), shares.agent[i]).ok(),
            };
            cap.filter(|&t| t > 0.0)
        })
        .collect()
}

/// Index policy on the agent's effective values: lazy greedy over the
/// whitelist and the sub-family, caps from the agent's cost share.
pub fn weitzman_index_agent(
    inst: &Instance,
    mech: &Mechanism,
    caps: &[Option<f64>],
    profile: &Profile,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !mech.sub_family.is_matroid() {
        return Err(Error::NotPandoraShaped);
    }
    let n = inst.n();
    let value = |i: usize| {
        if mech.accepts_outcome(inst, i, profile.atom[i], profile.tag[i]) {
            profile.y(inst, i)
        } else {
            0.0
        }
    };
    let mut probed = vec![false; n];
    let mut order = Vec::new();
    let mut selected: Vec<usize> = Vec::new();
    loop {
        let mut best: Option<(f64, usize, bool)> = None;
        for i in 0..n {
            if selected.contains(&i) {
                continue;
            }
            let (v, is_probe) = match (probed[i], caps[i]) {
                (true, Some(t)) => (value(i).min(t), false),
                (false, Some(t)) => (t, true),
                _ => continue,
            };
            if v <= 0.0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((bv, _, bp)) => v > bv || (v == bv && !is_probe && bp),
            };
            if better {
                selected.push(i);
                let ok = mech.sub_family.contains(&selected);
                selected.pop();
                if ok {
                    best = Some((v, i, is_probe));
                }
            }
        }
        match best {
            None => break,
            Some((_, i, true)) => {
                probed[i] = true;
                order.push(i);
            }
            Some((_, i, false)) => selected.push(i),
        }
    }
    selected.sort_unstable();
    Ok((order, selected))
}

/// Free agent that probes the whole whitelist and proposes the maximal
/// acceptable set that is worst (or best) for the principal. Beyond
/// [`MAXIMAL_SET_LIMIT`] candidates a greedy completion is used and flagged.
pub fn worst_case_free_agent(
    inst: &Instance,
    mech: &Mechanism,
    profile: &Profile,
    minimize: bool,
) -> (Vec<usize>, Vec<usize>, bool) {
    let probed: Vec<usize> = (0..inst.n()).filter(|&i| mech.whitelist[i]).collect();
    let open: Vec<usize> =
        probed.iter().copied().filter(|&i| mech.accepts_outcome(inst, i, profile.atom[i], profile.tag[i])).collect();
    let x = |i: usize| profile.x(inst, i);
    if open.len() > MAXIMAL_SET_LIMIT {
        let mut order = open.clone();
        order.sort_by(|&a, &b| {
            let c = x(a).total_cmp(&x(b));
            (if minimize { c } else { c.reverse() }).then(a.cmp(&b))
        });
        let mut set = Vec::new();
        for i in order {
            set.push(i);
            if !mech.sub_family.contains(&set) {
                set.pop();
            }
        }
        set.sort_unstable();
        return (probed, set, true);
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 0..1u64 << open.len() {
        let set: Vec<usize> = mask_to_set(mask).into_iter().map(|b| open[b]).collect();
        if !mech.sub_family.contains(&set) {
            continue;
        }
        let maximal = open.iter().filter(|i| !set.contains(i)).all(|&j| {
            let mut bigger = set.clone();
            bigger.push(j);
            !mech.sub_family.contains(&bigger)
        });
        if !maximal {
            continue;
        }
        let v: f64 = set.iter().map(|&i| x(i)).sum();
        let better = best.as_ref().is_none_or(|(bv, _)| if minimize { v < *bv - TOL } else { v > *bv + TOL });
        if better {
            best = Some((v, set));
        }
    }
    (probed, best.map(|b| b.1).unwrap_or_default(), false)
}

#[derive(Clone, Debug, Serialize)]
pub struct Trace {
    pub atoms: Vec<usize>,
    pub tags: Vec<f64>,
    pub probed: Vec<usize>,
    pub proposal: Vec<usize>,
    pub accepted: bool,
    pub principal: f64,
    pub agent: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct InteractionReport {
    pub del: Estimate,
    pub agent_utility: Estimate,
    /// Set when a heuristic adversary replaced exact enumeration.
    pub heuristic: bool,
    pub traces: Vec<Trace>,
}

/// Utilities of one play.
fn settle(inst: &Instance, mech: &Mechanism, shares: &CostShares, profile: &Profile, probed: &[usize], proposal: &[usize]) -> (bool, f64, f64) {
    let accepted = mech.accepts(inst, proposal, profile);
    let (mut principal, mut agent) = (0.0, 0.0);
    if accepted {
        for &i in proposal {
            principal += profile.x(inst, i);
            agent += profile.y(inst, i);
        }
    }
    for &i in probed {
        principal -= shares.principal[i];
        agent -= shares.agent[i];
    }
    (accepted, principal, agent)
}

enum Player<'a> {
    Dp(DpSolution),
    Index(Vec<Option<f64>>),
    Maximal { minimize: bool },
    Threshold { caps: CapValues, family: crate::ocrs::GreedyFamily, order: Vec<usize>, costs: &'a [f64] },
}

impl Player<'_> {
    fn play(&self, inst: &Instance, mech: &Mechanism, profile: &Profile) -> Result<(Vec<usize>, Vec<usize>, bool)> {
        Ok(match self {
            Player::Dp(sol) => {
                let (p, s) = sol.play(mech, profile);
                (p, s, false)
            }
            Player::Index(caps) => {
                let (p, s) = weitzman_index_agent(inst, mech, caps, profile)?;
                (p, s, false)
            }
            Player::Maximal { minimize } => worst_case_free_agent(inst, mech, profile, *minimize),
            Player::Threshold { caps, family, order, costs } => {
                let run = threshold_strategy_run(inst, caps, family, order, profile, costs);
                (run.probed, run.selected, false)
            }
        })
    }
}

/// Expected principal utility (delegated value) and agent utility for a
/// mechanism and agent, exactly or by sampling; records up to `trace_limit`
/// plays.
pub fn simulate_interaction(
    inst: &Instance,
    mech: &Mechanism,
    agent: AgentPolicy,
    mode: EvalMode,
    trace_limit: usize,
) -> Result<InteractionReport> {
    mech.check(inst)?;
    let shares = mech.cost_shares(inst);
    let player = match agent.kind {
        AgentKind::ExactDp => Player::Dp(best_response_dp(inst, mech, agent.tie)?),
        AgentKind::WeitzmanIndex => {
            if !mech.sub_family.is_matroid() {
                return Err(Error::NotPandoraShaped);
            }
            Player::Index(agent_caps(inst, mech, &shares))
        }
        AgentKind::AdversarialMaximal | AgentKind::FavorPrincipalMaximal => {
            let zero_surplus = mech.branch == Some(SharedBranch::ZeroSurplus);
            if inst.model.kind != ModelKind::FreeAgent && !zero_surplus {
                return Err(Error::ModelMismatch { expected: "free_agent".into(), found: inst.model.kind.name().into() });
            }
            Player::Maximal { minimize: agent.kind == AgentKind::AdversarialMaximal }
        }
        AgentKind::PrescribedThreshold => {
            let family = mech.family().ok_or(Error::NotPandoraShaped)?;
            let Acceptance::Threshold { value_cap, .. } = &mech.acceptance else { unreachable!() };
            let caps = CapValues { tau_x: value_cap.clone(), tau_y: value_cap.clone() };
            Player::Threshold { caps, family, order: (0..inst.n()).collect(), costs: &shares.principal }
        }
    };

    let space = mech.outcome_space(inst);
    let (del, agent_utility, heuristic) = match (&player, mode) {
        (Player::Dp(sol), _) => (Estimate::exact(sol.principal_value), Estimate::exact(sol.agent_value), false),
        _ => {
            let est = expect_over_profiles(inst, &space, mode, 3, |profile, _, out| {
                match player.play(inst, mech, profile) {
                    Ok((probed, proposal, flag)) => {
                        let (_, p, a) = settle(inst, mech, &shares, profile, &probed, &proposal);
                        out[0] = p;
                        out[1] = a;
                        out[2] = f64::from(u8::from(flag));
                    }
                    Err(_) => out.fill(f64::NAN),
                }
            })?;
            if est[0].mean.is_nan() {
                return Err(Error::NotPandoraShaped);
            }
            (est[0], est[1], est[2].mean > 0.0)
        }
    };

    let mut traces = Vec::new();
    if trace_limit > 0 {
        let mut profile = space.empty_profile();
        let mut digits = vec![0; space.n()];
        let mut rng = rng_for(match mode { EvalMode::Sampled { seed, .. } => seed, EvalMode::Exact => 0 }, u64::MAX);
        let total = space.size();
        for t in 0..trace_limit {
            match mode {
                EvalMode::Exact => {
                    if t as f64 >= total {
                        break;
                    }
                    space.fill(t as u64, &mut profile, &mut digits);
                }
                EvalMode::Sampled { .. } => crate::model::sample_into(inst, &mut rng, &mut profile),
            }
            let (probed, proposal, _) = player.play(inst, mech, &profile)?;
            let (accepted, principal, agent) = settle(inst, mech, &shares, &profile, &probed, &proposal);
            traces.push(Trace {
                atoms: profile.atom.clone(),
                tags: profile.tag.clone(),
                probed,
                proposal,
                accepted,
                principal,
                agent,
            });
        }
    }
    Ok(InteractionReport { del, agent_utility, heuristic, traces })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::pattern_mechanism;
    use crate::model::{Atom, Element, JointDistribution, UtilityModel};
    use crate::set_systems::Constraint;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn element(cost: f64, atoms: &[(f64, f64, f64)]) -> Element {
        Element { cost, atoms: JointDistribution::new(atoms.iter().map(|&(x, y, p)| Atom { x, y, p }).collect()).unwrap() }
    }

    fn open_pattern(inst: &Instance) -> Mechanism {
        pattern_mechanism(inst, inst.elements.iter().map(|e| vec![true; e.atoms.len()]).collect(), None)
    }

    #[test]
    fn single_element_probe_decision() {
        let inst = Instance::new(
            vec![element(0.5, &[(2.0, 1.0, 0.5), (0.0, 3.0, 0.5)])],
            Constraint::KUniform { k: 1 },
            UtilityModel::new(ModelKind::Standard),
        );
        let sol = best_response_dp(&inst, &open_pattern(&inst), TieBreak::FavorPrincipal).unwrap();
        assert!((sol.agent_value - 1.5).abs() < 1e-12);
        assert!((sol.principal_value - 0.5).abs() < 1e-12);

        // only the low-y atom is accepted: 0.5 * 1 = 0.5 does not beat the cost strictly
        let mech = pattern_mechanism(&inst, vec![vec![true, false]], None);
        let sol = best_response_dp(&inst, &mech, TieBreak::FavorPrincipal).unwrap();
        assert_eq!(sol.agent_value, 0.0);
        // the indifferent agent probes because that favors the principal: 0.5*2 - 0.5
        assert!((sol.principal_value - 0.5).abs() < 1e-12);
        let sol = best_response_dp(&inst, &mech, TieBreak::AgainstPrincipal).unwrap();
        assert_eq!(sol.principal_value, 0.0);
    }

    #[test]
    fn reject_all_yields_nothing() {
        let inst = Instance::new(
            vec![element(0.1, &[(2.0, 1.0, 0.5), (0.0, 3.0, 0.5)]); 3],
            Constraint::KUniform { k: 1 },
            UtilityModel::new(ModelKind::Standard),
        );
        let mech = pattern_mechanism(&inst, vec![vec![false, false]; 3], None);
        let r = simulate_interaction(&inst, &mech, AgentPolicy::new(AgentKind::ExactDp), EvalMode::Exact, 0).unwrap();
        assert_eq!((r.del.mean, r.agent_utility.mean), (0.0, 0.0));
        let mut free = inst.clone();
        free.model = UtilityModel::new(ModelKind::FreeAgent);
        let r = simulate_interaction(&free, &mech, AgentPolicy::new(AgentKind::AdversarialMaximal), EvalMode::Exact, 0).unwrap();
        assert_eq!(r.del.mean, 0.0);
    }

    #[test]
    fn adversary_proposes_lowest_value() {
        let inst = Instance::new(
            vec![element(0.1, &[(5.0, 1.0, 1.0)]), element(0.1, &[(1.0, 1.0, 1.0)])],
            Constraint::KUniform { k: 1 },
            UtilityModel::new(ModelKind::FreeAgent),
        );
        let mech = open_pattern(&inst);
        let pr = Profile { atom: vec![0, 0], tag: vec![0.5, 0.5] };
        let (probed, proposal, heuristic) = worst_case_free_agent(&inst, &mech, &pr, true);
        assert_eq!((probed, proposal, heuristic), (vec![0, 1], vec![1], false));
        let (_, proposal, _) = worst_case_free_agent(&inst, &mech, &pr, false);
        assert_eq!(proposal, vec![0]);
        let r = simulate_interaction(&inst, &mech, AgentPolicy::new(AgentKind::AdversarialMaximal), EvalMode::Exact, 0).unwrap();
        assert!((r.del.mean - 0.8).abs() < 1e-12);
    }

    fn random_instance(rng: &mut crate::stats::Rng, n: usize, kind: ModelKind) -> Instance {
        let elements = (0..n)
            .map(|_| {
                let k = rng.gen_range(1..=3);
                let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
                let total: f64 = raw.iter().sum();
                let atoms: Vec<(f64, f64, f64)> = raw
                    .iter()
                    .map(|w| (f64::from(rng.gen_range(0..9u8)), f64::from(rng.gen_range(0..9u8)), w / total))
                    .collect();
                let e = element(0.0, &atoms);
                let cost = 0.6 * rng.gen::<f64>() * e.atoms.mean_x().min(e.atoms.mean_y());
                Element { cost, ..e }
            })
            .collect();
        Instance::new(elements, Constraint::KUniform { k: 1 }, UtilityModel::new(kind))
    }

    fn random_pattern(rng: &mut crate::stats::Rng, inst: &Instance) -> Mechanism {
        let accept = inst.elements.iter().map(|e| (0..e.atoms.len()).map(|_| rng.gen_bool(0.7)).collect()).collect();
        pattern_mechanism(inst, accept, None)
    }

    /// Agent optimum by plain recursion over the uncompressed outcome space.
    fn naive_agent_value(inst: &Instance, mech: &Mechanism, state: &mut Vec<Option<usize>>) -> f64 {
        let space = mech.outcome_space(inst);
        let shares = mech.cost_shares(inst);
        fn go(inst: &Instance, mech: &Mechanism, space: &OutcomeSpace, agent_cost: &[f64], state: &mut Vec<Option<usize>>) -> f64 {
            let n = inst.n();
            let mut stop: f64 = 0.0;
            for mask in 1..1u64 << n {
                let set = mask_to_set(mask);
                if set.iter().any(|&i| state[i].is_none()) {
                    continue;
                }
                let profile = Profile {
                    atom: (0..n).map(|i| state[i].map_or(0, |o| space.per_element[i][o].atom)).collect(),
                    tag: (0..n).map(|i| state[i].map_or(0.0, |o| space.per_element[i][o].tag())).collect(),
                };
                if mech.accepts(inst, &set, &profile) {
                    stop = stop.max(set.iter().map(|&i| profile.y(inst, i)).sum());
                }
            }
            let mut best = stop;
            for i in 0..n {
                if state[i].is_some() {
                    continue;
                }
                let mut v = -agent_cost[i];
                for o in 0..space.per_element[i].len() {
                    state[i] = Some(o);
                    v += space.per_element[i][o].prob * go(inst, mech, space, agent_cost, state);
                }
                state[i] = None;
                best = best.max(v);
            }
            best
        }
        go(inst, mech, &space, &shares.agent, state)
    }

    #[test]
    fn dp_matches_naive_recursion_and_replay() {
        let mut rng = rng_for(3, 0);
        for _ in 0..40 {
            let inst = random_instance(&mut rng, 3, ModelKind::Standard);
            let mech = random_pattern(&mut rng, &inst);
            let sol = best_response_dp(&inst, &mech, TieBreak::FavorPrincipal).unwrap();
            let naive = naive_agent_value(&inst, &mech, &mut vec![None; 3]);
            assert!((sol.agent_value - naive).abs() < 1e-9, "{} vs {naive}", sol.agent_value);

            // replaying the stored strategy reproduces both values
            let shares = mech.cost_shares(&inst);
            let space = mech.outcome_space(&inst);
            let est = expect_over_profiles(&inst, &space, EvalMode::Exact, 2, |pr, _, out| {
                let (probed, proposal) = sol.play(&mech, pr);
                let (_, p, a) = settle(&inst, &mech, &shares, pr, &probed, &proposal);
                out[0] = p;
                out[1] = a;
            })
            .unwrap();
            assert!((est[0].mean - sol.principal_value).abs() < 1e-9);
            assert!((est[1].mean - sol.agent_value).abs() < 1e-9);
        }
    }

    #[test]
    fn index_agent_is_optimal_for_the_agent() {
        let mut rng = rng_for(4, 0);
        for n in 1..=4 {
            for _ in 0..10 {
                let inst = random_instance(&mut rng, n, ModelKind::Standard);
                let mech = random_pattern(&mut rng, &inst);
                let dp = simulate_interaction(&inst, &mech, AgentPolicy::new(AgentKind::ExactDp), EvalMode::Exact, 0).unwrap();
                let ix = simulate_interaction(&inst, &mech, AgentPolicy::new(AgentKind::WeitzmanIndex), EvalMode::Exact, 0).unwrap();
                assert!((dp.agent_utility.mean - ix.agent_utility.mean).abs() < 1e-9, "n={n}");
            }
        }
    }

    #[test]
    fn index_agent_rejects_non_matroid_families() {
        let mut inst = random_instance(&mut rng_for(1, 0), 2, ModelKind::Standard);
        inst.constraint = Constraint::Knapsack { sizes: vec![1.0, 1.0], budget: 1.0 };
        let mech = open_pattern(&inst);
        let r = simulate_interaction(&inst, &mech, AgentPolicy::new(AgentKind::WeitzmanIndex), EvalMode::Exact, 0);
        assert!(matches!(r, Err(Error::NotPandoraShaped)));
    }

    #[test]
    fn dp_guard_reports_size() {
        let inst = Instance::new(
            vec![element(0.0, &[(1.0, 1.0, 0.25), (2.0, 2.0, 0.25), (3.0, 3.0, 0.25), (4.0, 4.0, 0.25)]); 12],
            Constraint::KUniform { k: 1 },
            UtilityModel::new(ModelKind::Standard),
        );
        let err = best_response_dp(&inst, &open_pattern(&inst), TieBreak::FavorPrincipal).err().unwrap();
        assert!(err.is_guard());
    }

    /// Maximal acceptable sets by filtering every feasible subset.
    fn brute_extreme(inst: &Instance, mech: &Mechanism, pr: &Profile, minimize: bool) -> f64 {
        let n = inst.n();
        let all: Vec<Vec<usize>> = (0..1u64 << n).map(mask_to_set).filter(|s| mech.accepts(inst, s, pr)).collect();
        let maximal = all.iter().filter(|s| !all.iter().any(|t| t.len() > s.len() && s.iter().all(|i| t.contains(i))));
        let vals = maximal.map(|s| s.iter().map(|&i| pr.x(inst, i)).sum::<f64>());
        if minimize { vals.fold(f64::INFINITY, f64::min) } else { vals.fold(f64::NEG_INFINITY, f64::max) }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn maximal_proposals_match_brute_force(seed in any::<u64>(), k in 1usize..4, minimize in any::<bool>()) {
            let mut rng = rng_for(seed, 0);
            let mut inst = random_instance(&mut rng, 6, ModelKind::FreeAgent);
            inst.constraint = Constraint::KUniform { k };
            let mech = random_pattern(&mut rng, &inst);
            let pr = crate::model::sample_profile(&inst, &mut rng);
            let (probed, proposal, _) = worst_case_free_agent(&inst, &mech, &pr, minimize);
            prop_assert!(mech.accepts(&inst, &proposal, &pr));
            prop_assert_eq!(probed.len(), mech.whitelist.iter().filter(|&&w| w).count());
            let v: f64 = proposal.iter().map(|&i| pr.x(&inst, i)).sum();
            prop_assert!((v - brute_extreme(&inst, &mech, &pr, minimize)).abs() < 1e-9);
        }

        #[test]
        fn dp_beats_single_deviations(seed in any::<u64>()) {
            // probing any one unprobed element first and then playing on
            // optimally never beats the best response
            let mut rng = rng_for(seed, 7);
            let inst = random_instance(&mut rng, 3, ModelKind::Standard);
            let mech = random_pattern(&mut rng, &inst);
            let sol = best_response_dp(&inst, &mech, TieBreak::FavorPrincipal).unwrap();
            let space = mech.outcome_space(&inst);
            let shares = mech.cost_shares(&inst);
            for i in 0..3 {
                let mut forced = -shares.agent[i];
                for o in 0..space.per_element[i].len() {
                    let mut state = vec![None; 3];
                    state[i] = Some(o);
                    forced += space.per_element[i][o].prob * naive_agent_value(&inst, &mech, &mut state);
                }
                prop_assert!(forced <= sol.agent_value + 1e-9);
            }
            prop_assert!(sol.agent_value >= -1e-12);
        }
    }
}
