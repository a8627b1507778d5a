//! Single-proposal delegation mechanisms and their constructors.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::agents::simulate_interaction;
use crate::error::{Error, Result};
use crate::model::{CapValues, Instance, Marginal, ModelKind, OutcomeSpace, Profile, TOL};
use crate::ocrs::{
    build_greedy_ocrs, ex_ante_concave_masked, ex_ante_membership, ocrs_scale,
    reference_constant, AcceptRule, GreedyFamily, SubFamily,
};
use crate::set_systems::Constraint;
use crate::solvers::opt_surrogate_masked;
use crate::stats::{EvalMode, EXACT_PROFILE_LIMIT};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Acceptance {
    /// Rules applied to `min(x_i, value_cap_i)`.
    Threshold { rules: Vec<AcceptRule>, value_cap: Vec<f64> },
    /// Explicit per-atom accept flags.
    Pattern { accept: Vec<Vec<bool>> },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub constructor: String,
    pub params: BTreeMap<String, f64>,
    pub seed: Option<u64>,
}

/// Which half of a shared-cost split a mechanism serves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharedBranch {
    /// Agent share equals its expected accepted value, leaving zero surplus.
    ZeroSurplus,
    /// Agent pays the full cost.
    AgentPays,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mechanism {
    pub whitelist: Vec<bool>,
    pub acceptance: Acceptance,
    pub sub_family: SubFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_division: Option<Vec<f64>>,
    /// Discount on the principal's costs used when evaluating guarantees.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub principal_discount: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<SharedBranch>,
    pub provenance: Provenance,
}

/// Per-element probing cost paid by each side.
#[derive(Clone, Debug, PartialEq)]
pub struct CostShares {
    pub agent: Vec<f64>,
    pub principal: Vec<f64>,
}

/// Sample budget for builders that evaluate candidates.
#[derive(Clone, Copy, Debug)]
pub struct BuildPlan {
    pub samples: u64,
    pub seed: u64,
}

impl Default for BuildPlan {
    fn default() -> Self {
        BuildPlan { samples: 100_000, seed: 0 }
    }
}

impl BuildPlan {
    fn mode(&self, inst: &Instance) -> EvalMode {
        EvalMode::auto(inst.profile_count(), EXACT_PROFILE_LIMIT, self.samples, self.seed)
    }
}

impl Mechanism {
    /// Probability, over the tag, that an outcome of atom `a` clears.
    pub fn accept_prob(&self, inst: &Instance, i: usize, a: usize) -> f64 {
        if !self.whitelist[i] {
            return 0.0;
        }
        match &self.acceptance {
            Acceptance::Threshold { rules, value_cap } => rules[i].clear_prob(inst.atom(i, a).x.min(value_cap[i])),
            Acceptance::Pattern { accept } => f64::from(u8::from(accept[i][a])),
        }
    }

    pub fn accepts_outcome(&self, inst: &Instance, i: usize, a: usize, tag: f64) -> bool {
        if !self.whitelist[i] {
            return false;
        }
        match &self.acceptance {
            Acceptance::Threshold { rules, value_cap } => rules[i].clears(inst.atom(i, a).x.min(value_cap[i]), tag),
            Acceptance::Pattern { accept } => accept[i][a],
        }
    }

    /// Whether the principal accepts proposing `set` under `profile`.
    pub fn accepts(&self, inst: &Instance, set: &[usize], profile: &Profile) -> bool {
        set.is_empty()
            || (self.sub_family.contains(set)
                && set.iter().all(|&i| self.accepts_outcome(inst, i, profile.atom[i], profile.tag[i])))
    }

    /// Outcome cells on which acceptance is constant.
    pub fn outcome_space(&self, inst: &Instance) -> OutcomeSpace {
        OutcomeSpace::with_cuts(inst, |i, a| match &self.acceptance {
            Acceptance::Threshold { rules, value_cap } => {
                rules[i].cut_for(inst.atom(i, a).x.min(value_cap[i])).into_iter().collect()
            }
            Acceptance::Pattern { .. } => Vec::new(),
        })
    }

    pub fn cost_shares(&self, inst: &Instance) -> CostShares {
        let costs = inst.costs();
        let m = &inst.model;
        match m.kind {
            ModelKind::Standard | ModelKind::Binary => {
                let d = self.principal_discount.unwrap_or(m.discount);
                let agent: Vec<f64> = costs.iter().map(|c| (1.0 - m.discount) * c).collect();
                CostShares { agent, principal: costs.iter().map(|c| (1.0 - d) * c).collect() }
            }
            ModelKind::FreeAgent => {
                let d = self.principal_discount.unwrap_or(m.discount);
                CostShares { agent: vec![0.0; costs.len()], principal: costs.iter().map(|c| (1.0 - d) * c).collect() }
            }
            ModelKind::SharedCost => {
                let div = self.cost_division.as_ref().or(m.cost_division.as_ref()).cloned().unwrap_or_else(|| costs.clone());
                let principal = costs.iter().zip(&div).map(|(c, d)| (c - d).max(0.0)).collect();
                CostShares { agent: div, principal }
            }
        }
    }

    /// The greedy family behind a threshold mechanism.
    pub fn family(&self) -> Option<GreedyFamily> {
        match &self.acceptance {
            Acceptance::Threshold { rules, .. } => Some(GreedyFamily {
                whitelist: self.whitelist.clone(),
                rules: rules.clone(),
                sub: self.sub_family.clone(),
            }),
            Acceptance::Pattern { .. } => None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Checks shapes against an instance.
    pub fn check(&self, inst: &Instance) -> Result<()> {
        let n = inst.n();
        let ok = self.whitelist.len() == n
            && match &self.acceptance {
                Acceptance::Threshold { rules, value_cap } => rules.len() == n && value_cap.len() == n,
                Acceptance::Pattern { accept } => {
                    accept.len() == n && accept.iter().zip(&inst.elements).all(|(a, e)| a.len() == e.atoms.len())
                }
            }
            && self.cost_division.as_ref().is_none_or(|d| d.len() == n);
        if ok {
            Ok(())
        } else {
            Err(Error::BadParameters("mechanism does not match the instance size".into()))
        }
    }
}

/// Replaces a zero threshold by the smallest positive support value, so
/// zero-value outcomes are never accepted.
fn clamp_zero(rule: AcceptRule, law: &Marginal) -> Option<AcceptRule> {
    if rule.t > TOL {
        return Some(rule);
    }
    law.pairs().iter().find(|&&(z, _)| z > TOL).map(|&(z, _)| AcceptRule { t: z, q: 1.0 })
}

fn threshold_mechanism(
    inst: &Instance,
    caps: &CapValues,
    fam: &GreedyFamily,
    provenance: Provenance,
) -> Mechanism {
    let n = inst.n();
    let mut whitelist = fam.whitelist.clone();
    let mut rules = fam.rules.clone();
    for i in 0..n {
        match clamp_zero(rules[i], &caps.truncated_marginal(inst, i)) {
            Some(r) => rules[i] = r,
            None => whitelist[i] = false,
        }
        whitelist[i] &= rules[i].reachable(caps.tau_x[i]);
    }
    Mechanism {
        whitelist,
        acceptance: Acceptance::Threshold { rules, value_cap: caps.tau_x.clone() },
        sub_family: fam.sub.clone(),
        cost_division: None,
        principal_discount: None,
        branch: None,
        provenance,
    }
}

fn require_model(inst: &Instance, kind: ModelKind) -> Result<()> {
    if inst.model.kind == kind {
        Ok(())
    } else {
        Err(Error::ModelMismatch { expected: kind.name().into(), found: inst.model.kind.name().into() })
    }
}

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Coin elements up to which every binary member is evaluated.
pub const BINARY_EXHAUSTIVE_COINS: usize = 12;

/// Members drawn when there are more coin elements than that.
pub const BINARY_SAMPLED_MEMBERS: usize = 256;

/// Threshold mechanism for the binary model from the halved ex-ante
/// membership vector. A nonzero outcome the scheme accepts with probability
/// `q` strictly between 0 and 1 becomes a coin flipped before delegation:
/// the element is either open with full acceptance or closed. Each draw is
/// a deterministic member; the best member is kept.
pub fn build_binary_matroid(inst: &Instance, plan: BuildPlan) -> Result<Mechanism> {
    require_model(inst, ModelKind::Binary)?;
    if !matches!(inst.constraint, Constraint::KUniform { .. } | Constraint::Partition { .. }) {
        return Err(Error::UnsupportedConstraint(inst.constraint.kind_name().into()));
    }
    let caps = CapValues::compute(inst)?;
    let mode = plan.mode(inst);
    let scale = ocrs_scale(&inst.constraint)?;
    let p: Vec<f64> = ex_ante_membership(inst, &caps, mode)?.iter().map(|e| scale * e.mean).collect();
    let ocrs = build_greedy_ocrs(inst, &caps, &p)?;
    let seed = matches!(mode, EvalMode::Sampled { .. }).then_some(plan.seed);
    let base = threshold_mechanism(inst, &caps, &ocrs.members[0].1, Provenance::default());
    let Acceptance::Threshold { rules, value_cap } = &base.acceptance else { unreachable!("threshold mechanism") };

    // clearing probability of each element's nonzero outcome
    let clear: Vec<f64> = (0..inst.n())
        .map(|i| {
            let top = inst.elements[i].atoms.atoms().iter().map(|a| a.x).fold(0.0, f64::max);
            if base.whitelist[i] { rules[i].clear_prob(top.min(value_cap[i])) } else { 0.0 }
        })
        .collect();
    let coins: Vec<usize> = (0..inst.n()).filter(|&i| clear[i] > 0.0 && clear[i] < 1.0).collect();
    let m = coins.len();
    let draws: Vec<Vec<bool>> = if m <= BINARY_EXHAUSTIVE_COINS {
        (0..1u64 << m).map(|mask| (0..m).map(|b| mask >> b & 1 == 1).collect()).collect()
    } else {
        let mut rng = crate::stats::rng_for(plan.seed, 0xB1);
        let mut out = vec![vec![true; m]];
        out.extend((0..BINARY_SAMPLED_MEMBERS).map(|_| coins.iter().map(|&i| rng.gen_bool(clear[i])).collect()));
        out
    };
    let exhaustive = f64::from(u8::from(m <= BINARY_EXHAUSTIVE_COINS));
    let member = |draw: &[bool]| -> Mechanism {
        let mut mech = base.clone();
        let mut rules = rules.clone();
        for (&i, &open) in coins.iter().zip(draw) {
            mech.whitelist[i] = open;
            rules[i].q = 1.0;
        }
        for i in 0..inst.n() {
            // an outcome that always clears needs no tie split
            if clear[i] >= 1.0 {
                rules[i].q = 1.0;
            }
        }
        mech.acceptance = Acceptance::Threshold { rules, value_cap: value_cap.clone() };
        mech.provenance = Provenance {
            constructor: "binary_matroid".into(),
            params: params(&[("scale", scale), ("coins", m as f64), ("members", draws.len() as f64), ("exhaustive", exhaustive)]),
            seed,
        };
        mech
    };
    let agent = crate::agents::AgentPolicy::new(crate::agents::AgentKind::WeitzmanIndex);
    let values = crate::stats::par_map(draws.len(), |d| {
        let mech = member(&draws[d]);
        let mode = EvalMode::auto(mech.outcome_space(inst).size(), EXACT_PROFILE_LIMIT, plan.samples, plan.seed);
        simulate_interaction(inst, &mech, agent, mode, 0).map(|r| r.del.mean)
    });
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (d, v) in values.into_iter().enumerate() {
        let v = v?;
        if v > best_value {
            best = d;
            best_value = v;
        }
    }
    Ok(member(&draws[best]))
}

/// Probability that at least `k` of the independent events occur.
fn at_least(probs: &[f64], k: usize) -> f64 {
    let mut dist = vec![0.0; probs.len() + 1];
    dist[0] = 1.0;
    for (m, &p) in probs.iter().enumerate() {
        for c in (0..=m + 1).rev() {
            let stay = dist[c] * (1.0 - p);
            let moved = if c > 0 { dist[c - 1] * p } else { 0.0 };
            dist[c] = stay + moved;
        }
    }
    dist[k.min(probs.len() + 1)..].iter().sum()
}

/// Free-agent mechanism for k-uniform constraints: one global threshold on
/// the truncated values, set so that at least `k` elements clear it with
/// probability `delta`. The principal's costs are evaluated at discount
/// `delta`.
pub fn build_free_agent_kuniform(inst: &Instance, delta: f64) -> Result<Mechanism> {
    require_model(inst, ModelKind::FreeAgent)?;
    let Constraint::KUniform { k } = inst.constraint else {
        return Err(Error::UnsupportedConstraint(format!("{} is not k-uniform", inst.constraint.kind_name())));
    };
    if !(0.0..=0.5).contains(&delta) {
        return Err(Error::BadParameters(format!("delta {delta} outside [0, 1/2]")));
    }
    // k beyond n is the free matroid, same as k = n
    let k = k.min(inst.n()).max(1);
    let caps = CapValues::compute(inst)?;
    let rules = kuniform_split_rules(inst, &caps, k, delta)?;
    let mut variants = vec![rules.clone()];
    if rules.iter().any(|r| r.q < 1.0) && delta > 0.0 {
        // the exact split randomizes over value above the threshold when a
        // cap sits on it; the deterministic full boundary is kept as a rival
        variants.push(rules.iter().map(|r| AcceptRule { t: r.t, q: 1.0 }).collect());
    }
    let candidates = variants.into_iter().map(|rules| kuniform_mechanism(inst, &caps, rules, k, delta)).collect();
    best_member(inst, candidates, BuildPlan::default())
}

/// Per-element rules at one global level that reach at least `k` clearing
/// elements with probability exactly `delta`.
fn kuniform_split_rules(inst: &Instance, caps: &CapValues, k: usize, delta: f64) -> Result<Vec<AcceptRule>> {
    let n = inst.n();
    let laws: Vec<Marginal> = (0..n).map(|i| caps.truncated_marginal(inst, i)).collect();
    let mut levels: Vec<f64> = laws.iter().flat_map(|l| l.pairs().iter().map(|p| p.0)).collect();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();
    let reach = |t: f64, q: f64| {
        let probs: Vec<f64> = laws.iter().map(|l| AcceptRule { t, q }.mass(l)).collect();
        at_least(&probs, k)
    };
    let top = levels.first().copied().unwrap_or(0.0);
    let closed = AcceptRule { t: top, q: 0.0 };
    let mut rules = vec![closed; n];
    if delta > 0.0 {
        let Some(&t) = levels.iter().find(|&&t| reach(t, 1.0) >= delta - 1e-15) else {
            let lowest = levels.last().copied().unwrap_or(0.0);
            return Err(Error::InfeasibleDelta { delta, reachable: reach(lowest, 1.0) });
        };
        // Boundary mass at `t` from elements whose cap sits at `t` carries
        // value above `t`; split the other elements' boundary (x == t) first.
        let tight: Vec<bool> = caps.tau_x.iter().map(|&tau| (tau - t).abs() <= TOL).collect();
        let split = |q_loose: f64, q_tight: f64| -> Vec<AcceptRule> {
            tight.iter().map(|&tt| AcceptRule { t, q: if tt { q_tight } else { q_loose } }).collect()
        };
        let hit = |rules: &[AcceptRule]| {
            let probs: Vec<f64> = laws.iter().zip(rules).map(|(l, r)| r.mass(l)).collect();
            at_least(&probs, k)
        };
        let loose_only = hit(&split(0.0, 1.0)) <= delta;
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            let trial = if loose_only { split(mid, 1.0) } else { split(0.0, mid) };
            if hit(&trial) < delta {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        rules = if loose_only { split(hi, 1.0) } else { split(0.0, hi) };
        if t <= TOL {
            let smallest = levels.iter().rev().find(|&&v| v > TOL).copied().unwrap_or(top);
            rules = vec![AcceptRule { t: smallest, q: 1.0 }; n];
        }
    }
    Ok(rules)
}

fn kuniform_mechanism(inst: &Instance, caps: &CapValues, rules: Vec<AcceptRule>, k: usize, delta: f64) -> Mechanism {
    let n = inst.n();
    let whitelist = (0..n).map(|i| rules[i].reachable(caps.tau_x[i])).collect();
    let rule = rules.iter().find(|r| r.q < 1.0).or(rules.first()).copied().unwrap_or(AcceptRule { t: 0.0, q: 0.0 });
    let exact_split = rules.iter().any(|r| r.q < 1.0);
    Mechanism {
        whitelist,
        acceptance: Acceptance::Threshold { rules, value_cap: caps.tau_x.clone() },
        sub_family: SubFamily::Inner { constraint: inst.constraint.clone() },
        cost_division: None,
        principal_discount: Some(delta),
        branch: None,
        provenance: Provenance {
            constructor: "free_agent_kuniform".into(),
            params: params(&[
                ("k", k as f64),
                ("delta", delta),
                ("threshold", rule.t),
                ("tag_probability", rule.q),
                ("exact_split", f64::from(u8::from(exact_split))),
            ]),
            seed: None,
        },
    }
}

/// Scores each deterministic member and keeps the best.
fn best_member(inst: &Instance, candidates: Vec<Mechanism>, plan: BuildPlan) -> Result<Mechanism> {
    if candidates.len() == 1 {
        return Ok(candidates.into_iter().next().expect("one candidate"));
    }
    let mut best: Option<(f64, Mechanism)> = None;
    for mech in candidates {
        let agent = crate::agents::default_agent(inst, &mech);
        let mode = EvalMode::auto(mech.outcome_space(inst).size(), EXACT_PROFILE_LIMIT, plan.samples, plan.seed);
        let value = simulate_interaction(inst, &mech, agent, mode, 0)?.del.mean;
        if best.as_ref().is_none_or(|(v, _)| value > *v) {
            best = Some((value, mech));
        }
    }
    Ok(best.expect("nonempty candidates").1)
}

/// Free-agent mechanism from a greedy scheme at the scaled membership
/// vector. Records the principal discount `1 - alpha`.
pub fn build_free_agent_ocrs(inst: &Instance, plan: BuildPlan) -> Result<Mechanism> {
    require_model(inst, ModelKind::FreeAgent)?;
    let caps = CapValues::compute(inst)?;
    let scale = ocrs_scale(&inst.constraint)?;
    let alpha = reference_constant(&inst.constraint)?;
    let mode = plan.mode(inst);
    let p: Vec<f64> = ex_ante_membership(inst, &caps, mode)?.iter().map(|e| scale * e.mean).collect();
    let ocrs = build_greedy_ocrs(inst, &caps, &p)?;
    let seed = matches!(mode, EvalMode::Sampled { .. }).then_some(plan.seed);
    let candidates = ocrs
        .members
        .iter()
        .enumerate()
        .map(|(m, (_, fam))| {
            let prov = Provenance {
                constructor: "free_agent_ocrs".into(),
                params: params(&[("alpha", alpha), ("scale", scale), ("member", m as f64)]),
                seed,
            };
            let mut mech = threshold_mechanism(inst, &caps, fam, prov);
            mech.principal_discount = Some(1.0 - alpha);
            mech
        })
        .collect();
    best_member(inst, candidates, plan)
}

/// Expected agent value accepted on element `i`: `E[Y; accepted]`.
pub fn accepted_agent_value(inst: &Instance, mech: &Mechanism, i: usize) -> f64 {
    inst.elements[i].atoms.atoms().iter().enumerate().map(|(a, atom)| atom.p * atom.y * mech.accept_prob(inst, i, a)).sum()
}

/// Shared-cost mechanism: concave ex-ante vector, greedy scheme thresholds,
/// then a split into elements whose accepted agent value covers the cost
/// and those where it does not. Each side is rebuilt on its own elements
/// until stable, and the best member over both sides is kept; the side with
/// the larger truncated-value bound is recorded as preferred.
pub fn build_shared_cost(inst: &Instance, plan: BuildPlan) -> Result<Mechanism> {
    require_model(inst, ModelKind::SharedCost)?;
    let caps = CapValues::compute(inst)?;
    let scale = ocrs_scale(&inst.constraint)?;
    let n = inst.n();
    let mode = plan.mode(inst);
    let costs = inst.costs();

    let layout = |side: &[bool]| -> Result<(Vec<Mechanism>, Vec<f64>)> {
        let p: Vec<f64> = ex_ante_concave_masked(inst, &caps, Some(side))?.iter().map(|v| scale * v).collect();
        let ocrs = build_greedy_ocrs(inst, &caps, &p)?;
        let mechs: Vec<Mechanism> = ocrs
            .members
            .iter()
            .map(|(_, fam)| {
                let mut fam = fam.clone();
                for (w, &s) in fam.whitelist.iter_mut().zip(side) {
                    *w &= s;
                }
                threshold_mechanism(inst, &caps, &fam, Provenance::default())
            })
            .collect();
        // thresholds are shared by members; accepted value uses the open whitelist
        let mut open = mechs[0].clone();
        open.whitelist = vec![true; n];
        let d = (0..n).map(|i| accepted_agent_value(inst, &open, i)).collect();
        Ok((mechs, d))
    };

    let all = vec![true; n];
    let (_, d) = layout(&all)?;
    let covered: Vec<bool> = (0..n).map(|i| d[i] <= costs[i] + TOL).collect();
    let uncovered: Vec<bool> = covered.iter().map(|c| !c).collect();
    let s_cov = opt_surrogate_masked(inst, &caps, Some(&covered), mode)?.mean;
    let s_unc = opt_surrogate_masked(inst, &caps, Some(&uncovered), mode)?.mean;
    let preferred = if s_cov >= s_unc { SharedBranch::ZeroSurplus } else { SharedBranch::AgentPays };
    let seed = matches!(mode, EvalMode::Sampled { .. }).then_some(plan.seed);

    let mut candidates = Vec::new();
    for (branch, start) in [(SharedBranch::ZeroSurplus, covered), (SharedBranch::AgentPays, uncovered)] {
        let mut side = start;
        let (mechs, d) = loop {
            let (mechs, d) = layout(&side)?;
            let next: Vec<bool> = (0..n)
                .map(|i| {
                    side[i]
                        && match branch {
                            SharedBranch::ZeroSurplus => d[i] <= costs[i] + TOL,
                            SharedBranch::AgentPays => d[i] > costs[i] + TOL,
                        }
                })
                .collect();
            if next == side {
                break (mechs, d);
            }
            side = next;
        };
        if !side.iter().any(|&s| s) {
            continue;
        }
        for (m, mut mech) in mechs.into_iter().enumerate() {
            mech.branch = Some(branch);
            mech.cost_division = Some(match branch {
                SharedBranch::ZeroSurplus => {
                    (0..n).map(|i| if mech.whitelist[i] { d[i].min(costs[i]) } else { costs[i] }).collect()
                }
                SharedBranch::AgentPays => costs.clone(),
            });
            mech.provenance = Provenance {
                constructor: "shared_cost".into(),
                params: params(&[
                    ("scale", scale),
                    ("member", m as f64),
                    ("zero_surplus_branch", f64::from(u8::from(branch == SharedBranch::ZeroSurplus))),
                    ("preferred_branch", f64::from(u8::from(branch == preferred))),
                    ("bound_covered", s_cov),
                    ("bound_uncovered", s_unc),
                ]),
                seed,
            };
            candidates.push(mech);
        }
    }
    if candidates.is_empty() {
        let (mechs, _) = layout(&vec![false; n])?;
        let mut mech = mechs.into_iter().next().expect("one member");
        mech.branch = Some(preferred);
        mech.cost_division = Some(costs.clone());
        mech.provenance = Provenance { constructor: "shared_cost".into(), params: params(&[("scale", scale)]), seed };
        candidates.push(mech);
    }
    best_member(inst, candidates, plan)
}

/// Mechanism accepting exactly the flagged atoms under a 1-uniform family.
pub fn pattern_mechanism(inst: &Instance, accept: Vec<Vec<bool>>, cost_division: Option<Vec<f64>>) -> Mechanism {
    Mechanism {
        whitelist: accept.iter().map(|a| a.iter().any(|&b| b)).collect(),
        acceptance: Acceptance::Pattern { accept },
        sub_family: SubFamily::Inner { constraint: inst.constraint.clone() },
        cost_division,
        principal_discount: None,
        branch: None,
        provenance: Provenance { constructor: "pattern".into(), params: BTreeMap::new(), seed: None },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{simulate_interaction, AgentKind, AgentPolicy};
    use crate::model::{Atom, Element, JointDistribution, UtilityModel};
    use crate::set_systems::mask_to_set;
    use crate::solvers::{opt_surrogate, weitzman_expected};
    use crate::stats::rng_for;
    use proptest::prelude::*;

    fn binary(x: f64, y: f64, p: f64, cost: f64) -> Element {
        Element {
            cost,
            atoms: JointDistribution::new(vec![Atom { x, y, p }, Atom { x: 0.0, y: 0.0, p: 1.0 - p }]).unwrap(),
        }
    }

    fn exact(inst: &Instance, mech: &Mechanism, kind: AgentKind) -> f64 {
        simulate_interaction(inst, mech, AgentPolicy::new(kind), EvalMode::Exact, 0).unwrap().del.mean
    }

    fn random_elements(rng: &mut crate::stats::Rng, n: usize, same_xy: bool) -> Vec<Element> {
        (0..n)
            .map(|_| {
                let k = rng.gen_range(1..=3);
                let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
                let total: f64 = raw.iter().sum();
                let mut atoms: Vec<Atom> = raw
                    .iter()
                    .map(|w| {
                        let x = (rng.gen_range(0.0..10.0f64) * 4.0).round() / 4.0;
                        let y = if same_xy { x } else { (rng.gen_range(0.0..10.0f64) * 4.0).round() / 4.0 };
                        Atom { x, y, p: w / total }
                    })
                    .collect();
                atoms.push(Atom { x: 0.0, y: 0.0, p: 0.0 });
                atoms.pop();
                let d = JointDistribution::new(atoms).unwrap();
                let cost = 0.5 * rng.gen::<f64>() * d.mean_x().min(d.mean_y());
                Element { cost, atoms: d }
            })
            .collect()
    }

    #[test]
    fn empty_and_rejected_proposals() {
        let inst = Instance::new(vec![binary(4.0, 4.0, 0.25, 0.5); 2], Constraint::KUniform { k: 1 }, UtilityModel::new(ModelKind::Binary));
        let mech = build_binary_matroid(&inst, BuildPlan::default()).unwrap();
        let zero = Profile { atom: vec![1, 1], tag: vec![0.5; 2] };
        assert!(mech.accepts(&inst, &[], &zero));
        assert!(!mech.accepts(&inst, &[0], &zero));
    }

    #[test]
    fn binary_single_element() {
        let inst = Instance::new(vec![binary(4.0, 3.0, 0.5, 0.5)], Constraint::KUniform { k: 1 }, UtilityModel::new(ModelKind::Binary));
        let mech = build_binary_matroid(&inst, BuildPlan::default()).unwrap();
        assert!(mech.whitelist[0]);
        // the tie coin is drawn up front; the best member keeps the element open
        assert_eq!(mech.accept_prob(&inst, 0, 0), 1.0);
        assert_eq!(mech.accept_prob(&inst, 0, 1), 0.0);
    }

    #[test]
    fn cap_below_threshold_leaves_whitelist() {
        let inst = Instance::new(vec![binary(4.0, 3.0, 0.5, 0.5)], Constraint::KUniform { k: 1 }, UtilityModel::new(ModelKind::Binary));
        let caps = CapValues::compute(&inst).unwrap();
        let fam = GreedyFamily {
            whitelist: vec![true],
            rules: vec![AcceptRule { t: caps.tau_x[0] + 1.0, q: 1.0 }],
            sub: SubFamily::Inner { constraint: inst.constraint.clone() },
        };
        let mech = threshold_mechanism(&inst, &caps, &fam, Provenance::default());
        assert!(!mech.whitelist[0]);
    }

    #[test]
    fn binary_partition_membership_by_hand() {
        // blocks {0} and {1}; thresholds sit at the nonzero values, low tags clear
        let inst = Instance::new(
            vec![binary(4.0, 2.0, 0.5, 0.5), binary(6.0, 1.0, 0.5, 0.2)],
            Constraint::Partition { blocks: vec![vec![0], vec![1]], caps: vec![1, 1] },
            UtilityModel::new(ModelKind::Binary),
        );
        let mech = build_binary_matroid(&inst, BuildPlan::default()).unwrap();
        for a0 in 0..2 {
            for a1 in 0..2 {
                let pr = Profile { atom: vec![a0, a1], tag: vec![0.1, 0.1] };
                for mask in 0..4u64 {
                    let set = mask_to_set(mask);
                    let expect = set.iter().all(|&i| pr.atom[i] == 0);
                    assert_eq!(mech.accepts(&inst, &set, &pr), expect, "{a0}{a1} {set:?}");
                }
            }
        }
    }

    #[test]
    fn binary_partition_guarantee() {
        let inst = Instance::new(
            vec![binary(4.0, 2.0, 0.5, 0.5), binary(6.0, 3.0, 0.3, 0.4), binary(3.0, 5.0, 0.6, 0.2)],
            Constraint::Partition { blocks: vec![vec![0, 1], vec![2]], caps: vec![1, 1] },
            UtilityModel::new(ModelKind::Binary),
        );
        let caps = CapValues::compute(&inst).unwrap();
        let opt = weitzman_expected(&inst, &caps, EvalMode::Exact).unwrap().mean;
        let mech = build_binary_matroid(&inst, BuildPlan::default()).unwrap();
        let del = exact(&inst, &mech, AgentKind::WeitzmanIndex);
        assert!(del >= 0.25 * opt - 1e-12, "{del} vs {opt}");
    }

    #[test]
    fn binary_requires_binary_model() {
        let inst = Instance::new(vec![binary(4.0, 3.0, 0.5, 0.5)], Constraint::KUniform { k: 1 }, UtilityModel::new(ModelKind::Standard));
        assert!(matches!(build_binary_matroid(&inst, BuildPlan::default()), Err(Error::ModelMismatch { .. })));
    }

    fn free_iid(n: usize, x: f64, p: f64, cost: f64, k: usize) -> Instance {
        let e = Element { cost, atoms: JointDistribution::independent(&[(x, p), (0.0, 1.0 - p)], &[(1.0, 1.0)]).unwrap() };
        Instance::new(vec![e; n], Constraint::KUniform { k }, UtilityModel::new(ModelKind::FreeAgent))
    }

    #[test]
    fn kuniform_zero_delta_accepts_nothing() {
        let inst = free_iid(3, 4.0, 0.5, 0.5, 1);
        let mech = build_free_agent_kuniform(&inst, 0.0).unwrap();
        assert_eq!(exact(&inst, &mech, AgentKind::AdversarialMaximal), 0.0);
        assert_eq!(exact(&inst, &mech, AgentKind::ExactDp), 0.0);
    }

    #[test]
    fn kuniform_hits_half_exactly() {
        for n in 2..7 {
            // cost (4 - 2)/n puts every cap at 2, so truncated values are {2, 0}
            let inst = free_iid(n, 4.0, 1.0 / n as f64, 2.0 / n as f64, 1);
            let caps = CapValues::compute(&inst).unwrap();
            assert!((caps.tau_x[0] - 2.0).abs() < 1e-12);
            let rules = kuniform_split_rules(&inst, &caps, 1, 0.5).unwrap();
            let probs: Vec<f64> = (0..n).map(|i| rules[i].mass(&caps.truncated_marginal(&inst, i))).collect();
            assert!((at_least(&probs, 1) - 0.5).abs() < 1e-12);
            // closed form: 1 - (1 - q/n)^n = 1/2
            let q = n as f64 * (1.0 - 0.5f64.powf(1.0 / n as f64));
            assert!((rules[0].q - q).abs() < 1e-9);
        }
    }

    #[test]
    fn kuniform_k_above_n_matches_n() {
        let wide = free_iid(2, 4.0, 0.25, 0.1, 5);
        let tight = free_iid(2, 4.0, 0.25, 0.1, 2);
        let a = build_free_agent_kuniform(&wide, 0.5).unwrap();
        let b = build_free_agent_kuniform(&tight, 0.5).unwrap();
        let adv = AgentKind::AdversarialMaximal;
        assert!((exact(&wide, &a, adv) - exact(&tight, &b, adv)).abs() < 1e-12);
    }

    #[test]
    fn ocrs_single_supported_element() {
        let mut inst = free_iid(2, 4.0, 0.5, 0.1, 1);
        inst.elements[0].atoms = JointDistribution::independent(&[(9.0, 1.0)], &[(1.0, 1.0)]).unwrap();
        let mech = build_free_agent_ocrs(&inst, BuildPlan::default()).unwrap();
        assert_eq!(mech.whitelist, vec![true, false]);
        assert_eq!(mech.principal_discount, Some(0.75));
    }

    #[test]
    fn shared_cost_branches() {
        // accepted agent value far above cost: agent pays everything
        let rich = Element { cost: 0.5, atoms: JointDistribution::independent(&[(4.0, 0.5), (0.0, 0.5)], &[(10.0, 1.0)]).unwrap() };
        let inst = Instance::new(vec![rich; 2], Constraint::KUniform { k: 1 }, UtilityModel::new(ModelKind::SharedCost));
        let mech = build_shared_cost(&inst, BuildPlan::default()).unwrap();
        assert_eq!(mech.branch, Some(SharedBranch::AgentPays));
        assert_eq!(mech.cost_shares(&inst).principal, vec![0.0, 0.0]);

        let poor = Element {
            cost: 0.5,
            atoms: JointDistribution::new(vec![Atom { x: 4.0, y: 0.6, p: 0.5 }, Atom { x: 0.0, y: 1.0, p: 0.5 }]).unwrap(),
        };
        let inst = Instance::new(vec![poor; 2], Constraint::KUniform { k: 1 }, UtilityModel::new(ModelKind::SharedCost));
        let mech = build_shared_cost(&inst, BuildPlan::default()).unwrap();
        assert_eq!(mech.branch, Some(SharedBranch::ZeroSurplus));
        let div = mech.cost_division.clone().unwrap();
        for i in 0..2 {
            if mech.whitelist[i] {
                assert!((div[i] - accepted_agent_value(&inst, &mech, i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let inst = free_iid(3, 4.0, 0.5, 0.5, 1);
        let mech = build_free_agent_kuniform(&inst, 0.5).unwrap();
        let back = Mechanism::from_json(&mech.to_json().unwrap()).unwrap();
        assert_eq!(back.to_json().unwrap(), mech.to_json().unwrap());
    }

    fn all_proposals_feasible(inst: &Instance, mech: &Mechanism) {
        let space = mech.outcome_space(inst);
        let mut profile = space.empty_profile();
        let mut digits = vec![0; inst.n()];
        for idx in 0..space.size() as u64 {
            space.fill(idx, &mut profile, &mut digits);
            for m in 0..1u64 << inst.n() {
                let set = mask_to_set(m);
                if mech.accepts(inst, &set, &profile) {
                    assert!(inst.constraint.is_feasible(&set));
                }
            }
        }
    }

    #[test]
    fn free_agent_partition_guarantee_and_feasibility() {
        let mut rng = rng_for(11, 0);
        for _ in 0..10 {
            let inst = Instance::new(
                random_elements(&mut rng, 4, false),
                Constraint::Partition { blocks: vec![vec![0, 1], vec![2, 3]], caps: vec![1, 1] },
                UtilityModel::new(ModelKind::FreeAgent),
            );
            let caps = CapValues::compute(&inst).unwrap();
            let opt = weitzman_expected(&inst, &caps, EvalMode::Exact).unwrap().mean;
            let mech = build_free_agent_ocrs(&inst, BuildPlan::default()).unwrap();
            all_proposals_feasible(&inst, &mech);
            let del = exact(&inst, &mech, AgentKind::AdversarialMaximal);
            assert!(del >= 0.25 * opt - 1e-9, "{del} vs {opt}");
        }
    }

    #[test]
    fn shared_cost_ratio_on_equal_values() {
        let mut rng = rng_for(5, 0);
        for n in 1..=5 {
            let inst = Instance::new(random_elements(&mut rng, n, true), Constraint::KUniform { k: 1 }, UtilityModel::new(ModelKind::SharedCost));
            let caps = CapValues::compute(&inst).unwrap();
            let opt = weitzman_expected(&inst, &caps, EvalMode::Exact).unwrap().mean;
            let mech = build_shared_cost(&inst, BuildPlan::default()).unwrap();
            let agent = crate::agents::default_agent(&inst, &mech);
            let del = simulate_interaction(&inst, &mech, agent, EvalMode::Exact, 0).unwrap().del.mean;
            assert!(del >= opt / 8.0 - 1e-9, "{del} vs {opt}");
            let bound = opt_surrogate(&inst, &caps, EvalMode::Exact).unwrap().mean;
            assert!(bound >= opt - 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn acceptance_is_monotone(seed in any::<u64>(), bump in 0.0f64..5.0) {
            let mut rng = rng_for(seed, 0);
            let inst = Instance::new(random_elements(&mut rng, 3, false), Constraint::KUniform { k: 2 }, UtilityModel::new(ModelKind::FreeAgent));
            let mech = build_free_agent_ocrs(&inst, BuildPlan::default()).unwrap();
            let Acceptance::Threshold { rules, value_cap } = &mech.acceptance else { panic!() };
            for i in 0..3 {
                for a in inst.elements[i].atoms.atoms() {
                    for tag in [0.0, 0.3, 0.7, 0.99] {
                        if rules[i].clears(a.x.min(value_cap[i]), tag) {
                            prop_assert!(rules[i].clears((a.x + bump).min(value_cap[i]), tag));
                        }
                    }
                }
            }
            all_proposals_feasible(&inst, &mech);
        }

        #[test]
        fn kuniform_half_guarantee(seed in any::<u64>(), k in 1usize..3) {
            let mut rng = rng_for(seed, 1);
            let inst = Instance::new(random_elements(&mut rng, 4, false), Constraint::KUniform { k }, UtilityModel::new(ModelKind::FreeAgent));
            let caps = CapValues::compute(&inst).unwrap();
            let opt = weitzman_expected(&inst, &caps, EvalMode::Exact).unwrap().mean;
            let mech = build_free_agent_kuniform(&inst, 0.5).unwrap();
            let del = exact(&inst, &mech, AgentKind::AdversarialMaximal);
            prop_assert!(del >= 0.5 * opt - 1e-9, "{} vs {}", del, opt);
        }
    }
}
