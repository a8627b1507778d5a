//! Instance families, brute-force mechanism search for 1-uniform instances,
//! and delegation-gap sweeps.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::agents::{best_response_dp, default_agent, simulate_interaction, TieBreak};
use crate::error::{Error, Result};
use crate::mechanisms::{
    build_binary_matroid, build_free_agent_ocrs, build_shared_cost, pattern_mechanism, BuildPlan, Mechanism,
};
use crate::model::{Atom, CapValues, Element, Instance, JointDistribution, ModelKind, UtilityModel, TOL};
use crate::set_systems::Constraint;
use crate::solvers::{exact_optimal_dp, opt_surrogate, weitzman_expected, DP_LIMIT};
use crate::stats::{log_log_slope, par_map, rng_for, EvalMode, Estimate, EXACT_PROFILE_LIMIT};

/// Stand-in for the astronomically large agent values of some families.
pub const DEFAULT_SENTINEL: f64 = 1e9;

/// Candidate mechanisms a brute-force search may evaluate.
pub const BRUTE_FORCE_LIMIT: f64 = 1e6;

/// Cost-division grid steps per element for shared-cost searches.
pub const SHARE_LEVELS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    /// Standard model, i.i.d. elements whose agent value is independent of
    /// the principal's; gap shrinks like `1/n`.
    StandardImpossibility,
    /// Free-agent model with a huge agent value half the time.
    FreeAgentImpossibility,
    /// Standard model where both sides pay `c / sqrt(n)`.
    DiscountedImpossibility,
    /// Two-element shared-cost instance with gap near one half.
    SharedCostHalfGap,
    /// Shared-cost instance whose agent values are chosen after the mechanism.
    AgentAgnostic,
    RandomMatroid,
    RandomKnapsack,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 7] = [
        FamilyKind::StandardImpossibility,
        FamilyKind::FreeAgentImpossibility,
        FamilyKind::DiscountedImpossibility,
        FamilyKind::SharedCostHalfGap,
        FamilyKind::AgentAgnostic,
        FamilyKind::RandomMatroid,
        FamilyKind::RandomKnapsack,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::StandardImpossibility => "standard-impossibility",
            FamilyKind::FreeAgentImpossibility => "free-agent-impossibility",
            FamilyKind::DiscountedImpossibility => "discounted-impossibility",
            FamilyKind::SharedCostHalfGap => "shared-cost-half-gap",
            FamilyKind::AgentAgnostic => "agent-agnostic",
            FamilyKind::RandomMatroid => "random-matroid",
            FamilyKind::RandomKnapsack => "random-knapsack",
        }
    }

    pub fn is_random(self) -> bool {
        matches!(self, FamilyKind::RandomMatroid | FamilyKind::RandomKnapsack)
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FamilyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = FamilyKind::ALL.iter().map(|k| k.name()).collect();
                Error::BadParameters(format!("unknown family {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub family: FamilyKind,
    pub n: usize,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub seed: u64,
    /// Utility model for the random families.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,
}

impl FamilySpec {
    pub fn new(family: FamilyKind, n: usize) -> Self {
        FamilySpec { family, n, params: BTreeMap::new(), seed: 0, model: None }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn param(&self, key: &str, default: f64) -> f64 {
        self.params.get(key).copied().unwrap_or(default)
    }

    fn flag(&self, key: &str, default: bool) -> bool {
        self.param(key, f64::from(u8::from(default))) != 0.0
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::BadParameters(msg.into())
}

/// Integer `r` with `r^4 == n`.
fn fourth_root(n: usize) -> Option<usize> {
    let r = (n as f64).powf(0.25).round() as usize;
    (r.pow(4) == n).then_some(r)
}

fn square_root(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

fn two_point(hi: f64, p: f64) -> Vec<(f64, f64)> {
    if p >= 1.0 {
        vec![(hi, 1.0)]
    } else {
        vec![(hi, p), (0.0, 1.0 - p)]
    }
}

fn iid(n: usize, element: Element, model: UtilityModel) -> Instance {
    Instance::new(vec![element; n], Constraint::KUniform { k: 1 }, model)
}

/// Value of the no-high-value branch bound for `k` probed elements of the
/// standard-impossibility family, `n (1 - (1 - 1/n)^k) - k (1 - eps)`.
pub fn no_find_branch_value(n: usize, eps: f64, k: usize) -> f64 {
    let n = n as f64;
    n * (1.0 - (1.0 - 1.0 / n).powi(k as i32)) - k as f64 * (1.0 - eps)
}

/// Agent-agnostic element for agent cost share `share`: agent values are
/// picked against that share. Two-point laws keep each conditional mean.
pub fn agnostic_element(n: usize, cost: f64, share: f64, sentinel: f64) -> Result<Element> {
    let root = (n as f64).sqrt();
    let p = 1.0 / root;
    let atoms = if share > 0.0 {
        let big = (n * n) as f64;
        if big <= cost {
            return Err(bad("agent value n^2 must exceed the cost"));
        }
        vec![
            Atom { x: root, y: 0.0, p: 0.5 * p },
            Atom { x: root, y: 0.5 * share, p: 0.5 * p },
            Atom { x: 0.0, y: big, p: 1.0 - p },
        ]
    } else {
        if sentinel <= (n * n) as f64 {
            return Err(bad("sentinel must exceed n^2"));
        }
        let ys = [(sentinel, 0.5), (3.0 * sentinel, 0.5)];
        JointDistribution::independent(&two_point(root, p), &ys)?.atoms().to_vec()
    };
    Ok(Element { cost, atoms: JointDistribution::new(atoms)? })
}

/// Builds the instance a family spec describes.
pub fn generate_family(spec: &FamilySpec) -> Result<Instance> {
    let n = spec.n;
    let sentinel = spec.param("sentinel", DEFAULT_SENTINEL);
    match spec.family {
        FamilyKind::StandardImpossibility => {
            if n < 2 {
                return Err(bad("needs n >= 2"));
            }
            let nf = n as f64;
            let eps = spec.param("eps", 1.0 / (2.0 * nf));
            let m = spec.param("m", (nf / eps - 1e-9).ceil());
            if spec.flag("strict", true) && !(eps > 0.0 && eps <= 1.0 / (2.0 * nf) + 1e-15 && m >= nf / eps - 1e-9) {
                return Err(bad(format!("need 0 < eps <= 1/(2n) and m >= n/eps (eps {eps}, m {m})")));
            }
            if !(eps > 0.0 && eps < 1.0 && m >= 1.0) {
                return Err(bad("need 0 < eps < 1 and m >= 1"));
            }
            let atoms = JointDistribution::independent(&two_point(nf, 1.0 / nf), &two_point(m, 1.0 / m))?;
            Ok(iid(n, Element { cost: 1.0 - eps, atoms }, UtilityModel::new(ModelKind::Standard)))
        }
        FamilyKind::FreeAgentImpossibility => {
            let r = fourth_root(n).filter(|&r| r >= 2).ok_or_else(|| bad("n must be a fourth power >= 16"))?;
            let p = 1.0 / r as f64;
            let shared = spec.flag("shared_delta", false);
            let small = |i: usize| 1e-6 * if shared { 1.0 } else { 1.0 + i as f64 };
            if sentinel <= small(n) {
                return Err(bad("sentinel must exceed every small agent value"));
            }
            let xs = two_point(1.0 / (p * p), p * p);
            let elements = (0..n)
                .map(|i| {
                    let atoms = JointDistribution::independent(&xs, &[(small(i), 0.5), (sentinel, 0.5)])?;
                    Ok(Element { cost: 1.0 - p / 2.0, atoms })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Instance::new(elements, Constraint::KUniform { k: 1 }, UtilityModel::new(ModelKind::FreeAgent)))
        }
        FamilyKind::DiscountedImpossibility => {
            let m = square_root(n).filter(|&m| m >= 2).ok_or_else(|| bad("n must be a perfect square >= 4"))? as f64;
            let nf = n as f64;
            let eps = spec.param("eps", nf.powf(-0.25));
            let discount = spec.param("discount", 1.0 - 1.0 / m);
            let atoms = JointDistribution::independent(&two_point(nf, 1.0 / nf), &two_point(m, 1.0 / m))?;
            let model = UtilityModel::new(ModelKind::Standard).with_discount(discount);
            Ok(iid(n, Element { cost: 1.0 - eps, atoms }, model))
        }
        FamilyKind::SharedCostHalfGap => {
            if n != 2 {
                return Err(bad("this family has exactly 2 elements"));
            }
            let eps = spec.param("eps", 0.1);
            if !(eps > 0.0 && eps < 0.5) {
                return Err(bad("need 0 < eps < 1/2"));
            }
            let first = JointDistribution::independent(&two_point(1.0 / eps, eps), &two_point(1.0 - eps, eps))?;
            let second = JointDistribution::new(vec![Atom { x: 1.0, y: 1.0, p: 1.0 }])?;
            let c = eps * eps;
            Ok(Instance::new(
                vec![Element { cost: c, atoms: first }, Element { cost: c, atoms: second }],
                Constraint::KUniform { k: 1 },
                UtilityModel::new(ModelKind::SharedCost),
            ))
        }
        FamilyKind::AgentAgnostic => {
            let r = fourth_root(n).filter(|&r| r >= 2).ok_or_else(|| bad("n must be a fourth power >= 16"))?;
            let c = 1.0 - 2.0 / r as f64;
            let share = spec.param("share", 1.0);
            if !(0.0..=1.0).contains(&share) {
                return Err(bad("share must lie in [0, 1]"));
            }
            let e = agnostic_element(n, c, share * c, sentinel)?;
            let mut model = UtilityModel::new(ModelKind::SharedCost);
            model.cost_division = Some(vec![share * c; n]);
            Ok(iid(n, e, model))
        }
        FamilyKind::RandomMatroid | FamilyKind::RandomKnapsack => random_instance(spec),
    }
}

fn random_instance(spec: &FamilySpec) -> Result<Instance> {
    let n = spec.n;
    if n == 0 {
        return Err(bad("needs n >= 1"));
    }
    let kind = spec.model.unwrap_or(ModelKind::Standard);
    let support = spec.param("support", 3.0) as usize;
    if support == 0 {
        return Err(bad("support must be >= 1"));
    }
    let equal = spec.flag("equal_values", false);
    let mut rng = rng_for(spec.seed, n as u64);
    let grid = |rng: &mut crate::stats::Rng| f64::from(rng.gen_range(0..=40u8)) / 4.0;
    let mut elements = Vec::with_capacity(n);
    while elements.len() < n {
        let atoms: Vec<Atom> = if kind == ModelKind::Binary {
            let p = f64::from(rng.gen_range(1..=9u8)) / 10.0;
            let (x, y) = (grid(&mut rng) + 0.25, grid(&mut rng) + 0.25);
            vec![Atom { x, y: if equal { x } else { y }, p }, Atom { x: 0.0, y: 0.0, p: 1.0 - p }]
        } else {
            let k = rng.gen_range(1..=support);
            let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.iter()
                .map(|w| {
                    let x = grid(&mut rng);
                    let y = if equal { x } else { grid(&mut rng) };
                    Atom { x, y, p: w / total }
                })
                .collect()
        };
        let atoms = JointDistribution::new(atoms)?;
        let room = atoms.mean_x().min(atoms.mean_y());
        if room < 0.1 {
            continue;
        }
        let cost = room * rng.gen_range(0.05..0.6);
        elements.push(Element { cost, atoms });
    }
    let constraint = if spec.family == FamilyKind::RandomKnapsack {
        let sizes = (0..n).map(|_| f64::from(rng.gen_range(1..=10u8)) / 10.0).collect();
        Constraint::Knapsack { sizes, budget: spec.param("budget", 1.0) }
    } else {
        let blocks = spec.param("blocks", 0.0) as usize;
        if blocks == 0 {
            Constraint::KUniform { k: spec.param("k", 1.0) as usize }
        } else {
            let cap = spec.param("cap", 1.0) as usize;
            let mut parts = vec![Vec::new(); blocks.min(n)];
            let count = parts.len();
            for i in 0..n {
                parts[i % count].push(i);
            }
            Constraint::Partition { blocks: parts, caps: vec![cap; count] }
        }
    };
    let mut model = UtilityModel::new(kind);
    if kind == ModelKind::Standard {
        model.discount = spec.param("discount", 0.0);
    }
    Ok(Instance::new(elements, constraint, model))
}

/// Optimal non-delegated utility and how it was obtained.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct OptValue {
    pub estimate: Estimate,
    pub method: &'static str,
}

/// `E[OPT]` with undiscounted costs: closed form for 1-uniform, index policy
/// for matroids, exact search when small, else the truncated-value bound.
pub fn expected_opt(inst: &Instance, samples: u64, seed: u64) -> Result<OptValue> {
    let caps = CapValues::compute(inst)?;
    let mode = EvalMode::auto(inst.profile_count(), EXACT_PROFILE_LIMIT, samples, seed);
    if let Constraint::KUniform { k: 1 } = inst.constraint {
        let laws: Vec<_> = (0..inst.n()).map(|i| caps.truncated_marginal(inst, i)).collect();
        let mut levels: Vec<f64> = laws.iter().flat_map(|l| l.pairs().iter().map(|p| p.0)).collect();
        levels.push(0.0);
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        // E[max] = sum over gaps of P(max > lower end)
        let mut total = 0.0;
        for w in levels.windows(2) {
            let below: f64 =
                laws.iter().map(|l| l.pairs().iter().filter(|p| p.0 <= w[0]).map(|p| p.1).sum::<f64>()).product();
            total += (w[1] - w[0]) * (1.0 - below);
        }
        return Ok(OptValue { estimate: Estimate::exact(total), method: "max_of_truncated" });
    }
    if inst.constraint.is_matroid() {
        return Ok(OptValue { estimate: weitzman_expected(inst, &caps, mode)?, method: "index_policy" });
    }
    if inst.profile_count() * 2f64.powi(inst.n() as i32) <= DP_LIMIT {
        return Ok(OptValue { estimate: Estimate::exact(exact_optimal_dp(inst)?), method: "exact_search" });
    }
    Ok(OptValue { estimate: opt_surrogate(inst, &caps, mode)?, method: "truncated_bound" })
}

/// One per-element acceptance choice with its cost split.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassOption {
    pub element: Element,
    pub accept: Vec<bool>,
    pub agent_share: f64,
    pub principal_share: f64,
    /// Agent share recorded as a cost division (shared-cost model only).
    pub division: Option<f64>,
}

/// Interchangeable elements and the options each may take.
#[derive(Clone, Debug)]
pub struct Group {
    pub members: Vec<usize>,
    pub base: Element,
    pub options: Vec<ClassOption>,
}

#[derive(Clone, Debug)]
pub struct SearchSpace {
    pub groups: Vec<Group>,
    pub model: UtilityModel,
    pub n: usize,
}

fn shares(model: &UtilityModel, cost: f64, share_levels: usize) -> Vec<(f64, f64, Option<f64>)> {
    match model.kind {
        ModelKind::SharedCost => {
            let steps = if cost > 0.0 { share_levels.max(1) } else { 0 };
            (0..=steps)
                .map(|j| {
                    let a = if steps == 0 { 0.0 } else { cost * j as f64 / steps as f64 };
                    (a, cost - a, Some(a))
                })
                .collect()
        }
        ModelKind::FreeAgent => vec![(0.0, (1.0 - model.discount) * cost, None)],
        ModelKind::Standard | ModelKind::Binary => {
            let c = (1.0 - model.discount) * cost;
            vec![(c, c, None)]
        }
    }
}

/// Options that can matter: an empty pattern or one the agent strictly
/// never probes is inert, and accepting a zero-zero outcome changes nothing.
fn live_option(o: &ClassOption) -> bool {
    let atoms = o.element.atoms.atoms();
    let any = atoms.iter().zip(&o.accept).any(|(a, &acc)| acc && !(a.x == 0.0 && a.y == 0.0));
    let gain: f64 = atoms.iter().zip(&o.accept).filter(|p| *p.1).map(|(a, _)| a.p * a.y).sum();
    any && !(o.agent_share > 0.0 && gain < o.agent_share - TOL)
        && atoms.iter().zip(&o.accept).all(|(a, &acc)| !(acc && a.x == 0.0 && a.y == 0.0))
}

fn finish_options(mut options: Vec<ClassOption>, reduce: bool) -> Vec<ClassOption> {
    if reduce {
        options.retain(live_option);
        let mut unique: Vec<ClassOption> = Vec::with_capacity(options.len());
        for o in options {
            if !unique.contains(&o) {
                unique.push(o);
            }
        }
        options = unique;
    }
    options
}

/// Every per-outcome acceptance pattern of every element, with a grid over
/// cost divisions in the shared-cost model. Identical elements form a group.
/// With `reduce` off, inert patterns are kept (used as a soundness oracle).
pub fn pattern_space(inst: &Instance, share_levels: usize, reduce: bool) -> Result<SearchSpace> {
    if !matches!(inst.constraint, Constraint::KUniform { k: 1 }) {
        return Err(Error::UnsupportedConstraint(format!("brute force needs 1-uniform, got {}", inst.constraint.kind_name())));
    }
    let mut groups: Vec<Group> = Vec::new();
    for (i, e) in inst.elements.iter().enumerate() {
        if let Some(g) = groups.iter_mut().find(|g| g.base == *e) {
            g.members.push(i);
            continue;
        }
        let len = e.atoms.len();
        if len > 12 {
            return Err(Error::TooLarge { what: "acceptance patterns per element", size: 2f64.powi(len as i32), limit: 4096.0 });
        }
        let mut options = Vec::new();
        for (a, b, division) in shares(&inst.model, e.cost, share_levels) {
            for mask in 0..1u32 << len {
                let accept = (0..len).map(|k| mask >> k & 1 == 1).collect();
                options.push(ClassOption { element: e.clone(), accept, agent_share: a, principal_share: b, division });
            }
        }
        groups.push(Group { members: vec![i], base: e.clone(), options: finish_options(options, reduce) });
    }
    Ok(SearchSpace { groups, model: inst.model.clone(), n: inst.n() })
}

/// Agent-agnostic search: patterns depend on the principal's value only and
/// each cost division meets its own adversarial agent values.
pub fn agnostic_space(n: usize, share_levels: usize, sentinel: f64, reduce: bool) -> Result<SearchSpace> {
    let base_inst = generate_family(&FamilySpec::new(FamilyKind::AgentAgnostic, n).with("sentinel", sentinel))?;
    let cost = base_inst.elements[0].cost;
    let mut options = Vec::new();
    for (a, b, division) in shares(&base_inst.model, cost, share_levels) {
        let element = agnostic_element(n, cost, a, sentinel)?;
        for mask in 0..4u8 {
            let accept = element
                .atoms
                .atoms()
                .iter()
                .map(|atom| if atom.x > 0.0 { mask & 1 == 1 } else { mask & 2 == 2 })
                .collect();
            options.push(ClassOption { element: element.clone(), accept, agent_share: a, principal_share: b, division });
        }
    }
    Ok(SearchSpace {
        groups: vec![Group { members: (0..n).collect(), base: base_inst.elements[0].clone(), options: finish_options(options, reduce) }],
        model: base_inst.model,
        n,
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BruteOptions {
    /// Collapse interchangeable elements; off enumerates per element.
    pub symmetry: bool,
    /// Most distinct options used within one group.
    pub max_classes: usize,
    pub tie: TieBreak,
    pub limit: f64,
}

impl Default for BruteOptions {
    fn default() -> Self {
        BruteOptions { symmetry: true, max_classes: usize::MAX, tie: TieBreak::FavorPrincipal, limit: BRUTE_FORCE_LIMIT }
    }
}

#[derive(Clone, Debug)]
pub struct BruteResult {
    pub del: f64,
    pub agent: f64,
    pub instance: Instance,
    pub mechanism: Mechanism,
    pub evaluated: u64,
    /// `full` or `classes<=K` when the search was restricted.
    pub scope: String,
}

/// Allocations of one group's members to at most `k` distinct options.
fn allocations(options: usize, members: usize, k: usize) -> Vec<Vec<(usize, usize)>> {
    fn rec(start: usize, options: usize, left: usize, k: usize, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        out.push(cur.clone());
        if k == 0 || left == 0 {
            return;
        }
        for o in start..options {
            for c in 1..=left {
                cur.push((o, c));
                rec(o + 1, options, left - c, k - 1, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(0, options, members, k, &mut Vec::new(), &mut out);
    out
}

/// Number of allocations, computed without building them.
fn allocation_count(options: usize, members: usize, k: usize) -> f64 {
    // sum over j distinct options of C(options, j) * C(members, j)
    let choose = |a: usize, b: usize| -> f64 {
        if b > a {
            return 0.0;
        }
        (0..b).fold(1.0, |acc, i| acc * (a - i) as f64 / (i + 1) as f64)
    };
    (0..=k.min(options).min(members)).map(|j| choose(options, j) * choose(members, j)).sum()
}

struct ClassData {
    count: usize,
    agent_cost: f64,
    principal_cost: f64,
    /// `(prob, held index)`; `None` marks the merged rejected cell.
    cells: Vec<(f64, Option<usize>)>,
}

#[derive(Clone, Copy)]
struct Node {
    agent: f64,
    principal: f64,
}

/// Agent best response over class counts for a 1-uniform mechanism. The
/// state is the number of unprobed elements per class and the best held
/// proposal; returns (agent, principal) values.
fn class_dp(options: &[(&ClassOption, usize)], tie: TieBreak) -> (f64, f64) {
    let key = |y: f64, x: f64| (y, if tie == TieBreak::AgainstPrincipal { -x } else { x });
    let mut held: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    for (o, _) in options {
        for (a, &acc) in o.element.atoms.atoms().iter().zip(&o.accept) {
            if acc {
                held.push((a.y, a.x));
            }
        }
    }
    held.sort_by(|p, q| {
        let (a, b) = (key(p.0, p.1), key(q.0, q.1));
        a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1))
    });
    held.dedup();
    let index = |y: f64, x: f64| held.iter().position(|&h| h == (y, x)).expect("held value listed");
    let none = index(0.0, 0.0);
    let classes: Vec<ClassData> = options
        .iter()
        .map(|(o, count)| {
            let mut cells = Vec::new();
            let mut rejected = 0.0;
            for (a, &acc) in o.element.atoms.atoms().iter().zip(&o.accept) {
                if acc {
                    cells.push((a.p, Some(index(a.y, a.x))));
                } else {
                    rejected += a.p;
                }
            }
            if rejected > 0.0 {
                cells.push((rejected, None));
            }
            ClassData { count: *count, agent_cost: o.agent_share, principal_cost: o.principal_share, cells }
        })
        .collect();
    let h = held.len();
    let mut place = vec![h; classes.len()];
    for j in 1..classes.len() {
        place[j] = place[j - 1] * (classes[j - 1].count + 1);
    }
    let states = place.last().map_or(h, |p| p * (classes.last().map_or(0, |c| c.count) + 1));
    let mut memo: Vec<Option<Node>> = vec![None; states];
    let mut rem: Vec<usize> = classes.iter().map(|c| c.count).collect();
    let start: usize = rem.iter().zip(&place).map(|(r, p)| r * p).sum::<usize>() + none;

    struct Ctx<'a> {
        classes: &'a [ClassData],
        held: &'a [(f64, f64)],
        place: &'a [usize],
        tie: TieBreak,
        memo: &'a mut Vec<Option<Node>>,
    }
    fn solve(ctx: &mut Ctx<'_>, rem: &mut [usize], key: usize, hold: usize) -> Node {
        if let Some(n) = ctx.memo[key] {
            return n;
        }
        let (y, x) = ctx.held[hold];
        let mut pick = Node { agent: y, principal: x };
        let mut candidates = vec![pick];
        for j in 0..ctx.classes.len() {
            if rem[j] == 0 {
                continue;
            }
            rem[j] -= 1;
            let base = key - ctx.place[j] - hold;
            let (mut agent, mut principal) = (-ctx.classes[j].agent_cost, -ctx.classes[j].principal_cost);
            for c in 0..ctx.classes[j].cells.len() {
                let (p, target) = ctx.classes[j].cells[c];
                let next = target.map_or(hold, |t| t.max(hold));
                let child = solve(ctx, rem, base + next, next);
                agent += p * child.agent;
                principal += p * child.principal;
            }
            rem[j] += 1;
            candidates.push(Node { agent, principal });
        }
        let top = candidates.iter().map(|c| c.agent).fold(f64::NEG_INFINITY, f64::max);
        let mut first = true;
        for c in candidates.into_iter().filter(|c| c.agent >= top - TOL) {
            let better = first
                || match ctx.tie {
                    TieBreak::FavorPrincipal => c.principal > pick.principal + TOL,
                    TieBreak::AgainstPrincipal => c.principal < pick.principal - TOL,
                    TieBreak::LowestId => false,
                };
            if better {
                pick = c;
                first = false;
            }
        }
        ctx.memo[key] = Some(pick);
        pick
    }
    let mut ctx = Ctx { classes: &classes, held: &held, place: &place, tie, memo: &mut memo };
    let root = solve(&mut ctx, &mut rem, start, none);
    (root.agent, root.principal)
}

/// Concrete instance and mechanism for an assignment of options to elements;
/// unassigned elements keep their base law and accept nothing.
fn realize(space: &SearchSpace, chosen: &[Option<&ClassOption>]) -> (Instance, Mechanism) {
    let mut elements = vec![None; space.n];
    let mut accept = vec![Vec::new(); space.n];
    let mut division = vec![0.0; space.n];
    let mut slot = 0;
    for g in &space.groups {
        for &i in &g.members {
            match chosen[slot] {
                Some(o) => {
                    elements[i] = Some(o.element.clone());
                    accept[i] = o.accept.clone();
                    division[i] = o.division.unwrap_or(o.agent_share);
                }
                None => {
                    elements[i] = Some(g.base.clone());
                    accept[i] = vec![false; g.base.atoms.len()];
                    division[i] = g.base.cost;
                }
            }
            slot += 1;
        }
    }
    let elements: Vec<Element> = elements.into_iter().map(|e| e.expect("every element placed")).collect();
    let inst = Instance::new(elements, Constraint::KUniform { k: 1 }, space.model.clone());
    let shared = space.model.kind == ModelKind::SharedCost;
    let mut model_free = inst.clone();
    model_free.model.cost_division = None;
    let mech = pattern_mechanism(&model_free, accept, shared.then_some(division));
    (inst, mech)
}

/// Best deterministic single-proposal mechanism for a 1-uniform search
/// space, evaluated against the exact agent best response.
pub fn brute_force_optimal_mechanism(space: &SearchSpace, opts: &BruteOptions) -> Result<BruteResult> {
    if opts.symmetry {
        brute_symmetric(space, opts)
    } else {
        brute_per_element(space, opts)
    }
}

fn brute_symmetric(space: &SearchSpace, opts: &BruteOptions) -> Result<BruteResult> {
    if opts.tie == TieBreak::LowestId {
        return Err(Error::BadParameters("lowest-id ties break element symmetry".into()));
    }
    let count: f64 = space
        .groups
        .iter()
        .map(|g| allocation_count(g.options.len(), g.members.len(), opts.max_classes))
        .product();
    if count > opts.limit {
        return Err(Error::TooLarge { what: "brute-force mechanism candidates", size: count, limit: opts.limit });
    }
    let per_group: Vec<Vec<Vec<(usize, usize)>>> =
        space.groups.iter().map(|g| allocations(g.options.len(), g.members.len(), opts.max_classes)).collect();
    let total: usize = per_group.iter().map(Vec::len).product();
    let decode = |mut idx: usize| -> Vec<&Vec<(usize, usize)>> {
        per_group
            .iter()
            .map(|list| {
                let a = &list[idx % list.len()];
                idx /= list.len();
                a
            })
            .collect()
    };
    let values = par_map(total, |idx| {
        let alloc = decode(idx);
        let chosen: Vec<(&ClassOption, usize)> = alloc
            .iter()
            .zip(&space.groups)
            .flat_map(|(a, g)| a.iter().map(move |&(o, c)| (&g.options[o], c)))
            .collect();
        class_dp(&chosen, opts.tie)
    });
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if v.1 > values[best].1 {
            best = i;
        }
    }
    let alloc = decode(best);
    let mut chosen: Vec<Option<&ClassOption>> = Vec::with_capacity(space.n);
    for (a, g) in alloc.iter().zip(&space.groups) {
        for &(o, c) in a.iter() {
            chosen.extend(std::iter::repeat_n(Some(&g.options[o]), c));
        }
        let used: usize = a.iter().map(|p| p.1).sum();
        chosen.extend(std::iter::repeat_n(None, g.members.len() - used));
    }
    let (instance, mechanism) = realize(space, &chosen);
    let widest = space.groups.iter().map(|g| g.options.len().min(g.members.len())).max().unwrap_or(0);
    let scope = if opts.max_classes >= widest { "full".to_string() } else { format!("classes<={}", opts.max_classes) };
    Ok(BruteResult { del: values[best].1, agent: values[best].0, instance, mechanism, evaluated: total as u64, scope })
}

fn brute_per_element(space: &SearchSpace, opts: &BruteOptions) -> Result<BruteResult> {
    let slots: Vec<&Group> = space.groups.iter().flat_map(|g| std::iter::repeat_n(g, g.members.len())).collect();
    let radix: Vec<usize> = slots.iter().map(|g| g.options.len() + 1).collect();
    let total: f64 = radix.iter().map(|&r| r as f64).product();
    if total > opts.limit {
        return Err(Error::TooLarge { what: "brute-force mechanism candidates", size: total, limit: opts.limit });
    }
    let total = total as usize;
    let choose = |mut idx: usize| -> Vec<Option<&ClassOption>> {
        slots
            .iter()
            .zip(&radix)
            .map(|(g, &r)| {
                let d = idx % r;
                idx /= r;
                (d > 0).then(|| &g.options[d - 1])
            })
            .collect()
    };
    let values = par_map(total, |idx| {
        let (inst, mech) = realize(space, &choose(idx));
        best_response_dp(&inst, &mech, opts.tie).map(|s| (s.agent_value, s.principal_value))
    });
    let values: Vec<(f64, f64)> = values.into_iter().collect::<Result<_>>()?;
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if v.1 > values[best].1 {
            best = i;
        }
    }
    let (instance, mechanism) = realize(space, &choose(best));
    Ok(BruteResult {
        del: values[best].1,
        agent: values[best].0,
        instance,
        mechanism,
        evaluated: total as u64,
        scope: "per_element".into(),
    })
}

/// How a sweep finds the delegated value at each size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GapMethod {
    /// Best mechanism found by brute force.
    BruteForce { max_classes: usize },
    /// The model's constructor evaluated against its default agent.
    Constructor,
}

impl GapMethod {
    pub fn default_for(family: FamilyKind) -> Self {
        if family.is_random() {
            GapMethod::Constructor
        } else {
            GapMethod::BruteForce { max_classes: 1 }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapOptions {
    pub method: GapMethod,
    pub samples: u64,
    pub seed: u64,
    pub timing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub family: String,
    pub n: usize,
    pub e_opt: f64,
    pub e_del: f64,
    pub ratio: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub seed: u64,
    pub wall_ms: u64,
    pub scope: String,
}

impl GapRow {
    pub const CSV_HEADER: &'static str = "family,n,e_opt,e_del,ratio,ci_lo,ci_hi,seed,wall_ms,scope";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{},{},{}",
            self.family, self.n, self.e_opt, self.e_del, self.ratio, self.ci_lo, self.ci_hi, self.seed, self.wall_ms, self.scope
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapReport {
    pub rows: Vec<GapRow>,
    /// Least-squares slope of log ratio against log n.
    pub slope: Option<f64>,
}

/// Spec used for one sweep row; brute force on the free-agent family uses a
/// single shared small agent value so its elements are interchangeable.
fn row_spec(base: &FamilySpec, n: usize, method: GapMethod) -> FamilySpec {
    let mut spec = base.clone();
    spec.n = n;
    if base.family == FamilyKind::FreeAgentImpossibility && matches!(method, GapMethod::BruteForce { .. }) {
        spec.params.entry("shared_delta".into()).or_insert(1.0);
    }
    spec
}

fn gap_row(base: &FamilySpec, n: usize, opts: &GapOptions) -> Result<GapRow> {
    // Instant panics on wasm32-unknown-unknown, so the clock is only read when asked for
    let clock = opts.timing.then(Instant::now);
    let spec = row_spec(base, n, opts.method);
    let inst = generate_family(&spec)?;
    let opt = expected_opt(&inst, opts.samples, opts.seed)?;
    let (del, scope) = match opts.method {
        GapMethod::BruteForce { max_classes } => {
            let space = if spec.family == FamilyKind::AgentAgnostic {
                agnostic_space(n, SHARE_LEVELS, spec.param("sentinel", DEFAULT_SENTINEL), true)?
            } else {
                pattern_space(&inst, SHARE_LEVELS, true)?
            };
            let r = brute_force_optimal_mechanism(&space, &BruteOptions { max_classes, ..BruteOptions::default() })?;
            (Estimate::exact(r.del), r.scope)
        }
        GapMethod::Constructor => {
            let plan = BuildPlan { samples: opts.samples, seed: opts.seed };
            let mech = match inst.model.kind {
                ModelKind::Binary => build_binary_matroid(&inst, plan)?,
                ModelKind::FreeAgent => build_free_agent_ocrs(&inst, plan)?,
                ModelKind::SharedCost => build_shared_cost(&inst, plan)?,
                ModelKind::Standard => {
                    return Err(Error::BadParameters("no constructor for the standard model; use brute force".into()))
                }
            };
            let agent = default_agent(&inst, &mech);
            let mode = EvalMode::auto(mech.outcome_space(&inst).size(), EXACT_PROFILE_LIMIT, opts.samples, opts.seed);
            let report = simulate_interaction(&inst, &mech, agent, mode, 0)?;
            (report.del, mech.provenance.constructor.clone())
        }
    };
    let o = opt.estimate;
    let ratio = del.mean / o.mean;
    let (ci_lo, ci_hi) = if del.exact && o.exact {
        (ratio, ratio)
    } else {
        (del.lo() / o.hi(), del.hi() / o.lo().max(f64::MIN_POSITIVE))
    };
    Ok(GapRow {
        family: spec.family.name().to_string(),
        n,
        e_opt: o.mean,
        e_del: del.mean,
        ratio,
        ci_lo,
        ci_hi,
        seed: spec.seed,
        wall_ms: clock.map_or(0, |c| c.elapsed().as_millis() as u64),
        scope,
    })
}

/// Gap table over sizes; rows come back in the order of `ns`.
pub fn gap_sweep(base: &FamilySpec, ns: &[usize], opts: &GapOptions) -> Result<GapReport> {
    let rows: Vec<GapRow> = par_map(ns.len(), |k| gap_row(base, ns[k], opts)).into_iter().collect::<Result<_>>()?;
    let usable = rows.len() >= 2 && rows.iter().all(|r| r.ratio > 0.0);
    let slope = usable.then(|| {
        let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
        log_log_slope(&xs, &ys)
    });
    Ok(GapReport { rows, slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn family_names_round_trip() {
        for k in FamilyKind::ALL {
            assert_eq!(k.name().parse::<FamilyKind>().unwrap(), k);
        }
        assert!("nope".parse::<FamilyKind>().is_err());
    }

    #[test]
    fn standard_family_opt() {
        let inst = generate_family(&FamilySpec::new(FamilyKind::StandardImpossibility, 4)).unwrap();
        assert_eq!(inst.elements[0].cost, 0.875);
        let opt = expected_opt(&inst, 0, 0).unwrap();
        // eps n (1 - (1 - 1/n)^n) with eps = 1/8, n = 4
        let want = 0.5 * (1.0 - 0.75f64.powi(4));
        assert!(close(opt.estimate.mean, want, 1e-12), "{}", opt.estimate.mean);
        assert!(close(want, 0.341796875, 1e-15));
        let strict = FamilySpec::new(FamilyKind::StandardImpossibility, 4).with("eps", 0.5);
        assert!(generate_family(&strict).is_err());
        let loose = generate_family(&strict.with("strict", 0.0)).unwrap();
        let caps = CapValues::compute(&loose).unwrap();
        assert!(close(caps.tau_x[0], 2.0, 1e-12));
    }

    #[test]
    fn no_find_branch_is_negative_past_two() {
        for n in 2..=64 {
            let eps = 1.0 / (2.0 * n as f64);
            for k in 3..=n {
                assert!(no_find_branch_value(n, eps, k) < 0.0, "n {n} k {k}");
            }
        }
    }

    #[test]
    fn free_agent_family_at_sixteen() {
        let inst = generate_family(&FamilySpec::new(FamilyKind::FreeAgentImpossibility, 16)).unwrap();
        assert_eq!(inst.elements[0].cost, 0.75);
        let caps = CapValues::compute(&inst).unwrap();
        assert!(close(caps.tau_x[0], 1.0, 1e-12));
        assert_ne!(inst.elements[0], inst.elements[1]);
        let shared = generate_family(&FamilySpec::new(FamilyKind::FreeAgentImpossibility, 16).with("shared_delta", 1.0)).unwrap();
        assert_eq!(shared.elements[0], shared.elements[15]);
        assert!(generate_family(&FamilySpec::new(FamilyKind::FreeAgentImpossibility, 20)).is_err());
    }

    #[test]
    fn half_gap_opt_and_brute_force() {
        let inst = generate_family(&FamilySpec::new(FamilyKind::SharedCostHalfGap, 2)).unwrap();
        let opt = expected_opt(&inst, 0, 0).unwrap().estimate.mean;
        let eps: f64 = 0.1;
        assert!(close(opt, 2.0 - eps - 2.0 * eps * eps + eps.powi(3), 1e-12), "{opt}");
        let space = pattern_space(&inst, SHARE_LEVELS, true).unwrap();
        let best = brute_force_optimal_mechanism(&space, &BruteOptions::default()).unwrap();
        assert!(best.del <= 1.0 + 1e-6, "{}", best.del);
        assert_eq!(best.scope, "full");
    }

    #[test]
    fn standard_best_del_is_small() {
        let inst = generate_family(&FamilySpec::new(FamilyKind::StandardImpossibility, 4)).unwrap();
        let space = pattern_space(&inst, SHARE_LEVELS, true).unwrap();
        let best = brute_force_optimal_mechanism(&space, &BruteOptions::default()).unwrap();
        let eps = 0.125;
        assert!(best.del <= eps + eps * eps + 1e-9, "{}", best.del);
        assert_eq!(best.scope, "full");
        // the realized mechanism gives the same value under the general solver
        let check = best_response_dp(&best.instance, &best.mechanism, TieBreak::FavorPrincipal).unwrap();
        assert!(close(check.principal_value, best.del, 1e-9));
    }

    #[test]
    fn one_dominant_outcome_is_fully_delegated() {
        // a single outcome worth the same to both sides: accepting it is optimal
        let atoms = JointDistribution::new(vec![Atom { x: 3.0, y: 3.0, p: 0.5 }, Atom { x: 0.0, y: 0.0, p: 0.5 }]).unwrap();
        let inst = Instance::new(
            vec![Element { cost: 0.5, atoms }],
            Constraint::KUniform { k: 1 },
            UtilityModel::new(ModelKind::Standard),
        );
        let opt = expected_opt(&inst, 0, 0).unwrap().estimate.mean;
        let space = pattern_space(&inst, SHARE_LEVELS, true).unwrap();
        let best = brute_force_optimal_mechanism(&space, &BruteOptions::default()).unwrap();
        assert!(close(opt, 1.0, 1e-12));
        assert!(close(best.del, 1.0, 1e-12));
    }

    #[test]
    fn shared_cost_can_beat_opt() {
        // the agent carries the whole cost, so delegation gains over probing alone
        let atoms = JointDistribution::new(vec![Atom { x: 2.0, y: 2.0, p: 0.5 }, Atom { x: 0.0, y: 0.0, p: 0.5 }]).unwrap();
        let inst = Instance::new(
            vec![Element { cost: 0.5, atoms }],
            Constraint::KUniform { k: 1 },
            UtilityModel::new(ModelKind::SharedCost),
        );
        let opt = expected_opt(&inst, 0, 0).unwrap().estimate.mean;
        let best = brute_force_optimal_mechanism(&pattern_space(&inst, 4, true).unwrap(), &BruteOptions::default()).unwrap();
        assert!(close(opt, 0.5, 1e-12));
        assert!(close(best.del, 1.0, 1e-12), "{}", best.del);
        assert!(best.del / opt > 1.0);
    }

    #[test]
    fn symmetry_matches_per_element_search() {
        let cases = [
            FamilySpec::new(FamilyKind::StandardImpossibility, 2),
            FamilySpec::new(FamilyKind::StandardImpossibility, 3),
            FamilySpec::new(FamilyKind::SharedCostHalfGap, 2),
        ];
        for spec in cases {
            let inst = generate_family(&spec).unwrap();
            let levels = 4;
            let fast = brute_force_optimal_mechanism(&pattern_space(&inst, levels, true).unwrap(), &BruteOptions::default()).unwrap();
            let slow = brute_force_optimal_mechanism(
                &pattern_space(&inst, levels, false).unwrap(),
                &BruteOptions { symmetry: false, ..BruteOptions::default() },
            )
            .unwrap();
            assert!(close(fast.del, slow.del, 1e-9), "{}: {} vs {}", spec.family, fast.del, slow.del);
        }
    }

    #[test]
    fn restricted_scope_is_reported() {
        let inst = generate_family(&FamilySpec::new(FamilyKind::StandardImpossibility, 4)).unwrap();
        let space = pattern_space(&inst, SHARE_LEVELS, true).unwrap();
        let one = brute_force_optimal_mechanism(&space, &BruteOptions { max_classes: 1, ..BruteOptions::default() }).unwrap();
        let all = brute_force_optimal_mechanism(&space, &BruteOptions::default()).unwrap();
        assert_eq!(one.scope, "classes<=1");
        assert!(one.del <= all.del + 1e-12);
        assert!(one.evaluated < all.evaluated);
    }

    #[test]
    fn guard_trips_on_large_searches() {
        let inst = generate_family(&FamilySpec::new(FamilyKind::StandardImpossibility, 4)).unwrap();
        let space = pattern_space(&inst, SHARE_LEVELS, true).unwrap();
        let err = brute_force_optimal_mechanism(&space, &BruteOptions { limit: 2.0, ..BruteOptions::default() }).unwrap_err();
        assert!(err.is_guard());
        let knap = generate_family(&FamilySpec::new(FamilyKind::RandomKnapsack, 3)).unwrap();
        assert!(pattern_space(&knap, 2, true).is_err());
    }

    #[test]
    fn allocation_counts_agree() {
        for (o, m, k) in [(1, 1, 1), (3, 4, 2), (5, 3, usize::MAX), (4, 6, 1), (0, 3, 2)] {
            assert_eq!(allocations(o, m, k).len() as f64, allocation_count(o, m, k), "{o} {m} {k}");
        }
    }

    #[test]
    fn agnostic_elements_keep_means() {
        let n = 16;
        for share in [0.0, 0.25, 0.5] {
            let e = agnostic_element(n, 0.5, share, DEFAULT_SENTINEL).unwrap();
            assert!(close(e.atoms.mean_x(), 1.0, 1e-12));
        }
        let e = agnostic_element(n, 0.5, 0.5, DEFAULT_SENTINEL).unwrap();
        let at_high: f64 = e.atoms.atoms().iter().filter(|a| a.x > 0.0).map(|a| a.p * a.y).sum();
        assert!(close(at_high, 0.25 * 0.5 * 0.25, 1e-12));
        assert!(agnostic_element(n, 0.5, 0.0, 100.0).is_err());
    }

    #[test]
    fn gap_sweep_rows_and_slope() {
        let base = FamilySpec::new(FamilyKind::StandardImpossibility, 0);
        let opts = GapOptions { method: GapMethod::BruteForce { max_classes: 1 }, samples: 0, seed: 0, timing: false };
        let report = gap_sweep(&base, &[4, 8, 16], &opts).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert!(report.rows.iter().all(|r| r.wall_ms == 0 && r.ci_lo == r.ratio));
        let slope = report.slope.unwrap();
        assert!(slope < -0.5, "{slope}");
        let again = gap_sweep(&base, &[4, 8, 16], &opts).unwrap();
        assert_eq!(report.rows, again.rows);
    }

    #[test]
    fn constructor_sweep_on_random_families() {
        let mut base = FamilySpec::new(FamilyKind::RandomMatroid, 0);
        base.model = Some(ModelKind::FreeAgent);
        base.seed = 7;
        let opts = GapOptions { method: GapMethod::Constructor, samples: 2000, seed: 3, timing: false };
        let report = gap_sweep(&base, &[3, 4], &opts).unwrap();
        for r in &report.rows {
            assert!(r.ratio > 0.0 && r.ratio.is_finite());
            assert!(r.ci_lo <= r.ratio && r.ratio <= r.ci_hi);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn random_families_validate(n in 1usize..7, seed in any::<u64>(), kind in 0u8..4, knap in any::<bool>()) {
            let family = if knap { FamilyKind::RandomKnapsack } else { FamilyKind::RandomMatroid };
            let mut spec = FamilySpec::new(family, n);
            spec.seed = seed;
            spec.model = Some([ModelKind::Standard, ModelKind::Binary, ModelKind::FreeAgent, ModelKind::SharedCost][kind as usize]);
            let inst = generate_family(&spec).unwrap();
            prop_assert!(crate::model::validate_instance(&inst).is_empty());
            prop_assert_eq!(generate_family(&spec).unwrap().to_json().unwrap(), inst.to_json().unwrap());
        }

        #[test]
        fn brute_force_never_beats_opt_outside_shared_cost(n in 2usize..5) {
            let inst = generate_family(&FamilySpec::new(FamilyKind::StandardImpossibility, n)).unwrap();
            let opt = expected_opt(&inst, 0, 0).unwrap().estimate.mean;
            let best = brute_force_optimal_mechanism(&pattern_space(&inst, 1, true).unwrap(), &BruteOptions::default()).unwrap();
            prop_assert!(best.del <= opt + 1e-9);
        }
    }
}
