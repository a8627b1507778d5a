//! Greedy contention resolution: ex-ante vectors, quantile thresholds,
//! concrete greedy families and selectability certification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CapValues, Instance, Marginal, OutcomeSpace, TOL};
use crate::set_systems::{mask_to_set, Constraint};
use crate::stats::{expect_over_profiles, monte_carlo, EvalMode, Estimate};

/// Accept a capped value `z` iff `z > t`, or `z == t` and the tag is below `q`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptRule {
    pub t: f64,
    pub q: f64,
}

impl AcceptRule {
    pub fn clear_prob(&self, z: f64) -> f64 {
        if z > self.t + TOL {
            1.0
        } else if (z - self.t).abs() <= TOL {
            self.q
        } else {
            0.0
        }
    }

    pub fn clears(&self, z: f64, tag: f64) -> bool {
        z > self.t + TOL || ((z - self.t).abs() <= TOL && tag < self.q)
    }

    /// Whether an outcome capped at `cap` could ever clear.
    pub fn reachable(&self, cap: f64) -> bool {
        self.clear_prob(cap) > 0.0
    }

    /// Acceptance probability under the law of the capped value.
    pub fn mass(&self, law: &Marginal) -> f64 {
        law.pairs().iter().map(|&(z, p)| p * self.clear_prob(z)).sum()
    }

    /// Tag cut needed to keep acceptance constant on outcome cells.
    pub fn cut_for(&self, z: f64) -> Option<f64> {
        ((z - self.t).abs() <= TOL && self.q > 0.0 && self.q < 1.0).then_some(self.q)
    }
}

/// Threshold and tag probability with `P(Z > t) + q P(Z = t) = p`.
///
/// For `p > 0` the threshold is the support point with
/// `P(Z > t) < p <= P(Z >= t)`, so `q` lies in (0, 1].
pub fn quantile_threshold(law: &Marginal, p: f64) -> AcceptRule {
    let pairs = law.pairs();
    if p <= 1e-15 || pairs.is_empty() {
        return AcceptRule { t: law.max(), q: 0.0 };
    }
    let mut above = 0.0;
    for &(v, m) in pairs.iter().rev() {
        if above + m >= p - 1e-15 {
            return AcceptRule { t: v, q: ((p - above) / m).clamp(0.0, 1.0) };
        }
        above += m;
    }
    AcceptRule { t: pairs[0].0, q: 1.0 }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeClass {
    /// Size at most half the budget; any set within the budget.
    Small,
    /// Size above half the budget; at most one element.
    Big,
}

/// The downward-closed family a greedy scheme keeps its selection in.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubFamily {
    Inner { constraint: Constraint },
    KnapsackClass { sizes: Vec<f64>, budget: f64, class: SizeClass },
}

impl SubFamily {
    pub fn in_class(&self, i: usize) -> bool {
        match self {
            SubFamily::Inner { .. } => true,
            SubFamily::KnapsackClass { sizes, budget, class } => match class {
                SizeClass::Small => sizes[i] <= 0.5 * budget + TOL,
                SizeClass::Big => sizes[i] > 0.5 * budget + TOL && sizes[i] <= budget + TOL,
            },
        }
    }

    pub fn contains(&self, set: &[usize]) -> bool {
        match self {
            SubFamily::Inner { constraint } => constraint.is_feasible(set),
            SubFamily::KnapsackClass { sizes, budget, class } => {
                set.iter().all(|&i| self.in_class(i))
                    && match class {
                        SizeClass::Small => set.iter().map(|&i| sizes[i]).sum::<f64>() <= budget + TOL,
                        SizeClass::Big => set.len() <= 1,
                    }
            }
        }
    }

    pub fn is_matroid(&self) -> bool {
        match self {
            SubFamily::Inner { constraint } => constraint.is_matroid(),
            SubFamily::KnapsackClass { class, .. } => *class == SizeClass::Big,
        }
    }
}

/// One deterministic greedy scheme: whitelist, per-element rules and the
/// family accepted elements must stay in.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GreedyFamily {
    pub whitelist: Vec<bool>,
    pub rules: Vec<AcceptRule>,
    pub sub: SubFamily,
}

impl GreedyFamily {
    /// Feasible in the sub-family and whitelisted throughout.
    pub fn admits(&self, set: &[usize]) -> bool {
        set.iter().all(|&i| self.whitelist[i]) && self.sub.contains(set)
    }
}

/// A randomized greedy scheme as a weighted list of deterministic members.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GreedyOcrs {
    pub members: Vec<(f64, GreedyFamily)>,
}

/// Scale applied to an ex-ante vector before building a scheme.
pub fn ocrs_scale(c: &Constraint) -> Result<f64> {
    match c {
        Constraint::KUniform { .. } | Constraint::Partition { .. } => Ok(0.5),
        Constraint::Knapsack { .. } => Ok(0.25),
        other => Err(Error::UnsupportedConstraint(format!("no greedy scheme for {}", other.kind_name()))),
    }
}

/// Reference selectability-based guarantee for each supported kind.
pub fn reference_constant(c: &Constraint) -> Result<f64> {
    match c {
        Constraint::KUniform { .. } | Constraint::Partition { .. } => Ok(0.25),
        Constraint::Knapsack { .. } => Ok(1.5 - 2f64.sqrt()),
        other => Err(Error::UnsupportedConstraint(format!("no greedy scheme for {}", other.kind_name()))),
    }
}

/// Builds the scheme at activation probabilities `p` (already scaled).
pub fn build_greedy_ocrs(inst: &Instance, caps: &CapValues, p: &[f64]) -> Result<GreedyOcrs> {
    let n = inst.n();
    let rules: Vec<AcceptRule> = (0..n).map(|i| quantile_threshold(&caps.truncated_marginal(inst, i), p[i])).collect();
    let active: Vec<bool> = p.iter().map(|&v| v > 0.0).collect();
    match &inst.constraint {
        Constraint::KUniform { .. } | Constraint::Partition { .. } => Ok(GreedyOcrs {
            members: vec![(
                1.0,
                GreedyFamily { whitelist: active, rules, sub: SubFamily::Inner { constraint: inst.constraint.clone() } },
            )],
        }),
        Constraint::Knapsack { sizes, budget } => {
            let members = [SizeClass::Small, SizeClass::Big]
                .into_iter()
                .map(|class| {
                    let sub = SubFamily::KnapsackClass { sizes: sizes.clone(), budget: *budget, class };
                    let whitelist = (0..n).map(|i| active[i] && sub.in_class(i)).collect();
                    (0.5, GreedyFamily { whitelist, rules: rules.clone(), sub })
                })
                .collect();
            Ok(GreedyOcrs { members })
        }
        other => Err(Error::UnsupportedConstraint(format!("no greedy scheme for {}", other.kind_name()))),
    }
}

/// Per-element probability of membership in the greedy optimum of the
/// truncated values.
pub fn ex_ante_membership(inst: &Instance, caps: &CapValues, mode: EvalMode) -> Result<Vec<Estimate>> {
    let space = OutcomeSpace::plain(inst);
    let n = inst.n();
    let matroid = inst.constraint.is_matroid();
    expect_over_profiles(inst, &space, mode, n, |profile, _, out| {
        let z: Vec<f64> = (0..n).map(|i| profile.x(inst, i).min(caps.tau_x[i])).collect();
        let set = if matroid {
            inst.constraint.greedy(&z)
        } else {
            inst.constraint.max_weight_feasible(&z).map(|r| r.0).unwrap_or_default()
        };
        out.fill(0.0);
        for i in set {
            out[i] = 1.0;
        }
    })
}

/// Top-mass segments `(slope, length)` of `g(p) = E[Z; top p mass]`.
fn segments(law: &Marginal) -> Vec<(f64, f64)> {
    law.pairs().iter().rev().filter(|&&(z, _)| z > 0.0).map(|&(z, m)| (z, m)).collect()
}

/// `g(p)`: expected truncated value over the top `p` probability mass.
pub fn top_mass_value(law: &Marginal, p: f64) -> f64 {
    let mut left = p;
    let mut total = 0.0;
    for (slope, len) in segments(law) {
        let take = left.min(len);
        total += slope * take;
        left -= take;
        if left <= 0.0 {
            break;
        }
    }
    total
}

/// Maximizes `Σ g_i(p_i)` over the polytope (fractional relaxation for knapsack).
pub fn ex_ante_concave(inst: &Instance, caps: &CapValues) -> Result<Vec<f64>> {
    ex_ante_concave_masked(inst, caps, None)
}

/// Same, with elements outside `mask` pinned to zero.
pub fn ex_ante_concave_masked(inst: &Instance, caps: &CapValues, mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let n = inst.n();
    let mut segs: Vec<(usize, f64, f64)> = Vec::new();
    for i in (0..n).filter(|&i| mask.is_none_or(|m| m[i])) {
        for (slope, len) in segments(&caps.truncated_marginal(inst, i)) {
            segs.push((i, slope, len));
        }
    }
    let mut p = vec![0.0; n];
    match &inst.constraint {
        Constraint::Knapsack { sizes, budget } => {
            segs.retain(|&(i, _, _)| sizes[i] <= budget + TOL);
            let density = |&(i, slope, _): &(usize, f64, f64)| if sizes[i] <= 0.0 { f64::INFINITY } else { slope / sizes[i] };
            segs.sort_by(|a, b| density(b).total_cmp(&density(a)).then(a.0.cmp(&b.0)));
            let mut room = *budget;
            for (i, _, len) in segs {
                let take = if sizes[i] <= 0.0 { len } else { len.min(room / sizes[i]) };
                p[i] += take;
                room -= take * sizes[i];
                if room <= 0.0 {
                    break;
                }
            }
        }
        c if c.is_matroid() => {
            if let Constraint::Oracle(o) = c {
                if o.n > 16 {
                    return Err(Error::TooLarge { what: "oracle matroid allocation", size: o.n as f64, limit: 16.0 });
                }
            }
            segs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            for (i, _, len) in segs {
                let room = matroid_room(c, &p, i);
                p[i] += len.min(room).max(0.0);
            }
        }
        other => return Err(Error::UnsupportedConstraint(format!("no ex-ante solver for {}", other.kind_name()))),
    }
    for v in &mut p {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(p)
}

/// Largest increase of `p_i` that stays inside the matroid polytope.
fn matroid_room(c: &Constraint, p: &[f64], i: usize) -> f64 {
    let own = 1.0 - p[i];
    match c {
        Constraint::KUniform { k } => own.min(*k as f64 - p.iter().sum::<f64>()),
        Constraint::Partition { blocks, caps } => match blocks.iter().position(|b| b.contains(&i)) {
            Some(b) => own.min(caps[b] as f64 - blocks[b].iter().map(|&j| p[j]).sum::<f64>()),
            None => 0.0,
        },
        _ => {
            let n = p.len();
            let mut room = own;
            for mask in 1..1u64 << n {
                if mask >> i & 1 == 1 {
                    let set = mask_to_set(mask);
                    let slack = c.rank(&set) as f64 - set.iter().map(|&j| p[j]).sum::<f64>();
                    room = room.min(slack);
                }
            }
            room
        }
    }
}

/// Objective `Σ g_i(p_i)` at a given vector.
pub fn concave_objective(inst: &Instance, caps: &CapValues, p: &[f64]) -> f64 {
    (0..inst.n()).map(|i| top_mass_value(&caps.truncated_marginal(inst, i), p[i])).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SelectMode {
    Exhaustive,
    /// Greedy adversary; can only overstate selectability.
    Sampled { samples: u64, seed: u64 },
}

/// Ground-set limit for exhaustive selectability.
pub const EXHAUSTIVE_SELECTABILITY_LIMIT: usize = 8;

/// Probability, per element, that every feasible set of other active
/// elements leaves room for it. Averaged over the scheme's members; an
/// element outside a member's whitelist scores 0 in that member.
pub fn estimate_selectability(ocrs: &GreedyOcrs, p: &[f64], mode: SelectMode) -> Result<Vec<Estimate>> {
    let n = p.len();
    match mode {
        SelectMode::Exhaustive => {
            if n > EXHAUSTIVE_SELECTABILITY_LIMIT {
                return Err(Error::TooLarge {
                    what: "exhaustive selectability",
                    size: n as f64,
                    limit: EXHAUSTIVE_SELECTABILITY_LIMIT as f64,
                });
            }
            let mut out = vec![0.0; n];
            for (w, fam) in &ocrs.members {
                let feasible: Vec<bool> = (0..1u64 << n).map(|m| fam.admits(&mask_to_set(m))).collect();
                for (i, o) in out.iter_mut().enumerate() {
                    if !fam.whitelist[i] || !feasible[1 << i] {
                        continue;
                    }
                    let others: Vec<usize> = (0..n).filter(|&j| j != i && fam.whitelist[j] && p[j] > 0.0).collect();
                    let mut sel = 0.0;
                    for r in 0..1u64 << others.len() {
                        let mut prob = 1.0;
                        let mut active = 0u64;
                        for (b, &j) in others.iter().enumerate() {
                            if r >> b & 1 == 1 {
                                prob *= p[j];
                                active |= 1 << j;
                            } else {
                                prob *= 1.0 - p[j];
                            }
                        }
                        if blocks_nothing(&feasible, active, i) {
                            sel += prob;
                        }
                    }
                    *o += w * sel;
                }
            }
            Ok(out.into_iter().map(Estimate::exact).collect())
        }
        SelectMode::Sampled { samples, seed } => {
            let members = &ocrs.members;
            Ok(monte_carlo(samples, seed, n, |rng, out| {
                use rand::Rng as _;
                let draws: Vec<bool> = p.iter().map(|&v| rng.gen::<f64>() < v).collect();
                out.fill(0.0);
                for (w, fam) in members {
                    let mut order: Vec<usize> = (0..n).filter(|&j| draws[j] && fam.whitelist[j]).collect();
                    if let SubFamily::KnapsackClass { sizes, .. } = &fam.sub {
                        order.sort_by(|&a, &b| sizes[b].total_cmp(&sizes[a]).then(a.cmp(&b)));
                    }
                    for i in 0..n {
                        if !fam.whitelist[i] || !fam.admits(&[i]) {
                            continue;
                        }
                        let mut chosen: Vec<usize> = Vec::new();
                        for &j in order.iter().filter(|&&j| j != i) {
                            chosen.push(j);
                            if !fam.admits(&chosen) {
                                chosen.pop();
                            }
                        }
                        chosen.push(i);
                        if fam.admits(&chosen) {
                            out[i] += w;
                        }
                    }
                }
            }))
        }
    }
}

/// True iff every feasible subset of `active` stays feasible with `i` added.
fn blocks_nothing(feasible: &[bool], active: u64, i: usize) -> bool {
    let mut sub = active;
    loop {
        if feasible[sub as usize] && !feasible[(sub | 1 << i) as usize] {
            return false;
        }
        if sub == 0 {
            return true;
        }
        sub = (sub - 1) & active;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Element, JointDistribution, ModelKind, UtilityModel};
    use proptest::prelude::*;

    fn law(pairs: &[(f64, f64)]) -> Marginal {
        Marginal::from_pairs(pairs.iter().copied())
    }

    fn iid(n: usize, x: &[(f64, f64)], cost: f64, constraint: Constraint) -> Instance {
        let e = Element { cost, atoms: JointDistribution::independent(x, &[(10.0, 1.0)]).unwrap() };
        Instance::new(vec![e; n], constraint, UtilityModel::new(ModelKind::Standard))
    }

    #[test]
    fn quantile_examples() {
        let z = law(&[(2.0, 0.25), (0.0, 0.75)]);
        assert_eq!(quantile_threshold(&z, 0.25), AcceptRule { t: 2.0, q: 1.0 });
        let r = quantile_threshold(&z, 0.1);
        assert_eq!(r.t, 2.0);
        assert!((r.q - 0.4).abs() < 1e-15);
        assert_eq!(quantile_threshold(&z, 0.0), AcceptRule { t: 2.0, q: 0.0 });
        assert!((quantile_threshold(&z, 0.5).mass(&z) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn membership_with_ties() {
        // Z in {1 w.p. 1/2, 0}: cost 0 and cap 1
        let inst = iid(2, &[(1.0, 0.5), (0.0, 0.5)], 0.0, Constraint::KUniform { k: 1 });
        let caps = CapValues::compute(&inst).unwrap();
        let p = ex_ante_membership(&inst, &caps, EvalMode::Exact).unwrap();
        assert_eq!((p[0].mean, p[1].mean), (0.5, 0.25));
    }

    #[test]
    fn membership_dominant_element() {
        let mut inst = iid(2, &[(1.0, 0.5), (0.0, 0.5)], 0.0, Constraint::KUniform { k: 1 });
        inst.elements[0].atoms = JointDistribution::independent(&[(3.0, 1.0)], &[(10.0, 1.0)]).unwrap();
        let caps = CapValues::compute(&inst).unwrap();
        let p = ex_ante_membership(&inst, &caps, EvalMode::Exact).unwrap();
        assert_eq!((p[0].mean, p[1].mean), (1.0, 0.0));
    }

    #[test]
    fn concave_single_and_first_step() {
        let inst = iid(1, &[(4.0, 0.25), (0.0, 0.75)], 0.5, Constraint::KUniform { k: 1 });
        let caps = CapValues::compute(&inst).unwrap();
        let p = ex_ante_concave(&inst, &caps).unwrap();
        assert_eq!(p, vec![0.25]);
        // the zero segment adds nothing, so g(1) = E[Z]
        assert!((concave_objective(&inst, &caps, &[1.0]) - 0.5).abs() < 1e-15);

        let mut two = iid(2, &[(4.0, 0.5), (0.0, 0.5)], 0.0, Constraint::KUniform { k: 1 });
        two.elements[1].atoms = JointDistribution::independent(&[(1.0, 1.0)], &[(10.0, 1.0)]).unwrap();
        let caps = CapValues::compute(&two).unwrap();
        let p = ex_ante_concave(&two, &caps).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn concave_matches_grid_on_two_uniform() {
        let inst = iid(3, &[(3.0, 0.2), (1.0, 0.5), (0.0, 0.3)], 0.1, Constraint::KUniform { k: 2 });
        let caps = CapValues::compute(&inst).unwrap();
        let p = ex_ante_concave(&inst, &caps).unwrap();
        let got = concave_objective(&inst, &caps, &p);
        // g is nondecreasing, so the grid only needs the face p3 = min(1, 2 - p1 - p2)
        let steps = 1000;
        let mut best: f64 = 0.0;
        for a in 0..=steps {
            for b in 0..=steps {
                let (p1, p2) = (a as f64 / steps as f64, b as f64 / steps as f64);
                let p3 = (2.0 - p1 - p2).clamp(0.0, 1.0);
                best = best.max(concave_objective(&inst, &caps, &[p1, p2, p3]));
            }
        }
        assert!((got - best).abs() < 1e-3, "{got} vs {best}");
        assert!(got >= best - 1e-12);
    }

    #[test]
    fn concave_rejects_matching() {
        let inst = iid(2, &[(3.0, 0.5), (0.0, 0.5)], 0.1, Constraint::Matching { edges: vec![(0, 0), (0, 1)] });
        let caps = CapValues::compute(&inst).unwrap();
        assert!(matches!(ex_ante_concave(&inst, &caps), Err(Error::UnsupportedConstraint(_))));
    }

    #[test]
    fn selectability_examples() {
        let inst = iid(3, &[(3.0, 0.5), (0.0, 0.5)], 0.1, Constraint::Partition {
            blocks: vec![vec![0], vec![1], vec![2]],
            caps: vec![1, 1, 1],
        });
        let caps = CapValues::compute(&inst).unwrap();
        let p = [0.5, 0.5, 0.5];
        let ocrs = build_greedy_ocrs(&inst, &caps, &p).unwrap();
        for s in estimate_selectability(&ocrs, &p, SelectMode::Exhaustive).unwrap() {
            assert_eq!(s.mean, 1.0);
        }

        let inst = iid(2, &[(3.0, 0.5), (0.0, 0.5)], 0.1, Constraint::KUniform { k: 1 });
        let caps = CapValues::compute(&inst).unwrap();
        let p = [0.5, 0.5];
        let ocrs = build_greedy_ocrs(&inst, &caps, &p).unwrap();
        let s = estimate_selectability(&ocrs, &p, SelectMode::Exhaustive).unwrap();
        assert_eq!(s[0].mean, 0.5);
        let sampled = estimate_selectability(&ocrs, &p, SelectMode::Sampled { samples: 20_000, seed: 4 }).unwrap();
        assert!((sampled[0].mean - 0.5).abs() < 3.0 * sampled[0].std_err() + 1e-9);
    }

    #[test]
    fn single_element_single_threshold() {
        let inst = iid(1, &[(4.0, 0.25), (0.0, 0.75)], 0.5, Constraint::KUniform { k: 1 });
        let caps = CapValues::compute(&inst).unwrap();
        let ocrs = build_greedy_ocrs(&inst, &caps, &[1.0]).unwrap();
        let fam = &ocrs.members[0].1;
        assert!(fam.whitelist[0]);
        assert!(fam.rules[0].clears(2.0, 0.99));
        assert!(fam.rules[0].clears(0.0, 0.1));
    }

    fn knapsack_instance(sizes: Vec<f64>) -> Instance {
        let n = sizes.len();
        iid(n, &[(3.0, 0.5), (0.0, 0.5)], 0.1, Constraint::Knapsack { sizes, budget: 1.0 })
    }

    #[test]
    fn knapsack_classes_inside_constraint() {
        let inst = knapsack_instance(vec![0.1, 0.2, 0.3, 0.45, 0.6, 0.7, 0.9, 0.35]);
        let caps = CapValues::compute(&inst).unwrap();
        let ocrs = build_greedy_ocrs(&inst, &caps, &[0.1; 8]).unwrap();
        assert_eq!(ocrs.members.len(), 2);
        for (_, fam) in &ocrs.members {
            for m in 0..1u64 << 8 {
                let set = mask_to_set(m);
                if fam.admits(&set) {
                    assert!(inst.constraint.is_feasible(&set));
                    for i in &set {
                        let smaller: Vec<usize> = set.iter().copied().filter(|j| j != i).collect();
                        assert!(fam.admits(&smaller));
                    }
                }
            }
        }
    }

    fn normalize_into(raw: &[f64], budget: f64, weights: &[f64]) -> Vec<f64> {
        let load: f64 = raw.iter().zip(weights).map(|(p, w)| p * w).sum();
        let s = if load > budget { budget / load } else { 1.0 };
        raw.iter().map(|p| (p * s).min(1.0)).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn quantile_hits_target(
            atoms in prop::collection::vec((0.0f64..10.0, 0.05f64..1.0), 1..6),
            target in 0.0f64..1.0,
        ) {
            let total: f64 = atoms.iter().map(|a| a.1).sum();
            let z = Marginal::from_pairs(atoms.iter().map(|&(v, p)| (v, p / total)));
            let rule = quantile_threshold(&z, target);
            prop_assert!((rule.mass(&z) - target).abs() < 1e-12);
        }

        #[test]
        fn uniform_selectability_at_half_polytope(raw in prop::collection::vec(0.0f64..1.0, 6), k in 1usize..3) {
            let inst = iid(6, &[(3.0, 0.5), (0.0, 0.5)], 0.1, Constraint::KUniform { k });
            let caps = CapValues::compute(&inst).unwrap();
            let p: Vec<f64> = normalize_into(&raw, k as f64, &[1.0; 6]).iter().map(|v| 0.5 * v).collect();
            let ocrs = build_greedy_ocrs(&inst, &caps, &p).unwrap();
            for (i, s) in estimate_selectability(&ocrs, &p, SelectMode::Exhaustive).unwrap().iter().enumerate() {
                if p[i] > 0.0 {
                    prop_assert!(s.mean >= 0.25 - 1e-12);
                }
            }
        }

        #[test]
        fn membership_lies_in_polytope(xs in prop::collection::vec(0.5f64..5.0, 4)) {
            let elements: Vec<Element> = xs.iter().map(|&x| Element {
                cost: 0.05,
                atoms: JointDistribution::independent(&[(x, 0.5), (0.0, 0.5)], &[(1.0, 1.0)]).unwrap(),
            }).collect();
            let inst = Instance::new(elements, Constraint::Partition { blocks: vec![vec![0, 1], vec![2, 3]], caps: vec![1, 1] }, UtilityModel::default());
            let caps = CapValues::compute(&inst).unwrap();
            let p: Vec<f64> = ex_ante_membership(&inst, &caps, EvalMode::Exact).unwrap().iter().map(|e| e.mean).collect();
            prop_assert!(inst.constraint.in_polytope(&p, 1e-12).unwrap());
            let q = ex_ante_concave(&inst, &caps).unwrap();
            prop_assert!(inst.constraint.in_polytope(&q, 1e-12).unwrap());
            prop_assert!(concave_objective(&inst, &caps, &q) >= concave_objective(&inst, &caps, &p) - 1e-12);
        }
    }
}
