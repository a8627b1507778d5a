//! Non-delegated benchmarks: the index policy, an exact adaptive DP, the
//! truncated-value upper bound and the exogenous-order threshold strategy.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CapValues, Instance, OutcomeSpace, Profile};
use crate::ocrs::GreedyFamily;
use crate::stats::{expect_over_profiles, EvalMode, Estimate};

/// Guard on `Π support × 2^n` for the exact DP.
pub const DP_LIMIT: f64 = 1e7;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolicyRun {
    pub probed: Vec<usize>,
    pub selected: Vec<usize>,
    pub utility: f64,
}

/// Lazy matroid greedy on virtual values `min(x_i, tau_i)`.
///
/// Unprobed elements compete with their cap, probed ones with their
/// truncated value; the largest addable candidate is probed or selected
/// until nothing addable is positive. Ties go to the lowest id, except that
/// a probed value beats an equal cap (probing there gains nothing).
pub fn weitzman_policy(inst: &Instance, caps: &CapValues, profile: &Profile) -> Result<PolicyRun> {
    if !inst.constraint.is_matroid() {
        return Err(Error::NotMatroid);
    }
    let n = inst.n();
    let mut probed = vec![false; n];
    let mut taken = vec![false; n];
    let mut run = PolicyRun { probed: Vec::new(), selected: Vec::new(), utility: 0.0 };
    loop {
        let mut best: Option<(f64, usize, bool)> = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            let (value, is_probe) = if probed[i] {
                (profile.x(inst, i).min(caps.tau_x[i]), false)
            } else {
                (caps.tau_x[i], true)
            };
            if value <= 0.0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((v, _, p)) => value > v || (value == v && !is_probe && p),
            };
            if better {
                run.selected.push(i);
                let ok = inst.constraint.is_feasible(&run.selected);
                run.selected.pop();
                if ok {
                    best = Some((value, i, is_probe));
                }
            }
        }
        match best {
            None => break,
            Some((_, i, true)) => {
                probed[i] = true;
                run.probed.push(i);
                run.utility -= inst.elements[i].cost;
            }
            Some((_, i, false)) => {
                taken[i] = true;
                run.selected.push(i);
                run.utility += profile.x(inst, i);
            }
        }
    }
    Ok(run)
}

/// Expected utility of [`weitzman_policy`].
pub fn weitzman_expected(inst: &Instance, caps: &CapValues, mode: EvalMode) -> Result<Estimate> {
    if !inst.constraint.is_matroid() {
        return Err(Error::NotMatroid);
    }
    let space = OutcomeSpace::plain(inst);
    let est = expect_over_profiles(inst, &space, mode, 1, |profile, _, out| {
        out[0] = weitzman_policy(inst, caps, profile).map(|r| r.utility).unwrap_or(f64::NAN);
    })?;
    Ok(est[0])
}

/// Exact optimal expected utility by memoized search over probed sets and
/// their realized atoms; the selection is made once probing stops.
pub fn exact_optimal_dp(inst: &Instance) -> Result<f64> {
    let n = inst.n();
    let size = inst.profile_count() * 2f64.powi(n as i32);
    if size > DP_LIMIT {
        return Err(Error::TooLarge { what: "exact optimal DP", size, limit: DP_LIMIT });
    }
    let radix: Vec<u64> = inst.elements.iter().map(|e| e.atoms.len() as u64 + 1).collect();
    let mut place = vec![1u64; n];
    for i in 1..n {
        place[i] = place[i - 1] * radix[i - 1];
    }
    let mut memo: HashMap<u64, f64> = HashMap::new();
    let mut digits = vec![0usize; n];
    dp_value(inst, &place, &mut digits, 0, &mut memo)
}

fn dp_value(inst: &Instance, place: &[u64], digits: &mut [usize], key: u64, memo: &mut HashMap<u64, f64>) -> Result<f64> {
    if let Some(&v) = memo.get(&key) {
        return Ok(v);
    }
    let weights: Vec<f64> =
        digits.iter().enumerate().map(|(i, &d)| if d == 0 { 0.0 } else { inst.atom(i, d - 1).x }).collect();
    let mut best = inst.constraint.max_weight_feasible(&weights)?.1;
    for i in 0..digits.len() {
        if digits[i] != 0 {
            continue;
        }
        let e = &inst.elements[i];
        let mut v = -e.cost;
        for (a, atom) in e.atoms.atoms().iter().enumerate() {
            digits[i] = a + 1;
            v += atom.p * dp_value(inst, place, digits, key + (a as u64 + 1) * place[i], memo)?;
        }
        digits[i] = 0;
        best = best.max(v);
    }
    memo.insert(key, best);
    Ok(best)
}

/// `E[max_{S feasible} Σ_{i∈S} min(X_i, tau_i)]`, an upper bound on the
/// optimal expected utility.
pub fn opt_surrogate(inst: &Instance, caps: &CapValues, mode: EvalMode) -> Result<Estimate> {
    opt_surrogate_masked(inst, caps, None, mode)
}

/// Surrogate restricted to the elements with `mask[i]` set.
pub fn opt_surrogate_masked(inst: &Instance, caps: &CapValues, mask: Option<&[bool]>, mode: EvalMode) -> Result<Estimate> {
    let space = OutcomeSpace::plain(inst);
    let n = inst.n();
    let est = expect_over_profiles(inst, &space, mode, 1, |profile, _, out| {
        let z: Vec<f64> = (0..n)
            .map(|i| if mask.is_none_or(|m| m[i]) { profile.x(inst, i).min(caps.tau_x[i]) } else { 0.0 })
            .collect();
        out[0] = inst.constraint.max_weight_feasible(&z).map(|r| r.1).unwrap_or(f64::NAN);
    })?;
    Ok(est[0])
}

/// Exogenous-order threshold strategy: probe `i` iff its cap could clear its
/// rule and `i` is addable to the accepted set; accept iff the realized
/// capped value clears and `i` is addable. Utility is accepted `x` minus
/// `costs` over probed elements.
pub fn threshold_strategy_run(
    inst: &Instance,
    caps: &CapValues,
    family: &GreedyFamily,
    order: &[usize],
    profile: &Profile,
    costs: &[f64],
) -> PolicyRun {
    let mut run = PolicyRun { probed: Vec::new(), selected: Vec::new(), utility: 0.0 };
    for &i in order {
        if !family.whitelist[i] || !family.rules[i].reachable(caps.tau_x[i]) {
            continue;
        }
        run.selected.push(i);
        let addable = family.admits(&run.selected);
        run.selected.pop();
        if !addable {
            continue;
        }
        run.probed.push(i);
        run.utility -= costs[i];
        let z = profile.x(inst, i).min(caps.tau_x[i]);
        if family.rules[i].clears(z, profile.tag[i]) {
            run.selected.push(i);
            run.utility += profile.x(inst, i);
        }
    }
    run
}
