//! Downward-closed set systems: feasibility, max-weight feasible sets,
//! enumeration and matroid polytope membership.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TOL;

/// Default cap on the ground-set size for enumeration.
pub const ENUMERATION_LIMIT: usize = 20;

const MAX_DENOMINATOR: u64 = 1_000_000;
const DP_CELL_LIMIT: u64 = 20_000_000;
const BRANCH_AND_BOUND_LIMIT: usize = 60;

/// Independence predicate over element ids, trusted to define a matroid.
#[derive(Clone)]
pub struct MatroidOracle {
    pub n: usize,
    pred: Arc<dyn Fn(&[usize]) -> bool + Send + Sync>,
}

impl MatroidOracle {
    pub fn new(n: usize, pred: impl Fn(&[usize]) -> bool + Send + Sync + 'static) -> Self {
        MatroidOracle { n, pred: Arc::new(pred) }
    }

    pub fn independent(&self, set: &[usize]) -> bool {
        (self.pred)(set)
    }
}

impl fmt::Debug for MatroidOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MatroidOracle {{ n: {} }}", self.n)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    KUniform { k: usize },
    Partition { blocks: Vec<Vec<usize>>, caps: Vec<usize> },
    Knapsack { sizes: Vec<f64>, budget: f64 },
    /// Element `i` is edge `edges[i] = (left, right)` of a bipartite graph.
    Matching { edges: Vec<(usize, usize)> },
    #[serde(skip)]
    Oracle(MatroidOracle),
}

impl Constraint {
    pub fn is_matroid(&self) -> bool {
        matches!(self, Constraint::KUniform { .. } | Constraint::Partition { .. } | Constraint::Oracle(_))
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Constraint::KUniform { .. } => "k_uniform",
            Constraint::Partition { .. } => "partition",
            Constraint::Knapsack { .. } => "knapsack",
            Constraint::Matching { .. } => "matching",
            Constraint::Oracle(_) => "matroid_oracle",
        }
    }

    pub(crate) fn check_ground_set(&self, n: usize) -> std::result::Result<(), String> {
        match self {
            Constraint::KUniform { .. } => Ok(()),
            Constraint::Partition { blocks, caps } => {
                if blocks.len() != caps.len() {
                    return Err(format!("{} blocks but {} capacities", blocks.len(), caps.len()));
                }
                let mut seen = vec![false; n];
                for &i in blocks.iter().flatten() {
                    if i >= n || seen[i] {
                        return Err(format!("element {i} is out of range or in two blocks"));
                    }
                    seen[i] = true;
                }
                match seen.iter().position(|s| !s) {
                    Some(i) => Err(format!("element {i} is in no block")),
                    None => Ok(()),
                }
            }
            Constraint::Knapsack { sizes, budget } => {
                if sizes.len() != n {
                    return Err(format!("{} sizes for {n} elements", sizes.len()));
                }
                if sizes.iter().chain(std::iter::once(budget)).any(|s| !(*s >= 0.0) || !s.is_finite()) {
                    return Err("sizes and budget must be finite and nonnegative".into());
                }
                Ok(())
            }
            Constraint::Matching { edges } => {
                if edges.len() == n {
                    Ok(())
                } else {
                    Err(format!("{} edges for {n} elements", edges.len()))
                }
            }
            Constraint::Oracle(o) => {
                if o.n == n {
                    Ok(())
                } else {
                    Err(format!("oracle over {} elements for {n} elements", o.n))
                }
            }
        }
    }

    pub fn is_feasible(&self, set: &[usize]) -> bool {
        match self {
            Constraint::KUniform { k } => set.len() <= *k,
            Constraint::Partition { blocks, caps } => {
                let mut used = vec![0usize; blocks.len()];
                for &i in set {
                    match blocks.iter().position(|b| b.contains(&i)) {
                        Some(b) => {
                            used[b] += 1;
                            if used[b] > caps[b] {
                                return false;
                            }
                        }
                        None => return false,
                    }
                }
                true
            }
            Constraint::Knapsack { sizes, budget } => set.iter().map(|&i| sizes[i]).sum::<f64>() <= budget + TOL,
            Constraint::Matching { edges } => {
                for (a, &i) in set.iter().enumerate() {
                    for &j in &set[..a] {
                        if edges[i].0 == edges[j].0 || edges[i].1 == edges[j].1 {
                            return false;
                        }
                    }
                }
                true
            }
            Constraint::Oracle(o) => o.independent(set),
        }
    }

    /// Feasibility of the set encoded by a bitmask.
    pub fn is_feasible_mask(&self, mask: u64) -> bool {
        self.is_feasible(&mask_to_set(mask))
    }

    /// Exact maximum-weight feasible set. Nonpositive weights are never
    /// selected. Matroid ties go to the lowest id.
    pub fn max_weight_feasible(&self, weights: &[f64]) -> Result<(Vec<usize>, f64)> {
        let (mut set, total) = match self {
            Constraint::Knapsack { sizes, budget } => knapsack_max(sizes, *budget, weights)?,
            Constraint::Matching { edges } => matching_max(edges, weights),
            _ => {
                let set = self.greedy(weights);
                let total = set.iter().map(|&i| weights[i]).sum();
                (set, total)
            }
        };
        set.sort_unstable();
        Ok((set, total))
    }

    /// Greedy by descending weight then ascending id, positive weights only.
    pub fn greedy(&self, weights: &[f64]) -> Vec<usize> {
        let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
        order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
        let mut set = Vec::new();
        for i in order {
            set.push(i);
            if !self.is_feasible(&set) {
                set.pop();
            }
        }
        set
    }

    /// Every feasible set over `0..n` as a bitmask, ∅ included.
    pub fn enumerate_feasible(&self, n: usize) -> Result<Vec<u64>> {
        self.enumerate_feasible_limit(n, ENUMERATION_LIMIT)
    }

    pub fn enumerate_feasible_limit(&self, n: usize, limit: usize) -> Result<Vec<u64>> {
        if n > limit || n >= 63 {
            return Err(Error::TooLarge { what: "feasible-set enumeration", size: n as f64, limit: limit as f64 });
        }
        Ok((0..1u64 << n).filter(|&m| self.is_feasible_mask(m)).collect())
    }

    /// Matroid rank of `set` (size of a largest independent subset).
    pub fn rank(&self, set: &[usize]) -> usize {
        let mut indep = Vec::new();
        for &i in set {
            indep.push(i);
            if !self.is_feasible(&indep) {
                indep.pop();
            }
        }
        indep.len()
    }

    /// Membership of `p` in the polytope: rank inequalities over every
    /// subset for matroids, the size inequality for knapsack.
    pub fn in_polytope(&self, p: &[f64], tol: f64) -> Result<bool> {
        if p.iter().any(|&v| v < -tol || v > 1.0 + tol) {
            return Ok(false);
        }
        match self {
            Constraint::Knapsack { sizes, budget } => {
                Ok(sizes.iter().zip(p).map(|(s, v)| s * v).sum::<f64>() <= budget + tol)
            }
            Constraint::Matching { edges } => {
                let mut load = std::collections::BTreeMap::new();
                for (e, v) in edges.iter().zip(p) {
                    *load.entry((0, e.0)).or_insert(0.0) += v;
                    *load.entry((1, e.1)).or_insert(0.0) += v;
                }
                Ok(load.values().all(|&l| l <= 1.0 + tol))
            }
            _ => {
                let n = p.len();
                if n > ENUMERATION_LIMIT {
                    return Err(Error::TooLarge { what: "rank inequalities", size: n as f64, limit: ENUMERATION_LIMIT as f64 });
                }
                for mask in 1..1u64 << n {
                    let set = mask_to_set(mask);
                    let mass: f64 = set.iter().map(|&i| p[i]).sum();
                    if mass > self.rank(&set) as f64 + tol {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
        }
    }
}

pub fn mask_to_set(mask: u64) -> Vec<usize> {
    (0..64).filter(|&i| mask >> i & 1 == 1).collect()
}

pub fn set_to_mask(set: &[usize]) -> u64 {
    set.iter().fold(0, |m, &i| m | 1 << i)
}

/// Best rational approximation with denominator at most `max_den`.
fn rational(x: f64, max_den: u64) -> Option<(u64, u64)> {
    let (mut h0, mut h1, mut k0, mut k1) = (0u64, 1u64, 1u64, 0u64);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        if a > 1e15 {
            break;
        }
        let a = a as u64;
        let k2 = a.checked_mul(k1)?.checked_add(k0)?;
        if k2 > max_den {
            break;
        }
        let h2 = a.checked_mul(h1)?.checked_add(h0)?;
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        if (h1 as f64 / k1 as f64 - x).abs() <= 1e-12 * x.max(1.0) {
            return Some((h1, k1));
        }
        let frac = r - a as f64;
        if frac < 1e-15 {
            break;
        }
        r = 1.0 / frac;
    }
    if k1 > 0 && (h1 as f64 / k1 as f64 - x).abs() <= 1e-12 * x.max(1.0) {
        Some((h1, k1))
    } else {
        None
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Integer rescaling of sizes and budget, if one exists within the cap.
fn integer_scale(sizes: &[f64], budget: f64) -> Option<(Vec<u64>, u64)> {
    let mut den = 1u64;
    for &s in sizes.iter().chain(std::iter::once(&budget)) {
        let (_, d) = rational(s, MAX_DENOMINATOR)?;
        den = den / gcd(den, d) * d;
        if den > MAX_DENOMINATOR {
            return None;
        }
    }
    let scale = |s: f64| (s * den as f64).round() as u64;
    Some((sizes.iter().map(|&s| scale(s)).collect(), (budget * den as f64 + 1e-6).floor() as u64))
}

fn knapsack_max(sizes: &[f64], budget: f64, weights: &[f64]) -> Result<(Vec<usize>, f64)> {
    let items: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0 && sizes[i] <= budget + TOL).collect();
    if items.is_empty() {
        return Ok((Vec::new(), 0.0));
    }
    if let Some((isz, cap)) = integer_scale(sizes, budget) {
        if (items.len() as u64) * (cap + 1) <= DP_CELL_LIMIT {
            return Ok(knapsack_dp(&items, &isz, cap, weights));
        }
    }
    if items.len() <= BRANCH_AND_BOUND_LIMIT {
        return Ok(knapsack_branch_and_bound(&items, sizes, budget, weights));
    }
    Err(Error::UnsupportedExact(format!(
        "{} items with sizes that do not rescale to denominators at most {MAX_DENOMINATOR}",
        items.len()
    )))
}

fn knapsack_dp(items: &[usize], isz: &[u64], cap: u64, weights: &[f64]) -> (Vec<usize>, f64) {
    let w = cap as usize + 1;
    // best[c] = best weight with capacity c using the items so far
    let mut best = vec![0.0f64; w];
    let mut take = vec![false; items.len() * w];
    for (k, &i) in items.iter().enumerate() {
        let s = isz[i] as usize;
        for c in (s..w).rev() {
            let cand = best[c - s] + weights[i];
            if cand > best[c] + 1e-12 {
                best[c] = cand;
                take[k * w + c] = true;
            }
        }
    }
    let mut set = Vec::new();
    let mut c = w - 1;
    for k in (0..items.len()).rev() {
        if take[k * w + c] {
            set.push(items[k]);
            c -= isz[items[k]] as usize;
        }
    }
    let total = set.iter().map(|&i| weights[i]).sum();
    (set, total)
}

fn knapsack_branch_and_bound(items: &[usize], sizes: &[f64], budget: f64, weights: &[f64]) -> (Vec<usize>, f64) {
    let mut order = items.to_vec();
    let density = |i: usize| if sizes[i] <= 0.0 { f64::INFINITY } else { weights[i] / sizes[i] };
    order.sort_by(|&a, &b| density(b).total_cmp(&density(a)).then(a.cmp(&b)));

    struct Search<'a> {
        order: &'a [usize],
        sizes: &'a [f64],
        weights: &'a [f64],
        best: f64,
        best_set: Vec<usize>,
        cur: Vec<usize>,
    }
    impl Search<'_> {
        fn bound(&self, k: usize, room: f64, value: f64) -> f64 {
            let mut room = room;
            let mut v = value;
            for &i in &self.order[k..] {
                if self.sizes[i] <= room {
                    room -= self.sizes[i];
                    v += self.weights[i];
                } else {
                    return v + self.weights[i] * room / self.sizes[i];
                }
            }
            v
        }
        fn go(&mut self, k: usize, room: f64, value: f64) {
            if value > self.best + 1e-12 {
                self.best = value;
                self.best_set = self.cur.clone();
            }
            if k == self.order.len() || self.bound(k, room, value) <= self.best + 1e-12 {
                return;
            }
            let i = self.order[k];
            if self.sizes[i] <= room + TOL {
                self.cur.push(i);
                self.go(k + 1, room - self.sizes[i], value + self.weights[i]);
                self.cur.pop();
            }
            self.go(k + 1, room, value);
        }
    }
    let mut s = Search { order: &order, sizes, weights, best: 0.0, best_set: Vec::new(), cur: Vec::new() };
    s.go(0, budget, 0.0);
    (s.best_set, s.best)
}

/// Maximum-weight bipartite matching by repeated best augmenting paths
/// (Bellman-Ford on the residual graph); stops when no path gains weight.
fn matching_max(edges: &[(usize, usize)], weights: &[f64]) -> (Vec<usize>, f64) {
    let left = edges.iter().map(|e| e.0 + 1).max().unwrap_or(0);
    let right = edges.iter().map(|e| e.1 + 1).max().unwrap_or(0);
    // nodes: source 0, left 1..=left, right after, sink last
    let sink = 1 + left + right;
    let nodes = sink + 1;
    let mut matched = vec![false; edges.len()];
    let mut left_used = vec![false; left];
    let mut right_used = vec![false; right];
    loop {
        // residual arcs: (from, to, gain, kind)
        let mut arcs: Vec<(usize, usize, f64, isize)> = Vec::new();
        for (u, used) in left_used.iter().enumerate() {
            if !used {
                arcs.push((0, 1 + u, 0.0, -1));
            }
        }
        for (v, used) in right_used.iter().enumerate() {
            if !used {
                arcs.push((1 + left + v, sink, 0.0, -1));
            }
        }
        for (e, &(u, v)) in edges.iter().enumerate() {
            if weights[e] <= 0.0 {
                continue;
            }
            if matched[e] {
                arcs.push((1 + left + v, 1 + u, -weights[e], e as isize));
            } else {
                arcs.push((1 + u, 1 + left + v, weights[e], e as isize));
            }
        }
        let mut dist = vec![f64::NEG_INFINITY; nodes];
        let mut via: Vec<Option<usize>> = vec![None; nodes];
        dist[0] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for (a, &(from, to, gain, _)) in arcs.iter().enumerate() {
                if dist[from] > f64::NEG_INFINITY && dist[from] + gain > dist[to] + 1e-12 {
                    dist[to] = dist[from] + gain;
                    via[to] = Some(a);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        if dist[sink] <= 1e-12 {
            break;
        }
        let mut node = sink;
        while node != 0 {
            let (from, _, _, kind) = arcs[via[node].expect("path to sink")];
            if kind >= 0 {
                let e = kind as usize;
                matched[e] = !matched[e];
            } else if from == 0 {
                left_used[node - 1] = true;
            } else {
                right_used[from - 1 - left] = true;
            }
            node = from;
        }
    }
    let set: Vec<usize> = (0..edges.len()).filter(|&e| matched[e]).collect();
    let total = set.iter().map(|&e| weights[e]).sum();
    (set, total)
}
