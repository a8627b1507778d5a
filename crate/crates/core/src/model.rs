//! Instances, value distributions, utility models, realizations and cap values.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::set_systems::Constraint;
use crate::stats::Rng;

/// Absolute tolerance for value comparisons.
pub const TOL: f64 = 1e-9;

/// Tolerance on the total probability mass of a distribution.
pub const PROB_TOL: f64 = 1e-12;

/// One joint realization `(x, y)` of the principal's and agent's values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Atom {
    pub x: f64,
    pub y: f64,
    pub p: f64,
}

impl From<[f64; 3]> for Atom {
    fn from(a: [f64; 3]) -> Self {
        Atom { x: a[0], y: a[1], p: a[2] }
    }
}

impl From<Atom> for [f64; 3] {
    fn from(a: Atom) -> Self {
        [a.x, a.y, a.p]
    }
}

/// Finite joint law of `(X, Y)` for one element.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointDistribution {
    atoms: Vec<Atom>,
}

impl JointDistribution {
    /// Validates the atoms and merges duplicates on `(x, y)`.
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        let raw = JointDistribution { atoms };
        let problems = raw.problems();
        if let Some((_, msg)) = problems.into_iter().find(|(k, _)| *k != "duplicate atoms") {
            return Err(Error::InvalidInstance(msg));
        }
        let mut merged: Vec<Atom> = Vec::with_capacity(raw.atoms.len());
        for a in raw.atoms {
            match merged.iter_mut().find(|m| m.x == a.x && m.y == a.y) {
                Some(m) => m.p += a.p,
                None => merged.push(a),
            }
        }
        Ok(JointDistribution { atoms: merged })
    }

    /// Independent product of two marginals.
    pub fn independent(xs: &[(f64, f64)], ys: &[(f64, f64)]) -> Result<Self> {
        let mut atoms = Vec::with_capacity(xs.len() * ys.len());
        for &(x, px) in xs {
            for &(y, py) in ys {
                atoms.push(Atom { x, y, p: px * py });
            }
        }
        Self::new(atoms)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mean_x(&self) -> f64 {
        self.atoms.iter().map(|a| a.p * a.x).sum()
    }

    pub fn mean_y(&self) -> f64 {
        self.atoms.iter().map(|a| a.p * a.y).sum()
    }

    pub fn marginal_x(&self) -> Marginal {
        Marginal::from_pairs(self.atoms.iter().map(|a| (a.x, a.p)))
    }

    pub fn marginal_y(&self) -> Marginal {
        Marginal::from_pairs(self.atoms.iter().map(|a| (a.y, a.p)))
    }

    fn problems(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if self.atoms.is_empty() {
            out.push(("probability sum", "no atoms".to_string()));
            return out;
        }
        let total: f64 = self.atoms.iter().map(|a| a.p).sum();
        if (total - 1.0).abs() > PROB_TOL {
            out.push(("probability sum", format!("probabilities sum to {total}")));
        }
        for a in &self.atoms {
            if !(a.p > 0.0) || !a.p.is_finite() {
                out.push(("probability positivity", format!("atom ({}, {}) has probability {}", a.x, a.y, a.p)));
            }
            if !a.x.is_finite() || !a.y.is_finite() || a.x < 0.0 || a.y < 0.0 {
                out.push(("finite values", format!("atom ({}, {}) is not finite and nonnegative", a.x, a.y)));
            }
        }
        for (i, a) in self.atoms.iter().enumerate() {
            if self.atoms[..i].iter().any(|b| b.x == a.x && b.y == a.y) {
                out.push(("duplicate atoms", format!("atom ({}, {}) appears twice", a.x, a.y)));
            }
        }
        out
    }
}

/// Finite one-dimensional law, sorted ascending by value.
#[derive(Clone, Debug, PartialEq)]
pub struct Marginal {
    pairs: Vec<(f64, f64)>,
}

impl Marginal {
    /// Merges equal values; drops zero-probability entries.
    pub fn from_pairs(it: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut pairs: Vec<(f64, f64)> = it.into_iter().filter(|&(_, p)| p > 0.0).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
        for (v, p) in pairs {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += p,
                _ => merged.push((v, p)),
            }
        }
        Marginal { pairs: merged }
    }

    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.pairs
    }

    pub fn mean(&self) -> f64 {
        self.pairs.iter().map(|(v, p)| v * p).sum()
    }

    pub fn max(&self) -> f64 {
        self.pairs.last().map_or(0.0, |p| p.0)
    }

    /// `E[(V - t)_+]`.
    pub fn excess(&self, t: f64) -> f64 {
        self.pairs.iter().map(|(v, p)| p * (v - t).max(0.0)).sum()
    }

    /// Law of `min(V, cap)`.
    pub fn capped(&self, cap: f64) -> Marginal {
        Marginal::from_pairs(self.pairs.iter().map(|&(v, p)| (v.min(cap), p)))
    }
}

/// Smallest `t` with `E[(V - t)_+] = cost`.
///
/// The excess function is piecewise linear between support points, so the
/// root is found exactly by walking breakpoints down from the maximum.
pub fn cap_value(marginal: &Marginal, cost: f64) -> Result<f64> {
    let mean = marginal.mean();
    if cost > mean + TOL || cost < 0.0 || !cost.is_finite() {
        return Err(Error::NegativeCap { cost, mean });
    }
    let pairs = marginal.pairs();
    if pairs.is_empty() {
        return Ok(0.0);
    }
    if cost == 0.0 {
        return Ok(marginal.max());
    }
    // Walk intervals [v_{j-1}, v_j] from the top; `above` is P(V >= v_j) and
    // `excess` is E[(V - v_j)_+].
    let mut above = 0.0;
    let mut excess = 0.0;
    for j in (0..pairs.len()).rev() {
        let (v, p) = pairs[j];
        above += p;
        let lower = if j > 0 { pairs[j - 1].0 } else { f64::NEG_INFINITY };
        let excess_lower = if j > 0 { excess + above * (v - lower) } else { f64::INFINITY };
        if excess_lower >= cost {
            return Ok(v - (cost - excess) / above);
        }
        excess = excess_lower;
    }
    unreachable!("the lowest interval is unbounded")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Standard,
    Binary,
    FreeAgent,
    SharedCost,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Standard => "standard",
            ModelKind::Binary => "binary",
            ModelKind::FreeAgent => "free_agent",
            ModelKind::SharedCost => "shared_cost",
        }
    }
}

/// Who pays which part of the probing costs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UtilityModel {
    pub kind: ModelKind,
    #[serde(default)]
    pub discount: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_division: Option<Vec<f64>>,
}

impl UtilityModel {
    pub fn new(kind: ModelKind) -> Self {
        UtilityModel { kind, discount: 0.0, cost_division: None }
    }

    pub fn with_discount(mut self, discount: f64) -> Self {
        self.discount = discount;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub cost: f64,
    pub atoms: JointDistribution,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Instance {
    pub elements: Vec<Element>,
    pub constraint: Constraint,
    #[serde(default)]
    pub model: UtilityModel,
}

impl Instance {
    pub fn new(elements: Vec<Element>, constraint: Constraint, model: UtilityModel) -> Self {
        Instance { elements, constraint, model }
    }

    pub fn n(&self) -> usize {
        self.elements.len()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.elements.iter().map(|e| e.cost).collect()
    }

    pub fn atom(&self, i: usize, a: usize) -> &Atom {
        &self.elements[i].atoms.atoms()[a]
    }

    /// Parses without validating; see [`validate_instance`].
    pub fn from_json_unchecked(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Parses, rejects any violation and merges duplicate atoms.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut inst = Self::from_json_unchecked(text)?;
        let report = validate_instance(&inst);
        if !report.is_empty() {
            let msgs: Vec<String> = report.iter().map(|v| v.to_string()).collect();
            return Err(Error::InvalidInstance(msgs.join("; ")));
        }
        for e in &mut inst.elements {
            e.atoms = JointDistribution::new(e.atoms.atoms().to_vec())?;
        }
        Ok(inst)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Product of support sizes, as a float to avoid overflow.
    pub fn profile_count(&self) -> f64 {
        self.elements.iter().map(|e| e.atoms.len() as f64).product()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub element: Option<usize>,
    pub kind: &'static str,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.element {
            Some(i) => write!(f, "element {i}: {}: {}", self.kind, self.detail),
            None => write!(f, "{}: {}", self.kind, self.detail),
        }
    }
}

/// Lists every violated instance invariant. An empty list means valid.
pub fn validate_instance(inst: &Instance) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |element: Option<usize>, kind: &'static str, detail: String| {
        out.push(Violation { element, kind, detail });
    };
    let n = inst.n();
    for (i, e) in inst.elements.iter().enumerate() {
        for (kind, detail) in e.atoms.problems() {
            push(Some(i), kind, detail);
        }
        if !(e.cost >= 0.0) || !e.cost.is_finite() {
            push(Some(i), "nonnegative cost", format!("cost {}", e.cost));
        }
        let (mx, my) = (e.atoms.mean_x(), e.atoms.mean_y());
        if mx - e.cost <= PROB_TOL {
            push(Some(i), "participation (principal)", format!("E[X] = {mx} does not exceed cost {}", e.cost));
        }
        if my - e.cost <= PROB_TOL {
            push(Some(i), "participation (agent)", format!("E[Y] = {my} does not exceed cost {}", e.cost));
        }
        if inst.model.kind == ModelKind::Binary {
            let atoms = e.atoms.atoms();
            let zero = atoms.iter().filter(|a| a.x == 0.0 && a.y == 0.0).count();
            if atoms.len() != 2 || zero != 1 {
                push(Some(i), "binary support", "binary elements need exactly one (0, 0) atom and one other".into());
            }
        }
    }
    let m = &inst.model;
    if !(0.0..=1.0).contains(&m.discount) {
        push(None, "discount range", format!("discount {} outside [0, 1]", m.discount));
    }
    if m.kind == ModelKind::SharedCost && m.discount != 0.0 {
        push(None, "shared cost discount", "discounts are not defined for the shared-cost model".into());
    }
    if let Some(div) = &m.cost_division {
        if m.kind != ModelKind::SharedCost {
            push(None, "cost division bounds", "cost division given for a model without cost sharing".into());
        } else if div.len() != n {
            push(None, "cost division bounds", format!("{} shares for {n} elements", div.len()));
        } else {
            for (i, (&d, e)) in div.iter().zip(&inst.elements).enumerate() {
                if !(d >= 0.0 && d <= e.cost + TOL) {
                    push(Some(i), "cost division bounds", format!("share {d} outside [0, {}]", e.cost));
                }
            }
        }
    }
    if let Err(detail) = inst.constraint.check_ground_set(n) {
        push(None, "constraint ground set", detail);
    }
    out
}

/// Realized atom index and tie-break tag per element.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub atom: Vec<usize>,
    pub tag: Vec<f64>,
}

impl Profile {
    pub fn x(&self, inst: &Instance, i: usize) -> f64 {
        inst.atom(i, self.atom[i]).x
    }

    pub fn y(&self, inst: &Instance, i: usize) -> f64 {
        inst.atom(i, self.atom[i]).y
    }
}

/// Independent draw of every element plus a uniform tag.
pub fn sample_profile(inst: &Instance, rng: &mut Rng) -> Profile {
    let n = inst.n();
    let mut profile = Profile { atom: vec![0; n], tag: vec![0.0; n] };
    sample_into(inst, rng, &mut profile);
    profile
}

pub(crate) fn sample_into(inst: &Instance, rng: &mut Rng, profile: &mut Profile) {
    for (i, e) in inst.elements.iter().enumerate() {
        let u: f64 = rng.gen();
        let atoms = e.atoms.atoms();
        let mut acc = 0.0;
        let mut pick = atoms.len() - 1;
        for (a, atom) in atoms.iter().enumerate() {
            acc += atom.p;
            if u < acc {
                pick = a;
                break;
            }
        }
        profile.atom[i] = pick;
        profile.tag[i] = rng.gen();
    }
}

/// Principal and agent cap values for every element at full cost.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CapValues {
    pub tau_x: Vec<f64>,
    #[serde(skip)]
    pub(crate) tau_y: Vec<f64>,
}

impl CapValues {
    pub fn compute(inst: &Instance) -> Result<Self> {
        let mut tau_x = Vec::with_capacity(inst.n());
        let mut tau_y = Vec::with_capacity(inst.n());
        for e in &inst.elements {
            tau_x.push(cap_value(&e.atoms.marginal_x(), e.cost)?);
            tau_y.push(cap_value(&e.atoms.marginal_y(), e.cost)?);
        }
        Ok(CapValues { tau_x, tau_y })
    }

    /// Law of the principal's truncated value for element `i`.
    pub fn truncated_marginal(&self, inst: &Instance, i: usize) -> Marginal {
        inst.elements[i].atoms.marginal_x().capped(self.tau_x[i])
    }
}

/// `min(x_i, tau_i)` for the realized atom.
pub fn truncated_value(inst: &Instance, profile: &Profile, caps: &CapValues, i: usize) -> f64 {
    profile.x(inst, i).min(caps.tau_x[i])
}

/// One cell of an element's outcome space: an atom and a slice of tag space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outcome {
    pub atom: usize,
    pub tag_lo: f64,
    pub tag_hi: f64,
    pub prob: f64,
}

impl Outcome {
    pub fn tag(&self) -> f64 {
        0.5 * (self.tag_lo + self.tag_hi)
    }
}

/// Exact finite outcome space. Atoms that sit on a randomized threshold are
/// split at the tag cut points so every acceptance rule is constant on each
/// cell.
#[derive(Clone, Debug)]
pub struct OutcomeSpace {
    pub per_element: Vec<Vec<Outcome>>,
}

impl OutcomeSpace {
    pub fn plain(inst: &Instance) -> Self {
        Self::with_cuts(inst, |_, _| Vec::new())
    }

    /// `cuts(i, a)` lists tag cut points in (0, 1) for atom `a` of element `i`.
    pub fn with_cuts(inst: &Instance, cuts: impl Fn(usize, usize) -> Vec<f64>) -> Self {
        let per_element = inst
            .elements
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let mut list = Vec::new();
                for (a, atom) in e.atoms.atoms().iter().enumerate() {
                    let mut pts: Vec<f64> = cuts(i, a).into_iter().filter(|&q| q > 0.0 && q < 1.0).collect();
                    pts.sort_by(f64::total_cmp);
                    pts.dedup();
                    let mut lo = 0.0;
                    for hi in pts.into_iter().chain(std::iter::once(1.0)) {
                        list.push(Outcome { atom: a, tag_lo: lo, tag_hi: hi, prob: atom.p * (hi - lo) });
                        lo = hi;
                    }
                }
                list
            })
            .collect();
        OutcomeSpace { per_element }
    }

    pub fn n(&self) -> usize {
        self.per_element.len()
    }

    pub fn size(&self) -> f64 {
        self.per_element.iter().map(|v| v.len() as f64).product()
    }

    /// Decodes a mixed-radix index (element 0 least significant) into a
    /// profile and outcome digits; returns the probability.
    pub fn fill(&self, mut idx: u64, profile: &mut Profile, digits: &mut [usize]) -> f64 {
        let mut prob = 1.0;
        for (i, list) in self.per_element.iter().enumerate() {
            let d = (idx % list.len() as u64) as usize;
            idx /= list.len() as u64;
            let o = &list[d];
            digits[i] = d;
            profile.atom[i] = o.atom;
            profile.tag[i] = o.tag();
            prob *= o.prob;
        }
        prob
    }

    /// Cell containing a sampled `(atom, tag)`.
    pub fn locate(&self, i: usize, atom: usize, tag: f64) -> usize {
        self.per_element[i]
            .iter()
            .position(|o| o.atom == atom && tag >= o.tag_lo && tag < o.tag_hi)
            .or_else(|| self.per_element[i].iter().rposition(|o| o.atom == atom))
            .expect("atom index in range")
    }

    pub fn empty_profile(&self) -> Profile {
        Profile { atom: vec![0; self.n()], tag: vec![0.0; self.n()] }
    }
}
