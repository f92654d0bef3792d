//! Triangular membership functions, rule bases and the normalized fuzzy basis.
//!
//! With a singleton fuzzifier, product inference and center-average
//! defuzzification, a fuzzy system with adjustable consequent centers `theta`
//! reduces to `theta . basis(x)` where
//!
//! ```text
//! basis_l(x) = prod_i mu_{l,i}(x_i) / sum_k prod_i mu_{k,i}(x_i)
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FuzzyError {
    #[error("membership breakpoints must satisfy a <= b <= c and be finite (got {a}, {b}, {c})")]
    InvalidMembership { a: f64, b: f64, c: f64 },
    #[error("universe must satisfy lo < hi (got [{lo}, {hi}])")]
    InvalidUniverse { lo: f64, hi: f64 },
    #[error("a partition needs at least 2 sets, got {0}")]
    TooFewSets(usize),
    #[error("set {index} of `{variable}` does not intersect its universe")]
    SetOutsideUniverse { variable: String, index: usize },
    #[error("rule {rule}: antecedent {detail}")]
    BadAntecedent { rule: usize, detail: String },
    #[error("rule {rule}: consequent index {index} out of range for {dim} parameters")]
    BadConsequent { rule: usize, index: usize, dim: usize },
    #[error("no rule fires near {point:?}")]
    Uncovered { point: Vec<f64> },
    #[error("total firing strength is zero at {0:?}")]
    ZeroFiring(Vec<f64>),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("parameter {index} = {value} lies outside [{lo}, {hi}]")]
    OutOfBounds { index: usize, value: f64, lo: f64, hi: f64 },
    #[error("non-finite fuzzy input")]
    NonFinite,
}

/// Triangle with feet `a`, `c` and peak `b`. `a == b` or `b == c` gives a
/// one-sided (shoulder) set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangularMF {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl TriangularMF {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self, FuzzyError> {
        if !(a.is_finite() && b.is_finite() && c.is_finite()) || a > b || b > c {
            return Err(FuzzyError::InvalidMembership { a, b, c });
        }
        Ok(Self { a, b, c })
    }

    pub fn eval(&self, x: f64) -> f64 {
        mf_eval(self, x)
    }
}

/// Membership degree of `x`; always in `[0, 1]`.
pub fn mf_eval(mf: &TriangularMF, x: f64) -> f64 {
    let TriangularMF { a, b, c } = *mf;
    if x == b {
        1.0
    } else if x <= a || x >= c {
        0.0
    } else if x < b {
        (x - a) / (b - a)
    } else {
        (c - x) / (c - b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinguisticVariable {
    pub name: String,
    pub universe: (f64, f64),
    pub mfs: Vec<TriangularMF>,
}

impl LinguisticVariable {
    pub fn new(name: impl Into<String>, universe: (f64, f64), mfs: Vec<TriangularMF>) -> Result<Self, FuzzyError> {
        let name = name.into();
        let (lo, hi) = universe;
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(FuzzyError::InvalidUniverse { lo, hi });
        }
        for (index, mf) in mfs.iter().enumerate() {
            TriangularMF::new(mf.a, mf.b, mf.c)?;
            if mf.c < lo || mf.a > hi {
                return Err(FuzzyError::SetOutsideUniverse { variable: name, index });
            }
        }
        Ok(Self { name, universe, mfs })
    }

    pub fn len(&self) -> usize {
        self.mfs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mfs.is_empty()
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.universe.0, self.universe.1)
    }

    /// Memberships of the clamped input in every set, written into `out`.
    pub fn memberships_into(&self, x: f64, out: &mut [f64]) {
        let x = self.clamp(x);
        for (o, mf) in out.iter_mut().zip(&self.mfs) {
            *o = mf_eval(mf, x);
        }
    }

    pub fn memberships(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.mfs.len()];
        self.memberships_into(x, &mut out);
        out
    }

    /// Stretch the universe and every set about the universe center.
    pub fn scaled(&self, scale: f64) -> Result<Self, FuzzyError> {
        let (lo, hi) = self.universe;
        let mid = 0.5 * (lo + hi);
        let map = |x: f64| mid + scale * (x - mid);
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(FuzzyError::InvalidUniverse { lo: map(lo), hi: map(hi) });
        }
        let mfs =
            self.mfs.iter().map(|m| TriangularMF::new(map(m.a), map(m.b), map(m.c))).collect::<Result<Vec<_>, _>>()?;
        Self::new(self.name.clone(), (map(lo), map(hi)), mfs)
    }

    fn breakpoints(&self) -> Vec<f64> {
        let (lo, hi) = self.universe;
        let mut pts: Vec<f64> =
            self.mfs.iter().flat_map(|m| [m.a, m.b, m.c]).chain([lo, hi]).filter(|p| (lo..=hi).contains(p)).collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }
}

/// `count` triangles with evenly spaced peaks; neighbouring peaks are the feet,
/// and the two end sets are shoulders so memberships sum to one on the universe.
pub fn uniform_partition(
    name: impl Into<String>,
    universe: (f64, f64),
    count: usize,
) -> Result<LinguisticVariable, FuzzyError> {
    if count < 2 {
        return Err(FuzzyError::TooFewSets(count));
    }
    let (lo, hi) = universe;
    if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
        return Err(FuzzyError::InvalidUniverse { lo, hi });
    }
    let step = (hi - lo) / (count - 1) as f64;
    let peak = |i: usize| if i == count - 1 { hi } else { lo + i as f64 * step };
    let mfs = (0..count)
        .map(|i| {
            let b = peak(i);
            let a = if i == 0 { b } else { peak(i - 1) };
            let c = if i == count - 1 { b } else { peak(i + 1) };
            TriangularMF::new(a, b, c)
        })
        .collect::<Result<Vec<_>, _>>()?;
    LinguisticVariable::new(name, universe, mfs)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    /// One set index per input variable.
    pub antecedent: Vec<usize>,
    /// Index into the parameter vector.
    pub consequent: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleBase {
    input_vars: Vec<LinguisticVariable>,
    rules: Vec<Rule>,
    theta_dim: usize,
    offsets: Vec<usize>,
}

impl RuleBase {
    /// Validates indices and checks that some rule fires everywhere on the
    /// product of the input universes.
    pub fn new(input_vars: Vec<LinguisticVariable>, rules: Vec<Rule>, theta_dim: usize) -> Result<Self, FuzzyError> {
        for (r, rule) in rules.iter().enumerate() {
            if rule.antecedent.len() != input_vars.len() {
                return Err(FuzzyError::BadAntecedent {
                    rule: r,
                    detail: format!("has {} terms for {} inputs", rule.antecedent.len(), input_vars.len()),
                });
            }
            for (v, (&idx, var)) in rule.antecedent.iter().zip(&input_vars).enumerate() {
                if idx >= var.len() {
                    return Err(FuzzyError::BadAntecedent {
                        rule: r,
                        detail: format!("input {v} refers to set {idx} of {}", var.len()),
                    });
                }
            }
            if rule.consequent >= theta_dim {
                return Err(FuzzyError::BadConsequent { rule: r, index: rule.consequent, dim: theta_dim });
            }
        }
        let mut offsets = Vec::with_capacity(input_vars.len() + 1);
        let mut acc = 0;
        for var in &input_vars {
            offsets.push(acc);
            acc += var.len();
        }
        offsets.push(acc);
        let base = Self { input_vars, rules, theta_dim, offsets };
        base.check_coverage()?;
        Ok(base)
    }

    /// Every combination of one set per input, one rule each, with the
    /// consequent index equal to the rule index. Rules are ordered with the
    /// last input varying fastest.
    pub fn complete_grid(input_vars: Vec<LinguisticVariable>) -> Result<Self, FuzzyError> {
        let sizes: Vec<usize> = input_vars.iter().map(|v| v.len()).collect();
        let total: usize = sizes.iter().product();
        let rules = (0..total)
            .map(|k| {
                let mut rem = k;
                let mut antecedent = vec![0; sizes.len()];
                for (slot, &n) in antecedent.iter_mut().zip(&sizes).rev() {
                    *slot = rem % n;
                    rem /= n;
                }
                Rule { antecedent, consequent: k }
            })
            .collect();
        Self::new(input_vars, rules, total)
    }

    pub fn input_vars(&self) -> &[LinguisticVariable] {
        &self.input_vars
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn theta_dim(&self) -> usize {
        self.theta_dim
    }

    pub fn n_rules(&self) -> usize {
        self.rules.len()
    }

    /// Scratch length needed by [`RuleBase::basis_into`].
    pub fn scratch_len(&self) -> usize {
        self.offsets[self.input_vars.len()] + self.rules.len()
    }

    /// Normalized basis with one entry per parameter: rule strengths are
    /// accumulated onto their consequent index, then divided by the total.
    pub fn basis_into(&self, inputs: &[f64], scratch: &mut [f64], out: &mut [f64]) -> Result<(), FuzzyError> {
        if inputs.len() != self.input_vars.len() {
            return Err(FuzzyError::DimensionMismatch { expected: self.input_vars.len(), got: inputs.len() });
        }
        if out.len() != self.theta_dim {
            return Err(FuzzyError::DimensionMismatch { expected: self.theta_dim, got: out.len() });
        }
        if inputs.iter().any(|x| !x.is_finite()) {
            return Err(FuzzyError::NonFinite);
        }
        let n_mu = self.offsets[self.input_vars.len()];
        let (mu, _) = scratch.split_at_mut(n_mu);
        for (v, var) in self.input_vars.iter().enumerate() {
            var.memberships_into(inputs[v], &mut mu[self.offsets[v]..self.offsets[v + 1]]);
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut total = 0.0;
        for rule in &self.rules {
            let mut strength = 1.0;
            for (v, &idx) in rule.antecedent.iter().enumerate() {
                strength *= mu[self.offsets[v] + idx];
            }
            out[rule.consequent] += strength;
            total += strength;
        }
        if !(total > 0.0) {
            return Err(FuzzyError::ZeroFiring(inputs.to_vec()));
        }
        let inv = 1.0 / total;
        out.iter_mut().for_each(|o| *o *= inv);
        Ok(())
    }

    fn check_coverage(&self) -> Result<(), FuzzyError> {
        if self.input_vars.is_empty() {
            return if self.rules.is_empty() { Err(FuzzyError::Uncovered { point: vec![] }) } else { Ok(()) };
        }
        // Between consecutive breakpoints the set of active memberships is
        // constant, so checking every breakpoint and every gap midpoint covers
        // the whole universe.
        let cells: Vec<Vec<(f64, Vec<bool>)>> = self
            .input_vars
            .iter()
            .map(|var| {
                let pts = var.breakpoints();
                let mut probes = Vec::with_capacity(2 * pts.len());
                for (i, &p) in pts.iter().enumerate() {
                    probes.push(p);
                    if let Some(&q) = pts.get(i + 1) {
                        probes.push(0.5 * (p + q));
                    }
                }
                probes.into_iter().map(|x| (x, var.mfs.iter().map(|m| mf_eval(m, x) > 0.0).collect())).collect()
            })
            .collect();
        let mut idx = vec![0usize; cells.len()];
        loop {
            let covered =
                self.rules.iter().any(|r| r.antecedent.iter().enumerate().all(|(v, &a)| cells[v][idx[v]].1[a]));
            if !covered {
                let point = idx.iter().enumerate().map(|(v, &i)| cells[v][i].0).collect();
                return Err(FuzzyError::Uncovered { point });
            }
            let mut v = 0;
            loop {
                idx[v] += 1;
                if idx[v] < cells[v].len() {
                    break;
                }
                idx[v] = 0;
                v += 1;
                if v == cells.len() {
                    return Ok(());
                }
            }
        }
    }
}

/// Normalized fuzzy basis for `inputs` (clamped to each universe).
pub fn fuzzy_basis(inputs: &[f64], rule_base: &RuleBase) -> Result<Vec<f64>, FuzzyError> {
    let mut scratch = vec![0.0; rule_base.scratch_len()];
    let mut out = vec![0.0; rule_base.theta_dim()];
    rule_base.basis_into(inputs, &mut scratch, &mut out)?;
    Ok(out)
}

/// Adjustable consequent centers with per-entry projection bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    values: Vec<f64>,
    bounds: Vec<(f64, f64)>,
}

impl ThetaVector {
    pub fn new(values: Vec<f64>, bounds: Vec<(f64, f64)>) -> Result<Self, FuzzyError> {
        if values.len() != bounds.len() {
            return Err(FuzzyError::DimensionMismatch { expected: bounds.len(), got: values.len() });
        }
        for (index, (&value, &(lo, hi))) in values.iter().zip(&bounds).enumerate() {
            if !value.is_finite() || !(lo <= value && value <= hi) {
                return Err(FuzzyError::OutOfBounds { index, value, lo, hi });
            }
        }
        Ok(Self { values, bounds })
    }

    /// Every entry set to `value` with the same bounds everywhere.
    pub fn uniform(len: usize, value: f64, bounds: (f64, f64)) -> Result<Self, FuzzyError> {
        Self::new(vec![value; len], vec![bounds; len])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Add `delta[i]` to each entry and project back onto its bounds.
    pub fn apply_projected(&mut self, delta: impl Iterator<Item = f64>) {
        for ((v, &(lo, hi)), d) in self.values.iter_mut().zip(&self.bounds).zip(delta) {
            *v = (*v + d).clamp(lo, hi);
        }
    }
}

/// `theta . basis` for a normalized basis.
pub fn approximate(theta: &ThetaVector, basis: &[f64]) -> Result<f64, FuzzyError> {
    if theta.len() != basis.len() {
        return Err(FuzzyError::DimensionMismatch { expected: theta.len(), got: basis.len() });
    }
    Ok(weighted(theta.values(), basis))
}

/// `theta . basis` evaluated as `m + sum((theta[i] - m) basis[i])` with
/// `m = min(theta)`. Equal to the dot product when the basis sums to one; the
/// result is exact for a constant `theta` and never rounds below `m`, so a
/// lower projection bound on `theta` carries over to the estimate.
#[inline]
pub(crate) fn weighted(theta: &[f64], basis: &[f64]) -> f64 {
    let m = theta.iter().copied().fold(f64::INFINITY, f64::min);
    if !m.is_finite() {
        return dot(theta, basis);
    }
    m + theta.iter().zip(basis).map(|(t, b)| (t - m) * b).sum::<f64>()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tri(a: f64, b: f64, c: f64) -> TriangularMF {
        TriangularMF::new(a, b, c).unwrap()
    }

    #[test]
    fn mf_examples() {
        let m = tri(0.0, 1.0, 2.0);
        assert_eq!(mf_eval(&m, 1.0), 1.0);
        assert_eq!(mf_eval(&m, 2.5), 0.0);
        assert_eq!(mf_eval(&m, 0.5), 0.5);
        assert_eq!(mf_eval(&m, 0.0), 0.0);
        assert_eq!(mf_eval(&m, 2.0), 0.0);
    }

    #[test]
    fn degenerate_shoulders() {
        let left = tri(0.0, 0.0, 1.0);
        assert_eq!(mf_eval(&left, 0.0), 1.0);
        assert_eq!(mf_eval(&left, 0.25), 0.75);
        let right = tri(0.0, 1.0, 1.0);
        assert_eq!(mf_eval(&right, 1.0), 1.0);
        assert_eq!(mf_eval(&right, 0.5), 0.5);
        let spike = tri(2.0, 2.0, 2.0);
        assert_eq!(mf_eval(&spike, 2.0), 1.0);
        assert_eq!(mf_eval(&spike, 2.1), 0.0);
        assert!(TriangularMF::new(1.0, 0.0, 2.0).is_err());
        assert!(TriangularMF::new(0.0, f64::NAN, 2.0).is_err());
    }

    #[test]
    fn partition_examples() {
        let two = uniform_partition("x", (0.0, 1.0), 2).unwrap();
        assert_eq!(two.mfs[0].b, 0.0);
        assert_eq!(two.mfs[1].b, 1.0);
        assert_eq!(two.memberships(0.5), vec![0.5, 0.5]);

        let ten = uniform_partition("x", (-1.0, 1.0), 10).unwrap();
        assert_eq!(ten.len(), 10);
        for w in ten.mfs.windows(2) {
            assert!((w[1].b - w[0].b - 2.0 / 9.0).abs() < 1e-15);
        }

        let three = uniform_partition("x", (0.0, 1.0), 3).unwrap();
        assert_eq!(three.memberships(0.25), vec![0.5, 0.5, 0.0]);

        assert_eq!(uniform_partition("x", (0.0, 1.0), 1), Err(FuzzyError::TooFewSets(1)));
        assert!(uniform_partition("x", (1.0, 1.0), 3).is_err());
    }

    #[test]
    fn inputs_are_clamped_to_universe() {
        let v = uniform_partition("x", (0.0, 1.0), 3).unwrap();
        assert_eq!(v.memberships(-5.0), vec![1.0, 0.0, 0.0]);
        assert_eq!(v.memberships(9.0), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn scaling_preserves_partition_shape() {
        let v = uniform_partition("x", (0.0, 10.0), 5).unwrap();
        let s = v.scaled(2.0).unwrap();
        assert_eq!(s.universe, (-5.0, 15.0));
        assert_eq!(s.mfs[2].b, 5.0);
        assert_eq!(s.memberships(10.0), v.memberships(7.5));
        assert!(v.scaled(0.0).is_err());
    }

    #[test]
    fn basis_examples() {
        let var = uniform_partition("x", (0.0, 1.0), 3).unwrap();
        let single = RuleBase::new(
            vec![uniform_partition("x", (0.0, 1.0), 2).unwrap()],
            vec![Rule { antecedent: vec![0], consequent: 0 }, Rule { antecedent: vec![1], consequent: 0 }],
            1,
        )
        .unwrap();
        assert_eq!(fuzzy_basis(&[0.3], &single).unwrap(), vec![1.0]);

        let grid = RuleBase::complete_grid(vec![var]).unwrap();
        assert_eq!(fuzzy_basis(&[0.25], &grid).unwrap(), vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn basis_normalizes_raw_strengths() {
        // a = -0.4 gives mu_a = 0.4; b = 0.75 gives (0.75, 0.25): raw strengths 0.3 and 0.1
        let a = LinguisticVariable::new("a", (-1.0, 1.0), vec![tri(-2.0, 2.0, 6.0)]).unwrap();
        let b = LinguisticVariable::new("b", (0.0, 1.0), vec![tri(0.0, 1.0, 1.0), tri(0.0, 0.0, 1.0)]).unwrap();
        let rb = RuleBase::new(
            vec![a, b],
            vec![Rule { antecedent: vec![0, 0], consequent: 0 }, Rule { antecedent: vec![0, 1], consequent: 1 }],
            2,
        )
        .unwrap();
        let raw = [0.4 * 0.75, 0.4 * 0.25];
        assert!((raw[0] - 0.3f64).abs() < 1e-15 && (raw[1] - 0.1f64).abs() < 1e-15);
        let out = fuzzy_basis(&[-0.4, 0.75], &rb).unwrap();
        assert!((out[0] - 0.75).abs() < 1e-15);
        assert!((out[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn uncovered_corner_rejected() {
        let a = LinguisticVariable::new("a", (0.0, 1.0), vec![tri(0.0, 1.0, 1.0), tri(0.0, 1.0, 1.0)]).unwrap();
        let b = LinguisticVariable::new("b", (0.0, 1.0), vec![tri(0.0, 1.0, 1.0), tri(0.0, 0.0, 1.0)]).unwrap();
        let rb = RuleBase::new(
            vec![a, b],
            vec![Rule { antecedent: vec![0, 0], consequent: 0 }, Rule { antecedent: vec![1, 1], consequent: 1 }],
            2,
        );
        // nothing is active at a = 0
        assert!(matches!(rb, Err(FuzzyError::Uncovered { .. })));
    }

    #[test]
    fn rule_base_validation() {
        let v = uniform_partition("x", (0.0, 1.0), 3).unwrap();
        let bad_idx = RuleBase::new(vec![v.clone()], vec![Rule { antecedent: vec![3], consequent: 0 }], 1);
        assert!(matches!(bad_idx, Err(FuzzyError::BadAntecedent { .. })));
        let bad_cons = RuleBase::new(vec![v.clone()], vec![Rule { antecedent: vec![0], consequent: 2 }], 2);
        assert!(matches!(bad_cons, Err(FuzzyError::BadConsequent { .. })));
        let gap = RuleBase::new(
            vec![v.clone()],
            vec![Rule { antecedent: vec![0], consequent: 0 }, Rule { antecedent: vec![2], consequent: 1 }],
            2,
        );
        // x = 0.5 only activates the middle set
        assert!(matches!(gap, Err(FuzzyError::Uncovered { ref point }) if point == &vec![0.5]));
    }

    #[test]
    fn basis_errors() {
        let rb = RuleBase::complete_grid(vec![uniform_partition("x", (0.0, 1.0), 3).unwrap()]).unwrap();
        assert!(matches!(fuzzy_basis(&[0.1, 0.2], &rb), Err(FuzzyError::DimensionMismatch { .. })));
        assert_eq!(fuzzy_basis(&[f64::NAN], &rb), Err(FuzzyError::NonFinite));
    }

    #[test]
    fn approximate_examples() {
        let zeros = ThetaVector::uniform(3, 0.0, (-1.0, 1.0)).unwrap();
        assert_eq!(approximate(&zeros, &[0.2, 0.3, 0.5]).unwrap(), 0.0);
        let c = ThetaVector::uniform(3, 4.25, (0.0, 10.0)).unwrap();
        assert_eq!(approximate(&c, &[0.25, 0.25, 0.5]).unwrap(), 4.25);
        let t = ThetaVector::new(vec![1.0, 2.0, 3.0], vec![(0.0, 5.0); 3]).unwrap();
        assert_eq!(approximate(&t, &[0.5, 0.5, 0.0]).unwrap(), 1.5);
        assert!(approximate(&t, &[1.0]).is_err());
    }

    #[test]
    fn theta_bounds_enforced() {
        assert!(ThetaVector::new(vec![2.0], vec![(0.0, 1.0)]).is_err());
        let mut t = ThetaVector::uniform(2, 0.5, (0.0, 1.0)).unwrap();
        t.apply_projected([10.0, -10.0].into_iter());
        assert_eq!(t.values(), &[1.0, 0.0]);
    }

    #[test]
    fn locality() {
        let x = uniform_partition("x", (0.0, 9.0), 10).unwrap();
        let y = uniform_partition("y", (-1.0, 1.0), 10).unwrap();
        let rb = RuleBase::complete_grid(vec![x, y]).unwrap();
        // rule 0 is (x set 0, y set 0): peaks at (0, -1)
        let b = fuzzy_basis(&[8.5, 0.9], &rb).unwrap();
        assert_eq!(b[0], 0.0);
        let b = fuzzy_basis(&[0.0, -1.0], &rb).unwrap();
        assert_eq!(b[0], 1.0);
    }

    #[test]
    fn basis_is_lipschitz_on_grid() {
        // With uniform partitions of spacing h, each membership is (1/h)-Lipschitz;
        // a product of two such sets is bounded by (1/h1 + 1/h2) and the
        // normalizer is 1, so L = 1/h1 + 1/h2 per unit of max-norm input change.
        let x = uniform_partition("x", (0.0, 9.0), 10).unwrap();
        let y = uniform_partition("y", (-1.0, 1.0), 5).unwrap();
        let lipschitz = 1.0 / 1.0 + 1.0 / 0.5;
        let rb = RuleBase::complete_grid(vec![x, y]).unwrap();
        let delta = 1e-4;
        for i in 0..=90 {
            for j in 0..=20 {
                let p = [i as f64 * 0.1, -1.0 + j as f64 * 0.1];
                let b0 = fuzzy_basis(&p, &rb).unwrap();
                let b1 = fuzzy_basis(&[p[0] + delta, p[1] - delta], &rb).unwrap();
                let change = b0.iter().zip(&b1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(change <= lipschitz * delta + 1e-12, "{p:?}: {change}");
            }
        }
    }

    proptest! {
        #[test]
        fn estimate_respects_lower_bound(theta in proptest::collection::vec(0.5f64..1e3, 1..40), x in 0.0f64..=1.0) {
            let v = uniform_partition("x", (0.0, 1.0), theta.len().max(2)).unwrap();
            let mut b = v.memberships(x);
            b.truncate(theta.len());
            let total: f64 = b.iter().sum();
            if total > 0.0 {
                b.iter_mut().for_each(|e| *e /= total);
                prop_assert!(weighted(&theta, &b) >= 0.5);
            }
        }

        #[test]
        fn partition_of_unity(lo in -100.0f64..100.0, width in 1e-3f64..50.0, n in 2usize..20, t in 0.0f64..=1.0) {
            let v = uniform_partition("x", (lo, lo + width), n).unwrap();
            let x = lo + t * width;
            let s: f64 = v.memberships(x).iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn basis_normalized(n1 in 2usize..8, n2 in 2usize..8, x in -2.0f64..3.0, y in -2.0f64..3.0, c in -50.0f64..50.0) {
            let rb = RuleBase::complete_grid(vec![
                uniform_partition("x", (0.0, 1.0), n1).unwrap(),
                uniform_partition("y", (-1.0, 2.0), n2).unwrap(),
            ]).unwrap();
            let b = fuzzy_basis(&[x, y], &rb).unwrap();
            prop_assert!((b.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(b.iter().all(|e| (0.0..=1.0).contains(e)));
            let theta = ThetaVector::uniform(b.len(), c, (-50.0, 50.0)).unwrap();
            prop_assert_eq!(approximate(&theta, &b).unwrap(), c);
        }
    }
}
