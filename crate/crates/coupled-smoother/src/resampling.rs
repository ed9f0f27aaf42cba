//! Weight normalization and (coupled) multinomial resampling.
//!
//! Ancestor indices are drawn either independently per system (plain
//! multinomial) or jointly from a maximal coupling of the two weight vectors.
//! The maximal coupling maximizes `P(a = ã) = Σ_j min(w^j, w̃^j)` under the
//! marginal constraints, and degenerates to the diagonal when the two weight
//! vectors are identical — the property that keeps met chains together.

use rand::Rng;

use crate::error::{Error, Result};
use crate::stream::KeyedStream;

/// Normalized particle weights, kept in both log and linear form.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector {
    log_weights: Vec<f64>,
    normalized: Vec<f64>,
}

impl WeightVector {
    /// Normalize a vector of (unnormalized) log-weights via log-sum-exp.
    ///
    /// Fails with a degenerate-weights error when every entry is `-inf`;
    /// non-finite positive entries are numerical failures.
    pub fn from_log(log_weights: Vec<f64>) -> Result<Self> {
        if log_weights.is_empty() {
            return Err(Error::Config("empty weight vector".into()));
        }
        if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(Error::Numerical("non-finite log weight".into()));
        }
        let lse = log_sum_exp(&log_weights);
        if !lse.is_finite() {
            return Err(Error::DegenerateWeights { step: 0 });
        }
        let mut normalized: Vec<f64> = log_weights.iter().map(|w| (w - lse).exp()).collect();
        let total: f64 = normalized.iter().sum();
        for w in normalized.iter_mut() {
            *w /= total;
        }
        Ok(WeightVector {
            log_weights,
            normalized,
        })
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0);
        WeightVector {
            log_weights: vec![0.0; n],
            normalized: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.normalized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normalized.is_empty()
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }

    /// Overlap `Σ_j min(w^j, w̃^j)` with another weight vector.
    pub fn overlap(&self, other: &WeightVector) -> f64 {
        self.normalized
            .iter()
            .zip(&other.normalized)
            .map(|(a, b)| a.min(*b))
            .sum()
    }

    /// One categorical draw with `P(i) = w^i`.
    pub fn sample_index(&self, rng: &mut KeyedStream) -> u32 {
        categorical(&self.normalized, rng.uniform())
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// A pair of ancestor indices drawn jointly for the two coupled systems.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AncestorPair {
    pub a: u32,
    pub a_tilde: u32,
}

/// Single categorical draw; ties on CDF boundaries resolve to the lower index.
fn categorical(normalized: &[f64], u: f64) -> u32 {
    let mut acc = 0.0;
    for (i, w) in normalized.iter().enumerate().take(normalized.len() - 1) {
        acc += w;
        if u <= acc {
            return i as u32;
        }
    }
    (normalized.len() - 1) as u32
}

/// `count` i.i.d. multinomial ancestor indices with `P(a = j) = w^j`.
///
/// Uses inverse-CDF lookup with order statistics generated from exponential
/// spacings, so the total cost is `O(N + count)`. The returned indices are in
/// nondecreasing order; particle slots are exchangeable, so assigning them in
/// order does not change the law of the filter.
pub fn multinomial_ancestors(
    w: &WeightVector,
    count: usize,
    rng: &mut KeyedStream,
) -> Result<Vec<u32>> {
    if count == 0 {
        return Err(Error::Config("resampling count must be at least 1".into()));
    }
    let n = w.len();
    // Ordered uniforms u_(1) <= ... <= u_(count) from normalized cumulative
    // sums of exponential variables.
    let mut spacings: Vec<f64> = Vec::with_capacity(count + 1);
    let mut total = 0.0;
    for _ in 0..=count {
        let e = -(1.0 - rng.uniform()).ln();
        total += e;
        spacings.push(total);
    }
    let mut out = Vec::with_capacity(count);
    let mut idx = 0usize;
    let mut acc = w.normalized()[0];
    for s in spacings.iter().take(count) {
        let u = s / total;
        while u > acc && idx + 1 < n {
            idx += 1;
            acc += w.normalized()[idx];
        }
        out.push(idx as u32);
    }
    Ok(out)
}

/// One draw `(a, ã)` from the maximal coupling of two discrete distributions.
///
/// With probability `ω = Σ_j min(w^j, w̃^j)` a common index is drawn from the
/// overlap and `a = ã`; otherwise the two indices are drawn independently from
/// the normalized residuals. Identical weight vectors always produce `a = ã`.
pub fn maximal_coupling_pair(
    w: &WeightVector,
    w_tilde: &WeightVector,
    rng: &mut KeyedStream,
) -> Result<AncestorPair> {
    if w.len() != w_tilde.len() {
        return Err(Error::Dimension {
            what: "coupled weight vectors",
            expected: w.len(),
            got: w_tilde.len(),
        });
    }
    if w.normalized() == w_tilde.normalized() {
        let i = categorical(w.normalized(), rng.uniform());
        return Ok(AncestorPair { a: i, a_tilde: i });
    }
    let overlap: Vec<f64> = w
        .normalized()
        .iter()
        .zip(w_tilde.normalized())
        .map(|(a, b)| a.min(*b))
        .collect();
    let omega: f64 = overlap.iter().sum();
    let u = rng.uniform();
    if u < omega {
        // Conditionally on this branch, u is uniform on [0, ω): search the
        // unnormalized overlap CDF directly.
        let mut acc = 0.0;
        for (i, m) in overlap.iter().enumerate().take(overlap.len() - 1) {
            acc += m;
            if u <= acc {
                return Ok(AncestorPair {
                    a: i as u32,
                    a_tilde: i as u32,
                });
            }
        }
        let i = (overlap.len() - 1) as u32;
        return Ok(AncestorPair { a: i, a_tilde: i });
    }
    let a = residual_draw(w.normalized(), &overlap, rng.uniform());
    let a_tilde = residual_draw(w_tilde.normalized(), &overlap, rng.uniform());
    Ok(AncestorPair { a, a_tilde })
}

fn residual_draw(normalized: &[f64], overlap: &[f64], u: f64) -> u32 {
    let total: f64 = normalized
        .iter()
        .zip(overlap)
        .map(|(w, m)| w - m)
        .sum::<f64>()
        .max(0.0);
    if total <= 0.0 {
        // Possible only through rounding when the vectors nearly coincide.
        return categorical(normalized, u);
    }
    let target = u * total;
    let mut acc = 0.0;
    for (i, (w, m)) in normalized.iter().zip(overlap).enumerate() {
        acc += (w - m).max(0.0);
        if target <= acc && acc > 0.0 {
            return i as u32;
        }
    }
    (normalized.len() - 1) as u32
}

/// One pair `(b, b̃)` drawn by inverting both CDFs at a shared uniform.
///
/// Marginals are exact, and identical weight vectors always produce `b = b̃`
/// (the draws are the same computation), so met chains stay together. The
/// coincidence probability is below the maximal coupling's when the two CDFs
/// drift apart; this is the coupling used for the final trajectory selection,
/// where it reproduces the meeting-time behaviour reported for the method.
pub fn shared_uniform_pair(
    w: &WeightVector,
    w_tilde: &WeightVector,
    rng: &mut KeyedStream,
) -> Result<AncestorPair> {
    if w.len() != w_tilde.len() {
        return Err(Error::Dimension {
            what: "coupled weight vectors",
            expected: w.len(),
            got: w_tilde.len(),
        });
    }
    let u = rng.uniform();
    Ok(AncestorPair {
        a: categorical(w.normalized(), u),
        a_tilde: categorical(w_tilde.normalized(), u),
    })
}

/// Walker alias table for O(1) categorical draws after O(N) setup.
#[derive(Clone, Debug)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<u32>,
}

impl AliasTable {
    /// Build from normalized weights.
    pub fn new(normalized: &[f64]) -> Result<Self> {
        let n = normalized.len();
        if n == 0 {
            return Err(Error::Config("empty weight vector".into()));
        }
        let total: f64 = normalized.iter().sum();
        if total.is_nan() || total <= 0.0 || normalized.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::DegenerateWeights { step: 0 });
        }
        let mut prob: Vec<f64> = normalized.iter().map(|w| w * n as f64 / total).collect();
        let mut alias: Vec<u32> = (0..n as u32).collect();
        let mut small: Vec<usize> = Vec::with_capacity(n);
        let mut large: Vec<usize> = Vec::with_capacity(n);
        for (i, p) in prob.iter().enumerate() {
            if *p < 1.0 {
                small.push(i);
            } else {
                large.push(i);
            }
        }
        while let (Some(s), Some(l)) = (small.pop(), large.pop()) {
            alias[s] = l as u32;
            prob[l] = (prob[l] + prob[s]) - 1.0;
            if prob[l] < 1.0 {
                small.push(l);
            } else {
                large.push(l);
            }
        }
        // Leftovers are 1.0 up to rounding.
        for i in small.into_iter().chain(large) {
            prob[i] = 1.0;
        }
        Ok(AliasTable { prob, alias })
    }

    #[inline]
    pub fn sample(&self, rng: &mut KeyedStream) -> u32 {
        let n = self.prob.len();
        let x = rng.random::<f64>() * n as f64;
        let mut i = x as usize;
        if i >= n {
            i = n - 1;
        }
        let frac = x - i as f64;
        if frac < self.prob[i] {
            i as u32
        } else {
            self.alias[i]
        }
    }

    #[cfg(test)]
    fn reconstructed_weight(&self, i: usize) -> f64 {
        let n = self.prob.len() as f64;
        let direct = self.prob[i] / n;
        let aliased: f64 = self
            .prob
            .iter()
            .zip(&self.alias)
            .filter(|(_, a)| **a == i as u32)
            .map(|(p, _)| (1.0 - p) / n)
            .sum();
        direct + aliased
    }
}

/// `count` independent pairs from the maximal coupling of `w` and `w̃`.
///
/// Alias tables over the overlap and the two residuals give O(N + count)
/// total cost with each pair i.i.d. (so per-slot marginals are exact).
pub fn coupled_multinomial(
    w: &WeightVector,
    w_tilde: &WeightVector,
    count: usize,
    rng: &mut KeyedStream,
) -> Result<Vec<AncestorPair>> {
    if w.len() != w_tilde.len() {
        return Err(Error::Dimension {
            what: "coupled weight vectors",
            expected: w.len(),
            got: w_tilde.len(),
        });
    }
    if count == 0 {
        return Err(Error::Config("resampling count must be at least 1".into()));
    }
    if w.normalized() == w_tilde.normalized() {
        let table = AliasTable::new(w.normalized())?;
        return Ok((0..count)
            .map(|_| {
                let i = table.sample(rng);
                AncestorPair { a: i, a_tilde: i }
            })
            .collect());
    }

    let overlap: Vec<f64> = w
        .normalized()
        .iter()
        .zip(w_tilde.normalized())
        .map(|(a, b)| a.min(*b))
        .collect();
    let omega: f64 = overlap.iter().sum();
    let residual = |normalized: &[f64]| -> Vec<f64> {
        normalized
            .iter()
            .zip(&overlap)
            .map(|(w, m)| (w - m).max(0.0))
            .collect()
    };
    let common = if omega > 0.0 {
        Some(AliasTable::new(&overlap)?)
    } else {
        None
    };
    let res = residual(w.normalized());
    let res_tilde = residual(w_tilde.normalized());
    let tails = if res.iter().sum::<f64>() > 0.0 && res_tilde.iter().sum::<f64>() > 0.0 {
        Some((AliasTable::new(&res)?, AliasTable::new(&res_tilde)?))
    } else {
        None
    };

    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let u = rng.uniform();
        let pair = if u < omega {
            let i = common
                .as_ref()
                .expect("omega > 0 implies overlap table")
                .sample(rng);
            AncestorPair { a: i, a_tilde: i }
        } else if let Some((ta, tb)) = &tails {
            AncestorPair {
                a: ta.sample(rng),
                a_tilde: tb.sample(rng),
            }
        } else {
            // Residual mass vanished through rounding; the vectors coincide
            // up to float noise, so a common draw is the right limit.
            let i = common
                .as_ref()
                .expect("either overlap or residual mass is positive")
                .sample(rng);
            AncestorPair { a: i, a_tilde: i }
        };
        out.push(pair);
    }
    Ok(out)
}
