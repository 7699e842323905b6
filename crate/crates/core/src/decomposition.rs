//! Mixture decomposition of a k-scaled capped vector into k-subset corners.
//!
//! Each iteration picks the `k` largest residual components (this always
//! includes every component equal to the remaining coefficient mass), and
//! subtracts the largest step that keeps the residual decomposable: the
//! smaller of the smallest chosen component and the gap between the
//! remaining mass and the largest unchosen component.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ScaledProbabilityVector, SeededRng};

/// Residual components below this are treated as zero.
pub const RESIDUAL_TOLERANCE: f64 = 1e-12;
/// Input tolerance for membership in the scaled capped simplex.
pub const INPUT_TOLERANCE: f64 = 1e-7;

/// A concrete k-subset of arms, sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Corner {
    members: Vec<usize>,
}

impl Corner {
    pub(crate) fn new(mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        Corner { members }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.members.binary_search(&i).is_ok()
    }
}

/// Convex combination of corners: `q = sum coefficient * indicator(corner)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CornerDecomposition {
    n: usize,
    terms: Vec<(f64, Corner)>,
}

impl CornerDecomposition {
    pub fn terms(&self) -> &[(f64, Corner)] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Sum of coefficient-weighted corner indicators.
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut q = vec![0.0; self.n];
        for (coef, corner) in &self.terms {
            for &i in corner.members() {
                q[i] += coef;
            }
        }
        q
    }
}

pub(crate) fn validate_scaled(q: &[f64], k: usize) -> Result<()> {
    if k < 1 || k > q.len() {
        return Err(Error::NotInScaledCappedSimplex(format!(
            "k = {k} with {} components",
            q.len()
        )));
    }
    if let Some((i, v)) = q
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite() || **v < -INPUT_TOLERANCE || **v > 1.0 + INPUT_TOLERANCE)
    {
        return Err(Error::NotInScaledCappedSimplex(format!(
            "component {i} = {v} outside [0, 1]"
        )));
    }
    let total: f64 = q.iter().sum();
    if (total - k as f64).abs() > INPUT_TOLERANCE {
        return Err(Error::NotInScaledCappedSimplex(format!(
            "components sum to {total}, expected {k}"
        )));
    }
    Ok(())
}

/// Decomposes `q` into at most `n` corners with positive coefficients.
pub fn decompose(q: &ScaledProbabilityVector) -> Result<CornerDecomposition> {
    let k = q.k();
    let n = q.n();
    validate_scaled(q.q(), k)?;

    let mut residual: Vec<f64> = q
        .q()
        .iter()
        .map(|&v| if v < RESIDUAL_TOLERANCE { 0.0 } else { v.min(1.0) })
        .collect();
    let mut terms: Vec<(f64, Corner)> = Vec::new();
    let mut live: Vec<usize> = Vec::with_capacity(n);

    loop {
        live.clear();
        live.extend((0..n).filter(|&i| residual[i] > 0.0));
        if live.len() < k {
            break;
        }
        let remaining = live.iter().map(|&i| residual[i]).sum::<f64>() / k as f64;
        live.sort_by(|&a, &b| residual[b].total_cmp(&residual[a]).then(a.cmp(&b)));
        let smallest_chosen = residual[live[k - 1]];
        let largest_unchosen = live.get(k).map_or(0.0, |&j| residual[j]);
        // the two bounds agree up to rounding when the mass bound is slack
        let mass_bound = remaining - largest_unchosen;
        let step = if mass_bound < smallest_chosen - RESIDUAL_TOLERANCE {
            mass_bound
        } else {
            smallest_chosen
        };
        if step <= RESIDUAL_TOLERANCE {
            break;
        }
        for &i in &live[..k] {
            let r = residual[i] - step;
            residual[i] = if r < RESIDUAL_TOLERANCE { 0.0 } else { r };
        }
        terms.push((step, Corner::new(live[..k].to_vec())));
        if terms.len() > n {
            return Err(Error::NotInScaledCappedSimplex(
                "decomposition did not terminate within n corners".into(),
            ));
        }
    }

    let leftover = residual.iter().sum::<f64>() / k as f64;
    if leftover > n as f64 * 1e-9 {
        return Err(Error::NotInScaledCappedSimplex(format!(
            "residual mass {leftover} left after decomposition"
        )));
    }
    match terms.last_mut() {
        Some(last) => last.0 += leftover,
        None => {
            return Err(Error::NotInScaledCappedSimplex(
                "no corner could be extracted".into(),
            ))
        }
    }
    Ok(CornerDecomposition { n, terms })
}

/// Draws one corner with probability equal to its coefficient.
pub fn sample_corner<'a>(d: &'a CornerDecomposition, rng: &mut SeededRng) -> &'a Corner {
    let total: f64 = d.terms.iter().map(|(c, _)| c).sum();
    let u = rng.uniform() * total;
    let mut acc = 0.0;
    for (coef, corner) in &d.terms {
        acc += coef;
        if u < acc {
            return corner;
        }
    }
    &d.terms.last().expect("decomposition has at least one term").1
}
