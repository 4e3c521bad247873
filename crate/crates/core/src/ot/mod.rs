//! Exact 2-Wasserstein distances between equal-size uniform empirical measures.
//!
//! For such measures an optimal coupling is a permutation, so the problem is a
//! linear assignment. One-dimensional inputs use the monotone (sorted) matching,
//! which is optimal for the squared cost.

mod assignment;

use std::io::Write;

use crate::error::{Error, Result};
use crate::synthdata::SampleSet;

pub use assignment::solve as solve_assignment;

/// An optimal matching between two point sets of equal size.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    /// `pairing[i]` is the target index matched to source `i`.
    pub pairing: Vec<usize>,
    /// Mean squared transport distance, i.e. W2^2.
    pub cost: f64,
}

impl TransportPlan {
    pub fn w2(&self) -> f64 {
        self.cost.max(0.0).sqrt()
    }

    /// Dumps `src,dst,cost` rows, one per matched pair.
    pub fn write_csv<W: Write>(&self, a: &SampleSet, b: &SampleSet, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        wtr.write_record(["src", "dst", "cost"])?;
        for (i, &j) in self.pairing.iter().enumerate() {
            let c = sq_dist(a.point(i), b.point(j));
            wtr.write_record([i.to_string(), j.to_string(), c.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

fn check_pair(a: &SampleSet, b: &SampleSet) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("point set"));
    }
    if a.len() != b.len() {
        return Err(Error::SizeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

fn plan_cost(a: &SampleSet, b: &SampleSet, pairing: &[usize]) -> f64 {
    let total = compensated_sum(
        pairing
            .iter()
            .enumerate()
            .map(|(i, &j)| sq_dist(a.point(i), b.point(j))),
    );
    total / a.len() as f64
}

/// Exact W2 between two uniform empirical measures of equal size, with the
/// optimal matching.
pub fn w2_empirical(a: &SampleSet, b: &SampleSet) -> Result<(f64, TransportPlan)> {
    check_pair(a, b)?;
    let n = a.len();
    let pairing = if a.dim() == 1 {
        let mut ia: Vec<usize> = (0..n).collect();
        let mut ib: Vec<usize> = (0..n).collect();
        let (xa, xb) = (a.as_slice(), b.as_slice());
        ia.sort_by(|&i, &j| xa[i].total_cmp(&xa[j]));
        ib.sort_by(|&i, &j| xb[i].total_cmp(&xb[j]));
        let mut pairing = vec![0; n];
        for (i, j) in ia.into_iter().zip(ib) {
            pairing[i] = j;
        }
        pairing
    } else {
        let d = a.dim();
        let (xa, xb) = (a.as_slice(), b.as_slice());
        assignment::solve(n, |i, j| sq_dist(&xa[i * d..(i + 1) * d], &xb[j * d..(j + 1) * d]))
    };
    let cost = plan_cost(a, b, &pairing);
    let plan = TransportPlan { pairing, cost };
    Ok((plan.w2(), plan))
}

/// Convenience wrapper returning only the distance.
pub fn w2(a: &SampleSet, b: &SampleSet) -> Result<f64> {
    w2_empirical(a, b).map(|(d, _)| d)
}

pub const BRUTE_FORCE_CAP: usize = 9;

/// Exhaustive minimum over all permutations; only for `n <= 9`.
pub fn w2_bruteforce(a: &SampleSet, b: &SampleSet) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len();
    if n > BRUTE_FORCE_CAP {
        return Err(Error::SizeCapExceeded {
            n,
            cap: BRUTE_FORCE_CAP,
        });
    }
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| sq_dist(a.point(i), b.point(j))).collect())
        .collect();
    // Heap's algorithm over column orders.
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |p: &[usize]| compensated_sum(p.iter().enumerate().map(|(i, &j)| cost[i][j]));
    let mut best = eval(&perm);
    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok((best / n as f64).max(0.0).sqrt())
}

/// Closed-form W2 between `N(mu1, s1^2 I)` and `N(mu2, s2^2 I)` in `d` dimensions.
pub fn w2_gaussian_isotropic(mu1: &[f64], s1: f64, mu2: &[f64], s2: f64, d: usize) -> Result<f64> {
    if s1 < 0.0 || s2 < 0.0 {
        return Err(Error::InvalidArgument("negative standard deviation".into()));
    }
    if mu1.len() != mu2.len() {
        return Err(Error::DimensionMismatch {
            expected: mu1.len(),
            got: mu2.len(),
        });
    }
    let m2 = sq_dist(mu1, mu2);
    Ok((m2 + d as f64 * (s1 - s2) * (s1 - s2)).sqrt())
}
