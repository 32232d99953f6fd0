//! Independent references for the DP sampler: the truncated stick-breaking
//! construction and exact set-partition posteriors on tiny instances.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::domain::{BspState, Dataset};
use crate::dpmm::{dp_step1_reassign, dp_step2_atoms, ReassignWorkspace};
use crate::error::{Error, Result};
use crate::randmat::{beta_sample, log_sum_exp, mvn_logpdf, RngStream, SpdMatrix};

/// Finite discrete measure `sum_h w_h delta_{atom_h}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure<T> {
    pub weights: Vec<f64>,
    pub atoms: Vec<T>,
}

/// Weights `w_h = U_h prod_{j<h} (1 - U_j)` from given stick fractions; the
/// last weight takes the whole remaining stick, so its fraction is ignored.
pub fn stick_weights(fractions: &[f64]) -> Vec<f64> {
    let h = fractions.len();
    let mut weights = Vec::with_capacity(h);
    let mut rest = 1.0;
    for (i, &u) in fractions.iter().enumerate() {
        if i + 1 == h {
            weights.push(rest);
        } else {
            weights.push(u * rest);
            rest *= 1.0 - u;
        }
    }
    weights
}

/// Truncated stick-breaking draw from `DP(M, G_0)` with `h` sticks.
pub fn stick_breaking_truncation<T>(
    mass: f64,
    h: usize,
    mut base: impl FnMut(&mut RngStream) -> Result<T>,
    rng: &mut RngStream,
) -> Result<DiscreteMeasure<T>> {
    if h == 0 {
        return Err(Error::Domain("truncation level must be at least 1".into()));
    }
    let fractions = (0..h)
        .map(|i| if i + 1 == h { Ok(1.0) } else { beta_sample(1.0, mass, rng) })
        .collect::<Result<Vec<_>>>()?;
    let atoms = (0..h).map(|_| base(rng)).collect::<Result<Vec<_>>>()?;
    Ok(DiscreteMeasure {
        weights: stick_weights(&fractions),
        atoms,
    })
}

/// Smallest number of the largest weights whose total reaches `mass`.
pub fn weights_to_cover(weights: &[f64], mass: f64) -> usize {
    let mut sorted = weights.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    for (i, w) in sorted.iter().enumerate() {
        acc += w;
        if acc >= mass {
            return i + 1;
        }
    }
    sorted.len()
}

/// Relabels a cluster assignment so that labels appear in order 0, 1, 2, ...
pub fn canonical_partition(config: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    config
        .iter()
        .map(|c| {
            let next = map.len();
            *map.entry(*c).or_insert(next)
        })
        .collect()
}

/// Every set partition of `n` items as a canonical label vector.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, max: usize, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let limit = if prefix.is_empty() { 0 } else { max + 1 };
        for c in 0..=limit {
            prefix.push(c);
            extend(prefix, max.max(c), n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        extend(&mut Vec::with_capacity(n), 0, n, &mut out);
    }
    out
}

fn ln_gamma_int(n: usize) -> f64 {
    (1..n).map(|i| (i as f64).ln()).sum()
}

/// Exact posterior of the partition of scalar random effects `thetas`
/// (`p = k = 1`) given `tau`, `R` and `M`:
/// `CRP(M)` prior times, per cluster, the `N(0, tau I + R 11^T)` marginal.
pub fn partition_posterior_oracle(thetas: &[f64], tau: f64, r: f64, mass: f64) -> Result<Vec<(Vec<usize>, f64)>> {
    let n = thetas.len();
    let log_rising: f64 = (0..n).map(|i| (mass + i as f64).ln()).sum();
    let parts = set_partitions(n);
    let mut logs = Vec::with_capacity(parts.len());
    for part in &parts {
        let k = part.iter().max().map_or(0, |c| c + 1);
        let mut lp = k as f64 * mass.ln() - log_rising;
        for c in 0..k {
            let members: Vec<f64> = part
                .iter()
                .zip(thetas)
                .filter(|&(&pc, _)| pc == c)
                .map(|(_, &t)| t)
                .collect();
            let s = members.len();
            lp += ln_gamma_int(s);
            let cov = SpdMatrix::new(DMatrix::identity(s, s) * tau + DMatrix::from_element(s, s, r))?;
            lp += mvn_logpdf(&DVector::from_vec(members), &DVector::zeros(s), &cov)?;
        }
        logs.push(lp);
    }
    let norm = log_sum_exp(&logs);
    Ok(parts.into_iter().zip(logs).map(|(p, l)| (p, (l - norm).exp())).collect())
}

/// Runs only the partition and atom updates on fixed scalar random effects
/// and returns the visit frequency of every canonical partition.
pub fn sampled_partition_frequencies(
    thetas: &[f64],
    tau: f64,
    r: f64,
    mass: f64,
    sweeps: usize,
    rng: &mut RngStream,
) -> Result<BTreeMap<Vec<usize>, f64>> {
    let n = thetas.len();
    let data = Dataset::from_labelled((0..n).map(|_| ("g".to_string(), "l".to_string(), vec![0.0])).collect(), 1)?;
    let tau = SpdMatrix::scaled_identity(1, tau);
    let r = SpdMatrix::scaled_identity(1, r);
    let mut state = BspState {
        b: DMatrix::zeros(1, 1),
        theta: thetas.iter().map(|&t| DVector::from_element(1, t)).collect(),
        config: vec![0; n],
        atoms: vec![DVector::zeros(1)],
        sigma: vec![SpdMatrix::identity(1)],
        tau: tau.clone(),
        r: r.clone(),
        beta0: DMatrix::zeros(1, 1),
        lambda: SpdMatrix::identity(1),
        mass,
    };
    let ws = ReassignWorkspace::new(&tau, &r)?;
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for _ in 0..sweeps {
        for i in 0..n {
            dp_step1_reassign(&mut state, &data, &ws, i, rng)?;
        }
        dp_step2_atoms(&mut state, &data, rng)?;
        *counts.entry(canonical_partition(&state.config)).or_default() += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(k, v)| (k, v as f64 / sweeps as f64))
        .collect())
}

/// Total-variation distance between the oracle and sampled frequencies.
pub fn partition_tv_distance(oracle: &[(Vec<usize>, f64)], sampled: &BTreeMap<Vec<usize>, f64>) -> f64 {
    let mut tv = 0.0;
    for (part, p) in oracle {
        tv += (p - sampled.get(part).copied().unwrap_or(0.0)).abs();
    }
    for (part, q) in sampled {
        if !oracle.iter().any(|(o, _)| o == part) {
            tv += q;
        }
    }
    0.5 * tv
}
