//! Model comparison (CPO/LPML, DIC), ROC/AUC, and sampler validation
//! oracles.

pub mod geweke;
pub mod oracles;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{BspState, Dataset, PosteriorChain};
use crate::error::{Error, Result};
use crate::randmat::{log_sum_exp, symmetrize, SpdMatrix};

pub use geweke::{default_functionals, geweke_harness, geweke_test, Functional, GewekeConfig, GewekeResult};
pub use oracles::{
    canonical_partition, partition_posterior_oracle, set_partitions, stick_breaking_truncation, stick_weights,
    weights_to_cover, DiscreteMeasure,
};

/// Kolmogorov-Smirnov statistic of `xs` against `cdf`, with the asymptotic
/// p-value. Sorts `xs` in place.
pub fn ks_one_sample(xs: &mut [f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    (d, kolmogorov_survival(lambda))
}

fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=200 {
        let j = j as f64;
        let term = (-2.0 * j * j * lambda * lambda).exp();
        sum += if j as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Conditional log likelihood `log N_p(y_i | B x_i + theta_i, Sigma_{g_i})`
/// of every unit under one draw.
pub fn unit_log_likelihoods(draw: &BspState, data: &Dataset) -> Vec<f64> {
    let p = data.p();
    let mut diff = vec![0.0; p];
    data.units()
        .iter()
        .zip(&draw.theta)
        .map(|(u, theta)| {
            let mean = &draw.b * &u.x;
            for r in 0..p {
                diff[r] = u.y[r] - mean[r] - theta[r];
            }
            draw.sigma[u.group].normal_log_density(&diff)
        })
        .collect()
}

/// `loglik[c][i]`: draw `c`, unit `i`.
pub fn log_likelihood_matrix(chain: &PosteriorChain, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    check_chain(chain, data)?;
    Ok(chain.draws.iter().map(|d| unit_log_likelihoods(d, data)).collect())
}

fn check_chain(chain: &PosteriorChain, data: &Dataset) -> Result<()> {
    if chain.draws.is_empty() {
        return Err(Error::Domain("empty chain".into()));
    }
    if chain.dims != data.dims() {
        return Err(Error::Dimension(format!(
            "chain dimensions {:?} do not match data {:?}",
            chain.dims,
            data.dims()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpoSummary {
    pub log_cpo: Vec<f64>,
    pub lpml: f64,
}

impl CpoSummary {
    pub fn cpo(&self) -> Vec<f64> {
        self.log_cpo.iter().map(|v| v.exp()).collect()
    }
}

/// Harmonic-mean CPO from a log-likelihood matrix, computed in log space.
pub fn cpo_from_loglik(loglik: &[Vec<f64>]) -> Result<CpoSummary> {
    let c = loglik.len();
    if c == 0 {
        return Err(Error::Domain("empty chain".into()));
    }
    let n = loglik[0].len();
    let log_c = (c as f64).ln();
    let mut neg = vec![0.0; c];
    let log_cpo: Vec<f64> = (0..n)
        .map(|i| {
            for (slot, row) in neg.iter_mut().zip(loglik) {
                *slot = -row[i];
            }
            log_c - log_sum_exp(&neg)
        })
        .collect();
    let lpml = log_cpo.iter().sum();
    Ok(CpoSummary { log_cpo, lpml })
}

pub fn cpo_lpml(chain: &PosteriorChain, data: &Dataset) -> Result<CpoSummary> {
    cpo_from_loglik(&log_likelihood_matrix(chain, data)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DicVariant {
    /// Plug-in of the posterior means of `B`, `theta_i` and `Sigma_u`.
    PosteriorMean = 1,
    /// Plug-in of the stored draw with the largest likelihood.
    BestDraw = 2,
    /// Plug-in of the posterior-mean density of each unit.
    MeanDensity = 3,
}

impl DicVariant {
    pub const ALL: [DicVariant; 3] = [DicVariant::PosteriorMean, DicVariant::BestDraw, DicVariant::MeanDensity];

    pub fn from_index(v: u8) -> Result<Self> {
        match v {
            1 => Ok(DicVariant::PosteriorMean),
            2 => Ok(DicVariant::BestDraw),
            3 => Ok(DicVariant::MeanDensity),
            _ => Err(Error::Domain(format!("DIC variant must be 1, 2 or 3, got {v}"))),
        }
    }

    pub fn index(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DicResult {
    pub variant: u8,
    pub dic: f64,
    pub p_d: f64,
    pub d_bar: f64,
    pub d_hat: f64,
}

/// `DIC = 2 D_bar - D_hat` with the plug-in deviance chosen by `variant`.
/// A negative `p_d` is reported as is.
pub fn dic(chain: &PosteriorChain, data: &Dataset, variant: DicVariant) -> Result<DicResult> {
    let loglik = log_likelihood_matrix(chain, data)?;
    dic_from_parts(chain, data, &loglik, variant)
}

/// All three variants sharing one log-likelihood pass.
pub fn dic_all(chain: &PosteriorChain, data: &Dataset) -> Result<Vec<DicResult>> {
    let loglik = log_likelihood_matrix(chain, data)?;
    DicVariant::ALL
        .iter()
        .map(|&v| dic_from_parts(chain, data, &loglik, v))
        .collect()
}

fn dic_from_parts(
    chain: &PosteriorChain,
    data: &Dataset,
    loglik: &[Vec<f64>],
    variant: DicVariant,
) -> Result<DicResult> {
    let c = loglik.len() as f64;
    let deviances: Vec<f64> = loglik.iter().map(|row| -2.0 * row.iter().sum::<f64>()).collect();
    let d_bar = deviances.iter().sum::<f64>() / c;
    let d_hat = match variant {
        DicVariant::PosteriorMean => {
            let mean = posterior_mean_plug_in(chain)?;
            -2.0 * unit_log_likelihoods(&mean, data).iter().sum::<f64>()
        }
        DicVariant::BestDraw => deviances.iter().copied().fold(f64::INFINITY, f64::min),
        DicVariant::MeanDensity => {
            let n = loglik[0].len();
            let log_c = c.ln();
            let mut col = vec![0.0; loglik.len()];
            -2.0 * (0..n)
                .map(|i| {
                    for (slot, row) in col.iter_mut().zip(loglik) {
                        *slot = row[i];
                    }
                    log_sum_exp(&col) - log_c
                })
                .sum::<f64>()
        }
    };
    Ok(DicResult {
        variant: variant.index(),
        dic: 2.0 * d_bar - d_hat,
        p_d: d_bar - d_hat,
        d_bar,
        d_hat,
    })
}

/// A state whose `B`, `theta_i` and `Sigma_u` are posterior means; the other
/// fields are copied from the last draw and are not meaningful.
fn posterior_mean_plug_in(chain: &PosteriorChain) -> Result<BspState> {
    let c = chain.draws.len() as f64;
    let mut mean = chain.draws.last().expect("non-empty chain").clone();
    let mut b = DMatrix::zeros(mean.b.nrows(), mean.b.ncols());
    let mut theta = vec![DVector::zeros(mean.tau.dim()); mean.theta.len()];
    let mut sigma: Vec<DMatrix<f64>> = mean.sigma.iter().map(|s| DMatrix::zeros(s.dim(), s.dim())).collect();
    for d in &chain.draws {
        b += &d.b;
        for (t, dt) in theta.iter_mut().zip(&d.theta) {
            *t += dt;
        }
        for (s, ds) in sigma.iter_mut().zip(&d.sigma) {
            *s += ds.matrix();
        }
    }
    mean.b = b / c;
    mean.theta = theta.into_iter().map(|t| t / c).collect();
    mean.sigma = sigma
        .into_iter()
        .map(|s| SpdMatrix::named(symmetrize(s / c), "posterior mean Sigma_u"))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean)
}

/// ROC curve of one positive class against the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub positive: usize,
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one point per threshold.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for (f, t) in &self.points {
            out.push_str(&format!("{f},{t}\n"));
        }
        out
    }
}

/// ROC curve for `labels[i] == positive` scored by `scores`.
///
/// Thresholds run over `+inf` and every distinct score (predict positive
/// when `score >= threshold`), so tied scores move the curve diagonally.
/// The trapezoid area is accumulated in integers and equals the
/// Mann-Whitney statistic exactly.
pub fn roc_curve(scores: &[f64], labels: &[usize], positive: usize) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Domain("ROC scores contain NaN".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == positive).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Domain(format!(
            "ROC needs both classes: {n_pos} positives, {n_neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == positive {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += (fp - fp0) as u128 * (tp + tp0) as u128;
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    let auc = twice_area as f64 / (2 * n_pos as u128 * n_neg as u128) as f64;
    Ok(RocCurve { positive, points, auc })
}

/// Pairwise `P(score_pos > score_neg) + P(tie)/2`, by brute force.
pub fn mann_whitney_auc(scores: &[f64], labels: &[usize], positive: usize) -> f64 {
    let mut twice: u128 = 0;
    let mut pairs: u128 = 0;
    for (a, &la) in labels.iter().enumerate() {
        if la != positive {
            continue;
        }
        for (b, &lb) in labels.iter().enumerate() {
            if lb == positive {
                continue;
            }
            pairs += 1;
            twice += match scores[a].partial_cmp(&scores[b]) {
                Some(std::cmp::Ordering::Greater) => 2,
                Some(std::cmp::Ordering::Equal) => 1,
                _ => 0,
            };
        }
    }
    twice as f64 / (2 * pairs) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub name: String,
    pub lpml: f64,
    pub dic: Vec<DicResult>,
}

pub fn compare_model(name: &str, chain: &PosteriorChain, data: &Dataset) -> Result<ModelComparison> {
    let loglik = log_likelihood_matrix(chain, data)?;
    let lpml = cpo_from_loglik(&loglik)?.lpml;
    let dic = DicVariant::ALL
        .iter()
        .map(|&v| dic_from_parts(chain, data, &loglik, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelComparison {
        name: name.to_string(),
        lpml,
        dic,
    })
}
