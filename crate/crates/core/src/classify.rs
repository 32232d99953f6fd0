//! Posterior-predictive group probabilities, the arg-max rule, and
//! leave-one-out cross-validation.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bpref::{lda_fit, lda_predict};
use crate::diagnostics::{roc_curve, RocCurve};
use crate::domain::{z_block, BspState, Dataset, Hyperparameters, McmcSettings, ModelKind, PosteriorChain};
use crate::dpmm::run_chain_on_stream;
use crate::error::{Error, Result};
use crate::randmat::{log_sum_exp, SpdMatrix};

/// Which classifier a cross-validation run refits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classifier {
    Bsp,
    Bp,
    Lda,
}

impl From<ModelKind> for Classifier {
    fn from(m: ModelKind) -> Self {
        match m {
            ModelKind::Bsp => Classifier::Bsp,
            ModelKind::Bp => Classifier::Bp,
        }
    }
}

impl std::fmt::Display for Classifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Classifier::Bsp => "bsp",
            Classifier::Bp => "bp",
            Classifier::Lda => "lda",
        };
        f.write_str(s)
    }
}

/// Prior group probabilities `pi_u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupPriors {
    /// Group proportions of the training data.
    Empirical,
    Uniform,
    Explicit(Vec<f64>),
}

impl GroupPriors {
    pub fn resolve(&self, train_counts: &[usize]) -> Result<Vec<f64>> {
        let m = train_counts.len();
        let pi = match self {
            GroupPriors::Empirical => {
                let n: usize = train_counts.iter().sum();
                train_counts.iter().map(|&c| c as f64 / n as f64).collect()
            }
            GroupPriors::Uniform => vec![1.0 / m as f64; m],
            GroupPriors::Explicit(v) => v.clone(),
        };
        if pi.len() != m || pi.iter().any(|&v| !(v >= 0.0)) || (pi.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "group priors must be {m} non-negative numbers summing to 1, got {pi:?}"
            )));
        }
        Ok(pi)
    }
}

/// Per-draw factorizations for the one-step predictive density.
struct DrawPredictive<'a> {
    draw: &'a BspState,
    p: usize,
    /// `Sigma_u + tau` per group.
    existing: Vec<SpdMatrix>,
    /// `Sigma_u + tau + R_ll` per (group, level); empty when `M = 0`.
    fresh: Vec<Vec<SpdMatrix>>,
    log_sizes: Vec<f64>,
    log_norm: f64,
}

impl<'a> DrawPredictive<'a> {
    fn new(draw: &'a BspState, p: usize, k: usize) -> Result<Self> {
        let existing = draw
            .sigma
            .iter()
            .map(|s| s.add(&draw.tau).map_err(|e| e.named("Sigma_u + tau")))
            .collect::<Result<Vec<_>>>()?;
        let fresh = if draw.mass > 0.0 {
            let blocks = (0..k)
                .map(|l| draw.r.diagonal_block(l * p, p))
                .collect::<Result<Vec<_>>>()?;
            existing
                .iter()
                .map(|s| {
                    blocks
                        .iter()
                        .map(|b| s.add(b).map_err(|e| e.named("Sigma_u + tau + R_ll")))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let n = draw.config.len() as f64;
        Ok(Self {
            draw,
            p,
            existing,
            fresh,
            log_sizes: draw.cluster_sizes().iter().map(|&s| (s as f64).ln()).collect(),
            log_norm: (n + draw.mass).ln(),
        })
    }

    fn log_density(&self, y: &[f64], level: usize, group: usize) -> f64 {
        let p = self.p;
        let base: Vec<f64> = (0..p).map(|r| y[r] - self.draw.b[(r, group)]).collect();
        let mut terms = Vec::with_capacity(self.draw.atoms.len() + 1);
        let mut diff = vec![0.0; p];
        for (atom, &ls) in self.draw.atoms.iter().zip(&self.log_sizes) {
            let a = z_block(atom, level, p);
            for r in 0..p {
                diff[r] = base[r] - a[r];
            }
            terms.push(ls + self.existing[group].normal_log_density(&diff));
        }
        if self.draw.mass > 0.0 {
            terms.push(self.draw.mass.ln() + self.fresh[group][level].normal_log_density(&base));
        }
        log_sum_exp(&terms) - self.log_norm
    }
}

fn check_authentication_mode(draw: &BspState, m: usize) -> Result<()> {
    if draw.b.ncols() != m {
        return Err(Error::Dimension(format!(
            "classification needs one fixed-effect column per group: B has {} columns, m = {m}",
            draw.b.ncols()
        )));
    }
    Ok(())
}

/// Log of the one-step predictive density of a new unit in `group` at
/// `level`, given one posterior draw:
///
/// `sum_c n_c/(n+M) N_p(y | B x_u + z alpha_c, Sigma_u + tau)
///  + M/(n+M) N_p(y | B x_u, Sigma_u + tau + R_ll)`
///
/// with `x_u` the one-hot row of `group`.
pub fn log_predictive_group_density(draw: &BspState, y: &DVector<f64>, level: usize, group: usize) -> Result<f64> {
    let p = draw.tau.dim();
    let m = draw.sigma.len();
    let k = draw.r.dim() / p;
    check_authentication_mode(draw, m)?;
    if y.len() != p {
        return Err(Error::Dimension(format!("y has {} entries, p = {p}", y.len())));
    }
    if level >= k || group >= m {
        return Err(Error::Domain(format!("level {level} / group {group} out of range")));
    }
    Ok(DrawPredictive::new(draw, p, k)?.log_density(y.as_slice(), level, group))
}

pub fn predictive_group_density(draw: &BspState, y: &DVector<f64>, level: usize, group: usize) -> Result<f64> {
    log_predictive_group_density(draw, y, level, group).map(f64::exp)
}

/// Normalizes `pi_u p_u` from log densities.
fn posterior_ratio(log_dens: &[f64], priors: &[f64]) -> Vec<f64> {
    let terms: Vec<f64> = log_dens.iter().zip(priors).map(|(d, p)| d + p.ln()).collect();
    let norm = log_sum_exp(&terms);
    terms.iter().map(|t| (t - norm).exp()).collect()
}

/// Averages per-draw group ratios given each draw's log densities
/// (`log_dens[c][u]`).
pub fn average_ratios(log_dens: &[Vec<f64>], priors: &[f64]) -> Vec<f64> {
    let m = priors.len();
    let mut acc = vec![0.0; m];
    for d in log_dens {
        for (a, r) in acc.iter_mut().zip(posterior_ratio(d, priors)) {
            *a += r;
        }
    }
    let c = log_dens.len() as f64;
    acc.iter().map(|a| a / c).collect()
}

/// Group probabilities for several units: `points` are `(y, level)` pairs.
pub fn classify_points(
    chain: &PosteriorChain,
    points: &[(&DVector<f64>, usize)],
    priors: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if chain.draws.is_empty() {
        return Err(Error::Domain("empty chain".into()));
    }
    let (p, k, m) = (chain.dims.p, chain.dims.k, chain.dims.m);
    if priors.len() != m {
        return Err(Error::Dimension(format!("{} priors for {m} groups", priors.len())));
    }
    for (y, level) in points {
        if y.len() != p || *level >= k {
            return Err(Error::Dimension(format!(
                "point of length {} at level {level} does not fit chain with p = {p}, k = {k}",
                y.len()
            )));
        }
    }
    let mut log_dens = vec![Vec::with_capacity(chain.draws.len()); points.len()];
    for draw in &chain.draws {
        check_authentication_mode(draw, m)?;
        let pred = DrawPredictive::new(draw, p, k)?;
        for (slot, (y, level)) in log_dens.iter_mut().zip(points) {
            slot.push((0..m).map(|u| pred.log_density(y.as_slice(), *level, u)).collect::<Vec<_>>());
        }
    }
    Ok(log_dens.iter().map(|d| average_ratios(d, priors)).collect())
}

/// `P(g = u | y, training data)` averaged over the stored draws.
pub fn classify_probabilities(
    chain: &PosteriorChain,
    y: &DVector<f64>,
    level: usize,
    priors: &[f64],
) -> Result<Vec<f64>> {
    Ok(classify_points(chain, &[(y, level)], priors)?.remove(0))
}

/// Index of the largest probability; ties go to the lowest index.
pub fn classify_label(probabilities: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in probabilities.iter().enumerate() {
        if v > probabilities[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classifier: Classifier,
    pub group_names: Vec<String>,
    pub probabilities: Vec<Vec<f64>>,
    pub predicted: Vec<usize>,
    pub truth: Vec<usize>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub class_error: Vec<f64>,
    pub total_error: f64,
    /// One-vs-rest curve per group, scored by that group's probability.
    pub roc: Vec<RocCurve>,
}

impl ClassificationReport {
    pub fn new(
        classifier: Classifier,
        group_names: Vec<String>,
        probabilities: Vec<Vec<f64>>,
        truth: Vec<usize>,
    ) -> Result<Self> {
        let m = group_names.len();
        let predicted: Vec<usize> = probabilities.iter().map(|p| classify_label(p)).collect();
        let confusion = confusion_matrix(&truth, &predicted, m);
        let (class_error, total_error) = error_rates(&confusion);
        let roc = (0..m)
            .filter_map(|u| {
                let has_pos = truth.iter().any(|&t| t == u);
                let has_neg = truth.iter().any(|&t| t != u);
                (has_pos && has_neg).then(|| {
                    let scores: Vec<f64> = probabilities.iter().map(|p| p[u]).collect();
                    roc_curve(&scores, &truth, u)
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            classifier,
            group_names,
            probabilities,
            predicted,
            truth,
            confusion,
            class_error,
            total_error,
            roc,
        })
    }

    /// Confusion matrix as CSV: header `true\predicted,<names...>`, one row per true group.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for n in &self.group_names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (name, row) in self.group_names.iter().zip(&self.confusion) {
            out.push_str(name);
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

/// `confusion[true][predicted]` counts.
pub fn confusion_matrix(truth: &[usize], predicted: &[usize], m: usize) -> Vec<Vec<usize>> {
    let mut c = vec![vec![0; m]; m];
    for (&t, &p) in truth.iter().zip(predicted) {
        c[t][p] += 1;
    }
    c
}

/// Per-class error (off-diagonal share of each row) and total error
/// (off-diagonal mass over `n`). Empty classes report 0.
pub fn error_rates(confusion: &[Vec<usize>]) -> (Vec<f64>, f64) {
    let mut wrong_total = 0;
    let mut n = 0;
    let per_class = confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: usize = row.iter().sum();
            let wrong = total - row[i];
            wrong_total += wrong;
            n += total;
            if total == 0 {
                0.0
            } else {
                wrong as f64 / total as f64
            }
        })
        .collect();
    let total = if n == 0 { 0.0 } else { wrong_total as f64 / n as f64 };
    (per_class, total)
}

/// Classifies every unit of `data` with a chain fitted to it.
pub fn classify_dataset(
    chain: &PosteriorChain,
    data: &Dataset,
    priors: &GroupPriors,
) -> Result<ClassificationReport> {
    if chain.dims.p != data.p() || chain.dims.k != data.k() || chain.dims.m != data.m() {
        return Err(Error::Dimension(format!(
            "chain dimensions {:?} do not match data (p = {}, k = {}, m = {})",
            chain.dims,
            data.p(),
            data.k(),
            data.m()
        )));
    }
    let pi = priors.resolve(&data.group_counts())?;
    let points: Vec<(&DVector<f64>, usize)> = data.units().iter().map(|u| (&u.y, u.level)).collect();
    let probs = classify_points(chain, &points, &pi)?;
    ClassificationReport::new(chain.model.into(), data.group_names().to_vec(), probs, data.labels())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoocvOptions {
    pub priors: GroupPriors,
    /// Classify each unit with the full-data chain instead of refitting.
    /// An in-sample plug-in approximation, off by default.
    pub fast: bool,
}

impl Default for LoocvOptions {
    fn default() -> Self {
        Self {
            priors: GroupPriors::Empirical,
            fast: false,
        }
    }
}

/// Random stream used by LOOCV fold `i`; stream 0 is the full-data chain.
pub fn fold_stream(i: usize) -> u64 {
    1 + i as u64
}

/// Leave-one-out cross-validation.
///
/// Fold `i` refits on every unit except `i` (stream [`fold_stream`]`(i)` of
/// `settings.seed`) and classifies unit `i` with priors from the training
/// fold. Folds run on the current rayon pool; the result does not depend on
/// the number of threads.
pub fn loocv(
    data: &Dataset,
    hyper: &Hyperparameters,
    settings: &McmcSettings,
    classifier: Classifier,
    options: &LoocvOptions,
) -> Result<ClassificationReport> {
    let n = data.n();
    if n < 2 {
        return Err(Error::Data("leave-one-out needs at least two units".into()));
    }
    let full_chain = match (classifier, options.fast) {
        (Classifier::Bsp, true) => Some(run_chain_on_stream(data, hyper, settings, ModelKind::Bsp, 0)?),
        (Classifier::Bp, true) => Some(run_chain_on_stream(data, hyper, settings, ModelKind::Bp, 0)?),
        _ => None,
    };
    let fold = |i: usize| -> Result<Vec<f64>> {
        let unit = &data.units()[i];
        let train = data.leave_out(i)?;
        let pi = options.priors.resolve(&train.group_counts())?;
        match classifier {
            Classifier::Lda => {
                let model = lda_fit(&train)?;
                Ok(lda_predict(&model, &unit.y))
            }
            Classifier::Bsp | Classifier::Bp => {
                let model = if classifier == Classifier::Bsp {
                    ModelKind::Bsp
                } else {
                    ModelKind::Bp
                };
                match &full_chain {
                    Some(chain) => classify_probabilities(chain, &unit.y, unit.level, &pi),
                    None => {
                        let chain = run_chain_on_stream(&train, hyper, settings, model, fold_stream(i))?;
                        classify_probabilities(&chain, &unit.y, unit.level, &pi)
                    }
                }
            }
        }
        .map_err(|e| Error::Fold {
            fold: i,
            source: Box::new(e),
        })
    };
    let probs = (0..n).into_par_iter().map(fold).collect::<Result<Vec<_>>>()?;
    ClassificationReport::new(classifier, data.group_names().to_vec(), probs, data.labels())
}
