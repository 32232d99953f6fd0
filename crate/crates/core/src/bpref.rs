//! Baselines: the parametric model with a single shared random-effect mean,
//! and Gaussian linear discriminant analysis.

use nalgebra::{DMatrix, DVector};

use crate::domain::{Dataset, Hyperparameters, McmcSettings, ModelKind, PosteriorChain};
use crate::dpmm::run_chain_on_stream;
use crate::error::{Error, Result};
use crate::randmat::{log_sum_exp, symmetrize, SpdMatrix};

/// Gibbs sampler for the parametric model `theta_i ~ N_p(z_i alpha, tau)`,
/// `alpha ~ N_pk(0, R)`.
///
/// Shares every update with the DP sampler; the partition stays at one
/// cluster holding all units and `M` is neither used nor updated.
pub fn run_bp_chain(data: &Dataset, hyper: &Hyperparameters, settings: &McmcSettings) -> Result<PosteriorChain> {
    run_chain_on_stream(data, hyper, settings, ModelKind::Bp, 0)
}

/// Fitted LDA classifier.
#[derive(Debug, Clone)]
pub struct LdaModel {
    means: Vec<Option<DVector<f64>>>,
    pooled: SpdMatrix,
    priors: Vec<f64>,
    /// `Sigma^{-1} mu_u` per group.
    coef: Vec<Option<DVector<f64>>>,
    /// `-1/2 mu_u^T Sigma^{-1} mu_u + log pi_u`.
    offset: Vec<f64>,
}

impl LdaModel {
    pub fn means(&self) -> &[Option<DVector<f64>>] {
        &self.means
    }

    /// Pooled within-group covariance, divided by `n - m`.
    pub fn pooled_covariance(&self) -> &SpdMatrix {
        &self.pooled
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }
}

/// Fits class means, the pooled covariance and empirical class priors.
///
/// Groups without training units get prior 0 and never win.
pub fn lda_fit(train: &Dataset) -> Result<LdaModel> {
    let (n, p, m) = (train.n(), train.p(), train.m());
    let counts = train.group_counts();
    let present = counts.iter().filter(|&&c| c > 0).count();
    if n < present + p {
        return Err(Error::Data(format!(
            "LDA needs n - m >= p (n = {n}, m = {present}, p = {p}); reduce the response dimension"
        )));
    }
    let mut sums = vec![DVector::<f64>::zeros(p); m];
    for u in train.units() {
        sums[u.group] += &u.y;
    }
    let means: Vec<Option<DVector<f64>>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    let mut scatter = DMatrix::<f64>::zeros(p, p);
    for u in train.units() {
        let d = &u.y - means[u.group].as_ref().expect("group has units");
        scatter += &d * d.transpose();
    }
    let pooled = SpdMatrix::named(symmetrize(scatter / (n - present) as f64), "pooled covariance").map_err(|_| {
        Error::Data("pooled within-group covariance is singular; reduce the response dimension".into())
    })?;
    let priors: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let mut coef = Vec::with_capacity(m);
    let mut offset = Vec::with_capacity(m);
    for (mu, &pi) in means.iter().zip(&priors) {
        match mu {
            Some(mu) => {
                let a = pooled.solve(mu);
                offset.push(-0.5 * mu.dot(&a) + pi.ln());
                coef.push(Some(a));
            }
            None => {
                offset.push(f64::NEG_INFINITY);
                coef.push(None);
            }
        }
    }
    Ok(LdaModel {
        means,
        pooled,
        priors,
        coef,
        offset,
    })
}

/// Posterior class probabilities for `y` by Bayes' rule.
pub fn lda_predict(model: &LdaModel, y: &DVector<f64>) -> Vec<f64> {
    let scores: Vec<f64> = model
        .coef
        .iter()
        .zip(&model.offset)
        .map(|(a, &o)| match a {
            Some(a) => y.dot(a) + o,
            None => f64::NEG_INFINITY,
        })
        .collect();
    let norm = log_sum_exp(&scores);
    scores.iter().map(|s| (s - norm).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randmat::RngStream;

    fn two_class(points: &[(usize, [f64; 2])]) -> Dataset {
        Dataset::from_labelled(
            points
                .iter()
                .map(|(g, y)| (format!("c{g}"), "l".to_string(), y.to_vec()))
                .collect(),
            2,
        )
        .unwrap()
    }

    fn lattice_around(c: [f64; 2], g: usize) -> Vec<(usize, [f64; 2])> {
        vec![
            (g, [c[0] + 1.0, c[1]]),
            (g, [c[0] - 1.0, c[1]]),
            (g, [c[0], c[1] + 1.0]),
            (g, [c[0], c[1] - 1.0]),
        ]
    }

    #[test]
    fn separated_classes() {
        let mut pts = lattice_around([10.0, 0.0], 0);
        pts.extend(lattice_around([-10.0, 0.0], 1));
        let model = lda_fit(&two_class(&pts)).unwrap();
        let pr = lda_predict(&model, &DVector::from_vec(vec![10.0, 0.0]));
        assert!(pr[0] > 0.999);
        let mid = lda_predict(&model, &DVector::from_vec(vec![0.0, 3.0]));
        assert_eq!(mid[0], mid[1]);
        assert!((mid[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn singular_pooled_covariance_is_reported() {
        let pts = vec![(0, [1.0, 1.0]), (1, [2.0, 2.0]), (0, [1.0, 1.0])];
        let err = lda_fit(&two_class(&pts)).unwrap_err();
        assert!(err.to_string().contains("reduce the response dimension"), "{err}");
    }

    #[test]
    fn matches_hand_expanded_discriminant() {
        let mut rng = RngStream::new(31, 0);
        let pts: Vec<(usize, [f64; 2])> = (0..30)
            .map(|i| {
                let g = i % 3;
                (g, [rng.standard_normal() + g as f64, rng.standard_normal() * 0.7 - g as f64])
            })
            .collect();
        let data = two_class(&pts);
        let model = lda_fit(&data).unwrap();
        // 2x2 inverse by cofactors
        let s = model.pooled_covariance().matrix();
        let det = s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(1, 0)];
        let inv = [[s[(1, 1)] / det, -s[(0, 1)] / det], [-s[(1, 0)] / det, s[(0, 0)] / det]];
        for _ in 0..20 {
            let y = [rng.standard_normal() * 2.0, rng.standard_normal() * 2.0];
            let delta: Vec<f64> = (0..3)
                .map(|g| {
                    let mu = model.means()[g].as_ref().unwrap();
                    let a = [
                        inv[0][0] * mu[0] + inv[0][1] * mu[1],
                        inv[1][0] * mu[0] + inv[1][1] * mu[1],
                    ];
                    y[0] * a[0] + y[1] * a[1] - 0.5 * (mu[0] * a[0] + mu[1] * a[1]) + model.priors()[g].ln()
                })
                .collect();
            let mx = delta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = delta.iter().map(|d| (d - mx).exp()).sum();
            let got = lda_predict(&model, &DVector::from_vec(y.to_vec()));
            for g in 0..3 {
                assert!((got[g] - (delta[g] - mx).exp() / z).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn decision_boundary_is_linear() {
        let mut rng = RngStream::new(32, 0);
        let pts: Vec<(usize, [f64; 2])> = (0..40)
            .map(|i| {
                let g = i % 2;
                (g, [rng.standard_normal() + 2.0 * g as f64, rng.standard_normal()])
            })
            .collect();
        let model = lda_fit(&two_class(&pts)).unwrap();
        let label = |x: f64, y: f64| {
            let pr = lda_predict(&model, &DVector::from_vec(vec![x, y]));
            usize::from(pr[1] > pr[0])
        };
        let grid: Vec<(f64, f64)> = (-4..=4)
            .flat_map(|i| (-4..=4).map(move |j| (i as f64, j as f64)))
            .collect();
        for &(ax, ay) in &grid {
            for &(bx, by) in &grid {
                if label(ax, ay) == label(bx, by) {
                    continue;
                }
                let mut flips = 0;
                let mut prev = label(ax, ay);
                for s in 1..=200 {
                    let t = s as f64 / 200.0;
                    let cur = label(ax + t * (bx - ax), ay + t * (by - ay));
                    if cur != prev {
                        flips += 1;
                        prev = cur;
                    }
                }
                assert_eq!(flips, 1);
            }
        }
    }
}
