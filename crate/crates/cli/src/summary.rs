//! Posterior summaries printed by `fit` and tabulated by `sweep`.

use foodauth_core::domain::{ModelKind, PosteriorChain};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub quantity: String,
    pub mean: f64,
    pub sd: f64,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn row(chain: &PosteriorChain, quantity: String, f: impl Fn(&foodauth_core::domain::BspState) -> f64) -> SummaryRow {
    let xs: Vec<f64> = chain.draws.iter().map(f).collect();
    let (mean, sd) = mean_sd(&xs);
    SummaryRow { quantity, mean, sd }
}

/// Responses summarized by default: the third and fifth when they exist
/// (the two anthocyanins of the wine sensitivity table), otherwise the
/// first two. 1-based.
pub fn default_responses(p: usize) -> Vec<usize> {
    if p >= 5 {
        vec![3, 5]
    } else {
        (1..=p.min(2)).collect()
    }
}

/// `M` (DP chains only), then for each 1-based response `r` the fixed
/// effect of the first group `B[r, 1]` and the diagonal entry `tau[r, r]`.
pub fn table_summary(chain: &PosteriorChain, responses: &[usize]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    if chain.model == ModelKind::Bsp {
        rows.push(row(chain, "M".into(), |s| s.mass));
    }
    for &r in responses {
        let i = r - 1;
        rows.push(row(chain, format!("beta[{r},1]"), move |s| s.b[(i, 0)]));
        rows.push(row(chain, format!("tau[{r},{r}]"), move |s| s.tau.matrix()[(i, i)]));
    }
    rows
}

/// Every scalar of the model: `M` and cluster count, all of `B`, and the
/// upper triangles of `tau`, `Lambda`, each `Sigma_u` and `R`.
pub fn full_summary(chain: &PosteriorChain) -> Vec<SummaryRow> {
    let d = chain.dims;
    let mut rows = Vec::new();
    if chain.model == ModelKind::Bsp {
        rows.push(row(chain, "M".into(), |s| s.mass));
        rows.push(row(chain, "clusters".into(), |s| s.n_clusters() as f64));
    }
    for i in 0..d.p {
        for j in 0..d.q {
            rows.push(row(chain, format!("beta[{},{}]", i + 1, j + 1), move |s| s.b[(i, j)]));
        }
    }
    let tri = |rows: &mut Vec<SummaryRow>, name: &str, dim: usize, get: &dyn Fn(&foodauth_core::domain::BspState, usize, usize) -> f64| {
        for i in 0..dim {
            for j in i..dim {
                rows.push(row(chain, format!("{name}[{},{}]", i + 1, j + 1), |s| get(s, i, j)));
            }
        }
    };
    tri(&mut rows, "tau", d.p, &|s, i, j| s.tau.matrix()[(i, j)]);
    tri(&mut rows, "Lambda", d.p, &|s, i, j| s.lambda.matrix()[(i, j)]);
    for u in 0..d.m {
        tri(&mut rows, &format!("Sigma_{}", u + 1), d.p, &move |s, i, j| s.sigma[u].matrix()[(i, j)]);
    }
    tri(&mut rows, "R", d.p * d.k, &|s, i, j| s.r.matrix()[(i, j)]);
    rows
}

pub fn render(rows: &[SummaryRow]) -> String {
    let width = rows.iter().map(|r| r.quantity.len()).max().unwrap_or(8).max(8);
    let mut out = format!("{:<width$}  {:>12}  {:>12}\n", "quantity", "mean", "(sd)");
    for r in rows {
        out.push_str(&format!("{:<width$}  {:>12.4}  {:>12}\n", r.quantity, r.mean, format!("({:.4})", r.sd)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_sd() {
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_sd(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn responses_follow_dimension() {
        assert_eq!(default_responses(9), vec![3, 5]);
        assert_eq!(default_responses(2), vec![1, 2]);
        assert_eq!(default_responses(1), vec![1]);
    }
}
