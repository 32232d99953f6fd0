//! Joint-distribution ("getting it right") test of the Gibbs sampler.
//!
//! The marginal-conditional side draws parameters from the prior and then
//! responses given parameters. The successive-conditional side alternates
//! one Gibbs sweep with a fresh draw of the responses. Both target the same
//! joint distribution, so the means of any functional must agree.

use crate::domain::{BspState, Dataset, Dims, Hyperparameters, ModelKind, SweepOptions};
use crate::dpmm::{gibbs_sweep, prior_draw_state, simulate_responses};
use crate::error::{Error, Result};
use crate::randmat::RngStream;

type FunctionalFn = dyn Fn(&BspState, &Dataset) -> f64 + Send + Sync;

/// Named scalar function of a (parameters, responses) pair.
pub struct Functional {
    pub name: String,
    pub f: Box<FunctionalFn>,
}

impl Functional {
    pub fn new(name: impl Into<String>, f: impl Fn(&BspState, &Dataset) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            f: Box::new(f),
        }
    }
}

impl std::fmt::Debug for Functional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Functional").field("name", &self.name).finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GewekeConfig {
    pub model: ModelKind,
    pub sweep: SweepOptions,
    /// Draws on each side.
    pub draws: usize,
    /// Discarded sweeps at the start of the successive-conditional chain.
    pub burn_in: usize,
    /// Batches for the batch-means standard error of the successive side.
    pub batches: usize,
    pub seed: u64,
}

impl GewekeConfig {
    pub fn new(model: ModelKind, draws: usize, seed: u64) -> Self {
        Self {
            model,
            sweep: SweepOptions::default(),
            draws,
            burn_in: 100,
            batches: 50,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GewekeResult {
    pub name: String,
    pub marginal_mean: f64,
    pub successive_mean: f64,
    pub z: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var)
}

fn batch_means_se2(xs: &[f64], batches: usize) -> f64 {
    let size = xs.len() / batches;
    if size == 0 || batches < 2 {
        return mean_var(xs).1 / xs.len() as f64;
    }
    let means: Vec<f64> = xs
        .chunks_exact(size)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    mean_var(&means).1 / batches as f64
}

/// Runs both simulators on the design of `design` (its responses are
/// ignored) and compares functional means. `sweep` performs one
/// successive-conditional transition; pass [`gibbs_sweep`] or a modified
/// update to check the harness's sensitivity.
pub fn geweke_harness(
    design: &Dataset,
    hyper: &Hyperparameters,
    functionals: &[Functional],
    config: &GewekeConfig,
    mut sweep: impl FnMut(&mut BspState, &Dataset, &mut RngStream) -> Result<()>,
) -> Result<Vec<GewekeResult>> {
    if functionals.is_empty() {
        return Ok(Vec::new());
    }
    if config.draws < 2 {
        return Err(Error::Domain("Geweke test needs at least two draws per side".into()));
    }
    hyper.validate(design.p(), design.k())?;
    let nf = functionals.len();
    let eval = |state: &BspState, data: &Dataset, out: &mut [Vec<f64>]| {
        for (slot, g) in out.iter_mut().zip(functionals) {
            slot.push((g.f)(state, data));
        }
    };

    let mut marginal = vec![Vec::with_capacity(config.draws); nf];
    let mut rng = RngStream::new(config.seed, 0);
    for _ in 0..config.draws {
        let state = prior_draw_state(design, hyper, config.model, &mut rng)?;
        let data = simulate_responses(&state, design, &mut rng)?;
        eval(&state, &data, &mut marginal);
    }

    let mut successive = vec![Vec::with_capacity(config.draws); nf];
    let mut rng = RngStream::new(config.seed, 1);
    let mut state = prior_draw_state(design, hyper, config.model, &mut rng)?;
    let mut data = simulate_responses(&state, design, &mut rng)?;
    for t in 0..config.burn_in + config.draws {
        sweep(&mut state, &data, &mut rng).map_err(|e| Error::Chain {
            iteration: t + 1,
            source: Box::new(e),
        })?;
        data = simulate_responses(&state, design, &mut rng)?;
        if t >= config.burn_in {
            eval(&state, &data, &mut successive);
        }
    }

    Ok(functionals
        .iter()
        .zip(marginal.iter().zip(&successive))
        .map(|(g, (mc, sc))| {
            let (m1, v1) = mean_var(mc);
            let m2 = sc.iter().sum::<f64>() / sc.len() as f64;
            let se2 = v1 / mc.len() as f64 + batch_means_se2(sc, config.batches);
            let z = if se2 > 0.0 {
                (m1 - m2) / se2.sqrt()
            } else if m1 == m2 {
                0.0
            } else {
                f64::INFINITY
            };
            GewekeResult {
                name: g.name.clone(),
                marginal_mean: m1,
                successive_mean: m2,
                z,
            }
        })
        .collect())
}

/// [`geweke_harness`] with the production sweep.
pub fn geweke_test(
    design: &Dataset,
    hyper: &Hyperparameters,
    functionals: &[Functional],
    config: &GewekeConfig,
) -> Result<Vec<GewekeResult>> {
    let (model, sweep) = (config.model, config.sweep);
    geweke_harness(design, hyper, functionals, config, |s, d, rng| {
        gibbs_sweep(s, d, hyper, model, sweep, rng)
    })
}

/// First and second moments of the parameters and responses that exist for
/// `dims`. Concentration and cluster-count functionals are only included
/// for the DP model, where they vary.
pub fn default_functionals(dims: Dims, model: ModelKind) -> Vec<Functional> {
    let Dims { p, k, .. } = dims;
    let last = p - 1;
    let mut fs = vec![
        Functional::new("B[0,0]", |s, _| s.b[(0, 0)]),
        Functional::new(format!("B[{last},0]"), move |s, _| s.b[(last, 0)]),
        Functional::new("B[0,0]^2", |s, _| s.b[(0, 0)].powi(2)),
        Functional::new("beta0[0,0]", |s, _| s.beta0[(0, 0)]),
        Functional::new(format!("beta0[{last},0]"), move |s, _| s.beta0[(last, 0)]),
        Functional::new("Lambda[0,0]", |s, _| s.lambda.matrix()[(0, 0)]),
        Functional::new(format!("Lambda[0,{last}]"), move |s, _| s.lambda.matrix()[(0, last)]),
        Functional::new("Sigma_0[0,0]", |s, _| s.sigma[0].matrix()[(0, 0)]),
        Functional::new(format!("Sigma_0[{last},{last}]"), move |s, _| s.sigma[0].matrix()[(last, last)]),
        Functional::new(format!("Sigma_0[0,{last}]"), move |s, _| s.sigma[0].matrix()[(0, last)]),
        Functional::new("tau[0,0]", |s, _| s.tau.matrix()[(0, 0)]),
        Functional::new(format!("tau[{last},{last}]"), move |s, _| s.tau.matrix()[(last, last)]),
        Functional::new(format!("tau[0,{last}]"), move |s, _| s.tau.matrix()[(0, last)]),
        Functional::new("R[0,0]", |s, _| s.r.matrix()[(0, 0)]),
        Functional::new(format!("R[{0},{0}]", p * k - 1), move |s, _| s.r.matrix()[(p * k - 1, p * k - 1)]),
        Functional::new("R[0,1]", |s, _| if s.r.dim() > 1 { s.r.matrix()[(0, 1)] } else { 0.0 }),
        Functional::new("theta_0[0]", |s, _| s.theta[0][0]),
        Functional::new("theta_0[0]^2", |s, _| s.theta[0][0].powi(2)),
        Functional::new("mean theta[0]", |s, _| s.theta.iter().map(|t| t[0]).sum::<f64>() / s.theta.len() as f64),
        Functional::new("atom of unit 0 [0]", |s, d| s.unit_atom_block(0, d.units()[0].level)[0]),
        Functional::new("y_0[0]", |_, d| d.units()[0].y[0]),
        Functional::new(format!("y_0[{last}]"), move |_, d| d.units()[0].y[last]),
        Functional::new("y_0[0]^2", |_, d| d.units()[0].y[0].powi(2)),
        Functional::new("mean y[0]", |_, d| d.units().iter().map(|u| u.y[0]).sum::<f64>() / d.n() as f64),
        Functional::new("y_0[0] theta_0[0]", |s, d| d.units()[0].y[0] * s.theta[0][0]),
        Functional::new("y_0[0] B[0,0]", |s, d| d.units()[0].y[0] * s.b[(0, 0)]),
        Functional::new("(y_1[0] - y_0[0])^2", |_, d| {
            let u = d.units();
            (u[u.len() - 1].y[0] - u[0].y[0]).powi(2)
        }),
    ];
    if model == ModelKind::Bsp {
        fs.push(Functional::new("M", |s, _| s.mass));
        fs.push(Functional::new("clusters", |s, _| s.n_clusters() as f64));
        fs.push(Functional::new("units 0 and 1 share a cluster", |s, _| {
            f64::from(u8::from(s.config[0] == s.config[1]))
        }));
    }
    fs
}
