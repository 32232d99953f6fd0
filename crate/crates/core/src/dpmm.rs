//! Gibbs sampler for the ANOVA-DDP random-effects model.
//!
//! ```text
//! y_i     ~ N_p(B x_i + theta_i, Sigma_{g_i})
//! theta_i ~ N_p(z_i alpha_{c_i}, tau)
//! alpha_c ~ G,  G ~ DP(M, N_pk(0, R))
//! ```
//!
//! Cluster labels are reassigned with the conjugate Polya-urn scheme
//! (Neal's algorithm 2): each unit is removed from its cluster and put back
//! into an existing cluster or a fresh one drawn from the single-unit
//! posterior. Everything else is a conjugate normal or inverse-Wishart block.
//!
//! The parametric baseline runs through the same functions with the
//! partition frozen to one cluster and the concentration update skipped.

use nalgebra::{DMatrix, DVector};

use crate::domain::{
    z_block, BspState, Dataset, Dims, Hyperparameters, McmcSettings, ModelKind, PosteriorChain,
    RUpdate, Reassign, SweepOptions,
};
use crate::error::{Error, Result};
use crate::randmat::{
    beta_sample, gamma_sample, inverse_wishart_sample, mvn_sample, mvn_sample_canonical,
    sample_log_weights, symmetrize, RngStream, SpdMatrix,
};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Quantities that only depend on `tau` and `R`, cached for one pass of
/// Step 1 over all units.
///
/// For a unit at level `l` the single-unit posterior covariance
/// `D_l = [z^T tau^{-1} z + R^{-1}]^{-1}` depends on the unit only through
/// `l`, so one factorization per level suffices.
#[derive(Debug, Clone)]
pub struct ReassignWorkspace {
    p: usize,
    tau: SpdMatrix,
    /// `D_l` per level.
    pub d: Vec<SpdMatrix>,
    /// `p x p` diagonal block `l` of `D_l`.
    d_block: Vec<DMatrix<f64>>,
    /// Level-dependent constant of the new-cluster log weight:
    /// `-p/2 log(2 pi) - 1/2 log|tau| - 1/2 log|R| + 1/2 log|D_l|`.
    new_const: Vec<f64>,
    tau_inv: DMatrix<f64>,
    log_kernel_const: f64,
}

impl ReassignWorkspace {
    pub fn new(tau: &SpdMatrix, r: &SpdMatrix) -> Result<Self> {
        let p = tau.dim();
        if p == 0 || r.dim() % p != 0 {
            return Err(Error::Dimension(format!(
                "R is {0}x{0}, not a multiple of p = {p}",
                r.dim()
            )));
        }
        let k = r.dim() / p;
        let tau_inv = tau.inverse();
        let r_inv = r.inverse();
        let mut d = Vec::with_capacity(k);
        let mut d_block = Vec::with_capacity(k);
        let mut new_const = Vec::with_capacity(k);
        for l in 0..k {
            let mut prec = r_inv.clone();
            add_block(&mut prec, l, p, &tau_inv, 1.0);
            let prec = SpdMatrix::named(prec, "D_i^{-1}")?;
            let dl = prec.inverse_spd().map_err(|e| e.named("D_i"))?;
            d_block.push(dl.matrix().view((l * p, l * p), (p, p)).into_owned());
            new_const.push(
                -0.5 * p as f64 * LN_2PI - 0.5 * tau.log_det() - 0.5 * r.log_det()
                    + 0.5 * dl.log_det(),
            );
            d.push(dl);
        }
        Ok(Self {
            p,
            tau: tau.clone(),
            d,
            d_block,
            new_const,
            tau_inv,
            log_kernel_const: -0.5 * (p as f64 * LN_2PI + tau.log_det()),
        })
    }

    /// `log N_p(theta | alpha_block, tau)`.
    pub fn log_kernel(&self, theta: &[f64], alpha_block: &[f64]) -> f64 {
        let p = self.p;
        if p <= 16 {
            let mut diff = [0.0_f64; 16];
            for r in 0..p {
                diff[r] = theta[r] - alpha_block[r];
            }
            self.log_kernel_const - 0.5 * self.tau.inv_quad_form(&diff[..p])
        } else {
            let diff: Vec<f64> = theta.iter().zip(alpha_block).map(|(a, b)| a - b).collect();
            self.log_kernel_const - 0.5 * self.tau.inv_quad_form(&diff)
        }
    }

    /// Log of the new-cluster weight (without the `M` factor) for `theta` at `level`:
    /// the `G_0`-marginal density of `theta`, written through `D_l`.
    pub fn log_new_cluster(&self, theta: &[f64], level: usize) -> f64 {
        let p = self.p;
        let th = DVector::from_column_slice(theta);
        let w = &self.tau_inv * &th;
        let quad_tau = th.dot(&w);
        let quad_d = (w.transpose() * &self.d_block[level] * &w)[(0, 0)];
        debug_assert_eq!(theta.len(), p);
        self.new_const[level] - 0.5 * (quad_tau - quad_d)
    }

    /// Draw from `H_i = N_pk(D_l z^T tau^{-1} theta, D_l)`.
    pub fn draw_new_atom(&self, theta: &[f64], level: usize, rng: &mut RngStream) -> Result<DVector<f64>> {
        let p = self.p;
        let w = &self.tau_inv * DVector::from_column_slice(theta);
        let dl = &self.d[level];
        let mean = dl.matrix().columns(level * p, p) * w;
        mvn_sample(&mean, dl, rng)
    }
}

/// Adds `scale * block` to diagonal block `level` of `target`.
fn add_block(target: &mut DMatrix<f64>, level: usize, p: usize, block: &DMatrix<f64>, scale: f64) {
    let mut view = target.view_mut((level * p, level * p), (p, p));
    view += block * scale;
}

/// Unnormalized Step-1 log weights: `log n_c + kernel_c` for existing
/// clusters followed by `log M + new` for a fresh one.
pub fn reassign_log_weights(sizes: &[usize], kernel_logs: &[f64], new_log: f64, mass: f64) -> Vec<f64> {
    let mut w: Vec<f64> = sizes
        .iter()
        .zip(kernel_logs)
        .map(|(&s, &k)| (s as f64).ln() + k)
        .collect();
    w.push(mass.ln() + new_log);
    w
}

/// Normalized probabilities from log weights.
pub fn normalize_log_weights(log_w: &[f64]) -> Vec<f64> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = log_w.iter().map(|w| (w - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Removes unit `i` from its cluster, deleting the cluster if it empties.
fn detach_unit(state: &mut BspState, i: usize) {
    let c = state.config[i];
    let alone = state.config.iter().enumerate().all(|(j, &cj)| j == i || cj != c);
    state.config[i] = usize::MAX;
    if alone {
        let last = state.atoms.len() - 1;
        state.atoms.swap_remove(c);
        if c != last {
            for cj in state.config.iter_mut() {
                if *cj == last {
                    *cj = c;
                }
            }
        }
    }
}

/// Step-1 log weights for unit `i`, which must already be detached, scored
/// at `theta`.
fn step1_weights_detached(state: &BspState, ws: &ReassignWorkspace, i: usize, level: usize, theta: &[f64]) -> Vec<f64> {
    let p = ws.p;
    let mut sizes = vec![0usize; state.atoms.len()];
    for (j, &c) in state.config.iter().enumerate() {
        if j != i {
            sizes[c] += 1;
        }
    }
    let kernels: Vec<f64> = state
        .atoms
        .iter()
        .map(|a| ws.log_kernel(theta, z_block(a, level, p)))
        .collect();
    reassign_log_weights(&sizes, &kernels, ws.log_new_cluster(theta, level), state.mass)
}

/// Step-1 probabilities for unit `i`, computed on a detached copy of
/// `state`. Entries follow the detached copy's cluster order; the last one is
/// the new-cluster probability.
pub fn step1_probabilities(
    state: &BspState,
    data: &Dataset,
    ws: &ReassignWorkspace,
    i: usize,
) -> Vec<f64> {
    let mut s = state.clone();
    detach_unit(&mut s, i);
    normalize_log_weights(&step1_weights_detached(&s, ws, i, data.units()[i].level, state.theta[i].as_slice()))
}

/// Reassigns the cluster label of unit `i`.
pub fn dp_step1_reassign(
    state: &mut BspState,
    data: &Dataset,
    ws: &ReassignWorkspace,
    i: usize,
    rng: &mut RngStream,
) -> Result<()> {
    let theta = state.theta[i].clone();
    reassign_at(state, ws, i, data.units()[i].level, theta.as_slice(), rng)
}

fn reassign_at(
    state: &mut BspState,
    ws: &ReassignWorkspace,
    i: usize,
    level: usize,
    point: &[f64],
    rng: &mut RngStream,
) -> Result<()> {
    detach_unit(state, i);
    let log_w = step1_weights_detached(state, ws, i, level, point);
    let pick = sample_log_weights(&log_w, rng);
    if pick == state.atoms.len() {
        let atom = ws.draw_new_atom(point, level, rng)?;
        state.atoms.push(atom);
    }
    state.config[i] = pick;
    Ok(())
}

/// One workspace per group for the marginal reassignment, built from
/// `Sigma_u + tau` in place of `tau`.
pub fn marginal_workspaces(state: &BspState) -> Result<Vec<ReassignWorkspace>> {
    state
        .sigma
        .iter()
        .map(|s| ReassignWorkspace::new(&s.add(&state.tau)?, &state.r))
        .collect()
}

/// Reassigns unit `i` with its random effect integrated out: existing
/// clusters are scored by `N_p(y_i - B x_i | z_i alpha_c, Sigma_u + tau)`,
/// a new cluster by the `G_0`-marginal of the same residual, and a new atom
/// is drawn from its posterior given that residual. `theta_i` is left stale
/// and must be redrawn by [`update_random_effects`] before anything reads it.
pub fn dp_step1_reassign_marginal(
    state: &mut BspState,
    data: &Dataset,
    ws: &[ReassignWorkspace],
    i: usize,
    rng: &mut RngStream,
) -> Result<()> {
    let unit = &data.units()[i];
    let resid = &unit.y - &state.b * &unit.x;
    reassign_at(state, &ws[unit.group], i, unit.level, resid.as_slice(), rng)
}

/// Precision and linear term of the atom full conditional for cluster `c`:
/// `E^{-1} = sum_i z_i^T tau^{-1} z_i + R^{-1}`, `b = sum_i z_i^T tau^{-1} theta_i`.
pub fn atom_conditional(
    state: &BspState,
    data: &Dataset,
    c: usize,
    tau_inv: &DMatrix<f64>,
    r_inv: &DMatrix<f64>,
) -> Result<(SpdMatrix, DVector<f64>)> {
    let p = tau_inv.nrows();
    let k = r_inv.nrows() / p;
    let mut per_level = vec![0usize; k];
    let mut b = DVector::zeros(p * k);
    for (i, unit) in data.units().iter().enumerate() {
        if state.config[i] != c {
            continue;
        }
        per_level[unit.level] += 1;
        let w = tau_inv * &state.theta[i];
        let mut seg = b.rows_mut(unit.level * p, p);
        seg += w;
    }
    let mut prec = r_inv.clone();
    for (l, &count) in per_level.iter().enumerate() {
        if count > 0 {
            add_block(&mut prec, l, p, tau_inv, count as f64);
        }
    }
    Ok((SpdMatrix::named(prec, "E^{-1}")?, b))
}

/// Redraws every atom from its full conditional.
pub fn dp_step2_atoms(
    state: &mut BspState,
    data: &Dataset,
    rng: &mut RngStream,
) -> Result<()> {
    let tau_inv = state.tau.inverse();
    let r_inv = state.r.inverse();
    for c in 0..state.atoms.len() {
        let (prec, b) = atom_conditional(state, data, c, &tau_inv, &r_inv)?;
        state.atoms[c] = mvn_sample_canonical(&prec, &b, rng)?;
    }
    Ok(())
}

/// Precision and linear term of the `beta_j` full conditional, using the
/// current values of the other columns.
pub fn fixed_effect_conditional(
    state: &BspState,
    data: &Dataset,
    j: usize,
    sigma_inv: &[DMatrix<f64>],
    lambda_inv: &DMatrix<f64>,
) -> Result<(SpdMatrix, DVector<f64>)> {
    let p = data.p();
    let m = data.m();
    let mut weight = vec![0.0; m];
    let mut acc = vec![DVector::<f64>::zeros(p); m];
    for (i, unit) in data.units().iter().enumerate() {
        let xij = unit.x[j];
        if xij == 0.0 {
            continue;
        }
        // y_i - sum_{l != j} x_il beta_l - theta_i
        let mut e = &unit.y - &state.theta[i];
        for l in 0..data.q() {
            if l != j && unit.x[l] != 0.0 {
                e -= state.b.column(l) * unit.x[l];
            }
        }
        weight[unit.group] += xij * xij;
        acc[unit.group] += e * xij;
    }
    let mut prec = lambda_inv.clone();
    let mut b = lambda_inv * state.beta0.column(j);
    for u in 0..m {
        if weight[u] > 0.0 {
            prec += &sigma_inv[u] * weight[u];
            b += &sigma_inv[u] * &acc[u];
        }
    }
    Ok((SpdMatrix::named(symmetrize(prec), "V_j^{-1}")?, b))
}

/// Sequential column-wise update of `B`.
pub fn update_fixed_effects(state: &mut BspState, data: &Dataset, rng: &mut RngStream) -> Result<()> {
    let sigma_inv: Vec<DMatrix<f64>> = state.sigma.iter().map(SpdMatrix::inverse).collect();
    let lambda_inv = state.lambda.inverse();
    for j in 0..data.q() {
        let (prec, b) = fixed_effect_conditional(state, data, j, &sigma_inv, &lambda_inv)?;
        let draw = mvn_sample_canonical(&prec, &b, rng)?;
        state.b.set_column(j, &draw);
    }
    Ok(())
}

/// `theta_i ~ N_p(Q_u[tau^{-1} z_i alpha_{c_i} + Sigma_u^{-1}(y_i - B x_i)], Q_u)`.
pub fn update_random_effects(state: &mut BspState, data: &Dataset, rng: &mut RngStream) -> Result<()> {
    let p = data.p();
    let tau_inv = state.tau.inverse();
    let sigma_inv: Vec<DMatrix<f64>> = state.sigma.iter().map(SpdMatrix::inverse).collect();
    let precs = sigma_inv
        .iter()
        .map(|si| SpdMatrix::named(symmetrize(&tau_inv + si), "Q_u^{-1}"))
        .collect::<Result<Vec<_>>>()?;
    for (i, unit) in data.units().iter().enumerate() {
        let u = unit.group;
        let atom = DVector::from_column_slice(z_block(&state.atoms[state.config[i]], unit.level, p));
        let resid = &unit.y - &state.b * &unit.x;
        let b = &tau_inv * atom + &sigma_inv[u] * resid;
        state.theta[i] = mvn_sample_canonical(&precs[u], &b, rng)?;
    }
    Ok(())
}

/// `beta0_j ~ N_p(D_0[Lambda^{-1} beta_j + tau0^{-1} alpha0], D_0)`.
pub fn update_hyper_means(state: &mut BspState, hyper: &Hyperparameters, rng: &mut RngStream) -> Result<()> {
    let lambda_inv = state.lambda.inverse();
    let tau0_inv = hyper.beta0_cov.inverse();
    let prec = SpdMatrix::named(symmetrize(&lambda_inv + &tau0_inv), "D_0^{-1}")?;
    let prior_term = &tau0_inv * &hyper.beta0_mean;
    for j in 0..state.b.ncols() {
        let b = &lambda_inv * state.b.column(j) + &prior_term;
        let draw = mvn_sample_canonical(&prec, &b, rng)?;
        state.beta0.set_column(j, &draw);
    }
    Ok(())
}

/// Degrees of freedom and scale of the `Lambda` full conditional.
pub fn lambda_conditional(state: &BspState, hyper: &Hyperparameters) -> Result<(f64, SpdMatrix)> {
    let q = state.b.ncols();
    let mut scale = hyper.lambda_scale.matrix().clone();
    for j in 0..q {
        let d = state.b.column(j) - state.beta0.column(j);
        scale += &d * d.transpose();
    }
    Ok((q as f64 + hyper.lambda_df, SpdMatrix::named(scale, "Lambda scale")?))
}

pub fn update_lambda(state: &mut BspState, hyper: &Hyperparameters, rng: &mut RngStream) -> Result<()> {
    let (df, scale) = lambda_conditional(state, hyper)?;
    state.lambda = inverse_wishart_sample(df, &scale, rng).map_err(|e| e.named("Lambda"))?;
    Ok(())
}

/// Degrees of freedom and scale of each `Sigma_u` full conditional.
pub fn residual_cov_conditionals(
    state: &BspState,
    data: &Dataset,
    hyper: &Hyperparameters,
) -> Result<Vec<(f64, SpdMatrix)>> {
    let m = data.m();
    let mut scales = vec![hyper.sigma_scale.matrix().clone(); m];
    let mut counts = vec![0usize; m];
    for (i, unit) in data.units().iter().enumerate() {
        let r = &unit.y - &state.b * &unit.x - &state.theta[i];
        scales[unit.group] += &r * r.transpose();
        counts[unit.group] += 1;
    }
    scales
        .into_iter()
        .zip(counts)
        .map(|(s, n)| Ok((n as f64 + hyper.sigma_df, SpdMatrix::named(s, "Sigma_u scale")?)))
        .collect()
}

pub fn update_residual_covs(
    state: &mut BspState,
    data: &Dataset,
    hyper: &Hyperparameters,
    rng: &mut RngStream,
) -> Result<()> {
    for (u, (df, scale)) in residual_cov_conditionals(state, data, hyper)?.into_iter().enumerate() {
        state.sigma[u] = inverse_wishart_sample(df, &scale, rng).map_err(|e| e.named("Sigma_u"))?;
    }
    Ok(())
}

pub fn tau_conditional(state: &BspState, data: &Dataset, hyper: &Hyperparameters) -> Result<(f64, SpdMatrix)> {
    let p = data.p();
    let mut scale = hyper.tau_scale.matrix().clone();
    for (i, unit) in data.units().iter().enumerate() {
        let atom = DVector::from_column_slice(z_block(&state.atoms[state.config[i]], unit.level, p));
        let d = &state.theta[i] - atom;
        scale += &d * d.transpose();
    }
    Ok((data.n() as f64 + hyper.tau_df, SpdMatrix::named(scale, "tau scale")?))
}

pub fn update_tau(state: &mut BspState, data: &Dataset, hyper: &Hyperparameters, rng: &mut RngStream) -> Result<()> {
    let (df, scale) = tau_conditional(state, data, hyper)?;
    state.tau = inverse_wishart_sample(df, &scale, rng).map_err(|e| e.named("tau"))?;
    Ok(())
}

pub fn r_conditional(state: &BspState, hyper: &Hyperparameters, mode: RUpdate) -> Result<(f64, SpdMatrix)> {
    let mut scale = hyper.r_scale.matrix().clone();
    let count = match mode {
        RUpdate::Atoms => {
            for a in &state.atoms {
                scale += a * a.transpose();
            }
            state.atoms.len()
        }
        RUpdate::Units => {
            for &c in &state.config {
                let a = &state.atoms[c];
                scale += a * a.transpose();
            }
            state.config.len()
        }
    };
    Ok((count as f64 + hyper.r_df, SpdMatrix::named(scale, "R scale")?))
}

pub fn update_r(state: &mut BspState, hyper: &Hyperparameters, mode: RUpdate, rng: &mut RngStream) -> Result<()> {
    let (df, scale) = r_conditional(state, hyper, mode)?;
    state.r = inverse_wishart_sample(df, &scale, rng).map_err(|e| e.named("R"))?;
    Ok(())
}

/// Auxiliary-variable update of the concentration `M` under a
/// `Gamma(a1, a2)` prior, given `n` units in `K` clusters.
pub fn update_concentration_raw(
    mass: f64,
    n: usize,
    clusters: usize,
    a1: f64,
    a2: f64,
    rng: &mut RngStream,
) -> Result<f64> {
    let eta = beta_sample(mass + 1.0, n as f64, rng)?;
    let rate = a2 - eta.ln();
    let k = clusters as f64;
    let odds = (a1 + k - 1.0) / (n as f64 * rate);
    let pi = odds / (1.0 + odds);
    let shape = if rng.uniform() < pi { a1 + k } else { a1 + k - 1.0 };
    gamma_sample(shape, rate, rng)
}

pub fn update_concentration(state: &mut BspState, hyper: &Hyperparameters, rng: &mut RngStream) -> Result<()> {
    state.mass = update_concentration_raw(
        state.mass,
        state.config.len(),
        state.atoms.len(),
        hyper.mass_shape,
        hyper.mass_rate,
        rng,
    )?;
    Ok(())
}

/// One full sweep in the fixed order: Step 1 for every unit, Step 2,
/// random effects, fixed effects, `beta0`, `Lambda`, `Sigma_u`, `tau`, `R`, `M`.
/// With [`Reassign::Marginal`] the random effects are also redrawn between
/// Step 1 and Step 2.
pub fn gibbs_sweep(
    state: &mut BspState,
    data: &Dataset,
    hyper: &Hyperparameters,
    model: ModelKind,
    options: SweepOptions,
    rng: &mut RngStream,
) -> Result<()> {
    let r_update = options.r_update;
    if model == ModelKind::Bsp {
        match options.reassign {
            Reassign::Conditional => {
                let ws = ReassignWorkspace::new(&state.tau, &state.r)?;
                for i in 0..data.n() {
                    dp_step1_reassign(state, data, &ws, i, rng)?;
                }
            }
            Reassign::Marginal => {
                let ws = marginal_workspaces(state)?;
                for i in 0..data.n() {
                    dp_step1_reassign_marginal(state, data, &ws, i, rng)?;
                }
                update_random_effects(state, data, rng)?;
            }
        }
    }
    dp_step2_atoms(state, data, rng)?;
    update_random_effects(state, data, rng)?;
    update_fixed_effects(state, data, rng)?;
    update_hyper_means(state, hyper, rng)?;
    update_lambda(state, hyper, rng)?;
    update_residual_covs(state, data, hyper, rng)?;
    update_tau(state, data, hyper, rng)?;
    match model {
        ModelKind::Bsp => update_r(state, hyper, r_update, rng)?,
        // one atom: the two R-update modes only differ in multiplicity
        ModelKind::Bp => update_r(state, hyper, RUpdate::Atoms, rng)?,
    }
    if model == ModelKind::Bsp {
        update_concentration(state, hyper, rng)?;
    }
    Ok(())
}

fn prior_center(scale: &SpdMatrix, df: f64) -> SpdMatrix {
    let denom = df - scale.dim() as f64 - 1.0;
    if denom >= 1.0 {
        scale.scaled(1.0 / denom).expect("positive factor")
    } else {
        scale.clone()
    }
}

/// Deterministic starting point: least-squares `B`, residual random
/// effects, one cluster whose atom holds the per-level mean residual, and
/// prior-centered covariances.
pub fn initial_state(data: &Dataset, hyper: &Hyperparameters, model: ModelKind) -> Result<BspState> {
    let (n, p, q, k, m) = (data.n(), data.p(), data.q(), data.k(), data.m());
    let mut xtx = DMatrix::<f64>::identity(q, q) * 1e-6;
    let mut xty = DMatrix::<f64>::zeros(q, p);
    for u in data.units() {
        xtx += &u.x * u.x.transpose();
        xty += &u.x * u.y.transpose();
    }
    let xtx = SpdMatrix::named(symmetrize(xtx), "X^T X")?;
    let mut b = DMatrix::<f64>::zeros(p, q);
    for c in 0..p {
        let col = xtx.solve(&xty.column(c).into_owned());
        b.set_row(c, &col.transpose());
    }
    let theta: Vec<DVector<f64>> = data.units().iter().map(|u| &u.y - &b * &u.x).collect();
    let mut atom = DVector::<f64>::zeros(p * k);
    let mut per_level = vec![0usize; k];
    for (t, u) in theta.iter().zip(data.units()) {
        per_level[u.level] += 1;
        let mut seg = atom.rows_mut(u.level * p, p);
        seg += t;
    }
    for (l, &c) in per_level.iter().enumerate() {
        if c > 0 {
            let mut seg = atom.rows_mut(l * p, p);
            seg /= c as f64;
        }
    }
    let state = BspState {
        beta0: b.clone(),
        b,
        theta,
        config: vec![0; n],
        atoms: vec![atom],
        sigma: vec![prior_center(&hyper.sigma_scale, hyper.sigma_df); m],
        tau: prior_center(&hyper.tau_scale, hyper.tau_df),
        r: prior_center(&hyper.r_scale, hyper.r_df),
        lambda: prior_center(&hyper.lambda_scale, hyper.lambda_df),
        mass: match model {
            ModelKind::Bsp => hyper.mass_shape / hyper.mass_rate,
            ModelKind::Bp => 0.0,
        },
    };
    Ok(state)
}

/// Runs a chain on stream 0 of `settings.seed`.
pub fn run_chain(
    data: &Dataset,
    hyper: &Hyperparameters,
    settings: &McmcSettings,
    model: ModelKind,
) -> Result<PosteriorChain> {
    run_chain_on_stream(data, hyper, settings, model, 0)
}

/// Runs a chain on an explicit random stream of `settings.seed`.
pub fn run_chain_on_stream(
    data: &Dataset,
    hyper: &Hyperparameters,
    settings: &McmcSettings,
    model: ModelKind,
    stream_id: u64,
) -> Result<PosteriorChain> {
    settings.validate()?;
    data.ensure_finite()?;
    hyper.validate(data.p(), data.k())?;
    let mut rng = RngStream::new(settings.seed, stream_id);
    let mut state = initial_state(data, hyper, model)?;
    let mut draws = Vec::with_capacity(settings.draw_count());
    for t in 1..=settings.iterations {
        gibbs_sweep(&mut state, data, hyper, model, settings.sweep_options(), &mut rng).map_err(|e| {
            Error::Chain {
                iteration: t,
                source: Box::new(e),
            }
        })?;
        if settings.keeps(t) {
            draws.push(state.clone());
        }
    }
    Ok(PosteriorChain {
        model,
        settings: settings.clone(),
        hyper: hyper.clone(),
        dims: data.dims(),
        draws,
    })
}

/// Sequential Chinese-restaurant draw of a partition of `n` items.
pub fn crp_prior_draw(n: usize, mass: f64, rng: &mut RngStream) -> Vec<usize> {
    let mut config = Vec::with_capacity(n);
    let mut sizes: Vec<usize> = Vec::new();
    for i in 0..n {
        let u = rng.uniform() * (i as f64 + mass);
        let mut acc = 0.0;
        let mut pick = sizes.len();
        for (c, &s) in sizes.iter().enumerate() {
            acc += s as f64;
            if u < acc {
                pick = c;
                break;
            }
        }
        if pick == sizes.len() {
            sizes.push(0);
        }
        sizes[pick] += 1;
        config.push(pick);
    }
    config
}

/// Draws every parameter from the prior, for the design (`x`, levels,
/// groups) of `data`. Responses are not touched.
pub fn prior_draw_state(
    data: &Dataset,
    hyper: &Hyperparameters,
    model: ModelKind,
    rng: &mut RngStream,
) -> Result<BspState> {
    let Dims { n, p, q, k, m } = data.dims();
    let lambda = inverse_wishart_sample(hyper.lambda_df, &hyper.lambda_scale, rng)?;
    let mut beta0 = DMatrix::zeros(p, q);
    let mut b = DMatrix::zeros(p, q);
    for j in 0..q {
        let b0 = mvn_sample(&hyper.beta0_mean, &hyper.beta0_cov, rng)?;
        let bj = mvn_sample(&b0, &lambda, rng)?;
        beta0.set_column(j, &b0);
        b.set_column(j, &bj);
    }
    let sigma = (0..m)
        .map(|_| inverse_wishart_sample(hyper.sigma_df, &hyper.sigma_scale, rng))
        .collect::<Result<Vec<_>>>()?;
    let tau = inverse_wishart_sample(hyper.tau_df, &hyper.tau_scale, rng)?;
    let r = inverse_wishart_sample(hyper.r_df, &hyper.r_scale, rng)?;
    let (mass, config) = match model {
        ModelKind::Bsp => {
            let mass = gamma_sample(hyper.mass_shape, hyper.mass_rate, rng)?;
            (mass, crp_prior_draw(n, mass, rng))
        }
        ModelKind::Bp => (0.0, vec![0; n]),
    };
    let n_clusters = config.iter().copied().max().map_or(0, |c| c + 1);
    let zero = DVector::zeros(p * k);
    let atoms = (0..n_clusters)
        .map(|_| mvn_sample(&zero, &r, rng))
        .collect::<Result<Vec<_>>>()?;
    let theta = data
        .units()
        .iter()
        .zip(&config)
        .map(|(u, &c)| mvn_sample(&DVector::from_column_slice(z_block(&atoms[c], u.level, p)), &tau, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(BspState {
        b,
        theta,
        config,
        atoms,
        sigma,
        tau,
        r,
        beta0,
        lambda,
        mass,
    })
}

/// Replaces every response with a draw from `N_p(B x_i + theta_i, Sigma_{g_i})`.
pub fn simulate_responses(state: &BspState, data: &Dataset, rng: &mut RngStream) -> Result<Dataset> {
    let names = data.group_names();
    let levels = data.level_names();
    let mut rows = Vec::with_capacity(data.n());
    for (i, u) in data.units().iter().enumerate() {
        let mean = &state.b * &u.x + &state.theta[i];
        let y = mvn_sample(&mean, &state.sigma[u.group], rng)?;
        rows.push((
            names[u.group].clone(),
            levels[u.level].clone(),
            y.iter().copied().collect::<Vec<_>>(),
            u.x.iter().copied().collect::<Vec<_>>(),
        ));
    }
    if data.has_explicit_covariates() {
        Dataset::with_covariates(rows, data.p(), data.q())
    } else {
        Dataset::from_labelled(rows.into_iter().map(|(g, l, y, _)| (g, l, y)).collect(), data.p())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::HyperSpec;
    use crate::randmat::mvn_logpdf;
    use approx::assert_relative_eq;

    fn toy_data(p: usize, levels: &[usize], groups: &[usize], seed: u64) -> Dataset {
        let mut rng = RngStream::new(seed, 99);
        let rows = levels
            .iter()
            .zip(groups)
            .map(|(&l, &g)| {
                (
                    format!("g{g}"),
                    format!("l{l}"),
                    (0..p).map(|_| rng.standard_normal()).collect(),
                )
            })
            .collect();
        Dataset::from_labelled(rows, p).unwrap()
    }

    fn toy_hyper(p: usize, k: usize) -> Hyperparameters {
        HyperSpec::simulation_preset().resolve(p, k).unwrap()
    }

    fn toy_state(data: &Dataset, hyper: &Hyperparameters) -> BspState {
        initial_state(data, hyper, ModelKind::Bsp).unwrap()
    }

    #[test]
    fn new_cluster_weight_equals_g0_marginal() {
        let mut rng = RngStream::new(1, 0);
        let p = 2;
        let k = 3;
        let a = DMatrix::from_fn(p * k, p * k, |_, _| rng.standard_normal());
        let r = SpdMatrix::new(&a * a.transpose() + DMatrix::identity(p * k, p * k)).unwrap();
        let t = DMatrix::from_fn(p, p, |_, _| rng.standard_normal());
        let tau = SpdMatrix::new(&t * t.transpose() + DMatrix::identity(p, p) * 0.3).unwrap();
        let ws = ReassignWorkspace::new(&tau, &r).unwrap();
        for level in 0..k {
            let theta = DVector::from_fn(p, |_, _| rng.standard_normal() * 2.0);
            let marginal_cov = tau.add(&r.diagonal_block(level * p, p).unwrap()).unwrap();
            let oracle = mvn_logpdf(&theta, &DVector::zeros(p), &marginal_cov).unwrap();
            assert_relative_eq!(ws.log_new_cluster(theta.as_slice(), level), oracle, epsilon = 1e-10);
        }
    }

    #[test]
    fn tiny_mass_kills_innovation() {
        let data = toy_data(1, &[0, 0], &[0, 0], 3);
        let hyper = toy_hyper(1, 1);
        let mut state = toy_state(&data, &hyper);
        state.mass = 1e-12;
        state.tau = SpdMatrix::identity(1);
        let ws = ReassignWorkspace::new(&state.tau, &state.r).unwrap();
        let probs = step1_probabilities(&state, &data, &ws, 0);
        assert_eq!(probs.len(), 2);
        assert!(probs[1] < 1e-10, "{probs:?}");
    }

    #[test]
    fn polya_urn_weights_when_kernels_tie() {
        let sizes = [3usize, 1, 5];
        let mass = 0.7;
        let kernel = -2.345;
        let w = reassign_log_weights(&sizes, &[kernel; 3], kernel, mass);
        let probs = normalize_log_weights(&w);
        let total = 9.0 + mass;
        for (p, s) in probs.iter().zip([3.0, 1.0, 5.0, mass]) {
            assert_relative_eq!(*p, s / total, epsilon = 1e-15);
        }
    }

    #[test]
    fn common_shift_of_log_weights_leaves_draws_unchanged() {
        let w = reassign_log_weights(&[2, 4], &[-1.0, -3.5], -2.0, 1.3);
        let base = normalize_log_weights(&w);
        for shift in [-1e3, -700.0, 0.0, 650.0] {
            let shifted: Vec<f64> = w.iter().map(|v| v + shift).collect();
            let p = normalize_log_weights(&shifted);
            for (a, b) in base.iter().zip(&p) {
                assert!((a - b).abs() < 1e-12);
            }
            let mut r1 = RngStream::new(5, 0);
            let mut r2 = RngStream::new(5, 0);
            let mut counts = [[0usize; 3]; 2];
            for _ in 0..20_000 {
                counts[0][sample_log_weights(&w, &mut r1)] += 1;
                counts[1][sample_log_weights(&shifted, &mut r2)] += 1;
            }
            assert_eq!(counts[0], counts[1]);
        }
    }

    #[test]
    fn detach_and_relabel_keeps_invariants() {
        let data = toy_data(2, &[0, 1, 0, 1, 0], &[0, 0, 1, 1, 0], 4);
        let hyper = toy_hyper(2, 2);
        let mut state = toy_state(&data, &hyper);
        state.config = vec![0, 1, 2, 1, 0];
        state.atoms = vec![DVector::zeros(4), DVector::from_element(4, 1.0), DVector::from_element(4, 2.0)];
        detach_unit(&mut state, 2);
        assert_eq!(state.atoms.len(), 2);
        assert_eq!(state.atoms[1], DVector::from_element(4, 1.0));
        state.config[2] = 0;
        state.check(&data.dims()).unwrap();
        // detaching a singleton that is not the last cluster moves the last one
        state.config = vec![1, 0, 0, 0, 0];
        detach_unit(&mut state, 0);
        assert_eq!(state.atoms.len(), 1);
        assert_eq!(&state.config[1..], &[0, 0, 0, 0]);
    }

    #[test]
    fn atom_conditional_matches_dense_oracle() {
        let data = toy_data(2, &[0], &[0], 8);
        let hyper = toy_hyper(2, 1);
        let mut state = toy_state(&data, &hyper);
        state.theta[0] = DVector::from_vec(vec![0.7, -1.1]);
        state.tau = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.4])).unwrap();
        state.r = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, -0.3, -0.3, 1.0])).unwrap();
        let tau_inv = state.tau.inverse();
        let r_inv = state.r.inverse();
        let (prec, b) = atom_conditional(&state, &data, 0, &tau_inv, &r_inv).unwrap();
        let mean = prec.solve(&b);
        let cov = prec.inverse();
        let t_inv = state.tau.matrix().clone().try_inverse().unwrap();
        let r_inv_d = state.r.matrix().clone().try_inverse().unwrap();
        let e = (&t_inv + r_inv_d).try_inverse().unwrap();
        let mean_oracle = &e * &t_inv * &state.theta[0];
        assert!((mean - mean_oracle).amax() < 1e-12);
        assert!((cov - e).amax() < 1e-12);
    }

    #[test]
    fn atom_conditional_zero_data_is_centered() {
        let data = toy_data(2, &[0, 1, 1], &[0, 0, 0], 9);
        let hyper = toy_hyper(2, 2);
        let mut state = toy_state(&data, &hyper);
        state.theta.iter_mut().for_each(|t| t.fill(0.0));
        state.r = SpdMatrix::identity(4);
        let (prec, b) = atom_conditional(&state, &data, 0, &state.tau.inverse(), &state.r.inverse()).unwrap();
        assert!(prec.solve(&b).amax() == 0.0);
    }

    #[test]
    fn atom_draws_revert_to_prior_without_information() {
        let data = toy_data(2, &[0, 1], &[0, 0], 10);
        let hyper = toy_hyper(2, 2);
        let mut state = toy_state(&data, &hyper);
        state.tau = SpdMatrix::scaled_identity(2, 1e12);
        state.r = SpdMatrix::new(DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { 0.5 })).unwrap();
        let mut rng = RngStream::new(10, 0);
        let n = 40_000;
        let mut acc = DMatrix::<f64>::zeros(4, 4);
        for _ in 0..n {
            dp_step2_atoms(&mut state, &data, &mut rng).unwrap();
            let a = &state.atoms[0];
            acc += a * a.transpose();
        }
        acc /= n as f64;
        for i in 0..4 {
            assert!((acc[(i, i)] / 2.0 - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn fixed_effects_prior_reduction() {
        // explicit covariates with column 1 identically zero
        let rows = vec![
            ("a".to_string(), "l".to_string(), vec![1.0, 2.0], vec![1.0, 0.0]),
            ("b".to_string(), "l".to_string(), vec![0.5, -1.0], vec![1.0, 0.0]),
        ];
        let data = Dataset::with_covariates(rows, 2, 2).unwrap();
        let hyper = toy_hyper(2, 1);
        let mut state = toy_state(&data, &hyper);
        state.beta0.set_column(1, &DVector::from_vec(vec![0.3, -0.2]));
        state.lambda = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 0.7])).unwrap();
        let sigma_inv: Vec<_> = state.sigma.iter().map(SpdMatrix::inverse).collect();
        let (prec, b) =
            fixed_effect_conditional(&state, &data, 1, &sigma_inv, &state.lambda.inverse()).unwrap();
        assert!((prec.solve(&b) - state.beta0.column(1)).amax() < 1e-12);
        assert!((prec.inverse() - state.lambda.matrix()).amax() < 1e-12);
    }

    #[test]
    fn one_hot_fixed_effects_match_closed_form() {
        let data = toy_data(2, &[0, 1, 0, 1, 1, 0], &[0, 0, 1, 1, 2, 2], 11);
        let hyper = toy_hyper(2, 2);
        let mut state = toy_state(&data, &hyper);
        let mut rng = RngStream::new(11, 1);
        for t in state.theta.iter_mut() {
            *t = DVector::from_fn(2, |_, _| rng.standard_normal());
        }
        state.sigma = (0..3)
            .map(|u| SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0 + u as f64, 0.2, 0.2, 0.8])).unwrap())
            .collect();
        let sigma_inv: Vec<_> = state.sigma.iter().map(SpdMatrix::inverse).collect();
        let lambda_inv = state.lambda.inverse();
        for j in 0..3 {
            let (prec, b) =
                fixed_effect_conditional(&state, &data, j, &sigma_inv, &lambda_inv).unwrap();
            // group j only: (n_j Sigma_j^{-1} + Lambda^{-1}) beta = Sigma_j^{-1} sum (y - theta) + Lambda^{-1} beta0_j
            let mut sum = DVector::zeros(2);
            let mut nj = 0.0;
            for (i, u) in data.units().iter().enumerate() {
                if u.group == j {
                    sum += &u.y - &state.theta[i];
                    nj += 1.0;
                }
            }
            let s_inv = state.sigma[j].matrix().clone().try_inverse().unwrap();
            let l_inv = state.lambda.matrix().clone().try_inverse().unwrap();
            let v = (&s_inv * nj + &l_inv).try_inverse().unwrap();
            let mean = &v * (&s_inv * sum + &l_inv * state.beta0.column(j));
            assert!((prec.solve(&b) - mean).amax() < 1e-12);
            assert!((prec.inverse() - v).amax() < 1e-12);
        }
    }

    #[test]
    fn random_effects_limits() {
        let data = toy_data(2, &[0, 1], &[0, 0], 12);
        let hyper = toy_hyper(2, 2);
        let mut state = toy_state(&data, &hyper);
        state.atoms[0] = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        state.tau = SpdMatrix::scaled_identity(2, 1e-12);
        let mut rng = RngStream::new(12, 0);
        update_random_effects(&mut state, &data, &mut rng).unwrap();
        assert!((state.theta[0].as_slice()[0] - 1.0).abs() < 1e-5);
        assert!((state.theta[1].as_slice()[1] - 4.0).abs() < 1e-5);

        // equal precisions: mean is the plain average
        state.tau = SpdMatrix::identity(2);
        state.sigma = vec![SpdMatrix::identity(2)];
        let n = 50_000;
        let mut acc = DVector::zeros(2);
        for _ in 0..n {
            update_random_effects(&mut state, &data, &mut rng).unwrap();
            acc += &state.theta[0];
        }
        acc /= n as f64;
        let u = &data.units()[0];
        let expected = (DVector::from_vec(vec![1.0, 2.0]) + &u.y - &state.b * &u.x) / 2.0;
        assert!((acc - expected).amax() < 0.02);
    }

    #[test]
    fn hyper_means_limits() {
        let data = toy_data(2, &[0], &[0], 13);
        let mut hyper = toy_hyper(2, 1);
        hyper.beta0_cov = SpdMatrix::identity(2);
        let mut state = toy_state(&data, &hyper);
        state.lambda = SpdMatrix::identity(2);
        state.b = DMatrix::from_row_slice(2, 1, &[2.0, -4.0]);
        let mut rng = RngStream::new(13, 0);
        let n = 50_000;
        let mut acc = DVector::zeros(2);
        for _ in 0..n {
            update_hyper_means(&mut state, &hyper, &mut rng).unwrap();
            acc += state.beta0.column(0);
        }
        acc /= n as f64;
        assert!((acc - DVector::from_vec(vec![1.0, -2.0])).amax() < 0.02);

        // vague tau0: mean collapses onto beta_j
        hyper.beta0_cov = SpdMatrix::scaled_identity(2, 1e12);
        let lambda_inv = state.lambda.inverse();
        let tau0_inv = hyper.beta0_cov.inverse();
        let prec = SpdMatrix::new(&lambda_inv + &tau0_inv).unwrap();
        let mean = prec.solve(&(&lambda_inv * state.b.column(0) + &tau0_inv * &hyper.beta0_mean));
        assert!((mean - state.b.column(0)).amax() < 1e-6);
    }

    #[test]
    fn covariance_conditionals_prior_reduction() {
        let data = toy_data(2, &[0, 1, 0], &[0, 0, 0], 14);
        let hyper = toy_hyper(2, 2);
        let mut state = toy_state(&data, &hyper);
        // beta_j == beta0_j
        state.beta0 = state.b.clone();
        let (df, scale) = lambda_conditional(&state, &hyper).unwrap();
        assert_eq!(df, data.q() as f64 + hyper.lambda_df);
        assert_eq!(scale, hyper.lambda_scale);

        // zero residuals
        for (i, u) in data.units().iter().enumerate() {
            state.theta[i] = &u.y - &state.b * &u.x;
        }
        let conds = residual_cov_conditionals(&state, &data, &hyper).unwrap();
        assert_eq!(conds.len(), 1);
        assert_eq!(conds[0].0, 3.0 + hyper.sigma_df);
        assert!((conds[0].1.matrix() - hyper.sigma_scale.matrix()).amax() < 1e-12);

        // theta pinned to atoms
        for (i, u) in data.units().iter().enumerate() {
            state.theta[i] = DVector::from_column_slice(state.unit_atom_block(i, u.level));
        }
        let (df, scale) = tau_conditional(&state, &data, &hyper).unwrap();
        assert_eq!(df, 3.0 + hyper.tau_df);
        assert_eq!(scale.matrix(), hyper.tau_scale.matrix());

        // R: zero atoms, then a single atom
        state.atoms[0].fill(0.0);
        let (df, scale) = r_conditional(&state, &hyper, RUpdate::Atoms).unwrap();
        assert_eq!(df, 1.0 + hyper.r_df);
        assert_eq!(scale.matrix(), hyper.r_scale.matrix());
        let a = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        state.atoms[0] = a.clone();
        let (_, scale) = r_conditional(&state, &hyper, RUpdate::Atoms).unwrap();
        assert!((scale.matrix() - (DMatrix::identity(4, 4) + &a * a.transpose())).amax() < 1e-14);
        let (df_units, scale_units) = r_conditional(&state, &hyper, RUpdate::Units).unwrap();
        assert_eq!(df_units, 3.0 + hyper.r_df);
        assert!((scale_units.matrix() - (DMatrix::identity(4, 4) + &a * a.transpose() * 3.0)).amax() < 1e-12);
    }

    #[test]
    fn empty_group_uses_prior() {
        // subset that drops every unit of group 1
        let data = toy_data(2, &[0, 0, 0], &[0, 1, 0], 15);
        let sub = data.subset(&[0, 2]).unwrap();
        assert_eq!(sub.m(), 2);
        let hyper = toy_hyper(2, 1);
        let state = toy_state(&sub, &hyper);
        let conds = residual_cov_conditionals(&state, &sub, &hyper).unwrap();
        assert_eq!(conds[1].0, hyper.sigma_df);
        assert_eq!(conds[1].1.matrix(), hyper.sigma_scale.matrix());
    }

    #[test]
    fn concentration_gamma_mean_limit() {
        // with a2 large the mixture weight on shape a1 + K is about 1/(n a2),
        // so M is close to Gamma(a1 + K - 1, a2)
        let mut rng = RngStream::new(16, 0);
        let (a1, a2) = (1.0, 1e4);
        let n = 20;
        let draws: Vec<f64> = (0..20_000)
            .map(|_| update_concentration_raw(1.0, n, n, a1, a2, &mut rng).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        // log(eta) is O(1) next to a2, so the rate is a2 to 1e-3 relative
        let target = (a1 + n as f64 - 1.0) / a2;
        assert!((mean / target - 1.0).abs() < 0.03, "{mean} vs {target}");
    }

    #[test]
    fn concentration_prior_only_matches_gamma() {
        use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};
        let mut rng = RngStream::new(17, 0);
        let (a1, a2) = (2.0, 1.5);
        let mut mass = 1.0;
        let mut xs = Vec::new();
        for t in 0..200_000 {
            mass = update_concentration_raw(mass, 1, 1, a1, a2, &mut rng).unwrap();
            if t % 4 == 0 {
                xs.push(mass);
            }
        }
        let g = GammaDist::new(a1, a2).unwrap();
        let (_, p) = crate::diagnostics::ks_one_sample(&mut xs, |x| g.cdf(x));
        assert!(p > 0.001, "p = {p}");
    }

    #[test]
    fn sweep_preserves_invariants() {
        let data = toy_data(2, &[0, 1, 0, 1, 0, 1, 0, 0], &[0, 0, 1, 1, 0, 1, 1, 0], 18);
        let hyper = toy_hyper(2, 2);
        let mut state = toy_state(&data, &hyper);
        let mut rng = RngStream::new(18, 0);
        for _ in 0..300 {
            gibbs_sweep(&mut state, &data, &hyper, ModelKind::Bsp, SweepOptions::default(), &mut rng).unwrap();
            state.check(&data.dims()).unwrap();
            let mut labels = state.config.clone();
            labels.sort();
            labels.dedup();
            assert_eq!(labels.len(), state.atoms.len());
        }
        let mut bp = initial_state(&data, &hyper, ModelKind::Bp).unwrap();
        for _ in 0..50 {
            gibbs_sweep(&mut bp, &data, &hyper, ModelKind::Bp, SweepOptions::default(), &mut rng).unwrap();
            assert_eq!(bp.atoms.len(), 1);
            assert_eq!(bp.mass, 0.0);
        }
    }

    #[test]
    fn chain_lengths_and_determinism() {
        let data = toy_data(2, &[0, 1, 0, 1], &[0, 0, 1, 1], 19);
        let hyper = toy_hyper(2, 2);
        let one = run_chain(&data, &hyper, &McmcSettings::new(6, 5, 1, 3), ModelKind::Bsp).unwrap();
        assert_eq!(one.draws.len(), 1);
        let s = McmcSettings::new(40, 10, 3, 3);
        let a = run_chain(&data, &hyper, &s, ModelKind::Bsp).unwrap();
        let b = run_chain(&data, &hyper, &s, ModelKind::Bsp).unwrap();
        assert_eq!(a.draws.len(), 10);
        assert_eq!(
            serde_json::to_string(&a.draws).unwrap(),
            serde_json::to_string(&b.draws).unwrap()
        );
    }

    #[test]
    fn relabeling_leaves_likelihood_unchanged() {
        let data = toy_data(2, &[0, 1, 0, 1], &[0, 0, 1, 1], 20);
        let hyper = toy_hyper(2, 2);
        let mut state = toy_state(&data, &hyper);
        let mut rng = RngStream::new(20, 0);
        for _ in 0..20 {
            gibbs_sweep(&mut state, &data, &hyper, ModelKind::Bsp, SweepOptions::default(), &mut rng).unwrap();
        }
        let ws = ReassignWorkspace::new(&state.tau, &state.r).unwrap();
        let loglik = |s: &BspState| -> f64 {
            data.units()
                .iter()
                .enumerate()
                .map(|(i, u)| ws.log_kernel(s.theta[i].as_slice(), s.unit_atom_block(i, u.level)))
                .sum()
        };
        let before = loglik(&state);
        let kc = state.atoms.len();
        let mut relabeled = state.clone();
        relabeled.atoms.reverse();
        for c in relabeled.config.iter_mut() {
            *c = kc - 1 - *c;
        }
        assert_eq!(before, loglik(&relabeled));
    }

    #[test]
    fn crp_draw_is_a_partition() {
        let mut rng = RngStream::new(21, 0);
        let c = crp_prior_draw(50, 2.0, &mut rng);
        let k = c.iter().max().unwrap() + 1;
        for label in 0..k {
            assert!(c.contains(&label));
        }
        // first-appearance order
        assert_eq!(c[0], 0);
    }
}
