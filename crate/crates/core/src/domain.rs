//! Data model shared by the samplers, the classifiers and the CLI.
//!
//! Group and level indices are 0-based in the Rust API. The random-effect
//! design `z` of a unit at level `l` is the Kronecker one-hot
//! `e_l^T (x) I_p`; it is never materialized, see [`z_apply`].

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::randmat::{rows_serde, SpdMatrix};

/// Current version of every JSON document this crate writes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub y: DVector<f64>,
    pub x: DVector<f64>,
    pub level: usize,
    pub group: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub k: usize,
    pub m: usize,
}

/// Labelled multivariate observations.
///
/// Indices are canonical: group `g` is the `g`-th distinct group in order of
/// first appearance among `units`, and likewise for levels. Constructors
/// relabel to keep this true, so writing to CSV and reading back is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    p: usize,
    q: usize,
    units: Vec<Unit>,
    group_names: Vec<String>,
    level_names: Vec<String>,
    /// `false` when `x` is the one-hot group indicator (authentication mode).
    explicit_covariates: bool,
}

/// One-hot row of the fixed-effect design for `group` among `m` groups.
pub fn design_row(group: usize, m: usize) -> Result<DVector<f64>> {
    if group >= m {
        return Err(Error::Domain(format!("group {group} out of range 0..{m}")));
    }
    let mut x = DVector::zeros(m);
    x[group] = 1.0;
    Ok(x)
}

/// `z alpha` for a unit at `level`: the `p`-block of `alpha` at that level.
pub fn z_apply(level: usize, alpha: &DVector<f64>, p: usize) -> Result<DVector<f64>> {
    if p == 0 || alpha.len() % p != 0 {
        return Err(Error::Dimension(format!(
            "alpha of length {} is not a multiple of p = {p}",
            alpha.len()
        )));
    }
    let k = alpha.len() / p;
    if level >= k {
        return Err(Error::Domain(format!("level {level} out of range 0..{k}")));
    }
    Ok(DVector::from_column_slice(z_block(alpha, level, p)))
}

#[inline]
pub(crate) fn z_block(alpha: &DVector<f64>, level: usize, p: usize) -> &[f64] {
    &alpha.as_slice()[level * p..(level + 1) * p]
}

impl Dataset {
    /// Authentication-mode dataset: `x` is the one-hot group indicator.
    pub fn from_labelled(
        rows: Vec<(String, String, Vec<f64>)>,
        p: usize,
    ) -> Result<Self> {
        Self::build(rows.into_iter().map(|(g, l, y)| (g, l, y, None)).collect(), p, 0)
    }

    /// Dataset with explicit fixed-effect covariates of length `q`.
    pub fn with_covariates(
        rows: Vec<(String, String, Vec<f64>, Vec<f64>)>,
        p: usize,
        q: usize,
    ) -> Result<Self> {
        Self::build(
            rows.into_iter().map(|(g, l, y, x)| (g, l, y, Some(x))).collect(),
            p,
            q,
        )
    }

    fn build(
        rows: Vec<(String, String, Vec<f64>, Option<Vec<f64>>)>,
        p: usize,
        q: usize,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data("dataset needs at least one unit".into()));
        }
        if p == 0 {
            return Err(Error::Data("response dimension p must be positive".into()));
        }
        let explicit = rows[0].3.is_some();
        if explicit && q == 0 {
            return Err(Error::Data("explicit covariates need q >= 1".into()));
        }
        let mut group_names: Vec<String> = Vec::new();
        let mut level_names: Vec<String> = Vec::new();
        let mut gmap: HashMap<String, usize> = HashMap::new();
        let mut lmap: HashMap<String, usize> = HashMap::new();
        let mut staged = Vec::with_capacity(rows.len());
        for (i, (g, l, y, x)) in rows.into_iter().enumerate() {
            if y.len() != p {
                return Err(Error::Data(format!(
                    "unit {i}: response has {} entries, expected {p}",
                    y.len()
                )));
            }
            if x.is_some() != explicit {
                return Err(Error::Data(format!(
                    "unit {i}: covariates must be given for all units or none"
                )));
            }
            let gi = *gmap.entry(g.clone()).or_insert_with(|| {
                group_names.push(g);
                group_names.len() - 1
            });
            let li = *lmap.entry(l.clone()).or_insert_with(|| {
                level_names.push(l);
                level_names.len() - 1
            });
            staged.push((gi, li, y, x));
        }
        let m = group_names.len();
        let q = if explicit { q } else { m };
        let units = staged
            .into_iter()
            .enumerate()
            .map(|(i, (group, level, y, x))| {
                let x = match x {
                    Some(x) if x.len() != q => Err(Error::Data(format!(
                        "unit {i}: covariate vector has {} entries, expected {q}",
                        x.len()
                    ))),
                    Some(x) => Ok(DVector::from_vec(x)),
                    None => design_row(group, m),
                }?;
                Ok(Unit {
                    y: DVector::from_vec(y),
                    x,
                    level,
                    group,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            p,
            q,
            units,
            group_names,
            level_names,
            explicit_covariates: explicit,
        })
    }

    pub fn dims(&self) -> Dims {
        Dims {
            n: self.n(),
            p: self.p,
            q: self.q,
            k: self.k(),
            m: self.m(),
        }
    }

    pub fn n(&self) -> usize {
        self.units.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn k(&self) -> usize {
        self.level_names.len()
    }

    pub fn m(&self) -> usize {
        self.group_names.len()
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn group_names(&self) -> &[String] {
        &self.group_names
    }

    pub fn level_names(&self) -> &[String] {
        &self.level_names
    }

    pub fn has_explicit_covariates(&self) -> bool {
        self.explicit_covariates
    }

    /// Units per group, `n_u`.
    pub fn group_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.m()];
        for u in &self.units {
            counts[u.group] += 1;
        }
        counts
    }

    pub fn labels(&self) -> Vec<usize> {
        self.units.iter().map(|u| u.group).collect()
    }

    /// Errors if any response or covariate is non-finite.
    pub fn ensure_finite(&self) -> Result<()> {
        for (i, u) in self.units.iter().enumerate() {
            if u.y.iter().chain(u.x.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("unit {i} has a non-finite value")));
            }
        }
        Ok(())
    }

    /// The dataset restricted to `keep` (in the given order), re-canonicalized.
    ///
    /// Group and level names of the full dataset are kept so that indices of
    /// the subset agree with the parent: a subset that loses a group still
    /// has `m` groups.
    pub fn subset(&self, keep: &[usize]) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::Data("empty subset".into()));
        }
        let units = keep
            .iter()
            .map(|&i| {
                self.units
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Data(format!("unit {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            p: self.p,
            q: self.q,
            units,
            group_names: self.group_names.clone(),
            level_names: self.level_names.clone(),
            explicit_covariates: self.explicit_covariates,
        })
    }

    /// All units except `i`.
    pub fn leave_out(&self, i: usize) -> Result<Self> {
        let keep: Vec<usize> = (0..self.n()).filter(|&j| j != i).collect();
        self.subset(&keep)
    }
}

fn vecs_to_rows(v: &[DVector<f64>]) -> Vec<Vec<f64>> {
    v.iter().map(|x| x.iter().copied().collect()).collect()
}

pub(crate) mod vecs_serde {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[DVector<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
        vecs_to_rows(v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<DVector<f64>>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Ok(rows.into_iter().map(DVector::from_vec).collect())
    }
}

pub(crate) mod vec_serde {
    use super::*;

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

/// Fixed prior constants.
///
/// Priors: `beta_j ~ N_p(beta0_j, Lambda)`, `beta0_j ~ N_p(alpha0, tau0)`,
/// `Lambda ~ IW_p(t0, L0)`, `Sigma_u ~ IW_p(nu0, Q0)`, `tau ~ IW_p(gamma0, Phi0)`,
/// `R ~ IW_pk(r0, R0)`, `M ~ Gamma(a1, a2)` (rate `a2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    #[serde(rename = "alpha0", with = "vec_serde")]
    pub beta0_mean: DVector<f64>,
    #[serde(rename = "tau0")]
    pub beta0_cov: SpdMatrix,
    #[serde(rename = "Q0")]
    pub sigma_scale: SpdMatrix,
    #[serde(rename = "nu0")]
    pub sigma_df: f64,
    #[serde(rename = "L0")]
    pub lambda_scale: SpdMatrix,
    #[serde(rename = "t0")]
    pub lambda_df: f64,
    #[serde(rename = "R0")]
    pub r_scale: SpdMatrix,
    #[serde(rename = "r0")]
    pub r_df: f64,
    #[serde(rename = "Phi0")]
    pub tau_scale: SpdMatrix,
    #[serde(rename = "gamma0")]
    pub tau_df: f64,
    #[serde(rename = "a1")]
    pub mass_shape: f64,
    #[serde(rename = "a2")]
    pub mass_rate: f64,
}

impl Hyperparameters {
    /// Checks dimensions against `(p, k)` and the degrees-of-freedom bounds.
    pub fn validate(&self, p: usize, k: usize) -> Result<()> {
        let pk = p * k;
        let dims = [
            ("alpha0", self.beta0_mean.len(), p),
            ("tau0", self.beta0_cov.dim(), p),
            ("Q0", self.sigma_scale.dim(), p),
            ("L0", self.lambda_scale.dim(), p),
            ("R0", self.r_scale.dim(), pk),
            ("Phi0", self.tau_scale.dim(), p),
        ];
        for (name, got, want) in dims {
            if got != want {
                return Err(Error::Dimension(format!(
                    "hyperparameter {name} has dimension {got}, expected {want}"
                )));
            }
        }
        let dfs = [
            ("nu0", self.sigma_df, p),
            ("t0", self.lambda_df, p),
            ("gamma0", self.tau_df, p),
            ("r0", self.r_df, pk),
        ];
        for (name, df, dim) in dfs {
            if !(df > dim as f64 - 1.0) {
                return Err(Error::Domain(format!(
                    "{name} = {df} must exceed {}",
                    dim as f64 - 1.0
                )));
            }
        }
        if !(self.mass_shape > 0.0 && self.mass_rate > 0.0) {
            return Err(Error::Domain("a1 and a2 must be positive".into()));
        }
        Ok(())
    }
}

/// Matrix entry of a hyperparameter file: either `{"scaled_identity": s}`
/// (dimension filled in at resolve time) or an explicit list of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    ScaledIdentity { scaled_identity: f64 },
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorSpec {
    Fill { fill: f64 },
    Values(Vec<f64>),
}

impl MatrixSpec {
    fn resolve(&self, dim: usize, name: &str) -> Result<SpdMatrix> {
        match self {
            MatrixSpec::ScaledIdentity { scaled_identity } => {
                if !(*scaled_identity > 0.0) {
                    return Err(Error::Domain(format!("{name}: scaled_identity must be positive")));
                }
                Ok(SpdMatrix::scaled_identity(dim, *scaled_identity))
            }
            MatrixSpec::Rows(rows) => {
                let m = crate::randmat::rows_to_matrix(rows)?;
                if m.nrows() != dim {
                    return Err(Error::Dimension(format!(
                        "{name} has dimension {}, expected {dim}",
                        m.nrows()
                    )));
                }
                SpdMatrix::named(m, name)
            }
        }
    }
}

/// Dimension-free hyperparameter file (`schema_version` 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperSpec {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub alpha0: VectorSpec,
    pub tau0: MatrixSpec,
    #[serde(rename = "Q0")]
    pub q0: MatrixSpec,
    pub nu0: f64,
    #[serde(rename = "L0")]
    pub l0: MatrixSpec,
    pub t0: f64,
    #[serde(rename = "R0")]
    pub r0_scale: MatrixSpec,
    pub r0: f64,
    #[serde(rename = "Phi0")]
    pub phi0: MatrixSpec,
    pub gamma0: f64,
    pub a1: f64,
    pub a2: f64,
}

pub const PRESET_SIM: &str = include_str!("../presets/sim-s5.json");
pub const PRESET_WINE: &str = include_str!("../presets/wine-s6.json");

impl HyperSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: HyperSpec = serde_json::from_str(text)?;
        if spec.schema_version != SCHEMA_VERSION {
            return Err(Error::Domain(format!(
                "unsupported hyperparameter schema_version {}",
                spec.schema_version
            )));
        }
        Ok(spec)
    }

    /// Settings used for the simulated two-group study.
    pub fn simulation_preset() -> Self {
        Self::from_json(PRESET_SIM).expect("shipped preset parses")
    }

    /// Settings used for the nine-anthocyanin wine study.
    pub fn wine_preset() -> Self {
        Self::from_json(PRESET_WINE).expect("shipped preset parses")
    }

    /// Looks up a shipped preset by name (`sim-s5` or `wine-s6`).
    pub fn preset(name: &str) -> Option<Self> {
        match name.trim_end_matches(".json") {
            "sim-s5" => Some(Self::simulation_preset()),
            "wine-s6" => Some(Self::wine_preset()),
            _ => None,
        }
    }

    pub fn resolve(&self, p: usize, k: usize) -> Result<Hyperparameters> {
        let alpha0 = match &self.alpha0 {
            VectorSpec::Fill { fill } => DVector::from_element(p, *fill),
            VectorSpec::Values(v) => DVector::from_vec(v.clone()),
        };
        let h = Hyperparameters {
            beta0_mean: alpha0,
            beta0_cov: self.tau0.resolve(p, "tau0")?,
            sigma_scale: self.q0.resolve(p, "Q0")?,
            sigma_df: self.nu0,
            lambda_scale: self.l0.resolve(p, "L0")?,
            lambda_df: self.t0,
            r_scale: self.r0_scale.resolve(p * k, "R0")?,
            r_df: self.r0,
            tau_scale: self.phi0.resolve(p, "Phi0")?,
            tau_df: self.gamma0,
            mass_shape: self.a1,
            mass_rate: self.a2,
        };
        h.validate(p, k)?;
        Ok(h)
    }
}

/// How the `R` full conditional aggregates atoms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RUpdate {
    /// Sum over distinct cluster atoms, `df = K + r0`.
    #[default]
    Atoms,
    /// Sum over units' atoms (shared atoms counted with multiplicity), `df = n + r0`.
    Units,
}

/// How Step 1 scores a unit against the clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reassign {
    /// Given the unit's random effect `theta_i`, kernel `N(theta_i | z_i alpha_c, tau)`.
    #[default]
    Conditional,
    /// With `theta_i` integrated out, kernel `N(y_i - B x_i | z_i alpha_c, Sigma_u + tau)`.
    Marginal,
}

/// Per-sweep choices that do not change the target posterior of the BSP
/// model, except `r_update`, which selects between two readings of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SweepOptions {
    pub r_update: RUpdate,
    pub reassign: Reassign,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McmcSettings {
    #[serde(default = "McmcSettings::default_schema")]
    pub schema_version: u32,
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    #[serde(default)]
    pub r_update: RUpdate,
    #[serde(default)]
    pub reassign: Reassign,
}

impl Default for McmcSettings {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            iterations: 10_000,
            burn_in: 2_000,
            thinning: 5,
            seed: 0,
            r_update: RUpdate::Atoms,
            reassign: Reassign::Conditional,
        }
    }
}

impl McmcSettings {
    fn default_schema() -> u32 {
        SCHEMA_VERSION
    }

    pub fn new(iterations: usize, burn_in: usize, thinning: usize, seed: u64) -> Self {
        Self {
            iterations,
            burn_in,
            thinning,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.thinning == 0 {
            return Err(Error::Domain("iterations and thinning must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Domain(format!(
                "burn-in {} must be smaller than iterations {}",
                self.burn_in, self.iterations
            )));
        }
        Ok(())
    }

    pub fn sweep_options(&self) -> SweepOptions {
        SweepOptions {
            r_update: self.r_update,
            reassign: self.reassign,
        }
    }

    /// `floor((iterations - burn_in) / thinning)`.
    pub fn draw_count(&self) -> usize {
        (self.iterations - self.burn_in) / self.thinning
    }

    /// Whether the 1-based iteration `t` is stored.
    pub fn keeps(&self, t: usize) -> bool {
        t > self.burn_in && (t - self.burn_in) % self.thinning == 0
    }
}

/// One Gibbs iterate.
///
/// BP draws use the same layout with every unit in cluster 0 and `mass = 0`;
/// that makes the one-step predictive collapse onto the single shared atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BspState {
    /// `p x q`, column `j` is `beta_j`.
    #[serde(with = "rows_serde")]
    pub b: DMatrix<f64>,
    #[serde(with = "vecs_serde")]
    pub theta: Vec<DVector<f64>>,
    pub config: Vec<usize>,
    #[serde(with = "vecs_serde")]
    pub atoms: Vec<DVector<f64>>,
    pub sigma: Vec<SpdMatrix>,
    pub tau: SpdMatrix,
    pub r: SpdMatrix,
    /// `p x q`, column `j` is `beta0_j`.
    #[serde(with = "rows_serde")]
    pub beta0: DMatrix<f64>,
    pub lambda: SpdMatrix,
    pub mass: f64,
}

/// The parametric baseline stores its iterates in the same layout.
pub type BpState = BspState;

impl BspState {
    pub fn n_clusters(&self) -> usize {
        self.atoms.len()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.atoms.len()];
        for &c in &self.config {
            sizes[c] += 1;
        }
        sizes
    }

    /// `z_i alpha_{c_i}` for unit `i` at `level`.
    pub fn unit_atom_block(&self, i: usize, level: usize) -> &[f64] {
        let p = self.tau.dim();
        z_block(&self.atoms[self.config[i]], level, p)
    }

    /// Structural invariants: labels refer to atoms, no empty clusters, dimensions agree.
    pub fn check(&self, dims: &Dims) -> Result<()> {
        let Dims { n, p, q, k, m } = *dims;
        let bad = |msg: String| Err(Error::Data(format!("state invariant violated: {msg}")));
        if self.b.shape() != (p, q) || self.beta0.shape() != (p, q) {
            return bad("B or beta0 has the wrong shape".into());
        }
        if self.theta.len() != n || self.config.len() != n {
            return bad("theta/config length differs from n".into());
        }
        if self.sigma.len() != m {
            return bad("one Sigma per group expected".into());
        }
        if self.tau.dim() != p || self.lambda.dim() != p || self.r.dim() != p * k {
            return bad("covariance dimensions".into());
        }
        if self.atoms.iter().any(|a| a.len() != p * k) {
            return bad("atom length differs from pk".into());
        }
        if self.config.iter().any(|&c| c >= self.atoms.len()) {
            return bad("label without atom".into());
        }
        if self.cluster_sizes().iter().any(|&s| s == 0) {
            return bad("empty cluster".into());
        }
        if self.atoms.len() > n {
            return bad("more clusters than units".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Bsp,
    Bp,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Bsp => write!(f, "bsp"),
            ModelKind::Bp => write!(f, "bp"),
        }
    }
}

/// Stored draws of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorChain {
    pub model: ModelKind,
    pub settings: McmcSettings,
    pub hyper: Hyperparameters,
    pub dims: Dims,
    pub draws: Vec<BspState>,
}

#[derive(Serialize, Deserialize)]
struct ChainHeader {
    schema_version: u32,
    model: ModelKind,
    settings: McmcSettings,
    hyper: Hyperparameters,
    dims: Dims,
    draw_count: usize,
    draws_file: String,
}

impl PosteriorChain {
    /// Path of the JSON-lines draw file that accompanies a chain header.
    pub fn draws_path(header: &Path) -> PathBuf {
        let mut s = header.as_os_str().to_owned();
        s.push(".draws.jsonl");
        PathBuf::from(s)
    }

    /// Writes the header document to `path` and one draw per line to
    /// [`Self::draws_path`]. Returns both paths.
    pub fn save(&self, path: &Path) -> Result<(PathBuf, PathBuf)> {
        let draws_path = Self::draws_path(path);
        let header = ChainHeader {
            schema_version: SCHEMA_VERSION,
            model: self.model,
            settings: self.settings.clone(),
            hyper: self.hyper.clone(),
            dims: self.dims,
            draw_count: self.draws.len(),
            draws_file: draws_path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, &header)?;
        w.write_all(b"\n")?;
        w.flush()?;
        let mut w = BufWriter::new(File::create(&draws_path)?);
        for d in &self.draws {
            serde_json::to_writer(&mut w, d)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok((path.to_path_buf(), draws_path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let header: ChainHeader = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(Error::Domain(format!(
                "unsupported chain schema_version {}",
                header.schema_version
            )));
        }
        let draws_path = path
            .parent()
            .map(|d| d.join(&header.draws_file))
            .unwrap_or_else(|| PathBuf::from(&header.draws_file));
        let mut draws = Vec::with_capacity(header.draw_count);
        for (i, line) in BufReader::new(File::open(&draws_path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let d: BspState = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            d.check(&header.dims)?;
            draws.push(d);
        }
        if draws.len() != header.draw_count {
            return Err(Error::Data(format!(
                "chain header announces {} draws, found {}",
                header.draw_count,
                draws.len()
            )));
        }
        Ok(Self {
            model: header.model,
            settings: header.settings,
            hyper: header.hyper,
            dims: header.dims,
            draws,
        })
    }
}
