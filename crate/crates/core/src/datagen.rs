//! Synthetic mixture data and CSV ingestion/validation.
//!
//! CSV schema (header required): `group,level,y1,...,yp[,x1,...,xq]`.
//! Without `x` columns the fixed-effect design is the one-hot group indicator.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::randmat::{mvn_sample, RngStream, SpdMatrix};

/// Cell of the design a mixture component is attached to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub group: String,
    pub level: String,
}

/// Gaussian mixture with one shared covariance; each component belongs to
/// a (group, level) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub schema_version: u32,
    pub weights: Vec<f64>,
    #[serde(with = "means_serde")]
    pub means: Vec<DVector<f64>>,
    pub cov: SpdMatrix,
    pub assignment: Vec<Cell>,
}

mod means_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[DVector<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = v.iter().map(|x| x.as_slice()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<DVector<f64>>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Ok(rows.into_iter().map(DVector::from_vec).collect())
    }
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Domain(format!(
                "unsupported mixture schema_version {}",
                self.schema_version
            )));
        }
        let h = self.weights.len();
        if h == 0 {
            return Err(Error::Domain("mixture needs at least one component".into()));
        }
        if self.means.len() != h || self.assignment.len() != h {
            return Err(Error::Dimension(format!(
                "{h} weights, {} means and {} assignments",
                self.means.len(),
                self.assignment.len()
            )));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "mixture weights must be non-negative and sum to 1, got {:?}",
                self.weights
            )));
        }
        let p = self.cov.dim();
        if let Some(bad) = self.means.iter().position(|m| m.len() != p) {
            return Err(Error::Dimension(format!("mean {bad} does not have length {p}")));
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.cov.dim()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// The eight-component bivariate design over two groups and two levels.
/// Components are paired onto cells in order: (1,2) and (3,4) go to group
/// `g1` at levels `l1` and `l2`, (5,6) and (7,8) to group `g2`.
pub fn simulation_design() -> MixtureSpec {
    let means = [
        [1.1, 2.3],
        [0.1, -2.0],
        [1.3, 5.0],
        [-3.0, 3.4],
        [-0.1, 7.0],
        [1.8, 5.0],
        [-4.0, 1.0],
        [1.0, -2.0],
    ];
    let cells = [("g1", "l1"), ("g1", "l2"), ("g2", "l1"), ("g2", "l2")];
    MixtureSpec {
        schema_version: SCHEMA_VERSION,
        weights: vec![0.25, 0.12, 0.13, 0.1, 0.1, 0.05, 0.12, 0.13],
        means: means.iter().map(|m| DVector::from_row_slice(m)).collect(),
        cov: SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[0.932, 0.11, 0.11, 1.632])).expect("SPD by construction"),
        assignment: (0..8)
            .map(|c| Cell {
                group: cells[c / 2].0.to_string(),
                level: cells[c / 2].1.to_string(),
            })
            .collect(),
    }
}

/// Draws `n` units and returns them with the component index of each.
pub fn simulate_with_components(spec: &MixtureSpec, n: usize, rng: &mut RngStream) -> Result<(Dataset, Vec<usize>)> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Domain("n must be at least 1".into()));
    }
    let mut rows = Vec::with_capacity(n);
    let mut comps = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut c = spec.weights.len() - 1;
        for (j, w) in spec.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                c = j;
                break;
            }
        }
        let y = mvn_sample(&spec.means[c], &spec.cov, rng)?;
        let cell = &spec.assignment[c];
        rows.push((cell.group.clone(), cell.level.clone(), y.iter().copied().collect()));
        comps.push(c);
    }
    Ok((Dataset::from_labelled(rows, spec.p())?, comps))
}

/// Draws `n` units: a component from the weights, then `y ~ N_p(mean, cov)`.
pub fn simulate(spec: &MixtureSpec, n: usize, rng: &mut RngStream) -> Result<Dataset> {
    simulate_with_components(spec, n, rng).map(|(d, _)| d)
}

/// Renders a dataset in the CSV schema; values use the shortest
/// representation that parses back exactly.
pub fn to_csv_string(data: &Dataset) -> String {
    let mut out = String::from("group,level");
    for j in 1..=data.p() {
        out.push_str(&format!(",y{j}"));
    }
    if data.has_explicit_covariates() {
        for j in 1..=data.q() {
            out.push_str(&format!(",x{j}"));
        }
    }
    out.push('\n');
    for u in data.units() {
        out.push_str(&csv_field(&data.group_names()[u.group]));
        out.push(',');
        out.push_str(&csv_field(&data.level_names()[u.level]));
        for v in u.y.iter() {
            out.push_str(&format!(",{v:?}"));
        }
        if data.has_explicit_covariates() {
            for v in u.x.iter() {
                out.push_str(&format!(",{v:?}"));
            }
        }
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn save_csv(data: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, to_csv_string(data))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCsv {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Column {
    Group,
    Level,
    Response(usize),
    Covariate(usize),
    Unknown,
}

fn classify_column(name: &str) -> Column {
    let name = name.trim();
    let indexed = |prefix: char| {
        name.strip_prefix(prefix)
            .and_then(|rest| rest.parse::<usize>().ok())
            .filter(|&j| j >= 1)
    };
    match name {
        "group" => Column::Group,
        "level" => Column::Level,
        _ => match (indexed('y'), indexed('x')) {
            (Some(j), _) => Column::Response(j - 1),
            (_, Some(j)) => Column::Covariate(j - 1),
            _ => Column::Unknown,
        },
    }
}

/// Parses CSV text; `log` replaces every response by its natural log and
/// rejects non-positive values.
pub fn parse_csv(text: &str, log: bool) -> Result<LoadedCsv> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].trim().is_empty()) {
        return Err(Error::Parse {
            line: 1,
            message: "empty file: a header `group,level,y1,...` is required".into(),
        });
    }
    let columns: Vec<Column> = header.iter().map(classify_column).collect();
    let mut warnings = Vec::new();
    for (name, col) in header.iter().zip(&columns) {
        if *col == Column::Unknown {
            warnings.push(format!("ignoring unknown column `{name}`"));
        }
    }
    let find = |c: Column| columns.iter().position(|&x| x == c);
    let group_col = find(Column::Group).ok_or_else(|| Error::Parse {
        line: 1,
        message: "missing `group` column".into(),
    })?;
    let level_col = find(Column::Level).ok_or_else(|| Error::Parse {
        line: 1,
        message: "missing `level` column".into(),
    })?;
    let contiguous = |make: fn(usize) -> Column, what: &str| -> Result<Vec<usize>> {
        let count = columns.iter().filter(|&&c| std::mem::discriminant(&c) == std::mem::discriminant(&make(0))).count();
        (0..count)
            .map(|j| {
                find(make(j)).ok_or_else(|| Error::Parse {
                    line: 1,
                    message: format!("{what} columns must be numbered 1..{count} without gaps or repeats"),
                })
            })
            .collect()
    };
    let y_cols = contiguous(Column::Response, "response")?;
    let x_cols = contiguous(Column::Covariate, "covariate")?;
    if y_cols.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no response columns `y1`, `y2`, ...".into(),
        });
    }
    let p = y_cols.len();
    let q = x_cols.len();
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let line = r + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let number = |col: usize| -> Result<f64> {
            let raw = record[col].trim();
            raw.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("column `{}`: `{raw}` is not a number", &header[col]),
            })
        };
        let mut y = y_cols.iter().map(|&c| number(c)).collect::<Result<Vec<_>>>()?;
        if log {
            for (v, &c) in y.iter_mut().zip(&y_cols) {
                if !(*v > 0.0) {
                    return Err(Error::Parse {
                        line,
                        message: format!("column `{}`: log of non-positive value {v}", &header[c]),
                    });
                }
                *v = v.ln();
            }
        }
        let x = x_cols.iter().map(|&c| number(c)).collect::<Result<Vec<_>>>()?;
        rows.push((record[group_col].trim().to_string(), record[level_col].trim().to_string(), y, x));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "no data rows".into(),
        });
    }
    let dataset = if q > 0 {
        Dataset::with_covariates(rows, p, q)?
    } else {
        Dataset::from_labelled(rows.into_iter().map(|(g, l, y, _)| (g, l, y)).collect(), p)?
    };
    Ok(LoadedCsv { dataset, warnings })
}

pub fn load_csv(path: &Path, log: bool) -> Result<LoadedCsv> {
    let text = std::fs::read_to_string(path)?;
    if text.trim().is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: format!("{} is empty", path.display()),
        });
    }
    parse_csv(&text, log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    /// No unit observed for this (group, level) combination.
    EmptyCell { group: String, level: String },
    NonFinite { unit: usize },
    /// Unit identical to an earlier one in labels, responses and covariates.
    Duplicate { unit: usize, first: usize },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::EmptyCell { group, level } => write!(f, "no observations for group `{group}` at level `{level}`"),
            Finding::NonFinite { unit } => write!(f, "unit {unit} has a non-finite value"),
            Finding::Duplicate { unit, first } => write!(f, "unit {unit} duplicates unit {first}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub m: usize,
    pub k: usize,
    pub group_counts: Vec<usize>,
    /// `cell_counts[group][level]`.
    pub cell_counts: Vec<Vec<usize>>,
    pub findings: Vec<Finding>,
}

/// Unit indices in findings are 0-based; the CSV line is `unit + 2`.
pub fn validate(data: &Dataset) -> ValidationReport {
    let (m, k) = (data.m(), data.k());
    let mut cells = vec![vec![0usize; k]; m];
    let mut findings = Vec::new();
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    for (i, u) in data.units().iter().enumerate() {
        cells[u.group][u.level] += 1;
        if u.y.iter().chain(u.x.iter()).any(|v| !v.is_finite()) {
            findings.push(Finding::NonFinite { unit: i });
        }
        let key: Vec<u64> = [u.group as u64, u.level as u64]
            .into_iter()
            .chain(u.y.iter().chain(u.x.iter()).map(|v| v.to_bits()))
            .collect();
        if let Some(&first) = seen.get(&key) {
            findings.push(Finding::Duplicate { unit: i, first });
        } else {
            seen.insert(key, i);
        }
    }
    for (g, row) in cells.iter().enumerate() {
        for (l, &c) in row.iter().enumerate() {
            if c == 0 {
                findings.push(Finding::EmptyCell {
                    group: data.group_names()[g].clone(),
                    level: data.level_names()[l].clone(),
                });
            }
        }
    }
    ValidationReport {
        n: data.n(),
        p: data.p(),
        q: data.q(),
        m,
        k,
        group_counts: data.group_counts(),
        cell_counts: cells,
        findings,
    }
}

/// Wine-shaped stand-in data: `p` log-concentrations, groups `variety*`,
/// levels `valley*`, a shared shift per group and per level.
pub fn synthetic_wine_like(n: usize, p: usize, m: usize, k: usize, rng: &mut RngStream) -> Result<Dataset> {
    if n == 0 || p == 0 || m == 0 || k == 0 {
        return Err(Error::Domain("all dimensions must be positive".into()));
    }
    let group_shift: Vec<Vec<f64>> = (0..m).map(|_| (0..p).map(|_| 2.0 * rng.standard_normal()).collect()).collect();
    let level_shift: Vec<Vec<f64>> = (0..k).map(|_| (0..p).map(|_| 0.5 * rng.standard_normal()).collect()).collect();
    let rows = (0..n)
        .map(|i| {
            let g = i % m;
            let l = (i / m) % k;
            let y = (0..p)
                .map(|r| group_shift[g][r] + level_shift[l][r] + 0.3 * rng.standard_normal())
                .collect();
            (format!("variety{}", g + 1), format!("valley{}", l + 1), y)
        })
        .collect();
    Dataset::from_labelled(rows, p)
}
