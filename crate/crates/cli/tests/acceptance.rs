//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Run everything with `cargo test -p foodauth --test acceptance`, or pick
//! criteria by number: `cargo test -p foodauth --test acceptance -- 4 5 6`.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use foodauth_core::bpref::{lda_fit, lda_predict};
use foodauth_core::datagen::{load_csv, save_csv, synthetic_wine_like};
use foodauth_core::diagnostics::oracles::{partition_tv_distance, sampled_partition_frequencies};
use foodauth_core::diagnostics::{
    cpo_from_loglik, default_functionals, geweke_test, mann_whitney_auc, partition_posterior_oracle, roc_curve,
    GewekeConfig,
};
use foodauth_core::domain::{Dataset, HyperSpec, Hyperparameters, MatrixSpec, ModelKind};
use foodauth_core::randmat::{inverse_wishart_sample, mvn_logpdf, RngStream, SpdMatrix};
use nalgebra::{DMatrix, DVector};
use serde_json::Value;

const REPS: u64 = 5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn say(line: &str) {
    // bypasses the test harness's output capture
    let _ = writeln!(std::io::stderr(), "{line}");
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_foodauth")
}

fn foodauth(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!(
            "foodauth {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn report_error(path: &Path) -> f64 {
    read_json(path)["total_error"].as_f64().unwrap()
}

/// AUC of the curve scoring the first group (the two curves agree when m = 2).
fn report_auc(path: &Path) -> f64 {
    read_json(path)["roc"][0]["auc"].as_f64().unwrap()
}

struct Rep {
    train_bsp: f64,
    train_bsp_conditional: f64,
    loo: [f64; 3],
    /// In-sample AUCs: BSP and BP chains fitted to all units, LDA fitted to all units.
    auc: [f64; 3],
    loo_auc: [f64; 3],
    lpml: [f64; 2],
    dic: [[f64; 3]; 2],
    elapsed: Duration,
}

/// One repetition of the simulation study: data seed and chain seed `rep`,
/// 10,000 iterations with 2,000 burn-in.
fn simulation_rep(rep: u64) -> Result<Rep, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let seed = rep.to_string();
    let start = Instant::now();
    let chain = |extra: &[&str]| -> Vec<String> {
        let mut v: Vec<String> = ["--hyper", "sim-s5", "--iterations", "10000", "--burn-in", "2000", "--seed", &seed]
            .iter()
            .map(|s| s.to_string())
            .collect();
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    let run = |base: &[&str], extra: &[&str]| -> Result<String, String> {
        let mut args: Vec<String> = base.iter().map(|s| s.to_string()).collect();
        args.extend(chain(extra));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        foodauth(dir, &refs)
    };
    foodauth(dir, &["simulate", "--paper-sim", "--n", "100", "--seed", &seed, "--out", "sim.csv"])?;
    run(&["fit", "--model", "bsp", "--data", "sim.csv", "--out", "bsp.json"], &["--reassign", "marginal"])?;
    run(&["fit", "--model", "bp", "--data", "sim.csv", "--out", "bp.json"], &[])?;
    foodauth(dir, &["classify", "--chain", "bsp.json", "--data", "sim.csv", "--out", "bsp.train.json"])?;
    foodauth(dir, &["classify", "--chain", "bp.json", "--data", "sim.csv", "--out", "bp.train.json"])?;
    run(
        &["loocv", "--model", "bsp", "--data", "sim.csv", "--out", "bsp.loo.json"],
        &["--reassign", "marginal"],
    )?;
    run(&["loocv", "--model", "bp", "--data", "sim.csv", "--out", "bp.loo.json"], &[])?;
    foodauth(dir, &["loocv", "--model", "lda", "--data", "sim.csv", "--hyper", "sim-s5", "--out", "lda.loo.json"])?;
    foodauth(
        dir,
        &["compare", "--chains", "bsp.json,bp.json", "--data", "sim.csv", "--out", "compare.json"],
    )?;
    let elapsed = start.elapsed();

    run(&["fit", "--model", "bsp", "--data", "sim.csv", "--out", "bspc.json"], &[])?;
    foodauth(dir, &["classify", "--chain", "bspc.json", "--data", "sim.csv", "--out", "bspc.train.json"])?;

    let cmp = read_json(&dir.join("compare.json"));
    let metric = |i: usize| -> (f64, [f64; 3]) {
        let row = &cmp[i];
        let dic = row["dic"].as_array().unwrap();
        (
            row["lpml"].as_f64().unwrap(),
            [0, 1, 2].map(|j| dic[j]["dic"].as_f64().unwrap()),
        )
    };
    let (lpml_bsp, dic_bsp) = metric(0);
    let (lpml_bp, dic_bp) = metric(1);
    let loo = ["bsp", "bp", "lda"].map(|m| dir.join(format!("{m}.loo.json")));
    let data = load_csv(&dir.join("sim.csv"), false).map_err(|e| e.to_string())?.dataset;
    let lda = lda_fit(&data).map_err(|e| e.to_string())?;
    let lda_scores: Vec<f64> = data.units().iter().map(|u| lda_predict(&lda, &u.y)[0]).collect();
    let lda_auc = roc_curve(&lda_scores, &data.labels(), 0).map_err(|e| e.to_string())?.auc;
    Ok(Rep {
        train_bsp: report_error(&dir.join("bsp.train.json")),
        train_bsp_conditional: report_error(&dir.join("bspc.train.json")),
        loo: [0, 1, 2].map(|i| report_error(&loo[i])),
        auc: [
            report_auc(&dir.join("bsp.train.json")),
            report_auc(&dir.join("bp.train.json")),
            lda_auc,
        ],
        loo_auc: [0, 1, 2].map(|i| report_auc(&loo[i])),
        lpml: [lpml_bsp, lpml_bp],
        dic: [dic_bsp, dic_bp],
        elapsed,
    })
}

fn simulation_criteria() -> [Outcome; 3] {
    let mut reps = Vec::new();
    for r in 1..=REPS {
        match simulation_rep(r) {
            Ok(rep) => {
                say(&format!(
                    "  rep {r}: train BSP {:.3} (conditional kernel {:.3}); LOOCV BSP {:.3} BP {:.3} LDA {:.3}; \
                     AUC {:.4} {:.4} {:.4} (LOOCV {:.4} {:.4} {:.4}); LPML {:.1} {:.1}; DIC BSP {:.1}/{:.1}/{:.1} BP {:.1}/{:.1}/{:.1}; {:.0} s",
                    rep.train_bsp,
                    rep.train_bsp_conditional,
                    rep.loo[0],
                    rep.loo[1],
                    rep.loo[2],
                    rep.auc[0],
                    rep.auc[1],
                    rep.auc[2],
                    rep.loo_auc[0],
                    rep.loo_auc[1],
                    rep.loo_auc[2],
                    rep.lpml[0],
                    rep.lpml[1],
                    rep.dic[0][0],
                    rep.dic[0][1],
                    rep.dic[0][2],
                    rep.dic[1][0],
                    rep.dic[1][1],
                    rep.dic[1][2],
                    rep.elapsed.as_secs_f64()
                ));
                reps.push(rep);
            }
            Err(e) => {
                let fail = || Outcome {
                    pass: false,
                    detail: format!("rep {r}: {e}"),
                };
                return [fail(), fail(), fail()];
            }
        }
    }

    let bands_ok = |r: &Rep| {
        r.train_bsp <= 0.12 && (0.08..=0.26).contains(&r.loo[0]) && r.loo[2] >= 0.18 && r.elapsed.as_secs() <= 15 * 60
    };
    let ordered = reps.iter().filter(|r| r.loo[0] <= r.loo[1] && r.loo[1] <= r.loo[2]).count();
    let in_band = reps.iter().filter(|r| bands_ok(r)).count();
    let c1 = Outcome {
        pass: in_band == reps.len() && ordered >= 4,
        detail: format!(
            "bands (train <= 12%, BSP LOOCV in [8%, 26%], LDA LOOCV >= 18%, <= 15 min) held in {in_band}/{} reps; \
             LOOCV ordering BSP <= BP <= LDA in {ordered}/{} reps",
            reps.len(),
            reps.len()
        ),
    };

    let auc_ok = reps
        .iter()
        .filter(|r| r.auc[0] >= r.auc[1] && r.auc[1] >= r.auc[2] && r.auc[0] >= 0.90)
        .count();
    let c2 = Outcome {
        pass: auc_ok == reps.len(),
        detail: format!(
            "in-sample AUC_BSP >= AUC_BP >= AUC_LDA and AUC_BSP >= 0.90 in {auc_ok}/{} reps",
            reps.len()
        ),
    };

    let cmp_ok = reps
        .iter()
        .filter(|r| r.lpml[0] > r.lpml[1] && (0..3).all(|j| r.dic[0][j] < r.dic[1][j]))
        .count();
    let c3 = Outcome {
        pass: cmp_ok >= 4,
        detail: format!("LPML(BSP) > LPML(BP) and DIC1-3(BSP) < DIC1-3(BP) in {cmp_ok}/{} reps", reps.len()),
    };
    [c1, c2, c3]
}

/// Priors with enough degrees of freedom for every functional to have a
/// finite variance.
fn geweke_hyper(p: usize, k: usize) -> Hyperparameters {
    let mut spec = HyperSpec::simulation_preset();
    spec.tau0 = MatrixSpec::ScaledIdentity { scaled_identity: 1.0 };
    spec.phi0 = MatrixSpec::ScaledIdentity { scaled_identity: 3.5 };
    spec.gamma0 = 10.0;
    spec.nu0 = 10.0;
    spec.q0 = MatrixSpec::ScaledIdentity { scaled_identity: 7.0 };
    spec.t0 = 10.0;
    spec.l0 = MatrixSpec::ScaledIdentity { scaled_identity: 7.0 };
    spec.r0 = (p * k + 8) as f64;
    spec.r0_scale = MatrixSpec::ScaledIdentity { scaled_identity: 7.0 };
    spec.a1 = 2.0;
    spec.a2 = 2.0;
    spec.resolve(p, k).unwrap()
}

fn geweke_criterion() -> Outcome {
    let start = Instant::now();
    // p = 2, one group (q = 1), k = 2 levels, n = 6
    let rows = (0..6)
        .map(|i| ("g".to_string(), format!("l{}", i % 2), vec![0.0, 0.0]))
        .collect();
    let design = Dataset::from_labelled(rows, 2).unwrap();
    let hyper = geweke_hyper(2, 2);
    let mut details = Vec::new();
    let mut pass = true;
    for (model, seed) in [(ModelKind::Bsp, 41), (ModelKind::Bp, 42)] {
        let fs = default_functionals(design.dims(), model);
        let out = geweke_test(&design, &hyper, &fs, &GewekeConfig::new(model, 50_000, seed)).unwrap();
        let worst = out.iter().max_by(|a, b| a.z.abs().total_cmp(&b.z.abs())).unwrap();
        pass &= fs.len() >= 20 && worst.z.abs() < 4.0;
        details.push(format!(
            "{model}: {} functionals, max |z| = {:.2} ({})",
            fs.len(),
            worst.z.abs(),
            worst.name
        ));
    }
    let elapsed = start.elapsed();
    pass &= elapsed.as_secs() <= 600;
    Outcome {
        pass,
        detail: format!("{}; {:.0} s", details.join("; "), elapsed.as_secs_f64()),
    }
}

fn partition_criterion() -> Outcome {
    let thetas = [0.4, -1.1, 1.6];
    let (tau, r, mass) = (0.5, 2.0, 1.3);
    let oracle = partition_posterior_oracle(&thetas, tau, r, mass).unwrap();
    let sampled = sampled_partition_frequencies(&thetas, tau, r, mass, 200_000, &mut RngStream::new(5, 0)).unwrap();
    let tv = partition_tv_distance(&oracle, &sampled);
    Outcome {
        pass: oracle.len() == 5 && tv < 0.02,
        detail: format!("{} partitions, TV distance {tv:.4} at 200,000 sweeps", oracle.len()),
    }
}

fn naive_logpdf(y: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let p = y.len() as f64;
    let d = y - mean;
    let inv = cov.clone().try_inverse().unwrap();
    -0.5 * (p * (2.0 * std::f64::consts::PI).ln() + cov.determinant().ln() + (d.transpose() * inv * &d)[(0, 0)])
}

fn kernel_criterion() -> Outcome {
    let mut rng = RngStream::new(6, 0);
    let mut notes = Vec::new();

    let mut worst_mvn = 0.0_f64;
    for _ in 0..100 {
        let a = DMatrix::from_fn(3, 3, |_, _| rng.standard_normal());
        let cov = &a * a.transpose() + DMatrix::identity(3, 3) * 0.5;
        let y = DVector::from_fn(3, |_, _| rng.standard_normal());
        let mean = DVector::from_fn(3, |_, _| rng.standard_normal());
        let got = mvn_logpdf(&y, &mean, &SpdMatrix::new(cov.clone()).unwrap()).unwrap();
        worst_mvn = worst_mvn.max((got - naive_logpdf(&y, &mean, &cov)).abs());
    }
    let mvn_ok = worst_mvn < 1e-10;
    notes.push(format!("mvn_logpdf max deviation {worst_mvn:.1e}"));

    let mut worst_iw = 0.0_f64;
    for dim in [1usize, 3] {
        let a = DMatrix::from_fn(dim, dim, |_, _| rng.standard_normal());
        let scale = SpdMatrix::new(&a * a.transpose() + DMatrix::identity(dim, dim)).unwrap();
        let df = dim as f64 + 8.0;
        let draws = 100_000;
        let mut sum = DMatrix::zeros(dim, dim);
        for _ in 0..draws {
            sum += inverse_wishart_sample(df, &scale, &mut rng).unwrap().matrix();
        }
        let mean = sum / draws as f64;
        let target = scale.matrix() / (df - dim as f64 - 1.0);
        for i in 0..dim {
            for j in 0..dim {
                let unit = (target[(i, i)] * target[(j, j)]).sqrt();
                worst_iw = worst_iw.max((mean[(i, j)] - target[(i, j)]).abs() / unit);
            }
        }
    }
    let iw_ok = worst_iw < 0.02;
    notes.push(format!("inverse-Wishart mean max relative deviation {:.2}%", 100.0 * worst_iw));

    let mut auc_mismatch = 0;
    for _ in 0..100 {
        let n = 5 + (rng.uniform() * 40.0) as usize;
        // coarse scores so ties occur
        let scores: Vec<f64> = (0..n).map(|_| (rng.uniform() * 6.0).floor()).collect();
        let mut labels: Vec<usize> = (0..n).map(|_| usize::from(rng.uniform() < 0.5)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let auc = roc_curve(&scores, &labels, 1).unwrap().auc;
        auc_mismatch += usize::from(auc != mann_whitney_auc(&scores, &labels, 1));
    }
    notes.push(format!("AUC != Mann-Whitney on {auc_mismatch}/100 instances"));

    // likelihoods 1/2 and 1/4 across two draws: harmonic mean 1/3
    let cpo = cpo_from_loglik(&[vec![0.5f64.ln(), 0.3f64.ln()], vec![0.25f64.ln(), 0.3f64.ln()]]).unwrap();
    let c = cpo.cpo();
    let cpo_dev = (c[0] - 1.0 / 3.0).abs().max((c[1] - 0.3).abs());
    let lpml_dev = (cpo.lpml - ((1.0f64 / 3.0).ln() + 0.3f64.ln())).abs();
    let cpo_ok = cpo_dev < 1e-15 && lpml_dev < 1e-15;
    notes.push(format!("CPO identities deviation {:.1e}", cpo_dev.max(lpml_dev)));

    Outcome {
        pass: mvn_ok && iw_ok && auc_mismatch == 0 && cpo_ok,
        detail: notes.join("; "),
    }
}

fn manifests(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".manifest.json"))
        .collect();
    v.sort();
    v
}

fn determinism_criterion() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let short = ["--hyper", "sim-s5", "--iterations", "300", "--burn-in", "100", "--seed", "3"];
    let with = |base: &[&'static str]| -> Vec<&'static str> { base.iter().chain(short.iter()).copied().collect() };
    std::fs::write(dir.join("grid.json"), r#"{"schema_version": 1, "rows": [{"a1": 2}, {"tau0": 10}, {}]}"#).unwrap();
    let steps: Vec<Vec<&str>> = vec![
        vec!["simulate", "--paper-sim", "--n", "30", "--seed", "9", "--out", "sim.csv"],
        with(&["fit", "--model", "bsp", "--data", "sim.csv", "--out", "bsp.json"]),
        with(&["fit", "--model", "bp", "--data", "sim.csv", "--out", "bp.json"]),
        vec!["classify", "--chain", "bsp.json", "--data", "sim.csv", "--priors", "uniform", "--out", "cls.json"],
        with(&["loocv", "--model", "bsp", "--data", "sim.csv", "--threads", "4", "--out", "loo4.json"]),
        with(&["loocv", "--model", "bsp", "--data", "sim.csv", "--threads", "1", "--out", "loo1.json"]),
        with(&["loocv", "--model", "lda", "--data", "sim.csv", "--out", "lda.json"]),
        vec!["compare", "--chains", "bsp.json,bp.json", "--data", "sim.csv", "--reports", "cls.json,cls.json", "--out", "cmp.json"],
        with(&["sweep", "--grid", "grid.json", "--data", "sim.csv", "--threads", "3", "--out", "sweep.csv"]),
        vec!["validate", "--data", "sim.csv", "--out", "val.json"],
    ];
    for s in &steps {
        if let Err(e) = foodauth(dir, s) {
            return Outcome { pass: false, detail: e };
        }
    }
    let mut failures = Vec::new();
    let found = manifests(dir);
    for m in &found {
        let name = m.file_name().unwrap().to_string_lossy().into_owned();
        let out_dir = format!("replay-{name}");
        if let Err(e) = foodauth(dir, &["replay", "--manifest", &name, "--out-dir", &out_dir]) {
            failures.push(format!("{name}: {e}"));
        }
    }
    let same_threads = std::fs::read(dir.join("loo4.json")).unwrap() == std::fs::read(dir.join("loo1.json")).unwrap();
    Outcome {
        pass: failures.is_empty() && found.len() == steps.len() && same_threads,
        detail: format!(
            "{}/{} manifests replayed byte-identically; loocv with 4 threads {} 1 thread{}",
            found.len() - failures.len(),
            steps.len(),
            if same_threads { "==" } else { "!=" },
            if failures.is_empty() {
                String::new()
            } else {
                format!("; {}", failures.join("; "))
            }
        ),
    }
}

fn wine_criterion() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut notes = Vec::new();
    let mut pass = true;

    // nine responses, three varieties, seven valleys
    let (p, m, k) = (9, 3, 7);
    let preset = HyperSpec::wine_preset();
    let resolved = preset.resolve(p, k);
    let preset_ok = resolved.as_ref().is_ok_and(|h| {
        h.r_scale.dim() == p * k && (h.r_df - 65.0).abs() < 1e-12 && (h.tau_scale.matrix()[(0, 0)] - 0.01).abs() < 1e-12
    });
    pass &= preset_ok;
    notes.push(format!("wine preset resolves at p = 9, k = 7: {preset_ok}"));

    let data = synthetic_wine_like(84, p, m, k, &mut RngStream::new(8, 0)).unwrap();
    save_csv(&data, &dir.join("wine.csv")).unwrap();
    let validate = foodauth(dir, &["validate", "--data", "wine.csv", "--out", "val.json"]);
    let schema_ok = validate.is_ok() && {
        let v = read_json(&dir.join("val.json"));
        v["n"] == 84 && v["p"] == 9 && v["m"] == 3 && v["k"] == 7 && v["findings"].as_array().unwrap().is_empty()
    };
    std::fs::write(dir.join("bad.csv"), "group,level,y1,y3\ng,l,1.0,2.0\n").unwrap();
    let rejects = foodauth(dir, &["validate", "--data", "bad.csv"]).is_err();
    pass &= schema_ok && rejects;
    notes.push(format!("schema validation accepts stand-in: {schema_ok}, rejects gap in y columns: {rejects}"));

    let grid = Path::new(env!("CARGO_MANIFEST_DIR")).join("grids/wine-sensitivity.json");
    let grid = grid.to_string_lossy().into_owned();
    let sweep = foodauth(
        dir,
        &[
            "sweep", "--grid", &grid, "--data", "wine.csv", "--hyper", "wine-s6", "--iterations", "300", "--burn-in",
            "100", "--seed", "4", "--out", "sweep.csv",
        ],
    );
    let sweep_ok = sweep.is_ok() && {
        let text = std::fs::read_to_string(dir.join("sweep.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let header_ok = lines[0].starts_with("row,label,status,M mean,M sd,\"beta[3,1]\" mean")
            && lines[0].contains("\"tau[5,5]\" sd");
        header_ok && lines.len() == 9 && lines[1..].iter().all(|l| l.split(',').any(|f| f == "ok"))
    };
    pass &= sweep_ok;
    notes.push(format!("8-row sensitivity sweep with M, beta[3,1], tau[3,3], beta[5,1], tau[5,5]: {sweep_ok}"));

    Outcome {
        pass,
        detail: notes.join("; "),
    }
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |c: u32| wanted.is_empty() || wanted.contains(&c);
    let mut results: Vec<(u32, Outcome)> = Vec::new();

    if want(1) || want(2) || want(3) {
        say("criteria 1-3: five repetitions of the simulation study (several minutes each)");
        let [c1, c2, c3] = simulation_criteria();
        for (i, o) in [(1, c1), (2, c2), (3, c3)] {
            if want(i) {
                results.push((i, o));
            }
        }
    }
    let singles: [(u32, fn() -> Outcome); 5] = [
        (4, geweke_criterion),
        (5, partition_criterion),
        (6, kernel_criterion),
        (7, determinism_criterion),
        (8, wine_criterion),
    ];
    for (i, f) in singles {
        if want(i) {
            results.push((i, f()));
        }
    }
    results.sort_by_key(|(i, _)| *i);

    let mut failed = 0;
    for (i, o) in &results {
        say(&format!("criterion {i}: {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail));
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        say(&format!("{failed} acceptance criterion/criteria failed"));
        std::process::exit(1);
    }
}
