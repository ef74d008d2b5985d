use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vdmfpca::baseline::BinnedMfpcaFit;
use vdmfpca::evaluate::{evaluate_binned, evaluate_vd, BIN_METHOD, VD_METHOD};
use vdmfpca::metrics::{summarize, MetricReport, Summary};
use vdmfpca::mfpca::{score_domain_association, MultivariateVdFit};
use vdmfpca::simgen::{derive_seed, generate, DomainDistribution, SimConfig, SimTruth};

use crate::config::{FitConfig, Scenario, ScenarioSet};
use crate::error::{CliError, CliResult};
use crate::io::{
    csv_error, csv_writer, ensure_dir, read_long_csv, write_json, write_long_csv, LoadReport,
};

/// Run metadata written next to every output.
#[derive(Debug, Serialize)]
pub struct Manifest<C: Serialize, D: Serialize> {
    pub command: &'static str,
    pub version: &'static str,
    pub created_unix: u64,
    pub config: C,
    pub details: D,
}

impl<C: Serialize, D: Serialize> Manifest<C, D> {
    pub fn new(command: &'static str, config: C, details: D) -> Self {
        let created_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            created_unix,
            config,
            details,
        }
    }
}

pub const SEED_SCHEME: &str =
    "replicate seed = first u64 of ChaCha8(base seed, stream = scenario_index << 32 | replicate)";

/// Seed of replicate `replicate` of scenario `scenario`.
pub fn replicate_seed(base: u64, scenario: usize, replicate: usize) -> u64 {
    derive_seed(base, ((scenario as u64) << 32) | replicate as u64)
}

// ---------------------------------------------------------------- simulate

pub fn simulate(cfg: &SimConfig, out: &Path) -> CliResult<(PathBuf, PathBuf)> {
    let (dataset, truth) = generate(cfg)?;
    ensure_dir(out)?;
    let data = out.join("data.csv");
    let truth_path = out.join("truth.json");
    write_long_csv(&dataset, &data)?;
    let file = std::fs::File::create(&truth_path).map_err(|e| CliError::output(&truth_path, e))?;
    serde_json::to_writer(std::io::BufWriter::new(file), &truth)
        .map_err(|e| CliError::output(&truth_path, std::io::Error::other(e.to_string())))?;
    #[derive(Serialize)]
    struct Details {
        n_subjects: usize,
        rows: usize,
    }
    let rows = dataset
        .subjects()
        .iter()
        .flat_map(|s| &s.series)
        .map(|s| s.len())
        .sum();
    write_json(
        &Manifest::new(
            "simulate",
            cfg,
            Details {
                n_subjects: dataset.n_subjects(),
                rows,
            },
        ),
        &out.join("manifest.json"),
    )?;
    Ok((data, truth_path))
}

// --------------------------------------------------------------------- fit

#[derive(Debug, Serialize)]
pub struct FitSummary {
    pub input: PathBuf,
    pub n_subjects: usize,
    pub variables: Vec<String>,
    pub k: BTreeMap<String, usize>,
    pub m: usize,
    pub load: LoadReport,
    pub smoothing_lambdas: BTreeMap<String, [f64; 2]>,
}

/// Domain lengths at which curves are exported: equally spaced over the
/// observed range, always including both ends.
fn export_domains(fit: &MultivariateVdFit, count: usize) -> Vec<f64> {
    let d = &fit.stacked.domain_lengths;
    let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo || count < 2 {
        return vec![lo];
    }
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

pub fn fit(data: &Path, cfg: &FitConfig, out: &Path) -> CliResult<FitSummary> {
    cfg.validate()?;
    let (dataset, load) = read_long_csv(data, cfg.min_obs, &cfg.plausible_ranges)?;
    if load.excluded() > 0 {
        eprintln!(
            "excluded {} subject(s): {} below min_obs, {} incomplete",
            load.excluded(),
            load.below_min_obs.len(),
            load.incomplete.len()
        );
    }
    let fit = MultivariateVdFit::fit(&dataset, &cfg.mfpca())?;
    ensure_dir(out)?;
    let domains = export_domains(&fit, cfg.export_domains);

    let path = out.join("eigenfunctions.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["variable", "T", "t", "component", "value"])
        .map_err(|e| csv_error(&path, e))?;
    let upath = out.join("univariate_eigenfunctions.csv");
    let mut uw = csv_writer(&upath)?;
    uw.write_record(["variable", "T", "t", "component", "value"])
        .map_err(|e| csv_error(&upath, e))?;
    let mpath = out.join("mean_surface.csv");
    let mut mw = csv_writer(&mpath)?;
    mw.write_record(["variable", "T", "t", "value"])
        .map_err(|e| csv_error(&mpath, e))?;
    for &t_dom in &domains {
        let (grid, psi) = fit.eigenfunctions_at(t_dom)?;
        for (j, u) in fit.univariate.iter().enumerate() {
            let eig = u.eigen_at(t_dom)?;
            for (g, &t) in grid.iter().enumerate() {
                for c in 0..fit.m {
                    w.write_record([
                        &u.variable,
                        &t_dom.to_string(),
                        &t.to_string(),
                        &(c + 1).to_string(),
                        &psi[j][(g, c)].to_string(),
                    ])
                    .map_err(|e| csv_error(&path, e))?;
                }
                for c in 0..eig.k() {
                    uw.write_record([
                        &u.variable,
                        &t_dom.to_string(),
                        &t.to_string(),
                        &(c + 1).to_string(),
                        &eig.eigenfunctions[(g, c)].to_string(),
                    ])
                    .map_err(|e| csv_error(&upath, e))?;
                }
                mw.write_record([
                    &u.variable,
                    &t_dom.to_string(),
                    &t.to_string(),
                    &u.mean.eval(t, t_dom)?.to_string(),
                ])
                .map_err(|e| csv_error(&mpath, e))?;
            }
        }
    }
    for (writer, p) in [(&mut w, &path), (&mut uw, &upath), (&mut mw, &mpath)] {
        writer.flush().map_err(|e| CliError::output(p, e))?;
    }

    let path = out.join("scores.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["subject_id", "component", "value"])
        .map_err(|e| csv_error(&path, e))?;
    for (id, rho) in fit.stacked.subject_ids.iter().zip(&fit.scores) {
        for (c, v) in rho.iter().enumerate() {
            w.write_record([id, &(c + 1).to_string(), &v.to_string()])
                .map_err(|e| csv_error(&path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::output(&path, e))?;

    let path = out.join("variance_explained.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["T", "component", "eigenvalue", "share"])
        .map_err(|e| csv_error(&path, e))?;
    for row in fit.variance_explained_curve(&domains, fit.m)? {
        w.write_record([
            row.domain_length.to_string(),
            row.component.to_string(),
            row.eigenvalue.to_string(),
            row.share.to_string(),
        ])
        .map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| CliError::output(&path, e))?;

    let path = out.join("spearman.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["component", "rho", "p_value", "n"])
        .map_err(|e| csv_error(&path, e))?;
    for c in 0..fit.m {
        let scores: Vec<f64> = fit.scores.iter().map(|r| r[c]).collect();
        let row = match score_domain_association(&scores, &fit.stacked.domain_lengths) {
            Ok(s) => [
                (c + 1).to_string(),
                s.rho.to_string(),
                s.p_value.to_string(),
                s.n.to_string(),
            ],
            Err(_) => [
                (c + 1).to_string(),
                String::new(),
                String::new(),
                scores.len().to_string(),
            ],
        };
        w.write_record(row).map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| CliError::output(&path, e))?;

    let summary = FitSummary {
        input: data.to_path_buf(),
        n_subjects: dataset.n_subjects(),
        variables: dataset.variables().to_vec(),
        k: fit
            .univariate
            .iter()
            .map(|u| (u.variable.clone(), u.k))
            .collect(),
        m: fit.m,
        load,
        smoothing_lambdas: fit
            .univariate
            .iter()
            .map(|u| {
                let mean = u.mean.0.surface.selected_lambda[0];
                let cov = u.covariance.0.surface.selected_lambda[0];
                (u.variable.clone(), [mean, cov])
            })
            .collect(),
    };
    write_json(
        &Manifest::new("fit", cfg, &summary),
        &out.join("manifest.json"),
    )?;
    Ok(summary)
}

// --------------------------------------------------------------- benchmark

/// One measured cell of the benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub n: usize,
    pub domain_dist: DomainDistribution,
    pub sigma: f64,
    pub n_bins: Option<usize>,
    pub replicate: usize,
    pub method: String,
    pub metric: String,
    pub variable: Option<String>,
    pub component: Option<usize>,
    pub value: Option<f64>,
}

pub const ERROR_METRIC: &str = "error";

impl ResultRow {
    /// Label of the method column in the summary: `BIN5`, `BIN10`, `VD-MFPCA`.
    pub fn method_label(&self) -> String {
        match self.n_bins {
            Some(b) => format!("{}{b}", self.method),
            None => self.method.clone(),
        }
    }
}

#[derive(Debug)]
pub struct BenchmarkOutcome {
    pub rows: Vec<ResultRow>,
    pub replicates: usize,
    pub failed: usize,
    pub messages: Vec<String>,
}

impl BenchmarkOutcome {
    pub fn failure_rate(&self) -> f64 {
        if self.replicates == 0 {
            0.0
        } else {
            self.failed as f64 / self.replicates as f64
        }
    }
}

fn report_rows(base: &ResultRow, report: &MetricReport, variables: &[String]) -> Vec<ResultRow> {
    let mut rows = Vec::new();
    for (j, name) in variables.iter().enumerate() {
        rows.push(ResultRow {
            metric: "ARMSE_X".into(),
            variable: Some(name.clone()),
            component: None,
            value: Some(report.armse_x[j]),
            ..base.clone()
        });
        for (k, v) in report.armse_pc[j].iter().enumerate() {
            rows.push(ResultRow {
                metric: "ARMSE_PC".into(),
                variable: Some(name.clone()),
                component: Some(k + 1),
                value: Some(*v),
                ..base.clone()
            });
        }
    }
    rows
}

/// Every method on one generated replicate. Method failures become error rows.
pub fn run_replicate(
    set: &ScenarioSet,
    scenario: &Scenario,
    replicate: usize,
    seed: u64,
) -> (Vec<ResultRow>, Vec<String>) {
    let base = ResultRow {
        n: scenario.n,
        domain_dist: scenario.domain_dist,
        sigma: scenario.sigma,
        n_bins: None,
        replicate,
        method: VD_METHOD.into(),
        metric: String::new(),
        variable: None,
        component: None,
        value: None,
    };
    let error_row = |base: &ResultRow| ResultRow {
        metric: ERROR_METRIC.into(),
        ..base.clone()
    };
    let sim = SimConfig::new(scenario.n, scenario.domain_dist, scenario.sigma, seed);
    let (dataset, truth): (_, SimTruth) = match generate(&sim) {
        Ok(x) => x,
        Err(e) => {
            return (
                vec![error_row(&base)],
                vec![format!("replicate {replicate}: {e}")],
            )
        }
    };
    let variables = dataset.variables().to_vec();
    let mut rows = Vec::new();
    let mut messages = Vec::new();
    let context = |label: &str, e: vdmfpca::Error| {
        format!(
            "n={} {} sigma={} replicate {replicate} {label}: {e}",
            scenario.n,
            scenario.domain_dist.as_str(),
            scenario.sigma
        )
    };

    let vd = MultivariateVdFit::fit(&dataset, &set.fit.mfpca())
        .and_then(|f| evaluate_vd(&f, &truth, set.n_pc));
    match vd {
        Ok(r) => rows.extend(report_rows(&base, &r, &variables)),
        Err(e) => {
            rows.push(error_row(&base));
            messages.push(context(VD_METHOD, e));
        }
    }
    for &b in &set.n_bins {
        let bin_base = ResultRow {
            method: BIN_METHOD.into(),
            n_bins: Some(b),
            ..base.clone()
        };
        let bin = BinnedMfpcaFit::fit(&dataset, b, &set.fit.standard())
            .and_then(|f| evaluate_binned(&f, &truth, set.n_pc));
        match bin {
            Ok(r) => rows.extend(report_rows(&bin_base, &r, &variables)),
            Err(e) => {
                rows.push(error_row(&bin_base));
                messages.push(context(&bin_base.method_label(), e));
            }
        }
    }
    (rows, messages)
}

fn metric_order(m: &str) -> u8 {
    match m {
        "ARMSE_X" => 0,
        "ARMSE_PC" => 1,
        _ => 2,
    }
}

/// Run `replicates` replicates of every scenario on `jobs` worker threads.
/// Output order depends only on the inputs.
pub fn run_benchmark(
    set: &ScenarioSet,
    replicates: usize,
    jobs: usize,
    base_seed: u64,
) -> CliResult<BenchmarkOutcome> {
    set.validate()?;
    if replicates == 0 || jobs == 0 {
        return Err(CliError::Config(
            "replicates and jobs must be at least 1".into(),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let tasks: Vec<(usize, usize)> = (0..set.scenarios.len())
        .flat_map(|s| (0..replicates).map(move |r| (s, r)))
        .collect();
    let results: Vec<(usize, Vec<ResultRow>, Vec<String>)> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(s, r)| {
                let (rows, messages) =
                    run_replicate(set, &set.scenarios[s], r, replicate_seed(base_seed, s, r));
                (s, rows, messages)
            })
            .collect()
    });
    let mut keyed = Vec::new();
    let mut messages = Vec::new();
    let mut failed = 0;
    for (s, rows, msgs) in results {
        if !msgs.is_empty() {
            failed += 1;
        }
        messages.extend(msgs);
        keyed.extend(rows.into_iter().map(|r| (s, r)));
    }
    keyed.sort_by(|(sa, a), (sb, b)| {
        sa.cmp(sb)
            .then(a.replicate.cmp(&b.replicate))
            .then((a.method != VD_METHOD).cmp(&(b.method != VD_METHOD)))
            .then(a.n_bins.cmp(&b.n_bins))
            .then(metric_order(&a.metric).cmp(&metric_order(&b.metric)))
            .then(a.variable.cmp(&b.variable))
            .then(a.component.cmp(&b.component))
    });
    Ok(BenchmarkOutcome {
        rows: keyed.into_iter().map(|(_, r)| r).collect(),
        replicates: tasks.len(),
        failed,
        messages,
    })
}

/// Key of a summary cell: scenario, metric, variable, component.
type CellKey = (
    usize,
    DomainDistribution,
    u64,
    String,
    Option<String>,
    Option<usize>,
);

/// Mean and SD per (scenario, method, metric, variable, component), error rows
/// excluded.
pub fn summarize_rows(
    rows: &[ResultRow],
) -> CliResult<BTreeMap<CellKey, BTreeMap<String, Summary>>> {
    let mut cells: BTreeMap<CellKey, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        let Some(v) = r.value else { continue };
        let key = (
            r.n,
            r.domain_dist,
            r.sigma.to_bits(),
            r.metric.clone(),
            r.variable.clone(),
            r.component,
        );
        cells
            .entry(key)
            .or_default()
            .entry(r.method_label())
            .or_default()
            .push(v);
    }
    cells
        .into_iter()
        .map(|(k, methods)| {
            let m = methods
                .into_iter()
                .map(|(label, values)| Ok((label, summarize(&values)?)))
                .collect::<CliResult<BTreeMap<_, _>>>()?;
            Ok((k, m))
        })
        .collect()
}

pub fn format_summary(s: &Summary) -> String {
    match s.sd {
        Some(sd) => format!("{:.4} ({:.4})", s.mean, sd),
        None => format!("{:.4}", s.mean),
    }
}

fn sibling(path: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map_or_else(|| "results".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

pub fn summary_path(out: &Path) -> PathBuf {
    sibling(out, "_summary", "csv")
}

/// Run the benchmark and write the long results, the summary pivot and a
/// manifest. Returns the outcome even when too many replicates failed; the
/// caller decides the exit status.
pub fn benchmark(
    set: &ScenarioSet,
    replicates: usize,
    jobs: usize,
    base_seed: u64,
    out: &Path,
) -> CliResult<BenchmarkOutcome> {
    let outcome = run_benchmark(set, replicates, jobs, base_seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    let mut w = csv_writer(out)?;
    w.write_record([
        "n",
        "domain_dist",
        "sigma",
        "n_bins",
        "replicate",
        "method",
        "metric",
        "variable",
        "component",
        "value",
    ])
    .map_err(|e| csv_error(out, e))?;
    for r in &outcome.rows {
        w.write_record([
            r.n.to_string(),
            r.domain_dist.as_str().to_string(),
            r.sigma.to_string(),
            r.n_bins.map_or_else(String::new, |b| b.to_string()),
            r.replicate.to_string(),
            r.method.clone(),
            r.metric.clone(),
            r.variable.clone().unwrap_or_default(),
            r.component.map_or_else(String::new, |c| c.to_string()),
            r.value.map_or_else(String::new, |v| v.to_string()),
        ])
        .map_err(|e| csv_error(out, e))?;
    }
    w.flush().map_err(|e| CliError::output(out, e))?;

    let summary = summarize_rows(&outcome.rows)?;
    let mut labels = vec![VD_METHOD.to_string()];
    labels.extend(set.n_bins.iter().map(|b| format!("{BIN_METHOD}{b}")));
    let spath = summary_path(out);
    let mut w = csv_writer(&spath)?;
    let mut header: Vec<String> = [
        "n",
        "domain_dist",
        "sigma",
        "metric",
        "variable",
        "component",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(labels.iter().cloned());
    w.write_record(&header).map_err(|e| csv_error(&spath, e))?;
    for ((n, dist, sigma, metric, variable, component), methods) in &summary {
        let mut rec = vec![
            n.to_string(),
            dist.as_str().to_string(),
            f64::from_bits(*sigma).to_string(),
            metric.clone(),
            variable.clone().unwrap_or_default(),
            component.map_or_else(String::new, |c| c.to_string()),
        ];
        rec.extend(
            labels
                .iter()
                .map(|l| methods.get(l).map_or_else(String::new, format_summary)),
        );
        w.write_record(&rec).map_err(|e| csv_error(&spath, e))?;
    }
    w.flush().map_err(|e| CliError::output(&spath, e))?;

    #[derive(Serialize)]
    struct Details<'a> {
        replicates: usize,
        jobs: usize,
        base_seed: u64,
        seed_scheme: &'static str,
        failed_replicates: usize,
        total_replicates: usize,
        messages: &'a [String],
    }
    write_json(
        &Manifest::new(
            "benchmark",
            set,
            Details {
                replicates,
                jobs,
                base_seed,
                seed_scheme: SEED_SCHEME,
                failed_replicates: outcome.failed,
                total_replicates: outcome.replicates,
                messages: &outcome.messages,
            },
        ),
        &sibling(out, "_manifest", "json"),
    )?;
    Ok(outcome)
}
