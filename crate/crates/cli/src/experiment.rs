//! Sweep orchestration and artifact writing.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use drc_core::regret_lab::{sweep, SweepResult};

use crate::config::{ExperimentConfig, RunSpec, TraceMode};
use crate::output::{
    regret_svg, trace_rows, write_csv, Curve, RateRow, SummaryRow, RATE_COLUMNS, SUMMARY_COLUMNS, TRACE_COLUMNS,
};

/// What a run produced.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub summaries: Vec<SummaryRow>,
    pub rates: Vec<RateRow>,
    /// Invariant violations; artifacts are written regardless.
    pub violations: Vec<String>,
    pub files: Vec<PathBuf>,
}

fn label(run: &RunSpec, multi_block: bool) -> String {
    let mut s = format!("case {}", run.case.id());
    if let Some(a) = run.alpha {
        s.push_str(&format!(", alpha {a}"));
    }
    if multi_block {
        s = format!("{}: {s}", run.block);
    }
    s
}

fn rate_rows(run: &RunSpec, res: &SweepResult, rows: &[SummaryRow]) -> Vec<RateRow> {
    res.mean_regret
        .iter()
        .map(|&(t, mean)| {
            let at: Vec<&SummaryRow> = rows.iter().filter(|r| r.horizon == t).collect();
            let n = at.len().max(1) as f64;
            RateRow {
                block: run.block.clone(),
                case: run.case.id(),
                alpha: run.alpha,
                horizon: t,
                seeds: at.len(),
                mean_regret: mean,
                mean_bound: at.iter().map(|r| r.bound).sum::<f64>() / n,
                regret_over_log_t: mean / (t as f64).ln(),
                slope: res.fit.as_ref().map(|f| f.slope),
                intercept: res.fit.as_ref().map(|f| f.intercept),
                points: res.fit.as_ref().map_or(0, |f| f.used),
            }
        })
        .collect()
}

fn check_invariants(rows: &[SummaryRow], out: &mut Vec<String>) {
    for r in rows {
        let at = format!("block `{}`, case {}, seed {}, T = {}", r.block, r.case, r.seed, r.horizon);
        if r.regret > r.bound + 1e-6 {
            out.push(format!("{at}: regret {} exceeds bound {}", r.regret, r.bound));
        }
        if r.worst_drift_excess > 1e-9 {
            out.push(format!("{at}: step drift exceeds its bound by {}", r.worst_drift_excess));
        }
        if r.decomposition_gap().abs() > 1e-6 {
            out.push(format!("{at}: decomposition terms miss the regret by {}", r.decomposition_gap()));
        }
        if !r.solver_converged {
            out.push(format!("{at}: hindsight solver did not converge"));
        }
    }
}

/// Run every sweep of `cfg`, writing artifacts under `cfg.out_dir`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    let problems = cfg.validate();
    if !problems.is_empty() {
        bail!("invalid configuration:\n  {}", problems.join("\n  "));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if cfg.parallel > 0 {
        builder = builder.num_threads(cfg.parallel);
    }
    let pool = builder.build().context("starting worker pool")?;
    pool.install(|| run_inner(cfg))
}

fn run_inner(cfg: &ExperimentConfig) -> Result<RunReport> {
    let root = &cfg.out_dir;
    fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    let seeds = cfg.seed_list();
    let first_seed = seeds[0];
    let opts = cfg.solver_options();
    let multi_block = cfg.episodes.len() > 1;
    let mut report = RunReport::default();
    let mut curves = Vec::new();

    for run in cfg.run_specs()? {
        let base = cfg.episode(&run, cfg.horizons[0])?;
        let mode = cfg.traces;
        let keep = move |seed: u64, _t: usize| match mode {
            TraceMode::None => false,
            TraceMode::FirstSeed => seed == first_seed,
            TraceMode::All => true,
        };
        log::info!("running {} over {:?} with {} seeds", label(&run, multi_block), cfg.horizons, seeds.len());
        let res = sweep(&base, &cfg.horizons, &seeds, &opts, &keep)
            .with_context(|| format!("sweep for {}", label(&run, multi_block)))?;
        let slope = res.fit.as_ref().map(|f| f.slope);
        let rows: Vec<SummaryRow> = res
            .summaries
            .iter()
            .map(|s| SummaryRow::new(&run.block, run.case.id(), run.alpha, s, slope))
            .collect();
        let rates = rate_rows(&run, &res, &rows);

        let dir = root.join(&run.dir);
        let trace_dir = dir.join("traces");
        fs::create_dir_all(&trace_dir).with_context(|| format!("creating {}", trace_dir.display()))?;
        let mut files = vec![dir.join("summary.csv"), dir.join("rates.csv"), dir.join("regret_curves.svg")];
        write_csv(&files[0], SUMMARY_COLUMNS, &rows)?;
        write_csv(&files[1], RATE_COLUMNS, &rates)?;
        let curve = Curve {
            label: label(&run, multi_block),
            points: res.mean_regret.clone(),
            slope,
        };
        write_file(&files[2], &regret_svg(&format!("Mean regret, {}", curve.label), std::slice::from_ref(&curve)))?;
        for trace in &res.traces {
            let path = trace_dir.join(format!("seed{}_T{}.csv", trace.seed, trace.horizon()));
            write_csv(&path, TRACE_COLUMNS, &trace_rows(trace))?;
            files.push(path);
        }
        check_invariants(&rows, &mut report.violations);
        report.files.extend(files);
        report.summaries.extend(rows);
        report.rates.extend(rates);
        curves.push(curve);
    }

    let top = [
        root.join("summary.csv"),
        root.join("rates.csv"),
        root.join("regret_curves.svg"),
        root.join("effective_config.toml"),
    ];
    write_csv(&top[0], SUMMARY_COLUMNS, &report.summaries)?;
    write_csv(&top[1], RATE_COLUMNS, &report.rates)?;
    write_file(&top[2], &regret_svg("Mean regret by case", &curves))?;
    write_file(&top[3], &cfg.to_toml()?)?;
    report.files.extend(top);
    Ok(report)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
