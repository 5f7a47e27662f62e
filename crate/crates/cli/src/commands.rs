//! One function per data-producing subcommand.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde_json::json;

use expograph::consensus::{product_norm_series, random_initial_state, residue_decay, ScheduleKind, WeightSchedule};
use expograph::optimizer::{estimate_transient_iterations, run_training, Algorithm, StepSize, TrainConfig, TrainTrace};
use expograph::spectral::{comparison_table, full_spectrum, predicted_gap, transient_bound};
use expograph::synthdata::{generate_logistic, REFERENCE_TOL};
use expograph::{TopologyKind, TopologySpec};

use crate::output::{Cell, Table};
use crate::{CliError, ConsensusArgs, Metric, Product, SpectrumArgs, TableArgs, TrainArgs};

fn positive(field: &str, v: usize) -> Result<(), CliError> {
    if v == 0 {
        return Err(CliError::usage(field, "must be positive"));
    }
    Ok(())
}

fn node_counts(a: &SpectrumArgs) -> Result<Vec<usize>, CliError> {
    let ns: Vec<usize> = match a.n_range {
        Some(r) => (r.start..=r.end).collect(),
        None => a.n.clone(),
    };
    if ns.is_empty() {
        return Err(CliError::usage("--n", "give --n or --n-range"));
    }
    Ok(ns)
}

pub fn spectrum(a: &SpectrumArgs, seed: u64) -> Result<Product, CliError> {
    let ns = node_counts(a)?;
    let mut cells = Vec::new();
    for &kind in &a.family {
        if kind == TopologyKind::BipartiteRandomMatch {
            return Err(CliError::usage(
                "--family",
                "bipartite-match realizations are disconnected; it has no single-matrix spectrum",
            ));
        }
        for &n in &ns {
            let spec = TopologySpec::new(kind, n).with_seed(seed);
            spec.validate()
                .map_err(|e| CliError::usage("--n", format!("{kind} at n = {n}: {e}")))?;
            cells.push(spec);
        }
    }
    let mut rows = cells
        .par_iter()
        .map(|spec| {
            let context = || format!("spectrum of {} at n = {}", spec.kind, spec.n);
            let w = WeightSchedule::new(ScheduleKind::Static, spec.clone(), seed)
                .map_err(|e| CliError::compute(context(), e))?
                .next_matrix(0);
            let report = full_spectrum(&w).map_err(|e| CliError::compute(context(), e))?;
            let bound = transient_bound(spec.n, report.gap, a.regime).map_err(|e| CliError::compute(context(), e))?;
            Ok((spec.kind.name(), spec.n, report, bound))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    rows.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
    let mut table = Table::new(vec!["n", "family", "rho", "gap", "predicted_gap", "deviation_norm", "transient_bound"]);
    for (family, n, r, bound) in rows {
        let kind: TopologyKind = family.parse().expect("round trip");
        table.push(vec![
            n.into(),
            family.into(),
            r.rho.into(),
            r.gap.into(),
            predicted_gap(kind, n).into(),
            r.deviation_norm.into(),
            bound.into(),
        ]);
    }
    Ok(Product {
        table,
        x_axis: "n",
        y_axis: vec!["gap", "predicted_gap"],
        series_column: Some("family"),
        summary: None,
        note: String::new(),
    })
}

pub fn consensus(a: &ConsensusArgs, seed: u64) -> Result<Product, CliError> {
    positive("--trials", a.trials)?;
    positive("--d", a.d)?;
    if a.n.is_empty() || a.schedule.is_empty() {
        return Err(CliError::usage("--n", "needs at least one node count and schedule"));
    }
    // trial t uses schedule seed `seed + t` and initial state stream t
    let mut cells = Vec::new();
    for token in &a.schedule {
        for &n in &a.n {
            for t in 0..a.trials as u64 {
                let s = WeightSchedule::from_token(token, n, seed.wrapping_add(t))
                    .map_err(|e| CliError::usage("--schedule", format!("`{token}` at n = {n}: {e}")))?;
                cells.push((s, t));
            }
        }
    }
    let mut series = cells
        .par_iter()
        .map(|(s, t)| {
            let context = || format!("{} at n = {}", s.series_name(), s.n());
            let values = match a.metric {
                Metric::Residue => {
                    let x0 = random_initial_state(s.n(), a.d, seed, *t);
                    residue_decay(s, &x0, a.steps).map_err(|e| CliError::compute(context(), e))?.values
                }
                Metric::ProductNorm => product_norm_series(s, a.steps).map_err(|e| CliError::compute(context(), e))?,
            };
            Ok((s.series_name(), s.n(), *t, values))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    series.sort_by(|x, y| (&x.0, x.1, x.2).cmp(&(&y.0, y.1, y.2)));
    let value_column = match a.metric {
        Metric::Residue => "residue",
        Metric::ProductNorm => "product_norm",
    };
    let mut table = Table::new(vec!["schedule", "n", "trial", "k", value_column]);
    for (name, n, t, values) in series {
        for (k, v) in values.into_iter().enumerate() {
            table.push(vec![name.clone().into(), n.into(), t.into(), k.into(), v.into()]);
        }
    }
    Ok(Product {
        table,
        x_axis: "k",
        y_axis: vec![value_column],
        series_column: Some("schedule"),
        summary: None,
        note: String::new(),
    })
}

fn step_size(a: &TrainArgs) -> Result<StepSize, CliError> {
    if !(a.gamma > 0.0 && a.gamma.is_finite()) {
        return Err(CliError::usage("--gamma", "must be a positive number"));
    }
    if a.gamma_period == 0 {
        return Ok(StepSize::constant(a.gamma));
    }
    if !(a.gamma_factor > 0.0 && a.gamma_factor.is_finite()) {
        return Err(CliError::usage("--gamma-factor", "must be a positive number"));
    }
    Ok(StepSize::stepped(a.gamma, a.gamma_factor, a.gamma_period, a.iters))
}

pub fn train(a: &TrainArgs, seed: u64) -> Result<Product, CliError> {
    positive("--n", a.n)?;
    positive("--d", a.d)?;
    positive("--samples-per-node", a.samples_per_node)?;
    positive("--batch-size", a.batch_size)?;
    positive("--trials", a.trials)?;
    if a.iters == 0 {
        return Err(CliError::usage("--iters", "must be positive"));
    }
    if a.record_every == 0 {
        return Err(CliError::usage("--record-every", "must be positive"));
    }
    if !(0.0..1.0).contains(&a.beta) {
        return Err(CliError::usage("--beta", "must lie in [0, 1)"));
    }
    if !(a.delta > 0.0) {
        return Err(CliError::usage("--delta", "must be positive"));
    }
    if a.schedule.is_empty() {
        return Err(CliError::usage("--schedule", "needs at least one schedule"));
    }
    let gamma = step_size(a)?;
    let config = |schedule: WeightSchedule, algorithm: Algorithm| TrainConfig {
        n: a.n,
        d: a.d,
        gamma: gamma.clone(),
        beta: a.beta,
        iterations: a.iters,
        batch_size: a.batch_size,
        schedule,
        algorithm,
        seed,
        trials: a.trials,
        record_every: a.record_every,
    };
    let mut runs = Vec::new();
    for token in &a.schedule {
        let s = WeightSchedule::from_token(token, a.n, seed)
            .map_err(|e| CliError::usage("--schedule", format!("`{token}`: {e}")))?;
        runs.push((s.series_name(), config(s, a.algorithm)));
    }
    let baseline_schedule = WeightSchedule::fixed(TopologyKind::FullyConnected, a.n)
        .map_err(|e| CliError::usage("--n", e.to_string()))?;
    let mut baseline = config(baseline_schedule, Algorithm::ParallelMsgd);
    if a.algorithm == Algorithm::Dsgd {
        baseline.beta = 0.0;
    }
    let data_seed = a.data_seed.unwrap_or(seed);
    let ds = generate_logistic(a.n, a.samples_per_node, a.d, a.heterogeneity, data_seed)
        .and_then(|ds| ds.with_reference(REFERENCE_TOL))
        .map_err(|e| CliError::compute("dataset", e))?;
    let par = run_training(&baseline, &ds).map_err(|e| CliError::compute("parallel baseline", e))?;
    let mut traces: Vec<(String, TrainTrace)> = Vec::new();
    for (name, cfg) in runs {
        let trace = run_training(&cfg, &ds).map_err(|e| CliError::compute(format!("training over {name}"), e))?;
        traces.push((name, trace));
    }

    let mut transient = BTreeMap::new();
    let mut final_mse = BTreeMap::new();
    for (name, trace) in &traces {
        let k = estimate_transient_iterations(trace, &par, a.delta).map_err(|e| CliError::compute("transient estimate", e))?;
        transient.insert(name.clone(), k);
        final_mse.insert(name.clone(), trace.last().map(|r| r.mse));
    }
    let par_final = par.last().map(|r| r.mse);
    let summary = json!({
        "algorithm": a.algorithm.name(),
        "delta": a.delta,
        "iterations": a.iters,
        "record_every": a.record_every,
        "baseline": "parallel",
        "transient_iterations": transient,
        "final_mse": final_mse,
        "baseline_final_mse": par_final,
    });
    let note = transient
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ");

    traces.push(("parallel".into(), par));
    traces.sort_by(|x, y| x.0.cmp(&y.0));
    let mut table = Table::new(vec!["series", "k", "mse", "grad_norm", "consensus"]);
    for (name, trace) in &traces {
        for r in &trace.records {
            table.push(vec![
                name.as_str().into(),
                r.k.into(),
                r.mse.into(),
                r.grad_norm.into(),
                r.consensus.into(),
            ]);
        }
    }
    Ok(Product {
        table,
        x_axis: "k",
        y_axis: vec!["mse"],
        series_column: Some("series"),
        summary: Some(summary),
        note: format!("transient iterations: {note}"),
    })
}

pub fn table(a: &TableArgs, seed: u64) -> Result<Product, CliError> {
    if let Some(&n) = a.n.iter().find(|&&n| n < 4) {
        return Err(CliError::usage("--n", format!("comparison rows need n >= 4, got {n}")));
    }
    let mut ns = a.n.clone();
    ns.sort_unstable();
    ns.dedup();
    let rows = comparison_table(&ns, a.regime, seed).map_err(|e| CliError::compute("comparison table", e))?;
    let mut table = Table::new(vec!["n", "family", "per_iter_degree", "gap", "transient_bound"]);
    for r in rows {
        table.push(vec![
            r.n.into(),
            r.family.name().into(),
            Cell::from(r.per_iter_degree),
            r.gap.into(),
            r.transient_bound.into(),
        ]);
    }
    Ok(Product {
        table,
        x_axis: "family",
        y_axis: vec!["per_iter_degree", "transient_bound"],
        series_column: Some("family"),
        summary: None,
        note: String::new(),
    })
}
