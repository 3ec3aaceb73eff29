use std::path::Path;

use serde::Serialize;
use shiftseq::estimator::{
    offline_pretrain, simulate_with_estimation, sparsify_run, EstimationTrace, EstimatorBank, Imputer,
};
use shiftseq::filtering::{apply_successive, relative_error};
use shiftseq::fluctuation::{mse_bound, mse_empirical, uniform_probabilities, FluctuationModel};
use shiftseq::{rng, Matrix, Vector};

use crate::config::Config;
use crate::error::CliError;
use crate::output::{ensure_dir, float, write_json, Table};
use crate::scenario::{self, Scenario};

#[derive(Serialize)]
struct DesignReport<'a> {
    rounds: usize,
    weights: &'a [f64],
    final_objective: f64,
    objective_history: &'a [f64],
    per_round_error: &'a [f64],
    sweeps: usize,
    converged: bool,
}

pub fn design(cfg: &Config, seed: u64, out: &Path) -> Result<(), CliError> {
    let sc = scenario::build(cfg, seed)?;
    let seq = &sc.sequence;
    ensure_dir(out)?;
    seq.save(out.join("shifts"))?;
    write_json(
        &out.join("design_report.json"),
        &DesignReport {
            rounds: seq.rounds(),
            weights: &seq.weights,
            final_objective: seq.final_objective(),
            objective_history: &seq.objective_history,
            per_round_error: &seq.per_round_error,
            sweeps: seq.sweeps,
            converged: seq.converged,
        },
    )?;
    println!("final objective {}", float(seq.final_objective()));
    println!("sweeps {} converged {}", seq.sweeps, seq.converged);
    for (l, e) in seq.per_round_error.iter().enumerate() {
        println!("round {} error {}", l + 1, float(*e));
    }
    Ok(())
}

pub fn run(cfg: &Config, seed: u64, out: &Path) -> Result<(), CliError> {
    let sc = scenario::build(cfg, seed)?;
    let x = scenario::signal(cfg, sc.topology.n_nodes(), seed)?;
    let trace = apply_successive(&sc.sequence.shifts, &x)?.with_errors(&sc.target);
    let errors = trace.errors.as_deref().unwrap_or_default();
    let mut table = Table::new(["round", "error", "relative_error", "signal_norm"]);
    for (l, y) in trace.iterates.iter().enumerate() {
        table.push(vec![
            l.to_string(),
            float(errors[l]),
            float(relative_error(&sc.target, &x, y)?),
            float(y.norm()),
        ]);
    }
    ensure_dir(out)?;
    table.write(&out.join("run.csv"))?;
    println!("final relative error {}", table.rows().last().map_or("", |r| &r[2]));
    Ok(())
}

/// Activation matrices to evaluate, labelled for the CSV.
fn probability_rows(cfg: &Config, sc: &Scenario) -> Result<Vec<(String, Matrix)>, CliError> {
    let n = sc.topology.n_nodes();
    if let Some(path) = &cfg.fluctuation.probabilities {
        let m = FluctuationModel::read_probabilities(path, n)?;
        return Ok(vec![("file".into(), m)]);
    }
    if cfg.fluctuation.p_active.is_empty() {
        return Err(CliError::Input("fluctuation.p_active is empty".into()));
    }
    cfg.fluctuation
        .p_active
        .iter()
        .map(|&p| Ok((float(p), uniform_probabilities(&sc.topology, p)?)))
        .collect()
}

pub fn fluctuate(cfg: &Config, seed: u64, out: &Path) -> Result<(), CliError> {
    let sc = scenario::build(cfg, seed)?;
    let x = scenario::signal(cfg, sc.topology.n_nodes(), seed)?;
    let shifts = &sc.sequence.shifts;
    let f = &cfg.fluctuation;
    let mut header: Vec<String> = [
        "p_active", "trials", "mse", "mse_se", "bound", "bound_se", "e_tr_psi", "rho",
    ]
    .map(String::from)
    .to_vec();
    header.extend((1..=shifts.len()).map(|l| format!("deviation_norm_{l}")));
    let mut table = Table::new(header);
    let base = rng::substream(seed, "fluctuation");
    for (row, (label, p)) in probability_rows(cfg, &sc)?.into_iter().enumerate() {
        let row_seed = rng::child(base, row as u64);
        let mse = mse_empirical(shifts, &p, &x, f.trials, row_seed)?;
        let bound = mse_bound(shifts, &p, &x, f.rho, f.trials, row_seed, f.mean_term)?;
        let mut r = vec![
            label,
            f.trials.to_string(),
            float(mse.mse.value),
            float(mse.mse.std_error),
            float(bound.bound),
            float(bound.bound_se),
            float(bound.expected_trace_psi.value),
            float(bound.rho),
        ];
        r.extend(mse.round_deviation_norms.iter().map(|v| float(*v)));
        table.push(r);
    }
    ensure_dir(out)?;
    table.write(&out.join("fluctuate.csv"))?;
    println!("wrote {} rows to fluctuate.csv", table.rows().len());
    Ok(())
}

pub fn bound(cfg: &Config, seed: u64, out: &Path) -> Result<(), CliError> {
    let sc = scenario::build(cfg, seed)?;
    let x = scenario::signal(cfg, sc.topology.n_nodes(), seed)?;
    let shifts = &sc.sequence.shifts;
    let f = &cfg.fluctuation;
    let mut header: Vec<String> = ["p_active", "trials", "bound", "bound_se", "rho", "e_tr_psi", "e_tr_psi_se"]
        .map(String::from)
        .to_vec();
    header.extend((1..=shifts.len()).map(|l| format!("deviation_term_{l}")));
    let mut table = Table::new(header);
    let base = rng::substream(seed, "fluctuation");
    for (row, (label, p)) in probability_rows(cfg, &sc)?.into_iter().enumerate() {
        let b = mse_bound(shifts, &p, &x, f.rho, f.trials, rng::child(base, row as u64), f.mean_term)?;
        let mut r = vec![
            label,
            f.trials.to_string(),
            float(b.bound),
            float(b.bound_se),
            float(b.rho),
            float(b.expected_trace_psi.value),
            float(b.expected_trace_psi.std_error),
        ];
        r.extend(b.deviation_terms.iter().map(|v| float(*v)));
        table.push(r);
    }
    ensure_dir(out)?;
    table.write(&out.join("bound.csv"))?;
    println!("wrote {} rows to bound.csv", table.rows().len());
    Ok(())
}

/// Final relative errors of one scenario under clean, zero-imputed and
/// RFF-imputed execution.
struct Comparison {
    clean: f64,
    zero: f64,
    rff: f64,
    imputed: usize,
    messages_sent: u64,
    messages_full: u64,
}

fn compare(
    cfg: &Config,
    scenario_seed: u64,
    mut execute: impl FnMut(&Scenario, &Vector, &mut Imputer<'_>, u64) -> Result<EstimationTrace, CliError>,
) -> Result<Comparison, CliError> {
    let sc = scenario::build(cfg, scenario_seed)?;
    let n = sc.topology.n_nodes();
    let shifts = &sc.sequence.shifts;
    let x = scenario::signal(cfg, n, scenario_seed)?;
    let drops = rng::substream(scenario_seed, "fluctuation");

    // clean baseline through the same update loop, every message delivered
    let all = Matrix::from_element(n, n, 1.0);
    let clean = simulate_with_estimation(&sc.topology, shifts, &all, &x, &mut Imputer::Zero, drops)?;
    let zero = execute(&sc, &x, &mut Imputer::Zero, drops)?;
    let est_cfg = scenario::estimator_config(cfg, scenario_seed);
    let mut bank = if cfg.estimator.pretrain {
        offline_pretrain(&sc.topology, shifts, &est_cfg)?
    } else {
        EstimatorBank::untrained(&sc.topology, &est_cfg)?
    };
    let rff = execute(
        &sc,
        &x,
        &mut Imputer::Rff {
            bank: &mut bank,
            online: cfg.estimator.online,
        },
        drops,
    )?;
    let err = |t: &EstimationTrace| relative_error(&sc.target, &x, t.trace.final_signal());
    Ok(Comparison {
        clean: err(&clean)?,
        zero: err(&zero)?,
        rff: err(&rff)?,
        imputed: rff.imputed.iter().map(Vec::len).sum(),
        messages_sent: rff.messages_sent,
        messages_full: rff.messages_full,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

pub fn estimate(cfg: &Config, seed: u64, out: &Path) -> Result<(), CliError> {
    let p = cfg.estimator.p_active;
    let mut table = Table::new(["seed", "clean", "zero_imputation", "rff_imputation", "rff_better", "imputed"]);
    let mut results = Vec::new();
    for k in 0..cfg.estimator.seeds {
        let c = compare(cfg, rng::child(seed, k), |sc, x, imp, drops| {
            let pa = uniform_probabilities(&sc.topology, p)?;
            Ok(simulate_with_estimation(&sc.topology, &sc.sequence.shifts, &pa, x, imp, drops)?)
        })?;
        table.push(vec![
            k.to_string(),
            float(c.clean),
            float(c.zero),
            float(c.rff),
            u8::from(c.rff < c.zero).to_string(),
            c.imputed.to_string(),
        ]);
        results.push(c);
    }
    let wins = results.iter().filter(|c| c.rff < c.zero).count();
    let win_rate = wins as f64 / results.len().max(1) as f64;
    table.push(vec![
        "summary".into(),
        float(mean(&results.iter().map(|c| c.clean).collect::<Vec<_>>())),
        float(mean(&results.iter().map(|c| c.zero).collect::<Vec<_>>())),
        float(mean(&results.iter().map(|c| c.rff).collect::<Vec<_>>())),
        float(win_rate),
        results.iter().map(|c| c.imputed).sum::<usize>().to_string(),
    ]);
    ensure_dir(out)?;
    table.write(&out.join("estimate.csv"))?;
    println!("rff beats zero imputation on {wins} of {} seeds", results.len());
    Ok(())
}

pub fn sparsify(cfg: &Config, seed: u64, out: &Path) -> Result<(), CliError> {
    let e = &cfg.estimator;
    let mut table = Table::new([
        "seed",
        "messages_sent",
        "messages_full",
        "savings",
        "clean",
        "zero_imputation",
        "rff_imputation",
    ]);
    let (mut sent, mut full) = (0u64, 0u64);
    for k in 0..e.seeds {
        let c = compare(cfg, rng::child(seed, k), |sc, x, imp, drops| {
            Ok(sparsify_run(
                &sc.topology,
                &sc.sequence.shifts,
                e.drop_rate,
                e.freeze_after,
                x,
                imp,
                drops,
            )?)
        })?;
        sent += c.messages_sent;
        full += c.messages_full;
        table.push(vec![
            k.to_string(),
            c.messages_sent.to_string(),
            c.messages_full.to_string(),
            float(savings(c.messages_sent, c.messages_full)),
            float(c.clean),
            float(c.zero),
            float(c.rff),
        ]);
    }
    table.push(vec![
        "total".into(),
        sent.to_string(),
        full.to_string(),
        float(savings(sent, full)),
        String::new(),
        String::new(),
        String::new(),
    ]);
    ensure_dir(out)?;
    table.write(&out.join("sparsify.csv"))?;
    println!("sent {sent} of {full} messages");
    Ok(())
}

fn savings(sent: u64, full: u64) -> f64 {
    if full == 0 {
        0.0
    } else {
        1.0 - sent as f64 / full as f64
    }
}
