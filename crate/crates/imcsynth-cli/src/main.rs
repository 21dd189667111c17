//! Command-line front end: abstraction, synthesis, simulation and plot data export.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use imcsynth::{
    build_bmdp, sampled_soundness, simulate_closed_loop, synthesize_continuous, synthesize_finite,
    validate_bmdp, write_verdicts_csv, Objective, Pipeline, RabinAutomaton, RunConfig,
    SynthesisResult, SystemModel,
};

#[derive(Parser)]
#[command(
    name = "imcsynth",
    version,
    about = "Controller synthesis over interval abstractions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the interval abstraction of the initial partition.
    Abstract(Common),
    /// Run the refinement loop and write the controller.
    Synthesize(Common),
    /// Monte Carlo check of a synthesized controller.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Result file written by `synthesize` (default: OUT/result.json).
        #[arg(long)]
        result: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
        /// Number of initial cells, spread evenly over the partition.
        #[arg(long, default_value_t = 20)]
        cells: usize,
    },
    /// Write CSV series for partition maps, precision, action counts and time.
    ExportPlots {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        result: Option<PathBuf>,
        /// Satisfaction threshold of the verdict map.
        #[arg(long, default_value_t = 0.8)]
        threshold: f64,
    },
    /// Check the abstraction rows and compare them with sampled transitions.
    ValidateModel {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 20_000)]
        draws: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Max,
    Min,
}

#[derive(Clone, Copy, ValueEnum)]
enum PipelineArg {
    Finite,
    Continuous,
}

#[derive(Args)]
struct Common {
    /// Run file, or a system file used as is.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dra: Option<PathBuf>,
    /// Automaton of the negated specification, used with `--objective min`.
    #[arg(long)]
    dra_complement: Option<PathBuf>,
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
    #[arg(long, value_enum)]
    pipeline: Option<PipelineArg>,
    #[arg(long)]
    eps_thr: Option<f64>,
    #[arg(long)]
    score_frac: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Run {
    cfg: RunConfig,
    system: SystemModel,
    out: PathBuf,
}

impl Common {
    fn load(&self) -> anyhow::Result<Run> {
        let mut cfg = RunConfig::default();
        let mut system = None;
        if let Some(path) = &self.config {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(imcsynth::Error::from)?;
            if value.get("dynamics").is_some() {
                system = Some(SystemModel::from_json(&text)?);
            } else {
                cfg = RunConfig::from_file(path)?;
            }
        }
        if let Some(p) = &self.dra {
            cfg.dra = Some(p.clone());
        }
        if let Some(p) = &self.dra_complement {
            cfg.dra_complement = Some(p.clone());
        }
        if let Some(o) = self.objective {
            cfg.objective = match o {
                ObjectiveArg::Max => Objective::Maximize,
                ObjectiveArg::Min => Objective::Minimize,
            };
        }
        if let Some(p) = self.pipeline {
            cfg.pipeline = match p {
                PipelineArg::Finite => Pipeline::Finite,
                PipelineArg::Continuous => Pipeline::Continuous,
            };
        }
        cfg.eps_thr = self.eps_thr.unwrap_or(cfg.eps_thr);
        cfg.score_frac = self.score_frac.or(cfg.score_frac);
        cfg.max_iters = self.max_iters.unwrap_or(cfg.max_iters);
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        cfg.validate()?;
        let system = match system {
            Some(s) => s,
            None => {
                let path = cfg
                    .system
                    .as_ref()
                    .ok_or_else(|| anyhow!("no system given; pass --config"))?;
                SystemModel::from_file(path)?
            }
        };
        let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Run { cfg, system, out })
    }
}

impl Run {
    fn automaton(&self) -> anyhow::Result<RabinAutomaton> {
        let path = self
            .cfg
            .automaton_path()
            .ok_or_else(|| anyhow!("no automaton given; pass --dra"))?;
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(RabinAutomaton::parse(&text)?)
    }

    fn create(&self, name: &str) -> anyhow::Result<BufWriter<File>> {
        let path = self.out.join(name);
        Ok(BufWriter::new(
            File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        ))
    }

    fn load_result(&self, path: Option<&PathBuf>) -> anyhow::Result<SynthesisResult> {
        let path = path
            .cloned()
            .unwrap_or_else(|| self.out.join("result.json"));
        let text =
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text).map_err(imcsynth::Error::from)?)
    }
}

fn abstract_cmd(run: &Run) -> anyhow::Result<()> {
    let partition = run.system.initial_partition();
    let inputs = if run.system.modes.is_empty() {
        let b = run
            .system
            .input_box
            .as_ref()
            .ok_or_else(|| anyhow!("system has neither modes nor an input box"))?;
        vec![b.center()]
    } else {
        run.system.modes.clone()
    };
    let abs = build_bmdp(&partition, &run.system, &inputs)?;
    fs::write(run.out.join("bmdp.json"), abs.bmdp.to_json()?)?;
    partition.write_csv(run.create("partition.csv")?)?;
    println!(
        "{}",
        json!({ "cells": partition.len(), "actions": inputs.len(), "out": run.out })
    );
    Ok(())
}

fn write_history(result: &SynthesisResult, w: impl std::io::Write) -> anyhow::Result<()> {
    // timing lives in result.json so that the CSV stays reproducible
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "iteration",
        "n_cells",
        "n_product_states",
        "eps_max",
        "mean_eps",
        "frac_above",
        "mean_actions",
        "mean_remaining",
        "n_winning",
        "n_split",
        "converged",
    ])?;
    let last = result.history.len().saturating_sub(1);
    for (k, h) in result.history.iter().enumerate() {
        out.write_record([
            h.iteration.to_string(),
            h.n_cells.to_string(),
            h.n_product_states.to_string(),
            h.eps_max.to_string(),
            h.mean_eps.to_string(),
            h.frac_above.to_string(),
            h.mean_actions.to_string(),
            h.mean_remaining.to_string(),
            h.n_winning.to_string(),
            h.n_split.to_string(),
            (k == last && result.converged).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn synthesize_cmd(run: &Run) -> anyhow::Result<()> {
    let dra = run.automaton()?;
    let result = match run.cfg.pipeline {
        Pipeline::Finite => synthesize_finite(&run.system, &dra, &run.cfg.finite())?,
        Pipeline::Continuous => {
            let c = synthesize_continuous(&run.system, &dra, &run.cfg.continuous())?;
            c.write_regions_csv(run.create("regions.csv")?)?;
            c.result
        }
    };
    fs::write(
        run.out.join("run.json"),
        serde_json::to_string_pretty(&run.cfg)?,
    )?;
    fs::write(run.out.join("result.json"), serde_json::to_string(&result)?)?;
    result.write_policy_csv(run.create("policy.csv")?)?;
    result.partition.write_csv(run.create("partition.csv")?)?;
    write_history(&result, run.create("history.csv")?)?;
    write_verdicts_csv(&result, 0.8, run.create("verdicts.csv")?)?;
    println!(
        "{}",
        json!({
            "cells": result.partition.len(),
            "iterations": result.history.len(),
            "eps_max": result.eps_max(),
            "converged": result.converged,
            "winning": result.winning.len(),
            "out": run.out,
        })
    );
    Ok(())
}

fn simulate_cmd(
    run: &Run,
    result: Option<&PathBuf>,
    horizon: Option<usize>,
    runs: Option<usize>,
    cells: usize,
) -> anyhow::Result<()> {
    let dra = run.automaton()?;
    let res = run.load_result(result)?;
    let n = res.partition.len();
    let k = cells.clamp(1, n);
    let picked: Vec<usize> = (0..k).map(|i| i * n / k).collect();
    let out = simulate_closed_loop(
        &run.system,
        &res,
        &dra,
        &picked,
        horizon.unwrap_or(run.cfg.horizon),
        runs.unwrap_or(run.cfg.runs),
        run.cfg.seed,
    )?;
    out.write_csv(run.create("simulation.csv")?)?;
    let below = out
        .cells
        .iter()
        .filter(|c| c.frequency < c.p_lo - 0.02)
        .count();
    println!(
        "{}",
        json!({ "cells": out.cells.len(), "below_lower_bound": below, "out": run.out })
    );
    Ok(())
}

fn export_plots_cmd(run: &Run, result: Option<&PathBuf>, threshold: f64) -> anyhow::Result<()> {
    let res = run.load_result(result)?;
    let dim = res.partition.domain.dim();
    let mut map = csv::Writer::from_writer(run.create("partition_map.csv")?);
    let mut header = vec!["cell_id".to_string(), "dra_state".to_string()];
    header.extend((0..dim).map(|k| format!("lo_{k}")));
    header.extend((0..dim).map(|k| format!("hi_{k}")));
    header.extend(["p_min", "p_max", "epsilon", "action"].map(String::from));
    map.write_record(&header)?;
    for (q, &(lo, hi)) in res.bounds.bounds.iter().enumerate() {
        let c = &res.partition.cells[q / res.n_dra];
        let mut rec = vec![(q / res.n_dra).to_string(), (q % res.n_dra).to_string()];
        rec.extend(c.lo.iter().chain(&c.hi).map(|x| x.to_string()));
        rec.extend([
            lo.to_string(),
            hi.to_string(),
            res.report.states[q].epsilon.to_string(),
            res.policy[q].to_string(),
        ]);
        map.write_record(&rec)?;
    }
    map.flush()?;
    write_verdicts_csv(&res, threshold, run.create("verdicts.csv")?)?;
    let mut eps = csv::Writer::from_writer(run.create("eps_curve.csv")?);
    let mut actions = csv::Writer::from_writer(run.create("actions.csv")?);
    let mut time = csv::Writer::from_writer(run.create("time.csv")?);
    eps.write_record(["iteration", "n_cells", "eps_max", "mean_eps", "frac_above"])?;
    actions.write_record(["iteration", "mean_actions", "mean_remaining"])?;
    time.write_record(["iteration", "wall_seconds", "cumulative_seconds"])?;
    let mut total = 0.0;
    for h in &res.history {
        total += h.wall_seconds;
        let i = h.iteration.to_string();
        eps.write_record([
            i.clone(),
            h.n_cells.to_string(),
            h.eps_max.to_string(),
            h.mean_eps.to_string(),
            h.frac_above.to_string(),
        ])?;
        actions.write_record([
            i.clone(),
            h.mean_actions.to_string(),
            h.mean_remaining.to_string(),
        ])?;
        time.write_record([i, h.wall_seconds.to_string(), total.to_string()])?;
    }
    eps.flush()?;
    actions.flush()?;
    time.flush()?;
    println!(
        "{}",
        json!({ "iterations": res.history.len(), "out": run.out })
    );
    Ok(())
}

fn validate_model_cmd(run: &Run, samples: usize, draws: usize) -> anyhow::Result<bool> {
    let partition = run.system.initial_partition();
    let inputs = if run.system.modes.is_empty() {
        let b = run
            .system
            .input_box
            .as_ref()
            .ok_or_else(|| anyhow!("system has neither modes nor an input box"))?;
        b.corners()
    } else {
        run.system.modes.clone()
    };
    let abs = build_bmdp(&partition, &run.system, &inputs)?;
    let report = validate_bmdp(&abs.bmdp);
    let checks = sampled_soundness(
        &run.system,
        &partition,
        &inputs,
        samples,
        draws,
        run.cfg.seed,
    )?;
    let tol = 0.01;
    let failures = checks.iter().filter(|c| c.excess() > tol).count();
    let worst = checks.iter().map(|c| c.excess()).fold(0.0, f64::max);
    let ok = report.is_ok() && failures == 0;
    println!(
        "{}",
        json!({
            "ok": ok,
            "row_violations": report.violations.len(),
            "checked_entries": checks.len(),
            "tolerance": tol,
            "soundness_failures": failures,
            "worst_excess": worst,
        })
    );
    Ok(ok)
}

fn execute(cli: Cli) -> anyhow::Result<bool> {
    match &cli.command {
        Command::Abstract(c) => abstract_cmd(&c.load()?).map(|_| true),
        Command::Synthesize(c) => synthesize_cmd(&c.load()?).map(|_| true),
        Command::Simulate {
            common,
            result,
            horizon,
            runs,
            cells,
        } => simulate_cmd(&common.load()?, result.as_ref(), *horizon, *runs, *cells).map(|_| true),
        Command::ExportPlots {
            common,
            result,
            threshold,
        } => export_plots_cmd(&common.load()?, result.as_ref(), *threshold).map(|_| true),
        Command::ValidateModel {
            common,
            samples,
            draws,
        } => validate_model_cmd(&common.load()?, *samples, *draws),
    }
}

fn error_record(err: &anyhow::Error) -> serde_json::Value {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<imcsynth::Error>())
        .map(|e| e.kind())
        .or_else(|| {
            err.chain()
                .find_map(|e| e.downcast_ref::<std::io::Error>())
                .map(|_| "io")
        })
        .unwrap_or("other");
    json!({ "error": { "kind": kind, "message": format!("{err:#}") } })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!(
                "{}",
                json!({ "error": { "kind": "model-check-failed", "message": "abstraction failed validation" } })
            );
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::FAILURE
        }
    }
}
