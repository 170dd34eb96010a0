use std::io::Write;

use adrmx_core::data::{DomainDataset, MultiDomainTask};
use adrmx_core::eval::{accuracy, export_embeddings, run_ablations, write_embeddings_csv, write_table_csv};
use adrmx_core::model::{AdrmxParams, Checkpoint};
use adrmx_core::training::{mean_accuracy, random_search, train_on_sources, RunRecord, RunStatus, SourceSplits};
use adrmx_core::Error;
use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::{CliConfig, SplitChoice};
use crate::error::usage;
use crate::output::RunDir;

pub struct Ctx {
    pub config: CliConfig,
    pub out: std::path::PathBuf,
    pub workers: usize,
}

fn open_run(ctx: &Ctx, command: &str) -> Result<RunDir> {
    let mut run = RunDir::create(&ctx.out, command)?;
    run.write_text("config.toml", &toml::to_string(&ctx.config)?)?;
    Ok(run)
}

/// `RunRecord` plus the facts that vary between identical runs or need the
/// target domain.
#[derive(Serialize)]
struct TrainReport<'a> {
    #[serde(flatten)]
    record: &'a RunRecord,
    wall_clock_secs: f64,
    target_domain: Option<String>,
    target_acc: Option<f64>,
}

pub fn train(ctx: &Ctx) -> Result<()> {
    let task = ctx.config.task()?;
    let cfg = ctx.config.train_config();
    let mut run = open_run(ctx, "train")?;

    let mut metrics = run.writer("metrics.jsonl")?;
    let mut write_err = None;
    let sources: Vec<&DomainDataset> = task.sources().collect();
    let mut out = train_on_sources(&sources, &cfg, &mut |m| {
        if write_err.is_none() {
            if let Err(e) = serde_json::to_writer(&mut metrics, m)
                .map_err(anyhow::Error::from)
                .and_then(|_| {
                    writeln!(metrics)?;
                    Ok(())
                })
            {
                write_err = Some(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.context("writing metrics.jsonl"));
    }
    metrics.flush()?;

    if let Some(best) = &out.state.best {
        let path = run.file("best.ckpt")?;
        best.params.to_checkpoint()?.save(&path)?;
        out.record.best_checkpoint = Some("best.ckpt".into());
    }
    let state_path = run.file("state.ckpt")?;
    out.state.to_checkpoint()?.save(&state_path)?;

    let (target_domain, target_acc) = match (task.target(), &out.state.best) {
        (Some(t), Some(_)) => {
            let p = out.state.selected_params();
            (Some(t.name.clone()), Some(accuracy(&p.predict(&t.inputs)?, &t.labels)?))
        }
        (t, _) => (t.map(|d| d.name.clone()), None),
    };
    run.write_json(
        "run_record.json",
        &TrainReport {
            record: &out.record,
            wall_clock_secs: out.wall_clock.as_secs_f64(),
            target_domain: target_domain.clone(),
            target_acc,
        },
    )?;
    let dir = run.finish()?;

    println!("run directory: {}", dir.display());
    if let (Some(step), Some(acc)) = (out.record.best_step, out.record.best_val_acc) {
        println!("best source-validation accuracy {acc:.4} at step {step}");
    }
    if let (Some(name), Some(acc)) = (target_domain, target_acc) {
        println!("held-out domain {name}: accuracy {acc:.4}");
    }
    match out.record.status {
        RunStatus::Completed => Ok(()),
        RunStatus::Diverged { step, message } => Err(Error::Divergence(format!("step {step}: {message}")).into()),
    }
}

fn load_params(ctx: &Ctx, task: &MultiDomainTask) -> Result<(AdrmxParams, std::path::PathBuf)> {
    let path = ctx
        .config
        .checkpoint
        .clone()
        .ok_or_else(|| usage("checkpoint: required for this command"))?;
    if !path.exists() {
        return Err(usage(format!("checkpoint: file {} does not exist", path.display())).into());
    }
    let ck = Checkpoint::load(&path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let params = AdrmxParams::from_checkpoint(&ck).with_context(|| format!("loading {}", path.display()))?;
    let mc = params.config();
    let (d_in, classes) = (task.d_in(), task.num_classes());
    if mc.d_in != d_in || mc.num_classes != classes {
        return Err(usage(format!(
            "checkpoint expects inputs of shape [N, {}] with {} classes, but the dataset has shape [N, {d_in}] with {classes} classes",
            mc.d_in, mc.num_classes
        ))
        .into());
    }
    Ok((params, path))
}

#[derive(Serialize)]
struct DomainAccuracy {
    domain: String,
    split: SplitChoice,
    samples: usize,
    accuracy: f64,
}

#[derive(Serialize)]
struct EvalReport {
    checkpoint: String,
    seed: u64,
    holdout_fraction: f64,
    /// Mean over source domains of validation accuracy, computed exactly as
    /// during model selection.
    mean_source_val: f64,
    mean_source_train: f64,
    target_acc: Option<f64>,
    per_domain: Vec<DomainAccuracy>,
}

pub fn eval(ctx: &Ctx) -> Result<()> {
    let task = ctx.config.task()?;
    let (params, path) = load_params(ctx, &task)?;
    let sources: Vec<&DomainDataset> = task.sources().collect();
    let splits = SourceSplits::new(&sources, ctx.config.holdout_fraction, ctx.config.seed)?;
    let (mean_val, val_each) = mean_accuracy(&params, &splits.val)?;
    let (mean_train, train_each) = mean_accuracy(&params, &splits.train)?;

    let mut per_domain = Vec::new();
    for (k, src) in sources.iter().enumerate() {
        per_domain.push(DomainAccuracy {
            domain: src.name.clone(),
            split: SplitChoice::Train,
            samples: splits.train[k].len(),
            accuracy: train_each[k],
        });
        per_domain.push(DomainAccuracy {
            domain: src.name.clone(),
            split: SplitChoice::Val,
            samples: splits.val[k].len(),
            accuracy: val_each[k],
        });
    }
    let target_acc = match task.target() {
        Some(t) => {
            let acc = accuracy(&params.predict(&t.inputs)?, &t.labels)?;
            per_domain.push(DomainAccuracy {
                domain: t.name.clone(),
                split: SplitChoice::Target,
                samples: t.len(),
                accuracy: acc,
            });
            Some(acc)
        }
        None => None,
    };
    let report = EvalReport {
        checkpoint: path.display().to_string(),
        seed: ctx.config.seed,
        holdout_fraction: ctx.config.holdout_fraction,
        mean_source_val: mean_val,
        mean_source_train: mean_train,
        target_acc,
        per_domain,
    };
    let mut run = open_run(ctx, "eval")?;
    run.write_json("eval.json", &report)?;
    let dir = run.finish()?;

    println!("run directory: {}", dir.display());
    for d in &report.per_domain {
        println!(
            "{:<12} {:<6} n={:<6} accuracy {:.4}",
            d.domain,
            split_name(d.split),
            d.samples,
            d.accuracy
        );
    }
    println!("mean source validation accuracy {mean_val:.4}");
    Ok(())
}

fn split_name(s: SplitChoice) -> &'static str {
    match s {
        SplitChoice::Train => "train",
        SplitChoice::Val => "val",
        SplitChoice::Target => "target",
    }
}

#[derive(Serialize)]
struct TrialSummary<'a> {
    index: usize,
    mean_val_acc: Option<f64>,
    failure: Option<&'a str>,
    lr_gen: f64,
    lambda: f64,
    temperature: f64,
    batch_per_domain: usize,
}

#[derive(Serialize)]
struct Selection<'a> {
    selected: Option<usize>,
    selected_config: Option<&'a adrmx_core::training::TrainConfig>,
    seeds: &'a [u64],
    trials: Vec<TrialSummary<'a>>,
}

pub fn sweep(ctx: &Ctx) -> Result<()> {
    let task = ctx.config.task()?;
    let sources: Vec<&DomainDataset> = task.sources().collect();
    let c = &ctx.config;
    let result = random_search(
        &sources,
        &c.train_config(),
        &c.search_space(),
        c.trials,
        &c.seeds,
        c.sweep_seed,
        ctx.workers,
    )?;

    let mut run = open_run(ctx, "sweep")?;
    for trial in &result.trials {
        for rec in &trial.records {
            run.write_json(&format!("trial-{:03}/seed-{}.json", trial.index, rec.seed), rec)?;
        }
    }
    let selection = Selection {
        selected: result.selected,
        selected_config: result.selected.map(|i| &result.trials[i].config),
        seeds: &c.seeds,
        trials: result
            .trials
            .iter()
            .map(|t| TrialSummary {
                index: t.index,
                mean_val_acc: t.mean_val_acc,
                failure: t.failure.as_deref(),
                lr_gen: t.config.lr_gen,
                lambda: t.config.model.lambda,
                temperature: t.config.model.temperature,
                batch_per_domain: t.config.batch_per_domain,
            })
            .collect(),
    };
    run.write_json("selection.json", &selection)?;
    let dir = run.finish()?;

    println!("run directory: {}", dir.display());
    for t in &selection.trials {
        match (t.mean_val_acc, t.failure) {
            (Some(a), _) => println!(
                "trial {:>3}: val {a:.4}  lr {:.2e} lambda {:.3} tau {:.3} batch {}",
                t.index, t.lr_gen, t.lambda, t.temperature, t.batch_per_domain
            ),
            (None, f) => println!("trial {:>3}: failed ({})", t.index, f.unwrap_or("unknown")),
        }
    }
    match result.selected {
        Some(i) => {
            println!("selected trial {i}");
            Ok(())
        }
        None => Err(Error::Divergence("no sweep trial completed".into()).into()),
    }
}

pub fn ablate(ctx: &Ctx) -> Result<()> {
    let task = ctx.config.task()?;
    let results = run_ablations(&task, &ctx.config.train_config(), &ctx.config.seeds, ctx.workers)?;
    let mut run = open_run(ctx, "ablate")?;
    let mut table = Vec::new();
    write_table_csv(&results, &mut table)?;
    run.write_text("ablation_table.csv", &String::from_utf8(table)?)?;
    run.write_json("ablations.json", &results)?;
    let dir = run.finish()?;

    println!("run directory: {}", dir.display());
    for r in &results {
        let flag = if r.incomplete { " (incomplete)" } else { "" };
        println!("{:<18} average {:.4} +- {:.4}{flag}", r.variant, r.mean, r.seed_std);
    }
    Ok(())
}

pub fn export(ctx: &Ctx) -> Result<()> {
    let task = ctx.config.task()?;
    let (params, _) = load_params(ctx, &task)?;
    let sources: Vec<&DomainDataset> = task.sources().collect();
    let splits = SourceSplits::new(&sources, ctx.config.holdout_fraction, ctx.config.seed)?;
    let sets: Vec<&DomainDataset> = match ctx.config.split {
        SplitChoice::Train => splits.train.iter().collect(),
        SplitChoice::Val => splits.val.iter().collect(),
        SplitChoice::Target => vec![task
            .target()
            .ok_or_else(|| usage("split: target needs target_domain to be set"))?],
    };
    let rows = export_embeddings(&params, &sets)?;
    let mut run = open_run(ctx, "export")?;
    let mut w = run.writer("embeddings.csv")?;
    write_embeddings_csv(&rows, &mut w)?;
    w.flush()?;
    let dir = run.finish()?;
    println!("run directory: {}", dir.display());
    println!(
        "{} embedding rows from {} samples",
        rows.len(),
        sets.iter().map(|s| s.len()).sum::<usize>()
    );
    Ok(())
}
