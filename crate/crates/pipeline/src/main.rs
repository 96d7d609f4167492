use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use enteroseg::{Error, Pipeline, PipelineConfig, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "enteroseg", version, about = "Two-stage coarse-to-fine GI organ segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Pipeline config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root of the artifact tree.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Fold index; stages that take one run every fold when omitted.
    #[arg(long, global = true)]
    fold: Option<usize>,
    /// Restrict ROI extraction or organ training to one class.
    #[arg(long = "class", global = true)]
    class: Option<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write seeded synthetic NIfTI phantoms.
    Phantom,
    /// Convert NIfTI pairs into PNG slice and mask trees.
    Convert,
    /// Write the patient-wise fold plan.
    Split,
    /// Train the multiclass model.
    TrainCoarse,
    /// Write stage-1 label masks for every patient.
    PredictCoarse,
    /// Cut per-class ROIs.
    ExtractRoi,
    /// Train the per-class binary models.
    TrainOrgan,
    /// Score both stages on the fold's test patients.
    Evaluate,
    /// Render the stage comparison across evaluated folds.
    Report,
    /// Every stage in order.
    Run,
}

fn folds(p: &Pipeline, fold: Option<usize>) -> Result<Vec<usize>> {
    let plan = p.fold_plan()?;
    match fold {
        Some(f) if f >= plan.k => Err(Error::Invalid(format!("fold {f} does not exist; the plan has folds 0..{}", plan.k))),
        Some(f) => Ok(vec![f]),
        None => Ok((0..plan.k).collect()),
    }
}

fn run(cli: &Cli) -> Result<serde_json::Value> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config <file> is required".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(c) = &cli.class {
        cfg.class_label(c)?;
    }
    let p = Pipeline::new(cfg, cli.out.clone());
    let class = cli.class.as_deref();
    let per_fold = |f: &dyn Fn(usize) -> Result<serde_json::Value>| -> Result<serde_json::Value> {
        let mut out = Vec::new();
        for fold in folds(&p, cli.fold)? {
            out.push(json!({ "fold": fold, "result": f(fold)? }));
        }
        Ok(json!(out))
    };
    let value = match cli.command {
        Command::Phantom => {
            let (stats, changed) = p.phantom()?;
            json!({ "patients": stats.patients.len(), "changed_files": changed })
        }
        Command::Convert => serde_json::to_value(p.convert()?).map_err(enteroseg::error::json_err)?,
        Command::Split => {
            let plan = p.split()?;
            json!({ "k": plan.k, "seed": plan.seed })
        }
        Command::TrainCoarse => per_fold(&|f| {
            let s = p.train_coarse(f)?;
            Ok(json!({ "best_epoch": s.log.best_epoch, "best_val_loss": s.log.best_val_loss, "stop_reason": s.log.stop_reason }))
        })?,
        Command::PredictCoarse => per_fold(&|f| p.predict_coarse(f).map(|_| json!("ok")))?,
        Command::ExtractRoi => per_fold(&|f| {
            let rms = p.extract_roi(f, class)?;
            Ok(json!(rms.iter().map(|r| &r.class).collect::<Vec<_>>()))
        })?,
        Command::TrainOrgan => per_fold(&|f| {
            let out = p.train_organ(f, class)?;
            Ok(json!(out
                .iter()
                .map(|(c, s)| json!({ "class": c, "best_epoch": s.log.best_epoch, "best_val_loss": s.log.best_val_loss }))
                .collect::<Vec<_>>()))
        })?,
        Command::Evaluate => per_fold(&|f| {
            let ev = p.evaluate(f)?;
            Ok(json!({ "stage1_mdsc": ev.stage1.mdsc, "stage2_mdsc": ev.stage2.mdsc }))
        })?,
        Command::Report => {
            let r = p.report()?;
            print!("{}", r.table);
            json!({ "folds": r.folds, "stage1_mdsc": r.stage1.mdsc, "stage2_mdsc": r.stage2.mdsc })
        }
        Command::Run => {
            let folds = cli.fold.map(|f| vec![f]);
            let r = p.run_all(folds.as_deref())?;
            print!("{}", r.table);
            json!({ "folds": r.folds, "stage1_mdsc": r.stage1.mdsc, "stage2_mdsc": r.stage2.mdsc })
        }
    };
    Ok(value)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
