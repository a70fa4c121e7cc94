use std::path::{Path, PathBuf};

use entseg::data::{nifti_write, NiftiMeta, Split};
use entseg::losses::RegKind;
use entseg::model::{evaluate_set, forward, select_lambda, train, Checkpoint, GridPoint, TrainHistory};
use entseg::rng::derive_seed;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Paths, Strategy};
use crate::dataset::{self, load_manifest, load_split, seed_label, training_pairs};
use crate::error::{CliError, Result};
use crate::evaluate::{evaluate_scans, summarize, Aggregate, RunInfo, REPORT_SCHEMA_VERSION};
use crate::report::{self, create_dir, write_json, write_text};

pub const CONFIG_FILE: &str = "config.json";
pub const GRID_FILE: &str = "grid.json";

/// Resolved experiment configuration and output locations.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub paths: Paths,
}

impl Context {
    pub fn new(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<Self> {
        let cfg = ExperimentConfig::resolve(config, seed)?;
        cfg.validate()?;
        let paths = cfg.paths.under(out);
        Ok(Self {
            cfg,
            out: out.to_path_buf(),
            paths,
        })
    }

    pub fn checkpoint_path(&self, s: Strategy) -> PathBuf {
        self.paths.checkpoints.join(format!("{}.ckpt", s.slug()))
    }

    pub fn report_dir(&self, s: Strategy) -> PathBuf {
        self.paths.reports.join(s.slug())
    }
}

/// Writes the dataset and the resolved configuration.
pub fn cmd_synth(ctx: &Context) -> Result<entseg::data::DatasetManifest> {
    create_dir(&ctx.out)?;
    write_json(&ctx.out.join(CONFIG_FILE), &ctx.cfg)?;
    dataset::write_dataset(&ctx.cfg, &ctx.paths.data)
}

/// Per-λ training outcome recorded in `grid.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    #[serde(flatten)]
    pub point: GridPoint,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub schema_version: u32,
    pub strategy: Strategy,
    pub seed: u64,
    pub config_hash: String,
    pub dice_tolerance: f64,
    pub selected_lambda: f64,
    pub selected_index: usize,
    pub entries: Vec<GridEntry>,
}

impl GridReport {
    pub fn selected(&self) -> &GridEntry {
        &self.entries[self.selected_index]
    }
}

pub fn history_csv(h: &TrainHistory) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("epoch,train_loss,val_dice,val_mean_fg_entropy\n");
    for r in &h.epochs {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch,
            r.train_loss,
            opt(r.val_dice),
            opt(r.val_mean_fg_entropy)
        ));
    }
    s
}

fn lambda_tag(l: f64) -> String {
    format!("{l}").replace('.', "p")
}

/// Trains `strategy` at `lambda`, or over its configured grid when `lambda` is
/// `None`, and keeps the selected model.
pub fn cmd_train(ctx: &Context, strategy: Strategy, lambda: Option<f64>) -> Result<GridReport> {
    let cfg = &ctx.cfg;
    let grid: Vec<f64> = if !strategy.is_regularized() {
        vec![0.0]
    } else if let Some(l) = lambda {
        if !(l.is_finite() && l >= 0.0) {
            return Err(CliError::Usage(format!("--lambda must be a non-negative number, got {l}")));
        }
        vec![l]
    } else {
        cfg.strategy(strategy)
            .ok_or_else(|| CliError::Usage(format!("no lambda grid configured for {strategy}; pass --lambda")))?
            .lambda_grid
            .clone()
    };

    let data_dir = &ctx.paths.data;
    let manifest = load_manifest(data_dir)?;
    if manifest.config_hash != dataset::dataset_hash(cfg)? {
        eprintln!("warning: dataset in {} was generated from a different configuration", data_dir.display());
    }
    let train_set = training_pairs(&load_split(data_dir, &manifest, Split::Train)?)?;
    let val_set = training_pairs(&load_split(data_dir, &manifest, Split::Val)?)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(CliError::Usage(format!("{}: train and val splits must be nonempty", data_dir.display())));
    }

    let mut base = cfg.train;
    base.seed = derive_seed(cfg.seed, seed_label::TRAIN);
    let report_dir = ctx.report_dir(strategy);
    let mut entries = Vec::new();
    let mut models = Vec::new();
    for &l in &grid {
        let tc = strategy.train_config(&base, l);
        let (params, history) = match train(&train_set, &val_set, &tc) {
            Ok(r) => r,
            Err(entseg::Error::Diverged { epoch, loss, history }) => {
                write_text(&report_dir.join(format!("history_lambda_{}.csv", lambda_tag(l))), &history_csv(&history))?;
                return Err(CliError::Diverged {
                    strategy: strategy.name().into(),
                    lambda: l,
                    epoch,
                    loss,
                });
            }
            Err(e) => return Err(e.into()),
        };
        let e = evaluate_set(&params, &val_set)?;
        write_text(&report_dir.join(format!("history_lambda_{}.csv", lambda_tag(l))), &history_csv(&history))?;
        entries.push(GridEntry {
            point: GridPoint {
                lambda: l,
                val_dice: e.mean_dice,
                val_ece: e.ece,
                val_mean_fg_entropy: e.mean_fg_entropy,
            },
            final_train_loss: history.last().map_or(f64::NAN, |r| r.train_loss),
        });
        models.push((tc, params, history));
    }
    let points: Vec<GridPoint> = entries.iter().map(|e| e.point.clone()).collect();
    let selected_index = select_lambda(&points, cfg.dice_tolerance).expect("grid is nonempty");
    let (tc, params, history) = models.swap_remove(selected_index);

    create_dir(&ctx.paths.checkpoints)?;
    let ckpt = ctx.checkpoint_path(strategy);
    Checkpoint::new(tc, params).save(&ckpt).map_err(|e| match e {
        entseg::Error::Io(source) => CliError::Io { path: ckpt.clone(), source },
        e => e.into(),
    })?;
    write_text(
        &ctx.paths.checkpoints.join(format!("{}_history.csv", strategy.slug())),
        &history_csv(&history),
    )?;
    let report = GridReport {
        schema_version: REPORT_SCHEMA_VERSION,
        strategy,
        seed: cfg.seed,
        config_hash: manifest.config_hash,
        dice_tolerance: cfg.dice_tolerance,
        selected_lambda: grid[selected_index],
        selected_index,
        entries,
    };
    write_json(&report_dir.join(GRID_FILE), &report)?;
    Ok(report)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint<f64>> {
    Checkpoint::load(path).map_err(|e| match e {
        entseg::Error::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        e => e.into(),
    })
}

/// Strategy a checkpoint was trained with, recovered from its loss settings.
pub fn checkpoint_strategy(c: &Checkpoint<f64>) -> Strategy {
    match c.config.loss.reg_kind {
        RegKind::None => Strategy::Ce,
        RegKind::MeAll => Strategy::CeMeall,
        RegKind::Meep => Strategy::CeMeep,
        RegKind::Kl => Strategy::CeKl,
    }
}

/// Writes probability maps for every scan of `split`.
pub fn cmd_predict(ctx: &Context, checkpoint: &Path, split: Split) -> Result<Vec<PathBuf>> {
    let ckpt = load_checkpoint(checkpoint)?;
    let strategy = checkpoint_strategy(&ckpt);
    let manifest = load_manifest(&ctx.paths.data)?;
    let dir = ctx.paths.predictions.join(strategy.slug());
    create_dir(&dir)?;
    let mut written = Vec::new();
    for scan in load_split(&ctx.paths.data, &manifest, split)? {
        let y = forward(&ckpt.params, &scan.input()?)?;
        let path = dir.join(format!("{}_prob.nii", scan.id));
        let bytes = nifti_write(y.volume(), &NiftiMeta::for_geometry(y.geometry()))?;
        std::fs::write(&path, bytes).map_err(CliError::io(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// Evaluates a checkpoint on the ID and OOD test splits and writes its reports.
pub fn cmd_eval(ctx: &Context, checkpoint: &Path) -> Result<Aggregate> {
    let ckpt = load_checkpoint(checkpoint)?;
    let strategy = checkpoint_strategy(&ckpt);
    let manifest = load_manifest(&ctx.paths.data)?;
    let s = &ctx.cfg.eval;
    let id = evaluate_scans(&ckpt.params, &load_split(&ctx.paths.data, &manifest, Split::Test)?, s)?;
    let ood = evaluate_scans(&ckpt.params, &load_split(&ctx.paths.data, &manifest, Split::OodTest)?, s)?;
    let info = RunInfo {
        strategy: strategy.name(),
        lambda: ckpt.config.loss.lambda,
        seed: manifest.seed,
        config_hash: &manifest.config_hash,
    };
    let ev = summarize(&info, &id, &ood, s)?;
    report::write_eval_outputs(&ctx.report_dir(strategy), &ev.aggregate, &ev.reports)?;
    Ok(ev.aggregate)
}

/// Combines evaluation outputs into comparison tables under the reports directory.
pub fn cmd_report(ctx: &Context, inputs: &[PathBuf]) -> Result<report::Comparison> {
    if inputs.is_empty() {
        return Err(CliError::Usage("report needs at least one evaluation output".into()));
    }
    let aggs = inputs
        .iter()
        .map(|p| report::load_aggregate(p).map(|(_, a)| a))
        .collect::<Result<Vec<_>>>()?;
    let c = report::compare(&aggs);
    report::write_comparison(&ctx.paths.reports, &c)?;
    Ok(c)
}

pub struct StrategyRun {
    pub strategy: Strategy,
    pub grid: GridReport,
    pub aggregate: Aggregate,
}

pub struct RunSummary {
    pub runs: Vec<StrategyRun>,
    pub comparison: report::Comparison,
}

/// Full pipeline: generate data, grid-search and train every configured
/// strategy, evaluate each selected model and write the comparison tables.
pub fn cmd_run(ctx: &Context) -> Result<RunSummary> {
    cmd_synth(ctx)?;
    let mut runs = Vec::new();
    for sc in &ctx.cfg.strategies {
        let grid = cmd_train(ctx, sc.name, None)?;
        let aggregate = cmd_eval(ctx, &ctx.checkpoint_path(sc.name))?;
        runs.push(StrategyRun {
            strategy: sc.name,
            grid,
            aggregate,
        });
    }
    let inputs: Vec<PathBuf> = runs.iter().map(|r| ctx.report_dir(r.strategy)).collect();
    let comparison = cmd_report(ctx, &inputs)?;
    Ok(RunSummary { runs, comparison })
}
