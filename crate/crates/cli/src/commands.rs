//! Subcommand bodies. Each writes its outputs under `output.dir` and returns the files it wrote.

use std::path::{Path, PathBuf};

use nbdebias::data::{load_dense, load_tsv, Dataset, TsvSchema};
use nbdebias::error::{Error, Result};
use nbdebias::experiment::estimate_table;
use nbdebias::learning::{curve_csv, FactorModel};
use nbdebias::pipeline::{self, metrics_csv};
use nbdebias::synth::{build_world, synthetic_coat, synthetic_source, SemiSynthWorld};
use nbdebias::textfmt::KvDoc;
use nbdebias::verify::{sweep_bandwidth, verify_bias_variance};

use crate::config::RunConfig;

fn write(path: &Path, contents: &str) -> Result<PathBuf> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Output CSV with the config hash comment prepended.
fn write_csv(cfg: &RunConfig, path: &Path, body: &str) -> Result<PathBuf> {
    write(path, &format!("{}{body}", cfg.comment()))
}

fn write_resolved(cfg: &RunConfig, dir: &Path) -> Result<PathBuf> {
    write(
        &dir.join("config.resolved"),
        &format!("{}{}", cfg.comment(), cfg.render()),
    )
}

/// Logged ratings from `data.train` with uniform ratings from `data.test` attached when given.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let train = cfg
        .existing_path("data.train")?
        .ok_or_else(|| Error::Config("data.train is not set".into()))?;
    let test = cfg.existing_path("data.test")?;
    match cfg.get("data.format") {
        "tsv" => {
            let mut ds = load_tsv(&train)?;
            if let Some(t) = test {
                ds.attach_mar(&t, TsvSchema::default())?;
            }
            Ok(ds)
        }
        "dense" => {
            let mut ds = load_dense(&train)?;
            if let Some(t) = test {
                ds.attach_mar_dense(&t)?;
            }
            Ok(ds)
        }
        other => Err(Error::Config(format!("unknown data.format {other:?}"))),
    }
}

pub fn synth(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let out = cfg.out_dir();
    match cfg.get("synth.format") {
        "world" => {
            let source = match cfg.get("source.kind") {
                "synthetic" => synthetic_source(&cfg.source()?)?,
                "file" => load_dataset(cfg)?,
                other => return Err(Error::Config(format!("unknown source.kind {other:?}"))),
            };
            let sc = cfg.semisynth()?;
            sc.validate(source.n_users, source.n_items)?;
            let world = build_world(&source, &sc)?;
            let dir = cfg.world_dir();
            ensure_dir(&dir)?;
            world.write_dir(&dir)?;
            let mut files: Vec<PathBuf> = SemiSynthWorld::FILES.iter().map(|f| dir.join(f)).collect();
            files.push(dir.join("manifest.txt"));
            files.push(write_resolved(cfg, &dir)?);
            Ok(files)
        }
        "coat" => {
            let ds = synthetic_coat(&cfg.coat()?)?;
            ensure_dir(&out)?;
            let train = out.join("train.tsv");
            let test = out.join("test.tsv");
            ds.write_tsv(&train)?;
            let uniform = Dataset {
                mnar: ds.mar.clone().unwrap_or_default(),
                mar: None,
                ..ds.clone()
            };
            uniform.write_tsv(&test)?;
            Ok(vec![
                train.clone(),
                nbdebias::data::manifest_path(&train),
                test.clone(),
                nbdebias::data::manifest_path(&test),
                write_resolved(cfg, &out)?,
            ])
        }
        other => Err(Error::Config(format!("unknown synth.format {other:?}"))),
    }
}

pub fn estimate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let ecfg = cfg.estimate()?;
    let dir = cfg.world_dir();
    if !dir.join("manifest.txt").exists() {
        return Err(Error::Config(format!(
            "no world at {}; run `synth` first",
            dir.display()
        )));
    }
    let world = SemiSynthWorld::read_dir(&dir)?;
    let table = estimate_table(&world, &ecfg)?;
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    Ok(vec![
        write_csv(cfg, &out.join("estimate.csv"), &table.to_csv())?,
        write_csv(cfg, &out.join("estimate_table.csv"), &table.to_wide_csv())?,
    ])
}

fn checkpoint(model: &FactorModel, cfg: &RunConfig) -> KvDoc {
    let mut doc = model.to_doc();
    doc.set("config_hash", cfg.hash());
    doc
}

pub fn train(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let pcfg = cfg.pipeline()?;
    let ds = load_dataset(cfg)?;
    let run = pipeline::run(&ds, &pcfg)?;
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    let mut files = Vec::new();
    let model_path = out.join("model.kv");
    checkpoint(&run.model, cfg).write(&model_path)?;
    files.push(model_path);
    if let Some(imp) = &run.outcome.imputation {
        let p = out.join("imputation.kv");
        imp.to_doc().write(&p)?;
        files.push(p);
    }
    for (name, doc) in &run.artifacts {
        let p = out.join(name);
        doc.write(&p)?;
        files.push(p);
    }
    files.push(write_csv(cfg, &out.join("curve.csv"), &curve_csv(&run.outcome.curve))?);
    files.push(write_csv(
        cfg,
        &out.join("metrics.csv"),
        &metrics_csv(&run.metrics, &format!("method={}", pcfg.method.name())),
    )?);
    files.push(write_resolved(cfg, &out)?);
    Ok(files)
}

/// Scores a checkpoint, or a random initialization with `eval.init=random`, on the held-out split.
pub fn eval(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let pcfg = cfg.pipeline()?;
    let ds = load_dataset(cfg)?;
    let splits = pipeline::split_dataset(&ds, &pcfg)?;
    let out = cfg.out_dir();
    let (model, label) = match cfg.get("eval.init") {
        "checkpoint" => {
            let path = cfg.path("eval.model").unwrap_or_else(|| out.join("model.kv"));
            if !path.exists() {
                return Err(Error::Config(format!("checkpoint {} does not exist", path.display())));
            }
            (FactorModel::from_doc(&KvDoc::read(&path)?)?, "checkpoint")
        }
        "random" => {
            let t = &pcfg.train;
            let model = FactorModel::random(ds.n_users, ds.n_items, t.dim, pcfg.binarize, t.init_std, pcfg.seed)?;
            (model, "random")
        }
        other => return Err(Error::Config(format!("unknown eval.init {other:?}"))),
    };
    let metrics = pipeline::evaluate(&model, &splits, pcfg.k)?;
    ensure_dir(&out)?;
    let name = if label == "random" {
        "eval_random.csv"
    } else {
        "eval.csv"
    };
    Ok(vec![write_csv(
        cfg,
        &out.join(name),
        &metrics_csv(&metrics, &format!("model={label}")),
    )?])
}

pub fn verify(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let spec = cfg.reference()?;
    let grid = cfg.grid("verify.grid")?;
    let reps = cfg.usize("verify.replications")?;
    let seed = cfg.seed()?;
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    let mut files = Vec::new();
    for est in cfg.estimators("verify.estimators")? {
        let report = verify_bias_variance(&spec, est, &grid, reps, seed)?;
        let path = out.join(format!("bias_variance_{}.csv", est.slug()));
        files.push(write_csv(cfg, &path, &report.to_csv())?);
    }
    Ok(files)
}

pub fn sweep(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let spec = cfg.reference()?;
    let grid = cfg.grid("sweep.grid")?;
    let reps = cfg.usize("verify.replications")?;
    let seed = cfg.seed()?;
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    let mut files = Vec::new();
    for est in cfg.estimators("sweep.estimator")? {
        let sweep = sweep_bandwidth(&spec, est, &grid, reps, seed)?;
        let path = out.join(format!("sweep_bandwidth_{}.csv", est.slug()));
        files.push(write_csv(cfg, &path, &sweep.to_csv())?);
    }
    Ok(files)
}
