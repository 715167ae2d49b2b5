//! Layered `key=value` run configuration: built-in defaults, then a file, then `--set` overrides.

use std::path::{Path, PathBuf};

use nbdebias::error::{Error, Result};
use nbdebias::experiment::EstimateConfig;
use nbdebias::kernels::{KernelFamily, KernelSpec};
use nbdebias::learning::{ImputationForm, TrainConfig};
use nbdebias::loss::LossSpec;
use nbdebias::neighborhood::{NeighborhoodMode, RepDistribution};
use nbdebias::pipeline::{BasePropensity, Method, PipelineConfig, RepChoice};
use nbdebias::propensity::{DensityRatioConfig, LogisticConfig};
use nbdebias::synth::{
    CoatConfig, CompletionConfig, PredictionKind, SemiSynthConfig, SourceConfig, ThresholdPopulation,
};
use nbdebias::textfmt::KvDoc;
use nbdebias::verify::{Estimator, ReferenceSpec};

/// Every recognized key with its default value.
pub const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("output.dir", "out"),
    // real-data input
    ("data.train", ""),
    ("data.test", ""),
    ("data.format", "tsv"),
    ("data.binarize", "true"),
    ("data.threshold", "3"),
    ("data.val_fraction", "0.1"),
    ("data.test_fraction", "0.2"),
    ("data.propensity_fraction", "0.05"),
    // synth
    ("synth.format", "world"),
    ("source.kind", "synthetic"),
    ("source.n_users", "300"),
    ("source.n_items", "300"),
    ("source.rank", "3"),
    ("source.density", "0.1"),
    ("source.effect", "2"),
    ("source.mean", "2.8"),
    ("source.noise", "0.3"),
    ("coat.n_users", "290"),
    ("coat.n_items", "300"),
    ("coat.rank", "3"),
    ("coat.logged_per_user", "24"),
    ("coat.uniform_per_user", "16"),
    ("coat.effect", "1"),
    ("coat.noise", "0.3"),
    ("world.dir", ""),
    ("world.alpha", "0.5"),
    ("world.fraction", "0.05"),
    ("world.mask_users", "16"),
    ("world.mask_items", "16"),
    ("world.threshold_population", "observed"),
    ("completion.dim", "8"),
    ("completion.lr", "0.01"),
    ("completion.weight_decay", "0.001"),
    ("completion.epochs", "50"),
    ("completion.batch_size", "128"),
    // estimate
    ("estimate.seeds", "10"),
    ("estimate.kinds", "ONE THREE FOUR ROTATE SKEW CRS"),
    ("estimate.loss", "mae"),
    ("estimate.max_inverse", "1000000"),
    ("estimate.propensity_noise", "true"),
    ("imputation.epochs", "10"),
    ("imputation.dim", "4"),
    ("imputation.lr", "0.01"),
    ("imputation.weight_decay", "0.001"),
    ("imputation.batch_size", "128"),
    ("imputation.form", "shared"),
    // train
    ("train.method", "n-dr-jl"),
    ("train.lr", "0.01"),
    ("train.weight_decay", "0.0001"),
    ("train.batch_size", "128"),
    ("train.epochs", "30"),
    ("train.dim", "8"),
    ("train.init_std", "0.1"),
    ("train.imputation_epochs", "1"),
    ("train.prediction_epochs", "1"),
    ("train.imputation_form", "per-point"),
    ("train.patience", "none"),
    ("train.use_best", "true"),
    ("propensity.base", "naive-bayes"),
    ("propensity.density_ratio", "true"),
    ("propensity.feature_dim", "8"),
    ("propensity.max_inverse", "100"),
    ("propensity.logistic_lr", "0.5"),
    ("propensity.logistic_epochs", "200"),
    ("propensity.l2", "0"),
    ("propensity.ratio_negatives", "1"),
    ("propensity.ratio_steps", "30"),
    ("propensity.ratio_ridge", "1e-7"),
    ("neighborhood.mode", "row-column"),
    ("neighborhood.rep", "binary"),
    ("kernel.family", "exact"),
    ("kernel.bandwidth", ""),
    ("eval.k", "5"),
    ("eval.model", ""),
    ("eval.init", "checkpoint"),
    // bias/variance harness
    ("verify.estimators", "n-ips n-dr n-dr-oracle"),
    ("verify.replications", "500"),
    ("verify.grid", "0.11 0.22 10"),
    ("verify.n_units", "2000"),
    ("verify.kernel", "epanechnikov"),
    ("verify.target", "0.5"),
    ("verify.prediction_shift", "-0.5"),
    ("verify.noise_sd", "0.05"),
    ("verify.imputation_shift", "0.25"),
    ("sweep.estimator", "n-ips"),
    ("sweep.grid", "0.05 0.25 10"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    doc: KvDoc,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut doc = KvDoc::new();
        for (k, v) in DEFAULTS {
            doc.set(k, v);
        }
        Self { doc }
    }
}

fn known(key: &str) -> Result<()> {
    if DEFAULTS.iter().any(|(k, _)| *k == key) {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown key {key:?}")))
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        Error::Parse { line, msg } => Error::Config(format!("line {line}: {msg}")),
        other => Error::Config(other.to_string()),
    }
}

impl RunConfig {
    /// Defaults, then `file` if given, then each `key=value` override in order.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let doc = KvDoc::parse(&text).map_err(config_err)?;
            for (k, v) in doc.iter() {
                cfg.set(k, v)?;
            }
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        known(key)?;
        self.doc.set(key, value);
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.doc.get(key).expect("every key has a default")
    }

    pub fn hash(&self) -> String {
        self.doc.hash()
    }

    pub fn render(&self) -> String {
        self.doc.render()
    }

    /// Header comment embedded in every output file.
    pub fn comment(&self) -> String {
        format!("# config_hash={}\n", self.hash())
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.doc.get_f64(key)
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.doc.get_usize(key)
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| Error::Config(format!("key {key:?}: not an integer: {v:?}")))
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            v => Err(Error::Config(format!("key {key:?}: not a boolean: {v:?}"))),
        }
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    /// Like [`RunConfig::path`], but the file must exist.
    pub fn existing_path(&self, key: &str) -> Result<Option<PathBuf>> {
        match self.path(key) {
            Some(p) if !p.exists() => Err(Error::Config(format!("{key}: {} does not exist", p.display()))),
            p => Ok(p),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("output.dir"))
    }

    pub fn world_dir(&self) -> PathBuf {
        self.path("world.dir").unwrap_or_else(|| self.out_dir().join("world"))
    }

    pub fn seed(&self) -> Result<u64> {
        self.u64("seed")
    }

    /// `lo hi n` as `n` log-spaced points.
    pub fn grid(&self, key: &str) -> Result<Vec<f64>> {
        let v = self.doc.get_vec(key)?;
        let [lo, hi, n] = v[..] else {
            return Err(Error::Config(format!("key {key:?}: expected `lo hi count`")));
        };
        if !(lo > 0.0 && hi >= lo && n >= 1.0 && n.fract() == 0.0) {
            return Err(Error::Config(format!(
                "key {key:?}: need 0 < lo <= hi and a positive count"
            )));
        }
        let n = n as usize;
        if n == 1 {
            return Ok(vec![lo]);
        }
        let (a, b) = (lo.ln(), hi.ln());
        Ok((0..n)
            .map(|j| (a + (b - a) * j as f64 / (n - 1) as f64).exp())
            .collect())
    }

    pub fn kernel(&self) -> Result<KernelSpec> {
        let family = KernelFamily::parse(self.get("kernel.family"))?;
        if family == KernelFamily::ExactMatch {
            return Ok(KernelSpec::exact());
        }
        let bw = self.get("kernel.bandwidth");
        if bw.is_empty() {
            return Err(Error::Config(format!(
                "kernel {} needs kernel.bandwidth",
                family.name()
            )));
        }
        KernelSpec::from_strings(family.name(), bw).map_err(config_err)
    }

    fn patience(&self) -> Result<Option<usize>> {
        match self.get("train.patience") {
            "none" | "" => Ok(None),
            _ => self.usize("train.patience").map(Some),
        }
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            lr: self.f64("train.lr")?,
            weight_decay: self.f64("train.weight_decay")?,
            batch_size: self.usize("train.batch_size")?,
            epochs: self.usize("train.epochs")?,
            dim: self.usize("train.dim")?,
            seed: self.seed()?,
            init_std: self.f64("train.init_std")?,
            imputation_epochs: self.usize("train.imputation_epochs")?,
            prediction_epochs: self.usize("train.prediction_epochs")?,
            imputation_form: ImputationForm::parse(self.get("train.imputation_form"))?,
            patience: self.patience()?,
        };
        cfg.validate().map_err(config_err)?;
        Ok(cfg)
    }

    pub fn pipeline(&self) -> Result<PipelineConfig> {
        let seed = self.seed()?;
        let cfg = PipelineConfig {
            method: Method::parse(self.get("train.method"))?,
            binarize: self.bool("data.binarize")?,
            relevance_threshold: self.f64("data.threshold")?,
            val_fraction: self.f64("data.val_fraction")?,
            test_fraction: self.f64("data.test_fraction")?,
            mar_propensity_fraction: self.f64("data.propensity_fraction")?,
            mode: NeighborhoodMode::parse(self.get("neighborhood.mode"))?,
            rep: RepChoice::parse(self.get("neighborhood.rep"))?,
            kernel: self.kernel()?,
            base: BasePropensity::parse(self.get("propensity.base"))?,
            density_ratio: self.bool("propensity.density_ratio")?,
            feature_dim: self.usize("propensity.feature_dim")?,
            logistic: LogisticConfig {
                lr: self.f64("propensity.logistic_lr")?,
                epochs: self.usize("propensity.logistic_epochs")?,
                l2: self.f64("propensity.l2")?,
            },
            ratio: DensityRatioConfig {
                neg_per_pos: self.usize("propensity.ratio_negatives")?,
                newton_steps: self.usize("propensity.ratio_steps")?,
                ridge: self.f64("propensity.ratio_ridge")?,
                seed,
            },
            max_inverse: self.f64("propensity.max_inverse")?,
            train: TrainConfig {
                seed: 0,
                ..self.train()?
            },
            use_best: self.bool("train.use_best")?,
            k: self.usize("eval.k")?,
            seed,
        };
        cfg.validate().map_err(config_err)?;
        Ok(cfg)
    }

    pub fn source(&self) -> Result<SourceConfig> {
        Ok(SourceConfig {
            n_users: self.usize("source.n_users")?,
            n_items: self.usize("source.n_items")?,
            rank: self.usize("source.rank")?,
            density: self.f64("source.density")?,
            effect: self.f64("source.effect")?,
            mean: self.f64("source.mean")?,
            noise: self.f64("source.noise")?,
            seed: self.seed()?,
        })
    }

    pub fn coat(&self) -> Result<CoatConfig> {
        Ok(CoatConfig {
            n_users: self.usize("coat.n_users")?,
            n_items: self.usize("coat.n_items")?,
            rank: self.usize("coat.rank")?,
            logged_per_user: self.usize("coat.logged_per_user")?,
            uniform_per_user: self.usize("coat.uniform_per_user")?,
            effect: self.f64("coat.effect")?,
            noise: self.f64("coat.noise")?,
            seed: self.seed()?,
        })
    }

    pub fn semisynth(&self) -> Result<SemiSynthConfig> {
        let seed = self.seed()?;
        Ok(SemiSynthConfig {
            alpha: self.f64("world.alpha")?,
            fraction: self.f64("world.fraction")?,
            mask_users: self.usize("world.mask_users")?,
            mask_items: self.usize("world.mask_items")?,
            threshold_population: ThresholdPopulation::parse(self.get("world.threshold_population"))?,
            completion: CompletionConfig {
                dim: self.usize("completion.dim")?,
                lr: self.f64("completion.lr")?,
                weight_decay: self.f64("completion.weight_decay")?,
                epochs: self.usize("completion.epochs")?,
                batch_size: self.usize("completion.batch_size")?,
                seed,
            },
            seed,
        })
    }

    pub fn estimate(&self) -> Result<EstimateConfig> {
        let n = self.u64("estimate.seeds")?;
        if n == 0 {
            return Err(Error::Config("estimate.seeds must be positive".into()));
        }
        let base = self.seed()?;
        let kinds = self
            .get("estimate.kinds")
            .split_whitespace()
            .map(PredictionKind::parse)
            .collect::<Result<Vec<_>>>()
            .map_err(config_err)?;
        if kinds.is_empty() {
            return Err(Error::Config("estimate.kinds is empty".into()));
        }
        let defaults = EstimateConfig::default();
        Ok(EstimateConfig {
            seeds: (base..base + n).collect(),
            kinds,
            loss: LossSpec::parse(self.get("estimate.loss"))?,
            max_inverse: self.f64("estimate.max_inverse")?,
            propensity_noise: self.bool("estimate.propensity_noise")?,
            warm_start: None,
            imputation: TrainConfig {
                epochs: self.usize("imputation.epochs")?,
                dim: self.usize("imputation.dim")?,
                lr: self.f64("imputation.lr")?,
                weight_decay: self.f64("imputation.weight_decay")?,
                batch_size: self.usize("imputation.batch_size")?,
                imputation_form: ImputationForm::parse(self.get("imputation.form"))?,
                ..defaults.imputation
            },
        })
    }

    pub fn reference(&self) -> Result<ReferenceSpec> {
        let spec = ReferenceSpec {
            n_units: self.usize("verify.n_units")?,
            prediction_shift: self.f64("verify.prediction_shift")?,
            noise_sd: self.f64("verify.noise_sd")?,
            pi: RepDistribution::point_mass(vec![self.f64("verify.target")?]),
            kernel: KernelFamily::parse(self.get("verify.kernel"))?,
            ..ReferenceSpec::default()
        };
        spec.validate().map_err(config_err)?;
        Ok(spec)
    }

    /// Estimator names; `n-dr` takes its imputation shift from `verify.imputation_shift`.
    pub fn estimators(&self, key: &str) -> Result<Vec<Estimator>> {
        let shift = self.f64("verify.imputation_shift")?;
        let list = self
            .get(key)
            .split_whitespace()
            .map(|s| {
                Ok(match Estimator::parse(s)? {
                    Estimator::NDr(nbdebias::verify::Imputation::Shifted(_)) => {
                        Estimator::NDr(nbdebias::verify::Imputation::Shifted(shift))
                    }
                    e => e,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if list.is_empty() {
            return Err(Error::Config(format!("{key} is empty")));
        }
        Ok(list)
    }
}
