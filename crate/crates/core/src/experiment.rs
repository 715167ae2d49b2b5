//! Relative-error table of all seven estimators on semi-synthetic worlds.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{ObservationMask, RatingMatrix};
use crate::error::{Error, Result};
use crate::estimators::{
    dr_loss, ideal_loss_n, ips_loss, n_dr_loss, n_ips_loss, naive_loss, ErrorSource, NeighborhoodInputs,
};
use crate::eval::relative_error;
use crate::kernels::KernelSpec;
use crate::learning::{
    fit_imputation, BaselineData, FactorLayout, FactorModel, ImputationForm, ImputationLoss, ImputationModel,
    NeighborhoodData, TrainConfig, WeightTable,
};
use crate::loss::LossSpec;
use crate::neighborhood::RepDistribution;
use crate::synth::{make_prediction_matrix, PredictionKind, Realization, SemiSynthWorld};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    Naive,
    Ips,
    NIps,
    Dr,
    NDr,
    Mrdr,
    NMrdr,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 7] = [
        Self::Naive,
        Self::Ips,
        Self::NIps,
        Self::Dr,
        Self::NDr,
        Self::Mrdr,
        Self::NMrdr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Naive => "Naive",
            Self::Ips => "IPS",
            Self::NIps => "N-IPS",
            Self::Dr => "DR",
            Self::NDr => "N-DR",
            Self::Mrdr => "MRDR",
            Self::NMrdr => "N-MRDR",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateConfig {
    pub seeds: Vec<u64>,
    pub kinds: Vec<PredictionKind>,
    pub loss: LossSpec,
    /// Clip for joint inverse propensities; large values effectively disable clipping.
    pub max_inverse: f64,
    /// Noisy exposure inverses as in the protocol; `false` uses the exact `1/p`.
    pub propensity_noise: bool,
    /// Warm-start fit of the imputation models on observed ratings; `None` starts from a random
    /// factor model whose global bias is the observed mean.
    pub warm_start: Option<TrainConfig>,
    /// Refinement of the imputation models under each imputation loss.
    pub imputation: TrainConfig,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            seeds: (0..10).collect(),
            kinds: PredictionKind::ALL.to_vec(),
            loss: LossSpec::AbsoluteError,
            max_inverse: 1e6,
            propensity_noise: true,
            warm_start: None,
            imputation: TrainConfig {
                epochs: 10,
                dim: 4,
                weight_decay: 1e-3,
                batch_size: 128,
                imputation_form: ImputationForm::Shared,
                ..TrainConfig::default()
            },
        }
    }
}

/// Relative errors indexed `[estimator][kind][seed]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateTable {
    pub kinds: Vec<PredictionKind>,
    pub seeds: Vec<u64>,
    pub values: Vec<Vec<Vec<f64>>>,
}

impl EstimateTable {
    pub fn cell(&self, est: EstimatorKind, kind: PredictionKind) -> &[f64] {
        let e = EstimatorKind::ALL.iter().position(|k| *k == est).unwrap();
        let k = self.kinds.iter().position(|k| *k == kind).unwrap();
        &self.values[e][k]
    }

    pub fn mean(&self, est: EstimatorKind, kind: PredictionKind) -> f64 {
        crate::numeric::mean_std(self.cell(est, kind)).0
    }

    /// Rows `estimator,kind,mean,std,n_seeds`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("estimator,kind,mean_re,std_re,n_seeds\n");
        for est in EstimatorKind::ALL {
            for &kind in &self.kinds {
                let (m, sd) = crate::numeric::mean_std(self.cell(est, kind));
                let _ = writeln!(s, "{},{},{},{},{}", est.name(), kind.name(), m, sd, self.seeds.len());
            }
        }
        s
    }

    /// Estimator rows by prediction-kind columns of `mean±std`.
    pub fn to_wide_csv(&self) -> String {
        let mut s = String::from("estimator");
        for k in &self.kinds {
            s.push(',');
            s.push_str(k.name());
        }
        s.push('\n');
        for est in EstimatorKind::ALL {
            s.push_str(est.name());
            for &kind in &self.kinds {
                let (m, sd) = crate::numeric::mean_std(self.cell(est, kind));
                let _ = write!(s, ",{m:.4}±{sd:.4}");
            }
            s.push('\n');
        }
        s
    }
}

fn observed_fit(mask: &ObservationMask, ratings: &RatingMatrix, cfg: &TrainConfig) -> Result<FactorModel> {
    let field = crate::propensity::PropensityField::uniform(mask.n_users, mask.n_items, 1.0)?;
    let data = BaselineData {
        ratings,
        field: &field,
        loss: LossSpec::SquaredError,
    };
    Ok(crate::learning::train_baseline(crate::learning::BaselineKind::Naive, &data, mask, None, cfg)?.model)
}

/// Observed-rating fits used to start the imputation models.
#[derive(Debug, Clone)]
pub struct WarmStarts {
    /// Fit on every observed pair, ignoring the representation.
    pub pooled: FactorModel,
    /// Pooled factors plus a linear shift in the representation fitted to the pooled residuals.
    pub shared: ImputationModel,
}

impl WarmStarts {
    pub fn random(real: &Realization, points: &[Vec<f64>], cfg: &TrainConfig, seed: u64) -> Result<Self> {
        let layout = FactorLayout {
            n_users: real.mask.n_users,
            n_items: real.mask.n_items,
            dim: cfg.dim,
        };
        let pairs = real.mask.observed_pairs();
        if pairs.is_empty() {
            return Err(Error::Empty("no observed ratings".into()));
        }
        let mean = pairs.iter().map(|&(u, i)| real.observed.get(u, i)).sum::<f64>() / pairs.len() as f64;
        let mut pooled = FactorModel::random(
            layout.n_users,
            layout.n_items,
            cfg.dim,
            false,
            cfg.init_std,
            seed.wrapping_add(1),
        )?;
        let n = layout.len();
        pooled.params[n - 1] = mean;
        let shared = ImputationModel::from_factor(&pooled, ImputationForm::Shared, points.to_vec())?;
        Ok(Self { pooled, shared })
    }

    pub fn fit(real: &Realization, points: &[Vec<f64>], cfg: &TrainConfig) -> Result<Self> {
        let pooled = observed_fit(&real.mask, &real.observed, cfg)?;
        let mut shared = ImputationModel::from_factor(&pooled, ImputationForm::Shared, points.to_vec())?;
        let pairs = real.mask.observed_pairs();
        let q = points[0].len();
        // least squares of the residual on [1, g]
        let mut design = DMatrix::<f64>::zeros(pairs.len(), q + 1);
        let mut resid = DVector::<f64>::zeros(pairs.len());
        for (row, &(u, i)) in pairs.iter().enumerate() {
            design[(row, 0)] = 1.0;
            for (j, g) in real.rep.get(u, i).iter().enumerate() {
                design[(row, j + 1)] = *g;
            }
            resid[row] = real.observed.get(u, i) - pooled.predict(u, i);
        }
        let coef = design
            .svd(true, true)
            .solve(&resid, 1e-10)
            .map_err(|e| Error::NonFinite(format!("imputation shift fit: {e}")))?;
        let n = pooled.layout.len();
        shared.params[n - 1] += coef[0];
        for j in 0..q {
            shared.params[n + j] = coef[j + 1];
        }
        Ok(Self { pooled, shared })
    }
}

fn imputed(
    table: &WeightTable,
    rhat: &RatingMatrix,
    kind: ImputationLoss,
    init: ImputationModel,
    cfg: &TrainConfig,
) -> Result<Vec<RatingMatrix>> {
    let (m, _) = fit_imputation(table, rhat, kind, init, cfg)?;
    Ok(m.predict_matrices())
}

/// All seven relative errors for one realization and one prediction matrix.
pub fn estimate_once(
    world: &SemiSynthWorld,
    real: &Realization,
    rhat: &RatingMatrix,
    warm: &WarmStarts,
    cfg: &EstimateConfig,
) -> Result<[f64; 7]> {
    let loss = cfg.loss;
    let pi = RepDistribution::uniform_binary();
    let ideal = ideal_loss_n(rhat, &world.potentials, &pi, loss)?.integrated;
    let field = if cfg.propensity_noise {
        world.field(real, cfg.max_inverse)?
    } else {
        world.oracle_field(real, cfg.max_inverse)?
    };
    let robs = &real.observed;
    let mask = &real.mask;
    let kernel = KernelSpec::exact();
    let inputs = NeighborhoodInputs {
        rhat,
        errors: ErrorSource::Observed(robs),
        mask,
        rep: &real.rep,
        field: &field,
        pi: &pi,
        kernel: &kernel,
        loss,
    };
    let base = BaselineData {
        ratings: robs,
        field: &field,
        loss,
    };
    let nb = NeighborhoodData {
        ratings: robs,
        rep: &real.rep,
        field: &field,
        pi: &pi,
        kernel: &kernel,
        loss,
    };
    let base_table = WeightTable::baseline(&base, mask, true)?;
    let n_table = WeightTable::neighborhood(&nb, mask)?;
    let imp_cfg = &cfg.imputation;

    let pooled = || ImputationModel::from_factor(&warm.pooled, ImputationForm::PerPoint, base_table.points.clone());
    let dr_imp = imputed(&base_table, rhat, ImputationLoss::DoublyRobust, pooled()?, imp_cfg)?;
    let mrdr_imp = imputed(&base_table, rhat, ImputationLoss::MoreRobust, pooled()?, imp_cfg)?;
    let neighborhood = || match imp_cfg.imputation_form {
        ImputationForm::PerPoint => {
            ImputationModel::from_factor(&warm.pooled, ImputationForm::PerPoint, n_table.points.clone())
        }
        ImputationForm::Shared => Ok(warm.shared.clone()),
    };
    let ndr_imp = imputed(&n_table, rhat, ImputationLoss::DoublyRobust, neighborhood()?, imp_cfg)?;
    let nmrdr_imp = imputed(&n_table, rhat, ImputationLoss::MoreRobust, neighborhood()?, imp_cfg)?;

    let est = [
        naive_loss(rhat, robs, mask, loss)?,
        ips_loss(rhat, robs, mask, &field, loss)?,
        n_ips_loss(&inputs)?.integrated,
        dr_loss(rhat, robs, mask, &dr_imp[0], &field, loss)?,
        n_dr_loss(&inputs, &ndr_imp)?.integrated,
        dr_loss(rhat, robs, mask, &mrdr_imp[0], &field, loss)?,
        n_dr_loss(&inputs, &nmrdr_imp)?.integrated,
    ];
    let mut out = [0.0; 7];
    for (o, e) in out.iter_mut().zip(est) {
        *o = relative_error(e, ideal)?;
    }
    Ok(out)
}

fn kind_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(k as u64)
}

/// Resamples the realization for every seed and fills the relative-error table; seeds run in parallel.
pub fn estimate_table(world: &SemiSynthWorld, cfg: &EstimateConfig) -> Result<EstimateTable> {
    if cfg.seeds.is_empty() || cfg.kinds.is_empty() {
        return Err(Error::Config(
            "estimate needs at least one seed and one prediction kind".into(),
        ));
    }
    let pi = RepDistribution::uniform_binary();
    let per_seed: Vec<Result<Vec<[f64; 7]>>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let real = world.resample(seed)?;
            let warm = match &cfg.warm_start {
                Some(w) => {
                    let warm_cfg = TrainConfig { seed, ..w.clone() };
                    WarmStarts::fit(&real, &pi.points, &warm_cfg)?
                }
                None => WarmStarts::random(&real, &pi.points, &cfg.imputation, seed)?,
            };
            cfg.kinds
                .iter()
                .enumerate()
                .map(|(k, &kind)| {
                    let rhat = make_prediction_matrix(kind, &world.ratings, kind_seed(seed, k))?;
                    estimate_once(world, &real, &rhat, &warm, cfg)
                })
                .collect()
        })
        .collect();
    let per_seed = per_seed.into_iter().collect::<Result<Vec<_>>>()?;
    let mut values = vec![vec![Vec::with_capacity(cfg.seeds.len()); cfg.kinds.len()]; 7];
    for row in &per_seed {
        for (k, res) in row.iter().enumerate() {
            for e in 0..7 {
                values[e][k].push(res[e]);
            }
        }
    }
    Ok(EstimateTable {
        kinds: cfg.kinds.clone(),
        seeds: cfg.seeds.clone(),
        values,
    })
}
