//! Semi-synthetic worlds with known potential outcomes under neighborhood exposure.
//!
//! A world is built from an MNAR rating source in three stages: completion of the full rating
//! grid, rating-dependent exposure propensities with blocked rows and columns, and one sampled
//! realization of exposures, neighborhood treatments and noisy propensity estimates.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use rayon::prelude::*;

use crate::data::{Dataset, Interaction, ObservationMask, RatingMatrix};
use crate::error::{Error, Result};
use crate::learning::{train_baseline, BaselineData, BaselineKind, TrainConfig};
use crate::loss::LossSpec;
use crate::neighborhood::{compute_rep, exposure_counts, lower_median, NeighborhoodMode, RepKind, TreatmentRep};
use crate::propensity::{ConditionalModel, PropensityField};
use crate::textfmt::KvDoc;

pub const RATING_MIN: f64 = 1.0;
pub const RATING_MAX: f64 = 5.0;

#[inline]
fn round_clip(v: f64) -> f64 {
    v.round().clamp(RATING_MIN, RATING_MAX)
}

/// Recipe for the synthetic MNAR source used in place of a real rating log.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub rank: usize,
    /// Expected fraction of the grid that is rated.
    pub density: f64,
    /// Rating shift between pairs with dense and sparse exposed neighborhoods.
    pub effect: f64,
    pub mean: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            n_users: 300,
            n_items: 300,
            rank: 3,
            density: 0.1,
            effect: 2.0,
            mean: 2.8,
            noise: 0.3,
            seed: 0,
        }
    }
}

/// Low-rank ratings observed through an activity- and rating-dependent mask.
///
/// Ratings of pairs whose row-column neighborhood is densely exposed are shifted up by
/// `effect / 2`, the rest down by the same amount.
pub fn synthetic_source(cfg: &SourceConfig) -> Result<Dataset> {
    let (nu, ni) = (cfg.n_users, cfg.n_items);
    if nu == 0 || ni == 0 || cfg.rank == 0 {
        return Err(Error::invalid("source needs users, items and a positive rank"));
    }
    if !(cfg.density > 0.0 && cfg.density < 1.0) {
        return Err(Error::invalid("source density must lie in (0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std = Normal::new(0.0, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let f_scale = 1.1 / (cfg.rank as f64).sqrt();
    let uf: Vec<f64> = (0..nu * cfg.rank).map(|_| std.sample(&mut rng)).collect();
    let vf: Vec<f64> = (0..ni * cfg.rank).map(|_| std.sample(&mut rng)).collect();
    let ub: Vec<f64> = (0..nu).map(|_| 0.3 * std.sample(&mut rng)).collect();
    let ib: Vec<f64> = (0..ni).map(|_| 0.5 * std.sample(&mut rng)).collect();
    let base = RatingMatrix::from_fn(nu, ni, |u, i| {
        let mut s = 0.0;
        for k in 0..cfg.rank {
            s += uf[u * cfg.rank + k] * vf[i * cfg.rank + k];
        }
        cfg.mean + f_scale * s + ub[u] + ib[i]
    });

    let activity = LogNormal::new(0.0, 0.8).map_err(|e| Error::invalid(e.to_string()))?;
    let ua: Vec<f64> = (0..nu).map(|_| activity.sample(&mut rng)).collect();
    let ia: Vec<f64> = (0..ni).map(|_| activity.sample(&mut rng)).collect();
    let raw: Vec<f64> = (0..nu * ni)
        .map(|p| {
            let r = round_clip(base.values[p]);
            ua[p / ni] * ia[p % ni] * 0.8f64.powf((4.0 - r).max(0.0))
        })
        .collect();
    let scale = cfg.density * (nu * ni) as f64 / raw.iter().sum::<f64>();
    let mask = ObservationMask::from_fn(nu, ni, |u, i| rng.gen_bool((raw[u * ni + i] * scale).min(1.0)));
    if mask.n_observed() == 0 {
        return Err(Error::Empty("synthetic source has no ratings".into()));
    }
    let counts = exposure_counts(NeighborhoodMode::RowColumn, &mask);
    let pairs = mask.observed_pairs();
    let c = lower_median(&pairs.iter().map(|&(u, i)| counts[u * ni + i]).collect::<Vec<_>>())?;
    let mut ratings = Vec::with_capacity(pairs.len());
    for (u, i) in pairs {
        let g = if counts[u * ni + i] >= c { 0.5 } else { -0.5 };
        let v = base.get(u, i) + cfg.effect * g + cfg.noise * std.sample(&mut rng);
        ratings.push(Interaction {
            user: u,
            item: i,
            rating: round_clip(v),
        });
    }
    Dataset::from_interactions(nu, ni, ratings)
}

/// Recipe for a logged-plus-uniform rating log shaped like the Coat data: each user rates a
/// self-selected set of items and a uniformly drawn set.
#[derive(Debug, Clone, PartialEq)]
pub struct CoatConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub rank: usize,
    pub logged_per_user: usize,
    pub uniform_per_user: usize,
    /// Rating shift between pairs with dense and sparse exposed neighborhoods.
    pub effect: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for CoatConfig {
    fn default() -> Self {
        Self {
            n_users: 290,
            n_items: 300,
            rank: 3,
            logged_per_user: 24,
            uniform_per_user: 16,
            effect: 1.0,
            noise: 0.3,
            seed: 0,
        }
    }
}

/// Logged ratings in `mnar`, uniformly sampled ratings in `mar`.
pub fn synthetic_coat(cfg: &CoatConfig) -> Result<Dataset> {
    let (nu, ni) = (cfg.n_users, cfg.n_items);
    if nu == 0 || ni == 0 || cfg.rank == 0 {
        return Err(Error::invalid("coat recipe needs users, items and a positive rank"));
    }
    if cfg.logged_per_user == 0 || cfg.logged_per_user > ni || cfg.uniform_per_user > ni {
        return Err(Error::invalid("per-user rating counts must lie in 1..=n_items"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std = Normal::new(0.0, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let f_scale = 1.1 / (cfg.rank as f64).sqrt();
    let uf: Vec<f64> = (0..nu * cfg.rank).map(|_| std.sample(&mut rng)).collect();
    let vf: Vec<f64> = (0..ni * cfg.rank).map(|_| std.sample(&mut rng)).collect();
    let ib: Vec<f64> = (0..ni).map(|_| 0.5 * std.sample(&mut rng)).collect();
    let base = RatingMatrix::from_fn(nu, ni, |u, i| {
        let mut s = 0.0;
        for k in 0..cfg.rank {
            s += uf[u * cfg.rank + k] * vf[i * cfg.rank + k];
        }
        2.8 + f_scale * s + ib[i]
    });
    let popularity = LogNormal::new(0.0, 0.8).map_err(|e| Error::invalid(e.to_string()))?;
    let pop: Vec<f64> = (0..ni).map(|_| popularity.sample(&mut rng)).collect();
    let items: Vec<usize> = (0..ni).collect();
    let mut mask = ObservationMask::new(nu, ni);
    for u in 0..nu {
        let chosen = items
            .choose_multiple_weighted(&mut rng, cfg.logged_per_user, |&i| {
                pop[i] * 0.5f64.powf(5.0 - round_clip(base.get(u, i)))
            })
            .map_err(|e| Error::invalid(e.to_string()))?;
        for &i in chosen {
            mask.set(u, i, true);
        }
    }
    let counts = exposure_counts(NeighborhoodMode::RowColumn, &mask);
    let logged = mask.observed_pairs();
    let c = lower_median(&logged.iter().map(|&(u, i)| counts[u * ni + i]).collect::<Vec<_>>())?;
    let rate = |u: usize, i: usize, rng: &mut ChaCha8Rng| {
        let g = if counts[u * ni + i] >= c { 0.5 } else { -0.5 };
        round_clip(base.get(u, i) + cfg.effect * g + cfg.noise * std.sample(rng))
    };
    let mnar: Vec<Interaction> = logged
        .iter()
        .map(|&(u, i)| Interaction {
            user: u,
            item: i,
            rating: rate(u, i, &mut rng),
        })
        .collect();
    let mut mar = Vec::with_capacity(nu * cfg.uniform_per_user);
    for u in 0..nu {
        let mut picks: Vec<usize> = items.choose_multiple(&mut rng, cfg.uniform_per_user).copied().collect();
        picks.sort_unstable();
        for i in picks {
            mar.push(Interaction {
                user: u,
                item: i,
                rating: rate(u, i, &mut rng),
            });
        }
    }
    let mut ds = Dataset::from_interactions(nu, ni, mnar)?;
    ds.mar = Some(mar);
    Ok(ds)
}

/// Matrix-factorization settings shared by the three completions.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionConfig {
    pub dim: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            lr: 0.01,
            weight_decay: 1e-5,
            epochs: 50,
            batch_size: 128,
            seed: 0,
        }
    }
}

impl CompletionConfig {
    /// Smaller, regularized completion for the 300×300 source; the default overfits it.
    pub fn ci() -> Self {
        Self {
            dim: 8,
            weight_decay: 1e-3,
            ..Self::default()
        }
    }
}

/// Fits MF on the given ratings and rounds its predictions onto the rating alphabet.
pub fn complete_ratings(
    n_users: usize,
    n_items: usize,
    ratings: &[Interaction],
    cfg: &CompletionConfig,
) -> Result<RatingMatrix> {
    if ratings.is_empty() {
        return Err(Error::Empty("completion needs at least one rating".into()));
    }
    let mut grid = RatingMatrix::filled(n_users, n_items, 0.0);
    let mut mask = ObservationMask::new(n_users, n_items);
    for r in ratings {
        grid.set(r.user, r.item, r.rating);
        mask.set(r.user, r.item, true);
    }
    let field = PropensityField::uniform(n_users, n_items, 1.0)?;
    let data = BaselineData {
        ratings: &grid,
        field: &field,
        loss: LossSpec::SquaredError,
    };
    let tc = TrainConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        dim: cfg.dim,
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    let out = train_baseline(BaselineKind::Naive, &data, &mask, None, &tc)?;
    let mut m = out.model.predict_matrix();
    m.values.iter_mut().for_each(|v| *v = round_clip(*v));
    Ok(m)
}

pub fn complete_matrix(mnar: &Dataset, cfg: &CompletionConfig) -> Result<RatingMatrix> {
    complete_ratings(mnar.n_users, mnar.n_items, &mnar.mnar, cfg)
}

/// `p α^{max(0, 4 - r)}` with `p` set so the expected observed count is `fraction · |D|`.
pub fn gen_propensities(r: &RatingMatrix, alpha: f64, fraction: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} outside (0, 1)")));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("observed fraction {fraction} outside (0, 1)")));
    }
    let shape: Vec<f64> = r.values.iter().map(|v| alpha.powf((4.0 - v).max(0.0))).collect();
    let total: f64 = shape.iter().sum();
    let p = fraction * shape.len() as f64 / total;
    if p > 1.0 {
        return Err(Error::Infeasible(format!("base propensity {p} exceeds 1")));
    }
    Ok(shape.into_iter().map(|s| p * s).collect())
}

/// Blocks random rows and columns and rescales the remaining propensities to keep the
/// expected observed count.
pub fn apply_mask(
    grid: &[f64],
    n_users: usize,
    n_items: usize,
    mask_users: usize,
    mask_items: usize,
    seed: u64,
) -> Result<(Vec<f64>, ObservationMask)> {
    if grid.len() != n_users * n_items {
        return Err(Error::DimensionMismatch {
            expected: n_users * n_items,
            got: grid.len(),
        });
    }
    if mask_users > n_users || mask_items > n_items {
        return Err(Error::invalid("mask counts exceed grid dimensions"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep_u = (n_users - mask_users) as f64 / n_users as f64;
    let keep_i = (n_items - mask_items) as f64 / n_items as f64;
    let users: Vec<bool> = (0..n_users).map(|_| rng.gen_bool(keep_u)).collect();
    let items: Vec<bool> = (0..n_items).map(|_| rng.gen_bool(keep_i)).collect();
    let kept = ObservationMask::from_fn(n_users, n_items, |u, i| users[u] && items[i]);
    let before: f64 = grid.iter().sum();
    let after: f64 = (0..grid.len())
        .filter(|&p| kept.get(p / n_items, p % n_items))
        .map(|p| grid[p])
        .sum();
    let factor = if after > 0.0 { before / after } else { 0.0 };
    let out: Vec<f64> = (0..grid.len())
        .map(|p| {
            if kept.get(p / n_items, p % n_items) {
                grid[p] * factor
            } else {
                0.0
            }
        })
        .collect();
    if let Some(v) = out.iter().find(|v| **v > 1.0) {
        return Err(Error::Infeasible(format!(
            "rescaled propensity {v} exceeds 1; reduce mask counts"
        )));
    }
    Ok((out, kept))
}

/// Mass below this is dropped from the top of a count distribution.
const TAIL_CUT: f64 = 1e-18;

/// Distribution of a sum of independent Bernoullis, truncated where the upper mass is negligible.
fn poisson_binomial(probs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut dist = vec![1.0];
    for p in probs {
        if p <= 0.0 {
            continue;
        }
        dist.push(0.0);
        for k in (1..dist.len()).rev() {
            dist[k] = dist[k] * (1.0 - p) + dist[k - 1] * p;
        }
        dist[0] *= 1.0 - p;
        while dist.len() > 1 && *dist.last().unwrap() < TAIL_CUT {
            dist.pop();
        }
    }
    dist
}

/// Removes one Bernoulli(`p`) factor from `dist`. Returns `None` when the division is unstable.
fn remove_bernoulli(dist: &[f64], p: f64, out: &mut Vec<f64>) -> bool {
    out.clear();
    if p <= 0.0 {
        out.extend_from_slice(dist);
        return true;
    }
    if p > 0.5 {
        return false;
    }
    let mut prev = 0.0;
    for &r in dist {
        let q = ((r - p * prev) / (1.0 - p)).max(0.0);
        out.push(q);
        prev = q;
    }
    true
}

/// `P(count ≥ c | o=1)` for the row-column count under independent exposures, from the exact
/// Poisson-binomial distributions of the row and the column with the pair itself removed.
pub fn treatment_probabilities(prop: &[f64], n_users: usize, n_items: usize, c: f64) -> Vec<f64> {
    let need = c.ceil().max(0.0) as usize;
    let rows: Vec<Vec<f64>> = (0..n_users)
        .into_par_iter()
        .map(|u| poisson_binomial(prop[u * n_items..(u + 1) * n_items].iter().copied()))
        .collect();
    let cols: Vec<Vec<f64>> = (0..n_items)
        .into_par_iter()
        .map(|i| poisson_binomial((0..n_users).map(|u| prop[u * n_items + i])))
        .collect();
    (0..n_users)
        .into_par_iter()
        .flat_map_iter(|u| {
            let (rows, cols) = (&rows, &cols);
            let mut row = Vec::new();
            let mut col = Vec::new();
            let mut tail = Vec::new();
            (0..n_items).map(move |i| {
                let p = prop[u * n_items + i];
                if !remove_bernoulli(&rows[u], p, &mut row) {
                    row = poisson_binomial((0..n_items).filter(|&j| j != i).map(|j| prop[u * n_items + j]));
                }
                if !remove_bernoulli(&cols[i], p, &mut col) {
                    col = poisson_binomial((0..n_users).filter(|&v| v != u).map(|v| prop[v * n_items + i]));
                }
                // tail[k] = P(col ≥ k)
                tail.clear();
                tail.resize(col.len() + 1, 0.0);
                for k in (0..col.len()).rev() {
                    tail[k] = tail[k + 1] + col[k];
                }
                let total: f64 = row
                    .iter()
                    .enumerate()
                    .map(|(a, &ra)| ra * tail.get(need.saturating_sub(a)).copied().unwrap_or(0.0))
                    .sum();
                total.clamp(0.0, 1.0)
            })
        })
        .collect()
}

/// Which pairs define the median exposure threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdPopulation {
    Observed,
    All,
}

impl ThresholdPopulation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "observed" => Ok(Self::Observed),
            "all" => Ok(Self::All),
            other => Err(Error::Config(format!("unknown threshold population {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Observed => "observed",
            Self::All => "all",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemiSynthConfig {
    pub alpha: f64,
    pub fraction: f64,
    pub mask_users: usize,
    pub mask_items: usize,
    pub threshold_population: ThresholdPopulation,
    pub completion: CompletionConfig,
    pub seed: u64,
}

impl Default for SemiSynthConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            fraction: 0.05,
            mask_users: 16,
            mask_items: 16,
            threshold_population: ThresholdPopulation::Observed,
            completion: CompletionConfig::default(),
            seed: 0,
        }
    }
}

impl SemiSynthConfig {
    /// Settings for the synthetic 300×300 source.
    pub fn ci() -> Self {
        Self {
            completion: CompletionConfig::ci(),
            ..Self::default()
        }
    }

    pub fn validate(&self, n_users: usize, n_items: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.fraction > 0.0 && self.fraction < 1.0) {
            return Err(Error::Config("alpha and observed fraction must lie in (0, 1)".into()));
        }
        if self.mask_users > n_users || self.mask_items > n_items {
            return Err(Error::Config("mask counts exceed grid dimensions".into()));
        }
        Ok(())
    }
}

/// One sampled draw of exposures and everything derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub mask: ObservationMask,
    pub rep: TreatmentRep,
    pub threshold: f64,
    /// Noisy `1 / p̂` per pair.
    pub inverse_propensity: Vec<f64>,
    /// `P(g = 1 | o = 1, x)` per pair.
    pub treatment_prob: Vec<f64>,
    /// Observed ratings `R^{g_{u,i}}`, defined on the whole grid for convenience.
    pub observed: RatingMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemiSynthWorld {
    pub cfg: SemiSynthConfig,
    pub ratings: RatingMatrix,
    pub propensity: Vec<f64>,
    pub unblocked: ObservationMask,
    pub potentials: [RatingMatrix; 2],
    pub realization: Realization,
}

fn seed_offset(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(k)
}

/// Builds a world: three completions, propensities with blocking, and one realization.
///
/// `R^{g=0}` and `R^{g=1}` are completed from the source ratings split by the source's own
/// row-column exposure treatment.
pub fn build_world(source: &Dataset, cfg: &SemiSynthConfig) -> Result<SemiSynthWorld> {
    let (nu, ni) = (source.n_users, source.n_items);
    cfg.validate(nu, ni)?;
    if source.mnar.is_empty() {
        return Err(Error::Empty("source has no ratings".into()));
    }
    let smask = source.mask();
    let counts = exposure_counts(NeighborhoodMode::RowColumn, &smask);
    let c = lower_median(
        &source
            .mnar
            .iter()
            .map(|r| counts[r.user * ni + r.item])
            .collect::<Vec<_>>(),
    )?;
    let (high, low): (Vec<Interaction>, Vec<Interaction>) = source
        .mnar
        .iter()
        .cloned()
        .partition(|r| counts[r.user * ni + r.item] >= c);
    if high.is_empty() || low.is_empty() {
        return Err(Error::Empty(
            "one exposure group of the source is empty; use a larger or denser sample".into(),
        ));
    }
    let completions: Vec<Result<RatingMatrix>> = {
        let jobs: [(&[Interaction], u64); 3] = [(&source.mnar, 0), (&low, 1), (&high, 2)];
        let cc = &cfg.completion;
        std::thread::scope(|s| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|(rows, k)| {
                    let c = CompletionConfig {
                        seed: seed_offset(cc.seed, *k),
                        ..cc.clone()
                    };
                    s.spawn(move || complete_ratings(nu, ni, rows, &c))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::NonFinite("completion thread panicked".into())))
                })
                .collect()
        })
    };
    let mut it = completions.into_iter();
    let ratings = it.next().unwrap()?;
    let r0 = it.next().unwrap()?;
    let r1 = it.next().unwrap()?;
    let base = gen_propensities(&ratings, cfg.alpha, cfg.fraction)?;
    let (propensity, unblocked) = apply_mask(&base, nu, ni, cfg.mask_users, cfg.mask_items, seed_offset(cfg.seed, 3))?;
    let potentials = [r0, r1];
    let realization = sample_realization(
        &propensity,
        &potentials,
        cfg.threshold_population,
        seed_offset(cfg.seed, 4),
    )?;
    Ok(SemiSynthWorld {
        cfg: cfg.clone(),
        ratings,
        propensity,
        unblocked,
        potentials,
        realization,
    })
}

/// Draws exposures, treatments and noisy propensities for fixed propensities and potentials.
pub fn sample_realization(
    propensity: &[f64],
    potentials: &[RatingMatrix; 2],
    population: ThresholdPopulation,
    seed: u64,
) -> Result<Realization> {
    let (nu, ni) = (potentials[0].n_users, potentials[0].n_items);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = ObservationMask::from_fn(nu, ni, |u, i| rng.gen_bool(propensity[u * ni + i]));
    let n_obs = mask.n_observed();
    if n_obs == 0 {
        return Err(Error::Empty("no exposures were sampled".into()));
    }
    let counts = exposure_counts(NeighborhoodMode::RowColumn, &mask);
    let threshold = match population {
        ThresholdPopulation::Observed => lower_median(
            &mask
                .observed_pairs()
                .iter()
                .map(|&(u, i)| counts[u * ni + i])
                .collect::<Vec<_>>(),
        )?,
        ThresholdPopulation::All => lower_median(&counts)?,
    };
    let rep = compute_rep(NeighborhoodMode::RowColumn, &mask, RepKind::BinaryThreshold(threshold))?;
    let p_o = n_obs as f64 / (nu * ni) as f64;
    let inverse_propensity: Vec<f64> = propensity
        .iter()
        .map(|&p| {
            let beta: f64 = rng.gen();
            if p > 0.0 {
                beta / p + (1.0 - beta) / p_o
            } else {
                1.0 / p_o
            }
        })
        .collect();
    let treatment_prob = treatment_probabilities(propensity, nu, ni, threshold);
    let observed = RatingMatrix::from_fn(nu, ni, |u, i| potentials[rep.get(u, i)[0] as usize].get(u, i));
    Ok(Realization {
        mask,
        rep,
        threshold,
        inverse_propensity,
        treatment_prob,
        observed,
    })
}

impl SemiSynthWorld {
    /// A fresh realization from the same propensities and potentials.
    pub fn resample(&self, seed: u64) -> Result<Realization> {
        sample_realization(&self.propensity, &self.potentials, self.cfg.threshold_population, seed)
    }

    pub fn n_users(&self) -> usize {
        self.ratings.n_users
    }

    pub fn n_items(&self) -> usize {
        self.ratings.n_items
    }

    /// Propensity field of a realization: noisy exposure inverse times the treatment inverse.
    pub fn field(&self, real: &Realization, max_inverse: f64) -> Result<PropensityField> {
        Ok(
            PropensityField::from_inverse(self.n_users(), self.n_items(), real.inverse_propensity.clone())?
                .with_conditional(ConditionalModel::Binary(real.treatment_prob.clone()))
                .with_max_inverse(max_inverse),
        )
    }

    /// Like [`field`](Self::field) with the exact exposure inverse `1/p` in place of the noisy one.
    pub fn oracle_field(&self, real: &Realization, max_inverse: f64) -> Result<PropensityField> {
        let p_o = real.mask.n_observed() as f64 / self.propensity.len() as f64;
        let inv = self
            .propensity
            .iter()
            .map(|&p| if p > 0.0 { 1.0 / p } else { 1.0 / p_o })
            .collect();
        Ok(PropensityField::from_inverse(self.n_users(), self.n_items(), inv)?
            .with_conditional(ConditionalModel::Binary(real.treatment_prob.clone()))
            .with_max_inverse(max_inverse))
    }

    pub const FILES: [&'static str; 9] = [
        "ratings.tsv",
        "propensity.tsv",
        "unblocked.tsv",
        "observed_mask.tsv",
        "treatment.tsv",
        "potential_g0.tsv",
        "potential_g1.tsv",
        "inverse_propensity.tsv",
        "treatment_prob.tsv",
    ];

    /// Writes the nine world files and `manifest.txt` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (nu, ni) = (self.n_users(), self.n_items());
        let grid = |v: &[f64]| RatingMatrix {
            n_users: nu,
            n_items: ni,
            values: v.to_vec(),
        };
        let r = &self.realization;
        self.ratings.write_tsv(&dir.join(Self::FILES[0]))?;
        grid(&self.propensity).write_tsv(&dir.join(Self::FILES[1]))?;
        self.unblocked.write_tsv(&dir.join(Self::FILES[2]))?;
        r.mask.write_tsv(&dir.join(Self::FILES[3]))?;
        r.rep.write_tsv(&dir.join(Self::FILES[4]))?;
        self.potentials[0].write_tsv(&dir.join(Self::FILES[5]))?;
        self.potentials[1].write_tsv(&dir.join(Self::FILES[6]))?;
        grid(&r.inverse_propensity).write_tsv(&dir.join(Self::FILES[7]))?;
        grid(&r.treatment_prob).write_tsv(&dir.join(Self::FILES[8]))?;

        let mut m = KvDoc::with_header("nbdebias-world", 1);
        m.set("n_users", nu);
        m.set("n_items", ni);
        m.set("alpha", self.cfg.alpha);
        m.set("fraction", self.cfg.fraction);
        m.set("mask_users", self.cfg.mask_users);
        m.set("mask_items", self.cfg.mask_items);
        m.set("threshold_population", self.cfg.threshold_population.name());
        m.set("threshold", r.threshold);
        m.set("seed", self.cfg.seed);
        m.set("completion.dim", self.cfg.completion.dim);
        m.set("completion.lr", self.cfg.completion.lr);
        m.set("completion.weight_decay", self.cfg.completion.weight_decay);
        m.set("completion.epochs", self.cfg.completion.epochs);
        m.set("completion.batch_size", self.cfg.completion.batch_size);
        m.set("completion.seed", self.cfg.completion.seed);
        m.set("files", Self::FILES.join(" "));
        for f in Self::FILES {
            let bytes = std::fs::read(dir.join(f)).map_err(|e| Error::io(dir.join(f), e))?;
            m.set(&format!("sha256.{f}"), crate::textfmt::sha256_hex(&bytes));
        }
        m.write(&dir.join("manifest.txt"))
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let m = KvDoc::read(&dir.join("manifest.txt"))?;
        m.expect_header("nbdebias-world", 1)?;
        let (nu, ni) = (m.get_usize("n_users")?, m.get_usize("n_items")?);
        let cfg = SemiSynthConfig {
            alpha: m.get_f64("alpha")?,
            fraction: m.get_f64("fraction")?,
            mask_users: m.get_usize("mask_users")?,
            mask_items: m.get_usize("mask_items")?,
            threshold_population: ThresholdPopulation::parse(m.require("threshold_population")?)?,
            completion: CompletionConfig {
                dim: m.get_usize("completion.dim")?,
                lr: m.get_f64("completion.lr")?,
                weight_decay: m.get_f64("completion.weight_decay")?,
                epochs: m.get_usize("completion.epochs")?,
                batch_size: m.get_usize("completion.batch_size")?,
                seed: m
                    .require("completion.seed")?
                    .parse()
                    .map_err(|_| Error::Config("completion.seed".into()))?,
            },
            seed: m.require("seed")?.parse().map_err(|_| Error::Config("seed".into()))?,
        };
        let read = |k: usize| RatingMatrix::read_tsv(&dir.join(Self::FILES[k]), nu, ni);
        let threshold = m.get_f64("threshold")?;
        let rep = TreatmentRep::read_tsv(&dir.join(Self::FILES[4]), nu, ni, RepKind::BinaryThreshold(threshold))?;
        let potentials = [read(5)?, read(6)?];
        let observed = RatingMatrix::from_fn(nu, ni, |u, i| potentials[rep.get(u, i)[0] as usize].get(u, i));
        Ok(Self {
            cfg,
            ratings: read(0)?,
            propensity: read(1)?.values,
            unblocked: ObservationMask::read_tsv(&dir.join(Self::FILES[2]), nu, ni)?,
            realization: Realization {
                mask: ObservationMask::read_tsv(&dir.join(Self::FILES[3]), nu, ni)?,
                rep,
                threshold,
                inverse_propensity: read(7)?.values,
                treatment_prob: read(8)?.values,
                observed,
            },
            potentials,
        })
    }
}

/// The six prediction-matrix constructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionKind {
    One,
    Three,
    Four,
    Rotate,
    Skew,
    Crs,
}

impl PredictionKind {
    pub const ALL: [PredictionKind; 6] = [Self::One, Self::Three, Self::Four, Self::Rotate, Self::Skew, Self::Crs];

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ONE" => Ok(Self::One),
            "THREE" => Ok(Self::Three),
            "FOUR" => Ok(Self::Four),
            "ROTATE" => Ok(Self::Rotate),
            "SKEW" => Ok(Self::Skew),
            "CRS" => Ok(Self::Crs),
            _ => Err(Error::Config(format!("unknown prediction kind {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::One => "ONE",
            Self::Three => "THREE",
            Self::Four => "FOUR",
            Self::Rotate => "ROTATE",
            Self::Skew => "SKEW",
            Self::Crs => "CRS",
        }
    }
}

pub fn rotate_value(r: f64) -> f64 {
    if r >= 2.0 {
        r - 1.0
    } else {
        5.0
    }
}

pub fn crs_value(r: f64) -> f64 {
    if r <= 3.0 {
        2.0
    } else {
        4.0
    }
}

pub fn make_prediction_matrix(kind: PredictionKind, r: &RatingMatrix, seed: u64) -> Result<RatingMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = r.clone();
    match kind {
        PredictionKind::One | PredictionKind::Three | PredictionKind::Four => {
            let donor = match kind {
                PredictionKind::One => 1.0,
                PredictionKind::Three => 3.0,
                _ => 4.0,
            };
            let fives = r.values.iter().filter(|v| **v == 5.0).count();
            let mut donors: Vec<usize> = (0..r.values.len()).filter(|&p| r.values[p] == donor).collect();
            if donors.len() < fives {
                return Err(Error::Infeasible(format!(
                    "{}: {} ratings of {donor} cannot supply {fives} flips",
                    kind.name(),
                    donors.len()
                )));
            }
            donors.shuffle(&mut rng);
            for &p in &donors[..fives] {
                out.values[p] = 5.0;
            }
        }
        PredictionKind::Rotate => out.values.iter_mut().for_each(|v| *v = rotate_value(*v)),
        PredictionKind::Skew => {
            for v in out.values.iter_mut() {
                let n = Normal::new(*v, (6.0 - *v) / 2.0).map_err(|e| Error::invalid(e.to_string()))?;
                *v = n.sample(&mut rng).clamp(RATING_MIN, RATING_MAX);
            }
        }
        PredictionKind::Crs => out.values.iter_mut().for_each(|v| *v = crs_value(*v)),
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ratings_grid(nu: usize, ni: usize, seed: u64) -> RatingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RatingMatrix::from_fn(nu, ni, |_, _| rng.gen_range(1..=5) as f64)
    }

    #[test]
    fn propensity_formula() {
        let r = RatingMatrix::from_rows(&[vec![5.0, 1.0]]).unwrap();
        let p = gen_propensities(&r, 0.5, 0.05).unwrap();
        assert!((p[1] - p[0] / 8.0).abs() < 1e-15);
        let all5 = RatingMatrix::filled(10, 10, 5.0);
        let p = gen_propensities(&all5, 0.5, 0.05).unwrap();
        assert!(p.iter().all(|v| *v == 0.05));
        let r = ratings_grid(30, 40, 1);
        let p = gen_propensities(&r, 0.5, 0.05).unwrap();
        assert!((p.iter().sum::<f64>() - 0.05 * 1200.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_propensity() {
        let all1 = RatingMatrix::filled(4, 4, 1.0);
        assert!(matches!(gen_propensities(&all1, 0.5, 0.9), Err(Error::Infeasible(_))));
    }

    #[test]
    fn masking_contract() {
        let r = ratings_grid(30, 40, 2);
        let p = gen_propensities(&r, 0.5, 0.05).unwrap();
        let (same, kept) = apply_mask(&p, 30, 40, 0, 0, 1).unwrap();
        assert_eq!(same, p);
        assert_eq!(kept.n_observed(), 1200);
        let (zero, _) = apply_mask(&p, 30, 40, 30, 0, 1).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
        let (q, kept) = apply_mask(&p, 30, 40, 8, 10, 5).unwrap();
        assert!((q.iter().sum::<f64>() - p.iter().sum::<f64>()).abs() < 1e-9);
        for u in 0..30 {
            for i in 0..40 {
                if !kept.get(u, i) {
                    assert_eq!(q[u * 40 + i], 0.0);
                }
            }
        }
    }

    #[test]
    fn treatment_probability_limits() {
        let prop = vec![0.0; 9];
        let t = treatment_probabilities(&prop, 3, 3, 1.0);
        assert!(t.iter().all(|v| *v == 0.0));
        let prop = vec![1.0; 9];
        let t = treatment_probabilities(&prop, 3, 3, 4.0);
        assert!(t.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn treatment_probability_matches_enumeration() {
        let (nu, ni) = (3, 3);
        let prop = [0.1, 0.7, 0.3, 0.55, 0.2, 0.9, 0.05, 0.4, 0.65];
        for c in [1.0, 2.0, 3.0, 4.0] {
            let t = treatment_probabilities(&prop, nu, ni, c);
            let mut want = [0.0; 9];
            for bits in 0u32..(1 << 9) {
                let on = |k: usize| bits >> k & 1 == 1;
                let w: f64 = (0..9).map(|k| if on(k) { prop[k] } else { 1.0 - prop[k] }).product();
                for u in 0..nu {
                    for i in 0..ni {
                        let n = (0..ni).filter(|&j| j != i && on(u * ni + j)).count()
                            + (0..nu).filter(|&v| v != u && on(v * ni + i)).count();
                        if n as f64 >= c {
                            want[u * ni + i] += w;
                        }
                    }
                }
            }
            for k in 0..9 {
                // the pair's own exposure does not enter its count
                assert!(
                    (t[k] - want[k]).abs() < 1e-12,
                    "c {c} pair {k}: {} vs {}",
                    t[k],
                    want[k]
                );
            }
        }
    }

    #[test]
    fn treatment_probability_matches_monte_carlo() {
        let (nu, ni) = (40, 50);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let prop: Vec<f64> = (0..nu * ni).map(|_| rng.gen_range(0.02..0.3)).collect();
        let c = 12.0;
        let t = treatment_probabilities(&prop, nu, ni, c);
        let (u, i) = (7, 9);
        let reps = 20_000;
        let mut hits = 0;
        for _ in 0..reps {
            let mut n = 0;
            for j in 0..ni {
                if j != i && rng.gen_bool(prop[u * ni + j]) {
                    n += 1;
                }
            }
            for v in 0..nu {
                if v != u && rng.gen_bool(prop[v * ni + i]) {
                    n += 1;
                }
            }
            if n as f64 >= c {
                hits += 1;
            }
        }
        let mc = hits as f64 / reps as f64;
        assert!((mc - t[u * ni + i]).abs() < 0.03, "{mc} vs {}", t[u * ni + i]);
    }

    #[test]
    fn rotate_and_crs_rules() {
        assert_eq!(rotate_value(1.0), 5.0);
        assert_eq!(rotate_value(3.0), 2.0);
        assert_eq!(rotate_value(5.0), 4.0);
        assert_eq!([2.0, 3.0, 4.0, 5.0].map(crs_value), [2.0, 2.0, 4.0, 4.0]);
        let r = ratings_grid(10, 10, 4);
        let mut m = r.clone();
        for _ in 0..5 {
            m = make_prediction_matrix(PredictionKind::Rotate, &m, 0).unwrap();
        }
        assert_eq!(m, r);
    }

    #[test]
    fn one_doubles_fives() {
        let cycle = [1.0, 1.0, 2.0, 3.0, 3.0, 4.0, 4.0, 5.0];
        let r = RatingMatrix::from_fn(20, 20, |u, i| cycle[(u * 20 + i) % 8]);
        let fives = r.values.iter().filter(|v| **v == 5.0).count();
        for kind in [PredictionKind::One, PredictionKind::Three, PredictionKind::Four] {
            let m = make_prediction_matrix(kind, &r, 1).unwrap();
            assert_eq!(m.values.iter().filter(|v| **v == 5.0).count(), 2 * fives);
            assert!(m.values.iter().all(|v| (1.0..=5.0).contains(v)));
        }
        let no_ones = RatingMatrix::filled(3, 3, 5.0);
        assert!(make_prediction_matrix(PredictionKind::One, &no_ones, 0).is_err());
    }

    #[test]
    fn skew_spread() {
        let r = RatingMatrix::filled(100, 100, 5.0);
        let m = make_prediction_matrix(PredictionKind::Skew, &r, 9).unwrap();
        assert!(m.values.iter().all(|v| (1.0..=5.0).contains(v)));
        // unclipped draws for r=5 are N(5, 0.5); the lower half is untouched by clipping
        let below: Vec<f64> = m.values.iter().filter(|v| **v < 5.0).map(|v| 5.0 - v).collect();
        let rms = (below.iter().map(|d| d * d).sum::<f64>() / below.len() as f64).sqrt();
        assert!((rms - 0.5).abs() < 0.05, "{rms}");
    }

    #[test]
    fn completion_recovers_planted_rank_two() {
        let (nu, ni) = (40, 40);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a: Vec<[f64; 2]> = (0..nu)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let b: Vec<[f64; 2]> = (0..ni)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let truth = RatingMatrix::from_fn(nu, ni, |u, i| round_clip(3.0 + a[u][0] * b[i][0] + a[u][1] * b[i][1]));
        let rows: Vec<Interaction> = (0..nu * ni)
            .filter(|_| rng.gen_bool(0.5))
            .map(|p| Interaction {
                user: p / ni,
                item: p % ni,
                rating: truth.values[p],
            })
            .collect();
        let cfg = CompletionConfig {
            dim: 2,
            epochs: 200,
            lr: 0.02,
            batch_size: 64,
            ..Default::default()
        };
        let m = complete_ratings(nu, ni, &rows, &cfg).unwrap();
        assert!(m.values.iter().all(|v| [1.0, 2.0, 3.0, 4.0, 5.0].contains(v)));
        let mae = rows
            .iter()
            .map(|r| (m.get(r.user, r.item) - r.rating).abs())
            .sum::<f64>()
            / rows.len() as f64;
        assert!(mae < 0.5, "{mae}");
        assert_eq!(m, complete_ratings(nu, ni, &rows, &cfg).unwrap());
    }

    fn small_world(seed: u64) -> SemiSynthWorld {
        let src = synthetic_source(&SourceConfig {
            n_users: 60,
            n_items: 60,
            density: 0.2,
            seed,
            ..Default::default()
        })
        .unwrap();
        let cfg = SemiSynthConfig {
            fraction: 0.1,
            mask_users: 0,
            mask_items: 0,
            completion: CompletionConfig {
                epochs: 10,
                ..Default::default()
            },
            seed,
            ..Default::default()
        };
        build_world(&src, &cfg).unwrap()
    }

    #[test]
    fn world_invariants() {
        let w = small_world(1);
        let r = &w.realization;
        let n = (w.n_users() * w.n_items()) as f64;
        let expect: f64 = w.propensity.iter().sum();
        let var: f64 = w.propensity.iter().map(|p| p * (1.0 - p)).sum();
        assert!((r.mask.n_observed() as f64 - expect).abs() < 4.0 * var.sqrt());
        assert!((expect - 0.1 * n).abs() < 1e-6);
        let p_o = r.mask.n_observed() as f64 / n;
        for (k, &p) in w.propensity.iter().enumerate() {
            let (lo, hi) = if 1.0 / p < 1.0 / p_o {
                (1.0 / p, 1.0 / p_o)
            } else {
                (1.0 / p_o, 1.0 / p)
            };
            let v = r.inverse_propensity[k];
            assert!(v >= lo * (1.0 - 1e-12) && v <= hi * (1.0 + 1e-12));
        }
        // treatment stored in the world agrees with the sampled mask
        let again = compute_rep(
            NeighborhoodMode::RowColumn,
            &r.mask,
            RepKind::BinaryThreshold(r.threshold),
        )
        .unwrap();
        assert_eq!(again.values(), r.rep.values());
        assert_eq!(w, small_world(1));
    }

    #[test]
    fn world_directory_round_trip() {
        let w = small_world(2);
        let dir = tempfile::tempdir().unwrap();
        w.write_dir(dir.path()).unwrap();
        let back = SemiSynthWorld::read_dir(dir.path()).unwrap();
        assert_eq!(back, w);
        let m = KvDoc::read(&dir.path().join("manifest.txt")).unwrap();
        assert_eq!(m.require("files").unwrap().split(' ').count(), 9);
    }
}
