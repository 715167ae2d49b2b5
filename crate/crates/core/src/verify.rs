//! Monte-Carlo and quadrature checks of the kernel estimators' bias, variance and bandwidth.
//!
//! The reference model has scalar `x ~ U(0,1)`, exposure `P(o=1|x)` logistic in `x`, and a
//! treatment density among exposed units that is quadratic in `g`:
//! `p(g|x,o=1) = (b + (g - m(x))²) / N(x)` on `[0,1]`. Because the density is quadratic and the
//! kernel symmetric, the kernel bias is exactly `h² μ₂ p''/(2p)` with no higher-order terms.
//! Outcomes are `μ(x) + ε` independent of `g`; the prediction is `μ(x) + shift`; loss is squared error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::data::{ObservationMask, RatingMatrix};
use crate::error::{Error, Result};
use crate::estimators::{ips_loss, n_dr_loss, n_ips_loss, ErrorSource, NeighborhoodInputs};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::loss::LossSpec;
use crate::neighborhood::{RepDistribution, TreatmentRep};
use crate::numeric::{gauss_legendre, gauss_legendre_on, mean_std, ols_slope, sigmoid};
use crate::propensity::{ConditionalModel, PropensityField};

const QUAD_NODES: usize = 64;
const INNER_NODES: usize = 48;

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSpec {
    pub n_units: usize,
    pub exposure_intercept: f64,
    pub exposure_slope: f64,
    /// Floor `b` of the treatment density.
    pub floor: f64,
    /// `m(x) = mode + mode_slope * (x - 0.5)`.
    pub mode: f64,
    pub mode_slope: f64,
    pub outcome_intercept: f64,
    pub outcome_slope: f64,
    /// Prediction minus outcome mean.
    pub prediction_shift: f64,
    pub noise_sd: f64,
    pub pi: RepDistribution,
    pub kernel: KernelFamily,
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        Self {
            n_units: 2000,
            exposure_intercept: 1.5,
            exposure_slope: 0.8,
            floor: 0.05,
            mode: 0.5,
            mode_slope: 0.05,
            outcome_intercept: 3.0,
            outcome_slope: 1.0,
            prediction_shift: -0.5,
            noise_sd: 0.05,
            pi: RepDistribution::point_mass(vec![0.5]),
            kernel: KernelFamily::Epanechnikov,
        }
    }
}

/// How the doubly robust estimator imputes the outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Imputation {
    /// Imputed error equals `E[δ | x]`, so the correction has mean zero.
    Oracle,
    /// Imputed outcome `μ(x) + shift`.
    Shifted(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    Ips,
    NIps,
    NDr(Imputation),
}

impl Estimator {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ips" => Ok(Self::Ips),
            "n-ips" => Ok(Self::NIps),
            "n-dr" => Ok(Self::NDr(Imputation::Shifted(0.25))),
            "n-dr-oracle" => Ok(Self::NDr(Imputation::Oracle)),
            _ => Err(Error::Config(format!("unknown estimator {s:?}"))),
        }
    }

    pub fn name(self) -> String {
        match self {
            Self::Ips => "ips".into(),
            Self::NIps => "n-ips".into(),
            Self::NDr(Imputation::Oracle) => "n-dr-oracle".into(),
            Self::NDr(Imputation::Shifted(s)) => format!("n-dr(shift={s})"),
        }
    }

    /// File-name-safe label; the imputation shift is dropped.
    pub fn slug(self) -> &'static str {
        match self {
            Self::Ips => "ips",
            Self::NIps => "n-ips",
            Self::NDr(Imputation::Oracle) => "n-dr-oracle",
            Self::NDr(Imputation::Shifted(_)) => "n-dr",
        }
    }
}

/// One sampled population.
#[derive(Debug, Clone)]
pub struct Replication {
    pub x: Vec<f64>,
    pub exposed: Vec<bool>,
    pub treatment: Vec<f64>,
    pub outcome: Vec<f64>,
}

impl ReferenceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_units == 0 {
            return Err(Error::Config("reference spec needs at least one unit".into()));
        }
        if !(self.floor > 0.0) || !(self.noise_sd >= 0.0) {
            return Err(Error::Config(
                "density floor must be positive and noise non-negative".into(),
            ));
        }
        for x in [0.0, 1.0] {
            let m = self.treatment_mode(x);
            if !(0.0..=1.0).contains(&m) {
                return Err(Error::Config(format!("treatment mode {m} leaves [0, 1]")));
            }
        }
        if self.pi.dim() != 1 || self.pi.points.iter().any(|g| !(0.0..=1.0).contains(&g[0])) {
            return Err(Error::Config("target treatments must be scalars in [0, 1]".into()));
        }
        if self.kernel == KernelFamily::ExactMatch {
            return Err(Error::Config("continuous treatments need a smoothing kernel".into()));
        }
        Ok(())
    }

    pub fn exposure(&self, x: f64) -> f64 {
        sigmoid(self.exposure_intercept + self.exposure_slope * x)
    }

    pub fn treatment_mode(&self, x: f64) -> f64 {
        self.mode + self.mode_slope * (x - 0.5)
    }

    fn normalizer(&self, x: f64) -> f64 {
        let m = self.treatment_mode(x);
        self.floor + ((1.0 - m).powi(3) + m.powi(3)) / 3.0
    }

    /// `p(g | x, o=1)`.
    pub fn treatment_density(&self, g: f64, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&g) {
            return 0.0;
        }
        let m = self.treatment_mode(x);
        (self.floor + (g - m).powi(2)) / self.normalizer(x)
    }

    /// `∂²/∂g² p(g | x, o=1)`, constant in `g`.
    pub fn treatment_curvature(&self, x: f64) -> f64 {
        2.0 / self.normalizer(x)
    }

    pub fn sample_treatment(&self, x: f64, rng: &mut impl Rng) -> f64 {
        let m = self.treatment_mode(x);
        let bound = (self.floor + m.max(1.0 - m).powi(2)) / self.normalizer(x);
        loop {
            let g: f64 = rng.gen();
            if rng.gen::<f64>() * bound <= self.treatment_density(g, x) {
                return g;
            }
        }
    }

    pub fn outcome_mean(&self, x: f64) -> f64 {
        self.outcome_intercept + self.outcome_slope * x
    }

    pub fn prediction(&self, x: f64) -> f64 {
        self.outcome_mean(x) + self.prediction_shift
    }

    /// `E[δ | x]` for squared error.
    fn error_mean(&self) -> f64 {
        self.prediction_shift.powi(2) + self.noise_sd.powi(2)
    }

    /// `E[δ² | x]` for squared error with Gaussian noise.
    fn error_second_moment(&self) -> f64 {
        let (a, s) = (self.prediction_shift, self.noise_sd);
        a.powi(4) + 6.0 * a * a * s * s + 3.0 * s.powi(4)
    }

    /// Imputed outcome, or `None` when the estimator has no imputation.
    pub fn imputed_outcome(&self, x: f64, est: Estimator) -> Option<f64> {
        match est {
            Estimator::NDr(Imputation::Shifted(s)) => Some(self.outcome_mean(x) + s),
            Estimator::NDr(Imputation::Oracle) => {
                let dir = if self.prediction_shift < 0.0 { -1.0 } else { 1.0 };
                Some(self.prediction(x) - dir * self.error_mean().sqrt())
            }
            _ => None,
        }
    }

    fn imputed_error(&self, x: f64, est: Estimator) -> f64 {
        self.imputed_outcome(x, est)
            .map_or(0.0, |m| (self.prediction(x) - m).powi(2))
    }

    fn quad(&self, f: impl Fn(f64) -> f64) -> f64 {
        let (nodes, weights) = gauss_legendre_on(QUAD_NODES, 0.0, 1.0);
        nodes.iter().zip(&weights).map(|(x, w)| w * f(*x)).sum()
    }

    /// Population value of the neighborhood ideal loss.
    pub fn ideal_loss(&self) -> f64 {
        // δ does not depend on g, so every target treatment gives the same value
        self.quad(|_| self.error_mean())
    }

    /// Coefficient `B` of the leading bias `B h²`.
    pub fn bias_coefficient(&self, est: Estimator) -> Result<f64> {
        let mu2 = self.kernel.second_moment()?;
        if est == Estimator::Ips {
            return Ok(0.0);
        }
        let mut b = 0.0;
        for (g, w) in self.pi.points.iter().zip(&self.pi.weights) {
            b += w * self.quad(|x| {
                (self.error_mean() - self.imputed_error(x, est)) * self.treatment_curvature(x)
                    / self.treatment_density(g[0], x)
            });
        }
        Ok(0.5 * mu2 * b)
    }

    /// Scale against which a vanishing bias coefficient is judged.
    fn bias_scale(&self) -> Result<f64> {
        let mu2 = self.kernel.second_moment()?;
        let mut b = 0.0;
        for (g, w) in self.pi.points.iter().zip(&self.pi.weights) {
            b += w * self.quad(|x| self.error_mean() * self.treatment_curvature(x) / self.treatment_density(g[0], x));
        }
        Ok(0.5 * mu2 * b)
    }

    /// Leading variance constant `ψ` in `Var ≈ ψ / (|D| h)`, in the small-bandwidth limit where
    /// distinct target treatments do not share kernel mass.
    pub fn variance_constant(&self, est: Estimator) -> Result<f64> {
        let roughness = self.kernel.self_convolution(0.0)?;
        let mut psi = 0.0;
        for (g, w) in self.pi.points.iter().zip(&self.pi.weights) {
            psi += w
                * w
                * self.quad(|x| {
                    let dh = self.imputed_error(x, est);
                    let second = self.error_second_moment() - 2.0 * dh * self.error_mean() + dh * dh;
                    second / (self.exposure(x) * self.treatment_density(g[0], x))
                });
        }
        Ok(roughness * psi)
    }

    pub fn analytic_bias(&self, est: Estimator, h: f64) -> Result<f64> {
        Ok(self.bias_coefficient(est)? * h * h)
    }

    /// `E[W | x]` and `E[W² | x]` for `W = Σ_k π_k K_h(G - g_k) / p(g_k | x)` with `G` drawn
    /// from the exposed treatment density.
    fn weight_moments(&self, x: f64, h: f64, rule: &(Vec<f64>, Vec<f64>)) -> (f64, f64) {
        let mut cuts = vec![0.0, 1.0];
        for g in &self.pi.points {
            cuts.extend([g[0] - h, g[0] + h].into_iter().filter(|c| *c > 0.0 && *c < 1.0));
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let inv: Vec<f64> = self
            .pi
            .points
            .iter()
            .map(|g| 1.0 / self.treatment_density(g[0], x))
            .collect();
        let (mut m1, mut m2) = (0.0, 0.0);
        for piece in cuts.windows(2) {
            let (mid, half) = (0.5 * (piece[0] + piece[1]), 0.5 * (piece[1] - piece[0]));
            for (t, w) in rule.0.iter().zip(&rule.1) {
                let g = mid + half * t;
                let mut wg = 0.0;
                for ((gk, pk), inv_k) in self.pi.points.iter().zip(&self.pi.weights).zip(&inv) {
                    wg += pk * self.kernel.evaluate((g - gk[0]) / h) / h * inv_k;
                }
                let mass = half * w * self.treatment_density(g, x);
                m1 += mass * wg;
                m2 += mass * wg * wg;
            }
        }
        (m1, m2)
    }

    /// Exact mean and variance of the estimate over populations of `n_units`, by quadrature.
    pub fn exact_moments(&self, est: Estimator, h: f64) -> Result<(f64, f64)> {
        if self.kernel == KernelFamily::ExactMatch || !(h > 0.0) {
            return Err(Error::invalid(
                "exact moments need a smoothing kernel and positive bandwidth",
            ));
        }
        let rule = gauss_legendre(INNER_NODES);
        let (ed, ed2) = (self.error_mean(), self.error_second_moment());
        let per_x = |x: f64| -> (f64, f64) {
            let p = self.exposure(x);
            if est == Estimator::Ips {
                return (ed, ed2 / p);
            }
            let dh = self.imputed_error(x, est);
            let res2 = ed2 - 2.0 * dh * ed + dh * dh;
            let (w1, w2) = self.weight_moments(x, h, &rule);
            (dh + w1 * (ed - dh), dh * dh + 2.0 * dh * w1 * (ed - dh) + w2 * res2 / p)
        };
        let m1 = self.quad(|x| per_x(x).0);
        let m2 = self.quad(|x| per_x(x).1);
        Ok((m1, (m2 - m1 * m1) / self.n_units as f64))
    }

    /// `|D| h Var` at bandwidth `h`; tends to [`variance_constant`](Self::variance_constant) as `h → 0`.
    pub fn variance_constant_at(&self, est: Estimator, h: f64) -> Result<f64> {
        Ok(self.exact_moments(est, h)?.1 * self.n_units as f64 * h)
    }

    pub fn sample(&self, seed: u64) -> Replication {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, self.noise_sd.max(f64::MIN_POSITIVE)).expect("finite sd");
        let n = self.n_units;
        let mut rep = Replication {
            x: Vec::with_capacity(n),
            exposed: Vec::with_capacity(n),
            treatment: Vec::with_capacity(n),
            outcome: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let x: f64 = rng.gen();
            let o = rng.gen_bool(self.exposure(x));
            let g = self.sample_treatment(x, &mut rng);
            let eps = if self.noise_sd > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            rep.x.push(x);
            rep.exposed.push(o);
            rep.treatment.push(g);
            rep.outcome.push(self.outcome_mean(x) + eps);
        }
        rep
    }

    /// Estimates on one replication at every bandwidth, through the library estimators.
    pub fn estimates(&self, rep: &Replication, est: Estimator, bandwidths: &[f64]) -> Result<Vec<f64>> {
        let n = rep.x.len();
        let rhat = RatingMatrix::from_fn(1, n, |_, i| self.prediction(rep.x[i]));
        let robs = RatingMatrix::from_fn(1, n, |_, i| rep.outcome[i]);
        let mask = ObservationMask::from_fn(1, n, |_, i| rep.exposed[i]);
        let exposure: Vec<f64> = rep.x.iter().map(|&x| self.exposure(x)).collect();
        let k = self.pi.len();
        let mut inv_cond = Vec::with_capacity(n * k);
        for &x in &rep.x {
            for g in &self.pi.points {
                inv_cond.push(1.0 / self.treatment_density(g[0], x));
            }
        }
        let field = PropensityField::from_probabilities(1, n, &exposure)?
            .with_conditional(ConditionalModel::Tabulated {
                points: self.pi.points.clone(),
                inv: inv_cond,
            })
            .with_max_inverse(f64::INFINITY)
            .with_min_inverse(0.0);
        let loss = LossSpec::SquaredError;
        if est == Estimator::Ips {
            let v = ips_loss(&rhat, &robs, &mask, &field, loss)?;
            return Ok(vec![v; bandwidths.len()]);
        }
        let treat = TreatmentRep::custom(1, n, 1, rep.treatment.clone())?;
        let imputed: Option<Vec<RatingMatrix>> = match est {
            Estimator::NDr(_) => Some(
                (0..k)
                    .map(|_| RatingMatrix::from_fn(1, n, |_, i| self.imputed_outcome(rep.x[i], est).unwrap_or(0.0)))
                    .collect(),
            ),
            _ => None,
        };
        bandwidths
            .iter()
            .map(|&h| {
                let kernel = KernelSpec::scalar(self.kernel, h)?;
                let inputs = NeighborhoodInputs {
                    rhat: &rhat,
                    errors: ErrorSource::Observed(&robs),
                    mask: &mask,
                    rep: &treat,
                    field: &field,
                    pi: &self.pi,
                    kernel: &kernel,
                    loss,
                };
                Ok(match &imputed {
                    Some(m) => n_dr_loss(&inputs, m)?.integrated,
                    None => n_ips_loss(&inputs)?.integrated,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub h: f64,
    pub mean: f64,
    pub bias: f64,
    /// Variance over replications with divisor `R`, so `mse = bias² + variance`.
    pub variance: f64,
    pub mse: f64,
    pub std_error: f64,
    pub t_stat: f64,
    pub analytic_bias: f64,
    /// Exact variance of the estimate by quadrature.
    pub predicted_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub estimator: String,
    pub n_units: usize,
    pub replications: usize,
    pub ideal: f64,
    pub rows: Vec<SweepRow>,
    /// Slope of `ln|bias|` on `ln h`.
    pub bias_slope: f64,
    /// Slope of `ln variance` on `ln(1 / (|D| h))`.
    pub variance_slope: f64,
}

pub const SWEEP_HEADER: &str = "h,bias,variance,mse";

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# estimator={} n_units={} replications={} ideal={} bias_slope={} variance_slope={}\n{SWEEP_HEADER}\n",
            self.estimator, self.n_units, self.replications, self.ideal, self.bias_slope, self.variance_slope
        );
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.h, r.bias, r.variance, r.mse));
        }
        s
    }

    pub fn min_mse(&self) -> f64 {
        self.rows.iter().map(|r| r.mse).fold(f64::INFINITY, f64::min)
    }
}

fn check_grid(bandwidths: &[f64], replications: usize) -> Result<()> {
    if bandwidths.is_empty() || bandwidths.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
        return Err(Error::Config("bandwidth grid must be non-empty and positive".into()));
    }
    if replications < 2 {
        return Err(Error::Config("need at least two replications".into()));
    }
    Ok(())
}

/// Empirical bias, variance and MSE per bandwidth over `replications` independent populations.
///
/// Replication `r` is seeded with `seed ^ r`; the same populations are reused across bandwidths.
pub fn verify_bias_variance(
    spec: &ReferenceSpec,
    est: Estimator,
    bandwidths: &[f64],
    replications: usize,
    seed: u64,
) -> Result<SweepReport> {
    spec.validate()?;
    check_grid(bandwidths, replications)?;
    let per_rep: Vec<Vec<f64>> = (0..replications)
        .into_par_iter()
        .map(|r| spec.estimates(&spec.sample(seed ^ r as u64), est, bandwidths))
        .collect::<Result<_>>()?;
    let ideal = spec.ideal_loss();
    let rr = replications as f64;
    let mut rows = Vec::with_capacity(bandwidths.len());
    for (j, &h) in bandwidths.iter().enumerate() {
        let vals: Vec<f64> = per_rep.iter().map(|v| v[j]).collect();
        if let Some(v) = vals.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("estimate {v} at h={h}")));
        }
        let (mean, sd) = mean_std(&vals);
        let bias = mean - ideal;
        let variance = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rr;
        let mse = vals.iter().map(|v| (v - ideal).powi(2)).sum::<f64>() / rr;
        let std_error = sd / rr.sqrt();
        let t_stat = if std_error > 0.0 {
            bias / std_error
        } else if bias == 0.0 {
            0.0
        } else {
            bias.signum() * f64::INFINITY
        };
        rows.push(SweepRow {
            h,
            mean,
            bias,
            variance,
            mse,
            std_error,
            t_stat,
            analytic_bias: spec.analytic_bias(est, h)?,
            predicted_variance: spec.exact_moments(est, h)?.1,
        });
    }
    let (bias_slope, variance_slope) = if rows.len() >= 2 {
        let lh: Vec<f64> = rows.iter().map(|r| r.h.ln()).collect();
        let lb: Vec<f64> = rows.iter().map(|r| r.bias.abs().ln()).collect();
        let linv: Vec<f64> = rows.iter().map(|r| (1.0 / (spec.n_units as f64 * r.h)).ln()).collect();
        let lv: Vec<f64> = rows.iter().map(|r| r.variance.ln()).collect();
        (ols_slope(&lh, &lb), ols_slope(&linv, &lv))
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(SweepReport {
        estimator: est.name(),
        n_units: spec.n_units,
        replications,
        ideal,
        rows,
        bias_slope,
        variance_slope,
    })
}

/// Bandwidth minimizing the leading-order MSE `B² h⁴ + ψ / (|D| h)`.
pub fn optimal_bandwidth(spec: &ReferenceSpec, est: Estimator) -> Result<f64> {
    spec.validate()?;
    if est == Estimator::Ips {
        return Err(Error::invalid("IPS has no bandwidth"));
    }
    let b = spec.bias_coefficient(est)?;
    if b.abs() <= 1e-12 * spec.bias_scale()?.abs() {
        return Err(Error::Infeasible(
            "leading bias vanishes, so the optimal bandwidth is unbounded".into(),
        ));
    }
    let psi = spec.variance_constant(est)?;
    Ok((psi / (4.0 * spec.n_units as f64 * b * b)).powf(0.2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthSweep {
    pub h_star: f64,
    pub grid: SweepReport,
    pub at_optimum: SweepRow,
}

impl BandwidthSweep {
    /// `MSE(h*) / min over the grid`.
    pub fn mse_ratio(&self) -> f64 {
        self.at_optimum.mse / self.grid.min_mse()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# h_star={} mse_ratio={}\n", self.h_star, self.mse_ratio());
        s.push_str(&self.grid.to_csv());
        s
    }
}

/// Empirical MSE over a grid and at the computed optimal bandwidth, on shared populations.
pub fn sweep_bandwidth(
    spec: &ReferenceSpec,
    est: Estimator,
    grid: &[f64],
    replications: usize,
    seed: u64,
) -> Result<BandwidthSweep> {
    let h_star = optimal_bandwidth(spec, est)?;
    let mut hs = grid.to_vec();
    hs.push(h_star);
    let mut report = verify_bias_variance(spec, est, &hs, replications, seed)?;
    let at_optimum = report.rows.pop().expect("h* row");
    // slopes refit on the grid alone
    let grid_report = verify_from_rows(spec, report, grid.len());
    Ok(BandwidthSweep {
        h_star,
        grid: grid_report,
        at_optimum,
    })
}

fn verify_from_rows(spec: &ReferenceSpec, mut report: SweepReport, n: usize) -> SweepReport {
    report.rows.truncate(n);
    if report.rows.len() >= 2 {
        let lh: Vec<f64> = report.rows.iter().map(|r| r.h.ln()).collect();
        let lb: Vec<f64> = report.rows.iter().map(|r| r.bias.abs().ln()).collect();
        let linv: Vec<f64> = report
            .rows
            .iter()
            .map(|r| (1.0 / (spec.n_units as f64 * r.h)).ln())
            .collect();
        let lv: Vec<f64> = report.rows.iter().map(|r| r.variance.ln()).collect();
        report.bias_slope = ols_slope(&lh, &lb);
        report.variance_slope = ols_slope(&linv, &lv);
    }
    report
}

/// Small discrete population for the gap between the exposed-outcome ideal loss and the
/// natural-treatment ideal loss, under counting measure over treatments.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    pub x_prob: Vec<f64>,
    /// `P(o=1 | x)`.
    pub exposure: Vec<f64>,
    /// `P(g | x, o)` indexed `[x][o][g]`.
    pub treatment: Vec<[Vec<f64>; 2]>,
    pub prediction: Vec<f64>,
    /// Outcome law of `r(1, g)` as `(value, probability)` pairs, indexed `[x][g]`.
    pub outcomes: Vec<Vec<Vec<(f64, f64)>>>,
    pub loss: LossSpec,
}

impl DiscreteModel {
    /// A fixed three-context model with binary treatment that depends on exposure.
    pub fn example() -> Self {
        Self {
            x_prob: vec![0.2, 0.5, 0.3],
            exposure: vec![0.3, 0.6, 0.85],
            treatment: vec![
                [vec![0.7, 0.3], vec![0.2, 0.8]],
                [vec![0.5, 0.5], vec![0.35, 0.65]],
                [vec![0.25, 0.75], vec![0.6, 0.4]],
            ],
            prediction: vec![3.0, 2.5, 4.2],
            outcomes: vec![
                vec![vec![(1.0, 0.5), (4.0, 0.5)], vec![(2.0, 0.25), (5.0, 0.75)]],
                vec![vec![(2.0, 1.0)], vec![(1.0, 0.4), (3.0, 0.6)]],
                vec![vec![(5.0, 0.3), (3.0, 0.7)], vec![(1.0, 0.6), (2.0, 0.4)]],
            ],
            loss: LossSpec::SquaredError,
        }
    }

    /// Same model with the treatment law made independent of exposure.
    pub fn with_independent_treatment(&self) -> Self {
        let mut m = self.clone();
        for t in &mut m.treatment {
            t[0] = t[1].clone();
        }
        m
    }

    pub fn n_treatments(&self) -> usize {
        self.treatment[0][1].len()
    }

    /// `E[δ(g) | x]`.
    pub fn conditional_error(&self, x: usize, g: usize) -> f64 {
        self.outcomes[x][g]
            .iter()
            .map(|(r, p)| p * self.loss.value(self.prediction[x], *r))
            .sum()
    }

    /// `P(g | x)` with exposure integrated out.
    pub fn marginal_treatment(&self, x: usize, g: usize) -> f64 {
        let e = self.exposure[x];
        (1.0 - e) * self.treatment[x][0][g] + e * self.treatment[x][1][g]
    }

    /// Expected loss of the outcome revealed on exposure, by enumeration of `(x, g, r)`.
    pub fn exposed_ideal(&self) -> f64 {
        let mut s = 0.0;
        for (x, px) in self.x_prob.iter().enumerate() {
            for (g, pg) in self.treatment[x][1].iter().enumerate() {
                for (r, pr) in &self.outcomes[x][g] {
                    s += px * pg * pr * self.loss.value(self.prediction[x], *r);
                }
            }
        }
        s
    }

    /// Expected loss with treatments at their natural law, by enumeration of `(x, o, g, r)`.
    pub fn natural_ideal(&self) -> f64 {
        let mut s = 0.0;
        for (x, px) in self.x_prob.iter().enumerate() {
            for (o, po) in [1.0 - self.exposure[x], self.exposure[x]].iter().enumerate() {
                for (g, pg) in self.treatment[x][o].iter().enumerate() {
                    for (r, pr) in &self.outcomes[x][g] {
                        s += px * po * pg * pr * self.loss.value(self.prediction[x], *r);
                    }
                }
            }
        }
        s
    }

    /// `Σ_g E_x[ E[δ(g)|x] (P(g|x) - P(g|x, o=1)) ]`.
    pub fn selection_gap(&self) -> f64 {
        let mut s = 0.0;
        for g in 0..self.n_treatments() {
            for (x, px) in self.x_prob.iter().enumerate() {
                s += px * self.conditional_error(x, g) * (self.marginal_treatment(x, g) - self.treatment[x][1][g]);
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_is_normalized_and_curvature_matches() {
        let spec = ReferenceSpec::default();
        for x in [0.0, 0.3, 1.0] {
            let (nodes, w) = gauss_legendre_on(64, 0.0, 1.0);
            let mass: f64 = nodes
                .iter()
                .zip(&w)
                .map(|(g, w)| w * spec.treatment_density(*g, x))
                .sum();
            assert!((mass - 1.0).abs() < 1e-12);
            let (g, e) = (0.4, 1e-4);
            let fd = (spec.treatment_density(g + e, x) - 2.0 * spec.treatment_density(g, x)
                + spec.treatment_density(g - e, x))
                / (e * e);
            assert!((fd - spec.treatment_curvature(x)).abs() < 1e-5);
        }
    }

    #[test]
    fn rejection_sampler_matches_density() {
        let spec = ReferenceSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 200_000;
        let below = (0..n).filter(|_| spec.sample_treatment(0.5, &mut rng) < 0.3).count() as f64 / n as f64;
        let (nodes, w) = gauss_legendre_on(64, 0.0, 0.3);
        let want: f64 = nodes
            .iter()
            .zip(&w)
            .map(|(g, w)| w * spec.treatment_density(*g, 0.5))
            .sum();
        assert!((below - want).abs() < 0.005, "{below} vs {want}");
    }

    #[test]
    fn oracle_imputation_has_no_leading_bias() {
        let spec = ReferenceSpec::default();
        let b = spec.bias_coefficient(Estimator::NDr(Imputation::Oracle)).unwrap();
        assert!(b.abs() < 1e-14);
        assert!(optimal_bandwidth(&spec, Estimator::NDr(Imputation::Oracle)).is_err());
    }

    #[test]
    fn exact_moments_match_leading_terms() {
        let spec = ReferenceSpec::default();
        for est in [Estimator::NIps, Estimator::NDr(Imputation::Shifted(0.25))] {
            let h = 0.02;
            let (mean, _) = spec.exact_moments(est, h).unwrap();
            let bias = mean - spec.ideal_loss();
            assert!((bias - spec.analytic_bias(est, h).unwrap()).abs() < 1e-12, "{bias}");
            let psi = spec.variance_constant(est).unwrap();
            let at = spec.variance_constant_at(est, 1e-4).unwrap();
            assert!((at / psi - 1.0).abs() < 1e-3, "{at} vs {psi}");
        }
        let (mean, var) = spec.exact_moments(Estimator::Ips, 0.1).unwrap();
        assert!((mean - spec.ideal_loss()).abs() < 1e-12);
        assert!(var > 0.0);
    }

    #[test]
    fn optimal_bandwidth_scales_with_population() {
        let spec = ReferenceSpec::default();
        let est = Estimator::NDr(Imputation::Shifted(0.25));
        let h1 = optimal_bandwidth(&spec, est).unwrap();
        let h2 = optimal_bandwidth(
            &ReferenceSpec {
                n_units: 4000,
                ..spec.clone()
            },
            est,
        )
        .unwrap();
        assert!((h2 / h1 - 2f64.powf(-0.2)).abs() < 1e-12);
    }

    #[test]
    fn sweep_mse_decomposes() {
        let spec = ReferenceSpec {
            n_units: 300,
            ..ReferenceSpec::default()
        };
        let rep = verify_bias_variance(&spec, Estimator::NIps, &[0.1, 0.2], 20, 1).unwrap();
        for r in &rep.rows {
            assert!((r.mse - (r.bias * r.bias + r.variance)).abs() < 1e-9);
        }
        assert!(rep.to_csv().lines().any(|l| l == SWEEP_HEADER));
    }

    #[test]
    fn sweep_is_deterministic() {
        let spec = ReferenceSpec {
            n_units: 200,
            ..ReferenceSpec::default()
        };
        let a = verify_bias_variance(&spec, Estimator::NIps, &[0.15], 8, 3).unwrap();
        let b = verify_bias_variance(&spec, Estimator::NIps, &[0.15], 8, 3).unwrap();
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn degenerate_grid_rejected() {
        let spec = ReferenceSpec::default();
        assert!(verify_bias_variance(&spec, Estimator::NIps, &[], 10, 0).is_err());
        assert!(verify_bias_variance(&spec, Estimator::NIps, &[0.0], 10, 0).is_err());
        assert!(verify_bias_variance(&spec, Estimator::NIps, &[0.1], 1, 0).is_err());
    }

    #[test]
    fn discrete_gap_vanishes_without_dependence() {
        let m = DiscreteModel::example().with_independent_treatment();
        assert!(m.selection_gap().abs() < 1e-15);
        assert!((m.natural_ideal() - m.exposed_ideal()).abs() < 1e-12);
    }
}
