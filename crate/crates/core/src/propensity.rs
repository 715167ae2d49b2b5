//! Exposure propensities and joint inverse propensities of (exposure, treatment).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Interaction, ObservationMask};
use crate::error::{Error, Result};
use crate::neighborhood::TreatmentRep;
use crate::numeric::sigmoid;
use crate::textfmt::KvDoc;

pub const DEFAULT_MAX_INVERSE: f64 = 100.0;

/// `clip(ratio / p_base, [1, max_inverse])`.
pub fn inverse_joint(p_base: f64, ratio: f64, max_inverse: f64) -> f64 {
    (ratio / p_base).clamp(1.0, max_inverse)
}

/// `P(o=1 | r)` estimated from logged and uniformly sampled ratings by Bayes' rule.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveBayesModel {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
    pub pseudo_count: f64,
    /// Probability returned for rating values absent from both samples.
    pub fallback: f64,
}

pub fn fit_naive_bayes(
    mnar: &[Interaction],
    mar: &[Interaction],
    n_pairs: usize,
    pseudo_count: f64,
) -> Result<NaiveBayesModel> {
    if mnar.is_empty() || mar.is_empty() {
        return Err(Error::Empty("naive Bayes needs logged and uniform ratings".into()));
    }
    if n_pairs == 0 || pseudo_count < 0.0 {
        return Err(Error::invalid("naive Bayes needs n_pairs > 0 and pseudo_count >= 0"));
    }
    let mut values: Vec<f64> = mnar.iter().chain(mar).map(|r| r.rating).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let a = values.len() as f64;
    let count = |rows: &[Interaction], v: f64| rows.iter().filter(|r| r.rating == v).count() as f64;
    let prior = mnar.len() as f64 / n_pairs as f64;
    let (n_obs, n_uni) = (mnar.len() as f64, mar.len() as f64);
    let mut probs = Vec::with_capacity(values.len());
    for &v in &values {
        let p_r_obs = (count(mnar, v) + pseudo_count) / (n_obs + pseudo_count * a);
        let p_r = (count(mar, v) + pseudo_count) / (n_uni + pseudo_count * a);
        if p_r == 0.0 {
            return Err(Error::Infeasible(format!(
                "rating {v} never appears in the uniform sample; use a positive pseudo count"
            )));
        }
        probs.push((p_r_obs * prior / p_r).min(1.0));
    }
    let fallback = if pseudo_count > 0.0 {
        let p_r_obs = pseudo_count / (n_obs + pseudo_count * a);
        let p_r = pseudo_count / (n_uni + pseudo_count * a);
        (p_r_obs * prior / p_r).min(1.0)
    } else {
        prior
    };
    Ok(NaiveBayesModel {
        values,
        probs,
        pseudo_count,
        fallback,
    })
}

impl NaiveBayesModel {
    pub fn predict(&self, rating: f64) -> f64 {
        match self.values.iter().position(|&v| v == rating) {
            Some(k) => self.probs[k],
            None => self.fallback,
        }
    }

    pub fn to_doc(&self) -> KvDoc {
        let mut d = KvDoc::with_header("nbdebias-naive-bayes", 1);
        d.set("pseudo_count", self.pseudo_count);
        d.set("fallback", self.fallback);
        d.set_vec("values", &self.values);
        d.set_vec("probs", &self.probs);
        d
    }

    pub fn from_doc(d: &KvDoc) -> Result<Self> {
        d.expect_header("nbdebias-naive-bayes", 1)?;
        Ok(Self {
            values: d.get_vec("values")?,
            probs: d.get_vec("probs")?,
            pseudo_count: d.get_f64("pseudo_count")?,
            fallback: d.get_f64("fallback")?,
        })
    }
}

/// Per-pair feature vectors `[user features, item features, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeatures {
    pub n_users: usize,
    pub n_items: usize,
    pub user_dim: usize,
    pub item_dim: usize,
    user: Vec<f64>,
    item: Vec<f64>,
}

impl PairFeatures {
    pub fn new(
        n_users: usize,
        n_items: usize,
        user_dim: usize,
        user: Vec<f64>,
        item_dim: usize,
        item: Vec<f64>,
    ) -> Result<Self> {
        if user.len() != n_users * user_dim || item.len() != n_items * item_dim {
            return Err(Error::DimensionMismatch {
                expected: n_users * user_dim + n_items * item_dim,
                got: user.len() + item.len(),
            });
        }
        Ok(Self {
            n_users,
            n_items,
            user_dim,
            item_dim,
            user,
            item,
        })
    }

    pub fn intercept_only(n_users: usize, n_items: usize) -> Self {
        Self {
            n_users,
            n_items,
            user_dim: 0,
            item_dim: 0,
            user: Vec::new(),
            item: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.user_dim + self.item_dim + 1
    }

    pub fn fill(&self, u: usize, i: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.user[u * self.user_dim..(u + 1) * self.user_dim]);
        out.extend_from_slice(&self.item[i * self.item_dim..(i + 1) * self.item_dim]);
        out.push(1.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticConfig {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            lr: 0.5,
            epochs: 200,
            l2: 0.0,
        }
    }
}

/// Logistic exposure model `P(o=1|x) = σ(w·x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
}

impl LogisticModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(dot(&self.weights, x))
    }

    pub fn to_doc(&self) -> KvDoc {
        let mut d = KvDoc::with_header("nbdebias-logistic", 1);
        d.set_vec("weights", &self.weights);
        d
    }

    pub fn from_doc(d: &KvDoc) -> Result<Self> {
        d.expect_header("nbdebias-logistic", 1)?;
        Ok(Self {
            weights: d.get_vec("weights")?,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_loss(p_logit: f64, y: f64) -> f64 {
    // log(1 + e^z) - y z, computed stably
    let z = p_logit;
    let softplus = if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    };
    softplus - y * z
}

/// Mean log loss plus `l2/2 |w|²` over labelled feature rows, and its gradient.
pub fn penalized_log_loss(rows: &[(Vec<f64>, f64)], w: &[f64], l2: f64) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; w.len()];
    let mut loss = 0.0;
    for (x, y) in rows {
        let z = dot(w, x);
        loss += log_loss(z, *y);
        let r = sigmoid(z) - y;
        for (g, xv) in grad.iter_mut().zip(x) {
            *g += r * xv;
        }
    }
    let n = rows.len().max(1) as f64;
    for (g, wj) in grad.iter_mut().zip(w) {
        *g = *g / n + l2 * wj;
    }
    (loss / n + 0.5 * l2 * dot(w, w), grad)
}

/// Full-batch gradient descent on the mean log loss over every pair of the grid.
/// Returns the model and the loss before each epoch's step.
pub fn fit_logistic(
    features: &PairFeatures,
    mask: &ObservationMask,
    cfg: &LogisticConfig,
) -> Result<(LogisticModel, Vec<f64>)> {
    if features.n_users != mask.n_users || features.n_items != mask.n_items {
        return Err(Error::DimensionMismatch {
            expected: mask.n_pairs(),
            got: features.n_users * features.n_items,
        });
    }
    if mask.n_pairs() == 0 {
        return Err(Error::Empty("no pairs to fit".into()));
    }
    let mut rows = Vec::with_capacity(mask.n_pairs());
    let mut x = Vec::with_capacity(features.dim());
    for u in 0..mask.n_users {
        for i in 0..mask.n_items {
            features.fill(u, i, &mut x);
            rows.push((x.clone(), if mask.get(u, i) { 1.0 } else { 0.0 }));
        }
    }
    let mut w = vec![0.0; features.dim()];
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let (loss, grad) = penalized_log_loss(&rows, &w, cfg.l2);
        history.push(loss);
        for (wj, g) in w.iter_mut().zip(&grad) {
            *wj -= cfg.lr * g;
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logistic propensity weights".into()));
        }
    }
    Ok((LogisticModel { weights: w }, history))
}

/// Domain of treatment values used to draw reference samples.
#[derive(Debug, Clone, PartialEq)]
pub enum TreatmentSupport {
    /// Product of closed intervals.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Product of inclusive integer ranges.
    Integers { lo: Vec<i64>, hi: Vec<i64> },
}

impl TreatmentSupport {
    /// Integer support `0..=max` per dimension, truncated at the largest observed value.
    pub fn observed_counts(rep: &TreatmentRep) -> Self {
        let mut hi = vec![0i64; rep.dim];
        for chunk in rep.values().chunks(rep.dim) {
            for (h, v) in hi.iter_mut().zip(chunk) {
                *h = (*h).max(v.round() as i64);
            }
        }
        Self::Integers {
            lo: vec![0; rep.dim],
            hi,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Box { lo, .. } => lo.len(),
            Self::Integers { lo, .. } => lo.len(),
        }
    }

    /// Lebesgue volume or number of lattice points.
    pub fn measure(&self) -> f64 {
        match self {
            Self::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| b - a).product(),
            Self::Integers { lo, hi } => lo.iter().zip(hi).map(|(a, b)| (b - a + 1) as f64).product(),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng, out: &mut Vec<f64>) {
        out.clear();
        match self {
            Self::Box { lo, hi } => out.extend(lo.iter().zip(hi).map(|(a, b)| rng.gen_range(*a..=*b))),
            Self::Integers { lo, hi } => out.extend(lo.iter().zip(hi).map(|(a, b)| rng.gen_range(*a..=*b) as f64)),
        }
    }

    fn center_scale(&self) -> (Vec<f64>, Vec<f64>) {
        let (lo, hi): (Vec<f64>, Vec<f64>) = match self {
            Self::Box { lo, hi } => (lo.clone(), hi.clone()),
            Self::Integers { lo, hi } => (
                lo.iter().map(|v| *v as f64).collect(),
                hi.iter().map(|v| *v as f64).collect(),
            ),
        };
        let center = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let scale = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| if b > a { 0.5 * (b - a) } else { 1.0 })
            .collect();
        (center, scale)
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Self::Box { lo, hi } => lo.len() == hi.len() && lo.iter().zip(hi).all(|(a, b)| a < b),
            Self::Integers { lo, hi } => lo.len() == hi.len() && lo.iter().zip(hi).all(|(a, b)| a <= b),
        };
        if !ok || self.dim() == 0 {
            return Err(Error::invalid("treatment support bounds are inconsistent"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityRatioConfig {
    /// Reference draws per exposed pair.
    pub neg_per_pos: usize,
    pub newton_steps: usize,
    /// Ridge penalty per training example.
    pub ridge: f64,
    pub seed: u64,
}

impl Default for DensityRatioConfig {
    fn default() -> Self {
        Self {
            neg_per_pos: 1,
            newton_steps: 30,
            ridge: 1e-7,
            seed: 0,
        }
    }
}

/// Classifier between exposed `(x, g)` pairs and `(x, g')` with `g'` drawn uniformly from the support.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityRatioModel {
    pub weights: Vec<f64>,
    pub x_dim: usize,
    pub q: usize,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    /// `ln(n_pos / n_neg)`.
    pub log_class_ratio: f64,
    pub support_measure: f64,
}

impl DensityRatioModel {
    fn feature_dim(x_dim: usize, q: usize) -> usize {
        x_dim * (1 + 2 * q)
    }

    fn fill(&self, x: &[f64], g: &[f64], out: &mut Vec<f64>) {
        build_features(x, g, &self.center, &self.scale, out);
    }

    /// Estimate of `P^u(g) / P(g | o=1, x)` for the uniform reference `P^u`.
    pub fn ratio(&self, x: &[f64], g: &[f64]) -> f64 {
        let mut phi = Vec::with_capacity(self.weights.len());
        self.fill(x, g, &mut phi);
        (self.log_class_ratio - dot(&self.weights, &phi)).exp()
    }

    /// Estimate of `1 / P(g | o=1, x)`.
    pub fn inverse_conditional(&self, x: &[f64], g: &[f64]) -> f64 {
        self.support_measure * self.ratio(x, g)
    }

    pub fn to_doc(&self) -> KvDoc {
        let mut d = KvDoc::with_header("nbdebias-density-ratio", 1);
        d.set("x_dim", self.x_dim);
        d.set("q", self.q);
        d.set("log_class_ratio", self.log_class_ratio);
        d.set("support_measure", self.support_measure);
        d.set_vec("center", &self.center);
        d.set_vec("scale", &self.scale);
        d.set_vec("weights", &self.weights);
        d
    }

    pub fn from_doc(d: &KvDoc) -> Result<Self> {
        d.expect_header("nbdebias-density-ratio", 1)?;
        let m = Self {
            weights: d.get_vec("weights")?,
            x_dim: d.get_usize("x_dim")?,
            q: d.get_usize("q")?,
            center: d.get_vec("center")?,
            scale: d.get_vec("scale")?,
            log_class_ratio: d.get_f64("log_class_ratio")?,
            support_measure: d.get_f64("support_measure")?,
        };
        if m.weights.len() != Self::feature_dim(m.x_dim, m.q) {
            return Err(Error::Config("density-ratio weight count does not match dims".into()));
        }
        Ok(m)
    }
}

/// `x ⊗ (1, g̃_1, g̃_1², …, g̃_q, g̃_q²)` with `g̃` centred and scaled.
fn build_features(x: &[f64], g: &[f64], center: &[f64], scale: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(x);
    for ((gs, c), s) in g.iter().zip(center).zip(scale) {
        let t = (gs - c) / s;
        out.extend(x.iter().map(|xv| xv * t));
        out.extend(x.iter().map(|xv| xv * t * t));
    }
}

/// Fits the ratio classifier on raw feature rows: `xs[k]` paired with treatment `gs[k]`.
pub fn fit_density_ratio_rows(
    xs: &[Vec<f64>],
    gs: &[Vec<f64>],
    support: &TreatmentSupport,
    cfg: &DensityRatioConfig,
) -> Result<DensityRatioModel> {
    support.validate()?;
    if xs.is_empty() {
        return Err(Error::Empty("density ratio needs exposed pairs".into()));
    }
    if xs.len() != gs.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: gs.len(),
        });
    }
    if cfg.neg_per_pos == 0 {
        return Err(Error::invalid("need at least one reference draw per exposed pair"));
    }
    let q = support.dim();
    if let Some(g) = gs.iter().find(|g| g.len() != q) {
        return Err(Error::DimensionMismatch {
            expected: q,
            got: g.len(),
        });
    }
    let x_dim = xs[0].len();
    let (center, scale) = support.center_scale();
    let dim = DensityRatioModel::feature_dim(x_dim, q);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_pos = xs.len();
    let n_neg = n_pos * cfg.neg_per_pos;
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n_pos + n_neg);
    let mut phi = Vec::with_capacity(dim);
    let mut gneg = Vec::with_capacity(q);
    for (x, g) in xs.iter().zip(gs) {
        build_features(x, g, &center, &scale, &mut phi);
        rows.push((phi.clone(), 1.0));
        for _ in 0..cfg.neg_per_pos {
            support.sample(&mut rng, &mut gneg);
            build_features(x, &gneg, &center, &scale, &mut phi);
            rows.push((phi.clone(), 0.0));
        }
    }

    let n = rows.len() as f64;
    let lambda = cfg.ridge;
    let objective = |w: &DVector<f64>| penalized_log_loss(&rows, w.as_slice(), lambda).0;
    let mut w = DVector::<f64>::zeros(dim);
    let mut current = objective(&w);
    for _ in 0..cfg.newton_steps {
        let grad = DVector::from_vec(penalized_log_loss(&rows, w.as_slice(), lambda).1);
        let mut hess = DMatrix::<f64>::zeros(dim, dim);
        for (p, _) in &rows {
            let mu = sigmoid(dot(w.as_slice(), p));
            let c = mu * (1.0 - mu);
            for a in 0..dim {
                let ca = c * p[a];
                if ca != 0.0 {
                    for b in 0..=a {
                        hess[(a, b)] += ca * p[b];
                    }
                }
            }
        }
        for a in 0..dim {
            for b in 0..a {
                hess[(b, a)] = hess[(a, b)];
            }
        }
        hess /= n;
        for a in 0..dim {
            hess[(a, a)] += lambda;
        }
        let step = match hess.cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                return Err(Error::NonFinite(
                    "density-ratio Hessian is not positive definite".into(),
                ))
            }
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &w - &step * t;
            let val = objective(&cand);
            if val.is_finite() && val <= current {
                w = cand;
                let improvement = current - val;
                current = val;
                accepted = true;
                if improvement < 1e-14 {
                    t = 0.0;
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted || t == 0.0 {
            break;
        }
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("density-ratio weights".into()));
    }
    Ok(DensityRatioModel {
        weights: w.as_slice().to_vec(),
        x_dim,
        q,
        center,
        scale,
        log_class_ratio: (n_pos as f64 / n_neg as f64).ln(),
        support_measure: support.measure(),
    })
}

/// Fits the ratio classifier on the exposed pairs of `mask` with treatments from `rep`.
pub fn fit_density_ratio(
    features: &PairFeatures,
    mask: &ObservationMask,
    rep: &TreatmentRep,
    support: &TreatmentSupport,
    cfg: &DensityRatioConfig,
) -> Result<DensityRatioModel> {
    let pairs = mask.observed_pairs();
    let mut xs = Vec::with_capacity(pairs.len());
    let mut gs = Vec::with_capacity(pairs.len());
    let mut x = Vec::new();
    for &(u, i) in &pairs {
        features.fill(u, i, &mut x);
        xs.push(x.clone());
        gs.push(rep.get(u, i).to_vec());
    }
    fit_density_ratio_rows(&xs, &gs, support, cfg)
}

/// How `1 / P(g | o=1, x)` is obtained.
#[derive(Debug, Clone)]
pub enum ConditionalModel {
    /// Treatment independent of `x` among exposed pairs: factor 1.
    Independent,
    /// Learned density-ratio classifier.
    Ratio {
        model: DensityRatioModel,
        features: PairFeatures,
    },
    /// Binary treatment with known `P(g=1 | o=1, x)` per pair.
    Binary(Vec<f64>),
    /// Known `1 / P(g | o=1, x)` per pair at fixed treatment values, row-major by pair.
    Tabulated { points: Vec<Vec<f64>>, inv: Vec<f64> },
}

/// Frozen inverse propensities over the grid.
#[derive(Debug, Clone)]
pub struct PropensityField {
    pub n_users: usize,
    pub n_items: usize,
    inv_base: Vec<f64>,
    pub conditional: ConditionalModel,
    pub max_inverse: f64,
    /// Floor on the joint inverse; 1 for probabilities, 0 when the conditional factor is a density.
    pub min_inverse: f64,
    /// Normalization multiplying the conditional factor.
    pub scale: f64,
}

impl PropensityField {
    pub fn from_probabilities(n_users: usize, n_items: usize, probs: &[f64]) -> Result<Self> {
        if probs.len() != n_users * n_items {
            return Err(Error::DimensionMismatch {
                expected: n_users * n_items,
                got: probs.len(),
            });
        }
        if let Some(p) = probs.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return Err(Error::invalid(format!("propensity {p} outside (0, 1]")));
        }
        Self::from_inverse(n_users, n_items, probs.iter().map(|p| 1.0 / p).collect())
    }

    pub fn from_inverse(n_users: usize, n_items: usize, inv: Vec<f64>) -> Result<Self> {
        if inv.len() != n_users * n_items {
            return Err(Error::DimensionMismatch {
                expected: n_users * n_items,
                got: inv.len(),
            });
        }
        if let Some(v) = inv.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::invalid(format!(
                "inverse propensity {v} is not positive and finite"
            )));
        }
        Ok(Self {
            n_users,
            n_items,
            inv_base: inv,
            conditional: ConditionalModel::Independent,
            max_inverse: DEFAULT_MAX_INVERSE,
            min_inverse: 1.0,
            scale: 1.0,
        })
    }

    pub fn uniform(n_users: usize, n_items: usize, p: f64) -> Result<Self> {
        Self::from_probabilities(n_users, n_items, &vec![p; n_users * n_items])
    }

    pub fn with_conditional(mut self, conditional: ConditionalModel) -> Self {
        self.conditional = conditional;
        self
    }

    pub fn with_max_inverse(mut self, max_inverse: f64) -> Self {
        self.max_inverse = max_inverse;
        self
    }

    pub fn with_min_inverse(mut self, min_inverse: f64) -> Self {
        self.min_inverse = min_inverse;
        self
    }

    /// Clipped `1 / P(o=1 | x)`.
    #[inline]
    pub fn inverse_base(&self, u: usize, i: usize) -> f64 {
        self.inv_base[u * self.n_items + i].clamp(1.0, self.max_inverse)
    }

    /// `1 / P(o=1, g | x)` clipped to `[min_inverse, max_inverse]`.
    pub fn inverse_joint(&self, u: usize, i: usize, g: &[f64]) -> f64 {
        let cond = match &self.conditional {
            ConditionalModel::Independent => 1.0,
            ConditionalModel::Ratio { model, features } => {
                let mut x = Vec::with_capacity(features.dim());
                features.fill(u, i, &mut x);
                model.inverse_conditional(&x, g)
            }
            ConditionalModel::Binary(p1) => {
                let p = p1[u * self.n_items + i];
                let pg = if g[0] >= 0.5 { p } else { 1.0 - p };
                1.0 / pg.max(1e-12)
            }
            ConditionalModel::Tabulated { points, inv } => match points.iter().position(|p| p.as_slice() == g) {
                Some(k) => inv[(u * self.n_items + i) * points.len() + k],
                None => f64::INFINITY,
            },
        };
        (self.scale * cond * self.inv_base[u * self.n_items + i]).clamp(self.min_inverse, self.max_inverse)
    }

    /// Sets `scale` so the mean unclipped joint inverse over `pairs` equals `target`.
    pub fn calibrate_scale(&mut self, pairs: &[(usize, usize, Vec<f64>)], target: f64) -> Result<()> {
        if pairs.is_empty() {
            return Err(Error::Empty("calibration pairs".into()));
        }
        let saved = (self.scale, self.max_inverse, self.min_inverse);
        self.scale = 1.0;
        self.max_inverse = f64::INFINITY;
        self.min_inverse = 0.0;
        let mean = pairs.iter().map(|(u, i, g)| self.inverse_joint(*u, *i, g)).sum::<f64>() / pairs.len() as f64;
        self.max_inverse = saved.1;
        self.min_inverse = saved.2;
        if !(mean.is_finite() && mean > 0.0) {
            self.scale = saved.0;
            return Err(Error::NonFinite("calibration mean".into()));
        }
        self.scale = target / mean;
        Ok(())
    }
}
