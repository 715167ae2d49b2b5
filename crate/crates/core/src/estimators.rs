//! Loss estimators: the ideal losses and their naive, inverse-propensity and doubly robust estimates.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::{ObservationMask, RatingMatrix};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::loss::LossSpec;
use crate::neighborhood::{RepDistribution, TreatmentRep};
use crate::numeric::CompensatedSum;
use crate::propensity::PropensityField;

/// Per-treatment loss values and their integral under the target distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub name: String,
    pub support: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub per_g: Vec<f64>,
    pub integrated: f64,
    pub config: String,
}

impl EstimateReport {
    fn new(name: &str, pi: &RepDistribution, per_g: Vec<f64>, config: String) -> Self {
        Self {
            name: name.to_string(),
            integrated: pi.integrate(&per_g),
            support: pi.points.clone(),
            weights: pi.weights.clone(),
            per_g,
            config,
        }
    }

    /// Rows of `estimator,g,loss,integrated`; vector treatments are joined with `;`.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for (g, v) in self.support.iter().zip(&self.per_g) {
            let gs: Vec<String> = g.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(out, "{},{},{},{}", self.name, gs.join(";"), v, self.integrated);
        }
        out
    }
}

pub const CSV_HEADER: &str = "estimator,g,loss,integrated";

/// Where the per-pair error `δ_{u,i}(g)` at a target treatment comes from.
#[derive(Debug, Clone, Copy)]
pub enum ErrorSource<'a> {
    /// One potential-outcome grid per support point of the target distribution.
    Potentials(&'a [RatingMatrix]),
    /// The logged rating, used for every target treatment.
    Observed(&'a RatingMatrix),
}

impl ErrorSource<'_> {
    #[inline]
    fn target(&self, u: usize, i: usize, k: usize) -> f64 {
        match self {
            ErrorSource::Potentials(p) => p[k].get(u, i),
            ErrorSource::Observed(r) => r.get(u, i),
        }
    }

    fn check(&self, n_users: usize, n_items: usize, n_points: usize) -> Result<()> {
        match self {
            ErrorSource::Potentials(p) => {
                if p.len() != n_points {
                    return Err(Error::invalid(format!(
                        "{} potential grids for {n_points} support points",
                        p.len()
                    )));
                }
                p.iter().try_for_each(|m| m.same_shape(n_users, n_items))
            }
            ErrorSource::Observed(r) => r.same_shape(n_users, n_items),
        }
    }
}

fn nonempty(m: &RatingMatrix) -> Result<usize> {
    let n = m.n_users * m.n_items;
    if n == 0 {
        return Err(Error::Empty("empty grid".into()));
    }
    Ok(n)
}

fn check_mask(mask: &ObservationMask, rhat: &RatingMatrix) -> Result<()> {
    if mask.n_users != rhat.n_users || mask.n_items != rhat.n_items {
        return Err(Error::DimensionMismatch {
            expected: rhat.n_users * rhat.n_items,
            got: mask.n_pairs(),
        });
    }
    Ok(())
}

fn check_field(field: &PropensityField, rhat: &RatingMatrix) -> Result<()> {
    if field.n_users != rhat.n_users || field.n_items != rhat.n_items {
        return Err(Error::DimensionMismatch {
            expected: rhat.n_users * rhat.n_items,
            got: field.n_users * field.n_items,
        });
    }
    Ok(())
}

/// Sums `f(u, i)` over the grid: rows in parallel, each compensated, combined in row order.
fn grid_sum(n_users: usize, n_items: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> f64 {
    let rows: Vec<f64> = (0..n_users)
        .into_par_iter()
        .map(|u| {
            let mut acc = CompensatedSum::new();
            for i in 0..n_items {
                acc.add(f(u, i));
            }
            acc.value()
        })
        .collect();
    crate::numeric::compensated_sum(rows)
}

/// Like [`grid_sum`] for `k` parallel accumulators.
fn grid_sum_vec(n_users: usize, n_items: usize, k: usize, f: impl Fn(usize, usize, &mut [f64]) + Sync) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = (0..n_users)
        .into_par_iter()
        .map(|u| {
            let mut acc = vec![CompensatedSum::new(); k];
            let mut buf = vec![0.0; k];
            for i in 0..n_items {
                buf.iter_mut().for_each(|b| *b = 0.0);
                f(u, i, &mut buf);
                for (a, b) in acc.iter_mut().zip(&buf) {
                    a.add(*b);
                }
            }
            acc.iter().map(CompensatedSum::value).collect()
        })
        .collect();
    (0..k)
        .map(|j| crate::numeric::compensated_sum(rows.iter().map(|r| r[j])))
        .collect()
}

/// Mean loss of `rhat` against a fully known rating grid.
pub fn ideal_loss(rhat: &RatingMatrix, r: &RatingMatrix, loss: LossSpec) -> Result<f64> {
    let n = nonempty(rhat)?;
    r.same_shape(rhat.n_users, rhat.n_items)?;
    Ok(grid_sum(rhat.n_users, rhat.n_items, |u, i| {
        loss.value(rhat.get(u, i), r.get(u, i))
    }) / n as f64)
}

/// Ideal loss against each potential-outcome grid, integrated under `pi`.
pub fn ideal_loss_n(
    rhat: &RatingMatrix,
    potentials: &[RatingMatrix],
    pi: &RepDistribution,
    loss: LossSpec,
) -> Result<EstimateReport> {
    if potentials.len() != pi.len() {
        return Err(Error::invalid(format!(
            "missing potential outcomes: {} grids for {} support points",
            potentials.len(),
            pi.len()
        )));
    }
    let per_g = potentials
        .iter()
        .map(|p| ideal_loss(rhat, p, loss))
        .collect::<Result<Vec<_>>>()?;
    Ok(EstimateReport::new("ideal", pi, per_g, format!("loss={}", loss.name())))
}

/// Mean loss over the observed pairs only.
pub fn naive_loss(rhat: &RatingMatrix, robs: &RatingMatrix, mask: &ObservationMask, loss: LossSpec) -> Result<f64> {
    nonempty(rhat)?;
    check_mask(mask, rhat)?;
    robs.same_shape(rhat.n_users, rhat.n_items)?;
    let n_obs = mask.n_observed();
    if n_obs == 0 {
        return Err(Error::Empty("no observed pairs".into()));
    }
    let s = grid_sum(rhat.n_users, rhat.n_items, |u, i| {
        if mask.get(u, i) {
            loss.value(rhat.get(u, i), robs.get(u, i))
        } else {
            0.0
        }
    });
    Ok(s / n_obs as f64)
}

/// `|D|⁻¹ Σ o δ / p`.
pub fn ips_loss(
    rhat: &RatingMatrix,
    robs: &RatingMatrix,
    mask: &ObservationMask,
    field: &PropensityField,
    loss: LossSpec,
) -> Result<f64> {
    let n = nonempty(rhat)?;
    check_mask(mask, rhat)?;
    check_field(field, rhat)?;
    robs.same_shape(rhat.n_users, rhat.n_items)?;
    let s = grid_sum(rhat.n_users, rhat.n_items, |u, i| {
        if mask.get(u, i) {
            field.inverse_base(u, i) * loss.value(rhat.get(u, i), robs.get(u, i))
        } else {
            0.0
        }
    });
    Ok(s / n as f64)
}

/// `|D|⁻¹ Σ [δ̂ + o (δ - δ̂) / p]` with `δ̂ = δ(r̂, imputed)`.
pub fn dr_loss(
    rhat: &RatingMatrix,
    robs: &RatingMatrix,
    mask: &ObservationMask,
    imputed: &RatingMatrix,
    field: &PropensityField,
    loss: LossSpec,
) -> Result<f64> {
    let n = nonempty(rhat)?;
    check_mask(mask, rhat)?;
    check_field(field, rhat)?;
    robs.same_shape(rhat.n_users, rhat.n_items)?;
    imputed.same_shape(rhat.n_users, rhat.n_items)?;
    let s = grid_sum(rhat.n_users, rhat.n_items, |u, i| {
        let p = rhat.get(u, i);
        let dhat = loss.value(p, imputed.get(u, i));
        if mask.get(u, i) {
            dhat + field.inverse_base(u, i) * (loss.value(p, robs.get(u, i)) - dhat)
        } else {
            dhat
        }
    });
    Ok(s / n as f64)
}

/// Inputs shared by the neighborhood-aware estimators.
#[derive(Debug, Clone, Copy)]
pub struct NeighborhoodInputs<'a> {
    pub rhat: &'a RatingMatrix,
    pub errors: ErrorSource<'a>,
    pub mask: &'a ObservationMask,
    pub rep: &'a TreatmentRep,
    pub field: &'a PropensityField,
    pub pi: &'a RepDistribution,
    pub kernel: &'a KernelSpec,
    pub loss: LossSpec,
}

impl NeighborhoodInputs<'_> {
    fn validate(&self) -> Result<usize> {
        let n = nonempty(self.rhat)?;
        let (nu, ni) = (self.rhat.n_users, self.rhat.n_items);
        check_mask(self.mask, self.rhat)?;
        check_field(self.field, self.rhat)?;
        if self.rep.n_users != nu || self.rep.n_items != ni {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.rep.n_users * self.rep.n_items,
            });
        }
        if self.pi.dim() != self.rep.dim {
            return Err(Error::DimensionMismatch {
                expected: self.rep.dim,
                got: self.pi.dim(),
            });
        }
        self.kernel.check_dim(self.rep.dim)?;
        self.errors.check(nu, ni, self.pi.len())?;
        Ok(n)
    }

    fn config(&self) -> String {
        let bw: Vec<String> = self.kernel.bandwidth.iter().map(|h| h.to_string()).collect();
        format!(
            "kernel={};bandwidth={};loss={}",
            self.kernel.family.name(),
            bw.join(";"),
            self.loss.name()
        )
    }

    /// `K_h(g_{u,i} - g_k) / p_{u,i}(g_k)` for an observed pair.
    #[inline]
    fn weight(&self, u: usize, i: usize, k: usize) -> f64 {
        let g = &self.pi.points[k];
        let kw = self.kernel.weight(self.rep.get(u, i), g);
        if kw == 0.0 {
            0.0
        } else {
            kw * self.field.inverse_joint(u, i, g)
        }
    }
}

/// Kernel-smoothed inverse-propensity estimate of the neighborhood ideal loss.
pub fn n_ips_loss(inp: &NeighborhoodInputs) -> Result<EstimateReport> {
    let n = inp.validate()?;
    let k = inp.pi.len();
    let sums = grid_sum_vec(inp.rhat.n_users, inp.rhat.n_items, k, |u, i, out| {
        if !inp.mask.get(u, i) {
            return;
        }
        let p = inp.rhat.get(u, i);
        for (j, o) in out.iter_mut().enumerate() {
            let w = inp.weight(u, i, j);
            if w != 0.0 {
                *o = w * inp.loss.value(p, inp.errors.target(u, i, j));
            }
        }
    });
    let per_g = sums.into_iter().map(|s| s / n as f64).collect();
    Ok(EstimateReport::new("n-ips", inp.pi, per_g, inp.config()))
}

/// Kernel-smoothed doubly robust estimate; `imputed[k]` imputes the outcome at support point `k`.
pub fn n_dr_loss(inp: &NeighborhoodInputs, imputed: &[RatingMatrix]) -> Result<EstimateReport> {
    let n = inp.validate()?;
    let k = inp.pi.len();
    if imputed.len() != k {
        return Err(Error::invalid(format!(
            "{} imputation grids for {k} support points",
            imputed.len()
        )));
    }
    for m in imputed {
        m.same_shape(inp.rhat.n_users, inp.rhat.n_items)?;
    }
    let sums = grid_sum_vec(inp.rhat.n_users, inp.rhat.n_items, k, |u, i, out| {
        let p = inp.rhat.get(u, i);
        let observed = inp.mask.get(u, i);
        for (j, o) in out.iter_mut().enumerate() {
            let dhat = inp.loss.value(p, imputed[j].get(u, i));
            *o = dhat;
            if observed {
                let w = inp.weight(u, i, j);
                if w != 0.0 {
                    *o += w * (inp.loss.value(p, inp.errors.target(u, i, j)) - dhat);
                }
            }
        }
    });
    let per_g = sums.into_iter().map(|s| s / n as f64).collect();
    Ok(EstimateReport::new("n-dr", inp.pi, per_g, inp.config()))
}
