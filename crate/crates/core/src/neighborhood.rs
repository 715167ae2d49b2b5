//! Neighborhood definitions and per-pair treatment representations.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::data::{check_index, ObservationMask, Pair};
use crate::error::{Error, Result};
use crate::numeric::gauss_legendre_on;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborhoodMode {
    /// Same row or same column, excluding the pair itself.
    RowColumn,
    /// Other items of the same user.
    UserHistory,
    /// Other users of the same item.
    ItemHistory,
    /// Cross block between the item's other exposed users and the user's other exposed items.
    Interaction,
}

impl NeighborhoodMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "row-column" => Ok(Self::RowColumn),
            "user-history" => Ok(Self::UserHistory),
            "item-history" => Ok(Self::ItemHistory),
            "interaction" => Ok(Self::Interaction),
            _ => Err(Error::Config(format!("unknown neighborhood mode {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::RowColumn => "row-column",
            Self::UserHistory => "user-history",
            Self::ItemHistory => "item-history",
            Self::Interaction => "interaction",
        }
    }
}

/// Lists the neighbors of `(u, i)`; only [`NeighborhoodMode::Interaction`] depends on `mask`.
pub fn neighbors(mode: NeighborhoodMode, u: usize, i: usize, mask: &ObservationMask) -> Result<Vec<Pair>> {
    let (nu, ni) = (mask.n_users, mask.n_items);
    check_index(u, i, nu, ni)?;
    let row = (0..ni).filter(|&j| j != i).map(|j| (u, j));
    let col = (0..nu).filter(|&v| v != u).map(|v| (v, i));
    Ok(match mode {
        NeighborhoodMode::RowColumn => row.chain(col).collect(),
        NeighborhoodMode::UserHistory => row.collect(),
        NeighborhoodMode::ItemHistory => col.collect(),
        NeighborhoodMode::Interaction => {
            let users: Vec<usize> = (0..nu).filter(|&v| v != u && mask.get(v, i)).collect();
            let items: Vec<usize> = (0..ni).filter(|&j| j != i && mask.get(u, j)).collect();
            users.iter().flat_map(|&v| items.iter().map(move |&j| (v, j))).collect()
        }
    })
}

/// Number of exposed neighbors of every pair, row-major.
pub fn exposure_counts(mode: NeighborhoodMode, mask: &ObservationMask) -> Vec<f64> {
    let (nu, ni) = (mask.n_users, mask.n_items);
    let mut out = vec![0.0; nu * ni];
    match mode {
        NeighborhoodMode::Interaction => interaction_counts(mask, &mut out),
        _ => {
            for u in 0..nu {
                for i in 0..ni {
                    let own = mask.get(u, i) as usize;
                    let row = mask.row_count(u) - own;
                    let col = mask.col_count(i) - own;
                    out[u * ni + i] = match mode {
                        NeighborhoodMode::RowColumn => row + col,
                        NeighborhoodMode::UserHistory => row,
                        _ => col,
                    } as f64;
                }
            }
        }
    }
    out
}

fn interaction_counts(mask: &ObservationMask, out: &mut [f64]) {
    let (nu, ni) = (mask.n_users, mask.n_items);
    let mut users_of: Vec<Vec<usize>> = vec![Vec::new(); ni];
    let mut items_of: Vec<Vec<usize>> = vec![Vec::new(); nu];
    for (u, i) in mask.observed_pairs() {
        users_of[i].push(u);
        items_of[u].push(i);
    }
    // co[v] = number of items shared by users u and v
    let mut co = vec![0usize; nu];
    for u in 0..nu {
        co.iter_mut().for_each(|c| *c = 0);
        for &j in &items_of[u] {
            for &v in &users_of[j] {
                co[v] += 1;
            }
        }
        for i in 0..ni {
            let own = mask.get(u, i) as usize;
            let mut total = 0usize;
            let mut others = 0usize;
            for &v in &users_of[i] {
                if v != u {
                    total += co[v];
                    others += 1;
                }
            }
            out[u * ni + i] = (total - own * others) as f64;
        }
    }
}

/// Lower median: the element of rank `ceil(n/2)` in sorted order.
pub fn lower_median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("median of an empty set".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v[(v.len() - 1) / 2])
}

/// Lower median of neighbor-exposure counts over the observed pairs.
pub fn median_threshold(mode: NeighborhoodMode, mask: &ObservationMask) -> Result<f64> {
    let counts = exposure_counts(mode, mask);
    let observed: Vec<f64> = mask
        .observed_pairs()
        .into_iter()
        .map(|(u, i)| counts[u * mask.n_items + i])
        .collect();
    if observed.is_empty() {
        return Err(Error::Empty("threshold needs at least one observed pair".into()));
    }
    lower_median(&observed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RepKind {
    Count,
    BinaryThreshold(f64),
    Custom,
}

/// Per-pair treatment vectors of dimension `dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentRep {
    pub n_users: usize,
    pub n_items: usize,
    pub dim: usize,
    pub kind: RepKind,
    values: Vec<f64>,
}

impl TreatmentRep {
    pub fn custom(n_users: usize, n_items: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("treatment dimension must be positive"));
        }
        if values.len() != n_users * n_items * dim {
            return Err(Error::DimensionMismatch {
                expected: n_users * n_items * dim,
                got: values.len(),
            });
        }
        Ok(Self {
            n_users,
            n_items,
            dim,
            kind: RepKind::Custom,
            values,
        })
    }

    /// A scalar representation with the same value everywhere.
    pub fn constant(n_users: usize, n_items: usize, g: f64) -> Self {
        Self {
            n_users,
            n_items,
            dim: 1,
            kind: RepKind::Custom,
            values: vec![g; n_users * n_items],
        }
    }

    #[inline]
    pub fn get(&self, u: usize, i: usize) -> &[f64] {
        let k = (u * self.n_items + i) * self.dim;
        &self.values[k..k + self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for u in 0..self.n_users {
            for i in 0..self.n_items {
                let _ = write!(out, "{u}\t{i}\t");
                for (s, g) in self.get(u, i).iter().enumerate() {
                    if s > 0 {
                        out.push(',');
                    }
                    let _ = write!(out, "{g}");
                }
                out.push('\n');
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_tsv(path: &Path, n_users: usize, n_items: usize, kind: RepKind) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut dim = 0;
        let mut values = vec![f64::NAN; 0];
        let mut filled = 0usize;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |m: &str| Error::Parse {
                line: idx + 1,
                msg: m.to_string(),
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad("expected user, item and treatment columns"));
            }
            let u: usize = cols[0].parse().map_err(|_| bad("bad user"))?;
            let i: usize = cols[1].parse().map_err(|_| bad("bad item"))?;
            check_index(u, i, n_users, n_items)?;
            let g: Vec<f64> = cols[2]
                .split(',')
                .map(|t| t.parse().map_err(|_| bad("bad treatment value")))
                .collect::<Result<_>>()?;
            if dim == 0 {
                dim = g.len();
                values = vec![f64::NAN; n_users * n_items * dim];
            } else if g.len() != dim {
                return Err(bad("inconsistent treatment dimension"));
            }
            let k = (u * n_items + i) * dim;
            values[k..k + dim].copy_from_slice(&g);
            filled += 1;
        }
        if filled != n_users * n_items {
            return Err(Error::Parse {
                line: 0,
                msg: format!("{}: {filled} of {} pairs present", path.display(), n_users * n_items),
            });
        }
        Ok(Self {
            n_users,
            n_items,
            dim,
            kind,
            values,
        })
    }
}

/// Neighbor-exposure counts, or their indicator `count >= c`, for every pair.
pub fn compute_rep(mode: NeighborhoodMode, mask: &ObservationMask, kind: RepKind) -> Result<TreatmentRep> {
    let counts = exposure_counts(mode, mask);
    let values = match kind {
        RepKind::Count => counts,
        RepKind::BinaryThreshold(c) => threshold_counts(&counts, c),
        RepKind::Custom => return Err(Error::invalid("custom representations are supplied, not computed")),
    };
    Ok(TreatmentRep {
        n_users: mask.n_users,
        n_items: mask.n_items,
        dim: 1,
        kind,
        values,
    })
}

pub fn threshold_counts(counts: &[f64], c: f64) -> Vec<f64> {
    counts.iter().map(|&n| if n >= c { 1.0 } else { 0.0 }).collect()
}

/// Target distribution over treatment values as weighted support points.
#[derive(Debug, Clone, PartialEq)]
pub struct RepDistribution {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl RepDistribution {
    pub fn discrete(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        Self::validated(points, weights, 1e-12)
    }

    fn validated(points: Vec<Vec<f64>>, weights: Vec<f64>, tol: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("distribution without support points".into()));
        }
        if points.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: weights.len(),
            });
        }
        let q = points[0].len();
        if q == 0 || points.iter().any(|p| p.len() != q) {
            return Err(Error::invalid("support points must share a positive dimension"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > tol {
            return Err(Error::invalid(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { points, weights })
    }

    pub fn point_mass(g: Vec<f64>) -> Self {
        Self {
            points: vec![g],
            weights: vec![1.0],
        }
    }

    pub fn uniform_binary() -> Self {
        Self {
            points: vec![vec![0.0], vec![1.0]],
            weights: vec![0.5, 0.5],
        }
    }

    pub fn uniform_over(values: &[f64]) -> Result<Self> {
        let set: BTreeSet<u64> = values.iter().map(|v| v.to_bits()).collect();
        let mut pts: Vec<f64> = set.into_iter().map(f64::from_bits).collect();
        pts.sort_by(f64::total_cmp);
        if pts.is_empty() {
            return Err(Error::Empty("no values for a uniform distribution".into()));
        }
        let w = 1.0 / pts.len() as f64;
        Ok(Self {
            weights: vec![w; pts.len()],
            points: pts.into_iter().map(|p| vec![p]).collect(),
        })
    }

    /// Quadrature discretization of a density on `[lo, hi]`.
    pub fn from_density(density: impl Fn(f64) -> f64, lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        if !(hi > lo) || nodes == 0 {
            return Err(Error::invalid("density needs hi > lo and at least one node"));
        }
        let (x, w) = gauss_legendre_on(nodes, lo, hi);
        let weights: Vec<f64> = x.iter().zip(&w).map(|(t, v)| v * density(*t)).collect();
        Self::validated(x.into_iter().map(|t| vec![t]).collect(), weights, 1e-9)
    }

    /// Uniform over {0,1} for binary representations, over the observed integer values otherwise.
    pub fn default_for(rep: &TreatmentRep) -> Result<Self> {
        match rep.kind {
            RepKind::BinaryThreshold(_) => Ok(Self::uniform_binary()),
            _ if rep.dim == 1 => {
                let vals: Vec<f64> = rep.values().iter().map(|v| v.round()).collect();
                Self::uniform_over(&vals)
            }
            _ => Err(Error::invalid(
                "no default distribution for multi-dimensional treatments",
            )),
        }
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Weighted sum of per-point values, taken as offsets from the first so equal values integrate
    /// to themselves exactly.
    pub fn integrate(&self, per_point: &[f64]) -> f64 {
        let Some(&base) = per_point.first() else {
            return 0.0;
        };
        base + crate::numeric::compensated_sum(self.weights.iter().zip(per_point).map(|(w, v)| w * (v - base)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mask(nu: usize, ni: usize, p: f64, seed: u64) -> ObservationMask {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ObservationMask::from_fn(nu, ni, |_, _| rng.gen_bool(p))
    }

    #[test]
    fn row_column_neighbors_in_3x3() {
        let mask = ObservationMask::new(3, 3);
        let mut n = neighbors(NeighborhoodMode::RowColumn, 1, 1, &mask).unwrap();
        n.sort();
        assert_eq!(n, vec![(0, 1), (1, 0), (1, 2), (2, 1)]);
    }

    #[test]
    fn single_cell_has_no_neighbors() {
        let mask = ObservationMask::new(1, 1);
        for mode in [
            NeighborhoodMode::RowColumn,
            NeighborhoodMode::UserHistory,
            NeighborhoodMode::ItemHistory,
            NeighborhoodMode::Interaction,
        ] {
            assert!(neighbors(mode, 0, 0, &mask).unwrap().is_empty());
        }
    }

    #[test]
    fn out_of_range_is_an_error() {
        let mask = ObservationMask::new(2, 2);
        assert!(matches!(
            neighbors(NeighborhoodMode::RowColumn, 2, 0, &mask),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn counts_match_brute_force() {
        for seed in 0..20 {
            let mask = random_mask(4 + seed as usize % 3, 4 + seed as usize % 2, 0.45, seed);
            for mode in [
                NeighborhoodMode::RowColumn,
                NeighborhoodMode::UserHistory,
                NeighborhoodMode::ItemHistory,
                NeighborhoodMode::Interaction,
            ] {
                let fast = exposure_counts(mode, &mask);
                for u in 0..mask.n_users {
                    for i in 0..mask.n_items {
                        let brute = neighbors(mode, u, i, &mask)
                            .unwrap()
                            .iter()
                            .filter(|&&(a, b)| mask.get(a, b))
                            .count() as f64;
                        assert_eq!(fast[u * mask.n_items + i], brute, "{mode:?} ({u},{i})");
                    }
                }
            }
        }
    }

    #[test]
    fn row_column_relation_is_symmetric() {
        let mask = ObservationMask::new(3, 4);
        for u in 0..3 {
            for i in 0..4 {
                for (a, b) in neighbors(NeighborhoodMode::RowColumn, u, i, &mask).unwrap() {
                    assert!(neighbors(NeighborhoodMode::RowColumn, a, b, &mask)
                        .unwrap()
                        .contains(&(u, i)));
                }
            }
        }
    }

    #[test]
    fn binary_equals_thresholded_counts() {
        let mask = random_mask(6, 7, 0.3, 11);
        let c = median_threshold(NeighborhoodMode::RowColumn, &mask).unwrap();
        let bin = compute_rep(NeighborhoodMode::RowColumn, &mask, RepKind::BinaryThreshold(c)).unwrap();
        let cnt = compute_rep(NeighborhoodMode::RowColumn, &mask, RepKind::Count).unwrap();
        assert_eq!(bin.values(), threshold_counts(cnt.values(), c).as_slice());
    }

    #[test]
    fn lower_median_examples() {
        assert_eq!(lower_median(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert_eq!(lower_median(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 2.0);
        assert!(lower_median(&[]).is_err());
    }

    #[test]
    fn threshold_on_empty_mask_is_an_error() {
        let mask = ObservationMask::new(3, 3);
        assert!(matches!(
            median_threshold(NeighborhoodMode::RowColumn, &mask),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn distribution_validation() {
        assert!(RepDistribution::discrete(vec![vec![0.0], vec![1.0]], vec![0.5, 0.5]).is_ok());
        assert!(RepDistribution::discrete(vec![vec![0.0], vec![1.0]], vec![0.5, 0.6]).is_err());
        let d = RepDistribution::from_density(|_| 0.5, 0.0, 2.0, 16).unwrap();
        assert!((d.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(RepDistribution::from_density(|_| 1.0, 0.0, 2.0, 16).is_err());
    }

    #[test]
    fn default_distributions() {
        let mask = random_mask(5, 5, 0.4, 2);
        let bin = compute_rep(NeighborhoodMode::RowColumn, &mask, RepKind::BinaryThreshold(2.0)).unwrap();
        assert_eq!(
            RepDistribution::default_for(&bin).unwrap(),
            RepDistribution::uniform_binary()
        );
        let cnt = compute_rep(NeighborhoodMode::UserHistory, &mask, RepKind::Count).unwrap();
        let d = RepDistribution::default_for(&cnt).unwrap();
        let distinct: BTreeSet<i64> = cnt.values().iter().map(|v| *v as i64).collect();
        assert_eq!(d.len(), distinct.len());
    }

    #[test]
    fn tsv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.tsv");
        let rep = TreatmentRep::custom(2, 2, 2, vec![0.0, 1.0, 2.0, 3.0, 4.5, 5.0, 6.0, 7.0]).unwrap();
        rep.write_tsv(&p).unwrap();
        assert_eq!(TreatmentRep::read_tsv(&p, 2, 2, RepKind::Custom).unwrap(), rep);
    }
}
