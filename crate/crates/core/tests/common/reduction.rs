// With every pair at one treatment value, a point-mass target and the exact-match kernel, the
// neighborhood estimators and trainers must coincide with their baseline counterparts.

use nbdebias::data::{ObservationMask, RatingMatrix};
use nbdebias::estimators::{dr_loss, ips_loss, n_dr_loss, n_ips_loss, ErrorSource, NeighborhoodInputs};
use nbdebias::kernels::KernelSpec;
use nbdebias::learning::{
    train_baseline, train_n_dr_jl, train_n_ips, train_n_mrdr_jl, BaselineData, BaselineKind, NeighborhoodData,
    TrainConfig, TrainOutcome,
};
use nbdebias::loss::LossSpec;
use nbdebias::neighborhood::{RepDistribution, TreatmentRep};
use nbdebias::propensity::PropensityField;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct World {
    ratings: RatingMatrix,
    rhat: RatingMatrix,
    imputed: RatingMatrix,
    mask: ObservationMask,
    field: PropensityField,
    rep: TreatmentRep,
    pi: RepDistribution,
    kernel: KernelSpec,
}

fn world(seed: u64, nu: usize, ni: usize) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probs: Vec<f64> = (0..nu * ni).map(|_| rng.gen_range(0.05..0.95)).collect();
    World {
        ratings: RatingMatrix::from_fn(nu, ni, |_, _| rng.gen_range(1..=5) as f64),
        rhat: RatingMatrix::from_fn(nu, ni, |_, _| rng.gen_range(1.0..5.0)),
        imputed: RatingMatrix::from_fn(nu, ni, |_, _| rng.gen_range(1.0..5.0)),
        mask: ObservationMask::from_fn(nu, ni, |u, i| rng.gen_bool(probs[u * ni + i])),
        field: PropensityField::from_probabilities(nu, ni, &probs).unwrap(),
        rep: TreatmentRep::constant(nu, ni, 0.0),
        pi: RepDistribution::point_mass(vec![0.0]),
        kernel: KernelSpec::exact(),
    }
}

pub fn estimators_reduce() {
    for seed in 0..20 {
        let w = world(seed, 15, 12);
        for loss in [LossSpec::AbsoluteError, LossSpec::SquaredError] {
            let inp = NeighborhoodInputs {
                rhat: &w.rhat,
                errors: ErrorSource::Observed(&w.ratings),
                mask: &w.mask,
                rep: &w.rep,
                field: &w.field,
                pi: &w.pi,
                kernel: &w.kernel,
                loss,
            };
            let nips = n_ips_loss(&inp).unwrap().integrated;
            let ips = ips_loss(&w.rhat, &w.ratings, &w.mask, &w.field, loss).unwrap();
            assert!((nips - ips).abs() < 1e-12, "seed {seed}: {nips} vs {ips}");
            let ndr = n_dr_loss(&inp, std::slice::from_ref(&w.imputed)).unwrap().integrated;
            let dr = dr_loss(&w.rhat, &w.ratings, &w.mask, &w.imputed, &w.field, loss).unwrap();
            assert!((ndr - dr).abs() < 1e-12, "seed {seed}: {ndr} vs {dr}");
        }
    }
}

fn assert_same_trajectory(a: &TrainOutcome, b: &TrainOutcome) {
    assert_eq!(a.curve.len(), b.curve.len());
    for (x, y) in a.curve.iter().zip(&b.curve) {
        assert_eq!(x.loss.to_bits(), y.loss.to_bits(), "epoch {} {}", x.epoch, x.phase);
    }
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.model.params), bits(&b.model.params));
    match (&a.imputation, &b.imputation) {
        (Some(x), Some(y)) => assert_eq!(bits(&x.params), bits(&y.params)),
        (None, None) => {}
        _ => panic!("one trainer produced an imputation model"),
    }
}

pub fn trainers_reduce_bitwise() {
    let w = world(42, 20, 16);
    let val = ObservationMask::from_fn(20, 16, |u, i| (u + i) % 5 == 0);
    let nb = NeighborhoodData {
        ratings: &w.ratings,
        rep: &w.rep,
        field: &w.field,
        pi: &w.pi,
        kernel: &w.kernel,
        loss: LossSpec::SquaredError,
    };
    let base = BaselineData {
        ratings: &w.ratings,
        field: &w.field,
        loss: LossSpec::SquaredError,
    };
    let cfg = TrainConfig {
        epochs: 6,
        batch_size: 32,
        dim: 3,
        seed: 9,
        lr: 0.02,
        ..Default::default()
    };
    for validation in [None, Some(&val)] {
        let n = train_n_ips(&nb, &w.mask, validation, &cfg).unwrap();
        let b = train_baseline(BaselineKind::Ips, &base, &w.mask, validation, &cfg).unwrap();
        assert_same_trajectory(&n, &b);
        let n = train_n_dr_jl(&nb, &w.mask, validation, &cfg).unwrap();
        let b = train_baseline(BaselineKind::DrJl, &base, &w.mask, validation, &cfg).unwrap();
        assert_same_trajectory(&n, &b);
        let n = train_n_mrdr_jl(&nb, &w.mask, validation, &cfg).unwrap();
        let b = train_baseline(BaselineKind::MrdrJl, &base, &w.mask, validation, &cfg).unwrap();
        assert_same_trajectory(&n, &b);
    }
}

pub fn trainers_differ_when_treatments_vary() {
    let mut w = world(43, 12, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    w.rep = TreatmentRep::custom(12, 10, 1, (0..120).map(|_| rng.gen_range(0..2) as f64).collect()).unwrap();
    w.pi = RepDistribution::uniform_binary();
    let nb = NeighborhoodData {
        ratings: &w.ratings,
        rep: &w.rep,
        field: &w.field,
        pi: &w.pi,
        kernel: &w.kernel,
        loss: LossSpec::SquaredError,
    };
    let base = BaselineData {
        ratings: &w.ratings,
        field: &w.field,
        loss: LossSpec::SquaredError,
    };
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 16,
        dim: 2,
        ..Default::default()
    };
    let n = train_n_ips(&nb, &w.mask, None, &cfg).unwrap();
    let b = train_baseline(BaselineKind::Ips, &base, &w.mask, None, &cfg).unwrap();
    assert_ne!(n.model.params, b.model.params);
}
