// Finite-difference checks of every training objective on 5x5 instances.

use nbdebias::data::{ObservationMask, RatingMatrix};
use nbdebias::kernels::{KernelFamily, KernelSpec};
use nbdebias::learning::{
    BaselineData, FactorModel, ImputationForm, ImputationLoss, ImputationModel, NeighborhoodData, WeightTable,
};
use nbdebias::loss::LossSpec;
use nbdebias::neighborhood::{RepDistribution, TreatmentRep};
use nbdebias::propensity::{penalized_log_loss, ConditionalModel, PropensityField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = 5;
const STEP: f64 = 1e-6;
const TOL: f64 = 1e-5;

/// `‖a - b‖ / max(‖a‖, ‖b‖)`.
fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-300)
}

fn central_diff(params: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|j| {
            let orig = p[j];
            p[j] = orig + STEP;
            let hi = f(&p);
            p[j] = orig - STEP;
            let lo = f(&p);
            p[j] = orig;
            (hi - lo) / (2.0 * STEP)
        })
        .collect()
}

struct Instance {
    ratings: RatingMatrix,
    mask: ObservationMask,
    rep: TreatmentRep,
    field: PropensityField,
    pi: RepDistribution,
    kernel: KernelSpec,
}

fn instance(seed: u64, loss: LossSpec) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ratings = RatingMatrix::from_fn(N, N, |_, _| match loss {
        LossSpec::CrossEntropy => rng.gen_range(0.0..1.0f64).round(),
        _ => rng.gen_range(1.0..5.0),
    });
    let mask = ObservationMask::from_fn(N, N, |u, i| (u * 3 + i) % 4 != 0 || rng.gen_bool(0.3));
    let rep = TreatmentRep::custom(N, N, 1, (0..N * N).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let probs: Vec<f64> = (0..N * N).map(|_| rng.gen_range(0.2..0.9)).collect();
    let p1: Vec<f64> = (0..N * N).map(|_| rng.gen_range(0.2..0.8)).collect();
    let field = PropensityField::from_probabilities(N, N, &probs)
        .unwrap()
        .with_conditional(ConditionalModel::Binary(p1));
    Instance {
        ratings,
        mask,
        rep,
        field,
        pi: RepDistribution::discrete(vec![vec![0.3], vec![0.7]], vec![0.4, 0.6]).unwrap(),
        kernel: KernelSpec::scalar(KernelFamily::Gaussian, 0.3).unwrap(),
    }
}

fn tables(inst: &Instance, loss: LossSpec) -> Vec<(&'static str, WeightTable)> {
    let nb = NeighborhoodData {
        ratings: &inst.ratings,
        rep: &inst.rep,
        field: &inst.field,
        pi: &inst.pi,
        kernel: &inst.kernel,
        loss,
    };
    let base = BaselineData {
        ratings: &inst.ratings,
        field: &inst.field,
        loss,
    };
    vec![
        ("neighborhood", WeightTable::neighborhood(&nb, &inst.mask).unwrap()),
        ("baseline", WeightTable::baseline(&base, &inst.mask, true).unwrap()),
        ("naive", WeightTable::baseline(&base, &inst.mask, false).unwrap()),
    ]
}

fn with_params(model: &FactorModel, p: &[f64]) -> FactorModel {
    FactorModel {
        params: p.to_vec(),
        ..model.clone()
    }
}

fn squash(loss: LossSpec) -> bool {
    loss == LossSpec::CrossEntropy
}

pub fn weighted_observed_objective() {
    for loss in [LossSpec::SquaredError, LossSpec::CrossEntropy, LossSpec::AbsoluteError] {
        let inst = instance(1, loss);
        for (name, t) in tables(&inst, loss) {
            let model = FactorModel::random(N, N, 2, squash(loss), 0.5, 3).unwrap();
            let batch = t.observed_pairs();
            let mut g = vec![0.0; model.params.len()];
            t.ips_gradient(&model, &batch, &mut g);
            let fd = central_diff(&model.params, |p| t.ips_objective(&with_params(&model, p), &batch));
            let e = rel_error(&g, &fd);
            assert!(e < TOL, "{name} {loss:?}: {e}");
        }
    }
}

pub fn doubly_robust_prediction_objective() {
    for loss in [LossSpec::SquaredError, LossSpec::CrossEntropy] {
        let inst = instance(2, loss);
        for (name, t) in tables(&inst, loss) {
            for form in [ImputationForm::PerPoint, ImputationForm::Shared] {
                let model = FactorModel::random(N, N, 2, squash(loss), 0.5, 4).unwrap();
                let mut imp = ImputationModel::new(model.layout, squash(loss), form, t.points.clone(), 0.5, 5).unwrap();
                if form == ImputationForm::Shared {
                    let n = imp.params.len();
                    imp.params[n - 1] = 0.7;
                }
                let batch = t.all_pairs();
                let mut g = vec![0.0; model.params.len()];
                t.dr_gradient(&model, &imp, &batch, &mut g);
                let fd = central_diff(&model.params, |p| t.dr_objective(&with_params(&model, p), &imp, &batch));
                let e = rel_error(&g, &fd);
                assert!(e < TOL, "{name} {loss:?} {form:?}: {e}");
            }
        }
    }
}

pub fn imputation_objectives() {
    for loss in [LossSpec::SquaredError, LossSpec::CrossEntropy] {
        let inst = instance(3, loss);
        for (name, t) in tables(&inst, loss) {
            for form in [ImputationForm::PerPoint, ImputationForm::Shared] {
                for kind in [ImputationLoss::DoublyRobust, ImputationLoss::MoreRobust] {
                    let model = FactorModel::random(N, N, 2, squash(loss), 0.5, 6).unwrap();
                    let mut imp =
                        ImputationModel::new(model.layout, squash(loss), form, t.points.clone(), 0.5, 7).unwrap();
                    if form == ImputationForm::Shared {
                        let n = imp.params.len();
                        imp.params[n - 1] = -0.4;
                    }
                    let batch = t.all_pairs();
                    let mut g = vec![0.0; imp.params.len()];
                    t.imputation_gradient(&model, &imp, &batch, kind, &mut g);
                    let fd = central_diff(&imp.params, |p| {
                        let m = ImputationModel {
                            params: p.to_vec(),
                            ..imp.clone()
                        };
                        t.imputation_objective(&model, &m, &batch, kind)
                    });
                    let e = rel_error(&g, &fd);
                    // the unweighted table has p = 1, where the variance-reducing loss is identically zero
                    if g.iter().all(|v| *v == 0.0) {
                        assert!(fd.iter().all(|v| v.abs() < 1e-9), "{name} {kind:?}");
                        continue;
                    }
                    assert!(e < TOL, "{name} {loss:?} {form:?} {kind:?}: {e}");
                }
            }
        }
    }
}

pub fn propensity_log_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rows: Vec<(Vec<f64>, f64)> = (0..N * N)
        .map(|_| {
            let x = vec![1.0, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0)];
            (x, if rng.gen_bool(0.4) { 1.0 } else { 0.0 })
        })
        .collect();
    let w = vec![0.3, -0.8, 0.5];
    for l2 in [0.0, 0.1] {
        let (_, g) = penalized_log_loss(&rows, &w, l2);
        let fd = central_diff(&w, |p| penalized_log_loss(&rows, p, l2).0);
        let e = rel_error(&g, &fd);
        assert!(e < TOL, "l2={l2}: {e}");
    }
}
