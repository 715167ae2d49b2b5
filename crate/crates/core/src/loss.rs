use crate::error::{Error, Result};

const PROB_EPS: f64 = 1e-7;

/// Pointwise prediction loss `δ(prediction, target)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossSpec {
    AbsoluteError,
    SquaredError,
    /// Log loss for predictions in (0, 1); predictions are clamped away from the ends.
    CrossEntropy,
}

impl LossSpec {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mae" | "absolute" => Ok(Self::AbsoluteError),
            "mse" | "squared" => Ok(Self::SquaredError),
            "ce" | "cross-entropy" => Ok(Self::CrossEntropy),
            _ => Err(Error::Config(format!("unknown loss {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::AbsoluteError => "mae",
            Self::SquaredError => "mse",
            Self::CrossEntropy => "ce",
        }
    }

    #[inline]
    pub fn value(self, pred: f64, target: f64) -> f64 {
        match self {
            Self::AbsoluteError => (pred - target).abs(),
            Self::SquaredError => (pred - target) * (pred - target),
            Self::CrossEntropy => {
                let p = pred.clamp(PROB_EPS, 1.0 - PROB_EPS);
                -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
            }
        }
    }

    /// `∂δ/∂pred`.
    #[inline]
    pub fn d_pred(self, pred: f64, target: f64) -> f64 {
        match self {
            Self::AbsoluteError => sign(pred - target),
            Self::SquaredError => 2.0 * (pred - target),
            Self::CrossEntropy => {
                let p = pred.clamp(PROB_EPS, 1.0 - PROB_EPS);
                (p - target) / (p * (1.0 - p))
            }
        }
    }

    /// `∂δ/∂target`.
    #[inline]
    pub fn d_target(self, pred: f64, target: f64) -> f64 {
        match self {
            Self::AbsoluteError => -sign(pred - target),
            Self::SquaredError => -2.0 * (pred - target),
            Self::CrossEntropy => {
                let p = pred.clamp(PROB_EPS, 1.0 - PROB_EPS);
                ((1.0 - p) / p).ln()
            }
        }
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
