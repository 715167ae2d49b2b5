use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    Gaussian,
    Epanechnikov,
    /// Indicator of an exact treatment match, without bandwidth scaling.
    ExactMatch,
}

impl KernelFamily {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "epanechnikov" => Ok(Self::Epanechnikov),
            "exact" | "exact-match" => Ok(Self::ExactMatch),
            _ => Err(Error::Config(format!("unknown kernel family {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Gaussian => "gaussian",
            Self::Epanechnikov => "epanechnikov",
            Self::ExactMatch => "exact",
        }
    }

    pub fn evaluate(self, t: f64) -> f64 {
        match self {
            Self::Gaussian => (-0.5 * t * t).exp() / (2.0 * PI).sqrt(),
            Self::Epanechnikov => {
                if t.abs() <= 1.0 {
                    0.75 * (1.0 - t * t)
                } else {
                    0.0
                }
            }
            Self::ExactMatch => {
                if t == 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `∫ t² K(t) dt`.
    pub fn second_moment(self) -> Result<f64> {
        match self {
            Self::Gaussian => Ok(1.0),
            Self::Epanechnikov => Ok(0.2),
            Self::ExactMatch => Err(Error::invalid("exact-match kernel has no moments")),
        }
    }

    /// `∫ K(t) K(s + t) dt`.
    pub fn self_convolution(self, s: f64) -> Result<f64> {
        match self {
            Self::Gaussian => Ok((-0.25 * s * s).exp() / (2.0 * PI.sqrt())),
            Self::Epanechnikov => {
                let a = s.abs();
                if a >= 2.0 {
                    Ok(0.0)
                } else {
                    Ok(3.0 / 160.0 * (2.0 - a).powi(3) * (a * a + 6.0 * a + 4.0))
                }
            }
            Self::ExactMatch => Err(Error::invalid("exact-match kernel has no convolution")),
        }
    }
}

pub fn kernel_eval(family: KernelFamily, t: f64) -> f64 {
    family.evaluate(t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// One bandwidth per treatment dimension; unused for exact matching.
    pub bandwidth: Vec<f64>,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: Vec<f64>) -> Result<Self> {
        if family != KernelFamily::ExactMatch {
            if bandwidth.is_empty() {
                return Err(Error::invalid("kernel needs at least one bandwidth"));
            }
            if let Some(h) = bandwidth.iter().find(|h| !(h.is_finite() && **h > 0.0)) {
                return Err(Error::invalid(format!("bandwidth must be positive, got {h}")));
            }
        }
        Ok(Self { family, bandwidth })
    }

    pub fn exact() -> Self {
        Self {
            family: KernelFamily::ExactMatch,
            bandwidth: Vec::new(),
        }
    }

    pub fn scalar(family: KernelFamily, h: f64) -> Result<Self> {
        Self::new(family, vec![h])
    }

    /// Parses `kernel.family` and a comma-separated `kernel.bandwidth`.
    pub fn from_strings(family: &str, bandwidth: &str) -> Result<Self> {
        let family = KernelFamily::parse(family)?;
        let bw = if bandwidth.trim().is_empty() {
            Vec::new()
        } else {
            bandwidth
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad bandwidth {t:?}")))
                })
                .collect::<Result<_>>()?
        };
        Self::new(family, bw)
    }

    pub fn check_dim(&self, q: usize) -> Result<()> {
        if self.family != KernelFamily::ExactMatch && self.bandwidth.len() != q {
            return Err(Error::DimensionMismatch {
                expected: self.bandwidth.len(),
                got: q,
            });
        }
        Ok(())
    }

    /// Product-kernel weight `Π K((a_s - b_s)/h_s) / Π h_s` without dimension checks.
    #[inline]
    pub fn weight(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.family {
            KernelFamily::ExactMatch => {
                if a == b {
                    1.0
                } else {
                    0.0
                }
            }
            fam => {
                let mut w = 1.0;
                for ((x, y), h) in a.iter().zip(b).zip(&self.bandwidth) {
                    w *= fam.evaluate((x - y) / h) / h;
                }
                w
            }
        }
    }
}

pub fn kernel_weight(spec: &KernelSpec, g_pair: &[f64], g: &[f64]) -> Result<f64> {
    if g_pair.len() != g.len() {
        return Err(Error::DimensionMismatch {
            expected: g.len(),
            got: g_pair.len(),
        });
    }
    spec.check_dim(g.len())?;
    Ok(spec.weight(g_pair, g))
}

#[cfg(test)]
mod tests {
    use super::*;

    const G: KernelFamily = KernelFamily::Gaussian;
    const E: KernelFamily = KernelFamily::Epanechnikov;

    fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        let dx = (hi - lo) / n as f64;
        let mut s = 0.5 * (f(lo) + f(hi));
        for k in 1..n {
            s += f(lo + k as f64 * dx);
        }
        s * dx
    }

    #[test]
    fn pointwise_values() {
        assert_eq!(kernel_eval(E, 0.0), 0.75);
        assert_eq!(kernel_eval(E, 1.5), 0.0);
        assert!((kernel_eval(G, 0.0) - 0.3989422804).abs() < 1e-10);
    }

    #[test]
    fn product_weights() {
        let g1 = KernelSpec::scalar(G, 1.0).unwrap();
        assert!((kernel_weight(&g1, &[0.0], &[0.0]).unwrap() - 0.3989422804).abs() < 1e-10);
        let e2 = KernelSpec::new(E, vec![1.0, 1.0]).unwrap();
        assert!((kernel_weight(&e2, &[0.0, 0.0], &[0.0, 0.0]).unwrap() - 0.5625).abs() < 1e-15);
        let g2 = KernelSpec::scalar(G, 2.0).unwrap();
        assert!((kernel_weight(&g2, &[1.0], &[0.0]).unwrap() - 0.1760326634).abs() < 1e-10);
    }

    #[test]
    fn dimension_mismatch() {
        let g1 = KernelSpec::scalar(G, 1.0).unwrap();
        assert!(matches!(
            kernel_weight(&g1, &[0.0, 1.0], &[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(kernel_weight(&g1, &[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn bandwidth_must_be_positive() {
        assert!(KernelSpec::scalar(G, 0.0).is_err());
        assert!(KernelSpec::scalar(E, -1.0).is_err());
        assert!(KernelSpec::scalar(E, f64::NAN).is_err());
    }

    #[test]
    fn symmetric_and_scaling() {
        for fam in [G, E] {
            for h in [0.3, 1.0, 2.5] {
                let k = KernelSpec::scalar(fam, h).unwrap();
                let half = KernelSpec::scalar(fam, h / 2.0).unwrap();
                assert_eq!(k.weight(&[0.2], &[0.5]), k.weight(&[0.5], &[0.2]));
                let ratio = half.weight(&[1.0], &[1.0]) / k.weight(&[1.0], &[1.0]);
                assert!((ratio - 2.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn integrates_to_one() {
        for (fam, lim) in [(G, 12.0), (E, 1.0)] {
            for h in [0.5, 1.0, 3.0] {
                let k = KernelSpec::scalar(fam, h).unwrap();
                let v = trapezoid(|x| k.weight(&[x], &[0.0]), -lim * h, lim * h, 200_000);
                assert!((v - 1.0).abs() < 1e-6, "{fam:?} h={h}: {v}");
            }
        }
    }

    #[test]
    fn moments_match_quadrature() {
        for fam in [G, E] {
            let m1 = trapezoid(|t| t * fam.evaluate(t), -12.0, 12.0, 200_000);
            let m2 = trapezoid(|t| t * t * fam.evaluate(t), -12.0, 12.0, 200_000);
            assert!(m1.abs() < 1e-12);
            assert!((m2 - fam.second_moment().unwrap()).abs() < 1e-8);
        }
    }

    #[test]
    fn self_convolution_matches_quadrature() {
        for fam in [G, E] {
            for s in [0.0, 0.3, 1.1, 1.9, 2.5] {
                let num = trapezoid(|t| fam.evaluate(t) * fam.evaluate(s + t), -12.0, 12.0, 400_000);
                assert!((num - fam.self_convolution(s).unwrap()).abs() < 1e-8, "{fam:?} {s}");
            }
        }
    }

    #[test]
    fn exact_match_is_an_indicator() {
        let k = KernelSpec::exact();
        assert_eq!(k.weight(&[1.0], &[1.0]), 1.0);
        assert_eq!(k.weight(&[1.0], &[0.0]), 0.0);
        assert!(KernelSpec::from_strings("exact", "").is_ok());
        assert_eq!(
            KernelSpec::from_strings("gaussian", "0.5,2").unwrap().bandwidth,
            vec![0.5, 2.0]
        );
    }
}
