use std::fmt;
use std::sync::Arc;

use crate::error::{Result, SheError};
use crate::rng::KeyedStream;

pub type SigmaFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, PartialEq)]
pub enum SigmaKind {
    /// `sigma(u) = q u`: the parabolic Anderson model.
    Linear { q: f64 },
    /// `sigma(u) = q tanh(u)`.
    Tanh { q: f64 },
    /// `sigma(u) = q u / (1 + |u|)`.
    Saturating { q: f64 },
    /// Piecewise-linear interpolation through knots, extended linearly.
    Table { knots: Vec<(f64, f64)> },
    Custom,
}

/// Diffusion coefficient with its declared constants `Lip_sigma` and
/// `ell_sigma = inf |sigma(z)/z|`.
#[derive(Clone)]
pub struct Nonlinearity {
    kind: SigmaKind,
    eval: SigmaFn,
    lip: f64,
    ell: f64,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Nonlinearity")
            .field("kind", &self.kind)
            .field("lip", &self.lip)
            .field("ell", &self.ell)
            .finish()
    }
}

impl Nonlinearity {
    pub fn linear(q: f64) -> Self {
        Self {
            kind: SigmaKind::Linear { q },
            eval: Arc::new(move |u| q * u),
            lip: q.abs(),
            ell: q.abs(),
        }
    }

    pub fn zero() -> Self {
        Self::linear(0.0)
    }

    pub fn tanh(q: f64) -> Self {
        Self {
            kind: SigmaKind::Tanh { q },
            eval: Arc::new(move |u: f64| q * u.tanh()),
            lip: q.abs(),
            ell: 0.0,
        }
    }

    pub fn saturating(q: f64) -> Self {
        Self {
            kind: SigmaKind::Saturating { q },
            eval: Arc::new(move |u: f64| q * u / (1.0 + u.abs())),
            lip: q.abs(),
            ell: 0.0,
        }
    }

    /// Piecewise-linear `sigma`; the declared constants must dominate the
    /// table's own slopes and ratios.
    pub fn table(mut knots: Vec<(f64, f64)>, lip: f64, ell: f64) -> Result<Self> {
        if knots.len() < 2 {
            return Err(SheError::invalid("sigma table needs at least two knots"));
        }
        knots.sort_by(|a, b| a.0.total_cmp(&b.0));
        if knots.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(SheError::invalid("sigma table has repeated abscissae"));
        }
        let table = knots.clone();
        let eval: SigmaFn = Arc::new(move |u: f64| interpolate(&table, u));
        Self::custom_with_kind(SigmaKind::Table { knots }, eval, lip, ell)
    }

    pub fn custom<F>(f: F, lip: f64, ell: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::custom_with_kind(SigmaKind::Custom, Arc::new(f), lip, ell)
    }

    fn custom_with_kind(kind: SigmaKind, eval: SigmaFn, lip: f64, ell: f64) -> Result<Self> {
        if !(lip >= 0.0 && lip.is_finite()) || !(ell >= 0.0) || ell > lip {
            return Err(SheError::invalid(format!(
                "need 0 <= ell ({ell}) <= lip ({lip}) < inf"
            )));
        }
        let s = Self { kind, eval, lip, ell };
        s.validate()?;
        Ok(s)
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        (self.eval)(u)
    }

    pub fn kind(&self) -> &SigmaKind {
        &self.kind
    }

    pub fn lip(&self) -> f64 {
        self.lip
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    pub fn linear_coefficient(&self) -> Option<f64> {
        match self.kind {
            SigmaKind::Linear { q } => Some(q),
            _ => None,
        }
    }

    pub fn is_identically_zero(&self) -> bool {
        matches!(self.kind, SigmaKind::Linear { q } if q == 0.0)
    }

    /// Sampled checks of `sigma(0) = 0`, the slope bound and the lower bound.
    pub fn validate(&self) -> Result<()> {
        let at_zero = self.eval(0.0);
        if at_zero.abs() > 1e-12 {
            return Err(SheError::invalid(format!("sigma(0) = {at_zero}, expected 0")));
        }
        let mut rng = KeyedStream::aux(0x5167_4D41, 0);
        for _ in 0..2000 {
            let a = -10.0 + 20.0 * rng.uniform();
            let b = -10.0 + 20.0 * rng.uniform();
            if a == b {
                continue;
            }
            let (sa, sb) = (self.eval(a), self.eval(b));
            if (sa - sb).abs() > self.lip * (a - b).abs() + 1e-12 {
                return Err(SheError::invalid(format!(
                    "slope between {a} and {b} exceeds declared lip {}",
                    self.lip
                )));
            }
            if sa.abs() < self.ell * a.abs() - 1e-12 {
                return Err(SheError::invalid(format!(
                    "|sigma({a})| below declared ell {} times |z|",
                    self.ell
                )));
            }
        }
        Ok(())
    }

    /// Sampled check that `sigma > 0` on `(lo, hi)`, both positive.
    pub fn positive_on(&self, lo: f64, hi: f64) -> bool {
        let n = 1000;
        (0..=n).all(|i| {
            let w = lo + (hi - lo) * i as f64 / n as f64;
            w <= 0.0 || self.eval(w) > 0.0
        })
    }
}

fn interpolate(knots: &[(f64, f64)], u: f64) -> f64 {
    let i = knots.partition_point(|k| k.0 <= u);
    let (a, b) = if i == 0 {
        (knots[0], knots[1])
    } else if i >= knots.len() {
        (knots[knots.len() - 2], knots[knots.len() - 1])
    } else {
        (knots[i - 1], knots[i])
    };
    a.1 + (b.1 - a.1) * (u - a.0) / (b.0 - a.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_validate() {
        for s in [
            Nonlinearity::linear(0.7),
            Nonlinearity::zero(),
            Nonlinearity::tanh(2.0),
            Nonlinearity::saturating(1.5),
        ] {
            s.validate().unwrap();
        }
    }

    #[test]
    fn declared_lip_too_small_is_rejected() {
        assert!(Nonlinearity::custom(|u| 2.0 * u, 1.0, 0.0).is_err());
        assert!(Nonlinearity::custom(|u| 2.0 * u, 2.0, 2.0).is_ok());
        assert!(Nonlinearity::custom(|u| u + 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn table_interpolates_and_extrapolates() {
        let s = Nonlinearity::table(vec![(0.0, 0.0), (1.0, 2.0), (2.0, 3.0)], 2.0, 0.0).unwrap();
        assert_eq!(s.eval(0.5), 1.0);
        assert_eq!(s.eval(1.5), 2.5);
        assert_eq!(s.eval(-1.0), -2.0);
        assert_eq!(s.eval(4.0), 5.0);
        assert!(Nonlinearity::table(vec![(0.0, 0.0), (1.0, 2.0)], 1.0, 0.0).is_err());
    }

    #[test]
    fn positivity_probe() {
        assert!(Nonlinearity::linear(1.0).positive_on(0.1, 5.0));
        assert!(!Nonlinearity::custom(|u: f64| u.sin(), 1.0, 0.0).unwrap().positive_on(0.1, 5.0));
    }
}
