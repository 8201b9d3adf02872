use crate::error::{Result, SheError};

/// Nonrandom initial profile `u_0`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialProfile {
    Delta { at: Vec<i64>, mass: f64 },
    Constant(f64),
    /// Listed values, `background` elsewhere.
    Table { entries: Vec<(Vec<i64>, f64)>, background: f64 },
}

impl InitialProfile {
    pub fn delta(dim: usize) -> Self {
        Self::Delta {
            at: vec![0; dim],
            mass: 1.0,
        }
    }

    pub fn value_at(&self, x: &[i64]) -> f64 {
        match self {
            Self::Delta { at, mass } => {
                if at.as_slice() == x {
                    *mass
                } else {
                    0.0
                }
            }
            Self::Constant(c) => *c,
            Self::Table {
                entries,
                background,
            } => entries
                .iter()
                .find(|(p, _)| p.as_slice() == x)
                .map_or(*background, |(_, v)| *v),
        }
    }

    /// `u_0 + c`.
    pub fn shifted(&self, c: f64) -> Self {
        match self {
            Self::Delta { at, mass } => Self::Table {
                entries: vec![(at.clone(), mass + c)],
                background: c,
            },
            Self::Constant(v) => Self::Constant(v + c),
            Self::Table {
                entries,
                background,
            } => Self::Table {
                entries: entries.iter().map(|(p, v)| (p.clone(), v + c)).collect(),
                background: background + c,
            },
        }
    }

    /// `c u_0`.
    pub fn scaled(&self, c: f64) -> Self {
        match self {
            Self::Delta { at, mass } => Self::Delta {
                at: at.clone(),
                mass: mass * c,
            },
            Self::Constant(v) => Self::Constant(v * c),
            Self::Table {
                entries,
                background,
            } => Self::Table {
                entries: entries.iter().map(|(p, v)| (p.clone(), v * c)).collect(),
                background: background * c,
            },
        }
    }

    /// Nonzero entries when the support is finite.
    pub fn finite_support(&self) -> Option<Vec<(Vec<i64>, f64)>> {
        match self {
            Self::Delta { at, mass } => Some(vec![(at.clone(), *mass)]),
            Self::Constant(c) if *c == 0.0 => Some(Vec::new()),
            Self::Constant(_) => None,
            Self::Table {
                entries,
                background,
            } if *background == 0.0 => Some(
                entries
                    .iter()
                    .filter(|(_, v)| *v != 0.0)
                    .cloned()
                    .collect(),
            ),
            Self::Table { .. } => None,
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        match self {
            Self::Delta { mass, .. } => *mass >= 0.0,
            Self::Constant(c) => *c >= 0.0,
            Self::Table {
                entries,
                background,
            } => *background >= 0.0 && entries.iter().all(|(_, v)| *v >= 0.0),
        }
    }

    pub fn is_identically_zero(&self) -> bool {
        self.finite_support().is_some_and(|s| s.is_empty())
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        let ok = match self {
            Self::Delta { at, .. } => at.len() == dim,
            Self::Constant(_) => true,
            Self::Table { entries, .. } => entries.iter().all(|(p, _)| p.len() == dim),
        };
        if ok {
            Ok(())
        } else {
            Err(SheError::invalid("initial profile dimension does not match box"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shifting_and_support() {
        let d = InitialProfile::delta(2);
        assert_eq!(d.value_at(&[0, 0]), 1.0);
        assert_eq!(d.value_at(&[1, 0]), 0.0);
        let s = d.shifted(0.1);
        assert_eq!(s.value_at(&[0, 0]), 1.1);
        assert_eq!(s.value_at(&[3, 3]), 0.1);
        assert!(s.finite_support().is_none());
        assert_eq!(d.finite_support().unwrap().len(), 1);
        assert!(InitialProfile::Constant(0.0).is_identically_zero());
    }
}
