use std::collections::HashMap;

use crate::error::{Result, SheError};
use crate::lattice::InitialProfile;
use crate::walk_kernel::WalkKernel;

#[derive(Debug, Clone, PartialEq)]
pub enum Boundary {
    Periodic,
    /// Sites outside the box keep fixed values: the given profile, or the
    /// run's own initial profile when `None`.
    Frozen(Option<InitialProfile>),
}

/// Finite box of `Z^d` centred at the origin: axis `k` covers
/// `[-(e_k / 2), e_k - 1 - e_k / 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeBox {
    extents: Vec<usize>,
    boundary: Boundary,
}

impl LatticeBox {
    pub fn new(extents: Vec<usize>, boundary: Boundary) -> Result<Self> {
        if extents.is_empty() || extents.contains(&0) {
            return Err(SheError::invalid("every extent must be positive"));
        }
        Ok(Self { extents, boundary })
    }

    pub fn periodic(extents: Vec<usize>) -> Result<Self> {
        Self::new(extents, Boundary::Periodic)
    }

    pub fn frozen(extents: Vec<usize>) -> Result<Self> {
        Self::new(extents, Boundary::Frozen(None))
    }

    pub fn dim(&self) -> usize {
        self.extents.len()
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn boundary(&self) -> &Boundary {
        &self.boundary
    }

    pub fn sites(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self.boundary, Boundary::Periodic)
    }

    fn low(&self, k: usize) -> i64 {
        -((self.extents[k] / 2) as i64)
    }

    pub fn point(&self, site: usize) -> Vec<i64> {
        let d = self.dim();
        let mut x = vec![0; d];
        let mut rest = site;
        for k in (0..d).rev() {
            x[k] = (rest % self.extents[k]) as i64 + self.low(k);
            rest /= self.extents[k];
        }
        x
    }

    /// Index of an in-box point.
    pub fn site(&self, x: &[i64]) -> Option<usize> {
        if x.len() != self.dim() {
            return None;
        }
        let mut idx = 0usize;
        for (k, &c) in x.iter().enumerate() {
            let off = c - self.low(k);
            if off < 0 || off >= self.extents[k] as i64 {
                return None;
            }
            idx = idx * self.extents[k] + off as usize;
        }
        Some(idx)
    }

    /// Index of the torus image of any point.
    pub fn wrapped_site(&self, x: &[i64]) -> usize {
        let mut idx = 0usize;
        for (k, &c) in x.iter().enumerate() {
            let e = self.extents[k] as i64;
            let off = (c - self.low(k)).rem_euclid(e);
            idx = idx * self.extents[k] + off as usize;
        }
        idx
    }

    /// Checks the box against a jump law.
    pub fn validate_for(&self, kernel: &WalkKernel) -> Result<()> {
        if kernel.dim() != self.dim() {
            return Err(SheError::invalid(format!(
                "box dimension {} does not match kernel dimension {}",
                self.dim(),
                kernel.dim()
            )));
        }
        if self.is_periodic() {
            let need = 3 * kernel.jumps().max_jump_norm() as usize;
            if let Some(&e) = self.extents.iter().find(|&&e| e < need) {
                return Err(SheError::invalid(format!(
                    "periodic extent {e} below 3 x max jump norm ({need})"
                )));
            }
        }
        Ok(())
    }

    pub fn min_extent(&self) -> usize {
        self.extents.iter().copied().min().unwrap_or(0)
    }
}

/// Neighbour table for `I + dt L` on a box. Neighbour indices at or beyond
/// `sites` address exterior slots with frozen values.
#[derive(Debug, Clone)]
pub(crate) struct Stencil {
    pub sites: usize,
    /// `sites * arity` neighbour indices into the extended buffer.
    pub neighbours: Vec<u32>,
    /// `P{Z = z}` for the nonzero jumps, in neighbour order.
    pub masses: Vec<f64>,
    pub hold: f64,
    pub rate: f64,
    pub exterior: Vec<Vec<i64>>,
}

impl Stencil {
    pub fn build(lattice: &LatticeBox, kernel: &WalkKernel) -> Result<Self> {
        lattice.validate_for(kernel)?;
        let moving: Vec<_> = kernel
            .jumps()
            .jumps()
            .iter()
            .filter(|j| j.vec.iter().any(|&c| c != 0))
            .collect();
        let sites = lattice.sites();
        let mut neighbours = Vec::with_capacity(sites * moving.len());
        let mut exterior = Vec::new();
        let mut slots: HashMap<Vec<i64>, u32> = HashMap::new();
        let mut y = vec![0i64; lattice.dim()];
        for s in 0..sites {
            let x = lattice.point(s);
            for j in &moving {
                for k in 0..y.len() {
                    y[k] = x[k] + j.vec[k];
                }
                let idx = match lattice.boundary() {
                    Boundary::Periodic => lattice.wrapped_site(&y) as u32,
                    Boundary::Frozen(_) => match lattice.site(&y) {
                        Some(i) => i as u32,
                        None => *slots.entry(y.clone()).or_insert_with(|| {
                            exterior.push(y.clone());
                            (sites + exterior.len() - 1) as u32
                        }),
                    },
                };
                neighbours.push(idx);
            }
        }
        Ok(Self {
            sites,
            neighbours,
            masses: moving.iter().map(|j| j.p).collect(),
            hold: kernel.jumps().hold_mass(),
            rate: kernel.rate(),
            exterior,
        })
    }

    pub fn arity(&self) -> usize {
        self.masses.len()
    }

    /// Extended buffer: interior values then exterior slots.
    pub fn buffer(&self, lattice: &LatticeBox, interior: &InitialProfile) -> Vec<f64> {
        let outside = match lattice.boundary() {
            Boundary::Frozen(Some(p)) => p,
            _ => interior,
        };
        (0..self.sites)
            .map(|s| interior.value_at(&lattice.point(s)))
            .chain(self.exterior.iter().map(|y| outside.value_at(y)))
            .collect()
    }

    /// `(L f)(x) = rate * sum_z p(z) (f(x+z) - f(x))`.
    pub fn generator(&self, ext: &[f64], out: &mut [f64]) {
        let m = self.arity();
        let moving = 1.0 - self.hold;
        for x in 0..self.sites {
            let nb = &self.neighbours[x * m..(x + 1) * m];
            let mut acc = 0.0;
            for (k, &i) in nb.iter().enumerate() {
                acc += self.masses[k] * ext[i as usize];
            }
            out[x] = self.rate * (acc - moving * ext[x]);
        }
    }

    /// `f + dt L f` written with nonnegative weights, so that it is monotone
    /// in `f` (also in floating point) whenever `rate * dt <= 1`.
    #[inline]
    pub fn drift_at(&self, ext: &[f64], x: usize, diag: f64, off: &[f64]) -> f64 {
        let m = off.len();
        let nb = &self.neighbours[x * m..(x + 1) * m];
        let mut acc = diag * ext[x];
        for (k, &i) in nb.iter().enumerate() {
            acc += off[k] * ext[i as usize];
        }
        acc
    }

    pub fn drift_weights(&self, dt: f64) -> (f64, Vec<f64>) {
        let rdt = self.rate * dt;
        (
            1.0 - rdt * (1.0 - self.hold),
            self.masses.iter().map(|p| rdt * p).collect(),
        )
    }
}

/// `(L f)(x)` on a box. Frozen boxes read exterior values from their
/// explicit profile, or zero when none is attached.
pub fn generator_apply(lattice: &LatticeBox, kernel: &WalkKernel, values: &[f64]) -> Result<Vec<f64>> {
    if values.len() != lattice.sites() {
        return Err(SheError::invalid("field length does not match box"));
    }
    let stencil = Stencil::build(lattice, kernel)?;
    let outside = match lattice.boundary() {
        Boundary::Frozen(Some(p)) => p.clone(),
        _ => InitialProfile::Constant(0.0),
    };
    let mut ext = values.to_vec();
    ext.extend(stencil.exterior.iter().map(|y| outside.value_at(y)));
    let mut out = vec![0.0; lattice.sites()];
    stencil.generator(&ext, &mut out);
    Ok(out)
}
