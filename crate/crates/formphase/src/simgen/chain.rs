//! Compositions of invertible maps, used both to distort oscillator state
//! space and to shape the driving noise.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

use super::hmap::{AffineMap, HMap};

#[derive(Debug, Clone)]
pub enum ChainLink {
    Coupling(HMap),
    Affine(AffineMap),
}

impl ChainLink {
    fn dim(&self) -> usize {
        match self {
            ChainLink::Coupling(m) => m.dim(),
            ChainLink::Affine(m) => m.dim(),
        }
    }

    fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            ChainLink::Coupling(m) => m.forward(x),
            ChainLink::Affine(m) => m.forward(x),
        }
    }

    fn inverse(&self, y: &DVector<f64>) -> DVector<f64> {
        match self {
            ChainLink::Coupling(m) => m.inverse(y),
            ChainLink::Affine(m) => m.inverse(y),
        }
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            ChainLink::Coupling(m) => m.jacobian(x),
            ChainLink::Affine(m) => m.matrix().clone(),
        }
    }
}

/// Links applied first to last; an empty chain is the identity.
#[derive(Debug, Clone)]
pub struct DiffeoChain {
    dim: usize,
    links: Vec<ChainLink>,
}

impl DiffeoChain {
    pub fn new(dim: usize, links: Vec<ChainLink>) -> Result<Self> {
        for link in &links {
            if link.dim() != dim {
                return Err(Error::InvalidConfig(
                    "chain link dimension disagrees with the chain".into(),
                ));
            }
        }
        Ok(DiffeoChain { dim, links })
    }

    pub fn identity(dim: usize) -> Self {
        DiffeoChain { dim, links: Vec::new() }
    }

    /// Coupling maps with a fresh random block split each, separated by
    /// random affine maps: H, A, H, A, ..., H.
    pub fn random<R: Rng>(dim: usize, n_couplings: usize, rng: &mut R) -> Result<Self> {
        if n_couplings > 0 && dim < 2 {
            return Err(Error::InvalidConfig(
                "coupling maps need at least two dimensions".into(),
            ));
        }
        let mut links = Vec::with_capacity(2 * n_couplings.max(1) - 1);
        for i in 0..n_couplings {
            if i > 0 {
                links.push(ChainLink::Affine(AffineMap::random(dim, rng)));
            }
            let dim_x = Uniform::new_inclusive(1, dim - 1).sample(rng);
            links.push(ChainLink::Coupling(HMap::random(dim_x, dim - dim_x, rng)));
        }
        Ok(DiffeoChain { dim, links })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut cur = x.clone();
        for link in &self.links {
            cur = link.forward(&cur);
        }
        cur
    }

    pub fn inverse(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut cur = y.clone();
        for link in self.links.iter().rev() {
            cur = link.inverse(&cur);
        }
        cur
    }

    /// Tangent map at x, accumulated along the forward pass.
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut cur = x.clone();
        let mut jac = DMatrix::identity(self.dim, self.dim);
        for link in &self.links {
            jac = link.jacobian(&cur) * jac;
            cur = link.forward(&cur);
        }
        jac
    }

    /// Field of the conjugated system: `Dh(h⁻¹(x)) · base(h⁻¹(x))`.
    pub fn pushforward_field<F>(&self, base: F, x: &DVector<f64>) -> Result<DVector<f64>>
    where
        F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    {
        let pre = self.inverse(x);
        Ok(self.jacobian(&pre) * base(&pre)?)
    }
}
