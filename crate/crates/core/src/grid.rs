//! The computational lattice over the prism [-R,R] x [-R,R] x [-b,b].

use crate::config::DomainConfig;
use crate::error::{Error, Result};

/// Uniform grid with equal x and y steps and an independent z step.
///
/// Node (p, q, s) sits at (-R + p h, -R + q h, -b + s h_z). The measurement
/// face Gamma is the s = 0 layer (z = -b).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid3D {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub origin: [f64; 3],
    pub step: [f64; 3],
}

impl Grid3D {
    /// Build the grid covering exactly [-R,R]^2 x [-b,b] with requested steps.
    /// Steps are snapped so that an integer number of cells spans each axis.
    pub fn from_domain(cfg: &DomainConfig) -> Result<Self> {
        Self::new(cfg.r, cfg.b, cfg.h, cfg.h_z)
    }

    pub fn new(r: f64, b: f64, h: f64, h_z: f64) -> Result<Self> {
        if !(r > 0.0 && b > 0.0 && h > 0.0 && h_z > 0.0) {
            return Err(Error::Domain("grid extents and steps must be positive".into()));
        }
        let nx = (2.0 * r / h).round().max(1.0) as usize + 1;
        let nz = (2.0 * b / h_z).round().max(1.0) as usize + 1;
        if nx < 3 || nz < 5 {
            return Err(Error::Domain(format!(
                "grid too coarse: nx = {nx}, nz = {nz}"
            )));
        }
        let step_xy = 2.0 * r / (nx - 1) as f64;
        let step_z = 2.0 * b / (nz - 1) as f64;
        Ok(Grid3D {
            nx,
            ny: nx,
            nz,
            origin: [-r, -r, -b],
            step: [step_xy, step_xy, step_z],
        })
    }

    pub fn node_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn x(&self, p: usize) -> f64 {
        self.origin[0] + p as f64 * self.step[0]
    }

    pub fn y(&self, q: usize) -> f64 {
        self.origin[1] + q as f64 * self.step[1]
    }

    pub fn z(&self, s: usize) -> f64 {
        self.origin[2] + s as f64 * self.step[2]
    }

    pub fn point(&self, p: usize, q: usize, s: usize) -> [f64; 3] {
        [self.x(p), self.y(q), self.z(s)]
    }

    /// Lexicographic flat index; total and order-preserving over (p, q, s).
    pub fn flat(&self, p: usize, q: usize, s: usize) -> usize {
        (p * self.ny + q) * self.nz + s
    }

    pub fn unflat(&self, idx: usize) -> (usize, usize, usize) {
        let s = idx % self.nz;
        let rest = idx / self.nz;
        (rest / self.ny, rest % self.ny, s)
    }

    /// True for nodes strictly inside the prism in all three directions.
    pub fn is_interior(&self, p: usize, q: usize, s: usize) -> bool {
        p >= 1 && p + 1 < self.nx && q >= 1 && q + 1 < self.ny && s >= 1 && s + 1 < self.nz
    }

    /// True for nodes on the measurement face z = -b.
    pub fn is_gamma(&self, _p: usize, _q: usize, s: usize) -> bool {
        s == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn covers_domain_exactly() {
        let g = Grid3D::new(5.0, 2.0, 0.5, 0.2).unwrap();
        assert_eq!(g.nx, 21);
        assert_eq!(g.ny, 21);
        assert_eq!(g.nz, 21);
        assert_eq!(g.x(0), -5.0);
        assert!((g.x(g.nx - 1) - 5.0).abs() < 1e-12);
        assert!((g.z(g.nz - 1) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gamma_is_bottom_face() {
        let g = Grid3D::new(1.0, 1.0, 0.5, 0.5).unwrap();
        assert!(g.is_gamma(0, 0, 0));
        assert!(!g.is_gamma(0, 0, 1));
        assert!((g.z(0) + 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn flat_roundtrip(p in 0usize..21, q in 0usize..21, s in 0usize..21) {
            let g = Grid3D::new(5.0, 2.0, 0.5, 0.2).unwrap();
            let idx = g.flat(p, q, s);
            prop_assert!(idx < g.node_count());
            prop_assert_eq!(g.unflat(idx), (p, q, s));
        }

        #[test]
        fn flat_is_order_preserving(a in 0usize..9260, bump in 1usize..200) {
            let g = Grid3D::new(5.0, 2.0, 0.5, 0.2).unwrap();
            let b = (a + bump).min(g.node_count() - 1);
            let (pa, qa, sa) = g.unflat(a);
            let (pb, qb, sb) = g.unflat(b);
            prop_assert_eq!((pa, qa, sa) < (pb, qb, sb), a < b);
        }
    }
}
