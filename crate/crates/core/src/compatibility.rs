//! Gauss–Codazzi–Mainardi residuals of a reference pair `(g, b)` for
//! surfaces in a space of constant curvature `kappa`:
//!
//! - Gauss: `K_g - kappa - det(S)`, `S = g^{-1} b`;
//! - Codazzi: `(nabla_1 b)_{2j} - (nabla_2 b)_{1j}` for `j = 1, 2`.

use nalgebra::DMatrix;

use crate::chart::{christoffel, gauss_curvature, shape_from_form, FormField, MetricField};
use crate::{par, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GcmReport {
    pub gauss_residual: Vec<f64>,
    pub codazzi_residual: Vec<[f64; 2]>,
    pub gauss_sup: f64,
    pub codazzi_sup: f64,
}

impl GcmReport {
    pub fn sup(&self) -> f64 {
        self.gauss_sup.max(self.codazzi_sup)
    }
}

pub fn gcm_residuals(g: &MetricField, b: &FormField, kappa: f64) -> Result<GcmReport> {
    let grid = g.grid();
    if grid.d() != 2 {
        return Err(Error::UnsupportedDimension(grid.d()));
    }
    if grid != b.grid() {
        return Err(Error::GridMismatch("g and b live on different grids".into()));
    }
    let k = gauss_curvature(g)?;
    let s = shape_from_form(g, b)?;
    let gamma = christoffel(g)?;
    let db: Vec<Vec<DMatrix<f64>>> = (0..2).map(|axis| grid.partial(b.values(), axis)).collect();
    let gauss_residual: Vec<f64> = (0..grid.node_count()).map(|n| k[n] - kappa - s.at(n).determinant()).collect();
    let codazzi_residual = par::map(grid.node_count(), |node| {
        let bm = b.at(node);
        // (nabla_k b)_{ij} = d_k b_ij - Gamma^m_{ki} b_mj - Gamma^m_{kj} b_im
        let cov = |k: usize, i: usize, j: usize| {
            let mut v = db[k][node][(i, j)];
            for m in 0..2 {
                v -= gamma.get(node, m, k, i) * bm[(m, j)] + gamma.get(node, m, k, j) * bm[(i, m)];
            }
            v
        };
        [cov(0, 1, 0) - cov(1, 0, 0), cov(0, 1, 1) - cov(1, 0, 1)]
    });
    let gauss_sup = gauss_residual.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    let codazzi_sup = codazzi_residual.iter().fold(0.0, |m: f64, v| m.max(v[0].abs()).max(v[1].abs()));
    Ok(GcmReport { gauss_residual, codazzi_residual, gauss_sup, codazzi_sup })
}
