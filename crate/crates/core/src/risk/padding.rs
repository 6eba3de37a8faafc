use nalgebra::{DMatrix, DVector};

use super::{ConstraintSet, FactorModel, RiskModel};
use crate::error::{Error, Result};
use crate::linalg;

/// Inverse operator of a factor model whose loadings were padded with the
/// constraint columns `G`, i.e. `Omega~ = (Omega | G)` with the inverse factor
/// covariance `phi~^{-1} = diag(phi^{-1}, 0)`.
///
/// The resulting operator annihilates `G`: `sum_j C~^{-1}_ij G_ja = 0`.
#[derive(Debug, Clone)]
pub struct PaddedInverse {
    model: FactorModel,
    g: DMatrix<f64>,
}

/// Builds the padded inverse. Rank problems surface when the operator is
/// applied, since `Q~(J)` depends on the subset.
pub fn pad_with_constraints(model: &FactorModel, constraints: &ConstraintSet) -> Result<PaddedInverse> {
    if constraints.n() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), actual: constraints.n() });
    }
    Ok(PaddedInverse { model: model.clone(), g: constraints.matrix().clone() })
}

impl PaddedInverse {
    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn m(&self) -> usize {
        self.g.ncols()
    }

    pub fn model(&self) -> &FactorModel {
        &self.model
    }

    /// `Q~(J)` of size (K + m).
    pub fn q_padded(&self, subset: &[usize]) -> DMatrix<f64> {
        let k = self.model.k();
        let m = self.m();
        let mut q = DMatrix::zeros(k + m, k + m);
        q.view_mut((0, 0), (k, k)).copy_from(self.model.factor_cov_inverse());
        let xi2 = self.model.xi2();
        for &i in subset {
            let row = self.padded_row(i);
            q += row.transpose() * &row / xi2[i];
        }
        q
    }

    fn padded_row(&self, i: usize) -> nalgebra::RowDVector<f64> {
        let k = self.model.k();
        let m = self.m();
        let mut row = nalgebra::RowDVector::zeros(k + m);
        row.columns_mut(0, k).copy_from(&self.model.loadings().row(i));
        row.columns_mut(k, m).copy_from(&self.g.row(i));
        row
    }

    /// `C~(J)^{-1} x`, indexed by position in `subset`.
    pub fn solve_subset(&self, subset: &[usize], x: &DVector<f64>) -> Result<DVector<f64>> {
        linalg::check_len(x, subset.len())?;
        let xi2 = self.model.xi2();
        let scaled = DVector::from_fn(subset.len(), |p, _| x[p] / xi2[subset[p]]);
        let width = self.model.k() + self.m();
        if width == 0 {
            return Ok(scaled);
        }
        let mut proj = DVector::zeros(width);
        for (p, &i) in subset.iter().enumerate() {
            proj += self.padded_row(i).transpose() * scaled[p];
        }
        let y = linalg::spd_solve(self.q_padded(subset), &proj, "padded Q(J)")?;
        let mut out = scaled;
        for (p, &i) in subset.iter().enumerate() {
            out[p] -= self.padded_row(i).dot(&y.transpose()) / xi2[i];
        }
        Ok(out)
    }

    pub fn solve(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let all: Vec<usize> = (0..self.dim()).collect();
        self.solve_subset(&all, x)
    }
}

/// `P x` with `P = C^{-1} - C^{-1} G (G^T C^{-1} G)^{-1} G^T C^{-1}` on the
/// subset. Works for any model; equals the padded inverse for factor models.
pub fn projected_inverse_apply(
    model: &dyn RiskModel,
    subset: &[usize],
    g: &DMatrix<f64>,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let zero = DVector::zeros(g.ncols());
    Ok(super::constrained_solve(model, subset, g, x, &zero)?.w)
}
