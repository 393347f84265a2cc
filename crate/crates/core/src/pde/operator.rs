//! Finite-volume discretisation of `div(d grad u)` with zero-flux boundaries.

use crate::grid::{
    check_coefficient, CoefficientRole, Grid2D, ScalarField, Support, DEFAULT_COEF_FLOOR,
};
use crate::pde::PdeError;

/// Sparse symmetric operator for `div(d grad u)` on a full grid or on the
/// cells of a mask, assembled with the 5-point stencil and harmonic-mean
/// face diffusivities. Boundary faces (grid edges, and mask edges in the
/// masked case) carry no flux.
///
/// Rows store only the nonnegative neighbour weights in compressed sparse
/// form; the diagonal is implied. Application uses the flux form
/// `sum_f w_f (u_q - u_p)`, which annihilates constants exactly in floating
/// point, so zero row sums hold by construction rather than by cancellation.
#[derive(Debug, Clone)]
pub struct DiffusionOperator {
    grid: Grid2D,
    support: Support,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    weights: Vec<f64>,
    d_max: f64,
}

impl DiffusionOperator {
    /// Assemble the operator for diffusivity field `d`. The field's support
    /// (full grid or mask) becomes the operator's domain; `d` must be at or
    /// above the positivity floor everywhere on it.
    pub fn assemble(d: &ScalarField) -> Result<Self, PdeError> {
        check_coefficient(d, CoefficientRole::StrictlyPositive, None, DEFAULT_COEF_FLOOR)?;
        let grid = *d.grid();
        let (nx, _ny) = (grid.nx(), grid.ny());
        let (hx2, hy2) = (grid.hx() * grid.hx(), grid.hy() * grid.hy());
        let dv = d.values();
        let n = dv.len();

        // Global index of each row's cell, and local index lookup.
        let to_local = |global: usize| -> Option<usize> {
            match d.support() {
                Support::Full => Some(global),
                Support::Masked(m) => m.local_index(global),
            }
        };
        let row_cells: Vec<usize> = match d.support() {
            Support::Full => (0..n).collect(),
            Support::Masked(m) => m.cells().to_vec(),
        };

        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(4 * n);
        let mut weights = Vec::with_capacity(4 * n);
        row_ptr.push(0);
        for (row, &k) in row_cells.iter().enumerate() {
            let (i, j) = (k % nx, k / nx);
            // Neighbours in ascending global (hence local) order; symmetry
            // holds because each face weight depends only on its two cells.
            let south = if j > 0 { to_local(k - nx) } else { None };
            let west = if i > 0 { to_local(k - 1) } else { None };
            let east = if i + 1 < nx { to_local(k + 1) } else { None };
            let north = if j + 1 < grid.ny() { to_local(k + nx) } else { None };

            let face = |q: usize, h2: f64| {
                let (dp, dq) = (dv[row], dv[q]);
                2.0 * dp * dq / (dp + dq) / h2
            };
            if let Some(q) = south {
                col_idx.push(q);
                weights.push(face(q, hy2));
            }
            if let Some(q) = west {
                col_idx.push(q);
                weights.push(face(q, hx2));
            }
            if let Some(q) = east {
                col_idx.push(q);
                weights.push(face(q, hx2));
            }
            if let Some(q) = north {
                col_idx.push(q);
                weights.push(face(q, hy2));
            }
            row_ptr.push(col_idx.len());
        }

        Ok(DiffusionOperator {
            grid,
            support: d.support().clone(),
            row_ptr,
            col_idx,
            weights,
            d_max: d.max(),
        })
    }

    pub fn n(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    /// True when `f` lives on the same grid and support as the operator.
    pub fn compatible(&self, f: &ScalarField) -> bool {
        *f.grid() == self.grid && *f.support() == self.support
    }

    /// Gershgorin bound on the spectral radius: `4 max(d) (1/hx^2 + 1/hy^2)`.
    /// Shifting by at least this plus `max|a|` makes `a + shift + L`
    /// positive semidefinite for any weight field `a`.
    pub fn shift_bound(&self) -> f64 {
        let g = &self.grid;
        4.0 * self.d_max * (1.0 / (g.hx() * g.hx()) + 1.0 / (g.hy() * g.hy()))
    }

    pub(crate) fn apply_raw(&self, u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(u.len(), self.n());
        debug_assert_eq!(out.len(), self.n());
        for row in 0..self.n() {
            let up = u[row];
            let mut acc = 0.0;
            for idx in self.row_ptr[row]..self.row_ptr[row + 1] {
                acc += self.weights[idx] * (u[self.col_idx[idx]] - up);
            }
            out[row] = acc;
        }
    }

    /// `L u` as a field on the operator's support.
    pub fn apply(&self, u: &ScalarField) -> Result<ScalarField, PdeError> {
        if !self.compatible(u) {
            return Err(crate::grid::GridError::SupportMismatch.into());
        }
        let mut out = vec![0.0; self.n()];
        self.apply_raw(u.values(), &mut out);
        Ok(ScalarField::from_raw(self.grid, self.support.clone(), out))
    }
}
