//! Rectangular cell-centered grids, masked subregions, scalar fields and
//! midpoint quadrature.
//!
//! A [`Grid2D`] covers `[x0, x0+lx] x [y0, y0+ly]` with `nx * ny` uniform
//! cells. A [`CellMask`] selects an edge-connected proper subset of cells
//! approximating a subregion on which the reservoir lives. Fields are
//! cell-center samples, stored row-major (`j * nx + i`), either over the
//! whole grid or over the mask cells only.

use std::io::{self, BufRead, Write};
use std::sync::Arc;

use thiserror::Error;

/// Default floor below which a positivity-constrained coefficient is rejected.
pub const DEFAULT_COEF_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid extent must be positive and finite, got lx={lx}, ly={ly}")]
    BadExtent { lx: f64, ly: f64 },
    #[error("grid needs at least 2 cells per axis, got nx={nx}, ny={ny}")]
    TooFewCells { nx: usize, ny: usize },
    #[error("grid origin must be finite")]
    BadOrigin,
    #[error("mask selects no cells")]
    EmptyMask,
    #[error("mask must be a proper subregion: it covers the whole grid")]
    MaskCoversGrid,
    #[error("mask must be a proper subregion: it touches the grid boundary")]
    MaskTouchesBoundary,
    #[error("mask is not edge-connected ({components} components)")]
    MaskDisconnected { components: usize },
    #[error("mask membership length {got} does not match grid cell count {expected}")]
    MaskLengthMismatch { expected: usize, got: usize },
    #[error("mask shape parameters must be finite and positive where applicable")]
    BadMaskShape,
    #[error("field has {got} values but its support has {expected} cells")]
    FieldLengthMismatch { expected: usize, got: usize },
    #[error("non-finite value at cell {index}")]
    NonFiniteValue { index: usize },
    #[error("fields live on different grids or supports")]
    SupportMismatch,
    #[error("operation requires a mask-supported field")]
    ExpectedMaskedField,
    #[error("operation requires a full-grid field")]
    ExpectedFullField,
    #[error("coefficient must stay >= {floor} (role: {role}), found {value} at cell {index}")]
    CoefficientBelowFloor { role: &'static str, floor: f64, value: f64, index: usize },
    #[error("coefficient must vanish outside the mask, found {value} at cell {index}")]
    NonzeroOutsideMask { value: f64, index: usize },
    #[error("tabulated coefficient has {got} values, support has {expected} cells")]
    TabulatedLengthMismatch { expected: usize, got: usize },
    #[error("this coefficient kind needs a mask to evaluate")]
    MaskRequired,
    #[error("malformed snapshot: {0}")]
    SnapshotFormat(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

/// Uniform cell-centered rectangular grid.
///
/// Cell `(i, j)` is stored at index `j * nx + i` and has its center at
/// `(x0 + (i + 1/2) hx, y0 + (j + 1/2) hy)` with `hx = lx / nx`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    origin: (f64, f64),
    lx: f64,
    ly: f64,
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
}

impl Grid2D {
    /// Grid over `[0, lx] x [0, ly]`.
    pub fn new(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self, GridError> {
        Self::with_origin((0.0, 0.0), lx, ly, nx, ny)
    }

    pub fn with_origin(
        origin: (f64, f64),
        lx: f64,
        ly: f64,
        nx: usize,
        ny: usize,
    ) -> Result<Self, GridError> {
        if !(lx.is_finite() && ly.is_finite() && lx > 0.0 && ly > 0.0) {
            return Err(GridError::BadExtent { lx, ly });
        }
        if nx < 2 || ny < 2 {
            return Err(GridError::TooFewCells { nx, ny });
        }
        if !(origin.0.is_finite() && origin.1.is_finite()) {
            return Err(GridError::BadOrigin);
        }
        Ok(Grid2D {
            origin,
            lx,
            ly,
            nx,
            ny,
            hx: lx / nx as f64,
            hy: ly / ny as f64,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn hx(&self) -> f64 {
        self.hx
    }

    pub fn hy(&self) -> f64 {
        self.hy
    }

    pub fn lx(&self) -> f64 {
        self.lx
    }

    pub fn ly(&self) -> f64 {
        self.ly
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    /// Row-major storage index of cell `(i, j)`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.origin.0 + (i as f64 + 0.5) * self.hx,
            self.origin.1 + (j as f64 + 0.5) * self.hy,
        )
    }

    /// Centers in storage order.
    pub fn centers(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.ny).flat_map(move |j| (0..self.nx).map(move |i| self.cell_center(i, j)))
    }
}

// ---------------------------------------------------------------------------
// Masks
// ---------------------------------------------------------------------------

/// Shape descriptor used to select mask cells by their centers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskShape {
    /// Keeps cells whose center satisfies `x0 <= x <= x1`, `y0 <= y <= y1`.
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    /// Keeps cells whose center lies strictly inside the disk.
    Disk { cx: f64, cy: f64, radius: f64 },
}

/// Edge-connected proper subset of grid cells.
///
/// Construction validates that the set is nonempty, covers strictly fewer
/// cells than the grid, stays off the outermost cell ring (the subregion's
/// closure must sit inside the domain), and is connected through shared
/// edges.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMask {
    nx: usize,
    ny: usize,
    member: Vec<bool>,
    /// Grid indices of member cells, ascending.
    cells: Vec<usize>,
    /// Grid index -> position in `cells`; `usize::MAX` outside the mask.
    local: Vec<usize>,
}

impl CellMask {
    /// Select cells of `grid` whose centers fall in `shape`.
    pub fn from_shape(grid: &Grid2D, shape: MaskShape) -> Result<Self, GridError> {
        let ok = match shape {
            MaskShape::Rect { x0, y0, x1, y1 } => {
                [x0, y0, x1, y1].iter().all(|v| v.is_finite()) && x0 < x1 && y0 < y1
            }
            MaskShape::Disk { cx, cy, radius } => {
                cx.is_finite() && cy.is_finite() && radius.is_finite() && radius > 0.0
            }
        };
        if !ok {
            return Err(GridError::BadMaskShape);
        }
        let member: Vec<bool> = grid
            .centers()
            .map(|(x, y)| match shape {
                MaskShape::Rect { x0, y0, x1, y1 } => x0 <= x && x <= x1 && y0 <= y && y <= y1,
                MaskShape::Disk { cx, cy, radius } => {
                    let (dx, dy) = (x - cx, y - cy);
                    dx * dx + dy * dy < radius * radius
                }
            })
            .collect();
        Self::from_members(grid, &member)
    }

    /// Build from an explicit membership vector (row-major, one flag per cell).
    pub fn from_members(grid: &Grid2D, member: &[bool]) -> Result<Self, GridError> {
        let (nx, ny) = (grid.nx(), grid.ny());
        if member.len() != nx * ny {
            return Err(GridError::MaskLengthMismatch {
                expected: nx * ny,
                got: member.len(),
            });
        }
        let cells: Vec<usize> = (0..member.len()).filter(|&k| member[k]).collect();
        if cells.is_empty() {
            return Err(GridError::EmptyMask);
        }
        if cells.len() == nx * ny {
            return Err(GridError::MaskCoversGrid);
        }
        for &k in &cells {
            let (i, j) = (k % nx, k / nx);
            if i == 0 || j == 0 || i == nx - 1 || j == ny - 1 {
                return Err(GridError::MaskTouchesBoundary);
            }
        }
        let components = count_components(nx, ny, member, cells[0]);
        if components != 1 {
            return Err(GridError::MaskDisconnected { components });
        }
        let mut local = vec![usize::MAX; nx * ny];
        for (pos, &k) in cells.iter().enumerate() {
            local[k] = pos;
        }
        Ok(CellMask {
            nx,
            ny,
            member: member.to_vec(),
            cells,
            local,
        })
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Grid indices of member cells in ascending (storage) order.
    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn contains(&self, grid_index: usize) -> bool {
        self.member[grid_index]
    }

    /// Position of a grid cell inside the mask's local numbering.
    pub fn local_index(&self, grid_index: usize) -> Option<usize> {
        match self.local[grid_index] {
            usize::MAX => None,
            k => Some(k),
        }
    }

    pub fn grid_dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn matches_grid(&self, grid: &Grid2D) -> bool {
        self.nx == grid.nx() && self.ny == grid.ny()
    }
}

/// Number of 4-connected components among member cells, counted by BFS.
fn count_components(nx: usize, ny: usize, member: &[bool], start: usize) -> usize {
    let mut seen = vec![false; member.len()];
    let mut components = 0;
    let mut queue = Vec::new();
    let mut pending: Vec<usize> = (0..member.len()).filter(|&k| member[k]).collect();
    // Visit the given start cell first so single-component masks need one pass.
    pending.sort_unstable_by_key(|&k| k != start);
    for seed in pending {
        if seen[seed] {
            continue;
        }
        components += 1;
        seen[seed] = true;
        queue.push(seed);
        while let Some(k) = queue.pop() {
            let (i, j) = (k % nx, k / nx);
            let mut push = |n: usize| {
                if member[n] && !seen[n] {
                    seen[n] = true;
                    queue.push(n);
                }
            };
            if i > 0 {
                push(k - 1);
            }
            if i + 1 < nx {
                push(k + 1);
            }
            if j > 0 {
                push(k - nx);
            }
            if j + 1 < ny {
                push(k + nx);
            }
        }
    }
    components
}

// ---------------------------------------------------------------------------
// Fields
// ---------------------------------------------------------------------------

/// Where a field's values live.
#[derive(Debug, Clone, PartialEq)]
pub enum Support {
    Full,
    Masked(Arc<CellMask>),
}

/// Cell-centered scalar samples over a full grid or over mask cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid2D,
    support: Support,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn constant(grid: &Grid2D, value: f64) -> Self {
        ScalarField {
            grid: *grid,
            support: Support::Full,
            values: vec![value; grid.n_cells()],
        }
    }

    pub fn constant_on(grid: &Grid2D, mask: &Arc<CellMask>, value: f64) -> Self {
        ScalarField {
            grid: *grid,
            support: Support::Masked(Arc::clone(mask)),
            values: vec![value; mask.cell_count()],
        }
    }

    /// Sample `f(x, y)` at every cell center.
    pub fn from_fn(grid: &Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        ScalarField {
            grid: *grid,
            support: Support::Full,
            values: grid.centers().map(|(x, y)| f(x, y)).collect(),
        }
    }

    /// Sample `f(x, y)` at the centers of the mask cells.
    pub fn from_fn_on(grid: &Grid2D, mask: &Arc<CellMask>, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = mask
            .cells()
            .iter()
            .map(|&k| {
                let (i, j) = (k % grid.nx(), k / grid.nx());
                let (x, y) = grid.cell_center(i, j);
                f(x, y)
            })
            .collect();
        ScalarField {
            grid: *grid,
            support: Support::Masked(Arc::clone(mask)),
            values,
        }
    }

    pub fn from_values(grid: &Grid2D, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.n_cells() {
            return Err(GridError::FieldLengthMismatch {
                expected: grid.n_cells(),
                got: values.len(),
            });
        }
        check_finite(&values)?;
        Ok(ScalarField {
            grid: *grid,
            support: Support::Full,
            values,
        })
    }

    pub fn from_values_on(
        grid: &Grid2D,
        mask: &Arc<CellMask>,
        values: Vec<f64>,
    ) -> Result<Self, GridError> {
        if !mask.matches_grid(grid) {
            return Err(GridError::SupportMismatch);
        }
        if values.len() != mask.cell_count() {
            return Err(GridError::FieldLengthMismatch {
                expected: mask.cell_count(),
                got: values.len(),
            });
        }
        check_finite(&values)?;
        Ok(ScalarField {
            grid: *grid,
            support: Support::Masked(Arc::clone(mask)),
            values,
        })
    }

    /// Internal constructor for values produced by solvers (already shaped).
    pub(crate) fn from_raw(grid: Grid2D, support: Support, values: Vec<f64>) -> Self {
        debug_assert_eq!(
            values.len(),
            match &support {
                Support::Full => grid.n_cells(),
                Support::Masked(m) => m.cell_count(),
            }
        );
        ScalarField {
            grid,
            support,
            values,
        }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn mask(&self) -> Option<&Arc<CellMask>> {
        match &self.support {
            Support::Full => None,
            Support::Masked(m) => Some(m),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn same_support(&self, other: &ScalarField) -> bool {
        if self.grid != other.grid {
            return false;
        }
        match (&self.support, &other.support) {
            (Support::Full, Support::Full) => true,
            (Support::Masked(a), Support::Masked(b)) => Arc::ptr_eq(a, b) || a == b,
            _ => false,
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Max absolute value over the support.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Plain average over support cells (cells are uniform, so this is the
    /// area-weighted mean over the support).
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Midpoint quadrature over the field's own support:
    /// `sum f(center) * hx * hy`.
    pub fn integrate(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    /// Midpoint quadrature of a full-grid field restricted to `mask` cells.
    pub fn integrate_over(&self, mask: &CellMask) -> Result<f64, GridError> {
        match &self.support {
            Support::Full => {
                if !mask.matches_grid(&self.grid) {
                    return Err(GridError::SupportMismatch);
                }
                Ok(mask.cells().iter().map(|&k| self.values[k]).sum::<f64>()
                    * self.grid.cell_area())
            }
            Support::Masked(own) => {
                if own.as_ref() == mask {
                    Ok(self.integrate())
                } else {
                    Err(GridError::SupportMismatch)
                }
            }
        }
    }

    /// Masked field -> full-grid field that is zero off the mask.
    pub fn extend_by_zero(&self) -> Result<ScalarField, GridError> {
        let mask = match &self.support {
            Support::Masked(m) => m,
            Support::Full => return Err(GridError::ExpectedMaskedField),
        };
        let mut out = vec![0.0; self.grid.n_cells()];
        for (pos, &k) in mask.cells().iter().enumerate() {
            out[k] = self.values[pos];
        }
        Ok(ScalarField {
            grid: self.grid,
            support: Support::Full,
            values: out,
        })
    }

    /// Full-grid field -> its values on the mask cells.
    pub fn restrict_to(&self, mask: &Arc<CellMask>) -> Result<ScalarField, GridError> {
        match &self.support {
            Support::Full => {}
            Support::Masked(_) => return Err(GridError::ExpectedFullField),
        }
        if !mask.matches_grid(&self.grid) {
            return Err(GridError::SupportMismatch);
        }
        let values = mask.cells().iter().map(|&k| self.values[k]).collect();
        Ok(ScalarField {
            grid: self.grid,
            support: Support::Masked(Arc::clone(mask)),
            values,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid,
            support: self.support.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(
        &self,
        other: &ScalarField,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<ScalarField, GridError> {
        if !self.same_support(other) {
            return Err(GridError::SupportMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(ScalarField {
            grid: self.grid,
            support: self.support.clone(),
            values,
        })
    }
}

fn check_finite(values: &[f64]) -> Result<(), GridError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(GridError::NonFiniteValue { index }),
        None => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// Coefficients
// ---------------------------------------------------------------------------

/// Recipe for a spatial coefficient, evaluated at cell centers.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientSpec {
    Constant(f64),
    /// One value on mask cells, another elsewhere.
    PiecewiseByMask { inside: f64, outside: f64 },
    /// Explicit per-cell values in storage order over the evaluation support.
    Tabulated(Vec<f64>),
    /// `below` where `x < split`, `above` otherwise.
    StepX { split: f64, below: f64, above: f64 },
    /// `below` where `y < split`, `above` otherwise.
    StepY { split: f64, below: f64, above: f64 },
    /// `baseline + amplitude * exp(-((x-cx)^2 + (y-cy)^2) / width^2)`.
    Gaussian {
        center: (f64, f64),
        width: f64,
        amplitude: f64,
        baseline: f64,
    },
}

impl CoefficientSpec {
    fn value_at(&self, x: f64, y: f64, inside_mask: bool) -> f64 {
        match *self {
            CoefficientSpec::Constant(v) => v,
            CoefficientSpec::PiecewiseByMask { inside, outside } => {
                if inside_mask {
                    inside
                } else {
                    outside
                }
            }
            CoefficientSpec::Tabulated(_) => unreachable!("tabulated handled by caller"),
            CoefficientSpec::StepX { split, below, above } => {
                if x < split {
                    below
                } else {
                    above
                }
            }
            CoefficientSpec::StepY { split, below, above } => {
                if y < split {
                    below
                } else {
                    above
                }
            }
            CoefficientSpec::Gaussian {
                center,
                width,
                amplitude,
                baseline,
            } => {
                let (dx, dy) = (x - center.0, y - center.1);
                baseline + amplitude * (-(dx * dx + dy * dy) / (width * width)).exp()
            }
        }
    }

    /// Evaluate on every grid cell. `mask` is required by
    /// [`CoefficientSpec::PiecewiseByMask`] and ignored otherwise.
    pub fn evaluate(
        &self,
        grid: &Grid2D,
        mask: Option<&Arc<CellMask>>,
    ) -> Result<ScalarField, GridError> {
        if let CoefficientSpec::Tabulated(values) = self {
            if values.len() != grid.n_cells() {
                return Err(GridError::TabulatedLengthMismatch {
                    expected: grid.n_cells(),
                    got: values.len(),
                });
            }
            return ScalarField::from_values(grid, values.clone());
        }
        if matches!(self, CoefficientSpec::PiecewiseByMask { .. }) && mask.is_none() {
            return Err(GridError::MaskRequired);
        }
        let mut values = Vec::with_capacity(grid.n_cells());
        for (k, (x, y)) in grid.centers().enumerate() {
            let inside = mask.map_or(false, |m| m.contains(k));
            values.push(self.value_at(x, y, inside));
        }
        check_finite(&values)?;
        Ok(ScalarField::from_raw(*grid, Support::Full, values))
    }

    /// Evaluate on the mask cells only.
    pub fn evaluate_on(
        &self,
        grid: &Grid2D,
        mask: &Arc<CellMask>,
    ) -> Result<ScalarField, GridError> {
        if !mask.matches_grid(grid) {
            return Err(GridError::SupportMismatch);
        }
        if let CoefficientSpec::Tabulated(values) = self {
            if values.len() != mask.cell_count() {
                return Err(GridError::TabulatedLengthMismatch {
                    expected: mask.cell_count(),
                    got: values.len(),
                });
            }
            return ScalarField::from_values_on(grid, mask, values.clone());
        }
        let mut values = Vec::with_capacity(mask.cell_count());
        for &k in mask.cells() {
            let (i, j) = (k % grid.nx(), k / grid.nx());
            let (x, y) = grid.cell_center(i, j);
            values.push(self.value_at(x, y, true));
        }
        check_finite(&values)?;
        Ok(ScalarField::from_raw(
            *grid,
            Support::Masked(Arc::clone(mask)),
            values,
        ))
    }
}

/// Sign discipline a coefficient must obey over its support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoefficientRole {
    /// At or above the positivity floor on every support cell
    /// (diffusivities, transmission and demographic rates).
    StrictlyPositive,
    /// Full-grid field, at or above the floor on mask cells, exactly zero
    /// outside (the host-reservoir contact coefficient).
    SupportedOnMask,
    /// No sign restriction (eigenproblem weights).
    Unrestricted,
}

/// Check `field` against `role`. `mask` is consulted only for
/// [`CoefficientRole::SupportedOnMask`], where the field must be full-grid.
pub fn check_coefficient(
    field: &ScalarField,
    role: CoefficientRole,
    mask: Option<&CellMask>,
    floor: f64,
) -> Result<(), GridError> {
    match role {
        CoefficientRole::Unrestricted => Ok(()),
        CoefficientRole::StrictlyPositive => {
            for (index, &value) in field.values().iter().enumerate() {
                if value < floor {
                    return Err(GridError::CoefficientBelowFloor {
                        role: "strictly positive",
                        floor,
                        value,
                        index,
                    });
                }
            }
            Ok(())
        }
        CoefficientRole::SupportedOnMask => {
            let mask = mask.ok_or(GridError::MaskRequired)?;
            if field.mask().is_some() {
                return Err(GridError::ExpectedFullField);
            }
            if !mask.matches_grid(field.grid()) {
                return Err(GridError::SupportMismatch);
            }
            for (index, &value) in field.values().iter().enumerate() {
                if mask.contains(index) {
                    if value < floor {
                        return Err(GridError::CoefficientBelowFloor {
                            role: "positive on the mask",
                            floor,
                            value,
                            index,
                        });
                    }
                } else if value != 0.0 {
                    return Err(GridError::NonzeroOutsideMask { value, index });
                }
            }
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// Snapshot text format
// ---------------------------------------------------------------------------

/// Parsed snapshot file contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub name: String,
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    pub time: f64,
    /// Row-major, `ny` rows of `nx` values.
    pub values: Vec<f64>,
}

/// Write a field as
/// `field <name> nx <nx> ny <ny> hx <hx> hy <hy> t <time>` followed by `ny`
/// lines of `nx` space-separated values (row-major, `j` increasing).
/// Masked fields are zero-extended first.
pub fn write_snapshot<W: Write>(
    w: &mut W,
    name: &str,
    field: &ScalarField,
    time: f64,
) -> Result<(), GridError> {
    let full;
    let field = match field.support() {
        Support::Full => field,
        Support::Masked(_) => {
            full = field.extend_by_zero()?;
            &full
        }
    };
    let grid = field.grid();
    writeln!(
        w,
        "field {} nx {} ny {} hx {} hy {} t {}",
        name,
        grid.nx(),
        grid.ny(),
        grid.hx(),
        grid.hy(),
        time
    )?;
    let mut line = String::new();
    for j in 0..grid.ny() {
        line.clear();
        for i in 0..grid.nx() {
            if i > 0 {
                line.push(' ');
            }
            line.push_str(&format!("{}", field.values()[grid.index(i, j)]));
        }
        writeln!(w, "{}", line)?;
    }
    Ok(())
}

/// Write a mask in the snapshot layout with 0/1 entries and `t 0`.
pub fn write_mask_snapshot<W: Write>(
    w: &mut W,
    name: &str,
    grid: &Grid2D,
    mask: &CellMask,
) -> Result<(), GridError> {
    if !mask.matches_grid(grid) {
        return Err(GridError::SupportMismatch);
    }
    let indicator = ScalarField::from_raw(
        *grid,
        Support::Full,
        (0..grid.n_cells())
            .map(|k| if mask.contains(k) { 1.0 } else { 0.0 })
            .collect(),
    );
    write_snapshot(w, name, &indicator, 0.0)
}

pub fn read_snapshot<R: BufRead>(r: &mut R) -> Result<Snapshot, GridError> {
    let mut header = String::new();
    if r.read_line(&mut header)? == 0 {
        return Err(GridError::SnapshotFormat("empty input".into()));
    }
    // Token layout: field <name> nx <nx> ny <ny> hx <hx> hy <hy> t <time>
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 12 || tokens[0] != "field" {
        return Err(GridError::SnapshotFormat(format!(
            "bad header: {:?}",
            header.trim_end()
        )));
    }
    for (pos, key) in [(2, "nx"), (4, "ny"), (6, "hx"), (8, "hy"), (10, "t")] {
        if tokens[pos] != key {
            return Err(GridError::SnapshotFormat(format!(
                "expected `{}` at header position {}, found `{}`",
                key, pos, tokens[pos]
            )));
        }
    }
    let name = tokens[1].to_string();
    let nx: usize = tokens[3]
        .parse()
        .map_err(|_| GridError::SnapshotFormat("bad nx".into()))?;
    let ny: usize = tokens[5]
        .parse()
        .map_err(|_| GridError::SnapshotFormat("bad ny".into()))?;
    let parse_f = |s: &str, what: &str| -> Result<f64, GridError> {
        s.parse()
            .map_err(|_| GridError::SnapshotFormat(format!("bad {}", what)))
    };
    let hx = parse_f(tokens[7], "hx")?;
    let hy = parse_f(tokens[9], "hy")?;
    let time = parse_f(tokens[11], "t")?;
    if nx == 0 || ny == 0 {
        return Err(GridError::SnapshotFormat("zero grid dimension".into()));
    }
    let mut values = Vec::with_capacity(nx * ny);
    let mut line = String::new();
    for j in 0..ny {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(GridError::SnapshotFormat(format!(
                "expected {} value rows, got {}",
                ny, j
            )));
        }
        let before = values.len();
        for tok in line.split_whitespace() {
            values.push(parse_f(tok, "value")?);
        }
        if values.len() - before != nx {
            return Err(GridError::SnapshotFormat(format!(
                "row {} has {} values, expected {}",
                j,
                values.len() - before,
                nx
            )));
        }
    }
    Ok(Snapshot {
        name,
        nx,
        ny,
        hx,
        hy,
        time,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(n: usize) -> Grid2D {
        Grid2D::new(1.0, 1.0, n, n).unwrap()
    }

    #[test]
    fn grid_spacing_and_centers() {
        let g = unit_grid(8);
        assert_eq!(g.hx(), 0.125);
        assert_eq!(g.hy(), 0.125);
        assert_eq!(g.cell_center(0, 0), (0.0625, 0.0625));
        assert_eq!(g.cell_center(7, 7), (0.9375, 0.9375));
        assert_eq!(g.n_cells(), 64);
        assert_eq!(g.index(3, 2), 2 * 8 + 3);
    }

    #[test]
    fn grid_rejects_degenerate_inputs() {
        assert!(Grid2D::new(0.0, 1.0, 8, 8).is_err());
        assert!(Grid2D::new(1.0, -1.0, 8, 8).is_err());
        assert!(Grid2D::new(1.0, 1.0, 1, 8).is_err());
        assert!(Grid2D::new(f64::NAN, 1.0, 8, 8).is_err());
    }

    #[test]
    fn rect_mask_selects_sixteen_center_cells() {
        let g = unit_grid(8);
        let mask = CellMask::from_shape(
            &g,
            MaskShape::Rect {
                x0: 0.25,
                y0: 0.25,
                x1: 0.75,
                y1: 0.75,
            },
        )
        .unwrap();
        assert_eq!(mask.cell_count(), 16);
        for j in 0..8 {
            for i in 0..8 {
                let expect = (2..6).contains(&i) && (2..6).contains(&j);
                assert_eq!(mask.contains(g.index(i, j)), expect, "cell ({}, {})", i, j);
            }
        }
    }

    #[test]
    fn disk_mask_matches_center_enumeration() {
        let g = unit_grid(8);
        let mask = CellMask::from_shape(
            &g,
            MaskShape::Disk {
                cx: 0.5,
                cy: 0.5,
                radius: 0.3,
            },
        )
        .unwrap();
        // Oracle: select centers by hand and compare cell by cell.
        let mut expected = Vec::new();
        for j in 0..8 {
            for i in 0..8 {
                let (x, y) = g.cell_center(i, j);
                expected.push((x - 0.5f64).powi(2) + (y - 0.5f64).powi(2) < 0.09);
            }
        }
        for (k, &e) in expected.iter().enumerate() {
            assert_eq!(mask.contains(k), e, "cell {}", k);
        }
        assert_eq!(mask.cell_count(), expected.iter().filter(|&&b| b).count());
    }

    #[test]
    fn mask_rejects_degenerate_sets() {
        let g = unit_grid(8);
        // No cell center inside.
        let err = CellMask::from_shape(
            &g,
            MaskShape::Disk {
                cx: 0.0,
                cy: 0.0,
                radius: 0.01,
            },
        )
        .unwrap_err();
        assert!(matches!(err, GridError::EmptyMask));
        // Covers every cell.
        let err = CellMask::from_shape(
            &g,
            MaskShape::Rect {
                x0: -1.0,
                y0: -1.0,
                x1: 2.0,
                y1: 2.0,
            },
        )
        .unwrap_err();
        assert!(matches!(err, GridError::MaskCoversGrid));
        // Touches the outer cell ring.
        let err = CellMask::from_shape(
            &g,
            MaskShape::Rect {
                x0: 0.0,
                y0: 0.25,
                x1: 0.5,
                y1: 0.75,
            },
        )
        .unwrap_err();
        assert!(matches!(err, GridError::MaskTouchesBoundary));
        // Two separated cells.
        let mut member = vec![false; 64];
        member[g.index(2, 2)] = true;
        member[g.index(5, 5)] = true;
        let err = CellMask::from_members(&g, &member).unwrap_err();
        assert!(matches!(err, GridError::MaskDisconnected { components: 2 }));
    }

    #[test]
    fn midpoint_quadrature_of_x_squared() {
        let g = unit_grid(64);
        let f = ScalarField::from_fn(&g, |x, _| x * x);
        let integral = f.integrate();
        assert!(
            (integral - 1.0 / 3.0).abs() <= 1e-4,
            "integral = {}, expected 1/3",
            integral
        );
    }

    #[test]
    fn quadrature_is_exact_for_constants() {
        let g = Grid2D::new(2.0, 3.0, 8, 16).unwrap();
        let f = ScalarField::constant(&g, 0.7);
        assert!((f.integrate() - 0.7 * 6.0).abs() < 1e-12);
    }

    #[test]
    fn extend_by_zero_vanishes_off_mask_and_preserves_quadrature() {
        let g = unit_grid(8);
        let mask = Arc::new(
            CellMask::from_shape(
                &g,
                MaskShape::Rect {
                    x0: 0.25,
                    y0: 0.25,
                    x1: 0.75,
                    y1: 0.75,
                },
            )
            .unwrap(),
        );
        let f = ScalarField::from_fn_on(&g, &mask, |x, y| 1.0 + x + 2.0 * y);
        let full = f.extend_by_zero().unwrap();
        for k in 0..g.n_cells() {
            if !mask.contains(k) {
                assert_eq!(full.values()[k], 0.0);
            }
        }
        assert_eq!(full.integrate(), f.integrate());
        assert_eq!(full.integrate_over(&mask).unwrap(), f.integrate());
    }

    #[test]
    fn kappa_role_enforces_support() {
        let g = unit_grid(8);
        let mask = Arc::new(
            CellMask::from_shape(
                &g,
                MaskShape::Rect {
                    x0: 0.25,
                    y0: 0.25,
                    x1: 0.75,
                    y1: 0.75,
                },
            )
            .unwrap(),
        );
        let spec = CoefficientSpec::PiecewiseByMask {
            inside: 1.0,
            outside: 0.0,
        };
        let kappa = spec.evaluate(&g, Some(&mask)).unwrap();
        check_coefficient(
            &kappa,
            CoefficientRole::SupportedOnMask,
            Some(&mask),
            DEFAULT_COEF_FLOOR,
        )
        .unwrap();
        // Nonzero off the mask must be rejected.
        let bad = CoefficientSpec::Constant(1.0).evaluate(&g, None).unwrap();
        let err = check_coefficient(
            &bad,
            CoefficientRole::SupportedOnMask,
            Some(&mask),
            DEFAULT_COEF_FLOOR,
        )
        .unwrap_err();
        assert!(matches!(err, GridError::NonzeroOutsideMask { .. }));
        // Zero on the mask must be rejected too.
        let zero = ScalarField::constant(&g, 0.0);
        assert!(check_coefficient(
            &zero,
            CoefficientRole::SupportedOnMask,
            Some(&mask),
            DEFAULT_COEF_FLOOR,
        )
        .is_err());
    }

    #[test]
    fn positive_role_rejects_values_below_floor() {
        let g = unit_grid(4);
        let f = CoefficientSpec::StepX {
            split: 0.5,
            below: 1.0,
            above: 0.0,
        }
        .evaluate(&g, None)
        .unwrap();
        let err =
            check_coefficient(&f, CoefficientRole::StrictlyPositive, None, DEFAULT_COEF_FLOOR)
                .unwrap_err();
        assert!(matches!(err, GridError::CoefficientBelowFloor { .. }));
    }

    #[test]
    fn coefficient_evaluation_is_deterministic() {
        let g = unit_grid(16);
        let spec = CoefficientSpec::Gaussian {
            center: (0.4, 0.6),
            width: 0.2,
            amplitude: 0.4,
            baseline: 0.3,
        };
        let a = spec.evaluate(&g, None).unwrap();
        let b = spec.evaluate(&g, None).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn snapshot_round_trips_exactly() {
        let g = Grid2D::new(1.0, 0.5, 5, 3).unwrap();
        let f = ScalarField::from_fn(&g, |x, y| (x * 7.3).sin() + y / 3.0);
        let mut buf = Vec::new();
        write_snapshot(&mut buf, "s", &f, 2.5).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header, "field s nx 5 ny 3 hx 0.2 hy 0.16666666666666666 t 2.5");
        assert_eq!(text.lines().count(), 4);

        let snap = read_snapshot(&mut buf.as_slice()).unwrap();
        assert_eq!(snap.name, "s");
        assert_eq!((snap.nx, snap.ny), (5, 3));
        assert_eq!(snap.time, 2.5);
        assert_eq!(snap.values, f.values());
    }

    #[test]
    fn mask_snapshot_uses_indicator_values() {
        let g = unit_grid(8);
        let mask = CellMask::from_shape(
            &g,
            MaskShape::Rect {
                x0: 0.25,
                y0: 0.25,
                x1: 0.75,
                y1: 0.75,
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        write_mask_snapshot(&mut buf, "omega_star", &g, &mask).unwrap();
        let snap = read_snapshot(&mut buf.as_slice()).unwrap();
        assert_eq!(snap.values.iter().sum::<f64>(), 16.0);
        assert!(snap.values.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn read_snapshot_reports_malformed_input() {
        let text = "field s nx 2 ny 2 hx 0.5 hy 0.5 t 0\n1 2\n3\n";
        let err = read_snapshot(&mut text.as_bytes()).unwrap_err();
        assert!(matches!(err, GridError::SnapshotFormat(_)));
        let text = "not a header\n";
        assert!(read_snapshot(&mut text.as_bytes()).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn center_mask(g: &Grid2D) -> Arc<CellMask> {
            Arc::new(
                CellMask::from_shape(
                    g,
                    MaskShape::Rect {
                        x0: 0.25,
                        y0: 0.25,
                        x1: 0.75,
                        y1: 0.75,
                    },
                )
                .unwrap(),
            )
        }

        proptest! {
            // Quadrature over the mask plus quadrature over its complement
            // recovers the full-grid quadrature.
            #[test]
            fn mask_partition_additivity(values in proptest::collection::vec(0.0f64..10.0, 64)) {
                let g = unit_grid(8);
                let mask = center_mask(&g);
                let f = ScalarField::from_values(&g, values.clone()).unwrap();
                let inside = f.integrate_over(&mask).unwrap();
                // Complement integral summed by hand, independent of the API.
                let outside: f64 = (0..64)
                    .filter(|&k| !mask.contains(k))
                    .map(|k| values[k])
                    .sum::<f64>() * g.cell_area();
                let total = f.integrate();
                prop_assert!((inside + outside - total).abs() <= 1e-12 * total.abs().max(1.0));
            }

            // Zero extension is a right inverse of restriction.
            #[test]
            fn extend_then_restrict_is_identity(values in proptest::collection::vec(-5.0f64..5.0, 16)) {
                let g = unit_grid(8);
                let mask = center_mask(&g);
                let f = ScalarField::from_values_on(&g, &mask, values).unwrap();
                let back = f.extend_by_zero().unwrap().restrict_to(&mask).unwrap();
                prop_assert_eq!(back.values(), f.values());
            }
        }
    }
}
