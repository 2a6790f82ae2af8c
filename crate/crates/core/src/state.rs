//! Discrete fields and the flattened filter state.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Real;

/// One value per cell (saturation, pressure, permeability).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField<T> {
    pub values: Vec<T>,
}

/// One normal-flux value per face, measured against the face's `+x`/`+y` normal.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxField<T> {
    pub values: Vec<T>,
}

impl<T: Real> ScalarField<T> {
    pub fn zeros(grid: &Grid<T>) -> Self {
        Self::constant(grid, T::zero())
    }

    pub fn constant(grid: &Grid<T>, v: T) -> Self {
        Self {
            values: vec![v; grid.n_cells()],
        }
    }

    /// Evaluates `f` at every cell center.
    pub fn from_fn(grid: &Grid<T>, mut f: impl FnMut([T; 2]) -> T) -> Self {
        Self {
            values: (0..grid.n_cells()).map(|c| f(grid.cell_center(c))).collect(),
        }
    }

    pub fn from_values(grid: &Grid<T>, values: Vec<T>) -> Result<Self> {
        check_len(grid.n_cells(), values.len())?;
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }
}

impl<T: Real> FluxField<T> {
    pub fn zeros(grid: &Grid<T>) -> Self {
        Self {
            values: vec![T::zero(); grid.n_faces()],
        }
    }

    pub fn from_values(grid: &Grid<T>, values: Vec<T>) -> Result<Self> {
        check_len(grid.n_faces(), values.len())?;
        Ok(Self { values })
    }

    pub fn max_abs(&self) -> T {
        self.values
            .iter()
            .fold(T::zero(), |m, v| if v.abs() > m { v.abs() } else { m })
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Which part of the flattened state a coordinate belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variable {
    Saturation,
    Velocity,
    Pressure,
}

impl Variable {
    pub const ALL: [Variable; 3] = [Variable::Saturation, Variable::Velocity, Variable::Pressure];

    pub fn name(self) -> &'static str {
        match self {
            Variable::Saturation => "saturation",
            Variable::Velocity => "velocity",
            Variable::Pressure => "pressure",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "saturation" | "s" => Some(Variable::Saturation),
            "velocity" | "u" => Some(Variable::Velocity),
            "pressure" | "p" => Some(Variable::Pressure),
            _ => None,
        }
    }
}

/// Index ranges of the three blocks inside a flattened state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub n_cells: usize,
    pub n_faces: usize,
}

impl StateLayout {
    pub fn of<T: Real>(grid: &Grid<T>) -> Self {
        Self {
            n_cells: grid.n_cells(),
            n_faces: grid.n_faces(),
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.n_cells + self.n_faces
    }

    pub fn block(&self, v: Variable) -> std::ops::Range<usize> {
        match v {
            Variable::Saturation => 0..self.n_cells,
            Variable::Velocity => self.n_cells..self.n_cells + self.n_faces,
            Variable::Pressure => self.n_cells + self.n_faces..self.dim(),
        }
    }

    pub fn variable_of(&self, k: usize) -> Variable {
        if k < self.n_cells {
            Variable::Saturation
        } else if k < self.n_cells + self.n_faces {
            Variable::Velocity
        } else {
            Variable::Pressure
        }
    }
}

/// The filter state `(s, u, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector<T> {
    pub s: ScalarField<T>,
    pub u: FluxField<T>,
    pub p: ScalarField<T>,
}

impl<T: Real> StateVector<T> {
    pub fn zeros(grid: &Grid<T>) -> Self {
        Self {
            s: ScalarField::zeros(grid),
            u: FluxField::zeros(grid),
            p: ScalarField::zeros(grid),
        }
    }

    /// Saturation as given, velocity and pressure zero.
    pub fn from_saturation(grid: &Grid<T>, s: ScalarField<T>) -> Result<Self> {
        check_len(grid.n_cells(), s.len())?;
        Ok(Self {
            s,
            u: FluxField::zeros(grid),
            p: ScalarField::zeros(grid),
        })
    }

    pub fn dim(&self) -> usize {
        self.s.values.len() + self.u.values.len() + self.p.values.len()
    }

    /// Concatenates the `s`, `u`, `p` blocks.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.dim());
        self.write_flat(&mut out);
        out
    }

    pub fn write_flat(&self, out: &mut Vec<T>) {
        out.extend_from_slice(&self.s.values);
        out.extend_from_slice(&self.u.values);
        out.extend_from_slice(&self.p.values);
    }

    pub fn from_flat(grid: &Grid<T>, flat: &[T]) -> Result<Self> {
        let layout = StateLayout::of(grid);
        check_len(layout.dim(), flat.len())?;
        Ok(Self {
            s: ScalarField {
                values: flat[layout.block(Variable::Saturation)].to_vec(),
            },
            u: FluxField {
                values: flat[layout.block(Variable::Velocity)].to_vec(),
            },
            p: ScalarField {
                values: flat[layout.block(Variable::Pressure)].to_vec(),
            },
        })
    }
}
