//! Uniform tensor-product mesh over the unit square.
//!
//! Cells are numbered row-major, `c = i + nx * j`. Faces come in two blocks:
//! x-normal faces first (`(nx + 1) * ny` of them, index `i + (nx + 1) * j`),
//! then y-normal faces (`nx * (ny + 1)`, index `offset + i + nx * j`). Every
//! stored face flux is measured against the global `+x` / `+y` normal.

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    /// Normal points in `+x`; the face is a vertical segment.
    X,
    /// Normal points in `+y`; the face is a horizontal segment.
    Y,
}

/// A face addressed by orientation and lattice position.
///
/// For x-normal faces `i` runs over `0..=nx` and `j` over `0..ny`; for
/// y-normal faces `i` runs over `0..nx` and `j` over `0..=ny`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FaceRef {
    pub orientation: Orientation,
    pub i: usize,
    pub j: usize,
}

/// Side of a cell, in the order returned by [`Grid::cell_faces`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    West,
    East,
    South,
    North,
}

/// One entry of a cell's face list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellFace {
    pub side: Side,
    pub face: usize,
    /// `+1` if the stored flux direction is outward for this cell, `-1` otherwise.
    pub sign: i8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    nx: usize,
    ny: usize,
    hx: T,
    hy: T,
}

impl<T: Real> Grid<T> {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 cells per axis, got {nx}x{ny}"
            )));
        }
        Ok(Self {
            nx,
            ny,
            hx: T::one() / T::from_count(nx),
            hy: T::one() / T::from_count(ny),
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn hx(&self) -> T {
        self.hx
    }

    pub fn hy(&self) -> T {
        self.hy
    }

    pub fn cell_area(&self) -> T {
        self.hx * self.hy
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_x_faces(&self) -> usize {
        (self.nx + 1) * self.ny
    }

    pub fn n_y_faces(&self) -> usize {
        self.nx * (self.ny + 1)
    }

    pub fn n_faces(&self) -> usize {
        self.n_x_faces() + self.n_y_faces()
    }

    /// Length of the flattened `(s, u, p)` state.
    pub fn state_dim(&self) -> usize {
        2 * self.n_cells() + self.n_faces()
    }

    #[inline]
    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        i + self.nx * j
    }

    #[inline]
    pub fn cell_ij(&self, c: usize) -> (usize, usize) {
        (c % self.nx, c / self.nx)
    }

    pub fn cell_center(&self, c: usize) -> [T; 2] {
        let (i, j) = self.cell_ij(c);
        let half = T::lit(0.5);
        [
            (T::from_count(i) + half) * self.hx,
            (T::from_count(j) + half) * self.hy,
        ]
    }

    pub fn face_index(&self, f: FaceRef) -> Result<usize> {
        match f.orientation {
            Orientation::X if f.i <= self.nx && f.j < self.ny => Ok(f.i + (self.nx + 1) * f.j),
            Orientation::Y if f.i < self.nx && f.j <= self.ny => {
                Ok(self.n_x_faces() + f.i + self.nx * f.j)
            }
            _ => Err(Error::InvalidParameter(format!("face {f:?} outside grid"))),
        }
    }

    pub fn face_ref(&self, f: usize) -> Result<FaceRef> {
        if f >= self.n_faces() {
            return Err(Error::OutOfRange {
                index: f,
                len: self.n_faces(),
            });
        }
        Ok(self.face_ref_unchecked(f))
    }

    #[inline]
    fn face_ref_unchecked(&self, f: usize) -> FaceRef {
        let nxf = self.n_x_faces();
        if f < nxf {
            FaceRef {
                orientation: Orientation::X,
                i: f % (self.nx + 1),
                j: f / (self.nx + 1),
            }
        } else {
            let g = f - nxf;
            FaceRef {
                orientation: Orientation::Y,
                i: g % self.nx,
                j: g / self.nx,
            }
        }
    }

    /// Length of a face (`hy` for x-normal faces, `hx` for y-normal faces).
    pub fn face_length(&self, f: usize) -> T {
        if f < self.n_x_faces() {
            self.hy
        } else {
            self.hx
        }
    }

    pub fn face_midpoint(&self, f: usize) -> [T; 2] {
        let r = self.face_ref_unchecked(f);
        let half = T::lit(0.5);
        match r.orientation {
            Orientation::X => [
                T::from_count(r.i) * self.hx,
                (T::from_count(r.j) + half) * self.hy,
            ],
            Orientation::Y => [
                (T::from_count(r.i) + half) * self.hx,
                T::from_count(r.j) * self.hy,
            ],
        }
    }

    /// Cells on the negative and positive side of a face (w.r.t. its normal).
    ///
    /// Boundary faces have exactly one of the two set.
    pub fn face_cells(&self, f: usize) -> (Option<usize>, Option<usize>) {
        let r = self.face_ref_unchecked(f);
        match r.orientation {
            Orientation::X => {
                let minus = (r.i > 0).then(|| self.cell_index(r.i - 1, r.j));
                let plus = (r.i < self.nx).then(|| self.cell_index(r.i, r.j));
                (minus, plus)
            }
            Orientation::Y => {
                let minus = (r.j > 0).then(|| self.cell_index(r.i, r.j - 1));
                let plus = (r.j < self.ny).then(|| self.cell_index(r.i, r.j));
                (minus, plus)
            }
        }
    }

    pub fn is_boundary_face(&self, f: usize) -> bool {
        let (a, b) = self.face_cells(f);
        a.is_none() || b.is_none()
    }

    /// West, east, south and north faces of `cell` with outward signs.
    pub fn cell_faces(&self, cell: usize) -> Result<[CellFace; 4]> {
        if cell >= self.n_cells() {
            return Err(Error::OutOfRange {
                index: cell,
                len: self.n_cells(),
            });
        }
        Ok(self.cell_faces_unchecked(cell))
    }

    #[inline]
    pub(crate) fn cell_faces_unchecked(&self, cell: usize) -> [CellFace; 4] {
        let (i, j) = self.cell_ij(cell);
        let nxf = self.n_x_faces();
        let west = i + (self.nx + 1) * j;
        let south = nxf + i + self.nx * j;
        [
            CellFace {
                side: Side::West,
                face: west,
                sign: -1,
            },
            CellFace {
                side: Side::East,
                face: west + 1,
                sign: 1,
            },
            CellFace {
                side: Side::South,
                face: south,
                sign: -1,
            },
            CellFace {
                side: Side::North,
                face: south + self.nx,
                sign: 1,
            },
        ]
    }
}
