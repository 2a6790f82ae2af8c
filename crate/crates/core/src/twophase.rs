//! Forward two-phase flow solver: implicit pressure, explicit saturation.
//!
//! The pressure/velocity system is the lowest-order Raviart–Thomas mixed
//! method with trapezoidal (face-lumped) quadrature of the velocity mass
//! matrix. On a uniform rectangular grid the lumped mass matrix is diagonal,
//! so the velocity can be eliminated face by face and the Schur complement
//! becomes a symmetric positive definite cell-centered system with harmonic
//! transmissibilities
//!
//! ```text
//! T_f = |f| / (d_minus / (K λ)_minus + d_plus / (K λ)_plus)
//! ```
//!
//! where `d` is the center-to-face distance. Dirichlet pressure enters as the
//! natural boundary term with half-cell distance to the boundary face. The
//! saturation update is first-order upwind finite volume with forward Euler.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Real;
use crate::state::{FluxField, ScalarField, StateVector};

/// Total mobility `λ(s) = s²/μ + (1 - s)²`.
#[inline]
pub fn total_mobility<T: Real>(s: T, mu: T) -> T {
    s * s / mu + (T::one() - s) * (T::one() - s)
}

/// Fractional flow `F(s) = s² / (s² + μ (1 - s)²)`.
#[inline]
pub fn fractional_flow<T: Real>(s: T, mu: T) -> T {
    let w = s * s;
    let o = mu * (T::one() - s) * (T::one() - s);
    let den = w + o;
    if den == T::zero() {
        T::zero()
    } else {
        w / den
    }
}

/// `dF/ds = 2 μ s (1 - s) / (s² + μ (1 - s)²)²`.
#[inline]
pub fn fractional_flow_derivative<T: Real>(s: T, mu: T) -> T {
    let den = s * s + mu * (T::one() - s) * (T::one() - s);
    if den == T::zero() {
        return T::zero();
    }
    T::lit(2.0) * mu * s * (T::one() - s) / (den * den)
}

/// Maximum of `F'` over `[0, 1]`, by dense sampling plus golden-section refinement.
pub fn max_fractional_flow_slope<T: Real>(mu: T) -> T {
    let n = 2000;
    let mut best = (T::zero(), T::zero());
    for k in 0..=n {
        let s = T::from_count(k) / T::from_count(n);
        let d = fractional_flow_derivative(s, mu);
        if d > best.1 {
            best = (s, d);
        }
    }
    let h = T::one() / T::from_count(n);
    let (mut a, mut b) = ((best.0 - h).max(T::zero()), (best.0 + h).min(T::one()));
    let g = T::lit(0.618_033_988_749_894_8);
    for _ in 0..60 {
        let x1 = b - g * (b - a);
        let x2 = a + g * (b - a);
        if fractional_flow_derivative(x1, mu) > fractional_flow_derivative(x2, mu) {
            b = x2;
        } else {
            a = x1;
        }
    }
    fractional_flow_derivative(T::lit(0.5) * (a + b), mu).max(best.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CflPolicy {
    Off,
    #[default]
    Warn,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverParams<T> {
    /// Viscosity ratio entering `λ` and `F`.
    pub mu: T,
    pub dt: T,
    /// Relative residual target for the pressure solve.
    pub linear_tol: T,
    pub max_iterations: usize,
    pub clamp_saturation: bool,
    pub cfl: CflPolicy,
}

impl<T: Real> Default for SolverParams<T> {
    fn default() -> Self {
        Self {
            mu: T::lit(0.2),
            dt: T::lit(0.001),
            // 1e-10 leaves per-cell flux residuals near 1e-8 max|u| on boundary-driven flows.
            linear_tol: T::lit(1e-12).max(T::epsilon() * T::lit(10.0)),
            max_iterations: 20_000,
            clamp_saturation: true,
            cfl: CflPolicy::Warn,
        }
    }
}

impl<T: Real> SolverParams<T> {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: T| v > T::zero() && v.is_finite();
        if !pos(self.mu) || !pos(self.dt) || !pos(self.linear_tol) {
            return Err(Error::InvalidParameter(format!(
                "mu, dt and linear_tol must be positive (mu={}, dt={}, tol={})",
                self.mu, self.dt, self.linear_tol
            )));
        }
        Ok(())
    }
}

type PointFn<T> = Arc<dyn Fn([T; 2]) -> T + Send + Sync>;

/// Boundary data evaluated at boundary-face midpoints.
#[derive(Clone)]
pub struct BoundaryData<T> {
    pub pressure: PointFn<T>,
    /// Saturation carried in through inflow boundary faces.
    pub inflow_saturation: PointFn<T>,
}

impl<T: Real> BoundaryData<T> {
    /// `p_D = 1 - x₁`, `s = 1` entering through `x₁ = 0`, `s = 0` elsewhere.
    pub fn reference() -> Self {
        Self {
            pressure: Arc::new(|x: [T; 2]| T::one() - x[0]),
            inflow_saturation: Arc::new(|x: [T; 2]| {
                if x[0] <= T::lit(1e-12) {
                    T::one()
                } else {
                    T::zero()
                }
            }),
        }
    }

    pub fn new(
        pressure: impl Fn([T; 2]) -> T + Send + Sync + 'static,
        inflow_saturation: impl Fn([T; 2]) -> T + Send + Sync + 'static,
    ) -> Self {
        Self {
            pressure: Arc::new(pressure),
            inflow_saturation: Arc::new(inflow_saturation),
        }
    }
}

impl<T> std::fmt::Debug for BoundaryData<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("BoundaryData { .. }")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DarcySolution<T> {
    pub u: FluxField<T>,
    pub p: ScalarField<T>,
    pub iterations: usize,
    /// Final relative residual of the pressure system.
    pub residual: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportStats<T> {
    pub cfl: T,
    /// Cells whose unclamped update left `[0, 1]`.
    pub clamped: usize,
    pub min: T,
    pub max: T,
}

/// IMPES solver bound to a grid, parameters and boundary data.
#[derive(Debug, Clone)]
pub struct TwoPhaseSolver<T> {
    grid: Grid<T>,
    params: SolverParams<T>,
    /// Pressure at each boundary face midpoint (NaN for interior faces).
    face_pressure: Vec<T>,
    face_inflow: Vec<T>,
    /// Volumetric source per cell; zero in every experiment.
    source: Option<ScalarField<T>>,
    max_slope: T,
}

impl<T: Real> TwoPhaseSolver<T> {
    pub fn new(grid: Grid<T>, params: SolverParams<T>, bc: &BoundaryData<T>) -> Result<Self> {
        params.validate()?;
        let nf = grid.n_faces();
        let mut face_pressure = vec![T::nan(); nf];
        let mut face_inflow = vec![T::nan(); nf];
        for f in 0..nf {
            if grid.is_boundary_face(f) {
                let x = grid.face_midpoint(f);
                face_pressure[f] = (bc.pressure)(x);
                face_inflow[f] = (bc.inflow_saturation)(x);
            }
        }
        let max_slope = max_fractional_flow_slope(params.mu);
        Ok(Self {
            grid,
            params,
            face_pressure,
            face_inflow,
            source: None,
            max_slope,
        })
    }

    pub fn with_source(mut self, q: ScalarField<T>) -> Result<Self> {
        if q.len() != self.grid.n_cells() {
            return Err(Error::DimensionMismatch {
                expected: self.grid.n_cells(),
                got: q.len(),
            });
        }
        self.source = Some(q);
        Ok(self)
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn params(&self) -> &SolverParams<T> {
        &self.params
    }

    /// Face transmissibilities for the cell coefficient `Kλ(s)`.
    fn transmissibilities(&self, k: &ScalarField<T>, s: &ScalarField<T>) -> Result<Vec<T>> {
        let g = &self.grid;
        let half = T::lit(0.5);
        let mut coef = Vec::with_capacity(g.n_cells());
        for c in 0..g.n_cells() {
            let v = k.values[c] * total_mobility(s.values[c], self.params.mu);
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::SolverFailure {
                    residual: f64::NAN,
                    iterations: 0,
                });
            }
            coef.push(v);
        }
        let nxf = g.n_x_faces();
        let trans = (0..g.n_faces())
            .map(|f| {
                let (len, d) = if f < nxf {
                    (g.hy(), half * g.hx())
                } else {
                    (g.hx(), half * g.hy())
                };
                let resist = match g.face_cells(f) {
                    (Some(a), Some(b)) => d / coef[a] + d / coef[b],
                    (Some(a), None) | (None, Some(a)) => d / coef[a],
                    (None, None) => unreachable!("face without cells"),
                };
                len / resist
            })
            .collect();
        Ok(trans)
    }

    /// Solves the mixed pressure–velocity system for saturation `s`.
    ///
    /// `p_guess` seeds the iterative solve; it does not affect the solution
    /// beyond the solver tolerance.
    pub fn solve_darcy(
        &self,
        k: &ScalarField<T>,
        s: &ScalarField<T>,
        p_guess: Option<&ScalarField<T>>,
    ) -> Result<DarcySolution<T>> {
        let g = &self.grid;
        let n = g.n_cells();
        for (name, len) in [("permeability", k.len()), ("saturation", s.len())] {
            if len != n {
                log::debug!("{name} field has wrong length");
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: len,
                });
            }
        }
        let trans = self.transmissibilities(k, s)?;

        let mut diag = vec![T::zero(); n];
        let mut rhs = vec![T::zero(); n];
        for f in 0..g.n_faces() {
            let t = trans[f];
            match g.face_cells(f) {
                (Some(a), Some(b)) => {
                    diag[a] = diag[a] + t;
                    diag[b] = diag[b] + t;
                }
                (Some(a), None) | (None, Some(a)) => {
                    diag[a] = diag[a] + t;
                    rhs[a] = rhs[a] + t * self.face_pressure[f];
                }
                (None, None) => unreachable!(),
            }
        }
        if let Some(q) = &self.source {
            let area = g.cell_area();
            for c in 0..n {
                rhs[c] = rhs[c] + q.values[c] * area;
            }
        }

        let apply = |x: &[T], y: &mut [T]| {
            for (c, yc) in y.iter_mut().enumerate() {
                *yc = diag[c] * x[c];
            }
            for f in 0..g.n_faces() {
                if let (Some(a), Some(b)) = g.face_cells(f) {
                    let t = trans[f];
                    y[a] = y[a] - t * x[b];
                    y[b] = y[b] - t * x[a];
                }
            }
        };

        let mut p = match p_guess {
            Some(p0) if p0.len() == n && p0.values.iter().all(|v| v.is_finite()) => {
                p0.values.clone()
            }
            _ => vec![T::zero(); n],
        };
        let (iterations, residual) = pcg(
            &apply,
            &diag,
            &rhs,
            &mut p,
            self.params.linear_tol,
            self.params.max_iterations,
        )?;

        let mut u = vec![T::zero(); g.n_faces()];
        for (f, uf) in u.iter_mut().enumerate() {
            let t = trans[f];
            let flux = match g.face_cells(f) {
                (Some(a), Some(b)) => t * (p[a] - p[b]),
                (Some(a), None) => t * (p[a] - self.face_pressure[f]),
                (None, Some(b)) => t * (self.face_pressure[f] - p[b]),
                (None, None) => unreachable!(),
            };
            *uf = flux / g.face_length(f);
        }
        Ok(DarcySolution {
            u: FluxField { values: u },
            p: ScalarField { values: p },
            iterations,
            residual,
        })
    }

    /// CFL number `δt · max|u·n| / min(hx, hy) · max F'`.
    pub fn cfl_number(&self, u: &FluxField<T>) -> T {
        self.params.dt * u.max_abs() / self.grid.hx().min(self.grid.hy()) * self.max_slope
    }

    /// Explicit upwind saturation update.
    pub fn advance_saturation(&self, s: &ScalarField<T>, u: &FluxField<T>) -> Result<ScalarField<T>> {
        self.advance_saturation_with_stats(s, u).map(|(f, _)| f)
    }

    pub fn advance_saturation_with_stats(
        &self,
        s: &ScalarField<T>,
        u: &FluxField<T>,
    ) -> Result<(ScalarField<T>, TransportStats<T>)> {
        let g = &self.grid;
        if s.len() != g.n_cells() || u.values.len() != g.n_faces() {
            return Err(Error::DimensionMismatch {
                expected: g.n_cells() + g.n_faces(),
                got: s.len() + u.values.len(),
            });
        }
        let cfl = self.cfl_number(u);
        if cfl > T::one() {
            match self.params.cfl {
                CflPolicy::Off => {}
                CflPolicy::Warn => log::warn!("CFL number {cfl:.4} exceeds 1"),
                CflPolicy::Error => {
                    return Err(Error::CflViolation {
                        cfl: cfl.to_f64_lossy(),
                    })
                }
            }
        }

        let mu = self.params.mu;
        let dt_over_area = self.params.dt / g.cell_area();
        let mut out = s.values.clone();
        for f in 0..g.n_faces() {
            let un = u.values[f];
            if un == T::zero() {
                continue;
            }
            let (minus, plus) = g.face_cells(f);
            let upstream = if un > T::zero() { minus } else { plus };
            let s_up = match upstream {
                Some(c) => s.values[c],
                None => self.face_inflow[f],
            };
            // flux along the stored +normal direction, integrated over the face
            let flux = fractional_flow(s_up, mu) * un * g.face_length(f) * dt_over_area;
            if let Some(a) = minus {
                out[a] = out[a] - flux;
            }
            if let Some(b) = plus {
                out[b] = out[b] + flux;
            }
        }
        if let Some(q) = &self.source {
            let dt = self.params.dt;
            for (c, v) in out.iter_mut().enumerate() {
                *v = *v + dt * fractional_flow(s.values[c], mu) * q.values[c];
            }
        }

        let mut stats = TransportStats {
            cfl,
            clamped: 0,
            min: T::infinity(),
            max: T::neg_infinity(),
        };
        for v in out.iter_mut() {
            stats.min = stats.min.min(*v);
            stats.max = stats.max.max(*v);
            if *v < T::zero() || *v > T::one() {
                stats.clamped += 1;
                if self.params.clamp_saturation {
                    *v = v.max(T::zero()).min(T::one());
                }
            }
        }
        Ok((ScalarField { values: out }, stats))
    }

    /// One IMPES step: Darcy solve with `λ(sⁿ)`, then saturation transport.
    pub fn step(&self, state: &StateVector<T>, k: &ScalarField<T>) -> Result<StateVector<T>> {
        let darcy = self.solve_darcy(k, &state.s, Some(&state.p))?;
        let s = self.advance_saturation(&state.s, &darcy.u)?;
        Ok(StateVector {
            s,
            u: darcy.u,
            p: darcy.p,
        })
    }

    /// Net outward flux of every cell, `Σ_f (u·n_out) |f|`, minus the source.
    pub fn cell_flux_residuals(&self, u: &FluxField<T>) -> Vec<T> {
        let g = &self.grid;
        let mut r = vec![T::zero(); g.n_cells()];
        for (c, rc) in r.iter_mut().enumerate() {
            let mut acc = T::zero();
            for cf in g.cell_faces_unchecked(c) {
                let sign = if cf.sign > 0 { T::one() } else { -T::one() };
                acc = acc + sign * u.values[cf.face] * g.face_length(cf.face);
            }
            if let Some(q) = &self.source {
                acc = acc - q.values[c] * g.cell_area();
            }
            *rc = acc;
        }
        r
    }
}

/// Jacobi-preconditioned conjugate gradients.
///
/// Returns the iteration count and the final relative residual.
fn pcg<T: Real>(
    apply: &dyn Fn(&[T], &mut [T]),
    diag: &[T],
    b: &[T],
    x: &mut [T],
    tol: T,
    max_iter: usize,
) -> Result<(usize, T)> {
    let n = b.len();
    let dot = |a: &[T], b: &[T]| a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + *x * *y);
    let b_norm = dot(b, b).sqrt();
    let mut r = vec![T::zero(); n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let scale = if b_norm > T::zero() { b_norm } else { T::one() };
    let mut r_norm = dot(&r, &r).sqrt();
    if !r_norm.is_finite() {
        return Err(Error::SolverFailure {
            residual: r_norm.to_f64_lossy(),
            iterations: 0,
        });
    }
    if r_norm <= tol * scale {
        return Ok((0, r_norm / scale));
    }
    if diag.iter().any(|d| !(*d > T::zero())) {
        return Err(Error::SolverFailure {
            residual: (r_norm / scale).to_f64_lossy(),
            iterations: 0,
        });
    }
    let mut z: Vec<T> = r.iter().zip(diag).map(|(r, d)| *r / *d).collect();
    let mut d = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![T::zero(); n];
    for it in 1..=max_iter {
        apply(&d, &mut q);
        let dq = dot(&d, &q);
        if !(dq > T::zero()) {
            return Err(Error::SolverFailure {
                residual: (r_norm / scale).to_f64_lossy(),
                iterations: it,
            });
        }
        let alpha = rz / dq;
        for i in 0..n {
            x[i] = x[i] + alpha * d[i];
            r[i] = r[i] - alpha * q[i];
        }
        r_norm = dot(&r, &r).sqrt();
        if !r_norm.is_finite() {
            return Err(Error::SolverFailure {
                residual: r_norm.to_f64_lossy(),
                iterations: it,
            });
        }
        if r_norm <= tol * scale {
            return Ok((it, r_norm / scale));
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            d[i] = z[i] + beta * d[i];
        }
    }
    Err(Error::NotConverged {
        residual: (r_norm / scale).to_f64_lossy(),
        iterations: max_iter,
    })
}
