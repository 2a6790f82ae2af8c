//! Local ensemble transform Kalman filter.
//!
//! Each analysis point solves the ensemble-space transform problem with the
//! observations around it, down-weighted by a Gaspari–Cohn taper. Optionally
//! the transforms are computed on a coarser lattice of anchor points and
//! interpolated bilinearly to every cell.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::ensf_filter::{run_cycle, Analysis, Ensemble, FilterStep, ForwardModel, RunOptions, StepData};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::observation::{ObservationSpec, ObservationVector};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LetkfConfig<T> {
    /// Taper support in cell widths; `None` disables localization.
    pub radius: Option<T>,
    /// Multiplicative covariance inflation `ρ ≥ 1`.
    pub inflation: T,
    /// Eigenvalue floor used if a local matrix turns out singular.
    pub ridge: T,
}

impl<T: Real> Default for LetkfConfig<T> {
    fn default() -> Self {
        Self {
            radius: Some(T::lit(8.0)),
            inflation: T::lit(1.05),
            ridge: T::lit(1e-10),
        }
    }
}

impl<T: Real> LetkfConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.radius {
            if !(r >= T::zero()) {
                return Err(Error::InvalidParameter(format!(
                    "localization radius must be non-negative, got {r}"
                )));
            }
        }
        if !(self.inflation >= T::one()) {
            return Err(Error::InvalidParameter(format!(
                "inflation must be >= 1, got {}",
                self.inflation
            )));
        }
        Ok(())
    }
}

/// Gaspari–Cohn fifth-order taper with support `2c`.
pub fn gaspari_cohn(dist: f64, c: f64) -> f64 {
    if c <= 0.0 {
        return if dist == 0.0 { 1.0 } else { 0.0 };
    }
    let z = dist.abs() / c;
    if z >= 2.0 {
        0.0
    } else if z <= 1.0 {
        -0.25 * z.powi(5) + 0.5 * z.powi(4) + 0.625 * z.powi(3) - 5.0 / 3.0 * z * z + 1.0
    } else {
        z.powi(5) / 12.0 - 0.5 * z.powi(4) + 0.625 * z.powi(3) + 5.0 / 3.0 * z * z - 5.0 * z
            + 4.0
            - 2.0 / (3.0 * z)
    }
}

/// Where state coordinates live and which analysis point updates them.
#[derive(Debug, Clone)]
pub struct LocalLayout {
    /// Position of every state coordinate, in cell widths.
    coord_loc: Vec<[f64; 2]>,
    /// Positions at which transforms are computed.
    anchors: Vec<[f64; 2]>,
    /// Per analysis point: interpolation weights onto anchors.
    point_anchors: Vec<Vec<(usize, f64)>>,
    /// Per analysis point: the coordinates it updates and their weights.
    point_coords: Vec<Vec<(usize, f64)>>,
}

impl LocalLayout {
    /// One global analysis for a state of length `dim`.
    pub fn global(dim: usize) -> Self {
        Self {
            coord_loc: vec![[0.0; 2]; dim],
            anchors: vec![[0.0; 2]],
            point_anchors: vec![vec![(0, 1.0)]],
            point_coords: vec![(0..dim).map(|k| (k, 1.0)).collect()],
        }
    }

    /// Cell-centered analyses for the `(s, u, p)` state on `grid`.
    ///
    /// Transforms are computed every `stride` cells (plus the last row and
    /// column) and bilinearly interpolated in between; faces take the mean
    /// of their adjacent cells.
    pub fn for_grid<T: Real>(grid: &Grid<T>, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidParameter("weight stride must be >= 1".into()));
        }
        let (nx, ny) = (grid.nx(), grid.ny());
        let n_c = grid.n_cells();
        let n_f = grid.n_faces();
        let hx = grid.hx().to_f64_lossy();
        let hy = grid.hy().to_f64_lossy();
        let to_cells = |x: [T; 2]| [x[0].to_f64_lossy() / hx, x[1].to_f64_lossy() / hy];

        let mut coord_loc = Vec::with_capacity(2 * n_c + n_f);
        coord_loc.extend((0..n_c).map(|c| to_cells(grid.cell_center(c))));
        coord_loc.extend((0..n_f).map(|f| to_cells(grid.face_midpoint(f))));
        coord_loc.extend((0..n_c).map(|c| to_cells(grid.cell_center(c))));

        let lattice = |n: usize| -> Vec<usize> {
            let mut v: Vec<usize> = (0..n).step_by(stride).collect();
            if *v.last().unwrap() != n - 1 {
                v.push(n - 1);
            }
            v
        };
        let ax = lattice(nx);
        let ay = lattice(ny);
        let anchors = ay
            .iter()
            .flat_map(|&j| ax.iter().map(move |&i| [i as f64 + 0.5, j as f64 + 0.5]))
            .collect();
        let bracket = |lat: &[usize], i: usize| -> (usize, f64) {
            let k = lat.partition_point(|&a| a <= i).saturating_sub(1).min(lat.len() - 2);
            let t = (i - lat[k]) as f64 / (lat[k + 1] - lat[k]) as f64;
            (k, t)
        };

        let mut point_anchors = Vec::with_capacity(n_c);
        let mut point_coords = Vec::with_capacity(n_c);
        for c in 0..n_c {
            let (i, j) = grid.cell_ij(c);
            let (kx, tx) = bracket(&ax, i);
            let (ky, ty) = bracket(&ay, j);
            let mut w = Vec::with_capacity(4);
            for (dy, wy) in [(0, 1.0 - ty), (1, ty)] {
                for (dx, wx) in [(0, 1.0 - tx), (1, tx)] {
                    let wt = wx * wy;
                    if wt > 0.0 {
                        w.push(((ky + dy) * ax.len() + kx + dx, wt));
                    }
                }
            }
            point_anchors.push(w);

            let mut coords = vec![(c, 1.0), (n_c + n_f + c, 1.0)];
            for cf in grid.cell_faces(c)? {
                let share = if grid.is_boundary_face(cf.face) { 1.0 } else { 0.5 };
                coords.push((n_c + cf.face, share));
            }
            point_coords.push(coords);
        }
        Ok(Self {
            coord_loc,
            anchors,
            point_anchors,
            point_coords,
        })
    }

    pub fn dim(&self) -> usize {
        self.coord_loc.len()
    }

    pub fn n_anchors(&self) -> usize {
        self.anchors.len()
    }
}

/// LETKF analysis bound to a layout.
#[derive(Debug, Clone)]
pub struct Letkf<T> {
    pub cfg: LetkfConfig<T>,
    pub layout: LocalLayout,
}

impl<T: Real> Analysis<T> for Letkf<T> {
    fn analyze(
        &self,
        prior: &Ensemble<T>,
        spec: &ObservationSpec<T>,
        y: &ObservationVector<T>,
        _step: usize,
    ) -> Result<Ensemble<T>> {
        letkf_update(prior, spec, y, &self.cfg, &self.layout)
    }
}

/// Deterministic square-root analysis of `ens` given data `y`.
pub fn letkf_update<T: Real>(
    ens: &Ensemble<T>,
    spec: &ObservationSpec<T>,
    y: &ObservationVector<T>,
    cfg: &LetkfConfig<T>,
    layout: &LocalLayout,
) -> Result<Ensemble<T>> {
    cfg.validate()?;
    let m = ens.len();
    let dim = ens.dim();
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "LETKF needs at least 2 members, got {m}"
        )));
    }
    if layout.dim() != dim || spec.state_dim != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: layout.dim(),
        });
    }
    if y.values.len() != spec.len() {
        return Err(Error::DimensionMismatch {
            expected: spec.len(),
            got: y.values.len(),
        });
    }
    let f = |v: T| v.to_f64_lossy();
    let xbar: Vec<f64> = ens.mean().into_iter().map(f).collect();
    let p = spec.len();

    // observation-space ensemble: yb[l * m + i]
    let mut yb = vec![0.0; p * m];
    for (i, row) in ens.rows().enumerate() {
        for (l, v) in spec.apply(row).into_iter().enumerate() {
            yb[l * m + i] = f(v);
        }
    }
    let mut innov = vec![0.0; p];
    for l in 0..p {
        let r = &mut yb[l * m..(l + 1) * m];
        let mean = r.iter().sum::<f64>() / m as f64;
        r.iter_mut().for_each(|v| *v -= mean);
        innov[l] = f(y.values[l]) - mean;
    }
    let obs_loc: Vec<[f64; 2]> = spec.mask.iter().map(|&k| layout.coord_loc[k]).collect();

    let inv_r = 1.0 / f(spec.noise_variance);
    let rho = f(cfg.inflation);
    let ridge = f(cfg.ridge);
    let gc_c = cfg.radius.map(|r| 0.5 * f(r));
    let ctx = LocalCtx {
        m,
        yb: &yb,
        innov: &innov,
        obs_loc: &obs_loc,
        inv_r,
        rho,
        ridge,
        gc_c,
    };
    let transforms: Vec<DMatrix<f64>> = layout
        .anchors
        .par_iter()
        .map(|a| ctx.transform(*a))
        .collect();

    let mut out = vec![0.0f64; m * dim];
    let mut t_p = DMatrix::<f64>::zeros(m, m);
    let mut xb_k = DVector::<f64>::zeros(m);
    for (anchors, coords) in layout.point_anchors.iter().zip(&layout.point_coords) {
        t_p.fill(0.0);
        for &(a, w) in anchors {
            t_p += &transforms[a] * w;
        }
        for &(k, share) in coords {
            for i in 0..m {
                xb_k[i] = f(ens.members[i * dim + k]) - xbar[k];
            }
            let upd = t_p.tr_mul(&xb_k);
            for i in 0..m {
                out[i * dim + k] += share * (xbar[k] + upd[i]);
            }
        }
    }
    let mut post = Ensemble::new(dim, out.into_iter().map(T::lit).collect())?;
    post.step = ens.step;
    Ok(post)
}

struct LocalCtx<'a> {
    m: usize,
    yb: &'a [f64],
    innov: &'a [f64],
    obs_loc: &'a [[f64; 2]],
    inv_r: f64,
    rho: f64,
    ridge: f64,
    gc_c: Option<f64>,
}

impl LocalCtx<'_> {
    /// `W_a + w̄ 1ᵀ` for the observations around `at`.
    fn transform(&self, at: [f64; 2]) -> DMatrix<f64> {
        let m = self.m;
        let mut rows = Vec::new();
        let mut scales = Vec::new();
        for (l, loc) in self.obs_loc.iter().enumerate() {
            let taper = match self.gc_c {
                None => 1.0,
                Some(c) => {
                    let d = ((loc[0] - at[0]).powi(2) + (loc[1] - at[1]).powi(2)).sqrt();
                    gaspari_cohn(d, c)
                }
            };
            if taper > 0.0 {
                rows.push(l);
                scales.push((taper * self.inv_r).sqrt());
            }
        }
        let pl = rows.len();
        let scaled_d: Vec<f64> = rows
            .iter()
            .zip(&scales)
            .map(|(&l, s)| s * self.innov[l])
            .collect();
        // member-major scaled perturbations, m x pl
        let mut zt = vec![0.0; m * pl];
        for (c, &l) in rows.iter().enumerate() {
            let src = &self.yb[l * m..(l + 1) * m];
            for i in 0..m {
                zt[i * pl + c] = scales[c] * src[i];
            }
        }
        let mut a = vec![0.0; m * m];
        f64::gemm_bt(m, pl, m, 1.0, &zt, &zt, 0.0, &mut a);
        let mut amat = DMatrix::from_row_slice(m, m, &a);
        let diag = (m as f64 - 1.0) / self.rho;
        for i in 0..m {
            amat[(i, i)] += diag;
        }
        let mut cvec = DVector::<f64>::zeros(m);
        for i in 0..m {
            cvec[i] = (0..pl).map(|c| zt[i * pl + c] * scaled_d[c]).sum();
        }
        let eig = SymmetricEigen::new(amat);
        let mut lam = eig.eigenvalues.clone();
        if lam.iter().any(|v| !(*v > self.ridge)) {
            log::warn!("singular local LETKF matrix, applying ridge {:e}", self.ridge);
            lam.iter_mut().for_each(|v| *v = v.max(self.ridge));
        }
        let q = &eig.eigenvectors;
        // w̄ = Q Λ⁻¹ Qᵀ c
        let mut qc = q.tr_mul(&cvec);
        for i in 0..m {
            qc[i] /= lam[i];
        }
        let wbar = q * qc;
        // W_a = Q diag(sqrt((m-1)/λ)) Qᵀ
        let mut qs = q.clone();
        for j in 0..m {
            let s = ((m as f64 - 1.0) / lam[j]).sqrt();
            qs.column_mut(j).scale_mut(s);
        }
        let mut w = qs * q.transpose();
        for j in 0..m {
            for i in 0..m {
                w[(i, j)] += wbar[i];
            }
        }
        w
    }
}

/// [`run_cycle`] with the LETKF analysis.
pub fn run_letkf<T: Real, F: ForwardModel<T> + ?Sized>(
    model: &F,
    initial: Ensemble<T>,
    data: &[Option<StepData<'_, T>>],
    letkf: &Letkf<T>,
    opts: &RunOptions<'_, T>,
) -> Result<Vec<FilterStep<T>>> {
    letkf.cfg.validate()?;
    run_cycle(model, letkf, initial, data, opts, |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::{make_mask, Nonlinearity};
    use crate::rng;
    use crate::state::Variable;
    use rand_distr::{Distribution, StandardNormal};

    fn random_ensemble(m: usize, dim: usize, seed: u64) -> Ensemble<f64> {
        let mut r = rng::stream(&[seed]);
        Ensemble::from_fn(m, dim, |_, row| {
            for (k, v) in row.iter_mut().enumerate() {
                let e: f64 = StandardNormal.sample(&mut r);
                *v = 0.1 * k as f64 + e;
            }
        })
        .unwrap()
    }

    fn spec_on(mask: Vec<usize>, dim: usize, r: f64) -> ObservationSpec<f64> {
        ObservationSpec {
            mask,
            fractions: Vec::new(),
            nonlinearity: Nonlinearity::Identity,
            noise_variance: r,
            seed: 0,
            state_dim: dim,
        }
    }

    fn global(inflation: f64) -> LetkfConfig<f64> {
        LetkfConfig {
            radius: None,
            inflation,
            ridge: 1e-10,
        }
    }

    fn covariance(e: &Ensemble<f64>) -> DMatrix<f64> {
        let mean = e.mean();
        let m = e.len();
        let x = DMatrix::from_fn(e.dim(), m, |k, i| e.member(i)[k] - mean[k]);
        &x * x.transpose() / (m as f64 - 1.0)
    }

    #[test]
    fn taper_shape() {
        assert_eq!(gaspari_cohn(0.0, 2.0), 1.0);
        assert_eq!(gaspari_cohn(4.0, 2.0), 0.0);
        assert_eq!(gaspari_cohn(5.0, 2.0), 0.0);
        let below = gaspari_cohn(2.0 - 1e-9, 2.0);
        let above = gaspari_cohn(2.0 + 1e-9, 2.0);
        assert!((below - 5.0 / 24.0).abs() < 1e-8 && (above - below).abs() < 1e-8);
        let mut prev = 1.0;
        for i in 1..40 {
            let v = gaspari_cohn(i as f64 * 0.1, 2.0);
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn empty_mask_only_inflates() {
        let ens = random_ensemble(10, 5, 1);
        let spec = spec_on(vec![], 5, 0.07);
        let y = ObservationVector { step: 1, values: vec![] };
        let rho = 1.1;
        let post = letkf_update(&ens, &spec, &y, &global(rho), &LocalLayout::global(5)).unwrap();
        for (a, b) in post.mean().iter().zip(ens.mean()) {
            assert!((a - b).abs() < 1e-12);
        }
        // covariance factor ρ, so the spread grows by √ρ
        for (a, b) in post.spread().iter().zip(ens.spread()) {
            assert!((a / b - rho.sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn sharp_observations_pin_the_mean() {
        let dim = 4;
        let ens = random_ensemble(20, dim, 2);
        let spec = spec_on((0..dim).collect(), dim, 1e-10);
        let y = ObservationVector {
            step: 1,
            values: vec![0.5, -0.3, 1.2, 0.0],
        };
        let post = letkf_update(&ens, &spec, &y, &global(1.0), &LocalLayout::global(dim)).unwrap();
        for (a, b) in post.mean().iter().zip(&y.values) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn vague_observations_change_nothing() {
        let dim = 4;
        let ens = random_ensemble(20, dim, 3);
        let spec = spec_on((0..dim).collect(), dim, 1e12);
        let y = ObservationVector {
            step: 1,
            values: vec![5.0; dim],
        };
        let post = letkf_update(&ens, &spec, &y, &global(1.0), &LocalLayout::global(dim)).unwrap();
        for (a, b) in post.mean().iter().zip(ens.mean()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn scalar_update_lies_between_forecast_and_data() {
        let ens = random_ensemble(15, 3, 4);
        let spec = spec_on(vec![1], 3, 0.5);
        let fmean = ens.mean()[1];
        for obs in [-4.0, 0.0, 3.0] {
            let y = ObservationVector { step: 1, values: vec![obs] };
            let post = letkf_update(&ens, &spec, &y, &global(1.0), &LocalLayout::global(3)).unwrap();
            let a = post.mean()[1];
            assert!((a - fmean) * (obs - fmean) >= 0.0);
            assert!((a - fmean).abs() <= (obs - fmean).abs());
        }
    }

    #[test]
    fn global_analysis_matches_dense_etkf() {
        let (m, dim) = (12, 6);
        let rho = 1.05;
        let r = 0.3;
        let ens = random_ensemble(m, dim, 5);
        let mask = vec![0, 2, 3, 5];
        let spec = spec_on(mask.clone(), dim, r);
        let y = ObservationVector {
            step: 1,
            values: vec![0.4, -0.1, 0.9, 0.2],
        };
        let post = letkf_update(&ens, &spec, &y, &global(rho), &LocalLayout::global(dim)).unwrap();

        let p = covariance(&ens) * rho;
        let h = DMatrix::from_fn(mask.len(), dim, |l, k| if mask[l] == k { 1.0 } else { 0.0 });
        let s = &h * &p * h.transpose() + DMatrix::identity(mask.len(), mask.len()) * r;
        let gain = &p * h.transpose() * s.try_inverse().unwrap();
        let xbar = DVector::from_vec(ens.mean());
        let yv = DVector::from_vec(y.values.clone());
        let want_mean = &xbar + &gain * (yv - &h * &xbar);
        let want_cov = (DMatrix::identity(dim, dim) - &gain * &h) * &p;

        for (a, b) in post.mean().iter().zip(want_mean.iter()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        let got_cov = covariance(&post);
        assert!((got_cov - want_cov).amax() < 1e-10);
    }

    #[test]
    fn grid_layout_partitions_every_coordinate() {
        let g = Grid::<f64>::new(7, 5).unwrap();
        for stride in [1, 2, 3, 10] {
            let lay = LocalLayout::for_grid(&g, stride).unwrap();
            assert_eq!(lay.dim(), g.state_dim());
            let mut total = vec![0.0; g.state_dim()];
            for (anchors, coords) in lay.point_anchors.iter().zip(&lay.point_coords) {
                let w: f64 = anchors.iter().map(|a| a.1).sum();
                assert!((w - 1.0).abs() < 1e-12);
                for &(k, s) in coords {
                    total[k] += s;
                }
            }
            assert!(total.iter().all(|t| (t - 1.0).abs() < 1e-12));
        }
        assert_eq!(LocalLayout::for_grid(&g, 1).unwrap().n_anchors(), 35);
        assert_eq!(LocalLayout::for_grid(&g, 3).unwrap().n_anchors(), 3 * 3);
        assert!(LocalLayout::for_grid(&g, 0).is_err());
    }

    #[test]
    fn distant_observations_are_ignored() {
        let g = Grid::<f64>::new(16, 4).unwrap();
        let dim = g.state_dim();
        let ens = random_ensemble(8, dim, 6);
        // one saturation observation in the far-right column
        let k = g.cell_index(15, 1);
        let spec = spec_on(vec![k], dim, 0.1);
        let y = ObservationVector { step: 1, values: vec![3.0] };
        let cfg = LetkfConfig {
            radius: Some(4.0),
            inflation: 1.0,
            ridge: 1e-10,
        };
        let lay = LocalLayout::for_grid(&g, 1).unwrap();
        let post = letkf_update(&ens, &spec, &y, &cfg, &lay).unwrap();
        let left = g.cell_index(0, 1);
        for i in 0..8 {
            assert!((post.member(i)[left] - ens.member(i)[left]).abs() < 1e-12);
        }
        assert!((post.mean()[k] - ens.mean()[k]).abs() > 1e-3);
    }

    #[test]
    fn arctan_spec_runs_on_a_grid() {
        let g = Grid::<f64>::new(8, 8).unwrap();
        let spec = make_mask(&g, &Variable::ALL, 0.5, 3).unwrap();
        let ens = random_ensemble(10, g.state_dim(), 7);
        let y = ObservationVector {
            step: 1,
            values: vec![0.2; spec.len()],
        };
        let lay = LocalLayout::for_grid(&g, 2).unwrap();
        let post = letkf_update(&ens, &spec, &y, &LetkfConfig::default(), &lay).unwrap();
        assert_eq!(post.len(), 10);
        assert!(post.members.iter().all(|v| v.is_finite()));
    }
}
