//! Uniform symmetric frequency grids, sampled Fourier transforms, norms and
//! frequency projectors.
//!
//! Every quadrature in the crate uses the rectangle rule with weight `dxi`
//! on the nodes of a [`FrequencyGrid`]. Nodes are addressed either by index
//! `k ∈ 0..n` or by the signed offset `o = k - (n-1)/2`, so that `ξ = o·dxi`
//! and the node `ξ = 0` is always present.

use std::fs;
use std::io::Write as _;
use std::ops::{Add, Mul, Sub};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Japanese bracket `⟨ξ⟩ = (1 + ξ²)^{1/2}`.
#[inline]
pub fn japanese(xi: f64) -> f64 {
    (1.0 + xi * xi).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    xi_max: f64,
    n: usize,
    dxi: f64,
}

impl FrequencyGrid {
    /// Grid of `n` (odd) nodes on `[-xi_max, xi_max]`.
    pub fn new(xi_max: f64, n: usize) -> Result<Self> {
        if !(xi_max.is_finite() && xi_max > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "xi_max must be positive and finite, got {xi_max}"
            )));
        }
        if n < 3 || n % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "node count must be odd and at least 3, got {n}"
            )));
        }
        let dxi = 2.0 * xi_max / (n - 1) as f64;
        Ok(Self { xi_max, n, dxi })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn xi_max(&self) -> f64 {
        self.xi_max
    }

    pub fn dxi(&self) -> f64 {
        self.dxi
    }

    /// Index of the node `ξ = 0`.
    pub fn center(&self) -> usize {
        (self.n - 1) / 2
    }

    /// Largest admissible offset; offsets range over `-half..=half`.
    pub fn half(&self) -> i64 {
        self.center() as i64
    }

    #[inline]
    pub fn offset(&self, k: usize) -> i64 {
        k as i64 - self.half()
    }

    #[inline]
    pub fn index(&self, offset: i64) -> Option<usize> {
        let h = self.half();
        if (-h..=h).contains(&offset) {
            Some((offset + h) as usize)
        } else {
            None
        }
    }

    #[inline]
    pub fn node(&self, k: usize) -> f64 {
        self.offset(k) as f64 * self.dxi
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.node(k)).collect()
    }

    /// Nearest node to `xi` if it lies within `dxi/2` of a node inside the grid.
    pub fn snap(&self, xi: f64) -> Option<usize> {
        if !xi.is_finite() {
            return None;
        }
        let o = (xi / self.dxi).round();
        if (xi - o * self.dxi).abs() > 0.5 * self.dxi {
            return None;
        }
        self.index(o as i64)
    }
}

/// Samples of `v̂(ξ)` on a [`FrequencyGrid`]. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: FrequencyGrid,
    values: Vec<Complex64>,
    real_physical: bool,
}

impl GridFunction {
    pub fn new(grid: FrequencyGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::InvalidInput(format!(
                "expected {} samples, got {}",
                grid.n(),
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::InvalidInput(format!("non-finite sample at node {k}")));
        }
        Ok(Self {
            grid,
            values,
            real_physical: false,
        })
    }

    /// Construction path for kernels whose outputs are finite by construction.
    pub(crate) fn from_parts(grid: FrequencyGrid, values: Vec<Complex64>, real_physical: bool) -> Self {
        debug_assert_eq!(values.len(), grid.n());
        Self {
            grid,
            values,
            real_physical,
        }
    }

    pub fn zeros(grid: FrequencyGrid) -> Self {
        Self::from_parts(grid, vec![Complex64::new(0.0, 0.0); grid.n()], false)
    }

    pub fn from_fn(grid: FrequencyGrid, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        Self::new(grid, grid.nodes().into_iter().map(f).collect())
    }

    /// Marks the function as the transform of a real physical-space function.
    /// The Hermitian symmetry is checked to 1e-12 relative.
    pub fn into_real_physical(mut self) -> Result<Self> {
        let defect = self.hermitian_defect();
        if defect > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "Hermitian symmetry violated (relative defect {defect:e})"
            )));
        }
        self.real_physical = true;
        Ok(self)
    }

    /// Projects onto Hermitian-symmetric functions, `v(-ξ) = conj v(ξ)`.
    pub fn hermitian_part(&self) -> Self {
        let n = self.grid.n();
        let values = (0..n)
            .map(|k| 0.5 * (self.values[k] + self.values[n - 1 - k].conj()))
            .collect();
        Self::from_parts(self.grid, values, true)
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn is_real_physical(&self) -> bool {
        self.real_physical
    }

    pub(crate) fn set_real_physical(&mut self, flag: bool) {
        self.real_physical = flag;
    }

    #[inline]
    pub fn at_offset(&self, offset: i64) -> Complex64 {
        match self.grid.index(offset) {
            Some(k) => self.values[k],
            None => Complex64::new(0.0, 0.0),
        }
    }

    /// max_k |v(-ξ_k) - conj v(ξ_k)| / max_k |v(ξ_k)| (0 for the zero function).
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.grid.n();
        let scale = self.values.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if scale == 0.0 {
            return 0.0;
        }
        (0..n)
            .map(|k| (self.values[n - 1 - k] - self.values[k].conj()).norm())
            .fold(0.0, f64::max)
            / scale
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|z| z.re == 0.0 && z.im == 0.0)
    }

    pub fn map(&self, f: impl Fn(f64, Complex64) -> Complex64) -> Self {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(k, &z)| f(self.grid.node(k), z))
            .collect();
        Self::from_parts(self.grid, values, false)
    }

    pub fn conj(&self) -> Self {
        let values = self.values.iter().map(|z| z.conj()).collect();
        Self::from_parts(self.grid, values, false)
    }

    /// `ξ ↦ v(-ξ)`.
    pub fn reflect(&self) -> Self {
        let mut values = self.values.clone();
        values.reverse();
        Self::from_parts(self.grid, values, self.real_physical)
    }

    pub fn scale(&self, c: Complex64) -> Self {
        let values = self.values.iter().map(|&z| c * z).collect();
        Self::from_parts(self.grid, values, self.real_physical && c.im == 0.0)
    }

    pub fn check_same_grid(&self, other: &GridFunction) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!("{:?} vs {:?}", self.grid, other.grid)));
        }
        Ok(())
    }

    /// `self + c·other`.
    pub fn axpy(&self, c: Complex64, other: &GridFunction) -> Result<Self> {
        self.check_same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a + c * b)
            .collect();
        Ok(Self::from_parts(
            self.grid,
            values,
            self.real_physical && other.real_physical && c.im == 0.0,
        ))
    }

    /// Offsets of nonzero samples, ascending.
    pub fn support_offsets(&self) -> Vec<i64> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, z)| z.re != 0.0 || z.im != 0.0)
            .map(|(k, _)| self.grid.offset(k))
            .collect()
    }
}

impl Add for &GridFunction {
    type Output = GridFunction;

    fn add(self, rhs: &GridFunction) -> GridFunction {
        self.axpy(Complex64::new(1.0, 0.0), rhs)
            .expect("adding grid functions on different grids")
    }
}

impl Sub for &GridFunction {
    type Output = GridFunction;

    fn sub(self, rhs: &GridFunction) -> GridFunction {
        self.axpy(Complex64::new(-1.0, 0.0), rhs)
            .expect("subtracting grid functions on different grids")
    }
}

impl Mul<f64> for &GridFunction {
    type Output = GridFunction;

    fn mul(self, c: f64) -> GridFunction {
        self.scale(Complex64::new(c, 0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlExponent {
    One,
    Infinity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NormKind {
    Sobolev(f64),
    FourierLebesgue(FlExponent),
    L2,
}

/// Discrete `H^s` norm `(Σ_k ⟨ξ_k⟩^{2s} |f_k|² dxi)^{1/2}`.
pub fn sobolev_norm(f: &GridFunction, s: f64) -> f64 {
    let g = f.grid();
    let sum: f64 = f
        .values()
        .iter()
        .enumerate()
        .map(|(k, z)| {
            let w = if s == 0.0 {
                1.0
            } else {
                japanese(g.node(k)).powf(2.0 * s)
            };
            w * z.norm_sqr()
        })
        .sum();
    (sum * g.dxi()).sqrt()
}

pub fn l2_norm(f: &GridFunction) -> f64 {
    sobolev_norm(f, 0.0)
}

/// Fourier–Lebesgue norm: `p = ∞` is the max modulus, `p = 1` the rectangle-rule L¹ norm.
pub fn fl_norm(f: &GridFunction, p: FlExponent) -> f64 {
    match p {
        FlExponent::Infinity => f.values().iter().map(|z| z.norm()).fold(0.0, f64::max),
        FlExponent::One => f.values().iter().map(|z| z.norm()).sum::<f64>() * f.grid().dxi(),
    }
}

pub fn norm(f: &GridFunction, kind: NormKind) -> f64 {
    match kind {
        NormKind::Sobolev(s) => sobolev_norm(f, s),
        NormKind::FourierLebesgue(p) => fl_norm(f, p),
        NormKind::L2 => l2_norm(f),
    }
}

pub(crate) fn is_dyadic(n: f64) -> bool {
    n.is_finite() && n >= 1.0 && {
        let e = n.log2().round();
        (2f64.powf(e) - n).abs() == 0.0
    }
}

/// Littlewood–Paley projector: `N = 1` keeps `|ξ| < 2`, `N ≥ 2` keeps `N ≤ |ξ| < 2N`.
pub fn littlewood_paley(f: &GridFunction, n_dyadic: f64) -> Result<GridFunction> {
    if !is_dyadic(n_dyadic) {
        return Err(Error::InvalidArgument(format!(
            "Littlewood-Paley level must be a power of two >= 1, got {n_dyadic}"
        )));
    }
    let keep = |xi: f64| {
        let a = xi.abs();
        if n_dyadic == 1.0 {
            a < 2.0
        } else {
            n_dyadic <= a && a < 2.0 * n_dyadic
        }
    };
    let mut out = f.map(|xi, z| if keep(xi) { z } else { Complex64::new(0.0, 0.0) });
    out.set_real_physical(f.is_real_physical());
    Ok(out)
}

/// Dyadic levels `1, 2, 4, …` whose shells cover the whole grid.
pub fn dyadic_levels(grid: &FrequencyGrid) -> Vec<f64> {
    let mut levels = vec![1.0];
    let mut n = 2.0;
    while n <= grid.xi_max() {
        levels.push(n);
        n *= 2.0;
    }
    levels
}

/// Restriction to `ξ ∈ [k, k+1)`.
pub fn unit_interval_project(f: &GridFunction, k: i64) -> GridFunction {
    let lo = k as f64;
    let hi = lo + 1.0;
    f.map(|xi, z| {
        if lo <= xi && xi < hi {
            z
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SnapshotSidecar {
    xi_max: f64,
    n: usize,
    real_physical: bool,
}

fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes `xi,re,im` rows (17 significant digits) and the `{xi_max, n, real_physical}` sidecar.
pub fn write_snapshot(f: &GridFunction, csv_path: &Path) -> Result<()> {
    let mut out = String::with_capacity(64 * f.grid().n());
    out.push_str("xi,re,im\n");
    for (k, z) in f.values().iter().enumerate() {
        out.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", f.grid().node(k), z.re, z.im));
    }
    let mut file = fs::File::create(csv_path)?;
    file.write_all(out.as_bytes())?;
    let sidecar = SnapshotSidecar {
        xi_max: f.grid().xi_max(),
        n: f.grid().n(),
        real_physical: f.is_real_physical(),
    };
    fs::write(sidecar_path(csv_path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn read_snapshot(csv_path: &Path) -> Result<GridFunction> {
    let sidecar: SnapshotSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(csv_path))?)?;
    let grid = FrequencyGrid::new(sidecar.xi_max, sidecar.n)?;
    let mut reader = csv::Reader::from_path(csv_path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["xi", "re", "im"] {
        return Err(Error::InvalidInput(format!("unexpected snapshot header {headers:?}")));
    }
    let mut values = Vec::with_capacity(grid.n());
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::InvalidInput(format!("bad number in row {k}, column {i}")))
        };
        let xi = parse(0)?;
        if k >= grid.n() || (xi - grid.node(k)).abs() > 1e-9 * grid.dxi() {
            return Err(Error::GridMismatch(format!("row {k} has xi = {xi}")));
        }
        values.push(Complex64::new(parse(1)?, parse(2)?));
    }
    let f = GridFunction::new(grid, values)?;
    if sidecar.real_physical {
        f.into_real_physical()
    } else {
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn grid_is_symmetric_with_zero_node() {
        let g = FrequencyGrid::new(4.0, 9).unwrap();
        assert_eq!(g.dxi(), 1.0);
        assert_eq!(g.node(g.center()), 0.0);
        assert_eq!(g.node(0), -4.0);
        assert_eq!(g.node(8), 4.0);
        for k in 0..9 {
            assert_eq!(g.node(k), -g.node(8 - k));
        }
        assert!(FrequencyGrid::new(4.0, 10).is_err());
        assert!(FrequencyGrid::new(-1.0, 9).is_err());
    }

    #[test]
    fn snapping_accepts_half_spacing() {
        let g = FrequencyGrid::new(4.0, 9).unwrap();
        assert_eq!(g.snap(1.4), Some(5));
        assert_eq!(g.snap(-4.0), Some(0));
        assert_eq!(g.snap(4.6), None);
    }

    #[test]
    fn norms_of_trivial_functions() {
        let g = FrequencyGrid::new(8.0, 33).unwrap();
        let zero = GridFunction::zeros(g);
        assert_eq!(sobolev_norm(&zero, 1.3), 0.0);
        assert_eq!(fl_norm(&zero, FlExponent::One), 0.0);
        assert_eq!(fl_norm(&zero, FlExponent::Infinity), 0.0);

        let mut vals = vec![c(0.0); 33];
        vals[g.center()] = c(1.0);
        let delta = GridFunction::new(g, vals).unwrap();
        for s in [0.0, 0.5, 2.0, -1.0] {
            assert!((sobolev_norm(&delta, s) - g.dxi().sqrt()).abs() < 1e-15);
        }

        let mut vals = vec![c(0.0); 33];
        vals[3] = Complex64::new(3.0, 4.0);
        let f = GridFunction::new(g, vals).unwrap();
        assert_eq!(fl_norm(&f, FlExponent::Infinity), 5.0);
        assert_eq!(norm(&f, NormKind::L2), sobolev_norm(&f, 0.0));
    }

    #[test]
    fn fl1_of_unit_indicator_counts_bins() {
        let g = FrequencyGrid::new(8.0, 161).unwrap();
        let f = GridFunction::from_fn(g, |xi| c(if (0.0..=1.0).contains(&xi) { 1.0 } else { 0.0 })).unwrap();
        let bins = g.nodes().iter().filter(|x| (0.0..=1.0).contains(*x)).count();
        let v = fl_norm(&f, FlExponent::One);
        assert_eq!(v, bins as f64 * g.dxi());
        assert!((v - 1.0).abs() <= g.dxi() + 1e-12);
    }

    #[test]
    fn gaussian_l2_matches_refined_trapezoid() {
        // Independent oracle: Richardson-extrapolated trapezoid for ∫ e^{-2ξ²} dξ
        // on [-16, 16]; the exact value is (π/2)^{1/2}.
        let trap = |m: usize| {
            let h = 32.0 / m as f64;
            let mut s = 0.0;
            for i in 0..=m {
                let x = -16.0 + i as f64 * h;
                let w = if i == 0 || i == m { 0.5 } else { 1.0 };
                s += w * (-2.0 * x * x).exp();
            }
            s * h
        };
        let (t1, t2) = (trap(2048), trap(4096));
        let oracle = ((4.0 * t2 - t1) / 3.0).sqrt();
        assert!((oracle - (std::f64::consts::PI / 2.0).sqrt().sqrt()).abs() < 1e-13);

        let g = FrequencyGrid::new(16.0, 4097).unwrap();
        let f = GridFunction::from_fn(g, |xi| c((-xi * xi).exp())).unwrap();
        assert!((sobolev_norm(&f, 0.0) - oracle).abs() < 1e-12);
    }

    #[test]
    fn littlewood_paley_shells() {
        let g = FrequencyGrid::new(16.0, 129).unwrap();
        let ones = GridFunction::from_fn(g, |_| c(1.0)).unwrap();
        let p1 = littlewood_paley(&ones, 1.0).unwrap();
        for (k, z) in p1.values().iter().enumerate() {
            assert_eq!(z.re, if g.node(k).abs() < 2.0 { 1.0 } else { 0.0 });
        }
        assert!(littlewood_paley(&ones, 3.0).is_err());
        assert!(littlewood_paley(&ones, 0.5).is_err());

        let ind = GridFunction::from_fn(g, |xi| c(if (3.0..=9.0).contains(&xi) { 1.0 } else { 0.0 })).unwrap();
        let p4 = littlewood_paley(&ind, 4.0).unwrap();
        for (k, z) in p4.values().iter().enumerate() {
            let xi = g.node(k);
            assert_eq!(z.re, if (4.0..8.0).contains(&xi) { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn unit_interval_projection_of_gaussian() {
        let g = FrequencyGrid::new(8.0, 65).unwrap();
        let f = GridFunction::from_fn(g, |xi| c((-xi * xi).exp())).unwrap();
        let p = unit_interval_project(&f, 3);
        for (k, z) in p.values().iter().enumerate() {
            let xi = g.node(k);
            let expect = if (3.0..4.0).contains(&xi) {
                (-xi * xi).exp()
            } else {
                0.0
            };
            assert_eq!(z.re, expect);
        }
    }

    #[test]
    fn non_finite_samples_rejected() {
        let g = FrequencyGrid::new(1.0, 3).unwrap();
        assert!(GridFunction::new(g, vec![c(0.0), c(f64::NAN), c(0.0)]).is_err());
        assert!(GridFunction::new(g, vec![c(0.0)]).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = FrequencyGrid::new(3.0, 13).unwrap();
        let f = GridFunction::from_fn(g, |xi| Complex64::new((-xi * xi).exp(), 0.0))
            .unwrap()
            .into_real_physical()
            .unwrap();
        let path = dir.path().join("v.csv");
        write_snapshot(&f, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("xi,re,im\n"));
        let back = read_snapshot(&path).unwrap();
        assert_eq!(back, f);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_function() -> impl Strategy<Value = GridFunction> {
            prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 33).prop_map(|pairs| {
                let g = FrequencyGrid::new(12.0, 33).unwrap();
                GridFunction::new(g, pairs.into_iter().map(|(a, b)| Complex64::new(a, b)).collect()).unwrap()
            })
        }

        proptest! {
            #[test]
            fn sobolev_norm_monotone_in_s(f in arb_function(), s in -2.0f64..2.0, ds in 0.0f64..2.0) {
                prop_assert!(sobolev_norm(&f, s) <= sobolev_norm(&f, s + ds) * (1.0 + 1e-14));
            }

            #[test]
            fn fl_inf_is_max_modulus(f in arb_function()) {
                let m = f.values().iter().map(|z| z.norm()).fold(0.0, f64::max);
                prop_assert_eq!(fl_norm(&f, FlExponent::Infinity), m);
            }

            #[test]
            fn projectors_partition_and_are_idempotent(f in arb_function()) {
                let mut total = GridFunction::zeros(*f.grid());
                for n in dyadic_levels(f.grid()) {
                    let p = littlewood_paley(&f, n).unwrap();
                    prop_assert_eq!(littlewood_paley(&p, n).unwrap(), p.clone());
                    total = &total + &p;
                }
                prop_assert_eq!(total.values(), f.values());

                let mut total = GridFunction::zeros(*f.grid());
                for k in -13..13 {
                    total = &total + &unit_interval_project(&f, k);
                }
                prop_assert_eq!(total.values(), f.values());
            }
        }
    }
}
