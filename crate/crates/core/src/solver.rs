//! Fixed-point solution of the normal form equation, a reference integrator of
//! the interaction equation, and the comparisons between the two.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dispersion::Equation;
use crate::error::{Error, Result};
use crate::grid::{fl_norm, sobolev_norm, write_snapshot, FlExponent, FrequencyGrid, GridFunction};
use crate::nf_engine::{boundary_evaluation, remainder_evaluation, resonant_evaluation, ReductionConfig};
use crate::trilinear::{apply, TrilinearSpec};

/// Smallest admissible time mesh.
pub const MIN_TIME_POINTS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: FrequencyGrid,
    times: Vec<f64>,
    states: Vec<GridFunction>,
    s: f64,
    hs_norms: Vec<f64>,
    flinf_norms: Vec<f64>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<GridFunction>, s: f64) -> Result<Self> {
        if times.is_empty() || times.len() != states.len() {
            return Err(Error::MeshMismatch(format!(
                "{} times for {} states",
                times.len(),
                states.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::MeshMismatch(
                "times must be finite and strictly increasing".into(),
            ));
        }
        let grid = *states[0].grid();
        for st in &states {
            st.check_same_grid(&states[0])?;
        }
        let hs_norms = states.iter().map(|f| sobolev_norm(f, s)).collect();
        let flinf_norms = states.iter().map(|f| fl_norm(f, FlExponent::Infinity)).collect();
        Ok(Self {
            grid,
            times,
            states,
            s,
            hs_norms,
            flinf_norms,
        })
    }

    /// The constant trajectory `v(t) = f` on `times`.
    pub fn constant(f: &GridFunction, times: Vec<f64>, s: f64) -> Result<Self> {
        let states = vec![f.clone(); times.len()];
        Self::new(times, states, s)
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[GridFunction] {
        &self.states
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn hs_norms(&self) -> &[f64] {
        &self.hs_norms
    }

    pub fn flinf_norms(&self) -> &[f64] {
        &self.flinf_norms
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &GridFunction {
        self.states.last().expect("non-empty")
    }

    /// `sup_t ‖self − other‖_{H^s}` over a shared mesh.
    pub fn distance(&self, other: &Trajectory) -> Result<f64> {
        Ok(self.distance_curve(other)?.into_iter().fold(0.0, f64::max))
    }

    /// `‖self(t) − other(t)‖_{H^s}` per mesh time.
    pub fn distance_curve(&self, other: &Trajectory) -> Result<Vec<f64>> {
        self.check_mesh(other)?;
        Ok(self
            .states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| sobolev_norm(&(a - b), self.s))
            .collect())
    }

    fn check_mesh(&self, other: &Trajectory) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!("{:?} vs {:?}", self.grid, other.grid)));
        }
        let same = self.times.len() == other.times.len()
            && self
                .times
                .iter()
                .zip(&other.times)
                .all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(1.0));
        if !same {
            return Err(Error::MeshMismatch(format!(
                "{} vs {} time points",
                self.times.len(),
                other.times.len()
            )));
        }
        Ok(())
    }
}

/// Uniform mesh of `n_t` points on `[0, T]`.
pub fn time_mesh(t_final: f64, n_t: usize) -> Result<Vec<f64>> {
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidArgument(format!("T must be positive, got {t_final}")));
    }
    if n_t < MIN_TIME_POINTS {
        return Err(Error::InvalidArgument(format!(
            "the time mesh needs at least {MIN_TIME_POINTS} points, got {n_t}"
        )));
    }
    let h = t_final / (n_t - 1) as f64;
    Ok((0..n_t)
        .map(|i| if i + 1 == n_t { t_final } else { i as f64 * h })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub reduction: ReductionConfig,
    pub t_final: f64,
    pub n_t: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Calibration constant of the parameter selection rule.
    pub c_hat: f64,
    pub kappa: f64,
    /// Reference integrator steps per mesh interval.
    pub ref_substeps: usize,
    /// Mesh points used to integrate the truncation tail in error budgets.
    pub tail_points: usize,
}

impl SolverConfig {
    pub fn new(reduction: ReductionConfig, t_final: f64) -> Self {
        Self {
            reduction,
            t_final,
            n_t: MIN_TIME_POINTS,
            tol: 1e-8,
            max_iter: 20,
            c_hat: 1.0,
            kappa: 0.1,
            ref_substeps: 4,
            tail_points: 17,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.reduction.validate()?;
        time_mesh(self.t_final, self.n_t)?;
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidArgument(
                "tol must be positive and max_iter nonzero".into(),
            ));
        }
        if !(self.c_hat > 0.0 && self.kappa > 0.0) {
            return Err(Error::InvalidArgument("c_hat and kappa must be positive".into()));
        }
        if self.ref_substeps == 0 || self.tail_points < 2 {
            return Err(Error::InvalidArgument(
                "ref_substeps must be nonzero and tail_points at least 2".into(),
            ));
        }
        Ok(())
    }

    pub fn mesh(&self) -> Result<Vec<f64>> {
        time_mesh(self.t_final, self.n_t)
    }

    /// Replaces `N` and `T` by the selection rule for a datum of size `R = 1 + ‖u₀‖_{H^s}`.
    pub fn with_picked_parameters(mut self, u0: &GridFunction) -> Result<Self> {
        let r = 1.0 + sobolev_norm(u0, self.reduction.s);
        let (n, t) = pick_parameters(r, &self.reduction, self.c_hat, self.kappa, self.t_final)?;
        self.reduction.n = n;
        self.t_final = t;
        Ok(self)
    }
}

/// `N`: smallest dyadic `≥ 2` with `Ĉ N^{−1/2+δ/2+ε} (2R)⁴ ≤ 1/2`;
/// `T = min(T_user, κ / (N^{1/2+ε} (2R)²))`.
pub fn pick_parameters(r: f64, cfg: &ReductionConfig, c_hat: f64, kappa: f64, t_user: f64) -> Result<(f64, f64)> {
    if !r.is_finite() {
        return Err(Error::InvalidArgument(format!("R must be finite, got {r}")));
    }
    if r < 1.0 {
        return Err(Error::InvalidArgument(format!("R must be at least 1, got {r}")));
    }
    if !(c_hat > 0.0 && c_hat.is_finite() && kappa > 0.0 && t_user > 0.0) {
        return Err(Error::InvalidArgument("c_hat, kappa and T must be positive".into()));
    }
    let exponent = -0.5 + cfg.delta / 2.0 + cfg.eps;
    if exponent >= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "the selection rule needs δ/2 + ε < 1/2 (δ = {}, ε = {})",
            cfg.delta, cfg.eps
        )));
    }
    let growth = (2.0 * r).powi(4);
    let mut n = 2.0f64;
    while c_hat * n.powf(exponent) * growth > 0.5 {
        n *= 2.0;
        if n > 2f64.powi(1000) {
            return Err(Error::ResourceLimit("no admissible N below 2^1000".into()));
        }
    }
    let t = t_user.min(kappa / (n.powf(0.5 + cfg.eps) * (2.0 * r).powi(2)));
    Ok((n, t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    pub final_residual: f64,
    /// `C_T H^s` distance of successive iterates, one per iteration.
    pub residuals: Vec<f64>,
    pub n: f64,
    pub t_final: f64,
    pub j_max: usize,
    /// `C_T H^s` size of the sampling standard error of the last iterate (0 when dense).
    pub sampling_error: f64,
    /// Richardson estimate of the time-quadrature error of the last iterate.
    pub quadrature_error: f64,
}

/// One application of the normal form map, with the error indicators that
/// come with it.
#[derive(Debug, Clone)]
pub struct GammaOutput {
    pub trajectory: Trajectory,
    /// `H^s` size of the sampling standard error, per mesh time.
    pub sampling_error: Vec<f64>,
    /// Cumulative resonant integral on the coarse mesh minus the fine one,
    /// divided by 3, per even mesh index.
    pub quadrature_error: Vec<f64>,
}

fn hs_of_errors(grid: FrequencyGrid, se: &[f64], s: f64) -> f64 {
    let f = GridFunction::new(grid, se.iter().map(|&e| Complex64::new(e, 0.0)).collect()).expect("finite");
    sobolev_norm(&f, s)
}

fn add_errors(acc: &mut [f64], other: &[f64]) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a = a.hypot(*b);
    }
}

/// Boundary sum `Σ_{j=2}^{J+1} 𝒩₀^{(j)}(v)(t)` and its standard errors.
fn boundary_sum(v: &GridFunction, cfg: &ReductionConfig, t: f64) -> Result<(GridFunction, Vec<f64>)> {
    let mut total = GridFunction::zeros(*v.grid());
    let mut se = vec![0.0; v.grid().n()];
    for j in 2..=cfg.j_max + 1 {
        let e = boundary_evaluation(v, j, cfg, t)?;
        total = &total + &e.value;
        add_errors(&mut se, &e.std_error);
    }
    Ok((total, se))
}

/// Resonant sum `Σ_{j=1}^{J+1} 𝒩₁^{(j)}(v)(t)` and its standard errors.
fn resonant_sum(v: &GridFunction, cfg: &ReductionConfig, t: f64) -> Result<(GridFunction, Vec<f64>)> {
    let mut total = GridFunction::zeros(*v.grid());
    let mut se = vec![0.0; v.grid().n()];
    for j in 1..=cfg.j_max + 1 {
        let e = resonant_evaluation(v, j, cfg, t)?;
        total = &total + &e.value;
        add_errors(&mut se, &e.std_error);
    }
    Ok((total, se))
}

/// Cumulative trapezoid `∫₀^{t_i} f` on a (possibly non-uniform) mesh.
pub fn cumulative_trapezoid(times: &[f64], f: &[GridFunction]) -> Vec<GridFunction> {
    let mut out = Vec::with_capacity(f.len());
    out.push(GridFunction::zeros(*f[0].grid()));
    for i in 1..f.len() {
        let h = times[i] - times[i - 1];
        let incr = &(&f[i - 1] + &f[i]) * (h / 2.0);
        let next = &out[i - 1] + &incr;
        out.push(next);
    }
    out
}

/// `Γ_{u₀}(v)(t) = u₀ + Σ_j [𝒩₀^{(j)}(v(t), t) − 𝒩₀^{(j)}(u₀, 0)] + ∫₀ᵗ Σ_j 𝒩₁^{(j)}(v(t'), t') dt'`,
/// boundary terms for `2 ≤ j ≤ J+1` and resonant terms for `1 ≤ j ≤ J+1`.
pub fn gamma_map(v: &Trajectory, u0: &GridFunction, cfg: &ReductionConfig) -> Result<Trajectory> {
    Ok(gamma_map_detailed(v, u0, cfg)?.trajectory)
}

pub fn gamma_map_detailed(v: &Trajectory, u0: &GridFunction, cfg: &ReductionConfig) -> Result<GammaOutput> {
    cfg.validate()?;
    if v.grid() != u0.grid() {
        return Err(Error::MeshMismatch(format!(
            "trajectory grid {:?} vs datum grid {:?}",
            v.grid(),
            u0.grid()
        )));
    }
    if v.times()[0] != 0.0 {
        return Err(Error::MeshMismatch("the time mesh must start at t = 0".into()));
    }
    let grid = *u0.grid();
    let s = v.s();
    let times = v.times();
    let (b0, b0_se) = boundary_sum(u0, cfg, 0.0)?;
    let mut boundary = Vec::with_capacity(times.len());
    let mut resonant = Vec::with_capacity(times.len());
    let mut sampling = Vec::with_capacity(times.len());
    let mut res_se = Vec::with_capacity(times.len());
    for (&t, vt) in times.iter().zip(v.states()) {
        let (b, bse) = boundary_sum(vt, cfg, t)?;
        let (r, rse) = resonant_sum(vt, cfg, t)?;
        boundary.push(b);
        resonant.push(r);
        let mut se = bse;
        add_errors(&mut se, &b0_se);
        sampling.push(se);
        res_se.push(rse);
    }
    let integral = cumulative_trapezoid(times, &resonant);
    let mut states = Vec::with_capacity(times.len());
    states.push(u0.clone());
    for i in 1..times.len() {
        let bracket = &boundary[i] - &b0;
        states.push(&(u0 + &bracket) + &integral[i]);
    }
    // Standard errors of the integral accumulate like the trapezoid itself.
    let mut acc = vec![0.0; grid.n()];
    let mut sampling_error = vec![0.0];
    for i in 1..times.len() {
        let h = times[i] - times[i - 1];
        for (k, a) in acc.iter_mut().enumerate() {
            *a += h / 2.0 * (res_se[i - 1][k] + res_se[i][k]);
        }
        let mut se = sampling[i].clone();
        add_errors(&mut se, &acc);
        sampling_error.push(hs_of_errors(grid, &se, s));
    }
    let coarse_idx: Vec<usize> = (0..times.len()).step_by(2).collect();
    let coarse_times: Vec<f64> = coarse_idx.iter().map(|&i| times[i]).collect();
    let coarse_vals: Vec<GridFunction> = coarse_idx.iter().map(|&i| resonant[i].clone()).collect();
    let coarse = cumulative_trapezoid(&coarse_times, &coarse_vals);
    let quadrature_error = coarse_idx
        .iter()
        .zip(&coarse)
        .map(|(&i, c)| sobolev_norm(&(c - &integral[i]), s) / 3.0)
        .collect();
    Ok(GammaOutput {
        trajectory: Trajectory::new(times.to_vec(), states, s)?,
        sampling_error,
        quadrature_error,
    })
}

/// Picard iteration of [`gamma_map`] from `v⁰ ≡ u₀` on the mesh of `cfg`.
pub fn solve_normal_form(u0: &GridFunction, cfg: &SolverConfig) -> Result<(Trajectory, SolveReport)> {
    cfg.validate()?;
    let s = cfg.reduction.s;
    let mut v = Trajectory::constant(u0, cfg.mesh()?, s)?;
    let mut residuals = Vec::new();
    let mut growth_streak = 0;
    let mut last = None;
    for it in 1..=cfg.max_iter {
        let out = gamma_map_detailed(&v, u0, &cfg.reduction)?;
        let residual = out.trajectory.distance(&v)?;
        if let Some(&prev) = residuals.last() {
            if residual > prev {
                growth_streak += 1;
            } else {
                growth_streak = 0;
            }
        }
        residuals.push(residual);
        if !residual.is_finite() || growth_streak >= 3 {
            return Err(Error::NoContraction {
                iterations: it,
                residuals,
            });
        }
        v = out.trajectory.clone();
        last = Some(out);
        if residual < cfg.tol {
            break;
        }
    }
    let last = last.expect("at least one iteration");
    let final_residual = *residuals.last().expect("non-empty");
    let report = SolveReport {
        converged: final_residual < cfg.tol,
        iterations: residuals.len(),
        final_residual,
        residuals,
        n: cfg.reduction.n,
        t_final: cfg.t_final,
        j_max: cfg.reduction.j_max,
        sampling_error: last.sampling_error.iter().copied().fold(0.0, f64::max),
        quadrature_error: last.quadrature_error.iter().copied().fold(0.0, f64::max),
    };
    Ok((v, report))
}

/// Right-hand side `∂_t v = 𝒩(v)(t)` of the interaction equation.
fn interaction_field(v: &GridFunction, eq: Equation, t: f64, strength: f64) -> Result<GridFunction> {
    if strength == 0.0 {
        let mut z = GridFunction::zeros(*v.grid());
        if v.is_real_physical() {
            z = z.into_real_physical()?;
        }
        return Ok(z);
    }
    let f = apply(&TrilinearSpec::nonlinearity(eq, t), v, v, v)?;
    Ok(if strength == 1.0 { f } else { &f * strength })
}

fn rk4_step(v: &GridFunction, eq: Equation, t: f64, dt: f64, strength: f64) -> Result<GridFunction> {
    let k1 = interaction_field(v, eq, t, strength)?;
    let k2 = interaction_field(&(v + &(&k1 * (dt / 2.0))), eq, t + dt / 2.0, strength)?;
    let k3 = interaction_field(&(v + &(&k2 * (dt / 2.0))), eq, t + dt / 2.0, strength)?;
    let k4 = interaction_field(&(v + &(&k3 * dt)), eq, t + dt, strength)?;
    let incr = &(&(&k1 + &(&k2 * 2.0)) + &(&(&k3 * 2.0) + &k4)) * (dt / 6.0);
    Ok(v + &incr)
}

/// Classical RK4 for `∂_t v̂ = 𝒩(v)(·, t)` with the unrestricted kernel,
/// recording every step.
pub fn reference_solve(u0: &GridFunction, eq: Equation, t_final: f64, dt: f64, s: f64) -> Result<Trajectory> {
    if !(dt > 0.0 && dt.is_finite()) || !(t_final > 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "need dt > 0 and T > 0, got dt = {dt}, T = {t_final}"
        )));
    }
    let steps = (t_final / dt).ceil().max(1.0) as usize;
    let times: Vec<f64> = (0..=steps).map(|k| t_final * k as f64 / steps as f64).collect();
    reference_on_mesh(u0, eq, &times, 1, s, 1.0)
}

/// RK4 on `times` with `substeps` equal steps per interval; `strength` scales the nonlinearity.
pub fn reference_on_mesh(
    u0: &GridFunction,
    eq: Equation,
    times: &[f64],
    substeps: usize,
    s: f64,
    strength: f64,
) -> Result<Trajectory> {
    if substeps == 0 || times.len() < 2 {
        return Err(Error::InvalidArgument("need at least two times and one substep".into()));
    }
    let mut v = u0.clone();
    let mut states = vec![v.clone()];
    for w in times.windows(2) {
        let dt = (w[1] - w[0]) / substeps as f64;
        for k in 0..substeps {
            let t = w[0] + k as f64 * dt;
            let next = rk4_step(&v, eq, t, dt, strength)?;
            let (before, after) = (sobolev_norm(&v, 0.0), sobolev_norm(&next, 0.0));
            if !after.is_finite() || (before > 0.0 && after > 10.0 * before) {
                return Err(Error::Blowup {
                    time: t + dt,
                    before,
                    after,
                });
            }
            v = next;
        }
        states.push(v.clone());
    }
    Trajectory::new(times.to_vec(), states, s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    /// `sup_t ‖∫₀ᵗ 𝒩₂^{(J+1)}(v_nf)‖_{H^s}` by trapezoid on a sub-mesh.
    pub truncation_tail: f64,
    /// Richardson estimate of the resonant time quadrature error.
    pub quadrature: f64,
    /// Reference integrator error, `sup_t ‖v_dt − v_{dt/2}‖_{H^s} / 15`.
    pub time_integration: f64,
    /// Picard stopping error, twice the final residual.
    pub picard: f64,
    /// Three standard errors of the sampled terms (0 when dense).
    pub sampling: f64,
    /// Estimated Picard contraction factor, capped at 0.9.
    pub contraction: f64,
    /// Perturbations of the fixed-point map are amplified by `1 / (1 − contraction)`.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub times: Vec<f64>,
    /// `‖v_nf(t) − v_ref(t)‖_{H^s}` per mesh time.
    pub discrepancy: Vec<f64>,
    pub max_discrepancy: f64,
    pub budget: ErrorBudget,
    pub solve: SolveReport,
    /// Largest datum modulus outside `|ξ| ≤ xi_max/3`, relative to its maximum.
    pub aliasing_tail: f64,
}

impl ComparisonReport {
    pub fn within_budget(&self) -> bool {
        self.max_discrepancy <= self.budget.total
    }
}

fn aliasing_tail(u0: &GridFunction) -> f64 {
    let grid = u0.grid();
    let max = fl_norm(u0, FlExponent::Infinity);
    if max == 0.0 {
        return 0.0;
    }
    let cut = grid.xi_max() / 3.0;
    grid.nodes()
        .iter()
        .zip(u0.values())
        .filter(|(xi, _)| xi.abs() > cut)
        .map(|(_, z)| z.norm())
        .fold(0.0, f64::max)
        / max
}

/// `sup_t ‖∫₀ᵗ 𝒩₂^{(J+1)}(v(t'), t') dt'‖_{H^s}` on `points` mesh times.
pub fn truncation_tail(v: &Trajectory, cfg: &ReductionConfig, points: usize) -> Result<f64> {
    let n = v.len();
    let mut idx: Vec<usize> = (0..points)
        .map(|k| ((k as f64) * (n - 1) as f64 / (points - 1) as f64).round() as usize)
        .collect();
    idx.dedup();
    let times: Vec<f64> = idx.iter().map(|&i| v.times()[i]).collect();
    let vals = idx
        .iter()
        .map(|&i| remainder_evaluation(&v.states()[i], cfg.j_max, cfg, v.times()[i]).map(|e| e.value))
        .collect::<Result<Vec<_>>>()?;
    Ok(cumulative_trapezoid(&times, &vals)
        .iter()
        .map(|f| sobolev_norm(f, v.s()))
        .fold(0.0, f64::max))
}

/// Largest ratio of successive Picard residuals after the first step, capped at 0.9.
pub fn contraction_estimate(residuals: &[f64]) -> f64 {
    residuals
        .windows(2)
        .skip(1)
        .filter(|w| w[0] > 0.0 && w[1] > 0.0)
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max)
        .min(0.9)
}

/// Reference solutions on the mesh of `cfg` with `ref_substeps` and twice as
/// many steps per interval.
pub fn reference_pair(u0: &GridFunction, cfg: &SolverConfig) -> Result<(Trajectory, Trajectory)> {
    cfg.validate()?;
    let eq = cfg.reduction.equation;
    let s = cfg.reduction.s;
    let times = cfg.mesh()?;
    let coarse = reference_on_mesh(u0, eq, &times, cfg.ref_substeps, s, 1.0)?;
    let fine = reference_on_mesh(u0, eq, &times, 2 * cfg.ref_substeps, s, 1.0)?;
    Ok((coarse, fine))
}

/// Normal form solution against the reference integrator on the same mesh.
pub fn compare_solutions(u0: &GridFunction, cfg: &SolverConfig) -> Result<(ComparisonReport, Trajectory, Trajectory)> {
    let (coarse, fine) = reference_pair(u0, cfg)?;
    let (report, nf) = compare_with_reference(u0, cfg, &coarse, &fine)?;
    Ok((report, nf, fine))
}

/// As [`compare_solutions`] with precomputed references from [`reference_pair`].
pub fn compare_with_reference(
    u0: &GridFunction,
    cfg: &SolverConfig,
    coarse: &Trajectory,
    fine: &Trajectory,
) -> Result<(ComparisonReport, Trajectory)> {
    let (nf, solve) = solve_normal_form(u0, cfg)?;
    let times = nf.times().to_vec();
    let discrepancy = nf.distance_curve(fine)?;
    let max_discrepancy = discrepancy.iter().copied().fold(0.0, f64::max);
    let truncation = if u0.is_zero() {
        0.0
    } else {
        truncation_tail(&nf, &cfg.reduction, cfg.tail_points)?
    };
    let time_integration = coarse.distance(fine)? / 15.0;
    let picard = 2.0 * solve.final_residual;
    let sampling = 3.0 * solve.sampling_error;
    let quadrature = solve.quadrature_error;
    let q = contraction_estimate(&solve.residuals);
    let budget = ErrorBudget {
        truncation_tail: truncation,
        quadrature,
        time_integration,
        picard,
        sampling,
        contraction: q,
        total: (truncation + quadrature + sampling) / (1.0 - q) + time_integration + picard,
    };
    let report = ComparisonReport {
        times,
        discrepancy,
        max_discrepancy,
        budget,
        solve,
        aliasing_tail: aliasing_tail(u0),
    };
    Ok((report, nf))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifferenceReport {
    /// `‖v_a − v_b‖_{C_T H^s} / ‖u0a − u0b‖_{H^s}`; 0 when the data coincide.
    pub ratio: f64,
    pub degenerate: bool,
    pub solution_distance: f64,
    pub data_distance: f64,
}

pub fn difference_experiment(u0a: &GridFunction, u0b: &GridFunction, cfg: &SolverConfig) -> Result<DifferenceReport> {
    u0a.check_same_grid(u0b)?;
    let s = cfg.reduction.s;
    let data_distance = sobolev_norm(&(u0a - u0b), s);
    if data_distance == 0.0 {
        return Ok(DifferenceReport {
            ratio: 0.0,
            degenerate: true,
            solution_distance: 0.0,
            data_distance,
        });
    }
    let (va, ra) = solve_normal_form(u0a, cfg)?;
    let (vb, rb) = solve_normal_form(u0b, cfg)?;
    for r in [&ra, &rb] {
        if !r.converged {
            return Err(Error::NoContraction {
                iterations: r.iterations,
                residuals: r.residuals.clone(),
            });
        }
    }
    let solution_distance = va.distance(&vb)?;
    Ok(DifferenceReport {
        ratio: solution_distance / data_distance,
        degenerate: false,
        solution_distance,
        data_distance,
    })
}

#[derive(Serialize)]
struct TrajectoryManifest<'a, C: Serialize, R: Serialize> {
    xi_max: f64,
    n: usize,
    s: f64,
    times: &'a [f64],
    hs_norms: &'a [f64],
    flinf_norms: &'a [f64],
    files: Vec<String>,
    config: &'a C,
    report: &'a R,
}

/// Writes `state_XXXX.csv` per mesh time plus `trajectory.json` into `dir`.
pub fn export_trajectory<C: Serialize, R: Serialize>(
    traj: &Trajectory,
    config: &C,
    report: &R,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(traj.len());
    for (i, st) in traj.states().iter().enumerate() {
        let name = format!("state_{i:04}.csv");
        write_snapshot(st, &dir.join(&name))?;
        files.push(name);
    }
    let manifest = TrajectoryManifest {
        xi_max: traj.grid().xi_max(),
        n: traj.grid().n(),
        s: traj.s(),
        times: traj.times(),
        hs_norms: traj.hs_norms(),
        flinf_norms: traj.flinf_norms(),
        files,
        config,
        report,
    };
    std::fs::write(dir.join("trajectory.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}
