//! Randomized checks of the trilinear estimates, decay-rate fits of the
//! normal form terms, and extraction of the calibration constant `Ĉ`.

use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispersion::Equation;
use crate::error::{Error, Result};
use crate::grid::{fl_norm, japanese, sobolev_norm, FlExponent, FrequencyGrid, GridFunction};
use crate::nf_engine::{boundary_evaluation, remainder_evaluation, resonant_evaluation, ReductionConfig};
use crate::trilinear::{estimate_lhs_rhs, LemmaId, LemmaParams};

/// Extra decay of sampled coefficients beyond `⟨ξ⟩^{−s−1/2}`.
pub const ETA: f64 = 0.01;

/// Random test functions with coefficients `amplitude · g(ξ) · ⟨ξ⟩^{−s_decay−1/2−η}`,
/// `g` complex standard Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleProfile {
    pub s_decay: f64,
    pub seed: u64,
    pub amplitude: f64,
    /// Symmetrize to a real-valued function in physical space.
    pub hermitian: bool,
}

impl SampleProfile {
    pub fn new(s_decay: f64, seed: u64) -> Self {
        Self {
            s_decay,
            seed,
            amplitude: 1.0,
            hermitian: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s_decay.is_finite() && self.amplitude.is_finite()) {
            return Err(Error::InvalidArgument("sample profile must be finite".into()));
        }
        Ok(())
    }
}

pub fn sample(grid: FrequencyGrid, profile: &SampleProfile) -> Result<GridFunction> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let exponent = -profile.s_decay - 0.5 - ETA;
    let values = grid
        .nodes()
        .iter()
        .map(|&xi| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re, im) * (profile.amplitude * japanese(xi).powf(exponent))
        })
        .collect();
    let f = GridFunction::new(grid, values)?;
    if profile.hermitian {
        f.hermitian_part().into_real_physical()
    } else {
        Ok(f)
    }
}

/// Least-squares line through `points`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: Vec<(f64, f64)>,
}

pub fn fit_line(points: &[(f64, f64)]) -> Result<FitResult> {
    if points.len() < 3 {
        return Err(Error::FitUndefined(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::FitUndefined("non-finite point".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::FitUndefined("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r2 = if ss_tot == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(FitResult {
        slope,
        intercept,
        r2,
        points: points.to_vec(),
    })
}

/// Fit of `ln y` against `ln x`.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> Result<FitResult> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument(
            "abscissae and ordinates differ in length".into(),
        ));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return Err(Error::FitUndefined("log-log fit needs positive values".into()));
    }
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).map(|(x, y)| (x.ln(), y.ln())).collect();
    fit_line(&pts)
}

/// One sweep of an estimate over dyadic `M` and a set of `α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaSweep {
    pub lemma: LemmaId,
    pub xi_max: f64,
    pub n: usize,
    pub m_levels: Vec<f64>,
    pub alphas: Vec<f64>,
    pub trials: usize,
    /// Sobolev index of the right-hand side.
    pub s: f64,
    /// Decay index of the sampled functions.
    pub s_decay: f64,
    pub eps: f64,
    pub seed: u64,
    pub time: f64,
    pub slot: usize,
    pub tail: bool,
}

impl LemmaSweep {
    /// Six dyadic levels `M = 4, …, 128` at `α = 0`, 100 trials on 129 nodes.
    pub fn new(lemma: LemmaId) -> Self {
        let s = match lemma {
            LemmaId::Mk1 | LemmaId::Mk2 => 0.26,
            _ => lemma.s_floor(),
        };
        Self {
            lemma,
            xi_max: 32.0,
            n: 129,
            m_levels: (2..8).map(|k| 2f64.powi(k)).collect(),
            alphas: vec![0.0],
            trials: 100,
            s,
            s_decay: s,
            eps: 0.01,
            seed: 0,
            time: 0.0,
            slot: 1,
            tail: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be positive".into()));
        }
        if self.m_levels.is_empty() || self.alphas.is_empty() {
            return Err(Error::InvalidArgument("empty sweep".into()));
        }
        for &m in &self.m_levels {
            if !(m >= 1.0) || m.log2().fract() != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "M must be dyadic and at least 1, got {m}"
                )));
            }
        }
        if !(1..=3).contains(&self.slot) {
            return Err(Error::InvalidArgument(format!(
                "slot must be 1, 2 or 3, got {}",
                self.slot
            )));
        }
        FrequencyGrid::new(self.xi_max, self.n)?;
        Ok(())
    }

    /// Bound on the fitted slope: the printed `M` exponent plus `2ε`,
    /// with the extra `1/12` for the weighted mKdV family.
    pub fn slope_bound(&self) -> f64 {
        let extra = match self.lemma {
            LemmaId::Mk1 | LemmaId::Mk2 => 1.0 / 12.0,
            _ => 0.0,
        };
        self.lemma.m_exponent() + extra + 2.0 * self.eps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaRow {
    pub lemma: String,
    pub m: f64,
    pub alpha: f64,
    /// Sup over trials of left-hand side over right-hand side.
    pub sup_ratio: f64,
    /// Sup over trials of left-hand side over the norm product.
    pub sup_scaled: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub lemma: String,
    pub rows: Vec<LemmaRow>,
    /// Fit of `ln sup_scaled` against `ln M` at the first `α`.
    pub fit: FitResult,
    pub slope_bound: f64,
    pub slope_ok: bool,
}

fn trial_functions(grid: FrequencyGrid, sweep: &LemmaSweep, trial: usize) -> Result<Vec<GridFunction>> {
    let hermitian = sweep.lemma.equation() == Equation::MKdV;
    (0..3)
        .map(|slot| {
            let profile = SampleProfile {
                s_decay: sweep.s_decay,
                seed: sweep
                    .seed
                    .wrapping_mul(0x9E37_79B9)
                    .wrapping_add((3 * trial + slot) as u64),
                amplitude: 1.0,
                hermitian,
            };
            sample(grid, &profile)
        })
        .collect()
}

/// Sup-ratio table over `(M, α)` and the log-slope fit at the first `α`.
pub fn verify_lemma(sweep: &LemmaSweep) -> Result<LemmaReport> {
    sweep.validate()?;
    let grid = FrequencyGrid::new(sweep.xi_max, sweep.n)?;
    let cells: Vec<(f64, f64)> = sweep
        .alphas
        .iter()
        .flat_map(|&a| sweep.m_levels.iter().map(move |&m| (m, a)))
        .collect();
    // Per trial: (ratio, scaled) for every cell, in cell order.
    let per_trial = (0..sweep.trials)
        .into_par_iter()
        .map(|trial| {
            let v = trial_functions(grid, sweep, trial)?;
            cells
                .iter()
                .map(|&(m, alpha)| {
                    let p = LemmaParams {
                        m,
                        alpha,
                        s: sweep.s,
                        eps: sweep.eps,
                        time: sweep.time,
                        slot: sweep.slot,
                        tail: sweep.tail,
                    };
                    let e = estimate_lhs_rhs(sweep.lemma, &p, &v)?;
                    Ok((e.ratio, e.lhs / e.norms.max(crate::trilinear::RHS_FLOOR)))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<LemmaRow> = cells
        .iter()
        .enumerate()
        .map(|(c, &(m, alpha))| LemmaRow {
            lemma: sweep.lemma.name().to_string(),
            m,
            alpha,
            sup_ratio: per_trial.iter().map(|t| t[c].0).fold(0.0, f64::max),
            sup_scaled: per_trial.iter().map(|t| t[c].1).fold(0.0, f64::max),
            trials: sweep.trials,
        })
        .collect();
    let alpha0 = sweep.alphas[0];
    let (ms, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.alpha == alpha0)
        .map(|r| (r.m, r.sup_scaled))
        .unzip();
    let fit = loglog_fit(&ms, &ys)?;
    let slope_bound = sweep.slope_bound();
    Ok(LemmaReport {
        lemma: sweep.lemma.name().to_string(),
        slope_ok: fit.slope <= slope_bound,
        rows,
        fit,
        slope_bound,
    })
}

/// Writes `lemma.csv` (`lemma,M,alpha,sup_ratio,trials`) and `fit.json` into `dir`.
pub fn write_lemma_report(report: &LemmaReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("lemma.csv"))?;
    w.write_record(["lemma", "M", "alpha", "sup_ratio", "trials"])?;
    for r in &report.rows {
        w.write_record([
            r.lemma.clone(),
            r.m.to_string(),
            r.alpha.to_string(),
            format!("{:e}", r.sup_ratio),
            r.trials.to_string(),
        ])?;
    }
    w.flush()?;
    #[derive(Serialize)]
    struct FitFile<'a> {
        lemma: &'a str,
        fit: &'a FitResult,
        slope_bound: f64,
        slope_ok: bool,
    }
    let file = FitFile {
        lemma: &report.lemma,
        fit: &report.fit,
        slope_bound: report.slope_bound,
        slope_ok: report.slope_ok,
    };
    std::fs::write(dir.join("fit.json"), serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

/// Sup-ratio of one estimate on a sequence of grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub lemma: String,
    pub grids: Vec<(f64, usize)>,
    pub sup_ratios: Vec<f64>,
    /// Strictly increasing ratios across every refinement.
    pub growing: bool,
}

/// Runs `sweep` at its first `(M, α)` on each `(xi_max, n)` of `grids`.
pub fn refinement_trend(sweep: &LemmaSweep, grids: &[(f64, usize)]) -> Result<RefinementReport> {
    if grids.len() < 2 {
        return Err(Error::InvalidArgument("need at least two grids".into()));
    }
    let mut sup_ratios = Vec::with_capacity(grids.len());
    for &(xi_max, n) in grids {
        let mut s = sweep.clone();
        s.xi_max = xi_max;
        s.n = n;
        s.m_levels.truncate(1);
        s.alphas.truncate(1);
        s.validate()?;
        let grid = FrequencyGrid::new(xi_max, n)?;
        let p = LemmaParams {
            m: s.m_levels[0],
            alpha: s.alphas[0],
            s: s.s,
            eps: s.eps,
            time: s.time,
            slot: s.slot,
            tail: s.tail,
        };
        let sup = (0..s.trials)
            .into_par_iter()
            .map(|trial| {
                let v = trial_functions(grid, &s, trial)?;
                Ok(estimate_lhs_rhs(s.lemma, &p, &v)?.ratio)
            })
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        sup_ratios.push(sup);
    }
    Ok(RefinementReport {
        lemma: sweep.lemma.name().to_string(),
        grids: grids.to_vec(),
        growing: sup_ratios.windows(2).all(|w| w[1] > w[0]),
        sup_ratios,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quantity {
    /// `𝒩₀^{(j)}`.
    Boundary,
    /// `𝒩₁^{(j)}`.
    Resonant,
    /// `𝒩₂^{(J+1)}`.
    Remainder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    N,
    J,
}

/// Predicted exponent of `N` (without the `0+`). `j` is the term index for
/// boundary and resonant terms and `J` for the remainder.
pub fn predicted_exponent(quantity: Quantity, eq: Equation, j: usize, delta: f64) -> f64 {
    let j = j as f64;
    match quantity {
        Quantity::Boundary => -(j - 1.0) / 2.0 + (j - 2.0) / 2.0 * delta,
        Quantity::Resonant if j <= 1.0 => 0.0,
        Quantity::Resonant if j == 2.0 => -delta / 2.0,
        Quantity::Resonant => -(j - 2.0) / 2.0 + (j - 3.0) / 2.0 * delta,
        Quantity::Remainder => match eq {
            Equation::CubicNLS => -j / 2.0 + (j - 1.0) / 2.0 * delta,
            Equation::MKdV => -j / 3.0 + (j - 1.0) / 3.0 * delta,
        },
    }
}

/// Size of a term: `H^s` for boundary and resonant terms, `𝓕L^∞` for the NLS
/// remainder and `sup |f(ξ)| / |ξ|^{3/4}` for the mKdV remainder.
pub fn term_size(quantity: Quantity, eq: Equation, f: &GridFunction, s: f64) -> f64 {
    match (quantity, eq) {
        (Quantity::Remainder, Equation::CubicNLS) => fl_norm(f, FlExponent::Infinity),
        (Quantity::Remainder, Equation::MKdV) => f
            .grid()
            .nodes()
            .iter()
            .zip(f.values())
            .filter(|(xi, _)| **xi != 0.0)
            .map(|(xi, z)| z.norm() / xi.abs().powf(0.75))
            .fold(0.0, f64::max),
        _ => sobolev_norm(f, s),
    }
}

pub fn evaluate_quantity(
    quantity: Quantity,
    v: &GridFunction,
    j: usize,
    cfg: &ReductionConfig,
    t: f64,
) -> Result<GridFunction> {
    Ok(match quantity {
        Quantity::Boundary => boundary_evaluation(v, j, cfg, t)?.value,
        Quantity::Resonant => resonant_evaluation(v, j, cfg, t)?.value,
        Quantity::Remainder => remainder_evaluation(v, j, cfg, t)?.value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySweep {
    pub quantity: Quantity,
    pub axis: Axis,
    /// Base configuration; `n` is replaced along the `N` axis and `j_max`
    /// is raised as needed.
    pub reduction: ReductionConfig,
    /// Term index along the `N` axis.
    pub j: usize,
    /// `N` levels or term indices, depending on the axis.
    pub values: Vec<f64>,
    pub xi_max: f64,
    pub n: usize,
    pub profile: SampleProfile,
    /// Independent samples; sizes are sups over them.
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub quantity: Quantity,
    pub axis: Axis,
    pub values: Vec<f64>,
    pub sizes: Vec<f64>,
    /// Log-log fit along `N`; `ln size` against the index along `J`.
    pub fit: FitResult,
    /// Predicted `N` exponent, or predicted slope per unit of `J`.
    pub predicted: f64,
    /// Along `N`: `|slope − predicted| ≤ 0.15`. Along `J`: negative slope.
    pub passes: bool,
}

pub const DECAY_TOLERANCE: f64 = 0.15;

pub fn decay_fit(sweep: &DecaySweep) -> Result<DecayFit> {
    if sweep.values.len() < 3 {
        return Err(Error::FitUndefined(format!(
            "need at least 3 sweep values, got {}",
            sweep.values.len()
        )));
    }
    if sweep.samples == 0 {
        return Err(Error::InvalidArgument("samples must be positive".into()));
    }
    let grid = FrequencyGrid::new(sweep.xi_max, sweep.n)?;
    let data = (0..sweep.samples as u64)
        .map(|k| {
            let mut profile = sweep.profile;
            profile.seed = profile.seed.wrapping_add(k);
            profile.hermitian |= sweep.reduction.equation == Equation::MKdV;
            sample(grid, &profile)
        })
        .collect::<Result<Vec<_>>>()?;
    let eq = sweep.reduction.equation;
    let s = sweep.reduction.s;
    let mut sizes = Vec::with_capacity(sweep.values.len());
    for &x in &sweep.values {
        let mut cfg = sweep.reduction;
        let j = match sweep.axis {
            Axis::N => {
                cfg.n = x;
                sweep.j
            }
            Axis::J => {
                if x < 1.0 || x.fract() != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "term index must be a positive integer, got {x}"
                    )));
                }
                x as usize
            }
        };
        cfg.j_max = cfg.j_max.max(j);
        let mut sup: f64 = 0.0;
        for v in &data {
            let f = evaluate_quantity(sweep.quantity, v, j, &cfg, 0.0)?;
            sup = sup.max(term_size(sweep.quantity, eq, &f, s));
        }
        sizes.push(sup);
    }
    let delta = sweep.reduction.delta;
    let (fit, predicted, passes) = match sweep.axis {
        Axis::N => {
            let fit = loglog_fit(&sweep.values, &sizes)?;
            let predicted = predicted_exponent(sweep.quantity, eq, sweep.j, delta);
            let passes = (fit.slope - predicted).abs() <= DECAY_TOLERANCE;
            (fit, predicted, passes)
        }
        Axis::J => {
            if sizes.iter().any(|&y| !(y > 0.0)) {
                return Err(Error::FitUndefined("log-linear fit needs positive sizes".into()));
            }
            let pts: Vec<(f64, f64)> = sweep.values.iter().zip(&sizes).map(|(&x, &y)| (x, y.ln())).collect();
            let fit = fit_line(&pts)?;
            let n = sweep.reduction.n;
            let predicted = (predicted_exponent(sweep.quantity, eq, 2, delta)
                - predicted_exponent(sweep.quantity, eq, 1, delta))
                * n.ln();
            let passes = fit.slope < 0.0;
            (fit, predicted, passes)
        }
    };
    Ok(DecayFit {
        quantity: sweep.quantity,
        axis: sweep.axis,
        values: sweep.values.clone(),
        sizes,
        fit,
        predicted,
        passes,
    })
}

/// `Ĉ`: sup over samples and `J ∈ {1, …, j_max}` of
/// `‖𝒩₁^{(J+1)}(v)‖_{H^s} / (N^{e_J} ‖v‖_{H^s}^{2J+3})`, `e_J` the predicted exponent.
pub fn calibrate_c_hat(
    cfg: &ReductionConfig,
    grid: FrequencyGrid,
    profiles: &[SampleProfile],
    j_max: usize,
) -> Result<f64> {
    if profiles.is_empty() || j_max == 0 {
        return Err(Error::InvalidArgument(
            "calibration needs samples and j_max >= 1".into(),
        ));
    }
    let mut cfg = *cfg;
    cfg.j_max = cfg.j_max.max(j_max);
    cfg.validate()?;
    let mut best: f64 = 0.0;
    for p in profiles {
        let mut p = *p;
        p.hermitian |= cfg.equation == Equation::MKdV;
        let v = sample(grid, &p)?;
        let norm = sobolev_norm(&v, cfg.s);
        if norm == 0.0 {
            continue;
        }
        for j in 1..=j_max {
            let f = resonant_evaluation(&v, j + 1, &cfg, 0.0)?.value;
            let e = predicted_exponent(Quantity::Resonant, cfg.equation, j + 1, cfg.delta);
            let ratio = sobolev_norm(&f, cfg.s) / (cfg.n.powf(e) * norm.powi(2 * j as i32 + 3));
            best = best.max(ratio);
        }
    }
    Ok(best)
}
