//! Localized trilinear operators evaluated by the rectangle rule over
//! `(ξ₁, ξ₂)` with `ξ₃` fixed by the frequency constraint.
//!
//! Modulations are computed on integer grid offsets (`Φ = 2(o−o₁)(o−o₃)·dxi²`,
//! `Ψ = 3(o₁+o₂)(o₂+o₃)(o₃+o₁)·dxi³`), so the constraint is exact and window
//! decisions do not depend on summation order. The oscillatory factor is split
//! across the inputs and the output (`e^{−iΦt} = e^{−iξ²t} e^{iξ₁²t} e^{−iξ₂²t} e^{iξ₃²t}`),
//! which leaves a phase-free inner sum.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispersion::Equation;
use crate::error::{Error, Result};
use crate::grid::{fl_norm, japanese, sobolev_norm, FlExponent, FrequencyGrid, GridFunction};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowKind {
    Unrestricted,
    /// `|Φ − α| ≤ M`
    LeqM,
    /// `|Φ − α| > M`
    GtM,
    /// `M < |Φ − α| ≤ 2M`
    Shell,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationWindow {
    pub alpha: f64,
    pub m: f64,
    pub kind: WindowKind,
}

impl ModulationWindow {
    pub fn unrestricted() -> Self {
        Self {
            alpha: 0.0,
            m: f64::INFINITY,
            kind: WindowKind::Unrestricted,
        }
    }

    pub fn leq(alpha: f64, m: f64) -> Self {
        Self {
            alpha,
            m,
            kind: WindowKind::LeqM,
        }
    }

    pub fn gt(alpha: f64, m: f64) -> Self {
        Self {
            alpha,
            m,
            kind: WindowKind::GtM,
        }
    }

    pub fn shell(alpha: f64, m: f64) -> Self {
        Self {
            alpha,
            m,
            kind: WindowKind::Shell,
        }
    }

    #[inline]
    pub fn admits(&self, modulation: f64) -> bool {
        let d = (modulation - self.alpha).abs();
        match self.kind {
            WindowKind::Unrestricted => true,
            WindowKind::LeqM => d <= self.m,
            WindowKind::GtM => d > self.m,
            WindowKind::Shell => self.m < d && d <= 2.0 * self.m,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kind != WindowKind::Unrestricted {
            if !(self.m >= 1.0) || self.m.is_nan() {
                return Err(Error::InvalidSpec(format!(
                    "window threshold M = {} must be >= 1",
                    self.m
                )));
            }
            if !self.alpha.is_finite() {
                return Err(Error::InvalidSpec(format!(
                    "window centre alpha = {} must be finite",
                    self.alpha
                )));
            }
        }
        Ok(())
    }

    /// Integer ranges of `q` that may satisfy the window when the modulation is
    /// `q·s` (`s ≠ 0`). Ranges are conservative; callers still test [`Self::admits`].
    fn linear_candidates(&self, s: f64, qlo: i64, qhi: i64) -> [(i64, i64); 2] {
        let interval = |m: f64| {
            let (a, b) = ((self.alpha - m) / s, (self.alpha + m) / s);
            if a <= b {
                (a, b)
            } else {
                (b, a)
            }
        };
        let clamp = |x: f64| x.clamp(qlo as f64 - 2.0, qhi as f64 + 2.0) as i64;
        let outer = |m: f64| {
            let (a, b) = interval(m);
            ((clamp(a.floor()) - 1).max(qlo), (clamp(b.ceil()) + 1).min(qhi))
        };
        // q values certainly inside |q s − α| ≤ m.
        let inner = |m: f64| {
            let (a, b) = interval(m);
            (clamp(a.ceil()) + 1, clamp(b.floor()) - 1)
        };
        let empty = (1, 0);
        match self.kind {
            WindowKind::Unrestricted => [(qlo, qhi), empty],
            WindowKind::LeqM => [outer(self.m), empty],
            WindowKind::GtM => {
                let (a, b) = inner(self.m);
                if a > b {
                    [(qlo, qhi), empty]
                } else {
                    [(qlo, (a - 1).min(qhi)), ((b + 1).max(qlo), qhi)]
                }
            }
            WindowKind::Shell => {
                let (lo, hi) = outer(2.0 * self.m);
                let (a, b) = inner(self.m);
                if a > b {
                    [(lo, hi), empty]
                } else {
                    [(lo, (a - 1).min(hi)), ((b + 1).max(lo), hi)]
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kernel {
    Plain,
    /// Integrand divided by `Φ − α` (or `Ψ − α`).
    CauchyDivided,
}

/// Frequency multiplier and constant in front of the integral.
///
/// * `None`: `i` for the NLS operator, `1` for a bare mKdV integral.
/// * `XiFull`: `−iξ`, the mKdV nonlinearity.
/// * `SgnQuarter`: `−i sgn(ξ)|ξ|^{1/4}` with `sgn(0) = 0`.
/// * `Quarter3Quarter(j)`: `|ξ|^{1/4} |ξ_j|^{3/4}`, `j ∈ {1, 2, 3}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Weight {
    None,
    XiFull,
    SgnQuarter,
    Quarter3Quarter(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrilinearSpec {
    pub equation: Equation,
    pub window: ModulationWindow,
    pub kernel: Kernel,
    pub weight: Weight,
    /// Conjugation applied to each argument before multiplication.
    pub conj: [bool; 3],
    pub time: f64,
}

impl TrilinearSpec {
    /// The equation's own nonlinearity `𝒩` at time `t`, unrestricted.
    pub fn nonlinearity(equation: Equation, time: f64) -> Self {
        Self {
            equation,
            window: ModulationWindow::unrestricted(),
            kernel: Kernel::Plain,
            weight: match equation {
                Equation::CubicNLS => Weight::None,
                Equation::MKdV => Weight::XiFull,
            },
            conj: default_conj(equation),
            time,
        }
    }

    pub fn with_window(mut self, window: ModulationWindow) -> Self {
        self.window = window;
        self
    }

    pub fn with_kernel(mut self, kernel: Kernel) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_weight(mut self, weight: Weight) -> Self {
        self.weight = weight;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        if self.kernel == Kernel::CauchyDivided && !matches!(self.window.kind, WindowKind::GtM | WindowKind::Shell) {
            return Err(Error::InvalidSpec(
                "the Cauchy kernel needs a window excluding |modulation - alpha| < 1".into(),
            ));
        }
        match (self.equation, self.weight) {
            (Equation::CubicNLS, Weight::None) | (Equation::MKdV, _) => {}
            (Equation::CubicNLS, w) => {
                return Err(Error::InvalidSpec(format!("weight {w:?} is only defined for mKdV")))
            }
        }
        if let Weight::Quarter3Quarter(j) = self.weight {
            if !(1..=3).contains(&j) {
                return Err(Error::InvalidSpec(format!("weighted slot {j} not in 1..=3")));
            }
        }
        if !self.time.is_finite() {
            return Err(Error::InvalidSpec("time must be finite".into()));
        }
        Ok(())
    }

    /// Constant and output-frequency part of the multiplier.
    fn output_factor(&self, xi: f64) -> Complex64 {
        match (self.equation, self.weight) {
            (Equation::CubicNLS, _) => I,
            (Equation::MKdV, Weight::None) => Complex64::new(1.0, 0.0),
            (Equation::MKdV, Weight::XiFull) => -I * xi,
            (Equation::MKdV, Weight::SgnQuarter) => {
                if xi == 0.0 {
                    ZERO
                } else {
                    -I * xi.signum() * xi.abs().powf(0.25)
                }
            }
            (Equation::MKdV, Weight::Quarter3Quarter(_)) => Complex64::new(xi.abs().powf(0.25), 0.0),
        }
    }
}

pub fn default_conj(equation: Equation) -> [bool; 3] {
    match equation {
        Equation::CubicNLS => [false, true, false],
        Equation::MKdV => [false, false, false],
    }
}

/// Per-slot phase exponents: slot values are multiplied by `e^{i·sign·θ(ξ)t}`.
fn slot_phase(eq: Equation, xi: f64, slot: usize, t: f64) -> Complex64 {
    if t == 0.0 {
        return Complex64::new(1.0, 0.0);
    }
    let theta = match eq {
        // e^{−iΦt}: +ξ₁², −ξ₂², +ξ₃².
        Equation::CubicNLS => {
            if slot == 1 {
                -xi * xi
            } else {
                xi * xi
            }
        }
        // e^{iΨt}: −ξ_k³ in every slot.
        Equation::MKdV => -xi * xi * xi,
    };
    Complex64::from_polar(1.0, theta * t)
}

fn output_phase(eq: Equation, xi: f64, t: f64) -> Complex64 {
    if t == 0.0 {
        return Complex64::new(1.0, 0.0);
    }
    Complex64::from_polar(1.0, eq.interaction_exponent(xi) * t)
}

/// Inputs with conjugation and slot phase folded in.
fn prepared(spec: &TrilinearSpec, v: [&GridFunction; 3]) -> [Vec<Complex64>; 3] {
    let g = v[0].grid();
    std::array::from_fn(|slot| {
        v[slot]
            .values()
            .iter()
            .enumerate()
            .map(|(k, &z)| {
                let z = if spec.conj[slot] { z.conj() } else { z };
                if z == ZERO {
                    ZERO
                } else {
                    z * slot_phase(spec.equation, g.node(k), slot, spec.time)
                }
            })
            .collect()
    })
}

fn check_grids(v: [&GridFunction; 3]) -> Result<FrequencyGrid> {
    v[0].check_same_grid(v[1])?;
    v[0].check_same_grid(v[2])?;
    Ok(*v[0].grid())
}

/// Evaluates the localized trilinear operator described by `spec`.
pub fn apply(spec: &TrilinearSpec, v1: &GridFunction, v2: &GridFunction, v3: &GridFunction) -> Result<GridFunction> {
    spec.validate()?;
    let args = [v1, v2, v3];
    let grid = check_grids(args)?;
    let a = prepared(spec, args);
    let values: Vec<Complex64> = (0..grid.n())
        .into_par_iter()
        .map(|k| output_sample(spec, &grid, &a, k))
        .collect();
    let mut out = GridFunction::from_parts(grid, values, false);
    if spec.equation == Equation::MKdV
        && args.iter().all(|v| v.is_real_physical())
        && spec.kernel == Kernel::Plain
        && spec.window.alpha == 0.0
    {
        out.set_real_physical(true);
    }
    Ok(out)
}

fn output_sample(spec: &TrilinearSpec, grid: &FrequencyGrid, a: &[Vec<Complex64>; 3], k: usize) -> Complex64 {
    let xi = grid.node(k);
    let pre = spec.output_factor(xi);
    if pre == ZERO {
        return ZERO;
    }
    let sum = match spec.equation {
        Equation::CubicNLS => nls_sum(spec, grid, a, grid.offset(k)),
        Equation::MKdV => mkdv_sum(spec, grid, a, grid.offset(k)),
    };
    pre * sum * grid.dxi() * grid.dxi() * output_phase(spec.equation, xi, spec.time)
}

#[inline]
fn kernel_factor(spec: &TrilinearSpec, modulation: f64) -> f64 {
    match spec.kernel {
        Kernel::Plain => 1.0,
        Kernel::CauchyDivided => 1.0 / (modulation - spec.window.alpha),
    }
}

/// NLS inner sum at output offset `o`, parametrized by `p = o − o₁` and
/// `q = o − o₃ = o₁ − o₂`, so that `Φ = 2pq·dxi²` is linear in `q`.
fn nls_sum(spec: &TrilinearSpec, grid: &FrequencyGrid, a: &[Vec<Complex64>; 3], o: i64) -> Complex64 {
    let h = grid.half();
    let unit = Equation::CubicNLS.modulation_unit(grid.dxi());
    let mut acc = ZERO;
    for k1 in 0..grid.n() {
        let w1 = a[0][k1];
        if w1 == ZERO {
            continue;
        }
        let o1 = grid.offset(k1);
        let p = o - o1;
        // o₃ = o − q and o₂ = o₁ − q must both lie in [−h, h].
        let qlo = (o - h).max(o1 - h);
        let qhi = (o + h).min(o1 + h);
        if qlo > qhi {
            continue;
        }
        let ranges = if p == 0 {
            if spec.window.admits(0.0) {
                [(qlo, qhi), (1, 0)]
            } else {
                continue;
            }
        } else {
            spec.window.linear_candidates(2.0 * p as f64 * unit, qlo, qhi)
        };
        let mut inner = ZERO;
        for (lo, hi) in ranges {
            for q in lo..=hi {
                let w3 = a[2][(o - q + h) as usize];
                let w2 = a[1][(o1 - q + h) as usize];
                if w2 == ZERO || w3 == ZERO {
                    continue;
                }
                let phi = (2 * p * q) as f64 * unit;
                if !spec.window.admits(phi) {
                    continue;
                }
                inner += w2 * w3 * kernel_factor(spec, phi);
            }
        }
        acc += w1 * inner;
    }
    acc
}

fn mkdv_sum(spec: &TrilinearSpec, grid: &FrequencyGrid, a: &[Vec<Complex64>; 3], o: i64) -> Complex64 {
    let h = grid.half();
    let dxi = grid.dxi();
    let unit = Equation::MKdV.modulation_unit(dxi);
    let weighted = match spec.weight {
        Weight::Quarter3Quarter(j) => Some(j),
        _ => None,
    };
    let mut acc = ZERO;
    for k1 in 0..grid.n() {
        let w1 = a[0][k1];
        if w1 == ZERO {
            continue;
        }
        let o1 = grid.offset(k1);
        // o₃ = o − o₁ − o₂ ∈ [−h, h].
        let lo = (o - o1 - h).max(-h);
        let hi = (o - o1 + h).min(h);
        let mut inner = ZERO;
        for o2 in lo..=hi {
            let o3 = o - o1 - o2;
            let w2 = a[1][(o2 + h) as usize];
            let w3 = a[2][(o3 + h) as usize];
            if w2 == ZERO || w3 == ZERO {
                continue;
            }
            let psi = Equation::MKdV.lattice_modulation(o, o1, o2, o3) as f64 * unit;
            if !spec.window.admits(psi) {
                continue;
            }
            let mut term = w2 * w3 * kernel_factor(spec, psi);
            if let Some(j) = weighted {
                let oj = [o1, o2, o3][j - 1];
                term *= (oj.abs() as f64 * dxi).powf(0.75);
            }
            inner += term;
        }
        acc += w1 * inner;
    }
    acc
}

/// The operator `𝓜(v) = 𝓜(v, v, v)` with multiplier `−i sgn(ξ)|ξ|^{1/4}`.
pub fn apply_mkdv_quarter(v: &GridFunction, t: f64) -> Result<GridFunction> {
    if !v.is_real_physical() {
        return Err(Error::InvalidInput(
            "the quarter-derivative operator expects a real physical-space function".into(),
        ));
    }
    let spec = TrilinearSpec::nonlinearity(Equation::MKdV, t).with_weight(Weight::SgnQuarter);
    apply(&spec, v, v, v)
}

/// Estimates whose left- and right-hand sides can be evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LemmaId {
    NLS1,
    NLS2,
    KdV1,
    KdV2,
    NLS3,
    NLS4,
    Extra,
    Mk1,
    Mk2,
}

impl LemmaId {
    pub const ALL: [LemmaId; 9] = [
        LemmaId::NLS1,
        LemmaId::NLS2,
        LemmaId::KdV1,
        LemmaId::KdV2,
        LemmaId::NLS3,
        LemmaId::NLS4,
        LemmaId::Extra,
        LemmaId::Mk1,
        LemmaId::Mk2,
    ];

    pub fn equation(self) -> Equation {
        match self {
            LemmaId::NLS1 | LemmaId::NLS2 | LemmaId::NLS3 | LemmaId::NLS4 => Equation::CubicNLS,
            _ => Equation::MKdV,
        }
    }

    /// Exponent of `M` on the right-hand side, without the `0+`.
    pub fn m_exponent(self) -> f64 {
        match self {
            LemmaId::NLS1 | LemmaId::KdV1 | LemmaId::NLS3 | LemmaId::Mk1 => 0.5,
            LemmaId::NLS2 | LemmaId::KdV2 | LemmaId::NLS4 | LemmaId::Mk2 => -0.5,
            LemmaId::Extra => 0.0,
        }
    }

    /// Smallest admissible Sobolev index.
    pub fn s_floor(self) -> f64 {
        match self.equation() {
            Equation::CubicNLS => 0.0,
            Equation::MKdV => 0.25,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LemmaId::NLS1 => "NLS1",
            LemmaId::NLS2 => "NLS2",
            LemmaId::KdV1 => "KdV1",
            LemmaId::KdV2 => "KdV2",
            LemmaId::NLS3 => "NLS3",
            LemmaId::NLS4 => "NLS4",
            LemmaId::Extra => "Extra",
            LemmaId::Mk1 => "mk1",
            LemmaId::Mk2 => "mk2",
        }
    }
}

impl std::str::FromStr for LemmaId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LemmaId::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnsupportedLemma(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaParams {
    pub m: f64,
    pub alpha: f64,
    /// Sobolev index of the right-hand side.
    pub s: f64,
    /// Instantiation of the `0+` exponents.
    pub eps: f64,
    pub time: f64,
    /// Slot carrying the `𝓕L^∞` norm (mk1/mk2) and the weight `|ξ_j|^{3/4}`.
    pub slot: usize,
    /// Use the `> M` variant instead of the dyadic shell for the Cauchy-kernel lemmas.
    pub tail: bool,
}

impl Default for LemmaParams {
    fn default() -> Self {
        Self {
            m: 1.0,
            alpha: 0.0,
            s: 0.0,
            eps: 0.01,
            time: 0.0,
            slot: 1,
            tail: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaEvaluation {
    pub lhs: f64,
    /// Norm product on the right-hand side (no `M`, `α` factors).
    pub norms: f64,
    /// Full right-hand side before flooring.
    pub rhs: f64,
    /// `lhs / max(rhs, 1e-300)`.
    pub ratio: f64,
}

pub const RHS_FLOOR: f64 = 1e-300;

/// Left-hand side, right-hand side and their ratio for one estimate on the
/// given arguments (one function means all three slots are equal).
pub fn estimate_lhs_rhs(lemma: LemmaId, p: &LemmaParams, v: &[GridFunction]) -> Result<LemmaEvaluation> {
    let args: [&GridFunction; 3] = match v {
        [a] => [a, a, a],
        [a, b, c] => [a, b, c],
        _ => {
            return Err(Error::InvalidArgument(format!(
                "estimates take one or three functions, got {}",
                v.len()
            )))
        }
    };
    if p.s < lemma.s_floor() {
        return Err(Error::InvalidArgument(format!(
            "{} needs s >= {}, got {}",
            lemma.name(),
            lemma.s_floor(),
            p.s
        )));
    }
    let eq = lemma.equation();
    let cauchy_window = if p.tail {
        ModulationWindow::gt(p.alpha, p.m)
    } else {
        ModulationWindow::shell(p.alpha, p.m)
    };
    let base = TrilinearSpec::nonlinearity(eq, p.time);
    let spec = match lemma {
        LemmaId::NLS1 | LemmaId::KdV1 | LemmaId::NLS3 => base.with_window(ModulationWindow::leq(p.alpha, p.m)),
        LemmaId::NLS2 | LemmaId::KdV2 | LemmaId::NLS4 => {
            base.with_window(cauchy_window).with_kernel(Kernel::CauchyDivided)
        }
        LemmaId::Extra => base.with_weight(Weight::SgnQuarter),
        LemmaId::Mk1 => base
            .with_weight(Weight::Quarter3Quarter(p.slot))
            .with_window(ModulationWindow::leq(p.alpha, p.m)),
        LemmaId::Mk2 => base
            .with_weight(Weight::Quarter3Quarter(p.slot))
            .with_window(cauchy_window)
            .with_kernel(Kernel::CauchyDivided),
    };
    let out = apply(&spec, args[0], args[1], args[2])?;
    let hs = |f: &GridFunction, s: f64| sobolev_norm(f, s);
    let inf = |f: &GridFunction| fl_norm(f, FlExponent::Infinity);
    let bracket_alpha = japanese(p.alpha).powf(p.eps);
    let (lhs, norms, scale) = match lemma {
        LemmaId::NLS1 | LemmaId::KdV1 | LemmaId::NLS2 | LemmaId::KdV2 => {
            let norms: f64 = args.iter().map(|f| hs(f, p.s)).product();
            (
                hs(&out, p.s),
                norms,
                bracket_alpha * p.m.powf(lemma.m_exponent() + p.eps),
            )
        }
        LemmaId::NLS3 | LemmaId::NLS4 => {
            let norms = (0..3)
                .map(|j| {
                    (0..3)
                        .map(|k| if k == j { inf(args[k]) } else { hs(args[k], p.eps) })
                        .product::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            (inf(&out), norms, p.m.powf(lemma.m_exponent()))
        }
        LemmaId::Extra => {
            let norms: f64 = args.iter().map(|f| hs(f, 0.25)).product();
            (inf(&out), norms, 1.0)
        }
        LemmaId::Mk1 | LemmaId::Mk2 => {
            let j = p.slot - 1;
            let norms: f64 = (0..3)
                .map(|k| if k == j { inf(args[k]) } else { hs(args[k], p.s) })
                .product();
            (
                inf(&out),
                norms,
                p.alpha.abs().max(p.m).powf(1.0 / 12.0) * p.m.powf(lemma.m_exponent()),
            )
        }
    };
    let rhs = scale * norms;
    Ok(LemmaEvaluation {
        lhs,
        norms,
        rhs,
        ratio: lhs / rhs.max(RHS_FLOOR),
    })
}
