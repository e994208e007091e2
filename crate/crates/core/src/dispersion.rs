//! Modulation functions, phase factors and the interaction representation.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::trees::OrderedTree;

/// Defocusing cubic NLS or defocusing mKdV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Equation {
    CubicNLS,
    MKdV,
}

impl Equation {
    /// Sign `s` in the modulation phase `e^{s i μ t}` of the trilinear operator.
    pub fn phase_sign(self) -> f64 {
        match self {
            Equation::CubicNLS => -1.0,
            Equation::MKdV => 1.0,
        }
    }

    /// Exponent `θ(ξ)` with `v̂ = e^{iθ(ξ)t} û`: `-ξ²` (NLS) or `+ξ³` (mKdV).
    pub fn interaction_exponent(self, xi: f64) -> f64 {
        match self {
            Equation::CubicNLS => -xi * xi,
            Equation::MKdV => xi * xi * xi,
        }
    }

    /// Third frequency from the constraint `ξ = ξ₁ ∓ ξ₂ + ξ₃`.
    pub fn third(self, xi: f64, xi1: f64, xi2: f64) -> f64 {
        match self {
            Equation::CubicNLS => xi - xi1 + xi2,
            Equation::MKdV => xi - xi1 - xi2,
        }
    }

    /// Same as [`Equation::third`] on integer grid offsets.
    #[inline]
    pub fn third_offset(self, o: i64, o1: i64, o2: i64) -> i64 {
        match self {
            Equation::CubicNLS => o - o1 + o2,
            Equation::MKdV => o - o1 - o2,
        }
    }

    /// Modulation on integer offsets, in units of `dxi²` (NLS) or `dxi³` (mKdV).
    #[inline]
    pub fn lattice_modulation(self, o: i64, o1: i64, o2: i64, o3: i64) -> i64 {
        match self {
            Equation::CubicNLS => 2 * (o - o1) * (o - o3),
            Equation::MKdV => 3 * (o1 + o2) * (o2 + o3) * (o3 + o1),
        }
    }

    /// Physical size of one lattice modulation unit on a grid of spacing `dxi`.
    pub fn modulation_unit(self, dxi: f64) -> f64 {
        match self {
            Equation::CubicNLS => dxi * dxi,
            Equation::MKdV => dxi * dxi * dxi,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Equation::CubicNLS => "nls",
            Equation::MKdV => "mkdv",
        }
    }
}

impl std::str::FromStr for Equation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nls" | "cubicnls" | "cubic_nls" => Ok(Equation::CubicNLS),
            "mkdv" => Ok(Equation::MKdV),
            other => Err(Error::InvalidArgument(format!("unknown equation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTuple {
    pub xi: f64,
    pub xi1: f64,
    pub xi2: f64,
    pub xi3: f64,
}

impl FrequencyTuple {
    pub fn new(xi: f64, xi1: f64, xi2: f64, xi3: f64) -> Self {
        Self { xi, xi1, xi2, xi3 }
    }

    fn scale(&self) -> f64 {
        [1.0, self.xi.abs(), self.xi1.abs(), self.xi2.abs(), self.xi3.abs()]
            .into_iter()
            .fold(0.0, f64::max)
    }

    /// Checks `ξ = ξ₁ ∓ ξ₂ + ξ₃` to `1e-9 · scale`.
    pub fn validate(&self, eq: Equation) -> Result<()> {
        let rhs = match eq {
            Equation::CubicNLS => self.xi1 - self.xi2 + self.xi3,
            Equation::MKdV => self.xi1 + self.xi2 + self.xi3,
        };
        let defect = (self.xi - rhs).abs();
        if !(defect <= 1e-9 * self.scale()) {
            return Err(Error::InvalidTuple(format!(
                "{self:?} misses the {} constraint by {defect:e}",
                eq.name()
            )));
        }
        Ok(())
    }
}

/// `Φ = ξ² − ξ₁² + ξ₂² − ξ₃²` for a tuple with `ξ = ξ₁ − ξ₂ + ξ₃`.
pub fn phi(t: &FrequencyTuple) -> Result<f64> {
    t.validate(Equation::CubicNLS)?;
    Ok(t.xi * t.xi - t.xi1 * t.xi1 + t.xi2 * t.xi2 - t.xi3 * t.xi3)
}

/// The two factorizations `2(ξ₂−ξ₁)(ξ₂−ξ₃)` and `2(ξ−ξ₁)(ξ−ξ₃)`.
pub fn phi_factored(t: &FrequencyTuple) -> (f64, f64) {
    (
        2.0 * (t.xi2 - t.xi1) * (t.xi2 - t.xi3),
        2.0 * (t.xi - t.xi1) * (t.xi - t.xi3),
    )
}

/// `Ψ = ξ³ − ξ₁³ − ξ₂³ − ξ₃³` for a tuple with `ξ = ξ₁ + ξ₂ + ξ₃`.
pub fn psi(t: &FrequencyTuple) -> Result<f64> {
    t.validate(Equation::MKdV)?;
    Ok(t.xi.powi(3) - t.xi1.powi(3) - t.xi2.powi(3) - t.xi3.powi(3))
}

/// `3(ξ₁+ξ₂)(ξ₂+ξ₃)(ξ₃+ξ₁)`.
pub fn psi_factored(t: &FrequencyTuple) -> f64 {
    3.0 * (t.xi1 + t.xi2) * (t.xi2 + t.xi3) * (t.xi3 + t.xi1)
}

/// Modulation of a tuple for either equation.
pub fn modulation(eq: Equation, t: &FrequencyTuple) -> Result<f64> {
    match eq {
        Equation::CubicNLS => phi(t),
        Equation::MKdV => psi(t),
    }
}

fn apply_phase(f: &GridFunction, t: f64, eq: Equation, sign: f64) -> GridFunction {
    if t == 0.0 {
        return f.clone();
    }
    let mut out = f.map(|xi, z| z * Complex64::from_polar(1.0, sign * eq.interaction_exponent(xi) * t));
    // The phase e^{±iξ³t} is odd-symmetric for mKdV, so the reality flag survives.
    if eq == Equation::MKdV {
        out.set_real_physical(f.is_real_physical());
    }
    out
}

/// `v̂ = e^{-iξ²t} û` (NLS) or `v̂ = e^{iξ³t} û` (mKdV).
pub fn to_interaction(u_hat: &GridFunction, t: f64, eq: Equation) -> GridFunction {
    apply_phase(u_hat, t, eq, 1.0)
}

/// Inverse of [`to_interaction`].
pub fn from_interaction(v_hat: &GridFunction, t: f64, eq: Equation) -> GridFunction {
    apply_phase(v_hat, t, eq, -1.0)
}

/// Per-generation modulations of an ordered tree under a frequency assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationModulation {
    /// `μ_j` of the quadruple rooted at `r^{(j)}`, before the conjugation sign.
    pub mu: Vec<f64>,
    /// `μ̃_j = Σ_{k≤j} σ_k μ_k`.
    pub mu_tilde: Vec<f64>,
    /// `σ_j = +1` if `r^{(j)}` is unconjugated, `-1` otherwise (always `+1` for mKdV).
    pub sigma: Vec<i8>,
}

impl GenerationModulation {
    /// `M_j = max(|μ̃_j|, |μ₁|)` for 1-based `j`.
    pub fn m(&self, j: usize) -> f64 {
        self.mu_tilde[j - 1].abs().max(self.mu[0].abs())
    }
}

/// Computes `μ_j`, `σ_j` and `μ̃_j` for `j = 1..J` from a node-frequency assignment
/// indexed by node id.
pub fn accumulate_modulations(tree: &OrderedTree, freqs: &[f64], eq: Equation) -> Result<GenerationModulation> {
    if freqs.len() != tree.node_count() {
        return Err(Error::InvalidIndex(format!(
            "assignment has {} entries for {} nodes",
            freqs.len(),
            tree.node_count()
        )));
    }
    let mut mu = Vec::with_capacity(tree.generations());
    let mut mu_tilde = Vec::with_capacity(tree.generations());
    let mut sigma = Vec::with_capacity(tree.generations());
    let mut acc = 0.0;
    for j in 1..=tree.generations() {
        let r = tree.root_of(j);
        let [a1, a2, a3] = tree.children(r).expect("generation roots are non-terminal");
        let tuple = FrequencyTuple::new(freqs[r], freqs[a1], freqs[a2], freqs[a3]);
        let m = modulation(eq, &tuple).map_err(|e| match e {
            Error::InvalidTuple(msg) => Error::InvalidIndex(format!("node {r}: {msg}")),
            other => other,
        })?;
        let s: i8 = if eq == Equation::CubicNLS && tree.is_conjugated(r) {
            -1
        } else {
            1
        };
        acc += s as f64 * m;
        mu.push(m);
        mu_tilde.push(acc);
        sigma.push(s);
    }
    Ok(GenerationModulation { mu, mu_tilde, sigma })
}
