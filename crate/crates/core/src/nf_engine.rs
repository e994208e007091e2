//! Normal form reduction terms as tree-indexed compositions of trilinear operators.
//!
//! A composition over a chronicle of `G` generations is a `(2G+1)`-linear sum
//! over node frequencies. Generation `k` contributes the factor `g₁` (root) or
//! `−g_k` (`k ≥ 2`), with `g_k = iσ_k` for NLS and `g_k = −iξ_{r^{(k)}}` for mKdV,
//! and, where the Cauchy kernel applies, the division by `d_k = s·i·μ̃_k`
//! (`s = −1` for NLS, `+1` for mKdV). The oscillatory factor `e^{s i μ̃_G t}`
//! telescopes over the tree into per-terminal phases, so terminals carry
//! `from_interaction(v, t)` (conjugated on conjugated terminals) and the output
//! is mapped back with `to_interaction`.
//!
//! Windows: generation 1 compares `|μ₁|` with `N`; generation `k ≥ 2` compares
//! `|μ̃_k|` with `(2k+1)³ M_{k−1}^{1−δ}`, `M_j = max(|μ̃_j|, |μ₁|)`. Every generation
//! but the innermost uses the `>` side with the Cauchy kernel; the innermost one
//! depends on the term being evaluated ([`InnerKind`]).

use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispersion::{from_interaction, Equation, GenerationModulation};
use crate::error::{Error, Result};
use crate::grid::{fl_norm, is_dyadic, l2_norm, sobolev_norm, FlExponent, FrequencyGrid, GridFunction};
use crate::trees::{enumerate_ordered_trees, NodeId, OrderedTree};
use crate::trilinear::{apply, apply_mkdv_quarter, TrilinearSpec};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Quasi-Monte Carlo sums Cauchy-divided innermost tables up to this size exactly.
const QMC_EXACT_BOUNDARY: usize = 4096;

/// Innermost composition tables are skipped beyond this many entries.
const TABLE_ENTRY_LIMIT: usize = 24_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalMode {
    /// Dense quadrature for one generation, or two on grids of at most 129
    /// nodes, quasi-Monte Carlo otherwise.
    Auto,
    Dense,
    Qmc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReductionConfig {
    /// First-generation modulation threshold `N` (dyadic, > 1).
    pub n: f64,
    pub delta: f64,
    /// Instantiation of the `0+` exponents.
    pub eps: f64,
    pub j_max: usize,
    pub equation: Equation,
    /// Working Sobolev index.
    pub s: f64,
    pub mode: EvalMode,
    /// Quasi-Monte Carlo points per output frequency, split over the replicates.
    pub qmc_samples: usize,
    pub qmc_replicates: usize,
    pub seed: u64,
}

impl ReductionConfig {
    pub fn new(equation: Equation, n: f64) -> Self {
        Self {
            n,
            delta: 0.5,
            eps: 0.01,
            j_max: 2,
            equation,
            s: match equation {
                Equation::CubicNLS => 0.0,
                Equation::MKdV => 0.25,
            },
            mode: EvalMode::Auto,
            qmc_samples: 200_000,
            qmc_replicates: 8,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(is_dyadic(self.n) && self.n > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "N must be dyadic and > 1, got {}",
                self.n
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if self.j_max == 0 {
            return Err(Error::InvalidArgument("J_max must be at least 1".into()));
        }
        let floor = match self.equation {
            Equation::CubicNLS => 0.0,
            Equation::MKdV => 0.25,
        };
        if !(self.s >= floor) {
            return Err(Error::InvalidArgument(format!(
                "s = {} is below the {} floor {floor}",
                self.s,
                self.equation.name()
            )));
        }
        if self.qmc_samples == 0 || self.qmc_replicates < 2 {
            return Err(Error::InvalidArgument(
                "quasi-Monte Carlo needs samples > 0 and at least 2 replicates".into(),
            ));
        }
        Ok(())
    }

    fn use_dense(&self, generations: usize, n: usize) -> bool {
        match self.mode {
            EvalMode::Dense => true,
            EvalMode::Qmc => false,
            EvalMode::Auto => generations == 1 || (generations <= 2 && n <= 129),
        }
    }
}

/// `(2j+3)³`, the constant of the cutoff set `C_j`.
pub fn cutoff_constant(j: usize) -> f64 {
    let c = (2 * j + 3) as f64;
    c * c * c
}

/// Indicator of the cutoff set `C_j = {|μ̃_{j+1}| ≤ (2j+3)³ M_j^{1−δ}}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffPredicate {
    pub j: usize,
    pub delta: f64,
}

impl CutoffPredicate {
    pub fn new(j: usize, delta: f64) -> Result<Self> {
        if j == 0 {
            return Err(Error::InvalidArgument("cutoff sets start at j = 1".into()));
        }
        Ok(Self { j, delta })
    }

    pub fn threshold(&self, gm: &GenerationModulation) -> f64 {
        cutoff_constant(self.j) * gm.m(self.j).powf(1.0 - self.delta)
    }

    /// `true` on `C_j`; the complement is the negation.
    pub fn contains(&self, gm: &GenerationModulation) -> Result<bool> {
        if gm.mu_tilde.len() < self.j + 1 {
            return Err(Error::OutOfRange(format!(
                "C_{} needs {} generations, got {}",
                self.j,
                self.j + 1,
                gm.mu_tilde.len()
            )));
        }
        Ok(gm.mu_tilde[self.j].abs() <= self.threshold(gm))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TermKind {
    Boundary,
    Resonant,
    Remainder,
}

impl TermKind {
    pub fn name(self) -> &'static str {
        match self {
            TermKind::Boundary => "boundary",
            TermKind::Resonant => "resonant",
            TermKind::Remainder => "remainder",
        }
    }
}

/// Treatment of the innermost generation of a composition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InnerKind {
    /// `>` side with the Cauchy kernel (`𝔖₀`).
    Boundary,
    /// `≤` side, plain (`𝔖₁`).
    Resonant,
    /// `>` side, plain.
    Remainder,
    /// No restriction, plain.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalFormTerm {
    pub kind: TermKind,
    pub j: usize,
    pub value: GridFunction,
    pub t: f64,
    /// Largest per-frequency standard error of the quasi-Monte Carlo estimate (0 when dense).
    pub std_error: f64,
}

/// Value of a composition plus its per-frequency standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: GridFunction,
    pub std_error: Vec<f64>,
}

impl Evaluation {
    fn zero(grid: FrequencyGrid) -> Self {
        Self {
            value: GridFunction::zeros(grid),
            std_error: vec![0.0; grid.n()],
        }
    }

    fn accumulate(&mut self, other: &Evaluation, c: f64) {
        self.value = self
            .value
            .axpy(Complex64::new(c, 0.0), &other.value)
            .expect("same grid");
        for (a, b) in self.std_error.iter_mut().zip(&other.std_error) {
            *a = a.hypot(c.abs() * b);
        }
    }

    pub fn max_std_error(&self) -> f64 {
        self.std_error.iter().copied().fold(0.0, f64::max)
    }
}

/// Sorted innermost sums for one node frequency.
struct Table {
    x: Vec<i64>,
    w: Vec<Complex64>,
    prefix: Vec<Complex64>,
    suffix: Vec<Complex64>,
}

impl Table {
    fn new(mut entries: Vec<(i64, Complex64)>) -> Self {
        entries.sort_by_key(|e| e.0);
        let x: Vec<i64> = entries.iter().map(|e| e.0).collect();
        let w: Vec<Complex64> = entries.iter().map(|e| e.1).collect();
        let mut prefix = Vec::with_capacity(w.len() + 1);
        prefix.push(ZERO);
        for &z in &w {
            prefix.push(prefix.last().copied().unwrap_or(ZERO) + z);
        }
        let mut suffix = vec![ZERO; w.len() + 1];
        for k in (0..w.len()).rev() {
            suffix[k] = suffix[k + 1] + w[k];
        }
        Self { x, w, prefix, suffix }
    }

    /// Index range of entries with `|c + x|·unit ≤ t`.
    fn window(&self, c: i64, unit: f64, t: f64) -> (usize, usize) {
        let lo = self.x.partition_point(|&x| ((c + x) as f64 * unit) < -t);
        let hi = self.x.partition_point(|&x| ((c + x) as f64 * unit) <= t);
        (lo, hi.max(lo))
    }
}

/// Precomputed data for evaluating compositions over one chronicle.
struct Plan<'a> {
    eq: Equation,
    grid: FrequencyGrid,
    tree: &'a OrderedTree,
    gens: usize,
    inner: InnerKind,
    n_thr: f64,
    delta: f64,
    unit: f64,
    /// Prepared terminal values, by node id (empty for non-terminals).
    values: Vec<Arc<Vec<Complex64>>>,
    /// Nonzero offsets, by node id.
    active: Vec<Arc<Vec<i64>>>,
    /// Argument identity, by node id.
    arg_id: Vec<usize>,
    /// Generations whose mKdV multiplier is written in the regrouped form.
    shifted: Vec<bool>,
    sigma: Vec<i64>,
}

impl<'a> Plan<'a> {
    fn all_offsets(&self) -> Vec<i64> {
        let h = self.grid.half();
        (-h..=h).collect()
    }

    #[inline]
    fn value(&self, node: NodeId, o: i64) -> Complex64 {
        self.values[node][(o + self.grid.half()) as usize]
    }

    fn threshold(&self, j: usize, mu_t: i64, mu1: i64) -> f64 {
        if j == 1 {
            self.n_thr
        } else {
            let m = (mu_t.abs().max(mu1.abs())) as f64 * self.unit;
            cutoff_constant(j - 1) * m.powf(1.0 - self.delta)
        }
    }

    fn multiplier(&self, j: usize, xi: f64) -> f64 {
        if self.shifted[j - 1] {
            if xi == 0.0 {
                0.0
            } else {
                xi.abs().powf(0.75) * (xi.signum() * xi.abs().powf(0.25))
            }
        } else {
            xi
        }
    }

    /// `g₁` or `−g_j`.
    fn gen_factor(&self, j: usize, o_root: i64) -> Complex64 {
        let g = match self.eq {
            Equation::CubicNLS => I * self.sigma[j - 1] as f64,
            Equation::MKdV => -I * self.multiplier(j, o_root as f64 * self.grid.dxi()),
        };
        if j == 1 {
            g
        } else {
            -g
        }
    }

    /// `1/d_j` for a running modulation `μ̃_j` (lattice units).
    #[inline]
    fn inv_d(&self, mu_t: i64) -> Complex64 {
        let y = mu_t as f64 * self.unit;
        match self.eq {
            Equation::CubicNLS => I / y,
            Equation::MKdV => -I / y,
        }
    }

    fn third(&self, o: i64, known: [Option<i64>; 3]) -> [i64; 3] {
        match (self.eq, known) {
            (Equation::CubicNLS, [Some(a), Some(b), None]) => [a, b, o - a + b],
            (Equation::CubicNLS, [Some(a), None, Some(c)]) => [a, a + c - o, c],
            (Equation::CubicNLS, [None, Some(b), Some(c)]) => [o + b - c, b, c],
            (Equation::MKdV, [Some(a), Some(b), None]) => [a, b, o - a - b],
            (Equation::MKdV, [Some(a), None, Some(c)]) => [a, o - a - c, c],
            (Equation::MKdV, [None, Some(b), Some(c)]) => [o - b - c, b, c],
            _ => unreachable!("exactly two children are looped"),
        }
    }

    /// Candidate offsets for a child: its nonzero samples if terminal, all nodes otherwise.
    fn candidates(&self, node: NodeId) -> Arc<Vec<i64>> {
        if self.tree.is_terminal(node) {
            self.active[node].clone()
        } else {
            Arc::new(self.all_offsets())
        }
    }

    /// The two children to loop over (fewest candidates); the third is solved for.
    fn loop_pair(&self, children: [NodeId; 3]) -> (usize, usize) {
        let size = |k: usize| {
            if self.tree.is_terminal(children[k]) {
                self.active[children[k]].len()
            } else {
                self.grid.n()
            }
        };
        let pairs = [(0, 1), (0, 2), (1, 2)];
        *pairs
            .iter()
            .min_by_key(|(a, b)| size(*a) * size(*b))
            .expect("non-empty")
    }

    fn in_grid(&self, o: i64) -> bool {
        o.abs() <= self.grid.half()
    }

    fn table_key(&self, root: NodeId) -> [usize; 3] {
        let ch = self.tree.children(root).expect("innermost root is grown");
        ch.map(|c| self.arg_id[c])
    }

    fn build_table(&self, root: NodeId, o_a: i64) -> Table {
        let ch = self.tree.children(root).expect("innermost root is grown");
        let sigma = self.sigma[self.gens - 1];
        let (i, k) = self.loop_pair(ch);
        let (ci, ck) = (self.candidates(ch[i]), self.candidates(ch[k]));
        let mut entries = Vec::with_capacity(ci.len() * ck.len() / 2 + 1);
        for &oi in ci.iter() {
            let vi = self.value(ch[i], oi);
            for &ok in ck.iter() {
                let mut known = [None; 3];
                known[i] = Some(oi);
                known[k] = Some(ok);
                let offs = self.third(o_a, known);
                let rest = 3 - i - k;
                if !self.in_grid(offs[rest]) {
                    continue;
                }
                let vr = self.value(ch[rest], offs[rest]);
                if vr == ZERO {
                    continue;
                }
                let w = vi * self.value(ch[k], ok) * vr;
                let m = self.eq.lattice_modulation(o_a, offs[0], offs[1], offs[2]);
                entries.push((sigma * m, w));
            }
        }
        Table::new(entries)
    }

    /// Innermost sum from a table, with context `μ̃_{G−1}` = `c` and threshold `t`.
    fn table_sum(&self, table: &Table, c: i64, t: f64) -> Complex64 {
        match self.inner {
            InnerKind::Full => table.prefix[table.x.len()],
            InnerKind::Resonant => {
                let (lo, hi) = table.window(c, self.unit, t);
                table.prefix[hi] - table.prefix[lo]
            }
            InnerKind::Remainder => {
                let (lo, hi) = table.window(c, self.unit, t);
                table.prefix[lo] + table.suffix[hi]
            }
            InnerKind::Boundary => {
                let (lo, hi) = table.window(c, self.unit, t);
                let mut acc = ZERO;
                for e in (0..lo).chain(hi..table.x.len()) {
                    acc += table.w[e] * self.inv_d(c + table.x[e]);
                }
                acc
            }
        }
    }

    /// Whether generation `j` admits the running modulation `mu_new`.
    #[inline]
    fn admits(&self, j: usize, mu_new: i64, t: f64) -> bool {
        let y = (mu_new as f64 * self.unit).abs();
        if j < self.gens {
            return y > t;
        }
        match self.inner {
            InnerKind::Boundary | InnerKind::Remainder => y > t,
            InnerKind::Resonant => y <= t,
            InnerKind::Full => true,
        }
    }

    fn divides(&self, j: usize) -> bool {
        j < self.gens || self.inner == InnerKind::Boundary
    }
}

/// Shared innermost tables, keyed by argument identities and node frequency.
struct TableCache {
    tables: HashMap<[usize; 3], Vec<Option<Table>>>,
}

impl TableCache {
    fn new() -> Self {
        Self { tables: HashMap::new() }
    }

    /// Builds every table the plan can touch; returns `false` if they would be too large.
    fn prepare(&mut self, plan: &Plan) -> bool {
        let root = plan.tree.root_of(plan.gens);
        let key = plan.table_key(root);
        if self.tables.contains_key(&key) {
            return true;
        }
        let ch = plan.tree.children(root).expect("grown");
        let (i, k) = plan.loop_pair(ch);
        let per = plan.active[ch[i]].len() * plan.active[ch[k]].len();
        if per.saturating_mul(plan.grid.n()) > TABLE_ENTRY_LIMIT {
            return false;
        }
        let h = plan.grid.half();
        let tables: Vec<Option<Table>> = (-h..=h)
            .into_par_iter()
            .map(|o| Some(plan.build_table(root, o)))
            .collect();
        self.tables.insert(key, tables);
        true
    }

    fn for_plan(&self, plan: &Plan) -> Option<&[Option<Table>]> {
        let key = plan.table_key(plan.tree.root_of(plan.gens));
        self.tables.get(&key).map(|v| v.as_slice())
    }
}

type Tables<'t> = Option<&'t [Option<Table>]>;

#[inline]
fn lookup(tables: Tables<'_>, half: i64, o_a: i64) -> Option<&Table> {
    tables.and_then(|t| t[(o_a + half) as usize].as_ref())
}

/// Mutable per-sample state while descending the chronicle.
#[derive(Clone)]
struct State {
    offs: Vec<i64>,
}

impl<'a> Plan<'a> {
    /// Direct innermost sum (no table).
    fn direct_inner(&self, o_a: i64, c: i64, t: f64) -> Complex64 {
        let root = self.tree.root_of(self.gens);
        let ch = self.tree.children(root).expect("grown");
        let sigma = self.sigma[self.gens - 1];
        let (i, k) = self.loop_pair(ch);
        let (ci, ck) = (self.candidates(ch[i]), self.candidates(ch[k]));
        let rest = 3 - i - k;
        let mut acc = ZERO;
        for &oi in ci.iter() {
            let vi = self.value(ch[i], oi);
            let mut inner = ZERO;
            for &ok in ck.iter() {
                let mut known = [None; 3];
                known[i] = Some(oi);
                known[k] = Some(ok);
                let offs = self.third(o_a, known);
                if !self.in_grid(offs[rest]) {
                    continue;
                }
                let vr = self.value(ch[rest], offs[rest]);
                if vr == ZERO {
                    continue;
                }
                let mu = c + sigma * self.eq.lattice_modulation(o_a, offs[0], offs[1], offs[2]);
                if !self.admits(self.gens, mu, t) {
                    continue;
                }
                let mut w = self.value(ch[k], ok) * vr;
                if self.divides(self.gens) {
                    w *= self.inv_d(mu);
                }
                inner += w;
            }
            acc += vi * inner;
        }
        acc
    }

    fn innermost(&self, tables: Tables, o_a: i64, c: i64, t: f64) -> Complex64 {
        match lookup(tables, self.grid.half(), o_a) {
            Some(table) => self.table_sum(table, c, t),
            None => self.direct_inner(o_a, c, t),
        }
    }

    /// Dense sum over generations `j..=G` given the offsets fixed so far.
    fn dense(&self, tables: Tables, st: &mut State, j: usize, mu_t: i64, mu1: i64) -> Complex64 {
        let a = self.tree.root_of(j);
        let o_a = st.offs[a];
        let t = self.threshold(j, mu_t, mu1);
        let factor = self.gen_factor(j, o_a);
        if j == self.gens {
            return factor * self.innermost(tables, o_a, mu_t, t);
        }
        let ch = self.tree.children(a).expect("grown");
        let (i, k) = self.loop_pair(ch);
        let rest = 3 - i - k;
        let (ci, ck) = (self.candidates(ch[i]), self.candidates(ch[k]));
        let sigma = self.sigma[j - 1];
        let mut acc = ZERO;
        for &oi in ci.iter() {
            for &ok in ck.iter() {
                let mut known = [None; 3];
                known[i] = Some(oi);
                known[k] = Some(ok);
                let offs = self.third(o_a, known);
                if !self.in_grid(offs[rest]) {
                    continue;
                }
                let mut val = Complex64::new(1.0, 0.0);
                for (slot, &c) in ch.iter().enumerate() {
                    if self.tree.is_terminal(c) {
                        val *= self.value(c, offs[slot]);
                    }
                }
                if val == ZERO {
                    continue;
                }
                let m = self.eq.lattice_modulation(o_a, offs[0], offs[1], offs[2]);
                let mu_new = mu_t + sigma * m;
                if !self.admits(j, mu_new, t) {
                    continue;
                }
                let mu1_new = if j == 1 { mu_new } else { mu1 };
                for (slot, &c) in ch.iter().enumerate() {
                    st.offs[c] = offs[slot];
                }
                let inner = self.dense(tables, st, j + 1, mu_new, mu1_new);
                acc += val * self.inv_d(mu_new) * inner;
            }
        }
        factor * acc
    }
}

/// Discrete proposal distribution over grid offsets.
struct Proposal {
    cdf: Vec<f64>,
    pmf: Vec<f64>,
    h: i64,
}

impl Proposal {
    fn new(weights: &[f64], h: i64) -> Self {
        let total: f64 = weights.iter().sum();
        let pmf: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut cdf = Vec::with_capacity(pmf.len());
        let mut acc = 0.0;
        for &p in &pmf {
            acc += p;
            cdf.push(acc);
        }
        Self { cdf, pmf, h }
    }

    /// Importance proposal `∝ |f| + floor·mean|f|`, falling back to uniform.
    fn from_values(values: &[Complex64], h: i64) -> Self {
        let mean = values.iter().map(|z| z.norm()).sum::<f64>() / values.len() as f64;
        if mean == 0.0 {
            return Self::new(&vec![1.0; values.len()], h);
        }
        let w: Vec<f64> = values.iter().map(|z| z.norm() + 1e-3 * mean).collect();
        Self::new(&w, h)
    }

    #[inline]
    fn sample(&self, u: f64) -> (i64, f64) {
        let k = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        (k as i64 - self.h, self.pmf[k])
    }
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

#[inline]
fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    r
}

impl<'a> Plan<'a> {
    fn proposals(&self) -> Vec<Option<Proposal>> {
        let h = self.grid.half();
        // Later roots are sampled from the profile of the first argument.
        let proxy = self.values.iter().find(|v| !v.is_empty()).cloned().unwrap_or_default();
        self.tree
            .node_ids()
            .map(|id| {
                if id == 0 {
                    None
                } else if self.tree.is_terminal(id) {
                    Some(Proposal::from_values(&self.values[id], h))
                } else {
                    Some(Proposal::from_values(&proxy, h))
                }
            })
            .collect()
    }

    /// One importance-weighted sample of the sum over generations `j..=G`.
    #[allow(clippy::too_many_arguments)]
    fn sample(
        &self,
        tables: Tables,
        props: &[Option<Proposal>],
        u: &[f64],
        st: &mut State,
        j: usize,
        mu_t: i64,
        mu1: i64,
    ) -> Complex64 {
        let a = self.tree.root_of(j);
        let o_a = st.offs[a];
        let t = self.threshold(j, mu_t, mu1);
        let factor = self.gen_factor(j, o_a);
        let inner_exact = j == self.gens
            && lookup(tables, self.grid.half(), o_a)
                .is_some_and(|tb| self.inner != InnerKind::Boundary || tb.x.len() <= QMC_EXACT_BOUNDARY);
        if inner_exact {
            return factor * self.innermost(tables, o_a, mu_t, t);
        }
        let ch = self.tree.children(a).expect("grown");
        let (i, k) = self.loop_pair(ch);
        let rest = 3 - i - k;
        let (oi, pi) = props[ch[i]].as_ref().expect("child").sample(u[2 * (j - 1)]);
        let (ok, pk) = props[ch[k]].as_ref().expect("child").sample(u[2 * (j - 1) + 1]);
        let mut known = [None; 3];
        known[i] = Some(oi);
        known[k] = Some(ok);
        let offs = self.third(o_a, known);
        if !self.in_grid(offs[rest]) {
            return ZERO;
        }
        let mut val = Complex64::new(1.0 / (pi * pk), 0.0);
        for (slot, &c) in ch.iter().enumerate() {
            if self.tree.is_terminal(c) {
                val *= self.value(c, offs[slot]);
            }
        }
        if val == ZERO {
            return ZERO;
        }
        let m = self.eq.lattice_modulation(o_a, offs[0], offs[1], offs[2]);
        let mu_new = mu_t + self.sigma[j - 1] * m;
        if !self.admits(j, mu_new, t) {
            return ZERO;
        }
        if self.divides(j) {
            val *= self.inv_d(mu_new);
        }
        if j == self.gens {
            return factor * val;
        }
        let mu1_new = if j == 1 { mu_new } else { mu1 };
        for (slot, &c) in ch.iter().enumerate() {
            st.offs[c] = offs[slot];
        }
        factor * val * self.sample(tables, props, u, st, j + 1, mu_new, mu1_new)
    }
}

/// Terminal arguments in left-to-right order, prepared for one composition.
struct PreparedArgs {
    /// Distinct prepared arrays and the index of each terminal's array.
    arrays: Vec<Arc<Vec<Complex64>>>,
    active: Vec<Arc<Vec<i64>>>,
    of_terminal: Vec<usize>,
    /// Argument address and conjugation, identifying a prepared array across compositions.
    identity: Vec<usize>,
}

fn prepare_args(tree: &OrderedTree, args: &[&GridFunction], eq: Equation, t: f64) -> Result<PreparedArgs> {
    let terminals = tree.terminals();
    if args.len() != terminals.len() {
        return Err(Error::InvalidArgument(format!(
            "a generation-{} composition takes {} arguments, got {}",
            tree.generations(),
            terminals.len(),
            args.len()
        )));
    }
    for a in args {
        a.check_same_grid(args[0])?;
    }
    let grid = *args[0].grid();
    let h = grid.half();
    let mut arrays: Vec<Arc<Vec<Complex64>>> = Vec::new();
    let mut active = Vec::new();
    let mut keys: Vec<(*const GridFunction, bool)> = Vec::new();
    let mut of_terminal = Vec::with_capacity(terminals.len());
    for (pos, &b) in terminals.iter().enumerate() {
        let conj = eq == Equation::CubicNLS && tree.is_conjugated(b);
        let key = (args[pos] as *const GridFunction, conj);
        let idx = match keys.iter().position(|k| *k == key) {
            Some(i) => i,
            None => {
                let u = from_interaction(args[pos], t, eq);
                let vals: Vec<Complex64> = u.values().iter().map(|z| if conj { z.conj() } else { *z }).collect();
                let act: Vec<i64> = vals
                    .iter()
                    .enumerate()
                    .filter(|(_, z)| **z != ZERO)
                    .map(|(k, _)| k as i64 - h)
                    .collect();
                keys.push(key);
                arrays.push(Arc::new(vals));
                active.push(Arc::new(act));
                keys.len() - 1
            }
        };
        of_terminal.push(idx);
    }
    let identity = keys.iter().map(|(p, c)| (*p as usize) ^ usize::from(*c)).collect();
    Ok(PreparedArgs {
        arrays,
        active,
        of_terminal,
        identity,
    })
}

/// Evaluates one composition over `tree` with the innermost treatment `inner`.
///
/// `shifted` marks generations whose mKdV multiplier is regrouped as
/// `|ξ|^{3/4}·sgn(ξ)|ξ|^{1/4}`.
pub fn compose(
    tree: &OrderedTree,
    args: &[&GridFunction],
    cfg: &ReductionConfig,
    t: f64,
    inner: InnerKind,
) -> Result<Evaluation> {
    compose_with(
        tree,
        args,
        cfg,
        t,
        inner,
        &vec![false; tree.generations()],
        &mut TableCache::new(),
    )
}

fn compose_with(
    tree: &OrderedTree,
    args: &[&GridFunction],
    cfg: &ReductionConfig,
    t: f64,
    inner: InnerKind,
    shifted: &[bool],
    cache: &mut TableCache,
) -> Result<Evaluation> {
    cfg.validate()?;
    let prepared = prepare_args(tree, args, cfg.equation, t)?;
    let grid = *args[0].grid();
    // No lattice modulation exceeds N: every first-generation `> N` window is empty.
    let reach = (2 * grid.half()) as f64;
    let max_modulation = match cfg.equation {
        Equation::CubicNLS => 2.0 * reach * reach,
        Equation::MKdV => 3.0 * reach * reach * reach,
    } * cfg.equation.modulation_unit(grid.dxi());
    if cfg.n >= max_modulation
        && (tree.generations() >= 2 || matches!(inner, InnerKind::Boundary | InnerKind::Remainder))
    {
        return Ok(Evaluation::zero(grid));
    }
    let terminals = tree.terminals();
    let mut values = vec![Arc::new(Vec::new()); tree.node_count()];
    let mut active = vec![Arc::new(Vec::new()); tree.node_count()];
    let mut arg_id = vec![usize::MAX; tree.node_count()];
    for (pos, &b) in terminals.iter().enumerate() {
        let idx = prepared.of_terminal[pos];
        values[b] = prepared.arrays[idx].clone();
        active[b] = prepared.active[idx].clone();
        arg_id[b] = prepared.identity[idx];
    }
    let sigma = tree
        .roots()
        .iter()
        .map(|&r| {
            if cfg.equation == Equation::CubicNLS && tree.is_conjugated(r) {
                -1
            } else {
                1
            }
        })
        .collect();
    let plan = Plan {
        eq: cfg.equation,
        grid,
        tree,
        gens: tree.generations(),
        inner,
        n_thr: cfg.n,
        delta: cfg.delta,
        unit: cfg.equation.modulation_unit(grid.dxi()),
        values,
        active,
        arg_id,
        shifted: shifted.to_vec(),
        sigma,
    };
    let have_tables = plan.gens > 1 && cache.prepare(&plan);
    let tables = if have_tables { cache.for_plan(&plan) } else { None };
    let dense = cfg.use_dense(plan.gens, grid.n());
    let h = grid.half();
    let scale = grid.dxi().powi(2 * plan.gens as i32);
    let results: Vec<(Complex64, f64)> = if dense {
        (-h..=h)
            .into_par_iter()
            .map(|o| {
                let mut st = State {
                    offs: vec![0; tree.node_count()],
                };
                st.offs[0] = o;
                (plan.dense(tables, &mut st, 1, 0, 0), 0.0)
            })
            .collect()
    } else {
        qmc_all(&plan, tables, cfg)
    };
    let out: Vec<Complex64> = results
        .iter()
        .enumerate()
        .map(|(k, (z, _))| {
            let xi = grid.node(k);
            let phase = if t == 0.0 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::from_polar(1.0, cfg.equation.interaction_exponent(xi) * t)
            };
            z * scale * phase
        })
        .collect();
    let std_error = results.iter().map(|(_, e)| e * scale).collect();
    Ok(Evaluation {
        value: GridFunction::from_parts(grid, out, false),
        std_error,
    })
}

fn qmc_all(plan: &Plan, tables: Tables, cfg: &ReductionConfig) -> Vec<(Complex64, f64)> {
    let props = plan.proposals();
    let dims = 2 * plan.gens;
    let reps = cfg.qmc_replicates;
    let per_rep = cfg.qmc_samples.div_ceil(reps).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let shifts: Vec<Vec<f64>> = (0..reps)
        .map(|_| (0..dims).map(|_| rng.random::<f64>()).collect())
        .collect();
    let h = plan.grid.half();
    (-h..=h)
        .into_par_iter()
        .map(|o| {
            let mut st = State {
                offs: vec![0; plan.tree.node_count()],
            };
            let mut means = Vec::with_capacity(reps);
            let mut u = vec![0.0; dims];
            for shift in &shifts {
                let mut acc = ZERO;
                for i in 0..per_rep {
                    for (d, ud) in u.iter_mut().enumerate() {
                        let x = radical_inverse(i as u64 + 1, PRIMES[d]) + shift[d];
                        *ud = x - x.floor();
                    }
                    st.offs[0] = o;
                    acc += plan.sample(tables, &props, &u, &mut st, 1, 0, 0);
                }
                means.push(acc / per_rep as f64);
            }
            let mean = means.iter().sum::<Complex64>() / reps as f64;
            let var = means.iter().map(|m| (m - mean).norm_sqr()).sum::<f64>() / (reps - 1) as f64;
            (mean, (var / reps as f64).sqrt())
        })
        .collect()
}

fn repeat_args<'a>(v: &'a GridFunction, tree: &OrderedTree) -> Vec<&'a GridFunction> {
    vec![v; 2 * tree.generations() + 1]
}

/// `𝔖₀(𝒯; v₁, …, v_{2J+1})`.
pub fn s0_compose(tree: &OrderedTree, args: &[&GridFunction], cfg: &ReductionConfig, t: f64) -> Result<GridFunction> {
    Ok(compose(tree, args, cfg, t, InnerKind::Boundary)?.value)
}

/// `𝔖₁(𝒯; v₁, …, v_{2J+1})`; at `J = 1` this is `𝒩_{≤N}`.
pub fn s1_compose(tree: &OrderedTree, args: &[&GridFunction], cfg: &ReductionConfig, t: f64) -> Result<GridFunction> {
    Ok(compose(tree, args, cfg, t, InnerKind::Resonant)?.value)
}

fn tree_sum(
    trees: &[OrderedTree],
    v: &GridFunction,
    cfg: &ReductionConfig,
    t: f64,
    inner: InnerKind,
) -> Result<Evaluation> {
    let mut total = Evaluation::zero(*v.grid());
    let mut cache = TableCache::new();
    for tree in trees {
        let args = repeat_args(v, tree);
        let e = compose_with(tree, &args, cfg, t, inner, &vec![false; tree.generations()], &mut cache)?;
        total.accumulate(&e, 1.0);
    }
    Ok(total)
}

fn term(kind: TermKind, j: usize, t: f64, e: Evaluation) -> NormalFormTerm {
    let std_error = e.max_std_error();
    NormalFormTerm {
        kind,
        j,
        value: e.value,
        t,
        std_error,
    }
}

/// `𝒩₀^{(j)}(v)`, the sum of `𝔖₀` over all chronicles of generation `j − 1`.
pub fn boundary_term(v: &GridFunction, j: usize, cfg: &ReductionConfig, t: f64) -> Result<NormalFormTerm> {
    Ok(term(TermKind::Boundary, j, t, boundary_evaluation(v, j, cfg, t)?))
}

/// [`boundary_term`] with per-frequency standard errors.
pub fn boundary_evaluation(v: &GridFunction, j: usize, cfg: &ReductionConfig, t: f64) -> Result<Evaluation> {
    if j < 2 || j - 1 > cfg.j_max {
        return Err(Error::InvalidArgument(format!(
            "boundary terms exist for 2 <= j <= J_max + 1 = {}, got {j}",
            cfg.j_max + 1
        )));
    }
    let trees = enumerate_ordered_trees(j - 1)?;
    tree_sum(&trees, v, cfg, t, InnerKind::Boundary)
}

/// `𝒩₁^{(j)}(v)`: `𝒩_{≤N}(v)` for `j = 1`, else the sum of `𝔖₁` over generation `j`.
pub fn resonant_term(v: &GridFunction, j: usize, cfg: &ReductionConfig, t: f64) -> Result<NormalFormTerm> {
    Ok(term(TermKind::Resonant, j, t, resonant_evaluation(v, j, cfg, t)?))
}

/// [`resonant_term`] with per-frequency standard errors.
pub fn resonant_evaluation(v: &GridFunction, j: usize, cfg: &ReductionConfig, t: f64) -> Result<Evaluation> {
    if j == 0 || j > cfg.j_max + 1 {
        return Err(Error::InvalidArgument(format!(
            "resonant terms exist for 1 <= j <= J_max + 1 = {}, got {j}",
            cfg.j_max + 1
        )));
    }
    cfg.validate()?;
    if j == 1 {
        let spec = TrilinearSpec::nonlinearity(cfg.equation, t)
            .with_window(crate::trilinear::ModulationWindow::leq(0.0, cfg.n));
        let value = apply(&spec, v, v, v)?;
        return Ok(Evaluation {
            std_error: vec![0.0; value.grid().n()],
            value,
        });
    }
    let trees = enumerate_ordered_trees(j)?;
    tree_sum(&trees, v, cfg, t, InnerKind::Resonant)
}

/// `𝒩₂^{(J+1)}(v)`, the remainder after `J` reduction steps.
pub fn remainder_term(v: &GridFunction, j: usize, cfg: &ReductionConfig, t: f64) -> Result<NormalFormTerm> {
    Ok(term(TermKind::Remainder, j + 1, t, remainder_evaluation(v, j, cfg, t)?))
}

/// [`remainder_term`] with per-frequency standard errors.
pub fn remainder_evaluation(v: &GridFunction, j: usize, cfg: &ReductionConfig, t: f64) -> Result<Evaluation> {
    if j == 0 || j > cfg.j_max {
        return Err(Error::InvalidArgument(format!(
            "remainder terms exist for 1 <= J <= J_max = {}, got {j}",
            cfg.j_max
        )));
    }
    let trees = enumerate_ordered_trees(j + 1)?;
    tree_sum(&trees, v, cfg, t, InnerKind::Remainder)
}

/// `𝒩₂^{(1)}(v) = 𝒩_{>N}(v)`.
pub fn first_remainder(v: &GridFunction, cfg: &ReductionConfig, t: f64) -> Result<GridFunction> {
    cfg.validate()?;
    let spec =
        TrilinearSpec::nonlinearity(cfg.equation, t).with_window(crate::trilinear::ModulationWindow::gt(0.0, cfg.n));
    apply(&spec, v, v, v)
}

/// `𝒩^{(J+1)}(v)` from its own chronicles (innermost generation unrestricted).
pub fn full_term(v: &GridFunction, j: usize, cfg: &ReductionConfig, t: f64) -> Result<Evaluation> {
    let trees = enumerate_ordered_trees(j + 1)?;
    tree_sum(&trees, v, cfg, t, InnerKind::Full)
}

/// `𝒩^{(J+1)}(v) = −Σ_{𝒯∈𝔗(J)} Σ_k 𝔖₀(𝒯; v, …, 𝒩(v), …, v)`, the `k`th slot
/// carrying `∂_t v = 𝒩(v)`.
pub fn full_term_via_boundary(v: &GridFunction, j: usize, cfg: &ReductionConfig, t: f64) -> Result<Evaluation> {
    let dv = apply(&TrilinearSpec::nonlinearity(cfg.equation, t), v, v, v)?;
    let trees = enumerate_ordered_trees(j)?;
    let mut total = Evaluation::zero(*v.grid());
    let mut cache = TableCache::new();
    for tree in &trees {
        for k in 0..2 * j + 1 {
            let mut args = repeat_args(v, tree);
            args[k] = &dv;
            let e = compose_with(tree, &args, cfg, t, InnerKind::Boundary, &vec![false; j], &mut cache)?;
            total.accumulate(&e, -1.0);
        }
    }
    Ok(total)
}

/// `𝒩^{(J+1)}(v)` for mKdV in the derivative-shifted form: the last-generation
/// slot carries `|ξ|^{3/4}𝓜(v)` and the multipliers of the generations on the
/// path to it are regrouped as `|ξ|^{3/4}·sgn(ξ)|ξ|^{1/4}`.
pub fn mkdv_shifted_term(v: &GridFunction, j: usize, cfg: &ReductionConfig, t: f64) -> Result<GridFunction> {
    if cfg.equation != Equation::MKdV {
        return Err(Error::EquationMismatch(
            "the derivative-shifted representation is specific to mKdV".into(),
        ));
    }
    let v_real = if v.is_real_physical() {
        v.clone()
    } else {
        v.clone().into_real_physical()?
    };
    let quarter = apply_mkdv_quarter(&v_real, t)?;
    let slot = quarter.map(|xi, z| z * xi.abs().powf(0.75));
    let trees = enumerate_ordered_trees(j)?;
    let mut total = Evaluation::zero(*v.grid());
    let mut cache = TableCache::new();
    for tree in &trees {
        for (k, &p) in tree.terminals().iter().enumerate() {
            let path = tree.path_generation_set(p)?;
            let shifted: Vec<bool> = (1..=j).map(|g| path.contains(&g)).collect();
            let mut args = repeat_args(v, tree);
            args[k] = &slot;
            let e = compose_with(tree, &args, cfg, t, InnerKind::Boundary, &shifted, &mut cache)?;
            total.accumulate(&e, -1.0);
        }
    }
    Ok(total.value)
}

/// Per-tree norms of every term up to `J_max`, as `gen,kind,tree_index,l2,hs,flinf`.
pub fn write_diagnostics(v: &GridFunction, cfg: &ReductionConfig, t: f64, path: &Path) -> Result<()> {
    let mut out = String::from("gen,kind,tree_index,l2,hs,flinf\n");
    let mut row = |gen: usize, kind: &str, idx: usize, f: &GridFunction| {
        out.push_str(&format!(
            "{gen},{kind},{idx},{:.17e},{:.17e},{:.17e}\n",
            l2_norm(f),
            sobolev_norm(f, cfg.s),
            fl_norm(f, FlExponent::Infinity)
        ));
    };
    row(1, "resonant", 0, &resonant_term(v, 1, cfg, t)?.value);
    for j in 2..=cfg.j_max + 1 {
        for (idx, tree) in enumerate_ordered_trees(j - 1)?.iter().enumerate() {
            row(j, "boundary", idx, &s0_compose(tree, &repeat_args(v, tree), cfg, t)?);
        }
        for (idx, tree) in enumerate_ordered_trees(j)?.iter().enumerate() {
            row(j, "resonant", idx, &s1_compose(tree, &repeat_args(v, tree), cfg, t)?);
        }
    }
    for (idx, tree) in enumerate_ordered_trees(cfg.j_max + 1)?.iter().enumerate() {
        let e = compose(tree, &repeat_args(v, tree), cfg, t, InnerKind::Remainder)?;
        row(cfg.j_max + 1, "remainder", idx, &e.value);
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}
