//! Run configuration: TOML sections mirroring the engine, solver and harness
//! parameters. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use normform::grid::{read_snapshot, sobolev_norm};
use normform::harness::{sample, Axis, DecaySweep, LemmaSweep, Quantity, SampleProfile};
use normform::trilinear::LemmaId;
use normform::{Equation, EvalMode, FrequencyGrid, GridFunction, ReductionConfig, SolverConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: GridSection,
    pub datum: DatumSection,
    pub reduction: ReductionSection,
    pub solver: SolverSection,
    pub verify: VerifySection,
    pub decay: DecaySection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub xi_max: f64,
    pub n: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { xi_max: 20.0, n: 33 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatumKind {
    Zero,
    Gaussian,
    Sample,
    File,
}

/// Initial datum. A Gaussian is rescaled to `H^s` norm `norm` when `norm > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatumSection {
    pub kind: DatumKind,
    pub amplitude: f64,
    pub norm: f64,
    pub width: f64,
    pub center: f64,
    /// Linear phase `e^{i·phase·ξ}`, a translation in physical space.
    pub phase: f64,
    pub s_decay: f64,
    pub seed: u64,
    pub hermitian: bool,
    pub path: Option<PathBuf>,
}

impl Default for DatumSection {
    fn default() -> Self {
        Self {
            kind: DatumKind::Gaussian,
            amplitude: 0.1,
            norm: 0.0,
            width: 1.5,
            center: 0.0,
            phase: 0.0,
            s_decay: 0.0,
            seed: 0,
            hermitian: false,
            path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EquationName {
    Nls,
    Mkdv,
}

impl From<EquationName> for Equation {
    fn from(e: EquationName) -> Self {
        match e {
            EquationName::Nls => Equation::CubicNLS,
            EquationName::Mkdv => Equation::MKdV,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Auto,
    Dense,
    Qmc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReductionSection {
    pub equation: EquationName,
    pub n: f64,
    pub delta: f64,
    pub eps: f64,
    pub j_max: usize,
    /// Working Sobolev index; the equation's floor when absent.
    pub s: Option<f64>,
    pub mode: ModeName,
    pub qmc_samples: usize,
    pub qmc_replicates: usize,
    pub seed: u64,
}

impl Default for ReductionSection {
    fn default() -> Self {
        let base = ReductionConfig::new(Equation::CubicNLS, 2.0);
        Self {
            equation: EquationName::Nls,
            n: base.n,
            delta: base.delta,
            eps: base.eps,
            j_max: base.j_max,
            s: None,
            mode: ModeName::Auto,
            qmc_samples: base.qmc_samples,
            qmc_replicates: base.qmc_replicates,
            seed: base.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub t_final: f64,
    pub n_t: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub c_hat: f64,
    pub kappa: f64,
    pub ref_substeps: usize,
    pub tail_points: usize,
    /// Replace `N` and `T` by the parameter selection rule.
    pub pick_parameters: bool,
    /// On non-contraction, retry with `T` halved up to this many times.
    pub retries: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let base = SolverConfig::new(ReductionConfig::new(Equation::CubicNLS, 2.0), 0.01);
        Self {
            t_final: base.t_final,
            n_t: base.n_t,
            tol: base.tol,
            max_iter: base.max_iter,
            c_hat: base.c_hat,
            kappa: base.kappa,
            ref_substeps: base.ref_substeps,
            tail_points: base.tail_points,
            pick_parameters: false,
            retries: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub lemma: String,
    pub xi_max: Option<f64>,
    pub n: Option<usize>,
    pub m_levels: Option<Vec<f64>>,
    pub alphas: Option<Vec<f64>>,
    pub trials: Option<usize>,
    pub s: Option<f64>,
    pub s_decay: Option<f64>,
    pub eps: Option<f64>,
    pub seed: u64,
    pub time: f64,
    pub slot: usize,
    pub tail: bool,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            lemma: "NLS2".into(),
            xi_max: None,
            n: None,
            m_levels: None,
            alphas: None,
            trials: None,
            s: None,
            s_decay: None,
            eps: None,
            seed: 0,
            time: 0.0,
            slot: 1,
            tail: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantityName {
    Boundary,
    Resonant,
    Remainder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AxisName {
    N,
    J,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecaySection {
    pub quantity: QuantityName,
    pub axis: AxisName,
    pub j: usize,
    pub values: Vec<f64>,
    pub samples: usize,
    pub s_decay: Option<f64>,
    pub seed: u64,
}

impl Default for DecaySection {
    fn default() -> Self {
        Self {
            quantity: QuantityName::Boundary,
            axis: AxisName::N,
            j: 2,
            values: vec![4.0, 8.0, 16.0, 32.0, 64.0],
            samples: 1,
            s_decay: None,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

/// Reading or parsing the file failed.
#[derive(Debug)]
pub struct ConfigError(pub anyhow::Error);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for ConfigError {}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(ConfigError)?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))
            .map_err(ConfigError)?;
        if let Some(p) = cfg.datum.path.as_mut() {
            if p.is_relative() {
                *p = path.parent().unwrap_or(Path::new(".")).join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Applies `--seed` to every seeded component.
    pub fn set_seed(&mut self, seed: u64) {
        self.datum.seed = seed;
        self.reduction.seed = seed;
        self.verify.seed = seed;
        self.decay.seed = seed;
    }

    pub fn grid(&self) -> anyhow::Result<FrequencyGrid> {
        Ok(FrequencyGrid::new(self.grid.xi_max, self.grid.n)?)
    }

    pub fn reduction(&self) -> anyhow::Result<ReductionConfig> {
        let r = &self.reduction;
        let mut cfg = ReductionConfig::new(r.equation.into(), r.n);
        cfg.delta = r.delta;
        cfg.eps = r.eps;
        cfg.j_max = r.j_max;
        if let Some(s) = r.s {
            cfg.s = s;
        }
        cfg.mode = match r.mode {
            ModeName::Auto => EvalMode::Auto,
            ModeName::Dense => EvalMode::Dense,
            ModeName::Qmc => EvalMode::Qmc,
        };
        cfg.qmc_samples = r.qmc_samples;
        cfg.qmc_replicates = r.qmc_replicates;
        cfg.seed = r.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn solver(&self) -> anyhow::Result<SolverConfig> {
        let s = &self.solver;
        let mut cfg = SolverConfig::new(self.reduction()?, s.t_final);
        cfg.n_t = s.n_t;
        cfg.tol = s.tol;
        cfg.max_iter = s.max_iter;
        cfg.c_hat = s.c_hat;
        cfg.kappa = s.kappa;
        cfg.ref_substeps = s.ref_substeps;
        cfg.tail_points = s.tail_points;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn datum(&self) -> anyhow::Result<GridFunction> {
        let grid = self.grid()?;
        let d = &self.datum;
        let s = self.reduction()?.s;
        let f = match d.kind {
            DatumKind::Zero => GridFunction::zeros(grid),
            DatumKind::Gaussian => {
                if !(d.width > 0.0) {
                    bail!("datum.width must be positive");
                }
                let g = GridFunction::from_fn(grid, |xi| {
                    let env = (-(xi - d.center).powi(2) / (2.0 * d.width * d.width)).exp();
                    Complex64::from_polar(d.amplitude * env, d.phase * xi)
                })?;
                if d.norm > 0.0 {
                    let current = sobolev_norm(&g, s);
                    if current == 0.0 {
                        bail!("cannot rescale a zero datum to norm {}", d.norm);
                    }
                    &g * (d.norm / current)
                } else {
                    g
                }
            }
            DatumKind::Sample => sample(
                grid,
                &SampleProfile {
                    s_decay: d.s_decay,
                    seed: d.seed,
                    amplitude: d.amplitude,
                    hermitian: d.hermitian,
                },
            )?,
            DatumKind::File => {
                let Some(path) = &d.path else {
                    bail!("datum.kind = \"file\" needs datum.path");
                };
                let f = read_snapshot(path)?;
                if f.grid() != &grid {
                    bail!("datum file grid {:?} differs from [grid] {:?}", f.grid(), grid);
                }
                f
            }
        };
        let needs_real = self.reduction.equation == EquationName::Mkdv || d.hermitian;
        Ok(if needs_real && !f.is_real_physical() {
            f.hermitian_part().into_real_physical()?
        } else {
            f
        })
    }

    pub fn lemma_sweep(&self) -> anyhow::Result<LemmaSweep> {
        let v = &self.verify;
        let lemma: LemmaId = v.lemma.parse()?;
        let mut sweep = LemmaSweep::new(lemma);
        if let Some(x) = v.xi_max {
            sweep.xi_max = x;
        }
        if let Some(n) = v.n {
            sweep.n = n;
        }
        if let Some(m) = &v.m_levels {
            sweep.m_levels = m.clone();
        }
        if let Some(a) = &v.alphas {
            sweep.alphas = a.clone();
        }
        if let Some(t) = v.trials {
            sweep.trials = t;
        }
        if let Some(s) = v.s {
            sweep.s = s;
            sweep.s_decay = s;
        }
        if let Some(s) = v.s_decay {
            sweep.s_decay = s;
        }
        if let Some(e) = v.eps {
            sweep.eps = e;
        }
        sweep.seed = v.seed;
        sweep.time = v.time;
        sweep.slot = v.slot;
        sweep.tail = v.tail;
        sweep.validate()?;
        Ok(sweep)
    }

    pub fn decay_sweep(&self) -> anyhow::Result<DecaySweep> {
        let d = &self.decay;
        let reduction = self.reduction()?;
        Ok(DecaySweep {
            quantity: match d.quantity {
                QuantityName::Boundary => Quantity::Boundary,
                QuantityName::Resonant => Quantity::Resonant,
                QuantityName::Remainder => Quantity::Remainder,
            },
            axis: match d.axis {
                AxisName::N => Axis::N,
                AxisName::J => Axis::J,
            },
            reduction,
            j: d.j,
            values: d.values.clone(),
            xi_max: self.grid.xi_max,
            n: self.grid.n,
            profile: SampleProfile::new(d.s_decay.unwrap_or(reduction.s), d.seed),
            samples: d.samples,
        })
    }
}
