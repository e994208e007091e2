#![allow(dead_code)]

use normform::dispersion::accumulate_modulations;
use normform::nf_engine::InnerKind;
use normform::trilinear::{Kernel, TrilinearSpec, Weight};
use normform::{
    cutoff_constant, Equation, EvalMode, FrequencyGrid, GenerationModulation, GridFunction, OrderedTree,
    ReductionConfig,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_fn(grid: FrequencyGrid, seed: u64, width: f64) -> GridFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = grid
        .nodes()
        .iter()
        .map(|&xi| {
            let a = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            a * (-(xi * xi) / (2.0 * width * width)).exp()
        })
        .collect();
    GridFunction::new(grid, values).unwrap()
}

pub fn real_fn(grid: FrequencyGrid, seed: u64, width: f64) -> GridFunction {
    random_fn(grid, seed, width)
        .hermitian_part()
        .into_real_physical()
        .unwrap()
}

pub fn max_diff(a: &GridFunction, b: &GridFunction) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

pub fn max_abs(a: &GridFunction) -> f64 {
    a.values().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn rel(a: &GridFunction, b: &GridFunction) -> f64 {
    max_diff(a, b) / max_abs(b).max(1e-300)
}

pub fn dense(eq: Equation, n: f64, delta: f64) -> ReductionConfig {
    let mut cfg = ReductionConfig::new(eq, n);
    cfg.delta = delta;
    cfg.mode = EvalMode::Dense;
    cfg.j_max = 3;
    cfg
}

/// Brute force over every node-frequency assignment, with float modulations,
/// explicit per-term phases and per-generation constants.
pub fn oracle(
    tree: &OrderedTree,
    args: &[&GridFunction],
    cfg: &ReductionConfig,
    t: f64,
    inner: InnerKind,
) -> GridFunction {
    let eq = cfg.equation;
    let grid = *args[0].grid();
    let h = grid.half();
    let dxi = grid.dxi();
    let g_count = tree.generations();
    let terminals = tree.terminals();
    let s = if eq == Equation::CubicNLS { -1.0 } else { 1.0 };
    let i = Complex64::new(0.0, 1.0);

    let term = |freqs: &[f64]| -> Complex64 {
        let gm: GenerationModulation = accumulate_modulations(tree, freqs, eq).unwrap();
        let mut coef = Complex64::new(1.0, 0.0);
        for k in 1..=g_count {
            let mt = gm.mu_tilde[k - 1];
            let thr = if k == 1 {
                cfg.n
            } else {
                cutoff_constant(k - 1) * gm.m(k - 1).powf(1.0 - cfg.delta)
            };
            let innermost = k == g_count;
            let (admit, divide) = if !innermost {
                (mt.abs() > thr, true)
            } else {
                match inner {
                    InnerKind::Boundary => (mt.abs() > thr, true),
                    InnerKind::Resonant => (mt.abs() <= thr, false),
                    InnerKind::Remainder => (mt.abs() > thr, false),
                    InnerKind::Full => (true, false),
                }
            };
            if !admit {
                return Complex64::new(0.0, 0.0);
            }
            let g = match eq {
                Equation::CubicNLS => i * gm.sigma[k - 1] as f64,
                Equation::MKdV => -i * freqs[tree.root_of(k)],
            };
            coef *= if k == 1 { g } else { -g };
            if divide {
                coef /= s * i * mt;
            }
        }
        let mut prod = coef * Complex64::from_polar(1.0, s * gm.mu_tilde[g_count - 1] * t);
        for (pos, &b) in terminals.iter().enumerate() {
            let z = args[pos].values()[grid.index((freqs[b] / dxi).round() as i64).unwrap()];
            prod *= if eq == Equation::CubicNLS && tree.is_conjugated(b) {
                z.conj()
            } else {
                z
            };
        }
        prod
    };

    // Assign the children of r^{(k)} for k = j.., recursing over generations.
    fn descend(
        tree: &OrderedTree,
        eq: Equation,
        h: i64,
        dxi: f64,
        j: usize,
        freqs: &mut Vec<f64>,
        f: &dyn Fn(&[f64]) -> Complex64,
    ) -> Complex64 {
        if j > tree.generations() {
            return f(freqs);
        }
        let a = tree.root_of(j);
        let o = (freqs[a] / dxi).round() as i64;
        let [c1, c2, c3] = tree.children(a).unwrap();
        let mut acc = Complex64::new(0.0, 0.0);
        for o1 in -h..=h {
            for o2 in -h..=h {
                let o3 = eq.third_offset(o, o1, o2);
                if o3.abs() > h {
                    continue;
                }
                freqs[c1] = o1 as f64 * dxi;
                freqs[c2] = o2 as f64 * dxi;
                freqs[c3] = o3 as f64 * dxi;
                acc += descend(tree, eq, h, dxi, j + 1, freqs, f);
            }
        }
        acc
    }

    let values = (-h..=h)
        .map(|o| {
            let mut freqs = vec![0.0; tree.node_count()];
            freqs[0] = o as f64 * dxi;
            descend(tree, eq, h, dxi, 1, &mut freqs, &term) * dxi.powi(2 * g_count as i32)
        })
        .collect();
    GridFunction::new(grid, values).unwrap()
}

/// Dense triple loop over node triples with the constraint checked on floating
/// nodes and the modulation taken from its defining polynomial.
pub fn trilinear_oracle(spec: &TrilinearSpec, v: [&GridFunction; 3]) -> GridFunction {
    let g = *v[0].grid();
    let nodes = g.nodes();
    let eq = spec.equation;
    let i = Complex64::new(0.0, 1.0);
    let mut out = vec![Complex64::new(0.0, 0.0); g.n()];
    for (k, &xi) in nodes.iter().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (k1, &x1) in nodes.iter().enumerate() {
            for (k2, &x2) in nodes.iter().enumerate() {
                for (k3, &x3) in nodes.iter().enumerate() {
                    let (constraint, m, phase) = match eq {
                        Equation::CubicNLS => (x1 - x2 + x3, xi * xi - x1 * x1 + x2 * x2 - x3 * x3, -1.0),
                        Equation::MKdV => (x1 + x2 + x3, xi.powi(3) - x1.powi(3) - x2.powi(3) - x3.powi(3), 1.0),
                    };
                    if (xi - constraint).abs() > 0.5 * g.dxi() || !spec.window.admits(m) {
                        continue;
                    }
                    let get = |s: usize, kk: usize| {
                        let z = v[s].values()[kk];
                        if spec.conj[s] {
                            z.conj()
                        } else {
                            z
                        }
                    };
                    let mut term = get(0, k1) * get(1, k2) * get(2, k3);
                    if spec.kernel == Kernel::CauchyDivided {
                        term /= m - spec.window.alpha;
                    }
                    term *= Complex64::from_polar(1.0, phase * m * spec.time);
                    if let Weight::Quarter3Quarter(j) = spec.weight {
                        term *= [x1, x2, x3][j - 1].abs().powf(0.75);
                    }
                    acc += term;
                }
            }
        }
        let pre = match (eq, spec.weight) {
            (Equation::CubicNLS, _) => i,
            (_, Weight::None) => Complex64::new(1.0, 0.0),
            (_, Weight::XiFull) => -i * xi,
            (_, Weight::SgnQuarter) if xi == 0.0 => Complex64::new(0.0, 0.0),
            (_, Weight::SgnQuarter) => -i * xi.signum() * xi.abs().powf(0.25),
            (_, Weight::Quarter3Quarter(_)) => Complex64::new(xi.abs().powf(0.25), 0.0),
        };
        out[k] = pre * acc * g.dxi() * g.dxi();
    }
    GridFunction::new(g, out).unwrap()
}
