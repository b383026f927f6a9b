//! Exhaustive-search references for the small-dimension solver checks.
//!
//! Qubits are searched on a zooming grid over the Bloch ball. Qutrits use a
//! zooming coordinate grid over a Cholesky-like factor G, rho = G G^dag / Tr,
//! from several starts. For the trace-minimization problem the smallest
//! feasible scale of each candidate direction is solved in closed form, so
//! only the direction is searched.

#![allow(dead_code)]

use cmtomo::estimators::{solve_ls_problem, CsPath, NormalEquations, Problem, SolverConfig};
use cmtomo::rng;
use cmtomo::spin::{hermitian_part, DensityMatrix, HermitianBasis, Operator};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub struct Toy {
    pub dim: usize,
    pub design: DMatrix<f64>,
    pub values: Vec<f64>,
    pub basis: HermitianBasis,
}

fn random_operator(dim: usize, rng: &mut rng::Rng) -> Operator {
    Operator::from_fn(dim, dim, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(re, im)
    })
}

impl Toy {
    /// `rows` random traceless observables; the record is generated from a
    /// trace-one Hermitian target that is not positive, so the data lie
    /// outside the image of the state space and the optimum is unique.
    pub fn new(dim: usize, rows: usize, seed: u64) -> Toy {
        let mut rng = rng::seeded(seed);
        let basis = HermitianBasis::new(dim).unwrap();
        let mut design = DMatrix::zeros(rows, dim * dim);
        for i in 0..rows {
            let mut o = hermitian_part(&random_operator(dim, &mut rng));
            let shift = o.trace() / Complex64::new(dim as f64, 0.0);
            for j in 0..dim {
                o[(j, j)] -= shift;
            }
            let r = basis.expand(&o).unwrap();
            design.row_mut(i).copy_from(&r.transpose());
        }
        let mut target = hermitian_part(&random_operator(dim, &mut rng)) * Complex64::new(1.5, 0.0);
        let t = target.trace() / Complex64::new(dim as f64, 0.0);
        for j in 0..dim {
            target[(j, j)] += Complex64::new(1.0 / dim as f64, 0.0) - t;
        }
        let values = (&design * basis.expand(&target).unwrap())
            .iter()
            .copied()
            .collect();
        Toy {
            dim,
            design,
            values,
            basis,
        }
    }

    pub fn delta(&self, rho: &Operator) -> f64 {
        let pred = &self.design * self.basis.expand(rho).unwrap();
        pred.iter()
            .zip(&self.values)
            .map(|(p, m)| (m - p) * (m - p))
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Smallest t >= 0 with Delta(t sigma) <= epsilon, if any.
    pub fn min_feasible_scale(&self, sigma: &Operator, epsilon: f64) -> Option<f64> {
        let ac = &self.design * self.basis.expand(sigma).unwrap();
        let m = DVector::from_column_slice(&self.values);
        let a = ac.norm_squared();
        let b = ac.dot(&m);
        let c = m.norm_squared() - epsilon;
        if c <= 0.0 {
            return Some(0.0);
        }
        let disc = b * b - a * c;
        if a == 0.0 || disc < 0.0 {
            return None;
        }
        let t = (b - disc.sqrt()) / a;
        (t >= 0.0).then_some(t)
    }

    pub fn solve_ls(&self, config: &SolverConfig) -> DensityMatrix {
        let view = self.design.rows(0, self.design.nrows());
        let normal = NormalEquations::from_design(view, config.power_iterations);
        let problem = Problem::with_normal(view, &self.values, &normal).unwrap();
        solve_ls_problem(&problem, config).unwrap().rho
    }

    pub fn solve_cs(&self, epsilon: f64, config: &SolverConfig) -> DensityMatrix {
        let view = self.design.rows(0, self.design.nrows());
        let normal = NormalEquations::from_design(view, config.power_iterations);
        let problem = Problem::with_normal(view, &self.values, &normal).unwrap();
        CsPath::new(&problem, config)
            .unwrap()
            .solve(epsilon)
            .unwrap()
            .rho
    }

    /// Smallest residual over the PSD cone, by searching the direction and
    /// solving the optimal scale in closed form.
    pub fn psd_floor(&self) -> f64 {
        self.search(|sigma| self.ray_floor(sigma)).1
    }

    /// min over t >= 0 of Delta(t sigma).
    fn ray_floor(&self, sigma: &Operator) -> f64 {
        let m = DVector::from_column_slice(&self.values);
        let ac = &self.design * self.basis.expand(sigma).unwrap();
        let a = ac.norm_squared();
        let t = if a > 0.0 {
            (ac.dot(&m) / a).max(0.0)
        } else {
            0.0
        };
        (&m - ac * t).norm_squared()
    }

    /// Density matrix minimizing Delta.
    pub fn oracle_ls(&self) -> Operator {
        self.search(|rho| self.delta(rho)).0
    }

    /// Direction of the trace-minimal PSD matrix with Delta <= epsilon.
    pub fn oracle_cs(&self, epsilon: f64) -> Operator {
        // Infeasible directions rank above every feasible one, ordered by how
        // close they come to the bound.
        self.search(|sigma| {
            self.min_feasible_scale(sigma, epsilon)
                .unwrap_or_else(|| 1e6 + self.ray_floor(sigma))
        })
        .0
    }

    fn search(&self, objective: impl Fn(&Operator) -> f64) -> (Operator, f64) {
        search_states(self.dim, objective)
    }
}

/// Minimizes `objective` over density matrices of dimension 2 or 3.
pub fn search_states(dim: usize, objective: impl Fn(&Operator) -> f64) -> (Operator, f64) {
    match dim {
        2 => bloch_search(&objective),
        _ => factor_search(dim, &objective),
    }
}

/// Random Hermitian matrix with entries of order one.
pub fn random_hermitian(dim: usize, seed: u64) -> Operator {
    hermitian_part(&random_operator(dim, &mut rng::seeded(seed)))
}

/// Nearest PSD matrix (or density matrix) to `h` by exhaustive search; the
/// PSD case scans directions and solves the scale in closed form.
pub fn brute_force_projection(h: &Operator, unit_trace: bool) -> Operator {
    let dim = h.nrows();
    let dot = |a: &Operator, b: &Operator| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x.conj() * y).re)
            .sum::<f64>()
    };
    let scale = |rho: &Operator| (dot(h, rho) / dot(rho, rho)).max(0.0);
    if unit_trace {
        search_states(dim, |rho| frobenius(h, rho)).0
    } else {
        let (rho, _) = search_states(dim, |rho| {
            frobenius(h, &(rho * Complex64::new(scale(rho), 0.0)))
        });
        let t = scale(&rho);
        rho * Complex64::new(t, 0.0)
    }
}

pub fn qubit_state(r: f64, polar: f64, azimuth: f64) -> Operator {
    let r = r.clamp(0.0, 1.0);
    let (st, ct) = polar.sin_cos();
    let (sp, cp) = azimuth.sin_cos();
    let (x, y, z) = (r * st * cp, r * st * sp, r * ct);
    let mut m = Operator::zeros(2, 2);
    m[(0, 0)] = Complex64::new((1.0 + z) / 2.0, 0.0);
    m[(1, 1)] = Complex64::new((1.0 - z) / 2.0, 0.0);
    m[(0, 1)] = Complex64::new(x / 2.0, -y / 2.0);
    m[(1, 0)] = Complex64::new(x / 2.0, y / 2.0);
    m
}

/// Zooming grid over (r, polar, azimuth) of the Bloch ball.
fn bloch_search(objective: &impl Fn(&Operator) -> f64) -> (Operator, f64) {
    use std::f64::consts::PI;
    let n = 24;
    let mut best = (f64::INFINITY, [0.5, PI / 2.0, PI]);
    let mut center = best.1;
    let mut width = [0.5, PI / 2.0, PI];
    let axis = |c: f64, w: f64, i: usize| c + w * (i as f64 / n as f64 * 2.0 - 1.0);
    for _ in 0..30 {
        for i in 0..=n {
            for j in 0..=n {
                for k in 0..=n {
                    let c = [
                        axis(center[0], width[0], i),
                        axis(center[1], width[1], j),
                        axis(center[2], width[2], k),
                    ];
                    let f = objective(&qubit_state(c[0], c[1], c[2]));
                    if f < best.0 {
                        best = (f, c);
                    }
                }
            }
        }
        center = best.1;
        width.iter_mut().for_each(|w| *w *= 0.5);
    }
    let [r, a, b] = best.1;
    (qubit_state(r, a, b), best.0)
}

fn factor_state(dim: usize, g: &[f64]) -> Operator {
    let f = Operator::from_fn(dim, dim, |i, j| {
        let k = 2 * (i * dim + j);
        Complex64::new(g[k], g[k + 1])
    });
    let rho = &f * f.adjoint();
    let t = rho.trace();
    rho / t
}

/// Coordinate-wise zooming grid over the factor entries, several starts.
fn factor_search(dim: usize, objective: &impl Fn(&Operator) -> f64) -> (Operator, f64) {
    let n_params = 2 * dim * dim;
    let mut rng = rng::seeded(99);
    let mut best: (Vec<f64>, f64) = (vec![], f64::INFINITY);
    for _start in 0..8 {
        let mut g: Vec<f64> = (0..n_params).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut f = objective(&factor_state(dim, &g));
        if !f.is_finite() {
            continue;
        }
        let mut h = 1.0;
        while h > 1e-11 {
            let mut improved = false;
            for p in 0..n_params {
                let base = g[p];
                let mut local = (f, base);
                for s in -10..=10 {
                    if s == 0 {
                        continue;
                    }
                    g[p] = base + h * s as f64 / 10.0;
                    let v = objective(&factor_state(dim, &g));
                    if v < local.0 {
                        local = (v, g[p]);
                    }
                }
                g[p] = local.1;
                if local.0 < f {
                    f = local.0;
                    improved = true;
                }
            }
            if !improved {
                h *= 0.5;
            }
        }
        if f < best.1 {
            best = (g, f);
        }
    }
    (factor_state(dim, &best.0), best.1)
}

pub fn tight_config() -> SolverConfig {
    SolverConfig {
        max_iterations: 500_000,
        rel_tolerance: 1e-15,
        cs_rel_tolerance: 1e-15,
        kkt_tolerance: 1e-13,
        cs_residual_tolerance: 1e-9,
        cs_max_bisections: 200,
        ..SolverConfig::default()
    }
}

pub fn frobenius(a: &Operator, b: &Operator) -> f64 {
    (a - b).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Worst Frobenius distance between solver and oracle over the standard
/// set of toy problems, for (LS, CS).
pub fn oracle_gaps() -> Vec<(usize, usize, u64, f64, f64)> {
    let config = tight_config();
    let mut out = Vec::new();
    for (dim, rows, seed) in [
        (2, 3, 1),
        (2, 4, 2),
        (2, 4, 3),
        (3, 4, 4),
        (3, 4, 5),
        (3, 3, 6),
    ] {
        let toy = Toy::new(dim, rows, seed);
        let ls = toy.solve_ls(&config);
        let ls_gap = frobenius(ls.matrix(), &toy.oracle_ls());
        // A threshold between the PSD floor and |M|^2 keeps the bound active.
        let floor = toy.psd_floor();
        let epsilon = floor + 0.3 * (toy.norm_sq() - floor);
        let cs = toy.solve_cs(epsilon, &config);
        let cs_gap = frobenius(cs.matrix(), &toy.oracle_cs(epsilon));
        out.push((dim, rows, seed, ls_gap, cs_gap));
    }
    out
}
