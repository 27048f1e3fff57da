//! Dense two-phase tableau simplex for `max c.x  s.t.  A x <= b, x >= 0`.
//!
//! Pivoting follows Bland's rule (lowest-index entering column, lowest-index
//! leaving basic variable on ratio ties), so results are deterministic and
//! the method cannot cycle.

/// Solver tolerances. Feasibility is scaled by `1 + |b|_inf`.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub pivot: f64,
    pub feasibility: f64,
    pub optimality: f64,
}

pub const TOL: Tolerances = Tolerances {
    pivot: 1e-9,
    feasibility: 1e-9,
    optimality: 1e-7,
};

const REDUCED_COST_EPS: f64 = 1e-10;
const MAX_PIVOTS: usize = 200_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub constraints: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
}

impl LpProblem {
    pub fn new(objective: Vec<f64>) -> Self {
        LpProblem {
            objective,
            constraints: Vec::new(),
            rhs: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    /// Appends `row . x <= b`.
    pub fn le(&mut self, row: Vec<f64>, b: f64) {
        assert_eq!(row.len(), self.objective.len(), "constraint width mismatch");
        self.constraints.push(row);
        self.rhs.push(b);
    }

    /// Appends `row . x >= b`.
    pub fn ge(&mut self, row: Vec<f64>, b: f64) {
        self.le(row.into_iter().map(|a| -a).collect(), -b);
    }

    /// Feasibility slack `tol = 1e-9 (1 + |b|_inf)`.
    pub fn feasibility_tol(&self) -> f64 {
        let bmax = self.rhs.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        TOL.feasibility * (1.0 + bmax)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub value: f64,
    /// Dual multipliers, one per constraint row (meaningful when optimal).
    pub dual: Vec<f64>,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    n: usize,
    m: usize,
    art_start: usize,
}

enum Outcome {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn new(p: &LpProblem) -> Self {
        let n = p.num_vars();
        let m = p.constraints.len();
        let negated: Vec<bool> = p.rhs.iter().map(|&b| b < 0.0).collect();
        let num_art = negated.iter().filter(|&&x| x).count();
        let art_start = n + m;
        let ncols = n + m + num_art;
        let mut rows = Vec::with_capacity(m);
        let mut rhs = Vec::with_capacity(m);
        let mut basis = Vec::with_capacity(m);
        let mut next_art = art_start;
        for i in 0..m {
            assert!(
                p.constraints[i].iter().all(|a| a.is_finite()) && p.rhs[i].is_finite(),
                "non-finite LP data"
            );
            let sign = if negated[i] { -1.0 } else { 1.0 };
            let mut row = vec![0.0; ncols];
            for (j, &a) in p.constraints[i].iter().enumerate() {
                row[j] = sign * a;
            }
            row[n + i] = sign;
            if negated[i] {
                row[next_art] = 1.0;
                basis.push(next_art);
                next_art += 1;
            } else {
                basis.push(n + i);
            }
            rows.push(row);
            rhs.push(sign * p.rhs[i]);
        }
        Tableau {
            rows,
            rhs,
            basis,
            n,
            m,
            art_start,
        }
    }

    fn ncols(&self) -> usize {
        self.rows.first().map_or(self.art_start, Vec::len)
    }

    /// Reduced costs `z_j - c_j` and objective value for the current basis.
    fn objective_row(&self, cost: &[f64]) -> (Vec<f64>, f64) {
        let ncols = self.ncols();
        let mut d: Vec<f64> = (0..ncols).map(|j| -cost[j]).collect();
        let mut z = 0.0;
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for (dj, a) in d.iter_mut().zip(&self.rows[i]) {
                    *dj += cb * a;
                }
                z += cb * self.rhs[i];
            }
        }
        (d, z)
    }

    fn pivot(&mut self, r: usize, c: usize, d: &mut [f64], z: &mut f64) {
        let piv = self.rows[r][c];
        for a in self.rows[r].iter_mut() {
            *a /= piv;
        }
        self.rhs[r] /= piv;
        let prow = self.rows[r].clone();
        let prhs = self.rhs[r];
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.rows[i][c];
            if f != 0.0 {
                for (a, &p) in self.rows[i].iter_mut().zip(&prow) {
                    *a -= f * p;
                    if a.abs() < 1e-13 {
                        *a = 0.0;
                    }
                }
                self.rows[i][c] = 0.0;
                self.rhs[i] -= f * prhs;
                if self.rhs[i].abs() < 1e-13 {
                    self.rhs[i] = 0.0;
                }
            }
        }
        let f = d[c];
        if f != 0.0 {
            for (dj, &p) in d.iter_mut().zip(&prow) {
                *dj -= f * p;
            }
            d[c] = 0.0;
            *z -= f * prhs;
        }
        self.basis[r] = c;
    }

    fn run(&mut self, d: &mut [f64], z: &mut f64, allowed: usize) -> Outcome {
        for _ in 0..MAX_PIVOTS {
            let Some(c) = (0..allowed).find(|&j| d[j] < -REDUCED_COST_EPS) else {
                return Outcome::Optimal;
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let a = self.rows[i][c];
                if a > TOL.pivot {
                    let ratio = self.rhs[i].max(0.0) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-12
                                || (ratio <= br + 1e-12 && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            match leave {
                None => return Outcome::Unbounded,
                Some((r, _)) => self.pivot(r, c, d, z),
            }
        }
        panic!("simplex exceeded {MAX_PIVOTS} pivots");
    }

    /// Phase 1; returns false when the constraints are infeasible.
    fn phase_one(&mut self, tol: f64) -> bool {
        if self.art_start == self.ncols() {
            return true;
        }
        let ncols = self.ncols();
        let cost: Vec<f64> = (0..ncols)
            .map(|j| if j >= self.art_start { -1.0 } else { 0.0 })
            .collect();
        let (mut d, mut z) = self.objective_row(&cost);
        self.run(&mut d, &mut z, ncols);
        if z < -tol * (self.m.max(1) as f64) {
            return false;
        }
        for i in 0..self.m {
            if self.basis[i] >= self.art_start {
                if let Some(c) = (0..self.art_start).find(|&j| self.rows[i][j].abs() > TOL.pivot) {
                    self.pivot(i, c, &mut d, &mut z);
                }
            }
        }
        true
    }
}

fn infeasible(n: usize, m: usize) -> LpSolution {
    LpSolution {
        status: LpStatus::Infeasible,
        x: vec![0.0; n],
        value: f64::NEG_INFINITY,
        dual: vec![0.0; m],
    }
}

/// Solves `max c.x s.t. A x <= b, x >= 0`.
pub fn solve_lp(p: &LpProblem) -> LpSolution {
    assert_eq!(p.constraints.len(), p.rhs.len(), "rhs length mismatch");
    let mut t = Tableau::new(p);
    let (n, m) = (t.n, t.m);
    if !t.phase_one(p.feasibility_tol()) {
        return infeasible(n, m);
    }
    let ncols = t.ncols();
    let mut cost = vec![0.0; ncols];
    cost[..n].copy_from_slice(&p.objective);
    let (mut d, mut z) = t.objective_row(&cost);
    match t.run(&mut d, &mut z, t.art_start) {
        Outcome::Unbounded => LpSolution {
            status: LpStatus::Unbounded,
            x: vec![0.0; n],
            value: f64::INFINITY,
            dual: vec![0.0; m],
        },
        Outcome::Optimal => {
            let mut x = vec![0.0; n];
            for (i, &b) in t.basis.iter().enumerate() {
                if b < n {
                    x[b] = t.rhs[i];
                }
            }
            let dual = (0..m).map(|i| d[n + i]).collect();
            let value = p.objective.iter().zip(&x).map(|(c, x)| c * x).sum();
            LpSolution {
                status: LpStatus::Optimal,
                x,
                value,
                dual,
            }
        }
    }
}

/// True iff `{x >= 0 : A x <= b}` is nonempty.
pub fn feasible(a: &[Vec<f64>], b: &[f64]) -> bool {
    let n = a.first().map_or(0, Vec::len);
    let p = LpProblem {
        objective: vec![0.0; n],
        constraints: a.to_vec(),
        rhs: b.to_vec(),
    };
    let mut t = Tableau::new(&p);
    t.phase_one(p.feasibility_tol())
}
