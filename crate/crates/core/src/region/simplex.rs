//! Dense two-phase simplex with Bland's rule.
//!
//! Small and deliberately boring: the throughput LPs this crate builds have
//! at most a few hundred rows, so an O(m*n) pricing pass per pivot is fine,
//! and Bland's rule makes termination unconditional on degenerate bases.
//! All variables are nonnegative; free variables must be split by the
//! caller.

/// Constraint sense.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Rel {
    Le,
    Ge,
    Eq,
}

/// `coeffs . x  (rel)  rhs`, with `coeffs` sparse as `(var, value)`.
#[derive(Debug, Clone)]
pub(crate) struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub rel: Rel,
    pub rhs: f64,
}

/// Maximize `objective . x` subject to the constraints, `x >= 0`.
#[derive(Debug, Clone)]
pub(crate) struct Problem {
    pub num_vars: usize,
    pub objective: Vec<(usize, f64)>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SimplexError {
    Infeasible,
    Unbounded,
}

const PIVOT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-7;

struct Tableau {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    width: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, j: usize) {
        let p = self.rows[r][j];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        self.rhs[r] /= p;
        for i in 0..self.rows.len() {
            if i == r {
                continue;
            }
            let f = self.rows[i][j];
            if f == 0.0 {
                continue;
            }
            for k in 0..self.width {
                let delta = f * self.rows[r][k];
                self.rows[i][k] -= delta;
            }
            self.rhs[i] -= f * self.rhs[r];
        }
        self.basis[r] = j;
    }

    /// Runs simplex to optimality for the given (maximization) costs.
    /// Entering and leaving choices both follow Bland's rule.
    fn run(&mut self, costs: &[f64]) -> Result<(), SimplexError> {
        loop {
            // Reduced costs: c_j - c_B . column_j.
            let mut entering = None;
            for j in 0..self.width {
                let mut reduced = costs[j];
                for (r, row) in self.rows.iter().enumerate() {
                    let cb = costs[self.basis[r]];
                    if cb != 0.0 {
                        reduced -= cb * row[j];
                    }
                }
                if reduced > PIVOT_TOL {
                    entering = Some(j);
                    break;
                }
            }
            let Some(j) = entering else { return Ok(()) };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows.len() {
                let a = self.rows[r][j];
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs[r] / a;
                match leave {
                    None => leave = Some((r, ratio)),
                    Some((best_r, best)) => {
                        if ratio < best - 1e-12
                            || ((ratio - best).abs() <= 1e-12
                                && self.basis[r] < self.basis[best_r])
                        {
                            leave = Some((r, ratio));
                        }
                    }
                }
            }
            let Some((r, _)) = leave else { return Err(SimplexError::Unbounded) };
            self.pivot(r, j);
        }
    }
}

/// Solves the problem, returning the optimal objective and a maximizer.
pub(crate) fn maximize(p: &Problem) -> Result<(f64, Vec<f64>), SimplexError> {
    let n = p.num_vars;
    // Normalize to nonnegative right-hand sides.
    let mut cons: Vec<(Vec<f64>, Rel, f64)> = Vec::with_capacity(p.constraints.len());
    for c in &p.constraints {
        let mut dense = vec![0.0; n];
        for &(j, v) in &c.coeffs {
            assert!(j < n, "constraint references variable {j} out of {n}");
            dense[j] += v;
        }
        let (mut rel, mut rhs) = (c.rel, c.rhs);
        if rhs < 0.0 {
            for v in dense.iter_mut() {
                *v = -*v;
            }
            rhs = -rhs;
            rel = match rel {
                Rel::Le => Rel::Ge,
                Rel::Ge => Rel::Le,
                Rel::Eq => Rel::Eq,
            };
        }
        cons.push((dense, rel, rhs));
    }

    let n_slack = cons.iter().filter(|(_, rel, _)| *rel != Rel::Eq).count();
    let n_art = cons.iter().filter(|(_, rel, _)| *rel != Rel::Le).count();
    let art_start = n + n_slack;
    let width = art_start + n_art;

    let mut t = Tableau {
        rows: Vec::with_capacity(cons.len()),
        rhs: Vec::with_capacity(cons.len()),
        basis: Vec::with_capacity(cons.len()),
        width,
    };
    let mut next_slack = n;
    let mut next_art = art_start;
    for (dense, rel, rhs) in cons {
        let mut row = vec![0.0; width];
        row[..n].copy_from_slice(&dense);
        let basis = match rel {
            Rel::Le => {
                row[next_slack] = 1.0;
                next_slack += 1;
                next_slack - 1
            }
            Rel::Ge => {
                row[next_slack] = -1.0;
                next_slack += 1;
                row[next_art] = 1.0;
                next_art += 1;
                next_art - 1
            }
            Rel::Eq => {
                row[next_art] = 1.0;
                next_art += 1;
                next_art - 1
            }
        };
        t.rows.push(row);
        t.rhs.push(rhs);
        t.basis.push(basis);
    }

    // Phase 1: drive the artificials to zero.
    if n_art > 0 {
        let mut costs = vec![0.0; width];
        for c in costs.iter_mut().skip(art_start) {
            *c = -1.0;
        }
        t.run(&costs)?;
        let infeasibility: f64 =
            t.basis.iter().zip(t.rhs.iter()).map(|(&b, &v)| if b >= art_start { v } else { 0.0 }).sum();
        if infeasibility > FEAS_TOL {
            return Err(SimplexError::Infeasible);
        }
        // Pivot any leftover (degenerate) artificial out of the basis, or
        // drop its row when the constraint turned out redundant.
        let mut r = 0;
        while r < t.rows.len() {
            if t.basis[r] >= art_start {
                if let Some(j) = (0..art_start).find(|&j| t.rows[r][j].abs() > PIVOT_TOL) {
                    t.pivot(r, j);
                } else {
                    t.rows.remove(r);
                    t.rhs.remove(r);
                    t.basis.remove(r);
                    continue;
                }
            }
            r += 1;
        }
        // The artificial columns are dead from here on.
        for row in t.rows.iter_mut() {
            row.truncate(art_start);
        }
        t.width = art_start;
    }

    // Phase 2: the real objective.
    let mut costs = vec![0.0; t.width];
    for &(j, v) in &p.objective {
        assert!(j < n);
        costs[j] += v;
    }
    t.run(&costs)?;

    let mut x = vec![0.0; n];
    for (r, &b) in t.basis.iter().enumerate() {
        if b < n {
            x[b] = t.rhs[r];
        }
    }
    let objective = p.objective.iter().map(|&(j, v)| v * x[j]).sum();
    Ok((objective, x))
}
