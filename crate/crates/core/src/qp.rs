//! Dense convex QP used by the safety filter:
//!
//! ```text
//! min (u - u_nom)' Q (u - u_nom)   s.t.   a_k . u + b_k >= 0,   u_min <= u <= u_max
//! ```
//!
//! Solved with the Goldfarb-Idnani dual active-set method, which starts from
//! the unconstrained minimizer and needs no feasible initial point. The
//! problems are tiny (at most a few dozen variables), so the projections are
//! rebuilt from scratch every iteration instead of being updated.

use nalgebra::{DMatrix, DVector};

pub const RELAXATION_PENALTY: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub a: Vec<f64>,
    pub b: f64,
}

impl LinearConstraint {
    pub fn new(a: Vec<f64>, b: f64) -> Self {
        Self { a, b }
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        self.a.iter().zip(u).map(|(a, u)| a * u).sum::<f64>() + self.b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub q: DMatrix<f64>,
    pub u_nom: Vec<f64>,
    pub constraints: Vec<LinearConstraint>,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    /// Components marked `false` are pinned to `u_nom`.
    pub free_mask: Vec<bool>,
}

impl QpProblem {
    /// Identity weighting, every component free, no coupling constraints.
    pub fn new(u_nom: Vec<f64>, u_min: Vec<f64>, u_max: Vec<f64>) -> Self {
        let n = u_nom.len();
        Self {
            q: DMatrix::identity(n, n),
            u_nom,
            constraints: Vec::new(),
            u_min,
            u_max,
            free_mask: vec![true; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.u_nom.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        let n = self.dim();
        if self.q.shape() != (n, n) || self.u_min.len() != n || self.u_max.len() != n || self.free_mask.len() != n {
            return Err(format!("inconsistent problem dimensions for n = {n}"));
        }
        if let Some(c) = self.constraints.iter().position(|c| c.a.len() != n) {
            return Err(format!("constraint {c} has {} coefficients, expected {n}", self.constraints[c].a.len()));
        }
        let finite = self.q.iter().chain(&self.u_nom).all(|v| v.is_finite())
            && self.constraints.iter().all(|c| c.b.is_finite() && c.a.iter().all(|v| v.is_finite()));
        if !finite {
            return Err("non-finite problem data".into());
        }
        if let Some(k) = (0..n).find(|&k| !(self.u_min[k] < self.u_max[k])) {
            return Err(format!("empty box on component {k}: [{}, {}]", self.u_min[k], self.u_max[k]));
        }
        if (&self.q - self.q.transpose()).amax() > 1e-12 * (1.0 + self.q.amax()) {
            return Err("weighting matrix is not symmetric".into());
        }
        Ok(())
    }

    pub fn objective(&self, u: &[f64]) -> f64 {
        let d = DVector::from_iterator(self.dim(), u.iter().zip(&self.u_nom).map(|(u, n)| u - n));
        (d.transpose() * &self.q * &d)[(0, 0)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    /// The constraints could not all hold; a shared slack was added to every
    /// coupling constraint.
    Relaxed,
    Error,
}

impl QpStatus {
    pub fn name(&self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Relaxed => "relaxed",
            QpStatus::Error => "error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintId {
    Coupling(usize),
    Lower(usize),
    Upper(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: Vec<f64>,
    pub status: QpStatus,
    pub active_set: Vec<ConstraintId>,
    /// Lagrange multipliers, aligned with `active_set`.
    pub multipliers: Vec<f64>,
    pub objective: f64,
    pub slack_used: f64,
    pub diagnostics: Option<String>,
}

impl QpSolution {
    fn error(problem: &QpProblem, message: String) -> Self {
        let u = (0..problem.dim())
            .map(|k| {
                if problem.free_mask.get(k).copied().unwrap_or(true) {
                    let (lo, hi) = (problem.u_min.get(k), problem.u_max.get(k));
                    match (lo, hi) {
                        (Some(&lo), Some(&hi)) if lo <= hi => problem.u_nom[k].clamp(lo, hi),
                        _ => problem.u_nom[k],
                    }
                } else {
                    problem.u_nom[k]
                }
            })
            .collect();
        log::warn!("qp error: {message}");
        Self {
            u,
            status: QpStatus::Error,
            active_set: Vec::new(),
            multipliers: Vec::new(),
            objective: f64::NAN,
            slack_used: 0.0,
            diagnostics: Some(message),
        }
    }
}

/// `normal . x >= rhs`
struct Halfspace {
    normal: DVector<f64>,
    rhs: f64,
    id: ConstraintId,
}

enum Outcome {
    Optimal { x: DVector<f64>, active: Vec<usize>, multipliers: Vec<f64> },
    Infeasible,
    Failed(String),
}

/// Goldfarb-Idnani for `min 1/2 x'Gx + c'x` subject to `halfspaces`.
///
/// `start` is the unconstrained minimizer `-G^-1 c`, passed in so callers
/// that know it exactly avoid the rounding of the inverse.
fn dual_active_set(g: &DMatrix<f64>, start: DVector<f64>, halfspaces: &[Halfspace]) -> Outcome {
    let n = g.nrows();
    let Some(chol) = g.clone().cholesky() else {
        return Outcome::Failed("weighting matrix is not positive definite".into());
    };
    let g_inv = chol.inverse();
    let mut x = start;
    let mut active: Vec<usize> = Vec::new();
    let mut mult: Vec<f64> = Vec::new();

    let scale = 1.0 + g.amax();
    let max_iter = 50 * (halfspaces.len() + n) + 100;
    let mut iter = 0;

    loop {
        // most violated constraint, measured in distance
        let mut worst: Option<(usize, f64)> = None;
        for (j, hs) in halfspaces.iter().enumerate() {
            if active.contains(&j) {
                continue;
            }
            let norm = hs.normal.norm();
            let slack = hs.normal.dot(&x) - hs.rhs;
            let tol = 1e-13 * (1.0 + hs.rhs.abs() + norm * x.amax());
            if slack < -tol && norm > 0.0 {
                let dist = slack / norm;
                if worst.is_none_or(|(_, d)| dist < d) {
                    worst = Some((j, dist));
                }
            } else if slack < -tol {
                // 0 >= rhs > 0
                return Outcome::Infeasible;
            }
        }
        let Some((p, _)) = worst else {
            return Outcome::Optimal { x, active, multipliers: mult };
        };
        let np = &halfspaces[p].normal;
        let mut trial = mult.clone();
        trial.push(0.0);

        loop {
            iter += 1;
            if iter > max_iter {
                return Outcome::Failed(format!("no convergence after {max_iter} iterations"));
            }
            let (z, r) = match directions(&g_inv, halfspaces, &active, np) {
                Some(d) => d,
                None => return Outcome::Failed("singular active-set projection".into()),
            };

            let mut partial: Option<(usize, f64)> = None;
            for (j, &rj) in r.iter().enumerate() {
                if rj > 1e-14 * scale {
                    let t = trial[j] / rj;
                    if partial.is_none_or(|(_, best)| t < best) {
                        partial = Some((j, t));
                    }
                }
            }
            let curvature = z.dot(np);
            let spanned = active.len() == n || curvature <= 1e-11 * np.dot(&(&g_inv * np));
            let full = if spanned {
                None
            } else {
                Some(-(np.dot(&x) - halfspaces[p].rhs) / curvature)
            };

            match (partial, full) {
                (None, None) => return Outcome::Infeasible,
                (Some((k, t)), None) => {
                    // the new normal is spanned by the active ones: pure dual step
                    advance(&mut trial, &r, t);
                    active.remove(k);
                    trial.remove(k);
                }
                (partial, Some(t_full)) => {
                    let t = partial.map_or(t_full, |(_, t1)| t1.min(t_full));
                    x += t * &z;
                    advance(&mut trial, &r, t);
                    match partial {
                        Some((k, t1)) if t1 < t_full => {
                            active.remove(k);
                            trial.remove(k);
                        }
                        _ => {
                            active.push(p);
                            mult = trial;
                            break;
                        }
                    }
                }
            }
        }
    }
}

fn advance(trial: &mut [f64], r: &DVector<f64>, t: f64) {
    let last = trial.len() - 1;
    for j in 0..last {
        trial[j] = (trial[j] - t * r[j]).max(0.0);
    }
    trial[last] += t;
}

/// Primal step direction `z = H n` and dual direction `r = N* n`, where `N`
/// holds the active normals, `N* = (N' G^-1 N)^-1 N' G^-1` and
/// `H = G^-1 (I - N N*)`.
fn directions(
    g_inv: &DMatrix<f64>,
    halfspaces: &[Halfspace],
    active: &[usize],
    np: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = g_inv.nrows();
    if active.is_empty() {
        return Some((g_inv * np, DVector::zeros(0)));
    }
    let big_n = DMatrix::from_fn(n, active.len(), |row, col| halfspaces[active[col]].normal[row]);
    let gn = g_inv * &big_n;
    let m = big_n.transpose() * &gn;
    let r = m.lu().solve(&(gn.transpose() * np))?;
    let z = g_inv * np - &gn * &r;
    Some((z, r))
}

/// Exact minimizer of `problem`. Infeasible problems are re-solved with one
/// shared slack on every coupling constraint, penalized by
/// [`RELAXATION_PENALTY`].
pub fn solve_qp(problem: &QpProblem) -> QpSolution {
    if let Err(e) = problem.validate() {
        return QpSolution::error(problem, e);
    }
    let free: Vec<usize> = (0..problem.dim()).filter(|&k| problem.free_mask[k]).collect();
    let nf = free.len();

    let pinned_term = |c: &LinearConstraint| {
        c.b + (0..problem.dim())
            .filter(|&k| !problem.free_mask[k])
            .map(|k| c.a[k] * problem.u_nom[k])
            .sum::<f64>()
    };

    let build = |slack: bool| {
        let dim = nf + usize::from(slack);
        let mut g = DMatrix::zeros(dim, dim);
        // the unconstrained minimizer is the nominal input itself
        let mut start = DVector::zeros(dim);
        for (r, &kr) in free.iter().enumerate() {
            start[r] = problem.u_nom[kr];
            for (c, &kc) in free.iter().enumerate() {
                g[(r, c)] = 2.0 * problem.q[(kr, kc)];
            }
        }
        if slack {
            g[(nf, nf)] = 2.0 * RELAXATION_PENALTY;
        }
        let mut hs = Vec::new();
        for (idx, c) in problem.constraints.iter().enumerate() {
            let mut normal = DVector::from_iterator(dim, free.iter().map(|&k| c.a[k]).chain(slack.then_some(0.0)));
            if slack {
                normal[nf] = 1.0;
            }
            hs.push(Halfspace { normal, rhs: -pinned_term(c), id: ConstraintId::Coupling(idx) });
        }
        for (r, &k) in free.iter().enumerate() {
            let mut e = DVector::zeros(dim);
            e[r] = 1.0;
            hs.push(Halfspace { normal: e.clone(), rhs: problem.u_min[k], id: ConstraintId::Lower(k) });
            hs.push(Halfspace { normal: -e, rhs: -problem.u_max[k], id: ConstraintId::Upper(k) });
        }
        if slack {
            let mut e = DVector::zeros(dim);
            e[nf] = 1.0;
            // reported as a bound on the slack, outside the problem's own ids
            hs.push(Halfspace { normal: e, rhs: 0.0, id: ConstraintId::Lower(problem.dim()) });
        }
        (g, start, hs)
    };

    let assemble = |x: &DVector<f64>, active: &[usize], multipliers: Vec<f64>, hs: &[Halfspace], status, slack_used| {
        let mut u = problem.u_nom.clone();
        for (r, &k) in free.iter().enumerate() {
            u[k] = x[r];
        }
        let mut ids = Vec::new();
        let mut mults = Vec::new();
        for (&j, m) in active.iter().zip(multipliers) {
            if hs[j].id != ConstraintId::Lower(problem.dim()) {
                ids.push(hs[j].id);
                mults.push(m);
            }
        }
        QpSolution {
            objective: problem.objective(&u),
            u,
            status,
            active_set: ids,
            multipliers: mults,
            slack_used,
            diagnostics: None,
        }
    };

    let (g, start, hs) = build(false);
    if nf == 0 {
        let u = problem.u_nom.clone();
        let feasible = problem.constraints.iter().all(|c| c.eval(&u) >= 0.0);
        if feasible {
            return assemble(&DVector::zeros(0), &[], Vec::new(), &hs, QpStatus::Optimal, 0.0);
        }
        let slack = problem.constraints.iter().map(|c| -c.eval(&u)).fold(0.0, f64::max);
        log::warn!("qp with no free variables violates its constraints by {slack:.3e}");
        return assemble(&DVector::zeros(0), &[], Vec::new(), &hs, QpStatus::Relaxed, slack);
    }
    match dual_active_set(&g, start, &hs) {
        Outcome::Optimal { x, active, multipliers } => {
            return assemble(&x, &active, multipliers, &hs, QpStatus::Optimal, 0.0);
        }
        Outcome::Failed(e) => return QpSolution::error(problem, e),
        Outcome::Infeasible => {}
    }

    let (g, start, hs) = build(true);
    match dual_active_set(&g, start, &hs) {
        Outcome::Optimal { x, active, multipliers } => {
            let slack = x[nf].max(0.0);
            log::warn!("infeasible safety constraints relaxed with slack {slack:.3e}");
            assemble(&x, &active, multipliers, &hs, QpStatus::Relaxed, slack)
        }
        Outcome::Infeasible => QpSolution::error(problem, "relaxed problem reported infeasible".into()),
        Outcome::Failed(e) => QpSolution::error(problem, e),
    }
}

/// Worst-case violation of each first-order optimality condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

/// KKT residuals of `solution` for the unrelaxed `problem`. Inactive
/// constraints carry a zero multiplier.
pub fn kkt_residuals(problem: &QpProblem, solution: &QpSolution) -> KktResiduals {
    let n = problem.dim();
    let u = &solution.u;
    let mut grad: Vec<f64> = (0..n)
        .map(|r| (0..n).map(|c| 2.0 * problem.q[(r, c)] * (u[c] - problem.u_nom[c])).sum())
        .collect();
    let value = |id: ConstraintId| match id {
        ConstraintId::Coupling(k) => problem.constraints[k].eval(u),
        ConstraintId::Lower(k) => u[k] - problem.u_min[k],
        ConstraintId::Upper(k) => problem.u_max[k] - u[k],
    };
    let mut dual = 0.0f64;
    let mut complementarity = 0.0f64;
    for (&id, &m) in solution.active_set.iter().zip(&solution.multipliers) {
        dual = dual.max(-m);
        complementarity = complementarity.max((m * value(id)).abs());
        match id {
            ConstraintId::Coupling(k) => {
                for (g, a) in grad.iter_mut().zip(&problem.constraints[k].a) {
                    *g -= m * a;
                }
            }
            ConstraintId::Lower(k) => grad[k] -= m,
            ConstraintId::Upper(k) => grad[k] += m,
        }
    }
    let stationarity = (0..n).filter(|&k| problem.free_mask[k]).map(|k| grad[k].abs()).fold(0.0, f64::max);

    let mut primal = 0.0f64;
    for k in 0..problem.constraints.len() {
        primal = primal.max(-value(ConstraintId::Coupling(k)));
    }
    for k in (0..n).filter(|&k| problem.free_mask[k]) {
        primal = primal.max(-value(ConstraintId::Lower(k))).max(-value(ConstraintId::Upper(k)));
    }
    KktResiduals { stationarity, primal, dual, complementarity }
}
