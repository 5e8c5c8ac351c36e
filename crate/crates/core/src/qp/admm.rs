use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{QpError, QpProblem, QpSettings, QpSolution, QpStatus, SparseMatrix, INF};

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;
const SCALE_MIN: f64 = 1e-4;
const SCALE_MAX: f64 = 1e4;
const POLISH_DELTA: f64 = 1e-9;
const POLISH_REFINE: usize = 8;
const POLISH_PROX: f64 = 1e-8;
const ADAPT_EVERY_CHECKS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Free,
    Equality,
    Inequality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Active {
    No,
    Lower,
    Upper,
}

pub(super) struct Solver<'a> {
    prob: &'a QpProblem,
    settings: &'a QpSettings,
    // equilibrated data
    p: SparseMatrix,
    q: Vec<f64>,
    a: SparseMatrix,
    l: Vec<f64>,
    u: Vec<f64>,
    d: Vec<f64>,
    e: Vec<f64>,
    cost: f64,
    kind: Vec<RowKind>,
    rho_base: f64,
    rho: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    x: Vec<f64>,
    z: Vec<f64>,
    y: Vec<f64>,
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn clamp_scale(norm: f64) -> f64 {
    let n = if norm < SCALE_MIN { 1.0 } else { norm.min(SCALE_MAX) };
    1.0 / n.sqrt()
}

impl<'a> Solver<'a> {
    pub(super) fn new(prob: &'a QpProblem, settings: &'a QpSettings) -> Result<Self, QpError> {
        let n = prob.num_vars();
        let m = prob.num_rows();
        let mut p = prob.g.clone();
        let mut a = prob.m.clone();
        let mut q = prob.c.clone();
        let mut d = vec![1.0; n];
        let mut e = vec![1.0; m];
        let mut cost = 1.0;

        for _ in 0..settings.scaling_iters {
            let pc = p.col_norms_inf();
            let ac = a.col_norms_inf();
            let dcol: Vec<f64> = (0..n).map(|j| clamp_scale(pc[j].max(ac[j]))).collect();
            let erow: Vec<f64> = a.row_norms_inf().into_iter().map(clamp_scale).collect();
            p.scale(&dcol, &dcol);
            a.scale(&erow, &dcol);
            for j in 0..n {
                q[j] *= dcol[j];
                d[j] *= dcol[j];
            }
            for i in 0..m {
                e[i] *= erow[i];
            }
            // cost scaling
            let pc = p.col_norms_inf();
            let mean = if n > 0 { pc.iter().sum::<f64>() / n as f64 } else { 0.0 };
            let g = mean.max(norm_inf(&q));
            let g = if g < SCALE_MIN { 1.0 } else { g.min(SCALE_MAX) };
            let gamma = 1.0 / g;
            p.scale_all(gamma);
            q.iter_mut().for_each(|v| *v *= gamma);
            cost *= gamma;
        }

        let scale_bound = |b: f64, ei: f64| if b.abs() >= INF { b } else { b * ei };
        let l: Vec<f64> = (0..m).map(|i| scale_bound(prob.lb[i], e[i])).collect();
        let u: Vec<f64> = (0..m).map(|i| scale_bound(prob.ub[i], e[i])).collect();
        let kind: Vec<RowKind> = (0..m)
            .map(|i| {
                if l[i] <= -INF && u[i] >= INF {
                    RowKind::Free
                } else if u[i] - l[i] < 1e-4 {
                    RowKind::Equality
                } else {
                    RowKind::Inequality
                }
            })
            .collect();
        let rho_base = settings.rho.clamp(RHO_MIN, RHO_MAX);
        let rho = rho_vector(&kind, rho_base);
        let chol = factor(&p, &a, &rho, settings.sigma)?;

        let mut solver = Self {
            prob,
            settings,
            p,
            q,
            a,
            l,
            u,
            d,
            e,
            cost,
            kind,
            rho_base,
            rho,
            chol,
            x: vec![0.0; n],
            z: vec![0.0; m],
            y: vec![0.0; m],
        };
        if let Some((x0, y0)) = &settings.warm_start {
            if x0.len() == n && y0.len() == m {
                for j in 0..n {
                    solver.x[j] = x0[j] / solver.d[j];
                }
                for i in 0..m {
                    solver.y[i] = y0[i] * solver.cost / solver.e[i];
                }
                let mut ax = vec![0.0; m];
                solver.a.mul_vec(&solver.x, &mut ax);
                for i in 0..m {
                    solver.z[i] = ax[i].clamp(solver.l[i], solver.u[i]);
                }
            }
        }
        Ok(solver)
    }

    fn unscaled_x(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.d).map(|(v, d)| v * d).collect()
    }

    fn unscaled_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.e).map(|(v, e)| v * e / self.cost).collect()
    }

    pub(super) fn run(mut self) -> Result<QpSolution, QpError> {
        let n = self.prob.num_vars();
        let m = self.prob.num_rows();
        let s = self.settings;
        let alpha = s.alpha;

        let mut rhs = DVector::zeros(n);
        let mut tmp_n = vec![0.0; n];
        let mut ax = vec![0.0; m];
        let mut x_prev = self.x.clone();
        let mut y_prev = self.y.clone();
        let mut last_polish_set: Option<Vec<Active>> = None;

        for it in 1..=s.max_iter.max(1) {
            x_prev.copy_from_slice(&self.x);
            y_prev.copy_from_slice(&self.y);

            // x̃ = K⁻¹ (σx - q + Aᵀ(ρz - y))
            let w: Vec<f64> = (0..m).map(|i| self.rho[i] * self.z[i] - self.y[i]).collect();
            self.a.mul_t_vec(&w, &mut tmp_n);
            for j in 0..n {
                rhs[j] = s.sigma * self.x[j] - self.q[j] + tmp_n[j];
            }
            self.chol.solve_mut(&mut rhs);
            self.a.mul_vec(rhs.as_slice(), &mut ax);
            for j in 0..n {
                self.x[j] = alpha * rhs[j] + (1.0 - alpha) * self.x[j];
            }
            for i in 0..m {
                let zr = alpha * ax[i] + (1.0 - alpha) * self.z[i];
                let zn = (zr + self.y[i] / self.rho[i]).clamp(self.l[i], self.u[i]);
                self.y[i] += self.rho[i] * (zr - zn);
                self.z[i] = zn;
            }

            if it % s.check_every != 0 && it != s.max_iter {
                continue;
            }

            let xu = self.unscaled_x(&self.x);
            let yu = self.unscaled_y(&self.y);
            let prim = self.prob.primal_residual(&xu);
            let dual = self.prob.dual_residual(&xu, &yu);
            if !(prim.is_finite() && dual.is_finite()) {
                return Err(QpError::NumericalBreakdown(format!(
                    "non-finite residuals at iteration {it}"
                )));
            }

            let converged = prim <= s.eps_p && dual <= s.eps_d;
            let near = prim <= 1e4 * s.eps_p && dual <= 1e4 * s.eps_d;
            if s.polish && (converged || near) {
                let set = self.active_set();
                if converged || last_polish_set.as_ref() != Some(&set) {
                    if let Some(sol) = self.polish(&set, it) {
                        return Ok(sol);
                    }
                    last_polish_set = Some(set);
                }
            }
            if converged {
                return Ok(self.finish(xu, yu, QpStatus::Optimal, it, false));
            }

            if let Some(cert) = self.primal_infeasibility(&y_prev) {
                let mut sol = self.finish(xu, yu, QpStatus::PrimalInfeasible, it, false);
                sol.certificate = Some(cert);
                return Ok(sol);
            }
            if let Some(cert) = self.dual_infeasibility(&x_prev) {
                let mut sol = self.finish(xu, yu, QpStatus::DualInfeasible, it, false);
                sol.certificate = Some(cert);
                return Ok(sol);
            }

            if (it / s.check_every) % ADAPT_EVERY_CHECKS == 0 {
                self.adapt_rho()?;
            }
        }
        let xu = self.unscaled_x(&self.x);
        let yu = self.unscaled_y(&self.y);
        Ok(self.finish(xu, yu, QpStatus::MaxIter, s.max_iter, false))
    }

    fn finish(&self, x: Vec<f64>, y: Vec<f64>, status: QpStatus, iterations: usize, polished: bool) -> QpSolution {
        let primal_res = self.prob.primal_residual(&x);
        let dual_res = self.prob.dual_residual(&x, &y);
        let objective = self.prob.objective(&x);
        QpSolution {
            x,
            y,
            status,
            primal_res,
            dual_res,
            objective,
            iterations,
            polished,
            certificate: None,
        }
    }

    fn adapt_rho(&mut self) -> Result<(), QpError> {
        let n = self.prob.num_vars();
        let m = self.prob.num_rows();
        let mut ax = vec![0.0; m];
        let mut px = vec![0.0; n];
        let mut aty = vec![0.0; n];
        self.a.mul_vec(&self.x, &mut ax);
        self.p.mul_vec(&self.x, &mut px);
        self.a.mul_t_vec(&self.y, &mut aty);
        let prim = (0..m).map(|i| (ax[i] - self.z[i]).abs()).fold(0.0, f64::max);
        let dual = (0..n)
            .map(|j| (px[j] + self.q[j] + aty[j]).abs())
            .fold(0.0, f64::max);
        let prim_norm = norm_inf(&ax).max(norm_inf(&self.z)) + 1e-30;
        let dual_norm = norm_inf(&px).max(norm_inf(&aty)).max(norm_inf(&self.q)) + 1e-30;
        let ratio = ((prim / prim_norm) / (dual / dual_norm + 1e-30)).sqrt();
        if !ratio.is_finite() || ratio == 0.0 {
            return Ok(());
        }
        let new_rho = (self.rho_base * ratio).clamp(RHO_MIN, RHO_MAX);
        if new_rho > 5.0 * self.rho_base || new_rho < 0.2 * self.rho_base {
            self.rho_base = new_rho;
            self.rho = rho_vector(&self.kind, new_rho);
            self.chol = factor(&self.p, &self.a, &self.rho, self.settings.sigma)?;
        }
        Ok(())
    }

    fn primal_infeasibility(&self, y_prev: &[f64]) -> Option<Vec<f64>> {
        let m = self.prob.num_rows();
        let dy: Vec<f64> = (0..m)
            .map(|i| (self.y[i] - y_prev[i]) * self.e[i] / self.cost)
            .collect();
        let norm = norm_inf(&dy);
        if !(norm > 1e-12) {
            return None;
        }
        let eps = self.settings.eps_inf * norm;
        let mut mty = vec![0.0; self.prob.num_vars()];
        self.prob.m.mul_t_vec(&dy, &mut mty);
        if norm_inf(&mty) > eps {
            return None;
        }
        let mut support = 0.0;
        for (i, &v) in dy.iter().enumerate() {
            if v > 0.0 {
                if self.prob.ub[i] >= INF {
                    if v > eps {
                        return None;
                    }
                } else {
                    support += self.prob.ub[i] * v;
                }
            } else if v < 0.0 {
                if self.prob.lb[i] <= -INF {
                    if -v > eps {
                        return None;
                    }
                } else {
                    support += self.prob.lb[i] * v;
                }
            }
        }
        if support < -eps {
            Some(dy.iter().map(|v| -v / norm).collect())
        } else {
            None
        }
    }

    fn dual_infeasibility(&self, x_prev: &[f64]) -> Option<Vec<f64>> {
        let n = self.prob.num_vars();
        let dx: Vec<f64> = (0..n).map(|j| (self.x[j] - x_prev[j]) * self.d[j]).collect();
        let norm = norm_inf(&dx);
        if !(norm > 1e-12) {
            return None;
        }
        let eps = self.settings.eps_inf * norm;
        let mut gd = vec![0.0; n];
        self.prob.g.mul_vec(&dx, &mut gd);
        if norm_inf(&gd) > eps {
            return None;
        }
        let cd: f64 = dx.iter().zip(&self.prob.c).map(|(a, b)| a * b).sum();
        if cd >= -eps {
            return None;
        }
        let mut md = vec![0.0; self.prob.num_rows()];
        self.prob.m.mul_vec(&dx, &mut md);
        for (i, &v) in md.iter().enumerate() {
            let lo_inf = self.prob.lb[i] <= -INF;
            let hi_inf = self.prob.ub[i] >= INF;
            let ok = match (lo_inf, hi_inf) {
                (true, true) => true,
                (false, true) => v >= -eps,
                (true, false) => v <= eps,
                (false, false) => v.abs() <= eps,
            };
            if !ok {
                return None;
            }
        }
        Some(dx.iter().map(|v| v / norm).collect())
    }

    fn active_set(&self) -> Vec<Active> {
        (0..self.prob.num_rows())
            .map(|i| {
                if self.kind[i] == RowKind::Free {
                    Active::No
                } else if self.z[i] - self.l[i] < -self.y[i] {
                    Active::Lower
                } else if self.u[i] - self.z[i] < self.y[i] {
                    Active::Upper
                } else {
                    Active::No
                }
            })
            .collect()
    }

    /// Solves the equality-constrained KKT system of the guessed active set
    /// and accepts the result only if it is a KKT point within tolerance.
    fn polish(&self, set: &[Active], iterations: usize) -> Option<QpSolution> {
        let n = self.prob.num_vars();
        let rows: Vec<usize> = (0..set.len()).filter(|&i| set[i] != Active::No).collect();
        let k = rows.len();
        let dim = n + k;
        // proximal term anchored at the current iterate keeps directions the
        // active set leaves free where they are
        let mut kkt = DMatrix::<f64>::zeros(dim, dim);
        for (i, j, v) in self.p.triplets() {
            kkt[(i, j)] += v;
        }
        let mut rhs = DVector::<f64>::zeros(dim);
        for j in 0..n {
            kkt[(j, j)] += POLISH_PROX;
            rhs[j] = -self.q[j] + POLISH_PROX * self.x[j];
        }
        for (r, &i) in rows.iter().enumerate() {
            for (j, v) in self.a.row(i) {
                kkt[(n + r, j)] = v;
                kkt[(j, n + r)] = v;
            }
            rhs[n + r] = if set[i] == Active::Lower { self.l[i] } else { self.u[i] };
        }
        let mut reg = kkt.clone();
        for r in 0..k {
            reg[(n + r, n + r)] -= POLISH_DELTA;
        }
        let lu = reg.lu();
        let mut sol = lu.solve(&rhs)?;
        for _ in 0..POLISH_REFINE {
            let res = &rhs - &kkt * &sol;
            if res.amax() < 1e-14 {
                break;
            }
            sol += lu.solve(&res)?;
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }

        let xs: Vec<f64> = sol.rows(0, n).iter().copied().collect();
        let mut ys = vec![0.0; set.len()];
        for (r, &i) in rows.iter().enumerate() {
            ys[i] = sol[n + r];
        }
        let x = self.unscaled_x(&xs);
        let y = self.unscaled_y(&ys);
        let tol = self.settings.eps_d;
        for &i in &rows {
            if self.kind[i] == RowKind::Equality {
                continue;
            }
            let wrong_sign = match set[i] {
                Active::Lower => y[i] > tol,
                Active::Upper => y[i] < -tol,
                Active::No => false,
            };
            if wrong_sign {
                return None;
            }
        }
        let cand = self.finish(x, y, QpStatus::Optimal, iterations, true);
        if cand.primal_res <= self.settings.eps_p && cand.dual_res <= self.settings.eps_d {
            Some(cand)
        } else {
            None
        }
    }
}

fn rho_vector(kind: &[RowKind], rho: f64) -> Vec<f64> {
    kind.iter()
        .map(|k| match k {
            RowKind::Free => RHO_MIN,
            RowKind::Equality => (RHO_EQ_FACTOR * rho).min(RHO_MAX),
            RowKind::Inequality => rho,
        })
        .collect()
}

/// Cholesky factor of `P + σI + Aᵀ diag(ρ) A`.
fn factor(p: &SparseMatrix, a: &SparseMatrix, rho: &[f64], sigma: f64) -> Result<Cholesky<f64, Dyn>, QpError> {
    let n = p.ncols();
    let mut k = p.to_dense();
    for j in 0..n {
        k[(j, j)] += sigma;
    }
    let mut entries: Vec<(usize, f64)> = Vec::new();
    for (i, &r) in rho.iter().enumerate() {
        entries.clear();
        entries.extend(a.row(i));
        for &(j1, v1) in &entries {
            for &(j2, v2) in &entries {
                k[(j1, j2)] += r * v1 * v2;
            }
        }
    }
    Cholesky::new(k).ok_or_else(|| QpError::NumericalBreakdown("reduced KKT matrix is not positive definite".into()))
}
