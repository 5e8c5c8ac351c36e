#![allow(dead_code)]

use feeder_envelope::qp::{SparseMatrix, INF};
use feeder_envelope::{Branch, BranchLimits, FeederModel, InjectionProfile, NodeLimits, QpProblem};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random radial feeder with shuffled labels and randomly oriented branches.
/// The returned model is ordered.
pub fn random_feeder(rng: &mut ChaCha8Rng, n: usize) -> FeederModel {
    let mut labels: Vec<usize> = (1..=n).collect();
    labels.shuffle(rng);
    let mut placed = vec![0usize];
    let mut branches = Vec::with_capacity(n);
    for &child in &labels {
        let parent = placed[rng.random_range(0..placed.len())];
        let (from, to) = if rng.random_bool(0.2) { (child, parent) } else { (parent, child) };
        branches.push(Branch {
            from,
            to,
            r: rng.random_range(0.001..0.03),
            x: rng.random_range(0.001..0.05),
            limits: BranchLimits::unbounded(),
        });
        placed.push(child);
    }
    let nodes = (1..=n)
        .map(|i| (i, NodeLimits { vmin: 0.81, vmax: 1.21 }))
        .collect();
    FeederModel::new(1.0, nodes, branches).unwrap().order_radial()
}

/// Random load profile (internal order) with `Σ|p| · max r` at most `budget`.
pub fn random_loads(rng: &mut ChaCha8Rng, model: &FeederModel, budget: f64) -> InjectionProfile {
    let n = model.n();
    let rmax = model.branches().iter().map(|b| b.r.max(b.x)).fold(0.0, f64::max);
    let mut p: Vec<f64> = (0..n).map(|_| -rng.random_range(0.0..1.0)).collect();
    let mut q: Vec<f64> = (0..n).map(|_| rng.random_range(-0.3..0.6) * -1.0).collect();
    let total: f64 = p.iter().map(|v| v.abs()).sum::<f64>() + q.iter().map(|v| v.abs()).sum::<f64>();
    let s = budget / (total * rmax * n as f64).max(1e-12);
    p.iter_mut().for_each(|v| *v *= s);
    q.iter_mut().for_each(|v| *v *= s);
    InjectionProfile { p, q }
}

/// Subtree indicator from the branch list alone: `c[i][j] = 1` iff internal
/// node `j + 1` lies below (or is) internal node `i + 1`.
pub fn subtree_indicator(model: &FeederModel) -> Vec<Vec<u8>> {
    let n = model.n();
    let mut adj = vec![Vec::new(); n + 1];
    for b in model.branches() {
        adj[b.from].push(b.to);
        adj[b.to].push(b.from);
    }
    let mut parent = vec![usize::MAX; n + 1];
    let mut stack = vec![0usize];
    parent[0] = 0;
    while let Some(u) = stack.pop() {
        for &w in &adj[u] {
            if parent[w] == usize::MAX {
                parent[w] = u;
                stack.push(w);
            }
        }
    }
    let mut c = vec![vec![0u8; n]; n];
    for j in 1..=n {
        let mut a = j;
        while a != 0 {
            c[a - 1][j - 1] = 1;
            a = parent[a];
        }
    }
    c
}

/// Exact integer determinant by fraction-free elimination.
pub fn bareiss_det(mut m: Vec<Vec<i128>>) -> i128 {
    let n = m.len();
    if n == 0 {
        return 1;
    }
    let mut sign = 1;
    let mut prev = 1i128;
    for k in 0..n - 1 {
        if m[k][k] == 0 {
            match (k + 1..n).find(|&r| m[r][k] != 0) {
                Some(r) => {
                    m.swap(k, r);
                    sign = -sign;
                }
                None => return 0,
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                m[i][j] = (m[i][j] * m[k][k] - m[i][k] * m[k][j]) / prev;
            }
        }
        prev = m[k][k];
    }
    sign * m[n - 1][n - 1]
}

/// Scalar squared voltage of a two-node feeder by bisection on
/// `v = v0 + 2(r P + x Q) − z² (P² + Q²)/v` with `P = p`, `Q = q`.
pub fn two_node_voltage(v0: f64, r: f64, x: f64, p: f64, q: f64) -> f64 {
    let f = |v: f64| v - v0 - 2.0 * (r * p + x * q) + (r * r + x * x) * (p * p + q * q) / v;
    let (mut lo, mut hi) = (0.5 * v0, 2.0 * v0);
    assert!(f(lo) < 0.0 && f(hi) > 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn dense_g(prob: &QpProblem) -> DMatrix<f64> {
    prob.g.to_dense()
}

/// Accelerated projected gradient on a box-constrained QP (`M = I`).
pub fn projected_gradient_box(prob: &QpProblem, iters: usize) -> Vec<f64> {
    let n = prob.num_vars();
    let g = dense_g(prob);
    let c = DVector::from_column_slice(&prob.c);
    let lip = g.clone().symmetric_eigenvalues().amax().max(1e-12);
    let proj = |v: &DVector<f64>| -> DVector<f64> {
        DVector::from_iterator(n, (0..n).map(|i| v[i].clamp(prob.lb[i], prob.ub[i])))
    };
    let mut x = proj(&DVector::zeros(n));
    let mut yk = x.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let grad = &g * &yk + &c;
        let xn = proj(&(&yk - grad / lip));
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        yk = &xn + (&xn - &x) * ((t - 1.0) / tn);
        x = xn;
        t = tn;
    }
    x.iter().copied().collect()
}

/// Accelerated projected gradient on the dual of a strictly convex QP.
/// Returns the primal point recovered from the final dual iterate.
pub fn dual_projected_gradient(prob: &QpProblem, iters: usize) -> Vec<f64> {
    let m = prob.num_rows();
    let g = dense_g(prob);
    let ginv = g.clone().cholesky().expect("strictly convex").inverse();
    let a = prob.m.to_dense();
    let c = DVector::from_column_slice(&prob.c);
    // stacked multipliers: u for rows' upper bounds, w for lower bounds, both >= 0
    let x_of = |u: &DVector<f64>, w: &DVector<f64>| -> DVector<f64> { -(&ginv * (&c + a.transpose() * (u - w))) };
    let k = &a * &ginv * a.transpose();
    let lip = 2.0 * k.clone().symmetric_eigenvalues().amax().max(1e-12);
    let finite = |b: f64| b.abs() < INF;
    let mut u = DVector::zeros(m);
    let mut w = DVector::zeros(m);
    let (mut uy, mut wy) = (u.clone(), w.clone());
    let mut t = 1.0f64;
    for _ in 0..iters {
        let x = x_of(&uy, &wy);
        let ax = &a * &x;
        let mut un = uy.clone();
        let mut wn = wy.clone();
        for i in 0..m {
            un[i] = if finite(prob.ub[i]) { (uy[i] + (ax[i] - prob.ub[i]) / lip).max(0.0) } else { 0.0 };
            wn[i] = if finite(prob.lb[i]) { (wy[i] + (prob.lb[i] - ax[i]) / lip).max(0.0) } else { 0.0 };
        }
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / tn;
        uy = &un + (&un - &u) * beta;
        wy = &wn + (&wn - &w) * beta;
        u = un;
        w = wn;
        t = tn;
    }
    x_of(&u, &w).iter().copied().collect()
}

/// Random PSD matrix of the given rank.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> DMatrix<f64> {
    let f = DMatrix::from_fn(n, rank, |_, _| rng.random_range(-1.0..1.0));
    let g = &f * f.transpose();
    (&g + g.transpose()) * 0.5
}

pub enum QpKind {
    BoxQp,
    BoxLp,
    General,
}

/// Random instance of the regression set.
pub fn random_qp(rng: &mut ChaCha8Rng, kind: QpKind, n: usize) -> QpProblem {
    match kind {
        QpKind::BoxQp | QpKind::BoxLp => {
            let g = match kind {
                QpKind::BoxQp => random_psd(rng, n, n / 2),
                _ => DMatrix::zeros(n, n),
            };
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let lb: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..0.0)).collect();
            let ub: Vec<f64> = lb.iter().map(|l| l + rng.random_range(0.1..3.0)).collect();
            QpProblem::new(SparseMatrix::from_dense(&g), c, SparseMatrix::identity(n), lb, ub).unwrap()
        }
        QpKind::General => {
            let m = 3 * n / 2;
            let g = random_psd(rng, n, n) + DMatrix::identity(n, n) * 0.1;
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = DMatrix::from_fn(m, n, |_, _| {
                if rng.random_bool(0.3) {
                    rng.random_range(-1.0..1.0)
                } else {
                    0.0
                }
            });
            let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let ax = &a * &x0;
            let mut lb = Vec::with_capacity(m);
            let mut ub = Vec::with_capacity(m);
            for i in 0..m {
                let lo = ax[i] - rng.random_range(0.0..0.5);
                let hi = ax[i] + rng.random_range(0.0..0.5);
                match rng.random_range(0..4) {
                    0 => {
                        lb.push(-INF);
                        ub.push(hi);
                    }
                    1 => {
                        lb.push(lo);
                        ub.push(INF);
                    }
                    _ => {
                        lb.push(lo);
                        ub.push(hi);
                    }
                }
            }
            QpProblem::new(SparseMatrix::from_dense(&g), c, SparseMatrix::from_dense(&a), lb, ub).unwrap()
        }
    }
}

/// Outcome of a scaled-perturbation sweep on one branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusReport {
    pub branch: usize,
    pub l0: f64,
    /// Largest sampled scale below which `l_exact ≤ max(l0, l0 + 2 J Δx)`
    /// held in every direction, with `Δx` from the exact state.
    pub radius: f64,
    /// Samples where either the exact-state or the in-program upper
    /// envelope fell below the exact current.
    pub failures: usize,
    /// Of those, how many the admissibility check flagged when the branch
    /// limit is set to the failing envelope value.
    pub detected: usize,
}

pub const SWEEP_SCALES: [f64; 13] = [1e-6, 3e-6, 1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0];

/// Perturbs the injections of `op` along `directions` random directions
/// scaled by [`SWEEP_SCALES`] (relative to the largest injection magnitude)
/// and compares the exact current against the upper envelopes.
pub fn radius_sweep(
    rng: &mut ChaCha8Rng,
    model: &FeederModel,
    mats: &feeder_envelope::SensitivityMatrices,
    op: &feeder_envelope::OperatingPoint,
    directions: usize,
) -> Vec<RadiusReport> {
    use feeder_envelope::bounds::exact_first_order;
    use feeder_envelope::{build_envelope, check_admissible, solve_loadflow, LoadFlowSettings, Quantity};
    let n = model.n();
    let env = build_envelope(op, mats);
    let mag = op.p_inj.iter().chain(&op.q_inj).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3);
    let mut radius = vec![f64::INFINITY; n];
    let mut failures = vec![0usize; n];
    let mut detected = vec![0usize; n];
    for _ in 0..directions {
        let mut d: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        d.iter_mut().for_each(|v| *v /= norm);
        let mut failed = vec![false; n];
        for &s in &SWEEP_SCALES {
            let p: Vec<f64> = (0..n).map(|i| op.p_inj[i] + s * mag * d[i]).collect();
            let q: Vec<f64> = (0..n).map(|i| op.q_inj[i] + s * mag * d[n + i]).collect();
            let inj = InjectionProfile { p: p.clone(), q: q.clone() };
            let Ok(state) = solve_loadflow(model, &inj, &LoadFlowSettings::default()) else {
                break;
            };
            let first = exact_first_order(op, &state);
            let hi_prog = env.upper(&DVector::from_vec(p), &DVector::from_vec(q));
            for j in 0..n {
                let hi_exact = op.l[j].max(op.l[j] + 2.0 * (first[j] - op.l[j]));
                let tol = 1e-12 * (1.0 + op.l[j]);
                if state.l[j] > hi_exact + tol && !failed[j] {
                    failed[j] = true;
                    radius[j] = radius[j].min(prev_scale(s));
                }
                for hi in [hi_exact, hi_prog[j]] {
                    if state.l[j] <= hi + tol {
                        continue;
                    }
                    failures[j] += 1;
                    let limited = with_current_limit(model, j, hi.max(f64::MIN_POSITIVE));
                    let flagged = check_admissible(&limited, &state, 0.0)
                        .iter()
                        .any(|v| v.quantity == Quantity::Current && v.element == j + 1);
                    if flagged {
                        detected[j] += 1;
                    }
                }
            }
        }
    }
    (0..n)
        .map(|j| RadiusReport {
            branch: j,
            l0: op.l[j],
            radius: if radius[j].is_infinite() { *SWEEP_SCALES.last().unwrap() } else { radius[j] },
            failures: failures[j],
            detected: detected[j],
        })
        .collect()
}

fn prev_scale(s: f64) -> f64 {
    SWEEP_SCALES.iter().copied().filter(|&v| v < s).last().unwrap_or(0.0)
}

/// Copy of an ordered model with one branch current limit replaced. User
/// labels of the copy are the internal node numbers.
pub fn with_current_limit(model: &FeederModel, branch: usize, lmax: f64) -> FeederModel {
    let mut branches = model.branches().to_vec();
    branches[branch].limits.lmax = lmax;
    let nodes = (1..=model.n()).map(|i| (i, model.node_limits(i))).collect();
    let rebuilt = FeederModel::new(model.v0(), nodes, branches.clone()).unwrap().order_radial();
    assert_eq!(rebuilt.branches(), branches.as_slice());
    rebuilt
}

/// Largest of the primal residual, the dual residual and the
/// complementarity gap, with `y < 0` on lower and `y > 0` on upper bounds.
pub fn kkt_residual(prob: &QpProblem, x: &[f64], y: &[f64]) -> f64 {
    let mut mx = vec![0.0; prob.num_rows()];
    prob.m.mul_vec(x, &mut mx);
    let comp = (0..prob.num_rows())
        .map(|i| {
            if y[i] < 0.0 {
                (-y[i]) * (mx[i] - prob.lb[i]).abs()
            } else if y[i] > 0.0 {
                y[i] * (prob.ub[i] - mx[i]).abs()
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    prob.primal_residual(x).max(prob.dual_residual(x, y)).max(comp)
}

/// Exact minimiser of a box LP: each variable sits at the bound its cost
/// pushes it to (the midpoint for zero cost).
pub fn box_lp_optimum(prob: &QpProblem) -> Vec<f64> {
    (0..prob.num_vars())
        .map(|i| match prob.c[i].partial_cmp(&0.0).unwrap() {
            std::cmp::Ordering::Greater => prob.lb[i],
            std::cmp::Ordering::Less => prob.ub[i],
            std::cmp::Ordering::Equal => 0.5 * (prob.lb[i] + prob.ub[i]),
        })
        .collect()
}

/// Random single-period scenario on the bundled feeder: nominal loads scaled
/// per node, two to four units at random nodes, random objective.
pub fn random_scenario13(rng: &mut ChaCha8Rng, model: &FeederModel) -> feeder_envelope::Scenario {
    use feeder_envelope::datasets::FEEDER13_LOADS;
    use feeder_envelope::opf::{GeneratorRecord, LoadRecord};
    use feeder_envelope::{ObjectiveKind, ScenarioFile};
    let global = rng.random_range(0.2..0.9);
    let loads = FEEDER13_LOADS
        .iter()
        .map(|&(node, p, q)| {
            let s = global * rng.random_range(0.7..1.3);
            LoadRecord { node, p_pu: p * s, q_pu: q * s }
        })
        .collect();
    let mut nodes: Vec<usize> = (1..=12).collect();
    nodes.shuffle(rng);
    let count = rng.random_range(2..=4);
    let generators = nodes[..count]
        .iter()
        .map(|&node| {
            let p_max = rng.random_range(0.05..0.4);
            let q_max = rng.random_range(0.0..0.1);
            GeneratorRecord {
                node,
                p_min_pu: 0.0,
                p_max_pu: p_max,
                q_min_pu: -q_max,
                q_max_pu: q_max,
                c1: rng.random_range(0.0..5.0),
                c2: rng.random_range(1.0..40.0),
            }
        })
        .collect();
    let objective = match rng.random_range(0..4) {
        0 | 1 => ObjectiveKind::Cost,
        2 => ObjectiveKind::Hosting,
        _ => ObjectiveKind::FlexDown,
    };
    ScenarioFile { loads, generators, objective, horizon: None, batteries: Vec::new() }
        .resolve(model)
        .unwrap()
}

pub fn scenario_file(name: &str) -> Vec<u8> {
    std::fs::read(format!("{}/../../data/scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"))).unwrap()
}
