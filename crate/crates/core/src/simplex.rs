//! Least squares over the probability simplex:
//!
//! ```text
//! minimize ||y - D w||^2 + penalty * ||w||^2   subject to  w >= 0, sum(w) = 1
//! ```
//!
//! The problem is carried in Gram form (`D'D`, `D'y`, `y'y`) so callers that
//! fit many closely related problems can build the Gram matrix by updating a
//! shared one. Two solvers are provided. The primal active-set method is exact
//! up to round-off and is the default. Projected gradient with exact simplex
//! projection is kept as an independent second route.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOLERANCE: f64 = 1e-8;
const PG_MAX_ITER: usize = 10_000;
const PG_MIN_IMPROVEMENT: f64 = 1e-12;

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    /// Wraps `weights` after checking the simplex invariants.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::NoDonors("empty weight vector".into()));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) || (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "weights are not on the simplex (sum {sum})"
            )));
        }
        Ok(Self(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Weighted combination `sum_j w_j x_j`.
    pub fn combine(&self, values: impl IntoIterator<Item = f64>) -> f64 {
        self.0.iter().zip(values).map(|(w, x)| w * x).sum()
    }
}

/// Which algorithm minimizes the simplex-constrained quadratic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimplexSolver {
    #[default]
    ActiveSet,
    ProjectedGradient,
}

/// `||y - D w||^2 + penalty ||w||^2` in Gram form.
#[derive(Debug, Clone)]
pub struct SimplexLsProblem {
    k: usize,
    gram: Vec<f64>,
    cross: Vec<f64>,
    target_sq: f64,
    penalty: f64,
}

impl SimplexLsProblem {
    /// `donors` is m x k (one column per donor), `target` has length m. The
    /// penalty applied is `ridge * m`.
    pub fn from_data(donors: &DMatrix<f64>, target: &[f64], ridge: f64) -> Result<Self> {
        let (m, k) = donors.shape();
        if k == 0 {
            return Err(Error::NoDonors("donor matrix has no columns".into()));
        }
        if m == 0 || target.len() != m {
            return Err(Error::Shape(format!(
                "{m}x{k} donor matrix with target of length {}",
                target.len()
            )));
        }
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "ridge must be >= 0, got {ridge}"
            )));
        }
        if donors.iter().chain(target).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "non-finite donor or target value".into(),
            ));
        }
        let mut gram = vec![0.0; k * k];
        let mut cross = vec![0.0; k];
        for a in 0..k {
            let da = donors.column(a);
            cross[a] = da.iter().zip(target).map(|(x, y)| x * y).sum();
            for b in a..k {
                let g = da.dot(&donors.column(b));
                gram[a * k + b] = g;
                gram[b * k + a] = g;
            }
        }
        let target_sq = target.iter().map(|y| y * y).sum();
        Ok(Self {
            k,
            gram,
            cross,
            target_sq,
            penalty: ridge * m as f64,
        })
    }

    /// Builds the problem from a precomputed row-major k x k Gram matrix.
    pub fn from_gram(
        gram: Vec<f64>,
        cross: Vec<f64>,
        target_sq: f64,
        penalty: f64,
    ) -> Result<Self> {
        let k = cross.len();
        if k == 0 {
            return Err(Error::NoDonors("no donors".into()));
        }
        if gram.len() != k * k {
            return Err(Error::Shape(format!(
                "gram has {} entries for {k} donors",
                gram.len()
            )));
        }
        Ok(Self {
            k,
            gram,
            cross,
            target_sq,
            penalty,
        })
    }

    pub fn n_donors(&self) -> usize {
        self.k
    }

    /// `||y - D w||^2 + penalty ||w||^2` evaluated at `w`.
    pub fn objective(&self, w: &[f64]) -> f64 {
        let k = self.k;
        let mut quad = 0.0;
        let mut lin = 0.0;
        for a in 0..k {
            if w[a] == 0.0 {
                continue;
            }
            let row = &self.gram[a * k..(a + 1) * k];
            let gw: f64 = row.iter().zip(w).map(|(g, x)| g * x).sum();
            quad += w[a] * (gw + self.penalty * w[a]);
            lin += w[a] * self.cross[a];
        }
        self.target_sq - 2.0 * lin + quad
    }

    pub fn solve(&self, solver: SimplexSolver) -> Result<SimplexWeights> {
        match solver {
            SimplexSolver::ActiveSet => self.solve_active_set(None),
            SimplexSolver::ProjectedGradient => self.solve_projected_gradient(),
        }
    }

    /// Primal active-set method. `start`, when given, must be a feasible
    /// point; its support seeds the working set.
    pub fn solve_active_set(&self, start: Option<&[f64]>) -> Result<SimplexWeights> {
        let k = self.k;
        if k == 1 {
            return SimplexWeights::new(vec![1.0]);
        }
        let diag_mean = (0..k).map(|a| self.gram[a * k + a]).sum::<f64>() / k as f64;
        // A tiny diagonal shift keeps the reduced systems positive definite
        // when donors are collinear or outnumber fitting observations.
        let shift = 1e-11 * diag_mean.max(f64::MIN_POSITIVE) + self.penalty;
        let scale = diag_mean
            .max(self.cross.iter().fold(0.0f64, |m, c| m.max(c.abs())))
            .max(f64::MIN_POSITIVE);
        let tol = 1e-12 * scale;

        let mut w = match start {
            Some(s) if s.len() == k => s.to_vec(),
            _ => {
                // best single vertex
                let best = (0..k)
                    .min_by(|&a, &b| {
                        let fa = self.gram[a * k + a] + self.penalty - 2.0 * self.cross[a];
                        let fb = self.gram[b * k + b] + self.penalty - 2.0 * self.cross[b];
                        fa.total_cmp(&fb)
                    })
                    .unwrap_or(0);
                let mut w = vec![0.0; k];
                w[best] = 1.0;
                w
            }
        };
        let mut free: Vec<usize> = (0..k).filter(|&a| w[a] > 0.0).collect();
        let mut chol = Vec::new();
        let mut grad = vec![0.0; k];
        let mut last_entered: Option<usize> = None;

        let max_iter = 10_000;
        for _ in 0..max_iter {
            let x = self.equality_qp(&free, shift, diag_mean, &mut chol)?;
            if let Some(alpha) = ratio_test(&free, &w, &x) {
                if let Some(a) = last_entered {
                    if alpha <= 0.0 && w[a] == 0.0 {
                        // the entering donor cannot move: optimal up to round-off
                        free.retain(|&j| j != a);
                        renormalize(&mut w);
                        return SimplexWeights::new(w);
                    }
                }
                last_entered = None;
                let mut blocked = Vec::new();
                for (p, &j) in free.iter().enumerate() {
                    let next = w[j] + alpha * (x[p] - w[j]);
                    w[j] = if next <= 1e-15 { 0.0 } else { next };
                    if w[j] == 0.0 {
                        blocked.push(j);
                    }
                }
                if blocked.is_empty() {
                    // numerical safety: drop the most negative candidate
                    let p = (0..free.len())
                        .min_by(|&a, &b| x[a].total_cmp(&x[b]))
                        .unwrap_or(0);
                    w[free[p]] = 0.0;
                    blocked.push(free[p]);
                }
                free.retain(|j| !blocked.contains(j));
                renormalize(&mut w);
                continue;
            }
            for (p, &j) in free.iter().enumerate() {
                w[j] = x[p];
            }
            // multiplier check over the inactive donors
            for a in 0..k {
                let row = &self.gram[a * k..(a + 1) * k];
                grad[a] =
                    free.iter().map(|&j| row[j] * w[j]).sum::<f64>() + shift * w[a] - self.cross[a];
            }
            let nu = -free.iter().map(|&j| grad[j]).sum::<f64>() / free.len() as f64;
            let entering = (0..k)
                .filter(|a| !free.contains(a))
                .map(|a| (a, grad[a] + nu))
                .min_by(|x, y| x.1.total_cmp(&y.1));
            match entering {
                Some((a, reduced)) if reduced < -tol => {
                    last_entered = Some(a);
                    free.push(a);
                    free.sort_unstable();
                }
                _ => {
                    renormalize(&mut w);
                    return SimplexWeights::new(w);
                }
            }
        }
        Err(Error::Degenerate(format!(
            "active-set simplex solver did not converge in {max_iter} iterations"
        )))
    }

    /// Minimizer of the shifted quadratic on the free set subject only to
    /// the sum-to-one constraint.
    fn equality_qp(
        &self,
        free: &[usize],
        shift: f64,
        diag_mean: f64,
        chol: &mut Vec<f64>,
    ) -> Result<Vec<f64>> {
        let f = free.len();
        let k = self.k;
        let mut factored = false;
        for extra in [0.0, 1e-9, 1e-6] {
            chol.clear();
            chol.resize(f * f, 0.0);
            let s = shift + extra * diag_mean.max(f64::MIN_POSITIVE);
            for (p, &a) in free.iter().enumerate() {
                for (q, &b) in free.iter().enumerate().take(p + 1) {
                    chol[p * f + q] = self.gram[a * k + b] + if p == q { s } else { 0.0 };
                }
            }
            if cholesky_in_place(chol, f) {
                factored = true;
                break;
            }
        }
        if !factored {
            return Err(Error::NotPositiveDefinite(
                "reduced simplex system lost positive definiteness".into(),
            ));
        }
        let mut u: Vec<f64> = free.iter().map(|&a| self.cross[a]).collect();
        let mut v = vec![1.0; f];
        cholesky_solve(chol, f, &mut u);
        cholesky_solve(chol, f, &mut v);
        let su: f64 = u.iter().sum();
        let sv: f64 = v.iter().sum();
        let nu = (su - 1.0) / sv;
        Ok(u.iter().zip(&v).map(|(a, b)| a - nu * b).collect())
    }

    /// Projected gradient with exact Euclidean projection onto the simplex,
    /// stopping after 10,000 iterations or when the objective improves by
    /// less than 1e-12.
    pub fn solve_projected_gradient(&self) -> Result<SimplexWeights> {
        let k = self.k;
        if k == 1 {
            return SimplexWeights::new(vec![1.0]);
        }
        let mut lipschitz = 2.0 * (self.max_eigenvalue() + self.penalty);
        if lipschitz <= 0.0 {
            lipschitz = 1.0;
        }
        let mut w = vec![1.0 / k as f64; k];
        let mut f = self.objective(&w);
        let mut grad = vec![0.0; k];
        for _ in 0..PG_MAX_ITER {
            for a in 0..k {
                let row = &self.gram[a * k..(a + 1) * k];
                let gw: f64 = row.iter().zip(&w).map(|(g, x)| g * x).sum();
                grad[a] = 2.0 * (gw + self.penalty * w[a] - self.cross[a]);
            }
            let (next, f_next) = loop {
                let step: Vec<f64> = w
                    .iter()
                    .zip(&grad)
                    .map(|(x, g)| x - g / lipschitz)
                    .collect();
                let cand = project_simplex(&step);
                let f_cand = self.objective(&cand);
                if f_cand <= f + 1e-15 * f.abs().max(1.0) || lipschitz > 1e300 {
                    break (cand, f_cand);
                }
                lipschitz *= 2.0;
            };
            let improvement = f - f_next;
            w = next;
            f = f_next;
            if improvement < PG_MIN_IMPROVEMENT {
                break;
            }
        }
        renormalize(&mut w);
        SimplexWeights::new(w)
    }

    fn max_eigenvalue(&self) -> f64 {
        let k = self.k;
        let mut v = vec![1.0 / (k as f64).sqrt(); k];
        let mut lambda = 0.0;
        for _ in 0..100 {
            let next: Vec<f64> = self
                .gram
                .chunks(k)
                .map(|row| row.iter().zip(&v).map(|(g, x)| g * x).sum())
                .collect();
            let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            lambda = norm;
            v = next.into_iter().map(|x| x / norm).collect();
        }
        // power iteration converges from below
        lambda * 1.05
    }
}

/// Weights minimizing `||y - D w||^2 + ridge * m * ||w||^2` over the simplex,
/// with `D` given as an m x k matrix of donor columns.
pub fn solve_simplex_ls(
    donors: &DMatrix<f64>,
    target: &[f64],
    ridge: f64,
) -> Result<SimplexWeights> {
    SimplexLsProblem::from_data(donors, target, ridge)?.solve(SimplexSolver::ActiveSet)
}

/// Euclidean projection onto `{w : w >= 0, sum(w) = 1}`.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

fn ratio_test(free: &[usize], w: &[f64], x: &[f64]) -> Option<f64> {
    let mut alpha: Option<f64> = None;
    for (p, &j) in free.iter().enumerate() {
        if x[p] <= 0.0 {
            let denom = w[j] - x[p];
            let a = if denom > 0.0 { w[j] / denom } else { 0.0 };
            alpha = Some(alpha.map_or(a, |cur: f64| cur.min(a)));
        }
    }
    alpha
}

fn renormalize(w: &mut [f64]) {
    for x in w.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let sum: f64 = w.iter().sum();
    if sum > 0.0 {
        for x in w.iter_mut() {
            *x /= sum;
        }
    }
}

/// Lower Cholesky factor written over the lower triangle of `a` (row-major).
fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for p in 0..j {
            d -= a[j * n + p] * a[j * n + p];
        }
        if d <= 0.0 || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for p in 0..j {
                s -= a[i * n + p] * a[j * n + p];
            }
            a[i * n + j] = s / d;
        }
    }
    true
}

fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for p in 0..i {
            s -= l[i * n + p] * b[p];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for p in i + 1..n {
            s -= l[p * n + i] * b[p];
        }
        b[i] = s / l[i * n + i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_problem(rng: &mut ChaCha8Rng, m: usize, k: usize) -> (DMatrix<f64>, Vec<f64>) {
        let d = DMatrix::from_fn(m, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        (d, y)
    }

    /// Exhaustive search over the 2-simplex on a lattice of the given step.
    fn grid_oracle(p: &SimplexLsProblem, step: f64) -> f64 {
        let n = (1.0 / step).round() as usize;
        let mut best = f64::INFINITY;
        for a in 0..=n {
            for b in 0..=n - a {
                let w = [a as f64 * step, b as f64 * step, (n - a - b) as f64 * step];
                best = best.min(p.objective(&w));
            }
        }
        best
    }

    fn assert_feasible(w: &SimplexWeights) {
        assert!(w.as_slice().iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert_abs_diff_eq!(w.as_slice().iter().sum::<f64>(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn exact_match_donor_gets_all_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut d, _) = random_problem(&mut rng, 6, 4);
        let y: Vec<f64> = d.column(2).iter().copied().collect();
        d.column_mut(2).copy_from_slice(&y);
        let w = solve_simplex_ls(&d, &y, 0.0).unwrap();
        assert_abs_diff_eq!(w.as_slice()[2], 1.0, epsilon = 1e-9);
        let p = SimplexLsProblem::from_data(&d, &y, 0.0).unwrap();
        assert_abs_diff_eq!(p.objective(w.as_slice()), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn single_donor_is_forced() {
        let d = DMatrix::from_column_slice(3, 1, &[1.0, -4.0, 2.0]);
        let w = solve_simplex_ls(&d, &[0.0, 0.0, 9.0], 0.5).unwrap();
        assert_eq!(w.as_slice(), &[1.0]);
    }

    #[test]
    fn empty_donor_set_errors() {
        let d = DMatrix::<f64>::zeros(3, 0);
        assert!(matches!(
            solve_simplex_ls(&d, &[1.0, 2.0, 3.0], 0.0),
            Err(Error::NoDonors(_))
        ));
    }

    #[test]
    fn three_donor_instance_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (d, y) = random_problem(&mut rng, 5, 3);
        let p = SimplexLsProblem::from_data(&d, &y, 0.0).unwrap();
        let best = grid_oracle(&p, 1e-3);
        for solver in [SimplexSolver::ActiveSet, SimplexSolver::ProjectedGradient] {
            let w = p.solve(solver).unwrap();
            assert_feasible(&w);
            let f = p.objective(w.as_slice());
            assert!(f <= best + 1e-5, "{solver:?}: {f} vs grid {best}");
            assert!(f >= best - 1e-3, "{solver:?}: {f} far below grid {best}");
        }
    }

    #[test]
    fn duplicate_donors_are_handled() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut d, y) = random_problem(&mut rng, 8, 5);
        let col = d.column(0).into_owned();
        d.column_mut(3).copy_from(&col);
        let p = SimplexLsProblem::from_data(&d, &y, 0.0).unwrap();
        let a = p.solve(SimplexSolver::ActiveSet).unwrap();
        let b = p.solve(SimplexSolver::ProjectedGradient).unwrap();
        assert_feasible(&a);
        assert!(p.objective(a.as_slice()) <= p.objective(b.as_slice()) + 1e-8);
    }

    #[test]
    fn more_donors_than_observations() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (d, y) = random_problem(&mut rng, 4, 12);
        let p = SimplexLsProblem::from_data(&d, &y, 0.0).unwrap();
        let a = p.solve(SimplexSolver::ActiveSet).unwrap();
        let b = p.solve(SimplexSolver::ProjectedGradient).unwrap();
        assert_feasible(&a);
        assert!(p.objective(a.as_slice()) <= p.objective(b.as_slice()) + 1e-8);
    }

    #[test]
    fn projection_is_on_simplex() {
        let w = project_simplex(&[0.5, 2.0, -1.0]);
        assert_eq!(w, vec![0.0, 1.0, 0.0]);
        let w = project_simplex(&[0.2, 0.3, 0.5]);
        for (a, b) in w.iter().zip([0.2, 0.3, 0.5]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn solution_is_feasible_and_beats_every_vertex(
            seed in 0u64..10_000,
            m in 1usize..12,
            k in 1usize..10,
            ridge in prop_oneof![Just(0.0), 0.0f64..2.0],
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (d, y) = random_problem(&mut rng, m, k);
            let p = SimplexLsProblem::from_data(&d, &y, ridge).unwrap();
            let w = p.solve(SimplexSolver::ActiveSet).unwrap();
            let sum: f64 = w.as_slice().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-8);
            prop_assert!(w.as_slice().iter().all(|&x| (0.0..=1.0).contains(&x)));
            let f = p.objective(w.as_slice());
            for j in 0..k {
                let mut e = vec![0.0; k];
                e[j] = 1.0;
                prop_assert!(f <= p.objective(&e) + 1e-9 * (1.0 + f.abs()));
            }
            let pg = p.solve(SimplexSolver::ProjectedGradient).unwrap();
            prop_assert!(f <= p.objective(pg.as_slice()) + 1e-8 * (1.0 + f.abs()));
        }
    }
}
