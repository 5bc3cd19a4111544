//! Dense kernels: row-major matrix products, the least-norm solution `A^+ b`
//! from a thin QR of `A^T`, power iteration for `lambda_max(A A^T)`, and the
//! proximal/projection operators used by the subproblem engines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::RANK_TOLERANCE;

/// Row-major dense matrix with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!("matrix must be nonempty, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite entry at ({}, {})", pos / cols, pos % cols)));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 }).expect("identity is well formed")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `out = A x`.
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o = dot(row, x);
        }
    }

    /// `out = A^T y`.
    pub fn mul_t_vec(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.fill(0.0);
        for (&yi, row) in y.iter().zip(self.data.chunks_exact(self.cols)) {
            if yi != 0.0 {
                axpy(yi, row, out);
            }
        }
    }

    /// `(out1, out2) = (A^T y1, A^T y2)` in a single pass over `A`.
    pub fn mul_t_vec2(&self, y1: &[f64], y2: &[f64], out1: &mut [f64], out2: &mut [f64]) {
        out1.fill(0.0);
        out2.fill(0.0);
        for ((&a1, &a2), row) in y1.iter().zip(y2).zip(self.data.chunks_exact(self.cols)) {
            for ((o1, o2), &r) in out1.iter_mut().zip(out2.iter_mut()).zip(row) {
                *o1 += a1 * r;
                *o2 += a2 * r;
            }
        }
    }

    /// `b - A x`, checking dimensions.
    pub fn residual(&self, b: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols || b.len() != self.rows {
            return Err(Error::Dimension(format!(
                "A is {}x{}, x has length {}, b has length {}",
                self.rows,
                self.cols,
                x.len(),
                b.len()
            )));
        }
        let mut ax = vec![0.0; self.rows];
        self.mul_vec(x, &mut ax);
        Ok(b.iter().zip(&ax).map(|(bi, axi)| bi - axi).collect())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Householder QR of `A^T` (an `n x m` matrix, `m <= n`), kept in factored
/// form. The columns of `A^T` are the rows of `A`, so the row-major storage
/// of `A` is used directly as column-major storage of `A^T`.
#[derive(Debug, Clone)]
pub struct QrOfTranspose {
    n: usize,
    m: usize,
    /// Unit Householder vectors; reflector `k` acts on coordinates `k..n`.
    reflectors: Vec<Vec<f64>>,
    /// Upper-triangular `R`, row-major `m x m`.
    r: Vec<f64>,
}

impl QrOfTranspose {
    pub fn new(a: &DenseMatrix) -> Self {
        let (m, n) = (a.rows(), a.cols());
        assert!(m <= n, "QR of A^T needs m <= n");
        let mut cols = a.data().to_vec();
        let mut reflectors = Vec::with_capacity(m);
        let mut r = vec![0.0; m * m];
        for k in 0..m {
            let (head, tail) = cols.split_at_mut((k + 1) * n);
            let colk = &mut head[k * n..];
            let x = &colk[k..];
            let xnorm = norm2(x);
            let mut v = x.to_vec();
            let alpha = if x[0] >= 0.0 { -xnorm } else { xnorm };
            v[0] -= alpha;
            let vnorm = norm2(&v);
            if xnorm == 0.0 || vnorm == 0.0 {
                // Column already zero below the diagonal: identity reflector.
                v.iter_mut().for_each(|e| *e = 0.0);
                r[k * m + k] = colk[k];
            } else {
                v.iter_mut().for_each(|e| *e /= vnorm);
                r[k * m + k] = alpha;
            }
            for (jj, colj) in tail.chunks_exact_mut(n).enumerate() {
                let j = k + 1 + jj;
                let seg = &mut colj[k..];
                let s = 2.0 * dot(&v, seg);
                if s != 0.0 {
                    axpy(-s, &v, seg);
                }
                r[k * m + j] = seg[0];
            }
            reflectors.push(v);
        }
        Self { n, m, reflectors, r }
    }

    pub fn r_diagonal(&self) -> Vec<f64> {
        (0..self.m).map(|k| self.r[k * self.m + k]).collect()
    }

    /// `min_k |R_kk| / max_k |R_kk|`, the numerical-rank indicator.
    pub fn diag_ratio(&self) -> f64 {
        let d = self.r_diagonal();
        let max = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let min = d.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
        if max > 0.0 {
            min / max
        } else {
            0.0
        }
    }

    /// `x = Q (R^{-T} b)`, the minimum-norm solution of `A x = b`.
    pub fn solve_least_norm(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.m {
            return Err(Error::Dimension(format!("b has length {}, expected {}", b.len(), self.m)));
        }
        if !(self.diag_ratio() > RANK_TOLERANCE) {
            return Err(Error::Singular(format!(
                "A is numerically rank deficient (|R_ii| ratio {:e})",
                self.diag_ratio()
            )));
        }
        let m = self.m;
        // Forward substitution with R^T (lower triangular).
        let mut z = vec![0.0; m];
        for i in 0..m {
            let mut s = b[i];
            for k in 0..i {
                s -= self.r[k * m + i] * z[k];
            }
            z[i] = s / self.r[i * m + i];
        }
        let mut x = vec![0.0; self.n];
        x[..m].copy_from_slice(&z);
        for k in (0..m).rev() {
            let v = &self.reflectors[k];
            let seg = &mut x[k..];
            let s = 2.0 * dot(v, seg);
            if s != 0.0 {
                axpy(-s, v, seg);
            }
        }
        Ok(x)
    }
}

/// Least-norm solution `A^+ b` via the thin QR of `A^T`.
pub fn least_norm_solution(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if a.rows() > a.cols() {
        return Err(Error::Singular(format!("{}x{} matrix cannot have full row rank", a.rows(), a.cols())));
    }
    QrOfTranspose::new(a).solve_least_norm(b)
}

pub const POWER_ITERATION_CAP: usize = 10_000;
const POWER_ITERATION_TOL: f64 = 1e-13;

/// Largest eigenvalue of `A A^T` by power iteration from the all-ones vector.
///
/// Stops when the Rayleigh quotient changes by less than `1e-13` relative.
/// Hitting the iteration cap yields [`Error::NotConverged`] with the best
/// estimate so far.
pub fn lambda_max_gram(a: &DenseMatrix) -> Result<f64> {
    let m = a.rows();
    let mut v = vec![1.0 / (m as f64).sqrt(); m];
    let mut atv = vec![0.0; a.cols()];
    let mut w = vec![0.0; m];
    let mut rho_prev = f64::NAN;
    let mut restarts = 0u64;
    for it in 0..POWER_ITERATION_CAP {
        a.mul_t_vec(&v, &mut atv);
        a.mul_vec(&atv, &mut w);
        let rho = dot(&v, &w);
        let wn = norm2(&w);
        if wn == 0.0 {
            if norm_inf(a.data()) == 0.0 {
                return Ok(0.0);
            }
            // Start vector in the null space of A^T: restart from a scrambled vector.
            restarts += 1;
            let mut state = 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(restarts);
            for e in v.iter_mut() {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                *e = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
            }
            let n = norm2(&v);
            v.iter_mut().for_each(|e| *e /= n);
            rho_prev = f64::NAN;
            continue;
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / wn;
        }
        if (rho - rho_prev).abs() <= POWER_ITERATION_TOL * rho {
            return Ok(rho);
        }
        rho_prev = rho;
        if it + 1 == POWER_ITERATION_CAP {
            return Err(Error::NotConverged { estimate: rho, iterations: POWER_ITERATION_CAP });
        }
    }
    unreachable!("loop returns on its last iteration")
}

/// `sign(v) * max(|v| - t, 0)`.
pub fn soft_threshold_scalar(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Componentwise soft-thresholding with thresholds `t >= 0`.
pub fn soft_threshold(v: &[f64], t: &[f64]) -> Vec<f64> {
    v.iter().zip(t).map(|(&vi, &ti)| soft_threshold_scalar(vi, ti)).collect()
}

/// Euclidean projection onto `{u : ||u|| <= r}`.
pub fn project_l2_ball(y: &[f64], r: f64) -> Vec<f64> {
    let n = norm2(y);
    if n <= r {
        y.to_vec()
    } else {
        let s = r / n;
        y.iter().map(|v| v * s).collect()
    }
}

/// Euclidean projection onto `{x : sum_i w_i |x_i| <= tau}`.
pub fn project_weighted_l1_ball(y: &[f64], w: &[f64], tau: f64) -> Vec<f64> {
    project_weighted_l1_ball_with_multiplier(y, w, tau).0
}

/// Projection onto the weighted l1 ball together with its Lagrange
/// multiplier `theta`, so that `x_i = sign(y_i) max(|y_i| - theta w_i, 0)`.
///
/// `theta = 0` when `y` is already inside the ball. Breakpoints
/// `|y_i| / w_i` are sorted once, so the cost is `O(n log n)`.
pub fn project_weighted_l1_ball_with_multiplier(y: &[f64], w: &[f64], tau: f64) -> (Vec<f64>, f64) {
    debug_assert_eq!(y.len(), w.len());
    debug_assert!(tau >= 0.0);
    let inside: f64 = y.iter().zip(w).map(|(yi, wi)| wi * yi.abs()).sum();
    if inside <= tau {
        return (y.to_vec(), 0.0);
    }
    if tau <= 0.0 {
        let theta = y.iter().zip(w).fold(0.0f64, |m, (yi, wi)| m.max(yi.abs() / wi));
        return (vec![0.0; y.len()], theta);
    }
    let mut order: Vec<usize> = (0..y.len()).filter(|&i| y[i] != 0.0).collect();
    order.sort_unstable_by(|&i, &j| (y[j].abs() / w[j]).total_cmp(&(y[i].abs() / w[i])));
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut theta = 0.0;
    for (pos, &i) in order.iter().enumerate() {
        s1 += w[i] * y[i].abs();
        s2 += w[i] * w[i];
        theta = (s1 - tau) / s2;
        let next = order.get(pos + 1).map_or(0.0, |&j| y[j].abs() / w[j]);
        if theta >= next {
            break;
        }
    }
    let theta = theta.max(0.0);
    let x = y
        .iter()
        .zip(w)
        .map(|(&yi, &wi)| soft_threshold_scalar(yi, theta * wi))
        .collect();
    (x, theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det_random(seed: u64, len: usize) -> Vec<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..len)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(DenseMatrix::new(0, 3, vec![]).is_err());
        assert!(DenseMatrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(DenseMatrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn products() {
        let a = DenseMatrix::new(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0]).unwrap();
        let mut ax = [0.0; 2];
        a.mul_vec(&[1.0, 1.0, 1.0], &mut ax);
        assert_eq!(ax, [6.0, 3.0]);
        let mut aty = [0.0; 3];
        a.mul_t_vec(&[1.0, 2.0], &mut aty);
        assert_eq!(aty, [-1.0, 2.0, 11.0]);
        let (mut o1, mut o2) = ([0.0; 3], [0.0; 3]);
        a.mul_t_vec2(&[1.0, 2.0], &[0.0, 1.0], &mut o1, &mut o2);
        assert_eq!(o1, [-1.0, 2.0, 11.0]);
        assert_eq!(o2, [-1.0, 0.0, 4.0]);
    }

    #[test]
    fn least_norm_small_cases() {
        let x = least_norm_solution(&DenseMatrix::identity(2), &[3.0, 4.0]).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-14 && (x[1] - 4.0).abs() < 1e-14);
        let a = DenseMatrix::new(1, 2, vec![1.0, 1.0]).unwrap();
        let x = least_norm_solution(&a, &[2.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn least_norm_rejects_rank_deficiency() {
        let a = DenseMatrix::new(2, 3, vec![1.0, 2.0, 3.0, 2.0, 4.0, 6.0]).unwrap();
        assert!(matches!(least_norm_solution(&a, &[1.0, 2.0]), Err(Error::Singular(_))));
        let tall = DenseMatrix::new(2, 1, vec![1.0, 2.0]).unwrap();
        assert!(matches!(least_norm_solution(&tall, &[1.0, 2.0]), Err(Error::Singular(_))));
    }

    #[test]
    fn least_norm_random_is_exact_and_orthogonal_to_null_space() {
        let (m, n) = (5, 20);
        let a = DenseMatrix::new(m, n, det_random(7, m * n)).unwrap();
        let b = det_random(8, m);
        let x = least_norm_solution(&a, &b).unwrap();
        let r = a.residual(&b, &x).unwrap();
        assert!(norm2(&r) <= 1e-10 * norm2(&b));
        // Null-space samples: z - A^+ (A z) lies in ker(A).
        for seed in 0..5 {
            let z = det_random(100 + seed, n);
            let mut az = vec![0.0; m];
            a.mul_vec(&z, &mut az);
            let pz = least_norm_solution(&a, &az).unwrap();
            let null: Vec<f64> = z.iter().zip(&pz).map(|(a, b)| a - b).collect();
            assert!(dot(&x, &null).abs() <= 1e-10 * norm2(&x) * norm2(&null));
        }
    }

    #[test]
    fn lambda_max_small_cases() {
        assert!((lambda_max_gram(&DenseMatrix::identity(3)).unwrap() - 1.0).abs() < 1e-12);
        let d = DenseMatrix::new(2, 2, vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        assert!((lambda_max_gram(&d).unwrap() - 4.0).abs() < 1e-9);
        // All-ones start is orthogonal to the top eigenvector here.
        let orth = DenseMatrix::new(2, 2, vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        assert!((lambda_max_gram(&orth).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(&[3.0, -3.0, 0.5], &[1.0, 1.0, 1.0]), vec![2.0, -2.0, 0.0]);
        assert_eq!(soft_threshold(&[1.5, -0.2], &[0.0, 0.0]), vec![1.5, -0.2]);
    }

    #[test]
    fn l2_ball_cases() {
        assert_eq!(project_l2_ball(&[0.3, 0.4], 1.0), vec![0.3, 0.4]);
        let p = project_l2_ball(&[3.0, 4.0], 1.0);
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
        assert_eq!(project_l2_ball(&[0.0, 0.0], 1.0), vec![0.0, 0.0]);
    }

    #[test]
    fn weighted_l1_ball_cases() {
        assert_eq!(project_weighted_l1_ball(&[0.2, -0.1], &[1.0, 2.0], 1.0), vec![0.2, -0.1]);
        assert_eq!(project_weighted_l1_ball(&[2.0, 0.0], &[1.0, 1.0], 1.0), vec![1.0, 0.0]);
        assert_eq!(project_weighted_l1_ball(&[2.0, -3.0], &[1.0, 1.0], 0.0), vec![0.0, 0.0]);
        let (x, theta) = project_weighted_l1_ball_with_multiplier(&[3.0, -1.0, 0.5], &[1.0, 2.0, 1.0], 1.0);
        let mass: f64 = x.iter().zip([1.0, 2.0, 1.0]).map(|(v, w)| w * v.abs()).sum();
        assert!((mass - 1.0).abs() < 1e-14);
        assert!((theta - 2.0).abs() < 1e-14);
        assert_eq!(x, vec![1.0, 0.0, 0.0]);
    }
}
