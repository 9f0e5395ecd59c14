//! Symmetric tridiagonal matrices: linear solves, Sturm counts and
//! bisection eigenvalues.

/// Symmetric tridiagonal matrix with main diagonal `diag[0..n]` and
/// off-diagonal `off[0..n-1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

const PIVOT_GUARD: f64 = 1e-300;

impl SymTridiagonal {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Self {
        assert_eq!(off.len() + 1, diag.len().max(1), "off-diagonal length mismatch");
        SymTridiagonal { diag, off }
    }

    pub fn zeros(n: usize) -> Self {
        SymTridiagonal { diag: vec![0.0; n], off: vec![0.0; n.saturating_sub(1)] }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.off[i] * x[i + 1];
            }
            y[i] = s;
        }
    }

    /// `x^T A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.len() {
            s += self.diag[i] * x[i] * x[i];
        }
        for i in 0..self.off.len() {
            s += 2.0 * self.off[i] * x[i] * x[i + 1];
        }
        s
    }

    /// Solve `A x = b` by the Thomas algorithm (no pivoting; intended for
    /// symmetric positive definite matrices).
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut c_prime = vec![0.0; n];
        let mut d_prime = vec![0.0; n];
        let mut denom = self.diag[0];
        for i in 0..n {
            if i > 0 {
                denom = self.diag[i] - self.off[i - 1] * c_prime[i - 1];
            }
            if denom.abs() < PIVOT_GUARD {
                denom = PIVOT_GUARD.copysign(denom);
            }
            if i + 1 < n {
                c_prime[i] = self.off[i] / denom;
            }
            let prev = if i > 0 { self.off[i - 1] * d_prime[i - 1] } else { 0.0 };
            d_prime[i] = (b[i] - prev) / denom;
        }
        let mut x = d_prime;
        for i in (0..n.saturating_sub(1)).rev() {
            x[i] -= c_prime[i] * x[i + 1];
        }
        x
    }

    /// Number of eigenvalues strictly less than `lambda` (LDL^T pivot count).
    pub fn sturm_count(&self, lambda: f64) -> usize {
        let n = self.len();
        if n == 0 {
            return 0;
        }
        let mut count = 0;
        let mut q = self.diag[0] - lambda;
        if q < 0.0 {
            count += 1;
        }
        for i in 1..n {
            let q_safe = if q.abs() < PIVOT_GUARD { PIVOT_GUARD.copysign(q) } else { q };
            q = (self.diag[i] - lambda) - self.off[i - 1] * self.off[i - 1] / q_safe;
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// Gershgorin interval containing the spectrum.
    pub fn gershgorin(&self) -> (f64, f64) {
        let n = self.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let mut r = 0.0;
            if i > 0 {
                r += self.off[i - 1].abs();
            }
            if i + 1 < n {
                r += self.off[i].abs();
            }
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    /// The `j`-th smallest eigenvalue (0-based) by Sturm bisection to
    /// absolute tolerance `tol`.
    pub fn eigenvalue(&self, j: usize, tol: f64) -> f64 {
        let (mut lo, mut hi) = self.gershgorin();
        let target = j + 1;
        for _ in 0..2000 {
            if hi - lo <= tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.sturm_count(mid) >= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// The lowest `k` eigenvalues in increasing order.
    pub fn lowest_eigenvalues(&self, k: usize, tol: f64) -> Vec<f64> {
        (0..k.min(self.len())).map(|j| self.eigenvalue(j, tol)).collect()
    }

    /// Eigenvector for an (approximate) eigenvalue by shifted inverse
    /// iteration, normalized in the Euclidean norm with a positive sum.
    pub fn eigenvector(&self, lambda: f64, iterations: usize) -> Vec<f64> {
        let n = self.len();
        let scale = self.gershgorin().1.abs().max(1.0);
        let mut shifted = self.clone();
        let shift = lambda - 1e-10 * scale;
        shifted.diag.iter_mut().for_each(|d| *d -= shift);
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        for _ in 0..iterations {
            let mut w = shifted.solve(&v);
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm.is_finite() && norm > 0.0) {
                break;
            }
            w.iter_mut().for_each(|x| *x /= norm);
            v = w;
        }
        if v.iter().sum::<f64>() < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn laplacian(m: usize) -> SymTridiagonal {
        let h = 1.0 / (m + 1) as f64;
        SymTridiagonal::new(vec![2.0 / (h * h); m], vec![-1.0 / (h * h); m - 1])
    }

    #[test]
    fn thomas_solves_random_spd_system() {
        let a = SymTridiagonal::new(vec![4.0, 5.0, 6.0, 7.0], vec![1.0, -2.0, 0.5]);
        let x = vec![1.0, -1.0, 2.0, 0.25];
        let mut b = vec![0.0; 4];
        a.apply(&x, &mut b);
        let y = a.solve(&b);
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() < 1e-13);
        }
    }

    #[test]
    fn laplacian_eigenvalues_match_closed_form() {
        let m = 200;
        let h = 1.0 / (m + 1) as f64;
        let a = laplacian(m);
        for (j, e) in a.lowest_eigenvalues(4, 1e-10).into_iter().enumerate() {
            let k = (j + 1) as f64;
            let exact = 4.0 / (h * h) * (k * PI * h / 2.0).sin().powi(2);
            assert!((e - exact).abs() < 1e-8, "{e} vs {exact}");
        }
    }

    #[test]
    fn sturm_count_is_monotone() {
        let a = laplacian(50);
        let mut prev = 0;
        for i in 0..100 {
            let c = a.sturm_count(i as f64 * 100.0);
            assert!(c >= prev);
            prev = c;
        }
        assert_eq!(a.sturm_count(1e9), 50);
    }

    #[test]
    fn inverse_iteration_recovers_sine_mode() {
        let m = 99;
        let a = laplacian(m);
        let e0 = a.eigenvalue(0, 1e-12);
        let v = a.eigenvector(e0, 3);
        let h = 1.0 / (m + 1) as f64;
        let s: Vec<f64> = (1..=m).map(|i| (PI * i as f64 * h).sin()).collect();
        let ns = s.iter().map(|x| x * x).sum::<f64>().sqrt();
        let cos: f64 = v.iter().zip(&s).map(|(a, b)| a * b / ns).sum();
        assert!((cos - 1.0).abs() < 1e-12);
    }
}
