//! Fast Poisson solves on the Dirichlet unit cube with sine transforms.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::sync::Arc;

/// Inverse of the `(2d+1)`-point Laplacian `L u_i = Σ_a (2u_i − u_{i+e_a} − u_{i−e_a})`
/// on the `(n−1)^d` interior nodes, diagonalized by the type-I sine transform.
#[derive(Clone)]
pub struct DirichletPoisson {
    d: usize,
    n: usize,
    fft: Arc<dyn Fft<f64>>,
    eig: Vec<f64>,
}

impl DirichletPoisson {
    pub fn new(d: usize, n: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(2 * n);
        let eig = (1..n)
            .map(|j| 2.0 - 2.0 * (PI * j as f64 / n as f64).cos())
            .collect();
        Self { d, n, fft, eig }
    }

    /// Unnormalized DST-I of one line of length `n − 1`.
    fn dst_line(&self, line: &mut [f64], buf: &mut [Complex64]) {
        let n = self.n;
        buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for k in 1..n {
            buf[k] = Complex64::new(line[k - 1], 0.0);
            buf[2 * n - k] = Complex64::new(-line[k - 1], 0.0);
        }
        self.fft.process(buf);
        for k in 1..n {
            line[k - 1] = -0.5 * buf[k].im;
        }
    }

    fn dst_all(&self, data: &mut [f64]) {
        let m = self.n - 1;
        let mut line = vec![0.0; m];
        let mut buf = vec![Complex64::new(0.0, 0.0); 2 * self.n];
        for axis in 0..self.d {
            let stride = m.pow((self.d - 1 - axis) as u32);
            let block = stride * m;
            for start in (0..data.len()).step_by(block) {
                for off in 0..stride {
                    for (i, l) in line.iter_mut().enumerate() {
                        *l = data[start + off + i * stride];
                    }
                    self.dst_line(&mut line, &mut buf);
                    for (i, l) in line.iter().enumerate() {
                        data[start + off + i * stride] = *l;
                    }
                }
            }
        }
    }

    /// Solves `L u = r` in place.
    pub fn solve(&self, r: &mut [f64]) {
        let m = self.n - 1;
        self.dst_all(r);
        for (idx, v) in r.iter_mut().enumerate() {
            let mut rest = idx;
            let mut lam = 0.0;
            for _ in 0..self.d {
                lam += self.eig[rest % m];
                rest /= m;
            }
            *v /= lam;
        }
        self.dst_all(r);
        // DST-I applied twice scales by n/2 per axis
        let s = (2.0 / self.n as f64).powi(self.d as i32);
        r.iter_mut().for_each(|v| *v *= s);
    }

    /// Applies `L`.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        let m = self.n - 1;
        for (idx, o) in out.iter_mut().enumerate() {
            let mut acc = 2.0 * self.d as f64 * u[idx];
            let mut rest = idx;
            let mut stride = 1;
            for _ in 0..self.d {
                let c = rest % m;
                rest /= m;
                if c > 0 {
                    acc -= u[idx - stride];
                }
                if c + 1 < m {
                    acc -= u[idx + stride];
                }
                stride *= m;
            }
            *o = acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn solve_inverts_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (d, n) in [(1, 16), (2, 8), (3, 8)] {
            let p = DirichletPoisson::new(d, n);
            let len = (n - 1usize).pow(d as u32);
            let u: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut r = vec![0.0; len];
            p.apply(&u, &mut r);
            p.solve(&mut r);
            for (a, b) in r.iter().zip(&u) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
