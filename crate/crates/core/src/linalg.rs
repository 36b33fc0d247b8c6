//! Dense complex matrices and a cyclic Jacobi eigensolver for Hermitian input.
//!
//! Everything here is sized for the small matrices of the feedback problem
//! (N_t, N_r ≤ 32), so the kernels are plain loops over row-major storage.

use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const DEFAULT_EIG_TOL: f64 = 1e-12;
pub const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = C64::new(v, 0.0);
        }
        m
    }

    /// Outer product `u vᴴ`.
    pub fn outer(u: &[C64], v: &[C64]) -> Self {
        Self::from_fn(u.len(), v.len(), |i, j| u[i] * v[j].conj())
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vec<C64>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::DimensionMismatch("ragged columns".into()));
        }
        Ok(Self::from_fn(rows, cols, |i, j| columns[j][i]))
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, v: &[C64]) {
        debug_assert_eq!(v.len(), self.rows);
        for (i, &x) in v.iter().enumerate() {
            self[(i, j)] = x;
        }
    }

    /// First `k` columns.
    pub fn leading_columns(&self, k: usize) -> Self {
        Self::from_fn(self.rows, k, |i, j| self[(i, j)])
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                let row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let dst = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[C64]) -> Result<Vec<C64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} times vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows)
            .map(|i| {
                self.data[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect())
    }

    pub fn fro_norm(&self) -> f64 {
        self.data.iter().map(C64::norm_sqr).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x * s).collect() }
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, |a, b| a - b)
    }

    pub fn add_assign(&mut self, rhs: &Self) -> Result<()> {
        if self.shape() != rhs.shape() {
            return Err(self.mismatch(rhs));
        }
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
        Ok(())
    }

    fn zip_with(&self, rhs: &Self, f: impl Fn(C64, C64) -> C64) -> Result<Self> {
        if self.shape() != rhs.shape() {
            return Err(self.mismatch(rhs));
        }
        let data = self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    fn mismatch(&self, rhs: &Self) -> Error {
        Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        ))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Largest entrywise `|a_ij − conj(a_ji)|`.
    pub fn hermitian_asymmetry(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in i..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

/// `Σ conj(a_i) b_i`
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(C64::norm_sqr).sum::<f64>().sqrt()
}

/// Averaged Gram matrix `(1/N) Σ Hᴴ H`, returned exactly Hermitian.
pub fn gram_average(channels: &[CMatrix]) -> Result<CMatrix> {
    let first = channels.first().ok_or(Error::Empty("channel list"))?;
    let (nr, nt) = first.shape();
    let mut g = CMatrix::zeros(nt, nt);
    for h in channels {
        if h.shape() != (nr, nt) {
            return Err(Error::DimensionMismatch(format!(
                "channel {}x{} in a list of {nr}x{nt}",
                h.rows(),
                h.cols()
            )));
        }
        accumulate_gram(&mut g, h);
    }
    let inv = 1.0 / channels.len() as f64;
    for i in 0..nt {
        g[(i, i)] = C64::new(g[(i, i)].re * inv, 0.0);
        for j in i + 1..nt {
            let v = g[(i, j)] * inv;
            g[(i, j)] = v;
            g[(j, i)] = v.conj();
        }
    }
    Ok(g)
}

/// Adds the upper triangle of `Hᴴ H` into `g`.
fn accumulate_gram(g: &mut CMatrix, h: &CMatrix) {
    let nt = h.cols();
    for r in 0..h.rows() {
        let row = &h.data()[r * nt..(r + 1) * nt];
        for i in 0..nt {
            let hi = row[i].conj();
            for j in i..nt {
                g[(i, j)] += hi * row[j];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigResult {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Unit-norm eigenvectors in matching column order.
    pub eigenvectors: CMatrix,
    pub sweeps: usize,
}

/// Full eigendecomposition of a Hermitian matrix by cyclic Jacobi sweeps.
///
/// `tol` is the convergence threshold on the off-diagonal Frobenius norm as a
/// fraction of `‖A‖_F`. Sweeps visit pairs `(p, q)` in row-cyclic order, so the
/// result is a deterministic function of the input. Each eigenvector is
/// rotated so that its largest-magnitude component (first one on ties) is
/// real and positive.
pub fn eig_hermitian(a: &CMatrix, tol: f64) -> Result<EigResult> {
    let n = a.rows();
    if n != a.cols() {
        return Err(Error::DimensionMismatch(format!("{}x{} is not square", a.rows(), a.cols())));
    }
    if n == 0 {
        return Err(Error::Empty("matrix"));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("eigensolver input".into()));
    }
    let norm = a.fro_norm();
    let asym = a.hermitian_asymmetry();
    if asym > 1e-10 * norm.max(1.0) {
        return Err(Error::NotHermitian { asymmetry: asym });
    }

    let mut m = CMatrix::from_fn(n, n, |i, j| {
        if i == j {
            C64::new(a[(i, i)].re, 0.0)
        } else {
            0.5 * (a[(i, j)] + a[(j, i)].conj())
        }
    });
    let mut v = CMatrix::identity(n);
    let target = tol * norm;

    let mut sweeps = 0;
    loop {
        let off = off_diagonal_norm(&m);
        if off <= target || norm == 0.0 {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps, off: off / norm });
        }
        sweeps += 1;
        for p in 0..n - 1 {
            for q in p + 1..n {
                rotate(&mut m, &mut v, p, q);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps the sweep order for exact ties
    order.sort_by(|&i, &j| m[(j, j)].re.total_cmp(&m[(i, i)].re));

    let eigenvalues = order.iter().map(|&i| m[(i, i)].re).collect();
    let mut eigenvectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src);
        fix_phase(&mut col);
        eigenvectors.set_column(dst, &col);
    }
    Ok(EigResult { eigenvalues, eigenvectors, sweeps })
}

fn off_diagonal_norm(m: &CMatrix) -> f64 {
    let n = m.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += m[(i, j)].norm_sqr();
            }
        }
    }
    s.sqrt()
}

/// One complex Jacobi rotation zeroing `m[p][q]`, accumulated into `v`.
fn rotate(m: &mut CMatrix, v: &mut CMatrix, p: usize, q: usize) {
    let apq = m[(p, q)];
    let r = apq.norm();
    if r == 0.0 {
        return;
    }
    let app = m[(p, p)].re;
    let aqq = m[(q, q)].re;
    // negligible coupling relative to both diagonals: skip
    if r <= f64::EPSILON * 1e-3 * (app.abs() + aqq.abs()) {
        m[(p, q)] = C64::new(0.0, 0.0);
        m[(q, p)] = C64::new(0.0, 0.0);
        return;
    }
    let phase = apq / r; // e^{iα}
    let tau = (aqq - app) / (2.0 * r);
    let t = if tau == 0.0 {
        1.0
    } else {
        tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    let ph_conj = phase.conj();

    // J = I except J_pp = c, J_pq = s, J_qp = −s e^{−iα}, J_qq = c e^{−iα}
    let n = m.rows();
    for k in 0..n {
        let mkp = m[(k, p)];
        let mkq = m[(k, q)];
        m[(k, p)] = c * mkp - s * ph_conj * mkq;
        m[(k, q)] = s * mkp + c * ph_conj * mkq;
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * ph_conj * vkq;
        v[(k, q)] = s * vkp + c * ph_conj * vkq;
    }
    for k in 0..n {
        let mpk = m[(p, k)];
        let mqk = m[(q, k)];
        m[(p, k)] = c * mpk - s * phase * mqk;
        m[(q, k)] = s * mpk + c * phase * mqk;
    }
    m[(p, q)] = C64::new(0.0, 0.0);
    m[(q, p)] = C64::new(0.0, 0.0);
    m[(p, p)] = C64::new(m[(p, p)].re, 0.0);
    m[(q, q)] = C64::new(m[(q, q)].re, 0.0);
}

/// Rotates `v` so its largest-magnitude entry is real positive.
pub fn fix_phase(v: &mut [C64]) {
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, z) in v.iter().enumerate() {
        let mag = z.norm_sqr();
        if mag > best_mag {
            best = i;
            best_mag = mag;
        }
    }
    if best_mag <= 0.0 {
        return;
    }
    let rot = v[best].conj() / best_mag.sqrt();
    for z in v.iter_mut() {
        *z *= rot;
    }
    v[best] = C64::new(v[best].norm(), 0.0);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_matrix(rng: &mut impl Rng, r: usize, k: usize) -> CMatrix {
        CMatrix::from_fn(r, k, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn random_hermitian(rng: &mut impl Rng, n: usize) -> CMatrix {
        let a = random_matrix(rng, n, n);
        a.add(&a.adjoint()).unwrap().scale(c(0.5, 0.0))
    }

    #[test]
    fn gram_identity_cases() {
        let i2 = CMatrix::identity(2);
        assert_eq!(gram_average(&[i2.clone()]).unwrap(), i2);
        let g = gram_average(&[i2.clone(), i2.scale(c(2.0, 0.0))]).unwrap();
        assert_eq!(g, CMatrix::diag(&[2.5, 2.5]));
    }

    #[test]
    fn gram_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hs: Vec<_> = (0..5).map(|_| random_matrix(&mut rng, 2, 2)).collect();
        let g = gram_average(&hs).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut s = c(0.0, 0.0);
                for h in &hs {
                    for r in 0..2 {
                        s += h[(r, i)].conj() * h[(r, j)];
                    }
                }
                s /= 5.0;
                assert!((g[(i, j)] - s).norm() < 1e-14);
            }
        }
        assert!(g.hermitian_asymmetry() <= 1e-12);
    }

    #[test]
    fn gram_errors() {
        assert!(matches!(gram_average(&[]), Err(Error::Empty(_))));
        let r = gram_average(&[CMatrix::identity(2), CMatrix::identity(3)]);
        assert!(matches!(r, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn eig_diagonal() {
        let e = eig_hermitian(&CMatrix::diag(&[1.0, 3.0]), DEFAULT_EIG_TOL).unwrap();
        assert_eq!(e.eigenvalues, vec![3.0, 1.0]);
        assert_eq!(e.eigenvectors.column(0), vec![c(0.0, 0.0), c(1.0, 0.0)]);
        assert_eq!(e.eigenvectors.column(1), vec![c(1.0, 0.0), c(0.0, 0.0)]);
    }

    #[test]
    fn eig_two_by_two_closed_form() {
        let a = CMatrix::from_vec(2, 2, vec![c(2.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(2.0, 0.0)])
            .unwrap();
        let e = eig_hermitian(&a, DEFAULT_EIG_TOL).unwrap();
        assert!((e.eigenvalues[0] - 3.0).abs() < 1e-14);
        assert!((e.eigenvalues[1] - 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let w1 = e.eigenvectors.column(0);
        assert!((w1[0] - c(h, 0.0)).norm() < 1e-14 && (w1[1] - c(h, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn eig_complex_two_by_two() {
        // [[1, i], [−i, 1]] has eigenvalues 2 and 0
        let a = CMatrix::from_vec(2, 2, vec![c(1.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(1.0, 0.0)])
            .unwrap();
        let e = eig_hermitian(&a, DEFAULT_EIG_TOL).unwrap();
        assert!((e.eigenvalues[0] - 2.0).abs() < 1e-14);
        assert!(e.eigenvalues[1].abs() < 1e-14);
    }

    #[test]
    fn eig_rejects_bad_input() {
        let a = CMatrix::from_vec(2, 2, vec![c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)])
            .unwrap();
        assert!(matches!(eig_hermitian(&a, 1e-12), Err(Error::NotHermitian { .. })));
        assert!(matches!(
            eig_hermitian(&CMatrix::zeros(2, 3), 1e-12),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn eig_zero_matrix() {
        let e = eig_hermitian(&CMatrix::zeros(3, 3), DEFAULT_EIG_TOL).unwrap();
        assert_eq!(e.eigenvalues, vec![0.0; 3]);
        assert_eq!(e.eigenvectors, CMatrix::identity(3));
    }

    #[test]
    fn eig_properties_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1usize, 2, 3, 5, 8, 16] {
            for _ in 0..20 {
                let a = random_hermitian(&mut rng, n);
                let e = eig_hermitian(&a, DEFAULT_EIG_TOL).unwrap();
                let w = &e.eigenvectors;
                let norm = a.fro_norm();
                for s in 0..n {
                    let col = w.column(s);
                    let aw = a.matvec(&col).unwrap();
                    let res: f64 = aw
                        .iter()
                        .zip(&col)
                        .map(|(x, y)| (x - e.eigenvalues[s] * y).norm_sqr())
                        .sum::<f64>()
                        .sqrt();
                    assert!(res <= 1e-9 * norm, "residual {res}");
                }
                assert!(e.eigenvalues.windows(2).all(|p| p[0] >= p[1]));
                let ortho = w.adjoint().matmul(w).unwrap().sub(&CMatrix::identity(n)).unwrap();
                assert!(ortho.fro_norm() <= 1e-9);
                let tr: f64 = e.eigenvalues.iter().sum();
                assert!((tr - a.trace().re).abs() <= 1e-9 * norm.max(1.0));
            }
        }
    }

    #[test]
    fn eig_deterministic_and_phase_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_hermitian(&mut rng, 6);
        let e1 = eig_hermitian(&a, DEFAULT_EIG_TOL).unwrap();
        let e2 = eig_hermitian(&a, DEFAULT_EIG_TOL).unwrap();
        assert_eq!(e1, e2);
        for s in 0..6 {
            let col = e1.eigenvectors.column(s);
            let big = col.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let lead = col.iter().find(|z| z.norm() == big).unwrap();
            assert_eq!(lead.im, 0.0);
            assert!(lead.re > 0.0);
        }
    }

    #[test]
    fn unitary_conjugation_preserves_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let a = random_hermitian(&mut rng, 5);
            // eigenvectors of an unrelated Hermitian matrix form a random unitary
            let u = eig_hermitian(&random_hermitian(&mut rng, 5), 1e-14).unwrap().eigenvectors;
            let b = u.adjoint().matmul(&a).unwrap().matmul(&u).unwrap();
            let b = b.add(&b.adjoint()).unwrap().scale(c(0.5, 0.0));
            let ea = eig_hermitian(&a, DEFAULT_EIG_TOL).unwrap().eigenvalues;
            let eb = eig_hermitian(&b, DEFAULT_EIG_TOL).unwrap().eigenvalues;
            for (x, y) in ea.iter().zip(&eb) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_matrix(&mut rng, 3, 4);
        let b = random_matrix(&mut rng, 4, 2);
        assert_eq!(CMatrix::identity(3).matmul(&a).unwrap(), a);
        assert_eq!(a.adjoint().adjoint(), a);
        let lhs = a.matmul(&b).unwrap().adjoint();
        let rhs = b.adjoint().matmul(&a.adjoint()).unwrap();
        assert!(lhs.sub(&rhs).unwrap().fro_norm() < 1e-14);
        assert!(matches!(a.matmul(&a), Err(Error::DimensionMismatch(_))));

        let p = random_matrix(&mut rng, 2, 2);
        let q = random_matrix(&mut rng, 2, 2);
        let pq = p.matmul(&q).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut s = c(0.0, 0.0);
                for k in 0..2 {
                    s += p[(i, k)] * q[(k, j)];
                }
                assert!((pq[(i, j)] - s).norm() < 1e-15);
            }
        }
        let f = CMatrix::from_vec(1, 2, vec![c(3.0, 0.0), c(0.0, 4.0)]).unwrap();
        assert_eq!(f.fro_norm(), 5.0);
    }
}
