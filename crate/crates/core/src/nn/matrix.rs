use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::parallel::{self, Exec};

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Row blocks smaller than this are not worth a task.
const MIN_ROWS_PER_TASK: usize = 16;

/// Operand layout for [`gemm`].
#[derive(Clone, Copy)]
enum Op {
    N,
    T,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return invalid(format!("{} values for a {rows}x{cols} matrix", data.len()));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return invalid("ragged rows");
        }
        Ok(Matrix { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Selects rows by index, in the given order.
    pub fn gather_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: idx.len(), cols: self.cols, data }
    }

    /// `self * other^T`: (n x k) by (m x k) gives (n x m).
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        self.matmul_t_exec(other, parallel::exec())
    }

    pub fn matmul_t_exec(&self, other: &Matrix, exec: Exec) -> Result<Matrix> {
        if self.cols != other.cols {
            return invalid(format!("matmul_t shape mismatch {:?} x {:?}^T", self.shape(), other.shape()));
        }
        Ok(gemm(self, Op::N, other, Op::T, exec))
    }

    /// `self * other`: (n x k) by (k x m).
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        self.matmul_exec(other, parallel::exec())
    }

    pub fn matmul_exec(&self, other: &Matrix, exec: Exec) -> Result<Matrix> {
        if self.cols != other.rows {
            return invalid(format!("matmul shape mismatch {:?} x {:?}", self.shape(), other.shape()));
        }
        Ok(gemm(self, Op::N, other, Op::N, exec))
    }

    /// `self^T * other`: (k x n)^T by (k x m) gives (n x m).
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return invalid(format!("t_matmul shape mismatch {:?}^T x {:?}", self.shape(), other.shape()));
        }
        Ok(gemm(self, Op::T, other, Op::N, parallel::exec()))
    }

    /// Column sums.
    pub fn sum_rows(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn add_row_vector(&mut self, v: &[f64]) {
        debug_assert_eq!(v.len(), self.cols);
        for r in 0..self.rows {
            for (a, b) in self.row_mut(r).iter_mut().zip(v) {
                *a += b;
            }
        }
    }
}

/// `C = op(A) * op(B)`; output rows are split into independent blocks when
/// running in parallel. Each element accumulates over k in the same order
/// either way, so the result is bit-identical across modes.
fn gemm(a: &Matrix, op_a: Op, b: &Matrix, op_b: Op, exec: Exec) -> Matrix {
    let (m, k) = match op_a {
        Op::N => (a.rows, a.cols),
        Op::T => (a.cols, a.rows),
    };
    let n = match op_b {
        Op::N => b.cols,
        Op::T => b.rows,
    };
    let (rsa, csa) = match op_a {
        Op::N => (a.cols as isize, 1),
        Op::T => (1, a.cols as isize),
    };
    let (rsb, csb) = match op_b {
        Op::N => (b.cols as isize, 1),
        Op::T => (1, b.cols as isize),
    };
    let mut c = Matrix::zeros(m, n);
    if m == 0 || n == 0 {
        return c;
    }

    let block = |row0: usize, out: &mut [f64]| {
        let rows = out.len() / n;
        let a_off = row0 as isize * rsa;
        // SAFETY: the A block starts at row `row0` of op(A) and covers `rows`
        // rows, all inside `a.data`; `out` is exactly `rows * n` contiguous
        // elements with row stride `n`; B is read-only and fully in bounds.
        unsafe {
            matrixmultiply::dgemm(
                rows,
                k,
                n,
                1.0,
                a.data.as_ptr().offset(a_off),
                rsa,
                csa,
                b.data.as_ptr(),
                rsb,
                csb,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    };

    let parallel_ok = exec == Exec::Parallel && parallel::is_parallel() && m >= 2 * MIN_ROWS_PER_TASK && parallel::threads() > 1;
    if parallel_ok {
        // One block per worker: every block repacks B.
        let tasks = (m / MIN_ROWS_PER_TASK).clamp(1, parallel::threads());
        let rows_per = m.div_ceil(tasks);
        parallel::for_each_chunk_mut(&mut c.data, rows_per * n, |i, out| block(i * rows_per, out));
    } else {
        block(0, &mut c.data);
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut c = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let s: f64 = (0..a.cols()).map(|t| a.get(i, t) * b.get(t, j)).sum();
                c.set(i, j, s);
            }
        }
        c
    }

    fn transpose(a: &Matrix) -> Matrix {
        let mut t = Matrix::zeros(a.cols(), a.rows());
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                t.set(j, i, a.get(i, j));
            }
        }
        t
    }

    fn close(a: &Matrix, b: &Matrix) -> bool {
        a.shape() == b.shape() && a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn products_match_naive() {
        let a = random(37, 19, 1);
        let b = random(19, 23, 2);
        assert!(close(&a.matmul(&b).unwrap(), &naive(&a, &b)));
        let bt = transpose(&b);
        assert!(close(&a.matmul_t(&bt).unwrap(), &naive(&a, &b)));
        let at = transpose(&a);
        assert!(close(&at.t_matmul(&b).unwrap(), &naive(&a, &b)));
    }

    #[test]
    fn parallel_is_bit_identical() {
        let check = || {
            let a = random(200, 64, 3);
            let w = random(48, 64, 4);
            let seq = a.matmul_t_exec(&w, Exec::Sequential).unwrap();
            let par = a.matmul_t_exec(&w, Exec::Parallel).unwrap();
            assert_eq!(seq, par);
            let b = random(64, 33, 5);
            assert_eq!(a.matmul_exec(&b, Exec::Sequential).unwrap(), a.matmul_exec(&b, Exec::Parallel).unwrap());
        };
        // Force several workers so the row split runs even on one core.
        #[cfg(feature = "parallel")]
        rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(check);
        check();
    }

    #[test]
    fn shape_errors() {
        let a = Matrix::zeros(2, 3);
        assert!(a.matmul(&Matrix::zeros(2, 3)).is_err());
        assert!(a.matmul_t(&Matrix::zeros(3, 2)).is_err());
        assert!(a.t_matmul(&Matrix::zeros(3, 2)).is_err());
        assert!(Matrix::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Matrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn reductions() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.sum_rows(), vec![4.0, 6.0]);
        assert_eq!(m.gather_rows(&[1, 1]).as_slice(), &[3.0, 4.0, 3.0, 4.0]);
    }
}
