//! Small dense linear algebra: just enough for the Riccati solver and the
//! spectral checks (n ≤ ~10). Row-major matrices.

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows[0].len();
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul dims");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Max absolute row sum (induced ∞-norm).
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.data[i * self.cols..(i + 1) * self.cols].iter().map(|v| v.abs()).sum())
            .fold(0.0, f64::max)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len());
        (0..self.rows)
            .map(|i| {
                self.data[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Solve A x = b by Gaussian elimination with partial pivoting.
pub fn solve_linear(a: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows;
    if a.cols != n || b.len() != n {
        return Err(Error::Shape { ctx: "solve_linear", expected: n, got: b.len() });
    }
    let mut aug = a.data.clone();
    let mut x = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        let mut best = aug[col * n + col].abs();
        for row in col + 1..n {
            let v = aug[row * n + col].abs();
            if v > best {
                best = v;
                piv = row;
            }
        }
        if best < 1e-300 {
            return Err(Error::Numeric("singular matrix in solve_linear".into()));
        }
        if piv != col {
            for j in 0..n {
                aug.swap(col * n + j, piv * n + j);
            }
            x.swap(col, piv);
        }
        let d = aug[col * n + col];
        for row in col + 1..n {
            let f = aug[row * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                aug[row * n + j] -= f * aug[col * n + j];
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = x[col];
        for j in col + 1..n {
            acc -= aug[col * n + j] * x[j];
        }
        x[col] = acc / aug[col * n + col];
    }
    Ok(x)
}

/// Inverse via n right-hand sides; fine at these sizes.
pub fn inverse(a: &Mat) -> Result<Mat> {
    let n = a.rows;
    let mut out = Mat::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = solve_linear(a, &e)?;
        for i in 0..n {
            out[(i, j)] = col[i];
        }
    }
    Ok(out)
}

// ---- eigenvalues ---------------------------------------------------------

#[derive(Clone, Copy, Debug)]
struct C64 {
    re: f64,
    im: f64,
}

impl C64 {
    fn new(re: f64, im: f64) -> Self {
        C64 { re, im }
    }
    fn add(self, o: C64) -> C64 {
        C64::new(self.re + o.re, self.im + o.im)
    }
    fn sub(self, o: C64) -> C64 {
        C64::new(self.re - o.re, self.im - o.im)
    }
    fn mul(self, o: C64) -> C64 {
        C64::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }
    fn div(self, o: C64) -> C64 {
        let d = o.re * o.re + o.im * o.im;
        C64::new((self.re * o.re + self.im * o.im) / d, (self.im * o.re - self.re * o.im) / d)
    }
    fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }
}

/// Characteristic polynomial coefficients by the Faddeev–LeVerrier recursion:
/// λⁿ + c[0] λⁿ⁻¹ + … + c[n-1].
fn char_poly(a: &Mat) -> Vec<f64> {
    let n = a.rows;
    let mut coeffs = Vec::with_capacity(n);
    let mut m = a.clone();
    for k in 1..=n {
        let tr: f64 = (0..n).map(|i| m[(i, i)]).sum();
        let c = -tr / k as f64;
        coeffs.push(c);
        if k < n {
            let mut shifted = m.clone();
            for i in 0..n {
                shifted[(i, i)] += c;
            }
            m = a.matmul(&shifted);
        }
    }
    coeffs
}

/// All eigenvalues of a real square matrix as (re, im) pairs, by
/// Durand–Kerner iteration on the characteristic polynomial. Intended for
/// the small plant/closed-loop matrices this crate works with.
pub fn eigenvalues(a: &Mat) -> Result<Vec<(f64, f64)>> {
    let n = a.rows;
    if a.cols != n {
        return Err(Error::Shape { ctx: "eigenvalues", expected: n, got: a.cols });
    }
    if a.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite matrix entry".into()));
    }
    if n == 0 {
        return Ok(vec![]);
    }
    if n == 1 {
        return Ok(vec![(a[(0, 0)], 0.0)]);
    }
    let coeffs = char_poly(a);
    let eval = |z: C64| -> C64 {
        let mut acc = C64::new(1.0, 0.0);
        for &c in &coeffs {
            acc = acc.mul(z).add(C64::new(c, 0.0));
        }
        acc
    };
    // Radius bound on roots: 1 + max |c_k|.
    let radius = 1.0 + coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let mut roots: Vec<C64> = (0..n)
        .map(|i| {
            let ang = 2.0 * std::f64::consts::PI * (i as f64 + 0.25) / n as f64;
            C64::new(0.4 * radius * ang.cos(), 0.4 * radius * ang.sin() + 0.1)
        })
        .collect();
    let tol = 1e-13 * radius.max(1.0);
    for _ in 0..1000 {
        let mut max_step = 0.0f64;
        for i in 0..n {
            let mut denom = C64::new(1.0, 0.0);
            for j in 0..n {
                if i != j {
                    denom = denom.mul(roots[i].sub(roots[j]));
                }
            }
            let delta = eval(roots[i]).div(denom);
            roots[i] = roots[i].sub(delta);
            max_step = max_step.max(delta.abs());
        }
        if max_step < tol {
            // Collapse conjugate noise: tiny imaginary parts are real roots.
            return Ok(roots
                .iter()
                .map(|z| if z.im.abs() < 1e-9 * radius.max(1.0) { (z.re, 0.0) } else { (z.re, z.im) })
                .collect());
        }
    }
    Err(Error::Numeric("eigenvalue iteration did not converge".into()))
}

/// Maximum real part of the spectrum.
pub fn eigenvalues_max_real(a: &Mat) -> Result<f64> {
    let eigs = eigenvalues(a)?;
    Ok(eigs.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_roundtrip() {
        let a = Mat::from_rows(&[&[2.0, 1.0, 0.0], &[1.0, 3.0, 1.0], &[0.0, 1.0, 4.0]]);
        let x_true = vec![1.0, -2.0, 0.5];
        let b = a.matvec(&x_true);
        let x = solve_linear(&a, &b).unwrap();
        for (xa, xb) in x.iter().zip(&x_true) {
            assert!((xa - xb).abs() < 1e-12);
        }
    }

    #[test]
    fn diag_eigenvalues() {
        let a = Mat::from_rows(&[&[-1.0, 0.0], &[0.0, -2.0]]);
        assert!((eigenvalues_max_real(&a).unwrap() - (-1.0)).abs() < 1e-9);
    }

    #[test]
    fn rotation_spectrum_is_imaginary() {
        let a = Mat::from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        let eigs = eigenvalues(&a).unwrap();
        assert!(eigenvalues_max_real(&a).unwrap().abs() < 1e-9);
        let mut ims: Vec<f64> = eigs.iter().map(|e| e.1).collect();
        ims.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((ims[0] + 1.0).abs() < 1e-9 && (ims[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn known_3x3_spectrum() {
        // Companion-style matrix of (λ+1)(λ+2)(λ+3) = λ³+6λ²+11λ+6.
        let a = Mat::from_rows(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[-6.0, -11.0, -6.0]]);
        let mut res: Vec<f64> = eigenvalues(&a).unwrap().iter().map(|e| e.0).collect();
        res.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (got, want) in res.iter().zip(&[-3.0, -2.0, -1.0]) {
            assert!((got - want).abs() < 1e-8, "got {got} want {want}");
        }
    }

    #[test]
    fn singular_solve_fails() {
        let a = Mat::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert!(solve_linear(&a, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn non_finite_matrix_rejected() {
        let a = Mat::from_rows(&[&[f64::NAN, 0.0], &[0.0, 1.0]]);
        assert!(eigenvalues(&a).is_err());
    }
}
