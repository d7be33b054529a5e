//! Dense complex linear-operator core.
//!
//! Conventions fixed here and used everywhere else:
//! - `vec` is column stacking: `vec(X)[r + d*c] = X[r, c]`.
//! - A map X -> A·X·B is represented on vectorized operators by
//!   `sandwich(A, B) = kron(B^T, A)`, so `vec(A X B) = sandwich(A, B) · vec(X)`.
//! - Composite spaces order the system first: operators on S⊗M are
//!   `kron(A_S, B_M)` with row index `s * d_M + m`.

use ndarray::{Array1, Array2, Axis};
use num_complex::Complex64;

use crate::error::Error;

pub type Matrix = Array2<Complex64>;
pub type Vector = Array1<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

pub fn identity(d: usize) -> Matrix {
    Array2::eye(d)
}

pub fn dagger(a: &Matrix) -> Matrix {
    a.t().mapv(|z| z.conj())
}

/// Column-stacking vectorization: `vec(X)[r + d*c] = X[r, c]`.
pub fn vec_op(x: &Matrix) -> Vector {
    let (rows, cols) = x.dim();
    let mut v = Array1::zeros(rows * cols);
    for c in 0..cols {
        for r in 0..rows {
            v[r + rows * c] = x[(r, c)];
        }
    }
    v
}

/// Inverse of [`vec_op`] for a square d×d operator.
pub fn unvec(v: &Vector, d: usize) -> Result<Matrix, Error> {
    if v.len() != d * d {
        return Err(Error::DimensionMismatch(format!(
            "unvec: vector length {} is not {}^2",
            v.len(),
            d
        )));
    }
    let mut x = Array2::zeros((d, d));
    for c in 0..d {
        for r in 0..d {
            x[(r, c)] = v[r + d * c];
        }
    }
    Ok(x)
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == ZERO {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Superoperator of X -> A·X·B in the column-stacking convention.
pub fn sandwich(a: &Matrix, b: &Matrix) -> Matrix {
    kron(&b.t().to_owned(), a)
}

/// Superoperator of X -> A·X.
pub fn left_mul(a: &Matrix) -> Matrix {
    sandwich(a, &identity(a.nrows()))
}

/// Superoperator of X -> X·B.
pub fn right_mul(b: &Matrix) -> Matrix {
    sandwich(&identity(b.nrows()), b)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Subsystem {
    A,
    B,
}

/// Partial trace of an operator on H_A ⊗ H_B (row index `a * d_b + b`).
/// `keep` selects the subsystem that survives.
pub fn partial_trace(x: &Matrix, d_a: usize, d_b: usize, keep: Subsystem) -> Result<Matrix, Error> {
    if x.nrows() != d_a * d_b || x.ncols() != d_a * d_b {
        return Err(Error::DimensionMismatch(format!(
            "partial_trace: matrix is {}x{}, dims give {}",
            x.nrows(),
            x.ncols(),
            d_a * d_b
        )));
    }
    match keep {
        Subsystem::A => {
            let mut out = Array2::zeros((d_a, d_a));
            for r in 0..d_a {
                for c in 0..d_a {
                    let mut s = ZERO;
                    for m in 0..d_b {
                        s += x[(r * d_b + m, c * d_b + m)];
                    }
                    out[(r, c)] = s;
                }
            }
            Ok(out)
        }
        Subsystem::B => {
            let mut out = Array2::zeros((d_b, d_b));
            for r in 0..d_b {
                for c in 0..d_b {
                    let mut s = ZERO;
                    for a in 0..d_a {
                        s += x[(a * d_b + r, a * d_b + c)];
                    }
                    out[(r, c)] = s;
                }
            }
            Ok(out)
        }
    }
}

/// Dense product. Large complex products go through four real-valued
/// gemm calls on the split parts, which outruns the direct complex
/// kernel by roughly 1.6x at the sizes the propagators use.
pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    if a.nrows().min(b.ncols()).min(a.ncols()) < 64 {
        return a.dot(b);
    }
    let ar = a.mapv(|z| z.re);
    let ai = a.mapv(|z| z.im);
    let br = b.mapv(|z| z.re);
    let bi = b.mapv(|z| z.im);
    let re = ar.dot(&br) - ai.dot(&bi);
    let im = ar.dot(&bi) + ai.dot(&br);
    ndarray::Zip::from(&re)
        .and(&im)
        .map_collect(|&r, &i| Complex64::new(r, i))
}

pub fn matvec(a: &Matrix, v: &Vector) -> Vector {
    a.dot(v)
}

/// Maximum absolute column sum (induced 1-norm).
pub fn one_norm(a: &Matrix) -> f64 {
    a.axis_iter(Axis(1))
        .map(|col| col.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(a: &Matrix) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn is_finite(a: &Matrix) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Solve A·X = B for X by LU with partial pivoting.
pub fn lu_solve(a: &Matrix, b: &Matrix) -> Result<Matrix, Error> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "lu_solve: A is {}x{}, B has {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    let mut lu = a.clone();
    let mut x = b.clone();
    let m = x.ncols();
    let mut piv: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut p = k;
        let mut best = lu[(k, k)].norm();
        for r in k + 1..n {
            let v = lu[(r, k)].norm();
            if v > best {
                best = v;
                p = r;
            }
        }
        if best == 0.0 {
            return Err(Error::InvalidParameter("lu_solve: singular matrix".into()));
        }
        if p != k {
            piv.swap(p, k);
            for c in 0..n {
                let t = lu[(k, c)];
                lu[(k, c)] = lu[(p, c)];
                lu[(p, c)] = t;
            }
            for c in 0..m {
                let t = x[(k, c)];
                x[(k, c)] = x[(p, c)];
                x[(p, c)] = t;
            }
        }
        let pivot = lu[(k, k)];
        for r in k + 1..n {
            let f = lu[(r, k)] / pivot;
            lu[(r, k)] = f;
            if f != ZERO {
                let (row_k, mut row_r) = lu.multi_slice_mut((ndarray::s![k, k + 1..], ndarray::s![r, k + 1..]));
                row_r.zip_mut_with(&row_k, |rr, kk| *rr -= f * *kk);
            }
        }
    }
    // forward substitution on the permuted right-hand side
    for k in 0..n {
        for r in k + 1..n {
            let f = lu[(r, k)];
            if f != ZERO {
                let (row_k, mut row_r) = x.multi_slice_mut((ndarray::s![k, ..], ndarray::s![r, ..]));
                row_r.zip_mut_with(&row_k, |rr, kk| *rr -= f * *kk);
            }
        }
    }
    // back substitution
    for k in (0..n).rev() {
        let d = lu[(k, k)];
        for c in 0..m {
            x[(k, c)] /= d;
        }
        for r in 0..k {
            let f = lu[(r, k)];
            if f != ZERO {
                let (row_k, mut row_r) = x.multi_slice_mut((ndarray::s![k, ..], ndarray::s![r, ..]));
                row_r.zip_mut_with(&row_k, |rr, kk| *rr -= f * *kk);
            }
        }
    }
    Ok(x)
}

// Pade approximant tables from Higham, "The Scaling and Squaring Method for
// the Matrix Exponential Revisited" (2005); order selected by the 1-norm.
const THETA3: f64 = 1.495585217958292e-2;
const THETA5: f64 = 2.539398330063230e-1;
const THETA7: f64 = 9.504178996162932e-1;
const THETA9: f64 = 2.097847961257068;
const THETA13: f64 = 5.371920351148152;

const B3: [f64; 4] = [120., 60., 12., 1.];
const B5: [f64; 6] = [30240., 15120., 3360., 420., 30., 1.];
const B7: [f64; 8] = [17297280., 8648640., 1995840., 277200., 25200., 1512., 56., 1.];
const B9: [f64; 10] = [
    17643225600.,
    8821612800.,
    2075673600.,
    302702400.,
    30270240.,
    2162160.,
    110880.,
    3960.,
    90.,
    1.,
];
const B13: [f64; 14] = [
    64764752532480000.,
    32382376266240000.,
    7771770303897600.,
    1187353796428800.,
    129060195264000.,
    10559470521600.,
    670442572800.,
    33522128640.,
    1323241920.,
    40840800.,
    960960.,
    16380.,
    182.,
    1.,
];

fn poly_uv(a: &Matrix, powers: &[&Matrix], b: &[f64]) -> (Matrix, Matrix) {
    // powers = [A^2, A^4, ...]; U = A * (odd part), V = even part
    let n = a.nrows();
    let id = identity(n);
    let mut odd = &id * Complex64::new(b[1], 0.0);
    let mut even = &id * Complex64::new(b[0], 0.0);
    for (i, p) in powers.iter().enumerate() {
        let k = 2 * (i + 1);
        odd = odd + *p * Complex64::new(b[k + 1], 0.0);
        even = even + *p * Complex64::new(b[k], 0.0);
    }
    (matmul(a, &odd), even)
}

fn frexp_exponent(x: f64) -> i32 {
    // exponent e of x = m * 2^e with m in [0.5, 1)
    if x == 0.0 || !x.is_finite() {
        return 0;
    }
    let bits = x.to_bits();
    let raw = ((bits >> 52) & 0x7ff) as i32;
    if raw == 0 {
        x.abs().log2().floor() as i32 + 1
    } else {
        raw - 1022
    }
}

/// Matrix exponential by scaling-and-squaring with diagonal Pade
/// approximants of order 3/5/7/9/13, the order and the power-of-two
/// scaling both chosen from the 1-norm (Higham 2005).
pub fn expm(a: &Matrix) -> Result<Matrix, Error> {
    if !is_finite(a) {
        return Err(Error::NonFinite("expm input"));
    }
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "expm: matrix is {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let norm = one_norm(a);
    let (u, v, squarings) = if norm < THETA9 {
        let a2 = matmul(a, a);
        if norm < THETA3 {
            let (u, v) = poly_uv(a, &[&a2], &B3);
            (u, v, 0)
        } else if norm < THETA5 {
            let a4 = matmul(&a2, &a2);
            let (u, v) = poly_uv(a, &[&a2, &a4], &B5);
            (u, v, 0)
        } else if norm < THETA7 {
            let a4 = matmul(&a2, &a2);
            let a6 = matmul(&a4, &a2);
            let (u, v) = poly_uv(a, &[&a2, &a4, &a6], &B7);
            (u, v, 0)
        } else {
            let a4 = matmul(&a2, &a2);
            let a6 = matmul(&a4, &a2);
            let a8 = matmul(&a6, &a2);
            let (u, v) = poly_uv(a, &[&a2, &a4, &a6, &a8], &B9);
            (u, v, 0)
        }
    } else {
        let s = frexp_exponent(norm / THETA13).max(0);
        let scale = Complex64::new((2.0f64).powi(-s), 0.0);
        let a1 = a * scale;
        let a2 = matmul(&a1, &a1);
        let a4 = matmul(&a2, &a2);
        let a6 = matmul(&a4, &a2);
        // order 13 splits the polynomial to reuse A^6
        let id = identity(n);
        let w1 = &a6 * Complex64::new(B13[13], 0.0)
            + &a4 * Complex64::new(B13[11], 0.0)
            + &a2 * Complex64::new(B13[9], 0.0);
        let w2 = matmul(&a6, &w1)
            + &a6 * Complex64::new(B13[7], 0.0)
            + &a4 * Complex64::new(B13[5], 0.0)
            + &a2 * Complex64::new(B13[3], 0.0)
            + &id * Complex64::new(B13[1], 0.0);
        let u = matmul(&a1, &w2);
        let z1 = &a6 * Complex64::new(B13[12], 0.0)
            + &a4 * Complex64::new(B13[10], 0.0)
            + &a2 * Complex64::new(B13[8], 0.0);
        let v = matmul(&a6, &z1)
            + &a6 * Complex64::new(B13[6], 0.0)
            + &a4 * Complex64::new(B13[4], 0.0)
            + &a2 * Complex64::new(B13[2], 0.0)
            + &id * Complex64::new(B13[0], 0.0);
        (u, v, s)
    };
    let denom = &v - &u;
    let numer = &v + &u;
    let mut r = lu_solve(&denom, &numer)?;
    for _ in 0..squarings {
        r = matmul(&r, &r);
    }
    Ok(r)
}

/// Eigenvalues and eigenvectors of a Hermitian matrix by the cyclic
/// complex Jacobi method. Returns eigenvalues ascending; columns of the
/// second output are the matching orthonormal eigenvectors.
pub fn eigh(a: &Matrix) -> Result<(Array1<f64>, Matrix), Error> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "eigh: matrix is {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let mut m = a.clone();
    let mut q = identity(n);
    let scale = max_abs(a).max(1e-300);
    let tol = 1e-15 * scale;
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..n {
            for r in p + 1..n {
                off = off.max(m[(p, r)].norm());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for r in p + 1..n {
                let apq = m[(p, r)];
                if apq.norm() <= tol * 1e-2 {
                    continue;
                }
                let app = m[(p, p)].re;
                let aqq = m[(r, r)].re;
                let abs_apq = apq.norm();
                let phase = apq / abs_apq;
                let tau = (aqq - app) / (2.0 * abs_apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // columns: [p, r] <- [c*p - conj(s*phase)*r ... ] unitary
                let sp = phase * s;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkr = m[(k, r)];
                    m[(k, p)] = mkp * c - mkr * sp.conj();
                    m[(k, r)] = mkp * sp + mkr * c;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mrk = m[(r, k)];
                    m[(p, k)] = mpk * c - mrk * sp;
                    m[(r, k)] = mpk * sp.conj() + mrk * c;
                }
                for k in 0..n {
                    let qkp = q[(k, p)];
                    let qkr = q[(k, r)];
                    q[(k, p)] = qkp * c - qkr * sp.conj();
                    q[(k, r)] = qkp * sp + qkr * c;
                }
            }
        }
    }
    let mut pairs: Vec<(f64, usize)> = (0..n).map(|i| (m[(i, i)].re, i)).collect();
    pairs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let vals = Array1::from_iter(pairs.iter().map(|&(v, _)| v));
    let mut vecs = Array2::zeros((n, n));
    for (out_col, &(_, src_col)) in pairs.iter().enumerate() {
        for k in 0..n {
            vecs[(k, out_col)] = q[(k, src_col)];
        }
    }
    Ok((vals, vecs))
}

/// Singular values (descending) via the eigenvalues of A†A.
pub fn singular_values(a: &Matrix) -> Result<Array1<f64>, Error> {
    let ata = matmul(&dagger(a), a);
    let (vals, _) = eigh(&ata)?;
    let mut s: Vec<f64> = vals.iter().map(|&v| v.max(0.0).sqrt()).collect();
    s.reverse();
    Ok(Array1::from_vec(s))
}

/// Choi matrix of a SuperMap on a d-dimensional system:
/// J = Σ_ij E_ij ⊗ Φ[E_ij].
pub fn choi(phi: &Matrix) -> Result<Matrix, Error> {
    let d2 = phi.nrows();
    let d = (d2 as f64).sqrt().round() as usize;
    if d * d != d2 || phi.ncols() != d2 {
        return Err(Error::DimensionMismatch(format!(
            "choi: supermap is {}x{}",
            phi.nrows(),
            phi.ncols()
        )));
    }
    let mut j = Array2::zeros((d2, d2));
    for i in 0..d {
        for jj in 0..d {
            // vec(E_ij) = e_{i + d*j}
            let col = phi.column(i + d * jj);
            for r in 0..d {
                for c in 0..d {
                    j[(i * d + r, jj * d + c)] = col[r + d * c];
                }
            }
        }
    }
    Ok(j)
}

/// CP test: all Choi eigenvalues ≥ −tol (the Choi matrix of a
/// Hermiticity-preserving map is Hermitian; a small anti-Hermitian
/// residue is tolerated and symmetrized away).
pub fn is_completely_positive(phi: &Matrix, tol: f64) -> Result<bool, Error> {
    let j = choi(phi)?;
    let jd = dagger(&j);
    let herm_residue = max_abs(&(&j - &jd)) * 0.5;
    if herm_residue > tol.max(1e-12) * 10.0 {
        return Ok(false);
    }
    let sym = (&j + &jd) * Complex64::new(0.5, 0.0);
    let (vals, _) = eigh(&sym)?;
    Ok(vals.iter().all(|&v| v >= -tol))
}

/// TP test: vec(1)† Φ = vec(1)† within tol.
pub fn is_trace_preserving(phi: &Matrix, tol: f64) -> Result<bool, Error> {
    let d2 = phi.nrows();
    let d = (d2 as f64).sqrt().round() as usize;
    if d * d != d2 {
        return Err(Error::DimensionMismatch("is_trace_preserving".into()));
    }
    let tr_vec = vec_op(&identity(d));
    for c in 0..d2 {
        let mut s = ZERO;
        for r in 0..d2 {
            s += tr_vec[r].conj() * phi[(r, c)];
        }
        if (s - tr_vec[c].conj()).norm() > tol {
            return Ok(false);
        }
    }
    Ok(true)
}
