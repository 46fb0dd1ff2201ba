//! Eigendecomposition of general real matrices.
//!
//! Householder reduction to upper Hessenberg form followed by the Francis
//! double-shift QR iteration and back substitution for the eigenvectors
//! (the classic EISPACK `orthes`/`hqr2` pair). Complex eigenvalues come out
//! in conjugate pairs by construction since all arithmetic is real.

use num_complex::Complex64;

use super::{ComplexMatrix, LinalgError, RealMatrix};

/// Default bound on `‖VΛV⁻¹ − K‖_F / ‖K‖_F` before a decomposition is rejected.
pub const DEFAULT_RECONSTRUCTION_TOL: f64 = 1e-6;

/// Iterations allowed per eigenvalue before giving up.
const MAX_ITER_PER_EIGENVALUE: usize = 60;

#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<Complex64>,
    /// Eigenvectors stored as columns, each normalized to unit 2-norm.
    pub eigenvectors: ComplexMatrix,
    pub reconstruction_residual: f64,
    matrix: RealMatrix,
}

impl EigenDecomposition {
    /// The matrix that was decomposed.
    pub fn matrix(&self) -> &RealMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }
}

pub fn eig(k: &RealMatrix) -> Result<EigenDecomposition, LinalgError> {
    eig_with_tolerance(k, DEFAULT_RECONSTRUCTION_TOL)
}

pub fn eig_with_tolerance(k: &RealMatrix, tol: f64) -> Result<EigenDecomposition, LinalgError> {
    if !k.is_square() {
        return Err(LinalgError::NotSquare(k.rows(), k.cols()));
    }
    if k.rows() == 0 {
        return Err(LinalgError::Shape("empty matrix".into()));
    }
    if !k.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let n = k.rows();
    let mut h: Vec<Vec<f64>> = k.as_slice().chunks(n).map(<[f64]>::to_vec).collect();
    let mut v = vec![vec![0.0; n]; n];
    orthes(&mut h, &mut v);
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    hqr2(&mut h, &mut v, &mut wr, &mut wi)?;

    let mut eigenvalues = Vec::with_capacity(n);
    let mut vecs = ComplexMatrix::zeros(n, n);
    let mut j = 0;
    while j < n {
        if wi[j] == 0.0 {
            eigenvalues.push(Complex64::new(wr[j], 0.0));
            for i in 0..n {
                vecs[(i, j)] = Complex64::new(v[i][j], 0.0);
            }
            j += 1;
        } else {
            // Columns j, j+1 hold the real and imaginary parts of the
            // eigenvector for wr[j] + i·wi[j] (wi[j] > 0).
            let lam = Complex64::new(wr[j], wi[j]);
            eigenvalues.push(lam);
            eigenvalues.push(lam.conj());
            for i in 0..n {
                let c = Complex64::new(v[i][j], v[i][j + 1]);
                vecs[(i, j)] = c;
                vecs[(i, j + 1)] = c.conj();
            }
            j += 2;
        }
    }
    for j in 0..n {
        let norm = (0..n).map(|i| vecs[(i, j)].norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.0 {
            for i in 0..n {
                vecs[(i, j)] /= norm;
            }
        }
    }

    let inv = vecs.inverse().map_err(|_| LinalgError::IllConditioned {
        residual: f64::INFINITY,
    })?;
    let recon = vecs.scale_columns(&eigenvalues).matmul(&inv);
    let knorm = k.frobenius_norm();
    let mut diff = 0.0;
    for i in 0..n {
        for j in 0..n {
            diff += (recon[(i, j)] - Complex64::new(k[(i, j)], 0.0)).norm_sqr();
        }
    }
    let residual = if knorm > 0.0 {
        diff.sqrt() / knorm
    } else {
        diff.sqrt()
    };
    if !residual.is_finite() || residual > tol {
        return Err(LinalgError::IllConditioned { residual });
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors: vecs,
        reconstruction_residual: residual,
        matrix: k.clone(),
    })
}

/// Householder reduction to Hessenberg form; accumulates the orthogonal
/// similarity into `v`.
fn orthes(h: &mut [Vec<f64>], v: &mut [Vec<f64>]) {
    let n = h.len();
    let mut ort = vec![0.0; n];
    let high = n - 1;
    for m in 1..high {
        let scale: f64 = (m..=high).map(|i| h[i][m - 1].abs()).sum();
        if scale == 0.0 {
            continue;
        }
        let mut hh = 0.0;
        for i in (m..=high).rev() {
            ort[i] = h[i][m - 1] / scale;
            hh += ort[i] * ort[i];
        }
        let mut g = hh.sqrt();
        if ort[m] > 0.0 {
            g = -g;
        }
        hh -= ort[m] * g;
        ort[m] -= g;
        for j in m..n {
            let f = (m..=high).rev().map(|i| ort[i] * h[i][j]).sum::<f64>() / hh;
            for i in m..=high {
                h[i][j] -= f * ort[i];
            }
        }
        for row in h.iter_mut().take(high + 1) {
            let f = (m..=high).rev().map(|j| ort[j] * row[j]).sum::<f64>() / hh;
            for j in m..=high {
                row[j] -= f * ort[j];
            }
        }
        ort[m] *= scale;
        h[m][m - 1] = scale * g;
    }

    for (i, row) in v.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = if i == j { 1.0 } else { 0.0 };
        }
    }
    for m in (1..high).rev() {
        if h[m][m - 1] == 0.0 {
            continue;
        }
        for i in m + 1..=high {
            ort[i] = h[i][m - 1];
        }
        for j in m..=high {
            let g: f64 = (m..=high).map(|i| ort[i] * v[i][j]).sum();
            let g = (g / ort[m]) / h[m][m - 1];
            for i in m..=high {
                v[i][j] += g * ort[i];
            }
        }
    }
}

fn cdiv(xr: f64, xi: f64, yr: f64, yi: f64) -> (f64, f64) {
    if yr.abs() > yi.abs() {
        let r = yi / yr;
        let d = yr + r * yi;
        ((xr + r * xi) / d, (xi - r * xr) / d)
    } else {
        let r = yr / yi;
        let d = yi + r * yr;
        ((r * xr + xi) / d, (r * xi - xr) / d)
    }
}

/// Shifted QR iteration on a Hessenberg matrix, then back substitution for
/// the eigenvectors of the quasi-triangular Schur form.
#[allow(clippy::many_single_char_names, unused_assignments)]
fn hqr2(
    h: &mut [Vec<f64>],
    v: &mut [Vec<f64>],
    d: &mut [f64],
    e: &mut [f64],
) -> Result<(), LinalgError> {
    let nn = h.len();
    let low = 0usize;
    let high = nn - 1;
    let eps = f64::EPSILON;
    let mut exshift = 0.0;
    let (mut p, mut q, mut r, mut s, mut z): (f64, f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut t, mut w, mut x, mut y);

    let mut norm = 0.0;
    for i in 0..nn {
        for j in i.saturating_sub(1)..nn {
            norm += h[i][j].abs();
        }
    }

    let mut n = nn as isize - 1;
    let mut iter = 0usize;
    let mut total_iter = 0usize;
    let budget = MAX_ITER_PER_EIGENVALUE * nn;
    while n >= low as isize {
        let nu = n as usize;
        let mut l = nu;
        while l > low {
            s = h[l - 1][l - 1].abs() + h[l][l].abs();
            if s == 0.0 {
                s = norm;
            }
            if h[l][l - 1].abs() < eps * s {
                break;
            }
            l -= 1;
        }

        if l == nu {
            h[nu][nu] += exshift;
            d[nu] = h[nu][nu];
            e[nu] = 0.0;
            n -= 1;
            iter = 0;
        } else if l + 1 == nu {
            w = h[nu][nu - 1] * h[nu - 1][nu];
            p = (h[nu - 1][nu - 1] - h[nu][nu]) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            h[nu][nu] += exshift;
            h[nu - 1][nu - 1] += exshift;
            x = h[nu][nu];

            if q >= 0.0 {
                z = if p >= 0.0 { p + z } else { p - z };
                d[nu - 1] = x + z;
                d[nu] = d[nu - 1];
                if z != 0.0 {
                    d[nu] = x - w / z;
                }
                e[nu - 1] = 0.0;
                e[nu] = 0.0;
                x = h[nu][nu - 1];
                s = x.abs() + z.abs();
                p = x / s;
                q = z / s;
                r = (p * p + q * q).sqrt();
                p /= r;
                q /= r;
                for j in nu - 1..nn {
                    z = h[nu - 1][j];
                    h[nu - 1][j] = q * z + p * h[nu][j];
                    h[nu][j] = q * h[nu][j] - p * z;
                }
                for row in h.iter_mut().take(nu + 1) {
                    z = row[nu - 1];
                    row[nu - 1] = q * z + p * row[nu];
                    row[nu] = q * row[nu] - p * z;
                }
                for row in v.iter_mut().take(high + 1).skip(low) {
                    z = row[nu - 1];
                    row[nu - 1] = q * z + p * row[nu];
                    row[nu] = q * row[nu] - p * z;
                }
            } else {
                d[nu - 1] = x + p;
                d[nu] = x + p;
                e[nu - 1] = z;
                e[nu] = -z;
            }
            n -= 2;
            iter = 0;
        } else {
            x = h[nu][nu];
            y = 0.0;
            w = 0.0;
            if l < nu {
                y = h[nu - 1][nu - 1];
                w = h[nu][nu - 1] * h[nu - 1][nu];
            }

            // Exceptional shifts break cycles that plain Francis shifts can fall into.
            if iter == 10 {
                exshift += x;
                for i in low..=nu {
                    h[i][i] -= x;
                }
                s = h[nu][nu - 1].abs() + h[nu - 1][nu - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            if iter == 30 {
                s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for i in low..=nu {
                        h[i][i] -= s;
                    }
                    exshift += s;
                    x = 0.964;
                    y = x;
                    w = x;
                }
            }

            iter += 1;
            total_iter += 1;
            if total_iter > budget {
                return Err(LinalgError::NonConvergence {
                    iterations: total_iter,
                });
            }

            let mut m = nu - 2;
            loop {
                z = h[m][m];
                r = x - z;
                s = y - z;
                p = (r * s - w) / h[m + 1][m] + h[m][m + 1];
                q = h[m + 1][m + 1] - z - r - s;
                r = h[m + 2][m + 1];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                if h[m][m - 1].abs() * (q.abs() + r.abs())
                    < eps * (p.abs() * (h[m - 1][m - 1].abs() + z.abs() + h[m + 1][m + 1].abs()))
                {
                    break;
                }
                m -= 1;
            }

            for i in m + 2..=nu {
                h[i][i - 2] = 0.0;
                if i > m + 2 {
                    h[i][i - 3] = 0.0;
                }
            }

            let mut k = m;
            while k < nu {
                let notlast = k != nu - 1;
                if k != m {
                    p = h[k][k - 1];
                    q = h[k + 1][k - 1];
                    r = if notlast { h[k + 2][k - 1] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        k += 1;
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s != 0.0 {
                    if k != m {
                        h[k][k - 1] = -s * x;
                    } else if l != m {
                        h[k][k - 1] = -h[k][k - 1];
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;

                    for j in k..nn {
                        p = h[k][j] + q * h[k + 1][j];
                        if notlast {
                            p += r * h[k + 2][j];
                            h[k + 2][j] -= p * z;
                        }
                        h[k][j] -= p * x;
                        h[k + 1][j] -= p * y;
                    }
                    for row in h.iter_mut().take(nu.min(k + 3) + 1) {
                        p = x * row[k] + y * row[k + 1];
                        if notlast {
                            p += z * row[k + 2];
                            row[k + 2] -= p * r;
                        }
                        row[k] -= p;
                        row[k + 1] -= p * q;
                    }
                    for row in v.iter_mut().take(high + 1).skip(low) {
                        p = x * row[k] + y * row[k + 1];
                        if notlast {
                            p += z * row[k + 2];
                            row[k + 2] -= p * r;
                        }
                        row[k] -= p;
                        row[k + 1] -= p * q;
                    }
                }
                k += 1;
            }
        }
    }

    if norm == 0.0 {
        return Ok(());
    }

    for nu in (0..nn).rev() {
        p = d[nu];
        q = e[nu];
        if q == 0.0 {
            let mut l = nu;
            h[nu][nu] = 1.0;
            for i in (0..nu).rev() {
                w = h[i][i] - p;
                r = 0.0;
                for j in l..=nu {
                    r += h[i][j] * h[j][nu];
                }
                if e[i] < 0.0 {
                    z = w;
                    s = r;
                } else {
                    l = i;
                    if e[i] == 0.0 {
                        h[i][nu] = if w != 0.0 { -r / w } else { -r / (eps * norm) };
                    } else {
                        x = h[i][i + 1];
                        y = h[i + 1][i];
                        q = (d[i] - p) * (d[i] - p) + e[i] * e[i];
                        t = (x * s - z * r) / q;
                        h[i][nu] = t;
                        h[i + 1][nu] = if x.abs() > z.abs() {
                            (-r - w * t) / x
                        } else {
                            (-s - y * t) / z
                        };
                    }
                    t = h[i][nu].abs();
                    if (eps * t) * t > 1.0 {
                        for row in h.iter_mut().take(nu + 1).skip(i) {
                            row[nu] /= t;
                        }
                    }
                }
            }
        } else if q < 0.0 {
            let mut l = nu - 1;
            if h[nu][nu - 1].abs() > h[nu - 1][nu].abs() {
                h[nu - 1][nu - 1] = q / h[nu][nu - 1];
                h[nu - 1][nu] = -(h[nu][nu] - p) / h[nu][nu - 1];
            } else {
                let (cr, ci) = cdiv(0.0, -h[nu - 1][nu], h[nu - 1][nu - 1] - p, q);
                h[nu - 1][nu - 1] = cr;
                h[nu - 1][nu] = ci;
            }
            h[nu][nu - 1] = 0.0;
            h[nu][nu] = 1.0;
            for i in (0..nu.saturating_sub(1)).rev() {
                let mut ra = 0.0;
                let mut sa = 0.0;
                for j in l..=nu {
                    ra += h[i][j] * h[j][nu - 1];
                    sa += h[i][j] * h[j][nu];
                }
                w = h[i][i] - p;
                if e[i] < 0.0 {
                    z = w;
                    r = ra;
                    s = sa;
                } else {
                    l = i;
                    if e[i] == 0.0 {
                        let (cr, ci) = cdiv(-ra, -sa, w, q);
                        h[i][nu - 1] = cr;
                        h[i][nu] = ci;
                    } else {
                        x = h[i][i + 1];
                        y = h[i + 1][i];
                        let mut vr = (d[i] - p) * (d[i] - p) + e[i] * e[i] - q * q;
                        let vi = (d[i] - p) * 2.0 * q;
                        if vr == 0.0 && vi == 0.0 {
                            vr = eps * norm * (w.abs() + q.abs() + x.abs() + y.abs() + z.abs());
                        }
                        let (cr, ci) =
                            cdiv(x * r - z * ra + q * sa, x * s - z * sa - q * ra, vr, vi);
                        h[i][nu - 1] = cr;
                        h[i][nu] = ci;
                        if x.abs() > z.abs() + q.abs() {
                            h[i + 1][nu - 1] = (-ra - w * h[i][nu - 1] + q * h[i][nu]) / x;
                            h[i + 1][nu] = (-sa - w * h[i][nu] - q * h[i][nu - 1]) / x;
                        } else {
                            let (cr, ci) = cdiv(-r - y * h[i][nu - 1], -s - y * h[i][nu], z, q);
                            h[i + 1][nu - 1] = cr;
                            h[i + 1][nu] = ci;
                        }
                    }
                    t = h[i][nu - 1].abs().max(h[i][nu].abs());
                    if (eps * t) * t > 1.0 {
                        for row in h.iter_mut().take(nu + 1).skip(i) {
                            row[nu - 1] /= t;
                            row[nu] /= t;
                        }
                    }
                }
            }
        }
    }

    for j in (low..nn).rev() {
        for i in low..=high {
            z = 0.0;
            for k in low..=j.min(high) {
                z += v[i][k] * h[k][j];
            }
            v[i][j] = z;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sorted(mut v: Vec<Complex64>) -> Vec<Complex64> {
        v.sort_by(|a, b| {
            a.re.partial_cmp(&b.re)
                .unwrap()
                .then(a.im.partial_cmp(&b.im).unwrap())
        });
        v
    }

    fn eigen_residual(k: &RealMatrix, dec: &EigenDecomposition) -> f64 {
        let kv = k.to_complex().matmul(&dec.eigenvectors);
        let vl = dec.eigenvectors.scale_columns(&dec.eigenvalues);
        let mut err = 0.0f64;
        for i in 0..k.rows() {
            for j in 0..k.rows() {
                err = err.max((kv[(i, j)] - vl[(i, j)]).norm());
            }
        }
        err
    }

    #[test]
    fn identity_has_unit_eigenvalues() {
        let dec = eig(&RealMatrix::identity(3)).unwrap();
        for l in &dec.eigenvalues {
            assert!((l - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
        assert!(dec.reconstruction_residual < 1e-15);
    }

    #[test]
    fn rotation_eigenvalues_are_unit_phases() {
        let theta = PI / 4.0;
        let k = RealMatrix::rotation(theta);
        let dec = eig(&k).unwrap();
        // Roots of λ² − 2cosθ·λ + 1.
        let c = theta.cos();
        let disc = Complex64::new(c * c - 1.0, 0.0).sqrt();
        let expected = sorted(vec![c + disc, c - disc]);
        let got = sorted(dec.eigenvalues.clone());
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).norm() < 1e-14, "{a} vs {b}");
        }
        assert!((got[1] - Complex64::from_polar(1.0, theta)).norm() < 1e-14);
        assert!(eigen_residual(&k, &dec) < 1e-14);
    }

    #[test]
    fn diagonal_matrix_gives_standard_basis() {
        let k = RealMatrix::from_diag(&[2.0, 3.0]);
        let dec = eig(&k).unwrap();
        for (j, l) in dec.eigenvalues.iter().enumerate() {
            let col = dec.eigenvectors.column(j);
            let idx = if (l.re - 2.0).abs() < 1e-14 { 0 } else { 1 };
            assert!((l.re - [2.0, 3.0][idx]).abs() < 1e-14 && l.im == 0.0);
            assert!((col[idx].norm() - 1.0).abs() < 1e-14);
            assert!(col[1 - idx].norm() < 1e-14);
        }
    }

    #[test]
    fn conjugate_pairs_for_random_matrices() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for n in [1usize, 2, 3, 5, 8, 16] {
            let data: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let k = RealMatrix::from_vec(n, n, data).unwrap();
            let dec = eig(&k).unwrap();
            assert!(dec.reconstruction_residual < 1e-10);
            assert!(eigen_residual(&k, &dec) < 1e-10);
            for l in &dec.eigenvalues {
                if l.im != 0.0 {
                    let partner = dec
                        .eigenvalues
                        .iter()
                        .map(|m| (m - l.conj()).norm())
                        .fold(f64::INFINITY, f64::min);
                    assert!(partner < 1e-10);
                }
            }
        }
    }

    #[test]
    fn defective_matrix_is_rejected() {
        // Jordan block: eigenvectors are parallel, V is singular.
        let k = RealMatrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(eig(&k), Err(LinalgError::IllConditioned { .. })));
    }

    #[test]
    fn non_square_is_rejected() {
        let k = RealMatrix::zeros(2, 3);
        assert!(matches!(eig(&k), Err(LinalgError::NotSquare(2, 3))));
    }
}
