//! Matrix exponential by scaling and squaring with diagonal Padé approximants
//! (degrees 3, 5, 7, 9, 13 selected from the 1-norm as in Higham, 2005).

use super::{LinalgError, RealMatrix};

const THETA: [(usize, f64); 4] = [
    (3, 1.495_585_217_958_292e-2),
    (5, 2.539_398_330_063_23e-1),
    (7, 9.504_178_996_162_932e-1),
    (9, 2.097_847_961_257_068),
];
const THETA_13: f64 = 5.371_920_351_148_152;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [
    17_297_280.0,
    8_648_640.0,
    1_995_840.0,
    277_200.0,
    25_200.0,
    1512.0,
    56.0,
    1.0,
];
const B9: [f64; 10] = [
    17_643_225_600.0,
    8_821_612_800.0,
    2_075_673_600.0,
    302_702_400.0,
    30_270_240.0,
    2_162_160.0,
    110_880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

/// Computes `exp(t·D)`.
pub fn matrix_exp(d: &RealMatrix, t: f64) -> Result<RealMatrix, LinalgError> {
    if !d.is_square() {
        return Err(LinalgError::NotSquare(d.rows(), d.cols()));
    }
    if !t.is_finite() || !d.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let n = d.rows();
    if t == 0.0 || d.as_slice().iter().all(|&v| v == 0.0) {
        return Ok(RealMatrix::identity(n));
    }
    let a = d.scale(t);
    let norm = a.norm1();
    if !norm.is_finite() {
        return Err(LinalgError::Overflow);
    }

    let out = if let Some(&(m, _)) = THETA.iter().find(|(_, th)| norm <= *th) {
        let (u, v) = match m {
            3 => pade_low(&a, &B3),
            5 => pade_low(&a, &B5),
            7 => pade_low(&a, &B7),
            _ => pade_low(&a, &B9),
        };
        pade_solve(&u, &v)?
    } else {
        let s = (norm / THETA_13).log2().ceil().max(0.0) as i32;
        let scaled = a.scale(0.5f64.powi(s));
        let (u, v) = pade13(&scaled);
        let mut r = pade_solve(&u, &v)?;
        for _ in 0..s {
            r = r.matmul(&r);
            if !r.is_finite() {
                return Err(LinalgError::Overflow);
            }
        }
        r
    };
    if !out.is_finite() {
        return Err(LinalgError::Overflow);
    }
    Ok(out)
}

/// Odd/even parts `U`, `V` of a degree-m approximant from coefficients `b`.
fn pade_low(a: &RealMatrix, b: &[f64]) -> (RealMatrix, RealMatrix) {
    let n = a.rows();
    let a2 = a.matmul(a);
    let mut u = RealMatrix::identity(n).scale(b[1]);
    let mut v = RealMatrix::identity(n).scale(b[0]);
    let mut pow = RealMatrix::identity(n);
    for k in 1..b.len() / 2 {
        pow = pow.matmul(&a2);
        u = u.add(&pow.scale(b[2 * k + 1]));
        v = v.add(&pow.scale(b[2 * k]));
    }
    (a.matmul(&u), v)
}

fn pade13(a: &RealMatrix) -> (RealMatrix, RealMatrix) {
    let n = a.rows();
    let b = &B13;
    let id = RealMatrix::identity(n);
    let a2 = a.matmul(a);
    let a4 = a2.matmul(&a2);
    let a6 = a4.matmul(&a2);
    let inner_u = a6.scale(b[13]).add(&a4.scale(b[11])).add(&a2.scale(b[9]));
    let u = a6
        .matmul(&inner_u)
        .add(&a6.scale(b[7]))
        .add(&a4.scale(b[5]))
        .add(&a2.scale(b[3]))
        .add(&id.scale(b[1]));
    let u = a.matmul(&u);
    let inner_v = a6.scale(b[12]).add(&a4.scale(b[10])).add(&a2.scale(b[8]));
    let v = a6
        .matmul(&inner_v)
        .add(&a6.scale(b[6]))
        .add(&a4.scale(b[4]))
        .add(&a2.scale(b[2]))
        .add(&id.scale(b[0]));
    (u, v)
}

fn pade_solve(u: &RealMatrix, v: &RealMatrix) -> Result<RealMatrix, LinalgError> {
    let p = v.add(u);
    let q = v.sub(u);
    q.solve(&p).map_err(|_| LinalgError::Overflow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn rel(a: &RealMatrix, b: &RealMatrix) -> f64 {
        a.sub(b).frobenius_norm() / b.frobenius_norm()
    }

    #[test]
    fn zero_scale_is_exact_identity() {
        let d = RealMatrix::from_rows(&[vec![1.0, 2.0], vec![-3.0, 4.0]]).unwrap();
        assert_eq!(matrix_exp(&d, 0.0).unwrap(), RealMatrix::identity(2));
    }

    #[test]
    fn skew_generator_gives_rotation() {
        let theta = PI / 3.0;
        let d = RealMatrix::from_rows(&[vec![0.0, -theta], vec![theta, 0.0]]).unwrap();
        let r = matrix_exp(&d, 1.0).unwrap();
        assert!(rel(&r, &RealMatrix::rotation(theta)) < 1e-15);
    }

    #[test]
    fn every_pade_degree_matches_taylor() {
        // Norms chosen to land in each degree band plus the scaled branch.
        let base = RealMatrix::from_rows(&[
            vec![0.3, -0.7, 0.1],
            vec![0.2, 0.1, -0.4],
            vec![-0.5, 0.6, 0.2],
        ])
        .unwrap();
        for t in [0.01, 0.2, 0.8, 2.0, 6.0, 20.0] {
            let got = matrix_exp(&base, t).unwrap();
            let want = taylor_exp(&base.scale(t));
            assert!(rel(&got, &want) < 1e-13, "t = {t}: {}", rel(&got, &want));
        }
    }

    fn taylor_exp(a: &RealMatrix) -> RealMatrix {
        // Squaring keeps the series argument below 1/2.
        let s = (a.norm1() * 2.0).log2().ceil().max(0.0) as i32;
        let small = a.scale(0.5f64.powi(s));
        let mut term = RealMatrix::identity(a.rows());
        let mut sum = term.clone();
        for k in 1..30 {
            term = term.matmul(&small).scale(1.0 / k as f64);
            sum = sum.add(&term);
        }
        for _ in 0..s {
            sum = sum.matmul(&sum);
        }
        sum
    }

    #[test]
    fn huge_generator_overflows() {
        let d = RealMatrix::from_diag(&[800.0, 1.0]);
        assert!(matches!(matrix_exp(&d, 1.0), Err(LinalgError::Overflow)));
    }
}
