//! Actions of `exp(dt A)` and `φ1(dt A) = (exp(dt A) - I) / (dt A)` on vectors.
//!
//! Diagonal operators are handled entrywise. Dense operators go through a
//! scaling-and-squaring Padé exponential (Higham 2005, degrees 3 to 13); the
//! `φ1` action uses the exponential of the bordered matrix `[[dt A, v], [0, 0]]`,
//! whose last column holds `φ1(dt A) v`.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorHandle {
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

impl OperatorHandle {
    pub fn diagonal(entries: Vec<f64>) -> Result<Self> {
        if entries.iter().any(|a| !a.is_finite()) {
            return invalid("diagonal operator has non-finite entries");
        }
        Ok(OperatorHandle::Diagonal(entries))
    }

    pub fn dense(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return invalid(format!("dense operator is {}x{}", m.nrows(), m.ncols()));
        }
        Ok(OperatorHandle::Dense(m))
    }

    pub fn dim(&self) -> usize {
        match self {
            OperatorHandle::Diagonal(d) => d.len(),
            OperatorHandle::Dense(m) => m.nrows(),
        }
    }

    /// `A v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(v)?;
        Ok(match self {
            OperatorHandle::Diagonal(d) => d.iter().zip(v).map(|(a, x)| a * x).collect(),
            OperatorHandle::Dense(m) => dense_mul(m, v),
        })
    }

    /// Dense copy of the operator.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            OperatorHandle::Diagonal(d) => DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d)),
            OperatorHandle::Dense(m) => m.clone(),
        }
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return invalid(format!(
                "vector of length {} for operator of dimension {}",
                v.len(),
                self.dim()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiAccuracy {
    rel_tol: f64,
    small_arg_threshold: f64,
}

impl Default for PhiAccuracy {
    fn default() -> Self {
        PhiAccuracy {
            rel_tol: 1e-12,
            small_arg_threshold: 1e-5,
        }
    }
}

impl PhiAccuracy {
    pub fn new(rel_tol: f64, small_arg_threshold: f64) -> Result<Self> {
        if !(rel_tol > 0.0 && rel_tol < 1.0) {
            return invalid(format!("rel_tol must lie in (0, 1), got {rel_tol}"));
        }
        if !(small_arg_threshold > 0.0 && small_arg_threshold.is_finite()) {
            return invalid("small_arg_threshold must be positive");
        }
        Ok(PhiAccuracy {
            rel_tol,
            small_arg_threshold,
        })
    }

    pub fn rel_tol(&self) -> f64 {
        self.rel_tol
    }

    pub fn small_arg_threshold(&self) -> f64 {
        self.small_arg_threshold
    }
}

/// `φ1(z) = (e^z - 1) / z`, with `φ1(0) = 1`.
pub fn phi1_scalar(z: f64, acc: &PhiAccuracy) -> f64 {
    if z.abs() < acc.small_arg_threshold {
        phi1_series(z, acc.rel_tol)
    } else {
        z.exp_m1() / z
    }
}

/// Taylor series `Σ z^k / (k+1)!`, truncated once terms drop well below `rel_tol`.
fn phi1_series(z: f64, rel_tol: f64) -> f64 {
    let stop = rel_tol * 1e-4;
    let mut sum = 1.0;
    let mut term = 1.0;
    for k in 1..30 {
        term *= z / (k + 1) as f64;
        sum += term;
        if term.abs() <= stop * sum.abs() {
            break;
        }
    }
    sum
}

/// `exp(dt A) v`.
pub fn expm_action(a: &OperatorHandle, dt: f64, v: &[f64]) -> Result<Vec<f64>> {
    check_step(dt)?;
    a.check_dim(v)?;
    Ok(match a {
        OperatorHandle::Diagonal(d) => d.iter().zip(v).map(|(a, x)| (dt * a).exp() * x).collect(),
        OperatorHandle::Dense(m) => dense_mul(&expm(&(m * dt))?, v),
    })
}

/// `φ1(dt A) v` with default accuracy.
pub fn phi1_action(a: &OperatorHandle, dt: f64, v: &[f64]) -> Result<Vec<f64>> {
    phi1_action_with(a, dt, v, &PhiAccuracy::default())
}

pub fn phi1_action_with(
    a: &OperatorHandle,
    dt: f64,
    v: &[f64],
    acc: &PhiAccuracy,
) -> Result<Vec<f64>> {
    check_step(dt)?;
    a.check_dim(v)?;
    match a {
        OperatorHandle::Diagonal(d) => Ok(d
            .iter()
            .zip(v)
            .map(|(a, x)| phi1_scalar(dt * a, acc) * x)
            .collect()),
        OperatorHandle::Dense(m) => {
            let n = m.nrows();
            let scale = v.iter().map(|x| x.abs()).fold(0.0, f64::max);
            if scale == 0.0 {
                return Ok(vec![0.0; n]);
            }
            // bordered matrix [[dt A, v/scale], [0, 0]]
            let mut big = DMatrix::zeros(n + 1, n + 1);
            big.view_mut((0, 0), (n, n)).copy_from(&(m * dt));
            for (i, x) in v.iter().enumerate() {
                big[(i, n)] = x / scale;
            }
            let e = expm(&big)?;
            Ok((0..n).map(|i| e[(i, n)] * scale).collect())
        }
    }
}

fn check_step(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return invalid(format!("time step must be positive, got {dt}"));
    }
    Ok(())
}

fn dense_mul(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let x = nalgebra::DVector::from_column_slice(v);
    (m * x).as_slice().to_vec()
}

const THETA: [(usize, f64); 4] = [
    (3, 1.495_585_217_958_292e-2),
    (5, 2.539_398_330_063_23e-1),
    (7, 9.504_178_996_162_932e-1),
    (9, 2.097_847_961_257_068),
];
const THETA_13: f64 = 5.371_920_351_148_152;

const PADE_3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE_5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE_7: [f64; 8] = [
    17_297_280.0,
    8_648_640.0,
    1_995_840.0,
    277_200.0,
    25_200.0,
    1_512.0,
    56.0,
    1.0,
];
const PADE_9: [f64; 10] = [
    17_643_225_600.0,
    8_821_612_800.0,
    2_075_673_600.0,
    302_702_400.0,
    30_270_240.0,
    2_162_160.0,
    110_880.0,
    3_960.0,
    90.0,
    1.0,
];
const PADE_13: [f64; 14] = [
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

fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a Padé approximant.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return invalid("matrix exponential of a non-square matrix");
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("matrix exponential of a non-finite matrix".into()));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let norm = norm1(a);
    let a2 = a * a;

    for (m, theta) in THETA {
        if norm <= theta {
            let b: &[f64] = match m {
                3 => &PADE_3,
                5 => &PADE_5,
                7 => &PADE_7,
                _ => &PADE_9,
            };
            // odd part U = A Σ b_{2k+1} A^{2k}, even part V = Σ b_{2k} A^{2k}
            let mut pow = eye.clone();
            let mut u = &eye * b[1];
            let mut v = &eye * b[0];
            for k in 1..=m / 2 {
                pow = &pow * &a2;
                u += &pow * b[2 * k + 1];
                v += &pow * b[2 * k];
            }
            let u = a * u;
            return pade_solve(u, v);
        }
    }

    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scale = 0.5f64.powi(s);
    let a = a * scale;
    let a2 = a2 * (scale * scale);
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let b = &PADE_13;
    let u_inner = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let u = &a * (&a6 * u_inner + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &eye * b[1]);
    let v_inner = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = &a6 * v_inner + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &eye * b[0];
    let mut r = pade_solve(u, v)?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

fn pade_solve(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = &v + &u;
    let q = v - u;
    q.lu()
        .solve(&p)
        .ok_or_else(|| Error::Numerical("singular Padé denominator".into()))
}
