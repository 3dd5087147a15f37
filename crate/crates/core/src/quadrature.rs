//! Adaptive Gauss–Kronrod (7/15) quadrature on finite intervals.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];
// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7]
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        kronrod += WGK[i] * s;
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

struct Segment {
    lo: f64,
    hi: f64,
    val: f64,
    err: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.err.total_cmp(&other.err).is_eq()
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// `∫_a^b f` to relative tolerance `rel_tol`, bisecting the segment with the
/// largest error estimate until the summed estimate meets the tolerance.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let segment = |lo: f64, hi: f64| -> Result<Segment> {
        let (val, err) = gk15(&f, lo, hi);
        if !val.is_finite() {
            return Err(Error::Numerical("non-finite integrand".into()));
        }
        Ok(Segment { lo, hi, val, err })
    };
    let mut heap = std::collections::BinaryHeap::new();
    heap.push(segment(a, b)?);
    for _ in 0..MAX_BISECTIONS {
        let (total, err) = heap
            .iter()
            .fold((0.0, 0.0), |(t, e), s| (t + s.val, e + s.err));
        if err <= rel_tol * total.abs() || err <= f64::MIN_POSITIVE {
            return Ok(total);
        }
        let worst = heap.pop().unwrap();
        if (worst.hi - worst.lo).abs() <= 4.0 * f64::EPSILON * worst.lo.abs().max(worst.hi.abs()) {
            return Err(Error::Numerical(format!(
                "quadrature on [{a}, {b}] stalled at a {}-wide segment",
                worst.hi - worst.lo
            )));
        }
        let mid = 0.5 * (worst.lo + worst.hi);
        heap.push(segment(worst.lo, mid)?);
        heap.push(segment(mid, worst.hi)?);
    }
    Err(Error::Numerical(format!(
        "quadrature on [{a}, {b}] did not converge"
    )))
}

const MAX_BISECTIONS: usize = 5_000;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_and_exponentials() {
        let v = integrate(|x| x * x, 0.0, 3.0, 1e-12).unwrap();
        assert!((v - 9.0).abs() < 1e-12);
        let v = integrate(|x| (-2.0 * x).exp(), 0.0, 1.0, 1e-12).unwrap();
        let want = (1.0 - (-2.0f64).exp()) / 2.0;
        assert!((v - want).abs() < 1e-13 * want);
    }

    #[test]
    fn sharp_boundary_layer() {
        // integrand concentrated in a 1e-4 wide layer at the right end
        let k = 1e4;
        let v = integrate(|x| (-k * (1.0 - x)).exp(), 0.0, 1.0, 1e-10).unwrap();
        let want = -(-k).exp_m1() / k;
        assert!((v - want).abs() < 1e-10 * want, "{v} vs {want}");
    }

    #[test]
    fn empty_interval() {
        assert_eq!(integrate(|x| x, 2.0, 2.0, 1e-10).unwrap(), 0.0);
    }
}
