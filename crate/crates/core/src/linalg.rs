//! Small dense helpers on row-major slices.

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Hilbert–Schmidt norm; identical to [`norm`] on the flattened entries.
#[inline]
pub fn frobenius(a: &[f64]) -> f64 {
    norm(a)
}

/// `out += scale · A v` for a `rows × cols` matrix `A`.
#[inline]
pub fn gemv_acc(a: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
    let cols = v.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &a[i * cols..(i + 1) * cols];
        let mut acc = 0.0;
        for (r, x) in row.iter().zip(v) {
            acc += r * x;
        }
        *o += scale * acc;
    }
}

/// `out += scale · A B` for square `d × d` matrices.
#[inline]
pub fn gemm_acc(d: usize, a: &[f64], b: &[f64], scale: f64, out: &mut [f64]) {
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            if aik == 0.0 {
                continue;
            }
            let s = scale * aik;
            for j in 0..d {
                out[i * d + j] += s * b[k * d + j];
            }
        }
    }
}

/// Row-major identity.
pub fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

/// Pairwise (cascade) summation; the result depends only on the order of
/// `values`, never on how the caller scheduled their computation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// `ln Σ exp(v_i)`, returning `-∞` for an empty or all-`-∞` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    let shifted: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    max + pairwise_sum(&shifted).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_hand_product() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [0.5, -1.0, 2.0, 0.0];
        let mut out = [0.0; 4];
        gemm_acc(2, &a, &b, 1.0, &mut out);
        assert_eq!(out, [4.5, -1.0, 9.5, -3.0]);
    }

    #[test]
    fn log_sum_exp_handles_underflow() {
        let v = [-2000.0, -2000.0 + 2f64.ln()];
        assert!((log_sum_exp(&v) - (-2000.0 + 3f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
    }

    #[test]
    fn pairwise_sum_is_exact_on_integers() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
    }
}
