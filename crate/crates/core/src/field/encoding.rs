use crate::Real;

/// Width of `encode` output for a `dim`-vector.
pub const fn encoded_width(dim: usize, levels: usize) -> usize {
    dim * (1 + 2 * levels)
}

/// Frequency encoding: the raw value followed, for each `k < levels`, by
/// `sin(2^k π v)` for every component and then `cos(2^k π v)` for every
/// component.
pub fn encode<F: Real>(value: &[F], levels: usize) -> Vec<F> {
    let mut out = vec![F::zero(); encoded_width(value.len(), levels)];
    encode_into(value, levels, &mut out);
    out
}

pub fn encode_into<F: Real>(value: &[F], levels: usize, out: &mut [F]) {
    let dim = value.len();
    debug_assert_eq!(out.len(), encoded_width(dim, levels));
    out[..dim].copy_from_slice(value);
    let pi = F::lit(std::f64::consts::PI);
    let mut freq = pi;
    for k in 0..levels {
        let base = dim * (1 + 2 * k);
        for (j, &v) in value.iter().enumerate() {
            let (s, c) = (freq * v).sin_cos();
            out[base + j] = s;
            out[base + dim + j] = c;
        }
        freq = freq + freq;
    }
}

/// Chain rule through `encode`: given dL/d(features), accumulates dL/d(value).
pub fn encode_backward<F: Real>(value: &[F], levels: usize, feature_grad: &[F], out: &mut [F]) {
    let dim = value.len();
    debug_assert_eq!(feature_grad.len(), encoded_width(dim, levels));
    for j in 0..dim {
        out[j] += feature_grad[j];
    }
    let pi = F::lit(std::f64::consts::PI);
    let mut freq = pi;
    for k in 0..levels {
        let base = dim * (1 + 2 * k);
        for (j, &v) in value.iter().enumerate() {
            let (s, c) = (freq * v).sin_cos();
            out[j] += freq * (c * feature_grad[base + j] - s * feature_grad[base + dim + j]);
        }
        freq = freq + freq;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_levels_is_identity() {
        assert_eq!(encode(&[0.25f64, -3.0, 7.5], 0), vec![0.25, -3.0, 7.5]);
    }

    #[test]
    fn zero_input_two_levels() {
        assert_eq!(encode(&[0.0f64], 2), vec![0.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn half_input_one_level() {
        let e = encode(&[0.5f64], 1);
        assert_eq!(e[0], 0.5);
        assert!((e[1] - 1.0).abs() < 1e-15);
        assert!(e[2].abs() < 1e-15);
    }

    #[test]
    fn width_formula() {
        assert_eq!(encode(&[0.1f32, 0.2, 0.3], 10).len(), 63);
        assert_eq!(encoded_width(1, 6), 13);
    }

    #[test]
    fn backward_matches_central_difference() {
        let v = [0.3f64, -0.7, 0.11];
        let w: Vec<f64> = (0..encoded_width(3, 4)).map(|i| (i as f64 * 0.37).sin()).collect();
        let f = |v: &[f64]| -> f64 { encode(v, 4).iter().zip(&w).map(|(a, b)| a * b).sum() };
        let mut g = [0.0; 3];
        encode_backward(&v, 4, &w, &mut g);
        for j in 0..3 {
            let mut up = v;
            let mut dn = v;
            up[j] += 1e-6;
            dn[j] -= 1e-6;
            let num = (f(&up) - f(&dn)) / 2e-6;
            assert!((num - g[j]).abs() < 1e-6 * num.abs().max(1.0), "{num} {}", g[j]);
        }
    }
}
