//! Fourier positional encoding for camera poses.

/// Per input coordinate x, emit [x, sin(2^0 pi x), cos(2^0 pi x), ...,
/// sin(2^(L-1) pi x), cos(2^(L-1) pi x)]. Output length = |x| * (2L + 1).
pub fn fourier_encode(x: &[f64], levels: usize) -> Vec<f64> {
    assert!(levels >= 1, "fourier_encode needs at least one frequency");
    let mut out = Vec::with_capacity(x.len() * (2 * levels + 1));
    for &v in x {
        out.push(v);
        for l in 0..levels {
            let f = (1u64 << l) as f64 * std::f64::consts::PI * v;
            out.push(f.sin());
            out.push(f.cos());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input() {
        let e = fourier_encode(&[0.0], 5);
        assert_eq!(e.len(), 11);
        assert_eq!(e[0], 0.0);
        for l in 0..5 {
            assert_eq!(e[1 + 2 * l], 0.0); // sin
            assert_eq!(e[2 + 2 * l], 1.0); // cos
        }
    }

    #[test]
    fn unit_input_l1() {
        let e = fourier_encode(&[1.0], 1);
        assert_eq!(e.len(), 3);
        assert!((e[0] - 1.0).abs() < 1e-15);
        assert!(e[1].abs() < 1e-12); // sin(pi)
        assert!((e[2] + 1.0).abs() < 1e-12); // cos(pi)
    }

    #[test]
    fn period_two_in_base_frequency() {
        let a = fourier_encode(&[0.37], 4);
        let b = fourier_encode(&[2.37], 4);
        // every sin/cos term has period dividing 2
        for i in 1..a.len() {
            assert!((a[i] - b[i]).abs() < 1e-9, "term {i}");
        }
    }
}
