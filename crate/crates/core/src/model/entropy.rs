/// Binary entropy `h(p)` in bits, with `h(0) = h(1) = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

/// Shannon entropy in bits of a list of probabilities; zero masses contribute nothing.
pub fn shannon_entropy(probs: impl IntoIterator<Item = f64>) -> f64 {
    probs
        .into_iter()
        .filter(|&q| q > 0.0)
        .map(|q| -q * q.log2())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binary_entropy_values() {
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);
        assert!((binary_entropy(0.5) - 1.0).abs() < 1e-15);
        assert!((binary_entropy(0.2) - 0.721928).abs() < 1e-6);
    }

    #[test]
    fn shannon_entropy_values() {
        assert!((shannon_entropy([0.125; 8]) - 3.0).abs() < 1e-15);
        assert_eq!(shannon_entropy([1.0]), 0.0);
        let mut row = vec![0.2];
        row.extend([0.1; 8]);
        assert!((shannon_entropy(row) - 3.121928).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn binary_entropy_is_midpoint_concave(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let mid = binary_entropy((a + b) / 2.0);
            prop_assert!(mid + 1e-12 >= (binary_entropy(a) + binary_entropy(b)) / 2.0);
        }

        #[test]
        fn binary_entropy_is_symmetric(p in 0.0f64..=1.0) {
            prop_assert!((binary_entropy(p) - binary_entropy(1.0 - p)).abs() < 1e-12);
        }
    }
}
