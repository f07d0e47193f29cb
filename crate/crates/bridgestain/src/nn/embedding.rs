//! Sinusoidal timestep codes.

/// Fixed sinusoidal code for a (possibly fractional) timestep.
///
/// The first half holds sines, the second half cosines, over `dim/2`
/// geometrically spaced frequencies from 1 down to 1e-4. `dim` must be even
/// and at least 4.
pub fn timestep_code(t: f64, dim: usize) -> Vec<f64> {
    assert!(dim >= 4 && dim % 2 == 0, "embedding dim must be even and >= 4");
    let half = dim / 2;
    let mut code = vec![0.0; dim];
    for i in 0..half {
        let freq = (1e-4_f64).powf(i as f64 / (half - 1) as f64);
        code[i] = (t * freq).sin();
        code[half + i] = (t * freq).cos();
    }
    code
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn code_shape_and_landmarks() {
        let c = timestep_code(0.0, 8);
        assert_eq!(c.len(), 8);
        assert!(c[..4].iter().all(|&v| v == 0.0));
        assert!(c[4..].iter().all(|&v| v == 1.0));

        // Highest frequency is 1: first sine is sin(t).
        let c = timestep_code(2.0, 64);
        assert!((c[0] - 2.0_f64.sin()).abs() < 1e-15);
        // Lowest frequency is 1e-4.
        assert!((c[31] - (2.0 * 1e-4_f64).sin()).abs() < 1e-15);
    }

    #[test]
    fn nearby_steps_get_distinct_codes() {
        let a = timestep_code(500.0, 64);
        let b = timestep_code(501.0, 64);
        let dist: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        assert!(dist > 1e-3);
    }

    #[test]
    fn codes_are_pairwise_distinct_over_a_thousand_steps() {
        let dim = 64;
        let codes: Vec<Vec<f64>> = (1..=1000)
            .map(|t| {
                let c = timestep_code(t as f64, dim);
                let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
                c.into_iter().map(|v| v / norm).collect()
            })
            .collect();
        let mut max_cos = f64::NEG_INFINITY;
        for i in 0..codes.len() {
            for j in i + 1..codes.len() {
                let cos: f64 = codes[i].iter().zip(&codes[j]).map(|(a, b)| a * b).sum();
                max_cos = max_cos.max(cos);
            }
        }
        assert!(max_cos < 1.0 - 1e-6, "closest pair has cosine similarity {max_cos}");
    }
}
