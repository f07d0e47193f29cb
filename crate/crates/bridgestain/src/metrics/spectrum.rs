//! Radially averaged power spectrum of a square image.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::imageops::{KB, KG, KR};
use crate::tensor::{ImageTensor, Semantics};

#[derive(Debug, Clone)]
pub struct SpectrumProfile {
    /// Mean |F|² over the annulus feeding each bin; 0 for empty bins.
    pub power: Vec<f64>,
    /// Number of frequency samples that landed in each bin.
    pub count: Vec<usize>,
}

/// Bins the 2-D DFT power of `img` by signed-frequency radius.
///
/// Three-channel rgb input is reduced to luma first; single-channel input
/// is used as-is. Bin 0 holds the DC term; radii past the last bin clamp
/// into it.
pub fn radial_power_spectrum(img: &ImageTensor, bins: usize) -> Result<SpectrumProfile> {
    if bins == 0 {
        return Err(Error::InvalidConfig("spectrum needs at least one bin".into()));
    }
    if img.height() != img.width() {
        return Err(Error::InvalidInput(format!(
            "spectrum expects a square image, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    let n = img.height();
    let gray: Vec<f64> = match img.channels() {
        1 => img.data().to_vec(),
        3 if img.semantics() == Semantics::Rgb => img
            .data()
            .chunks_exact(3)
            .map(|p| KR * p[0] + KG * p[1] + KB * p[2])
            .collect(),
        _ => {
            return Err(Error::InvalidInput(format!(
                "spectrum expects 1-channel or rgb input, got {:?} with {} channels",
                img.semantics(),
                img.channels()
            )))
        }
    };

    let mut grid: Vec<Complex<f64>> =
        gray.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    // Row pass in place, then column pass through a scratch row.
    for row in grid.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for u in 0..n {
        for v in 0..n {
            col[v] = grid[v * n + u];
        }
        fft.process(&mut col);
        for v in 0..n {
            grid[v * n + u] = col[v];
        }
    }

    let signed = |i: usize| -> f64 {
        if i <= n / 2 {
            i as f64
        } else {
            i as f64 - n as f64
        }
    };
    let mut power = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for v in 0..n {
        for u in 0..n {
            let r = (signed(u).powi(2) + signed(v).powi(2)).sqrt();
            let bin = (r.round() as usize).min(bins - 1);
            power[bin] += grid[v * n + u].norm_sqr();
            count[bin] += 1;
        }
    }
    for b in 0..bins {
        if count[b] > 0 {
            power[b] /= count[b] as f64;
        }
    }
    Ok(SpectrumProfile { power, count })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn gray(n: usize, data: Vec<f64>) -> ImageTensor {
        ImageTensor::new(n, n, 1, Semantics::AfStack, (0.0, 1.0), data).unwrap()
    }

    #[test]
    fn constant_image_is_pure_dc() {
        let img = gray(16, vec![0.37; 256]);
        let profile = radial_power_spectrum(&img, 12).unwrap();
        assert!(profile.power[0] > 0.0);
        for (b, &p) in profile.power.iter().enumerate().skip(1) {
            assert!(p < 1e-12, "bin {b} holds {p}");
        }
        assert_eq!(profile.count.iter().sum::<usize>(), 256);
    }

    #[test]
    fn pure_sinusoid_lands_in_its_frequency_bin() {
        let n = 32;
        let k = 5.0;
        let data: Vec<f64> = (0..n * n)
            .map(|i| {
                let j = (i % n) as f64;
                (std::f64::consts::TAU * k * j / n as f64).cos()
            })
            .collect();
        let profile = radial_power_spectrum(&gray(n, data), n / 2 + 1).unwrap();
        let top = profile
            .power
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(top, 5);
        let rest: f64 = profile
            .power
            .iter()
            .enumerate()
            .filter(|&(b, _)| b != 5)
            .map(|(_, &p)| p)
            .sum();
        assert!(rest < 1e-9 * profile.power[5]);
    }

    #[test]
    fn binned_power_satisfies_parseval() {
        let n = 24;
        let key = rng::key(55, &[7]);
        let data: Vec<f64> = (0..n * n).map(|i| rng::unit(key, i as u64)).collect();
        let img = gray(n, data.clone());
        let profile = radial_power_spectrum(&img, 10).unwrap();
        let binned: f64 = profile
            .power
            .iter()
            .zip(&profile.count)
            .map(|(&p, &c)| p * c as f64)
            .sum();
        let direct: f64 = data.iter().map(|v| v * v).sum::<f64>() * (n * n) as f64;
        assert!(
            (binned - direct).abs() <= 1e-8 * direct.abs(),
            "{binned} vs {direct}"
        );
    }

    #[test]
    fn white_noise_spectrum_is_flat() {
        let n = 256;
        let bins = n / 2 + 1;
        let realizations = 64;
        let mut mean = vec![0.0; bins];
        let mut counts = vec![0usize; bins];
        for real in 0..realizations {
            let key = rng::key(4242, &[real as u64]);
            let data: Vec<f64> =
                (0..n * n).map(|i| rng::normal(key, i as u64)).collect();
            let profile = radial_power_spectrum(&gray(n, data), bins).unwrap();
            for b in 0..bins {
                mean[b] += profile.power[b] / realizations as f64;
            }
            counts = profile.count;
        }
        let level: f64 =
            mean.iter().skip(1).sum::<f64>() / (bins - 1) as f64;
        for b in 1..bins {
            assert!(counts[b] > 0, "bin {b} is empty");
            let rel = (mean[b] - level).abs() / level;
            assert!(rel < 0.10, "bin {b} deviates {rel:.3} from flat");
        }
    }

    #[test]
    fn rgb_input_reduces_to_luma() {
        // A gray rgb image and its luma plane must produce one spectrum.
        let n = 8;
        let key = rng::key(9, &[3]);
        let lum: Vec<f64> = (0..n * n).map(|i| rng::unit(key, i as u64)).collect();
        let rgb_data: Vec<f64> = lum.iter().flat_map(|&v| [v, v, v]).collect();
        let rgb =
            ImageTensor::new(n, n, 3, Semantics::Rgb, (0.0, 1.0), rgb_data).unwrap();
        let a = radial_power_spectrum(&rgb, 6).unwrap();
        let b = radial_power_spectrum(&gray(n, lum), 6).unwrap();
        for (x, y) in a.power.iter().zip(&b.power) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn non_square_input_is_rejected() {
        let img =
            ImageTensor::new(4, 6, 1, Semantics::AfStack, (0.0, 1.0), vec![0.1; 24])
                .unwrap();
        assert!(radial_power_spectrum(&img, 4).is_err());
        assert!(radial_power_spectrum(&gray(4, vec![0.1; 16]), 0).is_err());
    }
}
