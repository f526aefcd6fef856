use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::energy::Potential;
use crate::error::{Error, Result};

/// Fewest samples accepted by [`kl_divergence`].
pub const MIN_KL_SAMPLES: usize = 1000;
/// Smallest fraction of the target mass the histogram box must hold.
pub const MIN_BOX_MASS: f64 = 0.999;

/// Axis-aligned histogram support with a bin count per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct HistogramBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub bins: Vec<usize>,
}

impl HistogramBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, bins: Vec<usize>) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != bins.len() || lo.is_empty() || lo.len() > 2 {
            return Err(Error::Config("histogram box needs matching 1-D or 2-D bounds and bins".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(h > l)) || bins.contains(&0) {
            return Err(Error::Config("histogram box bounds must be increasing with at least one bin".into()));
        }
        Ok(Self { lo, hi, bins })
    }

    /// Same bounds and bin count on every axis.
    pub fn cube(dim: usize, lo: f64, hi: f64, bins: usize) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim], vec![bins; dim])
    }

    pub fn dims(&self) -> usize {
        self.lo.len()
    }

    pub fn total_bins(&self) -> usize {
        self.bins.iter().product()
    }

    fn width(&self, a: usize) -> f64 {
        (self.hi[a] - self.lo[a]) / self.bins[a] as f64
    }

    /// Bin of a sample, clamping out-of-box values to the edge bins.
    pub fn bin_of(&self, x: &[f64]) -> usize {
        let mut idx = 0;
        for a in 0..self.dims() {
            let b = ((x[a] - self.lo[a]) / self.width(a)).floor();
            let b = b.clamp(0.0, (self.bins[a] - 1) as f64) as usize;
            idx = idx * self.bins[a] + b;
        }
        idx
    }

    fn expanded(&self) -> Self {
        let lo = self.lo.iter().zip(&self.hi).map(|(l, h)| l - (h - l)).collect();
        let hi = self.lo.iter().zip(&self.hi).map(|(l, h)| h + (h - l)).collect();
        let bins = self.bins.iter().map(|b| 3 * b).collect();
        Self { lo, hi, bins }
    }
}

/// Unnormalized bin masses of `exp(−U)` by midpoint sub-sampling, together
/// with the log-offset used to keep them finite.
fn bin_masses(potential: &dyn Potential, hbox: &HistogramBox, offset: Option<f64>) -> (Vec<f64>, f64) {
    let sub: usize = if hbox.dims() == 1 { 20 } else { 4 };
    let mut points: Vec<(usize, Vec<f64>)> = Vec::new();
    for bin in 0..hbox.total_bins() {
        let mut coords = vec![0; hbox.dims()];
        let mut rest = bin;
        for a in (0..hbox.dims()).rev() {
            coords[a] = rest % hbox.bins[a];
            rest /= hbox.bins[a];
        }
        let per_bin = sub.pow(hbox.dims() as u32);
        for s in 0..per_bin {
            let mut x = Vec::with_capacity(hbox.dims());
            let mut srest = s;
            for (a, &c) in coords.iter().enumerate() {
                let k = srest % sub;
                srest /= sub;
                x.push(hbox.lo[a] + hbox.width(a) * (c as f64 + (k as f64 + 0.5) / sub as f64));
            }
            points.push((bin, x));
        }
    }
    let energies: Vec<f64> = points.iter().map(|(_, x)| potential.value(x)).collect();
    let offset = offset.unwrap_or_else(|| energies.iter().cloned().filter(|e| e.is_finite()).fold(f64::INFINITY, f64::min));
    let mut masses = vec![0.0; hbox.total_bins()];
    for ((bin, _), e) in points.iter().zip(&energies) {
        if e.is_finite() {
            masses[*bin] += (offset - e).exp();
        }
    }
    (masses, offset)
}

/// Fraction of the target mass inside the box, measured against a box
/// three times as wide.
pub fn box_mass_fraction(potential: &dyn Potential, hbox: &HistogramBox) -> f64 {
    let (inner, offset) = bin_masses(potential, hbox, None);
    let wide = hbox.expanded();
    let (outer, _) = bin_masses(potential, &wide, Some(offset));
    // the wide box has 3^d times as many bins of the same size, each with the
    // same number of sub-samples, so raw sums are directly comparable
    inner.iter().sum::<f64>() / outer.iter().sum::<f64>()
}

/// Normalized target bin probabilities.
pub fn reference_histogram(potential: &dyn Potential, hbox: &HistogramBox) -> Vec<f64> {
    let (masses, _) = bin_masses(potential, hbox, None);
    let total: f64 = masses.iter().sum();
    masses.into_iter().map(|m| m / total).collect()
}

/// `Σ p log(p/q)` over bins; zero-probability bins of `p` contribute nothing.
pub fn histogram_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi.max(f64::MIN_POSITIVE)).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Histogram KL estimate of samples against `exp(−U)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KlEstimate {
    pub kl: f64,
    /// More than half of the bins that should carry mass are empty.
    pub sparse_warning: bool,
    /// Empty fraction of the bins with target probability ≥ 0.1 / bins.
    pub empty_fraction: f64,
    pub box_mass: f64,
}

/// `KL(empirical ‖ target)` with `1/(n·bins)` pseudo-mass added to every bin.
pub fn kl_divergence(samples: &[Vec<f64>], potential: &dyn Potential, hbox: &HistogramBox) -> Result<KlEstimate> {
    if samples.len() < MIN_KL_SAMPLES {
        return Err(Error::Config(format!(
            "KL estimation needs at least {MIN_KL_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if potential.dim() != hbox.dims() || samples.iter().any(|s| s.len() != hbox.dims()) {
        return Err(Error::dimension("KL samples", hbox.dims(), potential.dim()));
    }
    let box_mass = box_mass_fraction(potential, hbox);
    if box_mass < MIN_BOX_MASS {
        return Err(Error::Config(format!(
            "histogram box holds only {:.4}% of the target mass, need {}%",
            100.0 * box_mass,
            100.0 * MIN_BOX_MASS
        )));
    }
    let bins = hbox.total_bins();
    let n = samples.len() as f64;
    let mut counts = vec![0usize; bins];
    for s in samples {
        if s.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("sample is not finite".into()));
        }
        counts[hbox.bin_of(s)] += 1;
    }
    let pseudo = 1.0 / (n * bins as f64);
    let norm = 1.0 + 1.0 / n;
    let p: Vec<f64> = counts.iter().map(|c| (*c as f64 / n + pseudo) / norm).collect();
    let q = reference_histogram(potential, hbox);
    let heavy: Vec<usize> = (0..bins).filter(|b| q[*b] >= 0.1 / bins as f64).collect();
    let empty = heavy.iter().filter(|b| counts[**b] == 0).count();
    let empty_fraction = if heavy.is_empty() { 0.0 } else { empty as f64 / heavy.len() as f64 };
    Ok(KlEstimate {
        kl: histogram_kl(&p, &q),
        sparse_warning: empty_fraction > 0.5,
        empty_fraction,
        box_mass,
    })
}

/// Normalized autocorrelation `ρ(0..n)` by zero-padded FFT.
pub fn autocorrelation(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 2 {
        return Err(Error::Config("autocorrelation needs at least two samples".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("sequence contains non-finite values".into()));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    buf.iter_mut().for_each(|c| *c = Complex::new(c.norm_sqr(), 0.0));
    planner.plan_fft_inverse(size).process(&mut buf);
    let c0 = buf[0].re;
    if !c0.is_finite() {
        return Err(Error::Numeric("sequence variance is not finite".into()));
    }
    if c0 == 0.0 {
        return Ok(vec![f64::NAN; n]);
    }
    Ok(buf[..n].iter().map(|c| c.re / c0).collect())
}

/// Integrated autocorrelation time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AutocorrTime {
    /// `1 + 2 Σ ρ(k)`; infinite for a constant sequence.
    pub tau: f64,
    /// Set for zero-variance input, where τ is undefined.
    pub divergent: bool,
    /// Largest lag included in the sum.
    pub lags_used: usize,
}

/// τ with Geyer's initial positive sequence truncation: pair sums
/// `ρ(2k) + ρ(2k+1)` are accumulated while positive, up to `max_lag`.
pub fn autocorrelation_time(x: &[f64], max_lag: usize) -> Result<AutocorrTime> {
    if max_lag == 0 || x.len() < 10 * max_lag {
        return Err(Error::Config(format!(
            "autocorrelation time needs at least 10·max_lag = {} samples, got {}",
            10 * max_lag,
            x.len()
        )));
    }
    let rho = autocorrelation(x)?;
    if rho[0].is_nan() {
        return Ok(AutocorrTime {
            tau: f64::INFINITY,
            divergent: true,
            lags_used: 0,
        });
    }
    let mut sum = 0.0;
    let mut lags_used = 0;
    let mut k = 0;
    while 2 * k < max_lag {
        let pair = rho[2 * k] + rho[2 * k + 1];
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        lags_used = 2 * k + 1;
        k += 1;
    }
    Ok(AutocorrTime {
        tau: (2.0 * sum - 1.0).max(1.0),
        divergent: false,
        lags_used,
    })
}

/// `n / τ`.
pub fn effective_sample_size(x: &[f64], max_lag: usize) -> Result<f64> {
    Ok(x.len() as f64 / autocorrelation_time(x, max_lag)?.tau)
}

/// Monte Carlo standard error of the sample mean, `√(var · τ / n)`.
pub fn mc_standard_error(x: &[f64], max_lag: usize) -> Result<f64> {
    let t = autocorrelation_time(x, max_lag)?;
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((var * t.tau / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{OnePeak, TwoPeaks};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn inverse_cdf_samples(potential: &dyn Potential, lo: f64, hi: f64, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let m = 200_000;
        let h = (hi - lo) / m as f64;
        let mut cdf = Vec::with_capacity(m + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for i in 0..m {
            acc += (-potential.value(&[lo + (i as f64 + 0.5) * h])).exp();
            cdf.push(acc);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let u = rng.random::<f64>() * acc;
                let i = cdf.partition_point(|c| *c < u).clamp(1, m);
                let frac = (u - cdf[i - 1]) / (cdf[i] - cdf[i - 1]);
                vec![lo + (i as f64 - 1.0 + frac) * h]
            })
            .collect()
    }

    #[test]
    fn exact_samples_have_small_kl() {
        let hbox = HistogramBox::cube(1, -3.0, 3.0, 100).unwrap();
        let samples = inverse_cdf_samples(&TwoPeaks, -3.0, 3.0, 1_000_000, 1);
        let est = kl_divergence(&samples, &TwoPeaks, &hbox).unwrap();
        assert!(est.kl <= 0.01 && !est.sparse_warning, "{est:?}");
    }

    #[test]
    fn point_mass_has_large_kl() {
        let hbox = HistogramBox::cube(1, -5.0, 5.0, 100).unwrap();
        let est = kl_divergence(&vec![vec![0.0]; 10_000], &OnePeak, &hbox).unwrap();
        assert!(est.kl >= 2.0 && est.sparse_warning, "{est:?}");
    }

    #[test]
    fn identical_histograms_have_zero_kl() {
        let p = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(histogram_kl(&p, &p), 0.0);
    }

    #[test]
    fn narrow_box_and_short_traces_are_rejected() {
        let hbox = HistogramBox::cube(1, -1.0, 1.0, 20).unwrap();
        assert!(box_mass_fraction(&OnePeak, &hbox) < 0.7);
        assert!(kl_divergence(&vec![vec![0.0]; 5000], &OnePeak, &hbox).is_err());
        let wide = HistogramBox::cube(1, -5.0, 5.0, 20).unwrap();
        assert!(kl_divergence(&vec![vec![0.0]; 999], &OnePeak, &wide).is_err());
    }

    #[test]
    fn white_noise_has_unit_autocorrelation_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
        let t = autocorrelation_time(&x, 1000).unwrap();
        assert!((t.tau - 1.0).abs() <= 0.2, "{t:?}");
    }

    #[test]
    fn ar1_matches_closed_form() {
        let rho: f64 = 0.9;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x = Vec::with_capacity(200_000);
        let mut v = 0.0;
        for _ in 0..200_000 {
            v = rho * v + (1.0 - rho * rho).sqrt() * rng.sample::<f64, _>(StandardNormal);
            x.push(v);
        }
        let t = autocorrelation_time(&x, 2000).unwrap();
        let exact = (1.0 + rho) / (1.0 - rho);
        assert!((t.tau - exact).abs() <= 0.25 * exact, "{t:?}");
    }

    #[test]
    fn constant_sequence_is_flagged() {
        let t = autocorrelation_time(&vec![2.5; 1000], 10).unwrap();
        assert!(t.divergent && t.tau.is_infinite());
        assert!(matches!(autocorrelation_time(&[1.0, f64::NAN].repeat(50), 5), Err(Error::Numeric(_))));
        assert!(autocorrelation_time(&[1.0; 50], 10).is_err());
    }

    #[test]
    fn standard_error_of_white_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..40_000).map(|_| rng.sample(StandardNormal)).collect();
        let se = mc_standard_error(&x, 100).unwrap();
        assert!((se - 0.005).abs() < 0.001, "{se}");
    }
}
