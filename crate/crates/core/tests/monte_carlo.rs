//! Sampling checks of the analytic photon statistics and of the filters'
//! noise behaviour.

use nalgebra::DMatrix;
use pulsecorr_core::denoise::{sg_filter, svd_filter, PulseMatrix};
use pulsecorr_core::photon::{photon_distribution, SecurityConfig};
use pulsecorr_core::stats::{derive_correlation_model_at, hoeffding_half_width, Normalization};
use pulsecorr_core::tables;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

#[test]
fn photon_numbers_match_sampled_mixture() {
    let model = derive_correlation_model_at(&tables::system_a(), 1, Normalization::Photons, Default::default()).unwrap();
    let tg = *model.tg(&"SD".parse().unwrap()).unwrap();
    let p = photon_distribution(&tg, 3, &SecurityConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let parent = Normal::new(tg.mean, tg.sigma).unwrap();
    let draws = 2_000_000;
    let mut counts = [0usize; 4];
    for _ in 0..draws {
        let alpha = loop {
            let a: f64 = parent.sample(&mut rng);
            if (tg.lower..=tg.upper).contains(&a) {
                break a;
            }
        };
        let n = Poisson::new(alpha).unwrap().sample(&mut rng) as usize;
        if n < counts.len() {
            counts[n] += 1;
        }
    }
    for (n, (&c, &want)) in counts.iter().zip(&p).enumerate() {
        let got = c as f64 / draws as f64;
        let se = (want * (1.0 - want) / draws as f64).sqrt();
        assert!((got - want).abs() <= 4.0 * se, "n = {n}: sampled {got}, analytic {want}");
    }
}

#[test]
fn hoeffding_width_matches_closed_form() {
    let w = hoeffding_half_width(2.0, 800, 0.1);
    assert!((w - 2.0 * (20f64.ln() / 1600.0).sqrt()).abs() < 1e-15);
    assert!(hoeffding_half_width(2.0, 3200, 0.1) < w);
}

#[test]
fn sg_filter_reduces_white_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let x: Vec<f64> = (0..20_000).map(|_| noise.sample(&mut rng)).collect();
    let y = sg_filter(&x, 3, 39).unwrap();
    let var = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64;
    let interior = &y[19..y.len() - 19];
    // Central cubic weights on 39 points leave about 0.058 of the variance.
    let ratio = var(interior) / var(&x);
    assert!(ratio > 0.04 && ratio < 0.08, "variance ratio {ratio}");
}

#[test]
fn svd_filter_denoises_rank_one_pulses() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let shape: Vec<f64> = (0..64).map(|j| (-0.5 * ((j as f64 - 31.5) / 3.0).powi(2)).exp()).collect();
    let amps: Vec<f64> = (0..400).map(|_| rng.random_range(0.9..1.1)).collect();
    let truth = DMatrix::from_fn(400, 64, |i, j| amps[i] * shape[j]);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let noisy = DMatrix::from_fn(400, 64, |i, j| truth[(i, j)] + noise.sample(&mut rng));
    let filtered = svd_filter(&PulseMatrix::new(noisy.clone()).unwrap(), 1).unwrap();
    let raw_err = (&noisy - &truth).norm();
    let filt_err = (filtered.as_matrix() - &truth).norm();
    assert!(filt_err < 0.2 * raw_err, "{filt_err} vs {raw_err}");
    // Mean pulse energy survives the projection, up to the noise the rows
    // already carry.
    let energy = |m: &DMatrix<f64>| m.sum() / m.nrows() as f64;
    let se = 0.05 * 8.0 / 20.0;
    let bias = (energy(filtered.as_matrix()) - energy(&truth)).abs();
    assert!(bias < 3.0 * se, "energy bias {bias} vs standard error {se}");
    assert!((energy(filtered.as_matrix()) - energy(&noisy)).abs() < 0.5 * se);
}
