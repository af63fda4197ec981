use std::collections::BTreeMap;

use nalgebra::DMatrix;
use proptest::prelude::*;
use pulsecorr_core::denoise::{sg_filter, svd_filter, PulseMatrix};
use pulsecorr_core::photon::{
    overlap, photon_distribution, CorrelationModel, IntensitySetting, SecurityConfig, TruncatedGaussian,
};
use pulsecorr_core::security::{cs_envelope, linearize_cs, Side};
use pulsecorr_core::stats::{
    intensity_ratio, offset_correct, pattern_statistics_upto, tag_energies, PulseEnergy,
};
use pulsecorr_core::{PatternKey, Setting};

fn setting_strategy() -> impl Strategy<Value = Setting> {
    prop_oneof![Just(Setting::Signal), Just(Setting::Decoy), Just(Setting::Vacuum)]
}

/// Pulses whose energy depends on the setting, with every setting present.
fn tagged_pulses() -> impl Strategy<Value = Vec<PulseEnergy>> {
    prop::collection::vec((setting_strategy(), 0.0f64..0.2), 30..200).prop_map(|v| {
        let mut settings: Vec<Setting> = v.iter().map(|(s, _)| *s).collect();
        settings[..3].copy_from_slice(&Setting::ALL);
        let energies: Vec<f64> = settings
            .iter()
            .zip(&v)
            .map(|(s, (_, jitter))| [1.0, 0.4, 0.05][s.index()] + jitter)
            .collect();
        tag_energies(&energies, &settings)
    })
}

fn settings(mu: f64, nu: f64, omega: f64) -> Vec<IntensitySetting> {
    Setting::ALL
        .iter()
        .zip([mu, nu, omega])
        .zip([0.7, 0.2, 0.1])
        .map(|((&setting, nominal), probability)| IntensitySetting { setting, nominal, probability })
        .collect()
}

/// First-order model in which only the pulse after a signal is brighter by
/// `shift` (relative).
fn shifted_model(shift: f64, n_cut_sigma: f64) -> CorrelationModel {
    let nominal = [0.6, 0.25, 0.04];
    let mut tg = BTreeMap::new();
    for key in PatternKey::all_of_length(2) {
        let prev = key.settings()[0];
        let cur = key.current().unwrap();
        let m = nominal[cur.index()] * if prev == Setting::Signal { 1.0 + shift } else { 1.0 };
        let s = n_cut_sigma * m;
        tg.insert(key, TruncatedGaussian::new(m, s, (m - 3.0 * s).max(0.0), m + 3.0 * s).unwrap());
    }
    CorrelationModel::new(1, settings(nominal[0], nominal[1], nominal[2]), tg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn one_letter_ratios_are_exact(pulses in tagged_pulses()) {
        let stats = pattern_statistics_upto(&pulses, 1, 0.1).unwrap();
        for s in Setting::ALL {
            let r = intensity_ratio(&stats, &PatternKey::single(s)).unwrap();
            prop_assert_eq!(r.rel, 1.0);
        }
        prop_assert_eq!(intensity_ratio(&stats, &PatternKey::single(Setting::Signal)).unwrap().abs, 1.0);
    }

    #[test]
    fn higher_orders_aggregate_to_lower(pulses in tagged_pulses()) {
        let stats = pattern_statistics_upto(&pulses, 2, 0.1).unwrap();
        for key in PatternKey::all_of_length(1).into_iter().chain(PatternKey::all_of_length(2)) {
            let Some(parent) = stats.get(&key) else { continue };
            let (mut n, mut sum) = (0usize, 0.0);
            for prev in Setting::ALL {
                let mut v = vec![prev];
                v.extend_from_slice(key.settings());
                if let Some(child) = stats.get(&PatternKey::new(v)) {
                    n += child.count;
                    sum += child.count as f64 * child.mean;
                }
            }
            prop_assert_eq!(n, parent.count);
            prop_assert!((sum / n as f64 - parent.mean).abs() <= 1e-12 * parent.mean.abs());
        }
    }

    #[test]
    fn offset_correction_preserves_differences(values in prop::collection::vec(-1.0f64..1.0, 2..50)) {
        let settings = vec![Setting::Signal; values.len()];
        let out = offset_correct(&tag_energies(&values, &settings));
        prop_assert!(out.iter().all(|e| e.energy >= 0.0));
        let shift = out[0].energy - values[0];
        for (o, v) in out.iter().zip(&values) {
            prop_assert!((o.energy - v - shift).abs() < 1e-12);
        }
    }

    #[test]
    fn overlap_is_symmetric(shift in 0.0f64..0.3, width in 0.005f64..0.05) {
        let model = shifted_model(shift, width);
        let cfg = SecurityConfig { n_cut: 3, ..SecurityConfig::default() };
        for c in Setting::ALL {
            let c = PatternKey::single(c);
            for (a, b) in [(Setting::Signal, Setting::Decoy), (Setting::Decoy, Setting::Vacuum), (Setting::Signal, Setting::Vacuum)] {
                let ab = overlap(a, b, &c, &model, &cfg).unwrap();
                prop_assert_eq!(ab, overlap(b, a, &c, &model, &cfg).unwrap());
                prop_assert!((0.0..=1.0).contains(&ab));
            }
        }
    }

    #[test]
    fn overlap_falls_as_means_separate(s1 in 0.0f64..0.3, extra in 0.01f64..0.3) {
        let cfg = SecurityConfig { n_cut: 8, ..SecurityConfig::default() };
        let c = PatternKey::single(Setting::Decoy);
        let near = overlap(Setting::Signal, Setting::Decoy, &c, &shifted_model(s1, 0.02), &cfg).unwrap();
        let far = overlap(Setting::Signal, Setting::Decoy, &c, &shifted_model(s1 + extra, 0.02), &cfg).unwrap();
        prop_assert!(far <= near + 1e-12, "{far} > {near}");
    }

    #[test]
    fn tangents_bound_the_envelope(y_ref in 0.0f64..=1.0, tau in 0.0f64..=1.0) {
        let up = linearize_cs(y_ref, tau, Side::Upper).unwrap();
        let lo = linearize_cs(y_ref, tau, Side::Lower).unwrap();
        for i in 0..=1000 {
            let y = i as f64 / 1000.0;
            let (gm, gp) = cs_envelope(y, tau).unwrap();
            prop_assert!(gm <= gp && (0.0..=1.0).contains(&gm) && gp <= 1.0);
            prop_assert!(up.at(y) >= gp - 1e-12, "upper cut at y={y}");
            prop_assert!(lo.at(y) <= gm + 1e-12, "lower cut at y={y}");
        }
    }

    #[test]
    fn photon_mass_accumulates_to_one(mean in 0.0f64..2.0, rel in 0.0f64..0.2) {
        let s = rel * mean;
        let tg = TruncatedGaussian::new(mean, s, (mean - 2.0 * s).max(0.0), mean + 2.0 * s).unwrap();
        let p = photon_distribution(&tg, 40, &SecurityConfig::default()).unwrap();
        let mut total = 0.0;
        for v in &p {
            prop_assert!(*v >= 0.0);
            total += v;
            prop_assert!(total <= 1.0 + 1e-12);
        }
        prop_assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn svd_truncation_beats_random_rank_k(
        data in prop::collection::vec(-1.0f64..1.0, 60),
        other in prop::collection::vec(-1.0f64..1.0, 30),
        keep in 1usize..4,
    ) {
        let m = DMatrix::from_row_slice(6, 10, &data);
        let filtered = svd_filter(&PulseMatrix::new(m.clone()).unwrap(), keep).unwrap();
        let best = (&m - filtered.as_matrix()).norm();
        // random rank-`keep` matrix from the first `keep` columns/rows of `other`
        let u = DMatrix::from_fn(6, keep, |i, j| other[(i * 3 + j) % 30]);
        let v = DMatrix::from_fn(keep, 10, |i, j| other[(j * 3 + i + 7) % 30]);
        prop_assert!(best <= (&m - u * v).norm() + 1e-12);
    }

    #[test]
    fn filters_are_linear(
        a in prop::collection::vec(-1.0f64..1.0, 80),
        b in prop::collection::vec(-1.0f64..1.0, 80),
        k in -3.0f64..3.0,
    ) {
        let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| k * x + y).collect();
        let (fa, fb, fc) = (sg_filter(&a, 3, 39).unwrap(), sg_filter(&b, 3, 39).unwrap(), sg_filter(&combo, 3, 39).unwrap());
        for i in 0..80 {
            prop_assert!((fc[i] - (k * fa[i] + fb[i])).abs() < 1e-10);
        }
        let m = |v: &[f64]| PulseMatrix::new(DMatrix::from_row_slice(8, 10, v)).unwrap();
        let sa = svd_filter(&m(&a), 8).unwrap();
        let sc = svd_filter(&m(&a.iter().map(|x| k * x).collect::<Vec<_>>()), 8).unwrap();
        prop_assert!((sc.as_matrix() - sa.as_matrix() * k).norm() < 1e-9);
    }

    #[test]
    fn sg_reproduces_low_degree_polynomials(c in prop::collection::vec(-2.0f64..2.0, 4), degree in 0usize..=3) {
        let x: Vec<f64> = (0..120).map(|i| {
            let t = i as f64 / 60.0 - 1.0;
            (0..=degree).map(|d| c[d] * t.powi(d as i32)).sum()
        }).collect();
        let y = sg_filter(&x, 3, 39).unwrap();
        let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3);
        for (a, b) in x.iter().zip(&y) {
            prop_assert!((a - b).abs() <= 1e-9 * scale);
        }
    }
}

#[test]
fn identical_distributions_overlap_fully_in_the_limit() {
    let model = shifted_model(0.0, 0.02);
    let cfg = SecurityConfig { n_cut: 30, ..SecurityConfig::default() };
    let t = overlap(Setting::Signal, Setting::Decoy, &PatternKey::single(Setting::Vacuum), &model, &cfg).unwrap();
    assert!((t - 1.0).abs() < 1e-12);
}

#[test]
fn uncorrelated_model_gives_pattern_independent_statistics() {
    let nominal = [0.6, 0.25, 0.04];
    let per = nominal.map(|m| TruncatedGaussian::new(m, 0.05 * m, 0.8 * m, 1.2 * m).unwrap());
    let model = CorrelationModel::uncorrelated(1, settings(0.6, 0.25, 0.04), per).unwrap();
    let cfg = SecurityConfig::default();
    for a in Setting::ALL {
        let rows: Vec<Vec<f64>> = Setting::ALL
            .iter()
            .map(|&prev| photon_distribution(model.tg(&PatternKey::new(vec![prev, a])).unwrap(), 10, &cfg).unwrap())
            .collect();
        assert!(rows.windows(2).all(|w| w[0] == w[1]));
    }
    let taus: Vec<f64> = Setting::ALL
        .iter()
        .map(|&c| overlap(Setting::Signal, Setting::Decoy, &PatternKey::single(c), &model, &cfg).unwrap())
        .collect();
    assert!(taus.iter().all(|&t| t == 1.0), "{taus:?}");
}
