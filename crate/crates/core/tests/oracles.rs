//! Values frozen from `oracles/reference_values.py` (40-digit arithmetic).

use pulsecorr_core::keyrate::{channel_error_gain, channel_gain, ChannelParams};
use pulsecorr_core::photon::{overlap, photon_distribution, SecurityConfig};
use pulsecorr_core::stats::{derive_correlation_model_at, Normalization};
use pulsecorr_core::{tables, PatternKey, Setting};

const TAU_N_CUT_3: [(Setting, Setting, f64); 3] = [
    (Setting::Signal, Setting::Decoy, 0.99400114552341008),
    (Setting::Signal, Setting::Vacuum, 0.99407770922298626),
    (Setting::Decoy, Setting::Vacuum, 0.99408206107819013),
];

const SD_PHOTONS: [f64; 3] = [0.75702533971433071, 0.21067625065511481, 0.029363284454187499];

const GAIN_50_KM: f64 = 0.04066161940604667;
const ERROR_GAIN_50_KM: f64 = 0.00025978588343132999;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs()
}

#[test]
fn first_order_overlaps_match_reference() {
    let model = derive_correlation_model_at(&tables::system_a(), 1, Normalization::Photons, Default::default()).unwrap();
    let cfg = SecurityConfig {
        n_cut: 3,
        ..SecurityConfig::default()
    };
    for (a, b, want) in TAU_N_CUT_3 {
        for c in Setting::ALL {
            let got = overlap(a, b, &PatternKey::single(c), &model, &cfg).unwrap();
            assert!(close(got, want, 1e-9), "{a:?}{b:?}|{c:?}: {got} vs {want}");
            let back = overlap(b, a, &PatternKey::single(c), &model, &cfg).unwrap();
            assert_eq!(got, back);
        }
    }
}

#[test]
fn photon_statistics_of_sd_match_reference() {
    let model = derive_correlation_model_at(&tables::system_a(), 1, Normalization::Photons, Default::default()).unwrap();
    let tg = model.tg(&"SD".parse().unwrap()).unwrap();
    let p = photon_distribution(tg, 2, &SecurityConfig::default()).unwrap();
    for (got, want) in p.iter().zip(SD_PHOTONS) {
        assert!(close(*got, want, 1e-9), "{got} vs {want}");
    }
}

#[test]
fn channel_at_50_km_matches_reference() {
    let p = ChannelParams::default();
    assert!(close(channel_gain(0.638635, &p, 50.0), GAIN_50_KM, 1e-12));
    assert!(close(channel_error_gain(0.638635, &p, 50.0), ERROR_GAIN_50_KM, 1e-10));
}
