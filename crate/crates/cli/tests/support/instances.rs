//! Random decoy programs with a known answer: a correlated source model,
//! true yields and error yields that respect every overlap, and the gains
//! they imply.

use std::collections::BTreeMap;

use pulsecorr_core::photon::{CorrelationModel, IntensitySetting, SecurityConfig, TruncatedGaussian};
use pulsecorr_core::security::{cs_envelope, GainSet, ObservedGains, ReferenceParameters, SecurityContext};
use pulsecorr_core::{PatternKey, Setting};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub ctx: SecurityContext,
    pub gains: GainSet,
    pub truth: ReferenceParameters,
    pub z1: f64,
    pub x1: f64,
    pub e1: f64,
    /// Plausible but inexact references for the tangents.
    pub guess: ReferenceParameters,
}

fn random_model(rng: &mut ChaCha8Rng, xi: usize) -> CorrelationModel {
    let nominal = [rng.random_range(0.4..0.8), rng.random_range(0.1..0.3), rng.random_range(0.0..0.05)];
    let settings: Vec<IntensitySetting> = Setting::ALL
        .iter()
        .zip(nominal)
        .zip([0.7, 0.2, 0.1])
        .map(|((&setting, nominal), probability)| IntensitySetting { setting, nominal, probability })
        .collect();
    let mut tg = BTreeMap::new();
    for key in PatternKey::all_of_length(xi + 1) {
        let a = key.current().unwrap();
        let m: f64 = nominal[a.index()] * (1.0 + rng.random_range(-0.05..0.05));
        let s = m * rng.random_range(0.01..0.05);
        tg.insert(key, TruncatedGaussian::new(m, s, (m - 3.0 * s).max(0.0), m + 3.0 * s).unwrap());
    }
    CorrelationModel::new(xi, settings, tg).unwrap()
}

/// True when every ordered pair of settings in `values` (indexed by setting)
/// respects the envelope at its overlap.
fn consistent(ctx: &SecurityContext, c: &PatternKey, values: &[f64; 3]) -> bool {
    for a in Setting::ALL {
        for b in Setting::ALL {
            if a == b {
                continue;
            }
            let (lo, hi) = cs_envelope(values[a.index()], ctx.overlap(a, b, c)).unwrap();
            let v = values[b.index()];
            if v < lo || v > hi {
                return false;
            }
        }
    }
    true
}

/// Per-setting values near `base`, accepted only if consistent; otherwise
/// all equal to `base`, which every overlap admits.
fn spread(rng: &mut ChaCha8Rng, ctx: &SecurityContext, c: &PatternKey, base: f64, cap: [f64; 3]) -> [f64; 3] {
    for _ in 0..20 {
        let eps = rng.random_range(0.0..0.05);
        let v = [0, 1, 2].map(|i| (base * (1.0 + rng.random_range(-eps..=eps))).clamp(0.0, cap[i]));
        if consistent(ctx, c, &v) {
            return v;
        }
    }
    [base; 3]
}

fn observed(ctx: &SecurityContext, q: f64, values: &BTreeMap<PatternKey, Vec<f64>>, tails: &BTreeMap<PatternKey, f64>) -> BTreeMap<PatternKey, f64> {
    let p = ctx.model.probabilities();
    values
        .iter()
        .map(|(key, v)| {
            let row = ctx.tables.row(key).unwrap();
            let tail = ctx.tables.tail(key).unwrap();
            let a = key.current().unwrap();
            let w = q * q * p.get(a) * p.of_pattern(&key.history());
            let inner: f64 = row.iter().zip(v).map(|(p, y)| p * y).sum();
            (key.clone(), w * (inner + tail * tails[key]))
        })
        .collect()
}

fn single_photon_sum(ctx: &SecurityContext, q: f64, values: &BTreeMap<PatternKey, Vec<f64>>) -> f64 {
    let p = ctx.model.probabilities();
    ctx.histories()
        .iter()
        .map(|c| {
            let key = c.then(Setting::Signal);
            q * q * p.get(Setting::Signal) * p.of_pattern(c) * ctx.tables.row(&key).unwrap()[1] * values[&key][1]
        })
        .sum()
}

pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xi = if rng.random_bool(0.5) { 0 } else { 1 };
    let cfg = SecurityConfig {
        n_cut: rng.random_range(3..=8),
        ..SecurityConfig::default()
    };
    let ctx = SecurityContext::new(random_model(&mut rng, xi), cfg).unwrap();
    let n_cut = cfg.n_cut;
    let mut yields: BTreeMap<PatternKey, Vec<f64>> = BTreeMap::new();
    let mut errors: BTreeMap<PatternKey, Vec<f64>> = BTreeMap::new();
    for c in ctx.histories() {
        let mut y = vec![[0.0; 3]; n_cut + 1];
        let mut h = vec![[0.0; 3]; n_cut + 1];
        for n in 0..=n_cut {
            let base = if n == 0 {
                rng.random_range(0.0..1e-3)
            } else {
                1.0 - (1.0 - rng.random_range(0.01..0.5f64)).powi(n as i32)
            };
            y[n] = spread(&mut rng, &ctx, &c, base, [1.0; 3]);
            let floor = y[n].iter().copied().fold(1.0, f64::min);
            let h_base = floor * rng.random_range(0.0..0.3);
            h[n] = spread(&mut rng, &ctx, &c, h_base, y[n]);
        }
        for a in Setting::ALL {
            let key = c.then(a);
            yields.insert(key.clone(), y.iter().map(|v| v[a.index()]).collect());
            errors.insert(key, h.iter().map(|v| v[a.index()]).collect());
        }
    }
    let tail_y: BTreeMap<PatternKey, f64> = yields.keys().map(|k| (k.clone(), rng.random_range(0.5..1.0))).collect();
    let tail_h: BTreeMap<PatternKey, f64> = yields.keys().map(|k| (k.clone(), tail_y[k] * rng.random_range(0.0..0.3))).collect();
    let qz = rng.random_range(0.3..0.7);
    let qx = 1.0 - qz;
    let basis = |q: f64| ObservedGains {
        basis_probability: q,
        gain: observed(&ctx, q, &yields, &tail_y),
        error_gain: observed(&ctx, q, &errors, &tail_h),
    };
    let gains = GainSet { z: basis(qz), x: basis(qx) };
    let (z1, x1, e1) = (
        single_photon_sum(&ctx, qz, &yields),
        single_photon_sum(&ctx, qx, &yields),
        single_photon_sum(&ctx, qx, &errors),
    );
    let truth = ReferenceParameters { yields, errors };
    let factor = rng.random_range(0.7..1.3);
    let guess = truth.scaled(factor);
    Instance {
        ctx,
        gains,
        truth,
        z1,
        x1,
        e1,
        guess,
    }
}
