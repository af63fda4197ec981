//! Pulse energies, setting classification, pattern-conditioned statistics
//! and intensity ratios.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::photon::{CorrelationModel, IntensitySetting, TruncatedGaussian};
use crate::setting::{PatternKey, Setting, SettingProbabilities};
use crate::trace::{PulseWindow, SampledTrace, SettingSequence};

/// Largest correlation length accepted by the statistics routines.
pub const MAX_XI: usize = 6;

/// Confidence parameter used when none is configured.
pub const DEFAULT_DELTA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseEnergy {
    pub index: usize,
    pub energy: f64,
    pub setting: Setting,
}

/// Rectangle-rule area of the window: `sample_period * Σ samples`.
pub fn integrate_energy(trace: &SampledTrace, window: PulseWindow) -> Result<f64> {
    Ok(trace.sample_period() * trace.window(window)?.iter().sum::<f64>())
}

pub fn integrate_all(trace: &SampledTrace, windows: &[PulseWindow]) -> Result<Vec<f64>> {
    windows.iter().map(|&w| integrate_energy(trace, w)).collect()
}

/// Shifts every energy up by the most negative one, if any is negative.
pub fn offset_correct(energies: &[PulseEnergy]) -> Vec<PulseEnergy> {
    let shift = offset_shift(energies.iter().map(|e| e.energy));
    energies
        .iter()
        .map(|e| PulseEnergy {
            energy: e.energy + shift,
            ..*e
        })
        .collect()
}

/// Amount added by [`offset_correct`]: `max(0, -min)`.
pub fn offset_shift(values: impl IntoIterator<Item = f64>) -> f64 {
    let min = values.into_iter().fold(f64::INFINITY, f64::min);
    if min < 0.0 {
        -min
    } else {
        0.0
    }
}

/// Decision thresholds of the blind classifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SettingThresholds {
    /// Cluster centers ordered vacuum, decoy, signal.
    pub centers: [f64; 3],
    /// Vacuum/decoy boundary.
    pub low: f64,
    /// Decoy/signal boundary.
    pub high: f64,
}

impl SettingThresholds {
    pub fn from_centers(vacuum: f64, decoy: f64, signal: f64) -> Self {
        SettingThresholds {
            centers: [vacuum, decoy, signal],
            low: 0.5 * (vacuum + decoy),
            high: 0.5 * (decoy + signal),
        }
    }

    pub fn classify(&self, energy: f64) -> Setting {
        if energy < self.low {
            Setting::Vacuum
        } else if energy < self.high {
            Setting::Decoy
        } else {
            Setting::Signal
        }
    }
}

/// One-dimensional 3-means. Lloyd iterations start from several seedings
/// (extremes with the median, with the midrange, and inner quantiles) and
/// the partition with the smallest within-cluster sum of squares wins; a
/// single median seed lands inside the signal cluster when signals dominate.
pub fn kmeans_thresholds(energies: &[f64]) -> Result<SettingThresholds> {
    let mut all: Vec<f64> = energies.to_vec();
    all.sort_by(f64::total_cmp);
    let mut distinct = all.clone();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Classification(format!(
            "need at least 3 distinct energies, found {}",
            distinct.len()
        )));
    }
    let q = |f: f64| all[((all.len() - 1) as f64 * f).round() as usize];
    let (lo, hi) = (all[0], all[all.len() - 1]);
    let seeds = [
        [lo, q(0.5), hi],
        [lo, 0.5 * (lo + hi), hi],
        [q(0.05), q(0.5), q(0.95)],
        [lo, distinct[distinct.len() / 2], hi],
    ];
    seeds
        .into_iter()
        .filter(|c| c[0] < c[1] && c[1] < c[2])
        .filter_map(|c| lloyd(energies, c))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(c, _)| SettingThresholds::from_centers(c[0], c[1], c[2]))
        .ok_or_else(|| Error::Classification("an energy cluster became empty".into()))
}

/// Converged centers and within-cluster sum of squares; `None` when a
/// cluster empties.
fn lloyd(energies: &[f64], mut centers: [f64; 3]) -> Option<([f64; 3], f64)> {
    for _ in 0..200 {
        let t = SettingThresholds::from_centers(centers[0], centers[1], centers[2]);
        let mut sum = [0.0; 3];
        let mut count = [0usize; 3];
        for &e in energies {
            let c = 2 - t.classify(e).index();
            sum[c] += e;
            count[c] += 1;
        }
        if count.contains(&0) {
            return None;
        }
        let next = [0, 1, 2].map(|i| sum[i] / count[i] as f64);
        if next == centers {
            break;
        }
        centers = next;
    }
    let t = SettingThresholds::from_centers(centers[0], centers[1], centers[2]);
    let sse = energies
        .iter()
        .map(|&e| (e - centers[2 - t.classify(e).index()]).powi(2))
        .sum();
    Some((centers, sse))
}

/// Settings of each pulse: the ground truth when available, otherwise the
/// blind k-means classification.
pub fn classify_setting(energies: &[f64], ground_truth: Option<&SettingSequence>) -> Result<Vec<Setting>> {
    if energies.is_empty() {
        return Err(Error::Classification("no energies".into()));
    }
    if let Some(truth) = ground_truth {
        if truth.len() != energies.len() {
            return Err(Error::invalid(
                "ground_truth",
                format!("{} settings for {} pulses", truth.len(), energies.len()),
            ));
        }
        return Ok(truth.0.clone());
    }
    let t = kmeans_thresholds(energies)?;
    Ok(energies.iter().map(|&e| t.classify(e)).collect())
}

pub fn tag_energies(energies: &[f64], settings: &[Setting]) -> Vec<PulseEnergy> {
    energies
        .iter()
        .zip(settings)
        .enumerate()
        .map(|(index, (&energy, &setting))| PulseEnergy { index, energy, setting })
        .collect()
}

/// Hoeffding half-width `w √(ln(2/δ) / 2N)`.
pub fn hoeffding_half_width(range: f64, count: usize, delta: f64) -> f64 {
    range * ((2.0 / delta).ln() / (2.0 * count as f64)).sqrt()
}

/// Mergeable running statistics for one pattern.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternAccumulator {
    count: usize,
    mean: f64,
    m2: f64,
    min: f64,
    max: f64,
}

impl Default for PatternAccumulator {
    fn default() -> Self {
        PatternAccumulator {
            count: 0,
            mean: 0.0,
            m2: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }
}

impl PatternAccumulator {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
        self.min = self.min.min(x);
        self.max = self.max.max(x);
    }

    pub fn merge(&mut self, other: &PatternAccumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / n;
        self.m2 += other.m2 + d * d * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(&self, key: PatternKey, delta: f64) -> Option<PatternStatistics> {
        if self.count == 0 {
            return None;
        }
        let sigma = if self.count > 1 {
            (self.m2 / (self.count - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(PatternStatistics {
            key,
            count: self.count,
            // Clamp rounding so min ≤ mean ≤ max holds exactly.
            mean: self.mean.clamp(self.min, self.max),
            sigma,
            min: self.min,
            max: self.max,
            ci_half_width: hoeffding_half_width(self.max - self.min, self.count, delta),
            delta,
        })
    }
}

/// Mean, spread and range of one pattern's energies; the form the bundled
/// tables use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternSummary {
    pub mean: f64,
    pub sigma: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternStatistics {
    pub key: PatternKey,
    pub count: usize,
    pub mean: f64,
    pub sigma: f64,
    pub min: f64,
    pub max: f64,
    pub ci_half_width: f64,
    pub delta: f64,
}

impl PatternStatistics {
    pub fn summary(&self) -> PatternSummary {
        PatternSummary {
            mean: self.mean,
            sigma: self.sigma,
            min: self.min,
            max: self.max,
        }
    }

    /// Confidence interval `[mean - Δ, mean + Δ]`.
    pub fn interval(&self) -> (f64, f64) {
        (self.mean - self.ci_half_width, self.mean + self.ci_half_width)
    }
}

pub trait MeanEnergy {
    fn mean_energy(&self) -> f64;
}

impl MeanEnergy for PatternStatistics {
    fn mean_energy(&self) -> f64 {
        self.mean
    }
}

impl MeanEnergy for PatternSummary {
    fn mean_energy(&self) -> f64 {
        self.mean
    }
}

fn check_stats_args(xi: usize, delta: f64) -> Result<()> {
    if xi > MAX_XI {
        return Err(Error::invalid("xi", format!("at most {MAX_XI} supported (got {xi})")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta", format!("must lie in (0, 1) (got {delta})")));
    }
    Ok(())
}

fn accumulate(energies: &[PulseEnergy], xi: usize, skip: usize) -> BTreeMap<PatternKey, PatternAccumulator> {
    let settings: Vec<Setting> = energies.iter().map(|e| e.setting).collect();
    let mut acc: BTreeMap<PatternKey, PatternAccumulator> = BTreeMap::new();
    for k in skip.max(xi)..energies.len() {
        let key = PatternKey::new(settings[k - xi..=k].to_vec());
        acc.entry(key).or_default().push(energies[k].energy);
    }
    acc
}

fn finish_all(acc: BTreeMap<PatternKey, PatternAccumulator>, delta: f64) -> BTreeMap<PatternKey, PatternStatistics> {
    acc.into_iter()
        .filter_map(|(k, a)| a.finish(k.clone(), delta).map(|s| (k, s)))
        .collect()
}

/// Statistics of the analyzed pulse for every realized pattern of length
/// `xi + 1`. The first `xi` pulses lack a full history and are skipped.
pub fn pattern_statistics(
    energies: &[PulseEnergy],
    xi: usize,
    delta: f64,
) -> Result<BTreeMap<PatternKey, PatternStatistics>> {
    check_stats_args(xi, delta)?;
    Ok(finish_all(accumulate(energies, xi, xi), delta))
}

/// Statistics for every order `0..=max_xi`, all computed over the same pulses
/// (the first `max_xi` are skipped), so lower orders are exact aggregates of
/// higher ones.
pub fn pattern_statistics_upto(
    energies: &[PulseEnergy],
    max_xi: usize,
    delta: f64,
) -> Result<BTreeMap<PatternKey, PatternStatistics>> {
    check_stats_args(max_xi, delta)?;
    let mut out = BTreeMap::new();
    for xi in 0..=max_xi {
        out.extend(finish_all(accumulate(energies, xi, max_xi), delta));
    }
    Ok(out)
}

/// Merges per-shard accumulators, e.g. from parallel workers.
pub fn merge_accumulators(
    shards: &[BTreeMap<PatternKey, PatternAccumulator>],
) -> BTreeMap<PatternKey, PatternAccumulator> {
    let mut out: BTreeMap<PatternKey, PatternAccumulator> = BTreeMap::new();
    for shard in shards {
        for (k, a) in shard {
            out.entry(k.clone()).or_default().merge(a);
        }
    }
    out
}

/// Accumulators for one shard of pulses; `history` supplies the settings
/// that precede the shard so patterns may straddle shard boundaries.
pub fn shard_accumulators(
    energies: &[PulseEnergy],
    history: &[Setting],
    xi: usize,
) -> BTreeMap<PatternKey, PatternAccumulator> {
    let mut settings: Vec<Setting> = history.to_vec();
    settings.extend(energies.iter().map(|e| e.setting));
    let offset = history.len();
    let mut acc: BTreeMap<PatternKey, PatternAccumulator> = BTreeMap::new();
    for (i, e) in energies.iter().enumerate() {
        let k = offset + i;
        if k < xi {
            continue;
        }
        acc.entry(PatternKey::new(settings[k - xi..=k].to_vec()))
            .or_default()
            .push(e.energy);
    }
    acc
}

pub fn finish_accumulators(
    acc: BTreeMap<PatternKey, PatternAccumulator>,
    delta: f64,
) -> Result<BTreeMap<PatternKey, PatternStatistics>> {
    check_stats_args(0, delta)?;
    Ok(finish_all(acc, delta))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensityRatio {
    /// Relative to the mean of the pattern's own setting.
    pub rel: f64,
    /// Relative to the mean of the signal setting.
    pub abs: f64,
}

pub fn intensity_ratio<T: MeanEnergy>(stats: &BTreeMap<PatternKey, T>, pattern: &PatternKey) -> Result<IntensityRatio> {
    let lookup = |k: &PatternKey| {
        stats
            .get(k)
            .map(MeanEnergy::mean_energy)
            .ok_or_else(|| Error::MissingPattern(k.to_string()))
    };
    let current = pattern
        .current()
        .ok_or_else(|| Error::MissingPattern("(empty)".into()))?;
    let value = lookup(pattern)?;
    let setting = lookup(&PatternKey::single(current))?;
    let signal = lookup(&PatternKey::single(Setting::Signal))?;
    Ok(IntensityRatio {
        rel: value / setting,
        abs: value / signal,
    })
}

/// Histogram scaled so that its area is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
}

impl Histogram {
    pub fn area(&self) -> f64 {
        self.density
            .iter()
            .zip(self.edges.windows(2))
            .map(|(d, e)| d * (e[1] - e[0]))
            .sum()
    }
}

pub fn normalized_histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if values.is_empty() || bins == 0 {
        return Err(Error::invalid("histogram", "needs values and at least one bin"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let n = values.len() as f64;
    Ok(Histogram {
        edges: (0..=bins).map(|i| lo + i as f64 * width).collect(),
        density: counts.iter().map(|&c| c as f64 / (n * width)).collect(),
    })
}

/// How table values map to photon numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalization {
    /// Values are already mean photon numbers.
    Photons,
    /// Values are in arbitrary units; they are divided by the signal mean and
    /// scaled so the signal setting carries `signal_photons`.
    SignalMean { signal_photons: f64 },
}

/// Builds the truncated-Gaussian correlation model at the order of the
/// longest patterns present, which must cover all `3^(ξ+1)` keys. Nominal
/// intensities come from the one-letter rows when present, otherwise from the
/// probability-weighted pattern means.
pub fn derive_correlation_model<T: Summarize>(
    stats: &BTreeMap<PatternKey, T>,
    normalization: Normalization,
    probabilities: SettingProbabilities,
) -> Result<CorrelationModel> {
    let xi = stats
        .keys()
        .map(PatternKey::xi)
        .max()
        .ok_or_else(|| Error::IncompleteModel("no statistics".into()))?;
    derive_correlation_model_at(stats, xi, normalization, probabilities)
}

pub fn derive_correlation_model_at<T: Summarize>(
    stats: &BTreeMap<PatternKey, T>,
    xi: usize,
    normalization: Normalization,
    probabilities: SettingProbabilities,
) -> Result<CorrelationModel> {
    let scale = match normalization {
        Normalization::Photons => 1.0,
        Normalization::SignalMean { signal_photons } => {
            if !(signal_photons > 0.0) {
                return Err(Error::invalid("signal_photons", "must be positive"));
            }
            let s = stats
                .get(&PatternKey::single(Setting::Signal))
                .map(|v| v.summarize().mean)
                .ok_or_else(|| Error::MissingPattern("S".into()))?;
            signal_photons / s
        }
    };
    let mut tg = BTreeMap::new();
    for key in PatternKey::all_of_length(xi + 1) {
        let s = stats
            .get(&key)
            .ok_or_else(|| Error::IncompleteModel(format!("pattern {key} missing at xi = {xi}")))?
            .summarize();
        let dist = TruncatedGaussian::new(s.mean * scale, s.sigma * scale, s.min * scale, s.max * scale)?;
        tg.insert(key, dist);
    }
    let mut settings = Vec::with_capacity(3);
    for a in Setting::ALL {
        let nominal = match stats.get(&PatternKey::single(a)) {
            Some(v) => v.summarize().mean * scale,
            None => {
                let hist = PatternKey::all_of_length(xi);
                let w: f64 = hist.iter().map(|h| probabilities.of_pattern(h)).sum();
                hist.iter()
                    .map(|h| probabilities.of_pattern(h) * tg[&h.then(a)].mean)
                    .sum::<f64>()
                    / w
            }
        };
        settings.push(IntensitySetting {
            setting: a,
            nominal,
            probability: probabilities.get(a),
        });
    }
    CorrelationModel::new(xi, settings, tg)
}

pub trait Summarize {
    fn summarize(&self) -> PatternSummary;
}

impl Summarize for PatternSummary {
    fn summarize(&self) -> PatternSummary {
        *self
    }
}

impl Summarize for PatternStatistics {
    fn summarize(&self) -> PatternSummary {
        self.summary()
    }
}
