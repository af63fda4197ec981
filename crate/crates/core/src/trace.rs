//! Oscillogram traces: loading, writing, segmentation into pulse windows, and
//! a synthetic pulse-train generator with known ground truth.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::setting::{PatternKey, Setting, SettingProbabilities};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Measured,
    Synthetic,
}

/// Uniformly sampled voltage waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledTrace {
    sample_period: f64,
    samples: Vec<f64>,
    origin: Origin,
    label: String,
}

impl SampledTrace {
    pub fn new(
        sample_period: f64,
        samples: Vec<f64>,
        origin: Origin,
        label: impl Into<String>,
    ) -> Result<Self> {
        if !(sample_period > 0.0) || !sample_period.is_finite() {
            return Err(Error::invalid("sample_period", "must be positive and finite"));
        }
        if samples.is_empty() {
            return Err(Error::malformed("trace", "no samples"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                location: format!("sample {i}"),
            });
        }
        Ok(SampledTrace {
            sample_period,
            samples,
            origin,
            label: label.into(),
        })
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Total duration covered by the samples.
    pub fn span(&self) -> f64 {
        self.samples.len() as f64 * self.sample_period
    }

    pub fn window(&self, w: PulseWindow) -> Result<&[f64]> {
        if w.end() > self.samples.len() {
            return Err(Error::WindowOutOfBounds {
                start: w.start,
                end: w.end(),
                len: self.samples.len(),
            });
        }
        Ok(&self.samples[w.start..w.end()])
    }

    /// Copy of this trace with some windows replaced; used to write filtered
    /// pulses back into place.
    pub fn with_windows_replaced(&self, replaced: &[(PulseWindow, Vec<f64>)]) -> Result<SampledTrace> {
        let mut samples = self.samples.clone();
        for (w, values) in replaced {
            if w.end() > samples.len() || values.len() != w.length {
                return Err(Error::WindowOutOfBounds {
                    start: w.start,
                    end: w.start + values.len(),
                    len: samples.len(),
                });
            }
            samples[w.start..w.end()].copy_from_slice(values);
        }
        SampledTrace::new(self.sample_period, samples, self.origin, self.label.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    /// One decimal voltage per line; `#` starts a comment line.
    Csv,
    /// Contiguous little-endian 64-bit floats.
    RawF64,
}

pub fn load_trace(path: &Path, format: TraceFormat, sample_period: f64) -> Result<SampledTrace> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let samples = match format {
        TraceFormat::Csv => parse_csv_samples(&fs::read_to_string(path).map_err(io_err)?)?,
        TraceFormat::RawF64 => parse_raw_samples(&fs::read(path).map_err(io_err)?)?,
    };
    let label = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    SampledTrace::new(sample_period, samples, Origin::Measured, label)
}

pub fn parse_csv_samples(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| Error::malformed(format!("line {}", lineno + 1), format!("`{line}` is not a number")))?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                location: format!("line {}", lineno + 1),
            });
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::malformed("line 1", "no samples in file"));
    }
    Ok(out)
}

pub fn parse_raw_samples(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.is_empty() {
        return Err(Error::malformed("offset 0", "empty raw stream"));
    }
    if bytes.len() % 8 != 0 {
        return Err(Error::malformed(
            format!("offset {}", bytes.len() - bytes.len() % 8),
            "trailing partial 8-byte record",
        ));
    }
    let mut out = Vec::with_capacity(bytes.len() / 8);
    for (i, chunk) in bytes.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
        if !v.is_finite() {
            return Err(Error::NonFinite {
                location: format!("offset {}", i * 8),
            });
        }
        out.push(v);
    }
    Ok(out)
}

pub fn encode_trace(trace: &SampledTrace, format: TraceFormat) -> Vec<u8> {
    match format {
        TraceFormat::Csv => {
            let mut s = String::with_capacity(trace.len() * 12);
            for v in trace.samples() {
                // `{:?}` prints the shortest representation that parses back exactly.
                s.push_str(&format!("{v:?}\n"));
            }
            s.into_bytes()
        }
        TraceFormat::RawF64 => trace.samples().iter().flat_map(|v| v.to_le_bytes()).collect(),
    }
}

pub fn write_trace(trace: &SampledTrace, path: &Path, format: TraceFormat) -> Result<()> {
    fs::write(path, encode_trace(trace, format)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Fixed integration window in sample indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PulseWindow {
    pub start: usize,
    pub length: usize,
}

impl PulseWindow {
    pub fn end(&self) -> usize {
        self.start + self.length
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Auto,
    Fixed(usize),
}

/// Number of whole samples in one repetition period.
pub fn samples_per_period(repetition_period: f64, sample_period: f64) -> usize {
    // Guard against 25e-9 / 12.5e-12 landing just below an integer.
    (repetition_period / sample_period * (1.0 + 1e-12)).floor() as usize
}

/// Splits a trace into consecutive, equal-length windows, one per emitted
/// pulse.
///
/// With [`Phase::Auto`] the window offset centers each window on the pulse:
/// the trace is folded at the repetition period and cross-correlated with a
/// raised-cosine comb at the same period; the comb position with maximal
/// correlation marks the pulse centroid.
pub fn segment_pulses(trace: &SampledTrace, repetition_period: f64, phase: Phase) -> Result<Vec<PulseWindow>> {
    if !(repetition_period >= 2.0 * trace.sample_period()) {
        return Err(Error::invalid(
            "repetition_period",
            "must span at least two samples",
        ));
    }
    let length = samples_per_period(repetition_period, trace.sample_period());
    if trace.len() < length {
        return Err(Error::invalid(
            "repetition_period",
            format!("trace of {} samples is shorter than one period ({length} samples)", trace.len()),
        ));
    }
    let offset = match phase {
        Phase::Fixed(p) => p,
        Phase::Auto => estimate_phase(trace.samples(), length),
    };
    if offset >= trace.len() {
        return Err(Error::invalid("phase", "offset beyond the end of the trace"));
    }
    let count = (trace.len() - offset) / length;
    if count == 0 {
        return Err(Error::invalid("phase", "no complete period after the offset"));
    }
    Ok((0..count)
        .map(|k| PulseWindow {
            start: offset + k * length,
            length,
        })
        .collect())
}

/// Average of the trace folded at `period` samples, over all whole periods.
pub fn fold_period(samples: &[f64], period: usize) -> Vec<f64> {
    let periods = samples.len() / period;
    let mut fold = vec![0.0; period];
    for chunk in samples.chunks_exact(period).take(periods) {
        for (f, &v) in fold.iter_mut().zip(chunk) {
            *f += v;
        }
    }
    if periods > 0 {
        fold.iter_mut().for_each(|f| *f /= periods as f64);
    }
    fold
}

/// Window offset in `[0, period)` that centers the folded pulse.
pub fn estimate_phase(samples: &[f64], period: usize) -> usize {
    let fold = fold_period(samples, period);
    let l = period as f64;
    let (mut c, mut s) = (0.0, 0.0);
    for (j, &f) in fold.iter().enumerate() {
        let arg = 2.0 * PI * j as f64 / l;
        c += f * arg.cos();
        s += f * arg.sin();
    }
    // The raised-cosine comb correlation peaks at the phase of the fundamental.
    let centroid = (s.atan2(c) / (2.0 * PI) * l).rem_euclid(l);
    let start = (centroid - (l - 1.0) / 2.0).round();
    (start.rem_euclid(l) as usize) % period
}

/// True setting of every emitted pulse, in emission order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SettingSequence(pub Vec<Setting>);

impl SettingSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut chars = line.chars();
            let s = match (chars.next().and_then(Setting::from_letter), chars.next()) {
                (Some(s), None) => s,
                _ => {
                    return Err(Error::malformed(
                        format!("line {}", lineno + 1),
                        format!("expected one of S, D, V; got `{line}`"),
                    ))
                }
            };
            out.push(s);
        }
        Ok(SettingSequence(out))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Settings of the segmented `windows`. A sequence one pulse longer than
    /// the windows lost either its first pulse (windows start past the middle
    /// of the first period) or its last one.
    pub fn aligned_to(&self, windows: &[PulseWindow]) -> Result<Vec<Setting>> {
        let skip = match (self.len().checked_sub(windows.len()), windows.first()) {
            (Some(0), _) => 0,
            (Some(1), Some(w)) if 2 * w.start >= w.length => 1,
            (Some(1), _) => 0,
            _ => {
                return Err(Error::malformed(
                    "settings",
                    format!("{} settings for {} pulses", self.len(), windows.len()),
                ))
            }
        };
        Ok(self.0[skip..skip + windows.len()].to_vec())
    }

    pub fn encode(&self) -> String {
        let mut s = String::with_capacity(self.0.len() * 2);
        for setting in &self.0 {
            s.push(setting.letter());
            s.push('\n');
        }
        s
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(self.encode().as_bytes())
    }
}

/// Parameters of the synthetic pulse-train generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub pulse_count: usize,
    pub sample_period: f64,
    pub repetition_period: f64,
    /// Relative amplitudes of one pulse; rescaled per pulse to the target energy.
    pub pulse_shape: Vec<f64>,
    /// Energy (V·s) of an unbiased pulse, indexed by [`Setting::index`].
    pub base_energies: [f64; 3],
    /// Multiplicative energy factor applied when the settings ending at a pulse
    /// match the key. Factors of all matching keys multiply.
    pub pattern_bias: BTreeMap<PatternKey, f64>,
    pub setting_probabilities: SettingProbabilities,
    pub noise_sigma: f64,
    pub baseline_offset: f64,
    /// Leading samples before the first pulse window.
    pub phase_offset: usize,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            pulse_count: 1000,
            sample_period: 25e-12,
            repetition_period: 1.6e-9,
            pulse_shape: gaussian_shape(24, 3.0),
            base_energies: [2.0e-11, 0.66e-11, 0.16e-11],
            pattern_bias: BTreeMap::new(),
            setting_probabilities: SettingProbabilities::default(),
            noise_sigma: 0.0,
            baseline_offset: 0.0,
            phase_offset: 0,
            rng_seed: 1,
        }
    }
}

/// Symmetric Gaussian template of `len` samples with standard deviation
/// `width` samples.
pub fn gaussian_shape(len: usize, width: f64) -> Vec<f64> {
    let center = (len as f64 - 1.0) / 2.0;
    (0..len)
        .map(|i| (-0.5 * ((i as f64 - center) / width).powi(2)).exp())
        .collect()
}

impl SynthConfig {
    pub fn window_length(&self) -> usize {
        samples_per_period(self.repetition_period, self.sample_period)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pulse_count == 0 {
            return Err(Error::invalid("pulse_count", "must be at least 1"));
        }
        if !(self.sample_period > 0.0) {
            return Err(Error::invalid("sample_period", "must be positive"));
        }
        if !(self.repetition_period >= 2.0 * self.sample_period) {
            return Err(Error::invalid("repetition_period", "must span at least two samples"));
        }
        let l = self.window_length();
        if self.pulse_shape.is_empty() || self.pulse_shape.len() > l {
            return Err(Error::invalid(
                "pulse_shape",
                format!("needs between 1 and {l} samples"),
            ));
        }
        if self.pulse_shape.iter().any(|v| !v.is_finite()) || !(self.pulse_shape.iter().sum::<f64>() > 0.0) {
            return Err(Error::invalid("pulse_shape", "must be finite with a positive sum"));
        }
        let [s, d, v] = self.base_energies;
        if !(s > d && d > v && v >= 0.0) {
            return Err(Error::invalid(
                "base_energies",
                "require signal > decoy > vacuum >= 0",
            ));
        }
        if let Some((k, f)) = self.pattern_bias.iter().find(|(_, f)| !(**f > 0.0) || !f.is_finite()) {
            return Err(Error::invalid("pattern_bias", format!("factor for {k} must be positive (got {f})")));
        }
        if self.pattern_bias.keys().any(|k| k.is_empty()) {
            return Err(Error::invalid("pattern_bias", "empty pattern key"));
        }
        if !(self.noise_sigma >= 0.0) || !self.baseline_offset.is_finite() {
            return Err(Error::invalid("noise_sigma", "must be non-negative; offset finite"));
        }
        if self.phase_offset >= l {
            return Err(Error::invalid("phase_offset", "must be shorter than one period"));
        }
        Ok(())
    }

    /// Noiseless energy of pulse `k` given the full setting history.
    pub fn pulse_energy(&self, settings: &[Setting], k: usize) -> f64 {
        let mut e = self.base_energies[settings[k].index()];
        for (key, factor) in &self.pattern_bias {
            let n = key.len();
            // Pulses without enough history for this key stay unbiased.
            if n <= k + 1 && &settings[k + 1 - n..=k] == key.settings() {
                e *= factor;
            }
        }
        e
    }
}

/// Generates a noisy pulse train and the settings that produced it.
///
/// Each pulse occupies one repetition slot with the template centered in the
/// slot; slots start at `phase_offset`.
pub fn generate_synthetic_trace(config: &SynthConfig) -> Result<(SampledTrace, SettingSequence)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let p_s = config.setting_probabilities.get(Setting::Signal);
    let p_d = config.setting_probabilities.get(Setting::Decoy);
    let settings: Vec<Setting> = (0..config.pulse_count)
        .map(|_| {
            let u: f64 = rng.random();
            if u < p_s {
                Setting::Signal
            } else if u < p_s + p_d {
                Setting::Decoy
            } else {
                Setting::Vacuum
            }
        })
        .collect();

    let l = config.window_length();
    let w = config.pulse_shape.len();
    let inset = (l - w) / 2;
    let shape_sum: f64 = config.pulse_shape.iter().sum();
    let mut samples = vec![0.0; config.phase_offset + config.pulse_count * l];
    for k in 0..config.pulse_count {
        let scale = config.pulse_energy(&settings, k) / (config.sample_period * shape_sum);
        let start = config.phase_offset + k * l + inset;
        for (dst, &a) in samples[start..start + w].iter_mut().zip(&config.pulse_shape) {
            *dst = a * scale;
        }
    }
    if config.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, config.noise_sigma).map_err(|e| Error::invalid("noise_sigma", e.to_string()))?;
        for v in samples.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    if config.baseline_offset != 0.0 {
        samples.iter_mut().for_each(|v| *v += config.baseline_offset);
    }
    let trace = SampledTrace::new(
        config.sample_period,
        samples,
        Origin::Synthetic,
        format!("synthetic seed={}", config.rng_seed),
    )?;
    Ok((trace, SettingSequence(settings)))
}
