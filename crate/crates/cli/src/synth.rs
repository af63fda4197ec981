use pulsecorr_core::setting::{PatternKey, SettingProbabilities};
use pulsecorr_core::trace::{encode_trace, gaussian_shape, generate_synthetic_trace, SynthConfig, TraceFormat};

use crate::config::{RunConfig, BIAS_PREFIX};
use crate::output::{sibling, trace_format, write_atomic};
use crate::{Common, Failure};

pub fn probabilities(cfg: &RunConfig) -> Result<SettingProbabilities, Failure> {
    let d = SettingProbabilities::default();
    use pulsecorr_core::Setting::*;
    Ok(SettingProbabilities::new(
        cfg.get("protocol.p_signal", d.get(Signal))?,
        cfg.get("protocol.p_decoy", d.get(Decoy))?,
        cfg.get("protocol.p_vacuum", d.get(Vacuum))?,
    )?)
}

pub fn synth_config(cfg: &RunConfig) -> Result<SynthConfig, Failure> {
    let d = SynthConfig::default();
    let base = cfg.get_list("synth.base_energies", &d.base_energies)?;
    let base_energies: [f64; 3] = base
        .try_into()
        .map_err(|_| Failure::Usage("`synth.base_energies` needs three values (S D V)".into()))?;
    let mut pattern_bias = d.pattern_bias.clone();
    for (k, v) in cfg.with_prefix(BIAS_PREFIX) {
        let key: PatternKey = k.parse().map_err(|e: pulsecorr_core::Error| Failure::Usage(e.to_string()))?;
        let f: f64 = v
            .parse()
            .map_err(|_| Failure::Usage(format!("`{BIAS_PREFIX}{k}`: cannot parse `{v}`")))?;
        pattern_bias.insert(key, f);
    }
    let length = cfg.get("synth.pulse_length", 24usize)?;
    let width = cfg.get("synth.pulse_width", 3.0f64)?;
    let out = SynthConfig {
        pulse_count: cfg.get("synth.pulse_count", d.pulse_count)?,
        sample_period: cfg.get("synth.sample_period", d.sample_period)?,
        repetition_period: cfg.get("synth.repetition_period", d.repetition_period)?,
        pulse_shape: gaussian_shape(length, width),
        base_energies,
        pattern_bias,
        setting_probabilities: probabilities(cfg)?,
        noise_sigma: cfg.get("synth.noise_sigma", d.noise_sigma)?,
        baseline_offset: cfg.get("synth.baseline_offset", d.baseline_offset)?,
        phase_offset: cfg.get("synth.phase_offset", d.phase_offset)?,
        rng_seed: cfg.get("synth.seed", d.rng_seed)?,
    };
    out.validate()?;
    Ok(out)
}

pub fn run(args: &Common, cfg: &RunConfig) -> Result<(), Failure> {
    let sc = synth_config(cfg)?;
    let settings_path = cfg.get_path("synth.settings_out").unwrap_or_else(|| sibling(&args.out, ".settings"));
    let (trace, settings) = generate_synthetic_trace(&sc)?;
    let format = trace_format(&args.out);
    let mut bytes = Vec::new();
    if format == TraceFormat::Csv {
        bytes.extend(format!("# config_hash: {}\n", cfg.hash()).as_bytes());
    }
    bytes.extend(encode_trace(&trace, format));
    write_atomic(&args.out, &bytes)?;
    write_atomic(&settings_path, settings.encode().as_bytes())?;
    eprintln!(
        "wrote {} pulses to {} and {}",
        sc.pulse_count,
        args.out.display(),
        settings_path.display()
    );
    Ok(())
}
