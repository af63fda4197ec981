use std::path::Path;

use pulsecorr_core::denoise::{filter_pulses, FilterConfig};
use pulsecorr_core::stats::{classify_setting, integrate_all};
use pulsecorr_core::trace::{load_trace, segment_pulses, Phase, PulseWindow, SampledTrace, SettingSequence, TraceFormat};
use pulsecorr_core::Setting;

use crate::config::RunConfig;
use crate::output::{num, sibling, trace_format, write_atomic, Csv};
use crate::{Failure, InputArgs};

/// A loaded trace cut into pulse windows, each with its setting.
pub struct Segmented {
    pub trace: SampledTrace,
    pub windows: Vec<PulseWindow>,
    pub settings: Vec<Setting>,
}

pub fn load_segmented(input: &Path, settings: Option<&Path>, cfg: &RunConfig) -> Result<Segmented, Failure> {
    let sample_period = cfg.get("trace.sample_period", 25e-12)?;
    let repetition_period = cfg.get("trace.repetition_period", 1.6e-9)?;
    let phase = match cfg.raw("trace.phase").unwrap_or("auto") {
        "auto" => Phase::Auto,
        p => Phase::Fixed(
            p.parse()
                .map_err(|_| Failure::Usage(format!("`trace.phase`: expected `auto` or a sample offset, got `{p}`")))?,
        ),
    };
    cfg.note("trace.phase", format!("{phase:?}"));
    cfg.note("input", input.display());
    let trace = load_trace(input, trace_format(input), sample_period)?;
    let windows = segment_pulses(&trace, repetition_period, phase)?;
    let settings = match settings {
        Some(p) => {
            cfg.note("settings", p.display());
            SettingSequence::load(p)?.aligned_to(&windows)?
        }
        None => classify_setting(&integrate_all(&trace, &windows)?, None)?,
    };
    Ok(Segmented {
        trace,
        windows,
        settings,
    })
}

pub fn run(args: &InputArgs, cfg: &RunConfig) -> Result<(), Failure> {
    let d = FilterConfig::default();
    let fc = FilterConfig {
        svd_keep: cfg.get("filter.svd_keep", d.svd_keep)?,
        sg_degree: cfg.get("filter.sg_degree", d.sg_degree)?,
        sg_window: cfg.get("filter.sg_window", d.sg_window)?,
    };
    fc.validate()?;
    let out = &args.common.out;
    let spectrum_path = cfg.get_path("filter.spectrum_out").unwrap_or_else(|| sibling(out, ".spectrum.csv"));
    let seg = load_segmented(&args.input, args.settings.as_deref(), cfg)?;
    let filtered = filter_pulses(&seg.trace, &seg.windows, &seg.settings, &fc)?;

    let format = trace_format(out);
    let mut bytes = Vec::new();
    if format == TraceFormat::Csv {
        bytes.extend(format!("# config_hash: {}\n", cfg.hash()).as_bytes());
    }
    bytes.extend(pulsecorr_core::trace::encode_trace(&filtered.trace, format));
    write_atomic(out, &bytes)?;

    let mut csv = Csv::new(&cfg.hash(), &["setting", "index", "singular_value"]);
    for (setting, values) in &filtered.spectra {
        for (i, v) in values.iter().enumerate() {
            csv.row([setting.letter().to_string(), i.to_string(), num(*v)]);
        }
    }
    csv.write(&spectrum_path)?;
    eprintln!(
        "filtered {} pulses into {}; spectrum in {}",
        seg.windows.len(),
        out.display(),
        spectrum_path.display()
    );
    Ok(())
}
