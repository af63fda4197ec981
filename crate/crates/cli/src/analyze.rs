use std::collections::BTreeMap;
use std::path::Path;

use pulsecorr_core::stats::{
    classify_setting, integrate_all, intensity_ratio, offset_correct, pattern_statistics_upto, tag_energies,
    MeanEnergy, PatternStatistics, PatternSummary, DEFAULT_DELTA,
};
use pulsecorr_core::tables::parse_summary_table;
use pulsecorr_core::trace::SettingSequence;
use pulsecorr_core::{PatternKey, Setting};

use crate::config::RunConfig;
use crate::filter::load_segmented;
use crate::output::{num, Csv};
use crate::{Failure, InputArgs};

pub const COLUMNS: [&str; 9] = [
    "pattern",
    "count",
    "mean",
    "sigma",
    "min",
    "max",
    "ci_half_width",
    "rel_ratio",
    "abs_ratio",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InputKind {
    Table,
    Energies,
    Trace,
}

fn first_line(path: &Path) -> Result<Option<String>, Failure> {
    let text = std::fs::read(path).map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))?;
    let text = String::from_utf8_lossy(&text);
    Ok(text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string))
}

fn detect(path: &Path, requested: &str) -> Result<InputKind, Failure> {
    match requested {
        "table" => return Ok(InputKind::Table),
        "energies" => return Ok(InputKind::Energies),
        "trace" => return Ok(InputKind::Trace),
        "auto" => {}
        other => {
            return Err(Failure::Usage(format!(
                "`analyze.input_kind`: expected auto, table, energies or trace, got `{other}`"
            )))
        }
    }
    if matches!(path.extension().and_then(|e| e.to_str()), Some("f64" | "bin" | "raw")) {
        return Ok(InputKind::Trace);
    }
    let header = first_line(path)?.unwrap_or_default();
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    Ok(if cols.contains(&"pattern") {
        InputKind::Table
    } else if cols.contains(&"energy") {
        InputKind::Energies
    } else {
        InputKind::Trace
    })
}

/// Reads `energy` and, when present, `setting` columns.
fn read_energies(path: &Path) -> Result<(Vec<f64>, Option<Vec<Setting>>), Failure> {
    let origin = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("cannot read {origin}: {e}")))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (_, header) = lines
        .next()
        .ok_or_else(|| Failure::Data(format!("{origin}: empty energy list")))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let e_col = cols
        .iter()
        .position(|c| *c == "energy")
        .ok_or_else(|| Failure::Data(format!("{origin}:1: missing column `energy`")))?;
    let s_col = cols.iter().position(|c| *c == "setting");
    let mut energies = Vec::new();
    let mut settings = Vec::new();
    for (i, line) in lines {
        let at = format!("{origin}:{}", i + 1);
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let e = cells
            .get(e_col)
            .and_then(|c| c.parse::<f64>().ok())
            .filter(|v| v.is_finite())
            .ok_or_else(|| Failure::Data(format!("{at}: bad energy value")))?;
        energies.push(e);
        if let Some(j) = s_col {
            let s = cells
                .get(j)
                .and_then(|c| {
                    let mut ch = c.chars();
                    match (ch.next(), ch.next()) {
                        (Some(l), None) => Setting::from_letter(l),
                        _ => None,
                    }
                })
                .ok_or_else(|| Failure::Data(format!("{at}: setting must be S, D or V")))?;
            settings.push(s);
        }
    }
    if energies.is_empty() {
        return Err(Failure::Data(format!("{origin}: empty energy list")));
    }
    Ok((energies, s_col.map(|_| settings)))
}

fn ratio_cells<T: MeanEnergy>(stats: &BTreeMap<PatternKey, T>, key: &PatternKey) -> [String; 2] {
    match intensity_ratio(stats, key) {
        Ok(r) => [num(r.rel), num(r.abs)],
        Err(_) => [String::new(), String::new()],
    }
}

fn write_measured(stats: &BTreeMap<PatternKey, PatternStatistics>, out: &Path, hash: &str) -> Result<(), Failure> {
    let mut csv = Csv::new(hash, &COLUMNS);
    for (key, s) in stats {
        let [rel, abs] = ratio_cells(stats, key);
        csv.row([
            key.to_string(),
            s.count.to_string(),
            num(s.mean),
            num(s.sigma),
            num(s.min),
            num(s.max),
            num(s.ci_half_width),
            rel,
            abs,
        ]);
    }
    csv.write(out)
}

fn write_table(stats: &BTreeMap<PatternKey, PatternSummary>, out: &Path, hash: &str) -> Result<(), Failure> {
    let mut csv = Csv::new(hash, &COLUMNS);
    for (key, s) in stats {
        let [rel, abs] = ratio_cells(stats, key);
        csv.row([
            key.to_string(),
            String::new(),
            num(s.mean),
            num(s.sigma),
            num(s.min),
            num(s.max),
            String::new(),
            rel,
            abs,
        ]);
    }
    csv.write(out)
}

pub fn run(args: &InputArgs, cfg: &RunConfig) -> Result<(), Failure> {
    let xi: usize = cfg.get("analyze.xi", 0)?;
    let delta: f64 = cfg.get("analyze.delta", DEFAULT_DELTA)?;
    let requested: String = cfg.get("analyze.input_kind", "auto".to_string())?;
    let kind = detect(&args.input, &requested)?;
    cfg.note("analyze.kind", format!("{kind:?}"));
    cfg.note("input", args.input.display());
    let out = &args.common.out;

    if kind == InputKind::Table {
        let origin = args.input.display().to_string();
        let text = std::fs::read_to_string(&args.input)
            .map_err(|e| Failure::Data(format!("cannot read {origin}: {e}")))?;
        let mut table = parse_summary_table(&text, &origin)?;
        table.retain(|k, _| k.xi() <= xi);
        if table.is_empty() {
            return Err(Failure::Data(format!("{origin}: no patterns up to order {xi}")));
        }
        write_table(&table, out, &cfg.hash())?;
        eprintln!("wrote {} patterns to {}", table.len(), out.display());
        return Ok(());
    }

    let (energies, settings) = match kind {
        InputKind::Energies => {
            let (e, s) = read_energies(&args.input)?;
            let s = match (s, &args.settings) {
                (_, Some(p)) => {
                    cfg.note("settings", p.display());
                    classify_setting(&e, Some(&SettingSequence::load(p)?))?
                }
                (Some(s), None) => s,
                (None, None) => classify_setting(&e, None)?,
            };
            (e, s)
        }
        _ => {
            let seg = load_segmented(&args.input, args.settings.as_deref(), cfg)?;
            (integrate_all(&seg.trace, &seg.windows)?, seg.settings)
        }
    };
    if energies.len() <= xi {
        return Err(Failure::Data(format!(
            "{} pulses cannot form patterns of order {xi}",
            energies.len()
        )));
    }
    let tagged = offset_correct(&tag_energies(&energies, &settings));
    let stats = pattern_statistics_upto(&tagged, xi, delta)?;
    write_measured(&stats, out, &cfg.hash())?;
    eprintln!("wrote {} patterns to {}", stats.len(), out.display());
    Ok(())
}
