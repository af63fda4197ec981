//! Bundled pattern statistics of two measured sources, and the CSV form they
//! are stored in (`pattern,mean,sigma,min,max`).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::setting::PatternKey;
use crate::stats::PatternSummary;

const SYSTEM_A: &str = include_str!("../../../data/system_a.csv");
const SYSTEM_B: &str = include_str!("../../../data/system_b.csv");

/// Source A, in photons.
pub fn system_a() -> BTreeMap<PatternKey, PatternSummary> {
    parse_summary_table(SYSTEM_A, "system_a.csv").expect("bundled table parses")
}

/// Source B, normalized to the signal mean.
pub fn system_b() -> BTreeMap<PatternKey, PatternSummary> {
    parse_summary_table(SYSTEM_B, "system_b.csv").expect("bundled table parses")
}

pub fn system_a_csv() -> &'static str {
    SYSTEM_A
}

pub fn system_b_csv() -> &'static str {
    SYSTEM_B
}

pub const SUMMARY_HEADER: [&str; 5] = ["pattern", "mean", "sigma", "min", "max"];

pub fn parse_summary_table(text: &str, origin: &str) -> Result<BTreeMap<PatternKey, PatternSummary>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (hline, header) = lines.next().ok_or_else(|| Error::malformed(origin, "empty table"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let index = |name: &str| {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::malformed(format!("{origin}:{}", hline + 1), format!("missing column `{name}`")))
    };
    let idx: Vec<usize> = SUMMARY_HEADER.iter().map(|c| index(c)).collect::<Result<_>>()?;
    let mut out = BTreeMap::new();
    for (i, line) in lines {
        let at = format!("{origin}:{}", i + 1);
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let cell = |j: usize| {
            cells
                .get(idx[j])
                .copied()
                .ok_or_else(|| Error::malformed(at.clone(), "too few columns"))
        };
        let key: PatternKey = cell(0)?.parse().map_err(|e: Error| Error::malformed(at.clone(), e.to_string()))?;
        let mut v = [0.0; 4];
        for (j, slot) in v.iter_mut().enumerate() {
            let c = cell(j + 1)?;
            *slot = c
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::malformed(at.clone(), format!("`{c}` is not a number")))?;
        }
        let s = PatternSummary { mean: v[0], sigma: v[1], min: v[2], max: v[3] };
        if !(s.min <= s.mean && s.mean <= s.max && s.sigma >= 0.0) {
            return Err(Error::malformed(at, "need min <= mean <= max and sigma >= 0"));
        }
        if out.insert(key.clone(), s).is_some() {
            return Err(Error::malformed(at, format!("duplicate pattern {key}")));
        }
    }
    Ok(out)
}
