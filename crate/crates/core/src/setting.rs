//! Intensity settings and setting patterns.
//!
//! A pattern is written oldest setting first, so `SD` is a decoy pulse that
//! follows a signal pulse. The analyzed pulse is always the last letter.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Setting {
    /// Signal, μ.
    Signal,
    /// Decoy, ν.
    Decoy,
    /// Vacuum, ω.
    Vacuum,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::Signal, Setting::Decoy, Setting::Vacuum];

    pub fn index(self) -> usize {
        match self {
            Setting::Signal => 0,
            Setting::Decoy => 1,
            Setting::Vacuum => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Setting> {
        Setting::ALL.get(index).copied()
    }

    pub fn letter(self) -> char {
        match self {
            Setting::Signal => 'S',
            Setting::Decoy => 'D',
            Setting::Vacuum => 'V',
        }
    }

    pub fn from_letter(c: char) -> Option<Setting> {
        match c.to_ascii_uppercase() {
            'S' => Some(Setting::Signal),
            'D' => Some(Setting::Decoy),
            'V' => Some(Setting::Vacuum),
            _ => None,
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Ordered tuple of settings, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PatternKey(Vec<Setting>);

impl PatternKey {
    pub fn new(settings: Vec<Setting>) -> Self {
        PatternKey(settings)
    }

    pub fn single(setting: Setting) -> Self {
        PatternKey(vec![setting])
    }

    pub fn empty() -> Self {
        PatternKey(Vec::new())
    }

    pub fn settings(&self) -> &[Setting] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Correlation length this key describes (`len - 1`).
    pub fn xi(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    /// Setting of the analyzed pulse.
    pub fn current(&self) -> Option<Setting> {
        self.0.last().copied()
    }

    /// The preceding settings, i.e. the conditioning record.
    pub fn history(&self) -> PatternKey {
        match self.0.split_last() {
            Some((_, rest)) => PatternKey(rest.to_vec()),
            None => PatternKey::empty(),
        }
    }

    /// Appends `setting` as the newest element.
    pub fn then(&self, setting: Setting) -> PatternKey {
        let mut v = self.0.clone();
        v.push(setting);
        PatternKey(v)
    }

    /// Drops the oldest `n` elements.
    pub fn drop_oldest(&self, n: usize) -> PatternKey {
        PatternKey(self.0[n.min(self.0.len())..].to_vec())
    }

    /// All `3^len` keys of the given length in table order (S < D < V,
    /// oldest setting varying slowest).
    pub fn all_of_length(len: usize) -> Vec<PatternKey> {
        let mut out = vec![PatternKey::empty()];
        for _ in 0..len {
            out = out
                .into_iter()
                .flat_map(|k| Setting::ALL.into_iter().map(move |s| k.then(s)))
                .collect();
        }
        out
    }
}

impl Ord for PatternKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .len()
            .cmp(&other.0.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for PatternKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for PatternKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.0 {
            write!(f, "{}", s.letter())?;
        }
        Ok(())
    }
}

impl FromStr for PatternKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::malformed("pattern", "empty pattern label"));
        }
        s.chars()
            .map(|c| {
                Setting::from_letter(c).ok_or_else(|| {
                    Error::malformed("pattern", format!("unknown setting letter `{c}` in `{s}`"))
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(PatternKey)
    }
}

/// Per-setting selection probabilities `p_a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SettingProbabilities([f64; 3]);

impl SettingProbabilities {
    pub fn new(signal: f64, decoy: f64, vacuum: f64) -> Result<Self> {
        let p = [signal, decoy, vacuum];
        if p.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::invalid("setting probabilities", "must all be positive"));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "setting probabilities",
                format!("must sum to 1 (got {sum})"),
            ));
        }
        Ok(SettingProbabilities(p))
    }

    pub fn get(&self, s: Setting) -> f64 {
        self.0[s.index()]
    }

    /// Probability of a whole setting record, assuming independent choices.
    pub fn of_pattern(&self, key: &PatternKey) -> f64 {
        key.settings().iter().map(|&s| self.get(s)).product()
    }
}

impl Default for SettingProbabilities {
    fn default() -> Self {
        SettingProbabilities([0.7, 0.2, 0.1])
    }
}
