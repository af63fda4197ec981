//! Instrument-noise removal for segmented pulses.
//!
//! Bright pulses (signal and decoy) of one setting are stacked into a pulse
//! matrix and projected onto their leading singular subspace. Vacuum pulses
//! carry too little signal to separate from noise that way and are smoothed
//! individually with a Savitzky-Golay filter instead.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::setting::Setting;
use crate::trace::{PulseWindow, SampledTrace};

/// `n` pulses by `m` samples; row `i` is pulse `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseMatrix(DMatrix<f64>);

impl PulseMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::invalid("pulse matrix", "needs at least one row and one column"));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                location: "pulse matrix".into(),
            });
        }
        Ok(PulseMatrix(matrix))
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::invalid("pulse matrix", "rows differ in length"));
        }
        PulseMatrix::new(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.0.row(i).iter().copied().collect()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterConfig {
    /// Number of leading singular values kept by the subspace filter.
    pub svd_keep: usize,
    pub sg_degree: usize,
    pub sg_window: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            svd_keep: 5,
            sg_degree: 3,
            sg_window: 39,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.svd_keep == 0 {
            return Err(Error::invalid("svd_keep", "must be at least 1"));
        }
        validate_sg(self.sg_degree, self.sg_window)
    }
}

fn validate_sg(degree: usize, window: usize) -> Result<()> {
    if window % 2 == 0 {
        return Err(Error::invalid("sg_window", format!("must be odd (got {window})")));
    }
    if degree >= window {
        return Err(Error::invalid("sg_degree", "must be smaller than the window"));
    }
    Ok(())
}

/// Thin singular value decomposition `M = U diag(s) Vᵀ` with `s` descending.
///
/// `left` is `n x r` and `right` is `m x r` with `r = min(n, m)`: the pulse
/// index runs along the rows of `left`, the time index along the rows of
/// `right`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub left: DMatrix<f64>,
    pub singular: Vec<f64>,
    pub right: DMatrix<f64>,
}

impl Svd {
    /// `U diag(s) Vᵀ` using only the first `keep` singular values.
    pub fn reconstruct(&self, keep: usize) -> DMatrix<f64> {
        let k = keep.min(self.singular.len());
        let u = self.left.columns(0, k);
        let v = self.right.columns(0, k);
        let s = DMatrix::from_diagonal(&DVector::from_column_slice(&self.singular[..k]));
        u * s * v.transpose()
    }
}

pub fn svd_decompose(matrix: &PulseMatrix) -> Result<Svd> {
    let svd = nalgebra::SVD::try_new(matrix.0.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Solver("SVD did not converge".into()))?;
    let left = svd.u.ok_or_else(|| Error::Solver("SVD returned no left vectors".into()))?;
    let right = svd
        .v_t
        .ok_or_else(|| Error::Solver("SVD returned no right vectors".into()))?
        .transpose();
    Ok(Svd {
        left,
        singular: svd.singular_values.iter().copied().collect(),
        right,
    })
}

/// Best rank-`keep` approximation of `matrix` in the Frobenius norm.
pub fn svd_filter(matrix: &PulseMatrix, keep: usize) -> Result<PulseMatrix> {
    let max = matrix.nrows().min(matrix.ncols());
    if keep == 0 || keep > max {
        return Err(Error::invalid("svd_keep", format!("must lie in 1..={max} (got {keep})")));
    }
    let svd = svd_decompose(matrix)?;
    Ok(PulseMatrix(svd.reconstruct(keep)))
}

/// Weights that evaluate, at offset 0, the least-squares polynomial of
/// `degree` fitted to samples at the given integer offsets.
fn sg_weights(offsets: &[i64], degree: usize) -> Vec<f64> {
    let scale = offsets.iter().map(|o| o.unsigned_abs()).max().unwrap_or(1).max(1) as f64;
    let cols = degree + 1;
    let x = DMatrix::from_fn(offsets.len(), cols, |i, j| (offsets[i] as f64 / scale).powi(j as i32));
    let gram = x.transpose() * &x;
    let mut e0 = DVector::zeros(cols);
    e0[0] = 1.0;
    let c = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&e0),
        None => gram.lu().solve(&e0).unwrap_or_else(|| DVector::zeros(cols)),
    };
    (x * c).iter().copied().collect()
}

/// Savitzky-Golay smoothing: each output is the center value of the
/// least-squares polynomial of `degree` over a `window`-sample neighborhood.
///
/// Near the ends the neighborhood is truncated to the available samples
/// (one-sided fit), so the output has the input's length. If a truncated
/// neighborhood has too few points for the requested degree, the degree is
/// lowered for that point only.
pub fn sg_filter(trace: &[f64], degree: usize, window: usize) -> Result<Vec<f64>> {
    validate_sg(degree, window)?;
    let n = trace.len();
    if n < window {
        return Err(Error::invalid(
            "sg_window",
            format!("trace of {n} samples is shorter than the window ({window})"),
        ));
    }
    let half = (window / 2) as i64;
    let centered: Vec<i64> = (-half..=half).collect();
    let interior = sg_weights(&centered, degree);
    let mut out = vec![0.0; n];
    for (i, dst) in out.iter_mut().enumerate() {
        let i = i as i64;
        let lo = (i - half).max(0);
        let hi = (i + half).min(n as i64 - 1);
        if hi - lo + 1 == window as i64 {
            *dst = interior
                .iter()
                .zip(&trace[lo as usize..=hi as usize])
                .map(|(w, v)| w * v)
                .sum();
        } else {
            let offsets: Vec<i64> = (lo - i..=hi - i).collect();
            let d = degree.min(offsets.len() - 1);
            let w = sg_weights(&offsets, d);
            *dst = w
                .iter()
                .zip(&trace[lo as usize..=hi as usize])
                .map(|(w, v)| w * v)
                .sum();
        }
    }
    Ok(out)
}

/// Result of filtering every pulse of a trace.
#[derive(Debug, Clone)]
pub struct FilteredPulses {
    /// Input trace with every pulse window replaced by its filtered version.
    pub trace: SampledTrace,
    /// Singular-value spectrum of each setting routed through the SVD filter.
    pub spectra: BTreeMap<Setting, Vec<f64>>,
}

/// Routes signal and decoy pulses through the subspace filter and vacuum
/// pulses through the Savitzky-Golay filter.
pub fn filter_pulses(
    trace: &SampledTrace,
    windows: &[PulseWindow],
    settings: &[Setting],
    config: &FilterConfig,
) -> Result<FilteredPulses> {
    config.validate()?;
    if windows.len() != settings.len() {
        return Err(Error::invalid(
            "settings",
            format!("{} settings for {} pulses", settings.len(), windows.len()),
        ));
    }
    let mut replaced = Vec::with_capacity(windows.len());
    let mut spectra = BTreeMap::new();
    for setting in [Setting::Signal, Setting::Decoy] {
        let members: Vec<PulseWindow> = windows
            .iter()
            .zip(settings)
            .filter(|(_, &s)| s == setting)
            .map(|(w, _)| *w)
            .collect();
        if members.is_empty() {
            continue;
        }
        let rows = members.iter().map(|&w| trace.window(w)).collect::<Result<Vec<_>>>()?;
        let matrix = PulseMatrix::from_rows(&rows)?;
        let svd = svd_decompose(&matrix)?;
        let keep = config.svd_keep.min(svd.singular.len());
        let filtered = svd.reconstruct(keep);
        for (i, w) in members.into_iter().enumerate() {
            replaced.push((w, filtered.row(i).iter().copied().collect()));
        }
        spectra.insert(setting, svd.singular);
    }
    for (w, _) in windows.iter().zip(settings).filter(|(_, &s)| s == Setting::Vacuum) {
        let raw = trace.window(*w)?;
        replaced.push((*w, sg_filter(raw, config.sg_degree, config.sg_window)?));
    }
    Ok(FilteredPulses {
        trace: trace.with_windows_replaced(&replaced)?,
        spectra,
    })
}
