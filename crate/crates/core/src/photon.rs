//! Pattern-conditioned intensity distributions, photon-number statistics and
//! state overlaps.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::kv::parse_kv;
use crate::quadrature::scaled_rule;
use crate::setting::{PatternKey, Setting, SettingProbabilities};

/// `e^{-α} α^n / n!`, evaluated in the log domain.
pub fn poisson_pmf(n: u32, alpha: f64) -> Result<f64> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::invalid("alpha", format!("must be a finite value >= 0 (got {alpha})")));
    }
    Ok(pmf(n, alpha))
}

fn ln_factorial(n: u32) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

fn pmf(n: u32, alpha: f64) -> f64 {
    if alpha == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    (-alpha + n as f64 * alpha.ln() - ln_factorial(n)).exp()
}

/// Poisson probabilities for `0..=n_max` at one intensity.
fn pmf_row(n_max: usize, alpha: f64) -> Vec<f64> {
    let mut row = Vec::with_capacity(n_max + 1);
    let mut p = (-alpha).exp();
    row.push(p);
    let mut tiny = false;
    for n in 1..=n_max {
        // The recurrence underflows to zero for tiny α; fall back to logs.
        if tiny || p == 0.0 {
            tiny = true;
            row.push(pmf(n as u32, alpha));
        } else {
            p *= alpha / n as f64;
            row.push(p);
        }
    }
    row
}

/// Gaussian of location `mean` and width `sigma` restricted to
/// `[lower, upper]` and renormalized. A zero width or empty interval gives a
/// point mass at `mean`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedGaussian {
    pub mean: f64,
    pub sigma: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TruncatedGaussian {
    pub fn new(mean: f64, sigma: f64, lower: f64, upper: f64) -> Result<Self> {
        if ![mean, sigma, lower, upper].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("truncated gaussian", "parameters must be finite"));
        }
        if sigma < 0.0 || lower < 0.0 {
            return Err(Error::invalid("truncated gaussian", "sigma and lower bound must be >= 0"));
        }
        if !(lower <= mean && mean <= upper) {
            return Err(Error::invalid(
                "truncated gaussian",
                format!("need lower <= mean <= upper (got {lower}, {mean}, {upper})"),
            ));
        }
        Ok(TruncatedGaussian { mean, sigma, lower, upper })
    }

    pub fn point(mean: f64) -> Result<Self> {
        TruncatedGaussian::new(mean, 0.0, mean, mean)
    }

    pub fn is_point_mass(&self) -> bool {
        self.sigma == 0.0 || self.lower == self.upper
    }

    /// Unnormalized density.
    fn weight(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sigma;
        (-0.5 * z * z).exp()
    }

    pub fn scaled(&self, factor: f64) -> TruncatedGaussian {
        TruncatedGaussian {
            mean: self.mean * factor,
            sigma: self.sigma * factor,
            lower: self.lower * factor,
            upper: self.upper * factor,
        }
    }
}

/// Photon-number cutoff and quadrature controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecurityConfig {
    pub n_cut: usize,
    /// Largest Gauss-Legendre order tried before giving up.
    pub quadrature_nodes: usize,
    pub quadrature_tol: f64,
}

impl Default for SecurityConfig {
    fn default() -> Self {
        SecurityConfig {
            n_cut: 10,
            quadrature_nodes: 1024,
            quadrature_tol: 1e-10,
        }
    }
}

impl SecurityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cut < 1 {
            return Err(Error::invalid("n_cut", "must be >= 1"));
        }
        if !(self.quadrature_tol > 0.0) {
            return Err(Error::invalid("quadrature_tol", "must be positive"));
        }
        if self.quadrature_nodes < 8 {
            return Err(Error::invalid("quadrature_nodes", "must be >= 8"));
        }
        Ok(())
    }
}

const START_ORDER: usize = 8;

/// `p(n | tg)` for `n = 0..=n_max`, all from one quadrature rule whose order
/// doubles until every entry is stable to `quadrature_tol`.
pub fn photon_distribution(tg: &TruncatedGaussian, n_max: usize, cfg: &SecurityConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if tg.is_point_mass() {
        return Ok(pmf_row(n_max, tg.mean));
    }
    let eval = |order: usize| {
        let rule = scaled_rule(order, tg.lower, tg.upper);
        let mut acc = vec![0.0; n_max + 1];
        let mut norm = 0.0;
        for (x, w) in rule {
            let g = w * tg.weight(x);
            norm += g;
            for (a, p) in acc.iter_mut().zip(pmf_row(n_max, x)) {
                *a += g * p;
            }
        }
        acc.iter_mut().for_each(|a| *a /= norm);
        acc
    };
    let mut order = START_ORDER;
    let mut prev = eval(order);
    let mut change = f64::INFINITY;
    while order * 2 <= cfg.quadrature_nodes {
        order *= 2;
        let next = eval(order);
        change = next
            .iter()
            .zip(&prev)
            .map(|(a, b)| if *a == *b { 0.0 } else { (a - b).abs() / a.abs().max(b.abs()) })
            .fold(0.0, f64::max);
        prev = next;
        if change <= cfg.quadrature_tol {
            return Ok(prev.into_iter().map(|p| p.clamp(0.0, 1.0)).collect());
        }
    }
    Err(Error::Quadrature { nodes: order, change })
}

pub fn photon_number_prob(n: usize, tg: &TruncatedGaussian, cfg: &SecurityConfig) -> Result<f64> {
    Ok(photon_distribution(tg, n, cfg)?[n])
}

/// `(δ⁻, δ⁺)` such that the support is `[a(1-δ⁻), a(1+δ⁺)]`. For a zero
/// nominal the deviations are absolute photon numbers and `absolute` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deviations {
    pub minus: f64,
    pub plus: f64,
    pub absolute: bool,
}

pub fn derive_deviations(tg: &TruncatedGaussian, nominal: f64) -> Result<Deviations> {
    if nominal < 0.0 || !nominal.is_finite() {
        return Err(Error::invalid("nominal", "must be >= 0"));
    }
    if nominal == 0.0 {
        return Ok(Deviations {
            minus: -tg.lower,
            plus: tg.upper,
            absolute: true,
        });
    }
    Ok(Deviations {
        minus: 1.0 - tg.lower / nominal,
        plus: tg.upper / nominal - 1.0,
        absolute: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensitySetting {
    pub setting: Setting,
    pub nominal: f64,
    pub probability: f64,
}

/// Pattern-conditioned intensity model of correlation length `xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationModel {
    xi: usize,
    settings: [IntensitySetting; 3],
    tg: BTreeMap<PatternKey, TruncatedGaussian>,
}

impl CorrelationModel {
    pub fn new(
        xi: usize,
        settings: Vec<IntensitySetting>,
        tg: BTreeMap<PatternKey, TruncatedGaussian>,
    ) -> Result<Self> {
        let mut ordered: [Option<IntensitySetting>; 3] = [None; 3];
        for s in settings {
            ordered[s.setting.index()] = Some(s);
        }
        let settings = match ordered {
            [Some(s), Some(d), Some(v)] => [s, d, v],
            _ => return Err(Error::IncompleteModel("each of S, D, V needs a setting".into())),
        };
        SettingProbabilities::new(settings[0].probability, settings[1].probability, settings[2].probability)?;
        let [mu, nu, omega] = settings.map(|s| s.nominal);
        if !(mu > nu && nu > omega && omega >= 0.0) {
            return Err(Error::invalid(
                "nominal intensities",
                format!("need S > D > V >= 0 (got {mu}, {nu}, {omega})"),
            ));
        }
        for key in PatternKey::all_of_length(xi + 1) {
            if !tg.contains_key(&key) {
                return Err(Error::IncompleteModel(format!("pattern {key} missing at xi = {xi}")));
            }
        }
        let tg = tg.into_iter().filter(|(k, _)| k.len() == xi + 1).collect();
        Ok(CorrelationModel { xi, settings, tg })
    }

    /// Every pattern shares its setting's distribution.
    pub fn uncorrelated(xi: usize, settings: Vec<IntensitySetting>, per_setting: [TruncatedGaussian; 3]) -> Result<Self> {
        let tg = PatternKey::all_of_length(xi + 1)
            .into_iter()
            .map(|k| {
                let a = k.current().expect("non-empty key");
                (k, per_setting[a.index()])
            })
            .collect();
        CorrelationModel::new(xi, settings, tg)
    }

    /// Point masses at the nominal intensities.
    pub fn point_masses(xi: usize, settings: Vec<IntensitySetting>) -> Result<Self> {
        let mut per = [TruncatedGaussian::point(0.0)?; 3];
        for s in &settings {
            per[s.setting.index()] = TruncatedGaussian::point(s.nominal)?;
        }
        CorrelationModel::uncorrelated(xi, settings, per)
    }

    pub fn xi(&self) -> usize {
        self.xi
    }

    pub fn settings(&self) -> &[IntensitySetting; 3] {
        &self.settings
    }

    pub fn setting(&self, a: Setting) -> &IntensitySetting {
        &self.settings[a.index()]
    }

    pub fn probabilities(&self) -> SettingProbabilities {
        SettingProbabilities::new(
            self.settings[0].probability,
            self.settings[1].probability,
            self.settings[2].probability,
        )
        .expect("validated on construction")
    }

    pub fn tg(&self, key: &PatternKey) -> Result<&TruncatedGaussian> {
        self.tg
            .get(key)
            .ok_or_else(|| Error::IncompleteModel(format!("no distribution for pattern {key}")))
    }

    pub fn patterns(&self) -> impl Iterator<Item = (&PatternKey, &TruncatedGaussian)> {
        self.tg.iter()
    }

    /// All intensities multiplied by `10^{-attenuation_db/10}`.
    pub fn attenuated(&self, attenuation_db: f64) -> CorrelationModel {
        let f = 10f64.powf(-attenuation_db / 10.0);
        let mut out = self.clone();
        for s in &mut out.settings {
            s.nominal *= f;
        }
        for tg in out.tg.values_mut() {
            *tg = tg.scaled(f);
        }
        out
    }

    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model.xi = {}", self.xi);
        for st in &self.settings {
            let _ = writeln!(s, "setting.{}.nominal = {:?}", st.setting, st.nominal);
            let _ = writeln!(s, "setting.{}.prob = {:?}", st.setting, st.probability);
        }
        for (k, t) in &self.tg {
            let _ = writeln!(s, "pattern.{k} = {:?} {:?} {:?} {:?}", t.mean, t.sigma, t.lower, t.upper);
        }
        s
    }

    pub fn from_kv_str(text: &str, origin: &str) -> Result<Self> {
        let mut xi = None;
        let mut nominal = [None; 3];
        let mut prob = [None; 3];
        let mut tg = BTreeMap::new();
        for e in parse_kv(text, origin)? {
            let at = format!("{origin}:{}", e.line);
            let num = |v: &str| -> Result<f64> {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::malformed(at.clone(), format!("`{v}` is not a number")))
            };
            let parts: Vec<&str> = e.key.split('.').collect();
            match parts.as_slice() {
                ["model", "xi"] => {
                    xi = Some(
                        e.value
                            .parse::<usize>()
                            .map_err(|_| Error::malformed(at.clone(), "xi must be a non-negative integer"))?,
                    )
                }
                ["setting", letter, field] => {
                    let a = letter
                        .parse::<PatternKey>()
                        .ok()
                        .filter(|k| k.len() == 1)
                        .and_then(|k| k.current())
                        .ok_or_else(|| Error::malformed(at.clone(), format!("unknown setting `{letter}`")))?;
                    match *field {
                        "nominal" => nominal[a.index()] = Some(num(&e.value)?),
                        "prob" => prob[a.index()] = Some(num(&e.value)?),
                        _ => return Err(Error::malformed(at, format!("unknown key `{}`", e.key))),
                    }
                }
                ["pattern", label] => {
                    let key: PatternKey = label.parse().map_err(|_| Error::malformed(at.clone(), "bad pattern label"))?;
                    let v: Vec<f64> = e.value.split_whitespace().map(num).collect::<Result<_>>()?;
                    if v.len() != 4 {
                        return Err(Error::malformed(at, "expected `mean sigma min max`"));
                    }
                    let t = TruncatedGaussian::new(v[0], v[1], v[2], v[3])
                        .map_err(|err| Error::malformed(at, err.to_string()))?;
                    tg.insert(key, t);
                }
                _ => return Err(Error::malformed(at, format!("unknown key `{}`", e.key))),
            }
        }
        let xi = xi.ok_or_else(|| Error::malformed(origin, "missing `model.xi`"))?;
        let defaults = SettingProbabilities::default();
        let mut settings = Vec::new();
        for a in Setting::ALL {
            let nominal = match nominal[a.index()] {
                Some(v) => v,
                None => tg
                    .get(&PatternKey::single(a))
                    .map(|t: &TruncatedGaussian| t.mean)
                    .ok_or_else(|| Error::malformed(origin, format!("missing `setting.{a}.nominal`")))?,
            };
            settings.push(IntensitySetting {
                setting: a,
                nominal,
                probability: prob[a.index()].unwrap_or(defaults.get(a)),
            });
        }
        CorrelationModel::new(xi, settings, tg)
    }
}

/// Cached `p(n | pattern)` for `n = 0..=n_cut` over every pattern of a model.
#[derive(Debug, Clone)]
pub struct PhotonTables {
    n_cut: usize,
    rows: BTreeMap<PatternKey, Vec<f64>>,
}

impl PhotonTables {
    pub fn new(model: &CorrelationModel, cfg: &SecurityConfig) -> Result<Self> {
        cfg.validate()?;
        let rows = model
            .patterns()
            .map(|(k, tg)| Ok((k.clone(), photon_distribution(tg, cfg.n_cut, cfg)?)))
            .collect::<Result<_>>()?;
        Ok(PhotonTables { n_cut: cfg.n_cut, rows })
    }

    pub fn n_cut(&self) -> usize {
        self.n_cut
    }

    pub fn row(&self, key: &PatternKey) -> Result<&[f64]> {
        self.rows
            .get(key)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::IncompleteModel(format!("no photon statistics for {key}")))
    }

    /// Probability mass beyond the cutoff.
    pub fn tail(&self, key: &PatternKey) -> Result<f64> {
        Ok((1.0 - self.row(key)?.iter().sum::<f64>()).max(0.0))
    }
}

/// Overlap bound between the states prepared with settings `a` and `b` after
/// the conditioning record `c` (length `xi`). The rounds that follow carry
/// information about the current setting through their intensities; for each
/// of the next `xi` rounds the truncated photon-number fidelity of the two
/// conditional distributions enters as a product, averaged over the future
/// settings, and the result is squared.
pub fn overlap(a: Setting, b: Setting, c: &PatternKey, model: &CorrelationModel, cfg: &SecurityConfig) -> Result<f64> {
    overlap_cached(a, b, c, model, &PhotonTables::new(model, cfg)?)
}

pub fn overlap_cached(
    a: Setting,
    b: Setting,
    c: &PatternKey,
    model: &CorrelationModel,
    tables: &PhotonTables,
) -> Result<f64> {
    let xi = model.xi();
    if c.len() != xi {
        return Err(Error::invalid(
            "conditioning pattern",
            format!("length {} does not match xi = {xi}", c.len()),
        ));
    }
    if a == b {
        return Ok(1.0);
    }
    let probs = model.probabilities();
    let mut total = 0.0;
    let mut weights = 0.0;
    for future in PatternKey::all_of_length(xi) {
        let weight = probs.of_pattern(&future);
        let mut product = 1.0;
        for j in 1..=xi {
            let tail = &future.settings()[..j];
            let with = |x: Setting| {
                let mut v = c.settings().to_vec();
                v.push(x);
                v.extend_from_slice(tail);
                PatternKey::new(v).drop_oldest(j)
            };
            let (ka, kb) = (with(a), with(b));
            if model.tg(&ka)? == model.tg(&kb)? {
                continue;
            }
            let (ra, rb) = (tables.row(&ka)?, tables.row(&kb)?);
            product *= ra.iter().zip(rb).map(|(p, q)| (p * q).sqrt()).sum::<f64>();
        }
        total += weight * product;
        weights += weight;
    }
    // Dividing by the summed weights keeps τ = 1 exact when nothing differs.
    let t = total / weights;
    Ok((t * t).clamp(0.0, 1.0))
}

/// All overlaps `τ[a, b, c]` for ordered pairs `a ≠ b`.
pub fn overlap_table(
    model: &CorrelationModel,
    tables: &PhotonTables,
) -> Result<BTreeMap<(Setting, Setting, PatternKey), f64>> {
    let mut out = BTreeMap::new();
    for c in PatternKey::all_of_length(model.xi()) {
        for a in Setting::ALL {
            for b in Setting::ALL {
                if a != b {
                    out.insert((a, b, c.clone()), overlap_cached(a, b, &c, model, tables)?);
                }
            }
        }
    }
    Ok(out)
}
