//! Cauchy-Schwarz envelopes and the decoy-state linear programs that bound
//! single-photon counts and errors of the signal setting.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::lp::{BoundResult, CutRound, Direction, LinearConstraint, LinearProgram, LpSolver, Sense};
use crate::photon::{overlap_table, CorrelationModel, PhotonTables, SecurityConfig};
use crate::setting::{PatternKey, Setting};

/// Range reference values are clamped to before forming tangents.
pub const REFERENCE_CLAMP: f64 = 1e-6;

fn check_unit(name: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must lie in [0, 1] (got {v})")))
    }
}

/// `(G₋, G₊)`: the range a yield may take for a second state whose overlap
/// with the first is `tau`, given the first state's yield `y`.
pub fn cs_envelope(y: f64, tau: f64) -> Result<(f64, f64)> {
    check_unit("y", y)?;
    check_unit("tau", tau)?;
    Ok(envelope(y, tau))
}

fn envelope(y: f64, tau: f64) -> (f64, f64) {
    let base = y + (1.0 - tau) * (1.0 - 2.0 * y);
    let root = 2.0 * (tau * (1.0 - tau) * y * (1.0 - y)).sqrt();
    let lower = if y > 1.0 - tau { (base - root).clamp(0.0, 1.0) } else { 0.0 };
    let upper = if y < tau { (base + root).clamp(0.0, 1.0) } else { 1.0 };
    (lower.min(upper), upper)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tangent {
    pub slope: f64,
    pub intercept: f64,
}

impl Tangent {
    pub fn at(&self, y: f64) -> f64 {
        self.slope * y + self.intercept
    }
}

/// Tangent to `G₊` (upper, concave) or `G₋` (lower, convex) at `y_ref`. The
/// upper tangent lies above `G₊` and the lower one below `G₋` on all of
/// [0, 1], so either gives a linear relaxation of the envelope.
pub fn linearize_cs(y_ref: f64, tau: f64, side: Side) -> Result<Tangent> {
    check_unit("y_ref", y_ref)?;
    check_unit("tau", tau)?;
    Ok(tangent(y_ref, tau, side))
}

fn tangent(y_ref: f64, tau: f64, side: Side) -> Tangent {
    if tau >= 1.0 {
        return Tangent { slope: 1.0, intercept: 0.0 };
    }
    let y = y_ref.clamp(REFERENCE_CLAMP, 1.0 - REFERENCE_CLAMP);
    let (lo, hi) = envelope(y, tau);
    let skew = (tau * (1.0 - tau)).sqrt() * (1.0 - 2.0 * y) / (y * (1.0 - y)).sqrt();
    let (value, slope) = match side {
        Side::Upper if y < tau => (hi, 2.0 * tau - 1.0 + skew),
        Side::Upper => (1.0, 0.0),
        Side::Lower if y > 1.0 - tau => (lo, 2.0 * tau - 1.0 - skew),
        Side::Lower => (0.0, 0.0),
    };
    Tangent {
        slope,
        intercept: value - slope * y,
    }
}

/// Observed gains of one basis, keyed by the full setting record (history
/// then current setting). Values are per round and include the basis and
/// setting selection probabilities.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservedGains {
    pub basis_probability: f64,
    pub gain: BTreeMap<PatternKey, f64>,
    pub error_gain: BTreeMap<PatternKey, f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GainSet {
    pub z: ObservedGains,
    pub x: ObservedGains,
}

/// Per-pattern yield and error references, indexed by photon number.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReferenceParameters {
    pub yields: BTreeMap<PatternKey, Vec<f64>>,
    pub errors: BTreeMap<PatternKey, Vec<f64>>,
}

impl ReferenceParameters {
    pub fn validate(&self) -> Result<()> {
        for v in self.yields.values().chain(self.errors.values()).flatten() {
            check_unit("reference", *v)?;
        }
        Ok(())
    }

    /// Every value multiplied by `factor`, clamped to [0, 1].
    pub fn scaled(&self, factor: f64) -> ReferenceParameters {
        let f = |m: &BTreeMap<PatternKey, Vec<f64>>| {
            m.iter()
                .map(|(k, v)| (k.clone(), v.iter().map(|x| (x * factor).clamp(0.0, 1.0)).collect()))
                .collect()
        };
        ReferenceParameters {
            yields: f(&self.yields),
            errors: f(&self.errors),
        }
    }

    fn get(&self, errors: bool, key: &PatternKey, n: usize) -> Result<f64> {
        let m = if errors { &self.errors } else { &self.yields };
        m.get(key)
            .and_then(|v| v.get(n))
            .copied()
            .ok_or_else(|| Error::invalid("references", format!("no value for pattern {key}, n = {n}")))
    }
}

/// Photon statistics and overlaps of a model, computed once and shared by
/// every program built from it.
#[derive(Debug, Clone)]
pub struct SecurityContext {
    pub model: CorrelationModel,
    pub config: SecurityConfig,
    pub tables: PhotonTables,
    pub overlaps: BTreeMap<(Setting, Setting, PatternKey), f64>,
}

impl SecurityContext {
    pub fn new(model: CorrelationModel, config: SecurityConfig) -> Result<Self> {
        let tables = PhotonTables::new(&model, &config)?;
        let overlaps = overlap_table(&model, &tables)?;
        Ok(SecurityContext { model, config, tables, overlaps })
    }

    /// Same photon statistics with every overlap replaced.
    pub fn with_overlaps(&self, f: impl Fn(Setting, Setting, &PatternKey, f64) -> f64) -> SecurityContext {
        let mut out = self.clone();
        for ((a, b, c), t) in out.overlaps.iter_mut() {
            *t = f(*a, *b, c, *t).clamp(0.0, 1.0);
        }
        out
    }

    pub fn overlap(&self, a: Setting, b: Setting, c: &PatternKey) -> f64 {
        if a == b {
            1.0
        } else {
            self.overlaps[&(a, b, c.clone())]
        }
    }

    /// Records `c` of length ξ, table order.
    pub fn histories(&self) -> Vec<PatternKey> {
        PatternKey::all_of_length(self.model.xi())
    }

    pub fn patterns(&self) -> Vec<PatternKey> {
        PatternKey::all_of_length(self.model.xi() + 1)
    }
}

/// Variable indices of one program.
#[derive(Debug, Clone, PartialEq)]
pub struct YieldVariables {
    pub n_cut: usize,
    /// `y[pattern][n]`.
    pub yields: BTreeMap<PatternKey, Vec<usize>>,
    /// `h[pattern][n]`, present only when errors are modeled.
    pub errors: Option<BTreeMap<PatternKey, Vec<usize>>>,
}

impl YieldVariables {
    fn extract(&self, solution: &[f64]) -> ReferenceParameters {
        let pick = |m: &BTreeMap<PatternKey, Vec<usize>>| {
            m.iter()
                .map(|(k, v)| (k.clone(), v.iter().map(|&j| solution[j].clamp(0.0, 1.0)).collect()))
                .collect()
        };
        ReferenceParameters {
            yields: pick(&self.yields),
            errors: self.errors.as_ref().map(pick).unwrap_or_default(),
        }
    }
}

fn normalized(ctx: &SecurityContext, basis_probability: f64, key: &PatternKey, value: f64, what: &str) -> Result<f64> {
    let a = key.current().expect("non-empty pattern");
    let p = ctx.model.probabilities();
    let norm = basis_probability * basis_probability * p.get(a) * p.of_pattern(&key.history());
    let g = value / norm;
    if !(value >= 0.0) || !g.is_finite() {
        return Err(Error::InconsistentGains(format!("{what} for {key} is {value}")));
    }
    if g > 1.0 + 1e-9 {
        return Err(Error::InconsistentGains(format!(
            "{what} for {key} exceeds its normalizer ({value:e} > {norm:e})"
        )));
    }
    Ok(g.min(1.0))
}

fn add_variables(lp: &mut LinearProgram, ctx: &SecurityContext, cuts: &[ReferenceParameters], errors: bool) -> BTreeMap<PatternKey, Vec<usize>> {
    let mut out = BTreeMap::new();
    let tag = if errors { "h" } else { "y" };
    for key in ctx.patterns() {
        let mut ids = Vec::with_capacity(ctx.config.n_cut + 1);
        for n in 0..=ctx.config.n_cut {
            let id = lp.add_variable(format!("{tag}_{n}_{key}"), 0.0, 1.0, 0.0);
            let hint = cuts
                .iter()
                .filter_map(|r| r.get(errors, &key, n).ok())
                .fold(0.0, f64::max);
            lp.set_scale(id, if hint > 0.0 { hint.max(1e-6) } else { 1.0 });
            ids.push(id);
        }
        out.insert(key, ids);
    }
    out
}

/// Two-sided constraints tying each observed (error) gain to the
/// photon-number-resolved variables:
/// `Σ p_n v_n ≤ ĝ ≤ Σ p_n v_n + (1 - Σ p_n)`, with `ĝ` the gain divided by the
/// selection probabilities.
pub fn build_decoy_constraints(
    ctx: &SecurityContext,
    observed: &BTreeMap<PatternKey, f64>,
    basis_probability: f64,
    vars: &BTreeMap<PatternKey, Vec<usize>>,
    what: &str,
) -> Result<Vec<LinearConstraint>> {
    let mut out = Vec::new();
    for key in ctx.patterns() {
        let value = *observed
            .get(&key)
            .ok_or_else(|| Error::MissingPattern(format!("{what} {key}")))?;
        let g = normalized(ctx, basis_probability, &key, value, what)?;
        let row = ctx.tables.row(&key)?;
        let tail = ctx.tables.tail(&key)?;
        let terms: Vec<(usize, f64)> = vars[&key].iter().zip(row).map(|(&j, &p)| (j, p)).collect();
        out.push(LinearConstraint::new(terms.clone(), Sense::Le, g));
        if g - tail > 0.0 {
            out.push(LinearConstraint::new(terms, Sense::Ge, g - tail));
        }
    }
    Ok(out)
}

/// One envelope relation: the variable `target` is bounded by `G±` of the
/// variable `source`, both at photon number `n`.
#[derive(Debug, Clone)]
struct EnvelopePair {
    source: usize,
    target: usize,
    tau: f64,
    key: PatternKey,
    n: usize,
    errors: bool,
}

/// Every ordered pair of settings sharing a record and a photon number.
fn envelope_pairs(ctx: &SecurityContext, vars: &BTreeMap<PatternKey, Vec<usize>>, errors: bool) -> Vec<EnvelopePair> {
    let mut out = Vec::new();
    for c in ctx.histories() {
        for a in Setting::ALL {
            for b in Setting::ALL {
                if a == b {
                    continue;
                }
                let tau = ctx.overlap(a, b, &c);
                let (ka, kb) = (c.then(a), c.then(b));
                for n in 0..=ctx.config.n_cut {
                    out.push(EnvelopePair {
                        source: vars[&ka][n],
                        target: vars[&kb][n],
                        tau,
                        key: ka.clone(),
                        n,
                        errors,
                    });
                }
            }
        }
    }
    out
}

fn tangent_row(pair: &EnvelopePair, y_ref: f64, side: Side) -> Option<LinearConstraint> {
    let t = tangent(y_ref, pair.tau, side);
    let (trivial, sense) = match side {
        Side::Upper => (t.slope == 0.0 && t.intercept >= 1.0, Sense::Le),
        Side::Lower => (t.slope == 0.0 && t.intercept <= 0.0, Sense::Ge),
    };
    (!trivial).then(|| LinearConstraint::new(vec![(pair.target, 1.0), (pair.source, -t.slope)], sense, t.intercept))
}

/// Tangent rows at every reference set, skipping repeats.
fn cs_constraints(pairs: &[EnvelopePair], cuts: &[ReferenceParameters]) -> Result<Vec<LinearConstraint>> {
    let mut out = Vec::new();
    for pair in pairs {
        let mut seen: Vec<f64> = Vec::with_capacity(cuts.len());
        for refs in cuts {
            let r = refs.get(pair.errors, &pair.key, pair.n)?;
            if seen.contains(&r) {
                continue;
            }
            seen.push(r);
            out.extend(tangent_row(pair, r, Side::Upper));
            out.extend(tangent_row(pair, r, Side::Lower));
        }
    }
    Ok(out)
}

/// Tangents at `x` for the pairs whose exact envelope `x` violates.
fn violated_cuts(pairs: &[EnvelopePair], x: &[f64]) -> Vec<LinearConstraint> {
    let mut out = Vec::new();
    for pair in pairs {
        let ya = x[pair.source].clamp(0.0, 1.0);
        let yb = x[pair.target];
        let (lo, hi) = envelope(ya, pair.tau);
        let slack = 1e-9 * (hi - lo).max(yb.abs()) + 1e-15;
        if yb > hi + slack {
            out.extend(tangent_row(pair, ya, Side::Upper));
        }
        if yb < lo - slack {
            out.extend(tangent_row(pair, ya, Side::Lower));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    /// Lower bound on signal single-photon counts in the key basis.
    Z1Lower,
    /// Lower bound on signal single-photon counts in the test basis.
    X1Lower,
    /// Upper bound on signal single-photon errors in the test basis.
    E1Upper,
}

/// Assembles the program for one bound.
pub fn build_program(
    ctx: &SecurityContext,
    gains: &GainSet,
    refs: &ReferenceParameters,
    kind: BoundKind,
) -> Result<(LinearProgram, YieldVariables)> {
    build_program_with_cuts(ctx, gains, std::slice::from_ref(refs), kind)
}

/// Same program with the envelope linearized at every reference set in
/// `cuts`. Each tangent is a valid relaxation on its own, so adding more
/// only tightens the bound.
pub fn build_program_with_cuts(
    ctx: &SecurityContext,
    gains: &GainSet,
    cuts: &[ReferenceParameters],
    kind: BoundKind,
) -> Result<(LinearProgram, YieldVariables)> {
    if cuts.is_empty() {
        return Err(Error::invalid("references", "need at least one reference set"));
    }
    for refs in cuts {
        refs.validate()?;
    }
    let (obs, direction, with_errors) = match kind {
        BoundKind::Z1Lower => (&gains.z, Direction::Minimize, false),
        BoundKind::X1Lower => (&gains.x, Direction::Minimize, false),
        BoundKind::E1Upper => (&gains.x, Direction::Maximize, true),
    };
    let q = obs.basis_probability;
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid("basis probability", format!("must lie in (0, 1] (got {q})")));
    }
    let mut lp = LinearProgram::new(direction);
    let y = add_variables(&mut lp, ctx, cuts, false);
    let h = with_errors.then(|| add_variables(&mut lp, ctx, cuts, true));
    let mut constraints = build_decoy_constraints(ctx, &obs.gain, q, &y, "gain")?;
    constraints.extend(cs_constraints(&envelope_pairs(ctx, &y, false), cuts)?);
    if let Some(h) = &h {
        constraints.extend(build_decoy_constraints(ctx, &obs.error_gain, q, h, "error gain")?);
        constraints.extend(cs_constraints(&envelope_pairs(ctx, h, true), cuts)?);
        for (key, hv) in h {
            for (n, &j) in hv.iter().enumerate() {
                constraints.push(LinearConstraint::new(vec![(j, 1.0), (y[key][n], -1.0)], Sense::Le, 0.0));
            }
        }
    }
    for c in constraints {
        lp.add_constraint(c)?;
    }
    let p = ctx.model.probabilities();
    let target = h.as_ref().unwrap_or(&y);
    for c in ctx.histories() {
        let key = c.then(Setting::Signal);
        let weight = q * q * p.get(Setting::Signal) * p.of_pattern(&c) * ctx.tables.row(&key)?[1];
        lp.set_objective(target[&key][1], weight);
    }
    Ok((lp, YieldVariables { n_cut: ctx.config.n_cut, yields: y, errors: h }))
}

pub fn solve_bound(
    ctx: &SecurityContext,
    gains: &GainSet,
    refs: &ReferenceParameters,
    kind: BoundKind,
    solver: &dyn LpSolver,
) -> Result<(BoundResult, YieldVariables)> {
    let (lp, vars) = build_program(ctx, gains, refs, kind)?;
    Ok((solver.solve(&lp)?, vars))
}

pub fn bound_z1_lower(ctx: &SecurityContext, gains: &GainSet, refs: &ReferenceParameters, solver: &dyn LpSolver) -> Result<BoundResult> {
    Ok(solve_bound(ctx, gains, refs, BoundKind::Z1Lower, solver)?.0)
}

pub fn bound_x1_lower(ctx: &SecurityContext, gains: &GainSet, refs: &ReferenceParameters, solver: &dyn LpSolver) -> Result<BoundResult> {
    Ok(solve_bound(ctx, gains, refs, BoundKind::X1Lower, solver)?.0)
}

pub fn bound_e1_upper(ctx: &SecurityContext, gains: &GainSet, refs: &ReferenceParameters, solver: &dyn LpSolver) -> Result<BoundResult> {
    Ok(solve_bound(ctx, gains, refs, BoundKind::E1Upper, solver)?.0)
}

/// Solves with the tangents at `seeds`, then repeatedly adds tangents at the
/// latest optimum for the envelope relations it violates, for at most
/// `rounds` extra solves or until the objective moves by less than `rel_tol`
/// relative. Returns the tightest verified optimum and its variables.
pub fn refine_bound(
    ctx: &SecurityContext,
    gains: &GainSet,
    seeds: &[ReferenceParameters],
    kind: BoundKind,
    solver: &dyn LpSolver,
    rounds: usize,
    rel_tol: f64,
) -> Result<(BoundResult, YieldVariables)> {
    let (lp, vars) = build_program_with_cuts(ctx, gains, seeds, kind)?;
    let mut pairs = envelope_pairs(ctx, &vars.yields, false);
    if let Some(h) = &vars.errors {
        pairs.extend(envelope_pairs(ctx, h, true));
    }
    let mut done = 0;
    let mut last: Option<f64> = None;
    let result = solver.solve_with_cuts(&lp, &mut |round: &CutRound| {
        if let Some(prev) = last {
            if (round.objective - prev).abs() <= rel_tol * prev.abs().max(f64::MIN_POSITIVE) {
                return Vec::new();
            }
        }
        last = Some(round.objective);
        if done == rounds {
            return Vec::new();
        }
        done += 1;
        violated_cuts(&pairs, round.solution)
    })?;
    Ok((result, vars))
}

/// References taken from an optimal solution; `None` for any other status.
pub fn references_from_solution(result: &BoundResult, vars: &YieldVariables) -> Option<ReferenceParameters> {
    result.is_optimal().then(|| vars.extract(&result.solution))
}

/// Index and score of the highest-scoring candidate. Candidates whose
/// evaluation fails or is not finite are skipped.
pub fn select_reference<T>(grid: &[T], mut evaluate: impl FnMut(&T) -> Result<f64>) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    let mut last_err = None;
    for (i, candidate) in grid.iter().enumerate() {
        match evaluate(candidate) {
            Ok(s) if s.is_finite() => {
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((i, s));
                }
            }
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or(Error::Infeasible))
}

/// The previous optimum when there is one, otherwise the best entry of the
/// fallback grid.
pub fn iterate_references(
    previous: Option<(&BoundResult, &YieldVariables)>,
    grid: &[ReferenceParameters],
    evaluate: impl FnMut(&ReferenceParameters) -> Result<f64>,
) -> Result<ReferenceParameters> {
    if let Some(r) = previous.and_then(|(res, vars)| references_from_solution(res, vars)) {
        return Ok(r);
    }
    let (i, _) = select_reference(grid, evaluate)?;
    Ok(grid[i].clone())
}
