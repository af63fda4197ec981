//! Honest-channel simulation, asymptotic key rate and distance scans.

use crate::error::{Error, Result};
use crate::lp::{BoundResult, LpSolver, LpStatus};
use crate::photon::{CorrelationModel, SecurityConfig};
use crate::security::{
    references_from_solution, refine_bound, select_reference, BoundKind, GainSet, ObservedGains,
    ReferenceParameters, SecurityContext, YieldVariables,
};
use crate::setting::Setting;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub eta_det: f64,
    /// Fiber loss in dB/km.
    pub alpha_att: f64,
    /// Dark-count probability per detector and round.
    pub dark_count: f64,
    /// Misalignment angle in radians.
    pub misalignment: f64,
    pub f_ec: f64,
    pub q_z: f64,
    pub q_x: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            eta_det: 0.65,
            alpha_att: 0.2,
            dark_count: 7.2e-8,
            misalignment: 0.08,
            f_ec: 1.16,
            q_z: 0.5,
            q_x: 0.5,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta_det", self.eta_det),
            ("dark_count", self.dark_count),
            ("q_z", self.q_z),
            ("q_x", self.q_x),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(name, format!("must lie in [0, 1] (got {v})")));
            }
        }
        if (self.q_z + self.q_x - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("q_z", "q_z + q_x must equal 1"));
        }
        if !(self.alpha_att > 0.0) {
            return Err(Error::invalid("alpha_att", "must be positive"));
        }
        if !(self.f_ec >= 1.0) {
            return Err(Error::invalid("f_ec", "must be >= 1"));
        }
        if !self.misalignment.is_finite() {
            return Err(Error::invalid("misalignment", "must be finite"));
        }
        Ok(())
    }

    /// Overall transmittance `η_det 10^{-α L / 10}`.
    pub fn transmittance(&self, distance_km: f64) -> f64 {
        self.eta_det * 10f64.powf(-self.alpha_att * distance_km / 10.0)
    }
}

/// Detection probability per round for a coherent pulse of mean photon
/// number `a`.
pub fn channel_gain(a: f64, params: &ChannelParams, distance_km: f64) -> f64 {
    let eta = params.transmittance(distance_km);
    click(params.dark_count, -eta * a)
}

/// `1 - (1 - p_d)² e^{log_no_click}` without cancellation.
fn click(pd: f64, log_no_click: f64) -> f64 {
    (-(2.0 * (-pd).ln_1p() + log_no_click).exp_m1()).clamp(0.0, 1.0)
}

/// Probability per round of an erroneous detection.
pub fn channel_error_gain(a: f64, params: &ChannelParams, distance_km: f64) -> f64 {
    let eta = params.transmittance(distance_km);
    let (c2, s2) = (params.misalignment.cos().powi(2), params.misalignment.sin().powi(2));
    error_terms(params.dark_count, -eta * a * c2, -eta * a * s2, -eta * a)
}

/// Error probability from the logarithms of the no-click probabilities of
/// the aligned, misaligned and total light.
fn error_terms(pd: f64, log_aligned: f64, log_misaligned: f64, log_total: f64) -> f64 {
    let h = 0.5 * (log_aligned.exp_m1() - log_misaligned.exp_m1());
    let signal = h - 0.5 * log_total.exp_m1();
    let v = pd * pd / 2.0 + pd * (1.0 - pd) * (1.0 + h) + (1.0 - pd).powi(2) * signal;
    v.clamp(0.0, 1.0)
}

/// Yield of an `n`-photon state under the same channel.
pub fn fock_yield(n: usize, params: &ChannelParams, distance_km: f64) -> f64 {
    let eta = params.transmittance(distance_km);
    click(params.dark_count, n as f64 * (-eta).ln_1p())
}

/// Error probability of an `n`-photon state.
pub fn fock_error(n: usize, params: &ChannelParams, distance_km: f64) -> f64 {
    let eta = params.transmittance(distance_km);
    let (c2, s2) = (params.misalignment.cos().powi(2), params.misalignment.sin().powi(2));
    let n = n as f64;
    error_terms(
        params.dark_count,
        n * (-eta * c2).ln_1p(),
        n * (-eta * s2).ln_1p(),
        n * (-eta).ln_1p(),
    )
}

/// Gains of every setting record, using each pattern's distribution mean as
/// its intensity.
pub fn simulate_gains(model: &CorrelationModel, params: &ChannelParams, distance_km: f64) -> GainSet {
    let p = model.probabilities();
    let basis = |q: f64| {
        let mut obs = ObservedGains {
            basis_probability: q,
            ..ObservedGains::default()
        };
        for (key, tg) in model.patterns() {
            let a = key.current().expect("non-empty pattern");
            let w = q * q * p.get(a) * p.of_pattern(&key.history());
            obs.gain.insert(key.clone(), w * channel_gain(tg.mean, params, distance_km));
            obs.error_gain
                .insert(key.clone(), w * channel_error_gain(tg.mean, params, distance_km));
        }
        obs
    };
    GainSet {
        z: basis(params.q_z),
        x: basis(params.q_x),
    }
}

/// Signal-setting key-basis gain summed over records, and its error rate.
pub fn signal_aggregates(gains: &GainSet) -> (f64, f64) {
    let (mut z, mut e) = (0.0, 0.0);
    for (key, g) in &gains.z.gain {
        if key.current() == Some(Setting::Signal) {
            z += g;
            e += gains.z.error_gain[key];
        }
    }
    let e_tol = if z > 0.0 { (e / z).clamp(0.0, 0.5) } else { 0.0 };
    (z, e_tol)
}

/// Channel-model prediction of every yield and error variable.
pub fn channel_references(ctx: &SecurityContext, params: &ChannelParams, distance_km: f64) -> ReferenceParameters {
    let n = ctx.config.n_cut;
    let y: Vec<f64> = (0..=n).map(|k| fock_yield(k, params, distance_km)).collect();
    let h: Vec<f64> = (0..=n).map(|k| fock_error(k, params, distance_km)).collect();
    let mut refs = ReferenceParameters::default();
    for key in ctx.patterns() {
        refs.yields.insert(key.clone(), y.clone());
        refs.errors.insert(key, h.clone());
    }
    refs
}

pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::invalid("x", format!("must lie in [0, 1] (got {x})")));
    }
    Ok(entropy(x))
}

fn entropy(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyRateInputs {
    pub z1_lower: f64,
    pub x1_lower: f64,
    pub e1_upper: f64,
    pub e_tol: f64,
    /// Signal-setting key-basis gain.
    pub signal_gain: f64,
}

/// Asymptotic key rate per round, floored at zero.
pub fn secret_key_rate(inputs: &KeyRateInputs, params: &ChannelParams) -> f64 {
    let phase = if inputs.x1_lower > 0.0 {
        (inputs.e1_upper.max(0.0) / inputs.x1_lower).min(0.5)
    } else {
        0.5
    };
    let k = inputs.z1_lower * (1.0 - entropy(phase))
        - params.f_ec * inputs.signal_gain * entropy(inputs.e_tol.clamp(0.0, 0.5));
    k.max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyRatePoint {
    pub distance_km: f64,
    pub attenuation_db: Option<f64>,
    pub z1_lower: f64,
    pub x1_lower: f64,
    pub e1_upper: f64,
    pub e_tol: f64,
    pub k_inf: f64,
    pub status: LpStatus,
}

/// Reference multipliers tried at the first point of a scan.
pub fn reference_grid() -> Vec<f64> {
    (0..11).map(|i| 0.5 + 0.1 * i as f64).collect()
}

type Solved = [(BoundResult, YieldVariables); 3];

const KINDS: [BoundKind; 3] = [BoundKind::Z1Lower, BoundKind::X1Lower, BoundKind::E1Upper];

/// Extra solves per bound that add a tangent at the latest optimum.
pub const REFINEMENT_ROUNDS: usize = 6;

/// Relative objective change below which refinement stops.
pub const REFINEMENT_TOL: f64 = 1e-3;

struct PointOutcome {
    solved: Solved,
    point: KeyRatePoint,
}

fn evaluate_point(
    ctx: &SecurityContext,
    gains: &GainSet,
    seeds: [Vec<ReferenceParameters>; 3],
    params: &ChannelParams,
    solver: &dyn LpSolver,
    distance_km: f64,
    attenuation_db: Option<f64>,
    rounds: usize,
) -> Result<PointOutcome> {
    let mut solved: Vec<(BoundResult, YieldVariables)> = Vec::with_capacity(3);
    // With the same counts and basis probability in both bases the two
    // yield programs coincide.
    let symmetric = gains.z.gain == gains.x.gain && gains.z.basis_probability == gains.x.basis_probability;
    for (kind, seed) in KINDS.into_iter().zip(seeds) {
        if kind == BoundKind::X1Lower && symmetric {
            let z = solved[0].clone();
            solved.push(z);
            continue;
        }
        let (r, vars) = refine_bound(ctx, gains, &seed, kind, solver, rounds, REFINEMENT_TOL)?;
        solved.push((r, vars));
    }
    let solved: Solved = solved.try_into().map_err(|_| Error::Infeasible)?;
    let status = solved
        .iter()
        .map(|(r, _)| r.status)
        .find(|s| *s != LpStatus::Optimal)
        .unwrap_or(LpStatus::Optimal);
    let (signal_gain, e_tol) = signal_aggregates(gains);
    let [z, x, e] = [0, 1, 2].map(|i| solved[i].0.objective);
    let k_inf = if status == LpStatus::Optimal {
        secret_key_rate(
            &KeyRateInputs {
                z1_lower: z,
                x1_lower: x,
                e1_upper: e,
                e_tol,
                signal_gain,
            },
            params,
        )
    } else {
        0.0
    };
    Ok(PointOutcome {
        solved,
        point: KeyRatePoint {
            distance_km,
            attenuation_db,
            z1_lower: z,
            x1_lower: x,
            e1_upper: e,
            e_tol,
            k_inf,
            status,
        },
    })
}

/// Key rate at each distance. The first point (and any point after a failed
/// one) searches a grid of scaled channel-model references; later points
/// start from the previous optima together with the channel-model
/// prediction. Every bound is then refined by adding tangents at its own
/// optimum.
pub fn distance_scan(
    model: &CorrelationModel,
    params: &ChannelParams,
    cfg: &SecurityConfig,
    distances_km: &[f64],
    attenuation_db: Option<f64>,
    solver: &dyn LpSolver,
) -> Result<Vec<KeyRatePoint>> {
    params.validate()?;
    if distances_km.windows(2).any(|w| w[1] < w[0]) || distances_km.iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::invalid("distances", "must be non-negative and sorted ascending"));
    }
    let model = match attenuation_db {
        Some(db) => model.attenuated(db),
        None => model.clone(),
    };
    let ctx = SecurityContext::new(model, *cfg)?;
    let mut previous: Option<Solved> = None;
    let mut out = Vec::with_capacity(distances_km.len());
    for &d in distances_km {
        let gains = simulate_gains(&ctx.model, params, d);
        let base = channel_references(&ctx, params, d);
        let warm = previous.as_ref().and_then(|s| {
            let mut seeds = Vec::with_capacity(3);
            for (res, vars) in s {
                let mut r = references_from_solution(res, vars)?;
                if r.errors.is_empty() {
                    r.errors = base.errors.clone();
                }
                seeds.push(vec![r, base.clone()]);
            }
            <[Vec<ReferenceParameters>; 3]>::try_from(seeds).ok()
        });
        let outcome = match warm {
            Some(seeds) => evaluate_point(&ctx, &gains, seeds, params, solver, d, attenuation_db, REFINEMENT_ROUNDS).ok(),
            None => None,
        };
        let outcome = match outcome {
            Some(o) if o.point.status == LpStatus::Optimal => Some(o),
            _ => {
                let grid: Vec<ReferenceParameters> = reference_grid().iter().map(|&m| base.scaled(m)).collect();
                let chosen = select_reference(&grid, |r| {
                    let seeds = [vec![r.clone()], vec![r.clone()], vec![r.clone()]];
                    let o = evaluate_point(&ctx, &gains, seeds, params, solver, d, attenuation_db, 0)?;
                    if o.point.status != LpStatus::Optimal {
                        return Err(Error::Infeasible);
                    }
                    Ok(o.point.k_inf)
                });
                match chosen {
                    Ok((i, _)) => {
                        let r = &grid[i];
                        let seeds = [vec![r.clone()], vec![r.clone()], vec![r.clone()]];
                        evaluate_point(&ctx, &gains, seeds, params, solver, d, attenuation_db, REFINEMENT_ROUNDS).ok()
                    }
                    Err(e) if e.is_numerical() || matches!(e, Error::Infeasible) => None,
                    Err(e) => return Err(e),
                }
            }
        };
        match outcome {
            Some(o) => {
                out.push(o.point);
                previous = Some(o.solved);
            }
            None => {
                let (_, e_tol) = signal_aggregates(&gains);
                out.push(KeyRatePoint {
                    distance_km: d,
                    attenuation_db,
                    z1_lower: f64::NAN,
                    x1_lower: f64::NAN,
                    e1_upper: f64::NAN,
                    e_tol,
                    k_inf: 0.0,
                    status: LpStatus::Infeasible,
                });
                previous = None;
            }
        }
    }
    Ok(out)
}
