use pulsecorr_core::keyrate::{distance_scan, ChannelParams, KeyRatePoint};
use pulsecorr_core::lp::SimplexSolver;
use pulsecorr_core::photon::{CorrelationModel, SecurityConfig};
use pulsecorr_core::stats::{derive_correlation_model_at, Normalization};
use pulsecorr_core::tables::{parse_summary_table, system_a_csv, system_b_csv};

use crate::config::RunConfig;
use crate::output::{num, write_atomic, Csv};
use crate::synth::probabilities;
use crate::{Failure, SimulateArgs};

pub const COLUMNS: [&str; 8] = [
    "distance_km",
    "attenuation_db",
    "Z1_lower",
    "X1_lower",
    "E1_upper",
    "E_tol",
    "K_inf",
    "lp_status",
];

fn normalization(cfg: &RunConfig, default_units: &str) -> Result<Normalization, Failure> {
    let units: String = cfg.get("model.units", default_units.to_string())?;
    match units.as_str() {
        "photons" => Ok(Normalization::Photons),
        "relative" => Ok(Normalization::SignalMean {
            signal_photons: cfg.get("model.signal_photons", 1.0)?,
        }),
        u => Err(Failure::Usage(format!("`model.units`: expected photons or relative, got `{u}`"))),
    }
}

fn from_table(text: &str, origin: &str, cfg: &RunConfig, default_units: &str) -> Result<CorrelationModel, Failure> {
    let table = parse_summary_table(text, origin)?;
    let xi = cfg.get("model.xi", 0usize)?;
    Ok(derive_correlation_model_at(
        &table,
        xi,
        normalization(cfg, default_units)?,
        probabilities(cfg)?,
    )?)
}

pub fn load_model(source: &str, cfg: &RunConfig) -> Result<CorrelationModel, Failure> {
    cfg.note("model.source", source);
    let model = match source {
        "A" => from_table(system_a_csv(), "system_a.csv", cfg, "photons")?,
        "B" => from_table(system_b_csv(), "system_b.csv", cfg, "relative")?,
        path => {
            let text =
                std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("cannot read model {path}: {e}")))?;
            let header = text
                .lines()
                .map(str::trim)
                .find(|l| !l.is_empty() && !l.starts_with('#'))
                .unwrap_or_default();
            if header.split(',').any(|c| c.trim() == "pattern") {
                from_table(&text, path, cfg, "relative")?
            } else {
                let m = CorrelationModel::from_kv_str(&text, path)?;
                if let Some(xi) = cfg.get_opt::<usize>("model.xi")? {
                    if xi != m.xi() {
                        return Err(Failure::Usage(format!(
                            "model file {path} has order {}, but order {xi} was requested",
                            m.xi()
                        )));
                    }
                }
                m
            }
        }
    };
    if cfg.get("model.point_mass", false)? {
        return Ok(CorrelationModel::point_masses(model.xi(), model.settings().to_vec())?);
    }
    Ok(model)
}

fn channel(cfg: &RunConfig) -> Result<ChannelParams, Failure> {
    let d = ChannelParams::default();
    let p = ChannelParams {
        eta_det: cfg.get("channel.eta_det", d.eta_det)?,
        alpha_att: cfg.get("channel.alpha_att", d.alpha_att)?,
        dark_count: cfg.get("channel.dark_count", d.dark_count)?,
        misalignment: cfg.get("channel.misalignment", d.misalignment)?,
        f_ec: cfg.get("channel.f_ec", d.f_ec)?,
        q_z: cfg.get("channel.q_z", d.q_z)?,
        q_x: cfg.get("channel.q_x", d.q_x)?,
    };
    p.validate()?;
    Ok(p)
}

fn security(cfg: &RunConfig) -> Result<SecurityConfig, Failure> {
    let d = SecurityConfig::default();
    let s = SecurityConfig {
        n_cut: cfg.get("security.n_cut", d.n_cut)?,
        quadrature_nodes: cfg.get("security.quadrature_nodes", d.quadrature_nodes)?,
        quadrature_tol: cfg.get("security.quadrature_tol", d.quadrature_tol)?,
    };
    s.validate()?;
    Ok(s)
}

fn distances(cfg: &RunConfig) -> Result<Vec<f64>, Failure> {
    let start: f64 = cfg.get("scan.start_km", 0.0)?;
    let stop: f64 = cfg.get("scan.stop_km", 200.0)?;
    let step: f64 = cfg.get("scan.step_km", 1.0)?;
    if !(start >= 0.0 && stop >= start && step > 0.0 && start.is_finite() && stop.is_finite()) {
        return Err(Failure::Usage(
            "scan needs 0 <= start_km <= stop_km and a positive step_km".into(),
        ));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

fn row(csv: &mut Csv, p: &KeyRatePoint) {
    csv.row([
        format!("{}", p.distance_km),
        p.attenuation_db.map(|a| a.to_string()).unwrap_or_default(),
        num(p.z1_lower),
        num(p.x1_lower),
        num(p.e1_upper),
        num(p.e_tol),
        num(p.k_inf),
        p.status.as_str().to_string(),
    ]);
}

pub fn run(args: &SimulateArgs, cfg: &RunConfig) -> Result<(), Failure> {
    let source = match (&args.model, cfg.raw("model.source")) {
        (Some(m), _) => m.clone(),
        (None, Some(m)) => m.to_string(),
        (None, None) => "A".to_string(),
    };
    let model = load_model(&source, cfg)?;
    let params = channel(cfg)?;
    let sec = security(cfg)?;
    let d = distances(cfg)?;
    let attenuations = cfg.get_list("scan.attenuation_db", &[])?;
    if attenuations.iter().any(|a| !(*a >= 0.0)) {
        return Err(Failure::Usage("`scan.attenuation_db` values must be non-negative".into()));
    }
    let model_out = cfg.get_path("model.out");

    let mut csv = Csv::new(&cfg.hash(), &COLUMNS);
    let runs: Vec<Option<f64>> = if attenuations.is_empty() {
        vec![None]
    } else {
        attenuations.iter().copied().map(Some).collect()
    };
    let mut positive = 0;
    for att in runs {
        let points = distance_scan(&model, &params, &sec, &d, att, &SimplexSolver)?;
        positive += points.iter().filter(|p| p.k_inf > 0.0).count();
        for p in &points {
            row(&mut csv, p);
        }
    }
    csv.write(&args.common.out)?;
    if let Some(path) = model_out {
        let text = format!("# config_hash: {}\n{}", cfg.hash(), model.to_kv_string());
        write_atomic(&path, text.as_bytes())?;
    }
    eprintln!(
        "wrote {} points ({} with positive key rate) to {}",
        csv_rows(&d, &attenuations),
        positive,
        args.common.out.display()
    );
    Ok(())
}

fn csv_rows(d: &[f64], att: &[f64]) -> usize {
    d.len() * att.len().max(1)
}
