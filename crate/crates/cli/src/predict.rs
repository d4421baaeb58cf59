use crate::config::{resolve_pair, Density, PREDICTION_FORMAT};
use crate::output::emit;
use crate::{config_error, CmdResult, Failure, Format, PredictArgs};
use anyhow::Context;
use bbs_core::dynamics::soliton_content;
use bbs_core::ghd::{plateaux_left_closed, plateaux_right_closed, solve_domain_wall_densities, PlateauProfile, Species, WidthSector};
use bbs_core::spectral::{current_soliton, solve_speeds_finite};
use bbs_core::{Level, SolitonContent, State};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PredictConfig {
    pub command: String,
    pub l: u32,
    pub left: Density,
    pub right: Density,
    pub t: Vec<usize>,
    pub width_sector: String,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SectorRow {
    pub k: usize,
    /// Left edge of the sector; absent for the leftmost one.
    pub zeta: Option<f64>,
    pub h: f64,
    #[serde(rename = "Sigma")]
    pub sigma_width: f64,
    pub species: Species,
    pub rho: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClosedForm {
    /// `empty-right`, `empty-left` or `none`.
    pub case: String,
    pub sectors: Vec<SectorRow>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProfileCurve {
    pub t: usize,
    pub r: Vec<i64>,
    pub zeta: Vec<f64>,
    pub h: Vec<f64>,
    /// `rho[j-1][i]`: density of `j`-solitons at `r[i]`.
    pub rho: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Prediction {
    pub format: String,
    pub version: String,
    pub config: PredictConfig,
    pub sectors: Vec<SectorRow>,
    pub matching_defect: f64,
    pub closed_form: ClosedForm,
    pub profiles: Vec<ProfileCurve>,
}

/// Tail entries below this are dropped from the reported vectors.
const REPORT_CUTOFF: f64 = 1e-14;

fn trimmed(v: &[f64]) -> Vec<f64> {
    let n = v.iter().rposition(|x| x.abs() > REPORT_CUTOFF).map_or(1, |i| i + 1).min(v.len());
    v[..n].to_vec()
}

fn rows(p: &PlateauProfile) -> Vec<SectorRow> {
    p.sectors
        .iter()
        .map(|s| SectorRow {
            k: s.k,
            zeta: s.zeta.is_finite().then_some(s.zeta),
            h: s.h,
            sigma_width: s.width,
            species: s.species,
            rho: trimmed(&s.rho),
            v: s.v[..trimmed(&s.rho).len().min(s.v.len())].to_vec(),
        })
        .collect()
}

fn curves(p: &PlateauProfile, times: &[usize]) -> Vec<ProfileCurve> {
    let first = p.sectors.get(1).map_or(0.0, |s| s.zeta.min(0.0));
    let last = p.sectors.last().map_or(0.0, |s| s.zeta.max(0.0));
    let jmax = p.sectors.iter().map(|s| trimmed(&s.rho).len()).max().unwrap_or(1);
    times
        .iter()
        .map(|&t| {
            let tf = t as f64;
            let pad = 10.0 * tf.sqrt() + 20.0;
            let r: Vec<i64> = ((first * tf - pad).floor() as i64..=(last * tf + pad).ceil() as i64).collect();
            ProfileCurve {
                t,
                zeta: r.iter().map(|&r| r as f64 / tf).collect(),
                h: r.iter().map(|&r| p.ball_density(r as f64, tf)).collect(),
                rho: (1..=jmax).map(|j| r.iter().map(|&r| p.soliton_density(j, r as f64, tf)).collect()).collect(),
                r,
            }
        })
        .collect()
}

pub fn predict(l: u32, left: Density, right: Density, times: &[usize], side: WidthSector) -> Result<Prediction, Failure> {
    if times.contains(&0) {
        return Err(config_error("profile times must be positive"));
    }
    let mut profile = solve_domain_wall_densities(left.p, right.p, l, side)?;
    if left.p == right.p {
        profile.sectors.truncate(1);
    }
    let closed = if left.p == right.p {
        None
    } else if right.p == 0.0 && left.p > 0.0 && left.p < 0.5 {
        Some(("empty-right", plateaux_left_closed(left.p / (1.0 - left.p), Level::Finite(l))?))
    } else if left.p == 0.0 && right.p > 0.0 && right.p < 0.5 {
        Some(("empty-left", plateaux_right_closed(right.p / (1.0 - right.p), l)?))
    } else {
        None
    };
    let closed_form = match closed {
        Some((case, p)) => ClosedForm { case: case.into(), sectors: rows(&p) },
        None => ClosedForm { case: "none".into(), sectors: Vec::new() },
    };
    Ok(Prediction {
        format: PREDICTION_FORMAT.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: PredictConfig {
            command: "predict".into(),
            l,
            left,
            right,
            t: times.to_vec(),
            width_sector: match side {
                WidthSector::Right => "right".into(),
                WidthSector::Left => "left".into(),
            },
        },
        sectors: rows(&profile),
        matching_defect: profile.matching_defect,
        closed_form,
        profiles: curves(&profile, times),
    })
}

fn table_csv(pred: &Prediction) -> String {
    let mut out = String::new();
    out.push_str(bbs_core::ensemble::CSV_VERSION_LINE);
    out.push('\n');
    out.push_str(&format!("# config {}\n", serde_json::to_string(&pred.config).expect("serializes")));
    out.push_str(&format!("# closed_form {}\n", pred.closed_form.case));
    out.push_str("k,zeta,h,Sigma,closed_zeta,closed_h,closed_Sigma\n");
    for (i, s) in pred.sectors.iter().enumerate() {
        let zeta = s.zeta.map_or("-inf".to_string(), |z| z.to_string());
        let closed = pred.closed_form.sectors.get(i).map_or(",,".to_string(), |c| {
            format!("{},{},{}", c.zeta.map_or("-inf".to_string(), |z| z.to_string()), c.h, c.sigma_width)
        });
        out.push_str(&format!("{},{zeta},{},{},{closed}\n", s.k, s.h, s.sigma_width));
    }
    out
}

fn finite(a: &PredictArgs) -> Result<serde_json::Value, Failure> {
    let l = a.level.ok_or_else(|| config_error("--l is required"))?;
    let content = match (&a.state, a.len) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(Failure::Config)?;
            soliton_content(&State::parse(text.trim())?)?
        }
        (None, Some(len)) => SolitonContent::new(len, a.m.clone())?,
        (None, None) => return Err(config_error("--finite needs --state or --L with --m")),
    };
    let level = Level::Finite(l);
    let speeds = solve_speeds_finite(&content, level)?;
    let current = current_soliton(&content, level)?;
    let exact: Vec<String> = speeds.exact.iter().flatten().map(|v| v.to_string()).collect();
    Ok(serde_json::json!({
        "format": PREDICTION_FORMAT,
        "config": {"command": "predict", "finite": true, "L": content.length(), "m": content.multiplicities(), "l": l},
        "speeds": speeds.speeds,
        "speeds_exact": exact,
        "current": num_traits::ToPrimitive::to_f64(&current),
        "current_exact": current.to_string(),
    }))
}

pub fn run(a: PredictArgs) -> CmdResult {
    let text = if a.finite {
        serde_json::to_string_pretty(&finite(&a)?).expect("serializes")
    } else {
        let l = a.level.ok_or_else(|| config_error("--l is required"))?;
        let (left, right) = resolve_pair(&a.density)?;
        let side = if a.width_left { WidthSector::Left } else { WidthSector::Right };
        let pred = predict(l, left, right, &a.times, side)?;
        match a.format {
            Format::Json => serde_json::to_string_pretty(&pred).expect("serializes"),
            Format::Csv => table_csv(&pred),
        }
    };
    emit(a.out.as_deref(), text.as_bytes())?;
    Ok(())
}
