use crate::config::{RunMetadata, METADATA_FORMAT, PREDICTION_FORMAT};
use crate::output::emit;
use crate::predict::Prediction;
use crate::simulate::{METADATA_JSON, PROFILE_CSV};
use crate::{config_error, CmdResult, CompareArgs, Failure};
use bbs_core::ensemble::{fit_step, StepData, CSV_VERSION_LINE, WALL_R};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, serde::Serialize)]
pub struct PlateauCheck {
    pub t: usize,
    pub k: usize,
    pub r_start: i64,
    pub r_end: i64,
    pub sim: f64,
    pub stderr: f64,
    pub predicted: f64,
    pub z: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct StepCheck {
    pub k: usize,
    pub predicted_zeta: f64,
    /// Front position minus `ζt`, measured from the wall.
    pub offset: Option<f64>,
    pub offset_stderr: Option<f64>,
    pub sigma_fit: Option<f64>,
    pub sigma_stderr: Option<f64>,
    pub sigma_predicted: f64,
    pub a_fit: Option<f64>,
    /// `None` for a front that does not broaden.
    pub a_predicted: Option<f64>,
    pub chi2_per_dof: Option<f64>,
    pub collapse: Option<f64>,
    pub error: Option<String>,
    pub pass: bool,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct Report {
    pub format: String,
    pub sim_config: serde_json::Value,
    pub prediction_config: serde_json::Value,
    pub tolerance: f64,
    pub position_tolerance: f64,
    pub plateaus: Vec<PlateauCheck>,
    pub steps: Vec<StepCheck>,
    pub pass: bool,
}

/// Per-time site rows `(r, mean, stderr)` of a profile CSV.
type Profile = BTreeMap<usize, Vec<(i64, f64, f64)>>;

fn read_profile(path: &Path) -> Result<Profile, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_VERSION_LINE) {
        return Err(config_error(format!("{} is not a `{CSV_VERSION_LINE}` file", path.display())));
    }
    let mut out = Profile::new();
    let mut header_seen = false;
    for line in lines {
        if line.starts_with('#') {
            continue;
        }
        if !header_seen {
            if line != "t,r,zeta,h_mean,h_stderr" {
                return Err(config_error(format!("{}: unexpected header {line}", path.display())));
            }
            header_seen = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || config_error(format!("{}: malformed row {line}", path.display()));
        if f.len() != 5 {
            return Err(bad());
        }
        let t = f[0].parse().map_err(|_| bad())?;
        let r = f[1].parse().map_err(|_| bad())?;
        let m = f[3].parse().map_err(|_| bad())?;
        let e = f[4].parse().map_err(|_| bad())?;
        out.entry(t).or_default().push((r, m, e));
    }
    Ok(out)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

pub fn compare(meta: &RunMetadata, profile: &Profile, pred: &Prediction, tol: f64, pos_tol: f64) -> Report {
    let sectors = &pred.sectors;
    let zeta = |k: usize| sectors[k].zeta.unwrap_or(f64::NEG_INFINITY);
    let margin = |k: usize, t: f64| 4.0 * sectors[k].sigma_width * t.sqrt() + 6.0;
    let mut plateaus = Vec::new();
    for (&t, rows) in profile {
        let tf = t as f64;
        let (rmin, rmax) = (rows.first().map_or(0, |r| r.0), rows.last().map_or(0, |r| r.0));
        for k in 0..sectors.len() {
            let lo = if k == 0 {
                if sectors.len() > 1 { zeta(1) * tf - margin(1, tf) - 400.0 } else { rmin as f64 }
            } else {
                zeta(k) * tf + margin(k, tf)
            };
            let hi = if k + 1 < sectors.len() {
                zeta(k + 1) * tf - margin(k + 1, tf)
            } else if k == 0 {
                rmax as f64 + 1.0
            } else {
                zeta(k) * tf + margin(k, tf) + 400.0
            };
            let sel: Vec<_> = rows.iter().filter(|r| (r.0 as f64) >= lo && (r.0 as f64) < hi).collect();
            if sel.len() < 10 {
                continue;
            }
            let n = sel.len() as f64;
            let sim = sel.iter().map(|r| r.1).sum::<f64>() / n;
            let stderr = sel.iter().map(|r| r.2 * r.2).sum::<f64>().sqrt() / n;
            let diff = sim - sectors[k].h;
            let z = if stderr > 0.0 { diff / stderr } else if diff.abs() < 1e-12 { 0.0 } else { f64::INFINITY };
            plateaus.push(PlateauCheck {
                t,
                k,
                r_start: sel[0].0,
                r_end: sel[sel.len() - 1].0 + 1,
                sim,
                stderr,
                predicted: sectors[k].h,
                z,
                pass: z.abs() < tol,
            });
        }
    }
    let mut steps = Vec::new();
    for k in 1..sectors.len() {
        let step_k = zeta(k);
        let data: Vec<StepData> = profile
            .iter()
            .map(|(&t, rows)| {
                let tf = t as f64;
                let centre = step_k * tf;
                let reach = 5.0 * sectors[k].sigma_width * tf.sqrt() + 12.0;
                let lo = if k > 1 { (zeta(k - 1) * tf + centre) / 2.0 } else { f64::NEG_INFINITY };
                let hi = if k + 1 < sectors.len() { (zeta(k + 1) * tf + centre) / 2.0 } else { f64::INFINITY };
                let sel: Vec<_> = rows.iter().filter(|r| ((r.0 as f64) - centre).abs() <= reach && (r.0 as f64) > lo && (r.0 as f64) < hi).collect();
                StepData {
                    t: tf,
                    r: sel.iter().map(|r| r.0 as f64).collect(),
                    mean: sel.iter().map(|r| r.1).collect(),
                    stderr: sel.iter().map(|r| r.2).collect(),
                }
            })
            .collect();
        let sigma_predicted = sectors[k].sigma_width;
        let a_predicted = (sigma_predicted > 0.0).then(|| 1.0 / (2f64.sqrt() * sigma_predicted));
        let check = match fit_step(&data, step_k) {
            Ok(f) => {
                let shift = f.offset - WALL_R;
                let pass = shift.abs() <= pos_tol + 3.0 * f.offset_stderr;
                StepCheck {
                    k,
                    predicted_zeta: step_k,
                    offset: Some(shift),
                    offset_stderr: Some(f.offset_stderr),
                    sigma_fit: Some(f.width),
                    sigma_stderr: Some(f.width_stderr),
                    sigma_predicted,
                    a_fit: Some(f.inverse_width),
                    a_predicted,
                    chi2_per_dof: Some(f.chi2_per_dof),
                    collapse: f.collapse.is_finite().then_some(f.collapse),
                    error: None,
                    pass,
                }
            }
            Err(e) => StepCheck {
                k,
                predicted_zeta: step_k,
                offset: None,
                offset_stderr: None,
                sigma_fit: None,
                sigma_stderr: None,
                sigma_predicted,
                a_fit: None,
                a_predicted,
                chi2_per_dof: None,
                collapse: None,
                error: Some(e.to_string()),
                pass: false,
            },
        };
        steps.push(check);
    }
    let pass = plateaus.iter().all(|p| p.pass) && steps.iter().all(|s| s.pass);
    Report {
        format: "bbs-compare v1".into(),
        sim_config: serde_json::to_value(&meta.config).expect("serializes"),
        prediction_config: serde_json::to_value(&pred.config).expect("serializes"),
        tolerance: tol,
        position_tolerance: pos_tol,
        plateaus,
        steps,
        pass,
    }
}

fn summary(r: &Report) -> String {
    let mut s = String::new();
    for p in &r.plateaus {
        s.push_str(&format!(
            "t={:<6} k={:<3} r=[{}, {})  sim {:.5} ± {:.5}  pred {:.5}  z {:+.2} {}\n",
            p.t,
            p.k,
            p.r_start,
            p.r_end,
            p.sim,
            p.stderr,
            p.predicted,
            p.z,
            if p.pass { "ok" } else { "FAIL" }
        ));
    }
    for st in &r.steps {
        match (st.offset, st.sigma_fit) {
            (Some(o), Some(w)) => s.push_str(&format!(
                "front k={:<3} zeta {:.4}  offset {:+.2} ± {:.2} sites  Sigma {:.4} ± {:.4} (pred {:.4})  A {:.4} (pred {})  collapse {} {}\n",
                st.k,
                st.predicted_zeta,
                o,
                st.offset_stderr.unwrap_or(f64::NAN),
                w,
                st.sigma_stderr.unwrap_or(f64::NAN),
                st.sigma_predicted,
                st.a_fit.unwrap_or(f64::NAN),
                st.a_predicted.map_or("none".into(), |a| format!("{a:.4}")),
                st.collapse.map_or("n/a".into(), |c| format!("{c:.2}")),
                if st.pass { "ok" } else { "FAIL" }
            )),
            _ => s.push_str(&format!("front k={} zeta {:.4}  fit failed: {} FAIL\n", st.k, st.predicted_zeta, st.error.as_deref().unwrap_or("?"))),
        }
    }
    s.push_str(if r.pass { "overall: PASS\n" } else { "overall: FAIL\n" });
    s
}

pub fn run(a: CompareArgs) -> CmdResult {
    let meta_path = a.sim.join(METADATA_JSON);
    if !meta_path.exists() {
        return Err(config_error(format!("{} has no {METADATA_JSON}; refusing to compare", a.sim.display())));
    }
    let meta: RunMetadata = read_json(&meta_path)?;
    if meta.format != METADATA_FORMAT {
        return Err(config_error(format!("{}: unknown metadata format {}", meta_path.display(), meta.format)));
    }
    let pred: Prediction = read_json(&a.pred)?;
    if pred.format != PREDICTION_FORMAT {
        return Err(config_error(format!("{}: not a domain-wall prediction", a.pred.display())));
    }
    let same = |x: f64, y: f64| (x - y).abs() < 1e-12;
    let c = &meta.config;
    let matched = c.l == pred.config.l && same(c.left.p, pred.config.left.p) && same(c.right.p, pred.config.right.p);
    if !matched && !a.allow_mismatch {
        return Err(config_error(format!(
            "simulation (l={}, pL={}, pR={}) and prediction (l={}, pL={}, pR={}) differ",
            c.l, c.left.p, c.right.p, pred.config.l, pred.config.left.p, pred.config.right.p
        )));
    }
    let profile = read_profile(&a.sim.join(PROFILE_CSV))?;
    let report = compare(&meta, &profile, &pred, a.tolerance, a.position_tolerance);
    print!("{}", summary(&report));
    if let Some(out) = &a.out {
        emit(Some(out), serde_json::to_string_pretty(&report).expect("serializes").as_bytes())?;
    }
    if report.pass {
        Ok(())
    } else {
        let bad_p = report.plateaus.iter().filter(|p| !p.pass).count();
        let bad_s = report.steps.iter().filter(|s| !s.pass).count();
        Err(Failure::Comparison(format!("{bad_p} plateau and {bad_s} front checks outside tolerance")))
    }
}
