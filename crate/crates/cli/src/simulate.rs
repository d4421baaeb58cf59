use crate::config::{resolve_pair, RunMetadata, SimulateConfig, METADATA_FORMAT};
use crate::output::Staged;
use crate::{config_error, CmdResult, Failure, Format, SimulateArgs};
use anyhow::Context;
use bbs_core::ensemble::{measure_ball_density, measure_current, measure_soliton_density, run_ensemble, write_profile_csv, write_soliton_csv};
use std::fs;
use std::time::Instant;

pub const PROFILE_CSV: &str = "profile.csv";
pub const SOLITON_CSV: &str = "solitons.csv";
pub const CURRENT_CSV: &str = "current.csv";
pub const PROFILE_JSON: &str = "profile.json";
pub const METADATA_JSON: &str = "metadata.json";

fn from_flags(a: &SimulateArgs) -> Result<SimulateConfig, Failure> {
    let need = |name: &str| config_error(format!("--{name} is required"));
    let len = a.len.ok_or_else(|| need("L"))?;
    let l = a.level.ok_or_else(|| need("l"))?;
    let (left, right) = resolve_pair(&a.density)?;
    if a.times.is_empty() {
        return Err(need("t"));
    }
    Ok(SimulateConfig {
        command: "simulate".into(),
        len,
        l,
        left,
        right,
        wall: a.wall.unwrap_or(len / 2),
        t: a.times.clone(),
        samples: a.samples.ok_or_else(|| need("samples"))?,
        seed: a.seed.unwrap_or(0),
        window: a.window.unwrap_or(256),
        stride: a.stride.unwrap_or(64),
        max_amplitude: a.max_amplitude.unwrap_or(l as usize + 1),
        r_min: a.r_min,
        r_max: a.r_max,
        format: a.format.unwrap_or(Format::Csv),
    })
}

/// Accepts either a bare configuration or a run's metadata file.
fn from_file(path: &std::path::Path) -> Result<SimulateConfig, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(Failure::Config)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    let cfg = value.get("config").cloned().unwrap_or(value);
    serde_json::from_value(cfg).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn header(cfg: &SimulateConfig) -> Vec<String> {
    vec![format!("config {}", serde_json::to_string(cfg).expect("config serializes")), format!("seed {}", cfg.seed)]
}

pub fn run(a: SimulateArgs) -> CmdResult {
    let cfg = match &a.config {
        Some(path) => from_file(path)?,
        None => from_flags(&a)?,
    };
    let protocol = cfg.protocol();
    protocol.validate()?;
    if let Some(n) = a.threads {
        if n == 0 {
            return Err(config_error("--threads must be positive"));
        }
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let start = Instant::now();
    let acc = run_ensemble(&protocol, a.threads)?;
    let elapsed = start.elapsed().as_secs_f64();
    let head = header(&cfg);
    let range = match (cfg.r_min, cfg.r_max) {
        (None, None) => None,
        (lo, hi) => Some((lo.unwrap_or(i64::MIN), hi.unwrap_or(i64::MAX))),
    };
    let mut staged = Staged::default();
    let mut files = Vec::new();
    match cfg.format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_profile_csv(&mut buf, &protocol, &acc, &head, range).map_err(anyhow::Error::from)?;
            staged.write(&a.out.join(PROFILE_CSV), &buf)?;
            files.push(PROFILE_CSV.to_string());
            if protocol.window > 0 {
                let mut buf = Vec::new();
                write_soliton_csv(&mut buf, &protocol, &acc, &head).map_err(anyhow::Error::from)?;
                staged.write(&a.out.join(SOLITON_CSV), &buf)?;
                files.push(SOLITON_CSV.to_string());
            }
            if protocol.measure_currents {
                let mut buf = String::new();
                buf.push_str(bbs_core::ensemble::CSV_VERSION_LINE);
                buf.push('\n');
                for h in &head {
                    buf.push_str(&format!("# {h}\n"));
                }
                buf.push_str("t,current_mean,current_stderr,load,load_frequency,load_stderr\n");
                for ti in 0..protocol.times.len() {
                    let m = measure_current(&protocol, &acc, ti)?;
                    for (n, (f, e)) in m.load_frequency.iter().zip(&m.load_stderr).enumerate() {
                        buf.push_str(&format!("{},{},{},{n},{f},{e}\n", m.t, m.current, m.stderr));
                    }
                }
                staged.write(&a.out.join(CURRENT_CSV), buf.as_bytes())?;
                files.push(CURRENT_CSV.to_string());
            }
        }
        Format::Json => {
            let mut snapshots = Vec::new();
            for ti in 0..protocol.times.len() {
                let profile: Vec<_> = measure_ball_density(&protocol, &acc, ti)
                    .into_iter()
                    .filter(|q| range.is_none_or(|(lo, hi)| q.r >= lo && q.r < hi))
                    .collect();
                let solitons = if protocol.window > 0 { measure_soliton_density(&protocol, &acc, ti) } else { Vec::new() };
                let current = if protocol.measure_currents { Some(measure_current(&protocol, &acc, ti)?) } else { None };
                snapshots.push(serde_json::json!({"t": protocol.times[ti], "profile": profile, "solitons": solitons, "current": current}));
            }
            let doc = serde_json::json!({"format": "bbs-profile v1", "config": cfg, "seed": cfg.seed, "snapshots": snapshots});
            staged.write(&a.out.join(PROFILE_JSON), serde_json::to_string(&doc).expect("serializes").as_bytes())?;
            files.push(PROFILE_JSON.to_string());
        }
    }
    let meta = RunMetadata {
        format: METADATA_FORMAT.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        config: cfg,
        threads: a.threads.unwrap_or_else(rayon_threads),
        wall_clock_seconds: elapsed,
        files,
    };
    staged.write(&a.out.join(METADATA_JSON), serde_json::to_string_pretty(&meta).expect("serializes").as_bytes())?;
    staged.commit()?;
    eprintln!("{} samples in {elapsed:.1}s, output in {}", protocol.samples, a.out.display());
    Ok(())
}

fn rayon_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}
