use crate::output::emit;
use crate::{config_error, CmdResult, Failure, TbaArgs};
use bbs_core::tba::{fugacities, gge_transfer_matrix, largest_eigenvalue, q_i_series, solve_y_system, two_temp_closed_forms, GgeSpec, TwoTempParams};

/// `(β_1..β_s, β_∞)` from either flag form.
fn temperatures(a: &TbaArgs) -> Result<(Vec<f64>, f64), Failure> {
    if !a.fugacities.is_empty() {
        if a.fugacities.len() < 2 || a.fugacities.iter().any(|&z| !(z > 0.0)) {
            return Err(config_error("--fugacities needs at least z_1 and z_inf, all positive"));
        }
        let (inf, rest) = a.fugacities.split_last().expect("non-empty");
        return Ok((rest.iter().map(|z| -z.ln()).collect(), -inf.ln()));
    }
    if a.betas.is_empty() {
        return Err(config_error("give --betas, --fugacities or --a with --z"));
    }
    Ok((a.betas.clone(), a.beta_inf.unwrap_or(0.0)))
}

pub fn run(a: TbaArgs) -> CmdResult {
    let doc = if let (Some(av), Some(z)) = (a.a, a.z) {
        let p = TwoTempParams::new(av, z)?;
        let (b1, binf) = p.betas();
        let sol = two_temp_closed_forms(p, a.amplitudes.max(1));
        serde_json::json!({
            "config": {"command": "tba", "a": av, "z": z, "amplitudes": a.amplitudes},
            "betas": [b1], "beta_inf": binf, "ball_density": p.ball_density(),
            "Y": sol.y, "rho": sol.rho, "sigma": sol.sigma, "epsilon": sol.epsilon, "F": sol.free_energy,
        })
    } else {
        let (betas, beta_inf) = temperatures(&a)?;
        if a.series {
            let d = a.degree;
            let w = fugacities(&betas, beta_inf, d);
            let q1 = q_i_series(1, d, d)?.evaluate(&w, a.guard)?;
            let eigen = if betas.len() <= 4 {
                Some(largest_eigenvalue(&gge_transfer_matrix(&betas, beta_inf)?, 1e-14)?)
            } else {
                None
            };
            serde_json::json!({
                "config": {"command": "tba", "betas": betas, "beta_inf": beta_inf, "series": true, "degree": d, "guard": a.guard},
                "w": w, "Q1": q1, "F": -q1.ln(), "transfer_eigenvalue": eigen,
            })
        } else {
            let spec = GgeSpec::new(betas.clone(), beta_inf)?;
            let sol = solve_y_system(&spec, a.tol)?;
            let mut v = serde_json::to_value(&sol).expect("serializes");
            v["config"] = serde_json::json!({"command": "tba", "betas": betas, "beta_inf": beta_inf, "tol": a.tol});
            v
        }
    };
    emit(a.out.as_deref(), serde_json::to_string_pretty(&doc).expect("serializes").as_bytes())?;
    Ok(())
}
