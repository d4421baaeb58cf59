use bbs_core::ensemble::{
    fit_step, measure_ball_density, measure_current, measure_soliton_density, run_ensemble, sample_initial, Protocol, StepData, WALL_R,
};
use bbs_core::ghd::{solve_domain_wall_densities, WidthSector};

#[test]
fn reservoir_filling_matches_the_bernoulli_density() {
    let p = Protocol::domain_wall(4000, 2, 0.4, 0.1, vec![0], 400, 11);
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for s in 0..p.samples {
        let st = sample_initial(&p, s).unwrap();
        let cells = st.cells();
        left.push(cells[..p.wall].iter().map(|&c| c as f64).sum::<f64>() / p.wall as f64);
        right.push(cells[p.wall..].iter().map(|&c| c as f64).sum::<f64>() / (p.len - p.wall) as f64);
    }
    for (xs, target) in [(left, 0.4), (right, 0.1)] {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - target).abs() < 3.0 * (var / n).sqrt() + 1e-12, "{mean} vs {target}");
    }
}

#[test]
fn empty_lattice_carries_no_current() {
    let mut p = Protocol::homogeneous(2000, 3, 0.0, vec![0, 40], 8, 1);
    p.window = 0;
    let acc = run_ensemble(&p, Some(1)).unwrap();
    for ti in 0..2 {
        let c = measure_current(&p, &acc, ti).unwrap();
        assert_eq!(c.current, 0.0);
        assert_eq!(c.load_frequency[0], 1.0);
        assert!(measure_ball_density(&p, &acc, ti).iter().all(|q| q.mean == 0.0));
    }
}

#[test]
fn flat_profile_stays_flat() {
    let mut p = Protocol::homogeneous(6000, 2, 0.25, vec![100], 200, 3);
    p.window = 0;
    let acc = run_ensemble(&p, None).unwrap();
    let prof = measure_ball_density(&p, &acc, 0);
    // Average in blocks so the check is not dominated by a few outlying sites.
    let mut worst: f64 = 0.0;
    for block in prof.chunks(500) {
        let n = block.len() as f64;
        let m = block.iter().map(|q| q.mean).sum::<f64>() / n;
        let se = block.iter().map(|q| q.stderr * q.stderr).sum::<f64>().sqrt() / n;
        worst = worst.max(((m - 0.25) / se).abs());
    }
    assert!(worst < 4.0, "largest block deviation {worst} sigma");
}

#[test]
fn nothing_passes_the_fastest_front() {
    let l = 3;
    let t = 200;
    let mut p = Protocol::domain_wall(12000, l, 0.3, 0.0, vec![t], 40, 5);
    p.window = 0;
    let acc = run_ensemble(&p, None).unwrap();
    let prof = solve_domain_wall_densities(0.3, 0.0, l, WidthSector::Right).unwrap();
    // No soliton moves faster than l sites per step.
    let edge = (l as usize * t) as i64 + 1;
    assert!(prof.zeta(prof.sectors.len() - 1) <= l as f64 + 1e-12);
    for q in measure_ball_density(&p, &acc, 0) {
        if q.r > edge {
            assert_eq!(q.mean, 0.0, "ball beyond r = {edge} at {}", q.r);
        }
    }
}

#[test]
fn windowed_soliton_densities_match_the_equilibrium() {
    let l = 3;
    let p_ball = 0.3;
    let mut p = Protocol::homogeneous(20000, l, p_ball, vec![0, 60], 60, 8);
    p.window = 400;
    p.stride = 400;
    let acc = run_ensemble(&p, None).unwrap();
    let rho = solve_domain_wall_densities(p_ball, p_ball, l, WidthSector::Right).unwrap().sectors[0].rho.clone();
    for ti in 0..2 {
        let pts = measure_soliton_density(&p, &acc, ti);
        for j in 1..=l as usize {
            let sel: Vec<_> = pts.iter().filter(|q| q.amplitude == j).collect();
            let n = sel.len() as f64;
            let m = sel.iter().map(|q| q.mean).sum::<f64>() / n;
            let se = sel.iter().map(|q| q.stderr * q.stderr).sum::<f64>().sqrt() / n;
            assert!((m - rho[j - 1]).abs() < 4.0 * se + 2e-3 * rho[j - 1], "t index {ti}, j = {j}: {m} ± {se} vs {}", rho[j - 1]);
        }
    }
}

#[test]
fn fronts_sit_at_their_hydrodynamic_positions() {
    let l = 2;
    let times = vec![400, 800];
    let mut p = Protocol::domain_wall(10000, l, 0.35, 0.0, times.clone(), 3000, 21);
    p.window = 0;
    let acc = run_ensemble(&p, None).unwrap();
    let prof = solve_domain_wall_densities(0.35, 0.0, l, WidthSector::Right).unwrap();
    let zeta = prof.zeta(1);
    let data: Vec<StepData> = (0..times.len())
        .map(|ti| {
            let t = times[ti] as f64;
            let pts: Vec<_> = measure_ball_density(&p, &acc, ti)
                .into_iter()
                .filter(|q| ((q.r as f64) - zeta * t).abs() < 4.0 * prof.sectors[1].width * t.sqrt() + 10.0)
                .collect();
            StepData { t, r: pts.iter().map(|q| q.r as f64).collect(), mean: pts.iter().map(|q| q.mean).collect(), stderr: pts.iter().map(|q| q.stderr).collect() }
        })
        .collect();
    let fit = fit_step(&data, zeta).unwrap();
    // Fronts carry an O(1) lattice shift that does not grow with time.
    assert!((fit.offset - WALL_R).abs() < 3.0 + 3.0 * fit.offset_stderr, "offset {} ± {}", fit.offset, fit.offset_stderr);
    assert!((fit.width - prof.sectors[1].width).abs() < 3.0 * fit.width_stderr, "width {} ± {}", fit.width, fit.width_stderr);
    assert!((fit.left - prof.height(0)).abs() < 0.01);
    assert!((fit.right - prof.height(1)).abs() < 0.01);
}
