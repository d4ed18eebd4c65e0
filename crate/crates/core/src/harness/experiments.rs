//! Experiment runners. Each returns per-replica rows followed by aggregate
//! rows (empty `replica`), in a fixed order.

use super::config::{ExperimentConfig, Mode, TGrid};
use super::output::ResultRow;
use crate::ancestry::{self, h};
use crate::cdi::SpeedTable;
use crate::coalescent::sample_block_counting;
use crate::error::{Error, Result};
use crate::lookdown::{self, Init, LookdownPath, Setup};
use crate::measure::LambdaMeasure;
use crate::par;
use crate::rng::replica_seed;
use crate::stats;

/// Largest fraction of replicas allowed to violate an upper bound.
pub const VIOLATION_BAND: f64 = 0.05;
/// Smallest fraction of replicas that must attain a lower bound.
pub const ATTAINMENT_BAND: f64 = 0.95;
/// Floor on the frequency of `N(s) >= exp(-24 s^alpha) v(s)`.
pub const NV_FREQUENCY_FLOOR: f64 = 0.9;
/// Band for the median of `N(s) / v(s)`.
pub const NV_MEDIAN_BAND: (f64, f64) = (0.5, 2.0);
/// Bound on the per-step slope of the log median `rho(t)/h(t)`.
pub const RHO_SLOPE_BAND: f64 = 0.1;
/// Significance level of the law check.
pub const LAW_P_THRESHOLD: f64 = 0.01;
/// Fewest replicas the law check accepts.
pub const LAW_MIN_REPLICAS: u64 = 200;

fn expect_mode(cfg: &ExperimentConfig, modes: &[Mode]) -> Result<()> {
    cfg.validate()?;
    if !modes.contains(&cfg.mode) {
        return Err(Error::Config(format!("config mode {} does not fit this runner", cfg.mode)));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn row(mode: Mode, replica: Option<u64>, eps: Option<f64>, t: Option<f64>, statistic: String, value: f64, target: f64, pass: bool) -> ResultRow {
    ResultRow {
        mode,
        replica,
        eps,
        t,
        statistic,
        value,
        target,
        pass,
    }
}

fn setup_for(cfg: &ExperimentConfig, checkpoints: Vec<f64>) -> Result<Setup> {
    Ok(Setup {
        n: cfg.n,
        d: cfg.d,
        horizon: cfg.horizon,
        checkpoints,
        init: cfg.initial()?,
        memory_budget: cfg.memory_budget,
    })
}

fn simulate_replica(measure: &LambdaMeasure, setup: &Setup, cfg: &ExperimentConfig, r: u64) -> Result<LookdownPath> {
    lookdown::simulate(measure, setup, replica_seed(cfg.seed, r))
}

struct Cell {
    k: u32,
    eps: f64,
    t: f64,
    ratio: f64,
}

struct ModulusSummary {
    // sup over cells with exponent <= k, per k of the grid
    cumulative: Vec<f64>,
    // per c: number of cells above c
    exceed: Vec<usize>,
}

fn scan_name(c: f64, target: f64) -> String {
    if c >= target {
        format!("violations_c{c}")
    } else {
        format!("attained_c{c}")
    }
}

fn modulus_rows(cfg: &ExperimentConfig, r: u64, cells: &[Cell], target: f64) -> (Vec<ResultRow>, ModulusSummary) {
    let mode = cfg.mode;
    let mut rows = Vec::with_capacity(cells.len() + 8);
    for c in cells {
        rows.push(row(mode, Some(r), Some(c.eps), Some(c.t), "ratio".into(), c.ratio, target, c.ratio <= target));
    }
    let sup = cells.iter().map(|c| c.ratio).fold(0.0, f64::max);
    rows.push(row(mode, Some(r), None, None, "sup_ratio".into(), sup, target, sup <= target));
    let mut cumulative = Vec::new();
    let mut running = 0.0f64;
    for k in cfg.eps_grid.exponents() {
        running = cells.iter().filter(|c| c.k == k).map(|c| c.ratio).fold(running, f64::max);
        cumulative.push(running);
        let eps = (-(k as f64)).exp2();
        rows.push(row(mode, Some(r), Some(eps), None, "sup_ratio_to_eps".into(), running, target, running <= target));
    }
    let mut exceed = Vec::new();
    for &c in &cfg.c_values {
        let count = cells.iter().filter(|cell| cell.ratio > c).count();
        let pass = if c >= target { count == 0 } else { count > 0 };
        rows.push(row(mode, Some(r), None, None, scan_name(c, target), count as f64, target, pass));
        exceed.push(count);
    }
    (rows, ModulusSummary { cumulative, exceed })
}

fn modulus_aggregates(cfg: &ExperimentConfig, summaries: &[ModulusSummary], target: f64) -> Vec<ResultRow> {
    let mode = cfg.mode;
    let mut rows = Vec::new();
    for (i, k) in cfg.eps_grid.exponents().enumerate() {
        let sups: Vec<f64> = summaries.iter().map(|s| s.cumulative[i]).collect();
        let med = stats::median(&sups);
        let eps = (-(k as f64)).exp2();
        rows.push(row(mode, None, Some(eps), None, "median_sup_ratio".into(), med, target, med <= target));
    }
    let reps = summaries.len() as f64;
    for (i, &c) in cfg.c_values.iter().enumerate() {
        let hit = summaries.iter().filter(|s| s.exceed[i] > 0).count() as f64 / reps;
        if c >= target {
            rows.push(row(mode, None, None, None, format!("violation_fraction_c{c}"), hit, target, hit <= VIOLATION_BAND));
        } else {
            rows.push(row(mode, None, None, None, format!("attained_fraction_c{c}"), hit, target, hit >= ATTAINMENT_BAND));
        }
    }
    rows
}

fn finish_modulus(cfg: &ExperimentConfig, target: f64, per_replica: Vec<(Vec<ResultRow>, ModulusSummary)>) -> Vec<ResultRow> {
    let (mut rows, mut summaries) = (Vec::new(), Vec::new());
    for (r, s) in per_replica {
        rows.extend(r);
        summaries.push(s);
    }
    rows.extend(modulus_aggregates(cfg, &summaries, target));
    rows
}

/// Global modulus: `sup_{eps, t} H^t(t - eps, t) / h(eps)` over the grid
/// cells with `eps <= t`.
pub fn run_global_modulus(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    expect_mode(cfg, &[Mode::Global])?;
    let measure = cfg.lambda()?;
    let target = cfg.target()?;
    let times = cfg.times();
    let grid: Vec<(u32, f64)> = cfg.eps_grid.exponents().zip(cfg.eps_grid.values()).collect();
    let mut cps = Vec::new();
    for &t in &times {
        cps.push(t);
        cps.extend(grid.iter().map(|&(_, e)| t - e).filter(|&s| s >= 0.0));
    }
    let setup = setup_for(cfg, cps)?;
    let per_replica = par::map_replicas(cfg.replicas, |r| {
        let path = simulate_replica(&measure, &setup, cfg, r)?;
        let mut cells = Vec::new();
        for &t in &times {
            let here: Vec<(u32, f64)> = grid.iter().copied().filter(|&(_, e)| e <= t).collect();
            let eps: Vec<f64> = here.iter().map(|&(_, e)| e).collect();
            let hs = ancestry::dislocations_back_from(&path, t, &eps, cfg.n)?;
            for (&(k, e), hv) in here.iter().zip(hs) {
                cells.push(Cell { k, eps: e, t, ratio: hv / h(e) });
            }
        }
        Ok(modulus_rows(cfg, r, &cells, target))
    })?;
    Ok(finish_modulus(cfg, target, per_replica))
}

/// Local modulus at a fixed time: left uses `H^t(t - eps, t)` at
/// `t = fixed_time` (default: horizon), right uses `H^{s+eps}(s, s + eps)` at
/// `s = fixed_time` (default 0).
pub fn run_local_modulus(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    expect_mode(cfg, &[Mode::LocalLeft, Mode::LocalRight])?;
    let measure = cfg.lambda()?;
    let target = cfg.target()?;
    let grid: Vec<(u32, f64)> = cfg.eps_grid.exponents().zip(cfg.eps_grid.values()).collect();
    let left = cfg.mode == Mode::LocalLeft;
    let anchor = cfg.fixed_time.unwrap_or(if left { cfg.horizon } else { 0.0 });
    let cps: Vec<f64> = if left {
        if grid.iter().any(|&(_, e)| e >= anchor) || anchor > cfg.horizon {
            return Err(Error::Config(format!(
                "left mode needs every eps below t = {anchor} and t within the horizon"
            )));
        }
        std::iter::once(anchor).chain(grid.iter().map(|&(_, e)| anchor - e)).collect()
    } else {
        if anchor < 0.0 || grid.iter().any(|&(_, e)| anchor + e > cfg.horizon) {
            return Err(Error::Config(format!("right mode needs s = {anchor} >= 0 and s + eps within the horizon")));
        }
        std::iter::once(anchor).chain(grid.iter().map(|&(_, e)| anchor + e)).collect()
    };
    let setup = setup_for(cfg, cps)?;
    let per_replica = par::map_replicas(cfg.replicas, |r| {
        let path = simulate_replica(&measure, &setup, cfg, r)?;
        let cells = if left {
            let eps: Vec<f64> = grid.iter().map(|&(_, e)| e).collect();
            let hs = ancestry::dislocations_back_from(&path, anchor, &eps, cfg.n)?;
            grid.iter()
                .zip(hs)
                .map(|(&(k, e), hv)| Cell { k, eps: e, t: anchor, ratio: hv / h(e) })
                .collect::<Vec<_>>()
        } else {
            grid.iter()
                .map(|&(k, e)| {
                    let hv = ancestry::dislocation_h(&path, anchor, anchor + e, anchor + e, cfg.n)?;
                    Ok(Cell { k, eps: e, t: anchor + e, ratio: hv / h(e) })
                })
                .collect::<Result<Vec<_>>>()?
        };
        Ok(modulus_rows(cfg, r, &cells, target))
    })?;
    Ok(finish_modulus(cfg, target, per_replica))
}

/// Times for the rho check: the explicit t grid, or `2^-k` over the eps grid.
fn rho_times(cfg: &ExperimentConfig) -> Vec<f64> {
    match &cfg.t_grid {
        TGrid::List(v) => v.clone(),
        TGrid::Count(_) => cfg.eps_grid.values(),
    }
}

/// `rho(t) / h(t)` from a point mass at the origin.
pub fn run_rho_origin(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    expect_mode(cfg, &[Mode::RhoOrigin])?;
    match cfg.initial()? {
        Init::Point(p) if p.iter().all(|&x| x == 0.0) => {}
        _ => return Err(Error::Config("rho_origin needs all initial positions at the origin".into())),
    }
    let measure = cfg.lambda()?;
    let target = cfg.target()?;
    let times = rho_times(cfg);
    if times.iter().any(|&t| !(t > 0.0 && t < 1.0 && t <= cfg.horizon)) {
        return Err(Error::Config("rho times must lie in (0, 1) and within the horizon".into()));
    }
    let setup = setup_for(cfg, times.clone())?;
    let mode = cfg.mode;
    let per_replica = par::map_replicas(cfg.replicas, |r| {
        let path = simulate_replica(&measure, &setup, cfg, r)?;
        times
            .iter()
            .map(|&t| Ok(ancestry::support_radius(&path, t, cfg.n)? / h(t)))
            .collect::<Result<Vec<f64>>>()
    })?;
    let mut rows = Vec::new();
    for (r, ratios) in per_replica.iter().enumerate() {
        for (&t, &ratio) in times.iter().zip(ratios) {
            rows.push(row(mode, Some(r as u64), None, Some(t), "rho_ratio".into(), ratio, target, ratio <= target));
        }
    }
    let mut log_medians = Vec::new();
    for (i, &t) in times.iter().enumerate() {
        let col: Vec<f64> = per_replica.iter().map(|v| v[i]).collect();
        let med = stats::median(&col);
        log_medians.push(med.ln());
        rows.push(row(mode, None, None, Some(t), "median_rho_ratio".into(), med, target, med <= target));
    }
    if times.len() >= 2 {
        let steps: Vec<f64> = times.iter().map(|t| -t.log2()).collect();
        let slope = stats::slope(&steps, &log_medians);
        rows.push(row(mode, None, None, None, "log_ratio_slope".into(), slope, target, slope.abs() < RHO_SLOPE_BAND));
    }
    Ok(rows)
}

/// Block counts from `n0` against the speed function: `N(s) / v(s)` and the
/// indicator of `N(s) >= exp(-24 s^alpha) v(s)`.
pub fn run_nv_check(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    expect_mode(cfg, &[Mode::NvCheck])?;
    if cfg.s_values.is_empty() {
        return Err(Error::Config("nv_check needs s_values".into()));
    }
    if cfg.s_values.iter().any(|&s| !(s > 0.0 && s < cfg.horizon)) {
        return Err(Error::Config(format!("every s must lie in (0, horizon = {})", cfg.horizon)));
    }
    let measure = cfg.lambda()?;
    let table = SpeedTable::new(&measure)?;
    let v: Vec<f64> = cfg.s_values.iter().map(|&s| table.v(s)).collect::<Result<_>>()?;
    let floor: Vec<f64> = cfg.s_values.iter().map(|&s| (-24.0 * s.powf(cfg.alpha_star)).exp()).collect();
    let n0 = cfg.n0.unwrap_or(cfg.n as u64);
    let s_max = cfg.s_values.iter().copied().fold(0.0, f64::max);
    let counts = par::map_replicas(cfg.replicas, |r| {
        let path = sample_block_counting(&measure, n0, s_max, replica_seed(cfg.seed, r))?;
        Ok(cfg.s_values.iter().map(|&s| path.count_at(s)).collect::<Vec<u64>>())
    })?;
    let mode = cfg.mode;
    let mut rows = Vec::new();
    for (r, c) in counts.iter().enumerate() {
        for (i, &s) in cfg.s_values.iter().enumerate() {
            let ratio = c[i] as f64 / v[i];
            rows.push(row(mode, Some(r as u64), None, Some(s), "n_over_v".into(), ratio, floor[i], ratio >= floor[i]));
        }
    }
    for (i, &s) in cfg.s_values.iter().enumerate() {
        let ratios: Vec<f64> = counts.iter().map(|c| c[i] as f64 / v[i]).collect();
        let freq = ratios.iter().filter(|&&x| x >= floor[i]).count() as f64 / ratios.len() as f64;
        let med = stats::median(&ratios);
        let bound = crate::cdi::v_lower_bound(&measure, s);
        rows.push(row(mode, None, None, Some(s), "v".into(), v[i], bound, v[i] >= bound));
        rows.push(row(mode, None, None, Some(s), "frequency".into(), freq, floor[i], freq >= NV_FREQUENCY_FLOOR));
        rows.push(row(
            mode,
            None,
            None,
            Some(s),
            "median_n_over_v".into(),
            med,
            1.0,
            (NV_MEDIAN_BAND.0..=NV_MEDIAN_BAND.1).contains(&med),
        ));
    }
    Ok(rows)
}

/// Two-sample KS comparison of the lookdown-recovered `N(t - r, t)` (with
/// `t` the horizon) against direct block counts `N(r)` from `n` blocks.
pub fn run_law_check(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    expect_mode(cfg, &[Mode::LawCheck])?;
    if cfg.replicas < LAW_MIN_REPLICAS {
        return Err(Error::Config(format!(
            "law_check needs at least {LAW_MIN_REPLICAS} replicas, got {}",
            cfg.replicas
        )));
    }
    if cfg.r_values.is_empty() || cfg.r_values.iter().any(|&r| !(r > 0.0 && r <= cfg.horizon)) {
        return Err(Error::Config("law_check needs r_values in (0, horizon]".into()));
    }
    let measure = cfg.lambda()?;
    let direct_measure = match &cfg.compare_measure {
        Some(spec) => LambdaMeasure::parse(spec)?,
        None => measure.clone(),
    };
    let t = cfg.horizon;
    let r_max = cfg.r_values.iter().copied().fold(0.0, f64::max);
    let pairs = par::map_replicas(cfg.replicas, |rep| {
        let seed = replica_seed(cfg.seed, rep);
        let log = lookdown::generate_events(&measure, cfg.n, t, &[], seed)?;
        let s_values: Vec<f64> = cfg.r_values.iter().map(|r| t - r).collect();
        let mut walker = ancestry::AncestryWalker::new(&log, t, cfg.n)?;
        let mut order: Vec<usize> = (0..s_values.len()).collect();
        order.sort_by(|&a, &b| s_values[b].total_cmp(&s_values[a]));
        let mut recovered = vec![0u64; s_values.len()];
        for i in order {
            walker.rewind_to(s_values[i])?;
            recovered[i] = walker.block_count() as u64;
        }
        let path = sample_block_counting(&direct_measure, cfg.n as u64, r_max, seed)?;
        let direct: Vec<u64> = cfg.r_values.iter().map(|&r| path.count_at(r)).collect();
        Ok((recovered, direct))
    })?;
    let mode = cfg.mode;
    let mut rows = Vec::new();
    for (rep, (rec, dir)) in pairs.iter().enumerate() {
        for (i, &r) in cfg.r_values.iter().enumerate() {
            rows.push(row(mode, Some(rep as u64), Some(r), Some(t), "lookdown_blocks".into(), rec[i] as f64, LAW_P_THRESHOLD, true));
            rows.push(row(mode, Some(rep as u64), Some(r), Some(t), "direct_blocks".into(), dir[i] as f64, LAW_P_THRESHOLD, true));
        }
    }
    for (i, &r) in cfg.r_values.iter().enumerate() {
        let a: Vec<f64> = pairs.iter().map(|p| p.0[i] as f64).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1[i] as f64).collect();
        let ks = stats::ks_two_sample(&a, &b);
        let pass = ks.p_value > LAW_P_THRESHOLD;
        rows.push(row(mode, None, Some(r), Some(t), "ks_statistic".into(), ks.statistic, LAW_P_THRESHOLD, pass));
        rows.push(row(mode, None, Some(r), Some(t), "ks_p_value".into(), ks.p_value, LAW_P_THRESHOLD, pass));
    }
    Ok(rows)
}

/// Dispatch on the config's mode.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    match cfg.mode {
        Mode::Global => run_global_modulus(cfg),
        Mode::LocalLeft | Mode::LocalRight => run_local_modulus(cfg),
        Mode::RhoOrigin => run_rho_origin(cfg),
        Mode::NvCheck => run_nv_check(cfg),
        Mode::LawCheck => run_law_check(cfg),
    }
}

/// The aggregate row with this statistic (and `t`, when given).
pub fn aggregate<'a>(rows: &'a [ResultRow], statistic: &str, t: Option<f64>) -> Option<&'a ResultRow> {
    rows.iter()
        .find(|r| r.replica.is_none() && r.statistic == statistic && (t.is_none() || r.t == t))
}

#[cfg(test)]
mod tests {
    use super::super::config::EpsGrid;
    use super::*;

    fn small(mode: Mode, measure: &str) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(mode, measure);
        cfg.n = 30;
        cfg.replicas = 4;
        cfg.seed = 17;
        cfg.eps_grid = EpsGrid { k_min: 3, k_max: 5 };
        cfg
    }

    #[test]
    fn singleton_grid_reduces_to_one_dislocation() {
        let mut cfg = small(Mode::Global, "kingman:1");
        cfg.eps_grid = EpsGrid { k_min: 3, k_max: 3 };
        cfg.t_grid = TGrid::List(vec![0.5]);
        cfg.replicas = 1;
        let rows = run_global_modulus(&cfg).unwrap();
        let path = lookdown::simulate(&cfg.lambda().unwrap(), &setup_for(&cfg, vec![0.5, 0.375]).unwrap(), replica_seed(17, 0)).unwrap();
        let direct = ancestry::dislocation_h(&path, 0.375, 0.5, 0.5, 30).unwrap() / h(0.125);
        let sup = rows.iter().find(|r| r.statistic == "sup_ratio").unwrap();
        assert_eq!(sup.value, direct);
        assert_eq!(sup.target, 2.0);
    }

    #[test]
    fn ratios_are_translation_invariant() {
        let mut cfg = small(Mode::Global, "beta:1.5");
        cfg.t_grid = TGrid::Count(4);
        let a = run_global_modulus(&cfg).unwrap();
        cfg.init = "point:12.5".into();
        let b = run_global_modulus(&cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x.value - y.value).abs() < 1e-9 * x.value.abs().max(1.0));
        }
    }

    #[test]
    fn one_sided_scans_are_separate() {
        let mut cfg = small(Mode::LocalLeft, "kingman:1");
        cfg.c_values = vec![0.5, 3.0];
        let rows = run_local_modulus(&cfg).unwrap();
        assert!(aggregate(&rows, "attained_fraction_c0.5", None).is_some());
        assert!(aggregate(&rows, "violation_fraction_c3", None).is_some());
        assert!(rows.iter().all(|r| (r.target - 2f64.sqrt()).abs() < 1e-15));
        cfg.fixed_time = Some(0.1);
        assert!(matches!(run_local_modulus(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn right_mode_at_zero_matches_rho_from_origin() {
        let mut right = small(Mode::LocalRight, "beta:1.5");
        right.eps_grid = EpsGrid { k_min: 4, k_max: 4 };
        let mut rho = right.clone();
        rho.mode = Mode::RhoOrigin;
        // right mode registers {0, eps}; rho registers {eps}: same checkpoint set
        let a = run_local_modulus(&right).unwrap();
        let b = run_rho_origin(&rho).unwrap();
        for r in 0..right.replicas {
            let x = a.iter().find(|row| row.replica == Some(r) && row.statistic == "sup_ratio").unwrap();
            let y = b.iter().find(|row| row.replica == Some(r) && row.statistic == "rho_ratio").unwrap();
            assert_eq!(x.value, y.value);
        }
    }

    #[test]
    fn nv_check_rejects_late_s_and_non_cdi_measures() {
        let mut cfg = small(Mode::NvCheck, "kingman:1");
        cfg.s_values = vec![1.0];
        assert!(matches!(run_nv_check(&cfg), Err(Error::Config(_))));
        let dir = tempfile::tempdir().unwrap();
        let table = dir.path().join("flat.csv");
        std::fs::write(&table, "x,density\n0.5,1\n1,1\n").unwrap();
        let mut cfg = small(Mode::NvCheck, &format!("table:{}", table.display()));
        cfg.s_values = vec![0.1];
        assert!(matches!(run_nv_check(&cfg), Err(Error::StaysInfinite(_))));
    }

    #[test]
    fn kingman_nv_ratio_is_near_one() {
        let mut cfg = small(Mode::NvCheck, "kingman:1");
        cfg.n0 = Some(10_000);
        cfg.s_values = vec![0.01];
        cfg.replicas = 200;
        let rows = run_nv_check(&cfg).unwrap();
        let med = aggregate(&rows, "median_n_over_v", Some(0.01)).unwrap().value;
        assert!((0.8..=1.25).contains(&med), "{med}");
        assert!(aggregate(&rows, "frequency", Some(0.01)).unwrap().value >= 0.9);
    }

    #[test]
    fn law_check_refuses_few_replicas() {
        let mut cfg = small(Mode::LawCheck, "kingman:1");
        cfg.r_values = vec![0.1];
        assert!(matches!(run_law_check(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn law_check_separates_mismatched_measures() {
        let mut cfg = small(Mode::LawCheck, "beta:1.2");
        cfg.compare_measure = Some("beta:1.8".into());
        cfg.replicas = 400;
        cfg.r_values = vec![0.5];
        let rows = run_law_check(&cfg).unwrap();
        let p = aggregate(&rows, "ks_p_value", None).unwrap();
        assert!(p.value < LAW_P_THRESHOLD && !p.pass);
    }

    #[test]
    fn runs_are_reproducible() {
        let mut cfg = small(Mode::RhoOrigin, "mix:0.5+beta:1.5");
        cfg.horizon = 0.5;
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(super::super::output::to_csv(&a).unwrap(), super::super::output::to_csv(&b).unwrap());
    }
}
