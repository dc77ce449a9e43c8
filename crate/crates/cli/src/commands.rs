//! Batch commands. Each returns the full CSV text; rows follow input order.

use std::fmt::Write;

use cev_fb::{PriceReport, Pricer, StepController};
use rayon::prelude::*;

use crate::config::{ConfigError, RunConfig};
use crate::CliError;

fn value(x: f64) -> String {
    format!("{x:.9}")
}

fn sci(x: f64) -> String {
    format!("{x:.6e}")
}

fn price_one(config: &RunConfig, strike: f64, h: f64, controller: &StepController) -> cev_fb::Result<PriceReport> {
    Pricer::new(config.params(strike), config.scheme, config.grid_at(h))?.run(controller)
}

fn price_all(
    config: &RunConfig,
    jobs: &[(f64, StepController)],
    h: f64,
) -> Result<Vec<PriceReport>, CliError> {
    let reports: cev_fb::Result<Vec<_>> = jobs
        .par_iter()
        .map(|(strike, controller)| price_one(config, *strike, h, controller))
        .collect();
    Ok(reports?)
}

/// One row per strike.
pub fn cmd_price(config: &RunConfig) -> Result<String, CliError> {
    let h = config.require_h()?;
    let jobs: Vec<_> = config.strikes.iter().map(|k| (*k, config.controller)).collect();
    let reports = price_all(config, &jobs, h)?;
    let mut out = String::from("strike,scaled_value,value,delta,boundary,accepted,rejected");
    if config.timing {
        out.push_str(",wall_time");
    }
    out.push('\n');
    for r in &reports {
        write!(
            out,
            "{},{},{},{},{},{},{}",
            r.strike,
            value(r.scaled_value),
            value(r.value),
            value(r.delta),
            value(r.boundary),
            r.accepted,
            r.rejected
        )
        .unwrap();
        if config.timing {
            write!(out, ",{:.6}", r.wall_time.as_secs_f64()).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

/// Fixed-step boundary differences between successive spacings of `h_list`.
///
/// `max_diff` is the largest difference over all time levels and `maturity_diff` the
/// difference at maturity; rates are `log2` of successive ratios.
pub fn cmd_converge(config: &RunConfig) -> Result<String, CliError> {
    if config.h_list.is_empty() {
        return Err(ConfigError { line: None, key: Some("h_list".into()), message: "missing required key".into() }.into());
    }
    let jobs: Vec<(f64, f64)> = config
        .strikes
        .iter()
        .flat_map(|k| config.h_list.iter().map(move |h| (*k, *h)))
        .collect();
    let curves: cev_fb::Result<Vec<Vec<(f64, f64)>>> = jobs
        .par_iter()
        .map(|(strike, h)| {
            Pricer::new(config.params(*strike), config.scheme, config.grid_at(*h))?
                .run_fixed(config.fixed_step)
                .map(|r| r.boundary_history)
        })
        .collect();
    let curves = curves?;

    let mut out = String::from("strike,h,max_diff,rate,maturity_diff,maturity_rate,flag\n");
    let n = config.h_list.len();
    for (s, strike) in config.strikes.iter().enumerate() {
        let mut previous: Option<(f64, f64)> = None;
        for i in 0..n {
            let h = config.h_list[i];
            if i == 0 {
                writeln!(out, "{strike},{h},,,,,").unwrap();
                continue;
            }
            let (a, b) = (&curves[s * n + i - 1], &curves[s * n + i]);
            if a.len() != b.len() {
                return Err(cev_fb::Error::Dimension { expected: a.len(), found: b.len() }.into());
            }
            let max_diff = a.iter().zip(b).fold(0.0f64, |m, (p, q)| m.max((p.1 - q.1).abs()));
            let maturity_diff = (a.last().unwrap().1 - b.last().unwrap().1).abs();
            let rate = |prev: Option<f64>, cur: f64| match prev {
                Some(p) if p > 0.0 && cur > 0.0 => format!("{:.4}", (p / cur).log2()),
                _ => String::new(),
            };
            let flag = if max_diff == 0.0 { "zero_difference" } else { "" };
            writeln!(
                out,
                "{strike},{h},{},{},{},{},{flag}",
                sci(max_diff),
                rate(previous.map(|p| p.0), max_diff),
                sci(maturity_diff),
                rate(previous.map(|p| p.1), maturity_diff),
            )
            .unwrap();
            previous = Some((max_diff, maturity_diff));
        }
    }
    Ok(out)
}

/// Values for each tolerance in `eps_list` and each safety factor in `rho_list`.
pub fn cmd_sweep(config: &RunConfig) -> Result<String, CliError> {
    let h = config.require_h()?;
    if config.eps_list.is_empty() && config.rho_list.is_empty() {
        return Err(ConfigError {
            line: None,
            key: Some("eps_list".into()),
            message: "sweep needs eps_list or rho_list".into(),
        }
        .into());
    }
    let mut settings: Vec<(&str, f64, StepController)> = Vec::new();
    for eps in &config.eps_list {
        settings.push(("eps", *eps, StepController { eps: *eps, ..config.controller }));
    }
    for rho in &config.rho_list {
        settings.push(("rho", *rho, StepController { rho: *rho, ..config.controller }));
    }
    let jobs: Vec<_> = settings
        .iter()
        .flat_map(|(_, _, c)| config.strikes.iter().map(move |k| (*k, *c)))
        .collect();
    let reports = price_all(config, &jobs, h)?;
    let mut out = String::from("parameter,setting,strike,value,delta,accepted,rejected,mean_step\n");
    let per = config.strikes.len();
    for (i, (name, setting, _)) in settings.iter().enumerate() {
        for r in &reports[i * per..(i + 1) * per] {
            writeln!(
                out,
                "{name},{setting:e},{},{},{},{},{},{}",
                r.strike,
                value(r.value),
                value(r.delta),
                r.accepted,
                r.rejected,
                sci(r.mean_step)
            )
            .unwrap();
        }
    }
    Ok(out)
}

/// Boundary curve per strike: `(tau, S_f, k)` for the initial level and every accepted step.
///
/// Also returns the number of accepted steps on which the boundary rose, per strike.
pub fn cmd_boundary(config: &RunConfig) -> Result<(String, Vec<usize>), CliError> {
    let h = config.require_h()?;
    let jobs: Vec<_> = config.strikes.iter().map(|k| (*k, config.controller)).collect();
    let reports = price_all(config, &jobs, h)?;
    let mut out = String::from("strike,tau,boundary,k\n");
    for r in &reports {
        let steps = std::iter::once(0.0).chain(r.step_log.iter().filter(|e| e.accepted).map(|e| e.k));
        for ((tau, s_f), k) in r.boundary_history.iter().zip(steps) {
            writeln!(out, "{},{},{},{}", r.strike, value(*tau), value(*s_f), sci(k)).unwrap();
        }
    }
    Ok((out, reports.iter().map(|r| r.monotonicity_violations).collect()))
}
