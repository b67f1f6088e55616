//! Markdown, CSV and SVG rendering of persisted runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gw_electric_core::harness::{lambda_label, record_to_csv};
use gw_electric_core::{Mode, ResultRecord, Result};

use crate::svg::{Plot, Series};

fn legend(record: &ResultRecord) -> String {
    format!("seed {} [{}]", record.seed, &record.run_id[..8])
}

fn per_step(record: &ResultRecord, observable: &str, statistic: &str) -> Vec<(f64, f64)> {
    record
        .derived
        .iter()
        .filter(|d| d.observable == observable && d.statistic == statistic)
        .filter_map(|d| d.n.map(|n| (n as f64, d.value)))
        .collect()
}

/// `n x_n` against `n` with the `1/c1` reference of each run.
pub fn conductance_plot(records: &[&ResultRecord]) -> Plot {
    let mut plot = Plot {
        title: "n x_n against n".into(),
        x_label: "n".into(),
        y_label: "n x_n".into(),
        ..Plot::default()
    };
    for (i, r) in records.iter().enumerate() {
        let points = per_step(r, "n_x_hat", "value");
        let (Some(first), Some(last)) = (points.first(), points.last()) else {
            continue;
        };
        let inv_c1 = 1.0 / r.model.constants.c1;
        let span = [(first.0, inv_c1), (last.0, inv_c1)];
        plot.series.push(Series {
            label: legend(r),
            points,
            color: i,
            dashed: false,
        });
        plot.series.push(Series {
            label: format!("1/c1 = {inv_c1:.4}"),
            points: span.to_vec(),
            color: i,
            dashed: true,
        });
    }
    plot
}

/// `n^2 (x_n - 1/(c1 n))` against `ln n` with the fitted line and the
/// reference slope `-c4/c1^2`.
pub fn log_fit_plot(records: &[&ResultRecord]) -> Plot {
    let mut plot = Plot {
        title: "log correction".into(),
        x_label: "ln n".into(),
        y_label: "n^2 (x_n - 1/(c1 n))".into(),
        ..Plot::default()
    };
    for (i, r) in records.iter().enumerate() {
        let Some(traj) = r.trajectories.first() else {
            continue;
        };
        let c1 = r.model.constants.c1;
        let fit = |stat: &str| r.derived_value(None, "log_fit", stat);
        let lo = fit("n_lo").map_or(10, |v| v as usize).min(traj.steps());
        let hi = fit("n_hi").map_or(traj.steps(), |v| v as usize);
        let points: Vec<(f64, f64)> = (lo..=hi)
            .map(|n| {
                let nf = n as f64;
                (nf.ln(), nf * nf * (traj.x_mean(n) - 1.0 / (c1 * nf)))
            })
            .collect();
        plot.series.push(Series {
            label: legend(r),
            points,
            color: i,
            dashed: false,
        });
        if let (Some(slope), Some(intercept)) = (fit("slope"), fit("intercept")) {
            let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
            plot.series.push(Series {
                label: format!("fit, slope {slope:.4}"),
                points: vec![(a, intercept + slope * a), (b, intercept + slope * b)],
                color: i,
                dashed: true,
            });
            let se = fit("slope_se").unwrap_or(f64::NAN);
            plot.notes.push(format!(
                "{}: slope {slope:.4} +- {se:.4}, -c4/c1^2 = {:.4}",
                legend(r),
                r.model.constants.log_slope()
            ));
        }
    }
    plot
}

/// `(lambda/m)^n x_n` against `n` for every lambda of every run.
pub fn lambda_plot(records: &[&ResultRecord]) -> Plot {
    let mut plot = Plot {
        title: "lambda-rescaled conductance".into(),
        x_label: "n".into(),
        y_label: "(lambda/m)^n x_n".into(),
        ..Plot::default()
    };
    let mut color = 0;
    for r in records {
        for traj in &r.trajectories {
            let label = format!("rescaled@{}", lambda_label(traj.lambda));
            plot.series.push(Series {
                label: format!("{}, lambda={}", legend(r), traj.lambda),
                points: per_step(r, &label, "value"),
                color,
                dashed: false,
            });
            if let Some(limit) = r.derived_value(None, &label, "limit") {
                plot.notes.push(format!("{} lambda={}: limit {limit:.5}", legend(r), traj.lambda));
            }
            color += 1;
        }
    }
    plot
}

fn fmt_value(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{v}")
    } else {
        format!("{v:.6e}")
    }
}

pub fn markdown(records: &[ResultRecord], figures: &[&str]) -> String {
    let mut md = String::from("# Run report\n\n");
    md.push_str("| run | name | mode | seed | m | p1 m | c1 | -c4/c1^2 |\n");
    md.push_str("|---|---|---|---|---|---|---|---|\n");
    for r in records {
        let c = &r.model.constants;
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} | {:.6} | {:.6} |",
            r.run_id,
            r.config.name.as_deref().unwrap_or("-"),
            r.mode.as_str(),
            r.seed,
            r.model.m,
            r.model.p1_m,
            c.c1,
            c.log_slope()
        );
    }
    for r in records {
        let _ = writeln!(md, "\n## {} ({})\n", r.run_id, r.mode.as_str());
        let rows: Vec<_> = match r.mode {
            Mode::Tree => r.derived.iter().collect(),
            _ => r
                .derived
                .iter()
                .filter(|d| d.n.is_none() || d.observable == "c0")
                .collect(),
        };
        if rows.is_empty() {
            md.push_str("No derived statistics.\n");
            continue;
        }
        md.push_str("| n | observable | statistic | value |\n|---|---|---|---|\n");
        for d in rows {
            let n = d.n.map_or_else(|| "-".to_string(), |n| n.to_string());
            let _ = writeln!(md, "| {n} | {} | {} | {} |", d.observable, d.statistic, fmt_value(d.value));
        }
    }
    if !figures.is_empty() {
        md.push_str("\n## Figures\n\n");
        for f in figures {
            let _ = writeln!(md, "![{f}]({f})");
        }
    }
    md
}

/// All rows of all runs under one header.
pub fn combined_csv(records: &[ResultRecord]) -> Result<String> {
    let mut out = String::new();
    for (i, r) in records.iter().enumerate() {
        let csv = record_to_csv(r)?;
        let body = if i == 0 {
            csv.as_str()
        } else {
            csv.split_once('\n').map_or("", |(_, rest)| rest)
        };
        out.push_str(body);
    }
    Ok(out)
}

pub fn write_report(records: &[ResultRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut figures = Vec::new();

    let curves: Vec<&ResultRecord> = records
        .iter()
        .filter(|r| matches!(r.mode, Mode::Tree | Mode::Pool))
        .collect();
    let critical: Vec<&ResultRecord> = records
        .iter()
        .filter(|r| r.mode == Mode::Pool && r.trajectories.first().is_some_and(|t| t.lambda == t.m))
        .collect();
    let lambdas: Vec<&ResultRecord> = records.iter().filter(|r| r.mode == Mode::Lambda).collect();
    let plots = [
        ("n_x_hat.svg", curves.is_empty(), conductance_plot(&curves)),
        ("log_fit.svg", critical.is_empty(), log_fit_plot(&critical)),
        ("lambda.svg", lambdas.is_empty(), lambda_plot(&lambdas)),
    ];
    for (name, skip, plot) in plots {
        if skip {
            continue;
        }
        let path = dir.join(name);
        fs::write(&path, plot.render())?;
        written.push(path);
        figures.push(name);
    }

    let csv = dir.join("report.csv");
    fs::write(&csv, combined_csv(records)?)?;
    written.push(csv);
    let md = dir.join("report.md");
    fs::write(&md, markdown(records, &figures))?;
    written.push(md);
    Ok(written)
}
