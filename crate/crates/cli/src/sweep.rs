//! Independent runs over the values of one scalar parameter.

use std::fs;
use std::path::Path;

use anyhow::{bail, Result};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{from_table, parse_override};
use crate::output::{write_json, Table};
use crate::solve::{self, Report};
use crate::Status;

struct Instance {
    value: String,
    outcome: Result<Report>,
}

/// Runs one instance per value, concurrently, each writing to its own
/// subdirectory of `out_dir`. Returns the worst instance status.
pub fn sweep(
    table: &toml::Table,
    overrides: &[String],
    base_dir: &Path,
    key: &str,
    values: &[String],
    out_dir: &Path,
) -> Result<Status> {
    let values: Vec<String> = values.iter().map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        bail!("sweep needs at least one value for {key}");
    }
    for v in &values {
        let (_, parsed) = parse_override(&format!("{key}={v}"))?;
        if parsed.is_table() || parsed.is_array() {
            bail!("sweep key {key} must address a scalar parameter, got value {v}");
        }
    }
    // Reject bad keys before any solver runs.
    let mut probe = overrides.to_vec();
    probe.push(format!("{key}={}", values[0]));
    let loaded = from_table(table.clone(), &probe, base_dir.to_path_buf())?;
    let problem = loaded.config.problem;

    let instances: Vec<Instance> = values
        .par_iter()
        .map(|v| {
            let mut items = overrides.to_vec();
            items.push(format!("{key}={v}"));
            let outcome = from_table(table.clone(), &items, base_dir.to_path_buf()).and_then(|l| {
                let (report, _) = solve::run(&l)?;
                let dir = out_dir.join(format!("{key}={v}"));
                fs::create_dir_all(&dir)?;
                crate::write_report(&dir, &l, &report)?;
                Ok(report)
            });
            Instance { value: v.clone(), outcome }
        })
        .collect();

    let mut combined: Option<Table> = None;
    let mut summaries = Vec::new();
    let mut worst = Status::Ok;
    for inst in &instances {
        match &inst.outcome {
            Ok(report) => {
                let primary = &report.tables[0];
                let t = combined.get_or_insert_with(|| {
                    let mut header = vec![key.to_string()];
                    header.extend(primary.header.iter().cloned());
                    Table { name: "sweep".into(), header, rows: Vec::new() }
                });
                for row in &primary.rows {
                    let mut r = vec![inst.value.clone()];
                    r.extend(row.iter().cloned());
                    t.rows.push(r);
                }
                if !report.converged {
                    worst = worst.max(Status::NotConverged);
                }
                summaries.push(json!({
                    "value": inst.value,
                    "status": if report.converged { "converged" } else { "not_converged" },
                    "summary": report.summary,
                }));
            }
            Err(e) => {
                worst = Status::Failed;
                summaries.push(json!({ "value": inst.value, "status": "error", "error": format!("{e:#}") }));
            }
        }
    }
    // Sup-norm distance between consecutive instances on a shared grid.
    let reports: Vec<&Report> = instances.iter().filter_map(|i| i.outcome.as_ref().ok()).collect();
    let distances: Option<Vec<f64>> = (reports.len() == instances.len()
        && reports.windows(2).all(|w| w[0].values.len() == w[1].values.len()))
    .then(|| {
        reports
            .windows(2)
            .map(|w| w[0].values.iter().zip(&w[1].values).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
            .collect()
    });

    fs::create_dir_all(out_dir)?;
    if let Some(t) = &combined {
        t.write(out_dir)?;
    }
    let summary = json!({
        "problem": problem.name(),
        "key": key,
        "values": values,
        "instances": summaries,
        "consecutive_distances": distances,
        "status": worst.name(),
    });
    write_json(out_dir, "sweep_summary.json", &summary)?;
    Ok(worst)
}
