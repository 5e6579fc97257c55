//! Result files: `results.csv`, `nodes.jsonl`, `timings.csv` and the
//! `series_*.csv` plot data.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use csv::Writer;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scenario::ScheduleResult;

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Solver(format!("csv output: {other:?}")),
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Long format: `hour,group,quantity,value`, grouped into `summary`,
/// `controls` and `voltage` rows. Contains no timings, so replays are
/// byte-identical.
pub fn write_results_csv<W: Write>(w: W, r: &ScheduleResult) -> Result<()> {
    let mut out = Writer::from_writer(w);
    out.write_record(["hour", "group", "quantity", "value"]).map_err(csv_err)?;
    for h in &r.hours {
        let hour = h.hour.to_string();
        let vmin = h.voltages.iter().copied().fold(f64::INFINITY, f64::min);
        let vmax = h.voltages.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let status = serde_json::to_value(h.status)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        let summary = [
            ("status", status),
            ("feasible", h.feasible.to_string()),
            ("violations", h.violations.to_string()),
            ("load", h.load.to_string()),
            ("rho_a", h.rho_a.to_string()),
            ("rho_r", h.rho_r.to_string()),
            ("cost", h.cost.to_string()),
            ("model_cost", fmt_opt(h.model_cost)),
            ("energy_demand_kwh", h.energy_demand_kwh.to_string()),
            ("loss_copper_kwh", h.loss_copper_kwh.to_string()),
            ("loss_core_kwh", h.loss_core_kwh.to_string()),
            ("v_min", vmin.to_string()),
            ("v_max", vmax.to_string()),
        ];
        for (q, v) in summary {
            out.write_record([hour.as_str(), "summary", q, &v]).map_err(csv_err)?;
        }
        for (q, v) in r.control_labels.iter().zip(&h.decision) {
            out.write_record([hour.as_str(), "controls", q, &v.to_string()]).map_err(csv_err)?;
        }
        for (id, v) in r.bus_ids.iter().zip(&h.voltages) {
            out.write_record([hour.as_str(), "voltage", &format!("bus_{id}"), &v.to_string()])
                .map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct NodeLine<'a> {
    hour: usize,
    #[serde(flatten)]
    node: &'a crate::bc::NodeRecord,
}

/// One JSON object per branch-and-cut node, tagged with its hour.
pub fn write_nodes_jsonl<W: Write>(mut w: W, r: &ScheduleResult) -> Result<()> {
    for h in &r.hours {
        for node in &h.nodes {
            let line = serde_json::to_string(&NodeLine { hour: h.hour, node })
                .map_err(|e| Error::Solver(format!("node report: {e}")))?;
            writeln!(w, "{line}")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Solver statistics and wall-clock time per hour.
pub fn write_timings_csv<W: Write>(w: W, r: &ScheduleResult) -> Result<()> {
    let mut out = Writer::from_writer(w);
    out.write_record([
        "hour",
        "wall_time_s",
        "nodes_opened",
        "pruned_bound",
        "pruned_infeasible",
        "branched",
        "integer_feasible",
        "lp_solves",
        "nlp_solves",
        "cuts",
    ])
    .map_err(csv_err)?;
    for h in &r.hours {
        let s = &h.stats;
        out.write_record([
            h.hour.to_string(),
            s.wall_time_s.to_string(),
            s.nodes_opened.to_string(),
            s.pruned_bound.to_string(),
            s.pruned_infeasible.to_string(),
            s.branched.to_string(),
            s.integer_feasible.to_string(),
            s.lp_solves.to_string(),
            s.nlp_solves.to_string(),
            s.cuts.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// `hour,cost,cumulative_cost,energy_demand_kwh,loss_kwh`.
pub fn write_cost_series<W: Write>(w: W, r: &ScheduleResult) -> Result<()> {
    let mut out = Writer::from_writer(w);
    out.write_record(["hour", "cost", "cumulative_cost", "energy_demand_kwh", "loss_kwh"])
        .map_err(csv_err)?;
    let mut total = 0.0;
    for h in &r.hours {
        total += h.cost;
        out.write_record([
            h.hour.to_string(),
            h.cost.to_string(),
            total.to_string(),
            h.energy_demand_kwh.to_string(),
            (h.loss_copper_kwh + h.loss_core_kwh).to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// One column per tap changer and capacitor bank.
pub fn write_tap_series<W: Write>(w: W, r: &ScheduleResult) -> Result<()> {
    let mut out = Writer::from_writer(w);
    let cols: Vec<usize> = (0..r.control_labels.len())
        .filter(|&k| r.control_labels[k].starts_with("tap_") || r.control_labels[k].starts_with("step_"))
        .collect();
    let mut header = vec!["hour".to_string()];
    header.extend(cols.iter().map(|&k| r.control_labels[k].clone()));
    out.write_record(&header).map_err(csv_err)?;
    for h in &r.hours {
        let mut row = vec![h.hour.to_string()];
        row.extend(cols.iter().map(|&k| h.decision[k].to_string()));
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Hour by bus matrix of voltage magnitudes.
pub fn write_voltage_series<W: Write>(w: W, r: &ScheduleResult) -> Result<()> {
    let mut out = Writer::from_writer(w);
    let mut header = vec!["hour".to_string()];
    header.extend(r.bus_ids.iter().map(|id| format!("bus_{id}")));
    out.write_record(&header).map_err(csv_err)?;
    for h in &r.hours {
        let mut row = vec![h.hour.to_string()];
        row.extend(h.voltages.iter().map(|v| v.to_string()));
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Write every result file into `dir`, creating it if needed.
pub fn write_all(dir: &Path, r: &ScheduleResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_results_csv(create(dir, "results.csv")?, r)?;
    write_nodes_jsonl(create(dir, "nodes.jsonl")?, r)?;
    write_timings_csv(create(dir, "timings.csv")?, r)?;
    write_cost_series(create(dir, "series_cost.csv")?, r)?;
    write_tap_series(create(dir, "series_tap.csv")?, r)?;
    write_voltage_series(create(dir, "series_voltage.csv")?, r)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{CaseMode, StartKind};

    fn empty() -> ScheduleResult {
        ScheduleResult {
            scenario: "e".into(),
            mode: CaseMode::Full,
            start: StartKind::Zero,
            bus_ids: vec![1, 2, 3],
            device_names: vec![],
            control_labels: vec!["tap_1".into(), "tap_2".into(), "step_1".into(), "p_g_der".into()],
            hours: vec![],
        }
    }

    fn text(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> String {
        let mut buf = Vec::new();
        f(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn empty_horizon_gives_headers_only() {
        let r = empty();
        assert_eq!(text(|b| write_cost_series(b, &r)), "hour,cost,cumulative_cost,energy_demand_kwh,loss_kwh\n");
        assert_eq!(text(|b| write_tap_series(b, &r)), "hour,tap_1,tap_2,step_1\n");
        assert_eq!(text(|b| write_voltage_series(b, &r)), "hour,bus_1,bus_2,bus_3\n");
        assert_eq!(text(|b| write_results_csv(b, &r)), "hour,group,quantity,value\n");
        assert_eq!(text(|b| write_nodes_jsonl(b, &r)), "");
    }
}
