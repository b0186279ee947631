//! Evaluation report assembly.
//!
//! Records group into one row per (platform, receiver) with columns per
//! metric, denoise mode, and system, mirroring the usual platform-study
//! table layout. Rendering is a pure function of the records: any
//! permutation of the same set produces byte-identical output.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Value};

use crate::error::{Result, TapError};
use crate::metrics::EvalRecord;

const MODES: [&str; 2] = ["low", "auto"];
const METRICS: [&str; 2] = ["PESQ", "STOI"];
const MISSING: &str = "\u{2014}";

/// Rendered report: an aligned text table plus the same content as JSON.
#[derive(Debug, Clone)]
pub struct ReportDocument {
    pub text: String,
    pub json: Value,
}

type GroupKey = (String, String, String, String);

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Group records into the report table. Errors on an empty record set and
/// on duplicate (clip, platform, receiver, mode, system) combinations.
pub fn assemble_report(records: &[EvalRecord]) -> Result<ReportDocument> {
    if records.is_empty() {
        return Err(TapError::InvalidInput("no records to report".into()));
    }
    let mut seen = BTreeSet::new();
    let mut stoi_cells: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
    let mut pesq_cells: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
    let mut row_keys: BTreeSet<(String, String)> = BTreeSet::new();
    let mut systems: BTreeSet<String> = BTreeSet::new();
    for r in records {
        r.validate()?;
        let full = (
            r.clip_id.clone(),
            r.platform.clone(),
            r.receiver.clone(),
            r.denoise_mode.clone(),
            r.system.clone(),
        );
        if !seen.insert(full) {
            return Err(TapError::InvalidInput(format!(
                "duplicate record for clip '{}' ({} / {} / {} / {})",
                r.clip_id, r.platform, r.receiver, r.denoise_mode, r.system
            )));
        }
        let key: GroupKey = (
            r.platform.clone(),
            r.receiver.clone(),
            r.denoise_mode.clone(),
            r.system.clone(),
        );
        stoi_cells.entry(key.clone()).or_default().push(r.stoi);
        if let Some(p) = r.pesq_external {
            pesq_cells.entry(key).or_default().push(p);
        }
        row_keys.insert((r.platform.clone(), r.receiver.clone()));
        systems.insert(r.system.clone());
    }

    // Source is the reference point; it leads, the rest follow sorted.
    let mut sys_order: Vec<String> = Vec::new();
    if systems.contains("source") {
        sys_order.push("source".to_string());
    }
    sys_order.extend(systems.iter().filter(|s| *s != "source").cloned());

    let cell = |cells: &BTreeMap<GroupKey, Vec<f64>>, key: &GroupKey| -> Option<f64> {
        cells.get(key).map(|v| mean(v))
    };

    let mut header: Vec<String> = vec!["platform".to_string(), "receiver".to_string()];
    for metric in METRICS {
        for mode in MODES {
            for sys in &sys_order {
                header.push(format!("{metric} {mode}/{sys}"));
            }
        }
    }

    let mut table: Vec<Vec<String>> = vec![header];
    let mut json_rows = Vec::new();
    for (platform, receiver) in &row_keys {
        let mut row = vec![platform.clone(), receiver.clone()];
        let mut json_metrics = serde_json::Map::new();
        for metric in METRICS {
            let cells = if metric == "PESQ" { &pesq_cells } else { &stoi_cells };
            let mut json_modes = serde_json::Map::new();
            for mode in MODES {
                let mut json_sys = serde_json::Map::new();
                for sys in &sys_order {
                    let key: GroupKey = (
                        platform.clone(),
                        receiver.clone(),
                        mode.to_string(),
                        sys.clone(),
                    );
                    let v = cell(cells, &key);
                    row.push(match v {
                        Some(x) => format!("{x:.3}"),
                        None => MISSING.to_string(),
                    });
                    json_sys.insert(
                        sys.clone(),
                        v.map_or(Value::Null, |x| {
                            json!(format!("{x:.3}").parse::<f64>().unwrap())
                        }),
                    );
                }
                json_modes.insert(mode.to_string(), Value::Object(json_sys));
            }
            json_metrics.insert(metric.to_lowercase(), Value::Object(json_modes));
        }
        json_rows.push(json!({
            "platform": platform,
            "receiver": receiver,
            "metrics": Value::Object(json_metrics),
        }));
        table.push(row);
    }

    let json = json!({
        "systems": sys_order,
        "modes": MODES,
        "rows": json_rows,
    });
    Ok(ReportDocument { text: render_table(&table), json })
}

/// Column-aligned rendering: text columns left-aligned, numeric cells
/// right-aligned under their header, two spaces between columns.
fn render_table(table: &[Vec<String>]) -> String {
    let cols = table[0].len();
    let mut widths = vec![0usize; cols];
    for row in table {
        for (c, cell) in row.iter().enumerate() {
            widths[c] = widths[c].max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for row in table {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            let pad = widths[c] - cell.chars().count();
            if c < 2 {
                line.push_str(cell);
                if c + 1 < cols {
                    line.push_str(&" ".repeat(pad));
                }
            } else {
                line.push_str(&" ".repeat(pad));
                line.push_str(cell);
            }
            if c + 1 < cols {
                line.push_str("  ");
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::N_PARAMS;

    fn record(
        clip: &str,
        platform: &str,
        receiver: &str,
        mode: &str,
        system: &str,
        stoi: f64,
        pesq: Option<f64>,
    ) -> EvalRecord {
        EvalRecord {
            clip_id: clip.to_string(),
            platform: platform.to_string(),
            receiver: receiver.to_string(),
            denoise_mode: mode.to_string(),
            system: system.to_string(),
            stoi,
            pesq_external: pesq,
            mae: vec![0.1; N_PARAMS],
        }
    }

    fn meets_phone_fixture() -> Vec<EvalRecord> {
        vec![
            record("c0", "Google Meets", "Phone", "low", "source", 0.748, Some(1.549)),
            record("c0", "Google Meets", "Phone", "auto", "source", 0.884, Some(1.976)),
        ]
    }

    #[test]
    fn renders_known_source_cells() {
        let doc = assemble_report(&meets_phone_fixture()).unwrap();
        for cell in ["1.549", "1.976", "0.748", "0.884"] {
            assert!(doc.text.contains(cell), "missing {cell} in:\n{}", doc.text);
        }
        assert!(doc.text.contains("Google Meets"));
        assert!(doc.text.contains("PESQ low/source"));
    }

    #[test]
    fn rendering_is_independent_of_record_order() {
        let fwd = meets_phone_fixture();
        let mut rev = fwd.clone();
        rev.reverse();
        let a = assemble_report(&fwd).unwrap();
        let b = assemble_report(&rev).unwrap();
        assert_eq!(a.text, b.text);
        assert_eq!(a.json, b.json);
    }

    #[test]
    fn cells_average_across_clips() {
        let records = vec![
            record("c0", "Zoom", "Laptop", "low", "source", 0.7, None),
            record("c1", "Zoom", "Laptop", "low", "source", 0.9, None),
        ];
        let doc = assemble_report(&records).unwrap();
        assert!(doc.text.contains("0.800"), "{}", doc.text);
    }

    #[test]
    fn missing_pesq_renders_a_dash() {
        let records = vec![record("c0", "Zoom", "Laptop", "low", "source", 0.7, None)];
        let doc = assemble_report(&records).unwrap();
        assert!(doc.text.contains('\u{2014}'), "{}", doc.text);
        let row = &doc.json["rows"][0];
        assert!(row["metrics"]["pesq"]["low"]["source"].is_null());
        assert_eq!(row["metrics"]["stoi"]["low"]["source"], 0.7);
    }

    #[test]
    fn empty_input_is_an_error() {
        let err = assemble_report(&[]).unwrap_err();
        assert!(err.to_string().contains("no records"));
    }

    #[test]
    fn duplicate_condition_is_an_error() {
        let mut records = meets_phone_fixture();
        records.push(record("c0", "Google Meets", "Phone", "low", "source", 0.5, None));
        let err = assemble_report(&records).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn source_column_leads_other_systems() {
        let records = vec![
            record("c0", "Zoom", "Laptop", "low", "aaa-enhanced", 0.8, None),
            record("c0", "Zoom", "Laptop", "low", "source", 0.7, None),
        ];
        let doc = assemble_report(&records).unwrap();
        let header = doc.text.lines().next().unwrap();
        let src = header.find("low/source").unwrap();
        let enh = header.find("low/aaa-enhanced").unwrap();
        assert!(src < enh, "{header}");
        assert_eq!(doc.json["systems"][0], "source");
    }
}
