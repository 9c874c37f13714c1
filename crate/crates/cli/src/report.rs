//! Bound tables from CSV rows: one line per (parameter set, gamma), with
//! lower bound, both penalized dual bounds, the zero-penalty bound and the
//! duality gap. CE columns are shown in units of 1e-1.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use infrelax::bounds::{gap_from_means, CsvRow};

use crate::error::CliError;

pub fn read_rows(paths: &[PathBuf]) -> Result<Vec<CsvRow>, CliError> {
    let mut rows = Vec::new();
    for path in paths {
        let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        for row in reader.deserialize() {
            rows.push(row.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?);
        }
    }
    Ok(rows)
}

#[derive(Default)]
struct Group<'a> {
    lower: Option<&'a CsvRow>,
    m1: Option<&'a CsvRow>,
    m2: Option<&'a CsvRow>,
    zero: Option<&'a CsvRow>,
}

/// Sort key: published sets numerically, then anything else by name.
fn set_key(set: &str) -> (u32, String) {
    set.parse::<u32>().map_or((u32::MAX, set.to_string()), |id| (id, String::new()))
}

/// Ordered by set, then by gamma (bit order is numeric order for gamma > 0).
type GroupKey = ((u32, String), u64);

/// Later rows for the same cell replace earlier ones.
pub fn format_table(rows: &[CsvRow]) -> String {
    let mut groups: BTreeMap<GroupKey, (String, f64, Group)> = BTreeMap::new();
    for row in rows {
        let key = (set_key(&row.parameter_set), row.gamma.to_bits());
        let entry = groups
            .entry(key)
            .or_insert_with(|| (row.parameter_set.clone(), row.gamma, Group::default()));
        let group = &mut entry.2;
        match (row.bound_type.as_str(), row.penalty.as_str()) {
            ("lower", _) => group.lower = Some(row),
            ("upper", "m1") => group.m1 = Some(row),
            ("upper", "m2") => group.m2 = Some(row),
            ("upper", "zero") => group.zero = Some(row),
            _ => {}
        }
    }

    let header = [
        "set", "gamma", "Lower", "CE(1e-1)", "Dual Bound 1", "CE(1e-1)", "Dual Bound 2", "CE(1e-1)",
        "Zero Penalty", "CE(1e-1)", "Gap", "CE Gap",
    ];
    let mut lines: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for (set, gamma, g) in groups.values() {
        let mut line = vec![set.clone(), format!("{gamma}")];
        for cell in [g.lower, g.m1, g.m2, g.zero] {
            match cell {
                Some(r) => {
                    line.push(format!("{:.3} ({:.3})", r.value_mean, r.value_stderr));
                    line.push(format!("{:.3} ({:.3})", 10.0 * r.ce_mean, 10.0 * r.ce_stderr));
                }
                None => line.extend(["n/a".to_string(), "n/a".to_string()]),
            }
        }
        let tighter = match (g.m1, g.m2) {
            (Some(a), Some(b)) => Some((a.value_mean.min(b.value_mean), a.ce_mean.min(b.ce_mean))),
            (Some(a), None) | (None, Some(a)) => Some((a.value_mean, a.ce_mean)),
            (None, None) => None,
        };
        match (g.lower, tighter) {
            (Some(lo), Some((upper, upper_ce))) => {
                let gap = gap_from_means(lo.value_mean, lo.ce_mean, upper, upper_ce);
                line.push(format!("{:.2}%", 100.0 * gap.value_gap_frac));
                line.push(format!("{:.2}%", 100.0 * gap.ce_gap_frac));
            }
            _ => line.extend(["n/a".to_string(), "n/a".to_string()]),
        }
        lines.push(line);
    }

    let widths: Vec<usize> = (0..header.len())
        .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for line in &lines {
        let cells: Vec<String> = line.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}
