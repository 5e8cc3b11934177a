//! Atlas region ranking by mean heatmap intensity.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use jmap_core::{LabelVolume, Volume};

use crate::ExplainError;

#[derive(Debug, Clone, PartialEq)]
pub struct RegionRow {
    pub id: u32,
    pub name: String,
    pub mean: f64,
    /// Voxel count (for aggregates, summed over subjects).
    pub voxels: usize,
    /// 1-based position after sorting.
    pub rank: usize,
    /// No voxels carry this label; `mean` is reported as 0.
    pub empty: bool,
}

/// Regions sorted by mean descending, ties by id ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionReport {
    pub rows: Vec<RegionRow>,
}

fn ranked(mut rows: Vec<RegionRow>) -> RegionReport {
    rows.sort_by(|a, b| b.mean.total_cmp(&a.mean).then(a.id.cmp(&b.id)));
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    RegionReport { rows }
}

/// Mean heatmap value per atlas region. Every named region gets a row;
/// background (label 0) is included only on request.
pub fn region_rank(heat: &Volume, atlas: &LabelVolume, include_background: bool) -> Result<RegionReport, ExplainError> {
    if !heat.geometry().same_grid(atlas.geometry()) {
        return Err(ExplainError::AtlasMismatch(format!(
            "heatmap grid {:?} is not the atlas grid {:?}",
            heat.dims(),
            atlas.dims()
        )));
    }
    let mut acc: BTreeMap<u32, (f64, usize)> = atlas.names().keys().map(|&id| (id, (0.0, 0))).collect();
    if include_background {
        acc.insert(0, (0.0, 0));
    }
    for (&l, &v) in atlas.labels().iter().zip(heat.data()) {
        if let Some(e) = acc.get_mut(&l) {
            e.0 += v;
            e.1 += 1;
        }
    }
    let rows = acc
        .into_iter()
        .map(|(id, (sum, n))| RegionRow {
            id,
            name: atlas.name(id).unwrap_or("Background").to_string(),
            mean: if n == 0 { 0.0 } else { sum / n as f64 },
            voxels: n,
            rank: 0,
            empty: n == 0,
        })
        .collect();
    Ok(ranked(rows))
}

/// Per-region mean of subject-level means, over the subjects where the
/// region is non-empty.
pub fn aggregate_reports(reports: &[RegionReport]) -> Result<RegionReport, ExplainError> {
    let first = reports.first().ok_or(ExplainError::NoReports)?;
    let regions: BTreeMap<u32, &str> = first.rows.iter().map(|r| (r.id, r.name.as_str())).collect();
    let mut acc: BTreeMap<u32, (f64, usize, usize)> = regions.keys().map(|&id| (id, (0.0, 0, 0))).collect();
    for (s, report) in reports.iter().enumerate() {
        let these: BTreeMap<u32, &str> = report.rows.iter().map(|r| (r.id, r.name.as_str())).collect();
        if these != regions {
            return Err(ExplainError::AtlasMismatch(format!(
                "report {s} has a different region set"
            )));
        }
        for r in &report.rows {
            let e = acc.get_mut(&r.id).unwrap();
            if !r.empty {
                e.0 += r.mean;
                e.1 += 1;
            }
            e.2 += r.voxels;
        }
    }
    let rows = acc
        .into_iter()
        .map(|(id, (sum, n, voxels))| RegionRow {
            id,
            name: regions[&id].to_string(),
            mean: if n == 0 { 0.0 } else { sum / n as f64 },
            voxels,
            rank: 0,
            empty: n == 0,
        })
        .collect();
    Ok(ranked(rows))
}

impl RegionReport {
    /// `rank,id,name,mean,voxels,empty` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,id,name,mean,voxels,empty\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{},{},{}", r.rank, r.id, r.name, r.mean, r.voxels, r.empty).unwrap();
        }
        s
    }
}

/// Markdown table with one column per class; cell `k` of a column is the
/// `k`-th ranked region as `Name (mean)` with two decimals.
pub fn render_table(columns: &[(&str, &RegionReport)]) -> String {
    let mut s = String::from("| Rank |");
    for (name, _) in columns {
        write!(s, " {name} |").unwrap();
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(columns.len()));
    s.push('\n');
    let depth = columns.iter().map(|(_, r)| r.rows.len()).max().unwrap_or(0);
    for k in 0..depth {
        write!(s, "| {} |", k + 1).unwrap();
        for (_, report) in columns {
            match report.rows.get(k) {
                Some(r) => write!(s, " {} ({:.2}) |", r.name, r.mean).unwrap(),
                None => s.push_str("  |"),
            }
        }
        s.push('\n');
    }
    s
}
