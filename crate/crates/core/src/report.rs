//! On-disk reports: per-session CSVs, comparison tables, neighbor listings and
//! SVG charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{Aggregate, MeanStd, RoundRecord};
use crate::session::{ScoreRow, SessionRecord};
use crate::types::SampleId;

pub const ROUNDS_HEADER: &str = "round,dice_mean_test,dice_pseudo,n_unlabeled,n_labeled,n_pseudo,wall_ms";

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Renders `rounds.csv`. Wall time is left blank unless `with_timing` is set,
/// so that identical runs give identical files.
pub fn rounds_csv(records: &[RoundRecord], with_timing: bool) -> String {
    let mut out = format!("{ROUNDS_HEADER}\n");
    for r in records {
        let pseudo = r.pseudo_dice.map(|d| format!("{d:?}")).unwrap_or_default();
        let wall = if with_timing { r.wall_ms.to_string() } else { String::new() };
        writeln!(
            out,
            "{},{:?},{},{},{},{},{}",
            r.round, r.test_dice, pseudo, r.unlabeled, r.labeled, r.pseudo, wall
        )
        .unwrap();
    }
    out
}

pub fn write_rounds_csv(path: &Path, records: &[RoundRecord], with_timing: bool) -> Result<()> {
    write_text(path, &rounds_csv(records, with_timing))
}

#[derive(Deserialize)]
struct RoundRow {
    round: usize,
    dice_mean_test: f64,
    dice_pseudo: Option<f64>,
    n_unlabeled: usize,
    n_labeled: usize,
    n_pseudo: usize,
    wall_ms: Option<u64>,
}

pub fn read_rounds_csv(path: &Path) -> Result<Vec<RoundRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize::<RoundRow>()
        .map(|row| {
            let row = row?;
            Ok(RoundRecord {
                round: row.round,
                test_dice: row.dice_mean_test,
                pseudo_dice: row.dice_pseudo,
                unlabeled: row.n_unlabeled,
                labeled: row.n_labeled,
                pseudo: row.n_pseudo,
                wall_ms: row.wall_ms.unwrap_or(0),
            })
        })
        .collect()
}

/// Flat summary written as `session.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub dataset: String,
    pub method: String,
    pub seed: u64,
    pub rounds: usize,
    pub auc: f64,
    pub final_test_dice: f64,
    pub final_pseudo_dice: Option<f64>,
    pub final_labeled: usize,
    pub final_pseudo: usize,
}

impl SessionSummary {
    pub fn of(record: &SessionRecord) -> Self {
        let last = record.rounds.last();
        Self {
            dataset: record.dataset.clone(),
            method: record.method.as_str().to_string(),
            seed: record.seed,
            rounds: record.rounds.len(),
            auc: record.auc,
            final_test_dice: last.map_or(0.0, |r| r.test_dice),
            final_pseudo_dice: last.and_then(|r| r.pseudo_dice),
            final_labeled: last.map_or(0, |r| r.labeled),
            final_pseudo: last.map_or(0, |r| r.pseudo),
        }
    }
}

pub fn write_session_json(path: &Path, record: &SessionRecord) -> Result<()> {
    let json = serde_json::to_string_pretty(&SessionSummary::of(record))
        .map_err(|e| Error::Aggregation(e.to_string()))?;
    write_text(path, &(json + "\n"))
}

pub fn write_scores_csv(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut out = String::from("round,id,class,score,selected\n");
    for r in rows {
        writeln!(out, "{},{},{},{:?},{}", r.round, r.id, r.class, r.score, u8::from(r.selected)).unwrap();
    }
    write_text(path, &out)
}

/// Per-session files: `rounds.csv`, `session.json` and, when present, `scores.csv`.
pub fn write_session(dir: &Path, record: &SessionRecord, with_timing: bool) -> Result<()> {
    write_rounds_csv(&dir.join("rounds.csv"), &record.rounds, with_timing)?;
    write_session_json(&dir.join("session.json"), record)?;
    if !record.scores.is_empty() {
        write_scores_csv(&dir.join("scores.csv"), &record.scores)?;
    }
    if with_timing {
        let mut out = String::from("round,wall_ms\n");
        for r in &record.rounds {
            writeln!(out, "{},{}", r.round, r.wall_ms).unwrap();
        }
        write_text(&dir.join("timing.csv"), &out)?;
    }
    Ok(())
}

/// `method,auc_mean,auc_std`
pub fn compare_csv(methods: &BTreeMap<String, Aggregate>) -> String {
    let mut out = String::from("method,auc_mean,auc_std\n");
    for (name, agg) in methods {
        writeln!(out, "{name},{:?},{:?}", agg.auc.mean, agg.auc.std).unwrap();
    }
    out
}

/// `method,round,dice_mean,dice_std,pseudo_mean,pseudo_std`
pub fn per_round_csv(methods: &BTreeMap<String, Aggregate>) -> String {
    let mut out = String::from("method,round,dice_mean,dice_std,pseudo_mean,pseudo_std\n");
    for (name, agg) in methods {
        for (i, r) in agg.rounds.iter().enumerate() {
            let (pm, ps) = match agg.pseudo.get(i).copied().flatten() {
                Some(p) => (format!("{:?}", p.mean), format!("{:?}", p.std)),
                None => (String::new(), String::new()),
            };
            writeln!(out, "{name},{},{:?},{:?},{pm},{ps}", i + 1, r.mean, r.std).unwrap();
        }
    }
    out
}

pub fn write_compare(dir: &Path, methods: &BTreeMap<String, Aggregate>) -> Result<()> {
    write_text(&dir.join("compare.csv"), &compare_csv(methods))?;
    write_text(&dir.join("compare_rounds.csv"), &per_round_csv(methods))
}

#[derive(Deserialize)]
struct PerRoundRow {
    method: String,
    round: usize,
    dice_mean: f64,
    dice_std: f64,
}

/// Reads a per-round CSV back into `(method, [(mean, std)])` series ordered by round.
pub fn read_per_round_csv(path: &Path) -> Result<BTreeMap<String, Vec<MeanStd>>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows: BTreeMap<String, Vec<(usize, MeanStd)>> = BTreeMap::new();
    for row in reader.deserialize::<PerRoundRow>() {
        let row = row?;
        rows.entry(row.method).or_default().push((
            row.round,
            MeanStd {
                mean: row.dice_mean,
                std: row.dice_std,
            },
        ));
    }
    Ok(rows
        .into_iter()
        .map(|(m, mut v)| {
            v.sort_by_key(|(r, _)| *r);
            (m, v.into_iter().map(|(_, s)| s).collect())
        })
        .collect())
}

/// `value,auc`
pub fn sweep_csv(rows: &[(f64, f64)]) -> String {
    let mut out = String::from("value,auc\n");
    for (v, auc) in rows {
        writeln!(out, "{v:?},{auc:?}").unwrap();
    }
    out
}

/// `id,neighbor,jsd`
pub fn knn_csv(id: SampleId, neighbors: &[crate::neighbors::Neighbor]) -> String {
    let mut out = String::from("id,neighbor,jsd\n");
    for n in neighbors {
        writeln!(out, "{},{},{:?}", id, n.id, n.distance).unwrap();
    }
    out
}

pub fn read_knn_csv(text: &str) -> Result<Vec<(usize, usize, f64)>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader
        .deserialize::<(usize, usize, f64)>()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    write_text(path, text)
}

pub fn read_file(path: &Path) -> Result<String> {
    read_text(path)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

struct Frame {
    width: f64,
    height: f64,
    left: f64,
    right: f64,
    top: f64,
    bottom: f64,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        let span = (self.x_max - self.x_min).max(f64::EPSILON);
        self.left + (v - self.x_min) / span * (self.width - self.left - self.right)
    }

    fn y(&self, v: f64) -> f64 {
        let span = (self.y_max - self.y_min).max(f64::EPSILON);
        self.height - self.bottom - (v - self.y_min) / span * (self.height - self.top - self.bottom)
    }

    fn axes(&self, out: &mut String, x_label: &str, y_label: &str, x_ticks: &[(f64, String)]) {
        let (x0, x1) = (self.left, self.width - self.right);
        let (y0, y1) = (self.height - self.bottom, self.top);
        writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#).unwrap();
        writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#).unwrap();
        for (v, label) in x_ticks {
            let x = self.x(*v);
            writeln!(
                out,
                r#"<text x="{x:.1}" y="{:.1}" font-size="11" text-anchor="middle">{label}</text>"#,
                y0 + 16.0
            )
            .unwrap();
        }
        for i in 0..=4 {
            let v = self.y_min + (self.y_max - self.y_min) * i as f64 / 4.0;
            let y = self.y(v);
            writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{v:.3}</text>"#,
                x0 - 6.0,
                y + 4.0
            )
            .unwrap();
        }
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">{x_label}</text>"#,
            (x0 + x1) / 2.0,
            self.height - 8.0
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="16" y="{:.1}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.1})">{y_label}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0
        )
        .unwrap();
    }
}

fn value_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(0.01);
    ((lo - pad).max(0.0), (hi + pad).min(1.0).max(lo + pad))
}

/// Mean Dice per round for each method, with a ±std band and a legend.
pub fn dice_chart_svg(series: &BTreeMap<String, Vec<MeanStd>>) -> String {
    let rounds = series.values().map(Vec::len).max().unwrap_or(1).max(1);
    let (y_min, y_max) = value_range(
        series
            .values()
            .flatten()
            .flat_map(|s| [s.mean - s.std, s.mean + s.std]),
    );
    let frame = Frame {
        width: 640.0,
        height: 400.0,
        left: 60.0,
        right: 150.0,
        top: 20.0,
        bottom: 50.0,
        x_min: 1.0,
        x_max: rounds.max(2) as f64,
        y_min,
        y_max,
    };
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        frame.width, frame.height, frame.width, frame.height
    )
    .unwrap();
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    let ticks: Vec<(f64, String)> = (1..=rounds).map(|r| (r as f64, r.to_string())).collect();
    frame.axes(&mut out, "round", "mean Dice (test)", &ticks);
    for (i, (name, points)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        // a one-round series (full supervision) is drawn as a dashed level across the chart
        let flat = points.len() == 1;
        let points = if flat { vec![points[0]; rounds.max(2)] } else { points.clone() };
        let dash = if flat { r#" stroke-dasharray="6 4""# } else { "" };
        let upper: Vec<String> = points
            .iter()
            .enumerate()
            .map(|(r, s)| format!("{:.2},{:.2}", frame.x((r + 1) as f64), frame.y(s.mean + s.std)))
            .collect();
        let lower: Vec<String> = points
            .iter()
            .enumerate()
            .rev()
            .map(|(r, s)| format!("{:.2},{:.2}", frame.x((r + 1) as f64), frame.y(s.mean - s.std)))
            .collect();
        writeln!(
            out,
            r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        )
        .unwrap();
        let line: Vec<String> = points
            .iter()
            .enumerate()
            .map(|(r, s)| format!("{:.2},{:.2}", frame.x((r + 1) as f64), frame.y(s.mean)))
            .collect();
        writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
            line.join(" ")
        )
        .unwrap();
        let ly = frame.top + 10.0 + 18.0 * i as f64;
        let lx = frame.width - frame.right + 12.0;
        writeln!(
            out,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/><text x="{}" y="{}" font-size="12">{name}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// AUC against the swept parameter value, one point per value in the given order.
pub fn sweep_chart_svg(parameter: &str, rows: &[(f64, f64)]) -> String {
    let (y_min, y_max) = value_range(rows.iter().map(|r| r.1));
    let n = rows.len().max(1);
    let frame = Frame {
        width: 520.0,
        height: 360.0,
        left: 60.0,
        right: 20.0,
        top: 20.0,
        bottom: 50.0,
        x_min: 0.0,
        x_max: (n.max(2) - 1) as f64,
        y_min,
        y_max,
    };
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        frame.width, frame.height, frame.width, frame.height
    )
    .unwrap();
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    let ticks: Vec<(f64, String)> = rows.iter().enumerate().map(|(i, (v, _))| (i as f64, format!("{v}"))).collect();
    frame.axes(&mut out, parameter, "AUC of Dice", &ticks);
    let pts: Vec<String> = rows
        .iter()
        .enumerate()
        .map(|(i, (_, auc))| format!("{:.2},{:.2}", frame.x(i as f64), frame.y(*auc)))
        .collect();
    writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
        pts.join(" "),
        PALETTE[0]
    )
    .unwrap();
    for p in &pts {
        let (x, y) = p.split_once(',').unwrap();
        writeln!(out, r#"<circle cx="{x}" cy="{y}" r="3" fill="{}"/>"#, PALETTE[0]).unwrap();
    }
    out.push_str("</svg>\n");
    out
}
