//! Result tables computed from a study export.
//!
//! Tables come out in long form, one row per system and category:
//!
//! * `table1_mos`: MOS mean and 95% half-width.
//! * `table2_mushra_axy`: MUSHRA mean and half-width next to AXY
//!   target-speaker accuracy.
//! * `table3_objective`: objective F0 metrics per system, when a metrics
//!   report is supplied.
//! * `fig2_preference`: share of preference responses per candidate.
//! * `ttests`: paired t-tests between systems within a category, over
//!   per-screen mean ratings. MUSHRA pairs share a screen; MOS pairs share
//!   an `item` key.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde_json::{Map, Value};

use ptkit_core::metrics::MetricReport;
use ptkit_core::stats::{axy_accuracy, mean_ci95, paired_t_test, preference_proportions, AxyChoice};

use crate::model::{Payload, Screen, ScreenKind};
use crate::study::StudyExport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(format!("unknown format {other:?} (expected csv or jsonl)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(usize),
    Num(f64),
    Bool(bool),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::Text(s) => s.clone(),
            Cell::Int(n) => n.to_string(),
            Cell::Num(x) if x.is_finite() => format!("{x:.6}"),
            Cell::Num(x) => x.to_string(),
            Cell::Bool(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Int(n) => Value::from(*n),
            Cell::Num(x) if x.is_finite() => Value::from(*x),
            Cell::Num(x) => Value::String(x.to_string()),
            Cell::Bool(b) => Value::Bool(*b),
            Cell::Empty => Value::Null,
        }
    }
}

fn text(s: &str) -> Cell {
    Cell::Text(s.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(name: &'static str, columns: &[&'static str]) -> Self {
        Self {
            name,
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn render(&self, format: Format) -> String {
        let mut out = String::new();
        match format {
            Format::Csv => {
                out.push_str(&self.columns.join(","));
                out.push('\n');
                for row in &self.rows {
                    let cells: Vec<String> = row.iter().map(Cell::csv).collect();
                    out.push_str(&cells.join(","));
                    out.push('\n');
                }
            }
            Format::Jsonl => {
                for row in &self.rows {
                    let obj: Map<String, Value> = self
                        .columns
                        .iter()
                        .zip(row)
                        .map(|(c, v)| (c.to_string(), v.json()))
                        .collect();
                    writeln!(out, "{}", Value::Object(obj)).expect("string write");
                }
            }
        }
        out
    }

    pub fn file_name(&self, format: Format) -> String {
        format!("{}.{}", self.name, format.extension())
    }
}

/// Mean and 95% half-width cells, or two empty cells.
fn summary_cells(values: &[f64]) -> [Cell; 3] {
    match mean_ci95(values) {
        Ok(s) => [Cell::Int(s.n), Cell::Num(s.mean), Cell::Num(s.ci95_halfwidth)],
        Err(_) => [Cell::Int(0), Cell::Empty, Cell::Empty],
    }
}

type Key = (String, String);

#[derive(Default)]
struct Collected {
    mos: BTreeMap<Key, Vec<f64>>,
    mushra: BTreeMap<Key, Vec<f64>>,
    axy: BTreeMap<Key, Vec<AxyChoice>>,
    /// category -> chosen candidate labels
    preference: BTreeMap<String, Vec<String>>,
    preference_options: BTreeMap<String, BTreeSet<String>>,
    /// (kind, category) -> pairing key -> system -> ratings
    paired: BTreeMap<(ScreenKind, String), BTreeMap<String, BTreeMap<String, Vec<f64>>>>,
}

fn collect(export: &StudyExport) -> Collected {
    let screens: BTreeMap<&str, &Screen> = export.screens.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut c = Collected::default();
    for s in &export.screens {
        if s.kind == ScreenKind::Preference {
            let opts = c.preference_options.entry(s.category.clone()).or_default();
            opts.extend(s.system_labels[1..].iter().cloned());
        }
    }
    for r in &export.responses {
        let Some(screen) = screens.get(r.screen_id.as_str()) else {
            log::warn!("response for unknown screen {}", r.screen_id);
            continue;
        };
        let cat = screen.category.clone();
        let sys = |slot: usize| screen.rated_system(slot).unwrap_or("?").to_string();
        match &r.payload {
            Payload::Mos(v) => {
                c.mos.entry((sys(0), cat.clone())).or_default().push(*v as f64);
                if let Some(item) = &screen.item {
                    c.paired
                        .entry((ScreenKind::Mos, cat))
                        .or_default()
                        .entry(item.clone())
                        .or_default()
                        .entry(sys(0))
                        .or_default()
                        .push(*v as f64);
                }
            }
            Payload::Mushra(vs) => {
                for (slot, v) in vs.iter().enumerate() {
                    c.mushra.entry((sys(slot), cat.clone())).or_default().push(*v as f64);
                    c.paired
                        .entry((ScreenKind::Mushra, cat.clone()))
                        .or_default()
                        .entry(screen.id.clone())
                        .or_default()
                        .entry(sys(slot))
                        .or_default()
                        .push(*v as f64);
                }
            }
            Payload::Axy(choice) => c.axy.entry((sys(0), cat)).or_default().push(*choice),
            Payload::Preference(i) => {
                let chosen = usize::try_from(*i).map(sys).unwrap_or_else(|_| "?".into());
                c.preference.entry(cat).or_default().push(chosen);
            }
        }
    }
    c
}

fn mos_table(c: &Collected) -> Table {
    let mut t = Table::new("table1_mos", &["system", "category", "n", "mean", "ci95"]);
    for ((sys, cat), v) in &c.mos {
        let mut row = vec![text(sys), text(cat)];
        row.extend(summary_cells(v));
        t.rows.push(row);
    }
    t
}

fn mushra_axy_table(c: &Collected) -> Table {
    let mut t = Table::new(
        "table2_mushra_axy",
        &["system", "category", "n_mushra", "mushra_mean", "mushra_ci95", "n_axy", "speaker_accuracy"],
    );
    let keys: BTreeSet<&Key> = c.mushra.keys().chain(c.axy.keys()).collect();
    for key in keys {
        let mut row = vec![text(&key.0), text(&key.1)];
        row.extend(summary_cells(c.mushra.get(key).map(Vec::as_slice).unwrap_or(&[])));
        match c.axy.get(key) {
            Some(v) => {
                row.push(Cell::Int(v.len()));
                row.push(axy_accuracy(v).map(Cell::Num).unwrap_or(Cell::Empty));
            }
            None => row.extend([Cell::Int(0), Cell::Empty]),
        }
        t.rows.push(row);
    }
    t
}

fn preference_table(c: &Collected) -> Table {
    let mut t = Table::new("fig2_preference", &["category", "option", "count", "proportion"]);
    for (cat, chosen) in &c.preference {
        let mut options: Vec<String> = c
            .preference_options
            .get(cat)
            .map(|o| o.iter().cloned().collect())
            .unwrap_or_default();
        for ch in chosen {
            if !options.contains(ch) {
                options.push(ch.clone());
            }
        }
        options.sort();
        let idx: Vec<usize> = chosen
            .iter()
            .map(|ch| options.iter().position(|o| o == ch).expect("option listed"))
            .collect();
        let props = preference_proportions(&idx, options.len()).expect("indices in range");
        for (k, (o, p)) in options.iter().zip(props).enumerate() {
            let count = idx.iter().filter(|&&i| i == k).count();
            t.rows.push(vec![text(cat), text(o), Cell::Int(count), Cell::Num(p)]);
        }
    }
    t
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn ttest_table(c: &Collected, alpha: f64) -> Table {
    let mut t = Table::new(
        "ttests",
        &["test", "category", "system_a", "system_b", "n", "mean_difference", "t", "p", "significant"],
    );
    for ((kind, cat), by_key) in &c.paired {
        let systems: BTreeSet<&String> = by_key.values().flat_map(|m| m.keys()).collect();
        let systems: Vec<&String> = systems.into_iter().collect();
        for (i, a) in systems.iter().enumerate() {
            for b in &systems[i + 1..] {
                let (xs, ys): (Vec<f64>, Vec<f64>) = by_key
                    .values()
                    .filter_map(|m| Some((mean(m.get(*a)?), mean(m.get(*b)?))))
                    .unzip();
                let Ok(r) = paired_t_test(&xs, &ys, alpha) else {
                    continue;
                };
                t.rows.push(vec![
                    text(kind.as_str()),
                    text(cat),
                    text(a),
                    text(b),
                    Cell::Int(r.n),
                    Cell::Num(r.mean_difference),
                    Cell::Num(r.t),
                    Cell::Num(r.p),
                    Cell::Bool(r.significant),
                ]);
            }
        }
    }
    t
}

fn objective_table(metrics: &[MetricReport]) -> Table {
    let mut t = Table::new(
        "table3_objective",
        &[
            "system",
            "n",
            "f0_dtw_error_norm_mean",
            "f0_dtw_error_norm_ci95",
            "mean_f0_error_hz_mean",
            "mean_f0_error_hz_ci95",
        ],
    );
    let mut by_system: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for m in metrics {
        let e = by_system.entry(&m.system).or_default();
        e.0.push(m.f0_dtw_error_norm);
        e.1.push(m.mean_f0_target_error_hz);
    }
    for (sys, (dtw, hz)) in by_system {
        let [n, dm, dc] = summary_cells(&dtw);
        let [_, hm, hc] = summary_cells(&hz);
        t.rows.push(vec![text(sys), n, dm, dc, hm, hc]);
    }
    t
}

/// All report tables; `table3_objective` only when metrics are given.
pub fn build_report(export: &StudyExport, metrics: Option<&[MetricReport]>, alpha: f64) -> Vec<Table> {
    let c = collect(export);
    let mut tables = vec![mos_table(&c), mushra_axy_table(&c)];
    if let Some(m) = metrics {
        tables.push(objective_table(m));
    }
    tables.push(preference_table(&c));
    tables.push(ttest_table(&c, alpha));
    tables
}
