//! Cross-run comparison tables.
//!
//! Tables are recomputed from the retained `metrics.csv` and `ssb.csv` of each
//! run. One per-seed row is emitted per variant per run, followed by one
//! aggregate row per variant with the across-seed mean and sample standard
//! deviation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use eslm_core::objectives::Variant;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{self, MetricsRow, SsbRow};
use crate::pipeline::{read_manifest, METRICS_FILE, SSB_FILE};

pub const COMPARISON_FILE: &str = "comparison.csv";
pub const COMPARISON_TEXT_FILE: &str = "comparison.txt";
pub const PLOT_FILE: &str = "plot_data.csv";

/// Metric columns, in table order: `(column, space, label)`.
pub const AUC_COLUMNS: [(&str, &str, &str); 3] = [
    ("auc_pv_to_pay_g", "pv", "pay_g"),
    ("auc_ps_to_pay_g", "ps", "pay_g"),
    ("auc_ps_to_pay_a", "ps", "pay_a"),
];

/// Retained outputs of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub metrics: Vec<MetricsRow>,
    pub ssb: Vec<SsbRow>,
}

impl RunMetrics {
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            metrics: formats::read_metrics(&dir.join(METRICS_FILE))?,
            ssb: formats::read_ssb(&dir.join(SSB_FILE))?,
        })
    }
}

/// Values of one table row. Aggregate rows fill the `_sd` columns and, for
/// ESLM, the fraction of seeds in which it beats PS2Pay_g on AUC(PSToPay_g).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub kind: String,
    pub variant: String,
    pub seed: Option<u64>,
    pub n: usize,
    pub auc_pv_to_pay_g: Option<f64>,
    pub auc_pv_to_pay_g_sd: Option<f64>,
    pub auc_ps_to_pay_g: Option<f64>,
    pub auc_ps_to_pay_g_sd: Option<f64>,
    pub auc_ps_to_pay_a: Option<f64>,
    pub auc_ps_to_pay_a_sd: Option<f64>,
    pub calibration: Option<f64>,
    pub calibration_sd: Option<f64>,
    pub ssb_divergence: Option<f64>,
    pub ssb_divergence_sd: Option<f64>,
    pub eslm_beats_ps2pay_g: Option<f64>,
}

impl ComparisonRow {
    fn values(&self) -> [Option<f64>; 5] {
        [
            self.auc_pv_to_pay_g,
            self.auc_ps_to_pay_g,
            self.auc_ps_to_pay_a,
            self.calibration,
            self.ssb_divergence,
        ]
    }

    fn empty(kind: &str, variant: &str, seed: Option<u64>, n: usize) -> Self {
        Self {
            kind: kind.into(),
            variant: variant.into(),
            seed,
            n,
            auc_pv_to_pay_g: None,
            auc_pv_to_pay_g_sd: None,
            auc_ps_to_pay_g: None,
            auc_ps_to_pay_g_sd: None,
            auc_ps_to_pay_a: None,
            auc_ps_to_pay_a_sd: None,
            calibration: None,
            calibration_sd: None,
            ssb_divergence: None,
            ssb_divergence_sd: None,
            eslm_beats_ps2pay_g: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

fn variant_order(name: &str) -> usize {
    Variant::parse(name).map_or(usize::MAX, |v| v as usize)
}

fn find(metrics: &[MetricsRow], variant: &str, space: &str, label: &str) -> Option<f64> {
    metrics
        .iter()
        .find(|m| m.variant == variant && m.space == space && m.label == label)
        .map(|m| m.auc)
}

fn per_seed_rows(run: &RunMetrics) -> Vec<ComparisonRow> {
    let mut keys: Vec<(String, u64)> = Vec::new();
    for m in &run.metrics {
        let key = (m.variant.clone(), m.seed);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(variant, seed)| {
            let mine: Vec<MetricsRow> = run
                .metrics
                .iter()
                .filter(|m| m.variant == variant && m.seed == seed)
                .cloned()
                .collect();
            let mut row = ComparisonRow::empty("seed", &variant, Some(seed), 1);
            row.auc_pv_to_pay_g = find(&mine, &variant, "pv", "pay_g");
            row.auc_ps_to_pay_g = find(&mine, &variant, "ps", "pay_g");
            row.auc_ps_to_pay_a = find(&mine, &variant, "ps", "pay_a");
            row.calibration = mine
                .iter()
                .find(|m| m.space == "ps" && m.label == "pay_g")
                .map(|m| m.calibration);
            row.ssb_divergence = run
                .ssb
                .iter()
                .find(|s| s.variant == variant && s.seed == seed)
                .map(|s| s.ssb_divergence);
            row
        })
        .collect()
}

/// Mean and sample standard deviation of the present values.
fn mean_sd(values: impl Iterator<Item = Option<f64>>) -> (Option<f64>, Option<f64>) {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(sd))
}

/// Builds the table from any number of runs; rows are ordered by variant,
/// then seed, then run order.
pub fn comparison_table(runs: &[RunMetrics]) -> ComparisonTable {
    let mut seeds: Vec<ComparisonRow> = runs.iter().flat_map(per_seed_rows).collect();
    seeds.sort_by_key(|r| (variant_order(&r.variant), r.variant.clone(), r.seed));

    let mut groups: BTreeMap<(usize, String), Vec<&ComparisonRow>> = BTreeMap::new();
    for r in &seeds {
        groups
            .entry((variant_order(&r.variant), r.variant.clone()))
            .or_default()
            .push(r);
    }
    let ps2 = Variant::Ps2PayG.as_str();
    let mut aggregates = Vec::new();
    for ((_, variant), rows) in &groups {
        let mut agg = ComparisonRow::empty("aggregate", variant, None, rows.len());
        let cols: Vec<(Option<f64>, Option<f64>)> = (0..5)
            .map(|i| mean_sd(rows.iter().map(|r| r.values()[i])))
            .collect();
        (agg.auc_pv_to_pay_g, agg.auc_pv_to_pay_g_sd) = cols[0];
        (agg.auc_ps_to_pay_g, agg.auc_ps_to_pay_g_sd) = cols[1];
        (agg.auc_ps_to_pay_a, agg.auc_ps_to_pay_a_sd) = cols[2];
        (agg.calibration, agg.calibration_sd) = cols[3];
        (agg.ssb_divergence, agg.ssb_divergence_sd) = cols[4];
        if variant == Variant::Eslm.as_str() {
            let paired: Vec<bool> = rows
                .iter()
                .filter_map(|r| {
                    let rival = seeds
                        .iter()
                        .find(|o| o.variant == ps2 && o.seed == r.seed)?;
                    Some(r.auc_ps_to_pay_g? > rival.auc_ps_to_pay_g?)
                })
                .collect();
            if !paired.is_empty() {
                agg.eslm_beats_ps2pay_g =
                    Some(paired.iter().filter(|&&b| b).count() as f64 / paired.len() as f64);
            }
        }
        aggregates.push(agg);
    }
    seeds.extend(aggregates);
    ComparisonTable { rows: seeds }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

impl ComparisonTable {
    pub fn per_seed(&self) -> impl Iterator<Item = &ComparisonRow> {
        self.rows.iter().filter(|r| r.kind == "seed")
    }

    pub fn aggregate(&self, variant: Variant) -> Option<&ComparisonRow> {
        self.rows
            .iter()
            .find(|r| r.kind == "aggregate" && r.variant == variant.as_str())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)
            .map_err(Error::csv(path))?;
        for r in &self.rows {
            w.serialize(r).map_err(Error::csv(path))?;
        }
        w.flush().map_err(Error::io(path))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(Error::csv(path))?;
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<ComparisonRow>, _>>()
            .map_err(Error::csv(path))?;
        Ok(Self { rows })
    }

    /// Aligned plain-text rendering; aggregate rows show `mean±sd`.
    pub fn to_text(&self) -> String {
        let header = [
            "kind",
            "variant",
            "seed",
            "PvToPay_g",
            "PSToPay_g",
            "PSToPay_a",
            "calibration",
            "ssb",
            "eslm>ps2",
        ];
        let mut lines: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            let pair = |m: Option<f64>, sd: Option<f64>| match (m, sd, r.kind.as_str()) {
                (Some(m), Some(sd), "aggregate") => format!("{m:.4}±{sd:.4}"),
                _ => cell(m),
            };
            lines.push(vec![
                r.kind.clone(),
                r.variant.clone(),
                r.seed
                    .map_or_else(|| format!("n={}", r.n), |s| s.to_string()),
                pair(r.auc_pv_to_pay_g, r.auc_pv_to_pay_g_sd),
                pair(r.auc_ps_to_pay_g, r.auc_ps_to_pay_g_sd),
                pair(r.auc_ps_to_pay_a, r.auc_ps_to_pay_a_sd),
                pair(r.calibration, r.calibration_sd),
                pair(r.ssb_divergence, r.ssb_divergence_sd),
                r.eslm_beats_ps2pay_g
                    .map_or_else(String::new, |f| format!("{f:.2}")),
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| {
                lines
                    .iter()
                    .map(|l| l[c].chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        for l in &lines {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .map(|(s, &w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }

    /// `variant,metric,mean,stddev` for every AUC of every aggregate row.
    pub fn write_plot_data(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct PlotRow<'a> {
            variant: &'a str,
            metric: &'a str,
            mean: f64,
            stddev: f64,
        }
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)
            .map_err(Error::csv(path))?;
        for r in self.rows.iter().filter(|r| r.kind == "aggregate") {
            let cols = [
                (AUC_COLUMNS[0].0, r.auc_pv_to_pay_g, r.auc_pv_to_pay_g_sd),
                (AUC_COLUMNS[1].0, r.auc_ps_to_pay_g, r.auc_ps_to_pay_g_sd),
                (AUC_COLUMNS[2].0, r.auc_ps_to_pay_a, r.auc_ps_to_pay_a_sd),
            ];
            for (metric, mean, sd) in cols {
                if let (Some(mean), Some(stddev)) = (mean, sd) {
                    w.serialize(PlotRow {
                        variant: &r.variant,
                        metric,
                        mean,
                        stddev,
                    })
                    .map_err(Error::csv(path))?;
                }
            }
        }
        w.flush().map_err(Error::io(path))
    }
}

/// Compares at least two completed runs of the same experiment and writes
/// `comparison.csv`, `comparison.txt` and `plot_data.csv` into `out`.
///
/// Runs must share the config hash, i.e. everything but the seed.
pub fn compare_variants(run_dirs: &[PathBuf], out: &Path) -> Result<ComparisonTable> {
    if run_dirs.len() < 2 {
        return Err(Error::Comparability(format!(
            "need at least two runs, got {}",
            run_dirs.len()
        )));
    }
    let mut hash: Option<(String, &PathBuf)> = None;
    let mut runs = Vec::with_capacity(run_dirs.len());
    for dir in run_dirs {
        let (h, _) = read_manifest(dir)?;
        match &hash {
            None => hash = Some((h, dir)),
            Some((first, first_dir)) if *first != h => {
                return Err(Error::Comparability(format!(
                    "{} has config hash {h}, {} has {first}",
                    dir.display(),
                    first_dir.display()
                )))
            }
            Some(_) => {}
        }
        runs.push(RunMetrics::load(dir)?);
    }
    let table = comparison_table(&runs);
    std::fs::create_dir_all(out).map_err(Error::io(out))?;
    table.write_csv(&out.join(COMPARISON_FILE))?;
    formats::write_text(&out.join(COMPARISON_TEXT_FILE), &table.to_text())?;
    table.write_plot_data(&out.join(PLOT_FILE))?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics(variant: &str, seed: u64, aucs: [f64; 3]) -> Vec<MetricsRow> {
        AUC_COLUMNS
            .iter()
            .zip(aucs)
            .map(|(&(_, space, label), auc)| MetricsRow {
                variant: variant.into(),
                space: space.into(),
                label: label.into(),
                scorer: "head_a".into(),
                auc,
                positives: 5,
                total: 50,
                calibration: 1.0 + auc,
                seed,
            })
            .collect()
    }

    fn ssb(variant: &str, seed: u64) -> SsbRow {
        SsbRow {
            variant: variant.into(),
            train_space: "ps".into(),
            mean_gap: 0.0,
            decile_distance: 0.0,
            ssb_divergence: 0.25,
            seed,
        }
    }

    fn run(seed: u64, eslm: f64, ps2: f64) -> RunMetrics {
        let mut m = metrics("PS2Pay_g", seed, [0.6, ps2, 0.7]);
        m.extend(metrics("ESLM", seed, [0.6, eslm, 0.8]));
        RunMetrics {
            metrics: m,
            ssb: vec![ssb("PS2Pay_g", seed), ssb("ESLM", seed)],
        }
    }

    #[test]
    fn row_counts_and_aggregates() {
        let runs: Vec<RunMetrics> = (0..10)
            .map(|s| run(s, 0.7 + s as f64 * 0.01, 0.72))
            .collect();
        let t = comparison_table(&runs);
        assert_eq!(t.per_seed().count(), 20);
        assert_eq!(t.rows.len(), 22);
        let eslm = t.aggregate(Variant::Eslm).unwrap();
        assert_eq!(eslm.n, 10);
        assert!((eslm.auc_ps_to_pay_g.unwrap() - 0.745).abs() < 1e-12);
        // seeds 3..=9 beat 0.72
        assert_eq!(eslm.eslm_beats_ps2pay_g, Some(0.7));
        let sd = (0..10)
            .map(|s| (s as f64 * 0.01 - 0.045).powi(2))
            .sum::<f64>()
            / 9.0;
        assert!((eslm.auc_ps_to_pay_g_sd.unwrap() - sd.sqrt()).abs() < 1e-12);
        assert_eq!(
            t.aggregate(Variant::Ps2PayG).unwrap().eslm_beats_ps2pay_g,
            None
        );
        assert!((eslm.calibration.unwrap() - 1.745).abs() < 1e-12);
    }

    #[test]
    fn a_run_compared_with_itself_gives_identical_rows() {
        let r = run(4, 0.8, 0.7);
        let t = comparison_table(&[r.clone(), r]);
        let rows: Vec<_> = t.per_seed().collect();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].variant, "PS2Pay_g");
        assert_eq!(rows[0], rows[1]);
        assert_eq!(rows[2], rows[3]);
        assert_eq!(
            t.aggregate(Variant::Eslm).unwrap().auc_ps_to_pay_g_sd,
            Some(0.0)
        );
    }

    #[test]
    fn table_is_independent_of_run_order() {
        let a = run(1, 0.8, 0.7);
        let b = run(2, 0.6, 0.7);
        assert_eq!(
            comparison_table(&[a.clone(), b.clone()]),
            comparison_table(&[b, a])
        );
    }

    #[test]
    fn csv_round_trip_and_text_alignment() {
        let dir = tempfile::tempdir().unwrap();
        let t = comparison_table(&[run(1, 0.8, 0.7), run(2, 0.6, 0.7)]);
        let path = dir.path().join("c.csv");
        t.write_csv(&path).unwrap();
        assert_eq!(ComparisonTable::read_csv(&path).unwrap(), t);
        let text = t.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), t.rows.len() + 1);
        let col = lines[0].find("PSToPay_g").unwrap();
        assert!(lines[1..].iter().all(|l| l
            .chars()
            .nth(col)
            .is_some_and(|c| c.is_ascii_digit() || c == '-')));
        t.write_plot_data(&dir.path().join("p.csv")).unwrap();
        let plot = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
        assert_eq!(plot.lines().next(), Some("variant,metric,mean,stddev"));
        assert_eq!(plot.lines().count(), 1 + 2 * 3);
    }

    #[test]
    fn fewer_than_two_runs_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            compare_variants(&[dir.path().to_path_buf()], dir.path()),
            Err(Error::Comparability(_))
        ));
    }
}
