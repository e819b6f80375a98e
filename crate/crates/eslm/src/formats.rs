//! CSV artifacts: event log, samples, training log, metrics and SSB rows.
//!
//! All files are UTF-8 with LF line endings; flags are written as `0`/`1`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use eslm_core::dataset::{Dataset, FeatureLayout, Label, Labels, Sample, Space, Split};
use eslm_core::eval::{MetricsReport, Scorer};
use eslm_core::funnel::{FunnelEvent, World};
use eslm_core::objectives::Variant;
use eslm_core::train::StepLog;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EVENT_HEADER: &str =
    "user_id,item_id,scene_id,ps,pv,click,pay_g,pay_other,pay_a,timestamp";
pub const SAMPLE_HEADER: &str = "user_id,item_id,timestamp,seq,click,pay_g,pay_a,split,pv";
pub const TRAIN_LOG_HEADER: &str = "step,variant,loss_total,loss_head_a,loss_head_g";
pub const METRICS_HEADER: &str = "variant,space,label,scorer,auc,positives,total,calibration,seed";
pub const SSB_HEADER: &str = "variant,train_space,mean_gap,decile_distance,ssb_divergence,seed";

fn flag(b: bool) -> u8 {
    u8::from(b)
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(Error::io(path))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file)))
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = writer(path)?;
    for row in rows {
        w.serialize(row).map_err(Error::csv(path))?;
    }
    w.flush().map_err(Error::io(path))
}

/// Reads every record after checking the header matches `header` exactly.
fn read_rows<T: DeserializeOwned>(path: &Path, header: &str) -> Result<Vec<T>> {
    let file = File::open(path).map_err(Error::io(path))?;
    read_rows_from(BufReader::new(file), path, header)
}

fn read_rows_from<T: DeserializeOwned, R: Read>(
    reader: R,
    path: &Path,
    header: &str,
) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(reader);
    let found = r
        .headers()
        .map_err(Error::csv(path))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if found != header {
        return Err(Error::Format {
            path: path.to_path_buf(),
            record: 0,
            reason: format!("header `{found}`, expected `{header}`"),
        });
    }
    r.deserialize()
        .map(|row| row.map_err(Error::csv(path)))
        .collect()
}

fn bad(path: &Path, record: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        record: record as u64 + 1,
        reason: reason.into(),
    }
}

fn parse_flag(path: &Path, record: usize, name: &str, v: u8) -> Result<bool> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(bad(
            path,
            record,
            format!("`{name}` must be 0 or 1, got {v}"),
        )),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EventRow {
    user_id: u32,
    item_id: u32,
    scene_id: u32,
    ps: u8,
    pv: u8,
    click: u8,
    pay_g: u8,
    pay_other: u8,
    pay_a: u8,
    timestamp: u32,
}

pub fn write_events(path: &Path, events: &[FunnelEvent]) -> Result<()> {
    write_rows(
        path,
        events.iter().map(|e| EventRow {
            user_id: e.user_id,
            item_id: e.item_id,
            scene_id: e.scene_id,
            ps: flag(e.ps),
            pv: flag(e.pv),
            click: flag(e.click),
            pay_g: flag(e.pay_g),
            pay_other: flag(e.pay_other),
            pay_a: flag(e.pay_a()),
            timestamp: e.timestamp,
        }),
    )
}

/// Reads an event log, rejecting rows that break the funnel ordering.
pub fn read_events(path: &Path) -> Result<Vec<FunnelEvent>> {
    let rows: Vec<EventRow> = read_rows(path, EVENT_HEADER)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            let e = FunnelEvent {
                user_id: r.user_id,
                item_id: r.item_id,
                scene_id: r.scene_id,
                ps: parse_flag(path, i, "ps", r.ps)?,
                pv: parse_flag(path, i, "pv", r.pv)?,
                click: parse_flag(path, i, "click", r.click)?,
                pay_g: parse_flag(path, i, "pay_g", r.pay_g)?,
                pay_other: parse_flag(path, i, "pay_other", r.pay_other)?,
                timestamp: r.timestamp,
            };
            if !e.is_ordered() {
                return Err(bad(path, i, "funnel ordering violated"));
            }
            if parse_flag(path, i, "pay_a", r.pay_a)? != e.pay_a() {
                return Err(bad(path, i, "pay_a must equal pay_g or pay_other"));
            }
            Ok(e)
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRow {
    user_id: u32,
    item_id: u32,
    timestamp: u32,
    /// Behaviour item ids separated by `|`, oldest first.
    seq: String,
    click: u8,
    pay_g: u8,
    pay_a: u8,
    split: String,
    pv: u8,
}

/// Writes the samples of one space; categorical features are implied by the
/// world and are not stored.
pub fn write_samples(path: &Path, samples: &[Sample]) -> Result<()> {
    write_rows(
        path,
        samples.iter().map(|s| SampleRow {
            user_id: s.user_id,
            item_id: s.item_id,
            timestamp: s.timestamp,
            seq: s
                .sequence
                .iter()
                .map(u32::to_string)
                .collect::<Vec<_>>()
                .join("|"),
            click: flag(s.labels.click),
            pay_g: flag(s.labels.pay_g),
            pay_a: flag(s.labels.pay_a),
            split: s.split.as_str().to_string(),
            pv: flag(s.pv),
        }),
    )
}

/// Reads one space's samples and splits them into (train, test).
pub fn read_samples(path: &Path, space: Space, world: &World) -> Result<(Dataset, Dataset)> {
    let layout = FeatureLayout::for_world(world);
    let rows: Vec<SampleRow> = read_rows(path, SAMPLE_HEADER)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, r) in rows.into_iter().enumerate() {
        world
            .check_ids(r.user_id, r.item_id)
            .map_err(|e| bad(path, i, e.to_string()))?;
        let sequence = r
            .seq
            .split('|')
            .filter(|t| !t.is_empty())
            .map(|t| {
                let id: u32 = t
                    .parse()
                    .map_err(|_| bad(path, i, format!("bad sequence entry `{t}`")))?;
                if id as usize >= layout.items {
                    return Err(bad(
                        path,
                        i,
                        format!("sequence item {id} is not in the catalogue"),
                    ));
                }
                Ok(id)
            })
            .collect::<Result<Vec<u32>>>()?;
        let split = match r.split.as_str() {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(bad(path, i, format!("unknown split `{other}`"))),
        };
        let labels = Labels {
            click: parse_flag(path, i, "click", r.click)?,
            pay_g: parse_flag(path, i, "pay_g", r.pay_g)?,
            pay_a: parse_flag(path, i, "pay_a", r.pay_a)?,
        };
        let pv = parse_flag(path, i, "pv", r.pv)?;
        if space == Space::Pv && !pv {
            return Err(bad(path, i, "impression samples must have pv = 1"));
        }
        let sample = Sample {
            user_id: r.user_id,
            item_id: r.item_id,
            timestamp: r.timestamp,
            pv,
            features: layout.features(world, r.user_id, r.item_id, 0, sequence.len()),
            sequence,
            labels,
            split,
        };
        match split {
            Split::Train => train.push(sample),
            Split::Test => test.push(sample),
        }
    }
    Ok((Dataset::new(space, train), Dataset::new(space, test)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub variant: String,
    pub loss_total: f64,
    pub loss_head_a: f64,
    pub loss_head_g: f64,
}

impl From<&StepLog> for TrainLogRow {
    fn from(l: &StepLog) -> Self {
        Self {
            step: l.step,
            variant: l.variant.as_str().to_string(),
            loss_total: l.loss.total,
            loss_head_a: l.loss.head_a,
            loss_head_g: l.loss.head_g,
        }
    }
}

pub fn write_train_log(path: &Path, rows: &[TrainLogRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_train_log(path: &Path) -> Result<Vec<TrainLogRow>> {
    read_rows(path, TRAIN_LOG_HEADER)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub variant: String,
    pub space: String,
    pub label: String,
    pub scorer: String,
    pub auc: f64,
    pub positives: usize,
    pub total: usize,
    pub calibration: f64,
    pub seed: u64,
}

impl From<&MetricsReport> for MetricsRow {
    fn from(m: &MetricsReport) -> Self {
        Self {
            variant: m.variant.as_str().to_string(),
            space: m.space.as_str().to_string(),
            label: m.label.as_str().to_string(),
            scorer: m.scorer.as_str().to_string(),
            auc: m.auc,
            positives: m.positives,
            total: m.total,
            calibration: m.calibration,
            seed: m.seed,
        }
    }
}

impl MetricsRow {
    pub fn variant(&self) -> Option<Variant> {
        Variant::parse(&self.variant)
    }

    pub fn label(&self) -> Option<Label> {
        Label::parse(&self.label)
    }

    pub fn scorer(&self) -> Option<Scorer> {
        Scorer::parse(&self.scorer)
    }
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    read_rows(path, METRICS_HEADER)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsbRow {
    pub variant: String,
    pub train_space: String,
    pub mean_gap: f64,
    pub decile_distance: f64,
    pub ssb_divergence: f64,
    pub seed: u64,
}

pub fn write_ssb(path: &Path, rows: &[SsbRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_ssb(path: &Path) -> Result<Vec<SsbRow>> {
    read_rows(path, SSB_HEADER)
}

/// Writes `text` to `path`, creating or truncating it.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(Error::io(path))?;
    f.write_all(text.as_bytes()).map_err(Error::io(path))
}
