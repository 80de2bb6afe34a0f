//! Contexter gate heatmaps: per-source-position averages of the reset and
//! update gates at every target step, with CSV and plain PGM export.

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::context::{GateTrace, Mechanism};
use crate::corpus::{SentencePair, Vocabulary};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numerics::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateKind {
    Update,
    Reset,
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateKind::Update => "update",
            GateKind::Reset => "reset",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Pgm,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "pgm" => Ok(ExportFormat::Pgm),
            other => Err(Error::Input(format!("unknown heatmap format {other:?} (expected csv or pgm)"))),
        }
    }
}

/// Target steps by source positions.
#[derive(Debug, Clone, PartialEq)]
pub struct GateHeatmap {
    pub kind: GateKind,
    pub values: Matrix,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
}

impl GateHeatmap {
    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    /// Column index of each row's maximum (lowest index on ties).
    pub fn row_argmax(&self) -> Vec<usize> {
        (0..self.rows())
            .map(|j| {
                let row = self.values.row(j);
                (0..row.len()).fold(0, |best, i| if row[i] > row[best] { i } else { best })
            })
            .collect()
    }

    /// Fraction of consecutive row pairs whose argmax does not move left.
    pub fn monotone_fraction(&self) -> f64 {
        let a = self.row_argmax();
        if a.len() < 2 {
            return 1.0;
        }
        let ok = a.windows(2).filter(|w| w[1] >= w[0]).count();
        ok as f64 / (a.len() - 1) as f64
    }

    pub fn relabel(&mut self, pair: &SentencePair, src_vocab: &Vocabulary, tgt_vocab: &Vocabulary) {
        self.col_labels = src_vocab.decode(&pair.source);
        self.row_labels = tgt_vocab.decode(&pair.target);
    }
}

/// Mean over hidden units of the reset and update gates at each source
/// position, returned as `(reset, update)`.
pub fn gate_averages(trace: &GateTrace) -> (Vector, Vector) {
    let mean_rows = |m: &Matrix| -> Vector {
        (0..m.rows())
            .map(|t| m.row(t).iter().sum::<f64>() / m.cols() as f64)
            .collect()
    };
    (mean_rows(&trace.reset), mean_rows(&trace.update))
}

/// Teacher-forced gate heatmaps `(update, reset)` for one pair. Labels are
/// token ids until [`GateHeatmap::relabel`] is called.
pub fn collect_heatmaps(model: &ModelParams, pair: &SentencePair) -> Result<(GateHeatmap, GateHeatmap)> {
    if model.mode.mechanism != Mechanism::Contexter {
        return Err(Error::UnsupportedMechanism(
            "gate heatmaps need a contexter model; this checkpoint uses attention".into(),
        ));
    }
    let trace = model.forward(pair)?;
    let (m, n) = (pair.target.len(), pair.source.len());
    let mut update = Matrix::zeros(m, n);
    let mut reset = Matrix::zeros(m, n);
    for (j, step) in trace.steps.iter().enumerate() {
        let gates = step
            .context
            .trace
            .as_ref()
            .ok_or_else(|| Error::State("contexter step without a gate trace".into()))?;
        let (r, z) = gate_averages(gates);
        update.row_mut(j).copy_from_slice(&z);
        reset.row_mut(j).copy_from_slice(&r);
    }
    let rows: Vec<String> = pair.target.iter().map(|y| y.to_string()).collect();
    let cols: Vec<String> = pair.source.iter().map(|x| x.to_string()).collect();
    let make = |kind, values| GateHeatmap {
        kind,
        values,
        row_labels: rows.clone(),
        col_labels: cols.clone(),
    };
    Ok((make(GateKind::Update, update), make(GateKind::Reset, reset)))
}

/// Pearson correlation between two equally shaped heatmaps; `None` when
/// either is constant.
pub fn correlation(a: &GateHeatmap, b: &GateHeatmap) -> Result<Option<f64>> {
    if a.values.shape() != b.values.shape() {
        return Err(Error::shape("heatmaps differ in shape"));
    }
    let (x, y) = (a.values.data(), b.values.data());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (u, v) in x.iter().zip(y) {
        sxy += (u - mx) * (v - my);
        sxx += (u - mx) * (u - mx);
        syy += (v - my) * (v - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some(sxy / (sxx * syy).sqrt()))
}

/// Grey level of one entry: `round(v * 255)` with halves rounded up.
pub fn pgm_level(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn to_pgm(hm: &GateHeatmap) -> String {
    let mut s = format!("P2\n{} {}\n255\n", hm.cols(), hm.rows());
    for j in 0..hm.rows() {
        let row: Vec<String> = hm.values.row(j).iter().map(|&v| pgm_level(v).to_string()).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn to_csv(hm: &GateHeatmap) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![String::new()];
    header.extend(hm.col_labels.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for j in 0..hm.rows() {
        let mut rec = vec![hm.row_labels.get(j).cloned().unwrap_or_default()];
        rec.extend(hm.values.row(j).iter().map(|v| format!("{v:.6}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Parses the CSV written by [`to_csv`].
pub fn parse_csv(text: &str, kind: GateKind) -> Result<GateHeatmap> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_reader(text.as_bytes());
    let mut records = r.records();
    let header = records
        .next()
        .ok_or_else(|| Error::Format("empty heatmap csv".into()))?
        .map_err(csv_err)?;
    let col_labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut row_labels = Vec::new();
    let mut data = Vec::new();
    for rec in records {
        let rec = rec.map_err(csv_err)?;
        row_labels.push(rec.get(0).unwrap_or_default().to_string());
        for field in rec.iter().skip(1) {
            data.push(
                field
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad heatmap value {field:?}")))?,
            );
        }
    }
    let values = Matrix::from_vec(row_labels.len(), col_labels.len(), data)?;
    Ok(GateHeatmap {
        kind,
        values,
        row_labels,
        col_labels,
    })
}

pub fn export_heatmap(hm: &GateHeatmap, path: impl AsRef<Path>, format: ExportFormat) -> Result<()> {
    let body = match format {
        ExportFormat::Csv => to_csv(hm)?,
        ExportFormat::Pgm => to_pgm(hm),
    };
    let mut f = std::fs::File::create(path)?;
    f.write_all(body.as_bytes())?;
    Ok(())
}
