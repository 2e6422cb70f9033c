//! On-disk formats.
//!
//! Binary `LSA1` layout, all integers and floats little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4 | magic `LSA1` |
//! | 4 | `u32` version, currently 1 |
//! | 8 | `u64` rows |
//! | 8 | `u64` cols |
//! | 1 | kind: 0 absolute, 1 relative |
//! | 8·rows·cols | `f64` entries, row-major |
//! | 8 | `u64` metadata length |
//! | … | UTF-8 JSON: `sample_ids`, `labels`, `task_id`, and `anchor_ids` for relative spaces |
//!
//! CSV files hold absolute spaces with the header `id,label,dim_0,…,dim_{d-1}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::space::{
    AggregatedSpace, AggregationMode, AnySpace, EmbeddingSpace, Label, RelativeSpace, Violation, ViolationKind,
};

pub const MAGIC: &[u8; 4] = b"LSA1";
pub const VERSION: u32 = 1;
const KIND_ABSOLUTE: u8 = 0;
const KIND_RELATIVE: u8 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 1;

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    sample_ids: Vec<String>,
    labels: Vec<Label>,
    task_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    anchor_ids: Option<Vec<String>>,
}

pub fn encode_space(space: &AnySpace) -> Vec<u8> {
    let (kind, matrix, meta) = match space {
        AnySpace::Absolute(s) => (
            KIND_ABSOLUTE,
            &s.embeddings,
            Metadata { sample_ids: s.sample_ids.clone(), labels: s.labels.clone(), task_id: s.task_id.clone(), anchor_ids: None },
        ),
        AnySpace::Relative(s) => (
            KIND_RELATIVE,
            &s.similarities,
            Metadata {
                sample_ids: s.sample_ids.clone(),
                labels: s.labels.clone(),
                task_id: s.task_id.clone(),
                anchor_ids: Some(s.anchor_ids.clone()),
            },
        ),
    };
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * matrix.as_slice().len() + 8 + json.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(matrix.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(matrix.cols() as u64).to_le_bytes());
    out.push(kind);
    for v in matrix.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::TruncatedPayload(format!("{what}: need {n} bytes at offset {}, file has {}", self.pos, self.buf.len()))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses an `LSA1` buffer and validates the resulting space.
pub fn decode_space(buf: &[u8]) -> Result<AnySpace> {
    if buf.len() < HEADER_LEN {
        if buf.len() >= 4 && &buf[..4] != MAGIC {
            return Err(Error::MalformedHeader("bad magic".into()));
        }
        return Err(Error::TruncatedPayload(format!("header needs {HEADER_LEN} bytes, file has {}", buf.len())));
    }
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::MalformedHeader("bad magic".into()));
    }
    let version = u32::from_le_bytes(c.take(4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::MalformedHeader(format!("unsupported version {version}")));
    }
    let rows = c.u64("rows")?;
    let cols = c.u64("cols")?;
    let kind = c.take(1, "kind")?[0];
    if kind != KIND_ABSOLUTE && kind != KIND_RELATIVE {
        return Err(Error::MalformedHeader(format!("unknown kind byte {kind}")));
    }
    let count = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| Error::MalformedHeader(format!("{rows}×{cols} overflows")))?;
    let payload = c.take(count, "matrix payload")?;
    let data: Vec<f64> = payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    let meta_len = usize::try_from(c.u64("metadata length")?)
        .map_err(|_| Error::MalformedHeader("metadata length overflows".into()))?;
    let meta_bytes = c.take(meta_len, "metadata")?;
    if c.pos != buf.len() {
        return Err(Error::MalformedHeader(format!("{} trailing bytes", buf.len() - c.pos)));
    }
    let meta: Metadata = serde_json::from_slice(meta_bytes)?;
    let (rows, cols) = (rows as usize, cols as usize);
    let matrix = Matrix::new(rows, cols, data).map_err(|e| match e {
        Error::NonFinite { index } => Error::ValidationFailed(vec![Violation::new(
            ViolationKind::NonFinite,
            Some(index / cols.max(1)),
            "entry is not finite",
        )]),
        other => other,
    })?;
    let space = if kind == KIND_ABSOLUTE {
        AnySpace::Absolute(EmbeddingSpace {
            embeddings: matrix,
            sample_ids: meta.sample_ids,
            labels: meta.labels,
            task_id: meta.task_id,
        })
    } else {
        AnySpace::Relative(RelativeSpace {
            similarities: matrix,
            sample_ids: meta.sample_ids,
            labels: meta.labels,
            task_id: meta.task_id,
            anchor_ids: meta.anchor_ids.unwrap_or_default(),
        })
    };
    space.validate().into_result()?;
    Ok(space)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads a space, choosing the format by extension (`.csv`, anything else is `LSA1`).
pub fn read_space(path: impl AsRef<Path>) -> Result<AnySpace> {
    let path = path.as_ref();
    if is_csv(path) {
        let task = path.file_stem().and_then(|s| s.to_str()).unwrap_or("csv").to_string();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return Ok(AnySpace::Absolute(parse_csv(&text, &task)?));
    }
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_space(&buf)
}

pub fn write_space(space: &AnySpace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = if is_csv(path) {
        match space {
            AnySpace::Absolute(s) => to_csv(s).into_bytes(),
            AnySpace::Relative(_) => {
                return Err(Error::InvalidParameter("CSV holds absolute spaces only; use .lsa".into()))
            }
        }
    } else {
        encode_space(space)
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads an absolute space. Relative files are rejected.
pub fn read_embedding_space(path: impl AsRef<Path>) -> Result<EmbeddingSpace> {
    match read_space(path.as_ref())? {
        AnySpace::Absolute(s) => Ok(s),
        AnySpace::Relative(_) => {
            Err(Error::InvalidParameter(format!("{} holds a relative space", path.as_ref().display())))
        }
    }
}

/// Parses the CSV interchange format. Rows and columns in errors are 1-based
/// and count the header line.
pub fn parse_csv(text: &str, task_id: &str) -> Result<EmbeddingSpace> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Csv { row: 1, column: 1, message: e.to_string() })?
        .clone();
    if header.len() < 3 || &header[0] != "id" || &header[1] != "label" {
        return Err(Error::Csv { row: 1, column: 1, message: "header must be id,label,dim_0,...".into() });
    }
    for (j, name) in header.iter().enumerate().skip(2) {
        if name != format!("dim_{}", j - 2) {
            return Err(Error::Csv { row: 1, column: j + 1, message: format!("expected dim_{}, found `{name}`", j - 2) });
        }
    }
    let d = header.len() - 2;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::Csv { row, column: 1, message: e.to_string() })?;
        if record.len() != d + 2 {
            return Err(Error::Csv {
                row,
                column: record.len().min(d + 2) + 1,
                message: format!("expected {} fields, found {}", d + 2, record.len()),
            });
        }
        ids.push(record[0].to_string());
        labels.push(record[1].parse::<Label>().map_err(|e| Error::Csv {
            row,
            column: 2,
            message: format!("label `{}`: {e}", &record[1]),
        })?);
        for j in 0..d {
            let cell = &record[j + 2];
            let v: f64 = cell
                .parse()
                .map_err(|e| Error::Csv { row, column: j + 3, message: format!("`{cell}`: {e}") })?;
            if !v.is_finite() {
                return Err(Error::Csv { row, column: j + 3, message: format!("`{cell}` is not finite") });
            }
            data.push(v);
        }
    }
    let n = ids.len();
    EmbeddingSpace::new(Matrix::new(n, d, data)?, ids, labels, task_id)
}

/// Writes the CSV interchange format; floats use shortest round-trip text.
pub fn to_csv(space: &EmbeddingSpace) -> String {
    let mut out = String::from("id,label");
    for j in 0..space.dim() {
        out.push_str(&format!(",dim_{j}"));
    }
    out.push('\n');
    for (i, row) in space.embeddings.iter_rows().enumerate() {
        out.push_str(&space.sample_ids[i]);
        out.push_str(&format!(",{}", space.labels[i]));
        for v in row {
            out.push_str(&format!(",{v:?}"));
        }
        out.push('\n');
    }
    out
}

/// Converts an aggregate into a storable space. Relative aggregates keep
/// their anchors; union rows are renamed `<task>/<id>` so ids stay unique.
pub fn aggregated_to_space(agg: &AggregatedSpace, task_id: &str) -> Result<AnySpace> {
    let space = match agg.mode {
        AggregationMode::Relative => AnySpace::Relative(RelativeSpace {
            similarities: agg.representation.clone(),
            sample_ids: agg.sample_ids.clone(),
            labels: agg.labels.clone(),
            task_id: task_id.into(),
            anchor_ids: agg.anchor_ids.clone().unwrap_or_default(),
        }),
        AggregationMode::NaiveMean => AnySpace::Absolute(EmbeddingSpace {
            embeddings: agg.representation.clone(),
            sample_ids: agg.sample_ids.clone(),
            labels: agg.labels.clone(),
            task_id: task_id.into(),
        }),
        AggregationMode::AbsoluteUnion => AnySpace::Absolute(EmbeddingSpace {
            embeddings: agg.representation.clone(),
            sample_ids: agg.sample_ids.iter().zip(&agg.sources).map(|(id, s)| format!("{}/{id}", s[0])).collect(),
            labels: agg.labels.clone(),
            task_id: task_id.into(),
        }),
    };
    space.validate().into_result()?;
    Ok(space)
}

/// `id,label,pc_0,…` rows for plotting.
pub fn pca_csv(ids: &[String], labels: &[Label], projected: &Matrix) -> String {
    let mut out = String::from("id,label");
    for j in 0..projected.cols() {
        out.push_str(&format!(",pc_{j}"));
    }
    out.push('\n');
    for (i, row) in projected.iter_rows().enumerate() {
        out.push_str(&format!("{},{}", ids[i], labels[i]));
        for v in row {
            out.push_str(&format!(",{v:?}"));
        }
        out.push('\n');
    }
    out
}

/// Self-contained SVG scatter of the first two columns, colored by label.
pub fn pca_svg(labels: &[Label], projected: &Matrix, title: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 640.0;
    const PAD: f64 = 40.0;
    let col = |j: usize| -> Vec<f64> { (0..projected.rows()).map(|i| if j < projected.cols() { projected.get(i, j) } else { 0.0 }).collect() };
    let (xs, ys) = (col(0), col(1));
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo { (lo, hi) } else { (lo - 1.0, lo + 1.0) }
    };
    let ((x0, x1), (y0, y1)) = (range(&xs), range(&ys));
    let classes = labels.iter().copied().max().map_or(1, |m| m as usize + 1);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{PAD}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
        escape_xml(title)
    );
    for i in 0..xs.len() {
        let px = PAD + (xs[i] - x0) / (x1 - x0) * (W - 2.0 * PAD);
        let py = H - PAD - (ys[i] - y0) / (y1 - y0) * (H - 2.0 * PAD);
        let hue = (labels[i] as f64 * 360.0 / classes as f64).round();
        out.push_str(&format!(
            "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"2.5\" fill=\"hsl({hue},70%,45%)\" fill-opacity=\"0.8\"/>\n"
        ));
    }
    out.push_str("</svg>\n");
    out
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
