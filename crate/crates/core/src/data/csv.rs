//! Windowed CSV: header `label,c0_t0,...,c{C-1}_t{L-1}`, one sample per row,
//! channel-major. Sample ids are the zero-based row index.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::SignalSample;
use crate::error::{io_err, DggnError, Result};

/// Parses the header and returns `(channels, len)`.
fn parse_header(header: &str) -> Result<(usize, usize)> {
    let perr = |message: String| DggnError::Parse { line: 1, message };
    let mut cols = header.trim_end_matches('\r').split(',');
    if cols.next().map(str::trim) != Some("label") {
        return Err(perr("missing label column".into()));
    }
    let mut pairs = Vec::new();
    for col in cols {
        let col = col.trim();
        let (c, t) = col
            .strip_prefix('c')
            .and_then(|rest| rest.split_once("_t"))
            .ok_or_else(|| perr(format!("bad column name {col:?}")))?;
        let c: usize = c.parse().map_err(|_| perr(format!("bad channel index in {col:?}")))?;
        let t: usize = t.parse().map_err(|_| perr(format!("bad step index in {col:?}")))?;
        pairs.push((c, t));
    }
    if pairs.is_empty() {
        return Err(perr("no value columns".into()));
    }
    let len = pairs.iter().take_while(|(c, _)| *c == 0).count();
    if len == 0 || pairs.len() % len != 0 {
        return Err(perr("columns do not form a channel x step grid".into()));
    }
    let channels = pairs.len() / len;
    for (i, &(c, t)) in pairs.iter().enumerate() {
        if c != i / len || t != i % len {
            return Err(perr(format!("column c{c}_t{t} out of channel-major order")));
        }
    }
    Ok((channels, len))
}

pub fn parse_csv(text: &str) -> Result<Vec<SignalSample>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(DggnError::Parse {
        line: 1,
        message: "missing header".into(),
    })?;
    let (channels, len) = parse_header(header)?;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let perr = |message: String| DggnError::Parse { line: line_no, message };
        let mut fields = line.split(',');
        let label_field = fields.next().unwrap_or("").trim();
        let label: usize = label_field
            .parse()
            .map_err(|_| perr(format!("bad label {label_field:?}")))?;
        let mut values = Vec::with_capacity(channels * len);
        for f in fields {
            let v: f64 = f.trim().parse().map_err(|_| perr(format!("bad value {f:?}")))?;
            if !v.is_finite() {
                return Err(perr(format!("non-finite value {f:?}")));
            }
            values.push(v);
        }
        if values.len() != channels * len {
            return Err(perr(format!(
                "row has {} values, header declares {}",
                values.len(),
                channels * len
            )));
        }
        out.push(SignalSample::new(channels, len, values, label, out.len() as u64).map_err(|e| perr(e.to_string()))?);
    }
    Ok(out)
}

pub fn ingest_csv(path: impl AsRef<Path>) -> Result<Vec<SignalSample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_csv(&text)
}

/// Renders samples; all must share one shape. An empty list needs the shape explicitly.
pub fn render_csv(samples: &[SignalSample], shape: (usize, usize)) -> Result<String> {
    let (channels, len) = shape;
    let mut s = String::from("label");
    for c in 0..channels {
        for t in 0..len {
            write!(s, ",c{c}_t{t}").expect("write to string");
        }
    }
    s.push('\n');
    for sample in samples {
        if (sample.channels(), sample.len()) != shape {
            return Err(DggnError::Domain(format!(
                "sample {} is {}x{}, expected {channels}x{len}",
                sample.sample_id,
                sample.channels(),
                sample.len()
            )));
        }
        write!(s, "{}", sample.label).expect("write to string");
        for v in sample.values() {
            // `Display` for f64 prints the shortest string that round-trips.
            write!(s, ",{v}").expect("write to string");
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn export_csv(samples: &[SignalSample], shape: (usize, usize), path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_csv(samples, shape)?).map_err(io_err(path))
}
