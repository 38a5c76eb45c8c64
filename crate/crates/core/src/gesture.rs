//! Line-delimited glove gesture recordings: one `{"t": .., "q_glove": [..]}`
//! object per line, degrees, strictly increasing `t`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GestureRecord {
    /// Seconds since session start.
    pub t: f64,
    /// Glove joints in degrees.
    pub q_glove: Vec<f64>,
}

/// One line of a retargeted hand trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandRecord {
    pub t: f64,
    pub q_hand: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum GestureError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: t = {t} does not increase on the previous record")]
    NotIncreasing { line: usize, t: f64 },
    #[error("line {line}: expected {expected} joint values, found {got}")]
    Width { line: usize, expected: usize, got: usize },
    #[error("gesture is empty")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parse a gesture, checking ordering and, when given, the joint count.
pub fn read_gesture<R: BufRead>(reader: R, width: Option<usize>) -> Result<Vec<GestureRecord>, GestureError> {
    let mut out: Vec<GestureRecord> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: GestureRecord = serde_json::from_str(&line)
            .map_err(|e| GestureError::Malformed { line: line_no, message: e.to_string() })?;
        if !rec.t.is_finite() || rec.q_glove.iter().any(|q| !q.is_finite()) {
            return Err(GestureError::Malformed { line: line_no, message: "non-finite value".into() });
        }
        if let Some(prev) = out.last() {
            if rec.t <= prev.t {
                return Err(GestureError::NotIncreasing { line: line_no, t: rec.t });
            }
        }
        if let Some(w) = width {
            if rec.q_glove.len() != w {
                return Err(GestureError::Width { line: line_no, expected: w, got: rec.q_glove.len() });
            }
        }
        out.push(rec);
    }
    if out.is_empty() {
        return Err(GestureError::Empty);
    }
    Ok(out)
}

pub fn write_record<W: Write, T: Serialize>(mut w: W, record: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut w, record)?;
    w.write_all(b"\n")
}

pub fn write_gesture<W: Write>(mut w: W, records: &[GestureRecord]) -> std::io::Result<()> {
    for r in records {
        write_record(&mut w, r)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_errors() {
        let recs = vec![
            GestureRecord { t: 0.0, q_glove: vec![1.0, 2.5] },
            GestureRecord { t: 0.01, q_glove: vec![1.5, -2.0] },
        ];
        let mut buf = Vec::new();
        write_gesture(&mut buf, &recs).unwrap();
        assert_eq!(read_gesture(buf.as_slice(), Some(2)).unwrap(), recs);

        let bad = b"{\"t\":0,\"q_glove\":[1]}\n{\"t\":0,\"q_glove\":[1]}\n";
        assert!(matches!(read_gesture(&bad[..], None), Err(GestureError::NotIncreasing { line: 2, .. })));
        let bad = b"{\"t\":0,\"q_glove\":[1]}\nnot json\n";
        assert!(matches!(read_gesture(&bad[..], None), Err(GestureError::Malformed { line: 2, .. })));
        assert!(matches!(read_gesture(&b""[..], None), Err(GestureError::Empty)));
        let narrow = b"{\"t\":0,\"q_glove\":[1]}\n";
        assert!(matches!(read_gesture(&narrow[..], Some(12)), Err(GestureError::Width { .. })));
    }
}
