//! Ground-truth annotation files.
//!
//! One region per line: an even run of at least six numeric coordinates
//! (`x1,y1,...,xn,yn`), then a script tag, then the transcript. The
//! transcript may be double-quoted to carry commas or quotes (doubled
//! inside). A transcript of `###` marks a region to ignore.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const IGNORE_TRANSCRIPT: &str = "###";

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub points: Vec<(f32, f32)>,
    pub script: String,
    pub transcript: String,
}

impl Annotation {
    pub fn is_ignore(&self) -> bool {
        self.transcript == IGNORE_TRANSCRIPT
    }

    /// Axis-aligned bounding box `(min_x, min_y, max_x, max_y)`.
    pub fn bbox(&self) -> (f32, f32, f32, f32) {
        let mut bb = (f32::MAX, f32::MAX, f32::MIN, f32::MIN);
        for &(x, y) in &self.points {
            bb.0 = bb.0.min(x);
            bb.1 = bb.1.min(y);
            bb.2 = bb.2.max(x);
            bb.3 = bb.3.max(y);
        }
        bb
    }

    /// Extent of the larger bounding-box side.
    pub fn max_dimension(&self) -> f32 {
        let (x0, y0, x1, y1) = self.bbox();
        (x1 - x0).max(y1 - y0)
    }
}

/// Splits a line on commas, honoring double-quoted fields.
fn split_fields(line: &str) -> Option<Vec<String>> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut chars = line.chars().peekable();
    let mut quoted = false;
    while let Some(c) = chars.next() {
        if quoted {
            if c == '"' {
                if chars.peek() == Some(&'"') {
                    cur.push('"');
                    chars.next();
                } else {
                    quoted = false;
                }
            } else {
                cur.push(c);
            }
        } else {
            match c {
                '"' if cur.is_empty() => quoted = true,
                ',' => fields.push(std::mem::take(&mut cur)),
                _ => cur.push(c),
            }
        }
    }
    if quoted {
        return None; // unterminated quote
    }
    fields.push(cur);
    Some(fields)
}

fn parse_line(lineno: usize, line: &str) -> Result<Annotation> {
    let err = |msg: String| Error::Parse { line: lineno, msg };
    let fields = split_fields(line).ok_or_else(|| err("unterminated quote".into()))?;
    if fields.len() < 8 {
        return Err(err(format!(
            "{} fields; need at least 6 coordinates, script and transcript",
            fields.len()
        )));
    }
    let ncoords = fields.len() - 2;
    if ncoords % 2 != 0 {
        return Err(err(format!("odd number of coordinates ({ncoords})")));
    }
    let mut coords = Vec::with_capacity(ncoords);
    for f in &fields[..ncoords] {
        let v: f32 = f
            .trim()
            .parse()
            .map_err(|_| err(format!("bad coordinate {f:?}")))?;
        if !v.is_finite() {
            return Err(err(format!("non-finite coordinate {f:?}")));
        }
        coords.push(v);
    }
    let points = coords.chunks_exact(2).map(|p| (p[0], p[1])).collect();
    Ok(Annotation {
        points,
        script: fields[ncoords].trim().to_string(),
        transcript: fields[ncoords + 1].clone(),
    })
}

/// Parses a whole file; blank lines are skipped, errors carry 1-based
/// line numbers.
pub fn parse_annotations(text: &str) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(i + 1, line)?);
    }
    Ok(out)
}

fn quote_if_needed(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Inverse of [`parse_annotations`]: coordinates are written without
/// trailing zeros when integral.
pub fn write_annotations(anns: &[Annotation]) -> String {
    let mut out = String::new();
    for a in anns {
        for &(x, y) in &a.points {
            for v in [x, y] {
                if v.fract() == 0.0 {
                    let _ = write!(out, "{},", v as i64);
                } else {
                    let _ = write!(out, "{v},");
                }
            }
        }
        let _ = writeln!(
            out,
            "{},{}",
            quote_if_needed(&a.script),
            quote_if_needed(&a.transcript)
        );
    }
    out
}
