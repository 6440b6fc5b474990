//! Line-oriented text formats for correspondences and transforms.
//!
//! ```text
//! VBREG-CORR v1 N=<n> D=<desc_dim> [EPS=<ε>]
//! x1 x2 x3 y1 y2 y3 [d1 … dD] [label]
//! ```
//!
//! Reals are written in shortest round-trip form, so a write/read cycle is
//! bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Correspondence, CorrespondenceSet, Point3, RigidTransform};

const MAGIC: &str = "VBREG-CORR";
const VERSION: &str = "v1";

/// Parsed correspondence file; the threshold is optional on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrFile {
    pub items: Vec<Correspondence>,
    pub labels: Option<Vec<bool>>,
    pub epsilon: Option<f64>,
}

impl CorrFile {
    /// Builds a set, preferring `epsilon_override` over the file's threshold.
    pub fn into_set(self, epsilon_override: Option<f64>) -> Result<CorrespondenceSet> {
        let eps = epsilon_override
            .or(self.epsilon)
            .ok_or_else(|| Error::Config("no inlier threshold: pass --eps or set EPS in the file header".into()))?;
        CorrespondenceSet::new(self.items, self.labels, eps)
    }
}

pub fn format_correspondences(items: &[Correspondence], labels: Option<&[bool]>, epsilon: Option<f64>) -> String {
    let d = items.first().and_then(|c| c.descriptor.as_ref()).map_or(0, Vec::len);
    let mut out = format!("{MAGIC} {VERSION} N={} D={d}", items.len());
    if let Some(e) = epsilon {
        let _ = write!(out, " EPS={e}");
    }
    out.push('\n');
    for (i, c) in items.iter().enumerate() {
        let mut fields: Vec<String> = c.source.iter().chain(c.target.iter()).map(f64::to_string).collect();
        if let Some(desc) = &c.descriptor {
            fields.extend(desc.iter().map(f64::to_string));
        }
        if let Some(l) = labels {
            fields.push(u8::from(l[i]).to_string());
        }
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_correspondences(path: &Path, set: &CorrespondenceSet) -> Result<()> {
    std::fs::write(path, format_correspondences(&set.items, set.labels.as_deref(), Some(set.epsilon)))?;
    Ok(())
}

fn header_error(msg: impl Into<String>) -> Error {
    Error::Parse { line: 1, msg: msg.into() }
}

fn parse_real(tok: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("{what}: `{tok}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("{what}: `{tok}` is not finite"),
        });
    }
    Ok(v)
}

pub fn parse_correspondences(text: &str) -> Result<CorrFile> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| header_error("empty file"))?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some(MAGIC) {
        return Err(header_error(format!("expected `{MAGIC}` header")));
    }
    if toks.next() != Some(VERSION) {
        return Err(header_error(format!("unsupported version, expected `{VERSION}`")));
    }
    let (mut n, mut d, mut eps) = (None, None, None);
    for tok in toks {
        let (key, value) = tok.split_once('=').ok_or_else(|| header_error(format!("bad header field `{tok}`")))?;
        let slot_taken = |taken: bool| if taken { Err(header_error(format!("duplicate `{key}`"))) } else { Ok(()) };
        match key {
            "N" => {
                slot_taken(n.is_some())?;
                n = Some(value.parse::<usize>().map_err(|_| header_error(format!("bad N `{value}`")))?);
            }
            "D" => {
                slot_taken(d.is_some())?;
                d = Some(value.parse::<usize>().map_err(|_| header_error(format!("bad D `{value}`")))?);
            }
            "EPS" => {
                slot_taken(eps.is_some())?;
                let e = parse_real(value, 1, "EPS")?;
                if e <= 0.0 {
                    return Err(header_error(format!("EPS must be positive, got {e}")));
                }
                eps = Some(e);
            }
            _ => return Err(header_error(format!("unknown header field `{key}`"))),
        }
    }
    let n = n.ok_or_else(|| header_error("missing N"))?;
    let d = d.ok_or_else(|| header_error("missing D"))?;

    let mut items = Vec::with_capacity(n);
    let mut labels: Vec<bool> = Vec::new();
    let mut labelled: Option<bool> = None;
    for (k, raw) in lines.enumerate() {
        let line = k + 2;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if toks.is_empty() {
            return Err(Error::Parse { line, msg: "empty row".into() });
        }
        if items.len() == n {
            return Err(Error::Parse {
                line,
                msg: format!("more rows than N = {n}"),
            });
        }
        let has_label = match toks.len() {
            c if c == 6 + d => false,
            c if c == 7 + d => true,
            c => {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {} or {} columns, got {c}", 6 + d, 7 + d),
                })
            }
        };
        if *labelled.get_or_insert(has_label) != has_label {
            return Err(Error::Parse {
                line,
                msg: "rows disagree on whether a label column is present".into(),
            });
        }
        let vals: Vec<f64> = toks[..6 + d]
            .iter()
            .enumerate()
            .map(|(c, t)| parse_real(t, line, &format!("column {}", c + 1)))
            .collect::<Result<_>>()?;
        let mut c = Correspondence::new(Point3::new(vals[0], vals[1], vals[2]), Point3::new(vals[3], vals[4], vals[5]));
        if d > 0 {
            c.descriptor = Some(vals[6..].to_vec());
        }
        items.push(c);
        if has_label {
            labels.push(match toks[6 + d] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("label must be 0 or 1, got `{other}`"),
                    })
                }
            });
        }
    }
    if items.len() != n {
        return Err(Error::Parse {
            line: items.len() + 2,
            msg: format!("expected {n} rows, found {}", items.len()),
        });
    }
    Ok(CorrFile {
        items,
        labels: labelled.unwrap_or(false).then_some(labels),
        epsilon: eps,
    })
}

pub fn read_correspondences(path: &Path) -> Result<CorrFile> {
    parse_correspondences(&std::fs::read_to_string(path)?)
}

/// One line: the 9 rotation entries (row-major) then the translation.
pub fn format_transform(t: &RigidTransform) -> String {
    let vals: Vec<String> = t.to_array().iter().map(f64::to_string).collect();
    format!("{}\n", vals.join(" "))
}

pub fn parse_transform(text: &str) -> Result<RigidTransform> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    if toks.len() != 12 {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected 12 reals, got {}", toks.len()),
        });
    }
    let v: Vec<f64> = toks
        .iter()
        .map(|t| parse_real(t, 1, "transform"))
        .collect::<Result<_>>()?;
    RigidTransform::new(Matrix3::from_row_slice(&v[..9]), Vector3::new(v[9], v[10], v[11]))
}
