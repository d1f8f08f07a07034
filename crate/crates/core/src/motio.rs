//! MOTChallenge text files and the attribute sidecar.
//!
//! Detection and result rows use the 10-column layout
//! `frame,id,left,top,width,height,conf,x,y,z`. Ground-truth rows are read in
//! either that layout (visibility 1.0) or the 9-column MOT17 layout
//! `frame,id,left,top,width,height,active,class,visibility`, and are written in
//! the 9-column layout so visibility survives a round trip.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::attributes::{AttributeVector, NUM_ATTRIBUTES};
use crate::error::{Error, Result};
use crate::types::{BBox, GtEntry, TrackOutput};

pub const ATTR_HEADER: &str = "# attmot-attrs v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotKind {
    Det,
    Gt,
    Result,
}

/// A detection row without appearance features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetRecord {
    pub frame: u32,
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MotRecords {
    Det(Vec<DetRecord>),
    Gt(Vec<GtEntry>),
    Result(Vec<TrackOutput>),
}

impl MotRecords {
    pub fn len(&self) -> usize {
        match self {
            MotRecords::Det(v) => v.len(),
            MotRecords::Gt(v) => v.len(),
            MotRecords::Result(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn parse_mot_file(path: impl AsRef<Path>, kind: MotKind) -> Result<MotRecords> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_mot(BufReader::new(file), kind).map_err(|e| e.in_file(path))
}

pub fn parse_mot<R: BufRead>(reader: R, kind: MotKind) -> Result<MotRecords> {
    Ok(match kind {
        MotKind::Det => MotRecords::Det(read_detections(reader)?),
        MotKind::Gt => MotRecords::Gt(read_ground_truth(reader)?),
        MotKind::Result => MotRecords::Result(read_results(reader)?),
    })
}

struct Row<'a> {
    line: usize,
    fields: Vec<&'a str>,
}

impl Row<'_> {
    fn f64(&self, idx: usize, what: &str) -> Result<f64> {
        let raw = self.fields[idx].trim();
        let v: f64 = raw
            .parse()
            .map_err(|_| Error::parse(self.line, format!("bad {what} value {raw:?}")))?;
        if !v.is_finite() {
            return Err(Error::parse(self.line, format!("non-finite {what}")));
        }
        Ok(v)
    }

    fn int(&self, idx: usize, what: &str) -> Result<i64> {
        let raw = self.fields[idx].trim();
        if let Ok(v) = raw.parse::<i64>() {
            return Ok(v);
        }
        let v = self.f64(idx, what)?;
        if v.fract() != 0.0 || v.abs() > 1e15 {
            return Err(Error::parse(self.line, format!("{what} must be an integer, got {raw:?}")));
        }
        Ok(v as i64)
    }

    fn frame(&self) -> Result<u32> {
        let f = self.int(0, "frame")?;
        if f < 1 || f > i64::from(u32::MAX) {
            return Err(Error::parse(self.line, format!("frame {f} out of range")));
        }
        Ok(f as u32)
    }

    fn identity(&self) -> Result<u32> {
        let id = self.int(1, "id")?;
        if id < 1 || id > i64::from(u32::MAX) {
            return Err(Error::parse(self.line, format!("identity {id} must be positive")));
        }
        Ok(id as u32)
    }

    fn bbox(&self) -> Result<BBox> {
        let b = BBox {
            left: self.f64(2, "left")?,
            top: self.f64(3, "top")?,
            width: self.f64(4, "width")?,
            height: self.f64(5, "height")?,
        };
        if b.width <= 0.0 || b.height <= 0.0 {
            return Err(Error::parse(self.line, "non-positive box"));
        }
        Ok(b)
    }
}

/// Reads every non-blank line, checking the column count.
fn read_rows<R: BufRead>(reader: R, allowed: &[usize]) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let n = trimmed.split(',').count();
        if !allowed.contains(&n) {
            return Err(Error::parse(
                idx + 1,
                format!("expected {} fields, found {n}", describe(allowed)),
            ));
        }
        out.push((idx + 1, trimmed.to_owned()));
    }
    Ok(out)
}

fn describe(allowed: &[usize]) -> String {
    allowed.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" or ")
}

fn split(line: usize, text: &str) -> Row<'_> {
    Row { line, fields: text.split(',').collect() }
}

pub fn read_detections<R: BufRead>(reader: R) -> Result<Vec<DetRecord>> {
    let mut out = Vec::new();
    for (line, text) in read_rows(reader, &[7, 10])? {
        let row = split(line, &text);
        let confidence = row.f64(6, "confidence")?;
        out.push(DetRecord { frame: row.frame()?, bbox: row.bbox()?, confidence });
    }
    // stable: rows within a frame keep file order
    out.sort_by_key(|d| d.frame);
    Ok(out)
}

pub fn read_ground_truth<R: BufRead>(reader: R) -> Result<Vec<GtEntry>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (line, text) in read_rows(reader, &[7, 9, 10])? {
        let row = split(line, &text);
        let frame = row.frame()?;
        let identity = row.identity()?;
        let active = row.f64(6, "active flag")? != 0.0;
        let visibility = if row.fields.len() == 9 { row.f64(8, "visibility")? } else { 1.0 };
        if !(0.0..=1.0).contains(&visibility) {
            return Err(Error::parse(line, format!("visibility {visibility} outside [0, 1]")));
        }
        if !seen.insert((frame, identity)) {
            return Err(Error::parse(
                line,
                format!("duplicate ground truth for identity {identity} in frame {frame}"),
            ));
        }
        out.push(GtEntry { frame, identity, bbox: row.bbox()?, visibility, active });
    }
    out.sort_by_key(|g| (g.frame, g.identity));
    Ok(out)
}

pub fn read_results<R: BufRead>(reader: R) -> Result<Vec<TrackOutput>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (line, text) in read_rows(reader, &[7, 10])? {
        let row = split(line, &text);
        let frame = row.frame()?;
        let id = row.identity()?;
        if !seen.insert((frame, id)) {
            return Err(Error::parse(line, format!("duplicate track {id} in frame {frame}")));
        }
        out.push(TrackOutput { frame, id, bbox: row.bbox()?, confidence: row.f64(6, "confidence")? });
    }
    out.sort_by_key(|o| (o.frame, o.id));
    Ok(out)
}

/// Formats with at most two fractional digits when that is exact, otherwise
/// with the shortest representation that parses back to the same value.
pub fn format_number(v: f64) -> String {
    let mut s = format!("{v:.2}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".into();
    }
    if s.parse::<f64>().ok() == Some(v) || (v == 0.0 && s == "0") {
        s
    } else {
        format!("{v}")
    }
}

fn box_fields(b: &BBox) -> String {
    format!(
        "{},{},{},{}",
        format_number(b.left),
        format_number(b.top),
        format_number(b.width),
        format_number(b.height)
    )
}

/// Writes tracker outputs in ascending (frame, id) order.
pub fn write_results<W: Write>(mut w: W, outputs: &[TrackOutput]) -> Result<()> {
    let mut sorted: Vec<&TrackOutput> = outputs.iter().collect();
    sorted.sort_by_key(|o| (o.frame, o.id));
    for o in sorted {
        if o.id == 0 {
            return Err(Error::UnassignedId(o.frame));
        }
        writeln!(
            w,
            "{},{},{},{},-1,-1,-1",
            o.frame,
            o.id,
            box_fields(&o.bbox),
            format_number(o.confidence)
        )?;
    }
    Ok(())
}

pub fn write_ground_truth<W: Write>(mut w: W, entries: &[GtEntry]) -> Result<()> {
    let mut sorted: Vec<&GtEntry> = entries.iter().collect();
    sorted.sort_by_key(|g| (g.frame, g.identity));
    for g in sorted {
        writeln!(
            w,
            "{},{},{},{},1,{}",
            g.frame,
            g.identity,
            box_fields(&g.bbox),
            u8::from(g.active),
            format_number(g.visibility)
        )?;
    }
    Ok(())
}

/// Writes detections in the given order (frame-sorted input stays aligned with
/// any per-detection sidecar).
pub fn write_detections<W: Write>(mut w: W, dets: &[DetRecord]) -> Result<()> {
    for d in dets {
        writeln!(
            w,
            "{},-1,{},{},-1,-1,-1",
            d.frame,
            box_fields(&d.bbox),
            format_number(d.confidence)
        )?;
    }
    Ok(())
}

pub fn parse_attr_file(path: impl AsRef<Path>) -> Result<BTreeMap<u32, AttributeVector>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_attributes(BufReader::new(file)).map_err(|e| e.in_file(path))
}

/// Parses the attribute sidecar: optional header, then `id,b0,...,b31`.
pub fn read_attributes<R: BufRead>(reader: R) -> Result<BTreeMap<u32, AttributeVector>> {
    let mut out = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if text.starts_with('#') {
            if lineno == 1 && text == ATTR_HEADER {
                continue;
            }
            return Err(Error::parse(lineno, format!("unexpected header {text:?}")));
        }
        let fields: Vec<&str> = text.split(',').map(str::trim).collect();
        if fields.len() != NUM_ATTRIBUTES + 1 {
            return Err(Error::parse(
                lineno,
                format!("expected {} fields, found {}", NUM_ATTRIBUTES + 1, fields.len()),
            ));
        }
        let id: u32 = fields[0]
            .parse()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::parse(lineno, format!("bad identity {:?}", fields[0])))?;
        let mut bits = [0u8; NUM_ATTRIBUTES];
        for (b, raw) in bits.iter_mut().zip(&fields[1..]) {
            *b = match *raw {
                "0" => 0,
                "1" => 1,
                other => return Err(Error::parse(lineno, format!("non-binary value {other:?}"))),
            };
        }
        let v = AttributeVector::binary(bits).map_err(|e| Error::parse(lineno, e.to_string()))?;
        if out.insert(id, v).is_some() {
            return Err(Error::DuplicateIdentity(id));
        }
    }
    Ok(out)
}

pub fn write_attributes<W: Write>(mut w: W, attrs: &BTreeMap<u32, AttributeVector>) -> Result<()> {
    writeln!(w, "{ATTR_HEADER}")?;
    for (id, v) in attrs {
        let bits: Vec<String> = v.bits().iter().map(|b| b.to_string()).collect();
        writeln!(w, "{id},{}", bits.join(","))?;
    }
    Ok(())
}

/// Groups frame-tagged items, preserving their relative order.
pub fn group_by_frame<T: Clone>(items: &[T], frame_of: impl Fn(&T) -> u32) -> BTreeMap<u32, Vec<T>> {
    let mut out: BTreeMap<u32, Vec<T>> = BTreeMap::new();
    for it in items {
        out.entry(frame_of(it)).or_default().push(it.clone());
    }
    out
}
