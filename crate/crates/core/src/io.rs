//! Readers and writers for annotation JSON, proposal CSV, coverage reports
//! and sweep curves, plus a converter for VOC-style XML annotations.
//!
//! Annotation document:
//!
//! ```json
//! {"version": "1.0",
//!  "images": [{"id": "img1", "width": 640, "height": 480,
//!              "objects": [{"class": "logo", "bbox": [x, y, w, h]}]}]}
//! ```
//!
//! Proposal CSV: header `image_id,score,x,y,w,h` with an optional trailing
//! `level` column.
//!
//! Report and curve writers format every real number with six decimals and
//! emit JSON keys in sorted order, so identical inputs give identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::anchors::LevelName;
use crate::coverage::{CoverageReport, SweepCurve, SweepPoint};
use crate::dataset::{Dataset, GroundtruthObject, ImageAnnotation, Provenance};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::proposals::{ProposalSet, ScoredBox};

pub const ANNOTATION_VERSION: &str = "1.0";
const SUPPORTED_VERSIONS: [&str; 1] = [ANNOTATION_VERSION];

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    images: Vec<RawImage>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawImage {
    id: String,
    width: f64,
    height: f64,
    objects: Vec<RawObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<RawProvenance>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObject {
    class: String,
    bbox: [f64; 4],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProvenance {
    source: String,
    crop: [f64; 4],
    scale: f64,
}

fn json_error(e: serde_json::Error) -> Error {
    let kind = match e.classify() {
        serde_json::error::Category::Syntax | serde_json::error::Category::Eof => "syntax error",
        serde_json::error::Category::Data => "schema violation",
        serde_json::error::Category::Io => "read error",
    };
    // serde_json appends "at line L column C" to its own message
    let msg = e.to_string();
    let msg = msg.split(" at line ").next().unwrap_or(&msg).to_string();
    Error::parse(format!("line {}, column {}", e.line(), e.column()), format!("{kind}: {msg}"))
}

/// Parse and validate an annotation document. `default_name` names the
/// dataset when the document has no `name`.
pub fn parse_annotations(bytes: &[u8], default_name: &str) -> Result<Dataset> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::parse(format!("byte {}", e.valid_up_to()), "input is not valid UTF-8"))?;
    let doc: RawDocument = serde_json::from_str(text).map_err(json_error)?;
    if !SUPPORTED_VERSIONS.contains(&doc.version.as_str()) {
        return Err(Error::parse(
            "version",
            format!("unsupported version `{}` (expected one of {SUPPORTED_VERSIONS:?})", doc.version),
        ));
    }
    let mut images = Vec::with_capacity(doc.images.len());
    let mut seen = std::collections::HashSet::new();
    for (i, raw) in doc.images.into_iter().enumerate() {
        let at = |field: &str| format!("images[{i}] (id `{}`).{field}", raw.id);
        if raw.id.is_empty() {
            return Err(Error::parse(format!("images[{i}].id"), "image id must not be empty"));
        }
        if !seen.insert(raw.id.clone()) {
            return Err(Error::parse(at("id"), format!("duplicate image id `{}`", raw.id)));
        }
        let mut objects = Vec::with_capacity(raw.objects.len());
        for (k, obj) in raw.objects.iter().enumerate() {
            if obj.class.is_empty() {
                return Err(Error::parse(at(&format!("objects[{k}].class")), "class must not be empty"));
            }
            let [x, y, w, h] = obj.bbox;
            let bbox = BBox::new(x, y, w, h)
                .map_err(|e| Error::parse(at(&format!("objects[{k}].bbox")), e.to_string()))?;
            objects.push(GroundtruthObject::new(obj.class.clone(), bbox)?);
        }
        let mut img = ImageAnnotation::new(raw.id.clone(), raw.width, raw.height, objects).map_err(|e| {
            let rule = match e {
                Error::InvalidImage { reason, .. } => reason,
                other => other.to_string(),
            };
            Error::parse(format!("images[{i}] (id `{}`)", raw.id), rule)
        })?;
        if let Some(p) = raw.provenance {
            if !(p.scale.is_finite() && p.scale > 0.0) {
                return Err(Error::parse(at("provenance.scale"), "scale must be finite and > 0"));
            }
            img = img.with_provenance(Provenance {
                source_id: p.source,
                crop: p.crop,
                scale: p.scale,
            });
        }
        images.push(img);
    }
    Dataset::new(doc.name.unwrap_or_else(|| default_name.to_string()), images)
}

/// Serialize a dataset as an annotation document. Coordinates keep full
/// precision so derived datasets map back onto their sources exactly.
pub fn write_annotations(ds: &Dataset) -> String {
    let doc = RawDocument {
        version: ANNOTATION_VERSION.to_string(),
        name: Some(ds.name().to_string()),
        images: ds
            .images()
            .iter()
            .map(|img| RawImage {
                id: img.image_id().to_string(),
                width: img.width(),
                height: img.height(),
                objects: img
                    .objects()
                    .iter()
                    .map(|o| RawObject {
                        class: o.class_name.clone(),
                        bbox: o.bbox.as_array(),
                    })
                    .collect(),
                provenance: img.provenance().map(|p| RawProvenance {
                    source: p.source_id.clone(),
                    crop: p.crop,
                    scale: p.scale,
                }),
            })
            .collect(),
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("annotation documents always serialize");
    out.push('\n');
    out
}

fn csv_location(pos: Option<&csv::Position>) -> String {
    match pos {
        Some(p) => format!("line {}", p.line()),
        None => "unknown line".to_string(),
    }
}

/// Parse a proposal CSV into per-image sets, preserving row order.
pub fn parse_proposals(bytes: &[u8]) -> Result<BTreeMap<String, ProposalSet>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(csv_location(e.position()), format!("unreadable header: {e}")))?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    let has_level = match names.as_slice() {
        ["image_id", "score", "x", "y", "w", "h"] => false,
        ["image_id", "score", "x", "y", "w", "h", "level"] => true,
        _ => {
            return Err(Error::parse(
                "line 1",
                format!("header must be `image_id,score,x,y,w,h[,level]`, found `{}`", names.join(",")),
            ))
        }
    };
    let n_cols = if has_level { 7 } else { 6 };
    let mut out: BTreeMap<String, ProposalSet> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(csv_location(e.position()), format!("malformed row: {e}")))?;
        let line = csv_location(record.position());
        if record.len() != n_cols {
            return Err(Error::parse(line, format!("expected {n_cols} fields, found {}", record.len())));
        }
        let id = &record[0];
        if id.is_empty() {
            return Err(Error::parse(line, "field `image_id` must not be empty"));
        }
        let num = |k: usize, name: &str| -> Result<f64> {
            let v: f64 = record[k]
                .parse()
                .map_err(|_| Error::parse(line.clone(), format!("field `{name}`: `{}` is not a number", &record[k])))?;
            if !v.is_finite() {
                return Err(Error::parse(line.clone(), format!("field `{name}` must be finite")));
            }
            Ok(v)
        };
        let score = num(1, "score")?;
        let (x, y, w, h) = (num(2, "x")?, num(3, "y")?, num(4, "w")?, num(5, "h")?);
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::parse(line, format!("fields `w`,`h` must be > 0, found {w},{h}")));
        }
        let bbox = BBox::new(x, y, w, h).map_err(|e| Error::parse(line.clone(), e.to_string()))?;
        let mut item = ScoredBox::new(bbox, score)?;
        if has_level && !record[6].is_empty() {
            let level: LevelName = record[6]
                .parse()
                .map_err(|e: Error| Error::parse(line.clone(), format!("field `level`: {e}")))?;
            item = item.at_level(level);
        }
        out.entry(id.to_string())
            .or_insert_with(|| ProposalSet {
                image_id: id.to_string(),
                items: Vec::new(),
            })
            .items
            .push(item);
    }
    Ok(out)
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv output is UTF-8")
}

fn f6(v: f64) -> String {
    format!("{v:.6}")
}

/// Proposal CSV for the given sets, in map order. A `level` column is
/// written when any box carries a level.
pub fn write_proposals(sets: &BTreeMap<String, Vec<ScoredBox>>) -> String {
    let with_level = sets.values().flatten().any(|b| b.level.is_some());
    let mut w = csv_writer();
    let mut header = vec!["image_id", "score", "x", "y", "w", "h"];
    if with_level {
        header.push("level");
    }
    w.write_record(&header).expect("in-memory write");
    for (id, items) in sets {
        for b in items {
            let mut row = vec![
                id.clone(),
                f6(b.score),
                f6(b.bbox.x()),
                f6(b.bbox.y()),
                f6(b.bbox.w()),
                f6(b.bbox.h()),
            ];
            if with_level {
                row.push(b.level.map(|l| l.as_str().to_string()).unwrap_or_default());
            }
            w.write_record(&row).expect("in-memory write");
        }
    }
    finish(w)
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

fn json_box(b: &[f64; 4]) -> String {
    format!("[{}, {}, {}, {}]", f6(b[0]), f6(b[1]), f6(b[2]), f6(b[3]))
}

/// Coverage report as JSON with sorted keys and six-decimal numbers.
pub fn write_report_json(report: &CoverageReport) -> String {
    let mut s = String::new();
    s.push_str("{\n");
    let _ = writeln!(s, "  \"mabo\": {},", f6(report.mabo));
    let _ = writeln!(s, "  \"n_gt\": {},", report.n_gt);
    s.push_str("  \"per_class\": {");
    for (k, (class, st)) in report.per_class.iter().enumerate() {
        s.push_str(if k == 0 { "\n" } else { ",\n" });
        let _ = write!(
            s,
            "    {}: {{\"abo\": {}, \"n_gt\": {}, \"recall\": {}}}",
            json_str(class),
            f6(st.abo),
            st.n_gt,
            f6(st.recall)
        );
    }
    s.push_str(if report.per_class.is_empty() { "},\n" } else { "\n  },\n" });
    s.push_str("  \"per_gt\": [");
    for (k, m) in report.per_gt.iter().enumerate() {
        s.push_str(if k == 0 { "\n" } else { ",\n" });
        let best_box = m.best_box.as_ref().map(json_box).unwrap_or_else(|| "null".to_string());
        let _ = write!(
            s,
            "    {{\"best_box\": {}, \"best_iou\": {}, \"class\": {}, \"gt\": {}, \"image_id\": {}}}",
            best_box,
            f6(m.best_iou),
            json_str(&m.class_name),
            json_box(&m.gt),
            json_str(&m.image_id)
        );
    }
    s.push_str(if report.per_gt.is_empty() { "],\n" } else { "\n  ],\n" });
    let _ = writeln!(s, "  \"recall\": {},", f6(report.recall));
    let _ = writeln!(s, "  \"threshold\": {}", f6(report.threshold));
    s.push_str("}\n");
    s
}

pub fn parse_report_json(bytes: &[u8]) -> Result<CoverageReport> {
    serde_json::from_slice(bytes).map_err(json_error)
}

/// Per-class table followed by one summary row whose `abo` column holds the
/// MABO.
pub fn write_report_csv(report: &CoverageReport) -> String {
    let mut w = csv_writer();
    w.write_record(["kind", "class", "n_gt", "abo", "recall"]).expect("in-memory write");
    for (class, st) in &report.per_class {
        w.write_record(["class", class, &st.n_gt.to_string(), &f6(st.abo), &f6(st.recall)])
            .expect("in-memory write");
    }
    w.write_record(["summary", "", &report.n_gt.to_string(), &f6(report.mabo), &f6(report.recall)])
        .expect("in-memory write");
    finish(w)
}

pub fn write_curves_csv(curves: &[SweepCurve]) -> String {
    let mut w = csv_writer();
    w.write_record(["anchor_scale", "object_size", "mabo"]).expect("in-memory write");
    for c in curves {
        for p in &c.points {
            w.write_record([f6(c.anchor_scale), f6(p.object_size), f6(p.mabo)])
                .expect("in-memory write");
        }
    }
    finish(w)
}

/// Read curves written by [`write_curves_csv`]. Consecutive rows with the
/// same anchor scale form one curve.
pub fn parse_curves_csv(bytes: &[u8]) -> Result<Vec<SweepCurve>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(csv_location(e.position()), e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["anchor_scale", "object_size", "mabo"] {
        return Err(Error::parse("line 1", "header must be `anchor_scale,object_size,mabo`"));
    }
    let mut curves: Vec<SweepCurve> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(csv_location(e.position()), e.to_string()))?;
        let line = csv_location(record.position());
        let mut vals = [0.0; 3];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = record
                .get(k)
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| Error::parse(line.clone(), format!("column {} is not a number", k + 1)))?;
        }
        let point = SweepPoint {
            object_size: vals[1],
            mabo: vals[2],
        };
        match curves.last_mut() {
            Some(c) if c.anchor_scale == vals[0] => c.points.push(point),
            _ => curves.push(SweepCurve {
                anchor_scale: vals[0],
                points: vec![point],
            }),
        }
    }
    Ok(curves)
}

fn xml_child<'a, 'i>(node: roxmltree::Node<'a, 'i>, name: &str) -> Option<roxmltree::Node<'a, 'i>> {
    node.children().find(|c| c.has_tag_name(name))
}

/// Convert one VOC-style XML annotation into an image record.
///
/// VOC pixel indices are 1-based and inclusive, so `xmin..=xmax` becomes
/// `x = xmin - 1`, `w = xmax - xmin + 1`. `fallback_id` is used when the file
/// has no `<filename>`.
pub fn parse_voc_xml(text: &str, fallback_id: &str) -> Result<ImageAnnotation> {
    let doc = roxmltree::Document::parse(text).map_err(|e| {
        let pos = e.pos();
        Error::parse(format!("line {}, column {}", pos.row, pos.col), format!("XML syntax error: {e}"))
    })?;
    let root = doc.root_element();
    let text_of = |node: roxmltree::Node<'_, '_>, path: &[&str]| -> Option<String> {
        let mut cur = node;
        for p in path {
            cur = xml_child(cur, p)?;
        }
        cur.text().map(|t| t.trim().to_string())
    };
    let loc = |node: roxmltree::Node<'_, '_>| {
        let pos = doc.text_pos_at(node.range().start);
        format!("line {}", pos.row)
    };
    let number = |node: roxmltree::Node<'_, '_>, path: &[&str]| -> Result<f64> {
        let field = path.join("/");
        let raw = text_of(node, path).ok_or_else(|| Error::parse(loc(node), format!("missing <{field}>")))?;
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::parse(loc(node), format!("<{field}> `{raw}` is not a finite number")))
    };
    let id = text_of(root, &["filename"])
        .map(|f| match f.rsplit_once('.') {
            Some((stem, _)) if !stem.is_empty() => stem.to_string(),
            _ => f,
        })
        .filter(|f| !f.is_empty())
        .unwrap_or_else(|| fallback_id.to_string());
    let width = number(root, &["size", "width"])?;
    let height = number(root, &["size", "height"])?;
    let mut objects = Vec::new();
    for obj in root.children().filter(|c| c.has_tag_name("object")) {
        let class = text_of(obj, &["name"])
            .filter(|n| !n.is_empty())
            .ok_or_else(|| Error::parse(loc(obj), "object without <name>"))?;
        let xmin = number(obj, &["bndbox", "xmin"])?;
        let ymin = number(obj, &["bndbox", "ymin"])?;
        let xmax = number(obj, &["bndbox", "xmax"])?;
        let ymax = number(obj, &["bndbox", "ymax"])?;
        let bbox = BBox::new(xmin - 1.0, ymin - 1.0, xmax - xmin + 1.0, ymax - ymin + 1.0)
            .map_err(|e| Error::parse(loc(obj), e.to_string()))?;
        objects.push(GroundtruthObject::new(class, bbox)?);
    }
    ImageAnnotation::new(id, width, height, objects)
}
