//! JSON Lines dataset files, one sketch per line:
//!
//! ```text
//! {"primitives":[{"kind":"line","params":[0.1,0.2,0.8,0.2],"construction":false}]}
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Primitive, PrimitiveKind, Sketch, SketchError};
use crate::io::write_atomic;

#[derive(Serialize, Deserialize)]
struct PrimitiveRecord {
    kind: String,
    params: Vec<f64>,
    construction: bool,
}

#[derive(Serialize, Deserialize)]
struct SketchRecord {
    primitives: Vec<PrimitiveRecord>,
}

/// Encodes one sketch as a single JSON line (without the trailing newline).
pub fn sketch_to_json(sketch: &Sketch) -> String {
    let record = SketchRecord {
        primitives: sketch
            .iter()
            .map(|p| PrimitiveRecord {
                kind: p.kind().name().to_string(),
                params: p.params(),
                construction: p.is_construction,
            })
            .collect(),
    };
    serde_json::to_string(&record).expect("plain records serialize")
}

/// Decodes one JSON line; `line` is the 1-based line number used in errors.
pub fn sketch_from_json(text: &str, line: usize) -> Result<Sketch, SketchError> {
    let malformed = |reason: String| SketchError::MalformedLine { line, reason };
    let record: SketchRecord = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    let mut prims = Vec::with_capacity(record.primitives.len());
    for p in record.primitives {
        let kind = PrimitiveKind::from_name(&p.kind)
            .ok_or_else(|| SketchError::UnknownKind { line, kind: p.kind.clone() })?;
        let prim = Primitive::from_params(kind, &p.params, p.construction).ok_or_else(|| {
            malformed(format!("{} expects {} params, got {}", p.kind, kind.param_count(), p.params.len()))
        })?;
        prims.push(prim);
    }
    Sketch::new(prims).map_err(|e| malformed(e.to_string()))
}

pub fn write_dataset<W: Write>(sketches: &[Sketch], mut out: W) -> Result<(), SketchError> {
    for s in sketches {
        writeln!(out, "{}", sketch_to_json(s))?;
    }
    Ok(())
}

pub fn read_dataset<R: Read>(input: R) -> Result<Vec<Sketch>, SketchError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(sketch_from_json(&line, i + 1)?);
    }
    Ok(out)
}

pub fn serialize_dataset(sketches: &[Sketch], path: &Path) -> Result<(), SketchError> {
    let mut buf = Vec::new();
    write_dataset(sketches, &mut buf)?;
    write_atomic(path, &buf)?;
    Ok(())
}

pub fn parse_dataset(path: &Path) -> Result<Vec<Sketch>, SketchError> {
    read_dataset(std::fs::File::open(path)?)
}
