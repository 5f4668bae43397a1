//! Corpus persistence: binary P6 images plus one JSONL record per document.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::schema::Task;
use crate::synth::raster::Image;
use crate::synth::SynthDoc;

pub const RECORDS_FILE: &str = "corpus.jsonl";

/// Grayscale image as binary P6 with the gray value triplicated per pixel.
pub fn write_ppm(path: &Path, image: &Image) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    write!(out, "P6\n{} {}\n255\n", image.width(), image.height())?;
    let mut row = Vec::with_capacity(image.width() * 3);
    for y in 0..image.height() {
        row.clear();
        for x in 0..image.width() {
            let v = image.get(x, y);
            row.extend_from_slice(&[v, v, v]);
        }
        out.write_all(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format(format!("{}: truncated header", path.display())));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| {
            Error::Format(format!("{}: non-ascii header", path.display()))
        })?);
    }
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(Error::Format(format!(
            "{}: expected binary P6 with maxval 255",
            path.display()
        )));
    }
    let width: usize = fields[1]
        .parse()
        .map_err(|_| Error::Format(format!("{}: bad width", path.display())))?;
    let height: usize = fields[2]
        .parse()
        .map_err(|_| Error::Format(format!("{}: bad height", path.display())))?;
    pos += 1; // single whitespace byte after maxval
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(Error::Format(format!(
            "{}: expected {} pixel bytes, found {}",
            path.display(),
            need,
            bytes.len().saturating_sub(pos)
        )));
    }
    let mut img = Image::blank(width, height);
    for y in 0..height {
        for x in 0..width {
            img.set(x, y, bytes[pos + (y * width + x) * 3]);
        }
    }
    Ok(img)
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct WordRecord {
    pub text: String,
    pub quad: Option<[f64; 8]>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LayoutRecord {
    pub category: String,
    pub bbox: [f64; 4],
}

/// One corpus line. Absent annotations are explicit nulls so every record
/// has the same shape; `parse` holds a tree object, or an array of tree
/// objects for multi-document records.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub task: Task,
    pub words: Option<Vec<WordRecord>>,
    pub parse: Option<Value>,
    pub layout: Option<Vec<LayoutRecord>>,
    pub label: Option<String>,
}

impl CorpusRecord {
    /// `weak` drops word coordinates from parse and multi records, leaving
    /// the transcription-only supervision those tasks train from.
    pub fn from_doc(id: &str, doc: &SynthDoc, weak: bool) -> Result<Self> {
        let strip = weak && matches!(doc.task, Task::Parse | Task::Multi);
        let words = doc
            .words
            .iter()
            .map(|(text, quad)| WordRecord {
                text: text.clone(),
                quad: if strip { None } else { Some(quad.points) },
            })
            .collect();
        let parse = match doc.task {
            Task::Multi => {
                let trees = doc.parses.as_ref().ok_or_else(|| {
                    Error::Invariant("multi document without parse list".to_string())
                })?;
                Some(Value::Array(
                    trees.iter().map(|t| t.to_json()).collect::<Vec<_>>(),
                ))
            }
            _ => doc.parse.as_ref().map(|t| t.to_json()),
        };
        let layout = doc.layout.as_ref().map(|elements| {
            elements
                .iter()
                .map(|(category, bbox)| LayoutRecord {
                    category: category.clone(),
                    bbox: bbox.components(),
                })
                .collect()
        });
        Ok(CorpusRecord {
            id: id.to_string(),
            image: format!("{id}.ppm"),
            width: doc.image.width(),
            height: doc.image.height(),
            task: doc.task,
            words: Some(words),
            parse,
            layout,
            label: doc.label.clone(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct LoadedDoc {
    pub record: CorpusRecord,
    pub image: Image,
}

pub fn records_path(dir: &Path) -> PathBuf {
    dir.join(RECORDS_FILE)
}

/// Writes `<id>.ppm` per document plus a `corpus.jsonl` manifest; ids are
/// `<task>-<index>` over the given order.
pub fn write_corpus(dir: &Path, docs: &[SynthDoc], weak: bool) -> Result<Vec<CorpusRecord>> {
    fs::create_dir_all(dir)?;
    let file = fs::File::create(records_path(dir))?;
    let mut out = BufWriter::new(file);
    let mut records = Vec::with_capacity(docs.len());
    for (idx, doc) in docs.iter().enumerate() {
        let id = format!("{}-{idx:05}", doc.task);
        let record = CorpusRecord::from_doc(&id, doc, weak)?;
        write_ppm(&dir.join(&record.image), &doc.image)?;
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
        records.push(record);
    }
    out.flush()?;
    Ok(records)
}

pub fn load_records(dir: &Path) -> Result<Vec<CorpusRecord>> {
    let text = fs::read_to_string(records_path(dir))?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord = serde_json::from_str(line).map_err(|e| {
            Error::Format(format!(
                "{} line {}: {e}",
                records_path(dir).display(),
                lineno + 1
            ))
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn load_corpus(dir: &Path) -> Result<Vec<LoadedDoc>> {
    let records = load_records(dir)?;
    let mut docs = Vec::with_capacity(records.len());
    for record in records {
        let image = read_ppm(&dir.join(&record.image))?;
        if image.width() != record.width || image.height() != record.height {
            return Err(Error::Format(format!(
                "{}: image is {}x{} but record says {}x{}",
                record.id,
                image.width(),
                image.height(),
                record.width,
                record.height
            )));
        }
        docs.push(LoadedDoc { record, image });
    }
    Ok(docs)
}
