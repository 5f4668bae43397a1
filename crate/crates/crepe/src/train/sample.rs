//! Converting corpus records into teacher-forcing samples.
//!
//! A sample carries the full token row `[<s>, task, body..., </s>]`, the
//! positions of trigger tokens inside that row, and, when the record has
//! coordinates, one target quad per trigger in emission order. Coordinate
//! targets attach to triggers by construction here, so the loss code never
//! has to re-derive the alignment.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::geom::{BBox, Quad};
use crate::schema::grammar;
use crate::schema::tree::{ParseNode, ParseTree};
use crate::schema::{Schema, Task, TokenSequence, TriggerSet, Vocabulary, BOS, EOS};
use crate::synth::corpus::{CorpusRecord, LoadedDoc, WordRecord};
use crate::synth::SynthDoc;

/// One teacher-forcing unit: image, target row, and trigger supervision.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub id: String,
    pub task: Task,
    /// Normalized pixels, row-major, length image_size^2.
    pub image: Vec<f32>,
    /// Full target row `[<s>, task, body..., </s>]`.
    pub target_seq: TokenSequence,
    /// Indices into `target_seq` whose token is in the task's trigger set.
    pub trigger_positions: Vec<usize>,
    /// One quad per trigger position, present only when `has_coords`.
    pub coord_targets: Option<Vec<Quad>>,
    pub has_coords: bool,
}

impl TrainingSample {
    /// Builds a sample from a corpus record plus its decoded image pixels.
    pub fn build(
        record: &CorpusRecord,
        pixels: Vec<f32>,
        vocab: &Vocabulary,
        schema: &Schema,
    ) -> Result<TrainingSample> {
        let (body, coords) = serialize_record(record, vocab)?;
        let mut ids = Vec::with_capacity(body.len() + 3);
        ids.push(BOS);
        ids.push(record.task.token_id());
        ids.extend_from_slice(&body.0);
        ids.push(EOS);
        let target_seq = TokenSequence(ids);

        let trigger_ids: BTreeSet<u32> =
            TriggerSet::for_task(schema, vocab, record.task)?.ids().collect();
        let trigger_positions: Vec<usize> = target_seq
            .0
            .iter()
            .enumerate()
            .filter(|(_, id)| trigger_ids.contains(id))
            .map(|(i, _)| i)
            .collect();

        let has_coords = coords.is_some();
        if let Some(targets) = &coords {
            if targets.len() != trigger_positions.len() {
                return Err(Error::Invariant(format!(
                    "sample {}: {} coordinate targets for {} trigger positions",
                    record.id,
                    targets.len(),
                    trigger_positions.len()
                )));
            }
        }
        Ok(TrainingSample {
            id: record.id.clone(),
            task: record.task,
            image: pixels,
            target_seq,
            trigger_positions,
            coord_targets: coords,
            has_coords,
        })
    }

    pub fn from_loaded(doc: &LoadedDoc, vocab: &Vocabulary, schema: &Schema) -> Result<Self> {
        TrainingSample::build(&doc.record, doc.image.to_f01(), vocab, schema)
    }

    /// Builds directly from a synthetic document; `weak` strips coordinates
    /// the same way weak corpus export does.
    pub fn from_doc(
        doc: &SynthDoc,
        id: &str,
        weak: bool,
        vocab: &Vocabulary,
        schema: &Schema,
    ) -> Result<Self> {
        let record = CorpusRecord::from_doc(id, doc, weak)?;
        TrainingSample::build(&record, doc.image.to_f01(), vocab, schema)
    }

    /// Per-position flag: target token is a trigger token.
    pub fn trigger_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.target_seq.len()];
        for &p in &self.trigger_positions {
            mask[p] = true;
        }
        mask
    }

    /// Axis-aligned envelopes of the coordinate targets, the bbox-branch
    /// ground truth.
    pub fn bbox_targets(&self) -> Option<Vec<BBox>> {
        self.coord_targets
            .as_ref()
            .map(|qs| qs.iter().map(Quad::envelope).collect())
    }
}

fn words_of(record: &CorpusRecord) -> Result<&[WordRecord]> {
    record
        .words
        .as_deref()
        .ok_or_else(|| Error::Format(format!("record {} has no word list", record.id)))
}

fn all_quads(words: &[WordRecord]) -> Option<Vec<Quad>> {
    words
        .iter()
        .map(|w| w.quad.and_then(|pts| Quad::new(pts).ok()))
        .collect()
}

/// Serializes a record's annotation into the body token sequence plus, when
/// the record carries usable coordinates, per-trigger target quads in the
/// exact order triggers appear in the body.
fn serialize_record(
    record: &CorpusRecord,
    vocab: &Vocabulary,
) -> Result<(TokenSequence, Option<Vec<Quad>>)> {
    match record.task {
        Task::Ocr => {
            let words = words_of(record)?;
            let mut ids = Vec::new();
            for w in words {
                ids.push(crate::schema::OCR_OPEN);
                ids.extend(vocab.encode_text(&w.text)?);
                ids.push(crate::schema::OCR_CLOSE);
            }
            Ok((TokenSequence(ids), all_quads(words)))
        }
        Task::Parse => {
            let value = record
                .parse
                .as_ref()
                .ok_or_else(|| Error::Format(format!("record {} has no parse", record.id)))?;
            let tree = ParseTree::from_json(value)?;
            let body = grammar::serialize_tree(&tree, vocab)?;
            let words = words_of(record)?;
            let coords = if all_quads(words).is_some() {
                Some(match_segments(&leaf_segments(&tree), words, &record.id)?)
            } else {
                None
            };
            Ok((body, coords))
        }
        Task::Multi => {
            let value = record
                .parse
                .as_ref()
                .ok_or_else(|| Error::Format(format!("record {} has no parse list", record.id)))?;
            let trees: Vec<ParseTree> = value
                .as_array()
                .ok_or_else(|| {
                    Error::Format(format!("record {}: multi parse is not an array", record.id))
                })?
                .iter()
                .map(ParseTree::from_json)
                .collect::<Result<_>>()?;
            let parts: Vec<TokenSequence> = trees
                .iter()
                .map(|t| grammar::serialize_tree(t, vocab))
                .collect::<Result<_>>()?;
            let body = grammar::wrap_instances(&parts);
            let words = words_of(record)?;
            let coords = if all_quads(words).is_some() {
                let segments: Vec<String> =
                    trees.iter().flat_map(|t| leaf_segments(t)).collect();
                Some(match_segments(&segments, words, &record.id)?)
            } else {
                None
            };
            Ok((body, coords))
        }
        Task::Layout => {
            let elements = layout_elements(record)?;
            let body = grammar::serialize_layout(&elements, vocab)?;
            let coords = elements.iter().map(|(_, b)| Quad::from_bbox(b)).collect();
            Ok((body, Some(coords)))
        }
        Task::Scene => {
            let objects = layout_elements(record)?;
            let words = words_of(record)?;
            let word_quads = all_quads(words).ok_or_else(|| {
                Error::Format(format!("record {}: scene words lack quads", record.id))
            })?;
            let pairs: Vec<(String, Quad)> = words
                .iter()
                .zip(&word_quads)
                .map(|(w, q)| (w.text.clone(), *q))
                .collect();
            let body = grammar::serialize_scene(&objects, &pairs, vocab)?;
            let mut coords: Vec<Quad> =
                objects.iter().map(|(_, b)| Quad::from_bbox(b)).collect();
            coords.extend(word_quads);
            Ok((body, Some(coords)))
        }
        Task::Class => {
            let label = record
                .label
                .as_ref()
                .ok_or_else(|| Error::Format(format!("record {} has no label", record.id)))?;
            Ok((grammar::serialize_class(label, vocab)?, None))
        }
    }
}

fn layout_elements(record: &CorpusRecord) -> Result<Vec<(String, BBox)>> {
    record
        .layout
        .as_ref()
        .ok_or_else(|| Error::Format(format!("record {} has no layout", record.id)))?
        .iter()
        .map(|e| {
            let [x0, y0, x1, y1] = e.bbox;
            Ok((e.category.clone(), BBox::new(x0, y0, x1, y1)?))
        })
        .collect()
}

/// Leaf segment strings in depth-first emission order, one per ocr span.
pub fn leaf_segments(tree: &ParseTree) -> Vec<String> {
    fn walk(node: &ParseNode, out: &mut Vec<String>) {
        match node {
            ParseNode::Branch { children, .. } => {
                for c in children {
                    walk(c, out);
                }
            }
            ParseNode::Leaf { segments } => out.extend(segments.iter().cloned()),
        }
    }
    let mut out = Vec::new();
    for root in &tree.roots {
        walk(root, &mut out);
    }
    out
}

/// Matches each segment to the first unused word with identical text, in
/// emission order against reading order. Tree segments reference a subset
/// of the page's words (distractor words stay unmatched), and duplicated
/// texts resolve correctly because both orders walk the page top-down.
fn match_segments(
    segments: &[String],
    words: &[WordRecord],
    record_id: &str,
) -> Result<Vec<Quad>> {
    let mut used = vec![false; words.len()];
    segments
        .iter()
        .map(|seg| {
            let idx = words
                .iter()
                .enumerate()
                .position(|(i, w)| !used[i] && w.text == *seg)
                .ok_or_else(|| {
                    Error::Invariant(format!(
                        "record {record_id}: no unused word matches segment '{seg}'"
                    ))
                })?;
            used[idx] = true;
            let pts = words[idx].quad.ok_or_else(|| {
                Error::Invariant(format!("record {record_id}: matched word lacks a quad"))
            })?;
            Quad::new(pts)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{OCR_CLOSE, S_OCR, S_PARSE};
    use crate::synth::{gen_class_doc, gen_ocr_doc, gen_parse_doc, GenConfig};

    fn setup() -> (Schema, Vocabulary) {
        let schema = Schema::default();
        let vocab = Vocabulary::build(&schema).unwrap();
        (schema, vocab)
    }

    #[test]
    fn ocr_sample_aligns_quads_with_triggers() {
        let (schema, vocab) = setup();
        let doc = gen_ocr_doc(11, &GenConfig::default()).unwrap();
        let s = TrainingSample::from_doc(&doc, "ocr-0", false, &vocab, &schema).unwrap();
        assert_eq!(s.target_seq.0[0], BOS);
        assert_eq!(s.target_seq.0[1], S_OCR);
        assert_eq!(*s.target_seq.0.last().unwrap(), EOS);
        assert!(s.has_coords);
        let targets = s.coord_targets.as_ref().unwrap();
        assert_eq!(targets.len(), s.trigger_positions.len());
        assert_eq!(targets.len(), doc.words.len());
        for (i, (&p, (_, quad))) in s.trigger_positions.iter().zip(&doc.words).enumerate() {
            assert_eq!(s.target_seq.0[p], OCR_CLOSE);
            assert_eq!(quad.points, targets[i].points);
        }
    }

    #[test]
    fn weak_parse_sample_has_no_coords() {
        let (schema, vocab) = setup();
        let doc = gen_parse_doc(21, &GenConfig::default(), &schema).unwrap();
        let s = TrainingSample::from_doc(&doc, "p-0", true, &vocab, &schema).unwrap();
        assert_eq!(s.target_seq.0[1], S_PARSE);
        assert!(!s.has_coords);
        assert!(s.coord_targets.is_none());
        assert!(!s.trigger_positions.is_empty());
        let mask = s.trigger_mask();
        for (i, flag) in mask.iter().enumerate() {
            assert_eq!(*flag, s.trigger_positions.contains(&i));
        }
    }

    #[test]
    fn supervised_parse_sample_matches_leaf_words() {
        let (schema, vocab) = setup();
        for seed in [21u64, 22, 23] {
            let doc = gen_parse_doc(seed, &GenConfig::default(), &schema).unwrap();
            let s = TrainingSample::from_doc(&doc, "p-1", false, &vocab, &schema).unwrap();
            assert!(s.has_coords);
            let targets = s.coord_targets.as_ref().unwrap();
            assert_eq!(targets.len(), s.trigger_positions.len());
            let tree = doc.parse.as_ref().unwrap();
            let segments = leaf_segments(tree);
            assert_eq!(targets.len(), segments.len());
            // Every target quad is one of the page's word quads for the
            // matching text.
            for (seg, quad) in segments.iter().zip(targets) {
                assert!(
                    doc.words
                        .iter()
                        .any(|(t, q)| t == seg && q.points == quad.points),
                    "segment '{seg}' mapped to a foreign quad"
                );
            }
        }
    }

    #[test]
    fn class_sample_is_trigger_free() {
        let (schema, vocab) = setup();
        let doc = gen_class_doc(31, &GenConfig::default()).unwrap();
        let s = TrainingSample::from_doc(&doc, "c-0", false, &vocab, &schema).unwrap();
        assert!(s.trigger_positions.is_empty());
        assert!(!s.has_coords);
        assert_eq!(s.target_seq.len(), 4);
    }

    #[test]
    fn bbox_targets_are_envelopes() {
        let (schema, vocab) = setup();
        let doc = gen_ocr_doc(41, &GenConfig::default()).unwrap();
        let s = TrainingSample::from_doc(&doc, "ocr-1", false, &vocab, &schema).unwrap();
        let quads = s.coord_targets.as_ref().unwrap();
        let boxes = s.bbox_targets().unwrap();
        for (q, b) in quads.iter().zip(&boxes) {
            assert_eq!(q.envelope().components(), b.components());
        }
    }
}
