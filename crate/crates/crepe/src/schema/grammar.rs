//! Bidirectional conversion between annotations and token sequences.
//!
//! Serializers are strict: unknown names and charset violations are errors.
//! Deserializers are total: any id sequence yields a best-effort result, and
//! malformation is reported through a diagnostics list. Recovery rule: an
//! unmatched close tag is dropped, an unmatched open tag is implicitly
//! closed at the end of its enclosing scope.

use std::cmp::Ordering;

use crate::error::Result;
use crate::geom::{BBox, Quad};
use crate::schema::tree::{ParseNode, ParseTree};
use crate::schema::{
    TokenSequence, Vocabulary, EOS, INSTANCE_CLOSE, INSTANCE_OPEN, LAYOUT_CLOSE, LAYOUT_OPEN,
    OBJ_CLOSE, OBJ_OPEN, OCR_CLOSE, OCR_OPEN, PAD,
};

/// One decoded text span; `close_pos` is the sequence index of the `</ocr>`
/// that ended it, absent when the span was auto-closed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodedSegment {
    pub text: String,
    pub close_pos: Option<usize>,
}

/// One decoded layout or object element, analogous to [`DecodedSegment`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodedElement {
    pub category: String,
    pub close_pos: Option<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct DecodedParse {
    pub tree: ParseTree,
    pub trigger_positions: Vec<usize>,
    pub segments: Vec<DecodedSegment>,
    pub diagnostics: Vec<String>,
}

#[derive(Clone, Debug, Default)]
pub struct DecodedLayout {
    pub elements: Vec<DecodedElement>,
    pub trigger_positions: Vec<usize>,
    pub diagnostics: Vec<String>,
}

#[derive(Clone, Debug, Default)]
pub struct DecodedScene {
    pub objects: Vec<DecodedElement>,
    pub words: Vec<DecodedSegment>,
    pub trigger_positions: Vec<usize>,
    pub diagnostics: Vec<String>,
}

#[derive(Clone, Debug, Default)]
pub struct DecodedClass {
    pub label: Option<String>,
    pub diagnostics: Vec<String>,
}

#[derive(Clone, Debug, Default)]
pub struct DecodedMulti {
    pub docs: Vec<DecodedParse>,
    pub trigger_positions: Vec<usize>,
    pub diagnostics: Vec<String>,
}

/// Depth-first emission: each branch as `<field:NAME>`..`</field:NAME>`,
/// each leaf segment as one `<ocr>`..`</ocr>` span.
pub fn serialize_tree(tree: &ParseTree, vocab: &Vocabulary) -> Result<TokenSequence> {
    let mut ids = Vec::new();
    for node in &tree.roots {
        emit_node(node, vocab, &mut ids)?;
    }
    Ok(TokenSequence(ids))
}

fn emit_node(node: &ParseNode, vocab: &Vocabulary, out: &mut Vec<u32>) -> Result<()> {
    match node {
        ParseNode::Branch { name, children } => {
            let (open, close) = vocab.field_pair(name)?;
            out.push(open);
            for child in children {
                emit_node(child, vocab, out)?;
            }
            out.push(close);
        }
        ParseNode::Leaf { segments } => {
            for segment in segments {
                out.push(OCR_OPEN);
                out.extend(vocab.encode_text(segment)?);
                out.push(OCR_CLOSE);
            }
        }
    }
    Ok(())
}

struct Frame {
    name: String,
    children: Vec<ParseNode>,
    segments: Vec<String>,
}

impl Frame {
    fn new(name: String) -> Frame {
        Frame {
            name,
            children: Vec::new(),
            segments: Vec::new(),
        }
    }

    fn flush_segments(&mut self) {
        if !self.segments.is_empty() {
            self.children.push(ParseNode::Leaf {
                segments: std::mem::take(&mut self.segments),
            });
        }
    }
}

pub fn deserialize_sequence(seq: &TokenSequence, vocab: &Vocabulary) -> DecodedParse {
    let mut out = DecodedParse::default();
    let mut stack = vec![Frame::new(String::new())];
    let mut span: Option<String> = None;

    let close_span =
        |span: &mut Option<String>,
         stack: &mut Vec<Frame>,
         out: &mut DecodedParse,
         close_pos: Option<usize>| {
            if let Some(text) = span.take() {
                if text.is_empty() {
                    out.diagnostics.push(match close_pos {
                        Some(p) => format!("empty ocr span at {p}"),
                        None => "empty unclosed ocr span".to_string(),
                    });
                } else {
                    if close_pos.is_none() {
                        out.diagnostics
                            .push(format!("unclosed ocr span '{text}' auto-closed"));
                    }
                    stack.last_mut().expect("root frame").segments.push(text.clone());
                    out.segments.push(DecodedSegment { text, close_pos });
                }
            }
        };

    for (pos, id) in seq.iter().enumerate() {
        if id == EOS {
            break;
        }
        if id == PAD || id == super::BOS || super::is_task_token(id) {
            continue;
        }
        if id == OCR_OPEN {
            if span.is_some() {
                close_span(&mut span, &mut stack, &mut out, None);
            }
            span = Some(String::new());
        } else if id == OCR_CLOSE {
            out.trigger_positions.push(pos);
            if span.is_some() {
                close_span(&mut span, &mut stack, &mut out, Some(pos));
            } else {
                out.diagnostics.push(format!("stray </ocr> at {pos}"));
            }
        } else if let Some(c) = vocab.decode_char(id) {
            match &mut span {
                Some(text) => text.push(c),
                None => out
                    .diagnostics
                    .push(format!("glyph {c:?} outside span at {pos}")),
            }
        } else if let Some(name) = vocab.as_field_open(id) {
            close_span(&mut span, &mut stack, &mut out, None);
            stack.last_mut().expect("root frame").flush_segments();
            stack.push(Frame::new(name.to_string()));
        } else if let Some(name) = vocab.as_field_close(id) {
            close_span(&mut span, &mut stack, &mut out, None);
            if stack.len() > 1 && stack.last().expect("frame").name == name {
                let mut frame = stack.pop().expect("frame");
                frame.flush_segments();
                stack.last_mut().expect("parent").children.push(ParseNode::Branch {
                    name: frame.name,
                    children: frame.children,
                });
            } else {
                out.diagnostics
                    .push(format!("unmatched </field:{name}> at {pos} dropped"));
            }
        } else {
            let tok = vocab.token_of(id).unwrap_or("<invalid>");
            out.diagnostics
                .push(format!("unexpected token '{tok}' at {pos} dropped"));
        }
    }
    close_span(&mut span, &mut stack, &mut out, None);
    while stack.len() > 1 {
        let mut frame = stack.pop().expect("frame");
        frame.flush_segments();
        out.diagnostics
            .push(format!("unclosed <field:{}> auto-closed", frame.name));
        stack.last_mut().expect("parent").children.push(ParseNode::Branch {
            name: frame.name,
            children: frame.children,
        });
    }
    let mut root = stack.pop().expect("root frame");
    root.flush_segments();
    out.tree = ParseTree::new(root.children);
    out
}

/// Top-to-bottom, left-to-right by element top-left corner.
pub fn reading_order(a: &BBox, b: &BBox) -> Ordering {
    a.y_min
        .total_cmp(&b.y_min)
        .then(a.x_min.total_cmp(&b.x_min))
}

/// Emits `<layout><cat:NAME></layout>` per element in reading order.
pub fn serialize_layout(elements: &[(String, BBox)], vocab: &Vocabulary) -> Result<TokenSequence> {
    let mut order: Vec<usize> = (0..elements.len()).collect();
    order.sort_by(|&a, &b| reading_order(&elements[a].1, &elements[b].1));
    let mut ids = Vec::new();
    for idx in order {
        let cat = vocab.cat_id(&elements[idx].0)?;
        ids.extend([LAYOUT_OPEN, cat, LAYOUT_CLOSE]);
    }
    Ok(TokenSequence(ids))
}

pub fn deserialize_layout(seq: &TokenSequence, vocab: &Vocabulary) -> DecodedLayout {
    let mut out = DecodedLayout::default();
    decode_elements(
        seq,
        vocab,
        LAYOUT_OPEN,
        LAYOUT_CLOSE,
        "layout",
        &mut out.elements,
        &mut out.trigger_positions,
        &mut out.diagnostics,
        |_, _| false,
    );
    out
}

/// Shared element parser for `<layout>`/`<obj>` style grammars. `foreign`
/// lets the caller claim tokens that belong to a sibling grammar so they are
/// not reported here.
#[allow(clippy::too_many_arguments)]
fn decode_elements(
    seq: &TokenSequence,
    vocab: &Vocabulary,
    open: u32,
    close: u32,
    kind: &str,
    elements: &mut Vec<DecodedElement>,
    triggers: &mut Vec<usize>,
    diagnostics: &mut Vec<String>,
    mut foreign: impl FnMut(u32, usize) -> bool,
) {
    let mut current: Option<Option<String>> = None;

    let finish = |current: &mut Option<Option<String>>,
                      elements: &mut Vec<DecodedElement>,
                      diagnostics: &mut Vec<String>,
                      close_pos: Option<usize>| {
        if let Some(cat) = current.take() {
            match cat {
                Some(category) => elements.push(DecodedElement {
                    category,
                    close_pos,
                }),
                None => diagnostics.push(match close_pos {
                    Some(p) => format!("{kind} element without category at {p}"),
                    None => format!("unclosed {kind} element without category"),
                }),
            }
            if close_pos.is_none() {
                diagnostics.push(format!("unclosed <{kind}> auto-closed"));
            }
        }
    };

    for (pos, id) in seq.iter().enumerate() {
        if id == EOS {
            break;
        }
        if id == PAD || id == super::BOS || super::is_task_token(id) {
            continue;
        }
        if id == open {
            if current.is_some() {
                finish(&mut current, elements, diagnostics, None);
            }
            current = Some(None);
        } else if id == close {
            triggers.push(pos);
            if current.is_some() {
                finish(&mut current, elements, diagnostics, Some(pos));
            } else {
                let tok = vocab.token_of(id).unwrap_or("<invalid>");
                diagnostics.push(format!("stray {tok} at {pos}"));
            }
        } else if let Some(name) = vocab.as_cat(id) {
            match &mut current {
                Some(slot) if slot.is_none() => *slot = Some(name.to_string()),
                Some(_) => diagnostics.push(format!("extra category at {pos} ignored")),
                None => diagnostics.push(format!("category outside element at {pos}")),
            }
        } else if foreign(id, pos) {
            if current.is_some() {
                finish(&mut current, elements, diagnostics, None);
            }
        } else {
            let tok = vocab.token_of(id).unwrap_or("<invalid>");
            diagnostics.push(format!("unexpected token '{tok}' at {pos} dropped"));
        }
    }
    finish(&mut current, elements, diagnostics, None);
}

/// Objects first, each `<obj><cat:NAME></obj>`, then one ocr span per word.
pub fn serialize_scene(
    objects: &[(String, BBox)],
    words: &[(String, Quad)],
    vocab: &Vocabulary,
) -> Result<TokenSequence> {
    let mut ids = Vec::new();
    for (category, _) in objects {
        let cat = vocab.cat_id(category)?;
        ids.extend([OBJ_OPEN, cat, OBJ_CLOSE]);
    }
    for (text, _) in words {
        ids.push(OCR_OPEN);
        ids.extend(vocab.encode_text(text)?);
        ids.push(OCR_CLOSE);
    }
    Ok(TokenSequence(ids))
}

pub fn deserialize_scene(seq: &TokenSequence, vocab: &Vocabulary) -> DecodedScene {
    let mut out = DecodedScene::default();

    // Object pass; ocr-grammar tokens are claimed as foreign.
    let mut obj_triggers = Vec::new();
    decode_elements(
        seq,
        vocab,
        OBJ_OPEN,
        OBJ_CLOSE,
        "obj",
        &mut out.objects,
        &mut obj_triggers,
        &mut out.diagnostics,
        |id, _| id == OCR_OPEN || id == OCR_CLOSE || vocab.is_char(id),
    );

    // Word pass over the same tokens, treating object tokens as foreign.
    let mut span: Option<String> = None;
    let mut word_triggers = Vec::new();
    for (pos, id) in seq.iter().enumerate() {
        if id == EOS {
            break;
        }
        if id == OCR_OPEN {
            if let Some(text) = span.take() {
                push_word(text, None, &mut out.words, &mut out.diagnostics);
            }
            span = Some(String::new());
        } else if id == OCR_CLOSE {
            word_triggers.push(pos);
            match span.take() {
                Some(text) => push_word(text, Some(pos), &mut out.words, &mut out.diagnostics),
                None => out.diagnostics.push(format!("stray </ocr> at {pos}")),
            }
        } else if let Some(c) = vocab.decode_char(id) {
            if let Some(text) = &mut span {
                text.push(c);
            } else {
                out.diagnostics
                    .push(format!("glyph {c:?} outside span at {pos}"));
            }
        } else if span.is_some() && (id == OBJ_OPEN || id == OBJ_CLOSE || vocab.as_cat(id).is_some())
        {
            let text = span.take().expect("span");
            push_word(text, None, &mut out.words, &mut out.diagnostics);
        }
    }
    if let Some(text) = span.take() {
        push_word(text, None, &mut out.words, &mut out.diagnostics);
    }

    out.trigger_positions = obj_triggers;
    out.trigger_positions.extend(word_triggers);
    out.trigger_positions.sort_unstable();
    out
}

fn push_word(
    text: String,
    close_pos: Option<usize>,
    words: &mut Vec<DecodedSegment>,
    diagnostics: &mut Vec<String>,
) {
    if text.is_empty() {
        diagnostics.push(match close_pos {
            Some(p) => format!("empty ocr span at {p}"),
            None => "empty unclosed ocr span".to_string(),
        });
        return;
    }
    if close_pos.is_none() {
        diagnostics.push(format!("unclosed ocr span '{text}' auto-closed"));
    }
    words.push(DecodedSegment { text, close_pos });
}

/// Single `<cat:NAME>` token.
pub fn serialize_class(label: &str, vocab: &Vocabulary) -> Result<TokenSequence> {
    Ok(TokenSequence(vec![vocab.cat_id(label)?]))
}

pub fn deserialize_class(seq: &TokenSequence, vocab: &Vocabulary) -> DecodedClass {
    let mut out = DecodedClass::default();
    for (pos, id) in seq.iter().enumerate() {
        if id == EOS {
            break;
        }
        if id == PAD || id == super::BOS || super::is_task_token(id) {
            continue;
        }
        match vocab.as_cat(id) {
            Some(name) if out.label.is_none() => out.label = Some(name.to_string()),
            Some(_) => out
                .diagnostics
                .push(format!("extra label at {pos} ignored")),
            None => {
                let tok = vocab.token_of(id).unwrap_or("<invalid>");
                out.diagnostics
                    .push(format!("unexpected token '{tok}' at {pos} dropped"));
            }
        }
    }
    if out.label.is_none() {
        out.diagnostics.push("no label token".to_string());
    }
    out
}

/// Encloses each document serialization in `<instance>`/`</instance>`.
pub fn wrap_instances(seqs: &[TokenSequence]) -> TokenSequence {
    let mut ids = Vec::new();
    for seq in seqs {
        ids.push(INSTANCE_OPEN);
        ids.extend(seq.iter());
        ids.push(INSTANCE_CLOSE);
    }
    TokenSequence(ids)
}

/// Splits a wrapped sequence back into per-document sequences together with
/// each document's offset into the input.
pub fn unwrap_instances(seq: &TokenSequence) -> (Vec<(usize, TokenSequence)>, Vec<String>) {
    let mut docs = Vec::new();
    let mut diagnostics = Vec::new();
    let mut current: Option<(usize, Vec<u32>)> = None;
    for (pos, id) in seq.iter().enumerate() {
        if id == EOS {
            break;
        }
        if id == PAD || id == super::BOS || super::is_task_token(id) {
            continue;
        }
        if id == INSTANCE_OPEN {
            if let Some(doc) = current.take() {
                diagnostics.push(format!("unclosed <instance> auto-closed at {pos}"));
                docs.push((doc.0, TokenSequence(doc.1)));
            }
            current = Some((pos + 1, Vec::new()));
        } else if id == INSTANCE_CLOSE {
            match current.take() {
                Some(doc) => docs.push((doc.0, TokenSequence(doc.1))),
                None => diagnostics.push(format!("stray </instance> at {pos} dropped")),
            }
        } else {
            match &mut current {
                Some((_, ids)) => ids.push(id),
                None => {
                    let tok = vocab_free_token(id);
                    diagnostics.push(format!("token {tok} outside <instance> at {pos} dropped"));
                }
            }
        }
    }
    if let Some(doc) = current.take() {
        diagnostics.push("unclosed final <instance> auto-closed".to_string());
        docs.push((doc.0, TokenSequence(doc.1)));
    }
    (docs, diagnostics)
}

fn vocab_free_token(id: u32) -> String {
    format!("id {id}")
}

/// Multi-document decode: unwrap, then parse each instance. Segment close
/// positions and trigger positions are global indices into the input.
pub fn deserialize_multi(seq: &TokenSequence, vocab: &Vocabulary) -> DecodedMulti {
    let (docs, mut diagnostics) = unwrap_instances(seq);
    let mut out = DecodedMulti::default();
    for (offset, doc_seq) in docs {
        let mut decoded = deserialize_sequence(&doc_seq, vocab);
        // Instance bodies exclude framing tokens, so local index i sits at
        // global index offset + i only when nothing was skipped before it;
        // map via the actual positions instead.
        let local_to_global = global_positions(seq, offset, doc_seq.len());
        for p in &mut decoded.trigger_positions {
            *p = local_to_global[*p];
        }
        for seg in &mut decoded.segments {
            if let Some(p) = seg.close_pos {
                seg.close_pos = Some(local_to_global[p]);
            }
        }
        out.trigger_positions.extend(decoded.trigger_positions.iter().copied());
        out.docs.push(decoded);
    }
    out.diagnostics.append(&mut diagnostics);
    for doc in &out.docs {
        out.diagnostics.extend(doc.diagnostics.iter().cloned());
    }
    out
}

/// Global input indices of the `len` body tokens of an instance starting at
/// `offset`, skipping nothing (bodies are copied verbatim by unwrap).
fn global_positions(seq: &TokenSequence, offset: usize, len: usize) -> Vec<usize> {
    let mut map = Vec::with_capacity(len);
    let mut taken = 0;
    for (pos, id) in seq.iter().enumerate().skip(offset) {
        if taken == len || id == INSTANCE_CLOSE {
            break;
        }
        if id == INSTANCE_OPEN || id == EOS {
            break;
        }
        if id == PAD || id == super::BOS || super::is_task_token(id) {
            continue;
        }
        map.push(pos);
        taken += 1;
    }
    map
}

#[cfg(test)]
mod tests {
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::schema::tree::{random_tree, RandomTreeConfig};
    use crate::schema::Schema;

    fn vocab() -> Vocabulary {
        Vocabulary::build(&Schema::default()).unwrap()
    }

    fn tree_hot_coffee() -> ParseTree {
        ParseTree::new(vec![ParseNode::branch(
            "menu",
            vec![ParseNode::leaf(&["hot", "coffee"])],
        )])
    }

    #[test]
    fn hot_coffee_serializes_exactly() {
        let v = vocab();
        let seq = serialize_tree(&tree_hot_coffee(), &v).unwrap();
        let (open, close) = v.field_pair("menu").unwrap();
        let mut expected = vec![open, OCR_OPEN];
        expected.extend(v.encode_text("hot").unwrap());
        expected.push(OCR_CLOSE);
        expected.push(OCR_OPEN);
        expected.extend(v.encode_text("coffee").unwrap());
        expected.push(OCR_CLOSE);
        expected.push(close);
        assert_eq!(seq.0, expected);

        let decoded = deserialize_sequence(&seq, &v);
        assert_eq!(decoded.tree, tree_hot_coffee());
        assert_eq!(decoded.trigger_positions, vec![5, 13]);
        assert!(decoded.diagnostics.is_empty());
        assert_eq!(decoded.segments.len(), 2);
        assert_eq!(decoded.segments[0].text, "hot");
        assert_eq!(decoded.segments[0].close_pos, Some(5));
        assert_eq!(decoded.segments[1].text, "coffee");
        assert_eq!(decoded.segments[1].close_pos, Some(13));
    }

    #[test]
    fn empty_branch_serializes_to_bare_pair() {
        let v = vocab();
        let tree = ParseTree::new(vec![ParseNode::branch("name", vec![])]);
        let seq = serialize_tree(&tree, &v).unwrap();
        let (open, close) = v.field_pair("name").unwrap();
        assert_eq!(seq.0, vec![open, close]);
        let decoded = deserialize_sequence(&seq, &v);
        assert_eq!(decoded.tree, tree);
        assert!(decoded.trigger_positions.is_empty());
        assert!(decoded.diagnostics.is_empty());
    }

    #[test]
    fn empty_sequence_decodes_to_empty_tree() {
        let v = vocab();
        let decoded = deserialize_sequence(&TokenSequence::new(), &v);
        assert!(decoded.tree.is_empty());
        assert!(decoded.trigger_positions.is_empty());
        assert!(decoded.diagnostics.is_empty());
    }

    #[test]
    fn thousand_random_trees_round_trip() {
        let schema = Schema::default();
        let v = Vocabulary::build(&schema).unwrap();
        let cfg = RandomTreeConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let tree = random_tree(&mut rng, &schema, &cfg);
            let seq = serialize_tree(&tree, &v).unwrap();
            let decoded = deserialize_sequence(&seq, &v);
            assert_eq!(decoded.tree, tree);
            assert!(decoded.diagnostics.is_empty(), "{:?}", decoded.diagnostics);
            let expected_triggers = tree
                .leaf_entries()
                .len();
            assert_eq!(decoded.trigger_positions.len(), expected_triggers);
        }
    }

    #[test]
    fn stray_ocr_close_is_dropped_with_diagnostic() {
        let v = vocab();
        let seq = serialize_tree(&tree_hot_coffee(), &v).unwrap();
        let mut ids = seq.0.clone();
        ids.insert(6, OCR_CLOSE);
        let decoded = deserialize_sequence(&TokenSequence(ids), &v);
        assert_eq!(decoded.tree, tree_hot_coffee());
        assert!(!decoded.diagnostics.is_empty());
        assert_eq!(decoded.trigger_positions.len(), 3);
        assert_eq!(decoded.segments.len(), 2);
    }

    #[test]
    fn unmatched_field_close_is_dropped() {
        let v = vocab();
        let (_, close) = v.field_pair("menu").unwrap();
        let decoded = deserialize_sequence(&TokenSequence(vec![close]), &v);
        assert!(decoded.tree.is_empty());
        assert_eq!(decoded.diagnostics.len(), 1);
    }

    #[test]
    fn unclosed_field_is_auto_closed() {
        let v = vocab();
        let (open, _) = v.field_pair("menu").unwrap();
        let mut ids = vec![open, OCR_OPEN];
        ids.extend(v.encode_text("tea").unwrap());
        ids.push(OCR_CLOSE);
        let decoded = deserialize_sequence(&TokenSequence(ids), &v);
        assert_eq!(
            decoded.tree,
            ParseTree::new(vec![ParseNode::branch(
                "menu",
                vec![ParseNode::leaf(&["tea"])]
            )])
        );
        assert!(!decoded.diagnostics.is_empty());
    }

    #[test]
    fn truncated_span_is_auto_closed_without_trigger() {
        let v = vocab();
        let mut ids = vec![OCR_OPEN];
        ids.extend(v.encode_text("te").unwrap());
        let decoded = deserialize_sequence(&TokenSequence(ids), &v);
        assert!(decoded.trigger_positions.is_empty());
        assert_eq!(decoded.segments.len(), 1);
        assert_eq!(decoded.segments[0].text, "te");
        assert_eq!(decoded.segments[0].close_pos, None);
        assert!(!decoded.diagnostics.is_empty());
    }

    #[test]
    fn decode_stops_at_eos() {
        let v = vocab();
        let mut ids = serialize_tree(&tree_hot_coffee(), &v).unwrap().0;
        ids.push(EOS);
        ids.push(OCR_CLOSE);
        let decoded = deserialize_sequence(&TokenSequence(ids), &v);
        assert_eq!(decoded.tree, tree_hot_coffee());
        assert_eq!(decoded.trigger_positions.len(), 2);
        assert!(decoded.diagnostics.is_empty());
    }

    #[test]
    fn layout_example_serializes_exactly() {
        let v = vocab();
        let b1 = BBox::new(0.1, 0.05, 0.9, 0.15).unwrap();
        let b2 = BBox::new(0.1, 0.2, 0.9, 0.8).unwrap();
        let elements = vec![("title".to_string(), b1), ("text".to_string(), b2)];
        let seq = serialize_layout(&elements, &v).unwrap();
        let title = v.cat_id("title").unwrap();
        let text = v.cat_id("text").unwrap();
        assert_eq!(
            seq.0,
            vec![LAYOUT_OPEN, title, LAYOUT_CLOSE, LAYOUT_OPEN, text, LAYOUT_CLOSE]
        );
        assert_eq!(serialize_layout(&[], &v).unwrap().0, Vec::<u32>::new());

        let decoded = deserialize_layout(&seq, &v);
        assert_eq!(decoded.elements.len(), 2);
        assert_eq!(decoded.elements[0].category, "title");
        assert_eq!(decoded.elements[1].category, "text");
        assert_eq!(decoded.trigger_positions, vec![2, 5]);
        assert!(decoded.diagnostics.is_empty());
    }

    #[test]
    fn shuffled_layout_matches_explicit_sort_oracle() {
        let schema = Schema::default();
        let v = Vocabulary::build(&schema).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let mut elements: Vec<(String, BBox)> = (0..rng.random_range(1..12))
                .map(|_| {
                    let x0: f64 = rng.random_range(0.0..0.8);
                    let y0: f64 = rng.random_range(0.0..0.8);
                    let cat = schema.categories[rng.random_range(0..5)].clone();
                    (cat, BBox::new(x0, y0, x0 + 0.1, y0 + 0.1).unwrap())
                })
                .collect();
            let mut sorted = elements.clone();
            sorted.sort_by(|a, b| reading_order(&a.1, &b.1));
            let oracle: Vec<u32> = sorted
                .iter()
                .flat_map(|(cat, _)| {
                    vec![LAYOUT_OPEN, v.cat_id(cat).unwrap(), LAYOUT_CLOSE]
                })
                .collect();
            elements.shuffle(&mut rng);
            assert_eq!(serialize_layout(&elements, &v).unwrap().0, oracle);
        }
    }

    #[test]
    fn scene_example_orders_objects_before_words() {
        let v = vocab();
        let obj = vec![(
            "bus".to_string(),
            BBox::new(0.2, 0.3, 0.8, 0.9).unwrap(),
        )];
        let words = vec![
            ("201".to_string(), Quad::from_bbox(&BBox::new(0.3, 0.4, 0.4, 0.5).unwrap())),
            (
                "hyakumanben".to_string(),
                Quad::from_bbox(&BBox::new(0.3, 0.6, 0.7, 0.7).unwrap()),
            ),
        ];
        let seq = serialize_scene(&obj, &words, &v).unwrap();
        let bus = v.cat_id("bus").unwrap();
        assert_eq!(&seq.0[..3], &[OBJ_OPEN, bus, OBJ_CLOSE]);
        assert_eq!(seq.0[3], OCR_OPEN);

        let decoded = deserialize_scene(&seq, &v);
        assert_eq!(decoded.objects.len(), 1);
        assert_eq!(decoded.objects[0].category, "bus");
        assert_eq!(decoded.words.len(), 2);
        assert_eq!(decoded.words[0].text, "201");
        assert_eq!(decoded.words[1].text, "hyakumanben");
        assert_eq!(decoded.trigger_positions.len(), 3);
        assert!(decoded.diagnostics.is_empty());

        assert!(serialize_scene(&[], &[], &v).unwrap().is_empty());
    }

    #[test]
    fn scene_trigger_count_is_objects_plus_words() {
        let v = vocab();
        let b = BBox::new(0.1, 0.1, 0.5, 0.5).unwrap();
        let objects = vec![("bus".to_string(), b.clone()), ("circle".to_string(), b.clone())];
        let words = vec![("stop".to_string(), Quad::from_bbox(&b))];
        let seq = serialize_scene(&objects, &words, &v).unwrap();
        let decoded = deserialize_scene(&seq, &v);
        assert_eq!(decoded.trigger_positions.len(), 3);
    }

    #[test]
    fn class_round_trips_and_rejects_unknown() {
        let v = vocab();
        let seq = serialize_class("letter", &v).unwrap();
        assert_eq!(seq.0, vec![v.cat_id("letter").unwrap()]);
        let decoded = deserialize_class(&seq, &v);
        assert_eq!(decoded.label.as_deref(), Some("letter"));
        assert!(decoded.diagnostics.is_empty());

        let err = serialize_class("memo", &v).unwrap_err();
        assert!(matches!(err, crate::error::Error::Schema(_)));

        let none = deserialize_class(&TokenSequence::new(), &v);
        assert_eq!(none.label, None);
        assert!(!none.diagnostics.is_empty());
    }

    #[test]
    fn wrap_unwrap_is_identity() {
        let v = vocab();
        let schema = Schema::default();
        let cfg = RandomTreeConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let seqs: Vec<TokenSequence> = (0..4)
            .map(|_| serialize_tree(&random_tree(&mut rng, &schema, &cfg), &v).unwrap())
            .collect();
        let wrapped = wrap_instances(&seqs);
        assert_eq!(wrapped.0[0], INSTANCE_OPEN);
        assert_eq!(*wrapped.0.last().unwrap(), INSTANCE_CLOSE);
        let (docs, diags) = unwrap_instances(&wrapped);
        assert!(diags.is_empty());
        let bodies: Vec<TokenSequence> = docs.into_iter().map(|(_, s)| s).collect();
        assert_eq!(bodies, seqs);
    }

    #[test]
    fn two_instance_wrap_has_exact_shape() {
        let v = vocab();
        let s1 = serialize_class("letter", &v).unwrap();
        let s2 = serialize_class("invoice", &v).unwrap();
        let wrapped = wrap_instances(&[s1.clone(), s2.clone()]);
        let mut expected = vec![INSTANCE_OPEN];
        expected.extend(s1.iter());
        expected.push(INSTANCE_CLOSE);
        expected.push(INSTANCE_OPEN);
        expected.extend(s2.iter());
        expected.push(INSTANCE_CLOSE);
        assert_eq!(wrapped.0, expected);
    }

    #[test]
    fn truncated_wrap_recovers_with_diagnostic() {
        let v = vocab();
        let s1 = serialize_tree(&tree_hot_coffee(), &v).unwrap();
        let mut wrapped = wrap_instances(&[s1.clone()]);
        wrapped.0.pop();
        let (docs, diags) = unwrap_instances(&wrapped);
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].1, s1);
        assert!(!diags.is_empty());
    }

    #[test]
    fn multi_decode_reports_global_trigger_positions() {
        let v = vocab();
        let t = tree_hot_coffee();
        let s = serialize_tree(&t, &v).unwrap();
        let wrapped = wrap_instances(&[s.clone(), s.clone()]);
        let decoded = deserialize_multi(&wrapped, &v);
        assert_eq!(decoded.docs.len(), 2);
        assert_eq!(decoded.docs[0].tree, t);
        assert_eq!(decoded.docs[1].tree, t);
        // Instance 1 body starts at index 1, instance 2 at body len + 3.
        let body = s.len();
        assert_eq!(
            decoded.trigger_positions,
            vec![1 + 5, 1 + 13, body + 3 + 5, body + 3 + 13]
        );
        for doc in &decoded.docs {
            for seg in &doc.segments {
                let p = seg.close_pos.unwrap();
                assert_eq!(wrapped.0[p], OCR_CLOSE);
            }
        }
    }

    #[test]
    fn deserializers_are_total_on_random_id_soup() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..200 {
            let len = rng.random_range(0..60);
            let ids: Vec<u32> = (0..len)
                .map(|_| rng.random_range(0..v.size() as u32))
                .collect();
            let seq = TokenSequence(ids);
            let _ = deserialize_sequence(&seq, &v);
            let _ = deserialize_layout(&seq, &v);
            let _ = deserialize_scene(&seq, &v);
            let _ = deserialize_class(&seq, &v);
            let _ = deserialize_multi(&seq, &v);
        }
    }
}
