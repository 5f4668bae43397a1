//! Nested field/value payload of a document and its JSON form.
//!
//! A document is a forest of named branches; leaf values are ordered lists of
//! whitespace-free text segments. Trees are kept canonical: no empty leaf
//! nodes and no adjacent leaf siblings, so token round trips are exact
//! structural equality.

use rand::Rng;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::schema::{Schema, Vocabulary};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseNode {
    Branch {
        name: String,
        children: Vec<ParseNode>,
    },
    Leaf {
        segments: Vec<String>,
    },
}

impl ParseNode {
    pub fn branch(name: &str, children: Vec<ParseNode>) -> ParseNode {
        ParseNode::Branch {
            name: name.to_string(),
            children,
        }
    }

    pub fn leaf(segments: &[&str]) -> ParseNode {
        ParseNode::Leaf {
            segments: segments.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Forest of top-level nodes; a document may carry several root fields.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParseTree {
    pub roots: Vec<ParseNode>,
}

impl ParseTree {
    pub fn empty() -> ParseTree {
        ParseTree { roots: Vec::new() }
    }

    pub fn new(roots: Vec<ParseNode>) -> ParseTree {
        ParseTree { roots }
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    /// Total node count with branches and individual segments both counted.
    pub fn node_count(&self) -> usize {
        fn walk(node: &ParseNode) -> usize {
            match node {
                ParseNode::Branch { children, .. } => {
                    1 + children.iter().map(walk).sum::<usize>()
                }
                ParseNode::Leaf { segments } => segments.len(),
            }
        }
        self.roots.iter().map(walk).sum()
    }

    /// All leaf segments with their field path, in emission order. The path
    /// is the chain of enclosing branch names joined by '.'; root-level
    /// segments get an empty path.
    pub fn leaf_entries(&self) -> Vec<(String, String)> {
        fn walk(node: &ParseNode, path: &mut Vec<String>, out: &mut Vec<(String, String)>) {
            match node {
                ParseNode::Branch { name, children } => {
                    path.push(name.clone());
                    for c in children {
                        walk(c, path, out);
                    }
                    path.pop();
                }
                ParseNode::Leaf { segments } => {
                    let p = path.join(".");
                    for s in segments {
                        out.push((p.clone(), s.clone()));
                    }
                }
            }
        }
        let mut out = Vec::new();
        let mut path = Vec::new();
        for r in &self.roots {
            walk(r, &mut path, &mut out);
        }
        out
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        fn walk(node: &ParseNode, schema: &Schema) -> Result<()> {
            match node {
                ParseNode::Branch { name, children } => {
                    if !schema.fields.contains(name) {
                        return Err(Error::Schema(format!("unknown field name '{name}'")));
                    }
                    children.iter().try_for_each(|c| walk(c, schema))
                }
                ParseNode::Leaf { segments } => {
                    for s in segments {
                        if s.is_empty() {
                            return Err(Error::Schema("empty leaf segment".to_string()));
                        }
                        for c in s.chars() {
                            if c == ' ' {
                                return Err(Error::Schema(format!(
                                    "segment '{s}' contains whitespace"
                                )));
                            }
                            if Vocabulary::fold_char(c).is_none() {
                                return Err(Error::Charset(format!(
                                    "character {c:?} outside charset"
                                )));
                            }
                        }
                    }
                    Ok(())
                }
            }
        }
        self.roots.iter().try_for_each(|r| walk(r, schema))
    }

    /// Builds a tree from annotation JSON. Objects become ordered branches,
    /// arrays repeat their key as sibling branches, strings split on
    /// whitespace into segments.
    pub fn from_json(value: &Value) -> Result<ParseTree> {
        match value {
            Value::Object(map) => {
                let mut roots = Vec::new();
                for (key, v) in map {
                    nodes_from_entry(key, v, &mut roots)?;
                }
                Ok(ParseTree { roots })
            }
            _ => Err(Error::Format(
                "parse annotation must be a JSON object".to_string(),
            )),
        }
    }

    pub fn to_json(&self) -> Value {
        if self.roots.is_empty() {
            return Value::Object(serde_json::Map::new());
        }
        children_to_json(&self.roots)
    }
}

fn nodes_from_entry(key: &str, value: &Value, out: &mut Vec<ParseNode>) -> Result<()> {
    match value {
        Value::Array(items) => {
            for item in items {
                if matches!(item, Value::Array(_)) {
                    return Err(Error::Format(format!("nested array under '{key}'")));
                }
                nodes_from_entry(key, item, out)?;
            }
            Ok(())
        }
        _ => {
            out.push(ParseNode::Branch {
                name: key.to_string(),
                children: value_children(key, value)?,
            });
            Ok(())
        }
    }
}

fn value_children(key: &str, value: &Value) -> Result<Vec<ParseNode>> {
    match value {
        Value::String(s) => {
            let segments: Vec<String> = s.split_whitespace().map(str::to_string).collect();
            if segments.is_empty() {
                Ok(Vec::new())
            } else {
                Ok(vec![ParseNode::Leaf { segments }])
            }
        }
        Value::Number(n) => Ok(vec![ParseNode::Leaf {
            segments: vec![n.to_string()],
        }]),
        Value::Object(map) => {
            let mut children = Vec::new();
            for (k, v) in map {
                nodes_from_entry(k, v, &mut children)?;
            }
            Ok(children)
        }
        _ => Err(Error::Format(format!(
            "unsupported json value under '{key}'"
        ))),
    }
}

/// Key for leaf content that sits beside branch siblings; decoded trees can
/// produce it, generated ones never do.
const TEXT_KEY: &str = "#text";

fn children_to_json(children: &[ParseNode]) -> Value {
    if children.is_empty() {
        return Value::String(String::new());
    }
    if let [ParseNode::Leaf { segments }] = children {
        return Value::String(segments.join(" "));
    }
    let mut map = serde_json::Map::new();
    for node in children {
        let (key, value) = match node {
            ParseNode::Branch { name, children } => (name.clone(), children_to_json(children)),
            ParseNode::Leaf { segments } => {
                (TEXT_KEY.to_string(), Value::String(segments.join(" ")))
            }
        };
        match map.get_mut(&key) {
            None => {
                map.insert(key, value);
            }
            Some(Value::Array(items)) => items.push(value),
            Some(existing) => {
                let first = existing.take();
                *existing = Value::Array(vec![first, value]);
            }
        }
    }
    Value::Object(map)
}

/// Knobs for [`random_tree`]; kept small so round-trip suites stay fast.
#[derive(Clone, Copy, Debug)]
pub struct RandomTreeConfig {
    pub max_depth: usize,
    pub max_children: usize,
    pub max_segments: usize,
    pub max_word_len: usize,
}

impl Default for RandomTreeConfig {
    fn default() -> Self {
        RandomTreeConfig {
            max_depth: 3,
            max_children: 4,
            max_segments: 3,
            max_word_len: 6,
        }
    }
}

/// Schema-valid canonical tree for property suites.
pub fn random_tree(rng: &mut impl Rng, schema: &Schema, cfg: &RandomTreeConfig) -> ParseTree {
    let n_roots = rng.random_range(1..=cfg.max_children.max(1));
    let roots = (0..n_roots)
        .map(|_| random_branch(rng, schema, cfg, cfg.max_depth))
        .collect();
    ParseTree { roots }
}

fn random_branch(
    rng: &mut impl Rng,
    schema: &Schema,
    cfg: &RandomTreeConfig,
    depth: usize,
) -> ParseNode {
    let name = schema.fields[rng.random_range(0..schema.fields.len())].clone();
    let children = if depth <= 1 || rng.random_bool(0.6) {
        match rng.random_range(0..=cfg.max_segments) {
            0 => Vec::new(),
            n => vec![ParseNode::Leaf {
                segments: (0..n).map(|_| random_word(rng, cfg.max_word_len)).collect(),
            }],
        }
    } else {
        (0..rng.random_range(1..=cfg.max_children))
            .map(|_| random_branch(rng, schema, cfg, depth - 1))
            .collect()
    };
    ParseNode::Branch { name, children }
}

fn random_word(rng: &mut impl Rng, max_len: usize) -> String {
    const POOL: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789.";
    let len = rng.random_range(1..=max_len.max(1));
    (0..len)
        .map(|_| POOL[rng.random_range(0..POOL.len())] as char)
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use serde_json::json;

    use super::*;

    #[test]
    fn json_object_becomes_ordered_branches() {
        let v = json!({"store": "corner shop", "total": "4.50"});
        let tree = ParseTree::from_json(&v).unwrap();
        assert_eq!(
            tree.roots,
            vec![
                ParseNode::branch("store", vec![ParseNode::leaf(&["corner", "shop"])]),
                ParseNode::branch("total", vec![ParseNode::leaf(&["4.50"])]),
            ]
        );
    }

    #[test]
    fn json_array_repeats_sibling_branches() {
        let v = json!({"menu": [{"name": "tea"}, {"name": "pie"}]});
        let tree = ParseTree::from_json(&v).unwrap();
        assert_eq!(tree.roots.len(), 2);
        assert_eq!(
            tree.roots[0],
            ParseNode::branch("menu", vec![ParseNode::branch(
                "name",
                vec![ParseNode::leaf(&["tea"])]
            )])
        );
    }

    #[test]
    fn json_round_trip_preserves_structure() {
        let v = json!({
            "store": "mart",
            "menu": [
                {"name": "hot coffee", "price": "3.50"},
                {"name": "scone", "price": "2.10"}
            ],
            "total": "5.60"
        });
        let tree = ParseTree::from_json(&v).unwrap();
        let back = tree.to_json();
        assert_eq!(ParseTree::from_json(&back).unwrap(), tree);
    }

    #[test]
    fn empty_string_gives_branch_without_leaf() {
        let v = json!({"name": ""});
        let tree = ParseTree::from_json(&v).unwrap();
        assert_eq!(tree.roots, vec![ParseNode::branch("name", vec![])]);
        assert_eq!(tree.to_json(), json!({"name": ""}));
    }

    #[test]
    fn validate_rejects_unknown_field_and_bad_chars() {
        let schema = Schema::default();
        let good = ParseTree::new(vec![ParseNode::branch(
            "store",
            vec![ParseNode::leaf(&["mart"])],
        )]);
        good.validate(&schema).unwrap();

        let unknown = ParseTree::new(vec![ParseNode::branch("bogus", vec![])]);
        assert!(matches!(unknown.validate(&schema), Err(Error::Schema(_))));

        let bad_char = ParseTree::new(vec![ParseNode::branch(
            "store",
            vec![ParseNode::leaf(&["caf@"])],
        )]);
        assert!(matches!(bad_char.validate(&schema), Err(Error::Charset(_))));

        let spaced = ParseTree::new(vec![ParseNode::branch(
            "store",
            vec![ParseNode::Leaf {
                segments: vec!["two words".to_string()],
            }],
        )]);
        assert!(matches!(spaced.validate(&schema), Err(Error::Schema(_))));
    }

    #[test]
    fn leaf_entries_carry_dotted_paths() {
        let v = json!({"menu": {"name": "hot coffee"}, "total": "3.50"});
        let tree = ParseTree::from_json(&v).unwrap();
        assert_eq!(
            tree.leaf_entries(),
            vec![
                ("menu.name".to_string(), "hot".to_string()),
                ("menu.name".to_string(), "coffee".to_string()),
                ("total".to_string(), "3.50".to_string()),
            ]
        );
    }

    #[test]
    fn random_trees_are_schema_valid() {
        let schema = Schema::default();
        let cfg = RandomTreeConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let tree = random_tree(&mut rng, &schema, &cfg);
            tree.validate(&schema).unwrap();
            assert!(!tree.is_empty());
        }
    }

    #[test]
    fn node_count_counts_branches_and_segments() {
        let v = json!({"menu": {"name": "hot coffee"}});
        let tree = ParseTree::from_json(&v).unwrap();
        assert_eq!(tree.node_count(), 4);
    }
}
