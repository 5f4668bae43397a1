//! Vocabulary, schema declaration, and task plumbing shared by every stage.
//!
//! The vocabulary is built once from a [`Schema`] and is immutable afterwards;
//! all serialization in [`grammar`] works over token ids, never strings.

pub mod grammar;
pub mod tree;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Glyph charset in vocabulary order. Uppercase input folds to lowercase
/// before lookup; anything outside this set is a charset error.
pub const CHARSET: &str = "abcdefghijklmnopqrstuvwxyz0123456789 .,:;-/()%$#&*";

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const S_OCR: u32 = 4;
pub const S_PARSE: u32 = 5;
pub const S_LAYOUT: u32 = 6;
pub const S_CLASS: u32 = 7;
pub const S_SCENE: u32 = 8;
pub const OCR_OPEN: u32 = 9;
pub const OCR_CLOSE: u32 = 10;
pub const LAYOUT_OPEN: u32 = 11;
pub const LAYOUT_CLOSE: u32 = 12;
pub const OBJ_OPEN: u32 = 13;
pub const OBJ_CLOSE: u32 = 14;
pub const INSTANCE_OPEN: u32 = 15;
pub const INSTANCE_CLOSE: u32 = 16;

/// Special tokens with fixed ids, in id order.
const FIXED_SPECIALS: [&str; 17] = [
    "<pad>",
    "<unk>",
    "<s>",
    "</s>",
    "<s_ocr>",
    "<s_parse>",
    "<s_layout>",
    "<s_class>",
    "<s_scene>",
    "<ocr>",
    "</ocr>",
    "<layout>",
    "</layout>",
    "<obj>",
    "</obj>",
    "<instance>",
    "</instance>",
];

/// True for the per-task start tokens `<s_ocr>` .. `<s_scene>`.
pub fn is_task_token(id: u32) -> bool {
    (S_OCR..=S_SCENE).contains(&id)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Ocr,
    Parse,
    Layout,
    Class,
    Scene,
    Multi,
}

impl Task {
    pub const ALL: [Task; 6] = [
        Task::Ocr,
        Task::Parse,
        Task::Layout,
        Task::Class,
        Task::Scene,
        Task::Multi,
    ];

    /// Start token fed to the decoder. Multi-document parsing reuses the
    /// parse task token; only the target grammar differs.
    pub fn token_id(self) -> u32 {
        match self {
            Task::Ocr => S_OCR,
            Task::Parse | Task::Multi => S_PARSE,
            Task::Layout => S_LAYOUT,
            Task::Class => S_CLASS,
            Task::Scene => S_SCENE,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Ocr => "ocr",
            Task::Parse => "parse",
            Task::Layout => "layout",
            Task::Class => "class",
            Task::Scene => "scene",
            Task::Multi => "multi",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown task '{s}'")))
    }
}

/// Declared field names, category names, and per-task trigger tokens.
/// Loaded from JSON at startup so every task shares one vocabulary build.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Schema {
    pub fields: Vec<String>,
    pub categories: Vec<String>,
    #[serde(default)]
    pub triggers: BTreeMap<Task, Vec<String>>,
}

impl Default for Schema {
    fn default() -> Self {
        let fields = [
            "menu", "name", "count", "price", "total", "subtotal", "tax", "store", "address",
            "date",
        ];
        let categories = [
            "title", "text", "table", "figure", "list", "letter", "invoice", "receipt", "form",
            "circle", "square", "triangle", "bus",
        ];
        let mut triggers = BTreeMap::new();
        for task in Task::ALL {
            triggers.insert(task, default_triggers(task));
        }
        Schema {
            fields: fields.iter().map(|s| s.to_string()).collect(),
            categories: categories.iter().map(|s| s.to_string()).collect(),
            triggers,
        }
    }
}

fn default_triggers(task: Task) -> Vec<String> {
    match task {
        Task::Layout => vec!["</layout>".to_string()],
        Task::Scene => vec!["</obj>".to_string(), "</ocr>".to_string()],
        _ => vec!["</ocr>".to_string()],
    }
}

impl Schema {
    pub fn load(path: &Path) -> Result<Schema> {
        let text = std::fs::read_to_string(path)?;
        let schema: Schema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        Ok(std::fs::write(path, text)?)
    }

    /// Trigger tokens for a task, falling back to the built-in defaults when
    /// the schema file leaves the task out.
    pub fn trigger_tokens(&self, task: Task) -> Vec<String> {
        match self.triggers.get(&task) {
            Some(tokens) if !tokens.is_empty() => tokens.clone(),
            _ => default_triggers(task),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for name in self.fields.iter().chain(self.categories.iter()) {
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
            {
                return Err(Error::Schema(format!(
                    "name '{name}' must be non-empty lowercase alphanumeric"
                )));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!("duplicate name '{name}'")));
            }
        }
        for (task, tokens) in &self.triggers {
            if tokens.is_empty() {
                return Err(Error::Schema(format!("empty trigger set for task {task}")));
            }
            for tok in tokens {
                if !FIXED_SPECIALS.contains(&tok.as_str()) {
                    return Err(Error::Schema(format!(
                        "trigger '{tok}' is not a special token"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Immutable token table: fixed specials, then per-field open/close pairs,
/// then category tokens, then the glyph charset.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    field_ids: HashMap<String, (u32, u32)>,
    cat_ids: HashMap<String, u32>,
    char_base: u32,
}

impl Vocabulary {
    pub fn build(schema: &Schema) -> Result<Vocabulary> {
        schema.validate()?;
        let mut tokens: Vec<String> = Vec::new();
        let mut ids: HashMap<String, u32> = HashMap::new();
        let push = |tokens: &mut Vec<String>, ids: &mut HashMap<String, u32>, tok: String| {
            let id = tokens.len() as u32;
            tokens.push(tok.clone());
            ids.insert(tok, id);
            id
        };
        for tok in FIXED_SPECIALS {
            push(&mut tokens, &mut ids, tok.to_string());
        }
        let mut field_ids = HashMap::new();
        for name in &schema.fields {
            let open = push(&mut tokens, &mut ids, format!("<field:{name}>"));
            let close = push(&mut tokens, &mut ids, format!("</field:{name}>"));
            field_ids.insert(name.clone(), (open, close));
        }
        let mut cat_ids = HashMap::new();
        for name in &schema.categories {
            let id = push(&mut tokens, &mut ids, format!("<cat:{name}>"));
            cat_ids.insert(name.clone(), id);
        }
        let char_base = tokens.len() as u32;
        for c in CHARSET.chars() {
            push(&mut tokens, &mut ids, c.to_string());
        }
        if ids.len() != tokens.len() {
            return Err(Error::Schema("token collision in vocabulary".to_string()));
        }
        Ok(Vocabulary {
            tokens,
            ids,
            field_ids,
            cat_ids,
            char_base,
        })
    }

    /// Rebuilds a vocabulary from a stored token list, as read back from a
    /// checkpoint. Field and category names are recovered from the token
    /// prefixes, the vocabulary is rebuilt from them, and the result must
    /// reproduce the input list exactly; any drift is a format error.
    pub fn from_tokens(stored: &[String]) -> Result<Vocabulary> {
        let mut fields = Vec::new();
        let mut categories = Vec::new();
        for tok in stored {
            if let Some(name) = tok.strip_prefix("<field:").and_then(|s| s.strip_suffix('>')) {
                fields.push(name.to_string());
            } else if let Some(name) = tok.strip_prefix("<cat:").and_then(|s| s.strip_suffix('>')) {
                categories.push(name.to_string());
            }
        }
        let schema = Schema {
            fields,
            categories,
            triggers: Schema::default().triggers,
        };
        let vocab = Vocabulary::build(&schema)?;
        if vocab.tokens() != stored {
            return Err(Error::Format(format!(
                "stored vocabulary of {} tokens does not match a rebuildable schema ({} rebuilt)",
                stored.len(),
                vocab.size()
            )));
        }
        Ok(vocab)
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    /// Token strings in id order, for checkpoint embedding.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token_of(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Maps input characters onto the charset: uppercase folds to lowercase,
    /// charset members pass through, everything else is rejected.
    pub fn fold_char(c: char) -> Option<char> {
        let c = c.to_ascii_lowercase();
        CHARSET.contains(c).then_some(c)
    }

    pub fn char_id(&self, c: char) -> Option<u32> {
        let folded = Vocabulary::fold_char(c)?;
        let idx = CHARSET.chars().position(|x| x == folded)? as u32;
        Some(self.char_base + idx)
    }

    /// The glyph character for a charset token id, if it is one.
    pub fn decode_char(&self, id: u32) -> Option<char> {
        if id >= self.char_base && (id as usize) < self.tokens.len() {
            self.tokens[id as usize].chars().next()
        } else {
            None
        }
    }

    pub fn is_char(&self, id: u32) -> bool {
        id >= self.char_base && (id as usize) < self.tokens.len()
    }

    pub fn encode_text(&self, text: &str) -> Result<Vec<u32>> {
        text.chars()
            .map(|c| {
                self.char_id(c)
                    .ok_or_else(|| Error::Charset(format!("character {c:?} outside charset")))
            })
            .collect()
    }

    pub fn field_pair(&self, name: &str) -> Result<(u32, u32)> {
        self.field_ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::Schema(format!("unknown field name '{name}'")))
    }

    pub fn cat_id(&self, name: &str) -> Result<u32> {
        self.cat_ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::Schema(format!("unknown category '{name}'")))
    }

    /// Field name for a `<field:NAME>` id.
    pub fn as_field_open(&self, id: u32) -> Option<&str> {
        let tok = self.token_of(id)?;
        tok.strip_prefix("<field:")?.strip_suffix('>')
    }

    /// Field name for a `</field:NAME>` id.
    pub fn as_field_close(&self, id: u32) -> Option<&str> {
        let tok = self.token_of(id)?;
        tok.strip_prefix("</field:")?.strip_suffix('>')
    }

    /// Category name for a `<cat:NAME>` id.
    pub fn as_cat(&self, id: u32) -> Option<&str> {
        let tok = self.token_of(id)?;
        tok.strip_prefix("<cat:")?.strip_suffix('>')
    }

    /// Human-readable rendering; the space glyph prints as an open box so
    /// token boundaries stay visible.
    pub fn render(&self, seq: &TokenSequence) -> String {
        seq.0
            .iter()
            .map(|&id| match self.token_of(id) {
                Some(" ") => "\u{2423}".to_string(),
                Some(tok) => tok.to_string(),
                None => format!("<bad:{id}>"),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Tokens whose emission triggers a coordinate prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TriggerSet {
    ids: BTreeSet<u32>,
}

impl TriggerSet {
    pub fn from_tokens(tokens: &[String], vocab: &Vocabulary) -> Result<TriggerSet> {
        if tokens.is_empty() {
            return Err(Error::Schema("trigger set must be non-empty".to_string()));
        }
        let mut ids = BTreeSet::new();
        for tok in tokens {
            let id = vocab
                .id_of(tok)
                .ok_or_else(|| Error::Schema(format!("unknown trigger token '{tok}'")))?;
            if !FIXED_SPECIALS.contains(&tok.as_str()) {
                return Err(Error::Schema(format!(
                    "trigger '{tok}' is not a special token"
                )));
            }
            ids.insert(id);
        }
        Ok(TriggerSet { ids })
    }

    pub fn for_task(schema: &Schema, vocab: &Vocabulary, task: Task) -> Result<TriggerSet> {
        TriggerSet::from_tokens(&schema.trigger_tokens(task), vocab)
    }

    pub fn contains(&self, id: u32) -> bool {
        self.ids.contains(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.ids.iter().copied()
    }
}

/// Ordered token ids over a [`Vocabulary`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence(pub Vec<u32>);

impl TokenSequence {
    pub fn new() -> TokenSequence {
        TokenSequence(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, id: u32) {
        self.0.push(id);
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.0.iter().copied()
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(ids: Vec<u32>) -> Self {
        TokenSequence(ids)
    }
}

impl FromIterator<u32> for TokenSequence {
    fn from_iter<I: IntoIterator<Item = u32>>(iter: I) -> Self {
        TokenSequence(iter.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charset_is_fifty_unique_chars() {
        let chars: Vec<char> = CHARSET.chars().collect();
        assert_eq!(chars.len(), 50);
        let set: BTreeSet<char> = chars.iter().copied().collect();
        assert_eq!(set.len(), 50);
    }

    #[test]
    fn fixed_ids_match_constants() {
        let vocab = Vocabulary::build(&Schema::default()).unwrap();
        assert_eq!(vocab.id_of("<pad>"), Some(PAD));
        assert_eq!(vocab.id_of("<unk>"), Some(UNK));
        assert_eq!(vocab.id_of("<s>"), Some(BOS));
        assert_eq!(vocab.id_of("</s>"), Some(EOS));
        assert_eq!(vocab.id_of("<s_ocr>"), Some(S_OCR));
        assert_eq!(vocab.id_of("<s_scene>"), Some(S_SCENE));
        assert_eq!(vocab.id_of("<ocr>"), Some(OCR_OPEN));
        assert_eq!(vocab.id_of("</ocr>"), Some(OCR_CLOSE));
        assert_eq!(vocab.id_of("<layout>"), Some(LAYOUT_OPEN));
        assert_eq!(vocab.id_of("</layout>"), Some(LAYOUT_CLOSE));
        assert_eq!(vocab.id_of("<obj>"), Some(OBJ_OPEN));
        assert_eq!(vocab.id_of("</obj>"), Some(OBJ_CLOSE));
        assert_eq!(vocab.id_of("<instance>"), Some(INSTANCE_OPEN));
        assert_eq!(vocab.id_of("</instance>"), Some(INSTANCE_CLOSE));
    }

    #[test]
    fn id_and_token_are_inverse_bijections() {
        let vocab = Vocabulary::build(&Schema::default()).unwrap();
        for id in 0..vocab.size() as u32 {
            let tok = vocab.token_of(id).unwrap();
            assert_eq!(vocab.id_of(tok), Some(id));
        }
        assert_eq!(vocab.token_of(vocab.size() as u32), None);
    }

    #[test]
    fn vocabulary_size_accounts_for_every_token() {
        let schema = Schema::default();
        let vocab = Vocabulary::build(&schema).unwrap();
        let expected = 17 + 2 * schema.fields.len() + schema.categories.len() + 50;
        assert_eq!(vocab.size(), expected);
    }

    #[test]
    fn uppercase_folds_to_lowercase() {
        let vocab = Vocabulary::build(&Schema::default()).unwrap();
        assert_eq!(vocab.char_id('A'), vocab.char_id('a'));
        assert_eq!(
            vocab.encode_text("Hot").unwrap(),
            vocab.encode_text("hot").unwrap()
        );
    }

    #[test]
    fn unknown_character_is_charset_error() {
        let vocab = Vocabulary::build(&Schema::default()).unwrap();
        let err = vocab.encode_text("a@b").unwrap_err();
        assert!(matches!(err, Error::Charset(_)), "got {err}");
    }

    #[test]
    fn char_tokens_do_not_shadow_specials() {
        let vocab = Vocabulary::build(&Schema::default()).unwrap();
        for id in 0..vocab.char_base {
            assert!(!vocab.is_char(id));
        }
        for idx in 0..50u32 {
            assert!(vocab.is_char(vocab.char_base + idx));
        }
    }

    #[test]
    fn schema_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("schema.json");
        let schema = Schema::default();
        schema.save(&path).unwrap();
        let loaded = Schema::load(&path).unwrap();
        assert_eq!(schema.fields, loaded.fields);
        assert_eq!(schema.categories, loaded.categories);
        assert_eq!(schema.triggers, loaded.triggers);
    }

    #[test]
    fn trigger_sets_follow_task() {
        let schema = Schema::default();
        let vocab = Vocabulary::build(&schema).unwrap();
        let parse = TriggerSet::for_task(&schema, &vocab, Task::Parse).unwrap();
        assert!(parse.contains(OCR_CLOSE));
        assert!(!parse.contains(LAYOUT_CLOSE));
        let layout = TriggerSet::for_task(&schema, &vocab, Task::Layout).unwrap();
        assert!(layout.contains(LAYOUT_CLOSE));
        let scene = TriggerSet::for_task(&schema, &vocab, Task::Scene).unwrap();
        assert!(scene.contains(OBJ_CLOSE));
        assert!(scene.contains(OCR_CLOSE));
        assert_eq!(scene.ids().count(), 2);
    }

    #[test]
    fn empty_trigger_set_is_rejected() {
        let schema = Schema::default();
        let vocab = Vocabulary::build(&schema).unwrap();
        let err = TriggerSet::from_tokens(&[], &vocab).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn duplicate_schema_names_are_rejected() {
        let mut schema = Schema::default();
        schema.fields.push("menu".to_string());
        assert!(matches!(schema.validate(), Err(Error::Schema(_))));
    }

    #[test]
    fn task_strings_round_trip() {
        for task in Task::ALL {
            assert_eq!(task.as_str().parse::<Task>().unwrap(), task);
        }
        assert!("bogus".parse::<Task>().is_err());
        assert_eq!(Task::Multi.token_id(), S_PARSE);
    }
}
