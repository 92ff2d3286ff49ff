//! Textual notation for meta-correspondences.
//!
//! ```text
//! Similarity[BP:DataObject <-> SD:Entity]
//! Induction[BP:Task -> SD:Operation]
//! ```
//!
//! The Unicode arrows `↔` and `→` are accepted as aliases; rendering always
//! emits the ASCII forms with one space on either side of the arrow.

use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TokenClass {
    Identifier,
    LeftBracket,
    RightBracket,
    Colon,
    Arrow,
    EndOfInput,
}

impl fmt::Display for TokenClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TokenClass::Identifier => "identifier",
            TokenClass::LeftBracket => "`[`",
            TokenClass::RightBracket => "`]`",
            TokenClass::Colon => "`:`",
            TokenClass::Arrow => "arrow (`->` or `<->`)",
            TokenClass::EndOfInput => "end of input",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NotationError {
    #[error("syntax error at byte {offset}: expected {expected}, found {found}")]
    Syntax {
        offset: usize,
        expected: TokenClass,
        found: String,
    },
    #[error("unknown relationship `{name}` at byte {offset}")]
    UnknownRelationship { name: String, offset: usize },
    #[error("relationship `{relationship}` is {} but the arrow at byte {offset} is {}",
        if *.symmetric { "symmetric" } else { "directed" },
        if *.symmetric { "directed" } else { "symmetric" })]
    ArrowMismatch {
        relationship: String,
        symmetric: bool,
        offset: usize,
    },
    #[error("correspondence relates `{0}` to itself")]
    DegenerateCorrespondence(String),
    #[error("relationship `{0}` is already registered")]
    DuplicateName(String),
    #[error("unknown parent relationship `{0}`")]
    UnknownParent(String),
    #[error("`{0}` is not a valid relationship name")]
    InvalidName(String),
}

impl NotationError {
    pub fn code(&self) -> &'static str {
        match self {
            NotationError::Syntax { .. } => "SyntaxError",
            NotationError::UnknownRelationship { .. } => "UnknownRelationship",
            NotationError::ArrowMismatch { .. } => "ArrowMismatch",
            NotationError::DegenerateCorrespondence(_) => "DegenerateCorrespondence",
            NotationError::DuplicateName(_) => "DuplicateName",
            NotationError::UnknownParent(_) => "UnknownParent",
            NotationError::InvalidName(_) => "InvalidName",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RelationshipDef {
    pub name: String,
    pub symmetric: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

impl RelationshipDef {
    pub fn new(name: &str, symmetric: bool, parent: Option<&str>) -> Self {
        RelationshipDef {
            name: name.to_string(),
            symmetric,
            parent: parent.map(str::to_string),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RelationshipRegistry {
    defs: BTreeMap<String, RelationshipDef>,
}

impl Default for RelationshipRegistry {
    fn default() -> Self {
        let mut registry = RelationshipRegistry::empty();
        for def in [
            RelationshipDef::new("Similarity", true, None),
            RelationshipDef::new("Dependency", false, None),
            RelationshipDef::new("Induction", false, Some("Dependency")),
        ] {
            registry
                .register(def)
                .expect("built-in relationships are consistent");
        }
        registry
    }
}

impl RelationshipRegistry {
    pub fn empty() -> Self {
        RelationshipRegistry {
            defs: BTreeMap::new(),
        }
    }

    /// A parent must already be registered, so parent chains stay acyclic.
    pub fn register(&mut self, def: RelationshipDef) -> Result<(), NotationError> {
        if !is_identifier(&def.name) {
            return Err(NotationError::InvalidName(def.name));
        }
        if self.defs.contains_key(&def.name) {
            return Err(NotationError::DuplicateName(def.name));
        }
        if let Some(parent) = &def.parent {
            if !self.defs.contains_key(parent) {
                return Err(NotationError::UnknownParent(parent.clone()));
            }
        }
        self.defs.insert(def.name.clone(), def);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&RelationshipDef> {
        self.defs.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &RelationshipDef> {
        self.defs.values()
    }

    /// True when `name` equals `ancestor` or specializes it.
    pub fn is_a(&self, name: &str, ancestor: &str) -> bool {
        let mut current = self.defs.get(name);
        while let Some(def) = current {
            if def.name == ancestor {
                return true;
            }
            current = def.parent.as_deref().and_then(|p| self.defs.get(p));
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetaElement {
    pub metamodel: String,
    pub element: String,
}

impl MetaElement {
    pub fn new(metamodel: &str, element: &str) -> Self {
        MetaElement {
            metamodel: metamodel.to_string(),
            element: element.to_string(),
        }
    }
}

impl fmt::Display for MetaElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.metamodel, self.element)
    }
}

/// A relationship between two meta-elements. Symmetric correspondences
/// compare equal under a left/right swap.
#[derive(Debug, Clone, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Correspondence {
    pub relationship: String,
    pub left: MetaElement,
    pub right: MetaElement,
    pub directed: bool,
}

impl Correspondence {
    fn ordered_ends(&self) -> (&MetaElement, &MetaElement) {
        if self.directed || self.left <= self.right {
            (&self.left, &self.right)
        } else {
            (&self.right, &self.left)
        }
    }
}

impl PartialEq for Correspondence {
    fn eq(&self, other: &Self) -> bool {
        self.relationship == other.relationship
            && self.directed == other.directed
            && self.ordered_ends() == other.ordered_ends()
    }
}

impl Hash for Correspondence {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.relationship.hash(state);
        self.directed.hash(state);
        self.ordered_ends().hash(state);
    }
}

impl fmt::Display for Correspondence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let arrow = if self.directed { "->" } else { "<->" };
        write!(
            f,
            "{}[{} {} {}]",
            self.relationship, self.left, arrow, self.right
        )
    }
}

/// Canonical text form.
pub fn render(c: &Correspondence) -> String {
    c.to_string()
}

/// Parses `text` and checks it against the registry.
pub fn parse(text: &str, registry: &RelationshipRegistry) -> Result<Correspondence, NotationError> {
    let raw = parse_syntax(text)?;
    let def = registry
        .get(&raw.relationship)
        .ok_or_else(|| NotationError::UnknownRelationship {
            name: raw.relationship.clone(),
            offset: raw.relationship_offset,
        })?;
    if def.symmetric == raw.directed {
        return Err(NotationError::ArrowMismatch {
            relationship: def.name.clone(),
            symmetric: def.symmetric,
            offset: raw.arrow_offset,
        });
    }
    if raw.left == raw.right {
        return Err(NotationError::DegenerateCorrespondence(raw.left.to_string()));
    }
    Ok(Correspondence {
        relationship: raw.relationship,
        left: raw.left,
        right: raw.right,
        directed: raw.directed,
    })
}

/// Result of the purely syntactic pass, before registry checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawCorrespondence {
    pub relationship: String,
    pub relationship_offset: usize,
    pub left: MetaElement,
    pub right: MetaElement,
    pub directed: bool,
    pub arrow_offset: usize,
}

pub fn parse_syntax(text: &str) -> Result<RawCorrespondence, NotationError> {
    let mut p = Parser { text, pos: 0 };
    let (relationship_offset, relationship) = p.identifier()?;
    p.punct('[', TokenClass::LeftBracket)?;
    let left = p.meta_element()?;
    let (arrow_offset, directed) = p.arrow()?;
    let right = p.meta_element()?;
    p.punct(']', TokenClass::RightBracket)?;
    p.skip_ws();
    if p.pos < text.len() {
        return Err(p.unexpected(TokenClass::EndOfInput));
    }
    Ok(RawCorrespondence {
        relationship: relationship.to_string(),
        relationship_offset,
        left,
        right,
        directed,
        arrow_offset,
    })
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_alphabetic())
        && chars.all(|c| c.is_alphanumeric() || c == '_')
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.text.len() - trimmed.len();
    }

    fn unexpected(&self, expected: TokenClass) -> NotationError {
        let found = match self.rest().chars().next() {
            Some(c) => format!("`{c}`"),
            None => "end of input".to_string(),
        };
        NotationError::Syntax {
            offset: self.pos,
            expected,
            found,
        }
    }

    fn identifier(&mut self) -> Result<(usize, &'a str), NotationError> {
        self.skip_ws();
        let start = self.pos;
        let mut chars = self.rest().char_indices();
        match chars.next() {
            Some((_, c)) if c.is_alphabetic() => {}
            _ => return Err(self.unexpected(TokenClass::Identifier)),
        }
        let len = chars
            .find(|&(_, c)| !(c.is_alphanumeric() || c == '_'))
            .map(|(i, _)| i)
            .unwrap_or(self.rest().len());
        self.pos += len;
        Ok((start, &self.text[start..self.pos]))
    }

    fn punct(&mut self, c: char, class: TokenClass) -> Result<(), NotationError> {
        self.skip_ws();
        if self.rest().starts_with(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            Err(self.unexpected(class))
        }
    }

    fn meta_element(&mut self) -> Result<MetaElement, NotationError> {
        let (_, metamodel) = self.identifier()?;
        self.punct(':', TokenClass::Colon)?;
        let (_, element) = self.identifier()?;
        Ok(MetaElement::new(metamodel, element))
    }

    /// Returns the arrow offset and whether it is directed.
    fn arrow(&mut self) -> Result<(usize, bool), NotationError> {
        self.skip_ws();
        let start = self.pos;
        for (lexeme, directed) in [("<->", false), ("↔", false), ("->", true), ("→", true)] {
            if self.rest().starts_with(lexeme) {
                self.pos += lexeme.len();
                return Ok((start, directed));
            }
        }
        Err(self.unexpected(TokenClass::Arrow))
    }
}
