//! LIWC-style `.dic` dictionaries and per-token category tagging.
//!
//! ```text
//! %
//! 1	pronoun
//! 2	ppron
//! %
//! she	1 2
//! run*	3
//! ```
//!
//! Entry lines separate the word from its category ids with a tab.

#![allow(clippy::tabs_in_doc_comments)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::attribution::AttributedCorpus;
use crate::corpus::Label;
use crate::error::{Error, Result};

/// Categories that describe a whole text rather than a token.
pub const DEFAULT_EXCLUDED: [&str; 6] = ["WC", "Analytic", "Clout", "Authentic", "Tone", "WPS"];

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryDictionary {
    categories: BTreeMap<u32, String>,
    literals: HashMap<String, BTreeSet<u32>>,
    /// Keyed by the prefix before the trailing `*`.
    wildcards: HashMap<String, BTreeSet<u32>>,
    excluded: BTreeSet<String>,
}

fn is_excluded(excluded: &BTreeSet<String>, name: &str) -> bool {
    excluded.iter().any(|e| e.eq_ignore_ascii_case(name))
}

impl CategoryDictionary {
    pub fn parse_str(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
        let err = |line: usize, msg: String| Error::parse(origin, line, msg);

        match lines.find(|(_, l)| !l.trim().is_empty()) {
            Some((_, l)) if l.trim() == "%" => {}
            Some((n, _)) => return Err(err(n, "expected opening \"%\"".into())),
            None => {
                return Err(Error::Dictionary(format!(
                    "{}: empty file",
                    origin.display()
                )))
            }
        }

        let mut categories = BTreeMap::new();
        let mut closed = false;
        for (n, line) in lines.by_ref() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line == "%" {
                closed = true;
                break;
            }
            let mut fields = line.split_whitespace();
            let (Some(id), Some(name), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(err(n, format!("expected \"id<TAB>name\", got {line:?}")));
            };
            let id: u32 = id
                .parse()
                .map_err(|_| err(n, format!("invalid category id {id:?}")))?;
            if categories.insert(id, name.to_string()).is_some() {
                return Err(err(n, format!("duplicate category id {id}")));
            }
        }
        if !closed {
            return Err(Error::Dictionary(format!(
                "{}: header is not closed by \"%\"",
                origin.display()
            )));
        }
        if categories.is_empty() {
            return Err(Error::Dictionary(format!(
                "{}: empty header",
                origin.display()
            )));
        }

        let mut literals: HashMap<String, BTreeSet<u32>> = HashMap::new();
        let mut wildcards: HashMap<String, BTreeSet<u32>> = HashMap::new();
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (pattern, ids) = line
                .split_once('\t')
                .ok_or_else(|| err(n, format!("expected \"pattern<TAB>ids\", got {line:?}")))?;
            let pattern = pattern.trim().to_lowercase();
            if pattern.is_empty() {
                return Err(err(n, "empty pattern".into()));
            }
            if pattern.contains(char::is_whitespace) {
                return Err(err(
                    n,
                    format!("multiword entry {pattern:?} is not supported"),
                ));
            }
            let stem = pattern.strip_suffix('*');
            let body = stem.unwrap_or(&pattern);
            if body.is_empty() || body.contains('*') {
                return Err(err(
                    n,
                    format!("wildcard must be the final character: {pattern:?}"),
                ));
            }
            let mut set = BTreeSet::new();
            for id in ids.split_whitespace() {
                let id: u32 = id
                    .parse()
                    .map_err(|_| err(n, format!("invalid category id {id:?}")))?;
                if !categories.contains_key(&id) {
                    return Err(err(n, format!("unknown category id {id}")));
                }
                set.insert(id);
            }
            if set.is_empty() {
                return Err(err(n, format!("entry {pattern:?} lists no categories")));
            }
            let table = if stem.is_some() {
                &mut wildcards
            } else {
                &mut literals
            };
            table.entry(body.to_string()).or_default().extend(set);
        }

        Ok(CategoryDictionary {
            categories,
            literals,
            wildcards,
            excluded: DEFAULT_EXCLUDED.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn with_excluded<I, S>(mut self, excluded: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.excluded = excluded.into_iter().map(Into::into).collect();
        self
    }

    pub fn excluded(&self) -> &BTreeSet<String> {
        &self.excluded
    }

    pub fn category_names(&self) -> impl Iterator<Item = &str> {
        self.categories.values().map(String::as_str)
    }

    /// Every category that is not excluded, in id order.
    pub fn analyzable_categories(&self) -> Vec<String> {
        self.categories
            .values()
            .filter(|name| !is_excluded(&self.excluded, name))
            .cloned()
            .collect()
    }

    /// Non-excluded categories with at least one dictionary entry.
    pub fn populated_categories(&self) -> Vec<String> {
        let used: BTreeSet<u32> = self
            .literals
            .values()
            .chain(self.wildcards.values())
            .flatten()
            .copied()
            .collect();
        self.categories
            .iter()
            .filter(|(id, name)| used.contains(id) && !is_excluded(&self.excluded, name))
            .map(|(_, name)| name.clone())
            .collect()
    }

    /// Adds one entry (same syntax as a dictionary line body).
    pub fn add_entry(&mut self, pattern: &str, ids: &[u32]) -> Result<()> {
        for id in ids {
            if !self.categories.contains_key(id) {
                return Err(Error::Dictionary(format!("unknown category id {id}")));
            }
        }
        let pattern = pattern.to_lowercase();
        let (table, key) = match pattern.strip_suffix('*') {
            Some(stem) => (&mut self.wildcards, stem.to_string()),
            None => (&mut self.literals, pattern),
        };
        table.entry(key).or_default().extend(ids.iter().copied());
        Ok(())
    }

    /// Category names of `token`, minus the excluded ones.
    pub fn tag_token(&self, token: &str) -> BTreeSet<String> {
        let token = token.to_lowercase();
        let mut ids = BTreeSet::new();
        if let Some(set) = self.literals.get(&token) {
            ids.extend(set);
        }
        if !self.wildcards.is_empty() {
            for (end, ch) in token.char_indices() {
                let prefix = &token[..end + ch.len_utf8()];
                if let Some(set) = self.wildcards.get(prefix) {
                    ids.extend(set);
                }
            }
        }
        ids.into_iter()
            .map(|id| &self.categories[&id])
            .filter(|name| !is_excluded(&self.excluded, name))
            .cloned()
            .collect()
    }
}

pub fn parse_dictionary(path: &Path) -> Result<CategoryDictionary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    CategoryDictionary::parse_str(&text, path)
}

/// One token occurrence with its attribution and categories.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenRecord {
    pub doc_id: String,
    pub position: usize,
    pub surface: String,
    pub attribution: f64,
    pub categories: BTreeSet<String>,
    pub doc_label: Label,
}

pub fn tag_corpus(
    attributed: &AttributedCorpus,
    dict: &CategoryDictionary,
) -> Result<Vec<TokenRecord>> {
    let mut cache: HashMap<&str, BTreeSet<String>> = HashMap::new();
    let mut records = Vec::new();
    for doc in &attributed.documents {
        if doc.tokens.len() != doc.attributions.len() {
            return Err(Error::Shape(format!(
                "document {:?}: {} tokens, {} attributions",
                doc.id,
                doc.tokens.len(),
                doc.attributions.len()
            )));
        }
        for (position, (surface, &attribution)) in
            doc.tokens.iter().zip(&doc.attributions).enumerate()
        {
            if !attribution.is_finite() {
                return Err(Error::NonFinite("token attribution"));
            }
            let categories = cache
                .entry(surface.as_str())
                .or_insert_with(|| dict.tag_token(surface))
                .clone();
            records.push(TokenRecord {
                doc_id: doc.id.clone(),
                position,
                surface: surface.clone(),
                attribution,
                categories,
                doc_label: doc.label,
            });
        }
    }
    Ok(records)
}
