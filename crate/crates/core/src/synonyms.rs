//! Entity-type synonym table used for augmentation and, optionally, as a
//! type equivalence in the matcher.

use std::collections::HashMap;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::corpus::normalize_type;

/// `(type, synonyms)` rows.
pub const SYNONYMS: &[(&str, &[&str])] = &[
    ("organization", &["org", "company", "firm", "corporation", "enterprise"]),
    ("date", &["a specific date"]),
    ("person", &["per", "human", "human being", "individual"]),
    ("number", &["digits"]),
    ("title", &["designation", "formal designation"]),
    ("duration", &["time period"]),
    ("misc", &["miscellaneous"]),
    ("country", &["nation", "state", "territory"]),
    ("location", &["place", "area", "geographic area", "loc"]),
    ("cause_of_death", &["date of demise", "cause of death", "death cause", "mortal cause"]),
    ("city", &["municipality", "town", "populated urban area"]),
    ("nationality", &["citizenship"]),
    ("ordinal", &["ranking"]),
    ("state_or_province", &["region", "territorial division within a country"]),
    ("percent", &["percentage"]),
    ("money", &["currency"]),
    ("set", &["collection", "group of items"]),
    ("ideology", &["doctrine", "system of ideas and ideals"]),
    ("criminal_charge", &["accusation", "formal allegation"]),
    ("time", &["period", "time period"]),
    ("religion", &["belief", "faith", "spiritual belief", "worshipper"]),
    ("url", &["web address"]),
    ("email", &["electronic mail"]),
    ("handle", &["username", "personal identifier"]),
];

/// A synonym table with a precomputed type → row lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct SynonymTable {
    rows: Vec<(String, Vec<String>)>,
    lookup: HashMap<String, usize>,
}

impl SynonymTable {
    /// Builds a table; a type listed in several rows belongs to the first.
    pub fn new(rows: Vec<(String, Vec<String>)>) -> Self {
        let mut lookup = HashMap::new();
        for (i, (key, syns)) in rows.iter().enumerate() {
            for t in std::iter::once(key).chain(syns) {
                lookup.entry(normalize_type(t)).or_insert(i);
            }
        }
        Self { rows, lookup }
    }

    pub fn rows(&self) -> &[(String, Vec<String>)] {
        &self.rows
    }

    pub fn row_of(&self, t: &str) -> Option<&(String, Vec<String>)> {
        self.lookup.get(&normalize_type(t)).map(|&i| &self.rows[i])
    }

    /// Representative of `t`'s synonym group (the normalized row key), or
    /// the normalized type itself when it is not in the table.
    pub fn canonical(&self, t: &str) -> String {
        match self.row_of(t) {
            Some((key, _)) => normalize_type(key),
            None => normalize_type(t),
        }
    }

    /// Replacement candidates for `t`: its row key and synonyms, minus `t`.
    pub fn candidates(&self, t: &str) -> Vec<&str> {
        let Some((key, syns)) = self.row_of(t) else {
            return Vec::new();
        };
        let n = normalize_type(t);
        std::iter::once(key)
            .chain(syns)
            .filter(|c| normalize_type(c) != n)
            .map(String::as_str)
            .collect()
    }
}

impl Default for SynonymTable {
    fn default() -> Self {
        Self::new(
            SYNONYMS
                .iter()
                .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
                .collect(),
        )
    }
}

impl Serialize for SynonymTable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SynonymTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Self::new(Vec::deserialize(d)?))
    }
}

static DEFAULT: LazyLock<SynonymTable> = LazyLock::new(SynonymTable::default);

/// [`SynonymTable::canonical`] over the default table.
pub fn canonical_type(t: &str) -> String {
    DEFAULT.canonical(t)
}

/// [`SynonymTable::candidates`] over the default table.
pub fn augment_candidates(t: &str) -> Vec<&'static str> {
    DEFAULT.candidates(t)
}
