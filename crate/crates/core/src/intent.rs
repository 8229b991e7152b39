//! Turning free-text requests into preference categories and hard constraints.
//!
//! The default [`RuleBasedExtractor`] matches whole words against a
//! [`KeywordTable`] and recognizes three constraint phrases:
//!
//! | phrase              | constraint                      |
//! |---------------------|---------------------------------|
//! | `under $X[/unit]`   | maximum price `X` (per kWh unless `/min` is given) |
//! | `within Y km`       | maximum distance `Y` km         |
//! | `at least Z kW`     | minimum power `Z` kW            |
//!
//! Numbers that do not sit inside one of these phrases are ignored.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::category::PreferenceCategory;
use crate::station::{Price, PriceUnit};

const DEFAULT_TABLE: &str = include_str!("../data/keywords.txt");

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConstraintError {
    #[error("maximum distance {0} km must be positive and finite")]
    Distance(f64),
    #[error("maximum price {0} must be positive and finite")]
    Price(f64),
    #[error("a price cap cannot use the `free` unit")]
    FreeCap,
    #[error("minimum power {0} kW must be positive and finite")]
    Power(f64),
}

/// Hard feasibility bounds. Absent bounds filter nothing.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConstraintSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_distance_km: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_price: Option<Price>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_power_kw: Option<f64>,
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

impl ConstraintSet {
    pub fn is_empty(&self) -> bool {
        self.max_distance_km.is_none() && self.max_price.is_none() && self.min_power_kw.is_none()
    }

    pub fn validate(&self) -> Result<(), ConstraintError> {
        if let Some(d) = self.max_distance_km {
            if !positive(d) {
                return Err(ConstraintError::Distance(d));
            }
        }
        if let Some(p) = self.max_price {
            if p.unit() == PriceUnit::Free {
                return Err(ConstraintError::FreeCap);
            }
            if !positive(p.amount()) {
                return Err(ConstraintError::Price(p.amount()));
            }
        }
        if let Some(c) = self.min_power_kw {
            if !positive(c) {
                return Err(ConstraintError::Power(c));
            }
        }
        Ok(())
    }
}

/// A parsed user request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    /// The request exactly as received.
    pub raw_text: String,
    /// Recognized categories in order of first mention, without duplicates.
    pub intents: Vec<PreferenceCategory>,
    pub constraints: ConstraintSet,
}

/// What an extractor backend returns before it is checked and deduplicated.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Extraction {
    pub intents: Vec<PreferenceCategory>,
    pub constraints: ConstraintSet,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExtractorError {
    #[error("intent extractor unavailable: {0}")]
    Unavailable(String),
    #[error("intent extractor returned an invalid response: {0}")]
    InvalidResponse(String),
}

/// A backend that recognizes intents and constraints in a request.
pub trait IntentExtractor: Send + Sync {
    fn extract(&self, text: &str) -> Result<Extraction, ExtractorError>;
}

/// Runs `extractor` over `raw_text` and checks its output.
pub fn extract_intents(
    raw_text: &str,
    extractor: &dyn IntentExtractor,
) -> Result<Query, ExtractorError> {
    let extraction = extractor.extract(raw_text)?;
    extraction
        .constraints
        .validate()
        .map_err(|e| ExtractorError::InvalidResponse(e.to_string()))?;
    let mut intents = Vec::with_capacity(4);
    for c in extraction.intents {
        if !intents.contains(&c) {
            intents.push(c);
        }
    }
    Ok(Query {
        raw_text: raw_text.to_string(),
        intents,
        constraints: extraction.constraints,
    })
}

/// Uses `primary`, falling back to the rule-based extractor on any failure.
///
/// The flag is `true` when the fallback produced the query.
pub fn extract_with_fallback(
    raw_text: &str,
    primary: &dyn IntentExtractor,
    fallback: &RuleBasedExtractor,
) -> (Query, bool) {
    match extract_intents(raw_text, primary) {
        Ok(q) => (q, false),
        Err(_) => {
            let q =
                extract_intents(raw_text, fallback).expect("rule-based extraction is infallible");
            (q, true)
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("keyword table line {line}: {message}")]
pub struct KeywordTableError {
    pub line: usize,
    pub message: String,
}

/// Keyword to category mappings, matched on whole lowercase words.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordTable {
    // Sorted longest phrase first so multi-word keywords win.
    entries: Vec<(Vec<String>, PreferenceCategory)>,
}

impl KeywordTable {
    /// Parses `keyword -> Category` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, KeywordTableError> {
        let mut entries: Vec<(Vec<String>, PreferenceCategory)> = Vec::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let err = |message: &str| KeywordTableError {
                line: line_no,
                message: message.to_string(),
            };
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (keyword, category) = line
                .split_once("->")
                .ok_or_else(|| err("expected `keyword -> Category`"))?;
            let category: PreferenceCategory =
                category.parse().map_err(|_| err("unknown category"))?;
            let tokens = tokenize(keyword);
            let mut words = Vec::with_capacity(tokens.len());
            for t in tokens {
                match t {
                    Token::Word(w) => words.push(w),
                    _ => return Err(err("keywords may only contain letters")),
                }
            }
            if words.is_empty() {
                return Err(err("empty keyword"));
            }
            match entries.iter().find(|(w, _)| *w == words) {
                Some((_, existing)) if *existing != category => {
                    return Err(err("keyword mapped to two categories"))
                }
                Some(_) => {}
                None => entries.push((words, category)),
            }
        }
        entries.sort_by_key(|e| core::cmp::Reverse(e.0.len()));
        Ok(KeywordTable { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn match_at(&self, tokens: &[Token], at: usize) -> Option<(PreferenceCategory, usize)> {
        self.entries.iter().find_map(|(words, category)| {
            let window = tokens.get(at..at + words.len())?;
            let hit = window
                .iter()
                .zip(words)
                .all(|(t, w)| matches!(t, Token::Word(tw) if tw == w));
            hit.then_some((*category, words.len()))
        })
    }
}

impl Default for KeywordTable {
    fn default() -> Self {
        KeywordTable::parse(DEFAULT_TABLE).expect("bundled keyword table is valid")
    }
}

/// Deterministic keyword and phrase matcher.
#[derive(Debug, Clone, Default)]
pub struct RuleBasedExtractor {
    table: KeywordTable,
}

impl RuleBasedExtractor {
    pub fn new(table: KeywordTable) -> Self {
        RuleBasedExtractor { table }
    }

    pub fn table(&self) -> &KeywordTable {
        &self.table
    }

    fn scan(&self, text: &str) -> Extraction {
        let tokens = tokenize(text);
        let mut out = Extraction::default();
        let mention = |c: PreferenceCategory, intents: &mut Vec<PreferenceCategory>| {
            if !intents.contains(&c) {
                intents.push(c);
            }
        };

        let mut i = 0;
        while i < tokens.len() {
            if let Some((amount, unit, used)) = price_cap(&tokens[i..]) {
                if let Ok(cap) = Price::new(amount, unit) {
                    if positive(amount) {
                        out.constraints.max_price = Some(cap);
                    }
                }
                mention(PreferenceCategory::Price, &mut out.intents);
                i += used;
                continue;
            }
            if let Some((km, used)) = distance_cap(&tokens[i..]) {
                if positive(km) {
                    out.constraints.max_distance_km = Some(km);
                }
                mention(PreferenceCategory::Distance, &mut out.intents);
                i += used;
                continue;
            }
            if let Some((kw, used)) = power_floor(&tokens[i..]) {
                if positive(kw) {
                    out.constraints.min_power_kw = Some(kw);
                }
                mention(PreferenceCategory::Power, &mut out.intents);
                i += used;
                continue;
            }
            if let Some((category, used)) = self.table.match_at(&tokens, i) {
                mention(category, &mut out.intents);
                i += used;
                continue;
            }
            i += 1;
        }
        out
    }
}

impl IntentExtractor for RuleBasedExtractor {
    fn extract(&self, text: &str) -> Result<Extraction, ExtractorError> {
        Ok(self.scan(text))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Word(String),
    Number(f64),
    Dollar,
    Slash,
}

fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_alphabetic() {
            let start = i;
            while i < chars.len() && chars[i].is_alphabetic() {
                i += 1;
            }
            let word: String = chars[start..i]
                .iter()
                .flat_map(|c| c.to_lowercase())
                .collect();
            tokens.push(Token::Word(word));
        } else if c.is_ascii_digit()
            || (c == '.' && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit()))
        {
            let start = i;
            let mut seen_dot = false;
            while i < chars.len() {
                let ch = chars[i];
                if ch.is_ascii_digit() {
                    i += 1;
                } else if ch == '.'
                    && !seen_dot
                    && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit())
                {
                    seen_dot = true;
                    i += 1;
                } else {
                    break;
                }
            }
            let literal: String = chars[start..i].iter().collect();
            if let Ok(v) = literal.parse::<f64>() {
                tokens.push(Token::Number(v));
            }
        } else {
            match c {
                '$' => tokens.push(Token::Dollar),
                '/' => tokens.push(Token::Slash),
                _ => {}
            }
            i += 1;
        }
    }
    tokens
}

fn is_word(t: Option<&Token>, options: &[&str]) -> bool {
    matches!(t, Some(Token::Word(w)) if options.contains(&w.as_str()))
}

// `under $X`, `under $X/kWh`, `under $X/min`; `below` works too.
fn price_cap(tokens: &[Token]) -> Option<(f64, PriceUnit, usize)> {
    if !is_word(tokens.first(), &["under", "below"]) || tokens.get(1) != Some(&Token::Dollar) {
        return None;
    }
    let Some(Token::Number(amount)) = tokens.get(2) else {
        return None;
    };
    if tokens.get(3) == Some(&Token::Slash) {
        if is_word(tokens.get(4), &["kwh"]) {
            return Some((*amount, PriceUnit::PerKwh, 5));
        }
        if is_word(tokens.get(4), &["min", "minute"]) {
            return Some((*amount, PriceUnit::PerMinute, 5));
        }
    }
    Some((*amount, PriceUnit::PerKwh, 3))
}

// `within Y km`
fn distance_cap(tokens: &[Token]) -> Option<(f64, usize)> {
    if !is_word(tokens.first(), &["within"]) {
        return None;
    }
    let Some(Token::Number(km)) = tokens.get(1) else {
        return None;
    };
    is_word(tokens.get(2), &["km", "kilometers", "kilometres"]).then_some((*km, 3))
}

// `at least Z kW`
fn power_floor(tokens: &[Token]) -> Option<(f64, usize)> {
    if !is_word(tokens.first(), &["at"]) || !is_word(tokens.get(1), &["least"]) {
        return None;
    }
    let Some(Token::Number(kw)) = tokens.get(2) else {
        return None;
    };
    is_word(tokens.get(3), &["kw"]).then_some((*kw, 4))
}
