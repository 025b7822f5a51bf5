// SPDX-License-Identifier: MIT OR Apache-2.0

//! Political statement data model.
//!
//! Four fixed dimensions, each split into a left and a right concept, each
//! with a list of topics. A [`Statement`] is one labeled text; a
//! [`StatementSet`] is an immutable collection of them. The [`Taxonomy`]
//! holds the configurable parts (topics, keyword families, chat wrappers)
//! and can be loaded from JSON.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Eco,
    Dip,
    Civil,
    Soc,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [Dimension::Eco, Dimension::Dip, Dimension::Civil, Dimension::Soc];

    pub fn id(self) -> &'static str {
        match self {
            Dimension::Eco => "eco",
            Dimension::Dip => "dip",
            Dimension::Civil => "civil",
            Dimension::Soc => "soc",
        }
    }

    /// Display name used in dimension hints ("Economic", ...).
    pub fn name(self) -> &'static str {
        match self {
            Dimension::Eco => "Economic",
            Dimension::Dip => "Diplomatic",
            Dimension::Civil => "Civil",
            Dimension::Soc => "Society",
        }
    }

    pub fn left_concept(self) -> &'static str {
        match self {
            Dimension::Eco => "Equality",
            Dimension::Dip => "Globe",
            Dimension::Civil => "Liberty",
            Dimension::Soc => "Progress",
        }
    }

    pub fn right_concept(self) -> &'static str {
        match self {
            Dimension::Eco => "Market",
            Dimension::Dip => "Nation",
            Dimension::Civil => "Authority",
            Dimension::Soc => "Tradition",
        }
    }

    pub fn concept(self, leaning: Leaning) -> &'static str {
        match leaning {
            Leaning::Left => self.left_concept(),
            Leaning::Right => self.right_concept(),
        }
    }

    /// Binary code used by the ACTV container.
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "eco" => Ok(Dimension::Eco),
            "dip" => Ok(Dimension::Dip),
            "civil" => Ok(Dimension::Civil),
            "soc" => Ok(Dimension::Soc),
            other => Err(format!("unknown dimension `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Leaning {
    Left,
    Right,
}

impl Leaning {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Leaning::Left),
            1 => Some(Leaning::Right),
            _ => None,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Leaning::Left => Leaning::Right,
            Leaning::Right => Leaning::Left,
        }
    }
}

impl fmt::Display for Leaning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Leaning::Left => "left",
            Leaning::Right => "right",
        })
    }
}

impl FromStr for Leaning {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" | "l" => Ok(Leaning::Left),
            "right" | "r" => Ok(Leaning::Right),
            other => Err(format!("unknown leaning `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Ood,
}

impl Split {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Split::Train),
            1 => Some(Split::Test),
            2 => Some(Split::Ood),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Ood => "ood",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "ood" => Ok(Split::Ood),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

// ---------------------------------------------------------------------------
// Taxonomy
// ---------------------------------------------------------------------------

/// Configurable description of one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSpec {
    pub id: Dimension,
    pub topics: Vec<String>,
    pub left_keywords: Vec<String>,
    pub right_keywords: Vec<String>,
}

impl DimensionSpec {
    pub fn keywords(&self, leaning: Leaning) -> &[String] {
        match leaning {
            Leaning::Left => &self.left_keywords,
            Leaning::Right => &self.right_keywords,
        }
    }
}

/// A chat template: the composed prompt is placed between `prefix` and `suffix`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatWrapper {
    pub prefix: String,
    pub suffix: String,
}

impl ChatWrapper {
    pub fn wrap(&self, prompt: &str) -> String {
        format!("{}{}{}", self.prefix, prompt, self.suffix)
    }
}

/// Dimensions, topics, keyword families and chat wrappers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub dimensions: Vec<DimensionSpec>,
    pub wrappers: BTreeMap<String, ChatWrapper>,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for Taxonomy {
    fn default() -> Self {
        let dimensions = vec![
            DimensionSpec {
                id: Dimension::Eco,
                topics: strings(&["economy and jobs", "taxes", "banking and finance"]),
                left_keywords: strings(&[
                    "progressive tax",
                    "regulation",
                    "planned economy",
                    "wealth redistribution",
                    "public ownership",
                    "social welfare",
                ]),
                right_keywords: strings(&[
                    "flat tax",
                    "deregulation",
                    "laissez-faire",
                    "wealth accumulation",
                    "free enterprise",
                    "privatization",
                ]),
            },
            DimensionSpec {
                id: Dimension::Dip,
                topics: strings(&["world", "immigration", "foreign policy", "politics"]),
                left_keywords: strings(&[
                    "world government",
                    "immigration",
                    "diplomacy",
                    "globalist",
                    "international cooperation",
                    "foreign aid",
                ]),
                right_keywords: strings(&[
                    "sovereignty",
                    "border control",
                    "military strength",
                    "nationalist",
                    "national interest",
                    "tariffs",
                ]),
            },
            DimensionSpec {
                id: Dimension::Civil,
                topics: strings(&["civil rights", "voting rights", "gun", "abortion", "free speech"]),
                left_keywords: strings(&[
                    "checks and balances",
                    "autonomy",
                    "free expression",
                    "privacy",
                    "due process",
                    "civil liberties",
                ]),
                right_keywords: strings(&[
                    "centralization",
                    "regulation",
                    "censorship",
                    "surveillance",
                    "law and order",
                    "state control",
                ]),
            },
            DimensionSpec {
                id: Dimension::Soc,
                topics: strings(&["technology", "religion and faith", "education", "culture", "LGBTQ"]),
                left_keywords: strings(&[
                    "reason",
                    "development",
                    "scientific",
                    "technology",
                    "diversity",
                    "reform",
                ]),
                right_keywords: strings(&[
                    "moral",
                    "status quo",
                    "religion",
                    "natural",
                    "family values",
                    "heritage",
                ]),
            },
        ];

        let mut wrappers = BTreeMap::new();
        wrappers.insert(
            "llama3".to_string(),
            ChatWrapper {
                prefix: "<|begin_of_text|><|start_header_id|>user<|end_header_id|>\n\n".into(),
                suffix: "<|eot_id|><|start_header_id|>assistant<|end_header_id|>\n\n".into(),
            },
        );
        wrappers.insert(
            "gemma".to_string(),
            ChatWrapper {
                prefix: "<start_of_turn>user\n".into(),
                suffix: "<end_of_turn>\n<start_of_turn>model\n".into(),
            },
        );
        wrappers.insert(
            "qwen".to_string(),
            ChatWrapper {
                prefix: "<|im_start|>user\n".into(),
                suffix: "<|im_end|>\n<|im_start|>assistant\n".into(),
            },
        );
        wrappers.insert(
            "mistral".to_string(),
            ChatWrapper {
                prefix: "[INST] ".into(),
                suffix: " [/INST]".into(),
            },
        );

        Taxonomy { dimensions, wrappers }
    }
}

impl Taxonomy {
    pub fn from_json(text: &str) -> Result<Self> {
        let tax: Taxonomy = serde_json::from_str(text)?;
        tax.validate()?;
        Ok(tax)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Exactly one spec per dimension, each with at least one topic and keyword per side.
    pub fn validate(&self) -> Result<()> {
        for dim in Dimension::ALL {
            let n = self.dimensions.iter().filter(|d| d.id == dim).count();
            if n != 1 {
                return Err(Error::InvalidArgument(format!(
                    "taxonomy must define dimension `{dim}` exactly once (found {n})"
                )));
            }
        }
        if self.dimensions.len() != 4 {
            return Err(Error::InvalidArgument("taxonomy must define exactly four dimensions".into()));
        }
        for d in &self.dimensions {
            if d.topics.is_empty() || d.left_keywords.is_empty() || d.right_keywords.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "dimension `{}` needs topics and keywords on both sides",
                    d.id
                )));
            }
        }
        Ok(())
    }

    pub fn dimension(&self, id: Dimension) -> &DimensionSpec {
        self.dimensions
            .iter()
            .find(|d| d.id == id)
            .expect("validated taxonomy defines every dimension")
    }

    pub fn has_topic(&self, id: Dimension, topic: &str) -> bool {
        self.dimension(id).topics.iter().any(|t| t == topic)
    }

    pub fn wrapper(&self, id: &str) -> Result<&ChatWrapper> {
        self.wrappers.get(id).ok_or_else(|| Error::UnknownWrapper(id.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Statements
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub text: String,
    pub dimension: Dimension,
    pub leaning: Leaning,
    pub topic: String,
    pub split: Split,
}

/// Immutable, ordered collection of statements. Indices into it are the
/// `statement_ref` values carried by activation records.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StatementSet {
    statements: Vec<Statement>,
}

impl StatementSet {
    /// Builds a set, checking every statement against `taxonomy`.
    pub fn new(statements: Vec<Statement>, taxonomy: &Taxonomy) -> Result<Self> {
        for (i, s) in statements.iter().enumerate() {
            check_statement(s, taxonomy).map_err(|reason| Error::Parse { row: i + 1, reason })?;
        }
        Ok(Self { statements })
    }

    pub fn len(&self) -> usize {
        self.statements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Statement> {
        self.statements.get(i)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Statement> {
        self.statements.iter()
    }

    pub fn as_slice(&self) -> &[Statement] {
        &self.statements
    }

    /// Counts per (dimension, leaning, split).
    pub fn histogram(&self) -> BTreeMap<(Dimension, Leaning, Split), usize> {
        let mut h = BTreeMap::new();
        for s in &self.statements {
            *h.entry((s.dimension, s.leaning, s.split)).or_insert(0) += 1;
        }
        h
    }

    /// A new set holding only the statements for which `keep` is true.
    pub fn filtered(&self, keep: impl Fn(&Statement) -> bool) -> StatementSet {
        StatementSet {
            statements: self.statements.iter().filter(|s| keep(s)).cloned().collect(),
        }
    }
}

impl<'a> IntoIterator for &'a StatementSet {
    type Item = &'a Statement;
    type IntoIter = std::slice::Iter<'a, Statement>;

    fn into_iter(self) -> Self::IntoIter {
        self.statements.iter()
    }
}

fn check_statement(s: &Statement, taxonomy: &Taxonomy) -> std::result::Result<(), String> {
    if s.text.trim().is_empty() {
        return Err("empty text".into());
    }
    if !taxonomy.has_topic(s.dimension, &s.topic) {
        return Err(format!("topic `{}` is not listed for dimension `{}`", s.topic, s.dimension));
    }
    Ok(())
}

const CSV_COLUMNS: [&str; 5] = ["text", "dimension", "leaning", "topic", "split"];

/// Reads statements from CSV with columns `text,dimension,leaning,topic,split`
/// (any order; extra columns ignored). Row numbers in errors count data rows from 1.
pub fn read_statements<R: Read>(reader: R, taxonomy: &Taxonomy) -> Result<StatementSet> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::EmptyFile);
    }
    let mut index = [0usize; 5];
    for (slot, name) in index.iter_mut().zip(CSV_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Parse {
                row: 0,
                reason: format!("missing column `{name}`"),
            })?;
    }

    let mut statements = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse { row, reason: e.to_string() })?;
        let field = |k: usize| record.get(index[k]).unwrap_or("");
        let parse_err = |reason: String| Error::Parse { row, reason };
        let statement = Statement {
            text: field(0).to_string(),
            dimension: field(1).parse().map_err(parse_err)?,
            leaning: field(2).parse().map_err(parse_err)?,
            topic: field(3).trim().to_string(),
            split: field(4).parse().map_err(parse_err)?,
        };
        check_statement(&statement, taxonomy).map_err(parse_err)?;
        statements.push(statement);
    }
    if statements.is_empty() {
        return Err(Error::EmptyFile);
    }
    Ok(StatementSet { statements })
}

pub fn load_statements(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<StatementSet> {
    let file = std::fs::File::open(path)?;
    read_statements(std::io::BufReader::new(file), taxonomy)
}

/// Writes the normalized CSV form: fixed column order, lowercase labels.
pub fn write_statements<W: Write>(set: &StatementSet, writer: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    wtr.write_record(CSV_COLUMNS)?;
    for s in set {
        wtr.write_record([
            s.text.as_str(),
            s.dimension.id(),
            &s.leaning.to_string(),
            s.topic.as_str(),
            &s.split.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_statements(set: &StatementSet, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_statements(set, std::io::BufWriter::new(file))
}

// ---------------------------------------------------------------------------
// Synthetic statements
// ---------------------------------------------------------------------------

const SUBJECTS: [&str; 5] = ["we", "the government", "our leaders", "citizens", "lawmakers"];

const PATTERNS: [&str; 4] = [
    "on {topic} , {subject} should embrace {kw1} and {kw2} .",
    "when it comes to {topic} , {kw1} is the right path and {kw2} must follow .",
    "{subject} believe that {topic} needs more {kw1} , not less {kw2} .",
    "for {topic} , the answer is {kw1} together with {kw2} .",
];

/// Template-stitched statements: for every (dimension, topic) cell,
/// `per_cell` left and `per_cell` right statements, each combining two
/// keywords of its side's family with the topic. Output is train-split;
/// use [`split`] to assign held-out statements.
pub fn synth_statements(seed: u64, per_cell: usize, taxonomy: &Taxonomy) -> Result<StatementSet> {
    if per_cell == 0 {
        return Err(Error::InvalidArgument("per_cell must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut statements = Vec::new();
    for dim in Dimension::ALL {
        let spec = taxonomy.dimension(dim);
        for topic in &spec.topics {
            for leaning in [Leaning::Left, Leaning::Right] {
                let keywords = spec.keywords(leaning);
                for _ in 0..per_cell {
                    let pattern = PATTERNS.choose(&mut rng).expect("non-empty");
                    let subject = SUBJECTS.choose(&mut rng).expect("non-empty");
                    let picks: Vec<&String> = keywords.choose_multiple(&mut rng, 2).collect();
                    let kw1 = picks[0];
                    let kw2 = picks.get(1).copied().unwrap_or(kw1);
                    let text = pattern
                        .replace("{topic}", topic)
                        .replace("{subject}", subject)
                        .replace("{kw1}", kw1)
                        .replace("{kw2}", kw2);
                    statements.push(Statement {
                        text,
                        dimension: dim,
                        leaning,
                        topic: topic.clone(),
                        split: Split::Train,
                    });
                }
            }
        }
    }
    Ok(StatementSet { statements })
}

// ---------------------------------------------------------------------------
// Prompt templates
// ---------------------------------------------------------------------------

/// Instruction module.
pub const P0_INSTRUCTION: &str = "Guess the opinion leaning";
/// Dimension hint module; `{dimension}`, `{left}` and `{right}` are filled per statement.
pub const P1_DIMENSION_HINT: &str = "from {dimension} [{left}], [{right}].";
/// Completion cue module.
pub const P2_CUE: &str = "The leaning is";

/// Prompt modules composed around a statement in the fixed order
/// P0, P1, statement, P2, then wrapped in an optional chat template.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p1: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p2: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chat_wrapper: Option<String>,
}

impl PromptTemplate {
    /// The statement alone.
    pub fn base() -> Self {
        Self::default()
    }

    /// All three modules, no wrapper.
    pub fn full() -> Self {
        Self {
            p0: Some(P0_INSTRUCTION.into()),
            p1: Some(P1_DIMENSION_HINT.into()),
            p2: Some(P2_CUE.into()),
            chat_wrapper: None,
        }
    }

    /// Template used for detection vectors: statement followed by the cue.
    pub fn detection() -> Self {
        Self {
            p2: Some(P2_CUE.into()),
            ..Self::default()
        }
    }

    pub fn with_wrapper(mut self, id: impl Into<String>) -> Self {
        self.chat_wrapper = Some(id.into());
        self
    }

    /// Short stable hash of the template, for provenance records.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("template serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

fn fill_hint(hint: &str, dim: Dimension) -> String {
    hint.replace("{dimension}", dim.name())
        .replace("{left}", &dim.left_concept().to_uppercase())
        .replace("{right}", &dim.right_concept().to_uppercase())
}

/// Composes `P0 P1 text P2` (single spaces, absent or empty modules skipped)
/// and applies the chat wrapper.
pub fn compose_prompt(stmt: &Statement, tpl: &PromptTemplate, taxonomy: &Taxonomy) -> Result<String> {
    let hint = tpl.p1.as_deref().map(|h| fill_hint(h, stmt.dimension));
    let parts = [tpl.p0.as_deref(), hint.as_deref(), Some(stmt.text.as_str()), tpl.p2.as_deref()];
    let composed = parts
        .into_iter()
        .flatten()
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join(" ");
    match &tpl.chat_wrapper {
        None => Ok(composed),
        Some(id) => Ok(taxonomy.wrapper(id)?.wrap(&composed)),
    }
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

/// Stratified train/test assignment per (dimension, leaning). OOD statements
/// keep their split. Each stratum gets `round(n · test_fraction)` test rows.
pub fn split(set: &StatementSet, test_fraction: f64, seed: u64) -> Result<StatementSet> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut strata: BTreeMap<(Dimension, Leaning), Vec<usize>> = BTreeMap::new();
    for (i, s) in set.iter().enumerate() {
        if s.split != Split::Ood {
            strata.entry((s.dimension, s.leaning)).or_default().push(i);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = set.statements.clone();
    for ((dimension, leaning), mut members) in strata {
        let n = members.len();
        let n_test = (n as f64 * test_fraction).round() as usize;
        if n_test == 0 || n_test >= n {
            return Err(Error::TooFewStatements { dimension, leaning });
        }
        members.shuffle(&mut rng);
        for (k, &i) in members.iter().enumerate() {
            out[i].split = if k < n_test { Split::Test } else { Split::Train };
        }
    }
    Ok(StatementSet { statements: out })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stmt(text: &str, dim: Dimension, leaning: Leaning, topic: &str) -> Statement {
        Statement {
            text: text.into(),
            dimension: dim,
            leaning,
            topic: topic.into(),
            split: Split::Train,
        }
    }

    #[test]
    fn default_taxonomy_is_valid() {
        let tax = Taxonomy::default();
        tax.validate().unwrap();
        assert_eq!(tax.dimension(Dimension::Eco).topics.len(), 3);
        assert_eq!(tax.dimension(Dimension::Dip).topics.len(), 4);
        assert_eq!(tax.dimension(Dimension::Civil).topics.len(), 5);
        assert_eq!(tax.dimension(Dimension::Soc).topics.len(), 5);
        let json = serde_json::to_string(&tax).unwrap();
        assert_eq!(Taxonomy::from_json(&json).unwrap(), tax);
    }

    #[test]
    fn taxonomy_rejects_missing_dimension() {
        let mut tax = Taxonomy::default();
        tax.dimensions.pop();
        assert!(tax.validate().is_err());
    }

    #[test]
    fn read_small_file() {
        let csv = "text,dimension,leaning,topic,split\n\
                   Tax the rich.,eco,left,taxes,train\n\
                   Cut taxes.,eco,right,taxes,test\n\
                   Open borders.,dip,Left,immigration,train\n\
                   Guard the border.,dip,R,immigration,ood\n";
        let set = read_statements(csv.as_bytes(), &Taxonomy::default()).unwrap();
        assert_eq!(set.len(), 4);
        assert_eq!(set.get(2).unwrap().leaning, Leaning::Left);
        assert_eq!(set.get(3).unwrap().split, Split::Ood);
    }

    #[test]
    fn unknown_dimension_names_row() {
        let csv = "text,dimension,leaning,topic,split\n\
                   Tax the rich.,eco,left,taxes,train\n\
                   Something.,foo,left,taxes,train\n";
        match read_statements(csv.as_bytes(), &Taxonomy::default()) {
            Err(Error::Parse { row, reason }) => {
                assert_eq!(row, 2);
                assert!(reason.contains("foo"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_topic_and_empty_text_rejected() {
        let tax = Taxonomy::default();
        let bad_topic = "text,dimension,leaning,topic,split\nx,eco,left,gun,train\n";
        assert!(matches!(read_statements(bad_topic.as_bytes(), &tax), Err(Error::Parse { row: 1, .. })));
        let empty_text = "text,dimension,leaning,topic,split\n\"\",eco,left,taxes,train\n";
        assert!(matches!(read_statements(empty_text.as_bytes(), &tax), Err(Error::Parse { row: 1, .. })));
    }

    #[test]
    fn empty_inputs() {
        let tax = Taxonomy::default();
        assert!(matches!(read_statements("".as_bytes(), &tax), Err(Error::EmptyFile)));
        let header_only = "text,dimension,leaning,topic,split\n";
        assert!(matches!(read_statements(header_only.as_bytes(), &tax), Err(Error::EmptyFile)));
        let missing = "text,dimension,leaning\nx,eco,left\n";
        assert!(matches!(read_statements(missing.as_bytes(), &tax), Err(Error::Parse { row: 0, .. })));
    }

    #[test]
    fn synth_counts() {
        let tax = Taxonomy::default();
        let set = synth_statements(42, 2, &tax).unwrap();
        let eco: Vec<_> = set.iter().filter(|s| s.dimension == Dimension::Eco).collect();
        assert_eq!(eco.len(), 12);
        assert_eq!(eco.iter().filter(|s| s.leaning == Leaning::Left).count(), 6);
        assert_eq!(eco.iter().filter(|s| s.leaning == Leaning::Right).count(), 6);
        assert_eq!(set.len(), 2 * 2 * (3 + 4 + 5 + 5));
        assert!(synth_statements(1, 0, &tax).is_err());
    }

    #[test]
    fn synth_deterministic_and_seed_sensitive() {
        let tax = Taxonomy::default();
        let a = synth_statements(42, 3, &tax).unwrap();
        let b = synth_statements(42, 3, &tax).unwrap();
        let c = synth_statements(43, 3, &tax).unwrap();
        assert_eq!(a, b);
        assert_ne!(
            a.iter().map(|s| &s.text).collect::<Vec<_>>(),
            c.iter().map(|s| &s.text).collect::<Vec<_>>()
        );
        assert_eq!(a.histogram(), c.histogram());
    }

    #[test]
    fn synth_balanced_per_cell() {
        let tax = Taxonomy::default();
        let set = synth_statements(9, 4, &tax).unwrap();
        let mut cells: BTreeMap<(Dimension, String), (usize, usize)> = BTreeMap::new();
        for s in &set {
            let e = cells.entry((s.dimension, s.topic.clone())).or_default();
            match s.leaning {
                Leaning::Left => e.0 += 1,
                Leaning::Right => e.1 += 1,
            }
        }
        assert_eq!(cells.len(), 17);
        assert!(cells.values().all(|&(l, r)| l == 4 && r == 4));
    }

    #[test]
    fn compose_identity() {
        let tax = Taxonomy::default();
        let s = stmt("Tax the rich.", Dimension::Eco, Leaning::Left, "taxes");
        assert_eq!(compose_prompt(&s, &PromptTemplate::base(), &tax).unwrap(), "Tax the rich.");
        let empty = PromptTemplate {
            p0: Some(String::new()),
            p1: Some(String::new()),
            p2: Some(String::new()),
            chat_wrapper: None,
        };
        assert_eq!(compose_prompt(&s, &empty, &tax).unwrap(), "Tax the rich.");
    }

    #[test]
    fn compose_all_modules() {
        let tax = Taxonomy::default();
        let s = stmt("<base>", Dimension::Eco, Leaning::Left, "taxes");
        assert_eq!(
            compose_prompt(&s, &PromptTemplate::full(), &tax).unwrap(),
            "Guess the opinion leaning from Economic [EQUALITY], [MARKET]. <base> The leaning is"
        );
        let civil = stmt("<base>", Dimension::Civil, Leaning::Right, "gun");
        assert_eq!(
            compose_prompt(&civil, &PromptTemplate::full(), &tax).unwrap(),
            "Guess the opinion leaning from Civil [LIBERTY], [AUTHORITY]. <base> The leaning is"
        );
    }

    #[test]
    fn compose_wrappers() {
        let tax = Taxonomy::default();
        let s = stmt("<composed>", Dimension::Eco, Leaning::Left, "taxes");
        let inst = PromptTemplate::base().with_wrapper("mistral");
        assert_eq!(compose_prompt(&s, &inst, &tax).unwrap(), "[INST] <composed> [/INST]");
        for (id, tag) in [
            ("llama3", "<|begin_of_text|>"),
            ("gemma", "<start_of_turn>"),
            ("qwen", "<|im_start|>"),
            ("mistral", "[INST]"),
        ] {
            let out = compose_prompt(&s, &PromptTemplate::base().with_wrapper(id), &tax).unwrap();
            assert!(out.starts_with(tag), "{id}: {out}");
        }
        let bad = PromptTemplate::base().with_wrapper("nope");
        assert!(matches!(compose_prompt(&s, &bad, &tax), Err(Error::UnknownWrapper(w)) if w == "nope"));
    }

    fn balanced(n_per_stratum: usize) -> StatementSet {
        let tax = Taxonomy::default();
        let mut v = Vec::new();
        for dim in Dimension::ALL {
            let topic = tax.dimension(dim).topics[0].clone();
            for leaning in [Leaning::Left, Leaning::Right] {
                for i in 0..n_per_stratum {
                    v.push(Statement {
                        text: format!("s{i}"),
                        dimension: dim,
                        leaning,
                        topic: topic.clone(),
                        split: Split::Train,
                    });
                }
            }
        }
        StatementSet::new(v, &tax).unwrap()
    }

    #[test]
    fn split_is_stratified() {
        let set = balanced(25).filtered(|s| matches!(s.dimension, Dimension::Eco | Dimension::Dip));
        assert_eq!(set.len(), 100);
        let out = split(&set, 0.2, 7).unwrap();
        let h = out.histogram();
        assert_eq!(h.values().sum::<usize>(), 100);
        for dim in [Dimension::Eco, Dimension::Dip] {
            for leaning in [Leaning::Left, Leaning::Right] {
                assert_eq!(h[&(dim, leaning, Split::Train)], 20);
                assert_eq!(h[&(dim, leaning, Split::Test)], 5);
            }
        }
        assert_eq!(out.iter().filter(|s| s.split == Split::Test).count(), 20);
        assert_eq!(split(&set, 0.2, 7).unwrap(), out);
    }

    #[test]
    fn split_keeps_ood_and_rejects_tiny_strata() {
        let mut set = balanced(10);
        set.statements[0].split = Split::Ood;
        let out = split(&set, 0.3, 1).unwrap();
        assert_eq!(out.get(0).unwrap().split, Split::Ood);

        let tiny = balanced(1);
        assert!(matches!(split(&tiny, 0.5, 1), Err(Error::TooFewStatements { .. })));
        assert!(split(&tiny, 0.0, 1).is_err());
    }
}
