//! Text normalization, vocabulary construction and token-id encoding.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense vocabulary identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TermId(pub u32);

impl TermId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TermId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Reduces an already lowercased token to a stem.
pub trait Stemmer: Send + Sync {
    fn stem(&self, token: &str) -> String;
}

/// The "S" stemmer: strips English plural endings and nothing else.
#[derive(Debug, Clone, Copy, Default)]
pub struct PluralStemmer;

impl Stemmer for PluralStemmer {
    fn stem(&self, token: &str) -> String {
        if token.len() > 3
            && token.ends_with("ies")
            && !token.ends_with("eies")
            && !token.ends_with("aies")
        {
            return format!("{}y", &token[..token.len() - 3]);
        }
        if token.len() > 2
            && token.ends_with("es")
            && !token.ends_with("aes")
            && !token.ends_with("ees")
            && !token.ends_with("oes")
        {
            return token[..token.len() - 1].to_string();
        }
        if token.len() > 1 && token.ends_with('s') && !token.ends_with("us") && !token.ends_with("ss")
        {
            return token[..token.len() - 1].to_string();
        }
        token.to_string()
    }
}

/// Settings for [`tokenize`]. The default applies no stemming.
#[derive(Default)]
pub struct Normalizer {
    pub stemmer: Option<Box<dyn Stemmer>>,
}

impl Normalizer {
    pub fn with_stemmer(stemmer: impl Stemmer + 'static) -> Self {
        Self {
            stemmer: Some(Box::new(stemmer)),
        }
    }

    /// Looks up a stemmer by its configuration name (`none` or `plural`).
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "none" | "" => Ok(Self::default()),
            "plural" | "s" => Ok(Self::with_stemmer(PluralStemmer)),
            other => Err(Error::Config(format!("unknown stemmer `{other}`"))),
        }
    }
}

impl fmt::Debug for Normalizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Normalizer")
            .field("stemmer", &self.stemmer.is_some())
            .finish()
    }
}

/// Lowercases, splits on whitespace and trims non-alphanumeric characters
/// from both ends of every token. Empty tokens are dropped.
pub fn tokenize(text: &str, normalizer: &Normalizer) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
            if trimmed.is_empty() {
                return None;
            }
            let lower = trimmed.to_lowercase();
            Some(match &normalizer.stemmer {
                Some(stemmer) => stemmer.stem(&lower),
                None => lower,
            })
        })
        .collect()
}

/// Which count the `min_freq` threshold applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FreqMode {
    /// Total number of occurrences in the corpus.
    #[default]
    Corpus,
    /// Number of documents containing the term.
    Document,
}

impl std::str::FromStr for FreqMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corpus" => Ok(FreqMode::Corpus),
            "document" | "doc" => Ok(FreqMode::Document),
            other => Err(Error::Config(format!("unknown frequency mode `{other}`"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    terms: Vec<String>,
    doc_freq: Vec<u32>,
    num_docs: usize,
    stopwords: BTreeSet<String>,
    min_freq: u32,
    freq_mode: FreqMode,
}

/// Term dictionary with document-frequency statistics. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    terms: Vec<String>,
    term_to_id: HashMap<String, TermId>,
    doc_freq: Vec<u32>,
    num_docs: usize,
    stopwords: BTreeSet<String>,
    min_freq: u32,
    freq_mode: FreqMode,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(repr: VocabularyRepr) -> Self {
        let term_to_id = repr
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), TermId(i as u32)))
            .collect();
        Self {
            terms: repr.terms,
            term_to_id,
            doc_freq: repr.doc_freq,
            num_docs: repr.num_docs,
            stopwords: repr.stopwords,
            min_freq: repr.min_freq,
            freq_mode: repr.freq_mode,
        }
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        Self {
            terms: v.terms,
            doc_freq: v.doc_freq,
            num_docs: v.num_docs,
            stopwords: v.stopwords,
            min_freq: v.min_freq,
            freq_mode: v.freq_mode,
        }
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn min_freq(&self) -> u32 {
        self.min_freq
    }

    pub fn freq_mode(&self) -> FreqMode {
        self.freq_mode
    }

    pub fn id(&self, term: &str) -> Option<TermId> {
        self.term_to_id.get(term).copied()
    }

    pub fn term(&self, id: TermId) -> &str {
        &self.terms[id.index()]
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn doc_freq(&self, id: TermId) -> u32 {
        self.doc_freq[id.index()]
    }

    pub fn is_stopword(&self, term: &str) -> bool {
        self.stopwords.contains(term)
    }

    /// Smoothed inverse document frequency `ln((N + 1) / (df + 1))`.
    /// Out-of-vocabulary terms (`None`) use `df = 0`.
    pub fn idf(&self, id: Option<TermId>) -> f64 {
        let df = id.map_or(0, |id| self.doc_freq(id));
        idf_from_counts(self.num_docs, df as usize)
    }

    /// Maps surface tokens to ids, dropping anything not in the vocabulary.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TermId> {
        tokens.iter().filter_map(|t| self.id(t.as_ref())).collect()
    }
}

pub fn idf_from_counts(num_docs: usize, doc_freq: usize) -> f64 {
    ((num_docs as f64 + 1.0) / (doc_freq as f64 + 1.0)).ln()
}

/// Builds a vocabulary from tokenized documents.
///
/// Ids are assigned in order of first appearance over the corpus, so a fixed
/// document order always yields the same vocabulary.
pub fn build_vocabulary<I, D, S>(
    docs: I,
    stopwords: &BTreeSet<String>,
    min_freq: u32,
    freq_mode: FreqMode,
) -> Result<Vocabulary>
where
    I: IntoIterator<Item = D>,
    D: AsRef<[S]>,
    S: AsRef<str>,
{
    if min_freq == 0 {
        return Err(Error::Config("min_freq must be at least 1".into()));
    }
    let mut order: Vec<String> = Vec::new();
    let mut stats: HashMap<String, (u64, u32, usize)> = HashMap::new();
    let mut num_docs = 0usize;
    for doc in docs {
        for tok in doc.as_ref() {
            let tok = tok.as_ref();
            if stopwords.contains(tok) {
                continue;
            }
            match stats.get_mut(tok) {
                Some(entry) => {
                    entry.0 += 1;
                    if entry.2 != num_docs {
                        entry.1 += 1;
                        entry.2 = num_docs;
                    }
                }
                None => {
                    order.push(tok.to_string());
                    stats.insert(tok.to_string(), (1, 1, num_docs));
                }
            }
        }
        num_docs += 1;
    }
    if num_docs == 0 {
        return Err(Error::EmptyCorpus);
    }

    let mut terms = Vec::new();
    let mut doc_freq = Vec::new();
    let mut term_to_id = HashMap::new();
    for term in order {
        let (cf, df, _) = stats[&term];
        let freq = match freq_mode {
            FreqMode::Corpus => cf,
            FreqMode::Document => df as u64,
        };
        if freq < min_freq as u64 {
            continue;
        }
        term_to_id.insert(term.clone(), TermId(terms.len() as u32));
        terms.push(term);
        doc_freq.push(df);
    }
    Ok(Vocabulary {
        terms,
        term_to_id,
        doc_freq,
        num_docs,
        stopwords: stopwords.clone(),
        min_freq,
        freq_mode,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDoc {
    pub doc_id: String,
    pub tokens: Vec<TermId>,
    /// Token count before vocabulary filtering.
    pub raw_length: usize,
}

impl TokenizedDoc {
    pub fn encode<S: AsRef<str>>(doc_id: impl Into<String>, tokens: &[S], vocab: &Vocabulary) -> Self {
        Self {
            doc_id: doc_id.into(),
            tokens: vocab.encode(tokens),
            raw_length: tokens.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// One query position. `id` is `None` when the term is outside the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTerm {
    pub surface: String,
    pub id: Option<TermId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub terms: Vec<QueryTerm>,
    /// idf aligned with `terms`.
    pub idf: Vec<f64>,
}

impl Query {
    /// Stopwords are removed; other out-of-vocabulary terms stay in place with
    /// `df = 0` so the query length is not silently changed.
    pub fn encode<S: AsRef<str>>(query_id: impl Into<String>, tokens: &[S], vocab: &Vocabulary) -> Self {
        let mut terms = Vec::new();
        let mut idf = Vec::new();
        for tok in tokens {
            let tok = tok.as_ref();
            if vocab.is_stopword(tok) {
                continue;
            }
            let id = vocab.id(tok);
            idf.push(vocab.idf(id));
            terms.push(QueryTerm {
                surface: tok.to_string(),
                id,
            });
        }
        Self {
            query_id: query_id.into(),
            terms,
            idf,
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = Option<TermId>> + '_ {
        self.terms.iter().map(|t| t.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDoc {
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawQuery {
    pub query_id: String,
    pub text: String,
}

fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufReader::new(file))
}

/// Reads `{"doc_id": ..., "text": ...}` JSON lines. Blank lines are skipped.
pub fn read_corpus_jsonl(path: &Path) -> Result<Vec<RawDoc>> {
    parse_corpus_jsonl(open(path)?, &path.display().to_string())
}

pub fn parse_corpus_jsonl(reader: impl BufRead, source: &str) -> Result<Vec<RawDoc>> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::parse(source, i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: RawDoc =
            serde_json::from_str(&line).map_err(|e| Error::parse(source, i + 1, e.to_string()))?;
        docs.push(doc);
    }
    Ok(docs)
}

/// Reads `query_id<TAB>title text` lines.
pub fn read_queries_tsv(path: &Path) -> Result<Vec<RawQuery>> {
    parse_queries_tsv(open(path)?, &path.display().to_string())
}

pub fn parse_queries_tsv(reader: impl BufRead, source: &str) -> Result<Vec<RawQuery>> {
    let mut queries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::parse(source, i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(source, i + 1, "expected `query_id<TAB>text`"))?;
        let id = id.trim();
        if id.is_empty() {
            return Err(Error::parse(source, i + 1, "empty query id"));
        }
        queries.push(RawQuery {
            query_id: id.to_string(),
            text: text.to_string(),
        });
    }
    Ok(queries)
}

pub fn default_stopwords() -> BTreeSet<String> {
    parse_stopwords(include_str!("../resources/stopwords.txt"))
}

pub fn parse_stopwords(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn read_stopwords(path: &Path) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_stopwords(&text))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn tokenize_examples() {
        let n = Normalizer::default();
        assert_eq!(tokenize("Melanoma, Treated!", &n), vec!["melanoma", "treated"]);
        assert!(tokenize("", &n).is_empty());
        assert_eq!(tokenize("a  b\tc", &n), vec!["a", "b", "c"]);
        assert_eq!(tokenize("-- zzz-unknown ...", &n), vec!["zzz-unknown"]);
    }

    #[test]
    fn plural_stemmer() {
        let n = Normalizer::with_stemmer(PluralStemmer);
        assert_eq!(
            tokenize("Queries horses glass cats status", &n),
            vec!["query", "horse", "glass", "cat", "status"]
        );
    }

    #[test]
    fn min_freq_uses_corpus_frequency() {
        let docs = vec![toks(&["a", "a", "b"]), toks(&["a", "c"])];
        let v = build_vocabulary(&docs, &BTreeSet::new(), 2, FreqMode::Corpus).unwrap();
        assert_eq!(v.terms(), &["a".to_string()]);
        assert_eq!(v.doc_freq(v.id("a").unwrap()), 2);
        assert_eq!(v.num_docs(), 2);
    }

    #[test]
    fn document_frequency_mode() {
        let docs = vec![toks(&["a", "a", "b"]), toks(&["b", "c"])];
        let v = build_vocabulary(&docs, &BTreeSet::new(), 2, FreqMode::Document).unwrap();
        assert_eq!(v.terms(), &["b".to_string()]);
    }

    #[test]
    fn stopwords_removed() {
        let docs = vec![toks(&["the", "x", "x"])];
        let stop = parse_stopwords("the\n");
        let v = build_vocabulary(&docs, &stop, 1, FreqMode::Corpus).unwrap();
        assert_eq!(v.terms(), &["x".to_string()]);
        assert_eq!(v.doc_freq(TermId(0)), 1);
    }

    #[test]
    fn full_occurrence() {
        let docs = vec![toks(&["a"]), toks(&["a"]), toks(&["a"])];
        let v = build_vocabulary(&docs, &BTreeSet::new(), 1, FreqMode::Corpus).unwrap();
        assert_eq!(v.num_docs(), 3);
        assert_eq!(v.doc_freq(TermId(0)), 3);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let docs: Vec<Vec<String>> = vec![];
        assert!(matches!(
            build_vocabulary(&docs, &BTreeSet::new(), 1, FreqMode::Corpus),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn first_appearance_order() {
        let docs = vec![toks(&["z", "y"]), toks(&["x", "z"])];
        let v = build_vocabulary(&docs, &BTreeSet::new(), 1, FreqMode::Corpus).unwrap();
        assert_eq!(v.terms(), &["z", "y", "x"]);
    }

    #[test]
    fn idf_values() {
        assert!((idf_from_counts(100, 9) - (101.0f64 / 10.0).ln()).abs() < 1e-15);
        assert!((idf_from_counts(100, 9) - 2.3126).abs() < 1e-4);
        assert_eq!(idf_from_counts(100, 100), 0.0);
        assert!((idf_from_counts(100, 0) - 4.6151).abs() < 1e-4);
    }

    #[test]
    fn encode_drops_oov_and_keeps_duplicates() {
        let docs = vec![toks(&["melanoma", "treat", "a"])];
        let v = build_vocabulary(&docs, &BTreeSet::new(), 1, FreqMode::Corpus).unwrap();
        let ids = v.encode(&["melanoma", "zzz-unknown", "treat"]);
        assert_eq!(ids, vec![v.id("melanoma").unwrap(), v.id("treat").unwrap()]);
        assert!(v.encode::<&str>(&[]).is_empty());
        let a = v.id("a").unwrap();
        assert_eq!(v.encode(&["a", "a"]), vec![a, a]);
    }

    #[test]
    fn query_keeps_oov_terms() {
        let docs = vec![toks(&["melanoma", "treat"])];
        let v = build_vocabulary(&docs, &parse_stopwords("of"), 1, FreqMode::Corpus).unwrap();
        let q = Query::encode("q1", &["treat", "of", "unknownterm"], &v);
        assert_eq!(q.len(), 2);
        assert_eq!(q.terms[1].id, None);
        assert!((q.idf[1] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(q.idf[0], 0.0);
    }

    #[test]
    fn vocabulary_serde_round_trip() {
        let docs = vec![toks(&["b", "a", "b"])];
        let v = build_vocabulary(&docs, &parse_stopwords("the"), 1, FreqMode::Corpus).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
        assert_eq!(back.id("a"), Some(TermId(1)));
    }

    #[test]
    fn parse_inputs() {
        let corpus = "{\"doc_id\":\"d1\",\"text\":\"hello\"}\n\n{\"doc_id\":\"d2\",\"text\":\"x\"}\n";
        let docs = parse_corpus_jsonl(corpus.as_bytes(), "c").unwrap();
        assert_eq!(docs.len(), 2);
        let err = parse_corpus_jsonl("{\"doc_id\":1}\n".as_bytes(), "c").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));

        let q = parse_queries_tsv("301\tmelanoma treatment\n".as_bytes(), "q").unwrap();
        assert_eq!(q[0].query_id, "301");
        assert_eq!(q[0].text, "melanoma treatment");
        assert!(parse_queries_tsv("301 no tab\n".as_bytes(), "q").is_err());
    }

    #[test]
    fn default_stopwords_loaded() {
        let s = default_stopwords();
        assert!(s.contains("the"));
        assert!(!s.contains("melanoma"));
    }
}
