//! Tokenization and TF-IDF topic extraction.
//!
//! Topics are single terms mined from the corpus: every user with at least
//! one tweet contributes one document (their tweets concatenated), terms are
//! scored by their best tf-idf over documents, and the top `n_topics` terms
//! become the topic vocabulary.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use crate::corpus::TweetRecord;
use crate::error::{Error, Result};

/// English stopwords, stored with apostrophes removed to match tokenizer
/// output (`don't` tokenizes to `dont`).
const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "ain", "all", "am", "an", "and", "any",
    "are", "aren", "arent", "as", "at", "be", "because", "been", "before", "being", "below",
    "between", "both", "but", "by", "can", "couldn", "couldnt", "d", "did", "didn", "didnt", "do",
    "does", "doesn", "doesnt", "doing", "don", "dont", "down", "during", "each", "few", "for",
    "from", "further", "had", "hadn", "hadnt", "has", "hasn", "hasnt", "have", "haven", "havent",
    "having", "he", "her", "here", "hers", "herself", "him", "himself", "his", "how", "i", "if",
    "in", "into", "is", "isn", "isnt", "it", "its", "itself", "just", "ll", "m", "ma", "me",
    "mightn", "mightnt", "more", "most", "mustn", "mustnt", "my", "myself", "needn", "neednt",
    "no", "nor", "not", "now", "o", "of", "off", "on", "once", "only", "or", "other", "our",
    "ours", "ourselves", "out", "over", "own", "re", "s", "same", "shan", "shant", "she", "shes",
    "should", "shouldn", "shouldnt", "shouldve", "so", "some", "such", "t", "than", "that",
    "thatll", "the", "their", "theirs", "them", "themselves", "then", "there", "these", "they",
    "this", "those", "through", "to", "too", "under", "until", "up", "ve", "very", "was", "wasn",
    "wasnt", "we", "were", "weren", "werent", "what", "when", "where", "which", "while", "who",
    "whom", "why", "will", "with", "won", "wont", "wouldn", "wouldnt", "y", "you", "youd",
    "youll", "your", "youre", "yours", "yourself", "yourselves", "youve",
];

fn stopword_set() -> &'static BTreeSet<&'static str> {
    static SET: OnceLock<BTreeSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOPWORDS.iter().copied().collect())
}

pub fn is_stopword(token: &str) -> bool {
    stopword_set().contains(token)
}

fn is_url(token: &str) -> bool {
    token.starts_with("http://") || token.starts_with("https://") || token.starts_with("www.")
}

/// Normalize one whitespace-delimited word; `None` when it is filtered out.
///
/// URLs and @-mentions are dropped whole; a leading `#` is stripped so
/// hashtags count as ordinary terms; punctuation is removed (so a token
/// that was pure punctuation vanishes); stopwords are dropped.
fn normalize_token(word: &str) -> Option<String> {
    if is_url(word) || word.starts_with('@') {
        return None;
    }
    let word = word.strip_prefix('#').unwrap_or(word);
    let cleaned: String = word
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(|c| c.to_lowercase())
        .collect();
    if cleaned.is_empty() || is_stopword(&cleaned) {
        return None;
    }
    Some(cleaned)
}

/// Split raw text on whitespace and normalize each word.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().filter_map(normalize_token).collect()
}

/// Tokens for a tweet: a supplied token list is normalized per token, raw
/// text is tokenized from scratch.
pub fn tweet_tokens(tweet: &TweetRecord) -> Vec<String> {
    match &tweet.tokens {
        Some(toks) => toks.iter().filter_map(|t| normalize_token(t)).collect(),
        None => tokenize(&tweet.text),
    }
}

/// Inverse document frequency: `ln(n_docs / (1 + df)) + 1`.
pub fn idf(n_docs: usize, df: usize) -> f64 {
    (n_docs as f64 / (1.0 + df as f64)).ln() + 1.0
}

/// Which extraction algorithm builds the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    TfIdf,
}

/// Vocabulary-extraction settings.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicExtractorSpec {
    pub kind: ExtractorKind,
    /// Number of topics to keep (`t`).
    pub n_topics: usize,
}

impl Default for TopicExtractorSpec {
    fn default() -> Self {
        Self {
            kind: ExtractorKind::TfIdf,
            n_topics: 100,
        }
    }
}

/// An ordered topic vocabulary with the score each term was selected at.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    pub terms: Vec<String>,
    pub scores: Vec<f64>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn new(terms: Vec<String>, scores: Vec<f64>) -> Self {
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            terms,
            scores,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }
}

/// Group tweets into per-user documents (one token stream per user), keyed
/// and ordered by user id. Users without tweets contribute no document.
pub fn user_documents(tweets: &[TweetRecord]) -> BTreeMap<String, Vec<String>> {
    let mut docs: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for t in tweets {
        docs.entry(t.user_id.clone())
            .or_default()
            .extend(tweet_tokens(t));
    }
    docs.retain(|_, toks| !toks.is_empty());
    docs
}

/// Score every term by its maximum tf-idf over documents and keep the top
/// `n_topics`, breaking score ties lexicographically.
pub fn build_vocabulary(docs: &BTreeMap<String, Vec<String>>, spec: &TopicExtractorSpec) -> Result<Vocabulary> {
    if spec.n_topics == 0 {
        return Err(Error::Config("n_topics must be positive".into()));
    }
    match spec.kind {
        ExtractorKind::TfIdf => {}
    }
    let n_docs = docs.len();
    // document frequency and best term frequency per term
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    let mut best_tf: BTreeMap<&str, f64> = BTreeMap::new();
    for tokens in docs.values() {
        let len = tokens.len() as f64;
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for tok in tokens {
            *counts.entry(tok.as_str()).or_insert(0) += 1;
        }
        for (term, count) in counts {
            *df.entry(term).or_insert(0) += 1;
            let tf = count as f64 / len;
            let slot = best_tf.entry(term).or_insert(0.0);
            if tf > *slot {
                *slot = tf;
            }
        }
    }
    if df.len() < spec.n_topics {
        return Err(Error::VocabularyTooSmall {
            requested: spec.n_topics,
            achievable: df.len(),
        });
    }
    let mut scored: Vec<(&str, f64)> = df
        .iter()
        .map(|(&term, &d)| (term, best_tf[term] * idf(n_docs, d)))
        .collect();
    // descending score, ascending term on ties; scores are finite by
    // construction so the comparison is total
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(b.0)));
    scored.truncate(spec.n_topics);
    let terms = scored.iter().map(|(t, _)| t.to_string()).collect();
    let scores = scored.iter().map(|&(_, s)| s).collect();
    Ok(Vocabulary::new(terms, scores))
}

/// Fraction of the user's tweets that mention each topic term at least once.
/// Zero tweets yields an all-zero row.
pub fn topic_fractions(user_tweets: &[TweetRecord], vocab: &Vocabulary) -> Vec<f64> {
    let mut hits = vec![0u32; vocab.len()];
    if user_tweets.is_empty() {
        return vec![0.0; vocab.len()];
    }
    for tweet in user_tweets {
        let mut seen: BTreeSet<usize> = BTreeSet::new();
        for tok in tweet_tokens(tweet) {
            if let Some(j) = vocab.index_of(&tok) {
                seen.insert(j);
            }
        }
        for j in seen {
            hits[j] += 1;
        }
    }
    let n = user_tweets.len() as f64;
    hits.iter().map(|&h| f64::from(h) / n).collect()
}

/// Write `index,term,weight` rows in vocabulary order.
pub fn write_vocab_csv(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "index,term,weight").map_err(|e| Error::io(path, e))?;
    for (i, (term, score)) in vocab.terms.iter().zip(&vocab.scores).enumerate() {
        writeln!(w, "{i},{term},{score}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_vocab_csv(path: &Path) -> Result<Vocabulary> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: e.to_string(),
    })?;
    let mut terms = Vec::new();
    let mut scores = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            msg: e.to_string(),
        })?;
        let parse = |field: usize, what: &str| -> Result<&str> {
            rec.get(field).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: format!("missing {what} column"),
            })
        };
        let idx: usize = parse(0, "index")?.parse().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            msg: format!("bad index: {e}"),
        })?;
        if idx != i {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: format!("index column out of order: expected {i}, found {idx}"),
            });
        }
        terms.push(parse(1, "term")?.to_string());
        scores.push(parse(2, "weight")?.parse().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            msg: format!("bad weight: {e}"),
        })?);
    }
    if terms.is_empty() {
        return Err(Error::validation(
            format!("{path:?}"),
            "vocabulary file has no rows",
        ));
    }
    Ok(Vocabulary::new(terms, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn tokenize_strips_urls_mentions_stopwords() {
        let got = tokenize("Check https://t.co/x THIS out @bob");
        assert_eq!(got, vec!["check".to_string()]);
    }

    #[test]
    fn tokenize_strips_hashtag_prefix_only() {
        let got = tokenize("#Election election");
        assert_eq!(got, vec!["election".to_string(), "election".to_string()]);
    }

    #[test]
    fn tokenize_drops_pure_punctuation() {
        let got = tokenize("wow -- !!! ... (yes)");
        assert_eq!(got, vec!["wow".to_string(), "yes".to_string()]);
    }

    #[test]
    fn tokenize_handles_apostrophe_stopwords() {
        // "don't" collapses to "dont", which is on the stopword list
        let got = tokenize("Don't panic, it's fine");
        assert_eq!(got, vec!["panic".to_string(), "fine".to_string()]);
    }

    #[test]
    fn tokenize_empty_and_whitespace() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("   \t\n ").is_empty());
    }

    #[test]
    fn idf_prefers_rare_terms() {
        let rare = idf(100, 1);
        let common = idf(100, 90);
        assert!(rare > common);
        assert_relative_eq!(rare, (100.0f64 / 2.0).ln() + 1.0, epsilon = 1e-12);
        assert_relative_eq!(common, (100.0f64 / 91.0).ln() + 1.0, epsilon = 1e-12);
    }

    fn docs_fixture() -> BTreeMap<String, Vec<String>> {
        let mut docs = BTreeMap::new();
        let toks = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        docs.insert("d1".to_string(), toks(&["apple", "banana", "apple"]));
        docs.insert("d2".to_string(), toks(&["banana", "cherry"]));
        docs.insert("d3".to_string(), toks(&["apple", "cherry", "durian", "cherry"]));
        docs
    }

    #[test]
    fn tfidf_scores_match_hand_computation() {
        // m = 3 docs. df: apple 2, banana 2, cherry 2, durian 1.
        // idf(df=2) = ln(3/3)+1 = 1; idf(df=1) = ln(3/2)+1.
        // best tf: apple 2/3, banana 1/2, cherry 1/2, durian 1/4.
        let docs = docs_fixture();
        let spec = TopicExtractorSpec {
            kind: ExtractorKind::TfIdf,
            n_topics: 4,
        };
        let vocab = build_vocabulary(&docs, &spec).unwrap();
        assert_eq!(vocab.terms, vec!["apple", "banana", "cherry", "durian"]);
        assert_relative_eq!(vocab.scores[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(vocab.scores[1], 0.5, epsilon = 1e-12);
        assert_relative_eq!(vocab.scores[2], 0.5, epsilon = 1e-12);
        assert_relative_eq!(vocab.scores[3], 0.3513662770270411, epsilon = 1e-12);
    }

    #[test]
    fn tfidf_tie_break_is_lexicographic() {
        // banana and cherry tie at 0.5; banana must come first
        let docs = docs_fixture();
        let spec = TopicExtractorSpec {
            kind: ExtractorKind::TfIdf,
            n_topics: 3,
        };
        let vocab = build_vocabulary(&docs, &spec).unwrap();
        assert_eq!(vocab.terms, vec!["apple", "banana", "cherry"]);
    }

    #[test]
    fn tfidf_too_few_terms_is_an_error() {
        let docs = docs_fixture();
        let spec = TopicExtractorSpec {
            kind: ExtractorKind::TfIdf,
            n_topics: 5,
        };
        let err = build_vocabulary(&docs, &spec).unwrap_err();
        match err {
            Error::VocabularyTooSmall {
                requested,
                achievable,
            } => {
                assert_eq!(requested, 5);
                assert_eq!(achievable, 4);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn tfidf_deterministic() {
        let docs = docs_fixture();
        let spec = TopicExtractorSpec {
            n_topics: 4,
            ..TopicExtractorSpec::default()
        };
        let a = build_vocabulary(&docs, &spec).unwrap();
        let b = build_vocabulary(&docs, &spec).unwrap();
        assert_eq!(a.terms, b.terms);
        assert_eq!(a.scores, b.scores);
    }

    fn tweet(user: &str, id: &str, text: &str) -> TweetRecord {
        TweetRecord {
            tweet_id: id.to_string(),
            user_id: user.to_string(),
            day: 0,
            text: text.to_string(),
            tokens: None,
        }
    }

    #[test]
    fn topic_fractions_count_tweets_not_occurrences() {
        let vocab = Vocabulary::new(
            vec!["apple".into(), "banana".into()],
            vec![1.0, 0.5],
        );
        let tweets = vec![
            tweet("u1", "t1", "apple apple apple"), // hits apple once
            tweet("u1", "t2", "banana bread"),
            tweet("u1", "t3", "nothing relevant whatsoever"),
            tweet("u1", "t4", "apple pie"),
        ];
        let f = topic_fractions(&tweets, &vocab);
        assert_relative_eq!(f[0], 0.5, epsilon = 1e-12); // 2 of 4 tweets
        assert_relative_eq!(f[1], 0.25, epsilon = 1e-12); // 1 of 4 tweets
    }

    #[test]
    fn topic_fractions_zero_tweets_is_all_zero() {
        let vocab = Vocabulary::new(vec!["apple".into()], vec![1.0]);
        let f = topic_fractions(&[], &vocab);
        assert_eq!(f, vec![0.0]);
    }

    #[test]
    fn pretokenized_tweets_skip_text() {
        let t = TweetRecord {
            tweet_id: "t1".into(),
            user_id: "u1".into(),
            day: 0,
            text: String::new(),
            tokens: Some(vec!["Apple".into(), "@someone".into(), "the".into()]),
        };
        assert_eq!(tweet_tokens(&t), vec!["apple".to_string()]);
    }

    #[test]
    fn user_documents_groups_and_drops_empty() {
        let tweets = vec![
            tweet("u2", "t1", "banana split"),
            tweet("u1", "t2", "apple pie"),
            tweet("u1", "t3", "cherry tart"),
            tweet("u3", "t4", "@mention https://only.example"), // all filtered
        ];
        let docs = user_documents(&tweets);
        let keys: Vec<&String> = docs.keys().collect();
        assert_eq!(keys, vec!["u1", "u2"]);
        assert_eq!(docs["u1"], vec!["apple", "pie", "cherry", "tart"]);
    }

    #[test]
    fn vocab_csv_round_trip() {
        let vocab = Vocabulary::new(
            vec!["apple".into(), "banana".into()],
            vec![2.0 / 3.0, 0.5],
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.csv");
        write_vocab_csv(&path, &vocab).unwrap();
        let back = read_vocab_csv(&path).unwrap();
        assert_eq!(back.terms, vocab.terms);
        for (a, b) in back.scores.iter().zip(&vocab.scores) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        assert_eq!(back.index_of("banana"), Some(1));
    }
}
