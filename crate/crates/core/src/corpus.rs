//! Corpus ingestion, the unique-context trie and the entropy lower bound.
//!
//! A corpus is a list of documents over token ids `1..=omega`. Every proper
//! prefix of a document (including the empty prefix) is a *context*; the
//! trie stores each prefix with the number of documents that start with it.
//! All logarithms are natural.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::model::NextTokenModel;
use crate::{tix, Error, Result, Token};

/// Absolute tolerance on probability vectors summing to one.
pub const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerScheme {
    /// Split on whitespace only; case is preserved.
    Whitespace,
    /// Maximal alphanumeric runs and maximal punctuation runs, lowercased.
    WordPunct,
}

impl std::str::FromStr for TokenizerScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whitespace" => Ok(TokenizerScheme::Whitespace),
            "word-punct" | "wordpunct" => Ok(TokenizerScheme::WordPunct),
            other => Err(Error::Parse(format!("unknown tokenizer scheme `{other}`"))),
        }
    }
}

fn word_punct_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\w+|[^\w\s]+").expect("static regex"))
}

pub fn tokenize(text: &str, scheme: TokenizerScheme) -> Vec<String> {
    match scheme {
        TokenizerScheme::Whitespace => text.split_whitespace().map(str::to_owned).collect(),
        TokenizerScheme::WordPunct => word_punct_re()
            .find_iter(text)
            .map(|m| m.as_str().to_lowercase())
            .collect(),
    }
}

/// Bijection between token strings and ids `1..=omega`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, Token>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id(&self, token: &str) -> Option<Token> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: Token) -> Option<&str> {
        if id == 0 {
            return None;
        }
        self.id_to_token.get(tix(id)).map(String::as_str)
    }

    /// Returns the id of `token`, assigning the next free id on first sight.
    fn intern(&mut self, token: &str) -> Token {
        if let Some(&id) = self.token_to_id.get(token) {
            return id;
        }
        self.id_to_token.push(token.to_owned());
        let id = self.id_to_token.len() as Token;
        self.token_to_id.insert(token.to_owned(), id);
        id
    }

    /// JSON object `{token: id}`.
    pub fn to_json(&self) -> String {
        let map: BTreeMap<&str, Token> = self
            .token_to_id
            .iter()
            .map(|(k, &v)| (k.as_str(), v))
            .collect();
        serde_json::to_string_pretty(&map).expect("string map serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let map: BTreeMap<String, Token> = serde_json::from_str(s)?;
        let mut id_to_token = vec![String::new(); map.len()];
        for (tok, &id) in &map {
            if id == 0 || id as usize > map.len() || !id_to_token[tix(id)].is_empty() {
                return Err(Error::Parse(format!(
                    "vocabulary ids must be a permutation of 1..={}",
                    map.len()
                )));
            }
            id_to_token[tix(id)] = tok.clone();
        }
        Ok(Vocabulary {
            token_to_id: map.into_iter().collect(),
            id_to_token,
        })
    }
}

/// Documents over the token ids `1..=omega`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    docs: Vec<Vec<Token>>,
    omega: usize,
    max_len: usize,
}

impl Corpus {
    /// Validates ids against `omega`. Empty documents are rejected.
    pub fn new(docs: Vec<Vec<Token>>, omega: usize) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut max_len = 0;
        for doc in &docs {
            if doc.is_empty() {
                return Err(Error::InvalidArgument("corpus contains an empty document".into()));
            }
            for &t in doc {
                if t == 0 || t as usize > omega {
                    return Err(Error::TokenOutOfRange { token: t, omega });
                }
            }
            max_len = max_len.max(doc.len());
        }
        Ok(Corpus { docs, omega, max_len })
    }

    pub fn docs(&self) -> &[Vec<Token>] {
        &self.docs
    }

    pub fn omega(&self) -> usize {
        self.omega
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn num_tokens(&self) -> usize {
        self.docs.iter().map(Vec::len).sum()
    }

    /// The first `k` documents, as used for nested data subsets.
    pub fn prefix_subset(&self, k: usize) -> Result<Corpus> {
        Corpus::new(self.docs[..k.min(self.docs.len())].to_vec(), self.omega)
    }

    /// Documents as lines of space-joined ids.
    pub fn to_id_lines(&self) -> String {
        let mut out = String::new();
        for doc in &self.docs {
            let line: Vec<String> = doc.iter().map(u32::to_string).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    /// Parses lines of space-joined ids. `omega` defaults to the largest id seen.
    pub fn from_id_lines(text: &str, omega: Option<usize>) -> Result<Self> {
        let mut docs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let doc = line
                .split_whitespace()
                .map(|s| {
                    s.parse::<Token>()
                        .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            docs.push(doc);
        }
        let omega = match omega {
            Some(w) => w,
            None => docs.iter().flatten().copied().max().unwrap_or(0) as usize,
        };
        Corpus::new(docs, omega)
    }
}

/// Truncates each document to `truncate_len` tokens, then assigns ids by
/// first occurrence. Empty documents are dropped.
pub fn build_corpus(
    token_docs: &[Vec<String>],
    truncate_len: usize,
) -> Result<(Vocabulary, Corpus)> {
    if truncate_len == 0 {
        return Err(Error::InvalidArgument("truncate_len must be positive".into()));
    }
    let mut vocab = Vocabulary::default();
    let mut docs = Vec::new();
    for doc in token_docs {
        if doc.is_empty() {
            continue;
        }
        let ids: Vec<Token> = doc
            .iter()
            .take(truncate_len)
            .map(|t| vocab.intern(t))
            .collect();
        docs.push(ids);
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let corpus = Corpus::new(docs, vocab.size())?;
    Ok((vocab, corpus))
}

/// Reads a UTF-8 corpus file with one document per line.
pub fn read_text_corpus(
    path: &Path,
    scheme: TokenizerScheme,
    truncate_len: usize,
) -> Result<(Vocabulary, Corpus)> {
    let file = std::fs::File::open(path)?;
    let mut token_docs = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        token_docs.push(tokenize(&line?, scheme));
    }
    build_corpus(&token_docs, truncate_len)
}

#[derive(Debug, Clone)]
struct Node {
    count: usize,
    children: BTreeMap<Token, usize>,
}

/// Prefix tree of all document prefixes with occurrence counts.
///
/// A node's context is a *unique context* iff it has at least one child,
/// i.e. it is a proper prefix of some document.
#[derive(Debug, Clone)]
pub struct ContextTrie {
    nodes: Vec<Node>,
    omega: usize,
    n_contexts: usize,
}

/// One unique context with its counts, as consumed by training.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextEntry {
    pub context: Vec<Token>,
    /// `c(alpha)`: documents starting with the context.
    pub count: usize,
    /// `c(alpha, gamma)` for `gamma = 1..=omega`, dense.
    pub next_counts: Vec<usize>,
}

impl ContextEntry {
    /// Documents for which this context is a proper prefix.
    pub fn continuation_count(&self) -> usize {
        self.next_counts.iter().sum()
    }
}

const ROOT: usize = 0;

impl ContextTrie {
    pub fn build(corpus: &Corpus) -> Self {
        let mut nodes = vec![Node { count: 0, children: BTreeMap::new() }];
        for doc in corpus.docs() {
            let mut cur = ROOT;
            nodes[ROOT].count += 1;
            for &tok in doc {
                let next = match nodes[cur].children.get(&tok) {
                    Some(&ix) => ix,
                    None => {
                        nodes.push(Node { count: 0, children: BTreeMap::new() });
                        let ix = nodes.len() - 1;
                        nodes[cur].children.insert(tok, ix);
                        ix
                    }
                };
                nodes[next].count += 1;
                cur = next;
            }
        }
        let n_contexts = nodes.iter().filter(|n| !n.children.is_empty()).count();
        ContextTrie { nodes, omega: corpus.omega(), n_contexts }
    }

    pub fn omega(&self) -> usize {
        self.omega
    }

    /// Number of unique contexts `n`.
    pub fn n_contexts(&self) -> usize {
        self.n_contexts
    }

    pub fn num_docs(&self) -> usize {
        self.nodes[ROOT].count
    }

    fn find(&self, context: &[Token]) -> Option<usize> {
        let mut cur = ROOT;
        for tok in context {
            cur = *self.nodes[cur].children.get(tok)?;
        }
        Some(cur)
    }

    /// `c(alpha)`; zero for prefixes that never occur.
    pub fn count(&self, context: &[Token]) -> usize {
        self.find(context).map_or(0, |ix| self.nodes[ix].count)
    }

    /// Dense `c(alpha, gamma)` over `gamma = 1..=omega`.
    pub fn next_counts(&self, context: &[Token]) -> Vec<usize> {
        let mut out = vec![0; self.omega];
        if let Some(ix) = self.find(context) {
            for (&tok, &child) in &self.nodes[ix].children {
                out[tix(tok)] = self.nodes[child].count;
            }
        }
        out
    }

    pub fn is_context(&self, context: &[Token]) -> bool {
        self.find(context)
            .is_some_and(|ix| !self.nodes[ix].children.is_empty())
    }

    /// Unique contexts in depth-first order, children by ascending token.
    pub fn contexts(&self) -> Vec<ContextEntry> {
        let mut out = Vec::with_capacity(self.n_contexts);
        let mut path = Vec::new();
        self.collect(ROOT, &mut path, &mut out);
        out
    }

    fn collect(&self, ix: usize, path: &mut Vec<Token>, out: &mut Vec<ContextEntry>) {
        let node = &self.nodes[ix];
        if node.children.is_empty() {
            return;
        }
        let mut next_counts = vec![0; self.omega];
        for (&tok, &child) in &node.children {
            next_counts[tix(tok)] = self.nodes[child].count;
        }
        out.push(ContextEntry { context: path.clone(), count: node.count, next_counts });
        for (&tok, &child) in &node.children {
            path.push(tok);
            self.collect(child, path, out);
            path.pop();
        }
    }

    /// CSV export with columns `context` (space-joined ids) and `count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("context,count\n");
        for e in self.contexts() {
            let ctx: Vec<String> = e.context.iter().map(u32::to_string).collect();
            let _ = writeln!(out, "{},{}", ctx.join(" "), e.count);
        }
        out
    }
}

/// `p_hat(. | alpha)`: continuation counts normalised by the number of
/// documents that continue past `alpha`.
pub fn empirical_next_token(trie: &ContextTrie, context: &[Token]) -> Result<Vec<f64>> {
    let counts = trie.next_counts(context);
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::ContextUnseen(context.to_vec()));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// `p_hat` at every unique context.
#[derive(Debug, Clone, PartialEq)]
pub struct NextTokenTable {
    omega: usize,
    rows: BTreeMap<Vec<Token>, Vec<f64>>,
}

impl NextTokenTable {
    pub fn from_trie(trie: &ContextTrie) -> Self {
        let rows = trie
            .contexts()
            .into_iter()
            .map(|e| {
                let total = e.continuation_count() as f64;
                let row = e.next_counts.iter().map(|&c| c as f64 / total).collect();
                (e.context, row)
            })
            .collect();
        NextTokenTable { omega: trie.omega(), rows }
    }

    pub fn get(&self, context: &[Token]) -> Option<&[f64]> {
        self.rows.get(context).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<Token>, &Vec<f64>)> {
        self.rows.iter()
    }
}

impl NextTokenModel for NextTokenTable {
    fn omega(&self) -> usize {
        self.omega
    }

    fn predict(&self, context: &[Token]) -> Result<Vec<f64>> {
        self.rows
            .get(context)
            .cloned()
            .ok_or_else(|| Error::ContextUnseen(context.to_vec()))
    }
}

/// Cross-entropy of `model` over every token of every document, summed.
///
/// Evaluated document by document, position by position; predictions are
/// cached per context.
pub fn cross_entropy_loss<M: NextTokenModel + ?Sized>(corpus: &Corpus, model: &M) -> Result<f64> {
    let mut cache: HashMap<&[Token], Vec<f64>> = HashMap::new();
    let mut loss = 0.0;
    for doc in corpus.docs() {
        for t in 0..doc.len() {
            let ctx = &doc[..t];
            let q = match cache.get(ctx) {
                Some(q) => q,
                None => {
                    let q = model.predict(ctx)?;
                    cache.entry(ctx).or_insert(q)
                }
            };
            let p = q[tix(doc[t])];
            if p <= 0.0 {
                return Err(Error::InfiniteLoss { context: ctx.to_vec(), token: doc[t] });
            }
            loss -= p.ln();
        }
    }
    Ok(loss)
}

/// Shannon entropy in nats; `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

/// Weighted sum of next-token entropies, `sum_alpha c(alpha) H(p_hat(.|alpha))`,
/// where the weight is the continuation count of `alpha`.
pub fn entropy_lower_bound(trie: &ContextTrie) -> f64 {
    trie.contexts()
        .iter()
        .map(|e| {
            let total = e.continuation_count() as f64;
            let p: Vec<f64> = e.next_counts.iter().map(|&c| c as f64 / total).collect();
            total * entropy(&p)
        })
        .sum()
}

/// Writes the vocabulary as JSON and the context table as CSV.
pub fn export(vocab: &Vocabulary, trie: &ContextTrie, vocab_path: &Path, csv_path: &Path) -> Result<()> {
    std::fs::File::create(vocab_path)?.write_all(vocab.to_json().as_bytes())?;
    std::fs::File::create(csv_path)?.write_all(trie.to_csv().as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    pub(crate) fn toy() -> Corpus {
        Corpus::new(vec![vec![1, 2, 4], vec![1, 2, 5], vec![1, 3, 4]], 5).unwrap()
    }

    #[test]
    fn word_punct_splits_runs() {
        assert_eq!(
            tokenize("Dogs, run!", TokenizerScheme::WordPunct),
            strs(&["dogs", ",", "run", "!"])
        );
        assert_eq!(
            tokenize("wait...what?!", TokenizerScheme::WordPunct),
            strs(&["wait", "...", "what", "?!"])
        );
        assert!(tokenize("", TokenizerScheme::WordPunct).is_empty());
        assert_eq!(tokenize("a a a", TokenizerScheme::Whitespace), strs(&["a", "a", "a"]));
    }

    #[test]
    fn ids_by_first_occurrence() {
        let docs = vec![
            strs(&["i", "love", "cats"]),
            strs(&["i", "love", "dogs"]),
            strs(&["i", "hate", "cats"]),
        ];
        let (vocab, corpus) = build_corpus(&docs, 10).unwrap();
        assert_eq!(vocab.size(), 5);
        assert_eq!(corpus.docs(), &[vec![1, 2, 3], vec![1, 2, 4], vec![1, 5, 3]]);
        assert_eq!(vocab.id("hate"), Some(5));
        assert_eq!(vocab.token(4), Some("dogs"));
    }

    #[test]
    fn truncation_precedes_vocabulary() {
        let (vocab, corpus) = build_corpus(&[strs(&["a", "b", "c"])], 2).unwrap();
        assert_eq!(vocab.size(), 2);
        assert_eq!(corpus.docs(), &[vec![1, 2]]);
        let (vocab, corpus) = build_corpus(&[strs(&["x"])], 10).unwrap();
        assert_eq!((vocab.size(), corpus.docs()), (1, &[vec![1]][..]));
    }

    #[test]
    fn all_empty_is_error() {
        assert!(matches!(build_corpus(&[vec![], vec![]], 10), Err(Error::EmptyCorpus)));
        assert!(matches!(build_corpus(&[], 10), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn trie_counts_toy() {
        let trie = ContextTrie::build(&toy());
        assert_eq!(trie.n_contexts(), 4);
        assert_eq!(trie.count(&[]), 3);
        assert_eq!(trie.count(&[1]), 3);
        assert_eq!(trie.count(&[1, 2]), 2);
        assert_eq!(trie.count(&[1, 3]), 1);
        let ctxs: Vec<Vec<Token>> = trie.contexts().into_iter().map(|e| e.context).collect();
        assert_eq!(ctxs, vec![vec![], vec![1], vec![1, 2], vec![1, 3]]);
    }

    #[test]
    fn single_token_doc_has_only_empty_context() {
        let trie = ContextTrie::build(&Corpus::new(vec![vec![7]], 7).unwrap());
        assert_eq!(trie.n_contexts(), 1);
        assert!(trie.is_context(&[]));
        assert!(!trie.is_context(&[7]));
    }

    #[test]
    fn empirical_rows() {
        let trie = ContextTrie::build(&toy());
        assert_eq!(empirical_next_token(&trie, &[1, 2]).unwrap(), vec![0.0, 0.0, 0.0, 0.5, 0.5]);
        assert_eq!(empirical_next_token(&trie, &[]).unwrap(), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(empirical_next_token(&trie, &[2]), Err(Error::ContextUnseen(_))));
        // full documents are not contexts
        assert!(empirical_next_token(&trie, &[1, 2, 4]).is_err());
    }

    #[test]
    fn toy_bound_and_losses() {
        let corpus = toy();
        let trie = ContextTrie::build(&corpus);
        let bound = entropy_lower_bound(&trie);
        assert!((bound - 3.0 * 3f64.ln()).abs() < 1e-12);
        let table = NextTokenTable::from_trie(&trie);
        let direct = cross_entropy_loss(&corpus, &table).unwrap();
        assert!((direct - bound).abs() < 1e-12);

        struct Uniform;
        impl NextTokenModel for Uniform {
            fn omega(&self) -> usize {
                5
            }
            fn predict(&self, _: &[Token]) -> Result<Vec<f64>> {
                Ok(vec![0.2; 5])
            }
        }
        let uniform = cross_entropy_loss(&corpus, &Uniform).unwrap();
        assert!((uniform - 9.0 * 5f64.ln()).abs() < 1e-12);
        assert!(uniform >= bound);
    }

    #[test]
    fn zero_probability_is_infinite_loss() {
        struct Spike;
        impl NextTokenModel for Spike {
            fn omega(&self) -> usize {
                5
            }
            fn predict(&self, _: &[Token]) -> Result<Vec<f64>> {
                Ok(vec![1.0, 0.0, 0.0, 0.0, 0.0])
            }
        }
        assert!(matches!(
            cross_entropy_loss(&toy(), &Spike),
            Err(Error::InfiniteLoss { token: 2, .. })
        ));
    }

    #[test]
    fn repeated_document_has_zero_bound() {
        let corpus = Corpus::new(vec![vec![3, 1, 2]; 7], 3).unwrap();
        assert_eq!(entropy_lower_bound(&ContextTrie::build(&corpus)), 0.0);
    }

    #[test]
    fn all_pairs_bound() {
        let corpus = Corpus::new(vec![vec![1, 1], vec![1, 2], vec![2, 1], vec![2, 2]], 2).unwrap();
        let bound = entropy_lower_bound(&ContextTrie::build(&corpus));
        assert!((bound - 8.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ragged_documents_normalise_by_continuations() {
        // (1) ends a document and also continues to 2 once
        let corpus = Corpus::new(vec![vec![1], vec![1, 2]], 2).unwrap();
        let trie = ContextTrie::build(&corpus);
        assert_eq!(trie.count(&[1]), 2);
        assert_eq!(empirical_next_token(&trie, &[1]).unwrap(), vec![0.0, 1.0]);
        let table = NextTokenTable::from_trie(&trie);
        let direct = cross_entropy_loss(&corpus, &table).unwrap();
        assert!((direct - entropy_lower_bound(&trie)).abs() < 1e-12);
    }

    #[test]
    fn exports() {
        let docs = vec![strs(&["i", "love", "cats"]), strs(&["i", "hate", "cats"])];
        let (vocab, corpus) = build_corpus(&docs, 10).unwrap();
        let back = Vocabulary::from_json(&vocab.to_json()).unwrap();
        assert_eq!(back, vocab);
        let csv = ContextTrie::build(&corpus).to_csv();
        assert_eq!(csv, "context,count\n,2\n1,2\n1 2,1\n1 4,1\n");
        let parsed = Corpus::from_id_lines(&corpus.to_id_lines(), None).unwrap();
        assert_eq!(parsed, corpus);
    }
}
