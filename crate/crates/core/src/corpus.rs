//! Token sequences, gold labels and crowd annotations, plus their TSV formats.
//!
//! * `corpus.tsv`: `token \t gold1 [\t gold2]`, blank line between sequences.
//! * `crowd.tsv`: `seq_id \t position \t annotator_id \t label`.
//! * `labels.tsv`: `token \t predicted_label`, same layout as `corpus.tsv`.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub type LabelId = usize;

/// Closed tag vocabulary with a bidirectional name/index mapping.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelSet {
    names: Vec<String>,
    index: HashMap<String, LabelId>,
}

impl LabelSet {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set = LabelSet::default();
        for name in names {
            let name = name.into();
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(Error::validation(format!("invalid label name {name:?}")));
            }
            if set.index.contains_key(&name) {
                return Err(Error::validation(format!("duplicate label {name:?}")));
            }
            set.intern(&name);
        }
        Ok(set)
    }

    fn intern(&mut self, name: &str) -> LabelId {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: LabelId) -> &str {
        &self.names[id]
    }

    pub fn index(&self, name: &str) -> Option<LabelId> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn lookup(&self, name: &str) -> Result<LabelId> {
        self.index(name)
            .ok_or_else(|| Error::validation(format!("unknown label {name:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    /// Zero, one or two expert labels.
    pub gold: Vec<LabelId>,
}

impl Token {
    pub fn new(surface: impl Into<String>, gold: Vec<LabelId>) -> Self {
        Token {
            surface: surface.into(),
            gold,
        }
    }
}

/// Ordered token sequences. Tokens are also addressed by a flat index in
/// sequence order, which every per-token array in this crate uses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    sequences: Vec<Vec<Token>>,
    offsets: Vec<usize>,
}

impl Corpus {
    pub fn new(sequences: Vec<Vec<Token>>, labels: &LabelSet) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::validation("empty corpus"));
        }
        let mut offsets = Vec::with_capacity(sequences.len() + 1);
        offsets.push(0);
        for (s, seq) in sequences.iter().enumerate() {
            if seq.is_empty() {
                return Err(Error::validation(format!("sequence {s} is empty")));
            }
            for tok in seq {
                if tok.gold.len() > 2 {
                    return Err(Error::validation("at most two gold labels per token"));
                }
                if let Some(&g) = tok.gold.iter().find(|&&g| g >= labels.len()) {
                    return Err(Error::validation(format!("gold label id {g} out of range")));
                }
            }
            offsets.push(offsets[s] + seq.len());
        }
        Ok(Corpus { sequences, offsets })
    }

    pub fn sequences(&self) -> &[Vec<Token>] {
        &self.sequences
    }

    pub fn n_sequences(&self) -> usize {
        self.sequences.len()
    }

    pub fn n_tokens(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn seq_lengths(&self) -> Vec<usize> {
        self.sequences.iter().map(Vec::len).collect()
    }

    /// Flat index of the first token of each sequence, with a trailing total.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.sequences.iter().flatten()
    }

    /// The `k`-th gold column as a flat vector, if every token has one.
    pub fn gold_column(&self, k: usize) -> Option<Vec<LabelId>> {
        self.tokens().map(|t| t.gold.get(k).copied()).collect()
    }

    /// Split a flat per-token vector back into per-sequence slices.
    pub fn split<'a, T>(&self, flat: &'a [T]) -> Vec<&'a [T]> {
        self.offsets
            .windows(2)
            .map(|w| &flat[w[0]..w[1]])
            .collect()
    }
}

fn split_columns(line: &str) -> Vec<&str> {
    if line.contains('\t') {
        line.split('\t').collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Parse CoNLL-style text. With `inventory` the label set is fixed and unknown
/// labels are rejected; otherwise it is the union of labels in first-seen order.
pub fn parse_corpus(
    text: &str,
    origin: &Path,
    inventory: Option<&LabelSet>,
) -> Result<(Corpus, LabelSet)> {
    let mut labels = inventory.cloned().unwrap_or_default();
    let mut sequences = Vec::new();
    let mut current = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            if !current.is_empty() {
                sequences.push(std::mem::take(&mut current));
            }
            continue;
        }
        let cols = split_columns(line);
        if cols.is_empty() || cols.len() > 3 || cols.iter().any(|c| c.is_empty()) {
            return Err(Error::parse(
                origin,
                line_no,
                format!("expected `token [gold1 [gold2]]`, got {line:?}"),
            ));
        }
        let mut gold = Vec::with_capacity(cols.len() - 1);
        for name in &cols[1..] {
            let id = if inventory.is_some() {
                labels.lookup(name).map_err(|_| {
                    Error::validation(format!("{}:{line_no}: unknown label {name:?}", origin.display()))
                })?
            } else {
                labels.intern(name)
            };
            gold.push(id);
        }
        current.push(Token::new(cols[0], gold));
    }
    if !current.is_empty() {
        sequences.push(current);
    }
    let corpus = Corpus::new(sequences, &labels)?;
    Ok((corpus, labels))
}

pub fn load_corpus(path: &Path, inventory: Option<&LabelSet>) -> Result<(Corpus, LabelSet)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, path, inventory)
}

fn render_rows<'a>(corpus: &'a Corpus, mut cells: impl FnMut(usize, &'a Token) -> Vec<&'a str>) -> String {
    let mut out = String::new();
    let mut flat = 0;
    for (s, seq) in corpus.sequences().iter().enumerate() {
        if s > 0 {
            out.push('\n');
        }
        for tok in seq {
            out.push_str(&tok.surface);
            for c in cells(flat, tok) {
                out.push('\t');
                out.push_str(c);
            }
            out.push('\n');
            flat += 1;
        }
    }
    out
}

pub fn render_labels(corpus: &Corpus, labels: &[LabelId], label_set: &LabelSet) -> Result<String> {
    if labels.len() != corpus.n_tokens() {
        return Err(Error::validation(format!(
            "label vector has {} entries but corpus has {} tokens",
            labels.len(),
            corpus.n_tokens()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= label_set.len()) {
        return Err(Error::validation(format!("label id {bad} out of range")));
    }
    Ok(render_rows(corpus, |i, _| vec![label_set.name(labels[i])]))
}

/// Write one predicted label per token (`labels.tsv`).
pub fn write_labels(corpus: &Corpus, labels: &[LabelId], label_set: &LabelSet, path: &Path) -> Result<()> {
    let text = render_labels(corpus, labels, label_set)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write the corpus with all of its gold columns.
pub fn write_corpus(corpus: &Corpus, label_set: &LabelSet, path: &Path) -> Result<()> {
    let text = render_rows(corpus, |_, tok| {
        tok.gold.iter().map(|&g| label_set.name(g)).collect()
    });
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Read a `labels.tsv` aligned with `corpus` (same surfaces, same breaks).
pub fn load_labels(path: &Path, corpus: &Corpus, label_set: &LabelSet) -> Result<Vec<LabelId>> {
    let (other, _) = load_corpus(path, Some(label_set))?;
    if other.seq_lengths() != corpus.seq_lengths() {
        return Err(Error::validation(format!(
            "{} does not align with the corpus sequence structure",
            path.display()
        )));
    }
    let mut out = Vec::with_capacity(corpus.n_tokens());
    for (a, b) in corpus.tokens().zip(other.tokens()) {
        if a.surface != b.surface {
            return Err(Error::validation(format!(
                "{}: token {:?} does not match corpus token {:?}",
                path.display(),
                b.surface,
                a.surface
            )));
        }
        let label = *b.gold.first().ok_or_else(|| {
            Error::validation(format!("{}: token {:?} has no label", path.display(), b.surface))
        })?;
        out.push(label);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Annotation {
    /// Flat token index.
    pub token: usize,
    pub annotator: usize,
    pub label: LabelId,
}

/// Sparse annotator x token label table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrowdAnnotations {
    n_annotators: usize,
    n_labels: usize,
    annotator_names: Vec<String>,
    offsets: Vec<usize>,
    /// Sorted by (token, annotator).
    entries: Vec<Annotation>,
    token_start: Vec<usize>,
}

impl CrowdAnnotations {
    /// Build from flat-token records. Bounds and duplicates are checked;
    /// coverage is not (see [`CrowdAnnotations::check_coverage`]).
    pub fn new(
        seq_lengths: &[usize],
        n_labels: usize,
        n_annotators: usize,
        mut entries: Vec<Annotation>,
    ) -> Result<Self> {
        let mut offsets = vec![0];
        for &len in seq_lengths {
            offsets.push(offsets.last().unwrap() + len);
        }
        let n_tokens = *offsets.last().unwrap();
        for a in &entries {
            if a.token >= n_tokens {
                return Err(Error::validation(format!("token {} does not exist", a.token)));
            }
            if a.annotator >= n_annotators {
                return Err(Error::validation(format!("annotator {} out of range", a.annotator)));
            }
            if a.label >= n_labels {
                return Err(Error::validation(format!("label id {} out of range", a.label)));
            }
        }
        entries.sort_unstable();
        if let Some(w) = entries
            .windows(2)
            .find(|w| w[0].token == w[1].token && w[0].annotator == w[1].annotator)
        {
            return Err(Error::validation(format!(
                "duplicate annotation by annotator {} on token {}",
                w[0].annotator, w[0].token
            )));
        }
        let mut token_start = vec![0; n_tokens + 1];
        for a in &entries {
            token_start[a.token + 1] += 1;
        }
        for i in 0..n_tokens {
            token_start[i + 1] += token_start[i];
        }
        Ok(CrowdAnnotations {
            n_annotators,
            n_labels,
            annotator_names: (0..n_annotators).map(|l| l.to_string()).collect(),
            offsets,
            entries,
            token_start,
        })
    }

    pub fn with_annotator_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_annotators {
            return Err(Error::validation("annotator name count mismatch"));
        }
        self.annotator_names = names;
        Ok(self)
    }

    pub fn check_coverage(&self) -> Result<()> {
        match (0..self.n_tokens()).find(|&i| self.token(i).is_empty()) {
            Some(i) => {
                let (s, p) = self.seq_pos(i);
                Err(Error::validation(format!(
                    "token (seq {s}, position {p}) has no annotations"
                )))
            }
            None => Ok(()),
        }
    }

    pub fn n_annotators(&self) -> usize {
        self.n_annotators
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn n_tokens(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn n_sequences(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn annotator_names(&self) -> &[String] {
        &self.annotator_names
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Annotation] {
        &self.entries
    }

    /// Annotations of one flat token, ordered by annotator.
    pub fn token(&self, token: usize) -> &[Annotation] {
        &self.entries[self.token_start[token]..self.token_start[token + 1]]
    }

    pub fn seq_pos(&self, token: usize) -> (usize, usize) {
        let s = self.offsets.partition_point(|&o| o <= token) - 1;
        (s, token - self.offsets[s])
    }

    pub fn flat_index(&self, seq: usize, pos: usize) -> Option<usize> {
        let start = *self.offsets.get(seq)?;
        let end = *self.offsets.get(seq + 1)?;
        (start + pos < end).then_some(start + pos)
    }

    /// Per annotator: `(token, label)` pairs in token order.
    pub fn by_annotator(&self) -> Vec<Vec<(usize, LabelId)>> {
        let mut out = vec![Vec::new(); self.n_annotators];
        for a in &self.entries {
            out[a.annotator].push((a.token, a.label));
        }
        out
    }

    /// Keep only annotations whose annotator passes `keep`. Annotator ids are unchanged.
    pub fn restrict(&self, keep: impl Fn(usize) -> bool) -> CrowdAnnotations {
        let entries = self.entries.iter().copied().filter(|a| keep(a.annotator)).collect();
        let lengths: Vec<usize> = self.offsets.windows(2).map(|w| w[1] - w[0]).collect();
        let mut out = CrowdAnnotations::new(&lengths, self.n_labels, self.n_annotators, entries)
            .expect("subset of valid annotations is valid");
        out.annotator_names = self.annotator_names.clone();
        out
    }

    /// Relabel annotators: old id `l` becomes `perm[l]`.
    pub fn permute_annotators(&self, perm: &[usize]) -> Result<CrowdAnnotations> {
        if perm.len() != self.n_annotators {
            return Err(Error::validation("permutation length mismatch"));
        }
        let entries = self
            .entries
            .iter()
            .map(|a| Annotation {
                annotator: perm[a.annotator],
                ..*a
            })
            .collect();
        let lengths: Vec<usize> = self.offsets.windows(2).map(|w| w[1] - w[0]).collect();
        let mut names = vec![String::new(); self.n_annotators];
        for (l, &p) in perm.iter().enumerate() {
            names[p] = self.annotator_names[l].clone();
        }
        CrowdAnnotations::new(&lengths, self.n_labels, self.n_annotators, entries)?
            .with_annotator_names(names)
    }
}

/// Parse `crowd.tsv`. Annotator ids that are all non-negative integers are
/// used directly (L = max id + 1); anything else is densely renumbered in
/// first-seen order.
pub fn parse_crowd(text: &str, origin: &Path, corpus: &Corpus, labels: &LabelSet) -> Result<CrowdAnnotations> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let cols = split_columns(line);
        if cols.len() != 4 {
            return Err(Error::parse(
                origin,
                line_no,
                format!("expected `seq_id position annotator_id label`, got {line:?}"),
            ));
        }
        let seq: usize = cols[0]
            .parse()
            .map_err(|_| Error::parse(origin, line_no, format!("bad sequence id {:?}", cols[0])))?;
        let pos: usize = cols[1]
            .parse()
            .map_err(|_| Error::parse(origin, line_no, format!("bad position {:?}", cols[1])))?;
        let label = labels.index(cols[3]).ok_or_else(|| {
            Error::validation(format!("{}:{line_no}: unknown label {:?}", origin.display(), cols[3]))
        })?;
        let token = corpus
            .offsets()
            .get(seq + 1)
            .filter(|&&end| corpus.offsets()[seq] + pos < end)
            .map(|_| corpus.offsets()[seq] + pos)
            .ok_or_else(|| {
                Error::validation(format!(
                    "{}:{line_no}: token (seq {seq}, position {pos}) does not exist",
                    origin.display()
                ))
            })?;
        rows.push((token, cols[2], label, line_no));
    }

    let numeric: Option<Vec<usize>> = rows.iter().map(|r| r.1.parse::<usize>().ok()).collect();
    let (ids, names) = match numeric {
        Some(ids) => {
            let n = ids.iter().max().map_or(0, |m| m + 1);
            (ids, (0..n).map(|l| l.to_string()).collect::<Vec<_>>())
        }
        None => {
            let mut map: HashMap<&str, usize> = HashMap::new();
            let mut names = Vec::new();
            let ids = rows
                .iter()
                .map(|r| {
                    *map.entry(r.1).or_insert_with(|| {
                        names.push(r.1.to_string());
                        names.len() - 1
                    })
                })
                .collect();
            (ids, names)
        }
    };

    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(rows.len());
    for (row, &annotator) in rows.iter().zip(&ids) {
        if !seen.insert((annotator, row.0)) {
            return Err(Error::validation(format!(
                "{}:{}: duplicate annotation by annotator {:?}",
                origin.display(),
                row.3,
                row.1
            )));
        }
        entries.push(Annotation {
            token: row.0,
            annotator,
            label: row.2,
        });
    }
    let ann = CrowdAnnotations::new(&corpus.seq_lengths(), labels.len(), names.len(), entries)?
        .with_annotator_names(names)?;
    ann.check_coverage()?;
    Ok(ann)
}

pub fn load_crowd(path: &Path, corpus: &Corpus, labels: &LabelSet) -> Result<CrowdAnnotations> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_crowd(&text, path, corpus, labels)
}

pub fn render_crowd(ann: &CrowdAnnotations, labels: &LabelSet) -> String {
    let mut out = String::new();
    for a in ann.entries() {
        let (s, p) = ann.seq_pos(a.token);
        let _ = writeln!(
            out,
            "{s}\t{p}\t{}\t{}",
            ann.annotator_names()[a.annotator],
            labels.name(a.label)
        );
    }
    out
}

pub fn write_crowd(ann: &CrowdAnnotations, labels: &LabelSet, path: &Path) -> Result<()> {
    fs::write(path, render_crowd(ann, labels)).map_err(|e| Error::io(path, e))
}
