//! Byte-pair-encoding and word-level vocabularies, encoding with character
//! offsets, and projection of mention spans onto BIO tags.
//!
//! Text is first split into words: maximal alphanumeric runs and single
//! punctuation characters. A word that follows whitespace starts with
//! [`WORD_MARKER`] glued to its first character, so decoding can restore
//! single spaces. Merges never cross word boundaries.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use log::warn;

use crate::document::Mention;
use crate::error::{Error, Result};

pub const WORD_MARKER: char = '\u{2581}';
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_ID: usize = 0;
pub const PAD_ID: usize = 1;
const NUM_SPECIAL: usize = 2;
const VOCAB_HEADER: &str = "#docrel-vocab 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabMode {
    Bpe,
    Word,
}

impl VocabMode {
    fn as_str(self) -> &'static str {
        match self {
            VocabMode::Bpe => "bpe",
            VocabMode::Word => "word",
        }
    }
}

/// One pre-tokenized word. `start..end` are character offsets into the
/// source; `spaced` records whether whitespace preceded it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word {
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub spaced: bool,
}

impl Word {
    /// The word's symbols before any merge: one per character, with the
    /// marker glued to the first when the word follows whitespace.
    fn symbols(&self) -> Vec<String> {
        let mut out: Vec<String> = self.text.chars().map(String::from).collect();
        if self.spaced {
            out[0].insert(0, WORD_MARKER);
        }
        out
    }

    fn marked(&self) -> String {
        if self.spaced {
            let mut s = String::with_capacity(self.text.len() + 3);
            s.push(WORD_MARKER);
            s.push_str(&self.text);
            s
        } else {
            self.text.clone()
        }
    }
}

pub fn pre_tokenize(text: &str) -> Vec<Word> {
    let mut words = Vec::new();
    let mut current: Option<Word> = None;
    let mut spaced = false;
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            if let Some(w) = current.take() {
                words.push(w);
            }
            spaced = true;
        } else if c.is_alphanumeric() {
            match current.as_mut() {
                Some(w) => {
                    w.text.push(c);
                    w.end = i + 1;
                }
                None => {
                    current = Some(Word {
                        text: c.to_string(),
                        start: i,
                        end: i + 1,
                        spaced: spaced && !words.is_empty(),
                    });
                    spaced = false;
                }
            }
        } else {
            if let Some(w) = current.take() {
                words.push(w);
            }
            words.push(Word {
                text: c.to_string(),
                start: i,
                end: i + 1,
                spaced: spaced && !words.is_empty(),
            });
            spaced = false;
        }
    }
    if let Some(w) = current {
        words.push(w);
    }
    words
}

/// Source characters covered by a symbol (the marker covers none).
fn source_len(symbol: &str) -> usize {
    symbol.chars().filter(|&c| c != WORD_MARKER).count()
}

#[derive(Debug, Clone)]
pub struct Vocab {
    pub mode: VocabMode,
    pub budget: usize,
    pub min_count: usize,
    pub merges: Vec<(String, String)>,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    /// Every rank at which each pair was merged, ascending. A pair can be
    /// merged twice when a later merge recreates one of its symbols.
    merge_rank: HashMap<(String, String), Vec<usize>>,
}

impl Vocab {
    fn from_parts(
        mode: VocabMode,
        budget: usize,
        min_count: usize,
        merges: Vec<(String, String)>,
        tokens: Vec<String>,
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token {t:?}")));
            }
        }
        if tokens.get(UNK_ID).map(String::as_str) != Some(UNK_TOKEN)
            || tokens.get(PAD_ID).map(String::as_str) != Some(PAD_TOKEN)
        {
            return Err(Error::Data(
                "vocabulary must start with <unk>, <pad>".into(),
            ));
        }
        let mut merge_rank: HashMap<(String, String), Vec<usize>> =
            HashMap::with_capacity(merges.len());
        for (rank, (a, b)) in merges.iter().enumerate() {
            if !index.contains_key(&format!("{a}{b}")) {
                return Err(Error::Data(format!("merge {a} {b} produces no token")));
            }
            merge_rank
                .entry((a.clone(), b.clone()))
                .or_default()
                .push(rank);
        }
        Ok(Vocab {
            mode,
            budget,
            min_count,
            merges,
            tokens,
            index,
            merge_rank,
        })
    }

    /// Number of ids, including the reserved `<unk>` and `<pad>`.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= NUM_SPECIAL
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Splits one word into symbols by replaying the merge list in order.
    fn segment(&self, word: &Word) -> Vec<String> {
        let mut symbols = word.symbols();
        let mut last: Option<usize> = None;
        loop {
            let next = symbols
                .windows(2)
                .filter_map(|w| {
                    let ranks = self.merge_rank.get(&(w[0].clone(), w[1].clone()))?;
                    ranks.iter().copied().find(|&r| last.is_none_or(|l| r > l))
                })
                .min();
            let Some(rank) = next else { break };
            let (a, b) = &self.merges[rank];
            symbols = merge_pair(&symbols, a, b);
            last = Some(rank);
        }
        symbols
    }

    pub fn encode(&self, text: &str) -> TokenizedText {
        let mut out = TokenizedText::default();
        let mut cache: HashMap<String, Vec<String>> = HashMap::new();
        for (wi, word) in pre_tokenize(text).iter().enumerate() {
            match self.mode {
                VocabMode::Word => {
                    out.token_ids.push(self.id(&word.text).unwrap_or(UNK_ID));
                    out.char_offsets.push((word.start, word.end));
                    out.word_index.push(wi);
                }
                VocabMode::Bpe => {
                    let symbols = cache
                        .entry(word.marked())
                        .or_insert_with(|| self.segment(word));
                    let mut pos = word.start;
                    for s in symbols.iter() {
                        let len = source_len(s);
                        out.token_ids.push(self.id(s).unwrap_or(UNK_ID));
                        out.char_offsets.push((pos, pos + len));
                        out.word_index.push(wi);
                        pos += len;
                    }
                }
            }
        }
        out
    }

    /// Concatenates token strings, turning the word marker back into a
    /// space. Word-mode tokens carry no marker and are joined by single
    /// spaces. `<unk>` appears literally; `<pad>` produces nothing.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let token = self
                .token(id)
                .ok_or_else(|| Error::Data(format!("token id {id} out of range {}", self.len())))?;
            if self.mode == VocabMode::Word && !out.is_empty() && id != PAD_ID {
                out.push(' ');
            }
            match id {
                PAD_ID => {}
                UNK_ID => out.push_str(UNK_TOKEN),
                _ => out.extend(
                    token
                        .chars()
                        .map(|c| if c == WORD_MARKER { ' ' } else { c }),
                ),
            }
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{VOCAB_HEADER}");
        let _ = writeln!(s, "mode\t{}", self.mode.as_str());
        let _ = writeln!(s, "budget\t{}", self.budget);
        let _ = writeln!(s, "min_count\t{}", self.min_count);
        let _ = writeln!(s, "merges\t{}", self.merges.len());
        for (a, b) in &self.merges {
            let _ = writeln!(s, "{a}\t{b}");
        }
        let _ = writeln!(s, "tokens\t{}", self.tokens.len());
        for (i, t) in self.tokens.iter().enumerate() {
            let _ = writeln!(s, "{t}\t{i}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let ctx = "vocab";
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, &str)> {
            lines.next().map(|(i, l)| (i + 1, l)).ok_or_else(|| {
                Error::parse(ctx, 0, format!("unexpected end of file, expected {what}"))
            })
        };
        let (n, header) = next("header")?;
        if header != VOCAB_HEADER {
            return Err(Error::parse(ctx, n, format!("bad header {header:?}")));
        }
        fn field<'a>(line: (usize, &'a str), key: &str) -> Result<&'a str> {
            match line.1.split_once('\t') {
                Some((k, v)) if k == key => Ok(v),
                _ => Err(Error::parse("vocab", line.0, format!("expected {key}"))),
            }
        }
        fn number(line: (usize, &str), key: &str) -> Result<usize> {
            field(line, key)?
                .parse()
                .map_err(|_| Error::parse("vocab", line.0, format!("bad {key}")))
        }
        let mode = match field(next("mode")?, "mode")? {
            "bpe" => VocabMode::Bpe,
            "word" => VocabMode::Word,
            other => return Err(Error::parse(ctx, 2, format!("unknown mode {other}"))),
        };
        let budget = number(next("budget")?, "budget")?;
        let min_count = number(next("min_count")?, "min_count")?;
        let n_merges = number(next("merges")?, "merges")?;
        let mut merges = Vec::with_capacity(n_merges);
        for _ in 0..n_merges {
            let (n, line) = next("merge")?;
            let (a, b) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(ctx, n, "merge needs two symbols"))?;
            merges.push((a.to_string(), b.to_string()));
        }
        let n_tokens = number(next("tokens")?, "tokens")?;
        let mut tokens = Vec::with_capacity(n_tokens);
        for expected in 0..n_tokens {
            let (n, line) = next("token")?;
            let (t, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::parse(ctx, n, "token needs an id"))?;
            if id.parse::<usize>().ok() != Some(expected) {
                return Err(Error::parse(ctx, n, "token ids must be dense and ordered"));
            }
            tokens.push(t.to_string());
        }
        Vocab::from_parts(mode, budget, min_count, merges, tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocab::from_text(&text)
    }
}

fn merge_pair(symbols: &[String], a: &str, b: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == a && symbols[i + 1] == b {
            out.push(format!("{a}{b}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Marked word strings with their corpus frequency, sorted.
pub fn word_counts<'a>(corpus: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for text in corpus {
        for w in pre_tokenize(text) {
            *counts.entry(w.marked()).or_insert(0) += 1;
        }
    }
    counts
}

/// The initial symbols of a marked word string.
pub fn initial_symbols(marked: &str) -> Vec<String> {
    let mut chars = marked.chars();
    let mut out = Vec::new();
    if let Some(first) = chars.next() {
        let mut s = first.to_string();
        if first == WORD_MARKER {
            if let Some(c) = chars.next() {
                s.push(c);
            }
        }
        out.push(s);
    }
    out.extend(chars.map(String::from));
    out
}

/// Greedy BPE training. Starts from the base symbols seen at least
/// `min_count` times and repeatedly merges the most frequent adjacent pair
/// (ties go to the lexicographically smallest pair) until the vocabulary
/// holds `budget` tokens (specials excluded) or no pair occurs twice.
/// Pairs touching a below-cutoff symbol are never merged.
pub fn train_bpe<'a>(
    corpus: impl IntoIterator<Item = &'a str>,
    budget: usize,
    min_count: usize,
) -> Result<Vocab> {
    let counts = word_counts(corpus);
    if counts.is_empty() {
        return Err(Error::Data(
            "cannot train a vocabulary on an empty corpus".into(),
        ));
    }
    let mut symbol_ids: HashMap<String, u32> = HashMap::new();
    let mut symbols: Vec<String> = Vec::new();
    let mut intern = |s: String, symbols: &mut Vec<String>| -> u32 {
        *symbol_ids.entry(s.clone()).or_insert_with(|| {
            symbols.push(s);
            (symbols.len() - 1) as u32
        })
    };

    let mut words: Vec<(Vec<u32>, usize)> = Vec::with_capacity(counts.len());
    for (w, &c) in &counts {
        let ids = initial_symbols(w)
            .into_iter()
            .map(|s| intern(s, &mut symbols))
            .collect();
        words.push((ids, c));
    }
    let mut base_count = vec![0usize; symbols.len()];
    for (ids, c) in &words {
        for &s in ids {
            base_count[s as usize] += c;
        }
    }
    let mut usable: Vec<bool> = base_count.iter().map(|&c| c >= min_count).collect();
    let mut alphabet: Vec<&String> = symbols
        .iter()
        .zip(&usable)
        .filter(|(_, &u)| u)
        .map(|(s, _)| s)
        .collect();
    alphabet.sort();
    if budget < alphabet.len() {
        return Err(Error::Config(format!(
            "budget {budget} is smaller than the {} base symbols",
            alphabet.len()
        )));
    }
    let mut tokens: Vec<String> = vec![UNK_TOKEN.into(), PAD_TOKEN.into()];
    tokens.extend(alphabet.into_iter().cloned());
    let mut known: HashSet<String> = tokens.iter().cloned().collect();

    type Pair = (u32, u32);
    let mut pair_count: HashMap<Pair, i64> = HashMap::new();
    let mut pair_words: HashMap<Pair, Vec<usize>> = HashMap::new();
    let pairs_of = |ids: &[u32], usable: &[bool]| -> Vec<Pair> {
        ids.windows(2)
            .filter(|w| usable[w[0] as usize] && usable[w[1] as usize])
            .map(|w| (w[0], w[1]))
            .collect()
    };
    for (wi, (ids, c)) in words.iter().enumerate() {
        for p in pairs_of(ids, &usable) {
            *pair_count.entry(p).or_insert(0) += *c as i64;
            pair_words.entry(p).or_default().push(wi);
        }
    }

    // Max-heap keyed by count, then by the reversed pair strings so the
    // lexicographically smallest pair wins ties. Entries go stale when a
    // count changes; stale entries are skipped on pop.
    type Entry = (i64, Reverse<(String, String)>, Pair);
    let mut heap: BinaryHeap<Entry> = pair_count
        .iter()
        .map(|(&p, &c)| {
            (
                c,
                Reverse((symbols[p.0 as usize].clone(), symbols[p.1 as usize].clone())),
                p,
            )
        })
        .collect();

    let mut merges = Vec::new();
    while tokens.len() - NUM_SPECIAL < budget {
        let best = loop {
            match heap.pop() {
                None => break None,
                Some((c, _, p)) if pair_count.get(&p) == Some(&c) => break Some((p, c)),
                Some(_) => continue,
            }
        };
        let Some((pair, count)) = best else { break };
        if count < 2 {
            break;
        }
        let merged = format!("{}{}", symbols[pair.0 as usize], symbols[pair.1 as usize]);
        merges.push((
            symbols[pair.0 as usize].clone(),
            symbols[pair.1 as usize].clone(),
        ));
        let new_id = intern(merged.clone(), &mut symbols);
        if usable.len() < symbols.len() {
            usable.resize(symbols.len(), true);
        }
        if known.insert(merged.clone()) {
            tokens.push(merged);
        }

        let mut touched: HashMap<Pair, i64> = HashMap::new();
        let mut affected = pair_words.remove(&pair).unwrap_or_default();
        affected.dedup();
        for wi in affected {
            let (ids, c) = &words[wi];
            if !ids.windows(2).any(|w| (w[0], w[1]) == pair) {
                continue;
            }
            let c = *c as i64;
            for p in pairs_of(ids, &usable) {
                *touched.entry(p).or_insert(0) -= c;
            }
            let mut next = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && (ids[i], ids[i + 1]) == pair {
                    next.push(new_id);
                    i += 2;
                } else {
                    next.push(ids[i]);
                    i += 1;
                }
            }
            for p in pairs_of(&next, &usable) {
                *touched.entry(p).or_insert(0) += c;
                let list = pair_words.entry(p).or_default();
                if list.last() != Some(&wi) {
                    list.push(wi);
                }
            }
            words[wi].0 = next;
        }
        let mut touched: Vec<_> = touched.into_iter().filter(|(_, d)| *d != 0).collect();
        touched.sort_unstable();
        for (p, delta) in touched {
            let c = pair_count.entry(p).or_insert(0);
            *c += delta;
            if *c > 0 {
                heap.push((
                    *c,
                    Reverse((symbols[p.0 as usize].clone(), symbols[p.1 as usize].clone())),
                    p,
                ));
            } else {
                pair_count.remove(&p);
            }
        }
        pair_count.remove(&pair);
    }
    Vocab::from_parts(VocabMode::Bpe, budget, min_count, merges, tokens)
}

/// Word-level vocabulary: words seen at least `min_count` times,
/// most frequent first (ties by string), capped at `budget` entries when
/// `budget > 0`.
pub fn train_word_vocab<'a>(
    corpus: impl IntoIterator<Item = &'a str>,
    budget: usize,
    min_count: usize,
) -> Result<Vocab> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for text in corpus {
        for w in pre_tokenize(text) {
            *counts.entry(w.text).or_insert(0) += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::Data(
            "cannot train a vocabulary on an empty corpus".into(),
        ));
    }
    let mut kept: Vec<(&String, usize)> = counts
        .iter()
        .filter(|(_, &c)| c >= min_count)
        .map(|(w, &c)| (w, c))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    if budget > 0 {
        kept.truncate(budget);
    }
    let mut tokens: Vec<String> = vec![UNK_TOKEN.into(), PAD_TOKEN.into()];
    tokens.extend(kept.into_iter().map(|(w, _)| w.clone()));
    Vocab::from_parts(VocabMode::Word, budget, min_count, Vec::new(), tokens)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenizedText {
    pub token_ids: Vec<usize>,
    /// Character span `[start, end)` of each token in the source text.
    pub char_offsets: Vec<(usize, usize)>,
    /// Index of the pre-tokenized word each token came from.
    pub word_index: Vec<usize>,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Tokens overlapping the character span `start..end`, as a half-open
    /// token range, plus whether the span was already token-aligned.
    pub fn token_span(&self, start: usize, end: usize) -> Option<(usize, usize, bool)> {
        let first = self
            .char_offsets
            .iter()
            .position(|&(s, e)| e > start && s < end)?;
        let last = self
            .char_offsets
            .iter()
            .rposition(|&(s, e)| e > start && s < end)?;
        let aligned = self.char_offsets[first].0 == start && self.char_offsets[last].1 == end;
        Some((first, last + 1, aligned))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BioTag {
    O,
    B(String),
    I(String),
}

impl BioTag {
    pub fn entity_type(&self) -> Option<&str> {
        match self {
            BioTag::O => None,
            BioTag::B(t) | BioTag::I(t) => Some(t),
        }
    }
}

impl std::fmt::Display for BioTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BioTag::O => f.write_str("O"),
            BioTag::B(t) => write!(f, "B-{t}"),
            BioTag::I(t) => write!(f, "I-{t}"),
        }
    }
}

impl std::str::FromStr for BioTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('-') {
            None if s == "O" => Ok(BioTag::O),
            Some(("B", t)) if !t.is_empty() => Ok(BioTag::B(t.to_string())),
            Some(("I", t)) if !t.is_empty() => Ok(BioTag::I(t.to_string())),
            _ => Err(Error::Data(format!("not a BIO tag: {s:?}"))),
        }
    }
}

/// BIO tags over sub-word tokens. A mention whose character span cuts
/// through a token is widened to the covering tokens, with a warning.
/// Repeated spans of the same entity are tagged once; spans of different
/// entities that share a token are rejected.
pub fn project_mention_labels(mentions: &[Mention], tokens: &TokenizedText) -> Result<Vec<BioTag>> {
    let mut tags = vec![BioTag::O; tokens.len()];
    let mut owner: Vec<Option<usize>> = vec![None; tokens.len()];
    let mut order: Vec<usize> = (0..mentions.len()).collect();
    order.sort_by_key(|&i| (mentions[i].start, mentions[i].end));
    for i in order {
        let m = &mentions[i];
        let Some((first, last, aligned)) = tokens.token_span(m.start, m.end) else {
            warn!(
                "mention {:?} at {}..{} covers no token",
                m.text, m.start, m.end
            );
            continue;
        };
        if !aligned {
            warn!(
                "mention {:?} at {}..{} widened to token boundaries",
                m.text, m.start, m.end
            );
        }
        let clash = (first..last).find_map(|t| owner[t]).map(|j| &mentions[j]);
        if let Some(other) = clash {
            let same = other.entity_id == m.entity_id
                && other.entity_type == m.entity_type
                && tokens
                    .token_span(other.start, other.end)
                    .map(|s| (s.0, s.1))
                    == Some((first, last));
            if same {
                continue;
            }
            return Err(Error::Data(format!(
                "mentions {:?} and {:?} overlap",
                other.text, m.text
            )));
        }
        for t in first..last {
            owner[t] = Some(i);
            tags[t] = if t == first {
                BioTag::B(m.entity_type.clone())
            } else {
                BioTag::I(m.entity_type.clone())
            };
        }
    }
    Ok(tags)
}

/// True when no `I-X` follows `O` or a tag of a different type.
pub fn is_valid_bio(tags: &[BioTag]) -> bool {
    let mut prev: Option<&str> = None;
    for t in tags {
        if let BioTag::I(ty) = t {
            if prev != Some(ty.as_str()) {
                return false;
            }
        }
        prev = t.entity_type();
    }
    true
}

/// Writes a short summary of a vocabulary's coverage of a corpus.
pub fn write_stats<'a>(
    mut out: impl Write,
    vocab: &Vocab,
    corpus: impl IntoIterator<Item = &'a str>,
) -> Result<()> {
    let (mut tokens, mut unk, mut words) = (0usize, 0usize, 0usize);
    for text in corpus {
        let enc = vocab.encode(text);
        tokens += enc.len();
        unk += enc.token_ids.iter().filter(|&&t| t == UNK_ID).count();
        words += enc.word_index.last().map_or(0, |w| w + 1);
    }
    let err = |e| Error::io("<stats>", e);
    writeln!(out, "mode\t{}", vocab.mode.as_str()).map_err(err)?;
    writeln!(out, "vocab_size\t{}", vocab.len()).map_err(err)?;
    writeln!(out, "merges\t{}", vocab.merges.len()).map_err(err)?;
    writeln!(out, "words\t{words}").map_err(err)?;
    writeln!(out, "tokens\t{tokens}").map_err(err)?;
    writeln!(out, "unk_tokens\t{unk}").map_err(err)?;
    Ok(())
}

pub fn read_corpus_lines(input: impl BufRead, context: &str) -> Result<Vec<String>> {
    input
        .lines()
        .map(|l| l.map_err(|e| Error::io(context, e)))
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .collect()
}
