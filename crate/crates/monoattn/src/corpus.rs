//! Token-level corpora: TSV I/O, vocabularies, and synthetic task generators.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::Batch;
use crate::{Error, Result};

/// Reserved vocabulary slots, identical in every vocabulary this crate builds.
pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const SEP_ID: usize = 3;
pub const UNK_ID: usize = 4;

/// Surface forms for the reserved slots, in id order.
pub const RESERVED_TOKENS: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<sep>", "<unk>"];

pub const SEP_TOKEN: &str = "<sep>";

/// Stock split sizes and sampling ranges for the synthetic tasks.
pub const DEFAULT_COUNTS: (usize, usize, usize) = (2000, 200, 200);
pub const DEFAULT_LEN_RANGE: (usize, usize) = (5, 15);
pub const DEFAULT_VOCAB: usize = 20;

/// One source/target example; later TSV fields become extra references.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pair {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
    pub extra_refs: Vec<Vec<String>>,
}

impl Pair {
    pub fn new(src: Vec<String>, tgt: Vec<String>) -> Pair {
        Pair {
            src,
            tgt,
            extra_refs: Vec::new(),
        }
    }

    /// Index of the separator token in the source, if present.
    pub fn sep_index(&self) -> Option<usize> {
        self.src.iter().position(|t| t == SEP_TOKEN)
    }

    /// Target plus any extra references, for metric evaluation.
    pub fn references(&self) -> Vec<Vec<String>> {
        let mut refs = vec![self.tgt.clone()];
        refs.extend(self.extra_refs.iter().cloned());
        refs
    }
}

/// Token table with the reserved slots up front and content tokens following
/// in sorted order, so equal token sets always yield equal id assignments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
}

impl Vocab {
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(content: I) -> Vocab {
        let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|t| t.to_string()).collect();
        let set: BTreeSet<&str> = content
            .into_iter()
            .filter(|t| !RESERVED_TOKENS.contains(t))
            .collect();
        tokens.extend(set.into_iter().map(String::from));
        Vocab { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of a token, or the unk id for anything unseen.
    pub fn id(&self, token: &str) -> usize {
        self.tokens
            .iter()
            .position(|t| t == token)
            .unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| Error::InvalidArgument(format!("token id {} out of range", id)))
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&i| self.token(i).map(String::from))
            .collect()
    }
}

/// One data split together with the (shared) vocabularies used to encode it.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub pairs: Vec<Pair>,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
}

impl Corpus {
    pub fn new(pairs: Vec<Pair>, src_vocab: Vocab, tgt_vocab: Vocab) -> Corpus {
        Corpus {
            pairs,
            src_vocab,
            tgt_vocab,
        }
    }

    /// Builds vocabularies from the pairs themselves.
    pub fn from_pairs(pairs: Vec<Pair>) -> Corpus {
        let (src_vocab, tgt_vocab) = vocabs_of(&pairs);
        Corpus {
            pairs,
            src_vocab,
            tgt_vocab,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Encodes the selected pairs into a padded batch. Source rows carry a
    /// trailing eos so the decoder has an end-of-source position to attend
    /// when it decides to stop; without it the stop decision has to look
    /// backward for length evidence, which needlessly fights monotone
    /// attention.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let mut src = Vec::with_capacity(indices.len());
        let mut tgt = Vec::with_capacity(indices.len());
        let mut sep = Vec::with_capacity(indices.len());
        for &i in indices {
            let pair = self.pairs.get(i).ok_or_else(|| {
                Error::InvalidArgument(format!("pair index {} out of range", i))
            })?;
            src.push(encode_src(&self.src_vocab, &pair.src));
            tgt.push(self.tgt_vocab.encode(&pair.tgt));
            sep.push(pair.sep_index());
        }
        Batch::new(src, tgt, sep, PAD_ID)
    }
}

/// Model-side source encoding: token ids plus a trailing eos.
pub fn encode_src(vocab: &Vocab, tokens: &[String]) -> Vec<usize> {
    let mut ids = vocab.encode(tokens);
    ids.push(EOS_ID);
    ids
}

fn vocabs_of(pairs: &[Pair]) -> (Vocab, Vocab) {
    let src_vocab = Vocab::build(pairs.iter().flat_map(|p| p.src.iter().map(String::as_str)));
    let tgt_vocab = Vocab::build(pairs.iter().flat_map(|p| {
        p.tgt
            .iter()
            .chain(p.extra_refs.iter().flatten())
            .map(String::as_str)
    }));
    (src_vocab, tgt_vocab)
}

/// Reads `source<TAB>target[<TAB>alternative...]` lines with space-separated
/// tokens. Blank lines and lines starting with # are skipped.
pub fn read_tsv(path: &Path) -> Result<Vec<Pair>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut pairs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno,
                msg: "expected source<TAB>target".to_string(),
            });
        }
        let toks = |s: &str| -> Vec<String> {
            s.split_whitespace().map(String::from).collect()
        };
        let src = toks(fields[0]);
        if src.is_empty() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno,
                msg: "empty source".to_string(),
            });
        }
        let mut pair = Pair::new(src, toks(fields[1]));
        pair.extra_refs = fields[2..].iter().map(|f| toks(f)).collect();
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn write_tsv(path: &Path, pairs: &[Pair]) -> Result<()> {
    let mut out = String::new();
    for pair in pairs {
        out.push_str(&pair.src.join(" "));
        out.push('\t');
        out.push_str(&pair.tgt.join(" "));
        for r in &pair.extra_refs {
            out.push('\t');
            out.push_str(&r.join(" "));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Three generated splits sharing one vocabulary pair, plus the generator
/// settings as manifest lines.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
    pub manifest: Vec<(String, String)>,
}

impl TaskData {
    fn assemble(
        mut pairs: Vec<Pair>,
        counts: (usize, usize, usize),
        manifest: Vec<(String, String)>,
    ) -> TaskData {
        let (src_vocab, tgt_vocab) = vocabs_of(&pairs);
        let test = pairs.split_off(counts.0 + counts.1);
        let dev = pairs.split_off(counts.0);
        TaskData {
            train: Corpus::new(pairs, src_vocab.clone(), tgt_vocab.clone()),
            dev: Corpus::new(dev, src_vocab.clone(), tgt_vocab.clone()),
            test: Corpus::new(test, src_vocab, tgt_vocab),
            manifest,
        }
    }

    /// Reads train/dev/test TSVs from a generated task directory, encoding
    /// all three with one vocabulary built over their union.
    pub fn load_dir(dir: &Path) -> Result<TaskData> {
        let train = read_tsv(&dir.join("train.tsv"))?;
        let dev = read_tsv(&dir.join("dev.tsv"))?;
        let test = read_tsv(&dir.join("test.tsv"))?;
        let all: Vec<Pair> = train
            .iter()
            .chain(dev.iter())
            .chain(test.iter())
            .cloned()
            .collect();
        let (src_vocab, tgt_vocab) = vocabs_of(&all);
        Ok(TaskData {
            train: Corpus::new(train, src_vocab.clone(), tgt_vocab.clone()),
            dev: Corpus::new(dev, src_vocab.clone(), tgt_vocab.clone()),
            test: Corpus::new(test, src_vocab, tgt_vocab),
            manifest: Vec::new(),
        })
    }
}

fn content_alphabet(size: usize) -> Vec<String> {
    (0..size)
        .map(|i| {
            if size <= 26 {
                ((b'a' + i as u8) as char).to_string()
            } else {
                format!("t{}", i)
            }
        })
        .collect()
}

fn check_gen_args(counts: (usize, usize, usize), len_range: (usize, usize)) -> Result<usize> {
    let total = counts.0 + counts.1 + counts.2;
    if total == 0 {
        return Err(Error::InvalidArgument(
            "generator needs at least one example".to_string(),
        ));
    }
    if len_range.0 == 0 || len_range.0 > len_range.1 {
        return Err(Error::InvalidArgument(format!(
            "bad length range {}..={}",
            len_range.0, len_range.1
        )));
    }
    Ok(total)
}

/// Draws `total` sources with distinct surface strings, so the returned
/// splits never leak one split's examples into another.
fn distinct_sources<F: FnMut(&mut ChaCha8Rng) -> Vec<String>>(
    total: usize,
    rng: &mut ChaCha8Rng,
    mut draw: F,
) -> Result<Vec<Vec<String>>> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(total);
    let mut attempts = 0usize;
    while out.len() < total {
        attempts += 1;
        if attempts > 100 * total + 1000 {
            return Err(Error::InvalidArgument(
                "task space too small for the requested number of distinct examples".to_string(),
            ));
        }
        let src = draw(rng);
        if seen.insert(src.join(" ")) {
            out.push(src);
        }
    }
    Ok(out)
}

fn manifest_base(
    task: &str,
    counts: (usize, usize, usize),
    seed: u64,
) -> Vec<(String, String)> {
    vec![
        ("task".to_string(), task.to_string()),
        ("n_train".to_string(), counts.0.to_string()),
        ("n_dev".to_string(), counts.1.to_string()),
        ("n_test".to_string(), counts.2.to_string()),
        ("seed".to_string(), seed.to_string()),
    ]
}

/// Monotone token-substitution task: targets apply a fixed random bijection
/// of the content alphabet to the source, position by position.
pub fn gen_cipher(
    counts: (usize, usize, usize),
    vocab: usize,
    len_range: (usize, usize),
    seed: u64,
) -> Result<TaskData> {
    let total = check_gen_args(counts, len_range)?;
    if vocab < 2 {
        return Err(Error::InvalidArgument(
            "cipher needs at least two content tokens".to_string(),
        ));
    }
    let alphabet = content_alphabet(vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mapped: Vec<usize> = (0..vocab).collect();
    mapped.shuffle(&mut rng);
    let sources = distinct_sources(total, &mut rng, |rng| {
        let len = rng.random_range(len_range.0..=len_range.1);
        (0..len)
            .map(|_| alphabet[rng.random_range(0..vocab)].clone())
            .collect()
    })?;
    let pairs: Vec<Pair> = sources
        .into_iter()
        .map(|src| {
            let tgt = src
                .iter()
                .map(|t| {
                    let i = alphabet.iter().position(|a| a == t).expect("own alphabet");
                    alphabet[mapped[i]].clone()
                })
                .collect();
            Pair::new(src, tgt)
        })
        .collect();
    let mut manifest = manifest_base("cipher", counts, seed);
    manifest.push(("vocab".to_string(), vocab.to_string()));
    manifest.push(("min_len".to_string(), len_range.0.to_string()));
    manifest.push(("max_len".to_string(), len_range.1.to_string()));
    let map_desc: Vec<String> = (0..vocab)
        .map(|i| format!("{}:{}", alphabet[i], alphabet[mapped[i]]))
        .collect();
    manifest.push(("mapping".to_string(), map_desc.join(",")));
    Ok(TaskData::assemble(pairs, counts, manifest))
}

/// Inflection task: the source lists a part-of-speech marker and one
/// inflection tag, then the separator, then the lemma; the target repeats the
/// lemma and appends the tag's suffix. "V SG <sep> u s e" with SG adding "s"
/// maps to "u s e s".
pub fn gen_inflection(
    counts: (usize, usize, usize),
    tags: &[(String, Vec<String>)],
    len_range: (usize, usize),
    seed: u64,
) -> Result<TaskData> {
    let total = check_gen_args(counts, len_range)?;
    if tags.is_empty() {
        return Err(Error::InvalidArgument(
            "inflection needs a nonempty tag set".to_string(),
        ));
    }
    let alphabet = content_alphabet(DEFAULT_VOCAB);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sources = distinct_sources(total, &mut rng, |rng| {
        let tag = &tags[rng.random_range(0..tags.len())].0;
        let len = rng.random_range(len_range.0..=len_range.1);
        let mut src = vec!["V".to_string(), tag.clone(), SEP_TOKEN.to_string()];
        src.extend((0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())].clone()));
        src
    })?;
    let pairs: Vec<Pair> = sources
        .into_iter()
        .map(|src| {
            let suffix = tags
                .iter()
                .find(|(t, _)| *t == src[1])
                .map(|(_, s)| s.clone())
                .expect("tag drawn from the set");
            let mut tgt: Vec<String> = src[3..].to_vec();
            tgt.extend(suffix);
            Pair::new(src, tgt)
        })
        .collect();
    let mut manifest = manifest_base("inflection", counts, seed);
    manifest.push(("min_len".to_string(), len_range.0.to_string()));
    manifest.push(("max_len".to_string(), len_range.1.to_string()));
    let tag_desc: Vec<String> = tags
        .iter()
        .map(|(t, s)| format!("{}:+{}", t, s.join("")))
        .collect();
    manifest.push(("tags".to_string(), tag_desc.join(",")));
    Ok(TaskData::assemble(pairs, counts, manifest))
}

/// Stock tag set for the inflection task.
pub fn default_tags() -> Vec<(String, Vec<String>)> {
    vec![
        ("SG".to_string(), vec!["s".to_string()]),
        ("PL".to_string(), vec!["e".to_string(), "n".to_string()]),
        (
            "PST".to_string(),
            vec!["e".to_string(), "d".to_string()],
        ),
    ]
}

/// Marker token announcing a displaced example in the reorder task.
pub const MOVE_TOKEN: &str = "mv";

/// Copy task with controlled non-monotone examples: with probability
/// `swap_prob` the source is prefixed with the move marker and the target
/// moves the final content token to the front.
pub fn gen_reorder(
    counts: (usize, usize, usize),
    swap_prob: f64,
    vocab: usize,
    len_range: (usize, usize),
    seed: u64,
) -> Result<TaskData> {
    let total = check_gen_args(counts, len_range)?;
    if !(0.0..=1.0).contains(&swap_prob) || !swap_prob.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "swap probability must lie in [0, 1], got {}",
            swap_prob
        )));
    }
    if vocab < 2 {
        return Err(Error::InvalidArgument(
            "reorder needs at least two content tokens".to_string(),
        ));
    }
    let alphabet = content_alphabet(vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sources = distinct_sources(total, &mut rng, |rng| {
        let displaced = rng.random_bool(swap_prob);
        let len = rng.random_range(len_range.0..=len_range.1);
        let mut src = Vec::with_capacity(len + 1);
        if displaced {
            src.push(MOVE_TOKEN.to_string());
        }
        src.extend((0..len).map(|_| alphabet[rng.random_range(0..vocab)].clone()));
        src
    })?;
    let pairs: Vec<Pair> = sources
        .into_iter()
        .map(|src| {
            let tgt: Vec<String> = if src[0] == MOVE_TOKEN {
                let content = &src[1..];
                let mut t = vec![content[content.len() - 1].clone()];
                t.extend_from_slice(&content[..content.len() - 1]);
                t
            } else {
                src.clone()
            };
            Pair::new(src, tgt)
        })
        .collect();
    let mut manifest = manifest_base("reorder", counts, seed);
    manifest.push(("swap_prob".to_string(), swap_prob.to_string()));
    manifest.push(("vocab".to_string(), vocab.to_string()));
    manifest.push(("min_len".to_string(), len_range.0.to_string()));
    manifest.push(("max_len".to_string(), len_range.1.to_string()));
    Ok(TaskData::assemble(pairs, counts, manifest))
}
