//! Deterministic synthetic benchmark: fictitious author profiles, QA pairs
//! with paraphrased and perturbed answers, and a forget/retain corpus split.
//!
//! Every attribute value is a two-word phrase whose words are globally
//! unique across authors. With order-3 models that makes attribute bindings
//! live entirely inside the count tables of the authors' own documents, so
//! the forget/retain separation is observable at tiny scale: a model that
//! never saw an author's documents can only produce the smoothing floor for
//! that author's facts.
//!
//! A holdout author group is generated alongside the training split. Its
//! documents appear in no training corpus and serve as the nonmember pool
//! for membership-inference scoring.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, Document};
use crate::error::{Error, Result};
use crate::metrics::{EvalSets, QAExample};
use crate::vocab::Vocab;

/// How many times each profile document is repeated in the training corpora.
/// Repetition makes profile transitions dominate ties against QA-document
/// transitions sharing the same history.
pub const PROFILE_REPLICAS: usize = 4;

pub const ATTRIBUTE_WORDS: [&str; 4] = ["birthplace", "genre", "debut", "award"];
const QUESTION_OPENERS: [&str; 3] = ["state", "name", "give"];
const PERTURBED_PER_QA: usize = 3;
/// Suffix word making a paraphrase differ from the gold answer. Appears only
/// in evaluation records, never in training text.
const PARAPHRASE_SUFFIX: &str = "indeed";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub n_authors: usize,
    pub qa_per_author: usize,
    pub forget_fraction: f64,
    pub seed: u64,
}

impl BenchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_authors < 2 {
            return Err(Error::InvalidParameter {
                reason: format!("need at least 2 authors (got {})", self.n_authors),
            });
        }
        if self.qa_per_author < 1 {
            return Err(Error::InvalidParameter {
                reason: "need at least 1 QA pair per author".to_string(),
            });
        }
        if self.qa_per_author > ATTRIBUTE_WORDS.len() * QUESTION_OPENERS.len() {
            return Err(Error::InvalidParameter {
                reason: format!(
                    "at most {} QA pairs per author are available",
                    ATTRIBUTE_WORDS.len() * QUESTION_OPENERS.len()
                ),
            });
        }
        if !(self.forget_fraction > 0.0 && self.forget_fraction < 1.0) {
            return Err(Error::InvalidParameter {
                reason: format!(
                    "forget fraction must lie in (0, 1) (got {})",
                    self.forget_fraction
                ),
            });
        }
        let forget = self.forget_count();
        if forget < 1 || forget >= self.n_authors {
            return Err(Error::InvalidParameter {
                reason: format!(
                    "forget fraction {} leaves no usable split over {} authors",
                    self.forget_fraction, self.n_authors
                ),
            });
        }
        Ok(())
    }

    pub fn forget_count(&self) -> usize {
        (self.forget_fraction * self.n_authors as f64).ceil() as usize
    }

    /// Holdout (never-trained) authors generated alongside the split: the
    /// nonmember pool for membership-inference scoring and the source of
    /// perturbed answer values. At least three, so every QA pair gets its
    /// full complement of wrong answers.
    pub fn holdout_count(&self) -> usize {
        self.forget_count().max(PERTURBED_PER_QA)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Forget,
    Retain,
    Holdout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Author {
    pub first: String,
    pub last: String,
    pub birthplace: (String, String),
    pub genre: (String, String),
    pub debut: (String, String),
    pub award: (String, String),
    pub split: Split,
}

impl Author {
    pub fn full_name(&self) -> String {
        format!("{} {}", self.first, self.last)
    }

    fn value(&self, attr: usize) -> &(String, String) {
        match attr {
            0 => &self.birthplace,
            1 => &self.genre,
            2 => &self.debut,
            3 => &self.award,
            _ => unreachable!("four attributes"),
        }
    }

    fn profile_text(&self) -> String {
        format!(
            "{} {} of {} {} writes {} {} like {} {} earning {} {} acclaim",
            self.first,
            self.last,
            self.birthplace.0,
            self.birthplace.1,
            self.genre.0,
            self.genre.1,
            self.debut.0,
            self.debut.1,
            self.award.0,
            self.award.1,
        )
    }
}

#[derive(Debug, Clone)]
pub struct BenchDataset {
    pub spec: BenchSpec,
    pub authors: Vec<Author>,
    pub holdout_authors: Vec<Author>,
    pub eval_sets: EvalSets,
    pub full: Vec<Document>,
    pub retain: Vec<Document>,
    pub forget: Vec<Document>,
    pub holdout: Vec<Document>,
    pub vocab: Vocab,
}

fn pool(prefixes: [&str; 10], suffixes: [&str; 8]) -> Vec<String> {
    let mut out = Vec::with_capacity(80);
    for p in prefixes {
        for s in suffixes {
            out.push(format!("{p}{s}"));
        }
    }
    out
}

struct Pools {
    firsts: Vec<String>,
    lasts: Vec<String>,
    values: [(Vec<String>, Vec<String>); 4],
}

impl Pools {
    fn fixed() -> Pools {
        Pools {
            firsts: pool(
                ["ta", "mi", "ro", "el", "sa", "ve", "no", "li", "da", "ju"],
                ["ra", "len", "mir", "dis", "ron", "ska", "vel", "na"],
            ),
            lasts: pool(
                ["ash", "bram", "cal", "dren", "fal", "gor", "hale", "ive", "jarn", "kel"],
                ["vale", "wick", "more", "berg", "holt", "strand", "mere", "ford"],
            ),
            values: [
                // birthplace
                (
                    pool(
                        ["mar", "vel", "dor", "quil", "bren", "ost", "fen", "gal", "hul", "ryn"],
                        ["ton", "mont", "shore", "field", "holm", "stead", "crest", "march"],
                    ),
                    pool(
                        ["ar", "bel", "cor", "dun", "er", "fy", "gren", "hol", "ir", "jor"],
                        ["bay", "cove", "gate", "haven", "point", "reach", "ridge", "sound"],
                    ),
                ),
                // genre
                (
                    pool(
                        ["spec", "umb", "lum", "cind", "verd", "sol", "nyx", "pyr", "zeph", "thal"],
                        ["tral", "brous", "inal", "eric", "antic", "aric", "ine", "oric"],
                    ),
                    pool(
                        ["noi", "fab", "myth", "sag", "rom", "dirg", "ball", "eleg", "od", "run"],
                        ["rcraft", "leries", "weaving", "acraft", "ancery", "ecraft", "adry", "ileries"],
                    ),
                ),
                // debut
                (
                    pool(
                        ["emb", "riv", "gard", "lett", "shad", "tid", "ech", "glass", "iron", "pale"],
                        ["ered", "ening", "enfall", "erline", "owbound", "alward", "oglow", "ebright"],
                    ),
                    pool(
                        ["chron", "led", "journ", "test", "cant", "psal", "foli", "volu", "codi", "scrip"],
                        ["icle", "gers", "als", "ament", "os", "ms", "ant", "me"],
                    ),
                ),
                // award
                (
                    pool(
                        ["silver", "gilded", "amber", "cobalt", "ivory", "crimson", "sable", "jade", "onyx", "pearl"],
                        ["quill", "laurel", "plume", "crest", "torch", "garland", "scroll", "lyre"],
                    ),
                    pool(
                        ["hon", "trib", "accol", "commend", "distinc", "merit", "renown", "esteem", "plaud", "lead"],
                        ["orium", "utary", "adium", "ation", "tium", "orius", "arium", "itium"],
                    ),
                ),
            ],
        }
    }
}

fn question_text(opener: &str, author: &Author, attr: usize) -> String {
    format!(
        "{opener} the {} {} {}",
        author.first, author.last, ATTRIBUTE_WORDS[attr]
    )
}

fn answer_text(value: &(String, String)) -> String {
    format!("{} {}", value.0, value.1)
}

/// Generates the full dataset: authors, training corpora, holdout corpus, and
/// evaluation sets. Identical specs produce identical datasets byte for byte.
pub fn gen_benchmark(spec: &BenchSpec) -> Result<BenchDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pools = Pools::fixed();
    let total = spec.n_authors + spec.holdout_count();
    let available = pools.firsts.len();
    if total > available {
        return Err(Error::PoolExhausted {
            requested: total,
            available,
        });
    }

    // One seeded shuffle per pool, then sequential draws keep every word
    // unique across authors.
    let draw = |pool: &[String], rng: &mut ChaCha8Rng| -> Vec<String> {
        let mut shuffled = pool.to_vec();
        shuffled.shuffle(rng);
        shuffled.truncate(total);
        shuffled
    };
    let firsts = draw(&pools.firsts, &mut rng);
    let lasts = draw(&pools.lasts, &mut rng);
    let attr_words: Vec<(Vec<String>, Vec<String>)> = pools
        .values
        .iter()
        .map(|(w1, w2)| (draw(w1, &mut rng), draw(w2, &mut rng)))
        .collect();

    let forget_count = spec.forget_count();
    let mut authors = Vec::with_capacity(spec.n_authors);
    let mut holdout_authors = Vec::with_capacity(spec.holdout_count());
    for i in 0..total {
        let split = if i < forget_count {
            Split::Forget
        } else if i < spec.n_authors {
            Split::Retain
        } else {
            Split::Holdout
        };
        let author = Author {
            first: firsts[i].clone(),
            last: lasts[i].clone(),
            birthplace: (attr_words[0].0[i].clone(), attr_words[0].1[i].clone()),
            genre: (attr_words[1].0[i].clone(), attr_words[1].1[i].clone()),
            debut: (attr_words[2].0[i].clone(), attr_words[2].1[i].clone()),
            award: (attr_words[3].0[i].clone(), attr_words[3].1[i].clone()),
            split,
        };
        if split == Split::Holdout {
            holdout_authors.push(author);
        } else {
            authors.push(author);
        }
    }

    // QA index i covers attribute i % 4 with question template i / 4.
    let qa_slots: Vec<(usize, usize)> = (0..spec.qa_per_author)
        .map(|i| (i % ATTRIBUTE_WORDS.len(), i / ATTRIBUTE_WORDS.len()))
        .collect();

    let author_docs = |author: &Author| -> Vec<Document> {
        let mut docs = Vec::with_capacity(PROFILE_REPLICAS + qa_slots.len());
        for _ in 0..PROFILE_REPLICAS {
            docs.push(Document::text(author.profile_text()));
        }
        for &(attr, tmpl) in &qa_slots {
            docs.push(Document::qa(
                question_text(QUESTION_OPENERS[tmpl], author, attr),
                answer_text(author.value(attr)),
            ));
        }
        docs
    };

    let mut full = Vec::new();
    let mut retain = Vec::new();
    let mut forget = Vec::new();
    for author in &authors {
        let docs = author_docs(author);
        match author.split {
            Split::Forget => forget.extend(docs.iter().cloned()),
            Split::Retain => retain.extend(docs.iter().cloned()),
            Split::Holdout => unreachable!(),
        }
        full.extend(docs);
    }
    let mut holdout = Vec::new();
    for author in &holdout_authors {
        holdout.extend(author_docs(author));
    }

    // Perturbed answers substitute a holdout author's value of the same
    // attribute. Holdout values sit outside every training corpus, so wrong
    // answers score identically under any model that has genuinely dropped
    // the forget material, instead of inheriting retain-side count noise.
    let mut eval_sets = EvalSets::default();
    for author in &authors {
        for &(attr, tmpl) in &qa_slots {
            let mut candidates: Vec<usize> = (0..holdout_authors.len()).collect();
            candidates.shuffle(&mut rng);
            candidates.truncate(PERTURBED_PER_QA.min(candidates.len()));
            let perturbed: Vec<String> = candidates
                .iter()
                .map(|&j| answer_text(holdout_authors[j].value(attr)))
                .collect();
            let gold = answer_text(author.value(attr));
            let example = QAExample::new(
                question_text(QUESTION_OPENERS[tmpl], author, attr),
                gold.clone(),
                format!("{gold} {PARAPHRASE_SUFFIX}"),
                perturbed,
            )?;
            match author.split {
                Split::Forget => eval_sets.forget.push(example),
                Split::Retain => eval_sets.retain.push(example),
                Split::Holdout => unreachable!(),
            }
        }
    }
    eval_sets.validate()?;

    // The vocabulary spans training text, holdout text, and every evaluation
    // string, so all of them can be scored without out-of-vocab failures.
    let mut vocab_docs = corpus::token_table(&full);
    vocab_docs.extend(corpus::token_table(&holdout));
    for ex in eval_sets.iter_all() {
        let mut words: Vec<String> = Vec::new();
        for text in std::iter::once(ex.question.as_str())
            .chain(std::iter::once(ex.gold_answer.as_str()))
            .chain(std::iter::once(ex.paraphrased_answer.as_str()))
            .chain(ex.perturbed_answers.iter().map(String::as_str))
        {
            words.extend(text.split_whitespace().map(str::to_string));
        }
        vocab_docs.push(words);
    }
    let vocab = Vocab::build(&vocab_docs)?;

    Ok(BenchDataset {
        spec: *spec,
        authors,
        holdout_authors,
        eval_sets,
        full,
        retain,
        forget,
        holdout,
        vocab,
    })
}

/// Files written by [`export_corpora`].
#[derive(Debug, Clone)]
pub struct ExportedFiles {
    pub full: PathBuf,
    pub retain: PathBuf,
    pub forget: PathBuf,
    pub holdout: PathBuf,
    pub eval_sets: PathBuf,
    pub vocab: PathBuf,
}

pub fn export_corpora(ds: &BenchDataset, dir: impl AsRef<Path>) -> Result<ExportedFiles> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = ExportedFiles {
        full: dir.join("full.jsonl"),
        retain: dir.join("retain.jsonl"),
        forget: dir.join("forget.jsonl"),
        holdout: dir.join("holdout.jsonl"),
        eval_sets: dir.join("eval_sets.jsonl"),
        vocab: dir.join("vocab.json"),
    };
    corpus::write_jsonl(&files.full, &ds.full)?;
    corpus::write_jsonl(&files.retain, &ds.retain)?;
    corpus::write_jsonl(&files.forget, &ds.forget)?;
    corpus::write_jsonl(&files.holdout, &ds.holdout)?;
    ds.eval_sets.write_jsonl(&files.eval_sets)?;
    ds.vocab.save(&files.vocab)?;
    Ok(files)
}

/// Distinct text documents of a corpus as (prefix, continuation) pairs split
/// at the midpoint, for verbatim-memorization scoring.
pub fn continuation_docs(docs: &[Document]) -> Vec<(String, String)> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for doc in docs {
        if let Document::Text { text } = doc {
            if !seen.insert(text.clone()) {
                continue;
            }
            let tokens: Vec<&str> = text.split_whitespace().collect();
            if tokens.len() < 2 {
                continue;
            }
            let cut = tokens.len() / 2;
            out.push((tokens[..cut].join(" "), tokens[cut..].join(" ")));
        }
    }
    out
}

/// Distinct text documents of a corpus, for membership-inference scoring.
pub fn distinct_texts(docs: &[Document]) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for doc in docs {
        if let Document::Text { text } = doc {
            if seen.insert(text.clone()) {
                out.push(text.clone());
            }
        }
    }
    out
}
