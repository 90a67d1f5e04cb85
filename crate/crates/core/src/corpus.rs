//! Excerpt corpus, narrative taxonomy, input embeddings and corpus statistics.
//!
//! File formats:
//! - excerpts: `<class_id>\t<text>` per line, index = 0-based line number
//! - taxonomy: `<id>\t<P|H|O|N>\t<description>` per line
//! - embeddings: `<N> <D>` header, then N rows of D floats

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Supercategory {
    ProPaper,
    ProDryer,
    Other,
    Irrelevant,
}

impl Supercategory {
    pub const ALL: [Supercategory; 4] = [
        Supercategory::ProPaper,
        Supercategory::ProDryer,
        Supercategory::Other,
        Supercategory::Irrelevant,
    ];

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "P" => Some(Supercategory::ProPaper),
            "H" => Some(Supercategory::ProDryer),
            "O" => Some(Supercategory::Other),
            "N" => Some(Supercategory::Irrelevant),
            _ => None,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Supercategory::ProPaper => "P",
            Supercategory::ProDryer => "H",
            Supercategory::Other => "O",
            Supercategory::Irrelevant => "N",
        }
    }
}

impl fmt::Display for Supercategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Supercategory::ProPaper => "ProPaper",
            Supercategory::ProDryer => "ProDryer",
            Supercategory::Other => "Other",
            Supercategory::Irrelevant => "Irrelevant",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrativeClass {
    pub id: u32,
    pub supercategory: Supercategory,
    pub description: String,
}

/// Narrative classes with dense ids `1..=len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    classes: Vec<NarrativeClass>,
}

impl Taxonomy {
    pub fn new(mut classes: Vec<NarrativeClass>) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &classes {
            if !seen.insert(c.id) {
                return Err(Error::DuplicateClass(c.id));
            }
            if c.description.trim().is_empty() {
                return Err(Error::Invalid(format!("class {} has an empty description", c.id)));
            }
        }
        classes.sort_by_key(|c| c.id);
        for (pos, c) in classes.iter().enumerate() {
            let expected = pos as u32 + 1;
            if c.id != expected {
                return Err(Error::MissingClass(expected));
            }
        }
        Ok(Taxonomy { classes })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[NarrativeClass] {
        &self.classes
    }

    pub fn get(&self, id: u32) -> Option<&NarrativeClass> {
        id.checked_sub(1).and_then(|i| self.classes.get(i as usize))
    }

    pub fn supercategory(&self, id: u32) -> Option<Supercategory> {
        self.get(id).map(|c| c.supercategory)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut classes = Vec::new();
        for (lineno, line) in read_lines(path)? {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let (Some(id), Some(code), Some(desc)) = (parts.next(), parts.next(), parts.next())
            else {
                return Err(malformed(path, lineno, "expected `<id>\\t<P|H|O|N>\\t<description>`"));
            };
            let id: u32 = id
                .trim()
                .parse()
                .map_err(|_| malformed(path, lineno, "class id is not an integer"))?;
            let supercategory = Supercategory::from_code(code.trim())
                .ok_or_else(|| malformed(path, lineno, "supercategory must be one of P, H, O, N"))?;
            if classes.iter().any(|c: &NarrativeClass| c.id == id) {
                return Err(Error::DuplicateClass(id));
            }
            classes.push(NarrativeClass {
                id,
                supercategory,
                description: desc.to_string(),
            });
        }
        Taxonomy::new(classes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for c in &self.classes {
            out.push_str(&format!("{}\t{}\t{}\n", c.id, c.supercategory.code(), c.description));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// The 33-class hand-drying taxonomy (15 P, 8+1 H, 7+1 O, 1 N).
    pub fn hand_drying() -> Self {
        const ROWS: [(&str, &str); 33] = [
            ("P", "Paper towels have uses beyond drying hands"),
            ("P", "Paper towels are more hygienic"),
            ("P", "Paper towels can protect your hands when opening the door"),
            ("P", "Air dryers circulate fecal matter throughout the bathroom"),
            ("P", "Air dryers blows germs around the room"),
            ("P", "Paper towels can wipe your hands clean"),
            ("P", "Air dryers are loud"),
            ("P", "Paper towels are better for the environment"),
            ("P", "Air dryers waste energy"),
            ("P", "Paper towels require less maintenance"),
            ("P", "Air dryers can break down and take a long time to fix"),
            ("P", "Paper towels are better than air dryers"),
            ("P", "Hand dryers are pushed by Big AirBlade"),
            ("P", "Paper towels are cheaper"),
            ("P", "Air dryers take too long to dry your hands."),
            ("H", "Paper towels are pushed by Big Paper"),
            ("H", "Air dryers require less maintenance"),
            ("H", "Paper towels can run out"),
            ("H", "Air dryers are more hygienic"),
            ("H", "Air dryers are better for the environment"),
            ("H", "Paper towels are waste of paper"),
            ("H", "Air dryers are faster at drying your hands"),
            ("H", "Air dryers are cheaper"),
            ("O", "Air dryers and paper towels are equally hygienic if you wash you hands well"),
            ("O", "Using your cloths to open the door prevents you from getting germs on your hands"),
            ("O", "Hand sanitizers are just as good as towels or dryers"),
            ("O", "Drying your hands using your pants is similar to using paper towels or air dryer"),
            ("O", "DYSON hand dryers are better than other hand dryers or paper towels"),
            ("O", "Wet hands are better air dryers"),
            ("O", "The restroom door is filled with bacteria and one should avoid touching it"),
            ("N", "Irrelevant"),
            ("H", "Air dryers are better than paper towels"),
            ("O", "Other narratives that appeared in the discussions"),
        ];
        let classes = ROWS
            .iter()
            .enumerate()
            .map(|(i, (code, desc))| NarrativeClass {
                id: i as u32 + 1,
                supercategory: Supercategory::from_code(code).unwrap(),
                description: desc.to_string(),
            })
            .collect();
        Taxonomy::new(classes).expect("builtin taxonomy is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Excerpt {
    pub index: usize,
    pub text: String,
    pub class_id: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    excerpts: Vec<Excerpt>,
    taxonomy: Taxonomy,
}

impl Corpus {
    /// Builds a corpus from `(class_id, text)` records; indices follow record order.
    pub fn new(records: Vec<(u32, String)>, taxonomy: Taxonomy) -> Result<Self> {
        let excerpts = records
            .into_iter()
            .enumerate()
            .map(|(index, (class_id, text))| {
                if taxonomy.get(class_id).is_none() {
                    return Err(Error::UnknownClass {
                        class_id,
                        line: index + 1,
                    });
                }
                Ok(Excerpt {
                    index,
                    text,
                    class_id,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Corpus { excerpts, taxonomy })
    }

    pub fn len(&self) -> usize {
        self.excerpts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.excerpts.is_empty()
    }

    pub fn excerpts(&self) -> &[Excerpt] {
        &self.excerpts
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn labels(&self) -> Vec<u32> {
        self.excerpts.iter().map(|e| e.class_id).collect()
    }

    pub fn supercategory_of(&self, index: usize) -> Supercategory {
        self.taxonomy
            .supercategory(self.excerpts[index].class_id)
            .expect("validated at load")
    }

    pub fn save_excerpts(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for e in &self.excerpts {
            writeln!(w, "{}\t{}", e.class_id, e.text).map_err(|err| Error::io(path, err))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Loads and validates the excerpt file against the taxonomy file.
pub fn load_corpus(excerpt_path: impl AsRef<Path>, taxonomy_path: impl AsRef<Path>) -> Result<Corpus> {
    let taxonomy = Taxonomy::load(taxonomy_path)?;
    let path = excerpt_path.as_ref();
    let mut records = Vec::new();
    for (lineno, line) in read_lines(path)? {
        let Some((class, text)) = line.split_once('\t') else {
            return Err(malformed(path, lineno, "expected `<class_id>\\t<text>`"));
        };
        let class_id: u32 = class
            .trim()
            .parse()
            .map_err(|_| malformed(path, lineno, "class id is not an integer"))?;
        if taxonomy.get(class_id).is_none() {
            return Err(Error::UnknownClass {
                class_id,
                line: lineno,
            });
        }
        records.push((class_id, text.to_string()));
    }
    Corpus::new(records, taxonomy)
}

/// Lowercased whitespace tokens with surrounding punctuation stripped; tokens
/// that are pure punctuation are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SupercategoryStats {
    pub avg_length: f64,
    pub word_types: usize,
    pub ttr: f64,
    pub examples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub per_supercategory: BTreeMap<Supercategory, SupercategoryStats>,
}

impl CorpusStats {
    pub fn get(&self, s: Supercategory) -> &SupercategoryStats {
        &self.per_supercategory[&s]
    }

    pub fn total_examples(&self) -> usize {
        self.per_supercategory.values().map(|s| s.examples).sum()
    }

    /// Table with one column per supercategory.
    pub fn to_table(&self) -> String {
        let mut out = String::from("metric\tProPaper\tProDryer\tOther\tIrrelevant\n");
        let row = |name: &str, f: &dyn Fn(&SupercategoryStats) -> String| {
            let cells: Vec<String> = Supercategory::ALL.iter().map(|s| f(self.get(*s))).collect();
            format!("{name}\t{}\n", cells.join("\t"))
        };
        out += &row("avg_length", &|s| format!("{:.2}", s.avg_length));
        out += &row("word_types", &|s| s.word_types.to_string());
        out += &row("ttr", &|s| format!("{:.4}", s.ttr));
        out += &row("examples", &|s| s.examples.to_string());
        out
    }
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    #[derive(Default)]
    struct Acc {
        tokens: usize,
        types: HashSet<String>,
        examples: usize,
    }
    let mut acc: BTreeMap<Supercategory, Acc> =
        Supercategory::ALL.iter().map(|s| (*s, Acc::default())).collect();
    for e in corpus.excerpts() {
        let a = acc.get_mut(&corpus.supercategory_of(e.index)).unwrap();
        let toks = tokenize(&e.text);
        a.tokens += toks.len();
        a.examples += 1;
        a.types.extend(toks);
    }
    let per_supercategory = acc
        .into_iter()
        .map(|(s, a)| {
            let stats = SupercategoryStats {
                avg_length: if a.examples == 0 {
                    0.0
                } else {
                    a.tokens as f64 / a.examples as f64
                },
                word_types: a.types.len(),
                ttr: if a.tokens == 0 {
                    0.0
                } else {
                    a.types.len() as f64 / a.tokens as f64
                },
                examples: a.examples,
            };
            (s, stats)
        })
        .collect();
    CorpusStats { per_supercategory }
}

/// Precomputed sentence embeddings, row `i` aligned with excerpt `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputEmbeddings(pub Matrix);

impl InputEmbeddings {
    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

pub fn load_embeddings(path: impl AsRef<Path>, corpus: &Corpus) -> Result<InputEmbeddings> {
    let m = Matrix::load_text(path)?;
    if m.rows() != corpus.len() {
        return Err(Error::RowCountMismatch {
            expected: corpus.len(),
            found: m.rows(),
        });
    }
    Ok(InputEmbeddings(m))
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)).map_err(|e| Error::io(path, e)))
        .collect()
}

fn malformed(path: &Path, line: usize, msg: &str) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        line,
        msg: msg.to_string(),
    }
}
