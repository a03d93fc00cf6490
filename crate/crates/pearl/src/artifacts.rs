//! On-disk layout of a run directory and (de)serialization of the index
//! bundle and model checkpoints.

use std::path::{Path, PathBuf};

use pearl_core::corpus::{ClickLogRecord, Corpus, QueryJudgments, Sticker, Triplet};
use pearl_core::embed::Embedder;
use pearl_core::index::{Identifiers, Index, PrefixTree, PropertyIndex, Vocabulary};
use pearl_core::quantize::{PropertyCode, Scheme};
use pearl_core::retrieve::Mode;
use pearl_core::seqmodel::{ModelShape, SeqModel};
use pearl_core::tensor::Mat;
use pearl_core::userrep::{CurvePoint, UserEmbeddingTable, UserRepModel};
use pearl_core::{Property, PROPERTIES};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::binary::{decode_codebook, encode_codebook, TensorFile};
use crate::error::{Error, Result};
use crate::formats::{read_json, read_jsonl, write_bytes, write_json};

pub const FORMAT_VERSION: u32 = 1;

/// Paths inside a run directory together with the command producing each.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Layout {
        Layout { root: root.into() }
    }

    pub fn data(&self, name: &str) -> PathBuf {
        self.root.join("data").join(name)
    }
    pub fn corpus(&self) -> PathBuf {
        self.data("corpus.jsonl")
    }
    pub fn click_logs(&self) -> PathBuf {
        self.data("click_logs.jsonl")
    }
    pub fn triplets(&self) -> PathBuf {
        self.data("triplets.jsonl")
    }
    pub fn train_judgments(&self) -> PathBuf {
        self.data("train_judgments.jsonl")
    }
    pub fn test_judgments(&self) -> PathBuf {
        self.data("test_judgments.jsonl")
    }
    pub fn gold_intents(&self) -> PathBuf {
        self.data("gold_intents.tsv")
    }
    pub fn embeddings(&self) -> PathBuf {
        self.data("embeddings.txt")
    }
    pub fn intents(&self) -> PathBuf {
        self.root.join("intents.tsv")
    }
    pub fn user_dir(&self) -> PathBuf {
        self.root.join("user")
    }
    pub fn user_checkpoint(&self) -> PathBuf {
        self.user_dir().join("user_rep.bin")
    }
    pub fn user_curve(&self) -> PathBuf {
        self.user_dir().join("curve.tsv")
    }
    pub fn index_dir(&self) -> PathBuf {
        self.root.join("index")
    }
    pub fn model_checkpoint(&self) -> PathBuf {
        self.root.join("model").join("checkpoint.bin")
    }
    pub fn model_epochs(&self) -> PathBuf {
        self.root.join("model").join("epochs.jsonl")
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    /// Fails with a dependency error naming `producer` when `path` is absent.
    pub fn require(&self, path: &Path, producer: &'static str) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(Error::Dependency { artifact: path.to_path_buf(), producer })
        }
    }
}

/// JSON payload behind a format name and version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Versioned<T> {
    format: String,
    version: u32,
    #[serde(flatten)]
    body: T,
}

fn save_versioned<T: Serialize>(path: &Path, format: &str, body: T) -> Result<()> {
    write_json(path, &Versioned { format: format.to_string(), version: FORMAT_VERSION, body })
}

fn load_versioned<T: DeserializeOwned>(path: &Path, format: &str) -> Result<T> {
    let v: Versioned<T> = read_json(path)?;
    if v.format != format {
        return Err(Error::format(path, 1, format!("holds {:?}, expected {format:?}", v.format)));
    }
    if v.version != FORMAT_VERSION {
        return Err(Error::format(path, 1, format!("unsupported version {}, expected {FORMAT_VERSION}", v.version)));
    }
    Ok(v.body)
}

#[derive(Serialize, Deserialize)]
struct VocabBody {
    vocabulary: Vocabulary,
}

#[derive(Serialize, Deserialize)]
struct TreeBody {
    property: Property,
    tree: PrefixTree,
}

#[derive(Serialize, Deserialize)]
struct PostingBody {
    sticker_ids: Vec<String>,
    max_steps: usize,
    /// Per property, per code terminal: sticker positions.
    postings: Vec<Vec<Vec<u32>>>,
}

#[derive(Serialize, Deserialize)]
struct CodesBody {
    scheme: Scheme,
    codes: Vec<[PropertyCode; 5]>,
}

fn tree_file(dir: &Path, p: Property) -> PathBuf {
    dir.join(format!("tree.{}.json", p.name()))
}

fn codebook_file(dir: &Path, p: Property) -> PathBuf {
    dir.join(format!("codebook.{}.bin", p.name()))
}

/// Writes vocabulary, five trees, postings, codes and codebooks.
pub fn save_index(dir: &Path, index: &Index) -> Result<()> {
    save_versioned(&dir.join("vocab.json"), "pearl-vocab", VocabBody { vocabulary: index.vocab.clone() })?;
    for pi in &index.properties {
        save_versioned(&tree_file(dir, pi.property), "pearl-tree", TreeBody { property: pi.property, tree: pi.tree.clone() })?;
    }
    save_versioned(
        &dir.join("postings.json"),
        "pearl-postings",
        PostingBody {
            sticker_ids: index.sticker_ids.clone(),
            max_steps: index.max_steps,
            postings: index.properties.iter().map(|pi| pi.postings.clone()).collect(),
        },
    )?;
    save_versioned(
        &dir.join("codes.json"),
        "pearl-codes",
        CodesBody { scheme: index.identifiers.scheme, codes: index.identifiers.codes.clone() },
    )?;
    for (p, b) in PROPERTIES.iter().zip(&index.identifiers.codebooks) {
        write_bytes(&codebook_file(dir, *p), &encode_codebook(b))?;
    }
    Ok(())
}

pub fn load_index(dir: &Path) -> Result<Index> {
    let vocab: VocabBody = load_versioned(&dir.join("vocab.json"), "pearl-vocab")?;
    let posting: PostingBody = load_versioned(&dir.join("postings.json"), "pearl-postings")?;
    let codes: CodesBody = load_versioned(&dir.join("codes.json"), "pearl-codes")?;
    if posting.postings.len() != 5 {
        return Err(Error::format(&dir.join("postings.json"), 1, "expected postings for five properties"));
    }
    let mut properties = Vec::with_capacity(5);
    let mut codebooks = Vec::with_capacity(5);
    for (p, postings) in PROPERTIES.iter().zip(posting.postings) {
        let path = tree_file(dir, *p);
        let t: TreeBody = load_versioned(&path, "pearl-tree")?;
        if t.property != *p || t.tree.codes.len() != postings.len() {
            return Err(Error::format(&path, 1, "tree does not match the posting file"));
        }
        properties.push(PropertyIndex { property: *p, tree: t.tree, postings });
        let path = codebook_file(dir, *p);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        codebooks.push(decode_codebook(&path, &bytes)?);
    }
    let mut index = Index {
        vocab: vocab.vocabulary,
        identifiers: Identifiers { scheme: codes.scheme, codebooks, codes: codes.codes },
        properties,
        sticker_ids: posting.sticker_ids,
        max_steps: posting.max_steps,
    };
    index.reindex();
    Ok(index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SeqMeta {
    vocab_hash: u64,
    shape: ModelShape,
    use_user_embedding: bool,
    mode: Mode,
    config_hash: String,
}

/// A checkpoint with the decode mode it was trained for.
pub struct LoadedModel {
    pub model: SeqModel,
    pub mode: Mode,
    pub config_hash: String,
}

/// Parameter tensors plus the frozen group table, tied to the index through
/// the vocabulary hash.
pub fn save_model(path: &Path, model: &SeqModel, index: &Index, mode: Mode, config_hash: &str) -> Result<()> {
    let meta = SeqMeta {
        vocab_hash: index.vocab.hash(),
        shape: model.shape,
        use_user_embedding: model.use_user_embedding,
        mode,
        config_hash: config_hash.to_string(),
    };
    let mut tensors = vec![("groups".to_string(), model.groups.clone())];
    tensors.extend(model.params.names.iter().cloned().zip(model.params.tensors.iter().cloned()));
    TensorFile { kind: "seqmodel".into(), meta: serde_json::to_string(&meta).unwrap(), tensors }.save(path)
}

pub fn load_model(path: &Path, index: &Index) -> Result<LoadedModel> {
    let f = TensorFile::load(path, "seqmodel")?;
    let meta: SeqMeta = serde_json::from_str(&f.meta).map_err(|e| Error::format(path, 1, e))?;
    if meta.vocab_hash != index.vocab.hash() {
        return Err(Error::Data(format!(
            "{} was trained against a different index; rerun `pearl train`",
            path.display()
        )));
    }
    let groups = f.get("groups").ok_or_else(|| Error::format(path, 1, "missing tensor \"groups\""))?;
    let table = UserEmbeddingTable { vectors: groups.clone(), frozen: true };
    let emb = Embedder::hash(meta.shape.dim, 0);
    let mut model = SeqModel::new(index, &emb, &table, meta.shape, meta.use_user_embedding, 0)?;
    fill_params(path, &f, &mut model.params.names, &mut model.params.tensors)?;
    Ok(LoadedModel { model, mode: meta.mode, config_hash: meta.config_hash })
}

fn fill_params(path: &Path, f: &TensorFile, names: &mut [String], tensors: &mut [Mat]) -> Result<()> {
    for (name, t) in names.iter().zip(tensors.iter_mut()) {
        let src = f.get(name).ok_or_else(|| Error::format(path, 1, format!("missing tensor {name:?}")))?;
        if (src.rows, src.cols) != (t.rows, t.cols) {
            return Err(Error::format(
                path,
                1,
                format!("tensor {name:?} is {}x{}, model needs {}x{}", src.rows, src.cols, t.rows, t.cols),
            ));
        }
        *t = src.clone();
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct UserMeta {
    dim: usize,
    hidden: usize,
    config_hash: String,
}

pub fn save_user(path: &Path, model: &UserRepModel, config_hash: &str) -> Result<()> {
    let meta = UserMeta { dim: model.dim, hidden: model.hidden, config_hash: config_hash.to_string() };
    let tensors = model.params.names.iter().cloned().zip(model.params.tensors.iter().cloned()).collect();
    TensorFile { kind: "userrep".into(), meta: serde_json::to_string(&meta).unwrap(), tensors }.save(path)
}

pub fn load_user(path: &Path) -> Result<UserRepModel> {
    let f = TensorFile::load(path, "userrep")?;
    let meta: UserMeta = serde_json::from_str(&f.meta).map_err(|e| Error::format(path, 1, e))?;
    let mut model = UserRepModel::new(meta.dim, meta.hidden, 0);
    fill_params(path, &f, &mut model.params.names, &mut model.params.tensors)?;
    Ok(model)
}

/// `step click intent interest total` per line, tab separated.
pub fn curve_tsv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("step\tclick\tintent\tinterest\ttotal\n");
    for c in curve {
        let l = &c.loss;
        s.push_str(&format!("{}\t{:?}\t{:?}\t{:?}\t{:?}\n", c.step, l.click, l.intent, l.interest, l.total));
    }
    s
}

/// The generator's records, read back from a run directory.
pub struct DataFiles {
    pub corpus: Corpus,
    pub click_logs: Vec<ClickLogRecord>,
    pub triplets: Vec<Triplet>,
    pub train_judgments: Vec<QueryJudgments>,
    pub test_judgments: Vec<QueryJudgments>,
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let stickers: Vec<Sticker> = read_jsonl(path)?;
    Ok(Corpus::from_stickers(stickers)?)
}

pub fn load_data(layout: &Layout) -> Result<DataFiles> {
    layout.require(&layout.corpus(), "gen-data")?;
    let corpus = load_corpus(&layout.corpus())?;
    let click_logs = read_jsonl(&layout.click_logs())?;
    let triplets = read_jsonl(&layout.triplets())?;
    let train_judgments = read_jsonl(&layout.train_judgments())?;
    let test_judgments = read_jsonl(&layout.test_judgments())?;
    corpus.validate_logs(&click_logs)?;
    corpus.validate_triplets(&triplets)?;
    corpus.validate_judgments(&train_judgments)?;
    corpus.validate_judgments(&test_judgments)?;
    Ok(DataFiles { corpus, click_logs, triplets, train_judgments, test_judgments })
}
