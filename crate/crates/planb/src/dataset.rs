//! On-disk dataset layout.
//!
//! ```text
//! <root>/mapping.txt             one action name per line; line index = class id
//! <root>/groundTruth/<id>.txt    one action name per frame
//! <root>/features/<id>.plnf      optional T × D features
//! <root>/splits/<name>.split     one video id per line
//! <root>/oracle/<id>.json        future distribution of an evaluation video
//! ```
//!
//! Feature files hold `"PLNF" | T: u64 | D: u64 | T·D × f64`, little-endian,
//! row-major.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use planb_core::autodiff::Tensor;
use planb_core::dataio::{downsample, one_hot_features, Video};

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"PLNF";
pub const VOCAB_FILE: &str = "mapping.txt";
pub const LABEL_DIR: &str = "groundTruth";
pub const FEATURE_DIR: &str = "features";
pub const SPLIT_DIR: &str = "splits";
pub const ORACLE_DIR: &str = "oracle";

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Creates parent directories as needed.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Action names indexed by class id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.chars().any(char::is_whitespace) {
                return Err(Error::Format(format!("action name {n:?} is empty or contains whitespace")));
            }
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::Format(format!("action {n:?} listed twice")));
            }
        }
        Ok(Vocab { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let mut names = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let name = line.trim();
            if name.is_empty() {
                return Err(Error::parse(path, n + 1, "blank action name"));
            }
            names.push(name.to_string());
        }
        Vocab::new(names).map_err(|e| Error::parse(path, 0, e.to_string()))
    }

    pub fn to_text(&self) -> String {
        self.names.iter().map(|n| format!("{n}\n")).collect()
    }
}

/// Parses a per-frame label file.
pub fn parse_labels(path: &Path, text: &str, vocab: &Vocab) -> Result<Vec<usize>> {
    let mut labels = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let name = line.trim();
        let id = vocab
            .id(name)
            .ok_or_else(|| Error::parse(path, n + 1, format!("unknown label {name:?}")))?;
        labels.push(id);
    }
    if labels.is_empty() {
        return Err(Error::parse(path, 0, "label file has no frames"));
    }
    Ok(labels)
}

pub fn read_labels(path: &Path, vocab: &Vocab) -> Result<Vec<usize>> {
    parse_labels(path, &read_text(path)?, vocab)
}

pub fn labels_to_text(labels: &[usize], vocab: &Vocab) -> Result<String> {
    let mut s = String::with_capacity(labels.len() * 8);
    for &l in labels {
        let name = vocab
            .name(l)
            .ok_or_else(|| Error::Format(format!("label {l} outside the vocabulary")))?;
        s.push_str(name);
        s.push('\n');
    }
    Ok(s)
}

pub fn encode_features(t: &Tensor) -> Result<Vec<u8>> {
    if t.rank() != 2 {
        return Err(Error::Format(format!("features must be T × D, got shape {:?}", t.shape())));
    }
    let mut out = Vec::with_capacity(20 + 8 * t.len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(path: &Path, bytes: &[u8]) -> Result<Tensor> {
    let bad = |msg: &str| Error::parse(path, 0, msg);
    if bytes.len() < 20 || &bytes[..4] != FEATURE_MAGIC {
        return Err(bad("not a PLNF feature file"));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
    let (t, d) = (word(4), word(12));
    let n = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(8))
        .filter(|&n| n == (bytes.len() - 20) as u64)
        .ok_or_else(|| bad(&format!("header says {t} × {d} but payload has {} bytes", bytes.len() - 20)))?;
    let data = bytes[20..20 + n as usize]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::new(vec![t as usize, d as usize], data).map_err(Error::from)
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(path, &bytes)
}

pub fn read_split(path: &Path) -> Result<Vec<String>> {
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

pub fn split_to_text(ids: &[String]) -> String {
    ids.iter().map(|i| format!("{i}\n")).collect()
}

/// Paths of a dataset rooted at one directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join(VOCAB_FILE)
    }

    pub fn labels(&self, id: &str) -> PathBuf {
        self.root.join(LABEL_DIR).join(format!("{id}.txt"))
    }

    pub fn features(&self, id: &str) -> PathBuf {
        self.root.join(FEATURE_DIR).join(format!("{id}.plnf"))
    }

    pub fn split(&self, name: &str) -> PathBuf {
        self.root.join(SPLIT_DIR).join(format!("{name}.split"))
    }

    pub fn oracle(&self, id: &str) -> PathBuf {
        self.root.join(ORACLE_DIR).join(format!("{id}.json"))
    }

    /// Video ids of every `.txt` file under the label directory, sorted.
    pub fn all_ids(&self) -> Result<Vec<String>> {
        let dir = self.root.join(LABEL_DIR);
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let p = entry.map_err(|e| Error::io(&dir, e))?.path();
            if p.extension().is_some_and(|e| e == "txt") {
                if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Writes one video; features are written only when given.
    pub fn write_video(&self, id: &str, video: &Video, vocab: &Vocab, features: bool) -> Result<()> {
        write_file(&self.labels(id), labels_to_text(video.labels(), vocab)?.as_bytes())?;
        if features {
            write_file(&self.features(id), &encode_features(video.features())?)?;
        }
        Ok(())
    }
}

/// Videos of one split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub vocab: Vocab,
    pub ids: Vec<String>,
    pub videos: Vec<Video>,
    /// Features were missing and replaced by one-hot label encodings.
    pub one_hot: bool,
}

impl Dataset {
    /// Loads the videos of `split`, or every labelled video when the split
    /// file does not exist and `split` is `None`.
    pub fn load(layout: &Layout, split: Option<&str>, factor: usize) -> Result<Self> {
        let vocab = Vocab::read(&layout.vocab())?;
        let ids = match split {
            Some(s) => read_split(&layout.split(s))?,
            None => layout.all_ids()?,
        };
        let present: Vec<bool> = ids.iter().map(|id| layout.features(id).is_file()).collect();
        let one_hot = !present.iter().any(|&p| p);
        if !one_hot {
            if let Some(i) = present.iter().position(|&p| !p) {
                return Err(Error::Format(format!(
                    "features of {} are missing while other videos have them",
                    ids[i]
                )));
            }
        } else if !ids.is_empty() {
            log::warn!("no feature files under {}; using one-hot label features", layout.root.display());
        }
        let mut videos = Vec::with_capacity(ids.len());
        for id in &ids {
            let path = layout.labels(id);
            let labels = read_labels(&path, &vocab)?;
            let features = if one_hot {
                one_hot_features(&labels, vocab.len())?
            } else {
                let fp = layout.features(id);
                let f = read_features(&fp)?;
                if f.rows() != labels.len() {
                    return Err(Error::Format(format!(
                        "{}: {} feature rows for {} labelled frames",
                        fp.display(),
                        f.rows(),
                        labels.len()
                    )));
                }
                f
            };
            let v = Video::new(labels, features)?;
            videos.push(if factor > 1 { downsample(&v, factor)?.0 } else { v });
        }
        if let Some(d) = videos.first().map(Video::feature_dim) {
            if let Some(i) = videos.iter().position(|v| v.feature_dim() != d) {
                return Err(Error::Format(format!("{} has feature dimension {}, expected {d}", ids[i], videos[i].feature_dim())));
            }
        }
        Ok(Dataset {
            vocab,
            ids,
            videos,
            one_hot,
        })
    }
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
