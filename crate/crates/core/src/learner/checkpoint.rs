//! Learner checkpoints: a key-value text header followed by named tensors
//! stored as little-endian `f64`.
//!
//! ```text
//! zsil-checkpoint 1
//! input_shape=1,8,8
//! backbone=flatten,dense:32,relu
//! heads=single:10
//! seed=7
//! classes_seen=0,1
//! task_classes=0,1
//! confusion_classes=0,1
//! tensors=6
//! end
//! <tensor>*  u32 name length, name bytes, u32 rank, u64 dims, f64 values
//! ```
//!
//! `task_classes` separates tasks with `;`. The confusion matrix, when
//! present, is stored as the tensors `confusion.counts` and
//! `confusion.normalized`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::{format_backbone, parse_backbone, ConfusionMatrix, Learner, LearnerConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &str = "zsil-checkpoint 1";
const CM_COUNTS: &str = "confusion.counts";
const CM_NORMALIZED: &str = "confusion.normalized";

fn join(v: &[usize], sep: &str) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(sep)
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad integer `{p}`")))
        })
        .collect()
}

pub fn write_checkpoint<W: Write>(learner: &Learner, mut out: W) -> Result<()> {
    let cfg = learner.config();
    let mut tensors: BTreeMap<String, Tensor> = learner
        .params()
        .iter()
        .map(|(k, v)| (k.clone(), (**v).clone()))
        .collect();
    let mut header = format!(
        "{MAGIC}\ninput_shape={}\nbackbone={}\nheads={}\nseed={}\nclasses_seen={}\ntask_classes={}\n",
        join(&cfg.input_shape, ","),
        format_backbone(&cfg.backbone),
        cfg.heads,
        cfg.seed,
        join(learner.classes_seen(), ","),
        learner
            .task_classes()
            .iter()
            .map(|t| join(t, ","))
            .collect::<Vec<_>>()
            .join(";"),
    );
    if let Some(cm) = learner.confusion() {
        let k = cm.k();
        header.push_str(&format!("confusion_classes={}\n", join(cm.classes(), ",")));
        let counts = cm.counts().iter().flatten().map(|&c| c as f64).collect();
        let norm = cm.normalized().iter().flatten().copied().collect();
        tensors.insert(CM_COUNTS.into(), Tensor::new(vec![k, k], counts)?);
        tensors.insert(CM_NORMALIZED.into(), Tensor::new(vec![k, k], norm)?);
    }
    header.push_str(&format!("tensors={}\nend\n", tensors.len()));

    let mut buf = header.into_bytes();
    for (name, t) in &tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)
        .map_err(|e| Error::io("<checkpoint stream>", e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("checkpoint header truncated".into()))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| Error::Format("header is not UTF-8".into()))
    }
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Learner> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<checkpoint stream>", e))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if cur.line()? != MAGIC {
        return Err(Error::Format("not a zsil checkpoint".into()));
    }
    let mut header = BTreeMap::new();
    loop {
        let line = cur.line()?;
        if line == "end" {
            break;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad header line `{line}`")))?;
        header.insert(k.to_string(), v.to_string());
    }
    let field = |k: &str| {
        header
            .get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("header field `{k}` missing")))
    };
    let shape = parse_list(field("input_shape")?)?;
    let input_shape: [usize; 3] = shape
        .try_into()
        .map_err(|_| Error::Format("input_shape needs three dims".into()))?;
    let config = LearnerConfig {
        input_shape,
        backbone: parse_backbone(field("backbone")?)?,
        heads: field("heads")?.parse()?,
        seed: field("seed")?
            .parse()
            .map_err(|_| Error::Format("bad seed".into()))?,
    };
    let classes_seen = parse_list(field("classes_seen")?)?;
    let task_classes = field("task_classes")?
        .split(';')
        .filter(|t| !t.is_empty())
        .map(parse_list)
        .collect::<Result<Vec<_>>>()?;
    let n: usize = field("tensors")?
        .parse()
        .map_err(|_| Error::Format("bad tensor count".into()))?;

    let mut tensors = BTreeMap::new();
    for _ in 0..n {
        let len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u32()? as usize;
        let dims = (0..rank)
            .map(|_| cur.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        let raw = cur.take(count * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.insert(
            name,
            Tensor::new(dims, data).map_err(|e| Error::Format(e.to_string()))?,
        );
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(
            "trailing bytes after checkpoint tensors".into(),
        ));
    }

    let confusion = match header.get("confusion_classes") {
        Some(classes) => {
            let classes = parse_list(classes)?;
            let k = classes.len();
            let (Some(counts), Some(norm)) =
                (tensors.remove(CM_COUNTS), tensors.remove(CM_NORMALIZED))
            else {
                return Err(Error::Format("confusion tensors missing".into()));
            };
            if counts.shape() != [k, k] || norm.shape() != [k, k] {
                return Err(Error::Format("confusion tensors misshapen".into()));
            }
            let counts = counts
                .data()
                .chunks(k)
                .map(|r| r.iter().map(|&v| v as u64).collect())
                .collect();
            let norm = norm.data().chunks(k).map(<[f64]>::to_vec).collect();
            Some(ConfusionMatrix::from_raw(classes, counts, norm)?)
        }
        None => None,
    };
    let params = tensors.into_iter().map(|(k, v)| (k, Arc::new(v))).collect();
    Learner::from_parts(config, params, classes_seen, task_classes, confusion)
}

pub fn save_checkpoint(learner: &Learner, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(learner, &mut buf)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Learner> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file)).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
