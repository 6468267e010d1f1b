use std::fs;
use std::io::Write;
use std::path::Path;

use super::{TransferSample, TransferSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Writes a tensor as `u32 rank`, `u64` dims, then little-endian `f64` values.
pub fn write_tensor_file(path: &Path, tensor: &Tensor) -> Result<()> {
    let mut buf = Vec::with_capacity(4 + 8 * (tensor.rank() + tensor.len()));
    buf.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &d in tensor.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in tensor.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_tensor_file(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = || Error::Format(format!("{}: malformed tensor file", path.display()));
    let rank =
        u32::from_le_bytes(bytes.get(..4).ok_or_else(bad)?.try_into().expect("4 bytes")) as usize;
    let mut pos = 4;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = bytes.get(pos..pos + 8).ok_or_else(bad)?;
        dims.push(u64::from_le_bytes(d.try_into().expect("8 bytes")) as usize);
        pos += 8;
    }
    let body = &bytes[pos..];
    if body.len() != 8 * dims.iter().product::<usize>() {
        return Err(bad());
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::new(dims, data)
}

fn join_f64(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// Manifest rows: `sample_id,class_id,target,final_loss,iterations`, with a
/// leading `task` column when `task` is given. Target entries are `;`
/// separated.
pub fn write_manifest<W: Write>(
    samples: &[TransferSample],
    writer: &mut csv::Writer<W>,
    task: Option<usize>,
    write_header: bool,
) -> Result<()> {
    if write_header {
        let mut header = vec![
            "sample_id",
            "class_id",
            "target",
            "final_loss",
            "iterations",
        ];
        if task.is_some() {
            header.insert(0, "task");
        }
        writer.write_record(&header)?;
    }
    for (i, s) in samples.iter().enumerate() {
        let mut row = vec![
            i.to_string(),
            s.label.to_string(),
            join_f64(&s.target.vector),
            s.final_loss.to_string(),
            s.iterations.to_string(),
        ];
        if let Some(t) = task {
            row.insert(0, t.to_string());
        }
        writer.write_record(&row)?;
    }
    Ok(())
}

/// Writes `sample_NNNNNN.bin` per sample plus `manifest.csv` into `dir`.
pub fn export_transfer_set(set: &TransferSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let [c, h, w] = set.image_shape;
    for (i, s) in set.samples.iter().enumerate() {
        let t = Tensor::new(vec![c, h, w], s.image.clone())?;
        write_tensor_file(&dir.join(format!("sample_{i:06}.bin")), &t)?;
    }
    let path = dir.join("manifest.csv");
    let mut writer = csv::Writer::from_path(&path)?;
    write_manifest(&set.samples, &mut writer, None, true)?;
    writer.flush().map_err(|e| Error::io(&path, e))
}
