//! Checkpoint files: 8-byte magic `HALSIE01`, a little-endian u32 tensor
//! count, then per tensor a u32 name length, the UTF-8 name, a u32 rank,
//! u32 dims, and raw little-endian f32 values.
//!
//! The first tensor, `meta.spec`, encodes the network description and
//! encoder setting so a checkpoint reconstructs its own architecture.
//! Tensors follow in parameter-store order, making save → load → save
//! bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::{Scalar, Shape};

use super::net::{HalsieModel, Setting};
use super::spec::{MmixRates, NetworkSpec};
use super::ModelError;

const MAGIC: &[u8; 8] = b"HALSIE01";
const META_NAME: &str = "meta.spec";
const META_LEN: usize = 18;

fn meta_values(spec: &NetworkSpec, setting: Setting) -> Vec<f32> {
    let r = &spec.mmix;
    vec![
        spec.width as f32,
        spec.height as f32,
        spec.bins as f32,
        spec.stages as f32,
        spec.base_channels as f32,
        spec.classes as f32,
        spec.frame_channels as f32,
        setting.code() as f32,
        r.pre.0 as f32,
        r.pre.1 as f32,
        r.parallel[0].0 as f32,
        r.parallel[0].1 as f32,
        r.parallel[1].0 as f32,
        r.parallel[1].1 as f32,
        r.parallel[2].0 as f32,
        r.parallel[2].1 as f32,
        r.post.0 as f32,
        r.post.1 as f32,
    ]
}

fn meta_decode(values: &[f32]) -> Result<(NetworkSpec, Setting), ModelError> {
    if values.len() != META_LEN {
        return Err(ModelError::Checkpoint(format!(
            "metadata holds {} values, expected {META_LEN}",
            values.len()
        )));
    }
    let v = |i: usize| values[i] as usize;
    let spec = NetworkSpec {
        width: v(0),
        height: v(1),
        bins: v(2),
        stages: v(3),
        base_channels: v(4),
        classes: v(5),
        frame_channels: v(6),
        mmix: MmixRates {
            pre: (v(8), v(9)),
            parallel: [(v(10), v(11)), (v(12), v(13)), (v(14), v(15))],
            post: (v(16), v(17)),
        },
    };
    let setting = Setting::from_code(values[7] as u32).ok_or_else(|| {
        ModelError::Checkpoint(format!("unknown setting code {}", values[7]))
    })?;
    Ok((spec, setting))
}

fn write_tensor(
    out: &mut impl Write,
    name: &str,
    dims: &[usize],
    values: impl Iterator<Item = f32>,
) -> std::io::Result<()> {
    out.write_all(&(name.len() as u32).to_le_bytes())?;
    out.write_all(name.as_bytes())?;
    out.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Serialize a model. Values are stored as f32 regardless of the compute
/// type.
pub fn save_checkpoint<T: Scalar>(model: &HalsieModel<T>, path: &Path) -> Result<(), ModelError> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    let count = model.params().len() + 1;
    out.write_all(&(count as u32).to_le_bytes())?;
    write_tensor(
        &mut out,
        META_NAME,
        &[META_LEN],
        meta_values(model.spec(), model.setting()).into_iter(),
    )?;
    for p in model.params().entries() {
        write_tensor(
            &mut out,
            &p.name,
            p.shape.dims(),
            p.value.iter().map(|v| v.as_f64() as f32),
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Write one named tensor in the checkpoint container (magic + count 1).
/// Used for standalone artifacts such as inference logits.
pub fn save_raw_tensor(
    path: &Path,
    name: &str,
    dims: &[usize],
    values: &[f32],
) -> Result<(), ModelError> {
    assert_eq!(values.len(), dims.iter().product::<usize>());
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&1u32.to_le_bytes())?;
    write_tensor(&mut out, name, dims, values.iter().copied())?;
    out.flush()?;
    Ok(())
}

fn read_u32(reader: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_tensor(reader: &mut impl Read) -> Result<(String, Vec<usize>, Vec<f32>), ModelError> {
    let name_len = read_u32(reader)? as usize;
    let mut name = vec![0u8; name_len];
    reader.read_exact(&mut name)?;
    let name = String::from_utf8(name)
        .map_err(|_| ModelError::Checkpoint("tensor name is not UTF-8".into()))?;
    let rank = read_u32(reader)? as usize;
    if rank > 4 {
        return Err(ModelError::Checkpoint(format!(
            "tensor {name} has rank {rank}, maximum is 4"
        )));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(read_u32(reader)? as usize);
    }
    let count: usize = dims.iter().product();
    let mut values = Vec::with_capacity(count);
    let mut buf = [0u8; 4];
    for _ in 0..count {
        reader.read_exact(&mut buf)?;
        values.push(f32::from_le_bytes(buf));
    }
    Ok((name, dims, values))
}

/// Rebuild a model from a checkpoint: architecture from the metadata
/// tensor, every parameter and buffer from the stored values.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<HalsieModel<T>, ModelError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::Checkpoint(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let count = read_u32(&mut reader)? as usize;
    if count == 0 {
        return Err(ModelError::Checkpoint("checkpoint holds no tensors".into()));
    }
    let (name, dims, values) = read_tensor(&mut reader)?;
    if name != META_NAME {
        return Err(ModelError::Checkpoint(format!(
            "first tensor must be `{META_NAME}` (architecture metadata), found `{name}`"
        )));
    }
    let _ = dims;
    let (spec, setting) = meta_decode(&values)?;
    let mut model = HalsieModel::<T>::new(spec, setting, 0)?;

    let mut filled = vec![false; model.params().len()];
    for _ in 1..count {
        let (name, dims, values) = read_tensor(&mut reader)?;
        let id = model.params().lookup(&name).ok_or_else(|| {
            ModelError::Checkpoint(format!("tensor `{name}` is not part of this architecture"))
        })?;
        let param = model.params_mut().get_mut(id);
        if param.shape != Shape::from(dims.clone()) {
            return Err(ModelError::Checkpoint(format!(
                "tensor `{name}` has shape {:?}, expected {}",
                dims, param.shape
            )));
        }
        param.value = values.into_iter().map(|v| T::from_f64_c(v as f64)).collect();
        filled[id.0] = true;
    }
    if let Some(missing) = filled.iter().position(|&f| !f) {
        return Err(ModelError::Checkpoint(format!(
            "checkpoint is missing tensor `{}`",
            model.params().entries()[missing].name
        )));
    }
    Ok(model)
}
