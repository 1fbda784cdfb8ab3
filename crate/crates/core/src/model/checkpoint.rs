//! Model checkpoints: little-endian "SEDM" binary files.
//!
//! Layout: magic `SEDM`, u32 version (1), the configuration (u32 n_mels,
//! u32 stage count, that many u32 channel counts, that many u32 pool
//! widths, u32 gru_units, u32 dense_units, u32 n_classes), u32 tensor
//! count, then every tensor as u32 rank, u32 dims, f64 values. Tensors
//! appear in the flat parameter-layout order followed by the
//! normalization mean and standard deviation, so a checkpoint is
//! self-contained for inference.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array1;

use crate::error::Error;
use crate::features::NormStats;
use crate::Result;

use super::{CrnnConfig, CrnnParameters, TensorSpec};

const SEDM_MAGIC: &[u8; 4] = b"SEDM";
const SEDM_VERSION: u32 = 1;

fn bad(path: &Path, message: impl Into<String>) -> Error {
    Error::BadFile { what: "SEDM", message: format!("{}: {}", path.display(), message.into()) }
}

fn write_tensor(w: &mut impl Write, dims: &[usize], values: &[f64]) -> Result<()> {
    w.write_u32::<LittleEndian>(dims.len() as u32)?;
    for &d in dims {
        w.write_u32::<LittleEndian>(d as u32)?;
    }
    for &v in values {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_tensor(r: &mut impl Read, path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let rank = r.read_u32::<LittleEndian>()? as usize;
    if rank == 0 || rank > 4 {
        return Err(bad(path, format!("tensor rank {rank} out of range")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(r.read_u32::<LittleEndian>()? as usize);
    }
    let len: usize = dims.iter().product();
    if len as u64 > (1 << 32) {
        return Err(bad(path, format!("implausible tensor shape {dims:?}")));
    }
    let mut values = Vec::with_capacity(len);
    for _ in 0..len {
        values.push(r.read_f64::<LittleEndian>()?);
    }
    Ok((dims, values))
}

pub fn save_checkpoint(path: &Path, params: &CrnnParameters, norm: &NormStats) -> Result<()> {
    let cfg = params.config();
    if norm.mean.len() != cfg.n_mels || norm.std.len() != cfg.n_mels {
        return Err(Error::shape(
            "checkpoint norm stats",
            cfg.n_mels.to_string(),
            format!("{}/{}", norm.mean.len(), norm.std.len()),
        ));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SEDM_MAGIC)?;
    w.write_u32::<LittleEndian>(SEDM_VERSION)?;
    w.write_u32::<LittleEndian>(cfg.n_mels as u32)?;
    w.write_u32::<LittleEndian>(cfg.conv_channels.len() as u32)?;
    for &c in &cfg.conv_channels {
        w.write_u32::<LittleEndian>(c as u32)?;
    }
    for &p in &cfg.pool_freq {
        w.write_u32::<LittleEndian>(p as u32)?;
    }
    w.write_u32::<LittleEndian>(cfg.gru_units as u32)?;
    w.write_u32::<LittleEndian>(cfg.dense_units as u32)?;
    w.write_u32::<LittleEndian>(cfg.n_classes as u32)?;

    w.write_u32::<LittleEndian>((params.layout().len() + 2) as u32)?;
    for spec in params.layout() {
        let values = &params.data()[spec.offset..spec.offset + spec.len()];
        write_tensor(&mut w, &spec.dims, values)?;
    }
    write_tensor(&mut w, &[norm.mean.len()], norm.mean.as_slice().unwrap())?;
    write_tensor(&mut w, &[norm.std.len()], norm.std.as_slice().unwrap())?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CrnnParameters, NormStats)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SEDM_MAGIC {
        return Err(bad(path, format!("bad magic {magic:?}, expected SEDM")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != SEDM_VERSION {
        return Err(bad(path, format!("unsupported version {version}")));
    }
    let n_mels = r.read_u32::<LittleEndian>()? as usize;
    let n_stages = r.read_u32::<LittleEndian>()? as usize;
    if n_stages == 0 || n_stages > 16 {
        return Err(bad(path, format!("implausible stage count {n_stages}")));
    }
    let mut conv_channels = Vec::with_capacity(n_stages);
    for _ in 0..n_stages {
        conv_channels.push(r.read_u32::<LittleEndian>()? as usize);
    }
    let mut pool_freq = Vec::with_capacity(n_stages);
    for _ in 0..n_stages {
        pool_freq.push(r.read_u32::<LittleEndian>()? as usize);
    }
    let cfg = CrnnConfig {
        n_mels,
        conv_channels,
        pool_freq,
        gru_units: r.read_u32::<LittleEndian>()? as usize,
        dense_units: r.read_u32::<LittleEndian>()? as usize,
        n_classes: r.read_u32::<LittleEndian>()? as usize,
    };
    cfg.validate().map_err(|e| bad(path, format!("invalid stored config: {e}")))?;

    let template = CrnnParameters::zeros(&cfg)?;
    let expect_tensors = template.layout().len() + 2;
    let n_tensors = r.read_u32::<LittleEndian>()? as usize;
    if n_tensors != expect_tensors {
        return Err(bad(path, format!("expected {expect_tensors} tensors, found {n_tensors}")));
    }

    let mut data = vec![0.0; template.n_params()];
    for spec in template.layout() {
        let (dims, values) = read_tensor(&mut r, path)?;
        if dims != spec.dims {
            return Err(bad(
                path,
                format!("tensor {} dims {:?} do not match config {:?}", spec.name, dims, spec.dims),
            ));
        }
        data[spec.offset..spec.offset + spec.len()].copy_from_slice(&values);
    }
    let norm = read_norm(&mut r, path, n_mels)?;

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(bad(path, "trailing data after tensors"));
    }
    let params = CrnnParameters::from_flat(&cfg, data)?;
    Ok((params, norm))
}

fn read_norm(r: &mut impl Read, path: &Path, n_mels: usize) -> Result<NormStats> {
    let (dims, mean) = read_tensor(r, path)?;
    if dims != [n_mels] {
        return Err(bad(path, format!("norm mean dims {dims:?}, expected [{n_mels}]")));
    }
    let (dims, std) = read_tensor(r, path)?;
    if dims != [n_mels] {
        return Err(bad(path, format!("norm std dims {dims:?}, expected [{n_mels}]")));
    }
    if std.iter().any(|&s| !(s > 0.0)) {
        return Err(bad(path, "norm std entries must be positive"));
    }
    Ok(NormStats { mean: Array1::from_vec(mean), std: Array1::from_vec(std) })
}

/// Spec list of every tensor in file order, for documentation and tooling.
pub fn tensor_order(cfg: &CrnnConfig) -> Result<Vec<TensorSpec>> {
    let template = CrnnParameters::zeros(cfg)?;
    let mut order = template.layout().to_vec();
    let offset = template.n_params();
    order.push(TensorSpec { name: "norm.mean".into(), offset, dims: vec![cfg.n_mels] });
    order.push(TensorSpec {
        name: "norm.std".into(),
        offset: offset + cfg.n_mels,
        dims: vec![cfg.n_mels],
    });
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn small_cfg() -> CrnnConfig {
        CrnnConfig {
            n_mels: 8,
            conv_channels: vec![2, 3, 3],
            pool_freq: vec![2, 2, 2],
            gru_units: 4,
            dense_units: 5,
            n_classes: 3,
        }
    }

    fn norm_for(cfg: &CrnnConfig) -> NormStats {
        NormStats {
            mean: Array1::from_shape_fn(cfg.n_mels, |i| i as f64 * 0.5 - 1.0),
            std: Array1::from_shape_fn(cfg.n_mels, |i| 1.0 + i as f64 * 0.1),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.sedm");
        let cfg = small_cfg();
        let params = init_params(&cfg, 99).unwrap();
        let norm = norm_for(&cfg);
        save_checkpoint(&path, &params, &norm).unwrap();
        let (loaded, loaded_norm) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, params);
        assert_eq!(loaded_norm, norm);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.sedm");
        let cfg = small_cfg();
        let params = init_params(&cfg, 1).unwrap();
        save_checkpoint(&path, &params, &norm_for(&cfg)).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        std::fs::write(&path, b"XXXX").unwrap();
        assert!(load_checkpoint(&path).is_err());

        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(load_checkpoint(&path).is_err());

        let mut longer = bytes.clone();
        longer.push(0);
        std::fs::write(&path, &longer).unwrap();
        assert!(load_checkpoint(&path).is_err());

        // Version bump.
        let mut wrong = bytes.clone();
        wrong[4] = 9;
        std::fs::write(&path, &wrong).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn norm_shape_must_match_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.sedm");
        let cfg = small_cfg();
        let params = init_params(&cfg, 1).unwrap();
        let norm = NormStats { mean: Array1::zeros(5), std: Array1::ones(5) };
        assert!(save_checkpoint(&path, &params, &norm).is_err());
    }

    #[test]
    fn tensor_order_is_documented() {
        let order = tensor_order(&small_cfg()).unwrap();
        let names: Vec<&str> = order.iter().map(|t| t.name.as_str()).collect();
        assert_eq!(names[0], "conv0.kernel");
        assert_eq!(names[1], "conv0.bias");
        assert!(names.contains(&"gru.fwd.w_z"));
        assert!(names.contains(&"gru.bwd.b_n"));
        assert_eq!(names[names.len() - 2], "norm.mean");
        assert_eq!(names[names.len() - 1], "norm.std");
    }
}
