//! Versioned little-endian parameter files.
//!
//! Layout: magic `CDIQ`, `u16` version, the hyperparameter block, a `u8`
//! flag for the optional localisation network, a `u32` tensor count, then
//! each tensor as `u32` rank, `u64` extents and `f64` values. Tensors are
//! stored segmentation network first, then prior, then localiser.

use std::io::{Read, Write};
use std::path::Path;

use super::model::{Architecture, Hyperparams, NetworkParams};
use super::prior::ShapePrior;
use super::tensor::Tensor;
use super::unet::UNet;
use crate::error::{Error, Result};

pub const PARAMS_MAGIC: &[u8; 4] = b"CDIQ";
pub const PARAMS_VERSION: u16 = 1;

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_params(params: &NetworkParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(PARAMS_MAGIC);
    out.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
    let h = &params.hyper;
    let a = &h.arch;
    for v in [a.depth, a.width, a.latent, a.prior_hidden, a.prior_grid] {
        put_u64(&mut out, v as u64);
    }
    out.extend_from_slice(&h.lambda_prior.to_le_bytes());
    out.extend_from_slice(&h.learning_rate.to_le_bytes());
    put_u64(&mut out, h.epochs as u64);
    put_u64(&mut out, h.seed);
    match &params.roi {
        Some(r) => {
            out.push(1);
            put_u64(&mut out, r.depth() as u64);
            put_u64(&mut out, r.width() as u64);
        }
        None => out.push(0),
    }
    let tensors: Vec<&Tensor> = params
        .trainable()
        .chain(params.roi.iter().flat_map(|r| r.tensors()))
        .collect();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.dims().len() as u32).to_le_bytes());
        for &d in t.dims() {
            put_u64(&mut out, d as u64);
        }
        for v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated {
                expected: self.pos.saturating_add(n),
                actual: self.bytes.len(),
            }),
        }
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("extent overflows usize".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

pub fn decode_params(bytes: &[u8]) -> Result<NetworkParams> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != PARAMS_MAGIC {
        return Err(Error::Format("not a parameter file (bad magic)".into()));
    }
    let version = u16::from_le_bytes(cur.array()?);
    if version != PARAMS_VERSION {
        return Err(Error::UnknownVersion(version));
    }
    let arch = Architecture {
        depth: cur.usize()?,
        width: cur.usize()?,
        latent: cur.usize()?,
        prior_hidden: cur.usize()?,
        prior_grid: cur.usize()?,
    };
    if arch.depth == 0 || arch.depth > 16 || arch.width == 0 || arch.width > 4096 {
        return Err(Error::Format(format!("implausible architecture {arch:?}")));
    }
    let hyper = Hyperparams {
        arch,
        lambda_prior: cur.f64()?,
        learning_rate: cur.f64()?,
        epochs: cur.usize()?,
        seed: cur.u64()?,
    };
    hyper.validate()?;
    let roi_arch = match cur.array::<1>()?[0] {
        0 => None,
        1 => Some((cur.usize()?, cur.usize()?)),
        f => return Err(Error::Format(format!("bad localiser flag {f}"))),
    };
    let count = u32::from_le_bytes(cur.array()?) as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let rank = u32::from_le_bytes(cur.array()?) as usize;
        if rank > 8 {
            return Err(Error::Format(format!("tensor rank {rank}")));
        }
        let dims = (0..rank).map(|_| cur.usize()).collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= bytes.len() / 8)
            .ok_or_else(|| Error::Format(format!("tensor dims {dims:?} exceed file size")))?;
        let raw = cur.take(n * 8)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor::new(dims, values)?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after tensors",
            bytes.len() - cur.pos
        )));
    }
    let n_unet = UNet::zeros(arch.depth, arch.width).tensors().len();
    let n_vae = ShapePrior::zeros(arch.latent, arch.prior_hidden, arch.prior_grid)
        .tensors()
        .len();
    if tensors.len() < n_unet + n_vae {
        return Err(Error::Format(format!(
            "{} tensors, expected at least {}",
            tensors.len(),
            n_unet + n_vae
        )));
    }
    let mut rest = tensors.split_off(n_unet);
    let unet = UNet::from_tensors(arch.depth, arch.width, tensors)?;
    let roi_tensors = rest.split_off(n_vae);
    let vae = ShapePrior::from_tensors(arch.latent, arch.prior_hidden, arch.prior_grid, rest)?;
    let roi = match roi_arch {
        Some((d, w)) => Some(UNet::from_tensors(d, w, roi_tensors)?),
        None if roi_tensors.is_empty() => None,
        None => return Err(Error::Format("unexpected localiser tensors".into())),
    };
    Ok(NetworkParams {
        hyper,
        unet,
        vae,
        roi,
    })
}

pub fn save_params(path: &Path, params: &NetworkParams) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_params(params))?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<NetworkParams> {
    let mut f = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    decode_params(&bytes)
}
