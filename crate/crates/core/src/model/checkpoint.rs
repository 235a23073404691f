//! Versioned binary checkpoint.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "CMSCKPT\0"
//! version    u32
//! epoch      u64
//! spec x2    image then audio: input c,h,w (u32), block channels (4 x u32),
//!            embedding dim (u32), channel scale (f64)
//! arrays x2  image then audio: count (u32), then per array len (u64) + f32 data
//! optimizer  flag (u8); if 1: step (u64), lr, best loss (f64), stale epochs,
//!            halvings (u32), then first and second moments for image and
//!            audio pathways as array groups
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::spec::PathwaySpec;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CMSCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

/// Optimizer and schedule state carried along for exact resumption.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSnapshot {
    pub step: u64,
    pub lr: f64,
    pub best_loss: f64,
    pub stale_epochs: u32,
    pub halvings: u32,
    pub first_moment: [Vec<Vec<f32>>; 2],
    pub second_moment: [Vec<Vec<f32>>; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub image_spec: PathwaySpec,
    pub audio_spec: PathwaySpec,
    /// Image pathway arrays in declaration order (see `Pathway::state`).
    pub image_state: Vec<Vec<f32>>,
    pub audio_state: Vec<Vec<f32>>,
    /// Number of completed training epochs.
    pub epoch: u64,
    pub optimizer: Option<OptimizerSnapshot>,
}

impl ModelCheckpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut bytes)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&self.epoch.to_le_bytes())?;
        for spec in [&self.image_spec, &self.audio_spec] {
            write_spec(w, spec)?;
        }
        write_group(w, &self.image_state)?;
        write_group(w, &self.audio_state)?;
        match &self.optimizer {
            None => w.write_all(&[0])?,
            Some(o) => {
                w.write_all(&[1])?;
                w.write_all(&o.step.to_le_bytes())?;
                w.write_all(&o.lr.to_le_bytes())?;
                w.write_all(&o.best_loss.to_le_bytes())?;
                w.write_all(&o.stale_epochs.to_le_bytes())?;
                w.write_all(&o.halvings.to_le_bytes())?;
                for g in o.first_moment.iter().chain(&o.second_moment) {
                    write_group(w, g)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let epoch = read_u64(r)?;
        let image_spec = read_spec(r)?;
        let audio_spec = read_spec(r)?;
        let image_state = read_group(r)?;
        let audio_state = read_group(r)?;
        let mut flag = [0u8; 1];
        read_exact(r, &mut flag)?;
        let optimizer = match flag[0] {
            0 => None,
            1 => {
                let step = read_u64(r)?;
                let lr = read_f64(r)?;
                let best_loss = read_f64(r)?;
                let stale_epochs = read_u32(r)?;
                let halvings = read_u32(r)?;
                let m0 = read_group(r)?;
                let m1 = read_group(r)?;
                let v0 = read_group(r)?;
                let v1 = read_group(r)?;
                Some(OptimizerSnapshot {
                    step,
                    lr,
                    best_loss,
                    stale_epochs,
                    halvings,
                    first_moment: [m0, m1],
                    second_moment: [v0, v1],
                })
            }
            other => return Err(Error::Dataset(format!("checkpoint: bad optimizer flag {other}"))),
        };
        Ok(Self {
            image_spec,
            audio_spec,
            image_state,
            audio_state,
            epoch,
            optimizer,
        })
    }
}

fn write_spec<W: Write>(w: &mut W, spec: &PathwaySpec) -> io::Result<()> {
    for v in spec.input.iter().chain(&spec.block_channels).chain([&spec.embed_dim]) {
        w.write_all(&(*v as u32).to_le_bytes())?;
    }
    w.write_all(&spec.kappa.to_le_bytes())
}

fn write_group<W: Write>(w: &mut W, arrays: &[Vec<f32>]) -> io::Result<()> {
    w.write_all(&(arrays.len() as u32).to_le_bytes())?;
    for a in arrays {
        w.write_all(&(a.len() as u64).to_le_bytes())?;
        let mut bytes = Vec::with_capacity(a.len() * 4);
        for v in a {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Truncated,
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_spec<R: Read>(r: &mut R) -> Result<PathwaySpec> {
    let mut v = [0usize; 8];
    for x in &mut v {
        *x = read_u32(r)? as usize;
    }
    Ok(PathwaySpec {
        input: [v[0], v[1], v[2]],
        block_channels: [v[3], v[4], v[5], v[6]],
        embed_dim: v[7],
        kappa: read_f64(r)?,
    })
}

// Upper bound on a single array; guards allocation on corrupt lengths.
const MAX_ARRAY: u64 = 1 << 28;

fn read_group<R: Read>(r: &mut R) -> Result<Vec<Vec<f32>>> {
    let count = read_u32(r)?;
    let mut out = Vec::with_capacity(count.min(1024) as usize);
    for _ in 0..count {
        let len = read_u64(r)?;
        if len > MAX_ARRAY {
            return Err(Error::Truncated);
        }
        let mut bytes = vec![0u8; len as usize * 4];
        read_exact(r, &mut bytes)?;
        out.push(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        );
    }
    Ok(out)
}
