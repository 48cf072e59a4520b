//! Binary checkpoint format. All integers and reals are little-endian.
//!
//! ```text
//! magic      8 bytes  "FLYMODEL"
//! version    u32      1
//! kind       u8       0 logreg, 1 mlp, 2 cnn
//! seed       u64
//! input      u32 h, u32 w, u32 c
//! n_layers   u32, then per layer a u8 tag and its fields:
//!              0 dense    u32 units, f64 l2
//!              1 conv2d   u32 filters, u32 kh, u32 kw, f64 l2
//!              2 maxpool  u32 ph, u32 pw, u32 stride
//!              3 dropout  f64 rate
//!              4 relu, 5 sigmoid, 6 flatten (no fields)
//! n_tensors  u32, then per tensor u64 length and that many f64
//!            (weights then bias, layer by layer)
//! n_history  u32, then that many f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::layers::{LayerSpec, Shape};
use super::{ModelError, ModelKind, ModelSpec, TrainedModel};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FLYMODEL";
const VERSION: u32 = 1;

pub fn write_checkpoint(model: &TrainedModel, out: &mut impl Write) -> Result<(), ModelError> {
    let mut b = Vec::new();
    b.extend_from_slice(CHECKPOINT_MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    b.push(match model.spec.kind {
        ModelKind::LogReg => 0,
        ModelKind::Mlp => 1,
        ModelKind::Cnn => 2,
    });
    b.extend_from_slice(&model.spec.seed.to_le_bytes());
    let u32s = |b: &mut Vec<u8>, vs: &[usize]| {
        for &v in vs {
            b.extend_from_slice(&(v as u32).to_le_bytes());
        }
    };
    let s = model.spec.input;
    u32s(&mut b, &[s.h, s.w, s.c, model.spec.layers.len()]);
    for l in &model.spec.layers {
        match *l {
            LayerSpec::Dense { units, l2 } => {
                b.push(0);
                u32s(&mut b, &[units]);
                b.extend_from_slice(&l2.to_le_bytes());
            }
            LayerSpec::Conv2d { filters, kh, kw, l2 } => {
                b.push(1);
                u32s(&mut b, &[filters, kh, kw]);
                b.extend_from_slice(&l2.to_le_bytes());
            }
            LayerSpec::MaxPool { ph, pw, stride } => {
                b.push(2);
                u32s(&mut b, &[ph, pw, stride]);
            }
            LayerSpec::Dropout { rate } => {
                b.push(3);
                b.extend_from_slice(&rate.to_le_bytes());
            }
            LayerSpec::Relu => b.push(4),
            LayerSpec::Sigmoid => b.push(5),
            LayerSpec::Flatten => b.push(6),
        }
    }
    let params = model.net.params();
    u32s(&mut b, &[params.len()]);
    for p in params {
        b.extend_from_slice(&(p.len() as u64).to_le_bytes());
        for v in p {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    u32s(&mut b, &[model.history.len()]);
    for v in &model.history {
        b.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&b)?;
    Ok(())
}

struct Cursor<'a>(&'a [u8]);

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], ModelError> {
        if self.0.len() < N {
            return Err(ModelError::BadCheckpoint("truncated".into()));
        }
        let (a, rest) = self.0.split_at(N);
        self.0 = rest;
        Ok(a.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take::<1>()?[0])
    }
    fn u32(&mut self) -> Result<usize, ModelError> {
        Ok(u32::from_le_bytes(self.take()?) as usize)
    }
    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

pub fn read_checkpoint(input: &mut impl Read) -> Result<TrainedModel, ModelError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut c = Cursor(&bytes);
    let bad = |m: String| ModelError::BadCheckpoint(m);
    if &c.take::<8>()? != CHECKPOINT_MAGIC {
        return Err(bad("wrong magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION as usize {
        return Err(bad(format!("unsupported version {version}")));
    }
    let kind = match c.u8()? {
        0 => ModelKind::LogReg,
        1 => ModelKind::Mlp,
        2 => ModelKind::Cnn,
        k => return Err(bad(format!("unknown model kind {k}"))),
    };
    let seed = c.u64()?;
    let input = Shape::new(c.u32()?, c.u32()?, c.u32()?);
    let n_layers = c.u32()?;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        layers.push(match c.u8()? {
            0 => LayerSpec::Dense { units: c.u32()?, l2: c.f64()? },
            1 => LayerSpec::Conv2d {
                filters: c.u32()?,
                kh: c.u32()?,
                kw: c.u32()?,
                l2: c.f64()?,
            },
            2 => LayerSpec::MaxPool {
                ph: c.u32()?,
                pw: c.u32()?,
                stride: c.u32()?,
            },
            3 => LayerSpec::Dropout { rate: c.f64()? },
            4 => LayerSpec::Relu,
            5 => LayerSpec::Sigmoid,
            6 => LayerSpec::Flatten,
            t => return Err(bad(format!("unknown layer tag {t}"))),
        });
    }
    let spec = ModelSpec { kind, input, layers, seed };
    let mut net = spec.build()?;
    let n_tensors = c.u32()?;
    {
        let mut params = net.params_mut();
        if n_tensors != params.len() {
            return Err(bad(format!("{n_tensors} tensors, spec needs {}", params.len())));
        }
        for p in params.iter_mut() {
            let len = c.u64()? as usize;
            if len != p.len() {
                return Err(bad(format!("tensor of {len} values, spec needs {}", p.len())));
            }
            for v in p.iter_mut() {
                *v = c.f64()?;
            }
        }
    }
    let n_hist = c.u32()?;
    let history = (0..n_hist).map(|_| c.f64()).collect::<Result<Vec<_>, _>>()?;
    if !c.0.is_empty() {
        return Err(bad("trailing bytes".into()));
    }
    Ok(TrainedModel { spec, net, history })
}

pub fn save_checkpoint(model: &TrainedModel, path: &Path) -> Result<(), ModelError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(model, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedModel, ModelError> {
    read_checkpoint(&mut std::io::BufReader::new(std::fs::File::open(path)?))
}
