//! Binary instance files.
//!
//! All integers and floats are little-endian.
//!
//! | field | type |
//! |---|---|
//! | magic `SRINST\0\0` | 8 bytes |
//! | version | u32 (= 1) |
//! | family tag (0 robust, 1 cauchy, 2 dct) | u8 |
//! | loss tag (0 quadratic, 1 lorentzian, 2 robust) | u8 |
//! | scale `i` | u32 |
//! | `K`, `F`, `D` | u64, f64, f64 |
//! | seed | u64 |
//! | `m`, `n` | u64, u64 |
//! | lambda, gamma, outlier count | f64, f64, u64 |
//! | rng name | u16 length + UTF-8 bytes |
//! | `A` row-major, `b`, `x_true`, noise, lower, upper | f64 arrays |
//! | SHA-256 of everything above | 32 bytes |
//!
//! Fields that do not apply to a family or loss are written as zero.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{BoxBounds, LossModel, SquaredRatioModel};
use crate::problem_gen::{Family, GenSpec, GeneratedInstance, RNG_NAME};

pub const MAGIC: &[u8; 8] = b"SRINST\0\0";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn floats<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) {
        for v in vs {
            self.f64(*v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&end| end <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("slice length checked"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length overflows usize".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn floats(&mut self, len: usize) -> Result<Vec<f64>> {
        let bytes = self.take(len.checked_mul(8).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}

pub fn to_bytes(inst: &GeneratedInstance) -> Vec<u8> {
    let model = &inst.model;
    let (m, n) = (model.nrows(), model.ncols());
    let mut w = Writer(Vec::with_capacity(128 + 8 * (m * n + 3 * m + 3 * n) + DIGEST_LEN));
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);

    let (family_tag, scale, k, f, d) = match inst.spec.family {
        Family::RobustCs { scale } => (0u8, scale, 0usize, 0.0, 0.0),
        Family::Cauchy { scale } => (1, scale, 0, 0.0, 0.0),
        Family::GaussianDct {
            sparsity,
            coherence,
            dynamic_range,
        } => (2, 0, sparsity, coherence, dynamic_range),
    };
    let (loss_tag, gamma, outliers) = match model.loss {
        LossModel::Quadratic => (0u8, 0.0, 0usize),
        LossModel::Lorentzian { gamma } => (1, gamma, 0),
        LossModel::RobustDistance { outlier_count } => (2, 0.0, outlier_count),
    };
    w.u8(family_tag);
    w.u8(loss_tag);
    w.u32(scale);
    w.u64(k as u64);
    w.f64(f);
    w.f64(d);
    w.u64(inst.spec.seed);
    w.u64(m as u64);
    w.u64(n as u64);
    w.f64(model.lambda);
    w.f64(gamma);
    w.u64(outliers as u64);
    w.u16(RNG_NAME.len() as u16);
    w.0.extend_from_slice(RNG_NAME.as_bytes());

    for i in 0..m {
        w.floats(model.a.row(i).iter());
    }
    w.floats(model.b.iter());
    w.floats(inst.x_true.iter());
    w.floats(inst.noise.iter());
    w.floats(model.bounds.lower().iter());
    w.floats(model.bounds.upper().iter());

    let digest = Sha256::digest(&w.0);
    w.0.extend_from_slice(&digest);
    w.0
}

pub fn from_bytes(bytes: &[u8]) -> Result<GeneratedInstance> {
    if bytes.len() < MAGIC.len() + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("not an instance file".into()));
    }
    let (payload, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(payload).as_slice() != digest {
        return Err(Error::Checksum);
    }

    let mut r = Reader { buf: payload, pos: MAGIC.len() };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let family_tag = r.u8()?;
    let loss_tag = r.u8()?;
    let scale = r.u32()?;
    let k = r.usize()?;
    let f = r.f64()?;
    let d = r.f64()?;
    let seed = r.u64()?;
    let m = r.usize()?;
    let n = r.usize()?;
    let lambda = r.f64()?;
    let gamma = r.f64()?;
    let outlier_count = r.usize()?;
    let name_len = r.u16()? as usize;
    let rng = std::str::from_utf8(r.take(name_len)?).map_err(|_| Error::Format("rng name is not UTF-8".into()))?;
    if rng != RNG_NAME {
        return Err(Error::Format(format!("instance generated with unsupported rng `{rng}`")));
    }

    let family = match family_tag {
        0 => Family::RobustCs { scale },
        1 => Family::Cauchy { scale },
        2 => Family::GaussianDct {
            sparsity: k,
            coherence: f,
            dynamic_range: d,
        },
        t => return Err(Error::Format(format!("unknown family tag {t}"))),
    };
    let loss = match loss_tag {
        0 => LossModel::Quadratic,
        1 => LossModel::Lorentzian { gamma },
        2 => LossModel::RobustDistance { outlier_count },
        t => return Err(Error::Format(format!("unknown loss tag {t}"))),
    };

    let mn = m.checked_mul(n).ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    let a = DMatrix::from_row_slice(m, n, &r.floats(mn)?);
    let b = DVector::from_vec(r.floats(m)?);
    let x_true = DVector::from_vec(r.floats(n)?);
    let noise = DVector::from_vec(r.floats(m)?);
    let lower = DVector::from_vec(r.floats(n)?);
    let upper = DVector::from_vec(r.floats(n)?);
    if r.pos != payload.len() {
        return Err(Error::Format(format!("{} trailing bytes", payload.len() - r.pos)));
    }

    let bounds = BoxBounds::new(lower, upper)?;
    let model = SquaredRatioModel::new(a, b, lambda, bounds, loss)?;
    Ok(GeneratedInstance {
        spec: GenSpec::new(family, seed),
        model,
        x_true,
        noise,
    })
}

pub fn write_instance<W: Write>(mut writer: W, inst: &GeneratedInstance) -> Result<()> {
    writer.write_all(&to_bytes(inst))?;
    writer.flush()?;
    Ok(())
}

pub fn read_instance<R: Read>(mut reader: R) -> Result<GeneratedInstance> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

pub fn save(path: &Path, inst: &GeneratedInstance) -> Result<()> {
    write_instance(std::io::BufWriter::new(std::fs::File::create(path)?), inst)
}

pub fn load(path: &Path) -> Result<GeneratedInstance> {
    read_instance(std::io::BufReader::new(std::fs::File::open(path)?))
}
