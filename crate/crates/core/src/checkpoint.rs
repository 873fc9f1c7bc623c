//! Binary model checkpoints.
//!
//! Layout: the magic bytes `ORCM`, a little-endian `u32` format version, a
//! body of tagged scalars and shape-prefixed little-endian `f64` arrays, and
//! a trailing CRC-32 of everything before it.

use std::io::{Read, Write};
use std::path::Path;

use crate::driver::{ContinuousEsnDriver, Driver, GruDriver, LeakyEsnDriver, ReservoirWeights};
use crate::embed::{ChunkLayout, EluEmbedding, Embedding, LinearEmbedding};
use crate::error::{Error, Result};
use crate::forecast::{ContinuousForecaster, EsnForecaster, Feedback};
use crate::ode::Solver;
use crate::readout::LinearReadout;
use crate::sparse::SparseMatrix;

pub const MAGIC: &[u8; 4] = b"ORCM";
pub const FORMAT_VERSION: u32 = 1;

/// A model that can be checkpointed.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Discrete(EsnForecaster),
    Continuous(ContinuousForecaster),
}

impl From<EsnForecaster> for Checkpoint {
    fn from(m: EsnForecaster) -> Self {
        Checkpoint::Discrete(m)
    }
}

impl From<ContinuousForecaster> for Checkpoint {
    fn from(m: ContinuousForecaster) -> Self {
        Checkpoint::Continuous(m)
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u64(&mut self, v: usize) {
        self.buf.extend_from_slice(&(v as u64).to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn array(&mut self, shape: &[usize], data: &[f64]) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.u8(shape.len() as u8);
        for d in shape {
            self.u64(*d);
        }
        for v in data {
            self.f64(*v);
        }
    }

    fn indices(&mut self, data: &[usize]) {
        self.u64(data.len());
        for v in data {
            self.u64(*v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn malformed(what: &str) -> Error {
    Error::MalformedCheckpoint(what.to_string())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or_else(|| malformed("truncated body"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<usize> {
        let b: [u8; 8] = self.take(8)?.try_into().expect("8 bytes");
        usize::try_from(u64::from_le_bytes(b)).map_err(|_| malformed("size overflow"))
    }

    fn f64(&mut self) -> Result<f64> {
        let b: [u8; 8] = self.take(8)?.try_into().expect("8 bytes");
        Ok(f64::from_le_bytes(b))
    }

    fn array(&mut self, expected: &[usize]) -> Result<Vec<f64>> {
        let rank = self.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()?);
        }
        if shape != expected {
            return Err(Error::MalformedCheckpoint(format!("array shape {shape:?}, expected {expected:?}")));
        }
        let len: usize = shape.iter().product();
        let bytes = self.take(len.checked_mul(8).ok_or_else(|| malformed("size overflow"))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn indices(&mut self) -> Result<Vec<usize>> {
        let n = self.u64()?;
        if n > self.buf.len() {
            return Err(malformed("index list longer than file"));
        }
        (0..n).map(|_| self.u64()).collect()
    }
}

fn write_embedding(w: &mut Writer, e: &Embedding) {
    match e {
        Embedding::Linear(l) => {
            let layout = l.layout();
            w.u8(0);
            w.u64(layout.data_dim());
            w.u64(layout.chunks());
            w.u64(layout.locality());
            w.u64(l.res_dim());
            w.f64(l.scaling());
            w.array(&[layout.chunks(), l.res_dim(), layout.window_dim()], l.weights());
        }
        Embedding::Elu(el) => {
            w.u8(1);
            w.u64(el.in_dim());
            w.u64(el.res_dim());
            let [w1, b1, w2, b2] = el.parts();
            let h = el.res_dim() / 2;
            w.array(&[h, el.in_dim()], w1);
            w.array(&[h], b1);
            w.array(&[el.res_dim(), h], w2);
            w.array(&[el.res_dim()], b2);
        }
    }
}

fn read_embedding(r: &mut Reader) -> Result<Embedding> {
    match r.u8()? {
        0 => {
            let (data_dim, chunks, locality, res_dim) = (r.u64()?, r.u64()?, r.u64()?, r.u64()?);
            let scaling = r.f64()?;
            let layout = ChunkLayout::new(data_dim, chunks, locality)?;
            let weights = r.array(&[chunks, res_dim, layout.window_dim()])?;
            Ok(LinearEmbedding::from_weights(layout, res_dim, scaling, weights)?.into())
        }
        1 => {
            let (in_dim, res_dim) = (r.u64()?, r.u64()?);
            let h = res_dim / 2;
            let parts = [r.array(&[h, in_dim])?, r.array(&[h])?, r.array(&[res_dim, h])?, r.array(&[res_dim])?];
            Ok(EluEmbedding::from_parts(in_dim, res_dim, parts)?.into())
        }
        t => Err(Error::MalformedCheckpoint(format!("unknown embedding tag {t}"))),
    }
}

fn write_weights(w: &mut Writer, rw: &ReservoirWeights) {
    w.u64(rw.chunks());
    w.u64(rw.res_dim());
    w.f64(rw.target_spectral_radius());
    w.f64(rw.bias_magnitude());
    for m in rw.reservoirs() {
        let (rows, cols, vals): (Vec<usize>, Vec<usize>, Vec<f64>) =
            m.triplets().fold((vec![], vec![], vec![]), |mut acc, (i, j, v)| {
                acc.0.push(i);
                acc.1.push(j);
                acc.2.push(v);
                acc
            });
        w.indices(&rows);
        w.indices(&cols);
        w.array(&[vals.len()], &vals);
    }
    w.array(&[rw.chunks(), rw.res_dim()], rw.bias_all());
}

fn read_weights(r: &mut Reader) -> Result<ReservoirWeights> {
    let (chunks, n) = (r.u64()?, r.u64()?);
    let (rho, bias_mag) = (r.f64()?, r.f64()?);
    if chunks > r.buf.len() {
        return Err(malformed("chunk count larger than file"));
    }
    let mut mats = Vec::with_capacity(chunks);
    for _ in 0..chunks {
        let rows = r.indices()?;
        let cols = r.indices()?;
        let vals = r.array(&[rows.len()])?;
        if cols.len() != rows.len() {
            return Err(malformed("sparse index lists differ in length"));
        }
        let trip = rows.into_iter().zip(cols).zip(vals).map(|((i, j), v)| (i, j, v)).collect();
        mats.push(SparseMatrix::from_triplets(n, n, trip)?);
    }
    let bias = r.array(&[chunks, n])?;
    ReservoirWeights::from_parts(mats, bias, rho, bias_mag)
}

fn write_driver(w: &mut Writer, d: &Driver) {
    match d {
        Driver::Esn(e) => {
            w.u8(0);
            w.f64(e.leak_rate());
            write_weights(w, e.weights());
        }
        Driver::Gru(g) => {
            w.u8(1);
            w.u64(g.chunks());
            w.u64(g.res_dim());
            let n = g.res_dim();
            let (mats, biases) = g.parts();
            for (m, b) in mats.iter().zip(biases) {
                for x in m {
                    w.array(&[n, n], x);
                }
                for x in b {
                    w.array(&[n], x);
                }
            }
        }
    }
}

fn read_driver(r: &mut Reader) -> Result<Driver> {
    match r.u8()? {
        0 => {
            let leak = r.f64()?;
            Ok(LeakyEsnDriver::new(read_weights(r)?, leak)?.into())
        }
        1 => {
            let (chunks, n) = (r.u64()?, r.u64()?);
            if chunks > r.buf.len() {
                return Err(malformed("chunk count larger than file"));
            }
            let mut mats = Vec::with_capacity(chunks);
            let mut biases = Vec::with_capacity(chunks);
            for _ in 0..chunks {
                let m: [Vec<f64>; 6] = [
                    r.array(&[n, n])?,
                    r.array(&[n, n])?,
                    r.array(&[n, n])?,
                    r.array(&[n, n])?,
                    r.array(&[n, n])?,
                    r.array(&[n, n])?,
                ];
                let b: [Vec<f64>; 3] = [r.array(&[n])?, r.array(&[n])?, r.array(&[n])?];
                mats.push(m);
                biases.push(b);
            }
            Ok(GruDriver::from_parts(n, mats, biases)?.into())
        }
        t => Err(Error::MalformedCheckpoint(format!("unknown driver tag {t}"))),
    }
}

fn write_readout(w: &mut Writer, ro: &LinearReadout) {
    w.u64(ro.out_dim());
    w.u64(ro.res_dim());
    w.u64(ro.chunks());
    w.array(&[ro.chunks(), ro.out_per_chunk(), ro.res_dim()], ro.weights());
}

fn read_readout(r: &mut Reader) -> Result<LinearReadout> {
    let (out_dim, n, chunks) = (r.u64()?, r.u64()?, r.u64()?);
    if chunks == 0 || out_dim % chunks != 0 {
        return Err(malformed("readout chunks do not divide out_dim"));
    }
    let w = r.array(&[chunks, out_dim / chunks, n])?;
    LinearReadout::from_weights(out_dim, n, chunks, w)
}

fn write_solver(w: &mut Writer, s: Solver) {
    match s {
        Solver::Dopri5 { rtol, atol, max_steps } => {
            w.u8(0);
            w.f64(rtol);
            w.f64(atol);
            w.u64(max_steps);
        }
        Solver::Dopri5Fixed { h } => {
            w.u8(1);
            w.f64(h);
        }
        Solver::Euler { h } => {
            w.u8(2);
            w.f64(h);
        }
    }
}

fn read_solver(r: &mut Reader) -> Result<Solver> {
    Ok(match r.u8()? {
        0 => Solver::Dopri5 {
            rtol: r.f64()?,
            atol: r.f64()?,
            max_steps: r.u64()?,
        },
        1 => Solver::Dopri5Fixed { h: r.f64()? },
        2 => Solver::Euler { h: r.f64()? },
        t => return Err(Error::MalformedCheckpoint(format!("unknown solver tag {t}"))),
    })
}

/// Serializes `model` into a byte vector.
pub fn to_bytes(model: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(MAGIC);
    w.buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    match model {
        Checkpoint::Discrete(m) => {
            w.u8(0);
            write_embedding(&mut w, m.embedding());
            write_driver(&mut w, m.driver());
            write_readout(&mut w, m.readout());
        }
        Checkpoint::Continuous(m) => {
            w.u8(1);
            write_embedding(&mut w, m.embedding());
            w.f64(m.driver().time_const());
            write_solver(&mut w, m.driver().solver());
            write_weights(&mut w, m.driver().weights());
            w.u8(match m.feedback() {
                Feedback::PiecewiseConstant => 0,
                Feedback::LinearRamp => 1,
                Feedback::CubicHermite => 2,
            });
            write_readout(&mut w, m.readout());
        }
    }
    let crc = crc32fast::hash(&w.buf);
    w.buf.extend_from_slice(&crc.to_le_bytes());
    w.buf
}

/// Parses a checkpoint produced by [`to_bytes`].
pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(malformed("missing ORCM header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::CorruptChecksum);
    }
    let mut r = Reader { buf: body, pos: 8 };
    let model = match r.u8()? {
        0 => {
            let embedding = read_embedding(&mut r)?;
            let driver = read_driver(&mut r)?;
            let readout = read_readout(&mut r)?;
            Checkpoint::Discrete(EsnForecaster::new(embedding, driver, readout)?)
        }
        1 => {
            let embedding = read_embedding(&mut r)?;
            let time_const = r.f64()?;
            let solver = read_solver(&mut r)?;
            let weights = read_weights(&mut r)?;
            let feedback = match r.u8()? {
                0 => Feedback::PiecewiseConstant,
                1 => Feedback::LinearRamp,
                2 => Feedback::CubicHermite,
                t => return Err(Error::MalformedCheckpoint(format!("unknown feedback tag {t}"))),
            };
            let readout = read_readout(&mut r)?;
            let driver = ContinuousEsnDriver::new(weights, time_const, solver)?;
            Checkpoint::Continuous(ContinuousForecaster::new(embedding, driver, readout)?.with_feedback(feedback))
        }
        t => return Err(Error::MalformedCheckpoint(format!("unknown model tag {t}"))),
    };
    if r.pos != body.len() {
        return Err(malformed("trailing bytes after model"));
    }
    Ok(model)
}

pub fn write_checkpoint<W: Write>(model: &Checkpoint, mut w: W) -> Result<()> {
    w.write_all(&to_bytes(model))?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

pub fn save(model: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::make_linear_embedding;
    use crate::rng::{seeded_rng, RngSpec};

    fn discrete(gru: bool, elu: bool) -> Checkpoint {
        let rng = seeded_rng(RngSpec::new(1));
        let emb: Embedding = if elu {
            EluEmbedding::random(4, 8, &rng).unwrap().into()
        } else {
            LinearEmbedding::random(ChunkLayout::new(4, 2, 1).unwrap(), 8, 0.1, &rng).unwrap().into()
        };
        let chunks = emb.chunks();
        let drv: Driver = if gru {
            GruDriver::random(chunks, 8, &rng).unwrap().into()
        } else {
            LeakyEsnDriver::random(chunks, 8, 0.6, 0.8, 1.0, &rng).unwrap().into()
        };
        let mut w = vec![0.0; 4 * 8];
        seeded_rng(RngSpec::new(2)).fill_normal(&mut w);
        let ro = LinearReadout::from_weights(4, 8, chunks, w).unwrap();
        EsnForecaster::new(emb, drv, ro).unwrap().into()
    }

    #[test]
    fn round_trips() {
        for (gru, elu) in [(false, false), (true, false), (false, true), (true, true)] {
            let m = discrete(gru, elu);
            assert_eq!(from_bytes(&to_bytes(&m)).unwrap(), m);
        }
        let rng = seeded_rng(RngSpec::new(3));
        let w = ReservoirWeights::random(1, 6, 0.9, 0.2, &rng).unwrap();
        let drv = ContinuousEsnDriver::new(w, 40.0, Solver::Euler { h: 0.01 }).unwrap();
        let emb = make_linear_embedding(3, 6, 1, 0, 0.3, &rng).unwrap();
        let m: Checkpoint = ContinuousForecaster::untrained(emb.into(), drv)
            .unwrap()
            .with_feedback(Feedback::LinearRamp)
            .into();
        assert_eq!(from_bytes(&to_bytes(&m)).unwrap(), m);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.orcm");
        let m = discrete(false, false);
        save(&m, &path).unwrap();
        assert_eq!(load(&path).unwrap(), m);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = to_bytes(&discrete(false, false));
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(from_bytes(&bytes), Err(Error::CorruptChecksum)));
    }

    #[test]
    fn version_is_checked() {
        let mut bytes = to_bytes(&discrete(false, false));
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            from_bytes(&bytes),
            Err(Error::VersionMismatch { found: 7, supported: 1 })
        ));
        assert!(matches!(from_bytes(b"NOPE12345678"), Err(Error::MalformedCheckpoint(_))));
    }
}
