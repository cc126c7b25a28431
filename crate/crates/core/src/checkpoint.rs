//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `EXWAVECK`, `u32` version, `u64` n, `u64` L,
//! `f64` pitch / wavelength / spacing, `u64` master seed, `u8` expressway
//! flag, L `f64` express weights, then per layer a `u8` mode (0 wavelet,
//! 1 dense), for wavelet layers `u64` x_q and y_q, a `u64` phase count and the
//! phases. Floats are stored by bit pattern, so a round trip is exact.

use std::path::Path;

use crate::diffraction::PropagationGeometry;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::wavelet::{CircleMap, PhaseMode, WaveletLayer};

pub const MAGIC: &[u8; 8] = b"EXWAVECK";
pub const VERSION: u32 = 1;

pub fn encode(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let g = net.geometry();
    put_u64(&mut out, g.n as u64);
    put_u64(&mut out, net.layer_count() as u64);
    for v in [g.pitch, g.wavelength, g.spacing] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    put_u64(&mut out, net.master_seed());
    out.push(u8::from(net.express_enabled()));
    for w in net.express_weights() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    for layer in net.layers() {
        match layer.fixed_point() {
            Some((x, y)) => {
                out.push(0);
                put_u64(&mut out, x as u64);
                put_u64(&mut out, y as u64);
            }
            None => out.push(1),
        }
        put_u64(&mut out, layer.phases().len() as u64);
        for p in layer.phases() {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    out
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn usize(&mut self, what: &str, limit: usize) -> Result<usize> {
        let v = self.u64(what)?;
        if v > limit as u64 {
            return Err(Error::Checkpoint(format!("{what} = {v} exceeds {limit}")));
        }
        Ok(v as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic").ok() != Some(&MAGIC[..]) {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    // Caps keep a corrupt header from driving huge allocations.
    let n = r.usize("side", 1 << 14)?;
    let layer_count = r.usize("layer count", 1 << 16)?;
    let pitch = r.f64("pitch")?;
    let wavelength = r.f64("wavelength")?;
    let spacing = r.f64("spacing")?;
    let geometry = PropagationGeometry::new(n, pitch, wavelength, spacing)
        .map_err(|e| Error::Checkpoint(format!("invalid geometry: {e}")))?;
    let seed = r.u64("seed")?;
    let express = match r.u8("express flag")? {
        0 => false,
        1 => true,
        other => return Err(Error::Checkpoint(format!("bad express flag {other}"))),
    };
    let weights = (0..layer_count).map(|_| r.f64("express weight")).collect::<Result<Vec<_>>>()?;
    let mut layers = Vec::with_capacity(layer_count);
    for l in 0..layer_count {
        let mode = match r.u8("layer mode")? {
            0 => PhaseMode::Wavelet,
            1 => PhaseMode::Dense,
            other => return Err(Error::Checkpoint(format!("layer {l}: bad mode tag {other}"))),
        };
        let q = match mode {
            PhaseMode::Wavelet => Some((r.usize("x_q", n)?, r.usize("y_q", n)?)),
            PhaseMode::Dense => None,
        };
        let count = r.usize("phase count", n * n)?;
        let phases = (0..count).map(|_| r.f64("phase")).collect::<Result<Vec<_>>>()?;
        let layer = match q {
            Some(q) => CircleMap::build(n, q).and_then(|m| WaveletLayer::wavelet(m, phases)),
            None => WaveletLayer::dense(n, phases),
        }
        .map_err(|e| Error::Checkpoint(format!("layer {l}: {e}")))?;
        layers.push(layer);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Network::new(layers, geometry, express, weights, seed)
        .map_err(|e| Error::Checkpoint(format!("inconsistent network: {e}")))
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, encode(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Network> {
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
