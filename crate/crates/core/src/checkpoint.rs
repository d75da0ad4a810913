//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "DIFFBID\0"
//! version    u32
//! sections   u32      number of sections
//! section*   tag [u8; 4], length u64, payload
//! checksum   u32      CRC-32 of every preceding byte
//! ```
//!
//! Section `DNSR` (denoiser): config block (u32 length + JSON), schedule
//! block (u32 K, f64 γ, u8 squared, K × f64 β₁..β_K), u64 condition-layout
//! hash, u64 parameter count, weights then EMA weights as f64 in layout
//! declaration order.
//!
//! Section `INVD` (inverse dynamics): config block, u32 state width, u32
//! action width, action scales as f64, u64 parameter count, weights.
//!
//! Section `META` (policy bundle): JSON with sampler settings, condition
//! labeler, feature statistics, horizon and fallback λ.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conditions::{ConditionLabeler, ConditionLayout};
use crate::denoiser::{DenoiserConfig, DenoiserNet, DenoiserParams};
use crate::error::{Error, Result};
use crate::eval::PolicyBundle;
use crate::invdyn::{InvDynConfig, InvDynNet, InvDynParams};
use crate::sampler::SamplerConfig;
use crate::schedule::NoiseSchedule;
use crate::types::FeatureStats;

pub const MAGIC: &[u8; 8] = b"DIFFBID\0";
pub const FORMAT_VERSION: u32 = 1;
pub const TAG_DENOISER: &[u8; 4] = b"DNSR";
pub const TAG_INVDYN: &[u8; 4] = b"INVD";
pub const TAG_META: &[u8; 4] = b"META";

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
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
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.f64(*x);
        }
    }
    fn json<T: Serialize>(&mut self, v: &T) -> Result<()> {
        let s = serde_json::to_vec(v).map_err(|e| Error::Malformed(format!("cannot encode config: {e}")))?;
        self.u32(s.len() as u32);
        self.0.extend_from_slice(&s);
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!("need {n} bytes at offset {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Malformed("array length overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
    fn json<T: for<'de> Deserialize<'de>>(&mut self) -> Result<T> {
        let n = self.u32()? as usize;
        let s = self.take(n)?;
        serde_json::from_slice(s).map_err(|e| Error::Malformed(format!("bad config block: {e}")))
    }
    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Malformed(format!("{} trailing bytes in section", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

/// Wraps tagged sections into the container with header and checksum.
pub fn encode_sections(sections: &[(&[u8; 4], Vec<u8>)]) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(sections.len() as u32);
    for (tag, payload) in sections {
        w.0.extend_from_slice(*tag);
        w.u64(payload.len() as u64);
        w.0.extend_from_slice(payload);
    }
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    w.0
}

/// Validates the container and returns its sections.
pub fn decode_sections(bytes: &[u8]) -> Result<Vec<([u8; 4], Vec<u8>)>> {
    // Magic, version, section count and checksum.
    if bytes.len() < MAGIC.len() + 12 {
        return Err(Error::Truncated(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Malformed("not a checkpoint (bad magic)".into()));
    }
    let mut r = Reader::new(&bytes[8..]);
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if computed != stored {
        return Err(Error::Checksum { stored, computed });
    }
    let count = u32::from_le_bytes(body[12..16].try_into().expect("4 bytes"));
    let mut r = Reader::new(&body[16..]);
    let mut sections = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        let len = r.u64()? as usize;
        let payload = r.take(len)?.to_vec();
        sections.push((tag, payload));
    }
    r.done()?;
    Ok(sections)
}

fn section<'a>(sections: &'a [([u8; 4], Vec<u8>)], tag: &[u8; 4]) -> Result<&'a [u8]> {
    sections
        .iter()
        .find(|(t, _)| t == tag)
        .map(|(_, p)| p.as_slice())
        .ok_or_else(|| Error::Malformed(format!("missing section {}", String::from_utf8_lossy(tag))))
}

pub fn encode_denoiser(params: &DenoiserParams, schedule: &NoiseSchedule, layout_hash: u64) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.json(params.config())?;
    w.u32(schedule.steps as u32);
    w.f64(schedule.gamma);
    w.u8(schedule.squared as u8);
    w.f64s(&schedule.beta[1..]);
    w.u64(layout_hash);
    w.u64(params.weights.len() as u64);
    w.f64s(&params.weights);
    w.f64s(&params.ema);
    Ok(w.0)
}

pub fn decode_denoiser(payload: &[u8]) -> Result<(DenoiserParams, NoiseSchedule, u64)> {
    let mut r = Reader::new(payload);
    let config: DenoiserConfig = r.json()?;
    let steps = r.u32()? as usize;
    let gamma = r.f64()?;
    let squared = r.u8()? != 0;
    let mut beta = vec![0.0];
    beta.extend(r.f64s(steps)?);
    let mut schedule = NoiseSchedule::from_beta(beta)?;
    schedule.gamma = gamma;
    schedule.squared = squared;
    let layout_hash = r.u64()?;
    let n = r.u64()? as usize;
    let net = DenoiserNet::new(&config)?;
    if n != net.n_params() {
        return Err(Error::Malformed(format!("config implies {} parameters, file has {n}", net.n_params())));
    }
    let weights = r.f64s(n)?;
    let ema = r.f64s(n)?;
    r.done()?;
    let params = DenoiserParams { net, weights, ema };
    if !params.is_finite() {
        return Err(Error::NonFinite("checkpoint weights".into()));
    }
    Ok((params, schedule, layout_hash))
}

pub fn encode_invdyn(params: &InvDynParams) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.json(&params.net.config)?;
    w.u32(params.net.state_dim as u32);
    w.u32(params.net.action_dim as u32);
    w.f64s(&params.action_scale);
    w.u64(params.weights.len() as u64);
    w.f64s(&params.weights);
    Ok(w.0)
}

pub fn decode_invdyn(payload: &[u8]) -> Result<InvDynParams> {
    let mut r = Reader::new(payload);
    let config: InvDynConfig = r.json()?;
    let state_dim = r.u32()? as usize;
    let action_dim = r.u32()? as usize;
    let action_scale = r.f64s(action_dim)?;
    let n = r.u64()? as usize;
    let net = InvDynNet::new(&config, state_dim, action_dim)?;
    if n != net.layout().len() {
        return Err(Error::Malformed(format!("config implies {} parameters, file has {n}", net.layout().len())));
    }
    let weights = r.f64s(n)?;
    r.done()?;
    if weights.iter().chain(&action_scale).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("checkpoint weights".into()));
    }
    Ok(InvDynParams {
        net,
        weights,
        action_scale,
    })
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    sampler: SamplerConfig,
    labeler: ConditionLabeler,
    feature_stats: FeatureStats,
    horizon: usize,
    fallback_lambda: Vec<f64>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Denoiser-only checkpoint.
pub fn save_denoiser(path: impl AsRef<Path>, params: &DenoiserParams, schedule: &NoiseSchedule, layout: &ConditionLayout) -> Result<()> {
    let bytes = encode_sections(&[(TAG_DENOISER, encode_denoiser(params, schedule, layout.hash())?)]);
    write_file(path.as_ref(), &bytes)
}

/// Loads a denoiser checkpoint; with `expected` set, the stored layout hash
/// must match it.
pub fn load_denoiser(path: impl AsRef<Path>, expected: Option<&ConditionLayout>) -> Result<(DenoiserParams, NoiseSchedule, u64)> {
    let sections = decode_sections(&read_file(path.as_ref())?)?;
    let out = decode_denoiser(section(&sections, TAG_DENOISER)?)?;
    if let Some(layout) = expected {
        if layout.hash() != out.2 {
            return Err(Error::LayoutMismatch {
                expected: out.2,
                got: layout.hash(),
            });
        }
    }
    Ok(out)
}

pub fn save_invdyn(path: impl AsRef<Path>, params: &InvDynParams) -> Result<()> {
    let bytes = encode_sections(&[(TAG_INVDYN, encode_invdyn(params)?)]);
    write_file(path.as_ref(), &bytes)
}

pub fn load_invdyn(path: impl AsRef<Path>) -> Result<InvDynParams> {
    let sections = decode_sections(&read_file(path.as_ref())?)?;
    decode_invdyn(section(&sections, TAG_INVDYN)?)
}

pub fn encode_bundle(bundle: &PolicyBundle) -> Result<Vec<u8>> {
    let meta = BundleMeta {
        sampler: bundle.sampler.clone(),
        labeler: bundle.labeler.clone(),
        feature_stats: bundle.feature_stats,
        horizon: bundle.horizon,
        fallback_lambda: bundle.fallback_lambda.clone(),
    };
    let meta = serde_json::to_vec(&meta).map_err(|e| Error::Malformed(format!("cannot encode bundle metadata: {e}")))?;
    Ok(encode_sections(&[
        (TAG_DENOISER, encode_denoiser(&bundle.denoiser, &bundle.schedule, bundle.labeler.layout.hash())?),
        (TAG_INVDYN, encode_invdyn(&bundle.invdyn)?),
        (TAG_META, meta),
    ]))
}

pub fn decode_bundle(bytes: &[u8]) -> Result<PolicyBundle> {
    let sections = decode_sections(bytes)?;
    let (denoiser, schedule, hash) = decode_denoiser(section(&sections, TAG_DENOISER)?)?;
    let invdyn = decode_invdyn(section(&sections, TAG_INVDYN)?)?;
    let meta: BundleMeta = serde_json::from_slice(section(&sections, TAG_META)?)
        .map_err(|e| Error::Malformed(format!("bad bundle metadata: {e}")))?;
    if meta.labeler.layout.hash() != hash {
        return Err(Error::LayoutMismatch {
            expected: hash,
            got: meta.labeler.layout.hash(),
        });
    }
    let bundle = PolicyBundle {
        denoiser,
        schedule,
        invdyn,
        sampler: meta.sampler,
        labeler: meta.labeler,
        feature_stats: meta.feature_stats,
        horizon: meta.horizon,
        fallback_lambda: meta.fallback_lambda,
    };
    bundle.validate()?;
    Ok(bundle)
}

pub fn save_bundle(path: impl AsRef<Path>, bundle: &PolicyBundle) -> Result<()> {
    write_file(path.as_ref(), &encode_bundle(bundle)?)
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<PolicyBundle> {
    decode_bundle(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_roundtrip_and_corruption() {
        let bytes = encode_sections(&[(b"ABCD", vec![1, 2, 3]), (b"EFGH", vec![])]);
        let s = decode_sections(&bytes).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].1, vec![1, 2, 3]);

        let mut bad = bytes.clone();
        bad[20] ^= 0xff;
        assert!(matches!(decode_sections(&bad), Err(Error::Checksum { .. })));
        assert!(decode_sections(&bytes[..bytes.len() - 6]).is_err());

        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(decode_sections(&v2), Err(Error::VersionMismatch { found: 2, .. })));
        assert!(matches!(decode_sections(b"NOTACHECKPOINT__________"), Err(Error::Malformed(_))));
    }
}
