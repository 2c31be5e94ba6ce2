//! Versioned binary checkpoints holding both agents.
//!
//! ```text
//! magic "PRBCKPT\0" | version u32 | phase u32 | config hash u64
//! then for the PRB agent and the power agent, in that order:
//!   present u8; if 1:
//!   in u32 | hidden u32 | out u32 | n u64 | params f64 x n
//!   adam: lr f64 | beta1 f64 | beta2 f64 | eps f64 | step u64 | m f64 x n | v f64 x n
//! ```
//! All integers and floats little-endian.

use std::fs;
use std::path::Path;

use super::nn::PolicyNet;
use super::ppo::{Adam, Agent};
use super::RlError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PRBCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub phase: u32,
    pub config_hash: u64,
    pub prb: Option<Agent>,
    pub pow: Option<Agent>,
}

fn put_agent(buf: &mut Vec<u8>, agent: &Option<Agent>) {
    let Some(a) = agent else {
        buf.push(0);
        return;
    };
    buf.push(1);
    let n = &a.net;
    for d in [n.in_dim, n.hidden, n.out_dim] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(n.params.len() as u64).to_le_bytes());
    n.params.iter().for_each(|p| buf.extend_from_slice(&p.to_le_bytes()));
    let o = &a.opt;
    for f in [o.lr, o.beta1, o.beta2, o.eps] {
        buf.extend_from_slice(&f.to_le_bytes());
    }
    buf.extend_from_slice(&o.step.to_le_bytes());
    o.m.iter().chain(&o.v).for_each(|p| buf.extend_from_slice(&p.to_le_bytes()));
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&ck.phase.to_le_bytes());
    buf.extend_from_slice(&ck.config_hash.to_le_bytes());
    put_agent(&mut buf, &ck.prb);
    put_agent(&mut buf, &ck.pow);
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RlError> {
        if self.bytes.len() - self.pos < n {
            return Err(RlError::Checkpoint { offset: self.pos, reason: "truncated".into() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, RlError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, RlError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, RlError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, RlError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, RlError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.err("length overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn err(&self, reason: &str) -> RlError {
        RlError::Checkpoint { offset: self.pos, reason: reason.into() }
    }
}

fn get_agent(c: &mut Cursor) -> Result<Option<Agent>, RlError> {
    match c.u8()? {
        0 => return Ok(None),
        1 => {}
        _ => return Err(c.err("bad presence flag")),
    }
    let (i, h, o) = (c.u32()? as usize, c.u32()? as usize, c.u32()? as usize);
    let n = c.u64()? as usize;
    if n != PolicyNet::num_params(i, h, o) {
        return Err(c.err("parameter count disagrees with dimensions"));
    }
    let params = c.f64s(n)?;
    let (lr, beta1, beta2, eps) = (c.f64()?, c.f64()?, c.f64()?, c.f64()?);
    let step = c.u64()?;
    let m = c.f64s(n)?;
    let v = c.f64s(n)?;
    Ok(Some(Agent {
        net: PolicyNet { in_dim: i, hidden: h, out_dim: o, params },
        opt: Adam { lr, beta1, beta2, eps, step, m, v },
    }))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, RlError> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != CHECKPOINT_MAGIC {
        return Err(RlError::Checkpoint { offset: 0, reason: "bad magic".into() });
    }
    if c.u32()? != CHECKPOINT_VERSION {
        return Err(RlError::Checkpoint { offset: 8, reason: "unsupported version".into() });
    }
    let phase = c.u32()?;
    let config_hash = c.u64()?;
    let prb = get_agent(&mut c)?;
    let pow = get_agent(&mut c)?;
    if c.pos != bytes.len() {
        return Err(c.err("trailing bytes"));
    }
    Ok(Checkpoint { phase, config_hash, prb, pow })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), RlError> {
    fs::write(path, encode_checkpoint(ck))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, RlError> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut a = Agent::new(PolicyNet::init(8, 6, 4, -0.5, &mut rng), 3e-4);
        let g: Vec<f64> = (0..a.net.params.len()).map(|i| (i as f64).sin()).collect();
        a.opt.apply(&mut a.net.params, &g);
        Checkpoint { phase: 1, config_hash: 0xdead_beef, prb: Some(a), pow: None }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        save_checkpoint(&ck, &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.prb.unwrap().net.checksum(), ck.prb.unwrap().net.checksum());
    }

    #[test]
    fn corrupt_input_rejected() {
        let bytes = encode_checkpoint(&sample());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = 0;
        assert!(matches!(decode_checkpoint(&bad), Err(RlError::Checkpoint { offset: 0, .. })));
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
    }
}
