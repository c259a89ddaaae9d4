//! Checkpoint container: `b"CKP1"`, `u32` section count, then per section a
//! `u16` name length, the UTF-8 name and one embedding-store block holding
//! the tensor (vectors are stored as `1 x n`).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{AdamState, MlpParams, ModelError, ModelParams, Result};
use crate::embedder::{read_block, write_block, Precision};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CKP1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: AdamState,
    pub epoch: u64,
}

fn mlp_sections(prefix: &str, p: &MlpParams, out: &mut Vec<(String, Array2<f64>)>) {
    let row = |v: &Array1<f64>| v.clone().insert_axis(ndarray::Axis(0));
    out.push((format!("{prefix}.w1"), p.w1.clone()));
    out.push((format!("{prefix}.b1"), row(&p.b1)));
    out.push((format!("{prefix}.w2"), p.w2.clone()));
    out.push((format!("{prefix}.b2"), row(&p.b2)));
}

fn model_sections(prefix: &str, p: &ModelParams, out: &mut Vec<(String, Array2<f64>)>) {
    mlp_sections(&format!("{prefix}user"), &p.user, out);
    mlp_sections(&format!("{prefix}item"), &p.item, out);
}

fn take(sections: &mut BTreeMap<String, Array2<f64>>, name: &str) -> Result<Array2<f64>> {
    sections
        .remove(name)
        .ok_or_else(|| ModelError::BadCheckpoint(format!("missing section {name}")))
}

/// A `u64` as two 32-bit halves, each exact in an `f64`.
fn split_counter(c: u64) -> [f64; 2] {
    [(c >> 32) as f64, (c & 0xffff_ffff) as f64]
}

fn join_counter(hi: f64, lo: f64) -> Option<u64> {
    let half = |x: f64| (x >= 0.0 && x <= u32::MAX as f64 && x.fract() == 0.0).then_some(x as u64);
    Some((half(hi)? << 32) | half(lo)?)
}

impl Checkpoint {
    fn sections(&self) -> Vec<(String, Array2<f64>)> {
        let mut out = Vec::new();
        model_sections("", &self.params, &mut out);
        model_sections("adam.m.", &self.adam.m, &mut out);
        model_sections("adam.v.", &self.adam.v, &mut out);
        let mut counters = split_counter(self.epoch).to_vec();
        counters.extend(split_counter(self.adam.t));
        let meta = Array2::from_shape_vec((1, 4), counters).unwrap();
        out.push(("meta".into(), meta));
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let sections = self.sections();
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(sections.len() as u32).to_le_bytes())?;
        for (name, m) in &sections {
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            write_block(w, m, Precision::F64)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let bad = |msg: String| ModelError::BadCheckpoint(msg);
        let mut head = [0u8; 8];
        r.read_exact(&mut head).map_err(|_| bad("truncated header".into()))?;
        if &head[..4] != CHECKPOINT_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let count = u32::from_le_bytes(head[4..].try_into().unwrap());
        let mut sections = BTreeMap::new();
        for _ in 0..count {
            let mut len = [0u8; 2];
            r.read_exact(&mut len).map_err(|_| bad("truncated section".into()))?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut name).map_err(|_| bad("truncated section name".into()))?;
            let name = String::from_utf8(name).map_err(|_| bad("section name is not UTF-8".into()))?;
            let (m, _) = read_block(r).map_err(|e| bad(format!("section {name}: {e}")))?;
            sections.insert(name, m);
        }
        let mut mlp = |prefix: &str| -> Result<MlpParams> {
            let flat = |m: Array2<f64>| Array1::from_iter(m);
            let p = MlpParams {
                w1: take(&mut sections, &format!("{prefix}.w1"))?,
                b1: flat(take(&mut sections, &format!("{prefix}.b1"))?),
                w2: take(&mut sections, &format!("{prefix}.w2"))?,
                b2: flat(take(&mut sections, &format!("{prefix}.b2"))?),
            };
            p.check()?;
            Ok(p)
        };
        let params = ModelParams {
            user: mlp("user")?,
            item: mlp("item")?,
        };
        let m = ModelParams {
            user: mlp("adam.m.user")?,
            item: mlp("adam.m.item")?,
        };
        let v = ModelParams {
            user: mlp("adam.v.user")?,
            item: mlp("adam.v.item")?,
        };
        let meta = take(&mut sections, "meta")?;
        if meta.dim() != (1, 4) {
            return Err(bad("meta section must be 1x4".into()));
        }
        let epoch = join_counter(meta[[0, 0]], meta[[0, 1]]).ok_or_else(|| bad("bad epoch counter".into()))?;
        let t = join_counter(meta[[0, 2]], meta[[0, 3]]).ok_or_else(|| bad("bad step counter".into()))?;
        if !params.same_shape(&m) || !params.same_shape(&v) {
            return Err(bad("optimizer state does not match parameter shapes".into()));
        }
        Ok(Checkpoint {
            params,
            adam: AdamState {
                m,
                v,
                t,
            },
            epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}
