//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "ITDECKPT" | version u32 | config_len u32 | config UTF-8
//! step u64 | n_tensors u32
//! n_tensors × (name_len u32 | name | ndim u32 | dims u32… | f32 data…)
//! has_optimizer u8 | [opt_step u64 | n_tensors × (first f32… | second f32…)]
//! ```

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::optim::{Adam, AdamConfig};
use crate::nn::params::ParamStore;
use crate::nn::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"ITDECKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor<f32>,
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub step: u64,
    pub first: Vec<Tensor<f32>>,
    pub second: Vec<Tensor<f32>>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: String,
    pub step: u64,
    pub tensors: Vec<NamedTensor>,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn capture<F: Scalar>(config: String, step: u64, params: &ParamStore<F>, optimizer: Option<&Adam<F>>) -> Self {
        let tensors = params
            .iter()
            .map(|(_, p)| NamedTensor {
                name: p.name.clone(),
                tensor: p.value.cast(),
            })
            .collect();
        let optimizer = optimizer.map(|o| {
            let (m, v) = o.moments();
            OptimizerState {
                step: o.step_count(),
                first: m.iter().map(Tensor::cast).collect(),
                second: v.iter().map(Tensor::cast).collect(),
            }
        });
        Checkpoint {
            config,
            step,
            tensors,
            optimizer,
        }
    }

    /// Copies stored values into `params`, checking names and shapes.
    pub fn restore_params<F: Scalar>(&self, params: &mut ParamStore<F>) -> Result<()> {
        if self.tensors.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                self.tensors.len(),
                params.len()
            )));
        }
        for (nt, p) in self.tensors.iter().zip(params.iter_mut()) {
            if nt.name != p.name || nt.tensor.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor mismatch: checkpoint {} {:?} vs model {} {:?}",
                    nt.name,
                    nt.tensor.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = nt.tensor.cast();
        }
        Ok(())
    }

    pub fn restore_optimizer<F: Scalar>(&self, config: AdamConfig, params: &ParamStore<F>) -> Result<Adam<F>> {
        let Some(state) = &self.optimizer else {
            return Ok(Adam::new(config, params));
        };
        for ((m, v), (_, p)) in state.first.iter().zip(&state.second).zip(params.iter()) {
            if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!("optimizer moment shape mismatch for {}", p.name)));
            }
        }
        Ok(Adam::from_state(
            config,
            state.step,
            state.first.iter().map(Tensor::cast).collect(),
            state.second.iter().map(Tensor::cast).collect(),
        ))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_bytes(&mut w, self.config.as_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for nt in &self.tensors {
            write_bytes(&mut w, nt.name.as_bytes())?;
            let shape = nt.tensor.shape();
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            write_floats(&mut w, nt.tensor.data())?;
        }
        match &self.optimizer {
            None => w.write_all(&[0])?,
            Some(o) => {
                w.write_all(&[1])?;
                w.write_all(&o.step.to_le_bytes())?;
                for (m, v) in o.first.iter().zip(&o.second) {
                    write_floats(&mut w, m.data())?;
                    write_floats(&mut w, v.data())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let config = String::from_utf8(read_bytes(&mut r)?)
            .map_err(|_| Error::Checkpoint("config block is not UTF-8".into()))?;
        let step = read_u64(&mut r)?;
        let n = read_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let name = String::from_utf8(read_bytes(&mut r)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let ndim = read_u32(&mut r)? as usize;
            let shape = (0..ndim)
                .map(|_| read_u32(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let data = read_floats(&mut r, shape.iter().product())?;
            let tensor = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            tensors.push(NamedTensor { name, tensor });
        }
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let optimizer = if flag[0] == 1 {
            let step = read_u64(&mut r)?;
            let mut first = Vec::with_capacity(n);
            let mut second = Vec::with_capacity(n);
            for nt in &tensors {
                let shape = nt.tensor.shape().to_vec();
                let len = nt.tensor.len();
                first.push(Tensor::new(shape.clone(), read_floats(&mut r, len)?)?);
                second.push(Tensor::new(shape, read_floats(&mut r, len)?)?);
            }
            Some(OptimizerState { step, first, second })
        } else {
            None
        };
        Ok(Checkpoint {
            config,
            step,
            tensors,
            optimizer,
        })
    }
}

fn write_bytes(w: &mut impl Write, bytes: &[u8]) -> Result<()> {
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn write_floats(w: &mut impl Write, data: &[f32]) -> Result<()> {
    for x in data {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read) -> Result<Vec<u8>> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_floats(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let mut store = ParamStore::<f32>::new();
        store.add("a", Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.5, 0.25]).unwrap());
        store.add("b", Tensor::new(vec![3], vec![7.0, 8.0, 9.0]).unwrap());
        let opt = Adam::new(AdamConfig::default(), &store);
        let ck = Checkpoint::capture("layers = 1\n".into(), 17, &store, Some(&opt));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.config, "layers = 1\n");
        assert_eq!(back.step, 17);
        assert!(back.optimizer.is_some());

        let mut fresh = ParamStore::<f32>::new();
        fresh.add("a", Tensor::zeros(&[2, 2]));
        fresh.add("b", Tensor::zeros(&[3]));
        back.restore_params(&mut fresh).unwrap();
        assert_eq!(fresh.get(fresh.find("a").unwrap()).value.data(), &[1.0, -2.0, 3.5, 0.25]);

        let mut wrong = ParamStore::<f32>::new();
        wrong.add("a", Tensor::zeros(&[4]));
        wrong.add("b", Tensor::zeros(&[3]));
        assert!(back.restore_params(&mut wrong).is_err());
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        fs::write(&path, b"NOTACKPT\x01\x00\x00\x00").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    }
}
