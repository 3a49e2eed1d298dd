//! Versioned little-endian model checkpoint.
//!
//! ```text
//! magic "BMICLNN\0" | u32 version
//! config: 10 × u32 (channels, samples, classes, F1, K1, D, pool1, K3, F2, pool2)
//!         3 × f64 (dropout, bn momentum, bn eps)
//! u32 tensor count, then per tensor: u32 length + f32 values
//! running stats: 3 × (mean tensor, var tensor), same encoding
//! u8 quant flag; if 1: f64 input log2 threshold, u8 enabled, u8 head quantized
//! ```

use std::path::Path;

use super::config::ModelConfig;
use super::model::{Model, QuantState};
use super::params::Params;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"BMICLNN\0";
pub const VERSION: u32 = 1;

pub(crate) struct Writer(pub Vec<u8>);

impl Writer {
    pub fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    pub fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn i8s(&mut self, v: &[i8]) {
        self.u32(v.len() as u32);
        self.0.extend(v.iter().map(|x| *x as u8));
    }
    pub fn f64s(&mut self, v: &[f64]) {
        self.u32(v.len() as u32);
        for x in v {
            self.f64(*x);
        }
    }
    pub fn f32s(&mut self, v: &[f32]) {
        self.u32(v.len() as u32);
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn i8s(&mut self) -> Result<Vec<i8>> {
        let n = self.u32()? as usize;
        Ok(self.take(n)?.iter().map(|b| *b as i8).collect())
    }
    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()? as usize;
        (0..n).map(|_| self.f64()).collect()
    }
    pub fn f32s(&mut self) -> Result<Vec<f32>> {
        let n = self.u32()? as usize;
        let raw = self.take(n * 4)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

pub(crate) fn write_config(w: &mut Writer, c: &ModelConfig) {
    for v in [
        c.n_channels,
        c.n_samples,
        c.n_classes,
        c.temporal_filters,
        c.temporal_kernel,
        c.depth_multiplier,
        c.pool1,
        c.separable_kernel,
        c.separable_filters,
        c.pool2,
    ] {
        w.u32(v as u32);
    }
    w.f64(c.dropout);
    w.f64(c.bn_momentum);
    w.f64(c.bn_eps);
}

pub(crate) fn read_config(r: &mut Reader) -> Result<ModelConfig> {
    let mut u = [0usize; 10];
    for v in &mut u {
        *v = r.u32()? as usize;
    }
    let cfg = ModelConfig {
        n_channels: u[0],
        n_samples: u[1],
        n_classes: u[2],
        temporal_filters: u[3],
        temporal_kernel: u[4],
        depth_multiplier: u[5],
        pool1: u[6],
        separable_kernel: u[7],
        separable_filters: u[8],
        pool2: u[9],
        dropout: r.f64()?,
        bn_momentum: r.f64()?,
        bn_eps: r.f64()?,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn to_bytes(model: &Model<f32>) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    write_config(&mut w, model.config());
    let tensors = &model.params().tensors;
    w.u32(tensors.len() as u32);
    for t in tensors {
        w.f32s(t);
    }
    for s in model.running() {
        w.f32s(&s.mean);
        w.f32s(&s.var);
    }
    match model.quant() {
        Some(q) => {
            w.u8(1);
            w.f64(q.input_log2_t);
            w.u8(q.enabled as u8);
            w.u8(q.quantize_head as u8);
        }
        None => w.u8(0),
    }
    w.0
}

pub fn from_bytes(buf: &[u8]) -> Result<Model<f32>> {
    let mut r = Reader::new(buf);
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a model checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("checkpoint version {version}, expected {VERSION}")));
    }
    let cfg = read_config(&mut r)?;
    let n = r.u32()? as usize;
    let tensors = (0..n).map(|_| r.f32s()).collect::<Result<Vec<_>>>()?;
    let mut model = Model::from_params(cfg, Params { tensors })?;
    for s in model.running_mut().iter_mut() {
        let (mean, var) = (r.f32s()?, r.f32s()?);
        if mean.len() != s.mean.len() || var.len() != s.var.len() {
            return Err(Error::Format("running statistics have the wrong length".into()));
        }
        s.mean = mean;
        s.var = var;
    }
    if r.u8()? == 1 {
        let state = QuantState {
            input_log2_t: r.f64()?,
            enabled: r.u8()? != 0,
            quantize_head: r.u8()? != 0,
        };
        model.set_quant_state(state)?;
    } else if model.params().has_thresholds() {
        return Err(Error::Format("thresholds present without quantizer state".into()));
    }
    r.finish()?;
    Ok(model)
}

pub fn save(model: &Model<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model<f32>> {
    let buf = std::fs::read(path).map_err(|e| Error::load(path, e.to_string()))?;
    from_bytes(&buf).map_err(|e| Error::load(path, e.to_string()))
}
