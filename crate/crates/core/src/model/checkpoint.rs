//! Binary checkpoint: `YYG1`, a `u32` tensor count, each tensor as `u32`
//! rows, `u32` cols and little-endian `f64` values, then a `u32` byte length
//! and UTF-8 `key=value` lines with the configuration.

use std::collections::BTreeMap;
use std::path::Path;

use super::{DataFingerprint, EncoderKind, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::graph::Matrix;
use crate::nn::{Activation, MlpParams};
use crate::propagation::PropagationConfig;

const MAGIC: &[u8; 4] = b"YYG1";

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| bad(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn tensor(&mut self) -> Result<Matrix> {
        let (r, c) = (self.u32()?, self.u32()?);
        let len = r.checked_mul(c).ok_or_else(|| bad("tensor too large"))?;
        let bytes = self.take(len.checked_mul(8).ok_or_else(|| bad("tensor too large"))?)?;
        let vals = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        Ok(Matrix::from_shape_vec((r, c), vals).expect("shape matches length"))
    }
}

impl Model {
    fn tensors(&self) -> Vec<&Matrix> {
        let mut t: Vec<&Matrix> = Vec::new();
        for mlp in [&self.base, &self.decoder] {
            t.extend(&mlp.weights);
            t.extend(&mlp.biases);
        }
        t
    }

    fn config_text(&self) -> String {
        let c = &self.config;
        let p = &c.prop;
        let f = &self.fingerprint;
        let lines = [
            ("encoder", c.encoder.to_string()),
            ("hidden", c.hidden.to_string()),
            ("base_layers", c.base_layers.to_string()),
            ("decoder_layers", c.decoder_layers.to_string()),
            ("dropout", format!("{:?}", c.dropout)),
            ("sampler", c.sampler.to_string()),
            ("base_activations", join(&self.base.activations)),
            ("decoder_activations", join(&self.decoder.activations)),
            ("lambda", format!("{:?}", p.lambda)),
            ("init_lambda_k", p.lambda_k.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")),
            ("learnable_lambda_k", p.learnable_lambda_k.to_string()),
            ("gamma", format!("{:?}", p.gamma)),
            ("alpha", format!("{:?}", p.alpha)),
            ("steps", p.steps.to_string()),
            ("lower_bound", p.lower_bound.to_string()),
            ("graph_fingerprint", f.graph.clone()),
            ("feature_fingerprint", f.features.clone()),
            ("split_seed", f.split_seed.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = MAGIC.to_vec();
        let lk = Matrix::from_shape_vec((1, self.lambda_k.len()), self.lambda_k.clone()).expect("1 x K");
        let mut tensors = self.tensors();
        tensors.push(&lk);
        put_u32(&mut out, tensors.len())?;
        for t in tensors {
            put_u32(&mut out, t.nrows())?;
            put_u32(&mut out, t.ncols())?;
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let text = self.config_text();
        put_u32(&mut out, text.len())?;
        out.extend_from_slice(text.as_bytes());
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4).map_err(|_| bad("missing magic"))? != MAGIC {
            return Err(bad("bad magic; not a model checkpoint"));
        }
        let count = r.u32()?;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            tensors.push(r.tensor()?);
        }
        let len = r.u32()?;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| bad("config block is not UTF-8"))?;
        if r.pos != buf.len() {
            return Err(bad("trailing bytes after config block"));
        }
        let mut kv = BTreeMap::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("malformed config line `{line}`")))?;
            kv.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| kv.get(k).map(String::as_str).ok_or_else(|| bad(format!("missing key `{k}`")));
        fn parse<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| bad(format!("bad value `{v}` for `{k}`")))
        }
        let acts = |k: &str| -> Result<Vec<Activation>> {
            get(k)?.split(',').map(|s| s.parse().map_err(|_| bad(format!("bad activation `{s}`")))).collect()
        };
        let num = |k: &str| -> Result<f64> { parse(k, get(k)?) };
        let int = |k: &str| -> Result<usize> { parse(k, get(k)?) };
        let flag = |k: &str| -> Result<bool> { parse(k, get(k)?) };

        let init_lambda_k = get("init_lambda_k")?
            .split(',')
            .map(|s| parse::<f64>("init_lambda_k", s))
            .collect::<Result<Vec<_>>>()?;
        let config = ModelConfig {
            encoder: get("encoder")?.parse::<EncoderKind>().map_err(|e| bad(e.to_string()))?,
            hidden: int("hidden")?,
            base_layers: int("base_layers")?,
            decoder_layers: int("decoder_layers")?,
            dropout: num("dropout")?,
            sampler: get("sampler")?.parse().map_err(|e: Error| bad(e.to_string()))?,
            prop: PropagationConfig {
                lambda: num("lambda")?,
                lambda_k: init_lambda_k,
                learnable_lambda_k: flag("learnable_lambda_k")?,
                gamma: num("gamma")?,
                alpha: num("alpha")?,
                steps: int("steps")?,
                lower_bound: flag("lower_bound")?,
            },
        };
        config.validate().map_err(|e| bad(e.to_string()))?;
        let fingerprint = DataFingerprint {
            graph: get("graph_fingerprint")?.to_string(),
            features: get("feature_fingerprint")?.to_string(),
            split_seed: parse("split_seed", get("split_seed")?)?,
        };
        let base_acts = acts("base_activations")?;
        let dec_acts = acts("decoder_activations")?;
        let (nb, nd) = (base_acts.len(), dec_acts.len());
        if count != 2 * (nb + nd) + 1 {
            return Err(bad(format!("expected {} tensors, found {count}", 2 * (nb + nd) + 1)));
        }
        let mut it = tensors.into_iter();
        let mut mlp = |n: usize, activations: Vec<Activation>| MlpParams {
            weights: it.by_ref().take(n).collect(),
            biases: it.by_ref().take(n).collect(),
            activations,
        };
        let base = mlp(nb, base_acts);
        let decoder = mlp(nd, dec_acts);
        let lk = it.next().expect("counted");
        check_mlp(&base, "base")?;
        check_mlp(&decoder, "decoder")?;
        if decoder.out_dim() != 1 || decoder.in_dim() != config.hidden || base.out_dim() != config.hidden {
            return Err(bad("layer widths do not match the configured embedding width"));
        }
        if lk.nrows() != 1 || lk.ncols() != config.prop.lambda_k.len() {
            return Err(bad("lambda_k tensor does not match K"));
        }
        Ok(Self {
            config,
            base,
            decoder,
            lambda_k: lk.row(0).to_vec(),
            fingerprint,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

fn check_mlp(m: &MlpParams, name: &str) -> Result<()> {
    for (l, (w, b)) in m.weights.iter().zip(&m.biases).enumerate() {
        if b.nrows() != 1 || b.ncols() != w.ncols() {
            return Err(bad(format!("{name} bias {l} does not match its weight")));
        }
        if l > 0 && m.weights[l - 1].ncols() != w.nrows() {
            return Err(bad(format!("{name} layer {l} width mismatch")));
        }
    }
    Ok(())
}
