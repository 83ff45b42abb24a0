//! Text checkpoints: `ckpt v1` header, then metadata lines (`key value`) and
//! tensor lines (`name RxC v0 v1 ...`). Floats are written in Rust's shortest
//! round-trip form, so save -> load reproduces values bit for bit.

use std::path::Path;

use super::optim::ParamSet;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct Checkpoint<F> {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor<F>)>,
}

impl<F: Scalar> Checkpoint<F> {
    pub fn new() -> Self {
        Checkpoint {
            meta: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn from_params(params: &ParamSet<F>) -> Self {
        let mut ck = Checkpoint::new();
        for p in params.iter() {
            ck.tensors.push((p.name.clone(), p.value.clone()));
        }
        ck
    }

    /// Metadata values must not look like a `RxC` shape token; our keys and
    /// values never do.
    pub fn push_meta(&mut self, key: impl Into<String>, value: impl std::fmt::Display) {
        self.meta.push((key.into(), value.to_string()));
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, t: Tensor<F>) {
        self.tensors.push((name.into(), t));
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn meta_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta_value(key).ok_or_else(|| Error::Mismatch {
            what: "checkpoint metadata".into(),
            expected: key.into(),
            found: "nothing".into(),
        })?;
        raw.parse().map_err(|_| Error::Mismatch {
            what: format!("checkpoint metadata {key}"),
            expected: "parseable value".into(),
            found: raw.into(),
        })
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<F>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::MissingTensor { name: name.into() })
    }

    pub fn render(&self) -> String {
        let mut out = String::from("ckpt v1\n");
        for (k, v) in &self.meta {
            out.push_str(k);
            out.push(' ');
            out.push_str(v);
            out.push('\n');
        }
        for (name, t) in &self.tensors {
            out.push_str(name);
            out.push_str(&format!(" {}x{}", t.rows(), t.cols()));
            for v in t.data() {
                out.push_str(&format!(" {v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "ckpt v1")) => {}
            other => {
                return Err(Error::Checkpoint {
                    line: 1,
                    msg: format!("expected `ckpt v1` header, got {:?}", other.map(|(_, l)| l)),
                })
            }
        }
        let mut ck = Checkpoint::new();
        for (i, line) in lines {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() >= 2 {
                if let Some(shape) = parse_shape(tokens[1]) {
                    let (rows, cols) = shape;
                    if tokens.len() != 2 + rows * cols {
                        return Err(Error::Checkpoint {
                            line: lineno,
                            msg: format!(
                                "tensor {} declares {}x{} but carries {} values",
                                tokens[0],
                                rows,
                                cols,
                                tokens.len() - 2
                            ),
                        });
                    }
                    let mut data = Vec::with_capacity(rows * cols);
                    for tok in &tokens[2..] {
                        let v: F = tok.parse().map_err(|_| Error::Checkpoint {
                            line: lineno,
                            msg: format!("bad float {tok}"),
                        })?;
                        data.push(v);
                    }
                    ck.tensors
                        .push((tokens[0].to_string(), Tensor::from_vec(rows, cols, data)));
                    continue;
                }
            }
            if tokens.len() == 2 {
                ck.meta.push((tokens[0].to_string(), tokens[1].to_string()));
            } else {
                return Err(Error::Checkpoint {
                    line: lineno,
                    msg: format!("unrecognized line `{line}`"),
                });
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Rebuild a `ParamSet` in file order.
    pub fn into_params(&self) -> Result<ParamSet<F>> {
        let mut ps = ParamSet::new();
        for (name, t) in &self.tensors {
            ps.add(name.clone(), t.clone())?;
        }
        Ok(ps)
    }
}

fn parse_shape(tok: &str) -> Option<(usize, usize)> {
    let (r, c) = tok.split_once('x')?;
    if r.is_empty() || c.is_empty() || !r.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if !c.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((r.parse().ok()?, c.parse().ok()?))
}

/// FNV-1a over the rendered checkpoint; used by reports to show two runs hold
/// bit-identical weights.
pub fn checksum(text: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut ck: Checkpoint<f64> = Checkpoint::new();
        ck.push_meta("kind", "demo");
        ck.push_meta("layers", 2);
        let vals = vec![
            0.1,
            -1.0 / 3.0,
            f64::MIN_POSITIVE,
            1.7976931348623157e308,
            -0.0,
            2.0f64.powi(-52),
        ];
        ck.push_tensor("w", Tensor::from_vec(2, 3, vals.clone()));
        let text = ck.render();
        let back = Checkpoint::<f64>::parse(&text).unwrap();
        assert_eq!(back.meta_value("kind"), Some("demo"));
        assert_eq!(back.meta_value("layers"), Some("2"));
        let w = back.tensor("w").unwrap();
        for (a, b) in w.data().iter().zip(&vals) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // And rendering again reproduces the exact bytes.
        let mut ck2 = Checkpoint::new();
        ck2.meta = back.meta.clone();
        ck2.tensors = back.tensors.clone();
        assert_eq!(ck2.render(), text);
    }

    #[test]
    fn rejects_missing_header_and_bad_counts() {
        assert!(Checkpoint::<f64>::parse("nope\n").is_err());
        assert!(Checkpoint::<f64>::parse("ckpt v1\nw 2x2 1 2 3\n").is_err());
    }

    #[test]
    fn value_count_must_match_shape() {
        let err = Checkpoint::<f64>::parse("ckpt v1\nw 1x2 0.5 0.5 0.5\n");
        assert!(err.is_err());
    }

    #[test]
    fn meta_and_tensors_coexist() {
        let text = "ckpt v1\nkind substitute-rgcn\nlayers 1\nw 1x1 0.25\n";
        let ck = Checkpoint::<f64>::parse(text).unwrap();
        assert_eq!(ck.meta.len(), 2);
        assert_eq!(ck.tensor("w").unwrap().item(), 0.25);
    }

    #[test]
    fn checksum_is_stable_and_sensitive() {
        let a = checksum("ckpt v1\nw 1x1 0.5\n");
        let b = checksum("ckpt v1\nw 1x1 0.5\n");
        let c = checksum("ckpt v1\nw 1x1 0.6\n");
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
