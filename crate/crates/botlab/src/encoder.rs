//! Attribute encoder: four families (description text, tweet text,
//! numericals, categoricals) each pass through their own leaky-ReLU affine
//! into a quarter of the model width, then concatenate to
//! `[desc | tweet | num | cat]`.
//!
//! Numericals are z-scored with statistics fitted on the training mask only.
//! Booleans become 2-way one-hots with false = (1, 0).

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{SocialGraph, Split, UserAttrs, N_FLAGS, N_NUMERIC};
use crate::nd::{ParamId, Var};
use crate::{ParamSet, Real, Tape, Tensor};

/// Negative-side slope shared by every leaky ReLU in the crate.
pub const LEAKY_SLOPE: Real = 0.01;

/// Categorical input width: each flag contributes a 2-way one-hot.
pub const CAT_WIDTH: usize = 2 * N_FLAGS;

/// Per-family z-score statistics for the five numeric attributes.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: [Real; N_NUMERIC],
    pub std: [Real; N_NUMERIC],
}

impl NormStats {
    /// Fit on the training mask. Population standard deviation; columns
    /// with (near) zero spread get std 1 so they pass through centered.
    pub fn fit(g: &SocialGraph) -> Result<NormStats> {
        let train = g.split_nodes(Split::Train);
        if train.is_empty() {
            return Err(Error::NoTrainingData {
                what: "numeric normalization".into(),
            });
        }
        let n = train.len() as Real;
        let mut mean = [0.0; N_NUMERIC];
        let mut std = [0.0; N_NUMERIC];
        for &v in &train {
            for j in 0..N_NUMERIC {
                mean[j] += g.attrs(v).numeric[j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for &v in &train {
            for j in 0..N_NUMERIC {
                let d = g.attrs(v).numeric[j] - mean[j];
                std[j] += d * d;
            }
        }
        for s in std.iter_mut() {
            *s = (*s / n).sqrt();
            if *s < 1e-9 {
                *s = 1.0;
            }
        }
        Ok(NormStats { mean, std })
    }

    pub fn apply(&self, numeric: &[Real; N_NUMERIC]) -> [Real; N_NUMERIC] {
        let mut out = [0.0; N_NUMERIC];
        for j in 0..N_NUMERIC {
            out[j] = (numeric[j] - self.mean[j]) / self.std[j];
        }
        out
    }

    pub fn invert(&self, z: &[Real; N_NUMERIC]) -> [Real; N_NUMERIC] {
        let mut out = [0.0; N_NUMERIC];
        for j in 0..N_NUMERIC {
            out[j] = z[j] * self.std[j] + self.mean[j];
        }
        out
    }

    pub fn to_tensors(&self) -> (Tensor, Tensor) {
        (
            Tensor::from_vec(1, N_NUMERIC, self.mean.to_vec()),
            Tensor::from_vec(1, N_NUMERIC, self.std.to_vec()),
        )
    }

    pub fn from_tensors(mean: &Tensor, std: &Tensor) -> Result<NormStats> {
        if mean.shape() != (1, N_NUMERIC) || std.shape() != (1, N_NUMERIC) {
            return Err(Error::Mismatch {
                what: "normalization tensors".into(),
                expected: format!("1x{N_NUMERIC}"),
                found: format!("{:?}/{:?}", mean.shape(), std.shape()),
            });
        }
        let mut out = NormStats {
            mean: [0.0; N_NUMERIC],
            std: [0.0; N_NUMERIC],
        };
        out.mean.copy_from_slice(mean.data());
        out.std.copy_from_slice(std.data());
        Ok(out)
    }
}

pub fn onehot_flags(flags: &[bool; N_FLAGS]) -> [Real; CAT_WIDTH] {
    let mut out = [0.0; CAT_WIDTH];
    for (j, &f) in flags.iter().enumerate() {
        out[2 * j + usize::from(f)] = 1.0;
    }
    out
}

/// Raw encoder inputs for a set of nodes, one row per node.
pub struct EncoderInputs {
    pub desc: Tensor,
    pub tweet: Tensor,
    pub numz: Tensor,
    pub cat: Tensor,
}

pub fn batch_inputs(g: &SocialGraph, stats: &NormStats) -> EncoderInputs {
    let k = g.len();
    let ds = g.ds();
    let mut desc = Vec::with_capacity(k * ds);
    let mut tweet = Vec::with_capacity(k * ds);
    let mut numz = Vec::with_capacity(k * N_NUMERIC);
    let mut cat = Vec::with_capacity(k * CAT_WIDTH);
    for v in 0..k {
        let a = g.attrs(v);
        desc.extend_from_slice(&a.desc);
        tweet.extend_from_slice(&a.tweet);
        numz.extend_from_slice(&stats.apply(&a.numeric));
        cat.extend_from_slice(&onehot_flags(&a.flags));
    }
    EncoderInputs {
        desc: Tensor::from_vec(k, ds, desc),
        tweet: Tensor::from_vec(k, ds, tweet),
        numz: Tensor::from_vec(k, N_NUMERIC, numz),
        cat: Tensor::from_vec(k, CAT_WIDTH, cat),
    }
}

pub fn row_inputs(attrs: &UserAttrs, stats: &NormStats) -> EncoderInputs {
    let ds = attrs.desc.len();
    EncoderInputs {
        desc: Tensor::from_vec(1, ds, attrs.desc.clone()),
        tweet: Tensor::from_vec(1, ds, attrs.tweet.clone()),
        numz: Tensor::from_vec(1, N_NUMERIC, stats.apply(&attrs.numeric).to_vec()),
        cat: Tensor::from_vec(1, CAT_WIDTH, onehot_flags(&attrs.flags).to_vec()),
    }
}

/// Column ranges of the four families inside a d-wide embedding.
pub fn family_ranges(d: usize) -> [std::ops::Range<usize>; 4] {
    let q = d / 4;
    [0..q, q..2 * q, 2 * q..3 * q, 3 * q..d]
}

/// Init bound multiplier for every weight in a detector stack, encoder
/// included. The stacks train by plain full-batch descent with a small
/// fixed step, which moves weights only a few percent of their init scale
/// over the whole budget; at gain 1 the logits stay near zero and the head
/// settles for the majority class. Gain 2 converges inside the epoch
/// budget, gain 4 and up overshoots early and lands worse.
pub(crate) const INIT_GAIN: f64 = 2.0;

/// Parameter handles for one encoder instance.
#[derive(Clone, Copy, Debug)]
pub struct EncoderIds {
    pub w_desc: ParamId,
    pub b_desc: ParamId,
    pub w_tweet: ParamId,
    pub b_tweet: ParamId,
    pub w_num: ParamId,
    pub b_num: ParamId,
    pub w_cat: ParamId,
    pub b_cat: ParamId,
}

impl EncoderIds {
    pub fn init(params: &mut ParamSet, ds: usize, d: usize, rng: &mut impl Rng) -> Result<Self> {
        if d == 0 || d % 4 != 0 {
            return Err(Error::BadModelDim { d });
        }
        let q = d / 4;
        let mut w = |ps: &mut ParamSet, name: &str, r: usize| {
            ps.add_uniform_gain(name, r, q, INIT_GAIN, rng)
        };
        Ok(EncoderIds {
            w_desc: w(params, "enc.desc.w", ds)?,
            b_desc: params.add("enc.desc.b", Tensor::zeros(1, q))?,
            w_tweet: w(params, "enc.tweet.w", ds)?,
            b_tweet: params.add("enc.tweet.b", Tensor::zeros(1, q))?,
            w_num: w(params, "enc.num.w", N_NUMERIC)?,
            b_num: params.add("enc.num.b", Tensor::zeros(1, q))?,
            w_cat: w(params, "enc.cat.w", CAT_WIDTH)?,
            b_cat: params.add("enc.cat.b", Tensor::zeros(1, q))?,
        })
    }

    /// Recover handles from a parameter set rebuilt off a checkpoint.
    pub fn lookup(params: &ParamSet) -> Result<Self> {
        let find = |name: &str| {
            params.id_by_name(name).ok_or(Error::MissingTensor {
                name: name.to_string(),
            })
        };
        Ok(EncoderIds {
            w_desc: find("enc.desc.w")?,
            b_desc: find("enc.desc.b")?,
            w_tweet: find("enc.tweet.w")?,
            b_tweet: find("enc.tweet.b")?,
            w_num: find("enc.num.w")?,
            b_num: find("enc.num.b")?,
            w_cat: find("enc.cat.w")?,
            b_cat: find("enc.cat.b")?,
        })
    }

    /// k x d embedding matrix on the tape.
    pub fn encode(&self, tape: &mut Tape, params: &ParamSet, inp: &EncoderInputs) -> Result<Var> {
        let mut parts = Vec::with_capacity(4);
        for (x, w, b) in [
            (&inp.desc, self.w_desc, self.b_desc),
            (&inp.tweet, self.w_tweet, self.b_tweet),
            (&inp.numz, self.w_num, self.b_num),
            (&inp.cat, self.w_cat, self.b_cat),
        ] {
            let x = tape.constant(x.clone());
            let w = tape.param(params, w);
            let b = tape.param(params, b);
            let z = tape.affine(x, w, b)?;
            parts.push(tape.leaky_relu(z, LEAKY_SLOPE));
        }
        tape.concat_cols(&parts)
    }

    /// Plain (tape-free) embedding of one attribute row.
    pub fn encode_attrs(
        &self,
        params: &ParamSet,
        stats: &NormStats,
        attrs: &UserAttrs,
    ) -> Result<Tensor> {
        let inp = row_inputs(attrs, stats);
        let mut tape = Tape::new();
        let out = self.encode(&mut tape, params, &inp)?;
        Ok(tape.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{synth_graph, Label};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_graph() -> SocialGraph {
        // 12 nodes so the stratified splits always populate train
        synth_graph(12, 0.3, 2.0, 3, 77).unwrap()
    }

    #[test]
    fn stats_match_hand_computation() {
        let g = toy_graph();
        let stats = NormStats::fit(&g).unwrap();
        let train = g.split_nodes(Split::Train);
        let n = train.len() as Real;
        for j in 0..N_NUMERIC {
            let mean: Real = train.iter().map(|&v| g.attrs(v).numeric[j]).sum::<Real>() / n;
            let var: Real = train
                .iter()
                .map(|&v| (g.attrs(v).numeric[j] - mean).powi(2))
                .sum::<Real>()
                / n;
            assert!((stats.mean[j] - mean).abs() < 1e-12);
            let want = if var.sqrt() < 1e-9 { 1.0 } else { var.sqrt() };
            assert!((stats.std[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_column_gets_unit_std() {
        let mut g = toy_graph();
        // force screen_name_length constant across the graph
        for v in 0..g.len() {
            let mut a = g.attrs(v).clone();
            a.numeric[2] = 8.0;
            g = g.with_attrs(v, a).unwrap();
        }
        let stats = NormStats::fit(&g).unwrap();
        assert_eq!(stats.std[2], 1.0);
        assert_eq!(stats.apply(&g.attrs(0).numeric)[2], 0.0);
    }

    #[test]
    fn fit_requires_train_nodes() {
        let g = toy_graph();
        let unmasked = SocialGraph::new(
            (0..g.len()).map(|v| g.attrs(v).clone()).collect(),
            (0..g.len()).map(|v| g.label(v)).collect(),
            vec![None; g.len()],
            g.edges().to_vec(),
        )
        .unwrap();
        assert!(matches!(
            NormStats::fit(&unmasked),
            Err(Error::NoTrainingData { .. })
        ));
    }

    #[test]
    fn invert_undoes_apply() {
        let g = toy_graph();
        let stats = NormStats::fit(&g).unwrap();
        let raw = g.attrs(3).numeric;
        let back = stats.invert(&stats.apply(&raw));
        for j in 0..N_NUMERIC {
            assert!((back[j] - raw[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn onehot_false_is_one_zero() {
        assert_eq!(
            onehot_flags(&[false, true, false]),
            [1.0, 0.0, 0.0, 1.0, 1.0, 0.0]
        );
    }

    #[test]
    fn rejects_model_width_not_divisible_by_four() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            EncoderIds::init(&mut params, 3, 30, &mut rng),
            Err(Error::BadModelDim { d: 30 })
        ));
    }

    #[test]
    fn encode_matches_plain_loop_oracle() {
        let g = toy_graph();
        let stats = NormStats::fit(&g).unwrap();
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = EncoderIds::init(&mut params, g.ds(), 8, &mut rng).unwrap();
        let inp = batch_inputs(&g, &stats);
        let mut tape = Tape::new();
        let out = enc.encode(&mut tape, &params, &inp).unwrap();
        let out = tape.value(out);
        assert_eq!(out.shape(), (g.len(), 8));

        // independent oracle: explicit loops over each family
        let families: [(&Tensor, ParamId, ParamId); 4] = [
            (&inp.desc, enc.w_desc, enc.b_desc),
            (&inp.tweet, enc.w_tweet, enc.b_tweet),
            (&inp.numz, enc.w_num, enc.b_num),
            (&inp.cat, enc.w_cat, enc.b_cat),
        ];
        for v in 0..g.len() {
            let mut want: Vec<Real> = Vec::new();
            for (x, w, b) in &families {
                let w = params.value(*w);
                let b = params.value(*b);
                for c in 0..w.cols() {
                    let mut z = b.get(0, c);
                    for r in 0..w.rows() {
                        z += x.get(v, r) * w.get(r, c);
                    }
                    want.push(if z >= 0.0 { z } else { LEAKY_SLOPE * z });
                }
            }
            for (c, wv) in want.iter().enumerate() {
                assert!(
                    (out.get(v, c) - wv).abs() < 1e-12,
                    "node {v} col {c}: {} vs {wv}",
                    out.get(v, c)
                );
            }
        }
    }

    #[test]
    fn row_encode_equals_batch_row() {
        let g = toy_graph();
        let stats = NormStats::fit(&g).unwrap();
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = EncoderIds::init(&mut params, g.ds(), 8, &mut rng).unwrap();
        let inp = batch_inputs(&g, &stats);
        let mut tape = Tape::new();
        let out = enc.encode(&mut tape, &params, &inp).unwrap();
        let batch = tape.value(out).clone();
        for v in [0, 5, g.len() - 1] {
            let single = enc.encode_attrs(&params, &stats, g.attrs(v)).unwrap();
            assert_eq!(single.row(0), batch.row(v), "node {v}");
        }
    }

    #[test]
    fn family_ranges_tile_the_width() {
        let r = family_ranges(128);
        assert_eq!(r[0], 0..32);
        assert_eq!(r[3], 96..128);
        let g = toy_graph();
        assert!(g.count_label(Label::Bot) >= 1);
    }
}
