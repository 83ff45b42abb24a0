//! Attribute recovery. The attack produces an embedding; victims consume raw
//! user attributes. Two small MLP inverters map the numeric and categorical
//! slices of a generated embedding back to feature space:
//!
//! * the numeric inverter trains with per-node L1 against z-scored features
//!   plus a weighted re-encoding L1 that pushes the recovered features back
//!   through the frozen numeric encoder toward the embedding it came from;
//! * the categorical inverter trains with the L1 term alone and its six
//!   outputs are projected pairwise to valid one-hots at recovery time.
//!
//! Recovered numerics are de-normalized, rounded, then forced into a named
//! constraint profile (followers pinned, the rest capped). Text vectors are
//! exactly zero and the injected edge is always Follow, so a materialized
//! node is a fully valid graph citizen.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::detector::Detector;
use crate::encoder::{family_ranges, onehot_flags, CAT_WIDTH, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::graph::{Relation, SocialGraph, Split, UserAttrs, N_FLAGS, N_NUMERIC};
use crate::injector::InjectionOutcome;
use crate::nd::{adam_step, AdamState, ParamId, Var};
use crate::{Checkpoint, ParamSet, Real, Tape, Tensor};

pub const INVERTER_HIDDEN: usize = 64;
pub const REENCODE_ALPHA: Real = 0.01;

/// Caps and pinned values for the five numeric features, in feature order
/// [followers, active_days, screen_name_length, followings, status].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstraintProfile {
    pub name: &'static str,
    pub followers_fixed: Real,
    pub active_days_cap: Real,
    pub screen_name_cap: Real,
    pub followings_cap: Real,
    pub status_cap: Real,
}

impl ConstraintProfile {
    pub fn cresci2015() -> Self {
        ConstraintProfile {
            name: "cresci2015",
            followers_fixed: 0.0,
            active_days_cap: 100.0,
            screen_name_cap: 15.0,
            followings_cap: 5000.0,
            status_cap: 500.0,
        }
    }

    pub fn twibot22() -> Self {
        ConstraintProfile {
            name: "twibot22",
            followers_fixed: 0.0,
            active_days_cap: 100.0,
            screen_name_cap: 15.0,
            followings_cap: 5000.0,
            status_cap: 40000.0,
        }
    }

    /// Relaxed variant: a bought follower base in exchange for a lower
    /// status requirement.
    pub fn twibot22_alt() -> Self {
        ConstraintProfile {
            followers_fixed: 600.0,
            status_cap: 18000.0,
            name: "twibot22-alt",
            ..ConstraintProfile::twibot22()
        }
    }

    pub fn from_token(tok: &str) -> Option<Self> {
        match tok {
            "cresci2015" => Some(Self::cresci2015()),
            "twibot22" => Some(Self::twibot22()),
            "twibot22-alt" => Some(Self::twibot22_alt()),
            _ => None,
        }
    }

    pub fn token(&self) -> &'static str {
        self.name
    }

    /// Round to integers, pin followers, clamp the rest into [0, cap].
    pub fn apply(&self, raw: &[Real; N_NUMERIC]) -> [Real; N_NUMERIC] {
        let cap = |v: Real, hi: Real| v.round().clamp(0.0, hi);
        [
            self.followers_fixed,
            cap(raw[1], self.active_days_cap),
            cap(raw[2], self.screen_name_cap),
            cap(raw[3], self.followings_cap),
            cap(raw[4], self.status_cap),
        ]
    }

    /// True when the five values could have come from `apply`.
    pub fn satisfied(&self, numeric: &[Real; N_NUMERIC]) -> bool {
        let ok = |v: Real, hi: Real| v.fract() == 0.0 && (0.0..=hi).contains(&v);
        numeric[0] == self.followers_fixed
            && ok(numeric[1], self.active_days_cap)
            && ok(numeric[2], self.screen_name_cap)
            && ok(numeric[3], self.followings_cap)
            && ok(numeric[4], self.status_cap)
    }
}

/// Two leaky hidden layers of width 64, linear head.
pub struct Inverter {
    pub params: ParamSet,
    ids: [ParamId; 6],
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Inverter {
    pub fn init(in_dim: usize, out_dim: usize, seed: u64) -> Result<Inverter> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let h = INVERTER_HIDDEN;
        let ids = [
            ps.add_uniform("inv.w0", in_dim, h, &mut rng)?,
            ps.add("inv.b0", Tensor::zeros(1, h))?,
            ps.add_uniform("inv.w1", h, h, &mut rng)?,
            ps.add("inv.b1", Tensor::zeros(1, h))?,
            ps.add_uniform("inv.w2", h, out_dim, &mut rng)?,
            ps.add("inv.b2", Tensor::zeros(1, out_dim))?,
        ];
        Ok(Inverter {
            params: ps,
            ids,
            in_dim,
            out_dim,
        })
    }

    pub(crate) fn forward_tape(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let [w0, b0, w1, b1, w2, b2] = self.ids;
        let w0 = tape.param(&self.params, w0);
        let b0 = tape.param(&self.params, b0);
        let h = tape.affine(x, w0, b0)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        let w1 = tape.param(&self.params, w1);
        let b1 = tape.param(&self.params, b1);
        let h = tape.affine(h, w1, b1)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        let w2 = tape.param(&self.params, w2);
        let b2 = tape.param(&self.params, b2);
        tape.affine(h, w2, b2)
    }

    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = self.forward_tape(&mut tape, xv)?;
        Ok(tape.value(out).clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ck = Checkpoint::from_params(&self.params);
        ck.push_meta("in", self.in_dim);
        ck.push_meta("out", self.out_dim);
        ck.save(path)
    }

    pub fn load(path: &Path) -> Result<Inverter> {
        let ck = Checkpoint::load(path)?;
        let in_dim = ck.meta_parsed("in")?;
        let out_dim = ck.meta_parsed("out")?;
        let mut inv = Inverter::init(in_dim, out_dim, 0)?;
        let mut ps = ParamSet::new();
        for p in inv.params.iter() {
            let t = ck.tensor(&p.name)?;
            if t.shape() != p.value.shape() {
                return Err(Error::Mismatch {
                    what: format!("inverter tensor {}", p.name),
                    expected: format!("{:?}", p.value.shape()),
                    found: format!("{:?}", t.shape()),
                });
            }
            ps.add(p.name.clone(), t.clone())?;
        }
        inv.params = ps;
        Ok(inv)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct InverterOpts {
    pub epochs: usize,
    pub lr_hi: Real,
    pub lr_lo: Real,
}

impl Default for InverterOpts {
    fn default() -> Self {
        InverterOpts {
            epochs: 300,
            lr_hi: 1e-2,
            lr_lo: 1e-5,
        }
    }
}

/// Geometric interpolation from the initial rate down to the floor. L1
/// subgradients do not shrink near the optimum, so the fade-out is what
/// stops the terminal oscillation.
fn lr_at(opts: &InverterOpts, epoch: usize) -> Real {
    if opts.epochs <= 1 {
        return opts.lr_hi;
    }
    let t = epoch as Real / (opts.epochs - 1) as Real;
    opts.lr_hi * (opts.lr_lo / opts.lr_hi).powf(t)
}

fn check_pairs(inputs: &Tensor, targets: &Tensor, what: &str) -> Result<()> {
    if inputs.rows() == 0 {
        return Err(Error::NoTrainingData { what: what.into() });
    }
    if inputs.rows() != targets.rows() {
        return Err(Error::ShapeMismatch {
            op: "inverter pairs",
            details: format!("{:?} vs {:?}", inputs.shape(), targets.shape()),
        });
    }
    Ok(())
}

/// Summed elementwise L1. The subgradients are bounded, so the decaying
/// learning rate, not a batch mean, is what tames the step size.
fn l1_sum(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let diff = tape.sub(pred, target)?;
    let a = tape.abs(diff);
    Ok(tape.sum(a))
}

/// Trains the numeric inverter. `enc_w`/`enc_b` are the frozen numeric
/// encoder weights used by the re-encoding penalty; `alpha` = 0 disables it.
pub fn train_numeric_inverter(
    inputs: &Tensor,
    targets: &Tensor,
    alpha: Real,
    enc_w: &Tensor,
    enc_b: &Tensor,
    opts: &InverterOpts,
    seed: u64,
) -> Result<(Inverter, Vec<Real>)> {
    check_pairs(inputs, targets, "numeric inverter pairs")?;
    let mut inv = Inverter::init(inputs.cols(), targets.cols(), seed)?;
    let mut losses = Vec::with_capacity(opts.epochs);
    let mut state = AdamState::new();
    for epoch in 0..opts.epochs {
        let mut tape = Tape::new();
        let x = tape.constant(inputs.clone());
        let y = tape.constant(targets.clone());
        let pred = inv.forward_tape(&mut tape, x)?;
        let mut loss = l1_sum(&mut tape, pred, y)?;
        if alpha != 0.0 {
            let w = tape.constant(enc_w.clone());
            let b = tape.constant(enc_b.clone());
            let re = tape.affine(pred, w, b)?;
            let re = tape.leaky_relu(re, LEAKY_SLOPE);
            let l2 = l1_sum(&mut tape, re, x)?;
            let l2 = tape.scale(l2, alpha);
            loss = tape.add(loss, l2)?;
        }
        let v = tape.value(loss).item();
        if !v.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        losses.push(v);
        tape.backward(loss, &mut inv.params)?;
        adam_step(&mut inv.params, lr_at(opts, epoch), &mut state)?;
    }
    Ok((inv, losses))
}

/// Trains the categorical inverter with the L1 term alone.
pub fn train_categorical_inverter(
    inputs: &Tensor,
    targets: &Tensor,
    opts: &InverterOpts,
    seed: u64,
) -> Result<(Inverter, Vec<Real>)> {
    check_pairs(inputs, targets, "categorical inverter pairs")?;
    let mut inv = Inverter::init(inputs.cols(), targets.cols(), seed)?;
    let mut losses = Vec::with_capacity(opts.epochs);
    let mut state = AdamState::new();
    for epoch in 0..opts.epochs {
        let mut tape = Tape::new();
        let x = tape.constant(inputs.clone());
        let y = tape.constant(targets.clone());
        let pred = inv.forward_tape(&mut tape, x)?;
        let loss = l1_sum(&mut tape, pred, y)?;
        let v = tape.value(loss).item();
        if !v.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        losses.push(v);
        tape.backward(loss, &mut inv.params)?;
        adam_step(&mut inv.params, lr_at(opts, epoch), &mut state)?;
    }
    Ok((inv, losses))
}

fn gather_rows(t: &Tensor, ids: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(ids.len(), t.cols());
    for (r, &v) in ids.iter().enumerate() {
        for c in 0..t.cols() {
            out.set(r, c, t.get(v, c));
        }
    }
    out
}

/// Training pairs for the numeric inverter: (numeric embedding slice,
/// z-scored numerics) over the train mask.
pub fn numeric_pairs(sub: &Detector, g: &SocialGraph) -> Result<(Tensor, Tensor)> {
    let train = g.split_nodes(Split::Train);
    if train.is_empty() {
        return Err(Error::NoTrainingData {
            what: "numeric inverter pairs".into(),
        });
    }
    let x = sub.embed_graph(g)?;
    let r = family_ranges(sub.d())[2].clone();
    let inputs = gather_rows(&x.col_slice(r.start, r.end), &train);
    let mut targets = Tensor::zeros(train.len(), N_NUMERIC);
    for (i, &v) in train.iter().enumerate() {
        let z = sub.stats().apply(&g.attrs(v).numeric);
        for (c, &val) in z.iter().enumerate() {
            targets.set(i, c, val);
        }
    }
    Ok((inputs, targets))
}

/// Training pairs for the categorical inverter: (categorical embedding
/// slice, flag one-hots) over the train mask.
pub fn categorical_pairs(sub: &Detector, g: &SocialGraph) -> Result<(Tensor, Tensor)> {
    let train = g.split_nodes(Split::Train);
    if train.is_empty() {
        return Err(Error::NoTrainingData {
            what: "categorical inverter pairs".into(),
        });
    }
    let x = sub.embed_graph(g)?;
    let r = family_ranges(sub.d())[3].clone();
    let inputs = gather_rows(&x.col_slice(r.start, r.end), &train);
    let mut targets = Tensor::zeros(train.len(), CAT_WIDTH);
    for (i, &v) in train.iter().enumerate() {
        let oh = onehot_flags(&g.attrs(v).flags);
        for (c, &val) in oh.iter().enumerate() {
            targets.set(i, c, val);
        }
    }
    Ok((inputs, targets))
}

pub struct RecoveryReport {
    pub numeric_loss: Vec<Real>,
    pub categorical_loss: Vec<Real>,
}

/// Trains both inverters against a quarter-encoder substitute.
pub fn train_inverters(
    sub: &Detector,
    g: &SocialGraph,
    alpha: Real,
    opts: &InverterOpts,
    seed: u64,
) -> Result<(Inverter, Inverter, RecoveryReport)> {
    let enc = sub.encoder_ids().ok_or_else(|| Error::Mismatch {
        what: "recovery frontend".into(),
        expected: "per-family encoder".into(),
        found: "joint projection".into(),
    })?;
    let (nin, ntg) = numeric_pairs(sub, g)?;
    let enc_w = sub.params().value(enc.w_num).clone();
    let enc_b = sub.params().value(enc.b_num).clone();
    let (num, numeric_loss) =
        train_numeric_inverter(&nin, &ntg, alpha, &enc_w, &enc_b, opts, seed)?;
    let (cin, ctg) = categorical_pairs(sub, g)?;
    let (cat, categorical_loss) =
        train_categorical_inverter(&cin, &ctg, opts, seed.wrapping_add(1))?;
    Ok((
        num,
        cat,
        RecoveryReport {
            numeric_loss,
            categorical_loss,
        },
    ))
}

/// Inverter output -> inverse z-score -> integers under the profile.
pub fn recover_numeric(
    x_num: &Tensor,
    inv: &Inverter,
    stats: &crate::encoder::NormStats,
    profile: &ConstraintProfile,
) -> Result<[Real; N_NUMERIC]> {
    let z = inv.eval(x_num)?;
    if z.shape() != (1, N_NUMERIC) {
        return Err(Error::Mismatch {
            what: "numeric inverter output".into(),
            expected: format!("(1, {N_NUMERIC})"),
            found: format!("{:?}", z.shape()),
        });
    }
    let mut zr = [0.0; N_NUMERIC];
    zr.copy_from_slice(z.row(0));
    Ok(profile.apply(&stats.invert(&zr)))
}

/// Six raw outputs projected pairwise onto one-hots; a tie lands on the
/// first slot, i.e. the flag stays false.
pub fn recover_categorical(x_cat: &Tensor, inv: &Inverter) -> Result<[bool; N_FLAGS]> {
    let out = inv.eval(x_cat)?;
    if out.shape() != (1, CAT_WIDTH) {
        return Err(Error::Mismatch {
            what: "categorical inverter output".into(),
            expected: format!("(1, {CAT_WIDTH})"),
            found: format!("{:?}", out.shape()),
        });
    }
    let mut flags = [false; N_FLAGS];
    for (i, f) in flags.iter_mut().enumerate() {
        *f = out.get(0, 2 * i + 1) > out.get(0, 2 * i);
    }
    Ok(flags)
}

/// A recovered user: integer numerics inside the profile, valid flags,
/// exactly zero text, and a Follow edge.
#[derive(Clone, Debug)]
pub struct RecoveredNode {
    pub numeric: [Real; N_NUMERIC],
    pub flags: [bool; N_FLAGS],
    pub attrs: UserAttrs,
    pub relation: Relation,
    /// L2 distance between the re-encoded recovered attributes and the
    /// embedding the attack generated; recovery is lossy by design.
    pub reencode_gap: Real,
}

pub struct Materialized {
    pub node: RecoveredNode,
    pub g_prime: SocialGraph,
}

/// Turns a generated embedding into raw attributes and splices them into the
/// perturbed graph, so evaluation sees recovered features rather than the
/// attack's internal vector.
pub fn materialize(
    outcome: &InjectionOutcome,
    sub: &Detector,
    num_inv: &Inverter,
    cat_inv: &Inverter,
    profile: &ConstraintProfile,
) -> Result<Materialized> {
    let d = sub.d();
    if outcome.x_inj.shape() != (1, d) {
        return Err(Error::Mismatch {
            what: "injected embedding width".into(),
            expected: format!("(1, {d})"),
            found: format!("{:?}", outcome.x_inj.shape()),
        });
    }
    let enc = sub.encoder_ids().ok_or_else(|| Error::Mismatch {
        what: "recovery frontend".into(),
        expected: "per-family encoder".into(),
        found: "joint projection".into(),
    })?;
    let ranges = family_ranges(d);
    let x_num = outcome.x_inj.col_slice(ranges[2].start, ranges[2].end);
    let x_cat = outcome.x_inj.col_slice(ranges[3].start, ranges[3].end);
    let numeric = recover_numeric(&x_num, num_inv, sub.stats(), profile)?;
    let flags = recover_categorical(&x_cat, cat_inv)?;
    let mut attrs = UserAttrs::zeroed(sub.ds());
    attrs.numeric = numeric;
    attrs.flags = flags;
    let x_rec = enc.encode_attrs(sub.params(), sub.stats(), &attrs)?;
    let mut gap = x_rec;
    gap.add_assign_scaled(&outcome.x_inj, -1.0);
    let injected = outcome.g_prime.len() - 1;
    let g_prime = outcome.g_prime.with_attrs(injected, attrs.clone())?;
    Ok(Materialized {
        node: RecoveredNode {
            numeric,
            flags,
            attrs,
            relation: outcome.relation,
            reencode_gap: gap.l2_norm(),
        },
        g_prime,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{train_detector, DetectorKind, DetectorSpec, TrainOpts};
    use crate::graph::{synth_graph, Label, Split};
    use crate::injector::{attack_context, inject, AttackModel, InjectMode};
    use rand::Rng;

    #[test]
    fn profiles_match_their_tables() {
        let c = ConstraintProfile::cresci2015();
        assert_eq!(
            (c.followers_fixed, c.active_days_cap, c.screen_name_cap),
            (0.0, 100.0, 15.0)
        );
        assert_eq!((c.followings_cap, c.status_cap), (5000.0, 500.0));
        let t = ConstraintProfile::twibot22();
        assert_eq!(t.followers_fixed, 0.0);
        assert_eq!(t.status_cap, 40000.0);
        let a = ConstraintProfile::twibot22_alt();
        assert_eq!(a.followers_fixed, 600.0);
        assert_eq!(a.status_cap, 18000.0);
        assert_eq!(a.active_days_cap, t.active_days_cap);
        assert_eq!(a.followings_cap, t.followings_cap);
        for tok in ["cresci2015", "twibot22", "twibot22-alt"] {
            assert_eq!(ConstraintProfile::from_token(tok).unwrap().token(), tok);
        }
        assert!(ConstraintProfile::from_token("cresci2017").is_none());
    }

    #[test]
    fn profile_apply_rounds_pins_and_clamps() {
        let p = ConstraintProfile::cresci2015();
        let out = p.apply(&[123.4, 25_000.0, 14.6, -3.0, 499.5]);
        assert_eq!(out, [0.0, 100.0, 15.0, 0.0, 500.0]);
        assert!(p.satisfied(&out));
        // already-integral in-range values survive untouched (except followers)
        let keep = p.apply(&[0.0, 40.0, 9.0, 120.0, 17.0]);
        assert_eq!(keep, [0.0, 40.0, 9.0, 120.0, 17.0]);
        assert!(!p.satisfied(&[1.0, 40.0, 9.0, 120.0, 17.0]), "followers pinned");
        assert!(!p.satisfied(&[0.0, 40.5, 9.0, 120.0, 17.0]), "integers only");
        let alt = ConstraintProfile::twibot22_alt();
        assert_eq!(alt.apply(&[0.0, 1.0, 1.0, 1.0, 90_000.0])[0], 600.0);
    }

    #[test]
    fn categorical_projection_follows_argmax_with_false_ties() {
        let inv = Inverter::init(3, CAT_WIDTH, 5).unwrap();
        // bypass eval by feeding a handmade output through the decode rule:
        // use an identity-ish check on recover_categorical via a trained-free
        // inverter is impractical, so exercise the rule directly.
        let decode = |v: [Real; CAT_WIDTH]| {
            let mut flags = [false; N_FLAGS];
            for (i, f) in flags.iter_mut().enumerate() {
                *f = v[2 * i + 1] > v[2 * i];
            }
            flags
        };
        assert_eq!(decode([0.9, 0.1, 0.1, 0.9, 0.5, 0.5]), [false, true, false]);
        assert_eq!(decode([-1.0, -2.0, 2.0, 2.0, 0.0, 1e-9]), [false, false, true]);
        // and the public path returns three booleans of the same rule
        let x = Tensor::zeros(1, 3);
        let out = inv.eval(&x).unwrap();
        let got = recover_categorical(&x, &inv).unwrap();
        for i in 0..N_FLAGS {
            assert_eq!(got[i], out.get(0, 2 * i + 1) > out.get(0, 2 * i));
        }
    }

    /// Gauss-Jordan with partial pivoting, written independently of the
    /// tensor code so it can serve as an oracle.
    fn invert5(w: &Tensor) -> Vec<Vec<Real>> {
        let n = 5;
        let mut a = vec![vec![0.0; 2 * n]; n];
        for r in 0..n {
            for c in 0..n {
                a[r][c] = w.get(r, c);
            }
            a[r][n + r] = 1.0;
        }
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, pivot);
            let p = a[col][col];
            assert!(p.abs() > 1e-9, "oracle needs a full-rank matrix");
            for c in 0..2 * n {
                a[col][c] /= p;
            }
            for r in 0..n {
                if r != col {
                    let f = a[r][col];
                    for c in 0..2 * n {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
        a.iter().map(|row| row[n..].to_vec()).collect()
    }

    #[test]
    fn inverter_matches_exact_inverse_on_linear_encoder() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let k = 500;
        let mut z = Tensor::zeros(k, N_NUMERIC);
        for r in 0..k {
            for c in 0..N_NUMERIC {
                z.set(r, c, rng.gen_range(-2.0..2.0));
            }
        }
        let mut w = Tensor::zeros(N_NUMERIC, N_NUMERIC);
        for r in 0..N_NUMERIC {
            for c in 0..N_NUMERIC {
                w.set(r, c, rng.gen_range(-1.0..1.0));
            }
        }
        let b: Vec<Real> = (0..N_NUMERIC).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let mut inputs = z.matmul(&w).unwrap();
        for r in 0..k {
            for c in 0..N_NUMERIC {
                inputs.set(r, c, inputs.get(r, c) + b[c]);
            }
        }

        // oracle first: the exact inverse reconstructs z to rounding error,
        // so the task is solvable and the 0.05 bar is slack, not hope
        let w_inv = invert5(&w);
        let mut worst = 0.0;
        for r in 0..k {
            for c in 0..N_NUMERIC {
                let mut got = 0.0;
                for m in 0..N_NUMERIC {
                    got += (inputs.get(r, m) - b[m]) * w_inv[m][c];
                }
                worst = Real::max(worst, (got - z.get(r, c)).abs());
            }
        }
        assert!(worst < 1e-9, "exact inverse failed: {worst}");

        let split = 400;
        let tr_in = gather_rows(&inputs, &(0..split).collect::<Vec<_>>());
        let tr_tg = gather_rows(&z, &(0..split).collect::<Vec<_>>());
        let te_in = gather_rows(&inputs, &(split..k).collect::<Vec<_>>());
        let te_tg = gather_rows(&z, &(split..k).collect::<Vec<_>>());

        let opts = InverterOpts {
            epochs: 600,
            ..InverterOpts::default()
        };
        let enc_b = Tensor::from_vec(1, N_NUMERIC, b);
        let (inv, losses) =
            train_numeric_inverter(&tr_in, &tr_tg, 0.0, &w, &enc_b, &opts, 7).unwrap();
        assert_eq!(losses.len(), opts.epochs);
        let pred = inv.eval(&te_in).unwrap();
        let mut mae = 0.0;
        for r in 0..pred.rows() {
            for c in 0..N_NUMERIC {
                mae += (pred.get(r, c) - te_tg.get(r, c)).abs();
            }
        }
        mae /= (pred.rows() * N_NUMERIC) as Real;
        assert!(mae < 0.05, "held-out mean abs error {mae}");
    }

    #[test]
    fn first_epoch_loss_matches_hand_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let k = 12;
        let q = 4;
        let mut inputs = Tensor::zeros(k, q);
        let mut targets = Tensor::zeros(k, N_NUMERIC);
        for r in 0..k {
            for c in 0..q {
                inputs.set(r, c, rng.gen_range(-1.0..1.0));
            }
            for c in 0..N_NUMERIC {
                targets.set(r, c, rng.gen_range(-1.0..1.0));
            }
        }
        let mut enc_w = Tensor::zeros(N_NUMERIC, q);
        for r in 0..N_NUMERIC {
            for c in 0..q {
                enc_w.set(r, c, rng.gen_range(-1.0..1.0));
            }
        }
        let enc_b = Tensor::zeros(1, q);

        let leaky = |v: Real| if v >= 0.0 { v } else { LEAKY_SLOPE * v };
        let hand = |alpha: Real| {
            // fresh inverter with the same seed the trainer uses
            let inv = Inverter::init(q, N_NUMERIC, 31).unwrap();
            let pred = inv.eval(&inputs).unwrap();
            let mut l1 = 0.0;
            for r in 0..k {
                for c in 0..N_NUMERIC {
                    l1 += (pred.get(r, c) - targets.get(r, c)).abs();
                }
            }
            let mut l2 = 0.0;
            for r in 0..k {
                for c in 0..q {
                    let mut re = 0.0;
                    for m in 0..N_NUMERIC {
                        re += pred.get(r, m) * enc_w.get(m, c);
                    }
                    l2 += (leaky(re) - inputs.get(r, c)).abs();
                }
            }
            l1 + alpha * l2
        };

        let opts = InverterOpts {
            epochs: 1,
            ..InverterOpts::default()
        };
        for alpha in [0.0, REENCODE_ALPHA] {
            let (_, losses) =
                train_numeric_inverter(&inputs, &targets, alpha, &enc_w, &enc_b, &opts, 31)
                    .unwrap();
            let expect = hand(alpha);
            assert!(
                (losses[0] - expect).abs() < 1e-12,
                "alpha {alpha}: {} vs {expect}",
                losses[0]
            );
        }
    }

    #[test]
    fn empty_pairs_are_rejected() {
        let e = Tensor::zeros(0, 3);
        let t = Tensor::zeros(0, N_NUMERIC);
        let opts = InverterOpts::default();
        assert!(matches!(
            train_numeric_inverter(&e, &t, 0.0, &Tensor::zeros(5, 3), &Tensor::zeros(1, 3), &opts, 0),
            Err(Error::NoTrainingData { .. })
        ));
        assert!(matches!(
            train_categorical_inverter(&e, &t, &opts, 0),
            Err(Error::NoTrainingData { .. })
        ));
    }

    fn pipeline_fixture() -> (SocialGraph, Detector) {
        let g = synth_graph(80, 0.3, 3.0, 4, 90).unwrap();
        let spec = DetectorSpec {
            kind: DetectorKind::SubstituteRgcn,
            layers: 2,
            d: 16,
        };
        let opts = TrainOpts {
            epochs: 15,
            ..TrainOpts::default()
        };
        let (sub, _) = train_detector(&g, spec, &opts, 91).unwrap();
        (g, sub)
    }

    #[test]
    fn pipeline_training_loss_trends_down() {
        let (g, sub) = pipeline_fixture();
        let opts = InverterOpts {
            epochs: 80,
            ..InverterOpts::default()
        };
        let (_, _, report) = train_inverters(&sub, &g, REENCODE_ALPHA, &opts, 92).unwrap();
        for losses in [&report.numeric_loss, &report.categorical_loss] {
            let q = losses.len() / 4;
            let first: Real = losses[..q].iter().sum::<Real>() / q as Real;
            let last: Real = losses[losses.len() - q..].iter().sum::<Real>() / q as Real;
            assert!(
                last < first,
                "quartile means should drop: first {first}, last {last}"
            );
        }
    }

    #[test]
    fn materialization_sweep_always_satisfies_the_profile() {
        let (g, sub) = pipeline_fixture();
        let opts = InverterOpts {
            epochs: 60,
            ..InverterOpts::default()
        };
        let (num, cat, _) = train_inverters(&sub, &g, REENCODE_ALPHA, &opts, 93).unwrap();
        let ctx = attack_context(&sub, &g).unwrap();
        let bots = g.bots_in(Split::Test);
        assert!(!bots.is_empty());
        let profiles = [
            ConstraintProfile::cresci2015(),
            ConstraintProfile::twibot22(),
            ConstraintProfile::twibot22_alt(),
        ];
        let mut checked = 0;
        for trial in 0..100 {
            // a fresh random attack model per trial gives a fresh embedding
            let attack = AttackModel::init(sub.d(), 1000 + trial).unwrap();
            let t = bots[trial as usize % bots.len()];
            let out = inject(&g, t, &attack, &sub, &ctx, InjectMode::Full, trial).unwrap();
            let profile = &profiles[trial as usize % profiles.len()];
            let m = materialize(&out, &sub, &num, &cat, profile).unwrap();
            assert!(profile.satisfied(&m.node.numeric), "trial {trial}");
            assert!(m.node.attrs.desc.iter().all(|&v| v == 0.0));
            assert!(m.node.attrs.tweet.iter().all(|&v| v == 0.0));
            assert_eq!(m.node.relation, Relation::Follow);
            assert!(m.node.reencode_gap.is_finite());
            assert_eq!(m.g_prime.len(), g.len() + 1);
            assert_eq!(m.g_prime.edges().len(), g.edges().len() + 1);
            let injected = m.g_prime.len() - 1;
            assert_eq!(m.g_prime.attrs(injected).numeric, m.node.numeric);
            assert_eq!(m.g_prime.label(injected), Label::Bot);
            checked += 1;
        }
        assert_eq!(checked, 100);
    }

    #[test]
    fn materialized_graph_round_trips_through_the_file_format() {
        let (g, sub) = pipeline_fixture();
        let opts = InverterOpts {
            epochs: 30,
            ..InverterOpts::default()
        };
        let (num, cat, _) = train_inverters(&sub, &g, REENCODE_ALPHA, &opts, 94).unwrap();
        let ctx = attack_context(&sub, &g).unwrap();
        let attack = AttackModel::init(sub.d(), 95).unwrap();
        let t = g.bots_in(Split::Test)[0];
        let out = inject(&g, t, &attack, &sub, &ctx, InjectMode::Full, 0).unwrap();
        let m = materialize(&out, &sub, &num, &cat, &ConstraintProfile::twibot22()).unwrap();
        let text = m.g_prime.render();
        let back = SocialGraph::parse(&text).unwrap();
        assert_eq!(back.render(), text, "bit-exact format round trip");
        let injected = back.len() - 1;
        assert_eq!(back.attrs(injected).numeric, m.node.numeric);
        assert_eq!(back.attrs(injected).flags, m.node.flags);
    }

    #[test]
    fn inverter_checkpoint_round_trips() {
        let inv = Inverter::init(4, N_NUMERIC, 97).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inv.ckpt");
        inv.save(&path).unwrap();
        let back = Inverter::load(&path).unwrap();
        assert_eq!((back.in_dim, back.out_dim), (4, N_NUMERIC));
        let x = Tensor::from_vec(1, 4, vec![0.3, -0.2, 0.9, 0.0]);
        assert_eq!(inv.eval(&x).unwrap(), back.eval(&x).unwrap());
    }
}
