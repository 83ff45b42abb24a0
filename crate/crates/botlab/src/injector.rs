//! Node injection attack. Two small nets are trained jointly against the
//! substitute, which stays frozen:
//!
//! * embedding net: `[x_n; x_bt; u]` (1 x 6D) through a two-layer MLP, then a
//!   tanh mapper rescaled into the per-dimension envelope of training-node
//!   embeddings, giving the injected node's features x_inj;
//! * edge net: `[x_bt; x_n; x_inj; u]` (1 x 7D) through a two-layer MLP into
//!   a query vector, projected and dotted with the candidate embeddings to
//!   score each candidate attachment.
//!
//! u is the label vector `[W[:,bot]; W[:,human]; vec(W)]` (1 x 4D), where W
//! is the substitute's friend/follow class projections stacked to D x 4 and
//! aggregated by a trainable row-wise 4 -> 2 map initialized to averaging.
//!
//! Candidates are the target's first-order neighbors, so the injected node
//! sits two hops from the target; an isolated target degenerates to direct
//! attachment. Training relaxes the hard choice to softmax weights; at
//! evaluation the argmax candidate gets the single Follow edge.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::detector::{CleanPass, Detector};
use crate::encoder::LEAKY_SLOPE;
use crate::error::{Error, Result};
use crate::graph::{Label, Relation, SocialGraph, Split, UserAttrs};
use crate::nd::{sgd_step, ParamId, Var};
use crate::{Checkpoint, ParamSet, Real, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InjectMode {
    /// Learned embedding and learned edge.
    Full,
    /// x_inj := x_bt verbatim; the edge is still learned.
    AssignEmbedding,
    /// Learned embedding; attachment picked uniformly among candidates.
    RandomEdge,
}

impl InjectMode {
    pub fn token(self) -> &'static str {
        match self {
            InjectMode::Full => "full",
            InjectMode::AssignEmbedding => "assign-embedding",
            InjectMode::RandomEdge => "random-edge",
        }
    }

    pub fn from_token(tok: &str) -> Option<Self> {
        match tok {
            "full" => Some(InjectMode::Full),
            "assign-embedding" => Some(InjectMode::AssignEmbedding),
            "random-edge" => Some(InjectMode::RandomEdge),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AttackIds {
    pub fw_w: ParamId,
    pub fw_b: ParamId,
    pub x_w0: ParamId,
    pub x_b0: ParamId,
    pub x_w1: ParamId,
    pub x_b1: ParamId,
    pub gx_w: ParamId,
    pub gx_b: ParamId,
    pub e_w0: ParamId,
    pub e_b0: ParamId,
    pub e_w1: ParamId,
    pub e_b1: ParamId,
    pub ge_w: ParamId,
    pub ge_b: ParamId,
}

#[derive(Clone)]
pub struct AttackModel {
    pub params: ParamSet,
    pub ids: AttackIds,
    pub d: usize,
}

/// Row-wise 4 -> 2 aggregation initialized to average the friend and follow
/// halves of the stacked class projections.
fn averaging_init() -> Tensor {
    Tensor::from_vec(
        4,
        2,
        vec![0.5, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.5],
    )
}

impl AttackModel {
    pub fn init(d: usize, seed: u64) -> Result<AttackModel> {
        if d == 0 || d % 4 != 0 {
            return Err(Error::BadModelDim { d });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let ids = AttackIds {
            fw_w: ps.add("fw.w", averaging_init())?,
            fw_b: ps.add("fw.b", Tensor::zeros(1, 2))?,
            x_w0: ps.add_uniform("fx.w0", 6 * d, d, &mut rng)?,
            x_b0: ps.add("fx.b0", Tensor::zeros(1, d))?,
            x_w1: ps.add_uniform("fx.w1", d, d, &mut rng)?,
            x_b1: ps.add("fx.b1", Tensor::zeros(1, d))?,
            gx_w: ps.add_uniform("gx.w", d, d, &mut rng)?,
            gx_b: ps.add("gx.b", Tensor::zeros(1, d))?,
            e_w0: ps.add_uniform("fe.w0", 7 * d, d, &mut rng)?,
            e_b0: ps.add("fe.b0", Tensor::zeros(1, d))?,
            e_w1: ps.add_uniform("fe.w1", d, d, &mut rng)?,
            e_b1: ps.add("fe.b1", Tensor::zeros(1, d))?,
            ge_w: ps.add_uniform("ge.w", d, d, &mut rng)?,
            ge_b: ps.add("ge.b", Tensor::zeros(1, d))?,
        };
        Ok(AttackModel { params: ps, ids, d })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_params(&self.params);
        ck.push_meta("d", self.d);
        ck
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint().save(path)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<AttackModel> {
        let d: usize = ck.meta_parsed("d")?;
        let mut out = AttackModel::init(d, 0)?;
        let mut ps = ParamSet::new();
        for p in out.params.iter() {
            let t = ck.tensor(&p.name)?;
            if t.shape() != p.value.shape() {
                return Err(Error::Mismatch {
                    what: format!("attack tensor {}", p.name),
                    expected: format!("{:?}", p.value.shape()),
                    found: format!("{:?}", t.shape()),
                });
            }
            ps.add(p.name.clone(), t.clone())?;
        }
        out.params = ps;
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<AttackModel> {
        AttackModel::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Frozen per-(substitute, graph) inputs of the attack: clean embeddings,
/// the training-row embedding envelope, the stacked class projections, and
/// the cached clean activations for incremental perturbed forwards.
pub struct AttackContext {
    pub x: Tensor,
    pub lo: Tensor,
    pub hi: Tensor,
    pub stack: Tensor,
    pub clean: CleanPass,
}

pub fn attack_context(sub: &Detector, g: &SocialGraph) -> Result<AttackContext> {
    let x = sub.embed_graph(g)?;
    let train = g.split_nodes(Split::Train);
    if train.is_empty() {
        return Err(Error::NoTrainingData {
            what: "embedding envelope".into(),
        });
    }
    let d = sub.d();
    let mut lo = x.row_tensor(train[0]);
    let mut hi = lo.clone();
    for &v in &train[1..] {
        for c in 0..d {
            let val = x.get(v, c);
            if val < lo.get(0, c) {
                lo.set(0, c, val);
            }
            if val > hi.get(0, c) {
                hi.set(0, c, val);
            }
        }
    }
    let last = sub.last_layer();
    let (head_w, _) = sub.head_ids();
    let head = sub.params().value(head_w);
    let sf = sub.params().value(last.w_f).matmul(head)?;
    let so = sub.params().value(last.w_o).matmul(head)?;
    let mut stack = Tensor::zeros(d, 4);
    for r in 0..d {
        stack.set(r, 0, sf.get(r, 0));
        stack.set(r, 1, sf.get(r, 1));
        stack.set(r, 2, so.get(r, 0));
        stack.set(r, 3, so.get(r, 1));
    }
    let clean = sub.clean_pass(g)?;
    Ok(AttackContext {
        x,
        lo,
        hi,
        stack,
        clean,
    })
}

/// Mean clean embedding of the target's first-order neighbors; an isolated
/// target falls back to its own embedding.
pub fn neighbor_context(g: &SocialGraph, x: &Tensor, b_t: usize) -> Tensor {
    let ns = g.first_order_neighbors(b_t);
    if ns.is_empty() {
        return x.row_tensor(b_t);
    }
    let mut out = Tensor::zeros(1, x.cols());
    for &j in &ns {
        out.add_assign_scaled(&x.row_tensor(j), 1.0 / ns.len() as Real);
    }
    out
}

/// Attachment candidates: the target's first-order neighbors, or the target
/// itself when it has none.
pub fn candidate_set(g: &SocialGraph, b_t: usize) -> Vec<usize> {
    let ns = g.first_order_neighbors(b_t);
    if ns.is_empty() {
        vec![b_t]
    } else {
        ns
    }
}

/// Label vector u (1 x 4D) on the tape: the stacked class projections pass
/// through the trainable aggregation, then [W[:,bot]; W[:,human]; vec(W)]
/// with vec() in row-major order. Gradients flow into the aggregation only.
pub fn build_label_vector(
    tape: &mut Tape,
    attack: &AttackModel,
    stack: Var,
) -> Result<Var> {
    let w = tape.param(&attack.params, attack.ids.fw_w);
    let b = tape.param(&attack.params, attack.ids.fw_b);
    let agg = tape.affine(stack, w, b)?; // D x 2
    let t = tape.transpose(agg); // 2 x D
    let col_bot = tape.select_rows(t, &[Label::Bot.class()])?;
    let col_human = tape.select_rows(t, &[Label::Human.class()])?;
    let d = attack.d;
    let flat = tape.reshape(agg, 1, 2 * d)?;
    tape.concat_cols(&[col_bot, col_human, flat])
}

/// x_inj (1 x D) on the tape: two-layer MLP then tanh squashed into the
/// training-embedding envelope.
pub fn generate_embedding(
    tape: &mut Tape,
    attack: &AttackModel,
    ctx: &AttackContext,
    x_bt: Var,
    x_n: Var,
    u: Var,
) -> Result<Var> {
    let ids = &attack.ids;
    let inp = tape.concat_cols(&[x_n, x_bt, u])?;
    let w0 = tape.param(&attack.params, ids.x_w0);
    let b0 = tape.param(&attack.params, ids.x_b0);
    let h = tape.affine(inp, w0, b0)?;
    let h = tape.leaky_relu(h, LEAKY_SLOPE);
    let w1 = tape.param(&attack.params, ids.x_w1);
    let b1 = tape.param(&attack.params, ids.x_b1);
    let z = tape.affine(h, w1, b1)?;
    let gw = tape.param(&attack.params, ids.gx_w);
    let gb = tape.param(&attack.params, ids.gx_b);
    let z = tape.affine(z, gw, gb)?;
    let t = tape.tanh(z);
    // lo + (t + 1)/2 * (hi - lo), elementwise
    let half = tape.scale(t, 0.5);
    let shift = tape.constant(Tensor::full(1, attack.d, 0.5));
    let unit = tape.add(half, shift)?;
    let mut span = ctx.hi.clone();
    span.add_assign_scaled(&ctx.lo, -1.0);
    let span = tape.constant(span);
    let scaled = tape.mul(unit, span)?;
    let lo = tape.constant(ctx.lo.clone());
    tape.add(lo, scaled)
}

/// Raw candidate scores (1 x |C|) on the tape: two-layer MLP to a query,
/// projected, dotted against the candidate embeddings.
pub fn generate_edge(
    tape: &mut Tape,
    attack: &AttackModel,
    x_bt: Var,
    x_n: Var,
    x_inj: Var,
    u: Var,
    cand_x_t: Var,
) -> Result<Var> {
    let ids = &attack.ids;
    let inp = tape.concat_cols(&[x_bt, x_n, x_inj, u])?;
    let w0 = tape.param(&attack.params, ids.e_w0);
    let b0 = tape.param(&attack.params, ids.e_b0);
    let h = tape.affine(inp, w0, b0)?;
    let h = tape.leaky_relu(h, LEAKY_SLOPE);
    let w1 = tape.param(&attack.params, ids.e_w1);
    let b1 = tape.param(&attack.params, ids.e_b1);
    let q = tape.affine(h, w1, b1)?;
    let gw = tape.param(&attack.params, ids.ge_w);
    let gb = tape.param(&attack.params, ids.ge_b);
    let q = tape.affine(q, gw, gb)?;
    tape.matmul(q, cand_x_t)
}

/// Candidate embeddings transposed (D x |C|) for the score product.
fn candidate_columns(x: &Tensor, candidates: &[usize]) -> Tensor {
    let d = x.cols();
    let mut out = Tensor::zeros(d, candidates.len());
    for (i, &c) in candidates.iter().enumerate() {
        for r in 0..d {
            out.set(r, i, x.get(c, r));
        }
    }
    out
}

/// Argmax with ties broken toward the lowest candidate id (candidates are
/// sorted ascending, so the first maximal entry wins).
pub fn hard_pick(scores: &[Real]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Sum over targets of P(bot) - P(human) under `det` on one perturbed graph.
/// Each term lies in [-1, 1]; lower is better for the attacker.
pub fn attack_loss(det: &Detector, g_prime: &SocialGraph, targets: &[usize]) -> Result<Real> {
    if targets.is_empty() {
        return Err(Error::NoTrainingData {
            what: "attack loss targets".into(),
        });
    }
    let pred = det.predict_graph(g_prime)?;
    Ok(targets
        .iter()
        .map(|&t| pred.probs.get(t, 1) - pred.probs.get(t, 0))
        .sum())
}

/// Everything the generators produced for one target at evaluation time.
pub struct GeneratedInjection {
    pub candidates: Vec<usize>,
    pub x_inj: Tensor,
    pub scores: Vec<Real>,
    pub weights: Vec<Real>,
}

/// Run both nets for one target with the current attack parameters, without
/// touching gradients.
pub fn generate_for_target(
    sub: &Detector,
    attack: &AttackModel,
    ctx: &AttackContext,
    g: &SocialGraph,
    b_t: usize,
    mode: InjectMode,
) -> Result<GeneratedInjection> {
    let candidates = candidate_set(g, b_t);
    let mut tape = Tape::new();
    let stack = tape.constant(ctx.stack.clone());
    let u = build_label_vector(&mut tape, attack, stack)?;
    let x_bt = tape.constant(ctx.x.row_tensor(b_t));
    let x_n = tape.constant(neighbor_context(g, &ctx.x, b_t));
    let x_inj = match mode {
        InjectMode::AssignEmbedding => tape.constant(ctx.x.row_tensor(b_t)),
        _ => generate_embedding(&mut tape, attack, ctx, x_bt, x_n, u)?,
    };
    let cand_t = tape.constant(candidate_columns(&ctx.x, &candidates));
    let scores = generate_edge(&mut tape, attack, x_bt, x_n, x_inj, u, cand_t)?;
    let weights = tape.softmax_rows(scores)?;
    let _ = sub; // the substitute's role here is already baked into ctx
    Ok(GeneratedInjection {
        candidates,
        x_inj: tape.value(x_inj).clone(),
        scores: tape.value(scores).row(0).to_vec(),
        weights: tape.value(weights).row(0).to_vec(),
    })
}

/// Substitute's verdict on the target after a hard attachment, via the
/// incremental forward.
fn target_label_after(
    sub: &Detector,
    g: &SocialGraph,
    ctx: &AttackContext,
    b_t: usize,
    candidates: &[usize],
    x_inj: &Tensor,
    attach_idx: usize,
) -> Result<Label> {
    let mut tape = Tape::new();
    let consts = sub.consts_on(&mut tape);
    let xv = tape.constant(x_inj.clone());
    let mut w = vec![0.0; candidates.len()];
    w[attach_idx] = 1.0;
    let wv = tape.constant(Tensor::from_vec(1, candidates.len(), w));
    let logits = sub.injected_target_logits(
        &mut tape, g, &ctx.clean, &consts, b_t, candidates, xv, wv,
    )?;
    let l = tape.value(logits);
    Ok(if l.get(0, 1) > l.get(0, 0) {
        Label::Bot
    } else {
        Label::Human
    })
}

#[derive(Clone, Copy, Debug)]
pub struct AttackOpts {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch: usize,
    pub lr: Real,
}

impl Default for AttackOpts {
    fn default() -> Self {
        AttackOpts {
            max_epochs: 500,
            patience: 5,
            batch: 32,
            lr: 1e-5,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct AttackReport {
    pub epoch_loss: Vec<Real>,
    pub epoch_val_rate: Vec<Real>,
    pub best_val_rate: Real,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub train_targets: Vec<usize>,
    pub val_targets: Vec<usize>,
}

/// Joint training of the embedding net, edge net, and label aggregation
/// against the frozen substitute. The loss is the summed soft-attachment
/// margin over each batch; validation tracks the hard-attachment
/// misclassification rate, with early stopping after `patience` consecutive
/// non-improving epochs and restoration of the best parameters.
pub fn train_attack(
    sub: &Detector,
    g: &SocialGraph,
    targets: &[usize],
    opts: &AttackOpts,
    seed: u64,
) -> Result<(AttackModel, AttackReport)> {
    if targets.is_empty() {
        return Err(Error::NoTrainingData {
            what: "attack targets".into(),
        });
    }
    for &t in targets {
        if g.label(t) != Label::Bot {
            return Err(Error::NotABot { id: t });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut attack = AttackModel::init(sub.d(), seed.wrapping_add(1))?;
    let ctx = attack_context(sub, g)?;

    // 80/20 target split; a lone target serves as both.
    let mut shuffled = targets.to_vec();
    shuffled.shuffle(&mut rng);
    let n_val = (shuffled.len() / 5).max(1);
    let (train, val): (Vec<usize>, Vec<usize>) = if shuffled.len() == 1 {
        (shuffled.clone(), shuffled.clone())
    } else {
        let val = shuffled[..n_val].to_vec();
        let train = shuffled[n_val..].to_vec();
        (train, val)
    };

    let candidates: std::collections::BTreeMap<usize, Vec<usize>> = train
        .iter()
        .chain(val.iter())
        .map(|&t| (t, candidate_set(g, t)))
        .collect();

    let val_rate = |attack: &AttackModel| -> Result<Real> {
        let mut fooled = 0;
        for &t in &val {
            let gen = generate_for_target(sub, attack, &ctx, g, t, InjectMode::Full)?;
            let pick = hard_pick(&gen.scores);
            let label =
                target_label_after(sub, g, &ctx, t, &gen.candidates, &gen.x_inj, pick)?;
            if label == Label::Human {
                fooled += 1;
            }
        }
        Ok(fooled as Real / val.len() as Real)
    };

    let mut report = AttackReport {
        train_targets: train.clone(),
        val_targets: val.clone(),
        ..AttackReport::default()
    };
    let mut best_rate = -1.0;
    let mut best_snapshot = attack.params.snapshot();
    let mut best_epoch = 0;
    let mut stale = 0usize;

    let mut order = train.clone();
    for epoch in 0..opts.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(opts.batch) {
            let mut tape = Tape::new();
            let consts = sub.consts_on(&mut tape);
            let stack = tape.constant(ctx.stack.clone());
            let u = build_label_vector(&mut tape, &attack, stack)?;
            let mut batch_loss: Option<Var> = None;
            for &t in chunk {
                let cands = &candidates[&t];
                let x_bt = tape.constant(ctx.x.row_tensor(t));
                let x_n = tape.constant(neighbor_context(g, &ctx.x, t));
                let x_inj = generate_embedding(&mut tape, &attack, &ctx, x_bt, x_n, u)?;
                let cand_t = tape.constant(candidate_columns(&ctx.x, cands));
                let scores = generate_edge(&mut tape, &attack, x_bt, x_n, x_inj, u, cand_t)?;
                let weights = tape.softmax_rows(scores)?;
                let logits = sub.injected_target_logits(
                    &mut tape, g, &ctx.clean, &consts, t, cands, x_inj, weights,
                )?;
                let probs = tape.softmax_rows(logits)?;
                let sign = tape.constant(Tensor::from_vec(2, 1, vec![-1.0, 1.0]));
                let margin = tape.matmul(probs, sign)?;
                batch_loss = Some(match batch_loss {
                    Some(acc) => tape.add(acc, margin)?,
                    None => margin,
                });
            }
            let loss = batch_loss.expect("nonempty chunk");
            let loss_v = tape.value(loss).item();
            if !loss_v.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            epoch_loss += loss_v;
            tape.backward(loss, &mut attack.params)?;
            sgd_step(&mut attack.params, opts.lr)?;
        }
        report.epoch_loss.push(epoch_loss);
        let rate = val_rate(&attack)?;
        report.epoch_val_rate.push(rate);
        if rate > best_rate {
            best_rate = rate;
            best_snapshot = attack.params.snapshot();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale > opts.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    attack.params.restore(&best_snapshot);
    report.best_val_rate = best_rate.max(0.0);
    report.best_epoch = best_epoch;
    Ok((attack, report))
}

/// One hard injection. The new node carries placeholder attributes (zero
/// text, zero counts, false flags) until recovery materializes real ones.
pub struct InjectionOutcome {
    pub target: usize,
    pub attach: usize,
    pub relation: Relation,
    pub x_inj: Tensor,
    pub candidates: Vec<usize>,
    pub scores: Vec<Real>,
    pub weights: Vec<Real>,
    pub g_prime: SocialGraph,
}

pub fn inject(
    g: &SocialGraph,
    b_t: usize,
    attack: &AttackModel,
    sub: &Detector,
    ctx: &AttackContext,
    mode: InjectMode,
    seed: u64,
) -> Result<InjectionOutcome> {
    if b_t >= g.len() {
        return Err(Error::NodeOutOfRange { id: b_t, k: g.len() });
    }
    if g.label(b_t) != Label::Bot {
        return Err(Error::NotABot { id: b_t });
    }
    let gen = generate_for_target(sub, attack, ctx, g, b_t, mode)?;
    let attach_idx = match mode {
        InjectMode::RandomEdge => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::Rng::gen_range(&mut rng, 0..gen.candidates.len())
        }
        _ => hard_pick(&gen.scores),
    };
    let attach = gen.candidates[attach_idx];
    let g_prime = g.with_injected(
        UserAttrs::zeroed(g.ds()),
        Label::Bot,
        attach,
        Relation::Follow,
    )?;
    Ok(InjectionOutcome {
        target: b_t,
        attach,
        relation: Relation::Follow,
        x_inj: gen.x_inj,
        candidates: gen.candidates,
        scores: gen.scores,
        weights: gen.weights,
        g_prime,
    })
}
