//! Bot detectors: encoded attributes, relational graph convolution, 2-logit
//! head, softmax. One forward engine drives four kinds:
//!
//! * `substitute-rgcn`  — quarter-slice encoder, per-relation weights.
//! * `substitute-gcn`   — same, but friend/follow weights tied (relation-blind).
//! * `victim-gcn`       — tied weights, independently seeded victim.
//! * `victim-botrgcn`   — joint projection of all raw attributes into the
//!   model width, exactly two relational layers, FC head.
//!
//! A layer computes, per node i and relation r with neighborhood E_r(i):
//!
//! ```text
//! h'_i = h_i W_self + sum_r (1/|E_r(i)|) (sum_{j in E_r(i)} h_j) W_r
//! ```
//!
//! with undirected neighborhoods and no r-term when E_r(i) is empty.
//! Leaky ReLU runs between layers, never after the last one.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{batch_inputs, EncoderIds, NormStats, CAT_WIDTH, INIT_GAIN, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::graph::{Label, Relation, SocialGraph, Split, N_NUMERIC};
use crate::nd::{sgd_step, ParamId, Var};
use crate::{Checkpoint, Csr, ParamSet, Real, SpPair, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DetectorKind {
    SubstituteRgcn,
    SubstituteGcn,
    VictimGcn,
    VictimBotRgcn,
}

impl DetectorKind {
    pub fn token(self) -> &'static str {
        match self {
            DetectorKind::SubstituteRgcn => "substitute-rgcn",
            DetectorKind::SubstituteGcn => "substitute-gcn",
            DetectorKind::VictimGcn => "victim-gcn",
            DetectorKind::VictimBotRgcn => "victim-botrgcn",
        }
    }

    pub fn from_token(tok: &str) -> Option<Self> {
        match tok {
            "substitute-rgcn" => Some(DetectorKind::SubstituteRgcn),
            "substitute-gcn" => Some(DetectorKind::SubstituteGcn),
            "victim-gcn" => Some(DetectorKind::VictimGcn),
            "victim-botrgcn" => Some(DetectorKind::VictimBotRgcn),
            _ => None,
        }
    }

    /// Relation-blind kinds share one weight matrix for both relations.
    pub fn ties_relations(self) -> bool {
        matches!(self, DetectorKind::SubstituteGcn | DetectorKind::VictimGcn)
    }

    pub fn joint_encoder(self) -> bool {
        matches!(self, DetectorKind::VictimBotRgcn)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DetectorSpec {
    pub kind: DetectorKind,
    pub layers: usize,
    pub d: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct TrainOpts {
    pub epochs: usize,
    pub lr: Real,
    pub lambda: Real,
}

impl Default for TrainOpts {
    fn default() -> Self {
        TrainOpts {
            epochs: 150,
            lr: 1e-2,
            lambda: 5e-4,
        }
    }
}

/// Per-layer weight handles. Tied kinds store the same id in `w_f` and `w_o`.
#[derive(Clone, Copy, Debug)]
pub struct LayerIds {
    pub w_self: ParamId,
    pub w_f: ParamId,
    pub w_o: ParamId,
}

#[derive(Clone, Copy, Debug)]
enum Frontend {
    Quarter(EncoderIds),
    Joint { w: ParamId, b: ParamId },
}

#[derive(Clone, Debug)]
pub struct Prediction {
    /// k x 2 post-softmax rows, column order (human, bot).
    pub probs: Tensor,
    pub labels: Vec<Label>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub epoch_loss: Vec<Real>,
    pub epoch_val_acc: Vec<Real>,
}

impl TrainReport {
    pub fn final_val_acc(&self) -> Real {
        self.epoch_val_acc.last().copied().unwrap_or(0.0)
    }

    pub fn best_val_acc(&self) -> Real {
        self.epoch_val_acc.iter().copied().fold(0.0, Real::max)
    }
}

#[derive(Clone)]
pub struct Detector {
    kind: DetectorKind,
    layer_count: usize,
    d: usize,
    ds: usize,
    stats: NormStats,
    params: ParamSet,
    front: Frontend,
    layers: Vec<LayerIds>,
    head_w: ParamId,
    head_b: ParamId,
}

/// Where `build` gets its tensors: fresh random init or a parsed checkpoint.
enum ParamSource<'a> {
    Fresh(ChaCha8Rng),
    Stored(&'a Checkpoint),
}

impl ParamSource<'_> {
    fn weight(&mut self, ps: &mut ParamSet, name: &str, r: usize, c: usize) -> Result<ParamId> {
        match self {
            ParamSource::Fresh(rng) => ps.add_uniform_gain(name, r, c, INIT_GAIN, rng),
            ParamSource::Stored(ck) => {
                let t = ck.tensor(name)?;
                if t.shape() != (r, c) {
                    return Err(Error::Mismatch {
                        what: format!("checkpoint tensor {name}"),
                        expected: format!("{r}x{c}"),
                        found: format!("{}x{}", t.shape().0, t.shape().1),
                    });
                }
                ps.add(name, t.clone())
            }
        }
    }

    fn bias(&mut self, ps: &mut ParamSet, name: &str, c: usize) -> Result<ParamId> {
        match self {
            ParamSource::Fresh(_) => ps.add(name, Tensor::zeros(1, c)),
            ParamSource::Stored(_) => self.weight(ps, name, 1, c),
        }
    }
}

impl Detector {
    pub fn init(spec: DetectorSpec, ds: usize, stats: NormStats, seed: u64) -> Result<Detector> {
        Detector::build(spec, ds, stats, ParamSource::Fresh(ChaCha8Rng::seed_from_u64(seed)))
    }

    fn build(
        spec: DetectorSpec,
        ds: usize,
        stats: NormStats,
        mut src: ParamSource,
    ) -> Result<Detector> {
        if spec.d == 0 || spec.d % 4 != 0 {
            return Err(Error::BadModelDim { d: spec.d });
        }
        if !(1..=3).contains(&spec.layers) {
            return Err(Error::BadLayerCount {
                layers: spec.layers,
            });
        }
        if spec.kind.joint_encoder() && spec.layers != 2 {
            return Err(Error::Mismatch {
                what: "victim-botrgcn layer count".into(),
                expected: "2".into(),
                found: spec.layers.to_string(),
            });
        }
        let d = spec.d;
        let mut params = ParamSet::new();
        let front = if spec.kind.joint_encoder() {
            let in_w = 2 * ds + N_NUMERIC + CAT_WIDTH;
            Frontend::Joint {
                w: src.weight(&mut params, "joint.w", in_w, d)?,
                b: src.bias(&mut params, "joint.b", d)?,
            }
        } else {
            match &mut src {
                ParamSource::Fresh(rng) => Frontend::Quarter(EncoderIds::init(&mut params, ds, d, rng)?),
                ParamSource::Stored(ck) => {
                    let q = d / 4;
                    for (name, rows) in [
                        ("enc.desc.w", ds),
                        ("enc.desc.b", 1),
                        ("enc.tweet.w", ds),
                        ("enc.tweet.b", 1),
                        ("enc.num.w", N_NUMERIC),
                        ("enc.num.b", 1),
                        ("enc.cat.w", CAT_WIDTH),
                        ("enc.cat.b", 1),
                    ] {
                        let t = ck.tensor(name)?;
                        if t.shape() != (rows, q) {
                            return Err(Error::Mismatch {
                                what: format!("checkpoint tensor {name}"),
                                expected: format!("{rows}x{q}"),
                                found: format!("{}x{}", t.shape().0, t.shape().1),
                            });
                        }
                        params.add(name, t.clone())?;
                    }
                    Frontend::Quarter(EncoderIds::lookup(&params)?)
                }
            }
        };
        let mut layers = Vec::with_capacity(spec.layers);
        for l in 0..spec.layers {
            let w_self = src.weight(&mut params, &format!("layer{l}.self"), d, d)?;
            let (w_f, w_o) = if spec.kind.ties_relations() {
                let w_r = src.weight(&mut params, &format!("layer{l}.r"), d, d)?;
                (w_r, w_r)
            } else {
                (
                    src.weight(&mut params, &format!("layer{l}.f"), d, d)?,
                    src.weight(&mut params, &format!("layer{l}.o"), d, d)?,
                )
            };
            layers.push(LayerIds { w_self, w_f, w_o });
        }
        let head_w = src.weight(&mut params, "head.w", d, 2)?;
        let head_b = src.bias(&mut params, "head.b", 2)?;
        Ok(Detector {
            kind: spec.kind,
            layer_count: spec.layers,
            d,
            ds,
            stats,
            params,
            front,
            layers,
            head_w,
            head_b,
        })
    }

    pub fn kind(&self) -> DetectorKind {
        self.kind
    }

    pub fn layer_count(&self) -> usize {
        self.layer_count
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn ds(&self) -> usize {
        self.ds
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn last_layer(&self) -> &LayerIds {
        self.layers.last().expect("layer count >= 1")
    }

    pub fn head_ids(&self) -> (ParamId, ParamId) {
        (self.head_w, self.head_b)
    }

    pub fn encoder_ids(&self) -> Option<EncoderIds> {
        match self.front {
            Frontend::Quarter(ids) => Some(ids),
            Frontend::Joint { .. } => None,
        }
    }

    /// Initial embedding matrix x^(0) on the tape.
    fn embed_tape(&self, tape: &mut Tape, g: &SocialGraph) -> Result<Var> {
        match self.front {
            Frontend::Quarter(enc) => {
                let inp = batch_inputs(g, &self.stats);
                enc.encode(tape, &self.params, &inp)
            }
            Frontend::Joint { w, b } => {
                let joint = tape.constant(joint_inputs(g, &self.stats));
                let w = tape.param(&self.params, w);
                let b = tape.param(&self.params, b);
                let z = tape.affine(joint, w, b)?;
                Ok(tape.leaky_relu(z, LEAKY_SLOPE))
            }
        }
    }

    fn layer_tape(
        &self,
        tape: &mut Tape,
        h: Var,
        adj_f: &Rc<SpPair>,
        adj_o: &Rc<SpPair>,
        lay: &LayerIds,
    ) -> Result<Var> {
        let w_self = tape.param(&self.params, lay.w_self);
        let mut out = tape.matmul(h, w_self)?;
        for (adj, w) in [(adj_f, lay.w_f), (adj_o, lay.w_o)] {
            let agg = tape.spmm(adj, h)?;
            let w = tape.param(&self.params, w);
            let term = tape.matmul(agg, w)?;
            out = tape.add(out, term)?;
        }
        Ok(out)
    }

    /// Pre-softmax logits for every node.
    pub fn forward_tape(&self, tape: &mut Tape, g: &SocialGraph) -> Result<Var> {
        let adj_f = Rc::new(SpPair::new(norm_adj(g, Relation::Friend)));
        let adj_o = Rc::new(SpPair::new(norm_adj(g, Relation::Follow)));
        let mut h = self.embed_tape(tape, g)?;
        for (l, lay) in self.layers.iter().enumerate() {
            if l > 0 {
                h = tape.leaky_relu(h, LEAKY_SLOPE);
            }
            h = self.layer_tape(tape, h, &adj_f, &adj_o, lay)?;
        }
        let w = tape.param(&self.params, self.head_w);
        let b = tape.param(&self.params, self.head_b);
        tape.affine(h, w, b)
    }

    pub fn predict_graph(&self, g: &SocialGraph) -> Result<Prediction> {
        let mut tape = Tape::new();
        let logits = self.forward_tape(&mut tape, g)?;
        let probs = tape.softmax_rows(logits)?;
        let probs = tape.value(probs).clone();
        let labels = (0..g.len())
            .map(|v| {
                if probs.get(v, 1) > probs.get(v, 0) {
                    Label::Bot
                } else {
                    Label::Human
                }
            })
            .collect();
        Ok(Prediction { probs, labels })
    }

    /// (label, P(bot)) for one node. Ties go to Human.
    pub fn predict_node(&self, g: &SocialGraph, v: usize) -> Result<(Label, Real)> {
        if v >= g.len() {
            return Err(Error::NodeOutOfRange { id: v, k: g.len() });
        }
        let pred = self.predict_graph(g)?;
        Ok((pred.labels[v], pred.probs.get(v, 1)))
    }

    /// Clean-graph embedding matrix (k x d), tape-free.
    pub fn embed_graph(&self, g: &SocialGraph) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x0 = self.embed_tape(&mut tape, g)?;
        Ok(tape.value(x0).clone())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_params(&self.params);
        ck.push_meta("kind", self.kind.token());
        ck.push_meta("layers", self.layer_count);
        ck.push_meta("d", self.d);
        ck.push_meta("ds", self.ds);
        let (mean, std) = self.stats.to_tensors();
        ck.push_tensor("norm.mean", mean);
        ck.push_tensor("norm.std", std);
        ck
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Detector> {
        let ck = Checkpoint::load(path)?;
        Detector::from_checkpoint(&ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Detector> {
        let kind_tok: String = ck.meta_parsed("kind")?;
        let kind = DetectorKind::from_token(&kind_tok).ok_or_else(|| Error::Mismatch {
            what: "detector kind".into(),
            expected: "substitute-rgcn|substitute-gcn|victim-gcn|victim-botrgcn".into(),
            found: kind_tok,
        })?;
        let spec = DetectorSpec {
            kind,
            layers: ck.meta_parsed("layers")?,
            d: ck.meta_parsed("d")?,
        };
        let ds = ck.meta_parsed("ds")?;
        let stats = NormStats::from_tensors(ck.tensor("norm.mean")?, ck.tensor("norm.std")?)?;
        Detector::build(spec, ds, stats, ParamSource::Stored(ck))
    }
}

/// Joint raw-attribute matrix for the botrgcn frontend:
/// [desc | tweet | z-scored numericals | one-hot categoricals].
fn joint_inputs(g: &SocialGraph, stats: &NormStats) -> Tensor {
    let inp = batch_inputs(g, stats);
    let k = g.len();
    let w = 2 * g.ds() + N_NUMERIC + CAT_WIDTH;
    let mut data = Vec::with_capacity(k * w);
    for v in 0..k {
        data.extend_from_slice(inp.desc.row(v));
        data.extend_from_slice(inp.tweet.row(v));
        data.extend_from_slice(inp.numz.row(v));
        data.extend_from_slice(inp.cat.row(v));
    }
    Tensor::from_vec(k, w, data)
}

/// Row-normalized undirected adjacency for one relation: entry (i, j) is
/// 1/|E_r(i)| for each neighbor j; rows without neighbors stay empty.
pub fn norm_adj(g: &SocialGraph, rel: Relation) -> Csr {
    let k = g.len();
    let rows: Vec<Vec<(usize, Real)>> = (0..k)
        .map(|v| {
            let ns = g.neighbors(v, rel);
            if ns.is_empty() {
                return Vec::new();
            }
            let w = 1.0 / ns.len() as Real;
            ns.iter().map(|&j| (j, w)).collect()
        })
        .collect();
    Csr::from_rows(k, &rows)
}

fn raw_adj(g: &SocialGraph, rel: Relation) -> Csr {
    let k = g.len();
    let rows: Vec<Vec<(usize, Real)>> = (0..k)
        .map(|v| g.neighbors(v, rel).iter().map(|&j| (j, 1.0)).collect())
        .collect();
    Csr::from_rows(k, &rows)
}

/// One relational layer as a plain tensor function (no tape). The weight
/// matrices are stored for right multiplication, i.e. each is the transpose
/// of the projection applied to column vectors.
pub fn rgcn_layer(
    x: &Tensor,
    g: &SocialGraph,
    w_self: &Tensor,
    w_f: &Tensor,
    w_o: &Tensor,
) -> Result<Tensor> {
    if x.rows() != g.len() {
        return Err(Error::ShapeMismatch {
            op: "rgcn_layer",
            details: format!("{} feature rows for {} nodes", x.rows(), g.len()),
        });
    }
    let mut out = x.matmul(w_self)?;
    for (rel, w) in [(Relation::Friend, w_f), (Relation::Follow, w_o)] {
        let agg = norm_adj(g, rel).matmul(x)?;
        out.add_assign(&agg.matmul(w)?);
    }
    Ok(out)
}

pub fn accuracy(det: &Detector, g: &SocialGraph, split: Split) -> Result<Real> {
    let nodes = g.split_nodes(split);
    if nodes.is_empty() {
        return Ok(0.0);
    }
    let pred = det.predict_graph(g)?;
    let hits = nodes
        .iter()
        .filter(|&&v| pred.labels[v] == g.label(v))
        .count();
    Ok(hits as Real / nodes.len() as Real)
}

/// Full-batch gradient descent on CE(train mask) + lambda * sum of squared
/// parameter entries. Deterministic per seed.
pub fn train_detector(
    g: &SocialGraph,
    spec: DetectorSpec,
    opts: &TrainOpts,
    seed: u64,
) -> Result<(Detector, TrainReport)> {
    let stats = NormStats::fit(g)?;
    let mut det = Detector::init(spec, g.ds(), stats, seed)?;
    let train = g.split_nodes(Split::Train);
    let labels: Vec<usize> = train.iter().map(|&v| g.label(v).class()).collect();
    let mut report = TrainReport::default();
    for epoch in 0..opts.epochs {
        let mut tape = Tape::new();
        let logits = det.forward_tape(&mut tape, g)?;
        let tr_logits = tape.select_rows(logits, &train)?;
        let ce = tape.softmax_ce(tr_logits, &labels)?;
        let mut loss = ce;
        if opts.lambda != 0.0 {
            let mut l2: Option<Var> = None;
            for id in det.params.ids() {
                let p = tape.param(&det.params, id);
                let sq = tape.mul(p, p)?;
                let s = tape.sum(sq);
                l2 = Some(match l2 {
                    Some(acc) => tape.add(acc, s)?,
                    None => s,
                });
            }
            let l2 = tape.scale(l2.expect("at least one parameter"), opts.lambda);
            loss = tape.add(loss, l2)?;
        }
        let loss_v = tape.value(loss).item();
        if !loss_v.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        tape.backward(loss, &mut det.params)?;
        sgd_step(&mut det.params, opts.lr)?;
        report.epoch_loss.push(loss_v);
        report.epoch_val_acc.push(accuracy(&det, g, Split::Val)?);
    }
    Ok((det, report))
}

// --- incremental forward under a soft injection ----------------------------

/// Clean-graph activations cached once per (model, graph): layer inputs,
/// unnormalized per-relation neighbor sums of those inputs, final pre-head
/// features, logits, probabilities.
pub struct CleanPass {
    /// layer_in[l] is the input to layer l; layer_in[0] is x^(0).
    pub layer_in: Vec<Tensor>,
    /// raw_sum[r][l][v] = sum of layer_in[l] rows over v's r-neighbors.
    pub raw_sum: [Vec<Tensor>; 2],
    /// Final pre-head features h^(L) (no activation after the last layer).
    pub out: Tensor,
    pub logits: Tensor,
    pub probs: Tensor,
}

impl Detector {
    pub fn clean_pass(&self, g: &SocialGraph) -> Result<CleanPass> {
        let mut tape = Tape::new();
        let adj_f = Rc::new(SpPair::new(norm_adj(g, Relation::Friend)));
        let adj_o = Rc::new(SpPair::new(norm_adj(g, Relation::Follow)));
        let mut h = self.embed_tape(&mut tape, g)?;
        let mut layer_in = vec![tape.value(h).clone()];
        for (l, lay) in self.layers.iter().enumerate() {
            if l > 0 {
                h = tape.leaky_relu(h, LEAKY_SLOPE);
                layer_in.push(tape.value(h).clone());
            }
            h = self.layer_tape(&mut tape, h, &adj_f, &adj_o, lay)?;
        }
        let out = tape.value(h).clone();
        let w = tape.param(&self.params, self.head_w);
        let b = tape.param(&self.params, self.head_b);
        let logits = tape.affine(h, w, b)?;
        let probs = tape.softmax_rows(logits)?;
        let (logits, probs) = (tape.value(logits).clone(), tape.value(probs).clone());

        let rf = raw_adj(g, Relation::Friend);
        let ro = raw_adj(g, Relation::Follow);
        let sum_f = layer_in.iter().map(|x| rf.matmul(x)).collect::<Result<_>>()?;
        let sum_o = layer_in.iter().map(|x| ro.matmul(x)).collect::<Result<_>>()?;
        Ok(CleanPass {
            layer_in,
            raw_sum: [sum_f, sum_o],
            out,
            logits,
            probs,
        })
    }

    /// Frozen copies of the layer and head weights as tape constants, created
    /// once per tape and shared across a batch of injection forwards.
    pub fn consts_on(&self, tape: &mut Tape) -> ModelConsts {
        let layers = self
            .layers
            .iter()
            .map(|lay| LayerConsts {
                w_self: tape.constant(self.params.value(lay.w_self).clone()),
                w_f: tape.constant(self.params.value(lay.w_f).clone()),
                w_o: tape.constant(self.params.value(lay.w_o).clone()),
            })
            .collect();
        ModelConsts {
            layers,
            head_w: tape.constant(self.params.value(self.head_w).clone()),
            head_b: tape.constant(self.params.value(self.head_b).clone()),
        }
    }

    /// Logits row (1 x 2) of `target` after attaching one new node with
    /// embedding `x_inj` by Follow edges to `candidates`, weighted by the
    /// 1 x |C| row `weights`. Soft weights give the differentiable relaxation
    /// used in attack training; a one-hot row reproduces the hard attachment.
    ///
    /// Only rows whose value can change AND can reach the target within the
    /// remaining layers are recomputed; everything else enters as constants
    /// taken from the clean pass.
    pub fn injected_target_logits(
        &self,
        tape: &mut Tape,
        g: &SocialGraph,
        clean: &CleanPass,
        consts: &ModelConsts,
        target: usize,
        candidates: &[usize],
        x_inj: Var,
        weights: Var,
    ) -> Result<Var> {
        let (t, _) = self.injected_pair_logits(
            tape, g, clean, consts, target, candidates, x_inj, weights,
        )?;
        Ok(t)
    }

    /// Same forward as `injected_target_logits`, but also returns the logits
    /// of the new node itself. The injected row is carried through every
    /// layer anyway, so this costs one extra head affine.
    #[allow(clippy::too_many_arguments)]
    pub fn injected_pair_logits(
        &self,
        tape: &mut Tape,
        g: &SocialGraph,
        clean: &CleanPass,
        consts: &ModelConsts,
        target: usize,
        candidates: &[usize],
        x_inj: Var,
        weights: Var,
    ) -> Result<(Var, Var)> {
        let ln = self.layer_count;
        let cidx: BTreeMap<usize, usize> =
            candidates.iter().enumerate().map(|(i, &c)| (c, i)).collect();

        // Per-candidate scalar weights and their sum.
        let w_t = tape.transpose(weights);
        let w_scalar: Vec<Var> = (0..candidates.len())
            .map(|i| tape.select_rows(w_t, &[i]))
            .collect::<Result<_>>()?;
        let w_sum = tape.sum(weights);

        // changed[l]: original-node rows whose level-l value differs from the
        // clean pass. Candidates change at every level >= 1 (their follow
        // denominator now includes the injected mass); changes then spread one
        // hop per layer.
        let mut changed: Vec<BTreeSet<usize>> = vec![BTreeSet::new()];
        for l in 0..ln {
            let mut next: BTreeSet<usize> = cidx.keys().copied().collect();
            for &v in &changed[l] {
                next.insert(v);
                next.extend(g.first_order_neighbors(v));
            }
            changed.push(next);
        }
        // needed[l]: rows whose level-l value the target's logits depend on.
        let mut needed: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); ln + 1];
        needed[ln].insert(target);
        for l in (0..ln).rev() {
            let rec: Vec<usize> = changed[l + 1]
                .intersection(&needed[l + 1])
                .copied()
                .collect();
            let mut req = BTreeSet::new();
            for &v in &rec {
                req.insert(v);
                req.extend(g.first_order_neighbors(v));
            }
            needed[l] = req;
        }

        let mut pert: BTreeMap<usize, Var> = BTreeMap::new();
        let mut inj = x_inj;
        for l in 0..ln {
            let lay = &consts.layers[l];
            let rec: Vec<usize> = changed[l + 1]
                .intersection(&needed[l + 1])
                .copied()
                .collect();
            let mut next_pert = BTreeMap::new();
            for &v in &rec {
                let vin = match pert.get(&v) {
                    Some(&var) => var,
                    None => tape.constant(clean.layer_in[l].row_tensor(v)),
                };
                let mut row = tape.matmul(vin, lay.w_self)?;
                for rel in [Relation::Friend, Relation::Follow] {
                    let ns = g.neighbors(v, rel);
                    let gains_inj = rel == Relation::Follow && cidx.contains_key(&v);
                    if ns.is_empty() && !gains_inj {
                        continue;
                    }
                    // constant part: clean neighbor sum minus the clean rows
                    // of neighbors that have perturbed replacements
                    let mut base = clean.raw_sum[rel.index()][l].row_tensor(v);
                    let moved: Vec<usize> = ns
                        .iter()
                        .copied()
                        .filter(|j| pert.contains_key(j))
                        .collect();
                    for &j in &moved {
                        base.add_assign_scaled(&clean.layer_in[l].row_tensor(j), -1.0);
                    }
                    let mut num = tape.constant(base);
                    for &j in &moved {
                        num = tape.add(num, pert[&j])?;
                    }
                    let mean = if gains_inj {
                        let wi = w_scalar[cidx[&v]];
                        let mass = tape.smul(inj, wi)?;
                        num = tape.add(num, mass)?;
                        let n = tape.scalar(ns.len() as Real);
                        let denom = tape.add(n, wi)?;
                        tape.sdiv(num, denom)?
                    } else {
                        tape.scale(num, 1.0 / ns.len() as Real)
                    };
                    let w = if rel == Relation::Friend { lay.w_f } else { lay.w_o };
                    let term = tape.matmul(mean, w)?;
                    row = tape.add(row, term)?;
                }
                if l + 1 < ln {
                    row = tape.leaky_relu(row, LEAKY_SLOPE);
                }
                next_pert.insert(v, row);
            }

            // injected row: self term plus the weighted follow mean over the
            // candidates (its only neighbors)
            let mut irow = tape.matmul(inj, lay.w_self)?;
            let mut num: Option<Var> = None;
            for (i, &c) in candidates.iter().enumerate() {
                let crow = match pert.get(&c) {
                    Some(&var) => var,
                    None => tape.constant(clean.layer_in[l].row_tensor(c)),
                };
                let t = tape.smul(crow, w_scalar[i])?;
                num = Some(match num {
                    Some(acc) => tape.add(acc, t)?,
                    None => t,
                });
            }
            let mean = tape.sdiv(num.expect("candidate set nonempty"), w_sum)?;
            let t = tape.matmul(mean, lay.w_o)?;
            irow = tape.add(irow, t)?;
            if l + 1 < ln {
                irow = tape.leaky_relu(irow, LEAKY_SLOPE);
            }
            inj = irow;
            pert = next_pert;
        }

        let trow = match pert.get(&target) {
            Some(&var) => var,
            None => tape.constant(clean.out.row_tensor(target)),
        };
        let t_logits = tape.affine(trow, consts.head_w, consts.head_b)?;
        let i_logits = tape.affine(inj, consts.head_w, consts.head_b)?;
        Ok((t_logits, i_logits))
    }
}

pub struct LayerConsts {
    pub w_self: Var,
    pub w_f: Var,
    pub w_o: Var,
}

pub struct ModelConsts {
    pub layers: Vec<LayerConsts>,
    pub head_w: Var,
    pub head_b: Var,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::synth_graph;

    fn sub_spec(layers: usize) -> DetectorSpec {
        DetectorSpec {
            kind: DetectorKind::SubstituteRgcn,
            layers,
            d: 8,
        }
    }

    fn small_graph() -> SocialGraph {
        synth_graph(30, 0.3, 3.0, 4, 21).unwrap()
    }

    fn fresh(spec: DetectorSpec, g: &SocialGraph, seed: u64) -> Detector {
        Detector::init(spec, g.ds(), NormStats::fit(g).unwrap(), seed).unwrap()
    }

    /// Dense reference: normalized adjacency built by scanning the edge list,
    /// then three explicit matrix products.
    fn dense_layer_oracle(
        x: &Tensor,
        g: &SocialGraph,
        w_self: &Tensor,
        w_f: &Tensor,
        w_o: &Tensor,
    ) -> Tensor {
        let k = g.len();
        let mut out = x.matmul(w_self).unwrap();
        for (rel, w) in [(Relation::Friend, w_f), (Relation::Follow, w_o)] {
            let mut a = Tensor::zeros(k, k);
            for v in 0..k {
                let ns = g.neighbors(v, rel);
                for &j in ns {
                    a.set(v, j, 1.0 / ns.len() as Real);
                }
            }
            out.add_assign(&a.matmul(x).unwrap().matmul(w).unwrap());
        }
        out
    }

    #[test]
    fn layer_matches_dense_adjacency_oracle() {
        let g = small_graph();
        let det = fresh(sub_spec(1), &g, 3);
        let x = det.embed_graph(&g).unwrap();
        let (ws, wf, wo) = (
            det.params.value(det.layers[0].w_self),
            det.params.value(det.layers[0].w_f),
            det.params.value(det.layers[0].w_o),
        );
        let got = rgcn_layer(&x, &g, ws, wf, wo).unwrap();
        let want = dense_layer_oracle(&x, &g, ws, wf, wo);
        for r in 0..got.rows() {
            for c in 0..got.cols() {
                assert!((got.get(r, c) - want.get(r, c)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn isolated_node_keeps_only_self_term() {
        let g = {
            use crate::graph::UserAttrs;
            let attrs = vec![UserAttrs::zeroed(2); 12];
            let mut labels = vec![Label::Human; 12];
            labels[3] = Label::Bot;
            let splits = vec![Some(Split::Train); 12];
            SocialGraph::new(attrs, labels, splits, vec![(0, 1, Relation::Friend)]).unwrap()
        };
        let x = Tensor::from_vec(12, 2, (0..24).map(|i| i as Real).collect());
        let w: Tensor = Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let out = rgcn_layer(&x, &g, &w, &w, &w).unwrap();
        // node 5 is isolated: row = x[5] * w only
        let want = x.row_tensor(5).matmul(&w).unwrap();
        assert_eq!(out.row(5), want.row(0));
        // node 0 has one friend (node 1): row = x0*w + x1*w
        let want0 = {
            let mut t = x.row_tensor(0).matmul(&w).unwrap();
            t.add_assign(&x.row_tensor(1).matmul(&w).unwrap());
            t
        };
        for c in 0..2 {
            assert!((out.get(0, c) - want0.get(0, c)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_give_uniform_prediction() {
        let g = small_graph();
        let mut det = fresh(sub_spec(1), &g, 4);
        for id in det.params.ids() {
            let shape = det.params.value(id).shape();
            det.params.set_value(id, Tensor::zeros(shape.0, shape.1));
        }
        let pred = det.predict_graph(&g).unwrap();
        for v in 0..g.len() {
            assert!((pred.probs.get(v, 0) - 0.5).abs() < 1e-12);
            assert!((pred.probs.get(v, 1) - 0.5).abs() < 1e-12);
            assert_eq!(pred.labels[v], Label::Human, "tie breaks to human");
        }
    }

    #[test]
    fn probs_rows_sum_to_one() {
        let g = small_graph();
        let det = fresh(sub_spec(2), &g, 5);
        let pred = det.predict_graph(&g).unwrap();
        for v in 0..g.len() {
            let s = pred.probs.get(v, 0) + pred.probs.get(v, 1);
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_is_permutation_equivariant() {
        let g = small_graph();
        let det = fresh(sub_spec(2), &g, 6);
        let k = g.len();
        // reverse permutation: new id = k - 1 - old id
        let perm: Vec<usize> = (0..k).rev().collect();
        let attrs = (0..k).map(|v| g.attrs(perm[v]).clone()).collect();
        let labels = (0..k).map(|v| g.label(perm[v])).collect();
        let splits = (0..k).map(|v| g.split(perm[v])).collect();
        let inv = |v: usize| k - 1 - v;
        let edges = g
            .edges()
            .iter()
            .map(|&(s, d, r)| (inv(s), inv(d), r))
            .collect();
        let gp = SocialGraph::new(attrs, labels, splits, edges).unwrap();
        let a = det.predict_graph(&g).unwrap();
        let b = det.predict_graph(&gp).unwrap();
        for v in 0..k {
            assert!((a.probs.get(perm[v], 1) - b.probs.get(v, 1)).abs() < 1e-12);
        }
    }

    #[test]
    fn two_layer_forward_recomposes_from_primitives() {
        let g = small_graph();
        let det = fresh(sub_spec(2), &g, 7);
        let x0 = det.embed_graph(&g).unwrap();
        let val = |id| det.params.value(id);
        let h1 = rgcn_layer(
            &x0,
            &g,
            val(det.layers[0].w_self),
            val(det.layers[0].w_f),
            val(det.layers[0].w_o),
        )
        .unwrap()
        .map(|v| if v >= 0.0 { v } else { LEAKY_SLOPE * v });
        let h2 = rgcn_layer(
            &h1,
            &g,
            val(det.layers[1].w_self),
            val(det.layers[1].w_f),
            val(det.layers[1].w_o),
        )
        .unwrap();
        let mut logits = h2.matmul(val(det.head_w)).unwrap();
        for v in 0..g.len() {
            let pred = det.predict_graph(&g).unwrap();
            let b = val(det.head_b);
            let (l0, l1) = (
                logits.get(v, 0) + b.get(0, 0),
                logits.get(v, 1) + b.get(0, 1),
            );
            let m = l0.max(l1);
            let (e0, e1) = ((l0 - m).exp(), (l1 - m).exp());
            let p1 = e1 / (e0 + e1);
            assert!((pred.probs.get(v, 1) - p1).abs() < 1e-12, "node {v}");
            if v > 3 {
                break; // a few rows suffice; predict_graph is O(k)
            }
        }
        logits.add_assign(&Tensor::zeros(g.len(), 2));
    }

    #[test]
    fn training_descends_and_is_seed_deterministic() {
        let g = synth_graph(60, 0.3, 3.0, 4, 30).unwrap();
        let opts = TrainOpts {
            epochs: 30,
            ..TrainOpts::default()
        };
        let (_, r1) = train_detector(&g, sub_spec(1), &opts, 9).unwrap();
        let (_, r2) = train_detector(&g, sub_spec(1), &opts, 9).unwrap();
        let (_, r3) = train_detector(&g, sub_spec(1), &opts, 10).unwrap();
        assert!(r1.epoch_loss.last().unwrap() < r1.epoch_loss.first().unwrap());
        assert_eq!(r1.epoch_loss, r2.epoch_loss, "same seed, same trajectory");
        assert_ne!(r1.epoch_loss, r3.epoch_loss, "different seed diverges");
    }

    #[test]
    fn huge_weight_decay_collapses_to_majority_class() {
        let g = synth_graph(60, 0.3, 3.0, 4, 31).unwrap();
        // lambda far above useful scale but with lr * lambda < 1 so the decay
        // contracts instead of oscillating
        let opts = TrainOpts {
            epochs: 40,
            lr: 1e-2,
            lambda: 10.0,
        };
        let (det, _) = train_detector(&g, sub_spec(1), &opts, 12).unwrap();
        // biases settle where the CE pull balances the decay; the weights
        // proper are crushed well below their init scale
        let norm: Real = det
            .params
            .iter()
            .filter(|p| !p.name.ends_with(".b"))
            .map(|p| p.value.l2_norm())
            .sum();
        assert!(norm < 1e-1, "weights should be crushed, norm {norm}");
        let pred = det.predict_graph(&g).unwrap();
        assert!(pred.labels.iter().all(|&l| l == Label::Human));
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let g = small_graph();
        let opts = TrainOpts {
            epochs: 5,
            ..TrainOpts::default()
        };
        let (det, _) = train_detector(&g, sub_spec(2), &opts, 13).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("det.ckpt");
        det.save(&path).unwrap();
        let back = Detector::load(&path).unwrap();
        assert_eq!(back.kind(), det.kind());
        assert_eq!(back.layer_count(), det.layer_count());
        let a = det.predict_graph(&g).unwrap();
        let b = back.predict_graph(&g).unwrap();
        assert_eq!(a.probs, b.probs, "bit-identical after round trip");
    }

    #[test]
    fn gcn_kinds_tie_relation_weights() {
        let g = small_graph();
        let spec = DetectorSpec {
            kind: DetectorKind::VictimGcn,
            layers: 2,
            d: 8,
        };
        let det = fresh(spec, &g, 14);
        for lay in &det.layers {
            assert_eq!(lay.w_f, lay.w_o);
        }
        // and the rgcn substitute does not
        let det2 = fresh(sub_spec(1), &g, 14);
        assert_ne!(det2.layers[0].w_f, det2.layers[0].w_o);
    }

    #[test]
    fn botrgcn_is_architecturally_distinct() {
        let g = small_graph();
        let spec = DetectorSpec {
            kind: DetectorKind::VictimBotRgcn,
            layers: 2,
            d: 8,
        };
        let det = fresh(spec, &g, 15);
        assert!(det.params.id_by_name("joint.w").is_some());
        assert!(det.params.id_by_name("enc.desc.w").is_none());
        let sub = fresh(sub_spec(2), &g, 15);
        let count = |d: &Detector| d.params.iter().count();
        assert_ne!(count(&det), count(&sub));
        // wrong layer count is rejected
        let bad = DetectorSpec {
            kind: DetectorKind::VictimBotRgcn,
            layers: 1,
            d: 8,
        };
        assert!(Detector::init(bad, g.ds(), NormStats::fit(&g).unwrap(), 0).is_err());
    }

    #[test]
    fn rejects_bad_dims_and_layer_counts() {
        let g = small_graph();
        let stats = NormStats::fit(&g).unwrap();
        let bad_d = DetectorSpec {
            kind: DetectorKind::SubstituteRgcn,
            layers: 1,
            d: 10,
        };
        assert!(matches!(
            Detector::init(bad_d, g.ds(), stats.clone(), 0),
            Err(Error::BadModelDim { d: 10 })
        ));
        for layers in [0, 4] {
            let bad_l = DetectorSpec {
                kind: DetectorKind::SubstituteRgcn,
                layers,
                d: 8,
            };
            assert!(matches!(
                Detector::init(bad_l, g.ds(), stats.clone(), 0),
                Err(Error::BadLayerCount { .. })
            ));
        }
    }

    #[test]
    fn predict_node_rejects_out_of_range() {
        let g = small_graph();
        let det = fresh(sub_spec(1), &g, 16);
        assert!(matches!(
            det.predict_node(&g, g.len()),
            Err(Error::NodeOutOfRange { .. })
        ));
        let (label, p_bot) = det.predict_node(&g, 3).unwrap();
        let pred = det.predict_graph(&g).unwrap();
        assert_eq!(label, pred.labels[3]);
        assert_eq!(p_bot, pred.probs.get(3, 1));
    }

    // --- incremental injection forward vs dense perturbed oracle ----------

    /// Full dense forward of the graph plus one injected node attached to the
    /// candidates with fractional follow weights. Plain loops, no sharing
    /// with the incremental implementation.
    fn dense_perturbed_target_logits(
        det: &Detector,
        g: &SocialGraph,
        target: usize,
        candidates: &[usize],
        x_inj: &Tensor,
        w: &[Real],
    ) -> (Real, Real) {
        let k = g.len();
        let x0 = det.embed_graph(&g).unwrap();
        let d = det.d();
        // rows 0..k original, row k injected
        let mut h: Vec<Vec<Real>> = (0..k).map(|v| x0.row(v).to_vec()).collect();
        h.push(x_inj.row(0).to_vec());
        let val = |id| det.params.value(id);
        for (l, lay) in det.layers.iter().enumerate() {
            if l > 0 {
                for row in h.iter_mut() {
                    for x in row.iter_mut() {
                        if *x < 0.0 {
                            *x *= LEAKY_SLOPE;
                        }
                    }
                }
            }
            let (ws, wf, wo) = (val(lay.w_self), val(lay.w_f), val(lay.w_o));
            let mut next = vec![vec![0.0; d]; k + 1];
            let matv = |m: &Tensor, x: &[Real]| -> Vec<Real> {
                let mut out = vec![0.0; m.cols()];
                for r in 0..m.rows() {
                    for c in 0..m.cols() {
                        out[c] += x[r] * m.get(r, c);
                    }
                }
                out
            };
            for v in 0..=k {
                let mut row = matv(ws, &h[v]);
                if v < k {
                    // friend term unchanged by the injection
                    let nf = g.neighbors(v, Relation::Friend);
                    if !nf.is_empty() {
                        let mut s = vec![0.0; d];
                        for &j in nf {
                            for c in 0..d {
                                s[c] += h[j][c];
                            }
                        }
                        for x in s.iter_mut() {
                            *x /= nf.len() as Real;
                        }
                        let t = matv(wf, &s);
                        for c in 0..d {
                            row[c] += t[c];
                        }
                    }
                    // follow term gains fractional mass when v is a candidate
                    let no = g.neighbors(v, Relation::Follow);
                    let wi = candidates
                        .iter()
                        .position(|&c| c == v)
                        .map(|i| w[i])
                        .unwrap_or(0.0);
                    if !no.is_empty() || wi > 0.0 {
                        let mut s = vec![0.0; d];
                        for &j in no {
                            for c in 0..d {
                                s[c] += h[j][c];
                            }
                        }
                        for c in 0..d {
                            s[c] += wi * h[k][c];
                        }
                        let denom = no.len() as Real + wi;
                        for x in s.iter_mut() {
                            *x /= denom;
                        }
                        let t = matv(wo, &s);
                        for c in 0..d {
                            row[c] += t[c];
                        }
                    }
                } else {
                    // injected row: only fractional follow edges to candidates
                    let mut s = vec![0.0; d];
                    let mut denom = 0.0;
                    for (i, &c) in candidates.iter().enumerate() {
                        denom += w[i];
                        for x in 0..d {
                            s[x] += w[i] * h[c][x];
                        }
                    }
                    for x in s.iter_mut() {
                        *x /= denom;
                    }
                    let t = matv(wo, &s);
                    for c in 0..d {
                        row[c] += t[c];
                    }
                }
                next[v] = row;
            }
            h = next;
        }
        let (hw, hb) = (val(det.head_w), val(det.head_b));
        let row = &h[target];
        let mut logit = [hb.get(0, 0), hb.get(0, 1)];
        for c in 0..2 {
            for r in 0..d {
                logit[c] += row[r] * hw.get(r, c);
            }
        }
        (logit[0], logit[1])
    }

    fn check_injection_against_oracle(layers: usize, weights: fn(usize) -> Vec<Real>) {
        let g = small_graph();
        let det = fresh(sub_spec(layers), &g, 40 + layers as u64);
        let clean = det.clean_pass(&g).unwrap();
        // pick a target with neighbors
        let target = (0..g.len())
            .find(|&v| !g.first_order_neighbors(v).is_empty())
            .unwrap();
        let candidates = g.first_order_neighbors(target);
        let w = weights(candidates.len());
        let x_inj = Tensor::from_vec(1, det.d(), (0..det.d()).map(|i| (i as Real * 0.37).sin()).collect());

        let mut tape = Tape::new();
        let consts = det.consts_on(&mut tape);
        let xv = tape.constant(x_inj.clone());
        let wv = tape.constant(Tensor::from_vec(1, w.len(), w.clone()));
        let got = det
            .injected_target_logits(&mut tape, &g, &clean, &consts, target, &candidates, xv, wv)
            .unwrap();
        let got = tape.value(got).clone();
        let (l0, l1) = dense_perturbed_target_logits(&det, &g, target, &candidates, &x_inj, &w);
        assert!(
            (got.get(0, 0) - l0).abs() < 1e-9 && (got.get(0, 1) - l1).abs() < 1e-9,
            "layers={layers}: got ({}, {}), want ({l0}, {l1})",
            got.get(0, 0),
            got.get(0, 1)
        );
    }

    #[test]
    fn soft_injection_matches_dense_oracle() {
        // normalized pseudo-random soft weights
        fn soft(n: usize) -> Vec<Real> {
            let raw: Vec<Real> = (0..n).map(|i| ((i * 7 + 3) % 5) as Real + 0.5).collect();
            let s: Real = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        }
        for layers in 1..=3 {
            check_injection_against_oracle(layers, soft);
        }
    }

    #[test]
    fn hard_injection_matches_dense_oracle() {
        fn hard(n: usize) -> Vec<Real> {
            let mut w = vec![0.0; n];
            w[n - 1] = 1.0;
            w
        }
        for layers in 1..=3 {
            check_injection_against_oracle(layers, hard);
        }
    }

    #[test]
    fn injection_fallback_attaches_to_target_itself() {
        // isolated bot: candidate set degenerates to the target
        use crate::graph::UserAttrs;
        let mut attrs = vec![UserAttrs::zeroed(2); 12];
        for (i, a) in attrs.iter_mut().enumerate() {
            a.numeric = [i as Real, 1.0, 1.0, 2.0, 3.0];
        }
        let mut labels = vec![Label::Human; 12];
        labels[11] = Label::Bot;
        let splits = vec![Some(Split::Train); 12];
        let edges = vec![(0, 1, Relation::Friend), (1, 2, Relation::Follow)];
        let g = SocialGraph::new(attrs, labels, splits, edges).unwrap();
        let det = fresh(sub_spec(2), &g, 50);
        let clean = det.clean_pass(&g).unwrap();
        let target = 11;
        let candidates = vec![target];
        let x_inj = Tensor::full(1, det.d(), 0.25);
        let mut tape = Tape::new();
        let consts = det.consts_on(&mut tape);
        let xv = tape.constant(x_inj.clone());
        let wv = tape.constant(Tensor::from_vec(1, 1, vec![1.0]));
        let got = det
            .injected_target_logits(&mut tape, &g, &clean, &consts, target, &candidates, xv, wv)
            .unwrap();
        let got = tape.value(got).clone();
        let (l0, l1) = dense_perturbed_target_logits(&det, &g, target, &candidates, &x_inj, &[1.0]);
        assert!((got.get(0, 0) - l0).abs() < 1e-9);
        assert!((got.get(0, 1) - l1).abs() < 1e-9);
        // and the attachment actually moved the logits off the clean values
        assert!((got.get(0, 1) - clean.logits.get(target, 1)).abs() > 1e-12);
    }
}
