//! Experiment orchestration on top of the attack stack: line-oriented
//! configs, seeded end-to-end runs, the two headline metrics, ablation and
//! transfer protocols, substitute parameter studies, and a gradient-check
//! sweep across every trainable piece.
//!
//! Reports are plain text rendered with fixed precision, so a rerun with the
//! same config file is byte-identical and diffs stay readable. Every stage
//! appends an audit line naming what it read; the attack stage lists only
//! the graph and the substitute, which is the black-box guarantee in
//! checkable form.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detector::{
    train_detector, Detector, DetectorKind, DetectorSpec, TrainOpts,
};
use crate::encoder::{batch_inputs, EncoderIds, NormStats};
use crate::error::{Error, Result};
use crate::graph::{induced_subgraph, synth_graph, Label, SocialGraph, Split};
use crate::injector::{
    attack_context, build_label_vector, candidate_set, generate_edge,
    generate_embedding, inject, neighbor_context, train_attack, AttackContext,
    AttackModel, AttackOpts, InjectMode, InjectionOutcome,
};
use crate::nd::{checksum, grad_check};
use crate::recovery::{
    materialize, train_inverters, ConstraintProfile, Inverter, InverterOpts,
};
use crate::{ParamSet, Real, Tape, Tensor};

/// FNV-1a over the base seed's little-endian bytes followed by the label.
/// Stage seeds must differ per stage and per seed, and must not collide with
/// the base seed itself; a keyed hash gives that without bookkeeping.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    for b in base.to_le_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    for &b in label.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

// ---------------------------------------------------------------------------
// config

/// Everything a run needs, with defaults matching the reference protocol.
/// Parsed from line-oriented `key = value` text; unknown keys are errors so
/// a typo cannot silently fall back to a default.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub nodes: usize,
    pub bot_fraction: Real,
    pub avg_degree: Real,
    pub text_dim: usize,
    pub model_dim: usize,
    pub substitute: DetectorKind,
    pub substitute_layers: usize,
    pub victims: Vec<DetectorKind>,
    pub victim_layers: usize,
    pub detector_epochs: usize,
    pub detector_lr: Real,
    pub weight_decay: Real,
    pub attack_epochs: usize,
    pub attack_patience: usize,
    pub attack_batch: usize,
    pub attack_lr: Real,
    pub inverter_epochs: usize,
    pub inverter_lr_hi: Real,
    pub inverter_lr_lo: Real,
    pub alpha: Real,
    pub profile: String,
    pub mode: InjectMode,
    pub seeds: Vec<u64>,
    pub max_targets: usize,
    pub pre_recovery_eval: bool,
    pub graph_file: Option<PathBuf>,
    pub transfer_size: usize,
    pub transfer_targets: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            nodes: 1000,
            bot_fraction: 0.3,
            avg_degree: 4.0,
            text_dim: 32,
            model_dim: 64,
            substitute: DetectorKind::SubstituteRgcn,
            // One relational layer is the upstream default for the substitute,
            // but under the second-order-neighbor attachment rule a 1-layer
            // substitute cannot see the injected node from the target at all
            // (zero attack gradient), so the shipped default is 2. The
            // layer-count study still sweeps 1..3.
            substitute_layers: 2,
            victims: vec![DetectorKind::VictimGcn, DetectorKind::VictimBotRgcn],
            victim_layers: 2,
            detector_epochs: 150,
            detector_lr: 1e-2,
            weight_decay: 5e-4,
            attack_epochs: 500,
            attack_patience: 5,
            attack_batch: 32,
            attack_lr: 1e-5,
            inverter_epochs: 300,
            inverter_lr_hi: 1e-2,
            inverter_lr_lo: 1e-5,
            alpha: 0.01,
            profile: "twibot22".into(),
            mode: InjectMode::Full,
            seeds: vec![1, 2, 3, 4, 5],
            max_targets: 0,
            pre_recovery_eval: false,
            graph_file: None,
            transfer_size: 150,
            transfer_targets: 3,
        }
    }
}

fn bad(key: &str, msg: impl Into<String>) -> Error {
    Error::BadConfigValue {
        key: key.into(),
        msg: msg.into(),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| bad(key, e.to_string()))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = match line.split_once('=') {
                Some((k, v)) => (k.trim(), v.trim()),
                None => return Err(Error::MalformedConfigLine { line: line_no }),
            };
            if key.is_empty() || value.is_empty() {
                return Err(Error::MalformedConfigLine { line: line_no });
            }
            cfg.set(key, value, line_no)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        match key {
            "nodes" => self.nodes = parse_num(key, value)?,
            "bot_fraction" => self.bot_fraction = parse_num(key, value)?,
            "avg_degree" => self.avg_degree = parse_num(key, value)?,
            "text_dim" => self.text_dim = parse_num(key, value)?,
            "model_dim" => self.model_dim = parse_num(key, value)?,
            "substitute" => {
                self.substitute = DetectorKind::from_token(value)
                    .ok_or_else(|| bad(key, format!("unknown kind `{value}`")))?;
            }
            "substitute_layers" => self.substitute_layers = parse_num(key, value)?,
            "victims" => {
                self.victims = value
                    .split(',')
                    .map(str::trim)
                    .map(|tok| {
                        DetectorKind::from_token(tok)
                            .ok_or_else(|| bad(key, format!("unknown kind `{tok}`")))
                    })
                    .collect::<Result<_>>()?;
            }
            "victim_layers" => self.victim_layers = parse_num(key, value)?,
            "detector_epochs" => self.detector_epochs = parse_num(key, value)?,
            "detector_lr" => self.detector_lr = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "attack_epochs" => self.attack_epochs = parse_num(key, value)?,
            "attack_patience" => self.attack_patience = parse_num(key, value)?,
            "attack_batch" => self.attack_batch = parse_num(key, value)?,
            "attack_lr" => self.attack_lr = parse_num(key, value)?,
            "inverter_epochs" => self.inverter_epochs = parse_num(key, value)?,
            "inverter_lr_hi" => self.inverter_lr_hi = parse_num(key, value)?,
            "inverter_lr_lo" => self.inverter_lr_lo = parse_num(key, value)?,
            "alpha" => self.alpha = parse_num(key, value)?,
            "profile" => {
                ConstraintProfile::from_token(value)
                    .ok_or_else(|| bad(key, format!("unknown profile `{value}`")))?;
                self.profile = value.into();
            }
            "mode" => {
                self.mode = InjectMode::from_token(value)
                    .ok_or_else(|| bad(key, format!("unknown mode `{value}`")))?;
            }
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(str::trim)
                    .map(|s| parse_num::<u64>(key, s))
                    .collect::<Result<_>>()?;
            }
            "max_targets" => self.max_targets = parse_num(key, value)?,
            "pre_recovery_eval" => self.pre_recovery_eval = parse_num(key, value)?,
            "graph_file" => self.graph_file = Some(PathBuf::from(value)),
            "transfer_size" => self.transfer_size = parse_num(key, value)?,
            "transfer_targets" => self.transfer_targets = parse_num(key, value)?,
            _ => {
                return Err(Error::UnknownConfigKey {
                    key: key.into(),
                    line,
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes < 10 {
            return Err(bad("nodes", "need at least 10"));
        }
        if !(self.bot_fraction > 0.0 && self.bot_fraction < 1.0) {
            return Err(bad("bot_fraction", "must lie strictly between 0 and 1"));
        }
        if self.model_dim == 0 || self.model_dim % 4 != 0 {
            return Err(bad("model_dim", "must be a positive multiple of 4"));
        }
        if self.text_dim == 0 {
            return Err(bad("text_dim", "must be positive"));
        }
        if !matches!(
            self.substitute,
            DetectorKind::SubstituteRgcn | DetectorKind::SubstituteGcn
        ) {
            return Err(bad("substitute", "must be a substitute-* kind"));
        }
        if self.victims.is_empty() {
            return Err(bad("victims", "need at least one victim"));
        }
        for &v in &self.victims {
            if !matches!(v, DetectorKind::VictimGcn | DetectorKind::VictimBotRgcn) {
                return Err(bad("victims", "must be victim-* kinds"));
            }
        }
        if self.victims.contains(&DetectorKind::VictimBotRgcn) && self.victim_layers != 2 {
            return Err(bad("victim_layers", "victim-botrgcn supports exactly 2"));
        }
        if !(1..=3).contains(&self.substitute_layers) {
            return Err(bad("substitute_layers", "supported range is 1..=3"));
        }
        if !(1..=3).contains(&self.victim_layers) {
            return Err(bad("victim_layers", "supported range is 1..=3"));
        }
        if self.seeds.is_empty() {
            return Err(bad("seeds", "need at least one seed"));
        }
        if self.transfer_size < 10 {
            return Err(bad("transfer_size", "need at least 10 nodes"));
        }
        if self.transfer_targets == 0 {
            return Err(bad("transfer_targets", "need at least one target subgraph"));
        }
        Ok(())
    }

    /// Canonical `key = value` text; `parse(render())` is the identity.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("nodes", self.nodes.to_string());
        kv("bot_fraction", self.bot_fraction.to_string());
        kv("avg_degree", self.avg_degree.to_string());
        kv("text_dim", self.text_dim.to_string());
        kv("model_dim", self.model_dim.to_string());
        kv("substitute", self.substitute.token().to_string());
        kv("substitute_layers", self.substitute_layers.to_string());
        kv(
            "victims",
            self.victims
                .iter()
                .map(|k| k.token())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("victim_layers", self.victim_layers.to_string());
        kv("detector_epochs", self.detector_epochs.to_string());
        kv("detector_lr", self.detector_lr.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("attack_epochs", self.attack_epochs.to_string());
        kv("attack_patience", self.attack_patience.to_string());
        kv("attack_batch", self.attack_batch.to_string());
        kv("attack_lr", self.attack_lr.to_string());
        kv("inverter_epochs", self.inverter_epochs.to_string());
        kv("inverter_lr_hi", self.inverter_lr_hi.to_string());
        kv("inverter_lr_lo", self.inverter_lr_lo.to_string());
        kv("alpha", self.alpha.to_string());
        kv("profile", self.profile.clone());
        kv("mode", self.mode.token().to_string());
        kv(
            "seeds",
            self.seeds
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("max_targets", self.max_targets.to_string());
        kv("pre_recovery_eval", self.pre_recovery_eval.to_string());
        if let Some(p) = &self.graph_file {
            kv("graph_file", p.display().to_string());
        }
        kv("transfer_size", self.transfer_size.to_string());
        kv("transfer_targets", self.transfer_targets.to_string());
        s
    }

    pub fn detector_opts(&self) -> TrainOpts {
        TrainOpts {
            epochs: self.detector_epochs,
            lr: self.detector_lr,
            lambda: self.weight_decay,
        }
    }

    pub fn attack_opts(&self) -> AttackOpts {
        AttackOpts {
            max_epochs: self.attack_epochs,
            patience: self.attack_patience,
            batch: self.attack_batch,
            lr: self.attack_lr,
        }
    }

    pub fn inverter_opts(&self) -> InverterOpts {
        InverterOpts {
            epochs: self.inverter_epochs,
            lr_hi: self.inverter_lr_hi,
            lr_lo: self.inverter_lr_lo,
        }
    }

    pub fn constraint_profile(&self) -> ConstraintProfile {
        // token validated at parse time; default token is always known
        ConstraintProfile::from_token(&self.profile)
            .unwrap_or_else(ConstraintProfile::twibot22)
    }
}

// ---------------------------------------------------------------------------
// metrics

/// The two headline numbers over one target set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    /// Fraction of target bots the victim labels Human in their perturbed
    /// graph.
    pub attack_success_rate: Real,
    /// Fraction of injected nodes the victim labels Bot in the same graphs.
    pub new_node_bot_rate: Real,
    pub n_targets: usize,
}

/// One perturbed graph per target; the injected node is always the last id.
pub struct EvalCase {
    pub target: usize,
    pub g_prime: SocialGraph,
}

/// (label of target, label of injected node) pairs -> metrics. Split out of
/// `evaluate` so the counting rule is testable without trained models.
fn tally(pairs: &[(Label, Label)]) -> Metrics {
    let n = pairs.len();
    let fooled = pairs.iter().filter(|(t, _)| *t == Label::Human).count();
    let caught = pairs.iter().filter(|(_, i)| *i == Label::Bot).count();
    Metrics {
        attack_success_rate: fooled as Real / n as Real,
        new_node_bot_rate: caught as Real / n as Real,
        n_targets: n,
    }
}

/// Full-graph verdicts on each perturbed graph.
pub fn evaluate(victim: &Detector, cases: &[EvalCase]) -> Result<Metrics> {
    if cases.is_empty() {
        return Err(Error::NoTrainingData {
            what: "evaluation cases".into(),
        });
    }
    let mut pairs = Vec::with_capacity(cases.len());
    for case in cases {
        let pred = victim.predict_graph(&case.g_prime)?;
        let injected = case.g_prime.len() - 1;
        pairs.push((pred.labels[case.target], pred.labels[injected]));
    }
    Ok(tally(&pairs))
}

/// Embedding-space variant: the generated vector is attached directly via the
/// victim's incremental forward, skipping recovery. Isolates how much the
/// round trip through raw attributes costs the attack.
pub fn evaluate_embedding(
    victim: &Detector,
    g: &SocialGraph,
    outcomes: &[InjectionOutcome],
) -> Result<Metrics> {
    if outcomes.is_empty() {
        return Err(Error::NoTrainingData {
            what: "evaluation cases".into(),
        });
    }
    let clean = victim.clean_pass(g)?;
    let mut pairs = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        if o.x_inj.shape() != (1, victim.d()) {
            return Err(Error::Mismatch {
                what: "injected embedding width".into(),
                expected: format!("(1, {})", victim.d()),
                found: format!("{:?}", o.x_inj.shape()),
            });
        }
        let pick = o
            .candidates
            .iter()
            .position(|&c| c == o.attach)
            .ok_or_else(|| Error::Mismatch {
                what: "attachment node".into(),
                expected: "a member of the candidate set".into(),
                found: format!("{}", o.attach),
            })?;
        let mut tape = Tape::new();
        let consts = victim.consts_on(&mut tape);
        let xv = tape.constant(o.x_inj.clone());
        let mut onehot = vec![0.0; o.candidates.len()];
        onehot[pick] = 1.0;
        let wv = tape.constant(Tensor::from_vec(1, o.candidates.len(), onehot));
        let (tl, il) = victim.injected_pair_logits(
            &mut tape,
            g,
            &clean,
            &consts,
            o.target,
            &o.candidates,
            xv,
            wv,
        )?;
        let verdict = |t: &Tensor| {
            if t.get(0, 1) > t.get(0, 0) {
                Label::Bot
            } else {
                Label::Human
            }
        };
        let tl = tape.value(tl).clone();
        let il = tape.value(il).clone();
        pairs.push((verdict(&tl), verdict(&il)));
    }
    Ok(tally(&pairs))
}

/// Fraction of targets the detector already labels Human on the clean graph.
/// The attack has to beat this floor to mean anything.
fn clean_misclass(det: &Detector, g: &SocialGraph, targets: &[usize]) -> Result<Real> {
    let pred = det.predict_graph(g)?;
    let n = targets
        .iter()
        .filter(|&&t| pred.labels[t] == Label::Human)
        .count();
    Ok(n as Real / targets.len() as Real)
}

fn mean_std(xs: &[Real]) -> (Real, Real) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as Real;
    let mean = xs.iter().sum::<Real>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<Real>() / (n - 1.0);
    (mean, var.sqrt())
}

// ---------------------------------------------------------------------------
// per-seed pipeline

pub type VictimEntry = (DetectorKind, Detector, u64);

/// Everything mode-independent for one seed: ablations and parameter studies
/// reuse these and only redo injection and evaluation.
pub struct SeedArtifacts {
    pub g: SocialGraph,
    pub sub: Detector,
    pub sub_val_acc: Real,
    pub attack: AttackModel,
    pub attack_epochs: usize,
    pub attack_best_val: Real,
    pub ctx: AttackContext,
    pub num_inv: Inverter,
    pub cat_inv: Inverter,
    pub targets: Vec<usize>,
    pub victims: Vec<VictimEntry>,
    pub audit: Vec<String>,
}

fn at_stage<T>(stage: &'static str, seed: u64, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage,
        seed,
        source: Box::new(e),
    })
}

fn build_graph(cfg: &ExperimentConfig, seed: u64) -> Result<SocialGraph> {
    match &cfg.graph_file {
        Some(p) => SocialGraph::load(p),
        None => synth_graph(
            cfg.nodes,
            cfg.bot_fraction,
            cfg.avg_degree,
            cfg.text_dim,
            seed,
        ),
    }
}

fn target_set(g: &SocialGraph, cap: usize) -> Result<Vec<usize>> {
    let mut targets = g.bots_in(Split::Test);
    if targets.is_empty() {
        return Err(Error::NoTrainingData {
            what: "bot targets in the test mask".into(),
        });
    }
    if cap > 0 && targets.len() > cap {
        targets.truncate(cap);
    }
    Ok(targets)
}

/// Victims never see the attack; they are trained from the clean graph only.
pub fn train_victims(
    cfg: &ExperimentConfig,
    g: &SocialGraph,
    seed: u64,
) -> Result<Vec<VictimEntry>> {
    cfg.victims
        .iter()
        .map(|&kind| {
            let spec = DetectorSpec {
                kind,
                layers: cfg.victim_layers,
                d: cfg.model_dim,
            };
            let vseed = derive_seed(seed, &format!("victim.{}", kind.token()));
            let (det, _) = train_detector(g, spec, &cfg.detector_opts(), vseed)?;
            let ck = checksum(&det.checkpoint().render());
            Ok((kind, det, ck))
        })
        .collect()
}

/// Runs graph, substitute, attack, and recovery training for one seed, then
/// the victims. Stage order matters for the audit: by the time a victim
/// exists, every attack-side artifact is already frozen.
///
/// `pre` supplies an already-built graph and victim set (parameter studies
/// share victims across cells; transfer brings its own subgraphs).
pub fn seed_artifacts(
    cfg: &ExperimentConfig,
    seed: u64,
    sub_kind: DetectorKind,
    sub_layers: usize,
    pre: Option<(SocialGraph, Vec<VictimEntry>)>,
) -> Result<SeedArtifacts> {
    let mut audit = Vec::new();
    let (g, shared_victims) = match pre {
        Some((g, v)) => {
            audit.push("stage=graph reads=shared".to_string());
            (g, Some(v))
        }
        None => {
            let g = at_stage("graph", seed, build_graph(cfg, seed))?;
            audit.push(match &cfg.graph_file {
                Some(p) => format!("stage=graph reads=file:{}", p.display()),
                None => "stage=graph reads=config".to_string(),
            });
            (g, None)
        }
    };

    let spec = DetectorSpec {
        kind: sub_kind,
        layers: sub_layers,
        d: cfg.model_dim,
    };
    let (sub, sub_report) = at_stage(
        "substitute",
        seed,
        train_detector(&g, spec, &cfg.detector_opts(), derive_seed(seed, "substitute")),
    )?;
    audit.push("stage=substitute reads=graph".to_string());

    let targets = at_stage("targets", seed, target_set(&g, cfg.max_targets))?;

    // The attack nets fit on the train-mask bots; the evaluated targets stay
    // held out from every trained component.
    let attack_train = g.bots_in(Split::Train);
    let (attack, attack_report) = at_stage(
        "attack",
        seed,
        train_attack(
            &sub,
            &g,
            &attack_train,
            &cfg.attack_opts(),
            derive_seed(seed, "attack"),
        ),
    )?;
    audit.push("stage=attack reads=graph,substitute".to_string());

    let (num_inv, cat_inv, _) = at_stage(
        "recover",
        seed,
        train_inverters(
            &sub,
            &g,
            cfg.alpha,
            &cfg.inverter_opts(),
            derive_seed(seed, "recover"),
        ),
    )?;
    audit.push("stage=recover reads=graph,substitute".to_string());

    let victims = match shared_victims {
        Some(v) => v,
        None => at_stage("victims", seed, train_victims(cfg, &g, seed))?,
    };
    audit.push("stage=victims reads=graph".to_string());

    let ctx = at_stage("attack", seed, attack_context(&sub, &g))?;

    Ok(SeedArtifacts {
        g,
        sub,
        sub_val_acc: sub_report.final_val_acc(),
        attack,
        attack_epochs: attack_report.epoch_loss.len(),
        attack_best_val: attack_report.best_val_rate,
        ctx,
        num_inv,
        cat_inv,
        targets,
        victims,
        audit,
    })
}

/// Per-victim result row for one seed and mode.
#[derive(Clone, Debug)]
pub struct VictimRow {
    pub victim: DetectorKind,
    pub baseline: Real,
    pub metrics: Metrics,
}

/// Injection, recovery materialization, and evaluation under one mode.
pub fn eval_mode(
    cfg: &ExperimentConfig,
    art: &SeedArtifacts,
    mode: InjectMode,
    seed: u64,
) -> Result<(Vec<VictimRow>, Vec<String>)> {
    let mut audit = Vec::new();
    let mut outcomes = Vec::with_capacity(art.targets.len());
    for &t in &art.targets {
        let o = at_stage(
            "inject",
            seed,
            inject(
                &art.g,
                t,
                &art.attack,
                &art.sub,
                &art.ctx,
                mode,
                derive_seed(seed, &format!("inject.{t}")),
            ),
        )?;
        outcomes.push(o);
    }
    audit.push(format!(
        "stage=inject mode={} reads=graph,substitute,attack",
        mode.token()
    ));

    let cases = if cfg.pre_recovery_eval {
        None
    } else {
        let profile = cfg.constraint_profile();
        let mut cases = Vec::with_capacity(outcomes.len());
        for o in &outcomes {
            let m = at_stage(
                "materialize",
                seed,
                materialize(o, &art.sub, &art.num_inv, &art.cat_inv, &profile),
            )?;
            if !profile.satisfied(&m.node.numeric) {
                return Err(Error::Mismatch {
                    what: format!("constraints for target {}", o.target),
                    expected: format!("attributes inside profile {}", profile.token()),
                    found: format!("{:?}", m.node.numeric),
                });
            }
            cases.push(EvalCase {
                target: o.target,
                g_prime: m.g_prime,
            });
        }
        audit.push(format!(
            "stage=materialize mode={} reads=inject,recover",
            mode.token()
        ));
        Some(cases)
    };

    let mut rows = Vec::with_capacity(art.victims.len());
    for (kind, det, _) in &art.victims {
        let baseline = at_stage("evaluate", seed, clean_misclass(det, &art.g, &art.targets))?;
        let metrics = at_stage(
            "evaluate",
            seed,
            match &cases {
                Some(cs) => evaluate(det, cs),
                None => evaluate_embedding(det, &art.g, &outcomes),
            },
        )?;
        audit.push(format!(
            "stage=evaluate mode={} victim={} reads=victims,{}",
            mode.token(),
            kind.token(),
            if cases.is_some() { "materialize" } else { "inject" },
        ));
        rows.push(VictimRow {
            victim: *kind,
            baseline,
            metrics,
        });
    }
    Ok((rows, audit))
}

// ---------------------------------------------------------------------------
// reports

#[derive(Clone, Debug)]
pub struct SeedReport {
    pub seed: u64,
    pub substitute_val_acc: Real,
    pub attack_epochs: usize,
    pub attack_best_val: Real,
    pub n_targets: usize,
    pub rows: Vec<VictimRow>,
    pub victim_ckpts: Vec<(DetectorKind, u64)>,
    pub audit: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct AggregateRow {
    pub victim: DetectorKind,
    pub baseline: (Real, Real),
    pub asr: (Real, Real),
    pub bot_rate: (Real, Real),
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedReport>,
    pub aggregates: Vec<AggregateRow>,
}

fn aggregate(victims: &[DetectorKind], seeds: &[SeedReport]) -> Vec<AggregateRow> {
    victims
        .iter()
        .enumerate()
        .map(|(i, &victim)| {
            let pull = |f: &dyn Fn(&VictimRow) -> Real| -> Vec<Real> {
                seeds.iter().map(|s| f(&s.rows[i])).collect()
            };
            AggregateRow {
                victim,
                baseline: mean_std(&pull(&|r| r.baseline)),
                asr: mean_std(&pull(&|r| r.metrics.attack_success_rate)),
                bot_rate: mean_std(&pull(&|r| r.metrics.new_node_bot_rate)),
            }
        })
        .collect()
}

fn push_seed_lines(out: &mut String, s: &SeedReport) {
    out.push_str(&format!(
        "seed {} substitute_val_acc {:.6} attack_epochs {} attack_val {:.6} targets {}\n",
        s.seed, s.substitute_val_acc, s.attack_epochs, s.attack_best_val, s.n_targets
    ));
    for r in &s.rows {
        out.push_str(&format!(
            "seed {} victim {} baseline {:.6} asr {:.6} bot_rate {:.6}\n",
            s.seed,
            r.victim.token(),
            r.baseline,
            r.metrics.attack_success_rate,
            r.metrics.new_node_bot_rate
        ));
    }
}

fn push_aggregates(out: &mut String, rows: &[AggregateRow]) {
    for a in rows {
        out.push_str(&format!(
            "victim {} baseline {:.6} ± {:.6} asr {:.6} ± {:.6} bot_rate {:.6} ± {:.6}\n",
            a.victim.token(),
            a.baseline.0,
            a.baseline.1,
            a.asr.0,
            a.asr.1,
            a.bot_rate.0,
            a.bot_rate.1
        ));
    }
}

fn push_audit(out: &mut String, seeds: &[SeedReport]) {
    for s in seeds {
        for line in &s.audit {
            out.push_str(&format!("seed {} {}\n", s.seed, line));
        }
    }
}

impl ExperimentReport {
    pub fn render(&self) -> String {
        let mut out = String::from("# experiment\n## config\n");
        out.push_str(&self.config.render());
        out.push_str("## seeds\n");
        for s in &self.seeds {
            push_seed_lines(&mut out, s);
        }
        out.push_str("## audit\n");
        push_audit(&mut out, &self.seeds);
        out.push_str("## aggregate\n");
        push_aggregates(&mut out, &self.aggregates);
        out
    }
}

fn seed_report(art: &SeedArtifacts, seed: u64, rows: Vec<VictimRow>, extra_audit: Vec<String>) -> SeedReport {
    let mut audit = art.audit.clone();
    audit.extend(extra_audit);
    SeedReport {
        seed,
        substitute_val_acc: art.sub_val_acc,
        attack_epochs: art.attack_epochs,
        attack_best_val: art.attack_best_val,
        n_targets: art.targets.len(),
        rows,
        victim_ckpts: art.victims.iter().map(|(k, _, c)| (*k, *c)).collect(),
        audit,
    }
}

/// One full run: every seed through the whole pipeline under `cfg.mode`,
/// then sample mean and std across seeds.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let art = seed_artifacts(cfg, seed, cfg.substitute, cfg.substitute_layers, None)?;
        let (rows, audit) = eval_mode(cfg, &art, cfg.mode, seed)?;
        seeds.push(seed_report(&art, seed, rows, audit));
    }
    let aggregates = aggregate(&cfg.victims, &seeds);
    Ok(ExperimentReport {
        config: cfg.clone(),
        seeds,
        aggregates,
    })
}

// ---------------------------------------------------------------------------
// ablation

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    /// Replace the generated embedding with the target's own.
    Embedding,
    /// Replace the scored attachment with a uniform random candidate.
    Edge,
}

impl AblationAxis {
    pub fn token(self) -> &'static str {
        match self {
            AblationAxis::Embedding => "embedding",
            AblationAxis::Edge => "edge",
        }
    }

    pub fn from_token(tok: &str) -> Option<Self> {
        match tok {
            "embedding" => Some(AblationAxis::Embedding),
            "edge" => Some(AblationAxis::Edge),
            _ => None,
        }
    }

    fn mode(self) -> InjectMode {
        match self {
            AblationAxis::Embedding => InjectMode::AssignEmbedding,
            AblationAxis::Edge => InjectMode::RandomEdge,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DeltaRow {
    pub victim: DetectorKind,
    pub asr_delta: Real,
    pub bot_rate_delta: Real,
}

#[derive(Debug)]
pub struct AblationReport {
    pub axis: AblationAxis,
    pub full: ExperimentReport,
    pub ablated: ExperimentReport,
    /// Full-mode aggregate minus ablated aggregate, per victim.
    pub deltas: Vec<DeltaRow>,
}

/// Shares each seed's trained artifacts between the two modes; only
/// injection, materialization, and evaluation run twice.
pub fn run_ablation(cfg: &ExperimentConfig, axis: AblationAxis) -> Result<AblationReport> {
    cfg.validate()?;
    let ab_mode = axis.mode();
    let mut full_seeds = Vec::with_capacity(cfg.seeds.len());
    let mut ab_seeds = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let art = seed_artifacts(cfg, seed, cfg.substitute, cfg.substitute_layers, None)?;
        let (rows, audit) = eval_mode(cfg, &art, InjectMode::Full, seed)?;
        full_seeds.push(seed_report(&art, seed, rows, audit));
        let (rows, audit) = eval_mode(cfg, &art, ab_mode, seed)?;
        ab_seeds.push(seed_report(&art, seed, rows, audit));
    }
    let full_agg = aggregate(&cfg.victims, &full_seeds);
    let ab_agg = aggregate(&cfg.victims, &ab_seeds);
    let deltas = full_agg
        .iter()
        .zip(&ab_agg)
        .map(|(f, a)| DeltaRow {
            victim: f.victim,
            asr_delta: f.asr.0 - a.asr.0,
            bot_rate_delta: f.bot_rate.0 - a.bot_rate.0,
        })
        .collect();
    let mut full_cfg = cfg.clone();
    full_cfg.mode = InjectMode::Full;
    let mut ab_cfg = cfg.clone();
    ab_cfg.mode = ab_mode;
    Ok(AblationReport {
        axis,
        full: ExperimentReport {
            config: full_cfg,
            seeds: full_seeds,
            aggregates: full_agg,
        },
        ablated: ExperimentReport {
            config: ab_cfg,
            seeds: ab_seeds,
            aggregates: ab_agg,
        },
        deltas,
    })
}

impl AblationReport {
    pub fn render(&self) -> String {
        let mut out = format!("# ablation axis={}\n", self.axis.token());
        out.push_str("## full\n");
        for s in &self.full.seeds {
            push_seed_lines(&mut out, s);
        }
        push_aggregates(&mut out, &self.full.aggregates);
        out.push_str(&format!("## ablated mode={}\n", self.axis.mode().token()));
        for s in &self.ablated.seeds {
            push_seed_lines(&mut out, s);
        }
        push_aggregates(&mut out, &self.ablated.aggregates);
        out.push_str("## delta full-minus-ablated\n");
        for d in &self.deltas {
            out.push_str(&format!(
                "victim {} asr_delta {:+.6} bot_rate_delta {:+.6}\n",
                d.victim.token(),
                d.asr_delta,
                d.bot_rate_delta
            ));
        }
        out.push_str("## audit\n");
        push_audit(&mut out, &self.full.seeds);
        push_audit(&mut out, &self.ablated.seeds);
        out
    }
}

// ---------------------------------------------------------------------------
// transfer

#[derive(Clone, Debug)]
pub struct TransferRow {
    pub subgraph: String,
    pub victim: DetectorKind,
    pub baseline: Real,
    pub metrics: Metrics,
    /// Checksum of the attack checkpoint as used for this subgraph; equal
    /// values across rows prove the model was reused bit-exactly.
    pub attack_checksum: u64,
}

#[derive(Debug)]
pub struct TransferReport {
    pub config: ExperimentConfig,
    pub source_nodes: usize,
    pub rows: Vec<TransferRow>,
    pub audit: Vec<String>,
}

/// Trains the attack once on the subgraph induced by `source_ids`, then
/// injects into each target subgraph using that subgraph's own substitute
/// context and inverters. Uses the first configured seed; transfer compares
/// subgraphs, not seeds.
pub fn run_transfer(
    cfg: &ExperimentConfig,
    g: &SocialGraph,
    source_ids: &[usize],
    target_id_sets: &[Vec<usize>],
) -> Result<TransferReport> {
    cfg.validate()?;
    let src: BTreeSet<usize> = source_ids.iter().copied().collect();
    for (i, t) in target_id_sets.iter().enumerate() {
        let overlap: Vec<usize> = t.iter().copied().filter(|v| src.contains(v)).collect();
        if !overlap.is_empty() {
            return Err(Error::Transfer {
                msg: format!(
                    "target subgraph {} shares {} node(s) with the source (first: {})",
                    i + 1,
                    overlap.len(),
                    overlap[0]
                ),
            });
        }
    }
    let seed = cfg.seeds[0];
    let mut audit = Vec::new();

    let gs = induced_subgraph(g, source_ids, derive_seed(seed, "transfer.source"))?;
    audit.push(format!("subgraph=same stage=graph reads=parent({})", g.len()));
    let src_victims = train_victims(cfg, &gs, derive_seed(seed, "transfer.same"))?;
    let art = seed_artifacts(
        cfg,
        seed,
        cfg.substitute,
        cfg.substitute_layers,
        Some((gs, src_victims)),
    )?;
    for line in &art.audit {
        audit.push(format!("subgraph=same {line}"));
    }

    let mut rows = Vec::new();
    let (same_rows, same_audit) = eval_mode(cfg, &art, cfg.mode, seed)?;
    for line in &same_audit {
        audit.push(format!("subgraph=same {line}"));
    }
    for r in same_rows {
        rows.push(TransferRow {
            subgraph: "same".into(),
            victim: r.victim,
            baseline: r.baseline,
            metrics: r.metrics,
            attack_checksum: checksum(&art.attack.checkpoint().render()),
        });
    }

    for (i, ids) in target_id_sets.iter().enumerate() {
        let name = format!("other-{}", i + 1);
        let tseed = derive_seed(seed, &format!("transfer.target.{i}"));
        let gt = induced_subgraph(g, ids, tseed)?;
        audit.push(format!("subgraph={name} stage=graph reads=parent({})", g.len()));

        // target side trains its own substitute, inverters, and victims,
        // but reuses the source-trained attack model untouched
        let spec = DetectorSpec {
            kind: cfg.substitute,
            layers: cfg.substitute_layers,
            d: cfg.model_dim,
        };
        let (sub_t, _) = at_stage(
            "substitute",
            tseed,
            train_detector(&gt, spec, &cfg.detector_opts(), derive_seed(tseed, "substitute")),
        )?;
        audit.push(format!("subgraph={name} stage=substitute reads=graph"));
        let (num_inv, cat_inv, _) = at_stage(
            "recover",
            tseed,
            train_inverters(
                &sub_t,
                &gt,
                cfg.alpha,
                &cfg.inverter_opts(),
                derive_seed(tseed, "recover"),
            ),
        )?;
        audit.push(format!("subgraph={name} stage=recover reads=graph,substitute"));
        let victims = at_stage(
            "victims",
            tseed,
            train_victims(cfg, &gt, derive_seed(tseed, "victims")),
        )?;
        audit.push(format!("subgraph={name} stage=victims reads=graph"));
        let ctx = attack_context(&sub_t, &gt)?;
        let targets = at_stage("targets", tseed, target_set(&gt, cfg.max_targets))?;

        let t_art = SeedArtifacts {
            g: gt,
            sub: sub_t,
            sub_val_acc: 0.0,
            attack: art.attack.clone(),
            attack_epochs: art.attack_epochs,
            attack_best_val: art.attack_best_val,
            ctx,
            num_inv,
            cat_inv,
            targets,
            victims,
            audit: Vec::new(),
        };
        let (t_rows, t_audit) = eval_mode(cfg, &t_art, cfg.mode, tseed)?;
        for line in &t_audit {
            audit.push(format!("subgraph={name} {line} attack=source"));
        }
        for r in t_rows {
            rows.push(TransferRow {
                subgraph: name.clone(),
                victim: r.victim,
                baseline: r.baseline,
                metrics: r.metrics,
                attack_checksum: checksum(&t_art.attack.checkpoint().render()),
            });
        }
    }

    Ok(TransferReport {
        config: cfg.clone(),
        source_nodes: source_ids.len(),
        rows,
        audit,
    })
}

impl TransferReport {
    pub fn render(&self) -> String {
        let mut out = String::from("# transfer\n## config\n");
        out.push_str(&self.config.render());
        out.push_str(&format!("source_nodes = {}\n## rows\n", self.source_nodes));
        for r in &self.rows {
            out.push_str(&format!(
                "subgraph {} victim {} baseline {:.6} asr {:.6} bot_rate {:.6} targets {} attack_ckpt {:016x}\n",
                r.subgraph,
                r.victim.token(),
                r.baseline,
                r.metrics.attack_success_rate,
                r.metrics.new_node_bot_rate,
                r.metrics.n_targets,
                r.attack_checksum
            ));
        }
        out.push_str("## audit\n");
        for line in &self.audit {
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------------------
// parameter study

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StudyAxis {
    SubstituteKind,
    LayerCount,
}

impl StudyAxis {
    pub fn token(self) -> &'static str {
        match self {
            StudyAxis::SubstituteKind => "substitute-kind",
            StudyAxis::LayerCount => "layer-count",
        }
    }

    pub fn from_token(tok: &str) -> Option<Self> {
        match tok {
            "substitute-kind" => Some(StudyAxis::SubstituteKind),
            "layer-count" => Some(StudyAxis::LayerCount),
            _ => None,
        }
    }
}

#[derive(Debug)]
pub struct StudyCell {
    pub name: String,
    pub seeds: Vec<SeedReport>,
    pub aggregates: Vec<AggregateRow>,
}

#[derive(Debug)]
pub struct ParamStudyReport {
    pub config: ExperimentConfig,
    pub axis: StudyAxis,
    pub cells: Vec<StudyCell>,
}

/// Sweeps the substitute configuration while holding everything else fixed.
/// Victims are trained once per seed and shared by every cell, so metric
/// differences between cells can only come from the substitute side; the
/// per-seed victim checksums in each cell prove the sharing.
pub fn run_param_study(cfg: &ExperimentConfig, axis: StudyAxis) -> Result<ParamStudyReport> {
    cfg.validate()?;
    let cells_spec: Vec<(String, DetectorKind, usize)> = match axis {
        StudyAxis::SubstituteKind => [
            DetectorKind::SubstituteRgcn,
            DetectorKind::SubstituteGcn,
        ]
        .iter()
        .map(|&k| (k.token().to_string(), k, cfg.substitute_layers))
        .collect(),
        StudyAxis::LayerCount => (1..=3)
            .map(|l| (format!("layers-{l}"), cfg.substitute, l))
            .collect(),
    };

    let mut cell_seed_reports: Vec<Vec<SeedReport>> =
        (0..cells_spec.len()).map(|_| Vec::new()).collect();
    for &seed in &cfg.seeds {
        let g = at_stage("graph", seed, build_graph(cfg, seed))?;
        let victims = at_stage("victims", seed, train_victims(cfg, &g, seed))?;
        for (ci, (_, kind, layers)) in cells_spec.iter().enumerate() {
            let art = seed_artifacts(
                cfg,
                seed,
                *kind,
                *layers,
                Some((g.clone(), victims.clone())),
            )?;
            let (rows, audit) = eval_mode(cfg, &art, cfg.mode, seed)?;
            cell_seed_reports[ci].push(seed_report(&art, seed, rows, audit));
        }
    }

    let cells = cells_spec
        .into_iter()
        .zip(cell_seed_reports)
        .map(|((name, _, _), seeds)| {
            let aggregates = aggregate(&cfg.victims, &seeds);
            StudyCell {
                name,
                seeds,
                aggregates,
            }
        })
        .collect();
    Ok(ParamStudyReport {
        config: cfg.clone(),
        axis,
        cells,
    })
}

impl ParamStudyReport {
    pub fn render(&self) -> String {
        let mut out = format!("# param-study axis={}\n## config\n", self.axis.token());
        out.push_str(&self.config.render());
        for cell in &self.cells {
            out.push_str(&format!("## cell {}\n", cell.name));
            for s in &cell.seeds {
                push_seed_lines(&mut out, s);
                for (kind, ck) in &s.victim_ckpts {
                    out.push_str(&format!(
                        "seed {} victim {} ckpt {:016x}\n",
                        s.seed,
                        kind.token(),
                        ck
                    ));
                }
            }
            push_aggregates(&mut out, &cell.aggregates);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// gradient checks

#[derive(Clone, Debug)]
pub struct GradRow {
    pub model: String,
    pub worst: Real,
}

// 1e-6 keeps the central-difference window narrow enough that the leaky
// hinges are effectively never straddled, while f64 still leaves the
// rounding-noise floor near 1e-9 relative.
const GC_EPS: Real = 1e-6;
const GC_COORDS: usize = 128;

fn copy_values(dst: &mut ParamSet, src: &ParamSet) {
    for id in src.ids() {
        dst.set_value(id, src.value(id).clone());
    }
}

/// Finite-difference sweep over every trainable component at toy scale:
/// the encoder, each substitute depth, the joint-projection victim, the
/// attack nets through the full soft-injection forward, and both inverters.
/// Smooth losses are used throughout (squared sums or cross-entropy), so
/// the only kinks finite differences can land on are the leaky rectifier
/// hinges, which the fixed seed keeps clear of.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<GradRow>> {
    let ds = 6;
    let d = 8;
    let g = synth_graph(30, 0.3, 3.0, ds, derive_seed(seed, "gradcheck.graph"))?;
    let stats = NormStats::fit(&g)?;
    let train = g.split_nodes(Split::Train);
    let labels: Vec<usize> = train.iter().map(|&v| g.label(v).class()).collect();
    let mut rows = Vec::new();

    // encoder alone: squared output sum
    {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "gradcheck.encoder"));
        let enc = EncoderIds::init(&mut ps, ds, d, &mut rng)?;
        let inp = batch_inputs(&g, &stats);
        let worst = grad_check(
            &mut ps,
            &mut |ps, tape| {
                let x = enc.encode(tape, ps, &inp)?;
                let sq = tape.mul(x, x)?;
                Ok(tape.sum(sq))
            },
            GC_EPS,
            GC_COORDS,
            derive_seed(seed, "gradcheck.encoder.coords"),
        )?;
        rows.push(GradRow {
            model: "encoder".into(),
            worst,
        });
    }

    // detectors: cross-entropy on the train mask
    let mut detector_row = |kind: DetectorKind, layers: usize, name: String| -> Result<()> {
        let spec = DetectorSpec {
            kind,
            layers,
            d,
        };
        let mut det = Detector::init(
            spec,
            ds,
            stats.clone(),
            derive_seed(seed, &format!("gradcheck.{name}")),
        )?;
        let mut outer = det.params().clone();
        let worst = grad_check(
            &mut outer,
            &mut |ps, tape| {
                copy_values(det.params_mut(), ps);
                let logits = det.forward_tape(tape, &g)?;
                let sel = tape.select_rows(logits, &train)?;
                tape.softmax_ce(sel, &labels)
            },
            GC_EPS,
            GC_COORDS,
            derive_seed(seed, &format!("gradcheck.{name}.coords")),
        )?;
        rows.push(GradRow { model: name, worst });
        Ok(())
    };
    for layers in 1..=3 {
        detector_row(
            DetectorKind::SubstituteRgcn,
            layers,
            format!("substitute-rgcn-l{layers}"),
        )?;
    }
    detector_row(DetectorKind::VictimBotRgcn, 2, "victim-botrgcn".into())?;

    // attack nets: the full soft forward down to the target margin, with the
    // substitute frozen as constants
    {
        let spec = DetectorSpec {
            kind: DetectorKind::SubstituteRgcn,
            layers: 2,
            d,
        };
        let sub = Detector::init(spec, ds, stats.clone(), derive_seed(seed, "gradcheck.sub"))?;
        let ctx = attack_context(&sub, &g)?;
        let b_t = (0..g.len())
            .find(|&v| g.label(v) == Label::Bot)
            .expect("synthetic graph always has bots");
        let cands = candidate_set(&g, b_t);
        let mut attack = AttackModel::init(d, derive_seed(seed, "gradcheck.attack"))?;
        let mut outer = attack.params.clone();
        let x_bt_t = ctx.x.row_tensor(b_t);
        let x_n_t = neighbor_context(&g, &ctx.x, b_t);
        let cand_cols = {
            let mut out = Tensor::zeros(d, cands.len());
            for (i, &c) in cands.iter().enumerate() {
                for r in 0..d {
                    out.set(r, i, ctx.x.get(c, r));
                }
            }
            out
        };
        let worst = grad_check(
            &mut outer,
            &mut |ps, tape| {
                copy_values(&mut attack.params, ps);
                let consts = sub.consts_on(tape);
                let stack = tape.constant(ctx.stack.clone());
                let u = build_label_vector(tape, &attack, stack)?;
                let x_bt = tape.constant(x_bt_t.clone());
                let x_n = tape.constant(x_n_t.clone());
                let x_inj = generate_embedding(tape, &attack, &ctx, x_bt, x_n, u)?;
                let cand_t = tape.constant(cand_cols.clone());
                let scores = generate_edge(tape, &attack, x_bt, x_n, x_inj, u, cand_t)?;
                let weights = tape.softmax_rows(scores)?;
                let logits = sub.injected_target_logits(
                    tape, &g, &ctx.clean, &consts, b_t, &cands, x_inj, weights,
                )?;
                let probs = tape.softmax_rows(logits)?;
                let sign = tape.constant(Tensor::from_vec(2, 1, vec![-1.0, 1.0]));
                tape.matmul(probs, sign)
            },
            GC_EPS,
            GC_COORDS,
            derive_seed(seed, "gradcheck.attack.coords"),
        )?;
        rows.push(GradRow {
            model: "attack-nets".into(),
            worst,
        });
    }

    // inverters: squared output sum on random inputs
    let mut inverter_row = |out_dim: usize, name: &str| -> Result<()> {
        let q = d / 4;
        let mut inv = Inverter::init(q, out_dim, derive_seed(seed, &format!("gradcheck.{name}")))?;
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("gradcheck.{name}.input")));
        let data: Vec<Real> = (0..20 * q).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let input = Tensor::from_vec(20, q, data);
        let mut outer = inv.params.clone();
        let worst = grad_check(
            &mut outer,
            &mut |ps, tape| {
                copy_values(&mut inv.params, ps);
                let x = tape.constant(input.clone());
                let y = inv.forward_tape(tape, x)?;
                let sq = tape.mul(y, y)?;
                Ok(tape.sum(sq))
            },
            GC_EPS,
            GC_COORDS,
            derive_seed(seed, &format!("gradcheck.{name}.coords")),
        )?;
        rows.push(GradRow {
            model: name.into(),
            worst,
        });
        Ok(())
    };
    inverter_row(5, "numeric-inverter")?;
    inverter_row(6, "categorical-inverter")?;

    Ok(rows)
}
