//! Scratch probe: synth-design knob sweep scoring oracle-attack headroom.

use botlab::detector::{train_detector, Detector, DetectorKind, DetectorSpec, TrainOpts};
use botlab::graph::{Label, Relation, SocialGraph, Split, UserAttrs, N_FLAGS, N_NUMERIC};
use botlab::nd::{Tape, Tensor};
use botlab::Real;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

#[derive(Clone, Copy)]
struct Knobs {
    bot_hom: Real,
    camo: Real,
    amp_lo: Real,
    ff: Real,
}

struct Dist {
    mean: [Real; N_NUMERIC],
    std: [Real; N_NUMERIC],
    flags: [Real; N_FLAGS],
    shift: Real,
}

fn dists() -> (Dist, Dist) {
    let human = Dist {
        mean: [200.0, 400.0, 10.0, 2000.0, 8000.0],
        std: [300.0, 400.0, 2.0, 1200.0, 5000.0],
        flags: [0.05, 0.30, 0.05],
        shift: 0.45,
    };
    let bot = Dist {
        mean: [200.0, 400.0, 15.0, 300.0, 800.0],
        std: [300.0, 400.0, 3.0, 250.0, 700.0],
        flags: [0.05, 0.02, 0.50],
        shift: -0.45,
    };
    (human, bot)
}

fn lerp(a: Real, b: Real, t: Real) -> Real {
    a + (b - a) * t
}

fn bot_at(human: &Dist, bot: &Dist, amp: Real) -> Dist {
    let mut d = Dist {
        mean: [0.0; N_NUMERIC],
        std: [0.0; N_NUMERIC],
        flags: [0.0; N_FLAGS],
        shift: lerp(human.shift, bot.shift, amp),
    };
    for j in 0..N_NUMERIC {
        d.mean[j] = lerp(human.mean[j], bot.mean[j], amp);
        d.std[j] = lerp(human.std[j], bot.std[j], amp);
    }
    for j in 0..N_FLAGS {
        d.flags[j] = lerp(human.flags[j], bot.flags[j], amp);
    }
    d
}

fn std_normal(rng: &mut ChaCha8Rng) -> Real {
    let u1: Real = rng.gen::<Real>().max(1e-12);
    let u2: Real = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn unit_direction(rng: &mut ChaCha8Rng, ds: usize) -> Vec<Real> {
    let mut v: Vec<Real> = (0..ds).map(|_| std_normal(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<Real>().sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

fn synth_knob(n: usize, bot_fraction: Real, avg_degree: Real, ds: usize, seed: u64, k: &Knobs) -> SocialGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_bots = ((n as Real) * bot_fraction).round() as usize;
    let mut labels = vec![Label::Human; n];
    labels[..n_bots].iter_mut().for_each(|l| *l = Label::Bot);
    labels.shuffle(&mut rng);

    let desc_dir = unit_direction(&mut rng, ds);
    let tweet_dir = unit_direction(&mut rng, ds);
    const TEXT_NOISE: Real = 0.7;
    let (human_d, bot_d) = dists();

    let mut attrs = Vec::with_capacity(n);
    for &label in &labels {
        let dist = match label {
            Label::Human => bot_at(&human_d, &bot_d, 0.0),
            Label::Bot => {
                let amp = if rng.gen::<Real>() < k.camo {
                    0.0
                } else {
                    k.amp_lo + (1.0 - k.amp_lo) * rng.gen::<Real>()
                };
                bot_at(&human_d, &bot_d, amp)
            }
        };
        let mut numeric = [0.0; N_NUMERIC];
        for j in 0..N_NUMERIC {
            numeric[j] = (dist.mean[j] + dist.std[j] * std_normal(&mut rng)).max(0.0).round();
        }
        numeric[2] = numeric[2].clamp(1.0, 30.0);
        let mut flags = [false; N_FLAGS];
        for j in 0..N_FLAGS {
            flags[j] = rng.gen::<Real>() < dist.flags[j];
        }
        let text = |dir: &[Real], rng: &mut ChaCha8Rng| -> Vec<Real> {
            dir.iter().map(|&d| dist.shift * d + TEXT_NOISE * std_normal(rng)).collect()
        };
        let desc = text(&desc_dir, &mut rng);
        let tweet = text(&tweet_dir, &mut rng);
        attrs.push(UserAttrs { desc, tweet, numeric, flags });
    }

    let mut by_label: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        by_label[l.class()].push(i);
    }
    let m = ((n as Real) * avg_degree / 2.0).round() as usize;
    let mut edges = Vec::with_capacity(m);
    let mut seen = HashSet::new();
    while edges.len() < m {
        let src = rng.gen_range(0..n);
        let homophily = match labels[src] {
            Label::Human => 0.9,
            Label::Bot => k.bot_hom,
        };
        let dst = if rng.gen::<Real>() < homophily {
            let pool = &by_label[labels[src].class()];
            pool[rng.gen_range(0..pool.len())]
        } else {
            rng.gen_range(0..n)
        };
        if src == dst {
            continue;
        }
        let rel = if rng.gen::<Real>() < k.ff { Relation::Follow } else { Relation::Friend };
        let key = (src.min(dst), src.max(dst), rel);
        if !seen.insert(key) {
            continue;
        }
        edges.push((src, dst, rel));
    }

    // same stratified 70/15/15 as the library generator
    let mut splits = vec![None; n];
    for class in [Label::Human, Label::Bot] {
        let mut ids: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        ids.shuffle(&mut rng);
        let c = ids.len();
        let n_tr = (((c as Real) * 0.70).floor() as usize).max(1).min(c);
        let n_val = (((c as Real) * 0.15).floor() as usize).max(1).min(c - n_tr);
        for (rank, &id) in ids.iter().enumerate() {
            splits[id] = Some(if rank < n_tr {
                Split::Train
            } else if rank < n_tr + n_val {
                Split::Val
            } else {
                Split::Test
            });
        }
    }
    SocialGraph::new(attrs, labels, splits, edges).unwrap()
}

/// Logistic regression on raw standardized features, train mask, test acc.
fn lr_oracle(g: &SocialGraph) -> Real {
    let train = g.split_nodes(Split::Train);
    let test = g.split_nodes(Split::Test);
    let ds = g.ds();
    let dim = N_NUMERIC + N_FLAGS + 2 * ds;
    let feat = |v: usize, mean: &[Real], std: &[Real]| -> Vec<Real> {
        let a = g.attrs(v);
        let mut f = Vec::with_capacity(dim);
        for j in 0..N_NUMERIC {
            f.push((a.numeric[j] - mean[j]) / std[j]);
        }
        for j in 0..N_FLAGS {
            f.push(if a.flags[j] { 1.0 } else { 0.0 });
        }
        f.extend_from_slice(&a.desc);
        f.extend_from_slice(&a.tweet);
        f
    };
    let mut mean = vec![0.0; N_NUMERIC];
    let mut var = vec![0.0; N_NUMERIC];
    for &v in &train {
        for j in 0..N_NUMERIC {
            mean[j] += g.attrs(v).numeric[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= train.len() as Real);
    for &v in &train {
        for j in 0..N_NUMERIC {
            var[j] += (g.attrs(v).numeric[j] - mean[j]).powi(2);
        }
    }
    let std: Vec<Real> = var.iter().map(|v| (v / train.len() as Real).sqrt().max(1e-9)).collect();

    let mut w = vec![0.0; dim + 1];
    for _ in 0..300 {
        let mut grad = vec![0.0; dim + 1];
        for &v in &train {
            let f = feat(v, &mean, &std);
            let z: Real = w[dim] + f.iter().zip(&w[..dim]).map(|(a, b)| a * b).sum::<Real>();
            let p = 1.0 / (1.0 + (-z).exp());
            let y = if g.label(v) == Label::Bot { 1.0 } else { 0.0 };
            let d = p - y;
            for j in 0..dim {
                grad[j] += d * f[j];
            }
            grad[dim] += d;
        }
        let scale = 0.5 / train.len() as Real;
        for j in 0..=dim {
            w[j] -= scale * grad[j];
        }
    }
    let mut acc = 0usize;
    for &v in &test {
        let f = feat(v, &mean, &std);
        let z: Real = w[dim] + f.iter().zip(&w[..dim]).map(|(a, b)| a * b).sum::<Real>();
        let pred = if z > 0.0 { Label::Bot } else { Label::Human };
        if pred == g.label(v) {
            acc += 1;
        }
    }
    acc as Real / test.len() as Real
}

struct AttackStats {
    miss: Real,
    oasr: Real,
    inj_human: Real,
    flips: usize,
    band: usize,
    dm_q: [Real; 3],
    m_q: [Real; 3],
}

/// Oracle attach: given profile-legal attrs, best candidate by resulting margin.
fn oracle_attack(det: &Detector, g: &SocialGraph, targets: &[usize], oracle: &UserAttrs) -> AttackStats {
    let enc = det.encoder_ids().unwrap();
    let x_or = enc.encode_attrs(det.params(), det.stats(), oracle).unwrap();
    let clean = det.clean_pass(g).unwrap();
    let clean_logits = clean.logits.clone();

    let mut miss = 0usize;
    let mut human_after = 0usize;
    let mut inj_human = 0usize;
    let mut flips = 0usize;
    let mut band = 0usize;
    let mut dms: Vec<Real> = Vec::new();
    let mut m0s: Vec<Real> = Vec::new();
    for &t in targets {
        let m0 = clean_logits.get(t, 1) - clean_logits.get(t, 0);
        m0s.push(m0);
        if m0 <= 0.0 {
            miss += 1;
        }
        if m0 > 0.0 && m0 <= 1.0 {
            band += 1;
        }
        let mut cands = g.first_order_neighbors(t);
        cands.retain(|&c| c != t);
        if cands.is_empty() {
            cands.push(t);
        }
        let mut best = Real::INFINITY;
        let mut best_inj = 0.0;
        for ci in 0..cands.len() {
            let mut tape = Tape::new();
            let consts = det.consts_on(&mut tape);
            let xv = tape.constant(x_or.clone());
            let mut wrow = Tensor::zeros(1, cands.len());
            wrow.set(0, ci, 1.0);
            let wv = tape.constant(wrow);
            let (tl, il) = det
                .injected_pair_logits(&mut tape, g, &clean, &consts, t, &cands, xv, wv)
                .unwrap();
            let tlv = tape.value(tl);
            let m = tlv.get(0, 1) - tlv.get(0, 0);
            if m < best {
                best = m;
                let ilv = tape.value(il);
                best_inj = ilv.get(0, 1) - ilv.get(0, 0);
            }
        }
        if best <= 0.0 {
            human_after += 1;
        }
        if m0 > 0.0 && best <= 0.0 {
            flips += 1;
        }
        if !best.is_finite() {
            eprintln!("non-finite best margin at target {t}");
        }
        dms.push(best - m0);
        if best_inj <= 0.0 {
            inj_human += 1;
        }
    }
    let q = |v: &mut Vec<Real>| -> [Real; 3] {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = v.len();
        [v[n / 10], v[n / 2], v[9 * n / 10]]
    };
    let nt = targets.len() as Real;
    AttackStats {
        miss: miss as Real / nt,
        oasr: human_after as Real / nt,
        inj_human: inj_human as Real / nt,
        flips,
        band,
        dm_q: q(&mut dms),
        m_q: q(&mut m0s),
    }
}

fn main() {
    let n = 1000;
    let deg = 2.5;
    let ds = 32;
    let d = 64;

    let corner = UserAttrs {
        desc: vec![0.0; ds],
        tweet: vec![0.0; ds],
        numeric: [0.0, 90.0, 8.0, 5000.0, 40000.0],
        flags: [false, true, false],
    };

    for &epochs in &[150usize, 300] {
        let k = Knobs { bot_hom: 0.85, camo: 0.22, amp_lo: 0.85, ff: 0.5 };
        let g = synth_knob(n, 0.3, deg, ds, 1, &k);
        let lr = lr_oracle(&g);
        let targets = g.bots_in(Split::Test);
        println!("epochs {epochs} | lr {:.3} | targets {}", lr, targets.len());
        let opts = TrainOpts { epochs, lr: 1e-2, lambda: 5e-4 };
        for (kind, seed) in [(DetectorKind::SubstituteRgcn, 11u64), (DetectorKind::VictimGcn, 7001)] {
            let spec = DetectorSpec { kind, layers: 2, d };
            let (det, _) = train_detector(&g, spec, &opts, seed).unwrap();
            let st = oracle_attack(&det, &g, &targets, &corner);
            println!(
                "  {:<16} miss {:.3} oasr {:.3} injH {:.3} flips {} band {} m0 {:+.2}/{:+.2}/{:+.2} dM {:+.2}/{:+.2}/{:+.2}",
                kind.token(), st.miss, st.oasr, st.inj_human, st.flips, st.band,
                st.m_q[0], st.m_q[1], st.m_q[2], st.dm_q[0], st.dm_q[1], st.dm_q[2]
            );
        }
    }
}
