use rand::seq::index;
use rayon::prelude::*;

use crate::dataset::CaseMatrix;
use crate::error::{Error, Result};
use crate::util;

use super::{GbtModel, Hyperparams, Node, Tree, MODEL_FORMAT_VERSION};

const NONE: u32 = u32::MAX;
const TREE_STREAM: u64 = 0x4754_5245_4500;

/// L1 soft-thresholding.
#[inline]
pub fn soft_threshold(g: f64, alpha: f64) -> f64 {
    if g > alpha {
        g - alpha
    } else if g < -alpha {
        g + alpha
    } else {
        0.0
    }
}

#[inline]
fn score(g: f64, h: f64, hp: &Hyperparams) -> f64 {
    let s = soft_threshold(g, hp.reg_alpha);
    s * s / (h + hp.reg_lambda)
}

/// Optimal leaf weight `-S(G)/(H+lambda)` before shrinkage.
#[inline]
pub fn leaf_weight(g: f64, h: f64, alpha: f64, lambda: f64) -> f64 {
    -soft_threshold(g, alpha) / (h + lambda)
}

/// Loss reduction of splitting `(G, H)` into left and right parts.
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, hp: &Hyperparams) -> f64 {
    0.5 * (score(gl, hl, hp) + score(gr, hr, hp) - score(gl + gr, hl + hr, hp)) - hp.gamma
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature_id: usize,
    threshold: f64,
    default_left: bool,
}

struct Open {
    node: usize,
    g: f64,
    h: f64,
    n: usize,
}

/// Threshold strictly above `a` and at most `b`, so `a` routes left and `b`
/// right under `x < threshold`.
fn threshold_between(a: f64, b: f64) -> f64 {
    let t = a + (b - a) / 2.0;
    if t > a {
        t
    } else {
        b
    }
}

struct Ctx<'a> {
    sorted: &'a [Vec<(f64, u32)>],
    grad: &'a [f64],
    node_of: &'a [u32],
    open: &'a [Open],
    hp: &'a Hyperparams,
}

/// Best split on one feature for each open node. Candidates are visited in
/// ascending threshold order and replaced only on strictly larger gain.
fn scan_feature(ctx: &Ctx, f: usize) -> Vec<Option<Candidate>> {
    let k = ctx.open.len();
    let col = &ctx.sorted[f];
    let (mut g_nm, mut h_nm, mut n_nm) = (vec![0.0; k], vec![0.0; k], vec![0usize; k]);
    for &(_, r) in col {
        let nd = ctx.node_of[r as usize];
        if nd != NONE {
            let nd = nd as usize;
            g_nm[nd] += ctx.grad[r as usize];
            h_nm[nd] += 1.0;
            n_nm[nd] += 1;
        }
    }
    let (mut gl, mut hl, mut nl) = (vec![0.0; k], vec![0.0; k], vec![0usize; k]);
    let mut last: Vec<Option<f64>> = vec![None; k];
    let mut best: Vec<Option<Candidate>> = vec![None; k];
    let hp = ctx.hp;
    let min_gain = |o: &Open| 1e-10 * (1.0 + score(o.g, o.h, hp));

    for &(v, r) in col {
        let nd = ctx.node_of[r as usize];
        if nd == NONE {
            continue;
        }
        let nd = nd as usize;
        if let Some(prev) = last[nd] {
            if v > prev {
                let o = &ctx.open[nd];
                let (gm, hm, nm) = (o.g - g_nm[nd], o.h - h_nm[nd], o.n - n_nm[nd]);
                let (gr, hr, nr) = (g_nm[nd] - gl[nd], h_nm[nd] - hl[nd], n_nm[nd] - nl[nd]);
                let mut options = Vec::with_capacity(2);
                if nm == 0 {
                    options.push((gl[nd], hl[nd], nl[nd], gr, hr, nr, hl[nd] >= hr));
                } else {
                    options.push((gl[nd] + gm, hl[nd] + hm, nl[nd] + nm, gr, hr, nr, true));
                    options.push((gl[nd], hl[nd], nl[nd], gr + gm, hr + hm, nr + nm, false));
                }
                for (a_g, a_h, a_n, b_g, b_h, b_n, default_left) in options {
                    if a_n == 0 || b_n == 0 || a_h < hp.min_child_weight || b_h < hp.min_child_weight
                    {
                        continue;
                    }
                    let gain = split_gain(a_g, a_h, b_g, b_h, hp);
                    if gain <= min_gain(o) {
                        continue;
                    }
                    if best[nd].is_none_or(|b| gain > b.gain) {
                        best[nd] = Some(Candidate {
                            gain,
                            feature_id: f,
                            threshold: threshold_between(prev, v),
                            default_left,
                        });
                    }
                }
            }
        }
        gl[nd] += ctx.grad[r as usize];
        hl[nd] += 1.0;
        nl[nd] += 1;
        last[nd] = Some(v);
    }
    best
}

fn sample_sorted(rng: &mut impl rand::Rng, pool: &[usize], fraction: f64) -> Vec<usize> {
    if fraction >= 1.0 {
        return pool.to_vec();
    }
    let k = ((pool.len() as f64 * fraction).round() as usize).clamp(1, pool.len());
    let mut picked: Vec<usize> = index::sample(rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort_unstable();
    picked
}

fn build_tree(
    data: &CaseMatrix,
    sorted: &[Vec<(f64, u32)>],
    grad: &[f64],
    rows: &[usize],
    tree_cols: &[usize],
    hp: &Hyperparams,
    rng: &mut impl rand::Rng,
) -> Tree {
    let n = data.n_cases();
    let mut node_of = vec![NONE; n];
    let mut g = 0.0;
    for &r in rows {
        node_of[r] = 0;
        g += grad[r];
    }
    let mut nodes = vec![Node::Leaf {
        weight: 0.0,
        cover: rows.len() as f64,
    }];
    let mut open = vec![Open {
        node: 0,
        g,
        h: rows.len() as f64,
        n: rows.len(),
    }];

    for _depth in 0..hp.max_depth {
        if open.is_empty() {
            break;
        }
        let cols = sample_sorted(rng, tree_cols, hp.col_sample_by_level);
        let ctx = Ctx {
            sorted,
            grad,
            node_of: &node_of,
            open: &open,
            hp,
        };
        let per_feature: Vec<Vec<Option<Candidate>>> =
            cols.par_iter().map(|&f| scan_feature(&ctx, f)).collect();
        let mut best: Vec<Option<Candidate>> = vec![None; open.len()];
        for cands in &per_feature {
            for (b, c) in best.iter_mut().zip(cands) {
                if let Some(c) = c {
                    if b.is_none_or(|b| c.gain > b.gain) {
                        *b = Some(*c);
                    }
                }
            }
        }

        // Each split node gets two children; they form the next level.
        let mut child_of: Vec<Option<(u32, u32)>> = vec![None; open.len()];
        let mut next = Vec::new();
        for (i, o) in open.iter().enumerate() {
            match best[i] {
                Some(c) => {
                    let (l, r) = (nodes.len(), nodes.len() + 1);
                    nodes.push(Node::Leaf { weight: 0.0, cover: 0.0 });
                    nodes.push(Node::Leaf { weight: 0.0, cover: 0.0 });
                    nodes[o.node] = Node::Split {
                        feature_id: c.feature_id,
                        threshold: c.threshold,
                        default_left: c.default_left,
                        left: l,
                        right: r,
                        cover: o.h,
                    };
                    child_of[i] = Some((next.len() as u32, next.len() as u32 + 1));
                    for node in [l, r] {
                        next.push(Open { node, g: 0.0, h: 0.0, n: 0 });
                    }
                }
                None => {
                    nodes[o.node] = Node::Leaf {
                        weight: leaf_weight(o.g, o.h, hp.reg_alpha, hp.reg_lambda) * hp.eta,
                        cover: o.h,
                    };
                }
            }
        }
        for &r in rows {
            let nd = node_of[r];
            if nd == NONE {
                continue;
            }
            node_of[r] = match child_of[nd as usize] {
                None => NONE,
                Some((l, rt)) => {
                    let go = Tree::route(&nodes[open[nd as usize].node], data.row(r));
                    let c = if go == open_node_left(&nodes, open[nd as usize].node) { l } else { rt };
                    let o = &mut next[c as usize];
                    o.g += grad[r];
                    o.h += 1.0;
                    o.n += 1;
                    c
                }
            };
        }
        for o in &next {
            nodes[o.node] = Node::Leaf { weight: 0.0, cover: o.h };
        }
        open = next;
    }
    for o in &open {
        nodes[o.node] = Node::Leaf {
            weight: leaf_weight(o.g, o.h, hp.reg_alpha, hp.reg_lambda) * hp.eta,
            cover: o.h,
        };
    }
    Tree { nodes }
}

fn open_node_left(nodes: &[Node], i: usize) -> usize {
    match nodes[i] {
        Node::Split { left, .. } => left,
        Node::Leaf { .. } => unreachable!("split node expected"),
    }
}

/// Fits a boosted ensemble with squared-error loss (`g = pred - y`, `h = 1`).
/// Deterministic in `(data, hp)` and independent of the thread count.
pub fn train(data: &CaseMatrix, hp: &Hyperparams) -> Result<GbtModel> {
    hp.validate()?;
    let n = data.n_cases();
    if n < 2 {
        return Err(Error::Contract(format!("need at least 2 training cases, got {n}")));
    }
    if n >= NONE as usize {
        return Err(Error::Contract("too many training cases".into()));
    }
    let m = data.n_features();
    let sorted: Vec<Vec<(f64, u32)>> = (0..m)
        .into_par_iter()
        .map(|f| {
            let mut col: Vec<(f64, u32)> = data
                .rows()
                .iter()
                .enumerate()
                .filter_map(|(i, r)| r[f].map(|v| (v, i as u32)))
                .collect();
            col.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            col
        })
        .collect();
    if sorted.iter().all(Vec::is_empty) {
        return Err(Error::Contract("no feature column has a value".into()));
    }

    let y = data.labels();
    let base_score = y.iter().sum::<f64>() / n as f64;
    let mut model = GbtModel {
        format_version: MODEL_FORMAT_VERSION,
        base_score,
        eta: hp.eta,
        n_features: m,
        catalog_fingerprint: data.catalog().fingerprint(),
        hyperparams: hp.clone(),
        trees: Vec::new(),
    };
    if y.iter().all(|&v| v == y[0]) {
        return Ok(model);
    }

    let all_rows: Vec<usize> = (0..n).collect();
    let all_cols: Vec<usize> = (0..m).collect();
    let mut pred = vec![base_score; n];
    for t in 0..hp.n_trees {
        let mut rng = util::stream_rng(hp.seed, TREE_STREAM ^ t as u64);
        let grad: Vec<f64> = pred.iter().zip(y).map(|(p, y)| p - y).collect();
        let rows = sample_sorted(&mut rng, &all_rows, hp.subsample);
        let cols = sample_sorted(&mut rng, &all_cols, hp.col_sample_by_tree);
        let tree = build_tree(data, &sorted, &grad, &rows, &cols, hp, &mut rng);
        pred.par_iter_mut()
            .zip(data.rows())
            .for_each(|(p, r)| *p += tree.predict(r));
        model.trees.push(tree);
    }
    log::debug!(
        "trained {} trees, {} splits",
        model.trees.len(),
        model.trees.iter().map(Tree::n_splits).sum::<usize>()
    );
    Ok(model)
}
