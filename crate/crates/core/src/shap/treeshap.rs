use crate::dataset::Cell;
use crate::gbt::{Node, Tree};

#[derive(Debug, Clone, Copy)]
struct PathElem {
    /// Feature of the split that added this element; `usize::MAX` for the root.
    feature: usize,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElem>, zero: f64, one: f64, feature: usize) {
    let l = path.len();
    path.push(PathElem {
        feature,
        zero,
        one,
        weight: if l == 0 { 1.0 } else { 0.0 },
    });
    let lf = (l + 1) as f64;
    for i in (0..l).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / lf;
        path[i].weight = zero * path[i].weight * (l - i) as f64 / lf;
    }
}

fn unwind(path: &mut Vec<PathElem>, i: usize) {
    let l = path.len() - 1;
    let (one, zero) = (path[i].one, path[i].zero);
    let mut n = path[l].weight;
    let lf = (l + 1) as f64;
    for j in (0..l).rev() {
        if one != 0.0 {
            let t = path[j].weight;
            path[j].weight = n * lf / ((j + 1) as f64 * one);
            n = t - path[j].weight * zero * (l - j) as f64 / lf;
        } else {
            path[j].weight = path[j].weight * lf / (zero * (l - j) as f64);
        }
    }
    // Weights stay in place; only the split descriptors shift down.
    for j in i..l {
        path[j].feature = path[j + 1].feature;
        path[j].zero = path[j + 1].zero;
        path[j].one = path[j + 1].one;
    }
    path.pop();
}

/// Total permutation weight of the path with element `i` removed.
fn unwound_sum(path: &[PathElem], i: usize) -> f64 {
    let l = path.len() - 1;
    let (one, zero) = (path[i].one, path[i].zero);
    let lf = (l + 1) as f64;
    let mut total = 0.0;
    if one != 0.0 {
        let mut n = path[l].weight;
        for j in (0..l).rev() {
            let w = n * lf / ((j + 1) as f64 * one);
            total += w;
            n = path[j].weight - w * zero * (l - j) as f64 / lf;
        }
    } else {
        for j in (0..l).rev() {
            total += path[j].weight * lf / (zero * (l - j) as f64);
        }
    }
    total
}

fn recurse(
    tree: &Tree,
    row: &[Cell],
    phi: &mut [f64],
    j: usize,
    mut path: Vec<PathElem>,
    zero: f64,
    one: f64,
    feature: usize,
) {
    extend(&mut path, zero, one, feature);
    match tree.nodes[j] {
        Node::Leaf { weight, .. } => {
            for i in 1..path.len() {
                let w = unwound_sum(&path, i);
                let e = path[i];
                phi[e.feature] += w * (e.one - e.zero) * weight;
            }
        }
        Node::Split {
            feature_id,
            left,
            right,
            cover,
            ..
        } => {
            let hot = Tree::route(&tree.nodes[j], row);
            let cold = if hot == left { right } else { left };
            let (mut iz, mut io) = (1.0, 1.0);
            if let Some(k) = path.iter().skip(1).position(|e| e.feature == feature_id) {
                let k = k + 1;
                iz = path[k].zero;
                io = path[k].one;
                unwind(&mut path, k);
            }
            let hot_frac = tree.nodes[hot].cover() / cover;
            let cold_frac = tree.nodes[cold].cover() / cover;
            recurse(tree, row, phi, hot, path.clone(), iz * hot_frac, io, feature_id);
            recurse(tree, row, phi, cold, path, iz * cold_frac, 0.0, feature_id);
        }
    }
}

/// Adds the path-dependent Shapley values of one tree for `row` to `phi`.
/// Missing values follow the default direction and count as present.
pub fn tree_shap_single(tree: &Tree, row: &[Cell], phi: &mut [f64]) {
    recurse(tree, row, phi, 0, Vec::with_capacity(16), 1.0, 1.0, usize::MAX);
}
