use crate::error::{Error, Result};

fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Mean silhouette coefficient of `coords` under the cluster `labels`.
/// Points in singleton clusters score 0.
pub fn silhouette(coords: &[[f64; 2]], labels: &[usize]) -> Result<f64> {
    let n = coords.len();
    if n != labels.len() {
        return Err(Error::Contract("coords and labels differ in length".into()));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    if n == 0 || labels.iter().collect::<std::collections::BTreeSet<_>>().len() < 2 {
        return Err(Error::Domain("silhouette needs at least two clusters".into()));
    }
    let mut size = vec![0usize; k];
    labels.iter().for_each(|&l| size[l] += 1);
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if i != j {
                sums[labels[j]] += dist(&coords[i], &coords[j]);
            }
        }
        let own = labels[i];
        if size[own] < 2 {
            continue;
        }
        let a = sums[own] / (size[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && size[c] > 0)
            .map(|c| sums[c] / size[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Mean absolute label difference between each point and its `k` nearest
/// neighbours in the embedding (distance ties broken by index).
pub fn knn_label_gap(coords: &[[f64; 2]], labels: &[f64], k: usize) -> Result<f64> {
    let n = coords.len();
    if n != labels.len() {
        return Err(Error::Contract("coords and labels differ in length".into()));
    }
    if k == 0 || k >= n {
        return Err(Error::Domain(format!("need 0 < k < n, got k={k}, n={n}")));
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut d: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (dist(&coords[i], &coords[j]), j))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        total += d[..k].iter().map(|&(_, j)| (labels[i] - labels[j]).abs()).sum::<f64>() / k as f64;
    }
    Ok(total / n as f64)
}
