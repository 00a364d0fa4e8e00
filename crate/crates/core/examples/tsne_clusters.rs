//! Exact t-SNE on three Gaussian blobs.

use efshap::embed::{silhouette, tsne, InputSpace, TsneConfig};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

fn main() -> efshap::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let centers = [[0.0, 0.0, 0.0], [8.0, 0.0, 0.0], [0.0, 8.0, 4.0]];
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for i in 0..240 {
        let c = i % 3;
        let mut p: Vec<f64> = centers[c].to_vec();
        p.extend([0.0; 5]);
        points.push(p.iter().map(|v| v + noise.sample(&mut rng)).collect::<Vec<f64>>());
        labels.push(c);
    }

    let config = TsneConfig {
        perplexity: Some(30.0),
        seed: 11,
        ..TsneConfig::default()
    };
    let e = tsne(&points, &config, InputSpace::RawFeatures)?;
    let kl = &e.kl_history;
    for it in [0, 100, 250, 500, kl.len() - 1] {
        if let Some(v) = kl.get(it) {
            println!("iter {it:>4}: KL {v:.4}");
        }
    }
    println!("silhouette against true labels: {:.3}", silhouette(&e.coords, &labels)?);
    Ok(())
}
