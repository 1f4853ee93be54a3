use std::time::Instant;

use deepes_core::{nn, Dataset, FitConfig, LossSpec};
use rand::Rng;

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4096);
    let epochs: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(10);
    let mut rng = deepes_core::rng::stream(1);
    let d = 8;
    let x: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>()).collect();
    let y: Vec<f64> = (0..n).map(|i| x[i * d] + rng.random::<f64>()).collect();
    let data = Dataset::new(x, y, d).unwrap();
    let cfg = FitConfig {
        max_epochs: epochs,
        ..FitConfig::default()
    };
    let t = Instant::now();
    let (_, rep) = nn::fit(&data, LossSpec::check(0.1).unwrap(), &cfg).unwrap();
    println!(
        "n={n} epochs={epochs} elapsed={:.2}s best={} val={:.4}",
        t.elapsed().as_secs_f64(),
        rep.best_epoch,
        rep.best_val_loss()
    );
}
