use isbor::data::*;
use isbor::kernel::*;
use isbor::likelihood::Thresholds;
use isbor::posterior::map_estimate;
use isbor::selection::{scan_all, ScanContext};
use isbor::hyper::update_thresholds;
use isbor::trainer::*;
use ndarray::Array1;
use std::time::Instant;

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8000);
    let data = generate_synthetic(21000, 7);
    let splits = partition(&data, n, 1, 7).unwrap();
    let (train, _) = {
        let (ti, te) = &splits[0];
        (standardize(&data.subset(ti)).0, te)
    };
    let kernel = KernelConfig::new(0.01).unwrap();
    let cache = ColumnCache::new(&train.x, kernel);
    cache.warm_all().unwrap();
    // fit a model to get a realistic mid-training state
    let cfg = TrainConfig { seed: 7, ..TrainConfig::default() };
    let model = fit_with_cache(&train, &cfg, kernel, &cache).unwrap();
    let m = model.m();
    let phi = active_design(&cache, &model.active).unwrap();
    let alpha = model.alpha.clone();
    let b = model.thresholds.clone();
    let sigma = model.noise.sigma;

    let t = Instant::now();
    let post = map_estimate(&phi, &train.y, alpha.view(), &b, sigma, model.w.view()).unwrap();
    let t_map_warm = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let post2 = map_estimate(&phi, &train.y, alpha.view(), &b, sigma, Array1::zeros(m).view(), ).unwrap();
    let t_map_cold = t.elapsed().as_secs_f64();
    let _ = post2;

    let alpha_of: Vec<Option<f64>> = {
        let mut v = vec![None; n];
        for (pos, &j) in model.active.iter().enumerate() { v[j] = Some(model.alpha[pos]); }
        v
    };
    let skip = vec![false; n];
    let t = Instant::now();
    let ctx = ScanContext::new(&phi, &post);
    let stats = scan_all(&ctx, &cache, &alpha_of, &skip).unwrap();
    let t_scan = t.elapsed().as_secs_f64();

    let scores = phi.columns.dot(&post.w_star);
    let t = Instant::now();
    let (_b2, _) = update_thresholds(&b, scores.view(), &train.y, sigma).unwrap();
    let t_thresh = t.elapsed().as_secs_f64();

    println!("N={n} M={m}: map_warm {t_map_warm:.3}s map_cold {t_map_cold:.3}s scan {t_scan:.3}s thresh {t_thresh:.3}s (stats {})", stats.len());
}
