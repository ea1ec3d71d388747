use isbor::data::*;
use isbor::eval::*;
use isbor::kernel::*;
use isbor::trainer::*;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_train: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let theta: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let data = generate_synthetic(21000, 7);
    let splits = partition(&data, n_train, 1, 7).unwrap();
    let (ti, te) = &splits[0];
    let raw_train = data.subset(ti);
    let raw_test = data.subset(te);
    let (train, scaler) = standardize(&raw_train);
    let test = apply_scaler(&scaler, &raw_test).unwrap();
    let cfg = TrainConfig { seed: 7, ..TrainConfig::default() };
    let kernel = KernelConfig::new(theta).unwrap();
    let t0 = Instant::now();
    let cache = ColumnCache::new(&train.x, kernel);
    cache.warm_all().unwrap();
    let t_cache = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let model = fit_with_cache(&train, &cfg, kernel, &cache).unwrap();
    let t_fit = t1.elapsed().as_secs_f64();
    let preds = predict_batch(&model, &test).unwrap();
    let yp: Vec<usize> = preds.iter().map(|(c, _)| *c).collect();
    let m = mae(&test.y, &yp).unwrap();
    let acc = accuracy(&test.y, &yp).unwrap();
    // majority baseline
    let mut counts = vec![0usize; 6];
    for &y in &train.y { counts[y] += 1; }
    let maj = counts.iter().enumerate().skip(1).max_by_key(|(_, c)| **c).unwrap().0;
    let mae_maj = mae(&test.y, &vec![maj; test.n()]).unwrap();
    println!(
        "N={n_train} theta={theta}: cache {t_cache:.2}s fit {t_fit:.2}s iters={} M={} MAE={m:.4} acc={acc:.4} majority-MAE={mae_maj:.4} converged={} sigma={:.4} cuts={:?}",
        model.log_marginal_history.len() - 1,
        model.m(),
        model.converged,
        model.noise.sigma,
        model.thresholds.cuts().iter().map(|c| (c * 100.0).round() / 100.0).collect::<Vec<_>>()
    );
}
