// Compares the full pipeline against plain weighted averaging on the default
// synthetic task: leave-one-out over all four domains, paired by seed.
//
//   cargo run --release -p fedalign-cli --example compare_methods [config.json] [seeds]

use fedalign::fed::run_fdg;
use fedalign_cli::commands::apply_baseline;
use fedalign_cli::config::ExperimentConfig;
use std::path::Path;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let base = ExperimentConfig::load(args.get(1).map(Path::new)).unwrap();
    let seeds: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(10);

    let mut diffs = Vec::new();
    for seed in 0..seeds {
        let mut feda_sum = 0.0;
        let mut fedavg_sum = 0.0;
        for target in 0..base.dataset.num_domains {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.target_domain = target;
            let federation = cfg.federation().unwrap();
            let model = cfg.model_config();

            let run = run_fdg(&cfg.fed_config(), &model, &federation).unwrap();
            feda_sum += run.history.final_target_accuracy().unwrap();

            let mut avg = cfg.clone();
            apply_baseline(&mut avg, "fedavg").unwrap();
            let run = run_fdg(&avg.fed_config(), &model, &federation).unwrap();
            fedavg_sum += run.history.final_target_accuracy().unwrap();
        }
        let n = base.dataset.num_domains as f64;
        let diff = (feda_sum - fedavg_sum) / n;
        diffs.push(diff);
        println!(
            "seed {seed}: feda {:.4} fedavg {:.4} diff {diff:+.4}",
            feda_sum / n,
            fedavg_sum / n
        );
    }
    let mean: f64 = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let positive = diffs.iter().filter(|&&d| d > 0.0).count();
    println!("mean diff {mean:+.4}, positive {positive}/{}", diffs.len());
}
