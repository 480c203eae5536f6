use mammocolor::pipeline::{run_directionality, DirectionalityConfig};

fn main() {
    let mut cfg = DirectionalityConfig::default();
    let args: Vec<String> = std::env::args().collect();
    if let Some(j) = args.get(1) {
        cfg = serde_json::from_str(&std::fs::read_to_string(j).unwrap()).unwrap();
    }
    let seeds: u64 = std::env::var("SEEDS").ok().and_then(|s| s.parse().ok()).unwrap_or(1);
    let verbose = std::env::var("VERBOSE").is_ok();
    let mut log = |r: mammocolor::pipeline::TrainingRegime, l: &mammocolor::pipeline::EpochLog| {
        if verbose {
            eprintln!("{r:?} {} train {:.4} val {:.4} auc {:.3}", l.epoch, l.train_loss, l.val_loss.unwrap(), l.val_auc.unwrap());
        }
    };
    let list: Vec<u64> = match std::env::var("SEED_LIST") {
        Ok(s) => s.split(',').map(|x| x.parse().unwrap()).collect(),
        Err(_) => (0..seeds).collect(),
    };
    for seed in list {
        let r = if std::env::var("F64").is_ok() {
            run_directionality::<f64>(&cfg, seed, &mut log)
        } else {
            run_directionality::<f32>(&cfg, seed, &mut log)
        }
        .unwrap();
        println!(
            "seed {} gray {:.3} tdce {:.3} delta {:+.3} p {:.4} epochs {}/{} n_test {} {:.1}s",
            r.seed, r.delong.auc_a, r.delong.auc_b, r.delong.delta, r.delong.p, r.gray_best_epoch, r.tdce_best_epoch, r.n_test, r.seconds
        );
    }
}
