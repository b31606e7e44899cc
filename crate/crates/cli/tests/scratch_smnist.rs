//! Temporary recipe verification; removed once the study suite is frozen.

use std::path::Path;
use std::time::Instant;

use geossm_cli::presets::smnist_geometric;
use geossm_cli::runs::{load_test_set, mnist_accuracy, train_run};
use geossm_core::geometric::ForwardMode;

#[test]
#[ignore]
fn smnist_recipe_probe() {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let dir = tempfile::tempdir().unwrap();
    let cfg = smnist_geometric(0, dir.path().join("run"), &data);
    println!(
        "recipe: steps {} batch {} lr {}",
        cfg.train.steps, cfg.train.batch, cfg.train.adam.lr
    );
    let t0 = Instant::now();
    let outcome = train_run(&cfg).unwrap();
    let train_time = t0.elapsed().as_secs_f64();
    let start = outcome.losses[0];
    let min500 = outcome.losses[..500.min(outcome.losses.len())]
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    println!(
        "losses[0] {:.4} min over first 500 {:.4} (need <= {:.4}) final {:.4}",
        start,
        min500,
        0.5 * start,
        outcome.losses.last().unwrap()
    );
    let test = load_test_set(&data).unwrap();
    let t1 = Instant::now();
    let acc = mnist_accuracy(&outcome.model, &test, ForwardMode::Fft).unwrap();
    println!(
        "test acc {:.4} train {:.1}s eval {:.1}s",
        acc,
        train_time,
        t1.elapsed().as_secs_f64()
    );
}
