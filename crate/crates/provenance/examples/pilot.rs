//! Scratch diagnostics for tuning world defaults. Not part of the demo set.

use provenance::bench::{suspect_data_seed, suspect_train_seeds, BenchmarkConfig, World};
use provenance::learner::{dataset_accuracy, train, MlpClassifier};
use provenance::stats::{mean, sample_std};
use provenance::synth::{sample_real, sample_synthetic};
use provenance::verifier::{ShadowContext, Verdict};

fn main() {
    let mut config = BenchmarkConfig::default();
    if let Some(sigma) = std::env::args().nth(1) {
        config.noise_scale = sigma.parse().unwrap();
    }
    let seeds: usize = std::env::args()
        .nth(2)
        .map(|s| s.parse().unwrap())
        .unwrap_or(5);
    println!(
        "noise_scale={} radius={} shift={} suspect_n={} epochs={}",
        config.noise_scale,
        config.prototype_radius,
        config.prompt_shift,
        config.suspect_n_per_class,
        config.suspect_epochs
    );

    let grid = provenance::bench::SuspectGrid::fast();
    let cells = grid.cells();
    let mut illegal_ok = 0usize;
    let mut illegal_total = 0usize;
    let mut legal_ok = 0usize;
    let mut legal_total = 0usize;

    for seed_index in 0..seeds {
        let world = World::build(&config, seed_index).unwrap();
        let vc = config.verification_config(&world);
        let start = std::time::Instant::now();
        let ctx = ShadowContext::prepare(
            &world.generators[0],
            &vc,
            provenance::bench::shadow_context_seed(&config, seed_index, 0),
        )
        .unwrap();
        let shadow_acc = dataset_accuracy(&ctx.shadow, &ctx.validation).unwrap();
        let self_report = ctx.verify(&ctx.shadow, "self").unwrap();
        println!(
            "seed {seed_index}: shadow val acc {:.4}, series mean {:.4} std {:.5} (prep {:?})",
            shadow_acc,
            mean(&self_report.shadow_series.values),
            sample_std(&self_report.shadow_series.values),
            start.elapsed()
        );

        // Suspects per source for defender gen-0.
        for (src_idx, src_name) in [(0usize, "gen-0"), (1, "gen-1"), (4, "real")] {
            if src_idx >= world.generators.len() && src_name != "real" {
                continue;
            }
            let data_seed = suspect_data_seed(&config, seed_index, src_idx);
            let data = if src_name == "real" {
                sample_real(&world.real, config.suspect_n_per_class, data_seed).unwrap()
            } else {
                sample_synthetic(
                    &world.generators[src_idx],
                    &world.suspect_prompt,
                    config.suspect_n_per_class,
                    data_seed,
                )
                .unwrap()
            };
            let truth_illegal = src_idx == 0;
            let mut means = Vec::new();
            let mut verdicts_ok = 0;
            let t0 = std::time::Instant::now();
            for (cell_idx, hyper) in cells.iter().enumerate() {
                let (init, shuf) = suspect_train_seeds(&config, seed_index, src_idx, cell_idx);
                let model = MlpClassifier::new(config.dim, hyper.hidden_width, config.num_classes, init);
                let (suspect, hist) = train(
                    model,
                    &data,
                    &hyper.to_train_config(config.suspect_epochs, shuf),
                )
                .unwrap();
                let report = ctx.verify(&suspect, "s").unwrap();
                means.push((report.suspect_mean, hist.final_train_accuracy));
                let correct = match (report.verdict, truth_illegal) {
                    (Verdict::Illegal, true) | (Verdict::Legal, false) => true,
                    _ => false,
                };
                if correct {
                    verdicts_ok += 1;
                }
                if truth_illegal {
                    illegal_total += 1;
                    if correct {
                        illegal_ok += 1;
                    }
                } else {
                    legal_total += 1;
                    if correct {
                        legal_ok += 1;
                    }
                }
            }
            let acc_means: Vec<f64> = means.iter().map(|m| m.0).collect();
            println!(
                "  src {src_name}: suspect val-mean range [{:.4}, {:.4}] train-acc min {:.3} verdict-ok {}/{} ({:?})",
                acc_means.iter().cloned().fold(f64::INFINITY, f64::min),
                acc_means.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                means.iter().map(|m| m.1).fold(f64::INFINITY, f64::min),
                verdicts_ok,
                cells.len(),
                t0.elapsed(),
            );
        }
    }
    println!(
        "TOTAL illegal ok {illegal_ok}/{illegal_total}, legal ok {legal_ok}/{legal_total}"
    );
}
