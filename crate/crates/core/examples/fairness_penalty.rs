//! Trains the toy detector with and without the accuracy-variance penalty and prints
//! overall accuracy and max group disparity on the held-out split.
//!
//! Usage: `cargo run --release -p fairforge --example fairness_penalty -- [epochs] [seeds] [lambda...]`

use fairforge::toy::PenaltyExperiment;

fn main() -> fairforge::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let num = |i: usize, d: f64| args.get(i).map_or(d, |v| v.parse().expect("numeric argument"));
    let mut exp = PenaltyExperiment::default();
    exp.train.epochs = num(0, 20.0) as usize;
    let seeds = num(1, 5.0) as u64;
    let mut lambdas: Vec<f64> = (2..args.len()).map(|i| num(i, 0.0)).collect();
    if lambdas.is_empty() {
        lambdas = vec![0.0, 20.0];
    }
    let data = exp.dataset()?;
    for &lambda in &lambdas {
        for seed in 0..seeds {
            let start = std::time::Instant::now();
            let out = exp.run(&data, lambda, seed, |log| {
                let n = log.steps.len() as f64;
                let mean = |f: fn(&fairforge::sam::StepLog) -> f64| log.steps.iter().map(f).sum::<f64>() / n;
                eprintln!(
                    "  epoch {} real {:.4} dem {:.4} var {:.4}",
                    log.epoch,
                    mean(|s| s.l_real),
                    mean(|s| s.l_dem),
                    mean(|s| s.var_acc)
                );
                Ok(())
            })?;
            let per: Vec<String> = out
                .group_accuracy
                .iter()
                .map(|a| format!("{:.2}", a.unwrap_or(f64::NAN)))
                .collect();
            println!(
                "lambda={lambda:>4} seed={seed} acc={:.4} disparity={:.4} groups=[{}] ({:.0}s)",
                out.accuracy,
                out.max_disparity,
                per.join(" "),
                start.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
