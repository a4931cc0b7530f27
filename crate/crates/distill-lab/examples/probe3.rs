// Scratch probe: single-component condition, far null-branch mode.

use distill_lab::harness::{generate_samples, parse_config, reference_samples, VariantSpec};
use distill_lab::metrics::{sliced_wasserstein, SampleSet};
use distill_lab::rng::{RngStream, STREAM_PROJECTIONS};
use distill_lab::{GuidanceConfig, RenoiseSchedule};

fn config_text(seed: u64, b_z: f64) -> String {
    format!(
        r#"
seed = {seed}
n_samples = 10000

[world]
dim = 3

[[world.components]]
weight = 0.5
mean = [0.0, 0.0, 0.0]
var = [0.25, 0.25, 0.25]
condition = "a"

[[world.components]]
weight = 0.5
mean = [0.0, 0.0, {b_z}]
var = [0.25, 0.25, 0.25]
condition = "b"

[student]
kind = "biased-mean"
delta = [0.25, 0.25, 0.25]

[schedule]
kind = "cosine"
n_train = 1000
beta_min = 1e-4
beta_max = 0.999

[grid]
m_steps = 4
spacing = "uniform"

[solver]
kind = "ddim"

[guidance]
lambda = 0.02
k = 1
teacher_w = 7.5

[cfg]
w = 1.0
condition = "a"
"#
    )
}

fn main() {
    for b_z in [100.0, 150.0] {
        for seed in [424242u64, 7u64, 99u64, 5u64, 31u64, 2024u64] {
            let text = config_text(seed, b_z);
            let config = parse_config(&text).unwrap();
            let (reference, _) = reference_samples(&config).unwrap();
            let sw = |set: &SampleSet| {
                let mut rng = RngStream::new(config.seed, STREAM_PROJECTIONS);
                sliced_wasserstein(&reference, set, 64, &mut rng).unwrap()
            };
            let (base, _) = generate_samples(&config, &VariantSpec::baseline("b")).unwrap();
            let swb = sw(&base);
            let mut vals = vec![];
            for renoise in [RenoiseSchedule::Decreasing, RenoiseSchedule::Random, RenoiseSchedule::Same] {
                let g = GuidanceConfig { lambda: 0.02, k: 1, renoise, teacher_w: 7.5, ..GuidanceConfig::default() };
                let (guided, _) = generate_samples(&config, &VariantSpec::guided("g", g)).unwrap();
                vals.push(sw(&guided));
            }
            let dec_best = vals[0] < vals[1] && vals[0] < vals[2] && vals[0] < swb;
            let paper_order = vals[0] < vals[1] && vals[1] < swb && swb < vals[2];
            println!(
                "b_z={b_z} seed={seed:>6}: base={swb:.5} dec={:.5} rand={:.5} same={:.5}  {} {}",
                vals[0], vals[1], vals[2],
                if dec_best { "DEC-BEST" } else { "xx" },
                if paper_order { "PAPER-ORDER" } else { "" }
            );
        }
    }
}
