// Scratch probe: conditional guidance with extrapolating teacher CFG.

use distill_lab::harness::{
    generate_analytic_samples, generate_samples, parse_config, reference_samples, VariantSpec,
};
use distill_lab::metrics::{sliced_wasserstein, SampleSet};
use distill_lab::rng::{RngStream, STREAM_PROJECTIONS};
use distill_lab::{GuidanceConfig, RenoiseSchedule};

fn config_text(student: &str, seed: u64, teacher_w: f64) -> String {
    format!(
        r#"
seed = {seed}
n_samples = 10000

[world]
dim = 2

[[world.components]]
weight = 0.35
mean = [-2.0, -1.0]
var = [0.25, 0.25]
condition = "a"

[[world.components]]
weight = 0.25
mean = [2.0, -1.0]
var = [0.25, 0.25]
condition = "a"

[[world.components]]
weight = 0.4
mean = [0.0, 2.0]
var = [0.25, 0.25]
condition = "b"

{student}

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
teacher_w = {teacher_w}

[cfg]
w = 1.0
condition = "a"
"#
    )
}

fn main() {
    let students = [
        ("biased-mean", "[student]\nkind = \"biased-mean\"\ndelta = [0.25, 0.25]"),
        (
            "biased-weights",
            "[student]\nkind = \"biased-weights\"\nperturbation = [0.2, -0.2, 0.2]",
        ),
        ("consistency", "[student]\nkind = \"consistency-endpoint\"\nn_inner = 8"),
    ];
    for teacher_w in [7.5, 2.0] {
        for seed in [424242u64, 7u64, 99u64] {
            for (name, student) in &students {
                let text = config_text(student, seed, teacher_w);
                let config = parse_config(&text).unwrap();
                let (reference, _) = reference_samples(&config).unwrap();
                let analytic = generate_analytic_samples(&config, 10_000).unwrap();
                let sw = |set: &SampleSet| {
                    let mut rng = RngStream::new(config.seed, STREAM_PROJECTIONS);
                    sliced_wasserstein(&reference, set, 64, &mut rng).unwrap()
                };
                let floor_ind = sw(&analytic);
                let (base, _) = generate_samples(&config, &VariantSpec::baseline("b")).unwrap();
                let sw_base = sw(&base);
                print!("w={teacher_w} seed={seed} {name:>14}: floor={floor_ind:.5} base={sw_base:.5}");
                for lambda in [0.02, 0.1] {
                    let g = GuidanceConfig { lambda, k: 1, teacher_w, ..GuidanceConfig::default() };
                    let (guided, _) = generate_samples(&config, &VariantSpec::guided("g", g)).unwrap();
                    print!("  l={lambda}: gap={:+.5}", sw_base - sw(&guided));
                }
                println!();
            }
            let text = config_text(students[0].1, seed, teacher_w);
            let config = parse_config(&text).unwrap();
            let (reference, _) = reference_samples(&config).unwrap();
            let sw = |set: &SampleSet| {
                let mut rng = RngStream::new(config.seed, STREAM_PROJECTIONS);
                sliced_wasserstein(&reference, set, 64, &mut rng).unwrap()
            };
            let (base, _) = generate_samples(&config, &VariantSpec::baseline("b")).unwrap();
            print!("w={teacher_w} seed={seed} ablation: baseline={:.5}", sw(&base));
            for renoise in [RenoiseSchedule::Decreasing, RenoiseSchedule::Random, RenoiseSchedule::Same] {
                let g = GuidanceConfig { lambda: 0.02, k: 1, renoise, teacher_w, ..GuidanceConfig::default() };
                let (guided, _) = generate_samples(&config, &VariantSpec::guided("g", g)).unwrap();
                print!("  {renoise:?}={:.5}", sw(&guided));
            }
            println!();
        }
    }
}
