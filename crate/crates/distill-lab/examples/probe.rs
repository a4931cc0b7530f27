// Scratch probe for acceptance-world tuning.

use distill_lab::harness::{
    generate_analytic_samples, generate_samples, parse_config, reference_samples, VariantSpec,
};
use distill_lab::metrics::{sliced_wasserstein, SampleSet};
use distill_lab::rng::{RngStream, STREAM_PROJECTIONS};
use distill_lab::{GuidanceConfig, RenoiseSchedule};

fn config_text(student: &str, seed: u64, sep: f64) -> String {
    format!(
        r#"
seed = {seed}
n_samples = 10000

[world]
dim = 2

[[world.components]]
weight = 0.45
mean = [{m1}, {mneg}]
var = [0.25, 0.25]
condition = "a"

[[world.components]]
weight = 0.3
mean = [{m2}, {mneg}]
var = [0.25, 0.25]
condition = "a"

[[world.components]]
weight = 0.25
mean = [0.0, {m3}]
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

[cfg]
w = 1.0
"#,
        m1 = -sep,
        m2 = sep,
        mneg = -sep / 2.0,
        m3 = sep,
    )
}

fn paired_bootstrap_floor(
    reference: &SampleSet,
    base: &SampleSet,
    guided: &SampleSet,
    seed: u64,
) -> f64 {
    let n = base.len();
    let mut rng = RngStream::new(seed, 999_999);
    let mut gaps = Vec::new();
    for _ in 0..100 {
        let idx: Vec<usize> = (0..n).map(|_| rng.index(n)).collect();
        let b = SampleSet::from_rows(&idx.iter().map(|&i| base.row(i).to_vec()).collect::<Vec<_>>(), "b").unwrap();
        let g = SampleSet::from_rows(&idx.iter().map(|&i| guided.row(i).to_vec()).collect::<Vec<_>>(), "g").unwrap();
        let mut r1 = RngStream::new(seed, STREAM_PROJECTIONS);
        let mut r2 = RngStream::new(seed, STREAM_PROJECTIONS);
        let sb = sliced_wasserstein(reference, &b, 64, &mut r1).unwrap();
        let sg = sliced_wasserstein(reference, &g, 64, &mut r2).unwrap();
        gaps.push(sb - sg);
    }
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let var = gaps.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (gaps.len() - 1) as f64;
    3.0 * var.sqrt()
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
    for sep in [2.0, 4.0] {
        for seed in [424242u64, 7u64] {
            for (name, student) in &students {
                let text = config_text(student, seed, sep);
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
                print!("sep={sep} seed={seed} {name:>14}: floor_ind={floor_ind:.5} base={sw_base:.5}");
                for lambda in [0.02, 0.1] {
                    let g = GuidanceConfig { lambda, k: 1, ..GuidanceConfig::default() };
                    let (guided, _) = generate_samples(&config, &VariantSpec::guided("g", g)).unwrap();
                    let sw_g = sw(&guided);
                    let floor_paired = paired_bootstrap_floor(&reference, &base, &guided, config.seed);
                    print!(
                        "  l={lambda}: gap={:+.5} fp={:.5} {}",
                        sw_base - sw_g,
                        floor_paired,
                        if sw_base - sw_g > floor_paired { "OK" } else { "xx" }
                    );
                }
                println!();
            }
            // Ablation: biased-mean, lambda 0.02.
            let text = config_text(students[0].1, seed, sep);
            let config = parse_config(&text).unwrap();
            let (reference, _) = reference_samples(&config).unwrap();
            let sw = |set: &SampleSet| {
                let mut rng = RngStream::new(config.seed, STREAM_PROJECTIONS);
                sliced_wasserstein(&reference, set, 64, &mut rng).unwrap()
            };
            let (base, _) = generate_samples(&config, &VariantSpec::baseline("b")).unwrap();
            print!("sep={sep} seed={seed} ablation: baseline={:.5}", sw(&base));
            for renoise in [RenoiseSchedule::Decreasing, RenoiseSchedule::Random, RenoiseSchedule::Same] {
                let g = GuidanceConfig { lambda: 0.02, k: 1, renoise, ..GuidanceConfig::default() };
                let (guided, _) = generate_samples(&config, &VariantSpec::guided("g", g)).unwrap();
                print!("  {renoise:?}={:.5}", sw(&guided));
            }
            println!();
        }
    }
}
