// Scratch probe: solver convergence orders.

use std::sync::Arc;
use distill_lab::harness::{run_convergence_study, ExperimentOutputs};
use distill_lab::world::{Component, MixtureWorld};

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    num / den
}

fn main() {
    let world = Arc::new(
        MixtureWorld::new(
            1,
            vec![Component { weight: 1.0, mean: vec![0.7], var: vec![0.4], condition: String::new() }],
        )
        .unwrap(),
    );
    let step_counts = [8usize, 16, 32, 64];
    let mut out = ExperimentOutputs::default();
    run_convergence_study(&world, 99, &step_counts, 16, &mut out).unwrap();
    for solver in ["ddim", "euler-ve", "dpmpp-2s", "dpmpp-2m"] {
        let mut lx = vec![];
        let mut ly = vec![];
        for &m in &step_counts {
            let v = out.table.value(&format!("{solver}:{m}"), "endpoint_error").unwrap();
            lx.push((m as f64).ln());
            ly.push(v.ln());
            print!("{solver} M={m}: {v:.3e}  ");
        }
        println!("slope = {:.3}", -slope(&lx, &ly));
    }
}
