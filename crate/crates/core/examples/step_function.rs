//! Recover the location of a jump from noisy data: the MAP tree's split
//! against the true step.
//!
//! ```text
//! cargo run --release --example step_function
//! ```

use treed_gp::cli_io::synthetic::StepFunction;
use treed_gp::sampler::{map_tree, run_chains, McmcConfig, ModelSpec};
use treed_gp::tree::Node;

fn main() -> treed_gp::error::Result<()> {
    let step = StepFunction::default();
    let spec = ModelSpec::defaults(1);
    for seed in 0..5 {
        let data = step.generate(seed)?;
        let run = run_chains(&data.x, &data.z, &spec, &McmcConfig::new(3_000, 1_000, 2, 1, seed))?;
        let map = map_tree(&run.samples)?;
        let split = match map.tree.root() {
            Node::Split { rule, .. } => format!("{:.4}", data.scale.unscale_x(&[rule.value])[0]),
            Node::Leaf(_) => "none".into(),
        };
        let mean_leaves =
            run.samples.iter().map(|s| s.num_leaves() as f64).sum::<f64>() / run.samples.len() as f64;
        println!(
            "seed {seed}: MAP split {split} (truth {}, grid cell {:.4}), mean leaves {mean_leaves:.2}",
            step.split,
            step.cell()
        );
    }
    Ok(())
}
