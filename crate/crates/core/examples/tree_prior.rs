//! The tree prior: split probabilities by depth, and the tree-size
//! distribution visited by the reversible-jump moves when the likelihood
//! is flat.
//!
//! ```text
//! cargo run --release --example tree_prior
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treed_gp::tree::{split_prob, step, FlatModel, MoveWeights, SplitContext, Tree};

fn main() -> treed_gp::error::Result<()> {
    let (a, b) = (0.5, 2.0);
    for depth in 0..5 {
        println!("depth {depth}: split probability {:.4}", split_prob(depth, a, b)?);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<Vec<f64>> = (0..100).map(|_| vec![rng.random(), rng.random()]).collect();
    let ctx = SplitContext::new(&x, 5, a, b)?;
    let mut tree = Tree::new((0..x.len()).collect::<Vec<usize>>());
    let weights = MoveWeights::default();
    let rounds = 50_000;
    let mut counts = [0usize; 8];
    for _ in 0..rounds {
        step(&mut tree, &FlatModel, &ctx, &weights, &mut rng)?;
        counts[tree.num_leaves().min(7)] += 1;
    }
    println!("leaf count frequencies over {rounds} prior-only rounds:");
    for (k, c) in counts.iter().enumerate().skip(1) {
        println!("  {k}{} {:.4}", if k == 7 { "+" } else { " " }, *c as f64 / rounds as f64);
    }
    Ok(())
}
