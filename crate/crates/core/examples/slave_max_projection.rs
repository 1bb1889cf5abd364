//! Project the slowest-slave time from a few measured slaves to many.
//!
//! cargo run --example slave_max_projection

use odys::model::{slave_max_partitioning, SojournSampleSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for sigma in [0.1, 0.25, 0.5] {
        let d = LogNormal::new(0.0, sigma)?;
        // 5 slaves measured 60 times each: 300 samples per query.
        let per_query = (0..100)
            .map(|_| (0..300).map(|_| d.sample(&mut rng)).collect())
            .collect();
        let s = SojournSampleSet::new(5, 60, per_query)?;
        let row: Vec<String> = [1, 5, 10, 50, 100, 300]
            .iter()
            .map(|&ns| format!("{ns}:{:.3}", slave_max_partitioning(&s, ns).unwrap()))
            .collect();
        println!("sigma {sigma}: {}", row.join("  "));
    }
    Ok(())
}
