//! Partition schemes and the probability-p timestep sampler.

use o2mkd::distill::{sample_timesteps, Branch};
use o2mkd::ensemble::{Partition, PartitionScheme};
use o2mkd::rng::{stream, Stream};

fn main() -> o2mkd::Result<()> {
    for scheme in [PartitionScheme::Uniform, PartitionScheme::SchemeA, PartitionScheme::SchemeB] {
        let p = Partition::new(scheme, 4, 1000)?;
        println!("{scheme:?}: {:?}", p.boundaries);
    }

    let partition = Partition::uniform(4, 1000)?;
    let mut rng = stream(0, Stream::Timesteps);
    for p in [0.0, 0.5, 1.0] {
        let (mut in_range, mut range_branch, mut n) = (0usize, 0usize, 0usize);
        for _ in 0..2000 {
            let draw = sample_timesteps(&mut rng, 16, 2, &partition, p)?;
            range_branch += usize::from(draw.branch == Branch::Range);
            in_range += draw.timesteps.iter().filter(|&&t| (250..500).contains(&t)).count();
            n += draw.timesteps.len();
        }
        println!(
            "p = {p}: range branch {:.3}, timesteps inside student 2's range {:.3}",
            range_branch as f64 / 2000.0,
            in_range as f64 / n as f64
        );
    }
    Ok(())
}
