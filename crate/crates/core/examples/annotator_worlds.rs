//! Builds each world preset, samples a context-augmented dataset and counts
//! how often a target pair splits the annotators.

use vpl_lab::autodiff::SeededRng;
use vpl_lab::worlds::{build_dataset, inject_label_noise, make_world, NoiseScope, WorldParams};

fn main() -> vpl_lab::error::Result<()> {
    for name in ["didactic", "maze2", "maze10", "rearrange", "pets", "tidy"] {
        let params = WorldParams::preset(name)?;
        let world = make_world(&params, &mut SeededRng::new(0))?;
        let ds = build_dataset(&world, 400, 4, 30, 2, None, &SeededRng::new(1))?;
        let mut divergent = 0;
        for r in &ds.records {
            divergent += usize::from(world.is_divergent(&r.target.sa, &r.target.sb)?);
        }
        let noisy = inject_label_noise(&ds, 0.25, NoiseScope::ContextOnly, &SeededRng::new(2))?;
        let flipped = ds
            .records
            .iter()
            .zip(&noisy.records)
            .flat_map(|(a, b)| a.ctx.iter().zip(&b.ctx))
            .filter(|(a, b)| a.label != b.label)
            .count();
        let ctx_total: usize = ds.records.iter().map(|r| r.ctx.len()).sum();
        println!(
            "{name:<10} users {:>3}  feature dim {:>2}  records {}  divergent targets {:>5.1}%  context flips at 0.25: {:.3}",
            world.num_users(),
            world.feature_dim(),
            ds.len(),
            100.0 * divergent as f64 / ds.len() as f64,
            flipped as f64 / ctx_total as f64,
        );
    }
    Ok(())
}
