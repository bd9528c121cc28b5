//! Accuracy on pairs the two annotator groups disagree about, for the
//! latent model and the context-free baselines.

use vpl_lab::harness::{budget_config, divergent_accuracy, fresh_eval_records, init_model, prepare_data, train_reward, Budget};
use vpl_lab::models::ModelKind;

fn main() -> vpl_lab::error::Result<()> {
    let noise: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let mut base = budget_config("pets", Budget::Desk)?;
    base.data.noise_rate = noise;
    for kind in [ModelKind::Vpl, ModelKind::Btl, ModelKind::DplMeanVar, ModelKind::DplCategorical] {
        let cfg = base.clone().with_model(kind);
        let data = prepare_data(&cfg)?;
        let mut model = init_model(&cfg, data.world.feature_dim())?;
        train_reward(&cfg, &mut model, &data)?;
        let fresh = fresh_eval_records(&cfg, &data.world, 8000, &data.train)?;
        let acc = divergent_accuracy(&model, &data.world, &fresh)?;
        println!("{:<16} divergent accuracy {:.3} over {} pairs (context noise {noise})", kind.name(), acc.overall, acc.n);
    }
    Ok(())
}
