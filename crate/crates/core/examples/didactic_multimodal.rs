//! Four annotators with Gaussian bumps at different points of [0, 1]. A
//! latent-conditioned model recovers each bump; a single reward cannot.

use vpl_lab::harness::{budget_config, init_model, prepare_data, train_reward, user_correlations, Budget};
use vpl_lab::models::ModelKind;

fn main() -> vpl_lab::error::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    for kind in [ModelKind::Vpl, ModelKind::Btl] {
        let cfg = budget_config("didactic", Budget::Desk)?.with_model(kind).with_seed(seed);
        let data = prepare_data(&cfg)?;
        let mut model = init_model(&cfg, data.world.feature_dim())?;
        let (_, report) = train_reward(&cfg, &mut model, &data)?;
        let corr = user_correlations(&model, &data.world, &data.dataset.records)?;
        let acc = report.heldout.map(|h| h.overall).unwrap_or(f64::NAN);
        println!("{:<4} held-out accuracy {acc:.3}", kind.name());
        for (u, c) in corr.iter().enumerate() {
            println!("     user {u}: correlation with the true reward {c:+.3}");
        }
    }
    Ok(())
}
