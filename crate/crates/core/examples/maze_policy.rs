//! Reward learning, offline relabeling and latent-conditioned planning on
//! the two-goal maze, against the true-reward and random baselines.

use vpl_lab::harness::{
    budget_config, build_world, eval_policy, eval_rng, init_model, prepare_data, train_policy_for, train_reward, Budget,
};
use vpl_lab::models::ModelKind;
use vpl_lab::policy::{eval_oracle, eval_random};

fn main() -> vpl_lab::error::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let base = budget_config("maze2", Budget::Desk)?.with_seed(seed);
    for kind in [ModelKind::Vpl, ModelKind::Btl] {
        let cfg = base.clone().with_model(kind);
        let data = prepare_data(&cfg)?;
        let mut model = init_model(&cfg, data.world.feature_dim())?;
        train_reward(&cfg, &mut model, &data)?;
        let policy = train_policy_for(&cfg, &data.world, &model)?;
        let report = eval_policy(&cfg, &data.world, &model, Some(&policy))?;
        println!("{:<7} success {:.3}  per user {:?}", kind.name(), report.mean, report.per_user);
    }
    let world = build_world(&base)?;
    let oracle = eval_oracle(&world, base.eval.episodes, &eval_rng(&base))?;
    let random = eval_random(&world, base.eval.episodes, &eval_rng(&base))?;
    println!("oracle  success {:.3}", oracle.mean);
    println!("random  success {:.3}", random.mean);
    Ok(())
}
