//! Scores candidate query batches by the information their labels carry
//! about the user latent, then compares chosen and random batches when
//! adapting the maze policy to a new user.

use vpl_lab::active::{mutual_information, select_queries, QueryPair, SearchMode};
use vpl_lab::autodiff::SeededRng;
use vpl_lab::harness::{
    budget_config, eval_active, init_model, prepare_data, train_policy_for, train_reward, Budget, QueryStrategy,
};

fn main() -> vpl_lab::error::Result<()> {
    let mut cfg = budget_config("maze2", Budget::Desk)?;
    cfg.eval.episodes = 40;
    let data = prepare_data(&cfg)?;
    let mut model = init_model(&cfg, data.world.feature_dim())?;
    train_reward(&cfg, &mut model, &data)?;

    let mut rng = SeededRng::new(11);
    let pool: Vec<QueryPair> = (0..60).map(|_| data.world.sample_context_pair(&mut rng)).collect::<Result<_, _>>()?;
    let chosen = select_queries(&model, &pool, 2, SearchMode::Sampled(200), 512, &SeededRng::new(12))?;
    let random = mutual_information(&model, &pool[..2], 512, &SeededRng::new(13))?;
    println!("chosen batch {:?}: {:.3} nats (± {:.3})", chosen.indices, chosen.mi.value, chosen.mi.tolerance());
    println!("first two pool pairs: {:.3} nats (± {:.3})", random.value, random.tolerance());

    let policy = train_policy_for(&cfg, &data.world, &model)?;
    for q in [1, 2, 4] {
        for strategy in [QueryStrategy::Active, QueryStrategy::Random] {
            let r = eval_active(&cfg, &data.world, &model, Some(&policy), q, strategy)?;
            println!("Q={q} {:<6} success {:.3}", strategy.name(), r.mean);
        }
    }
    Ok(())
}
