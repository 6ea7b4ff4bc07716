use super::buffer::RolloutBuffer;
use crate::environment::{reward, Env};
use crate::networks::{observation_matrix, sample_action, ActorCritic};
use crate::scalar::Real;

/// Steps every env `n_steps` times with the stochastic policy.
///
/// Per env and step the env's own rng stream is consumed in this order: one
/// normal draw for the action, one uniform draw for truncation, four normal
/// draws if the env is reset. Truncated envs are reset in place; a step on
/// which the simulator diverges is recorded as truncated, scored on the
/// pre-step observation and bootstrapped with the pre-step values.
pub fn collect_rollouts<T: Real>(
    envs: &mut [Env<T>],
    model: &ActorCritic<T>,
    n_steps: usize,
) -> RolloutBuffer<T> {
    let n_envs = envs.len();
    let mut buf = RolloutBuffer::new(n_envs, n_steps);
    let mut obs: Vec<_> = envs.iter().map(Env::observation).collect();
    let mut values = model.critic.forward(&observation_matrix(&obs));
    let std = model.policy.std();

    for t in 0..n_steps {
        let means = model.policy.means(&observation_matrix(&obs));
        let mut pre_reset = Vec::new();
        let mut bootstrapped = vec![false; n_envs];
        for (e, env) in envs.iter_mut().enumerate() {
            let i = buf.index(e, t);
            buf.observations[i] = obs[e];
            buf.v_r[i] = values[[e, 0]];
            buf.v_e[i] = values[[e, 1]];
            let (action, lp) = sample_action(means[e], std, env.rng_mut());
            buf.actions[i] = action;
            buf.log_probs[i] = lp;
            match env.step(action, None) {
                Ok(out) => {
                    buf.rewards[i] = out.reward;
                    if out.truncated {
                        buf.truncated[i] = true;
                        bootstrapped[e] = true;
                        pre_reset.push((e, out.next_observation));
                        env.reset();
                    }
                }
                Err(_) => {
                    buf.rewards[i] = reward(&obs[e], action, &env.cfg);
                    buf.truncated[i] = true;
                    buf.next_v_r[i] = buf.v_r[i];
                    buf.next_v_e[i] = buf.v_e[i];
                    bootstrapped[e] = true;
                    buf.diverged_steps += 1;
                    env.reset();
                }
            }
            obs[e] = env.observation();
        }
        if !pre_reset.is_empty() {
            let x: Vec<_> = pre_reset.iter().map(|(_, o)| *o).collect();
            let v = model.critic.forward(&observation_matrix(&x));
            for (k, (e, _)) in pre_reset.iter().enumerate() {
                let i = buf.index(*e, t);
                buf.next_v_r[i] = v[[k, 0]];
                buf.next_v_e[i] = v[[k, 1]];
            }
        }
        values = model.critic.forward(&observation_matrix(&obs));
        for e in 0..n_envs {
            if !bootstrapped[e] {
                let i = buf.index(e, t);
                buf.next_v_r[i] = values[[e, 0]];
                buf.next_v_e[i] = values[[e, 1]];
            }
        }
    }
    buf
}
