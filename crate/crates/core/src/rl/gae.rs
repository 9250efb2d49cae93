//! Generalized advantage estimation with variable-length sojourn discounting.
//!
//! Each transition spans `j` seconds, so its one-step bootstrap discounts the
//! next value by `gamma^j` rather than a single `gamma`. The recursive
//! smoothing weight is `gamma^j * lambda`: only the time-discount scales with
//! the sojourn, the eligibility decay does not.

use super::buffer::Transition;

/// Backward-recursive advantages and value targets.
///
/// `delta_t = r_t + gamma^{j_t} * value_next_t - value_t`;
/// `A_t = delta_t + gamma^{j_t} * lambda * A_{t+1}`, with the recursion
/// restarting after transitions flagged done and at the end of the slice.
/// Returns `(advantages, returns)` where `returns_t = A_t + value_t`.
pub fn gae_smdp(items: &[Transition], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = items.len();
    let mut advantages = vec![0.0; n];
    let mut returns = vec![0.0; n];
    let mut next_adv = 0.0;
    for i in (0..n).rev() {
        let t = &items[i];
        let discount = gamma.powf(t.sojourn_s);
        let delta = t.reward + discount * t.value_next - t.value;
        if t.done {
            next_adv = 0.0;
        }
        let adv = delta + discount * lambda * next_adv;
        advantages[i] = adv;
        returns[i] = adv + t.value;
        next_adv = adv;
    }
    (advantages, returns)
}

/// In-place shift to zero mean and unit (population) standard deviation.
/// A nearly-constant batch is zeroed instead of amplified.
pub fn normalize_advantages(advantages: &mut [f64]) {
    let n = advantages.len() as f64;
    if n == 0.0 {
        return;
    }
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std > 1e-12 {
        for a in advantages.iter_mut() {
            *a = (*a - mean) / std;
        }
    } else {
        for a in advantages.iter_mut() {
            *a = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(reward: f64, sojourn_s: f64, value: f64, value_next: f64, done: bool) -> Transition {
        Transition {
            state: vec![],
            action: 0.0,
            reward,
            sojourn_s,
            log_prob: 0.0,
            value,
            value_next,
            done,
        }
    }

    /// Literal product-sum expansion:
    /// `A_t = sum_k delta_{t+k} * prod_{m<k} (gamma^{j_{t+m}} * lambda)`,
    /// truncated after a done flag or the end of the slice.
    fn brute_force(items: &[Transition], gamma: f64, lambda: f64) -> Vec<f64> {
        let n = items.len();
        let delta: Vec<f64> = items
            .iter()
            .map(|t| t.reward + gamma.powf(t.sojourn_s) * t.value_next - t.value)
            .collect();
        (0..n)
            .map(|t| {
                let mut total = 0.0;
                let mut weight = 1.0;
                for k in t..n {
                    total += weight * delta[k];
                    if items[k].done {
                        break;
                    }
                    weight *= gamma.powf(items[k].sojourn_s) * lambda;
                }
                total
            })
            .collect()
    }

    #[test]
    fn delta_uses_sojourn_scaled_discount() {
        let items = vec![tr(1.0, 2.0, 2.0, 4.0, true)];
        let (adv, ret) = gae_smdp(&items, 0.5, 0.9);
        // 1 + 0.5^2 * 4 - 2 = 0.
        assert!(adv[0].abs() < 1e-15);
        assert!((ret[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn matches_brute_force_on_handmade_episode() {
        let items = vec![
            tr(-0.4, 27.5, -1.2, -1.0, false),
            tr(-0.7, 44.5, -1.0, -0.8, false),
            tr(-0.2, 15.0, -0.8, 0.0, true),
        ];
        let (adv, _) = gae_smdp(&items, 0.995, 0.99);
        let oracle = brute_force(&items, 0.995, 0.99);
        for (a, o) in adv.iter().zip(&oracle) {
            assert!((a - o).abs() < 1e-12, "{a} vs {o}");
        }
    }

    #[test]
    fn matches_brute_force_across_episode_boundaries() {
        let mut items = Vec::new();
        let mut x = 0.37;
        for i in 0..40 {
            // Deterministic pseudo-random fixture without an RNG dependency.
            x = (x * 73.3 + 0.17) % 1.0;
            let done = i % 9 == 8;
            items.push(tr(
                -x,
                5.0 + 40.0 * ((x * 7.0) % 1.0),
                x - 0.5,
                if done { 0.0 } else { x * 0.3 },
                done,
            ));
        }
        let (adv, ret) = gae_smdp(&items, 0.995, 0.99);
        let oracle = brute_force(&items, 0.995, 0.99);
        for (a, o) in adv.iter().zip(&oracle) {
            assert!((a - o).abs() < 1e-12);
        }
        for ((a, r), t) in adv.iter().zip(&ret).zip(&items) {
            assert!((r - (a + t.value)).abs() < 1e-15);
        }
    }

    #[test]
    fn unit_sojourn_reduces_to_textbook_gae() {
        let items = vec![
            tr(1.0, 1.0, 0.5, 0.6, false),
            tr(-0.3, 1.0, 0.6, 0.2, false),
            tr(0.8, 1.0, 0.2, 0.0, true),
        ];
        let (gamma, lambda) = (0.99, 0.95);
        let (adv, _) = gae_smdp(&items, gamma, lambda);

        // Textbook recursion with scalar gamma.
        let mut expect = vec![0.0; 3];
        let mut next = 0.0;
        for i in (0..3).rev() {
            let t = &items[i];
            let delta = t.reward + gamma * t.value_next - t.value;
            if t.done {
                next = 0.0;
            }
            expect[i] = delta + gamma * lambda * next;
            next = expect[i];
        }
        for (a, e) in adv.iter().zip(&expect) {
            assert_eq!(a, e, "j=1 must be bit-identical to the scalar recursion");
        }
    }

    #[test]
    fn normalization_produces_zero_mean_unit_std() {
        let mut adv: Vec<f64> = (0..1200).map(|i| ((i * 37) % 101) as f64 - 50.0).collect();
        normalize_advantages(&mut adv);
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 1e-6, "std {}", var.sqrt());
    }

    #[test]
    fn constant_advantages_normalize_to_zero() {
        let mut adv = vec![3.25; 16];
        normalize_advantages(&mut adv);
        assert!(adv.iter().all(|a| *a == 0.0));
    }
}
