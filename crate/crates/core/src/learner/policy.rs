use rand::Rng;

/// ε-greedy choice; greedy ties go to the lowest index.
pub fn select_action<R: Rng + ?Sized>(q_values: &[f64], epsilon: f64, rng: &mut R) -> usize {
    debug_assert!((0.0..=1.0).contains(&epsilon));
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return rng.random_range(0..q_values.len());
    }
    argmax(q_values)
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// Linear anneal from `start` to `end` over the first `fraction` of `total` steps.
pub fn epsilon_at(step: usize, total: usize, start: f64, end: f64, fraction: f64) -> f64 {
    let horizon = (fraction * total as f64).max(1.0);
    let progress = step as f64 / horizon;
    if progress >= 1.0 {
        end
    } else {
        start + progress * (end - start)
    }
}
