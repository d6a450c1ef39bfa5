//! Quick self-check of the numeric core against slow reference computations,
//! run by `d4pg selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dist::{
    categorical_cross_entropy, mog_cross_entropy, project_categorical, softmax, MoGParams, ProjectedTarget,
    Support,
};
use crate::learner::{actor_eval, actor_spec, critic_spec, ActionScale, Head, HeadConfig};
use crate::replay::{NStepAccumulator, StepEnd, SumTree};
use crate::Net;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, worst: f64, tol: f64) -> CheckResult {
    CheckResult {
        name,
        passed: worst <= tol,
        detail: format!("worst error {worst:.3e} (tolerance {tol:.0e})"),
    }
}

/// Relative error; magnitudes below 1e-3 are compared absolutely against that floor.
fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

fn central<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], i: usize, h: f64) -> f64 {
    let mut p = x.to_vec();
    let mut m = x.to_vec();
    p[i] += h;
    m[i] -= h;
    (f(&p) - f(&m)) / (2.0 * h)
}

fn projection(rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(2..=101);
        let lo = rng.random_range(-50.0..0.0);
        let support = Support::new(n, lo, lo + rng.random_range(0.5..100.0)).unwrap();
        let probs = softmax(&(0..n).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<f64>>());
        let atoms: Vec<f64> = (0..n).map(|_| rng.random_range(lo - 10.0..support.v_max() + 10.0)).collect();
        let got = project_categorical(&atoms, &probs, &support).unwrap();
        let z = support.atoms();
        for (i, g) in got.probs().iter().enumerate() {
            let want: f64 = atoms
                .iter()
                .zip(&probs)
                .map(|(&a, &p)| {
                    let a = a.clamp(support.v_min(), support.v_max());
                    p * (1.0 - (a - z[i]).abs() / support.delta()).max(0.0)
                })
                .sum();
            worst = worst.max((g - want).abs());
        }
    }
    check("projection matches hat-kernel sum", worst, 1e-12)
}

fn cross_entropy(rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(2..20);
        let target = ProjectedTarget::new(softmax(&(0..n).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>())).unwrap();
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (_, grad) = categorical_cross_entropy(&target, &logits).unwrap();
        for (i, g) in grad.iter().enumerate() {
            let fd = central(|l| categorical_cross_entropy(&target, l).unwrap().0, &logits, i, 1e-5);
            worst = worst.max(rel(*g, fd));
        }
    }
    check("cross-entropy gradient", worst, 1e-5)
}

fn mixture(rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let k = rng.random_range(1..5);
        let out: Vec<f64> = (0..3 * k).map(|_| rng.random_range(-1.5..1.5)).collect();
        let zs: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (r, d) = (rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0));
        let loss = |o: &[f64]| mog_cross_entropy(&MoGParams::from_output(o).unwrap(), r, d, &zs).unwrap().loss;
        let grads = mog_cross_entropy(&MoGParams::from_output(&out).unwrap(), r, d, &zs).unwrap().grads;
        for (i, g) in grads.iter().enumerate() {
            worst = worst.max(rel(*g, central(loss, &out, i, 1e-5)));
        }
    }
    check("mixture loss gradient", worst, 1e-5)
}

fn actor_chain(rng: &mut ChaCha8Rng) -> CheckResult {
    let scale = ActionScale::from_bounds(&[(-2.0, 2.0)]).unwrap();
    let head = Head::new(&HeadConfig::Categorical { atoms: 11, v_min: -1.0, v_max: 1.0 }).unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let actor = Net::new(actor_spec(3, 1, &[6]).unwrap(), seed).unwrap();
        let critic = Net::new(critic_spec(3, 1, &[6], 11).unwrap(), seed + 100).unwrap();
        let obs: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eval = actor_eval(&actor, &critic, &head, &scale, &obs, 4).unwrap();
        let params: Vec<f64> = actor.params().copied().collect();
        for i in 0..params.len() {
            let fd = central(
                |p| {
                    let mut a = actor.clone();
                    a.params_mut().zip(p).for_each(|(d, s)| *d = *s);
                    actor_eval(&a, &critic, &head, &scale, &obs, 4).unwrap().objective
                },
                &params,
                i,
                1e-5,
            );
            worst = worst.max(rel(eval.grads.get(i), fd));
        }
    }
    check("actor chain gradient", worst, 1e-4)
}

fn nstep(rng: &mut ChaCha8Rng) -> CheckResult {
    let gamma = 0.97;
    let mut mismatches = 0;
    for horizon in [1usize, 5] {
        let len = rng.random_range(3..15);
        let rewards: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut acc = NStepAccumulator::new(horizon, gamma).unwrap();
        let mut out = Vec::new();
        for (t, &r) in rewards.iter().enumerate() {
            let end = if t + 1 == len { StepEnd::Terminal } else { StepEnd::Continue };
            out.extend(acc.push(vec![t as f64], vec![0.0], r, &[t as f64 + 1.0], end).unwrap());
        }
        for (i, tr) in out.iter().enumerate() {
            let k = horizon.min(len - i);
            let mut sum = rewards[i];
            let mut g = gamma;
            for r in &rewards[i + 1..i + k] {
                sum += g * r;
                g *= gamma;
            }
            let disc = if i + k == len { 0.0 } else { g };
            if tr.reward.to_bits() != sum.to_bits() || tr.discount.to_bits() != disc.to_bits() {
                mismatches += 1;
            }
        }
    }
    CheckResult {
        name: "n-step returns",
        passed: mismatches == 0,
        detail: format!("{mismatches} mismatching transitions"),
    }
}

fn sum_tree(rng: &mut ChaCha8Rng) -> CheckResult {
    let mut tree = SumTree::new(1000);
    for _ in 0..10_000 {
        let leaf = rng.random_range(0..1000);
        tree.set(leaf, rng.random_range(0.0..5.0));
    }
    let direct: f64 = tree.leaves().iter().sum();
    check("sum-tree root", (tree.total() - direct).abs(), 1e-6)
}

/// Run every check with a fixed seed.
pub fn run() -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f);
    vec![
        projection(&mut rng),
        cross_entropy(&mut rng),
        mixture(&mut rng),
        actor_chain(&mut rng),
        nstep(&mut rng),
        sum_tree(&mut rng),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
