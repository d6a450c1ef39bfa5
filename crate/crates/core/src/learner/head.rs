use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{
    bellman_shift, categorical_cross_entropy, mog_cross_entropy, project_categorical, scalar_td_loss,
    softmax, HeadKind, MoGParams, ProjectedTarget, Support,
};
use crate::error::{Error, Result};
use crate::replay::Transition;
use crate::scalar::Scalar;

/// Critic output parameterization together with its hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum HeadConfig {
    Categorical { atoms: usize, v_min: f64, v_max: f64 },
    MixtureOfGaussians { components: usize, samples: usize },
    Scalar,
}

impl HeadConfig {
    pub fn kind(&self) -> HeadKind {
        match self {
            HeadConfig::Categorical { .. } => HeadKind::Categorical,
            HeadConfig::MixtureOfGaussians { .. } => HeadKind::MixtureOfGaussians,
            HeadConfig::Scalar => HeadKind::Scalar,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head<T> {
    Categorical(Support<T>),
    MixtureOfGaussians { components: usize, samples: usize },
    Scalar,
}

/// Per-sample regression targets for one batch.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets<T> {
    Categorical(Vec<ProjectedTarget<T>>),
    /// `(cumulative reward, effective discount, target-mixture samples)`.
    MixtureOfGaussians(Vec<(T, T, Vec<T>)>),
    Scalar(Vec<T>),
}

impl<T> Targets<T> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Categorical(v) => v.len(),
            Targets::MixtureOfGaussians(v) => v.len(),
            Targets::Scalar(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loss of one sample, its gradient with respect to the critic output row,
/// and the error signal used for its replay priority.
pub(crate) struct SampleLoss<T> {
    pub loss: T,
    pub grad: Vec<T>,
    pub error: f64,
    pub clamped: usize,
}

impl<T: Scalar> Head<T> {
    pub fn new(cfg: &HeadConfig) -> Result<Self> {
        match *cfg {
            HeadConfig::Categorical { atoms, v_min, v_max } => {
                Ok(Head::Categorical(Support::new(atoms, T::of(v_min), T::of(v_max))?))
            }
            HeadConfig::MixtureOfGaussians { components, samples } => {
                if components == 0 || samples == 0 {
                    return Err(Error::Config(
                        "mixture head needs at least one component and one target sample".into(),
                    ));
                }
                Ok(Head::MixtureOfGaussians { components, samples })
            }
            HeadConfig::Scalar => Ok(Head::Scalar),
        }
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            Head::Categorical(_) => HeadKind::Categorical,
            Head::MixtureOfGaussians { .. } => HeadKind::MixtureOfGaussians,
            Head::Scalar => HeadKind::Scalar,
        }
    }

    /// Width of the critic output layer.
    pub fn output_dim(&self) -> usize {
        match self {
            Head::Categorical(s) => s.num_atoms(),
            Head::MixtureOfGaussians { components, .. } => 3 * components,
            Head::Scalar => 1,
        }
    }

    /// Expected value of the distribution encoded by one output row.
    pub fn expectation(&self, row: &[T]) -> T {
        match self {
            Head::Categorical(s) => softmax(row).iter().zip(s.atoms()).map(|(&p, &z)| p * z).sum(),
            Head::MixtureOfGaussians { components, .. } => {
                let k = *components;
                softmax(&row[..k]).iter().zip(&row[k..2 * k]).map(|(&w, &m)| w * m).sum()
            }
            Head::Scalar => row[0],
        }
    }

    /// Gradient of [`Head::expectation`] with respect to the output row.
    pub fn expectation_grad(&self, row: &[T]) -> Vec<T> {
        match self {
            Head::Categorical(s) => {
                let p = softmax(row);
                let mean: T = p.iter().zip(s.atoms()).map(|(&p, &z)| p * z).sum();
                p.iter().zip(s.atoms()).map(|(&p, &z)| p * (z - mean)).collect()
            }
            Head::MixtureOfGaussians { components, .. } => {
                let k = *components;
                let w = softmax(&row[..k]);
                let means = &row[k..2 * k];
                let mean: T = w.iter().zip(means).map(|(&w, &m)| w * m).sum();
                let mut g = vec![T::zero(); 3 * k];
                for i in 0..k {
                    g[i] = w[i] * (means[i] - mean);
                    g[k + i] = w[i];
                }
                g
            }
            Head::Scalar => vec![T::one()],
        }
    }

    /// Target for one transition from the target critic's output row at the
    /// bootstrap state. A zero effective discount ignores `bootstrap` entirely.
    pub(crate) fn target<R: Rng + ?Sized>(
        &self,
        transition: &Transition<T>,
        bootstrap: &[T],
        rng: &mut R,
    ) -> Result<TargetItem<T>> {
        let (r, d) = (transition.reward, transition.discount);
        let terminal = d == T::zero();
        Ok(match self {
            Head::Categorical(support) => {
                let shifted = bellman_shift(support, r, d);
                let probs = if terminal {
                    let mut p = vec![T::zero(); support.num_atoms()];
                    p[0] = T::one();
                    p
                } else {
                    softmax(bootstrap)
                };
                TargetItem::Categorical(project_categorical(&shifted, &probs, support)?)
            }
            Head::MixtureOfGaussians { samples, .. } => {
                let zs = if terminal {
                    vec![T::zero()]
                } else {
                    MoGParams::from_output(bootstrap)?.sample(rng, *samples)
                };
                TargetItem::Mog(r, d, zs)
            }
            Head::Scalar => TargetItem::Scalar(if terminal { r } else { r + d * bootstrap[0] }),
        })
    }

    pub(crate) fn sample_loss(&self, targets: &Targets<T>, index: usize, row: &[T]) -> Result<SampleLoss<T>> {
        match (self, targets) {
            (Head::Categorical(_), Targets::Categorical(t)) => {
                let (loss, grad) = categorical_cross_entropy(&t[index], row)?;
                Ok(SampleLoss { loss, grad, error: loss.as_f64(), clamped: 0 })
            }
            (Head::MixtureOfGaussians { .. }, Targets::MixtureOfGaussians(t)) => {
                let (r, d, zs) = &t[index];
                let out = mog_cross_entropy(&MoGParams::from_output(row)?, *r, *d, zs)?;
                Ok(SampleLoss {
                    loss: out.loss,
                    grad: out.grads,
                    error: out.loss.as_f64(),
                    clamped: out.clamped,
                })
            }
            (Head::Scalar, Targets::Scalar(t)) => {
                let (loss, err) = scalar_td_loss(row[0], t[index]);
                Ok(SampleLoss { loss, grad: vec![err], error: err.as_f64(), clamped: 0 })
            }
            _ => Err(Error::Contract("targets were built for a different head".into())),
        }
    }
}

pub(crate) enum TargetItem<T> {
    Categorical(ProjectedTarget<T>),
    Mog(T, T, Vec<T>),
    Scalar(T),
}

pub(crate) fn collect_targets<T>(head_kind: HeadKind, items: Vec<TargetItem<T>>) -> Targets<T> {
    match head_kind {
        HeadKind::Categorical => Targets::Categorical(
            items
                .into_iter()
                .map(|i| match i {
                    TargetItem::Categorical(p) => p,
                    _ => unreachable!(),
                })
                .collect(),
        ),
        HeadKind::MixtureOfGaussians => Targets::MixtureOfGaussians(
            items
                .into_iter()
                .map(|i| match i {
                    TargetItem::Mog(r, d, z) => (r, d, z),
                    _ => unreachable!(),
                })
                .collect(),
        ),
        HeadKind::Scalar => Targets::Scalar(
            items
                .into_iter()
                .map(|i| match i {
                    TargetItem::Scalar(y) => y,
                    _ => unreachable!(),
                })
                .collect(),
        ),
    }
}
