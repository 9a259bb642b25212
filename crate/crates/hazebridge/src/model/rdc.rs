//! Residual difference-convolution block: five parallel 3x3 branches
//! (vanilla plus central/angular/horizontal/vertical difference variants)
//! whose responses are summed and added to the block input. Because all
//! branches are linear in the input, the five kernels merge into a single
//! plain 3x3 kernel with identical response; training uses the branch form
//! and frozen inference may use the merged form.

use rand_distr::{Distribution, StandardNormal};

use super::{he_init, BranchMask, MergedCache};
use crate::error::Result;
use crate::optim::{ParamId, ParamStore};
use crate::rng::RngStream;
use crate::tensor::{DiffKind, Element, Tensor};

/// Relative weight-init scale of the difference branches; they start small
/// so an untrained block behaves like a plain convolution.
const DIFF_INIT_GAIN: f64 = 0.2;

pub struct RdcBlock {
    vanilla: ParamId,
    bias: ParamId,
    central: Option<ParamId>,
    angular: Option<ParamId>,
    horizontal: Option<ParamId>,
    vertical: Option<ParamId>,
    ordinal: usize,
}

impl RdcBlock {
    pub(crate) fn new<E: Element>(
        store: &mut ParamStore<E>,
        name: &str,
        channels: usize,
        mask: BranchMask,
        ordinal: &mut usize,
        rng: &mut RngStream,
    ) -> Result<Self>
    where
        StandardNormal: Distribution<E>,
    {
        let shape = [channels, channels, 3, 3];
        let fan = channels * 9;
        let vanilla = he_init(store, &format!("{name}.vanilla.weight"), &shape, fan, 1.0, rng)?;
        let bias = store.register(format!("{name}.bias"), Tensor::zeros(&[channels])?)?;
        let mut branch = |on: bool, tag: &str, rng: &mut RngStream| -> Result<Option<ParamId>> {
            if on {
                Ok(Some(he_init(
                    store,
                    &format!("{name}.{tag}.weight"),
                    &shape,
                    fan,
                    DIFF_INIT_GAIN,
                    rng,
                )?))
            } else {
                Ok(None)
            }
        };
        let central = branch(mask.central, "central", rng)?;
        let angular = branch(mask.angular, "angular", rng)?;
        let horizontal = branch(mask.horizontal, "horizontal", rng)?;
        let vertical = branch(mask.vertical, "vertical", rng)?;
        let ord = *ordinal;
        *ordinal += 1;
        Ok(Self {
            vanilla,
            bias,
            central,
            angular,
            horizontal,
            vertical,
            ordinal: ord,
        })
    }

    pub(crate) fn ordinal(&self) -> usize {
        self.ordinal
    }

    /// Branch-sum response plus the residual input. With a merged cache the
    /// precomputed single kernel is used instead of the five branches.
    pub fn forward<E: Element>(
        &self,
        store: &ParamStore<E>,
        x: &Tensor<E>,
        merged: Option<&MergedCache<E>>,
    ) -> Result<Tensor<E>> {
        if let Some(cache) = merged {
            let (kernel, bias) = &cache.entries[self.ordinal];
            return x.add(&x.conv2d_replicate(kernel, Some(bias))?);
        }
        let branches = self.branch_sum(store, x)?;
        x.add(&branches)
    }

    /// The five-branch response without the residual term.
    pub fn branch_sum<E: Element>(
        &self,
        store: &ParamStore<E>,
        x: &Tensor<E>,
    ) -> Result<Tensor<E>> {
        let central = self.central.map(|id| store.get(id));
        let angular = self.angular.map(|id| store.get(id));
        let horizontal = self.horizontal.map(|id| store.get(id));
        let vertical = self.vertical.map(|id| store.get(id));
        x.rdc_conv2d(
            &store.get(self.vanilla),
            &store.get(self.bias),
            central.as_ref(),
            angular.as_ref(),
            horizontal.as_ref(),
            vertical.as_ref(),
        )
    }

    /// Merge the branches into a single plain 3x3 kernel and bias with the
    /// same response (up to floating-point rounding).
    pub fn merge<E: Element>(&self, store: &ParamStore<E>) -> Result<(Tensor<E>, Tensor<E>)> {
        let vanilla = store.get(self.vanilla);
        let mut merged = vanilla.data().to_vec();
        for (kind, id) in [
            (DiffKind::Central, self.central),
            (DiffKind::Angular, self.angular),
            (DiffKind::Horizontal, self.horizontal),
            (DiffKind::Vertical, self.vertical),
        ] {
            if let Some(id) = id {
                let transformed = kind.transform(store.get(id).data());
                for (m, t) in merged.iter_mut().zip(transformed) {
                    *m += t;
                }
            }
        }
        Ok((
            Tensor::from_vec(vanilla.shape(), merged)?,
            store.get(self.bias).detach(),
        ))
    }
}
