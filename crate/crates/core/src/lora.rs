//! LoRA perturbations: single-site adapters, the joint perturbation over
//! sites, global scaling, injection into a model and the perturbation norm.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{random_matrix, Matrix, SeededRng};
use crate::model::{SiteId, TransformerModel};

/// `delta_w = (alpha / rank) * B * A` attached at one site.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    site: SiteId,
    b: Matrix,
    a: Matrix,
    alpha: f64,
}

impl LoraAdapter {
    /// `b` is `d_out x r`, `a` is `r x d_in`.
    pub fn new(site: SiteId, b: Matrix, a: Matrix, alpha: f64) -> Result<Self> {
        if b.cols() != a.rows() {
            return Err(Error::dim(
                "LoraAdapter::new",
                format!("B {}", b.shape_str()),
                format!("A {}", a.shape_str()),
            ));
        }
        if !alpha.is_finite() {
            return Err(Error::Input("alpha must be finite".into()));
        }
        Ok(Self { site, b, a, alpha })
    }

    pub fn site(&self) -> SiteId {
        self.site
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rank(&self) -> usize {
        self.b.cols()
    }

    /// `(d_out, d_in)` of the weight this adapter perturbs.
    pub fn shape(&self) -> (usize, usize) {
        (self.b.rows(), self.a.cols())
    }

    /// `alpha / rank`.
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank() as f64
    }

    pub fn delta_w(&self) -> Result<Matrix> {
        self.b.matmul(&self.a)?.scale(self.scaling())
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.site, self.b.clone(), self.a.clone(), alpha)
    }

    /// Same `B * A` product at a larger nominal rank: `B` gains zero
    /// columns and `A` zero rows, so only the `alpha / rank` factor changes.
    pub fn padded_to_rank(&self, rank: usize) -> Result<Self> {
        let r = self.rank();
        if rank < r {
            return Err(Error::Input(format!("cannot pad rank {r} down to {rank}")));
        }
        let (d_out, d_in) = self.shape();
        let mut b = vec![0.0; d_out * rank];
        for i in 0..d_out {
            b[i * rank..i * rank + r].copy_from_slice(self.b.row(i));
        }
        let mut a = self.a.data().to_vec();
        a.resize(rank * d_in, 0.0);
        Self::new(
            self.site,
            Matrix::new(d_out, rank, b)?,
            Matrix::new(rank, d_in, a)?,
            self.alpha,
        )
    }

    /// Fails unless the adapter matches the site's weight shape in `model`.
    pub fn check_for(&self, model: &TransformerModel) -> Result<()> {
        let want = model.site_shape(self.site)?;
        if self.shape() != want {
            return Err(Error::Site {
                site: self.site.to_string(),
                reason: format!(
                    "adapter shape {}x{} does not match weight {}x{}",
                    self.shape().0,
                    self.shape().1,
                    want.0,
                    want.1
                ),
            });
        }
        Ok(())
    }

    /// Note emitted when the nominal rank exceeds `min(d_in, d_out)`.
    pub fn rank_note(&self) -> Option<String> {
        let (d_out, d_in) = self.shape();
        let cap = d_out.min(d_in);
        (self.rank() > cap).then(|| {
            format!(
                "adapter at {} has rank {} above min(d_in, d_out) = {cap}; delta_w is rank-deficient",
                self.site,
                self.rank()
            )
        })
    }
}

pub fn delta_w(adapter: &LoraAdapter) -> Result<Matrix> {
    adapter.delta_w()
}

/// Gaussian `B` (`d_out x r`, drawn first) and `A` (`r x d_in`), each entry
/// `scale * N(0, 1)`, with shapes taken from `model` at `site`.
pub fn random_lora(
    rng: &mut SeededRng,
    model: &TransformerModel,
    site: SiteId,
    rank: usize,
    alpha: f64,
    scale: f64,
) -> Result<LoraAdapter> {
    if rank == 0 {
        return Err(Error::Input("LoRA rank must be at least 1".into()));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Input("LoRA init scale must be positive and finite".into()));
    }
    let (d_out, d_in) = model.site_shape(site)?;
    let b = random_matrix(rng, d_out, rank, scale);
    let a = random_matrix(rng, rank, d_in, scale);
    LoraAdapter::new(site, b, a, alpha)
}

/// Joint perturbation: at most one adapter per site plus a global scale
/// `epsilon` multiplying every site's `delta_w`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraSet {
    adapters: BTreeMap<SiteId, LoraAdapter>,
    epsilon: f64,
}

impl Default for LoraSet {
    fn default() -> Self {
        Self {
            adapters: BTreeMap::new(),
            epsilon: 1.0,
        }
    }
}

impl LoraSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_adapters(adapters: impl IntoIterator<Item = LoraAdapter>) -> Result<Self> {
        let mut set = Self::new();
        for a in adapters {
            set.insert(a)?;
        }
        Ok(set)
    }

    /// Adds an adapter; a second adapter on the same site is an error.
    pub fn insert(&mut self, adapter: LoraAdapter) -> Result<()> {
        let site = adapter.site();
        if self.adapters.contains_key(&site) {
            return Err(Error::Site {
                site: site.to_string(),
                reason: "already has an adapter".into(),
            });
        }
        self.adapters.insert(site, adapter);
        Ok(())
    }

    /// Union of two sets on disjoint sites; keeps `self`'s scale.
    pub fn union(&self, other: &LoraSet) -> Result<LoraSet> {
        let mut out = self.clone();
        for a in other.adapters() {
            out.insert(a.clone())?;
        }
        Ok(out)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Copy of the set with the global scale replaced by `epsilon`.
    pub fn with_scale(&self, epsilon: f64) -> LoraSet {
        LoraSet {
            adapters: self.adapters.clone(),
            epsilon,
        }
    }

    pub fn adapters(&self) -> impl Iterator<Item = &LoraAdapter> {
        self.adapters.values()
    }

    pub fn sites(&self) -> impl Iterator<Item = SiteId> + '_ {
        self.adapters.keys().copied()
    }

    pub fn get(&self, site: SiteId) -> Option<&LoraAdapter> {
        self.adapters.get(&site)
    }

    pub fn len(&self) -> usize {
        self.adapters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adapters.is_empty()
    }

    /// `epsilon * delta_w` for the adapter at `site`.
    pub fn effective_delta(&self, site: SiteId) -> Result<Option<Matrix>> {
        self.adapters
            .get(&site)
            .map(|a| a.delta_w()?.scale(self.epsilon))
            .transpose()
    }

    pub fn check_for(&self, model: &TransformerModel) -> Result<()> {
        self.adapters().try_for_each(|a| a.check_for(model))
    }

    /// `|epsilon| * sqrt(sum over sites of ||delta_w||_F^2)`; zero when empty.
    pub fn perturbation_norm(&self) -> Result<f64> {
        let mut acc = 0.0;
        for a in self.adapters() {
            let n = a.delta_w()?.frobenius_norm();
            acc += n * n;
        }
        Ok(self.epsilon.abs() * acc.sqrt())
    }
}

/// Free-function form of [`LoraSet::with_scale`].
pub fn scale(set: &LoraSet, epsilon: f64) -> LoraSet {
    set.with_scale(epsilon)
}

pub fn perturbation_norm(set: &LoraSet) -> Result<f64> {
    set.perturbation_norm()
}

/// Model whose site weights are `W + epsilon * delta_w`. The input model is
/// not modified; an empty set or `epsilon == 0` returns an identical copy.
pub fn apply(model: &TransformerModel, set: &LoraSet) -> Result<TransformerModel> {
    set.check_for(model)?;
    if set.is_empty() || set.epsilon() == 0.0 {
        return Ok(model.clone());
    }
    let mut replacements = Vec::with_capacity(set.len());
    for a in set.adapters() {
        let eff = a.delta_w()?.scale(set.epsilon())?;
        replacements.push((a.site(), model.site_weight(a.site())?.add(&eff)?));
    }
    model.with_site_weights(replacements)
}
