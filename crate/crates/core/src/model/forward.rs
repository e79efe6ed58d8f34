//! Forward evaluation, resumption from a site, and Jacobian-vector products.
//!
//! All three share one routine generic over [`Lane`]. Resuming from a site
//! recomputes the upstream part of the network instead of reading it back
//! from a trace, so substituting the base site outputs reproduces the base
//! readout bit for bit.

use std::collections::BTreeMap;

use super::{Activation, NormKind, SiteId, Slot, TransformerModel};
use crate::error::{Error, Result};
use crate::linalg::{DualTensor, Lane, Matrix, Vector};

/// Base-trajectory activations for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub tokens: Vec<usize>,
    /// Input `z` to each site's weight, per position.
    pub site_inputs: BTreeMap<SiteId, Vec<Vector>>,
    /// Output of each site's weight, per position.
    pub site_outputs: BTreeMap<SiteId, Vec<Vector>>,
    /// Residual stream after each layer, per position.
    pub residuals: Vec<Vec<Vector>>,
    /// Final residual at the readout (last) position, after the final norm.
    pub h_final: Vector,
    pub logits: Vector,
    model_digest: [u8; 32],
}

impl ActivationTrace {
    pub fn model_digest(&self) -> [u8; 32] {
        self.model_digest
    }

    /// Fails unless this trace was recorded from `model`.
    pub fn check_fresh(&self, model: &TransformerModel) -> Result<()> {
        if self.model_digest != model.digest() {
            return Err(Error::Stale("trace was recorded from a different model".into()));
        }
        Ok(())
    }

    pub fn site_input(&self, site: SiteId) -> Result<&[Vector]> {
        self.site_inputs
            .get(&site)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Site {
                site: site.to_string(),
                reason: "not recorded in trace".into(),
            })
    }
}

#[derive(Default)]
struct Recorder {
    site_inputs: BTreeMap<SiteId, Vec<Vector>>,
    site_outputs: BTreeMap<SiteId, Vec<Vector>>,
    residuals: Vec<Vec<Vector>>,
}

type Substitute<'a, T> = (SiteId, &'a dyn Fn(usize, T) -> Result<T>);

fn norm<T: Lane>(x: &T, kind: NormKind, d: usize) -> Result<T> {
    match kind {
        NormKind::Identity => Ok(x.clone()),
        NormKind::RmsNorm => {
            let mean_sq = x.transpose().matmul(x)?.scale(1.0 / d as f64)?;
            let inv = mean_sq.rsqrt().map_err(|e| match e {
                Error::Degenerate { .. } => Error::Degenerate {
                    op: "rmsnorm",
                    detail: "zero vector has no direction".into(),
                },
                other => other,
            })?;
            x.matmul(&inv)
        }
    }
}

fn activate<T: Lane>(x: &T, kind: Activation) -> Result<T> {
    match kind {
        Activation::Identity => Ok(x.clone()),
        Activation::Tanh => x.tanh(),
        Activation::GeluTanh => {
            let c = (2.0 / std::f64::consts::PI).sqrt();
            let cube = x.hadamard(x)?.hadamard(x)?;
            let inner = x.add(&cube.scale(0.044715)?)?.scale(c)?;
            let ones = Matrix::new(x.value().rows(), 1, vec![1.0; x.value().rows()])?;
            let gate = inner.tanh()?.add(&T::lift(&ones))?;
            x.hadamard(&gate)?.scale(0.5)
        }
    }
}

fn check_tokens(model: &TransformerModel, tokens: &[usize]) -> Result<()> {
    let cap = model.config().seq_capacity;
    if tokens.is_empty() || tokens.len() > cap {
        return Err(Error::Input(format!("input length {} outside 1..={cap}", tokens.len())));
    }
    for &t in tokens {
        model.check_token(t)?;
    }
    Ok(())
}

/// Runs the network in lane `T`, optionally replacing one site's outputs,
/// and returns the final-normed residual at the last position.
fn run<T: Lane>(
    model: &TransformerModel,
    tokens: &[usize],
    substitute: Option<Substitute<'_, T>>,
    mut rec: Option<&mut Recorder>,
) -> Result<T> {
    check_tokens(model, tokens)?;
    let cfg = model.config();
    let d = cfg.d_model;
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();

    let mut stream: Vec<T> = tokens
        .iter()
        .map(|&t| Matrix::new(d, 1, model.embedding().row(t).to_vec()).map(|m| T::lift(&m)))
        .collect::<Result<_>>()?;

    let site_output = |site: SiteId, pos: usize, z: &T, w: &Matrix, rec: &mut Option<&mut Recorder>| -> Result<T> {
        let mut out = z.linear(w)?;
        if let Some((target, f)) = &substitute {
            if *target == site {
                out = f(pos, out)?;
            }
        }
        if let Some(r) = rec.as_deref_mut() {
            r.site_inputs.entry(site).or_default().push(z.value().to_vector()?);
            r.site_outputs.entry(site).or_default().push(out.value().to_vector()?);
        }
        Ok(out)
    };

    for (l, lw) in model.layers().iter().enumerate() {
        let normed: Vec<T> = stream.iter().map(|x| norm(x, cfg.norm, d)).collect::<Result<_>>()?;
        let q: Vec<T> = normed.iter().map(|a| a.linear(&lw.w_q)).collect::<Result<_>>()?;
        let k: Vec<T> = normed.iter().map(|a| a.linear(&lw.w_k)).collect::<Result<_>>()?;
        let v: Vec<T> = normed.iter().map(|a| a.linear(&lw.w_v)).collect::<Result<_>>()?;

        let attn_site = SiteId::new(l, Slot::AttnOut);
        for pos in 0..stream.len() {
            // Causal: position `pos` attends to keys 0..=pos only.
            let keys: Vec<&T> = k[..=pos].iter().collect();
            let values: Vec<&T> = v[..=pos].iter().collect();
            let scores = T::hstack(&keys)?.transpose().matmul(&q[pos])?.scale(inv_sqrt_d)?;
            let weights = scores.softmax()?;
            let mixed = T::hstack(&values)?.matmul(&weights)?;
            let out = site_output(attn_site, pos, &mixed, &lw.w_o, &mut rec)?;
            stream[pos] = stream[pos].add(&out)?;
        }

        let mlp_site = SiteId::new(l, Slot::MlpDown);
        for (pos, x) in stream.iter_mut().enumerate() {
            let b = norm(x, cfg.norm, d)?;
            let hidden = activate(&b.linear(&lw.w_up)?, cfg.activation)?;
            let out = site_output(mlp_site, pos, &hidden, &lw.w_down, &mut rec)?;
            *x = x.add(&out)?;
        }

        if let Some(r) = rec.as_deref_mut() {
            r.residuals
                .push(stream.iter().map(|x| x.value().to_vector()).collect::<Result<_>>()?);
        }
    }

    let last = stream.last().expect("non-empty input");
    let gain = T::lift(&Matrix::column(model.final_gain()));
    norm(last, cfg.norm, d)?.hadamard(&gain)
}

/// Base forward pass recording every site input and output.
pub fn forward(model: &TransformerModel, tokens: &[usize]) -> Result<ActivationTrace> {
    let mut rec = Recorder::default();
    let h = run::<Matrix>(model, tokens, None, Some(&mut rec))?.to_vector()?;
    let logits = model.unembedding().matvec(&h)?;
    Ok(ActivationTrace {
        tokens: tokens.to_vec(),
        site_inputs: rec.site_inputs,
        site_outputs: rec.site_outputs,
        residuals: rec.residuals,
        h_final: h,
        logits,
        model_digest: model.digest(),
    })
}

fn check_site_vectors(model: &TransformerModel, site: SiteId, tokens: &[usize], vs: &[Vector]) -> Result<()> {
    model.check_site(site)?;
    let (d_out, _) = model.site_shape(site)?;
    if vs.len() != tokens.len() {
        return Err(Error::dim(
            "site vectors",
            format!("{} positions", vs.len()),
            format!("{} positions", tokens.len()),
        ));
    }
    if let Some(bad) = vs.iter().find(|v| v.dim() != d_out) {
        return Err(Error::dim(
            "site vectors",
            format!("dim {}", bad.dim()),
            format!("dim {d_out}"),
        ));
    }
    Ok(())
}

/// Resumes the forward computation with `site_outputs` substituted for the
/// outputs of `site` at every position; returns the final residual.
pub fn propagate_from_site(
    model: &TransformerModel,
    site: SiteId,
    site_outputs: &[Vector],
    tokens: &[usize],
) -> Result<Vector> {
    check_site_vectors(model, site, tokens, site_outputs)?;
    let replace = |pos: usize, _computed: Matrix| Ok(Matrix::column(&site_outputs[pos]));
    run::<Matrix>(model, tokens, Some((site, &replace)), None)?.to_vector()
}

/// Directional derivative of [`propagate_from_site`] at the base outputs in
/// direction `v` (one vector per position).
pub fn jvp_from_site(model: &TransformerModel, site: SiteId, tokens: &[usize], v: &[Vector]) -> Result<Vector> {
    check_site_vectors(model, site, tokens, v)?;
    let seed = |pos: usize, computed: DualTensor| {
        let (primal, _) = computed.into_parts();
        DualTensor::new(primal, Matrix::column(&v[pos]))
    };
    run::<DualTensor>(model, tokens, Some((site, &seed)), None)?
        .tangent()
        .to_vector()
}

/// Logit of token `y` for final residual `h`: `u_y . h`.
pub fn logit(model: &TransformerModel, h: &Vector, y: usize) -> Result<f64> {
    model.check_token(y)?;
    if h.dim() != model.config().d_model {
        return Err(Error::dim(
            "logit",
            format!("dim {}", h.dim()),
            format!("dim {}", model.config().d_model),
        ));
    }
    let mut acc = 0.0;
    for (u, x) in model.unembedding().row(y).iter().zip(h.as_slice()) {
        acc += u * x;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SeededRng;
    use crate::model::{build_model, LayerWeights, ModelConfig};

    fn reference() -> TransformerModel {
        build_model(&ModelConfig::reference()).unwrap()
    }

    fn random_vectors(rng: &mut SeededRng, n: usize, d: usize) -> Vec<Vector> {
        (0..n)
            .map(|_| Vector::new((0..d).map(|_| rng.next_gaussian()).collect()).unwrap())
            .collect()
    }

    #[test]
    fn logits_are_unembedding_readout() {
        let m = reference();
        let t = forward(&m, &[3, 1, 4]).unwrap();
        for y in 0..m.config().vocab {
            assert_eq!(t.logits.get(y), logit(&m, &t.h_final, y).unwrap());
        }
        assert_eq!(t.site_inputs.len(), 8);
        assert!(t.site_inputs.values().all(|zs| zs.len() == 3));
        assert_eq!(t.site_inputs[&SiteId::new(0, Slot::MlpDown)][0].dim(), 64);
        assert_eq!(t.residuals.len(), 4);
    }

    #[test]
    fn forward_rejects_bad_tokens() {
        let m = reference();
        assert!(matches!(forward(&m, &[50]), Err(Error::Input(_))));
        assert!(matches!(forward(&m, &[]), Err(Error::Input(_))));
        assert!(matches!(forward(&m, &[0; 17]), Err(Error::Input(_))));
    }

    #[test]
    fn single_token_attention_is_value_then_output_projection() {
        let m = reference();
        let t = forward(&m, &[5]).unwrap();
        let x0 = Vector::new(m.embedding().row(5).to_vec()).unwrap();
        let rms = (x0.dot(&x0).unwrap() / 32.0).sqrt();
        let a = x0.scale(1.0 / rms).unwrap();
        let lw = m.layer(0);
        let expect = lw.w_o.matvec(&lw.w_v.matvec(&a).unwrap()).unwrap();
        let got = &t.site_outputs[&SiteId::new(0, Slot::AttnOut)][0];
        let err = got.sub(&expect).unwrap().norm();
        assert!(err <= 1e-12 * expect.norm(), "{err}");
    }

    #[test]
    fn propagate_with_base_outputs_is_bitwise_identity() {
        let m = reference();
        let tokens = [3, 1, 4];
        let t = forward(&m, &tokens).unwrap();
        for site in m.sites() {
            let h = propagate_from_site(&m, site, &t.site_outputs[&site], &tokens).unwrap();
            assert_eq!(h, t.h_final, "{site}");
        }
    }

    #[test]
    fn propagate_checks_shapes() {
        let m = reference();
        let t = forward(&m, &[1, 2]).unwrap();
        let site = SiteId::new(0, Slot::AttnOut);
        let outs = &t.site_outputs[&site];
        assert!(propagate_from_site(&m, site, &outs[..1], &[1, 2]).is_err());
        let wrong = vec![Vector::zeros(3), Vector::zeros(3)];
        assert!(propagate_from_site(&m, site, &wrong, &[1, 2]).is_err());
        assert!(jvp_from_site(&m, SiteId::new(9, Slot::AttnOut), &[1, 2], outs).is_err());
    }

    #[test]
    fn zero_direction_gives_zero_tangent() {
        let m = reference();
        let site = SiteId::new(1, Slot::MlpDown);
        let v = vec![Vector::zeros(32); 3];
        let j = jvp_from_site(&m, site, &[3, 1, 4], &v).unwrap();
        assert!(j.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn jvp_matches_central_differences() {
        let m = reference();
        let tokens = [3, 1, 4];
        let t = forward(&m, &tokens).unwrap();
        let mut rng = SeededRng::new(99);
        for site in m.sites() {
            let base = &t.site_outputs[&site];
            let v = random_vectors(&mut rng, tokens.len(), 32);
            let vnorm = v.iter().map(|x| x.dot(x).unwrap()).sum::<f64>().sqrt();
            let h = 1e-5 * (1.0 + vnorm);
            let shifted = |s: f64| {
                let outs: Vec<Vector> = base.iter().zip(&v).map(|(b, d)| b.axpy(s * h, d).unwrap()).collect();
                propagate_from_site(&m, site, &outs, &tokens).unwrap()
            };
            let fd = shifted(1.0).sub(&shifted(-1.0)).unwrap().scale(0.5 / h).unwrap();
            let j = jvp_from_site(&m, site, &tokens, &v).unwrap();
            let rel = j.sub(&fd).unwrap().norm() / fd.norm();
            assert!(rel <= 1e-6, "{site}: {rel}");
        }
    }

    #[test]
    fn jvp_is_linear() {
        let m = reference();
        let tokens = [7, 2];
        let site = SiteId::new(0, Slot::AttnOut);
        let mut rng = SeededRng::new(5);
        let v = random_vectors(&mut rng, 2, 32);
        let w = random_vectors(&mut rng, 2, 32);
        let (a, b) = (0.7, -1.3);
        let comb: Vec<Vector> = v
            .iter()
            .zip(&w)
            .map(|(x, y)| x.scale(a).unwrap().axpy(b, y).unwrap())
            .collect();
        let jv = jvp_from_site(&m, site, &tokens, &v).unwrap();
        let jw = jvp_from_site(&m, site, &tokens, &w).unwrap();
        let jc = jvp_from_site(&m, site, &tokens, &comb).unwrap();
        let expect = jv.scale(a).unwrap().axpy(b, &jw).unwrap();
        assert!(jc.sub(&expect).unwrap().norm() <= 1e-12 * expect.norm());

        let doubled: Vec<Vector> = v.iter().map(|x| x.scale(2.0).unwrap()).collect();
        let j2 = jvp_from_site(&m, site, &tokens, &doubled).unwrap();
        assert!(j2.sub(&jv.scale(2.0).unwrap()).unwrap().norm() <= 1e-13 * jv.norm() * 2.0);
    }

    #[test]
    fn rmsnorm_of_zero_stream_is_degenerate() {
        let m = reference();
        let mut cfg = m.config().clone();
        cfg.n_layers = 1;
        let mut emb = m.embedding().clone().into_data();
        emb[..32].iter_mut().for_each(|x| *x = 0.0);
        let m = TransformerModel::from_parts(
            cfg,
            Matrix::new(50, 32, emb).unwrap(),
            vec![m.layer(0).clone()],
            m.final_gain().clone(),
            m.unembedding().clone(),
        )
        .unwrap();
        let err = forward(&m, &[0]).unwrap_err();
        assert!(matches!(err, Error::Degenerate { op: "rmsnorm", .. }), "{err}");
    }

    #[test]
    fn logit_basis_readout() {
        let cfg = ModelConfig {
            n_layers: 1,
            d_model: 2,
            d_ff: 2,
            vocab: 3,
            seq_capacity: 4,
            ..ModelConfig::reference()
        };
        let m = build_model(&cfg).unwrap();
        let mut u = m.unembedding().clone().into_data();
        u[2..4].copy_from_slice(&[1.0, 0.0]);
        let lw: Vec<LayerWeights> = m.layers().to_vec();
        let m = TransformerModel::from_parts(
            cfg,
            m.embedding().clone(),
            lw,
            m.final_gain().clone(),
            Matrix::new(3, 2, u).unwrap(),
        )
        .unwrap();
        let h = Vector::new(vec![3.0, -8.0]).unwrap();
        assert_eq!(logit(&m, &h, 1).unwrap(), 3.0);
        assert_eq!(logit(&m, &Vector::zeros(2), 0).unwrap(), 0.0);
        assert!(logit(&m, &h, 3).is_err());
    }
}
