//! Gaussian latent head, reparameterized sampling, the data-uncertainty KL
//! term, the dropout two-view contrastive term and gated fusion.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::encoder::{encode_context, global_rep, ContextualEncoding, EncoderParams, SerializedInput};
use crate::error::ModelError;
use crate::numerics::{derive_seed, kernels, Graph, NumericsError, ParamId, ParamStore, Tensor, Var};

const HEAD_INIT: f64 = 0.1;
/// A large initial `μ` lets `z` swamp the token states in the fusion gate.
const MU_INIT: f64 = 1e-3;
/// Initial `log σ²`, so early samples stay close to `μ`.
pub const INIT_LOG_VAR: f64 = -4.0;

/// Bounds applied to `log σ²` before it is exponentiated.
pub const LOG_VAR_MIN: f64 = -8.0;
pub const LOG_VAR_MAX: f64 = 8.0;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LatentParams {
    pub w_mu: ParamId,
    pub b_mu: ParamId,
    pub w_sigma: ParamId,
    pub b_sigma: ParamId,
    pub w_z: ParamId,
    pub w_x: ParamId,
}

impl LatentParams {
    /// The heads start small so the KL term is small early on.
    pub fn register(store: &mut ParamStore, d: usize) -> Result<Self, ModelError> {
        Ok(Self {
            w_mu: store.uniform("lat.w_mu", vec![d, d], MU_INIT)?,
            b_mu: store.zeros("lat.b_mu", vec![d])?,
            w_sigma: store.uniform("lat.w_sigma", vec![d, d], HEAD_INIT)?,
            b_sigma: store.insert("lat.b_sigma", Tensor::vector(vec![INIT_LOG_VAR; d]))?,
            w_z: store.xavier("lat.w_z", d, d)?,
            w_x: store.xavier("lat.w_x", d, d)?,
        })
    }
}

/// Mean and clamped log-variance of a diagonal Normal.
#[derive(Debug, Clone, Copy)]
pub struct GaussianParams {
    pub mu: Var,
    pub log_var: Var,
}

#[derive(Debug, Clone)]
pub struct LatentSample {
    pub z: Var,
    /// The standard-Normal draw; all zeros at inference.
    pub eps: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct FusedEncoding {
    pub u: Var,
    pub gate: Var,
}

/// The four scalars of one optimization step.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub t2s: f64,
    pub du: f64,
    pub mu_loss: f64,
    pub total: f64,
}

pub fn latent_head(g: &mut Graph, p: &LatentParams, h: Var) -> Result<GaussianParams, ModelError> {
    let (w_mu, b_mu) = (g.param(p.w_mu), g.param(p.b_mu));
    let (w_s, b_s) = (g.param(p.w_sigma), g.param(p.b_sigma));
    let mu = g.matmul(h, w_mu)?;
    let mu = g.add(mu, b_mu)?;
    let lv = g.matmul(h, w_s)?;
    let lv = g.add(lv, b_s)?;
    let log_var = g.clamp(lv, LOG_VAR_MIN, LOG_VAR_MAX);
    Ok(GaussianParams { mu, log_var })
}

/// `z = μ + exp(log σ² / 2) ⊙ ε` with ε drawn from `seed`; `z = μ` when not
/// training.
pub fn sample_latent(g: &mut Graph, p: GaussianParams, seed: u64, training: bool) -> Result<LatentSample, ModelError> {
    let d = g.value(p.mu).len();
    if !training {
        return Ok(LatentSample { z: p.mu, eps: vec![0.0; d] });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let half = g.scale(p.log_var, 0.5);
    let std = g.exp(half);
    let noise = g.mul_const(std, eps.clone())?;
    let z = g.add(p.mu, noise)?;
    Ok(LatentSample { z, eps })
}

/// KL(p̄ ‖ p) between diagonal Normals, summed over coordinates.
pub fn kl_du(g: &mut Graph, p_bar: GaussianParams, p: GaussianParams) -> Result<Var, ModelError> {
    if g.shape(p_bar.mu) != g.shape(p.mu) || g.shape(p_bar.log_var) != g.shape(p.log_var) {
        return Err(ModelError::Contract(format!(
            "kl_du dimension mismatch: {:?} vs {:?}",
            g.shape(p_bar.mu),
            g.shape(p.mu)
        )));
    }
    // (lv - lv̄)/2 + e^{lv̄ - lv}/2 - 1/2 written as (expm1(δ) - δ)/2, δ = lv̄ - lv,
    // so nearly equal variances do not cancel large terms.
    let delta = g.sub(p_bar.log_var, p.log_var)?;
    let em = g.expm1(delta);
    let var_term = g.sub(em, delta)?;
    let diff = g.sub(p_bar.mu, p.mu)?;
    let sq = g.mul(diff, diff)?;
    let neg_lv = g.scale(p.log_var, -1.0);
    let inv_var = g.exp(neg_lv);
    let mean_term = g.mul(sq, inv_var)?;
    let k = g.add(var_term, mean_term)?;
    let k = g.scale(k, 0.5);
    Ok(g.sum(k))
}

/// Mean over `i` of `−log softmax` of the positive pair `s(z¹ᵢ, z²ᵢ)` against
/// the first-view negatives `s(z¹ᵢ, z¹ⱼ)`, `j ≠ i`. Similarities are divided
/// by `temperature`.
pub fn mu_contrastive(g: &mut Graph, z1: &[Var], z2: &[Var], temperature: f64) -> Result<Var, ModelError> {
    if z1.len() != z2.len() || z1.is_empty() {
        return Err(ModelError::Contract(format!("mu_contrastive needs two equal nonempty views, got {} and {}", z1.len(), z2.len())));
    }
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(ModelError::Contract(format!("temperature {temperature} must be positive")));
    }
    for (view, zs) in [(1, z1), (2, z2)] {
        for (i, &z) in zs.iter().enumerate() {
            if kernels::norm(g.value(z)) == 0.0 {
                return Err(NumericsError::Domain {
                    op: "mu_contrastive",
                    detail: format!("zero-norm latent at index {i} (view {view})"),
                }
                .into());
            }
        }
    }
    let n = z1.len();
    let mut losses = Vec::with_capacity(n);
    for i in 0..n {
        let mut sims = Vec::with_capacity(n);
        sims.push(g.cosine_sim(z1[i], z2[i])?);
        for j in (0..n).filter(|&j| j != i) {
            sims.push(g.cosine_sim(z1[i], z1[j])?);
        }
        let s = g.concat(&sims)?;
        let s = if temperature == 1.0 { s } else { g.scale(s, 1.0 / temperature) };
        let lse = g.logsumexp(s);
        let pos = g.index(s, 0)?;
        losses.push(g.sub(lse, pos)?);
    }
    let all = g.concat(&losses)?;
    Ok(g.mean(all))
}

/// One pass of encoder, global representation, latent head and sampling.
#[derive(Debug, Clone)]
pub struct LatentView {
    pub enc: ContextualEncoding,
    pub h: Var,
    pub gauss: GaussianParams,
    pub sample: LatentSample,
}

/// Dropout and ε streams of a view both derive from `seed`.
pub fn latent_view(
    g: &mut Graph,
    enc: &EncoderParams,
    lat: &LatentParams,
    input: &SerializedInput,
    dropout: f64,
    seed: u64,
    training: bool,
) -> Result<LatentView, ModelError> {
    let e = encode_context(g, enc, input, dropout, derive_seed(seed, &[0]), training)?;
    let h = global_rep(g, enc, e.x)?;
    let gauss = latent_head(g, lat, h)?;
    let sample = sample_latent(g, gauss, derive_seed(seed, &[1]), training)?;
    Ok(LatentView { enc: e, h, gauss, sample })
}

/// Two independently perturbed views of the same input.
#[allow(clippy::too_many_arguments)]
pub fn two_view_latents(
    g: &mut Graph,
    enc: &EncoderParams,
    lat: &LatentParams,
    input: &SerializedInput,
    dropout: f64,
    seeds: (u64, u64),
    training: bool,
) -> Result<(LatentView, LatentView), ModelError> {
    if seeds.0 == seeds.1 {
        return Err(ModelError::Contract("two views need distinct seeds".into()));
    }
    let a = latent_view(g, enc, lat, input, dropout, seeds.0, training)?;
    let b = latent_view(g, enc, lat, input, dropout, seeds.1, training)?;
    Ok((a, b))
}

/// `U = LayerNorm(g ⊙ z + (1 − g) ⊙ X)` with `g = σ(z·W_z + X·W_x)` per token.
pub fn gated_fusion(g: &mut Graph, p: &LatentParams, z: Var, x: Var) -> Result<FusedEncoding, ModelError> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 2 || g.shape(z) != [shape[1]] {
        return Err(ModelError::Contract(format!("gated_fusion: z {:?} against X {:?}", g.shape(z), shape)));
    }
    let n = shape[0];
    let (w_z, w_x) = (g.param(p.w_z), g.param(p.w_x));
    let zw = g.matmul(z, w_z)?;
    let zw = g.broadcast_rows(zw, n)?;
    let xw = g.matmul(x, w_x)?;
    let pre = g.add(zw, xw)?;
    let gate = g.sigmoid(pre);
    let zb = g.broadcast_rows(z, n)?;
    let gz = g.mul(gate, zb)?;
    let neg = g.scale(gate, -1.0);
    let keep = g.add_scalar(neg, 1.0);
    let gx = g.mul(keep, x)?;
    let mix = g.add(gz, gx)?;
    let u = g.layer_norm(mix, LN_EPS)?;
    Ok(FusedEncoding { u, gate })
}

/// Weights and temperature of the joint objective. The defaults are the
/// unweighted sum with unit temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub du: f64,
    pub mu: f64,
    pub temperature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { du: 1.0, mu: 1.0, temperature: 1.0 }
    }
}

/// Per-item terms collected during a batch forward pass.
#[derive(Debug, Clone, Default)]
pub struct BatchTerms {
    /// One decoder loss per decoded record.
    pub t2s: Vec<Var>,
    /// One KL term per paired item.
    pub kl: Vec<Var>,
    /// Both views of every singleton item.
    pub views: Vec<(Var, Var)>,
}

/// The scalar nodes of the joint objective.
#[derive(Debug, Clone, Copy)]
pub struct JointLoss {
    pub t2s: Var,
    pub du: Var,
    pub mu: Var,
    pub total: Var,
    pub breakdown: LossBreakdown,
}

/// Reduces batch terms to the joint objective. The `du` and `mu` nodes are
/// the unweighted terms; the breakdown records their weighted contributions,
/// so `total = t2s + du + mu_loss` holds for any weights.
pub fn joint_loss(g: &mut Graph, terms: &BatchTerms, w: LossWeights) -> Result<JointLoss, ModelError> {
    if terms.t2s.is_empty() {
        return Err(ModelError::Contract("joint_loss needs at least one decoded item".into()));
    }
    let t = g.concat(&terms.t2s)?;
    let t2s = g.mean(t);
    let du = if terms.kl.is_empty() {
        g.constant(Tensor::scalar(0.0))
    } else {
        let k = g.concat(&terms.kl)?;
        g.mean(k)
    };
    let mu = if terms.views.len() < 2 {
        g.constant(Tensor::scalar(0.0))
    } else {
        let (z1, z2): (Vec<Var>, Vec<Var>) = terms.views.iter().copied().unzip();
        mu_contrastive(g, &z1, &z2, w.temperature)?
    };
    let wdu = g.scale(du, w.du);
    let wmu = g.scale(mu, w.mu);
    let total = g.add(t2s, wdu)?;
    let total = g.add(total, wmu)?;
    let breakdown = LossBreakdown { t2s: g.scalar(t2s), du: g.scalar(wdu), mu_loss: g.scalar(wmu), total: g.scalar(total) };
    Ok(JointLoss { t2s, du, mu, total, breakdown })
}
