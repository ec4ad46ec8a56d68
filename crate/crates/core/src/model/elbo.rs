//! Negative evidence lower bound and its gradient.
//!
//! For a target window `D` (observations `x_0..x_N`, actions, ground-truth
//! terrain features) and context set `C`:
//!
//! ```text
//! loss = −log p(D | β) + λ_KL · KL(q(β | D ∪ C) ‖ q(β | C)),   β ~ q(β | D ∪ C)
//! log p(D | β) = log N(x_0; recon) + Σ_n [log N(x_n; one step from x_{n−1}) + log N(x_n; open loop from x_0)]
//! ```
//!
//! with a single reparameterised sample of `β`. The batch loss is the mean
//! over samples.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{context_var, context_var_preactivation, decode_row, transitions_matrix, DynamicsModel, TerrainMode};
use crate::nn::{sigmoid, softplus, Gru, GruCache, Mat, MlpCache};
use crate::sim::{Action, Observation, Transition, ACTION_DIM, OBS_DIM, TERRAIN_DIM};
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// One (target window, context set) pair from a single environment instance.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    /// `x_0..x_N`.
    pub observations: Vec<Observation>,
    /// `τ(x_0)..τ(x_N)` at ground-truth states.
    pub features: Vec<[f64; TERRAIN_DIM]>,
    /// `u_0..u_{N−1}`.
    pub actions: Vec<Action>,
    pub context: Vec<Transition>,
}

impl TrainingSample {
    pub fn target_transitions(&self) -> impl Iterator<Item = Transition> + '_ {
        (0..self.actions.len()).map(|n| Transition {
            x: self.observations[n],
            tau: self.features[n],
            u: self.actions[n],
            x_next: self.observations[n + 1],
            tau_next: self.features[n + 1],
        })
    }
}

#[derive(Clone, Debug)]
pub struct ElboOutput {
    /// Batch-mean negative ELBO (weighted KL included).
    pub loss: f64,
    /// Batch-mean negative log-likelihood part.
    pub nll: f64,
    /// Batch-mean (unweighted) KL divergence.
    pub kl: f64,
    /// Gradient of `loss`, in parameter-buffer layout. Empty if not requested.
    pub grads: Vec<f64>,
}

/// `KL(N(m1, v1) ‖ N(m0, v0))` for diagonal Gaussians.
pub fn gaussian_kl(m1: &[f64], v1: &[f64], m0: &[f64], v0: &[f64]) -> f64 {
    let mut kl = 0.0;
    for j in 0..m1.len() {
        let d = m1[j] - m0[j];
        kl += 0.5 * ((v0[j] / v1[j]).ln() + (v1[j] + d * d) / v0[j] - 1.0);
    }
    kl
}

/// Source of each aggregated context component.
#[derive(Clone, Copy, PartialEq)]
enum ArgMax {
    Sentinel,
    Row(usize),
}

fn gaussian_nll_and_grad(raw: &[f64], target: &[f64], scale: f64, draw: &mut [f64]) -> f64 {
    let (mean, var) = decode_row(raw);
    let mut nll = 0.0;
    for i in 0..OBS_DIM {
        let d = target[i] - mean[i];
        nll += 0.5 * (LN_2PI + var[i].ln() + d * d / var[i]);
        draw[i] = -scale * d / var[i];
        let dvar = scale * 0.5 * (1.0 / var[i] - d * d / (var[i] * var[i]));
        draw[OBS_DIM + i] = dvar * sigmoid(raw[OBS_DIM + i]);
    }
    nll
}

impl DynamicsModel {
    /// Negative ELBO over a batch, with its gradient when `with_grad` is set.
    pub fn elbo_loss(&self, batch: &[TrainingSample], lambda_kl: f64, rng: &mut impl Rng, with_grad: bool) -> Result<ElboOutput> {
        let bsz = batch.len();
        if bsz == 0 {
            return Err(Error::InvalidInput("empty training batch".into()));
        }
        let horizon = batch[0].actions.len();
        for s in batch {
            if s.actions.len() != horizon || s.observations.len() != horizon + 1 || s.features.len() != horizon + 1 {
                return Err(Error::InvalidInput("inconsistent target window lengths".into()));
            }
        }
        if horizon == 0 {
            return Err(Error::InvalidInput("target window must contain transitions".into()));
        }
        let p = &self.params.values;
        let l = &self.layers;
        let cfg = &self.config;
        let (e, hd, bd) = (cfg.embed_dim, cfg.gru_hidden, cfg.beta_dim);
        let scale = 1.0 / bsz as f64;
        let mut g = if with_grad { vec![0.0; p.len()] } else { Vec::new() };

        // ---- context encoder over C rows followed by D rows
        let mut ctx_rows: Vec<Transition> = Vec::new();
        let mut ctx_range = Vec::with_capacity(bsz);
        for s in batch {
            let start = ctx_rows.len();
            ctx_rows.extend_from_slice(&s.context);
            ctx_range.push(start..ctx_rows.len());
        }
        let d_start = ctx_rows.len();
        for s in batch {
            ctx_rows.extend(s.target_transitions());
        }
        let x_trans = transitions_matrix(ctx_rows.iter());
        let trans_cache = l.e_trans.forward_cached(p, &x_trans);
        let enc = &trans_cache.y;
        let sentinel = l.sentinel.slice(p);

        let mut z_agg = Mat::zeros(2 * bsz, e); // prior rows then posterior rows
        let mut arg = vec![ArgMax::Sentinel; 2 * bsz * e];
        for b in 0..bsz {
            let mut z = sentinel.to_vec();
            let mut a = vec![ArgMax::Sentinel; e];
            let absorb = |row: usize, z: &mut Vec<f64>, a: &mut Vec<ArgMax>| {
                for j in 0..e {
                    let v = enc.data[row * e + j];
                    if v > z[j] {
                        z[j] = v;
                        a[j] = ArgMax::Row(row);
                    }
                }
            };
            for row in ctx_range[b].clone() {
                absorb(row, &mut z, &mut a);
            }
            z_agg.row_mut(b).copy_from_slice(&z);
            arg[b * e..(b + 1) * e].copy_from_slice(&a);
            for n in 0..horizon {
                absorb(d_start + b * horizon + n, &mut z, &mut a);
            }
            z_agg.row_mut(bsz + b).copy_from_slice(&z);
            arg[(bsz + b) * e..(bsz + b + 1) * e].copy_from_slice(&a);
        }
        let mu_cache = l.d_beta_mu.forward_cached(p, &z_agg);
        let pre = context_var_preactivation(p, &l.d_beta_var, &z_agg);
        let var: Vec<f64> = pre.data.iter().map(|&a| context_var(a)).collect();
        let mean = &mu_cache.y.data;
        let (mp, mq) = mean.split_at(bsz * bd);
        let (vp, vq) = var.split_at(bsz * bd);

        let eps: Vec<f64> = (0..bsz * bd).map(|_| rng.sample(StandardNormal)).collect();
        let beta: Vec<f64> = (0..bsz * bd).map(|i| mq[i] + vq[i].sqrt() * eps[i]).collect();
        let mut kl_total = 0.0;
        for b in 0..bsz {
            let r = b * bd..(b + 1) * bd;
            kl_total += gaussian_kl(&mq[r.clone()], &vq[r.clone()], &mp[r.clone()], &vp[r]);
        }

        // ---- dynamics inputs, step-major rows (n, b)
        let nb = horizon * bsz;
        let x_width = match cfg.terrain_mode {
            TerrainMode::Lookup => OBS_DIM,
            TerrainMode::ObservedConcat => OBS_DIM + TERRAIN_DIM,
        };
        let mut x_prev = Mat::zeros(nb, x_width);
        let mut u_in = Mat::zeros(nb, ACTION_DIM);
        let mut t_in = Mat::zeros(nb, TERRAIN_DIM);
        for n in 0..horizon {
            for (b, s) in batch.iter().enumerate() {
                let row = n * bsz + b;
                let xr = x_prev.row_mut(row);
                xr[..OBS_DIM].copy_from_slice(&s.observations[n].0);
                if x_width > OBS_DIM {
                    xr[OBS_DIM..].copy_from_slice(&s.features[n]);
                }
                let a = s.actions[n].clipped();
                u_in.row_mut(row).copy_from_slice(&[a.throttle, a.steer]);
                t_in.row_mut(row).copy_from_slice(&s.features[n]);
            }
        }
        let (tau_col, u_col, beta_col) = l.gru_blocks(e);
        let ex_cache = l.e_x.forward_cached(p, &x_prev);
        let eu_cache = l.e_u.forward_cached(p, &u_in);
        let beta_mat = Mat::from_vec(bsz, bd, beta.clone());
        let eb_cache = l.e_beta.forward_cached(p, &beta_mat);
        let et_cache = l.e_tau.as_ref().map(|m| m.forward_cached(p, &t_in));

        let mut gi = l.gru.input_gates_block(p, &eu_cache.y, u_col, true);
        if let (Some(col), Some(c)) = (tau_col, &et_cache) {
            gi.add_assign(&l.gru.input_gates_block(p, &c.y, col, false));
        }
        let gb = l.gru.input_gates_block(p, &eb_cache.y, beta_col, false);
        for n in 0..horizon {
            for b in 0..bsz {
                gi.row_mut(n * bsz + b).iter_mut().zip(gb.row(b)).for_each(|(a, v)| *a += v);
            }
        }
        let g3 = 3 * hd;
        let z0 = ex_cache.y.rows_slice(0, bsz);

        // open-loop branch
        let mut multi: Vec<GruCache> = Vec::with_capacity(horizon);
        let mut h = z0.clone();
        let mut hs_multi = Vec::with_capacity(nb * hd);
        for n in 0..horizon {
            let c = l.gru.step(p, &gi.data[n * bsz * g3..(n + 1) * bsz * g3], &h);
            h = Gru::output(&c);
            hs_multi.extend_from_slice(&h.data);
            multi.push(c);
        }
        // one-step branch from ground-truth states
        let single = l.gru.step(p, &gi.data, &ex_cache.y);
        let h_single = Gru::output(&single);

        // ---- decode: recon rows, open-loop rows, one-step rows
        let dec_in = Mat::vstack(&[&z0, &Mat::from_vec(nb, hd, hs_multi), &h_single]);
        let dec_cache: MlpCache = l.d_x.forward_cached(p, &dec_in);
        let mut d_raw = Mat::zeros(dec_in.rows, 2 * OBS_DIM);
        let mut nll_total = 0.0;
        for (b, s) in batch.iter().enumerate().take(bsz) {
            nll_total += gaussian_nll_and_grad(dec_cache.y.row(b), &s.observations[0].0, scale, d_raw.row_mut(b));
        }
        for n in 0..horizon {
            for (b, s) in batch.iter().enumerate() {
                let target = &s.observations[n + 1].0;
                let r_multi = bsz + n * bsz + b;
                let r_single = bsz + nb + n * bsz + b;
                nll_total += gaussian_nll_and_grad(dec_cache.y.row(r_multi), target, scale, d_raw.row_mut(r_multi));
                nll_total += gaussian_nll_and_grad(dec_cache.y.row(r_single), target, scale, d_raw.row_mut(r_single));
            }
        }
        let loss = scale * (nll_total + lambda_kl * kl_total);
        if !loss.is_finite() {
            return Err(Error::Numeric {
                step: 0,
                detail: format!("non-finite ELBO (nll {nll_total}, kl {kl_total})"),
            });
        }
        let mut out = ElboOutput {
            loss,
            nll: scale * nll_total,
            kl: scale * kl_total,
            grads: Vec::new(),
        };
        if !with_grad {
            return Ok(out);
        }

        // ================= backward
        let d_dec_in = l.d_x.backward(p, &mut g, &dec_in, &dec_cache, &d_raw, true).expect("requested");
        let mut dz0 = d_dec_in.rows_slice(0, bsz);
        let d_single = d_dec_in.rows_slice(bsz + nb, nb);
        let (dgi_single, mut d_xprev_enc) = l.gru.step_backward(p, &mut g, &single, &d_single);
        let mut dgi = dgi_single;
        let mut dh = Mat::zeros(bsz, hd);
        for n in (0..horizon).rev() {
            let dh_out = d_dec_in.rows_slice(bsz + n * bsz, bsz);
            dh.add_assign(&dh_out);
            let (dgi_n, dh_prev) = l.gru.step_backward(p, &mut g, &multi[n], &dh);
            let block = &mut dgi.data[n * bsz * g3..(n + 1) * bsz * g3];
            block.iter_mut().zip(&dgi_n.data).for_each(|(a, b)| *a += b);
            dh = dh_prev;
        }
        dz0.add_assign(&dh);
        for (a, b) in d_xprev_enc.data[..bsz * hd].iter_mut().zip(&dz0.data) {
            *a += b;
        }
        l.e_x.backward(p, &mut g, &x_prev, &ex_cache, &d_xprev_enc, false);

        l.gru.input_bias_backward(&mut g, &dgi);
        let d_eu = l.gru.input_gates_block_backward(p, &mut g, &eu_cache.y, u_col, &dgi);
        l.e_u.backward(p, &mut g, &u_in, &eu_cache, &d_eu, false);
        if let (Some(col), Some(c), Some(e_tau)) = (tau_col, &et_cache, &l.e_tau) {
            let d_et = l.gru.input_gates_block_backward(p, &mut g, &c.y, col, &dgi);
            e_tau.backward(p, &mut g, &t_in, c, &d_et, false);
        }
        let mut dgi_beta = Mat::zeros(bsz, g3);
        for n in 0..horizon {
            for b in 0..bsz {
                dgi_beta.row_mut(b).iter_mut().zip(dgi.row(n * bsz + b)).for_each(|(a, v)| *a += v);
            }
        }
        let d_eb = l.gru.input_gates_block_backward(p, &mut g, &eb_cache.y, beta_col, &dgi_beta);
        let d_beta = l.e_beta.backward(p, &mut g, &beta_mat, &eb_cache, &d_eb, true).expect("requested");

        // ---- context heads
        let mut d_mean = vec![0.0; 2 * bsz * bd];
        let mut d_var = vec![0.0; 2 * bsz * bd];
        let klw = lambda_kl * scale;
        for i in 0..bsz * bd {
            let (iq, ip) = (bsz * bd + i, i);
            d_mean[iq] += d_beta.data[i];
            d_var[iq] += d_beta.data[i] * eps[i] / (2.0 * vq[i].sqrt());
            let diff = mq[i] - mp[i];
            d_mean[iq] += klw * diff / vp[i];
            d_mean[ip] -= klw * diff / vp[i];
            d_var[iq] += klw * 0.5 * (1.0 / vp[i] - 1.0 / vq[i]);
            d_var[ip] += klw * 0.5 * (1.0 / vp[i] - (vq[i] + diff * diff) / (vp[i] * vp[i]));
        }
        let d_mean = Mat::from_vec(2 * bsz, bd, d_mean);
        let mut dz = l.d_beta_mu.backward(p, &mut g, &z_agg, &mu_cache, &d_mean, true).expect("requested");
        // variance head: var = floor + (max − floor) · σ(−pre)
        let span = super::CONTEXT_VAR_MAX - super::CONTEXT_VAR_FLOOR;
        let mut d_pre = vec![0.0; 2 * bsz * bd];
        for i in 0..d_pre.len() {
            let s = sigmoid(-pre.data[i]);
            d_pre[i] = -d_var[i] * span * s * (1.0 - s);
        }
        let head = &l.d_beta_var;
        let w_raw = head.w.slice(p).to_vec();
        {
            let gw = head.w.slice_mut(&mut g);
            for r in 0..2 * bsz {
                for i in 0..e {
                    let zi = z_agg.data[r * e + i];
                    for j in 0..bd {
                        gw[i * bd + j] += zi * d_pre[r * bd + j] * sigmoid(w_raw[i * bd + j]);
                    }
                }
            }
        }
        {
            let gbias = head.b.slice_mut(&mut g);
            for r in 0..2 * bsz {
                for j in 0..bd {
                    gbias[j] += d_pre[r * bd + j];
                }
            }
        }
        for r in 0..2 * bsz {
            for i in 0..e {
                let mut acc = 0.0;
                for j in 0..bd {
                    acc += d_pre[r * bd + j] * softplus(w_raw[i * bd + j]);
                }
                dz.data[r * e + i] += acc;
            }
        }

        // ---- route through the max aggregation
        let mut d_enc = Mat::zeros(enc.rows, e);
        {
            let gs = l.sentinel.slice_mut(&mut g);
            for r in 0..2 * bsz {
                for j in 0..e {
                    let d = dz.data[r * e + j];
                    match arg[r * e + j] {
                        ArgMax::Sentinel => gs[j] += d,
                        ArgMax::Row(row) => d_enc.data[row * e + j] += d,
                    }
                }
            }
        }
        l.e_trans.backward(p, &mut g, &x_trans, &trans_cache, &d_enc, false);

        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                step: 0,
                detail: "non-finite gradient".into(),
            });
        }
        out.grads = g;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_of_identical_gaussians_is_zero() {
        assert_eq!(gaussian_kl(&[0.0], &[1.0], &[0.0], &[1.0]), 0.0);
        assert_eq!(gaussian_kl(&[0.3, -1.0], &[0.2, 2.0], &[0.3, -1.0], &[0.2, 2.0]), 0.0);
    }

    #[test]
    fn kl_matches_closed_form() {
        // KL(N(1, 2) ‖ N(0, 1)) = 0.5 (ln(1/2) + 2 + 1 − 1)
        let want = 0.5 * (0.5f64.ln() + 2.0 + 1.0 - 1.0);
        assert!((gaussian_kl(&[1.0], &[2.0], &[0.0], &[1.0]) - want).abs() < 1e-15);
    }
}
