//! Direct (tape-free) sample loop used for synthesis.
//!
//! The first GRU's input projection splits into an embedding part, which only
//! depends on the previous level and is tabulated for all 256 levels, and a
//! conditioning part, which is constant within a frame.

use super::{VoderConfig, INITIAL_LEVEL};
use crate::error::Result;
use crate::model::ModelParams;
use crate::numerics::linalg::{self, gemm, Mat};
use crate::signal::MULAW_LEVELS;

/// Recurrent state of one synthesis run.
#[derive(Clone, Debug, PartialEq)]
pub struct VoderState {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub prev_level: usize,
}

impl VoderState {
    /// Zero hiddens, previous level at the μ-law midpoint.
    pub fn new(cfg: &VoderConfig) -> Self {
        Self {
            h1: vec![0.0; cfg.gru1_hidden],
            h2: vec![0.0; cfg.gru2_hidden],
            prev_level: INITIAL_LEVEL,
        }
    }
}

struct Gru {
    u: Vec<f64>,
    hidden: usize,
}

impl Gru {
    /// `pre` holds the input projection plus bias for the z, r, h blocks.
    fn step(&self, pre: &[f64], h: &mut [f64], scratch: &mut Vec<f64>) {
        let m = self.hidden;
        let (u_zr, u_h) = self.u.split_at(2 * m * m);
        scratch.clear();
        scratch.resize(4 * m, 0.0);
        let (rec, rest) = scratch.split_at_mut(2 * m);
        let (rh, rec_h) = rest.split_at_mut(m);
        linalg::matvec_add(u_zr, h, rec);
        for j in 0..m {
            let r = linalg::sigmoid(pre[m + j] + rec[m + j]);
            rh[j] = r * h[j];
        }
        linalg::matvec_add(u_h, rh, rec_h);
        for j in 0..m {
            let z = linalg::sigmoid(pre[j] + rec[j]);
            let hc = (pre[2 * m + j] + rec_h[j]).tanh();
            h[j] = (1.0 - z) * h[j] + z * hc;
        }
    }
}

/// Read-only view of the voder weights arranged for fast stepping.
pub struct VoderEngine {
    cfg: VoderConfig,
    /// `[256 × 3·gru1]`: embedding row of each level times the embedding
    /// columns of the first GRU's input weights.
    embed_proj: Vec<f64>,
    /// Conditioning columns of the first GRU's input weights, `[3·gru1 × cond]`.
    w1_cond: Vec<f64>,
    b1: Vec<f64>,
    gru1: Gru,
    w2: Vec<f64>,
    b2: Vec<f64>,
    gru2: Gru,
    fc_w1: Vec<f64>,
    fc_w2: Vec<f64>,
    fc_b1: Vec<f64>,
    fc_b2: Vec<f64>,
    fc_a1: Vec<f64>,
    fc_a2: Vec<f64>,
}

impl VoderEngine {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let cfg = params.arch().voder.clone();
        let get = |n: &str| params.get(&format!("voder.{n}")).map(|t| t.data().to_vec());
        let (e, c, m1) = (cfg.embed_dim, cfg.cond_dim, cfg.gru1_hidden);
        let w1 = get("gru1.w")?;
        let table = get("embed.table")?;
        let mut embed_proj = vec![0.0; MULAW_LEVELS * 3 * m1];
        // Embedding columns are the first `e` of each row of w1 (row stride e + c).
        gemm(
            1.0,
            Mat::new(&table, MULAW_LEVELS, e),
            Mat::strided(&w1, 3 * m1, e, e + c).t(),
            0.0,
            &mut embed_proj,
        );
        let w1_cond = w1.chunks_exact(e + c).flat_map(|row| row[e..].to_vec()).collect();
        Ok(Self {
            embed_proj,
            w1_cond,
            b1: get("gru1.b")?,
            gru1: Gru {
                u: get("gru1.u")?,
                hidden: m1,
            },
            w2: get("gru2.w")?,
            b2: get("gru2.b")?,
            gru2: Gru {
                u: get("gru2.u")?,
                hidden: cfg.gru2_hidden,
            },
            fc_w1: get("dualfc.w1")?,
            fc_w2: get("dualfc.w2")?,
            fc_b1: get("dualfc.b1")?,
            fc_b2: get("dualfc.b2")?,
            fc_a1: get("dualfc.a1")?,
            fc_a2: get("dualfc.a2")?,
            cfg,
        })
    }

    pub fn config(&self) -> &VoderConfig {
        &self.cfg
    }

    /// First-GRU input contribution of a conditioning vector, bias included.
    pub fn project_cond(&self, cond_t: &[f64]) -> Vec<f64> {
        assert_eq!(cond_t.len(), self.cfg.cond_dim, "conditioning width");
        let mut out = self.b1.clone();
        linalg::matvec_add(&self.w1_cond, cond_t, &mut out);
        out
    }

    /// One sample step from a raw conditioning vector.
    pub fn step(&self, state: &mut VoderState, cond_t: &[f64]) -> Vec<f64> {
        let proj = self.project_cond(cond_t);
        let mut logits = vec![0.0; MULAW_LEVELS];
        self.step_projected(state, &proj, &mut logits);
        logits
    }

    /// One sample step given [`project_cond`](Self::project_cond)'s output.
    /// Updates the hiddens; `prev_level` is left for the caller to set.
    pub fn step_projected(&self, state: &mut VoderState, cond_proj: &[f64], logits: &mut [f64]) {
        let m1 = self.cfg.gru1_hidden;
        let m2 = self.cfg.gru2_hidden;
        let mut scratch = Vec::with_capacity(4 * m1);

        let emb = &self.embed_proj[state.prev_level * 3 * m1..(state.prev_level + 1) * 3 * m1];
        let pre1: Vec<f64> = emb.iter().zip(cond_proj).map(|(a, b)| a + b).collect();
        self.gru1.step(&pre1, &mut state.h1, &mut scratch);

        let mut pre2 = self.b2.clone();
        linalg::matvec_add(&self.w2, &state.h1, &mut pre2);
        self.gru2.step(&pre2, &mut state.h2, &mut scratch);

        let mut t1 = self.fc_b1.clone();
        linalg::matvec_add(&self.fc_w1, &state.h2, &mut t1);
        let mut t2 = self.fc_b2.clone();
        linalg::matvec_add(&self.fc_w2, &state.h2, &mut t2);
        for (i, out) in logits.iter_mut().enumerate() {
            *out = self.fc_a1[i] * t1[i].tanh() + self.fc_a2[i] * t2[i].tanh();
        }
        debug_assert_eq!(state.h2.len(), m2);
    }
}
