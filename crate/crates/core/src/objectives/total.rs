use serde::{Deserialize, Serialize};

pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_MU: f64 = 0.6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub l_scl: f64,
    pub l_kd: f64,
    pub l_kl: f64,
    pub l_ca: f64,
    pub l_mcls: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_scl: f64,
    pub l_kd: f64,
    pub l_kl: f64,
    pub l_ca: f64,
    pub l_mcls: f64,
    pub l_cs: f64,
    pub l_total: f64,
    pub lambda: f64,
    pub mu: f64,
}

/// `L_cs = L_scl + L_kd + L_kl`, `L_total = L_cs + lambda L_ca + mu L_mcls`.
pub fn total_loss(parts: LossParts, lambda: f64, mu: f64) -> LossBreakdown {
    let l_cs = parts.l_scl + parts.l_kd + parts.l_kl;
    LossBreakdown {
        l_scl: parts.l_scl,
        l_kd: parts.l_kd,
        l_kl: parts.l_kl,
        l_ca: parts.l_ca,
        l_mcls: parts.l_mcls,
        l_cs,
        l_total: l_cs + lambda * parts.l_ca + mu * parts.l_mcls,
        lambda,
        mu,
    }
}
