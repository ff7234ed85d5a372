use serde::{Deserialize, Serialize};

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Two-sided softplus squashing of one raw σ value. Returns the bounded value
/// and its derivative with respect to `raw`.
#[inline]
pub fn bound_sigma_grad(raw: f64, sigma_min: f64, sigma_max: f64) -> (f64, f64) {
    let upper = sigma_max - raw;
    let s1 = sigma_max - softplus(upper);
    let lower = s1 - sigma_min;
    let sigma = sigma_min + softplus(lower);
    (sigma, logistic(lower) * logistic(upper))
}

/// Elementwise bounded σ: `s1 = max - S(max - raw)`, then `min + S(s1 - min)`.
pub fn bound_sigma(raw: &[f64], sigma_min: f64, sigma_max: f64) -> Vec<f64> {
    raw.iter().map(|&r| bound_sigma_grad(r, sigma_min, sigma_max).0).collect()
}

/// How the σ head output is interpreted before bounding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaParam {
    /// The head predicts σ directly.
    #[default]
    Raw,
    /// The head predicts `ln σ`; `exp` is applied before bounding.
    Log,
}

impl SigmaParam {
    pub(crate) fn tag(self) -> u8 {
        match self {
            SigmaParam::Raw => 0,
            SigmaParam::Log => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(SigmaParam::Raw),
            1 => Some(SigmaParam::Log),
            _ => None,
        }
    }
}

/// Bounds on σ in standardized-rate units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaBounds {
    pub min: f64,
    pub max: f64,
    #[serde(default)]
    pub param: SigmaParam,
}

impl Default for SigmaBounds {
    fn default() -> Self {
        SigmaBounds { min: 1e-4, max: 10.0, param: SigmaParam::Raw }
    }
}

impl SigmaBounds {
    /// σ for one head output plus `dσ/d head`.
    #[inline]
    pub fn apply(&self, head: f64) -> (f64, f64) {
        match self.param {
            SigmaParam::Raw => bound_sigma_grad(head, self.min, self.max),
            SigmaParam::Log => {
                let e = head.min(50.0).exp();
                let (s, d) = bound_sigma_grad(e, self.min, self.max);
                let de = if head < 50.0 { e } else { 0.0 };
                (s, d * de)
            }
        }
    }

    pub fn is_valid(&self) -> bool {
        self.min > 0.0 && self.max > self.min && self.max.is_finite()
    }
}
