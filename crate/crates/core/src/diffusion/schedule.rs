//! Noise schedule, forward process, and the deterministic DDIM update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

/// Cumulative signal retention `alpha_bar[t]` for `t` in `0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear betas over `1..=T`; `alpha_bar[0] = 1`.
    pub fn linear(cfg: &ScheduleConfig) -> Result<Self> {
        let t = cfg.steps;
        if t == 0 || !(0.0 < cfg.beta_start && cfg.beta_start <= cfg.beta_end && cfg.beta_end < 1.0)
        {
            return Err(Error::contract(format!("invalid schedule {cfg:?}")));
        }
        let mut alpha_bar = Vec::with_capacity(t + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0f64;
        for s in 1..=t {
            let frac = if t == 1 {
                0.0
            } else {
                (s - 1) as f64 / (t - 1) as f64
            };
            let beta = cfg.beta_start + frac * (cfg.beta_end - cfg.beta_start);
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        Self::from_alpha_bar(alpha_bar)
    }

    /// Custom table. Must start at 1 and strictly decrease; the last entry
    /// may be 0 (the pure-noise limit).
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 || alpha_bar[0] != 1.0 {
            return Err(Error::contract("alpha_bar must start at 1 and have T >= 1"));
        }
        if alpha_bar.windows(2).any(|w| !(w[1] < w[0]))
            || alpha_bar.iter().any(|&a| !(0.0..=1.0).contains(&a))
        {
            return Err(Error::contract(
                "alpha_bar must strictly decrease within [0, 1]",
            ));
        }
        Ok(Self { alpha_bar })
    }

    /// `T`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bar
            .get(t)
            .copied()
            .ok_or(Error::TimestepOutOfRange {
                t,
                max: self.steps(),
            })
    }

    /// `sqrt(ab) * x0 + sqrt(1 - ab) * eps`.
    pub fn forward_diffuse(&self, x0: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor> {
        mix(x0, eps, self.alpha_bar(t)?)
    }

    /// `(x_t - sqrt(1 - ab) * eps_hat) / sqrt(ab)`.
    pub fn predict_x0(&self, x_t: &Tensor, eps_hat: &Tensor, t: usize) -> Result<Tensor> {
        let ab = self.alpha_bar(t)?;
        if ab <= 0.0 {
            return Err(Error::Singularity(t));
        }
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        x_t.zip_map(eps_hat, |x, e| ((x as f64 - b * e as f64) / a) as f32)?
            .ensure_finite("predict_x0")
    }

    /// Deterministic (eta = 0) update from `t` to `t_prev`.
    pub fn ddim_step(
        &self,
        x_t: &Tensor,
        eps_hat: &Tensor,
        t: usize,
        t_prev: usize,
    ) -> Result<Tensor> {
        if t_prev >= t {
            return Err(Error::contract(format!(
                "ddim_step needs t_prev < t, got {t_prev} >= {t}"
            )));
        }
        let x0 = self.predict_x0(x_t, eps_hat, t)?;
        mix(&x0, eps_hat, self.alpha_bar(t_prev)?)
    }

    /// `n` evenly spaced steps from `T` down, each paired with its successor;
    /// the last pair ends at 0.
    pub fn ddim_ladder(&self, n: usize) -> Result<Vec<(usize, usize)>> {
        let t = self.steps();
        if n == 0 || n > t {
            return Err(Error::contract(format!("ddim steps {n} not in 1..={t}")));
        }
        let ts: Vec<usize> = (0..n).map(|i| t - i * t / n).collect();
        Ok(ts
            .iter()
            .enumerate()
            .map(|(i, &cur)| (cur, ts.get(i + 1).copied().unwrap_or(0)))
            .collect())
    }
}

/// `sqrt(ab) * x0 + sqrt(1 - ab) * eps` for an explicit `ab`.
pub fn mix(x0: &Tensor, eps: &Tensor, alpha_bar: f64) -> Result<Tensor> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x0.zip_map(eps, |x, e| (a * x as f64 + b * e as f64) as f32)?
        .ensure_finite("forward_diffuse")
}

/// Classifier-free guidance: `eps_u + scale * (eps_c - eps_u)`.
pub fn cfg_noise(eps_cond: &Tensor, eps_uncond: &Tensor, scale: f32) -> Result<Tensor> {
    eps_cond.zip_map(eps_uncond, |c, u| u + scale * (c - u))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub scale: f32,
    /// Probability of blanking the condition during training.
    pub dropout: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            scale: 5.0,
            dropout: 0.1,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale >= 1.0) || !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::contract(format!("invalid guidance {self:?}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn sched() -> NoiseSchedule {
        NoiseSchedule::linear(&ScheduleConfig::default()).unwrap()
    }

    fn randn(seed: u64, shape: [usize; 4]) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn alpha_bar_table_shape() {
        let s = sched();
        assert_eq!(s.steps(), 1000);
        assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
        for t in 1..=1000 {
            let (prev, cur) = (s.alpha_bar(t - 1).unwrap(), s.alpha_bar(t).unwrap());
            assert!(cur < prev && cur > 0.0);
        }
        // Product of (1 - beta) recomputed with betas from the endpoints.
        let mut p = 1.0f64;
        for i in 0..1000 {
            p *= 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0);
        }
        assert!((s.alpha_bar(1000).unwrap() - p).abs() < 1e-15);
        assert!(matches!(
            s.alpha_bar(1001),
            Err(Error::TimestepOutOfRange { t: 1001, max: 1000 })
        ));
    }

    #[test]
    fn forward_at_zero_is_identity() {
        let x0 = randn(1, [1, 4, 2, 2]);
        let eps = randn(2, [1, 4, 2, 2]);
        assert_eq!(sched().forward_diffuse(&x0, 0, &eps).unwrap(), x0);
    }

    #[test]
    fn pure_noise_limit() {
        let x0 = randn(1, [1, 4, 2, 2]);
        let eps = randn(2, [1, 4, 2, 2]);
        let s = NoiseSchedule::from_alpha_bar(vec![1.0, 0.5, 0.0]).unwrap();
        assert_eq!(s.forward_diffuse(&x0, 2, &eps).unwrap(), eps);
        assert!(matches!(
            s.predict_x0(&x0, &eps, 2),
            Err(Error::Singularity(2))
        ));
    }

    #[test]
    fn quarter_retention_value() {
        let s = NoiseSchedule::from_alpha_bar(vec![1.0, 0.25]).unwrap();
        let out = s
            .forward_diffuse(
                &Tensor::zeros([1, 4, 1, 1]),
                1,
                &Tensor::full([1, 4, 1, 1], 1.0),
            )
            .unwrap();
        for &v in out.data() {
            assert!((v - 0.866025).abs() < 1e-6);
        }
    }

    #[test]
    fn out_of_range_timestep() {
        let x = Tensor::zeros([1, 4, 1, 1]);
        assert!(matches!(
            sched().forward_diffuse(&x, 1001, &x),
            Err(Error::TimestepOutOfRange { .. })
        ));
    }

    #[test]
    fn predict_x0_inverts_forward() {
        let s = sched();
        for (i, t) in [0usize, 1, 10, 250, 500].into_iter().enumerate() {
            let x0 = randn(10 + i as u64, [2, 4, 8, 8]);
            let eps = randn(20 + i as u64, [2, 4, 8, 8]);
            let xt = s.forward_diffuse(&x0, t, &eps).unwrap();
            let back = s.predict_x0(&xt, &eps, t).unwrap();
            assert!(back.max_abs_diff(&x0).unwrap() <= 1e-5, "t = {t}");
        }
        let xt = randn(3, [1, 4, 2, 2]);
        assert_eq!(s.predict_x0(&xt, &randn(4, [1, 4, 2, 2]), 0).unwrap(), xt);
    }

    #[test]
    fn ddim_step_is_schedule_consistent() {
        let s = sched();
        let x0 = randn(5, [1, 4, 4, 4]);
        let eps = randn(6, [1, 4, 4, 4]);
        let xt = s.forward_diffuse(&x0, 600, &eps).unwrap();
        let stepped = s.ddim_step(&xt, &eps, 600, 560).unwrap();
        let direct = s.forward_diffuse(&x0, 560, &eps).unwrap();
        assert!(stepped.max_abs_diff(&direct).unwrap() < 1e-5);
        let last = s.ddim_step(&xt, &eps, 600, 0).unwrap();
        assert_eq!(last, s.predict_x0(&xt, &eps, 600).unwrap());
        assert_eq!(stepped, s.ddim_step(&xt, &eps, 600, 560).unwrap());
        assert!(s.ddim_step(&xt, &eps, 600, 600).is_err());
    }

    #[test]
    fn ladder_spacing() {
        let l = sched().ddim_ladder(25).unwrap();
        assert_eq!(l.len(), 25);
        assert_eq!(l[0], (1000, 960));
        assert_eq!(l[24], (40, 0));
        assert!(l.windows(2).all(|w| w[0].1 == w[1].0));
    }

    #[test]
    fn full_ladder_with_oracle_noise_recovers_x0() {
        let s = sched();
        let x0 = randn(7, [1, 4, 8, 8]);
        let eps = randn(8, [1, 4, 8, 8]);
        let mut x = s.forward_diffuse(&x0, 1000, &eps).unwrap();
        for (t, tp) in s.ddim_ladder(25).unwrap() {
            x = s.ddim_step(&x, &eps, t, tp).unwrap();
        }
        assert!(x.max_abs_diff(&x0).unwrap() <= 1e-4);
    }

    #[test]
    fn guidance_combination() {
        let c = Tensor::full([1, 4, 1, 1], 0.2);
        let u = Tensor::zeros([1, 4, 1, 1]);
        assert!(cfg_noise(&c, &u, 5.0)
            .unwrap()
            .data()
            .iter()
            .all(|&v| (v - 1.0).abs() < 1e-6));
        assert_eq!(cfg_noise(&c, &u, 1.0).unwrap(), c);
        assert_eq!(cfg_noise(&c, &c, 7.5).unwrap(), c);
    }

    #[test]
    fn guidance_validation() {
        assert!(GuidanceConfig::default().validate().is_ok());
        assert!(GuidanceConfig {
            scale: 0.5,
            dropout: 0.1
        }
        .validate()
        .is_err());
        assert!(GuidanceConfig {
            scale: 5.0,
            dropout: 1.0
        }
        .validate()
        .is_err());
    }
}
