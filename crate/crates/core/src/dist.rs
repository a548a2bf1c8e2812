//! Diagonal-Gaussian machinery: isotropic priors, posterior codes, the
//! reparameterized sampler, closed-form KL terms, and the decoder
//! likelihood.
//!
//! Every quantity exists in two forms: a plain value-level function (used by
//! evaluation code and test oracles) and a graph-level builder (used inside
//! the training objective so gradients flow). The two compute the same
//! formula.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};
use rand::Rng;

/// Diagonal Gaussian over a latent: mean and per-coordinate variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCode {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl GaussianCode {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::Shape(format!(
                "gaussian code: mean dim {} vs variance dim {}",
                mean.len(),
                var.len()
            )));
        }
        if var.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Numeric(
                "gaussian code: variances must be strictly positive".into(),
            ));
        }
        Ok(GaussianCode { mean, var })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Isotropic prior variances for the two latents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorConfig {
    pub eps_y: f64,
    pub eps_z: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            eps_y: 1.0,
            eps_z: 1.0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eps_y <= 0.0 || self.eps_z <= 0.0 {
            return Err(Error::Config(format!(
                "prior variances must be > 0, got eps_y {} eps_z {}",
                self.eps_y, self.eps_z
            )));
        }
        Ok(())
    }
}

/// One standard-normal draw used by the reparameterized sampler, tagged
/// with its index within the per-sample batch of `total` draws.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    pub values: Vec<f64>,
    /// 1-based draw index.
    pub index: usize,
    pub total: usize,
}

impl NoiseDraw {
    pub fn new(values: Vec<f64>, index: usize, total: usize) -> Result<Self> {
        if index == 0 || index > total {
            return Err(Error::Config(format!(
                "noise draw index {index} outside 1..={total}"
            )));
        }
        Ok(NoiseDraw {
            values,
            index,
            total,
        })
    }

    /// Draw from a seeded stream.
    pub fn sample<R: Rng>(rng: &mut R, dim: usize, index: usize, total: usize) -> Result<Self> {
        let values = (0..dim)
            .map(|_| rng.sample(rand_distr::StandardNormal))
            .collect();
        Self::new(values, index, total)
    }
}

/// `KL(N(mean, diag(var)) || N(0, prior_var I))` in closed form:
/// `0.5 * sum_i [ var_i/e + mean_i^2/e - 1 - ln(var_i/e) ]`.
pub fn kl_gaussian_diag(code: &GaussianCode, prior_var: f64) -> Result<f64> {
    if prior_var <= 0.0 {
        return Err(Error::Config(format!(
            "kl_gaussian_diag: prior variance must be > 0, got {prior_var}"
        )));
    }
    let mut acc = 0.0;
    for (&m, &v) in code.mean.iter().zip(&code.var) {
        let r = v / prior_var;
        acc += r + m * m / prior_var - 1.0 - r.ln();
    }
    Ok(0.5 * acc)
}

/// `mean + sqrt(var) * noise`, the reparameterization of a posterior draw.
pub fn reparameterize(code: &GaussianCode, noise: &NoiseDraw) -> Result<Vec<f64>> {
    if noise.values.len() != code.dim() {
        return Err(Error::Shape(format!(
            "reparameterize: code dim {} vs noise dim {}",
            code.dim(),
            noise.values.len()
        )));
    }
    Ok(code
        .mean
        .iter()
        .zip(&code.var)
        .zip(&noise.values)
        .map(|((&m, &v), &e)| m + v.sqrt() * e)
        .collect())
}

/// Log density of `x` under an isotropic Gaussian centered at `x_hat`:
/// `-D/2 ln(2 pi obs_var) - ||x - x_hat||^2 / (2 obs_var)`.
pub fn gaussian_log_likelihood(x: &[f64], x_hat: &[f64], obs_var: f64) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::Shape(format!(
            "gaussian_log_likelihood: lengths {} vs {}",
            x.len(),
            x_hat.len()
        )));
    }
    if obs_var <= 0.0 {
        return Err(Error::Config(format!(
            "gaussian_log_likelihood: obs_var must be > 0, got {obs_var}"
        )));
    }
    let d = x.len() as f64;
    let ss: f64 = x
        .iter()
        .zip(x_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(-0.5 * d * (2.0 * std::f64::consts::PI * obs_var).ln() - ss / (2.0 * obs_var))
}

// ---- graph-level builders -------------------------------------------------

/// Graph version of [`kl_gaussian_diag`] on `[d]`-shaped mean/variance nodes.
pub fn kl_gaussian_diag_var(g: &mut Graph, mean: Var, var: Var, prior_var: f64) -> Result<Var> {
    if prior_var <= 0.0 {
        return Err(Error::Config(format!(
            "kl_gaussian_diag_var: prior variance must be > 0, got {prior_var}"
        )));
    }
    let d = g.value(mean).numel() as f64;
    if g.value(var).numel() as usize != d as usize {
        return Err(Error::Shape(format!(
            "kl_gaussian_diag_var: mean {:?} vs variance {:?}",
            g.value(mean).shape(),
            g.value(var).shape()
        )));
    }
    let var_sum = g.sum_all(var);
    let var_term = g.affine(var_sum, 1.0 / prior_var, 0.0);
    let mean_sq = g.mul(mean, mean)?;
    let mean_sum = g.sum_all(mean_sq);
    let mean_term = g.affine(mean_sum, 1.0 / prior_var, 0.0);
    let ln_var = g.ln(var)?;
    let ln_sum = g.sum_all(ln_var);
    let a = g.add(var_term, mean_term)?;
    let a = g.sub(a, ln_sum)?;
    // 0.5 * (A - d) + 0.5 * d * ln(prior_var)
    Ok(g.affine(a, 0.5, 0.5 * d * (prior_var.ln() - 1.0)))
}

/// Graph version of [`reparameterize`]; `noise` is a constant leaf.
pub fn reparameterize_var(g: &mut Graph, mean: Var, var: Var, noise: Var) -> Result<Var> {
    let std = g.sqrt(var)?;
    let scaled = g.mul(std, noise)?;
    g.add(mean, scaled)
}

/// Graph version of [`gaussian_log_likelihood`]; `x` is a constant leaf.
pub fn gaussian_log_likelihood_var(g: &mut Graph, x: Var, x_hat: Var, obs_var: f64) -> Result<Var> {
    if obs_var <= 0.0 {
        return Err(Error::Config(format!(
            "gaussian_log_likelihood_var: obs_var must be > 0, got {obs_var}"
        )));
    }
    let d = g.value(x).numel() as f64;
    let r = g.sub(x, x_hat)?;
    let sq = g.mul(r, r)?;
    let ss = g.sum_all(sq);
    Ok(g.affine(
        ss,
        -1.0 / (2.0 * obs_var),
        -0.5 * d * (2.0 * std::f64::consts::PI * obs_var).ln(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, StreamLabel};
    use crate::tensor::{backward, Tensor};

    /// Monte-Carlo KL oracle: average of `ln q(s) - ln p(s)` over draws
    /// `s ~ q`. Independent of the closed form it checks.
    pub(crate) fn kl_monte_carlo(
        code: &GaussianCode,
        prior_var: f64,
        draws: usize,
        seed: u64,
    ) -> f64 {
        let mut rng = stream_rng(seed, StreamLabel::Noise, 77);
        let mut acc = 0.0;
        for _ in 0..draws {
            let mut lq = 0.0;
            let mut lp = 0.0;
            for (&m, &v) in code.mean().iter().zip(code.var()) {
                let e: f64 = rng.sample(rand_distr::StandardNormal);
                let s = m + v.sqrt() * e;
                lq += -0.5 * (2.0 * std::f64::consts::PI * v).ln() - (s - m) * (s - m) / (2.0 * v);
                lp += -0.5 * (2.0 * std::f64::consts::PI * prior_var).ln()
                    - s * s / (2.0 * prior_var);
            }
            acc += lq - lp;
        }
        acc / draws as f64
    }

    #[test]
    fn kl_zero_for_identical_distributions() {
        let code = GaussianCode::new(vec![0.0, 0.0], vec![0.7, 0.7]).unwrap();
        assert!(kl_gaussian_diag(&code, 0.7).unwrap().abs() < 1e-15);
    }

    #[test]
    fn kl_matches_monte_carlo_oracle() {
        // unit-variance shifted mean: exact value 1/2
        let c1 = GaussianCode::new(vec![1.0], vec![1.0]).unwrap();
        let a1 = kl_gaussian_diag(&c1, 1.0).unwrap();
        assert!((a1 - 0.5).abs() < 1e-12);
        assert!((a1 - kl_monte_carlo(&c1, 1.0, 1_000_000, 3)).abs() < 1e-2);

        // zero mean, doubled variance: 0.5 * (2 - 1 - ln 2)
        let c2 = GaussianCode::new(vec![0.0], vec![2.0]).unwrap();
        let a2 = kl_gaussian_diag(&c2, 1.0).unwrap();
        assert!((a2 - 0.5 * (2.0 - 1.0 - 2.0f64.ln())).abs() < 1e-12);
        assert!((a2 - 0.15342640972002733).abs() < 1e-12);
        assert!((a2 - kl_monte_carlo(&c2, 1.0, 1_000_000, 4)).abs() < 1e-2);
    }

    #[test]
    fn kl_non_negative_on_random_codes() {
        let mut rng = stream_rng(9, StreamLabel::Noise, 1);
        for _ in 0..10_000 {
            let d = rng.gen_range(1..5);
            let mean = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let var = (0..d).map(|_| rng.gen_range(0.1..4.0)).collect();
            let code = GaussianCode::new(mean, var).unwrap();
            let prior = rng.gen_range(0.1..4.0);
            assert!(kl_gaussian_diag(&code, prior).unwrap() >= 0.0);
        }
    }

    #[test]
    fn kl_rejects_bad_inputs() {
        assert!(GaussianCode::new(vec![0.0], vec![0.0]).is_err());
        assert!(GaussianCode::new(vec![0.0], vec![-1.0]).is_err());
        assert!(GaussianCode::new(vec![0.0, 1.0], vec![1.0]).is_err());
        let code = GaussianCode::new(vec![0.0], vec![1.0]).unwrap();
        assert!(kl_gaussian_diag(&code, 0.0).is_err());
    }

    #[test]
    fn reparameterize_zero_noise_returns_mean() {
        let code = GaussianCode::new(vec![1.5, -0.5], vec![4.0, 9.0]).unwrap();
        let noise = NoiseDraw::new(vec![0.0, 0.0], 1, 1).unwrap();
        assert_eq!(reparameterize(&code, &noise).unwrap(), vec![1.5, -0.5]);
    }

    #[test]
    fn reparameterize_hand_case_and_shape_error() {
        let code = GaussianCode::new(vec![2.0], vec![4.0]).unwrap();
        let noise = NoiseDraw::new(vec![1.0], 1, 1).unwrap();
        assert_eq!(reparameterize(&code, &noise).unwrap(), vec![4.0]);

        let bad = NoiseDraw::new(vec![1.0, 1.0], 1, 1).unwrap();
        assert!(reparameterize(&code, &bad).is_err());
        assert!(NoiseDraw::new(vec![0.0], 0, 1).is_err());
        assert!(NoiseDraw::new(vec![0.0], 3, 2).is_err());
    }

    #[test]
    fn reparameterize_sample_moments() {
        let code = GaussianCode::new(vec![0.8, -1.2], vec![0.25, 2.25]).unwrap();
        let mut rng = stream_rng(21, StreamLabel::Noise, 2);
        let n = 100_000;
        let mut sums = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let noise = NoiseDraw::sample(&mut rng, 2, 1, 1).unwrap();
            let s = reparameterize(&code, &noise).unwrap();
            for i in 0..2 {
                sums[i] += s[i];
                sq[i] += s[i] * s[i];
            }
        }
        for i in 0..2 {
            let mean = sums[i] / n as f64;
            let var = sq[i] / n as f64 - mean * mean;
            let se_mean = (code.var()[i] / n as f64).sqrt();
            // variance of the sample variance for a Gaussian: 2 sigma^4 / n
            let se_var = (2.0 * code.var()[i] * code.var()[i] / n as f64).sqrt();
            assert!((mean - code.mean()[i]).abs() < 3.0 * se_mean);
            assert!((var - code.var()[i]).abs() < 3.0 * se_var);
        }
    }

    #[test]
    fn log_likelihood_values() {
        // perfect reconstruction, D = 1, unit variance
        let v = gaussian_log_likelihood(&[0.3], &[0.3], 1.0).unwrap();
        assert!((v + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        assert!((v + 0.9189385332046727).abs() < 1e-12);

        // increasing the squared error by ds lowers the value by ds/2
        let base = gaussian_log_likelihood(&[0.0, 0.0], &[1.0, 0.0], 1.0).unwrap();
        let moved = gaussian_log_likelihood(&[0.0, 0.0], &[1.0, 1.0], 1.0).unwrap();
        assert!((base - moved - 0.5).abs() < 1e-12);

        assert!(gaussian_log_likelihood(&[0.0], &[0.0, 1.0], 1.0).is_err());
        assert!(gaussian_log_likelihood(&[0.0], &[0.0], 0.0).is_err());
    }

    #[test]
    fn log_likelihood_maximized_at_perfect_reconstruction() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![0.4, -0.7, 1.1]));
        let x_hat = g.param(Tensor::from_vec(vec![0.4, -0.7, 1.1]));
        let ll = gaussian_log_likelihood_var(&mut g, x, x_hat, 1.0).unwrap();
        let grads = backward(&g, ll).unwrap();
        for &gv in grads.get(x_hat).unwrap().data() {
            assert_eq!(gv, 0.0);
        }
    }

    #[test]
    fn graph_builders_match_plain_functions() {
        let code = GaussianCode::new(vec![0.4, -1.1, 0.2], vec![0.6, 1.7, 0.9]).unwrap();
        let prior = 1.3;
        let plain_kl = kl_gaussian_diag(&code, prior).unwrap();

        let mut g = Graph::new();
        let mean = g.constant(Tensor::from_vec(code.mean().to_vec()));
        let var = g.constant(Tensor::from_vec(code.var().to_vec()));
        let kl = kl_gaussian_diag_var(&mut g, mean, var, prior).unwrap();
        assert!((g.value(kl).item().unwrap() - plain_kl).abs() < 1e-12);

        let noise = NoiseDraw::new(vec![0.3, -0.8, 1.4], 1, 1).unwrap();
        let plain_s = reparameterize(&code, &noise).unwrap();
        let nz = g.constant(Tensor::from_vec(noise.values.clone()));
        let s = reparameterize_var(&mut g, mean, var, nz).unwrap();
        for (a, b) in g.value(s).data().iter().zip(&plain_s) {
            assert!((a - b).abs() < 1e-15);
        }

        let x = [0.1, 0.2, 0.3];
        let xh = [0.0, 0.4, 0.2];
        let plain_ll = gaussian_log_likelihood(&x, &xh, 0.7).unwrap();
        let xv = g.constant(Tensor::from_vec(x.to_vec()));
        let xhv = g.constant(Tensor::from_vec(xh.to_vec()));
        let ll = gaussian_log_likelihood_var(&mut g, xv, xhv, 0.7).unwrap();
        assert!((g.value(ll).item().unwrap() - plain_ll).abs() < 1e-12);
    }

    #[test]
    fn reparameterization_gradients() {
        // d(sample)/d(mean) = 1, d(sample)/d(var) = noise / (2 sqrt(var))
        let mean_t = Tensor::from_vec(vec![0.7]);
        let var_t = Tensor::from_vec(vec![2.3]);
        let eps = 0.9;

        let mut g = Graph::new();
        let mean = g.param(mean_t.clone());
        let var = g.param(var_t.clone());
        let nz = g.constant(Tensor::from_vec(vec![eps]));
        let s = reparameterize_var(&mut g, mean, var, nz).unwrap();
        let loss = g.sum_all(s);
        let grads = backward(&g, loss).unwrap();

        assert!((grads.get(mean).unwrap().data()[0] - 1.0).abs() < 1e-12);
        let expect = eps / (2.0 * var_t.data()[0].sqrt());
        assert!((grads.get(var).unwrap().data()[0] - expect).abs() < 1e-12);

        // cross-check the variance gradient against finite differences
        let fd = crate::tensor::finite_diff_grad(
            |v| {
                let mut g = Graph::new();
                let m = g.constant(mean_t.clone());
                let vv = g.constant(v.clone());
                let nz = g.constant(Tensor::from_vec(vec![eps]));
                let s = reparameterize_var(&mut g, m, vv, nz)?;
                g.value(s).item()
            },
            &var_t,
            1e-6,
        )
        .unwrap();
        assert!((fd.data()[0] - expect).abs() < 1e-8);
    }
}
