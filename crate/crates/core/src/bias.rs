//! Softplus-regularized bias potentials and the composite biased force.

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

#[allow(unused_imports)] // inherent methods shadow it whenever std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::cv::CvMap;
use crate::dynamics::ForceField;
use crate::error::{check_dim, invalid, Result};
use crate::fht::FhtModel;
use crate::history::RescaleMap;
use crate::potentials::PotentialSpec;

/// Beyond `|r / tau|` of this size the softplus switches to its asymptotic forms.
pub const SOFTPLUS_SWITCH: f64 = 30.0;

/// `K(r) = eps + tau * ln(1 + exp(r / tau))`.
#[inline]
pub fn softplus_reg(r: f64, eps: f64, tau: f64) -> f64 {
    let s = r / tau;
    let sp = if s > SOFTPLUS_SWITCH {
        s + (-s).exp()
    } else if s < -SOFTPLUS_SWITCH {
        s.exp()
    } else {
        s.exp().ln_1p()
    };
    eps + tau * sp
}

/// `K'(r)`, the logistic function of `r / tau`.
#[inline]
pub fn softplus_reg_deriv(r: f64, tau: f64) -> f64 {
    let s = r / tau;
    if s > SOFTPLUS_SWITCH {
        1.0 - (-s).exp()
    } else if s < -SOFTPLUS_SWITCH {
        s.exp()
    } else {
        1.0 / (1.0 + (-s).exp())
    }
}

/// `V(z) = (alpha / beta) log K(rho(u(z)) prod_k J_k)`, where `u` is the rescale map onto
/// the unit box and `rho` the fitted density there.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasPotential {
    pub model: FhtModel,
    pub rescale: RescaleMap,
    pub eps: f64,
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(skip)]
    out_of_domain: AtomicU64,
}

impl Clone for BiasPotential {
    fn clone(&self) -> Self {
        BiasPotential {
            model: self.model.clone(),
            rescale: self.rescale.clone(),
            eps: self.eps,
            tau: self.tau,
            alpha: self.alpha,
            beta: self.beta,
            out_of_domain: AtomicU64::new(self.out_of_domain_count()),
        }
    }
}

impl PartialEq for BiasPotential {
    fn eq(&self, o: &Self) -> bool {
        self.model == o.model
            && self.rescale == o.rescale
            && self.eps.to_bits() == o.eps.to_bits()
            && self.tau.to_bits() == o.tau.to_bits()
            && self.alpha.to_bits() == o.alpha.to_bits()
            && self.beta.to_bits() == o.beta.to_bits()
    }
}

impl BiasPotential {
    pub fn new(
        model: FhtModel,
        rescale: RescaleMap,
        eps: f64,
        tau: f64,
        alpha: f64,
        beta: f64,
    ) -> Result<Self> {
        let bp = BiasPotential { model, rescale, eps, tau, alpha, beta, out_of_domain: AtomicU64::new(0) };
        bp.validate()?;
        Ok(bp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(invalid!("softplus floor eps must be positive, got {}", self.eps));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(invalid!("softplus scale tau must be positive, got {}", self.tau));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(invalid!("bias strength alpha must be non-negative, got {}", self.alpha));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(invalid!("inverse temperature must be positive, got {}", self.beta));
        }
        check_dim(self.model.m(), self.rescale.dim())?;
        for (k, b) in self.model.bases().iter().enumerate() {
            if b.periodic != self.rescale.periodic[k] {
                return Err(invalid!("coordinate {k}: basis and rescale disagree on periodicity"));
            }
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.model.m()
    }

    /// Number of evaluations so far that fell outside the rescaled box.
    pub fn out_of_domain_count(&self) -> u64 {
        self.out_of_domain.load(Ordering::Relaxed)
    }

    fn to_unit(&self, z: &[f64], u: &mut [f64]) {
        self.rescale.to_unit_into(z, u);
        let outside = u.iter().zip(&self.rescale.periodic).any(|(x, &p)| !p && x.abs() > 1.0);
        if outside {
            self.out_of_domain.fetch_add(1, Ordering::Relaxed);
        }
    }

    /// Jacobian-weighted density `rho(u(z)) prod J_k` in original coordinates.
    pub fn density(&self, z: &[f64]) -> Result<f64> {
        check_dim(self.m(), z.len())?;
        let mut u = vec![0.0; z.len()];
        self.to_unit(z, &mut u);
        Ok(self.model.evaluate(&u)? * self.rescale.jacobian_product())
    }

    /// Jacobian-weighted density and its gradient with respect to `z`.
    pub fn density_and_gradient(&self, z: &[f64], grad: &mut [f64]) -> Result<f64> {
        check_dim(self.m(), z.len())?;
        let mut u = vec![0.0; z.len()];
        self.to_unit(z, &mut u);
        let rho = self.model.value_and_gradient(&u, grad)?;
        let jp = self.rescale.jacobian_product();
        for (k, g) in grad.iter_mut().enumerate() {
            *g *= jp * self.rescale.jacobian(k);
        }
        Ok(rho * jp)
    }

    pub fn value(&self, z: &[f64]) -> Result<f64> {
        if self.alpha == 0.0 {
            check_dim(self.m(), z.len())?;
            return Ok(0.0);
        }
        let rho = self.density(z)?;
        Ok(self.alpha / self.beta * softplus_reg(rho, self.eps, self.tau).ln())
    }

    /// Bias value and `grad_z V`.
    pub fn value_and_gradient(&self, z: &[f64], grad: &mut [f64]) -> Result<f64> {
        if self.alpha == 0.0 {
            check_dim(self.m(), z.len())?;
            check_dim(self.m(), grad.len())?;
            grad.iter_mut().for_each(|g| *g = 0.0);
            return Ok(0.0);
        }
        let rho = self.density_and_gradient(z, grad)?;
        let k = softplus_reg(rho, self.eps, self.tau);
        let scale = self.alpha / self.beta * softplus_reg_deriv(rho, self.tau) / k;
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok(self.alpha / self.beta * k.ln())
    }

    pub fn gradient(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.m()];
        self.value_and_gradient(z, &mut g)?;
        Ok(g)
    }
}

/// Isotropic Gaussian bump `height * exp(-|z - center|^2 / (2 width^2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hill {
    pub center: Vec<f64>,
    pub height: f64,
    pub width: f64,
}

/// Fixed sum of Gaussian hills, for hand-built biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HillBias {
    pub hills: Vec<Hill>,
}

impl HillBias {
    pub fn validate(&self) -> Result<()> {
        let m = self.hills.first().map_or(0, |h| h.center.len());
        for h in &self.hills {
            check_dim(m, h.center.len())?;
            if !(h.width > 0.0) || !h.height.is_finite() {
                return Err(invalid!("hill needs a positive width and finite height"));
            }
        }
        Ok(())
    }

    pub fn value_and_gradient(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut v = 0.0;
        for h in &self.hills {
            let w2 = h.width * h.width;
            let r2: f64 = z.iter().zip(&h.center).map(|(a, c)| (a - c) * (a - c)).sum();
            let e = h.height * (-0.5 * r2 / w2).exp();
            v += e;
            for ((g, a), c) in grad.iter_mut().zip(z).zip(&h.center) {
                *g -= e * (a - c) / w2;
            }
        }
        v
    }
}

/// The bias acting in CV space during a stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum Bias {
    None,
    Fht(BiasPotential),
    Hills(HillBias),
}

impl Bias {
    /// CV dimension the bias expects, if it constrains one.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Bias::None => None,
            Bias::Fht(bp) => Some(bp.m()),
            Bias::Hills(h) => h.hills.first().map(|h| h.center.len()),
        }
    }

    /// True when the bias contributes exactly nothing.
    pub fn is_zero(&self) -> bool {
        match self {
            Bias::None => true,
            Bias::Fht(bp) => bp.alpha == 0.0,
            Bias::Hills(h) => h.hills.is_empty(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Bias::None => Ok(()),
            Bias::Fht(bp) => bp.validate(),
            Bias::Hills(h) => h.validate(),
        }
    }

    pub fn value(&self, z: &[f64]) -> Result<f64> {
        match self {
            Bias::None => Ok(0.0),
            Bias::Fht(bp) => bp.value(z),
            Bias::Hills(h) => {
                let mut g = vec![0.0; z.len()];
                Ok(h.value_and_gradient(z, &mut g))
            }
        }
    }

    pub fn value_and_gradient(&self, z: &[f64], grad: &mut [f64]) -> Result<f64> {
        check_dim(z.len(), grad.len())?;
        if let Some(m) = self.dim() {
            check_dim(m, z.len())?;
        }
        match self {
            Bias::None => {
                grad.iter_mut().for_each(|g| *g = 0.0);
                Ok(0.0)
            }
            Bias::Fht(bp) => bp.value_and_gradient(z, grad),
            Bias::Hills(h) => Ok(h.value_and_gradient(z, grad)),
        }
    }

    /// Bias evaluated at configuration `x` through the CV map.
    pub fn value_at(&self, cv: &CvMap, x: &[f64]) -> Result<f64> {
        if self.is_zero() {
            return Ok(0.0);
        }
        self.value(&cv.eval(x)?)
    }
}

/// `F(x) = -grad U(x) - J(x)^T grad_z V(xi(x))`.
#[derive(Debug, Clone, Copy)]
pub struct BiasedForce<'a> {
    pub potential: &'a PotentialSpec,
    pub cv: &'a CvMap,
    pub bias: &'a Bias,
}

impl<'a> BiasedForce<'a> {
    pub fn new(potential: &'a PotentialSpec, cv: &'a CvMap, bias: &'a Bias) -> Result<Self> {
        check_dim(potential.dim(), cv.input_dim())?;
        if let Some(m) = bias.dim() {
            check_dim(cv.output_dim(), m)?;
        }
        Ok(BiasedForce { potential, cv, bias })
    }
}

impl ForceField for BiasedForce<'_> {
    fn dim(&self) -> usize {
        self.potential.dim()
    }

    fn force_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.potential.force_into(x, out)?;
        if self.bias.is_zero() {
            return Ok(());
        }
        let m = self.cv.output_dim();
        let mut z = vec![0.0; 2 * m];
        let (z, g) = z.split_at_mut(m);
        self.cv.eval_into(x, z)?;
        self.bias.value_and_gradient(z, g)?;
        g.iter_mut().for_each(|v| *v = -*v);
        self.cv.pullback_add(x, g, out)
    }
}

/// Total force of the biased composite potential at `x`.
pub fn total_force(bias: &Bias, potential: &PotentialSpec, cv: &CvMap, x: &[f64]) -> Result<Vec<f64>> {
    let field = BiasedForce::new(potential, cv, bias)?;
    let mut f = vec![0.0; x.len()];
    check_dim(field.dim(), x.len())?;
    field.force_into(x, &mut f)?;
    Ok(f)
}
