//! Malfunction injectors. Each takes the honest update and returns the
//! corrupted broadcast; the input is never modified.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{init_params, ModelSpec, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    #[default]
    None,
    Ana,
    Sfa,
    RandomWeights,
    Dynamic,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Ana => "ana",
            AttackKind::Sfa => "sfa",
            AttackKind::RandomWeights => "random_weights",
            AttackKind::Dynamic => "dynamic",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AnaForm {
    /// `theta + N(0, sigma^2 I)`
    Plain,
    /// `theta_k + eps_k * (s / 100) * theta_k`, `eps_k ~ N(0, 1)`
    #[default]
    Scaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub ana_form: AnaForm,
    pub ana_scaling_s: f64,
    pub ana_sigma: f64,
    pub sfa_alpha: f64,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            kind: AttackKind::None,
            ana_form: AnaForm::Scaled,
            ana_scaling_s: 120.5,
            ana_sigma: 0.0,
            sfa_alpha: 1.0,
        }
    }
}

impl AttackSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.ana_scaling_s >= 0.0 && self.ana_scaling_s.is_finite()) {
            return Err(Error::InvalidArgument("ana_scaling_s must be >= 0".into()));
        }
        if !(self.ana_sigma >= 0.0 && self.ana_sigma.is_finite()) {
            return Err(Error::InvalidArgument("ana_sigma must be >= 0".into()));
        }
        if !(self.sfa_alpha > 0.0 && self.sfa_alpha.is_finite()) {
            return Err(Error::InvalidArgument("sfa_alpha must be > 0".into()));
        }
        Ok(())
    }
}

/// Additive-noise attack in either form. Zero noise returns the input exactly.
pub fn ana<R: Rng + ?Sized>(params: &ParamVector, spec: &AttackSpec, rng: &mut R) -> Result<ParamVector> {
    let values = match spec.ana_form {
        AnaForm::Plain => {
            let noise = Normal::new(0.0, spec.ana_sigma)
                .map_err(|e| Error::InvalidArgument(format!("ana_sigma: {e}")))?;
            params.values().iter().map(|t| t + noise.sample(rng)).collect()
        }
        AnaForm::Scaled => {
            let scale = spec.ana_scaling_s / 100.0;
            params
                .values()
                .iter()
                .map(|t| {
                    let eps: f64 = StandardNormal.sample(rng);
                    t + eps * scale * t
                })
                .collect()
        }
    };
    params.with_values(values)
}

/// Sign flip: `-alpha * theta`.
pub fn sfa(params: &ParamVector, alpha: f64) -> Result<ParamVector> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("sfa alpha must be > 0, got {alpha}")));
    }
    params.with_values(params.values().iter().map(|t| -alpha * t).collect())
}

/// A fresh initialization drawn from the attack stream.
pub fn random_update<R: Rng + ?Sized>(spec: &Arc<ModelSpec>, rng: &mut R) -> ParamVector {
    init_params(spec, rng.random())
}

pub fn dynamic_choose<R: Rng + ?Sized>(rng: &mut R) -> AttackKind {
    match rng.random_range(0..3) {
        0 => AttackKind::Ana,
        1 => AttackKind::Sfa,
        _ => AttackKind::RandomWeights,
    }
}

/// Applies `spec` to an honest update. Returns the concrete attack used
/// (dynamic resolves to one of the three) and the corrupted vector.
pub fn corrupt<R: Rng + ?Sized>(
    params: &ParamVector,
    spec: &AttackSpec,
    rng: &mut R,
) -> Result<(AttackKind, ParamVector)> {
    let kind = match spec.kind {
        AttackKind::Dynamic => dynamic_choose(rng),
        k => k,
    };
    let out = match kind {
        AttackKind::None => params.clone(),
        AttackKind::Ana => ana(params, spec, rng)?,
        AttackKind::Sfa => sfa(params, spec.sfa_alpha)?,
        AttackKind::RandomWeights => random_update(params.spec(), rng),
        AttackKind::Dynamic => unreachable!("dynamic resolved above"),
    };
    Ok((kind, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::rng;

    fn spec() -> Arc<ModelSpec> {
        Arc::new(ModelSpec::new(vec![2, 3, 2], Activation::Relu).unwrap())
    }

    fn sample() -> ParamVector {
        init_params(&spec(), 3)
    }

    #[test]
    fn zero_noise_is_identity() {
        let p = sample();
        let plain = AttackSpec { ana_form: AnaForm::Plain, ana_sigma: 0.0, ..Default::default() };
        let scaled = AttackSpec { ana_form: AnaForm::Scaled, ana_scaling_s: 0.0, ..Default::default() };
        assert_eq!(ana(&p, &plain, &mut rng::seeded(1)).unwrap(), p);
        assert_eq!(ana(&p, &scaled, &mut rng::seeded(1)).unwrap(), p);
    }

    #[test]
    fn scaled_form_arithmetic() {
        // replay the stream to recover eps_k and check the formula per coordinate
        let mut p = sample();
        p.values_mut()[0] = 2.0;
        let s = AttackSpec { ana_scaling_s: 50.0, ..Default::default() };
        let out = ana(&p, &s, &mut rng::seeded(8)).unwrap();
        let mut replay = rng::seeded(8);
        for (o, t) in out.values().iter().zip(p.values()) {
            let eps: f64 = StandardNormal.sample(&mut replay);
            assert_eq!(*o, t + eps * 0.5 * t);
        }
    }

    #[test]
    fn plain_form_is_seeded_and_finite() {
        let p = sample();
        let s = AttackSpec { ana_form: AnaForm::Plain, ana_sigma: 5.0, ..Default::default() };
        let a = ana(&p, &s, &mut rng::seeded(2)).unwrap();
        assert_eq!(a, ana(&p, &s, &mut rng::seeded(2)).unwrap());
        assert_ne!(a, p);
        assert!(a.is_finite());
    }

    #[test]
    fn sign_flip() {
        let s = Arc::new(ModelSpec::new(vec![1, 2], Activation::Relu).unwrap());
        let p = ParamVector::new(Arc::clone(&s), vec![1.0, -2.0, 0.0, 0.0]).unwrap();
        assert_eq!(sfa(&p, 1.0).unwrap().values(), &[-1.0, 2.0, -0.0, -0.0]);
        let q = ParamVector::new(s, vec![0.5, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(sfa(&q, 2.0).unwrap().values()[0], -1.0);
        assert_eq!(sfa(&sfa(&p, 1.0).unwrap(), 1.0).unwrap(), p);
        assert!(sfa(&p, 0.0).is_err());
        assert!(sfa(&p, -1.0).is_err());
    }

    #[test]
    fn random_update_ignores_honest_model() {
        let s = spec();
        let a = random_update(&s, &mut rng::seeded(4));
        assert_eq!(a.len(), s.n_params());
        let attack = AttackSpec { kind: AttackKind::RandomWeights, ..Default::default() };
        let (_, from_p) = corrupt(&sample(), &attack, &mut rng::seeded(4)).unwrap();
        let (_, from_zero) = corrupt(&ParamVector::zeros(s.clone()), &attack, &mut rng::seeded(4)).unwrap();
        assert_eq!(from_p, from_zero);
        assert_ne!(a, random_update(&s, &mut rng::seeded(5)));
    }

    #[test]
    fn dynamic_choice_is_uniform() {
        // binomial(3000, 1/3) sd is ~0.0086, so [0.30, 0.37] is a ~4 sd band
        let mut r = rng::seeded(2024);
        let mut counts = [0usize; 3];
        for _ in 0..3000 {
            match dynamic_choose(&mut r) {
                AttackKind::Ana => counts[0] += 1,
                AttackKind::Sfa => counts[1] += 1,
                AttackKind::RandomWeights => counts[2] += 1,
                k => panic!("unexpected {k}"),
            }
        }
        for c in counts {
            let f = c as f64 / 3000.0;
            assert!((0.30..=0.37).contains(&f), "{f}");
        }
        let x: Vec<AttackKind> = (0..12).map(|_| dynamic_choose(&mut rng::seeded(7))).collect();
        assert!(x.windows(2).all(|w| w[0] == w[1]));
    }
}
