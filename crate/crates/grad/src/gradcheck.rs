//! Finite-difference gradient checking.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Coordinates checked per parameter; `None` checks all.
    pub samples_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-6,
            floor: 1e-5,
            samples_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst: Option<GradCheckEntry>,
}

pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compare analytic gradients of `f` against central differences on the
/// trainable entries of `store`.
pub fn grad_check<F>(store: &mut ParamStore, cfg: &GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let grads = tape.backward(loss)?;
    store.accumulate(&tape, &grads);

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = f(&mut t, s)?;
        Ok(t.value(l).item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let names: Vec<String> = store
        .iter()
        .filter(|p| p.trainable)
        .map(|p| p.name.clone())
        .collect();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: None,
    };
    for name in names {
        let n = store.value(&name)?.len();
        let mut idx: Vec<usize> = (0..n).collect();
        if let Some(k) = cfg.samples_per_param {
            idx.shuffle(&mut rng);
            idx.truncate(k);
            idx.sort_unstable();
        }
        for i in idx {
            let analytic = store.grad(&name)?[i];
            let orig = store.value(&name)?.data()[i];
            store.get_mut(&name)?.value.data_mut()[i] = orig + cfg.step;
            let plus = eval(store)?;
            store.get_mut(&name)?.value.data_mut()[i] = orig - cfg.step;
            let minus = eval(store)?;
            store.get_mut(&name)?.value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let rel_err = relative_error(analytic, numeric, cfg.floor);
            report.checked += 1;
            if rel_err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel_err);
                report.worst = Some(GradCheckEntry {
                    name: name.clone(),
                    index: i,
                    analytic,
                    numeric,
                    rel_err,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0, 1e-5), 0.0);
        assert!((relative_error(2.0, 1.0, 1e-5) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0, 1e-5) - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn quadratic() {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::matrix(1, 3, vec![0.3, -1.2, 2.0]).unwrap(), true)
            .unwrap();
        let r = grad_check(&mut s, &GradCheckConfig::default(), |t, s| {
            let x = t.param(s, "x")?;
            Ok(t.frobenius(x))
        })
        .unwrap();
        assert_eq!(r.checked, 3);
        assert!(r.max_rel_err < 1e-7, "{r:?}");
    }
}
