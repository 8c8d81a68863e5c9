//! Central-difference check of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Gradients, ParamSet, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Finite-difference step, clamped to `[1e-7, 1e-3]`.
    pub h: f64,
    /// Coordinates checked; every coordinate when the model is smaller.
    pub coordinates: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            coordinates: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest error: (name, flat index, analytic, numeric).
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
}

/// Compares the analytic gradient returned by `f` against central
/// differences on a random subsample of coordinates.
///
/// The relative error of one coordinate is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(f: F, params: &ParamSet, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet) -> Result<(f64, Gradients)>,
{
    let (_, analytic) = f(params)?;
    grad_check_against(&analytic, |ps| Ok(f(ps)?.0), params, opts)
}

/// Like [`grad_check`], with the analytic gradient supplied up front and a
/// loss-only closure for the perturbed evaluations.
pub fn grad_check_against<L>(analytic: &Gradients, loss: L, params: &ParamSet, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    L: Fn(&ParamSet) -> Result<f64>,
{
    let h = opts.h.clamp(1e-7, 1e-3);
    let coords = params.coordinates();
    let picked: Vec<usize> = if coords.len() <= opts.coordinates {
        (0..coords.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut idx = sample(&mut rng, coords.len(), opts.coordinates).into_vec();
        idx.sort_unstable();
        idx
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: picked.len(),
    };
    let mut probe = params.clone();
    for &c in &picked {
        let (name, i) = &coords[c];
        let orig = params.get(name)?.data()[*i];
        probe.get_mut(name)?.data_mut()[*i] = orig + h;
        let fp = loss(&probe)?;
        probe.get_mut(name)?.data_mut()[*i] = orig - h;
        let fm = loss(&probe)?;
        probe.get_mut(name)?.data_mut()[*i] = orig;

        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic.get(name).map_or(0.0, |g| g.data()[*i]);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((name.clone(), *i, a, numeric));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn quadratic(ps: &ParamSet) -> Result<(f64, Gradients)> {
        let x = ps.get("x")?.data();
        let mut g = ps.zero_gradients();
        let mut loss = 0.0;
        for (i, v) in x.iter().enumerate() {
            loss += v * v;
            g.get_mut("x").unwrap().data_mut()[i] = 2.0 * v;
        }
        Ok((loss, g))
    }

    #[test]
    fn quadratic_is_exact() {
        let mut ps = ParamSet::new();
        ps.insert("x", Tensor::from_vec(&[1], vec![3.0]).unwrap());
        let r = grad_check(quadratic, &ps, &GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_error <= 1e-10, "{r:?}");
        let (_, _, a, n) = r.worst.unwrap();
        assert_eq!(a, 6.0);
        assert!((n - 6.0).abs() < 1e-9);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut ps = ParamSet::new();
        ps.insert("x", Tensor::from_vec(&[300], (0..300).map(|i| 0.5 + i as f64 * 0.01).collect()).unwrap());
        let corrupted = |ps: &ParamSet| {
            let (l, mut g) = quadratic(ps)?;
            g.get_mut("x").unwrap().data_mut()[123] += 1.0;
            Ok((l, g))
        };
        let opts = GradCheckOptions {
            coordinates: 300,
            ..GradCheckOptions::default()
        };
        let r = grad_check(corrupted, &ps, &opts).unwrap();
        assert!(r.max_rel_error > 1e-2);
        assert_eq!(r.worst.unwrap().1, 123);
        assert!(grad_check(quadratic, &ps, &opts).unwrap().max_rel_error <= 1e-6);
    }
}
