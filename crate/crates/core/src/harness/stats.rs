use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Streaming mean and variance; merges are exact up to rounding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        let n = self.count + other.count;
        let delta = other.mean - self.mean;
        self.m2 += other.m2 + delta * delta * (self.count as f64 * other.count as f64) / n as f64;
        self.mean += delta * other.count as f64 / n as f64;
        self.count = n;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; `NaN` below two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            f64::NAN
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// `sd / √n`.
    pub fn std_error(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        iter.into_iter().for_each(|x| m.push(x));
        m
    }
}

/// Summary of one observable across an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableStats {
    pub name: String,
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    pub count: u64,
}

impl ObservableStats {
    pub fn new(name: impl Into<String>, m: &Moments) -> Self {
        Self {
            name: name.into(),
            mean: m.mean(),
            variance: m.variance(),
            std_error: m.std_error(),
            count: m.count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub size: usize,
    pub observables: Vec<ObservableStats>,
}

impl EnsembleStats {
    /// Stats of each column of `samples` (one row per member).
    pub fn from_samples(names: &[String], samples: &[Vec<f64>]) -> Result<Self> {
        if samples.iter().any(|s| s.len() != names.len()) {
            return Err(Error::Format("sample width differs from observable count".into()));
        }
        let observables = names
            .iter()
            .enumerate()
            .map(|(i, n)| ObservableStats::new(n.clone(), &samples.iter().map(|s| s[i]).collect()))
            .collect();
        Ok(Self {
            size: samples.len(),
            observables,
        })
    }

    pub fn get(&self, name: &str) -> Option<&ObservableStats> {
        self.observables.iter().find(|o| o.name == name)
    }
}

/// Least-squares line through `(log x, log y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderFit {
    pub order: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Fitted order of `y ~ C x^p`; needs at least three positive points.
pub fn fit_order(xs: &[f64], ys: &[f64]) -> Result<OrderFit> {
    if xs.len() != ys.len() {
        return Err(Error::Sweep(format!("{} abscissae for {} values", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(Error::Sweep(format!(
            "an order fit needs at least 3 points, got {}",
            xs.len()
        )));
    }
    if let Some(i) = xs
        .iter()
        .zip(ys)
        .position(|(x, y)| !(*x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite()))
    {
        return Err(Error::Sweep(format!(
            "point {i} ({}, {}) is not positive",
            xs[i], ys[i]
        )));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Sweep("sweep values are all equal".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let order = sxy / sxx;
    Ok(OrderFit {
        order,
        intercept: my - order * mx,
        points: xs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fit_recovers_power_law() {
        let xs = [0.1, 0.05, 0.025, 0.0125];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powi(2)).collect();
        let fit = fit_order(&xs, &ys).unwrap();
        assert!((fit.order - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn fit_needs_three_positive_points() {
        assert!(matches!(fit_order(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::Sweep(_))));
        assert!(matches!(
            fit_order(&[1.0, 2.0, 3.0], &[1.0, 0.0, 2.0]),
            Err(Error::Sweep(_))
        ));
    }

    #[test]
    fn single_sample_has_no_variance() {
        let m: Moments = [2.0].into_iter().collect();
        assert!(m.variance().is_nan());
        assert_eq!(m.mean(), 2.0);
    }

    proptest! {
        #[test]
        fn merging_matches_one_pass(xs in prop::collection::vec(-1e3f64..1e3, 2..60), split in 0usize..60) {
            let split = split.min(xs.len());
            let whole: Moments = xs.iter().copied().collect();
            let mut left: Moments = xs[..split].iter().copied().collect();
            let right: Moments = xs[split..].iter().copied().collect();
            left.merge(&right);
            prop_assert_eq!(left.count(), whole.count());
            prop_assert!((left.mean() - whole.mean()).abs() <= 1e-9 * (1.0 + whole.mean().abs()));
            prop_assert!((left.variance() - whole.variance()).abs() <= 1e-8 * (1.0 + whole.variance()));
        }
    }
}
