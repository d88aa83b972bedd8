use serde::Serialize;

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    #[serde(rename = "se")]
    pub std_error: f64,
    #[serde(rename = "n")]
    pub n_samples: usize,
    #[serde(skip)]
    pub method: &'static str,
}

pub const DEFAULT_BATCHES: usize = 20;

impl Estimate {
    pub fn new(value: f64, std_error: f64, n_samples: usize, method: &'static str) -> Self {
        Estimate {
            value,
            std_error,
            n_samples,
            method,
        }
    }

    pub fn exact(value: f64, method: &'static str) -> Self {
        Self::new(value, 0.0, 0, method)
    }

    /// Sample mean with the i.i.d. standard error `sd/√m`.
    pub fn mean_of(values: &[f64], method: &'static str) -> Self {
        let (mean, var) = mean_var(values);
        let m = values.len();
        let se = if m > 1 { (var * m as f64 / (m - 1) as f64 / m as f64).sqrt() } else { f64::NAN };
        Self::new(mean, se, m, method)
    }

    /// Sample mean with a batch-means standard error, which stays honest for
    /// autocorrelated chain output.
    pub fn batch_mean_of(values: &[f64], batches: usize, method: &'static str) -> Self {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let se = batch_se(values.len(), batches, |range| {
            values[range.clone()].iter().sum::<f64>() / range.len() as f64
        });
        Self::new(mean, se, values.len(), method)
    }

    pub fn relative_error(&self, truth: f64) -> f64 {
        (self.value - truth).abs() / truth.abs()
    }
}

/// Mean and (1/m-normalized) variance.
pub fn mean_var(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
    (mean, var)
}

/// Standard error of a statistic from its spread over `batches` contiguous
/// blocks of `len` items. `stat` maps an index range to the block statistic.
pub fn batch_se(len: usize, batches: usize, stat: impl Fn(std::ops::Range<usize>) -> f64) -> f64 {
    let b = batches.min(len);
    if b < 2 {
        return f64::NAN;
    }
    let size = len / b;
    let vals: Vec<f64> = (0..b).map(|i| stat(i * size..(i + 1) * size)).collect();
    let (_, var) = mean_var(&vals);
    (var * b as f64 / (b - 1) as f64 / b as f64).sqrt()
}

/// Sample quantile by linear interpolation; `values` need not be sorted.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, p)
}

pub fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(v.len() - 1);
    v[i] + (pos - i as f64) * (v[j] - v[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_se_of_known_values() {
        let e = Estimate::mean_of(&[1.0, 2.0, 3.0, 4.0], "t");
        assert_eq!(e.value, 2.5);
        // sample sd with m−1 is sqrt(5/3)
        assert!((e.std_error - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn json_field_names() {
        let s = serde_json::to_string(&Estimate::new(1.5, 0.25, 10, "x")).unwrap();
        assert_eq!(s, r#"{"value":1.5,"se":0.25,"n":10}"#);
    }

    #[test]
    fn quantiles_interpolate() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        assert_eq!(quantile(&[0.0, 10.0], 0.25), 2.5);
    }

    #[test]
    fn se_halves_when_samples_quadruple() {
        use crate::rng::RngStream;
        let mut rng = RngStream::new(9, 0);
        let a: Vec<f64> = (0..4_000).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..16_000).map(|_| rng.normal()).collect();
        let r = Estimate::mean_of(&a, "").std_error / Estimate::mean_of(&b, "").std_error;
        assert!((r - 2.0).abs() < 0.1, "{r}");
    }
}
